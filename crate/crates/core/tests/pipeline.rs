use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use sbde::backend::image_fingerprint;
use sbde::dataio::{
    load_image, load_manifest, manifest_stats_by_split, save_mask, BinaryMask, DatasetManifest, DatasetRole,
    InstanceRecord, Label, ManifestEntry, PixelBox, PolygonLabel, Provenance, Split,
};
use sbde::editpipe::{batch_edit, Attribute, BatchConfig, HarmonicInpainter, HttpInpainter, IdentityInpainter};
use sbde::era::{era_augment, AttributePolicy, EraConfig, EraMode, Grouping};
use sbde::mock::{Fault, MockBackends, MockServer};
use sbde::morphmod::{mod_optimize, ModConfig};
use sbde::segpipe::{HttpSegmenter, OracleSegmenter};
use sbde::synth::{write_detection_fixture, write_generation_fixture};
use sha2::{Digest, Sha256};

fn batch_cfg(out: &Path, parallel: usize) -> BatchConfig {
    BatchConfig { mod_cfg: ModConfig::default(), out_dir: out.to_path_buf(), parallel, seed: 5 }
}

fn file_hash(p: &Path) -> String {
    let bytes = fs::read(p).unwrap();
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn batch_edit_three_normals() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_generation_fixture(&dir.path().join("gen"), 3, 96, 1).unwrap();
    let out = dir.path().join("out");
    let report = batch_edit(&m, Attribute::Pin, None, &HarmonicInpainter::default(), &batch_cfg(&out, 2)).unwrap();
    assert_eq!(report.records.len(), 3);
    assert!(report.failures.is_empty());
    for (rec, entry) in report.records.iter().zip(&report.manifest.entries) {
        assert_eq!(entry.provenance, Provenance::Edited);
        assert_eq!(entry.instances[0].label, Label::PinLosing);
        assert!(out.join(&rec.edited).is_file());
        let raw = sbde::dataio::load_mask(out.join(&rec.mask_raw)).unwrap();
        let modded = sbde::dataio::load_mask(out.join(&rec.mask_mod)).unwrap();
        assert_eq!(modded, mod_optimize(&raw, &rec.mod_config));
    }
}

#[test]
fn batch_edit_reports_empty_mask_failure() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("gen");
    let mut m = write_generation_fixture(&root, 3, 96, 2).unwrap();
    save_mask(&BinaryMask::empty(96, 96), root.join("masks/empty.png")).unwrap();
    m.entries[1].masks.clear();
    m.entries[1].masks.insert(PolygonLabel::Nut, "masks/empty.png".into());
    let report =
        batch_edit(&m, Attribute::Nut, None, &HarmonicInpainter::default(), &batch_cfg(&dir.path().join("o"), 1)).unwrap();
    assert_eq!(report.records.len(), 2);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].image, m.entries[1].image);
    assert!(report.failures[0].reason.contains("empty"));
}

#[test]
fn batch_edit_without_masks_needs_segmenter() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("gen");
    let m = write_generation_fixture(&root, 2, 80, 3).unwrap();
    let oracle = OracleSegmenter::from_manifest(&m).unwrap();
    let mut bare = m.clone();
    for e in &mut bare.entries {
        e.masks.clear();
    }
    let r = batch_edit(&bare, Attribute::Pin, None, &HarmonicInpainter::default(), &batch_cfg(&dir.path().join("a"), 1))
        .unwrap();
    assert_eq!(r.failures.len(), 2);
    let with_seg =
        batch_edit(&bare, Attribute::Pin, Some(&oracle), &HarmonicInpainter::default(), &batch_cfg(&dir.path().join("b"), 1))
            .unwrap();
    let direct =
        batch_edit(&m, Attribute::Pin, None, &HarmonicInpainter::default(), &batch_cfg(&dir.path().join("c"), 1)).unwrap();
    assert_eq!(with_seg.records.len(), 2);
    for (a, b) in with_seg.records.iter().zip(&direct.records) {
        assert_eq!(file_hash(&dir.path().join("b").join(&a.edited)), file_hash(&dir.path().join("c").join(&b.edited)));
    }
}

#[test]
fn batch_edit_is_deterministic_across_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_generation_fixture(&dir.path().join("gen"), 4, 72, 9).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = batch_edit(&m, Attribute::Nut, None, &HarmonicInpainter::default(), &batch_cfg(&a, 1)).unwrap();
    let rb = batch_edit(&m, Attribute::Nut, None, &HarmonicInpainter::default(), &batch_cfg(&b, 4)).unwrap();
    assert_eq!(ra.manifest.to_jsonl(), rb.manifest.to_jsonl());
    for (x, y) in ra.records.iter().zip(&rb.records) {
        assert_eq!(file_hash(&a.join(&x.edited)), file_hash(&b.join(&y.edited)));
        assert_eq!(file_hash(&a.join(&x.mask_mod)), file_hash(&b.join(&y.mask_mod)));
    }
}

#[test]
fn batch_edit_through_remote_backends() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_generation_fixture(&dir.path().join("gen"), 3, 96, 21).unwrap();
    let oracle = Arc::new(OracleSegmenter::from_manifest(&m).unwrap());
    let server = MockServer::start(MockBackends { segmenter: oracle, ..MockBackends::default() }).unwrap();
    let seg = HttpSegmenter::new(server.url());
    let inpaint = HttpInpainter::new(server.url());
    let mut bare = m.clone();
    for e in &mut bare.entries {
        e.masks.clear();
    }
    let remote = batch_edit(&bare, Attribute::Pin, Some(&seg), &inpaint, &batch_cfg(&dir.path().join("r"), 2)).unwrap();
    let local = batch_edit(&m, Attribute::Pin, None, &HarmonicInpainter::default(), &batch_cfg(&dir.path().join("l"), 2)).unwrap();
    assert_eq!(remote.records.len(), 3);
    for (a, b) in remote.records.iter().zip(&local.records) {
        let ia = load_image(dir.path().join("r").join(&a.edited)).unwrap();
        let ib = load_image(dir.path().join("l").join(&b.edited)).unwrap();
        assert_eq!(ia, ib);
        assert!(a.backend.starts_with("http:"));
    }
}

#[test]
fn remote_failure_for_one_item_is_itemized() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_generation_fixture(&dir.path().join("gen"), 3, 64, 30).unwrap();
    let bad = load_image(m.resolve(&m.entries[2].image)).unwrap();
    let fault = Fault::FailImages(BTreeSet::from([image_fingerprint(&bad)]));
    let server = MockServer::start(MockBackends { fault, ..MockBackends::default() }).unwrap();
    let report =
        batch_edit(&m, Attribute::Nut, None, &HttpInpainter::new(server.url()), &batch_cfg(&dir.path().join("o"), 3))
            .unwrap();
    assert_eq!(report.records.len(), 2);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].image, m.entries[2].image);
}

fn single_scene(dir: &Path) -> DatasetManifest {
    let m = write_detection_fixture(dir, 1, 0, 77).unwrap();
    assert_eq!(m.entries.len(), 1);
    m
}

#[test]
fn era_two_eligible_normals_with_pin_policy() {
    let dir = tempfile::tempdir().unwrap();
    let m = single_scene(dir.path());
    let oracle = OracleSegmenter::from_manifest(&m).unwrap();
    let cfg = EraConfig { policy: AttributePolicy::AllPin, ..EraConfig::default() };
    let (out, report) = era_augment(&m, &oracle, &HarmonicInpainter::default(), &cfg).unwrap();
    assert!(report.reconciles());
    assert_eq!(report.added.images, 1);
    assert_eq!(report.edited_instances, 2);
    let original = &m.entries[0];
    let normals_before = original.instances.iter().filter(|i| i.label == Label::Normal).count() as u64;
    let pins_before = original.instances.iter().filter(|i| i.label == Label::PinLosing).count() as u64;
    assert_eq!(report.added.pin_losing, pins_before + 2);
    assert_eq!(report.added.normal, normals_before - 2);
    assert_eq!(out.entries.len(), 2);
    assert_eq!(out.entries[0], m.entries[0]);
    let aug = &out.entries[1];
    assert_eq!(aug.provenance, Provenance::Edited);
    assert_eq!(aug.source.as_deref(), Some(original.image.as_str()));
    assert_eq!(aug.image, "images/scene_000_sbde.png");
    for (a, b) in aug.instances.iter().zip(&original.instances) {
        assert_eq!(a.bbox, b.bbox);
    }
    let before = load_image(m.resolve(&original.image)).unwrap();
    let after = load_image(m.resolve(&aug.image)).unwrap();
    let edited_boxes: Vec<PixelBox> =
        aug.instances.iter().zip(&original.instances).filter(|(a, b)| a.label != b.label).map(|(a, _)| a.bbox).collect();
    for y in 0..before.height() {
        for x in 0..before.width() {
            if !edited_boxes.iter().any(|b| b.contains(x, y)) {
                assert_eq!(before.get(x, y, 0), after.get(x, y, 0));
            }
        }
    }
}

#[test]
fn era_with_nothing_eligible_adds_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let m = single_scene(dir.path());
    let oracle = OracleSegmenter::from_manifest(&m).unwrap();
    let cfg = EraConfig { min_side: 500, ..EraConfig::default() };
    let (out, report) = era_augment(&m, &oracle, &HarmonicInpainter::default(), &cfg).unwrap();
    assert_eq!(out, m);
    assert_eq!(report.added.images, 0);
    assert!(report.skipped.is_empty() && report.failed_images.is_empty());
}

#[test]
fn era_one_per_image_and_copy_control() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_detection_fixture(dir.path(), 3, 1, 5).unwrap();
    let oracle = OracleSegmenter::from_manifest(&m).unwrap();
    let one = EraConfig { grouping: Grouping::OnePerImage, policy: AttributePolicy::AllNut, ..EraConfig::default() };
    let (_, r) = era_augment(&m, &oracle, &HarmonicInpainter::default(), &one).unwrap();
    assert_eq!((r.added.images, r.edited_instances), (2, 2));
    let copy = EraConfig { mode: EraMode::Copy, ..EraConfig::default() };
    let (out, rc) = era_augment(&m, &oracle, &IdentityInpainter, &copy).unwrap();
    assert!(rc.reconciles());
    assert_eq!(rc.added.images, 2);
    assert_eq!(rc.edited_instances, 0);
    for e in out.entries.iter().filter(|e| e.provenance == Provenance::Copied) {
        let src = out.entries.iter().find(|s| Some(&s.image) == e.source.as_ref()).unwrap();
        assert_eq!(file_hash(&m.resolve(&e.image)), file_hash(&m.resolve(&src.image)));
        let labels: Vec<Label> = e.instances.iter().map(|i| i.label).collect();
        let src_labels: Vec<Label> = src.instances.iter().map(|i| i.label).collect();
        assert_eq!(labels, src_labels);
    }
    let by_split = manifest_stats_by_split(&out);
    assert_eq!(by_split[&Split::Test], manifest_stats_by_split(&m)[&Split::Test]);
}

#[test]
fn era_failing_segmenter_reports_items() {
    let dir = tempfile::tempdir().unwrap();
    let m = single_scene(dir.path());
    let empty_oracle = OracleSegmenter::new();
    let (out, report) = era_augment(&m, &empty_oracle, &HarmonicInpainter::default(), &EraConfig::default()).unwrap();
    assert_eq!(report.added.images, 0);
    assert_eq!(report.skipped.len(), 2);
    assert!(report.has_failures());
    assert_eq!(out.entries.len(), 1);
}

#[test]
fn augmented_manifest_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_detection_fixture(dir.path(), 2, 0, 12).unwrap();
    let oracle = OracleSegmenter::from_manifest(&m).unwrap();
    let (out, _) = era_augment(&m, &oracle, &HarmonicInpainter::default(), &EraConfig::default()).unwrap();
    let path = dir.path().join("manifest_aug.jsonl");
    out.save(&path).unwrap();
    let back = load_manifest(&path).unwrap();
    assert_eq!(back.entries, out.entries);
}

#[test]
fn generation_entries_are_rejected_by_era() {
    let dir = tempfile::tempdir().unwrap();
    let mut e = ManifestEntry::new("x.png", Split::Train, DatasetRole::Generation);
    e.instances.push(InstanceRecord::new(PixelBox::new(0, 0, 100, 100), Label::Normal));
    let m = DatasetManifest::new(dir.path(), vec![e]);
    let (out, report) = era_augment(&m, &OracleSegmenter::new(), &HarmonicInpainter::default(), &EraConfig::default()).unwrap();
    assert_eq!(out, m);
    assert_eq!(report.added.images, 0);
}
