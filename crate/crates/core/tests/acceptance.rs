//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex;
use num_rational::Ratio;
use sbde::dataio::{
    manifest_stats, manifest_stats_by_split, render_stats_table, BinaryMask, ClassCounts, DatasetManifest, DatasetRole,
    InstanceRecord, Label, ManifestEntry, PixelBox, RasterImage, RealGrid, Split,
};
use sbde::editpipe::{edit_attribute, harmonic_inpaint, Attribute, HarmonicConfig, HarmonicInpainter, IdentityInpainter};
use sbde::era::{era_augment, recover, render_augmentation_table, EraConfig, EraMode, RecoverySpec};
use sbde::freqprep::{build_hpf_mask, fft2_centered_grid, ifft2_centered_complex};
use sbde::metrics::{
    classify, composite_loss, compute_aea, compute_hps, psnr, seg_metrics, ssim, HeuristicClassifier, HpsBallot,
    LossConfig,
};
use sbde::morphmod::{dilate, erode, mod_optimize, open, ModConfig, StructElement};
use sbde::rng::SeededRng;
use sbde::segpipe::{segment_attribute, OracleSegmenter, PartLabel};
use sbde::synth::{synth_bolt, write_detection_fixture};
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_mask(rng: &mut SeededRng, w: u32, h: u32, density: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.unit_f64() < density)
}

fn random_gray(rng: &mut SeededRng, w: u32, h: u32) -> RasterImage {
    RasterImage::gray_from_fn(w, h, |_, _| rng.below(256) as u8).unwrap()
}

// Set-builder morphology over explicit point sets.
mod oracle {
    use super::*;

    pub type Points = HashSet<(i64, i64)>;

    pub fn points(m: &BinaryMask) -> Points {
        (0..m.height() as i64)
            .flat_map(|y| (0..m.width() as i64).map(move |x| (x, y)))
            .filter(|&(x, y)| m.get(x as u32, y as u32))
            .collect()
    }

    /// B as offsets from the anchor.
    pub fn element(s: &StructElement) -> Points {
        let (ax, ay) = (s.anchor().0 as i64, s.anchor().1 as i64);
        let mut b = Points::new();
        for j in 0..s.height() {
            for i in 0..s.width() {
                if s.bit(i, j) {
                    b.insert((i as i64 - ax, j as i64 - ay));
                }
            }
        }
        b
    }

    fn domain(w: u32, h: u32) -> impl Iterator<Item = (i64, i64)> {
        (0..h as i64).flat_map(move |y| (0..w as i64).map(move |x| (x, y)))
    }

    /// {z : B_z ⊆ A}
    pub fn erode(a: &Points, b: &Points, w: u32, h: u32) -> Points {
        domain(w, h).filter(|z| b.iter().all(|o| a.contains(&(z.0 + o.0, z.1 + o.1)))).collect()
    }

    /// {z : (B̂)_z ∩ A ≠ ∅}
    pub fn dilate(a: &Points, b: &Points, w: u32, h: u32) -> Points {
        domain(w, h).filter(|z| b.iter().any(|o| a.contains(&(z.0 - o.0, z.1 - o.1)))).collect()
    }

    pub fn open(a: &Points, b: &Points, w: u32, h: u32) -> Points {
        dilate(&erode(a, b, w, h), b, w, h)
    }
}

fn morph_matches(m: &BinaryMask, s: &StructElement, cfg: &ModConfig) -> Result<(), String> {
    let (w, h) = m.dimensions();
    let a = oracle::points(m);
    let b = oracle::element(s);
    let check = |name: &str, got: BinaryMask, want: oracle::Points| {
        ensure(oracle::points(&got) == want, || format!("{name} differs on {:?}", m.bits()))
    };
    check("erode", erode(m, s), oracle::erode(&a, &b, w, h))?;
    check("dilate", dilate(m, s), oracle::dilate(&a, &b, w, h))?;
    check("open", open(m, s), oracle::open(&a, &b, w, h))?;
    let mut want = oracle::open(&a, &oracle::element(&cfg.open_se), w, h);
    for _ in 0..cfg.dilate_passes {
        want = oracle::dilate(&want, &oracle::element(&cfg.dilate_se), w, h);
    }
    check("mod_optimize", mod_optimize(m, cfg), want)
}

fn morphology_oracle() -> Outcome {
    let start = Instant::now();
    let s2 = StructElement::square2();
    let default_cfg = ModConfig::default();
    for code in 0u32..1 << 16 {
        let m = BinaryMask::from_fn(4, 4, |x, y| code >> (y * 4 + x) & 1 == 1);
        morph_matches(&m, &s2, &default_cfg)?;
    }
    let s3 = StructElement::square3();
    let cfg3 = ModConfig { open_se: s3.clone(), dilate_se: s3.clone(), dilate_passes: 2 };
    let mut rng = SeededRng::new(16);
    for k in 0..1000 {
        let density = 0.2 + 0.6 * (k % 7) as f64 / 6.0;
        let m = random_mask(&mut rng, 16, 16, density);
        morph_matches(&m, &s3, &cfg3)?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("65536 4x4 + 1000 16x16 masks bit-identical, {secs:.2}s"))
}

fn hpf_monotone() -> Outcome {
    let shapes = [(8u32, 8u32), (16, 16), (7, 13), (32, 10), (1, 5)];
    let taus: Vec<f64> = std::iter::once(-0.1).chain((0..=10).map(|k| k as f64 / 10.0)).collect();
    for &(h, w) in &shapes {
        let counts: Vec<usize> = taus.iter().map(|&t| build_hpf_mask(h, w, t).zero_count()).collect();
        ensure(counts.windows(2).all(|p| p[0] <= p[1]), || format!("{h}x{w}: {counts:?}"))?;
        ensure(counts[0] == 0, || format!("{h}x{w}: tau<0 has {} zeros", counts[0]))?;
        ensure(*counts.last().unwrap() == (h * w) as usize, || format!("{h}x{w}: tau=1 not all zero"))?;
        // independent count in exact integers: 4|di·dj| ≤ τ·HW with di = i − H/2
        for (&t, &c) in taus.iter().zip(&counts) {
            let mut want = 0;
            for i in 0..h {
                for j in 0..w {
                    let di = (2 * i as i64 - h as i64).unsigned_abs() as f64;
                    let dj = (2 * j as i64 - w as i64).unsigned_abs() as f64;
                    if di * dj <= t * (h * w) as f64 {
                        want += 1;
                    }
                }
            }
            ensure(want == c, || format!("{h}x{w} tau={t}: {c} zeros, expected {want}"))?;
        }
    }
    Ok(format!("{} shapes x {} thresholds", shapes.len(), taus.len()))
}

fn fft_pair() -> Outcome {
    let mut rng = SeededRng::new(33);
    let (mut worst_rt, mut worst_pv) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let w = 1 + rng.below(64) as u32;
        let h = 1 + rng.below(64) as u32;
        let grid = RealGrid::from_fn(w, h, |_, _| rng.unit_f64() * 255.0);
        let spec = fft2_centered_grid(&grid);
        let back = ifft2_centered_complex(&spec);
        let rt = grid.data().iter().zip(&back).map(|(&a, b)| (Complex::new(a, 0.0) - b).norm()).fold(0.0, f64::max);
        let e_space: f64 = grid.data().iter().map(|v| v * v).sum();
        let pv = (spec.energy() - e_space).abs() / e_space.max(f64::MIN_POSITIVE);
        worst_rt = worst_rt.max(rt);
        worst_pv = worst_pv.max(pv);
    }
    ensure(worst_rt < 1e-6, || format!("roundtrip error {worst_rt:e}"))?;
    ensure(worst_pv < 1e-6, || format!("Parseval relative error {worst_pv:e}"))?;
    Ok(format!("100 images, max roundtrip {worst_rt:.1e}, max Parseval {worst_pv:.1e}"))
}

fn harmonic_checks() -> Outcome {
    let mut worst = 0.0f64;
    for &(n, a, b) in &[(12u32, 20u8, 220u8), (40, 200, 10), (64, 0, 255), (3, 90, 91), (57, 255, 0)] {
        let img = RasterImage::gray_from_fn(n, 1, |x, _| if x == 0 { a } else if x == n - 1 { b } else { 128 }).unwrap();
        let mask = BinaryMask::rect(n, 1, 1, 0, n - 1, 1);
        let out = harmonic_inpaint::<f64>(&img, &mask, &HarmonicConfig::default()).map_err(|e| e.to_string())?;
        for x in 0..n {
            let want = a as f64 + (b as f64 - a as f64) * x as f64 / (n - 1) as f64;
            worst = worst.max((out.image.get(x, 0, 0) as f64 - want).abs());
        }
    }
    ensure(worst <= 1.0, || format!("ramp off by {worst}"))?;
    let mut rng = SeededRng::new(77);
    for k in 0..100 {
        let w = 4 + rng.below(28) as u32;
        let h = 4 + rng.below(28) as u32;
        let img = random_gray(&mut rng, w, h);
        let density = 0.2 + 0.6 * rng.unit_f64();
        let mask = random_mask(&mut rng, w, h, density);
        let outside: Vec<u8> =
            (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| !mask.get(x, y)).map(|(x, y)| img.get(x, y, 0)).collect();
        if outside.is_empty() {
            continue;
        }
        let (lo, hi) = (*outside.iter().min().unwrap(), *outside.iter().max().unwrap());
        let out = harmonic_inpaint::<f64>(&img, &mask, &HarmonicConfig::default()).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let v = out.image.get(x, y, 0);
                if mask.get(x, y) {
                    ensure(lo <= v && v <= hi, || format!("fixture {k}: {v} outside [{lo}, {hi}]"))?;
                } else {
                    ensure(v == img.get(x, y, 0), || format!("fixture {k}: unmasked pixel changed"))?;
                }
            }
        }
    }
    Ok(format!("ramp max deviation {worst}, maximum principle on 100 fixtures"))
}

fn tree_hash(m: &DatasetManifest) -> String {
    let mut h = Sha256::new();
    h.update(m.to_jsonl());
    for e in &m.entries {
        h.update(fs::read(m.resolve(&e.image)).unwrap_or_default());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn run_era(dir: &Path, mode: EraMode) -> Result<(DatasetManifest, DatasetManifest, sbde::era::AugmentationReport), String> {
    let m = write_detection_fixture(dir, 5, 1, 2024).map_err(|e| e.to_string())?;
    let oracle = OracleSegmenter::from_manifest(&m).map_err(|e| e.to_string())?;
    let cfg = EraConfig { mode, seed: 11, ..EraConfig::default() };
    let (out, report) = match mode {
        EraMode::Edit => era_augment(&m, &oracle, &HarmonicInpainter::default(), &cfg),
        EraMode::Copy => era_augment(&m, &oracle, &IdentityInpainter, &cfg),
    }
    .map_err(|e| e.to_string())?;
    Ok((m, out, report))
}

fn era_compositing() -> Outcome {
    let mut rng = SeededRng::new(5);
    for k in 0..200 {
        let (w, h) = (2 + rng.below(60) as u32, 2 + rng.below(60) as u32);
        let ins = random_gray(&mut rng, w, h);
        let x0 = rng.below(w as u64) as u32;
        let y0 = rng.below(h as u64) as u32;
        let x1 = x0 + 1 + rng.below((w - x0) as u64) as u32;
        let y1 = y0 + 1 + rng.below((h - y0) as u64) as u32;
        let bbox = PixelBox::new(x0, y0, x1, y1);
        let crop = random_gray(&mut rng, bbox.width(), bbox.height());
        let spec = RecoverySpec { image_id: format!("r{k}"), bbox, crop: crop.clone(), new_label: Label::PinLosing };
        let out = recover(&ins, &spec).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let want = if bbox.contains(x, y) { crop.get(x - x0, y - y0, 0) } else { ins.get(x, y, 0) };
                ensure(out.get(x, y, 0) == want, || format!("fixture {k} pixel ({x},{y})"))?;
            }
        }
    }
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let (_, out_a, rep_a) = run_era(a.path(), EraMode::Edit)?;
    let (_, out_b, rep_b) = run_era(b.path(), EraMode::Edit)?;
    ensure(rep_a.reconciles(), || "report does not reconcile".into())?;
    ensure(rep_a.added.images > 0 && rep_a.edited_instances > 0, || "nothing was edited".into())?;
    ensure(!rep_a.has_failures(), || format!("failures: {:?} {:?}", rep_a.skipped, rep_a.failed_images))?;
    ensure(rep_a == rep_b, || "reports differ between runs".into())?;
    let (ha, hb) = (tree_hash(&out_a), tree_hash(&out_b));
    ensure(ha == hb, || format!("output hashes differ: {ha} vs {hb}"))?;
    Ok(format!(
        "200 recover fixtures byte-exact; 5-image run +{} images, {} edits, hash {}",
        rep_a.added.images,
        rep_a.edited_instances,
        &ha[..12]
    ))
}

fn metric_identities() -> Outcome {
    let mut rng = SeededRng::new(500);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (w, h) = (1 + rng.below(24) as u32, 1 + rng.below(24) as u32);
        let (da, db) = (rng.unit_f64(), rng.unit_f64());
        let a = random_mask(&mut rng, w, h, da);
        let b = random_mask(&mut rng, w, h, db);
        let s = seg_metrics(&a, &b).map_err(|e| e.to_string())?;
        let Some(iou) = s.iou_fg else { continue };
        worst = worst.max((s.dice - 2.0 * iou / (1.0 + iou)).abs());
    }
    ensure(worst <= 1e-12, || format!("Dice/IoU gap {worst:e}"))?;

    let base = RasterImage::gray_from_fn(32, 24, |x, y| ((x * 5 + y * 3) % 200) as u8).unwrap();
    let shifted = RasterImage::gray_from_fn(32, 24, |x, y| base.get(x, y, 0) + 10).unwrap();
    let p = psnr(&base, &shifted).map_err(|e| e.to_string())?.0;
    let p_oracle = 10.0 * (255.0f64 * 255.0 / 100.0).log10();
    ensure((p - 28.1308).abs() <= 1e-3 && (p - p_oracle).abs() < 1e-9, || format!("PSNR {p}"))?;

    let x = random_gray(&mut rng, 40, 30);
    let s = ssim(&x, &x).map_err(|e| e.to_string())?;
    ensure(s == 1.0, || format!("SSIM(x,x) = {s}"))?;

    let pred = RealGrid::from_fn(1, 1, |_, _| 0.5f64);
    let gt = BinaryMask::full(1, 1);
    let focal = composite_loss(&pred, &gt, &LossConfig::default()).map_err(|e| e.to_string())?.focal;
    let focal_oracle = 0.25 * 0.5f64.powi(2) * std::f64::consts::LN_2;
    ensure((focal - 0.0433217).abs() <= 1e-6 && (focal - focal_oracle).abs() < 1e-12, || format!("focal {focal}"))?;

    for trial in 0..20 {
        let m = 2 + rng.below(5) as usize;
        let configs: Vec<String> = (0..m).map(|c| format!("S{c}")).collect();
        let (n_exp, n_img) = (1 + rng.below(4) as usize, 1 + rng.below(6) as usize);
        let mut ballots = Vec::new();
        for e in 0..n_exp {
            for i in 0..n_img {
                let mut ranks: Vec<u32> = (1..=m as u32).collect();
                rng.shuffle(&mut ranks);
                let scores: BTreeMap<String, u32> = configs.iter().cloned().zip(ranks).collect();
                ballots.push(HpsBallot { expert: format!("e{e}"), image: format!("i{i}"), scores });
            }
        }
        let mut total = Ratio::from_integer(0u64);
        for c in &configs {
            total += compute_hps(&ballots, c).map_err(|e| e.to_string())?;
        }
        let mean = total / Ratio::from_integer(m as u64);
        ensure(mean == Ratio::new(m as u64 + 1, 2), || format!("trial {trial}: mean HPS {mean} with M={m}"))?;
    }
    Ok(format!("Dice gap {worst:.1e}, PSNR {p:.4} dB, SSIM 1, focal {focal:.7}, HPS mean (M+1)/2 on 20 ballot sets"))
}

fn end_to_end() -> Outcome {
    let oracle = OracleSegmenter::new();
    let inpainter = HarmonicInpainter::default();
    let classifier = HeuristicClassifier::default();
    let mut preds: BTreeMap<Attribute, Vec<Label>> = BTreeMap::new();
    for k in 0..20u64 {
        let size = 64 + 8 * (k as u32 % 8);
        let bolt = synth_bolt(size, size + 4 * (k as u32 % 3), 1000 + k);
        for part in [PartLabel::Pin0, PartLabel::Pin1, PartLabel::Pin2, PartLabel::Nut] {
            oracle.insert(&bolt.image, part, bolt.parts[&part].clone());
        }
        for attr in [Attribute::Pin, Attribute::Nut] {
            let m_seg =
                segment_attribute(&oracle, &bolt.image, attr, &BTreeMap::new(), k).map_err(|e| e.to_string())?;
            let edit = edit_attribute(&bolt.image, &m_seg, &ModConfig::default(), &inpainter).map_err(|e| e.to_string())?;
            let (w, h) = bolt.image.dimensions();
            for y in 0..h {
                for x in 0..w {
                    if !edit.mask_mod.get(x, y) && edit.image.pixel(x, y) != bolt.image.pixel(x, y) {
                        return Err(format!("bolt {k} {attr}: change outside M_MOD at ({x},{y})"));
                    }
                }
            }
            let c = classify(&classifier, &edit.image).map_err(|e| e.to_string())?;
            preds.entry(attr).or_default().push(c.label);
        }
    }
    let pin = compute_aea(&preds[&Attribute::Pin], Label::PinLosing).map_err(|e| e.to_string())?;
    let nut = compute_aea(&preds[&Attribute::Nut], Label::NutLosing).map_err(|e| e.to_string())?;
    ensure(pin == 100.0 && nut == 100.0, || format!("AEA pin {pin}, nut {nut}"))?;
    Ok("20 bolts, AEA pin 100%, nut 100%, edits confined to M_MOD".into())
}

fn reference_manifest() -> DatasetManifest {
    // Reference dataset counts spread over synthetic entries; no files needed.
    let mut entries = Vec::new();
    for (split, images, counts) in [(Split::Train, 1433usize, [3961usize, 449, 244]), (Split::Test, 337, [1018, 100, 63])] {
        let mut labels: Vec<Label> = Vec::new();
        for (label, n) in [Label::Normal, Label::PinLosing, Label::NutLosing].into_iter().zip(counts) {
            labels.extend(std::iter::repeat_n(label, n));
        }
        for i in 0..images {
            let mut e = ManifestEntry::new(format!("{split:?}_{i}.png"), split, DatasetRole::Detection);
            for (k, l) in labels.iter().enumerate() {
                if k % images == i {
                    e.instances.push(InstanceRecord::new(PixelBox::new(0, 0, 8, 8), *l));
                }
            }
            entries.push(e);
        }
    }
    DatasetManifest::new(".", entries)
}

fn row_numbers(line: &str) -> Vec<String> {
    line.split_whitespace().filter(|t| t.trim_start_matches('+').parse::<u64>().is_ok() || *t == "-").map(String::from).collect()
}

fn table_anchors() -> Outcome {
    let m = reference_manifest();
    let table = render_stats_table(&m);
    let lines: Vec<&str> = table.lines().collect();
    let expected: [(&str, [&str; 3]); 5] = [
        ("Inspection images", ["1433", "337", "1770"]),
        ("Normal", ["3961", "1018", "4979"]),
        ("Pin losing", ["449", "100", "549"]),
        ("Nut losing", ["244", "63", "307"]),
        ("All", ["4654", "1181", "5835"]),
    ];
    ensure(lines.len() == 7, || format!("stats table has {} lines", lines.len()))?;
    ensure(row_numbers(lines[0]).is_empty() && lines[0].split_whitespace().collect::<Vec<_>>() == ["Class", "Train", "Test", "Total"], || {
        format!("header {:?}", lines[0])
    })?;
    ensure(lines[2].trim() == "Number of instances", || format!("section line {:?}", lines[2]))?;
    for (line, (name, nums)) in [lines[1], lines[3], lines[4], lines[5], lines[6]].iter().zip(expected) {
        ensure(line.starts_with(name) && row_numbers(line) == nums, || format!("row {line:?}"))?;
    }
    let by_split = manifest_stats_by_split(&m);
    ensure(by_split[&Split::Train].is_consistent() && manifest_stats(&m).all == 5835, || "inconsistent counts".into())?;

    // Column structure on a real run.
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let (orig, _, edit) = run_era(a.path(), EraMode::Edit)?;
    let (_, _, copy) = run_era(b.path(), EraMode::Copy)?;
    let train = manifest_stats_by_split(&orig)[&Split::Train];
    let t6 = render_augmentation_table(&train, Some(&copy), Some(&edit));
    let rows: Vec<&str> = t6.lines().collect();
    ensure(rows.len() == 7, || format!("augmentation table has {} lines", rows.len()))?;
    ensure(rows[0].split_whitespace().collect::<Vec<_>>() == ["Class", "Original", "Copy-aug", "SBDE-aug"], || {
        format!("header {:?}", rows[0])
    })?;
    let counts = |c: &ClassCounts| [c.images, c.normal, c.pin_losing, c.nut_losing, c.all];
    for (i, row) in [rows[1], rows[3], rows[4], rows[5], rows[6]].iter().enumerate() {
        let nums = row_numbers(row);
        let want = vec![
            counts(&train)[i].to_string(),
            format!("+{}", counts(&copy.added)[i]),
            format!("+{}", counts(&edit.added)[i]),
        ];
        ensure(nums == want, || format!("row {row:?}, expected {want:?}"))?;
    }
    ensure(copy.added.images == edit.added.images && copy.added.all == edit.added.all, || {
        "copy and edit columns add different totals".into()
    })?;
    ensure(copy.added.normal > edit.added.normal, || "edit column did not convert normals".into())?;
    Ok(format!("dataset stats rows reproduced; augmentation table Original/+copy/+edited with +{} images", edit.added.images))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("morphology oracle equivalence", morphology_oracle),
        ("high-pass mask threshold monotonicity", hpf_monotone),
        ("centered FFT pair", fft_pair),
        ("harmonic inpainter ramp and maximum principle", harmonic_checks),
        ("ERA compositing and deterministic augmentation", era_compositing),
        ("metric identities", metric_identities),
        ("end-to-end zero-defect-shot pipeline", end_to_end),
        ("table-format anchors", table_anchors),
    ];
    let mut failed = BTreeSet::new();
    for (name, f) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name} ({secs:.2}s): {detail}"),
            Err(why) => {
                println!("FAIL  {name} ({secs:.2}s): {why}");
                failed.insert(name);
            }
        }
    }
    println!("acceptance: {} passed, {} failed", criteria.len() - failed.len(), failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
