use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use sbde::dataio::{load_manifest, load_mask, save_mask, BinaryMask, Split};
use sbde::freqprep::{high_freq_component, ClaheParams, EncodedComponent};
use sbde::mock::{MockBackends, MockServer};
use sbde::rng::SeededRng;
use sbde::segpipe::OracleSegmenter;
use sbde::synth::{synth_bolt, write_detection_fixture, write_generation_fixture};
use serde_json::Value;

fn sbde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbde")).args(args).env_remove("SBDE_CONFIG").output().expect("binary runs")
}

fn sbde_env(args: &[&str], key: &str, val: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbde")).args(args).env(key, val).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Opening then dilation, straight from the set definitions.
fn golden_mod(m: &BinaryMask, open_se: &[(i64, i64)], dilate_se: &[(i64, i64)]) -> BinaryMask {
    let (w, h) = m.dimensions();
    let set: HashSet<(i64, i64)> =
        (0..h as i64).flat_map(|y| (0..w as i64).map(move |x| (x, y))).filter(|&(x, y)| m.get(x as u32, y as u32)).collect();
    let all: Vec<(i64, i64)> = (0..h as i64).flat_map(|y| (0..w as i64).map(move |x| (x, y))).collect();
    let erode = |a: &HashSet<(i64, i64)>, b: &[(i64, i64)]| -> HashSet<(i64, i64)> {
        all.iter().copied().filter(|z| b.iter().all(|o| a.contains(&(z.0 + o.0, z.1 + o.1)))).collect()
    };
    let dilate = |a: &HashSet<(i64, i64)>, b: &[(i64, i64)]| -> HashSet<(i64, i64)> {
        all.iter().copied().filter(|z| b.iter().any(|o| a.contains(&(z.0 - o.0, z.1 - o.1)))).collect()
    };
    let out = dilate(&dilate(&erode(&set, open_se), open_se), dilate_se);
    BinaryMask::from_fn(w, h, |x, y| out.contains(&(x as i64, y as i64)))
}

fn square(n: i64, anchor: i64) -> Vec<(i64, i64)> {
    (0..n).flat_map(|j| (0..n).map(move |i| (i - anchor, j - anchor))).collect()
}

fn noisy_mask(w: u32, h: u32, seed: u64) -> BinaryMask {
    let mut rng = SeededRng::new(seed);
    BinaryMask::from_fn(w, h, |x, y| (x > 6 && x < 20 && y > 4 && y < 15) || rng.unit_f64() < 0.08)
}

#[test]
fn mod_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out, root) = (dir.path().join("m.png"), dir.path().join("o.png"), dir.path().join("run"));
    let m = noisy_mask(28, 21, 3);
    save_mask(&m, &input).unwrap();
    let o = sbde(&["mod", "--in", s(&input), "--out", s(&out), "--out-root", s(&root)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_mask(&out).unwrap(), golden_mod(&m, &square(2, 0), &square(3, 1)));
    let run = read_json(root.join("run.json"));
    assert_eq!(run["command"], "mod");
    assert_eq!(run["exit_code"], 0);
    assert_eq!(run["config_hash"].as_str().unwrap().len(), 64);

    let o = sbde(&["mod", "--in", s(&input), "--out", s(&out), "--out-root", s(&root), "--se-open", "3x3", "--passes", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(load_mask(&out).unwrap(), golden_mod(&m, &square(3, 1), &square(3, 1)));
}

#[test]
fn usage_errors_exit_2() {
    let o = sbde(&["mod", "--bogus"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&sbde(&[])), 2);
    assert_eq!(code(&sbde(&["frobnicate"])), 2);
    assert_eq!(code(&sbde(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.png");
    save_mask(&noisy_mask(8, 8, 1), &m).unwrap();
    let root = dir.path().join("r");
    let o = sbde(&["mod", "--in", s(&m), "--out", s(&dir.path().join("o.png")), "--out-root", s(&root), "--se-open", "2y2"]);
    assert_eq!(code(&o), 2);
    let o = sbde(&["mod", "--in", s(&dir.path().join("missing.png")), "--out", "x.png", "--out-root", s(&root)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_handling() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.png");
    save_mask(&noisy_mask(12, 12, 2), &m).unwrap();
    let out = dir.path().join("o.png");
    let run = |cfg: &str| {
        let p = dir.path().join("cfg.json");
        fs::write(&p, cfg).unwrap();
        let root = dir.path().join("root");
        let o = sbde(&["mod", "--in", s(&m), "--out", s(&out), "--config", s(&p), "--out-root", s(&root)]);
        (code(&o), root)
    };
    assert_eq!(run("{}").0, 0);
    assert_eq!(run(r#"{"tau": -0.1}"#).0, 0);
    assert_eq!(run(r#"{"parallel": 0}"#).0, 2);
    assert_eq!(run(r#"{"paralel": 2}"#).0, 2);
    assert_eq!(run("not json").0, 2);
    let (c, root) = run(r#"{"seed": 42, "mod": {"dilate_passes": 2}}"#);
    assert_eq!(c, 0);
    let rec = read_json(root.join("run.json"));
    assert_eq!(rec["seed"], 42);
    assert_eq!(rec["config"]["mod"]["dilate_passes"], 2);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"parallel": 0}"#).unwrap();
    let e = dir.path().join("e");
    let args = ["mod", "--in", s(&m), "--out", s(&out), "--out-root", s(&e)];
    assert_eq!(code(&sbde_env(&args, "SBDE_CONFIG", &bad)), 2);
    let good = dir.path().join("good.json");
    fs::write(&good, r#"{"seed": 7}"#).unwrap();
    assert_eq!(code(&sbde_env(&args, "SBDE_CONFIG", &good)), 0);
    assert_eq!(read_json(dir.path().join("e/run.json"))["seed"], 7);
}

fn tree_bytes(root: &Path, rels: &[&str]) -> Vec<Vec<u8>> {
    rels.iter().map(|r| fs::read(root.join(r)).unwrap()).collect()
}

fn listed_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for d in fs::read_dir(dir).unwrap() {
        let p = d.unwrap().path();
        if p.is_dir() {
            out.extend(listed_files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn edit_is_deterministic_and_accounted() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    write_generation_fixture(&gen, 3, 80, 4).unwrap();
    let manifest = gen.join("manifest.jsonl");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (root, par) in [(&a, "1"), (&b, "3")] {
        let o = sbde(&["edit", "--manifest", s(&manifest), "--attr", "nut", "--out-root", s(root), "--parallel", par]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rels = ["manifest_edit.jsonl", "edited/bolt_000_nut.png", "edited/bolt_002_nut.png", "masks/bolt_001_nut_mod.png"];
    assert_eq!(tree_bytes(&a, &rels), tree_bytes(&b, &rels));
    let (ra, rb) = (read_json(a.join("run.json")), read_json(b.join("run.json")));
    assert_ne!(ra["config_hash"], rb["config_hash"]);
    let first = tree_bytes(&a, &rels);
    let o = sbde(&["edit", "--manifest", s(&manifest), "--attr", "nut", "--out-root", s(&a), "--parallel", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(a.join("run.json"))["config_hash"], ra["config_hash"]);
    assert_eq!(tree_bytes(&a, &rels), first);

    // every file under the root is accounted for in run.json
    let artifacts: HashSet<String> =
        ra["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    for f in listed_files(&a) {
        let rel = f.strip_prefix(&a).unwrap().to_string_lossy().into_owned();
        assert!(rel == "run.json" || artifacts.contains(&rel), "{rel} not listed");
    }
    let m = load_manifest(a.join("manifest_edit.jsonl")).unwrap();
    assert_eq!(m.entries.len(), 3);
    assert!(m.entries.iter().all(|e| e.instances[0].label == sbde::dataio::Label::NutLosing));

    let o = sbde(&["eval-edit", "--manifest", s(&a.join("manifest_edit.jsonl")), "--out-root", s(&a.join("ev"))]);
    assert_eq!(code(&o), 0);
    let ev = read_json(a.join("ev/eval_edit.json"));
    assert_eq!(ev["summary"]["n"], 3);
    assert!(ev["summary"]["ssim_mean"].as_f64().unwrap() < 1.0);
}

#[test]
fn segment_edit_aea_chain() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    write_generation_fixture(&gen, 4, 96, 40).unwrap();
    let root = dir.path().join("seg");
    let o = sbde(&[
        "segment", "--manifest", s(&gen.join("manifest.jsonl")), "--attr", "pin", "--backend", "oracle", "--out-root", s(&root),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let seg_manifest = root.join("manifest_seg.jsonl");
    let m = load_manifest(&seg_manifest).unwrap();
    assert_eq!(m.entries.len(), 4);
    let pin = load_mask(m.resolve(&m.entries[0].masks[&sbde::dataio::PolygonLabel::Pin])).unwrap();
    assert_eq!(pin, synth_bolt(96, 96, 40).pin_mask());

    let edit_root = dir.path().join("edit");
    let o = sbde(&["edit", "--manifest", s(&seg_manifest), "--attr", "pin", "--out-root", s(&edit_root)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = sbde(&[
        "aea", "--manifest", s(&edit_root.join("manifest_edit.jsonl")), "--attr", "pin", "--out-root", s(&dir.path().join("aea")),
    ]);
    assert_eq!(code(&o), 0);
    let v = read_json(dir.path().join("aea/aea.json"));
    assert_eq!(v["summary"]["aea"], 100.0);
    assert_eq!(v["summary"]["n_images"], 4);

    let o = sbde(&["segment", "--manifest", s(&gen.join("manifest.jsonl")), "--attr", "bolt", "--out-root", s(&root)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn threshold_segmenter_from_stored_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    write_generation_fixture(&gen, 2, 96, 8).unwrap();
    let root = dir.path().join("seg");
    let o = sbde(&["segment", "--manifest", s(&gen.join("manifest.jsonl")), "--attr", "nut", "--out-root", s(&root)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = load_manifest(root.join("manifest_seg.jsonl")).unwrap();
    let got = load_mask(m.resolve(&m.entries[1].masks[&sbde::dataio::PolygonLabel::Nut])).unwrap();
    let gt = &synth_bolt(96, 96, 9).parts[&sbde::segpipe::PartLabel::Nut];
    let s = sbde::metrics::seg_metrics(&got, gt).unwrap();
    assert!(s.iou_fg.unwrap() > 0.9, "{s:?}");
}

#[test]
fn era_reports_failing_item_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let m = write_detection_fixture(&data, 3, 1, 9).unwrap();
    // blank every part mask of one eligible instance so the oracle returns nothing
    let victim = &m.entries[1].instances[0];
    for rel in victim.masks.values() {
        let (w, h) = load_mask(m.resolve(rel)).unwrap().dimensions();
        save_mask(&BinaryMask::empty(w, h), m.resolve(rel)).unwrap();
    }
    let root = dir.path().join("era");
    let manifest = data.join("manifest.jsonl");
    let o = sbde(&[
        "era", "--manifest", s(&manifest), "--policy", "nut", "--backend-seg", "oracle", "--control", "copy", "--out-root", s(&root),
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(root.join("report.json"));
    let skipped = report["edit"]["skipped"].as_array().unwrap();
    assert_eq!(skipped.len(), 1);
    assert_eq!(skipped[0]["image"], m.entries[1].image.as_str());
    let table = fs::read_to_string(root.join("table.txt")).unwrap();
    assert!(table.starts_with("Class") && table.contains("Copy-aug") && table.contains("SBDE-aug"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Nut losing"));
    let aug = load_manifest(root.join("manifest_aug.jsonl")).unwrap();
    assert_eq!(aug.entries.len(), 3 + report["edit"]["added"]["images"].as_u64().unwrap() as usize);
    assert!(aug.entries.iter().all(|e| Path::new(&e.image).is_absolute()));
    assert_eq!(read_json(root.join("run.json"))["exit_code"], 1);

    let clean = dir.path().join("clean");
    let m2 = write_detection_fixture(&clean, 2, 0, 10).unwrap();
    let o = sbde(&["era", "--manifest", s(&clean.join("manifest.jsonl")), "--backend-seg", "oracle", "--out-root", s(&dir.path().join("era2"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_manifest(dir.path().join("era2/manifest_aug.jsonl")).unwrap().entries.len(), m2.entries.len() * 2);
}

#[test]
fn remote_backends_complete_a_batch() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let m = write_generation_fixture(&gen, 3, 96, 70).unwrap();
    let oracle = Arc::new(OracleSegmenter::from_manifest(&m).unwrap());
    let server = MockServer::start(MockBackends { segmenter: oracle, ..MockBackends::default() }).unwrap();
    let url = format!("http:{}", server.url());
    let root = dir.path().join("r");
    let o = sbde(&[
        "edit", "--manifest", s(&gen.join("manifest.jsonl")), "--attr", "pin", "--backend", &url, "--backend-seg", &url, "--out-root", s(&root),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = read_json(root.join("run.json"));
    assert!(run["backends"].as_array().unwrap().iter().all(|b| b["remote"] == true));
    let o = sbde(&["aea", "--manifest", s(&root.join("manifest_edit.jsonl")), "--attr", "pin", "--backend", &url, "--out-root", s(&root.join("aea"))]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(root.join("aea/aea.json"))["summary"]["aea"], 100.0);
    drop(server);
    let o = sbde(&["aea", "--manifest", s(&root.join("manifest_edit.jsonl")), "--attr", "pin", "--backend", &url, "--out-root", s(&root.join("aea2"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn hpf_writes_reconstructible_component() {
    let dir = tempfile::tempdir().unwrap();
    let bolt = synth_bolt(40, 32, 1);
    let input = dir.path().join("b.png");
    sbde::dataio::save_image(&bolt.image, &input).unwrap();
    let out = dir.path().join("h.png");
    let o = sbde(&["hpf", "--in", s(&input), "--out", s(&out), "--tau", "0.3", "--tiles", "4x2", "--clip", "inf", "--out-root", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let enc = EncodedComponent::load(&out, &dir.path().join("h.json")).unwrap();
    let p = ClaheParams { tiles_x: 4, tiles_y: 2, clip_limit: f64::INFINITY, ..ClaheParams::default() };
    let direct = high_freq_component::<f64>(&bolt.image, &p, 0.3).unwrap();
    assert!(enc.decode().max_abs_diff(&direct) <= 0.5 / enc.sidecar.scale + 1e-9);
    assert_eq!(enc.sidecar.max, direct.min_max().1);
    let o = sbde(&["hpf", "--in", s(&input), "--out", s(&out), "--tau", "-0.1", "--out-root", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 0);
    let o = sbde(&["hpf", "--in", s(&input), "--out", s(&out), "--tiles", "0", "--out-root", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn hps_and_eval_seg() {
    let dir = tempfile::tempdir().unwrap();
    let ballots = dir.path().join("b.jsonl");
    let mut lines = String::new();
    for (e, i, r) in [("e1", "a", [1, 2, 3]), ("e1", "b", [2, 1, 3]), ("e2", "a", [1, 3, 2]), ("e2", "b", [1, 2, 3])] {
        lines += &format!(
            "{{\"expert\":\"{e}\",\"image\":\"{i}\",\"scores\":{{\"S1\":{},\"S2\":{},\"S3\":{}}}}}\n",
            r[0], r[1], r[2]
        );
    }
    fs::write(&ballots, &lines).unwrap();
    let root = dir.path().join("h");
    let o = sbde(&["hps", "--ballots", s(&ballots), "--out-root", s(&root)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = read_json(root.join("hps.json"));
    assert_eq!(t[0]["config"], "S1");
    assert_eq!(t[0]["exact"], "5/4");
    assert_eq!(t[2]["exact"], "11/4");
    fs::write(&ballots, lines.lines().take(3).collect::<Vec<_>>().join("\n")).unwrap();
    assert_eq!(code(&sbde(&["hps", "--ballots", s(&ballots), "--out-root", s(&root)])), 2);
    fs::write(&ballots, "{\"expert\":\"e\"}\n").unwrap();
    assert_eq!(code(&sbde(&["hps", "--ballots", s(&ballots), "--out-root", s(&root)])), 2);

    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    for k in 0..3 {
        let m = noisy_mask(16, 16, k);
        save_mask(&m, gt.join(format!("m{k}.png"))).unwrap();
        save_mask(&m, pred.join(format!("m{k}.png"))).unwrap();
    }
    let o = sbde(&["eval-seg", "--pred", s(&pred), "--gt", s(&gt), "--out-root", s(&root)]);
    assert_eq!(code(&o), 0);
    let v = read_json(root.join("eval_seg.json"));
    assert_eq!(v["summary"]["miou"], 1.0);
    fs::remove_file(pred.join("m1.png")).unwrap();
    let o = sbde(&["eval-seg", "--pred", s(&pred), "--gt", s(&gt), "--out-root", s(&root)]);
    assert_eq!(code(&o), 1);
    assert_eq!(read_json(root.join("eval_seg.json"))["failures"][0]["item"], "m1.png");
}

#[test]
fn split_reassigns_entries() {
    let dir = tempfile::tempdir().unwrap();
    write_detection_fixture(dir.path(), 6, 0, 1).unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    let root = dir.path().join("s");
    let o = sbde(&["split", "--manifest", s(&manifest), "--test-count", "2", "--seed", "5", "--out-root", s(&root)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = load_manifest(root.join("manifest_split.jsonl")).unwrap();
    assert_eq!(m.entries.iter().filter(|e| e.split == Split::Test).count(), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Inspection images"));
    let o = sbde(&["split", "--manifest", s(&manifest), "--test-count", "7", "--out-root", s(&root)]);
    assert_eq!(code(&o), 2);
}
