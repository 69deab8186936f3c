use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sbde::dataio::{
    load_image, load_manifest, load_mask, manifest_stats_by_split, render_stats_table, save_mask, split_entries,
    DatasetManifest, Label, PolygonLabel, Split,
};
use sbde::editpipe::{batch_edit, BatchConfig, IdentityInpainter};
use sbde::era::{era_augment, render_augmentation_table, AttributePolicy, EraConfig, EraMode, Grouping};
use sbde::freqprep::{encode_component, high_freq_component};
use sbde::metrics::{classify, compute_aea, hps_table, psnr, seg_metrics, ssim, HpsBallot};
use sbde::morphmod::{mod_optimize, StructElement};
use sbde::segpipe::{sample_prompts, segment_attribute, Attribute, PartLabel};
use serde::Serialize;
use serde_json::json;
use tracing::{info, warn};

use crate::backends;
use crate::error::{input, runtime, CliError};
use crate::run::RunContext;
use crate::{
    AeaArgs, Control, EditArgs, EraArgs, EvalEditArgs, EvalSegArgs, GroupingArg, HpfArgs, HpsArgs, ModArgs,
    SegmentArgs, SplitArgs,
};

fn parse_attr(s: &str) -> Result<Attribute, CliError> {
    s.parse().map_err(|e: sbde::segpipe::SegError| CliError::Usage(e.to_string()))
}

fn abs(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(input)
}

/// Load a manifest with an absolute base so every resolved path is absolute.
fn read_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    load_manifest(abs(path)?).map_err(input)
}

fn abs_str(m: &DatasetManifest, rel: &str) -> String {
    m.resolve(rel).to_string_lossy().into_owned()
}

/// Same entries with every path made absolute, so the manifest can be saved
/// anywhere.
fn absolutize(m: &DatasetManifest, base: &Path) -> DatasetManifest {
    let mut out = m.clone();
    out.base_dir = base.to_path_buf();
    for e in &mut out.entries {
        e.image = abs_str(m, &e.image);
        for v in e.masks.values_mut() {
            *v = abs_str(m, v);
        }
        if let Some(p) = &mut e.polygons {
            *p = abs_str(m, p);
        }
        if let Some(s) = &mut e.source {
            *s = abs_str(m, s);
        }
        for inst in &mut e.instances {
            for v in inst.masks.values_mut() {
                *v = abs_str(m, v);
            }
        }
    }
    out
}

fn attr_labels(attr: Attribute) -> Vec<PolygonLabel> {
    match attr {
        Attribute::Pin => vec![PolygonLabel::Pin, PolygonLabel::Pin0, PolygonLabel::Pin1, PolygonLabel::Pin2],
        Attribute::Nut => vec![PolygonLabel::Nut],
    }
}

fn stored_part_mask(m: &DatasetManifest, masks: &BTreeMap<PolygonLabel, String>, part: PartLabel) -> Option<PathBuf> {
    masks
        .get(&part.to_polygon())
        .or_else(|| if part == PartLabel::Nut { None } else { masks.get(&PolygonLabel::Pin) })
        .map(|rel| m.resolve(rel))
}

#[derive(Serialize)]
struct Failure {
    item: String,
    reason: String,
}

pub fn segment(ctx: &mut RunContext, a: &SegmentArgs) -> Result<usize, CliError> {
    let attr = parse_attr(&a.attr)?;
    let m = read_manifest(&a.manifest)?;
    let spec = a.backend.clone().unwrap_or_else(|| ctx.cfg.backends.segment.clone());
    let (seg, info) = backends::segmenter(&spec, Some(&m))?;
    ctx.backend(info);
    fs::create_dir_all(ctx.path("masks")).map_err(runtime)?;
    let mut out = DatasetManifest::new(&ctx.root, Vec::new());
    let mut failures = Vec::new();
    for entry in &m.entries {
        let id = entry.image_id();
        let result = (|| -> Result<PathBuf, String> {
            let img = load_image(m.resolve(&entry.image)).map_err(|e| e.to_string())?;
            let mut prompts = entry.prompts.clone();
            for (k, part) in attr.parts().iter().enumerate() {
                if prompts.get(&part.to_polygon()).is_some_and(|p| !p.is_empty()) {
                    continue;
                }
                if let Some(path) = stored_part_mask(&m, &entry.masks, *part) {
                    let gt = load_mask(path).map_err(|e| e.to_string())?;
                    let seed = ctx.cfg.seed.wrapping_add(k as u64);
                    if let Ok(p) = sample_prompts(&gt, ctx.cfg.n_prompts, seed) {
                        prompts.insert(part.to_polygon(), p);
                    }
                }
            }
            let mask = segment_attribute(seg.as_ref(), &img, attr, &prompts, ctx.cfg.seed).map_err(|e| e.to_string())?;
            let path = ctx.path(&format!("masks/{id}_{attr}.png"));
            save_mask(&mask, &path).map_err(|e| e.to_string())?;
            Ok(path)
        })();
        match result {
            Ok(path) => {
                info!(image = %id, attribute = %attr, "segmented");
                let mut e = absolutize(&DatasetManifest::new(&m.base_dir, vec![entry.clone()]), &ctx.root).entries.remove(0);
                for l in attr_labels(attr) {
                    e.masks.remove(&l);
                }
                e.masks.insert(attr_labels(attr)[0], format!("masks/{id}_{attr}.png"));
                out.entries.push(e);
                ctx.artifact(&path);
            }
            Err(reason) => {
                warn!(image = %id, error = %reason, "segmentation failed");
                failures.push(Failure { item: entry.image.clone(), reason });
            }
        }
    }
    ctx.write_manifest("manifest_seg.jsonl", &out)?;
    ctx.write_json("report.json", &json!({ "attribute": attr, "segmented": out.entries.len(), "failures": failures }))?;
    Ok(failures.len())
}

pub fn mod_mask(ctx: &mut RunContext, a: &ModArgs) -> Result<usize, CliError> {
    let mut cfg = ctx.cfg.mod_cfg.clone();
    let se = |s: &str| s.parse::<StructElement>().map_err(|e| CliError::Usage(format!("{s:?}: {e}")));
    if let Some(s) = &a.se_open {
        cfg.open_se = se(s)?;
    }
    if let Some(s) = &a.se_dilate {
        cfg.dilate_se = se(s)?;
    }
    if let Some(p) = a.passes {
        cfg.dilate_passes = p;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let m = load_mask(&a.input).map_err(input)?;
    let out = mod_optimize(&m, &cfg);
    if out.is_empty() {
        warn!(mask = %a.input.display(), "optimized mask is empty");
    }
    save_mask(&out, &a.out).map_err(runtime)?;
    ctx.artifact(&abs(&a.out)?);
    ctx.cfg.mod_cfg = cfg;
    Ok(0)
}

pub fn edit(ctx: &mut RunContext, a: &EditArgs) -> Result<usize, CliError> {
    let attr = parse_attr(&a.attr)?;
    let m = read_manifest(&a.manifest)?;
    let inpaint_spec = a.backend.clone().unwrap_or_else(|| ctx.cfg.backends.inpaint.clone());
    let seg_spec = a.backend_seg.clone().unwrap_or_else(|| ctx.cfg.backends.segment.clone());
    let (inpaint, info) = backends::inpainter(&inpaint_spec)?;
    ctx.backend(info);
    let (seg, info) = backends::segmenter(&seg_spec, Some(&m))?;
    ctx.backend(info);
    let bc = BatchConfig {
        mod_cfg: ctx.cfg.mod_cfg.clone(),
        out_dir: ctx.root.clone(),
        parallel: ctx.cfg.parallel,
        seed: ctx.cfg.seed,
    };
    let report = batch_edit(&m, attr, Some(seg.as_ref()), inpaint.as_ref(), &bc).map_err(runtime)?;
    for r in &report.records {
        for rel in [&r.edited, &r.mask_raw, &r.mask_mod] {
            ctx.artifact(&ctx.path(rel));
        }
    }
    ctx.write_manifest("manifest_edit.jsonl", &report.manifest)?;
    ctx.write_json(
        "report.json",
        &json!({ "attribute": attr, "records": report.records, "failures": report.failures }),
    )?;
    Ok(report.failures.len())
}

pub fn era(ctx: &mut RunContext, a: &EraArgs) -> Result<usize, CliError> {
    let m = read_manifest(&a.manifest)?;
    let policy = match &a.policy {
        Some(p) => p.parse::<AttributePolicy>().map_err(|e| CliError::Usage(e.to_string()))?,
        None => ctx.cfg.policy,
    };
    if let Some(g) = a.grouping {
        ctx.cfg.grouping = match g {
            GroupingArg::All => Grouping::AllPerImage,
            GroupingArg::One => Grouping::OnePerImage,
        };
    }
    if let Some(s) = a.min_side {
        ctx.cfg.min_side = s;
    }
    ctx.cfg.policy = policy;
    let seg_spec = a.backend_seg.clone().unwrap_or_else(|| ctx.cfg.backends.segment.clone());
    let inpaint_spec = a.backend_inpaint.clone().unwrap_or_else(|| ctx.cfg.backends.inpaint.clone());
    let (seg, info) = backends::segmenter(&seg_spec, Some(&m))?;
    ctx.backend(info);
    let (inpaint, info) = backends::inpainter(&inpaint_spec)?;
    ctx.backend(info);
    let cfg = EraConfig {
        min_side: ctx.cfg.min_side,
        policy,
        seed: ctx.cfg.seed,
        mode: EraMode::Edit,
        grouping: ctx.cfg.grouping,
        mod_cfg: ctx.cfg.mod_cfg.clone(),
        n_prompts: ctx.cfg.n_prompts,
        parallel: ctx.cfg.parallel,
    };
    let (aug, report) = era_augment(&m, seg.as_ref(), inpaint.as_ref(), &cfg).map_err(runtime)?;
    let added = |out: &DatasetManifest| -> Vec<PathBuf> {
        out.entries.iter().filter(|e| e.source.is_some()).map(|e| out.resolve(&e.image)).collect()
    };
    for p in added(&aug) {
        ctx.artifact(&p);
    }
    ctx.write_manifest("manifest_aug.jsonl", &absolutize(&aug, &ctx.root))?;
    let mut failures = report.skipped.len() + report.failed_images.len();
    let copy = if a.control == Control::Copy {
        let (copied, crep) =
            era_augment(&m, seg.as_ref(), &IdentityInpainter, &EraConfig { mode: EraMode::Copy, ..cfg.clone() })
                .map_err(runtime)?;
        for p in added(&copied) {
            ctx.artifact(&p);
        }
        ctx.write_manifest("manifest_copy.jsonl", &absolutize(&copied, &ctx.root))?;
        failures += crep.skipped.len() + crep.failed_images.len();
        Some(crep)
    } else {
        None
    };
    let train = manifest_stats_by_split(&m)[&Split::Train];
    let table = render_augmentation_table(&train, copy.as_ref(), Some(&report));
    print!("{table}");
    ctx.write_text("table.txt", &table)?;
    ctx.write_json("report.json", &json!({ "edit": report, "copy": copy, "original_train": train }))?;
    Ok(failures)
}

#[derive(Serialize)]
struct SegItem {
    file: String,
    miou: f64,
    dice: f64,
    pa: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn eval_seg(ctx: &mut RunContext, a: &EvalSegArgs) -> Result<usize, CliError> {
    let mut names: Vec<String> = fs::read_dir(&a.gt)
        .map_err(|e| CliError::Input(format!("{}: {e}", a.gt.display())))?
        .filter_map(|d| d.ok())
        .map(|d| d.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Input(format!("no PNG masks in {}", a.gt.display())));
    }
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for name in names {
        let r = load_mask(a.pred.join(&name))
            .and_then(|p| Ok((p, load_mask(a.gt.join(&name))?)))
            .and_then(|(p, g)| seg_metrics(&p, &g));
        match r {
            Ok(s) => items.push(SegItem { file: name, miou: s.miou, dice: s.dice, pa: s.pa }),
            Err(e) => failures.push(Failure { item: name, reason: e.to_string() }),
        }
    }
    let summary = json!({
        "n": items.len(),
        "miou": mean(items.iter().map(|i| i.miou)),
        "dice": mean(items.iter().map(|i| i.dice)),
        "pa": mean(items.iter().map(|i| i.pa)),
    });
    println!("{summary}");
    ctx.write_json("eval_seg.json", &json!({ "summary": summary, "items": items, "failures": failures }))?;
    Ok(failures.len())
}

pub fn eval_edit(ctx: &mut RunContext, a: &EvalEditArgs) -> Result<usize, CliError> {
    let m = read_manifest(&a.manifest)?;
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for e in m.entries.iter().filter(|e| e.source.is_some()) {
        let source = e.source.as_deref().unwrap_or_default();
        let r = (|| -> Result<(sbde::metrics::Psnr, f64), String> {
            let edited = load_image(m.resolve(&e.image)).map_err(|e| e.to_string())?;
            let orig = load_image(m.resolve(source)).map_err(|e| e.to_string())?;
            let p = psnr(&orig, &edited).map_err(|e| e.to_string())?;
            let s = ssim(&orig, &edited).map_err(|e| e.to_string())?;
            Ok((p, s))
        })();
        match r {
            Ok((p, s)) => items.push(json!({ "image": e.image, "source": source, "psnr": p, "ssim": s, "finite": p.0.is_finite() })),
            Err(reason) => failures.push(Failure { item: e.image.clone(), reason }),
        }
    }
    let psnrs: Vec<f64> = items.iter().filter_map(|i| i["psnr"].as_f64()).collect();
    let summary = json!({
        "n": items.len(),
        "psnr_mean_finite": mean(psnrs.iter().copied()),
        "psnr_infinite": items.len() - psnrs.len(),
        "ssim_mean": mean(items.iter().filter_map(|i| i["ssim"].as_f64())),
    });
    println!("{summary}");
    ctx.write_json("eval_edit.json", &json!({ "summary": summary, "items": items, "failures": failures }))?;
    Ok(failures.len())
}

pub fn aea(ctx: &mut RunContext, a: &AeaArgs) -> Result<usize, CliError> {
    let attr = parse_attr(&a.attr)?;
    let target = attr.defect_label();
    let m = read_manifest(&a.manifest)?;
    let spec = a.backend.clone().unwrap_or_else(|| ctx.cfg.backends.classify.clone());
    let (classifier, info) = backends::classifier(&spec)?;
    ctx.backend(info);
    let mut labels: Vec<(String, Label)> = Vec::new();
    let mut failures = Vec::new();
    for e in &m.entries {
        let r = load_image(m.resolve(&e.image))
            .map_err(|e| e.to_string())
            .and_then(|img| classify(classifier.as_ref(), &img).map_err(|e| e.to_string()));
        match r {
            Ok(c) => labels.push((e.image.clone(), c.label)),
            Err(reason) => failures.push(Failure { item: e.image.clone(), reason }),
        }
    }
    let preds: Vec<Label> = labels.iter().map(|(_, l)| *l).collect();
    let score = if preds.is_empty() { None } else { Some(compute_aea(&preds, target).map_err(runtime)?) };
    let summary = json!({ "target": target, "n_images": preds.len(), "aea": score });
    println!("{summary}");
    let per_image: Vec<_> = labels.iter().map(|(i, l)| json!({ "image": i, "label": l })).collect();
    ctx.write_json("aea.json", &json!({ "summary": summary, "items": per_image, "failures": failures }))?;
    Ok(failures.len())
}

pub fn hps(ctx: &mut RunContext, a: &HpsArgs) -> Result<usize, CliError> {
    let text = fs::read_to_string(&a.ballots).map_err(|e| CliError::Input(format!("{}: {e}", a.ballots.display())))?;
    let mut ballots = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let b: HpsBallot = serde_json::from_str(line)
            .map_err(|e| CliError::Input(format!("{} line {}: {e}", a.ballots.display(), n + 1)))?;
        ballots.push(b);
    }
    let table = hps_table(&ballots).map_err(input)?;
    for row in &table {
        println!("{:<16}{:>10}{:>10.4}", row.config, row.exact, row.score);
    }
    ctx.write_json("hps.json", &table)?;
    Ok(0)
}

fn parse_tiles(s: &str) -> Result<(u32, u32), CliError> {
    let bad = || CliError::Usage(format!("tiles {s:?}: expected N or XxY"));
    match s.split_once(['x', 'X']) {
        Some((x, y)) => Ok((x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

pub fn hpf(ctx: &mut RunContext, a: &HpfArgs) -> Result<usize, CliError> {
    if let Some(t) = a.tau {
        ctx.cfg.tau = t;
    }
    if let Some(t) = &a.tiles {
        (ctx.cfg.clahe.tiles_x, ctx.cfg.clahe.tiles_y) = parse_tiles(t)?;
    }
    if let Some(c) = &a.clip {
        ctx.cfg.clahe.clip_limit = match c.trim() {
            "inf" => f64::INFINITY,
            v => v.parse().map_err(|_| CliError::Usage(format!("clip {c:?}: expected a number or inf")))?,
        };
    }
    ctx.cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let img = load_image(&a.input).map_err(input)?.to_luma();
    let hfc = high_freq_component::<f64>(&img, &ctx.cfg.clahe, ctx.cfg.tau).map_err(runtime)?;
    let enc = encode_component(&hfc);
    let sidecar = a.out.with_extension("json");
    enc.save(&a.out, &sidecar).map_err(runtime)?;
    ctx.artifact(&abs(&a.out)?);
    ctx.artifact(&abs(&sidecar)?);
    info!(min = enc.sidecar.min, max = enc.sidecar.max, scale = enc.sidecar.scale, "component written");
    Ok(0)
}

pub fn split(ctx: &mut RunContext, a: &SplitArgs) -> Result<usize, CliError> {
    let m = read_manifest(&a.manifest)?;
    if a.test_count > m.entries.len() {
        return Err(CliError::Usage(format!("test count {} exceeds {} entries", a.test_count, m.entries.len())));
    }
    let s = split_entries(&m, a.test_count, ctx.cfg.seed);
    ctx.write_manifest("manifest_split.jsonl", &absolutize(&s, &ctx.root))?;
    let table = render_stats_table(&s);
    print!("{table}");
    ctx.write_text("stats.txt", &table)?;
    Ok(0)
}
