use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use specseg_core::tensorio::{
    load_features, load_labels, load_metadata, load_rgb_image, save_render, save_segmentation,
    write_atomic,
};
use specseg_core::{
    autosc_segment, coherence_auc, kmeans_cluster, lift_to_pixels, segment_pixels, ColorImage,
    Evaluator, FeatureMap, HiResSegmentation, LabelMap, NcutParams, PamrParams, PipelineParams,
    SegmentationMap,
};

use crate::files::{
    ensure_dir, list_inputs, list_label_pngs, output_path, partner, require_partner, stem,
    FEATURE_EXT,
};
use crate::{AutoscArgs, CoherenceArgs, EvalArgs, KmeansArgs, LiftArgs, SegmentArgs, SweepArgs};

/// Per-file outcomes; failures are printed as they are collected.
struct Batch<T> {
    ok: Vec<(PathBuf, T)>,
    failed: usize,
    total: usize,
}

impl<T> Batch<T> {
    fn finish(&self) -> Result<()> {
        if self.failed > 0 {
            bail!("{} of {} inputs failed", self.failed, self.total);
        }
        Ok(())
    }
}

fn collect<T>(results: Vec<(PathBuf, Result<T>)>) -> Batch<T> {
    let total = results.len();
    let mut ok = Vec::new();
    let mut failed = 0;
    for (path, r) in results {
        match r {
            Ok(v) => ok.push((path, v)),
            Err(e) => {
                eprintln!("error: {}: {e:#}", path.display());
                failed += 1;
            }
        }
    }
    Batch { ok, failed, total }
}

fn run_batch<T: Send>(inputs: &[PathBuf], f: impl Fn(&Path) -> Result<T> + Sync) -> Batch<T> {
    collect(inputs.par_iter().map(|p| (p.clone(), f(p))).collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

/// Source image and output size for one feature file.
struct Target {
    image: Option<ColorImage>,
    height: usize,
    width: usize,
}

fn target(features: &Path, fm: &FeatureMap, lift: &LiftArgs, pamr: bool) -> Result<Target> {
    let stem = stem(features);
    let image_path = lift
        .images
        .as_deref()
        .and_then(|loc| partner(loc, &stem, "png"));
    let image = match image_path {
        Some(p) => Some(load_rgb_image(&p)?),
        None if pamr || lift.render => {
            bail!("missing pair: no image for {stem} (required by refinement or --render)")
        }
        None => None,
    };
    let (height, width) = if let Some(img) = &image {
        (img.height, img.width)
    } else if let Some(m) =
        load_metadata(features)?.filter(|m| m.image_height > 0 && m.image_width > 0)
    {
        (m.image_height as usize, m.image_width as usize)
    } else if let Some(size) = lift.out_size {
        size
    } else {
        (fm.height(), fm.width())
    };
    Ok(Target {
        image,
        height,
        width,
    })
}

fn write_pixels(out: &Path, stem: &str, pixels: &HiResSegmentation, render: bool) -> Result<usize> {
    let map = pixels.to_label_map(u16::MAX)?;
    save_segmentation(&map, output_path(out, stem, ".png"))?;
    if render {
        save_render(&map, output_path(out, stem, ".render.png"))?;
    }
    Ok(pixels.num_segments)
}

/// Lifts a patch segmentation and writes its label PNG (and render).
fn lift_and_write(
    features: &Path,
    fm: &FeatureMap,
    seg: &SegmentationMap,
    lift: &LiftArgs,
    pamr: Option<&PamrParams>,
    out: &Path,
) -> Result<usize> {
    let t = target(features, fm, lift, pamr.is_some())?;
    let refine = t.image.as_ref().zip(pamr);
    let pixels = lift_to_pixels(fm, seg, lift.upsample.into(), t.height, t.width, refine)?;
    write_pixels(out, &stem(features), &pixels, lift.render)
}

pub fn segment(a: SegmentArgs) -> Result<()> {
    let params = PipelineParams {
        ncut: a.ncut.params()?,
        upsample: a.lift.upsample.into(),
        pamr: a.lift.pamr_params()?,
    };
    let inputs = list_inputs(&a.features, FEATURE_EXT)?;
    ensure_dir(&a.out)?;
    let batch = run_batch(&inputs, |path| {
        let fm = load_features(path)?;
        let t = target(path, &fm, &a.lift, params.pamr.is_some())?;
        let image = if params.pamr.is_some() {
            t.image.as_ref()
        } else {
            None
        };
        let result = segment_pixels(&fm, &params, t.height, t.width, image)?;
        let stem = stem(path);
        write_json(&output_path(&a.out, &stem, ".tree.json"), &result.tree)?;
        write_pixels(&a.out, &stem, &result.pixels, a.lift.render)
    });
    for (path, k) in &batch.ok {
        log::info!("{}: {k} segments", path.display());
    }
    batch.finish()
}

fn load_prediction(path: &Path) -> Result<HiResSegmentation> {
    let map = load_labels(path, u16::MAX)?;
    let labels: Vec<u32> = map.labels.iter().map(|&l| u32::from(l)).collect();
    let num_segments = labels.iter().max().map_or(0, |&m| m as usize + 1);
    Ok(HiResSegmentation {
        height: map.height,
        width: map.width,
        labels,
        num_segments,
    })
}

fn evaluate_one(
    name: &str,
    pred: &HiResSegmentation,
    gt: &LabelMap,
    background: Option<u16>,
) -> Result<Evaluator> {
    let mut ev = Evaluator::new(background);
    ev.add(name, pred, gt)?;
    Ok(ev)
}

fn merge_all(
    background: Option<u16>,
    parts: impl IntoIterator<Item = Evaluator>,
) -> Result<Evaluator> {
    let mut total = Evaluator::new(background);
    for ev in parts {
        total.merge(ev)?;
    }
    Ok(total)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let preds = list_label_pngs(&a.pred)?;
    let mut results: Vec<(PathBuf, Result<Evaluator>)> = preds
        .par_iter()
        .map(|p| {
            let r = (|| {
                let name = stem(p);
                let gt_path = require_partner(&a.gt, &name, "png")?;
                let gt = load_labels(&gt_path, a.ignore_index)?;
                let pred = load_prediction(p)?;
                evaluate_one(&name, &pred, &gt, a.background)
                    .with_context(|| format!("against {}", gt_path.display()))
            })();
            (p.clone(), r)
        })
        .collect();
    if a.gt.is_dir() {
        let have: BTreeSet<String> = preds.iter().map(|p| stem(p)).collect();
        for g in list_label_pngs(&a.gt)? {
            if !have.contains(&stem(&g)) {
                let msg = anyhow!("missing pair: no prediction for {}", stem(&g));
                results.push((g, Err(msg)));
            }
        }
    }
    let batch = collect(results);
    let total = merge_all(a.background, batch.ok.iter().map(|(_, ev)| ev.clone()))?;
    let report = total.report();
    write_json(&a.out, &report)?;
    println!("miou {}", report.miou);
    batch.finish()
}

#[derive(Serialize)]
struct SweepRow {
    tau: f64,
    alpha: u32,
    miou: f64,
    mean_k: f64,
}

struct SweepInput {
    name: String,
    fm: FeatureMap,
    gt: LabelMap,
    image: Option<ColorImage>,
}

fn sorted_unique<T: PartialOrd + Copy>(mut v: Vec<T>) -> Vec<T> {
    // NaN sorts anywhere; tau validation rejects it afterwards
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v.dedup_by(|a, b| a == b);
    v
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let pamr = a.lift.pamr_params()?;
    let taus = sorted_unique(a.taus.clone());
    let alphas = sorted_unique(a.alphas.clone());
    if taus.is_empty() || alphas.is_empty() {
        bail!("need at least one tau and one alpha");
    }
    let mut cells = Vec::new();
    for &alpha in &alphas {
        for &tau in &taus {
            let p = NcutParams {
                tau,
                alpha,
                splits: a.splits,
                min_size: a.min_size,
                clamp: !a.no_clamp,
                ..NcutParams::default()
            };
            crate::check_tau(tau)?;
            p.validate()?;
            cells.push(p);
        }
    }

    let inputs = list_inputs(&a.features, FEATURE_EXT)?;
    let loaded = run_batch(&inputs, |path| {
        let name = stem(path);
        let gt = load_labels(require_partner(&a.gt, &name, "png")?, a.ignore_index)?;
        let image = match &pamr {
            Some(_) => {
                let loc = a
                    .lift
                    .images
                    .as_deref()
                    .ok_or_else(|| anyhow!("missing pair: refinement needs --images"))?;
                Some(load_rgb_image(require_partner(loc, &name, "png")?)?)
            }
            None => None,
        };
        Ok(SweepInput {
            name,
            fm: load_features(path)?,
            gt,
            image,
        })
    });
    loaded.finish()?;
    let items: Vec<SweepInput> = loaded.ok.into_iter().map(|(_, v)| v).collect();

    let mut rows = Vec::new();
    for ncut in cells {
        let params = PipelineParams {
            ncut,
            upsample: a.lift.upsample.into(),
            pamr: pamr.clone(),
        };
        let results: Vec<(PathBuf, Result<(usize, Evaluator)>)> = items
            .par_iter()
            .map(|it| {
                let r = (|| {
                    let out = segment_pixels(
                        &it.fm,
                        &params,
                        it.gt.height,
                        it.gt.width,
                        it.image.as_ref(),
                    )?;
                    let ev = evaluate_one(&it.name, &out.pixels, &it.gt, a.background)?;
                    Ok((out.patches.num_segments, ev))
                })();
                (PathBuf::from(&it.name), r)
            })
            .collect();
        let batch = collect(results);
        batch
            .finish()
            .with_context(|| format!("tau {} alpha {}", ncut.tau, ncut.alpha))?;
        let mean_k = batch.ok.iter().map(|(_, (k, _))| *k as f64).sum::<f64>() / items.len() as f64;
        let total = merge_all(a.background, batch.ok.into_iter().map(|(_, (_, ev))| ev))?;
        let miou = total.report().miou;
        log::info!(
            "tau {} alpha {}: miou {miou:.4}, mean k {mean_k:.2}",
            ncut.tau,
            ncut.alpha
        );
        rows.push(SweepRow {
            tau: ncut.tau,
            alpha: ncut.alpha,
            miou,
            mean_k,
        });
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    write_atomic(&a.out, &w.into_inner()?)?;
    Ok(())
}

pub fn coherence(a: CoherenceArgs) -> Result<()> {
    let inputs = list_inputs(&a.features, FEATURE_EXT)?;
    let batch = run_batch(&inputs, |path| {
        let gt = load_labels(require_partner(&a.gt, &stem(path), "png")?, a.ignore_index)?;
        Ok((load_features(path)?, gt))
    });
    batch.finish()?;
    let samples: Vec<(&FeatureMap, &LabelMap)> =
        batch.ok.iter().map(|(_, (f, g))| (f, g)).collect();
    let roc = coherence_auc(&samples, a.pairs, a.seed)?;
    let mut bytes = Vec::new();
    roc.write_csv(&mut bytes)?;
    write_atomic(&a.out, &bytes)?;
    println!("auc {}", roc.auc);
    Ok(())
}

pub fn autosc(a: AutoscArgs) -> Result<()> {
    let pamr = a.lift.pamr_params()?;
    let inputs = list_inputs(&a.features, FEATURE_EXT)?;
    ensure_dir(&a.out)?;
    let batch = run_batch(&inputs, |path| {
        let fm = load_features(path)?;
        let (seg, report) = autosc_segment(&fm, &a.alphas, a.k_max)?;
        write_json(&output_path(&a.out, &stem(path), ".autosc.json"), &report)?;
        lift_and_write(path, &fm, &seg, &a.lift, pamr.as_ref(), &a.out)
    });
    batch.finish()
}

fn class_count(gt: &LabelMap) -> usize {
    gt.labels
        .iter()
        .filter(|&&l| l != gt.ignore_index)
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn kmeans(a: KmeansArgs) -> Result<()> {
    let pamr = a.lift.pamr_params()?;
    let inputs = list_inputs(&a.features, FEATURE_EXT)?;
    ensure_dir(&a.out)?;
    let batch = run_batch(&inputs, |path| {
        let fm = load_features(path)?;
        let k = match (&a.k, &a.k_from_gt) {
            (Some(k), _) => *k,
            (None, Some(loc)) => {
                let gt = load_labels(require_partner(loc, &stem(path), "png")?, a.ignore_index)?;
                class_count(&gt)
            }
            (None, None) => bail!("either --k or --k-from-gt is required"),
        };
        let seg = kmeans_cluster(&fm, k, a.seed)?;
        lift_and_write(path, &fm, &seg, &a.lift, pamr.as_ref(), &a.out)
    });
    batch.finish()
}
