use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{FeatureMap, LabelMap};

/// ROC points from `(0, 0)` to `(1, 1)`, one per distinct score in
/// descending order. The first threshold is `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "fpr", "tpr"])?;
        for i in 0..self.thresholds.len() {
            w.write_record([
                self.thresholds[i].to_string(),
                self.fpr[i].to_string(),
                self.tpr[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Predicted positive iff `score >= threshold`. The trapezoidal area is
/// computed from integer counts, so it equals the pairwise ranking
/// probability with ties counted as one half.
pub fn roc_curve(scores: &[f64], targets: &[bool]) -> Result<RocCurve> {
    if scores.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} targets",
            scores.len(),
            targets.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteValue { index: i });
    }
    let pos = targets.iter().filter(|&&t| t).count() as u64;
    let neg = targets.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "{pos} positives and {neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area, in units of one positive-negative pair
    let mut doubled: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (prev_tp, prev_fp) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if targets[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled += (fp - prev_fp) as u128 * (tp + prev_tp) as u128;
        thresholds.push(s);
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
    }
    let auc = doubled as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

/// Majority ground-truth class under each patch's pixel footprint. A patch
/// gets `None` when it covers no pixels or ignored pixels are at least as
/// common as its best class. Ties between classes go to the smaller id.
pub fn patch_labels(grid_h: usize, grid_w: usize, gt: &LabelMap) -> Vec<Option<u16>> {
    let mut out = Vec::with_capacity(grid_h * grid_w);
    let mut counts = std::collections::BTreeMap::new();
    for r in 0..grid_h {
        let (y0, y1) = (r * gt.height / grid_h, (r + 1) * gt.height / grid_h);
        for c in 0..grid_w {
            let (x0, x1) = (c * gt.width / grid_w, (c + 1) * gt.width / grid_w);
            counts.clear();
            let mut ignored = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let l = gt.get(y, x);
                    if l == gt.ignore_index {
                        ignored += 1;
                    } else {
                        *counts.entry(l).or_insert(0usize) += 1;
                    }
                }
            }
            let mut best: Option<(u16, usize)> = None;
            for (&l, &n) in &counts {
                if best.is_none_or(|(_, m)| n > m) {
                    best = Some((l, n));
                }
            }
            out.push(best.filter(|&(_, n)| n > ignored).map(|(l, _)| l));
        }
    }
    out
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let denom = (aa * bb).sqrt();
    if denom > 0.0 {
        ab / denom
    } else {
        0.0
    }
}

/// Samples `num_pairs` distinct-patch pairs across all images and scores
/// them by cosine similarity against "same ground-truth class".
pub fn coherence_auc(
    samples: &[(&FeatureMap, &LabelMap)],
    num_pairs: usize,
    seed: u64,
) -> Result<RocCurve> {
    let mut pool: Vec<(&[f32], u16)> = Vec::new();
    for (fm, gt) in samples {
        if gt.height < fm.height() || gt.width < fm.width() {
            return Err(Error::DimensionMismatch(format!(
                "ground truth {}x{} is smaller than the {}x{} patch grid",
                gt.height,
                gt.width,
                fm.height(),
                fm.width()
            )));
        }
        for (i, l) in patch_labels(fm.height(), fm.width(), gt)
            .into_iter()
            .enumerate()
        {
            if let Some(l) = l {
                pool.push((fm.patch(i), l));
            }
        }
    }
    if pool.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "{} labelled patches, need at least 2",
            pool.len()
        )));
    }
    if num_pairs == 0 {
        return Err(Error::InvalidParameter("num_pairs must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(num_pairs);
    let mut targets = Vec::with_capacity(num_pairs);
    for _ in 0..num_pairs {
        let i = rng.random_range(0..pool.len());
        let mut j = rng.random_range(0..pool.len() - 1);
        if j >= i {
            j += 1;
        }
        scores.push(cosine(pool[i].0, pool[j].0));
        targets.push(pool[i].1 == pool[j].1);
    }
    roc_curve(&scores, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        let r = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.fpr, vec![0.0, 0.0, 0.0, 0.5, 1.0]);
        assert_eq!(r.tpr, vec![0.0, 0.5, 1.0, 1.0, 1.0]);
        let r = roc_curve(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert_eq!(r.auc, 0.0);
    }

    #[test]
    fn all_tied_is_one_half() {
        let r = roc_curve(&[0.3; 4], &[true, false, true, false]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.thresholds.len(), 2);
    }

    #[test]
    fn degenerate() {
        assert!(matches!(
            roc_curve(&[0.1, 0.2], &[true, true]),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn csv_output() {
        let r = roc_curve(&[1.0, 0.0], &[true, false]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("threshold,fpr,tpr\ninf,0,0\n"));
    }

    #[test]
    fn majority_vote() {
        let gt = LabelMap::new(2, 4, vec![1, 1, 255, 255, 1, 2, 255, 3], 255).unwrap();
        assert_eq!(patch_labels(1, 2, &gt), vec![Some(1), None]);
    }

    #[test]
    fn separable_features_give_auc_one() {
        let fm = FeatureMap::from_fn(
            2,
            2,
            2,
            |_, c, k| if (c == 0) == (k == 0) { 1.0 } else { 0.0 },
        )
        .unwrap();
        let gt = LabelMap::new(2, 2, vec![0, 1, 0, 1], 255).unwrap();
        let r = coherence_auc(&[(&fm, &gt)], 200, 7).unwrap();
        assert_eq!(r.auc, 1.0);
    }
}
