//! Lifting patch-level segmentations to pixel resolution.
//!
//! Every segment is summarized by the mean of its patch embeddings (a
//! concept); the feature map is bilinearly upsampled and each pixel takes the
//! concept with the highest cosine similarity. Nearest-patch upsampling is kept
//! as the naive baseline, and [`pamr`] refines the result against the image.

pub mod pamr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ncut::SegmentationMap;
use crate::tensorio::{FeatureMap, LabelMap};

pub use pamr::{pamr_refine, PamrParams, PamrRefiner};

/// Mean embedding of each segment, indexed by segment label.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBank {
    pub embeddings: Vec<Vec<f64>>,
    pub source_labels: Vec<u32>,
}

impl ConceptBank {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }
}

/// Pixel-resolution labels in `[0, num_segments)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiResSegmentation {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub num_segments: usize,
}

impl HiResSegmentation {
    pub fn to_label_map(&self, ignore_index: u16) -> Result<LabelMap> {
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                u16::try_from(l)
                    .map_err(|_| Error::InvalidParameter(format!("label {l} exceeds 16 bits")))
            })
            .collect::<Result<Vec<_>>>()?;
        LabelMap::new(self.height, self.width, labels, ignore_index)
    }
}

impl From<&SegmentationMap> for HiResSegmentation {
    fn from(seg: &SegmentationMap) -> Self {
        Self {
            height: seg.height,
            width: seg.width,
            labels: seg.labels.clone(),
            num_segments: seg.num_segments,
        }
    }
}

fn check_grid(fm: &FeatureMap, seg: &SegmentationMap) -> Result<()> {
    if fm.height() != seg.height || fm.width() != seg.width {
        return Err(Error::DimensionMismatch(format!(
            "features {}x{} vs segmentation {}x{}",
            fm.height(),
            fm.width(),
            seg.height,
            seg.width
        )));
    }
    Ok(())
}

/// Masked spatial marginal mean: one concept per segment.
pub fn masked_smm(fm: &FeatureMap, seg: &SegmentationMap) -> Result<ConceptBank> {
    check_grid(fm, seg)?;
    let dim = fm.dim();
    let mut sums = vec![vec![0.0f64; dim]; seg.num_segments];
    let mut counts = vec![0usize; seg.num_segments];
    for (patch, &l) in fm.patches().zip(&seg.labels) {
        let l = l as usize;
        counts[l] += 1;
        sums[l]
            .iter_mut()
            .zip(patch)
            .for_each(|(s, &v)| *s += f64::from(v));
    }
    for (k, (sum, &count)) in sums.iter_mut().zip(&counts).enumerate() {
        if count == 0 {
            return Err(Error::EmptySegment(k));
        }
        sum.iter_mut().for_each(|s| *s /= count as f64);
        if sum.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroNormConcept(k));
        }
    }
    Ok(ConceptBank {
        embeddings: sums,
        source_labels: (0..seg.num_segments as u32).collect(),
    })
}

/// Half-pixel-centre source sample for one output index: `(lo, hi, frac)`.
fn bilinear_source(dst: usize, src_size: usize, dst_size: usize) -> (usize, usize, f64) {
    let s = (dst as f64 + 0.5) * (src_size as f64 / dst_size as f64) - 0.5;
    let s = s.clamp(0.0, (src_size - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(src_size - 1);
    (lo, hi, s - lo as f64)
}

fn check_upsample(fm_h: usize, fm_w: usize, out_h: usize, out_w: usize) -> Result<()> {
    if out_h < fm_h || out_w < fm_w {
        return Err(Error::InvalidParameter(format!(
            "output {out_h}x{out_w} smaller than source {fm_h}x{fm_w}"
        )));
    }
    Ok(())
}

/// Bilinear feature upsampling with half-pixel centres, clamped at the border.
pub fn bilinear_upsample(fm: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    check_upsample(fm.height(), fm.width(), out_h, out_w)?;
    let dim = fm.dim();
    let rows: Vec<_> = (0..out_h)
        .map(|y| bilinear_source(y, fm.height(), out_h))
        .collect();
    let cols: Vec<_> = (0..out_w)
        .map(|x| bilinear_source(x, fm.width(), out_w))
        .collect();
    let mut data = Vec::with_capacity(out_h * out_w * dim);
    let at = |r: usize, c: usize| fm.patch(r * fm.width() + c);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let (a, b, c, d) = (at(y0, x0), at(y0, x1), at(y1, x0), at(y1, x1));
            for k in 0..dim {
                let top = f64::from(a[k]) * (1.0 - fx) + f64::from(b[k]) * fx;
                let bottom = f64::from(c[k]) * (1.0 - fx) + f64::from(d[k]) * fx;
                data.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    FeatureMap::new(out_h, out_w, dim, data)
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// Per-pixel arg-max cosine between upsampled features and concepts.
pub fn assign_concepts(fm_up: &FeatureMap, bank: &ConceptBank) -> Result<HiResSegmentation> {
    if bank.is_empty() || bank.dim() != fm_up.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dim {} vs concept dim {}",
            fm_up.dim(),
            bank.dim()
        )));
    }
    let concept_norms: Vec<f64> = bank
        .embeddings
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut labels = Vec::with_capacity(fm_up.len());
    for (index, pixel) in fm_up.patches().enumerate() {
        let norm = pixel
            .iter()
            .map(|&v| f64::from(v).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormPixel { index });
        }
        let label = argmax_first(bank.embeddings.iter().zip(&concept_norms).map(|(c, cn)| {
            let dot: f64 = c.iter().zip(pixel).map(|(a, &b)| a * f64::from(b)).sum();
            dot / (norm * cn)
        }));
        labels.push(label as u32);
    }
    Ok(HiResSegmentation {
        height: fm_up.height(),
        width: fm_up.width(),
        labels,
        num_segments: bank.len(),
    })
}

/// Bilinear upsampling and concept assignment in one pass.
///
/// Cosine arg-max only needs `⟨z_up, c_k⟩ / ‖c_k‖`, which is linear in the
/// four source patches, so patch-concept scores are interpolated instead of
/// materialising the `out_h × out_w × D` tensor. Pixels whose interpolated
/// feature vanishes fall back to the nearest patch label.
pub fn upsample_and_assign(
    fm: &FeatureMap,
    seg: &SegmentationMap,
    bank: &ConceptBank,
    out_h: usize,
    out_w: usize,
) -> Result<HiResSegmentation> {
    check_grid(fm, seg)?;
    check_upsample(fm.height(), fm.width(), out_h, out_w)?;
    if bank.is_empty() || bank.dim() != fm.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dim {} vs concept dim {}",
            fm.dim(),
            bank.dim()
        )));
    }
    let (h, w, k) = (fm.height(), fm.width(), bank.len());
    let unit: Vec<Vec<f64>> = bank
        .embeddings
        .iter()
        .map(|c| {
            let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            c.iter().map(|v| v / n).collect()
        })
        .collect();
    let patch = |i: usize| fm.patch(i).iter().map(|&v| f64::from(v));
    let scores: Vec<f64> = (0..h * w)
        .flat_map(|i| {
            unit.iter()
                .map(move |c| c.iter().zip(patch(i)).map(|(a, b)| a * b).sum::<f64>())
                .collect::<Vec<_>>()
        })
        .collect();
    let gram = |a: usize, b: usize| -> f64 {
        fm.patch(a)
            .iter()
            .zip(fm.patch(b))
            .map(|(&x, &y)| f64::from(x) * f64::from(y))
            .sum()
    };
    let self_dot: Vec<f64> = (0..h * w).map(|i| gram(i, i)).collect();
    let max_self = self_dot.iter().cloned().fold(0.0, f64::max);

    let nearest = nearest_upsample(seg, out_h, out_w);
    let rows: Vec<_> = (0..out_h).map(|y| bilinear_source(y, h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|x| bilinear_source(x, w, out_w)).collect();
    let mut labels = Vec::with_capacity(out_h * out_w);
    let mut pixel_scores = vec![0.0; k];
    for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let taps = [
                (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * w + x1, (1.0 - fy) * fx),
                (y1 * w + x0, fy * (1.0 - fx)),
                (y1 * w + x1, fy * fx),
            ];
            pixel_scores.iter_mut().for_each(|s| *s = 0.0);
            for &(p, wt) in &taps {
                if wt != 0.0 {
                    let row = &scores[p * k..(p + 1) * k];
                    pixel_scores
                        .iter_mut()
                        .zip(row)
                        .for_each(|(s, v)| *s += wt * v);
                }
            }
            // ‖Σ w_p z_p‖² from pairwise patch products
            let mut norm_sq = 0.0;
            for &(p, wp) in &taps {
                for &(q, wq) in &taps {
                    if wp != 0.0 && wq != 0.0 {
                        norm_sq += wp * wq * if p == q { self_dot[p] } else { gram(p, q) };
                    }
                }
            }
            let label = if norm_sq <= 1e-24 * max_self {
                nearest.labels[y * out_w + x]
            } else {
                argmax_first(pixel_scores.iter().copied()) as u32
            };
            labels.push(label);
        }
    }
    Ok(HiResSegmentation {
        height: out_h,
        width: out_w,
        labels,
        num_segments: k,
    })
}

/// Index of the nearest source centre for each output index; exact integer
/// arithmetic, ties go to the smaller index.
fn nearest_source(src: usize, dst_size: usize) -> Vec<usize> {
    let (src_i, dst_i) = (src as i64, dst_size as i64);
    (0..dst_i)
        .map(|d| {
            // centre at s = (d + ½)·src/dst − ½; nearest = ceil(s − ½)
            let num = (2 * d + 1) * src_i - 2 * dst_i;
            let den = 2 * dst_i;
            let ceil = -((-num).div_euclid(den));
            ceil.clamp(0, src_i - 1) as usize
        })
        .collect()
}

/// Nearest-patch label upsampling.
pub fn nearest_upsample(seg: &SegmentationMap, out_h: usize, out_w: usize) -> HiResSegmentation {
    let rows = nearest_source(seg.height, out_h);
    let cols = nearest_source(seg.width, out_w);
    let mut labels = Vec::with_capacity(out_h * out_w);
    for &r in &rows {
        for &c in &cols {
            labels.push(seg.labels[r * seg.width + c]);
        }
    }
    HiResSegmentation {
        height: out_h,
        width: out_w,
        labels,
        num_segments: seg.num_segments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(h: usize, w: usize, labels: &[u32]) -> SegmentationMap {
        SegmentationMap::from_raw(h, w, labels).unwrap()
    }

    #[test]
    fn smm_of_constant_segment() {
        let fm = FeatureMap::from_fn(
            2,
            2,
            3,
            |r, _, k| if r == 0 { [1.0, 2.0, 3.0][k] } else { 9.0 },
        )
        .unwrap();
        let bank = masked_smm(&fm, &seg(2, 2, &[0, 0, 1, 1])).unwrap();
        assert_eq!(bank.embeddings[0], vec![1.0, 2.0, 3.0]);
        assert_eq!(bank.embeddings[1], vec![9.0, 9.0, 9.0]);
    }

    #[test]
    fn smm_of_single_patch_and_mean() {
        // e1, e2, e1 + e2 in segment 0; a lone patch in segment 1
        let data = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 5.0, 1.0],
        ];
        let fm = FeatureMap::new(1, 4, 4, data.concat()).unwrap();
        let bank = masked_smm(&fm, &seg(1, 4, &[0, 0, 0, 1])).unwrap();
        let third = 2.0 / 3.0;
        assert!((bank.embeddings[0][0] - third).abs() < 1e-15);
        assert!((bank.embeddings[0][1] - third).abs() < 1e-15);
        assert_eq!(&bank.embeddings[0][2..], &[0.0, 0.0]);
        assert_eq!(bank.embeddings[1], vec![0.0, 0.0, 5.0, 1.0]);
    }

    #[test]
    fn smm_grid_mismatch() {
        let fm = FeatureMap::new(1, 2, 1, vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            masked_smm(&fm, &seg(2, 1, &[0, 0])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn bilinear_half_pixel_line() {
        let fm = FeatureMap::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let up = bilinear_upsample(&fm, 1, 4).unwrap();
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let fm =
            FeatureMap::from_fn(3, 4, 2, |r, c, k| (r * 10 + c * 3 + k) as f32 * 0.37).unwrap();
        assert_eq!(bilinear_upsample(&fm, 3, 4).unwrap(), fm);
        let flat = FeatureMap::from_fn(3, 3, 2, |_, _, k| [0.3, -1.5][k]).unwrap();
        let up = bilinear_upsample(&flat, 7, 11).unwrap();
        for p in up.patches() {
            assert!((p[0] - 0.3).abs() < 1e-6 && (p[1] + 1.5).abs() < 1e-6);
        }
        assert!(bilinear_upsample(&fm, 2, 4).is_err());
    }

    #[test]
    fn assign_exact_and_tie() {
        let bank = ConceptBank {
            embeddings: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            source_labels: vec![0, 1, 2],
        };
        let fm = FeatureMap::new(1, 2, 2, vec![0.0, 3.0, 2.0, 2.0]).unwrap();
        assert_eq!(assign_concepts(&fm, &bank).unwrap().labels, vec![1, 2]);

        let two = ConceptBank {
            embeddings: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            source_labels: vec![0, 1],
        };
        let equal = FeatureMap::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(assign_concepts(&equal, &two).unwrap().labels, vec![0]);

        let one = ConceptBank {
            embeddings: vec![vec![0.2, 0.1]],
            source_labels: vec![0],
        };
        let any = FeatureMap::new(1, 3, 2, vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(assign_concepts(&any, &one).unwrap().labels, vec![0, 0, 0]);
    }

    #[test]
    fn assign_zero_pixel() {
        let bank = ConceptBank {
            embeddings: vec![vec![1.0, 0.0]],
            source_labels: vec![0],
        };
        let fm = FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            assign_concepts(&fm, &bank),
            Err(Error::ZeroNormPixel { index: 1 })
        ));
    }

    #[test]
    fn fused_falls_back_to_nearest_on_cancellation() {
        // opposite patches cancel exactly at the midpoint pixel
        let fm = FeatureMap::new(1, 2, 1, vec![1.0, -1.0]).unwrap();
        let s = seg(1, 2, &[0, 1]);
        let bank = masked_smm(&fm, &s).unwrap();
        let out = upsample_and_assign(&fm, &s, &bank, 1, 3).unwrap();
        let nearest = nearest_upsample(&s, 1, 3);
        assert_eq!(out.labels[1], nearest.labels[1]);
        assert_eq!(out.labels, vec![0, 0, 1]);
    }

    #[test]
    fn nearest_line_and_identity() {
        let s = seg(1, 2, &[0, 1]);
        assert_eq!(nearest_upsample(&s, 1, 4).labels, vec![0, 0, 1, 1]);
        let s = seg(2, 3, &[0, 1, 2, 2, 1, 0]);
        assert_eq!(nearest_upsample(&s, 2, 3).labels, s.labels);
        // 2 → 3: centres at 1/6, 5/6 ... middle output sits exactly between
        assert_eq!(nearest_source(2, 3), vec![0, 0, 1]);
    }
}
