//! Pixel-adaptive refinement of label maps.
//!
//! Labels become one-hot probabilities that are repeatedly averaged over a
//! dilated 8-neighbourhood. Each neighbour is weighted by a softmax over
//! colour affinities `−(I_c(i) − I_c(j))² / (σ_c(i)² + 1e-8)` (averaged over
//! channels), where `σ_c(i)` is the channel's standard deviation over the
//! neighbourhood, so mass flows along colour-uniform regions and stops at
//! edges.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HiResSegmentation;
use crate::error::{Error, Result};
use crate::tensorio::ColorImage;

const OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamrParams {
    pub iterations: usize,
    pub dilations: Vec<usize>,
}

impl Default for PamrParams {
    fn default() -> Self {
        Self {
            iterations: 10,
            dilations: vec![1, 2, 4, 8, 12, 24],
        }
    }
}

/// Stepwise refiner; [`pamr_refine`] runs it to completion.
pub struct PamrRefiner<'a> {
    image: &'a ColorImage,
    offsets: Vec<(isize, isize)>,
    num_labels: usize,
    probs: Vec<f64>,
    next: Vec<f64>,
}

impl<'a> PamrRefiner<'a> {
    pub fn new(
        image: &'a ColorImage,
        seg: &HiResSegmentation,
        params: &PamrParams,
    ) -> Result<Self> {
        if image.height != seg.height || image.width != seg.width {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} vs segmentation {}x{}",
                image.height, image.width, seg.height, seg.width
            )));
        }
        if params.dilations.contains(&0) {
            return Err(Error::InvalidParameter("dilation 0".into()));
        }
        let k = seg.num_segments.max(1);
        let mut probs = vec![0.0; seg.labels.len() * k];
        for (i, &l) in seg.labels.iter().enumerate() {
            if l as usize >= k {
                return Err(Error::InvalidParameter(format!("label {l} >= {k}")));
            }
            probs[i * k + l as usize] = 1.0;
        }
        let offsets = params
            .dilations
            .iter()
            .flat_map(|&d| {
                let d = d as isize;
                OFFSETS.iter().map(move |&(dy, dx)| (dy * d, dx * d))
            })
            .collect();
        Ok(Self {
            image,
            offsets,
            num_labels: k,
            next: probs.clone(),
            probs,
        })
    }

    /// Row-major `pixels × labels` probabilities.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn step(&mut self) {
        let (h, w, k) = (self.image.height, self.image.width, self.num_labels);
        let image = self.image;
        let offsets = &self.offsets;
        let probs = &self.probs;
        self.next
            .par_chunks_mut(w * k)
            .enumerate()
            .for_each(|(y, out_row)| {
                let mut neighbours: Vec<usize> = Vec::with_capacity(offsets.len());
                let mut logits: Vec<f64> = Vec::with_capacity(offsets.len());
                for x in 0..w {
                    let i = y * w + x;
                    neighbours.clear();
                    for &(dy, dx) in offsets {
                        let (ny, nx) = (y as isize + dy, x as isize + dx);
                        if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                            neighbours.push(ny as usize * w + nx as usize);
                        }
                    }
                    let out = &mut out_row[x * k..(x + 1) * k];
                    if neighbours.is_empty() {
                        out.copy_from_slice(&probs[i * k..(i + 1) * k]);
                        continue;
                    }
                    local_weights(image, i, &neighbours, &mut logits);
                    out.iter_mut().for_each(|v| *v = 0.0);
                    for (&j, &wt) in neighbours.iter().zip(&logits) {
                        out.iter_mut()
                            .zip(&probs[j * k..(j + 1) * k])
                            .for_each(|(o, p)| *o += wt * p);
                    }
                }
            });
        std::mem::swap(&mut self.probs, &mut self.next);
    }

    /// Arg-max label per pixel, smaller label on ties.
    pub fn labels(&self) -> Vec<u32> {
        self.probs
            .chunks_exact(self.num_labels)
            .map(|p| {
                let mut best = 0;
                for (l, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = l;
                    }
                }
                best as u32
            })
            .collect()
    }
}

/// Softmax neighbour weights of pixel `i`, written into `out`.
fn local_weights(image: &ColorImage, i: usize, neighbours: &[usize], out: &mut Vec<f64>) {
    let m = neighbours.len() as f64;
    let centre = image.pixel(i);
    let mut inv_var = [0.0; 3];
    for (c, iv) in inv_var.iter_mut().enumerate() {
        let mean = neighbours.iter().map(|&j| image.pixel(j)[c]).sum::<f64>() / m;
        let var = neighbours
            .iter()
            .map(|&j| (image.pixel(j)[c] - mean).powi(2))
            .sum::<f64>()
            / m;
        *iv = 1.0 / (var + 1e-8);
    }
    out.clear();
    out.extend(neighbours.iter().map(|&j| {
        let p = image.pixel(j);
        (0..3)
            .map(|c| -(centre[c] - p[c]).powi(2) * inv_var[c])
            .sum::<f64>()
            / 3.0
    }));
    let top = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = (*v - top).exp();
        total += *v;
    }
    out.iter_mut().for_each(|v| *v /= total);
}

pub fn pamr_refine(
    image: &ColorImage,
    seg: &HiResSegmentation,
    params: &PamrParams,
) -> Result<HiResSegmentation> {
    let mut refiner = PamrRefiner::new(image, seg, params)?;
    for _ in 0..params.iterations {
        refiner.step();
    }
    Ok(HiResSegmentation {
        height: seg.height,
        width: seg.width,
        labels: refiner.labels(),
        num_segments: seg.num_segments,
    })
}
