//! Patch affinity graph: clamped cosine similarity raised to an integer power.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensorio::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityOptions {
    /// Soft-thresholding exponent.
    pub alpha: u32,
    /// Clamp cosines to `[0, 1]` before exponentiation. When off, negative
    /// cosines are raised to `alpha` as they are.
    pub clamp: bool,
}

impl Default for AffinityOptions {
    fn default() -> Self {
        Self {
            alpha: 10,
            clamp: true,
        }
    }
}

/// Dense symmetric weight matrix with its degree vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    n: usize,
    weights: Vec<f64>,
    degrees: Vec<f64>,
    node_ids: Vec<usize>,
}

impl AffinityGraph {
    /// Wraps a row-major weight matrix. Degrees are computed here; node ids
    /// default to `0..n`. Symmetry is required but self-loops are taken as given.
    pub fn from_weights(n: usize, weights: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySubset);
        }
        if weights.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {n} nodes",
                weights.len()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                if weights[i * n + j] != weights[j * n + i] {
                    return Err(Error::InvalidParameter(format!(
                        "weights not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Self::assemble(n, weights, (0..n).collect())
    }

    fn assemble(n: usize, weights: Vec<f64>, node_ids: Vec<usize>) -> Result<Self> {
        let degrees: Vec<f64> = weights
            .chunks_exact(n)
            .map(|row| row.iter().sum())
            .collect();
        if let Some((index, &degree)) = degrees
            .iter()
            .enumerate()
            .find(|(_, &d)| !(d > 0.0 && d.is_finite()))
        {
            return Err(Error::NonPositiveDegree { index, degree });
        }
        Ok(Self {
            n,
            weights,
            degrees,
            node_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    /// Row-major `n × n` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Flat patch index of each node in the graph the affinity was built on.
    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    /// `y = W x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (yi, row) in y.iter_mut().zip(self.weights.chunks_exact(self.n)) {
            *yi = row.iter().zip(x).map(|(w, v)| w * v).sum();
        }
    }

    /// Restriction to `subset` (local indices), with degrees recomputed.
    pub fn subgraph(&self, subset: &[usize]) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::EmptySubset);
        }
        let mut seen = vec![false; self.n];
        for &i in subset {
            if i >= self.n {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.n,
                });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::DuplicateIndex(i));
            }
        }
        let m = subset.len();
        let mut weights = Vec::with_capacity(m * m);
        for &i in subset {
            let row = self.row(i);
            weights.extend(subset.iter().map(|&j| row[j]));
        }
        let node_ids = subset.iter().map(|&i| self.node_ids[i]).collect();
        Self::assemble(m, weights, node_ids)
    }
}

/// Builds the affinity graph with the default clamp.
pub fn build_affinity(fm: &FeatureMap, alpha: u32) -> Result<AffinityGraph> {
    build_affinity_with(
        fm,
        AffinityOptions {
            alpha,
            ..AffinityOptions::default()
        },
    )
}

pub fn build_affinity_with(fm: &FeatureMap, opts: AffinityOptions) -> Result<AffinityGraph> {
    if opts.alpha == 0 {
        return Err(Error::InvalidParameter("alpha must be >= 1".into()));
    }
    let n = fm.len();
    let dim = fm.dim();

    // Column j holds the unit-normalised embedding of patch j.
    let mut unit = DMatrix::<f64>::zeros(dim, n);
    for (j, patch) in fm.patches().enumerate() {
        let norm = patch
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormPatch { index: j });
        }
        for (dst, &v) in unit.column_mut(j).iter_mut().zip(patch) {
            *dst = f64::from(v) / norm;
        }
    }
    let gram = unit.transpose() * &unit;

    let alpha = opts.alpha as i32;
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        weights[i * n + i] = 1.0;
        for j in i + 1..n {
            // gram is column-major; (i, j) with i < j is the upper triangle
            let cos = gram[(i, j)].clamp(-1.0, 1.0);
            let base = if opts.clamp { cos.max(0.0) } else { cos };
            let w = base.powi(alpha);
            weights[i * n + j] = w;
            weights[j * n + i] = w;
        }
    }
    AffinityGraph::assemble(n, weights, (0..n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[&[f32]]) -> FeatureMap {
        let dim = rows[0].len();
        FeatureMap::new(1, rows.len(), dim, rows.concat()).unwrap()
    }

    #[test]
    fn identical_vectors_are_fully_connected() {
        for alpha in [1, 2, 10, 15] {
            let g = build_affinity(&fm(&[&[0.6, 0.8], &[0.6, 0.8]]), alpha).unwrap();
            assert_eq!(g.weights(), &[1.0, 1.0, 1.0, 1.0]);
            assert_eq!(g.degrees(), &[2.0, 2.0]);
        }
    }

    #[test]
    fn orthogonal_vectors_disconnect() {
        let g = build_affinity(&fm(&[&[1.0, 0.0], &[0.0, 3.0]]), 10).unwrap();
        assert_eq!(g.weights(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn soft_threshold_power() {
        // cos = 0.9 between (1, 0) and (0.9, sqrt(0.19))
        let y = (0.19f64).sqrt() as f32;
        let g = build_affinity(&fm(&[&[1.0, 0.0], &[0.9, y]]), 10).unwrap();
        let cos = 0.9f32 as f64 / ((0.9f32 as f64).powi(2) + (y as f64).powi(2)).sqrt();
        let expected = cos.powi(10);
        assert!((g.weight(0, 1) - expected).abs() < 1e-15);
        assert!((g.weight(0, 1) - 0.3486784401).abs() < 1e-6);
    }

    #[test]
    fn negative_cosine_clamped_unless_disabled() {
        let f = fm(&[&[1.0, 0.0], &[-1.0, 0.1]]);
        let g = build_affinity(&f, 2).unwrap();
        assert_eq!(g.weight(0, 1), 0.0);
        let raw = build_affinity_with(
            &f,
            AffinityOptions {
                alpha: 2,
                clamp: false,
            },
        )
        .unwrap();
        assert!(raw.weight(0, 1) > 0.9);
    }

    #[test]
    fn zero_patch_rejected() {
        let err = build_affinity(&fm(&[&[1.0, 0.0], &[0.0, 0.0]]), 10).unwrap_err();
        assert!(matches!(err, Error::ZeroNormPatch { index: 1 }));
    }

    #[test]
    fn subgraph_identity_and_singleton() {
        let g = build_affinity(&fm(&[&[1.0, 0.2], &[0.3, 1.0], &[1.0, 1.0]]), 3).unwrap();
        assert_eq!(g.subgraph(&[0, 1, 2]).unwrap(), g);
        let s = g.subgraph(&[1]).unwrap();
        assert_eq!(s.weights(), &[1.0]);
        assert_eq!(s.degrees(), &[1.0]);
        assert_eq!(s.node_ids(), &[1]);
    }

    #[test]
    fn subgraph_of_block_graph() {
        #[rustfmt::skip]
        let w = vec![
            1.0, 0.8, 0.1, 0.0,
            0.8, 1.0, 0.0, 0.2,
            0.1, 0.0, 1.0, 0.7,
            0.0, 0.2, 0.7, 1.0,
        ];
        let g = AffinityGraph::from_weights(4, w.clone()).unwrap();
        let a = g.subgraph(&[0, 1]).unwrap();
        let b = g.subgraph(&[2, 3]).unwrap();
        assert_eq!(a.weights(), &[1.0, 0.8, 0.8, 1.0]);
        assert_eq!(b.weights(), &[1.0, 0.7, 0.7, 1.0]);
        // degrees lose exactly the inter-block mass
        assert!((g.degrees()[0] - 0.1 - a.degrees()[0]).abs() < 1e-15);
        assert!((g.degrees()[1] - 0.2 - a.degrees()[1]).abs() < 1e-15);
        assert!((g.degrees()[2] - 0.1 - b.degrees()[0]).abs() < 1e-15);
        assert!((g.degrees()[3] - 0.2 - b.degrees()[1]).abs() < 1e-15);
        assert_eq!(b.node_ids(), &[2, 3]);
        // nested subgraphs keep original ids
        assert_eq!(b.subgraph(&[1]).unwrap().node_ids(), &[3]);
    }

    #[test]
    fn subgraph_errors() {
        let g = AffinityGraph::from_weights(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        assert!(matches!(g.subgraph(&[]), Err(Error::EmptySubset)));
        assert!(matches!(
            g.subgraph(&[2]),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert!(matches!(g.subgraph(&[0, 0]), Err(Error::DuplicateIndex(0))));
    }
}
