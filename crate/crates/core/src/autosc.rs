//! Spectral-clustering baselines: eigen-gap model selection with CPQR k-way
//! assignment, and k-means on normalized features.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::build_affinity;
use crate::error::{Error, Result};
use crate::ncut::SegmentationMap;
use crate::spectral::{smallest_eigenpairs_with, EigenPair, SolverOptions};
use crate::tensorio::FeatureMap;

pub const DEFAULT_ALPHAS: [u32; 4] = [1, 5, 10, 15];
pub const DEFAULT_K_MAX: usize = 32;
const GAP_EPS: f64 = 1e-12;
/// Gaps closer than this count as tied; rounding in near-zero eigenvalues
/// otherwise decides between candidates that are equal in exact arithmetic.
const GAP_TIE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenGapReport {
    pub alpha_chosen: u32,
    pub k_chosen: usize,
    /// `gaps[k - 1]` is the relative gap after the k-th eigenvalue, for the chosen alpha.
    pub gaps: Vec<f64>,
    /// Ascending eigenvalues per candidate alpha.
    pub spectra: Vec<(u32, Vec<f64>)>,
}

/// `gap(k) = (λ_{k+1} − λ_k) / (λ_{k+1} + ε)` for `k = 1..=k_max`; returns
/// the arg-max (smallest k on ties, within 1e-9) and all gaps.
pub fn relative_eigen_gap(eigenvalues: &[f64], k_max: usize) -> Result<(usize, Vec<f64>)> {
    if k_max == 0 || eigenvalues.len() < k_max + 1 {
        return Err(Error::TooFewEigenvalues {
            needed: k_max + 1,
            got: eigenvalues.len(),
        });
    }
    let gaps: Vec<f64> = eigenvalues
        .windows(2)
        .take(k_max)
        .map(|w| (w[1] - w[0]) / (w[1] + GAP_EPS))
        .collect();
    let mut best = 0;
    for (i, &g) in gaps.iter().enumerate() {
        if g > gaps[best] + GAP_TIE {
            best = i;
        }
    }
    Ok((best + 1, gaps))
}

struct Selection {
    report: EigenGapReport,
    pairs: Vec<EigenPair>,
}

struct Candidate {
    gap: f64,
    alpha: u32,
    k: usize,
    gaps: Vec<f64>,
    pairs: Vec<EigenPair>,
}

fn select(fm: &FeatureMap, alpha_set: &[u32], k_max: usize) -> Result<Selection> {
    if alpha_set.is_empty() {
        return Err(Error::InvalidParameter("empty alpha set".into()));
    }
    let n = fm.len();
    let mut alphas = alpha_set.to_vec();
    alphas.sort_unstable();
    alphas.dedup();
    let k_max = k_max.min(n.saturating_sub(1));

    let mut spectra = Vec::with_capacity(alphas.len());
    let mut best: Option<Candidate> = None;
    for &alpha in &alphas {
        let g = build_affinity(fm, alpha)?;
        if k_max == 0 {
            // single patch
            let pairs = smallest_eigenpairs_with(&g, 1, &SolverOptions::default())?;
            spectra.push((alpha, vec![pairs[0].value]));
            if best.is_none() {
                best = Some(Candidate {
                    gap: 0.0,
                    alpha,
                    k: 1,
                    gaps: Vec::new(),
                    pairs,
                });
            }
            continue;
        }
        let pairs = smallest_eigenpairs_with(&g, k_max + 1, &SolverOptions::default())?;
        let values: Vec<f64> = pairs.iter().map(|p| p.value).collect();
        let (k, gaps) = relative_eigen_gap(&values, k_max)?;
        let top = gaps[k - 1];
        spectra.push((alpha, values));
        if best.as_ref().is_none_or(|b| top > b.gap + GAP_TIE) {
            best = Some(Candidate {
                gap: top,
                alpha,
                k,
                gaps,
                pairs,
            });
        }
    }
    let best = best.expect("alpha set is non-empty");
    Ok(Selection {
        report: EigenGapReport {
            alpha_chosen: best.alpha,
            k_chosen: best.k,
            gaps: best.gaps,
            spectra,
        },
        pairs: best.pairs,
    })
}

/// Picks the `(alpha, k)` pair with the largest relative eigen-gap; ties go
/// to the smaller alpha, then the smaller k.
pub fn select_alpha(fm: &FeatureMap, alpha_set: &[u32], k_max: usize) -> Result<EigenGapReport> {
    Ok(select(fm, alpha_set, k_max)?.report)
}

/// Column-pivoted QR anchor selection on the rows of `vectors` (n × k), then
/// `label(i) = argmax_j |(U U_C^{-1})_{ij}|`. Labels are renumbered by first
/// occurrence.
pub fn cpqr_kway(vectors: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, k) = vectors.shape();
    if k == 0 || n == 0 {
        return Err(Error::InvalidParameter("empty eigenvector block".into()));
    }
    if k > n {
        return Err(Error::SingularAnchors);
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }

    // Greedy pivoting on residual row norms is exactly the CPQR pivot order of Uᵀ.
    let mut residual: Vec<Vec<f64>> = (0..n)
        .map(|i| vectors.row(i).iter().copied().collect())
        .collect();
    let scale = residual
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max)
        .sqrt();
    let mut anchors = Vec::with_capacity(k);
    for _ in 0..k {
        let mut pivot = 0;
        let mut pivot_norm = -1.0;
        for (i, r) in residual.iter().enumerate() {
            let nrm = r.iter().map(|v| v * v).sum::<f64>();
            if nrm > pivot_norm {
                pivot = i;
                pivot_norm = nrm;
            }
        }
        let pivot_norm = pivot_norm.sqrt();
        if pivot_norm <= 1e-10 * scale {
            return Err(Error::SingularAnchors);
        }
        anchors.push(pivot);
        let q: Vec<f64> = residual[pivot].iter().map(|v| v / pivot_norm).collect();
        for r in residual.iter_mut() {
            let c: f64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(&q).for_each(|(a, b)| *a -= c * b);
        }
    }

    let anchor_block = DMatrix::from_fn(k, k, |r, c| vectors[(anchors[r], c)]);
    let inverse = anchor_block.try_inverse().ok_or(Error::SingularAnchors)?;
    let mixed = vectors * inverse;
    let raw: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = 0;
            for j in 1..k {
                if mixed[(i, j)].abs() > mixed[(i, best)].abs() {
                    best = j;
                }
            }
            best
        })
        .collect();
    Ok(renumber(&raw))
}

fn renumber(raw: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    raw.iter()
        .map(|r| {
            let next = map.len();
            *map.entry(*r).or_insert(next)
        })
        .collect()
}

/// Eigen-gap model selection followed by CPQR assignment.
pub fn autosc_segment(
    fm: &FeatureMap,
    alpha_set: &[u32],
    k_max: usize,
) -> Result<(SegmentationMap, EigenGapReport)> {
    let Selection { report, pairs } = select(fm, alpha_set, k_max)?;
    let k = report.k_chosen;
    let n = fm.len();
    let block = DMatrix::from_fn(n, k, |i, j| pairs[j].vector[i]);
    let labels = cpqr_kway(&block)?;
    let seg = SegmentationMap::from_raw(fm.height(), fm.width(), &labels)?;
    Ok((seg, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Renumbered by first occurrence.
    pub labels: Vec<usize>,
    /// Centroids in the original cluster order (before renumbering).
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// shift drops below 1e-6 or 100 iterations pass.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.push(points[first].clone());
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just past the last positive entry
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            chosen.iter().position(|&c| !c).unwrap()
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[pick]));
        }
    }

    let dim = points[0].len();
    let mut assignment = vec![0usize; n];
    let mut inertia_history = Vec::<f64>::new();
    let mut iterations = 0;
    loop {
        let mut inertia = 0.0;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            *a = c;
            inertia += d;
        }
        if let Some(&prev) = inertia_history.last() {
            debug_assert!(
                inertia <= prev + 1e-9 * prev.max(1.0),
                "inertia rose from {prev} to {inertia}"
            );
        }
        inertia_history.push(inertia);
        if iterations >= 100 {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&updated, &centroids[c]).sqrt());
            centroids[c] = updated;
        }
        if shift < 1e-6 {
            // final assignment against the settled centroids
            let mut inertia = 0.0;
            for (a, p) in assignment.iter_mut().zip(points) {
                let (c, d) = nearest(p, &centroids);
                *a = c;
                inertia += d;
            }
            inertia_history.push(inertia);
            break;
        }
    }
    Ok(KMeansFit {
        labels: renumber(&assignment),
        centroids,
        inertia_history,
        iterations,
    })
}

/// k-means on L2-normalized patch embeddings.
pub fn kmeans_cluster(fm: &FeatureMap, k: usize, seed: u64) -> Result<SegmentationMap> {
    let points = normalized_patches(fm)?;
    let fit = kmeans(&points, k, seed)?;
    SegmentationMap::from_raw(fm.height(), fm.width(), &fit.labels)
}

pub fn normalized_patches(fm: &FeatureMap) -> Result<Vec<Vec<f64>>> {
    fm.patches()
        .enumerate()
        .map(|(i, p)| {
            let norm = p.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNormPatch { index: i });
            }
            Ok(p.iter().map(|&v| f64::from(v) / norm).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_on_triple_zero() {
        let (k, gaps) = relative_eigen_gap(&[0.0, 0.0, 0.0, 0.8, 0.9], 4).unwrap();
        assert_eq!(k, 3);
        assert_eq!(gaps[0], 0.0);
        assert_eq!(gaps[1], 0.0);
        assert!((gaps[2] - 1.0).abs() < 1e-11);
        assert!((gaps[3] - 0.1 / 0.9).abs() < 1e-11);
    }

    #[test]
    fn gap_prefers_first_for_even_spacing() {
        let (k, gaps) = relative_eigen_gap(&[0.0, 0.5, 1.0, 1.5], 3).unwrap();
        assert_eq!(k, 1);
        assert!((gaps[0] - 1.0).abs() < 1e-11);
        assert!((gaps[1] - 0.5).abs() < 1e-11);
        assert!((gaps[2] - 1.0 / 3.0).abs() < 1e-11);

        let spectrum: Vec<f64> = (0..10).map(|i| 0.3 + 0.1 * i as f64).collect();
        let (k, gaps) = relative_eigen_gap(&spectrum, 9).unwrap();
        assert_eq!(k, 1);
        assert!(gaps.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn gap_needs_enough_values() {
        assert!(matches!(
            relative_eigen_gap(&[0.0, 1.0], 2),
            Err(Error::TooFewEigenvalues { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn cpqr_single_column() {
        let u = DMatrix::from_element(5, 1, 0.4);
        assert_eq!(cpqr_kway(&u).unwrap(), vec![0; 5]);
    }

    #[test]
    fn cpqr_indicators() {
        let comp = [2, 0, 0, 1, 2, 1, 0];
        let u = DMatrix::from_fn(7, 3, |i, j| if comp[i] == j { 1.0 } else { 0.0 });
        assert_eq!(cpqr_kway(&u).unwrap(), vec![0, 1, 1, 2, 0, 2, 1]);
    }

    #[test]
    fn cpqr_rejects_rank_deficiency() {
        let u = DMatrix::from_fn(6, 2, |_, j| if j == 0 { 1.0 } else { 2.0 });
        assert!(matches!(cpqr_kway(&u), Err(Error::SingularAnchors)));
    }

    #[test]
    fn kmeans_k_equals_n() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let fit = kmeans(&pts, 6, 3).unwrap();
        assert_eq!(fit.labels, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(fit.inertia(), 0.0);
    }

    #[test]
    fn kmeans_single_cluster_mean() {
        let fm = FeatureMap::new(1, 3, 2, vec![1.0, 0.0, 0.0, 2.0, 3.0, 3.0]).unwrap();
        let pts = normalized_patches(&fm).unwrap();
        let fit = kmeans(&pts, 1, 0).unwrap();
        assert_eq!(fit.labels, vec![0, 0, 0]);
        let h = 0.5f64.sqrt();
        let mean = [(1.0 + 0.0 + h) / 3.0, (0.0 + 1.0 + h) / 3.0];
        assert!((fit.centroids[0][0] - mean[0]).abs() < 1e-12);
        assert!((fit.centroids[0][1] - mean[1]).abs() < 1e-12);
        assert_eq!(kmeans_cluster(&fm, 1, 0).unwrap().num_segments, 1);
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let pts = vec![vec![0.0]; 3];
        assert!(matches!(
            kmeans(&pts, 4, 0),
            Err(Error::KTooLarge { k: 4, n: 3 })
        ));
        assert!(matches!(kmeans(&pts, 0, 0), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn kmeans_duplicate_points_seed_distinct_indices() {
        let pts = vec![vec![1.0, 0.0]; 4];
        let fit = kmeans(&pts, 3, 9).unwrap();
        assert_eq!(fit.inertia(), 0.0);
    }
}
