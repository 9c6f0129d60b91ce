//! Fixtures and reference implementations shared by the integration tests.
//! Everything here is written from the definitions, without calling into
//! the library's numerical code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specseg_core::{AffinityGraph, FeatureMap};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random symmetric weights in [0, 1] with unit diagonal; roughly `density`
/// of the off-diagonal entries are nonzero.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Vec<f64> {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        w[i * n + i] = 1.0;
        for j in 0..i {
            if rng.random::<f64>() < density {
                let v = rng.random::<f64>();
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
    }
    w
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> AffinityGraph {
    let density = rng.random_range(0.3..1.0);
    AffinityGraph::from_weights(n, random_weights(rng, n, density)).unwrap()
}

/// Graph whose components are the given sizes, dense inside, nothing across.
/// Returns the graph and the component of each node.
pub fn component_graph(rng: &mut ChaCha8Rng, sizes: &[usize]) -> (AffinityGraph, Vec<usize>) {
    let n: usize = sizes.iter().sum();
    let comp: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
        .collect();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        w[i * n + i] = 1.0;
        for j in 0..i {
            if comp[i] == comp[j] {
                let v = rng.random_range(0.2..1.0);
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
    }
    (AffinityGraph::from_weights(n, w).unwrap(), comp)
}

/// Cut over association, summed pair by pair straight from the weights.
pub fn brute_ncut(n: usize, w: &[f64], side: &[bool]) -> f64 {
    let (mut cut, mut assoc_a, mut assoc_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let wij = w[i * n + j];
            if side[i] {
                assoc_a += wij;
                if !side[j] {
                    cut += wij;
                }
            } else {
                assoc_b += wij;
            }
        }
    }
    cut / assoc_a + cut / assoc_b
}

/// Cyclic Jacobi rotations on a dense symmetric matrix. Returns ascending
/// eigenvalues and the matching eigenvectors as columns (row-major n×n).
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + new] = v[k * n + old];
        }
    }
    (values, vectors)
}

/// Reference solution of `(D − W) x = λ D x`: ascending values and
/// D-normalized vectors, via the symmetric normalized Laplacian.
pub fn reference_generalized(n: usize, w: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d: Vec<f64> = (0..n).map(|i| w[i * n..(i + 1) * n].iter().sum()).collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let lap = if i == j {
                d[i] - w[i * n + j]
            } else {
                -w[i * n + j]
            };
            l[i * n + j] = lap / (d[i] * d[j]).sqrt();
        }
    }
    let (values, v) = jacobi_eigen(&l, n);
    let vectors = (0..n)
        .map(|c| {
            let x: Vec<f64> = (0..n).map(|k| v[k * n + c] / d[k].sqrt()).collect();
            let norm = x
                .iter()
                .zip(&d)
                .map(|(xi, di)| di * xi * xi)
                .sum::<f64>()
                .sqrt();
            x.iter().map(|xi| xi / norm).collect()
        })
        .collect();
    (values, vectors)
}

/// `|xᵀ D y|` for D-normalized vectors: 1 when they span the same line.
pub fn d_alignment(d: &[f64], x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(d)
        .map(|((a, b), w)| a * b * w)
        .sum::<f64>()
        .abs()
}

/// Area under the ROC as the fraction of positive-negative pairs ranked
/// correctly, with ties counted as one half.
pub fn mann_whitney(scores: &[f64], targets: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !targets[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if targets[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else {
            return out;
        };
        let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).unwrap();
        p.swap(i, j);
        p[i + 1..].reverse();
    }
}

/// Two labelings describe the same partition.
pub fn same_partition<A: Copy + Eq + std::hash::Hash, B: Copy + Eq + std::hash::Hash>(
    a: &[A],
    b: &[B],
) -> bool {
    use std::collections::HashMap;
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter()
        .zip(b)
        .all(|(&x, &y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

/// Every block of `fine` sits inside one block of `coarse`.
pub fn refines(fine: &[u32], coarse: &[u32]) -> bool {
    let mut parent = std::collections::HashMap::new();
    fine.iter()
        .zip(coarse)
        .all(|(&f, &c)| *parent.entry(f).or_insert(c) == c)
}

/// Block features: patch `i` lives in block `labels[i]`, whose features
/// occupy their own `width`-channel slice, so blocks are exactly orthogonal.
/// Inside a block the vectors are a shared positive base plus small jitter.
pub fn planted_features(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    labels: &[usize],
    blocks: usize,
    width: usize,
    jitter: f32,
) -> FeatureMap {
    let bases: Vec<Vec<f32>> = (0..blocks)
        .map(|_| (0..width).map(|_| rng.random_range(0.5..1.0)).collect())
        .collect();
    let dim = blocks * width;
    let mut data = vec![0.0f32; h * w * dim];
    for (i, &b) in labels.iter().enumerate() {
        for c in 0..width {
            data[i * dim + b * width + c] = bases[b][c] + jitter * rng.random::<f32>();
        }
    }
    FeatureMap::new(h, w, dim, data).unwrap()
}

/// Random labels in `0..blocks` with every block holding at least `min_count` patches.
pub fn random_blocks(
    rng: &mut ChaCha8Rng,
    n: usize,
    blocks: usize,
    min_count: usize,
) -> Vec<usize> {
    loop {
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..blocks)).collect();
        if (0..blocks).all(|b| labels.iter().filter(|&&l| l == b).count() >= min_count) {
            return labels;
        }
    }
}
