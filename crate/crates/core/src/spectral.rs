//! Generalized eigenproblem `(D − W) x = λ D x` of an affinity graph.
//!
//! Everything is solved on the symmetric normalized Laplacian
//! `L = I − D^{-1/2} W D^{-1/2}` and mapped back through `x = D^{-1/2} v`.
//! The trivial eigenvector `D^{1/2} 1` is known in closed form and deflated
//! instead of being computed. Small graphs use a dense symmetric
//! decomposition; larger ones a fully reorthogonalized Lanczos iteration with
//! locking, started from a deterministic vector.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::affinity::AffinityGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// Normalized so that `Σ d(i)·x_i² = 1`, largest-magnitude entry positive.
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Graphs with at most this many nodes use the dense solver.
    pub dense_limit: usize,
    /// Residual bound `‖(D−W)x − λDx‖_∞ ≤ tol · max(1, ‖Dx‖_∞)`.
    pub tolerance: f64,
    /// Iteration budget is `budget_factor · n` operator applications.
    pub budget_factor: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            dense_limit: 256,
            tolerance: 1e-8,
            budget_factor: 10,
        }
    }
}

impl SolverOptions {
    /// Options that send every graph through the iterative solver.
    pub fn iterative() -> Self {
        Self {
            dense_limit: 0,
            ..Self::default()
        }
    }
}

pub fn fiedler(g: &AffinityGraph) -> Result<EigenPair> {
    fiedler_with(g, &SolverOptions::default())
}

/// Eigenpair with the second-smallest generalized eigenvalue.
pub fn fiedler_with(g: &AffinityGraph, opts: &SolverOptions) -> Result<EigenPair> {
    if g.len() < 2 {
        return Err(Error::InvalidParameter(
            "fiedler vector needs at least 2 nodes".into(),
        ));
    }
    let mut pairs = smallest_eigenpairs_with(g, 2, opts)?;
    Ok(pairs.pop().expect("two pairs requested"))
}

pub fn smallest_eigenpairs(g: &AffinityGraph, k: usize) -> Result<Vec<EigenPair>> {
    smallest_eigenpairs_with(g, k, &SolverOptions::default())
}

/// The `k` smallest generalized eigenpairs, ascending.
pub fn smallest_eigenpairs_with(
    g: &AffinityGraph,
    k: usize,
    opts: &SolverOptions,
) -> Result<Vec<EigenPair>> {
    let n = g.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("k = {k} outside [1, {n}]")));
    }
    let op = NormalizedLaplacian::new(g);
    let mut sym = vec![(0.0, op.null.clone())];
    if k > 1 {
        let rest = if n <= opts.dense_limit {
            dense_pairs(&op, k - 1)
        } else {
            lanczos_pairs(&op, k - 1, opts)?
        };
        sym.extend(rest);
    }

    let mut out = Vec::with_capacity(k);
    for (value, v) in sym {
        let value = value.clamp(0.0, 2.0);
        let mut x: Vec<f64> = v.iter().zip(&op.inv_sqrt).map(|(a, s)| a * s).collect();
        normalize_generalized(&mut x, g.degrees());
        let residual = generalized_residual(g, value, &x);
        if residual > opts.tolerance {
            return Err(Error::ConvergenceFailure {
                iterations: 0,
                residual,
                tolerance: opts.tolerance,
            });
        }
        out.push(EigenPair { value, vector: x });
    }
    Ok(out)
}

/// `‖(D−W)x − λDx‖_∞ / max(1, ‖Dx‖_∞)`.
pub fn generalized_residual(g: &AffinityGraph, value: f64, x: &[f64]) -> f64 {
    let d = g.degrees();
    let mut wx = vec![0.0; x.len()];
    g.mul_vec(x, &mut wx);
    let mut worst = 0.0f64;
    let mut scale = 1.0f64;
    for i in 0..x.len() {
        let dx = d[i] * x[i];
        scale = scale.max(dx.abs());
        worst = worst.max((dx - wx[i] - value * dx).abs());
    }
    worst / scale
}

fn normalize_generalized(x: &mut [f64], degrees: &[f64]) {
    let norm = x
        .iter()
        .zip(degrees)
        .map(|(v, d)| d * v * v)
        .sum::<f64>()
        .sqrt();
    let mut pivot = 0;
    for i in 1..x.len() {
        if x[i].abs() > x[pivot].abs() {
            pivot = i;
        }
    }
    let scale = if x[pivot] < 0.0 {
        -1.0 / norm
    } else {
        1.0 / norm
    };
    x.iter_mut().for_each(|v| *v *= scale);
}

struct NormalizedLaplacian<'a> {
    graph: &'a AffinityGraph,
    inv_sqrt: Vec<f64>,
    /// Unit vector `D^{1/2} 1 / ‖D^{1/2} 1‖`, the eigenvalue-0 eigenvector.
    null: Vec<f64>,
    scratch: std::cell::RefCell<Vec<f64>>,
}

impl<'a> NormalizedLaplacian<'a> {
    fn new(graph: &'a AffinityGraph) -> Self {
        let d = graph.degrees();
        let inv_sqrt = d.iter().map(|v| 1.0 / v.sqrt()).collect();
        let total: f64 = d.iter().sum();
        let null = d.iter().map(|v| (v / total).sqrt()).collect();
        Self {
            graph,
            inv_sqrt,
            null,
            scratch: std::cell::RefCell::new(vec![0.0; graph.len()]),
        }
    }

    fn len(&self) -> usize {
        self.graph.len()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let mut t = self.scratch.borrow_mut();
        for ((ti, vi), s) in t.iter_mut().zip(v).zip(&self.inv_sqrt) {
            *ti = vi * s;
        }
        self.graph.mul_vec(&t, out);
        for ((o, vi), s) in out.iter_mut().zip(v).zip(&self.inv_sqrt) {
            *o = vi - s * *o;
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let s = &self.inv_sqrt;
        DMatrix::from_fn(n, n, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta - s[i] * self.graph.weight(i, j) * s[j]
        })
    }
}

/// Dense route: `L + 3·u uᵀ` moves the trivial eigenvalue above the
/// spectrum (all others lie in [0, 2]) so the ascending head is the wanted set.
fn dense_pairs(op: &NormalizedLaplacian, want: usize) -> Vec<(f64, Vec<f64>)> {
    let n = op.len();
    let u = &op.null;
    let mut m = op.dense();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += 3.0 * u[i] * u[j];
        }
    }
    // exact symmetry for the solver
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order
        .into_iter()
        .take(want)
        .map(|c| {
            (
                eig.eigenvalues[c],
                eig.eigenvectors.column(c).iter().copied().collect(),
            )
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn orthogonalize(w: &mut [f64], against: &[&[f64]]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for q in against {
            let c = dot(q, w);
            axpy(-c, q, w);
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Deterministic start vectors: an index ramp first, then quasi-periodic
/// sequences for restarts.
fn start_vector(n: usize, family: usize) -> Vec<f64> {
    if family == 0 {
        return (0..n).map(|i| (i + 1) as f64 / n as f64).collect();
    }
    let freq = 0.618_033_988_749_895 * family as f64 + 0.1;
    (0..n)
        .map(|i| ((i + 1) as f64 * freq).sin() + 1e-3 * (i + 1) as f64 / n as f64)
        .collect()
}

/// Iterative route with locking: solve on the complement of everything locked
/// so far, and merge until a pass finds nothing below the locked set.
fn lanczos_pairs(
    op: &NormalizedLaplacian,
    want: usize,
    opts: &SolverOptions,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let budget = opts.budget_factor.max(1) * op.len();
    let mut used = 0usize;
    let mut locked: Vec<(f64, Vec<f64>)> = Vec::new();
    for _pass in 0..want + 2 {
        let extra = lanczos_pass(op, want, opts, &locked, budget, &mut used)?;
        let Some(first) = extra.first() else { break };
        let ceiling = locked.last().map_or(f64::INFINITY, |p| p.0);
        let improves = locked.len() < want || first.0 < ceiling - 1e-10 * ceiling.max(1.0);
        if !improves {
            break;
        }
        locked.extend(extra);
        locked.sort_by(|a, b| a.0.total_cmp(&b.0));
        locked.truncate(want);
    }
    Ok(locked)
}

fn lanczos_pass(
    op: &NormalizedLaplacian,
    want: usize,
    opts: &SolverOptions,
    locked: &[(f64, Vec<f64>)],
    budget: usize,
    used: &mut usize,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = op.len();
    let deflate: Vec<&[f64]> = std::iter::once(op.null.as_slice())
        .chain(locked.iter().map(|p| p.1.as_slice()))
        .collect();
    let complement = n.saturating_sub(deflate.len());
    let want = want.min(complement);
    if want == 0 {
        return Ok(Vec::new());
    }

    let d_max = op.graph.degrees().iter().cloned().fold(0.0, f64::max);
    // Ritz estimate bound that implies the generalized residual bound
    let est_tol = 0.5 * opts.tolerance / d_max.sqrt();
    let breakdown = 1e-12;

    let mut family = 0;
    let mut q = next_start(n, &deflate, &[], &mut family).ok_or(Error::ConvergenceFailure {
        iterations: *used,
        residual: f64::INFINITY,
        tolerance: opts.tolerance,
    })?;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut best_residual = f64::INFINITY;
    let mut next_check = want;

    loop {
        basis.push(q);
        let j = basis.len() - 1;
        op.apply(&basis[j], &mut w);
        *used += 1;
        let a = dot(&basis[j], &w);
        axpy(-a, &basis[j], &mut w);
        if j > 0 {
            axpy(-betas[j - 1], &basis[j - 1], &mut w);
        }
        {
            let mut against = deflate.clone();
            against.extend(basis.iter().map(|v| v.as_slice()));
            orthogonalize(&mut w, &against);
        }
        alphas.push(a);
        let b = norm(&w);
        let m = basis.len();
        let exhausted = m >= complement;
        let broke = b <= breakdown;

        if m >= next_check || exhausted {
            next_check = m + (m / 10).max(4);
            let mut last_row = vec![0.0; m];
            last_row[m - 1] = 1.0;
            let mut rows = vec![last_row];
            let mut d = alphas.clone();
            tridiagonal_eigen(&mut d, &betas, &mut rows)?;
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&x, &y| d[x].total_cmp(&d[y]));
            let coupling = if broke || exhausted { 0.0 } else { b };
            let converged = order
                .iter()
                .take(want)
                .all(|&c| (coupling * rows[0][c]).abs() <= est_tol);
            if converged {
                let pairs = ritz_pairs(&alphas, &betas, &basis, want)?;
                let mut worst = 0.0f64;
                for (value, v) in &pairs {
                    worst = worst.max(symmetric_residual(op, *value, v));
                }
                best_residual = best_residual.min(worst);
                if worst <= opts.tolerance {
                    return Ok(pairs);
                }
            }
            if exhausted {
                return Err(Error::ConvergenceFailure {
                    iterations: *used,
                    residual: best_residual,
                    tolerance: opts.tolerance,
                });
            }
        }
        if *used >= budget {
            return Err(Error::ConvergenceFailure {
                iterations: *used,
                residual: best_residual,
                tolerance: opts.tolerance,
            });
        }
        if broke {
            // invariant subspace found: continue from a fresh direction
            betas.push(0.0);
            let Some(fresh) = next_start(n, &deflate, &basis, &mut family) else {
                return Err(Error::ConvergenceFailure {
                    iterations: *used,
                    residual: best_residual,
                    tolerance: opts.tolerance,
                });
            };
            q = fresh;
        } else {
            betas.push(b);
            q = w.iter().map(|v| v / b).collect();
        }
    }
}

fn next_start(
    n: usize,
    deflate: &[&[f64]],
    basis: &[Vec<f64>],
    family: &mut usize,
) -> Option<Vec<f64>> {
    let mut against: Vec<&[f64]> = deflate.to_vec();
    against.extend(basis.iter().map(|v| v.as_slice()));
    for _ in 0..64 {
        let mut v = start_vector(n, *family);
        *family += 1;
        let before = norm(&v);
        orthogonalize(&mut v, &against);
        let after = norm(&v);
        if after > 1e-8 * before {
            v.iter_mut().for_each(|x| *x /= after);
            return Some(v);
        }
    }
    None
}

fn ritz_pairs(
    alphas: &[f64],
    betas: &[f64],
    basis: &[Vec<f64>],
    want: usize,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let m = alphas.len();
    let n = basis[0].len();
    let mut rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut r = vec![0.0; m];
            r[i] = 1.0;
            r
        })
        .collect();
    let mut d = alphas.to_vec();
    tridiagonal_eigen(&mut d, &betas[..m - 1], &mut rows)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| d[x].total_cmp(&d[y]));
    Ok(order
        .into_iter()
        .take(want)
        .map(|c| {
            let mut v = vec![0.0; n];
            for (i, q) in basis.iter().enumerate() {
                axpy(rows[i][c], q, &mut v);
            }
            let len = norm(&v);
            v.iter_mut().for_each(|x| *x /= len);
            (d[c], v)
        })
        .collect())
}

fn symmetric_residual(op: &NormalizedLaplacian, value: f64, v: &[f64]) -> f64 {
    let x: Vec<f64> = v.iter().zip(&op.inv_sqrt).map(|(a, s)| a * s).collect();
    generalized_residual(op.graph, value.clamp(0.0, 2.0), &x)
}

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix
/// (`diag` overwritten by eigenvalues, unsorted). Each row in `rows` is
/// post-multiplied by the accumulated rotations, so passing identity rows
/// yields eigenvectors as columns and passing only the last unit row yields
/// the last components of all eigenvectors.
fn tridiagonal_eigen(diag: &mut [f64], off: &[f64], rows: &mut [Vec<f64>]) -> Result<()> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(&off[..n - 1]);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(Error::ConvergenceFailure {
                    iterations: iter,
                    residual: e[l].abs(),
                    tolerance: f64::EPSILON,
                });
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                for row in rows.iter_mut() {
                    let f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}
