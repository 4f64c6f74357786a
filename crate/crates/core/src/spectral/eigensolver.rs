//! Restarted block Krylov eigensolver for the smallest eigenpairs of a
//! positive semidefinite [`SymmetricOperator`].
//!
//! The search space is grown by applying the operator to the newest block
//! and fully reorthogonalizing (block classical Gram-Schmidt, two passes).
//! Ritz pairs come from the projection `H = Q^T A Q`, extended column by
//! column; on restart the wanted Ritz vectors are kept together with the
//! continuation block, which is the thick-restart / Krylov-Schur scheme.
//! Eigenpairs the operator knows in closed form are deflated up front.

use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen};
use rand::Rng as _;

use crate::error::{GarnetError, Result};
use crate::graph::SymmetricOperator;
use crate::seed::rng_from_seed;

use super::SpectralPair;

/// Relative norm below which an orthogonalized vector counts as dependent.
const BREAKDOWN: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenOptions {
    pub tol: f64,
    /// Maximum number of restart cycles; `None` means `50 * r`.
    pub max_iter: Option<usize>,
    pub seed: u64,
    pub block_size: usize,
    /// Search-space dimension; `None` picks `max(2r + 10, 24)` rounded to the block size.
    pub basis_size: Option<usize>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-8,
            max_iter: None,
            seed: 0,
            block_size: 2,
            basis_size: None,
        }
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Removes from `v` its components along the columns of `basis` (one pass).
fn project_once(v: &mut DVector<f64>, basis: DMatrixView<'_, f64>) {
    if basis.ncols() == 0 {
        return;
    }
    let c = basis.tr_mul(v);
    v.gemv(-1.0, &basis, &c, 1.0);
}

struct Workspace<'a, O: SymmetricOperator + ?Sized> {
    op: &'a O,
    /// Orthonormal closed-form eigenvectors, one per column.
    known: DMatrix<f64>,
    rng: crate::seed::Rng,
}

impl<O: SymmetricOperator + ?Sized> Workspace<'_, O> {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(x.len());
        self.op.apply(x.as_slice(), y.as_mut_slice());
        for _ in 0..2 {
            project_once(&mut y, self.known.columns(0, self.known.ncols()));
        }
        y
    }

    /// Orthogonalizes `v` against the known vectors, `q` and `block`, then
    /// normalizes it. `None` if nothing independent is left.
    ///
    /// Every pass sweeps all three sets; a pass over `q` alone would leak
    /// rounding error back into the known directions, and normalizing after
    /// heavy cancellation amplifies that error restart after restart.
    fn orthonormalize(
        &self,
        mut v: DVector<f64>,
        q: DMatrixView<'_, f64>,
        block: &[DVector<f64>],
    ) -> Option<DVector<f64>> {
        let before = v.norm();
        if before == 0.0 {
            return None;
        }
        let mut prev = before;
        for pass in 0..3 {
            project_once(&mut v, self.known.columns(0, self.known.ncols()));
            project_once(&mut v, q);
            for u in block {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
            let now = v.norm();
            if pass >= 1 && now > 0.5 * prev {
                break;
            }
            prev = now;
        }
        let after = v.norm();
        (after > BREAKDOWN * before).then(|| v / after)
    }

    /// Orthonormalizes `raw` against the known vectors, `q` and each other.
    /// Dependent directions are replaced with random ones; returns fewer
    /// vectors than requested only when the space is exhausted.
    fn orthonormal_block(&mut self, raw: Vec<DVector<f64>>, q: DMatrixView<'_, f64>) -> Vec<DVector<f64>> {
        let n = self.op.dim();
        let norms: Vec<f64> = raw.iter().map(|v| v.norm()).collect();
        // Two block passes against the known vectors and `q` read the basis
        // once per pass for the whole block.
        let mut b = DMatrix::from_columns(&raw);
        for _ in 0..2 {
            for basis in [self.known.columns(0, self.known.ncols()), q] {
                if basis.ncols() > 0 {
                    let c = basis.tr_mul(&b);
                    b.gemm(-1.0, &basis, &c, 1.0);
                }
            }
        }
        let mut block: Vec<DVector<f64>> = Vec::with_capacity(raw.len());
        for (j, &before) in norms.iter().enumerate() {
            let mut v = b.column(j).into_owned();
            for _ in 0..2 {
                for u in &block {
                    let c = u.dot(&v);
                    v.axpy(-c, u, 1.0);
                }
            }
            let after = v.norm();
            // Severe cancellation: redo this column with the careful path.
            let mut next = if before > 0.0 && after > 0.5 * b.column(j).norm() && after > BREAKDOWN * before {
                Some(v / after)
            } else {
                self.orthonormalize(raw[j].clone(), q, &block)
            };
            for _ in 0..3 {
                if next.is_some() {
                    break;
                }
                let random = DVector::from_fn(n, |_, _| self.rng.random::<f64>() - 0.5);
                next = self.orthonormalize(random, q, &block);
            }
            match next {
                Some(v) => block.push(v),
                None => break,
            }
        }
        block
    }
}

/// Sorted eigen-decomposition of a small symmetric matrix.
fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("finite Ritz values")
            .then(a.cmp(&b))
    });
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

struct Converged {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    restarts: usize,
}

fn solve_complement<O: SymmetricOperator + ?Sized>(
    ws: &mut Workspace<'_, O>,
    wanted: usize,
    complement_dim: usize,
    opts: &EigenOptions,
    max_iter: usize,
) -> Result<Converged> {
    let n = ws.op.dim();
    let b = opts.block_size.max(1).min(wanted);
    let default_m = (2 * wanted + 10).max(24).div_ceil(b) * b;
    let m = opts
        .basis_size
        .unwrap_or(default_m)
        .max(wanted + b)
        .min(complement_dim);
    // Keep enough Ritz vectors that whole blocks refill the basis.
    let keep0 = (wanted + (m - wanted) / 2).min(m.saturating_sub(b)).max(wanted);
    let keep = m.saturating_sub((m - keep0).div_ceil(b) * b).max(wanted);

    // Orthonormal basis, one vector per column; the first `len` are live.
    // `h` holds the projection Q^T A Q, extended as columns are appended.
    // `coupling` is N^T A Q_last for the continuation block N: with the
    // Krylov-Schur relation A Q = Q H + N coupling E_last^T, it gives every
    // Ritz residual without touching n-sized vectors.
    let cap = m + b;
    let mut q = DMatrix::<f64>::zeros(n, cap);
    let mut h = DMatrix::<f64>::zeros(cap, cap);
    let mut len = 0;
    let mut last_start = 0;
    let mut coupling = DMatrix::<f64>::zeros(0, 0);
    let mut next = ws.orthonormal_block(vec![DVector::zeros(n); b], q.columns(0, 0));
    let mut best = vec![f64::INFINITY; wanted];

    for cycle in 0..max_iter {
        // Grow the search space to at least m columns. Whole blocks are
        // always appended: dropping part of one breaks the Krylov relation.
        while len < m && !next.is_empty() {
            let first = len;
            let images: Vec<DVector<f64>> = next.iter().map(|v| ws.apply(v)).collect();
            for v in next.drain(..) {
                q.set_column(len, &v);
                len += 1;
            }
            let aq_new = DMatrix::from_columns(&images);
            let cross = q.columns(0, len).tr_mul(&aq_new);
            for j in 0..images.len() {
                for i in 0..first {
                    h[(i, first + j)] = cross[(i, j)];
                    h[(first + j, i)] = cross[(i, j)];
                }
                for i in 0..=j {
                    let v = 0.5 * (cross[(first + i, j)] + cross[(first + j, i)]);
                    h[(first + i, first + j)] = v;
                    h[(first + j, first + i)] = v;
                }
            }
            next = ws.orthonormal_block(images, q.columns(0, len));
            last_start = first;
            coupling = if next.is_empty() {
                DMatrix::zeros(0, len - first)
            } else {
                DMatrix::from_columns(&next).tr_mul(&aq_new)
            };
        }
        let exhausted = next.is_empty();

        let dim = len;
        let (theta, s) = sorted_eigen(h.view((0, 0), (dim, dim)).into_owned());
        let tail = s.rows(last_start, dim - last_start);
        let mut worst = 0.0f64;
        for (c, slot) in best.iter_mut().enumerate().take(wanted) {
            *slot = if coupling.nrows() == 0 {
                0.0
            } else {
                (&coupling * tail.column(c)).norm()
            };
            worst = worst.max(*slot);
        }
        if exhausted || worst <= opts.tol {
            let ys = q.columns(0, dim) * s.columns(0, wanted);
            let vectors: Vec<DVector<f64>> = (0..wanted).map(|c| ys.column(c).into_owned()).collect();
            // The estimate relies on the Krylov relation; confirm it directly.
            let mut true_worst = 0.0f64;
            for (c, y) in vectors.iter().enumerate() {
                let res = ws.apply(y) - y * theta[c];
                best[c] = res.norm();
                true_worst = true_worst.max(best[c]);
            }
            if exhausted || true_worst <= opts.tol {
                return Ok(Converged {
                    values: theta[..wanted].to_vec(),
                    vectors: vectors.into_iter().map(|v| v.iter().copied().collect()).collect(),
                    restarts: cycle,
                });
            }
        }

        // Thick restart: keep the leading Ritz vectors, continue from `next`.
        let ys = q.columns(0, dim) * s.columns(0, keep);
        q.columns_mut(0, keep).copy_from(&ys);
        if ws.known.ncols() > 0 {
            // Ritz vectors inherit rounding along the deflated directions.
            let mut kept = q.columns_mut(0, keep);
            let leak = ws.known.tr_mul(&kept);
            kept.gemm(-1.0, &ws.known, &leak, 1.0);
        }
        h.fill(0.0);
        for c in 0..keep {
            h[(c, c)] = theta[c];
        }
        len = keep;
        if next.is_empty() {
            next = ws.orthonormal_block(vec![DVector::zeros(n); b], q.columns(0, len));
        }
    }
    Err(GarnetError::NoConvergence {
        max_iter,
        worst_residual: best.iter().copied().fold(0.0, f64::max),
        residuals: best,
    })
}

/// The `r` smallest eigenpairs of a positive semidefinite operator.
pub fn smallest_eigenpairs<O>(op: &O, r: usize, opts: &EigenOptions) -> Result<SpectralPair>
where
    O: SymmetricOperator + ?Sized,
{
    let n = op.dim();
    if r == 0 || r >= n.max(1) {
        return Err(GarnetError::RankTooLarge { r, n });
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(GarnetError::InvalidConfig(format!(
            "eigensolver tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let max_iter = opts.max_iter.unwrap_or(50 * r).max(1);

    let mut known = op.known_eigenpairs();
    known.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite known eigenvalue"));
    let zeros = known.iter().filter(|(v, _)| *v <= 0.0).count();
    let complement_dim = n - known.len();
    let wanted = r.saturating_sub(zeros).min(complement_dim);

    let mut pairs: Vec<(f64, Vec<f64>)> = known;
    let mut restarts = 0;
    if wanted > 0 {
        let known_cols: Vec<DVector<f64>> =
            pairs.iter().map(|(_, v)| DVector::from_column_slice(v)).collect();
        let mut ws = Workspace {
            op,
            known: if known_cols.is_empty() {
                DMatrix::zeros(n, 0)
            } else {
                DMatrix::from_columns(&known_cols)
            },
            rng: rng_from_seed(opts.seed),
        };
        let found = solve_complement(&mut ws, wanted, complement_dim, opts, max_iter)?;
        restarts = found.restarts;
        pairs.extend(found.values.into_iter().zip(found.vectors));
    }
    // Stable: known pairs precede computed ones on exact ties.
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite eigenvalue"));
    pairs.truncate(r);

    let mut eigenvalues = Vec::with_capacity(r);
    let mut residual_norms = Vec::with_capacity(r);
    let mut eigenvectors = DMatrix::zeros(n, r);
    let mut y = vec![0.0; n];
    for (k, (lambda, mut v)) in pairs.into_iter().enumerate() {
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        fix_sign(&mut v);
        op.apply(&v, &mut y);
        axpy(-lambda, &v, &mut y);
        residual_norms.push(norm(&y));
        eigenvalues.push(lambda.max(0.0));
        eigenvectors.set_column(k, &nalgebra::DVector::from_vec(v));
    }
    let worst = residual_norms.iter().copied().fold(0.0, f64::max);
    if worst > opts.tol {
        return Err(GarnetError::NoConvergence {
            max_iter,
            worst_residual: worst,
            residuals: residual_norms,
        });
    }
    Ok(SpectralPair {
        eigenvalues,
        eigenvectors,
        residual_norms,
        restarts,
    })
}

/// Flips `v` so its largest-magnitude entry is positive (first index on ties).
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
