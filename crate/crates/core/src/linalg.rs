//! Deterministic singular value decomposition and rank-r truncation.
//!
//! The decomposition is a one-sided Jacobi iteration: columns of the input
//! are rotated pairwise in a fixed cyclic order until their mutual inner
//! products vanish, which makes the result independent of threading and
//! platform (only IEEE-754 arithmetic is involved). Accuracy is adequate
//! for the matrix sizes this crate targets (up to a few thousand per side).
//!
//! Conventions, chosen so frozen test files stay stable:
//! - singular values are sorted descending, ties keeping input column order;
//! - each left singular vector has its largest-magnitude entry positive,
//!   ties broken by lowest index;
//! - the returned `v` holds right singular vectors as rows, so that
//!   `input ≈ u · diag(s) · v`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Convergence threshold on the off-diagonal Gram mass, relative to the
/// squared Frobenius norm of the input.
const OFF_DIAG_THRESHOLD: f64 = 1e-12;
/// Maximum number of cyclic sweeps before giving up on further progress.
const MAX_SWEEPS: usize = 60;
/// Singular values at or below this fraction of the Frobenius norm are
/// treated as zero when forming left singular vectors.
const RANK_TOLERANCE: f64 = 1e-12;

/// Full SVD: `input ≈ u * diag(s) * v` with `u: m×k`, `s: k`, `v: k×n`,
/// `k = min(m, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub v: Tensor,
}

/// Rank-r factor pair `l1 * l2` with `l1: m×r`, `l2: r×n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankPair {
    pub l1: Tensor,
    pub l2: Tensor,
    pub rank: usize,
}

impl LowRankPair {
    /// The rank-0 pair for an m×n target: both factors empty, product zero.
    pub fn empty(m: usize, n: usize) -> Self {
        Self {
            l1: Tensor::zeros(m, 0),
            l2: Tensor::zeros(0, n),
            rank: 0,
        }
    }

    /// Dense product `l1 * l2` (m×n; zeros when rank is 0).
    pub fn product(&self) -> Tensor {
        if self.rank == 0 {
            return Tensor::zeros(self.l1.rows(), self.l2.cols());
        }
        self.l1.matmul(&self.l2).expect("factor shapes agree")
    }
}

/// Singular value decomposition of a finite 2-D tensor.
pub fn svd(a: &Tensor) -> Result<SvdResult> {
    a.ensure_finite("svd input")?;
    let (m, n) = a.shape();
    if m >= n {
        let (u_cols, s, v_cols) = jacobi_tall(a);
        let u = tensor_from_cols(m, &u_cols);
        let v = tensor_from_rows(n, &v_cols);
        Ok(apply_sign_convention(SvdResult { u, s, v }))
    } else {
        // Wide input: decompose the transpose and swap the factors.
        let at = a.transpose();
        let (u_cols, s, v_cols) = jacobi_tall(&at);
        let u = tensor_from_cols(m, &v_cols);
        let v = tensor_from_rows(n, &u_cols);
        Ok(apply_sign_convention(SvdResult { u, s, v }))
    }
}

/// Best rank-r approximation via SVD truncation, plus the exact residual
/// `a - l1*l2`. The residual norm equals `sqrt(sum of squared singular
/// values beyond r)` up to floating-point error.
pub fn truncated_svd(a: &Tensor, r: usize) -> Result<(LowRankPair, Tensor)> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if r > k {
        return Err(Error::RankOutOfRange { rank: r, max: k });
    }
    if r == 0 {
        a.ensure_finite("truncated_svd input")?;
        return Ok((LowRankPair::empty(m, n), a.clone()));
    }
    let full = svd(a)?;
    // l1 = U[:, :r] * diag(s[:r]), l2 = V[:r, :]
    let l1 = Tensor::from_fn(m, r, |i, j| full.u.get(i, j) * full.s[j]);
    let l2 = Tensor::from_fn(r, n, |i, j| full.v.get(i, j));
    let pair = LowRankPair { l1, l2, rank: r };
    let residual = a.sub(&pair.product())?;
    Ok((pair, residual))
}

/// One-sided Jacobi on a tall matrix (rows >= cols). Returns the left
/// singular vectors as columns, singular values descending, and the right
/// singular vectors as rows of length `cols`.
fn jacobi_tall(a: &Tensor) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let (m, n) = a.shape();
    // Working copy as column vectors; rotations then touch contiguous memory.
    let mut b: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let fro2: f64 = {
        let mut acc = 0.0;
        for i in 0..m {
            for &x in a.row(i) {
                acc += x * x;
            }
        }
        acc
    };

    if fro2 > 0.0 {
        for _sweep in 0..MAX_SWEEPS {
            let mut off2 = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    let (app, aqq, apq) = column_gram(&b[p], &b[q]);
                    off2 += apq * apq;
                    // Pairs already orthogonal at working precision are left
                    // alone; their total mass stays below the sweep threshold.
                    if apq == 0.0 || apq.abs() <= 1e-16 * (app * aqq).sqrt() {
                        continue;
                    }
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        1.0 / (tau - (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    rotate_pair(&mut b, p, q, c, s);
                    rotate_pair(&mut v, p, q, c, s);
                }
            }
            if off2.sqrt() <= OFF_DIAG_THRESHOLD * fro2 {
                break;
            }
        }
    }

    // Column norms are the singular values.
    let mut sigma: Vec<f64> = b
        .iter()
        .map(|col| {
            let mut acc = 0.0;
            for &x in col {
                acc += x * x;
            }
            acc.sqrt()
        })
        .collect();

    // Stable descending order; exact ties keep original column order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).expect("finite norms"));
    let b: Vec<Vec<f64>> = order.iter().map(|&j| b[j].clone()).collect();
    let v: Vec<Vec<f64>> = order.iter().map(|&j| v[j].clone()).collect();
    sigma = order.iter().map(|&j| sigma[j]).collect();

    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let zero_cut = sigma_max * RANK_TOLERANCE;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        if sigma[j] > zero_cut && sigma[j] > 0.0 {
            let inv = 1.0 / sigma[j];
            u_cols.push(b[j].iter().map(|&x| x * inv).collect());
        } else {
            let col = complete_orthonormal(&u_cols, &b, j, n, m, zero_cut, &sigma);
            u_cols.push(col);
        }
    }

    (u_cols, sigma, v)
}

/// Fused Gram entries of a column pair: (p·p, q·q, p·q) in one pass.
#[inline]
fn column_gram(p: &[f64], q: &[f64]) -> (f64, f64, f64) {
    let mut app = 0.0;
    let mut aqq = 0.0;
    let mut apq = 0.0;
    for (&x, &y) in p.iter().zip(q) {
        app += x * x;
        aqq += y * y;
        apq += x * y;
    }
    (app, aqq, apq)
}

#[inline]
fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    debug_assert!(p < q);
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Deterministic replacement for a left singular vector whose singular value
/// is numerically zero: the canonical basis vector least represented by the
/// existing columns, orthogonalized twice and normalized. Ties go to the
/// lowest index. The associated singular value is negligible, so swapping
/// the direction does not perturb the reconstruction.
fn complete_orthonormal(
    u_done: &[Vec<f64>],
    b: &[Vec<f64>],
    j: usize,
    n: usize,
    m: usize,
    zero_cut: f64,
    sigma: &[f64],
) -> Vec<f64> {
    // Columns after j that are nonzero still carry meaningful directions and
    // must be respected; include their normalized forms in the projection.
    let mut reference: Vec<Vec<f64>> = u_done.to_vec();
    for idx in (j + 1)..n {
        if sigma[idx] > zero_cut && sigma[idx] > 0.0 {
            let inv = 1.0 / sigma[idx];
            reference.push(b[idx].iter().map(|&x| x * inv).collect());
        }
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for c in 0..m {
        let mut w = vec![0.0; m];
        w[c] = 1.0;
        project_out(&mut w, &reference);
        let norm2: f64 = w.iter().map(|&x| x * x).sum();
        if best.as_ref().is_none_or(|(bn, _)| norm2 > *bn) {
            best = Some((norm2, w));
        }
    }
    let (_, mut w) = best.expect("m >= 1");
    // Second pass tightens orthogonality lost to cancellation.
    project_out(&mut w, &reference);
    let norm = w.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut w {
            *x /= norm;
        }
    }
    w
}

fn project_out(w: &mut [f64], reference: &[Vec<f64>]) {
    for u in reference {
        let dot: f64 = w.iter().zip(u).map(|(&a, &b)| a * b).sum();
        for (x, &ux) in w.iter_mut().zip(u) {
            *x -= dot * ux;
        }
    }
}

fn tensor_from_cols(rows: usize, cols: &[Vec<f64>]) -> Tensor {
    Tensor::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

fn tensor_from_rows(cols: usize, rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Flip each left singular vector so its largest-magnitude entry (lowest
/// index on ties) is positive, mirroring the flip onto the matching row
/// of `v` so the product is unchanged.
fn apply_sign_convention(mut r: SvdResult) -> SvdResult {
    let (m, k) = r.u.shape();
    let n = r.v.cols();
    for j in 0..k {
        let mut best_idx = 0;
        let mut best_abs = -1.0;
        for i in 0..m {
            let a = r.u.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best_idx = i;
            }
        }
        if r.u.get(best_idx, j) < 0.0 {
            for i in 0..m {
                let x = r.u.get(i, j);
                r.u.set(i, j, -x);
            }
            for c in 0..n {
                let x = r.v.get(j, c);
                r.v.set(j, c, -x);
            }
        }
    }
    r
}
