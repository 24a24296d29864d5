//! Hessian-compensated weight quantization.
//!
//! Rows of the residual matrix are quantized one at a time in natural
//! order. After each row is rounded, the rounding error is pushed into the
//! not-yet-quantized rows, weighted by the upper Cholesky factor of the
//! inverse calibration Hessian `H = X̂ᵀX̂ + damp·mean(diag H)·I`. When the
//! calibration columns are orthogonal the Hessian is diagonal, every
//! propagation coefficient vanishes, and the output equals plain
//! round-to-nearest bit for bit.
//!
//! Scales are computed when a scope is first reached: per-group scales see
//! the error-compensated values accumulated so far, while per-tensor and
//! per-output-channel scales (whose scope starts at row 0) are computed
//! from the untouched input.

use crate::error::{Error, Result};
use crate::minifloat;
use crate::quant::{
    finalize_scale, pack_nibbles, Granularity, GroupAxis, QuantConfig, QuantizedTensor, ScaleDType,
};
use crate::tensor::Tensor;

/// Quantize `r_mat` (m×n) against calibration activations `x_hat_cal`
/// (b×m) with error propagation through the damped Hessian.
pub fn gptq_quantize_residual(
    r_mat: &Tensor,
    x_hat_cal: &Tensor,
    cfg: &QuantConfig,
    damping: f64,
) -> Result<QuantizedTensor> {
    r_mat.ensure_finite("gptq residual")?;
    x_hat_cal.ensure_finite("gptq calibration")?;
    cfg.validate()?;
    let (m, n) = r_mat.shape();
    if x_hat_cal.rows() == 0 {
        return Err(Error::EmptyCalibration);
    }
    if x_hat_cal.cols() != m {
        return Err(Error::DimensionMismatch {
            op: "gptq_quantize_residual",
            left_rows: x_hat_cal.rows(),
            left_cols: x_hat_cal.cols(),
            right_rows: m,
            right_cols: n,
        });
    }

    let hessian = damped_hessian(x_hat_cal, damping);
    let chol = cholesky_lower(&hessian, m)?;
    let hinv = invert_from_cholesky(&chol, m);
    // Upper factor U with Hinv = Uᵀ U; stored as the lower factor of Hinv,
    // so U[i][k] = lower[k][i].
    let hinv_lower = cholesky_lower(&hinv, m)?;

    let q_max = cfg.dtype.q_max();
    let mut work: Vec<f64> = r_mat.data().to_vec();

    let tensor_scale = if cfg.two_level_scale {
        let absmax = work.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let r = ScaleDType::Real32.round(absmax / (q_max * minifloat::FP8_E4M3_MAX));
        Some(if r == 0.0 { 1.0 } else { r })
    } else {
        None
    };
    let ts = tensor_scale.unwrap_or(1.0);

    let scale_count = cfg.granularity.scale_count(m, n);
    let mut scales = vec![0.0f64; scale_count];
    // Scopes covering all rows are fixed before any propagation.
    match cfg.granularity {
        Granularity::PerTensor => {
            let absmax = work.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
            scales[0] = finalize_scale(absmax, q_max, ts, cfg.scale_dtype);
        }
        Granularity::PerChannelOut => {
            for j in 0..n {
                let mut absmax = 0.0f64;
                for i in 0..m {
                    absmax = absmax.max(work[i * n + j].abs());
                }
                scales[j] = finalize_scale(absmax, q_max, ts, cfg.scale_dtype);
            }
        }
        _ => {}
    }

    let mut raw_codes = vec![0u8; m * n];
    let mut err_row = vec![0.0f64; n];

    for i in 0..m {
        // Scopes that begin at this row get their scales from the current
        // (error-compensated) values.
        match cfg.granularity {
            Granularity::PerToken => {
                let mut absmax = 0.0f64;
                for &x in &work[i * n..(i + 1) * n] {
                    absmax = absmax.max(x.abs());
                }
                scales[i] = finalize_scale(absmax, q_max, ts, cfg.scale_dtype);
            }
            Granularity::PerGroup {
                size,
                along: GroupAxis::Rows,
            } if i % size == 0 => {
                let hi = (i + size).min(m);
                let g = i / size;
                for j in 0..n {
                    let mut absmax = 0.0f64;
                    for row in i..hi {
                        absmax = absmax.max(work[row * n + j].abs());
                    }
                    scales[g * n + j] = finalize_scale(absmax, q_max, ts, cfg.scale_dtype);
                }
            }
            Granularity::PerGroup {
                size,
                along: GroupAxis::Cols,
            } => {
                let ngroups = n.div_ceil(size);
                for g in 0..ngroups {
                    let hi = ((g + 1) * size).min(n);
                    let mut absmax = 0.0f64;
                    for j in g * size..hi {
                        absmax = absmax.max(work[i * n + j].abs());
                    }
                    scales[i * ngroups + g] = finalize_scale(absmax, q_max, ts, cfg.scale_dtype);
                }
            }
            _ => {}
        }

        let d = hinv_lower[i * m + i];
        for j in 0..n {
            let s = scales[cfg.granularity.scale_index(m, n, i, j)];
            let x = work[i * n + j];
            let code = cfg.dtype.encode(x / (s * ts));
            raw_codes[i * n + j] = code;
            let q_val = cfg.dtype.decode(code) * s * ts;
            err_row[j] = (x - q_val) / d;
        }
        for k in (i + 1)..m {
            let c = hinv_lower[k * m + i];
            if c == 0.0 {
                continue;
            }
            let dst = &mut work[k * n..(k + 1) * n];
            for (w, &e) in dst.iter_mut().zip(&err_row) {
                *w -= e * c;
            }
        }
    }

    let codes = if cfg.dtype.code_bits() == 4 {
        pack_nibbles(&raw_codes)
    } else {
        raw_codes
    };
    QuantizedTensor::from_parts(codes, scales, tensor_scale, m, n, *cfg)
}

/// `X̂ᵀX̂ + damping·mean(diag)·I`, built symmetric by construction.
fn damped_hessian(x: &Tensor, damping: f64) -> Vec<f64> {
    let (b, m) = x.shape();
    let mut h = vec![0.0f64; m * m];
    for t in 0..b {
        let row = x.row(t);
        for i in 0..m {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            for j in i..m {
                h[i * m + j] += xi * row[j];
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            h[i * m + j] = h[j * m + i];
        }
    }
    let mean_diag = (0..m).map(|i| h[i * m + i]).sum::<f64>() / m as f64;
    let damp = damping * mean_diag;
    for i in 0..m {
        h[i * m + i] += damp;
    }
    h
}

/// Lower Cholesky factor of a symmetric positive-definite matrix stored
/// row-major. A non-positive pivot reports which row failed.
fn cholesky_lower(a: &[f64], m: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0f64; m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut sum = a[i * m + j];
            for k in 0..j {
                sum -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                if !sum.is_finite() || sum <= 0.0 {
                    return Err(Error::SingularHessian { pivot: i });
                }
                l[i * m + j] = sum.sqrt();
            } else {
                l[i * m + j] = sum / l[j * m + j];
            }
        }
    }
    Ok(l)
}

/// Inverse from the Cholesky factor, symmetrized to cancel the tiny
/// row/column asymmetry the two triangular solves introduce.
fn invert_from_cholesky(l: &[f64], m: usize) -> Vec<f64> {
    let mut inv = vec![0.0f64; m * m];
    let mut y = vec![0.0f64; m];
    for c in 0..m {
        // Forward solve L y = e_c.
        for i in 0..m {
            let mut sum = if i == c { 1.0 } else { 0.0 };
            for k in 0..i {
                sum -= l[i * m + k] * y[k];
            }
            y[i] = sum / l[i * m + i];
        }
        // Back solve Lᵀ z = y.
        for i in (0..m).rev() {
            let mut sum = y[i];
            for k in (i + 1)..m {
                sum -= l[k * m + i] * inv[k * m + c];
            }
            inv[i * m + c] = sum / l[i * m + i];
        }
    }
    for i in 0..m {
        for j in 0..i {
            let avg = 0.5 * (inv[i * m + j] + inv[j * m + i]);
            inv[i * m + j] = avg;
            inv[j * m + i] = avg;
        }
    }
    inv
}
