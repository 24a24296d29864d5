//! Error metrics, numerical checks of the two error bounds, singular-value
//! spectrum reports, and the six-scheme comparison ladder.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::pipeline::{self, AlphaChoice, CalibrationSet, QuantizedLinear, SvdquantOptions};
use crate::quant::{fake_quant, QuantConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Layer output error of one quantization scheme plus the four norms that
/// bound it: `||X||_F`, `||W - Q(W)||_F`, `||X - Q(X)||_F`, `||W||_F`,
/// evaluated on the (activation, weight) pair the scheme actually
/// quantizes (the smoothed pair and the residual where applicable).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub scheme: String,
    pub e: f64,
    pub relative_e: f64,
    pub x_norm: f64,
    pub w_quant_err: f64,
    pub x_quant_err: f64,
    pub w_norm: f64,
}

/// Output error of direct fake-quantized matmul:
/// `E = ||X W - Q(X) Q(W)||_F`.
pub fn layer_error(
    x: &Tensor,
    w: &Tensor,
    act_cfg: Option<&QuantConfig>,
    weight_cfg: &QuantConfig,
) -> Result<ErrorReport> {
    let xq = match act_cfg {
        Some(c) => fake_quant(x, c)?,
        None => x.clone(),
    };
    let wq = fake_quant(w, weight_cfg)?;
    let reference = x.matmul(w)?;
    let e = reference.sub(&xq.matmul(&wq)?)?.fro_norm();
    Ok(report_from_parts("naive-rtn", e, &reference, x, w, &xq, &wq))
}

fn report_from_parts(
    scheme: &str,
    e: f64,
    reference: &Tensor,
    x: &Tensor,
    w: &Tensor,
    xq: &Tensor,
    wq: &Tensor,
) -> ErrorReport {
    let ref_norm = reference.fro_norm();
    ErrorReport {
        scheme: scheme.to_string(),
        e,
        relative_e: if ref_norm > 0.0 { e / ref_norm } else { 0.0 },
        x_norm: x.fro_norm(),
        w_quant_err: w.sub(wq).map(|d| d.fro_norm()).unwrap_or(f64::NAN),
        x_quant_err: x.sub(xq).map(|d| d.fro_norm()).unwrap_or(f64::NAN),
        w_norm: w.fro_norm(),
    }
}

/// Both sides of the error-decomposition inequality
/// `E(X, W) <= ||X||·||W - Q(W)|| + ||X - Q(X)||·(||W|| + ||W - Q(W)||)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop41Check {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn check_prop41(
    x: &Tensor,
    w: &Tensor,
    act_cfg: Option<&QuantConfig>,
    weight_cfg: &QuantConfig,
) -> Result<Prop41Check> {
    let r = layer_error(x, w, act_cfg, weight_cfg)?;
    let lhs = r.e;
    let rhs = r.x_norm * r.w_quant_err + r.x_quant_err * (r.w_norm + r.w_quant_err);
    Ok(Prop41Check {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9 * rhs,
    })
}

/// Base of the logarithm in the Gaussian regularity constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogBase {
    Natural,
    Two,
    Ten,
}

impl LogBase {
    fn log(&self, x: f64) -> f64 {
        match self {
            Self::Natural => x.ln(),
            Self::Two => x.log2(),
            Self::Ten => x.log10(),
        }
    }
}

/// Monte-Carlo estimate of the quantization error bound for Gaussian
/// tensors, plus the regularity sub-inequality `E[max|R|] <= c·E[||R||_F]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop42Check {
    pub mean_quant_err: f64,
    pub bound: f64,
    pub c: f64,
    pub holds: bool,
    pub regularity_lhs: f64,
    pub regularity_rhs: f64,
    pub regularity_holds: bool,
}

/// Estimate `E[||R - Q(R)||_F]` against `(c·sqrt(size)/q_max)·E[||R||_F]`
/// for i.i.d. standard-normal `R` of `size` elements under per-tensor
/// symmetric quantization (uniform lattice with the given `q_max`), with
/// `c = sqrt(log(size)·pi / size)`.
///
/// Trials run in parallel on substreams derived from `master_seed`, so the
/// estimate does not depend on the degree of parallelism. The check passes
/// when the left estimate is below the right one inflated by three relative
/// standard errors.
pub fn check_prop42_gaussian(
    size: usize,
    q_max: f64,
    trials: usize,
    master_seed: u64,
    log_base: LogBase,
) -> Result<Prop42Check> {
    if size < 2 {
        return Err(Error::InvalidParam {
            what: "size",
            requirement: "at least 2",
        });
    }
    if trials < 100 {
        return Err(Error::InvalidParam {
            what: "trials",
            requirement: "at least 100",
        });
    }
    if !q_max.is_finite() || q_max <= 0.0 {
        return Err(Error::InvalidParam {
            what: "q_max",
            requirement: "positive",
        });
    }

    // Per trial: (quant error, fro norm, absmax).
    let samples: Vec<(f64, f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = Rng::substream(master_seed, t);
            let mut fro2 = 0.0f64;
            let mut absmax = 0.0f64;
            let r: Vec<f64> = (0..size)
                .map(|_| {
                    let v = rng.next_normal();
                    fro2 += v * v;
                    absmax = absmax.max(v.abs());
                    v
                })
                .collect();
            let s = absmax / q_max;
            let mut err2 = 0.0f64;
            if s > 0.0 {
                for &v in &r {
                    let q = (v / s).round().clamp(-q_max, q_max);
                    let d = v - s * q;
                    err2 += d * d;
                }
            }
            (err2.sqrt(), fro2.sqrt(), absmax)
        })
        .collect();

    let nf = trials as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| samples.iter().map(f).sum::<f64>() / nf;
    let mean_err = mean(|s| s.0);
    let mean_fro = mean(|s| s.1);
    let mean_max = mean(|s| s.2);

    let c = (log_base.log(size as f64) * std::f64::consts::PI / size as f64).sqrt();
    let factor = c * (size as f64).sqrt() / q_max;
    let bound = factor * mean_fro;

    // Relative standard error of the bound estimate.
    let var_fro = samples
        .iter()
        .map(|s| (s.1 - mean_fro) * (s.1 - mean_fro))
        .sum::<f64>()
        / nf;
    let se_rel = (var_fro / nf).sqrt() / mean_fro;

    Ok(Prop42Check {
        mean_quant_err: mean_err,
        bound,
        c,
        holds: mean_err <= bound * (1.0 + 3.0 * se_rel),
        regularity_lhs: mean_max,
        regularity_rhs: c * mean_fro,
        regularity_holds: mean_max <= c * mean_fro * (1.0 + 3.0 * se_rel),
    })
}

/// Descending singular values with energy and tail-norm accessors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub singular: Vec<f64>,
}

impl SpectrumReport {
    /// Fraction of squared spectrum mass in the top `r` values (1 for a
    /// zero matrix, whose spectrum carries no mass anywhere).
    pub fn top_r_energy(&self, r: usize) -> f64 {
        let total: f64 = self.singular.iter().map(|s| s * s).sum();
        if total == 0.0 {
            return 1.0;
        }
        let kept: f64 = self.singular[..r.min(self.singular.len())]
            .iter()
            .map(|s| s * s)
            .sum();
        kept / total
    }

    /// `sqrt(sum of squared singular values beyond r)`: the Frobenius norm
    /// of the best rank-r approximation's residual.
    pub fn residual_norm(&self, r: usize) -> f64 {
        self.singular[r.min(self.singular.len())..]
            .iter()
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt()
    }
}

pub fn spectrum(w: &Tensor) -> Result<SpectrumReport> {
    Ok(SpectrumReport {
        singular: svd(w)?.s,
    })
}

/// `||X W - forward(layer, X)||_F`: the deployed layer's output error
/// against the exact product.
pub fn layer_output_error(layer: &QuantizedLinear, x: &Tensor, w: &Tensor) -> Result<f64> {
    let reference = x.matmul(w)?;
    let fwd = pipeline::forward(layer, x)?;
    Ok(reference.sub(&fwd)?.fro_norm())
}

/// Full error report for a built layer on the batch `x`. When the original
/// weight is not provided, the reference is the weight the pack itself
/// encodes, `diag(lambda)^-1 (L1 L2 + dequant(R))`, so the report then
/// measures only the dynamic activation-quantization error.
pub fn layer_report(
    layer: &QuantizedLinear,
    x: &Tensor,
    w: Option<&Tensor>,
) -> Result<ErrorReport> {
    let inv: Vec<f64> = layer.smoothing.lambda.iter().map(|&l| 1.0 / l).collect();
    let rebuilt_w_hat = layer
        .branch
        .product()
        .add(&crate::quant::dequantize(&layer.residual_q))?;
    let reference = match w {
        Some(w) => x.matmul(w)?,
        None => x.matmul(&rebuilt_w_hat.scale_rows(&inv)?)?,
    };
    let e = reference.sub(&pipeline::forward(layer, x)?)?.fro_norm();
    let x_hat = x.scale_cols(&inv)?;
    // With the true weight available the residual is the smoothed weight
    // minus the branch; otherwise it degenerates to the stored codes.
    let residual = match w {
        Some(w) => w.scale_rows(&layer.smoothing.lambda)?.sub(&layer.branch.product())?,
        None => rebuilt_w_hat.sub(&layer.branch.product())?,
    };
    let xq = pipeline::quantize_activations(&x_hat, layer.act_cfg.as_ref())?;
    let rq = crate::quant::dequantize(&layer.residual_q);
    Ok(report_from_parts(
        "svdquant",
        e,
        &reference,
        &x_hat,
        &residual,
        &xq,
        &rq,
    ))
}

/// Settings shared by the schemes in [`compare_schemes`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    /// Alpha selection for the smoothing-based schemes.
    pub alpha: AlphaChoice,
    pub refine_iters: usize,
    pub gptq_damping: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            alpha: AlphaChoice::Search(pipeline::default_alpha_grid()),
            refine_iters: 10,
            gptq_damping: 0.01,
        }
    }
}

/// Evaluate the six schemes on identical inputs, in a fixed row order:
/// naive-rtn, smooth-only, svd-only, lorc, svdquant-rtn, svdquant-gptq.
///
/// Each smoothing scheme picks its own alpha under its own configuration
/// (smooth-only searches at rank 0). The two svdquant rows share one alpha
/// search (round-to-nearest objective); the gptq row swaps in
/// Hessian-compensated residual quantization afterwards.
pub fn compare_schemes(
    x_cal: &CalibrationSet,
    w: &Tensor,
    rank: usize,
    weight_cfg: &QuantConfig,
    act_cfg: Option<QuantConfig>,
    opts: &CompareOptions,
) -> Result<Vec<ErrorReport>> {
    let x = &x_cal.activations;
    let reference = x.matmul(w)?;
    let ref_norm = reference.fro_norm();
    let mut out = Vec::with_capacity(6);

    // naive-rtn: direct fake-quant GEMM, no smoothing, no branch.
    out.push(layer_error(x, w, act_cfg.as_ref(), weight_cfg)?);

    // Shared helper: run svdquant with given alpha choice/rank/gptq and
    // report the deployed error plus the bound components on the pair the
    // scheme quantizes.
    let run = |scheme: &str, alpha: AlphaChoice, r: usize, use_gptq: bool| -> Result<ErrorReport> {
        let layer = pipeline::svdquant(
            x_cal,
            w,
            r,
            weight_cfg,
            act_cfg,
            &SvdquantOptions {
                alpha,
                refine_iters: opts.refine_iters,
                use_gptq,
                gptq_damping: opts.gptq_damping,
                ..Default::default()
            },
        )?;
        let e = layer_output_error(&layer, x, w)?;
        let (x_hat, w_hat) = pipeline::apply_smoothing(x, w, &layer.smoothing)?;
        let residual = w_hat.sub(&layer.branch.product())?;
        let xq = pipeline::quantize_activations(&x_hat, act_cfg.as_ref())?;
        let rq = crate::quant::dequantize(&layer.residual_q);
        let mut rep = report_from_parts(scheme, e, &reference, &x_hat, &residual, &xq, &rq);
        rep.relative_e = if ref_norm > 0.0 { e / ref_norm } else { 0.0 };
        Ok(rep)
    };

    // smooth-only: alpha searched at rank 0.
    out.push(run("smooth-only", opts.alpha.clone(), 0, false)?);
    // svd-only: branch but no smoothing.
    out.push(run("svd-only", AlphaChoice::NoSmoothing, rank, false)?);

    // lorc: quantize first, then a rank-r correction of the error.
    {
        let (pair, qw) = pipeline::lorc_baseline(w, rank, weight_cfg)?;
        let xq = match act_cfg.as_ref() {
            Some(c) => fake_quant(x, c)?,
            None => x.clone(),
        };
        // Main branch quantized, correction branch in 16-bit.
        let fwd = xq
            .matmul(&crate::quant::dequantize(&qw))?
            .add(&x.matmul(&pair.product())?)?;
        let e = reference.sub(&fwd)?.fro_norm();
        let wq = crate::quant::dequantize(&qw);
        out.push(report_from_parts("lorc", e, &reference, x, w, &xq, &wq));
    }

    // svdquant-rtn and svdquant-gptq share the searched alpha.
    let shared_alpha = match &opts.alpha {
        AlphaChoice::Search(grid) => {
            let (a, _) = pipeline::search_alpha(
                x_cal,
                w,
                rank,
                weight_cfg,
                act_cfg.as_ref(),
                grid,
                pipeline::AlphaObjective::Deployed,
            )?;
            AlphaChoice::Fixed(a)
        }
        other => other.clone(),
    };
    out.push(run("svdquant-rtn", shared_alpha.clone(), rank, false)?);
    out.push(run("svdquant-gptq", shared_alpha, rank, true)?);

    Ok(out)
}
