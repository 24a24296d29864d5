//! The quantization pipeline: outlier migration via per-channel smoothing,
//! low-rank absorption of the smoothed weight, low-bit residual
//! quantization with optional error-compensating refinement, and the
//! resulting layer's forward pass.
//!
//! For a calibration batch `X` (b×m) and weight `W` (m×n) the produced
//! layer computes
//!
//! ```text
//! X W  =  X̂ Ŵ  ≈  X̂ L1 L2  +  Q(X̂) Q(R)
//! ```
//!
//! where `X̂ = X diag(λ)^-1`, `Ŵ = diag(λ) W`, `L1 L2` is the best rank-r
//! approximation of `Ŵ`, and `R = Ŵ - L1 L2` is the only tensor stored in
//! low-bit codes. The 16-bit branch is evaluated as `(X̂ L1) L2` with
//! row-major ascending-index accumulation everywhere, so repeated runs are
//! bit-identical.

use crate::error::{Error, Result};
use crate::gptq;
use crate::linalg::{truncated_svd, LowRankPair};
use crate::quant::{dequantize, fake_quant, quantize, QuantConfig, QuantizedTensor};
use crate::tensor::Tensor;

/// Migration strength and the per-channel factors it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpec {
    pub alpha: f64,
    /// One positive finite factor per input channel; activations divide by
    /// it, weight rows multiply by it.
    pub lambda: Vec<f64>,
}

impl SmoothingSpec {
    /// All-ones factors: smoothing disabled.
    pub fn identity(m: usize) -> Self {
        Self {
            alpha: 0.0,
            lambda: vec![1.0; m],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.lambda.iter().all(|&l| l == 1.0)
    }
}

/// Activation rows used to drive smoothing, the alpha search, and GPTQ.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub activations: Tensor,
}

impl CalibrationSet {
    pub fn new(activations: Tensor) -> Result<Self> {
        if activations.rows() == 0 {
            return Err(Error::EmptyCalibration);
        }
        activations.ensure_finite("calibration activations")?;
        Ok(Self { activations })
    }
}

/// Factors outside this range are clamped; dead channels (absmax 0) would
/// otherwise produce zero or infinite lambda.
const LAMBDA_MIN: f64 = 1e-5;
const LAMBDA_MAX: f64 = 1e5;

/// Per-channel smoothing factors
/// `lambda_i = max|X[:,i]|^alpha / max|W[i,:]|^(1-alpha)`.
pub fn compute_smoothing(x_cal: &CalibrationSet, w: &Tensor, alpha: f64) -> Result<SmoothingSpec> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha { alpha });
    }
    let x = &x_cal.activations;
    if x.cols() != w.rows() {
        return Err(Error::DimensionMismatch {
            op: "compute_smoothing",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: w.rows(),
            right_cols: w.cols(),
        });
    }
    let act_max = x.col_absmax();
    let w_max = w.row_absmax();
    let lambda = act_max
        .iter()
        .zip(&w_max)
        .map(|(&a, &b)| {
            let raw = a.powf(alpha) / b.powf(1.0 - alpha);
            if raw.is_nan() {
                // 0/0: both the channel and the weight row are dead, any
                // positive factor is equivalent.
                1.0
            } else {
                raw.clamp(LAMBDA_MIN, LAMBDA_MAX)
            }
        })
        .collect();
    Ok(SmoothingSpec { alpha, lambda })
}

/// Scale activations and weight so the product is unchanged:
/// `x_hat = x diag(lambda)^-1`, `w_hat = diag(lambda) w`.
pub fn apply_smoothing(x: &Tensor, w: &Tensor, s: &SmoothingSpec) -> Result<(Tensor, Tensor)> {
    if s.lambda.len() != x.cols() || s.lambda.len() != w.rows() {
        return Err(Error::DimensionMismatch {
            op: "apply_smoothing",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: w.rows(),
            right_cols: w.cols(),
        });
    }
    let inv: Vec<f64> = s.lambda.iter().map(|&l| 1.0 / l).collect();
    let x_hat = x.scale_cols(&inv)?;
    let w_hat = w.scale_rows(&s.lambda)?;
    Ok((x_hat, w_hat))
}

/// How the migration strength is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaChoice {
    Fixed(f64),
    /// Grid-search the layer output error; ties go to the smaller alpha.
    Search(Vec<f64>),
    /// Skip smoothing entirely (lambda = 1).
    NoSmoothing,
}

/// What the alpha-search objective measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaObjective {
    /// The deployed path: low-rank branch plus quantized activations times
    /// the quantized residual.
    Deployed,
    /// Residual weight quantization only; activations stay 16-bit.
    WeightOnly,
}

/// Knobs for [`svdquant`].
#[derive(Debug, Clone, PartialEq)]
pub struct SvdquantOptions {
    pub alpha: AlphaChoice,
    /// Refinement iterations re-decomposing `w_hat - Q(R)`; the iterate with
    /// the smallest calibration error wins (including iterate 0).
    pub refine_iters: usize,
    pub use_gptq: bool,
    pub gptq_damping: f64,
    pub objective: AlphaObjective,
}

/// The 21-point grid 0.00, 0.05, ..., 1.00.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}

impl Default for SvdquantOptions {
    fn default() -> Self {
        Self {
            alpha: AlphaChoice::Search(default_alpha_grid()),
            refine_iters: 10,
            use_gptq: false,
            gptq_damping: 0.01,
            objective: AlphaObjective::Deployed,
        }
    }
}

/// A quantized linear layer: smoothing factors, the 16-bit low-rank branch,
/// and the packed low-bit residual.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLinear {
    pub smoothing: SmoothingSpec,
    pub branch: LowRankPair,
    pub residual_q: QuantizedTensor,
    pub weight_cfg: QuantConfig,
    /// `None` keeps activations in 16-bit (the W4A16 setting).
    pub act_cfg: Option<QuantConfig>,
    pub m: usize,
    pub n: usize,
}

impl QuantizedLinear {
    pub fn rank(&self) -> usize {
        self.branch.rank
    }
}

/// Activations on the low-bit path: fake-quantized under `cfg`, or passed
/// through when the layer keeps them in 16-bit. Scales are recomputed from
/// the given tensor every call (dynamic quantization).
pub fn quantize_activations(x: &Tensor, cfg: Option<&QuantConfig>) -> Result<Tensor> {
    match cfg {
        Some(c) => fake_quant(x, c),
        None => Ok(x.clone()),
    }
}

/// Grid-search the migration strength, rebuilding the full pipeline at each
/// grid point (smooth, rank-r decomposition, round-to-nearest residual) and
/// scoring `||X W - forward||_F^2` on the calibration batch.
pub fn search_alpha(
    x_cal: &CalibrationSet,
    w: &Tensor,
    rank: usize,
    weight_cfg: &QuantConfig,
    act_cfg: Option<&QuantConfig>,
    grid: &[f64],
    objective: AlphaObjective,
) -> Result<(f64, SmoothingSpec)> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let x = &x_cal.activations;
    let reference = x.matmul(w)?;
    let mut best: Option<(f64, f64, SmoothingSpec)> = None; // (objective, alpha, spec)
    for &alpha in grid {
        let spec = compute_smoothing(x_cal, w, alpha)?;
        let obj = alpha_objective_value(x, w, &reference, &spec, rank, weight_cfg, act_cfg, objective)?;
        let better = match &best {
            None => true,
            Some((b_obj, b_alpha, _)) => obj < *b_obj || (obj == *b_obj && alpha < *b_alpha),
        };
        if better {
            best = Some((obj, alpha, spec));
        }
    }
    let (_, alpha, spec) = best.expect("grid checked non-empty");
    Ok((alpha, spec))
}

#[allow(clippy::too_many_arguments)]
fn alpha_objective_value(
    x: &Tensor,
    w: &Tensor,
    reference: &Tensor,
    spec: &SmoothingSpec,
    rank: usize,
    weight_cfg: &QuantConfig,
    act_cfg: Option<&QuantConfig>,
    objective: AlphaObjective,
) -> Result<f64> {
    let (x_hat, w_hat) = apply_smoothing(x, w, spec)?;
    let (pair, residual) = truncated_svd(&w_hat, rank)?;
    let qr = quantize(&residual, weight_cfg)?;
    let act = match objective {
        AlphaObjective::Deployed => quantize_activations(&x_hat, act_cfg)?,
        AlphaObjective::WeightOnly => x_hat.clone(),
    };
    let fwd = branch_plus_residual(&x_hat, &act, &pair, &qr)?;
    let err = reference.sub(&fwd)?.fro_norm();
    Ok(err * err)
}

/// `x_hat L1 L2 + act_q dequant(qr)` with the pinned association.
fn branch_plus_residual(
    x_hat: &Tensor,
    act_q: &Tensor,
    pair: &LowRankPair,
    qr: &QuantizedTensor,
) -> Result<Tensor> {
    let resid = act_q.matmul(&dequantize(qr))?;
    if pair.rank == 0 {
        return Ok(resid);
    }
    let branch = x_hat.matmul(&pair.l1)?.matmul(&pair.l2)?;
    branch.add(&resid)
}

/// Build a quantized layer from a weight and calibration batch.
///
/// Steps: fix or search alpha; smooth; decompose the smoothed weight at the
/// requested rank; quantize the residual (round-to-nearest or the
/// Hessian-compensated path); then optionally refine by re-decomposing
/// `w_hat - Q(R)` and keep the iterate with the smallest calibration error
/// `||X̂ R - Q(X̂) Q(R)||_F`.
pub fn svdquant(
    x_cal: &CalibrationSet,
    w: &Tensor,
    rank: usize,
    weight_cfg: &QuantConfig,
    act_cfg: Option<QuantConfig>,
    opts: &SvdquantOptions,
) -> Result<QuantizedLinear> {
    w.ensure_finite("svdquant weight")?;
    let (m, n) = w.shape();
    if x_cal.activations.cols() != m {
        return Err(Error::DimensionMismatch {
            op: "svdquant",
            left_rows: x_cal.activations.rows(),
            left_cols: x_cal.activations.cols(),
            right_rows: m,
            right_cols: n,
        });
    }
    let k = m.min(n);
    if rank > k {
        return Err(Error::RankOutOfRange { rank, max: k });
    }

    let smoothing = match &opts.alpha {
        AlphaChoice::Fixed(a) => compute_smoothing(x_cal, w, *a)?,
        AlphaChoice::Search(grid) => {
            search_alpha(
                x_cal,
                w,
                rank,
                weight_cfg,
                act_cfg.as_ref(),
                grid,
                opts.objective,
            )?
            .1
        }
        AlphaChoice::NoSmoothing => SmoothingSpec::identity(m),
    };

    let (x_hat, w_hat) = apply_smoothing(&x_cal.activations, w, &smoothing)?;
    let act_q = quantize_activations(&x_hat, act_cfg.as_ref())?;

    let quantize_residual = |r: &Tensor| -> Result<QuantizedTensor> {
        if opts.use_gptq {
            gptq::gptq_quantize_residual(r, &x_hat, weight_cfg, opts.gptq_damping)
        } else {
            quantize(r, weight_cfg)
        }
    };

    let iterate_error = |r: &Tensor, qr: &QuantizedTensor| -> Result<f64> {
        let exact = x_hat.matmul(r)?;
        let approx = act_q.matmul(&dequantize(qr))?;
        Ok(exact.sub(&approx)?.fro_norm())
    };

    let (pair0, r0) = truncated_svd(&w_hat, rank)?;
    let qr0 = quantize_residual(&r0)?;
    let e0 = iterate_error(&r0, &qr0)?;
    let mut best = (e0, pair0, qr0);

    // Rank 0 leaves nothing to re-decompose; every iterate would repeat
    // iterate 0 exactly.
    let refine_iters = if rank == 0 { 0 } else { opts.refine_iters };
    let mut prev_qr = best.2.clone();
    for _ in 0..refine_iters {
        let target = w_hat.sub(&dequantize(&prev_qr))?;
        let (pair, _) = truncated_svd(&target, rank)?;
        let residual = w_hat.sub(&pair.product())?;
        let qr = quantize_residual(&residual)?;
        let e = iterate_error(&residual, &qr)?;
        prev_qr = qr.clone();
        if e < best.0 {
            best = (e, pair, qr);
        }
    }

    Ok(QuantizedLinear {
        smoothing,
        branch: best.1,
        residual_q: best.2,
        weight_cfg: *weight_cfg,
        act_cfg,
        m,
        n,
    })
}

/// Run the layer: `x_hat L1 L2 + Q(x_hat) dequant(residual)` with
/// `x_hat = x diag(lambda)^-1`. Activation scales are recomputed from the
/// given input (dynamic quantization).
pub fn forward(layer: &QuantizedLinear, x: &Tensor) -> Result<Tensor> {
    if x.cols() != layer.m {
        return Err(Error::DimensionMismatch {
            op: "forward",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: layer.m,
            right_cols: layer.n,
        });
    }
    let inv: Vec<f64> = layer.smoothing.lambda.iter().map(|&l| 1.0 / l).collect();
    let x_hat = x.scale_cols(&inv)?;
    let act_q = quantize_activations(&x_hat, layer.act_cfg.as_ref())?;
    branch_plus_residual(&x_hat, &act_q, &layer.branch, &layer.residual_q)
}

/// Fold a LoRA adapter `scale * a b` into the layer's low-rank branch.
///
/// The branch consumes `x_hat = x diag(lambda)^-1`, so the new columns are
/// pre-multiplied by `diag(lambda)` to cancel the smoothing:
/// `L1' = [L1 | diag(lambda) a scale]`, `L2' = [L2 ; b]`. The residual is
/// untouched, so no re-quantization happens.
pub fn lora_fuse(
    layer: &QuantizedLinear,
    a: &Tensor,
    b: &Tensor,
    scale: f64,
) -> Result<QuantizedLinear> {
    if a.rows() != layer.m || b.cols() != layer.n || a.cols() != b.rows() {
        return Err(Error::DimensionMismatch {
            op: "lora_fuse",
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: b.rows(),
            right_cols: b.cols(),
        });
    }
    let a_scaled = a.scale_rows(&layer.smoothing.lambda)?.scale(scale);
    let l1 = layer.branch.l1.hstack(&a_scaled)?;
    let l2 = layer.branch.l2.vstack(b)?;
    let rank = layer.branch.rank + a.cols();
    Ok(QuantizedLinear {
        branch: LowRankPair { l1, l2, rank },
        ..layer.clone()
    })
}

/// The quantize-then-correct baseline: quantize `w` directly and fit a
/// rank-r branch to the quantization error `w - Q(w)`.
pub fn lorc_baseline(
    w: &Tensor,
    rank: usize,
    weight_cfg: &QuantConfig,
) -> Result<(LowRankPair, QuantizedTensor)> {
    let k = w.rows().min(w.cols());
    if rank > k {
        return Err(Error::RankOutOfRange { rank, max: k });
    }
    let qw = quantize(w, weight_cfg)?;
    let err = w.sub(&dequantize(&qw))?;
    let (pair, _) = truncated_svd(&err, rank)?;
    Ok((pair, qw))
}

/// Dense reconstruction `dequant(Q(w)) + L1 L2` of a quantize-then-correct
/// pair, used by reports and tests.
pub fn lorc_reconstruction(pair: &LowRankPair, qw: &QuantizedTensor) -> Tensor {
    dequantize(qw)
        .add(&pair.product())
        .expect("shapes agree by construction")
}
