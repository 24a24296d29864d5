//! The acceptance suite: fourteen numbered checks covering the quantizer,
//! the error bounds, the pipeline orderings, the cost model, and
//! serialization. The CLI `selftest` subcommand runs [`run_all`] and exits
//! nonzero if any check fails; the integration test target asserts each
//! check individually.
//!
//! Every tolerance and threshold is pinned here. Statistical checks run
//! their seeds in parallel; per-seed randomness derives from fixed master
//! seeds, so results are identical regardless of thread count.

use rayon::prelude::*;

use crate::costmodel::{latency_estimate, traffic_bytes, HardwareModel, KernelPlan, PlanKind};
use crate::diagnostics::{
    check_prop41, check_prop42_gaussian, compare_schemes, layer_output_error, spectrum,
    CompareOptions, LogBase,
};
use crate::gptq::gptq_quantize_residual;
use crate::linalg::truncated_svd;
use crate::pipeline::{
    self, apply_smoothing, compute_smoothing, forward, lora_fuse, svdquant, AlphaChoice,
    CalibrationSet, SvdquantOptions,
};
use crate::quant::{
    dequantize, fake_quant, quantize, Granularity, GroupAxis, QuantConfig, QuantDType, Preset,
    ScaleDType,
};
use crate::rng::{distinct_columns, synth_outlier_matrix, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} [{:2}] {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

/// Run all fourteen checks in order.
pub fn run_all() -> Vec<CriterionResult> {
    vec![
        criterion_01_qmax(),
        criterion_02_round_trip(),
        criterion_03_error_decomposition(),
        criterion_04_gaussian_bound(),
        criterion_05_truncation_optimality(),
        criterion_06_smoothing_identity(),
        criterion_07_branch_cancellation(),
        criterion_08_ablation_ordering(),
        criterion_09_gptq(),
        criterion_10_lora_fusion(),
        criterion_11_rank_overhead(),
        criterion_12_costmodel_ordering(),
        criterion_13_ranksweep_monotonicity(),
        criterion_14_serialization(),
    ]
}

fn result(id: usize, name: &'static str, passed: bool, detail: String) -> CriterionResult {
    CriterionResult {
        id,
        name,
        passed,
        detail,
    }
}

fn int4_per_tensor() -> QuantConfig {
    QuantConfig {
        dtype: QuantDType::Int { bits: 4 },
        granularity: Granularity::PerTensor,
        scale_dtype: ScaleDType::Real64,
        two_level_scale: false,
    }
}

pub fn criterion_01_qmax() -> CriterionResult {
    let int4 = QuantDType::Int { bits: 4 }.q_max();
    let fp4 = QuantDType::Fp4E2M1.q_max();
    let ok = int4 == 7.0 && fp4 == 6.0;
    result(
        1,
        "q_max constants",
        ok,
        format!("int4 q_max = {int4}, fp4 e2m1 q_max = {fp4}"),
    )
}

pub fn criterion_02_round_trip() -> CriterionResult {
    let mut worst_slack = f64::NEG_INFINITY;
    let mut rng = Rng::new(2024);
    let mut ok = true;

    for trial in 0..1000usize {
        let bits = 2 + (trial % 7) as u8;
        let rows = 1 + trial % 9;
        let cols = 1 + (trial * 7) % 11;
        let mag = [1.0, 10.0, 100.0][trial % 3];
        let x = rng.normal_tensor(rows, cols).scale(mag);
        let cfg = QuantConfig {
            dtype: QuantDType::Int { bits },
            ..int4_per_tensor()
        };
        let q_max = cfg.dtype.q_max();
        let fq = fake_quant(&x, &cfg).expect("finite input");
        let err_inf = x
            .sub(&fq)
            .unwrap()
            .data()
            .iter()
            .fold(0.0f64, |m, &d| m.max(d.abs()));
        let bound = x.absmax() / (2.0 * q_max) + 1e-12;
        worst_slack = worst_slack.max(err_inf - bound);
        if err_inf > bound {
            ok = false;
        }
    }

    // Lattice-exact inputs: codes times a short-mantissa scale, one element
    // pinned at the clip point so the recovered scale is exact.
    for (trial, s) in [0.25f64, 0.375, 1.5, 2.0, 0.0625].iter().enumerate() {
        let bits = 2 + (trial % 7) as u8;
        let cfg = QuantConfig {
            dtype: QuantDType::Int { bits },
            ..int4_per_tensor()
        };
        let q_max = cfg.dtype.q_max() as i32;
        let mut codes: Vec<f64> = (0..12)
            .map(|k| ((k * 5 % (2 * q_max as usize + 1)) as i32 - q_max) as f64)
            .collect();
        codes[0] = q_max as f64;
        let x = Tensor::from_vec(3, 4, codes.iter().map(|&c| c * s).collect()).unwrap();
        let fq = fake_quant(&x, &cfg).unwrap();
        if fq != x {
            ok = false;
        }
    }

    result(
        2,
        "round-trip error bound",
        ok,
        format!("worst infinity-norm slack vs bound: {worst_slack:.3e}"),
    )
}

pub fn criterion_03_error_decomposition() -> CriterionResult {
    let cfg = int4_per_tensor();
    let violations: usize = (0..1000u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = Rng::substream(3001, trial);
            let size = 4 + (trial as usize * 13) % 61; // 4..64
            let mag = [1.0, 10.0, 100.0][trial as usize % 3];
            let x = if mag > 1.0 {
                synth_outlier_matrix(size, size, &[0, size / 2], mag, &mut rng)
            } else {
                rng.normal_tensor(size, size)
            };
            let w = rng.normal_tensor(size, size);
            let c = check_prop41(&x, &w, Some(&cfg), &cfg).expect("finite");
            usize::from(!c.holds)
        })
        .sum();
    result(
        3,
        "error decomposition inequality",
        violations == 0,
        format!("{violations} violations over 1000 instances (sizes 4..64, magnitudes 1/10/100)"),
    )
}

pub fn criterion_04_gaussian_bound() -> CriterionResult {
    let mut ok = true;
    let mut details = Vec::new();
    for &size in &[256usize, 1024, 4096] {
        for &q_max in &[7.0f64, 6.0] {
            let c = check_prop42_gaussian(size, q_max, 1000, 4242, LogBase::Natural)
                .expect("valid parameters");
            if !(c.holds && c.regularity_holds) {
                ok = false;
            }
            details.push(format!(
                "size {size} q_max {q_max}: err {:.4} <= bound {:.4}, reg {:.4} <= {:.4}",
                c.mean_quant_err, c.bound, c.regularity_lhs, c.regularity_rhs
            ));
        }
    }
    result(
        4,
        "gaussian quantization error bound",
        ok,
        details.join("; "),
    )
}

pub fn criterion_05_truncation_optimality() -> CriterionResult {
    let mut ok = true;
    let mut worst_rel = 0.0f64;

    // Residual norm equals the tail of the spectrum.
    let mut rng = Rng::new(555);
    for _ in 0..100 {
        let rows = 4 + rng.next_index(9);
        let cols = 4 + rng.next_index(9);
        let a = rng.normal_tensor(rows, cols);
        let k = rows.min(cols);
        let r = rng.next_index(k + 1);
        let (_, residual) = truncated_svd(&a, r).unwrap();
        let sp = spectrum(&a).unwrap();
        let tail = sp.residual_norm(r);
        // Full-rank residuals are float noise against an exactly zero
        // tail, hence the norm-scaled floor in the denominator.
        let denom = tail.max(residual.fro_norm()).max(1e-4 * a.fro_norm());
        let rel = (residual.fro_norm() - tail).abs() / denom;
        worst_rel = worst_rel.max(rel);
        if rel > 1e-8 {
            ok = false;
        }
    }

    // Beats 1000 random rank-r competitors on 6x6 inputs.
    let mut losses = 0usize;
    for seed in [6001u64, 6002] {
        let mut rng = Rng::new(seed);
        let a = rng.normal_tensor(6, 6);
        for r in 1..=3usize {
            let (_, residual) = truncated_svd(&a, r).unwrap();
            let best = residual.fro_norm();
            for _ in 0..1000 {
                let f1 = rng.normal_tensor(6, r);
                let f2 = rng.normal_tensor(r, 6);
                let competitor = a.sub(&f1.matmul(&f2).unwrap()).unwrap().fro_norm();
                if best > competitor + 1e-12 {
                    losses += 1;
                }
            }
        }
    }
    if losses > 0 {
        ok = false;
    }

    result(
        5,
        "rank truncation optimality",
        ok,
        format!("worst residual/tail relative gap {worst_rel:.3e}; {losses} losses to 6000 random competitors"),
    )
}

pub fn criterion_06_smoothing_identity() -> CriterionResult {
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut rng = Rng::new(666);
    let grid = pipeline::default_alpha_grid();
    for trial in 0..100 {
        let b = 3 + trial % 6;
        let m = 4 + trial % 9;
        let n = 3 + trial % 7;
        let mut x = rng.normal_tensor(b, m);
        if trial % 4 == 0 {
            // Dead channel: exercises the lambda clamp.
            let dead = trial % m;
            let mut factors = vec![1.0; m];
            factors[dead] = 0.0;
            x = x.scale_cols(&factors).unwrap();
        }
        let w = rng.normal_tensor(m, n);
        let xc = CalibrationSet::new(x.clone()).unwrap();
        let reference = x.matmul(&w).unwrap();
        for &alpha in &grid {
            let s = compute_smoothing(&xc, &w, alpha).unwrap();
            let (xh, wh) = apply_smoothing(&x, &w, &s).unwrap();
            let diff = reference.sub(&xh.matmul(&wh).unwrap()).unwrap().fro_norm();
            let rel = diff / reference.fro_norm().max(1e-300);
            worst = worst.max(rel);
            if diff > 1e-12 * reference.fro_norm() {
                ok = false;
            }
        }
    }
    result(
        6,
        "smoothing preserves the product",
        ok,
        format!("worst relative drift {worst:.3e} over 100 instances x 21 alphas"),
    )
}

pub fn criterion_07_branch_cancellation() -> CriterionResult {
    let mut ok = true;
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = Rng::substream(777, trial);
        let x = rng.normal_tensor(8, 12);
        let w = rng.normal_tensor(12, 10);
        let cfg = int4_per_tensor();
        let layer = svdquant(
            &CalibrationSet::new(x.clone()).unwrap(),
            &w,
            3,
            &cfg,
            Some(cfg),
            &SvdquantOptions {
                alpha: AlphaChoice::Fixed(0.5),
                refine_iters: (trial % 3) as usize,
                ..Default::default()
            },
        )
        .unwrap();
        let (x_hat, w_hat) = apply_smoothing(&x, &w, &layer.smoothing).unwrap();
        let lhs = x_hat
            .matmul(&w_hat)
            .unwrap()
            .sub(&forward(&layer, &x).unwrap())
            .unwrap()
            .fro_norm();
        let residual = w_hat.sub(&layer.branch.product()).unwrap();
        let act_q = pipeline::quantize_activations(&x_hat, Some(&cfg)).unwrap();
        let rhs = x_hat
            .matmul(&residual)
            .unwrap()
            .sub(&act_q.matmul(&dequantize(&layer.residual_q)).unwrap())
            .unwrap()
            .fro_norm();
        let rel = (lhs - rhs).abs() / lhs.max(rhs).max(1e-12);
        worst = worst.max(rel);
        if rel > 1e-9 {
            ok = false;
        }
    }
    result(
        7,
        "low-rank branch cancels exactly",
        ok,
        format!("worst relative gap between the two error forms {worst:.3e}"),
    )
}

/// The synthetic layer used by the ablation and rank-sweep checks:
/// activations 64x128 with 4 outlier columns magnified 50x, Gaussian
/// weights 128x256.
pub fn ablation_instance(seed: u64) -> (CalibrationSet, Tensor) {
    let mut rng = Rng::substream(8800, seed);
    let outlier_cols = distinct_columns(4, 128, &mut rng);
    let x = synth_outlier_matrix(64, 128, &outlier_cols, 50.0, &mut rng);
    let w = rng.normal_tensor(128, 256);
    (CalibrationSet::new(x).unwrap(), w)
}

/// Alpha grid and refinement depth used by the statistical pipeline checks.
/// Deliberately lighter than the interactive defaults so the whole suite
/// stays within its runtime budget; orderings are insensitive to this.
fn acceptance_compare_options() -> CompareOptions {
    CompareOptions {
        alpha: AlphaChoice::Search(vec![0.0, 0.5, 1.0]),
        refine_iters: 2,
        gptq_damping: 0.01,
    }
}

pub fn criterion_08_ablation_ordering() -> CriterionResult {
    let seeds = 100u64;
    let weight_cfg = Preset::Int4.weight_cfg();
    let act_cfg = Preset::Int4.act_cfg();
    let opts = acceptance_compare_options();

    let wins: Vec<(bool, bool, bool, bool)> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let (xc, w) = ablation_instance(seed);
            let reports = compare_schemes(&xc, &w, 32, &weight_cfg, act_cfg, &opts)
                .expect("compare runs");
            let e = |name: &str| {
                reports
                    .iter()
                    .find(|r| r.scheme == name)
                    .map(|r| r.e)
                    .expect("scheme present")
            };
            let svdq = e("svdquant-rtn");
            (
                svdq <= e("naive-rtn"),
                svdq <= e("smooth-only"),
                svdq <= e("svd-only"),
                e("svdquant-gptq") <= svdq,
            )
        })
        .collect();

    let beats_naive = wins.iter().filter(|w| w.0).count();
    let beats_smooth = wins.iter().filter(|w| w.1).count();
    let beats_svd = wins.iter().filter(|w| w.2).count();
    let gptq_wins = wins.iter().filter(|w| w.3).count();
    let ok = beats_naive >= 95 && beats_smooth >= 95 && beats_svd >= 95 && gptq_wins >= 90;
    result(
        8,
        "ablation ordering",
        ok,
        format!(
            "svdquant beats naive {beats_naive}/100, smooth-only {beats_smooth}/100, \
             svd-only {beats_svd}/100 (need 95); gptq beats rtn {gptq_wins}/100 (need 90)"
        ),
    )
}

pub fn criterion_09_gptq() -> CriterionResult {
    // Orthogonal calibration columns: identical to round-to-nearest.
    let m = 16;
    let x = Tensor::from_fn(m, m, |i, j| if i == j { 0.5 + 0.1 * i as f64 } else { 0.0 });
    let mut rng = Rng::new(909);
    let r = rng.normal_tensor(m, 24);
    let mut identity_ok = true;
    for cfg in [
        Preset::Int4.weight_cfg(),
        Preset::Int8.weight_cfg(),
        Preset::Nvfp4.weight_cfg(),
    ] {
        let g = gptq_quantize_residual(&r, &x, &cfg, 0.01).unwrap();
        let plain = quantize(&r, &cfg).unwrap();
        if g != plain {
            identity_ok = false;
        }
    }

    // Proxy loss against round-to-nearest on random instances.
    let cfg = QuantConfig {
        dtype: QuantDType::Int { bits: 4 },
        granularity: Granularity::PerGroup {
            size: 64,
            along: GroupAxis::Rows,
        },
        scale_dtype: ScaleDType::Real16,
        two_level_scale: false,
    };
    let wins: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = Rng::substream(9090, seed);
            let x = rng.normal_tensor(256, 64);
            let r = rng.normal_tensor(64, 64);
            let g = gptq_quantize_residual(&r, &x, &cfg, 0.01).unwrap();
            let plain = quantize(&r, &cfg).unwrap();
            let reference = x.matmul(&r).unwrap();
            let loss = |q| {
                reference
                    .sub(&x.matmul(&dequantize(q)).unwrap())
                    .unwrap()
                    .fro_norm()
            };
            usize::from(loss(&g) <= loss(&plain))
        })
        .sum();

    let ok = identity_ok && wins >= 90;
    result(
        9,
        "hessian-compensated quantization",
        ok,
        format!(
            "identity-hessian bitwise match: {identity_ok}; proxy-loss wins {wins}/100 (need 90)"
        ),
    )
}

pub fn criterion_10_lora_fusion() -> CriterionResult {
    let mut ok = true;
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = Rng::substream(1010, trial);
        let x = rng.normal_tensor(6, 12);
        let w = rng.normal_tensor(12, 10);
        let a = rng.normal_tensor(12, 2);
        let b = rng.normal_tensor(2, 10);
        let scale = 0.5 + (trial % 5) as f64 * 0.35;
        let cfg = int4_per_tensor();
        // Fixed nonzero alpha keeps lambda away from 1.
        let layer = svdquant(
            &CalibrationSet::new(x.clone()).unwrap(),
            &w,
            3,
            &cfg,
            Some(cfg),
            &SvdquantOptions {
                alpha: AlphaChoice::Fixed(0.6),
                refine_iters: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let fused = lora_fuse(&layer, &a, &b, scale).unwrap();
        let fused_out = forward(&fused, &x).unwrap();
        let separate = forward(&layer, &x)
            .unwrap()
            .add(&x.matmul(&a).unwrap().matmul(&b).unwrap().scale(scale))
            .unwrap();
        let rel = fused_out.sub(&separate).unwrap().fro_norm()
            / separate.fro_norm().max(1e-300);
        worst = worst.max(rel);
        if rel > 1e-9 {
            ok = false;
        }
    }
    result(
        10,
        "lora fusion exactness",
        ok,
        format!("worst relative gap fused vs separate branch {worst:.3e} (lambda != 1)"),
    )
}

pub fn criterion_11_rank_overhead() -> CriterionResult {
    let mut ok = true;
    for &(m, n, r) in &[(3072usize, 3072usize, 32usize), (1024, 2048, 16), (128, 256, 64)] {
        let plan = KernelPlan::new(PlanKind::Fused, 512, m, n, r);
        let est = latency_estimate(&plan, &HardwareModel::default()).unwrap();
        let expected = (m as f64 * r as f64 + n as f64 * r as f64) / (m as f64 * n as f64);
        if est.flop_fraction != expected {
            ok = false;
        }
    }
    // The headline shape: overhead is exactly 1/48, and the 17-digit print
    // round-trips.
    let est = latency_estimate(
        &KernelPlan::new(PlanKind::Fused, 4096, 3072, 3072, 32),
        &HardwareModel::default(),
    )
    .unwrap();
    let exact = est.flop_fraction == 1.0 / 48.0;
    let printed = format!("{:.16e}", est.flop_fraction);
    let reparsed: f64 = printed.parse().unwrap();
    let round_trips = reparsed == est.flop_fraction;
    ok = ok && exact && round_trips;
    result(
        11,
        "rank parameter overhead formula",
        ok,
        format!("3072x3072 r=32 overhead prints as {printed} (exactly 1/48: {exact})"),
    )
}

pub fn criterion_12_costmodel_ordering() -> CriterionResult {
    let hw = HardwareModel::default();
    let fused = latency_estimate(&KernelPlan::new(PlanKind::Fused, 4096, 3072, 3072, 32), &hw)
        .unwrap();
    let unfused =
        latency_estimate(&KernelPlan::new(PlanKind::Unfused, 4096, 3072, 3072, 32), &hw).unwrap();
    let traffic_ok = {
        let f = traffic_bytes(&KernelPlan::new(PlanKind::Fused, 4096, 3072, 3072, 32));
        let u = traffic_bytes(&KernelPlan::new(PlanKind::Unfused, 4096, 3072, 3072, 32));
        f.lowrank_extra < u.lowrank_extra
    };
    let ok = traffic_ok
        && fused.overhead_fraction <= 0.15
        && unfused.overhead_fraction >= 5.0 * fused.overhead_fraction;
    result(
        12,
        "fused vs unfused cost ordering",
        ok,
        format!(
            "fused overhead {:.4}, unfused overhead {:.4} (ratio {:.1}x, need >= 5x and fused <= 0.15)",
            fused.overhead_fraction,
            unfused.overhead_fraction,
            unfused.overhead_fraction / fused.overhead_fraction
        ),
    )
}

pub fn criterion_13_ranksweep_monotonicity() -> CriterionResult {
    let weight_cfg = Preset::Int4.weight_cfg();
    let act_cfg = Preset::Int4.act_cfg();
    // Fixed migration strength isolates the rank effect; the alpha search
    // is exercised by the ablation criterion.
    let opts = SvdquantOptions {
        alpha: AlphaChoice::Fixed(0.5),
        refine_iters: 2,
        ..Default::default()
    };
    let per_seed: Vec<[f64; 3]> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let (xc, w) = ablation_instance(seed);
            let reference = xc.activations.matmul(&w).unwrap().fro_norm();
            let mut rel_e = [0.0f64; 3];
            for (slot, &rank) in rel_e.iter_mut().zip(&[16usize, 32, 64]) {
                let layer =
                    svdquant(&xc, &w, rank, &weight_cfg, act_cfg, &opts).expect("pipeline");
                *slot = layer_output_error(&layer, &xc.activations, &w).unwrap() / reference;
            }
            rel_e
        })
        .collect();
    let monotone = per_seed
        .iter()
        .filter(|r| r[0] >= r[1] && r[1] >= r[2])
        .count();
    let mean = |i: usize| per_seed.iter().map(|r| r[i]).sum::<f64>() / per_seed.len() as f64;
    let (m16, m32, m64) = (mean(0), mean(1), mean(2));
    let mean_monotone = m16 >= m32 && m32 >= m64;
    result(
        13,
        "rank sweep monotonicity",
        monotone >= 90 && mean_monotone,
        format!(
            "relative error nonincreasing over ranks 16/32/64 in {monotone}/100 seeds (need 90); \
             seed-mean {m16:.4} >= {m32:.4} >= {m64:.4}: {mean_monotone}"
        ),
    )
}

pub fn criterion_14_serialization() -> CriterionResult {
    let mut ok = true;
    let mut detail = String::new();
    let scratch = tempfile::tempdir().expect("temp dir");

    // Tensor files round-trip bitwise, including awkward shapes.
    let mut rng = Rng::new(1414);
    for (i, &(rows, cols)) in [(1usize, 1usize), (5, 3), (1, 7), (9, 9)].iter().enumerate() {
        let t = rng.normal_tensor(rows, cols).scale(1e3);
        let path = scratch.path().join(format!("t{i}.svdqt"));
        if crate::io::save_tensor(&path, &t).is_err()
            || crate::io::load_tensor(&path).map(|b| b != t).unwrap_or(true)
        {
            ok = false;
            detail.push_str("tensor round-trip failed; ");
        }
    }

    // Odd element counts exercise the padded trailing nibble.
    let odd = rng.normal_tensor(3, 3);
    let q = quantize(&odd, &int4_per_tensor()).unwrap();
    if q.codes().len() != 5 {
        ok = false;
        detail.push_str("unexpected packed length; ");
    }

    // Layer packs reload to bit-identical layers with bit-identical forward
    // passes, for both single- and two-level scale layouts.
    for preset in [Preset::Int4, Preset::Nvfp4, Preset::Int8, Preset::Nf4W4a16] {
        let x = rng.normal_tensor(6, 20);
        let w = rng.normal_tensor(20, 9);
        let layer = svdquant(
            &CalibrationSet::new(x.clone()).unwrap(),
            &w,
            4,
            &preset.weight_cfg(),
            preset.act_cfg(),
            &SvdquantOptions {
                alpha: AlphaChoice::Fixed(0.5),
                refine_iters: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = scratch.path().join(format!("pack-{}", preset.name()));
        if crate::io::save_layer_pack(&dir, preset.name(), &layer).is_err() {
            ok = false;
            detail.push_str("pack save failed; ");
            continue;
        }
        match crate::io::load_layer_pack(&dir) {
            Ok((_, loaded)) => {
                if loaded != layer {
                    ok = false;
                    detail.push_str(&format!("{} pack not bit-identical; ", preset.name()));
                }
                let a = forward(&layer, &x).unwrap();
                let b = forward(&loaded, &x).unwrap();
                if a != b {
                    ok = false;
                    detail.push_str(&format!("{} forward drifted after reload; ", preset.name()));
                }
            }
            Err(e) => {
                ok = false;
                detail.push_str(&format!("pack load failed: {e}; "));
            }
        }
    }

    if detail.is_empty() {
        detail = "tensor files, packed nibbles, and layer packs round-trip bitwise".to_string();
    }
    result(14, "serialization round-trip", ok, detail)
}

#[cfg(test)]
mod tests {
    use super::*;

    // The statistical criteria are exercised by the dedicated acceptance
    // target; here only the cheap ones are smoke-checked.
    #[test]
    fn cheap_criteria_pass() {
        assert!(criterion_01_qmax().passed);
        assert!(criterion_11_rank_overhead().passed);
        assert!(criterion_12_costmodel_ordering().passed);
    }

    #[test]
    fn fixture_is_deterministic() {
        let (a1, w1) = ablation_instance(3);
        let (a2, w2) = ablation_instance(3);
        assert_eq!(a1.activations, a2.activations);
        assert_eq!(w1, w2);
    }
}
