//! Subcommand implementations.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use svdq_core::costmodel::{
    latency_estimate, traffic_bytes, HardwareModel, KernelPlan, PlanKind,
};
use svdq_core::diagnostics::{self, CompareOptions, ErrorReport};
use svdq_core::io::{load_layer_pack, load_tensor, save_layer_pack};
use svdq_core::pipeline::{
    self, default_alpha_grid, AlphaChoice, CalibrationSet, SvdquantOptions,
};
use svdq_core::quant::Preset;
use svdq_core::rng::Rng;
use svdq_core::Tensor;

use crate::{Command, SmoothingArgs};

/// 17 significant digits: enough for exact f64 round-trips, locale-free.
fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_preset(s: &str) -> Result<Preset> {
    Preset::parse(s).ok_or_else(|| {
        anyhow!("unknown preset `{s}` (expected int4, nvfp4, int8, or nf4-w4a16)")
    })
}

fn parse_alpha_choice(args: &SmoothingArgs) -> Result<AlphaChoice> {
    if args.no_smooth {
        return Ok(AlphaChoice::NoSmoothing);
    }
    if let Some(a) = args.alpha {
        if !(0.0..=1.0).contains(&a) {
            bail!("--alpha must lie in [0, 1], got {a}");
        }
        return Ok(AlphaChoice::Fixed(a));
    }
    match &args.alpha_grid {
        Some(list) if !list.is_empty() => {
            let grid: Vec<f64> = list
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .with_context(|| format!("bad alpha grid entry `{tok}`"))
                })
                .collect::<Result<_>>()?;
            if grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
                bail!("alpha grid entries must lie in [0, 1]");
            }
            Ok(AlphaChoice::Search(grid))
        }
        // Bare `--alpha-grid` or nothing: the default grid.
        _ => Ok(AlphaChoice::Search(default_alpha_grid())),
    }
}

/// Load calibration activations, or synthesize a seeded Gaussian batch
/// matched to the weight's input width when no file is given.
fn load_calibration(
    calib: Option<&PathBuf>,
    weights: &Tensor,
    seed: u64,
) -> Result<CalibrationSet> {
    let t = match calib {
        Some(path) => load_tensor(path)?,
        None => {
            eprintln!(
                "note: no --calib given, synthesizing 64 Gaussian rows (seed {seed})"
            );
            Rng::new(seed).normal_tensor(64, weights.rows())
        }
    };
    Ok(CalibrationSet::new(t)?)
}

/// Write to `--out` or stdout.
fn emit(out: Option<&PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

fn report_csv(reports: &[ErrorReport]) -> String {
    let mut csv = String::from("scheme,E,relative_E,x_norm,w_quant_err,x_quant_err,w_norm\n");
    for r in reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.scheme,
            g17(r.e),
            g17(r.relative_e),
            g17(r.x_norm),
            g17(r.w_quant_err),
            g17(r.x_quant_err),
            g17(r.w_norm)
        ));
    }
    csv
}

#[derive(Serialize)]
struct QuantizeReport {
    name: String,
    preset: String,
    rank: usize,
    alpha: f64,
    smoothing_disabled: bool,
    refine_iters: usize,
    gptq: bool,
    error: ErrorReport,
}

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Quantize {
            weights,
            calib,
            preset,
            rank,
            smoothing,
            iters,
            gptq,
            damping,
            seed,
            out,
        } => {
            let preset = parse_preset(&preset)?;
            let w = load_tensor(&weights)?;
            let x_cal = load_calibration(calib.as_ref(), &w, seed)?;
            let rank = rank.unwrap_or_else(|| preset.default_rank());
            let alpha = parse_alpha_choice(&smoothing)?;
            let opts = SvdquantOptions {
                alpha,
                refine_iters: iters,
                use_gptq: gptq,
                gptq_damping: damping,
                ..Default::default()
            };
            let layer = pipeline::svdquant(
                &x_cal,
                &w,
                rank,
                &preset.weight_cfg(),
                preset.act_cfg(),
                &opts,
            )?;
            let name = out
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "layer".to_string());
            save_layer_pack(&out, &name, &layer)?;
            let error = diagnostics::layer_report(&layer, &x_cal.activations, Some(&w))?;
            let report = QuantizeReport {
                name,
                preset: preset.name().to_string(),
                rank,
                alpha: layer.smoothing.alpha,
                smoothing_disabled: layer.smoothing.is_identity(),
                refine_iters: iters,
                gptq,
                error,
            };
            let json = serde_json::to_string_pretty(&report)?;
            std::fs::write(out.join("report.json"), &json)
                .with_context(|| format!("writing {}", out.join("report.json").display()))?;
            eprintln!("pack written to {}", out.display());
            println!("{json}");
            Ok(ExitCode::SUCCESS)
        }

        Command::Eval {
            pack,
            calib,
            weights,
            out,
        } => {
            let (_, layer) = load_layer_pack(&pack)?;
            let x = load_tensor(&calib)?;
            let w = weights.map(load_tensor).transpose()?;
            let report = diagnostics::layer_report(&layer, &x, w.as_ref())?;
            let json = serde_json::to_string_pretty(&report)?;
            emit(out.as_ref(), &format!("{json}\n"))?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Compare {
            weights,
            calib,
            preset,
            rank,
            smoothing,
            iters,
            seed,
            out,
        } => {
            let preset = parse_preset(&preset)?;
            let w = load_tensor(&weights)?;
            let x_cal = load_calibration(calib.as_ref(), &w, seed)?;
            let rank = rank.unwrap_or_else(|| preset.default_rank());
            let opts = CompareOptions {
                alpha: parse_alpha_choice(&smoothing)?,
                refine_iters: iters,
                gptq_damping: 0.01,
            };
            let reports = diagnostics::compare_schemes(
                &x_cal,
                &w,
                rank,
                &preset.weight_cfg(),
                preset.act_cfg(),
                &opts,
            )?;
            emit(out.as_ref(), &report_csv(&reports))?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Spectrum {
            weights,
            calib,
            preset,
            rank,
            smoothing,
            seed,
            out,
        } => {
            let preset = parse_preset(&preset)?;
            let w = load_tensor(&weights)?;
            let x_cal = load_calibration(calib.as_ref(), &w, seed)?;
            let rank = rank.unwrap_or_else(|| preset.default_rank());
            let alpha = parse_alpha_choice(&smoothing)?;
            let spec = match alpha {
                AlphaChoice::Fixed(a) => pipeline::compute_smoothing(&x_cal, &w, a)?,
                AlphaChoice::Search(grid) => {
                    pipeline::search_alpha(
                        &x_cal,
                        &w,
                        rank,
                        &preset.weight_cfg(),
                        preset.act_cfg().as_ref(),
                        &grid,
                        pipeline::AlphaObjective::Deployed,
                    )?
                    .1
                }
                AlphaChoice::NoSmoothing => {
                    pipeline::SmoothingSpec::identity(w.rows())
                }
            };
            let (_, w_hat) = pipeline::apply_smoothing(&x_cal.activations, &w, &spec)?;
            let (_, residual) = svdq_core::linalg::truncated_svd(&w_hat, rank)?;
            let sw = diagnostics::spectrum(&w)?;
            let swh = diagnostics::spectrum(&w_hat)?;
            let sr = diagnostics::spectrum(&residual)?;
            let mut csv = String::from("i,sigma_w,sigma_w_hat,sigma_r\n");
            for i in 0..sw.singular.len() {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    i,
                    g17(sw.singular[i]),
                    g17(swh.singular[i]),
                    g17(sr.singular[i])
                ));
            }
            emit(out.as_ref(), &csv)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Ranksweep {
            weights,
            calib,
            preset,
            ranks,
            smoothing,
            iters,
            gptq,
            seed,
            out,
        } => {
            let preset = parse_preset(&preset)?;
            let w = load_tensor(&weights)?;
            let x_cal = load_calibration(calib.as_ref(), &w, seed)?;
            let rank_list: Vec<usize> = ranks
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<usize>()
                        .with_context(|| format!("bad rank `{tok}`"))
                })
                .collect::<Result<_>>()?;
            if rank_list.is_empty() {
                bail!("--ranks must list at least one rank");
            }
            let alpha = parse_alpha_choice(&smoothing)?;
            let reference = x_cal.activations.matmul(&w)?.fro_norm();
            let (m, n) = w.shape();
            let mut csv = String::from("rank,relative_E,param_overhead\n");
            for &rank in &rank_list {
                let layer = pipeline::svdquant(
                    &x_cal,
                    &w,
                    rank,
                    &preset.weight_cfg(),
                    preset.act_cfg(),
                    &SvdquantOptions {
                        alpha: alpha.clone(),
                        refine_iters: iters,
                        use_gptq: gptq,
                        ..Default::default()
                    },
                )?;
                let e = diagnostics::layer_output_error(&layer, &x_cal.activations, &w)?;
                let relative = if reference > 0.0 { e / reference } else { 0.0 };
                let overhead =
                    (m as f64 * rank as f64 + n as f64 * rank as f64) / (m as f64 * n as f64);
                csv.push_str(&format!("{},{},{}\n", rank, g17(relative), g17(overhead)));
            }
            emit(out.as_ref(), &csv)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Costmodel {
            shape,
            rank,
            hw,
            out,
        } => {
            let dims: Vec<usize> = shape
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<usize>()
                        .with_context(|| format!("bad shape component `{tok}`"))
                })
                .collect::<Result<_>>()?;
            let [tokens, m, n]: [usize; 3] = dims
                .try_into()
                .map_err(|_| anyhow!("--shape must be tokens,in,out"))?;
            let hardware = match hw {
                Some(path) => {
                    let bytes = std::fs::read(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_slice::<HardwareModel>(&bytes)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => HardwareModel::default(),
            };
            let mut csv = String::from(
                "plan,main_bytes,lowrank_extra_bytes,seconds,overhead_fraction,flop_fraction\n",
            );
            for kind in [PlanKind::Unfused, PlanKind::Fused] {
                let plan = KernelPlan::new(kind, tokens, m, n, rank);
                let traffic = traffic_bytes(&plan);
                let est = latency_estimate(&plan, &hardware)?;
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    kind.name(),
                    g17(traffic.main_branch),
                    g17(traffic.lowrank_extra),
                    g17(est.seconds),
                    g17(est.overhead_fraction),
                    g17(est.flop_fraction)
                ));
            }
            emit(out.as_ref(), &csv)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::LoraFuse {
            pack,
            lora_a,
            lora_b,
            scale,
            out,
        } => {
            let (manifest, layer) = load_layer_pack(&pack)?;
            let a = load_tensor(&lora_a)?;
            let b = load_tensor(&lora_b)?;
            let fused = pipeline::lora_fuse(&layer, &a, &b, scale)?;
            let name = format!("{}+lora", manifest.name);
            save_layer_pack(&out, &name, &fused)?;
            eprintln!(
                "fused pack written to {} (rank {} -> {})",
                out.display(),
                layer.rank(),
                fused.rank()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Selftest => {
            let results = svdq_core::selftest::run_all();
            let mut all_pass = true;
            for r in &results {
                println!("{}", r.line());
                all_pass &= r.passed;
            }
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_round_trips() {
        for x in [0.1, 1.0 / 48.0, 65504.0, 1e-300, std::f64::consts::PI] {
            let s = g17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, x, "{s}");
        }
    }

    #[test]
    fn alpha_choice_parsing() {
        let args = SmoothingArgs {
            alpha: None,
            alpha_grid: Some("0.0, 0.5 ,1.0".into()),
            no_smooth: false,
        };
        match parse_alpha_choice(&args).unwrap() {
            AlphaChoice::Search(g) => assert_eq!(g, vec![0.0, 0.5, 1.0]),
            other => panic!("{other:?}"),
        }
        let bare = SmoothingArgs {
            alpha: None,
            alpha_grid: Some(String::new()),
            no_smooth: false,
        };
        match parse_alpha_choice(&bare).unwrap() {
            AlphaChoice::Search(g) => assert_eq!(g.len(), 21),
            other => panic!("{other:?}"),
        }
        let none = SmoothingArgs {
            alpha: None,
            alpha_grid: None,
            no_smooth: true,
        };
        assert_eq!(parse_alpha_choice(&none).unwrap(), AlphaChoice::NoSmoothing);
    }
}
