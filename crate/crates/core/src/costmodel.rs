//! Analytic memory-traffic and latency model for the low-rank branch.
//!
//! The branch adds almost no arithmetic — `r(m+n)/(mn)` of the main GEMM —
//! but run as separate kernels it re-reads the 16-bit input, materializes a
//! 16-bit intermediate, and writes then re-reads a 16-bit partial output.
//! Fusing the down-projection into the quantize kernel and the
//! up-projection into the low-bit GEMM epilogue leaves only the rank-r
//! intermediate. Latency is a roofline estimate per kernel: the larger of
//! DRAM time and compute time, summed over the plan's kernels. The model
//! targets the fused/unfused ordering and the scaling in `r`, not absolute
//! kernel times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hardware throughput figures. The defaults are illustrative round numbers
/// for a modern accelerator, not measurements of any specific device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareModel {
    /// DRAM bandwidth in bytes per second.
    pub dram_bandwidth: f64,
    /// Low-bit tensor-core throughput in MACs per second.
    pub compute_rate_4bit: f64,
    /// 16-bit throughput in MACs per second.
    pub compute_rate_16bit: f64,
    /// L2 capacity in bytes; decides whether the unfused intermediate
    /// stays on chip.
    pub l2_capacity: f64,
}

impl Default for HardwareModel {
    fn default() -> Self {
        Self {
            dram_bandwidth: 1.0e12,
            compute_rate_4bit: 400.0e12,
            compute_rate_16bit: 80.0e12,
            l2_capacity: 48.0e6,
        }
    }
}

impl HardwareModel {
    pub fn validate(&self) -> Result<()> {
        const FIELDS: [&str; 4] = [
            "dram_bandwidth",
            "compute_rate_4bit",
            "compute_rate_16bit",
            "l2_capacity",
        ];
        let values = [
            self.dram_bandwidth,
            self.compute_rate_4bit,
            self.compute_rate_16bit,
            self.l2_capacity,
        ];
        for (value, what) in values.into_iter().zip(FIELDS) {
            if value.is_nan() || value <= 0.0 {
                return Err(Error::InvalidParam {
                    what,
                    requirement: "positive",
                });
            }
        }
        Ok(())
    }
}

/// Whether the low-rank branch runs as separate kernels or fused into the
/// quantize and low-bit GEMM kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Unfused,
    Fused,
}

impl PlanKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Unfused => "unfused",
            Self::Fused => "fused",
        }
    }
}

/// One layer execution: shape, branch rank, and storage widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelPlan {
    pub plan: PlanKind,
    /// Token count (rows of the activation).
    pub tokens: usize,
    /// Input channels.
    pub m: usize,
    /// Output channels.
    pub n: usize,
    /// Low-rank branch rank (0 disables the branch).
    pub rank: usize,
    pub act_bits: u32,
    pub weight_bits: u32,
    /// The branch always runs at 16 bits.
    pub branch_bits: u32,
    /// Quantization group size, for scale traffic.
    pub group_size: usize,
    /// Stored scale width in bits.
    pub scale_bits: u32,
}

impl KernelPlan {
    /// A plan with the 4-bit defaults: group size 64, 16-bit scales.
    pub fn new(plan: PlanKind, tokens: usize, m: usize, n: usize, rank: usize) -> Self {
        Self {
            plan,
            tokens,
            m,
            n,
            rank,
            act_bits: 4,
            weight_bits: 4,
            branch_bits: 16,
            group_size: 64,
            scale_bits: 16,
        }
    }
}

/// DRAM bytes split into the low-bit main branch and the extra traffic the
/// low-rank branch adds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrafficBreakdown {
    pub main_branch: f64,
    pub lowrank_extra: f64,
}

fn elem_bytes(bits: u32) -> f64 {
    bits as f64 / 8.0
}

/// Main-branch traffic common to every plan: the quantize kernel reads the
/// 16-bit input and writes packed codes plus scales; the GEMM kernel reads
/// both packed operands with scales and writes the 16-bit output.
fn main_branch_bytes(p: &KernelPlan) -> (f64, f64) {
    let t = p.tokens as f64;
    let m = p.m as f64;
    let n = p.n as f64;
    let groups_m = p.m.div_ceil(p.group_size) as f64;
    let act_codes = t * m * elem_bytes(p.act_bits);
    let act_scales = t * groups_m * elem_bytes(p.scale_bits);
    let w_codes = m * n * elem_bytes(p.weight_bits);
    let w_scales = groups_m * n * elem_bytes(p.scale_bits);
    let input_16 = t * m * elem_bytes(p.branch_bits);
    let output_16 = t * n * elem_bytes(p.branch_bits);
    let quantize_kernel = input_16 + act_codes + act_scales;
    let gemm_kernel = act_codes + act_scales + w_codes + w_scales + output_16;
    (quantize_kernel, gemm_kernel)
}

/// Extra DRAM bytes for the low-rank branch under each plan.
///
/// Unfused: re-read the 16-bit input, write and read the rank-r
/// intermediate, write the 16-bit partial output and re-read it for the
/// final add. Fused: only the intermediate is written and read; the input
/// is shared with the quantize kernel and the output is accumulated in the
/// GEMM epilogue.
pub fn traffic_bytes(p: &KernelPlan) -> TrafficBreakdown {
    let (q, g) = main_branch_bytes(p);
    let main_branch = q + g;
    if p.rank == 0 {
        return TrafficBreakdown {
            main_branch,
            lowrank_extra: 0.0,
        };
    }
    let t = p.tokens as f64;
    let m = p.m as f64;
    let n = p.n as f64;
    let r = p.rank as f64;
    let w16 = elem_bytes(p.branch_bits);
    let lowrank_extra = match p.plan {
        PlanKind::Unfused => w16 * (t * m + t * r + t * r + t * n + t * n),
        PlanKind::Fused => w16 * (t * r + t * r),
    };
    TrafficBreakdown {
        main_branch,
        lowrank_extra,
    }
}

/// Roofline latency of the plan plus its overhead over the branch-free
/// 4-bit baseline and the arithmetic fraction `r(m+n)/(mn)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyEstimate {
    pub seconds: f64,
    pub overhead_fraction: f64,
    pub flop_fraction: f64,
}

pub fn latency_estimate(p: &KernelPlan, hw: &HardwareModel) -> Result<LatencyEstimate> {
    hw.validate()?;
    let baseline = plan_seconds(&KernelPlan { rank: 0, ..*p }, hw);
    let seconds = plan_seconds(p, hw);
    let m = p.m as f64;
    let n = p.n as f64;
    let r = p.rank as f64;
    Ok(LatencyEstimate {
        seconds,
        overhead_fraction: (seconds - baseline) / baseline,
        flop_fraction: (m * r + n * r) / (m * n),
    })
}

fn kernel_time(bytes: f64, compute_seconds: f64, hw: &HardwareModel) -> f64 {
    (bytes / hw.dram_bandwidth).max(compute_seconds)
}

fn plan_seconds(p: &KernelPlan, hw: &HardwareModel) -> f64 {
    let (q_bytes, g_bytes) = main_branch_bytes(p);
    let t = p.tokens as f64;
    let m = p.m as f64;
    let n = p.n as f64;
    let r = p.rank as f64;
    let w16 = elem_bytes(p.branch_bits);
    let gemm_compute = t * m * n / hw.compute_rate_4bit;

    if p.rank == 0 {
        return kernel_time(q_bytes, 0.0, hw) + kernel_time(g_bytes, gemm_compute, hw);
    }

    let down_compute = t * r * m / hw.compute_rate_16bit;
    let up_compute = t * r * n / hw.compute_rate_16bit;
    let intermediate = w16 * t * r;

    match p.plan {
        PlanKind::Fused => {
            // Down projection inside the quantize kernel, up projection in
            // the GEMM epilogue; the intermediate still crosses DRAM.
            kernel_time(q_bytes + intermediate, down_compute, hw)
                + kernel_time(g_bytes + intermediate, gemm_compute + up_compute, hw)
        }
        PlanKind::Unfused => {
            // The rank-r intermediate may stay resident in L2; the re-read
            // 16-bit input and the partial-output round trip never do.
            let inter_dram = if intermediate <= hw.l2_capacity {
                0.0
            } else {
                intermediate
            };
            let down = kernel_time(w16 * t * m + inter_dram, down_compute, hw);
            let up = kernel_time(inter_dram + w16 * t * n, up_compute, hw);
            let gemm = kernel_time(g_bytes + w16 * t * n, gemm_compute, hw);
            kernel_time(q_bytes, 0.0, hw) + down + up + gemm
        }
    }
}
