//! Low-bit data types, scale computation, code packing, and the
//! quantize / dequantize pair.
//!
//! Quantization follows the absmax scheme: per scope (tensor, row, column,
//! or group) the scale is `absmax(scope) / q_max`, the scale is rounded to
//! its storage precision *before* codes are computed (stored scales are what
//! deployed kernels use), and each element is rounded onto the data type's
//! lattice. Integer rounding is half-away-from-zero; the FP4 and NF4
//! lattices round to the nearest level with ties going to the even code
//! index. A scope whose absmax is zero gets scale 1 and all-zero codes.
//!
//! Two-level scaling (the NVFP4 layout) stores a per-tensor 32-bit scale
//! `absmax / (q_max * 448)` and per-group FP8 E4M3 scales of
//! `group_absmax / (q_max * tensor_scale)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minifloat;
use crate::tensor::Tensor;

/// The 16 NF4 levels in ascending order, zero at index 7. These are the
/// normal-float quantiles defined by QLoRA, transcribed from the
/// bitsandbytes reference implementation (float32 constants widened).
const NF4_LEVELS: [f64; 16] = [
    -1.0,
    -0.6961928009986877,
    -0.5250730514526367,
    -0.3949174880981445,
    -0.28444138169288635,
    -0.18477343022823334,
    -0.09105003625154495,
    0.0,
    0.07958029955625534,
    0.16093020141124725,
    0.24611230194568634,
    0.33791524171829224,
    0.44070982933044434,
    0.5626170039176941,
    0.7229568362236023,
    1.0,
];

/// The fixed NF4 level table, ascending, spanning [-1, 1] with a zero level.
pub fn nf4_levels() -> [f64; 16] {
    NF4_LEVELS
}

/// FP4 E2M1 value table ordered ascending, paired with the sign-magnitude
/// code for each value. Zero appears once, as +0 (code 0).
const FP4_ORDERED: [(f64, u8); 15] = [
    (-6.0, 0x0F),
    (-4.0, 0x0E),
    (-3.0, 0x0D),
    (-2.0, 0x0C),
    (-1.5, 0x0B),
    (-1.0, 0x0A),
    (-0.5, 0x09),
    (0.0, 0x00),
    (0.5, 0x01),
    (1.0, 0x02),
    (1.5, 0x03),
    (2.0, 0x04),
    (3.0, 0x05),
    (4.0, 0x06),
    (6.0, 0x07),
];

/// Quantized element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantDType {
    /// Signed k-bit integer lattice, k in 2..=8, symmetric clamp at
    /// ±(2^(k-1) - 1).
    Int { bits: u8 },
    /// 4-bit float, 2 exponent bits, 1 mantissa bit.
    Fp4E2M1,
    /// 4-bit normal-float lattice (weight-only baseline).
    Nf4,
    /// 8-bit float, 4 exponent bits, 3 mantissa bits.
    Fp8E4M3,
}

impl QuantDType {
    pub fn int(bits: u8) -> Result<Self> {
        if (2..=8).contains(&bits) {
            Ok(Self::Int { bits })
        } else {
            Err(Error::InvalidBitWidth { bits })
        }
    }

    /// Largest representable magnitude on the unit lattice.
    pub fn q_max(&self) -> f64 {
        match self {
            Self::Int { bits } => ((1u32 << (bits - 1)) - 1) as f64,
            Self::Fp4E2M1 => 6.0,
            Self::Nf4 => 1.0,
            Self::Fp8E4M3 => minifloat::FP8_E4M3_MAX,
        }
    }

    /// Width of one packed code in bits (4 or 8).
    pub fn code_bits(&self) -> u8 {
        match self {
            Self::Int { bits } if *bits <= 4 => 4,
            Self::Fp4E2M1 | Self::Nf4 => 4,
            _ => 8,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Int { bits } => Self::int(*bits).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Round `v` onto this lattice; returns the raw code bit pattern.
    pub(crate) fn encode(&self, v: f64) -> u8 {
        match self {
            Self::Int { .. } => {
                let q = self.q_max();
                let r = v.round().clamp(-q, q);
                (r as i8 as u8) & if self.code_bits() == 4 { 0x0F } else { 0xFF }
            }
            Self::Fp4E2M1 => nearest_in_table(&FP4_ORDERED, v),
            Self::Nf4 => {
                let mut best = 0u8;
                let mut best_d = f64::INFINITY;
                for (idx, &lv) in NF4_LEVELS.iter().enumerate() {
                    let d = (v - lv).abs();
                    if d < best_d || (d == best_d && idx % 2 == 0 && best % 2 == 1) {
                        best_d = d;
                        best = idx as u8;
                    }
                }
                best
            }
            Self::Fp8E4M3 => minifloat::fp8_e4m3_to_byte(minifloat::round_fp8_e4m3(v)),
        }
    }

    /// Lattice value of a raw code bit pattern.
    pub fn decode(&self, code: u8) -> f64 {
        match self {
            Self::Int { .. } => {
                if self.code_bits() == 4 {
                    (((code << 4) as i8) >> 4) as f64
                } else {
                    code as i8 as f64
                }
            }
            Self::Fp4E2M1 => {
                let mag = minifloat::FP4_MAGNITUDES[(code & 0x07) as usize];
                if code & 0x08 != 0 {
                    -mag
                } else {
                    mag
                }
            }
            Self::Nf4 => NF4_LEVELS[(code & 0x0F) as usize],
            Self::Fp8E4M3 => minifloat::fp8_e4m3_from_byte(code),
        }
    }
}

fn nearest_in_table(table: &[(f64, u8)], v: f64) -> u8 {
    let mut best = table[0].1;
    let mut best_d = (v - table[0].0).abs();
    for &(val, code) in &table[1..] {
        let d = (v - val).abs();
        if d < best_d || (d == best_d && code % 2 == 0 && best % 2 == 1) {
            best_d = d;
            best = code;
        }
    }
    best
}

/// Which way groups run through a matrix.
///
/// Quantization groups cover the reduction dimension of the matmul they
/// feed: weight groups run down each column (`Rows`), activation groups run
/// along each row (`Cols`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAxis {
    Rows,
    Cols,
}

/// Scale granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One scale for the whole tensor.
    PerTensor,
    /// One scale per output column (weight layout m×n, scale per n).
    PerChannelOut,
    /// One scale per row (activation layout b×m, scale per token).
    PerToken,
    /// One scale per group of `size` consecutive elements along `along`.
    /// A short trailing group is allowed and uses its own absmax.
    PerGroup { size: usize, along: GroupAxis },
}

impl Granularity {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::PerGroup { size: 0, .. } => Err(Error::InvalidGroupSize),
            _ => Ok(()),
        }
    }

    /// Number of scales for a rows×cols tensor, as (scale_rows, scale_cols).
    /// The flat scale vector is this shape in row-major order.
    pub fn scale_dims(&self, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            Self::PerTensor => (1, 1),
            Self::PerChannelOut => (1, cols),
            Self::PerToken => (rows, 1),
            Self::PerGroup {
                size,
                along: GroupAxis::Rows,
            } => (rows.div_ceil(*size), cols),
            Self::PerGroup {
                size,
                along: GroupAxis::Cols,
            } => (rows, cols.div_ceil(*size)),
        }
    }

    pub fn scale_count(&self, rows: usize, cols: usize) -> usize {
        let (r, c) = self.scale_dims(rows, cols);
        r * c
    }

    /// Index into the flat scale vector for element (i, j).
    #[inline]
    pub fn scale_index(&self, rows: usize, cols: usize, i: usize, j: usize) -> usize {
        let _ = rows;
        match self {
            Self::PerTensor => 0,
            Self::PerChannelOut => j,
            Self::PerToken => i,
            Self::PerGroup {
                size,
                along: GroupAxis::Rows,
            } => (i / size) * cols + j,
            Self::PerGroup {
                size,
                along: GroupAxis::Cols,
            } => i * cols.div_ceil(*size) + j / size,
        }
    }

    /// True when the group size does not divide the grouped dimension.
    pub fn has_short_trailing_group(&self, rows: usize, cols: usize) -> bool {
        match self {
            Self::PerGroup {
                size,
                along: GroupAxis::Rows,
            } => !rows.is_multiple_of(*size),
            Self::PerGroup {
                size,
                along: GroupAxis::Cols,
            } => !cols.is_multiple_of(*size),
            _ => false,
        }
    }
}

/// Storage precision for scales. Scales are rounded to this precision
/// before codes are computed and round-trip bit-exactly thereafter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleDType {
    Real16,
    Fp8E4M3,
    Real32,
    /// Full working precision; the reference setting for error-bound checks.
    Real64,
}

impl ScaleDType {
    /// Round a raw scale to storage precision. A positive value that would
    /// flush to zero is clamped to the smallest positive representable so
    /// code computation never divides by zero.
    pub fn round(&self, raw: f64) -> f64 {
        let r = match self {
            Self::Real16 => minifloat::round_f16(raw),
            Self::Fp8E4M3 => minifloat::round_fp8_e4m3(raw),
            Self::Real32 => minifloat::round_f32(raw),
            Self::Real64 => raw,
        };
        if r == 0.0 && raw > 0.0 {
            match self {
                Self::Real16 => minifloat::F16_MIN_POSITIVE,
                Self::Fp8E4M3 => minifloat::FP8_E4M3_MIN_POSITIVE,
                Self::Real32 => f32::from_bits(1) as f64,
                Self::Real64 => raw,
            }
        } else {
            r
        }
    }
}

/// Full quantization recipe for one tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub dtype: QuantDType,
    pub granularity: Granularity,
    pub scale_dtype: ScaleDType,
    /// NVFP4-style two-level scaling: per-tensor 32-bit scale times
    /// per-group FP8 scales.
    pub two_level_scale: bool,
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        self.dtype.validate()?;
        self.granularity.validate()
    }

    /// INT4, groups of 64 down each weight column, 16-bit scales.
    pub fn int4_weight() -> Self {
        Self {
            dtype: QuantDType::Int { bits: 4 },
            granularity: Granularity::PerGroup {
                size: 64,
                along: GroupAxis::Rows,
            },
            scale_dtype: ScaleDType::Real16,
            two_level_scale: false,
        }
    }

    /// INT4, groups of 64 along each activation row, 16-bit scales.
    pub fn int4_activation() -> Self {
        Self {
            granularity: Granularity::PerGroup {
                size: 64,
                along: GroupAxis::Cols,
            },
            ..Self::int4_weight()
        }
    }

    /// FP4 E2M1, groups of 16 down each weight column, FP8 scales plus a
    /// per-tensor 32-bit scale.
    pub fn nvfp4_weight() -> Self {
        Self {
            dtype: QuantDType::Fp4E2M1,
            granularity: Granularity::PerGroup {
                size: 16,
                along: GroupAxis::Rows,
            },
            scale_dtype: ScaleDType::Fp8E4M3,
            two_level_scale: true,
        }
    }

    pub fn nvfp4_activation() -> Self {
        Self {
            granularity: Granularity::PerGroup {
                size: 16,
                along: GroupAxis::Cols,
            },
            ..Self::nvfp4_weight()
        }
    }

    /// INT8 per-output-channel weights, 32-bit scales.
    pub fn int8_weight() -> Self {
        Self {
            dtype: QuantDType::Int { bits: 8 },
            granularity: Granularity::PerChannelOut,
            scale_dtype: ScaleDType::Real32,
            two_level_scale: false,
        }
    }

    /// INT8 per-token dynamic activations, 32-bit scales.
    pub fn int8_activation() -> Self {
        Self {
            granularity: Granularity::PerToken,
            ..Self::int8_weight()
        }
    }

    /// NF4 weight-only baseline: groups of 64 down each column.
    pub fn nf4_weight() -> Self {
        Self {
            dtype: QuantDType::Nf4,
            granularity: Granularity::PerGroup {
                size: 64,
                along: GroupAxis::Rows,
            },
            scale_dtype: ScaleDType::Real16,
            two_level_scale: false,
        }
    }
}

/// Named weight/activation config bundles with their default branch rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Int4,
    Nvfp4,
    Int8,
    Nf4W4a16,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "int4" => Some(Self::Int4),
            "nvfp4" => Some(Self::Nvfp4),
            "int8" => Some(Self::Int8),
            "nf4-w4a16" => Some(Self::Nf4W4a16),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Int4 => "int4",
            Self::Nvfp4 => "nvfp4",
            Self::Int8 => "int8",
            Self::Nf4W4a16 => "nf4-w4a16",
        }
    }

    pub fn weight_cfg(&self) -> QuantConfig {
        match self {
            Self::Int4 => QuantConfig::int4_weight(),
            Self::Nvfp4 => QuantConfig::nvfp4_weight(),
            Self::Int8 => QuantConfig::int8_weight(),
            Self::Nf4W4a16 => QuantConfig::nf4_weight(),
        }
    }

    /// Activation config; `None` means activations stay in 16-bit.
    pub fn act_cfg(&self) -> Option<QuantConfig> {
        match self {
            Self::Int4 => Some(QuantConfig::int4_activation()),
            Self::Nvfp4 => Some(QuantConfig::nvfp4_activation()),
            Self::Int8 => Some(QuantConfig::int8_activation()),
            Self::Nf4W4a16 => None,
        }
    }

    /// Branch rank: 32 for 4-bit presets, 16 for the 8-bit preset.
    pub fn default_rank(&self) -> usize {
        match self {
            Self::Int8 => 16,
            _ => 32,
        }
    }
}

/// Packed low-bit tensor: codes, scales at storage precision, and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    codes: Vec<u8>,
    scales: Vec<f64>,
    tensor_scale: Option<f64>,
    rows: usize,
    cols: usize,
    config: QuantConfig,
}

impl QuantizedTensor {
    /// Reassemble from stored parts, validating lengths against the config.
    pub fn from_parts(
        codes: Vec<u8>,
        scales: Vec<f64>,
        tensor_scale: Option<f64>,
        rows: usize,
        cols: usize,
        config: QuantConfig,
    ) -> Result<Self> {
        config.validate()?;
        let expect_codes = packed_len(config.dtype, rows * cols);
        if codes.len() != expect_codes {
            return Err(Error::ManifestMismatch {
                field: "residual_codes",
                detail: format!("expected {} bytes, got {}", expect_codes, codes.len()),
            });
        }
        let expect_scales = config.granularity.scale_count(rows, cols);
        if scales.len() != expect_scales {
            return Err(Error::ManifestMismatch {
                field: "residual_scales",
                detail: format!("expected {} scales, got {}", expect_scales, scales.len()),
            });
        }
        if config.two_level_scale != tensor_scale.is_some() {
            return Err(Error::ManifestMismatch {
                field: "tensor_scale",
                detail: "presence must match two_level_scale".into(),
            });
        }
        Ok(Self {
            codes,
            scales,
            tensor_scale,
            rows,
            cols,
            config,
        })
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn tensor_scale(&self) -> Option<f64> {
        self.tensor_scale
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn config(&self) -> &QuantConfig {
        &self.config
    }

    pub fn has_short_trailing_group(&self) -> bool {
        self.config
            .granularity
            .has_short_trailing_group(self.rows, self.cols)
    }

    /// Raw code of element (i, j).
    pub fn code_at(&self, i: usize, j: usize) -> u8 {
        let flat = i * self.cols + j;
        if self.config.dtype.code_bits() == 4 {
            let byte = self.codes[flat / 2];
            if flat.is_multiple_of(2) {
                byte & 0x0F
            } else {
                byte >> 4
            }
        } else {
            self.codes[flat]
        }
    }

    /// Dequantized value of element (i, j).
    pub fn value_at(&self, i: usize, j: usize) -> f64 {
        let s = self.scales[self
            .config
            .granularity
            .scale_index(self.rows, self.cols, i, j)];
        let ts = self.tensor_scale.unwrap_or(1.0);
        self.config.dtype.decode(self.code_at(i, j)) * s * ts
    }
}

/// Pack 4-bit codes two per byte, low nibble first (even flat index).
/// An odd tail leaves the final high nibble zero.
pub fn pack_nibbles(codes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(codes.len().div_ceil(2));
    for pair in codes.chunks(2) {
        let lo = pair[0] & 0x0F;
        let hi = if pair.len() == 2 { pair[1] & 0x0F } else { 0 };
        out.push(lo | (hi << 4));
    }
    out
}

/// Inverse of [`pack_nibbles`]; `len` restores an odd element count.
pub fn unpack_nibbles(bytes: &[u8], len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    for &b in bytes {
        out.push(b & 0x0F);
        if out.len() == len {
            break;
        }
        out.push(b >> 4);
        if out.len() == len {
            break;
        }
    }
    out
}

/// Bytes needed for `count` packed codes of the given dtype.
pub fn packed_len(dtype: QuantDType, count: usize) -> usize {
    if dtype.code_bits() == 4 {
        count.div_ceil(2)
    } else {
        count
    }
}

/// Quantize a tensor under the given config.
pub fn quantize(t: &Tensor, cfg: &QuantConfig) -> Result<QuantizedTensor> {
    t.ensure_finite("quantize input")?;
    cfg.validate()?;
    let (rows, cols) = t.shape();
    let q_max = cfg.dtype.q_max();

    let tensor_scale = if cfg.two_level_scale {
        let raw = t.absmax() / (q_max * minifloat::FP8_E4M3_MAX);
        let r = ScaleDType::Real32.round(raw);
        Some(if r == 0.0 { 1.0 } else { r })
    } else {
        None
    };
    let ts = tensor_scale.unwrap_or(1.0);

    // One pass to collect per-scope absmax, then snap to storage precision.
    let scale_count = cfg.granularity.scale_count(rows, cols);
    let mut scales = vec![0.0f64; scale_count];
    for i in 0..rows {
        for (j, &x) in t.row(i).iter().enumerate() {
            let idx = cfg.granularity.scale_index(rows, cols, i, j);
            let a = x.abs();
            if a > scales[idx] {
                scales[idx] = a;
            }
        }
    }
    for s in &mut scales {
        *s = finalize_scale(*s, q_max, ts, cfg.scale_dtype);
    }

    let mut raw_codes = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for (j, &x) in t.row(i).iter().enumerate() {
            let s = scales[cfg.granularity.scale_index(rows, cols, i, j)];
            raw_codes.push(cfg.dtype.encode(x / (s * ts)));
        }
    }

    let codes = if cfg.dtype.code_bits() == 4 {
        pack_nibbles(&raw_codes)
    } else {
        raw_codes
    };

    Ok(QuantizedTensor {
        codes,
        scales,
        tensor_scale,
        rows,
        cols,
        config: *cfg,
    })
}

/// Scale for a scope with the given absmax: `absmax / (q_max * tensor_scale)`
/// rounded to storage precision, or 1 for an all-zero scope.
pub(crate) fn finalize_scale(absmax: f64, q_max: f64, tensor_scale: f64, dtype: ScaleDType) -> f64 {
    if absmax == 0.0 {
        1.0
    } else {
        dtype.round(absmax / (q_max * tensor_scale))
    }
}

/// Reconstruct the dense tensor `scale * code` (times the tensor scale in
/// two-level mode).
pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    Tensor::from_fn(q.rows, q.cols, |i, j| q.value_at(i, j))
}

/// `dequantize(quantize(t))`: the simulated-quantization view of a tensor.
pub fn fake_quant(t: &Tensor, cfg: &QuantConfig) -> Result<Tensor> {
    Ok(dequantize(&quantize(t, cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn per_tensor(dtype: QuantDType, scale_dtype: ScaleDType) -> QuantConfig {
        QuantConfig {
            dtype,
            granularity: Granularity::PerTensor,
            scale_dtype,
            two_level_scale: false,
        }
    }

    fn int4_pt() -> QuantConfig {
        per_tensor(QuantDType::Int { bits: 4 }, ScaleDType::Real64)
    }

    #[test]
    fn q_max_constants() {
        assert_eq!(QuantDType::Int { bits: 4 }.q_max(), 7.0);
        assert_eq!(QuantDType::Int { bits: 8 }.q_max(), 127.0);
        assert_eq!(QuantDType::Int { bits: 2 }.q_max(), 1.0);
        assert_eq!(QuantDType::Fp4E2M1.q_max(), 6.0);
        assert_eq!(QuantDType::Fp8E4M3.q_max(), 448.0);
        assert_eq!(QuantDType::Nf4.q_max(), 1.0);
    }

    #[test]
    fn int4_per_tensor_hand_example() {
        let x = Tensor::from_vec(2, 2, vec![1.75, -3.5, 7.0, 0.0]).unwrap();
        let q = quantize(&x, &int4_pt()).unwrap();
        assert_eq!(q.scales(), &[1.0]);
        // -3.5 rounds away from zero to -4.
        let codes: Vec<f64> = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| QuantDType::Int { bits: 4 }.decode(q.code_at(i, j)))
            .collect();
        assert_eq!(codes, vec![2.0, -4.0, 7.0, 0.0]);
        let d = dequantize(&q);
        assert_eq!(d.data(), &[2.0, -4.0, 7.0, 0.0]);
    }

    #[test]
    fn int4_grouped_hand_example() {
        let x = Tensor::from_vec(1, 4, vec![3.0, 7.0, 60.0, 140.0]).unwrap();
        let cfg = QuantConfig {
            dtype: QuantDType::Int { bits: 4 },
            granularity: Granularity::PerGroup {
                size: 2,
                along: GroupAxis::Cols,
            },
            scale_dtype: ScaleDType::Real16,
            two_level_scale: false,
        };
        let q = quantize(&x, &cfg).unwrap();
        assert_eq!(q.scales(), &[1.0, 20.0]);
        let decoded: Vec<f64> = (0..4)
            .map(|j| QuantDType::Int { bits: 4 }.decode(q.code_at(0, j)))
            .collect();
        assert_eq!(decoded, vec![3.0, 7.0, 3.0, 7.0]);
    }

    #[test]
    fn all_zero_tensor() {
        for cfg in [
            int4_pt(),
            QuantConfig::int4_weight(),
            QuantConfig::nvfp4_weight(),
            QuantConfig::int8_activation(),
        ] {
            let x = Tensor::zeros(4, 8);
            let q = quantize(&x, &cfg).unwrap();
            assert!(q.scales().iter().all(|&s| s == 1.0));
            assert_eq!(dequantize(&q), Tensor::zeros(4, 8));
        }
    }

    #[test]
    fn fp4_scalar_hand_example() {
        let x = Tensor::from_vec(1, 1, vec![0.9]).unwrap();
        let cfg = per_tensor(QuantDType::Fp4E2M1, ScaleDType::Real64);
        let q = quantize(&x, &cfg).unwrap();
        // scale = 0.9/6 = 0.15, 0.9/0.15 = 6 -> top magnitude code.
        assert!((q.scales()[0] - 0.15).abs() < 1e-15);
        assert_eq!(q.code_at(0, 0), 0x07);
        let out = dequantize(&q);
        assert!((out.get(0, 0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn lattice_exact_round_trip() {
        // Values already on the scaled lattice with absmax at q_max*s.
        let s = 0.25;
        let x = Tensor::from_vec(1, 5, vec![7.0 * s, -7.0 * s, 3.0 * s, 0.0, -s]).unwrap();
        let q = quantize(&x, &int4_pt()).unwrap();
        assert_eq!(dequantize(&q), x);
    }

    #[test]
    fn nf4_lattice_fixed_point() {
        let levels = nf4_levels();
        assert_eq!(levels[7], 0.0);
        assert_eq!(levels[0], -1.0);
        assert_eq!(levels[15], 1.0);
        for w in levels.windows(2) {
            assert!(w[0] < w[1]);
        }
        for c in [0.5, 1.0, 3.75] {
            let x = Tensor::from_vec(1, 16, levels.iter().map(|&l| l * c).collect()).unwrap();
            let cfg = per_tensor(QuantDType::Nf4, ScaleDType::Real64);
            let q = quantize(&x, &cfg).unwrap();
            assert_eq!(dequantize(&q), x, "c = {c}");
        }
    }

    #[test]
    fn fake_quant_idempotent_per_tensor() {
        let mut rng = crate::rng::Rng::new(17);
        for _ in 0..100 {
            let x = rng.normal_tensor(8, 8);
            for cfg in [int4_pt(), per_tensor(QuantDType::Int { bits: 4 }, ScaleDType::Real16)] {
                let once = fake_quant(&x, &cfg).unwrap();
                let twice = fake_quant(&once, &cfg).unwrap();
                assert_eq!(once, twice);
            }
        }
    }

    #[test]
    fn round_trip_error_bound() {
        let mut rng = crate::rng::Rng::new(5);
        for trial in 0..200 {
            let x = rng.normal_tensor(6, 6).scale(1.0 + (trial % 13) as f64);
            let q = QuantDType::Int { bits: 4 }.q_max();
            let fq = fake_quant(&x, &int4_pt()).unwrap();
            let s = x.absmax() / q;
            let worst = x
                .sub(&fq)
                .unwrap()
                .data()
                .iter()
                .fold(0.0f64, |m, &d| m.max(d.abs()));
            assert!(worst <= s / 2.0 + 1e-12, "worst {worst} > s/2 {}", s / 2.0);
        }
    }

    #[test]
    fn two_level_nvfp4_scales() {
        let mut rng = crate::rng::Rng::new(23);
        let x = rng.normal_tensor(32, 16).scale(10.0);
        let q = quantize(&x, &QuantConfig::nvfp4_weight()).unwrap();
        let ts = q.tensor_scale().unwrap();
        assert!((ts - x.absmax() / (6.0 * 448.0)).abs() <= ts * 1e-6);
        // Group scales are on the FP8 lattice.
        for &s in q.scales() {
            assert_eq!(minifloat::round_fp8_e4m3(s), s);
            assert!(s <= 448.0);
        }
        // Reconstruction error stays within one FP4 step per group.
        let d = dequantize(&q);
        let err = x.sub(&d).unwrap().absmax();
        assert!(err <= x.absmax() * 0.6, "err {err}");
    }

    #[test]
    fn short_trailing_group_flagged_and_used() {
        let x = Tensor::from_vec(1, 5, vec![1.0, 2.0, 3.0, 4.0, 70.0]).unwrap();
        let cfg = QuantConfig {
            dtype: QuantDType::Int { bits: 4 },
            granularity: Granularity::PerGroup {
                size: 2,
                along: GroupAxis::Cols,
            },
            scale_dtype: ScaleDType::Real64,
            two_level_scale: false,
        };
        let q = quantize(&x, &cfg).unwrap();
        assert!(q.has_short_trailing_group());
        assert_eq!(q.scales().len(), 3);
        assert_eq!(q.scales()[2], 10.0);
    }

    #[test]
    fn scale_storage_round_trips_bit_exactly() {
        let mut rng = crate::rng::Rng::new(31);
        let x = rng.normal_tensor(16, 16).scale(3.7);
        for cfg in [
            QuantConfig::int4_weight(),
            QuantConfig::nvfp4_weight(),
            QuantConfig::int8_weight(),
        ] {
            let q = quantize(&x, &cfg).unwrap();
            for &s in q.scales() {
                assert_eq!(cfg.scale_dtype.round(s), s);
            }
        }
    }

    #[test]
    fn dtype_encode_decode_in_representable_set() {
        let fp4_vals: Vec<f64> = FP4_ORDERED.iter().map(|&(v, _)| v).collect();
        for v in [-7.0, -5.1, -0.26, 0.0, 0.24, 0.26, 1.24, 5.0, 9.0] {
            let c = QuantDType::Fp4E2M1.encode(v);
            let d = QuantDType::Fp4E2M1.decode(c);
            assert!(fp4_vals.contains(&d), "{v} -> {d}");
        }
        // Spot checks: 5.0 ties between 4 and 6 -> even code (4, code 6).
        assert_eq!(QuantDType::Fp4E2M1.decode(QuantDType::Fp4E2M1.encode(5.0)), 4.0);
        assert_eq!(QuantDType::Fp4E2M1.decode(QuantDType::Fp4E2M1.encode(0.25)), 0.0);
        assert_eq!(QuantDType::Fp4E2M1.decode(QuantDType::Fp4E2M1.encode(-0.25)), 0.0);
        assert_eq!(QuantDType::Fp4E2M1.decode(QuantDType::Fp4E2M1.encode(-5.0)), -4.0);
    }

    #[test]
    fn fp8_as_data_dtype() {
        // absmax maps to 448, so the scale is exactly 1 here.
        let x = Tensor::from_vec(1, 3, vec![448.0, -100.0, 0.5]).unwrap();
        let cfg = per_tensor(QuantDType::Fp8E4M3, ScaleDType::Real64);
        let q = quantize(&x, &cfg).unwrap();
        assert_eq!(q.scales(), &[1.0]);
        let d = dequantize(&q);
        assert_eq!(d.get(0, 0), 448.0);
        // 100 ties between 96 (even mantissa) and 104 -> 96.
        assert_eq!(d.get(0, 1), -96.0);
        assert_eq!(d.get(0, 2), 0.5);
    }

    #[test]
    fn int_bit_widths_validated() {
        assert!(QuantDType::int(1).is_err());
        assert!(QuantDType::int(9).is_err());
        assert!(QuantDType::int(2).is_ok());
        let bad = QuantConfig {
            dtype: QuantDType::Int { bits: 12 },
            ..QuantConfig::int4_weight()
        };
        assert!(quantize(&Tensor::zeros(2, 2), &bad).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let mut x = Tensor::zeros(2, 2);
        x.set(0, 0, f64::NAN);
        assert!(quantize(&x, &int4_pt()).is_err());
    }

    #[test]
    fn zero_group_size_rejected() {
        let cfg = QuantConfig {
            granularity: Granularity::PerGroup {
                size: 0,
                along: GroupAxis::Rows,
            },
            ..QuantConfig::int4_weight()
        };
        assert!(matches!(
            quantize(&Tensor::zeros(2, 2), &cfg),
            Err(Error::InvalidGroupSize)
        ));
    }

    #[test]
    fn config_serde_round_trip() {
        for cfg in [
            QuantConfig::int4_weight(),
            QuantConfig::nvfp4_activation(),
            QuantConfig::int8_activation(),
            QuantConfig::nf4_weight(),
        ] {
            let js = serde_json::to_string(&cfg).unwrap();
            let back: QuantConfig = serde_json::from_str(&js).unwrap();
            assert_eq!(cfg, back);
        }
    }
}
