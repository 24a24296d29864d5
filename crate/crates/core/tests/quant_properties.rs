//! Property tests for the quantizer: packing bijection, idempotence,
//! scale equivariance, and the half-step round-trip bound.

use proptest::prelude::*;

use svdq_core::quant::{
    fake_quant, pack_nibbles, unpack_nibbles, Granularity, QuantConfig, QuantDType, ScaleDType,
};
use svdq_core::Tensor;

fn per_tensor(bits: u8, scale_dtype: ScaleDType) -> QuantConfig {
    QuantConfig {
        dtype: QuantDType::Int { bits },
        granularity: Granularity::PerTensor,
        scale_dtype,
        two_level_scale: false,
    }
}

proptest! {
    // Pack/unpack is a bijection for every code vector, including odd
    // lengths where the trailing high nibble is padding.
    #[test]
    fn nibble_packing_bijection(codes in prop::collection::vec(0u8..16, 1..=257)) {
        let packed = pack_nibbles(&codes);
        prop_assert_eq!(packed.len(), codes.len().div_ceil(2));
        let back = unpack_nibbles(&packed, codes.len());
        prop_assert_eq!(back, codes);
    }

    // Per-tensor int4 with 16-bit scales is exactly idempotent: the
    // recovered scale of an already-quantized tensor is the stored scale.
    #[test]
    fn fake_quant_idempotent(
        vals in prop::collection::vec(-100.0f64..100.0, 1..=64),
        cols in 1usize..=8,
    ) {
        let cols = cols.min(vals.len());
        let rows = vals.len() / cols;
        let t = Tensor::from_vec(rows, cols, vals[..rows * cols].to_vec()).unwrap();
        let cfg = per_tensor(4, ScaleDType::Real16);
        let once = fake_quant(&t, &cfg).unwrap();
        let twice = fake_quant(&once, &cfg).unwrap();
        prop_assert_eq!(once, twice);
    }

    // Fake-quant error never exceeds half a lattice step (plus float fuzz)
    // for per-tensor integer quantization at reference scale precision.
    #[test]
    fn round_trip_half_step_bound(
        vals in prop::collection::vec(-1000.0f64..1000.0, 1..=64),
        bits in 2u8..=8,
    ) {
        let t = Tensor::from_vec(1, vals.len(), vals).unwrap();
        let cfg = per_tensor(bits, ScaleDType::Real64);
        let q_max = cfg.dtype.q_max();
        let fq = fake_quant(&t, &cfg).unwrap();
        let worst = t.sub(&fq).unwrap().data().iter().fold(0.0f64, |m, &d| m.max(d.abs()));
        prop_assert!(worst <= t.absmax() / (2.0 * q_max) + 1e-12);
    }

    // Scale equivariance: fake_quant(c X) = c fake_quant(X) up to scale
    // rounding. Inputs are kept on a lattice so no code sits on a rounding
    // boundary, and magnitudes stay inside the representable range of
    // 16-bit scales; the residual wobble is then bounded by the scale
    // storage, 2^-10 relative.
    #[test]
    fn scale_equivariance_on_lattice(
        codes in prop::collection::vec(-7i32..=7, 2..=48),
        scale_exp in -8i32..=4,
        c in 0.001f64..1000.0,
    ) {
        let mut codes = codes;
        codes[0] = 7; // pin the clip point so the stored scale is exact
        let s0 = f64::powi(2.0, scale_exp);
        let vals: Vec<f64> = codes.iter().map(|&k| k as f64 * s0).collect();
        let x = Tensor::from_vec(1, vals.len(), vals).unwrap();
        let cfg = per_tensor(4, ScaleDType::Real16);
        let left = fake_quant(&x.scale(c), &cfg).unwrap();
        let right = fake_quant(&x, &cfg).unwrap().scale(c);
        let worst = left.sub(&right).unwrap().data().iter().fold(0.0f64, |m, &d| m.max(d.abs()));
        let budget = f64::powi(2.0, -10) * c * x.absmax();
        prop_assert!(worst <= budget, "worst {} > budget {}", worst, budget);
    }

    // Power-of-two rescaling commutes exactly: the stored scale scales by
    // the same power of two and every code is unchanged.
    #[test]
    fn power_of_two_equivariance_exact(
        vals in prop::collection::vec(-50.0f64..50.0, 1..=32),
        exp in -6i32..=6,
    ) {
        let c = f64::powi(2.0, exp);
        let x = Tensor::from_vec(1, vals.len(), vals).unwrap();
        let cfg = per_tensor(4, ScaleDType::Real16);
        let left = fake_quant(&x.scale(c), &cfg).unwrap();
        let right = fake_quant(&x, &cfg).unwrap().scale(c);
        prop_assert_eq!(left, right);
    }
}

#[test]
fn unpack_ignores_padding_nibble() {
    let codes = vec![0x0F, 0x03, 0x0A];
    let packed = pack_nibbles(&codes);
    assert_eq!(packed.len(), 2);
    assert_eq!(packed[1] >> 4, 0, "pad nibble must be zero");
    assert_eq!(unpack_nibbles(&packed, 3), codes);
}
