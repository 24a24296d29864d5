//! Rounding into narrow binary floating-point formats.
//!
//! All values stay in `f64`; these routines snap a double onto the lattice
//! of a narrower format using IEEE round-to-nearest-even, saturating at the
//! format's largest finite magnitude. Quanta are powers of two and rounded
//! significands are tiny integers, so every result is exact in `f64`.
//!
//! Formats used here:
//! - half precision (10 mantissa bits, min normal exponent -14, max 65504);
//! - FP8 E4M3 (3 mantissa bits, min normal exponent -6, max 448, no
//!   infinities; 448 is the largest finite code);
//! - FP4 E2M1 magnitudes {0, 0.5, 1, 1.5, 2, 3, 4, 6}.

/// FP4 E2M1 magnitude table indexed by the 3-bit exponent/mantissa field.
pub const FP4_MAGNITUDES: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];

pub const F16_MAX: f64 = 65504.0;
pub const FP8_E4M3_MAX: f64 = 448.0;
/// Smallest positive FP8 E4M3 value (subnormal), 2^-9.
pub const FP8_E4M3_MIN_POSITIVE: f64 = 1.0 / 512.0;
/// Smallest positive half-precision value (subnormal), 2^-24.
pub const F16_MIN_POSITIVE: f64 = 1.0 / 16_777_216.0;

/// Nearest half-precision value, ties to even, saturating at ±65504.
pub fn round_f16(x: f64) -> f64 {
    round_binary(x, 10, -14, F16_MAX)
}

/// Nearest FP8 E4M3 value, ties to even, saturating at ±448.
pub fn round_fp8_e4m3(x: f64) -> f64 {
    round_binary(x, 3, -6, FP8_E4M3_MAX)
}

/// Nearest single-precision value (the native conversion rounds to even).
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Snap to a binary format with `mant_bits` stored mantissa bits, minimum
/// normal exponent `min_exp`, and largest finite magnitude `max_val`.
fn round_binary(x: f64, mant_bits: i32, min_exp: i32, max_val: f64) -> f64 {
    if x == 0.0 || x.is_nan() {
        return if x.is_nan() { f64::NAN } else { 0.0 };
    }
    let a = x.abs();
    if a >= max_val {
        return max_val.copysign(x);
    }
    // Exponent e with 2^e <= a < 2^(e+1); log2 can land one off at
    // boundaries, so correct it explicitly.
    let mut e = a.log2().floor() as i32;
    if exp2i(e) > a {
        e -= 1;
    }
    if exp2i(e + 1) <= a {
        e += 1;
    }
    let quantum = exp2i(e.max(min_exp) - mant_bits);
    let q = (a / quantum).round_ties_even();
    let y = (q * quantum).min(max_val);
    y.copysign(x)
}

#[inline]
fn exp2i(e: i32) -> f64 {
    f64::powi(2.0, e)
}

/// Encode an on-lattice FP8 E4M3 value into its byte pattern
/// (sign, 4 exponent bits biased by 7, 3 mantissa bits).
pub fn fp8_e4m3_to_byte(v: f64) -> u8 {
    debug_assert!(round_fp8_e4m3(v) == v || v.is_nan(), "value not on lattice: {v}");
    if v.is_nan() {
        return 0x7F;
    }
    let sign = if v.is_sign_negative() { 0x80u8 } else { 0 };
    let a = v.abs();
    if a == 0.0 {
        return sign;
    }
    if a < exp2i(-6) {
        // Subnormal: value = m * 2^-9, m in 1..=7.
        let m = (a / exp2i(-9)) as u8;
        return sign | m;
    }
    let mut e = a.log2().floor() as i32;
    if exp2i(e) > a {
        e -= 1;
    }
    if exp2i(e + 1) <= a {
        e += 1;
    }
    let m = ((a / exp2i(e) - 1.0) * 8.0) as u8;
    sign | (((e + 7) as u8) << 3) | m
}

/// Decode an FP8 E4M3 byte pattern. Exponent field 15 with mantissa 7 is
/// NaN per the E4M3 convention (no infinities).
pub fn fp8_e4m3_from_byte(b: u8) -> f64 {
    let sign = if b & 0x80 != 0 { -1.0 } else { 1.0 };
    let e = ((b >> 3) & 0x0F) as i32;
    let m = (b & 0x07) as f64;
    if e == 15 && (b & 0x07) == 0x07 {
        return f64::NAN;
    }
    let a = if e == 0 {
        m * exp2i(-9)
    } else {
        (1.0 + m / 8.0) * exp2i(e - 7)
    };
    sign * a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f16_known_values() {
        assert_eq!(round_f16(1.0), 1.0);
        assert_eq!(round_f16(65504.0), 65504.0);
        assert_eq!(round_f16(70000.0), 65504.0);
        assert_eq!(round_f16(-70000.0), -65504.0);
        // 1 + 2^-11 is exactly between 1 and 1 + 2^-10; ties to even -> 1.
        assert_eq!(round_f16(1.0 + f64::powi(2.0, -11)), 1.0);
        // 1 + 3*2^-11 ties between 1+2^-10 and 1+2^-9 -> even mantissa 1+2^-9.
        assert_eq!(round_f16(1.0 + 3.0 * f64::powi(2.0, -11)), 1.0 + f64::powi(2.0, -9));
        assert_eq!(round_f16(0.0), 0.0);
        // Subnormal range survives.
        assert_eq!(round_f16(F16_MIN_POSITIVE), F16_MIN_POSITIVE);
        assert_eq!(round_f16(F16_MIN_POSITIVE * 0.49), 0.0);
    }

    #[test]
    fn fp8_known_values() {
        assert_eq!(round_fp8_e4m3(448.0), 448.0);
        assert_eq!(round_fp8_e4m3(1000.0), 448.0);
        assert_eq!(round_fp8_e4m3(447.9), 448.0);
        assert_eq!(round_fp8_e4m3(430.0), 416.0);
        assert_eq!(round_fp8_e4m3(1.0), 1.0);
        assert_eq!(round_fp8_e4m3(0.0625), 0.0625);
        assert_eq!(round_fp8_e4m3(FP8_E4M3_MIN_POSITIVE), FP8_E4M3_MIN_POSITIVE);
        assert_eq!(round_fp8_e4m3(FP8_E4M3_MIN_POSITIVE * 0.4), 0.0);
    }

    #[test]
    fn fp8_byte_round_trip_all_finite_codes() {
        for b in 0..=255u8 {
            let v = fp8_e4m3_from_byte(b);
            if v.is_nan() {
                continue;
            }
            // -0.0 encodes to 0x80 and decodes back to -0.0.
            assert_eq!(fp8_e4m3_to_byte(v), b, "byte {b:#x} -> {v} did not round-trip");
            // Every decodable value is a fixed point of the rounding.
            assert_eq!(round_fp8_e4m3(v), v);
        }
    }

    #[test]
    fn rounding_is_idempotent_and_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in -2000..=2000 {
            let x = i as f64 * 0.37;
            let y = round_fp8_e4m3(x);
            assert_eq!(round_fp8_e4m3(y), y);
            let h = round_f16(x);
            assert_eq!(round_f16(h), h);
            if i > -2000 {
                assert!(y >= prev - 1e-12, "non-monotone at {x}");
            }
            prev = y;
        }
    }

    #[test]
    fn rounding_picks_nearest() {
        // Between 416 (code step 32) and 448: midpoint 432 ties to even.
        // 416 = 1.101b*2^8 (mantissa 5, odd), 448 = 1.110b*2^8 (mantissa 6, even).
        assert_eq!(round_fp8_e4m3(432.0), 448.0);
        assert_eq!(round_fp8_e4m3(431.9), 416.0);
        assert_eq!(round_fp8_e4m3(432.1), 448.0);
    }
}
