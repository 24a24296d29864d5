//! On-disk formats: the `.svdqt` tensor container and the layer-pack
//! directory.
//!
//! Tensor file layout (all little-endian):
//!
//! ```text
//! offset 0   magic   "SVDQT\0" (6 bytes)
//!        6   version u16 (= 1)
//!        8   dtype   u8  (0 = real64, 1 = real32)
//!        9   ndim    u8  (= 2)
//!        10  dims    2 x u64 (rows, cols)
//!        26  payload row-major scalars
//! ```
//!
//! A layer pack is a directory holding `manifest.json` plus raw payloads:
//! `lambda.svdqt` (1×m), `l1.svdqt` (m×r), `l2.svdqt` (r×n),
//! `residual_codes.bin` (packed codes, low nibble first for 4-bit types),
//! `residual_scales.svdqt`, and `tensor_scale.svdqt` (1×1) in two-level
//! mode. Saving always writes real64 payloads, so a load-save round trip
//! is bitwise lossless.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::LowRankPair;
use crate::pipeline::{QuantizedLinear, SmoothingSpec};
use crate::quant::{packed_len, QuantConfig, QuantizedTensor};
use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"SVDQT\0";
const FORMAT_VERSION: u16 = 1;
const DTYPE_REAL64: u8 = 0;
const DTYPE_REAL32: u8 = 1;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write a tensor as a real64 `.svdqt` file.
pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |buf: &[u8]| w.write_all(buf).map_err(|e| io_err(path, e));
    emit(MAGIC)?;
    emit(&FORMAT_VERSION.to_le_bytes())?;
    emit(&[DTYPE_REAL64, 2])?;
    emit(&(t.rows() as u64).to_le_bytes())?;
    emit(&(t.cols() as u64).to_le_bytes())?;
    for &x in t.data() {
        emit(&x.to_le_bytes())?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read a `.svdqt` file, rejecting malformed headers with a diagnostic
/// naming the offending field.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    parse_tensor(&bytes)
}

fn parse_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 6 || &bytes[..6] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 26 {
        return Err(Error::TruncatedPayload {
            expected: 26,
            got: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != FORMAT_VERSION {
        return Err(Error::BadVersion { version });
    }
    let dtype = bytes[8];
    if dtype != DTYPE_REAL64 && dtype != DTYPE_REAL32 {
        return Err(Error::BadDType { code: dtype });
    }
    let ndim = bytes[9];
    if ndim != 2 {
        return Err(Error::BadNDim { ndim });
    }
    let rows = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[18..26].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or(Error::TruncatedPayload {
            expected: usize::MAX,
            got: bytes.len(),
        })?;
    let width = if dtype == DTYPE_REAL64 { 8 } else { 4 };
    let expected = 26 + count * width;
    if bytes.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            got: bytes.len(),
        });
    }
    let payload = &bytes[26..];
    let data: Vec<f64> = if dtype == DTYPE_REAL64 {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    } else {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    };
    Tensor::from_vec(rows, cols, data)
}

/// Layer-pack metadata. `format_version` gates future layout changes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PackManifest {
    pub format_version: u32,
    pub name: String,
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub alpha: f64,
    pub weight_cfg: QuantConfig,
    pub act_cfg: Option<QuantConfig>,
}

const PACK_VERSION: u32 = 1;

/// Persist a quantized layer into `dir` (created if missing).
pub fn save_layer_pack(dir: impl AsRef<Path>, name: &str, layer: &QuantizedLinear) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let manifest = PackManifest {
        format_version: PACK_VERSION,
        name: name.to_string(),
        m: layer.m,
        n: layer.n,
        rank: layer.rank(),
        alpha: layer.smoothing.alpha,
        weight_cfg: layer.weight_cfg,
        act_cfg: layer.act_cfg,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;

    let lambda = Tensor::from_vec(1, layer.m, layer.smoothing.lambda.clone())?;
    save_tensor(dir.join("lambda.svdqt"), &lambda)?;
    save_tensor(dir.join("l1.svdqt"), &layer.branch.l1)?;
    save_tensor(dir.join("l2.svdqt"), &layer.branch.l2)?;

    let codes_path = dir.join("residual_codes.bin");
    fs::write(&codes_path, layer.residual_q.codes()).map_err(|e| io_err(&codes_path, e))?;

    let (srows, scols) = layer
        .weight_cfg
        .granularity
        .scale_dims(layer.m, layer.n);
    let scales = Tensor::from_vec(srows, scols, layer.residual_q.scales().to_vec())?;
    save_tensor(dir.join("residual_scales.svdqt"), &scales)?;

    if let Some(ts) = layer.residual_q.tensor_scale() {
        save_tensor(dir.join("tensor_scale.svdqt"), &Tensor::from_vec(1, 1, vec![ts])?)?;
    }
    Ok(())
}

/// Load a layer pack, validating every file against the manifest.
pub fn load_layer_pack(dir: impl AsRef<Path>) -> Result<(PackManifest, QuantizedLinear)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let manifest_bytes = fs::read(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: PackManifest = serde_json::from_slice(&manifest_bytes)?;
    if manifest.format_version != PACK_VERSION {
        return Err(Error::BadVersion {
            version: manifest.format_version as u16,
        });
    }
    manifest.weight_cfg.validate()?;

    let lambda_t = load_tensor(dir.join("lambda.svdqt"))?;
    if lambda_t.shape() != (1, manifest.m) {
        return Err(Error::ManifestMismatch {
            field: "lambda",
            detail: format!("expected 1x{}, got {:?}", manifest.m, lambda_t.shape()),
        });
    }
    let l1 = load_tensor(dir.join("l1.svdqt"))?;
    if l1.shape() != (manifest.m, manifest.rank) {
        return Err(Error::ManifestMismatch {
            field: "l1",
            detail: format!(
                "expected {}x{}, got {:?}",
                manifest.m, manifest.rank, l1.shape()
            ),
        });
    }
    let l2 = load_tensor(dir.join("l2.svdqt"))?;
    if l2.shape() != (manifest.rank, manifest.n) {
        return Err(Error::ManifestMismatch {
            field: "l2",
            detail: format!(
                "expected {}x{}, got {:?}",
                manifest.rank, manifest.n, l2.shape()
            ),
        });
    }

    let codes_path = dir.join("residual_codes.bin");
    let codes = fs::read(&codes_path).map_err(|e| io_err(&codes_path, e))?;
    let expected_codes = packed_len(manifest.weight_cfg.dtype, manifest.m * manifest.n);
    if codes.len() != expected_codes {
        return Err(Error::ManifestMismatch {
            field: "residual_codes",
            detail: format!("expected {} bytes, got {}", expected_codes, codes.len()),
        });
    }

    let scales_t = load_tensor(dir.join("residual_scales.svdqt"))?;
    let expect_dims = manifest
        .weight_cfg
        .granularity
        .scale_dims(manifest.m, manifest.n);
    if scales_t.shape() != expect_dims {
        return Err(Error::ManifestMismatch {
            field: "residual_scales",
            detail: format!("expected {:?}, got {:?}", expect_dims, scales_t.shape()),
        });
    }

    let tensor_scale = if manifest.weight_cfg.two_level_scale {
        let ts = load_tensor(dir.join("tensor_scale.svdqt"))?;
        if ts.shape() != (1, 1) {
            return Err(Error::ManifestMismatch {
                field: "tensor_scale",
                detail: format!("expected 1x1, got {:?}", ts.shape()),
            });
        }
        Some(ts.get(0, 0))
    } else {
        None
    };

    let residual_q = QuantizedTensor::from_parts(
        codes,
        scales_t.data().to_vec(),
        tensor_scale,
        manifest.m,
        manifest.n,
        manifest.weight_cfg,
    )?;

    let layer = QuantizedLinear {
        smoothing: SmoothingSpec {
            alpha: manifest.alpha,
            lambda: lambda_t.data().to_vec(),
        },
        branch: LowRankPair {
            l1,
            l2,
            rank: manifest.rank,
        },
        residual_q,
        weight_cfg: manifest.weight_cfg,
        act_cfg: manifest.act_cfg,
        m: manifest.m,
        n: manifest.n,
    };
    Ok((manifest, layer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{svdquant, AlphaChoice, CalibrationSet, SvdquantOptions};
    use crate::rng::Rng;

    #[test]
    fn tensor_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(1);
        for (rows, cols) in [(1usize, 1usize), (3, 5), (7, 2), (1, 9)] {
            let t = rng.normal_tensor(rows, cols);
            let path = dir.path().join(format!("t_{rows}x{cols}.svdqt"));
            save_tensor(&path, &t).unwrap();
            let back = load_tensor(&path).unwrap();
            assert_eq!(t, back);
        }
    }

    #[test]
    fn empty_file_is_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.svdqt");
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(load_tensor(&path), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_payload_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.svdqt");
        let t = Tensor::zeros(2, 3);
        save_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(26 + 5 * 8); // 5 of 6 elements
        std::fs::write(&path, &bytes).unwrap();
        match load_tensor(&path) {
            Err(Error::TruncatedPayload { expected, got }) => {
                assert_eq!(expected, 26 + 48);
                assert_eq!(got, 26 + 40);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_and_dtype_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.svdqt");
        save_tensor(&path, &Tensor::zeros(1, 1)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[6] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_tensor(&path), Err(Error::BadVersion { version: 9 })));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[6] = 1;
        bytes[8] = 7;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_tensor(&path), Err(Error::BadDType { code: 7 })));
    }

    #[test]
    fn real32_payloads_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.svdqt");
        let vals = [1.5f32, -2.25, 0.125];
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(DTYPE_REAL32);
        bytes.push(2);
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        for v in vals {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let t = load_tensor(&path).unwrap();
        assert_eq!(t.data(), &[1.5, -2.25, 0.125]);
    }

    fn sample_layer(two_level: bool) -> (Tensor, QuantizedLinear) {
        let mut rng = Rng::new(42);
        let x = rng.normal_tensor(6, 8);
        let w = rng.normal_tensor(8, 5);
        let weight_cfg = if two_level {
            QuantConfig::nvfp4_weight()
        } else {
            QuantConfig::int4_weight()
        };
        let act_cfg = if two_level {
            QuantConfig::nvfp4_activation()
        } else {
            QuantConfig::int4_activation()
        };
        let layer = svdquant(
            &CalibrationSet::new(x.clone()).unwrap(),
            &w,
            3,
            &weight_cfg,
            Some(act_cfg),
            &SvdquantOptions {
                alpha: AlphaChoice::Fixed(0.5),
                refine_iters: 1,
                ..Default::default()
            },
        )
        .unwrap();
        (x, layer)
    }

    #[test]
    fn layer_pack_round_trip_and_forward_equivalence() {
        for two_level in [false, true] {
            let (x, layer) = sample_layer(two_level);
            let dir = tempfile::tempdir().unwrap();
            let pack = dir.path().join("pack");
            save_layer_pack(&pack, "test-layer", &layer).unwrap();
            let (manifest, loaded) = load_layer_pack(&pack).unwrap();
            assert_eq!(manifest.name, "test-layer");
            assert_eq!(loaded, layer);
            let a = crate::pipeline::forward(&layer, &x).unwrap();
            let b = crate::pipeline::forward(&loaded, &x).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pack_detects_shape_lies() {
        let (_, layer) = sample_layer(false);
        let dir = tempfile::tempdir().unwrap();
        let pack = dir.path().join("pack");
        save_layer_pack(&pack, "x", &layer).unwrap();
        // Manifest claims a different rank than l1/l2 carry.
        let manifest_path = pack.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).unwrap();
        let bumped = text.replace("\"rank\": 3", "\"rank\": 4");
        assert_ne!(text, bumped);
        std::fs::write(&manifest_path, bumped).unwrap();
        match load_layer_pack(&pack) {
            Err(Error::ManifestMismatch { field, .. }) => assert_eq!(field, "l1"),
            other => panic!("expected manifest mismatch, got {other:?}"),
        }
    }
}
