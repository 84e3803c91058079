//! `model.bin` and its `model.meta.json` sidecar.
//!
//! Layout (little-endian): magic `MLSA`, u32 version, then the hyperparameter
//! block `u32 V, d, h, L, batch_size, epochs; f64 learning_rate, clip_norm;
//! u64 seed`, then f32 row-major tensors in the order `E, W_i, W_f, W_o, W_c,
//! U_i, U_f, U_o, U_c, b_i, b_f, b_o, b_c, w_out, b_out`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::EvalReport;
use super::params::{Gate, LstmHyperparams, LstmModel, LstmParams, Matrix};
use super::train::TrainHistory;
use super::ModelError;

pub const MODEL_MAGIC: &[u8; 4] = b"MLSA";
pub const MODEL_FORMAT_VERSION: u32 = 1;

fn load_err(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Load {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn encode_model(model: &LstmModel<f32>) -> Result<Vec<u8>, ModelError> {
    model.check_shapes()?;
    let hy = &model.hyper;
    let p = &model.params;
    let (d, h) = (hy.embed_dim, hy.hidden_dim);
    let mut out = Vec::with_capacity(64 + 4 * p.param_count());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    for dim in [hy.vocab_size, d, h, hy.seq_len, hy.batch_size, hy.epochs] {
        let dim = u32::try_from(dim)
            .map_err(|_| ModelError::Shape(format!("dimension {dim} exceeds u32")))?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    out.extend_from_slice(&hy.learning_rate.to_le_bytes());
    out.extend_from_slice(&hy.clip_norm.to_le_bytes());
    out.extend_from_slice(&hy.seed.to_le_bytes());

    let mut put = |x: f32| out.extend_from_slice(&x.to_le_bytes());
    p.embedding.as_slice().iter().for_each(|&x| put(x));
    for gate in Gate::ALL {
        for k in 0..d {
            (0..h).for_each(|j| put(p.w(gate, k, j)));
        }
    }
    for gate in Gate::ALL {
        for i in 0..h {
            (0..h).for_each(|j| put(p.u(gate, i, j)));
        }
    }
    for gate in Gate::ALL {
        (0..h).for_each(|j| put(p.b(gate, j)));
    }
    p.out_weights.iter().for_each(|&x| put(x));
    put(p.out_bias);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.u64().map(f64::from_bits)
    }

    fn f32(&mut self) -> Option<f32> {
        self.u32().map(f32::from_bits)
    }
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<LstmModel<f32>, ModelError> {
    let truncated = || load_err(path, "truncated file");
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4).ok_or_else(truncated)? != MODEL_MAGIC {
        return Err(load_err(path, "bad magic"));
    }
    let version = c.u32().ok_or_else(truncated)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(load_err(
            path,
            format!("unsupported format version {version} (expected {MODEL_FORMAT_VERSION})"),
        ));
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = c.u32().ok_or_else(truncated)? as usize;
    }
    let hyper = LstmHyperparams {
        vocab_size: dims[0],
        embed_dim: dims[1],
        hidden_dim: dims[2],
        seq_len: dims[3],
        batch_size: dims[4],
        epochs: dims[5],
        learning_rate: c.f64().ok_or_else(truncated)?,
        clip_norm: c.f64().ok_or_else(truncated)?,
        seed: c.u64().ok_or_else(truncated)?,
    };
    hyper
        .validate()
        .map_err(|e| load_err(path, e.to_string()))?;
    let (v, d, h) = (hyper.vocab_size, hyper.embed_dim, hyper.hidden_dim);
    let expected = v
        .checked_mul(d)
        .and_then(|e| e.checked_add(4 * d * h + 4 * h * h + 4 * h + h + 1))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| load_err(path, "dimensions overflow"))?;
    let remaining = bytes.len() - c.pos;
    if remaining < expected {
        return Err(truncated());
    }
    if remaining > expected {
        return Err(load_err(
            path,
            format!("{} trailing bytes", remaining - expected),
        ));
    }

    let mut next = || c.f32().expect("length checked");
    let mut params = LstmParams::<f32>::zeros(&hyper);
    params.embedding = Matrix::from_vec(v, d, (0..v * d).map(|_| next()).collect());
    for gate in Gate::ALL {
        for k in 0..d {
            for j in 0..h {
                params.input_weights[(k, gate.col(j, h))] = next();
            }
        }
    }
    for gate in Gate::ALL {
        for i in 0..h {
            for j in 0..h {
                params.recurrent_weights[(i, gate.col(j, h))] = next();
            }
        }
    }
    for gate in Gate::ALL {
        for j in 0..h {
            params.bias[gate.col(j, h)] = next();
        }
    }
    for j in 0..h {
        params.out_weights[j] = next();
    }
    params.out_bias = next();
    if !params.all_finite() {
        return Err(load_err(path, "non-finite parameter"));
    }
    Ok(LstmModel { hyper, params })
}

pub fn save_model(model: &LstmModel<f32>, path: &Path) -> Result<(), ModelError> {
    let bytes = encode_model(model)?;
    crate::mqlog::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<LstmModel<f32>, ModelError> {
    let bytes = fs::read(path).map_err(|e| load_err(path, e.to_string()))?;
    decode_model(&bytes, path)
}

/// Contents of `model.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format_version: u32,
    pub hyper: LstmHyperparams,
    pub history: TrainHistory,
    /// Hex FNV-1a checksum of the vocabulary the model was trained with.
    pub vocab_checksum: String,
    pub train_examples: usize,
    pub valid_examples: usize,
    pub validation: Option<EvalReport>,
}

pub fn save_meta(meta: &ModelMeta, path: &Path) -> Result<(), ModelError> {
    let mut json = serde_json::to_vec_pretty(meta).map_err(|e| ModelError::Io(e.into()))?;
    json.push(b'\n');
    crate::mqlog::write_atomic(path, &json)?;
    Ok(())
}

pub fn load_meta(path: &Path) -> Result<ModelMeta, ModelError> {
    let bytes = fs::read(path).map_err(|e| load_err(path, e.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| load_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LstmModel<f32> {
        let hyper = LstmHyperparams {
            vocab_size: 7,
            embed_dim: 3,
            hidden_dim: 2,
            seq_len: 5,
            batch_size: 4,
            epochs: 2,
            learning_rate: 0.01,
            clip_norm: 5.0,
            seed: 99,
        };
        let mut m = LstmModel::init(&hyper).unwrap();
        m.params.out_bias = -0.25;
        m.params.bias[3] = 0.125;
        m
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let m = small();
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back).unwrap(), fs::read(&path).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_model(&small()).unwrap();
        assert_eq!(&bytes[..4], b"MLSA");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 7);
        // header 4 + 4 + 24 + 16 + 8 = 56 bytes, then 7*3 + 4*(3*2) + 4*(2*2) + 8 + 2 + 1 floats
        assert_eq!(bytes.len(), 56 + 4 * (21 + 24 + 16 + 8 + 2 + 1));
        // the first gate-weight float is W_i[0][0]
        let m = small();
        let at = 56 + 4 * 21;
        assert_eq!(
            f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()),
            m.params.w(Gate::Input, 0, 0)
        );
    }

    #[test]
    fn truncation_and_corruption_are_load_errors() {
        let bytes = encode_model(&small()).unwrap();
        let p = Path::new("m.bin");
        for cut in [0, 3, 8, 30, 56, bytes.len() - 1] {
            assert!(
                matches!(decode_model(&bytes[..cut], p), Err(ModelError::Load { .. })),
                "cut {cut}"
            );
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            decode_model(&longer, p),
            Err(ModelError::Load { .. })
        ));
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 2;
        let err = decode_model(&wrong_version, p).unwrap_err();
        assert!(err.to_string().contains("version 2"));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_model(&bad_magic, p),
            Err(ModelError::Load { .. })
        ));
    }

    #[test]
    fn missing_file_is_load_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_model(&dir.path().join("nope.bin")),
            Err(ModelError::Load { .. })
        ));
    }

    #[test]
    fn meta_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.meta.json");
        let meta = ModelMeta {
            format_version: MODEL_FORMAT_VERSION,
            hyper: small().hyper,
            history: TrainHistory::default(),
            vocab_checksum: "00ff".into(),
            train_examples: 7,
            valid_examples: 3,
            validation: None,
        };
        save_meta(&meta, &path).unwrap();
        assert_eq!(load_meta(&path).unwrap(), meta);
    }
}
