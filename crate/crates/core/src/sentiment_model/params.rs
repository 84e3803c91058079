use std::fmt::Debug;
use std::ops::{AddAssign, Index, IndexMut, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Floating-point element type of a model.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|x| U::of(x.to_f64().unwrap()))
                .collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// LSTM gates in the order their column blocks appear in the packed weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];

    /// Column of unit `j` of this gate in a packed `[i | f | o | c]` matrix.
    pub fn col(self, j: usize, hidden: usize) -> usize {
        self as usize * hidden + j
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmHyperparams {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seq_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for LstmHyperparams {
    fn default() -> Self {
        Self {
            vocab_size: crate::textprep::DEFAULT_MAX_VOCAB,
            embed_dim: 64,
            hidden_dim: 64,
            seq_len: crate::textprep::DEFAULT_SEQ_LEN,
            batch_size: 256,
            epochs: 3,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            seed: 42,
        }
    }
}

impl LstmHyperparams {
    /// A zero learning rate is accepted: it turns training into evaluation only.
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("seq_len", self.seq_len),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidHyper(format!(
                "{name} must be at least 1"
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidHyper(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(ModelError::InvalidHyper(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

/// Trainable tensors. Gate weights are packed column-wise as `[i | f | o | c]`,
/// see [`Gate::col`]. The same struct holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    /// V × d; row 0 is the padding embedding and stays zero.
    pub embedding: Matrix<T>,
    /// d × 4h
    pub input_weights: Matrix<T>,
    /// h × 4h
    pub recurrent_weights: Matrix<T>,
    /// 4h
    pub bias: Vec<T>,
    /// h
    pub out_weights: Vec<T>,
    pub out_bias: T,
}

impl<T: Real> LstmParams<T> {
    pub fn zeros(hyper: &LstmHyperparams) -> Self {
        let (v, d, h) = (hyper.vocab_size, hyper.embed_dim, hyper.hidden_dim);
        Self {
            embedding: Matrix::zeros(v, d),
            input_weights: Matrix::zeros(d, 4 * h),
            recurrent_weights: Matrix::zeros(h, 4 * h),
            bias: vec![T::zero(); 4 * h],
            out_weights: vec![T::zero(); h],
            out_bias: T::zero(),
        }
    }

    /// All tensors as flat slices in serialization order.
    pub fn tensors(&self) -> [&[T]; 6] {
        [
            self.embedding.as_slice(),
            self.input_weights.as_slice(),
            self.recurrent_weights.as_slice(),
            &self.bias,
            &self.out_weights,
            std::slice::from_ref(&self.out_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 6] {
        [
            self.embedding.as_mut_slice(),
            self.input_weights.as_mut_slice(),
            self.recurrent_weights.as_mut_slice(),
            &mut self.bias,
            &mut self.out_weights,
            std::slice::from_mut(&mut self.out_bias),
        ]
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> LstmParams<U> {
        LstmParams {
            embedding: self.embedding.cast(),
            input_weights: self.input_weights.cast(),
            recurrent_weights: self.recurrent_weights.cast(),
            bias: self
                .bias
                .iter()
                .map(|x| U::of(x.to_f64().unwrap()))
                .collect(),
            out_weights: self
                .out_weights
                .iter()
                .map(|x| U::of(x.to_f64().unwrap()))
                .collect(),
            out_bias: U::of(self.out_bias.to_f64().unwrap()),
        }
    }

    /// Weight of gate `gate` from input feature `k` to unit `j`.
    pub fn w(&self, gate: Gate, k: usize, j: usize) -> T {
        let h = self.out_weights.len();
        self.input_weights[(k, gate.col(j, h))]
    }

    /// Recurrent weight of gate `gate` from unit `i` to unit `j`.
    pub fn u(&self, gate: Gate, i: usize, j: usize) -> T {
        let h = self.out_weights.len();
        self.recurrent_weights[(i, gate.col(j, h))]
    }

    pub fn b(&self, gate: Gate, j: usize) -> T {
        let h = self.out_weights.len();
        self.bias[gate.col(j, h)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel<T> {
    pub hyper: LstmHyperparams,
    pub params: LstmParams<T>,
}

impl<T: Real> LstmModel<T> {
    /// Glorot-uniform weights per gate matrix from a seeded ChaCha8 stream,
    /// zero biases except the forget gate (1.0), zero padding embedding.
    ///
    /// Sampling order: embedding, `W_i, W_f, W_o, W_c`, `U_i, U_f, U_o, U_c`, `w_out`.
    pub fn init(hyper: &LstmHyperparams) -> Result<Self, ModelError> {
        hyper.validate()?;
        let (v, d, h) = (hyper.vocab_size, hyper.embed_dim, hyper.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut params = LstmParams::zeros(hyper);
        let uniform = |fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            T::of(rng.gen_range(-bound..=bound))
        };
        for x in params.embedding.as_mut_slice() {
            *x = uniform(v, d, &mut rng);
        }
        params.embedding.row_mut(0).fill(T::zero());
        for gate in Gate::ALL {
            for k in 0..d {
                for j in 0..h {
                    params.input_weights[(k, gate.col(j, h))] = uniform(d, h, &mut rng);
                }
            }
        }
        for gate in Gate::ALL {
            for i in 0..h {
                for j in 0..h {
                    params.recurrent_weights[(i, gate.col(j, h))] = uniform(h, h, &mut rng);
                }
            }
        }
        for x in params.out_weights.iter_mut() {
            *x = uniform(h, 1, &mut rng);
        }
        for j in 0..h {
            params.bias[Gate::Forget.col(j, h)] = T::one();
        }
        Ok(Self {
            hyper: hyper.clone(),
            params,
        })
    }

    /// Checks tensor shapes against the hyperparameters.
    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let (v, d, h) = (
            self.hyper.vocab_size,
            self.hyper.embed_dim,
            self.hyper.hidden_dim,
        );
        let p = &self.params;
        let ok = p.embedding.rows() == v
            && p.embedding.cols() == d
            && p.input_weights.rows() == d
            && p.input_weights.cols() == 4 * h
            && p.recurrent_weights.rows() == h
            && p.recurrent_weights.cols() == 4 * h
            && p.bias.len() == 4 * h
            && p.out_weights.len() == h;
        if ok {
            Ok(())
        } else {
            Err(ModelError::Shape(
                "parameter shapes disagree with hyperparameters".into(),
            ))
        }
    }

    pub fn cast<U: Real>(&self) -> LstmModel<U> {
        LstmModel {
            hyper: self.hyper.clone(),
            params: self.params.cast(),
        }
    }
}
