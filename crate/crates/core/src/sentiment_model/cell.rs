use super::params::{LstmModel, LstmParams, Real};
use super::ModelError;
use crate::textprep::{EncodedSequence, PAD_ID};

const LOSS_CLAMP: f64 = 1e-7;

/// Activations kept from [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Token ids of the non-padded steps.
    pub ids: Vec<u32>,
    /// Per step, activated `[i | f | o | c̃]`, 4h each.
    pub gates: Vec<T>,
    /// Cell states c_0..c_T, h each (c_0 = 0).
    pub cells: Vec<T>,
    /// tanh(c_t) for t = 1..T.
    pub cell_tanh: Vec<T>,
    /// Hidden states h_0..h_T (h_0 = 0).
    pub hidden: Vec<T>,
    pub probability: T,
}

impl<T: Real> ForwardCache<T> {
    pub fn steps(&self) -> usize {
        self.ids.len()
    }

    /// Final hidden state h_T.
    pub fn last_hidden(&self) -> &[T] {
        let h = self.hidden.len() / (self.steps() + 1);
        &self.hidden[self.steps() * h..]
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Runs the cell over the first `true_length` tokens and returns P(positive).
pub fn forward<T: Real>(
    model: &LstmModel<T>,
    seq: &EncodedSequence,
) -> Result<(T, ForwardCache<T>), ModelError> {
    let hyper = &model.hyper;
    let (d, h) = (hyper.embed_dim, hyper.hidden_dim);
    if seq.true_length > seq.ids.len() {
        return Err(ModelError::Shape(format!(
            "true_length {} exceeds sequence length {}",
            seq.true_length,
            seq.ids.len()
        )));
    }
    if let Some(&bad) = seq.ids.iter().find(|&&id| id as usize >= hyper.vocab_size) {
        return Err(ModelError::Shape(format!(
            "token id {bad} outside vocabulary of {}",
            hyper.vocab_size
        )));
    }
    let p = &model.params;
    let ids = seq.tokens().to_vec();
    let steps = ids.len();
    let mut gates = vec![T::zero(); steps * 4 * h];
    let mut cells = vec![T::zero(); (steps + 1) * h];
    let mut cell_tanh = vec![T::zero(); steps * h];
    let mut hidden = vec![T::zero(); (steps + 1) * h];

    for (t, &id) in ids.iter().enumerate() {
        let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        z.copy_from_slice(&p.bias);
        let x = p.embedding.row(id as usize);
        for k in 0..d {
            axpy(z, x[k], p.input_weights.row(k));
        }
        let (prev_h, next_h) = hidden.split_at_mut((t + 1) * h);
        let h_prev = &prev_h[t * h..];
        for j in 0..h {
            axpy(z, h_prev[j], p.recurrent_weights.row(j));
        }
        for v in &mut z[..3 * h] {
            *v = sigmoid(*v);
        }
        for v in &mut z[3 * h..] {
            *v = v.tanh();
        }
        let (prev_c, next_c) = cells.split_at_mut((t + 1) * h);
        let c_prev = &prev_c[t * h..];
        let c = &mut next_c[..h];
        let tc = &mut cell_tanh[t * h..(t + 1) * h];
        let h_new = &mut next_h[..h];
        for j in 0..h {
            let (i, f, o, g) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
            c[j] = f * c_prev[j] + i * g;
            tc[j] = c[j].tanh();
            h_new[j] = o * tc[j];
        }
    }
    let h_last = &hidden[steps * h..];
    let logit = dot(h_last, &p.out_weights) + p.out_bias;
    let probability = sigmoid(logit);
    Ok((
        probability,
        ForwardCache {
            ids,
            gates,
            cells,
            cell_tanh,
            hidden,
            probability,
        },
    ))
}

/// Binary cross-entropy with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: Real>(p: T, y: u8) -> T {
    let eps = T::of(LOSS_CLAMP);
    let p = p.max(eps).min(T::one() - eps);
    if y == 1 {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// Backpropagation through time. Gradients of the loss for target `y` are
/// *added* to `grads`, so a batch is accumulated by calling this per example.
///
/// The output-layer error is `p − y`, the derivative of the unclamped loss.
pub fn backward<T: Real>(
    model: &LstmModel<T>,
    cache: &ForwardCache<T>,
    y: u8,
    grads: &mut LstmParams<T>,
) {
    let (d, h) = (model.hyper.embed_dim, model.hyper.hidden_dim);
    let p = &model.params;
    let steps = cache.steps();
    let dlogit = cache.probability - T::of(f64::from(y));

    let h_last = cache.last_hidden();
    axpy(&mut grads.out_weights, dlogit, h_last);
    grads.out_bias += dlogit;

    let mut dh: Vec<T> = p.out_weights.iter().map(|&w| w * dlogit).collect();
    let mut dc = vec![T::zero(); h];
    let mut dz = vec![T::zero(); 4 * h];
    let mut dh_prev = vec![T::zero(); h];

    for t in (0..steps).rev() {
        let z = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let c_prev = &cache.cells[t * h..(t + 1) * h];
        let tc = &cache.cell_tanh[t * h..(t + 1) * h];
        let h_prev = &cache.hidden[t * h..(t + 1) * h];
        for j in 0..h {
            let (i, f, o, g) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
            dc[j] += dh[j] * o * (T::one() - tc[j] * tc[j]);
            dz[j] = dc[j] * g * i * (T::one() - i);
            dz[h + j] = dc[j] * c_prev[j] * f * (T::one() - f);
            dz[2 * h + j] = dh[j] * tc[j] * o * (T::one() - o);
            dz[3 * h + j] = dc[j] * i * (T::one() - g * g);
            dc[j] *= f;
        }
        axpy(&mut grads.bias, T::one(), &dz);

        let id = cache.ids[t] as usize;
        let x = p.embedding.row(id);
        for k in 0..d {
            axpy(grads.input_weights.row_mut(k), x[k], &dz);
        }
        if id != PAD_ID as usize {
            for k in 0..d {
                let dx = dot(p.input_weights.row(k), &dz);
                grads.embedding.row_mut(id)[k] += dx;
            }
        }
        for j in 0..h {
            axpy(grads.recurrent_weights.row_mut(j), h_prev[j], &dz);
            dh_prev[j] = dot(p.recurrent_weights.row(j), &dz);
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }
}

/// Fresh gradient tensors for a single example.
pub fn gradients<T: Real>(
    model: &LstmModel<T>,
    seq: &EncodedSequence,
    y: u8,
) -> Result<LstmParams<T>, ModelError> {
    let (_, cache) = forward(model, seq)?;
    let mut grads = LstmParams::zeros(&model.hyper);
    backward(model, &cache, y, &mut grads);
    Ok(grads)
}
