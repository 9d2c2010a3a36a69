//! Dense ReLU network with a sigmoid output, weighted binary cross-entropy,
//! inverted dropout and Adam with decoupled weight decay.
//!
//! Parameters live in one flat vector: for each layer the row-major weight
//! matrix (`out x in`) followed by its bias.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{map_chunks, Execution};
use crate::util::derive_seed;

pub const P_CLAMP: f64 = 1e-7;
/// Examples per gradient chunk. Fixed so the reduction order never depends
/// on the thread count.
const GRAD_CHUNK: usize = 32;
const MAGIC: &[u8; 4] = b"MLP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input size, hidden sizes, then 1.
    pub layer_sizes: Vec<usize>,
    pub dropout: f64,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], dropout: f64) -> Self {
        let mut layer_sizes = vec![input];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        MlpSpec { layer_sizes, dropout }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::config("network needs at least an input and an output layer"));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::config("layer sizes must be >= 1"));
        }
        if *self.layer_sizes.last().unwrap() != 1 {
            return Err(Error::config("last layer size must be 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0,1)"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(weight offset, bias offset, in, out)` per layer.
    fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let entry = (off, off + i * o, i, o);
                off += i * o + o;
                entry
            })
            .collect()
    }
}

/// `-pos_weight * y * ln p - (1 - y) * ln(1 - p)` with `p` clamped.
pub fn weighted_bce(p: f64, y: f64, pos_weight: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    -pos_weight * y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub seed: u64,
    pub values: Vec<f64>,
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; spec.num_params()];
        for (w, _, i, o) in spec.layout() {
            let a = (6.0 / (i + o) as f64).sqrt();
            for v in &mut values[w..w + i * o] {
                *v = rng.random_range(-a..=a);
            }
        }
        Ok(MlpParams { spec: spec.clone(), seed, values })
    }

    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(MlpParams { spec: spec.clone(), seed: 0, values: vec![0.0; spec.num_params()] })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::Shape { context: "network input", expected: self.spec.input_dim(), actual: x.len() });
        }
        Ok(())
    }

    /// Probability for `x`. With `dropout_rng` the hidden activations are
    /// dropped (training mode); without it the pass is deterministic.
    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], dropout_rng: Option<&mut R>) -> Result<f64> {
        self.check_input(x)?;
        let mut tape = Tape::default();
        Ok(sigmoid(self.run(x, dropout_rng, &mut tape)))
    }

    /// Deterministic inference.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.forward::<ChaCha8Rng>(x, None)
    }

    /// Forward pass recording activations and dropout masks.
    fn run<R: Rng + ?Sized>(&self, x: &[f64], mut dropout_rng: Option<&mut R>, tape: &mut Tape) -> f64 {
        let layout = self.spec.layout();
        let last = layout.len() - 1;
        let keep = 1.0 - self.spec.dropout;
        tape.acts.clear();
        tape.masks.clear();
        tape.acts.push(x.to_vec());
        for (l, &(w, b, n_in, n_out)) in layout.iter().enumerate() {
            let input = &tape.acts[l];
            let mut z = self.values[b..b + n_out].to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &self.values[w + o * n_in..w + (o + 1) * n_in];
                *zo += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l == last {
                return z[0];
            }
            let mask: Vec<f64> = match dropout_rng.as_deref_mut() {
                Some(rng) if self.spec.dropout > 0.0 => {
                    (0..n_out).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
                }
                _ => vec![1.0; n_out],
            };
            let a: Vec<f64> = z.iter().zip(&mask).map(|(z, m)| z.max(0.0) * m).collect();
            tape.masks.push((z, mask));
            tape.acts.push(a);
        }
        unreachable!("validated spec has an output layer")
    }

    /// Loss of one example; adds its gradient into `grad`.
    fn accumulate<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        y: f64,
        pos_weight: f64,
        dropout_rng: Option<&mut R>,
        grad: &mut [f64],
    ) -> f64 {
        let mut tape = Tape::default();
        let z = self.run(x, dropout_rng, &mut tape);
        let p = sigmoid(z);
        let loss = weighted_bce(p, y, pos_weight);
        // the clamp flattens the loss outside [P_CLAMP, 1 - P_CLAMP]
        let mut delta = if (P_CLAMP..=1.0 - P_CLAMP).contains(&p) {
            vec![pos_weight * y * (p - 1.0) + (1.0 - y) * p]
        } else {
            vec![0.0]
        };
        let layout = self.spec.layout();
        for (l, &(w, b, n_in, n_out)) in layout.iter().enumerate().rev() {
            let input = &tape.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[b + o] += d;
                let g = &mut grad[w + o * n_in..w + (o + 1) * n_in];
                g.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
            }
            if l == 0 {
                break;
            }
            let (z_prev, mask) = &tape.masks[l - 1];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &self.values[w + o * n_in..w + (o + 1) * n_in];
                next.iter_mut().zip(row).for_each(|(n, r)| *n += d * r);
            }
            for ((n, z), m) in next.iter_mut().zip(z_prev).zip(mask) {
                if *z <= 0.0 {
                    *n = 0.0;
                } else {
                    *n *= m;
                }
            }
            delta = next;
        }
        loss
    }

    /// Mean loss and gradient over `batch`. With `dropout_seed` each example
    /// gets its own mask stream derived from the seed and its index.
    pub fn loss_and_grad(
        &self,
        batch: &[(&[f64], f64)],
        pos_weight: f64,
        dropout_seed: Option<u64>,
        exec: Execution,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        for (x, _) in batch {
            self.check_input(x)?;
        }
        let n_params = self.values.len();
        let indexed: Vec<(usize, &(&[f64], f64))> = batch.iter().enumerate().collect();
        let partials = map_chunks(exec, &indexed, GRAD_CHUNK, |chunk| {
            let mut g = vec![0.0; n_params];
            let mut loss = 0.0;
            for &(i, &(x, y)) in chunk {
                loss += match dropout_seed {
                    Some(s) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s, i as u64));
                        self.accumulate(x, y, pos_weight, Some(&mut rng), &mut g)
                    }
                    None => self.accumulate::<ChaCha8Rng>(x, y, pos_weight, None, &mut g),
                };
            }
            (loss, g)
        });
        let mut grad = vec![0.0; n_params];
        let mut loss = 0.0;
        for (l, g) in partials {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }

    /// Mean clamped loss in inference mode.
    pub fn mean_loss(&self, batch: &[(&[f64], f64)], pos_weight: f64) -> Result<f64> {
        let mut total = 0.0;
        for &(x, y) in batch {
            total += weighted_bce(self.predict(x)?, y, pos_weight);
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Binary format: magic, layer count, sizes (u32), seed (u64), then
    /// every parameter as little-endian `f32` in storage order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&(self.spec.layer_sizes.len() as u32).to_le_bytes())?;
        for s in &self.spec.layer_sizes {
            out.write_all(&(*s as u32).to_le_bytes())?;
        }
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&(self.spec.dropout as f32).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::parse(format!("{}: truncated parameter file", path.display())));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(Error::parse(format!("{}: not a parameter file", path.display())));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        let n_layers = u32_at(take(4)?) as usize;
        let mut layer_sizes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layer_sizes.push(u32_at(take(4)?) as usize);
        }
        let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let dropout = f32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as f64;
        let spec = MlpSpec { layer_sizes, dropout };
        spec.validate()?;
        let n = spec.num_params();
        let raw = take(4 * n)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Ok(MlpParams { spec, seed, values })
    }
}

#[derive(Default)]
struct Tape {
    acts: Vec<Vec<f64>>,
    /// Pre-activation and dropout scale per hidden layer.
    masks: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Adam { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / b1t;
            let vh = *v / b2t;
            *p -= self.lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * *p);
        }
    }
}

/// One optimisation step on `batch`. Dropout masks come from a seed drawn
/// from `rng`. Returns the mean training loss.
pub fn backward_and_step<R: Rng + ?Sized>(
    params: &mut MlpParams,
    adam: &mut Adam,
    batch: &[(&[f64], f64)],
    pos_weight: f64,
    rng: &mut R,
    exec: Execution,
) -> Result<f64> {
    let seed: u64 = rng.random();
    let dropout = (params.spec.dropout > 0.0).then_some(seed);
    let (loss, grad) = params.loss_and_grad(batch, pos_weight, dropout, exec)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        let bad_input = batch.iter().position(|(x, _)| x.iter().any(|v| !v.is_finite()));
        return Err(Error::NonFinite {
            step: adam.step + 1,
            detail: format!("loss {loss}; first non-finite input row {bad_input:?}"),
        });
    }
    adam.update(&mut params.values, &grad);
    Ok(loss)
}
