//! Recurrent policy over per-layer compression options.
//!
//! A single LSTM layer runs for `l` steps with zero initial state. Step `i` consumes a learned
//! position embedding, and its hidden state feeds a dedicated dense head with `d` outputs
//! followed by a softmax. All trainable weights live in one flat vector so that the optimizer,
//! checkpoints and gradient checks can treat them uniformly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container::{Container, Entry};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LRCP";
pub const INIT_RANGE: f64 = 0.08;
pub const PROB_FLOOR: f64 = 1e-30;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerShape {
    pub layers: usize,
    pub options: usize,
    pub embed: usize,
    pub hidden: usize,
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    emb: usize,
    wx: usize,
    wh: usize,
    b: usize,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl ControllerShape {
    fn layout(&self) -> Layout {
        let Self { layers: l, options: d, embed: e, hidden: h } = *self;
        let emb = 0;
        let wx = emb + l * e;
        let wh = wx + 4 * h * e;
        let b = wh + 4 * h * h;
        let head_w = b + 4 * h;
        let head_b = head_w + l * h * d;
        let total = head_b + l * d;
        Layout { emb, wx, wh, b, head_w, head_b, total }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    shape: ControllerShape,
    theta: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step: u64,
}

pub fn init_controller(layers: usize, options: usize, hidden: usize, embed: usize, seed: u64) -> Result<ControllerParams> {
    ControllerParams::init(ControllerShape { layers, options, embed, hidden }, seed)
}

impl ControllerParams {
    pub fn init(shape: ControllerShape, seed: u64) -> Result<Self> {
        if shape.layers == 0 || shape.options == 0 || shape.embed == 0 || shape.hidden == 0 {
            return Err(Error::ContractViolation(format!("controller dimensions must be positive: {shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = shape.param_count();
        let theta = (0..total).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)).collect();
        Ok(Self { shape, theta, adam_m: vec![0.0; total], adam_v: vec![0.0; total], step: 0 })
    }

    pub fn shape(&self) -> ControllerShape {
        self.shape
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Weights `H×d` of head `i`.
    pub fn head_weights(&self, i: usize) -> Matrix {
        let ControllerShape { hidden: h, options: d, .. } = self.shape;
        let start = self.shape.layout().head_w + i * h * d;
        Matrix::from_vec(h, d, self.theta[start..start + h * d].to_vec())
    }

    pub fn head_bias_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.shape.options;
        let start = self.shape.layout().head_b + i * d;
        &mut self.theta[start..start + d]
    }

    pub fn head_weights_mut(&mut self, i: usize) -> &mut [f64] {
        let ControllerShape { hidden: h, options: d, .. } = self.shape;
        let start = self.shape.layout().head_w + i * h * d;
        &mut self.theta[start..start + h * d]
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw parameter bits.
        let mut hash = 0xcbf29ce484222325u64;
        for v in &self.theta {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
        hash
    }

    pub fn forward(&self) -> Result<PolicyOutput> {
        let ControllerShape { layers: l, options: d, embed: e, hidden: h } = self.shape;
        let lay = self.shape.layout();
        let th = &self.theta;
        let mut steps = Vec::with_capacity(l);
        let mut probs = Matrix::zeros(l, d);
        let mut log_probs = Matrix::zeros(l, d);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];

        for t in 0..l {
            let x = &th[lay.emb + t * e..lay.emb + (t + 1) * e];
            let mut z = th[lay.b..lay.b + 4 * h].to_vec();
            for (k, zk) in z.iter_mut().enumerate() {
                let wx_row = &th[lay.wx + k * e..lay.wx + (k + 1) * e];
                let wh_row = &th[lay.wh + k * h..lay.wh + (k + 1) * h];
                *zk += dot(wx_row, x) + dot(wh_row, &h_prev);
            }
            let gi: Vec<f64> = z[0..h].iter().map(|&v| sigmoid(v)).collect();
            let gf: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
            let gg: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
            let go: Vec<f64> = z[3 * h..4 * h].iter().map(|&v| sigmoid(v)).collect();
            let c: Vec<f64> = (0..h).map(|k| gf[k] * c_prev[k] + gi[k] * gg[k]).collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let hs: Vec<f64> = (0..h).map(|k| go[k] * tanh_c[k]).collect();

            let hw = lay.head_w + t * h * d;
            let mut logits = th[lay.head_b + t * d..lay.head_b + (t + 1) * d].to_vec();
            for (k, &hk) in hs.iter().enumerate() {
                for (j, lj) in logits.iter_mut().enumerate() {
                    *lj += hk * th[hw + k * d + j];
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..d {
                log_probs[(t, j)] = logits[j] - lse;
                probs[(t, j)] = log_probs[(t, j)].exp();
            }
            if !lse.is_finite() || !hs.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite controller state at step {t}")));
            }

            steps.push(StepCache { h_prev, c_prev, gi, gf, gg, go, tanh_c, h: hs.clone() });
            h_prev = hs;
            c_prev = c;
        }
        Ok(PolicyOutput { probs, log_probs, steps, fingerprint: self.fingerprint() })
    }

    /// Gradient of `-(Σ_i log p_i) · reward` for the sampled indices.
    pub fn policy_gradient(&self, output: &PolicyOutput, sampled: &SampledScheme, reward: f64) -> Result<Vec<f64>> {
        let ControllerShape { layers: l, options: d, .. } = self.shape;
        if sampled.indices.len() != l || sampled.indices.iter().any(|&j| j >= d) {
            return Err(Error::ContractViolation("sampled indices do not match the controller shape".into()));
        }
        let mut dlogits = Matrix::zeros(l, d);
        for (t, &j) in sampled.indices.iter().enumerate() {
            for k in 0..d {
                let onehot = if k == j { 1.0 } else { 0.0 };
                dlogits[(t, k)] = reward * (output.probs[(t, k)] - onehot);
            }
        }
        self.backward(output, &dlogits)
    }

    /// Backpropagates per-step logit gradients through the heads and the LSTM.
    pub fn backward(&self, output: &PolicyOutput, dlogits: &Matrix) -> Result<Vec<f64>> {
        if output.fingerprint != self.fingerprint() || output.steps.len() != self.shape.layers {
            return Err(Error::StaleCache);
        }
        let ControllerShape { layers: l, options: d, embed: e, hidden: h } = self.shape;
        let lay = self.shape.layout();
        let th = &self.theta;
        let mut grad = vec![0.0; lay.total];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];

        for t in (0..l).rev() {
            let s = &output.steps[t];
            let dl = dlogits.row(t);
            let hw = lay.head_w + t * h * d;
            let mut dh = dh_next.clone();
            for k in 0..h {
                for j in 0..d {
                    grad[hw + k * d + j] += s.h[k] * dl[j];
                    dh[k] += th[hw + k * d + j] * dl[j];
                }
            }
            for j in 0..d {
                grad[lay.head_b + t * d + j] += dl[j];
            }

            let mut dz = vec![0.0; 4 * h];
            for k in 0..h {
                let d_o = dh[k] * s.tanh_c[k];
                let dc = dh[k] * s.go[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + dc_next[k];
                let d_i = dc * s.gg[k];
                let d_g = dc * s.gi[k];
                let d_f = dc * s.c_prev[k];
                dc_next[k] = dc * s.gf[k];
                dz[k] = d_i * s.gi[k] * (1.0 - s.gi[k]);
                dz[h + k] = d_f * s.gf[k] * (1.0 - s.gf[k]);
                dz[2 * h + k] = d_g * (1.0 - s.gg[k] * s.gg[k]);
                dz[3 * h + k] = d_o * s.go[k] * (1.0 - s.go[k]);
            }

            let x_off = lay.emb + t * e;
            let mut dh_prev = vec![0.0; h];
            for (k, &dzk) in dz.iter().enumerate() {
                if dzk == 0.0 {
                    continue;
                }
                grad[lay.b + k] += dzk;
                for c in 0..e {
                    grad[lay.wx + k * e + c] += dzk * th[x_off + c];
                    grad[x_off + c] += dzk * th[lay.wx + k * e + c];
                }
                for c in 0..h {
                    grad[lay.wh + k * h + c] += dzk * s.h_prev[c];
                    dh_prev[c] += dzk * th[lay.wh + k * h + c];
                }
            }
            dh_next = dh_prev;
        }
        Ok(grad)
    }

    /// One Adam step descending `gradient`.
    pub fn apply_update(&mut self, gradient: &[f64], learning_rate: f64) -> Result<()> {
        if gradient.len() != self.theta.len() {
            return Err(Error::ContractViolation(format!(
                "gradient has {} entries, controller has {}",
                gradient.len(),
                self.theta.len()
            )));
        }
        if !gradient.iter().all(|g| g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        self.step += 1;
        let bias1 = 1.0 - ADAM_BETA1.powf(self.step as f64);
        let bias2 = 1.0 - ADAM_BETA2.powf(self.step as f64);
        for (((p, m), v), &g) in self.theta.iter_mut().zip(&mut self.adam_m).zip(&mut self.adam_v).zip(gradient) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let ControllerShape { layers: l, options: d, embed: e, hidden: h } = self.shape;
        let lay = self.shape.layout();
        let block = |start: usize, rows: usize, cols: usize| Matrix::from_vec(rows, cols, self.theta[start..start + rows * cols].to_vec());
        let mut c = Container::new(CHECKPOINT_MAGIC);
        let mut push = |name: String, matrix: Matrix| c.entries.push(Entry { name, flags: 0, matrix });
        push("embedding".into(), block(lay.emb, l, e));
        push("lstm.wx".into(), block(lay.wx, 4 * h, e));
        push("lstm.wh".into(), block(lay.wh, 4 * h, h));
        push("lstm.b".into(), block(lay.b, 1, 4 * h));
        for i in 0..l {
            push(format!("head.{i}.w"), block(lay.head_w + i * h * d, h, d));
            push(format!("head.{i}.b"), block(lay.head_b + i * d, 1, d));
        }
        push("adam.m".into(), Matrix::from_vec(1, lay.total, self.adam_m.clone()));
        push("adam.v".into(), Matrix::from_vec(1, lay.total, self.adam_v.clone()));
        for (k, v) in [("layers", l), ("options", d), ("embed", e), ("hidden", h)] {
            c.metadata.insert(k.into(), v.to_string());
        }
        c.metadata.insert("step".into(), self.step.to_string());
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes, CHECKPOINT_MAGIC)?;
        let meta = |k: &str| -> Result<u64> {
            c.metadata
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(0, format!("checkpoint metadata `{k}` missing or invalid")))
        };
        let shape = ControllerShape {
            layers: meta("layers")? as usize,
            options: meta("options")? as usize,
            embed: meta("embed")? as usize,
            hidden: meta("hidden")? as usize,
        };
        let lay = shape.layout();
        let l = shape.layers;
        if c.entries.len() != 6 + 2 * l {
            return Err(Error::format(0, "checkpoint has an unexpected number of tensors"));
        }
        let mut theta = Vec::with_capacity(lay.total);
        let mut heads_w = Vec::new();
        let mut heads_b = Vec::new();
        for (idx, e) in c.entries.iter().enumerate() {
            let target = match idx {
                0..=3 => &mut theta,
                i if i < 4 + 2 * l => {
                    if (i - 4) % 2 == 0 {
                        &mut heads_w
                    } else {
                        &mut heads_b
                    }
                }
                _ => continue,
            };
            target.extend_from_slice(e.matrix.as_slice());
        }
        theta.extend(heads_w);
        theta.extend(heads_b);
        let adam_m = c.entries[4 + 2 * l].matrix.as_slice().to_vec();
        let adam_v = c.entries[5 + 2 * l].matrix.as_slice().to_vec();
        if theta.len() != lay.total || adam_m.len() != lay.total || adam_v.len() != lay.total {
            return Err(Error::format(0, "checkpoint tensor sizes do not match its declared shape"));
        }
        Ok(Self { shape, theta, adam_m, adam_v, step: meta("step")? })
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gi: Vec<f64>,
    gf: Vec<f64>,
    gg: Vec<f64>,
    go: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Per-layer option distributions plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub probs: Matrix,
    pub log_probs: Matrix,
    steps: Vec<StepCache>,
    fingerprint: u64,
}

impl PolicyOutput {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledScheme {
        let mut indices = Vec::with_capacity(self.probs.rows());
        let mut probs = Vec::with_capacity(self.probs.rows());
        for t in 0..self.probs.rows() {
            let row = self.probs.row(t);
            let u: f64 = rng.gen();
            let mut cumulative = 0.0;
            let mut chosen = row.len() - 1;
            for (j, &p) in row.iter().enumerate() {
                cumulative += p;
                if u < cumulative {
                    chosen = j;
                    break;
                }
            }
            indices.push(chosen);
            probs.push(row[chosen]);
        }
        SampledScheme { indices, probs }
    }

    /// `Σ_i log p_i` of the given option indices, with each probability floored at 1e-30.
    pub fn log_likelihood(&self, indices: &[usize]) -> f64 {
        indices.iter().enumerate().map(|(t, &j)| self.probs[(t, j)].max(PROB_FLOOR).ln()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledScheme {
    pub indices: Vec<usize>,
    pub probs: Vec<f64>,
}

/// Policy-gradient loss `-(Σ_i log p_i) · reward` at the current parameters.
pub fn policy_loss(params: &ControllerParams, indices: &[usize], reward: f64) -> Result<f64> {
    Ok(-params.forward()?.log_likelihood(indices) * reward)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}


#[cfg(test)]
mod gradient_check {
    use super::*;

    #[test]
    fn matches_central_differences() {
        let mut p = init_controller(3, 4, 8, 8, 99).unwrap();
        let out = p.forward().unwrap();
        let s = out.sample(&mut ChaCha8Rng::seed_from_u64(5));
        let analytic = p.policy_gradient(&out, &s, 1.3).unwrap();
        let step = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..p.theta().len() {
            let orig = p.theta()[i];
            p.theta_mut()[i] = orig + step;
            let up = policy_loss(&p, &s.indices, 1.3).unwrap();
            p.theta_mut()[i] = orig - step;
            let down = policy_loss(&p, &s.indices, 1.3).unwrap();
            p.theta_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let diff = (numeric - analytic[i]).abs();
            // Below 1e-8 the central difference itself is dominated by rounding.
            if diff > 1e-8 {
                worst = worst.max(diff / numeric.abs().max(analytic[i].abs()));
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }
}
