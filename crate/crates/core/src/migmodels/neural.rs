//! Small feed-forward regressor over the four pair features.
//!
//! Inputs are `ln(1 + x)` of `(m_i, m_j, d_ij, s_ij)`, standardized with
//! training-set statistics. Hidden layers use `tanh`; the single linear output
//! is a logit, so per-origin probabilities are a softmax over destinations.
//! Training minimizes the mean squared error between those probabilities and
//! the empirical destination proportions, using full-batch Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::zonegraph::FeatureRow;

pub const N_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            hidden: vec![64, 64],
            epochs: 400,
            learning_rate: 3e-3,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense<S> {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out x n_in`.
    w: Vec<S>,
    b: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    fn forward(&self, x: &[S], out: &mut Vec<S>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += *wi * *xi;
            }
            out.push(acc);
        }
    }
}

/// Trained regressor: network weights plus input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel<S> {
    layers: Vec<Dense<S>>,
    mean: [S; N_FEATURES],
    std: [S; N_FEATURES],
}

/// One observed pair: features and the observed migrant count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingRow<S> {
    pub features: FeatureRow<S>,
    pub flow: S,
}

/// Standardized inputs grouped by origin, with target proportions.
#[derive(Debug, Clone)]
pub struct TrainingSet<S> {
    inputs: Vec<[S; N_FEATURES]>,
    targets: Vec<S>,
    groups: Vec<(usize, usize)>,
}

impl<S: Scalar> TrainingSet<S> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }
}

fn raw_features<S: Scalar>(f: [S; N_FEATURES]) -> [S; N_FEATURES] {
    f.map(|x| x.max(S::zero()).ln_1p())
}

fn row_features<S: Scalar>(r: &FeatureRow<S>) -> [S; N_FEATURES] {
    [r.origin_pop, r.dest_pop, r.distance, r.opportunities]
}

impl<S: Scalar> NeuralModel<S> {
    /// Random initialization (Glorot uniform) with the given standardization.
    pub fn init(hidden: &[usize], mean: [S; N_FEATURES], std: [S; N_FEATURES], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![N_FEATURES];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                Dense {
                    n_in,
                    n_out,
                    w: (0..n_in * n_out)
                        .map(|_| S::lit(rng.gen_range(-limit..limit)))
                        .collect(),
                    b: vec![S::zero(); n_out],
                }
            })
            .collect();
        NeuralModel { layers, mean, std }
    }

    fn standardize(&self, f: [S; N_FEATURES]) -> [S; N_FEATURES] {
        let raw = raw_features(f);
        let mut out = [S::zero(); N_FEATURES];
        for k in 0..N_FEATURES {
            out[k] = (raw[k] - self.mean[k]) / self.std[k];
        }
        out
    }

    /// Output logit for raw features `(m_i, m_j, d_ij, s_ij)`.
    pub fn logit(&self, features: [S; N_FEATURES]) -> S {
        self.logit_standardized(&self.standardize(features))
    }

    fn logit_standardized(&self, x: &[S; N_FEATURES]) -> S {
        let mut cur: Vec<S> = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters flattened layer by layer, weights then biases.
    pub fn params(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, p: &[S]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    /// Standardizes and groups training rows by origin. Origins without
    /// outflow carry no proportions and are dropped.
    pub fn training_set(&self, rows: &[TrainingRow<S>]) -> Result<TrainingSet<S>> {
        build_set(rows, |f| self.standardize(f))
    }

    /// Mean squared error of per-origin softmax probabilities against target
    /// proportions, and its gradient with respect to [`NeuralModel::params`].
    pub fn loss_and_grad(&self, set: &TrainingSet<S>) -> (S, Vec<S>) {
        let n_rows = S::from_usize_lossy(set.len().max(1));
        let two = S::lit(2.0);
        let mut grad = vec![S::zero(); self.n_params()];
        let mut loss = S::zero();
        let mut acts: Vec<Vec<Vec<S>>> = Vec::new();
        for &(lo, hi) in &set.groups {
            acts.clear();
            let mut logits = Vec::with_capacity(hi - lo);
            for x in &set.inputs[lo..hi] {
                let a = self.activations(x);
                logits.push(a.last().unwrap()[0]);
                acts.push(a);
            }
            let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
            let mut q: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
            let total: S = q.iter().copied().sum();
            q.iter_mut().for_each(|v| *v /= total);

            let g: Vec<S> = q
                .iter()
                .zip(&set.targets[lo..hi])
                .map(|(&qi, &pi)| {
                    loss += (qi - pi) * (qi - pi);
                    two * (qi - pi) / n_rows
                })
                .collect();
            let gq: S = g.iter().zip(&q).map(|(&a, &b)| a * b).sum();
            for (k, a) in acts.iter().enumerate() {
                let dz = q[k] * (g[k] - gq);
                self.backprop(a, dz, &mut grad);
            }
        }
        (loss / n_rows, grad)
    }

    pub fn loss(&self, set: &TrainingSet<S>) -> S {
        let n_rows = S::from_usize_lossy(set.len().max(1));
        let mut loss = S::zero();
        for &(lo, hi) in &set.groups {
            let logits: Vec<S> = set.inputs[lo..hi].iter().map(|x| self.logit_standardized(x)).collect();
            let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
            let e: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
            let total: S = e.iter().copied().sum();
            for (ei, &pi) in e.iter().zip(&set.targets[lo..hi]) {
                let d = *ei / total - pi;
                loss += d * d;
            }
        }
        loss / n_rows
    }

    /// Layer outputs, input first; hidden entries are post-activation.
    fn activations(&self, x: &[S; N_FEATURES]) -> Vec<Vec<S>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.n_out);
            layer.forward(acts.last().unwrap(), &mut out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    /// Accumulates `dz * d(logit)/d(params)` into `grad`.
    fn backprop(&self, acts: &[Vec<S>], dz: S, grad: &mut [S]) {
        let offsets = self.layer_offsets();
        let mut delta = vec![dz];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts[l];
            let off = offsets[l];
            for o in 0..layer.n_out {
                let d = delta[o];
                if d == S::zero() {
                    continue;
                }
                let gw = &mut grad[off + o * layer.n_in..off + (o + 1) * layer.n_in];
                for (gi, xi) in gw.iter_mut().zip(input) {
                    *gi += d * *xi;
                }
                grad[off + layer.w.len() + o] += d;
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![S::zero(); layer.n_in];
            for o in 0..layer.n_out {
                let d = delta[o];
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * *w;
                }
            }
            // tanh' = 1 - a^2 on the hidden activations feeding this layer.
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= S::one() - *a * *a;
            }
            delta = prev;
        }
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut k = 0;
        for l in &self.layers {
            offs.push(k);
            k += l.w.len() + l.b.len();
        }
        offs
    }

    pub fn to_json(&self) -> Result<String> {
        let file = WeightsFile {
            format: WEIGHTS_FORMAT.into(),
            version: 1,
            activation: "tanh".into(),
            feature_transform: "log1p_standardized".into(),
            feature_mean: self.mean.iter().map(|v| v.as_f64()).collect(),
            feature_std: self.std.iter().map(|v| v.as_f64()).collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    shape: [l.n_out, l.n_in],
                    weights: l.w.iter().map(|v| v.as_f64()).collect(),
                    bias: l.b.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: WeightsFile = serde_json::from_str(text)?;
        if f.format != WEIGHTS_FORMAT || f.activation != "tanh" {
            return Err(Error::invalid(format!("unsupported weights format {}/{}", f.format, f.activation)));
        }
        if f.feature_mean.len() != N_FEATURES || f.feature_std.len() != N_FEATURES {
            return Err(Error::invalid("feature statistics must have 4 entries"));
        }
        let mut expect_in = N_FEATURES;
        let mut layers = Vec::with_capacity(f.layers.len());
        for (k, l) in f.layers.iter().enumerate() {
            let [n_out, n_in] = l.shape;
            if n_in != expect_in || l.weights.len() != n_in * n_out || l.bias.len() != n_out {
                return Err(Error::invalid(format!("layer {k}: inconsistent shape {:?}", l.shape)));
            }
            expect_in = n_out;
            layers.push(Dense {
                n_in,
                n_out,
                w: l.weights.iter().map(|&v| S::lit(v)).collect(),
                b: l.bias.iter().map(|&v| S::lit(v)).collect(),
            });
        }
        if expect_in != 1 || layers.is_empty() {
            return Err(Error::invalid("network must end in a single output"));
        }
        let arr = |v: &[f64]| {
            let mut a = [S::zero(); N_FEATURES];
            for (d, s) in a.iter_mut().zip(v) {
                *d = S::lit(*s);
            }
            a
        };
        Ok(NeuralModel {
            layers,
            mean: arr(&f.feature_mean),
            std: arr(&f.feature_std),
        })
    }
}

const WEIGHTS_FORMAT: &str = "slrmig-mlp";

#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    format: String,
    version: u32,
    activation: String,
    feature_transform: String,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    /// `[n_out, n_in]`
    shape: [usize; 2],
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn build_set<S: Scalar>(
    rows: &[TrainingRow<S>],
    standardize: impl Fn([S; N_FEATURES]) -> [S; N_FEATURES],
) -> Result<TrainingSet<S>> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&r| (rows[r].features.origin, rows[r].features.dest));
    let mut set = TrainingSet {
        inputs: Vec::with_capacity(rows.len()),
        targets: Vec::with_capacity(rows.len()),
        groups: Vec::new(),
    };
    let mut k = 0;
    while k < order.len() {
        let origin = rows[order[k]].features.origin;
        let mut end = k;
        while end < order.len() && rows[order[end]].features.origin == origin {
            end += 1;
        }
        let total: S = order[k..end].iter().map(|&r| rows[r].flow).sum();
        if total > S::zero() {
            let lo = set.inputs.len();
            for &r in &order[k..end] {
                set.inputs.push(standardize(row_features(&rows[r].features)));
                set.targets.push(rows[r].flow / total);
            }
            set.groups.push((lo, set.inputs.len()));
        }
        k = end;
    }
    if set.groups.is_empty() {
        return Err(Error::ModelNotFitted("no origin with positive outflow".into()));
    }
    Ok(set)
}

fn feature_stats<S: Scalar>(rows: &[TrainingRow<S>]) -> ([S; N_FEATURES], [S; N_FEATURES]) {
    let n = S::from_usize_lossy(rows.len());
    let mut mean = [S::zero(); N_FEATURES];
    for r in rows {
        let x = raw_features(row_features(&r.features));
        for k in 0..N_FEATURES {
            mean[k] += x[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [S::zero(); N_FEATURES];
    for r in rows {
        let x = raw_features(row_features(&r.features));
        for k in 0..N_FEATURES {
            var[k] += (x[k] - mean[k]) * (x[k] - mean[k]);
        }
    }
    let std = var.map(|v| {
        let s = (v / n).sqrt();
        if s > S::lit(1e-12) {
            s
        } else {
            S::one()
        }
    });
    (mean, std)
}

/// Fits a regressor to per-origin destination proportions. Deterministic for a given seed.
pub fn train_neural<S: Scalar>(rows: &[TrainingRow<S>], cfg: &NeuralConfig) -> Result<NeuralModel<S>> {
    if rows.iter().all(|r| !(r.flow > S::zero())) {
        return Err(Error::ModelNotFitted("all training flows are zero".into()));
    }
    let (mean, std) = feature_stats(rows);
    let mut model = NeuralModel::init(&cfg.hidden, mean, std, cfg.seed);
    let set = model.training_set(rows)?;

    let (b1, b2, eps) = (S::lit(0.9), S::lit(0.999), S::lit(1e-8));
    let lr = S::lit(cfg.learning_rate);
    let mut params = model.params();
    let mut m = vec![S::zero(); params.len()];
    let mut v = vec![S::zero(); params.len()];
    let (mut b1t, mut b2t) = (S::one(), S::one());
    for _ in 0..cfg.epochs {
        let (_, grad) = model.loss_and_grad(&set);
        b1t *= b1;
        b2t *= b2;
        for k in 0..params.len() {
            m[k] = b1 * m[k] + (S::one() - b1) * grad[k];
            v[k] = b2 * v[k] + (S::one() - b2) * grad[k] * grad[k];
            let mh = m[k] / (S::one() - b1t);
            let vh = v[k] / (S::one() - b2t);
            params[k] -= lr * mh / (vh.sqrt() + eps);
        }
        model.set_params(&params);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<TrainingRow<f64>> {
        let mut out = Vec::new();
        for o in 0..4 {
            for d in 0..4 {
                if o == d {
                    continue;
                }
                out.push(TrainingRow {
                    features: FeatureRow {
                        origin: o,
                        dest: d,
                        origin_pop: 100.0 * (o + 1) as f64,
                        dest_pop: 50.0 * (d + 2) as f64,
                        distance: 10.0 * (1 + o.abs_diff(d)) as f64,
                        opportunities: 30.0 * o.abs_diff(d) as f64,
                    },
                    flow: (d + 1) as f64 * if o.abs_diff(d) == 1 { 3.0 } else { 1.0 },
                });
            }
        }
        out
    }

    #[test]
    fn deterministic_and_descends() {
        let cfg = NeuralConfig {
            hidden: vec![8, 8],
            epochs: 200,
            learning_rate: 1e-2,
            seed: 7,
        };
        let a = train_neural(&rows(), &cfg).unwrap();
        let b = train_neural(&rows(), &cfg).unwrap();
        assert_eq!(a.params(), b.params());

        let (mean, std) = feature_stats(&rows());
        let init = NeuralModel::init(&cfg.hidden, mean, std, cfg.seed);
        let set = init.training_set(&rows()).unwrap();
        assert!(a.loss(&set) < init.loss(&set));
    }

    #[test]
    fn zero_flows_rejected() {
        let mut r = rows();
        r.iter_mut().for_each(|x| x.flow = 0.0);
        assert!(matches!(train_neural(&r, &NeuralConfig::default()), Err(Error::ModelNotFitted(_))));
    }

    #[test]
    fn json_roundtrip() {
        let (mean, std) = feature_stats(&rows());
        let m = NeuralModel::<f64>::init(&[3, 2], mean, std, 1);
        let back = NeuralModel::<f64>::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        assert!(NeuralModel::<f64>::from_json(r#"{"format":"x"}"#).is_err());
    }

    #[test]
    fn loss_matches_loss_and_grad() {
        let (mean, std) = feature_stats(&rows());
        let m = NeuralModel::<f64>::init(&[5], mean, std, 3);
        let set = m.training_set(&rows()).unwrap();
        assert!((m.loss(&set) - m.loss_and_grad(&set).0).abs() < 1e-15);
    }
}
