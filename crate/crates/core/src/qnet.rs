//! Feed-forward state-action value network with exact reverse-mode
//! gradients with respect to parameters and to the input observation.
//!
//! Parameters live in one flat buffer, layer by layer: the `out × in`
//! weight matrix (row-major) followed by the `out` biases. Hidden layers use
//! a rectifier whose derivative at 0 is taken to be 0; the output layer is
//! linear.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{write_atomic, Reader, Writer};
use crate::numerics::Rng;
use crate::obs::Obs;

pub const MODEL_MAGIC: &[u8; 8] = b"RNLDQNET";
pub const MODEL_VERSION: u32 = 1;

/// Hidden layer widths used when nothing else is configured.
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("observation is {found_h}x{found_w}, network expects {height}x{width}")]
    ObsShape {
        height: usize,
        width: usize,
        found_h: usize,
        found_w: usize,
    },
    #[error("vector has length {found}, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("layer sizes {0:?} are invalid")]
    Layout(Vec<usize>),
    #[error("action {action} out of range for {actions} actions")]
    Action { action: usize, actions: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("model file not found: {0}")]
    NotFound(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model format version {found} is newer than supported version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a network was trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "sa-adv")]
    SaAdv,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::Vanilla => "vanilla",
            Provenance::SaAdv => "sa-adv",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    height: usize,
    width: usize,
    /// `[d, h₁, …, |A|]`
    sizes: Vec<usize>,
    params: Vec<f64>,
    provenance: Provenance,
    config_hash: u64,
}

/// Cached activations of one forward pass. `activations[0]` is the input,
/// `activations[l + 1]` the output of layer `l` (post-rectifier on hidden
/// layers, identical to the pre-activation on the output layer).
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn q(&self) -> &[f64] {
        self.activations
            .last()
            .expect("trace has at least the input")
    }

    /// Post-rectifier activations of the hidden layers.
    pub fn hidden(&self) -> &[Vec<f64>] {
        let n = self.activations.len();
        &self.activations[1..n - 1]
    }
}

/// One regression sample for [`QNetwork::param_gradient`].
#[derive(Debug, Clone, Copy)]
pub struct TdSample<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub target: f64,
}

fn layer_len(sizes: &[usize], l: usize) -> usize {
    sizes[l + 1] * sizes[l] + sizes[l + 1]
}

impl QNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        height: usize,
        width: usize,
        hidden: &[usize],
        actions: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut sizes = vec![height * width];
        sizes.extend_from_slice(hidden);
        sizes.push(actions);
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let mut params =
            Vec::with_capacity((0..sizes.len() - 1).map(|l| layer_len(&sizes, l)).sum());
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.uniform_range(-limit, limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            height,
            width,
            sizes,
            params,
            provenance: Provenance::Vanilla,
            config_hash: 0,
        }
    }

    /// Builds a network from explicit per-layer `(weights, bias)` pairs,
    /// weights row-major `out × in`.
    pub fn from_layers(
        height: usize,
        width: usize,
        layers: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<Self, ModelError> {
        let mut sizes = vec![height * width];
        let mut params = Vec::new();
        for (w, b) in layers {
            let fan_in = *sizes.last().unwrap();
            if b.is_empty() || w.len() != b.len() * fan_in {
                sizes.push(b.len());
                return Err(ModelError::Layout(sizes));
            }
            sizes.push(b.len());
            params.extend_from_slice(w);
            params.extend_from_slice(b);
        }
        if sizes.len() < 2 || sizes[0] == 0 {
            return Err(ModelError::Layout(sizes));
        }
        Ok(Self {
            height,
            width,
            sizes,
            params,
            provenance: Provenance::Vanilla,
            config_hash: 0,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn actions(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn set_provenance(&mut self, p: Provenance) {
        self.provenance = p;
    }

    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }

    pub fn set_config_hash(&mut self, h: u64) {
        self.config_hash = h;
    }

    fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|k| layer_len(&self.sizes, k)).sum()
    }

    /// `(weights, bias)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off = self.layer_offset(l);
        let nw = self.sizes[l] * self.sizes[l + 1];
        let nb = self.sizes[l + 1];
        (
            &self.params[off..off + nw],
            &self.params[off + nw..off + nw + nb],
        )
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let off = self.layer_offset(l);
        let nw = self.sizes[l] * self.sizes[l + 1];
        let nb = self.sizes[l + 1];
        let (w, rest) = self.params[off..off + nw + nb].split_at_mut(nw);
        (w, rest)
    }

    fn check_obs(&self, s: &Obs) -> Result<(), ModelError> {
        if s.height() != self.height || s.width() != self.width {
            return Err(ModelError::ObsShape {
                height: self.height,
                width: self.width,
                found_h: s.height(),
                found_w: s.width(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, s: &Obs) -> Result<(Vec<f64>, ForwardTrace), ModelError> {
        self.check_obs(s)?;
        let trace = self.trace(s.pixels());
        Ok((trace.q().to_vec(), trace))
    }

    /// Q-values only.
    pub fn q_values(&self, s: &Obs) -> Result<Vec<f64>, ModelError> {
        self.check_obs(s)?;
        Ok(self.q_raw(s.pixels()))
    }

    /// Greedy action, lowest index on ties.
    pub fn greedy_action(&self, s: &Obs) -> Result<usize, ModelError> {
        Ok(crate::numerics::argmax(&self.q_values(s)?))
    }

    /// Forward pass on a flat input that need not lie in [0, 1].
    pub fn q_raw(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in 0..self.num_layers() {
            let mut next = self.affine(l, &cur);
            if l + 1 < self.num_layers() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        cur
    }

    fn affine(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let (w, b) = self.layer(l);
        let fan_in = self.sizes[l];
        assert_eq!(x.len(), fan_in, "layer input length");
        b.iter()
            .enumerate()
            .map(|(o, bias)| {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                bias + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect()
    }

    /// Forward pass keeping every intermediate, on a flat input.
    pub fn trace(&self, x: &[f64]) -> ForwardTrace {
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(x.to_vec());
        for l in 0..self.num_layers() {
            let z = self.affine(l, activations.last().unwrap());
            let a = if l + 1 < self.num_layers() {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            activations.push(a);
        }
        ForwardTrace { pre, activations }
    }

    /// Reverse pass for the scalar `⟨upstream, q⟩`. Accumulates parameter
    /// gradients into `param_grad` when given, and returns the input gradient
    /// when `want_input` is set.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        mut param_grad: Option<&mut [f64]>,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let nl = self.num_layers();
        let mut delta = upstream.to_vec();
        for l in (0..nl).rev() {
            let (w, _) = self.layer(l);
            let fan_in = self.sizes[l];
            let input = &trace.activations[l];
            if let Some(g) = param_grad.as_deref_mut() {
                let off = self.layer_offset(l);
                let nw = fan_in * self.sizes[l + 1];
                let (gw, gb) = g[off..off + nw + self.sizes[l + 1]].split_at_mut(nw);
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (gr, x) in row.iter_mut().zip(input) {
                        *gr += d * x;
                    }
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            let mut dx = vec![0.0; fan_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (acc, wv) in dx.iter_mut().zip(row) {
                    *acc += d * wv;
                }
            }
            if l > 0 {
                for (v, z) in dx.iter_mut().zip(&trace.pre[l - 1]) {
                    if *z <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Some(delta)
    }

    /// Gradient of `⟨upstream, q(s)⟩` with respect to the observation.
    pub fn input_gradient(&self, s: &Obs, upstream: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_obs(s)?;
        self.input_gradient_raw(s.pixels(), upstream)
    }

    pub fn input_gradient_raw(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>, ModelError> {
        if upstream.len() != self.actions() {
            return Err(ModelError::Length {
                expected: self.actions(),
                found: upstream.len(),
            });
        }
        if x.len() != self.input_dim() {
            return Err(ModelError::Length {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let trace = self.trace(x);
        Ok(self.backward(&trace, upstream, None, true).unwrap())
    }

    /// Gradient of `Σ (Q(sᵢ, aᵢ) − tᵢ)² / n` with respect to all parameters.
    pub fn param_gradient(&self, batch: &[TdSample<'_>]) -> Result<Vec<f64>, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut upstream = vec![0.0; self.actions()];
        for sample in batch {
            if sample.action >= self.actions() {
                return Err(ModelError::Action {
                    action: sample.action,
                    actions: self.actions(),
                });
            }
            if sample.obs.len() != self.input_dim() {
                return Err(ModelError::Length {
                    expected: self.input_dim(),
                    found: sample.obs.len(),
                });
            }
            let trace = self.trace(sample.obs);
            upstream.iter_mut().for_each(|u| *u = 0.0);
            upstream[sample.action] = 2.0 * (trace.q()[sample.action] - sample.target) / n;
            self.backward(&trace, &upstream, Some(&mut grad), false);
        }
        Ok(grad)
    }

    /// Mean squared TD error of a batch.
    pub fn batch_loss(&self, batch: &[TdSample<'_>]) -> f64 {
        let n = batch.len() as f64;
        batch
            .iter()
            .map(|s| (self.q_raw(s.obs)[s.action] - s.target).powi(2))
            .sum::<f64>()
            / n
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.u32(self.height as u32);
        w.u32(self.width as u32);
        w.u32(self.actions() as u32);
        w.u8(match self.provenance {
            Provenance::Vanilla => 0,
            Provenance::SaAdv => 1,
        });
        w.u64(self.config_hash);
        w.u32(self.sizes.len() as u32);
        for s in &self.sizes {
            w.u32(*s as u32);
        }
        w.u64(self.params.len() as u64);
        for p in &self.params {
            w.f64(*p);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let corrupt = |m: &str| ModelError::Corrupt(m.to_string());
        let truncated = || corrupt("truncated");
        let mut r = Reader::new(bytes);
        if r.take(8).ok_or_else(truncated)? != MODEL_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32().ok_or_else(truncated)?;
        if version > MODEL_VERSION {
            return Err(ModelError::UnsupportedVersion {
                found: version,
                supported: MODEL_VERSION,
            });
        }
        if version == 0 {
            return Err(corrupt("version 0"));
        }
        let height = r.u32().ok_or_else(truncated)? as usize;
        let width = r.u32().ok_or_else(truncated)? as usize;
        let actions = r.u32().ok_or_else(truncated)? as usize;
        let provenance = match r.u8().ok_or_else(truncated)? {
            0 => Provenance::Vanilla,
            1 => Provenance::SaAdv,
            _ => return Err(corrupt("unknown provenance tag")),
        };
        let config_hash = r.u64().ok_or_else(truncated)?;
        let n_sizes = r.u32().ok_or_else(truncated)? as usize;
        if !(2..=64).contains(&n_sizes) {
            return Err(corrupt("implausible layer count"));
        }
        let sizes = (0..n_sizes)
            .map(|_| r.u32().map(|v| v as usize).ok_or_else(truncated))
            .collect::<Result<Vec<_>, _>>()?;
        if sizes[0] != height * width || sizes[n_sizes - 1] != actions || sizes.contains(&0) {
            return Err(corrupt("layer sizes inconsistent with metadata"));
        }
        let expected: usize = (0..n_sizes - 1).map(|l| layer_len(&sizes, l)).sum();
        let count = r.u64().ok_or_else(truncated)? as usize;
        if count != expected {
            return Err(corrupt("parameter count mismatch"));
        }
        if r.remaining() < count * 8 {
            return Err(truncated());
        }
        let params: Vec<f64> = (0..count).map(|_| r.f64().unwrap()).collect();
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes"));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(corrupt("non-finite parameter"));
        }
        Ok(Self {
            height,
            width,
            sizes,
            params,
            provenance,
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ModelError::NotFound(path.display().to_string()),
            _ => ModelError::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_update(params: &mut [f64], grads: &[f64], cfg: &AdamConfig, state: &mut AdamState) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(state.m.len(), params.len(), "optimizer state shape");
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

impl QNetwork {
    pub fn adam_step(&mut self, grads: &[f64], cfg: &AdamConfig, state: &mut AdamState) {
        adam_update(&mut self.params, grads, cfg, state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn linear_net() -> QNetwork {
        // 1x3 observation, 2 actions
        QNetwork::from_layers(
            1,
            3,
            &[(vec![1.0, -2.0, 0.5, 0.3, 0.0, 4.0], vec![0.1, -0.2])],
        )
        .unwrap()
    }

    fn obs(p: &[f64], h: usize, w: usize) -> Obs {
        Obs::new(h, w, p.to_vec()).unwrap()
    }

    #[test]
    fn zero_weights_output_last_bias() {
        let mut net = QNetwork::new(2, 2, &[3], 2, &mut Rng::new(1));
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let (_, b) = net.layer_mut(1);
        b.copy_from_slice(&[0.25, -1.5]);
        let (q, _) = net.forward(&obs(&[0.1, 0.9, 0.3, 0.0], 2, 2)).unwrap();
        assert_eq!(q, vec![0.25, -1.5]);
    }

    #[test]
    fn single_linear_layer_closed_form() {
        let net = linear_net();
        let s = [0.2, 0.4, 1.0];
        let q = net.q_values(&obs(&s, 1, 3)).unwrap();
        assert_eq!(q[0], 0.1 + (0.2 - 0.8 + 0.5));
        assert_eq!(q[1], -0.2 + (0.3 * 0.2 + 0.0 * 0.4 + 4.0 * 1.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = linear_net();
        assert!(matches!(
            net.forward(&Obs::zeros(3, 1)),
            Err(ModelError::ObsShape { .. })
        ));
    }

    #[test]
    fn linear_input_gradient_is_weight_row() {
        let net = linear_net();
        let s = obs(&[0.2, 0.4, 1.0], 1, 3);
        assert_eq!(
            net.input_gradient(&s, &[0.0, 1.0]).unwrap(),
            vec![0.3, 0.0, 4.0]
        );
        assert_eq!(
            net.input_gradient(&s, &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = Rng::new(17);
        let net = QNetwork::new(3, 4, &[16, 16], 3, &mut rng);
        let x: Vec<f64> = (0..12).map(|_| rng.uniform()).collect();
        let up = [0.7, -1.1, 0.4];
        let analytic = net.input_gradient_raw(&x, &up).unwrap();
        let fd = finite_diff_grad(
            |y| net.q_raw(y).iter().zip(&up).map(|(q, u)| q * u).sum(),
            &x,
            1e-3,
        )
        .unwrap();
        for (a, f) in analytic.iter().zip(&fd) {
            if a.abs() > 1e-6 {
                assert!(((a - f) / a).abs() <= 1e-4, "{a} vs {f}");
            }
        }
    }

    #[test]
    fn param_gradient_closed_form_and_zero() {
        let net = linear_net();
        let s = [0.2, 0.4, 1.0];
        let q = net.q_raw(&s);
        let zero = net
            .param_gradient(&[TdSample {
                obs: &s,
                action: 1,
                target: q[1],
            }])
            .unwrap();
        assert!(zero.iter().all(|g| *g == 0.0));

        let g = net
            .param_gradient(&[TdSample {
                obs: &s,
                action: 1,
                target: 0.0,
            }])
            .unwrap();
        let c = 2.0 * q[1];
        // weights row 1 occupies params[3..6], bias[1] is params[7]
        assert_eq!(&g[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&g[3..6], &[c * 0.2, c * 0.4, c * 1.0]);
        assert_eq!((g[6], g[7]), (0.0, c));
        assert!(matches!(
            net.param_gradient(&[]),
            Err(ModelError::EmptyBatch)
        ));
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        let mut rng = Rng::new(23);
        let net = QNetwork::new(2, 3, &[8, 8], 3, &mut rng);
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| rng.uniform()).collect())
            .collect();
        let batch: Vec<TdSample> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| TdSample {
                obs: x,
                action: i % 3,
                target: rng.normal(),
            })
            .collect();
        let analytic = net.param_gradient(&batch).unwrap();
        for _ in 0..20 {
            let idx = rng.below(net.params().len());
            let fd = finite_diff_grad(
                |p| {
                    let mut probe = net.clone();
                    probe.params_mut()[idx] = p[0];
                    probe.batch_loss(&batch)
                },
                &[net.params()[idx]],
                1e-3,
            )
            .unwrap()[0];
            let a = analytic[idx];
            if a.abs() > 1e-6 {
                assert!(((a - fd) / a).abs() <= 1e-4, "param {idx}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn last_layer_scaling_is_homogeneous() {
        let mut rng = Rng::new(5);
        let net = QNetwork::new(2, 2, &[6], 4, &mut rng);
        let x = [0.1, 0.5, 0.9, 0.3];
        let mut scaled = net.clone();
        let (w, b) = scaled.layer_mut(1);
        w.iter_mut().chain(b.iter_mut()).for_each(|p| *p *= 3.0);
        let q = net.q_raw(&x);
        let qs = scaled.q_raw(&x);
        for (a, b) in q.iter().zip(&qs) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
        assert_eq!(crate::numerics::argmax(&q), crate::numerics::argmax(&qs));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        adam_update(&mut p, &[0.0, 0.0], &AdamConfig::default(), &mut st);
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.m, vec![0.0, 0.0]);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let cfg = AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        adam_update(&mut p, &[0.5], &cfg, &mut st);
        // m̂ = g, v̂ = g², update = lr·g/(|g| + eps)
        assert!((p[0] + 0.01 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_two_steps_hand_recurrence() {
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut p = vec![1.0];
        let mut st = AdamState::new(1);
        adam_update(&mut p, &[2.0], &cfg, &mut st);
        adam_update(&mut p, &[-1.0], &cfg, &mut st);
        // step 1: m = 0.2, v = 0.004, m̂ = 2, v̂ = 4 → p = 1 − 0.1·2/(2+1e-8)
        let p1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        // step 2: m = 0.18 − 0.1 = 0.08, v = 0.003996 + 0.001 = 0.004996
        let m_hat = 0.08 / (1.0 - 0.81);
        let v_hat: f64 = 0.004996 / (1.0 - 0.998001);
        let p2 = p1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - p2).abs() < 1e-12, "{} vs {p2}", p[0]);
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let mut net = QNetwork::new(3, 3, &[5, 4], 3, &mut Rng::new(8));
        net.set_provenance(Provenance::SaAdv);
        net.set_config_hash(0xdead_beef);
        net.save(&path).unwrap();
        let back = QNetwork::load(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_bytes(), net.to_bytes());

        let bytes = net.to_bytes();
        assert!(matches!(
            QNetwork::from_bytes(&bytes[..bytes.len() - 3]),
            Err(ModelError::Corrupt(_))
        ));
        let mut future = bytes.clone();
        future[8..12].copy_from_slice(&(MODEL_VERSION + 1).to_le_bytes());
        assert!(matches!(
            QNetwork::from_bytes(&future),
            Err(ModelError::UnsupportedVersion { found, .. }) if found == MODEL_VERSION + 1
        ));
        assert!(matches!(
            QNetwork::load(&dir.path().join("nope.bin")),
            Err(ModelError::NotFound(_))
        ));
    }
}
