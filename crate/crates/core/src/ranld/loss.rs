use serde::{Deserialize, Serialize};

use crate::numerics::argmax;
use crate::obs::Obs;
use crate::qnet::{ModelError, QNetwork};

/// Softmax temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Option<Self> {
        (t > 0.0 && t.is_finite()).then_some(Self(t))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(1.0)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = String;

    fn try_from(t: f64) -> Result<Self, String> {
        Self::new(t).ok_or_else(|| format!("temperature must be positive and finite, got {t}"))
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// `πₐ = exp(qₐ/T) / Σ exp(q_b/T)`, evaluated with max subtraction.
pub fn softmax_policy(q: &[f64], t: Temperature) -> Vec<f64> {
    let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q.iter().map(|v| ((v - m) / t.0).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `−log π(q, label)` via log-sum-exp.
pub fn cross_entropy_from_q(q: &[f64], label: usize, t: Temperature) -> f64 {
    let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m / t.0 + q.iter().map(|v| ((v - m) / t.0).exp()).sum::<f64>().ln();
    (lse - q[label] / t.0).max(0.0)
}

/// `J(s, s_g) = −log π(s_g, a*(s))` with `a*(s)` the greedy action at `s`.
pub fn cross_entropy(
    net: &QNetwork,
    s: &Obs,
    s_g: &Obs,
    t: Temperature,
) -> Result<f64, ModelError> {
    let label = net.greedy_action(s)?;
    Ok(cross_entropy_from_q(&net.q_values(s_g)?, label, t))
}

/// `∂J/∂q = (π − onehot(label)) / T`.
pub fn cross_entropy_upstream(q: &[f64], label: usize, t: Temperature) -> Vec<f64> {
    let mut up = softmax_policy(q, t);
    up[label] -= 1.0;
    up.iter_mut().for_each(|u| *u /= t.0);
    up
}

/// Input gradient of `−log π(x, label)` at a raw (not necessarily boxed)
/// input. Returns the gradient and the Q-values at `x`.
pub fn label_gradient(
    net: &QNetwork,
    x: &[f64],
    label: usize,
    t: Temperature,
) -> (Vec<f64>, Vec<f64>) {
    let trace = net.trace(x);
    let q = trace.q().to_vec();
    let up = cross_entropy_upstream(&q, label, t);
    let g = net.backward(&trace, &up, None, true).unwrap();
    (g, q)
}

/// `∇_{s_g} J(s, s_g)` evaluated at `s_g = s`.
pub fn nld_gradient(net: &QNetwork, s: &Obs, t: Temperature) -> Result<Vec<f64>, ModelError> {
    let q = net.q_values(s)?;
    Ok(label_gradient(net, s.pixels(), argmax(&q), t).0)
}
