//! Adversarial observation perturbations against a [`QNetwork`].
//!
//! Every attack targets the greedy action `a*(s)` of the clean observation.
//! I-FGSM and the Nesterov-momentum attack ascend the softmax cross-entropy
//! `−log π(x, a*)`; Carlini & Wagner and the elastic-net attack descend
//! `c·f(x) + distance(x, s)` with the margin loss
//! `f(x) = max(Q(x, a*) − max_{a≠a*} Q(x, a), −κ)`; DeepFool repeatedly
//! projects onto the closest linearized decision boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{argmax, norm1, norm2, norm_inf, Rng};
use crate::obs::Obs;
use crate::qnet::{ModelError, QNetwork};
use crate::ranld::{label_gradient, Temperature};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite gradient at iteration {0}")]
    NonFiniteGradient(usize),
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackMethod {
    /// Iterative fast gradient sign method inside an ℓ∞ ball.
    Ifgsm {
        epsilon: f64,
        alpha: f64,
        max_iter: usize,
    },
    /// Gradient taken at the look-ahead point `x + μ·v`. `alpha` is the ℓ2
    /// length of each step before clipping, `epsilon` bounds each step per
    /// coordinate, and `budget` is the total ℓ∞ budget applied at the end.
    NesterovMomentum {
        epsilon: f64,
        decay: f64,
        alpha: f64,
        budget: f64,
        max_iter: usize,
    },
    CarliniWagner {
        kappa: f64,
        lr: f64,
        c: f64,
        max_iter: usize,
    },
    /// `beta` is the ℓ1 weight; the squared ℓ2 weight is 1.
    ElasticNet {
        beta: f64,
        lr: f64,
        c: f64,
        kappa: f64,
        max_iter: usize,
    },
    DeepFool {
        overshoot: f64,
        max_iter: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    #[serde(flatten)]
    pub method: AttackMethod,
    /// Temperature of the cross-entropy used by the gradient-sign attacks.
    #[serde(default)]
    pub temperature: Temperature,
}

impl AttackConfig {
    pub fn ifgsm() -> Self {
        Self::from(AttackMethod::Ifgsm {
            epsilon: 0.05,
            alpha: 0.01,
            max_iter: 10,
        })
    }

    pub fn nesterov() -> Self {
        Self::from(AttackMethod::NesterovMomentum {
            epsilon: 0.001,
            decay: 0.1,
            alpha: 0.05,
            budget: 0.05,
            max_iter: 50,
        })
    }

    pub fn carlini_wagner() -> Self {
        Self::from(AttackMethod::CarliniWagner {
            kappa: 10.0,
            lr: 0.01,
            c: 10.0,
            max_iter: 100,
        })
    }

    pub fn elastic_net() -> Self {
        Self::from(AttackMethod::ElasticNet {
            beta: 1e-4,
            lr: 0.1,
            c: 10.0,
            kappa: 10.0,
            max_iter: 300,
        })
    }

    pub fn deepfool() -> Self {
        Self::from(AttackMethod::DeepFool {
            overshoot: 0.02,
            max_iter: 50,
        })
    }

    /// The five default attacks in reporting order.
    pub fn portfolio() -> Vec<(String, AttackConfig)> {
        vec![
            ("ifgsm".into(), Self::ifgsm()),
            ("nesterov".into(), Self::nesterov()),
            ("cw".into(), Self::carlini_wagner()),
            ("ead".into(), Self::elastic_net()),
            ("deepfool".into(), Self::deepfool()),
        ]
    }

    /// The ℓ∞ bound the outcome must respect, if the method has one.
    pub fn linf_budget(&self) -> Option<f64> {
        match self.method {
            AttackMethod::Ifgsm { epsilon, .. } => Some(epsilon),
            AttackMethod::NesterovMomentum { budget, .. } => Some(budget),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: &str| Err(AttackError::InvalidConfig(m.to_string()));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        match self.method {
            AttackMethod::Ifgsm { epsilon, alpha, .. } if !(pos(alpha) && epsilon >= 0.0) => {
                bad("ifgsm needs alpha > 0 and epsilon ≥ 0")
            }
            AttackMethod::NesterovMomentum {
                epsilon,
                decay,
                alpha,
                budget,
                ..
            } if !(pos(epsilon) && pos(alpha) && budget >= 0.0 && (0.0..1.0).contains(&decay)) => {
                bad("nesterov needs epsilon, alpha > 0, budget ≥ 0 and decay in [0, 1)")
            }
            AttackMethod::CarliniWagner { kappa, lr, c, .. }
                if !(pos(lr) && kappa >= 0.0 && c >= 0.0) =>
            {
                bad("cw needs lr > 0, kappa ≥ 0 and c ≥ 0")
            }
            AttackMethod::ElasticNet {
                beta, lr, c, kappa, ..
            } if !(pos(lr) && beta >= 0.0 && c >= 0.0 && kappa >= 0.0) => {
                bad("ead needs lr > 0 and non-negative beta, c, kappa")
            }
            AttackMethod::DeepFool { overshoot, .. } if !(overshoot >= 0.0) => {
                bad("deepfool overshoot must be ≥ 0")
            }
            _ => Ok(()),
        }
    }
}

impl From<AttackMethod> for AttackConfig {
    fn from(method: AttackMethod) -> Self {
        Self {
            method,
            temperature: Temperature::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub s_adv: Obs,
    pub iterations: usize,
    /// Greedy action at `s_adv` differs from the greedy action at `s`.
    pub success: bool,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub objective: f64,
}

impl AttackOutcome {
    fn new(net: &QNetwork, s: &Obs, adv: Vec<f64>, iterations: usize, objective: f64) -> Self {
        let s_adv = Obs::clamped(s.height(), s.width(), adv);
        let delta: Vec<f64> = s_adv
            .pixels()
            .iter()
            .zip(s.pixels())
            .map(|(a, b)| a - b)
            .collect();
        let success = argmax(&net.q_raw(s_adv.pixels())) != argmax(&net.q_raw(s.pixels()));
        Self {
            l1: norm1(&delta),
            l2: norm2(&delta),
            linf: norm_inf(&delta),
            s_adv,
            iterations,
            success,
            objective,
        }
    }
}

/// Runs the configured attack against the greedy action at `s`.
pub fn attack(
    net: &QNetwork,
    s: &Obs,
    cfg: &AttackConfig,
    _rng: &mut Rng,
) -> Result<AttackOutcome, AttackError> {
    cfg.validate()?;
    let label = net.greedy_action(s)?;
    let t = cfg.temperature;
    match cfg.method {
        AttackMethod::Ifgsm {
            epsilon,
            alpha,
            max_iter,
        } => ifgsm(net, s, label, epsilon, alpha, max_iter, t),
        AttackMethod::NesterovMomentum {
            epsilon,
            decay,
            alpha,
            budget,
            max_iter,
        } => {
            let run =
                nesterov_iterates(net, s.pixels(), label, epsilon, decay, alpha, max_iter, t)?;
            let x = project(s.pixels(), run.iterates.last().unwrap(), budget);
            let obj = crate::ranld::cross_entropy_from_q(&net.q_raw(&x), label, t);
            Ok(AttackOutcome::new(net, s, x, run.iterations, obj))
        }
        AttackMethod::CarliniWagner {
            kappa,
            lr,
            c,
            max_iter,
        } => margin_descent(
            net,
            s,
            label,
            DescentParams {
                c,
                kappa,
                lr,
                l1: 0.0,
                max_iter,
            },
        ),
        AttackMethod::ElasticNet {
            beta,
            lr,
            c,
            kappa,
            max_iter,
        } => margin_descent(
            net,
            s,
            label,
            DescentParams {
                c,
                kappa,
                lr,
                l1: beta,
                max_iter,
            },
        ),
        AttackMethod::DeepFool {
            overshoot,
            max_iter,
        } => deepfool(net, s, label, overshoot, max_iter),
    }
}

/// Projection onto `{x : ‖x − s‖∞ ≤ eps} ∩ [0,1]^d`.
pub fn project(s: &[f64], x: &[f64], eps: f64) -> Vec<f64> {
    x.iter()
        .zip(s)
        .map(|(xi, si)| xi.clamp(si - eps, si + eps).clamp(0.0, 1.0))
        .collect()
}

fn clip_box(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

fn check_finite(g: &[f64], it: usize) -> Result<(), AttackError> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AttackError::NonFiniteGradient(it))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn ifgsm(
    net: &QNetwork,
    s: &Obs,
    label: usize,
    epsilon: f64,
    alpha: f64,
    max_iter: usize,
    t: Temperature,
) -> Result<AttackOutcome, AttackError> {
    let mut x = s.pixels().to_vec();
    for it in 0..max_iter {
        let (g, _) = label_gradient(net, &x, label, t);
        check_finite(&g, it)?;
        let stepped: Vec<f64> = x
            .iter()
            .zip(&g)
            .map(|(xi, gi)| xi + alpha * sign(*gi))
            .collect();
        x = project(s.pixels(), &stepped, epsilon);
    }
    let obj = crate::ranld::cross_entropy_from_q(&net.q_raw(&x), label, t);
    Ok(AttackOutcome::new(net, s, x, max_iter, obj))
}

pub(crate) struct NesterovRun {
    /// `x₀ = s, x₁, …` before the final projection.
    pub iterates: Vec<Vec<f64>>,
    /// Unclipped steps `α·v/‖v‖₂`.
    #[cfg_attr(not(test), allow(dead_code))]
    pub raw_steps: Vec<Vec<f64>>,
    pub iterations: usize,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn nesterov_iterates(
    net: &QNetwork,
    s: &[f64],
    label: usize,
    epsilon: f64,
    decay: f64,
    alpha: f64,
    max_iter: usize,
    t: Temperature,
) -> Result<NesterovRun, AttackError> {
    let d = s.len();
    let mut x = s.to_vec();
    let mut v = vec![0.0; d];
    let mut iterates = vec![x.clone()];
    let mut raw_steps = Vec::new();
    let mut iterations = 0;
    for it in 0..max_iter {
        let look: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi + decay * vi).collect();
        let (g, _) = label_gradient(net, &look, label, t);
        check_finite(&g, it)?;
        let g1 = norm1(&g);
        if g1 == 0.0 {
            break;
        }
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi = decay * *vi + gi / g1;
        }
        let vn = norm2(&v);
        if vn == 0.0 {
            break;
        }
        let step: Vec<f64> = v.iter().map(|vi| alpha * vi / vn).collect();
        for (xi, st) in x.iter_mut().zip(&step) {
            *xi += st.clamp(-epsilon, epsilon);
        }
        raw_steps.push(step);
        iterates.push(x.clone());
        iterations = it + 1;
    }
    Ok(NesterovRun {
        iterates,
        raw_steps,
        iterations,
    })
}

/// Margin loss `max(Q(x, label) − max_{a≠label} Q(x, a), −κ)`, its input
/// gradient (zero when the clamp is active) and the Q-values at `x`.
fn margin_loss(net: &QNetwork, x: &[f64], label: usize, kappa: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let trace = net.trace(x);
    let q = trace.q().to_vec();
    let runner_up = (0..q.len())
        .filter(|&a| a != label)
        .max_by(|&a, &b| q[a].total_cmp(&q[b]).then(b.cmp(&a)));
    let Some(other) = runner_up else {
        return (-kappa, vec![0.0; x.len()], q);
    };
    let margin = q[label] - q[other];
    if margin <= -kappa {
        return (-kappa, vec![0.0; x.len()], q);
    }
    let mut up = vec![0.0; q.len()];
    up[label] = 1.0;
    up[other] = -1.0;
    let g = net.backward(&trace, &up, None, true).unwrap();
    (margin, g, q)
}

/// Soft-thresholding, the proximal map of `λ‖·‖₁`.
pub fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// Proximal gradient (ISTA) for `g(x) + λ‖x‖₁` with fixed step `lr`.
pub fn proximal_gradient<G>(grad: G, x0: &[f64], lr: f64, lambda: f64, iters: usize) -> Vec<f64>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = x0.to_vec();
    for _ in 0..iters {
        let g = grad(&x);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi = soft_threshold(*xi - lr * gi, lr * lambda);
        }
    }
    x
}

#[derive(Debug, Clone, Copy)]
struct DescentParams {
    c: f64,
    kappa: f64,
    lr: f64,
    /// ℓ1 weight; 0 gives the Carlini & Wagner objective.
    l1: f64,
    max_iter: usize,
}

fn distance(s: &[f64], x: &[f64], l1: f64) -> f64 {
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for (a, b) in x.iter().zip(s) {
        d1 += (a - b).abs();
        d2 += (a - b) * (a - b);
    }
    l1 * d1 + d2
}

fn flips(net: &QNetwork, x: &[f64], label: usize) -> bool {
    argmax(&net.q_raw(x)) != label
}

/// Smallest successful point on the segment `[from, to]`, where `to` is
/// successful and `from` is not.
fn refine_boundary(net: &QNetwork, from: &[f64], to: &[f64], label: usize) -> Vec<f64> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let at = |t: f64| -> Vec<f64> { from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect() };
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if flips(net, &at(mid), label) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    at(hi)
}

/// Projected (CW) or proximal (EAD) descent on `c·f(x) + β‖x−s‖₁ + ‖x−s‖₂²`.
/// Returns the successful iterate with the smallest distance, else the final
/// iterate. Whenever an iterate first crosses the decision boundary the
/// crossing segment is bisected so the boundary point itself is a candidate.
fn margin_descent(
    net: &QNetwork,
    s: &Obs,
    label: usize,
    p: DescentParams,
) -> Result<AttackOutcome, AttackError> {
    let s0 = s.pixels();
    let objective = |x: &[f64]| -> f64 {
        let (f, _, _) = margin_loss(net, x, label, p.kappa);
        p.c * f + distance(s0, x, p.l1)
    };
    let mut x = s0.to_vec();
    let mut prev_success = flips(net, &x, label);
    let mut best: Option<(f64, Vec<f64>)> = prev_success.then(|| (0.0, x.clone()));
    for it in 0..p.max_iter {
        let (_, gf, _) = margin_loss(net, &x, label, p.kappa);
        check_finite(&gf, it)?;
        let mut next = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let grad = p.c * gf[i] + 2.0 * (x[i] - s0[i]);
            let y = x[i] - p.lr * grad;
            next.push(s0[i] + soft_threshold(y - s0[i], p.lr * p.l1));
        }
        clip_box(&mut next);
        let success = flips(net, &next, label);
        if success {
            let candidate = if prev_success {
                next.clone()
            } else {
                refine_boundary(net, &x, &next, label)
            };
            for cand in [candidate, next.clone()] {
                let d = distance(s0, &cand, p.l1);
                if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, cand));
                }
            }
        }
        prev_success = success;
        x = next;
    }
    let chosen = best.map_or(x, |(_, b)| b);
    let obj = objective(&chosen);
    Ok(AttackOutcome::new(net, s, chosen, p.max_iter, obj))
}

/// One DeepFool step at `x` toward the closest linearized boundary of
/// `label`: `r = |f_â| / ‖w_â‖₂² · w_â`. `None` when no boundary is reachable
/// (single action or vanishing gradient differences).
pub fn deepfool_step(net: &QNetwork, x: &[f64], label: usize) -> Option<Vec<f64>> {
    let trace = net.trace(x);
    let q = trace.q();
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for a in (0..q.len()).filter(|&a| a != label) {
        let mut up = vec![0.0; q.len()];
        up[a] = 1.0;
        up[label] = -1.0;
        let w = net.backward(&trace, &up, None, true).unwrap();
        let wn = norm2(&w);
        if wn == 0.0 {
            continue;
        }
        let f = q[a] - q[label];
        let dist = f.abs() / wn;
        if best.as_ref().is_none_or(|(bd, _, _)| dist < *bd) {
            best = Some((dist, f.abs() / (wn * wn), w));
        }
    }
    best.map(|(_, scale, w)| w.into_iter().map(|wi| scale * wi).collect())
}

fn deepfool(
    net: &QNetwork,
    s: &Obs,
    label: usize,
    overshoot: f64,
    max_iter: usize,
) -> Result<AttackOutcome, AttackError> {
    let s0 = s.pixels();
    let mut r_total = vec![0.0; s0.len()];
    let mut x = s0.to_vec();
    let mut iterations = 0;
    while iterations < max_iter && !flips(net, &x, label) {
        let Some(r) = deepfool_step(net, &x, label) else {
            break;
        };
        check_finite(&r, iterations)?;
        if r.iter().all(|v| *v == 0.0) {
            break;
        }
        r_total.iter_mut().zip(&r).for_each(|(acc, ri)| *acc += ri);
        // keep every iterate in the box so the flip test and the next
        // linearization see the point that is actually returned
        x = s0
            .iter()
            .zip(&r_total)
            .map(|(si, ri)| si + (1.0 + overshoot) * ri)
            .collect();
        clip_box(&mut x);
        iterations += 1;
    }
    let obj = norm2(&x.iter().zip(s0).map(|(a, b)| a - b).collect::<Vec<_>>());
    Ok(AttackOutcome::new(net, s, x, iterations, obj))
}

/// A uniformly random direction scaled to ℓ2 norm `l2`, added to `s` and
/// clipped to the box. Baseline for attack-effectiveness comparisons.
pub fn random_same_norm(s: &Obs, l2: f64, rng: &mut Rng) -> Obs {
    let dir = rng.unit_vector(s.dim());
    let x = s
        .pixels()
        .iter()
        .zip(&dir)
        .map(|(a, d)| a + l2 * d)
        .collect();
    Obs::clamped(s.height(), s.width(), x)
}
