use super::{cross_entropy_upstream, Temperature};
use crate::numerics::{argmax, dot, norm2, normalize};
use crate::obs::Obs;
use crate::qnet::QNetwork;

/// Result of an ε-non-Lipschitz direction search.
#[derive(Debug, Clone, PartialEq)]
pub struct NldSearch {
    /// Unit direction `w`.
    pub direction: Vec<f64>,
    /// `max_a Q(ŝ, a) − Q(ŝ, a*(s))` at `ŝ = s + ε·w`, recomputed at the end.
    pub objective: f64,
    /// Objective after the start and after each accepted step.
    pub accepted: Vec<f64>,
}

fn gap(net: &QNetwork, x: &[f64], label: usize) -> f64 {
    let q = net.q_raw(x);
    q[argmax(&q)] - q[label]
}

fn shifted(s: &[f64], w: &[f64], eps: f64) -> Vec<f64> {
    s.iter().zip(w).map(|(a, b)| a + eps * b).collect()
}

/// Searches unit directions `w` maximizing the value gap opened at
/// `s + ε·w`. Ascent uses the softmax cross-entropy as a smooth surrogate,
/// projected to the sphere's tangent space; a step is kept only if the exact
/// gap does not decrease, otherwise the step length is halved.
/// Starts from the normalized cross-entropy gradient (or `e₀` if it vanishes).
pub fn epsilon_nld_search(
    net: &QNetwork,
    s: &Obs,
    eps: f64,
    steps: usize,
    t: Temperature,
) -> NldSearch {
    assert!(eps > 0.0, "ε must be positive");
    let x0 = s.pixels();
    let d = x0.len();
    let label = argmax(&net.q_raw(x0));
    let grad_at = |w: &[f64]| -> Vec<f64> {
        let x = shifted(x0, w, eps);
        let trace = net.trace(&x);
        let up = cross_entropy_upstream(trace.q(), label, t);
        net.backward(&trace, &up, None, true).unwrap()
    };

    let mut w = grad_at(&vec![0.0; d]);
    if normalize(&mut w) < 1e-300 {
        w = vec![0.0; d];
        w[0] = 1.0;
    }
    let mut best = gap(net, &shifted(x0, &w, eps), label);
    let mut accepted = vec![best];
    let mut lr = 1.0;
    for _ in 0..steps {
        let mut g = grad_at(&w);
        let radial = dot(&g, &w);
        g.iter_mut().zip(&w).for_each(|(gi, wi)| *gi -= radial * wi);
        let gn = norm2(&g);
        if gn == 0.0 || !gn.is_finite() {
            break;
        }
        let mut cand: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi + lr * gi / gn).collect();
        normalize(&mut cand);
        let val = gap(net, &shifted(x0, &cand, eps), label);
        if val >= best {
            w = cand;
            best = val;
            accepted.push(val);
        } else {
            lr *= 0.5;
        }
    }
    let objective = gap(net, &shifted(x0, &w, eps), label);
    NldSearch {
        direction: w,
        objective,
        accepted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn constant_net_keeps_initialization() {
        let net = QNetwork::from_layers(1, 3, &[(vec![0.0; 6], vec![1.0, 0.5])]).unwrap();
        let out = epsilon_nld_search(
            &net,
            &Obs::new(1, 3, vec![0.2; 3]).unwrap(),
            0.1,
            10,
            Temperature::default(),
        );
        assert_eq!(out.direction, vec![1.0, 0.0, 0.0]);
        assert_eq!(out.objective, 0.0);
    }

    #[test]
    fn search_dominates_start_and_never_decreases() {
        let mut rng = Rng::new(31);
        for _ in 0..10 {
            let net = QNetwork::new(3, 3, &[16, 16], 4, &mut rng);
            let s = Obs::new(3, 3, (0..9).map(|_| rng.uniform()).collect()).unwrap();
            let out = epsilon_nld_search(&net, &s, 0.05, 40, Temperature::default());
            assert!(out.objective >= 0.0);
            assert!(out.accepted.windows(2).all(|w| w[1] >= w[0]));
            assert!(out.objective >= out.accepted[0] - 1e-6);
            assert!((norm2(&out.direction) - 1.0).abs() < 1e-12);
        }
    }
}
