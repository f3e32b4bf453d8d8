//! Double DQN with experience replay and a target network, optionally with
//! a state-adversarial margin regularizer.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{EnvError, EnvSpec};
use crate::numerics::{argmax, Rng};
use crate::qnet::{AdamConfig, AdamState, ModelError, Provenance, QNetwork};

/// Lower clamp on the regularizer value before it enters the loss.
pub const MARGIN_CAP: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite TD loss at update {update} (episode {episode})")]
    Divergence { episode: usize, update: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// True terminal (no bootstrap); time-limit truncation is not terminal.
    pub done: bool,
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        (0..n).map(|_| rng.below(self.items.len())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SaReg {
    Off,
    /// `states` caps how many states of each minibatch are regularized.
    On {
        epsilon: f64,
        inner_steps: usize,
        inner_lr: f64,
        kappa: f64,
        #[serde(default = "default_reg_states")]
        states: usize,
    },
}

fn default_reg_states() -> usize {
    8
}

impl SaReg {
    /// Five inner steps of size `ε/2` on 8 states per minibatch.
    pub fn with_epsilon(epsilon: f64, kappa: f64) -> Self {
        Self::On {
            epsilon,
            inner_steps: 5,
            inner_lr: epsilon / 2.0,
            kappa,
            states: default_reg_states(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Target network sync period, in updates.
    pub target_sync: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Environment steps over which exploration decays linearly.
    pub eps_decay_steps: usize,
    pub replay_capacity: usize,
    /// Replay size before the first update.
    pub warmup: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub sa_reg: SaReg,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            gamma: 0.99,
            lr: 1e-3,
            batch_size: 32,
            target_sync: 100,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 3000,
            replay_capacity: 10_000,
            warmup: 200,
            hidden: vec![64, 64],
            seed: 7,
            sa_reg: SaReg::Off,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0
            || self.target_sync == 0
            || self.replay_capacity == 0
            || self.eps_decay_steps == 0
        {
            return bad(
                "batch_size, target_sync, replay_capacity and eps_decay_steps must be positive",
            );
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return bad("exploration rates must lie in [0, 1]");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if let SaReg::On {
            epsilon,
            inner_lr,
            kappa,
            states,
            ..
        } = self.sa_reg
        {
            if !(epsilon > 0.0 && inner_lr >= 0.0 && kappa > 0.0 && states > 0) {
                return bad("sa_reg needs epsilon > 0, inner_lr ≥ 0, kappa > 0 and states > 0");
            }
        }
        Ok(())
    }

    pub fn provenance(&self) -> Provenance {
        match self.sa_reg {
            SaReg::Off => Provenance::Vanilla,
            SaReg::On { .. } => Provenance::SaAdv,
        }
    }

    /// Exploration rate after `step` environment steps.
    pub fn epsilon_at(&self, step: usize) -> f64 {
        let frac = (step as f64 / self.eps_decay_steps as f64).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub episode_returns: Vec<f64>,
    /// Index of the first update performed during each episode.
    pub episode_first_update: Vec<usize>,
    pub td_losses: Vec<f64>,
    /// Regularizer value (after the clamp) per update; empty when off.
    pub reg_values: Vec<f64>,
    /// Update counts at which the target network was refreshed.
    pub target_syncs: Vec<usize>,
    pub wall_clock_secs: f64,
}

impl TrainLog {
    /// `episode,return,mean_td_loss,mean_reg` with one row per episode.
    /// Episodes without updates report 0 for the means.
    pub fn to_csv(&self, header_comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = header_comment {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("episode,return,mean_td_loss,mean_reg\n");
        let n = self.episode_returns.len();
        for ep in 0..n {
            let lo = self.episode_first_update[ep];
            let hi = self
                .episode_first_update
                .get(ep + 1)
                .copied()
                .unwrap_or(self.td_losses.len());
            let mean = |v: &[f64]| {
                if v.is_empty() {
                    0.0
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            };
            let reg = if self.reg_values.is_empty() {
                0.0
            } else {
                mean(&self.reg_values[lo..hi])
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                ep,
                self.episode_returns[ep],
                mean(&self.td_losses[lo..hi]),
                reg
            ));
        }
        out
    }
}

/// `tᵢ = rᵢ + γ·(1 − doneᵢ)·Q_target(s′ᵢ, argmax_a Q_online(s′ᵢ, a))`.
pub fn td_targets(
    batch: &[&Transition],
    online: &QNetwork,
    target: &QNetwork,
    gamma: f64,
) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                t.r
            } else {
                let a = argmax(&online.q_raw(&t.s_next));
                t.r + gamma * target.q_raw(&t.s_next)[a]
            }
        })
        .collect()
}

/// Outcome of the inner maximization at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct SaRegTerm {
    /// `max_{a≠a*} Q(s̄, a) − Q(s̄, a*)` at the state found.
    pub value: f64,
    pub state: Vec<f64>,
    pub label: usize,
    pub rival: usize,
}

impl SaRegTerm {
    /// Adds `scale · ∇_θ max(value, −MARGIN_CAP)` into `grad`, with `s̄` held
    /// fixed. No-op when the clamp is active.
    pub fn accumulate_param_grad(&self, net: &QNetwork, grad: &mut [f64], scale: f64) {
        if self.value <= -MARGIN_CAP || self.rival == self.label {
            return;
        }
        let trace = net.trace(&self.state);
        let mut up = vec![0.0; net.actions()];
        up[self.rival] = scale;
        up[self.label] = -scale;
        net.backward(&trace, &up, Some(grad), false);
    }
}

fn margin_at(q: &[f64], label: usize) -> (f64, usize) {
    let rival = (0..q.len())
        .filter(|&a| a != label)
        .max_by(|&a, &b| q[a].total_cmp(&q[b]).then(b.cmp(&a)))
        .unwrap_or(label);
    (q[rival] - q[label], rival)
}

/// Approximates `max_{s̄ ∈ D_ε(s)} max_{a≠a*(s)} Q(s̄,a) − Q(s̄,a*(s))` by
/// sign-gradient projected ascent over the ℓ∞ ball intersected with the box.
/// Returns the regularizer inputs; with `SaReg::Off` the ball is a point.
pub fn sa_regularizer(net: &QNetwork, s: &[f64], cfg: &SaReg) -> SaRegTerm {
    let (epsilon, steps, lr) = match *cfg {
        SaReg::Off => (0.0, 0, 0.0),
        SaReg::On {
            epsilon,
            inner_steps,
            inner_lr,
            ..
        } => (epsilon, inner_steps, inner_lr),
    };
    let label = argmax(&net.q_raw(s));
    let mut x = s.to_vec();
    let mut best = {
        let (v, rival) = margin_at(&net.q_raw(&x), label);
        SaRegTerm {
            value: v,
            state: x.clone(),
            label,
            rival,
        }
    };
    for _ in 0..steps {
        let trace = net.trace(&x);
        let (_, rival) = margin_at(trace.q(), label);
        if rival == label {
            break;
        }
        let mut up = vec![0.0; net.actions()];
        up[rival] = 1.0;
        up[label] = -1.0;
        let g = net.backward(&trace, &up, None, true).unwrap();
        for ((xi, gi), si) in x.iter_mut().zip(&g).zip(s) {
            let step = if *gi > 0.0 {
                lr
            } else if *gi < 0.0 {
                -lr
            } else {
                0.0
            };
            *xi = (*xi + step)
                .clamp(si - epsilon, si + epsilon)
                .clamp(0.0, 1.0);
        }
        let (v, rival) = margin_at(&net.q_raw(&x), label);
        if v > best.value {
            best = SaRegTerm {
                value: v,
                state: x.clone(),
                label,
                rival,
            };
        }
    }
    best
}

/// Trains a fresh network on `spec`. Deterministic given `cfg.seed`.
pub fn train(spec: &EnvSpec, cfg: &TrainConfig) -> Result<(QNetwork, TrainLog), TrainError> {
    cfg.validate()?;
    spec.validate()?;
    let started = Instant::now();
    let root = Rng::new(cfg.seed);
    let actions = spec.num_actions();
    let mut online = QNetwork::new(
        spec.height,
        spec.width,
        &cfg.hidden,
        actions,
        &mut root.substream("init"),
    );
    online.set_provenance(cfg.provenance());
    let mut target = online.clone();
    let mut env_rng = root.substream("env");
    let mut explore_rng = root.substream("explore");
    let mut replay_rng = root.substream("replay");
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(online.params().len());
    let mut log = TrainLog::default();
    let mut steps = 0usize;
    let mut grad = vec![0.0; online.params().len()];

    for episode in 0..cfg.episodes {
        log.episode_first_update.push(log.td_losses.len());
        let (mut state, mut obs) = spec.reset(&mut env_rng);
        let mut ret = 0.0;
        while !state.done {
            let eps = cfg.epsilon_at(steps);
            let a = if explore_rng.uniform() < eps {
                explore_rng.below(actions)
            } else {
                argmax(&online.q_raw(obs.pixels()))
            };
            let (_, _, terminal) = spec.transition(&state.pos, a)?;
            let out = spec.step(&state, a)?;
            ret += out.reward;
            replay.push(Transition {
                s: obs.pixels().to_vec(),
                a,
                r: out.reward,
                s_next: out.obs.pixels().to_vec(),
                done: terminal,
            });
            steps += 1;
            state = out.state;
            obs = out.obs;

            if replay.len() < cfg.warmup.max(cfg.batch_size) {
                continue;
            }
            let idx = replay.sample_indices(cfg.batch_size, &mut replay_rng);
            let batch: Vec<&Transition> = idx.iter().map(|&i| replay.get(i)).collect();
            let targets = td_targets(&batch, &online, &target, cfg.gamma);
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            let mut up = vec![0.0; actions];
            for (t, y) in batch.iter().zip(&targets) {
                let trace = online.trace(&t.s);
                let err = trace.q()[t.a] - y;
                loss += err * err;
                up.iter_mut().for_each(|u| *u = 0.0);
                up[t.a] = 2.0 * err / n;
                online.backward(&trace, &up, Some(&mut grad), false);
            }
            loss /= n;
            let update = log.td_losses.len();
            if !loss.is_finite() {
                return Err(TrainError::Divergence { episode, update });
            }
            if let SaReg::On { kappa, states, .. } = cfg.sa_reg {
                // the minibatch is already a uniform sample, so its prefix is too
                let sub = &batch[..states.min(batch.len())];
                let m = sub.len() as f64;
                let mut reg = 0.0;
                for t in sub {
                    let term = sa_regularizer(&online, &t.s, &cfg.sa_reg);
                    reg += term.value.max(-MARGIN_CAP);
                    term.accumulate_param_grad(&online, &mut grad, kappa / m);
                }
                log.reg_values.push(reg / m);
            }
            online.adam_step(&grad, &adam_cfg, &mut adam);
            log.td_losses.push(loss);
            if (update + 1) % cfg.target_sync == 0 {
                target = online.clone();
                log.target_syncs.push(update + 1);
            }
        }
        log.episode_returns.push(ret);
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((online, log))
}

/// Mean undiscounted return of the greedy policy over `episodes` episodes.
pub fn evaluate_greedy(net: &QNetwork, spec: &EnvSpec, episodes: usize, seed: u64) -> f64 {
    let root = Rng::new(seed);
    let total: f64 = (0..episodes)
        .map(|k| {
            let mut rng = root.substream_indexed("eval", k as u64);
            crate::envs::run_episode(spec, &mut rng, |_, obs| argmax(&net.q_raw(obs.pixels())))
        })
        .sum();
    total / episodes.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(s: Vec<f64>, a: usize, r: f64, s_next: Vec<f64>, done: bool) -> Transition {
        Transition {
            s,
            a,
            r,
            s_next,
            done,
        }
    }

    #[test]
    fn terminal_target_is_reward() {
        let net = QNetwork::new(1, 2, &[4], 2, &mut Rng::new(0));
        let t = tr(vec![0.1, 0.2], 0, 0.7, vec![0.3, 0.4], true);
        assert_eq!(td_targets(&[&t], &net, &net, 0.9), vec![0.7]);
    }

    #[test]
    fn shared_linear_net_gives_q_learning_target() {
        let net =
            QNetwork::from_layers(1, 2, &[(vec![1.0, 0.0, 0.0, 2.0], vec![0.0, 0.5])]).unwrap();
        let t = tr(vec![0.0, 0.0], 1, 0.25, vec![0.4, 0.3], false);
        // Q(s′) = [0.4, 1.1]
        let y = td_targets(&[&t], &net, &net, 0.5)[0];
        assert!((y - (0.25 + 0.5 * 1.1)).abs() < 1e-15);
    }

    #[test]
    fn double_q_matches_per_sample_loop() {
        let mut rng = Rng::new(4);
        let online = QNetwork::new(2, 2, &[6], 3, &mut rng);
        let target = QNetwork::new(2, 2, &[6], 3, &mut rng);
        let batch: Vec<Transition> = (0..20)
            .map(|i| {
                let s = (0..4).map(|_| rng.uniform()).collect();
                let s2 = (0..4).map(|_| rng.uniform()).collect();
                tr(s, i % 3, rng.normal(), s2, i % 4 == 0)
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let got = td_targets(&refs, &online, &target, 0.99);
        for (t, y) in batch.iter().zip(&got) {
            let mut expect = t.r;
            if !t.done {
                let qo = online.q_raw(&t.s_next);
                let mut best = 0;
                for a in 1..qo.len() {
                    if qo[a] > qo[best] {
                        best = a;
                    }
                }
                expect += 0.99 * target.q_raw(&t.s_next)[best];
            }
            assert_eq!(*y, expect);
        }
    }

    #[test]
    fn replay_ring_and_sampling() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(tr(vec![i as f64], 0, 0.0, vec![], false));
        }
        assert_eq!(buf.len(), 3);
        let held: Vec<f64> = (0..3).map(|i| buf.get(i).s[0]).collect();
        assert_eq!(held, vec![3.0, 4.0, 2.0]);
        let a = buf.sample_indices(50, &mut Rng::new(1));
        assert_eq!(a, buf.sample_indices(50, &mut Rng::new(1)));
        assert!(a.iter().all(|&i| i < 3));
    }

    fn linear_pair() -> QNetwork {
        // Q₀ − Q₁ = 0.1 at s = 0.5·1, w₁ − w₀ = (0.3, −0.2, 0.4)
        QNetwork::from_layers(
            1,
            3,
            &[(vec![0.0, 0.0, 0.0, 0.3, -0.2, 0.4], vec![0.35, 0.0])],
        )
        .unwrap()
    }

    #[test]
    fn regularizer_closed_forms() {
        let net = linear_pair();
        let s = [0.5; 3];
        let point = sa_regularizer(
            &net,
            &s,
            &SaReg::On {
                epsilon: 0.0,
                inner_steps: 5,
                inner_lr: 0.0,
                kappa: 1.0,
                states: 1,
            },
        );
        let q = net.q_raw(&s);
        assert_eq!(point.value, q[1] - q[0]);

        let eps = 0.05;
        let ball = sa_regularizer(&net, &s, &SaReg::with_epsilon(eps, 1.0));
        let closed = eps * 0.9 - 0.1;
        assert!((ball.value - closed).abs() < 1e-3);

        let huge = QNetwork::from_layers(
            1,
            3,
            &[(vec![0.0, 0.0, 0.0, 0.3, -0.2, 0.4], vec![100.0, 0.0])],
        )
        .unwrap();
        let term = sa_regularizer(&huge, &s, &SaReg::with_epsilon(eps, 1.0));
        assert!(term.value < -50.0);
        let mut g = vec![0.0; huge.params().len()];
        term.accumulate_param_grad(&huge, &mut g, 1.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            episodes: 30,
            hidden: vec![8],
            warmup: 16,
            batch_size: 8,
            target_sync: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_episodes_returns_initial_network() {
        let spec = EnvSpec::catch(5, 4);
        let cfg = TrainConfig {
            episodes: 0,
            ..small_cfg()
        };
        let (net, log) = train(&spec, &cfg).unwrap();
        let init = QNetwork::new(
            5,
            4,
            &cfg.hidden,
            3,
            &mut Rng::new(cfg.seed).substream("init"),
        );
        assert_eq!(net.params(), init.params());
        assert!(log.episode_returns.is_empty());
    }

    #[test]
    fn training_is_reproducible_and_syncs_on_schedule() {
        let spec = EnvSpec::catch(5, 4);
        let cfg = small_cfg();
        let (a, la) = train(&spec, &cfg).unwrap();
        let (b, lb) = train(&spec, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(la.td_losses, lb.td_losses);
        assert_eq!(a.provenance(), Provenance::Vanilla);
        let expect: Vec<usize> = (1..=la.td_losses.len() / 7).map(|k| 7 * k).collect();
        assert_eq!(la.target_syncs, expect);
        assert_eq!(la.episode_returns.len(), 30);
        let csv = la.to_csv(None);
        assert_eq!(csv.lines().count(), 31);

        let sa = TrainConfig {
            sa_reg: SaReg::with_epsilon(0.05, 0.5),
            ..small_cfg()
        };
        let (n, l) = train(&spec, &sa).unwrap();
        assert_eq!(n.provenance(), Provenance::SaAdv);
        assert_eq!(l.reg_values.len(), l.td_losses.len());
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            TrainConfig {
                gamma: 0.0,
                ..small_cfg()
            },
            TrainConfig {
                batch_size: 0,
                ..small_cfg()
            },
            TrainConfig {
                eps_start: 1.5,
                ..small_cfg()
            },
            TrainConfig {
                sa_reg: SaReg::On {
                    epsilon: 0.0,
                    inner_steps: 1,
                    inner_lr: 0.0,
                    kappa: 1.0,
                    states: 32,
                },
                ..small_cfg()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(TrainError::InvalidConfig(_))));
        }
    }
}
