//! Deterministic actor-critic agent over a continuous action in `[0, 1]`.
//!
//! The agent makes one decision per quantizable unit. Each action maps to a
//! bit width through [`action_to_bits`]; the episode reward arrives only once
//! all units are decided.

mod checkpoint;
mod replay;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{read_agent, write_agent, AGENT_MAGIC, AGENT_VERSION};
pub use replay::{ReplayBuffer, Transition};

use crate::nn::{Activation, Mlp, MlpAdam};
use crate::optim::AdamConfig;
use crate::quantizer::{MAX_BITS, MIN_BITS};

pub const OBS_DIM: usize = 7;

/// Seven-component observation of one unit, normalized to `[0, 1]`.
pub type Observation = [f64; OBS_DIM];

#[derive(Debug, Error)]
pub enum DdpgError {
    #[error("observation maximum {index} is not strictly positive")]
    ZeroMaximum { index: usize },
    #[error("empty update batch")]
    EmptyBatch,
    #[error("non-finite {what} ({value}); update rejected")]
    NonFinite { what: &'static str, value: f64 },
    #[error("malformed agent checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Soft target update rate.
    pub tau: f64,
    pub gamma: f64,
    pub replay_capacity: usize,
    /// Weight of the old value in the reward baseline.
    pub ema_decay: f64,
    pub noise_sigma: f64,
    /// Per-episode multiplier of the noise scale.
    pub noise_decay: f64,
    pub noise_floor: f64,
    /// Episodes of pure exploration before the first update.
    pub warmup_episodes: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            tau: 0.01,
            gamma: 1.0,
            replay_capacity: 2048,
            ema_decay: 0.95,
            noise_sigma: 0.5,
            noise_decay: 0.99,
            noise_floor: 0.02,
            warmup_episodes: 8,
        }
    }
}

/// Bit width for action `a`: `round(0.5 + 8a)` clamped to `[1, 8]`.
///
/// Out-of-range actions are clamped first.
pub fn action_to_bits(a: f64) -> u8 {
    let a = if (0.0..=1.0).contains(&a) {
        a
    } else {
        log::warn!("action {a} outside [0, 1], clamping");
        if a.is_nan() {
            0.0
        } else {
            a.clamp(0.0, 1.0)
        }
    };
    // f64::round rounds half away from zero.
    (0.5 + 8.0 * a)
        .round()
        .clamp(MIN_BITS as f64, MAX_BITS as f64) as u8
}

/// Divides each component by its architecture-wide maximum.
pub fn normalize_observation(
    raw: &[f64; OBS_DIM],
    maxima: &[f64; OBS_DIM],
) -> Result<Observation, DdpgError> {
    let mut out = [0.0; OBS_DIM];
    for i in 0..OBS_DIM {
        if !(maxima[i] > 0.0) {
            return Err(DdpgError::ZeroMaximum { index: i });
        }
        out[i] = raw[i] / maxima[i];
    }
    Ok(out)
}

/// Exponential moving average of episode rewards. The first reward
/// initializes it; before that it reads 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBaseline {
    pub decay: f64,
    pub value: f64,
    pub initialized: bool,
}

impl RewardBaseline {
    pub fn new(decay: f64) -> Self {
        Self {
            decay,
            value: 0.0,
            initialized: false,
        }
    }

    pub fn update(&mut self, reward: f64) -> f64 {
        if self.initialized {
            self.value = self.decay * self.value + (1.0 - self.decay) * reward;
        } else {
            self.value = reward;
            self.initialized = true;
        }
        self.value
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: DdpgConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    actor_opt: MlpAdam,
    critic_opt: MlpAdam,
    pub replay: ReplayBuffer,
    pub baseline: RewardBaseline,
    pub sigma: f64,
    pub episodes: u64,
    rng: ChaCha8Rng,
}

fn adam(lr: f64) -> AdamConfig {
    AdamConfig::new(lr, 0.9, 0.999)
}

fn stack(rows: impl ExactSizeIterator<Item = Vec<f64>>, width: usize) -> Array2<f64> {
    let n = rows.len();
    Array2::from_shape_vec((n, width), rows.flatten().collect()).expect("row width")
}

impl Agent {
    pub fn new(config: DdpgConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let mut actor = Mlp::new(&[OBS_DIM, h, h, 1], Activation::Sigmoid, &mut rng);
        let last = actor.layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
        let critic = Mlp::new(&[OBS_DIM + 1, h, h, 1], Activation::Identity, &mut rng);
        Self {
            actor_opt: MlpAdam::new(&actor, adam(config.actor_lr)),
            critic_opt: MlpAdam::new(&critic, adam(config.critic_lr)),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            replay: ReplayBuffer::new(config.replay_capacity),
            baseline: RewardBaseline::new(config.ema_decay),
            sigma: config.noise_sigma,
            episodes: 0,
            rng,
            config,
        }
    }

    pub fn config(&self) -> &DdpgConfig {
        &self.config
    }

    /// Deterministic policy output `mu(S)`.
    pub fn policy(&self, obs: &Observation) -> f64 {
        let x = stack(std::iter::once(obs.to_vec()), OBS_DIM);
        self.actor.forward(x.view())[(0, 0)]
    }

    /// Policy output, plus truncated Gaussian noise on `[0, 1]` when exploring.
    pub fn select_action(&mut self, obs: &Observation, explore: bool) -> f64 {
        let mu = self.policy(obs).clamp(0.0, 1.0);
        if !explore || self.sigma <= 0.0 {
            return mu;
        }
        let normal = Normal::new(mu, self.sigma).expect("positive sigma");
        for _ in 0..64 {
            let a = normal.sample(&mut self.rng);
            if (0.0..=1.0).contains(&a) {
                return a;
            }
        }
        // Practically unreachable: sigma >= noise_floor keeps acceptance high.
        normal.sample(&mut self.rng).clamp(0.0, 1.0)
    }

    /// Uniform random action, used during warm-up.
    pub fn random_action(&mut self) -> f64 {
        self.rng.random_range(0.0..=1.0)
    }

    /// `R + gamma * Q'(S', mu'(S')) - eps`, or `R - eps` for terminal steps.
    pub fn compute_q_target(&self, t: &Transition) -> f64 {
        let eps = self.baseline.value;
        match &t.next_obs {
            None => t.reward - eps,
            Some(next) => {
                let s = stack(std::iter::once(next.to_vec()), OBS_DIM);
                let a = self.actor_target.forward(s.view())[(0, 0)];
                let mut sa = next.to_vec();
                sa.push(a);
                let q = self
                    .critic_target
                    .forward(stack(std::iter::once(sa), OBS_DIM + 1).view())[(0, 0)];
                t.reward + self.config.gamma * q - eps
            }
        }
    }

    /// Mean squared TD error of the critic on `batch`.
    pub fn critic_loss(&self, batch: &[Transition]) -> f64 {
        let targets: Vec<f64> = batch.iter().map(|t| self.compute_q_target(t)).collect();
        let x = critic_inputs(batch);
        let q = self.critic.forward(x.view());
        q.iter()
            .zip(&targets)
            .map(|(q, y)| (y - q) * (y - q))
            .sum::<f64>()
            / batch.len() as f64
    }

    /// One critic step, one actor step through the critic, then soft target
    /// updates. Nothing is modified when a loss is not finite.
    pub fn update(&mut self, batch: &[Transition]) -> Result<UpdateStats, DdpgError> {
        if batch.is_empty() {
            return Err(DdpgError::EmptyBatch);
        }
        let k = batch.len() as f64;
        let targets: Vec<f64> = batch.iter().map(|t| self.compute_q_target(t)).collect();
        let x = critic_inputs(batch);
        let trace = self.critic.forward_traced(x.view());
        let q = &trace.output;
        let critic_loss = q
            .iter()
            .zip(&targets)
            .map(|(q, y)| (y - q) * (y - q))
            .sum::<f64>()
            / k;
        if !critic_loss.is_finite() {
            log::warn!("critic loss {critic_loss} on a batch of {}", batch.len());
            return Err(DdpgError::NonFinite {
                what: "critic loss",
                value: critic_loss,
            });
        }

        let (actor_loss, actor_grads) = self.actor_gradient(batch);
        if !actor_loss.is_finite() {
            log::warn!("actor loss {actor_loss} on a batch of {}", batch.len());
            return Err(DdpgError::NonFinite {
                what: "actor loss",
                value: actor_loss,
            });
        }

        let mut gq = q.clone();
        for (g, y) in gq.iter_mut().zip(&targets) {
            *g = 2.0 * (*g - y) / k;
        }
        let (critic_grads, _) = self.critic.backward(&trace, gq.view());
        self.critic_opt.step(&mut self.critic, &critic_grads);
        self.actor_opt.step(&mut self.actor, &actor_grads);
        self.soft_update_targets();
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
        })
    }

    /// `-mean Q(S, mu(S))` and its gradient w.r.t. the actor parameters.
    fn actor_gradient(&self, batch: &[Transition]) -> (f64, Vec<crate::nn::DenseGrad>) {
        let s = stack(batch.iter().map(|t| t.obs.to_vec()), OBS_DIM);
        let at = self.actor.forward_traced(s.view());
        let mut sa = Array2::zeros((batch.len(), OBS_DIM + 1));
        sa.slice_mut(ndarray::s![.., ..OBS_DIM]).assign(&s);
        sa.column_mut(OBS_DIM).assign(&at.output.column(0));
        let ct = self.critic.forward_traced(sa.view());
        let k = batch.len() as f64;
        let loss = -ct.output.sum() / k;
        let g = Array2::from_elem((batch.len(), 1), -1.0 / k);
        let (_, gx) = self.critic.backward(&ct, g.view());
        let ga = gx.column(OBS_DIM).to_owned().insert_axis(Axis(1));
        let (grads, _) = self.actor.backward(&at, ga.view());
        (loss, grads)
    }

    pub fn soft_update_targets(&mut self) {
        self.actor_target
            .soft_update_from(&self.actor, self.config.tau);
        self.critic_target
            .soft_update_from(&self.critic, self.config.tau);
    }

    /// Samples `batch_size` transitions from replay and updates on them.
    pub fn train_step(&mut self, batch_size: usize) -> Result<UpdateStats, DdpgError> {
        let batch = self.replay.sample(batch_size, &mut self.rng);
        self.update(&batch)
    }

    /// Closes an episode: decays the exploration noise.
    pub fn end_episode(&mut self) {
        self.episodes += 1;
        self.sigma = (self.sigma * self.config.noise_decay).max(self.config.noise_floor);
    }
}

fn critic_inputs(batch: &[Transition]) -> Array2<f64> {
    stack(
        batch.iter().map(|t| {
            let mut v = t.obs.to_vec();
            v.push(t.action);
            v
        }),
        OBS_DIM + 1,
    )
}
