//! Episode loop of the bit-width search.
//!
//! One episode walks the agent over every quantizable unit (hash levels, then
//! each MLP layer's weights and activations), turns the actions into a
//! [`QuantPolicy`], and scores it with an [`Environment`]: a quality oracle
//! (PSNR after fine-tuning) and a cost oracle (simulated latency).

mod env;
mod run;
mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use env::{Environment, OracleEnv};
pub use run::{
    enforce_latency_budget, evaluate_policy, run_episode, run_ptq_baseline, run_qat_baseline,
    run_search, ActionSource, BestPolicy, BudgetOutcome, BudgetReport, EpisodeOutcome,
    EpisodeRecord, NamedEval, Reference, SearchReport, EPISODE_CSV_HEADER, UNIFORM8,
};
pub use synthetic::SyntheticEnv;

use crate::ddpg::{DdpgConfig, DdpgError, OBS_DIM};
use crate::ngp::{NgpConfig, OracleError};
use crate::policy::{QuantPolicy, Unit};
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("cost must be positive")]
    ZeroCost,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] DdpgError),
    #[error("episode {episode} failed after {attempts} attempts: {source}")]
    Episode {
        episode: usize,
        attempts: usize,
        #[source]
        source: Box<SearchError>,
    },
}

/// Operating point of the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Quality first: no latency budget.
    Mdl,
    /// Latency budget of `latency_budget_ratio` times the 8-bit latency.
    Mgl,
}

/// Which PSNR the reward compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsnrReference {
    /// The fine-tuned uniform 8-bit model.
    EightBit,
    /// The unquantized model.
    Float,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub episodes: usize,
    pub mode: SearchMode,
    pub latency_budget_ratio: f64,
    pub lambda: f64,
    pub finetune_steps: usize,
    pub seed: u64,
    pub psnr_reference: PsnrReference,
    /// Bits of the fixed-precision comparison points; `None` picks 6 for MDL
    /// and 5 for MGL.
    pub baseline_bits: Option<u8>,
    pub max_retries: usize,
    pub agent: DdpgConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            mode: SearchMode::Mdl,
            latency_budget_ratio: 0.83,
            lambda: 0.1,
            finetune_steps: 500,
            seed: 0,
            psnr_reference: PsnrReference::EightBit,
            baseline_bits: None,
            max_retries: 3,
            agent: DdpgConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.mode == SearchMode::Mgl
            && !(self.latency_budget_ratio > 0.0 && self.latency_budget_ratio < 1.0)
        {
            return Err(SearchError::Config(
                "MGL needs latency_budget_ratio in (0, 1)".into(),
            ));
        }
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(SearchError::Config("lambda must be positive".into()));
        }
        if let Some(b) = self.baseline_bits {
            if !(1..=8).contains(&b) {
                return Err(SearchError::Config(format!(
                    "baseline_bits {b} outside [1, 8]"
                )));
            }
        }
        Ok(())
    }

    pub fn comparison_bits(&self) -> u8 {
        self.baseline_bits.unwrap_or(match self.mode {
            SearchMode::Mdl => 6,
            SearchMode::Mgl => 5,
        })
    }
}

/// Scores of one evaluated policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub psnr: f64,
    pub latency_cycles: u64,
    /// Current over original cost.
    pub cost_ratio: f64,
    pub reward: f64,
    pub fqr: f64,
    /// PSNR per 10^7 cycles.
    pub cost_efficiency: f64,
}

/// Unit kind in the first observation component.
pub const KIND_HASH: f64 = 0.0;
pub const KIND_HIDDEN: f64 = 1.0;
pub const KIND_OUTPUT: f64 = 2.0;

/// Observation of one unit. Component 5 (previous action) is left at 0 and
/// filled in during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerObservation {
    pub unit: UnitRef,
    pub raw: [f64; OBS_DIM],
    pub normalized: [f64; OBS_DIM],
}

/// Serializable mirror of [`Unit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitRef {
    HashLevel(usize),
    Weight(usize),
    Activation(usize),
}

impl From<Unit> for UnitRef {
    fn from(u: Unit) -> Self {
        match u {
            Unit::HashLevel(l) => Self::HashLevel(l),
            Unit::Weight(l) => Self::Weight(l),
            Unit::Activation(l) => Self::Activation(l),
        }
    }
}

/// Index of the previous-action component.
pub const PREV_ACTION: usize = 5;

/// Observations of every unit in decision order.
///
/// Hash level `l`: `(0, features, 2^T, l, i, a_prev, 1)`. MLP layer: `(kind,
/// d_in, d_out, params incl. bias, i, a_prev, f)` with `f = 1` for the weight
/// unit and `0` for the activation unit. Each component is normalized by its
/// maximum over all units.
pub fn build_observations(config: &NgpConfig) -> Vec<LayerObservation> {
    let mut raw: Vec<(UnitRef, [f64; OBS_DIM])> = Vec::new();
    let mut i = 0.0;
    for l in 0..config.num_levels {
        raw.push((
            UnitRef::HashLevel(l),
            [
                KIND_HASH,
                config.features_per_level as f64,
                config.table_capacity() as f64,
                l as f64,
                i,
                0.0,
                1.0,
            ],
        ));
        i += 1.0;
    }
    let dims = config.layer_dims();
    for (layer, &(d_in, d_out)) in dims.iter().enumerate() {
        let kind = if layer + 1 == dims.len() {
            KIND_OUTPUT
        } else {
            KIND_HIDDEN
        };
        let w = (d_in * d_out + d_out) as f64;
        for (unit, flag) in [
            (UnitRef::Weight(layer), 1.0),
            (UnitRef::Activation(layer), 0.0),
        ] {
            raw.push((unit, [kind, d_in as f64, d_out as f64, w, i, 0.0, flag]));
            i += 1.0;
        }
    }

    let mut maxima = [0.0f64; OBS_DIM];
    for (_, r) in &raw {
        for (m, v) in maxima.iter_mut().zip(r) {
            *m = m.max(*v);
        }
    }
    maxima[PREV_ACTION] = 1.0;
    for m in &mut maxima {
        if *m <= 0.0 {
            *m = 1.0;
        }
    }
    raw.into_iter()
        .map(|(unit, r)| LayerObservation {
            unit,
            raw: r,
            normalized: crate::ddpg::normalize_observation(&r, &maxima).expect("positive maxima"),
        })
        .collect()
}

/// `lambda * (psnr_cur - psnr_org + original_cost / current_cost)`.
pub fn compute_reward(
    psnr_cur: f64,
    psnr_org: f64,
    current_cost: f64,
    original_cost: f64,
    lambda: f64,
) -> Result<f64, SearchError> {
    if !(current_cost > 0.0 && original_cost > 0.0) {
        return Err(SearchError::ZeroCost);
    }
    Ok(lambda * (psnr_cur - psnr_org + original_cost / current_cost))
}

/// Mean bit width over all units.
pub fn fqr(policy: &QuantPolicy) -> f64 {
    let bits = policy.unit_bits();
    bits.iter().map(|&b| b as f64).sum::<f64>() / bits.len().max(1) as f64
}

/// Cycles the cost-efficiency figure is normalized to.
pub const EFFICIENCY_CYCLES: f64 = 1e7;

/// PSNR per 10^7 cycles.
pub fn cost_efficiency(psnr: f64, latency_cycles: f64) -> Result<f64, SearchError> {
    if !(latency_cycles > 0.0) {
        return Err(SearchError::ZeroCost);
    }
    Ok(psnr / latency_cycles * EFFICIENCY_CYCLES)
}
