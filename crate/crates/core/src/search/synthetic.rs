use super::{build_observations, Environment, LayerObservation, SearchError};
use crate::ngp::NgpConfig;
use crate::policy::QuantPolicy;

/// Analytic stand-in for the oracles: PSNR is a sum of concave per-unit
/// terms and latency is linear in the bit widths. Fine-tuning is ignored.
///
/// Unit `u` at `b` bits adds `gain[u] * (1 - 2^-b)` dB and `cost[u] * b`
/// cycles on top of `base_psnr` and `base_cycles`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnv {
    pub num_levels: usize,
    pub num_layers: usize,
    pub base_psnr: f64,
    pub gain: Vec<f64>,
    pub base_cycles: u64,
    pub cost: Vec<u64>,
}

impl SyntheticEnv {
    /// Two hash levels and one MLP layer: four units.
    pub fn four_unit() -> Self {
        Self {
            num_levels: 2,
            num_layers: 1,
            base_psnr: 20.0,
            gain: vec![8.0, 2.0, 4.0, 1.0],
            base_cycles: 200,
            cost: vec![50, 100, 250, 60],
        }
    }

    pub fn psnr(&self, policy: &QuantPolicy) -> f64 {
        self.base_psnr
            + policy
                .unit_bits()
                .iter()
                .zip(&self.gain)
                .map(|(&b, g)| g * (1.0 - 0.5f64.powi(b as i32)))
                .sum::<f64>()
    }

    pub fn cycles(&self, policy: &QuantPolicy) -> u64 {
        self.base_cycles
            + policy
                .unit_bits()
                .iter()
                .zip(&self.cost)
                .map(|(&b, c)| b as u64 * c)
                .sum::<u64>()
    }

    fn check(&self, policy: &QuantPolicy) -> Result<(), SearchError> {
        policy
            .check_shape(self.num_levels, self.num_layers)
            .map_err(|e| SearchError::Config(e.to_string()))
    }
}

impl Environment for SyntheticEnv {
    fn shape(&self) -> (usize, usize) {
        (self.num_levels, self.num_layers)
    }

    fn observations(&self) -> Vec<LayerObservation> {
        let config = NgpConfig {
            num_levels: self.num_levels,
            mlp_hidden_layers: self.num_layers.saturating_sub(1),
            ..NgpConfig::default()
        };
        build_observations(&config)
    }

    fn quality(
        &mut self,
        policy: &QuantPolicy,
        _finetune_steps: usize,
    ) -> Result<f64, SearchError> {
        self.check(policy)?;
        Ok(self.psnr(policy))
    }

    fn float_quality(&mut self) -> Result<f64, SearchError> {
        Ok(self.base_psnr + self.gain.iter().sum::<f64>())
    }

    fn latency(&mut self, policy: &QuantPolicy) -> Result<u64, SearchError> {
        self.check(policy)?;
        Ok(self.cycles(policy))
    }
}
