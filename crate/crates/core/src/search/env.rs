use std::collections::HashMap;
use std::sync::Arc;

use super::{build_observations, LayerObservation, SearchError};
use crate::ngp::{finetune, psnr, RenderTarget, ToyNgpModel, TrainOptions};
use crate::policy::QuantPolicy;
use crate::sim::{AccessTrace, HwConfig, SimReport, Simulator};

/// Quality and cost oracles the search scores policies with.
///
/// Implementations must be deterministic: the same policy and step count
/// always give the same PSNR and latency.
pub trait Environment {
    /// `(hash levels, MLP layers)` of the policies this environment accepts.
    fn shape(&self) -> (usize, usize);

    /// Unit observations in decision order.
    fn observations(&self) -> Vec<LayerObservation>;

    /// PSNR of `policy` after `finetune_steps` of quantization-aware
    /// training (0 means plain post-training quantization).
    fn quality(&mut self, policy: &QuantPolicy, finetune_steps: usize) -> Result<f64, SearchError>;

    /// PSNR of the unquantized model.
    fn float_quality(&mut self) -> Result<f64, SearchError>;

    /// Latency of `policy` in cycles.
    fn latency(&mut self, policy: &QuantPolicy) -> Result<u64, SearchError>;

    /// Full cost breakdown, when the environment has one.
    fn cost_report(&mut self, _policy: &QuantPolicy) -> Result<Option<SimReport>, SearchError> {
        Ok(None)
    }
}

/// The trained hash-grid model plus the accelerator simulator.
#[derive(Debug)]
pub struct OracleEnv {
    model: ToyNgpModel,
    image: RenderTarget,
    finetune: TrainOptions,
    simulator: Simulator,
    float_psnr: Option<f64>,
    quality_memo: HashMap<(QuantPolicy, usize), f64>,
}

impl OracleEnv {
    /// `finetune` supplies the seed and optimizer settings of every
    /// fine-tuning run; its step count is overridden per call.
    pub fn new(
        model: ToyNgpModel,
        image: RenderTarget,
        trace: Arc<AccessTrace>,
        hw: HwConfig,
        finetune: TrainOptions,
    ) -> Result<Self, SearchError> {
        let layout = model.config().trace_layout();
        if trace.layout != layout {
            return Err(SearchError::Config(
                "trace was not exported from a model with this config".into(),
            ));
        }
        let simulator = Simulator::new(trace, hw)?;
        Ok(Self {
            model,
            image,
            finetune,
            simulator,
            float_psnr: None,
            quality_memo: HashMap::new(),
        })
    }

    pub fn model(&self) -> &ToyNgpModel {
        &self.model
    }

    pub fn image(&self) -> &RenderTarget {
        &self.image
    }

    pub fn simulator(&mut self) -> &mut Simulator {
        &mut self.simulator
    }

    /// The fine-tuned model and its quantizers, for export.
    pub fn finetuned(
        &self,
        policy: &QuantPolicy,
        finetune_steps: usize,
    ) -> Result<(ToyNgpModel, crate::ngp::QuantState), SearchError> {
        let opts = TrainOptions {
            steps: finetune_steps,
            log_every: 0,
            ..self.finetune.clone()
        };
        Ok(finetune(&self.model, &self.image, policy, &opts)?)
    }
}

impl Environment for OracleEnv {
    fn shape(&self) -> (usize, usize) {
        let c = self.model.config();
        (c.num_levels, c.mlp_layers())
    }

    fn observations(&self) -> Vec<LayerObservation> {
        build_observations(self.model.config())
    }

    fn quality(&mut self, policy: &QuantPolicy, finetune_steps: usize) -> Result<f64, SearchError> {
        let key = (policy.clone(), finetune_steps);
        if let Some(&p) = self.quality_memo.get(&key) {
            return Ok(p);
        }
        let (tuned, quant) = self.finetuned(policy, finetune_steps)?;
        let out = tuned.render(Some(&quant), self.image.width, self.image.height)?;
        let p = psnr(&out, &self.image)?;
        self.quality_memo.insert(key, p);
        Ok(p)
    }

    fn float_quality(&mut self) -> Result<f64, SearchError> {
        if let Some(p) = self.float_psnr {
            return Ok(p);
        }
        let out = self
            .model
            .render(None, self.image.width, self.image.height)?;
        let p = psnr(&out, &self.image)?;
        self.float_psnr = Some(p);
        Ok(p)
    }

    fn latency(&mut self, policy: &QuantPolicy) -> Result<u64, SearchError> {
        Ok(self.simulator.simulate(policy)?.total_cycles)
    }

    fn cost_report(&mut self, policy: &QuantPolicy) -> Result<Option<SimReport>, SearchError> {
        Ok(Some(self.simulator.simulate(policy)?))
    }
}
