use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::mse_to_psnr;
use super::{NgpConfig, OracleError, QuantState, RenderTarget, ToyNgpModel};
use crate::nn::DenseAdam;
use crate::optim::{Adam, AdamConfig};
use crate::policy::QuantPolicy;

/// Points used to calibrate activation ranges.
pub const CALIBRATION_SAMPLES: usize = 1024;

const SAMPLER_STREAM: u64 = 1;
const CALIBRATION_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub steps: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub table_lr: f64,
    pub mlp_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Adam epsilon; tiny so rarely touched hash entries still take full steps.
    pub eps: f64,
    /// Emit a log record every this many steps (0 disables logging).
    pub log_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 5000,
            seed: 0,
            batch_size: 2048,
            table_lr: 1e-2,
            mlp_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub loss: f64,
    /// PSNR implied by the batch loss.
    pub psnr: f64,
}

/// Owns a model while it is being optimized against one image.
#[derive(Debug)]
pub struct Trainer<'a> {
    model: ToyNgpModel,
    image: &'a RenderTarget,
    quant: Option<QuantState>,
    opts: TrainOptions,
    table_opt: Vec<Adam>,
    layer_opt: Vec<DenseAdam>,
    rng: ChaCha8Rng,
    step: usize,
}

impl<'a> Trainer<'a> {
    /// `quant` fixes the fake-quantizers applied in the forward pass; their
    /// ranges stay frozen for the whole run.
    pub fn new(
        model: ToyNgpModel,
        image: &'a RenderTarget,
        quant: Option<QuantState>,
        opts: TrainOptions,
    ) -> Result<Self, OracleError> {
        if image.channels != model.config().output_channels {
            return Err(OracleError::Dimension(format!(
                "image has {} channels, model outputs {}",
                image.channels,
                model.config().output_channels
            )));
        }
        if image.pixel_count() == 0 || opts.batch_size == 0 {
            return Err(OracleError::Dimension("empty image or batch".into()));
        }
        let tcfg = AdamConfig {
            eps: opts.eps,
            ..AdamConfig::new(opts.table_lr, opts.beta1, opts.beta2)
        };
        let mcfg = AdamConfig {
            eps: opts.eps,
            ..AdamConfig::new(opts.mlp_lr, opts.beta1, opts.beta2)
        };
        let table_opt = model
            .tables
            .iter()
            .map(|t| Adam::new(t.len(), tcfg))
            .collect();
        let layer_opt = model
            .layers
            .iter()
            .map(|l| DenseAdam::new(l, mcfg))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(SAMPLER_STREAM);
        Ok(Self {
            model,
            image,
            quant,
            opts,
            table_opt,
            layer_opt,
            rng,
            step: 0,
        })
    }

    pub fn model(&self) -> &ToyNgpModel {
        &self.model
    }

    /// One optimizer step on a fresh random batch; returns the batch MSE.
    pub fn step(&mut self) -> Result<f64, OracleError> {
        let img = self.image;
        let b = self.opts.batch_size;
        let c = img.channels;
        let mut coords = Vec::with_capacity(b);
        let mut target = Array2::zeros((b, c));
        for row in 0..b {
            let x = self.rng.random_range(0..img.width);
            let y = self.rng.random_range(0..img.height);
            coords.push(img.pixel_center(x, y));
            target
                .row_mut(row)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(img.pixel(x, y));
        }

        let quant = self.quant.as_ref();
        let trace = self.model.forward_traced(&coords, quant)?;
        let diff = &trace.output - &target;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(OracleError::Diverged {
                step: self.step,
                loss,
            });
        }
        let grad_out = diff.mapv(|d| 2.0 * d / n);
        let grad = self.model.backward(&trace, grad_out.view(), quant);

        for ((opt, table), g) in self
            .table_opt
            .iter_mut()
            .zip(&mut self.model.tables)
            .zip(&grad.tables)
        {
            opt.step(table, g);
        }
        for ((opt, layer), g) in self
            .layer_opt
            .iter_mut()
            .zip(&mut self.model.layers)
            .zip(&grad.layers)
        {
            opt.step(layer, g);
        }
        self.model.round_to_f32();
        if !self.model.is_finite() {
            return Err(OracleError::Diverged {
                step: self.step,
                loss,
            });
        }
        self.step += 1;
        Ok(loss)
    }

    pub fn run(mut self, mut log: impl FnMut(TrainLogRecord)) -> Result<ToyNgpModel, OracleError> {
        for _ in 0..self.opts.steps {
            let loss = self.step()?;
            let every = self.opts.log_every;
            if every > 0 && (self.step.is_multiple_of(every) || self.step == self.opts.steps) {
                log(TrainLogRecord {
                    step: self.step,
                    loss,
                    psnr: mse_to_psnr(loss),
                });
            }
        }
        Ok(self.model)
    }
}

/// Fits a freshly initialized model to `image` with default options.
pub fn train(
    image: &RenderTarget,
    config: &NgpConfig,
    steps: usize,
    seed: u64,
) -> Result<ToyNgpModel, OracleError> {
    let opts = TrainOptions {
        steps,
        seed,
        ..TrainOptions::default()
    };
    let model = ToyNgpModel::new(config.clone(), seed)?;
    Trainer::new(model, image, None, opts)?.run(|_| {})
}

/// Pixel centers drawn uniformly (with replacement) from the training grid.
pub fn calibration_coords(image: &RenderTarget, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CALIBRATION_STREAM);
    (0..CALIBRATION_SAMPLES)
        .map(|_| {
            let x = rng.random_range(0..image.width);
            let y = rng.random_range(0..image.height);
            image.pixel_center(x, y)
        })
        .collect()
}

/// Quantization-aware retraining under `policy`.
///
/// Ranges are calibrated once on entry and then frozen. Returns the tuned
/// model together with the quantizers to evaluate it with.
pub fn finetune(
    model: &ToyNgpModel,
    image: &RenderTarget,
    policy: &QuantPolicy,
    opts: &TrainOptions,
) -> Result<(ToyNgpModel, QuantState), OracleError> {
    let coords = calibration_coords(image, opts.seed);
    let quant = QuantState::calibrate(model, policy, &coords)?;
    if opts.steps == 0 {
        return Ok((model.clone(), quant));
    }
    let tuned =
        Trainer::new(model.clone(), image, Some(quant.clone()), opts.clone())?.run(|_| {})?;
    Ok((tuned, quant))
}

/// Options used when `finetune` is driven by the search.
pub type FinetuneOptions = TrainOptions;
