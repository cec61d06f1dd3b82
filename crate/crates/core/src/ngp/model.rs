use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::hash::slot;
use super::{NgpConfig, OracleError, QuantState};
use crate::nn::{sigmoid, Dense, DenseGrad};

/// Initial feature magnitude, `U(-1e-4, 1e-4)`.
const TABLE_INIT: f64 = 1e-4;

/// The four grid vertices around a point and their bilinear weights.
///
/// Corner order is row-major: `(x0, y0), (x1, y0), (x0, y1), (x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub index: [u32; 4],
    pub weight: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNgpModel {
    config: NgpConfig,
    /// Per level: `level_entries(l) * features_per_level` values, entry-major.
    pub tables: Vec<Vec<f64>>,
    pub layers: Vec<Dense>,
}

/// Intermediate values of a batched forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    corners: Vec<Corners>,
    /// Layer inputs before activation quantization.
    inputs: Vec<Array2<f64>>,
    /// Layer inputs after activation quantization.
    acts: Vec<Array2<f64>>,
    /// Weights each layer actually used.
    weights: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub tables: Vec<Vec<f64>>,
    pub layers: Vec<DenseGrad>,
}

fn check_unit(x: [f64; 2]) -> Result<(), OracleError> {
    if x.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(OracleError::OutsideUnitSquare(x[0], x[1]))
    }
}

impl ToyNgpModel {
    pub fn new(config: NgpConfig, seed: u64) -> Result<Self, OracleError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = (0..config.num_levels)
            .map(|l| {
                (0..config.level_entries(l) * config.features_per_level)
                    .map(|_| rng.random_range(-TABLE_INIT..TABLE_INIT))
                    .collect()
            })
            .collect();
        let dims = config.layer_dims();
        let layers = dims
            .iter()
            .enumerate()
            .map(|(i, &(inputs, outputs))| {
                let bound = if i + 1 == dims.len() {
                    (6.0 / (inputs + outputs) as f64).sqrt()
                } else {
                    (6.0 / inputs as f64).sqrt()
                };
                Dense::uniform(inputs, outputs, bound, 0.0, &mut rng)
            })
            .collect();
        let mut model = Self {
            config,
            tables,
            layers,
        };
        model.round_to_f32();
        Ok(model)
    }

    /// Assembles a model from raw parameters, checking every dimension.
    pub fn from_parts(
        config: NgpConfig,
        tables: Vec<Vec<f64>>,
        layers: Vec<Dense>,
    ) -> Result<Self, OracleError> {
        config.validate()?;
        let model = Self {
            config,
            tables,
            layers,
        };
        model.check_dims()?;
        Ok(model)
    }

    fn check_dims(&self) -> Result<(), OracleError> {
        let c = &self.config;
        if self.tables.len() != c.num_levels {
            return Err(OracleError::Dimension(format!(
                "{} tables for {} levels",
                self.tables.len(),
                c.num_levels
            )));
        }
        for (l, t) in self.tables.iter().enumerate() {
            if t.len() != c.level_entries(l) * c.features_per_level {
                return Err(OracleError::Dimension(format!(
                    "table {l} has {} values",
                    t.len()
                )));
            }
        }
        let dims = c.layer_dims();
        if dims.len() != self.layers.len()
            || dims
                .iter()
                .zip(&self.layers)
                .any(|(&(i, o), d)| d.inputs() != i || d.outputs() != o || d.bias.len() != o)
        {
            return Err(OracleError::Dimension(
                "MLP shape does not match config".into(),
            ));
        }
        Ok(())
    }

    pub fn config(&self) -> &NgpConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.tables.iter().map(Vec::len).sum::<usize>()
            + self.layers.iter().map(Dense::param_count).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.tables.iter().flatten().all(|v| v.is_finite())
            && self.layers.iter().all(|l| l.params().all(f64::is_finite))
    }

    /// Rounds every parameter to single precision, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        let round = |v: &mut f64| *v = *v as f32 as f64;
        self.tables.iter_mut().flatten().for_each(round);
        self.layers
            .iter_mut()
            .for_each(|l| l.params_mut().for_each(round));
    }

    /// Grid cell around `x` at `level`. `x` must lie in the unit square.
    pub fn corners(&self, level: usize, x: [f64; 2]) -> Corners {
        let n = self.config.resolution(level);
        let cell = |v: f64| {
            let pos = v * n as f64;
            let i = (pos.floor() as u32).min(n - 1);
            (i, pos - i as f64)
        };
        let (x0, fx) = cell(x[0]);
        let (y0, fy) = cell(x[1]);
        let c = &self.config;
        Corners {
            index: [
                slot((x0, y0), level, c) as u32,
                slot((x0 + 1, y0), level, c) as u32,
                slot((x0, y0 + 1), level, c) as u32,
                slot((x0 + 1, y0 + 1), level, c) as u32,
            ],
            weight: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
        }
    }

    /// Concatenated per-level features of `x`, coarse to fine.
    pub fn encode(&self, x: [f64; 2]) -> Result<Vec<f64>, OracleError> {
        check_unit(x)?;
        let f = self.config.features_per_level;
        let mut out = vec![0.0; self.config.encoding_dim()];
        for level in 0..self.config.num_levels {
            let c = self.corners(level, x);
            interpolate(
                &self.tables[level],
                &c,
                f,
                &mut out[level * f..(level + 1) * f],
            );
        }
        Ok(out)
    }

    pub fn forward(
        &self,
        x: [f64; 2],
        quant: Option<&QuantState>,
    ) -> Result<Vec<f64>, OracleError> {
        Ok(self.forward_batch(&[x], quant)?.row(0).to_vec())
    }

    /// Outputs for a batch of points, one row per point.
    pub fn forward_batch(
        &self,
        xs: &[[f64; 2]],
        quant: Option<&QuantState>,
    ) -> Result<Array2<f64>, OracleError> {
        Ok(self.forward_traced(xs, quant)?.output)
    }

    pub(crate) fn quantized_tables(&self, quant: Option<&QuantState>) -> Option<Vec<Vec<f64>>> {
        quant.map(|q| {
            self.tables
                .iter()
                .zip(&q.hash)
                .map(|(t, p)| t.iter().map(|&v| p.fake(v)).collect())
                .collect()
        })
    }

    pub fn forward_traced(
        &self,
        xs: &[[f64; 2]],
        quant: Option<&QuantState>,
    ) -> Result<ForwardTrace, OracleError> {
        for &x in xs {
            check_unit(x)?;
        }
        if let Some(q) = quant {
            q.check_model(self)?;
        }
        let c = &self.config;
        let f = c.features_per_level;
        let qtables = self.quantized_tables(quant);
        let tables = qtables.as_ref().unwrap_or(&self.tables);

        let mut corners = Vec::with_capacity(xs.len() * c.num_levels);
        let mut features = Array2::zeros((xs.len(), c.encoding_dim()));
        for (row, &x) in xs.iter().enumerate() {
            let mut feat = features.row_mut(row);
            let feat = feat.as_slice_mut().expect("row-major features");
            for level in 0..c.num_levels {
                let cs = self.corners(level, x);
                interpolate(
                    &tables[level],
                    &cs,
                    f,
                    &mut feat[level * f..(level + 1) * f],
                );
                corners.push(cs);
            }
        }

        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut acts = Vec::with_capacity(n_layers);
        let mut weights = Vec::with_capacity(n_layers);
        let mut h = features;
        for (i, layer) in self.layers.iter().enumerate() {
            let (a, w) = match quant {
                Some(q) => {
                    let ap = q.activations[i];
                    let wp = q.weights[i];
                    (h.mapv(|v| ap.fake(v)), layer.weight.mapv(|v| wp.fake(v)))
                }
                None => (h.clone(), layer.weight.clone()),
            };
            let mut z = Dense::forward_with(a.view(), w.view(), &layer.bias);
            if i + 1 == n_layers {
                z.mapv_inplace(sigmoid);
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            acts.push(a);
            weights.push(w);
            h = z;
        }
        Ok(ForwardTrace {
            corners,
            inputs,
            acts,
            weights,
            output: h,
        })
    }

    /// Gradients of a scalar loss given its gradient w.r.t. the model output.
    ///
    /// Quantized passes use the straight-through estimator: gradients flow
    /// through each fake-quantizer where its input was representable.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_output: ArrayView2<f64>,
        quant: Option<&QuantState>,
    ) -> ModelGrad {
        let c = &self.config;
        let f = c.features_per_level;
        let n_layers = self.layers.len();
        let mut layer_grads = Vec::with_capacity(n_layers);

        let mut g = grad_output.to_owned();
        g.zip_mut_with(&trace.output, |gv, &y| *gv *= y * (1.0 - y));
        for i in (0..n_layers).rev() {
            let (mut dg, mut gx) =
                Dense::backward(trace.acts[i].view(), trace.weights[i].view(), g.view());
            let h = &trace.inputs[i];
            if let Some(q) = quant {
                let wp = q.weights[i];
                dg.weight
                    .zip_mut_with(&self.layers[i].weight, |gw, &w| *gw *= wp.ste_grad(w));
                let ap = q.activations[i];
                gx.zip_mut_with(h, |gv, &x| *gv *= ap.ste_grad(x));
            }
            if i > 0 {
                // h is the ReLU output of the previous layer.
                gx.zip_mut_with(h, |gv, &x| {
                    if x <= 0.0 {
                        *gv = 0.0
                    }
                });
            }
            layer_grads.push(dg);
            g = gx;
        }
        layer_grads.reverse();

        let mut tables: Vec<Vec<f64>> = self.tables.iter().map(|t| vec![0.0; t.len()]).collect();
        for (row, gfeat) in g.rows().into_iter().enumerate() {
            for level in 0..c.num_levels {
                let cs = &trace.corners[row * c.num_levels + level];
                let grad_t = &mut tables[level];
                for k in 0..4 {
                    let base = cs.index[k] as usize * f;
                    for j in 0..f {
                        grad_t[base + j] += cs.weight[k] * gfeat[level * f + j];
                    }
                }
            }
        }
        if let Some(q) = quant {
            for ((grad_t, t), p) in tables.iter_mut().zip(&self.tables).zip(&q.hash) {
                for (gv, &v) in grad_t.iter_mut().zip(t) {
                    *gv *= p.ste_grad(v);
                }
            }
        }
        ModelGrad {
            tables,
            layers: layer_grads,
        }
    }
}

#[inline]
fn interpolate(table: &[f64], c: &Corners, f: usize, out: &mut [f64]) {
    out.fill(0.0);
    for k in 0..4 {
        let base = c.index[k] as usize * f;
        for j in 0..f {
            out[j] += c.weight[k] * table[base + j];
        }
    }
}
