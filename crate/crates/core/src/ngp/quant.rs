use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{OracleError, ToyNgpModel};
use crate::nn::Dense;
use crate::policy::QuantPolicy;
use crate::quantizer::{calibrate_range, make_activation_params, make_weight_params, QuantParams};

/// Calibrated quantizers for every unit of a model under one policy.
///
/// Hash features and weights use the symmetric scheme with one range per
/// level or tensor; activations (the input of each MLP layer) use the
/// asymmetric scheme calibrated on sample points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantState {
    pub policy: QuantPolicy,
    pub hash: Vec<QuantParams>,
    pub weights: Vec<QuantParams>,
    pub activations: Vec<QuantParams>,
}

impl QuantState {
    /// Calibrates all ranges from the current parameters and `coords`.
    ///
    /// Activation ranges are taken layer by layer on the already-quantized
    /// prefix of the network, so each range reflects what the layer will see.
    pub fn calibrate(
        model: &ToyNgpModel,
        policy: &QuantPolicy,
        coords: &[[f64; 2]],
    ) -> Result<Self, OracleError> {
        let config = model.config();
        policy.check_shape(config.num_levels, config.mlp_layers())?;
        if coords.is_empty() {
            return Err(OracleError::Dimension(
                "calibration needs at least one point".into(),
            ));
        }

        let hash = model
            .tables
            .iter()
            .zip(&policy.hash_bits)
            .map(|(t, &b)| make_weight_params(calibrate_range(t, 1.0)?, b as u32))
            .collect::<Result<Vec<_>, _>>()?;
        let weights = model
            .layers
            .iter()
            .zip(&policy.mlp_bits)
            .map(|(l, b)| {
                make_weight_params(
                    calibrate_range(l.weight.as_slice().unwrap(), 1.0)?,
                    b.weight as u32,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut state = Self {
            policy: policy.clone(),
            hash,
            weights,
            activations: Vec::new(),
        };

        let qtables = model
            .quantized_tables(Some(&state))
            .expect("quantized tables");
        let f = config.features_per_level;
        let mut h = Array2::zeros((coords.len(), config.encoding_dim()));
        for (row, &x) in coords.iter().enumerate() {
            for level in 0..config.num_levels {
                let c = model.corners(level, x);
                for k in 0..4 {
                    for j in 0..f {
                        h[(row, level * f + j)] +=
                            c.weight[k] * qtables[level][c.index[k] as usize * f + j];
                    }
                }
            }
        }
        let n_layers = model.layers.len();
        for (i, layer) in model.layers.iter().enumerate() {
            let range = calibrate_range(h.as_slice().unwrap(), 1.0)?;
            let ap = make_activation_params(range, policy.mlp_bits[i].activation as u32)?;
            state.activations.push(ap);
            if i + 1 < n_layers {
                let a = h.mapv(|v| ap.fake(v));
                let w = layer.weight.mapv(|v| state.weights[i].fake(v));
                h = Dense::forward_with(a.view(), w.view(), &layer.bias).mapv_into(|v| v.max(0.0));
            }
        }
        Ok(state)
    }

    pub(crate) fn check_model(&self, model: &ToyNgpModel) -> Result<(), OracleError> {
        let c = model.config();
        if self.hash.len() != c.num_levels
            || self.weights.len() != c.mlp_layers()
            || self.activations.len() != c.mlp_layers()
        {
            return Err(OracleError::Dimension(
                "quantization state does not match the model".into(),
            ));
        }
        Ok(())
    }
}
