use serde::{Deserialize, Serialize};

use crate::error::{Result, VqError};
use crate::rng::RngStream;
use crate::tensor::DenseTensor;

/// One fully connected layer, `z = x·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[fan_out × fan_in]`.
    pub weights: DenseTensor,
    pub bias: Vec<f32>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }
}

/// A ReLU multilayer perceptron with a softmax cross-entropy head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
}

impl MlpNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(VqError::Dimension("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.rank() != 2 || l.bias.len() != l.fan_out() {
                return Err(VqError::Dimension(format!(
                    "layer {i}: weights {:?} with {} biases",
                    l.weights.shape(),
                    l.bias.len()
                )));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(VqError::Dimension(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].fan_out(),
                    i + 1,
                    w[1].fan_in()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// He-initialised weights (`N(0, 2/fan_in)`), zero biases. `sizes` lists
    /// input width, hidden widths, class count.
    pub fn init(sizes: &[usize], rng: &mut RngStream) -> Result<Self> {
        Self::build(sizes, |fan_in, n| {
            let std = (2.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.gaussian(0.0, std) as f32).collect()
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::build(sizes, |_, n| vec![0.0; n])
    }

    fn build(sizes: &[usize], mut fill: impl FnMut(usize, usize) -> Vec<f32>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(VqError::Dimension(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                Ok(Layer {
                    weights: DenseTensor::new(vec![fan_out, fan_in], fill(fan_in, fan_in * fan_out))?,
                    bias: vec![0.0; fan_out],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    /// Input width, hidden widths, output width.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::fan_out))
            .collect()
    }

    /// Widths of the ReLU layers whose outputs are stored for back-propagation.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Layer::fan_out).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// All parameters flattened layer by layer (weights, then bias).
    pub fn params(&self) -> Vec<f32> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f32]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(VqError::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.data_mut() {
                *w = it.next().unwrap();
            }
            for b in &mut l.bias {
                *b = it.next().unwrap();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incompatible_layers_rejected() {
        let a = Layer { weights: DenseTensor::zeros(vec![3, 2]), bias: vec![0.0; 3] };
        let b = Layer { weights: DenseTensor::zeros(vec![2, 4]), bias: vec![0.0; 2] };
        assert!(MlpNetwork::new(vec![a.clone(), b]).is_err());
        let bad_bias = Layer { weights: DenseTensor::zeros(vec![3, 2]), bias: vec![0.0; 2] };
        assert!(MlpNetwork::new(vec![bad_bias]).is_err());
        assert!(MlpNetwork::new(vec![a]).is_ok());
    }

    #[test]
    fn sizes_and_params() {
        let net = MlpNetwork::init(&[4, 3, 2], &mut RngStream::new(0)).unwrap();
        assert_eq!(net.sizes(), vec![4, 3, 2]);
        assert_eq!(net.hidden_widths(), vec![3]);
        assert_eq!(net.num_params(), 4 * 3 + 3 + 3 * 2 + 2);
        let mut other = MlpNetwork::zeros(&[4, 3, 2]).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(other, net);
    }
}
