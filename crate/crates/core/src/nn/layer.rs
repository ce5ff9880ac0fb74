use rand::Rng;

use super::{check_len, Activation, NnError, Params, Result};

/// A dense layer `y = activation(W x + b)`.
///
/// Weights are row-major with shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(NnError::InvalidConfig(format!(
                "layer dims must be > 0, got {in_dim}x{out_dim}"
            )));
        }
        let limit = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-limit..=limit)).collect();
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(NnError::InvalidConfig(format!(
                "layer dims must be > 0, got {in_dim}x{out_dim}"
            )));
        }
        check_len("layer weights", in_dim * out_dim, weights.len())?;
        check_len("layer bias", out_dim, bias.len())?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(NnError::InvalidConfig("non-finite layer parameter".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Pre-activation `W x + b`.
    pub fn affine(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("layer input", self.in_dim, x.len())?;
        Ok(self
            .weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| super::dot(row, x) + b)
            .collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.affine(x)?;
        for v in &mut z {
            *v = self.activation.apply(*v);
        }
        Ok(z)
    }

    /// Backpropagates `grad_out` (gradient wrt this layer's output) given the
    /// cached input `x`, pre-activation `z` and output `y`. Accumulates into
    /// `grads` and returns the gradient wrt `x`.
    pub(crate) fn backward_into(
        &self,
        x: &[f64],
        z: &[f64],
        y: &[f64],
        grad_out: &[f64],
        grads: &mut LayerGrads,
    ) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let dz = grad_out[o] * self.activation.derivative(z[o], y[o]);
            if dz == 0.0 {
                continue;
            }
            grads.bias[o] += dz;
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grads.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += dz * x[i];
                grad_in[i] += dz * row[i];
            }
        }
        grad_in
    }

    pub fn zero_grads(&self) -> LayerGrads {
        LayerGrads {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub(crate) fn round_to_f32(&mut self) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }
}

impl Params for DenseLayer {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.bias]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.bias]
    }
}

impl LayerGrads {
    pub fn add_assign(&mut self, other: &LayerGrads) {
        super::axpy(1.0, &other.weights, &mut self.weights);
        super::axpy(1.0, &other.bias, &mut self.bias);
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            *v *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer::from_parts(
            2,
            2,
            Activation::Identity,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        assert_eq!(layer.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_layer_clips_negatives() {
        let layer = DenseLayer::from_parts(
            2,
            2,
            Activation::Relu,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        assert_eq!(layer.forward(&[-3.0, 4.0]).unwrap(), vec![0.0, 4.0]);
    }

    #[test]
    fn rejects_wrong_input_len() {
        let layer =
            DenseLayer::from_parts(2, 1, Activation::Identity, vec![1.0, 1.0], vec![0.0]).unwrap();
        assert!(matches!(
            layer.forward(&[1.0]),
            Err(NnError::Shape {
                expected: 2,
                actual: 1,
                ..
            })
        ));
    }

    #[test]
    fn relu_at_zero_has_zero_subgradient() {
        let layer =
            DenseLayer::from_parts(1, 1, Activation::Relu, vec![1.0], vec![0.0]).unwrap();
        let x = [0.0];
        let z = layer.affine(&x).unwrap();
        let y = layer.forward(&x).unwrap();
        let mut g = layer.zero_grads();
        let gin = layer.backward_into(&x, &z, &y, &[1.0], &mut g);
        assert_eq!(gin, vec![0.0]);
        assert_eq!(g.bias, vec![0.0]);
        assert_eq!(g.weights, vec![0.0]);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let layer = DenseLayer::new(16, 4, Activation::Relu, &mut rng).unwrap();
        assert!(layer.weights().iter().all(|w| w.abs() <= 0.25));
    }
}
