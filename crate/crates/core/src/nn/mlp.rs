use rand::Rng;

use super::{check_len, Activation, DenseLayer, LayerGrads, NnError, Optimizer, Params, Result};

/// A stack of dense layers whose dimensions chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Intermediates of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl Mlp {
    /// Builds a network with layer sizes `dims[0] -> dims[1] -> ...`.
    /// `hidden` applies to every layer but the last, which uses `output`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(NnError::InvalidConfig(
                "an MLP needs at least an input and an output dimension".into(),
            ));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::new(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::InvalidConfig("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::Shape {
                    context: format!("layer {} input", i + 1),
                    expected: pair[0].out_dim(),
                    actual: pair[1].in_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("mlp input", self.input_dim(), x.len())?;
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        check_len("mlp input", self.input_dim(), x.len())?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        for layer in &self.layers {
            let z = layer.affine(&h)?;
            let y: Vec<f64> = z.iter().map(|&v| layer.activation().apply(v)).collect();
            cache.inputs.push(h);
            cache.pre.push(z);
            h = y.clone();
            cache.outputs.push(y);
        }
        Ok(cache)
    }

    /// Returns parameter gradients and the gradient wrt the network input,
    /// given `upstream` = dLoss/dOutput.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let mut grads = self.zero_grads();
        let grad_in = self.backward_accumulate(cache, upstream, &mut grads)?;
        Ok((grads, grad_in))
    }

    /// Like [`Mlp::backward`] but adds into existing gradient buffers.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        if cache.is_empty() {
            return Err(NnError::MissingForward);
        }
        if cache.outputs.len() != self.layers.len() {
            return Err(NnError::Shape {
                context: "forward cache depth".into(),
                expected: self.layers.len(),
                actual: cache.outputs.len(),
            });
        }
        check_len("mlp upstream gradient", self.output_dim(), upstream.len())?;
        let mut g = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward_into(
                &cache.inputs[i],
                &cache.pre[i],
                &cache.outputs[i],
                &g,
                &mut grads.layers[i],
            );
        }
        Ok(g)
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self.layers.iter().map(DenseLayer::zero_grads).collect(),
        }
    }

    /// Applies one optimizer step. Layer `i` uses optimizer slots
    /// `first_slot + 2i` (weights) and `first_slot + 2i + 1` (bias).
    /// Returns the number of slots consumed. Nothing is modified when any
    /// gradient is non-finite.
    pub fn apply_gradients(
        &mut self,
        opt: &mut Optimizer,
        first_slot: usize,
        grads: &MlpGrads,
    ) -> Result<usize> {
        check_len("gradient layers", self.layers.len(), grads.layers.len())?;
        for (i, g) in grads.layers.iter().enumerate() {
            if g.weights.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient {
                    param: format!("layer {i} weights"),
                });
            }
            if g.bias.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient {
                    param: format!("layer {i} bias"),
                });
            }
        }
        for (i, (layer, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            opt.step(first_slot + 2 * i, layer.weights_mut(), &g.weights)?;
            opt.step(first_slot + 2 * i + 1, layer.bias_mut(), &g.bias)?;
        }
        Ok(2 * self.layers.len())
    }

    /// Rounds every parameter to the nearest `f32`, the precision used on disk.
    pub fn round_to_f32(&mut self) {
        for layer in &mut self.layers {
            layer.round_to_f32();
        }
    }
}

impl Params for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.param_slices()).collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.param_slices_mut())
            .collect()
    }
}

impl MlpGrads {
    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.scale(factor);
        }
    }

    /// Adds `coeff * params` (an L2 penalty gradient).
    pub fn add_weight_decay(&mut self, mlp: &Mlp, coeff: f64) {
        for (g, l) in self.layers.iter_mut().zip(mlp.layers()) {
            super::axpy(coeff, l.weights(), &mut g.weights);
            super::axpy(coeff, l.bias(), &mut g.bias);
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hand_net() -> Mlp {
        // 2 -> 2 (relu) -> 1 (identity)
        let l1 = DenseLayer::from_parts(
            2,
            2,
            Activation::Relu,
            vec![1.0, -2.0, 0.5, 3.0],
            vec![0.1, -1.0],
        )
        .unwrap();
        let l2 =
            DenseLayer::from_parts(2, 1, Activation::Identity, vec![2.0, -1.0], vec![0.25]).unwrap();
        Mlp::from_layers(vec![l1, l2]).unwrap()
    }

    #[test]
    fn two_layer_forward_matches_hand_arithmetic() {
        // x = [1, 0]
        // h1 = relu([1*1 + -2*0 + 0.1, 0.5*1 + 3*0 - 1]) = relu([1.1, -0.5]) = [1.1, 0]
        // y = 2*1.1 - 1*0 + 0.25 = 2.45
        let out = hand_net().forward(&[1.0, 0.0]).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0] - 2.45).abs() < 1e-12);
    }

    #[test]
    fn chained_dims_are_validated() {
        let l1 = DenseLayer::from_parts(2, 3, Activation::Relu, vec![0.0; 6], vec![0.0; 3]).unwrap();
        let l2 = DenseLayer::from_parts(2, 1, Activation::Relu, vec![0.0; 2], vec![0.0]).unwrap();
        assert!(Mlp::from_layers(vec![l1, l2]).is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let net = hand_net();
        assert!(matches!(
            net.backward(&ForwardCache::default(), &[1.0]),
            Err(NnError::MissingForward)
        ));
    }

    #[test]
    fn identity_layer_sum_loss_gradient_is_input_outer_ones() {
        let l = DenseLayer::from_parts(
            3,
            2,
            Activation::Identity,
            vec![0.3, -0.2, 0.9, 1.0, 0.0, -0.5],
            vec![0.0, 0.0],
        )
        .unwrap();
        let net = Mlp::from_layers(vec![l]).unwrap();
        let x = [1.5, -2.0, 0.25];
        let cache = net.forward_cached(&x).unwrap();
        let (g, _) = net.backward(&cache, &[1.0, 1.0]).unwrap();
        assert_eq!(g.layers[0].weights, vec![1.5, -2.0, 0.25, 1.5, -2.0, 0.25]);
        assert_eq!(g.layers[0].bias, vec![1.0, 1.0]);
    }

    #[test]
    fn random_net_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (hidden, out) in [
            (Activation::Relu, Activation::Identity),
            (Activation::Tanh, Activation::Sigmoid),
            (Activation::Sigmoid, Activation::Tanh),
        ] {
            let net = Mlp::new(&[8, 6, 5, 3], hidden, out, &mut rng).unwrap();
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |m: &Mlp| crate::nn::dot(&m.forward(&x).unwrap(), &w);
            let cache = net.forward_cached(&x).unwrap();
            let (g, _) = net.backward(&cache, &w).unwrap();
            let numeric = gradcheck::numeric_gradient(&net, loss, gradcheck::DEFAULT_STEP);
            let err = gradcheck::max_relative_error(&g.slices(), &numeric);
            assert!(err < 1e-4, "{hidden:?}/{out:?}: rel err {err}");
        }
    }

    #[test]
    fn zero_lr_sgd_leaves_params_untouched() {
        let mut net = hand_net();
        let before = net.clone();
        let cache = net.forward_cached(&[0.3, 0.7]).unwrap();
        let (g, _) = net.backward(&cache, &[1.0]).unwrap();
        let mut opt = Optimizer::sgd(0.0).unwrap();
        net.apply_gradients(&mut opt, 0, &g).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut net = hand_net();
        let mut g = net.zero_grads();
        g.layers[1].bias[0] = f64::NAN;
        let mut opt = Optimizer::sgd(0.1).unwrap();
        let err = net.apply_gradients(&mut opt, 0, &g).unwrap_err();
        assert!(err.to_string().contains("layer 1 bias"), "{err}");
    }
}
