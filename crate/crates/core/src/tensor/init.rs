//! Seeded fan-in scaled initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::LayerSpec;
use super::network::NetworkSpec;
use super::Tensor;

/// Number of inputs feeding one output unit of `layer`, if it has weights.
pub fn fan_in(layer: &LayerSpec) -> Option<usize> {
    match *layer {
        LayerSpec::FullyConnected { in_features, .. } => Some(in_features),
        LayerSpec::Conv3d { in_channels, .. } => Some(in_channels * 27),
        _ => None,
    }
}

/// Weights drawn from `N(0, 2 / fan_in)`, zero biases, in layer order.
pub fn init_parameters(spec: &NetworkSpec, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spec.layers
        .iter()
        .flat_map(|layer| init_layer(layer, &mut rng))
        .collect()
}

pub fn init_layer(layer: &LayerSpec, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let shapes = layer.param_shapes();
    let Some(fan) = fan_in(layer) else {
        return Vec::new();
    };
    let normal = Normal::new(0.0, (2.0 / fan as f64).sqrt()).expect("positive stdev");
    let weights = {
        let n: usize = shapes[0].iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        Tensor::new(&shapes[0], data).expect("shape from spec")
    };
    vec![weights, Tensor::zeros(&shapes[1])]
}
