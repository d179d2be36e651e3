use rand::Rng;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

/// Inverted dropout applied to hidden activations during training.
pub struct Dropout<'r, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'r mut R,
}

/// Stack of affine layers. The last layer has a single output unit.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes` lists layer widths including the input, e.g. `[192, 64, 32, 1]`.
    /// `activations` has one entry per affine layer.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(NnError::shape("mlp layout", sizes, &[activations.len()]));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(i, (w, &activation))| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = store.add_uniform(format!("{prefix}.{i}.w"), &[w[0], w[1]], bound, rng);
                let bias = store.add(format!("{prefix}.{i}.b"), Tensor::zeros(&[1, w[1]]));
                Dense {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn bind(store: &ParamStore, prefix: &str, activations: &[Activation]) -> Result<Self> {
        let layers = activations
            .iter()
            .enumerate()
            .map(|(i, &activation)| {
                Ok(Dense {
                    weight: store.find(&format!("{prefix}.{i}.w"))?,
                    bias: store.find(&format!("{prefix}.{i}.b"))?,
                    activation,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Sets the final layer's weights and bias to zero.
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        if let Some(last) = self.layers.last() {
            store.get_mut(last.weight).data_mut().fill(0.0);
            store.get_mut(last.bias).data_mut().fill(0.0);
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        mut dropout: Option<Dropout<'_, R>>,
    ) -> Result<Var> {
        let mut h = x;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.param(layer.weight);
            let b = g.param(layer.bias);
            let a = g.matmul(h, w)?;
            let a = g.add_row(a, b)?;
            h = layer.activation.apply(g, a);
            if i + 1 < n {
                if let Some(d) = dropout.as_mut() {
                    if d.rate > 0.0 {
                        let shape = g.value(h).shape().to_vec();
                        let keep = 1.0 - d.rate;
                        let mut mask = Tensor::zeros(&shape);
                        for m in mask.data_mut() {
                            if d.rng.random::<f64>() < keep {
                                *m = 1.0 / keep;
                            }
                        }
                        let mask = g.constant(mask);
                        h = g.mul(h, mask)?;
                    }
                }
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_output_layer_gives_half_after_sigmoid() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(
            &mut store,
            "m",
            &[4, 5, 1],
            &[Activation::Relu, Activation::Sigmoid],
            &mut rng,
        )
        .unwrap();
        mlp.zero_output_layer(&mut store);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::from_rows(&[[1.0, 2.0, -3.0, 0.5], [9.0, -9.0, 0.0, 1.0]]).unwrap());
        let y = mlp.forward::<ChaCha8Rng>(&mut g, x, None).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn layout_is_validated() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(Mlp::new(&mut store, "m", &[4], &[], &mut rng).is_err());
        assert!(Mlp::new(&mut store, "m", &[4, 2, 1], &[Activation::Relu], &mut rng).is_err());
    }
}
