use crate::diffcore::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::random::{normal_tensor, rng};
use crate::tensor::{PointBatch, Tensor};

use super::{check_dim, check_widths, TransportMap};

/// Architecture of a transport map `R^D -> R^D`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapSpec {
    pub dim: usize,
    pub hidden: Vec<usize>,
}

impl MapSpec {
    pub fn new(dim: usize, hidden: &[usize]) -> Self {
        Self {
            dim,
            hidden: hidden.to_vec(),
        }
    }
}

/// Feed-forward ReLU network with a linear output layer.
///
/// Layer `l` computes `h W_l + b_l`, with `W_l` stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapNet {
    dim: usize,
    hidden: Vec<usize>,
    params: ParamStore,
}

impl MapNet {
    /// He-normal weights for hidden layers, zero biases.
    pub fn init(spec: &MapSpec, seed: u64) -> Result<Self> {
        let widths = layer_widths(spec)?;
        let mut r = rng(seed);
        let mut params = ParamStore::new();
        let last = widths.len() - 2;
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let gain = if l == last { 1.0 } else { 2.0 };
            let scale = (gain / fan_in as f64).sqrt();
            let w = normal_tensor(fan_in, fan_out, &mut r).map(|v| v * scale);
            params.push(format!("W{}", l + 1), w, false);
            params.push(format!("b{}", l + 1), Tensor::zeros(1, fan_out), false);
        }
        Ok(Self {
            dim: spec.dim,
            hidden: spec.hidden.clone(),
            params,
        })
    }

    /// Builds a net from explicit `(weight, bias)` pairs.
    pub fn from_layers(layers: Vec<(Tensor, Tensor)>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::Config("a map needs at least one layer".into()));
        };
        let dim = first.0.rows();
        let mut params = ParamStore::new();
        let mut hidden = Vec::new();
        let mut fan_in = dim;
        for (l, (w, b)) in layers.into_iter().enumerate() {
            if w.rows() != fan_in || b.shape() != (1, w.cols()) {
                return Err(Error::SizeMismatch(format!(
                    "layer {} has weight {:?} and bias {:?} after width {fan_in}",
                    l + 1,
                    w.shape(),
                    b.shape()
                )));
            }
            fan_in = w.cols();
            hidden.push(fan_in);
            params.push(format!("W{}", l + 1), w, false);
            params.push(format!("b{}", l + 1), b, false);
        }
        if hidden.pop() != Some(dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: fan_in,
            });
        }
        check_widths(&hidden)?;
        Ok(Self { dim, hidden, params })
    }

    pub(crate) fn from_store(spec: &MapSpec, params: ParamStore) -> Result<Self> {
        let template = Self::init(spec, 0)?;
        if template.params.len() != params.len()
            || template
                .params
                .iter()
                .zip(params.iter())
                .any(|(a, b)| a.value.shape() != b.value.shape())
        {
            return Err(Error::SizeMismatch("map parameters do not match architecture".into()));
        }
        Ok(Self {
            dim: spec.dim,
            hidden: spec.hidden.clone(),
            params,
        })
    }

    pub fn spec(&self) -> MapSpec {
        MapSpec::new(self.dim, &self.hidden)
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Appends the network to `g`. Returns the output node and one node per
    /// parameter array (in store order); parameters are gradient leaves only
    /// when `trainable`.
    pub fn build(&self, g: &mut Graph, x: NodeId, trainable: bool) -> Result<(NodeId, Vec<NodeId>)> {
        check_dim(self.dim, g.value(x))?;
        let leaves: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(&p.value)
                } else {
                    g.input(p.value.clone())
                }
            })
            .collect();
        let layers = leaves.len() / 2;
        let mut h = x;
        for l in 0..layers {
            h = g.matmul(h, leaves[2 * l])?;
            h = g.add(h, leaves[2 * l + 1])?;
            if l + 1 < layers {
                h = g.relu(h);
            }
        }
        Ok((h, leaves))
    }

    pub fn forward(&self, x: &PointBatch) -> Result<PointBatch> {
        let mut g = Graph::new();
        let xin = g.input(x.clone());
        let (out, _) = self.build(&mut g, xin, false)?;
        Ok(g.value(out).clone())
    }

    /// Weight array of layer `l` (0-based).
    pub fn weight(&self, l: usize) -> ParamId {
        ParamId(2 * l)
    }
}

impl TransportMap for MapNet {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &PointBatch) -> Result<PointBatch> {
        self.forward(x)
    }
}

fn layer_widths(spec: &MapSpec) -> Result<Vec<usize>> {
    let mut widths = vec![spec.dim];
    widths.extend(&spec.hidden);
    widths.push(spec.dim);
    check_widths(&widths)?;
    Ok(widths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_single_layer() {
        let net = MapNet::from_layers(vec![(Tensor::identity(2), Tensor::zeros(1, 2))]).unwrap();
        let x = Tensor::row_vector(&[1.0, 2.0]);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut net = MapNet::init(&MapSpec::new(3, &[5, 4]), 1).unwrap();
        net.params_mut()
            .iter_mut()
            .for_each(|p| p.value.as_mut_slice().fill(0.0));
        let x = Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 9.0]]).unwrap();
        assert!(net.forward(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_forward_and_init() {
        let spec = MapSpec::new(2, &[16, 16]);
        let a = MapNet::init(&spec, 42).unwrap();
        let b = MapNet::init(&spec, 42).unwrap();
        let c = MapNet::init(&spec, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params().flatten(), c.params().flatten());
        let x = Tensor::from_rows(&[[0.3, -1.2], [2.0, 0.1]]).unwrap();
        let (ya, yb) = (a.forward(&x).unwrap(), a.forward(&x).unwrap());
        assert_eq!(ya.as_slice(), yb.as_slice());
        assert_eq!(ya.shape(), (2, 2));
    }

    #[test]
    fn dimension_and_width_errors() {
        assert!(matches!(MapNet::init(&MapSpec::new(2, &[0]), 0), Err(Error::Config(_))));
        assert!(matches!(MapNet::init(&MapSpec::new(0, &[3]), 0), Err(Error::Config(_))));
        let net = MapNet::init(&MapSpec::new(2, &[3]), 0).unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(1, 3)),
            Err(Error::Dimension { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn from_layers_requires_square_io() {
        let bad = MapNet::from_layers(vec![(Tensor::zeros(2, 3), Tensor::zeros(1, 3))]);
        assert!(bad.is_err());
    }
}
