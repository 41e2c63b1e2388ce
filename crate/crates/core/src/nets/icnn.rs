use crate::diffcore::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::random::{normal_tensor, rng};
use crate::tensor::{PointBatch, Tensor};

use super::{check_dim, check_widths, Potential};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// `CELU_n`; tends to ReLU uniformly as `n` grows.
    Celu(f64),
}

impl Activation {
    fn apply(self, g: &mut Graph, h: NodeId) -> NodeId {
        match self {
            Activation::Relu => g.relu(h),
            Activation::Celu(n) => g.celu(h, n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipKind {
    /// `a_i y`
    Linear,
    /// `a_i y + (q_i y)^2`, the square taken entrywise.
    Quadratic,
}

/// Architecture of a strongly convex potential.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub dim: usize,
    /// Hidden widths; a final width-1 layer is always appended.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub skip: SkipKind,
    pub beta: f64,
}

impl PotentialSpec {
    pub fn new(dim: usize, hidden: &[usize]) -> Self {
        Self {
            dim,
            hidden: hidden.to_vec(),
            activation: Activation::Celu(1.0),
            skip: SkipKind::Linear,
            beta: 0.1,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_skip(mut self, skip: SkipKind) -> Self {
        self.skip = skip;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerIds {
    w: Option<ParamId>,
    a: ParamId,
    q: Option<ParamId>,
    b: ParamId,
}

/// Input convex network with skip connections:
///
/// ```text
/// z_1 = s(a_1 y + b_1)
/// z_{i+1} = s(w_{i+1} z_i + a_{i+1} y + b_{i+1})
/// ```
///
/// with entrywise nonnegative `w_i` and a convex nondecreasing `s`; the last
/// layer has width one.
#[derive(Debug, Clone, PartialEq)]
pub struct IcnnNet {
    dim: usize,
    widths: Vec<usize>,
    activation: Activation,
    skip: SkipKind,
    params: ParamStore,
    layers: Vec<LayerIds>,
}

impl IcnnNet {
    pub fn init(
        dim: usize,
        hidden: &[usize],
        activation: Activation,
        skip: SkipKind,
        seed: u64,
    ) -> Result<Self> {
        let mut widths = hidden.to_vec();
        widths.push(1);
        check_widths(&[dim])?;
        check_widths(&widths)?;
        if let Activation::Celu(n) = activation {
            if !(n > 0.0) {
                return Err(Error::Config(format!("CELU parameter must be > 0, got {n}")));
            }
        }
        let mut r = rng(seed);
        let skip_scale = 1.0 / (dim as f64).sqrt();
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(widths.len());
        for (i, &width) in widths.iter().enumerate() {
            let k = i + 1;
            let w = (i > 0).then(|| {
                let fan_in = widths[i - 1];
                let scale = 1.0 / (fan_in as f64).sqrt();
                let v = normal_tensor(fan_in, width, &mut r).map(|x| x.abs() * scale);
                params.push(format!("w{k}"), v, true)
            });
            let a = params.push(
                format!("a{k}"),
                normal_tensor(dim, width, &mut r).map(|x| x * skip_scale),
                false,
            );
            let q = (skip == SkipKind::Quadratic).then(|| {
                params.push(
                    format!("q{k}"),
                    normal_tensor(dim, width, &mut r).map(|x| x * skip_scale),
                    false,
                )
            });
            let b = params.push(format!("b{k}"), Tensor::zeros(1, width), false);
            layers.push(LayerIds { w, a, q, b });
        }
        Ok(Self {
            dim,
            widths,
            activation,
            skip,
            params,
            layers,
        })
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeros(dim: usize, hidden: &[usize], activation: Activation, skip: SkipKind) -> Result<Self> {
        let mut net = Self::init(dim, hidden, activation, skip, 0)?;
        net.params
            .iter_mut()
            .for_each(|p| p.value.as_mut_slice().fill(0.0));
        Ok(net)
    }

    pub(crate) fn from_store(
        dim: usize,
        hidden: &[usize],
        activation: Activation,
        skip: SkipKind,
        params: ParamStore,
    ) -> Result<Self> {
        let mut net = Self::zeros(dim, hidden, activation, skip)?;
        if net.params.len() != params.len()
            || net.params.iter().zip(params.iter()).any(|(a, b)| {
                a.name != b.name || a.value.shape() != b.value.shape() || a.nonneg != b.nonneg
            })
        {
            return Err(Error::SizeMismatch("potential parameters do not match architecture".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Layer widths, ending with the scalar output layer.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn hidden(&self) -> &[usize] {
        &self.widths[..self.widths.len() - 1]
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn skip(&self) -> SkipKind {
        self.skip
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Looks up a parameter by its conventional name (`w2`, `a1`, `b3`, ...).
    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.find(name)
    }

    /// Copy of the network with a different activation.
    pub fn with_activation(&self, activation: Activation) -> Self {
        Self {
            activation,
            ..self.clone()
        }
    }

    pub fn build(&self, g: &mut Graph, y: NodeId, trainable: bool) -> Result<(NodeId, Vec<NodeId>)> {
        check_dim(self.dim, g.value(y))?;
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
        let leaf = |id: ParamId| leaves[id.0];
        let mut z: Option<NodeId> = None;
        for layer in &self.layers {
            let mut h = g.matmul(y, leaf(layer.a))?;
            if let Some(q) = layer.q {
                let qy = g.matmul(y, leaf(q))?;
                let qy2 = g.square(qy);
                h = g.add(h, qy2)?;
            }
            if let (Some(w), Some(prev)) = (layer.w, z) {
                let wz = g.matmul(prev, leaf(w))?;
                h = g.add(h, wz)?;
            }
            h = g.add(h, leaf(layer.b))?;
            z = Some(self.activation.apply(g, h));
        }
        Ok((z.expect("at least one layer"), leaves))
    }

    pub fn forward(&self, y: &PointBatch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let yin = g.input(y.clone());
        let (out, _) = self.build(&mut g, yin, false)?;
        Ok(g.value(out).as_slice().to_vec())
    }

    /// Clamps every internal weight `w_i` to be nonnegative.
    pub fn project_nonneg(&mut self) {
        self.params.project_nonneg();
    }

    /// Rescales every skip matrix `a_i` to Frobenius norm at most `bound`.
    pub fn clip_skip_norms(&mut self, bound: f64) {
        for layer in &self.layers {
            self.params.clip_norm(layer.a, bound);
        }
    }

    /// Upper bound on the Lipschitz constant over the ball of radius `radius`,
    /// from products of Frobenius norms (activations are 1-Lipschitz).
    pub fn lipschitz_bound(&self, radius: f64) -> f64 {
        let fro = |id: ParamId| crate::tensor::norm(self.params.value(id).as_slice());
        let mut lip = 0.0;
        for layer in &self.layers {
            let mut skip = fro(layer.a);
            if let Some(q) = layer.q {
                let n = fro(q);
                skip += 2.0 * n * n * radius;
            }
            let carried = layer.w.map_or(0.0, |w| fro(w) * lip);
            lip = carried + skip;
        }
        lip
    }
}

/// `phi(y) = icnn(y) + beta |y|^2 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongPotential {
    icnn: IcnnNet,
    beta: f64,
}

impl StrongPotential {
    pub fn new(icnn: IcnnNet, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(Self { icnn, beta })
    }

    pub fn init(spec: &PotentialSpec, seed: u64) -> Result<Self> {
        let icnn = IcnnNet::init(spec.dim, &spec.hidden, spec.activation, spec.skip, seed)?;
        Self::new(icnn, spec.beta)
    }

    /// `beta |y|^2 / 2` alone (inner network identically zero).
    pub fn pure_quadratic(dim: usize, beta: f64) -> Result<Self> {
        Self::new(IcnnNet::zeros(dim, &[1], Activation::Relu, SkipKind::Linear)?, beta)
    }

    pub fn spec(&self) -> PotentialSpec {
        PotentialSpec {
            dim: self.icnn.dim,
            hidden: self.icnn.hidden().to_vec(),
            activation: self.icnn.activation,
            skip: self.icnn.skip,
            beta: self.beta,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn icnn(&self) -> &IcnnNet {
        &self.icnn
    }

    pub fn icnn_mut(&mut self) -> &mut IcnnNet {
        &mut self.icnn
    }

    pub fn params(&self) -> &ParamStore {
        &self.icnn.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.icnn.params
    }

    pub fn build(&self, g: &mut Graph, y: NodeId, trainable: bool) -> Result<(NodeId, Vec<NodeId>)> {
        let (inner, leaves) = self.icnn.build(g, y, trainable)?;
        if self.beta == 0.0 {
            return Ok((inner, leaves));
        }
        let sq = g.sq_norm(y);
        let quad = g.scale(sq, 0.5 * self.beta);
        Ok((g.add(inner, quad)?, leaves))
    }

    pub fn forward(&self, y: &PointBatch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let yin = g.input(y.clone());
        let (out, _) = self.build(&mut g, yin, false)?;
        Ok(g.value(out).as_slice().to_vec())
    }

    pub fn project_nonneg(mut self) -> Self {
        self.icnn.project_nonneg();
        self
    }

    pub fn project_nonneg_in_place(&mut self) {
        self.icnn.project_nonneg();
    }
}

impl Potential for StrongPotential {
    fn dim(&self) -> usize {
        self.icnn.dim
    }

    fn strong_convexity(&self) -> f64 {
        self.beta
    }

    fn values(&self, y: &PointBatch) -> Result<Vec<f64>> {
        self.forward(y)
    }

    fn values_and_grads(&self, y: &PointBatch) -> Result<(Vec<f64>, PointBatch)> {
        let mut g = Graph::new();
        let yin = g.input_with_grad(y.clone());
        let (out, _) = self.build(&mut g, yin, false)?;
        let values = g.value(out).as_slice().to_vec();
        let total = g.sum(out);
        g.backward(total)?;
        Ok((values, g.take_grad(yin)))
    }
}
