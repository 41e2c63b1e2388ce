use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Input,
    Param,
    /// `a * b` (matrix product).
    Matmul(NodeId, NodeId),
    /// `a + b`; `b` may be a `1 x C` row broadcast over the rows of `a`.
    Add(NodeId, NodeId),
    Relu(NodeId),
    /// `max(0,x) + min(0, (exp(n x) - 1) / n)`.
    Celu(NodeId, f64),
    /// Elementwise square.
    Square(NodeId),
    /// Row-wise inner product, `R x C` and `R x C` to `R x 1`.
    Dot(NodeId, NodeId),
    /// Row-wise squared Euclidean norm, `R x C` to `R x 1`.
    SqNorm(NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Relu(..) => "relu",
            Op::Celu(..) => "celu",
            Op::Square(..) => "square",
            Op::Dot(..) => "dot",
            Op::SqNorm(..) => "sq-norm",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A single-use reverse-mode tape.
///
/// Values are computed eagerly as nodes are appended, so node order is a
/// topological order by construction. [`Graph::backward`] fills gradient
/// buffers for every node that depends on a gradient-carrying leaf.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

pub fn celu(x: f64, n: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        (n * x).exp_m1() / n
    }
}

pub fn celu_derivative(x: f64, n: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        (n * x).exp()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, detail: String) -> Error {
        Error::Shape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A leaf that does not receive a gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value, false)
    }

    /// A leaf whose gradient is wanted (points we differentiate with respect to).
    pub fn input_with_grad(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value, true)
    }

    /// A trainable parameter leaf.
    pub fn param(&mut self, value: &Tensor) -> NodeId {
        self.push(Op::Param, value.clone(), true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> Op {
        self.nodes[id.0].op
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(self.shape_err(
                "matmul",
                format!("{:?} by {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        matmul_into(va, vb, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Matmul(a, b), out, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = if va.shape() == vb.shape() {
            va.zip_map(vb, |x, y| x + y)
        } else if vb.rows() == 1 && vb.cols() == va.cols() {
            let mut out = va.clone();
            let bias = vb.as_slice();
            for r in 0..out.rows() {
                for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
                    *o += b;
                }
            }
            out
        } else {
            return Err(self.shape_err("add", format!("{:?} + {:?}", va.shape(), vb.shape())));
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(Op::Relu(a), out, rg)
    }

    pub fn celu(&mut self, a: NodeId, n: f64) -> NodeId {
        let out = self.value(a).map(|x| celu(x, n));
        let rg = self.rg(a);
        self.push(Op::Celu(a, n), out, rg)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(Op::Square(a), out, rg)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(self.shape_err("dot", format!("{:?} . {:?}", va.shape(), vb.shape())));
        }
        let data = va
            .iter_rows()
            .zip(vb.iter_rows())
            .map(|(x, y)| crate::tensor::dot(x, y))
            .collect();
        let out = Tensor::from_vec(va.rows(), 1, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Dot(a, b), out, rg))
    }

    pub fn sq_norm(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let data: Vec<f64> = va.iter_rows().map(|x| crate::tensor::dot(x, x)).collect();
        let out = Tensor::from_vec(va.rows(), 1, data).expect("row count");
        let rg = self.rg(a);
        self.push(Op::SqNorm(a), out, rg)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let out = self.value(a).map(|x| s * x);
        let rg = self.rg(a);
        self.push(Op::Scale(a, s), out, rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), out, rg)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).is_empty() {
            return Err(self.shape_err("mean", "empty operand".into()));
        }
        let out = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        Ok(self.push(Op::Mean(a), out, rg))
    }

    /// `a - b` for equal shapes.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        let out = &self.nodes[output.0].value;
        if out.shape() != (1, 1) {
            return Err(Error::NonScalarOutput {
                node: output.0,
                rows: out.rows(),
                cols: out.cols(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            if matches!(node.op, Op::Input | Op::Param) {
                continue;
            }
            // interior gradients are consumed; only leaves keep theirs
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, mut g: Tensor, grads: &mut [Option<Tensor>]) {
        fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
            match &mut grads[id.0] {
                Some(acc) => acc
                    .as_mut_slice()
                    .iter_mut()
                    .zip(delta.as_slice())
                    .for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        }
        // acc += op(x) * op(y), allocating acc on first use
        fn accumulate_gemm(grads: &mut [Option<Tensor>], id: NodeId, shape: (usize, usize), x: (&Tensor, bool), y: (&Tensor, bool)) {
            match &mut grads[id.0] {
                Some(acc) => crate::tensor::gemm(x.0, x.1, y.0, y.1, 1.0, acc),
                slot @ None => {
                    let mut t = Tensor::zeros(shape.0, shape.1);
                    crate::tensor::gemm(x.0, x.1, y.0, y.1, 0.0, &mut t);
                    *slot = Some(t);
                }
            }
        }
        let scale_rows = |mut v: Tensor, s: &Tensor, k: f64| {
            for r in 0..v.rows() {
                let f = k * s.as_slice()[r];
                v.row_mut(r).iter_mut().for_each(|x| *x *= f);
            }
            v
        };
        match self.nodes[idx].op {
            Op::Input | Op::Param => {}
            Op::Matmul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                if self.rg(a) {
                    accumulate_gemm(grads, a, va.shape(), (&g, false), (vb, true));
                }
                if self.rg(b) {
                    accumulate_gemm(grads, b, vb.shape(), (va, true), (&g, false));
                }
            }
            Op::Add(a, b) => {
                if self.rg(b) {
                    let vb = self.value(b);
                    if vb.shape() == g.shape() {
                        accumulate(grads, b, g.clone());
                    } else {
                        let mut gb = Tensor::zeros(1, vb.cols());
                        for r in g.iter_rows() {
                            for (d, v) in gb.as_mut_slice().iter_mut().zip(r) {
                                *d += v;
                            }
                        }
                        accumulate(grads, b, gb);
                    }
                }
                if self.rg(a) {
                    accumulate(grads, a, g);
                }
            }
            Op::Relu(a) => {
                let va = self.value(a).as_slice();
                g.as_mut_slice().iter_mut().zip(va).for_each(|(gv, &x)| {
                    if x <= 0.0 {
                        *gv = 0.0;
                    }
                });
                accumulate(grads, a, g);
            }
            Op::Celu(a, n) => {
                // for x <= 0 the derivative e^{nx} equals n * celu(x) + 1
                let (va, out) = (self.value(a).as_slice(), self.nodes[idx].value.as_slice());
                g.as_mut_slice().iter_mut().zip(va.iter().zip(out)).for_each(|(gv, (&x, &y))| {
                    if x <= 0.0 {
                        *gv *= (n * y + 1.0).max(0.0);
                    }
                });
                accumulate(grads, a, g);
            }
            Op::Square(a) => {
                let va = self.value(a).as_slice();
                g.as_mut_slice().iter_mut().zip(va).for_each(|(gv, &x)| *gv *= 2.0 * x);
                accumulate(grads, a, g);
            }
            Op::Dot(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                if self.rg(a) {
                    accumulate(grads, a, scale_rows(vb.clone(), &g, 1.0));
                }
                if self.rg(b) {
                    accumulate(grads, b, scale_rows(va.clone(), &g, 1.0));
                }
            }
            Op::SqNorm(a) => {
                let d = scale_rows(self.value(a).clone(), &g, 2.0);
                accumulate(grads, a, d);
            }
            Op::Scale(a, s) => {
                g.as_mut_slice().iter_mut().for_each(|v| *v *= s);
                accumulate(grads, a, g);
            }
            Op::Sum(a) => {
                let va = self.value(a);
                accumulate(grads, a, Tensor::full(va.rows(), va.cols(), g.item()));
            }
            Op::Mean(a) => {
                let va = self.value(a);
                let s = g.item() / va.len() as f64;
                accumulate(grads, a, Tensor::full(va.rows(), va.cols(), s));
            }
        }
    }

    /// Gradient of the last backward output with respect to `id`.
    ///
    /// Nodes the output does not depend on get a zero gradient.
    pub fn grad(&self, id: NodeId) -> Tensor {
        match self.grads.get(id.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let v = self.value(id);
                Tensor::zeros(v.rows(), v.cols())
            }
        }
    }

    /// Like [`Graph::grad`] but moves the buffer out.
    pub fn take_grad(&mut self, id: NodeId) -> Tensor {
        match self.grads.get_mut(id.0).and_then(Option::take) {
            Some(g) => g,
            None => {
                let v = self.value(id);
                Tensor::zeros(v.rows(), v.cols())
            }
        }
    }
}
