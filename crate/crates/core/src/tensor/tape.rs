use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::broadcast::reduce_to_shape;
use super::kernels::{self, ConvGeometry};
use super::{ParamId, Parameter, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
    Square,
    Sqrt,
    Cos,
    Sin,
    /// `log(1 − e^{−x})` for `x > 0`.
    Log1mExp,
    /// Standard normal CDF.
    NormalCdf,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Unary(Unary, usize),
    Affine { input: usize, scale: f64 },
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Sum(usize),
    SumAxis { input: usize, axis: usize },
    Narrow { input: usize, axis: usize, start: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Conv2d { input: usize, kernel: usize, geometry: ConvGeometry },
    Cholesky(usize),
    TriSolve { l: usize, b: usize, transpose: bool },
    Diag(usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
}

/// Append-only record of one forward pass.
///
/// Node ids are assigned in creation order, so parents always precede their
/// children and a single reverse sweep visits nodes in topological order.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, op: Op, value: Tensor) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { op, value: value.clone() });
        Var {
            tape: self.clone(),
            id,
            value,
        }
    }

    /// Records a leaf whose gradient can be queried.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Records a value that is treated as a constant by callers.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Binds a parameter to this tape. Repeated binds return the same node.
    pub fn param(&self, p: &Parameter) -> Var {
        let existing = self.inner.borrow().params.get(&p.id()).copied();
        if let Some(id) = existing {
            let value = self.inner.borrow().nodes[id].value.clone();
            return Var {
                tape: self.clone(),
                id,
                value,
            };
        }
        let v = self.leaf(p.value().clone());
        self.inner.borrow_mut().params.insert(p.id(), v.id);
        v
    }

    pub fn same_as(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: &Var) -> Result<Gradients> {
        if !root.tape.same_as(self) {
            return Err(Error::DetachedTensor);
        }
        if !root.value.shape().is_empty() {
            return Err(Error::NonScalarRoot(root.value.shape().to_vec()));
        }
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor::scalar(1.0));
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            for (parent, contrib) in adjoints(nodes, node, &g) {
                let slot = &mut grads[parent];
                *slot = Some(match slot.take() {
                    None => contrib,
                    Some(acc) => acc
                        .zip_map(&contrib, |a, b| a + b)
                        .expect("adjoint shapes agree"),
                });
            }
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: inner.params.clone(),
        })
    }
}

fn val(nodes: &[Node], id: usize) -> &Tensor {
    &nodes[id].value
}

fn unary_grad(kind: Unary, x: &Tensor, y: &Tensor, g: &Tensor) -> Tensor {
    let data: Vec<f64> = match kind {
        Unary::Neg => g.data().iter().map(|g| -g).collect(),
        Unary::Exp => zip3(g, x, y, |g, _, y| g * y),
        Unary::Log => zip3(g, x, y, |g, x, _| g / x),
        Unary::Tanh => zip3(g, x, y, |g, _, y| g * (1.0 - y * y)),
        Unary::Sigmoid => zip3(g, x, y, |g, _, y| g * y * (1.0 - y)),
        Unary::Softplus => zip3(g, x, y, |g, x, _| g * sigmoid(x)),
        Unary::Relu => zip3(g, x, y, |g, x, _| if x > 0.0 { g } else { 0.0 }),
        Unary::Square => zip3(g, x, y, |g, x, _| 2.0 * x * g),
        Unary::Sqrt => zip3(g, x, y, |g, _, y| g / (2.0 * y)),
        Unary::Cos => zip3(g, x, y, |g, x, _| -g * x.sin()),
        Unary::Sin => zip3(g, x, y, |g, x, _| g * x.cos()),
        Unary::Log1mExp => zip3(g, x, y, |g, x, _| g / x.exp_m1()),
        Unary::NormalCdf => zip3(g, x, y, |g, x, _| {
            g * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
        }),
    };
    Tensor::from_parts(x.shape().to_vec(), data)
}

fn zip3(g: &Tensor, x: &Tensor, y: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
    g.data()
        .iter()
        .zip(x.data())
        .zip(y.data())
        .map(|((&g, &x), &y)| f(g, x, y))
        .collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mat_t(t: &Tensor) -> Tensor {
    t.t().expect("rank-2")
}

fn tril(t: &Tensor) -> Tensor {
    let n = t.shape()[0];
    let mut d = t.to_vec();
    for i in 0..n {
        for j in i + 1..n {
            d[i * n + j] = 0.0;
        }
    }
    Tensor::from_parts(vec![n, n], d)
}

fn adjoints(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let y = &node.value;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![
            (*a, reduce_to_shape(g, val(nodes, *a).shape())),
            (*b, reduce_to_shape(g, val(nodes, *b).shape())),
        ],
        Op::Sub(a, b) => vec![
            (*a, reduce_to_shape(g, val(nodes, *a).shape())),
            (*b, reduce_to_shape(&g.map(|v| -v), val(nodes, *b).shape())),
        ],
        Op::Mul(a, b) => {
            let (va, vb) = (val(nodes, *a), val(nodes, *b));
            let ga = g.zip_map(vb, |g, b| g * b).expect("broadcast");
            let gb = g.zip_map(va, |g, a| g * a).expect("broadcast");
            vec![
                (*a, reduce_to_shape(&ga, va.shape())),
                (*b, reduce_to_shape(&gb, vb.shape())),
            ]
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(nodes, *a), val(nodes, *b));
            let ga = g.zip_map(vb, |g, b| g / b).expect("broadcast");
            // d(a/b)/db = -y/b
            let gb = g
                .zip_map(y, |g, y| g * y)
                .and_then(|t| t.zip_map(vb, |gy, b| -gy / b))
                .expect("broadcast");
            vec![
                (*a, reduce_to_shape(&ga, va.shape())),
                (*b, reduce_to_shape(&gb, vb.shape())),
            ]
        }
        Op::Unary(kind, a) => vec![(*a, unary_grad(*kind, val(nodes, *a), y, g))],
        Op::Affine { input, scale } => vec![(*input, g.map(|v| v * scale))],
        Op::MatMul(a, b) => {
            let (va, vb) = (val(nodes, *a), val(nodes, *b));
            let ga = g.matmul(&mat_t(vb)).expect("matmul adjoint");
            let gb = mat_t(va).matmul(g).expect("matmul adjoint");
            vec![(*a, ga), (*b, gb)]
        }
        Op::Transpose(a) => vec![(*a, mat_t(g))],
        Op::Reshape(a) => vec![(*a, g.reshape(val(nodes, *a).shape()).expect("same size"))],
        Op::Sum(a) => vec![(*a, Tensor::full(val(nodes, *a).shape(), g.item()))],
        Op::SumAxis { input, axis } => {
            let shape = val(nodes, *input).shape();
            let mut keep = shape.to_vec();
            keep[*axis] = 1;
            let g = g.reshape(&keep).expect("keepdim reshape");
            let out = Tensor::zeros(shape).zip_map(&g, |_, g| g).expect("broadcast");
            vec![(*input, out)]
        }
        Op::Narrow { input, axis, start } => {
            let shape = val(nodes, *input).shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let (full, part) = (shape[*axis], g.shape()[*axis]);
            let mut d = vec![0.0; shape.iter().product()];
            for o in 0..outer {
                let src = &g.data()[o * part * inner..(o + 1) * part * inner];
                let dst = o * full * inner + start * inner;
                d[dst..dst + part * inner].copy_from_slice(src);
            }
            vec![(*input, Tensor::from_parts(shape.to_vec(), d))]
        }
        Op::Concat { inputs, axis } => {
            let shape = g.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis];
            let mut offset = 0;
            inputs
                .iter()
                .map(|&id| {
                    let ishape = val(nodes, id).shape();
                    let part = ishape[*axis];
                    let mut d = Vec::with_capacity(ishape.iter().product());
                    for o in 0..outer {
                        let s = o * total * inner + offset * inner;
                        d.extend_from_slice(&g.data()[s..s + part * inner]);
                    }
                    offset += part;
                    (id, Tensor::from_parts(ishape.to_vec(), d))
                })
                .collect()
        }
        Op::Conv2d {
            input,
            kernel,
            geometry,
        } => {
            let (x, k) = (val(nodes, *input), val(nodes, *kernel));
            let dx = kernels::conv2d_input_grad(g.data(), k.data(), geometry);
            let dk = kernels::conv2d_kernel_grad(x.data(), g.data(), geometry);
            vec![
                (*input, Tensor::from_parts(x.shape().to_vec(), dx)),
                (*kernel, Tensor::from_parts(k.shape().to_vec(), dk)),
            ]
        }
        Op::Cholesky(a) => {
            // Ā = ½ (S + Sᵀ), S = L⁻ᵀ Φ(Lᵀ L̄) L⁻¹, Φ = lower triangle with halved diagonal.
            let n = y.shape()[0];
            let mut phi = tril(&mat_t(y).matmul(&tril(g)).expect("square"));
            let mut pd = phi.to_vec();
            for i in 0..n {
                pd[i * n + i] *= 0.5;
            }
            phi = Tensor::from_parts(vec![n, n], pd);
            let l = y.data();
            // L⁻ᵀ Φ
            let left = kernels::solve_lower(l, phi.data(), n, n, true);
            // (L⁻ᵀ Φ) L⁻¹ = (L⁻ᵀ (L⁻ᵀ Φ)ᵀ)ᵀ
            let lt = kernels::transpose(&left, n, n);
            let s = kernels::transpose(&kernels::solve_lower(l, &lt, n, n, true), n, n);
            let mut sym = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    sym[i * n + j] = 0.5 * (s[i * n + j] + s[j * n + i]);
                }
            }
            vec![(*a, Tensor::from_parts(vec![n, n], sym))]
        }
        Op::TriSolve { l, b, transpose } => {
            let lt = val(nodes, *l);
            let n = lt.shape()[0];
            let m = y.shape()[1];
            // B̄ = L⁻ᵀ X̄ (or L⁻¹ X̄ for the transposed solve)
            let gb = Tensor::from_parts(
                vec![n, m],
                kernels::solve_lower(lt.data(), g.data(), n, m, !transpose),
            );
            let outer = if *transpose {
                y.matmul(&mat_t(&gb))
            } else {
                gb.matmul(&mat_t(y))
            }
            .expect("square");
            let gl = tril(&outer).map(|v| -v);
            vec![(*l, gl), (*b, gb)]
        }
        Op::Diag(a) => {
            let n = g.len();
            let mut d = vec![0.0; n * n];
            for i in 0..n {
                d[i * n + i] = g.data()[i];
            }
            vec![(*a, Tensor::from_parts(vec![n, n], d))]
        }
    }
}

/// A tensor recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
    pub(crate) value: Tensor,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .finish()
    }
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    /// A constant copy of this value with no path back to its inputs.
    pub fn detach(&self) -> Var {
        self.tape.constant(self.value.clone())
    }

    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward(self)
    }
}

/// Adjoints of one backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, usize>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` does not influence the root.
    pub fn wrt(&self, v: &Var) -> Tensor {
        self.grads
            .get(v.id)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(v.shape()))
    }

    /// Gradient with respect to a bound parameter, if it was bound on this tape.
    pub fn param(&self, p: &Parameter) -> Option<Tensor> {
        let id = *self.params.get(&p.id())?;
        Some(
            self.grads
                .get(id)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(p.shape())),
        )
    }
}
