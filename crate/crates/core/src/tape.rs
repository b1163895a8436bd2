//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! The graph is a flat tape rebuilt on every forward pass (define-by-run).
//! [`Var`] is a cheap handle into the tape; operations on `Var`s compute the
//! result eagerly and record the backward edges when any input requires a
//! gradient. [`Tape::backward`] walks the tape once in reverse and returns a
//! gradient per leaf.
//!
//! Shape discipline: everything is a 2-d matrix (see [`crate::tensor`]).
//! Shape mismatches are programmer errors and panic with a description;
//! domain violations (log of a non-positive value) panic as well. Non-finite
//! values that arise from otherwise-legal arithmetic (training divergence)
//! are caught where a scalar loss is consumed: [`Tape::backward`] refuses a
//! non-finite loss, and the optimizer refuses non-finite gradients.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use ndarray::{Array2, Axis};
use std::cell::RefCell;
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("backward() needs a 1x1 loss, got {0}x{1}")]
    LossNotScalar(usize, usize),
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),
}

/// Pointwise nonlinearities available as tape ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pointwise {
    Relu,
    Sine,
    Tanh,
    Exp,
    Log,
    Sqrt,
}

/// One recorded operation; fields are tape indices of the inputs.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddRow { a: usize, row: usize },
    AddCol { a: usize, col: usize },
    SubRow { a: usize, row: usize },
    SubCol { a: usize, col: usize },
    DivCol { a: usize, col: usize },
    MulScalar { a: usize, s: usize },
    ConcatRows { a: usize, b: usize },
    ConcatCols { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    Pointwise { a: usize, f: Pointwise },
    ClampMin { a: usize, c: f64 },
    Transpose { a: usize },
    SumAll { a: usize },
    SumAxis { a: usize, axis: usize },
    MeanAxis { a: usize, axis: usize },
    L2Norm { a: usize },
    RowSoftmaxLog { a: usize },
    RowLogSumExp { a: usize },
    ColLogSumExp { a: usize },
    MeanPoolRows { a: usize, block: usize },
    MeanPoolStride { a: usize, stride: usize },
    ExpandRows { a: usize, times: usize },
    TileRows { a: usize, times: usize },
    StopGrad { a: usize },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op,
    requires_grad: bool,
}

/// A recording of one forward computation.
pub struct Tape<S: Scalar> {
    nodes: Rc<RefCell<Vec<Node<S>>>>,
}

impl<S: Scalar> Clone for Tape<S> {
    fn clone(&self) -> Self {
        Tape { nodes: Rc::clone(&self.nodes) }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value on a tape.
#[derive(Clone)]
pub struct Var<S: Scalar> {
    tape: Tape<S>,
    id: usize,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Rc::new(RefCell::new(Vec::new())) }
    }

    /// A differentiable input; `backward` will produce a gradient for it.
    pub fn leaf(&self, value: Tensor<S>) -> Var<S> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor<S>) -> Var<S> {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_scalar(&self, value: S) -> Var<S> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op, requires_grad: bool) -> Var<S> {
        let mut nodes = self.nodes.borrow_mut();
        // Cut the backward edges of subgraphs that cannot need gradients.
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self.clone(), id: nodes.len() - 1 }
    }

    fn same_tape(&self, other: &Tape<S>) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    /// Reverse sweep from a scalar loss. Leaves not reachable from the loss
    /// simply get no entry (read back as zero).
    pub fn backward(&self, loss: &Var<S>) -> Result<Gradients<S>, TapeError> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].value;
        if lv.shape() != (1, 1) {
            return Err(TapeError::LossNotScalar(lv.rows(), lv.cols()));
        }
        if !lv.item().is_finite() {
            return Err(TapeError::NonFiniteLoss(lv.item().as_f64()));
        }

        let mut grads: Vec<Option<Array2<S>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            if grads[id].is_none() || !nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].clone().unwrap();
            let val = |i: usize| nodes[i].value.array();
            match nodes[id].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    acc(&mut grads, a, g.dot(&val(b).t()));
                    acc(&mut grads, b, val(a).t().dot(&g));
                }
                Op::Add { a, b } => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g);
                }
                Op::Sub { a, b } => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g.mapv(|x| -x));
                }
                Op::Mul { a, b } => {
                    acc(&mut grads, a, &g * val(b));
                    acc(&mut grads, b, &g * val(a));
                }
                Op::AddRow { a, row } => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, row, sum_keep(&g, 0));
                }
                Op::AddCol { a, col } => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, col, sum_keep(&g, 1));
                }
                Op::SubRow { a, row } => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, row, sum_keep(&g, 0).mapv(|x| -x));
                }
                Op::SubCol { a, col } => {
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, col, sum_keep(&g, 1).mapv(|x| -x));
                }
                Op::DivCol { a, col } => {
                    // out[i,j] = a[i,j] / col[i]
                    let c = val(col);
                    let av = val(a);
                    let mut da = g.clone();
                    let mut dc = Array2::zeros((c.nrows(), 1));
                    for i in 0..av.nrows() {
                        let ci = c[(i, 0)];
                        let mut s = S::zero();
                        for j in 0..av.ncols() {
                            da[(i, j)] = da[(i, j)] / ci;
                            s = s + g[(i, j)] * av[(i, j)];
                        }
                        dc[(i, 0)] = -s / (ci * ci);
                    }
                    acc(&mut grads, a, da);
                    acc(&mut grads, col, dc);
                }
                Op::MulScalar { a, s } => {
                    let sv = val(s)[(0, 0)];
                    acc(&mut grads, a, g.mapv(|x| x * sv));
                    let ds = (&g * val(a)).sum();
                    acc(&mut grads, s, Array2::from_elem((1, 1), ds));
                }
                Op::ConcatRows { a, b } => {
                    let ra = val(a).nrows();
                    acc(&mut grads, a, g.slice(ndarray::s![..ra, ..]).to_owned());
                    acc(&mut grads, b, g.slice(ndarray::s![ra.., ..]).to_owned());
                }
                Op::ConcatCols { a, b } => {
                    let ca = val(a).ncols();
                    acc(&mut grads, a, g.slice(ndarray::s![.., ..ca]).to_owned());
                    acc(&mut grads, b, g.slice(ndarray::s![.., ca..]).to_owned());
                }
                Op::Scale { a, c } => {
                    let c = S::cast(c);
                    acc(&mut grads, a, g.mapv(|x| x * c));
                }
                Op::Pointwise { a, f } => {
                    let x = val(a);
                    let y = nodes[id].value.array();
                    let da = match f {
                        Pointwise::Relu => {
                            let mut d = g.clone();
                            d.zip_mut_with(x, |gi, &xi| {
                                if xi <= S::zero() {
                                    *gi = S::zero()
                                }
                            });
                            d
                        }
                        Pointwise::Sine => {
                            let mut d = g.clone();
                            d.zip_mut_with(x, |gi, &xi| *gi = *gi * xi.cos());
                            d
                        }
                        Pointwise::Tanh => {
                            let mut d = g.clone();
                            d.zip_mut_with(y, |gi, &yi| *gi = *gi * (S::one() - yi * yi));
                            d
                        }
                        Pointwise::Exp => {
                            let mut d = g.clone();
                            d.zip_mut_with(y, |gi, &yi| *gi = *gi * yi);
                            d
                        }
                        Pointwise::Log => {
                            let mut d = g.clone();
                            d.zip_mut_with(x, |gi, &xi| *gi = *gi / xi);
                            d
                        }
                        Pointwise::Sqrt => {
                            let two = S::cast(2.0);
                            let mut d = g.clone();
                            d.zip_mut_with(y, |gi, &yi| *gi = *gi / (two * yi));
                            d
                        }
                    };
                    acc(&mut grads, a, da);
                }
                Op::ClampMin { a, c } => {
                    let c = S::cast(c);
                    let mut d = g.clone();
                    d.zip_mut_with(val(a), |gi, &xi| {
                        if xi <= c {
                            *gi = S::zero()
                        }
                    });
                    acc(&mut grads, a, d);
                }
                Op::Transpose { a } => {
                    acc(&mut grads, a, g.t().to_owned());
                }
                Op::SumAll { a } => {
                    let (r, c) = val(a).dim();
                    acc(&mut grads, a, Array2::from_elem((r, c), g[(0, 0)]));
                }
                Op::SumAxis { a, axis } => {
                    acc(&mut grads, a, broadcast_back(&g, val(a).dim(), axis, S::one()));
                }
                Op::MeanAxis { a, axis } => {
                    let dim = val(a).dim();
                    let n = if axis == 0 { dim.0 } else { dim.1 };
                    let w = S::one() / S::cast(n as f64);
                    acc(&mut grads, a, broadcast_back(&g, dim, axis, w));
                }
                Op::L2Norm { a } => {
                    let y = nodes[id].value.item();
                    if y > S::zero() {
                        let w = g[(0, 0)] / y;
                        acc(&mut grads, a, val(a).mapv(|x| x * w));
                    }
                }
                Op::RowSoftmaxLog { a } => {
                    // y = x - lse(x) per row; dx = g - softmax(x) * rowsum(g)
                    let y = nodes[id].value.array();
                    let mut d = g.clone();
                    for i in 0..d.nrows() {
                        let gsum: S = g.row(i).sum();
                        for j in 0..d.ncols() {
                            d[(i, j)] = d[(i, j)] - y[(i, j)].exp() * gsum;
                        }
                    }
                    acc(&mut grads, a, d);
                }
                Op::RowLogSumExp { a } => {
                    let x = val(a);
                    let y = nodes[id].value.array();
                    let mut d = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        for j in 0..x.ncols() {
                            d[(i, j)] = g[(i, 0)] * (x[(i, j)] - y[(i, 0)]).exp();
                        }
                    }
                    acc(&mut grads, a, d);
                }
                Op::ColLogSumExp { a } => {
                    let x = val(a);
                    let y = nodes[id].value.array();
                    let mut d = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        for j in 0..x.ncols() {
                            d[(i, j)] = g[(0, j)] * (x[(i, j)] - y[(0, j)]).exp();
                        }
                    }
                    acc(&mut grads, a, d);
                }
                Op::MeanPoolRows { a, block } => {
                    let dim = val(a).dim();
                    let w = S::one() / S::cast(block as f64);
                    let mut d = Array2::zeros(dim);
                    for r in 0..dim.0 {
                        for j in 0..dim.1 {
                            d[(r, j)] = g[(r / block, j)] * w;
                        }
                    }
                    acc(&mut grads, a, d);
                }
                Op::MeanPoolStride { a, stride } => {
                    let dim = val(a).dim();
                    let cnt = dim.0 / stride;
                    let w = S::one() / S::cast(cnt as f64);
                    let mut d = Array2::zeros(dim);
                    for r in 0..dim.0 {
                        for j in 0..dim.1 {
                            d[(r, j)] = g[(r % stride, j)] * w;
                        }
                    }
                    acc(&mut grads, a, d);
                }
                Op::ExpandRows { a, times } => {
                    let dim = val(a).dim();
                    let mut d = Array2::zeros(dim);
                    for r in 0..g.nrows() {
                        for j in 0..g.ncols() {
                            d[(r / times, j)] = d[(r / times, j)] + g[(r, j)];
                        }
                    }
                    acc(&mut grads, a, d);
                }
                Op::TileRows { a, times: _ } => {
                    let dim = val(a).dim();
                    let mut d = Array2::zeros(dim);
                    for r in 0..g.nrows() {
                        for j in 0..g.ncols() {
                            d[(r % dim.0, j)] = d[(r % dim.0, j)] + g[(r, j)];
                        }
                    }
                    acc(&mut grads, a, d);
                }
                Op::StopGrad { a: _ } => {}
            }
        }

        Ok(Gradients { grads: grads.into_iter().map(|g| g.map(Tensor::new)).collect() })
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Array2<S>>], id: usize, delta: Array2<S>) {
    match &mut grads[id] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

/// Sum along `axis`, keeping the reduced axis with extent 1.
fn sum_keep<S: Scalar>(g: &Array2<S>, axis: usize) -> Array2<S> {
    let s = g.sum_axis(Axis(axis));
    let n = s.len();
    let v = s.into_raw_vec_and_offset().0;
    if axis == 0 {
        Array2::from_shape_vec((1, n), v).unwrap()
    } else {
        Array2::from_shape_vec((n, 1), v).unwrap()
    }
}

fn broadcast_back<S: Scalar>(
    g: &Array2<S>,
    dim: (usize, usize),
    axis: usize,
    weight: S,
) -> Array2<S> {
    let mut d = Array2::zeros(dim);
    for i in 0..dim.0 {
        for j in 0..dim.1 {
            let gv = if axis == 0 { g[(0, j)] } else { g[(i, 0)] };
            d[(i, j)] = gv * weight;
        }
    }
    d
}

/// Gradients keyed by tape position, produced by [`Tape::backward`].
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: &Var<S>) -> Option<&Tensor<S>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zeros when `v` is disconnected from the loss.
    pub fn of(&self, v: &Var<S>) -> Tensor<S> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = v.shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

// ── Var operations ──────────────────────────────────────────────────────

impl<S: Scalar> Var<S> {
    pub fn value(&self) -> Tensor<S> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        let nodes = self.tape.nodes.borrow();
        nodes[self.id].value.shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn item(&self) -> S {
        self.value().item()
    }

    fn unary(&self, op: Op, value: Tensor<S>) -> Var<S> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var<S>, op: Op, value: Tensor<S>) -> Var<S> {
        assert!(
            self.tape.same_tape(&other.tape),
            "operands live on different tapes"
        );
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn matmul(&self, other: &Var<S>) -> Var<S> {
        let (ar, ac) = self.shape();
        let (br, bc) = other.shape();
        assert_eq!(ac, br, "matmul: {ar}x{ac} . {br}x{bc}");
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::new(nodes[self.id].value.array().dot(nodes[other.id].value.array()))
        };
        self.binary(other, Op::MatMul { a: self.id, b: other.id }, value)
    }

    pub fn add(&self, other: &Var<S>) -> Var<S> {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::new(nodes[self.id].value.array() + nodes[other.id].value.array())
        };
        self.binary(other, Op::Add { a: self.id, b: other.id }, value)
    }

    pub fn sub(&self, other: &Var<S>) -> Var<S> {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::new(nodes[self.id].value.array() - nodes[other.id].value.array())
        };
        self.binary(other, Op::Sub { a: self.id, b: other.id }, value)
    }

    pub fn mul(&self, other: &Var<S>) -> Var<S> {
        assert_eq!(self.shape(), other.shape(), "mul: shape mismatch");
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::new(nodes[self.id].value.array() * nodes[other.id].value.array())
        };
        self.binary(other, Op::Mul { a: self.id, b: other.id }, value)
    }

    /// `self + row` where `row` is `1 x C`, broadcast over rows.
    pub fn add_row(&self, row: &Var<S>) -> Var<S> {
        assert_eq!(row.rows(), 1, "add_row: rhs must be 1 x C");
        assert_eq!(self.cols(), row.cols(), "add_row: width mismatch");
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::new(nodes[self.id].value.array() + &nodes[row.id].value.array().row(0))
        };
        self.binary(row, Op::AddRow { a: self.id, row: row.id }, value)
    }

    /// `self + col` where `col` is `N x 1`, broadcast over columns.
    pub fn add_col(&self, col: &Var<S>) -> Var<S> {
        assert_eq!(col.cols(), 1, "add_col: rhs must be N x 1");
        assert_eq!(self.rows(), col.rows(), "add_col: height mismatch");
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::new(nodes[self.id].value.array() + &nodes[col.id].value.array().column(0).insert_axis(Axis(1)))
        };
        self.binary(col, Op::AddCol { a: self.id, col: col.id }, value)
    }

    pub fn sub_row(&self, row: &Var<S>) -> Var<S> {
        assert_eq!(row.rows(), 1, "sub_row: rhs must be 1 x C");
        assert_eq!(self.cols(), row.cols(), "sub_row: width mismatch");
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::new(nodes[self.id].value.array() - &nodes[row.id].value.array().row(0))
        };
        self.binary(row, Op::SubRow { a: self.id, row: row.id }, value)
    }

    pub fn sub_col(&self, col: &Var<S>) -> Var<S> {
        assert_eq!(col.cols(), 1, "sub_col: rhs must be N x 1");
        assert_eq!(self.rows(), col.rows(), "sub_col: height mismatch");
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::new(nodes[self.id].value.array() - &nodes[col.id].value.array().column(0).insert_axis(Axis(1)))
        };
        self.binary(col, Op::SubCol { a: self.id, col: col.id }, value)
    }

    /// Divide each row `i` by `col[i]`; `col` entries must be nonzero.
    pub fn div_col(&self, col: &Var<S>) -> Var<S> {
        assert_eq!(col.cols(), 1, "div_col: rhs must be N x 1");
        assert_eq!(self.rows(), col.rows(), "div_col: height mismatch");
        let value = {
            let nodes = self.tape.nodes.borrow();
            let c = nodes[col.id].value.array();
            assert!(
                c.iter().all(|x| *x != S::zero()),
                "div_col: zero divisor"
            );
            Tensor::new(nodes[self.id].value.array() / &c.column(0).insert_axis(Axis(1)))
        };
        self.binary(col, Op::DivCol { a: self.id, col: col.id }, value)
    }

    /// Multiply by a `1 x 1` tape value.
    pub fn mul_scalar(&self, s: &Var<S>) -> Var<S> {
        assert_eq!(s.shape(), (1, 1), "mul_scalar: rhs must be 1 x 1");
        let value = {
            let nodes = self.tape.nodes.borrow();
            let sv = nodes[s.id].value.item();
            nodes[self.id].value.map(|x| x * sv)
        };
        self.binary(s, Op::MulScalar { a: self.id, s: s.id }, value)
    }

    pub fn concat_rows(&self, other: &Var<S>) -> Var<S> {
        assert_eq!(self.cols(), other.cols(), "concat_rows: width mismatch");
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = nodes[self.id].value.array();
            let b = nodes[other.id].value.array();
            Tensor::new(ndarray::concatenate(Axis(0), &[a.view(), b.view()]).unwrap())
        };
        self.binary(other, Op::ConcatRows { a: self.id, b: other.id }, value)
    }

    pub fn concat_cols(&self, other: &Var<S>) -> Var<S> {
        assert_eq!(self.rows(), other.rows(), "concat_cols: height mismatch");
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = nodes[self.id].value.array();
            let b = nodes[other.id].value.array();
            let joined = ndarray::concatenate(Axis(1), &[a.view(), b.view()]).unwrap();
            Tensor::new(joined.as_standard_layout().to_owned())
        };
        self.binary(other, Op::ConcatCols { a: self.id, b: other.id }, value)
    }

    pub fn scale(&self, c: f64) -> Var<S> {
        let k = S::cast(c);
        let value = self.value().map(|x| x * k);
        self.unary(Op::Scale { a: self.id, c }, value)
    }

    pub fn pointwise(&self, f: Pointwise) -> Var<S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.array();
            match f {
                Pointwise::Relu => Tensor::new(x.mapv(|v| v.max(S::zero()))),
                Pointwise::Sine => Tensor::new(x.mapv(|v| v.sin())),
                Pointwise::Tanh => Tensor::new(x.mapv(|v| v.tanh())),
                Pointwise::Exp => Tensor::new(x.mapv(|v| v.exp())),
                Pointwise::Log => {
                    assert!(
                        x.iter().all(|v| *v > S::zero()),
                        "log of non-positive value"
                    );
                    Tensor::new(x.mapv(|v| v.ln()))
                }
                Pointwise::Sqrt => {
                    assert!(
                        x.iter().all(|v| *v >= S::zero()),
                        "sqrt of negative value"
                    );
                    Tensor::new(x.mapv(|v| v.sqrt()))
                }
            }
        };
        self.unary(Op::Pointwise { a: self.id, f }, value)
    }

    pub fn relu(&self) -> Var<S> {
        self.pointwise(Pointwise::Relu)
    }
    pub fn sin(&self) -> Var<S> {
        self.pointwise(Pointwise::Sine)
    }
    pub fn tanh(&self) -> Var<S> {
        self.pointwise(Pointwise::Tanh)
    }
    pub fn exp(&self) -> Var<S> {
        self.pointwise(Pointwise::Exp)
    }
    pub fn log(&self) -> Var<S> {
        self.pointwise(Pointwise::Log)
    }
    pub fn sqrt(&self) -> Var<S> {
        self.pointwise(Pointwise::Sqrt)
    }

    pub fn clamp_min(&self, c: f64) -> Var<S> {
        let k = S::cast(c);
        let value = self.value().map(|x| x.max(k));
        self.unary(Op::ClampMin { a: self.id, c }, value)
    }

    pub fn transpose(&self) -> Var<S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::new(nodes[self.id].value.array().t().as_standard_layout().to_owned())
        };
        self.unary(Op::Transpose { a: self.id }, value)
    }

    pub fn sum_all(&self) -> Var<S> {
        let value = Tensor::scalar(self.tape.nodes.borrow()[self.id].value.array().sum());
        self.unary(Op::SumAll { a: self.id }, value)
    }

    /// Sum along `axis` (0: over rows -> 1 x C; 1: over cols -> N x 1).
    pub fn sum_axis(&self, axis: usize) -> Var<S> {
        assert!(axis < 2, "axis must be 0 or 1");
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::new(sum_keep(nodes[self.id].value.array(), axis))
        };
        self.unary(Op::SumAxis { a: self.id, axis }, value)
    }

    pub fn mean_axis(&self, axis: usize) -> Var<S> {
        assert!(axis < 2, "axis must be 0 or 1");
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.array();
            let n = if axis == 0 { x.nrows() } else { x.ncols() };
            let w = S::one() / S::cast(n as f64);
            Tensor::new(sum_keep(x, axis).mapv(|v| v * w))
        };
        self.unary(Op::MeanAxis { a: self.id, axis }, value)
    }

    pub fn mean_all(&self) -> Var<S> {
        let n = self.rows() * self.cols();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Frobenius norm as a `1 x 1` value.
    pub fn l2_norm(&self) -> Var<S> {
        let value = Tensor::scalar(self.tape.nodes.borrow()[self.id].value.sq_norm().sqrt());
        self.unary(Op::L2Norm { a: self.id }, value)
    }

    /// Log-softmax of each row.
    pub fn row_softmax_log(&self) -> Var<S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.array();
            let mut y = x.clone();
            for mut row in y.axis_iter_mut(Axis(0)) {
                let lse = logsumexp(row.iter().copied());
                row.mapv_inplace(|v| v - lse);
            }
            Tensor::new(y)
        };
        self.unary(Op::RowSoftmaxLog { a: self.id }, value)
    }

    /// Log-sum-exp of each row -> `N x 1`.
    pub fn row_logsumexp(&self) -> Var<S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.array();
            let v: Vec<S> = x
                .axis_iter(Axis(0))
                .map(|row| logsumexp(row.iter().copied()))
                .collect();
            Tensor::from_vec(x.nrows(), 1, v)
        };
        self.unary(Op::RowLogSumExp { a: self.id }, value)
    }

    /// Log-sum-exp of each column -> `1 x C`.
    pub fn col_logsumexp(&self) -> Var<S> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.array();
            let v: Vec<S> = x
                .axis_iter(Axis(1))
                .map(|col| logsumexp(col.iter().copied()))
                .collect();
            Tensor::from_vec(1, x.ncols(), v)
        };
        self.unary(Op::ColLogSumExp { a: self.id }, value)
    }

    /// Mean over groups of `block` consecutive rows -> `(N/block) x C`.
    pub fn mean_pool_rows(&self, block: usize) -> Var<S> {
        let (n, c) = self.shape();
        assert!(block > 0 && n % block == 0, "mean_pool_rows: {n} rows, block {block}");
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.array();
            let w = S::one() / S::cast(block as f64);
            let mut y = Array2::zeros((n / block, c));
            for r in 0..n {
                for j in 0..c {
                    y[(r / block, j)] = y[(r / block, j)] + x[(r, j)] * w;
                }
            }
            Tensor::new(y)
        };
        self.unary(Op::MeanPoolRows { a: self.id, block }, value)
    }

    /// Mean over rows within each residue class mod `stride` -> `stride x C`.
    pub fn mean_pool_stride(&self, stride: usize) -> Var<S> {
        let (n, c) = self.shape();
        assert!(stride > 0 && n % stride == 0, "mean_pool_stride: {n} rows, stride {stride}");
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.array();
            let w = S::one() / S::cast((n / stride) as f64);
            let mut y = Array2::zeros((stride, c));
            for r in 0..n {
                for j in 0..c {
                    y[(r % stride, j)] = y[(r % stride, j)] + x[(r, j)] * w;
                }
            }
            Tensor::new(y)
        };
        self.unary(Op::MeanPoolStride { a: self.id, stride }, value)
    }

    /// Repeat each row `times` times -> `(N*times) x C`.
    pub fn expand_rows(&self, times: usize) -> Var<S> {
        assert!(times > 0);
        let (n, c) = self.shape();
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.array();
            let mut y = Array2::zeros((n * times, c));
            for r in 0..n * times {
                for j in 0..c {
                    y[(r, j)] = x[(r / times, j)];
                }
            }
            Tensor::new(y)
        };
        self.unary(Op::ExpandRows { a: self.id, times }, value)
    }

    /// Stack `times` copies of the whole matrix -> `(N*times) x C`.
    pub fn tile_rows(&self, times: usize) -> Var<S> {
        assert!(times > 0);
        let (n, c) = self.shape();
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.array();
            let mut y = Array2::zeros((n * times, c));
            for r in 0..n * times {
                for j in 0..c {
                    y[(r, j)] = x[(r % n, j)];
                }
            }
            Tensor::new(y)
        };
        self.unary(Op::TileRows { a: self.id, times }, value)
    }

    /// Identity in the forward pass, blocks the gradient in the backward.
    pub fn stop_grad(&self) -> Var<S> {
        let value = self.value();
        // Recorded but contributes nothing backward.
        self.tape.push(value, Op::StopGrad { a: self.id }, false)
    }

    pub fn tape(&self) -> &Tape<S> {
        &self.tape
    }
}

fn logsumexp<S: Scalar, I: Iterator<Item = S> + Clone>(it: I) -> S {
    let m = it.clone().fold(S::neg_infinity(), |a, b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    let s: S = it.map(|v| (v - m).exp()).sum();
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_example() {
        let tape: Tape<f64> = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = tape.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]));
        let c = a.matmul(&b);
        assert_eq!(c.value().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn relu_example() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![-1.0, 0.0, 2.0]]));
        assert_eq!(x.relu().value().as_slice(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn l2_norm_example() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0]]));
        assert_eq!(x.l2_norm().item(), 5.0);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]));
        let loss = x.mul(&x).sum_all();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.of(&x).as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]));
        let c = tape.constant(Tensor::scalar(5.0));
        let loss = c.scale(1.0);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.of(&x).as_slice(), &[0.0, 0.0]);
        assert!(grads.get(&x).is_none(), "disconnected leaf has no entry");
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]));
        assert!(matches!(
            tape.backward(&x),
            Err(TapeError::LossNotScalar(1, 2))
        ));
    }

    #[test]
    fn backward_rejects_non_finite_loss() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0));
        // exp(large) overflows to inf
        let loss = x.scale(1e10).exp().scale(1e308).mul(&x.scale(1e10).exp().scale(1e308));
        let loss = loss.scale(-1.0).clamp_min(f64::NEG_INFINITY).sum_all();
        if !loss.item().is_finite() {
            assert!(matches!(tape.backward(&loss), Err(TapeError::NonFiniteLoss(_))));
        }
    }

    #[test]
    #[should_panic(expected = "matmul")]
    fn matmul_shape_mismatch_panics() {
        let tape: Tape<f64> = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let _ = a.matmul(&b);
    }

    #[test]
    #[should_panic(expected = "log of non-positive")]
    fn log_domain_panics() {
        let tape: Tape<f64> = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, -1.0]]));
        let _ = a.log();
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let tape: Tape<f64> = Tape::new();
            let a = tape.constant(Tensor::from_rows(&[
                vec![0.1234567891234, -2.5, 3.7],
                vec![1.0 / 3.0, 2.0 / 7.0, -0.9],
            ]));
            let b = a.matmul(&a.transpose()).tanh().row_softmax_log().sum_all();
            b.item().to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn aliased_inputs_accumulate_both_sides() {
        // d/dx of x*x must be 2x even though both operands are the same node
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let loss = x.mul(&x).sum_all();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.of(&x).item(), 6.0);
    }

    #[test]
    fn stop_grad_blocks() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let loss = x.stop_grad().mul(&x).sum_all();
        let grads = tape.backward(&loss).unwrap();
        // only the non-stopped path contributes: d/dx (c * x) = c = 3
        assert_eq!(grads.of(&x).item(), 3.0);
    }
}
