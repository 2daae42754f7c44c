//! Tape-based reverse-mode differentiation over matrices.
//!
//! A [`Tape`] records the forward pass of one loss evaluation. Parameter
//! leaves read their values from a [`ParamVector`]; [`Tape::backward`]
//! walks the recording in reverse and accumulates derivatives into a
//! [`Gradient`] with the same layout. Only the handful of operations the
//! world model needs are supported.

use std::collections::HashMap;

use super::matrix::{log_softmax, softmax, Matrix};
use super::params::{Gradient, ParamVector};
use crate::error::{Error, Result};

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param { offset: usize },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    ScaleGrad(Var, f64),
    LinearCombination(Vec<(Var, f64)>),
    /// `scale · Σ_b w_b Σ_j (pred_bj − target_bj)²`
    SquaredError {
        pred: Var,
        target: Matrix,
        weights: Vec<f64>,
        scale: f64,
    },
    /// `scale · Σ_b w_b Σ_j −target_bj · log softmax(logits_b)_j`
    CrossEntropy {
        logits: Var,
        target: Matrix,
        weights: Vec<f64>,
        scale: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamVector,
    nodes: Vec<Node>,
    param_vars: HashMap<(usize, usize, usize), Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamVector) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Constant)
    }

    /// A `rows × cols` parameter block starting at `offset`. Repeated requests
    /// for the same block return the same node.
    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> Var {
        if let Some(&v) = self.param_vars.get(&(offset, rows, cols)) {
            return v;
        }
        let data = self.params.values()[offset..offset + rows * cols].to_vec();
        let m = Matrix::from_vec(rows, cols, data).expect("parameter block in range");
        let v = self.push(m, Op::Param { offset });
        self.param_vars.insert((offset, rows, cols), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// Adds a `1 × n` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let mut value = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..value.rows() {
            for (x, bv) in value.row_mut(r).iter_mut().zip(&b) {
                *x += bv;
            }
        }
        self.push(value, Op::AddBias(a, bias))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut value = Matrix::zeros(src.rows(), src.cols());
        for r in 0..src.rows() {
            value.row_mut(r).copy_from_slice(&softmax(src.row(r)));
        }
        self.push(value, Op::Softmax(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_cols(&mats);
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// Columns `[start, end)` of `a`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_cols(start, end);
        self.push(value, Op::Slice { input: a, start })
    }

    /// Identity in the forward pass; multiplies the incoming derivative by
    /// `factor` in the backward pass.
    pub fn scale_grad(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::ScaleGrad(a, factor))
    }

    /// `Σ coeff · var` over same-shaped nodes.
    pub fn linear_combination(&mut self, terms: &[(Var, f64)]) -> Var {
        let first = self.value(terms[0].0);
        let mut value = Matrix::zeros(first.rows(), first.cols());
        for &(v, c) in terms {
            for (o, x) in value.data_mut().iter_mut().zip(self.value(v).data()) {
                *o += c * x;
            }
        }
        self.push(value, Op::LinearCombination(terms.to_vec()))
    }

    pub fn squared_error(&mut self, pred: Var, target: Matrix, weights: &[f64], scale: f64) -> Var {
        let p = self.value(pred);
        assert_eq!((p.rows(), p.cols()), (target.rows(), target.cols()));
        assert_eq!(weights.len(), p.rows());
        let mut total = 0.0;
        for (r, w) in weights.iter().enumerate() {
            let se: f64 = p
                .row(r)
                .iter()
                .zip(target.row(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += w * se;
        }
        let value = Matrix::row_vector(&[scale * total]);
        self.push(
            value,
            Op::SquaredError {
                pred,
                target,
                weights: weights.to_vec(),
                scale,
            },
        )
    }

    pub fn cross_entropy(&mut self, logits: Var, target: Matrix, weights: &[f64], scale: f64) -> Var {
        let l = self.value(logits);
        assert_eq!((l.rows(), l.cols()), (target.rows(), target.cols()));
        assert_eq!(weights.len(), l.rows());
        let mut total = 0.0;
        for (r, w) in weights.iter().enumerate() {
            let lp = log_softmax(l.row(r));
            let ce: f64 = -lp.iter().zip(target.row(r)).map(|(a, t)| t * a).sum::<f64>();
            total += w * ce;
        }
        let value = Matrix::row_vector(&[scale * total]);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                target,
                weights: weights.to_vec(),
                scale,
            },
        )
    }

    /// Derivative of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradient> {
        let out = self.value(loss);
        if out.rows() != 1 || out.cols() != 1 {
            return Err(Error::Config("backward needs a 1x1 loss node".into()));
        }
        if !out.get(0, 0).is_finite() {
            return Err(Error::Numeric("loss".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::row_vector(&[1.0]));
        let mut gradient = Gradient::zeros(self.params.layout().clone());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    let dst = &mut gradient.values_mut()[*offset..*offset + g.data().len()];
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.needs_grad(*a) {
                        let da = g.matmul_transposed_slice(bv.data(), bv.rows());
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs_grad(*b) {
                        let mut db = Matrix::zeros(bv.rows(), bv.cols());
                        av.transposed_matmul_into(&g, db.data_mut());
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddBias(a, bias) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, s) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let mut da = g;
                    for (d, y) in da.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let mut da = g;
                    for (d, y) in da.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (j, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d = yr[j] * (gr[j] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.needs_grad(p) {
                            accumulate(&mut grads, p, g.slice_cols(start, start + w));
                        }
                        start += w;
                    }
                }
                Op::Slice { input, start } => {
                    let src = self.value(*input);
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *input, da);
                }
                Op::ScaleGrad(a, factor) => {
                    accumulate(&mut grads, *a, g.map(|x| x * factor));
                }
                Op::LinearCombination(terms) => {
                    for &(v, c) in terms {
                        accumulate(&mut grads, v, g.map(|x| x * c));
                    }
                }
                Op::SquaredError {
                    pred,
                    target,
                    weights,
                    scale,
                } => {
                    let upstream = g.get(0, 0);
                    let p = self.value(*pred);
                    let mut dp = Matrix::zeros(p.rows(), p.cols());
                    for (r, w) in weights.iter().enumerate() {
                        let k = 2.0 * scale * w * upstream;
                        for ((d, a), b) in dp.row_mut(r).iter_mut().zip(p.row(r)).zip(target.row(r)) {
                            *d = k * (a - b);
                        }
                    }
                    accumulate(&mut grads, *pred, dp);
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    weights,
                    scale,
                } => {
                    let upstream = g.get(0, 0);
                    let l = self.value(*logits);
                    let mut dl = Matrix::zeros(l.rows(), l.cols());
                    for (r, w) in weights.iter().enumerate() {
                        let p = softmax(l.row(r));
                        let t = target.row(r);
                        let mass: f64 = t.iter().sum();
                        let k = scale * w * upstream;
                        for (j, d) in dl.row_mut(r).iter_mut().enumerate() {
                            *d = k * (mass * p[j] - t[j]);
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        gradient.check_finite()?;
        Ok(gradient)
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Layout;

    fn single(name: &str, shape: &[usize], values: Vec<f64>) -> ParamVector {
        let mut b = Layout::builder();
        b.push(name, shape);
        ParamVector::from_values(b.build(), values).unwrap()
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        // loss = θ·x
        let params = single("theta", &[3, 1], vec![0.3, -1.0, 2.0]);
        let mut tape = Tape::new(&params);
        let x = tape.constant(Matrix::row_vector(&[4.0, 5.0, -6.0]));
        let w = tape.param(0, 3, 1);
        let loss = tape.matmul(x, w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.values(), &[4.0, 5.0, -6.0]);
    }

    #[test]
    fn squared_norm_gradient_is_twice_theta() {
        let theta = vec![1.5, -0.25, 3.0];
        let params = single("theta", &[1, 3], theta.clone());
        let mut tape = Tape::new(&params);
        let w = tape.param(0, 1, 3);
        let loss = tape.squared_error(w, Matrix::zeros(1, 3), &[1.0], 1.0);
        assert!((tape.scalar(loss) - (2.25 + 0.0625 + 9.0)).abs() < 1e-15);
        let g = tape.backward(loss).unwrap();
        let expect: Vec<f64> = theta.iter().map(|t| 2.0 * t).collect();
        assert_eq!(g.values(), expect.as_slice());
    }

    #[test]
    fn scale_grad_is_forward_identity() {
        let params = single("theta", &[1, 2], vec![1.0, 2.0]);
        let mut tape = Tape::new(&params);
        let w = tape.param(0, 1, 2);
        let s = tape.scale_grad(w, 0.5);
        assert_eq!(tape.value(s), tape.value(w));
        let loss = tape.squared_error(s, Matrix::zeros(1, 2), &[1.0], 1.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.values(), &[1.0, 2.0]);
    }

    #[test]
    fn reused_param_accumulates() {
        // loss = (θ + θ)·1 via two matmuls sharing the same leaf
        let params = single("theta", &[1, 1], vec![3.0]);
        let mut tape = Tape::new(&params);
        let one = tape.constant(Matrix::row_vector(&[1.0]));
        let w1 = tape.param(0, 1, 1);
        let w2 = tape.param(0, 1, 1);
        assert_eq!(w1, w2);
        let a = tape.matmul(one, w1);
        let b = tape.matmul(one, w2);
        let loss = tape.linear_combination(&[(a, 1.0), (b, 1.0)]);
        assert_eq!(tape.backward(loss).unwrap().values(), &[2.0]);
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let params = single("theta", &[1, 1], vec![f64::INFINITY]);
        let mut tape = Tape::new(&params);
        let w = tape.param(0, 1, 1);
        let loss = tape.squared_error(w, Matrix::zeros(1, 1), &[1.0], 1.0);
        assert!(matches!(tape.backward(loss), Err(Error::Numeric(_))));
    }
}
