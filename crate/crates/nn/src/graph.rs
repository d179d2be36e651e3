//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! node list is already topologically sorted and the backward pass is a
//! single reverse sweep. Parameter leaves borrow their values from a
//! [`ParamStore`] instead of copying them.

use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{matmul_at_into, matmul_bt_into, Tensor};

/// Lower/upper clamp applied to probabilities inside the BCE loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Vec<(Var, usize)>),
    Sum(Var),
    Mean(Var),
    Bce(Var, Vec<f64>),
}

struct Node {
    op: Op,
    // `None` for parameter leaves; their value lives in the store.
    value: Option<Tensor>,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NnError::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let n = ta.cols();
        if tr.len() != n {
            return Err(NnError::shape("add_row", ta.shape(), tr.shape()));
        }
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (x, r) in chunk.iter_mut().zip(tr.data()) {
                *x += r;
            }
        }
        let out = Tensor::new(vec![ta.rows(), n], data)?;
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        self.push(Op::OneMinus(a), out)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), out)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(NnError::EmptySequence),
        };
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(NnError::shape("concat_cols", &[rows], t.shape()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Builds a matrix whose `i`-th row is row `sources[i].1` of node
    /// `sources[i].0`. Covers slicing, stacking and permuting rows.
    pub fn gather_rows(&mut self, sources: &[(Var, usize)]) -> Result<Var> {
        let cols = match sources.first() {
            Some(&(v, _)) => self.value(v).cols(),
            None => return Err(NnError::EmptySequence),
        };
        let mut data = Vec::with_capacity(sources.len() * cols);
        for &(v, r) in sources {
            let t = self.value(v);
            if t.cols() != cols || r >= t.rows() {
                return Err(NnError::shape("gather_rows", &[r, cols], t.shape()));
            }
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor::new(vec![sources.len(), cols], data)?;
        Ok(self.push(Op::GatherRows(sources.to_vec()), out))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    /// Mean binary cross-entropy of probabilities `pred` (`m x 1`) against
    /// `targets` in `[0, 1]`. Probabilities are clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(pred);
        if t.len() != targets.len() || targets.is_empty() {
            return Err(NnError::shape("bce", t.shape(), &[targets.len()]));
        }
        let loss = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| bce_term(p, y))
            .sum::<f64>()
            / targets.len() as f64;
        Ok(self.push(Op::Bce(pred, targets.to_vec()), Tensor::scalar(loss)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_val = self.value(loss);
        if !loss_val.is_scalar() {
            return Err(NnError::NonScalarLoss(loss_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_val.shape(), 1.0));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = self.value(Var(idx));
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.get_mut(*id).add_assign(&g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    self.accumulate(&mut grads, *a, |ga| {
                        matmul_bt_into(g.data(), tb.data(), ga, m, k, n)
                    });
                    self.accumulate(&mut grads, *b, |gb| {
                        matmul_at_into(ta.data(), g.data(), gb, m, k, n)
                    });
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, |ga| add_into(ga, g.data()));
                    self.accumulate(&mut grads, *b, |gb| add_into(gb, g.data()));
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, |ga| add_into(ga, g.data()));
                    self.accumulate(&mut grads, *b, |gb| {
                        for (x, d) in gb.iter_mut().zip(g.data()) {
                            *x -= d;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    self.accumulate(&mut grads, *a, |ga| {
                        for ((x, d), w) in ga.iter_mut().zip(g.data()).zip(tb.data()) {
                            *x += d * w;
                        }
                    });
                    self.accumulate(&mut grads, *b, |gb| {
                        for ((x, d), w) in gb.iter_mut().zip(g.data()).zip(ta.data()) {
                            *x += d * w;
                        }
                    });
                }
                Op::AddRow(a, row) => {
                    let n = g.cols();
                    self.accumulate(&mut grads, *a, |ga| add_into(ga, g.data()));
                    self.accumulate(&mut grads, *row, |gr| {
                        for chunk in g.data().chunks(n.max(1)) {
                            add_into(gr, chunk);
                        }
                    });
                }
                Op::OneMinus(a) => self.accumulate(&mut grads, *a, |ga| {
                    for (x, d) in ga.iter_mut().zip(g.data()) {
                        *x -= d;
                    }
                }),
                Op::Scale(a, f) => self.accumulate(&mut grads, *a, |ga| {
                    for (x, d) in ga.iter_mut().zip(g.data()) {
                        *x += d * f;
                    }
                }),
                Op::Sigmoid(a) => self.accumulate(&mut grads, *a, |ga| {
                    for ((x, d), s) in ga.iter_mut().zip(g.data()).zip(y.data()) {
                        *x += d * s * (1.0 - s);
                    }
                }),
                Op::Tanh(a) => self.accumulate(&mut grads, *a, |ga| {
                    for ((x, d), t) in ga.iter_mut().zip(g.data()).zip(y.data()) {
                        *x += d * (1.0 - t * t);
                    }
                }),
                Op::Relu(a) => self.accumulate(&mut grads, *a, |ga| {
                    for ((x, d), r) in ga.iter_mut().zip(g.data()).zip(y.data()) {
                        if *r > 0.0 {
                            *x += d;
                        }
                    }
                }),
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        self.accumulate(&mut grads, p, |gp| {
                            for (r, dst) in gp.chunks_mut(w.max(1)).enumerate() {
                                let src = &g.data()[r * total + offset..r * total + offset + w];
                                add_into(dst, src);
                            }
                        });
                        offset += w;
                    }
                }
                Op::GatherRows(sources) => {
                    let cols = g.cols();
                    for (i, &(v, r)) in sources.iter().enumerate() {
                        let src = &g.data()[i * cols..(i + 1) * cols];
                        self.accumulate(&mut grads, v, |gv| {
                            add_into(&mut gv[r * cols..(r + 1) * cols], src)
                        });
                    }
                }
                Op::Sum(a) => {
                    let d = g.data()[0];
                    self.accumulate(&mut grads, *a, |ga| ga.iter_mut().for_each(|x| *x += d));
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len().max(1) as f64;
                    let d = g.data()[0] / n;
                    self.accumulate(&mut grads, *a, |ga| ga.iter_mut().for_each(|x| *x += d));
                }
                Op::Bce(pred, targets) => {
                    let n = targets.len() as f64;
                    let d = g.data()[0] / n;
                    let tp = self.value(*pred);
                    self.accumulate(&mut grads, *pred, |gp| {
                        for ((x, &p), &t) in gp.iter_mut().zip(tp.data()).zip(targets) {
                            *x += d * bce_grad(p, t);
                        }
                    });
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        if let Some(t) = slot.as_mut() {
            f(t.data_mut());
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (x, d) in dst.iter_mut().zip(src) {
        *x += d;
    }
}

/// Per-sample BCE with clamping, `-[y ln p + (1 - y) ln(1 - p)]`.
pub fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn bce_grad(p: f64, y: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    -(y / p) + (1.0 - y) / (1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[&[f64]]) -> (ParamStore, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = values
            .iter()
            .enumerate()
            .map(|(i, v)| store.add(format!("p{i}"), Tensor::row_vector(v.to_vec())))
            .collect();
        (store, ids)
    }

    #[test]
    fn sum_of_parameters_has_unit_gradients() {
        let (store, ids) = store_with(&[&[1.0, -2.0, 3.0], &[0.5]]);
        let mut g = Graph::new(&store);
        let a = g.param(ids[0]);
        let b = g.param(ids[1]);
        let sa = g.sum(a);
        let sb = g.sum(b);
        let loss = g.add(sa, sb).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(ids[0]).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(grads.get(ids[1]).data(), &[1.0]);
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let (store, ids) = store_with(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mut g = Graph::new(&store);
        let a = g.param(ids[0]);
        let t = g.tanh(a);
        let loss = g.sum(t);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(ids[1]).data().iter().all(|&x| x == 0.0));
        assert!(grads.get(ids[0]).data().iter().all(|&x| x != 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (store, ids) = store_with(&[&[1.0, 2.0]]);
        let mut g = Graph::new(&store);
        let a = g.param(ids[0]);
        assert!(matches!(g.backward(a), Err(NnError::NonScalarLoss(_))));
    }

    #[test]
    fn bce_closed_forms() {
        assert!((bce_term(0.5, 1.0) - 2f64.ln()).abs() < 1e-12);
        assert!(bce_term(1.0, 1.0) < 1e-6);
        assert!((bce_term(0.9, 0.0) - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn bce_batch_is_mean() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let p = g.constant(Tensor::new(vec![2, 1], vec![0.5, 0.9]).unwrap());
        let l = g.bce(p, &[1.0, 0.0]).unwrap();
        let expected = (2f64.ln() + 10f64.ln()) / 2.0;
        assert!((g.value(l).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_errors() {
        let (store, ids) = store_with(&[&[1.0, 2.0], &[3.0]]);
        let mut g = Graph::new(&store);
        let a = g.param(ids[0]);
        let b = g.param(ids[1]);
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
    }
}
