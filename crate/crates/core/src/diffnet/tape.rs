//! Reverse-mode differentiation over batched matrix operations.
//!
//! A [`Tape`] records every operation of a forward computation. Values are
//! matrices whose rows are batch items. [`Tape::backward`] walks the record in
//! reverse and accumulates adjoints; parameter leaves bound with
//! [`Tape::bind`] are read back into [`ParamSet`]-shaped gradients.

use super::{Activation, Dense, Matrix, ParamSet};
use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// `a * b^T`
    MatMulNT(Var, Var),
    /// `a + 1 b` for a row vector `b`
    AddRow(Var, Var),
    Act(Var, Activation),
    Concat(Vec<Var>),
    RepeatRows(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Square(Var),
    Abs(Var),
    Mean(Var),
    Scale(Var, f64),
    /// Mean softmax cross-entropy; `aux` holds the softmax probabilities.
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
    aux: Option<Matrix>,
}

/// Tape handles for one bound network: `(weight, bias, activation)` per layer.
#[derive(Clone, Debug)]
pub struct NetVars {
    layers: Vec<(Var, Var, Activation)>,
}

impl NetVars {
    pub fn input_dim(&self, tape: &Tape) -> usize {
        self.layers.first().map_or(0, |&(w, _, _)| tape.value(w).cols)
    }
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    exec: Exec,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new(Exec::default())
    }
}

impl Tape {
    pub fn new(exec: Exec) -> Self {
        Tape { nodes: Vec::new(), exec }
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad, aux: None });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    fn param(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Places a network's parameters on the tape as differentiable leaves.
    pub fn bind(&mut self, p: &ParamSet) -> NetVars {
        let layers = p
            .layers
            .iter()
            .map(|l| {
                let w = self.param(l.weight.clone());
                let b = self.param(Matrix::row_vector(&l.bias));
                (w, b, l.activation)
            })
            .collect();
        NetVars { layers }
    }

    /// Applies a bound network to the rows of `x`.
    pub fn forward(&mut self, net: &NetVars, x: Var) -> Result<Var> {
        let mut h = x;
        for &(w, b, act) in &net.layers {
            if self.value(h).cols != self.value(w).cols {
                return Err(Error::param(format!(
                    "layer expects {} inputs, got {}",
                    self.value(w).cols,
                    self.value(h).cols
                )));
            }
            let z = self.matmul_nt(h, w);
            let z = self.add_row(z, b);
            h = self.act(z, act);
        }
        Ok(h)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b), self.exec);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMulNT(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        let bias = self.value(b);
        assert_eq!(bias.rows, 1, "add_row needs a row vector");
        for row in v.data.chunks_mut(v.cols.max(1)) {
            row.iter_mut().zip(&bias.data).for_each(|(x, y)| *x += y);
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::AddRow(a, b), ng)
    }

    pub fn act(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        let v = self.value(a).map(|x| act.apply(x));
        let ng = self.needs(a);
        self.push(v, Op::Act(a, act), ng)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        assert!(parts.iter().all(|&p| self.value(p).rows == rows), "concat row mismatch");
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Matrix { rows, cols, data }, Op::Concat(parts.to_vec()), ng)
    }

    /// Repeats each row `k` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Var {
        let src = self.value(a);
        let mut data = Vec::with_capacity(src.data.len() * k);
        for i in 0..src.rows {
            for _ in 0..k {
                data.extend_from_slice(src.row(i));
            }
        }
        let v = Matrix { rows: src.rows * k, cols: src.cols, data };
        let ng = self.needs(a);
        self.push(v, Op::RepeatRows(a, k), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let ng = self.needs(a);
        self.push(v, Op::Square(a), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        let ng = self.needs(a);
        self.push(v, Op::Abs(a), ng)
    }

    /// Mean of every entry, as a `1 x 1` matrix.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = m.data.iter().sum::<f64>() / m.data.len() as f64;
        let ng = self.needs(a);
        self.push(Matrix::scalar(v), Op::Mean(a), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        let ng = self.needs(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    /// Mean over rows of `logsumexp(logits_i) - logits_i[label_i]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if labels.len() != z.rows {
            return Err(Error::param(format!("{} labels for {} rows", labels.len(), z.rows)));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= z.cols) {
            return Err(Error::param(format!("label {l} out of range for {} classes", z.cols)));
        }
        let mut probs = Matrix::zeros(z.rows, z.cols);
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = z.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[label];
            for (p, v) in probs.data[i * z.cols..(i + 1) * z.cols].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let v = Matrix::scalar(total / z.rows as f64);
        let ng = self.needs(logits);
        let out = self.push(v, Op::CrossEntropy(logits, labels.to_vec()), ng);
        self.nodes[out.0].aux = Some(probs);
        Ok(out)
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.data.len() != 1 {
            return Err(Error::param("backward needs a scalar loss"));
        }
        if !lv.data[0].is_finite() {
            return Err(Error::Numeric(format!("loss is {}", lv.data[0])));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMulNT(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.matmul_nn(self.value(*b), self.exec));
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g.matmul_tn(self.value(*a), self.exec));
                    }
                }
                Op::AddRow(a, b) => {
                    if self.needs(*b) {
                        let mut colsum = Matrix::zeros(1, g.cols);
                        for row in g.data.chunks(g.cols.max(1)) {
                            colsum.data.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                        }
                        acc(&mut grads, *b, colsum);
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Act(a, act) => {
                    let d = g.zip_map(&node.value, |gi, y| gi * act.derivative_from_output(y));
                    acc(&mut grads, *a, d);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        if self.needs(p) {
                            let mut part = Matrix::zeros(g.rows, cols);
                            for i in 0..g.rows {
                                part.data[i * cols..(i + 1) * cols].copy_from_slice(&g.row(i)[offset..offset + cols]);
                            }
                            acc(&mut grads, p, part);
                        }
                        offset += cols;
                    }
                }
                Op::RepeatRows(a, k) => {
                    let src = self.value(*a);
                    let mut back = Matrix::zeros(src.rows, src.cols);
                    for i in 0..src.rows {
                        let dst = &mut back.data[i * src.cols..(i + 1) * src.cols];
                        for r in 0..*k {
                            dst.iter_mut().zip(g.row(i * k + r)).for_each(|(d, v)| *d += v);
                        }
                    }
                    acc(&mut grads, *a, back);
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        acc(&mut grads, *b, g.map(|v| -v));
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Square(a) => {
                    let d = g.zip_map(self.value(*a), |gi, x| 2.0 * x * gi);
                    acc(&mut grads, *a, d);
                }
                Op::Abs(a) => {
                    let d = g.zip_map(self.value(*a), |gi, x| gi * x.signum() * f64::from(x != 0.0));
                    acc(&mut grads, *a, d);
                }
                Op::Mean(a) => {
                    let src = self.value(*a);
                    let share = g.data[0] / src.data.len() as f64;
                    acc(&mut grads, *a, Matrix { rows: src.rows, cols: src.cols, data: vec![share; src.data.len()] });
                }
                Op::Scale(a, c) => {
                    acc(&mut grads, *a, g.map(|v| c * v));
                }
                Op::CrossEntropy(a, labels) => {
                    let probs = node.aux.as_ref().expect("softmax cached");
                    let n = labels.len() as f64;
                    let mut d = probs.map(|p| p * g.data[0] / n);
                    for (i, &l) in labels.iter().enumerate() {
                        d.data[i * d.cols + l] -= g.data[0] / n;
                    }
                    acc(&mut grads, *a, d);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for a bound network, shaped like its [`ParamSet`]. Parameters
    /// the loss does not depend on get zeros.
    pub fn param_set(&self, net: &NetVars, tape: &Tape) -> ParamSet {
        let layers = net
            .layers
            .iter()
            .map(|&(w, b, activation)| {
                let wv = tape.value(w);
                Dense {
                    weight: self.of(w).cloned().unwrap_or_else(|| Matrix::zeros(wv.rows, wv.cols)),
                    bias: self.of(b).map(|m| m.data.clone()).unwrap_or_else(|| vec![0.0; tape.value(b).cols]),
                    activation,
                }
            })
            .collect();
        ParamSet { layers }
    }
}

/// Evaluates a scalar loss built by `loss` over the given networks and returns
/// its value with exact reverse-mode gradients for every network.
pub fn grad<F>(params: &[&ParamSet], loss: F) -> Result<(f64, Vec<ParamSet>)>
where
    F: FnOnce(&mut Tape, &[NetVars]) -> Result<Var>,
{
    grad_with(Exec::default(), params, loss)
}

pub fn grad_with<F>(exec: Exec, params: &[&ParamSet], loss: F) -> Result<(f64, Vec<ParamSet>)>
where
    F: FnOnce(&mut Tape, &[NetVars]) -> Result<Var>,
{
    let mut tape = Tape::new(exec);
    let nets: Vec<NetVars> = params.iter().map(|p| tape.bind(p)).collect();
    let out = loss(&mut tape, &nets)?;
    let value = tape.scalar(out);
    let grads = tape.backward(out)?;
    Ok((value, nets.iter().map(|n| grads.param_set(n, &tape)).collect()))
}

/// Loss value only; builds the same graph without a backward pass.
pub fn eval<F>(params: &[&ParamSet], loss: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &[NetVars]) -> Result<Var>,
{
    let mut tape = Tape::default();
    let nets: Vec<NetVars> = params.iter().map(|p| tape.bind(p)).collect();
    let out = loss(&mut tape, &nets)?;
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    Ok(value)
}
