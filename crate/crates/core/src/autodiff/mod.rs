//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only tape. Every operation evaluates eagerly and
//! records what its backward pass needs; [`Graph::backward`] walks the tape
//! in reverse from a scalar. Only the operations the regressor uses are
//! provided: 1D convolution, LSTM layers, dense layers, ReLU, reshapes,
//! MSE and an L1 penalty, plus a few scalar helpers.

pub mod checkpoint;
mod conv;
mod linalg;
mod lstm;
mod tensor;

pub use checkpoint::{read_tensors, write_tensors};
pub use lstm::{LstmParams, GATES};
pub use tensor::Tensor;

use conv::ConvDims;
use linalg::{matvec_acc, matvec_t_acc, outer_acc};
use lstm::LstmCache;

use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Graph handles for one LSTM layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        kernels: Var,
        bias: Var,
        dims: ConvDims,
        padded: Vec<f64>,
    },
    Relu(Var),
    Transpose(Var),
    Reshape(Var),
    Lstm {
        seq: Var,
        params: LstmVars,
        cache: LstmCache,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat(Vec<Var>),
    Mse {
        pred: Var,
        target: Var,
    },
    L1(Vec<Var>),
    Add(Var, Var),
    Scale(Var, f64),
    Square(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), true, Op::Leaf)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), false, Op::Leaf)
    }

    /// Constant leaf taking ownership of its values.
    pub fn constant_from(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != values.len() || shape.contains(&0) {
            return Err(shape_err(format!(
                "shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        Ok(self.push(shape, values, false, Op::Leaf))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    /// Gradient of the last [`Graph::backward`] root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Value and gradient packaged as a [`Tensor`].
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        let mut t = Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape");
        if let Some(g) = self.grad(v) {
            t.set_grad(g.to_vec()).expect("grad shape");
        }
        t
    }

    /// Stride-1 convolution of `x` (`C_in × L`) with `kernels`
    /// (`C_out × C_in × W`) and `bias` (`C_out`); zero padding with
    /// `pad_left + pad_right = W − 1` keeps the output at `C_out × L`.
    pub fn conv1d(
        &mut self,
        x: Var,
        kernels: Var,
        bias: Var,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Var> {
        let (xs, ks, bs) = (self.shape(x), self.shape(kernels), self.shape(bias));
        if xs.len() != 2 || ks.len() != 3 || bs.len() != 1 {
            return Err(shape_err(format!(
                "conv1d expects x C_in×L, kernels C_out×C_in×W, bias C_out; got {xs:?}, {ks:?}, {bs:?}"
            )));
        }
        let dims = ConvDims {
            c_in: xs[0],
            len: xs[1],
            c_out: ks[0],
            width: ks[2],
            pad_left,
        };
        if ks[1] != dims.c_in || bs[0] != dims.c_out {
            return Err(shape_err(format!(
                "conv1d channel mismatch: x {xs:?}, kernels {ks:?}, bias {bs:?}"
            )));
        }
        if pad_left + pad_right + 1 != dims.width {
            return Err(shape_err(format!(
                "padding ({pad_left}, {pad_right}) must total kernel width − 1 = {}",
                dims.width - 1
            )));
        }
        let padded = conv::pad_input(self.value(x), dims);
        let out = conv::forward(&padded, self.value(kernels), self.value(bias), dims);
        let rg = self.rg(&[x, kernels, bias]);
        Ok(self.push(
            vec![dims.c_out, dims.len],
            out,
            rg,
            Op::Conv1d {
                x,
                kernels,
                bias,
                dims,
                padded,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(shape, value, rg, Op::Relu(x))
    }

    /// Transpose of a 2D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(shape_err(format!("transpose expects 2D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(x);
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![c, r], value, rg, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() || shape.contains(&0) {
            return Err(shape_err(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape(x)
            )));
        }
        let value = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape.to_vec(), value, rg, Op::Reshape(x)))
    }

    pub fn flatten(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        self.reshape(x, &[n]).expect("flatten preserves size")
    }

    /// LSTM over the rows of `seq` (`T × D`) from zero initial state,
    /// returning all hidden states (`T × H`).
    pub fn lstm(&mut self, seq: Var, params: LstmVars) -> Result<Var> {
        let (ss, ws, us, bs) = (
            self.shape(seq),
            self.shape(params.w),
            self.shape(params.u),
            self.shape(params.b),
        );
        if ss.len() != 2 || ws.len() != 2 || us.len() != 2 || bs.len() != 1 {
            return Err(shape_err(format!(
                "lstm expects seq T×D, W 4H×D, U 4H×H, b 4H; got {ss:?}, {ws:?}, {us:?}, {bs:?}"
            )));
        }
        let (steps, d, hidden) = (ss[0], ss[1], us[1]);
        if us[0] != 4 * hidden || ws[0] != 4 * hidden || ws[1] != d || bs[0] != 4 * hidden {
            return Err(shape_err(format!(
                "lstm parameter mismatch: seq {ss:?}, W {ws:?}, U {us:?}, b {bs:?}"
            )));
        }
        let (hs, cache) = lstm::forward(
            self.value(seq),
            steps,
            self.value(params.w),
            self.value(params.u),
            self.value(params.b),
            hidden,
        );
        let rg = self.rg(&[seq, params.w, params.u, params.b]);
        Ok(self.push(vec![steps, hidden], hs, rg, Op::Lstm { seq, params, cache }))
    }

    /// Affine map `W x + b` of a flattened `x` with `W` (`D_out × D_in`).
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ws, bs) = (self.shape(w), self.shape(b));
        let d_in = self.value(x).len();
        if ws.len() != 2 || bs.len() != 1 || ws[1] != d_in || ws[0] != bs[0] {
            return Err(shape_err(format!(
                "dense expects W D_out×{d_in}, b D_out; got {ws:?}, {bs:?}"
            )));
        }
        let mut y = self.value(b).to_vec();
        matvec_acc(self.value(w), self.value(x), &mut y);
        let rg = self.rg(&[x, w, b]);
        let d_out = y.len();
        Ok(self.push(vec![d_out], y, rg, Op::Dense { x, w, b }))
    }

    /// Concatenates flattened inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let value: Vec<f64> = parts
            .iter()
            .flat_map(|p| self.value(*p).iter().copied())
            .collect();
        let rg = self.rg(parts);
        Ok(self.push(vec![value.len()], value, rg, Op::Concat(parts.to_vec())))
    }

    /// `(1/N) Σ (pred − target)²`.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.len() != t.len() {
            return Err(shape_err(format!(
                "mse lengths differ: {} vs {}",
                p.len(),
                t.len()
            )));
        }
        if p.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = p.len() as f64;
        let v = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(vec![1], vec![v], rg, Op::Mse { pred, target }))
    }

    /// `Σ |w|` over every entry of every listed tensor.
    pub fn l1_penalty(&mut self, weights: &[Var]) -> Var {
        let v: f64 = weights
            .iter()
            .flat_map(|w| self.value(*w).iter())
            .map(|x| x.abs())
            .sum();
        let rg = self.rg(weights);
        self.push(vec![1], vec![v], rg, Op::L1(weights.to_vec()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "add shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, value, rg, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(shape, value, rg, Op::Scale(x, factor))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|v| v * v).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(shape, value, rg, Op::Square(x))
    }

    /// Reverse-mode sweep from the scalar `loss`; previous gradients are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidGraph(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            let nodes = &self.nodes;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if nodes[v.0].requires_grad {
                    let len = nodes[v.0].value.len();
                    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
                    f(buf);
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv1d {
                    x,
                    kernels,
                    bias,
                    dims,
                    padded,
                } => {
                    let k = &nodes[kernels.0].value;
                    acc(*kernels, &mut |dk| {
                        conv::backward(padded, k, &g, *dims, Some(dk), None, None)
                    });
                    acc(*bias, &mut |db| {
                        conv::backward(padded, k, &g, *dims, None, Some(db), None)
                    });
                    acc(*x, &mut |dx| {
                        conv::backward(padded, k, &g, *dims, None, None, Some(dx))
                    });
                }
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    acc(*x, &mut |dx| {
                        for ((d, gi), xi) in dx.iter_mut().zip(&g).zip(xv) {
                            if *xi > 0.0 {
                                *d += gi;
                            }
                        }
                    });
                }
                Op::Transpose(x) => {
                    let (r, c) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                    acc(*x, &mut |dx| {
                        for i in 0..r {
                            for j in 0..c {
                                dx[i * c + j] += g[j * r + i];
                            }
                        }
                    });
                }
                Op::Reshape(x) => {
                    acc(*x, &mut |dx| dx.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi));
                }
                Op::Lstm { seq, params, cache } => {
                    let steps = nodes[seq.0].shape[0];
                    let hidden = nodes[params.u.0].shape[1];
                    let need = |v: Var| nodes[v.0].requires_grad;
                    let mut dw = need(params.w).then(|| vec![0.0; nodes[params.w.0].value.len()]);
                    let mut du = need(params.u).then(|| vec![0.0; nodes[params.u.0].value.len()]);
                    let mut db = need(params.b).then(|| vec![0.0; nodes[params.b.0].value.len()]);
                    let mut dseq = need(*seq).then(|| vec![0.0; nodes[seq.0].value.len()]);
                    lstm::backward(
                        &nodes[seq.0].value,
                        steps,
                        &nodes[params.w.0].value,
                        &nodes[params.u.0].value,
                        hidden,
                        &node.value,
                        cache,
                        &g,
                        lstm::LstmGrads {
                            dw: dw.as_deref_mut(),
                            du: du.as_deref_mut(),
                            db: db.as_deref_mut(),
                            dseq: dseq.as_deref_mut(),
                        },
                    );
                    for (v, d) in [(params.w, dw), (params.u, du), (params.b, db), (*seq, dseq)] {
                        if let Some(d) = d {
                            acc(v, &mut |buf| buf.iter_mut().zip(&d).for_each(|(a, b)| *a += b));
                        }
                    }
                }
                Op::Dense { x, w, b } => {
                    let xv = &nodes[x.0].value;
                    let wv = &nodes[w.0].value;
                    acc(*w, &mut |dw| outer_acc(dw, &g, xv));
                    acc(*b, &mut |db| db.iter_mut().zip(&g).for_each(|(a, gi)| *a += gi));
                    acc(*x, &mut |dx| matvec_t_acc(wv, &g, dx));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        let slice = &g[offset..offset + len];
                        acc(*p, &mut |dp| dp.iter_mut().zip(slice).for_each(|(a, b)| *a += b));
                        offset += len;
                    }
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (&nodes[pred.0].value, &nodes[target.0].value);
                    let k = 2.0 * g[0] / p.len() as f64;
                    acc(*pred, &mut |dp| {
                        for ((d, a), b) in dp.iter_mut().zip(p).zip(t) {
                            *d += k * (a - b);
                        }
                    });
                    acc(*target, &mut |dt| {
                        for ((d, a), b) in dt.iter_mut().zip(p).zip(t) {
                            *d -= k * (a - b);
                        }
                    });
                }
                Op::L1(weights) => {
                    for w in weights {
                        let wv = &nodes[w.0].value;
                        acc(*w, &mut |dw| {
                            for (d, x) in dw.iter_mut().zip(wv) {
                                // Subgradient 0 at 0.
                                if *x > 0.0 {
                                    *d += g[0];
                                } else if *x < 0.0 {
                                    *d -= g[0];
                                }
                            }
                        });
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |da| da.iter_mut().zip(&g).for_each(|(x, gi)| *x += gi));
                    acc(*b, &mut |db| db.iter_mut().zip(&g).for_each(|(x, gi)| *x += gi));
                }
                Op::Scale(x, factor) => {
                    acc(*x, &mut |dx| dx.iter_mut().zip(&g).for_each(|(d, gi)| *d += factor * gi));
                }
                Op::Square(x) => {
                    let xv = &nodes[x.0].value;
                    acc(*x, &mut |dx| {
                        for ((d, gi), xi) in dx.iter_mut().zip(&g).zip(xv) {
                            *d += 2.0 * xi * gi;
                        }
                    });
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}
