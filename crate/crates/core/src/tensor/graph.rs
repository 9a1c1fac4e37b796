use super::kernels::{self, ConvGeom, GruCache, LstmCache, RecurrentGrads};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in the [`Graph`] that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Temporal alignment of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Symmetric zero padding of `dilation * (K - 1) / 2`; requires odd `K`.
    Same,
    /// Left padding of `dilation * (K - 1)`; output at `t` reads inputs `<= t`.
    Causal,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sum(Var),
    SliceRows {
        src: Var,
        start: usize,
    },
    ConcatRows(Var, Var),
    Reshape(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        reverse: bool,
        cache: LstmCache,
    },
    Gru {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
        reverse: bool,
        cache: GruCache,
    },
    WeightedCrossEntropy {
        logits: Var,
        labels: Vec<u8>,
        weights: [f64; 2],
        /// Softmax probability of the blink class per step.
        p_blink: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eager computation tape. Nodes are appended in evaluation order, so every
/// node's inputs have smaller indices and a reverse sweep is a valid
/// topological traversal.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn same_len(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Copy of the node's value with its accumulated gradient attached.
    pub fn tensor(&self, v: Var) -> Tensor {
        let mut t = self.nodes[v.0].value.clone();
        t.requires_grad = self.nodes[v.0].requires_grad;
        t.grad = self.grads[v.0].clone();
        t
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Dimension(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = if same_len(ta, tb) {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else if tb.len() == 1 {
            let y = tb.data()[0];
            ta.data().iter().map(|&x| f(x, y)).collect()
        } else if ta.len() == 1 {
            let x = ta.data()[0];
            tb.data().iter().map(|&y| f(x, y)).collect()
        } else {
            return Err(Error::Dimension(format!(
                "{name} {:?} with {:?}: only equal shapes or scalars broadcast",
                ta.shape(),
                tb.shape()
            )));
        };
        Ok(out)
    }

    fn broadcast_shape(&self, a: Var, b: Var) -> Vec<usize> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() == 1 && tb.len() != 1 {
            tb.shape().to_vec()
        } else {
            ta.shape().to_vec()
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let shape = self.broadcast_shape(a, b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let shape = self.broadcast_shape(a, b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let shape = self.broadcast_shape(a, b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b), rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect());
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), kernels::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Rows `[start, start + len)` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 || len == 0 || start + len > t.rows() {
            return Err(Error::Dimension(format!(
                "rows {start}..{} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let c = t.cols();
        let data = t.data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(vec![len, c], data),
            Op::SliceRows { src: a, start },
            rg,
        ))
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(t.shape().to_vec(), t.into_data()),
            Op::Reshape(a),
            rg,
        ))
    }

    /// Stacks `[Ra x T]` on top of `[Rb x T]`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.cols() {
            return Err(Error::Dimension(format!(
                "concat {:?} with {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let shape = vec![ta.rows() + tb.rows(), ta.cols()];
        let data = [ta.data(), tb.data()].concat();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, data), Op::ConcatRows(a, b), rg))
    }

    fn conv_geom(
        &self,
        x: Var,
        w: Var,
        padding: Padding,
        dilation: usize,
        depthwise: bool,
    ) -> Result<ConvGeom> {
        let (tx, tw) = (self.value(x), self.value(w));
        if dilation < 1 {
            return Err(Error::Config("dilation must be >= 1".into()));
        }
        if tx.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "conv input {:?} is not [C x T]",
                tx.shape()
            )));
        }
        let (c_in, t) = (tx.rows(), tx.cols());
        let (c_out, k) = if depthwise {
            if tw.shape().len() != 2 || tw.shape()[0] != c_in {
                return Err(Error::Dimension(format!(
                    "depthwise kernel {:?} for {c_in} channels",
                    tw.shape()
                )));
            }
            (c_in, tw.shape()[1])
        } else {
            if tw.shape().len() != 3 || tw.shape()[1] != c_in {
                return Err(Error::Dimension(format!(
                    "conv kernel {:?} for {c_in} input channels",
                    tw.shape()
                )));
            }
            (tw.shape()[0], tw.shape()[2])
        };
        let left_pad = match padding {
            Padding::Same => {
                if k % 2 == 0 {
                    return Err(Error::Config(format!(
                        "same padding needs an odd kernel, got {k}"
                    )));
                }
                dilation * (k - 1) / 2
            }
            Padding::Causal => dilation * (k - 1),
        };
        Ok(ConvGeom {
            c_in,
            c_out,
            k,
            t,
            dilation,
            left_pad,
        })
    }

    fn check_bias(&self, b: Option<Var>, n: usize) -> Result<()> {
        match b {
            Some(b) if self.value(b).len() != n => Err(Error::Dimension(format!(
                "bias of length {} for {n} outputs",
                self.value(b).len()
            ))),
            _ => Ok(()),
        }
    }

    /// `x[C_in x T]` convolved with `w[C_out x C_in x K]`, output `[C_out x T]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        padding: Padding,
        dilation: usize,
    ) -> Result<Var> {
        let geom = self.conv_geom(x, w, padding, dilation, false)?;
        self.check_bias(b, geom.c_out)?;
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::from_parts(vec![geom.c_out, geom.t], out),
            Op::Conv1d { x, w, b, geom },
            rg,
        ))
    }

    /// Per-channel convolution with `w[C x K]`, output `[C x T]`.
    pub fn depthwise_conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        padding: Padding,
        dilation: usize,
    ) -> Result<Var> {
        let geom = self.conv_geom(x, w, padding, dilation, true)?;
        self.check_bias(b, geom.c_in)?;
        let out = kernels::depthwise_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::from_parts(vec![geom.c_in, geom.t], out),
            Op::Depthwise { x, w, b, geom },
            rg,
        ))
    }

    fn recurrent_dims(
        &self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        gates: usize,
    ) -> Result<(usize, usize, usize)> {
        let (tx, ti, th) = (self.value(x), self.value(w_ih), self.value(w_hh));
        let bad = || {
            Error::Dimension(format!(
                "recurrent weights {:?}/{:?} for input {:?}",
                ti.shape(),
                th.shape(),
                tx.shape()
            ))
        };
        if tx.shape().len() != 2 || ti.shape().len() != 2 || th.shape().len() != 2 {
            return Err(bad());
        }
        let (c, t) = (tx.rows(), tx.cols());
        let u = th.shape()[1];
        if ti.shape() != [gates * u, c] || th.shape() != [gates * u, u] {
            return Err(bad());
        }
        Ok((c, u, t))
    }

    /// Full-sequence LSTM over `x[C x T]`, zero initial state, output `[U x T]`.
    /// With `reverse`, steps run from `T-1` down to `0`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool) -> Result<Var> {
        let (c, u, t) = self.recurrent_dims(x, w_ih, w_hh, 4)?;
        self.check_bias(Some(b), 4 * u)?;
        let (out, cache) = kernels::lstm_forward(
            self.value(x).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(b).data(),
            c,
            u,
            t,
            reverse,
        );
        let rg = [x, w_ih, w_hh, b].iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::from_parts(vec![u, t], out),
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                reverse,
                cache,
            },
            rg,
        ))
    }

    /// Full-sequence GRU; same conventions as [`Graph::lstm`].
    pub fn gru(
        &mut self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
        reverse: bool,
    ) -> Result<Var> {
        let (c, u, t) = self.recurrent_dims(x, w_ih, w_hh, 3)?;
        self.check_bias(Some(b_ih), 3 * u)?;
        self.check_bias(Some(b_hh), 3 * u)?;
        let (out, cache) = kernels::gru_forward(
            self.value(x).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(b_ih).data(),
            self.value(b_hh).data(),
            c,
            u,
            t,
            reverse,
        );
        let rg = [x, w_ih, w_hh, b_ih, b_hh].iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::from_parts(vec![u, t], out),
            Op::Gru {
                x,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                reverse,
                cache,
            },
            rg,
        ))
    }

    /// Mean over time of class-weighted cross-entropy on softmaxed
    /// `logits[2 x T]`. `weights` is `[no-blink, blink]`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[u8],
        weights: [f64; 2],
    ) -> Result<Var> {
        let tl = self.value(logits);
        if tl.shape().len() != 2 || tl.rows() != 2 || tl.cols() != labels.len() {
            return Err(Error::Dimension(format!(
                "logits {:?} for {} labels",
                tl.shape(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Contract(format!("label {bad} outside {{0,1}}")));
        }
        let t = labels.len();
        let (z0, z1) = (tl.row(0), tl.row(1));
        let mut p_blink = Vec::with_capacity(t);
        let mut total = 0.0;
        for i in 0..t {
            let m = z0[i].max(z1[i]);
            let lse = m + ((z0[i] - m).exp() + (z1[i] - m).exp()).ln();
            let y = labels[i] as usize;
            let zy = if y == 1 { z1[i] } else { z0[i] };
            total += weights[y] * (lse - zy);
            p_blink.push((z1[i] - lse).exp());
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / t as f64),
            Op::WeightedCrossEntropy {
                logits,
                labels: labels.to_vec(),
                weights,
                p_blink,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar root. Gradients accumulate across calls
    /// until [`Graph::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        local[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = local[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut local);
            }
            match &mut self.grads[i] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        // Gradient buffers are moved out of `local` while a kernel writes
        // them and merged back afterwards, so an op that reads the same var
        // twice still accumulates correctly.
        let take = |local: &mut [Option<Vec<f64>>], v: Var| -> Option<Vec<f64>> {
            nodes[v.0].requires_grad.then(|| {
                local[v.0]
                    .take()
                    .unwrap_or_else(|| vec![0.0; nodes[v.0].value.len()])
            })
        };
        let put = |local: &mut [Option<Vec<f64>>], v: Var, buf: Option<Vec<f64>>| {
            if let Some(buf) = buf {
                match &mut local[v.0] {
                    Some(acc) => acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(buf),
                }
            }
        };
        let mut with = |v: Var, f: &dyn Fn(&mut [f64])| {
            if let Some(mut d) = take(local, v) {
                f(&mut d);
                put(local, v, Some(d));
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                with(*a, &|d| kernels::matmul_a_bt_acc(g, tb.data(), d, m, n, k));
                with(*b, &|d| kernels::matmul_at_b_acc(ta.data(), g, d, k, m, n));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                with(*a, &|d| reduce_into(d, g, 1.0));
                with(*b, &|d| reduce_into(d, g, sign));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                with(*a, &|d| mul_grad_into(d, g, xb));
                with(*b, &|d| mul_grad_into(d, g, xa));
            }
            Op::Sigmoid(a) => {
                let y = nodes[i].value.data();
                with(*a, &|d| {
                    for ((d, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = nodes[i].value.data();
                with(*a, &|d| {
                    for ((d, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a);
                with(*a, &|d| {
                    for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(x) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Sum(a) => with(*a, &|d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::SliceRows { src, start } => {
                let off = start * nodes[src.0].value.cols();
                with(*src, &|d| {
                    d[off..off + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, gi)| *d += gi)
                });
            }
            Op::ConcatRows(a, b) => {
                let na = nodes[a.0].value.len();
                with(*a, &|d| {
                    d.iter_mut().zip(&g[..na]).for_each(|(d, gi)| *d += gi)
                });
                with(*b, &|d| {
                    d.iter_mut().zip(&g[na..]).for_each(|(d, gi)| *d += gi)
                });
            }
            Op::Reshape(a) => with(*a, &|d| d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi)),
            Op::Conv1d { x, w, b, geom } | Op::Depthwise { x, w, b, geom } => {
                let backward = if matches!(nodes[i].op, Op::Conv1d { .. }) {
                    kernels::conv1d_backward
                } else {
                    kernels::depthwise_backward
                };
                let (mut dx, mut dw) = (take(local, *x), take(local, *w));
                let mut db = b.and_then(|b| take(local, b));
                backward(
                    val(*x),
                    val(*w),
                    g,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                put(local, *x, dx);
                put(local, *w, dw);
                if let Some(b) = b {
                    put(local, *b, db);
                }
            }
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                reverse,
                cache,
            } => {
                let tx = &nodes[x.0].value;
                let u = nodes[w_hh.0].value.shape()[1];
                let (mut dx, mut dwi) = (take(local, *x), take(local, *w_ih));
                let (mut dwh, mut db) = (take(local, *w_hh), take(local, *b));
                kernels::lstm_backward(
                    tx.data(),
                    val(*w_ih),
                    val(*w_hh),
                    cache,
                    g,
                    tx.rows(),
                    u,
                    tx.cols(),
                    *reverse,
                    RecurrentGrads {
                        dx: dx.as_deref_mut(),
                        dw_ih: dwi.as_deref_mut(),
                        dw_hh: dwh.as_deref_mut(),
                        db_ih: db.as_deref_mut(),
                        db_hh: None,
                    },
                );
                put(local, *x, dx);
                put(local, *w_ih, dwi);
                put(local, *w_hh, dwh);
                put(local, *b, db);
            }
            Op::Gru {
                x,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                reverse,
                cache,
            } => {
                let tx = &nodes[x.0].value;
                let u = nodes[w_hh.0].value.shape()[1];
                let (mut dx, mut dwi) = (take(local, *x), take(local, *w_ih));
                let (mut dwh, mut dbi) = (take(local, *w_hh), take(local, *b_ih));
                let mut dbh = take(local, *b_hh);
                kernels::gru_backward(
                    tx.data(),
                    val(*w_ih),
                    val(*w_hh),
                    cache,
                    g,
                    tx.rows(),
                    u,
                    tx.cols(),
                    *reverse,
                    RecurrentGrads {
                        dx: dx.as_deref_mut(),
                        dw_ih: dwi.as_deref_mut(),
                        dw_hh: dwh.as_deref_mut(),
                        db_ih: dbi.as_deref_mut(),
                        db_hh: dbh.as_deref_mut(),
                    },
                );
                put(local, *x, dx);
                put(local, *w_ih, dwi);
                put(local, *w_hh, dwh);
                put(local, *b_ih, dbi);
                put(local, *b_hh, dbh);
            }
            Op::WeightedCrossEntropy {
                logits,
                labels,
                weights,
                p_blink,
            } => {
                let t = labels.len();
                let scale = g[0] / t as f64;
                with(*logits, &|d| {
                    for (k, (&y, &p1)) in labels.iter().zip(p_blink).enumerate() {
                        let w = weights[y as usize] * scale;
                        let y1 = f64::from(y);
                        d[k] += w * (y1 - p1);
                        d[t + k] += w * (p1 - y1);
                    }
                });
            }
        }
    }
}

/// Adds `sign * g` into `d`, summing when `d` is a broadcast scalar.
fn reduce_into(d: &mut [f64], g: &[f64], sign: f64) {
    if d.len() == g.len() {
        d.iter_mut().zip(g).for_each(|(d, gi)| *d += sign * gi);
    } else {
        d[0] += sign * g.iter().sum::<f64>();
    }
}

/// Gradient of one factor of a product given the other factor's values.
fn mul_grad_into(d: &mut [f64], g: &[f64], other: &[f64]) {
    match (d.len() == g.len(), other.len() == g.len()) {
        (true, true) => {
            for ((d, gi), o) in d.iter_mut().zip(g).zip(other) {
                *d += gi * o;
            }
        }
        (true, false) => {
            let o = other[0];
            d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * o);
        }
        (false, _) => {
            d[0] += g
                .iter()
                .zip(other.iter().cycle())
                .map(|(gi, o)| gi * o)
                .sum::<f64>();
        }
    }
}
