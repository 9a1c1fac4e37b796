//! Layer-level building blocks expressed on a [`Graph`].

use crate::error::{Error, Result};
use crate::nn::hyper::CellType;
use crate::tensor::{Graph, Padding, Tensor, Var};

/// Standard conv; `w` is `[C_out x C_in x K]`.
pub fn conv1d(
    g: &mut Graph,
    x: Var,
    w: Var,
    b: Option<Var>,
    padding: Padding,
    dilation: usize,
) -> Result<Var> {
    g.conv1d(x, w, b, padding, dilation)
}

/// Weights of one depthwise-separable convolution.
#[derive(Debug, Clone, Copy)]
pub struct SeparableWeights {
    /// `[C_in x K]`
    pub depth_w: Var,
    pub depth_b: Option<Var>,
    /// `[C_out x C_in x 1]`
    pub point_w: Var,
    pub point_b: Option<Var>,
}

/// Per-channel K-tap convolution followed by 1x1 cross-channel mixing.
pub fn depthwise_separable_conv1d(
    g: &mut Graph,
    x: Var,
    w: &SeparableWeights,
    padding: Padding,
    dilation: usize,
) -> Result<Var> {
    let depth = g.depthwise_conv1d(x, w.depth_w, w.depth_b, padding, dilation)?;
    g.conv1d(depth, w.point_w, w.point_b, Padding::Same, 1)
}

/// Convolution weights of either flavour.
#[derive(Debug, Clone, Copy)]
pub enum ConvWeights {
    Standard { w: Var, b: Option<Var> },
    Separable(SeparableWeights),
}

impl ConvWeights {
    pub fn apply(&self, g: &mut Graph, x: Var, padding: Padding, dilation: usize) -> Result<Var> {
        match self {
            ConvWeights::Standard { w, b } => g.conv1d(x, *w, *b, padding, dilation),
            ConvWeights::Separable(s) => depthwise_separable_conv1d(g, x, s, padding, dilation),
        }
    }
}

/// Residual path of a TCN block: identity, or a 1x1 projection when the
/// widths differ.
#[derive(Debug, Clone, Copy)]
pub enum Residual {
    Identity,
    Projection { w: Var, b: Var },
}

/// `relu(conv2(relu(conv1(x)))) + residual(x)` with causal dilated convs.
pub fn tcn_block(
    g: &mut Graph,
    x: Var,
    conv1: &ConvWeights,
    conv2: &ConvWeights,
    residual: &Residual,
    dilation: usize,
) -> Result<Var> {
    let h = conv1.apply(g, x, Padding::Causal, dilation)?;
    let h = g.relu(h);
    let h = conv2.apply(g, h, Padding::Causal, dilation)?;
    let h = g.relu(h);
    let skip = match residual {
        Residual::Identity => x,
        Residual::Projection { w, b } => g.conv1d(x, *w, Some(*b), Padding::Same, 1)?,
    };
    g.add(h, skip)
}

/// Weights of one recurrent direction.
#[derive(Debug, Clone, Copy)]
pub struct RecurrentWeights {
    pub cell: CellType,
    /// `[G*U x C]`
    pub w_ih: Var,
    /// `[G*U x U]`
    pub w_hh: Var,
    /// LSTM bias, or the GRU input-side bias.
    pub b_ih: Var,
    /// GRU hidden-side bias; unused by the LSTM.
    pub b_hh: Option<Var>,
}

/// Runs one direction over a whole `[C x T]` sequence with the fused kernels.
pub fn recurrent_sequence(
    g: &mut Graph,
    x: Var,
    w: &RecurrentWeights,
    reverse: bool,
) -> Result<Var> {
    match w.cell {
        CellType::Lstm => g.lstm(x, w.w_ih, w.w_hh, w.b_ih, reverse),
        CellType::Gru => {
            let b_hh = w
                .b_hh
                .ok_or_else(|| Error::Contract("GRU needs a hidden-side bias".into()))?;
            g.gru(x, w.w_ih, w.w_hh, w.b_ih, b_hh, reverse)
        }
    }
}

/// Forward pass over `t = 0..T` and backward pass over `t = T-1..0`,
/// stacked as `[2U x T]`.
pub fn bidirectional_wrap(
    g: &mut Graph,
    x: Var,
    fwd: &RecurrentWeights,
    bwd: &RecurrentWeights,
) -> Result<Var> {
    let f = recurrent_sequence(g, x, fwd, false)?;
    let b = recurrent_sequence(g, x, bwd, true)?;
    g.concat_rows(f, b)
}

/// Recurrent state carried between steps; columns `[U x 1]`.
#[derive(Debug, Clone, Copy)]
pub enum CellState {
    Lstm { h: Var, c: Var },
    Gru { h: Var },
}

impl CellState {
    pub fn zeros(g: &mut Graph, cell: CellType, units: usize) -> Self {
        let mut z = || g.constant(Tensor::zeros(&[units, 1]));
        match cell {
            CellType::Lstm => CellState::Lstm { h: z(), c: z() },
            CellType::Gru => CellState::Gru { h: z() },
        }
    }

    pub fn hidden(&self) -> Var {
        match self {
            CellState::Lstm { h, .. } | CellState::Gru { h } => *h,
        }
    }
}

/// One recurrent step built from elementary graph ops. `x_t` is `[C x 1]`.
/// Computes the same function as one step of the fused kernels.
pub fn rnn_cell_step(
    g: &mut Graph,
    w: &RecurrentWeights,
    x_t: Var,
    state: CellState,
) -> Result<(Var, CellState)> {
    let units = g.value(w.w_hh).shape()[1];
    let col = |g: &mut Graph, v: Var| {
        let n = g.value(v).len();
        g.reshape(v, vec![n, 1])
    };
    match (w.cell, state) {
        (CellType::Lstm, CellState::Lstm { h, c }) => {
            let xi = g.matmul(w.w_ih, x_t)?;
            let hh = g.matmul(w.w_hh, h)?;
            let a = g.add(xi, hh)?;
            let bias = col(g, w.b_ih)?;
            let a = g.add(a, bias)?;
            let gate = |g: &mut Graph, k: usize| g.slice_rows(a, k * units, units);
            let (ai, af, ag, ao) = (gate(g, 0)?, gate(g, 1)?, gate(g, 2)?, gate(g, 3)?);
            let i = g.sigmoid(ai);
            let f = g.sigmoid(af);
            let cand = g.tanh(ag);
            let o = g.sigmoid(ao);
            let fc = g.mul(f, c)?;
            let ig = g.mul(i, cand)?;
            let c_new = g.add(fc, ig)?;
            let tc = g.tanh(c_new);
            let h_new = g.mul(o, tc)?;
            Ok((h_new, CellState::Lstm { h: h_new, c: c_new }))
        }
        (CellType::Gru, CellState::Gru { h }) => {
            let b_hh = w
                .b_hh
                .ok_or_else(|| Error::Contract("GRU needs a hidden-side bias".into()))?;
            let xi = g.matmul(w.w_ih, x_t)?;
            let bi = col(g, w.b_ih)?;
            let xi = g.add(xi, bi)?;
            let hh = g.matmul(w.w_hh, h)?;
            let bh = col(g, b_hh)?;
            let hh = g.add(hh, bh)?;
            let xs = |g: &mut Graph, k: usize| g.slice_rows(xi, k * units, units);
            let hs = |g: &mut Graph, k: usize| g.slice_rows(hh, k * units, units);
            let (xr, xz, xn) = (xs(g, 0)?, xs(g, 1)?, xs(g, 2)?);
            let (hr, hz, hn) = (hs(g, 0)?, hs(g, 1)?, hs(g, 2)?);
            let ar = g.add(xr, hr)?;
            let r = g.sigmoid(ar);
            let az = g.add(xz, hz)?;
            let z = g.sigmoid(az);
            let rhn = g.mul(r, hn)?;
            let an = g.add(xn, rhn)?;
            let n = g.tanh(an);
            // (1 - z) n + z h  ==  n + z (h - n)
            let hmn = g.sub(h, n)?;
            let zh = g.mul(z, hmn)?;
            let h_new = g.add(n, zh)?;
            Ok((h_new, CellState::Gru { h: h_new }))
        }
        _ => Err(Error::Contract(
            "cell state does not match cell type".into(),
        )),
    }
}
