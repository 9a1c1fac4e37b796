//! Raw slice kernels behind the graph ops. Sequences are channel-major
//! `[C x T]`; recurrent kernels work time-major internally.

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * n..(p + 1) * n], crow);
        }
    }
}

/// `c[m x n] += a^T * b` for `a[k x m]`, `b[k x n]`.
pub(crate) fn matmul_at_b_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            axpy(a[p * m + i], brow, &mut c[i * n..(i + 1) * n]);
        }
    }
}

/// `c[m x n] += a * b^T` for `a[m x k]`, `b[n x k]`.
pub(crate) fn matmul_a_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

pub(crate) fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Shape and alignment of a 1-D convolution over `[C x T]` sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub t: usize,
    pub dilation: usize,
    pub left_pad: usize,
}

impl ConvGeom {
    /// Time range `[t0, t1)` of outputs reading a valid input for tap `kk`,
    /// together with the input shift.
    #[inline]
    fn tap(&self, kk: usize) -> (usize, usize, isize) {
        let s = (kk * self.dilation) as isize - self.left_pad as isize;
        let t = self.t as isize;
        let t0 = (-s).clamp(0, t);
        let t1 = (t - s).clamp(0, t);
        (t0 as usize, t1.max(t0) as usize, s)
    }
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let t = g.t;
    let mut out = vec![0.0; g.c_out * t];
    for o in 0..g.c_out {
        let orow = &mut out[o * t..(o + 1) * t];
        if let Some(b) = b {
            orow.fill(b[o]);
        }
        for i in 0..g.c_in {
            let xrow = &x[i * t..(i + 1) * t];
            for kk in 0..g.k {
                let wv = w[(o * g.c_in + i) * g.k + kk];
                let (t0, t1, s) = g.tap(kk);
                if t0 < t1 {
                    let xs = (t0 as isize + s) as usize;
                    axpy(wv, &xrow[xs..xs + (t1 - t0)], &mut orow[t0..t1]);
                }
            }
        }
    }
    out
}

/// Accumulates input, weight and bias gradients of a standard conv.
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    g: &ConvGeom,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let t = g.t;
    for o in 0..g.c_out {
        let drow = &dout[o * t..(o + 1) * t];
        for i in 0..g.c_in {
            let xrow = &x[i * t..(i + 1) * t];
            for kk in 0..g.k {
                let widx = (o * g.c_in + i) * g.k + kk;
                let (t0, t1, s) = g.tap(kk);
                if t0 >= t1 {
                    continue;
                }
                let xs = (t0 as isize + s) as usize;
                let n = t1 - t0;
                if let Some(dw) = dw.as_deref_mut() {
                    dw[widx] += dot(&drow[t0..t1], &xrow[xs..xs + n]);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    axpy(w[widx], &drow[t0..t1], &mut dx[i * t + xs..i * t + xs + n]);
                }
            }
        }
    }
    if let Some(db) = db {
        for o in 0..g.c_out {
            db[o] += dout[o * t..(o + 1) * t].iter().sum::<f64>();
        }
    }
}

/// Per-channel convolution: `w` is `[C x K]`, `c_out == c_in`.
pub(crate) fn depthwise_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let t = g.t;
    let mut out = vec![0.0; g.c_in * t];
    for c in 0..g.c_in {
        let orow = &mut out[c * t..(c + 1) * t];
        if let Some(b) = b {
            orow.fill(b[c]);
        }
        let xrow = &x[c * t..(c + 1) * t];
        for kk in 0..g.k {
            let (t0, t1, s) = g.tap(kk);
            if t0 < t1 {
                let xs = (t0 as isize + s) as usize;
                axpy(
                    w[c * g.k + kk],
                    &xrow[xs..xs + (t1 - t0)],
                    &mut orow[t0..t1],
                );
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    g: &ConvGeom,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let t = g.t;
    for c in 0..g.c_in {
        let drow = &dout[c * t..(c + 1) * t];
        let xrow = &x[c * t..(c + 1) * t];
        for kk in 0..g.k {
            let (t0, t1, s) = g.tap(kk);
            if t0 >= t1 {
                continue;
            }
            let xs = (t0 as isize + s) as usize;
            let n = t1 - t0;
            if let Some(dw) = dw.as_deref_mut() {
                dw[c * g.k + kk] += dot(&drow[t0..t1], &xrow[xs..xs + n]);
            }
            if let Some(dx) = dx.as_deref_mut() {
                axpy(
                    w[c * g.k + kk],
                    &drow[t0..t1],
                    &mut dx[c * t + xs..c * t + xs + n],
                );
            }
        }
    }
    if let Some(db) = db {
        for c in 0..g.c_in {
            db[c] += dout[c * t..(c + 1) * t].iter().sum::<f64>();
        }
    }
}

/// Processing order of a recurrent pass.
fn steps(t: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..t).rev())
    } else {
        Box::new(0..t)
    }
}

/// Input projection `W x[:, t] + b` for every step, time-major `[T x G]`.
fn input_projection(x: &[f64], w: &[f64], b: &[f64], c: usize, t: usize, gates: usize) -> Vec<f64> {
    let mut gate_major = vec![0.0; gates * t];
    for gi in 0..gates {
        gate_major[gi * t..(gi + 1) * t].fill(b[gi]);
    }
    matmul_acc(w, x, &mut gate_major, gates, c, t);
    transpose(&gate_major, gates, t)
}

/// Saved activations of a fused LSTM pass, all time-major.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    /// Activated gates `(i, f, g, o)` per step, `[T x 4U]`.
    pub gates: Vec<f64>,
    pub cell: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// LSTM over `x[C x T]` with gate order `(i, f, g, o)`. Returns `[U x T]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_forward(
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    b: &[f64],
    c: usize,
    u: usize,
    t: usize,
    reverse: bool,
) -> (Vec<f64>, LstmCache) {
    let g4 = 4 * u;
    let mut gates = input_projection(x, w_ih, b, c, t, g4);
    let mut cell = vec![0.0; t * u];
    let mut hidden = vec![0.0; t * u];
    let mut h_prev = vec![0.0; u];
    let mut c_prev = vec![0.0; u];
    for step in steps(t, reverse) {
        let a = &mut gates[step * g4..(step + 1) * g4];
        for (gi, av) in a.iter_mut().enumerate() {
            *av += dot(&w_hh[gi * u..(gi + 1) * u], &h_prev);
        }
        for j in 0..u {
            let i_g = sigmoid(a[j]);
            let f_g = sigmoid(a[u + j]);
            let g_g = a[2 * u + j].tanh();
            let o_g = sigmoid(a[3 * u + j]);
            a[j] = i_g;
            a[u + j] = f_g;
            a[2 * u + j] = g_g;
            a[3 * u + j] = o_g;
            let cv = f_g * c_prev[j] + i_g * g_g;
            cell[step * u + j] = cv;
            hidden[step * u + j] = o_g * cv.tanh();
        }
        h_prev.copy_from_slice(&hidden[step * u..(step + 1) * u]);
        c_prev.copy_from_slice(&cell[step * u..(step + 1) * u]);
    }
    let out = transpose(&hidden, t, u);
    (
        out,
        LstmCache {
            gates,
            cell,
            hidden,
        },
    )
}

pub(crate) struct RecurrentGrads<'a> {
    pub dx: Option<&'a mut [f64]>,
    pub dw_ih: Option<&'a mut [f64]>,
    pub dw_hh: Option<&'a mut [f64]>,
    pub db_ih: Option<&'a mut [f64]>,
    /// Only used by the GRU, whose hidden projection carries its own bias.
    pub db_hh: Option<&'a mut [f64]>,
}

/// Backpropagation through time for [`lstm_forward`]; `dout` is `[U x T]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    cache: &LstmCache,
    dout: &[f64],
    c: usize,
    u: usize,
    t: usize,
    reverse: bool,
    grads: RecurrentGrads<'_>,
) {
    let g4 = 4 * u;
    let dh_out = transpose(dout, u, t);
    let mut da_all = vec![0.0; t * g4];
    let mut dh_next = vec![0.0; u];
    let mut dc_next = vec![0.0; u];
    let mut dw_hh_local = vec![0.0; g4 * u];
    let order: Vec<usize> = steps(t, reverse).collect();
    for (pos, &step) in order.iter().enumerate().rev() {
        let prev = if pos == 0 { None } else { Some(order[pos - 1]) };
        let a = &cache.gates[step * g4..(step + 1) * g4];
        let da = &mut da_all[step * g4..(step + 1) * g4];
        for j in 0..u {
            let (i_g, f_g, g_g, o_g) = (a[j], a[u + j], a[2 * u + j], a[3 * u + j]);
            let cv = cache.cell[step * u + j];
            let tc = cv.tanh();
            let dh = dh_out[step * u + j] + dh_next[j];
            let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
            let c_prev = prev.map_or(0.0, |p| cache.cell[p * u + j]);
            da[j] = dc * g_g * i_g * (1.0 - i_g);
            da[u + j] = dc * c_prev * f_g * (1.0 - f_g);
            da[2 * u + j] = dc * i_g * (1.0 - g_g * g_g);
            da[3 * u + j] = dh * tc * o_g * (1.0 - o_g);
            dc_next[j] = dc * f_g;
        }
        dh_next.fill(0.0);
        if let Some(p) = prev {
            let h_prev = &cache.hidden[p * u..(p + 1) * u];
            for gi in 0..g4 {
                axpy(da[gi], h_prev, &mut dw_hh_local[gi * u..(gi + 1) * u]);
                axpy(da[gi], &w_hh[gi * u..(gi + 1) * u], &mut dh_next);
            }
        }
    }
    finish_input_side(
        x,
        w_ih,
        &da_all,
        c,
        t,
        g4,
        grads.dx,
        grads.dw_ih,
        grads.db_ih,
    );
    if let Some(dw) = grads.dw_hh {
        axpy(1.0, &dw_hh_local, dw);
    }
}

/// Gradients through the input projection given time-major pre-activation
/// gradients `da[T x G]`.
#[allow(clippy::too_many_arguments)]
fn finish_input_side(
    x: &[f64],
    w_ih: &[f64],
    da_time_major: &[f64],
    c: usize,
    t: usize,
    gates: usize,
    dx: Option<&mut [f64]>,
    dw_ih: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let da = transpose(da_time_major, t, gates);
    if let Some(dw) = dw_ih {
        matmul_a_bt_acc(&da, x, dw, gates, t, c);
    }
    if let Some(dx) = dx {
        matmul_at_b_acc(w_ih, &da, dx, c, gates, t);
    }
    if let Some(db) = db {
        for gi in 0..gates {
            db[gi] += da[gi * t..(gi + 1) * t].iter().sum::<f64>();
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    /// `(r, z, n, hn)` per step, `[T x 4U]`; `hn = W_hn h + b_hn`.
    pub acts: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// GRU with gate order `(r, z, n)`:
/// `n = tanh(W_in x + b_in + r * (W_hn h + b_hn))`, `h' = (1 - z) n + z h`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gru_forward(
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    b_ih: &[f64],
    b_hh: &[f64],
    c: usize,
    u: usize,
    t: usize,
    reverse: bool,
) -> (Vec<f64>, GruCache) {
    let g3 = 3 * u;
    let xp = input_projection(x, w_ih, b_ih, c, t, g3);
    let mut acts = vec![0.0; t * 4 * u];
    let mut hidden = vec![0.0; t * u];
    let mut h_prev = vec![0.0; u];
    let mut hp = vec![0.0; g3];
    for step in steps(t, reverse) {
        for (gi, v) in hp.iter_mut().enumerate() {
            *v = b_hh[gi] + dot(&w_hh[gi * u..(gi + 1) * u], &h_prev);
        }
        let xa = &xp[step * g3..(step + 1) * g3];
        let ac = &mut acts[step * 4 * u..(step + 1) * 4 * u];
        for j in 0..u {
            let r = sigmoid(xa[j] + hp[j]);
            let z = sigmoid(xa[u + j] + hp[u + j]);
            let hn = hp[2 * u + j];
            let n = (xa[2 * u + j] + r * hn).tanh();
            ac[j] = r;
            ac[u + j] = z;
            ac[2 * u + j] = n;
            ac[3 * u + j] = hn;
            hidden[step * u + j] = (1.0 - z) * n + z * h_prev[j];
        }
        h_prev.copy_from_slice(&hidden[step * u..(step + 1) * u]);
    }
    let out = transpose(&hidden, t, u);
    (out, GruCache { acts, hidden })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gru_backward(
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    cache: &GruCache,
    dout: &[f64],
    c: usize,
    u: usize,
    t: usize,
    reverse: bool,
    grads: RecurrentGrads<'_>,
) {
    let g3 = 3 * u;
    let dh_out = transpose(dout, u, t);
    let mut dax_all = vec![0.0; t * g3];
    let mut dah = vec![0.0; g3];
    let mut dh_next = vec![0.0; u];
    let mut dw_hh_local = vec![0.0; g3 * u];
    let mut db_hh_local = vec![0.0; g3];
    let zeros = vec![0.0; u];
    let order: Vec<usize> = steps(t, reverse).collect();
    for (pos, &step) in order.iter().enumerate().rev() {
        let h_prev: &[f64] = if pos == 0 {
            &zeros
        } else {
            let p = order[pos - 1];
            &cache.hidden[p * u..(p + 1) * u]
        };
        let ac = &cache.acts[step * 4 * u..(step + 1) * 4 * u];
        let dax = &mut dax_all[step * g3..(step + 1) * g3];
        let mut dh_prev_direct = vec![0.0; u];
        for j in 0..u {
            let (r, z, n, hn) = (ac[j], ac[u + j], ac[2 * u + j], ac[3 * u + j]);
            let dh = dh_out[step * u + j] + dh_next[j];
            let dz = dh * (h_prev[j] - n);
            let dn = dh * (1.0 - z);
            dh_prev_direct[j] = dh * z;
            let dan = dn * (1.0 - n * n);
            let dr = dan * hn;
            let dar = dr * r * (1.0 - r);
            let daz = dz * z * (1.0 - z);
            dax[j] = dar;
            dax[u + j] = daz;
            dax[2 * u + j] = dan;
            dah[j] = dar;
            dah[u + j] = daz;
            dah[2 * u + j] = dan * r;
        }
        dh_next.copy_from_slice(&dh_prev_direct);
        for gi in 0..g3 {
            db_hh_local[gi] += dah[gi];
            axpy(dah[gi], h_prev, &mut dw_hh_local[gi * u..(gi + 1) * u]);
            axpy(dah[gi], &w_hh[gi * u..(gi + 1) * u], &mut dh_next);
        }
    }
    finish_input_side(
        x,
        w_ih,
        &dax_all,
        c,
        t,
        g3,
        grads.dx,
        grads.dw_ih,
        grads.db_ih,
    );
    if let Some(dw) = grads.dw_hh {
        axpy(1.0, &dw_hh_local, dw);
    }
    if let Some(db) = grads.db_hh {
        axpy(1.0, &db_hh_local, db);
    }
}
