//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use blinkseg::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Evaluates the scalar function with every input bound as a parameter.
fn eval(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    g.value(out).item()
}

/// Largest relative gradient error over all inputs, comparing the graph's
/// backward pass with central finite differences.
///
/// Relative error of one input is `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)`
/// (infinity-norm relative), floored at 1e-8 in the denominator.
pub fn gradient_error(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    g.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
        })
        .collect();
    let mut worst = 0.0_f64;
    for (idx, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[j] -= FD_STEP;
            *slot = (eval(&plus, f) - eval(&minus, f)) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&analytic[idx], &numeric));
    }
    worst
}

/// Same as [`gradient_error`] but only probes `probes` randomly chosen
/// coordinates per input (for larger models).
///
/// Probes whose one-sided slopes disagree by more than `1e-4` of the largest
/// analytic gradient straddle a ReLU kink and are skipped; the returned count
/// lets callers bound how many were skipped.
pub fn sampled_gradient_error(
    inputs: &[Tensor],
    f: &dyn Fn(&mut Graph, &[Var]) -> Var,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, usize) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let centre = g.value(out).item();
    g.backward(out).unwrap();
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
        })
        .collect();
    let scale = grads.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    let mut a_all = Vec::new();
    let mut n_all = Vec::new();
    let mut skipped = 0;
    for (idx, input) in inputs.iter().enumerate() {
        for _ in 0..probes.min(input.len()) {
            let j = rng.random_range(0..input.len());
            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[j] -= FD_STEP;
            let (fp, fm) = (eval(&plus, f), eval(&minus, f));
            let (right, left) = ((fp - centre) / FD_STEP, (centre - fm) / FD_STEP);
            if (right - left).abs() > 1e-4 * scale {
                skipped += 1;
                continue;
            }
            n_all.push((fp - fm) / (2.0 * FD_STEP));
            a_all.push(grads[idx][j]);
        }
    }
    (relative_error(&a_all, &n_all), skipped)
}

pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a
        .iter()
        .chain(n)
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-8);
    diff / scale
}

/// Direct nested-loop 1-D convolution: `out[o,t] = b[o] + sum_{i,k} w[o,i,k] x[i, t - left + k d]`.
pub fn naive_conv1d(
    x: &[Vec<f64>],
    w: &[Vec<Vec<f64>>],
    b: Option<&[f64]>,
    dilation: usize,
    left_pad: usize,
) -> Vec<Vec<f64>> {
    let t_len = x[0].len();
    let mut out = vec![vec![0.0; t_len]; w.len()];
    for (o, row) in out.iter_mut().enumerate() {
        for (t, v) in row.iter_mut().enumerate() {
            let mut acc = b.map_or(0.0, |b| b[o]);
            for (i, xi) in x.iter().enumerate() {
                for (k, wv) in w[o][i].iter().enumerate() {
                    let src = t as isize - left_pad as isize + (k * dilation) as isize;
                    if src >= 0 && (src as usize) < t_len {
                        acc += wv * xi[src as usize];
                    }
                }
            }
            *v = acc;
        }
    }
    out
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn kernel3(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let s = t.shape();
    (0..s[0])
        .map(|o| {
            (0..s[1])
                .map(|i| {
                    (0..s[2])
                        .map(|k| t.data()[(o * s[1] + i) * s[2] + k])
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Run-length encoding of 1-runs as inclusive `(start, end)` pairs.
pub fn rle_ones(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l, start) {
            (1, None) => start = Some(i),
            (0, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, labels.len() - 1));
    }
    runs
}

/// Per-sample brute-force weighted tally of window votes.
pub fn brute_force_vote(preds: &[Vec<u8>], starts: &[usize], weights: &[f64], t: usize) -> Vec<u8> {
    (0..t)
        .map(|s| {
            let (mut ones, mut zeros) = (0.0, 0.0);
            for ((p, &st), &w) in preds.iter().zip(starts).zip(weights) {
                if s >= st && s < st + p.len() {
                    if p[s - st] == 1 {
                        ones += w;
                    } else {
                        zeros += w;
                    }
                }
            }
            u8::from(ones > zeros)
        })
        .collect()
}

/// Confusion tallies by explicit case analysis: (tp, fp, fn, tn).
pub fn naive_confusion(pred: &[u8], truth: &[u8]) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    for i in 0..pred.len() {
        if pred[i] == 1 && truth[i] == 1 {
            tp += 1;
        } else if pred[i] == 1 && truth[i] == 0 {
            fp += 1;
        } else if pred[i] == 0 && truth[i] == 1 {
            fneg += 1;
        } else {
            tn += 1;
        }
    }
    (tp, fp, fneg, tn)
}

pub fn naive_f1(tp: usize, fp: usize, fneg: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fneg) as f64;
    2.0 * p * r / (p + r)
}

/// Exhaustive maximum one-to-one matching between interval lists where a
/// pair is admissible when its IoU is at least `threshold`.
pub fn optimal_match_count(
    pred: &[(usize, usize)],
    truth: &[(usize, usize)],
    threshold: f64,
) -> usize {
    fn iou(a: (usize, usize), b: (usize, usize)) -> f64 {
        let lo = a.0.max(b.0);
        let hi = a.1.min(b.1);
        let inter = if hi >= lo { hi - lo + 1 } else { 0 };
        let union = (a.1 - a.0 + 1) + (b.1 - b.0 + 1) - inter;
        inter as f64 / union as f64
    }
    fn go(
        i: usize,
        used: u32,
        pred: &[(usize, usize)],
        truth: &[(usize, usize)],
        th: f64,
    ) -> usize {
        if i == pred.len() {
            return 0;
        }
        let mut best = go(i + 1, used, pred, truth, th);
        for (j, &t) in truth.iter().enumerate() {
            if used & (1 << j) == 0 && iou(pred[i], t) >= th {
                best = best.max(1 + go(i + 1, used | (1 << j), pred, truth, th));
            }
        }
        best
    }
    go(0, 0, pred, truth, threshold)
}

pub type GraphFn = dyn Fn(&mut Graph, &[Var]) -> Var;
pub type CaseBuilder = fn(&mut ChaCha8Rng) -> GradCase;

/// A scalar-valued random function of some inputs, for gradient checking.
pub struct GradCase {
    pub inputs: Vec<Tensor>,
    pub f: Box<GraphFn>,
}

/// Contracts `y` against a fixed random projection so every output
/// coordinate gets a distinct upstream gradient.
fn projected(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    random_tensor(rng, shape, 1.0)
}

fn dot_sum(g: &mut Graph, y: Var, r: &Tensor) -> Var {
    let rv = g.constant(r.clone());
    let m = g.mul(y, rv).unwrap();
    g.sum(m)
}

pub mod cases {
    use super::*;
    use blinkseg::nn::layers::{
        bidirectional_wrap, depthwise_separable_conv1d, RecurrentWeights, SeparableWeights,
    };
    use blinkseg::nn::CellType;
    use blinkseg::tensor::Padding;

    pub fn standard_conv(rng: &mut ChaCha8Rng) -> GradCase {
        let c_in = rng.random_range(1..4);
        let c_out = rng.random_range(1..4);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let t = rng.random_range(k..k + 8);
        let r = projected(rng, &[c_out, t]);
        GradCase {
            inputs: vec![
                random_tensor(rng, &[c_in, t], 1.0),
                random_tensor(rng, &[c_out, c_in, k], 1.0),
                random_tensor(rng, &[c_out], 1.0),
            ],
            f: Box::new(move |g, v| {
                let y = g.conv1d(v[0], v[1], Some(v[2]), Padding::Same, 1).unwrap();
                dot_sum(g, y, &r)
            }),
        }
    }

    pub fn causal_dilated_conv(rng: &mut ChaCha8Rng) -> GradCase {
        let c_in = rng.random_range(1..4);
        let c_out = rng.random_range(1..4);
        let k = rng.random_range(2..5);
        let d = [1, 2, 4][rng.random_range(0..3)];
        let t = rng.random_range(4..14);
        let r = projected(rng, &[c_out, t]);
        GradCase {
            inputs: vec![
                random_tensor(rng, &[c_in, t], 1.0),
                random_tensor(rng, &[c_out, c_in, k], 1.0),
                random_tensor(rng, &[c_out], 1.0),
            ],
            f: Box::new(move |g, v| {
                let y = g
                    .conv1d(v[0], v[1], Some(v[2]), Padding::Causal, d)
                    .unwrap();
                dot_sum(g, y, &r)
            }),
        }
    }

    pub fn depthwise_separable(rng: &mut ChaCha8Rng) -> GradCase {
        let c_in = rng.random_range(1..4);
        let c_out = rng.random_range(1..4);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let causal = rng.random_bool(0.5);
        let d = if causal { rng.random_range(1..4) } else { 1 };
        let t = rng.random_range(3..12);
        let r = projected(rng, &[c_out, t]);
        GradCase {
            inputs: vec![
                random_tensor(rng, &[c_in, t], 1.0),
                random_tensor(rng, &[c_in, k], 1.0),
                random_tensor(rng, &[c_in], 1.0),
                random_tensor(rng, &[c_out, c_in, 1], 1.0),
                random_tensor(rng, &[c_out], 1.0),
            ],
            f: Box::new(move |g, v| {
                let w = SeparableWeights {
                    depth_w: v[1],
                    depth_b: Some(v[2]),
                    point_w: v[3],
                    point_b: Some(v[4]),
                };
                let pad = if causal {
                    Padding::Causal
                } else {
                    Padding::Same
                };
                let y = depthwise_separable_conv1d(g, v[0], &w, pad, d).unwrap();
                dot_sum(g, y, &r)
            }),
        }
    }

    fn recurrent_inputs(
        rng: &mut ChaCha8Rng,
        cell: CellType,
        c: usize,
        u: usize,
        t: usize,
        dirs: usize,
    ) -> Vec<Tensor> {
        let gates = match cell {
            CellType::Lstm => 4,
            CellType::Gru => 3,
        };
        let mut inputs = vec![random_tensor(rng, &[c, t], 1.0)];
        for _ in 0..dirs {
            inputs.push(random_tensor(rng, &[gates * u, c], 0.8));
            inputs.push(random_tensor(rng, &[gates * u, u], 0.8));
            inputs.push(random_tensor(rng, &[gates * u], 0.5));
            if cell == CellType::Gru {
                inputs.push(random_tensor(rng, &[gates * u], 0.5));
            }
        }
        inputs
    }

    fn weights_at(cell: CellType, v: &[Var], dir: usize) -> RecurrentWeights {
        let per = if cell == CellType::Gru { 4 } else { 3 };
        let base = 1 + dir * per;
        RecurrentWeights {
            cell,
            w_ih: v[base],
            w_hh: v[base + 1],
            b_ih: v[base + 2],
            b_hh: (cell == CellType::Gru).then(|| v[base + 3]),
        }
    }

    pub fn recurrent(rng: &mut ChaCha8Rng, cell: CellType) -> GradCase {
        let c = rng.random_range(1..4);
        let u = rng.random_range(1..5);
        let t = rng.random_range(1..9);
        let reverse = rng.random_bool(0.5);
        let r = projected(rng, &[u, t]);
        GradCase {
            inputs: recurrent_inputs(rng, cell, c, u, t, 1),
            f: Box::new(move |g, v| {
                let w = weights_at(cell, v, 0);
                let y = blinkseg::nn::layers::recurrent_sequence(g, v[0], &w, reverse).unwrap();
                dot_sum(g, y, &r)
            }),
        }
    }

    pub fn bidirectional(rng: &mut ChaCha8Rng, cell: CellType) -> GradCase {
        let c = rng.random_range(1..4);
        let u = rng.random_range(1..4);
        let t = rng.random_range(1..8);
        let r = projected(rng, &[2 * u, t]);
        GradCase {
            inputs: recurrent_inputs(rng, cell, c, u, t, 2),
            f: Box::new(move |g, v| {
                let (fw, bw) = (weights_at(cell, v, 0), weights_at(cell, v, 1));
                let y = bidirectional_wrap(g, v[0], &fw, &bw).unwrap();
                dot_sum(g, y, &r)
            }),
        }
    }

    /// Per-timestep 1x1 head to two logits.
    pub fn linear_head(rng: &mut ChaCha8Rng) -> GradCase {
        let c = rng.random_range(1..9);
        let t = rng.random_range(1..12);
        let r = projected(rng, &[2, t]);
        GradCase {
            inputs: vec![
                random_tensor(rng, &[c, t], 1.0),
                random_tensor(rng, &[2, c, 1], 1.0),
                random_tensor(rng, &[2], 1.0),
            ],
            f: Box::new(move |g, v| {
                let y = g.conv1d(v[0], v[1], Some(v[2]), Padding::Same, 1).unwrap();
                dot_sum(g, y, &r)
            }),
        }
    }

    pub fn weighted_loss(rng: &mut ChaCha8Rng) -> GradCase {
        let t = rng.random_range(1..20);
        let labels: Vec<u8> = (0..t).map(|_| u8::from(rng.random_bool(0.3))).collect();
        let w = [rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)];
        GradCase {
            inputs: vec![random_tensor(rng, &[2, t], 3.0)],
            f: Box::new(move |g, v| g.weighted_cross_entropy(v[0], &labels, w).unwrap()),
        }
    }

    /// Every layer family with its case generator.
    pub fn all() -> Vec<(&'static str, CaseBuilder)> {
        vec![
            ("standard conv", standard_conv),
            ("depthwise-separable conv", depthwise_separable),
            ("causal dilated conv", causal_dilated_conv),
            ("LSTM", |r| recurrent(r, CellType::Lstm)),
            ("GRU", |r| recurrent(r, CellType::Gru)),
            ("BiLSTM wrapper", |r| bidirectional(r, CellType::Lstm)),
            ("BiGRU wrapper", |r| bidirectional(r, CellType::Gru)),
            ("linear head", linear_head),
            ("weighted cross-entropy", weighted_loss),
        ]
    }
}
