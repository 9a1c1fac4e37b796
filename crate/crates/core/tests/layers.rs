mod support;

use blinkseg::nn::layers::{
    bidirectional_wrap, depthwise_separable_conv1d, recurrent_sequence, rnn_cell_step, tcn_block,
    CellState, ConvWeights, RecurrentWeights, Residual, SeparableWeights,
};
use blinkseg::nn::{tcn_receptive_field, CellKind, CellType, HyperParams, Model, ModelKind};
use blinkseg::tensor::{Graph, Padding, Tensor, Var};
use rand::Rng;
use support::{cases, gradient_error, random_tensor, rng, sampled_gradient_error};

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut r = rng(1);
    let inputs = vec![
        random_tensor(&mut r, &[4, 5], 1.0),
        random_tensor(&mut r, &[5, 3], 1.0),
    ];
    let proj = random_tensor(&mut r, &[4, 3], 1.0);
    let err = gradient_error(&inputs, &move |g: &mut Graph, v: &[Var]| {
        let m = g.matmul(v[0], v[1]).unwrap();
        let p = g.constant(proj.clone());
        let e = g.mul(m, p).unwrap();
        g.sum(e)
    });
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn tanh_gradient_on_random_scalars() {
    let mut r = rng(2);
    for _ in 0..100 {
        let x = vec![random_tensor(&mut r, &[1], 3.0)];
        let err = gradient_error(&x, &|g: &mut Graph, v: &[Var]| g.tanh(v[0]));
        assert!(err <= 1e-6, "{err}");
    }
}

#[test]
fn conv_sigmoid_sum_composite() {
    let mut r = rng(3);
    let inputs = vec![
        random_tensor(&mut r, &[3, 20], 1.0),
        random_tensor(&mut r, &[4, 3, 5], 0.5),
    ];
    let err = gradient_error(&inputs, &|g: &mut Graph, v: &[Var]| {
        let y = g.conv1d(v[0], v[1], None, Padding::Same, 1).unwrap();
        let s = g.sigmoid(y);
        g.sum(s)
    });
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn every_layer_family_passes_gradient_checks() {
    let mut r = rng(4);
    for (name, make) in cases::all() {
        for _ in 0..20 {
            let case = make(&mut r);
            let err = gradient_error(&case.inputs, &*case.f);
            assert!(err <= 1e-4, "{name}: {err}");
        }
    }
}

#[test]
fn loss_gradient_tight() {
    let mut r = rng(5);
    for _ in 0..20 {
        let case = cases::weighted_loss(&mut r);
        let err = gradient_error(&case.inputs, &*case.f);
        assert!(err <= 1e-5, "{err}");
    }
}

#[test]
fn eight_unit_lstm_over_sixteen_steps() {
    let mut r = rng(6);
    let inputs = vec![
        random_tensor(&mut r, &[3, 16], 1.0),
        random_tensor(&mut r, &[32, 3], 0.5),
        random_tensor(&mut r, &[32, 8], 0.5),
        random_tensor(&mut r, &[32], 0.5),
    ];
    let proj = random_tensor(&mut r, &[8, 16], 1.0);
    let err = gradient_error(&inputs, &move |g: &mut Graph, v: &[Var]| {
        let y = g.lstm(v[0], v[1], v[2], v[3], false).unwrap();
        let p = g.constant(proj.clone());
        let e = g.mul(y, p).unwrap();
        g.sum(e)
    });
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut r = rng(7);
    for causal in [false, true] {
        for d in [1, 2, 3] {
            let x = random_tensor(&mut r, &[3, 32], 1.0);
            let w = random_tensor(&mut r, &[4, 3, 5], 1.0);
            let b = random_tensor(&mut r, &[4], 1.0);
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.leaf(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
            let pad = if causal {
                Padding::Causal
            } else {
                Padding::Same
            };
            let y = g.conv1d(xv, wv, Some(bv), pad, d).unwrap();
            let left = if causal { 4 * d } else { 2 * d };
            let want = support::naive_conv1d(
                &support::rows(&x),
                &support::kernel3(&w),
                Some(b.data()),
                d,
                left,
            );
            for (got, want) in support::rows(g.value(y)).iter().zip(&want) {
                for (a, b) in got.iter().zip(want) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn depthwise_matches_grouped_then_pointwise_composition() {
    let mut r = rng(8);
    for _ in 0..10 {
        let (c_in, c_out, k) = (r.random_range(1..5), r.random_range(1..5), 5);
        let x = random_tensor(&mut r, &[c_in, 24], 1.0);
        let dw = random_tensor(&mut r, &[c_in, k], 1.0);
        let pw = random_tensor(&mut r, &[c_out, c_in, 1], 1.0);
        let mut g = Graph::new();
        let (xv, dv, pv) = (g.leaf(x.clone()), g.leaf(dw.clone()), g.leaf(pw.clone()));
        let w = SeparableWeights {
            depth_w: dv,
            depth_b: None,
            point_w: pv,
            point_b: None,
        };
        let y = depthwise_separable_conv1d(&mut g, xv, &w, Padding::Same, 1).unwrap();
        // Grouped conv: each channel is an independent single-channel conv.
        let xr = support::rows(&x);
        let depth: Vec<Vec<f64>> = (0..c_in)
            .map(|c| {
                support::naive_conv1d(&[xr[c].clone()], &[vec![dw.row(c).to_vec()]], None, 1, 2)
                    .remove(0)
            })
            .collect();
        let want = support::naive_conv1d(&depth, &support::kernel3(&pw), None, 1, 0);
        for (got, want) in support::rows(g.value(y)).iter().zip(&want) {
            for (a, b) in got.iter().zip(want) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn separable_single_channel_equals_factored_standard_kernel() {
    let mut r = rng(9);
    let x = random_tensor(&mut r, &[1, 30], 1.0);
    let dw = random_tensor(&mut r, &[1, 5], 1.0);
    let pw = random_tensor(&mut r, &[3, 1, 1], 1.0);
    let factored: Vec<f64> = (0..3)
        .flat_map(|o| {
            dw.data()
                .iter()
                .map(|d| d * pw.data()[o])
                .collect::<Vec<_>>()
        })
        .collect();
    let mut g = Graph::new();
    let (xv, dv, pv) = (g.leaf(x), g.leaf(dw), g.leaf(pw));
    let fv = g.leaf(Tensor::new(vec![3, 1, 5], factored).unwrap());
    let w = SeparableWeights {
        depth_w: dv,
        depth_b: None,
        point_w: pv,
        point_b: None,
    };
    let a = depthwise_separable_conv1d(&mut g, xv, &w, Padding::Same, 1).unwrap();
    let b = g.conv1d(xv, fv, None, Padding::Same, 1).unwrap();
    for (p, q) in g.value(a).data().iter().zip(g.value(b).data()) {
        assert!((p - q).abs() <= 1e-12);
    }
}

#[test]
fn impulse_depth_and_identity_point_is_identity() {
    let mut r = rng(10);
    let x = random_tensor(&mut r, &[3, 16], 1.0);
    let mut impulse = vec![0.0; 15];
    for c in 0..3 {
        impulse[c * 5 + 2] = 1.0;
    }
    let mut eye = vec![0.0; 9];
    for c in 0..3 {
        eye[c * 3 + c] = 1.0;
    }
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let w = SeparableWeights {
        depth_w: g.leaf(Tensor::new(vec![3, 5], impulse).unwrap()),
        depth_b: None,
        point_w: g.leaf(Tensor::new(vec![3, 3, 1], eye).unwrap()),
        point_b: None,
    };
    let y = depthwise_separable_conv1d(&mut g, xv, &w, Padding::Same, 1).unwrap();
    assert_eq!(g.value(y).data(), x.data());
}

fn recurrent_weights(
    g: &mut Graph,
    r: &mut rand_chacha::ChaCha8Rng,
    cell: CellType,
    c: usize,
    u: usize,
) -> RecurrentWeights {
    let gates = if cell == CellType::Lstm { 4 } else { 3 };
    RecurrentWeights {
        cell,
        w_ih: g.param(random_tensor(r, &[gates * u, c], 0.8)),
        w_hh: g.param(random_tensor(r, &[gates * u, u], 0.8)),
        b_ih: g.param(random_tensor(r, &[gates * u], 0.5)),
        b_hh: (cell == CellType::Gru).then(|| g.param(random_tensor(r, &[gates * u], 0.5))),
    }
}

/// The elementary-op cell and the fused sequence kernel compute the same
/// values and the same weight gradients.
#[test]
fn composed_cell_steps_match_fused_kernel() {
    let mut r = rng(11);
    for cell in [CellType::Lstm, CellType::Gru] {
        for reverse in [false, true] {
            let (c, u, t) = (3, 4, 7);
            let x = random_tensor(&mut r, &[c, t], 1.0);
            let proj = random_tensor(&mut r, &[u, t], 1.0);

            let mut g = Graph::new();
            let w = recurrent_weights(&mut g, &mut r, cell, c, u);
            let xv = g.constant(x.clone());
            let fused = recurrent_sequence(&mut g, xv, &w, reverse).unwrap();
            let pv = g.constant(proj.clone());
            let e = g.mul(fused, pv).unwrap();
            let s = g.sum(e);
            g.backward(s).unwrap();

            let mut h = Graph::new();
            let w2 = RecurrentWeights {
                cell,
                w_ih: h.param(g.value(w.w_ih).clone()),
                w_hh: h.param(g.value(w.w_hh).clone()),
                b_ih: h.param(g.value(w.b_ih).clone()),
                b_hh: w.b_hh.map(|b| h.param(g.value(b).clone())),
            };
            let mut state = CellState::zeros(&mut h, cell, u);
            let mut total = None;
            let order: Vec<usize> = if reverse {
                (0..t).rev().collect()
            } else {
                (0..t).collect()
            };
            for step in order {
                let col: Vec<f64> = (0..c).map(|i| x.at(i, step)).collect();
                let xt = h.constant(Tensor::new(vec![c, 1], col).unwrap());
                let (out, next) = rnn_cell_step(&mut h, &w2, xt, state).unwrap();
                state = next;
                for k in 0..u {
                    assert!((h.value(out).data()[k] - g.value(fused).at(k, step)).abs() < 1e-12);
                }
                let pc: Vec<f64> = (0..u).map(|k| proj.at(k, step)).collect();
                let pcv = h.constant(Tensor::new(vec![u, 1], pc).unwrap());
                let e = h.mul(out, pcv).unwrap();
                let s = h.sum(e);
                total = Some(match total {
                    None => s,
                    Some(acc) => h.add(acc, s).unwrap(),
                });
            }
            h.backward(total.unwrap()).unwrap();
            for (a, b) in [(w.w_ih, w2.w_ih), (w.w_hh, w2.w_hh), (w.b_ih, w2.b_ih)] {
                assert!(support::relative_error(g.grad(a).unwrap(), h.grad(b).unwrap()) < 1e-10);
            }
        }
    }
}

#[test]
fn zero_weight_lstm_outputs_zero() {
    let mut g = Graph::new();
    let w = RecurrentWeights {
        cell: CellType::Lstm,
        w_ih: g.leaf(Tensor::zeros(&[8, 3])),
        w_hh: g.leaf(Tensor::zeros(&[8, 2])),
        b_ih: g.leaf(Tensor::zeros(&[8])),
        b_hh: None,
    };
    let x = g.leaf(random_tensor(&mut rng(12), &[3, 1], 5.0));
    let s = CellState::zeros(&mut g, CellType::Lstm, 2);
    let (out, _) = rnn_cell_step(&mut g, &w, x, s).unwrap();
    assert_eq!(g.value(out).data(), &[0.0, 0.0]);
}

#[test]
fn saturated_update_gate_keeps_previous_state() {
    let mut r = rng(13);
    let u = 3;
    let mut b_hh = vec![0.0; 3 * u];
    b_hh[u..2 * u].iter_mut().for_each(|v| *v = 40.0);
    let mut g = Graph::new();
    let w = RecurrentWeights {
        cell: CellType::Gru,
        w_ih: g.leaf(random_tensor(&mut r, &[3 * u, 2], 1.0)),
        w_hh: g.leaf(random_tensor(&mut r, &[3 * u, u], 1.0)),
        b_ih: g.leaf(Tensor::zeros(&[3 * u])),
        b_hh: Some(g.leaf(Tensor::new(vec![3 * u], b_hh).unwrap())),
    };
    let prev = g.leaf(Tensor::new(vec![u, 1], vec![0.4, -0.7, 0.1]).unwrap());
    let x = g.leaf(random_tensor(&mut r, &[2, 1], 1.0));
    let (out, _) = rnn_cell_step(&mut g, &w, x, CellState::Gru { h: prev }).unwrap();
    for (a, b) in g.value(out).data().iter().zip([0.4, -0.7, 0.1]) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn bidirectional_output(cell: CellType, x: &Tensor, seed: u64, zero: bool) -> Tensor {
    let mut r = rng(seed);
    let mut g = Graph::new();
    let mut fw = recurrent_weights(&mut g, &mut r, cell, x.rows(), 3);
    let mut bw = recurrent_weights(&mut g, &mut r, cell, x.rows(), 3);
    if zero {
        for w in [&mut fw, &mut bw] {
            w.w_ih = g.leaf(Tensor::zeros(g.value(w.w_ih).shape()));
            w.w_hh = g.leaf(Tensor::zeros(g.value(w.w_hh).shape()));
            w.b_ih = g.leaf(Tensor::zeros(g.value(w.b_ih).shape()));
            w.b_hh = w.b_hh.map(|b| g.leaf(Tensor::zeros(g.value(b).shape())));
        }
    }
    let xv = g.leaf(x.clone());
    let y = bidirectional_wrap(&mut g, xv, &fw, &bw).unwrap();
    g.value(y).clone()
}

#[test]
fn bidirectional_single_step_and_zero_weights() {
    let x1 = random_tensor(&mut rng(14), &[2, 1], 1.0);
    for cell in [CellType::Lstm, CellType::Gru] {
        // With T=1 each half sees only x[0], so sharing weights gives equal halves.
        let mut r = rng(15);
        let mut g = Graph::new();
        let w = recurrent_weights(&mut g, &mut r, cell, 2, 3);
        let xv = g.leaf(x1.clone());
        let y = bidirectional_wrap(&mut g, xv, &w, &w).unwrap();
        let d = g.value(y).data();
        assert_eq!(&d[..3], &d[3..]);

        let xt = random_tensor(&mut rng(16), &[2, 9], 1.0);
        assert!(bidirectional_output(cell, &xt, 17, true)
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}

#[test]
fn bidirectional_output_sees_the_future() {
    for cell in [CellType::Lstm, CellType::Gru] {
        let x = random_tensor(&mut rng(18), &[2, 12], 1.0);
        let mut xp = x.clone();
        xp.data_mut()[7] += 1.0; // channel 0, t = 7
        let (a, b) = (
            bidirectional_output(cell, &x, 19, false),
            bidirectional_output(cell, &xp, 19, false),
        );
        let t = 4;
        assert!((0..6).any(|row| a.at(row, t) != b.at(row, t)));
    }
}

#[test]
fn zero_conv_tcn_block_reduces_to_residual() {
    let mut r = rng(20);
    let x = random_tensor(&mut r, &[3, 10], 1.0);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let conv = |g: &mut Graph, o: usize, i: usize| ConvWeights::Standard {
        w: g.leaf(Tensor::zeros(&[o, i, 3])),
        b: Some(g.leaf(Tensor::zeros(&[o]))),
    };
    let (c1, c2) = (conv(&mut g, 3, 3), conv(&mut g, 3, 3));
    let y = tcn_block(&mut g, xv, &c1, &c2, &Residual::Identity, 2).unwrap();
    assert_eq!(g.value(y).data(), x.data());

    let pw = random_tensor(&mut r, &[4, 3, 1], 1.0);
    let pb = random_tensor(&mut r, &[4], 1.0);
    let (c1, c2) = (conv(&mut g, 4, 3), conv(&mut g, 4, 4));
    let proj = Residual::Projection {
        w: g.leaf(pw.clone()),
        b: g.leaf(pb.clone()),
    };
    let y = tcn_block(&mut g, xv, &c1, &c2, &proj, 1).unwrap();
    let want = support::naive_conv1d(
        &support::rows(&x),
        &support::kernel3(&pw),
        Some(pb.data()),
        1,
        0,
    );
    for (got, want) in support::rows(g.value(y)).iter().zip(&want) {
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn tcn_receptive_field_bounds_sensitivity() {
    for (k, blocks) in [(3, 1), (3, 2), (5, 2), (5, 3)] {
        let hp = HyperParams::conv(ModelKind::TcnSt, k, blocks, 1, 4);
        let model = Model::new(&hp, 21).unwrap();
        let rf = tcn_receptive_field(k, blocks);
        let t = rf + 10;
        let x = random_tensor(&mut rng(22), &[1, t], 1.0);
        let base = model.logits(&x).unwrap();
        let probe = t - 1;
        let outside = probe + 1 - rf - 1;
        let mut xo = x.clone();
        xo.data_mut()[outside] += 5.0;
        let yo = model.logits(&xo).unwrap();
        assert_eq!(base.at(0, probe), yo.at(0, probe), "k={k} b={blocks}");
        assert_eq!(base.at(1, probe), yo.at(1, probe));
    }
}

#[test]
fn one_random_spec_per_model_kind_passes_gradient_check() {
    let mut r = rng(23);
    for kind in ModelKind::ALL {
        let k = [3, 5][r.random_range(0..2)];
        let ch = [1, 3][r.random_range(0..2)];
        let hp = if kind.is_hybrid() {
            let cell = [
                CellKind::Lstm,
                CellKind::BiLstm,
                CellKind::Gru,
                CellKind::BiGru,
            ][r.random_range(0..4)];
            HyperParams::hybrid(kind, k, 2, ch, 3, 1, 3, cell)
        } else if kind.has_recurrent_stage() {
            HyperParams::recurrent(kind, ch, 2, 3)
        } else {
            HyperParams::conv(kind, k, 2, ch, 3)
        };
        let model = Model::new(&hp, r.random()).unwrap();
        let mut inputs = vec![random_tensor(&mut r, &[ch, 32], 1.0)];
        // Random weights rather than the init: zero biases put pre-activations
        // exactly on ReLU kinks.
        inputs.extend(
            model
                .params()
                .iter()
                .map(|p| random_tensor(&mut r, p.value.shape(), 0.6)),
        );
        let labels: Vec<u8> = (0..32).map(|_| u8::from(r.random_bool(0.3))).collect();
        let f = |g: &mut Graph, v: &[Var]| {
            let y = model.forward(g, v[0], &v[1..], None).unwrap();
            g.weighted_cross_entropy(y, &labels, [0.7, 1.8]).unwrap()
        };
        let (err, skipped) = sampled_gradient_error(&inputs, &f, 12, &mut r);
        assert!(err <= 1e-4, "{}: {err}", kind.label());
        assert!(skipped <= 3, "{}: {skipped} probes on kinks", kind.label());
    }
}
