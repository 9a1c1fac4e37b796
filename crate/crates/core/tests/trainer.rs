mod support;

use blinkseg::data::{select_channels, ChannelConfig};
use blinkseg::nn::{CellKind, HyperParams, Model, ModelKind};
use blinkseg::synth::{generate, SynthConfig};
use blinkseg::tensor::Tensor;
use blinkseg::train::{
    example_gradients, loss, train, Checkpoint, ClassWeights, Example, NormalizationInfo,
    TrainConfig,
};
use blinkseg::Error;
use rand::Rng;
use support::{random_tensor, rng};

fn smallest_cnn_st() -> HyperParams {
    HyperParams::conv(ModelKind::CnnSt, 5, 1, 1, 8)
}

/// A noiseless two-second recording with one blink, as a single example.
fn single_blink(seed: u64) -> Example {
    let cfg = SynthConfig {
        subject_id: "s".into(),
        duration_s: 2.0,
        blink_rate_per_min: 30.0,
        noise_sd_uv: 0.0,
        seed,
        ..SynthConfig::default()
    };
    let r = generate(&cfg).unwrap().normalized();
    let x = select_channels(&r, &ChannelConfig::standard(1).unwrap()).unwrap();
    Example::new(x, r.labels).unwrap()
}

fn small_hp(kind: ModelKind, rng: &mut impl Rng) -> HyperParams {
    let ch = [1, 3][rng.random_range(0..2)];
    let k = [3, 5][rng.random_range(0..2)];
    let f = rng.random_range(2..5);
    let u = rng.random_range(2..5);
    if kind.is_hybrid() {
        let cell = CellKind::ALL[rng.random_range(0..4)];
        HyperParams::hybrid(kind, k, 1, ch, f, 1, u, cell)
    } else if kind.pure_cell().is_some() {
        HyperParams::recurrent(kind, ch, 1, u)
    } else {
        HyperParams::conv(kind, k, rng.random_range(1..3), ch, f)
    }
}

fn random_example(channels: usize, t: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Example {
    let x = random_tensor(rng, &[channels, t], 1.0);
    let labels = (0..t).map(|_| u8::from(rng.random_bool(0.3))).collect();
    Example::new(x, labels).unwrap()
}

#[test]
fn loss_decreases_monotonically_after_epoch_five_in_most_seeds() {
    let cfg = |seed| TrainConfig {
        epochs: 50,
        batch_size: 1,
        dropout_rate: 0.0,
        patience: 50,
        seed,
        ..TrainConfig::default()
    };
    let mut monotone = 0;
    for seed in 0..10 {
        let ex = single_blink(100 + seed);
        let out = train(&smallest_cnn_st(), &[ex], &[], &cfg(seed)).unwrap();
        assert_eq!(out.history.len(), 50);
        let losses: Vec<f64> = out.history.iter().map(|h| h.loss).collect();
        if losses[4..].windows(2).all(|w| w[1] < w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone >= 9, "{monotone}/10 seeds decreased monotonically");
}

#[test]
fn fixed_seed_gives_bitwise_identical_runs() {
    let mut r = rng(7);
    let data: Vec<Example> = (0..6).map(|_| random_example(3, 96, &mut r)).collect();
    let search = vec![random_example(3, 128, &mut r)];
    let hp = HyperParams::hybrid(ModelKind::CnnRnnSt, 5, 1, 3, 4, 1, 4, CellKind::BiLstm);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 4,
        dropout_rate: 0.2,
        search_window_len: 64,
        seed: 11,
        ..TrainConfig::default()
    };
    let a = train(&hp, &data, &search, &cfg).unwrap();
    let b = train(&hp, &data, &search, &cfg).unwrap();
    assert_eq!(
        a.checkpoint.to_bytes().unwrap(),
        b.checkpoint.to_bytes().unwrap()
    );
    assert_eq!(a.history, b.history);
    let c = train(&hp, &data, &search, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(
        a.checkpoint.to_bytes().unwrap(),
        c.checkpoint.to_bytes().unwrap()
    );
}

#[test]
fn one_small_step_decreases_single_example_loss() {
    let mut r = rng(21);
    for case in 0..20 {
        let kind = ModelKind::ALL[case % ModelKind::ALL.len()];
        let hp = small_hp(kind, &mut r);
        let t = r.random_range(16..48);
        let ex = random_example(hp.num_channels, t, &mut r);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            learning_rate: 1e-4,
            dropout_rate: 0.0,
            class_weights: Some(ClassWeights::EQUAL),
            seed: case as u64,
            ..TrainConfig::default()
        };
        let before = Model::new(&hp, cfg.seed).unwrap();
        let after = train(&hp, std::slice::from_ref(&ex), &[], &cfg)
            .unwrap()
            .checkpoint
            .model()
            .unwrap();
        let l0 = loss(
            &before.logits(&ex.x).unwrap(),
            &ex.labels,
            ClassWeights::EQUAL,
        )
        .unwrap();
        let l1 = loss(
            &after.logits(&ex.x).unwrap(),
            &ex.labels,
            ClassWeights::EQUAL,
        )
        .unwrap();
        assert!(l1 < l0, "case {case} {kind}: {l0} -> {l1}");
    }
}

#[test]
fn common_weight_factor_scales_loss_and_keeps_gradient_direction() {
    let mut r = rng(33);
    for case in 0..10 {
        let kind = ModelKind::ALL[case % ModelKind::ALL.len()];
        let hp = small_hp(kind, &mut r);
        let model = Model::new(&hp, case as u64).unwrap();
        let ex = random_example(hp.num_channels, 32, &mut r);
        let w = ClassWeights {
            no_blink: r.random_range(0.5..2.0),
            blink: r.random_range(0.5..4.0),
        };
        let factor = r.random_range(0.1..10.0);
        let scaled = ClassWeights {
            no_blink: w.no_blink * factor,
            blink: w.blink * factor,
        };
        let (l1, g1) = example_gradients(&model, &ex, w, None).unwrap();
        let (l2, g2) = example_gradients(&model, &ex, scaled, None).unwrap();
        assert!(
            (l2 - factor * l1).abs() <= 1e-12 * l2.abs().max(1.0),
            "{l1} {l2}"
        );
        let a: Vec<f64> = g1.concat();
        let b: Vec<f64> = g2.concat();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cosine = dot / (na * nb);
        assert!(
            (cosine - 1.0).abs() <= 1e-12,
            "case {case}: cosine {cosine}"
        );
    }
}

#[test]
fn winner_checkpoint_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("winner.ckpt");
    let hp = HyperParams::reference_winner(5);
    let model = Model::new(&hp, 3).unwrap();
    let ckpt = Checkpoint::new(
        model.clone(),
        NormalizationInfo::default(),
        &TrainConfig::default(),
    );
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let restored = loaded.model().unwrap();
    let mut r = rng(5);
    for _ in 0..10 {
        let x: Tensor = random_tensor(&mut r, &[5, 64], 2.0);
        let (a, b) = (model.logits(&x).unwrap(), restored.logits(&x).unwrap());
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn damaged_files_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let hp = HyperParams::recurrent(ModelKind::Gru, 1, 2, 8);
    let ckpt = Checkpoint::new(
        Model::new(&hp, 0).unwrap(),
        NormalizationInfo::default(),
        &TrainConfig::default(),
    );
    ckpt.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    std::fs::write(&path, b"not a checkpoint at all").unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    assert!(matches!(
        Checkpoint::load(&dir.path().join("missing")),
        Err(Error::Io { .. })
    ));
}
