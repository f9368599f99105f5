use dermgan_core::codec::{synth_samples, to_model_space, ModelSample};
use dermgan_core::graph::Graph;
use dermgan_core::nn::checkpoint::encode;
use dermgan_core::nn::{NetConfig, ParamStore};
use dermgan_core::objectives::{
    adam_step, batch, loss_discriminator, loss_generator, read_metrics, train, AdamConfig, AdamState,
    RunOutputs, TrainConfig, Trainer,
};
use dermgan_core::{Error, RngState, Tensor};

fn data(n: usize, size: u32, seed: u64) -> Vec<ModelSample> {
    synth_samples(n, size, seed).iter().map(to_model_space).collect()
}

fn small_net(size: usize, disc: usize) -> NetConfig {
    NetConfig::new(size, disc).unwrap().with_base_width(8)
}

fn bits(p: &ParamStore) -> Vec<u8> {
    encode(p).unwrap()
}

#[test]
fn first_adam_step_moves_by_lr() {
    let cfg = AdamConfig::default();
    for g in [3.0f32, -0.01, 250.0] {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(1.0)).unwrap();
        let mut grads = ParamStore::new();
        grads.insert("w", Tensor::scalar(g)).unwrap();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &grads, &mut state, &cfg).unwrap();
        let moved = p.get("w").unwrap().item() as f64 - 1.0;
        assert!((moved + cfg.lr * (g as f64).signum()).abs() < 1e-6, "g {g}: moved {moved}");
        assert_eq!(state.steps(), 1);
    }
}

#[test]
fn adam_matches_reference_recurrence() {
    let cfg = AdamConfig::default();
    let grads_seq = [0.5, -1.0, 2.0, 0.25, -0.75];
    let mut p = ParamStore::new();
    p.insert("w", Tensor::scalar(0.3)).unwrap();
    let mut state = AdamState::new(&p);
    let (mut w, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
    for (t, &g) in grads_seq.iter().enumerate() {
        let mut grads = ParamStore::new();
        grads.insert("w", Tensor::scalar(g as f32)).unwrap();
        adam_step(&mut p, &grads, &mut state, &cfg).unwrap();
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let t = t as i32 + 1;
        let mhat = m / (1.0 - cfg.beta1.powi(t));
        let vhat = v / (1.0 - cfg.beta2.powi(t));
        w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        assert!((p.get("w").unwrap().item() as f64 - w).abs() < 1e-6);
    }
}

#[test]
fn zero_gradient_leaves_parameters() {
    let mut p = ParamStore::new();
    p.insert("a", Tensor::full(&[3], 0.7)).unwrap();
    let before = p.clone();
    let mut grads = ParamStore::new();
    grads.insert("a", Tensor::zeros(&[3])).unwrap();
    let mut state = AdamState::new(&p);
    for _ in 0..3 {
        adam_step(&mut p, &grads, &mut state, &AdamConfig::default()).unwrap();
    }
    assert_eq!(p, before);
    assert_eq!(state.steps(), 3);
}

#[test]
fn missing_gradient_names_parameter() {
    let mut p = ParamStore::new();
    p.insert("g.enc1.w", Tensor::zeros(&[1])).unwrap();
    let mut state = AdamState::new(&p);
    let err = adam_step(&mut p, &ParamStore::new(), &mut state, &AdamConfig::default()).unwrap_err();
    assert!(matches!(err, Error::MissingGradient(ref n) if n == "g.enc1.w"));
    assert_eq!(state.steps(), 0);
}

#[test]
fn loss_reference_values() {
    let mut g = Graph::<f64>::new();
    let zeros = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let d = loss_discriminator(&mut g, zeros, zeros, 0.5).unwrap();
    assert!((g.value(d).item() - std::f64::consts::LN_2).abs() < 1e-12);

    let real = g.constant(Tensor::full(&[1, 6, 3, 3], 20.0));
    let fake = g.constant(Tensor::full(&[1, 6, 3, 3], -20.0));
    let d = loss_discriminator(&mut g, real, fake, 0.5).unwrap();
    assert!((g.value(d).item() - 2.0611536e-9).abs() < 1e-15);

    let y = g.constant(Tensor::from_fn(&[1, 6, 2, 2], |i| if i % 3 == 0 { 1.0 } else { -1.0 }));
    let neg = g.scale(y, -1.0);
    let l = loss_generator(&mut g, zeros, neg, y, 100.0).unwrap();
    assert_eq!(g.value(l.l1).item(), 2.0);
    assert!((g.value(l.adv).item() - std::f64::consts::LN_2).abs() < 1e-12);
    let same = loss_generator(&mut g, zeros, y, y, 0.0).unwrap();
    assert_eq!(g.value(same.l1).item(), 0.0);
    assert_eq!(g.value(same.total).item(), g.value(same.adv).item());

    let other = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(loss_discriminator(&mut g, zeros, other, 0.5).is_err());
}

#[test]
fn total_loss_is_linear_in_lambda() {
    let d = data(1, 32, 0);
    let (x, y) = batch(&d, &[0]).unwrap();
    let rng = RngState::new(5);
    let mut prev_share = 0.0;
    for lambda in [0.0, 1.0, 10.0, 100.0, 1000.0] {
        let cfg = TrainConfig { lambda_l1: lambda, seed: 3, ..Default::default() };
        let t = Trainer::new(small_net(32, 1), cfg).unwrap();
        let v = t.generator_loss(&x, &y, &mut rng.clone()).unwrap();
        let weighted = v.total - v.adv;
        assert!((weighted - lambda * v.l1).abs() <= 1e-5 * weighted.abs().max(1.0), "lambda {lambda}");
        let share = weighted / v.total;
        assert!(share >= prev_share);
        prev_share = share;
    }
}

#[test]
fn steps_update_only_their_own_network() {
    let d = data(1, 32, 1);
    let (x, y) = batch(&d, &[0]).unwrap();
    let mut t = Trainer::new(small_net(32, 6), TrainConfig { seed: 2, ..Default::default() }).unwrap();
    let fake = t.generate(&x, &mut RngState::new(0)).unwrap();

    let (g0, d0) = (bits(&t.g_params), bits(&t.d_params));
    t.discriminator_step(&x, &y, &fake).unwrap();
    assert_eq!(bits(&t.g_params), g0);
    assert_ne!(bits(&t.d_params), d0);

    let d1 = bits(&t.d_params);
    t.generator_step(&x, &y, &mut RngState::new(0)).unwrap();
    assert_eq!(bits(&t.d_params), d1);
    assert_ne!(bits(&t.g_params), g0);
    assert_eq!((t.opt_d.steps(), t.opt_g.steps()), (1, 1));
}

#[test]
fn minmax_single_steps_descend() {
    let d = data(2, 32, 4);
    for seed in 0..5 {
        let cfg = TrainConfig { lr: 1e-5, seed, ..Default::default() };
        let mut t = Trainer::new(small_net(32, 1), cfg).unwrap();
        let (x, y) = batch(&d, &[seed as usize % 2]).unwrap();
        let draws = RngState::new(100 + seed);
        let fake = t.generate(&x, &mut draws.clone()).unwrap();

        let before = t.discriminator_loss(&x, &y, &fake).unwrap();
        t.discriminator_step(&x, &y, &fake).unwrap();
        let after = t.discriminator_loss(&x, &y, &fake).unwrap();
        assert!(after < before, "seed {seed}: D loss {before} -> {after}");

        let before = t.generator_loss(&x, &y, &mut draws.clone()).unwrap().total;
        t.generator_step(&x, &y, &mut draws.clone()).unwrap();
        let after = t.generator_loss(&x, &y, &mut draws.clone()).unwrap().total;
        assert!(after < before, "seed {seed}: G loss {before} -> {after}");
    }
}

#[test]
fn memorizes_a_single_sample() {
    let d = data(1, 32, 6);
    let (x, y) = batch(&d, &[0]).unwrap();
    let mut t = Trainer::new(NetConfig::new(32, 1).unwrap(), TrainConfig { seed: 1, ..Default::default() }).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..200 {
        last = t.train_step(&x, &y).unwrap().loss_g_l1;
    }
    assert!(last < 0.05, "l1 after 200 steps: {last}");
}

#[test]
fn fifty_steps_stay_finite() {
    let d = data(4, 32, 8);
    let mut t = Trainer::new(small_net(32, 6), TrainConfig { seed: 8, ..Default::default() }).unwrap();
    for i in 0..50 {
        let (x, y) = batch(&d, &[i % 4]).unwrap();
        let r = t.train_step(&x, &y).unwrap();
        for v in [r.loss_d, r.loss_g_total, r.loss_g_adv, r.loss_g_l1] {
            assert!(v.is_finite(), "step {i}: {r:?}");
        }
    }
    assert_eq!(t.steps(), 50);
}

#[test]
fn batched_steps() {
    let d = data(3, 32, 9);
    let (x, y) = batch(&d, &[0, 2]).unwrap();
    assert_eq!(x.shape(), [2, 3, 32, 32]);
    assert_eq!(y.shape(), [2, 6, 32, 32]);
    let mut t = Trainer::new(small_net(32, 1), TrainConfig { batch_size: 2, ..Default::default() }).unwrap();
    assert!(t.train_step(&x, &y).unwrap().loss_d.is_finite());
}

#[test]
fn epoch_runs_one_step_per_batch() {
    let d = data(4, 32, 2);
    let cfg = TrainConfig { epochs: 1, ..Default::default() };
    let out = train(&d, &cfg, small_net(32, 1), None).unwrap();
    assert_eq!(out.trainer.steps(), 4);
    assert_eq!(out.log.len(), 1);

    let cfg = TrainConfig { epochs: 2, batch_size: 3, ..Default::default() };
    let out = train(&d, &cfg, small_net(32, 1), None).unwrap();
    assert_eq!(out.trainer.steps(), 4);
}

#[test]
fn empty_dataset_is_rejected() {
    let err = train(&[], &TrainConfig::default(), small_net(32, 1), None).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        TrainConfig { lr: 0.0, ..Default::default() },
        TrainConfig { beta1: 1.0, ..Default::default() },
        TrainConfig { beta2: -0.1, ..Default::default() },
        TrainConfig { lambda_l1: -1.0, ..Default::default() },
        TrainConfig { epochs: 0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
    ];
    for cfg in bad {
        assert!(matches!(Trainer::new(small_net(32, 1), cfg.clone()), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn runs_are_reproducible() {
    let d = data(4, 32, 3);
    let cfg = TrainConfig { epochs: 2, seed: 11, checkpoint_every: Some(1), ..Default::default() };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let outs: Vec<_> = dirs
        .iter()
        .map(|dir| {
            let o = RunOutputs { dir: dir.path().to_path_buf() };
            train(&d, &cfg, small_net(32, 6), Some(&o)).unwrap();
            o
        })
        .collect();
    let read = |o: &RunOutputs, f: &str| std::fs::read(o.dir.join(f)).unwrap();
    for f in [RunOutputs::METRICS, RunOutputs::CHECKPOINT, "checkpoint_epoch0001.bin", "checkpoint_epoch0002.bin"] {
        assert_eq!(read(&outs[0], f), read(&outs[1], f), "{f}");
    }
    assert_eq!(read(&outs[0], "checkpoint_epoch0002.bin"), read(&outs[0], RunOutputs::CHECKPOINT));

    let log = read_metrics(&outs[0].metrics_path()).unwrap();
    assert_eq!(log.iter().map(|m| m.epoch).collect::<Vec<_>>(), [1, 2]);
    let text = String::from_utf8(read(&outs[0], RunOutputs::METRICS)).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["epoch", "loss_d", "loss_g_adv", "loss_g_l1", "loss_g_total"] {
        assert!(first.get(key).is_some(), "{key}");
    }

    let other = train(&d, &TrainConfig { seed: 12, ..cfg.clone() }, small_net(32, 6), None).unwrap();
    assert_ne!(other.log, log);
}
