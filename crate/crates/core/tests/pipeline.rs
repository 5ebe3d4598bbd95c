use nleq::channel::{generate_frames, ChannelConfig};
use nleq::constellation::Constellation;
use nleq::nn::Mlp;
use nleq::trainer::{evaluate, sweep, train, ExperimentConfig, TrainingParams, Variant};
use nleq::Error;

fn config(variant: Variant, channel: ChannelConfig, frame_len: usize, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        bits_per_symbol: 3,
        channel,
        taps: 17,
        variant,
        training: TrainingParams {
            epochs,
            ..TrainingParams::default()
        },
        seed: 99,
        n_frames: 2,
        frame_len,
    }
}

fn isi(a3: f64, snr_db: f64) -> ChannelConfig {
    ChannelConfig {
        isi_taps: vec![0.9, 0.3, -0.1],
        nl_a2: 0.0,
        nl_a3: a3,
        snr_db,
        seed: 5,
    }
}

fn frames(cfg: &ExperimentConfig, n_frames: usize) -> Vec<nleq::SymbolFrame> {
    let c = cfg.constellation().unwrap();
    generate_frames(&c, &cfg.channel, n_frames, cfg.frame_len).unwrap()
}

#[test]
fn training_is_deterministic() {
    for variant in [Variant::EqMsex, Variant::Joint2] {
        let cfg = config(variant, isi(0.1, 18.0), 3000, 4);
        let data = frames(&cfg, 2);
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.best_epoch, b.best_epoch);
    }
}

#[test]
fn gradients_only_read_the_training_frame() {
    let cfg = config(Variant::EqMse, isi(0.05, 20.0), 2000, 3);
    let data = frames(&cfg, 5);
    let run = train(&cfg, &data).unwrap();
    let train_examples = 2000 - 16;
    assert_eq!(run.gradient_reads.len(), 1);
    assert_eq!(run.gradient_reads.get(&0), Some(&(3 * train_examples)));
    let ids: Vec<usize> = run.reports.iter().map(|r| r.frame_id).collect();
    assert_eq!(ids, vec![1, 2, 3, 4]);
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    for variant in [Variant::EqMse, Variant::Joint1] {
        let cfg = config(variant, isi(0.1, 18.0), 2000, 2);
        let data = frames(&cfg, 3);
        let run = train(&cfg, &data).unwrap();
        let path = dir.path().join(format!("{variant}.ckpt"));
        run.model.save(&path, "# test").unwrap();
        let loaded = Mlp::load(&path).unwrap();
        let c = Constellation::make_ask(3).unwrap();
        let a = evaluate(&run.model, variant, &data[1..], &c, 17).unwrap();
        let b = evaluate(&loaded, variant, &data[1..], &c, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, run.reports);
    }
}

#[test]
fn linear_equalizer_learns_a_delta_on_the_identity_channel() {
    let cfg = config(Variant::Linear, ChannelConfig::identity(20.0, 6), 20_000, 30);
    let run = train(&cfg, &frames(&cfg, 2)).unwrap();
    let w = run.model.weights(0);
    for (k, &v) in w.iter().enumerate() {
        if k == 8 {
            assert!(v >= 0.9, "center tap {v}");
        } else {
            assert!(v.abs() <= 0.05, "tap {k} = {v}");
        }
    }
}

#[test]
fn msex_loss_settles_on_identity_channel() {
    // σ² is refreshed every epoch and the objective moves with it, so the
    // trace only settles once σ² does; 50k symbols get there by epoch 10.
    let cfg = config(Variant::EqMsex, ChannelConfig::identity(30.0, 7), 50_000, 30);
    let run = train(&cfg, &frames(&cfg, 2)).unwrap();
    for w in run.loss_trace[10..].windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "loss rose from {} to {}", w[0], w[1]);
    }
    assert_eq!(run.sigma2_trace[0], 0.0);
    assert!(run.sigma2_trace[1..].iter().all(|&s| s > 0.0));
}

#[test]
fn numerical_blowup_names_epoch_and_layer() {
    let mut cfg = config(Variant::EqMse, isi(0.1, 18.0), 2000, 5);
    cfg.training.learning_rate = 1e150;
    let err = train(&cfg, &frames(&cfg, 2)).unwrap_err();
    match &err {
        Error::Numerical { epoch, layer, .. } => {
            assert!(epoch.is_some() && layer.is_some(), "{err}");
        }
        other => panic!("unexpected error {other}"),
    }
    let text = err.to_string();
    assert!(text.contains("epoch") && text.contains("layer"), "{text}");
}

#[test]
fn sweep_cells_are_complete_ordered_and_independently_seeded() {
    let base = config(Variant::EqMse, isi(0.0, 16.0), 1500, 2);
    let a3 = [0.0, 0.1];
    let cells = sweep(&base, &a3, &Variant::ALL, 2).unwrap();
    assert_eq!(cells.len(), 10);
    for (k, cell) in cells.iter().enumerate() {
        assert_eq!(cell.point_index, k / 5);
        assert_eq!(cell.variant, Variant::ALL[k % 5]);
        assert!(cell.outcome.is_ok());
    }
    let mut seeds: Vec<u64> = cells.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 10);
    // Same point, same frames: channel seeds agree within a point only.
    let ch = |k: usize| cells[k].outcome.as_ref().unwrap().config.channel.seed;
    assert_eq!(ch(0), ch(4));
    assert_ne!(ch(0), ch(5));
    assert!(sweep(&base, &[], &Variant::ALL, 1).is_err());
}

#[test]
fn sweep_records_failed_cells() {
    let mut base = config(Variant::EqMse, isi(0.0, 16.0), 1500, 2);
    base.training.learning_rate = 1e150;
    let cells = sweep(&base, &[0.0], &[Variant::EqMse, Variant::Linear], 1).unwrap();
    assert!(cells[0].outcome.is_err());
}

#[test]
fn all_equalizers_agree_on_a_linear_channel() {
    let base = config(Variant::EqMse, isi(0.0, 15.0), 20_000, 25);
    let cells = sweep(&base, &[0.0], &Variant::ALL, 1).unwrap();
    let bers: Vec<f64> = cells.iter().map(|c| c.outcome.as_ref().unwrap().summary().ber).collect();
    let lo = bers.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = bers.iter().cloned().fold(0.0, f64::max);
    assert!(lo > 0.0, "{bers:?}");
    assert!(hi <= 2.0 * lo, "{bers:?}");
}
