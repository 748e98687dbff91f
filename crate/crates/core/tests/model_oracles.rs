use phaseflow::align::LogFlags;
use phaseflow::data::{synth_generate, SynthAudioConfig, SynthConfig, SynthDims, N_CLASSES};
use phaseflow::eval::{frame_accuracy, MetricOptions};
use phaseflow::features::{assemble_from_sequences, stub_embed, ChannelId, OperationRecord};
use phaseflow::model::{
    history_csv, merged_infer, shift_feed, train, ImageSpec, ModelSpec, PhaseModel, SpeechSpec, SwitchConfig,
    TcnSpec, TrainConfig, START_TOKEN,
};
use phaseflow::nn::gradcheck::check_gradients;
use phaseflow::nn::{softmax, AdamConfig, LdamConfig, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPEECH: [ChannelId; 3] = ChannelId::SPEECH;

fn stub_op(id: &str, t: usize, d_speech: usize, d_ambient: usize, dx: usize) -> OperationRecord {
    let seq = |ch, d, s| stub_embed(s, ch, d, t).unwrap();
    let log: Vec<LogFlags> = (0..t)
        .map(|i| LogFlags {
            fluoro: (i % 7 == 0) as u8,
            dsa: 0,
            moving: (i % 11 == 0) as u8,
        })
        .collect();
    assemble_from_sequences(
        id,
        seq(ChannelId::Physician, d_speech, 1),
        seq(ChannelId::Assistant, d_speech, 2),
        seq(ChannelId::Ambient, d_ambient, 3),
        seq(ChannelId::XrayImage, dx, 4),
        &log,
    )
    .unwrap()
}

fn tiny_tcn(layers: usize) -> TcnSpec {
    TcnSpec {
        stages: 2,
        layers,
        channels: 8,
        kernel: 3,
    }
}

fn tiny_speech(dims: [usize; 3]) -> ModelSpec {
    ModelSpec::Speech(SpeechSpec {
        d_model: 8,
        d_ar: 4,
        tcn: tiny_tcn(3),
        ..SpeechSpec::new(SPEECH.to_vec(), dims.to_vec())
    })
}

#[test]
fn speech_forward_shape_contract() {
    let op = stub_op("a", 180, 32, 40, 16);
    let spec = ModelSpec::Speech(SpeechSpec::new(SPEECH.to_vec(), vec![32, 32, 40]));
    let m = PhaseModel::new(spec, 0, 180).unwrap();
    let out = m.forward(&op, None).unwrap();
    assert_eq!(out.len(), 2);
    for s in &out {
        assert_eq!(s.shape(), &[N_CLASSES, 180]);
    }
    // a shorter final segment still yields one column per second
    let op = stub_op("b", 200, 32, 40, 16);
    let out = m.forward(&op, Some(&vec![1; 200])).unwrap();
    assert_eq!(out[1].shape(), &[N_CLASSES, 200]);
}

#[test]
fn image_forward_shape_contract() {
    let op = stub_op("a", 60, 8, 40, 1024);
    let spec = ImageSpec::new(1024);
    assert_eq!(spec.input_dim(), 1216);
    let m = PhaseModel::new(ModelSpec::Image(spec), 0, 180).unwrap();
    assert_eq!(m.params.get("image.input.w").unwrap().shape(), &[256, 1216, 1]);
    let out = m.forward(&op, None).unwrap();
    assert!(out.iter().all(|s| s.shape() == [N_CLASSES, 60]));

    let xray_only = ImageSpec {
        use_log: false,
        ..ImageSpec::new(1024)
    };
    assert_eq!(xray_only.input_dim(), 1024);
    let m = PhaseModel::new(ModelSpec::Image(xray_only), 0, 180).unwrap();
    assert_eq!(m.forward(&op, None).unwrap()[0].shape(), &[N_CLASSES, 60]);
}

#[test]
fn wrong_input_width_is_a_shape_error() {
    let op = stub_op("a", 30, 16, 40, 8);
    let m = PhaseModel::new(tiny_speech([16, 12, 40]), 0, 180).unwrap();
    let err = m.forward(&op, None).unwrap_err();
    assert_eq!(err.kind(), phaseflow::ErrorKind::Consistency, "{err}");
}

#[test]
fn zero_weights_give_uniform_posteriors() {
    let op = stub_op("a", 40, 6, 6, 6);
    for spec in [tiny_speech([6, 6, 6]), ModelSpec::Image(ImageSpec { d_model: 8, ..ImageSpec::new(6) })] {
        let mut m = PhaseModel::new(spec, 3, 180).unwrap();
        m.params.zero_all();
        for stage in m.forward(&op, None).unwrap() {
            let p = softmax(&stage);
            assert!(p.data().iter().all(|&x| (x - 1.0 / 9.0).abs() < 1e-6));
        }
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let op = stub_op("g", 12, 6, 6, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels: Vec<usize> = (0..12).map(|_| rng.random_range(0..N_CLASSES)).collect();
    let feed = shift_feed(START_TOKEN, &labels);
    let cfg = LdamConfig::normalized(vec![3, 1, 2, 1, 1, 1, 1, 1, 1], 0.5, 2.0);
    let specs = [
        ModelSpec::Speech(SpeechSpec {
            d_model: 5,
            d_ar: 3,
            tcn: TcnSpec {
                stages: 2,
                layers: 2,
                channels: 4,
                kernel: 3,
            },
            ..SpeechSpec::new(SPEECH.to_vec(), vec![6, 6, 6])
        }),
        ModelSpec::Image(ImageSpec {
            d_model: 5,
            d_ar: 3,
            tcn: TcnSpec {
                stages: 2,
                layers: 2,
                channels: 4,
                kernel: 3,
            },
            ..ImageSpec::new(6)
        }),
    ];
    for spec in specs {
        let store = spec.init_params::<f64>(1).unwrap();
        let inputs: Vec<Tensor<f64>> = spec.inputs(&op).unwrap().iter().map(Tensor::cast).collect();
        let r = check_gradients(&store, 1e-5, |g, s| {
            let ids: Vec<NodeId> = inputs.iter().map(|x| g.input(x.clone())).collect();
            let outs = spec.record(g, s, &ids, &feed)?;
            let losses = outs
                .iter()
                .map(|&o| g.ldam(o, &labels, &cfg))
                .collect::<phaseflow::Result<Vec<_>>>()?;
            g.sum(&losses)
        })
        .unwrap();
        assert!(r.checked > 100);
        assert!(r.max_rel_err < 1e-4, "{} {r:?}", spec.prefix());
    }
}

fn small_corpus(n: usize, seed: u64) -> Vec<OperationRecord> {
    let cfg = SynthConfig {
        n_operations: n,
        seed,
        phase_duration_s: vec![(20, 40); 8],
        noise_scale: 0.3,
        dims: SynthDims {
            physician: 12,
            assistant: 12,
            ambient: 12,
            xray: 12,
        },
        audio: SynthAudioConfig {
            enabled: false,
            ..Default::default()
        },
        ..Default::default()
    };
    synth_generate(&cfg).unwrap().into_iter().map(|o| o.record).collect()
}

fn small_speech() -> ModelSpec {
    ModelSpec::Speech(SpeechSpec {
        d_model: 16,
        d_ar: 4,
        tcn: TcnSpec {
            stages: 2,
            layers: 5,
            channels: 16,
            kernel: 3,
        },
        ..SpeechSpec::new(SPEECH.to_vec(), vec![12, 12, 12])
    })
}

fn desk_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 7,
        segment_s: 90,
        adam: AdamConfig {
            lr: 3e-3,
            ..Default::default()
        },
        ldam_scale: 1.0,
        keep_best_val: false,
        ..Default::default()
    }
}

#[test]
fn overfits_five_operations() {
    let ops = small_corpus(5, 11);
    let m = PhaseModel::new(small_speech(), 7, 90).unwrap();
    let out = train(m, &ops, &[], &desk_config(30)).unwrap();
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    for op in &ops {
        pred.extend(out.model.infer(op, None).unwrap());
        gt.extend(op.labels.clone().unwrap());
    }
    let acc = frame_accuracy(&pred, &gt, MetricOptions::default()).unwrap();
    assert!(acc >= 99.0, "train accuracy {acc}");
    let h = &out.history;
    assert_eq!(h.len(), 31);
    assert!(h[30].train_loss < h[0].train_loss / 10.0, "{h:?}");
}

#[test]
fn untrained_loss_is_log_nine_on_balanced_classes() {
    // one second per class, repeated; tiny zero-output weights
    let t = 90;
    let mut op = stub_op("bal", t, 6, 6, 6);
    op.labels = Some((0..t).map(|i| i % N_CLASSES).collect());
    let spec = tiny_speech([6, 6, 6]);
    let mut m = PhaseModel::new(spec, 0, 90).unwrap();
    for (name, w) in m.params.iter_mut() {
        if name.contains("tcn") && name.contains("out") {
            w.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let cfg = TrainConfig {
        epochs: 0,
        ldam_max_margin: 0.0,
        ldam_scale: 1.0,
        ..desk_config(0)
    };
    let out = train(m, &[op], &[], &cfg).unwrap();
    assert!((out.history[0].train_loss - 9f64.ln()).abs() < 1e-4, "{:?}", out.history);
    assert!(history_csv(&out.history, 7).starts_with("# seed=7\nepoch,train_loss,val_acc,val_f1\n0,"));
}

#[test]
fn training_is_deterministic() {
    let ops = small_corpus(3, 2);
    let run = || {
        let m = PhaseModel::new(small_speech(), 5, 90).unwrap();
        let out = train(m, &ops[..2], &ops[2..], &desk_config(2)).unwrap();
        (out.model.params, out.history)
    };
    let (pa, ha) = run();
    let (pb, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(pa, pb);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let ops = small_corpus(1, 4);
    let m = PhaseModel::new(small_speech(), 1, 90).unwrap();
    let path = dir.path().join("speech.ckpt");
    m.save(&path).unwrap();
    let back = PhaseModel::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.infer(&ops[0], None).unwrap(), m.infer(&ops[0], None).unwrap());
}

#[test]
fn merged_output_switches_after_puncture_run() {
    let op = stub_op("m", 300, 6, 6, 6);
    // the speech model's final output bias decides every label
    let mut speech = PhaseModel::new(tiny_speech([6, 6, 6]), 0, 180).unwrap();
    speech.params.zero_all();
    let last_b = "speech.tcn.stage2.out.b".to_string();
    speech.params.get_mut(&last_b).unwrap().data_mut()[2] = 1.0;
    let mut image = PhaseModel::new(ModelSpec::Image(ImageSpec { d_model: 8, ..ImageSpec::new(6) }), 0, 180).unwrap();
    image.params.zero_all();
    let img_b = last_b.replacen("speech", "image", 1);
    image.params.get_mut(&img_b).unwrap().data_mut()[5] = 1.0;

    let out = merged_infer(&op, &speech, &image, &SwitchConfig::default()).unwrap();
    assert_eq!(out.switch_s, Some(29));
    assert!(out.labels[..30].iter().all(|&l| l == 2));
    assert!(out.labels[30..].iter().all(|&l| l == 5));

    // speech-only phases are masked after the switch
    image.params.get_mut(&img_b).unwrap().data_mut()[1] = 5.0;
    let out = merged_infer(&op, &speech, &image, &SwitchConfig::default()).unwrap();
    assert!(out.labels[30..].iter().all(|&l| l == 5));

    // no switch: speech covers everything
    speech.params.get_mut(&last_b).unwrap().data_mut()[1] = 2.0;
    let out = merged_infer(&op, &speech, &image, &SwitchConfig::default()).unwrap();
    assert_eq!(out.switch_s, None);
    assert!(out.labels.iter().all(|&l| l == 1));
}
