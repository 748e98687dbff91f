//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use phaseflow::data::{stratified_split, PhaseTimeline, N_CLASSES};
use phaseflow::eval::{frame_accuracy, macro_f1, MetricOptions};
use phaseflow::features::ChannelId;
use phaseflow::nn::gradcheck::check_gradients;
use phaseflow::nn::{
    ldam_loss, softmax, stage_forward, Gmu, Init, LdamConfig, MsTcn, Padding, ParamStore, ResidualBlock, Stage,
    StageConfig, Tensor,
};
use phaseflow::model::PhaseModel;
use phaseflow::signal::{cross_correlate_lag, AudioSignal, EventConfig};
use phaseflow_cli::{load_subset, predict_standalone, score, train_model, ModelKind, RunConfig, Subset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rand_labels(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

fn stage_cfg(input_dim: usize, channels: usize, layers: usize) -> StageConfig {
    StageConfig {
        input_dim,
        channels,
        layers,
        kernel: 3,
        n_classes: N_CLASSES,
        padding: Padding::AcausalSame,
    }
}

// ---------------------------------------------------------------- gradients

fn gradients() -> Verdict {
    const STEP: f64 = 1e-4;
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = Vec::new();

    let gmu = Gmu::new("gmu", vec![4, 3, 5], 6);
    let mut store = ParamStore::new();
    gmu.init(&mut store, Init::FanIn, &mut rng);
    let xs: Vec<_> = [4, 3, 5].iter().map(|&d| rand_tensor(&[d, 12], &mut rng)).collect();
    let y = rand_labels(12, 6, &mut rng);
    let ce = LdamConfig::cross_entropy(6);
    let r = check_gradients(&store, STEP, |g, s| {
        let ids: Vec<_> = xs.iter().map(|x| g.input(x.clone())).collect();
        let h = gmu.forward(g, s, &ids)?;
        g.ldam(h, &y, &ce)
    });
    worst.push(("gmu", r));

    let block = ResidualBlock {
        prefix: "blk".into(),
        channels: 8,
        kernel: 3,
        dilation: 4,
        padding: Padding::AcausalSame,
    };
    let mut store = ParamStore::new();
    block.init(&mut store, Init::FanIn, &mut rng);
    let x = rand_tensor(&[8, 12], &mut rng);
    let y = rand_labels(12, 8, &mut rng);
    let ce8 = LdamConfig::cross_entropy(8);
    let r = check_gradients(&store, STEP, |g, s| {
        let xi = g.input(x.clone());
        let out = block.forward(g, s, xi)?;
        g.ldam(out, &y, &ce8)
    });
    worst.push(("residual block", r));

    let tcn = MsTcn::new("tcn", stage_cfg(6, 8, 3), 2);
    let mut store = ParamStore::new();
    tcn.init(&mut store, Init::FanIn, &mut rng);
    let x = rand_tensor(&[6, 12], &mut rng);
    let y = rand_labels(12, N_CLASSES, &mut rng);
    let ldam = LdamConfig::normalized(vec![5, 40, 90, 12, 300, 60, 25, 8, 150], 0.5, 4.0);
    let r = check_gradients(&store, STEP, |g, s| {
        let xi = g.input(x.clone());
        let outs = tcn.forward(g, s, xi)?;
        let losses = outs.iter().map(|&o| g.ldam(o, &y, &ldam)).collect::<Result<Vec<_>, _>>()?;
        g.sum(&losses)
    });
    worst.push(("2-stage tcn", r));

    let mut store = ParamStore::new();
    store.insert("z", rand_tensor(&[N_CLASSES, 12], &mut rng).map(|v| 3.0 * v));
    let y = rand_labels(12, N_CLASSES, &mut rng);
    let r = check_gradients(&store, STEP, |g, s| {
        let z = g.param(s, "z")?;
        g.ldam(z, &y, &ldam)
    });
    worst.push(("ldam", r));

    let elapsed = start.elapsed();
    let mut pass = elapsed < Duration::from_secs(60);
    let mut parts = Vec::new();
    for (name, r) in worst {
        match r {
            Ok(r) => {
                pass &= r.max_rel_err < TOL;
                parts.push(format!("{name} {:.1e}", r.max_rel_err));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name} error: {e}"));
            }
        }
    }
    verdict(pass, format!("max rel err [{}] in {:.1?}", parts.join(", "), elapsed))
}

// ----------------------------------------------------------- receptive field

fn probe_receptive_field(layers: usize) -> usize {
    let cfg = stage_cfg(2, 3, layers);
    let stage = Stage::new("s", cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(7 + layers as u64);
    let mut store = ParamStore::<f64>::new();
    stage.init(&mut store, Init::FanIn, &mut rng);
    // positive weights keep every ReLU open
    for (_, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.05);
    }
    let t_len = 2 * cfg.receptive_field() + 41;
    let center = t_len / 2;
    let x = rand_tensor(&[2, t_len], &mut rng).map(|v| v.abs() + 0.1);
    let base = stage_forward(&x, &stage, &store).unwrap();
    let touched: Vec<usize> = (0..t_len)
        .filter(|&p| {
            let mut xp = x.clone();
            xp.data_mut()[p] += 1.0;
            let y = stage_forward(&xp, &stage, &store).unwrap();
            (0..N_CLASSES).any(|o| y.at2(o, center) != base.at2(o, center))
        })
        .collect();
    let span = touched.last().unwrap() - touched.first().unwrap() + 1;
    if span == touched.len() {
        span
    } else {
        0
    }
}

fn receptive_field() -> Verdict {
    let got: Vec<(usize, usize, usize)> = [(7, 255), (4, 31)]
        .into_iter()
        .map(|(l, want)| (l, want, probe_receptive_field(l)))
        .collect();
    let pass = got
        .iter()
        .all(|&(l, want, p)| p == want && 1 + 2 * ((1 << l) - 1) == want);
    let detail = got
        .iter()
        .map(|(l, w, p)| format!("{l} layers: probed {p}, expected {w}"))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(pass, detail)
}

// ----------------------------------------------------------------- alignment

fn alignment() -> Verdict {
    const SR: u32 = 16_000;
    const TRIALS: usize = 20;
    let sr = SR as f64;
    let mut elapsed = Duration::ZERO;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let max_lag = (60.0 * sr) as i64;
    let len = (90.0 * sr) as usize;
    let mut hits = 0;
    let mut worst = 0i64;
    for _ in 0..TRIALS {
        // low-passed noise as the shared room sound
        let total = len + 2 * max_lag as usize;
        let mut src = Vec::with_capacity(total);
        let mut prev = 0.0;
        for _ in 0..total {
            let e: f64 = rng.sample(StandardNormal);
            prev = 0.9 * prev + 0.02 * e;
            src.push(prev);
        }
        let power = src.iter().map(|v| v * v).sum::<f64>() / total as f64;
        let noise_std = (power / 10.0).sqrt();
        let lag = rng.random_range(-max_lag..=max_lag);
        let base = max_lag as usize;
        let mut noisy = |i: usize| src[i] + noise_std * rng.sample::<f64, _>(StandardNormal);
        let a: Vec<f64> = (0..len).map(|n| noisy(base + n)).collect();
        let b: Vec<f64> = (0..len).map(|n| noisy((base as i64 + n as i64 - lag) as usize)).collect();
        let a = AudioSignal::new(a, SR).unwrap();
        let b = AudioSignal::new(b, SR).unwrap();
        let t0 = Instant::now();
        let est = cross_correlate_lag(&a, &b, 60.0).unwrap();
        elapsed += t0.elapsed();
        let err = ((est * sr).round() as i64 - lag).abs();
        worst = worst.max(err);
        if err <= 1 {
            hits += 1;
        }
    }
    verdict(
        hits >= 19 && elapsed < Duration::from_secs(30),
        format!("{hits}/{TRIALS} within 1 sample (worst {worst} samples) in {elapsed:.1?}"),
    )
}

// ------------------------------------------------------------ beep detection

const BEEP_SR: u32 = 4000;
const BEEP_NOISE_STD: f64 = 0.03;

fn noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| BEEP_NOISE_STD * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// 542 Hz tone rising exponentially from peak·1e-3 to `peak` over one
/// second, then held for half a second.
fn ramp_tone(tau: f64) -> f64 {
    let (peak, rise, len) = (0.4, 1.0, 1.5);
    if !(0.0..len).contains(&tau) {
        return 0.0;
    }
    let k = 1000f64.ln() / rise;
    peak * ((tau - rise).min(0.0) * k).exp() * (2.0 * std::f64::consts::PI * 542.0 * tau).sin()
}

fn beep_detection() -> Verdict {
    let sr = BEEP_SR as f64;
    let cfg = EventConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    let n_tones = 40;
    let spacing = 20.0;
    let onsets: Vec<f64> = (0..n_tones)
        .map(|i| 5.0 + i as f64 * spacing + rng.random_range(0.0..10.0))
        .collect();
    let total = ((5.0 + n_tones as f64 * spacing + 5.0) * sr) as usize;
    let mut x = noise(total, &mut rng);
    for &t0 in &onsets {
        let first = (t0 * sr).floor() as usize;
        for (i, v) in x.iter_mut().enumerate().skip(first).take((2.0 * sr) as usize) {
            *v += ramp_tone(i as f64 / sr - t0);
        }
    }
    let events = cfg.detect(&AudioSignal::new(x, BEEP_SR).unwrap()).unwrap();
    let mut errors = Vec::new();
    let mut stray = 0;
    for &e in &events {
        match onsets.iter().find(|&&t0| e > t0 - 2.0 && e < t0 + 3.0) {
            Some(&t0) => errors.push((t0, e - t0)),
            None => stray += 1,
        }
    }
    let mut per_tone = BTreeMap::new();
    for (t0, _) in &errors {
        *per_tone.entry(t0.to_bits()).or_insert(0usize) += 1;
    }
    let detected = per_tone.len();
    let duplicates = per_tone.values().filter(|&&c| c > 1).count();
    let max_err = errors.iter().map(|(_, d)| d.abs()).fold(0.0, f64::max);
    let within = errors.iter().filter(|(_, d)| d.abs() <= 0.5).count();

    let quiet = noise((600.0 * sr) as usize, &mut rng);
    let false_pos = cfg.detect(&AudioSignal::new(quiet, BEEP_SR).unwrap()).unwrap().len();

    let pass = detected == n_tones && duplicates == 0 && stray == 0 && max_err <= 0.5 && false_pos == 0;
    verdict(
        pass,
        format!(
            "{detected}/{n_tones} tones detected, {within} within 0.5 s, max start error {max_err:.3} s, \
             {stray} stray; {false_pos} detections in 10 min of noise"
        ),
    )
}

// --------------------------------------------------------------------- split

fn random_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<(String, PhaseTimeline)> {
    (0..n)
        .map(|i| {
            let mut labels = Vec::new();
            for c in 0..N_CLASSES {
                let d = if c == 0 { rng.random_range(0..6) } else { rng.random_range(1..120) };
                labels.extend(std::iter::repeat_n(c, d));
            }
            let id = format!("op-{:05}-{i}", rng.random_range(0..100_000));
            (id, PhaseTimeline::new(labels).unwrap())
        })
        .collect()
}

/// Entropy-sort split from explicit counts.
fn oracle_split(ops: &[(String, PhaseTimeline)], n_val: usize, n_test: usize) -> [Vec<String>; 3] {
    let mut ops = ops.to_vec();
    ops.sort_by(|a, b| a.0.cmp(&b.0));
    let counts: Vec<[f64; 8]> = ops
        .iter()
        .map(|(_, t)| {
            let mut c = [0.0; 8];
            t.labels().iter().filter(|&&l| l > 0).for_each(|&l| c[l - 1] += 1.0);
            c
        })
        .collect();
    let mut totals = [0.0; 8];
    for c in &counts {
        for p in 0..8 {
            totals[p] += c[p];
        }
    }
    let mut keyed: Vec<(f64, String)> = counts
        .iter()
        .zip(&ops)
        .map(|(c, (id, _))| {
            let v: Vec<f64> = (0..8).map(|p| c[p] / totals[p]).collect();
            let s: f64 = v.iter().sum();
            let h = v.iter().filter(|&&x| x > 0.0).map(|&x| -(x / s) * (x / s).ln()).sum();
            (h, id.clone())
        })
        .collect();
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    let ids: Vec<String> = keyed.into_iter().map(|(_, id)| id).collect();
    [
        ids[n_val + n_test..].to_vec(),
        ids[..n_val].to_vec(),
        ids[n_val..n_val + n_test].to_vec(),
    ]
}

fn split_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut agree = 0;
    for _ in 0..50 {
        let n = rng.random_range(10..=40);
        let ops = random_corpus(&mut rng, n);
        let s = stratified_split(&ops, 5, 4).unwrap();
        if [s.train, s.val, s.test] == oracle_split(&ops, 5, 4) {
            agree += 1;
        }
    }
    let ops = random_corpus(&mut rng, 28);
    let s = stratified_split(&ops, 5, 5).unwrap();
    let sizes = (s.train.len(), s.val.len(), s.test.len());
    verdict(
        agree == 50 && sizes == (18, 5, 5),
        format!("{agree}/50 corpora match the oracle; 28 ops split {}/{}/{}", sizes.0, sizes.1, sizes.2),
    )
}

// ---------------------------------------------------------------------- ldam

fn ldam_reduction() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let plain = LdamConfig {
        class_counts: (1..=N_CLASSES as u64).map(|c| c * 17).collect(),
        margin_scale: 0.0,
        logit_scale: 1.0,
    };
    let mut worst_ce = 0.0f64;
    for _ in 0..20 {
        let t = rng.random_range(1..200);
        let z = rand_tensor(&[N_CLASSES, t], &mut rng).map(|v| 6.0 * v);
        let y = rand_labels(t, N_CLASSES, &mut rng);
        let (loss, _) = ldam_loss(&z, &y, &plain).unwrap();
        let p = softmax(&z);
        let ce = y.iter().enumerate().map(|(i, &c)| -p.at2(c, i).ln()).sum::<f64>() / t as f64;
        worst_ce = worst_ce.max((loss - ce).abs());
    }
    let y = rand_labels(50, N_CLASSES, &mut rng);
    let (uniform, _) = ldam_loss(&Tensor::<f64>::zeros(&[N_CLASSES, 50]), &y, &plain).unwrap();
    let uniform_err = (uniform - (N_CLASSES as f64).ln()).abs();
    verdict(
        worst_ce < 1e-9 && uniform_err < 1e-9,
        format!("|LDAM - CE| <= {worst_ce:.1e}; |uniform - ln 9| = {uniform_err:.1e}"),
    )
}

// ------------------------------------------------------------------- metrics

fn metric_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let opts = MetricOptions::default();
    let (mut acc_exact, mut f1_worst) = (0, 0.0f64);
    for _ in 0..100 {
        let gt = rand_labels(1000, N_CLASSES, &mut rng);
        let pred: Vec<usize> = gt
            .iter()
            .map(|&g| if rng.random_bool(0.7) { g } else { rng.random_range(0..N_CLASSES) })
            .collect();
        let mut cm = [[0u64; N_CLASSES]; N_CLASSES];
        for (&p, &g) in pred.iter().zip(&gt) {
            cm[g][p] += 1;
        }
        let diag: u64 = (0..N_CLASSES).map(|c| cm[c][c]).sum();
        if frame_accuracy(&pred, &gt, opts).unwrap() == 100.0 * diag as f64 / 1000.0 {
            acc_exact += 1;
        }
        let mut f1s = Vec::new();
        for c in 0..N_CLASSES {
            let tp = cm[c][c] as f64;
            let fn_: f64 = (0..N_CLASSES).filter(|&k| k != c).map(|k| cm[c][k] as f64).sum();
            let fp: f64 = (0..N_CLASSES).filter(|&k| k != c).map(|k| cm[k][c] as f64).sum();
            if tp + fn_ == 0.0 {
                continue;
            }
            let denom = 2.0 * tp + fp + fn_;
            f1s.push(if denom > 0.0 { 2.0 * tp / denom } else { 0.0 });
        }
        let brute = 100.0 * f1s.iter().sum::<f64>() / f1s.len() as f64;
        f1_worst = f1_worst.max((macro_f1(&pred, &gt, opts).unwrap() - brute).abs());
    }
    verdict(
        acc_exact == 100 && f1_worst < 1e-9,
        format!("accuracy exact on {acc_exact}/100; max F1 deviation {f1_worst:.1e}"),
    )
}

// ---------------------------------------------------------------- end-to-end

/// Desk-scale model sizes; the corpus and training loop use defaults.
const DESK_CONFIG: &str = include_str!("../../../configs/desk.json");

struct PipelineRun {
    root: PathBuf,
    train_time: Duration,
}

impl PipelineRun {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    fn work(&self) -> PathBuf {
        self.root.join("work")
    }
}

fn phaseflow(root: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_phaseflow"))
        .arg("--config")
        .arg(root.join("config.json"))
        .arg("--data")
        .arg(root.join("data"))
        .arg("--work")
        .arg(root.join("work"))
        .args(args)
        .env("PHASEFLOW_THREADS", "1")
        .output()
        .map_err(|e| format!("spawning phaseflow: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "phaseflow {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn run_pipeline(root: &Path) -> Result<PipelineRun, String> {
    fs::create_dir_all(root).map_err(|e| e.to_string())?;
    fs::write(root.join("config.json"), DESK_CONFIG).map_err(|e| e.to_string())?;
    for step in [&["synth"][..], &["align"], &["split"]] {
        phaseflow(root, step)?;
    }
    let t0 = Instant::now();
    phaseflow(root, &["train", "--model", "speech"])?;
    phaseflow(root, &["train", "--model", "image"])?;
    let train_time = t0.elapsed();
    phaseflow(root, &["infer", "--ops", "test"])?;
    phaseflow(root, &["eval"])?;
    Ok(PipelineRun {
        root: root.to_path_buf(),
        train_time,
    })
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn mean_scores(cfg: &RunConfig, test: &[phaseflow::features::OperationRecord], model: &PhaseModel) -> (f64, f64) {
    let preds = predict_standalone(test, model).unwrap();
    let pairs: Vec<_> = preds
        .into_iter()
        .zip(test)
        .map(|(p, op)| (p.operation_id, p.labels, op.labels.clone().unwrap()))
        .collect();
    let s = score(&pairs, cfg.metrics).unwrap();
    let n = s.len() as f64;
    (
        s.iter().map(|x| x.accuracy).sum::<f64>() / n,
        s.iter().map(|x| x.f1).sum::<f64>() / n,
    )
}

fn end_to_end(run: &PipelineRun) -> Verdict {
    let text = fs::read_to_string(run.work().join("metrics.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    let acc = m["accuracy"]["mean"].as_f64().unwrap();
    let f1 = m["f1"]["mean"].as_f64().unwrap();
    let n_test = fs::read_dir(run.work().join("predictions"))
        .unwrap()
        .flatten()
        .filter(|e| e.path().file_stem().is_some_and(|s| s != "switch"))
        .count();
    let in_time = run.train_time <= Duration::from_secs(30 * 60);
    verdict(
        acc >= 90.0 && f1 >= 85.0 && in_time && n_test == 5,
        format!(
            "merged accuracy {acc:.2} %, macro F1 {f1:.2} % on {n_test} test ops; training took {:.1?}",
            run.train_time
        ),
    )
}

fn ablation_ordering(run: &PipelineRun) -> Verdict {
    let mut cfg: RunConfig = serde_json::from_str(DESK_CONFIG).unwrap();
    cfg.paths.data_dir = run.data();
    cfg.paths.work_dir = run.work();
    let cfg = cfg.resolved();
    let train_ops = load_subset(&cfg, Subset::Train).unwrap();
    let val_ops = load_subset(&cfg, Subset::Val).unwrap();
    let test = load_subset(&cfg, Subset::Test).unwrap();

    let speech_all = PhaseModel::load(&cfg.checkpoint_path(ModelKind::Speech)).unwrap();
    let image_all = PhaseModel::load(&cfg.checkpoint_path(ModelKind::Image)).unwrap();
    let (sa, sf) = mean_scores(&cfg, &test, &speech_all);
    let (ia, iff) = mean_scores(&cfg, &test, &image_all);

    let mut pass = true;
    let mut parts = vec![format!("speech all {sa:.2}/{sf:.2}")];
    for ch in ChannelId::SPEECH {
        let mut c = cfg.clone();
        c.speech.channels = vec![ch];
        let (model, _) = train_model(&c, ModelKind::Speech, &train_ops, &val_ops).unwrap();
        let (a, f) = mean_scores(&c, &test, &model);
        pass &= sa > a && sf > f;
        parts.push(format!("{} {a:.2}/{f:.2}", ch.as_str()));
    }
    let mut c = cfg.clone();
    c.image.use_log = false;
    let (model, _) = train_model(&c, ModelKind::Image, &train_ops, &val_ops).unwrap();
    let (a, f) = mean_scores(&c, &test, &model);
    pass &= ia > a && iff > f;
    parts.push(format!("image all {ia:.2}/{iff:.2}"));
    parts.push(format!("xray only {a:.2}/{f:.2}"));
    verdict(pass, format!("accuracy/F1: {}", parts.join(", ")))
}

fn determinism(a: &PipelineRun, b: &PipelineRun) -> Verdict {
    let mut compared = 0;
    let mut differing = Vec::new();
    for sub in ["data", "work"] {
        let fa = files_under(&a.root.join(sub));
        let fb = files_under(&b.root.join(sub));
        for name in fa.keys().chain(fb.keys().filter(|k| !fa.contains_key(*k))) {
            compared += 1;
            if fa.get(name) != fb.get(name) {
                differing.push(format!("{sub}/{}", name.display()));
            }
        }
    }
    let has = |ext: &str| {
        files_under(&a.work())
            .keys()
            .any(|p| p.extension().is_some_and(|e| e == ext))
    };
    let pass = differing.is_empty() && has("ckpt") && has("csv") && has("json");
    let detail = if differing.is_empty() {
        format!("{compared} files byte-identical across two runs")
    } else {
        format!("{} of {compared} files differ, e.g. {}", differing.len(), differing[0])
    };
    verdict(pass, detail)
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(&str, Verdict)> = vec![
        ("gradient verification", gradients()),
        ("receptive field", receptive_field()),
        ("alignment", alignment()),
        ("beep detection", beep_detection()),
        ("split oracle", split_oracle()),
        ("ldam reduction", ldam_reduction()),
        ("metric oracle", metric_oracle()),
    ];
    match (run_pipeline(&dir.path().join("run_a")), run_pipeline(&dir.path().join("run_b"))) {
        (Ok(a), Ok(b)) => {
            results.push(("end-to-end desk run", end_to_end(&a)));
            results.push(("channel ablation ordering", ablation_ordering(&a)));
            results.push(("determinism", determinism(&a, &b)));
        }
        (Err(e), _) | (_, Err(e)) => {
            for name in ["end-to-end desk run", "channel ablation ordering", "determinism"] {
                results.push((name, verdict(false, e.clone())));
            }
        }
    }
    let mut failed = 0;
    for (name, v) in &results {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
