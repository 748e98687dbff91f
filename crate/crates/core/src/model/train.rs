use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{shift_feed, PhaseModel, START_TOKEN};
use crate::data::N_CLASSES;
use crate::error::{Error, Result};
use crate::eval::{frame_accuracy, macro_f1, MetricOptions};
use crate::features::OperationRecord;
use crate::nn::{AdamConfig, AdamState, Graph, LdamConfig, NodeId, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub segment_s: usize,
    /// Feed ground-truth previous labels instead of the model's own
    /// refined predictions. With acausal convolutions the shifted
    /// ground truth exposes the target one column ahead, so this is off
    /// by default.
    pub teacher_forcing: bool,
    pub adam: AdamConfig,
    pub ldam_max_margin: f64,
    pub ldam_scale: f64,
    pub ar_refine_passes: usize,
    /// Return the parameters of the epoch with the best validation
    /// accuracy rather than the last epoch.
    pub keep_best_val: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            seed: 0,
            segment_s: 180,
            teacher_forcing: false,
            adam: AdamConfig::default(),
            ldam_max_margin: LdamConfig::DEFAULT_MAX_MARGIN,
            ldam_scale: LdamConfig::DEFAULT_LOGIT_SCALE,
            ar_refine_passes: 2,
            keep_best_val: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-stage loss over the epoch's segments.
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PhaseModel,
    pub history: Vec<EpochRecord>,
    pub ldam: LdamConfig,
}

struct Prepared<'a> {
    op: &'a OperationRecord,
    inputs: Vec<Tensor<f32>>,
    labels: &'a [usize],
}

fn prepare<'a>(model: &PhaseModel, ops: &'a [OperationRecord]) -> Result<Vec<Prepared<'a>>> {
    ops.iter()
        .map(|op| {
            let labels = op.labels.as_deref().ok_or_else(|| Error::Misaligned {
                operation: op.operation_id.clone(),
                detail: "no labels".into(),
            })?;
            if let Some(&l) = labels.iter().find(|&&l| l >= N_CLASSES) {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    n_classes: N_CLASSES,
                });
            }
            Ok(Prepared {
                op,
                inputs: model.spec.inputs(op)?,
                labels,
            })
        })
        .collect()
}

/// Frame counts per class over the training labels.
pub fn class_counts(ops: &[OperationRecord]) -> Vec<u64> {
    let mut counts = vec![0u64; N_CLASSES];
    for l in ops.iter().filter_map(|o| o.labels.as_deref()).flatten() {
        if *l < N_CLASSES {
            counts[*l] += 1;
        }
    }
    counts
}

fn validate_epoch(model: &PhaseModel, val: &[Prepared<'_>]) -> Result<(Option<f64>, Option<f64>)> {
    if val.is_empty() {
        return Ok((None, None));
    }
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    for p in val {
        pred.extend(model.infer_inputs(&p.inputs, p.op.seconds(), None)?);
        gt.extend_from_slice(p.labels);
    }
    let opts = MetricOptions::default();
    Ok((Some(frame_accuracy(&pred, &gt, opts)?), Some(macro_f1(&pred, &gt, opts)?)))
}

/// Trains `model` and returns it with a per-epoch history. Epoch 0 reports the untrained model.
///
/// Each epoch visits the training operations in a seeded shuffled order
/// and takes one Adam step per segment; the loss is LDAM summed over the
/// TCN stages.
pub fn train(
    mut model: PhaseModel,
    train_ops: &[OperationRecord],
    val_ops: &[OperationRecord],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_ops.is_empty() {
        return Err(Error::TooFewOperations { needed: 1, got: 0 });
    }
    if cfg.segment_s == 0 {
        return Err(Error::InvalidArgument("segment_s must be at least 1".into()));
    }
    model.segment_s = cfg.segment_s;
    model.ar_refine_passes = cfg.ar_refine_passes;
    let train_set = prepare(&model, train_ops)?;
    let val_set = prepare(&model, val_ops)?;
    let ldam = LdamConfig::normalized(class_counts(train_ops), cfg.ldam_max_margin, cfg.ldam_scale);
    ldam.validate()?;
    let n_stages = model.spec.tcn_spec().stages as f64;

    let mut adam = AdamState::new(cfg.adam);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut best: Option<(f64, PhaseModel)> = None;

    for epoch in 0..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let (mut loss_sum, mut n_seg) = (0.0, 0usize);
        for &i in &order {
            let p = &train_set[i];
            let t = p.op.seconds();
            let mut prev = START_TOKEN;
            for s in (0..t).step_by(cfg.segment_s) {
                let e = (s + cfg.segment_s).min(t);
                let labels = &p.labels[s..e];
                let fed = if cfg.teacher_forcing {
                    labels.to_vec()
                } else {
                    model.infer_segment(&p.inputs, s, e, prev, None)?
                };
                let feed = shift_feed(prev, &fed);
                let mut g = Graph::new();
                let ids: Vec<NodeId> = p.inputs.iter().map(|x| g.input(x.slice_cols(s, e))).collect();
                let outs = model.spec.record(&mut g, &model.params, &ids, &feed)?;
                let losses = outs
                    .iter()
                    .map(|&o| g.ldam(o, labels, &ldam))
                    .collect::<Result<Vec<_>>>()?;
                let total = g.sum(&losses)?;
                let value = g.value(total).item() as f64;
                if !value.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "loss diverged at epoch {epoch} on {}",
                        p.op.operation_id
                    )));
                }
                loss_sum += value / n_stages;
                n_seg += 1;
                if epoch > 0 {
                    let grads = g.backward(total)?;
                    adam.step(&mut model.params, &grads);
                }
                prev = fed[fed.len() - 1];
            }
        }
        let (val_acc, val_f1) = validate_epoch(&model, &val_set)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n_seg.max(1) as f64,
            val_acc,
            val_f1,
        };
        info!(
            "epoch {epoch}: loss {:.4} val_acc {} val_f1 {}",
            rec.train_loss,
            fmt_opt(val_acc),
            fmt_opt(val_f1)
        );
        history.push(rec);
        if cfg.keep_best_val {
            if let Some(acc) = val_acc {
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    debug!("new best validation accuracy {acc:.2} at epoch {epoch}");
                    best = Some((acc, model.clone()));
                }
            }
        }
    }
    let model = best.map_or(model, |(_, m)| m);
    Ok(TrainOutcome { model, history, ldam })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.4}"))
}

/// `epoch,train_loss,val_acc,val_f1` with a leading `# seed=N` line.
/// Missing validation values are left empty.
pub fn history_csv(history: &[EpochRecord], seed: u64) -> String {
    let mut out = format!("# seed={seed}\nepoch,train_loss,val_acc,val_f1\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.6},{},{}",
            r.epoch,
            r.train_loss,
            fmt_opt(r.val_acc),
            fmt_opt(r.val_f1)
        );
    }
    out
}
