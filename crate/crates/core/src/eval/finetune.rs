//! Supervised adaptation: a linear classifier on the `[CLS]` embedding,
//! trained with the encoder (full) or on frozen features, with model
//! selection on validation AUROC.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{auroc_macro_ovr, label_smooth};
use super::report::EvalReport;
use crate::autodiff::{adamw_step, Array, Bound, OptimizerState, ParamSet, Tape, Var};
use crate::config::RunConfig;
use crate::data::{center_view, Dataset, Split};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::rng;
use crate::train::warmup_cosine;
use crate::vit::{encode, encode_batch, trunc_normal, ENCODER_PREFIX};

pub const CLASSIFIER_PREFIX: &str = "classifier.";
/// Rows per forward pass when scoring a split.
const EVAL_CHUNK: usize = 64;

/// Fresh linear head `embed_dim → n_classes` (truncated-normal weights,
/// zero bias) drawn from the seed.
pub fn init_classifier(embed_dim: usize, n_classes: usize, seed: u64) -> Result<ParamSet<f32>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    p.insert("classifier.weight", trunc_normal(&mut r, &[embed_dim, n_classes]))?;
    p.insert("classifier.bias", Array::zeros(&[n_classes]))?;
    Ok(p)
}

fn classify(tape: &mut Tape<f32>, p: &Bound, cls: Var) -> Result<Var> {
    tape.linear(cls, p.get("classifier.weight")?, p.get("classifier.bias")?)
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let e: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Inputs of one split: evaluation views and labels.
struct SplitData {
    views: Vec<Image>,
    labels: Vec<usize>,
}

fn split_data(data: &Dataset, split: Split, cfg: &RunConfig, n_classes: usize) -> Result<SplitData> {
    let d = data.split(split);
    if d.is_empty() {
        return Err(Error::Data(format!("the {split} split is empty")));
    }
    let mut labels = Vec::with_capacity(d.len());
    for r in &d.records {
        let l = r.label.ok_or_else(|| {
            Error::Data(format!("record {} has no label but is used for fine-tuning", r.image_path.display()))
        })?;
        if l >= n_classes {
            return Err(Error::Data(format!("label {l} out of range for {n_classes} classes")));
        }
        labels.push(l);
    }
    let views = d.images.iter().map(|img| center_view(img, &cfg.augment, cfg.encoder.global_view_px)).collect();
    Ok(SplitData { views, labels })
}

/// `[CLS]` features of every view, computed without gradients.
fn features(encoder: &ParamSet<f32>, cfg: &RunConfig, views: &[Image]) -> Result<Array<f32>> {
    let d = cfg.encoder.embed_dim;
    let mut out = Vec::with_capacity(views.len() * d);
    for chunk in views.chunks(EVAL_CHUNK) {
        let refs: Vec<&Image> = chunk.iter().collect();
        out.extend_from_slice(encode_batch(encoder, &cfg.encoder, &refs)?.data());
    }
    Array::new(vec![views.len(), d], out)
}

fn probabilities(feats: &Array<f32>, head: &ParamSet<f32>) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let b = head.bind(&mut tape, false);
    let x = tape.constant(feats.clone());
    let logits = classify(&mut tape, &b, x)?;
    let v = tape.value(logits);
    Ok(v.data().chunks(v.cols()).map(softmax).collect())
}

/// Outcome of [`finetune`].
pub struct FinetuneOutcome {
    /// Encoder and classifier from the epoch with the best validation AUROC.
    pub params: ParamSet<f32>,
    pub best_epoch: u64,
    pub val_auroc: Vec<f64>,
    pub report: EvalReport,
}

/// Trains a classifier on `data`'s train split starting from `encoder`
/// (parameters under `encoder.`), selects the epoch with the highest
/// validation macro AUROC (earliest on ties) and evaluates it on test.
pub fn finetune(encoder: &ParamSet<f32>, data: &Dataset, n_classes: usize, cfg: &RunConfig, model: &str) -> Result<FinetuneOutcome> {
    let f = &cfg.finetune;
    if n_classes < 2 {
        return Err(Error::Data("fine-tuning needs at least two classes".into()));
    }
    let train = split_data(data, Split::Train, cfg, n_classes)?;
    let val = split_data(data, Split::Val, cfg, n_classes)?;
    let test = split_data(data, Split::Test, cfg, n_classes)?;
    for (name, s) in [("train", &train), ("val", &val), ("test", &test)] {
        if let Some(c) = (0..n_classes).find(|c| !s.labels.contains(c)) {
            return Err(Error::Data(format!("class {c} is absent from the {name} split")));
        }
    }

    let mut params = encoder.filter_prefix(ENCODER_PREFIX);
    if params.is_empty() {
        return Err(Error::Data("no encoder parameters supplied".into()));
    }
    params.extend(init_classifier(cfg.encoder.embed_dim, n_classes, rng::derive_seed(cfg.seed, "finetune-head", 0))?)?;

    // Frozen mode trains only the classifier on fixed features.
    let frozen = f.freeze_encoder;
    let (train_feats, val_feats) = if frozen {
        (Some(features(&params, cfg, &train.views)?), Some(features(&params, cfg, &val.views)?))
    } else {
        (None, None)
    };
    let mut trainable = if frozen { params.filter_prefix(CLASSIFIER_PREFIX) } else { params.clone() };
    let mut opt = OptimizerState::new(&trainable);

    let n = train.labels.len();
    let steps_per_epoch = n.div_ceil(f.batch_size) as u64;
    let warmup = f.warmup_epochs * steps_per_epoch;
    let last_step = (f.epochs * steps_per_epoch).saturating_sub(1);
    let targets: Vec<Vec<f64>> = (0..n_classes).map(|c| label_smooth(c, f.label_smoothing, n_classes)).collect();

    let mut best: Option<(f64, u64, ParamSet<f32>)> = None;
    let mut val_auroc = Vec::new();
    let mut step = 0u64;
    for epoch in 0..f.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng::derive_seed(cfg.seed, "finetune-order", epoch)));
        for chunk in order.chunks(f.batch_size) {
            let mut tape = Tape::new();
            let bound = trainable.bind(&mut tape, true);
            let cls = match &train_feats {
                Some(feats) => {
                    let rows: Vec<f32> = chunk.iter().flat_map(|&i| feats.row(i).iter().copied()).collect();
                    tape.constant(Array::new(vec![chunk.len(), feats.cols()], rows)?)
                }
                None => {
                    let views: Vec<&Image> = chunk.iter().map(|&i| &train.views[i]).collect();
                    encode(&mut tape, &bound, &cfg.encoder, &views)?
                }
            };
            let logits = classify(&mut tape, &bound, cls)?;
            let log_q = tape.log_softmax_rows(logits, 1.0)?;
            let tgt: Vec<f64> = chunk.iter().flat_map(|&i| targets[train.labels[i]].iter().copied()).collect();
            let tgt = Array::<f32>::from_f64(vec![chunk.len(), n_classes], &tgt)?;
            let loss = tape.cross_entropy_rows(&tgt, log_q)?;
            let mut grads = tape.backward(loss)?;
            let grads = bound.gradients(&mut grads)?;
            drop(tape);
            let lr = warmup_cosine(step, warmup, last_step, f.lr_peak, f.lr_end);
            adamw_step(&mut trainable, &grads, &mut opt, lr, f.weight_decay)?;
            step += 1;
        }
        if !frozen {
            params = trainable.clone();
        } else {
            for (name, t) in trainable.iter() {
                *params.get_mut(name).expect("classifier present") = t.clone();
            }
        }
        let vf = match &val_feats {
            Some(v) => v.clone(),
            None => features(&params, cfg, &val.views)?,
        };
        let auc = auroc_macro_ovr(&probabilities(&vf, &params.filter_prefix(CLASSIFIER_PREFIX))?, &val.labels)?;
        val_auroc.push(auc);
        if best.as_ref().is_none_or(|(b, _, _)| auc > *b) {
            best = Some((auc, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = match best {
        Some(b) => b,
        None => (f64::NAN, 0, params),
    };
    let report = evaluate(&best_params, data, n_classes, cfg, &f.task, model)?;
    Ok(FinetuneOutcome { params: best_params, best_epoch, val_auroc, report })
}

/// Scores the test split with a fine-tuned model and bootstraps intervals.
pub fn evaluate(params: &ParamSet<f32>, data: &Dataset, n_classes: usize, cfg: &RunConfig, task: &str, model: &str) -> Result<EvalReport> {
    let test = split_data(data, Split::Test, cfg, n_classes)?;
    let feats = features(params, cfg, &test.views)?;
    let probs = probabilities(&feats, &params.filter_prefix(CLASSIFIER_PREFIX))?;
    EvalReport::from_predictions(task, model, cfg.seed, &probs, &test.labels, cfg.eval.bootstrap, cfg.eval.alpha)
}
