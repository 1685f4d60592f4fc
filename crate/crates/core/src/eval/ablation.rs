use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::finetune::finetune;
use super::report::EvalReport;
use crate::autodiff::ParamSet;
use crate::config::RunConfig;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;

/// Nested, class-stratified subsets of the train split.
///
/// Each class's train records are shuffled once; a fraction keeps the first
/// `round(f·n_c)` of that order, so smaller fractions are prefixes of larger
/// ones. Returned indices refer to `data` and keep file order.
pub fn stratified_subsets(data: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in data.records.iter().enumerate() {
        if r.split == Split::Train {
            let l = r.label.ok_or_else(|| Error::Data(format!("unlabelled train record {}", r.image_path.display())))?;
            by_class.entry(l).or_default().push(i);
        }
    }
    for (c, members) in by_class.iter_mut() {
        members.shuffle(&mut rng::stream(seed, "fraction", *c as u64));
    }
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("fraction {f} outside (0, 1]")));
            }
            let mut keep = Vec::new();
            for (c, members) in &by_class {
                let k = (f * members.len() as f64).round() as usize;
                if k == 0 {
                    return Err(Error::Data(format!("class {c} vanishes at fraction {f}")));
                }
                keep.extend_from_slice(&members[..k]);
            }
            keep.sort_unstable();
            Ok(keep)
        })
        .collect()
}

/// Fine-tunes on each fraction of the train split (val and test untouched).
pub fn fraction_ablation(
    encoder: &ParamSet<f32>,
    data: &Dataset,
    n_classes: usize,
    cfg: &RunConfig,
    fractions: &[f64],
    model: &str,
) -> Result<Vec<(f64, EvalReport)>> {
    let subsets = stratified_subsets(data, fractions, rng::derive_seed(cfg.seed, "ablation", 0))?;
    let mut out = Vec::new();
    for (&f, keep) in fractions.iter().zip(subsets) {
        let mut keep_mask = vec![false; data.len()];
        for i in keep {
            keep_mask[i] = true;
        }
        let mut i = 0;
        let subset = data.filter(|r| {
            let k = r.split != Split::Train || keep_mask[i];
            i += 1;
            k
        });
        let outcome = finetune(encoder, &subset, n_classes, cfg, model)?;
        out.push((f, outcome.report));
    }
    Ok(out)
}

pub const ABLATION_HEADER: &str = "fraction,task,model,seed,auroc,auroc_lo,auroc_hi,sens,spec";

pub fn ablation_csv(rows: &[(f64, EvalReport)]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for (f, r) in rows {
        s.push_str(&format!("{f},{}\n", r.csv_line()));
    }
    s
}
