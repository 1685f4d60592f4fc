use std::path::Path;

use super::metrics::{auroc_macro_ovr, auroc_per_class, bootstrap_ci, sens_spec_macro};
use crate::error::{Error, Result};
use crate::rng;

pub const REPORT_HEADER: &str = "task,model,seed,auroc,auroc_lo,auroc_hi,sens,spec";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub task: String,
    pub model: String,
    pub seed: u64,
    pub auroc: f64,
    pub auroc_ci: (f64, f64),
    pub per_class_auroc: Vec<f64>,
    pub sens: f64,
    pub sens_ci: (f64, f64),
    pub spec: f64,
    pub spec_ci: (f64, f64),
    pub n_test: usize,
}

impl EvalReport {
    /// Point metrics plus percentile-bootstrap intervals; all three metrics
    /// share the same resample stream.
    pub fn from_predictions(
        task: &str,
        model: &str,
        seed: u64,
        probs: &[Vec<f64>],
        labels: &[usize],
        n_boot: usize,
        alpha: f64,
    ) -> Result<Self> {
        let per_class_auroc = auroc_per_class(probs, labels)?;
        let auroc = per_class_auroc.iter().sum::<f64>() / per_class_auroc.len() as f64;
        let (sens, spec) = sens_spec_macro(probs, labels)?;
        let boot_seed = rng::derive_seed(seed, "eval-bootstrap", 0);
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
            (idx.iter().map(|&i| probs[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
        };
        let ci = |which: usize| {
            bootstrap_ci(
                labels.len(),
                |idx| {
                    let (p, l) = pick(idx);
                    match which {
                        0 => auroc_macro_ovr(&p, &l),
                        1 => sens_spec_macro(&p, &l).map(|v| v.0),
                        _ => sens_spec_macro(&p, &l).map(|v| v.1),
                    }
                },
                n_boot,
                alpha,
                boot_seed,
            )
            .map(|c| (c.low, c.high))
        };
        Ok(Self {
            task: task.into(),
            model: model.into(),
            seed,
            auroc,
            auroc_ci: ci(0)?,
            per_class_auroc,
            sens,
            sens_ci: ci(1)?,
            spec,
            spec_ci: ci(2)?,
            n_test: labels.len(),
        })
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.task, self.model, self.seed, self.auroc, self.auroc_ci.0, self.auroc_ci.1, self.sens, self.spec
        )
    }
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in reports {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// One row of a report CSV as read back for statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub task: String,
    pub model: String,
    pub seed: u64,
    pub auroc: f64,
    pub auroc_lo: f64,
    pub auroc_hi: f64,
    pub sens: f64,
    pub spec: f64,
}

pub fn read_reports(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let err = |line: usize, msg: String| Error::Manifest { path: path.to_path_buf(), line, msg };
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name).ok_or_else(|| err(1, format!("missing column `{name}`")));
    let cols: Vec<usize> =
        REPORT_HEADER.split(',').map(col).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| rec.get(cols[i]).unwrap_or("").trim();
        let num = |i: usize| get(i).parse::<f64>().map_err(|_| err(line, format!("`{}` is not a number", get(i))));
        out.push(ReportRow {
            task: get(0).to_string(),
            model: get(1).to_string(),
            seed: get(2).parse().map_err(|_| err(line, format!("`{}` is not a seed", get(2))))?,
            auroc: num(3)?,
            auroc_lo: num(4)?,
            auroc_hi: num(5)?,
            sens: num(6)?,
            spec: num(7)?,
        });
    }
    Ok(out)
}
