use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::evaluate::{config_digest, evaluate, EvalConfig, MetricsReport, Trained};
use super::train::{train, TrainConfig, TrainOutcome};
use crate::data::ImageSample;
use crate::error::Result;
use crate::zoo::{Model, ModelConfig, VariantName};

/// Published full-scale results (mIoU, RMSE in mm) per variant.
pub const PUBLISHED_RESULTS: [(VariantName, Option<f64>, Option<f64>); 9] = [
    (VariantName::SemSegNetB, Some(0.520), None),
    (VariantName::DepthNetB, None, Some(580.2)),
    (VariantName::SemNetDepthGt, Some(0.542), None),
    (VariantName::SemNetDepthDenseGt, Some(0.638), None),
    (VariantName::DepthNetSemanticGt, None, Some(833.7)),
    (VariantName::SemSegDepthA, Some(0.5421), Some(1497.0)),
    (VariantName::SemSegDepthB, Some(0.5463), Some(438.4)),
    (VariantName::SemSegDepthC, Some(0.5841), Some(429.7)),
    (VariantName::SemSegDepth, Some(0.5932), Some(458.2)),
];

pub fn published(variant: VariantName) -> (Option<f64>, Option<f64>) {
    PUBLISHED_RESULTS
        .iter()
        .find(|(v, _, _)| *v == variant)
        .map(|&(_, m, r)| (m, r))
        .expect("every variant has a reference row")
}

pub const REFERENCE_FOOTNOTE: &str = "Reference values are the published results from full-scale training on \
Virtual KITTI 2 (multi-GPU); desk-scale runs on toy data are not expected to match them.";

/// Everything a variant run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: VariantName,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
    pub final_train_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub settings: RunSettings,
}

pub struct Splits<'a> {
    pub train: &'a [ImageSample],
    pub val: &'a [ImageSample],
    pub test: &'a [ImageSample],
}

/// Trains a fresh model and evaluates its best checkpoint on `test`.
pub fn run_variant(variant: VariantName, splits: &Splits<'_>, settings: &RunSettings) -> Result<(TrainOutcome, MetricsReport)> {
    let model = Model::new(variant.spec(), &settings.model)?;
    let init = model.init_params(settings.seed);
    let outcome = train(&model, init, splits.train, splits.val, &settings.train, settings.seed)?;
    let digest = config_digest(&(variant, settings));
    let report = evaluate(
        &Trained {
            model: &model,
            params: &outcome.best,
        },
        settings.model.nc,
        splits.test,
        &settings.eval,
        &digest,
    )?;
    Ok((outcome, report))
}

/// Runs every variant under the same data, budget and seed, in ablation
/// table order. A failing variant yields a row with its error.
pub fn run_ablation(variants: &[VariantName], splits: &Splits<'_>, settings: &RunSettings) -> AblationReport {
    let mut ordered = variants.to_vec();
    ordered.sort();
    ordered.dedup();
    let rows = ordered
        .into_iter()
        .map(|variant| {
            log::info!("ablation: {variant}");
            match run_variant(variant, splits, settings) {
                Ok((outcome, report)) => AblationRow {
                    variant,
                    report: Some(report),
                    error: None,
                    final_train_loss: outcome.log.last().map(|r| r.joint_loss),
                },
                Err(e) => AblationRow {
                    variant,
                    report: None,
                    error: Some(e.to_string()),
                    final_train_loss: None,
                },
            }
        })
        .collect();
    AblationReport {
        rows,
        settings: settings.clone(),
    }
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.digits$}"))
}

/// Plain-text table: measured metrics beside the published reference.
pub fn render_table(rows: &[(String, Option<f64>, Option<f64>, Option<VariantName>)], notes: &[String]) -> String {
    let header = ["Method", "mIoU", "RMSE(mm)", "ref. mIoU", "ref. RMSE(mm)"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|(name, miou, rmse, variant)| {
            let (rm, rr) = variant.map_or((None, None), published);
            [name.clone(), cell(*miou, 4), cell(*rmse, 1), cell(rm, 4), cell(rr, 1)]
        })
        .collect();
    let mut widths = header.map(str::len);
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::from("|");
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, " {c:<w$} |");
            } else {
                let _ = write!(s, " {c:>w$} |");
            }
        }
        s
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", line(&header.map(String::from)));
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    let _ = writeln!(out, "{}", line(&rule).replace(' ', "-"));
    for r in &body {
        let _ = writeln!(out, "{}", line(r));
    }
    out.push('\n');
    for n in notes {
        let _ = writeln!(out, "{n}");
    }
    let _ = writeln!(out, "{REFERENCE_FOOTNOTE}");
    out
}

impl AblationReport {
    pub fn render(&self) -> String {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                let (m, d) = r.report.as_ref().map_or((None, None), |rep| (rep.miou, rep.rmse_mm));
                (r.variant.as_str().to_owned(), m, d, Some(r.variant))
            })
            .collect();
        let s = &self.settings;
        let mut notes = vec![format!(
            "Every variant: {} SGD steps, batch {}, lr {}, momentum {}, weight decay {}, seed {}; loss weights semantic {} depth {}; depth supervision {:?}.",
            s.train.optim.steps,
            s.train.optim.batch_size,
            s.train.optim.lr,
            s.train.optim.momentum,
            s.train.optim.weight_decay,
            s.seed,
            s.train.loss.weights.semantic,
            s.train.loss.weights.depth,
            s.train.loss.depth_supervision,
        )];
        for r in &self.rows {
            if let Some(e) = &r.error {
                notes.push(format!("{} failed: {e}", r.variant));
            }
        }
        render_table(&rows, &notes)
    }
}
