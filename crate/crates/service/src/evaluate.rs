use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use splatseg_core::metrics::{evaluate_run, MetricError, MetricReport};
use splatseg_core::scene::{load_dataset_scene, load_gaussian_ply, PlyFormatHint};
use splatseg_core::InstanceMask;

use crate::export::PLY_NAME;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("missing predictions for {} view(s): {}", .0.len(), .0.join(", "))]
    MissingViews(Vec<String>),
    #[error(transparent)]
    Metric(MetricError),
    #[error("{0}")]
    Load(String),
}

impl From<MetricError> for EvalError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::MissingViews(v) => EvalError::MissingViews(v),
            other => EvalError::Metric(other),
        }
    }
}

/// Where a prediction for `stem` may live: `<pred>/<stem>.png`, then
/// `<pred>/masks/<stem>.png` (the export layout).
fn prediction_path(pred_dir: &Path, stem: &str) -> Option<PathBuf> {
    [pred_dir.join(format!("{stem}.png")), pred_dir.join("masks").join(format!("{stem}.png"))]
        .into_iter()
        .find(|p| p.is_file())
}

pub struct EvalOutput {
    pub report: MetricReport,
    pub json_path: PathBuf,
    pub csv_path: PathBuf,
}

/// Score a prediction directory against a dataset and write `report.json`
/// and `report.csv` into `out_dir`. A `labeled_scene.ply` in the prediction
/// directory adds the 3D score.
pub fn evaluate_dir(dataset_root: &Path, pred_dir: &Path, method: &str, out_dir: &Path) -> Result<EvalOutput, EvalError> {
    let ds = load_dataset_scene(dataset_root).map_err(|e| EvalError::Load(e.to_string()))?;
    let mut preds = BTreeMap::new();
    for stem in ds.evaluation_stems() {
        if let Some(p) = prediction_path(pred_dir, &stem) {
            let mask = InstanceMask::load(&p).map_err(|e| EvalError::Load(format!("{}: {e}", p.display())))?;
            preds.insert(stem, mask);
        }
    }
    let ply = pred_dir.join(PLY_NAME);
    let labels = if ply.is_file() {
        Some(
            load_gaussian_ply(&ply, PlyFormatHint::Auto)
                .map_err(|e| EvalError::Load(e.to_string()))?
                .labels(),
        )
    } else {
        None
    };
    let report = evaluate_run(&ds, method, &preds, labels.as_deref())?;

    fs::create_dir_all(out_dir).map_err(|e| EvalError::Load(format!("{}: {e}", out_dir.display())))?;
    let json_path = out_dir.join("report.json");
    let csv_path = out_dir.join("report.csv");
    let write = |p: &Path, s: String| fs::write(p, s).map_err(|e| EvalError::Load(format!("{}: {e}", p.display())));
    write(&json_path, report.to_json() + "\n")?;
    write(&csv_path, MetricReport::to_csv(std::slice::from_ref(&report)))?;
    Ok(EvalOutput {
        report,
        json_path,
        csv_path,
    })
}
