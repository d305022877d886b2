pub mod metrics;
pub mod render;

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{Dataset, PatchBundle};
use crate::grid::CellId;
use crate::io;
use crate::model::{predict, FusionHeadParams};
use crate::splits::{SquareSpec, Split};

pub use metrics::{kendall_tau, pair_counts, rmse, PairCounts, TauVariant};
pub use render::{render_score_map, RenderOptions, ScoreMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rmse: f64,
    /// `None` when τ is undefined (fewer than two cells, or constant input
    /// under τ-b).
    pub tau: Option<f64>,
    pub variant: TauVariant,
    /// τ-a, reported alongside whichever variant was requested.
    pub tau_a: Option<f64>,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_predictions(pred: &[f64], target: &[f64], variant: TauVariant) -> Result<Self> {
        let rmse = metrics::rmse(pred, target)?;
        let counts = if pred.len() >= 2 {
            Some(pair_counts(pred, target)?)
        } else {
            None
        };
        Ok(MetricsReport {
            rmse,
            tau: counts.and_then(|c| c.tau(variant).ok()),
            variant,
            tau_a: counts.and_then(|c| c.tau(TauVariant::TauA).ok()),
            n: pred.len(),
        })
    }
}

/// One evaluated cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellPrediction {
    pub cell: CellId,
    pub split: Split,
    pub target: f64,
    pub prediction: f64,
}

fn predict_bundles(params: &FusionHeadParams, split: Split, bundles: &[PatchBundle]) -> Result<Vec<CellPrediction>> {
    let pred = predict(params, bundles)?;
    Ok(bundles
        .iter()
        .zip(pred)
        .map(|(b, (_, p))| CellPrediction {
            cell: b.cell,
            split,
            target: b.target,
            prediction: p,
        })
        .collect())
}

pub fn predict_split(params: &FusionHeadParams, dataset: &Dataset, split: Split) -> Result<Vec<CellPrediction>> {
    predict_bundles(params, split, dataset.split(split))
}

pub fn evaluate_split(
    params: &FusionHeadParams,
    dataset: &Dataset,
    split: Split,
    variant: TauVariant,
) -> Result<MetricsReport> {
    let bundles = dataset.split(split);
    if bundles.is_empty() {
        return Err(Error::EmptySplit(split.as_str()));
    }
    report_of(&predict_bundles(params, split, bundles)?, variant)
}

pub fn report_of(preds: &[CellPrediction], variant: TauVariant) -> Result<MetricsReport> {
    let p: Vec<f64> = preds.iter().map(|c| c.prediction).collect();
    let t: Vec<f64> = preds.iter().map(|c| c.target).collect();
    MetricsReport::from_predictions(&p, &t, variant)
}

/// Test cells grouped by the square that contains them. Tile ids are
/// `tile<k>` with `k` the square's position in the list.
pub fn group_by_tile<'a>(
    preds: &'a [CellPrediction],
    squares: &[SquareSpec],
) -> BTreeMap<String, Vec<&'a CellPrediction>> {
    let mut out = BTreeMap::new();
    for (k, sq) in squares.iter().enumerate() {
        let cells: Vec<_> = preds
            .iter()
            .filter(|p| p.split == Split::Test && sq.contains(p.cell))
            .collect();
        out.insert(tile_id(k), cells);
    }
    out
}

pub fn tile_id(k: usize) -> String {
    format!("tile{k}")
}

/// Metrics per test tile; tiles without any evaluated cell are skipped.
pub fn evaluate_tiles(
    preds: &[CellPrediction],
    squares: &[SquareSpec],
    variant: TauVariant,
) -> Result<BTreeMap<String, MetricsReport>> {
    let mut out = BTreeMap::new();
    for (id, cells) in group_by_tile(preds, squares) {
        if cells.is_empty() {
            continue;
        }
        let owned: Vec<CellPrediction> = cells.into_iter().copied().collect();
        out.insert(id, report_of(&owned, variant)?);
    }
    Ok(out)
}

pub fn save_predictions(path: &Path, preds: &[CellPrediction]) -> Result<()> {
    let mut w = io::create(path)?;
    io::write_line(path, &mut w, format_args!("cell_x,cell_y,split,target,prediction"))?;
    for p in preds {
        io::write_line(
            path,
            &mut w,
            format_args!("{},{},{},{},{}", p.cell.cx, p.cell.cy, p.split, p.target, p.prediction),
        )?;
    }
    io::finish(path, w)
}
