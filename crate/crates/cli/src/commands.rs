//! The pipeline stages behind each subcommand.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use livmap_core::eval::{
    evaluate_tiles, predict_split, render_score_map, report_of, save_predictions, tile_id, CellPrediction,
    MetricsReport,
};
use livmap_core::features::FeatureRole;
use livmap_core::imagery::{load_activations, load_building_classes, load_images, load_outdoor_mask, FilterOutcome};
use livmap_core::model::checkpoint::{load_checkpoint, save_checkpoint};
use livmap_core::splits::{load_squares, validate_splits_for_grid};
use livmap_core::{
    apply_filter, assign_images_to_cells, build_dataset, generate_splits, train_model, AerialStore, CellId, Dataset,
    Error, FilterMode, FilterSpec, GridBounds, GroundStore, ImageAssignment, Result, ScoreGrid, Split,
    SplitAssignment, SquareSpec, TauVariant,
};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::write_json;

fn out_dir(m: &RunManifest) -> Result<PathBuf> {
    let dir = m.path(&m.out_dir, "out_dir")?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn save_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    write_json(&dir.join("manifest.json"), m)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_grid(m: &RunManifest) -> Result<ScoreGrid> {
    ScoreGrid::load(&m.path(&m.scores, "scores")?)
}

fn load_split_assignment(m: &RunManifest, grid: &ScoreGrid) -> Result<SplitAssignment> {
    let a = match &m.splits {
        Some(p) => SplitAssignment::load(p, m.buffer())?,
        None => {
            let squares = load_squares(&m.path(&m.squares, "squares")?)?;
            generate_splits(grid, &squares, m.buffer())?
        }
    };
    validate_splits_for_grid(&a, grid).map_err(|r| Error::InvalidInput(r.to_string()))?;
    Ok(a)
}

fn filter_spec(m: &RunManifest, mode: FilterMode) -> Result<FilterSpec> {
    let mask = load_outdoor_mask(&m.path(&m.outdoor_mask, "outdoor_mask")?)?;
    let building = load_building_classes(&m.path(&m.building_classes, "building_classes")?)?;
    FilterSpec::new(mode, mask, building)?.with_threshold(m.building_threshold())
}

fn run_filter(m: &RunManifest, mode: FilterMode) -> Result<FilterOutcome> {
    let images = load_images(&m.path(&m.images, "images")?)?;
    let acts = load_activations(&m.path(&m.activations, "activations")?)?;
    apply_filter(&images, &acts, &filter_spec(m, mode)?)
}

/// Images after the optional scene filter, assigned to cells.
fn image_assignment(m: &RunManifest, grid: &ScoreGrid) -> Result<ImageAssignment> {
    let mut images = load_images(&m.path(&m.images, "images")?)?;
    if let Some(mode) = m.filter_mode()? {
        let kept: BTreeSet<u64> = run_filter(m, mode)?.retained.into_iter().collect();
        images.retain(|i| kept.contains(&i.image_id));
    }
    Ok(assign_images_to_cells(&images, grid, m.assign_mode()?))
}

pub struct Loaded {
    pub grid: ScoreGrid,
    pub splits: SplitAssignment,
    pub dataset: Dataset,
}

pub fn load_dataset(m: &RunManifest) -> Result<Loaded> {
    let grid = load_grid(m)?;
    let splits = load_split_assignment(m, &grid)?;
    let ablation = m.ablation()?;
    let aerial = AerialStore::load(&m.path(&m.aerial_features, "aerial_features")?, FeatureRole::Aerial)?;
    let (assignment, ground) = if ablation == livmap_core::Ablation::ZeroGround {
        (ImageAssignment::default(), GroundStore::new(aerial.dim(), FeatureRole::Ground))
    } else {
        (
            image_assignment(m, &grid)?,
            GroundStore::load(&m.path(&m.ground_features, "ground_features")?, FeatureRole::Ground)?,
        )
    };
    let dataset = build_dataset(&grid, &splits, &assignment, &aerial, &ground, ablation)?;
    Ok(Loaded { grid, splits, dataset })
}

pub fn cmd_split(m: &RunManifest) -> Result<()> {
    let dir = out_dir(m)?;
    let grid = load_grid(m)?;
    let squares = load_squares(&m.path(&m.squares, "squares")?)?;
    let a = generate_splits(&grid, &squares, m.buffer())?;
    validate_splits_for_grid(&a, &grid).map_err(|r| Error::InvalidInput(r.to_string()))?;
    let assignment = match &m.images {
        Some(_) => Some(image_assignment(m, &grid)?),
        None => None,
    };
    a.save(&dir.join("splits.csv"))?;

    let mut text = String::from("subset,cells,cells_with_images,coverage_pct\n");
    let mut rows = Vec::new();
    for s in Split::ALL {
        let cells: Vec<CellId> = a.cells_in(s).collect();
        let with = assignment
            .as_ref()
            .map_or(cells.len(), |asg| cells.iter().filter(|c| !asg.images_of(**c).is_empty()).count());
        rows.push((s.to_string(), cells.len(), with));
    }
    let total = rows.iter().fold((0, 0), |acc, r| (acc.0 + r.1, acc.1 + r.2));
    rows.push(("total".into(), total.0, total.1));
    for (name, n, with) in &rows {
        let pct = if *n == 0 { 0.0 } else { 100.0 * *with as f64 / *n as f64 };
        text.push_str(&format!("{name},{n},{with},{pct:.2}\n"));
    }
    write_text(&dir.join("split_stats.csv"), &text)?;
    save_manifest(&dir, m)?;
    println!(
        "splits: train {} val {} test {} (buffer {})",
        a.count(Split::Train),
        a.count(Split::Val),
        a.count(Split::Test),
        m.buffer()
    );
    Ok(())
}

#[derive(Serialize)]
struct FilterReport {
    mode: FilterMode,
    building_threshold: f64,
    input_count: usize,
    retained_count: usize,
    retention_pct: f64,
    seed: u64,
}

pub fn cmd_filter(m: &RunManifest) -> Result<()> {
    let mode = m
        .filter_mode()?
        .ok_or_else(|| Error::InvalidInput("filter needs --filter outdoors|buildings".into()))?;
    let dir = out_dir(m)?;
    let outcome = run_filter(m, mode)?;
    let mut text = String::from("image_id\n");
    for id in &outcome.retained {
        text.push_str(&format!("{id}\n"));
    }
    write_text(&dir.join("retained.csv"), &text)?;
    write_json(
        &dir.join("filter_report.json"),
        &FilterReport {
            mode,
            building_threshold: m.building_threshold(),
            input_count: outcome.input_count,
            retained_count: outcome.retained_count,
            retention_pct: outcome.retention_pct(),
            seed: m.seed(),
        },
    )?;
    save_manifest(&dir, m)?;
    println!("{mode}: kept {}/{} images", outcome.retained_count, outcome.input_count);
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    seed: u64,
    ablation: String,
    best_epoch: Option<usize>,
    epochs_run: usize,
    cells: BTreeMap<Split, usize>,
    excluded: BTreeMap<Split, usize>,
    adapter_distance_from_identity: f64,
}

pub fn cmd_train(m: &RunManifest) -> Result<()> {
    let cfg = m.train_config()?;
    let dir = out_dir(m)?;
    let loaded = load_dataset(m)?;
    let ds = &loaded.dataset;
    let trained = train_model(ds, &cfg)?;
    save_checkpoint(&trained.params, &dir.join("model.ckpt"))?;
    save_checkpoint(&trained.final_params, &dir.join("last.ckpt"))?;
    write_text(&dir.join("history.csv"), &trained.history.to_csv())?;
    write_json(
        &dir.join("train_report.json"),
        &TrainReport {
            seed: cfg.seed,
            ablation: ds.ablation.label().into(),
            best_epoch: trained.best_epoch,
            epochs_run: trained.history.len(),
            cells: Split::ALL.iter().map(|s| (*s, ds.split(*s).len())).collect(),
            excluded: Split::ALL.iter().map(|s| (*s, ds.excluded(*s))).collect(),
            adapter_distance_from_identity: trained.final_params.adapter_distance_from_identity(),
        },
    )?;
    save_manifest(&dir, m)?;
    if let Some(last) = trained.history.epochs.last() {
        println!(
            "trained {} epochs; best epoch {:?}; last val rmse {:.6} tau {:.4}",
            trained.history.len(),
            trained.best_epoch,
            last.val_rmse,
            last.val_tau
        );
    }
    Ok(())
}

fn load_model(m: &RunManifest, dataset: &Dataset) -> Result<livmap_core::FusionHeadParams> {
    let params = load_checkpoint(&m.path(&m.checkpoint, "checkpoint")?)?;
    if params.dim() != dataset.dim {
        return Err(Error::DimMismatch {
            expected: params.dim(),
            got: dataset.dim,
        });
    }
    Ok(params)
}

fn all_predictions(params: &livmap_core::FusionHeadParams, ds: &Dataset) -> Result<Vec<CellPrediction>> {
    let mut out = Vec::new();
    for s in Split::ALL {
        out.extend(predict_split(params, ds, s)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct MetricsFile {
    seed: u64,
    ablation: String,
    variant: TauVariant,
    splits: BTreeMap<Split, MetricsReport>,
    tiles: BTreeMap<String, MetricsReport>,
}

pub fn cmd_eval(m: &RunManifest) -> Result<()> {
    let dir = out_dir(m)?;
    let variant = m.tau_variant()?;
    let loaded = load_dataset(m)?;
    let ds = &loaded.dataset;
    let params = load_model(m, ds)?;
    let preds = all_predictions(&params, ds)?;
    let mut splits = BTreeMap::new();
    for s in Split::ALL {
        let part: Vec<CellPrediction> = preds.iter().filter(|p| p.split == s).copied().collect();
        if !part.is_empty() {
            splits.insert(s, report_of(&part, variant)?);
        }
    }
    if splits.is_empty() {
        return Err(Error::EmptySplit("all"));
    }
    let tiles = match &m.squares {
        Some(p) => evaluate_tiles(&preds, &load_squares(p)?, variant)?,
        None => BTreeMap::new(),
    };
    save_predictions(&dir.join("predictions.csv"), &preds)?;
    write_json(
        &dir.join("metrics.json"),
        &MetricsFile {
            seed: m.seed(),
            ablation: ds.ablation.label().into(),
            variant,
            splits: splits.clone(),
            tiles,
        },
    )?;
    save_manifest(&dir, m)?;
    for (s, r) in &splits {
        println!(
            "{s}: n {} rmse {:.6} {variant} {}",
            r.n,
            r.rmse,
            r.tau.map_or("undefined".into(), |t| format!("{t:.4}"))
        );
    }
    Ok(())
}

fn square_bounds(sq: &SquareSpec) -> GridBounds {
    GridBounds {
        min: sq.origin,
        max: CellId::new(sq.origin.cx + sq.side - 1, sq.origin.cy + sq.side - 1),
    }
}

pub fn cmd_map(m: &RunManifest) -> Result<()> {
    let dir = out_dir(m)?;
    let opts = m.render_options()?;
    let squares = load_squares(&m.path(&m.squares, "squares")?)?;
    let ids: Vec<String> = (0..squares.len()).map(tile_id).collect();
    let wanted: Vec<String> = match &m.tiles {
        Some(t) if !t.is_empty() => t.clone(),
        _ => ids.clone(),
    };
    for t in &wanted {
        if !ids.contains(t) {
            return Err(Error::InvalidInput(format!("unknown tile `{t}` (known: {})", ids.join(", "))));
        }
    }
    let loaded = load_dataset(m)?;
    let params = load_model(m, &loaded.dataset)?;
    let preds = all_predictions(&params, &loaded.dataset)?;
    for t in &wanted {
        let k = ids.iter().position(|i| i == t).expect("checked");
        let sq = &squares[k];
        let bounds = square_bounds(sq);
        let truth: BTreeMap<CellId, f64> = loaded.grid.iter().filter(|(c, _)| sq.contains(*c)).collect();
        let predicted: BTreeMap<CellId, f64> = preds
            .iter()
            .filter(|p| sq.contains(p.cell))
            .map(|p| (p.cell, p.prediction))
            .collect();
        for (source, values) in [("truth", &truth), ("prediction", &predicted)] {
            if values.is_empty() {
                println!("{t}: no {source} values, skipped");
                continue;
            }
            let map = render_score_map(values, bounds, &opts)?;
            map.save(&dir.join(format!("{t}_{source}.png")), &dir.join(format!("{t}_{source}.csv")))?;
        }
    }
    save_manifest(&dir, m)?;
    println!("rendered {} tile(s) into {}", wanted.len(), dir.display());
    Ok(())
}
