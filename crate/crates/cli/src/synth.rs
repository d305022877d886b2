//! Seeded synthetic city: a score grid, aerial and ground features with a
//! known linear relation to the score, geotagged images, scene activations
//! with known filter outcomes, test squares, and a manifest pointing at all
//! of it.
//!
//! The score of a cell is `scale · (û·a + û·ḡ) + ε` where `a` is the aerial
//! feature, `ḡ` the pooled ground feature exactly as the pipeline pools it
//! (patch assignment, no filter), and `û` a seeded unit direction. Because
//! the merge is `a + ḡ`, the noise-free score is linear in the merged
//! feature.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use livmap_core::features::{pool_ground_features, FeatureRole};
use livmap_core::imagery::{
    save_activations, save_building_classes, save_images, save_outdoor_mask, ImageSource, SCENE_CLASSES,
};
use livmap_core::splits::{generate_splits, save_squares};
use livmap_core::{
    assign_images_to_cells, AerialStore, AssignMode, CellId, Error, GeoImage, GroundStore, Result, ScoreGrid,
    SceneActivations, SquareSpec, CELL_SIZE_M,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::Serialize;

use crate::manifest::RunManifest;

/// First outdoor scene class; classes below are indoor.
pub const FIRST_OUTDOOR_CLASS: usize = 150;
/// Building classes are `BUILDING_CLASSES.start..BUILDING_CLASSES.end`.
pub const BUILDING_CLASSES: std::ops::Range<usize> = 300..324;
pub const DEFAULT_BUFFER: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub dim: usize,
    /// Mean images per cell.
    pub lambda: f64,
    /// Absolute noise standard deviation; overrides `noise_rel`.
    pub noise: Option<f64>,
    /// Noise standard deviation as a fraction of the noise-free score std.
    pub noise_rel: f64,
    /// Std of the ground signal `û·ḡ` relative to the aerial one `û·a`.
    pub ground_weight: f64,
    /// Weight of the score direction in the per-cell ground latent, which
    /// is otherwise isotropic standard normal.
    pub latent_signal: f64,
    /// Per-image feature noise around the cell latent.
    pub image_noise: f64,
    /// Score units per unit of `û·m`.
    pub scale: f64,
    /// Square side in cells; 0 picks 15% of the shorter grid side.
    pub square_side: u32,
    pub buffer: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            width: 40,
            height: 40,
            dim: 64,
            lambda: 3.0,
            noise: None,
            noise_rel: 0.05,
            ground_weight: 2.0,
            latent_signal: 30.0,
            image_noise: 0.5,
            scale: 10.0,
            square_side: 0,
            buffer: DEFAULT_BUFFER,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.width == 0 || self.height == 0 || self.dim == 0 {
            return bad("grid size and dim must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if self.noise.is_some_and(|n| !(n >= 0.0 && n.is_finite())) || !(self.noise_rel >= 0.0 && self.noise_rel.is_finite()) {
            return bad("noise must be finite and non-negative");
        }
        if !(self.ground_weight > 0.0 && self.ground_weight.is_finite()) || !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad("ground weight and scale must be positive");
        }
        if !(self.image_noise >= 0.0 && self.image_noise.is_finite()) || !self.latent_signal.is_finite() {
            return bad("image noise must be finite and non-negative");
        }
        Ok(())
    }
}

/// What the generator did, written next to the data.
#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub config: SynthConfig,
    pub cells: usize,
    pub images: usize,
    pub cells_without_images: usize,
    pub direction: Vec<f64>,
    /// Factor applied to raw ground features so the ground signal has the
    /// requested weight.
    pub ground_factor: f64,
    pub signal_std: f64,
    pub noise_std: f64,
    pub squares: Vec<SquareSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SceneKind {
    Building,
    Outdoor,
    Indoor,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Adds `k` distinct classes from `pool` that are not yet in `top`.
fn take(pool: &[usize], k: usize, top: &mut Vec<usize>, rng: &mut ChaCha8Rng) {
    let target = top.len() + k;
    while top.len() < target {
        let c = pool[rng.random_range(0..pool.len())];
        if !top.contains(&c) {
            top.push(c);
        }
    }
}

/// Ten top classes with weights from 0.12 down to about 0.057; the rest of
/// the unit mass is spread evenly over the other classes, far below 0.05.
fn activations_for(kind: SceneKind, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let indoor: Vec<usize> = (0..FIRST_OUTDOOR_CLASS).collect();
    let building: Vec<usize> = BUILDING_CLASSES.collect();
    let plain: Vec<usize> = (FIRST_OUTDOOR_CLASS..SCENE_CLASSES)
        .filter(|c| !BUILDING_CLASSES.contains(c))
        .collect();
    let mut top = Vec::with_capacity(10);
    match kind {
        SceneKind::Building => {
            take(&building, 1, &mut top, rng);
            take(&plain, 9, &mut top, rng);
        }
        SceneKind::Outdoor => {
            // one indoor class among the ten still passes
            let n_in = usize::from(rng.random_bool(0.5));
            take(&indoor, n_in, &mut top, rng);
            take(&plain, 10 - n_in, &mut top, rng);
        }
        SceneKind::Indoor => {
            take(&indoor, 5, &mut top, rng);
            take(&plain, 5, &mut top, rng);
        }
    }
    let weights: Vec<f64> = (0..10)
        .map(|i| 0.12 - 0.007 * i as f64 + rng.random_range(0.0..0.002))
        .collect();
    let rest = (1.0 - weights.iter().sum::<f64>()) / (SCENE_CLASSES - 10) as f64;
    let mut act = vec![rest; SCENE_CLASSES];
    for (c, w) in top.iter().zip(&weights) {
        act[*c] = *w;
    }
    act
}

fn default_squares(cfg: &SynthConfig) -> Vec<SquareSpec> {
    let short = cfg.width.min(cfg.height);
    let side = if cfg.square_side > 0 {
        cfg.square_side
    } else {
        ((short as f64 * 0.15).round() as u32).max(1)
    };
    if side > short {
        return Vec::new();
    }
    let at = |fx: f64, fy: f64| {
        let ox = ((cfg.width - side) as f64 * fx).round() as u32;
        let oy = ((cfg.height - side) as f64 * fy).round() as u32;
        SquareSpec::new(CellId::new(ox, oy), side)
    };
    vec![at(0.2, 0.2), at(0.8, 0.2), at(0.5, 0.8)]
}

/// Generates the dataset under `out` and returns the summary. Every file
/// is a pure function of the config.
pub fn generate(cfg: &SynthConfig, out: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;

    let mut dir: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);

    let cells: Vec<CellId> = (0..cfg.height)
        .flat_map(|cy| (0..cfg.width).map(move |cx| CellId::new(cx, cy)))
        .collect();

    let mut aerial = AerialStore::new(d, FeatureRole::Aerial);
    for &c in &cells {
        let v = (0..d).map(|_| round_f32(normal(&mut rng))).collect();
        aerial.insert(c, v)?;
    }

    let poisson = if cfg.lambda > 0.0 {
        Some(Poisson::new(cfg.lambda).map_err(|e| Error::InvalidInput(e.to_string()))?)
    } else {
        None
    };
    let mut images = Vec::new();
    let mut raw_ground: Vec<Vec<f64>> = Vec::new();
    let mut kinds = Vec::new();
    for &c in &cells {
        let z = normal(&mut rng);
        let latent: Vec<f64> = dir.iter().map(|u| cfg.latent_signal * z * u + normal(&mut rng)).collect();
        let count = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
        for _ in 0..count {
            let id = images.len() as u64 + 1;
            let x = (c.cx as f64 + rng.random_range(0.0..1.0)) * CELL_SIZE_M;
            let y = (c.cy as f64 + rng.random_range(0.0..1.0)) * CELL_SIZE_M;
            images.push(GeoImage {
                image_id: id,
                x,
                y,
                source: ImageSource::Gsv,
            });
            raw_ground.push(latent.iter().map(|l| l + cfg.image_noise * normal(&mut rng)).collect());
            let u: f64 = rng.random_range(0.0..1.0);
            kinds.push(if u < 0.5 {
                SceneKind::Building
            } else if u < 0.8 {
                SceneKind::Outdoor
            } else {
                SceneKind::Indoor
            });
        }
    }

    // Placeholder grid for assignment; scores come later.
    let geometry = ScoreGrid::new(cells.iter().map(|c| (*c, 0.0)).collect())?;
    let assignment = assign_images_to_cells(&images, &geometry, AssignMode::Patch);

    let pooled_signal = |store: &GroundStore| -> Result<BTreeMap<CellId, f64>> {
        let mut out = BTreeMap::new();
        for &c in &cells {
            let ids = assignment.images_of(c);
            if ids.is_empty() {
                continue;
            }
            let members: Vec<_> = ids.iter().map(|id| (*id, store.get(*id).expect("generated"))).collect();
            let pooled = pool_ground_features(&members)?;
            out.insert(c, dot(&dir, pooled.values()));
        }
        Ok(out)
    };

    let build_ground = |factor: f64| -> Result<GroundStore> {
        let mut store = GroundStore::new(d, FeatureRole::Ground);
        for (img, g) in images.iter().zip(&raw_ground) {
            store.insert(img.image_id, g.iter().map(|v| round_f32(v * factor)).collect())?;
        }
        Ok(store)
    };

    let aerial_signal: Vec<f64> = cells.iter().map(|c| dot(&dir, aerial.get(*c).unwrap().values())).collect();
    let aerial_std = std_dev(&aerial_signal);
    let unit = build_ground(1.0)?;
    let unit_signal: Vec<f64> = pooled_signal(&unit)?.into_values().collect();
    let ground_factor = if unit_signal.len() >= 2 && std_dev(&unit_signal) > 0.0 {
        cfg.ground_weight * aerial_std / std_dev(&unit_signal)
    } else {
        1.0
    };
    let ground = build_ground(ground_factor)?;
    let ground_signal = pooled_signal(&ground)?;

    let signal: Vec<f64> = cells
        .iter()
        .zip(&aerial_signal)
        .map(|(c, a)| cfg.scale * (a + ground_signal.get(c).copied().unwrap_or(0.0)))
        .collect();
    let signal_std = std_dev(&signal);
    let noise_std = cfg.noise.unwrap_or(cfg.noise_rel * signal_std);
    let scores: BTreeMap<CellId, f64> = cells
        .iter()
        .zip(&signal)
        .map(|(c, s)| (*c, s + noise_std * normal(&mut rng)))
        .collect();
    let grid = ScoreGrid::new(scores)?;

    let mut squares = Vec::new();
    for sq in default_squares(cfg) {
        let mut trial = squares.clone();
        trial.push(sq);
        if generate_splits(&grid, &trial, cfg.buffer).is_ok() {
            squares = trial;
        }
    }

    let acts: Vec<SceneActivations> = images
        .iter()
        .zip(&kinds)
        .map(|(img, k)| SceneActivations::new(img.image_id, activations_for(*k, &mut rng)))
        .collect::<Result<_>>()?;
    let mask: Vec<bool> = (0..SCENE_CLASSES).map(|c| c >= FIRST_OUTDOOR_CLASS).collect();
    let building: BTreeSet<usize> = BUILDING_CLASSES.collect();

    let files = SynthFiles::new(out);
    grid.save(&files.scores)?;
    save_squares(&files.squares, &squares)?;
    save_images(&files.images, &images)?;
    save_activations(&files.activations, &acts)?;
    save_outdoor_mask(&files.outdoor_mask, &mask)?;
    save_building_classes(&files.building_classes, &building)?;
    aerial.save_csv(&files.aerial)?;
    ground.save_csv(&files.ground)?;
    write_filter_truth(&out.join("filter_truth.csv"), &images, &kinds)?;

    let summary = SynthSummary {
        config: cfg.clone(),
        cells: cells.len(),
        images: images.len(),
        cells_without_images: cells.iter().filter(|c| assignment.images_of(**c).is_empty()).count(),
        direction: dir,
        ground_factor,
        signal_std,
        noise_std,
        squares,
    };
    crate::write_json(&out.join("synth.json"), &summary)?;
    crate::write_json(&out.join("manifest.json"), &files.manifest(cfg))?;
    Ok(summary)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn write_filter_truth(path: &Path, images: &[GeoImage], kinds: &[SceneKind]) -> Result<()> {
    let mut text = String::from("image_id,outdoors,buildings\n");
    for (img, k) in images.iter().zip(kinds) {
        let (o, b) = match k {
            SceneKind::Building => (1, 1),
            SceneKind::Outdoor => (1, 0),
            SceneKind::Indoor => (0, 0),
        };
        text.push_str(&format!("{},{o},{b}\n", img.image_id));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct SynthFiles {
    scores: PathBuf,
    squares: PathBuf,
    images: PathBuf,
    activations: PathBuf,
    outdoor_mask: PathBuf,
    building_classes: PathBuf,
    aerial: PathBuf,
    ground: PathBuf,
}

impl SynthFiles {
    fn new(out: &Path) -> Self {
        SynthFiles {
            scores: out.join("scores.csv"),
            squares: out.join("squares.csv"),
            images: out.join("images.csv"),
            activations: out.join("activations.csv"),
            outdoor_mask: out.join("outdoor_mask.csv"),
            building_classes: out.join("building_classes.csv"),
            aerial: out.join("aerial_features.csv"),
            ground: out.join("ground_features.csv"),
        }
    }

    /// Manifest with paths relative to the dataset directory.
    fn manifest(&self, cfg: &SynthConfig) -> RunManifest {
        let rel = |p: &Path| Some(PathBuf::from(p.file_name().expect("file name")));
        RunManifest {
            scores: rel(&self.scores),
            squares: rel(&self.squares),
            images: rel(&self.images),
            activations: rel(&self.activations),
            outdoor_mask: rel(&self.outdoor_mask),
            building_classes: rel(&self.building_classes),
            aerial_features: rel(&self.aerial),
            ground_features: rel(&self.ground),
            buffer: Some(cfg.buffer),
            seed: Some(cfg.seed),
            ..Default::default()
        }
    }
}
