//! Geotagged ground-level images, their assignment to grid cells, and the
//! two scene-classification filters used to curate photo-sharing corpora.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{patch_extent_of_cell, CellId, ScoreGrid, CELL_SIZE_M};
use crate::io::{self, CsvInput};

pub const SCENE_CLASSES: usize = 365;
pub const DEFAULT_BUILDING_THRESHOLD: f64 = 0.05;
pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_MIN_OUTDOOR: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageSource {
    Gsv,
    Flickr,
}

impl fmt::Display for ImageSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImageSource::Gsv => "gsv",
            ImageSource::Flickr => "flickr",
        })
    }
}

impl FromStr for ImageSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gsv" => Ok(ImageSource::Gsv),
            "flickr" => Ok(ImageSource::Flickr),
            other => Err(format!("unknown image source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoImage {
    pub image_id: u64,
    pub x: f64,
    pub y: f64,
    pub source: ImageSource,
}

/// Raw scene-classifier output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneActivations {
    pub image_id: u64,
    act: Vec<f64>,
}

impl SceneActivations {
    pub fn new(image_id: u64, act: Vec<f64>) -> Result<Self> {
        if act.len() != SCENE_CLASSES {
            return Err(Error::DimMismatch {
                expected: SCENE_CLASSES,
                got: act.len(),
            });
        }
        if act.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidInput(format!(
                "image {image_id}: activations must be finite and non-negative"
            )));
        }
        Ok(SceneActivations { image_id, act })
    }

    pub fn values(&self) -> &[f64] {
        &self.act
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Outdoors,
    Buildings,
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMode::Outdoors => "outdoors",
            FilterMode::Buildings => "buildings",
        })
    }
}

impl FromStr for FilterMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "outdoors" => Ok(FilterMode::Outdoors),
            "buildings" => Ok(FilterMode::Buildings),
            other => Err(format!("unknown filter mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub mode: FilterMode,
    pub outdoor_mask: Vec<bool>,
    pub building_classes: BTreeSet<usize>,
    pub threshold: f64,
    pub top_k: usize,
    pub min_outdoor: usize,
}

impl FilterSpec {
    pub fn new(mode: FilterMode, outdoor_mask: Vec<bool>, building_classes: BTreeSet<usize>) -> Result<Self> {
        let spec = FilterSpec {
            mode,
            outdoor_mask,
            building_classes,
            threshold: DEFAULT_BUILDING_THRESHOLD,
            top_k: DEFAULT_TOP_K,
            min_outdoor: DEFAULT_MIN_OUTDOOR,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        self.threshold = threshold;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.outdoor_mask.len() != SCENE_CLASSES {
            return Err(Error::DimMismatch {
                expected: SCENE_CLASSES,
                got: self.outdoor_mask.len(),
            });
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidInput("filter threshold must be positive".into()));
        }
        if self.top_k == 0 || self.top_k > SCENE_CLASSES || self.min_outdoor > self.top_k {
            return Err(Error::InvalidInput("need 0 < top_k <= 365 and min_outdoor <= top_k".into()));
        }
        if let Some(c) = self.building_classes.iter().find(|c| **c >= SCENE_CLASSES) {
            return Err(Error::InvalidInput(format!("building class {c} out of range")));
        }
        Ok(())
    }

    pub fn passes(&self, acts: &SceneActivations) -> Result<bool> {
        match self.mode {
            FilterMode::Outdoors => filter_outdoors(acts, self),
            FilterMode::Buildings => filter_buildings(acts, self),
        }
    }
}

fn check_len(acts: &SceneActivations) -> Result<()> {
    if acts.act.len() != SCENE_CLASSES {
        return Err(Error::DimMismatch {
            expected: SCENE_CLASSES,
            got: acts.act.len(),
        });
    }
    Ok(())
}

/// True when at least `min_outdoor` of the `top_k` most activated classes are
/// outdoor classes. Equal activations rank the lower class index first.
pub fn filter_outdoors(acts: &SceneActivations, spec: &FilterSpec) -> Result<bool> {
    check_len(acts)?;
    let mut order: Vec<usize> = (0..SCENE_CLASSES).collect();
    let by_activation = |a: &usize, b: &usize| acts.act[*b].total_cmp(&acts.act[*a]).then(a.cmp(b));
    order.select_nth_unstable_by(spec.top_k - 1, by_activation);
    let outdoor = order[..spec.top_k]
        .iter()
        .filter(|c| spec.outdoor_mask[**c])
        .count();
    Ok(outdoor >= spec.min_outdoor)
}

/// True when some building class reaches the threshold (inclusive).
pub fn filter_buildings(acts: &SceneActivations, spec: &FilterSpec) -> Result<bool> {
    check_len(acts)?;
    Ok(spec
        .building_classes
        .iter()
        .any(|&c| acts.act[c] >= spec.threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterOutcome {
    pub mode: FilterMode,
    /// Retained ids, ascending.
    pub retained: Vec<u64>,
    pub input_count: usize,
    pub retained_count: usize,
}

impl FilterOutcome {
    /// Retention in percent; 0 for an empty corpus.
    pub fn retention_pct(&self) -> f64 {
        if self.input_count == 0 {
            0.0
        } else {
            100.0 * self.retained_count as f64 / self.input_count as f64
        }
    }
}

pub fn apply_filter(
    images: &[GeoImage],
    activations: &HashMap<u64, SceneActivations>,
    spec: &FilterSpec,
) -> Result<FilterOutcome> {
    spec.validate()?;
    let mut retained = images
        .par_iter()
        .map(|img| {
            let acts = activations
                .get(&img.image_id)
                .ok_or(Error::MissingActivations(img.image_id))?;
            Ok(spec.passes(acts)?.then_some(img.image_id))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    retained.sort_unstable();
    retained.dedup();
    let retained_count = retained.len();
    Ok(FilterOutcome {
        mode: spec.mode,
        retained,
        input_count: images.len(),
        retained_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AssignMode {
    /// Every cell whose 500 m patch contains the image.
    #[default]
    Patch,
    /// Only the cell containing the image.
    Cell,
}

impl FromStr for AssignMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "patch" => Ok(AssignMode::Patch),
            "cell" => Ok(AssignMode::Cell),
            other => Err(format!("unknown assignment mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageAssignment {
    /// Image ids per scored cell, ascending. Cells with no images are absent.
    pub cells: BTreeMap<CellId, Vec<u64>>,
    /// Images outside the grid bounds.
    pub dropped: usize,
}

impl ImageAssignment {
    pub fn images_of(&self, cell: CellId) -> &[u64] {
        self.cells.get(&cell).map_or(&[], Vec::as_slice)
    }
}

pub fn assign_images_to_cells(images: &[GeoImage], grid: &ScoreGrid, mode: AssignMode) -> ImageAssignment {
    let mut out = ImageAssignment::default();
    for img in images {
        let Ok(home) = grid.cell_of_point(img.x, img.y) else {
            out.dropped += 1;
            continue;
        };
        match mode {
            AssignMode::Cell => {
                if grid.contains(home) {
                    out.cells.entry(home).or_default().push(img.image_id);
                }
            }
            AssignMode::Patch => {
                // A 250 m half-width reaches at most three cells either way.
                let reach = (crate::grid::PATCH_HALF_WIDTH_M / CELL_SIZE_M).ceil() as u32 + 1;
                for cy in home.cy.saturating_sub(reach)..=home.cy.saturating_add(reach) {
                    for cx in home.cx.saturating_sub(reach)..=home.cx.saturating_add(reach) {
                        let c = CellId::new(cx, cy);
                        if grid.contains(c) && patch_extent_of_cell(c).contains(img.x, img.y) {
                            out.cells.entry(c).or_default().push(img.image_id);
                        }
                    }
                }
            }
        }
    }
    for ids in out.cells.values_mut() {
        ids.sort_unstable();
        ids.dedup();
    }
    out
}

pub fn load_images(path: &Path) -> Result<Vec<GeoImage>> {
    let mut input = CsvInput::open(path)?;
    input.expect_header(&["image_id", "x", "y", "source"])?;
    let name = input.name.clone();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in input.rows() {
        let (line, rec) = row?;
        let img = GeoImage {
            image_id: io::field(&name, line, &rec, 0, "image_id")?,
            x: io::field(&name, line, &rec, 1, "x")?,
            y: io::field(&name, line, &rec, 2, "y")?,
            source: io::field(&name, line, &rec, 3, "source")?,
        };
        if !(img.x.is_finite() && img.y.is_finite()) {
            return Err(Error::malformed(&name, line, "non-finite coordinate"));
        }
        if !seen.insert(img.image_id) {
            return Err(Error::malformed(&name, line, format!("duplicate image_id {}", img.image_id)));
        }
        out.push(img);
    }
    Ok(out)
}

pub fn save_images(path: &Path, images: &[GeoImage]) -> Result<()> {
    let mut w = io::create(path)?;
    io::write_line(path, &mut w, format_args!("image_id,x,y,source"))?;
    for img in images {
        io::write_line(path, &mut w, format_args!("{},{},{},{}", img.image_id, img.x, img.y, img.source))?;
    }
    io::finish(path, w)
}

pub fn activation_header() -> Vec<String> {
    std::iter::once("image_id".to_string())
        .chain((0..SCENE_CLASSES).map(|i| format!("a{i}")))
        .collect()
}

pub fn load_activations(path: &Path) -> Result<HashMap<u64, SceneActivations>> {
    let mut input = CsvInput::open(path)?;
    let header = activation_header();
    input.expect_header(&header.iter().map(String::as_str).collect::<Vec<_>>())?;
    let name = input.name.clone();
    let mut out = HashMap::new();
    for row in input.rows() {
        let (line, rec) = row?;
        let id: u64 = io::field(&name, line, &rec, 0, "image_id")?;
        let act = (1..=SCENE_CLASSES)
            .map(|i| io::field::<f64>(&name, line, &rec, i, &header[i]))
            .collect::<Result<Vec<_>>>()?;
        let acts = SceneActivations::new(id, act).map_err(|e| Error::malformed(&name, line, e.to_string()))?;
        if out.insert(id, acts).is_some() {
            return Err(Error::malformed(&name, line, format!("duplicate image_id {id}")));
        }
    }
    Ok(out)
}

/// Writes activations sorted by image id.
pub fn save_activations<'a>(path: &Path, acts: impl IntoIterator<Item = &'a SceneActivations>) -> Result<()> {
    let mut rows: Vec<&SceneActivations> = acts.into_iter().collect();
    rows.sort_by_key(|a| a.image_id);
    let mut w = io::create(path)?;
    io::write_line(path, &mut w, format_args!("{}", activation_header().join(",")))?;
    for a in rows {
        let mut line = a.image_id.to_string();
        for v in &a.act {
            line.push(',');
            line.push_str(&v.to_string());
        }
        io::write_line(path, &mut w, format_args!("{line}"))?;
    }
    io::finish(path, w)
}

pub fn load_outdoor_mask(path: &Path) -> Result<Vec<bool>> {
    let mut input = CsvInput::open(path)?;
    input.expect_header(&["class_index", "is_outdoor"])?;
    let name = input.name.clone();
    let mut mask = vec![None; SCENE_CLASSES];
    for row in input.rows() {
        let (line, rec) = row?;
        let idx: usize = io::field(&name, line, &rec, 0, "class_index")?;
        let flag: u8 = io::field(&name, line, &rec, 1, "is_outdoor")?;
        if idx >= SCENE_CLASSES || flag > 1 {
            return Err(Error::malformed(&name, line, "class_index must be < 365 and is_outdoor 0 or 1"));
        }
        if mask[idx].replace(flag == 1).is_some() {
            return Err(Error::malformed(&name, line, format!("duplicate class_index {idx}")));
        }
    }
    mask.into_iter()
        .enumerate()
        .map(|(i, m)| m.ok_or_else(|| Error::InvalidInput(format!("{name}: class {i} missing from outdoor mask"))))
        .collect()
}

pub fn save_outdoor_mask(path: &Path, mask: &[bool]) -> Result<()> {
    let mut w = io::create(path)?;
    io::write_line(path, &mut w, format_args!("class_index,is_outdoor"))?;
    for (i, m) in mask.iter().enumerate() {
        io::write_line(path, &mut w, format_args!("{},{}", i, u8::from(*m)))?;
    }
    io::finish(path, w)
}

pub fn load_building_classes(path: &Path) -> Result<BTreeSet<usize>> {
    let mut input = CsvInput::open(path)?;
    input.expect_header(&["class_index"])?;
    let name = input.name.clone();
    let mut out = BTreeSet::new();
    for row in input.rows() {
        let (line, rec) = row?;
        let idx: usize = io::field(&name, line, &rec, 0, "class_index")?;
        if idx >= SCENE_CLASSES {
            return Err(Error::malformed(&name, line, "class_index must be < 365"));
        }
        out.insert(idx);
    }
    Ok(out)
}

pub fn save_building_classes(path: &Path, classes: &BTreeSet<usize>) -> Result<()> {
    let mut w = io::create(path)?;
    io::write_line(path, &mut w, format_args!("class_index"))?;
    for c in classes {
        io::write_line(path, &mut w, format_args!("{c}"))?;
    }
    io::finish(path, w)
}
