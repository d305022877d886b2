//! 100 m cell grid geometry and per-cell score storage.
//!
//! Coordinates are projected meters. A cell `(cx, cy)` covers
//! `[100·cx, 100·cx + 100) × [100·cy, 100·cy + 100)`; the aerial patch of a
//! cell is the 500 m window centred on the cell centre, so neighbouring
//! patches overlap.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, CsvInput};

pub const CELL_SIZE_M: f64 = 100.0;
pub const PATCH_HALF_WIDTH_M: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub cx: u32,
    pub cy: u32,
}

impl CellId {
    pub const fn new(cx: u32, cy: u32) -> Self {
        CellId { cx, cy }
    }

    /// Chebyshev (square-ring) distance in cells.
    pub fn chebyshev(self, other: CellId) -> u32 {
        self.cx.abs_diff(other.cx).max(self.cy.abs_diff(other.cy))
    }

    pub fn center(self) -> (f64, f64) {
        (
            CELL_SIZE_M * f64::from(self.cx) + CELL_SIZE_M / 2.0,
            CELL_SIZE_M * f64::from(self.cy) + CELL_SIZE_M / 2.0,
        )
    }

    /// Packs the cell into a single `u64` key (`cx` in the high half).
    pub fn to_key(self) -> u64 {
        (u64::from(self.cx) << 32) | u64::from(self.cy)
    }

    pub fn from_key(key: u64) -> Self {
        CellId::new((key >> 32) as u32, key as u32)
    }
}

/// Inclusive index bounds of the stored cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridBounds {
    pub min: CellId,
    pub max: CellId,
}

impl GridBounds {
    pub fn contains(&self, c: CellId) -> bool {
        (self.min.cx..=self.max.cx).contains(&c.cx) && (self.min.cy..=self.max.cy).contains(&c.cy)
    }

    pub fn width(&self) -> u32 {
        self.max.cx - self.min.cx + 1
    }

    pub fn height(&self) -> u32 {
        self.max.cy - self.min.cy + 1
    }
}

/// Sparse grid of housing-quality scores, one per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    cells: BTreeMap<CellId, f64>,
    bounds: Option<GridBounds>,
}

impl ScoreGrid {
    pub fn new(cells: BTreeMap<CellId, f64>) -> Result<Self> {
        if cells.values().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("score"));
        }
        let bounds = compute_bounds(cells.keys().copied());
        Ok(ScoreGrid { cells, bounds })
    }

    pub fn cell_size_m(&self) -> f64 {
        CELL_SIZE_M
    }

    pub fn bounds(&self) -> Option<GridBounds> {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn score(&self, cell: CellId) -> Option<f64> {
        self.cells.get(&cell).copied()
    }

    pub fn contains(&self, cell: CellId) -> bool {
        self.cells.contains_key(&cell)
    }

    /// Cells in ascending `CellId` order.
    pub fn iter(&self) -> impl Iterator<Item = (CellId, f64)> + '_ {
        self.cells.iter().map(|(c, s)| (*c, *s))
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        self.cells.keys().copied()
    }

    /// Whether a metric point falls inside the bounding box of the grid.
    pub fn point_in_bounds(&self, x: f64, y: f64) -> bool {
        let Some(b) = self.bounds else { return false };
        let x0 = CELL_SIZE_M * f64::from(b.min.cx);
        let y0 = CELL_SIZE_M * f64::from(b.min.cy);
        let x1 = CELL_SIZE_M * (f64::from(b.max.cx) + 1.0);
        let y1 = CELL_SIZE_M * (f64::from(b.max.cy) + 1.0);
        x.is_finite() && y.is_finite() && x >= x0 && x < x1 && y >= y0 && y < y1
    }

    /// The cell containing `(x, y)`. Lower cell edges are inclusive.
    pub fn cell_of_point(&self, x: f64, y: f64) -> Result<CellId> {
        if !self.point_in_bounds(x, y) {
            return Err(Error::OutOfBounds { x, y });
        }
        Ok(CellId::new(
            (x / CELL_SIZE_M).floor() as u32,
            (y / CELL_SIZE_M).floor() as u32,
        ))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut input = CsvInput::open(path)?;
        input.expect_header(&["cell_x", "cell_y", "score"])?;
        let name = input.name.clone();
        let mut cells = BTreeMap::new();
        for row in input.rows() {
            let (line, rec) = row?;
            if rec.len() != 3 {
                return Err(Error::malformed(&name, line, format!("expected 3 columns, got {}", rec.len())));
            }
            let cell = CellId::new(
                io::field(&name, line, &rec, 0, "cell_x")?,
                io::field(&name, line, &rec, 1, "cell_y")?,
            );
            let score: f64 = io::field(&name, line, &rec, 2, "score")?;
            if !score.is_finite() {
                return Err(Error::malformed(&name, line, "non-finite score"));
            }
            if cells.insert(cell, score).is_some() {
                return Err(Error::DuplicateCell {
                    file: name,
                    row: line,
                    cell,
                });
            }
        }
        ScoreGrid::new(cells)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = io::create(path)?;
        io::write_line(path, &mut w, format_args!("cell_x,cell_y,score"))?;
        for (c, s) in self.iter() {
            io::write_line(path, &mut w, format_args!("{},{},{}", c.cx, c.cy, s))?;
        }
        io::finish(path, w)
    }
}

/// Convenience wrapper matching the file-loading operation name.
pub fn load_score_grid(path: &Path) -> Result<ScoreGrid> {
    ScoreGrid::load(path)
}

pub(crate) fn compute_bounds(cells: impl Iterator<Item = CellId>) -> Option<GridBounds> {
    cells.fold(None, |acc, c| {
        Some(match acc {
            None => GridBounds { min: c, max: c },
            Some(b) => GridBounds {
                min: CellId::new(b.min.cx.min(c.cx), b.min.cy.min(c.cy)),
                max: CellId::new(b.max.cx.max(c.cx), b.max.cy.max(c.cy)),
            },
        })
    })
}

/// The aerial window attached to a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchGeometry {
    pub center_x: f64,
    pub center_y: f64,
    pub half_width: f64,
}

impl PatchGeometry {
    /// `(x_min, x_max, y_min, y_max)`; the window is half-open like cells.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.center_x - self.half_width,
            self.center_x + self.half_width,
            self.center_y - self.half_width,
            self.center_y + self.half_width,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, x1, y0, y1) = self.extent();
        x >= x0 && x < x1 && y >= y0 && y < y1
    }
}

pub fn patch_extent_of_cell(cell: CellId) -> PatchGeometry {
    let (center_x, center_y) = cell.center();
    PatchGeometry {
        center_x,
        center_y,
        half_width: PATCH_HALF_WIDTH_M,
    }
}
