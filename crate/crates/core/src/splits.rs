//! Train/validation/test assignment from square test regions.
//!
//! Cells inside a test square are TEST. Cells within `buffer_cells`
//! (Chebyshev distance) of a square are VAL, forming a ring that keeps test
//! patches away from training cells. Everything else is TRAIN.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{CellId, GridBounds, ScoreGrid};
use crate::io::{self, CsvInput};

pub const DEFAULT_BUFFER_CELLS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// A square test region, given by its lowest-index corner and side length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SquareSpec {
    pub origin: CellId,
    pub side: u32,
}

impl SquareSpec {
    pub fn new(origin: CellId, side: u32) -> Self {
        SquareSpec { origin, side }
    }

    fn max_corner(&self) -> CellId {
        CellId::new(self.origin.cx + self.side - 1, self.origin.cy + self.side - 1)
    }

    pub fn contains(&self, c: CellId) -> bool {
        self.distance(c) == 0
    }

    /// Chebyshev distance from a cell to the nearest cell of the square.
    pub fn distance(&self, c: CellId) -> u32 {
        let max = self.max_corner();
        let dx = axis_gap(c.cx, self.origin.cx, max.cx);
        let dy = axis_gap(c.cy, self.origin.cy, max.cy);
        dx.max(dy)
    }

    fn inside(&self, b: &GridBounds) -> bool {
        self.side >= 1
            && self.origin.cx.checked_add(self.side - 1).is_some()
            && self.origin.cy.checked_add(self.side - 1).is_some()
            && b.contains(self.origin)
            && b.contains(self.max_corner())
    }

    /// Whether the two squares, each grown by `buffer` cells, intersect.
    fn buffered_overlap(&self, other: &SquareSpec, buffer: u32) -> bool {
        let reach = 2 * i64::from(buffer);
        let (a0, a1) = (self.origin, self.max_corner());
        let (b0, b1) = (other.origin, other.max_corner());
        let axis = |lo_a: u32, hi_a: u32, lo_b: u32, hi_b: u32| {
            i64::from(lo_a) <= i64::from(hi_b) + reach && i64::from(lo_b) <= i64::from(hi_a) + reach
        };
        axis(a0.cx, a1.cx, b0.cx, b1.cx) && axis(a0.cy, a1.cy, b0.cy, b1.cy)
    }
}

fn axis_gap(v: u32, lo: u32, hi: u32) -> u32 {
    if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<CellId, Split>,
    pub buffer_cells: u32,
}

impl SplitAssignment {
    pub fn get(&self, c: CellId) -> Option<Split> {
        self.assignment.get(&c).copied()
    }

    pub fn cells_in(&self, split: Split) -> impl Iterator<Item = CellId> + '_ {
        self.assignment
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(c, _)| *c)
    }

    pub fn count(&self, split: Split) -> usize {
        self.cells_in(split).count()
    }

    /// Reads `splits.csv`. The buffer width is not stored in the file and
    /// must be supplied.
    pub fn load(path: &Path, buffer_cells: u32) -> Result<Self> {
        let mut input = CsvInput::open(path)?;
        input.expect_header(&["cell_x", "cell_y", "split"])?;
        let name = input.name.clone();
        let mut assignment = BTreeMap::new();
        for row in input.rows() {
            let (line, rec) = row?;
            let cell = CellId::new(
                io::field(&name, line, &rec, 0, "cell_x")?,
                io::field(&name, line, &rec, 1, "cell_y")?,
            );
            let split: Split = io::field(&name, line, &rec, 2, "split")?;
            if assignment.insert(cell, split).is_some() {
                return Err(Error::DuplicateCell {
                    file: name,
                    row: line,
                    cell,
                });
            }
        }
        Ok(SplitAssignment {
            assignment,
            buffer_cells,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = io::create(path)?;
        io::write_line(path, &mut w, format_args!("cell_x,cell_y,split"))?;
        for (c, s) in &self.assignment {
            io::write_line(path, &mut w, format_args!("{},{},{}", c.cx, c.cy, s))?;
        }
        io::finish(path, w)
    }
}

pub fn load_squares(path: &Path) -> Result<Vec<SquareSpec>> {
    let mut input = CsvInput::open(path)?;
    input.expect_header(&["origin_x", "origin_y", "side"])?;
    let name = input.name.clone();
    input
        .rows()
        .map(|row| {
            let (line, rec) = row?;
            let side: u32 = io::field(&name, line, &rec, 2, "side")?;
            if side == 0 {
                return Err(Error::malformed(&name, line, "square side must be at least 1"));
            }
            Ok(SquareSpec::new(
                CellId::new(
                    io::field(&name, line, &rec, 0, "origin_x")?,
                    io::field(&name, line, &rec, 1, "origin_y")?,
                ),
                side,
            ))
        })
        .collect()
}

pub fn save_squares(path: &Path, squares: &[SquareSpec]) -> Result<()> {
    let mut w = io::create(path)?;
    io::write_line(path, &mut w, format_args!("origin_x,origin_y,side"))?;
    for s in squares {
        io::write_line(path, &mut w, format_args!("{},{},{}", s.origin.cx, s.origin.cy, s.side))?;
    }
    io::finish(path, w)
}

pub fn generate_splits(grid: &ScoreGrid, squares: &[SquareSpec], buffer_cells: u32) -> Result<SplitAssignment> {
    if let Some(bounds) = grid.bounds() {
        if let Some(sq) = squares.iter().find(|s| !s.inside(&bounds)) {
            return Err(Error::SquareOutOfBounds {
                origin: sq.origin,
                side: sq.side,
            });
        }
    } else if let Some(sq) = squares.first() {
        return Err(Error::SquareOutOfBounds {
            origin: sq.origin,
            side: sq.side,
        });
    }
    for (i, a) in squares.iter().enumerate() {
        for (j, b) in squares.iter().enumerate().skip(i + 1) {
            if a.buffered_overlap(b, buffer_cells) {
                return Err(Error::OverlappingSquares {
                    first: i,
                    second: j,
                    buffer: buffer_cells,
                });
            }
        }
    }

    let assignment = grid
        .cells()
        .map(|c| {
            let nearest = squares.iter().map(|s| s.distance(c)).min();
            let split = match nearest {
                Some(0) => Split::Test,
                Some(d) if d <= buffer_cells => Split::Val,
                _ => Split::Train,
            };
            (c, split)
        })
        .collect();
    Ok(SplitAssignment {
        assignment,
        buffer_cells,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ViolationReport {
    /// `(train_cell, test_cell)` pairs closer than the buffer allows.
    pub pairs: Vec<(CellId, CellId)>,
    /// Grid cells without a label, or labelled cells that are not in the grid.
    pub unlabelled: Vec<CellId>,
    pub extraneous: Vec<CellId>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty() && self.unlabelled.is_empty() && self.extraneous.is_empty()
    }
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (tr, te) in &self.pairs {
            writeln!(f, "train ({}, {}) is within the buffer of test ({}, {})", tr.cx, tr.cy, te.cx, te.cy)?;
        }
        for c in &self.unlabelled {
            writeln!(f, "cell ({}, {}) has no split", c.cx, c.cy)?;
        }
        for c in &self.extraneous {
            writeln!(f, "labelled cell ({}, {}) is not in the grid", c.cx, c.cy)?;
        }
        Ok(())
    }
}

/// Checks the buffer invariant: no TEST cell within Chebyshev distance
/// `buffer_cells` of a TRAIN cell.
pub fn validate_splits(a: &SplitAssignment) -> std::result::Result<(), ViolationReport> {
    let b = a.buffer_cells;
    let mut pairs = Vec::new();
    for te in a.cells_in(Split::Test) {
        let (x0, x1) = (te.cx.saturating_sub(b), te.cx.saturating_add(b));
        let (y0, y1) = (te.cy.saturating_sub(b), te.cy.saturating_add(b));
        for (&c, &s) in a
            .assignment
            .range(CellId::new(x0, 0)..=CellId::new(x1, u32::MAX))
        {
            if s == Split::Train && (y0..=y1).contains(&c.cy) {
                pairs.push((c, te));
            }
        }
    }
    pairs.sort();
    let report = ViolationReport {
        pairs,
        ..Default::default()
    };
    if report.is_empty() {
        Ok(())
    } else {
        Err(report)
    }
}

/// [`validate_splits`] plus the partition check against a grid.
pub fn validate_splits_for_grid(
    a: &SplitAssignment,
    grid: &ScoreGrid,
) -> std::result::Result<(), ViolationReport> {
    let mut report = validate_splits(a).err().unwrap_or_default();
    report.unlabelled = grid.cells().filter(|c| !a.assignment.contains_key(c)).collect();
    report.extraneous = a.assignment.keys().filter(|c| !grid.contains(**c)).copied().collect();
    if report.is_empty() {
        Ok(())
    } else {
        Err(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitStats {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub total_cells: usize,
    /// Available cells over all cells, in percent.
    pub coverage_pct: f64,
}

impl SplitStats {
    pub fn count(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

pub fn split_stats(a: &SplitAssignment, available: impl Fn(CellId) -> bool) -> SplitStats {
    let mut counts = [0usize; 3];
    for (&c, &s) in &a.assignment {
        if available(c) {
            counts[s as usize] += 1;
        }
    }
    let total = a.assignment.len();
    let avail: usize = counts.iter().sum();
    SplitStats {
        train: counts[0],
        val: counts[1],
        test: counts[2],
        total_cells: total,
        coverage_pct: if total == 0 {
            0.0
        } else {
            100.0 * avail as f64 / total as f64
        },
    }
}
