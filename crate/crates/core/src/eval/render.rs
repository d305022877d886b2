//! Raster maps of per-cell values.
//!
//! Low values are red, high values blue, with white halfway. Rows are
//! written north-up, so the largest `cy` is the top row.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{CellId, GridBounds};
use crate::io;

pub const DEFAULT_BLOCK_PX: u32 = 8;
pub const ABSENT_RGB: [u8; 3] = [128, 128, 128];
const RED: [f64; 3] = [255.0, 0.0, 0.0];
const WHITE: [f64; 3] = [255.0, 255.0, 255.0];
const BLUE: [f64; 3] = [0.0, 0.0, 255.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub block_px: u32,
    /// Fixed `(min, max)` for the ramp; per-map extremes otherwise.
    pub range: Option<(f64, f64)>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            block_px: DEFAULT_BLOCK_PX,
            range: None,
        }
    }
}

/// Ramp colour of `t ∈ [0, 1]`, clamped.
pub fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let (from, to, s) = if t <= 0.5 {
        (RED, WHITE, t * 2.0)
    } else {
        (WHITE, BLUE, (t - 0.5) * 2.0)
    };
    std::array::from_fn(|i| (from[i] + (to[i] - from[i]) * s).round() as u8)
}

pub fn color_of(v: f64, lo: f64, hi: f64) -> [u8; 3] {
    if hi > lo {
        ramp((v - lo) / (hi - lo))
    } else {
        ramp(0.5)
    }
}

#[derive(Debug, Clone)]
pub struct ScoreMap {
    pub image: RgbImage,
    pub range: (f64, f64),
    pub values: BTreeMap<CellId, f64>,
}

pub fn render_score_map(
    values: &BTreeMap<CellId, f64>,
    bounds: GridBounds,
    opts: &RenderOptions,
) -> Result<ScoreMap> {
    if values.is_empty() {
        return Err(Error::InvalidInput("nothing to render".into()));
    }
    if opts.block_px == 0 {
        return Err(Error::InvalidInput("block size must be positive".into()));
    }
    if values.values().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("map value"));
    }
    let (lo, hi) = match opts.range {
        Some((lo, hi)) if lo.is_finite() && hi.is_finite() && lo <= hi => (lo, hi),
        Some(_) => return Err(Error::InvalidInput("map range must be finite with min <= max".into())),
        None => values
            .values()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v))),
    };
    let (w, h) = (bounds.width(), bounds.height());
    let b = opts.block_px;
    let mut image = RgbImage::from_pixel(w * b, h * b, Rgb(ABSENT_RGB));
    let mut kept = BTreeMap::new();
    for (cell, v) in values {
        if !bounds.contains(*cell) {
            continue;
        }
        kept.insert(*cell, *v);
        let col = cell.cx - bounds.min.cx;
        let row = bounds.max.cy - cell.cy;
        let px = Rgb(color_of(*v, lo, hi));
        for dy in 0..b {
            for dx in 0..b {
                image.put_pixel(col * b + dx, row * b + dy, px);
            }
        }
    }
    Ok(ScoreMap {
        image,
        range: (lo, hi),
        values: kept,
    })
}

impl ScoreMap {
    /// Writes `<stem>.png` and `<stem>.csv` (`cell_x,cell_y,value`).
    pub fn save(&self, png: &Path, csv: &Path) -> Result<()> {
        if let Some(dir) = png.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.image
            .save_with_format(png, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", png.display())))?;
        let mut w = io::create(csv)?;
        io::write_line(csv, &mut w, format_args!("cell_x,cell_y,value"))?;
        for (c, v) in &self.values {
            io::write_line(csv, &mut w, format_args!("{},{},{}", c.cx, c.cy, v))?;
        }
        io::finish(csv, w)
    }
}
