//! Feature stores, ground-feature pooling, additive fusion and dataset
//! assembly.
//!
//! Files carry 32-bit floats; everything downstream of loading is `f64`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{CellId, ScoreGrid};
use crate::imagery::ImageAssignment;
use crate::io::{self, CsvInput};
use crate::splits::{Split, SplitAssignment};

pub const DEFAULT_FEATURE_DIM: usize = 2048;
pub const BINARY_MAGIC: &[u8; 4] = b"LVF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRole {
    Aerial,
    Ground,
    Pooled,
    Merged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub role: FeatureRole,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(role: FeatureRole, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(FeatureVector { role, values })
    }

    pub fn zeros(role: FeatureRole, dim: usize) -> Self {
        FeatureVector {
            role,
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Keys usable in a feature store.
pub trait StoreKey: Ord + Copy + fmt::Debug {
    fn to_u64(self) -> u64;
    fn from_u64(k: u64) -> Self;
    /// Leading CSV columns holding the key.
    fn key_columns() -> &'static [&'static str];
    fn parse(file: &str, line: usize, rec: &csv::StringRecord) -> Result<Self>;
    fn write(self, out: &mut String);
}

impl StoreKey for CellId {
    fn to_u64(self) -> u64 {
        self.to_key()
    }
    fn from_u64(k: u64) -> Self {
        CellId::from_key(k)
    }
    fn key_columns() -> &'static [&'static str] {
        &["cell_x", "cell_y"]
    }
    fn parse(file: &str, line: usize, rec: &csv::StringRecord) -> Result<Self> {
        Ok(CellId::new(
            io::field(file, line, rec, 0, "cell_x")?,
            io::field(file, line, rec, 1, "cell_y")?,
        ))
    }
    fn write(self, out: &mut String) {
        out.push_str(&format!("{},{}", self.cx, self.cy));
    }
}

impl StoreKey for u64 {
    fn to_u64(self) -> u64 {
        self
    }
    fn from_u64(k: u64) -> Self {
        k
    }
    fn key_columns() -> &'static [&'static str] {
        &["image_id"]
    }
    fn parse(file: &str, line: usize, rec: &csv::StringRecord) -> Result<Self> {
        io::field(file, line, rec, 0, "image_id")
    }
    fn write(self, out: &mut String) {
        out.push_str(&self.to_string());
    }
}

/// Uniform-dimension map from key to feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore<K: StoreKey> {
    dim: usize,
    role: FeatureRole,
    entries: BTreeMap<K, FeatureVector>,
}

pub type AerialStore = FeatureStore<CellId>;
pub type GroundStore = FeatureStore<u64>;

impl<K: StoreKey> FeatureStore<K> {
    pub fn new(dim: usize, role: FeatureRole) -> Self {
        FeatureStore {
            dim,
            role,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: K) -> Option<&FeatureVector> {
        self.entries.get(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (K, &FeatureVector)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn insert(&mut self, key: K, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        let v = FeatureVector::new(self.role, values)?;
        if self.entries.insert(key, v).is_some() {
            return Err(Error::DuplicateKey {
                what: "feature store",
                key: key.to_u64(),
            });
        }
        Ok(())
    }

    /// Reads `<key columns>,f0,...,f{D-1}`; the dimension comes from the header.
    pub fn load_csv(path: &Path, role: FeatureRole) -> Result<Self> {
        let mut input = CsvInput::open(path)?;
        let keys = K::key_columns();
        let name = input.name.clone();
        let dim = input.header.len().saturating_sub(keys.len());
        let expected: Vec<String> = keys
            .iter()
            .map(|k| k.to_string())
            .chain((0..dim).map(|i| format!("f{i}")))
            .collect();
        if dim == 0 {
            return Err(Error::malformed(&name, 1, "feature file has no feature columns"));
        }
        input.expect_header(&expected.iter().map(String::as_str).collect::<Vec<_>>())?;
        let mut store = FeatureStore::new(dim, role);
        for row in input.rows() {
            let (line, rec) = row?;
            let key = K::parse(&name, line, &rec)?;
            let values = (0..dim)
                .map(|i| {
                    io::field::<f32>(&name, line, &rec, keys.len() + i, &expected[keys.len() + i]).map(f64::from)
                })
                .collect::<Result<Vec<_>>>()?;
            store
                .insert(key, values)
                .map_err(|e| Error::malformed(&name, line, e.to_string()))?;
        }
        Ok(store)
    }

    /// Writes the store as CSV with values rounded to `f32`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = io::create(path)?;
        let header: Vec<String> = K::key_columns()
            .iter()
            .map(|k| k.to_string())
            .chain((0..self.dim).map(|i| format!("f{i}")))
            .collect();
        io::write_line(path, &mut w, format_args!("{}", header.join(",")))?;
        let mut line = String::new();
        for (k, v) in &self.entries {
            line.clear();
            k.write(&mut line);
            for x in v.values() {
                line.push(',');
                line.push_str(&(*x as f32).to_string());
            }
            io::write_line(path, &mut w, format_args!("{line}"))?;
        }
        io::finish(path, w)
    }

    /// Binary layout: `LVF1`, u32 dim, u64 count, then per record a u64 key
    /// followed by `dim` f32 values. All little-endian; records sorted by key.
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let mut w = io::create(path)?;
        let mut buf = Vec::with_capacity(16 + self.entries.len() * (8 + 4 * self.dim));
        buf.extend_from_slice(BINARY_MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (k, v) in &self.entries {
            buf.extend_from_slice(&k.to_u64().to_le_bytes());
            for x in v.values() {
                buf.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        io::finish(path, w)
    }

    pub fn load_binary(path: &Path, role: FeatureRole) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::InvalidInput(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 || &bytes[..4] != BINARY_MAGIC {
            return Err(bad("missing LVF1 header"));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let record = 8 + 4 * dim;
        if dim == 0 || bytes.len() != 16 + count * record {
            return Err(bad("length does not match header"));
        }
        let mut store = FeatureStore::new(dim, role);
        for rec in bytes[16..].chunks_exact(record) {
            let key = u64::from_le_bytes(rec[..8].try_into().unwrap());
            let values = rec[8..]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            store.insert(K::from_u64(key), values)?;
        }
        Ok(store)
    }

    /// Dispatches on the file extension: `.bin`/`.lvf` binary, otherwise CSV.
    pub fn load(path: &Path, role: FeatureRole) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("lvf") => Self::load_binary(path, role),
            _ => Self::load_csv(path, role),
        }
    }
}

/// Mean of the ground vectors of one patch. Summation runs in ascending
/// image id order so the result does not depend on input order.
pub fn pool_ground_features(members: &[(u64, &FeatureVector)]) -> Result<FeatureVector> {
    let (_, first) = members.first().ok_or(Error::EmptyPool)?;
    let dim = first.dim();
    let mut sorted: Vec<&(u64, &FeatureVector)> = members.iter().collect();
    sorted.sort_by_key(|(id, _)| *id);
    let mut sum = vec![0.0; dim];
    for (_, v) in sorted {
        if v.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
        for (s, x) in sum.iter_mut().zip(v.values()) {
            *s += x;
        }
    }
    let n = members.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(FeatureVector {
        role: FeatureRole::Pooled,
        values: sum,
    })
}

/// `m = a + ḡ`, elementwise.
pub fn merge_features(aerial: &FeatureVector, pooled: &FeatureVector) -> Result<FeatureVector> {
    if aerial.dim() != pooled.dim() {
        return Err(Error::DimMismatch {
            expected: aerial.dim(),
            got: pooled.dim(),
        });
    }
    Ok(FeatureVector {
        role: FeatureRole::Merged,
        values: aerial.values().iter().zip(pooled.values()).map(|(a, g)| a + g).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Ground features replaced by zeros: aerial-only model.
    ZeroGround,
    /// Aerial features replaced by zeros: ground-only model.
    ZeroAerial,
}

impl Ablation {
    /// Short label used in output file names.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::None => "fused",
            Ablation::ZeroGround => "aerial",
            Ablation::ZeroAerial => "ground",
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    /// Accepts the CLI spelling (`none`, `ground`, `aerial`) naming the zeroed
    /// modality, as well as the explicit `zero_ground` / `zero_aerial`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Ablation::None),
            "ground" | "zero_ground" => Ok(Ablation::ZeroGround),
            "aerial" | "zero_aerial" => Ok(Ablation::ZeroAerial),
            other => Err(format!("unknown ablation `{other}`")),
        }
    }
}

/// One training record.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBundle {
    pub cell: CellId,
    pub aerial: FeatureVector,
    pub pooled_ground: FeatureVector,
    pub n_images: usize,
    pub target: f64,
}

impl PatchBundle {
    pub fn merged(&self) -> FeatureVector {
        merge_features(&self.aerial, &self.pooled_ground).expect("bundle dims agree")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    /// Bundles per split, sorted by cell.
    pub splits: BTreeMap<Split, Vec<PatchBundle>>,
    /// Cells left out because no ground image was assigned to them.
    pub excluded: BTreeMap<Split, usize>,
    pub dim: usize,
    pub ablation: Ablation,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[PatchBundle] {
        self.splits.get(&s).map_or(&[], Vec::as_slice)
    }

    pub fn excluded(&self, s: Split) -> usize {
        self.excluded.get(&s).copied().unwrap_or(0)
    }

    pub fn all(&self) -> impl Iterator<Item = (Split, &PatchBundle)> {
        self.splits.iter().flat_map(|(s, b)| b.iter().map(move |x| (*s, x)))
    }
}

pub fn build_dataset(
    grid: &ScoreGrid,
    splits: &SplitAssignment,
    assignment: &ImageAssignment,
    aerial: &AerialStore,
    ground: &GroundStore,
    ablation: Ablation,
) -> Result<Dataset> {
    let dim = aerial.dim();
    if ablation != Ablation::ZeroGround && ground.dim() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            got: ground.dim(),
        });
    }
    let mut ds = Dataset {
        dim,
        ablation,
        ..Default::default()
    };
    for s in Split::ALL {
        ds.splits.insert(s, Vec::new());
        ds.excluded.insert(s, 0);
    }
    for (cell, target) in grid.iter() {
        let Some(split) = splits.get(cell) else { continue };
        let a = aerial.get(cell).ok_or(Error::MissingAerial(cell))?;
        let (pooled, n_images) = if ablation == Ablation::ZeroGround {
            (FeatureVector::zeros(FeatureRole::Pooled, dim), 0)
        } else {
            let ids = assignment.images_of(cell);
            if ids.is_empty() {
                *ds.excluded.get_mut(&split).unwrap() += 1;
                continue;
            }
            let members = ids
                .iter()
                .map(|id| ground.get(*id).map(|v| (*id, v)).ok_or(Error::MissingGround(*id)))
                .collect::<Result<Vec<_>>>()?;
            (pool_ground_features(&members)?, ids.len())
        };
        let aerial_vec = if ablation == Ablation::ZeroAerial {
            FeatureVector::zeros(FeatureRole::Aerial, dim)
        } else {
            a.clone()
        };
        ds.splits.get_mut(&split).unwrap().push(PatchBundle {
            cell,
            aerial: aerial_vec,
            pooled_ground: pooled,
            n_images,
            target,
        });
    }
    Ok(ds)
}
