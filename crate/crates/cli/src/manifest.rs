//! Run manifest: every input path and setting of a run. Values come from
//! built-in defaults, then a JSON manifest file, then command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use livmap_core::eval::RenderOptions;
use livmap_core::imagery::DEFAULT_BUILDING_THRESHOLD;
use livmap_core::model::WeightDecayMode;
use livmap_core::{Ablation, AssignMode, Error, FilterMode, Result, TauVariant, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub scores: Option<PathBuf>,
    pub squares: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub activations: Option<PathBuf>,
    pub outdoor_mask: Option<PathBuf>,
    pub building_classes: Option<PathBuf>,
    pub aerial_features: Option<PathBuf>,
    pub ground_features: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,

    /// `none`, `outdoors` or `buildings`.
    pub filter: Option<String>,
    pub building_threshold: Option<f64>,
    /// `none`, `ground` (zero the ground features) or `aerial`.
    pub ablation: Option<String>,
    /// `patch` or `cell`.
    pub assign_mode: Option<String>,
    pub buffer: Option<u32>,

    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub freeze_adapter_epochs: Option<usize>,
    pub hidden: Option<usize>,
    /// `coupled` or `decoupled`.
    pub decay_mode: Option<String>,
    /// `tau_a` or `tau_b`.
    pub tau_variant: Option<String>,

    pub tiles: Option<Vec<String>>,
    pub map_range: Option<[f64; 2]>,
    pub block_px: Option<u32>,

    pub seed: Option<u64>,
}

macro_rules! overlay_fields {
    ($dst:expr, $src:expr, $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

macro_rules! rebase_paths {
    ($m:expr, $base:expr, $($f:ident),* $(,)?) => {
        $( if let Some(p) = $m.$f.as_mut() { if p.is_relative() { *p = $base.join(&*p); } } )*
    };
}

fn parse<T: FromStr<Err = String>>(v: &Option<String>, default: T) -> Result<T> {
    v.as_deref().map_or(Ok(default), |s| s.parse().map_err(Error::InvalidInput))
}

impl RunManifest {
    /// Reads a manifest file; relative paths inside it are taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        rebase_paths!(
            m,
            base,
            scores,
            squares,
            splits,
            images,
            activations,
            outdoor_mask,
            building_classes,
            aerial_features,
            ground_features,
            checkpoint,
            out_dir,
        );
        Ok(m)
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &RunManifest) -> Self {
        overlay_fields!(
            self,
            top,
            scores,
            squares,
            splits,
            images,
            activations,
            outdoor_mask,
            building_classes,
            aerial_features,
            ground_features,
            checkpoint,
            out_dir,
            filter,
            building_threshold,
            ablation,
            assign_mode,
            buffer,
            epochs,
            lr,
            weight_decay,
            batch_size,
            freeze_adapter_epochs,
            hidden,
            decay_mode,
            tau_variant,
            tiles,
            map_range,
            block_px,
            seed,
        );
        self
    }

    /// Fills every setting (not paths) with its default so the copy written
    /// next to the outputs records what the run actually used.
    pub fn resolved(mut self) -> Result<Self> {
        let t = self.train_config()?;
        self.filter.get_or_insert_with(|| "none".into());
        self.building_threshold.get_or_insert(DEFAULT_BUILDING_THRESHOLD);
        self.ablation.get_or_insert_with(|| "none".into());
        self.assign_mode.get_or_insert_with(|| "patch".into());
        self.buffer.get_or_insert(crate::synth::DEFAULT_BUFFER);
        self.epochs = Some(t.epochs);
        self.lr = Some(t.lr);
        self.weight_decay = Some(t.weight_decay);
        self.batch_size = Some(t.batch_size);
        self.freeze_adapter_epochs = Some(t.freeze_adapter_epochs);
        self.hidden = Some(t.hidden);
        self.decay_mode = Some(decay_name(t.decay_mode).into());
        self.tau_variant = Some(t.tau_variant.to_string());
        self.block_px.get_or_insert(RenderOptions::default().block_px);
        self.seed.get_or_insert(0);
        // validate the string-valued settings early
        self.filter_mode()?;
        self.ablation()?;
        self.assign_mode()?;
        Ok(self)
    }

    pub fn path(&self, value: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        value
            .clone()
            .ok_or_else(|| Error::InvalidInput(format!("missing `{name}` (set it in the manifest or with --{})", name.replace('_', "-"))))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn buffer(&self) -> u32 {
        self.buffer.unwrap_or(crate::synth::DEFAULT_BUFFER)
    }

    /// `None` when no filter is requested.
    pub fn filter_mode(&self) -> Result<Option<FilterMode>> {
        match self.filter.as_deref() {
            None | Some("none") => Ok(None),
            Some(s) => s.parse().map(Some).map_err(Error::InvalidInput),
        }
    }

    pub fn building_threshold(&self) -> f64 {
        self.building_threshold.unwrap_or(DEFAULT_BUILDING_THRESHOLD)
    }

    pub fn ablation(&self) -> Result<Ablation> {
        parse(&self.ablation, Ablation::None)
    }

    pub fn assign_mode(&self) -> Result<AssignMode> {
        parse(&self.assign_mode, AssignMode::Patch)
    }

    pub fn tau_variant(&self) -> Result<TauVariant> {
        parse(&self.tau_variant, TauVariant::TauB)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let decay_mode = match self.decay_mode.as_deref() {
            None | Some("coupled") => WeightDecayMode::Coupled,
            Some("decoupled") => WeightDecayMode::Decoupled,
            Some(other) => return Err(Error::InvalidInput(format!("unknown decay mode `{other}`"))),
        };
        let cfg = TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            lr: self.lr.unwrap_or(d.lr),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            freeze_adapter_epochs: self.freeze_adapter_epochs.unwrap_or(d.freeze_adapter_epochs),
            hidden: self.hidden.unwrap_or(d.hidden),
            seed: self.seed(),
            decay_mode,
            tau_variant: self.tau_variant()?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn render_options(&self) -> Result<RenderOptions> {
        Ok(RenderOptions {
            block_px: self.block_px.unwrap_or(RenderOptions::default().block_px),
            range: self.map_range.map(|[lo, hi]| (lo, hi)),
        })
    }
}

fn decay_name(m: WeightDecayMode) -> &'static str {
    match m {
        WeightDecayMode::Coupled => "coupled",
        WeightDecayMode::Decoupled => "decoupled",
    }
}
