//! Per-cell housing-quality prediction from aerial and ground-level image
//! features on a 100 m grid.

pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod imagery;
mod io;
pub mod model;
pub mod splits;

pub use error::{Error, Result};
pub use eval::{evaluate_split, kendall_tau, render_score_map, rmse, MetricsReport, TauVariant};
pub use features::{
    build_dataset, merge_features, pool_ground_features, Ablation, AerialStore, Dataset, FeatureRole,
    FeatureStore, FeatureVector, GroundStore, PatchBundle,
};
pub use grid::{CellId, GridBounds, PatchGeometry, ScoreGrid, CELL_SIZE_M, PATCH_HALF_WIDTH_M};
pub use imagery::{
    apply_filter, assign_images_to_cells, AssignMode, FilterMode, FilterSpec, GeoImage, ImageAssignment,
    SceneActivations,
};
pub use model::{init_params, predict, train_model, FusionHeadParams, TrainConfig, TrainHistory, TrainedModel};
pub use splits::{generate_splits, validate_splits, Split, SplitAssignment, SquareSpec};
