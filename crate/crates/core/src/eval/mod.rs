//! Desk-scale generative-model metrics.

mod embed;
mod frechet;
mod manifold;
mod modes;

pub use embed::{random_feature_embed, random_feature_extractor, EMBED_DIM};
pub use frechet::{fit_gaussian, frechet_distance, GaussianFit};
pub use manifold::{manifold_metrics, ManifoldMetrics};
pub use modes::mode_coverage;

/// Default neighbourhood size for [`manifold_metrics`].
pub const DEFAULT_K: usize = 3;
