//! Halo separation, removal and multi-scale recovery for underwater images
//! lit by artificial light sources.

pub mod error;
pub mod imgcore;
pub mod metrics;
pub mod radial;
pub mod recovery;
pub mod separation;
pub mod synth;

pub use error::{Error, Result};
pub use imgcore::{elementwise_mul, load_image, save_image, to_luminance, ImageF, PixelCoord};
pub use radial::{
    apply_halo, estimate_center, radial_gradient, synth_halo, CenterEstimate, HaloLayer,
    HaloModel, HaloParams, LightCenter, RadialField, V_FLOOR,
};
pub use recovery::{
    radn_forward, recovery_loss, train_toy, LossTerms, LossWeights, RadnHyper, RadnParams,
    TrainConfig,
};
pub use separation::{
    blind_separate, refine_center, remove_halo, smooth_loss, supervised_halo_loss, update_weights, IrlsState,
    RadialProfile, Separation, SeparationConfig,
};
pub use metrics::{
    entropy8, evaluate, evaluate_selected, mse, mse_raw, pcqi, psnr, ssim, uciqe, uiqm, MetricReport, MetricRow, MetricSelection,
    UciqeComponents, UiqmComponents,
};
