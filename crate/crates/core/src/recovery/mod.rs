//! Multi-scale residual attention dense network (RADN) at toy scale, with
//! hand-written reverse-mode gradients.
//!
//! The input is resized to 1/4, 1/2 and full size. Each level runs its own
//! branch: a 3x3 head, `D` residual dense blocks (`G` densely connected 3x3
//! SiLU layers, 1x1 local fusion, channel attention, local residual), 1x1
//! global fusion added to the head features, and a 3x3 tail. A branch adds
//! its tail to its own resized image; coarser outputs are upsampled and
//! concatenated onto the next level's input. With zero tails the network is
//! exactly the identity.
//!
//! Training minimizes `mu1 RMS(pred - ref) - mu2 SSIM(pred, ref) +
//! mu3 RMS(psi(pred) - psi(ref))` with Adam.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod ops;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{gradcheck, GradcheckReport, OpCheck};
pub use loss::{recovery_loss, LossTerms, LossWeights};
pub use network::{
    radn_backward, radn_forward, radn_forward_tensor, RadnHyper, RadnParams, Sample,
};
pub use ops::{channel_attention, conv2d_forward, Attention, Conv2d};
pub use tensor::Tensor4;
pub use train::{train_toy, LossCurve, TrainConfig};
