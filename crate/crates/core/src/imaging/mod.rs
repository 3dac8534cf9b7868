//! RGB images, floating-point patches, and the structural-similarity metric.

mod image;
mod ssim;

pub use self::image::{Image, Patch};
pub use ssim::{
    ssim_channel, ssim_loss, ssim_loss_and_gradient, ssim_loss_gradient, ssim_patches, ssim_rgb,
    SSIM_C1, SSIM_C2, SSIM_WINDOW,
};
