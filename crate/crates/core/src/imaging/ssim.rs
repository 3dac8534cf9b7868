//! Structural similarity over uniform 8x8 sliding windows (stride 1) and its
//! analytic gradient with respect to the center of a bilinearly sampled patch.
//!
//! Per window, with population statistics,
//!
//! ```text
//! SSIM = (2 mu_x mu_y + c1)(2 s_xy + c2) / ((mu_x^2 + mu_y^2 + c1)(s_x^2 + s_y^2 + c2))
//! ```
//!
//! and the patch score is the mean over all window positions.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::imaging::{Image, Patch};
use crate::types::Pixel;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = (255.0 * 0.01) * (255.0 * 0.01);
pub const SSIM_C2: f64 = (255.0 * 0.03) * (255.0 * 0.03);

const WINDOW_AREA: f64 = (SSIM_WINDOW * SSIM_WINDOW) as f64;

/// Sums of every 8x8 window of `plane`, indexed by window origin.
fn window_sums(plane: &[f64], width: usize, height: usize) -> Vec<f64> {
    let nx = width - SSIM_WINDOW + 1;
    let ny = height - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; nx * height];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..nx {
            rows[y * nx + x] = row[x..x + SSIM_WINDOW].iter().sum();
        }
    }
    let mut out = vec![0.0; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            out[y * nx + x] = (y..y + SSIM_WINDOW).map(|r| rows[r * nx + x]).sum();
        }
    }
    out
}

/// Per-window statistics for one channel pair.
struct WindowStats {
    nx: usize,
    ny: usize,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

impl WindowStats {
    fn compute(x: &[f64], y: &[f64], width: usize, height: usize) -> Self {
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let sx = window_sums(x, width, height);
        let sy = window_sums(y, width, height);
        let sxx = window_sums(&xx, width, height);
        let syy = window_sums(&yy, width, height);
        let sxy = window_sums(&xy, width, height);
        let n = sx.len();
        let mut stats = Self {
            nx: width - SSIM_WINDOW + 1,
            ny: height - SSIM_WINDOW + 1,
            mu_x: Vec::with_capacity(n),
            mu_y: Vec::with_capacity(n),
            var_x: Vec::with_capacity(n),
            var_y: Vec::with_capacity(n),
            cov: Vec::with_capacity(n),
        };
        for k in 0..n {
            let mx = sx[k] / WINDOW_AREA;
            let my = sy[k] / WINDOW_AREA;
            stats.mu_x.push(mx);
            stats.mu_y.push(my);
            // Clamp tiny negative round-off on flat windows.
            stats.var_x.push((sxx[k] / WINDOW_AREA - mx * mx).max(0.0));
            stats.var_y.push((syy[k] / WINDOW_AREA - my * my).max(0.0));
            stats.cov.push(sxy[k] / WINDOW_AREA - mx * my);
        }
        stats
    }

    #[inline]
    fn terms(&self, k: usize) -> (f64, f64, f64, f64) {
        let a1 = 2.0 * self.mu_x[k] * self.mu_y[k] + SSIM_C1;
        let b1 = self.mu_x[k] * self.mu_x[k] + self.mu_y[k] * self.mu_y[k] + SSIM_C1;
        let a2 = 2.0 * self.cov[k] + SSIM_C2;
        let b2 = self.var_x[k] + self.var_y[k] + SSIM_C2;
        (a1, b1, a2, b2)
    }

    fn mean_ssim(&self) -> f64 {
        let n = self.mu_x.len();
        let total: f64 = (0..n)
            .map(|k| {
                let (a1, b1, a2, b2) = self.terms(k);
                (a1 * a2) / (b1 * b2)
            })
            .sum();
        total / n as f64
    }
}

fn check_pair(x: &Patch, y: &Patch) -> Result<()> {
    if !x.same_shape(y) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            x.width(),
            x.height(),
            x.channels(),
            y.width(),
            y.height(),
            y.channels()
        )));
    }
    if x.width() < SSIM_WINDOW || x.height() < SSIM_WINDOW {
        return Err(Error::DegeneratePatch {
            width: x.width(),
            height: x.height(),
        });
    }
    Ok(())
}

fn plane_ssim(x: &[f64], y: &[f64], width: usize, height: usize) -> f64 {
    WindowStats::compute(x, y, width, height).mean_ssim()
}

/// Mean SSIM of two single-channel patches.
pub fn ssim_channel(x: &Patch, y: &Patch) -> Result<f64> {
    check_pair(x, y)?;
    if x.channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "expected single-channel patches, got {}",
            x.channels()
        )));
    }
    Ok(plane_ssim(x.data(), y.data(), x.width(), x.height()))
}

/// Average of the per-channel scores of two RGB patches.
pub fn ssim_rgb(x: &Patch, y: &Patch) -> Result<f64> {
    check_pair(x, y)?;
    if x.channels() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "expected RGB patches, got {} channels",
            x.channels()
        )));
    }
    ssim_patches(x, y)
}

/// Channel-averaged SSIM for patches with any channel count.
pub fn ssim_patches(x: &Patch, y: &Patch) -> Result<f64> {
    check_pair(x, y)?;
    let total: f64 = (0..x.channels())
        .map(|c| plane_ssim(x.channel(c), y.channel(c), x.width(), x.height()))
        .sum();
    Ok(total / x.channels() as f64)
}

/// `1 - SSIM(fixed, patch of image at center)`.
pub fn ssim_loss(fixed: &Patch, image: &Image, center: Pixel) -> Result<f64> {
    let moving = image.extract_patch(center, fixed.width(), fixed.height())?;
    Ok(1.0 - ssim_patches(fixed, &moving)?)
}

/// Loss and its gradient with respect to the patch center.
pub fn ssim_loss_and_gradient(
    fixed: &Patch,
    image: &Image,
    center: Pixel,
) -> Result<(f64, Vector2<f64>)> {
    let (w, h) = (fixed.width(), fixed.height());
    let (moving, ddx, ddy) = image.extract_patch_with_jacobian(center, w, h)?;
    check_pair(fixed, &moving)?;

    let channels = fixed.channels() as f64;
    let mut score = 0.0;
    let mut grad = Vector2::zeros();
    let plane = w * h;
    let mut dssim = vec![0.0; plane];
    for c in 0..fixed.channels() {
        let x = fixed.channel(c);
        let y = moving.channel(c);
        let stats = WindowStats::compute(x, y, w, h);
        let windows = (stats.nx * stats.ny) as f64;
        dssim.fill(0.0);
        let mut channel_score = 0.0;
        for wy in 0..stats.ny {
            for wx in 0..stats.nx {
                let k = wy * stats.nx + wx;
                let (a1, b1, a2, b2) = stats.terms(k);
                let s = (a1 * a2) / (b1 * b2);
                channel_score += s;
                // dS/dy_i = alpha + beta * x_i + gamma * y_i for every sample i in the window.
                let (mx, my) = (stats.mu_x[k], stats.mu_y[k]);
                let alpha = 2.0 * mx * (a2 - a1) / (WINDOW_AREA * b1 * b2)
                    - 2.0 * s * my / (WINDOW_AREA * b1)
                    + 2.0 * s * my / (WINDOW_AREA * b2);
                let beta = 2.0 * a1 / (WINDOW_AREA * b1 * b2);
                let gamma = -2.0 * s / (WINDOW_AREA * b2);
                for j in wy..wy + SSIM_WINDOW {
                    let row = j * w;
                    for i in wx..wx + SSIM_WINDOW {
                        let idx = row + i;
                        dssim[idx] += alpha + beta * x[idx] + gamma * y[idx];
                    }
                }
            }
        }
        score += channel_score / windows;
        let offset = c * plane;
        for (idx, d) in dssim.iter().enumerate() {
            let scale = d / windows;
            grad.x += scale * ddx[offset + idx];
            grad.y += scale * ddy[offset + idx];
        }
    }
    Ok((1.0 - score / channels, -grad / channels))
}

/// Gradient of `1 - SSIM(fixed, patch(image, center))` with respect to `center`,
/// chaining the analytic SSIM sample gradient through bilinear sampling.
/// `fixed` sets the patch size.
pub fn ssim_loss_gradient(fixed: &Patch, image: &Image, center: Pixel) -> Result<Vector2<f64>> {
    Ok(ssim_loss_and_gradient(fixed, image, center)?.1)
}
