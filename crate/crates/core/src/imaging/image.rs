use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::SSIM_WINDOW;
use crate::types::Pixel;

/// 8-bit RGB image, row-major, interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width >= 1 && height >= 1, "image must be at least 1x1");
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let rgb = ::image::open(path)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::from_raw(w as usize, h as usize, rgb.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        ::image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            ::image::ExtendedColorType::Rgb8,
            ::image::ImageFormat::Png,
        )?;
        Ok(())
    }

    /// Bilinear sample of channel `c` at a continuous location with edge clamping.
    /// Also returns the partial derivatives of the interpolant with respect to
    /// `x` and `y`; they vanish where the location is clamped.
    #[inline]
    pub fn sample(&self, x: f64, y: f64, c: usize) -> (f64, f64, f64) {
        let (x0, x1, fx, dx_live) = axis_weights(x, self.width);
        let (y0, y1, fy, dy_live) = axis_weights(y, self.height);
        let p00 = self.get(x0, y0, c) as f64;
        let p10 = self.get(x1, y0, c) as f64;
        let p01 = self.get(x0, y1, c) as f64;
        let p11 = self.get(x1, y1, c) as f64;
        let top = p00 + fx * (p10 - p00);
        let bottom = p01 + fx * (p11 - p01);
        let value = top + fy * (bottom - top);
        let dx = if dx_live {
            (1.0 - fy) * (p10 - p00) + fy * (p11 - p01)
        } else {
            0.0
        };
        let dy = if dy_live { bottom - top } else { 0.0 };
        (value, dx, dy)
    }

    /// Samples the window of `width`x`height` centered at `center`. Integer
    /// centers reproduce the underlying pixels exactly; the sample at patch
    /// index `(i, j)` sits at `center + (i - width/2, j - height/2)`.
    pub fn extract_patch(&self, center: Pixel, width: usize, height: usize) -> Result<Patch> {
        check_patch_size(width, height)?;
        let mut patch = Patch::zeros(width, height, 3);
        let ox = center.x - (width / 2) as f64;
        let oy = center.y - (height / 2) as f64;
        for c in 0..3 {
            for j in 0..height {
                for i in 0..width {
                    let (v, _, _) = self.sample(ox + i as f64, oy + j as f64, c);
                    patch.set(i, j, c, v);
                }
            }
        }
        Ok(patch)
    }

    /// Like [`Image::extract_patch`] but also returns per-sample spatial
    /// derivatives (`d/dx`, `d/dy`) laid out like the patch data.
    pub(crate) fn extract_patch_with_jacobian(
        &self,
        center: Pixel,
        width: usize,
        height: usize,
    ) -> Result<(Patch, Vec<f64>, Vec<f64>)> {
        check_patch_size(width, height)?;
        let mut patch = Patch::zeros(width, height, 3);
        let mut ddx = vec![0.0; width * height * 3];
        let mut ddy = vec![0.0; width * height * 3];
        let ox = center.x - (width / 2) as f64;
        let oy = center.y - (height / 2) as f64;
        for c in 0..3 {
            for j in 0..height {
                for i in 0..width {
                    let (v, dx, dy) = self.sample(ox + i as f64, oy + j as f64, c);
                    let k = patch.index(i, j, c);
                    patch.data[k] = v;
                    ddx[k] = dx;
                    ddy[k] = dy;
                }
            }
        }
        Ok((patch, ddx, ddy))
    }

    /// Integer crop `[x0, x1) x [y0, y1)`, clipped to the image.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Patch {
        let x1 = x1.min(self.width);
        let y1 = y1.min(self.height);
        let w = x1.saturating_sub(x0);
        let h = y1.saturating_sub(y0);
        let mut patch = Patch::zeros(w, h, 3);
        for c in 0..3 {
            for j in 0..h {
                for i in 0..w {
                    patch.set(i, j, c, self.get(x0 + i, y0 + j, c) as f64);
                }
            }
        }
        patch
    }

    /// True when every pixel has the same color.
    pub fn is_constant(&self) -> bool {
        self.data.chunks_exact(3).all(|p| p == &self.data[0..3])
    }
}

fn check_patch_size(width: usize, height: usize) -> Result<()> {
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        Err(Error::DegeneratePatch { width, height })
    } else {
        Ok(())
    }
}

/// Indices, fraction and whether the derivative is live along one axis.
#[inline]
fn axis_weights(coord: f64, len: usize) -> (usize, usize, f64, bool) {
    if len == 1 {
        return (0, 0, 0.0, false);
    }
    let max = (len - 1) as f64;
    let live = coord > 0.0 && coord < max;
    let c = coord.clamp(0.0, max);
    let i0 = (c.floor() as usize).min(len - 2);
    (i0, i0 + 1, c - i0 as f64, live)
}

/// Floating-point image patch (0-255 scale), channel-planar.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Patch {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height}x{channels} patch",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut p = Self::zeros(width, height, channels);
        for c in 0..channels {
            for j in 0..height {
                for i in 0..width {
                    p.set(i, j, c, f(i, j, c));
                }
            }
        }
        p
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (c * self.height + j) * self.width + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.index(i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        let k = self.index(i, j, c);
        self.data[k] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    /// Single-channel copy of channel `c`.
    pub fn channel_patch(&self, c: usize) -> Patch {
        Patch {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.channel(c).to_vec(),
        }
    }

    pub fn same_shape(&self, other: &Patch) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Bilinear resize (pixel-center aligned, edge clamped).
    pub fn resize(&self, width: usize, height: usize) -> Patch {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Patch::zeros(width, height, self.channels);
        for j in 0..height {
            let v = (j as f64 + 0.5) * sy - 0.5;
            let (y0, y1, fy, _) = axis_weights(v, self.height);
            for i in 0..width {
                let u = (i as f64 + 0.5) * sx - 0.5;
                let (x0, x1, fx, _) = axis_weights(u, self.width);
                for c in 0..self.channels {
                    let top =
                        self.get(x0, y0, c) + fx * (self.get(x1, y0, c) - self.get(x0, y0, c));
                    let bottom =
                        self.get(x0, y1, c) + fx * (self.get(x1, y1, c) - self.get(x0, y1, c));
                    out.set(i, j, c, top + fy * (bottom - top));
                }
            }
        }
        out
    }
}
