//! Float images in height × width × channel order.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::shape(
                "image",
                format!("{height}x{width}x{channels} does not match {} values", data.len()),
            ));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f32 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    /// Repeats a single-channel image into three channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image { height: self.height, width: self.width, channels: 3, data }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear sample of the region `[y0, y0+h) × [x0, x0+w)` onto an
    /// `out_h × out_w` grid (pixel-centre alignment).
    #[allow(clippy::too_many_arguments)]
    pub fn resample_region(&self, y0: f32, x0: f32, h: f32, w: f32, out_h: usize, out_w: usize) -> Image {
        let mut out = Image::filled(out_h, out_w, self.channels, 0.0);
        let sy = h / out_h as f32;
        let sx = w / out_w as f32;
        let max_y = (self.height - 1) as f32;
        let max_x = (self.width - 1) as f32;
        for oy in 0..out_h {
            let fy = (y0 + (oy as f32 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y_lo = fy.floor() as usize;
            let y_hi = (y_lo + 1).min(self.height - 1);
            let ty = fy - y_lo as f32;
            for ox in 0..out_w {
                let fx = (x0 + (ox as f32 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x_lo = fx.floor() as usize;
                let x_hi = (x_lo + 1).min(self.width - 1);
                let tx = fx - x_lo as f32;
                for c in 0..self.channels {
                    let top = self.at(y_lo, x_lo, c) * (1.0 - tx) + self.at(y_lo, x_hi, c) * tx;
                    let bot = self.at(y_hi, x_lo, c) * (1.0 - tx) + self.at(y_hi, x_hi, c) * tx;
                    *out.at_mut(oy, ox, c) = top * (1.0 - ty) + bot * ty;
                }
            }
        }
        out
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Image {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        self.resample_region(0.0, 0.0, self.height as f32, self.width as f32, out_h, out_w)
    }
}
