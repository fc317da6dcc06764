//! Planar `f32` images in `[0, 1]` and their PNG storage.

use std::path::Path;

use crate::{Error, Result};

/// Channel-planar image: `data[(c * height + y) * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Bilinear resample of the region `(x0, y0, w, h)` (source pixel units)
    /// onto an `out_h x out_w` grid, sampling at pixel centres.
    pub fn resample(&self, x0: f64, y0: f64, w: f64, h: f64, out_h: usize, out_w: usize) -> Raster {
        let mut out = Raster::new(self.channels, out_h, out_w);
        let sx = w / out_w as f64;
        let sy = h / out_h as f64;
        let clamp = |v: f64, hi: usize| v.clamp(0.0, (hi - 1) as f64);
        for oy in 0..out_h {
            let fy = clamp(y0 + (oy as f64 + 0.5) * sy - 0.5, self.height);
            let y_lo = fy.floor() as usize;
            let y_hi = (y_lo + 1).min(self.height - 1);
            let ty = (fy - y_lo as f64) as f32;
            for ox in 0..out_w {
                let fx = clamp(x0 + (ox as f64 + 0.5) * sx - 0.5, self.width);
                let x_lo = fx.floor() as usize;
                let x_hi = (x_lo + 1).min(self.width - 1);
                let tx = (fx - x_lo as f64) as f32;
                for c in 0..self.channels {
                    let top = self.at(c, y_lo, x_lo) * (1.0 - tx) + self.at(c, y_lo, x_hi) * tx;
                    let bot = self.at(c, y_hi, x_lo) * (1.0 - tx) + self.at(c, y_hi, x_hi) * tx;
                    out.set(c, oy, ox, top * (1.0 - ty) + bot * ty);
                }
            }
        }
        out
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Raster {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        self.resample(0.0, 0.0, self.width as f64, self.height as f64, out_h, out_w)
    }

    /// Converts to the requested channel count (1 or 3) by luminance or
    /// replication.
    pub fn with_channels(&self, channels: usize) -> Result<Raster> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (3, 1) => {
                let mut out = Raster::new(1, self.height, self.width);
                for i in 0..self.height * self.width {
                    out.data[i] = luminance(self.plane(0)[i], self.plane(1)[i], self.plane(2)[i]);
                }
                Ok(out)
            }
            (1, 3) => {
                let mut data = Vec::with_capacity(3 * self.data.len());
                for _ in 0..3 {
                    data.extend_from_slice(&self.data);
                }
                Ok(Raster {
                    channels: 3,
                    data,
                    ..*self
                })
            }
            (a, b) => Err(Error::invalid(format!("cannot convert a {a}-channel image to {b} channels"))),
        }
    }

    pub fn load_png(path: &Path) -> Result<Raster> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let mut out = Raster::new(3, h, w);
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    out.set(c, y as usize, x as usize, p.0[c] as f32 / 255.0);
                }
            }
            Ok(out)
        } else {
            let g = img.to_luma8();
            Ok(Raster {
                channels: 1,
                height: h,
                width: w,
                data: g.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
            })
        }
    }

    /// Writes an 8-bit grayscale PNG (first channel only for colour input
    /// unless it has three channels).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let res = if self.channels == 3 {
            let mut buf = Vec::with_capacity(self.height * self.width * 3);
            for y in 0..self.height {
                for x in 0..self.width {
                    for c in 0..3 {
                        buf.push(q(self.at(c, y, x)));
                    }
                }
            }
            image::save_buffer(path, &buf, self.width as u32, self.height as u32, image::ExtendedColorType::Rgb8)
        } else {
            let buf: Vec<u8> = self.plane(0).iter().map(|&v| q(v)).collect();
            image::save_buffer(path, &buf, self.width as u32, self.height as u32, image::ExtendedColorType::L8)
        };
        res.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn luminance(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_quantized_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Raster::new(1, 3, 4);
        for (i, v) in r.data.iter_mut().enumerate() {
            *v = i as f32 / 11.0;
        }
        let p = dir.path().join("a.png");
        r.save_png(&p).unwrap();
        let back = Raster::load_png(&p).unwrap();
        assert_eq!((back.channels, back.height, back.width), (1, 3, 4));
        for (a, b) in r.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn identity_resample_is_exact() {
        let mut r = Raster::new(1, 5, 5);
        for (i, v) in r.data.iter_mut().enumerate() {
            *v = (i % 7) as f32 / 7.0;
        }
        assert_eq!(r.resample(0.0, 0.0, 5.0, 5.0, 5, 5), r);
    }

    #[test]
    fn channel_conversion() {
        let mut r = Raster::new(1, 2, 2);
        r.data = vec![0.0, 0.25, 0.5, 1.0];
        let rgb = r.with_channels(3).unwrap();
        let back = rgb.with_channels(1).unwrap();
        for (a, b) in r.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
