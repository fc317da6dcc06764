//! Stage-specific stochastic augmentation, applied in the fixed order
//! random crop, horizontal flip, colour jitter, grayscale, blur.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::raster::{luminance, Raster};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
    Test,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            "test" => Ok(Stage::Test),
            other => Err(Error::invalid(format!(
                "unknown augmentation stage {other:?} (expected pretrain, finetune or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorJitter {
    pub enabled: bool,
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    pub hue: (f64, f64),
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self {
            enabled: true,
            brightness: (0.4, 1.0),
            contrast: (0.4, 1.0),
            saturation: (0.4, 1.0),
            hue: (0.2, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub random_crop: bool,
    pub crop_area_range: (f64, f64),
    /// Off by default: crops keep the source aspect ratio.
    pub aspect_jitter: bool,
    pub aspect_range: (f64, f64),
    pub hflip: bool,
    pub hflip_prob: f64,
    pub color_jitter: ColorJitter,
    pub grayscale: bool,
    pub grayscale_prob: f64,
    pub blur: bool,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    /// Blur kernel side as a fraction of the image side, rounded up to odd.
    pub blur_kernel_fraction: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        policy_for_stage(Stage::Pretrain)
    }
}

pub fn policy_for_stage(stage: Stage) -> AugmentPolicy {
    let all = AugmentPolicy {
        random_crop: true,
        crop_area_range: (0.2, 1.0),
        aspect_jitter: false,
        aspect_range: (3.0 / 4.0, 4.0 / 3.0),
        hflip: true,
        hflip_prob: 0.5,
        color_jitter: ColorJitter::default(),
        grayscale: true,
        grayscale_prob: 0.2,
        blur: true,
        blur_prob: 0.5,
        blur_sigma: (0.1, 2.0),
        blur_kernel_fraction: 0.1,
    };
    match stage {
        Stage::Pretrain => all,
        Stage::Finetune => AugmentPolicy {
            color_jitter: ColorJitter {
                enabled: false,
                ..all.color_jitter
            },
            grayscale: false,
            blur: false,
            ..all
        },
        Stage::Test => AugmentPolicy {
            random_crop: false,
            hflip: false,
            color_jitter: ColorJitter {
                enabled: false,
                ..all.color_jitter
            },
            grayscale: false,
            blur: false,
            ..all
        },
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("hflip_prob", self.hflip_prob),
            ("grayscale_prob", self.grayscale_prob),
            ("blur_prob", self.blur_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let (lo, hi) = self.crop_area_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("crop_area_range must lie in (0, 1], got ({lo}, {hi})")));
        }
        let cj = &self.color_jitter;
        for (name, (lo, hi)) in [
            ("brightness", cj.brightness),
            ("contrast", cj.contrast),
            ("saturation", cj.saturation),
            ("hue", cj.hue),
            ("aspect_range", self.aspect_range),
            ("blur_sigma", self.blur_sigma),
        ] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::invalid(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        if !(self.blur_kernel_fraction > 0.0 && self.blur_kernel_fraction <= 1.0) {
            return Err(Error::invalid("blur_kernel_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        !(self.random_crop || self.hflip || self.color_jitter.enabled || self.grayscale || self.blur)
    }
}

/// What an `augment` call actually did, for statistics and debugging.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Applied {
    pub crop: Option<(f64, f64, f64, f64)>,
    pub flipped: bool,
    /// Brightness, contrast, saturation and hue coefficients.
    pub jitter: Option<[f64; 4]>,
    pub grayscale: bool,
    pub blur_sigma: Option<f64>,
}

pub fn augment<R: Rng>(image: &Raster, policy: &AugmentPolicy, size: usize, rng: &mut R) -> Raster {
    augment_traced(image, policy, size, rng).0
}

/// Random draws are consumed only by enabled sub-augmentations, always in the
/// same order, so the identity policy draws nothing.
pub fn augment_traced<R: Rng>(image: &Raster, policy: &AugmentPolicy, size: usize, rng: &mut R) -> (Raster, Applied) {
    let mut applied = Applied::default();
    let mut img = if policy.random_crop {
        let (w, h) = (image.width as f64, image.height as f64);
        let area = rng.random_range(policy.crop_area_range.0..=policy.crop_area_range.1) * w * h;
        let ratio = if policy.aspect_jitter {
            let (lo, hi) = policy.aspect_range;
            (rng.random_range(lo.ln()..=hi.ln())).exp() * (w / h)
        } else {
            w / h
        };
        let cw = (area * ratio).sqrt().min(w);
        let ch = (area / ratio).sqrt().min(h);
        let x0 = rng.random_range(0.0..=(w - cw));
        let y0 = rng.random_range(0.0..=(h - ch));
        applied.crop = Some((x0, y0, cw, ch));
        image.resample(x0, y0, cw, ch, size, size)
    } else {
        image.resize(size, size)
    };

    if policy.hflip && rng.random_bool(policy.hflip_prob) {
        applied.flipped = true;
        for c in 0..img.channels {
            for row in img.plane_mut(c).chunks_mut(size) {
                row.reverse();
            }
        }
    }

    let cj = &policy.color_jitter;
    if cj.enabled {
        let mut draw = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        let coeffs = [draw(cj.brightness), draw(cj.contrast), draw(cj.saturation), draw(cj.hue)];
        let hue_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        color_jitter(&mut img, coeffs, hue_sign);
        applied.jitter = Some(coeffs);
    }

    if policy.grayscale && rng.random_bool(policy.grayscale_prob) {
        applied.grayscale = true;
        if img.channels == 3 {
            let n = size * size;
            for i in 0..n {
                let y = luminance(img.data[i], img.data[n + i], img.data[2 * n + i]);
                img.data[i] = y;
                img.data[n + i] = y;
                img.data[2 * n + i] = y;
            }
        }
    }

    if policy.blur && rng.random_bool(policy.blur_prob) {
        let sigma = rng.random_range(policy.blur_sigma.0..=policy.blur_sigma.1);
        applied.blur_sigma = Some(sigma);
        let mut k = (policy.blur_kernel_fraction * size as f64).ceil() as usize;
        if k % 2 == 0 {
            k += 1;
        }
        gaussian_blur(&mut img, sigma, k);
    }

    for v in &mut img.data {
        *v = v.clamp(0.0, 1.0);
    }
    (img, applied)
}

/// Brightness, contrast and saturation scale by their coefficients; hue
/// rotates by `sign * coefficient / 2` turns. Saturation and hue leave
/// single-channel images unchanged.
fn color_jitter(img: &mut Raster, [b, c, s, h]: [f64; 4], hue_sign: f64) {
    let (b, c, s) = (b as f32, c as f32, s as f32);
    for v in &mut img.data {
        *v = (*v * b).clamp(0.0, 1.0);
    }
    let n = img.height * img.width;
    let mean = if img.channels == 3 {
        (0..n)
            .map(|i| luminance(img.data[i], img.data[n + i], img.data[2 * n + i]))
            .sum::<f32>()
            / n as f32
    } else {
        img.data.iter().sum::<f32>() / n as f32
    };
    for v in &mut img.data {
        *v = (mean + (*v - mean) * c).clamp(0.0, 1.0);
    }
    if img.channels != 3 {
        return;
    }
    let shift = (hue_sign * h * 0.5) as f32;
    for i in 0..n {
        let (r, g, bl) = (img.data[i], img.data[n + i], img.data[2 * n + i]);
        let y = luminance(r, g, bl);
        let (r, g, bl) = (y + (r - y) * s, y + (g - y) * s, y + (bl - y) * s);
        let (hh, ss, vv) = rgb_to_hsv(r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), bl.clamp(0.0, 1.0));
        let (r, g, bl) = hsv_to_rgb((hh + shift).rem_euclid(1.0), ss, vv);
        img.data[i] = r;
        img.data[n + i] = g;
        img.data[2 * n + i] = bl;
    }
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Separable Gaussian with edge clamping.
fn gaussian_blur(img: &mut Raster, sigma: f64, k: usize) {
    let r = (k / 2) as isize;
    let mut kernel: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);
    let (h, w) = (img.height as isize, img.width as isize);
    let mut tmp = vec![0.0f32; img.height * img.width];
    for c in 0..img.channels {
        let plane = img.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in kernel.iter().enumerate() {
                    let xx = (x + j as isize - r).clamp(0, w - 1);
                    acc += kv * plane[(y * w + xx) as usize];
                }
                tmp[(y * w + x) as usize] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in kernel.iter().enumerate() {
                    let yy = (y + j as isize - r).clamp(0, h - 1);
                    acc += kv * tmp[(yy * w + x) as usize];
                }
                plane[(y * w + x) as usize] = acc;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};
    use rand::RngCore;

    fn test_image(channels: usize) -> Raster {
        let mut r = Raster::new(channels, 32, 32);
        for c in 0..channels {
            for y in 0..32 {
                for x in 0..32 {
                    r.set(c, y, x, ((x * 3 + y * 5 + c * 7) % 32) as f32 / 31.0);
                }
            }
        }
        r
    }

    #[test]
    fn stage_policies() {
        let p = policy_for_stage(Stage::Pretrain);
        assert!(p.random_crop && p.hflip && p.color_jitter.enabled && p.grayscale && p.blur);
        let f = policy_for_stage(Stage::Finetune);
        assert!(f.random_crop && f.hflip && !f.color_jitter.enabled && !f.grayscale && !f.blur);
        assert!(policy_for_stage(Stage::Test).is_identity());
        assert!("validate".parse::<Stage>().is_err());
        assert_eq!("test".parse::<Stage>().unwrap(), Stage::Test);
        p.validate().unwrap();
    }

    #[test]
    fn identity_policy_only_resizes_and_draws_nothing() {
        let img = test_image(1);
        let mut rng = rng::stream(1, Purpose::Augment, 0, 0);
        let out = augment(&img, &policy_for_stage(Stage::Test), 32, &mut rng);
        assert_eq!(out, img);
        let mut fresh = rng::stream(1, Purpose::Augment, 0, 0);
        assert_eq!(rng.next_u64(), fresh.next_u64());
        let small = augment(&img, &policy_for_stage(Stage::Test), 16, &mut rng);
        assert_eq!(small, img.resize(16, 16));
    }

    #[test]
    fn same_seed_same_output() {
        for ch in [1, 3] {
            let img = test_image(ch);
            let p = policy_for_stage(Stage::Pretrain);
            let a = augment(&img, &p, 32, &mut rng::stream(5, Purpose::Augment, 2, 9));
            let b = augment(&img, &p, 32, &mut rng::stream(5, Purpose::Augment, 2, 9));
            assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        for ch in [1, 3] {
            let img = test_image(ch);
            for stage in [Stage::Pretrain, Stage::Finetune, Stage::Test] {
                let p = policy_for_stage(stage);
                for i in 0..200 {
                    let out = augment(&img, &p, 32, &mut rng::stream(3, Purpose::Augment, 0, i));
                    assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
                }
            }
        }
    }

    #[test]
    fn gate_rates_and_crop_area() {
        let img = test_image(1);
        let p = policy_for_stage(Stage::Pretrain);
        let n = 10_000;
        let (mut flips, mut grays, mut blurs) = (0, 0, 0);
        let mut areas = Vec::with_capacity(n);
        for i in 0..n as u64 {
            let (_, a) = augment_traced(&img, &p, 8, &mut rng::stream(17, Purpose::Augment, 0, i));
            flips += a.flipped as usize;
            grays += a.grayscale as usize;
            blurs += a.blur_sigma.is_some() as usize;
            let (_, _, w, h) = a.crop.unwrap();
            areas.push(w * h / (32.0 * 32.0));
        }
        let rate = |k: usize| k as f64 / n as f64;
        assert!((rate(flips) - 0.5).abs() <= 0.02);
        assert!((rate(grays) - 0.2).abs() <= 0.02);
        assert!((rate(blurs) - 0.5).abs() <= 0.02);
        assert!(areas.iter().all(|a| (0.2 - 1e-9..=1.0 + 1e-9).contains(a)));
        let mean = areas.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.6).abs() < 0.01, "{mean}");
    }

    #[test]
    fn flip_reverses_rows() {
        let img = test_image(1);
        let p = AugmentPolicy {
            hflip_prob: 1.0,
            ..policy_for_stage(Stage::Test)
        };
        let p = AugmentPolicy { hflip: true, ..p };
        let out = augment(&img, &p, 32, &mut rng::stream(0, Purpose::Augment, 0, 0));
        assert_eq!(out.at(0, 3, 0), img.at(0, 3, 31));
    }

    #[test]
    fn grayscale_equalizes_rgb_channels() {
        let img = test_image(3);
        let p = AugmentPolicy {
            grayscale: true,
            grayscale_prob: 1.0,
            ..policy_for_stage(Stage::Test)
        };
        let out = augment(&img, &p, 32, &mut rng::stream(0, Purpose::Augment, 0, 0));
        assert_eq!(out.plane(0), out.plane(1));
        assert_eq!(out.plane(1), out.plane(2));
    }
}
