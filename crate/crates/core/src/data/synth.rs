//! Synthetic multi-view "faces": parametric glyphs drawn on a sphere and
//! viewed from several camera azimuths.
//!
//! Classes combine a mouth shape with a brow shape. Subjects jitter geometry,
//! ink and shading; each capture jitters expression strength; every view
//! rotates the head, hides back-facing strokes and adds pixel noise. The two
//! outermost views also lose a lateral band of the face.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{manifest::write_manifest, Dataset, ImageRef, Sample};
use crate::raster::Raster;
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub views: usize,
    pub subjects: usize,
    pub image_size: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    /// Azimuth of the outermost views, degrees.
    pub max_azimuth_deg: f64,
    /// Width of the band hidden in the outermost views, as a fraction of the
    /// image side; 0 disables occlusion.
    pub occlusion_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            views: 5,
            subjects: 50,
            image_size: 32,
            noise: 0.06,
            max_azimuth_deg: 60.0,
            occlusion_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(2..=10).contains(&self.classes) {
            return bad(format!("classes must be in 2..=10, got {}", self.classes));
        }
        if !(1..=7).contains(&self.views) {
            return bad(format!("views must be in 1..=7, got {}", self.views));
        }
        if !(1..=10_000).contains(&self.subjects) {
            return bad(format!("subjects must be in 1..=10000, got {}", self.subjects));
        }
        if !(16..=256).contains(&self.image_size) {
            return bad(format!("image_size must be in 16..=256, got {}", self.image_size));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return bad(format!("noise must be in [0, 0.5], got {}", self.noise));
        }
        if !(0.0..=90.0).contains(&self.max_azimuth_deg) {
            return bad(format!("max_azimuth_deg must be in [0, 90], got {}", self.max_azimuth_deg));
        }
        if !(0.0..=0.5).contains(&self.occlusion_fraction) {
            return bad(format!("occlusion_fraction must be in [0, 0.5], got {}", self.occlusion_fraction));
        }
        Ok(())
    }

    pub fn view_names(&self) -> Vec<String> {
        match self.views {
            1 => vec!["S".into()],
            3 => ["L", "S", "R"].map(String::from).to_vec(),
            5 => ["FL", "HL", "S", "HR", "FR"].map(String::from).to_vec(),
            7 => ["FL", "ML", "HL", "S", "HR", "MR", "FR"].map(String::from).to_vec(),
            v => (1..=v).map(|i| format!("V{i}")).collect(),
        }
    }

    pub fn azimuth(&self, view: usize) -> f64 {
        if self.views == 1 {
            return 0.0;
        }
        let t = view as f64 / (self.views - 1) as f64;
        (-1.0 + 2.0 * t) * self.max_azimuth_deg.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mouth {
    Smile,
    Frown,
    Open,
    Flat,
    Wavy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Brow {
    Raised,
    Furrowed,
}

const PROTOTYPES: [(Mouth, Brow); 10] = [
    (Mouth::Smile, Brow::Raised),
    (Mouth::Frown, Brow::Furrowed),
    (Mouth::Open, Brow::Raised),
    (Mouth::Flat, Brow::Furrowed),
    (Mouth::Smile, Brow::Furrowed),
    (Mouth::Frown, Brow::Raised),
    (Mouth::Open, Brow::Furrowed),
    (Mouth::Flat, Brow::Raised),
    (Mouth::Wavy, Brow::Raised),
    (Mouth::Wavy, Brow::Furrowed),
];

fn class_name((m, b): (Mouth, Brow)) -> String {
    format!("{}_{}", format!("{m:?}").to_lowercase(), format!("{b:?}").to_lowercase())
}

/// Per-subject appearance.
struct Subject {
    dx: f64,
    dy: f64,
    radius: f64,
    elongation: f64,
    eye_sep: f64,
    eye_lat: f64,
    brow_gap: f64,
    mouth_lat: f64,
    mouth_half: f64,
    ink: f64,
    stroke: f64,
    skin: f64,
    background: f64,
}

impl Subject {
    fn draw<R: Rng>(r: &mut R, size: f64) -> Self {
        Self {
            dx: r.random_range(-0.05..0.05) * size,
            dy: r.random_range(-0.05..0.05) * size,
            radius: r.random_range(0.34..0.40) * size,
            elongation: r.random_range(1.08..1.2),
            eye_sep: r.random_range(0.32..0.42),
            eye_lat: r.random_range(0.12..0.2),
            brow_gap: r.random_range(0.15..0.21),
            mouth_lat: r.random_range(-0.48..-0.38),
            mouth_half: r.random_range(0.26..0.36),
            ink: r.random_range(0.45..0.7),
            stroke: r.random_range(0.55..0.75) * size / 32.0,
            skin: r.random_range(0.55..0.8),
            background: r.random_range(0.05..0.3),
        }
    }
}

/// Points on the unit sphere as (longitude, latitude), with a relative ink
/// weight.
type Stroke = Vec<(f64, f64, f64)>;

fn strokes(s: &Subject, (mouth, brow): (Mouth, Brow), strength: f64) -> Vec<Stroke> {
    let mut out = Vec::new();
    for side in [-1.0, 1.0] {
        out.push(vec![(side * s.eye_sep, s.eye_lat, 1.6)]);
        let base = s.eye_lat + s.brow_gap;
        out.push(
            (0..=16)
                .map(|k| {
                    let u = -1.0 + 2.0 * k as f64 / 16.0;
                    let lon = side * (s.eye_sep + 0.15 * u);
                    let lat = match brow {
                        Brow::Raised => base + 0.05 + 0.16 * strength * (1.0 - u * u),
                        // Inner end (u < 0 for both sides) drops toward the nose.
                        Brow::Furrowed => base - 0.01 + 0.16 * strength * u,
                    };
                    (lon, lat, 1.0)
                })
                .collect(),
        );
    }
    out.push(
        (0..=8)
            .map(|k| (0.0, s.eye_lat - 0.05 - 0.22 * k as f64 / 8.0, 0.45))
            .collect(),
    );
    let a = 0.32 * strength;
    let m = s.mouth_lat;
    out.push(match mouth {
        Mouth::Open => (0..32)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / 32.0;
                (0.6 * s.mouth_half * t.cos(), m + 0.18 * strength.max(0.7) * t.sin(), 1.0)
            })
            .collect(),
        _ => (0..=28)
            .map(|k| {
                let u = -1.0 + 2.0 * k as f64 / 28.0;
                let lat = match mouth {
                    Mouth::Smile => m + a * (u * u - 0.5),
                    Mouth::Frown => m - a * (u * u - 0.5),
                    Mouth::Wavy => m + 0.5 * a * (PI * u).sin(),
                    _ => m,
                };
                (s.mouth_half * u, lat, 1.0)
            })
            .collect(),
    });
    out
}

fn render(s: &Subject, proto: (Mouth, Brow), strength: f64, azimuth: f64, occlude: f64, size: usize, noise: &mut impl FnMut() -> f64) -> Raster {
    let n = size as f64;
    let (cx, cy) = (n / 2.0 + s.dx, n / 2.0 + s.dy);
    let (r, ky) = (s.radius, s.elongation);
    let mut ink = vec![0.0f64; size * size];
    let sigma = s.stroke;
    let reach = (3.0 * sigma).ceil() as isize;
    for stroke in strokes(s, proto, strength) {
        for (lon, lat, weight) in stroke {
            let lon = lon + azimuth;
            let depth = lon.cos() * lat.cos();
            if depth <= 0.0 {
                continue;
            }
            let fade = (depth / 0.15).min(1.0);
            let px = cx + r * lon.sin() * lat.cos();
            let py = cy - r * ky * lat.sin();
            let sig = sigma * if weight > 1.5 { 1.3 } else { 1.0 };
            let (ix, iy) = (px.round() as isize, py.round() as isize);
            for y in (iy - reach).max(0)..=(iy + reach).min(size as isize - 1) {
                for x in (ix - reach).max(0)..=(ix + reach).min(size as isize - 1) {
                    let d2 = (x as f64 + 0.5 - px).powi(2) + (y as f64 + 0.5 - py).powi(2);
                    ink[y as usize * size + x as usize] += weight.min(1.0) * fade * (-d2 / (2.0 * sig * sig)).exp();
                }
            }
        }
    }
    // The hidden band sits on the side the face turned towards, where the
    // remaining visible strokes concentrate.
    let band = (occlude > 0.0).then(|| {
        let side = azimuth.signum();
        let inner = cx + side * r * 0.9;
        let outer = inner + side * occlude * n;
        (inner.min(outer), inner.max(outer))
    });
    let mut img = Raster::new(1, size, size);
    for y in 0..size {
        for x in 0..size {
            let fx = (x as f64 + 0.5 - cx) / r;
            let fy = (y as f64 + 0.5 - cy) / (r * ky);
            let rho = fx * fx + fy * fy;
            let mut v = if rho <= 1.0 {
                let shade = 0.65 + 0.35 * (1.0 - rho).sqrt();
                s.skin * shade * (1.0 - s.ink * ink[y * size + x].min(1.0))
            } else {
                s.background
            };
            if let Some((lo, hi)) = band {
                let xc = x as f64 + 0.5;
                if xc >= lo && xc <= hi {
                    v = s.background;
                }
            }
            v += noise();
            img.set(0, y, x, ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32);
        }
    }
    img
}

/// Generates `subjects * classes * views` images. With `out_dir` the images
/// are written as 8-bit PNGs next to `manifest.csv`, `classes.txt`,
/// `views.txt` and `meta.json`; the returned dataset keeps them in memory.
pub fn synth_generate(config: &SynthConfig, seed: u64, out_dir: Option<&Path>) -> Result<Dataset> {
    config.validate()?;
    let size = config.image_size;
    let class_names: Vec<String> = PROTOTYPES[..config.classes].iter().map(|&p| class_name(p)).collect();
    let view_names = config.view_names();
    let subject_names: Vec<String> = (0..config.subjects).map(|s| format!("s{:03}", s + 1)).collect();
    let mut instance_names = Vec::new();
    let mut samples = Vec::new();
    let mut paths = Vec::new();
    let normal = Normal::new(0.0, config.noise.max(1e-12)).expect("finite sd");
    for subj in 0..config.subjects {
        let subject = Subject::draw(&mut rng::stream(seed, Purpose::Synth, 0, subj as u64), size as f64);
        for (class, &proto) in PROTOTYPES[..config.classes].iter().enumerate() {
            let capture = (subj * 16 + class) as u64;
            let strength = rng::stream(seed, Purpose::Synth, 1, capture).random_range(0.7..1.2);
            let instance = instance_names.len();
            instance_names.push(format!("{}_{}", subject_names[subj], class_names[class]));
            for view in 0..config.views {
                let mut r = rng::stream(seed, Purpose::Synth, 2, capture * 8 + view as u64);
                let extreme = config.views > 1 && (view == 0 || view + 1 == config.views);
                let occlude = if extreme { config.occlusion_fraction } else { 0.0 };
                let mut noise = || if config.noise > 0.0 { normal.sample(&mut r) } else { 0.0 };
                let img = render(&subject, proto, strength, config.azimuth(view), occlude, size, &mut noise);
                paths.push(format!("images/{}_{}.png", instance_names[instance], view_names[view]));
                samples.push(Sample {
                    image: ImageRef::Memory(Arc::new(img)),
                    label: class,
                    view,
                    instance,
                    subject: subj,
                    labeled: true,
                });
            }
        }
    }
    let ds = Dataset {
        samples,
        class_names,
        view_names,
        instance_names,
        subject_names,
    };
    if let Some(dir) = out_dir {
        let images = dir.join("images");
        fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        for (s, rel) in ds.samples.iter().zip(&paths) {
            if let ImageRef::Memory(img) = &s.image {
                img.save_png(&dir.join(rel))?;
            }
        }
        write_manifest(&ds, dir, &paths)?;
        let meta = serde_json::json!({ "generator": "synthetic-faces/1", "seed": seed, "config": config });
        let p = dir.join("meta.json");
        fs::write(&p, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&p, e))?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_manifest;

    fn small() -> SynthConfig {
        SynthConfig {
            subjects: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn counts_and_groups() {
        let ds = synth_generate(&SynthConfig::default(), 0, None).unwrap();
        assert_eq!(ds.len(), 8 * 5 * 50);
        assert_eq!(ds.groups().len(), 400);
        assert_eq!(ds.incomplete_groups(), 0);
        assert_eq!(ds.view_names, ["FL", "HL", "S", "HR", "FR"]);
        ds.validate().unwrap();
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = synth_generate(&small(), 4, None).unwrap();
        let b = synth_generate(&small(), 4, None).unwrap();
        let c = synth_generate(&small(), 5, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn files_round_trip_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_generate(&small(), 2, Some(dir.path())).unwrap();
        let mut back = load_manifest(&dir.path().join("manifest.csv")).unwrap();
        back.materialize(1).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!((a.label, a.view, a.instance, a.subject), (b.label, b.view, b.instance, b.subject));
            assert_eq!(a.image, b.image);
        }
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["seed"], 2);
        let dir2 = tempfile::tempdir().unwrap();
        synth_generate(&small(), 2, Some(dir2.path())).unwrap();
        for name in ["manifest.csv", "images/s002_open_raised_FL.png"] {
            assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(dir2.path().join(name)).unwrap());
        }
    }

    #[test]
    fn rejects_out_of_range() {
        for cfg in [
            SynthConfig { classes: 11, ..small() },
            SynthConfig { views: 8, ..small() },
            SynthConfig { subjects: 0, ..small() },
        ] {
            assert!(synth_generate(&cfg, 0, None).is_err());
        }
    }

    #[test]
    fn views_differ_and_classes_differ() {
        let ds = synth_generate(&SynthConfig { noise: 0.0, ..small() }, 1, None).unwrap();
        let img = |i: usize| ds.raster(i).unwrap();
        // Same capture, different views.
        assert_ne!(img(0).data, img(2).data);
        // Same subject and view, different class.
        assert_ne!(img(2).data, img(5 + 2).data);
    }
}
