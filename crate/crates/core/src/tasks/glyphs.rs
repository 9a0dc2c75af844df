//! Procedural stroke glyphs: a small stand-in for handwritten character sets.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::episode::Dataset;
use super::image::Image;
use crate::error::{Error, Result};
use crate::io::{pgm::write_pgm, write_atomic};

const MIN_CLASS_DIFFERENCE: f64 = 0.05;
const MAX_ROTATION: f64 = 0.15;

type Polyline = Vec<(f64, f64)>;

fn random_prototype<R: Rng>(rng: &mut R) -> Polyline {
    loop {
        let segments = rng.random_range(3..=5);
        let points: Polyline = (0..=segments)
            .map(|_| (rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)))
            .collect();
        let long_enough = points.windows(2).all(|w| {
            let (dx, dy) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            dx.hypot(dy) > 0.2
        });
        if long_enough {
            return points;
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * vx).hypot(p.1 - a.1 - t * vy)
}

/// Anti-aliased rendering; points are unit-square `(col, row)` fractions.
fn render(points: &Polyline, size: usize, rotation: f64, shift: (f64, f64)) -> Image {
    let scale = (size - 1) as f64;
    let (s, c) = rotation.sin_cos();
    let px: Vec<(f64, f64)> = points
        .iter()
        .map(|&(u, v)| {
            let (du, dv) = (u - 0.5, v - 0.5);
            let (ru, rv) = (c * du - s * dv + 0.5, s * du + c * dv + 0.5);
            (ru * scale + shift.0, rv * scale + shift.1)
        })
        .collect();
    let half_width = (size as f64 / 28.0).max(0.8);
    let mut pixels = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let p = (col as f64, row as f64);
            let d = px
                .windows(2)
                .map(|w| segment_distance(p, w[0], w[1]))
                .fold(f64::INFINITY, f64::min);
            pixels.push((half_width + 0.5 - d).clamp(0.0, 1.0));
        }
    }
    Image::new(size, size, pixels).expect("rendered intensities lie in [0, 1]")
}

fn binary(image: &Image) -> Vec<bool> {
    image.pixels.iter().map(|&p| p > 0.5).collect()
}

fn difference(a: &[bool], b: &[bool]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

fn prototypes<R: Rng>(n_classes: usize, size: usize, rng: &mut R) -> Vec<(Polyline, Image)> {
    let mut out: Vec<(Polyline, Image)> = Vec::with_capacity(n_classes);
    let mut masks: Vec<Vec<bool>> = Vec::with_capacity(n_classes);
    while out.len() < n_classes {
        let candidate = random_prototype(rng);
        let image = render(&candidate, size, 0.0, (0.0, 0.0));
        let mask = binary(&image);
        if masks.iter().all(|m| difference(m, &mask) >= MIN_CLASS_DIFFERENCE) {
            masks.push(mask);
            out.push((candidate, image));
        }
    }
    out
}

fn check_size(size: usize) -> Result<()> {
    if size < 8 {
        return Err(Error::invalid(format!("glyph size {size} is below 8")));
    }
    Ok(())
}

/// `n_classes` polyline prototypes, each rendered `per_class` times with
/// ±1 px translation and a small rotation. Labels run class-major.
pub fn make_glyph_dataset(n_classes: usize, per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos = prototypes(n_classes, size, &mut rng);
    let mut images = Vec::with_capacity(n_classes * per_class);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for (class, (points, _)) in protos.iter().enumerate() {
        for _ in 0..per_class {
            let rotation = rng.random_range(-MAX_ROTATION..=MAX_ROTATION);
            let shift = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
            images.push(render(points, size, rotation, shift));
            labels.push(class);
        }
    }
    Dataset::new(images, labels)
}

/// Undistorted rendering of each class prototype of the dataset built from
/// the same `(n_classes, size, seed)`.
pub fn glyph_prototypes(n_classes: usize, size: usize, seed: u64) -> Result<Vec<Image>> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(prototypes(n_classes, size, &mut rng)
        .into_iter()
        .map(|(_, i)| i)
        .collect())
}

/// Writes `NNNNN.pgm` per example and a `labels.txt` index of `file label` lines.
pub fn export_pgm_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::new();
    for (i, (image, label)) in dataset.images.iter().zip(&dataset.labels).enumerate() {
        let name = format!("{i:05}.pgm");
        write_pgm(&dir.join(&name), image)?;
        writeln!(index, "{name} {label}").expect("string write");
    }
    write_atomic(&dir.join("labels.txt"), index.as_bytes())
}
