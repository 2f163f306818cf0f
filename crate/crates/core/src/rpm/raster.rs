use std::f64::consts::PI;

use rand::Rng;

use super::attrs::{AttributeVector, Config, ShapeType};

/// Square 8-bit grayscale image, row-major, 255 = white.
pub type Image = Vec<u8>;

const SUPERSAMPLE: usize = 4;

/// Interior gray for a fill level; level 1 is white, level 5 darkest.
pub fn fill_gray(level: u8) -> f64 {
    255.0 - 51.0 * (level.saturating_sub(1)) as f64
}

/// Circumradius as a fraction of the slot half-width.
fn radius_fraction(size: u8) -> f64 {
    0.30 + 0.15 * (size.saturating_sub(1)) as f64
}

/// Signed support distance of `(x, y)` for a regular shape of circumradius
/// 1 centred at the origin: <= 1 inside.
fn support(shape: ShapeType, x: f64, y: f64) -> f64 {
    match shape.sides() {
        None => (x * x + y * y).sqrt(),
        Some(n) => {
            let n = n as f64;
            // First vertex straight up; the square is turned to sit flat.
            let offset = if shape == ShapeType::Square { PI / 4.0 } else { 0.0 };
            let apothem = (PI / n).cos();
            let theta = y.atan2(x) + PI / 2.0 - offset;
            let sector = 2.0 * PI / n;
            let local = theta - sector * (theta / sector).floor() - sector / 2.0;
            (x * x + y * y).sqrt() * local.cos() / apothem
        }
    }
}

struct Placed {
    cx: f64,
    cy: f64,
    radius: f64,
}

fn placements<R: Rng + ?Sized>(attrs: &AttributeVector, config: Config, size: usize, jitter: Option<&mut R>) -> Vec<Placed> {
    let s = size as f64;
    let (half, centres): (f64, Vec<(f64, f64)>) = match config {
        Config::Center => (s / 2.0, vec![(s / 2.0, s / 2.0)]),
        Config::Grid2x2 => (
            s / 4.0,
            vec![(s / 4.0, s / 4.0), (3.0 * s / 4.0, s / 4.0), (s / 4.0, 3.0 * s / 4.0), (3.0 * s / 4.0, 3.0 * s / 4.0)],
        ),
    };
    let mut jitter = jitter;
    centres
        .into_iter()
        .enumerate()
        .filter(|(i, _)| attrs.positions & (1 << i) != 0)
        .map(|(_, (cx, cy))| {
            let (dx, dy) = match jitter.as_deref_mut() {
                Some(rng) => (rng.gen_range(-1..=1) as f64, rng.gen_range(-1..=1) as f64),
                None => (0.0, 0.0),
            };
            Placed { cx: cx + dx, cy: cy + dy, radius: half * radius_fraction(attrs.size) }
        })
        .collect()
}

/// Draws a panel: white background, black outlines, gray interiors.
/// Deterministic given the inputs; `jitter` shifts each object by up to one
/// pixel in each direction.
pub fn rasterize<R: Rng + ?Sized>(attrs: &AttributeVector, config: Config, image_size: usize, jitter: Option<&mut R>) -> Image {
    let objects = placements(attrs, config, image_size, jitter);
    let stroke = (image_size as f64 / 40.0).max(1.0);
    let interior = fill_gray(attrs.fill);
    let sub = 1.0 / SUPERSAMPLE as f64;
    let mut img = vec![0u8; image_size * image_size];
    for py in 0..image_size {
        for px in 0..image_size {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) * sub;
                    let y = py as f64 + (sy as f64 + 0.5) * sub;
                    let mut v = 255.0;
                    for o in &objects {
                        let d = support(attrs.shape, (x - o.cx) / o.radius, (y - o.cy) / o.radius) * o.radius;
                        if d <= o.radius - stroke {
                            v = interior;
                        } else if d <= o.radius {
                            v = 0.0;
                        }
                    }
                    acc += v;
                }
            }
            img[py * image_size + px] = (acc / (SUPERSAMPLE * SUPERSAMPLE) as f64).round() as u8;
        }
    }
    img
}
