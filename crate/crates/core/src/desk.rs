//! A built-in set of five 64×64 grayscale test images.
//!
//! The images are synthetic but mimic natural-image structure: smooth
//! shading, sharp region boundaries, oriented texture and fine detail. All
//! samples stay within `[40, 215]`, so Gaussian noise up to σ ≈ 15 is rarely
//! clipped and noisy-image PSNR follows the unclipped closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{ImageBuffer, Role};

pub const SIZE: usize = 64;
const LO: f64 = 40.0;
const HI: f64 = 215.0;

/// Image ids in dataset order.
pub const IDS: [&str; 5] = ["shapes", "mosaic", "rings", "terrain", "weave"];

fn render(f: impl Fn(f64, f64) -> f64) -> ImageBuffer {
    let data = (0..SIZE * SIZE)
        .map(|i| {
            let (y, x) = ((i / SIZE) as f64, (i % SIZE) as f64);
            LO + (HI - LO) * f(y / SIZE as f64, x / SIZE as f64).clamp(0.0, 1.0)
        })
        .collect();
    ImageBuffer::gray(Role::Clean, SIZE, SIZE, data).expect("finite samples")
}

/// Shaded background with a disc, a bar and a triangle.
fn shapes() -> ImageBuffer {
    render(|y, x| {
        let mut v = 0.25 + 0.35 * x + 0.1 * y;
        if (y - 0.35).powi(2) + (x - 0.62).powi(2) < 0.2f64.powi(2) {
            v = 0.85 - 0.3 * (y - 0.15);
        }
        if (0.62..0.82).contains(&y) && (0.1..0.55).contains(&x) {
            v = 0.1 + 0.15 * x;
        }
        if y > 0.55 && x > 0.6 && (x - 0.6) < (y - 0.55) * 1.2 {
            v = 0.65;
        }
        v
    })
}

/// Piecewise-constant Voronoi cells with mild per-cell gradients.
fn mosaic() -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d6f_7361);
    let cells: Vec<(f64, f64, f64, f64)> = (0..14)
        .map(|_| (rng.random(), rng.random(), rng.random_range(0.05..0.95), rng.random_range(-0.3..0.3)))
        .collect();
    render(move |y, x| {
        let (_, cy, _, v, g) = cells
            .iter()
            .map(|&(cy, cx, v, g)| ((y - cy).powi(2) + (x - cx).powi(2), cy, cx, v, g))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("cells");
        v + g * (y - cy)
    })
}

/// Concentric rings whose spacing shrinks outward, over a vertical ramp.
fn rings() -> ImageBuffer {
    render(|y, x| {
        let r = ((y - 0.45).powi(2) + (x - 0.5).powi(2)).sqrt();
        0.5 + 0.3 * (40.0 * r * r + 6.0 * r).sin() * (1.0 - r) + 0.15 * (y - 0.5)
    })
}

/// Smooth relief from a few low-frequency waves, with one sharp ridge.
fn terrain() -> ImageBuffer {
    render(|y, x| {
        let tau = std::f64::consts::TAU;
        let mut v = 0.5
            + 0.18 * (tau * (1.1 * x + 0.3 * y)).sin()
            + 0.12 * (tau * (0.4 * x - 1.7 * y) + 1.0).cos()
            + 0.08 * (tau * 2.9 * (x + y)).sin();
        if (y - 0.3 - 0.4 * x).abs() < 0.03 {
            v += 0.25;
        }
        v
    })
}

/// Oriented stripes modulated by a slow envelope, plus a plain patch.
fn weave() -> ImageBuffer {
    render(|y, x| {
        let tau = std::f64::consts::TAU;
        if x < 0.3 && y < 0.35 {
            return 0.7 - 0.4 * y;
        }
        let stripes = (tau * 5.0 * (0.8 * x + 0.6 * y)).sin();
        let envelope = 0.5 + 0.5 * (tau * 0.7 * y).cos();
        0.45 + 0.3 * stripes * envelope + 0.1 * (x - 0.5)
    })
}

/// The five images, paired with their ids.
pub fn desk_set() -> Vec<(String, ImageBuffer)> {
    let images = [shapes(), mosaic(), rings(), terrain(), weave()];
    IDS.iter().map(|s| s.to_string()).zip(images).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_distinct_images_in_range() {
        let set = desk_set();
        assert_eq!(set.len(), 5);
        for (id, img) in &set {
            assert_eq!(img.dims(), (1, SIZE, SIZE), "{id}");
            assert!(img.data().iter().all(|v| (LO..=HI).contains(v)), "{id}");
            let mean = img.data().iter().sum::<f64>() / img.len() as f64;
            let var = img.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / img.len() as f64;
            assert!(var > 300.0, "{id} is too flat: {var}");
        }
        assert_eq!(set, desk_set());
    }
}
