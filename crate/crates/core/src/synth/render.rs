use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::io::quantize;
use crate::types::ClassLabel;

const STROMA: [f32; 3] = [0.94, 0.74, 0.84];
const NUCLEUS: [f32; 3] = [0.36, 0.20, 0.56];
const ICE: [f32; 3] = [0.97, 0.96, 0.98];
const FOLD: [f32; 3] = [0.30, 0.15, 0.45];
/// Upper end of the hole orientation range (deliberately just under π).
#[allow(clippy::approx_constant)]
const HOLE_MAX_TILT: f32 = 3.14;

/// Per-case appearance drawn once per case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseStyle {
    pub stain: [f32; 3],
    pub density: f32,
    pub size: f32,
}

impl CaseStyle {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            stain: [rng.random_range(0.94..1.06), rng.random_range(0.94..1.06), rng.random_range(0.96..1.04)],
            density: rng.random_range(0.85..1.15),
            size: rng.random_range(0.92..1.08),
        }
    }
}

/// Frozen-section artifact settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsArtifactConfig {
    /// Probability of a dark tissue-fold streak.
    pub fold_prob: f64,
    /// Probability of ice-crystal holes.
    pub hole_prob: f64,
    pub max_holes: usize,
    /// Strength of the blue-ward colour cast and contrast loss, 0 disables.
    pub colour_shift: f32,
    /// Mixing weight of a 3×3 blur, 0 disables.
    pub blur: f32,
}

impl Default for FsArtifactConfig {
    fn default() -> Self {
        Self { fold_prob: 0.6, hole_prob: 0.7, max_holes: 4, colour_shift: 1.0, blur: 0.5 }
    }
}

struct Canvas {
    px: Vec<f32>,
    size: usize,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, colour: [f32; 3], alpha: f32) {
        let o = (y * self.size + x) * 3;
        for k in 0..3 {
            self.px[o + k] += alpha * (colour[k] - self.px[o + k]);
        }
    }

    /// Soft-edged filled ellipse with semi-axes `(a, b)` rotated by `theta`.
    fn ellipse(&mut self, cx: f32, cy: f32, a: f32, b: f32, theta: f32, colour: [f32; 3], opacity: f32) {
        let (s, c) = theta.sin_cos();
        let r = a.max(b) + 1.0;
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(self.size - 1));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(self.size - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                let d = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                let alpha = ((1.0 - d) * a.min(b) + 0.5).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    self.blend(x, y, colour, alpha * opacity);
                }
            }
        }
    }
}

/// Class-specific nucleus layout: `(count, semi-axis a, semi-axis b, elongated)`.
fn nucleus_plan(label: ClassLabel, rng: &mut impl Rng, style: &CaseStyle, area_scale: f32) -> Vec<(f32, f32)> {
    let (count, a, b) = match label {
        ClassLabel::A => (rng.random_range(14.0..20.0), 1.9, 1.9),
        ClassLabel::B => (rng.random_range(4.0..6.0), 3.8, 3.8),
        ClassLabel::C => (rng.random_range(7.0..10.0), 4.6, 1.5),
    };
    let n = (count * style.density * area_scale).round().max(1.0) as usize;
    (0..n)
        .map(|_| {
            let j = rng.random_range(0.85..1.15) * style.size;
            (a * j, b * j)
        })
        .collect()
}

/// Renders one FFPE-looking patch of the given class; values are 8-bit quantised.
pub fn render_tissue(label: ClassLabel, style: &CaseStyle, size: usize, rng: &mut impl Rng) -> Vec<f32> {
    let noise = Normal::new(0.0f32, 0.02).expect("valid std");
    let tilt = [rng.random_range(-0.03..0.03f32), rng.random_range(-0.03..0.03f32)];
    let mut canvas = Canvas { px: vec![0.0; size * size * 3], size };
    for y in 0..size {
        for x in 0..size {
            let ramp = tilt[0] * (x as f32 / size as f32 - 0.5) + tilt[1] * (y as f32 / size as f32 - 0.5);
            let o = (y * size + x) * 3;
            for k in 0..3 {
                canvas.px[o + k] = STROMA[k] * style.stain[k] + ramp + noise.sample(rng);
            }
        }
    }
    let area_scale = (size * size) as f32 / 1024.0;
    let colour = [NUCLEUS[0] * style.stain[0], NUCLEUS[1] * style.stain[1], NUCLEUS[2] * style.stain[2]];
    for (a, b) in nucleus_plan(label, rng, style, area_scale) {
        let (cx, cy) = (rng.random_range(0.0..size as f32), rng.random_range(0.0..size as f32));
        let theta = rng.random_range(0.0..std::f32::consts::PI);
        let shade = rng.random_range(0.85..1.1f32);
        canvas.ellipse(cx, cy, a, b, theta, colour.map(|c| c * shade), 0.95);
    }
    canvas.px.iter().map(|v| quantize(*v) as f32 / 255.0).collect()
}

/// Which artifacts were applied to a frozen-section patch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedArtifacts {
    pub fold: bool,
    pub holes: usize,
}

/// Degrades a tissue patch with frozen-section artifacts: a dark fold streak,
/// white ice holes, a colour cast with contrast loss and a slight blur.
pub fn apply_fs_artifacts(
    pixels: &[f32],
    size: usize,
    cfg: &FsArtifactConfig,
    rng: &mut impl Rng,
) -> (Vec<f32>, AppliedArtifacts) {
    let mut canvas = Canvas { px: pixels.to_vec(), size };
    let mut applied = AppliedArtifacts::default();
    if rng.random_bool(cfg.hole_prob) {
        applied.holes = rng.random_range(1..=cfg.max_holes.max(1));
        for _ in 0..applied.holes {
            let r = rng.random_range(2.0..4.0f32) * size as f32 / 32.0;
            let (cx, cy) = (rng.random_range(0.0..size as f32), rng.random_range(0.0..size as f32));
            canvas.ellipse(cx, cy, r, r * rng.random_range(0.7..1.0), rng.random_range(0.0..HOLE_MAX_TILT), ICE, 0.92);
        }
    }
    if rng.random_bool(cfg.fold_prob) {
        applied.fold = true;
        let (cx, cy) = (rng.random_range(0.0..size as f32), rng.random_range(0.0..size as f32));
        let theta = rng.random_range(0.0..std::f32::consts::PI);
        let half_width = rng.random_range(1.0..1.8f32) * size as f32 / 32.0;
        let (s, c) = theta.sin_cos();
        for y in 0..size {
            for x in 0..size {
                let d = (-s * (x as f32 + 0.5 - cx) + c * (y as f32 + 0.5 - cy)).abs();
                let alpha = (half_width - d + 0.5).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    canvas.blend(x, y, FOLD, 0.8 * alpha);
                }
            }
        }
    }
    let mut px = canvas.px;
    if cfg.colour_shift > 0.0 {
        let k = cfg.colour_shift;
        let mean: [f32; 3] = std::array::from_fn(|c| px.iter().skip(c).step_by(3).sum::<f32>() / (size * size) as f32);
        let cast = [1.0 - 0.08 * k, 1.0 - 0.04 * k, 1.0 + 0.04 * k];
        for (i, v) in px.iter_mut().enumerate() {
            let c = i % 3;
            *v = (mean[c] + (1.0 - 0.15 * k) * (*v - mean[c])) * cast[c];
        }
    }
    if cfg.blur > 0.0 {
        px = box_blur(&px, size, cfg.blur);
    }
    (px.iter().map(|v| quantize(*v) as f32 / 255.0).collect(), applied)
}

fn box_blur(px: &[f32], size: usize, weight: f32) -> Vec<f32> {
    let mut out = px.to_vec();
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let (mut sum, mut n) = (0.0, 0.0);
                for yy in y.saturating_sub(1)..=(y + 1).min(size - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(size - 1) {
                        sum += px[(yy * size + xx) * 3 + c];
                        n += 1.0;
                    }
                }
                let o = (y * size + x) * 3 + c;
                out[o] = (1.0 - weight) * px[o] + weight * sum / n;
            }
        }
    }
    out
}
