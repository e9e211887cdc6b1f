//! Procedural street-like scenes with exact per-pixel labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{Image, SegMask, MIN_SIDE};
use crate::error::{invalid, Result};

pub const NUM_CLASSES: usize = 5;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["sky", "ground", "building", "vegetation", "vehicle"];

pub const SKY: u8 = 0;
pub const GROUND: u8 = 1;
pub const BUILDING: u8 = 2;
pub const VEGETATION: u8 = 3;
pub const VEHICLE: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_classes: NUM_CLASSES,
        }
    }
}

struct Canvas {
    w: usize,
    rgb: Vec<[f32; 3]>,
    labels: Vec<u8>,
}

impl Canvas {
    fn paint(&mut self, y: usize, x: usize, rgb: [f32; 3], label: u8) {
        let i = y * self.w + x;
        self.rgb[i] = rgb;
        self.labels[i] = label;
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [f32; 3], amount: f32) -> [f32; 3] {
    base.map(|c| (c + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

fn shade(rgb: [f32; 3], f: f32) -> [f32; 3] {
    rgb.map(|c| (c * f).clamp(0.0, 1.0))
}

const BUILDING_PALETTE: [[f32; 3]; 4] = [
    [0.78, 0.70, 0.55], // sandstone
    [0.62, 0.30, 0.24], // brick
    [0.55, 0.56, 0.58], // concrete
    [0.82, 0.80, 0.74], // plaster
];

const VEHICLE_PALETTE: [[f32; 3]; 5] = [
    [0.85, 0.12, 0.10],
    [0.95, 0.80, 0.10],
    [0.10, 0.20, 0.75],
    [0.95, 0.95, 0.95],
    [0.12, 0.12, 0.14],
];

/// Render one labelled scene. Deterministic in `seed`.
///
/// Layers, back to front: sky above a horizon line and ground below it,
/// 1–4 buildings standing on the horizon, 0–3 vehicles on the ground and
/// 0–3 vegetation blobs. The mask labels every pixel.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<(Image, SegMask)> {
    let (h, w) = (config.height, config.width);
    if h < MIN_SIDE || w < MIN_SIDE {
        return invalid(format!("canvas {h}x{w} smaller than {MIN_SIDE}x{MIN_SIDE}"));
    }
    if config.num_classes != NUM_CLASSES {
        return invalid(format!(
            "default layout has {NUM_CLASSES} classes, config asks for {}",
            config.num_classes
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f32, w as f32);
    let mut cv = Canvas {
        w,
        rgb: vec![[0.0; 3]; h * w],
        labels: vec![0; h * w],
    };

    let horizon = ((rng.random_range(0.38..0.58) * hf) as usize).clamp(2, h - 2);
    let sky_top = jitter(&mut rng, [0.30, 0.52, 0.88], 0.05);
    let sky_low = jitter(&mut rng, [0.66, 0.80, 0.95], 0.04);
    let ground = jitter(&mut rng, [0.42, 0.40, 0.36], 0.05);
    for y in 0..h {
        for x in 0..w {
            if y < horizon {
                let t = y as f32 / horizon as f32;
                let c = [0, 1, 2].map(|k| sky_top[k] + (sky_low[k] - sky_top[k]) * t);
                cv.paint(y, x, c, SKY);
            } else {
                // darker toward the viewer, with a faint lane marking
                let t = (y - horizon) as f32 / (h - horizon) as f32;
                let lane = (x as f32 - wf / 2.0).abs() < 0.6 + t * 1.5 && (y / 3) % 2 == 0;
                let c = if lane { [0.85, 0.84, 0.78] } else { shade(ground, 1.05 - 0.25 * t) };
                cv.paint(y, x, c, GROUND);
            }
        }
    }

    let n_buildings = rng.random_range(1..=4);
    for _ in 0..n_buildings {
        let bw = (rng.random_range(0.10..0.32) * wf).max(3.0) as usize;
        let bh = (rng.random_range(0.20..0.50) * hf).max(3.0) as usize;
        let x0 = rng.random_range(0..w.saturating_sub(bw).max(1));
        let bottom = (horizon + rng.random_range(0..=(h / 16).max(1))).min(h);
        let top = bottom.saturating_sub(bh);
        let base = BUILDING_PALETTE[rng.random_range(0..BUILDING_PALETTE.len())];
        let color = jitter(&mut rng, base, 0.06);
        let window = shade(color, 0.45);
        for y in top..bottom {
            for x in x0..(x0 + bw).min(w) {
                let (ly, lx) = (y - top, x - x0);
                let is_window = ly % 4 == 1 && lx % 3 == 1 && ly + 2 < bh;
                cv.paint(y, x, if is_window { window } else { color }, BUILDING);
            }
        }
    }

    let n_vehicles = rng.random_range(0..=3);
    for _ in 0..n_vehicles {
        let rx = rng.random_range(0.06..0.13) * wf;
        let ry = rx * rng.random_range(0.35..0.5);
        let cy = rng.random_range(horizon as f32 + ry..(hf - 1.0).max(horizon as f32 + ry + 0.5));
        let cx = rng.random_range(0.0..wf);
        let base = VEHICLE_PALETTE[rng.random_range(0..VEHICLE_PALETTE.len())];
        let body = jitter(&mut rng, base, 0.05);
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f32 + 0.5 - cy) / ry;
                let dx = (x as f32 + 0.5 - cx) / rx;
                if dx * dx + dy * dy <= 1.0 {
                    let c = if dy > 0.45 { [0.06, 0.06, 0.06] } else { body };
                    cv.paint(y, x, c, VEHICLE);
                }
            }
        }
    }

    let n_veg = rng.random_range(0..=3);
    for _ in 0..n_veg {
        let cx = rng.random_range(0.0..wf);
        let cy = rng.random_range((horizon as f32 - 0.15 * hf).max(0.0)..(horizon as f32 + 0.2 * hf).min(hf));
        let green = jitter(&mut rng, [0.16, 0.50, 0.18], 0.06);
        let lobes: Vec<(f32, f32, f32)> = (0..rng.random_range(3..=5))
            .map(|_| {
                (
                    cx + rng.random_range(-0.08..0.08) * wf,
                    cy + rng.random_range(-0.06..0.06) * hf,
                    rng.random_range(0.04..0.09) * wf,
                )
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                if lobes.iter().any(|&(lx, ly, r)| (px - lx).powi(2) + (py - ly).powi(2) <= r * r) {
                    // leaf speckle keyed to position so it is stable under the seed
                    let speckle = if (x * 7 + y * 13) % 5 == 0 { 0.7 } else { 1.0 };
                    cv.paint(y, x, shade(green, speckle), VEGETATION);
                }
            }
        }
    }

    let plane = h * w;
    let mut pixels = vec![0.0; 3 * plane];
    for (i, px) in cv.rgb.iter().enumerate() {
        for c in 0..3 {
            let grain: f32 = rng.random_range(-0.02..0.02);
            pixels[c * plane + i] = (px[c] + grain).clamp(0.0, 1.0);
        }
    }
    Ok((Image::new(h, w, pixels)?, SegMask::new(h, w, NUM_CLASSES, cv.labels)?))
}
