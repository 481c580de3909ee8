//! Moving-shape clips with one motion signature per class.
//!
//! Every clip draws its own background level, object position, size and tint,
//! plus fresh per-frame Gaussian noise (σ = 8 gray levels). The fall class
//! accelerates downward, then lies still.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{ClipRecord, DatasetManifest, Geometry, Split};
use crate::error::{Error, Result};
use crate::packing::{VideoClip, COLORS};
use crate::rng::Rng;

pub const MIN_EXTENT: usize = 32;
pub const MIN_FRAMES: usize = 8;
const NOISE_SIGMA: f64 = 8.0;
/// Mean-of-channels level separating objects (≥ 136 before noise) from backgrounds (≤ 100).
const BRIGHT: f64 = 125.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Fall,
    Walk,
    Drift,
    Static,
    SwayHorizontal,
    SwayVertical,
    Expand,
    Shrink,
    Cross,
    Rotate,
}

impl Motion {
    pub const ALL: [Motion; 10] = [
        Motion::Fall,
        Motion::Walk,
        Motion::Drift,
        Motion::Static,
        Motion::SwayHorizontal,
        Motion::SwayVertical,
        Motion::Expand,
        Motion::Shrink,
        Motion::Cross,
        Motion::Rotate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Motion::Fall => "fall",
            Motion::Walk => "walk",
            Motion::Drift => "drift",
            Motion::Static => "static",
            Motion::SwayHorizontal => "sway_horizontal",
            Motion::SwayVertical => "sway_vertical",
            Motion::Expand => "expand",
            Motion::Shrink => "shrink",
            Motion::Cross => "cross",
            Motion::Rotate => "rotate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// 10 motion classes, or 2 for fall (label 1) versus everything else.
    pub classes: usize,
    pub clips_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 10,
            clips_per_class: 100,
            frames: 8,
            height: 64,
            width: 64,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes != 2 && self.classes != 10 {
            return Err(Error::InvalidArgument(format!(
                "classes must be 2 or 10, got {}",
                self.classes
            )));
        }
        if self.height < MIN_EXTENT || self.width < MIN_EXTENT || self.frames < MIN_FRAMES {
            return Err(Error::Geometry(format!(
                "clips must be at least {MIN_FRAMES}×{MIN_EXTENT}×{MIN_EXTENT} to render shapes, got {}×{}×{}",
                self.frames, self.height, self.width
            )));
        }
        if self.clips_per_class == 0 {
            return Err(Error::InvalidArgument("clips_per_class must be positive".into()));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        if self.classes == 2 {
            vec!["no_fall".into(), "fall".into()]
        } else {
            Motion::ALL.iter().map(|m| m.name().to_string()).collect()
        }
    }

    /// Motion rendered for clip `index` of class `label`.
    pub fn motion(&self, label: usize, index: usize) -> Motion {
        match (self.classes, label) {
            (2, 1) => Motion::Fall,
            (2, _) => Motion::ALL[1 + index % 9],
            (_, l) => Motion::ALL[l],
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            t: self.frames,
            h: self.height,
            w: self.width,
        }
    }
}

/// Split for clip `index` out of `n` in one class: the first 70% train, next 15% val.
pub fn split_of(index: usize, n: usize) -> Split {
    let mut val = n * 15 / 100;
    let mut test = n * 15 / 100;
    if n >= 3 {
        val = val.max(1);
        test = test.max(1);
    }
    let train = n - val - test;
    if index < train {
        Split::Train
    } else if index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

/// One generated clip with its label and split.
#[derive(Debug, Clone)]
pub struct SynthClip {
    pub clip: VideoClip,
    pub label: usize,
    pub index: usize,
    pub split: Split,
}

/// Generate the whole dataset in memory, ordered by class then index.
pub fn synth_clips(cfg: &SynthConfig) -> Result<Vec<SynthClip>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.classes * cfg.clips_per_class);
    for label in 0..cfg.classes {
        for index in 0..cfg.clips_per_class {
            let mut rng = Rng::derive(cfg.seed, ((label as u64) << 32) | index as u64);
            let clip = render_clip(cfg.motion(label, index), cfg.frames, cfg.height, cfg.width, &mut rng)?;
            out.push(SynthClip {
                clip,
                label,
                index,
                split: split_of(index, cfg.clips_per_class),
            });
        }
    }
    Ok(out)
}

/// Write every clip as VID1 under `out_dir/clips/` plus `out_dir/manifest.json`.
pub fn synth_action_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let clips = synth_clips(cfg)?;
    let mut records = Vec::with_capacity(clips.len());
    for c in &clips {
        let rel = format!("clips/c{:02}_{:05}.vid", c.label, c.index);
        c.clip.save(&out_dir.join(&rel))?;
        records.push(ClipRecord {
            path: rel.into(),
            label: c.label,
            split: c.split,
        });
    }
    let manifest = DatasetManifest::new(cfg.class_names(), cfg.geometry(), cfg.seed, records);
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// A drawable primitive: ellipse (`rx`, `ry`) or bar (`len`, `thick`, `angle`).
#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Bar { cx: f64, cy: f64, len: f64, thick: f64, angle: f64 },
}

impl Shape {
    /// Coverage in `[0, 1]` of the pixel centered at `(x, y)`, with a one-pixel soft edge.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        let sd = match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let q = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
                (q - 1.0) * rx.min(ry)
            }
            Shape::Bar { cx, cy, len, thick, angle } => {
                let (dx, dy) = (angle.cos(), angle.sin());
                let (px, py) = (x - cx, y - cy);
                let along = (px * dx + py * dy).clamp(-len / 2.0, len / 2.0);
                let (qx, qy) = (px - along * dx, py - along * dy);
                (qx * qx + qy * qy).sqrt() - thick / 2.0
            }
        };
        (0.5 - sd).clamp(0.0, 1.0)
    }
}

/// Render one clip of `motion`.
pub fn render_clip(motion: Motion, frames: usize, height: usize, width: usize, rng: &mut Rng) -> Result<VideoClip> {
    if height < MIN_EXTENT || width < MIN_EXTENT || frames < 2 {
        return Err(Error::Geometry(format!(
            "cannot render a {frames}×{height}×{width} clip"
        )));
    }
    let (hf, wf) = (height as f64, width as f64);
    let s = hf.min(wf);
    let background = rng.uniform(40.0, 100.0);
    let color = |rng: &mut Rng| {
        let b = rng.uniform(160.0, 250.0);
        let mut c = [0.0; COLORS];
        for v in c.iter_mut() {
            *v = b * rng.uniform(0.85, 1.0);
        }
        c
    };
    let main_color = color(rng);
    let r = rng.uniform(0.08, 0.12) * s;
    let cx = rng.uniform(0.3, 0.7) * wf;
    let cy = rng.uniform(0.3, 0.7) * hf;
    let dir = if rng.coin() { 1.0 } else { -1.0 };

    // per-frame shapes from normalized time τ ∈ [0, 1]
    let shapes: Box<dyn Fn(f64) -> Vec<(Shape, [f64; COLORS])>> = match motion {
        Motion::Fall => {
            let y0 = rng.uniform(0.12, 0.25) * hf;
            let drop = rng.uniform(0.35, 0.55) * hf;
            let until = rng.uniform(0.5, 0.7);
            Box::new(move |tau| {
                let p = (tau / until).min(1.0);
                // upright body tips over as it falls
                let (rx, ry) = (r * (0.6 + 0.8 * p), r * (1.4 - 0.8 * p));
                vec![(Shape::Ellipse { cx, cy: y0 + drop * p * p, rx, ry }, main_color)]
            })
        }
        Motion::Walk => {
            let x0 = if dir > 0.0 { rng.uniform(0.15, 0.3) } else { rng.uniform(0.7, 0.85) } * wf;
            let dist = rng.uniform(0.3, 0.45) * wf * dir;
            Box::new(move |tau| {
                vec![(Shape::Ellipse { cx: x0 + dist * tau, cy, rx: 0.6 * r, ry: 1.4 * r }, main_color)]
            })
        }
        Motion::Drift => {
            let x0 = if dir > 0.0 { rng.uniform(0.2, 0.35) } else { rng.uniform(0.65, 0.8) } * wf;
            let y0 = rng.uniform(0.65, 0.8) * hf;
            let d = rng.uniform(0.25, 0.35) * s;
            Box::new(move |tau| {
                vec![(Shape::Ellipse { cx: x0 + dir * d * tau, cy: y0 - d * tau, rx: r, ry: r }, main_color)]
            })
        }
        Motion::Static => Box::new(move |_| vec![(Shape::Ellipse { cx, cy, rx: r, ry: r }, main_color)]),
        Motion::SwayHorizontal => {
            let amp = rng.uniform(0.1, 0.2) * wf;
            let cycles = rng.uniform(1.0, 2.0);
            let phase = rng.uniform(0.0, 2.0 * PI);
            Box::new(move |tau| {
                let x = cx + amp * (2.0 * PI * cycles * tau + phase).sin();
                vec![(Shape::Ellipse { cx: x, cy, rx: r, ry: r }, main_color)]
            })
        }
        Motion::SwayVertical => {
            let amp = rng.uniform(0.08, 0.12) * hf;
            let cycles = rng.uniform(1.0, 2.0);
            let phase = rng.uniform(0.0, 2.0 * PI);
            Box::new(move |tau| {
                let y = cy + amp * (2.0 * PI * cycles * tau + phase).sin();
                vec![(Shape::Ellipse { cx, cy: y, rx: r, ry: r }, main_color)]
            })
        }
        Motion::Expand => Box::new(move |tau| {
            let rr = r * (0.7 + 1.3 * tau);
            vec![(Shape::Ellipse { cx, cy, rx: rr, ry: rr }, main_color)]
        }),
        Motion::Shrink => Box::new(move |tau| {
            let rr = r * (2.0 - 1.3 * tau);
            vec![(Shape::Ellipse { cx, cy, rx: rr, ry: rr }, main_color)]
        }),
        Motion::Cross => {
            let other = color(rng);
            let ya = rng.uniform(0.25, 0.4) * hf;
            let yb = rng.uniform(0.6, 0.75) * hf;
            let (xl, xr) = (0.15 * wf, 0.85 * wf);
            Box::new(move |tau| {
                let (a, b) = if dir > 0.0 { (xl + (xr - xl) * tau, xr - (xr - xl) * tau) } else { (xr - (xr - xl) * tau, xl + (xr - xl) * tau) };
                vec![
                    (Shape::Ellipse { cx: a, cy: ya, rx: r, ry: r }, main_color),
                    (Shape::Ellipse { cx: b, cy: yb, rx: r, ry: r }, other),
                ]
            })
        }
        Motion::Rotate => {
            let len = rng.uniform(0.4, 0.55) * s;
            let thick = rng.uniform(0.06, 0.09) * s;
            let a0 = rng.uniform(0.0, PI);
            let omega = dir * rng.uniform(PI, 1.5 * PI);
            let (cx, cy) = (rng.uniform(0.4, 0.6) * wf, rng.uniform(0.4, 0.6) * hf);
            Box::new(move |tau| vec![(Shape::Bar { cx, cy, len, thick, angle: a0 + omega * tau }, main_color)])
        }
    };

    let mut pixels = Vec::with_capacity(frames * height * width * COLORS);
    for t in 0..frames {
        let tau = t as f64 / (frames - 1) as f64;
        let objs = shapes(tau);
        for y in 0..height {
            for x in 0..width {
                let mut px = [background; COLORS];
                for (shape, col) in &objs {
                    let a = shape.coverage(x as f64 + 0.5, y as f64 + 0.5);
                    if a > 0.0 {
                        for c in 0..COLORS {
                            px[c] = px[c] * (1.0 - a) + col[c] * a;
                        }
                    }
                }
                for v in px {
                    let noisy = v + NOISE_SIGMA * rng.gaussian();
                    pixels.push(noisy.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    VideoClip::new(frames, height, width, pixels)
}

/// Vertical displacement (pixels, positive downward) of the bright-pixel centroid
/// between the first and last frame; `None` if a frame has no bright pixels.
pub fn vertical_displacement(clip: &VideoClip) -> Option<f64> {
    let centroid = |t: usize| {
        let f = clip.frame(t);
        let (mut sum, mut n) = (0.0, 0usize);
        for y in 0..clip.height() {
            for x in 0..clip.width() {
                let i = (y * clip.width() + x) * COLORS;
                let lum = f[i..i + COLORS].iter().map(|&v| v as f64).sum::<f64>() / COLORS as f64;
                if lum > BRIGHT {
                    sum += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    };
    Some(centroid(clip.frames() - 1)? - centroid(0)?)
}
