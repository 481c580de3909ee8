//! Temporal windowing and spatial resizing of clips.

use crate::error::{Error, Result};
use crate::packing::{VideoClip, COLORS};

/// Windows of `frames` frames starting at `0, stride, 2·stride, …` while they fit.
pub fn window_clip(video: &VideoClip, frames: usize, stride: usize) -> Result<Vec<VideoClip>> {
    if frames == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window length and stride must be positive".into()));
    }
    if video.frames() < frames {
        return Err(Error::Geometry(format!(
            "video has {} frames, shorter than the window of {frames}",
            video.frames()
        )));
    }
    let count = (video.frames() - frames) / stride + 1;
    (0..count).map(|i| video.slice_frames(i * stride, frames)).collect()
}

/// Bilinear resize of every frame with half-pixel centers; colors are independent.
pub fn resize_clip(video: &VideoClip, height: usize, width: usize) -> Result<VideoClip> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("resize targets must be at least 1".into()));
    }
    let (h, w) = (video.height(), video.width());
    if (h, w) == (height, width) {
        return Ok(video.clone());
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = taps(height, h);
    let xs = taps(width, w);
    let mut pixels = Vec::with_capacity(video.frames() * height * width * COLORS);
    for t in 0..video.frames() {
        let f = video.frame(t);
        let at = |y: usize, x: usize, c: usize| f[(y * w + x) * COLORS + c] as f64;
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                for c in 0..COLORS {
                    let top = at(y0, x0, c) * (1.0 - fx) + at(y0, x1, c) * fx;
                    let bot = at(y1, x0, c) * (1.0 - fx) + at(y1, x1, c) * fx;
                    let v = top * (1.0 - fy) + bot * fy;
                    pixels.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    let mut out = VideoClip::new(video.frames(), height, width, pixels)?;
    out.fps = video.fps;
    Ok(out)
}
