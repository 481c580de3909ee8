//! Clip containers and the channel-stacked measurement layout.
//!
//! A clip of `T×H×W×3` bytes is padded to multiples of the block size, scaled
//! to `[0, 1]`, and every block of every color plane is measured with the
//! same matrix. Output element `(t, i, j, c·M + m)` holds measurement `m` of
//! color `c` for block `(i, j)` of frame `t`.

use std::path::Path;

use crate::bytes::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::sensing::SensingMatrix;
use crate::tensor::Tensor;

const CLIP_MAGIC: &[u8; 4] = b"VID1";
const TENSOR_MAGIC: &[u8; 4] = b"MST1";

pub const COLORS: usize = 3;

/// `T×H×W×3` interleaved RGB frames, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: usize,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    pub fps: Option<f32>,
}

impl VideoClip {
    pub fn new(frames: usize, height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Geometry(format!(
                "clip extents must be positive, got {frames}×{height}×{width}"
            )));
        }
        let n = frames * height * width * COLORS;
        if pixels.len() != n {
            return Err(Error::Geometry(format!(
                "clip {frames}×{height}×{width}×3 needs {n} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(VideoClip {
            frames,
            height,
            width,
            pixels,
            fps: None,
        })
    }

    pub fn filled(frames: usize, height: usize, width: usize, value: u8) -> Self {
        VideoClip::new(frames, height, width, vec![value; frames * height * width * COLORS])
            .expect("positive extents")
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * COLORS
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.pixels[t * n..(t + 1) * n]
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[((t * self.height + y) * self.width + x) * COLORS + c]
    }

    pub fn set_pixel(&mut self, t: usize, y: usize, x: usize, c: usize, v: u8) {
        self.pixels[((t * self.height + y) * self.width + x) * COLORS + c] = v;
    }

    /// Frames `start..start + len` as a new clip.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<VideoClip> {
        if len == 0 || start + len > self.frames {
            return Err(Error::Geometry(format!(
                "frames {start}..{} out of range for a {}-frame clip",
                start + len,
                self.frames
            )));
        }
        let n = self.frame_len();
        let mut clip = VideoClip::new(
            len,
            self.height,
            self.width,
            self.pixels[start * n..(start + len) * n].to_vec(),
        )?;
        clip.fps = self.fps;
        Ok(clip)
    }

    /// Pixels scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::with_capacity(16 + self.pixels.len());
        w.bytes(CLIP_MAGIC)
            .u32(bytes::to_u32(self.frames, "T")?)
            .u32(bytes::to_u32(self.height, "H")?)
            .u32(bytes::to_u32(self.width, "W")?)
            .bytes(&self.pixels);
        Ok(w.finish())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(CLIP_MAGIC)?;
        let t = r.u32()? as usize;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let n = t
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(COLORS))
            .ok_or_else(|| Error::Format("clip dimensions overflow".into()))?;
        if r.remaining() != n {
            return Err(Error::Format(format!(
                "clip header says {t}×{h}×{w}×3 = {n} bytes, payload has {}",
                r.remaining()
            )));
        }
        let pixels = r.take(n)?.to_vec();
        VideoClip::new(t, h, w, pixels).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        bytes::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&bytes::read_file(path)?).map_err(|e| e.in_file(path))
    }
}

/// Packed measurements of one clip: `T×Hb×Wb×3M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTensor {
    pub block: usize,
    pub measurements: usize,
    data: Tensor,
}

impl MeasurementTensor {
    pub fn new(data: Tensor, block: usize, measurements: usize) -> Result<Self> {
        match data.shape() {
            &[_, _, _, c] if c == COLORS * measurements => {}
            other => {
                return Err(Error::Geometry(format!(
                    "measurement tensor must be T×Hb×Wb×{}, got {other:?}",
                    COLORS * measurements
                )))
            }
        }
        Ok(MeasurementTensor {
            block,
            measurements,
            data,
        })
    }

    /// `[T, Hb, Wb, C]`.
    pub fn dims(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let [t, hb, wb, c] = self.dims();
        let mut w = Writer::with_capacity(32 + 4 * self.data.len());
        w.bytes(TENSOR_MAGIC)
            .u32(bytes::to_u32(t, "T")?)
            .u32(bytes::to_u32(hb, "Hb")?)
            .u32(bytes::to_u32(wb, "Wb")?)
            .u32(bytes::to_u32(c, "C")?)
            .u16(bytes::to_u16(self.block, "B")?)
            .u32(bytes::to_u32(self.measurements, "M")?);
        for &v in self.data.data() {
            w.f32(v as f32);
        }
        Ok(w.finish_with_crc())
    }

    /// Decode; values come back as the stored `f32`s widened to `f64`.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::checked(buf)?;
        r.magic(TENSOR_MAGIC)?;
        let dims = [
            r.u32()? as usize,
            r.u32()? as usize,
            r.u32()? as usize,
            r.u32()? as usize,
        ];
        let block = r.u16()? as usize;
        let measurements = r.u32()? as usize;
        let n: usize = dims.iter().product();
        if r.remaining() != n * 4 {
            return Err(Error::Format(format!(
                "tensor {dims:?} needs {} bytes of f32, found {}",
                n * 4,
                r.remaining()
            )));
        }
        let data = (0..n)
            .map(|_| r.f32().map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        let data = Tensor::from_vec(&dims, data).map_err(|e| Error::Format(e.to_string()))?;
        MeasurementTensor::new(data, block, measurements).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        bytes::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&bytes::read_file(path)?).map_err(|e| e.in_file(path))
    }
}

/// Edge-replicate an `H×W×3` frame up to the next multiples of `block`.
pub fn pad_frame(frame: &[u8], height: usize, width: usize, block: usize) -> (Vec<u8>, usize, usize) {
    assert_eq!(frame.len(), height * width * COLORS, "frame length");
    assert!(block > 0, "block size must be positive");
    let ph = height.div_ceil(block) * block;
    let pw = width.div_ceil(block) * block;
    if ph == height && pw == width {
        return (frame.to_vec(), height, width);
    }
    let mut out = Vec::with_capacity(ph * pw * COLORS);
    for y in 0..ph {
        let sy = y.min(height - 1);
        for x in 0..pw {
            let sx = x.min(width - 1);
            let src = (sy * width + sx) * COLORS;
            out.extend_from_slice(&frame[src..src + COLORS]);
        }
    }
    (out, ph, pw)
}

/// Pad every frame of a clip; a no-op clone when already divisible.
pub fn pad_clip(clip: &VideoClip, block: usize) -> VideoClip {
    let mut pixels = Vec::new();
    let (mut ph, mut pw) = (clip.height, clip.width);
    for t in 0..clip.frames {
        let (f, h, w) = pad_frame(clip.frame(t), clip.height, clip.width, block);
        pixels.extend_from_slice(&f);
        ph = h;
        pw = w;
    }
    let mut out = VideoClip::new(clip.frames, ph, pw, pixels).expect("padded geometry");
    out.fps = clip.fps;
    out
}

/// Measure every block of every color plane and stack colors along channels.
pub fn pack_clip(clip: &VideoClip, phi: &SensingMatrix) -> Result<MeasurementTensor> {
    let b = phi.block();
    let (t, h, w) = (clip.frames, clip.height, clip.width);
    if h % b != 0 || w % b != 0 {
        return Err(Error::Geometry(format!(
            "clip {h}×{w} is not divisible by block size {b}; pad first"
        )));
    }
    let (hb, wb) = (h / b, w / b);
    let (m, n) = (phi.rows(), phi.cols());
    let c_total = COLORS * m;
    let blocks_per_frame = hb * wb;
    // Rows ordered (t, i, j, color) so one GEMM serves the whole clip and the
    // result lands directly in color-major channel order.
    let rows = t * blocks_per_frame * COLORS;
    let mut x = vec![0.0; rows * n];
    for ti in 0..t {
        let frame = clip.frame(ti);
        for bi in 0..hb {
            for bj in 0..wb {
                let base = ((ti * blocks_per_frame + bi * wb + bj) * COLORS) * n;
                for r in 0..b {
                    for cc in 0..b {
                        let src = ((bi * b + r) * w + bj * b + cc) * COLORS;
                        for color in 0..COLORS {
                            x[base + color * n + r * b + cc] = frame[src + color] as f64 / 255.0;
                        }
                    }
                }
            }
        }
    }
    let y = phi.encode_blocks(&x, rows)?;
    let data = Tensor::from_vec(&[t, hb, wb, c_total], y)?;
    MeasurementTensor::new(data, b, m)
}

/// Exact inverse of [`pack_clip`], defined only for the identity matrix.
///
/// Any other matrix needs a genuine reconstruction (see `recon`), so this refuses.
pub fn unpack_clip(mt: &MeasurementTensor, phi: &SensingMatrix) -> Result<VideoClip> {
    if phi.rows() != phi.cols() {
        return Err(Error::Refused(format!(
            "cannot unpack a {}×{} sensing matrix (M ≠ N); reconstruction is required",
            phi.rows(),
            phi.cols()
        )));
    }
    if !phi.is_identity() {
        return Err(Error::Refused(
            "unpacking is only defined for the identity sensing matrix".into(),
        ));
    }
    let b = phi.block();
    let [t, hb, wb, c] = mt.dims();
    if mt.block != b || c != COLORS * phi.rows() {
        return Err(Error::Geometry(format!(
            "tensor (B = {}, C = {c}) does not match matrix (B = {b}, M = {})",
            mt.block,
            phi.rows()
        )));
    }
    let (h, w) = (hb * b, wb * b);
    let n = phi.rows();
    let mut pixels = vec![0u8; t * h * w * COLORS];
    let data = mt.tensor().data();
    for ti in 0..t {
        for bi in 0..hb {
            for bj in 0..wb {
                let base = ((ti * hb + bi) * wb + bj) * c;
                for color in 0..COLORS {
                    for p in 0..n {
                        let (r, cc) = (p / b, p % b);
                        let v = (data[base + color * n + p] * 255.0).round().clamp(0.0, 255.0);
                        pixels[((ti * h + bi * b + r) * w + bj * b + cc) * COLORS + color] = v as u8;
                    }
                }
            }
        }
    }
    VideoClip::new(t, h, w, pixels)
}
