//! Block compressive-sensing matrices and block encoding `y = Φx`.
//!
//! A [`SensingConfig`] (family, block size, measurement count, seed and the
//! family-specific geometry) fully determines the matrix entries: it is the
//! key material. Blocks are rasterized row-major into vectors of length
//! `N = B²`, and the compression ratio is `r = N / M`.
//!
//! Family constructions:
//!
//! - `Gaussian`: i.i.d. `N(0, 1/M)`.
//! - `Bernoulli`: i.i.d. `±1/√M`.
//! - `Smm`: the block is cut into `(B/s)²` sub-blocks of `s×s` pixels; one shared
//!   Gaussian matrix of size `(M·s²/B²)×s²` (variance `1/rows`) measures every
//!   sub-block. Rows are grouped by sub-block in raster order.
//! - `Lsmm`: row `i` is supported on the contiguous raster window starting at
//!   `round(i·(N−w)/max(M−1, 1))` of length `w`, with entries `±1/√w`.
//! - `ConvCs`: valid-mode strided 2D convolution with `k×k` Gaussian kernels
//!   (variance `1/k²`); row `kernel·P² + pi·P + pj` embeds kernel `kernel` at
//!   output position `(pi, pj)` where `P = (B−k)/t + 1`.
//! - `Identity`: the `N×N` identity, used for the uncompressed `r = 1` baseline.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bytes::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};
use crate::rng::Rng;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CSM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Bernoulli,
    Smm,
    Lsmm,
    ConvCs,
    Identity,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Gaussian,
        Family::Bernoulli,
        Family::Smm,
        Family::Lsmm,
        Family::ConvCs,
        Family::Identity,
    ];

    /// The five randomized families compared against each other.
    pub const RANDOMIZED: [Family; 5] = [
        Family::Gaussian,
        Family::Bernoulli,
        Family::Smm,
        Family::Lsmm,
        Family::ConvCs,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Family::Gaussian => 0,
            Family::Bernoulli => 1,
            Family::Smm => 2,
            Family::Lsmm => 3,
            Family::ConvCs => 4,
            Family::Identity => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.tag() == tag)
            .ok_or(Error::UnknownFamily(tag))
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Smm => "smm",
            Family::Lsmm => "lsmm",
            Family::ConvCs => "convcs",
            Family::Identity => "identity",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Family::ALL
            .into_iter()
            .find(|f| f.name() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sensing family {s:?}")))
    }
}

/// Everything needed to regenerate a sensing matrix.
///
/// Family-specific fields are zero when unused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensingConfig {
    pub family: Family,
    pub block: usize,
    pub measurements: usize,
    pub seed: u64,
    pub sub_block: usize,
    pub window: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl SensingConfig {
    fn base(family: Family, block: usize, measurements: usize, seed: u64) -> Self {
        SensingConfig {
            family,
            block,
            measurements,
            seed,
            sub_block: 0,
            window: 0,
            kernel: 0,
            stride: 0,
        }
    }

    pub fn gaussian(block: usize, measurements: usize, seed: u64) -> Self {
        Self::base(Family::Gaussian, block, measurements, seed)
    }

    pub fn bernoulli(block: usize, measurements: usize, seed: u64) -> Self {
        Self::base(Family::Bernoulli, block, measurements, seed)
    }

    pub fn smm(block: usize, measurements: usize, sub_block: usize, seed: u64) -> Self {
        SensingConfig {
            sub_block,
            ..Self::base(Family::Smm, block, measurements, seed)
        }
    }

    pub fn lsmm(block: usize, measurements: usize, window: usize, seed: u64) -> Self {
        SensingConfig {
            window,
            ..Self::base(Family::Lsmm, block, measurements, seed)
        }
    }

    pub fn conv_cs(block: usize, measurements: usize, kernel: usize, stride: usize, seed: u64) -> Self {
        SensingConfig {
            kernel,
            stride,
            ..Self::base(Family::ConvCs, block, measurements, seed)
        }
    }

    pub fn identity(block: usize) -> Self {
        Self::base(Family::Identity, block, block * block, 0)
    }

    /// Config for `family` at compression ratio `ratio` with default family geometry.
    ///
    /// Defaults: SMM uses `s = B/2` (four sub-blocks) when `M` allows it, else `s = B`;
    /// LSMM uses `w = N/4`; ConvCS uses `k = t = B/2` when `M` allows it, else `k = t = B`.
    pub fn for_ratio(family: Family, block: usize, ratio: usize, seed: u64) -> Result<Self> {
        let n = block * block;
        if block == 0 || ratio == 0 || n % ratio != 0 {
            return Err(Error::InvalidArgument(format!(
                "ratio {ratio} does not divide N = {n} (B = {block})"
            )));
        }
        let m = n / ratio;
        let half = block / 2;
        let cfg = match family {
            Family::Gaussian => Self::gaussian(block, m, seed),
            Family::Bernoulli => Self::bernoulli(block, m, seed),
            Family::Smm => {
                let s = if block % 2 == 0 && half > 0 && m % 4 == 0 { half } else { block };
                Self::smm(block, m, s, seed)
            }
            Family::Lsmm => Self::lsmm(block, m, (n / 4).max(1), seed),
            Family::ConvCs => {
                let k = if block % 2 == 0 && half > 0 && m % 4 == 0 { half } else { block };
                Self::conv_cs(block, m, k, k, seed)
            }
            Family::Identity => {
                if ratio != 1 {
                    return Err(Error::InvalidArgument(
                        "identity sensing only exists at ratio 1".into(),
                    ));
                }
                Self::identity(block)
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n(&self) -> usize {
        self.block * self.block
    }

    /// Compression ratio `N / M`.
    pub fn ratio(&self) -> f64 {
        self.n() as f64 / self.measurements as f64
    }

    /// Number of ConvCS output positions per axis.
    pub fn conv_positions(&self) -> usize {
        (self.block - self.kernel) / self.stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        let (b, m, n) = (self.block, self.measurements, self.n());
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if b == 0 || b > u16::MAX as usize {
            return bad(format!("block size must be in 1..=65535, got {b}"));
        }
        if m == 0 || m > n {
            return bad(format!("measurements must satisfy 1 <= M <= N = {n}, got {m}"));
        }
        match self.family {
            Family::Gaussian | Family::Bernoulli => {}
            Family::Identity => {
                if m != n {
                    return bad(format!("identity sensing needs M == N, got M = {m}, N = {n}"));
                }
            }
            Family::Smm => {
                let s = self.sub_block;
                if s == 0 || b % s != 0 {
                    return bad(format!("SMM sub-block {s} must divide block {b}"));
                }
                let q = (b / s) * (b / s);
                if m % q != 0 {
                    return bad(format!("SMM needs M = {m} divisible by (B/s)^2 = {q}"));
                }
            }
            Family::Lsmm => {
                let w = self.window;
                if w == 0 || w > n {
                    return bad(format!("LSMM window must satisfy 1 <= w <= N = {n}, got {w}"));
                }
            }
            Family::ConvCs => {
                let (k, t) = (self.kernel, self.stride);
                if k == 0 || k > b || t == 0 {
                    return bad(format!("ConvCS needs 1 <= k <= B and t >= 1, got k = {k}, t = {t}"));
                }
                if (b - k) % t != 0 {
                    return bad(format!("ConvCS (B - k)/t = ({b} - {k})/{t} is not integral"));
                }
                let p2 = self.conv_positions().pow(2);
                if m % p2 != 0 {
                    return bad(format!("ConvCS needs M = {m} divisible by positions^2 = {p2}"));
                }
            }
        }
        Ok(())
    }
}

/// Dense `M×N` sensing matrix together with the config that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    config: SensingConfig,
    entries: Vec<f64>,
}

impl SensingMatrix {
    /// Generate the matrix determined by `config`.
    pub fn build(config: &SensingConfig) -> Result<Self> {
        config.validate()?;
        let entries = match config.family {
            Family::Gaussian => gaussian_entries(config),
            Family::Bernoulli => bernoulli_entries(config),
            Family::Smm => smm_entries(config),
            Family::Lsmm => lsmm_entries(config),
            Family::ConvCs => conv_cs_entries(config),
            Family::Identity => {
                let n = config.n();
                let mut e = vec![0.0; n * n];
                for i in 0..n {
                    e[i * n + i] = 1.0;
                }
                e
            }
        };
        Ok(SensingMatrix {
            config: *config,
            entries,
        })
    }

    pub fn gaussian(m: usize, n: usize, seed: u64) -> Result<Self> {
        Self::build(&SensingConfig::gaussian(block_side(n)?, m, seed))
    }

    pub fn bernoulli(m: usize, n: usize, seed: u64) -> Result<Self> {
        Self::build(&SensingConfig::bernoulli(block_side(n)?, m, seed))
    }

    pub fn smm(m: usize, block: usize, sub_block: usize, seed: u64) -> Result<Self> {
        Self::build(&SensingConfig::smm(block, m, sub_block, seed))
    }

    pub fn lsmm(m: usize, n: usize, window: usize, seed: u64) -> Result<Self> {
        Self::build(&SensingConfig::lsmm(block_side(n)?, m, window, seed))
    }

    pub fn conv_cs(m: usize, block: usize, kernel: usize, stride: usize, seed: u64) -> Result<Self> {
        Self::build(&SensingConfig::conv_cs(block, m, kernel, stride, seed))
    }

    pub fn identity(block: usize) -> Result<Self> {
        Self::build(&SensingConfig::identity(block))
    }

    pub fn config(&self) -> &SensingConfig {
        &self.config
    }

    pub fn rows(&self) -> usize {
        self.config.measurements
    }

    pub fn cols(&self) -> usize {
        self.config.n()
    }

    pub fn block(&self) -> usize {
        self.config.block
    }

    pub fn ratio(&self) -> f64 {
        self.config.ratio()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols() + col]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cols();
        &self.entries[i * n..(i + 1) * n]
    }

    /// True when the entries are exactly the identity matrix.
    pub fn is_identity(&self) -> bool {
        let n = self.cols();
        self.rows() == n
            && self
                .entries
                .iter()
                .enumerate()
                .all(|(i, &v)| v == if i / n == i % n { 1.0 } else { 0.0 })
    }

    /// Same family and geometry under a different key.
    pub fn with_seed(&self, seed: u64) -> Result<Self> {
        Self::build(&SensingConfig { seed, ..self.config })
    }

    /// Check that the stored entries equal a fresh regeneration from the config.
    pub fn regenerates(&self) -> bool {
        Self::build(&self.config)
            .map(|m| m.entries == self.entries)
            .unwrap_or(false)
    }

    /// `y = Φx` for one rasterized block.
    pub fn encode_block(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.rows()];
        self.encode_block_into(x, &mut y)?;
        Ok(y)
    }

    pub fn encode_block_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.cols() {
            return Err(Error::shape(&[self.cols()], &[x.len()]));
        }
        if y.len() != self.rows() {
            return Err(Error::shape(&[self.rows()], &[y.len()]));
        }
        for (yi, row) in y.iter_mut().zip(self.entries.chunks_exact(self.cols())) {
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    /// `Y = X Φᵀ` for many rasterized blocks stored as rows of `x` (`count×N`).
    pub fn encode_blocks(&self, x: &[f64], count: usize) -> Result<Vec<f64>> {
        if x.len() != count * self.cols() {
            return Err(Error::shape(&[count, self.cols()], &[x.len()]));
        }
        let mut y = vec![0.0; count * self.rows()];
        gemm(
            count,
            self.cols(),
            self.rows(),
            1.0,
            x,
            Op::N,
            &self.entries,
            Op::T,
            0.0,
            &mut y,
        );
        Ok(y)
    }

    /// Encode every `B×B` block of a single-channel `H×W` frame into an `Hb×Wb×M` tensor.
    pub fn encode_frame(&self, frame: &Tensor) -> Result<Tensor> {
        let (h, w) = match frame.shape() {
            &[h, w] => (h, w),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "encode_frame expects an H×W frame, got shape {other:?}"
                )))
            }
        };
        let b = self.block();
        if h % b != 0 || w % b != 0 {
            return Err(Error::Geometry(format!(
                "frame {h}×{w} is not divisible by block size {b}; pad first"
            )));
        }
        let (hb, wb) = (h / b, w / b);
        let mut blocks = vec![0.0; hb * wb * self.cols()];
        for bi in 0..hb {
            for bj in 0..wb {
                let dst = &mut blocks[(bi * wb + bj) * self.cols()..][..self.cols()];
                for r in 0..b {
                    let src = &frame.data()[(bi * b + r) * w + bj * b..][..b];
                    dst[r * b..(r + 1) * b].copy_from_slice(src);
                }
            }
        }
        let y = self.encode_blocks(&blocks, hb * wb)?;
        Tensor::from_vec(&[hb, wb, self.rows()], y)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.config;
        let mut w = Writer::with_capacity(48 + 8 * self.entries.len());
        w.bytes(MAGIC)
            .u8(c.family.tag())
            .u16(bytes::to_u16(c.block, "block")?)
            .u32(bytes::to_u32(c.measurements, "measurements")?)
            .u32(bytes::to_u32(c.n(), "N")?)
            .u64(c.seed)
            .u16(bytes::to_u16(c.sub_block, "sub_block")?)
            .u16(bytes::to_u16(c.window, "window")?)
            .u16(bytes::to_u16(c.kernel, "kernel")?)
            .u16(bytes::to_u16(c.stride, "stride")?);
        for &v in &self.entries {
            w.f64(v);
        }
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::checked(buf)?;
        r.magic(MAGIC)?;
        let family = Family::from_tag(r.u8()?)?;
        let block = r.u16()? as usize;
        let measurements = r.u32()? as usize;
        let n = r.u32()? as usize;
        let seed = r.u64()?;
        let config = SensingConfig {
            family,
            block,
            measurements,
            seed,
            sub_block: r.u16()? as usize,
            window: r.u16()? as usize,
            kernel: r.u16()? as usize,
            stride: r.u16()? as usize,
        };
        if n != block * block {
            return Err(Error::Format(format!("N = {n} but B = {block}")));
        }
        config
            .validate()
            .map_err(|e| Error::Format(format!("invalid stored config: {e}")))?;
        let count = measurements * n;
        if r.remaining() != count * 8 {
            return Err(Error::Format(format!(
                "expected {count} f64 entries, found {} bytes",
                r.remaining()
            )));
        }
        let entries = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        r.expect_end()?;
        Ok(SensingMatrix { config, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        bytes::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&bytes::read_file(path)?).map_err(|e| e.in_file(path))
    }
}

fn block_side(n: usize) -> Result<usize> {
    let b = (n as f64).sqrt().round() as usize;
    if b * b != n {
        return Err(Error::InvalidArgument(format!(
            "N = {n} is not a square block dimension"
        )));
    }
    Ok(b)
}

fn gaussian_entries(c: &SensingConfig) -> Vec<f64> {
    let std = 1.0 / (c.measurements as f64).sqrt();
    let mut rng = Rng::new(c.seed);
    (0..c.measurements * c.n()).map(|_| std * rng.gaussian()).collect()
}

fn bernoulli_entries(c: &SensingConfig) -> Vec<f64> {
    let amp = 1.0 / (c.measurements as f64).sqrt();
    let mut rng = Rng::new(c.seed);
    (0..c.measurements * c.n())
        .map(|_| if rng.coin() { amp } else { -amp })
        .collect()
}

fn smm_entries(c: &SensingConfig) -> Vec<f64> {
    let (b, s, n) = (c.block, c.sub_block, c.n());
    let per_side = b / s;
    let sub_rows = c.measurements / (per_side * per_side);
    let sub_cols = s * s;
    let std = 1.0 / (sub_rows as f64).sqrt();
    let mut rng = Rng::new(c.seed);
    let shared: Vec<f64> = (0..sub_rows * sub_cols).map(|_| std * rng.gaussian()).collect();

    let mut e = vec![0.0; c.measurements * n];
    for q in 0..per_side * per_side {
        let (qr, qc) = (q / per_side, q % per_side);
        for i in 0..sub_rows {
            let row = q * sub_rows + i;
            for a in 0..s {
                for bb in 0..s {
                    let col = (qr * s + a) * b + qc * s + bb;
                    e[row * n + col] = shared[i * sub_cols + a * s + bb];
                }
            }
        }
    }
    e
}

/// Start index of LSMM row `i`: `round(i·(N−w)/max(M−1, 1))`, halves rounded up.
pub fn lsmm_row_start(i: usize, m: usize, n: usize, w: usize) -> usize {
    let d = m.saturating_sub(1).max(1);
    (2 * i * (n - w) + d) / (2 * d)
}

fn lsmm_entries(c: &SensingConfig) -> Vec<f64> {
    let (m, n, w) = (c.measurements, c.n(), c.window);
    let amp = 1.0 / (w as f64).sqrt();
    let mut rng = Rng::new(c.seed);
    let mut e = vec![0.0; m * n];
    for i in 0..m {
        let start = lsmm_row_start(i, m, n, w);
        for j in start..start + w {
            e[i * n + j] = if rng.coin() { amp } else { -amp };
        }
    }
    e
}

/// The random `k×k` kernels (row-major) behind a ConvCS matrix, in kernel order.
pub fn conv_cs_kernels(c: &SensingConfig) -> Vec<Vec<f64>> {
    let p = c.conv_positions();
    let count = c.measurements / (p * p);
    let k2 = c.kernel * c.kernel;
    let std = 1.0 / c.kernel as f64;
    let mut rng = Rng::new(c.seed);
    (0..count)
        .map(|_| (0..k2).map(|_| std * rng.gaussian()).collect())
        .collect()
}

fn conv_cs_entries(c: &SensingConfig) -> Vec<f64> {
    let (b, k, t, n) = (c.block, c.kernel, c.stride, c.n());
    let p = c.conv_positions();
    let kernels = conv_cs_kernels(c);
    let mut e = vec![0.0; c.measurements * n];
    for (ki, kernel) in kernels.iter().enumerate() {
        for pi in 0..p {
            for pj in 0..p {
                let row = ki * p * p + pi * p + pj;
                for a in 0..k {
                    for bb in 0..k {
                        e[row * n + (pi * t + a) * b + pj * t + bb] = kernel[a * k + bb];
                    }
                }
            }
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nonzeros(row: &[f64]) -> usize {
        row.iter().filter(|v| **v != 0.0).count()
    }

    #[test]
    fn gaussian_variance_and_determinism() {
        let phi = SensingMatrix::gaussian(64, 256, 7).unwrap();
        assert_eq!((phi.rows(), phi.cols()), (64, 256));
        let e = phi.entries();
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / e.len() as f64;
        assert!((var * 64.0 - 1.0).abs() < 0.1, "variance {var}");
        assert_eq!(phi, SensingMatrix::gaussian(64, 256, 7).unwrap());
        assert_ne!(phi, SensingMatrix::gaussian(64, 256, 8).unwrap());
    }

    #[test]
    fn square_gaussian_has_unit_ratio() {
        let phi = SensingMatrix::gaussian(16, 16, 1).unwrap();
        assert_eq!(phi.ratio(), 1.0);
    }

    #[test]
    fn rejects_bad_measurement_counts() {
        assert!(SensingMatrix::gaussian(0, 64, 1).is_err());
        assert!(SensingMatrix::gaussian(65, 64, 1).is_err());
        assert!(SensingMatrix::bernoulli(65, 64, 1).is_err());
        assert!(SensingMatrix::gaussian(4, 60, 1).is_err());
    }

    #[test]
    fn bernoulli_entries_and_balance() {
        let phi = SensingMatrix::bernoulli(64, 256, 11).unwrap();
        let amp = 1.0 / 8.0;
        assert!(phi.entries().iter().all(|&v| v == amp || v == -amp));
        let pos = phi.entries().iter().filter(|v| **v > 0.0).count() as f64;
        let frac = pos / phi.entries().len() as f64;
        assert!((frac - 0.5).abs() < 0.02, "positive fraction {frac}");
        for i in 0..phi.rows() {
            let norm = phi.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn smm_block_diagonal_structure() {
        let phi = SensingMatrix::smm(64, 16, 8, 3).unwrap();
        assert_eq!((phi.rows(), phi.cols()), (64, 256));
        // Structural oracle: which sub-block does each pixel belong to?
        let sub_of = |col: usize| (col / 16 / 8) * 2 + (col % 16) / 8;
        let mut shared: Vec<Vec<f64>> = Vec::new();
        for q in 0..4 {
            let mut sub = Vec::new();
            for i in 0..16 {
                let row = phi.row(q * 16 + i);
                for (col, &v) in row.iter().enumerate() {
                    if sub_of(col) == q {
                        assert_ne!(v, 0.0);
                        sub.push(v);
                    } else {
                        assert_eq!(v, 0.0, "off-diagonal entry at row {} col {col}", q * 16 + i);
                    }
                }
            }
            shared.push(sub);
        }
        assert_eq!(shared[0].len(), 16 * 64);
        assert!(shared.iter().all(|s| s == &shared[0]));
    }

    #[test]
    fn smm_geometry_errors() {
        assert!(SensingMatrix::smm(64, 16, 5, 1).is_err());
        assert!(SensingMatrix::smm(6, 16, 8, 1).is_err());
    }

    #[test]
    fn lsmm_sparsity_and_overlap() {
        let phi = SensingMatrix::lsmm(16, 256, 64, 5).unwrap();
        let mut total = 0;
        for i in 0..16 {
            let row = phi.row(i);
            assert_eq!(nonzeros(row), 64);
            total += nonzeros(row);
            let start = lsmm_row_start(i, 16, 256, 64);
            assert!(row[start..start + 64].iter().all(|v| v.abs() == 1.0 / 8.0));
            if i > 0 {
                let prev = phi.row(i - 1);
                let overlap = (0..256).filter(|&j| prev[j] != 0.0 && row[j] != 0.0).count();
                assert!(overlap >= 1);
            }
        }
        assert_eq!(total, 16 * 64);
        assert_eq!(lsmm_row_start(15, 16, 256, 64), 192);
        assert!(SensingMatrix::lsmm(16, 256, 0, 5).is_err());
        assert!(SensingMatrix::lsmm(16, 256, 257, 5).is_err());
    }

    #[test]
    fn conv_cs_matches_direct_convolution() {
        let cfg = SensingConfig::conv_cs(16, 16, 8, 8, 9);
        let phi = SensingMatrix::build(&cfg).unwrap();
        for i in 0..16 {
            assert_eq!(nonzeros(phi.row(i)), 64);
        }
        let kernels = conv_cs_kernels(&cfg);
        assert_eq!(kernels.len(), 4);
        let x: Vec<f64> = (0..256).map(|i| ((i * 37 % 101) as f64) / 100.0).collect();
        let y = phi.encode_block(&x).unwrap();
        for (ki, kernel) in kernels.iter().enumerate() {
            for pi in 0..2 {
                for pj in 0..2 {
                    let mut direct = 0.0;
                    for a in 0..8 {
                        for b in 0..8 {
                            direct += kernel[a * 8 + b] * x[(pi * 8 + a) * 16 + pj * 8 + b];
                        }
                    }
                    let got = y[ki * 4 + pi * 2 + pj];
                    assert!((got - direct).abs() <= 1e-12 * direct.abs().max(1.0));
                }
            }
        }
        assert!(SensingMatrix::conv_cs(16, 16, 7, 2, 1).is_err());
        assert!(SensingMatrix::conv_cs(6, 16, 8, 8, 1).is_err());
    }

    #[test]
    fn encode_block_hand_example() {
        let mut phi = SensingMatrix::gaussian(2, 4, 0).unwrap();
        phi.entries = vec![1., 0., 1., 0., 0., 1., 0., 1.];
        assert_eq!(phi.encode_block(&[1., 2., 3., 4.]).unwrap(), vec![4., 6.]);
        assert!(phi.encode_block(&[1., 2., 3.]).is_err());
    }

    #[test]
    fn identity_encoding_is_a_copy() {
        let phi = SensingMatrix::identity(4).unwrap();
        assert!(phi.is_identity());
        let x: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        assert_eq!(phi.encode_block(&x).unwrap(), x);
        assert!(!SensingMatrix::gaussian(16, 16, 1).unwrap().is_identity());
    }

    #[test]
    fn encode_frame_matches_blockwise_loop() {
        let phi = SensingMatrix::gaussian(4, 256, 21).unwrap();
        let frame = Tensor::from_vec(
            &[32, 32],
            (0..1024).map(|i| ((i * 7919) % 255) as f64 / 255.0).collect(),
        )
        .unwrap();
        let out = phi.encode_frame(&frame).unwrap();
        assert_eq!(out.shape(), &[2, 2, 4]);
        for bi in 0..2 {
            for bj in 0..2 {
                let mut x = Vec::new();
                for r in 0..16 {
                    for c in 0..16 {
                        x.push(frame.get(&[bi * 16 + r, bj * 16 + c]));
                    }
                }
                let y = phi.encode_block(&x).unwrap();
                for m in 0..4 {
                    assert!((out.get(&[bi, bj, m]) - y[m]).abs() < 1e-12);
                }
            }
        }
        assert!(phi.encode_frame(&Tensor::zeros(&[30, 32])).is_err());
    }

    #[test]
    fn constant_frame_encodes_to_scaled_row_sums() {
        let phi = SensingMatrix::gaussian(8, 64, 4).unwrap();
        let c = 0.3;
        let out = phi.encode_frame(&Tensor::filled(&[16, 16], c)).unwrap();
        let ones = phi.encode_block(&vec![1.0; 64]).unwrap();
        for bi in 0..2 {
            for bj in 0..2 {
                for m in 0..8 {
                    assert!((out.get(&[bi, bj, m]) - c * ones[m]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn file_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.csm");
        for fam in Family::RANDOMIZED {
            let cfg = SensingConfig::for_ratio(fam, 8, 4, 77).unwrap();
            let phi = SensingMatrix::build(&cfg).unwrap();
            phi.save(&path).unwrap();
            let back = SensingMatrix::load(&path).unwrap();
            assert_eq!(back, phi);
            assert!(back.regenerates());
        }
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[40] ^= 1;
        assert!(SensingMatrix::from_bytes(&bytes).is_err());
        bytes[40] ^= 1;
        assert!(SensingMatrix::from_bytes(&bytes[..bytes.len() / 2]).is_err());
        assert!(SensingMatrix::from_bytes(&[]).is_err());
    }

    #[test]
    fn unknown_family_tag_is_reported() {
        let phi = SensingMatrix::gaussian(4, 16, 1).unwrap();
        let mut bytes = phi.to_bytes().unwrap();
        bytes[4] = 42;
        let body = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body]);
        bytes[body..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            SensingMatrix::from_bytes(&bytes),
            Err(Error::UnknownFamily(42))
        ));
    }

    #[test]
    fn ratio_defaults_cover_small_blocks() {
        for fam in Family::RANDOMIZED {
            for block in [8, 16] {
                for r in [4, 16, 32, 64] {
                    let cfg = SensingConfig::for_ratio(fam, block, r, 1).unwrap();
                    assert_eq!(cfg.n() / cfg.measurements, r);
                    SensingMatrix::build(&cfg).unwrap();
                }
            }
        }
        assert!(SensingConfig::for_ratio(Family::Gaussian, 16, 3, 1).is_err());
        assert!(SensingConfig::for_ratio(Family::Identity, 16, 4, 1).is_err());
    }
}
