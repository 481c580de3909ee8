//! The compressed-domain classifier.
//!
//! ```text
//! stem 3×3×3 conv (S, ReLU)
//!   → maxpool 1×2×2          (axes with extent < 4 are not pooled)
//!   → Inception 1 → Inception 2
//!   → maxpool 2×2×2          (same auto-skip rule)
//!   → Inception 3 → Inception 4
//!   → global average pool over (T, H, W)
//!   → affine map to K logits
//! ```

use serde::{Deserialize, Serialize};

use super::conv::{conv3d_backward, conv3d_forward, dims5, relu_backward_inplace, relu_inplace, same_pad};
use super::inception::{
    inception3d_backward, inception3d_forward, InceptionCache, InceptionSpec, PARAMS_PER_BLOCK,
};
use super::loss::softmax_cross_entropy;
use super::pool::{maxpool3d_backward, maxpool3d_forward, PoolGeometry};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Axes shorter than this are left unpooled.
pub const MIN_POOL_EXTENT: usize = 4;

pub const DEFAULT_STEM: usize = 16;
pub const DEFAULT_BLOCKS: [InceptionSpec; 4] = [
    InceptionSpec::new(8, 8, 16, 4, 8, 8),
    InceptionSpec::new(16, 16, 32, 8, 16, 16),
    InceptionSpec::new(16, 16, 32, 8, 16, 16),
    InceptionSpec::new(32, 32, 64, 16, 32, 32),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `[T, Hb, Wb, C]` of one input sample.
    pub input: [usize; 4],
    pub stem: usize,
    pub blocks: [InceptionSpec; 4],
    pub pool1: bool,
    pub pool2: bool,
    pub classes: usize,
}

impl NetworkConfig {
    pub fn new(input: [usize; 4], classes: usize) -> Self {
        NetworkConfig {
            input,
            stem: DEFAULT_STEM,
            blocks: DEFAULT_BLOCKS,
            pool1: true,
            pool2: true,
            classes,
        }
    }

    /// Every channel count halved (rounded up); used for cheap gradient checks.
    pub fn halved(&self) -> Self {
        let half = |v: usize| v.div_ceil(2);
        NetworkConfig {
            stem: half(self.stem),
            blocks: self.blocks.map(|b| InceptionSpec::from_array(b.to_array().map(half))),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "input extents must be >= 1, got {:?}",
                self.input
            )));
        }
        if self.stem == 0 {
            return Err(Error::InvalidArgument("stem channels must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        for b in &self.blocks {
            b.validate()?;
        }
        self.pool_geometries()?;
        Ok(())
    }

    fn pool_geometries(&self) -> Result<(PoolGeometry, PoolGeometry)> {
        let ext = [self.input[0], self.input[1], self.input[2]];
        let p1 = if self.pool1 {
            PoolGeometry::auto_skip([1, 2, 2], ext, MIN_POOL_EXTENT)
        } else {
            PoolGeometry::valid([1; 3], [1; 3])
        };
        let ext = p1.out_extents(ext)?;
        let p2 = if self.pool2 {
            PoolGeometry::auto_skip([2, 2, 2], ext, MIN_POOL_EXTENT)
        } else {
            PoolGeometry::valid([1; 3], [1; 3])
        };
        p2.out_extents(ext)?;
        Ok((p1, p2))
    }

    pub fn block_inputs(&self) -> [usize; 4] {
        let b = &self.blocks;
        [
            self.stem,
            b[0].out_channels(),
            b[1].out_channels(),
            b[2].out_channels(),
        ]
    }

    pub fn features(&self) -> usize {
        self.blocks[3].out_channels()
    }

    /// Name, shape and fan-in of every parameter tensor in storage order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut specs = Vec::new();
        let c = self.input[3];
        specs.push(("stem.w".to_string(), vec![3, 3, 3, c, self.stem], 27 * c));
        specs.push(("stem.b".to_string(), vec![self.stem], 27 * c));
        for (i, (spec, cin)) in self.blocks.iter().zip(self.block_inputs()).enumerate() {
            for (name, shape) in spec.weight_shapes(cin) {
                let fan_in = shape[0] * shape[1] * shape[2] * shape[3];
                specs.push((format!("inc{}.{name}.w", i + 1), shape.to_vec(), fan_in));
                specs.push((format!("inc{}.{name}.b", i + 1), vec![shape[4]], fan_in));
            }
        }
        let f = self.features();
        specs.push(("head.w".to_string(), vec![f, self.classes], f));
        specs.push(("head.b".to_string(), vec![self.classes], f));
        specs
    }
}

const STEM: usize = 0;
const BLOCK0: usize = 2;
const HEAD: usize = BLOCK0 + 4 * PARAMS_PER_BLOCK;

/// Named weights and biases matching a [`NetworkConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetworkConfig,
    pub seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// He-normal conv weights (`std = √(2/fan_in)`), `√(1/F)` head weights, zero biases.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, fan_in) in config.param_specs() {
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                let gain = if name.starts_with("head") { 1.0 } else { 2.0 };
                init_normal(&shape, (gain / fan_in as f64).sqrt(), &mut rng)
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams {
            config: config.clone(),
            seed,
            names,
            tensors,
        })
    }

    /// Assemble from named tensors, checking them against the config.
    pub fn from_named(config: NetworkConfig, seed: u64, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != named.len() {
            return Err(Error::InvalidArgument(format!(
                "config needs {} tensors, got {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((sname, shape, _), (name, t)) in specs.into_iter().zip(named) {
            if sname != name {
                return Err(Error::InvalidArgument(format!(
                    "expected tensor {sname:?}, found {name:?}"
                )));
            }
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(&shape, t.shape()));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams {
            config,
            seed,
            names,
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Replace the classifier head with a freshly initialized one for `classes` outputs.
    pub fn with_new_head(&self, classes: usize, seed: u64) -> Result<Self> {
        let config = NetworkConfig {
            classes,
            ..self.config.clone()
        };
        config.validate()?;
        let f = config.features();
        let mut rng = Rng::derive(seed, 0x4845_4144);
        let mut out = self.clone();
        out.config = config;
        out.tensors[HEAD] = init_normal(&[f, classes], (1.0 / f as f64).sqrt(), &mut rng);
        out.tensors[HEAD + 1] = Tensor::zeros(&[classes]);
        Ok(out)
    }
}

fn init_normal(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| std * rng.gaussian()).collect()).expect("shape")
}

struct Trace {
    input: Tensor,
    stem: Tensor,
    pool1: Option<(Vec<usize>, Vec<usize>)>,
    blocks: Vec<InceptionCache>,
    pool2: Option<(Vec<usize>, Vec<usize>)>,
    last_shape: Vec<usize>,
    features: Tensor,
}

fn check_input(params: &ModelParams, x: &Tensor) -> Result<()> {
    let [_, t, h, w, c] = dims5(x)?;
    if [t, h, w, c] != params.config.input {
        return Err(Error::shape(&params.config.input, &[t, h, w, c]));
    }
    Ok(())
}

fn pool_step(x: Tensor, g: &PoolGeometry) -> Result<(Tensor, Option<(Vec<usize>, Vec<usize>)>)> {
    if g.is_identity() {
        return Ok((x, None));
    }
    let (y, arg) = maxpool3d_forward(&x, g)?;
    Ok((y, Some((arg, x.shape().to_vec()))))
}

fn forward_trace(params: &ModelParams, x: &Tensor) -> Result<(Tensor, Trace)> {
    check_input(params, x)?;
    let cfg = &params.config;
    let p = &params.tensors;
    let (g1, g2) = cfg.pool_geometries()?;

    let mut stem = conv3d_forward(x, &p[STEM], &p[STEM + 1], [1; 3], same_pad([3; 3]))?;
    relu_inplace(&mut stem);
    let (mut h, pool1) = pool_step(stem.clone(), &g1)?;

    let mut blocks = Vec::with_capacity(4);
    let mut pool2 = None;
    for (i, spec) in cfg.blocks.iter().enumerate() {
        if i == 2 {
            let (y, arg) = pool_step(h, &g2)?;
            h = y;
            pool2 = arg;
        }
        let off = BLOCK0 + i * PARAMS_PER_BLOCK;
        let (y, cache) = inception3d_forward(&h, spec, &p[off..off + PARAMS_PER_BLOCK])?;
        blocks.push(cache);
        h = y;
    }

    let [n, t, hh, ww, f] = dims5(&h)?;
    let positions = (t * hh * ww) as f64;
    let mut features = vec![0.0; n * f];
    for (b, sample) in h.data().chunks_exact(t * hh * ww * f).enumerate() {
        let dst = &mut features[b * f..(b + 1) * f];
        for row in sample.chunks_exact(f) {
            for (d, v) in dst.iter_mut().zip(row) {
                *d += v;
            }
        }
        dst.iter_mut().for_each(|v| *v /= positions);
    }
    let features = Tensor::from_vec(&[n, f], features)?;

    let k = cfg.classes;
    let mut logits = Vec::with_capacity(n * k);
    for _ in 0..n {
        logits.extend_from_slice(p[HEAD + 1].data());
    }
    gemm(n, f, k, 1.0, features.data(), Op::N, p[HEAD].data(), Op::N, 1.0, &mut logits);

    Ok((
        Tensor::from_vec(&[n, k], logits)?,
        Trace {
            input: x.clone(),
            stem,
            pool1,
            blocks,
            pool2,
            last_shape: h.shape().to_vec(),
            features,
        },
    ))
}

/// Logits `N×K` for a batch `N×T×Hb×Wb×C`.
pub fn network_forward(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    forward_trace(params, x).map(|(logits, _)| logits)
}

pub struct Gradients {
    pub loss: f64,
    pub logits: Tensor,
    pub grads: Vec<Tensor>,
}

/// Mean cross-entropy, logits and exact gradients for every parameter tensor.
pub fn network_backward(params: &ModelParams, x: &Tensor, labels: &[usize]) -> Result<Gradients> {
    let (logits, trace) = forward_trace(params, x)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
    let cfg = &params.config;
    let p = &params.tensors;
    let n = labels.len();
    let (f, k) = (cfg.features(), cfg.classes);
    let mut grads: Vec<Option<Tensor>> = vec![None; p.len()];

    let mut dhead = vec![0.0; f * k];
    gemm(f, n, k, 1.0, trace.features.data(), Op::T, dlogits.data(), Op::N, 0.0, &mut dhead);
    let mut dhb = vec![0.0; k];
    for row in dlogits.data().chunks_exact(k) {
        for (d, v) in dhb.iter_mut().zip(row) {
            *d += v;
        }
    }
    let mut dfeat = vec![0.0; n * f];
    gemm(n, k, f, 1.0, dlogits.data(), Op::N, p[HEAD].data(), Op::T, 0.0, &mut dfeat);
    grads[HEAD] = Some(Tensor::from_vec(&[f, k], dhead)?);
    grads[HEAD + 1] = Some(Tensor::from_vec(&[k], dhb)?);

    // global average pool
    let positions: usize = trace.last_shape[1..4].iter().product();
    let mut dh = Vec::with_capacity(n * positions * f);
    for b in 0..n {
        let g: Vec<f64> = dfeat[b * f..(b + 1) * f].iter().map(|v| v / positions as f64).collect();
        for _ in 0..positions {
            dh.extend_from_slice(&g);
        }
    }
    let mut dh = Tensor::from_vec(&trace.last_shape, dh)?;

    for i in (0..4).rev() {
        let off = BLOCK0 + i * PARAMS_PER_BLOCK;
        let (dx, g) = inception3d_backward(
            &trace.blocks[i],
            &cfg.blocks[i],
            &p[off..off + PARAMS_PER_BLOCK],
            &dh,
        )?;
        for (j, t) in g.into_iter().enumerate() {
            grads[off + j] = Some(t);
        }
        dh = dx;
        if i == 2 {
            if let Some((arg, shape)) = &trace.pool2 {
                dh = maxpool3d_backward(&dh, arg, shape)?;
            }
        }
    }
    if let Some((arg, shape)) = &trace.pool1 {
        dh = maxpool3d_backward(&dh, arg, shape)?;
    }
    relu_backward_inplace(&mut dh, &trace.stem);
    let gs = conv3d_backward(&trace.input, &p[STEM], &dh, [1; 3], same_pad([3; 3]), false)?;
    grads[STEM] = Some(gs.dw);
    grads[STEM + 1] = Some(gs.db);

    Ok(Gradients {
        loss,
        logits,
        grads: grads.into_iter().map(|g| g.expect("every gradient filled")).collect(),
    })
}

/// Mean cross-entropy only.
pub fn network_loss(params: &ModelParams, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = network_forward(params, x)?;
    softmax_cross_entropy(&logits, labels).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gaussian()).collect()).unwrap()
    }

    #[test]
    fn logits_shape() {
        let cfg = NetworkConfig::new([8, 2, 2, 12], 10);
        let params = ModelParams::init(&cfg, 1).unwrap();
        let x = random_batch(&[2, 8, 2, 2, 12], 2);
        let logits = network_forward(&params, &x).unwrap();
        assert_eq!(logits.shape(), &[2, 10]);
    }

    #[test]
    fn rejects_wrong_input_geometry() {
        let cfg = NetworkConfig::new([8, 2, 2, 12], 10);
        let params = ModelParams::init(&cfg, 1).unwrap();
        assert!(network_forward(&params, &Tensor::zeros(&[1, 8, 2, 2, 6])).is_err());
        assert!(NetworkConfig::new([8, 2, 2, 12], 1).validate().is_err());
    }

    #[test]
    fn batch_permutation_permutes_logits() {
        let cfg = NetworkConfig::new([4, 4, 4, 6], 3).halved();
        let params = ModelParams::init(&cfg, 3).unwrap();
        let x = random_batch(&[3, 4, 4, 4, 6], 4);
        let logits = network_forward(&params, &x).unwrap();
        let sample = |i: usize| {
            let per = x.len() / 3;
            Tensor::from_vec(&[4, 4, 4, 6], x.data()[i * per..(i + 1) * per].to_vec()).unwrap()
        };
        let (a, b, c) = (sample(0), sample(1), sample(2));
        let permuted = Tensor::stack(&[&c, &a, &b]).unwrap();
        let pl = network_forward(&params, &permuted).unwrap();
        for (dst, src) in [(0, 2), (1, 0), (2, 1)] {
            for j in 0..3 {
                assert!((pl.get(&[dst, j]) - logits.get(&[src, j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_sample_has_single_sample_gradient() {
        let cfg = NetworkConfig::new([4, 2, 2, 6], 3).halved();
        let params = ModelParams::init(&cfg, 5).unwrap();
        let x = random_batch(&[1, 4, 2, 2, 6], 6);
        let single = network_backward(&params, &x, &[1]).unwrap();
        let x2 = Tensor::stack(&[
            &x.clone().reshape(&[4, 2, 2, 6]).unwrap(),
            &x.clone().reshape(&[4, 2, 2, 6]).unwrap(),
        ])
        .unwrap();
        let double = network_backward(&params, &x2, &[1, 1]).unwrap();
        assert!((single.loss - double.loss).abs() < 1e-12);
        for (a, b) in single.grads.iter().zip(&double.grads) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_input_zero_bias_kills_conv_weight_gradients() {
        let cfg = NetworkConfig::new([4, 2, 2, 6], 3).halved();
        let params = ModelParams::init(&cfg, 7).unwrap();
        let x = Tensor::zeros(&[2, 4, 2, 2, 6]);
        let g = network_backward(&params, &x, &[0, 2]).unwrap();
        for (name, grad) in params.names().iter().zip(&g.grads) {
            if name.ends_with(".w") && !name.starts_with("head") {
                assert!(grad.data().iter().all(|&v| v == 0.0), "{name} has nonzero gradient");
            }
        }
        // the loss still depends on the head bias
        assert!(g.grads[HEAD + 1].data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn scaling_stem_keeps_argmax_with_positive_head() {
        // With zero biases the network is positively homogeneous in the stem weights,
        // so doubling them scales the features and, with a nonnegative head, keeps the argmax.
        let cfg = NetworkConfig::new([4, 4, 4, 6], 4).halved();
        let mut params = ModelParams::init(&cfg, 8).unwrap();
        for v in params.tensors_mut()[HEAD].data_mut() {
            *v = v.abs();
        }
        let x = random_batch(&[3, 4, 4, 4, 6], 9);
        let before = network_forward(&params, &x).unwrap();
        params.tensors_mut()[STEM].scale(2.0);
        let after = network_forward(&params, &x).unwrap();
        assert_eq!(super::super::loss::argmax_rows(&before), super::super::loss::argmax_rows(&after));
        for (a, b) in after.data().iter().zip(before.data()) {
            assert!((a - 2.0 * b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn new_head_keeps_shared_layers() {
        let cfg = NetworkConfig::new([4, 2, 2, 6], 10).halved();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let moved = params.with_new_head(2, 99).unwrap();
        assert_eq!(moved.config.classes, 2);
        assert_eq!(&moved.tensors()[..HEAD], &params.tensors()[..HEAD]);
        assert_eq!(moved.tensors()[HEAD].shape(), &[cfg.features(), 2]);
    }
}
