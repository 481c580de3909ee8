//! Inflated Inception block.
//!
//! Four ReLU branches, concatenated along channels in this order:
//!
//! 1. `1×1×1 → a`
//! 2. `1×1×1 → b1`, `3×3×3 → b2`
//! 3. `1×1×1 → c1`, `3×3×3 → c2`
//! 4. `3×3×3` same max-pool, `1×1×1 → d`
//!
//! Temporal and spatial extents are preserved.

use serde::{Deserialize, Serialize};

use super::conv::{conv3d_backward, conv3d_forward, relu_backward_inplace, relu_inplace, same_pad};
use super::pool::{maxpool3d_backward, maxpool3d_forward, PoolGeometry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Branch channel table `(a, b1, b2, c1, c2, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionSpec {
    pub a: usize,
    pub b1: usize,
    pub b2: usize,
    pub c1: usize,
    pub c2: usize,
    pub d: usize,
}

/// Parameter tensors per block, in storage order.
pub const PARAMS_PER_BLOCK: usize = 12;

const POINT: [usize; 3] = [1, 1, 1];
const CUBE: [usize; 3] = [3, 3, 3];

impl InceptionSpec {
    pub const fn new(a: usize, b1: usize, b2: usize, c1: usize, c2: usize, d: usize) -> Self {
        InceptionSpec { a, b1, b2, c1, c2, d }
    }

    pub fn from_array(v: [usize; 6]) -> Self {
        InceptionSpec::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(self) -> [usize; 6] {
        [self.a, self.b1, self.b2, self.c1, self.c2, self.d]
    }

    pub fn out_channels(&self) -> usize {
        self.a + self.b2 + self.c2 + self.d
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "inception channel counts must be >= 1, got {:?}",
                self.to_array()
            )));
        }
        Ok(())
    }

    /// `(name suffix, weight shape, fan-in)` for each weight, followed by its bias in storage.
    pub fn weight_shapes(&self, cin: usize) -> [(&'static str, [usize; 5]); 6] {
        let s = self;
        [
            ("a", [1, 1, 1, cin, s.a]),
            ("b1", [1, 1, 1, cin, s.b1]),
            ("b2", [3, 3, 3, s.b1, s.b2]),
            ("c1", [1, 1, 1, cin, s.c1]),
            ("c2", [3, 3, 3, s.c1, s.c2]),
            ("d", [1, 1, 1, cin, s.d]),
        ]
    }
}

/// Activations kept for the backward pass.
pub struct InceptionCache {
    input: Tensor,
    a: Tensor,
    b1: Tensor,
    b2: Tensor,
    c1: Tensor,
    c2: Tensor,
    pooled: Tensor,
    pool_arg: Vec<usize>,
    d: Tensor,
}

fn conv_relu(x: &Tensor, w: &Tensor, b: &Tensor, kernel: [usize; 3]) -> Result<Tensor> {
    let mut y = conv3d_forward(x, w, b, [1; 3], same_pad(kernel))?;
    relu_inplace(&mut y);
    Ok(y)
}

fn check_params(spec: &InceptionSpec, cin: usize, params: &[Tensor]) -> Result<()> {
    if params.len() != PARAMS_PER_BLOCK {
        return Err(Error::InvalidArgument(format!(
            "inception block needs {PARAMS_PER_BLOCK} tensors, got {}",
            params.len()
        )));
    }
    for (i, (_, shape)) in spec.weight_shapes(cin).iter().enumerate() {
        if params[2 * i].shape() != shape {
            return Err(Error::shape(shape, params[2 * i].shape()));
        }
        if params[2 * i + 1].shape() != [shape[4]] {
            return Err(Error::shape(&[shape[4]], params[2 * i + 1].shape()));
        }
    }
    Ok(())
}

/// Concatenate channels-last tensors along the last axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let lead = &parts[0].shape()[..parts[0].rank() - 1];
    let rows: usize = lead.iter().product();
    let mut total = 0;
    for p in parts {
        if &p.shape()[..p.rank() - 1] != lead {
            return Err(Error::shape(lead, &p.shape()[..p.rank() - 1]));
        }
        total += p.shape()[p.rank() - 1];
    }
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            let c = p.shape()[p.rank() - 1];
            data.extend_from_slice(&p.data()[r * c..(r + 1) * c]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::from_vec(&shape, data)
}

/// Inverse of [`concat_channels`].
pub fn split_channels(x: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let c = x.shape()[x.rank() - 1];
    if widths.iter().sum::<usize>() != c {
        return Err(Error::shape(&[c], &[widths.iter().sum()]));
    }
    let lead = &x.shape()[..x.rank() - 1];
    let rows: usize = lead.iter().product();
    let mut out: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
    for r in 0..rows {
        let mut off = r * c;
        for (o, &w) in out.iter_mut().zip(widths) {
            o.extend_from_slice(&x.data()[off..off + w]);
            off += w;
        }
    }
    out.into_iter()
        .zip(widths)
        .map(|(d, &w)| {
            let mut shape = lead.to_vec();
            shape.push(w);
            Tensor::from_vec(&shape, d)
        })
        .collect()
}

pub fn inception3d_forward(
    x: &Tensor,
    spec: &InceptionSpec,
    params: &[Tensor],
) -> Result<(Tensor, InceptionCache)> {
    let cin = *x.shape().last().unwrap();
    check_params(spec, cin, params)?;
    let p = params;
    let a = conv_relu(x, &p[0], &p[1], POINT)?;
    let b1 = conv_relu(x, &p[2], &p[3], POINT)?;
    let b2 = conv_relu(&b1, &p[4], &p[5], CUBE)?;
    let c1 = conv_relu(x, &p[6], &p[7], POINT)?;
    let c2 = conv_relu(&c1, &p[8], &p[9], CUBE)?;
    let (pooled, pool_arg) = maxpool3d_forward(x, &PoolGeometry::same(CUBE))?;
    let d = conv_relu(&pooled, &p[10], &p[11], POINT)?;
    let out = concat_channels(&[&a, &b2, &c2, &d])?;
    Ok((
        out,
        InceptionCache {
            input: x.clone(),
            a,
            b1,
            b2,
            c1,
            c2,
            pooled,
            pool_arg,
            d,
        },
    ))
}

/// Returns the input gradient and the twelve parameter gradients in storage order.
pub fn inception3d_backward(
    cache: &InceptionCache,
    spec: &InceptionSpec,
    params: &[Tensor],
    dy: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    let p = params;
    let x = &cache.input;
    let mut parts = split_channels(dy, &[spec.a, spec.b2, spec.c2, spec.d])?.into_iter();
    let (mut da, mut db2, mut dc2, mut dd) = (
        parts.next().unwrap(),
        parts.next().unwrap(),
        parts.next().unwrap(),
        parts.next().unwrap(),
    );
    let pad3 = same_pad(CUBE);
    let mut grads: Vec<Tensor> = Vec::with_capacity(PARAMS_PER_BLOCK);

    relu_backward_inplace(&mut da, &cache.a);
    let ga = conv3d_backward(x, &p[0], &da, [1; 3], [0; 3], true)?;

    relu_backward_inplace(&mut db2, &cache.b2);
    let gb2 = conv3d_backward(&cache.b1, &p[4], &db2, [1; 3], pad3, true)?;
    let mut db1 = gb2.dx.clone().unwrap();
    relu_backward_inplace(&mut db1, &cache.b1);
    let gb1 = conv3d_backward(x, &p[2], &db1, [1; 3], [0; 3], true)?;

    relu_backward_inplace(&mut dc2, &cache.c2);
    let gc2 = conv3d_backward(&cache.c1, &p[8], &dc2, [1; 3], pad3, true)?;
    let mut dc1 = gc2.dx.clone().unwrap();
    relu_backward_inplace(&mut dc1, &cache.c1);
    let gc1 = conv3d_backward(x, &p[6], &dc1, [1; 3], [0; 3], true)?;

    relu_backward_inplace(&mut dd, &cache.d);
    let gd = conv3d_backward(&cache.pooled, &p[10], &dd, [1; 3], [0; 3], true)?;
    let dpool = maxpool3d_backward(gd.dx.as_ref().unwrap(), &cache.pool_arg, x.shape())?;

    let mut dx = ga.dx.clone().unwrap();
    dx.axpy(1.0, gb1.dx.as_ref().unwrap())?;
    dx.axpy(1.0, gc1.dx.as_ref().unwrap())?;
    dx.axpy(1.0, &dpool)?;

    for g in [ga, gb1, gb2, gc1, gc2, gd] {
        grads.push(g.dw);
        grads.push(g.db);
    }
    Ok((dx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn params(spec: &InceptionSpec, cin: usize, rng: &mut Rng, zero_bias: bool) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (_, shape) in spec.weight_shapes(cin) {
            let n: usize = shape.iter().product();
            out.push(Tensor::from_vec(&shape, (0..n).map(|_| 0.3 * rng.gaussian()).collect()).unwrap());
            let bias = (0..shape[4])
                .map(|_| if zero_bias { 0.0 } else { 0.1 * rng.gaussian() })
                .collect();
            out.push(Tensor::from_vec(&[shape[4]], bias).unwrap());
        }
        out
    }

    #[test]
    fn output_channels_follow_table() {
        let spec = InceptionSpec::new(2, 3, 4, 1, 2, 3);
        let mut rng = Rng::new(1);
        let p = params(&spec, 5, &mut rng, false);
        let x = Tensor::filled(&[2, 4, 3, 3, 5], 0.5);
        let (y, _) = inception3d_forward(&x, &spec, &p).unwrap();
        assert_eq!(y.shape(), &[2, 4, 3, 3, 11]);
        assert_eq!(spec.out_channels(), 11);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let spec = InceptionSpec::new(2, 3, 4, 1, 2, 3);
        let mut rng = Rng::new(2);
        let p = params(&spec, 5, &mut rng, true);
        let (y, _) = inception3d_forward(&Tensor::zeros(&[1, 2, 2, 2, 5]), &spec, &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn branches_equal_composed_primitives() {
        let spec = InceptionSpec::new(2, 3, 4, 2, 3, 2);
        let mut rng = Rng::new(3);
        let p = params(&spec, 4, &mut rng, false);
        let n = 1 * 3 * 2 * 4 * 4;
        let x = Tensor::from_vec(&[1, 3, 2, 4, 4], (0..n).map(|_| rng.gaussian()).collect()).unwrap();
        let (y, _) = inception3d_forward(&x, &spec, &p).unwrap();
        let relu = |t: Tensor| t.map(|v| v.max(0.0));
        let c1 = |x: &Tensor, i: usize| relu(conv3d_forward(x, &p[i], &p[i + 1], [1; 3], [0; 3]).unwrap());
        let c3 = |x: &Tensor, i: usize| relu(conv3d_forward(x, &p[i], &p[i + 1], [1; 3], [1; 3]).unwrap());
        let a = c1(&x, 0);
        let b = c3(&c1(&x, 2), 4);
        let c = c3(&c1(&x, 6), 8);
        let (pooled, _) = maxpool3d_forward(&x, &PoolGeometry::same([3; 3])).unwrap();
        let d = c1(&pooled, 10);
        let expect = concat_channels(&[&a, &b, &c, &d]).unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn split_inverts_concat() {
        let a = Tensor::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![5., 6.]).unwrap();
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1., 2., 5., 3., 4., 6.]);
        let parts = split_channels(&c, &[2, 1]).unwrap();
        assert_eq!(parts, vec![a, b]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let spec = InceptionSpec::new(2, 2, 3, 1, 2, 2);
        let mut rng = Rng::new(4);
        let mut p = params(&spec, 3, &mut rng, false);
        let n = 2 * 2 * 3 * 2 * 3;
        let mut x = Tensor::from_vec(&[2, 2, 3, 2, 3], (0..n).map(|_| rng.gaussian()).collect()).unwrap();
        let (y, cache) = inception3d_forward(&x, &spec, &p).unwrap();
        let probe = Tensor::from_vec(y.shape(), (0..y.len()).map(|_| rng.gaussian()).collect()).unwrap();
        let (dx, grads) = inception3d_backward(&cache, &spec, &p, &probe).unwrap();
        let loss = |x: &Tensor, p: &[Tensor]| -> f64 {
            let (y, _) = inception3d_forward(x, &spec, p).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let close = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6) < 1e-4;
        for i in 0..x.len() {
            let o = x.data()[i];
            x.data_mut()[i] = o + h;
            let lp = loss(&x, &p);
            x.data_mut()[i] = o - h;
            let lm = loss(&x, &p);
            x.data_mut()[i] = o;
            let fd = (lp - lm) / (2.0 * h);
            assert!(close(dx.data()[i], fd), "dx[{i}] {} vs {fd}", dx.data()[i]);
        }
        for t in 0..p.len() {
            for i in 0..p[t].len() {
                let o = p[t].data()[i];
                p[t].data_mut()[i] = o + h;
                let lp = loss(&x, &p);
                p[t].data_mut()[i] = o - h;
                let lm = loss(&x, &p);
                p[t].data_mut()[i] = o;
                let fd = (lp - lm) / (2.0 * h);
                assert!(close(grads[t].data()[i], fd), "param {t}[{i}] {} vs {fd}", grads[t].data()[i]);
            }
        }
    }
}
