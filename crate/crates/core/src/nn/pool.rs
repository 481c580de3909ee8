//! 3D max pooling; padded positions never win the maximum.

use super::conv::{dims5, out_extent};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl PoolGeometry {
    pub fn valid(window: [usize; 3], stride: [usize; 3]) -> Self {
        PoolGeometry {
            window,
            stride,
            pad: [0; 3],
        }
    }

    /// Stride-1 pooling that preserves extents (odd windows).
    pub fn same(window: [usize; 3]) -> Self {
        PoolGeometry {
            window,
            stride: [1; 3],
            pad: window.map(|w| w / 2),
        }
    }

    /// Non-overlapping pooling with each axis skipped (window 1) when its extent is below `min_extent`.
    pub fn auto_skip(window: [usize; 3], extents: [usize; 3], min_extent: usize) -> Self {
        let mut w = window;
        for a in 0..3 {
            if extents[a] < min_extent {
                w[a] = 1;
            }
        }
        PoolGeometry::valid(w, w)
    }

    pub fn is_identity(&self) -> bool {
        self.window == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }

    pub fn out_extents(&self, extents: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            if self.pad[a] >= self.window[a] {
                return Err(Error::Geometry("pool padding must be smaller than the window".into()));
            }
            out[a] = out_extent(extents[a], self.window[a], self.stride[a], self.pad[a])?;
        }
        Ok(out)
    }
}

/// Pooled tensor plus, per output element, the flat input index of its maximum.
pub fn maxpool3d_forward(x: &Tensor, g: &PoolGeometry) -> Result<(Tensor, Vec<usize>)> {
    let [n, t, h, w, c] = dims5(x)?;
    let [ot, oh, ow] = g.out_extents([t, h, w])?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * ot * oh * ow * c);
    let mut arg = Vec::with_capacity(out.capacity());
    let range = |o: usize, a: usize, ext: usize| {
        let start = (o * g.stride[a]) as isize - g.pad[a] as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + g.window[a] as isize) as usize).min(ext);
        lo..hi
    };
    for b in 0..n {
        for i in 0..ot {
            for j in 0..oh {
                for k in 0..ow {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for ti in range(i, 0, t) {
                            for hi in range(j, 1, h) {
                                for wi in range(k, 2, w) {
                                    let idx = (((b * t + ti) * h + hi) * w + wi) * c + ch;
                                    // strict > keeps the first maximum on ties
                                    if xd[idx] > best || best_idx == usize::MAX {
                                        best = xd[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        arg.push(best_idx);
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, ot, oh, ow, c], out)?, arg))
}

/// Route each output gradient to the input position that produced the maximum.
pub fn maxpool3d_backward(dy: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if dy.len() != argmax.len() {
        return Err(Error::shape(&[argmax.len()], &[dy.len()]));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&g, &idx) in dy.data().iter().zip(argmax) {
        d[idx] += g;
    }
    Ok(dx)
}
