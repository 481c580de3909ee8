//! 3D convolution over channels-last `N×T×H×W×C` tensors via GEMM.
//!
//! Weights are `kT×kH×kW×Cin×Cout`, which is already the row-major layout of
//! the `(kT·kH·kW·Cin)×Cout` im2col operand. Stride-1 convolutions instead
//! multiply every input row by all taps at once (`Cin×(taps·Cout)`) and
//! gather the products per output, which skips the im2col buffer.

use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};
use crate::tensor::Tensor;

/// Output extent `(input + 2·pad − kernel) / stride + 1`.
pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::InvalidArgument("kernel and stride must be >= 1".into()));
    }
    let padded = input + 2 * pad;
    if kernel > padded {
        return Err(Error::Geometry(format!(
            "kernel {kernel} larger than padded extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// "Same" padding for odd kernels at stride 1.
pub fn same_pad(kernel: [usize; 3]) -> [usize; 3] {
    kernel.map(|k| k / 2)
}

pub(crate) fn dims5(x: &Tensor) -> Result<[usize; 5]> {
    match x.shape() {
        &[n, t, h, w, c] => Ok([n, t, h, w, c]),
        other => Err(Error::InvalidArgument(format!(
            "expected an N×T×H×W×C tensor, got shape {other:?}"
        ))),
    }
}

struct Geometry {
    input: [usize; 5],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    out: [usize; 3],
    cout: usize,
}

impl Geometry {
    fn new(x: &Tensor, w: &Tensor, stride: [usize; 3], pad: [usize; 3]) -> Result<Self> {
        let input = dims5(x)?;
        let (kernel, cin, cout) = match w.shape() {
            &[kt, kh, kw, ci, co] => ([kt, kh, kw], ci, co),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "conv weight must be kT×kH×kW×Cin×Cout, got {other:?}"
                )))
            }
        };
        if cin != input[4] {
            return Err(Error::ShapeMismatch {
                expected: vec![input[4]],
                actual: vec![cin],
            });
        }
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = out_extent(input[a + 1], kernel[a], stride[a], pad[a])?;
        }
        Ok(Geometry {
            input,
            kernel,
            stride,
            pad,
            out,
            cout,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    fn rows(&self) -> usize {
        self.input[0] * self.out.iter().product::<usize>()
    }

    fn patch(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.input[4]
    }

    fn out_shape(&self) -> [usize; 5] {
        [self.input[0], self.out[0], self.out[1], self.out[2], self.cout]
    }

    /// Visit every (row, patch column offset, input offset) triple that lies inside the input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [n, t, h, w, c] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [ot, oh, ow] = self.out;
        let patch = self.patch();
        let mut row = 0;
        for b in 0..n {
            for i in 0..ot {
                for j in 0..oh {
                    for k in 0..ow {
                        let base = row * patch;
                        for a in 0..kt {
                            let ti = (i * self.stride[0] + a) as isize - self.pad[0] as isize;
                            if ti < 0 || ti >= t as isize {
                                continue;
                            }
                            for bb in 0..kh {
                                let hi = (j * self.stride[1] + bb) as isize - self.pad[1] as isize;
                                if hi < 0 || hi >= h as isize {
                                    continue;
                                }
                                for cc in 0..kw {
                                    let wi =
                                        (k * self.stride[2] + cc) as isize - self.pad[2] as isize;
                                    if wi < 0 || wi >= w as isize {
                                        continue;
                                    }
                                    let src =
                                        (((b * t + ti as usize) * h + hi as usize) * w + wi as usize) * c;
                                    let dst = base + ((a * kh + bb) * kw + cc) * c;
                                    f(row, dst, src);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let c = self.input[4];
        let mut col = vec![0.0; self.rows() * self.patch()];
        self.for_each_tap(|_, dst, src| col[dst..dst + c].copy_from_slice(&x[src..src + c]));
        col
    }

    fn col2im(&self, col: &[f64]) -> Vec<f64> {
        let c = self.input[4];
        let mut x = vec![0.0; self.input.iter().product()];
        self.for_each_tap(|_, dst, src| {
            for (xv, cv) in x[src..src + c].iter_mut().zip(&col[dst..dst + c]) {
                *xv += cv;
            }
        });
        x
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn input_rows(&self) -> usize {
        self.input[..4].iter().product()
    }

    fn use_taps(&self) -> bool {
        self.stride == [1, 1, 1]
    }

    /// `w` (`taps×Cin×Cout`) rearranged to `Cin×(taps·Cout)`.
    fn tap_weights(&self, w: &[f64]) -> Vec<f64> {
        let (taps, cin, cout) = (self.taps(), self.input[4], self.cout);
        let mut wa = vec![0.0; w.len()];
        for tap in 0..taps {
            for c in 0..cin {
                let src = (tap * cin + c) * cout;
                let dst = c * taps * cout + tap * cout;
                wa[dst..dst + cout].copy_from_slice(&w[src..src + cout]);
            }
        }
        wa
    }

    /// Visit every (output row, tap, input row) link.
    fn for_each_link(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (cin, patch) = (self.input[4], self.patch());
        self.for_each_tap(|row, dst, src| f(row, (dst - row * patch) / cin, src / cin));
    }
}

fn check_bias(b: &Tensor, cout: usize) -> Result<()> {
    if b.shape() != [cout] {
        return Err(Error::shape(&[cout], b.shape()));
    }
    Ok(())
}

/// Cross-correlation plus bias.
pub fn conv3d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Result<Tensor> {
    let g = Geometry::new(x, w, stride, pad)?;
    check_bias(b, g.cout)?;
    let rows = g.rows();
    let mut y = Vec::with_capacity(rows * g.cout);
    for _ in 0..rows {
        y.extend_from_slice(b.data());
    }
    if g.is_pointwise() {
        gemm(rows, g.patch(), g.cout, 1.0, x.data(), Op::N, w.data(), Op::N, 1.0, &mut y);
    } else if g.use_taps() {
        let (cin, cout, wide) = (g.input[4], g.cout, g.taps() * g.cout);
        let mut z = vec![0.0; g.input_rows() * wide];
        gemm(g.input_rows(), cin, wide, 1.0, x.data(), Op::N, &g.tap_weights(w.data()), Op::N, 0.0, &mut z);
        g.for_each_link(|row, tap, ir| {
            let zs = &z[ir * wide + tap * cout..ir * wide + (tap + 1) * cout];
            for (yv, zv) in y[row * cout..(row + 1) * cout].iter_mut().zip(zs) {
                *yv += zv;
            }
        });
    } else {
        let col = g.im2col(x.data());
        gemm(rows, g.patch(), g.cout, 1.0, &col, Op::N, w.data(), Op::N, 1.0, &mut y);
    }
    Tensor::from_vec(&g.out_shape(), y)
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Tensor,
    pub db: Tensor,
}

/// Gradients of a convolution given the upstream gradient `dy`.
pub fn conv3d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: [usize; 3],
    pad: [usize; 3],
    need_dx: bool,
) -> Result<ConvGrads> {
    let g = Geometry::new(x, w, stride, pad)?;
    if dy.shape() != g.out_shape() {
        return Err(Error::shape(&g.out_shape(), dy.shape()));
    }
    let (rows, patch, cout) = (g.rows(), g.patch(), g.cout);

    let mut db = vec![0.0; cout];
    for r in dy.data().chunks_exact(cout) {
        for (d, v) in db.iter_mut().zip(r) {
            *d += v;
        }
    }

    if !g.is_pointwise() && g.use_taps() {
        return tap_backward(&g, x, w, dy, db, need_dx);
    }

    let mut dw = vec![0.0; patch * cout];
    let pointwise = g.is_pointwise();
    let col_owned;
    let col: &[f64] = if pointwise {
        x.data()
    } else {
        col_owned = g.im2col(x.data());
        &col_owned
    };
    gemm(patch, rows, cout, 1.0, col, Op::T, dy.data(), Op::N, 0.0, &mut dw);

    let dx = if need_dx {
        let mut dcol = vec![0.0; rows * patch];
        gemm(rows, cout, patch, 1.0, dy.data(), Op::N, w.data(), Op::T, 0.0, &mut dcol);
        let data = if pointwise { dcol } else { g.col2im(&dcol) };
        Some(Tensor::from_vec(x.shape(), data)?)
    } else {
        None
    };

    Ok(ConvGrads {
        dx,
        dw: Tensor::from_vec(w.shape(), dw)?,
        db: Tensor::from_vec(&[cout], db)?,
    })
}

fn tap_backward(g: &Geometry, x: &Tensor, w: &Tensor, dy: &Tensor, db: Vec<f64>, need_dx: bool) -> Result<ConvGrads> {
    let (taps, cin, cout) = (g.taps(), g.input[4], g.cout);
    let (rows_in, wide) = (g.input_rows(), taps * cout);
    let dyd = dy.data();
    let mut expanded = vec![0.0; rows_in * wide];
    g.for_each_link(|row, tap, ir| {
        let dst = ir * wide + tap * cout;
        for (e, d) in expanded[dst..dst + cout].iter_mut().zip(&dyd[row * cout..(row + 1) * cout]) {
            *e += d;
        }
    });

    let mut dwa = vec![0.0; cin * wide];
    gemm(cin, rows_in, wide, 1.0, x.data(), Op::T, &expanded, Op::N, 0.0, &mut dwa);
    let mut dw = vec![0.0; w.len()];
    for tap in 0..taps {
        for c in 0..cin {
            let src = c * wide + tap * cout;
            let dst = (tap * cin + c) * cout;
            dw[dst..dst + cout].copy_from_slice(&dwa[src..src + cout]);
        }
    }

    let dx = if need_dx {
        let mut dx = vec![0.0; rows_in * cin];
        gemm(rows_in, wide, cin, 1.0, &expanded, Op::N, &g.tap_weights(w.data()), Op::T, 0.0, &mut dx);
        Some(Tensor::from_vec(x.shape(), dx)?)
    } else {
        None
    };
    Ok(ConvGrads {
        dx,
        dw: Tensor::from_vec(w.shape(), dw)?,
        db: Tensor::from_vec(&[cout], db)?,
    })
}

pub fn relu_inplace(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward_inplace(dy: &mut Tensor, out: &Tensor) {
    for (d, &o) in dy.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gaussian()).collect()).unwrap()
    }

    /// Direct six-deep loop; independent of the im2col path.
    fn direct(x: &Tensor, w: &Tensor, b: &Tensor, s: [usize; 3], p: [usize; 3]) -> Tensor {
        let [n, t, h, wd, ci] = dims5(x).unwrap();
        let ws = w.shape();
        let (kt, kh, kw, co) = (ws[0], ws[1], ws[2], ws[4]);
        let ot = (t + 2 * p[0] - kt) / s[0] + 1;
        let oh = (h + 2 * p[1] - kh) / s[1] + 1;
        let ow = (wd + 2 * p[2] - kw) / s[2] + 1;
        let mut y = Tensor::zeros(&[n, ot, oh, ow, co]);
        for bn in 0..n {
            for i in 0..ot {
                for j in 0..oh {
                    for k in 0..ow {
                        for o in 0..co {
                            let mut acc = b.data()[o];
                            for a in 0..kt {
                                for bb in 0..kh {
                                    for cc in 0..kw {
                                        let ti = (i * s[0] + a) as isize - p[0] as isize;
                                        let hi = (j * s[1] + bb) as isize - p[1] as isize;
                                        let wi = (k * s[2] + cc) as isize - p[2] as isize;
                                        if ti < 0 || hi < 0 || wi < 0 {
                                            continue;
                                        }
                                        let (ti, hi, wi) = (ti as usize, hi as usize, wi as usize);
                                        if ti >= t || hi >= h || wi >= wd {
                                            continue;
                                        }
                                        for c in 0..ci {
                                            acc += x.get(&[bn, ti, hi, wi, c]) * w.get(&[a, bb, cc, c, o]);
                                        }
                                    }
                                }
                            }
                            y.set(&[bn, i, j, k, o], acc);
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn pointwise_identity() {
        let mut rng = Rng::new(1);
        let x = random(&[2, 3, 2, 2, 4], &mut rng);
        let mut w = Tensor::zeros(&[1, 1, 1, 4, 4]);
        for c in 0..4 {
            w.set(&[0, 0, 0, c, c], 1.0);
        }
        let y = conv3d_forward(&x, &w, &Tensor::zeros(&[4]), [1; 3], [0; 3]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn same_padding_shape() {
        let mut rng = Rng::new(2);
        let x = random(&[1, 8, 4, 4, 3], &mut rng);
        let w = random(&[3, 3, 3, 3, 8], &mut rng);
        let y = conv3d_forward(&x, &w, &Tensor::zeros(&[8]), [1; 3], same_pad([3; 3])).unwrap();
        assert_eq!(y.shape(), &[1, 8, 4, 4, 8]);
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = Rng::new(3);
        for (stride, pad, kernel) in [
            ([1, 1, 1], [1, 1, 1], [3, 3, 3]),
            ([2, 1, 2], [0, 1, 1], [3, 2, 3]),
            ([1, 2, 1], [0, 0, 0], [1, 2, 2]),
        ] {
            let x = random(&[2, 5, 4, 6, 3], &mut rng);
            let w = random(&[kernel[0], kernel[1], kernel[2], 3, 4], &mut rng);
            let b = random(&[4], &mut rng);
            let y = conv3d_forward(&x, &w, &b, stride, pad).unwrap();
            let r = direct(&x, &w, &b, stride, pad);
            assert_eq!(y.shape(), r.shape());
            for (a, b) in y.data().iter().zip(r.data()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let stride = [1, 2, 1];
        let pad = [1, 1, 0];
        let mut x = random(&[2, 3, 4, 3, 2], &mut rng);
        let mut w = random(&[3, 3, 2, 2, 3], &mut rng);
        let mut b = random(&[3], &mut rng);
        let y = conv3d_forward(&x, &w, &b, stride, pad).unwrap();
        let probe = random(y.shape(), &mut rng);
        // loss = <probe, y>
        let loss = |x: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
            let y = conv3d_forward(x, w, b, stride, pad).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, p)| a * p).sum()
        };
        let g = conv3d_backward(&x, &w, &probe, stride, pad, true).unwrap();
        let h = 1e-5;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!((analytic - numeric).abs() / denom < 1e-6, "{analytic} vs {numeric}");
        };
        for i in 0..x.len() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let p = loss(&x, &w, &b);
            x.data_mut()[i] = orig - h;
            let m = loss(&x, &w, &b);
            x.data_mut()[i] = orig;
            check(g.dx.as_ref().unwrap().data()[i], p, m);
        }
        for i in 0..w.len() {
            let orig = w.data()[i];
            w.data_mut()[i] = orig + h;
            let p = loss(&x, &w, &b);
            w.data_mut()[i] = orig - h;
            let m = loss(&x, &w, &b);
            w.data_mut()[i] = orig;
            check(g.dw.data()[i], p, m);
        }
        for i in 0..b.len() {
            let orig = b.data()[i];
            b.data_mut()[i] = orig + h;
            let p = loss(&x, &w, &b);
            b.data_mut()[i] = orig - h;
            let m = loss(&x, &w, &b);
            b.data_mut()[i] = orig;
            check(g.db.data()[i], p, m);
        }
    }

    #[test]
    fn stride_one_path_matches_direct_and_adjoints() {
        let mut rng = Rng::new(5);
        let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
        for (pad, kernel) in [([1, 1, 1], [3, 3, 3]), ([1, 0, 1], [3, 1, 3]), ([0, 0, 0], [2, 2, 2])] {
            let cin = 6;
            let x = random(&[2, 4, 3, 4, cin], &mut rng);
            let w = random(&[kernel[0], kernel[1], kernel[2], cin, 5], &mut rng);
            let b = random(&[5], &mut rng);
            let y = conv3d_forward(&x, &w, &b, [1; 3], pad).unwrap();
            let r = direct(&x, &w, &b, [1; 3], pad);
            assert_eq!(y.shape(), r.shape());
            for (a, b) in y.data().iter().zip(r.data()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }

            // conv is linear in x and in w, so the gradients of <probe, y>
            // are the adjoints applied to probe
            let probe = random(y.shape(), &mut rng);
            let g = conv3d_backward(&x, &w, &probe, [1; 3], pad, true).unwrap();
            let zero = Tensor::zeros(&[5]);
            let v = random(x.shape(), &mut rng);
            let lhs = dot(g.dx.as_ref().unwrap(), &v);
            let rhs = dot(&probe, &conv3d_forward(&v, &w, &zero, [1; 3], pad).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0), "dx {lhs} vs {rhs}");
            let u = random(w.shape(), &mut rng);
            let lhs = dot(&g.dw, &u);
            let rhs = dot(&probe, &conv3d_forward(&x, &u, &zero, [1; 3], pad).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0), "dw {lhs} vs {rhs}");
            let sums: Vec<f64> = (0..5).map(|o| probe.data().iter().skip(o).step_by(5).sum()).collect();
            for (a, e) in g.db.data().iter().zip(&sums) {
                assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0));
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros(&[1, 2, 2, 2, 3]);
        let w = Tensor::zeros(&[1, 1, 1, 4, 2]);
        assert!(conv3d_forward(&x, &w, &Tensor::zeros(&[2]), [1; 3], [0; 3]).is_err());
        let w = Tensor::zeros(&[3, 3, 3, 3, 2]);
        assert!(conv3d_forward(&x, &w, &Tensor::zeros(&[2]), [1; 3], [0; 3]).is_err());
        assert!(conv3d_forward(&x, &w, &Tensor::zeros(&[3]), [1; 3], [1; 3]).is_err());
    }
}
