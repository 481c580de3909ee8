//! ISTA over DCT coefficients: minimize `½‖y − ΦΨθ‖² + λ‖θ‖₁`.

use serde::{Deserialize, Serialize};

use super::dct::synthesis_matrix;
use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};
use crate::rng::Rng;
use crate::sensing::SensingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub iterations: usize,
    /// Fixed step; `None` uses `safety / L` with `L` from power iteration.
    pub step: Option<f64>,
    pub lambda: f64,
    /// Keep only the `K` largest coefficients instead of soft thresholding.
    pub sparsity: Option<usize>,
    pub power_iterations: usize,
    pub safety: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            iterations: 200,
            step: None,
            lambda: 0.01,
            sparsity: None,
            power_iterations: 20,
            safety: 0.95,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("ISTA needs at least one iteration".into()));
        }
        if let Some(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("step must be positive, got {s}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if self.sparsity == Some(0) {
            return Err(Error::InvalidArgument("target sparsity must be at least 1".into()));
        }
        if self.step.is_none() && (self.power_iterations == 0 || !(self.safety > 0.0 && self.safety <= 1.0)) {
            return Err(Error::InvalidArgument(
                "automatic step needs power_iterations ≥ 1 and safety in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Blocks recovered by one solver run.
#[derive(Debug, Clone)]
pub struct Solution {
    /// `count×N` pixel-domain blocks.
    pub blocks: Vec<f64>,
    /// Per-block objective before the first and after every iteration, stored
    /// iteration-major (`(iterations + 1)×count`). Empty for the identity shortcut.
    pub objective: Vec<f64>,
    pub count: usize,
}

impl Solution {
    /// Objective trace of one block.
    pub fn objective_of(&self, block: usize) -> Vec<f64> {
        self.objective.iter().skip(block).step_by(self.count.max(1)).copied().collect()
    }

    /// Objective summed over blocks, one value per iteration.
    pub fn total_objective(&self) -> Vec<f64> {
        self.objective.chunks(self.count.max(1)).map(|c| c.iter().sum()).collect()
    }
}

/// Solver bound to one sensing matrix; `A = ΦΨ` and the step are computed once.
pub struct Reconstructor {
    cfg: ReconConfig,
    identity: bool,
    m: usize,
    n: usize,
    a: Vec<f64>,
    psi: Vec<f64>,
    step: f64,
}

impl Reconstructor {
    pub fn new(phi: &SensingMatrix, cfg: &ReconConfig) -> Result<Self> {
        cfg.validate()?;
        let (m, n) = (phi.rows(), phi.cols());
        if phi.is_identity() {
            return Ok(Reconstructor {
                cfg: *cfg,
                identity: true,
                m,
                n,
                a: Vec::new(),
                psi: Vec::new(),
                step: 1.0,
            });
        }
        let psi = synthesis_matrix(phi.block());
        let mut a = vec![0.0; m * n];
        gemm(m, n, n, 1.0, phi.entries(), Op::N, &psi, Op::N, 0.0, &mut a);
        let step = match cfg.step {
            Some(s) => s,
            None => {
                let l = spectral_norm_sq(&a, m, n, cfg.power_iterations);
                if !(l > 0.0 && l.is_finite()) {
                    return Err(Error::NonFinite(format!("operator norm estimate {l}")));
                }
                cfg.safety / l
            }
        };
        Ok(Reconstructor {
            cfg: *cfg,
            identity: false,
            m,
            n,
            a,
            psi,
            step,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Recover `count` blocks from `count×M` measurements.
    pub fn reconstruct(&self, y: &[f64], count: usize) -> Result<Solution> {
        let (m, n) = (self.m, self.n);
        if y.len() != count * m {
            return Err(Error::shape(&[count, m], &[y.len()]));
        }
        if self.identity {
            return Ok(Solution {
                blocks: y.to_vec(),
                objective: Vec::new(),
                count,
            });
        }
        let lambda = self.cfg.lambda;
        let mut theta = vec![0.0; count * n];
        let mut r = vec![0.0; count * m];
        let mut g = vec![0.0; count * n];
        let mut objective = Vec::with_capacity((self.cfg.iterations + 1) * count);
        for it in 0..=self.cfg.iterations {
            r.copy_from_slice(y);
            gemm(count, n, m, -1.0, &theta, Op::N, &self.a, Op::T, 1.0, &mut r);
            for (rb, tb) in r.chunks_exact(m).zip(theta.chunks_exact(n)) {
                let f = 0.5 * rb.iter().map(|v| v * v).sum::<f64>() + lambda * tb.iter().map(|v| v.abs()).sum::<f64>();
                if !f.is_finite() {
                    return Err(Error::NonFinite(format!("ISTA objective at iteration {it}")));
                }
                objective.push(f);
            }
            if it == self.cfg.iterations {
                break;
            }
            gemm(count, m, n, 1.0, &r, Op::N, &self.a, Op::N, 0.0, &mut g);
            for (t, gi) in theta.iter_mut().zip(&g) {
                *t += self.step * gi;
            }
            match self.cfg.sparsity {
                None => {
                    let thr = self.step * lambda;
                    for t in theta.iter_mut() {
                        *t = t.signum() * (t.abs() - thr).max(0.0);
                    }
                }
                Some(k) => {
                    for row in theta.chunks_exact_mut(n) {
                        keep_largest(row, k);
                    }
                }
            }
        }
        let mut blocks = vec![0.0; count * n];
        gemm(count, n, n, 1.0, &theta, Op::N, &self.psi, Op::T, 0.0, &mut blocks);
        Ok(Solution {
            blocks,
            objective,
            count,
        })
    }
}

fn keep_largest(row: &mut [f64], k: usize) {
    if k >= row.len() {
        return;
    }
    // stable sort: on ties the lower index survives
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].abs().total_cmp(&row[a].abs()));
    for &i in &order[k..] {
        row[i] = 0.0;
    }
}

/// Rayleigh-quotient estimate of the largest eigenvalue of `AᵀA` (never above the truth).
fn spectral_norm_sq(a: &[f64], m: usize, n: usize, iterations: usize) -> f64 {
    let mut rng = Rng::new(0x5EED_1574);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
    let mut av = vec![0.0; m];
    let mut w = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        gemm(m, n, 1, 1.0, a, Op::N, &v, Op::N, 0.0, &mut av);
        estimate = av.iter().map(|x| x * x).sum();
        gemm(n, m, 1, 1.0, a, Op::T, &av, Op::N, 0.0, &mut w);
        std::mem::swap(&mut v, &mut w);
    }
    estimate
}

/// Reconstruct a single block.
pub fn ista_reconstruct(y: &[f64], phi: &SensingMatrix, cfg: &ReconConfig) -> Result<Vec<f64>> {
    if y.len() != phi.rows() {
        return Err(Error::shape(&[phi.rows()], &[y.len()]));
    }
    Ok(Reconstructor::new(phi, cfg)?.reconstruct(y, 1)?.blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::recon::dct::dct2_inverse;

    pub(super) fn sparse_block(b: usize, k: usize, rng: &mut Rng) -> Vec<f64> {
        let mut c = vec![0.0; b * b];
        let mut idx: Vec<usize> = (0..b * b).collect();
        rng.shuffle(&mut idx);
        for &i in &idx[..k] {
            c[i] = if rng.coin() { 1.0 } else { -1.0 } * rng.uniform(1.0, 2.0);
        }
        dct2_inverse(&c, b).unwrap()
    }

    #[test]
    fn recovers_sparse_signal() {
        let mut rng = Rng::new(1);
        let phi = SensingMatrix::gaussian(64, 256, 7).unwrap();
        let x = sparse_block(16, 4, &mut rng);
        let y = phi.encode_block(&x).unwrap();
        // the 200-iteration default stops well short of convergence here
        let cfg = ReconConfig {
            iterations: 2000,
            ..ReconConfig::default()
        };
        let xr = ista_reconstruct(&y, &phi, &cfg).unwrap();
        let p = psnr(&xr, &x, 1.0).unwrap();
        assert!(p > 40.0, "psnr {p}");
    }

    #[test]
    fn zero_measurements_give_zero() {
        let phi = SensingMatrix::bernoulli(16, 64, 2).unwrap();
        let xr = ista_reconstruct(&[0.0; 16], &phi, &ReconConfig::default()).unwrap();
        assert!(xr.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = Rng::new(4);
        let phi = SensingMatrix::gaussian(16, 64, 3).unwrap();
        let rec = Reconstructor::new(&phi, &ReconConfig::default()).unwrap();
        let x: Vec<f64> = (0..64).map(|_| rng.uniform(0.0, 1.0)).collect();
        let z: Vec<f64> = (0..64).map(|_| rng.gaussian()).collect();
        let y = [phi.encode_block(&x).unwrap(), phi.encode_block(&z).unwrap()].concat();
        let sol = rec.reconstruct(&y, 2).unwrap();
        assert_eq!(sol.objective.len(), 2 * 201);
        for b in 0..2 {
            let trace = sol.objective_of(b);
            assert_eq!(trace.len(), 201);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
            }
        }
        let total = sol.total_objective();
        assert!((total[7] - sol.objective_of(0)[7] - sol.objective_of(1)[7]).abs() < 1e-12);
        // batching does not change a block's result
        let single = rec.reconstruct(&y[16..], 1).unwrap();
        for (a, b) in single.blocks.iter().zip(&sol.blocks[64..]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn power_estimate_is_below_truth_and_close() {
        // diag(3, 1) padded: top eigenvalue of AᵀA is 9
        let a = vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let l = spectral_norm_sq(&a, 2, 3, 50);
        assert!(l <= 9.0 + 1e-12 && l > 9.0 - 1e-9, "{l}");
    }

    #[test]
    fn hard_threshold_keeps_k() {
        let mut row = vec![0.5, -3.0, 2.0, 0.1, -2.0];
        keep_largest(&mut row, 2);
        assert_eq!(row, vec![0.0, -3.0, 2.0, 0.0, 0.0]);
        let mut rng = Rng::new(9);
        let phi = SensingMatrix::gaussian(64, 256, 7).unwrap();
        let x = sparse_block(16, 4, &mut rng);
        let cfg = ReconConfig {
            sparsity: Some(4),
            ..ReconConfig::default()
        };
        let y = phi.encode_block(&x).unwrap();
        let sol = Reconstructor::new(&phi, &cfg).unwrap().reconstruct(&y, 1).unwrap();
        let coeffs = crate::recon::dct::dct2_forward(&sol.blocks, 16).unwrap();
        assert!(coeffs.iter().filter(|c| c.abs() > 1e-9).count() <= 4);
    }

    #[test]
    fn identity_is_exact() {
        let phi = SensingMatrix::identity(4).unwrap();
        let y: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        assert_eq!(ista_reconstruct(&y, &phi, &ReconConfig::default()).unwrap(), y);
    }

    #[test]
    fn bad_inputs() {
        let phi = SensingMatrix::gaussian(16, 64, 1).unwrap();
        assert!(ista_reconstruct(&[0.0; 15], &phi, &ReconConfig::default()).is_err());
        let bad = ReconConfig {
            iterations: 0,
            ..ReconConfig::default()
        };
        assert!(Reconstructor::new(&phi, &bad).is_err());
        let bad = ReconConfig {
            lambda: -1.0,
            ..ReconConfig::default()
        };
        assert!(bad.validate().is_err());
        let y = vec![f64::NAN; 16];
        assert!(matches!(
            Reconstructor::new(&phi, &ReconConfig::default()).unwrap().reconstruct(&y, 1),
            Err(Error::NonFinite(_))
        ));
    }
}
