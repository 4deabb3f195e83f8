//! (mu/mu_w, lambda) CMA-ES: weighted recombination of the best half of each
//! population, cumulative step-size adaptation, and rank-one plus rank-mu
//! covariance updates. Internal constants follow the canonical published
//! defaults of the algorithm family (Hansen's tutorial parameterization).

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CmaError {
    #[error("expected {expected} candidates/costs, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("non-finite cost at candidate {0}")]
    NonFiniteCost(usize),
    #[error("dimension mismatch: state is {state}, input is {input}")]
    DimensionMismatch { state: usize, input: usize },
    #[error("population must be at least 4")]
    PopulationTooSmall,
    #[error("dimension must be at least 1")]
    ZeroDimension,
}

/// Constant strategy parameters derived from (dim, lambda).
#[derive(Clone, Debug)]
pub struct CmaParams {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaParams {
    pub fn new(dim: usize, lambda: usize) -> Result<Self, CmaError> {
        if dim == 0 {
            return Err(CmaError::ZeroDimension);
        }
        if lambda < 4 {
            return Err(CmaError::PopulationTooSmall);
        }
        let n = dim as f64;
        let mu = lambda / 2;
        // log-decreasing recombination weights, normalized to sum 1
        let mut weights: Vec<f64> = (0..mu)
            .map(|i| libm::log(mu as f64 + 0.5) - libm::log(i as f64 + 1.0))
            .collect();
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0
            + 2.0 * libm::sqrt(((mu_eff - 1.0) / (n + 1.0)).max(0.0)).max(0.0)
            + c_sigma;
        let d_sigma = {
            // standard form: 1 + 2*max(0, sqrt((mu_eff-1)/(n+1)) - 1) + c_sigma
            let inner = libm::sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0;
            let _ = d_sigma;
            1.0 + 2.0 * inner.max(0.0) + c_sigma
        };
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff);
        let c_mu = (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) * (n + 2.0) + mu_eff))
            .min(1.0 - c_1);
        let chi_n = libm::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Ok(CmaParams {
            dim,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        })
    }
}

/// Search distribution state plus evaluation bookkeeping.
#[derive(Clone, Debug)]
pub struct CmaState {
    pub params: CmaParams,
    mean: Vec<f64>,
    sigma: f64,
    cov: Vec<f64>,        // row-major dim x dim, symmetric
    eig_basis: Vec<f64>,  // B, row-major (columns are eigenvectors)
    eig_sqrt: Vec<f64>,   // d_i = sqrt(eigenvalue_i)
    path_sigma: Vec<f64>,
    path_c: Vec<f64>,
    best: Option<(Vec<f64>, f64)>,
    evals: usize,
    iteration: usize,
    repair_events: usize,
    rng: Rng,
}

/// Eigenvalues of the covariance are floored here after each update; a floor
/// hit counts as a repair event.
const EIGEN_FLOOR: f64 = 1e-12;

impl CmaState {
    /// `scales` sets the initial per-coordinate standard deviation pattern:
    /// the covariance starts as diag(scales^2) with step size `sigma`.
    pub fn new(
        mean: Vec<f64>,
        sigma: f64,
        scales: Option<&[f64]>,
        lambda: usize,
        seed: u64,
    ) -> Result<Self, CmaError> {
        let dim = mean.len();
        let params = CmaParams::new(dim, lambda)?;
        if let Some(s) = scales {
            if s.len() != dim {
                return Err(CmaError::DimensionMismatch {
                    state: dim,
                    input: s.len(),
                });
            }
        }
        let mut cov = vec![0.0; dim * dim];
        let mut eig_basis = vec![0.0; dim * dim];
        let mut eig_sqrt = vec![1.0; dim];
        for i in 0..dim {
            let s = scales.map(|s| s[i]).unwrap_or(1.0);
            cov[i * dim + i] = s * s;
            eig_basis[i * dim + i] = 1.0;
            eig_sqrt[i] = s;
        }
        Ok(CmaState {
            params,
            mean,
            sigma,
            cov,
            eig_basis,
            eig_sqrt,
            path_sigma: vec![0.0; dim],
            path_c: vec![0.0; dim],
            best: None,
            evals: 0,
            iteration: 0,
            repair_events: 0,
            rng: Rng::seed_from(seed),
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(v, c)| (v.as_slice(), *c))
    }

    pub fn evals(&self) -> usize {
        self.evals
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn repair_events(&self) -> usize {
        self.repair_events
    }

    /// Sample the next population of `lambda` candidate vectors.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        let dim = self.params.dim;
        let mut out = Vec::with_capacity(self.params.lambda);
        for _ in 0..self.params.lambda {
            let z: Vec<f64> = (0..dim).map(|_| self.rng.gauss()).collect();
            // x = m + sigma * B * (d .* z)
            let mut x = self.mean.clone();
            for (j, zj) in z.iter().enumerate() {
                let dz = self.eig_sqrt[j] * zj;
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi += self.sigma * self.eig_basis[i * dim + j] * dz;
                }
            }
            out.push(x);
        }
        out
    }

    /// Rank the evaluated candidates and update mean, paths, step size, and
    /// covariance. Ties are broken by candidate index, so telling identical
    /// costs is well-defined.
    pub fn tell(&mut self, candidates: &[Vec<f64>], costs: &[f64]) -> Result<(), CmaError> {
        let p = &self.params;
        let dim = p.dim;
        if candidates.len() != p.lambda || costs.len() != p.lambda {
            return Err(CmaError::WrongCount {
                expected: p.lambda,
                got: candidates.len().min(costs.len()),
            });
        }
        for (i, c) in costs.iter().enumerate() {
            if !c.is_finite() {
                return Err(CmaError::NonFiniteCost(i));
            }
        }
        for (i, cand) in candidates.iter().enumerate() {
            if cand.len() != dim {
                return Err(CmaError::DimensionMismatch {
                    state: dim,
                    input: candidates[i].len(),
                });
            }
        }
        self.evals += p.lambda;
        let mut order: Vec<usize> = (0..p.lambda).collect();
        order.sort_by(|a, b| costs[*a].partial_cmp(&costs[*b]).unwrap().then(a.cmp(b)));
        let best_idx = order[0];
        if self.best.as_ref().map(|(_, c)| costs[best_idx] < *c).unwrap_or(true) {
            self.best = Some((candidates[best_idx].clone(), costs[best_idx]));
        }

        // y_i = (x_i - m) / sigma for the mu best
        let old_mean = self.mean.clone();
        let mut y_w = vec![0.0; dim];
        let mut selected_y: Vec<Vec<f64>> = Vec::with_capacity(p.mu);
        for (rank, &idx) in order.iter().take(p.mu).enumerate() {
            let y: Vec<f64> = (0..dim)
                .map(|i| (candidates[idx][i] - old_mean[i]) / self.sigma)
                .collect();
            for (acc, yi) in y_w.iter_mut().zip(&y) {
                *acc += p.weights[rank] * yi;
            }
            selected_y.push(y);
        }
        for (i, m) in self.mean.iter_mut().enumerate() {
            *m = old_mean[i] + self.sigma * y_w[i];
        }

        // C^{-1/2} y_w = B diag(1/d) B^T y_w
        let mut bt_y = vec![0.0; dim];
        for (j, out) in bt_y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, yi) in y_w.iter().enumerate() {
                acc += self.eig_basis[i * dim + j] * yi;
            }
            *out = acc / self.eig_sqrt[j];
        }
        let mut c_inv_sqrt_yw = vec![0.0; dim];
        for (i, out) in c_inv_sqrt_yw.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, b) in bt_y.iter().enumerate() {
                acc += self.eig_basis[i * dim + j] * b;
            }
            *out = acc;
        }

        let cs = p.c_sigma;
        let path_scale = libm::sqrt(cs * (2.0 - cs) * p.mu_eff);
        for (ps, c) in self.path_sigma.iter_mut().zip(&c_inv_sqrt_yw) {
            *ps = (1.0 - cs) * *ps + path_scale * c;
        }
        let ps_norm = libm::sqrt(self.path_sigma.iter().map(|v| v * v).sum());
        self.sigma *= libm::exp((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0));

        self.iteration += 1;
        let decay = 1.0 - libm::pow(1.0 - cs, 2.0 * self.iteration as f64);
        let hsig = ps_norm / libm::sqrt(decay) / p.chi_n
            < 1.4 + 2.0 / (dim as f64 + 1.0);
        let cc = p.c_c;
        let pc_scale = if hsig {
            libm::sqrt(cc * (2.0 - cc) * p.mu_eff)
        } else {
            0.0
        };
        for (pc, y) in self.path_c.iter_mut().zip(&y_w) {
            *pc = (1.0 - cc) * *pc + pc_scale * y;
        }

        // covariance update: decay + rank-one + rank-mu
        let delta_hsig = if hsig { 0.0 } else { cc * (2.0 - cc) };
        let base = 1.0 - p.c_1 - p.c_mu;
        for i in 0..dim {
            for j in 0..=i {
                let mut v = base * self.cov[i * dim + j]
                    + p.c_1
                        * (self.path_c[i] * self.path_c[j]
                            + delta_hsig * self.cov[i * dim + j]);
                for (rank, y) in selected_y.iter().enumerate() {
                    v += p.c_mu * p.weights[rank] * y[i] * y[j];
                }
                self.cov[i * dim + j] = v;
                self.cov[j * dim + i] = v;
            }
        }
        self.refresh_eigen();
        Ok(())
    }

    fn refresh_eigen(&mut self) {
        let dim = self.params.dim;
        let (mut values, basis) = jacobi_eigen(&self.cov, dim);
        let mut repaired = false;
        for v in values.iter_mut() {
            if *v < EIGEN_FLOOR {
                *v = EIGEN_FLOOR;
                repaired = true;
            }
        }
        if repaired {
            self.repair_events += 1;
            // write the floored spectrum back so C stays consistent
            let mut cov = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    let mut acc = 0.0;
                    for (k, val) in values.iter().enumerate() {
                        acc += basis[i * dim + k] * val * basis[j * dim + k];
                    }
                    cov[i * dim + j] = acc;
                }
            }
            self.cov = cov;
        }
        self.eig_basis = basis;
        self.eig_sqrt = values.iter().map(|v| libm::sqrt(*v)).collect();
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major).
/// Returns (eigenvalues, eigenvectors as columns of the basis matrix).
pub fn jacobi_eigen(matrix: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; dim * dim];
    for i in 0..dim {
        v[i * dim + i] = 1.0;
    }
    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    s += a[i * dim + j] * a[i * dim + j];
                }
            }
        }
        s
    };
    let total: f64 = a.iter().map(|x| x * x).sum();
    let tol = (total * 1e-28).max(1e-300);
    for _sweep in 0..64 {
        if off_norm(&a) <= tol {
            break;
        }
        for pp in 0..dim {
            for qq in (pp + 1)..dim {
                let apq = a[pp * dim + qq];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[pp * dim + pp];
                let aqq = a[qq * dim + qq];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..dim {
                    let akp = a[k * dim + pp];
                    let akq = a[k * dim + qq];
                    a[k * dim + pp] = c * akp - s * akq;
                    a[k * dim + qq] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[pp * dim + k];
                    let aqk = a[qq * dim + k];
                    a[pp * dim + k] = c * apk - s * aqk;
                    a[qq * dim + k] = s * apk + c * aqk;
                }
                for k in 0..dim {
                    let vkp = v[k * dim + pp];
                    let vkq = v[k * dim + qq];
                    v[k * dim + pp] = c * vkp - s * vkq;
                    v[k * dim + qq] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values: Vec<f64> = (0..dim).map(|i| a[i * dim + i]).collect();
    (values, v)
}
