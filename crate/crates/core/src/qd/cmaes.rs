//! Full-covariance CMA-ES with ask/tell on externally supplied rankings.
//!
//! The covariance square root used for sampling is refreshed lazily, every
//! `0.5 / (n (c1 + c_mu))` generations. Up to [`EIGEN_MAX_DIM`] dimensions it
//! is the eigendecomposition `B D`; above that a Cholesky factor `L` is used,
//! which satisfies `L L^T = C` as well and costs an order of magnitude less to
//! refresh.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Largest dimension that uses the eigendecomposition.
pub const EIGEN_MAX_DIM: usize = 512;

/// Eigenvalues below this are clamped during repair.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Row/column block size for the triangular products.
const TRIANGLE_BLOCK: usize = 128;

/// `L z` for lower-triangular `L`, skipping the zero upper blocks.
fn lower_times(l: &DMatrix<f32>, z: &DMatrix<f32>) -> DMatrix<f32> {
    let (n, k) = z.shape();
    let mut y = DMatrix::zeros(n, k);
    for i0 in (0..n).step_by(TRIANGLE_BLOCK) {
        let len = TRIANGLE_BLOCK.min(n - i0);
        let cols = i0 + len;
        y.rows_mut(i0, len)
            .gemm(1.0, &l.view((i0, 0), (len, cols)), &z.rows(0, cols), 0.0);
    }
    y
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CmaError {
    #[error("non-finite values in the search distribution")]
    NonFinite,
    #[error("covariance matrix could not be repaired to positive-definite")]
    RepairFailed,
    #[error("ranking must name {expected} distinct candidates, got {got}")]
    BadRanking { expected: usize, got: usize },
}

/// Strategy constants for dimension `n` and population `lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct CmaParams {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
    /// Generations between refreshes of the covariance square root.
    pub lazy_gap: u64,
}

/// `4 + floor(3 ln n)`.
pub fn default_population(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

impl CmaParams {
    pub fn new(dim: usize, lambda: usize) -> Self {
        assert!(dim > 0 && lambda >= 2, "CMA-ES needs dim > 0 and lambda >= 2");
        let n = dim as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        let lazy_gap = ((0.5 / (n * (c1 + c_mu))).floor() as u64).max(1);
        CmaParams {
            dim,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c1,
            c_mu,
            chi_n,
            lazy_gap,
        }
    }
}

#[derive(Clone, Debug)]
enum SqrtFactor {
    /// `C = B diag(d^2) B^T`; `scaled = B diag(d)`.
    Eigen {
        b: DMatrix<f64>,
        d: DVector<f64>,
        scaled: DMatrix<f64>,
    },
    /// `C = L L^T`; sampling uses the single-precision copy.
    Cholesky { l: DMatrix<f64>, l32: DMatrix<f32> },
}

#[derive(Clone, Debug)]
pub struct CmaEs {
    params: CmaParams,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    factor: SqrtFactor,
    generation: u64,
    factored_at: u64,
    use_eigen: bool,
    rng: ChaCha8Rng,
    /// Steps `y_k = (x_k - m) / sigma` of the last ask, one per column.
    pending: Option<DMatrix<f64>>,
}

impl CmaEs {
    pub fn new(mean: Vec<f64>, sigma: f64, lambda: usize, seed: u64) -> Self {
        Self::with_rng(mean, sigma, lambda, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(mean: Vec<f64>, sigma: f64, lambda: usize, rng: ChaCha8Rng) -> Self {
        let dim = mean.len();
        let params = CmaParams::new(dim, lambda);
        let use_eigen = dim <= EIGEN_MAX_DIM;
        let mut es = CmaEs {
            factor: SqrtFactor::Cholesky {
                l: DMatrix::identity(0, 0),
                l32: DMatrix::identity(0, 0),
            },
            params,
            mean: DVector::from_vec(mean),
            sigma,
            cov: DMatrix::identity(dim, dim),
            p_sigma: DVector::zeros(dim),
            p_c: DVector::zeros(dim),
            generation: 0,
            factored_at: 0,
            use_eigen,
            rng,
            pending: None,
        };
        es.reset(es.mean.as_slice().to_vec(), sigma);
        es
    }

    /// Chooses the eigendecomposition (`true`) or Cholesky route regardless
    /// of dimension.
    pub fn force_route(mut self, eigen: bool) -> Self {
        self.use_eigen = eigen;
        self.reset(self.mean.as_slice().to_vec(), self.sigma);
        self
    }

    /// Restarts the distribution at `mean` with identity covariance.
    pub fn reset(&mut self, mean: Vec<f64>, sigma: f64) {
        let n = self.params.dim;
        assert_eq!(mean.len(), n, "mean dimension mismatch");
        self.mean = DVector::from_vec(mean);
        self.sigma = sigma;
        self.cov = DMatrix::identity(n, n);
        self.p_sigma = DVector::zeros(n);
        self.p_c = DVector::zeros(n);
        self.generation = 0;
        self.factored_at = 0;
        self.pending = None;
        self.factor = if self.use_eigen {
            SqrtFactor::Eigen {
                b: DMatrix::identity(n, n),
                d: DVector::from_element(n, 1.0),
                scaled: DMatrix::identity(n, n),
            }
        } else {
            SqrtFactor::Cholesky {
                l: DMatrix::identity(n, n),
                l32: DMatrix::identity(n, n),
            }
        };
    }

    pub fn params(&self) -> &CmaParams {
        &self.params
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Current covariance. Only the lower triangle is maintained between
    /// refactorizations, so this mirrors it.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut c = self.cov.clone();
        c.fill_upper_triangle_with_lower_triangle();
        c
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn sqrt_times(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            SqrtFactor::Eigen { scaled, .. } => scaled * z,
            SqrtFactor::Cholesky { l32, .. } => lower_times(l32, &z.map(|v| v as f32)).map(f64::from),
        }
    }

    /// `C^{-1/2} y` for the eigen route, `L^{-1} y` for the Cholesky route.
    fn whiten(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            SqrtFactor::Eigen { b, d, .. } => {
                let mut t = b.tr_mul(y);
                t.component_div_assign(d);
                b * t
            }
            SqrtFactor::Cholesky { l, .. } => l
                .solve_lower_triangular(y)
                .unwrap_or_else(|| DVector::from_element(y.len(), f64::NAN)),
        }
    }

    /// Draws `lambda` candidates `m + sigma * A z`, `z ~ N(0, I)`.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        let (n, lambda) = (self.params.dim, self.params.lambda);
        let rng = &mut self.rng;
        let z = DMatrix::from_fn(n, lambda, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = self.sqrt_times(&z);
        let out = (0..lambda)
            .map(|k| {
                y.column(k)
                    .iter()
                    .zip(self.mean.iter())
                    .map(|(yi, mi)| mi + self.sigma * yi)
                    .collect()
            })
            .collect();
        self.pending = Some(y);
        out
    }

    /// Minimization update from raw fitness values of the last ask.
    pub fn tell_fitness(&mut self, fitness: &[f64]) -> Result<(), CmaError> {
        let mut order: Vec<usize> = (0..fitness.len()).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));
        self.tell_ranked(&order)
    }

    /// Updates the distribution from a ranking (best first) of the last ask.
    pub fn tell_ranked(&mut self, order: &[usize]) -> Result<(), CmaError> {
        let p = &self.params;
        let (n, mu) = (p.dim, p.mu);
        let y = self.pending.take().expect("tell called without a matching ask");
        let mut seen = vec![false; p.lambda];
        if order.len() != p.lambda || order.iter().any(|&i| i >= p.lambda || std::mem::replace(&mut seen[i], true)) {
            return Err(CmaError::BadRanking {
                expected: p.lambda,
                got: order.len(),
            });
        }

        let mut selected = DMatrix::zeros(n, mu);
        let mut y_w = DVector::zeros(n);
        for (i, &k) in order.iter().take(mu).enumerate() {
            let col = y.column(k);
            y_w.axpy(p.weights[i], &col, 1.0);
            selected.set_column(i, &(col * p.weights[i].sqrt()));
        }

        self.mean.axpy(self.sigma, &y_w, 1.0);

        let cs = p.c_sigma;
        let white = self.whiten(&y_w);
        self.p_sigma *= 1.0 - cs;
        self.p_sigma.axpy((cs * (2.0 - cs) * p.mu_eff).sqrt(), &white, 1.0);

        let g = (self.generation + 1) as f64;
        let ps_norm = self.p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * g)).sqrt() / p.chi_n
            < 1.4 + 2.0 / (n as f64 + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };

        let cc = p.c_c;
        self.p_c *= 1.0 - cc;
        self.p_c.axpy(h * (cc * (2.0 - cc) * p.mu_eff).sqrt(), &y_w, 1.0);

        // Lower triangle only; `refactor` mirrors it.
        let decay = 1.0 - p.c1 - p.c_mu + (1.0 - h) * p.c1 * cc * (2.0 - cc);
        let cov = self.cov.as_mut_slice();
        for j in 0..n {
            let pj = p.c1 * self.p_c[j];
            for (c, &pi) in cov[j * n + j..(j + 1) * n].iter_mut().zip(&self.p_c.as_slice()[j..]) {
                *c = decay * *c + pj * pi;
            }
        }
        for j0 in (0..n).step_by(TRIANGLE_BLOCK) {
            let len = TRIANGLE_BLOCK.min(n - j0);
            self.cov.view_mut((j0, j0), (n - j0, len)).gemm(
                p.c_mu,
                &selected.rows(j0, n - j0),
                &selected.rows(j0, len).transpose(),
                1.0,
            );
        }

        self.sigma *= ((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.generation += 1;

        if !self.sigma.is_finite()
            || self.sigma <= 0.0
            || self.mean.iter().any(|v| !v.is_finite())
            || self.p_sigma.iter().any(|v| !v.is_finite())
        {
            return Err(CmaError::NonFinite);
        }
        if self.generation - self.factored_at >= self.params.lazy_gap {
            self.refactor()?;
        }
        Ok(())
    }

    /// Symmetrizes and re-factors the covariance, repairing it when it is not
    /// numerically positive-definite.
    pub fn refactor(&mut self) -> Result<(), CmaError> {
        let n = self.params.dim;
        self.cov.fill_upper_triangle_with_lower_triangle();
        if self.cov.iter().any(|v| !v.is_finite()) {
            return Err(CmaError::NonFinite);
        }
        self.factored_at = self.generation;
        if self.use_eigen {
            let eig = self.cov.clone().symmetric_eigen();
            let mut values = eig.eigenvalues.clone();
            let repaired = values.iter().any(|&v| v < EIGEN_FLOOR);
            if repaired {
                values.iter_mut().for_each(|v| *v = v.max(EIGEN_FLOOR));
                let b = &eig.eigenvectors;
                self.cov = b * DMatrix::from_diagonal(&values) * b.transpose();
            }
            let d = values.map(f64::sqrt);
            let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&d);
            self.factor = SqrtFactor::Eigen {
                b: eig.eigenvectors,
                d,
                scaled,
            };
            return Ok(());
        }

        let scale = self.cov.diagonal().mean().max(f64::MIN_POSITIVE);
        let mut jitter = 0.0;
        for attempt in 0..8 {
            let mut c = self.cov.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    c[(i, i)] += jitter;
                }
            }
            if let Some(chol) = c.clone().cholesky() {
                if jitter > 0.0 {
                    log::debug!("covariance repaired with jitter {jitter:e}");
                    self.cov = c;
                }
                let l = chol.unpack();
                let l32 = l.map(|v| v as f32);
                self.factor = SqrtFactor::Cholesky { l, l32 };
                return Ok(());
            }
            jitter = scale * 1e-12 * 100f64.powi(attempt);
        }
        Err(CmaError::RepairFailed)
    }
}
