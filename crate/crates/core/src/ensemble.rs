//! Variance profiles and matrix samplers for generalized Wigner, GOE, GUE
//! and Wishart-factor ensembles.
//!
//! A generalized Wigner matrix has independent centered entries (up to
//! symmetry) whose variances form a profile with unit column sums and
//! entries uniformly comparable to 1/N. All samplers are pure functions of
//! their arguments and a 64-bit seed.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::root_rng;

/// Tolerance on profile column sums.
pub const COLUMN_SUM_TOL: f64 = 1e-12;
const SINKHORN_MAX_ITERS: usize = 10_000;

/// The entry variance matrix S = (sigma_ij^2) of a generalized Wigner
/// ensemble: symmetric, nonnegative, unit column sums, entries within
/// [1/(CN), C/N] for the declared constant C.
#[derive(Debug, Clone)]
pub struct VarianceProfile {
    n: usize,
    sigma2: DMatrix<f64>,
    bound_constant: f64,
}

impl VarianceProfile {
    /// The canonical Wigner profile: every entry 1/N (C = 1).
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDimension(format!(
                "profile needs N >= 2, got {n}"
            )));
        }
        Ok(Self {
            n,
            sigma2: DMatrix::from_element(n, n, 1.0 / n as f64),
            bound_constant: 1.0,
        })
    }

    /// Random symmetric profile with entries in [c_min/N, c_max/N],
    /// renormalized by symmetric Sinkhorn iteration until every column sums
    /// to 1 within [`COLUMN_SUM_TOL`]. `c_min` and `c_max` are in units of
    /// 1/N and must straddle 1, otherwise the unit column sum is
    /// unreachable.
    pub fn banded(n: usize, c_min: f64, c_max: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDimension(format!(
                "profile needs N >= 2, got {n}"
            )));
        }
        if !(c_min > 0.0 && c_min <= c_max) {
            return Err(Error::InfeasibleProfile(format!(
                "need 0 < c_min <= c_max, got ({c_min}, {c_max})"
            )));
        }
        if c_max < 1.0 {
            return Err(Error::InfeasibleProfile(format!(
                "maximum achievable column sum {c_max} < 1"
            )));
        }
        if c_min > 1.0 {
            return Err(Error::InfeasibleProfile(format!(
                "minimum achievable column sum {c_min} > 1"
            )));
        }
        let nf = n as f64;
        let (lo, hi) = (c_min / nf, c_max / nf);
        let mut rng = root_rng(seed);
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = lo + (hi - lo) * rng.gen::<f64>();
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        // Symmetric Sinkhorn: scale entry (i,j) by 1/sqrt(r_i r_j), then
        // clamp back into [lo, hi]; the clamp keeps the non-degeneracy
        // bounds while the scaling drives column sums to 1.
        for _ in 0..SINKHORN_MAX_ITERS {
            let sums: Vec<f64> = (0..n).map(|j| s.column(j).sum()).collect();
            let worst = sums
                .iter()
                .map(|v| (v - 1.0).abs())
                .fold(0.0f64, f64::max);
            if worst < COLUMN_SUM_TOL {
                let min_entry = s.iter().cloned().fold(f64::INFINITY, f64::min);
                let max_entry = s.iter().cloned().fold(0.0f64, f64::max);
                let bound_constant = (max_entry * nf).max(1.0 / (min_entry * nf));
                return Ok(Self {
                    n,
                    sigma2: s,
                    bound_constant,
                });
            }
            for i in 0..n {
                for j in i..n {
                    let v = (s[(i, j)] / (sums[i] * sums[j]).sqrt()).clamp(lo, hi);
                    s[(i, j)] = v;
                    s[(j, i)] = v;
                }
            }
        }
        Err(Error::InfeasibleProfile(format!(
            "Sinkhorn renormalization did not reach {COLUMN_SUM_TOL:.0e} in {SINKHORN_MAX_ITERS} iterations"
        )))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sigma2(&self) -> &DMatrix<f64> {
        &self.sigma2
    }

    /// The realized non-degeneracy constant C.
    pub fn bound_constant(&self) -> f64 {
        self.bound_constant
    }

    /// Check all profile invariants: symmetry, column sums, bounds.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        let nf = n as f64;
        for j in 0..n {
            let sum = self.sigma2.column(j).sum();
            if (sum - 1.0).abs() >= COLUMN_SUM_TOL {
                return Err(Error::InfeasibleProfile(format!(
                    "column {j} sums to {sum}, off by {:.3e}",
                    (sum - 1.0).abs()
                )));
            }
        }
        let lo = 1.0 / (self.bound_constant * nf) - 1e-15;
        let hi = self.bound_constant / nf + 1e-15;
        for i in 0..n {
            for j in 0..n {
                if self.sigma2[(i, j)] != self.sigma2[(j, i)] {
                    return Err(Error::Contract(format!("profile not symmetric at ({i},{j})")));
                }
                let v = self.sigma2[(i, j)];
                if !(lo..=hi).contains(&v) {
                    return Err(Error::InfeasibleProfile(format!(
                        "entry ({i},{j}) = {v} outside [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Standardized entry laws: mean 0, variance 1, all moments finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryLaw {
    Gaussian,
    /// +-1 with equal probability.
    BernoulliSymmetric,
    /// sqrt(3) * U(-1, 1).
    UniformCentered,
}

impl EntryLaw {
    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            EntryLaw::Gaussian => rng.sample(StandardNormal),
            EntryLaw::BernoulliSymmetric => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryLaw::UniformCentered => 3.0f64.sqrt() * (2.0 * rng.gen::<f64>() - 1.0),
        }
    }
}

/// Symmetry class of the ensemble and its flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryClass {
    /// beta = 1, real symmetric.
    Symmetric,
    /// beta = 2, complex Hermitian.
    Hermitian,
    /// Covariance (Wishart) class with factor aspect M >= N.
    Covariance { m_rows: usize },
}

/// Sample a real symmetric generalized Wigner matrix from a profile.
pub fn sample_matrix(
    profile: &VarianceProfile,
    law: EntryLaw,
    seed: u64,
) -> DMatrix<f64> {
    let n = profile.n();
    let mut rng = root_rng(seed);
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = profile.sigma2()[(i, j)].sqrt() * law.sample(&mut rng);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Sample a complex Hermitian generalized Wigner matrix. Off-diagonal real
/// and imaginary parts are i.i.d. with variance sigma^2/2 (the isotropic
/// choice), diagonals are real with variance sigma^2.
pub fn sample_matrix_hermitian(
    profile: &VarianceProfile,
    law: EntryLaw,
    seed: u64,
) -> DMatrix<Complex64> {
    let n = profile.n();
    let mut rng = root_rng(seed);
    let mut h = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let half = 0.5f64.sqrt();
    for i in 0..n {
        for j in i..n {
            let sigma = profile.sigma2()[(i, j)].sqrt();
            if i == j {
                h[(i, i)] = Complex64::new(sigma * law.sample(&mut rng), 0.0);
            } else {
                let v = Complex64::new(
                    sigma * half * law.sample(&mut rng),
                    sigma * half * law.sample(&mut rng),
                );
                h[(i, j)] = v;
                h[(j, i)] = v.conj();
            }
        }
    }
    h
}

/// Sample a GOE matrix: off-diagonal variance 1/N, diagonal variance 2/N.
pub fn sample_goe(n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!("GOE needs N >= 2, got {n}")));
    }
    let mut rng = root_rng(seed);
    let scale = 1.0 / (n as f64).sqrt();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let g: f64 = rng.sample(StandardNormal);
            let v = if i == j {
                2.0f64.sqrt() * scale * g
            } else {
                scale * g
            };
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Sample a GUE matrix: E|h_ij|^2 = 1/N for all entries, real diagonal.
pub fn sample_gue(n: usize, seed: u64) -> Result<DMatrix<Complex64>> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!("GUE needs N >= 2, got {n}")));
    }
    let mut rng = root_rng(seed);
    let off = 1.0 / (2.0 * n as f64).sqrt();
    let diag = 1.0 / (n as f64).sqrt();
    let mut h = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        for j in i..n {
            if i == j {
                let g: f64 = rng.sample(StandardNormal);
                h[(i, i)] = Complex64::new(diag * g, 0.0);
            } else {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let v = Complex64::new(off * re, off * im);
                h[(i, j)] = v;
                h[(j, i)] = v.conj();
            }
        }
    }
    Ok(h)
}

/// Sample an M x N real factor with i.i.d. N(0, 1/N) entries; M^T M is the
/// associated covariance (Wishart) matrix.
pub fn sample_wishart_factor(m_rows: usize, n_cols: usize, seed: u64) -> Result<DMatrix<f64>> {
    if m_rows < n_cols {
        return Err(Error::UnsupportedAspect {
            m: m_rows,
            n: n_cols,
        });
    }
    let mut rng = root_rng(seed);
    let scale = 1.0 / (n_cols as f64).sqrt();
    Ok(DMatrix::from_fn(m_rows, n_cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    }))
}
