//! Semicircle-law reference quantities: Stieltjes transform, density,
//! classical eigenvalue locations, and the rigidity / isotropic-law
//! residual diagnostics used to qualify sampled spectra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Stieltjes transform of the semicircle distribution,
/// m(z) = (-z + sqrt(z^2 - 4)) / 2, with the branch holomorphic in the
/// upper half plane and m(z) -> 0 as |z| -> infinity.
pub fn stieltjes_m(z: Complex64) -> Result<Complex64> {
    if z.im <= 0.0 {
        return Err(Error::Domain(format!(
            "stieltjes_m needs Im z > 0, got {}",
            z.im
        )));
    }
    let w = (z * z - 4.0).sqrt();
    // The two candidate roots of m^2 + z m + 1 = 0 multiply to 1; the
    // Stieltjes branch is the one with positive imaginary part.
    let a = (-z + w) / 2.0;
    let b = (-z - w) / 2.0;
    Ok(if a.im > 0.0 { a } else { b })
}

/// Semicircle density rho(s) = sqrt((4 - s^2)_+) / (2 pi).
pub fn semicircle_density(e: f64) -> f64 {
    let d = 4.0 - e * e;
    if d <= 0.0 {
        0.0
    } else {
        d.sqrt() / (2.0 * std::f64::consts::PI)
    }
}

/// Semicircle CDF, F(x) = 1/2 + x sqrt(4 - x^2)/(4 pi) + asin(x/2)/pi on
/// [-2, 2], clamped outside.
pub fn semicircle_cdf(x: f64) -> f64 {
    if x <= -2.0 {
        return 0.0;
    }
    if x >= 2.0 {
        return 1.0;
    }
    let pi = std::f64::consts::PI;
    0.5 + x * (4.0 - x * x).sqrt() / (4.0 * pi) + (x / 2.0).asin() / pi
}

/// Classical locations gamma_k: the (k - 1/2)/N quantiles of the
/// semicircle distribution, antisymmetric by construction.
#[derive(Debug, Clone)]
pub struct ClassicalLocations {
    gamma: Vec<f64>,
}

impl ClassicalLocations {
    pub fn values(&self) -> &[f64] {
        &self.gamma
    }

    pub fn n(&self) -> usize {
        self.gamma.len()
    }
}

/// Solve F(gamma_k) = (k - 1/2)/N by bisection to 1e-12 in the quantile.
/// Locations for the upper half of the spectrum are mirrored from the
/// lower half so that gamma_{N+1-k} = -gamma_k holds exactly.
pub fn classical_locations(n: usize) -> Result<ClassicalLocations> {
    if n == 0 {
        return Err(Error::InvalidDimension("classical_locations needs N >= 1".into()));
    }
    let mut gamma = vec![0.0f64; n];
    for k in 1..=n.div_ceil(2) {
        let q = (k as f64 - 0.5) / n as f64;
        let g = if 2 * k == n + 1 {
            0.0
        } else {
            bisect_quantile(q)
        };
        gamma[k - 1] = g;
        gamma[n - k] = -g;
    }
    Ok(ClassicalLocations { gamma })
}

fn bisect_quantile(q: f64) -> f64 {
    let (mut lo, mut hi) = (-2.0f64, 2.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = semicircle_cdf(mid);
        if (f - q).abs() < 1e-13 {
            return mid;
        }
        if f < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Per-index rigidity flags: |lambda_k - gamma_k| < N^{-2/3+omega} khat^{-1/3}
/// with khat = min(k, N - k + 1).
#[derive(Debug, Clone)]
pub struct RigidityReport {
    pub flags: Vec<bool>,
    /// |lambda_k - gamma_k| divided by its rigidity bound.
    pub normalized_dev: Vec<f64>,
    pub max_normalized_dev: f64,
    pub fraction_true: f64,
    pub omega: f64,
}

pub fn rigidity_report(lambda: &[f64], omega: f64) -> Result<RigidityReport> {
    let n = lambda.len();
    if n == 0 {
        return Err(Error::Contract("empty spectrum".into()));
    }
    if lambda.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Contract("rigidity_report needs sorted eigenvalues".into()));
    }
    let gamma = classical_locations(n)?;
    let nf = n as f64;
    let mut flags = Vec::with_capacity(n);
    let mut normalized = Vec::with_capacity(n);
    let mut max_dev = 0.0f64;
    for k in 1..=n {
        let khat = k.min(n - k + 1) as f64;
        let bound = nf.powf(-2.0 / 3.0 + omega) * khat.powf(-1.0 / 3.0);
        let dev = (lambda[k - 1] - gamma.values()[k - 1]).abs() / bound;
        max_dev = max_dev.max(dev);
        normalized.push(dev);
        flags.push(dev < 1.0);
    }
    let fraction = flags.iter().filter(|&&f| f).count() as f64 / nf;
    Ok(RigidityReport {
        flags,
        normalized_dev: normalized,
        max_normalized_dev: max_dev,
        fraction_true: fraction,
        omega,
    })
}

/// A point z = E + i eta in the upper half plane, with the spectral-domain
/// membership check |E| <= 1/omega, N^{-1+omega} <= eta <= 1/omega.
#[derive(Debug, Clone, Copy)]
pub struct SpectralDomainPoint {
    pub e: f64,
    pub eta: f64,
}

impl SpectralDomainPoint {
    pub fn new(e: f64, eta: f64) -> Result<Self> {
        if eta <= 0.0 {
            return Err(Error::Domain(format!("need eta > 0, got {eta}")));
        }
        Ok(Self { e, eta })
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.e, self.eta)
    }

    pub fn in_domain(&self, omega: f64, n: usize) -> bool {
        let inv = 1.0 / omega;
        self.e.abs() <= inv
            && self.eta >= (n as f64).powf(-1.0 + omega)
            && self.eta <= inv
    }
}

/// Eigendecomposition of a real symmetric matrix, eigenvalues ascending.
/// Shared by the resolvent diagnostics and the overlap statistics so each
/// sampled matrix is factored once.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub lambdas: Vec<f64>,
    /// Columns are the eigenvectors, ordered like `lambdas`.
    pub vectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn new(h: &DMatrix<f64>) -> Result<Self> {
        let eig = h.clone().symmetric_eigen();
        let n = h.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self { lambdas, vectors })
    }

    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    /// Overlaps <q, u_k> for every eigenvector.
    pub fn overlaps(&self, q: &DVector<f64>) -> Vec<f64> {
        (0..self.n()).map(|k| self.vectors.column(k).dot(q)).collect()
    }

    /// <q, G(z) q> evaluated through the spectral sum.
    pub fn resolvent_quadratic_form(&self, q: &DVector<f64>, z: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &lk) in self.lambdas.iter().enumerate() {
            let w = self.vectors.column(k).dot(q);
            acc += (w * w) / (Complex64::new(lk, 0.0) - z);
        }
        acc
    }
}

/// Residual of the isotropic local law: |<q, G(z) q> - m(z)| and its
/// xi = 0 reference bound sqrt(Im m / (N eta)) + 1/(N eta).
pub fn isotropic_residual(
    eig: &SpectralDecomposition,
    q: &DVector<f64>,
    point: SpectralDomainPoint,
) -> Result<(f64, f64)> {
    if (q.norm() - 1.0).abs() >= 1e-12 {
        return Err(Error::Contract(format!(
            "isotropic_residual needs |q| = 1 within 1e-12, got {}",
            q.norm()
        )));
    }
    let z = point.z();
    let m = stieltjes_m(z)?;
    let g = eig.resolvent_quadratic_form(q, z);
    let n_eta = eig.n() as f64 * point.eta;
    let bound = (m.im / n_eta).sqrt() + 1.0 / n_eta;
    Ok(((g - m).norm(), bound))
}

/// Residual of the averaged law: |Tr G(z)/N - m(z)| and the 1/(N eta)
/// reference scale.
pub fn trace_residual(lambdas: &[f64], point: SpectralDomainPoint) -> Result<(f64, f64)> {
    let z = point.z();
    let m = stieltjes_m(z)?;
    let n = lambdas.len() as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for &lk in lambdas {
        acc += (Complex64::new(lk, 0.0) - z).inv();
    }
    let scale = 1.0 / (n * point.eta);
    Ok(((acc / n - m).norm(), scale))
}
