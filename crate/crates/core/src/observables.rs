//! Eigenvector statistics: normalized overlap moments, Monte Carlo
//! estimation of the moment field, Gaussian-moment comparison tables, the
//! QUE flatness statistic, and maximum-principle residual diagnostics.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dyson::{scaled_overlaps, SpectralPath, VectorFlowParams};
use crate::error::{Error, Result};
use crate::momentflow::{Configuration, LambdaSource};
use crate::rng::{root_rng, trial_rng};
use crate::semicircle::stieltjes_m;

/// a(2n) = (2n-1)!! = E(N^{2n}) for a standard Gaussian N.
pub fn gaussian_moment_real(j: u32) -> f64 {
    let mut acc = 1.0;
    let mut k = 1u64;
    while k <= 2 * j as u64 {
        if k % 2 == 1 {
            acc *= k as f64;
        }
        k += 1;
    }
    acc
}

/// 2^j j! = E(|N_1 + i N_2|^{2j}).
pub fn gaussian_moment_complex(j: u32) -> f64 {
    let mut acc = 1.0;
    for i in 1..=j as u64 {
        acc *= 2.0 * i as f64;
    }
    acc
}

/// One draw of scaled overlaps z_k = sqrt(N) <q, u_k> for a full frame.
#[derive(Debug, Clone)]
pub struct OverlapSample {
    pub z: Vec<f64>,
    pub t: f64,
    pub seed: u64,
}

impl OverlapSample {
    /// |sum_k z_k^2 / N - 1|; zero when the frame is complete and q is a
    /// unit vector.
    pub fn completeness_defect(&self) -> f64 {
        let n = self.z.len() as f64;
        (self.z.iter().map(|&v| v * v).sum::<f64>() / n - 1.0).abs()
    }
}

/// Single-trial normalized moment
/// Q = prod_l z_{i_l}^{2 j_l} / prod_l a(2 j_l)
/// for the configuration with j_l particles at site i_l.
pub fn normalized_moment(z: &[f64], eta: &Configuration) -> Result<f64> {
    let mut q = 1.0;
    for (site, count) in eta.occupations() {
        if site > z.len() {
            return Err(Error::Contract(format!(
                "configuration site {site} has no sampled overlap (got {})",
                z.len()
            )));
        }
        let zi = z[site - 1];
        q *= zi.powi(2 * count as i32) / gaussian_moment_real(count);
    }
    Ok(q)
}

/// Hermitian-case normalized moment,
/// Q = prod_l |z_{i_l}|^{2 j_l} / prod_l 2^{j_l} j_l!.
pub fn normalized_moment_hermitian(z: &[Complex64], eta: &Configuration) -> Result<f64> {
    let mut q = 1.0;
    for (site, count) in eta.occupations() {
        if site > z.len() {
            return Err(Error::Contract(format!(
                "configuration site {site} has no sampled overlap (got {})",
                z.len()
            )));
        }
        let m = z[site - 1].norm_sqr();
        q *= m.powi(count as i32) / gaussian_moment_complex(count);
    }
    Ok(q)
}

/// Mean and Monte Carlo standard error of one estimated quantity.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of the moment field f(eta) = E(Q | lambda):
/// averages of the normalized moments over independent eigenvector-SDE
/// trials sharing the SAME eigenvalue path. Trials run in parallel on
/// per-trial seed substreams; the reduction order is fixed, so results do
/// not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn estimate_f_mc(
    path: &SpectralPath,
    u0: &nalgebra::DMatrix<f64>,
    q: &DVector<f64>,
    configs: &[Configuration],
    trials: usize,
    params: &VectorFlowParams,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    if trials < 100 {
        return Err(Error::Statistics(format!(
            "estimate_f_mc needs at least 100 trials, got {trials}"
        )));
    }
    if configs.is_empty() {
        return Err(Error::Contract("no configurations requested".into()));
    }
    let n_part = configs[0].particle_count();
    if configs.iter().any(|c| c.particle_count() != n_part) {
        return Err(Error::Contract(
            "all configurations must share the particle count".into(),
        ));
    }

    const CHUNK: usize = 256;
    let n_chunks = trials.div_ceil(CHUNK);
    let m = configs.len();

    // Shifted accumulation around the first trial's values: removes the
    // common offset from the cancellation-prone variance formula and makes
    // a deterministic run report exactly zero spread.
    let pivot: Vec<f64> = {
        let rng = trial_rng(seed, 0);
        let out = crate::dyson::eigenvector_sde_with_rng(path, u0, params, rng)?;
        let z = scaled_overlaps(&out.frame, q);
        configs
            .iter()
            .map(|c| normalized_moment(&z, c))
            .collect::<Result<_>>()?
    };

    let partials: Result<Vec<(Vec<f64>, Vec<f64>)>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = ((chunk + 1) * CHUNK).min(trials);
            let mut sum = vec![0.0f64; m];
            let mut sumsq = vec![0.0f64; m];
            for trial in lo..hi {
                let rng = trial_rng(seed, trial as u64);
                let out = crate::dyson::eigenvector_sde_with_rng(path, u0, params, rng)?;
                let z = scaled_overlaps(&out.frame, q);
                for (c, config) in configs.iter().enumerate() {
                    let v = normalized_moment(&z, config)? - pivot[c];
                    sum[c] += v;
                    sumsq[c] += v * v;
                }
            }
            Ok((sum, sumsq))
        })
        .collect();
    let partials = partials?;

    let mut sum = vec![0.0f64; m];
    let mut sumsq = vec![0.0f64; m];
    for (s, s2) in partials {
        for c in 0..m {
            sum[c] += s[c];
            sumsq[c] += s2[c];
        }
    }
    let nt = trials as f64;
    Ok((0..m)
        .map(|c| {
            let shifted_mean = sum[c] / nt;
            let var = ((sumsq[c] - nt * shifted_mean * shifted_mean) / (nt - 1.0)).max(0.0);
            McEstimate {
                mean: pivot[c] + shifted_mean,
                std_error: (var / nt).sqrt(),
            }
        })
        .collect())
}

/// One row of a normality table: the empirical mixed moment
/// E prod_k (z_k^2)^{j_k} against the Gaussian target prod_k a(2 j_k).
#[derive(Debug, Clone)]
pub struct MomentRow {
    /// Exponents j_k per selected index (the moment order is 2 j_k).
    pub orders: Vec<u32>,
    pub empirical: f64,
    pub target: f64,
    pub std_error: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone)]
pub struct NormalityReport {
    pub rows: Vec<MomentRow>,
    pub draws: usize,
}

/// Compare empirical mixed moments of (z_k^2)_{k in I} against the
/// Gaussian targets, for all multi-indices with total order at most
/// `max_order`. Each draw supplies the scaled overlaps z_k = sqrt(N)<q,u_k>
/// for the selected index set (independent matrix draws).
pub fn normality_report(draws: &[Vec<f64>], max_order: u32) -> Result<NormalityReport> {
    if draws.len() < 30 {
        return Err(Error::Statistics(format!(
            "normality_report needs at least 30 draws, got {}",
            draws.len()
        )));
    }
    if max_order < 2 || !max_order.is_multiple_of(2) {
        return Err(Error::Contract("max_order must be even and >= 2".into()));
    }
    let m = draws[0].len();
    if m == 0 || m > 4 {
        return Err(Error::Contract(format!(
            "index set size must be 1..=4, got {m}"
        )));
    }
    if draws.iter().any(|d| d.len() != m) {
        return Err(Error::Contract("ragged draw rows".into()));
    }

    let mut orders_list: Vec<Vec<u32>> = Vec::new();
    let mut current = vec![0u32; m];
    enumerate_orders(&mut orders_list, &mut current, 0, max_order / 2);

    let nt = draws.len() as f64;
    let rows = orders_list
        .into_iter()
        .map(|orders| {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for d in draws {
                let mut v = 1.0;
                for (k, &j) in orders.iter().enumerate() {
                    if j > 0 {
                        v *= (d[k] * d[k]).powi(j as i32);
                    }
                }
                sum += v;
                sumsq += v * v;
            }
            let empirical = sum / nt;
            let var = ((sumsq - nt * empirical * empirical) / (nt - 1.0)).max(0.0);
            let std_error = (var / nt).sqrt();
            let target: f64 = orders.iter().map(|&j| gaussian_moment_real(j)).product();
            let z_score = if std_error > 0.0 {
                (empirical - target) / std_error
            } else {
                0.0
            };
            MomentRow {
                orders,
                empirical,
                target,
                std_error,
                z_score,
            }
        })
        .collect();
    Ok(NormalityReport {
        rows,
        draws: draws.len(),
    })
}

fn enumerate_orders(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, k: usize, budget: u32) {
    if k == current.len() {
        if current.iter().any(|&j| j > 0) {
            out.push(current.clone());
        }
        return;
    }
    for j in 0..=budget {
        current[k] = j;
        enumerate_orders(out, current, k + 1, budget - j);
    }
    current[k] = 0;
}

/// A zero-sum test function a_N: sites -> [-1, 1] with recorded support.
#[derive(Debug, Clone)]
pub struct QueInput {
    values: Vec<f64>,
    support: usize,
}

impl QueInput {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let support = values.iter().filter(|&&v| v != 0.0).count();
        if support == 0 {
            return Err(Error::Contract("test function has empty support".into()));
        }
        if values.iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::Contract("test function values must lie in [-1, 1]".into()));
        }
        let sum: f64 = values.iter().sum();
        if sum.abs() >= 1e-12 {
            return Err(Error::Contract(format!(
                "test function must sum to zero, got {sum:.3e}"
            )));
        }
        Ok(Self { values, support })
    }

    /// Balanced +-1 function on a deterministic pseudo-random support of
    /// the requested (even) size.
    pub fn balanced_pm(n: usize, support: usize, seed: u64) -> Result<Self> {
        if support == 0 || support > n || !support.is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "balanced support must be even and in 1..={n}, got {support}"
            )));
        }
        let mut rng = root_rng(seed);
        let mut sites: Vec<usize> = (0..n).collect();
        // Fisher-Yates prefix shuffle.
        for i in 0..support {
            let j = i + rng.gen_range(0..n - i);
            sites.swap(i, j);
        }
        let mut values = vec![0.0; n];
        for (k, &site) in sites.iter().take(support).enumerate() {
            values[site] = if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        Self::new(values)
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The QUE flatness statistic (N/|a_N|) <u_k, a_N u_k> with
/// <u_k, a_N u_k> = sum_alpha |u_k(alpha)|^2 a_N(alpha).
pub fn que_statistic(u: &DVector<f64>, a: &QueInput) -> Result<f64> {
    let n = u.len();
    if a.values.len() != n {
        return Err(Error::Contract("test function length != vector length".into()));
    }
    if (u.norm() - 1.0).abs() >= 1e-10 {
        return Err(Error::Contract(format!(
            "que_statistic needs |u| = 1 within 1e-10, got {}",
            u.norm()
        )));
    }
    let quad: f64 = (0..n).map(|alpha| u[alpha] * u[alpha] * a.values[alpha]).sum();
    Ok(n as f64 / a.support as f64 * quad)
}

/// Empirical exceedance P(|stat| > delta) over a batch of statistics.
pub fn que_exceedance(stats: &[f64], delta: f64) -> f64 {
    if stats.is_empty() {
        return 0.0;
    }
    stats.iter().filter(|s| s.abs() > delta).count() as f64 / stats.len() as f64
}

/// Maximum-principle decay diagnostics over a sequence of moment-field
/// snapshots (one-particle fields over the sites).
#[derive(Debug, Clone)]
pub struct MaxPrincipleReport {
    pub times: Vec<f64>,
    /// S_t = max_eta f_t - 1.
    pub sup_dev: Vec<f64>,
    /// min_eta f_t - 1.
    pub inf_dev: Vec<f64>,
    /// Im of the conditional isotropic resolvent minus Im m, at the
    /// arg-max site and the chosen eta.
    pub delta1: Vec<f64>,
    /// Averaged (trace) counterpart, independent of f.
    pub delta2: Vec<f64>,
    /// Snapshots where S_t increased beyond the tolerance.
    pub monotone_violations: usize,
}

/// Evaluate S_t = sup(f_t - 1), inf(f_t - 1) and the residuals Delta_1,
/// Delta_2 at the arg-max index for each snapshot of a one-particle
/// moment field. The conditional expectation of Im<q, G q> given the path
/// equals (1/N) sum_j f_t(j) eta / ((lambda_j - lambda_k)^2 + eta^2), so
/// Delta_1 is computed from the field itself.
pub fn max_principle_diagnostics(
    snapshots: &[(f64, Vec<f64>)],
    source: LambdaSource<'_>,
    eta: f64,
    tol: f64,
) -> Result<MaxPrincipleReport> {
    if snapshots.is_empty() {
        return Err(Error::Contract("no snapshots".into()));
    }
    if eta <= 0.0 {
        return Err(Error::Domain("eta must be positive".into()));
    }
    let n = snapshots[0].1.len();
    let mut lambda = vec![0.0; n];
    let mut times = Vec::with_capacity(snapshots.len());
    let mut sup_dev = Vec::with_capacity(snapshots.len());
    let mut inf_dev = Vec::with_capacity(snapshots.len());
    let mut delta1 = Vec::with_capacity(snapshots.len());
    let mut delta2 = Vec::with_capacity(snapshots.len());
    let mut violations = 0usize;
    for (idx, (t, f)) in snapshots.iter().enumerate() {
        if f.len() != n {
            return Err(Error::Contract("ragged snapshots".into()));
        }
        match source {
            LambdaSource::Frozen(l) => lambda.copy_from_slice(l),
            LambdaSource::Path(p) => p.lambda_at(*t, &mut lambda),
        }
        let (kmax, fmax) = f
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let fmin = f.iter().cloned().fold(f64::INFINITY, f64::min);
        let z = Complex64::new(lambda[kmax], eta);
        let m_im = stieltjes_m(z)?.im;
        let mut iso = 0.0;
        let mut tr = 0.0;
        for (j, &lj) in lambda.iter().enumerate() {
            let kernel = eta / ((lj - lambda[kmax]).powi(2) + eta * eta);
            iso += f[j] * kernel;
            tr += kernel;
        }
        iso /= n as f64;
        tr /= n as f64;
        times.push(*t);
        if idx > 0 && fmax - 1.0 > sup_dev[idx - 1] + tol {
            violations += 1;
        }
        sup_dev.push(fmax - 1.0);
        inf_dev.push(fmin - 1.0);
        delta1.push(iso - m_im);
        delta2.push(tr - m_im);
    }
    Ok(MaxPrincipleReport {
        times,
        sup_dev,
        inf_dev,
        delta1,
        delta2,
        monotone_violations: violations,
    })
}

/// Structured unit test vectors for overlap statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestVector {
    /// Coordinate vector e_1.
    Coordinate,
    /// (1, ..., 1)/sqrt(N).
    Uniform,
    /// Fixed-seed random unit vector.
    RandomUnit,
}

pub fn test_vector(kind: TestVector, n: usize, seed: u64) -> DVector<f64> {
    match kind {
        TestVector::Coordinate => {
            let mut q = DVector::zeros(n);
            q[0] = 1.0;
            q
        }
        TestVector::Uniform => DVector::from_element(n, 1.0 / (n as f64).sqrt()),
        TestVector::RandomUnit => {
            let mut rng = root_rng(seed);
            let q = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = q.norm();
            q / norm
        }
    }
}

/// One full-frame overlap draw from a matrix sample: eigendecompose and
/// record z_k = sqrt(N) <q, u_k>.
pub fn overlaps_from_matrix(
    h: &nalgebra::DMatrix<f64>,
    q: &DVector<f64>,
    seed: u64,
) -> Result<OverlapSample> {
    let eig = crate::semicircle::SpectralDecomposition::new(h)?;
    let n = h.nrows() as f64;
    let z = eig.overlaps(q).into_iter().map(|w| n.sqrt() * w).collect();
    Ok(OverlapSample { z, t: 0.0, seed })
}
