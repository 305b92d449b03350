//! Jump rates of the eigenvector moment flow, derived from an eigenvalue
//! vector: c_ij = 1/(N (lambda_i - lambda_j)^2) for the Wigner classes and
//! d_ij = (lambda_i + lambda_j)/(N (lambda_i - lambda_j)^2) for the
//! covariance class. Denominators are floored at the gap guard and every
//! clamp is counted so contaminated paths can be rejected.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Which rate formula produced a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    SymmetricC,
    HermitianC,
    CovarianceD,
}

/// Symmetric nonnegative jump rates with zero diagonal.
#[derive(Debug, Clone)]
pub struct RateField {
    n: usize,
    rates: DMatrix<f64>,
    kind: RateKind,
    guard_triggers: u64,
}

impl RateField {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[(i, j)]
    }

    pub fn kind(&self) -> RateKind {
        self.kind
    }

    /// How many pairs had their gap clamped to the guard.
    pub fn guard_triggers(&self) -> u64 {
        self.guard_triggers
    }

    /// Build a field from an explicit matrix (testing and custom sweeps).
    pub fn from_matrix(rates: DMatrix<f64>, kind: RateKind) -> Result<Self> {
        let n = rates.nrows();
        if rates.ncols() != n {
            return Err(Error::Contract("rate matrix must be square".into()));
        }
        for i in 0..n {
            if rates[(i, i)] != 0.0 {
                return Err(Error::Contract("rate matrix needs zero diagonal".into()));
            }
            for j in 0..n {
                let v = rates[(i, j)];
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::Contract("rates must be finite and nonnegative".into()));
                }
                if rates[(i, j)] != rates[(j, i)] {
                    return Err(Error::Contract("rate matrix must be symmetric".into()));
                }
            }
        }
        Ok(Self {
            n,
            rates,
            kind,
            guard_triggers: 0,
        })
    }

    /// Largest row sum, an upper bound driving the integrator step cap.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.n)
            .map(|i| self.rates.row(i).sum())
            .fold(0.0f64, f64::max)
    }
}

/// Rates from a sorted eigenvalue vector with gap guard `g`:
/// denominators use max(|lambda_i - lambda_j|, g).
pub fn rates_from_lambda(lambda: &[f64], kind: RateKind, gap_guard: f64) -> Result<RateField> {
    let n = lambda.len();
    if n < 2 {
        return Err(Error::Contract("need at least two eigenvalues".into()));
    }
    if lambda.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Contract("rates_from_lambda needs sorted eigenvalues".into()));
    }
    if kind == RateKind::CovarianceD && lambda[0] < 0.0 {
        return Err(Error::Contract(format!(
            "covariance rates need nonnegative eigenvalues, got {}",
            lambda[0]
        )));
    }
    if gap_guard <= 0.0 {
        return Err(Error::Contract("gap guard must be positive".into()));
    }
    let nf = n as f64;
    let mut rates = DMatrix::zeros(n, n);
    let mut triggers = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let raw = (lambda[i] - lambda[j]).abs();
            let gap = if raw < gap_guard {
                triggers += 1;
                gap_guard
            } else {
                raw
            };
            let v = match kind {
                RateKind::SymmetricC | RateKind::HermitianC => 1.0 / (nf * gap * gap),
                RateKind::CovarianceD => (lambda[i] + lambda[j]) / (nf * gap * gap),
            };
            rates[(i, j)] = v;
            rates[(j, i)] = v;
        }
    }
    Ok(RateField {
        n,
        rates,
        kind,
        guard_triggers: triggers,
    })
}

/// Split into the short-range part (site distance <= ell) and the
/// long-range remainder; the two parts sum to the original exactly.
pub fn split_short_long(field: &RateField, ell: usize) -> Result<(RateField, RateField)> {
    if ell < 1 || ell > field.n {
        return Err(Error::Contract(format!(
            "cutoff ell = {ell} outside 1..={}",
            field.n
        )));
    }
    let n = field.n;
    let mut short = DMatrix::zeros(n, n);
    let mut long = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i.abs_diff(j) <= ell {
                short[(i, j)] = field.rates[(i, j)];
            } else {
                long[(i, j)] = field.rates[(i, j)];
            }
        }
    }
    Ok((
        RateField {
            n,
            rates: short,
            kind: field.kind,
            guard_triggers: field.guard_triggers,
        },
        RateField {
            n,
            rates: long,
            kind: field.kind,
            guard_triggers: field.guard_triggers,
        },
    ))
}
