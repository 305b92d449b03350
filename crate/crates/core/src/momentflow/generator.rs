//! The moment-flow generator, its reversible measure, and the associated
//! quadratic forms.
//!
//! Symmetric class:  (B f)(eta) = sum_{i != j} c_ij 2 eta_i (1 + 2 eta_j)
//!                                (f(eta^{i,j}) - f(eta)),
//! Hermitian class:  same with eta_i (1 + eta_j).
//!
//! The symmetric flow is reversible for the product measure
//! pi(eta) = prod_x phi(eta_x), phi(k) = prod_{i<=k} (1 - 1/(2i));
//! the Hermitian flow is reversible for the uniform measure.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::root_rng;

use super::config::{ConfigSpace, Configuration};
use super::rates::RateField;

/// Occupancy-factor convention of the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentClass {
    Symmetric,
    Hermitian,
}

impl MomentClass {
    /// Rate multiplier for moving one particle from a site holding
    /// `occ_from` particles to one holding `occ_to`.
    #[inline]
    pub fn jump_factor(self, occ_from: u32, occ_to: u32) -> f64 {
        match self {
            MomentClass::Symmetric => 2.0 * occ_from as f64 * (1.0 + 2.0 * occ_to as f64),
            MomentClass::Hermitian => occ_from as f64 * (1.0 + occ_to as f64),
        }
    }
}

/// phi(k) = prod_{i=1}^k (1 - 1/(2i)) = (2k-1)!!/(2k)!!, phi(0) = 1.
pub fn phi(k: u32) -> f64 {
    let mut acc = 1.0;
    for i in 1..=k {
        acc *= 1.0 - 1.0 / (2.0 * i as f64);
    }
    acc
}

/// Reversible weight of one configuration: product of phi over sites for
/// the symmetric class, 1 for the Hermitian class.
pub fn reversible_weight(config: &Configuration, class: MomentClass) -> f64 {
    match class {
        MomentClass::Hermitian => 1.0,
        MomentClass::Symmetric => config
            .occupations()
            .iter()
            .map(|&(_, count)| phi(count))
            .product(),
    }
}

/// Reversible weights for every configuration in a space.
pub fn stationary_weights(space: &ConfigSpace, class: MomentClass) -> Vec<f64> {
    match class {
        MomentClass::Hermitian => vec![1.0; space.size()],
        MomentClass::Symmetric => (0..space.size())
            .map(|idx| {
                let pos = space.positions(idx);
                let mut acc = 1.0;
                let mut run = 1u32;
                for k in 1..=pos.len() {
                    if k < pos.len() && pos[k] == pos[k - 1] {
                        run += 1;
                    } else {
                        acc *= phi(run);
                        run = 1;
                    }
                }
                acc
            })
            .collect(),
    }
}

/// Visit every admissible jump of every configuration:
/// callback(config_index, moved_index, rate * jump_factor).
fn for_each_jump<F: FnMut(usize, usize, f64)>(
    space: &ConfigSpace,
    rates: &RateField,
    class: MomentClass,
    mut visit: F,
) {
    let n_sites = space.n_sites();
    let n = space.n_particles();
    let mut occ = vec![0u32; n_sites];
    let mut scratch = vec![0u32; n];
    for idx in 0..space.size() {
        let pos = space.positions(idx);
        for &p in pos {
            occ[p as usize] += 1;
        }
        let mut a = 0;
        while a < n {
            let site = pos[a];
            // Skip to the end of this run of equal positions.
            let mut b = a + 1;
            while b < n && pos[b] == site {
                b += 1;
            }
            let count = occ[site as usize];
            for j in 0..n_sites as u32 {
                if j == site {
                    continue;
                }
                let r = rates.rate(site as usize, j as usize);
                if r == 0.0 {
                    continue;
                }
                let factor = class.jump_factor(count, occ[j as usize]);
                let moved = space.rank_after_move(idx, site, j, &mut scratch);
                visit(idx, moved, r * factor);
            }
            a = b;
        }
        for &p in pos {
            occ[p as usize] = 0;
        }
    }
}

/// Matrix-free application of the generator: out = B f.
pub fn generator_apply_into(
    space: &ConfigSpace,
    rates: &RateField,
    class: MomentClass,
    f: &[f64],
    out: &mut [f64],
) -> Result<()> {
    if rates.n() != space.n_sites() {
        return Err(Error::Contract("rate field / space dimension mismatch".into()));
    }
    if f.len() != space.size() || out.len() != space.size() {
        return Err(Error::Contract("field length mismatch".into()));
    }
    out.fill(0.0);
    for_each_jump(space, rates, class, |idx, moved, rate| {
        out[idx] += rate * (f[moved] - f[idx]);
    });
    Ok(())
}

/// Adjoint application for the forward (probability) equation:
/// out = B^T p, i.e. the Kolmogorov forward operator of the jump process.
pub fn generator_apply_adjoint_into(
    space: &ConfigSpace,
    rates: &RateField,
    class: MomentClass,
    p: &[f64],
    out: &mut [f64],
) -> Result<()> {
    if rates.n() != space.n_sites() {
        return Err(Error::Contract("rate field / space dimension mismatch".into()));
    }
    if p.len() != space.size() || out.len() != space.size() {
        return Err(Error::Contract("field length mismatch".into()));
    }
    out.fill(0.0);
    for_each_jump(space, rates, class, |idx, moved, rate| {
        let flow = rate * p[idx];
        out[moved] += flow;
        out[idx] -= flow;
    });
    Ok(())
}

/// Dense assembly of the generator, (B)_{eta, xi}; oracle for the
/// matrix-free path on tiny spaces.
pub fn dense_generator(
    space: &ConfigSpace,
    rates: &RateField,
    class: MomentClass,
) -> Result<DMatrix<f64>> {
    if rates.n() != space.n_sites() {
        return Err(Error::Contract("rate field / space dimension mismatch".into()));
    }
    let d = space.size();
    if d > 4096 {
        return Err(Error::EnumerationCap {
            states: d as u128,
            cap: 4096,
        });
    }
    let mut b = DMatrix::zeros(d, d);
    for_each_jump(space, rates, class, |idx, moved, rate| {
        b[(idx, moved)] += rate;
        b[(idx, idx)] -= rate;
    });
    Ok(b)
}

/// Largest total exit rate over the space; 0.5 over this value caps the
/// explicit integrator step.
pub fn max_exit_rate(space: &ConfigSpace, rates: &RateField, class: MomentClass) -> f64 {
    let mut exit = vec![0.0f64; space.size()];
    for_each_jump(space, rates, class, |idx, _, rate| {
        exit[idx] += rate;
    });
    exit.into_iter().fold(0.0f64, f64::max)
}

/// Weighted inner product <f, g>_pi.
pub fn inner_product(weights: &[f64], f: &[f64], g: &[f64]) -> f64 {
    weights
        .iter()
        .zip(f.iter().zip(g))
        .map(|(&w, (&a, &b))| w * a * b)
        .sum()
}

/// Detailed-balance residual: max over configurations and ordered site
/// pairs of |pi(eta) r(eta -> xi) - pi(xi) r(xi -> eta)|.
pub fn detailed_balance_residual(
    space: &ConfigSpace,
    rates: &RateField,
    class: MomentClass,
) -> Result<f64> {
    if rates.n() != space.n_sites() {
        return Err(Error::Contract("rate field / space dimension mismatch".into()));
    }
    let weights = stationary_weights(space, class);
    let n_sites = space.n_sites();
    let n = space.n_particles();
    let mut occ = vec![0u32; n_sites];
    let mut scratch = vec![0u32; n];
    let mut worst = 0.0f64;
    for idx in 0..space.size() {
        let pos = space.positions(idx);
        for &p in pos {
            occ[p as usize] += 1;
        }
        let mut a = 0;
        while a < n {
            let site = pos[a];
            let mut b = a + 1;
            while b < n && pos[b] == site {
                b += 1;
            }
            let count = occ[site as usize];
            for j in 0..n_sites as u32 {
                if j == site {
                    continue;
                }
                let r = rates.rate(site as usize, j as usize);
                let forward = r * class.jump_factor(count, occ[j as usize]);
                let moved = space.rank_after_move(idx, site, j, &mut scratch);
                // Reverse jump xi -> eta moves a particle back from j to
                // site; occupancies in xi are occ[j]+1 and count-1.
                let backward = r * class.jump_factor(occ[j as usize] + 1, count - 1);
                let residual = (weights[idx] * forward - weights[moved] * backward).abs();
                worst = worst.max(residual);
            }
            a = b;
        }
        for &p in pos {
            occ[p as usize] = 0;
        }
    }
    Ok(worst)
}

/// Self-adjointness residual over random field pairs: the largest
/// relative |<g, Bf>_pi - <Bg, f>_pi|.
pub fn adjointness_residual(
    space: &ConfigSpace,
    rates: &RateField,
    class: MomentClass,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let weights = stationary_weights(space, class);
    let d = space.size();
    let mut rng = root_rng(seed);
    let mut bf = vec![0.0; d];
    let mut bg = vec![0.0; d];
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let f: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let g: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        generator_apply_into(space, rates, class, &f, &mut bf)?;
        generator_apply_into(space, rates, class, &g, &mut bg)?;
        let lhs = inner_product(&weights, &g, &bf);
        let rhs = inner_product(&weights, &f, &bg);
        let scale = lhs.abs().max(rhs.abs()).max(1e-300);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Ok(worst)
}

/// Dirichlet form
/// D(f) = sum_eta pi(eta) sum_{i != j} c_ij eta_i (1 + 2 eta_j)
///        (f(eta^{i,j}) - f(eta))^2
/// for the symmetric class (half the jump factor), and the uniform-measure
/// analogue with the 1/2 prefactor for the Hermitian class. Equals
/// -<f, Bf>_pi.
pub fn dirichlet_form(
    space: &ConfigSpace,
    rates: &RateField,
    class: MomentClass,
    f: &[f64],
) -> Result<f64> {
    if f.len() != space.size() {
        return Err(Error::Contract("field length mismatch".into()));
    }
    let weights = stationary_weights(space, class);
    let mut acc = 0.0;
    for_each_jump(space, rates, class, |idx, moved, rate| {
        let df = f[moved] - f[idx];
        // rate carries the full jump factor; the Dirichlet form uses half.
        acc += 0.5 * weights[idx] * rate * df * df;
    });
    Ok(acc)
}

/// A real field over an enumerated configuration space.
#[derive(Debug, Clone)]
pub struct MomentField {
    space: Arc<ConfigSpace>,
    values: Vec<f64>,
}

impl MomentField {
    pub fn constant(space: Arc<ConfigSpace>, value: f64) -> Self {
        let values = vec![value; space.size()];
        Self { space, values }
    }

    pub fn from_values(space: Arc<ConfigSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.size() {
            return Err(Error::Contract(format!(
                "field length {} does not match space size {}",
                values.len(),
                space.size()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("field values must be finite".into()));
        }
        Ok(Self { space, values })
    }

    pub fn from_fn(space: Arc<ConfigSpace>, mut f: impl FnMut(&Configuration) -> f64) -> Self {
        let values = (0..space.size()).map(|i| f(&space.config(i))).collect();
        Self { space, values }
    }

    pub fn space(&self) -> &Arc<ConfigSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn value_at(&self, config: &Configuration) -> Result<f64> {
        Ok(self.values[self.space.index_of(config)?])
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momentflow::rates::{rates_from_lambda, RateKind};
    use rand::Rng;
    use std::collections::HashMap;

    fn random_rates(n: usize, seed: u64) -> RateField {
        let mut rng = root_rng(seed);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.05 + rng.gen::<f64>();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        RateField::from_matrix(m, RateKind::SymmetricC).unwrap()
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(0), 1.0);
        assert_eq!(phi(1), 0.5);
        assert_eq!(phi(2), 0.375);
        assert_eq!(phi(3), 0.3125);
    }

    #[test]
    fn reversible_weight_examples() {
        let two_singles = Configuration::from_occupations(5, &[(1, 1), (4, 1)]).unwrap();
        assert_eq!(reversible_weight(&two_singles, MomentClass::Symmetric), 0.25);
        let empty = Configuration::from_positions(5, &[]).unwrap();
        assert_eq!(reversible_weight(&empty, MomentClass::Symmetric), 1.0);
        assert_eq!(reversible_weight(&two_singles, MomentClass::Hermitian), 1.0);
    }

    #[test]
    fn constants_are_harmonic() {
        let space = ConfigSpace::new(5, 2).unwrap();
        let rates = random_rates(5, 3);
        let f = vec![1.0; space.size()];
        let mut out = vec![0.0; space.size()];
        for class in [MomentClass::Symmetric, MomentClass::Hermitian] {
            generator_apply_into(&space, &rates, class, &f, &mut out).unwrap();
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn two_site_single_particle_generator_by_hand() {
        // With one particle, B f(1) = c_12 * 2 * 1 * (1 + 0) * (f(2) - f(1)).
        let space = ConfigSpace::new(2, 1).unwrap();
        let rates = rates_from_lambda(&[-1.0, 1.0], RateKind::SymmetricC, 1e-6).unwrap();
        let c = rates.rate(0, 1);
        let f = vec![0.7, -0.3];
        let mut out = vec![0.0; 2];
        generator_apply_into(&space, &rates, MomentClass::Symmetric, &f, &mut out).unwrap();
        assert!((out[0] - 2.0 * c * (f[1] - f[0])).abs() < 1e-15);
        assert!((out[1] - 2.0 * c * (f[0] - f[1])).abs() < 1e-15);
    }

    /// Independent dense-assembly oracle: enumerate occupation vectors from
    /// scratch, apply the textbook generator formula entry by entry, and
    /// compare with the matrix-free application.
    #[test]
    fn matrix_free_matches_independent_dense_oracle() {
        for (n_sites, n, class) in [
            (3usize, 2usize, MomentClass::Symmetric),
            (4, 3, MomentClass::Symmetric),
            (3, 2, MomentClass::Hermitian),
            (5, 2, MomentClass::Hermitian),
        ] {
            let space = ConfigSpace::new(n_sites, n).unwrap();
            let rates = random_rates(n_sites, 7 + n as u64);

            // Oracle index: occupation vector -> position in the space's
            // own enumeration, built only from public Configuration data.
            let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
            let occ_of = |cfg: &Configuration| -> Vec<u32> {
                (1..=n_sites).map(|s| cfg.occupation(s)).collect()
            };
            for idx in 0..space.size() {
                index.insert(occ_of(&space.config(idx)), idx);
            }

            let d = space.size();
            let mut rng = root_rng(11);
            let f: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let mut expect = vec![0.0f64; d];
            for idx in 0..d {
                let occ = occ_of(&space.config(idx));
                for i in 0..n_sites {
                    for j in 0..n_sites {
                        if i == j || occ[i] == 0 {
                            continue;
                        }
                        let mut moved = occ.clone();
                        moved[i] -= 1;
                        moved[j] += 1;
                        let target = index[&moved];
                        let factor = class.jump_factor(occ[i], occ[j]);
                        expect[idx] += rates.rate(i, j) * factor * (f[target] - f[idx]);
                    }
                }
            }

            let mut got = vec![0.0f64; d];
            generator_apply_into(&space, &rates, class, &f, &mut got).unwrap();
            for idx in 0..d {
                assert!(
                    (got[idx] - expect[idx]).abs() < 1e-12,
                    "mismatch at {idx}: {} vs {}",
                    got[idx],
                    expect[idx]
                );
            }

            // Dense assembly agrees too.
            let b = dense_generator(&space, &rates, class).unwrap();
            let bf = &b * DMatrix::from_column_slice(d, 1, &f);
            for idx in 0..d {
                assert!((bf[(idx, 0)] - expect[idx]).abs() < 1e-12);
            }
        }
    }

    /// The paper's reversibility identity at xi_i = 0, xi_j = 1:
    /// phi(1) phi(0) 2*1*1 = phi(0) phi(1) 2*1*1.
    #[test]
    fn reverse_identity_smallest_case_by_hand() {
        let lhs = phi(0 + 1) * phi(1 - 1) * 2.0 * (0.0 + 1.0) * (1.0 + 2.0 * (1.0 - 1.0));
        let rhs = phi(0) * phi(1) * 2.0 * 1.0 * (1.0 + 2.0 * 0.0);
        assert_eq!(lhs, rhs);
        assert_eq!(lhs, 1.0);
    }

    #[test]
    fn detailed_balance_over_random_rate_sweep() {
        for n_sites in 2..=6usize {
            for n in 1..=3usize {
                for s in 0..3u64 {
                    let space = ConfigSpace::new(n_sites, n).unwrap();
                    let rates = random_rates(n_sites, 100 * n_sites as u64 + 10 * n as u64 + s);
                    let sym =
                        detailed_balance_residual(&space, &rates, MomentClass::Symmetric).unwrap();
                    assert!(sym < 1e-12, "sym residual {sym} at ({n_sites},{n},{s})");
                    let herm =
                        detailed_balance_residual(&space, &rates, MomentClass::Hermitian).unwrap();
                    assert!(herm < 1e-12, "herm residual {herm}");
                }
            }
        }
    }

    #[test]
    fn generator_is_self_adjoint_for_pi() {
        let space = ConfigSpace::new(5, 3).unwrap();
        let rates = random_rates(5, 42);
        for class in [MomentClass::Symmetric, MomentClass::Hermitian] {
            let r = adjointness_residual(&space, &rates, class, 100, 17).unwrap();
            assert!(r < 1e-10, "adjointness residual {r}");
        }
    }

    #[test]
    fn dirichlet_form_identities() {
        let space = ConfigSpace::new(4, 2).unwrap();
        let rates = random_rates(4, 5);
        let d = space.size();
        let mut rng = root_rng(23);
        for class in [MomentClass::Symmetric, MomentClass::Hermitian] {
            let weights = stationary_weights(&space, class);
            // Constant field: zero dissipation.
            let ones = vec![1.0; d];
            assert_eq!(dirichlet_form(&space, &rates, class, &ones).unwrap(), 0.0);
            // D(f) = -<f, Bf>_pi, and > 0 for non-constant f.
            for _ in 0..20 {
                let f: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let mut bf = vec![0.0; d];
                generator_apply_into(&space, &rates, class, &f, &mut bf).unwrap();
                let lhs = dirichlet_form(&space, &rates, class, &f).unwrap();
                let rhs = -inner_product(&weights, &f, &bf);
                assert!(lhs > 0.0);
                assert!(
                    (lhs - rhs).abs() / lhs.max(1e-300) < 1e-10,
                    "D(f) = {lhs} vs -<f,Bf> = {rhs}"
                );
            }
        }
    }

    /// N=2, n=1 Dirichlet form by hand, cross-checked against -<f, Bf>_pi.
    #[test]
    fn dirichlet_two_state_by_hand() {
        let space = ConfigSpace::new(2, 1).unwrap();
        let rates = rates_from_lambda(&[-1.0, 1.0], RateKind::SymmetricC, 1e-6).unwrap();
        let c = rates.rate(0, 1);
        let f = vec![1.0, 0.0];
        // Both states have weight phi(1) = 1/2; each of the two ordered
        // jumps contributes c * 1 * (f-diff)^2.
        let expect = 0.5 * c * 1.0 + 0.5 * c * 1.0;
        let d = dirichlet_form(&space, &rates, MomentClass::Symmetric, &f).unwrap();
        assert!((d - expect).abs() < 1e-15);
        let weights = stationary_weights(&space, MomentClass::Symmetric);
        let mut bf = vec![0.0; 2];
        generator_apply_into(&space, &rates, MomentClass::Symmetric, &f, &mut bf).unwrap();
        assert!((d + inner_product(&weights, &f, &bf)).abs() < 1e-15);
    }

    #[test]
    fn adjoint_application_conserves_mass() {
        let space = ConfigSpace::new(5, 2).unwrap();
        let rates = random_rates(5, 9);
        let d = space.size();
        let mut rng = root_rng(31);
        let p: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        let mut out = vec![0.0; d];
        generator_apply_adjoint_into(&space, &rates, MomentClass::Symmetric, &p, &mut out)
            .unwrap();
        let total: f64 = out.iter().sum();
        assert!(total.abs() < 1e-12);
    }
}
