//! Particle configurations on the sites 1..N and their canonical
//! enumeration.
//!
//! A configuration assigns a nonnegative particle count to every site; the
//! sorted positions of its particles are the derived view used by the
//! distance and by the enumeration order. Configurations with n particles
//! on N sites are indexed in colexicographic order on the occupation
//! vectors (equivalently, on the sorted position tuples), so indices are
//! stable across runs and golden files.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Hard cap on the enumerated state space, C(N+n-1, n) <= 10^6.
pub const CONFIG_CAP: u64 = 1_000_000;

/// Occupation map eta: sites 1..N -> particle counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    n_sites: usize,
    /// Sorted particle positions, 1-based sites.
    positions: Vec<u32>,
}

impl Configuration {
    /// Build from particle positions (1-based sites, any order).
    pub fn from_positions(n_sites: usize, positions: &[usize]) -> Result<Self> {
        let mut pos = Vec::with_capacity(positions.len());
        for &p in positions {
            if p < 1 || p > n_sites {
                return Err(Error::Contract(format!(
                    "site {p} out of range 1..={n_sites}"
                )));
            }
            pos.push(p as u32);
        }
        pos.sort_unstable();
        Ok(Self {
            n_sites,
            positions: pos,
        })
    }

    /// Build from (site, count) pairs; unlisted sites are empty.
    pub fn from_occupations(n_sites: usize, pairs: &[(usize, u32)]) -> Result<Self> {
        let mut pos = Vec::new();
        for &(site, count) in pairs {
            if site < 1 || site > n_sites {
                return Err(Error::Contract(format!(
                    "site {site} out of range 1..={n_sites}"
                )));
            }
            for _ in 0..count {
                pos.push(site as u32);
            }
        }
        pos.sort_unstable();
        Ok(Self {
            n_sites,
            positions: pos,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Total particle count N(eta).
    pub fn particle_count(&self) -> usize {
        self.positions.len()
    }

    /// Sorted particle positions (1-based).
    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    /// Particle count at one site.
    pub fn occupation(&self, site: usize) -> u32 {
        self.positions.iter().filter(|&&p| p as usize == site).count() as u32
    }

    /// Distinct (site, count) pairs in increasing site order.
    pub fn occupations(&self) -> Vec<(usize, u32)> {
        let mut out: Vec<(usize, u32)> = Vec::new();
        for &p in &self.positions {
            match out.last_mut() {
                Some((site, count)) if *site == p as usize => *count += 1,
                _ => out.push((p as usize, 1)),
            }
        }
        out
    }

    /// The configuration eta^{i,j}: one particle moved from site i to
    /// site j. If site i is empty the configuration is unchanged.
    pub fn moved(&self, i: usize, j: usize) -> Result<Self> {
        if i < 1 || i > self.n_sites || j < 1 || j > self.n_sites {
            return Err(Error::Contract(format!(
                "move sites ({i}, {j}) out of range 1..={}",
                self.n_sites
            )));
        }
        if i == j {
            return Err(Error::Contract("move needs distinct sites".into()));
        }
        let mut out = self.clone();
        if let Some(k) = out.positions.iter().position(|&p| p as usize == i) {
            out.positions[k] = j as u32;
            out.positions.sort_unstable();
        }
        Ok(out)
    }

    /// Compact occupation string like "3:2|7:1" (site:count, sorted).
    pub fn occupation_string(&self) -> String {
        let parts: Vec<String> = self
            .occupations()
            .iter()
            .map(|(s, c)| format!("{s}:{c}"))
            .collect();
        if parts.is_empty() {
            "-".into()
        } else {
            parts.join("|")
        }
    }
}

/// Distance d(eta, xi) = sum_a |x_a - y_a| over sorted positions. This
/// equals the minimum over particle matchings of the total displacement.
pub fn config_distance(a: &Configuration, b: &Configuration) -> Result<u64> {
    if a.particle_count() != b.particle_count() {
        return Err(Error::Contract(format!(
            "distance needs equal particle counts, got {} and {}",
            a.particle_count(),
            b.particle_count()
        )));
    }
    Ok(a.positions
        .iter()
        .zip(&b.positions)
        .map(|(&x, &y)| (x as i64 - y as i64).unsigned_abs())
        .sum())
}

/// Enumerated n-particle configuration space on N sites with the
/// rank <-> configuration bijection cached.
#[derive(Debug)]
pub struct ConfigSpace {
    n_sites: usize,
    n_particles: usize,
    size: usize,
    /// Flattened sorted positions (0-based sites), `size * n_particles`.
    positions: Vec<u32>,
    /// binom[a][b] = C(a, b) for a <= N + n, b <= n.
    binom: Vec<Vec<u64>>,
}

impl ConfigSpace {
    pub fn new(n_sites: usize, n_particles: usize) -> Result<Arc<Self>> {
        if n_sites == 0 || n_particles == 0 {
            return Err(Error::Contract("need at least one site and one particle".into()));
        }
        let states = binomial_u128(n_sites as u128 + n_particles as u128 - 1, n_particles as u128);
        if states > CONFIG_CAP as u128 {
            return Err(Error::EnumerationCap {
                states,
                cap: CONFIG_CAP,
            });
        }
        let size = states as usize;
        let n = n_particles;
        let rows = n_sites + n + 1;
        // Pascal table; every value used by rank() is bounded by the space
        // size, so u64 never overflows (saturating add guards the corner).
        let mut binom = vec![vec![0u64; n + 1]; rows];
        for row in binom.iter_mut() {
            row[0] = 1;
        }
        for a in 1..rows {
            for b in 1..=n {
                let up = binom[a - 1][b];
                let diag = binom[a - 1][b - 1];
                binom[a][b] = up.saturating_add(diag);
            }
        }

        // Odometer enumeration in colex order on sorted position tuples.
        let mut positions = Vec::with_capacity(size * n);
        let mut x = vec![0u32; n];
        loop {
            positions.extend_from_slice(&x);
            // Successor: find the lowest index that can increment.
            let mut i = 0;
            loop {
                if i == n {
                    break;
                }
                let limit = if i + 1 < n { x[i + 1] } else { n_sites as u32 - 1 };
                if x[i] < limit {
                    x[i] += 1;
                    for v in x.iter_mut().take(i) {
                        *v = 0;
                    }
                    break;
                }
                i += 1;
            }
            if i == n {
                break;
            }
        }
        debug_assert_eq!(positions.len(), size * n);
        Ok(Arc::new(Self {
            n_sites,
            n_particles,
            size,
            positions,
            binom,
        }))
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Sorted 0-based positions of the configuration at `index`.
    pub fn positions(&self, index: usize) -> &[u32] {
        let n = self.n_particles;
        &self.positions[index * n..(index + 1) * n]
    }

    /// Colex rank of a sorted 0-based position tuple:
    /// sum_a C(x_a + a, a + 1).
    pub fn rank(&self, sorted_positions: &[u32]) -> usize {
        let mut r = 0u64;
        for (a, &x) in sorted_positions.iter().enumerate() {
            r += self.binom[x as usize + a][a + 1];
        }
        r as usize
    }

    /// Index of a public configuration in this space.
    pub fn index_of(&self, config: &Configuration) -> Result<usize> {
        if config.n_sites() != self.n_sites || config.particle_count() != self.n_particles {
            return Err(Error::Contract(
                "configuration does not belong to this space".into(),
            ));
        }
        let zero_based: Vec<u32> = config.positions().iter().map(|&p| p - 1).collect();
        Ok(self.rank(&zero_based))
    }

    /// Public configuration at `index` (1-based sites).
    pub fn config(&self, index: usize) -> Configuration {
        Configuration {
            n_sites: self.n_sites,
            positions: self.positions(index).iter().map(|&p| p + 1).collect(),
        }
    }

    /// Rank of the configuration at `index` after moving one particle from
    /// 0-based site `from` to `to`. The caller guarantees a particle is
    /// present at `from`. `scratch` must have length n_particles.
    pub fn rank_after_move(&self, index: usize, from: u32, to: u32, scratch: &mut [u32]) -> usize {
        let src = self.positions(index);
        // Merge: drop one `from`, insert `to`, keep sorted.
        let mut k = 0;
        let mut dropped = false;
        let mut inserted = false;
        for &p in src {
            if !dropped && p == from {
                dropped = true;
                continue;
            }
            if !inserted && to <= p {
                scratch[k] = to;
                k += 1;
                inserted = true;
            }
            scratch[k] = p;
            k += 1;
        }
        if !inserted {
            scratch[k] = to;
        }
        debug_assert!(dropped);
        self.rank(scratch)
    }

    /// Distance from `origin` to every configuration in the space.
    pub fn distances_from(&self, origin: &Configuration) -> Result<Vec<u64>> {
        if origin.n_sites() != self.n_sites || origin.particle_count() != self.n_particles {
            return Err(Error::Contract(
                "configuration does not belong to this space".into(),
            ));
        }
        let origin0: Vec<i64> = origin.positions().iter().map(|&p| p as i64 - 1).collect();
        Ok((0..self.size)
            .map(|idx| {
                self.positions(idx)
                    .iter()
                    .zip(&origin0)
                    .map(|(&x, &y)| (x as i64 - y).unsigned_abs())
                    .sum()
            })
            .collect())
    }
}

fn binomial_u128(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 0..k {
        result = result.saturating_mul(n - i) / (i + 1);
    }
    result
}
