use std::time::Instant;

use dysonflow::dyson::{eigenvector_sde_simulate, SpectralPath, VectorFlowParams};
use dysonflow::ensemble::sample_goe;
use nalgebra::DMatrix;

fn main() {
    for &n in &[100usize, 400, 500, 1000] {
        let h = sample_goe(n, 1).unwrap();
        let t0 = Instant::now();
        let e = h.clone().symmetric_eigen();
        let full = t0.elapsed();
        let t0 = Instant::now();
        let v = h.symmetric_eigenvalues();
        let vals = t0.elapsed();
        println!(
            "N={n}: full eigen {:?}, values-only {:?} (checks {:.3} {:.3})",
            full,
            vals,
            e.eigenvalues[0],
            v[0]
        );
    }

    // SDE stepping cost at N=8, micro_dt 1e-4, t_end 0.1 (1000 steps/trial).
    let n = 8;
    let lambda: Vec<f64> = (0..n).map(|k| -1.5 + 3.0 * k as f64 / (n - 1) as f64).collect();
    let path = SpectralPath::frozen(lambda, 0.1).unwrap();
    let u0 = DMatrix::<f64>::identity(n, n);
    let params = VectorFlowParams::new(1e-4, 0.02);
    let trials = 200;
    let t0 = Instant::now();
    let mut acc = 0.0;
    for t in 0..trials {
        let out = eigenvector_sde_simulate(&path, &u0, &params, t).unwrap();
        acc += out.frame[(0, 0)];
    }
    let el = t0.elapsed();
    println!(
        "SDE N=8 t=0.1 dt=1e-4: {:?}/trial ({} trials, acc {acc:.3}) -> 2e5 trials ~ {:.0} s",
        el / trials as u32,
        trials,
        el.as_secs_f64() / trials as f64 * 2e5
    );
}
