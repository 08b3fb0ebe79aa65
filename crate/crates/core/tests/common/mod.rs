//! Synthetic fixtures shared by the integration tests.
#![allow(dead_code)]

use gfd_core::forward::{
    make_partitioned_source, simulate_modes, Profile, SourceBlock, SourceModel, SourceStructure,
};
use gfd_core::inverse::ObservationWindow;
use gfd_core::operators::dirichlet_eigenpairs;
use gfd_core::volterra::{SecondKindSolver, TimeGrid};
use gfd_core::MemoryKernel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Late window with its exact history response.
pub struct Synthetic {
    pub window: ObservationWindow,
    pub history: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

/// `u_k(0) = 1`, smooth source on `[0, t0]`, a one-node pulse at `t1` with
/// weights `2 / (h k)`, Dirichlet eigenvalues `k^2` on `(0, pi)`.
/// `t0 = 0.2 T`, `t1 = 0.3 T`.
pub fn pulse_data(m: &MemoryKernel, t_final: f64, n: usize, modes: usize) -> Synthetic {
    let grid = TimeGrid::new(t_final, n)
        .unwrap()
        .with_window_times(0.2 * t_final, 0.3 * t_final)
        .unwrap();
    let (i0, i1) = grid.window().unwrap();
    let h = grid.h();
    let lam = dirichlet_eigenpairs(std::f64::consts::PI, 0.0, modes)
        .unwrap()
        .eigenvalues()
        .to_vec();
    let weights = (1..=modes).map(|k| 2.0 / (h * k as f64)).collect();
    let late = make_partitioned_source(
        &[SourceBlock {
            profile: Profile::Indicator,
            start: grid.time(i1),
            end: grid.time(i1 + 1),
            weights,
        }],
        &grid,
        modes,
    )
    .unwrap();
    let mut f = late.clone();
    for (k, c) in f.coeffs.iter_mut().enumerate() {
        for (j, v) in c.iter_mut().enumerate().take(i0 + 1) {
            *v = (std::f64::consts::PI * grid.time(j) / grid.time(i0)).sin() / (k + 1) as f64;
        }
    }
    f.structure = SourceStructure::Gap;
    let solver = SecondKindSolver::new(m, &grid).unwrap();
    let u0 = vec![1.0; modes];
    let full = simulate_modes(&solver, &lam, &u0, &f.coeffs).unwrap();
    let hist = simulate_modes(&solver, &lam, &u0, &f.truncated_after(i0 + 1).coeffs).unwrap();
    let data = full.trajectories.into_iter().map(|t| t.values).collect();
    let history = hist.trajectories.into_iter().map(|t| t.values).collect();
    Synthetic {
        window: ObservationWindow::new(grid, data, f).unwrap(),
        history,
        eigenvalues: lam,
    }
}

/// Adds Gaussian noise of standard deviation `level * max|row|` to each row.
pub fn add_noise(rows: &mut [Vec<f64>], level: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in rows {
        let scale = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let normal = Normal::new(0.0, level * scale).unwrap();
        row.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
}

/// Relative discrete L2 error of `values` against `m` at `times`, skipping the first `skip` samples.
pub fn kernel_error(m: &MemoryKernel, times: &[f64], values: &[f64], skip: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (t, v) in times.iter().zip(values).skip(skip) {
        let e = m.eval(*t).unwrap();
        num += (v - e).powi(2);
        den += e * e;
    }
    (num / den).sqrt()
}

/// Zero-history source model on `grid` with the given late coefficients.
pub fn gap_source(grid: &TimeGrid, coeffs: Vec<Vec<f64>>) -> SourceModel {
    SourceModel::gap(grid, coeffs).unwrap()
}

/// Scalar observation `<delta_{x0}, u>` on Dirichlet modes of `(0, pi)`.
pub struct FunctionalData {
    pub grid: TimeGrid,
    pub data: Vec<f64>,
    pub history: Vec<f64>,
    pub phi: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub source: SourceModel,
}

/// Late source `psi(t) / k^2` on `[t1, T]` with `psi` an indicator (`order = 0`)
/// or a ramp (`order = 1`), `u(0) = 0` and a smooth source before `t0`.
pub fn functional_data(m: &MemoryKernel, order: usize, n: usize, modes: usize) -> FunctionalData {
    use gfd_core::operators::{functional_coefficients, ObservationFunctional};
    let grid = TimeGrid::new(1.0, n)
        .unwrap()
        .with_window_times(0.2, 0.3)
        .unwrap();
    let (i0, i1) = grid.window().unwrap();
    let op = dirichlet_eigenpairs(std::f64::consts::PI, 0.0, modes).unwrap();
    let x0 = std::f64::consts::PI / 11f64.sqrt();
    let phi = functional_coefficients(&op, &ObservationFunctional::PointValue(x0)).unwrap();
    let lam = op.eigenvalues().to_vec();
    let profile = if order == 0 {
        Profile::Indicator
    } else {
        Profile::Ramp
    };
    let weights = (1..=modes).map(|k| 1.0 / (k * k) as f64).collect();
    let late = make_partitioned_source(
        &[SourceBlock {
            profile,
            start: grid.time(i1),
            end: 1.0 + grid.h(),
            weights,
        }],
        &grid,
        modes,
    )
    .unwrap();
    let mut f = late;
    for (k, c) in f.coeffs.iter_mut().enumerate() {
        for (j, v) in c.iter_mut().enumerate().take(i0 + 1) {
            *v = (std::f64::consts::PI * grid.time(j) / grid.time(i0)).sin() / (k + 1) as f64;
        }
    }
    f.structure = SourceStructure::Gap;
    let solver = SecondKindSolver::new(m, &grid).unwrap();
    let u0 = vec![0.0; modes];
    let full = simulate_modes(&solver, &lam, &u0, &f.coeffs).unwrap();
    let hist = simulate_modes(&solver, &lam, &u0, &f.truncated_after(i0 + 1).coeffs).unwrap();
    let project = |r: &gfd_core::forward::SimulationResult| {
        gfd_core::forward::observe(r, &phi).unwrap().values
    };
    FunctionalData {
        data: project(&full),
        history: project(&hist),
        grid,
        phi,
        eigenvalues: lam,
        source: f,
    }
}
