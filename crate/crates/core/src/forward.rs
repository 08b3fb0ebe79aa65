//! Direct problem `d/dt [u - A M * u] = f` by eigenfunction expansion.
//!
//! Each mode obeys `u_k + lambda_k M * u_k = u_k(0) + 1 * f_k`, which is
//! solved by [`SecondKindSolver`]. Sources are sampled on the time grid and
//! integrated by the trapezoid rule.

use crate::error::{Error, Result};
use crate::kernels::MemoryKernel;
use crate::operators::{FractionalSpectrum, SpectralOperator};
use crate::quad::cumulative_trapezoid;
use crate::volterra::{ModeTrajectory, SecondKindSolver, TimeGrid};
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Time profile of one source block, supported on `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Constant 1.
    Indicator,
    /// Linear decay from 1 at the start to 0 at the end.
    Hat,
    /// Linear growth from 0 at the start, so `psi(t_i+) = 0` and `psi'(t_i+) != 0`.
    Ramp,
}

impl Profile {
    fn eval(&self, t: f64, start: f64, end: f64) -> f64 {
        let s = (t - start) / (end - start);
        match self {
            Profile::Indicator => 1.0,
            Profile::Hat => 1.0 - s,
            Profile::Ramp => s,
        }
    }
}

/// One block `psi_i(t) w_i` of a partitioned source.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceBlock {
    pub profile: Profile,
    pub start: f64,
    pub end: f64,
    /// Mode vector `w_i`, one entry per mode.
    pub weights: Vec<f64>,
}

/// Node ranges `[first, last)` of a partitioned source's blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSupport {
    pub first: usize,
    pub last: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SourceStructure {
    Free,
    /// Zero on the grid nodes strictly inside `(t0, t1)`.
    Gap,
    PartitionedGap(Vec<BlockSupport>),
}

/// Per-mode source samples `f_k(t_n)`.
#[derive(Clone, Debug)]
pub struct SourceModel {
    pub grid: TimeGrid,
    pub coeffs: Vec<Vec<f64>>,
    pub structure: SourceStructure,
    pub warnings: Vec<String>,
}

impl SourceModel {
    pub fn free(grid: &TimeGrid, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        for c in &coeffs {
            if c.len() != grid.n() + 1 {
                return Err(Error::Precondition(
                    "source samples do not match the grid".into(),
                ));
            }
        }
        Ok(Self {
            grid: grid.clone(),
            coeffs,
            structure: SourceStructure::Free,
            warnings: Vec::new(),
        })
    }

    /// Zero source with `modes` modes.
    pub fn zero(grid: &TimeGrid, modes: usize) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![vec![0.0; grid.n() + 1]; modes],
            structure: SourceStructure::Free,
            warnings: Vec::new(),
        }
    }

    /// Source that must vanish on the window gap.
    pub fn gap(grid: &TimeGrid, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let mut s = Self::free(grid, coeffs)?;
        let (i0, i1) = grid.window()?;
        for (k, c) in s.coeffs.iter().enumerate() {
            if let Some(j) = (i0 + 1..i1).find(|&j| c[j] != 0.0) {
                return Err(Error::Precondition(format!(
                    "mode {} source is nonzero at t = {} inside the gap",
                    k + 1,
                    grid.time(j)
                )));
            }
        }
        s.structure = SourceStructure::Gap;
        Ok(s)
    }

    pub fn mode_count(&self) -> usize {
        self.coeffs.len()
    }

    /// `f` with every sample at nodes `>= from` set to zero.
    pub fn truncated_after(&self, from: usize) -> Self {
        let mut s = self.clone();
        for c in s.coeffs.iter_mut() {
            c[from..].iter_mut().for_each(|v| *v = 0.0);
        }
        s.structure = SourceStructure::Free;
        s
    }

    /// `f` with every sample at nodes `< until` set to zero.
    pub fn truncated_before(&self, until: usize) -> Self {
        let mut s = self.clone();
        for c in s.coeffs.iter_mut() {
            c[..until].iter_mut().for_each(|v| *v = 0.0);
        }
        s.structure = SourceStructure::Free;
        s
    }

    /// Whether the source vanishes identically on the grid nodes strictly inside the gap.
    pub fn respects_gap(&self) -> bool {
        match self.grid.window() {
            Ok((i0, i1)) => self
                .coeffs
                .iter()
                .all(|c| c[i0 + 1..i1].iter().all(|v| *v == 0.0)),
            Err(_) => false,
        }
    }
}

/// Builds `f_k(t) = sum_i psi_i(t) (w_i)_k` from blocks placed after the gap.
///
/// Block supports are left-closed and snapped to grid nodes; the first nonzero
/// sample of an Indicator or Hat block sits at its first node. A warning is
/// recorded when the block vectors span fewer than all modes.
pub fn make_partitioned_source(
    blocks: &[SourceBlock],
    grid: &TimeGrid,
    modes: usize,
) -> Result<SourceModel> {
    let (i0, i1) = grid.window()?;
    if blocks.is_empty() {
        return Err(Error::Precondition(
            "partitioned source needs at least one block".into(),
        ));
    }
    let h = grid.h();
    let snap = |t: f64| (t / h - 1e-9).ceil().max(0.0) as usize;
    let mut supports = Vec::with_capacity(blocks.len());
    let mut coeffs = vec![vec![0.0; grid.n() + 1]; modes];
    for (b, blk) in blocks.iter().enumerate() {
        if blk.weights.len() != modes {
            return Err(Error::Precondition(format!(
                "block {} has {} weights for {modes} modes",
                b + 1,
                blk.weights.len()
            )));
        }
        if !(blk.end > blk.start) {
            return Err(Error::Precondition(format!(
                "block {} has empty support",
                b + 1
            )));
        }
        let first = snap(blk.start);
        let last = snap(blk.end).min(grid.n() + 1);
        if first < i1 && last > i0 + 1 {
            return Err(Error::Precondition(format!(
                "block {} support [{}, {}) reaches into the gap ({}, {})",
                b + 1,
                blk.start,
                blk.end,
                grid.time(i0),
                grid.time(i1)
            )));
        }
        if first < i1 {
            return Err(Error::Precondition(format!(
                "block {} starts before t1",
                b + 1
            )));
        }
        if let Some(prev) = supports.last() {
            let prev: &BlockSupport = prev;
            if first < prev.last {
                return Err(Error::Precondition(format!(
                    "block {} overlaps or precedes block {}",
                    b + 1,
                    b
                )));
            }
        }
        if first >= last {
            return Err(Error::Precondition(format!(
                "block {} contains no grid node",
                b + 1
            )));
        }
        for j in first..last {
            let psi = blk.profile.eval(grid.time(j), grid.time(first), blk.end);
            for k in 0..modes {
                coeffs[k][j] += psi * blk.weights[k];
            }
        }
        supports.push(BlockSupport { first, last });
    }
    let mut warnings = Vec::new();
    let w = DMatrix::from_fn(modes, blocks.len(), |k, i| blocks[i].weights[k]);
    let rank = w.rank(1e-12 * w.amax().max(f64::MIN_POSITIVE));
    if rank < modes {
        let msg = format!("block vectors span {rank} of {modes} modes; recovery holds on the spanned subspace only");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(SourceModel {
        grid: grid.clone(),
        coeffs,
        structure: SourceStructure::PartitionedGap(supports),
        warnings,
    })
}

/// Mode trajectories of one forward run.
#[derive(Clone, Debug)]
pub struct SimulationResult {
    pub grid: TimeGrid,
    pub eigenvalues: Vec<f64>,
    pub initial: Vec<f64>,
    pub trajectories: Vec<ModeTrajectory>,
    /// `max |u_k + lambda_k M * u_k - u_k(0) - 1 * f_k| / max |u_k|` on the solver mesh.
    pub residuals: Vec<f64>,
}

impl SimulationResult {
    pub fn mode_count(&self) -> usize {
        self.trajectories.len()
    }

    /// `sum_k u_k(t_n) v_k(x)` at the given points.
    pub fn field(&self, op: &SpectralOperator, time_index: usize, xs: &[f64]) -> Result<Vec<f64>> {
        if op.mode_count() < self.mode_count() {
            return Err(Error::Precondition(
                "operator has fewer modes than the simulation".into(),
            ));
        }
        if time_index > self.grid.n() {
            return Err(Error::Precondition(format!(
                "time index {time_index} beyond the grid"
            )));
        }
        Ok(xs
            .iter()
            .map(|&x| {
                self.trajectories
                    .iter()
                    .enumerate()
                    .map(|(k, u)| u.values[time_index] * op.eval_mode(k, x))
                    .sum()
            })
            .collect())
    }

    /// Field on a uniform mesh of `points` nodes over `[0, L]`, with a bound on
    /// the omitted modes when their initial amplitudes `decay(k)` (one-based) are known.
    pub fn field_snapshot(
        &self,
        op: &SpectralOperator,
        time_index: usize,
        points: usize,
        decay: Option<&dyn Fn(usize) -> f64>,
    ) -> Result<FieldSnapshot> {
        let points = points.max(2);
        let x: Vec<f64> = (0..points)
            .map(|i| op.length() * i as f64 / (points - 1) as f64)
            .collect();
        let values = self.field(op, time_index, &x)?;
        let tail_bound = decay.map(|d| {
            let k = self.mode_count();
            (2.0 / op.length()).sqrt() * (k + 1..=100 * k.max(1)).map(|j| d(j).abs()).sum::<f64>()
        });
        Ok(FieldSnapshot {
            time: self.grid.time(time_index),
            x,
            values,
            tail_bound,
        })
    }
}

#[derive(Clone, Debug)]
pub struct FieldSnapshot {
    pub time: f64,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub tail_bound: Option<f64>,
}

/// Solves every mode with a prepared solver plan.
pub fn simulate_modes(
    solver: &SecondKindSolver,
    eigenvalues: &[f64],
    initial: &[f64],
    source: &[Vec<f64>],
) -> Result<SimulationResult> {
    let grid = solver.grid().clone();
    let k = eigenvalues.len();
    if initial.len() != k || source.len() != k {
        return Err(Error::Precondition(format!(
            "{k} eigenvalues, {} initial values, {} source modes",
            initial.len(),
            source.len()
        )));
    }
    let h = grid.h();
    let solved: Vec<(ModeTrajectory, f64)> = (0..k)
        .into_par_iter()
        .map(|j| -> Result<(ModeTrajectory, f64)> {
            let f = &source[j];
            if f.len() != grid.n() + 1 {
                return Err(
                    Error::Precondition("source samples do not match the grid".into())
                        .in_mode(j + 1),
                );
            }
            let g: Vec<f64> = cumulative_trapezoid(f, h)
                .into_iter()
                .map(|v| v + initial[j])
                .collect();
            let gm = solver.to_mesh(&g);
            let v = solver
                .solve_mesh(eigenvalues[j], &gm)
                .map_err(|e| e.in_mode(j + 1))?;
            let mv = solver.apply_mesh(&v);
            let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let defect = v.iter().zip(&mv).zip(&gm).fold(0.0f64, |a, ((x, m), g)| {
                a.max((x + eigenvalues[j] * m - g).abs())
            });
            let rel = if scale > 0.0 { defect / scale } else { defect };
            Ok((
                ModeTrajectory {
                    grid: grid.clone(),
                    values: solver.to_grid(&v),
                },
                rel,
            ))
        })
        .collect::<Result<_>>()?;
    let (trajectories, residuals) = solved.into_iter().unzip();
    Ok(SimulationResult {
        grid,
        eigenvalues: eigenvalues.to_vec(),
        initial: initial.to_vec(),
        trajectories,
        residuals,
    })
}

/// Forward run for the spectrum `spec` and kernel `m`.
pub fn simulate(
    spec: &FractionalSpectrum,
    m: &MemoryKernel,
    u0: &[f64],
    f: &SourceModel,
    grid: &TimeGrid,
) -> Result<SimulationResult> {
    if f.grid.n() != grid.n() || f.grid.t_final() != grid.t_final() {
        return Err(Error::Precondition(
            "source grid differs from simulation grid".into(),
        ));
    }
    let solver = SecondKindSolver::new(m, grid)?;
    simulate_modes(&solver, &spec.eigenvalues, u0, &f.coeffs)
}

/// Scalar observation with the warnings raised while forming it.
#[derive(Clone, Debug)]
pub struct Observation {
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

/// `sum_k Phi_k u_k(t)` on the grid.
pub fn observe(result: &SimulationResult, phi: &[f64]) -> Result<Observation> {
    if phi.len() != result.mode_count() {
        return Err(Error::Precondition(format!(
            "{} functional coefficients for {} modes",
            phi.len(),
            result.mode_count()
        )));
    }
    let mut warnings = Vec::new();
    if phi.iter().all(|p| p.abs() < 1e-14) {
        let msg = "functional annihilates every simulated mode".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let n = result.grid.n();
    let values = (0..=n)
        .map(|i| {
            result
                .trajectories
                .iter()
                .zip(phi)
                .map(|(u, p)| p * u.values[i])
                .sum()
        })
        .collect();
    Ok(Observation { values, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace::mittag_leffler;
    use crate::operators::dirichlet_eigenpairs;
    use std::f64::consts::PI;

    fn heat_spectrum(k: usize) -> FractionalSpectrum {
        let op = dirichlet_eigenpairs(PI, 0.0, k).unwrap();
        let l = op.eigenvalues().to_vec();
        FractionalSpectrum::from_eigenvalues(op, l).unwrap()
    }

    #[test]
    fn heat_limit_first_mode() {
        let grid = TimeGrid::new(1.0, 512).unwrap();
        let spec = heat_spectrum(3);
        let r = simulate(
            &spec,
            &MemoryKernel::unit(&grid),
            &[1.0, 0.0, 0.0],
            &SourceModel::zero(&grid, 3),
            &grid,
        )
        .unwrap();
        for (t, u) in grid.times().iter().zip(&r.trajectories[0].values) {
            assert!((u - (-t).exp()).abs() < 1e-4);
        }
        assert!(r.trajectories[1].values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn source_driven_ode_limit() {
        let grid = TimeGrid::new(1.0, 512).unwrap();
        let spec = heat_spectrum(1);
        let f = SourceModel::free(&grid, vec![vec![1.0; 513]]).unwrap();
        let r = simulate(&spec, &MemoryKernel::unit(&grid), &[0.0], &f, &grid).unwrap();
        for (t, u) in grid.times().iter().zip(&r.trajectories[0].values) {
            assert!((u - (1.0 - (-t).exp())).abs() < 1e-4);
        }
    }

    #[test]
    fn power_law_modes_follow_mittag_leffler() {
        let grid = TimeGrid::new(1.0, 512).unwrap();
        let spec = heat_spectrum(3);
        let m = MemoryKernel::power_law(1.0, 0.6).unwrap();
        let u0 = [1.0, 0.5, -0.2];
        let r = simulate(&spec, &m, &u0, &SourceModel::zero(&grid, 3), &grid).unwrap();
        for k in 0..3 {
            let lam = spec.eigenvalues[k];
            for (t, u) in grid
                .times()
                .iter()
                .zip(&r.trajectories[k].values)
                .step_by(16)
            {
                let e = u0[k] * mittag_leffler(0.6, -lam * t.powf(0.6)).unwrap();
                assert!((u - e).abs() < 1e-4, "mode {k} t {t}");
            }
        }
        assert!(r.residuals.iter().all(|&x| x <= 1e-10));
    }

    #[test]
    fn partitioned_source_contracts() {
        let grid = TimeGrid::new(1.0, 100)
            .unwrap()
            .with_window(20, 30)
            .unwrap();
        let one = SourceBlock {
            profile: Profile::Indicator,
            start: 0.3,
            end: 0.4,
            weights: vec![1.0, 0.0],
        };
        let s = make_partitioned_source(std::slice::from_ref(&one), &grid, 2).unwrap();
        assert_eq!(s.coeffs[0][30], 1.0);
        assert_eq!(s.coeffs[0][39], 1.0);
        assert_eq!(s.coeffs[0][40], 0.0);
        assert!(s.coeffs[1].iter().all(|v| *v == 0.0));
        assert_eq!(s.warnings.len(), 1);
        assert!(s.respects_gap());
        let two = SourceBlock {
            profile: Profile::Hat,
            start: 0.4,
            end: 0.6,
            weights: vec![0.0, 1.0],
        };
        let s = make_partitioned_source(&[one.clone(), two.clone()], &grid, 2).unwrap();
        assert!(s.warnings.is_empty());
        for j in 0..=100 {
            assert!(s.coeffs[0][j] == 0.0 || s.coeffs[1][j] == 0.0);
        }
        assert!(make_partitioned_source(&[two, one.clone()], &grid, 2).is_err());
        let inside = SourceBlock {
            start: 0.22,
            end: 0.25,
            ..one
        };
        assert!(matches!(
            make_partitioned_source(&[inside], &grid, 2),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn gap_source_checked() {
        let grid = TimeGrid::new(1.0, 10).unwrap().with_window(2, 5).unwrap();
        let mut c = vec![1.0; 11];
        assert!(SourceModel::gap(&grid, vec![c.clone()]).is_err());
        c[3] = 0.0;
        c[4] = 0.0;
        assert!(SourceModel::gap(&grid, vec![c]).is_ok());
    }

    #[test]
    fn observation_warnings() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let spec = heat_spectrum(2);
        let r = simulate(
            &spec,
            &MemoryKernel::unit(&grid),
            &[1.0, 1.0],
            &SourceModel::zero(&grid, 2),
            &grid,
        )
        .unwrap();
        let o = observe(&r, &[0.0, 0.0]).unwrap();
        assert!(o.values.iter().all(|v| *v == 0.0));
        assert_eq!(o.warnings.len(), 1);
        assert!(observe(&r, &[1.0]).is_err());
        let o = observe(&r, &[1.0, 0.0]).unwrap();
        assert_eq!(o.values, r.trajectories[0].values);
    }

    #[test]
    fn field_reconstruction() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let op = dirichlet_eigenpairs(PI, 0.0, 2).unwrap();
        let spec = FractionalSpectrum::from_eigenvalues(op.clone(), vec![1.0, 4.0]).unwrap();
        let r = simulate(
            &spec,
            &MemoryKernel::unit(&grid),
            &[1.0, 0.0],
            &SourceModel::zero(&grid, 2),
            &grid,
        )
        .unwrap();
        let snap = r
            .field_snapshot(&op, 0, 256, Some(&|k: usize| 1.0 / (k * k * k) as f64))
            .unwrap();
        assert_eq!(snap.x.len(), 256);
        assert!((snap.values[128] - op.eval_mode(0, snap.x[128])).abs() < 1e-15);
        assert!(snap.tail_bound.unwrap() > 0.0);
    }
}
