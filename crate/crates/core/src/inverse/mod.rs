//! Inverse problems on a late observation window `[t0, T]` whose source
//! vanishes on the gap `(t0, t1)`.
//!
//! The gap decouples the unknown past from the late dynamics: on `[t0, t1]`
//! the data consist of the history response `Y` alone, and after `Y` is
//! removed the late response starts from rest. [`shift_origin`] performs this
//! elimination and re-indexes the late response from the last node at which
//! it vanishes.

mod functional;
mod history;
mod kernel;
mod measure;

pub use functional::{
    recover_kernel_from_functional, FunctionalConfig, FunctionalFit, KernelFamily,
};
pub use history::{recover_history, HistoryConfig, HistoryEstimate};
pub use kernel::{
    recover_kernel, recover_product, Epsilon, KernelConfig, KernelEstimate, ProductEstimate,
    Regularizer,
};
pub use measure::{recover_distributed_measure, MeasureConfig, MeasureEstimate};

use crate::error::{Error, Result};
use crate::forward::SourceModel;
use crate::quad::cumulative_trapezoid;
use crate::volterra::TimeGrid;
use nalgebra::{DMatrix, DVector};

/// Late-window data: per-mode samples on the full grid (entries before `t0`
/// are ignored) and the source, known on `[t0, T]`.
#[derive(Clone, Debug)]
pub struct ObservationWindow {
    pub grid: TimeGrid,
    pub data: Vec<Vec<f64>>,
    pub source: SourceModel,
}

impl ObservationWindow {
    pub fn new(grid: TimeGrid, data: Vec<Vec<f64>>, source: SourceModel) -> Result<Self> {
        grid.window()?;
        if data.len() != source.mode_count() {
            return Err(Error::Precondition(format!(
                "{} data modes for {} source modes",
                data.len(),
                source.mode_count()
            )));
        }
        if data.iter().any(|d| d.len() != grid.n() + 1) || source.grid.n() != grid.n() {
            return Err(Error::Precondition(
                "window samples do not match the grid".into(),
            ));
        }
        Ok(Self { grid, data, source })
    }

    pub fn mode_count(&self) -> usize {
        self.data.len()
    }
}

/// How the history response `Y` is removed from the data.
#[derive(Clone, Debug)]
pub enum HistoryElimination {
    /// `Y` supplied on the full grid, one row per mode (synthetic runs).
    Exact(Vec<Vec<f64>>),
    /// Zero initial state and zero source before `t0`.
    Zero,
    /// Exponential sum `sum_j c_j exp(-3^j (t - t0) / gap)` with `terms` terms,
    /// fitted on the gap and continued over `(t1, T]`.
    Surrogate { terms: usize },
}

/// Late responses re-indexed from their own origins.
#[derive(Clone, Debug)]
pub struct ShiftedWindow {
    /// Per mode, the full-grid index taken as the new origin.
    pub origins: Vec<usize>,
    /// `w_k(t_j) = u_k(t_{s+j}) - Y_k(t_{s+j})`, `j = 0..=N-s`.
    pub responses: Vec<Vec<f64>>,
    /// `(1 * f_k)(t_{s+j})` accumulated from the origin.
    pub forcing: Vec<Vec<f64>>,
    /// Root-mean-square misfit of the surrogate on the gap, per mode.
    pub surrogate_misfit: Option<Vec<f64>>,
    /// `max |u_k|` over the observed nodes, the reference for relative noise levels.
    pub data_scale: Vec<f64>,
    h: f64,
}

impl ShiftedWindow {
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Grid of mode `k` starting at its origin.
    pub fn grid(&self, k: usize) -> Result<TimeGrid> {
        let n = self.responses[k].len() - 1;
        TimeGrid::new(n as f64 * self.h, n)
    }

    /// Whether the late source of mode `k` is identically zero.
    pub fn is_excited(&self, k: usize) -> bool {
        self.forcing[k].iter().any(|v| *v != 0.0)
    }
}

/// Minimum gap length in cells.
pub const MIN_GAP_CELLS: usize = 3;

fn surrogate_fit(u: &[f64], grid: &TimeGrid, terms: usize) -> Result<(Vec<f64>, f64)> {
    let (i0, i1) = grid.window()?;
    let gap = grid.time(i1) - grid.time(i0);
    let rows = i1 - i0;
    let terms = terms.clamp(1, rows / 3);
    let basis = |t: f64, j: usize| (-(3f64.powi(j as i32) - 1.0) * (t - grid.time(i0)) / gap).exp();
    let a = DMatrix::from_fn(rows, terms, |r, j| basis(grid.time(i0 + r), j));
    let b = DVector::from_fn(rows, |r, _| u[i0 + r]);
    let svd = a.clone().svd(true, true);
    let c = svd
        .solve(&b, 1e-12 * svd.singular_values.max())
        .map_err(|e| Error::Numerical(format!("surrogate fit failed: {e}")))?;
    let misfit = ((&a * &c) - &b).norm() / (rows as f64).sqrt();
    let y = (0..=grid.n())
        .map(|n| (0..terms).map(|j| c[j] * basis(grid.time(n), j)).sum())
        .collect();
    Ok((y, misfit))
}

/// Removes the history response and re-indexes each mode from the last node
/// before its late source starts.
///
/// The origin of mode `k` is `s_k = first - 1`, where `first` is the first
/// node `>= t1` with `f_k != 0` (or `t1` for an unexcited mode). Piecewise-linear
/// sources ramp up on `(s_k, first)`, so `w_k(0) = 0` holds exactly.
pub fn shift_origin(
    window: &ObservationWindow,
    elimination: &HistoryElimination,
) -> Result<ShiftedWindow> {
    let grid = &window.grid;
    let (i0, i1) = grid.window()?;
    if i1 - i0 < MIN_GAP_CELLS {
        return Err(Error::Precondition(format!(
            "gap spans {} cells, at least {MIN_GAP_CELLS} are needed",
            i1 - i0
        )));
    }
    if !window.source.respects_gap() {
        return Err(Error::Precondition(
            "source does not vanish on the gap".into(),
        ));
    }
    let k = window.mode_count();
    if let HistoryElimination::Exact(y) = elimination {
        if y.len() != k || y.iter().any(|r| r.len() != grid.n() + 1) {
            return Err(Error::Precondition(
                "exact history response has the wrong shape".into(),
            ));
        }
    }
    let h = grid.h();
    let mut origins = Vec::with_capacity(k);
    let mut responses = Vec::with_capacity(k);
    let mut forcing = Vec::with_capacity(k);
    let mut misfits = Vec::new();
    let data_scale = window
        .data
        .iter()
        .map(|d| d[i0..].iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .collect();
    for j in 0..k {
        let f = &window.source.coeffs[j];
        let first = (i1..=grid.n()).find(|&n| f[n] != 0.0).unwrap_or(i1);
        let s = first - 1;
        let y: Vec<f64> = match elimination {
            HistoryElimination::Exact(y) => y[j].clone(),
            HistoryElimination::Zero => vec![0.0; grid.n() + 1],
            HistoryElimination::Surrogate { terms } => {
                let (y, m) = surrogate_fit(&window.data[j], grid, *terms)?;
                misfits.push(m);
                y
            }
        };
        let w: Vec<f64> = (s..=grid.n()).map(|n| window.data[j][n] - y[n]).collect();
        let g = cumulative_trapezoid(&f[s..], h);
        origins.push(s);
        responses.push(w);
        forcing.push(g);
    }
    let surrogate_misfit =
        matches!(elimination, HistoryElimination::Surrogate { .. }).then_some(misfits);
    Ok(ShiftedWindow {
        origins,
        responses,
        forcing,
        surrogate_misfit,
        data_scale,
        h,
    })
}

/// Outcome of a recovery with its diagnostics.
#[derive(Clone, Debug)]
pub struct RecoveryReport<T> {
    pub recovered: T,
    /// Gauge constant `c` applied to the output (1 when no gauge is involved).
    pub gauge: f64,
    /// Time at which the gauge `M = 1` was imposed.
    pub gauge_time: Option<f64>,
    /// Residual norm per mode (`NaN` for skipped modes).
    pub residuals: Vec<f64>,
    /// Sample indices whose values should not be trusted.
    pub unreliable: Vec<usize>,
    pub warnings: Vec<String>,
}

fn warn(warnings: &mut Vec<String>, msg: String) {
    log::warn!("{msg}");
    warnings.push(msg);
}
