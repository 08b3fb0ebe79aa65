//! Recovery of the initial state and the source history on `(0, t0)` from
//! late observations with known kernel and eigenvalues.

use super::{warn, ObservationWindow, RecoveryReport};
use crate::error::{Error, Result};
use crate::kernels::MemoryKernel;
use crate::quad::cumulative_trapezoid;
use crate::volterra::SecondKindSolver;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Penalty `weight ||A||_2^2 (||D2 f||^2 + rho^2 ||f||^2)` on the history samples.
#[derive(Clone, Copy, Debug)]
pub struct HistoryConfig {
    pub weight: f64,
    pub rho: f64,
}

impl Default for HistoryConfig {
    fn default() -> Self {
        Self {
            weight: 1e-8,
            rho: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HistoryEstimate {
    /// Times `t_0 .. t_{n0-1}` of the recovered source samples.
    pub times: Vec<f64>,
    pub initial: Vec<f64>,
    /// `f_k(t_j)` for `j < n0`, one row per mode.
    pub history: Vec<Vec<f64>>,
}

struct ModeFit {
    initial: f64,
    history: Vec<f64>,
    residual: f64,
    notice: Option<String>,
}

/// Least-squares fit of `u_k(t_n) = s_k(t_n) u_k(0) + sum_j S_j(t_n) f_k(t_j)`
/// on the observed nodes `t_n >= t0`, with the response to the known source
/// on `[t0, T]` subtracted first.
///
/// The kernel must belong to a family whose transform has no meromorphic
/// continuation to the plane (power law, tempered, distributed order).
pub fn recover_history(
    m: &MemoryKernel,
    lambda: &[f64],
    window: &ObservationWindow,
    config: &HistoryConfig,
) -> Result<RecoveryReport<HistoryEstimate>> {
    if matches!(m, MemoryKernel::Tabulated(_)) {
        return Err(Error::Unsupported(
            "history recovery needs an analytic kernel family".into(),
        ));
    }
    if lambda.len() != window.mode_count() {
        return Err(Error::Precondition(
            "eigenvalue count differs from mode count".into(),
        ));
    }
    if !(config.weight >= 0.0 && config.rho >= 0.0) {
        return Err(Error::Domain(
            "regularization weights must be nonnegative".into(),
        ));
    }
    let grid = &window.grid;
    let (n0, _) = grid.window()?;
    let n = grid.n();
    let h = grid.h();
    let solver = SecondKindSolver::new(m, grid)?;
    let rows = n - n0 + 1;
    let unknowns = n0 + 1;
    let mut warnings = Vec::new();
    if rows < unknowns {
        warn(
            &mut warnings,
            format!("{rows} observations for {unknowns} unknowns; minimum-norm solution returned"),
        );
    }
    let fits: Vec<ModeFit> = (0..window.mode_count())
        .into_par_iter()
        .map(|k| -> Result<ModeFit> {
            let lam = lambda[k];
            let respond = |g: &[f64]| -> Result<Vec<f64>> {
                Ok(solver.solve(lam, g).map_err(|e| e.in_mode(k + 1))?.values[n0..].to_vec())
            };
            let mut known = window.source.coeffs[k].clone();
            known[..n0].iter_mut().for_each(|v| *v = 0.0);
            let base = respond(&cumulative_trapezoid(&known, h))?;
            let b = DVector::from_fn(rows, |i, _| window.data[k][n0 + i] - base[i]);
            let mut a = DMatrix::zeros(rows, unknowns);
            a.set_column(0, &DVector::from_vec(respond(&vec![1.0; n + 1])?));
            for j in 0..n0 {
                let mut e = vec![0.0; n + 1];
                e[j] = 1.0;
                a.set_column(
                    j + 1,
                    &DVector::from_vec(respond(&cumulative_trapezoid(&e, h))?),
                );
            }
            let scale = a.clone().svd(false, false).singular_values.max();
            if !(scale > 0.0) {
                return Ok(ModeFit {
                    initial: 0.0,
                    history: vec![0.0; n0],
                    residual: f64::NAN,
                    notice: Some(format!(
                        "mode {} skipped: data insensitive to the history",
                        k + 1
                    )),
                });
            }
            let pen = (config.weight).sqrt() * scale;
            let d2 = n0.saturating_sub(2);
            let mut stacked = DMatrix::zeros(rows + d2 + n0, unknowns);
            stacked.view_mut((0, 0), (rows, unknowns)).copy_from(&a);
            for i in 0..d2 {
                stacked[(rows + i, 1 + i)] = pen;
                stacked[(rows + i, 2 + i)] = -2.0 * pen;
                stacked[(rows + i, 3 + i)] = pen;
            }
            for i in 0..n0 {
                stacked[(rows + d2 + i, 1 + i)] = pen * config.rho;
            }
            let mut rhs = DVector::zeros(rows + d2 + n0);
            rhs.rows_mut(0, rows).copy_from(&b);
            let svd = stacked.svd(true, true);
            let tol = 1e-14 * svd.singular_values.max();
            let x = svd
                .solve(&rhs, tol)
                .map_err(|e| Error::Numerical(format!("mode {}: {e}", k + 1)))?;
            let residual = (&a * &x - &b).norm();
            Ok(ModeFit {
                initial: x[0],
                history: x.as_slice()[1..].to_vec(),
                residual,
                notice: None,
            })
        })
        .collect::<Result<_>>()?;
    let mut initial = Vec::new();
    let mut history = Vec::new();
    let mut residuals = Vec::new();
    for f in fits {
        if let Some(msg) = f.notice {
            warn(&mut warnings, msg);
        }
        initial.push(f.initial);
        history.push(f.history);
        residuals.push(f.residual);
    }
    Ok(RecoveryReport {
        recovered: HistoryEstimate {
            times: (0..n0).map(|j| grid.time(j)).collect(),
            initial,
            history,
        },
        gauge: 1.0,
        gauge_time: None,
        residuals,
        unreliable: Vec::new(),
        warnings,
    })
}
