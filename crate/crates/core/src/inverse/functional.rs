//! Parametric kernel recovery from a single scalar observation `<Phi, u(t)>`.

use super::{warn, HistoryElimination, RecoveryReport, MIN_GAP_CELLS};
use crate::error::{Error, Result};
use crate::forward::SourceModel;
use crate::kernels::MemoryKernel;
use crate::quad::cumulative_trapezoid;
use crate::volterra::{SecondKindSolver, TimeGrid};
use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;

/// Parametric family fitted to the observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    /// Parameters `(c, alpha)`.
    PowerLaw,
    /// Parameters `(c, alpha, lambda)`.
    Tempered,
}

impl KernelFamily {
    pub fn dimension(&self) -> usize {
        match self {
            KernelFamily::PowerLaw => 2,
            KernelFamily::Tempered => 3,
        }
    }

    /// Kernel from unconstrained coordinates `(ln c, logit alpha[, ln lambda])`.
    fn kernel(&self, x: &[f64]) -> Result<MemoryKernel> {
        let c = x[0].exp();
        let alpha = 1.0 / (1.0 + (-x[1]).exp());
        match self {
            KernelFamily::PowerLaw => MemoryKernel::power_law(c, alpha),
            KernelFamily::Tempered => MemoryKernel::tempered(c, alpha, x[2].exp()),
        }
    }

    fn params(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![x[0].exp(), 1.0 / (1.0 + (-x[1]).exp())];
        if *self == KernelFamily::Tempered {
            p.push(x[2].exp());
        }
        p
    }
}

#[derive(Clone, Debug)]
pub struct FunctionalConfig {
    pub family: KernelFamily,
    /// Start points per parameter in the multi-start grid.
    pub grid_points: usize,
    /// Number of best grid points refined by Nelder-Mead.
    pub refine_starts: usize,
    pub max_iters: u64,
    /// Differentiation order `m`; detected from the source when `None`.
    pub order: Option<usize>,
    /// Relative misfit below which the fit counts as converged.
    pub tolerance: f64,
    /// Search boxes `(low, high)` for `c`, `alpha` and the tempering rate.
    pub c_range: (f64, f64),
    pub alpha_range: (f64, f64),
    pub rate_range: (f64, f64),
}

impl FunctionalConfig {
    pub fn new(family: KernelFamily) -> Self {
        Self {
            family,
            grid_points: 8,
            refine_starts: 4,
            max_iters: 400,
            order: None,
            tolerance: 1e-6,
            c_range: (0.1, 10.0),
            alpha_range: (0.05, 0.95),
            rate_range: (0.05, 20.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FunctionalFit {
    pub family: KernelFamily,
    /// `(c, alpha)` or `(c, alpha, lambda)`.
    pub params: Vec<f64>,
    pub kernel: MemoryKernel,
    /// `sum (model - data)^2 / sum data^2` at the optimum.
    pub misfit: f64,
    pub order: usize,
    pub converged: bool,
}

/// Centered moving average of width 5, shrinking at the ends.
fn moving_average(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 2).min(n - 1);
            let r = (i - lo).min(hi - i);
            let s = &x[i - r..=i + r];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

/// Fourth-order central difference at interior nodes `2..n-2`, zero elsewhere.
fn derivative(x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    for i in 2..n.saturating_sub(2) {
        d[i] = (x[i - 2] - 8.0 * x[i - 1] + 8.0 * x[i + 1] - x[i + 2]) / (12.0 * h);
    }
    d
}

struct Model<'a> {
    family: KernelFamily,
    grid: TimeGrid,
    phi: &'a [f64],
    lambda: &'a [f64],
    /// Right-hand sides per excited mode: `1 * f` for `m = 0`, `f` for `m = 1`.
    rhs: Vec<(usize, Vec<f64>)>,
    target: Vec<f64>,
    /// Node range compared.
    range: std::ops::Range<usize>,
    order: usize,
    norm: f64,
}

impl Model<'_> {
    fn predict(&self, kernel: &MemoryKernel) -> Result<Vec<f64>> {
        let solver = SecondKindSolver::uniform(kernel, &self.grid)?;
        let mut out = vec![0.0; self.grid.n() + 1];
        for (k, g) in &self.rhs {
            let v = solver.solve(self.lambda[*k], g)?.values;
            for (o, x) in out.iter_mut().zip(&v) {
                *o += self.phi[*k] * x;
            }
        }
        Ok(if self.order == 1 {
            moving_average(&out)
        } else {
            out
        })
    }

    fn misfit(&self, x: &[f64]) -> f64 {
        let Ok(kernel) = self.family.kernel(x) else {
            return f64::INFINITY;
        };
        match self.predict(&kernel) {
            Ok(p) => {
                let s: f64 = self
                    .range
                    .clone()
                    .map(|i| (p[i] - self.target[i]).powi(2))
                    .sum();
                if s.is_finite() {
                    s / self.norm
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    }
}

struct Cost<'a, 'b>(&'a Model<'b>);

impl CostFunction for Cost<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.0.misfit(x))
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
        .collect()
}

/// Fits the kernel parameters of `config.family` to scalar data `<Phi, u(t)>`.
///
/// The late response is isolated as in [`super::shift_origin`] and compared on
/// `(t1, T]` with forward solves of the plain uniform rule from the shifted
/// origin. When `<Phi, A f(t1+)>` vanishes but `<Phi, A f'(t1+)>` does not,
/// both sides are differentiated once (moving average of width 5 followed by
/// fourth-order differences).
#[allow(clippy::too_many_arguments)]
pub fn recover_kernel_from_functional(
    data: &[f64],
    phi: &[f64],
    lambda: &[f64],
    source: &SourceModel,
    grid: &TimeGrid,
    elimination: &HistoryElimination,
    config: &FunctionalConfig,
) -> Result<RecoveryReport<FunctionalFit>> {
    let (i0, i1) = grid.window()?;
    let n = grid.n();
    let h = grid.h();
    let modes = phi.len();
    if lambda.len() != modes || source.mode_count() != modes {
        return Err(Error::Precondition(
            "functional, eigenvalue and source mode counts differ".into(),
        ));
    }
    if data.len() != n + 1 {
        return Err(Error::Precondition("data do not match the grid".into()));
    }
    if i1 - i0 < MIN_GAP_CELLS {
        return Err(Error::Precondition(format!(
            "gap spans fewer than {MIN_GAP_CELLS} cells"
        )));
    }
    if !source.respects_gap() {
        return Err(Error::Precondition(
            "source does not vanish on the gap".into(),
        ));
    }
    let s = i1 - 1;
    let y: Vec<f64> = match elimination {
        HistoryElimination::Exact(rows) => {
            if rows.len() != 1 || rows[0].len() != n + 1 {
                return Err(Error::Precondition(
                    "scalar history response must be one full-grid row".into(),
                ));
            }
            rows[0].clone()
        }
        HistoryElimination::Zero => vec![0.0; n + 1],
        HistoryElimination::Surrogate { terms } => {
            let (y, _) = super::surrogate_fit(data, grid, *terms)?;
            y
        }
    };
    let late: Vec<f64> = (s..=n).map(|j| data[j] - y[j]).collect();
    let sub = TimeGrid::new(grid.t_final() - grid.time(s), n - s)?;
    let fmax = source
        .coeffs
        .iter()
        .flatten()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let pmax = phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let excited: Vec<usize> = (0..modes)
        .filter(|&k| source.coeffs[k][s..].iter().any(|v| *v != 0.0))
        .collect();
    if excited
        .iter()
        .all(|&k| phi[k].abs() <= 1e-12 * pmax.max(f64::MIN_POSITIVE))
    {
        return Err(Error::Observability(
            "functional annihilates every excited mode".into(),
        ));
    }
    let scale: f64 = excited
        .iter()
        .map(|&k| (phi[k] * lambda[k]).abs())
        .sum::<f64>()
        * fmax;
    let a0: f64 = excited
        .iter()
        .map(|&k| phi[k] * lambda[k] * source.coeffs[k][i1])
        .sum();
    let a1: f64 = excited
        .iter()
        .map(|&k| phi[k] * lambda[k] * (source.coeffs[k][i1 + 1] - source.coeffs[k][i1]))
        .sum();
    let order = match config.order {
        Some(m) if m <= 1 => m,
        Some(m) => {
            return Err(Error::Unsupported(format!(
                "differentiation order {m} above 1"
            )))
        }
        None if a0.abs() > 1e-8 * scale => 0,
        None if a1.abs() > 1e-8 * scale => 1,
        None => {
            return Err(Error::Observability(
                "<Phi, A f^(m)(t1+)> vanishes for m = 0 and m = 1".into(),
            ));
        }
    };
    let rhs: Vec<(usize, Vec<f64>)> = excited
        .iter()
        .map(|&k| {
            let f = &source.coeffs[k][s..];
            (
                k,
                if order == 0 {
                    cumulative_trapezoid(f, h)
                } else {
                    f.to_vec()
                },
            )
        })
        .collect();
    let (target, range) = if order == 0 {
        (late, 1..n - s + 1)
    } else {
        (
            derivative(&moving_average(&late), h),
            4..(n - s).saturating_sub(3),
        )
    };
    let norm: f64 = range.clone().map(|i| target[i] * target[i]).sum();
    if !(norm > 0.0) {
        return Err(Error::Observability(
            "late observation is identically zero".into(),
        ));
    }
    let model = Model {
        family: config.family,
        grid: sub,
        phi,
        lambda,
        rhs,
        target,
        range,
        order,
        norm,
    };

    let p = config.family.dimension();
    let g = config.grid_points.max(1);
    let axes = [
        linspace(config.c_range.0.ln(), config.c_range.1.ln(), g),
        linspace(logit(config.alpha_range.0), logit(config.alpha_range.1), g),
        linspace(config.rate_range.0.ln(), config.rate_range.1.ln(), g),
    ];
    let starts: Vec<Vec<f64>> = (0..g.pow(p as u32))
        .map(|mut idx| {
            (0..p)
                .map(|d| {
                    let v = axes[d][idx % g];
                    idx /= g;
                    v
                })
                .collect()
        })
        .collect();
    let mut scored: Vec<(f64, Vec<f64>)> = starts
        .into_par_iter()
        .map(|x| (model.misfit(&x), x))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best: Vec<(f64, Vec<f64>)> = scored
        .into_iter()
        .take(config.refine_starts.max(1))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(c0, x0)| -> Result<(f64, Vec<f64>)> {
            let mut simplex = vec![x0.clone()];
            for d in 0..p {
                let mut v = x0.clone();
                v[d] += 0.25;
                simplex.push(v);
            }
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(1e-15)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            let res = Executor::new(Cost(&model), solver)
                .configure(|st| st.max_iters(config.max_iters))
                .run()
                .map_err(|e| Error::Numerical(format!("simplex search failed: {e}")))?;
            let st = res.state();
            match st.best_param.clone() {
                Some(x) if st.best_cost < c0 => Ok((st.best_cost, x)),
                _ => Ok((c0, x0)),
            }
        })
        .collect::<Result<_>>()?;
    let (misfit, x) = best
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one start");
    let mut warnings = Vec::new();
    let converged = misfit <= config.tolerance;
    if !converged {
        warn(
            &mut warnings,
            format!("optimizer stalled at relative misfit {misfit:.3e}; best candidate returned"),
        );
    }
    let kernel = config.family.kernel(&x)?;
    Ok(RecoveryReport {
        recovered: FunctionalFit {
            family: config.family,
            params: config.family.params(&x),
            kernel,
            misfit,
            order,
            converged,
        },
        gauge: 1.0,
        gauge_time: None,
        residuals: vec![misfit.sqrt()],
        unreliable: Vec::new(),
        warnings,
    })
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
