//! Kernel recovery with known eigenvalues, and joint recovery of the products
//! `lambda_k M` when the eigenvalues are unknown.

use super::{
    shift_origin, warn, HistoryElimination, ObservationWindow, RecoveryReport, ShiftedWindow,
};
use crate::error::{Error, Result};
use crate::volterra::{
    deconvolve_discrepancy, deconvolve_first_kind, deconvolve_tikhonov,
    deconvolve_tikhonov_discrepancy, estimate_noise, Deconvolution, TimeGrid,
};
use rayon::prelude::*;

/// Regularization of the per-mode first-kind equations.
///
/// Lavrentiev keeps the causal forward sweep and suits exact data. Responses
/// to node pulses integrated by the trapezoid rule leave the alternating grid
/// mode almost invisible in `W`, so noisy data need the second-difference
/// Tikhonov penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    Lavrentiev,
    Tikhonov,
}

/// Choice of the regularization parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Epsilon {
    Fixed(f64),
    /// Discrepancy principle. The noise standard deviation of mode `k` is
    /// `relative_noise * max |u_k|` over the window, or estimated from the
    /// data when `None`.
    Discrepancy {
        relative_noise: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug)]
pub struct KernelConfig {
    pub regularizer: Regularizer,
    pub epsilon: Epsilon,
    /// Relative cross-mode spread above which a warning is raised.
    pub spread_threshold: f64,
    /// Modes whose forcing energy `int g^2` is below this are excluded.
    pub min_excitation: f64,
    /// Tolerance of the cross-mode proportionality check in [`recover_product`].
    pub proportionality_tolerance: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            regularizer: Regularizer::Lavrentiev,
            epsilon: Epsilon::Fixed(1e-12),
            spread_threshold: 0.05,
            min_excitation: 1e-12,
            proportionality_tolerance: 1e-2,
        }
    }
}

/// Kernel samples on the shifted window.
#[derive(Clone, Debug)]
pub struct KernelEstimate {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Per-mode estimates (`None` for excluded modes), truncated to `times`.
    pub per_mode: Vec<Option<Vec<f64>>>,
    /// Weighted relative `L2` deviation of the mode estimates from the aggregate.
    pub spread: f64,
}

/// Unreliable leading nodes of every deconvolution.
const UNRELIABLE: [usize; 2] = [0, 1];

fn excitation(g: &[f64], h: f64) -> f64 {
    h * g.iter().map(|v| v * v).sum::<f64>()
}

/// Solves `W m = r` with `r = (1 * f - w) / scale`; `sigma` is the noise level of `w`.
fn deconvolve(
    w: &[f64],
    r: &[f64],
    scale: f64,
    sigma: Option<f64>,
    config: &KernelConfig,
    grid: &TimeGrid,
) -> Result<Deconvolution> {
    match (config.regularizer, config.epsilon) {
        (Regularizer::Lavrentiev, Epsilon::Fixed(e)) => deconvolve_first_kind(w, r, e, grid),
        (Regularizer::Lavrentiev, Epsilon::Discrepancy { .. }) => {
            deconvolve_discrepancy(w, r, sigma.map(|s| s / scale), grid)
        }
        (Regularizer::Tikhonov, Epsilon::Fixed(e)) => deconvolve_tikhonov(w, r, e, grid),
        (Regularizer::Tikhonov, Epsilon::Discrepancy { .. }) => {
            let s = sigma.unwrap_or_else(|| estimate_noise(w));
            deconvolve_tikhonov_discrepancy(w, r, s, s / scale, grid)
        }
    }
}

/// Noise level of the samples of `w` from the level relative to the data.
fn mode_sigma(eps: &Epsilon, data_scale: f64) -> Option<f64> {
    match eps {
        Epsilon::Discrepancy {
            relative_noise: Some(level),
        } => Some(level * data_scale),
        _ => None,
    }
}

fn solve_modes(
    shifted: &ShiftedWindow,
    scales: &[Option<f64>],
    config: &KernelConfig,
) -> Result<Vec<Option<Deconvolution>>> {
    (0..shifted.responses.len())
        .into_par_iter()
        .map(|k| -> Result<Option<Deconvolution>> {
            let Some(scale) = scales[k] else {
                return Ok(None);
            };
            let g = &shifted.forcing[k];
            if excitation(g, shifted.h()) < config.min_excitation {
                return Ok(None);
            }
            // The late response vanishes at the origin; noise there is discarded.
            let mut w = shifted.responses[k].clone();
            w[0] = 0.0;
            let grid = shifted.grid(k)?;
            let r: Vec<f64> = g.iter().zip(&w).map(|(g, w)| (g - w) / scale).collect();
            let sigma = mode_sigma(&config.epsilon, shifted.data_scale[k]);
            deconvolve(&w, &r, scale, sigma, config, &grid)
                .map(Some)
                .map_err(|e| e.in_mode(k + 1))
        })
        .collect()
}

/// Recovers `M` from late modal data with known eigenvalues `lambda`.
///
/// Each excited mode gives `lambda_k M * w_k = 1 * f_k - w_k` on its shifted
/// window; the per-mode solutions are averaged with weights inverse to their
/// relative residuals.
pub fn recover_kernel(
    window: &ObservationWindow,
    elimination: &HistoryElimination,
    lambda: &[f64],
    config: &KernelConfig,
) -> Result<RecoveryReport<KernelEstimate>> {
    if lambda.len() != window.mode_count() {
        return Err(Error::Precondition(format!(
            "{} eigenvalues for {} modes",
            lambda.len(),
            window.mode_count()
        )));
    }
    if lambda.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Domain("eigenvalues must be positive".into()));
    }
    let shifted = shift_origin(window, elimination)?;
    let scales: Vec<Option<f64>> = lambda.iter().map(|l| Some(*l)).collect();
    let sols = solve_modes(&shifted, &scales, config)?;
    let mut warnings = Vec::new();
    let len = sols
        .iter()
        .flatten()
        .map(|d| d.values.len())
        .min()
        .ok_or_else(|| Error::Precondition("no mode is excited by the late source".into()))?;
    let mut weights = Vec::new();
    let mut residuals = vec![f64::NAN; sols.len()];
    for (k, d) in sols.iter().enumerate() {
        if let Some(d) = d {
            let rnorm = (shifted.forcing[k]
                .iter()
                .zip(&shifted.responses[k])
                .map(|(g, w)| ((g - w) / lambda[k]).powi(2))
                .sum::<f64>())
            .sqrt();
            let rel = d.residual / rnorm.max(f64::MIN_POSITIVE);
            residuals[k] = d.residual;
            weights.push((k, 1.0 / (rel * rel + 1e-24)));
        } else {
            warn(
                &mut warnings,
                format!("mode {} excluded: excitation below threshold", k + 1),
            );
        }
    }
    let wsum: f64 = weights.iter().map(|p| p.1).sum();
    let mut values = vec![0.0; len];
    for &(k, wk) in &weights {
        let d = sols[k].as_ref().expect("weighted modes are solved");
        for (v, x) in values.iter_mut().zip(&d.values) {
            *v += wk / wsum * x;
        }
    }
    let reliable = |l: usize| !UNRELIABLE.contains(&l);
    let norm_agg: f64 = (0..len)
        .filter(|&l| reliable(l))
        .map(|l| values[l] * values[l])
        .sum::<f64>()
        .sqrt();
    let mut dev = 0.0;
    for &(k, wk) in &weights {
        let d = sols[k].as_ref().expect("weighted modes are solved");
        let e: f64 = (0..len)
            .filter(|&l| reliable(l))
            .map(|l| (d.values[l] - values[l]).powi(2))
            .sum();
        dev += wk / wsum * e;
    }
    let spread = dev.sqrt() / norm_agg.max(f64::MIN_POSITIVE);
    if spread > config.spread_threshold {
        warn(
            &mut warnings,
            format!("cross-mode spread {spread:.3e} exceeds {:.3e}; data may not come from a single kernel", config.spread_threshold),
        );
    }
    let times = sols
        .iter()
        .flatten()
        .next()
        .expect("at least one mode")
        .times[..len]
        .to_vec();
    let per_mode = sols
        .into_iter()
        .map(|d| d.map(|d| d.values[..len].to_vec()))
        .collect();
    Ok(RecoveryReport {
        recovered: KernelEstimate {
            times,
            values,
            per_mode,
            spread,
        },
        gauge: 1.0,
        gauge_time: None,
        residuals,
        unreliable: UNRELIABLE.to_vec(),
        warnings,
    })
}

/// Per-mode products `m_k = lambda_k M` and the gauge-fixed pair.
#[derive(Clone, Debug)]
pub struct ProductEstimate {
    pub times: Vec<f64>,
    /// `m_k` samples, `None` for unexcited modes.
    pub products: Vec<Option<Vec<f64>>>,
    /// `M` normalized so that `M(gauge_time) = 1`.
    pub kernel: Vec<f64>,
    /// `lambda_k = m_k(gauge_time)`, `None` where unrecoverable.
    pub eigenvalues: Vec<Option<f64>>,
    /// `max |m_k(t) lambda_l / (m_l(t) lambda_k) - 1|` over reliable nodes.
    pub proportionality: f64,
}

fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    let h = times[1] - times[0];
    let x = (t - times[0]) / h;
    let i = (x.floor().max(0.0) as usize).min(times.len() - 2);
    let f = x - i as f64;
    (1.0 - f) * values[i] + f * values[i + 1]
}

/// Recovers `m_k = lambda_k M` mode by mode without knowing `lambda_k`, then
/// fixes the scaling freedom by `M(t_g) = 1` with `t_g = 1`, or the midpoint of
/// the shifted window when it is shorter than 1.
pub fn recover_product(
    window: &ObservationWindow,
    elimination: &HistoryElimination,
    config: &KernelConfig,
) -> Result<RecoveryReport<ProductEstimate>> {
    let shifted = shift_origin(window, elimination)?;
    let k = window.mode_count();
    let scales = vec![Some(1.0); k];
    let sols = solve_modes(&shifted, &scales, config)?;
    let len = sols
        .iter()
        .flatten()
        .map(|d| d.values.len())
        .min()
        .ok_or_else(|| Error::Precondition("no mode is excited by the late source".into()))?;
    let mut warnings = Vec::new();
    let h = shifted.h();
    let times: Vec<f64> = (0..len).map(|l| l as f64 * h).collect();
    let span = times[len - 1];
    let gauge_time = if span >= 1.0 { 1.0 } else { 0.5 * span };
    if gauge_time != 1.0 {
        warn(
            &mut warnings,
            format!("window shorter than 1; gauge imposed at t = {gauge_time}"),
        );
    }
    let products: Vec<Option<Vec<f64>>> = sols
        .iter()
        .map(|d| d.as_ref().map(|d| d.values[..len].to_vec()))
        .collect();
    let eigenvalues: Vec<Option<f64>> = products
        .iter()
        .map(|p| p.as_ref().map(|p| interp(&times, p, gauge_time)))
        .collect();
    for (j, e) in eigenvalues.iter().enumerate() {
        if e.is_none() {
            warn(
                &mut warnings,
                format!(
                    "mode {} is not excited; its eigenvalue is unrecoverable",
                    j + 1
                ),
            );
        }
    }
    let first = products
        .iter()
        .position(|p| p.is_some())
        .expect("at least one excited mode");
    let m1 = products[first].as_ref().expect("excited");
    let c1 = eigenvalues[first].expect("excited");
    if !(c1 > 0.0) {
        return Err(Error::Inconsistent(format!(
            "recovered product of mode {} is not positive at the gauge time",
            first + 1
        )));
    }
    let kernel: Vec<f64> = m1.iter().map(|v| v / c1).collect();
    let mut prop: f64 = 0.0;
    let excited: Vec<usize> = (0..k).filter(|&j| products[j].is_some()).collect();
    for &a in &excited {
        for &b in &excited {
            if a >= b {
                continue;
            }
            let (pa, pb) = (
                products[a].as_ref().expect("excited"),
                products[b].as_ref().expect("excited"),
            );
            let (la, lb) = (
                eigenvalues[a].expect("excited"),
                eigenvalues[b].expect("excited"),
            );
            for l in 2..len {
                if pb[l] != 0.0 {
                    prop = prop.max((pa[l] * lb / (pb[l] * la) - 1.0).abs());
                }
            }
        }
    }
    if prop > config.proportionality_tolerance {
        return Err(Error::Inconsistent(format!(
            "per-mode products are not proportional (deviation {prop:.3e}); no single (M, A) pair fits the data"
        )));
    }
    let residuals = sols
        .iter()
        .map(|d| d.as_ref().map_or(f64::NAN, |d| d.residual))
        .collect();
    Ok(RecoveryReport {
        recovered: ProductEstimate {
            times,
            products,
            kernel,
            eigenvalues,
            proportionality: prop,
        },
        gauge: c1,
        gauge_time: Some(gauge_time),
        residuals,
        unreliable: UNRELIABLE.to_vec(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{make_partitioned_source, simulate_modes, Profile, SourceBlock};
    use crate::kernels::MemoryKernel;
    use crate::volterra::SecondKindSolver;

    fn pulse_window(m: &MemoryKernel, lam: &[f64]) -> ObservationWindow {
        let grid = TimeGrid::new(1.0, 256)
            .unwrap()
            .with_window(13, 26)
            .unwrap();
        let h = grid.h();
        let k = lam.len();
        let weights = (0..k).map(|j| 2.0 / (h * (j + 1) as f64)).collect();
        let src = make_partitioned_source(
            &[SourceBlock {
                profile: Profile::Indicator,
                start: grid.time(26),
                end: grid.time(27),
                weights,
            }],
            &grid,
            k,
        )
        .unwrap();
        let solver = SecondKindSolver::new(m, &grid).unwrap();
        let r = simulate_modes(&solver, lam, &vec![0.0; k], &src.coeffs).unwrap();
        ObservationWindow::new(
            grid,
            r.trajectories.into_iter().map(|t| t.values).collect(),
            src,
        )
        .unwrap()
    }

    #[test]
    fn power_law_kernel_round_trip() {
        let m = MemoryKernel::power_law(1.0, 0.5).unwrap();
        let lam: Vec<f64> = (1..=4).map(|k| (k * k) as f64 * 9.8696).collect();
        let win = pulse_window(&m, &lam);
        let rep = recover_kernel(
            &win,
            &HistoryElimination::Zero,
            &lam,
            &KernelConfig::default(),
        )
        .unwrap();
        let est = &rep.recovered;
        let (mut num, mut den) = (0.0, 0.0);
        for (t, v) in est.times.iter().zip(&est.values).skip(2) {
            let e = m.eval(*t).unwrap();
            num += (v - e).powi(2);
            den += e * e;
        }
        assert!((num / den).sqrt() < 1e-2, "{}", (num / den).sqrt());
        assert!(est.spread < 1e-6);
        assert!(rep.warnings.is_empty());
    }

    #[test]
    fn product_gauge_and_proportionality() {
        let m = MemoryKernel::power_law(1.0, 0.5).unwrap();
        let lam = vec![1.0, 4.0, 9.0];
        let grid = TimeGrid::new(2.0, 256)
            .unwrap()
            .with_window(13, 26)
            .unwrap();
        let blocks: Vec<SourceBlock> = (0..3)
            .map(|j| {
                let mut w = vec![0.0; 3];
                w[j] = 1.0;
                let s = grid.time(26 + 10 * j);
                SourceBlock {
                    profile: Profile::Indicator,
                    start: s,
                    end: s + 10.0 * grid.h(),
                    weights: w,
                }
            })
            .collect();
        let src = make_partitioned_source(&blocks, &grid, 3).unwrap();
        let solver = SecondKindSolver::new(&m, &grid).unwrap();
        let r = simulate_modes(&solver, &lam, &[0.0; 3], &src.coeffs).unwrap();
        let win = ObservationWindow::new(
            grid,
            r.trajectories.into_iter().map(|t| t.values).collect(),
            src,
        )
        .unwrap();
        let rep =
            recover_product(&win, &HistoryElimination::Zero, &KernelConfig::default()).unwrap();
        let e = &rep.recovered;
        assert!(e.proportionality < 1e-3, "{}", e.proportionality);
        for j in 0..3 {
            let ratio = e.eigenvalues[j].unwrap() / e.eigenvalues[0].unwrap();
            assert!((ratio / lam[j] - 1.0).abs() < 1e-2);
        }
        assert_eq!(rep.gauge_time, Some(1.0));
    }

    #[test]
    fn unexcited_modes_are_reported() {
        let m = MemoryKernel::power_law(1.0, 0.5).unwrap();
        let grid = TimeGrid::new(1.0, 128)
            .unwrap()
            .with_window(13, 26)
            .unwrap();
        let src = make_partitioned_source(
            &[SourceBlock {
                profile: Profile::Indicator,
                start: grid.time(26),
                end: 0.5,
                weights: vec![1.0, 0.0],
            }],
            &grid,
            2,
        )
        .unwrap();
        let solver = SecondKindSolver::new(&m, &grid).unwrap();
        let r = simulate_modes(&solver, &[1.0, 4.0], &[0.0; 2], &src.coeffs).unwrap();
        let win = ObservationWindow::new(
            grid,
            r.trajectories.into_iter().map(|t| t.values).collect(),
            src,
        )
        .unwrap();
        let rep =
            recover_product(&win, &HistoryElimination::Zero, &KernelConfig::default()).unwrap();
        assert!(rep.recovered.eigenvalues[1].is_none());
        assert!(rep.recovered.products[1].is_none());
        assert_eq!(
            rep.gauge_time,
            Some(0.5 * rep.recovered.times.last().unwrap())
        );
        let zero = ObservationWindow::new(
            win.grid.clone(),
            win.data.clone(),
            crate::forward::SourceModel::zero(&win.grid, 2),
        )
        .unwrap();
        assert!(matches!(
            recover_kernel(
                &zero,
                &HistoryElimination::Zero,
                &[1.0, 4.0],
                &KernelConfig::default()
            ),
            Err(Error::Precondition(_))
        ));
    }
}
