//! Subcommand pipelines: build the model from a config, generate or load
//! data, run one module and write CSV series plus a `report.toml`.

use crate::config::{
    EliminationSpec, ExperimentConfig, FamilySpec, FunctionalSpec, HistoryProfile, KernelSpec,
    MethodSpec, PotentialSpec, ProfileSpec,
};
use crate::error::CliError;
use crate::noise::inject_noise;
use crate::output::{read_series, Outputs, RunManifest};
use gfd_core::forward::{
    make_partitioned_source, observe, simulate_modes, Profile, SourceBlock, SourceModel,
    SourceStructure,
};
use gfd_core::inverse::{
    recover_distributed_measure, recover_history, recover_kernel, recover_kernel_from_functional,
    recover_product, Epsilon, FunctionalConfig, HistoryConfig, HistoryElimination, KernelConfig,
    KernelFamily, MeasureConfig, ObservationWindow, Regularizer,
};
use gfd_core::kernels::sonine_partner;
use gfd_core::laplace::{contour_invert, mittag_leffler, relaxation_hat, ContourSpec};
use gfd_core::operators::{
    dirichlet_eigenpairs, distributed_eigenvalues, functional_coefficients, sturm_liouville_fd,
    ObservationFunctional, Potential, SpectralOperator,
};
use gfd_core::volterra::{solve_second_kind, SecondKindSolver, TimeGrid};
use gfd_core::{Measure, MemoryKernel, TabulatedKernel};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Simulate,
    Sonine,
    Ml,
    Invert,
    RecoverKernel,
    RecoverProduct,
    RecoverHistory,
    RecoverFunctional,
    RecoverMeasure,
    DemoUniqueness,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Sonine => "sonine",
            Task::Ml => "ml",
            Task::Invert => "invert",
            Task::RecoverKernel => "recover-kernel",
            Task::RecoverProduct => "recover-product",
            Task::RecoverHistory => "recover-history",
            Task::RecoverFunctional => "recover-functional",
            Task::RecoverMeasure => "recover-measure",
            Task::DemoUniqueness => "demo-uniqueness",
        }
    }
}

fn schema(path: &str, e: impl ToString) -> CliError {
    CliError::Schema {
        path: path.to_string(),
        message: e.to_string(),
    }
}

/// Everything the forward model needs, built from a validated config.
pub struct Setup {
    pub grid: TimeGrid,
    pub op: SpectralOperator,
    pub lambda: Vec<f64>,
    pub kernel: MemoryKernel,
    pub initial: Vec<f64>,
    pub source: SourceModel,
    pub phi: Option<Vec<f64>>,
}

pub fn build_kernel(spec: &KernelSpec, grid: &TimeGrid) -> Result<MemoryKernel, CliError> {
    let k = match spec {
        KernelSpec::PowerLaw { c, alpha } => MemoryKernel::power_law(*c, *alpha),
        KernelSpec::Tempered { c, alpha, lambda } => MemoryKernel::tempered(*c, *alpha, *lambda),
        KernelSpec::Distributed { atoms } => {
            Measure::atoms(atoms.clone()).and_then(MemoryKernel::distributed)
        }
        KernelSpec::Tabulated { csv } => {
            let (t, v) = read_series(csv)?;
            TabulatedKernel::new(t, v).map(MemoryKernel::Tabulated)
        }
        KernelSpec::Unit => Ok(MemoryKernel::unit(grid)),
    };
    k.map_err(|e| schema("kernel", e))
}

fn build_operator(cfg: &ExperimentConfig) -> Result<SpectralOperator, CliError> {
    let o = &cfg.operator;
    let op = match (&o.potential, o.mesh) {
        (PotentialSpec::Constant(a), None) => dirichlet_eigenpairs(o.length, *a, o.modes),
        (p, mesh) => {
            let potential = match p {
                PotentialSpec::Constant(a) => Potential::Constant(*a),
                PotentialSpec::Samples(s) => Potential::Samples(s.clone()),
            };
            sturm_liouville_fd(
                o.length,
                &potential,
                mesh.unwrap_or(2048.max(8 * o.modes)),
                o.modes,
            )
        }
    };
    op.map_err(|e| schema("operator", e))
}

fn profile(p: ProfileSpec) -> Profile {
    match p {
        ProfileSpec::Indicator => Profile::Indicator,
        ProfileSpec::Hat => Profile::Hat,
        ProfileSpec::Ramp => Profile::Ramp,
    }
}

fn build_source(cfg: &ExperimentConfig, grid: &TimeGrid) -> Result<SourceModel, CliError> {
    let modes = cfg.operator.modes;
    let mut source = if cfg.source.blocks.is_empty() {
        SourceModel::zero(grid, modes)
    } else {
        let blocks: Vec<SourceBlock> = cfg
            .source
            .blocks
            .iter()
            .map(|b| SourceBlock {
                profile: profile(b.profile),
                start: b.start,
                end: b.end,
                weights: b.weights.clone(),
            })
            .collect();
        make_partitioned_source(&blocks, grid, modes).map_err(|e| schema("source.blocks", e))?
    };
    if cfg.source.history == HistoryProfile::Sine {
        let (i0, _) = grid.window().map_err(|e| schema("grid", e))?;
        let t0 = grid.time(i0);
        for (k, c) in source.coeffs.iter_mut().enumerate() {
            for (j, v) in c.iter_mut().enumerate().take(i0 + 1) {
                *v = cfg.source.history_amplitude
                    * (std::f64::consts::PI * grid.time(j) / t0).sin()
                    / (k + 1) as f64;
            }
        }
        source.structure = SourceStructure::Gap;
    }
    Ok(source)
}

/// True history source on `[0, t0]` of mode `k`, if the config defines one.
fn history_profile(
    cfg: &ExperimentConfig,
    grid: &TimeGrid,
    k: usize,
    times: &[f64],
) -> Option<Vec<f64>> {
    let t0 = grid.time(grid.window().ok()?.0);
    match cfg.source.history {
        HistoryProfile::None => Some(vec![0.0; times.len()]),
        HistoryProfile::Sine => Some(
            times
                .iter()
                .map(|t| {
                    cfg.source.history_amplitude * (std::f64::consts::PI * t / t0).sin()
                        / (k + 1) as f64
                })
                .collect(),
        ),
    }
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let g = &cfg.grid;
        let grid = TimeGrid::new(g.t_final, g.n)
            .and_then(|grid| grid.with_window_times(g.t0, g.t1))
            .map_err(|e| schema("grid", e))?;
        let op = build_operator(cfg)?;
        let measure =
            Measure::atoms(cfg.measure.atoms.clone()).map_err(|e| schema("measure.atoms", e))?;
        let lambda = distributed_eigenvalues(&op, &measure)
            .map_err(|e| schema("measure", e))?
            .eigenvalues;
        let kernel = build_kernel(&cfg.kernel, &grid)?;
        let mut initial = cfg.initial.clone();
        initial.resize(cfg.operator.modes, 0.0);
        let source = build_source(cfg, &grid)?;
        let phi = match cfg.functional {
            None => None,
            Some(FunctionalSpec::Point { x0 }) => Some(ObservationFunctional::PointValue(x0)),
            Some(FunctionalSpec::Mean { a, b }) => {
                Some(ObservationFunctional::SubintervalMean(a, b))
            }
        }
        .map(|f| functional_coefficients(&op, &f))
        .transpose()
        .map_err(|e| schema("functional", e))?;
        Ok(Self {
            grid,
            op,
            lambda,
            kernel,
            initial,
            source,
            phi,
        })
    }

    fn window_start(&self) -> usize {
        self.grid.window().expect("window set at build").0
    }
}

/// Full trajectories and the response to the data before `t0` alone.
struct Synthetic {
    data: Vec<Vec<f64>>,
    history: Vec<Vec<f64>>,
}

fn synthesize(setup: &Setup, kernel: &MemoryKernel) -> Result<Synthetic, CliError> {
    let solver = SecondKindSolver::new(kernel, &setup.grid)?;
    let full = simulate_modes(&solver, &setup.lambda, &setup.initial, &setup.source.coeffs)?;
    let early = setup.source.truncated_after(setup.window_start() + 1);
    let hist = simulate_modes(&solver, &setup.lambda, &setup.initial, &early.coeffs)?;
    Ok(Synthetic {
        data: full.trajectories.into_iter().map(|t| t.values).collect(),
        history: hist.trajectories.into_iter().map(|t| t.values).collect(),
    })
}

fn read_rows(
    dir: &Path,
    prefix: &str,
    modes: usize,
    grid: &TimeGrid,
) -> Result<Vec<Vec<f64>>, CliError> {
    (1..=modes)
        .map(|k| {
            let path = dir.join(format!("{prefix}_{k}.csv"));
            let (t, v) = read_series(&path)?;
            let aligned = t.len() == grid.n() + 1
                && t.iter()
                    .enumerate()
                    .all(|(i, t)| (t - grid.time(i)).abs() <= 1e-9 * grid.t_final());
            if !aligned {
                return Err(schema(
                    "data.dir",
                    format!("{} does not match the configured grid", path.display()),
                ));
            }
            Ok(v)
        })
        .collect()
}

/// Mode data (noisy when configured) and, when available, the exact history response.
fn modal_data(
    cfg: &ExperimentConfig,
    setup: &Setup,
    kernel: &MemoryKernel,
) -> Result<Synthetic, CliError> {
    let modes = cfg.operator.modes;
    let mut s = match &cfg.data {
        Some(d) => Synthetic {
            data: read_rows(&d.dir, "mode", modes, &setup.grid)?,
            history: if cfg.regularization.elimination == EliminationSpec::Exact {
                read_rows(&d.dir, "history", modes, &setup.grid)?
            } else {
                Vec::new()
            },
        },
        None => synthesize(setup, kernel)?,
    };
    for (k, row) in s.data.iter_mut().enumerate() {
        *row = inject_noise(row, cfg.noise.level, cfg.seed.wrapping_add(k as u64));
    }
    Ok(s)
}

fn elimination(cfg: &ExperimentConfig, history: Vec<Vec<f64>>) -> HistoryElimination {
    match cfg.regularization.elimination {
        EliminationSpec::Exact => HistoryElimination::Exact(history),
        EliminationSpec::Zero => HistoryElimination::Zero,
        EliminationSpec::Surrogate => HistoryElimination::Surrogate {
            terms: cfg.regularization.surrogate_terms,
        },
    }
}

fn kernel_config(cfg: &ExperimentConfig) -> KernelConfig {
    let r = &cfg.regularization;
    KernelConfig {
        regularizer: match r.method {
            MethodSpec::Lavrentiev => Regularizer::Lavrentiev,
            MethodSpec::Tikhonov => Regularizer::Tikhonov,
        },
        epsilon: if r.discrepancy {
            Epsilon::Discrepancy {
                relative_noise: r.known_noise.then_some(cfg.noise.level),
            }
        } else {
            Epsilon::Fixed(r.epsilon)
        },
        ..KernelConfig::default()
    }
}

/// Relative discrete `L2` distance of `values` from `reference`, skipping `skip` leading samples.
fn relative_l2(values: &[f64], reference: &[f64], skip: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (v, r) in values.iter().zip(reference).skip(skip) {
        num += (v - r).powi(2);
        den += r * r;
    }
    (num / den).sqrt()
}

fn kernel_samples(m: &MemoryKernel, times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .map(|&t| {
            if t > 0.0 {
                m.eval(t).unwrap_or(f64::NAN)
            } else {
                f64::NAN
            }
        })
        .collect()
}

fn set(report: &mut toml::Table, key: &str, value: impl Into<toml::Value>) {
    report.insert(key.to_string(), value.into());
}

fn optional_list(values: &[Option<f64>]) -> toml::Value {
    toml::Value::Array(
        values
            .iter()
            .map(|v| toml::Value::Float(v.unwrap_or(f64::NAN)))
            .collect(),
    )
}

fn pairs(atoms: &[(f64, f64)]) -> toml::Value {
    toml::Value::Array(
        atoms
            .iter()
            .map(|&(b, k)| toml::Value::from(vec![b, k]))
            .collect(),
    )
}

/// Runs `task` and writes its outputs, finishing with the manifest.
pub fn run(task: Task, cfg: &ExperimentConfig) -> Result<RunManifest, CliError> {
    let mut out = Outputs::create(&cfg.out_dir)?;
    let config_text = cfg.to_toml();
    out.write("config.toml", &config_text)?;
    let setup = out.timed("setup", || Setup::build(cfg))?;
    let mut report = toml::Table::new();
    set(&mut report, "command", task.name());
    match task {
        Task::Simulate => simulate(cfg, &setup, &mut out, &mut report)?,
        Task::Sonine => sonine(&setup, &mut out, &mut report)?,
        Task::Ml => ml(cfg, &setup, &mut out, &mut report)?,
        Task::Invert => invert(cfg, &setup, &mut out, &mut report)?,
        Task::RecoverKernel => kernel(cfg, &setup, &mut out, &mut report)?,
        Task::RecoverProduct => product(cfg, &setup, &mut out, &mut report)?,
        Task::RecoverHistory => history(cfg, &setup, &mut out, &mut report)?,
        Task::RecoverFunctional => functional(cfg, &setup, &mut out, &mut report)?,
        Task::RecoverMeasure => measure(cfg, &setup, &mut report)?,
        Task::DemoUniqueness => uniqueness(cfg, &setup, &mut out, &mut report)?,
    }
    out.report(&report)?;
    out.finish(task.name(), cfg.seed, &config_text)
}

fn simulate(
    cfg: &ExperimentConfig,
    setup: &Setup,
    out: &mut Outputs,
    report: &mut toml::Table,
) -> Result<(), CliError> {
    let solver = SecondKindSolver::new(&setup.kernel, &setup.grid)?;
    let full = out.timed("solve", || {
        simulate_modes(&solver, &setup.lambda, &setup.initial, &setup.source.coeffs)
    })?;
    let early = setup.source.truncated_after(setup.window_start() + 1);
    let hist = out.timed("history", || {
        simulate_modes(&solver, &setup.lambda, &setup.initial, &early.coeffs)
    })?;
    let times = setup.grid.times();
    for (k, (u, y)) in full.trajectories.iter().zip(&hist.trajectories).enumerate() {
        out.series(&format!("mode_{}.csv", k + 1), &times, &u.values)?;
        out.series(&format!("history_{}.csv", k + 1), &times, &y.values)?;
    }
    let mut warnings = setup.source.warnings.clone();
    if let Some(phi) = &setup.phi {
        let obs = observe(&full, phi)?;
        out.series("observation.csv", &times, &obs.values)?;
        let y = observe(&hist, phi)?;
        out.series("observation_history.csv", &times, &y.values)?;
        warnings.extend(obs.warnings);
    }
    for (j, &t) in cfg.output.snapshots.iter().enumerate() {
        if !(0.0..=setup.grid.t_final()).contains(&t) {
            return Err(schema(
                "output.snapshots",
                format!("time {t} outside [0, T]"),
            ));
        }
        let idx = (t / setup.grid.h()).round() as usize;
        let snap = full.field_snapshot(&setup.op, idx, cfg.output.field_points, None)?;
        let text = crate::output::csv_text(&["x", "value"], &[&snap.x, &snap.values]);
        out.write(&format!("field_{}.csv", j + 1), &text)?;
    }
    set(report, "eigenvalues", setup.lambda.clone());
    set(report, "mode_residuals", full.residuals.clone());
    set(report, "warnings", warnings);
    Ok(())
}

fn sonine(setup: &Setup, out: &mut Outputs, report: &mut toml::Table) -> Result<(), CliError> {
    let grid = TimeGrid::new(setup.grid.t_final(), setup.grid.n())?;
    let k = out.timed("solve", || sonine_partner(&setup.kernel, &grid))?;
    out.series("sonine.csv", k.kernel.times(), k.kernel.values())?;
    set(report, "residual", k.residual);
    Ok(())
}

fn ml(
    cfg: &ExperimentConfig,
    setup: &Setup,
    out: &mut Outputs,
    report: &mut toml::Table,
) -> Result<(), CliError> {
    let r = &cfg.relaxation;
    let times: Vec<f64> = setup.grid.times().into_iter().skip(1).collect();
    let values = out.timed("evaluate", || {
        times
            .iter()
            .map(|t| mittag_leffler(r.alpha, -r.lambda * t.powf(r.alpha)))
            .collect::<Result<Vec<_>, _>>()
    })?;
    out.series("relaxation.csv", &times, &values)?;
    set(report, "alpha", r.alpha);
    set(report, "lambda", r.lambda);
    Ok(())
}

fn invert(
    cfg: &ExperimentConfig,
    setup: &Setup,
    out: &mut Outputs,
    report: &mut toml::Table,
) -> Result<(), CliError> {
    let r = &cfg.relaxation;
    let spec = ContourSpec::with_nodes(r.contour_nodes);
    spec.validate()
        .map_err(|e| schema("relaxation.contour_nodes", e))?;
    let times: Vec<f64> = setup.grid.times().into_iter().skip(1).collect();
    let values = out.timed("contour", || {
        times
            .iter()
            .map(|&t| contour_invert(|s| relaxation_hat(&setup.kernel, r.lambda, s), t, &spec))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let grid = TimeGrid::new(setup.grid.t_final(), setup.grid.n())?;
    let direct = out.timed("solve", || {
        solve_second_kind(&setup.kernel, r.lambda, &vec![1.0; grid.n() + 1], &grid)
    })?;
    let diff = values
        .iter()
        .zip(&direct.values[1..])
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    out.series("relaxation.csv", &times, &values)?;
    set(report, "lambda", r.lambda);
    set(report, "solver_difference", diff);
    Ok(())
}

fn kernel(
    cfg: &ExperimentConfig,
    setup: &Setup,
    out: &mut Outputs,
    report: &mut toml::Table,
) -> Result<(), CliError> {
    let data = out.timed("data", || modal_data(cfg, setup, &setup.kernel))?;
    let window = ObservationWindow::new(setup.grid.clone(), data.data, setup.source.clone())?;
    let elim = elimination(cfg, data.history);
    let rep = out.timed("recover", || {
        recover_kernel(&window, &elim, &setup.lambda, &kernel_config(cfg))
    })?;
    let est = &rep.recovered;
    out.series("kernel.csv", &est.times, &est.values)?;
    let reference = kernel_samples(&setup.kernel, &est.times);
    set(
        report,
        "relative_error",
        relative_l2(&est.values, &reference, 3),
    );
    set(report, "spread", est.spread);
    set(report, "residuals", rep.residuals.clone());
    set(
        report,
        "unreliable",
        rep.unreliable.iter().map(|&i| i as i64).collect::<Vec<_>>(),
    );
    set(report, "warnings", rep.warnings.clone());
    Ok(())
}

fn product(
    cfg: &ExperimentConfig,
    setup: &Setup,
    out: &mut Outputs,
    report: &mut toml::Table,
) -> Result<(), CliError> {
    let data = out.timed("data", || modal_data(cfg, setup, &setup.kernel))?;
    let window = ObservationWindow::new(setup.grid.clone(), data.data, setup.source.clone())?;
    let elim = elimination(cfg, data.history);
    let rep = out.timed("recover", || {
        recover_product(&window, &elim, &kernel_config(cfg))
    })?;
    let est = &rep.recovered;
    out.series("kernel.csv", &est.times, &est.kernel)?;
    for (k, p) in est.products.iter().enumerate() {
        if let Some(p) = p {
            out.series(&format!("product_{}.csv", k + 1), &est.times, p)?;
        }
    }
    let tg = rep.gauge_time.unwrap_or(1.0);
    let m_tg = setup.kernel.eval(tg)?;
    let reference: Vec<f64> = kernel_samples(&setup.kernel, &est.times)
        .iter()
        .map(|v| v / m_tg)
        .collect();
    let first = est.eigenvalues.iter().position(|e| e.is_some());
    let ratio_error = first.map_or(f64::NAN, |f| {
        let base = est.eigenvalues[f].expect("excited");
        est.eigenvalues
            .iter()
            .zip(&setup.lambda)
            .filter_map(|(e, l)| e.map(|e| ((e / base) / (l / setup.lambda[f]) - 1.0).abs()))
            .fold(0.0, f64::max)
    });
    set(report, "gauge_time", tg);
    set(report, "eigenvalues", optional_list(&est.eigenvalues));
    set(report, "eigenvalue_ratio_error", ratio_error);
    set(
        report,
        "kernel_relative_error",
        relative_l2(&est.kernel, &reference, 3),
    );
    set(report, "proportionality", est.proportionality);
    set(report, "warnings", rep.warnings.clone());
    Ok(())
}

fn history(
    cfg: &ExperimentConfig,
    setup: &Setup,
    out: &mut Outputs,
    report: &mut toml::Table,
) -> Result<(), CliError> {
    let data = out.timed("data", || modal_data(cfg, setup, &setup.kernel))?;
    let late = setup.source.truncated_before(setup.window_start());
    let window = ObservationWindow::new(setup.grid.clone(), data.data, late)?;
    let hc = HistoryConfig {
        weight: cfg.regularization.history_weight,
        rho: cfg.regularization.history_rho,
    };
    let rep = out.timed("recover", || {
        recover_history(&setup.kernel, &setup.lambda, &window, &hc)
    })?;
    let est = &rep.recovered;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, f) in est.history.iter().enumerate() {
        out.series(&format!("source_history_{}.csv", k + 1), &est.times, f)?;
        if let Some(truth) = history_profile(cfg, &setup.grid, k, &est.times) {
            num += f
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
            den += truth.iter().map(|b| b * b).sum::<f64>();
        }
    }
    let init_err = est
        .initial
        .iter()
        .zip(&setup.initial)
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let init_num: f64 = est
        .initial
        .iter()
        .zip(&setup.initial)
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let init_den: f64 = setup.initial.iter().map(|y| y * y).sum();
    let ratio = |n: f64, d: f64| if d > 0.0 { (n / d).sqrt() } else { n.sqrt() };
    set(report, "initial", est.initial.clone());
    set(report, "initial_error", init_err);
    set(report, "history_relative_error", ratio(num, den));
    // Error of the stacked (u(0), f) vector.
    set(
        report,
        "relative_error",
        ratio(num + init_num, den + init_den),
    );
    set(report, "residuals", rep.residuals.clone());
    set(report, "warnings", rep.warnings.clone());
    Ok(())
}

fn functional(
    cfg: &ExperimentConfig,
    setup: &Setup,
    out: &mut Outputs,
    report: &mut toml::Table,
) -> Result<(), CliError> {
    let phi = setup.phi.as_ref().ok_or_else(|| {
        schema(
            "functional",
            "recover-functional needs a [functional] table",
        )
    })?;
    let times = setup.grid.times();
    let (data, hist) = match &cfg.data {
        Some(d) => {
            let read = |name: &str| -> Result<Vec<f64>, CliError> {
                let (t, v) = read_series(&d.dir.join(name))?;
                if t.len() != times.len() {
                    return Err(schema(
                        "data.dir",
                        format!("{name} does not match the configured grid"),
                    ));
                }
                Ok(v)
            };
            let hist = match cfg.regularization.elimination {
                EliminationSpec::Exact => read("observation_history.csv")?,
                _ => Vec::new(),
            };
            (read("observation.csv")?, hist)
        }
        None => {
            let s = synthesize(setup, &setup.kernel)?;
            let project = |rows: &[Vec<f64>]| -> Vec<f64> {
                (0..times.len())
                    .map(|n| rows.iter().zip(phi).map(|(r, p)| p * r[n]).sum())
                    .collect()
            };
            (project(&s.data), project(&s.history))
        }
    };
    let data = inject_noise(&data, cfg.noise.level, cfg.seed);
    out.series("observation.csv", &times, &data)?;
    let elim = match cfg.regularization.elimination {
        EliminationSpec::Exact => HistoryElimination::Exact(vec![hist]),
        EliminationSpec::Zero => HistoryElimination::Zero,
        EliminationSpec::Surrogate => HistoryElimination::Surrogate {
            terms: cfg.regularization.surrogate_terms,
        },
    };
    let family = match cfg.fit.family {
        FamilySpec::PowerLaw => KernelFamily::PowerLaw,
        FamilySpec::Tempered => KernelFamily::Tempered,
    };
    let fc = FunctionalConfig {
        grid_points: cfg.fit.grid_points,
        refine_starts: cfg.fit.refine_starts,
        ..FunctionalConfig::new(family)
    };
    let rep = out.timed("fit", || {
        recover_kernel_from_functional(
            &data,
            phi,
            &setup.lambda,
            &setup.source,
            &setup.grid,
            &elim,
            &fc,
        )
    })?;
    let fit = &rep.recovered;
    let truth: Option<Vec<f64>> = match (&cfg.kernel, family) {
        (KernelSpec::PowerLaw { c, alpha }, KernelFamily::PowerLaw) => Some(vec![*c, *alpha]),
        (KernelSpec::Tempered { c, alpha, lambda }, KernelFamily::Tempered) => {
            Some(vec![*c, *alpha, *lambda])
        }
        _ => None,
    };
    if let Some(truth) = truth {
        let err = fit
            .params
            .iter()
            .zip(&truth)
            .fold(0.0f64, |a, (p, t)| a.max((p / t - 1.0).abs()));
        set(report, "parameter_error", err);
    }
    set(report, "params", fit.params.clone());
    set(report, "misfit", fit.misfit);
    set(report, "order", fit.order as i64);
    set(report, "converged", fit.converged);
    set(report, "warnings", rep.warnings.clone());
    Ok(())
}

fn measure(
    cfg: &ExperimentConfig,
    setup: &Setup,
    report: &mut toml::Table,
) -> Result<(), CliError> {
    let m = &cfg.measure;
    let shifted = setup
        .op
        .shifted(m.shift)
        .map_err(|e| schema("measure.shift", e))?;
    let truth = Measure::atoms(m.atoms.clone()).map_err(|e| schema("measure.atoms", e))?;
    let lambda = distributed_eigenvalues(&shifted, &truth)?.eigenvalues;
    let lambda = inject_noise(&lambda, cfg.noise.level, cfg.seed);
    let mc = MeasureConfig {
        max_atoms: m.max_atoms,
        shift_search: m.shift_search,
        ..MeasureConfig::default()
    };
    let rep = recover_distributed_measure(&lambda, setup.op.eigenvalues(), &mc)?;
    let est = &rep.recovered;
    let err = if est.atoms.len() == m.atoms.len() {
        est.atoms.iter().zip(&m.atoms).fold(0.0f64, |a, (g, w)| {
            a.max((g.0 / w.0 - 1.0).abs()).max((g.1 / w.1 - 1.0).abs())
        })
    } else {
        f64::INFINITY
    };
    set(report, "atoms", pairs(&est.atoms));
    set(report, "eta", est.eta);
    set(report, "residual", est.residual);
    set(report, "atom_error", err);
    set(report, "eta_error", (est.eta - m.shift).abs());
    set(report, "warnings", rep.warnings.clone());
    Ok(())
}

fn uniqueness(
    cfg: &ExperimentConfig,
    setup: &Setup,
    out: &mut Outputs,
    report: &mut toml::Table,
) -> Result<(), CliError> {
    let phi = match &setup.phi {
        Some(p) => p.clone(),
        None => functional_coefficients(
            &setup.op,
            &ObservationFunctional::PointValue(cfg.operator.length / 11f64.sqrt()),
        )?,
    };
    let (a, b) = cfg.uniqueness.alphas;
    let mut traces = Vec::new();
    let mut kernels = Vec::new();
    let mut errors = Vec::new();
    for (tag, alpha) in [("a", a), ("b", b)] {
        let m = MemoryKernel::power_law(1.0, alpha)?;
        let data = out.timed(&format!("data_{tag}"), || modal_data(cfg, setup, &m))?;
        let times = setup.grid.times();
        let trace: Vec<f64> = (0..times.len())
            .map(|n| data.data.iter().zip(&phi).map(|(r, p)| p * r[n]).sum())
            .collect();
        out.series(&format!("trace_{tag}.csv"), &times, &trace)?;
        let window = ObservationWindow::new(setup.grid.clone(), data.data, setup.source.clone())?;
        let elim = elimination(cfg, data.history);
        let rep = out.timed(&format!("recover_{tag}"), || {
            recover_kernel(&window, &elim, &setup.lambda, &kernel_config(cfg))
        })?;
        let est = rep.recovered;
        out.series(&format!("kernel_{tag}.csv"), &est.times, &est.values)?;
        errors.push(relative_l2(&est.values, &kernel_samples(&m, &est.times), 3));
        traces.push(trace);
        kernels.push(est.values);
    }
    let (i0, _) = setup.grid.window()?;
    let trace_gap = traces[0][i0..]
        .iter()
        .zip(&traces[1][i0..])
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    let len = kernels[0].len().min(kernels[1].len());
    let kernel_gap = relative_l2(&kernels[0][..len], &kernels[1][..len], 3);
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    set(report, "alphas", vec![a, b]);
    set(report, "trace_max_difference", trace_gap);
    set(report, "kernel_difference", kernel_gap);
    set(report, "recovery_errors", errors);
    set(
        report,
        "separated",
        trace_gap >= 1e-3 && kernel_gap >= 10.0 * worst,
    );
    Ok(())
}
