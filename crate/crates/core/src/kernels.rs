//! Completely monotone memory kernels.
//!
//! A [`MemoryKernel`] is one of four families: a power law
//! `c t^(a-1)/Gamma(a)`, its exponentially tempered version, a
//! distributed-order superposition of power laws over a [`Measure`], or a
//! positive table. Besides pointwise evaluation every kernel provides the
//! exact moments `int M` and `int s M(s)` over an interval, which is what the
//! product-integration engines in [`crate::volterra`] consume.

use crate::error::{Error, Result};
use crate::quad;
use crate::volterra::TimeGrid;
use num_complex::Complex64;
use statrs::function::gamma::{gamma, gamma_lr};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Nonnegative measure on exponents in (0, 1].
///
/// The same type describes the order measure of a distributed-order kernel
/// and the measure defining distributed fractional powers of an operator.
#[derive(Clone)]
pub enum Measure {
    /// Point masses `(exponent, weight)` with strictly increasing exponents.
    Atoms(Vec<(f64, f64)>),
    /// Absolutely continuous part with density on (0, 1), integrated by
    /// Gauss-Legendre of the given order.
    Density {
        density: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        order: usize,
    },
}

impl fmt::Debug for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Atoms(a) => f.debug_tuple("Atoms").field(a).finish(),
            Measure::Density { order, .. } => f
                .debug_struct("Density")
                .field("order", order)
                .finish_non_exhaustive(),
        }
    }
}

impl Measure {
    pub fn atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let m = Measure::Atoms(atoms);
        m.validate()?;
        Ok(m)
    }

    /// Density measure with the default 64-point rule.
    pub fn density<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Result<Self> {
        let m = Measure::Density {
            density: Arc::new(f),
            order: 64,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Measure::Atoms(a) => {
                if a.is_empty() {
                    return Err(Error::Precondition("measure has no atoms".into()));
                }
                for &(b, k) in a {
                    if !(b > 0.0 && b <= 1.0) {
                        return Err(Error::Domain(format!("atom exponent {b} outside (0, 1]")));
                    }
                    if !(k > 0.0 && k.is_finite()) {
                        return Err(Error::Domain(format!("atom weight {k} must be positive")));
                    }
                }
                if a.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::Precondition(
                        "atom exponents must increase strictly".into(),
                    ));
                }
                Ok(())
            }
            Measure::Density { density, order } => {
                if *order == 0 {
                    return Err(Error::Precondition(
                        "quadrature order must be positive".into(),
                    ));
                }
                let mut any = false;
                for (b, _) in quad::unit_rule(*order) {
                    let v = density(b);
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(Error::Domain(format!(
                            "density negative or undefined at {b}"
                        )));
                    }
                    any |= v > 0.0;
                }
                if !any {
                    return Err(Error::Precondition("density vanishes identically".into()));
                }
                Ok(())
            }
        }
    }

    /// Quadrature nodes `(exponent, weight)` representing the measure.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        match self {
            Measure::Atoms(a) => a.clone(),
            Measure::Density { density, order } => quad::unit_rule(*order)
                .into_iter()
                .map(|(b, w)| (b, w * density(b)))
                .filter(|p| p.1 != 0.0)
                .collect(),
        }
    }

    /// `int g(beta) d rho(beta)`.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        self.nodes().iter().map(|&(b, w)| w * g(b)).sum()
    }
}

/// Positive kernel samples on strictly increasing nodes `t >= 0`.
///
/// Interpolation is log-log between positive nodes and log-linear on a first
/// interval starting at `t = 0`. Evaluation outside the table is an error.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedKernel {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedKernel {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::Precondition(
                "table needs at least two (t, M) pairs".into(),
            ));
        }
        if times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition(
                "table nodes must be nonnegative and increasing".into(),
            ));
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(
                "tabulated kernel values must be positive".into(),
            ));
        }
        Ok(Self { times, values })
    }

    /// Samples a closure on the nodes of a grid, `t = 0` included.
    pub fn from_fn<F: Fn(f64) -> f64>(grid: &TimeGrid, f: F) -> Result<Self> {
        let t = grid.times();
        let v = t.iter().map(|&x| f(x)).collect();
        Self::new(t, v)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True when the samples never increase.
    pub fn is_nonincreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0])
    }

    fn locate(&self, t: f64) -> Result<usize> {
        let n = self.times.len();
        if !(t >= self.times[0] && t <= self.times[n - 1]) {
            return Err(Error::Domain(format!(
                "t = {t} outside tabulated range [{}, {}]",
                self.times[0],
                self.times[n - 1]
            )));
        }
        let i = self.times.partition_point(|&x| x <= t);
        Ok(i.clamp(1, n - 1) - 1)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let i = self.locate(t)?;
        Ok(self.interp(i, t))
    }

    fn interp(&self, i: usize, t: f64) -> f64 {
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (m0, m1) = (self.values[i], self.values[i + 1]);
        if t == t0 {
            return m0;
        }
        if t == t1 {
            return m1;
        }
        if t0 > 0.0 {
            let p = (m1 / m0).ln() / (t1 / t0).ln();
            m0 * (t / t0).powf(p)
        } else {
            m0 * ((m1 / m0).ln() * (t - t0) / (t1 - t0)).exp()
        }
    }

    fn moments(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        self.locate(a)?;
        self.locate(b)?;
        let mut i0 = 0.0;
        let mut i1 = 0.0;
        let n = self.times.len();
        for i in 0..n - 1 {
            let lo = a.max(self.times[i]);
            let hi = b.min(self.times[i + 1]);
            if hi <= lo {
                continue;
            }
            let f = |s: f64| self.interp(i, s);
            let (p, q) = if lo > 0.0 {
                quad::split_moments(lo, hi, &f)
            } else {
                quad::gl16_moments(lo, hi, f)
            };
            i0 += p;
            i1 += q;
        }
        Ok((i0, i1))
    }
}

/// A completely monotone memory kernel.
#[derive(Clone, Debug)]
pub enum MemoryKernel {
    /// `c t^(alpha-1) / Gamma(alpha)`.
    PowerLaw { c: f64, alpha: f64 },
    /// `c exp(-lambda t) t^(alpha-1) / Gamma(alpha)`.
    Tempered { c: f64, alpha: f64, lambda: f64 },
    /// `int t^(beta-1) / Gamma(beta) d p(beta)`.
    DistributedOrder(Measure),
    /// Samples interpolated between nodes.
    Tabulated(TabulatedKernel),
}

/// Moments of the power law `c t^(alpha-1)/Gamma(alpha)` over [a, b].
fn power_moments(c: f64, alpha: f64, a: f64, b: f64) -> (f64, f64) {
    // b^p - a^p written as -b^p expm1(p ln(a/b)) to keep short far cells accurate.
    let diff = |p: f64| {
        if a <= 0.0 {
            b.powf(p)
        } else {
            -b.powf(p) * (p * (a / b).ln()).exp_m1()
        }
    };
    (
        c / gamma(alpha + 1.0) * diff(alpha),
        c * alpha / gamma(alpha + 2.0) * diff(alpha + 1.0),
    )
}

/// `sum_k x^k / ((p+1)(p+2)...(p+k))`, the series part of the lower incomplete gamma.
fn incgamma_series(p: f64, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while k < 500.0 {
        term *= x / (p + k);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
        k += 1.0;
    }
    sum
}

fn tempered_moments(c: f64, alpha: f64, lambda: f64, a: f64, b: f64) -> (f64, f64) {
    if a > 0.0 {
        let g = gamma(alpha);
        let f = |s: f64| c * (-lambda * s).exp() * s.powf(alpha - 1.0) / g;
        return quad::split_moments(a, b, &f);
    }
    let x = lambda * b;
    if x <= 40.0 {
        let e = (-x).exp();
        let i0 = c * b.powf(alpha) * e / gamma(alpha + 1.0) * incgamma_series(alpha, x);
        let i1 = c * alpha * b.powf(alpha + 1.0) * e / gamma(alpha + 2.0)
            * incgamma_series(alpha + 1.0, x);
        (i0, i1)
    } else {
        (
            c * lambda.powf(-alpha) * gamma_lr(alpha, x),
            c * alpha * lambda.powf(-alpha - 1.0) * gamma_lr(alpha + 1.0, x),
        )
    }
}

impl MemoryKernel {
    pub fn power_law(c: f64, alpha: f64) -> Result<Self> {
        let k = MemoryKernel::PowerLaw { c, alpha };
        k.validate()?;
        Ok(k)
    }

    pub fn tempered(c: f64, alpha: f64, lambda: f64) -> Result<Self> {
        let k = MemoryKernel::Tempered { c, alpha, lambda };
        k.validate()?;
        Ok(k)
    }

    pub fn distributed(measure: Measure) -> Result<Self> {
        let k = MemoryKernel::DistributedOrder(measure);
        k.validate()?;
        Ok(k)
    }

    /// The constant kernel `M = 1`, which turns the model into the heat equation.
    pub fn unit(grid: &TimeGrid) -> Self {
        MemoryKernel::Tabulated(
            TabulatedKernel::from_fn(grid, |_| 1.0).expect("constant table is valid"),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |a: f64| {
            if a > 0.0 && a < 1.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!("alpha = {a} must lie in (0, 1)")))
            }
        };
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} = {v} must be positive")))
            }
        };
        match self {
            MemoryKernel::PowerLaw { c, alpha } => {
                pos("c", *c)?;
                frac(*alpha)
            }
            MemoryKernel::Tempered { c, alpha, lambda } => {
                pos("c", *c)?;
                pos("lambda", *lambda)?;
                frac(*alpha)
            }
            MemoryKernel::DistributedOrder(m) => m.validate(),
            MemoryKernel::Tabulated(_) => Ok(()),
        }
    }

    /// Short family name used in file headers and reports.
    pub fn family(&self) -> &'static str {
        match self {
            MemoryKernel::PowerLaw { .. } => "power_law",
            MemoryKernel::Tempered { .. } => "tempered",
            MemoryKernel::DistributedOrder(_) => "distributed_order",
            MemoryKernel::Tabulated(_) => "tabulated",
        }
    }

    /// Returns `c M` without leaving the family.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Ok(match self {
            MemoryKernel::PowerLaw { c, alpha } => MemoryKernel::power_law(c * s, *alpha)?,
            MemoryKernel::Tempered { c, alpha, lambda } => {
                MemoryKernel::tempered(c * s, *alpha, *lambda)?
            }
            MemoryKernel::DistributedOrder(m) => match m {
                Measure::Atoms(a) => MemoryKernel::distributed(Measure::atoms(
                    a.iter().map(|&(b, k)| (b, k * s)).collect(),
                )?)?,
                Measure::Density { density, order } => {
                    let d = density.clone();
                    MemoryKernel::DistributedOrder(Measure::Density {
                        density: Arc::new(move |b| s * d(b)),
                        order: *order,
                    })
                }
            },
            MemoryKernel::Tabulated(t) => MemoryKernel::Tabulated(TabulatedKernel::new(
                t.times.clone(),
                t.values.iter().map(|v| v * s).collect(),
            )?),
        })
    }

    /// `M(t)` for `t > 0`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("kernel evaluated at t = {t} <= 0")));
        }
        Ok(match self {
            MemoryKernel::PowerLaw { c, alpha } => c * t.powf(alpha - 1.0) / gamma(*alpha),
            MemoryKernel::Tempered { c, alpha, lambda } => {
                c * (-lambda * t).exp() * t.powf(alpha - 1.0) / gamma(*alpha)
            }
            MemoryKernel::DistributedOrder(m) => m.integrate(|b| t.powf(b - 1.0) / gamma(b)),
            MemoryKernel::Tabulated(tab) => tab.eval(t)?,
        })
    }

    /// `(int_a^b M(s) ds, int_a^b s M(s) ds)` for `0 <= a <= b`.
    pub fn moments(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        if !(a >= 0.0 && b >= a) {
            return Err(Error::Domain(format!("moment interval [{a}, {b}] invalid")));
        }
        if b == a {
            return Ok((0.0, 0.0));
        }
        Ok(match self {
            MemoryKernel::PowerLaw { c, alpha } => power_moments(*c, *alpha, a, b),
            MemoryKernel::Tempered { c, alpha, lambda } => {
                tempered_moments(*c, *alpha, *lambda, a, b)
            }
            MemoryKernel::DistributedOrder(m) => {
                let mut i0 = 0.0;
                let mut i1 = 0.0;
                for (beta, w) in m.nodes() {
                    let (p, q) = power_moments(w, beta, a, b);
                    i0 += p;
                    i1 += q;
                }
                (i0, i1)
            }
            MemoryKernel::Tabulated(t) => t.moments(a, b)?,
        })
    }

    /// True when `M(t)` is unbounded as `t -> 0+`.
    pub fn is_singular_at_zero(&self) -> bool {
        match self {
            MemoryKernel::PowerLaw { .. } | MemoryKernel::Tempered { .. } => true,
            MemoryKernel::DistributedOrder(Measure::Atoms(a)) => a.iter().any(|p| p.0 < 1.0),
            MemoryKernel::DistributedOrder(Measure::Density { .. }) => true,
            MemoryKernel::Tabulated(_) => false,
        }
    }

    /// Laplace transform on the principal branch, `s` off `(-inf, 0]`.
    pub fn laplace(&self, s: Complex64) -> Result<Complex64> {
        if s.im == 0.0 && s.re <= 0.0 {
            return Err(Error::Domain(format!("s = {s} lies on the branch cut")));
        }
        Ok(match self {
            MemoryKernel::PowerLaw { c, alpha } => s.powf(-alpha) * *c,
            MemoryKernel::Tempered { c, alpha, lambda } => (s + *lambda).powf(-alpha) * *c,
            MemoryKernel::DistributedOrder(m) => {
                m.nodes().iter().map(|&(b, w)| s.powf(-b) * w).sum()
            }
            MemoryKernel::Tabulated(tab) => {
                // Trapezoid sum over the table; approximate by construction.
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..tab.times.len() - 1 {
                    let (t0, t1) = (tab.times[i], tab.times[i + 1]);
                    let f0 = (-s * t0).exp() * tab.values[i];
                    let f1 = (-s * t1).exp() * tab.values[i + 1];
                    acc += (f0 + f1) * (0.5 * (t1 - t0));
                }
                acc
            }
        })
    }

    /// `(-1)^n M^(n)(t)`, analytic for the power-law families and by central
    /// differences with step `t/100` otherwise.
    pub fn signed_derivative(&self, n: u32, t: f64) -> Result<f64> {
        match self {
            MemoryKernel::PowerLaw { c, alpha } => {
                let mut f = c / gamma(*alpha);
                for j in 1..=n {
                    f *= j as f64 - alpha;
                }
                Ok(f * t.powf(alpha - 1.0 - n as f64))
            }
            MemoryKernel::Tempered { c, alpha, lambda } => {
                // Leibniz rule on exp(-lambda t) * t^(alpha-1); every term is nonnegative.
                let mut sum = 0.0;
                let mut binom = 1.0;
                for j in 0..=n {
                    if j > 0 {
                        binom = binom * (n - j + 1) as f64 / j as f64;
                    }
                    let mut p = 1.0;
                    for i in 1..=j {
                        p *= i as f64 - alpha;
                    }
                    sum += binom * lambda.powi((n - j) as i32) * p * t.powf(alpha - 1.0 - j as f64);
                }
                Ok(c / gamma(*alpha) * (-lambda * t).exp() * sum)
            }
            _ => {
                let h = t / 100.0;
                let mut sum = 0.0;
                let mut binom = 1.0;
                for j in 0..=n {
                    if j > 0 {
                        binom = binom * (n - j + 1) as f64 / j as f64;
                    }
                    let x = t + (0.5 * n as f64 - j as f64) * h;
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sum += sign * binom * self.eval(x)?;
                }
                let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
                Ok(sign * sum / h.powi(n as i32))
            }
        }
    }
}

/// Bernstein density `q'` of a completely monotone kernel:
/// `M(t) = int_{tau_min}^inf exp(-t tau) q'(tau) d tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct BernsteinRepresentation {
    scale: f64,
    alpha: f64,
    pub tau_min: f64,
    /// Trapezoid step in `y = ln(tau - tau_min)`.
    pub step: f64,
}

impl BernsteinRepresentation {
    pub fn density(&self, tau: f64) -> f64 {
        if tau <= self.tau_min {
            return 0.0;
        }
        self.scale * (tau - self.tau_min).powf(-self.alpha)
    }

    /// Quadrature of the Laplace integral of the density at time `t > 0`.
    pub fn reconstruct(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("reconstruction at t = {t} <= 0")));
        }
        let a = self.alpha;
        let peak = ((1.0 - a) / t).ln();
        let lo = peak - 42.0 / (1.0 - a);
        let hi = (60.0 / t).ln();
        let n = ((hi - lo) / self.step).ceil() as usize;
        let dy = (hi - lo) / n as f64;
        let mut sum = 0.0;
        for i in 0..=n {
            let y = lo + i as f64 * dy;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            sum += w * (-t * y.exp() + (1.0 - a) * y).exp();
        }
        Ok(self.scale * (-t * self.tau_min).exp() * sum * dy)
    }

    /// `int_delta^upper q'(tau)/tau d tau` on a geometric quadrature range.
    pub fn tail_integral(&self, delta: f64, upper: f64) -> f64 {
        let lo = delta.max(self.tau_min * (1.0 + 1e-12)).max(1e-300);
        let f = |tau: f64| self.density(tau) / tau;
        quad::split_moments(lo, upper.max(lo), &f).0
    }
}

/// Bernstein density of the power-law and tempered families.
pub fn bernstein_representation(m: &MemoryKernel) -> Result<BernsteinRepresentation> {
    match m {
        MemoryKernel::PowerLaw { c, alpha } => Ok(BernsteinRepresentation {
            scale: c * (PI * alpha).sin() / PI,
            alpha: *alpha,
            tau_min: 0.0,
            step: 0.2,
        }),
        MemoryKernel::Tempered { c, alpha, lambda } => Ok(BernsteinRepresentation {
            scale: c * (PI * alpha).sin() / PI,
            alpha: *alpha,
            tau_min: *lambda,
            step: 0.2,
        }),
        other => Err(Error::Unsupported(format!(
            "no closed-form Bernstein density for {}",
            other.family()
        ))),
    }
}

/// Tabulated Sonine partner together with its discrete residual.
#[derive(Clone, Debug)]
pub struct SoninePartner {
    /// `K` at cell midpoints.
    pub kernel: TabulatedKernel,
    /// `max_n |(M * K)(t_n) - 1|` for the piecewise-constant discretization.
    pub residual: f64,
}

/// Solves `M * K = 1` with `K` piecewise constant on the cells of `grid`.
pub fn sonine_partner(m: &MemoryKernel, grid: &TimeGrid) -> Result<SoninePartner> {
    if !m.is_singular_at_zero() {
        return Err(Error::Precondition(format!(
            "{} kernel is bounded at t = 0, no integrable Sonine partner",
            m.family()
        )));
    }
    let n = grid.n();
    let h = grid.h();
    let mut mom = Vec::with_capacity(n);
    for l in 0..n {
        mom.push(m.moments(l as f64 * h, (l + 1) as f64 * h)?.0);
    }
    if !(mom[0] > 1e-300) {
        return Err(Error::IllConditioned(format!(
            "leading kernel moment {} vanishes",
            mom[0]
        )));
    }
    let mut k = vec![0.0; n];
    let mut residual: f64 = 0.0;
    for i in 1..=n {
        let mut acc = 0.0;
        for j in 1..i {
            acc += mom[i - j] * k[j - 1];
        }
        k[i - 1] = (1.0 - acc) / mom[0];
        if !k[i - 1].is_finite() {
            return Err(Error::IllConditioned(format!(
                "Sonine recursion overflowed at node {i}"
            )));
        }
    }
    for i in 1..=n {
        let s: f64 = (1..=i).map(|j| mom[i - j] * k[j - 1]).sum();
        residual = residual.max((s - 1.0).abs());
    }
    let times: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) * h).collect();
    let kernel = TabulatedKernel::new(times, k.iter().map(|v| v.max(f64::MIN_POSITIVE)).collect())?;
    Ok(SoninePartner { kernel, residual })
}

/// A sign violation `(-1)^n M^(n)(t) < -tol`.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub order: u32,
    pub t: f64,
    pub value: f64,
}

/// Absolute tolerance of the complete-monotonicity check.
pub const CM_TOLERANCE: f64 = 1e-7;

/// Lists sign violations of `(-1)^n M^(n)` for `n = 0..=n_max` on the positive grid nodes.
pub fn check_complete_monotonicity(
    m: &MemoryKernel,
    n_max: u32,
    grid: &TimeGrid,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for t in grid.times().into_iter().filter(|&t| t > 0.0) {
        for n in 0..=n_max {
            if let Ok(v) = m.signed_derivative(n, t) {
                if v < -CM_TOLERANCE {
                    out.push(Violation {
                        order: n,
                        t,
                        value: v,
                    });
                }
            }
        }
    }
    out
}
