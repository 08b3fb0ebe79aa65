//! Spectral data of the Dirichlet operator `-d^2/dx^2 - a` on `(0, L)` and of
//! its distributed fractional powers.
//!
//! Mode indices are zero-based in the API: slot `i` holds the `(i+1)`-th
//! eigenpair.

use crate::error::{Error, Result};
use crate::kernels::Measure;
use std::f64::consts::PI;

/// Measure over exponents defining `lambda_k = int mu_k^beta d rho(beta)`.
pub type DistributedMeasure = Measure;

/// Number of trapezoid points used for spatial inner products.
pub const SPACE_QUADRATURE: usize = 2048;

/// Zeroth-order coefficient `a <= 0` of the operator.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    Constant(f64),
    /// Samples on a uniform mesh spanning `[0, L]`, interpolated linearly.
    Samples(Vec<f64>),
}

impl Potential {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Potential::Constant(a) => *a <= 0.0,
            Potential::Samples(s) => s.len() >= 2 && s.iter().all(|a| *a <= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(
                "potential a must be nonpositive (and sampled at two or more points)".into(),
            ))
        }
    }

    fn eval(&self, x: f64, length: f64) -> f64 {
        match self {
            Potential::Constant(a) => *a,
            Potential::Samples(s) => {
                let pos = (x / length).clamp(0.0, 1.0) * (s.len() - 1) as f64;
                let i = (pos.floor() as usize).min(s.len() - 2);
                let f = pos - i as f64;
                (1.0 - f) * s[i] + f * s[i + 1]
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Shapes {
    /// `sqrt(2/L) sin(k pi x / L)`.
    Sine,
    /// Nodal values on the uniform finite-difference mesh, ends included.
    Nodal(Vec<Vec<f64>>),
}

/// Dirichlet eigenpairs `(mu_k, v_k)` with `L2`-orthonormal eigenfunctions.
#[derive(Clone, Debug)]
pub struct SpectralOperator {
    length: f64,
    potential: Potential,
    eigenvalues: Vec<f64>,
    shapes: Shapes,
}

impl SpectralOperator {
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `v_k(x)` for zero-based mode index `k`.
    pub fn eval_mode(&self, k: usize, x: f64) -> f64 {
        let l = self.length;
        match &self.shapes {
            Shapes::Sine => (2.0 / l).sqrt() * ((k + 1) as f64 * PI * x / l).sin(),
            Shapes::Nodal(v) => {
                let row = &v[k];
                let m = row.len() - 1;
                let pos = (x / l).clamp(0.0, 1.0) * m as f64;
                let i = (pos.floor() as usize).min(m - 1);
                let f = pos - i as f64;
                (1.0 - f) * row[i] + f * row[i + 1]
            }
        }
    }

    /// `int_a^b v_k dx`.
    pub fn mode_integral(&self, k: usize, a: f64, b: f64) -> f64 {
        match &self.shapes {
            Shapes::Sine => {
                let l = self.length;
                let w = (k + 1) as f64 * PI / l;
                (2.0 / l).sqrt() * ((w * a).cos() - (w * b).cos()) / w
            }
            Shapes::Nodal(_) => trapezoid(a, b, SPACE_QUADRATURE, |x| self.eval_mode(k, x)),
        }
    }

    /// `<v_k, v_l>` by the 2048-point trapezoid rule.
    pub fn inner(&self, k: usize, l: usize) -> f64 {
        trapezoid(0.0, self.length, SPACE_QUADRATURE, |x| {
            self.eval_mode(k, x) * self.eval_mode(l, x)
        })
    }

    /// Coefficients `<g, v_k>` of a function on `(0, L)`.
    pub fn project<F: Fn(f64) -> f64>(&self, g: F) -> Vec<f64> {
        (0..self.mode_count())
            .map(|k| {
                trapezoid(0.0, self.length, SPACE_QUADRATURE, |x| {
                    g(x) * self.eval_mode(k, x)
                })
            })
            .collect()
    }

    /// Copy with the potential lowered by `eta`, i.e. `mu_k + eta`.
    pub fn shifted(&self, eta: f64) -> Result<Self> {
        let potential = match &self.potential {
            Potential::Constant(a) => Potential::Constant(a - eta),
            Potential::Samples(s) => Potential::Samples(s.iter().map(|a| a - eta).collect()),
        };
        potential.validate()?;
        Ok(Self {
            length: self.length,
            potential,
            eigenvalues: self.eigenvalues.iter().map(|m| m + eta).collect(),
            shapes: self.shapes.clone(),
        })
    }
}

fn trapezoid<F: Fn(f64) -> f64>(a: f64, b: f64, n: usize, f: F) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = 0.5 * (f(a) + f(b));
    for i in 1..n {
        s += f(a + i as f64 * h);
    }
    s * h
}

/// Closed-form eigenpairs for a constant potential: `mu_k = (k pi / L)^2 - a`.
pub fn dirichlet_eigenpairs(length: f64, a: f64, modes: usize) -> Result<SpectralOperator> {
    if !(length > 0.0) {
        return Err(Error::Precondition(format!(
            "length {length} must be positive"
        )));
    }
    if modes == 0 {
        return Err(Error::Precondition("mode count must be positive".into()));
    }
    let potential = Potential::Constant(a);
    potential.validate()?;
    let eigenvalues = (1..=modes)
        .map(|k| (k as f64 * PI / length).powi(2) - a)
        .collect();
    Ok(SpectralOperator {
        length,
        potential,
        eigenvalues,
        shapes: Shapes::Sine,
    })
}

/// Number of eigenvalues below `x` of the symmetric tridiagonal matrix (Sturm count).
fn sturm_count(diag: &[f64], off: f64, x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for (i, d) in diag.iter().enumerate() {
        let prev = if i == 0 { 0.0 } else { off * off / q };
        q = d - x - prev;
        if q == 0.0 {
            q = f64::EPSILON * (d.abs() + x.abs()).max(1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Solves `(T - shift) y = b` for symmetric tridiagonal `T` with constant off-diagonal.
fn tridiagonal_solve(diag: &[f64], off: f64, shift: f64, b: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0] - shift;
    if piv == 0.0 {
        piv = f64::EPSILON;
    }
    c[0] = off / piv;
    d[0] = b[0] / piv;
    for i in 1..n {
        let mut den = diag[i] - shift - off * c[i - 1];
        if den == 0.0 {
            den = f64::EPSILON;
        }
        c[i] = off / den;
        d[i] = (b[i] - off * d[i - 1]) / den;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "inverse iteration produced non-finite values".into(),
        ));
    }
    Ok(d)
}

/// Eigenpairs of the central-difference discretization of `-v'' - a v` with
/// Dirichlet ends on `mesh_size` cells; `mesh_size >= 8K`.
///
/// Eigenvalues come from Sturm-sequence bisection, eigenvectors from inverse
/// iteration. Eigenfunctions are normalized in the trapezoidal `L2` norm and
/// signed so that `v_k'(0) > 0`.
pub fn sturm_liouville_fd(
    length: f64,
    a: &Potential,
    mesh_size: usize,
    modes: usize,
) -> Result<SpectralOperator> {
    if !(length > 0.0) {
        return Err(Error::Precondition(format!(
            "length {length} must be positive"
        )));
    }
    if modes == 0 {
        return Err(Error::Precondition("mode count must be positive".into()));
    }
    if mesh_size < 8 * modes {
        return Err(Error::Precondition(format!(
            "mesh of {mesh_size} cells cannot resolve {modes} modes (needs {})",
            8 * modes
        )));
    }
    a.validate()?;
    let h = length / mesh_size as f64;
    let off = -1.0 / (h * h);
    let diag: Vec<f64> = (1..mesh_size)
        .map(|i| 2.0 / (h * h) - a.eval(i as f64 * h, length))
        .collect();
    let amin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let amax = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Gershgorin bounds.
    let (glo, ghi) = (amin - 2.0 * off.abs(), amax + 2.0 * off.abs());
    let mut eigenvalues = Vec::with_capacity(modes);
    let mut shapes = Vec::with_capacity(modes);
    for k in 0..modes {
        let (mut lo, mut hi) = (glo, ghi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sturm_count(&diag, off, mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
                break;
            }
        }
        let mu = 0.5 * (lo + hi);
        let shift = mu - 1e-10 * mu.abs().max(1.0);
        let mut y: Vec<f64> = (1..mesh_size)
            .map(|i| ((k + 1) as f64 * PI * i as f64 / mesh_size as f64).sin() + 1e-3)
            .collect();
        for _ in 0..3 {
            y = tridiagonal_solve(&diag, off, shift, &y)?;
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::Numerical(format!(
                    "inverse iteration collapsed for mode {}",
                    k + 1
                )));
            }
            y.iter_mut().for_each(|v| *v /= norm);
        }
        let mut row = Vec::with_capacity(mesh_size + 1);
        row.push(0.0);
        row.extend_from_slice(&y);
        row.push(0.0);
        // Interior points only: end values vanish, so the trapezoid norm is h * sum.
        let norm = (h * y.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let sign = if row[1] < 0.0 { -1.0 } else { 1.0 };
        row.iter_mut().for_each(|v| *v *= sign / norm);
        eigenvalues.push(mu);
        shapes.push(row);
    }
    Ok(SpectralOperator {
        length,
        potential: a.clone(),
        eigenvalues,
        shapes: Shapes::Nodal(shapes),
    })
}

/// Eigenvalues `lambda_k = int mu_k^beta d rho(beta)` of a distributed power.
#[derive(Clone, Debug)]
pub struct FractionalSpectrum {
    pub base: SpectralOperator,
    pub measure: DistributedMeasure,
    pub eigenvalues: Vec<f64>,
}

impl FractionalSpectrum {
    /// Spectrum with eigenvalues supplied directly, for synthetic experiments.
    pub fn from_eigenvalues(base: SpectralOperator, eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.len() != base.mode_count() {
            return Err(Error::Precondition(
                "eigenvalue count differs from mode count".into(),
            ));
        }
        if eigenvalues.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Domain("eigenvalues must be nonnegative".into()));
        }
        Ok(Self {
            base,
            measure: Measure::Atoms(vec![(1.0, 1.0)]),
            eigenvalues,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// `int mu^beta d rho(beta)` for a single base eigenvalue.
pub fn distributed_power(mu: f64, measure: &DistributedMeasure) -> f64 {
    measure.integrate(|b| mu.powf(b))
}

pub fn distributed_eigenvalues(
    op: &SpectralOperator,
    measure: &DistributedMeasure,
) -> Result<FractionalSpectrum> {
    measure.validate()?;
    let eigenvalues = op
        .eigenvalues()
        .iter()
        .map(|&mu| distributed_power(mu, measure))
        .collect();
    Ok(FractionalSpectrum {
        base: op.clone(),
        measure: measure.clone(),
        eigenvalues,
    })
}

/// Linear functional on `L2(0, L)` through which a solution is observed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObservationFunctional {
    PointValue(f64),
    SubintervalMean(f64, f64),
}

/// `Phi_k = Phi(v_k)` for every mode of `op`.
pub fn functional_coefficients(
    op: &SpectralOperator,
    phi: &ObservationFunctional,
) -> Result<Vec<f64>> {
    let l = op.length();
    match *phi {
        ObservationFunctional::PointValue(x0) => {
            if !(x0 > 0.0 && x0 < l) {
                return Err(Error::Precondition(format!(
                    "point {x0} is not interior to (0, {l})"
                )));
            }
            Ok((0..op.mode_count()).map(|k| op.eval_mode(k, x0)).collect())
        }
        ObservationFunctional::SubintervalMean(a, b) => {
            if !(0.0 <= a && a < b && b <= l) {
                return Err(Error::Precondition(format!(
                    "subinterval ({a}, {b}) not inside [0, {l}]"
                )));
            }
            Ok((0..op.mode_count())
                .map(|k| op.mode_integral(k, a, b) / (b - a))
                .collect())
        }
    }
}
