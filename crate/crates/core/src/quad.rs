use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

fn rule(cell: &'static OnceLock<Vec<(f64, f64)>>, n: usize) -> &'static [(f64, f64)] {
    cell.get_or_init(|| {
        GaussLegendre::new(NonZeroUsize::new(n).expect("positive degree"))
            .as_node_weight_pairs()
            .to_vec()
    })
}

/// 16-point Gauss-Legendre nodes and weights on [-1, 1].
pub(crate) fn gl16() -> &'static [(f64, f64)] {
    static R: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    rule(&R, 16)
}

/// 64-point Gauss-Legendre nodes and weights on [-1, 1].
pub(crate) fn gl64() -> &'static [(f64, f64)] {
    static R: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    rule(&R, 64)
}

/// Gauss-Legendre nodes mapped to (0, 1) with matching weights, for a given order.
pub(crate) fn unit_rule(order: usize) -> Vec<(f64, f64)> {
    let base: Vec<(f64, f64)> = match order {
        16 => gl16().to_vec(),
        64 => gl64().to_vec(),
        n => GaussLegendre::new(NonZeroUsize::new(n.max(1)).expect("positive degree"))
            .as_node_weight_pairs()
            .to_vec(),
    };
    base.into_iter()
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect()
}

/// Integrates `f` and `s f` over [a, b] with 16-point Gauss-Legendre.
#[inline]
pub(crate) fn gl16_moments<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut i0 = 0.0;
    let mut i1 = 0.0;
    for &(x, w) in gl16() {
        let s = mid + half * x;
        let v = w * f(s);
        i0 += v;
        i1 += v * s;
    }
    (half * i0, half * i1)
}

/// Moments of a function that is smooth on (0, inf) over [a, b] with a > 0.
/// The interval is split geometrically so every piece has b_i / a_i <= 2,
/// which keeps the nearest singularity at the origin well separated.
pub(crate) fn split_moments<F: Fn(f64) -> f64>(a: f64, b: f64, f: &F) -> (f64, f64) {
    let mut i0 = 0.0;
    let mut i1 = 0.0;
    let mut lo = a;
    while lo < b {
        let hi = (2.0 * lo).min(b);
        let (p, q) = gl16_moments(lo, hi, f);
        i0 += p;
        i1 += q;
        lo = hi;
    }
    (i0, i1)
}

/// Cumulative trapezoid integral with uniform step `h`, starting at zero.
pub(crate) fn cumulative_trapezoid(f: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in f.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out.truncate(f.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl16_integrates_polynomials_exactly() {
        let (i0, i1) = gl16_moments(0.0, 2.0, |s| s.powi(5));
        assert!((i0 - 64.0 / 6.0).abs() < 1e-12);
        assert!((i1 - 128.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn split_moments_of_singular_power() {
        let (i0, _) = split_moments(1e-6, 1.0, &|s: f64| s.powf(-0.5));
        assert!((i0 - 2.0 * (1.0 - 1e-3)).abs() < 1e-12);
    }

    #[test]
    fn unit_rule_sums_to_one() {
        let s: f64 = unit_rule(64).iter().map(|p| p.1).sum();
        assert!((s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_of_linear_is_exact() {
        let f: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let c = cumulative_trapezoid(&f, 0.1);
        assert!((c[10] - 0.5).abs() < 1e-14);
    }
}
