//! Modified-Bessel-function ratios and the quadrature rules used by the
//! moment-inversion solvers.
//!
//! Everything here is dependency-free on purpose: the Bessel ratios sit inside
//! Newton iterations and the quadrature nodes are fixed once per fit, so a
//! small, fully controlled implementation is preferable to a general
//! special-function library.

use crate::{Error, Result};

/// Largest argument evaluated by the scaled power series; above this the
/// asymptotic ratio expansion is both cheaper and accurate to ~1e-15.
const ASYMPTOTIC_SWITCH: f64 = 700.0;

/// Signed asymptotic series coefficients for I_n(λ) ~ e^λ/√(2πλ) Σ s_k/λ^k,
/// n = 0, 1, 2, truncated after 1/λ⁴ (Handbook of Mathematical Functions
/// 9.7.1; the remainder at the switch point is below 1e-15).
const ASYM_SERIES: [[f64; 5]; 3] = [
    [1.0, 1.0 / 8.0, 9.0 / 128.0, 75.0 / 1024.0, 11025.0 / 98304.0],
    [
        1.0,
        -3.0 / 8.0,
        -15.0 / 128.0,
        -105.0 / 1024.0,
        -14175.0 / 98304.0,
    ],
    [
        1.0,
        -15.0 / 8.0,
        105.0 / 128.0,
        315.0 / 1024.0,
        31185.0 / 98304.0,
    ],
];

/// Evaluates e^{−λ}·[I₀(λ), I₁(λ), I₂(λ)] by the power series
/// I_n(λ) = Σ_k (λ/2)^{2k+n}/(k!(k+n)!), scaled so no intermediate overflows
/// for any λ ≤ 700. Terms are positive; Kahan compensation keeps the relative
/// error at rounding level even when thousands of terms contribute.
fn scaled_bessel_series(lambda: f64) -> [f64; 3] {
    let half = 0.5 * lambda;
    let q = half * half;
    let scale = (-lambda).exp();
    let mut out = [0.0f64; 3];
    for (n, slot) in out.iter_mut().enumerate() {
        let mut term = scale
            * match n {
                0 => 1.0,
                1 => half,
                _ => 0.5 * half * half,
            };
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        let mut k = 0usize;
        loop {
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            if (k as f64) > half && term <= sum * 1e-18 {
                break;
            }
            term *= q / (((k + 1) * (k + 1 + n)) as f64);
            k += 1;
            debug_assert!(k < 20_000, "series cannot run away for lambda <= 700");
        }
        *slot = sum;
    }
    out
}

/// Horner evaluation of the truncated asymptotic series Σ s_k/λ^k.
fn asymptotic_sum(n: usize, lambda: f64) -> f64 {
    let s = &ASYM_SERIES[n];
    let x = 1.0 / lambda;
    (((s[4] * x + s[3]) * x + s[2]) * x + s[1]) * x + s[0]
}

/// Ratio Iₙ(λ)/I₀(λ) of modified Bessel functions of the first kind.
///
/// For λ ≤ 700 the ratio is formed from exponentially scaled power series
/// (overflow-free for all admissible λ); for λ > 700 from the ratio of the
/// truncated asymptotic expansions. Both branches are accurate to ~1e-15 at
/// the switch point, so the ratio is continuous there to below 1e-13.
///
/// # Errors
/// `Error::Domain` if `n` is not 1 or 2, or if `lambda` is negative or NaN.
pub fn bessel_ratio(n: u32, lambda: f64) -> Result<f64> {
    if !(n == 1 || n == 2) {
        return Err(Error::Domain {
            what: "bessel_ratio",
            detail: format!("order n = {n} not in {{1, 2}}"),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::Domain {
            what: "bessel_ratio",
            detail: format!("lambda = {lambda} must be nonnegative"),
        });
    }
    if lambda.is_infinite() {
        return Ok(1.0);
    }
    if lambda > ASYMPTOTIC_SWITCH {
        return Ok(asymptotic_sum(n as usize, lambda) / asymptotic_sum(0, lambda));
    }
    let scaled = scaled_bessel_series(lambda);
    Ok(scaled[n as usize] / scaled[0])
}

/// Both ratios (I₁/I₀, I₂/I₀) from a single series evaluation; shared by the
/// planar solvers, which always need the pair.
pub(crate) fn ratios12(lambda: f64) -> (f64, f64) {
    debug_assert!(lambda >= 0.0);
    if lambda.is_infinite() {
        return (1.0, 1.0);
    }
    if lambda > ASYMPTOTIC_SWITCH {
        let den = asymptotic_sum(0, lambda);
        (
            asymptotic_sum(1, lambda) / den,
            asymptotic_sum(2, lambda) / den,
        )
    } else {
        let s = scaled_bessel_series(lambda);
        (s[1] / s[0], s[2] / s[0])
    }
}

/// Natural logarithm of I₀(λ) for λ ≥ 0, stable for all magnitudes
/// (log I₀(λ) ≈ λ for large λ; the scaled series keeps the correction exact).
pub fn log_bessel_i0(lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    if lambda > ASYMPTOTIC_SWITCH {
        lambda - 0.5 * (2.0 * std::f64::consts::PI * lambda).ln()
            + asymptotic_sum(0, lambda).ln()
    } else {
        lambda + scaled_bessel_series(lambda)[0].ln()
    }
}

/// Quadrature rule family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    /// Equispaced nodes on [0, 2π) with uniform weights (spectrally accurate
    /// for periodic integrands).
    TrapezoidPeriodic,
    /// Gauss-Legendre nodes mapped to the polar angle θ = arccos x, weighted
    /// for integrals ∫₀^π g(θ) sinθ dθ.
    GaussPolar,
}

/// Nodes and weights of a fixed quadrature rule.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Angular nodes in radians, strictly increasing.
    pub nodes: Vec<f64>,
    /// Quadrature weights; they sum to the measure of the interval.
    pub weights: Vec<f64>,
    /// Which family the rule belongs to.
    pub kind: RuleKind,
}

impl QuadratureRule {
    /// Applies the rule to `f`: Σ wᵢ f(nodeᵢ).
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss-Legendre nodes and weights on (−1, 1), nodes in descending order.
///
/// Computed by Newton iteration on P_n with the standard Chebyshev-based
/// initial guesses; each node is polished to |Δx| ≤ 1e-15. Symmetry is
/// enforced exactly by mirroring the first half.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // i-th largest root, counted from x = +1.
        let mut xi = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Legendre recurrence for P_n(xi) and P_{n-1}(xi).
            let mut p0 = 1.0f64;
            let mut p1 = xi;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * xi * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = (n as f64) * (xi * p1 - p0) / (xi * xi - 1.0);
            let step = p1 / dp;
            xi -= step;
            if step.abs() <= 1e-15 {
                break;
            }
        }
        // One clean derivative evaluation at the converged node.
        let mut p0 = 1.0f64;
        let mut p1 = xi;
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * xi * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = (n as f64) * (xi * p1 - p0) / (xi * xi - 1.0);
        let wi = 2.0 / ((1.0 - xi * xi) * dp * dp);
        x[i] = xi;
        w[i] = wi;
        x[n - 1 - i] = -xi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[half - 1] = 0.0;
    }
    (x, w)
}

/// N-point Gauss rule for the polar angle: nodes θᵢ = arccos xᵢ of the
/// Gauss-Legendre points, weights the Gauss-Legendre weights, so that
/// ∫₀^π g(θ) sinθ dθ = Σ wᵢ g(θᵢ) exactly whenever g is a polynomial of
/// degree ≤ 2N−1 in cosθ.
///
/// # Errors
/// `Error::Domain` for N < 2.
pub fn gauss_polar_rule(n: usize) -> Result<QuadratureRule> {
    if n < 2 {
        return Err(Error::Domain {
            what: "gauss_polar_rule",
            detail: format!("need at least 2 nodes, got {n}"),
        });
    }
    let (x, w) = gauss_legendre(n);
    // x is descending, so arccos is ascending.
    let nodes: Vec<f64> = x.iter().map(|&xi| xi.acos()).collect();
    Ok(QuadratureRule {
        nodes,
        weights: w,
        kind: RuleKind::GaussPolar,
    })
}

/// N-point periodic trapezoid rule on [0, 2π): nodes 2πk/N, weights 2π/N.
///
/// # Errors
/// `Error::Domain` for N < 4 or odd N (the moment integrands require the
/// even-N symmetry).
pub fn trapezoid_rule(n: usize) -> Result<QuadratureRule> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::Domain {
            what: "trapezoid_rule",
            detail: format!("need an even node count >= 4, got {n}"),
        });
    }
    let h = 2.0 * std::f64::consts::PI / n as f64;
    Ok(QuadratureRule {
        nodes: (0..n).map(|k| k as f64 * h).collect(),
        weights: vec![h; n],
        kind: RuleKind::TrapezoidPeriodic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: unscaled power series of Iₙ(λ), usable for
    /// moderate λ where e^λ stays in range. Deliberately shares no code with
    /// the scaled implementation above.
    fn bessel_series_oracle(n: usize, lambda: f64) -> f64 {
        let half = 0.5 * lambda;
        let mut factorial_n = 1.0f64;
        for k in 1..=n {
            factorial_n *= k as f64;
        }
        let mut term = half.powi(n as i32) / factorial_n;
        let mut sum = 0.0;
        for k in 0..500 {
            sum += term;
            term *= half * half / ((k as f64 + 1.0) * (k as f64 + 1.0 + n as f64));
            if term < sum * 1e-19 {
                break;
            }
        }
        sum
    }

    /// Adaptive Simpson oracle on [a, b] to absolute tolerance `tol`.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                recurse(f, a, m, left, 0.5 * tol, depth - 1)
                    + recurse(f, m, b, right, 0.5 * tol, depth - 1)
            }
        }
        recurse(f, a, b, simpson(f, a, b), tol, 40)
    }

    #[test]
    fn ratio_matches_series_oracle_at_unit_argument() {
        // I₁(1)/I₀(1) against the independent unscaled series.
        let oracle = bessel_series_oracle(1, 1.0) / bessel_series_oracle(0, 1.0);
        let got = bessel_ratio(1, 1.0).unwrap();
        assert!((got - oracle).abs() <= 1e-14, "got {got}, oracle {oracle}");
        // Frozen value of the same oracle, as a transcription guard.
        assert!((oracle - 0.446_389_965_896_534_5).abs() <= 1e-15);
    }

    #[test]
    fn ratio_oracle_sweep_small_lambda() {
        for &n in &[1u32, 2] {
            for i in 0..60 {
                let lambda = 0.25 * i as f64 + 0.01;
                let oracle =
                    bessel_series_oracle(n as usize, lambda) / bessel_series_oracle(0, lambda);
                let got = bessel_ratio(n, lambda).unwrap();
                assert!(
                    (got - oracle).abs() <= 1e-14,
                    "n={n} lambda={lambda}: got {got}, oracle {oracle}"
                );
            }
        }
    }

    #[test]
    fn ratio_limits() {
        assert_eq!(bessel_ratio(1, 0.0).unwrap(), 0.0);
        assert_eq!(bessel_ratio(2, 0.0).unwrap(), 0.0);
        let near_one = bessel_ratio(1, 1e6).unwrap();
        assert!(near_one < 1.0 && near_one > 1.0 - 1e-5, "got {near_one}");
        assert_eq!(bessel_ratio(1, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn ratio_rejects_bad_inputs() {
        assert!(bessel_ratio(0, 1.0).is_err());
        assert!(bessel_ratio(3, 1.0).is_err());
        assert!(bessel_ratio(1, -0.5).is_err());
        assert!(bessel_ratio(1, f64::NAN).is_err());
    }

    #[test]
    fn ratio_continuous_across_branch_switch() {
        for &n in &[1u32, 2] {
            let below = bessel_ratio(n, ASYMPTOTIC_SWITCH).unwrap();
            let above = bessel_ratio(n, ASYMPTOTIC_SWITCH * (1.0 + 1e-12)).unwrap();
            assert!(
                (below - above).abs() <= 1e-13,
                "n={n}: series {below} vs asymptotic {above}"
            );
        }
    }

    #[test]
    fn ratio_strictly_increasing_in_lambda() {
        let mut prev = bessel_ratio(1, 0.0).unwrap();
        for i in 1..=1000 {
            let lambda = 1e4 * i as f64 / 1000.0;
            let next = bessel_ratio(1, lambda).unwrap();
            assert!(next > prev, "not increasing at lambda={lambda}");
            prev = next;
        }
    }

    #[test]
    fn log_i0_against_series_and_asymptotics() {
        assert_eq!(log_bessel_i0(0.0), 0.0);
        let oracle = bessel_series_oracle(0, 1.0).ln();
        assert!((log_bessel_i0(1.0) - oracle).abs() <= 1e-15);
        // Continuity across the branch switch.
        let below = log_bessel_i0(ASYMPTOTIC_SWITCH);
        let above = log_bessel_i0(ASYMPTOTIC_SWITCH * (1.0 + 1e-12));
        assert!((below - above).abs() <= 1e-10 * below.abs());
    }

    #[test]
    fn gauss_polar_integrates_low_moments_exactly() {
        // ∫₀^π sinθ dθ = 2 with two nodes.
        let rule = gauss_polar_rule(2).unwrap();
        assert!((rule.integrate(|_| 1.0) - 2.0).abs() <= 1e-15);
        // ∫₀^π cos²θ sinθ dθ = 2/3.
        let rule = gauss_polar_rule(16).unwrap();
        let got = rule.integrate(|t| t.cos() * t.cos());
        assert!((got - 2.0 / 3.0).abs() <= 1e-15, "got {got}");
    }

    #[test]
    fn gauss_polar_matches_adaptive_simpson_oracle() {
        // ∫₀^π e^{cosθ} sinθ dθ; the oracle integrates the θ-form directly.
        let rule = gauss_polar_rule(64).unwrap();
        let got = rule.integrate(|t| t.cos().exp());
        let oracle = adaptive_simpson(&|t: f64| t.cos().exp() * t.sin(), 0.0, std::f64::consts::PI, 1e-15);
        assert!((got - oracle).abs() <= 1e-14, "got {got}, oracle {oracle}");
        // The integral also has the closed form 2 sinh 1.
        assert!((got - 2.0 * 1.0f64.sinh()).abs() <= 1e-14);
    }

    #[test]
    fn gauss_polar_nodes_ordered_and_weights_sum_to_two() {
        for &n in &[2usize, 3, 7, 64, 333] {
            let rule = gauss_polar_rule(n).unwrap();
            assert_eq!(rule.kind, RuleKind::GaussPolar);
            assert!(rule.nodes.windows(2).all(|p| p[0] < p[1]));
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 2.0).abs() <= 1e-14, "n={n}: weight sum {total}");
        }
        assert!(gauss_polar_rule(1).is_err());
    }

    #[test]
    fn trapezoid_basics() {
        let rule = trapezoid_rule(8).unwrap();
        let got = rule.integrate(|p| p.cos() * p.cos());
        assert!((got - std::f64::consts::PI).abs() <= 1e-15);

        let rule = trapezoid_rule(4).unwrap();
        let measure = rule.integrate(|_| 1.0);
        assert!((measure - 2.0 * std::f64::consts::PI).abs() <= 1e-14);

        assert!(trapezoid_rule(2).is_err());
        assert!(trapezoid_rule(7).is_err());
    }

    #[test]
    fn trapezoid_matches_bessel_series_oracle() {
        // ∫₀^{2π} e^{cosφ} dφ = 2π I₀(1); with 16 nodes the first aliased
        // harmonic is I₁₆(1) ~ 7e-19, far below tolerance.
        let oracle = 2.0 * std::f64::consts::PI * bessel_series_oracle(0, 1.0);
        let rule = trapezoid_rule(16).unwrap();
        let got = rule.integrate(|p| p.cos().exp());
        assert!((got - oracle).abs() <= 1e-13, "got {got}, oracle {oracle}");
        // ∫₀^{2π} e^{cos2φ} dφ is the same value but the integrand has period
        // π, so the node count must double for the same aliasing level.
        let rule = trapezoid_rule(32).unwrap();
        let got = rule.integrate(|p| (2.0 * p).cos().exp());
        assert!((got - oracle).abs() <= 1e-13, "got {got}, oracle {oracle}");
    }

    #[test]
    fn rules_integrate_constants_to_measure() {
        for &n in &[4usize, 10, 64] {
            let rule = trapezoid_rule(n).unwrap();
            let c = rule.integrate(|_| 3.5);
            assert!((c - 7.0 * std::f64::consts::PI).abs() <= 1e-13);
        }
        for &n in &[2usize, 5, 33] {
            let rule = gauss_polar_rule(n).unwrap();
            let c = rule.integrate(|_| 3.5);
            assert!((c - 7.0).abs() <= 1e-13);
        }
    }
}
