//! Moment inversion for the diagonalized Bingham distribution.
//!
//! Working in the eigenframe of the normalized second-moment tensor, the
//! distribution is Ψ ∝ exp(λ′₁p₁² + λ′₂p₂²) with λ′ᵢ = λᵢ − λ_d ≥ 0 measured
//! from the smallest exponent. This module solves for λ′ given the leading
//! eigenvalues (μ₁, μ₂), evaluates normalized fourth moments, and provides
//! the domain transforms between the admissible eigenvalue triangle and the
//! unit square on which the interpolants are fitted.

use crate::special::{self, gauss_legendre, log_bessel_i0, ratios12};
use crate::{Error, Result};

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Residual tolerance for the planar (2D) Newton solve.
const TOL_2D: f64 = 1e-14;
/// Residual tolerance for the two-parameter (3D) Newton solve.
const TOL_3D: f64 = 1e-13;
/// Iteration budget for the planar Newton solve.
const MAX_ITER_2D: usize = 100;
/// Iteration budget for the 3D Newton solve.
const MAX_ITER_3D: usize = 200;
/// Step-halving budget per 3D Newton iteration.
const MAX_HALVINGS: usize = 30;
/// Eigenvalue round-off violations up to this size are projected back onto
/// the admissible set; anything larger is a caller bug.
const CLAMP_TOL: f64 = 1e-12;

/// Exponents and normalization of a diagonal Bingham distribution.
///
/// `lambdas` holds λ′ᵢ = λᵢ − λ_d (shifted so the smallest exponent is zero);
/// in 2D only `lambdas[0]` is meaningful and equals twice the λ of the
/// single-angle form Ψ ∝ exp(λ cos 2θ). `log_z` is ln ∫ exp(λ′·pp) dp over
/// the unit circle/sphere in the same shifted convention.
#[derive(Debug, Clone, Copy)]
pub struct BinghamParams {
    /// Spatial dimension, 2 or 3.
    pub d: usize,
    /// Shifted exponents λ′₁ ≥ λ′₂ ≥ 0 (λ′₂ unused in 2D).
    pub lambdas: [f64; 2],
    /// Log of the normalization constant in the shifted convention.
    pub log_z: f64,
}

impl BinghamParams {
    /// Parameters of the planar distribution Ψ ∝ exp(λ cos 2θ).
    pub fn planar(lambda: f64) -> Self {
        BinghamParams {
            d: 2,
            lambdas: [2.0 * lambda, 0.0],
            // ∫₀^{2π} e^{2λ cos²θ} dθ = e^λ · 2π I₀(λ).
            log_z: lambda + (2.0 * PI).ln() + log_bessel_i0(lambda),
        }
    }
}

/// Ordered leading eigenvalues (μ₁, μ₂) of a normalized 3D second-moment
/// tensor. Membership: 1/3 ≤ μ₁ ≤ 1, μ₂ ≤ μ₁, μ₃ = 1 − μ₁ − μ₂ ∈ [0, μ₂].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrianglePoint {
    mu1: f64,
    mu2: f64,
}

impl TrianglePoint {
    /// Validates (μ₁, μ₂), projecting violations up to 1e-12 (eigensolver
    /// round-off) back onto the admissible set.
    ///
    /// # Errors
    /// `Error::Domain` when the point is farther outside than 1e-12.
    pub fn new(mu1: f64, mu2: f64) -> Result<Self> {
        Self::project(mu1, mu2, CLAMP_TOL)
    }

    /// Like [`TrianglePoint::new`] with a caller-chosen projection tolerance
    /// (the time stepper allows larger transients than fresh eigensolves).
    pub fn project(mu1: f64, mu2: f64, tol: f64) -> Result<Self> {
        let mu3 = 1.0 - mu1 - mu2;
        if !(mu1.is_finite() && mu2.is_finite()) {
            return Err(Error::Domain {
                what: "TrianglePoint",
                detail: format!("non-finite eigenvalues ({mu1}, {mu2})"),
            });
        }
        if mu2 > mu1 + tol || mu3 > mu2 + tol || mu3 < -tol || mu1 > 1.0 + tol {
            return Err(Error::Domain {
                what: "TrianglePoint",
                detail: format!(
                    "eigenvalues ({mu1}, {mu2}, {mu3}) violate ordering/positivity beyond {tol:e}"
                ),
            });
        }
        // Project: clamp the small violations into [0, 1], restore the unit
        // trace, re-sort, and snap renormalization round-off so the stored
        // pair satisfies 0 ≤ μ₂ ≤ μ₁ ≤ 1 exactly.
        let mut m = [
            mu1.clamp(0.0, 1.0),
            mu2.clamp(0.0, 1.0),
            mu3.clamp(0.0, 1.0),
        ];
        let sum: f64 = m.iter().sum();
        for v in &mut m {
            *v /= sum;
        }
        m.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mu1 = m[0].min(1.0);
        Ok(TrianglePoint {
            mu1,
            mu2: m[1].clamp(0.0, mu1),
        })
    }

    /// Largest eigenvalue μ₁.
    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    /// Middle eigenvalue μ₂.
    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    /// Smallest eigenvalue μ₃ = 1 − μ₁ − μ₂.
    pub fn mu3(&self) -> f64 {
        1.0 - self.mu1 - self.mu2
    }

    /// True at the isotropic corner to round-off (where the square map is
    /// singular and the closure has the analytic value).
    pub fn is_isotropic(&self) -> bool {
        (self.mu1 - 1.0 / 3.0).abs() <= 1e-14 && (self.mu2 - 1.0 / 3.0).abs() <= 1e-14
    }
}

/// Point in the fitting square [−1, 1]².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquarePoint {
    /// First square coordinate.
    pub nu1: f64,
    /// Second square coordinate.
    pub nu2: f64,
}

/// Maps the eigenvalue triangle onto the square [−1, 1]².
///
/// The composition is H = G∘A with A(μ₁, μ₂) = (μ₁ − μ₂, 2μ₁ + 4μ₂ − 2) and
/// G(μ′) = (2(μ₁′ + μ₂′) − 1, (μ₁′ − μ₂′)/(μ₁′ + μ₂′)). The aligned corner
/// maps to (1, 1), the planar-isotropic corner to (1, −1); the isotropic
/// corner is singular (G divides by zero) and must be special-cased by the
/// caller.
///
/// # Errors
/// `Error::Singular` at the isotropic corner.
pub fn triangle_to_square(p: &TrianglePoint) -> Result<SquarePoint> {
    if p.is_isotropic() {
        return Err(Error::Singular {
            what: "triangle_to_square",
            detail: "the isotropic corner has no square image".to_string(),
        });
    }
    let a1 = p.mu1 - p.mu2;
    let a2 = 2.0 * p.mu1 + 4.0 * p.mu2 - 2.0;
    // a1 + a2 = (μ₁ − μ₃) + (μ₂ − μ₃) ≥ μ₁ − 1/3, which the isotropy gate
    // bounds away from zero.
    let sum = a1 + a2;
    Ok(SquarePoint {
        nu1: 2.0 * sum - 1.0,
        nu2: (a1 - a2) / sum,
    })
}

/// Inverse of [`triangle_to_square`]; total on the square, with the whole
/// edge ν₁ = −1 collapsing to the isotropic corner.
pub fn square_to_triangle(q: &SquarePoint) -> TrianglePoint {
    // G⁻¹(ν) = ((1 + ν₁)(1 + ν₂)/4, (1 + ν₁)(1 − ν₂)/4).
    let g1 = 0.25 * (1.0 + q.nu1) * (1.0 + q.nu2);
    let g2 = 0.25 * (1.0 + q.nu1) * (1.0 - q.nu2);
    // A⁻¹(μ′) = (2μ₁′/3 + μ₂′/6 + 1/3, −μ₁′/3 + μ₂′/6 + 1/3).
    TrianglePoint {
        mu1: 2.0 * g1 / 3.0 + g2 / 6.0 + 1.0 / 3.0,
        mu2: -g1 / 3.0 + g2 / 6.0 + 1.0 / 3.0,
    }
}

/// Planar inversion: the λ ≥ 0 with ½(1 + I₁(λ)/I₀(λ)) = μ₁, solved by
/// Newton with the closed-form derivative ¼(1 − 2(I₁/I₀)² + I₂/I₀) to
/// residual 1e-14. The initial guess (μ₁ − ½)/(2μ₁(1 − μ₁)) comes from the
/// quadratic-closure surrogate and keeps Newton monotone over the whole
/// domain.
///
/// # Errors
/// `Error::Domain` for μ₁ outside [1/2, 1) beyond a 1e-12 clamp;
/// `Error::NonConvergence` cannot occur for valid input and signals a bug.
pub fn solve_lambda_2d(mu1: f64) -> Result<f64> {
    if !(mu1 >= 0.5 - CLAMP_TOL && mu1 <= 1.0 + CLAMP_TOL) || mu1.is_nan() {
        return Err(Error::Domain {
            what: "solve_lambda_2d",
            detail: format!("mu1 = {mu1} outside [1/2, 1)"),
        });
    }
    let mu1 = mu1.clamp(0.5, 1.0 - f64::EPSILON / 2.0);
    if mu1 == 0.5 {
        return Ok(0.0);
    }
    let mut lambda = (0.5 * (mu1 - 0.5) / (mu1 * (1.0 - mu1))).max(0.0);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITER_2D {
        let (r1, r2) = ratios12(lambda);
        residual = 0.5 * (1.0 + r1) - mu1;
        if residual.abs() <= TOL_2D {
            return Ok(lambda);
        }
        let slope = 0.25 * (1.0 - 2.0 * r1 * r1 + r2);
        let next = lambda - residual / slope;
        // The target is increasing in λ; never step below zero.
        lambda = next.max(0.0);
    }
    Err(Error::NonConvergence {
        what: "solve_lambda_2d",
        iterations: MAX_ITER_2D,
        residual,
    })
}

/// Normalized planar fourth moment S̃₁₁₁₁ = ⅛(3 + 4I₁/I₀ + I₂/I₀) ∈ [3/8, 1]
/// for the distribution Ψ ∝ exp(λ cos 2θ); `f64::INFINITY` denotes the
/// aligned limit and returns exactly 1.
pub fn s1111_from_lambda_2d(lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    if lambda.is_infinite() {
        return 1.0;
    }
    let (r1, r2) = ratios12(lambda);
    0.125 * (3.0 + 4.0 * r1 + r2)
}

/// Normalized moments of a 3D diagonal Bingham distribution, produced by
/// [`SphereQuadrature::moments`].
#[derive(Debug, Clone, Copy)]
pub struct SphereMoments {
    /// ⟨p₁²⟩
    pub p1p1: f64,
    /// ⟨p₂²⟩
    pub p2p2: f64,
    /// ⟨p₁⁴⟩
    pub p1111: f64,
    /// ⟨p₁²p₂²⟩
    pub p1122: f64,
    /// ⟨p₂⁴⟩
    pub p2222: f64,
    /// ln ∫ exp(λ′₁p₁² + λ′₂p₂²) dp over the unit sphere (shift restored).
    pub log_z: f64,
}

/// Product quadrature on the unit sphere in the permuted spherical
/// coordinates p = (cosθ, sinφ sinθ, cosφ sinθ): Gauss in θ, periodic
/// trapezoid in φ.
///
/// The tables are folded once at construction over the exact symmetries of
/// the moment integrands (θ-reflection and the four-fold symmetry of sin²φ),
/// which quarters the exponential count per evaluation without changing any
/// result: the folded sum is term-for-term identical to the full one.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    /// Folded θ tables: x², x⁴, sin²θ, sin⁴θ, combined weight.
    th_x2: Vec<f64>,
    th_x4: Vec<f64>,
    th_s2: Vec<f64>,
    th_s4: Vec<f64>,
    th_w: Vec<f64>,
    /// Folded φ tables: cos²φ, sin²φ, sin⁴φ, combined weight.
    ph_c2: Vec<f64>,
    ph_s2: Vec<f64>,
    ph_s4: Vec<f64>,
    ph_w: Vec<f64>,
    n_phi: usize,
    n_theta: usize,
}

impl SphereQuadrature {
    /// Builds the folded product rule; `n_phi` must be even and ≥ 4,
    /// `n_theta` ≥ 2.
    ///
    /// # Errors
    /// `Error::Domain` when either count is inadmissible.
    pub fn new(n_phi: usize, n_theta: usize) -> Result<Self> {
        // Validate through the public rule constructors.
        special::trapezoid_rule(n_phi)?;
        special::gauss_polar_rule(n_theta)?;

        let (x, w) = gauss_legendre(n_theta);
        let half = n_theta / 2;
        let odd = n_theta % 2 == 1;
        let folded = half + usize::from(odd);
        let mut th_x2 = Vec::with_capacity(folded);
        let mut th_x4 = Vec::with_capacity(folded);
        let mut th_s2 = Vec::with_capacity(folded);
        let mut th_s4 = Vec::with_capacity(folded);
        let mut th_w = Vec::with_capacity(folded);
        for j in 0..folded {
            let x2 = x[j] * x[j];
            let s2 = 1.0 - x2;
            let mult = if odd && j == folded - 1 { 1.0 } else { 2.0 };
            th_x2.push(x2);
            th_x4.push(x2 * x2);
            th_s2.push(s2);
            th_s4.push(s2 * s2);
            th_w.push(mult * w[j]);
        }

        let h = 2.0 * PI / n_phi as f64;
        let (mut ph_c2, mut ph_s2, mut ph_s4, mut ph_w) = (vec![], vec![], vec![], vec![]);
        if n_phi % 4 == 0 {
            let quarter = n_phi / 4;
            for k in 0..=quarter {
                let s = (h * k as f64).sin();
                let s2 = s * s;
                let mult = if k == 0 || k == quarter { 2.0 } else { 4.0 };
                ph_c2.push(1.0 - s2);
                ph_s2.push(s2);
                ph_s4.push(s2 * s2);
                ph_w.push(mult * h);
            }
        } else {
            for k in 0..n_phi {
                let s = (h * k as f64).sin();
                let s2 = s * s;
                ph_c2.push(1.0 - s2);
                ph_s2.push(s2);
                ph_s4.push(s2 * s2);
                ph_w.push(h);
            }
        }

        Ok(SphereQuadrature {
            th_x2,
            th_x4,
            th_s2,
            th_s4,
            th_w,
            ph_c2,
            ph_s2,
            ph_s4,
            ph_w,
            n_phi,
            n_theta,
        })
    }

    /// Node counts (φ, θ) the rule was built with.
    pub fn sizes(&self) -> (usize, usize) {
        (self.n_phi, self.n_theta)
    }

    /// Normalized moments of Ψ ∝ exp(λ′₁p₁² + λ′₂p₂²).
    ///
    /// The integrand is evaluated as exp(−(λ′₁ − λ′₂)sin²θ) ·
    /// exp(−λ′₂ sin²θ cos²φ), which equals exp(λ′₁p₁² + λ′₂p₂² − λ′₁) and is
    /// bounded by 1 for ordered exponents, so no overflow is possible for any
    /// magnitude; the shift is restored in `log_z`. Swapped exponents are
    /// handled by relabeling the axes, which keeps the documented swap
    /// symmetry of the moments exact.
    pub fn moments(&self, lam1: f64, lam2: f64) -> SphereMoments {
        if lam2 > lam1 {
            let m = self.moments(lam2, lam1);
            return SphereMoments {
                p1p1: m.p2p2,
                p2p2: m.p1p1,
                p1111: m.p2222,
                p1122: m.p1122,
                p2222: m.p1111,
                log_z: m.log_z,
            };
        }
        let gap = lam1 - lam2;
        let mut z = 0.0f64;
        let mut n1 = 0.0f64;
        let mut n14 = 0.0f64;
        let mut n2 = 0.0f64;
        let mut n12 = 0.0f64;
        let mut n24 = 0.0f64;
        for j in 0..self.th_w.len() {
            let s2 = self.th_s2[j];
            let a = lam2 * s2;
            let (mut b0, mut b1, mut b2) = (0.0f64, 0.0f64, 0.0f64);
            for k in 0..self.ph_w.len() {
                let e = self.ph_w[k] * (-a * self.ph_c2[k]).exp();
                b0 += e;
                b1 += self.ph_s2[k] * e;
                b2 += self.ph_s4[k] * e;
            }
            let outer = self.th_w[j] * (-gap * s2).exp();
            z += outer * b0;
            n1 += outer * self.th_x2[j] * b0;
            n14 += outer * self.th_x4[j] * b0;
            n2 += outer * s2 * b1;
            n12 += outer * self.th_x2[j] * s2 * b1;
            n24 += outer * self.th_s4[j] * b2;
        }
        SphereMoments {
            p1p1: n1 / z,
            p2p2: n2 / z,
            p1111: n14 / z,
            p1122: n12 / z,
            p2222: n24 / z,
            log_z: lam1 + z.ln(),
        }
    }
}

/// Normalized Bingham moments with explicit rule sizes; convenience wrapper
/// over [`SphereQuadrature`] for one-off evaluations.
///
/// # Errors
/// `Error::Domain` for inadmissible node counts.
pub fn sphere_moments(params: &BinghamParams, n_phi: usize, n_theta: usize) -> Result<SphereMoments> {
    Ok(SphereQuadrature::new(n_phi, n_theta)?.moments(params.lambdas[0], params.lambdas[1]))
}

/// Production quadrature sizes (φ × θ) used for map fitting; fixed so fits
/// are reproducible bit-for-bit.
pub const FIT_QUADRATURE: (usize, usize) = (1024, 4096);

/// Shared production-size quadrature, built on first use.
pub(crate) fn fit_quadrature() -> &'static SphereQuadrature {
    static QUAD: OnceLock<SphereQuadrature> = OnceLock::new();
    QUAD.get_or_init(|| {
        SphereQuadrature::new(FIT_QUADRATURE.0, FIT_QUADRATURE.1).expect("fixed sizes are valid")
    })
}

/// Solves the two-parameter moment match ⟨pᵢ²⟩ = μᵢ for (λ′₁, λ′₂) with the
/// production quadrature and an automatic initial guess; see
/// [`solve_lambda_3d_with`].
///
/// # Errors
/// Propagates `Error::NonConvergence` from the Newton iteration.
pub fn solve_lambda_3d(p: &TrianglePoint) -> Result<BinghamParams> {
    solve_lambda_3d_with(p, fit_quadrature(), None)
}

/// Solves ⟨p₁²⟩ = μ₁, ⟨p₂²⟩ = μ₂ by damped Newton on the shifted exponents.
///
/// The Jacobian is the covariance of (p₁², p₂²) under the current iterate
/// (assembled from the same quadrature moments), which is symmetric positive
/// definite away from the aligned edge; steps are halved up to 30 times
/// whenever the residual norm fails to decrease. `init` warm-starts the
/// iteration (continuation sweeps); otherwise the linear-response estimate
/// λ′ ≈ (15μ̃₁ + 7.5μ̃₂, 7.5μ̃₁ + 15μ̃₂), μ̃ᵢ = μᵢ − 1/3, is used, with a
/// staged continuation fallback if Newton stalls from there.
///
/// # Errors
/// `Error::NonConvergence` with the failing point after all fallbacks.
pub fn solve_lambda_3d_with(
    p: &TrianglePoint,
    quad: &SphereQuadrature,
    init: Option<[f64; 2]>,
) -> Result<BinghamParams> {
    let target = [p.mu1(), p.mu2()];
    let start = init.unwrap_or_else(|| initial_guess_3d(target));
    match newton_3d(target, quad, start) {
        Ok(params) => Ok(params),
        Err(_) if init.is_none() => {
            // Continuation from the isotropic point in a few geometric
            // stages; each stage warm-starts the next.
            let iso = [1.0 / 3.0, 1.0 / 3.0];
            let mut guess = [0.0, 0.0];
            let mut last = Err(Error::NonConvergence {
                what: "solve_lambda_3d",
                iterations: 0,
                residual: f64::INFINITY,
            });
            for stage in [0.25, 0.5, 0.75, 0.9, 1.0] {
                let pt = [
                    iso[0] + stage * (target[0] - iso[0]),
                    iso[1] + stage * (target[1] - iso[1]),
                ];
                last = newton_3d(pt, quad, guess);
                match &last {
                    Ok(params) => guess = params.lambdas,
                    Err(_) => break,
                }
            }
            last
        }
        Err(e) => Err(e),
    }
}

/// Linear-response initial guess, exact to first order about isotropy.
fn initial_guess_3d(mu: [f64; 2]) -> [f64; 2] {
    let t1 = mu[0] - 1.0 / 3.0;
    let t2 = mu[1] - 1.0 / 3.0;
    [
        (15.0 * t1 + 7.5 * t2).max(0.0),
        (7.5 * t1 + 15.0 * t2).max(0.0),
    ]
}

fn newton_3d(mu: [f64; 2], quad: &SphereQuadrature, start: [f64; 2]) -> Result<BinghamParams> {
    let mut lam = start;
    let mut m = quad.moments(lam[0], lam[1]);
    let mut res = [m.p1p1 - mu[0], m.p2p2 - mu[1]];
    let mut norm = res[0].hypot(res[1]);
    for _ in 0..MAX_ITER_3D {
        if norm <= TOL_3D {
            return Ok(finish_3d(lam, m));
        }
        // Covariance Jacobian of the moment map.
        let j11 = m.p1111 - m.p1p1 * m.p1p1;
        let j12 = m.p1122 - m.p1p1 * m.p2p2;
        let j22 = m.p2222 - m.p2p2 * m.p2p2;
        let det = j11 * j22 - j12 * j12;
        if !(det > 0.0) {
            break;
        }
        let step = [
            (j22 * res[0] - j12 * res[1]) / det,
            (j11 * res[1] - j12 * res[0]) / det,
        ];
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let trial = [lam[0] - scale * step[0], lam[1] - scale * step[1]];
            let mt = quad.moments(trial[0], trial[1]);
            let rt = [mt.p1p1 - mu[0], mt.p2p2 - mu[1]];
            let nt = rt[0].hypot(rt[1]);
            if nt < norm {
                lam = trial;
                m = mt;
                res = rt;
                norm = nt;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm <= TOL_3D {
        return Ok(finish_3d(lam, m));
    }
    Err(Error::NonConvergence {
        what: "solve_lambda_3d",
        iterations: MAX_ITER_3D,
        residual: norm,
    })
}

/// Packages a converged exponent pair. The exact solution satisfies
/// λ′₁ ≥ λ′₂ ≥ 0 with equality on the symmetric edges, where Newton may land
/// a round-off below zero; those are snapped (the induced moment change is
/// below the solve tolerance).
fn finish_3d(lam: [f64; 2], m: SphereMoments) -> BinghamParams {
    let snap = |v: f64| if v < 0.0 && v > -1e-10 { 0.0 } else { v };
    BinghamParams {
        d: 3,
        lambdas: [snap(lam[0]), snap(lam[1])],
        log_z: m.log_z,
    }
}

/// Fourth moments on the planar-aligned boundary μ₁ + μ₂ = 1 (μ₃ = 0), where
/// the polar angle collapses and the problem reduces to the planar inversion
/// in λ′ = λ₁ − λ₂: returns (S̃₁₁₁₁, S̃₁₁₂₂, S̃₂₂₂₂) with every index-3 entry
/// zero. The complements follow from the in-plane trace identities
/// S̃₁₁₂₂ = μ₁ − S̃₁₁₁₁ and S̃₂₂₂₂ = 1 − 2μ₁ + S̃₁₁₁₁.
///
/// # Errors
/// `Error::Domain` outside μ₁ ∈ [1/2, 1] (beyond a 1e-12 clamp).
pub fn planar_aligned_moments(mu1: f64) -> Result<(f64, f64, f64)> {
    if !(mu1 >= 0.5 - CLAMP_TOL && mu1 <= 1.0 + CLAMP_TOL) || mu1.is_nan() {
        return Err(Error::Domain {
            what: "planar_aligned_moments",
            detail: format!("mu1 = {mu1} outside [1/2, 1]"),
        });
    }
    let mu1 = mu1.clamp(0.5, 1.0);
    if mu1 == 1.0 {
        return Ok((1.0, 0.0, 0.0));
    }
    let lambda = solve_lambda_2d(mu1)?;
    let s1111 = s1111_from_lambda_2d(lambda);
    Ok((s1111, mu1 - s1111, 1.0 - 2.0 * mu1 + s1111))
}

/// Heuristic angular resolution N = 40π √((μ₁ − ½)/(μ₁ − S̃₁₁₁₁)) that a
/// direct quadrature of the distribution with this alignment would need.
///
/// # Errors
/// `Error::Domain` if μ₁ ≤ 1/2 or S̃₁₁₁₁ ≥ μ₁ (the gap sets the scale and
/// must be positive).
pub fn quadrature_estimate(mu1: f64, s1111: f64) -> Result<f64> {
    if !(mu1 > 0.5) {
        return Err(Error::Domain {
            what: "quadrature_estimate",
            detail: format!("mu1 = {mu1} must exceed 1/2"),
        });
    }
    if !(s1111 < mu1) {
        return Err(Error::Domain {
            what: "quadrature_estimate",
            detail: format!("s1111 = {s1111} must stay below mu1 = {mu1}"),
        });
    }
    Ok(40.0 * PI * ((mu1 - 0.5) / (mu1 - s1111)).sqrt())
}
