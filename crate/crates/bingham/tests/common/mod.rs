//! Reference implementations shared by the integration tests.
//!
//! Everything here is written for transparency rather than speed, and stays
//! off the library's numerical paths on purpose: series are summed in their
//! textbook form, integrals use adaptive Simpson refinement or brute-force
//! composite rules, and inversions use bisection. Results from these helpers
//! anchor the fast production code.

#![allow(dead_code)] // each test binary uses its own subset

use std::f64::consts::PI;

/// Modified Bessel function Iₙ(x) by direct ascending-series summation,
/// Σₖ (x/2)^{2k+n} / (k!(k+n)!). Unscaled, so only valid for x ≲ 700.
pub fn bessel_i(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    for j in 1..=n as u64 {
        term *= half / j as f64;
    }
    let mut sum = term;
    let mut k = 1.0f64;
    while term > sum.abs() * 1e-18 {
        term *= half * half / (k * (k + n as f64));
        sum += term;
        k += 1.0;
    }
    sum
}

/// Adaptive Simpson quadrature of `f` over [a, b] with Richardson
/// correction; `tol` is an absolute error request. The per-interval
/// tolerance halves with each split but is floored near machine precision so
/// round-off in the error estimate cannot force runaway refinement.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, m: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
    }
    #[allow(clippy::too_many_arguments)]
    fn refine<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        m: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let left = simpson(f, a, lm, m);
        let right = simpson(f, m, rm, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            let half = (0.5 * tol).max(1e-17);
            refine(f, a, lm, m, left, half, depth - 1)
                + refine(f, m, rm, b, right, half, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let whole = simpson(&f, a, m, b);
    refine(&f, a, m, b, whole, tol.max(1e-16), 32)
}

/// ⟨cos²θ⟩ of the circle density ∝ exp(λ cos 2θ), overflow-safe for any
/// λ ≥ 0: below 600 the Bessel-series form ½(1 + I₁/I₀), above it the
/// shifted integrand exp(λ(cos 2θ − 1)) ≤ 1 under adaptive Simpson (that
/// branch only steers the root bracket at coarse λ, so a modest tolerance
/// suffices).
pub fn circle_mu1(lambda: f64) -> f64 {
    if lambda <= 600.0 {
        0.5 * (1.0 + bessel_i(1, lambda) / bessel_i(0, lambda))
    } else {
        let z = adaptive_simpson(|t| (lambda * ((2.0 * t).cos() - 1.0)).exp(), 0.0, PI, 1e-13);
        let m = adaptive_simpson(
            |t| t.cos().powi(2) * (lambda * ((2.0 * t).cos() - 1.0)).exp(),
            0.0,
            PI,
            1e-13,
        );
        m / z
    }
}

/// Dense-trapezoid ⟨cos²θ⟩ and ⟨cos⁴θ⟩ of the circle density ∝ exp(λ cos 2θ)
/// with `n` equispaced nodes over the full period.
pub fn circle_moments_dense(lambda: f64, n: usize) -> (f64, f64) {
    let h = 2.0 * PI / n as f64;
    let (mut z, mut m2, mut m4) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..n {
        let theta = h * k as f64;
        let w = (lambda * ((2.0 * theta).cos() - 1.0)).exp();
        let c2 = theta.cos() * theta.cos();
        z += w;
        m2 += c2 * w;
        m4 += c2 * c2 * w;
    }
    (m2 / z, m4 / z)
}

/// Bisection for a root of the increasing function `f` on [lo, hi], to an
/// interval width of `tol`. Panics if the bracket does not straddle zero.
pub fn bisect_increasing<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    assert!(
        f(lo) <= 0.0 && f(hi) >= 0.0,
        "bracket [{lo}, {hi}] does not straddle the root"
    );
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Normalized moments of the sphere density ∝ exp(λ₁p₁² + λ₂p₂²) in the
/// permuted coordinates p = (cosθ, sinφ sinθ, cosφ sinθ), by a plain product
/// rule — composite Simpson in θ with the explicit sinθ Jacobian, periodic
/// trapezoid in φ, no symmetry folding. Node counts double until two
/// successive Richardson-extrapolated refinements (the h⁴ Simpson term
/// cancelled between levels) agree to `tol`.
///
/// Returns [⟨p₁²⟩, ⟨p₂²⟩, ⟨p₁⁴⟩, ⟨p₁²p₂²⟩, ⟨p₂⁴⟩, ln Z].
pub fn sphere_moments_doubling(l1: f64, l2: f64, tol: f64) -> [f64; 6] {
    let shift = l1.max(l2).max(0.0);
    // Compensated accumulation: the finest levels sum ~10⁸ positive terms,
    // where naive addition round-off would swamp the requested tolerance.
    fn kahan(acc: &mut f64, comp: &mut f64, v: f64) {
        let y = v - *comp;
        let t = *acc + y;
        *comp = (t - *acc) - y;
        *acc = t;
    }
    let eval = |nt: usize, np: usize| -> [f64; 6] {
        let ht = PI / nt as f64;
        let hp = 2.0 * PI / np as f64;
        let sin_phi_sq: Vec<f64> = (0..np)
            .map(|k| {
                let s = (hp * k as f64).sin();
                s * s
            })
            .collect();
        let mut acc = [0.0f64; 6];
        let mut comp = [0.0f64; 6];
        for i in 0..=nt {
            let theta = ht * i as f64;
            let simpson_w = if i == 0 || i == nt {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let (s, c) = theta.sin_cos();
            let p1sq = c * c;
            let s2 = s * s;
            let w_theta = ht / 3.0 * simpson_w * s;
            for ss in &sin_phi_sq {
                let p2sq = ss * s2;
                let w = w_theta * hp * (l1 * p1sq + l2 * p2sq - shift).exp();
                kahan(&mut acc[0], &mut comp[0], w);
                kahan(&mut acc[1], &mut comp[1], w * p1sq);
                kahan(&mut acc[2], &mut comp[2], w * p2sq);
                kahan(&mut acc[3], &mut comp[3], w * p1sq * p1sq);
                kahan(&mut acc[4], &mut comp[4], w * p1sq * p2sq);
                kahan(&mut acc[5], &mut comp[5], w * p2sq * p2sq);
            }
        }
        acc
    };
    let normalized = |raw: &[f64; 6]| {
        [
            raw[1] / raw[0],
            raw[2] / raw[0],
            raw[3] / raw[0],
            raw[4] / raw[0],
            raw[5] / raw[0],
            shift + raw[0].ln(),
        ]
    };
    // Richardson step: with S(h) = I + c·h⁴ + O(h⁶), (16·S(h/2) − S(h))/15
    // removes the leading term of the coarser pair.
    let extrapolated = |coarse: &[f64; 6], fine: &[f64; 6]| {
        let mut out = [0.0f64; 6];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = fine[i] + (fine[i] - coarse[i]) / 15.0;
        }
        out
    };
    let (mut nt, mut np) = (128usize, 32usize);
    let mut coarse = eval(nt, np);
    let mut fine = eval(nt * 2, np * 2);
    let mut prev = extrapolated(&normalized(&coarse), &normalized(&fine));
    loop {
        nt *= 2;
        np *= 2;
        coarse = fine;
        fine = eval(nt * 2, np * 2);
        let cur = extrapolated(&normalized(&coarse), &normalized(&fine));
        let delta = prev
            .iter()
            .zip(&cur)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if std::env::var_os("ORACLE_TRACE").is_some() {
            eprintln!("doubling level nt={nt} np={np}: delta = {delta:e}");
        }
        if delta <= tol || nt * 2 >= 1 << 15 {
            assert!(delta <= tol, "node doubling stalled at delta = {delta:e}");
            return cur;
        }
        prev = cur;
    }
}

/// Inverts the two-moment match ⟨p₁²⟩ = μ₁, ⟨p₂²⟩ = μ₂ by nested bisection:
/// the inner level fixes λ₂ ∈ [0, λ₁] from the increasing map λ₂ ↦ ⟨p₂²⟩
/// (clamping to the bracket ends when the constraint saturates), the outer
/// level fixes λ₁ from the then-increasing map λ₁ ↦ ⟨p₁²⟩. `moments` returns
/// (⟨p₁²⟩, ⟨p₂²⟩) for an exponent pair; `cap` bounds λ₁ from above.
pub fn invert_by_nested_bisection<F: Fn(f64, f64) -> (f64, f64)>(
    mu1: f64,
    mu2: f64,
    cap: f64,
    tol: f64,
    moments: F,
) -> (f64, f64) {
    let inner = |l1: f64| -> f64 {
        if moments(l1, 0.0).1 >= mu2 {
            return 0.0;
        }
        if moments(l1, l1).1 <= mu2 {
            return l1;
        }
        let (mut lo, mut hi) = (0.0f64, l1);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if moments(l1, mid).1 < mu2 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let outer = |l1: f64| moments(l1, inner(l1)).0 - mu1;
    let l1 = bisect_increasing(outer, 0.0, cap, tol);
    (l1, inner(l1))
}

/// Eigenvalues of a symmetric 3×3 matrix (row-major) by the classical cyclic
/// Jacobi rotation method, returned descending. Textbook implementation:
/// repeatedly annihilate the largest off-diagonal entry until all are below
/// 1e-15 of the matrix scale.
pub fn jacobi_eigs3(m: [f64; 9]) -> [f64; 3] {
    let mut a = m;
    let scale = a.iter().fold(0.0f64, |s, &x| s.max(x.abs())).max(1e-300);
    for _ in 0..200 {
        // Largest off-diagonal element.
        let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
        let (p, q) = *pairs
            .iter()
            .max_by(|x, y| {
                let ax = a[x.0 * 3 + x.1].abs();
                let ay = a[y.0 * 3 + y.1].abs();
                ax.partial_cmp(&ay).unwrap()
            })
            .unwrap();
        let apq = a[p * 3 + q];
        if apq.abs() <= 1e-15 * scale {
            break;
        }
        // Classical Jacobi rotation annihilating (p, q).
        let theta = (a[q * 3 + q] - a[p * 3 + p]) / (2.0 * apq);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        let mut r = [0.0f64; 9];
        r[0] = 1.0;
        r[4] = 1.0;
        r[8] = 1.0;
        r[p * 3 + p] = c;
        r[q * 3 + q] = c;
        r[p * 3 + q] = s;
        r[q * 3 + p] = -s;
        // A ← RᵀAR, done naively.
        let mut ar = [0.0f64; 9];
        for i in 0..3 {
            for j in 0..3 {
                ar[i * 3 + j] = (0..3).map(|k| a[i * 3 + k] * r[k * 3 + j]).sum();
            }
        }
        let mut next = [0.0f64; 9];
        for i in 0..3 {
            for j in 0..3 {
                next[i * 3 + j] = (0..3).map(|k| r[k * 3 + i] * ar[k * 3 + j]).sum();
            }
        }
        a = next;
    }
    let mut eigs = [a[0], a[4], a[8]];
    eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eigs
}

/// All six distinct diagonal-frame fourth moments plus the two second
/// moments of the axisymmetric-free Bingham density exp(λ₁p₁² + λ₂p₂²) on
/// the unit sphere, by a brute-force composite Simpson × trapezoid grid in
/// the permuted spherical coordinates p = (cosθ, sinφ sinθ, cosφ sinθ).
/// Returns [⟨p₁²⟩, ⟨p₂²⟩, ⟨p₁⁴⟩, ⟨p₁²p₂²⟩, ⟨p₂⁴⟩, ⟨p₁²p₃²⟩, ⟨p₂²p₃²⟩, ⟨p₃⁴⟩].
/// Requires λ₁ ≥ λ₂ ≥ 0 (shifted convention); exponent λ₁(p₁² − 1) + λ₂p₂²
/// is bounded above by 0 so nothing overflows.
pub fn sphere_moments_dense8(l1: f64, l2: f64, nt: usize, np: usize) -> [f64; 8] {
    assert!(l1 >= l2 && l2 >= 0.0 && nt % 2 == 0);
    let mut acc = [0.0f64; 9]; // z, p11, p22, p1111, p1122, p2222, p1133, p2233, p3333
    let ht = PI / nt as f64;
    let hp = 2.0 * PI / np as f64;
    for it in 0..=nt {
        let theta = it as f64 * ht;
        let wt = if it == 0 || it == nt {
            1.0
        } else if it % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let (st, ct) = theta.sin_cos();
        let p1s = ct * ct;
        for ip in 0..np {
            let phi = ip as f64 * hp;
            let (sp, cp) = phi.sin_cos();
            let p2s = sp * sp * st * st;
            let p3s = cp * cp * st * st;
            let w = wt * st * (l1 * (p1s - 1.0) + l2 * p2s).exp();
            acc[0] += w;
            acc[1] += w * p1s;
            acc[2] += w * p2s;
            acc[3] += w * p1s * p1s;
            acc[4] += w * p1s * p2s;
            acc[5] += w * p2s * p2s;
            acc[6] += w * p1s * p3s;
            acc[7] += w * p2s * p3s;
            acc[8] += w * p3s * p3s;
        }
    }
    let z = acc[0];
    [
        acc[1] / z,
        acc[2] / z,
        acc[3] / z,
        acc[4] / z,
        acc[5] / z,
        acc[6] / z,
        acc[7] / z,
        acc[8] / z,
    ]
}
