//! Dependency-free symmetric eigendecomposition (2×2 and 3×3), trace-identity
//! completion of the diagonal fourth moment, rotation-frame contraction, the
//! full closure pipeline, recovery of the Bingham exponent from moments, and
//! the scalar order parameter.
//!
//! Everything here is pure and allocation-free, designed for data-parallel
//! application over grid points with shared read-only maps; results are
//! bit-deterministic regardless of schedule.

use crate::chebmap::{eval_map_2d, eval_map_3d, ChebMap};
use crate::solve::{BinghamParams, TrianglePoint};
use crate::{Error, Result};

/// Symmetric d×d tensor stored as the upper triangle, row-major:
/// 2D `[xx, xy, yy]`, 3D `[xx, xy, xz, yy, yz, zz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTensor {
    d: usize,
    e: [f64; 6],
}

/// Upper-triangle length for dimension d.
fn packed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Index into the packed upper triangle (requires i ≤ j < d).
fn packed_index(d: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < d);
    if d == 2 {
        i + j // (0,0)→0, (0,1)→1, (1,1)→2
    } else {
        [0, 1, 2, 0, 3, 4, 0, 0, 5][i * 3 + j]
    }
}

impl SymTensor {
    /// Builds a tensor from its upper triangle (row-major).
    ///
    /// # Errors
    /// `Error::Domain` unless d ∈ {2, 3}, `entries` has length d(d+1)/2, and
    /// all entries are finite.
    pub fn new(d: usize, entries: &[f64]) -> Result<Self> {
        if !(d == 2 || d == 3) {
            return Err(Error::Domain {
                what: "SymTensor",
                detail: format!("dimension {d} not supported (2 or 3)"),
            });
        }
        if entries.len() != packed_len(d) {
            return Err(Error::Domain {
                what: "SymTensor",
                detail: format!(
                    "{} entries supplied, dimension {d} needs {}",
                    entries.len(),
                    packed_len(d)
                ),
            });
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain {
                what: "SymTensor",
                detail: "non-finite entry".into(),
            });
        }
        let mut e = [0.0; 6];
        e[..entries.len()].copy_from_slice(entries);
        Ok(SymTensor { d, e })
    }

    /// The zero tensor.
    pub fn zero(d: usize) -> Self {
        SymTensor { d, e: [0.0; 6] }
    }

    /// The identity.
    pub fn identity(d: usize) -> Self {
        let mut t = SymTensor::zero(d);
        for i in 0..d {
            t.set(i, i, 1.0);
        }
        t
    }

    /// Dimension (2 or 3).
    pub fn d(&self) -> usize {
        self.d
    }

    /// Packed upper triangle, row-major.
    pub fn entries(&self) -> &[f64] {
        &self.e[..packed_len(self.d)]
    }

    /// Entry (i, j) (either order).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.e[packed_index(self.d, i.min(j), i.max(j))]
    }

    /// Sets entry (i, j) (either order).
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.e[packed_index(self.d, i.min(j), i.max(j))] = v;
    }

    /// Trace.
    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.get(i, i)).sum()
    }

    /// Full contraction A : B = Σᵢⱼ AᵢⱼBᵢⱼ.
    pub fn ddot(&self, other: &SymTensor) -> f64 {
        debug_assert_eq!(self.d, other.d);
        let mut s = 0.0;
        for i in 0..self.d {
            s += self.get(i, i) * other.get(i, i);
            for j in (i + 1)..self.d {
                s += 2.0 * self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    /// Scalar multiple.
    pub fn scaled(&self, f: f64) -> SymTensor {
        let mut out = *self;
        for x in &mut out.e {
            *x *= f;
        }
        out
    }

    /// Matrix square A·A (symmetric for symmetric A).
    pub fn square(&self) -> SymTensor {
        let mut out = SymTensor::zero(self.d);
        for i in 0..self.d {
            for j in i..self.d {
                let mut s = 0.0;
                for k in 0..self.d {
                    s += self.get(i, k) * self.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    /// Trace-free part A − (trace(A)/d)·I.
    pub fn deviatoric(&self) -> SymTensor {
        let shift = self.trace() / self.d as f64;
        let mut out = *self;
        for i in 0..self.d {
            out.set(i, i, out.get(i, i) - shift);
        }
        out
    }

    /// Dense 3×3 row-major image (2D tensors padded with a zero third
    /// row/column), the shape used by the rotation kernels.
    pub(crate) fn to_mat3(self) -> [f64; 9] {
        let mut m = [0.0; 9];
        for i in 0..self.d {
            for j in 0..self.d {
                m[i * 3 + j] = self.get(i, j);
            }
        }
        m
    }
}

impl std::ops::Add for &SymTensor {
    type Output = SymTensor;
    fn add(self, rhs: &SymTensor) -> SymTensor {
        debug_assert_eq!(self.d, rhs.d);
        let mut out = *self;
        for (a, b) in out.e.iter_mut().zip(rhs.e) {
            *a += b;
        }
        out
    }
}

impl std::ops::Sub for &SymTensor {
    type Output = SymTensor;
    fn sub(self, rhs: &SymTensor) -> SymTensor {
        debug_assert_eq!(self.d, rhs.d);
        let mut out = *self;
        for (a, b) in out.e.iter_mut().zip(rhs.e) {
            *a -= b;
        }
        out
    }
}

/// Eigendecomposition of a normalized second-moment tensor: eigenvalues
/// descending, eigenvector columns. Both arrays are padded to 3×3 storage in
/// 2D (third eigenvalue 0, third column e₃) so frame algebra is uniform.
#[derive(Debug, Clone, Copy)]
pub struct EigenFrame {
    /// Dimension of the decomposed tensor.
    pub d: usize,
    /// Eigenvalues, descending; `mus[2] = 0` in 2D.
    pub mus: [f64; 3],
    /// Row-major rotation with columns v₁, v₂(, v₃): `omega[3i + j]` is
    /// component i of eigenvector j. Orthonormal; 2D pads the third column
    /// with e₃.
    pub omega: [f64; 9],
}

impl EigenFrame {
    /// The director v₁ (no sign convention applied here).
    pub fn principal_axis(&self) -> [f64; 3] {
        [self.omega[0], self.omega[3], self.omega[6]]
    }
}

/// Fixes a vector's sign so its first component of magnitude above 1e-12 is
/// positive (the conventional way to compare directors, which are defined up
/// to sign).
fn fix_sign(v: &mut [f64; 3]) {
    for &x in v.iter() {
        if x.abs() > 1e-12 {
            if x < 0.0 {
                for y in v.iter_mut() {
                    *y = -*y;
                }
            }
            return;
        }
    }
}

/// Validates an eigendecomposition input: correct dimension, finite, unit
/// trace to 1e-8.
fn check_normalized(dn: &SymTensor, d: usize, what: &'static str) -> Result<()> {
    if dn.d != d {
        return Err(Error::Domain {
            what,
            detail: format!("dimension {} tensor passed (need {d})", dn.d),
        });
    }
    if (dn.trace() - 1.0).abs() > 1e-8 {
        return Err(Error::Domain {
            what,
            detail: format!("trace {} is not 1 (normalize by c first)", dn.trace()),
        });
    }
    Ok(())
}

/// Closed-form eigendecomposition of a normalized symmetric 2×2 tensor:
/// μ₁ = (1 + √(2 D:D − 1))/2 and the rotation angle from the two-argument
/// arctangent of (2D₁₂, 2D₁₁ − 1); the exactly degenerate case returns the
/// identity frame.
///
/// # Errors
/// `Error::Domain` for a non-normalized input or a radicand below −1e-14
/// (inputs are clamped through zero within that round-off allowance).
pub fn eig2(dn: &SymTensor) -> Result<EigenFrame> {
    check_normalized(dn, 2, "eig2")?;
    let radicand = 2.0 * dn.ddot(dn) - 1.0;
    if radicand < -1e-14 {
        return Err(Error::Domain {
            what: "eig2",
            detail: format!("2 D:D − 1 = {radicand:e} < 0: not a valid second moment"),
        });
    }
    let mu1 = 0.5 * (1.0 + radicand.max(0.0).sqrt());
    let (y, x) = (2.0 * dn.get(0, 1), 2.0 * dn.get(0, 0) - 1.0);
    // atan2(0, 0) = 0 picks the identity frame at the degenerate point.
    let w = 0.5 * y.atan2(x);
    let (s, c) = w.sin_cos();
    Ok(EigenFrame {
        d: 2,
        mus: [mu1, 1.0 - mu1, 0.0],
        omega: [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0],
    })
}

/// Newton's method for the largest root of the depressed characteristic
/// polynomial x³ − a·x − b of the trace-shifted (deviatoric) tensor, started
/// from x = 2/3 (the image of z = 1): all roots lie in [−1/3, 2/3] and the
/// polynomial is increasing and convex right of the largest root, so the
/// iteration descends monotonically onto it. Working in shifted coordinates
/// keeps the coefficients proportional to the anisotropy, so the nearly
/// isotropic triple root evaluates without cancellation noise and comes out
/// to full precision (the unshifted cubic caps accuracy near 1e-6 there).
fn largest_root_shifted(a: f64, b: f64) -> f64 {
    let p = |x: f64| (x * x - a) * x - b;
    let dp = |x: f64| 3.0 * x * x - a;
    let mut x = 2.0 / 3.0;
    let mut prev = f64::INFINITY;
    for _ in 0..100 {
        let step = p(x) / dp(x);
        x -= step;
        let s = step.abs();
        // Steps shrink strictly until the round-off floor; once they stop
        // shrinking the iterate is as close to the root as the polynomial
        // evaluation allows (the floor scales like ε / p'(x), so it rises
        // when the top eigenvalue pair clusters).
        if s <= 4e-16 * x.abs().max(5e-16) || s >= prev {
            return x;
        }
        prev = s;
    }
    // Unreachable in practice (the stall detection above returns first):
    // finish by bisection; all roots lie in [−1/3, 2/3]. The result may be
    // any of the real roots, which the caller's descending sort absorbs.
    let (mut lo, mut hi) = (-1.0 / 3.0, 2.0 / 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Eigenvector of a symmetric 3×3 `m` for eigenvalue `mu`: the rows of
/// m − μI span the plane normal to the eigenvector (μ simple), so their
/// cross products all point along it. A fixed row pair degenerates whenever
/// a diagonal entry happens to sit at μ (e.g. axis-aligned input), so take
/// the pair with the largest product norm.
fn eigvec_cross(m: &[f64; 9], mu: f64) -> [f64; 3] {
    let rows = [
        [m[0] - mu, m[1], m[2]],
        [m[3], m[4] - mu, m[5]],
        [m[6], m[7], m[8] - mu],
    ];
    let mut best = [0.0f64; 3];
    let mut best_norm = -1.0f64;
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let v = cross(rows[a], rows[b]);
        let n = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n > best_norm {
            best_norm = n;
            best = v;
        }
    }
    best
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3], what: &'static str) -> Result<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n < 1e-300 {
        return Err(Error::Domain {
            what,
            detail: "zero-norm eigenvector (degenerate input beyond the perturbation)".into(),
        });
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

/// Eigendecomposition of a normalized symmetric 3×3 tensor: the largest
/// root of the characteristic polynomial by Newton from z = 1, the rest by
/// the deflated quadratic; eigenvectors by cross products of rows of
/// D − μᵢI for the two extreme eigenvalues, v₂ derived from them to keep
/// the basis orthonormal and eigenspace-aligned near ties. Off-diagonal
/// entries are perturbed by 1e-16 unconditionally, which regularizes exact
/// degeneracies at no accuracy cost; where eigenvalues tie to round-off the
/// returned basis of the eigenspace is non-unique (any choice is valid for
/// the frame-covariant contractions downstream).
///
/// # Errors
/// `Error::Domain` for a non-normalized input or an (unreachable in valid
/// inputs) zero-norm eigenvector.
pub fn eig3(dn: &SymTensor) -> Result<EigenFrame> {
    check_normalized(dn, 3, "eig3")?;
    let mut m = dn.to_mat3();
    for idx in [1, 2, 5] {
        m[idx] += 1e-16;
    }
    m[3] = m[1];
    m[6] = m[2];
    m[7] = m[5];

    // Depressed characteristic polynomial x³ − a·x − b of the deviatoric
    // part (x = z − 1/3), with a = ½ trace(Ã²) and b = det Ã.
    let third = 1.0 / 3.0;
    let ad = [m[0] - third, m[4] - third, m[8] - third];
    let a = 0.5
        * (ad[0] * ad[0]
            + ad[1] * ad[1]
            + ad[2] * ad[2]
            + 2.0 * (m[1] * m[1] + m[2] * m[2] + m[5] * m[5]));
    let b = ad[0] * (ad[1] * ad[2] - m[5] * m[5]) - m[1] * (m[1] * ad[2] - m[5] * m[2])
        + m[2] * (m[1] * m[5] - ad[1] * m[2]);

    let x1 = largest_root_shifted(a, b);
    // Deflation: x³ − ax − b = (x − x₁)(x² + x₁x + (x₁² − a)); the two
    // remaining roots sum to −x₁ exactly, so the trace is preserved.
    let disc = (4.0 * a - 3.0 * x1 * x1).max(0.0).sqrt();
    let mut mus = [
        x1 + third,
        0.5 * (-x1 + disc) + third,
        0.5 * (-x1 - disc) + third,
    ];
    // Newton lands on the largest root up to the round-off floor, which can
    // reorder a clustered pair (and the bisection path may return any root):
    // enforce the descending contract explicitly.
    mus.sort_by(|p, q| q.partial_cmp(p).expect("eigenvalues are finite"));
    let [mu1, mu2, mu3] = mus;

    // The middle eigenvalue is always the worst separated (its distance to
    // the spectrum is the smaller of the two gaps), so compute the extreme
    // eigenvectors directly and derive v₂ from them. When a pair clusters,
    // the clustered cross products degrade into round-off noise *within the
    // degenerate plane*; anchoring on the well-separated extreme keeps the
    // basis aligned with the eigenspaces instead of tilting out of them.
    let mut v1 = normalize(eigvec_cross(&m, mu1), "eig3")?;
    let v3_raw = normalize(eigvec_cross(&m, mu3), "eig3")?;
    let mut v2 = normalize(cross(v3_raw, v1), "eig3")?;
    let mut v3 = normalize(cross(v1, v2), "eig3")?;
    fix_sign(&mut v1);
    fix_sign(&mut v2);
    fix_sign(&mut v3);
    Ok(EigenFrame {
        d: 3,
        mus: [mu1, mu2, mu3],
        omega: [
            v1[0], v2[0], v3[0], v1[1], v2[1], v3[1], v1[2], v2[2], v3[2],
        ],
    })
}

/// Eigendecomposition dispatching on dimension.
pub fn eigen_frame(dn: &SymTensor) -> Result<EigenFrame> {
    match dn.d {
        2 => eig2(dn),
        _ => eig3(dn),
    }
}

/// The distinct diagonal entries S̃ᵢᵢⱼⱼ of the closure's fourth moment in
/// the eigenframe, after trace-identity completion. 2D uses the first three
/// fields; the index-3 fields stay zero there, which lets the rotation
/// kernels treat both dimensions uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagFourthMoment {
    /// Dimension (2 or 3).
    pub d: usize,
    /// ⟨p₁⁴⟩
    pub s1111: f64,
    /// ⟨p₁²p₂²⟩
    pub s1122: f64,
    /// ⟨p₂⁴⟩
    pub s2222: f64,
    /// ⟨p₁²p₃²⟩ (3D)
    pub s1133: f64,
    /// ⟨p₂²p₃²⟩ (3D)
    pub s2233: f64,
    /// ⟨p₃⁴⟩ (3D)
    pub s3333: f64,
}

impl DiagFourthMoment {
    /// Entry S̃ᵢᵢⱼⱼ.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = (i.min(j), i.max(j));
        match (i, j) {
            (0, 0) => self.s1111,
            (0, 1) => self.s1122,
            (1, 1) => self.s2222,
            (0, 2) => self.s1133,
            (1, 2) => self.s2233,
            _ => self.s3333,
        }
    }
}

/// Completes the 2d − 3 computed entries of the diagonal fourth moment via
/// the trace identity Σₖ S̃ᵢᵢₖₖ = μᵢ: in 2D (computed = [S̃₁₁₁₁]) this
/// yields S̃₁₁₂₂ and S̃₂₂₂₂; in 3D (computed = [S̃₁₁₁₁, S̃₁₁₂₂, S̃₂₂₂₂]) it
/// yields S̃₁₁₃₃, S̃₂₂₃₃, S̃₃₃₃₃. Entries within 1e-12 of [0, 1] are clamped
/// onto it.
///
/// # Errors
/// `Error::Numerical` when a completed entry falls outside
/// [−1e-10, 1 + 1e-10] (inconsistent inputs).
pub fn complete_fourth(mus: &[f64], computed: &[f64]) -> Result<DiagFourthMoment> {
    let d = mus.len();
    let finish = |s: &mut DiagFourthMoment| -> Result<()> {
        for v in [
            &mut s.s1111,
            &mut s.s1122,
            &mut s.s2222,
            &mut s.s1133,
            &mut s.s2233,
            &mut s.s3333,
        ] {
            if !(-1e-10..=1.0 + 1e-10).contains(v) {
                return Err(Error::Numerical(format!(
                    "completed fourth-moment entry {v} outside [0, 1]: inconsistent (μ, S̃) inputs"
                )));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(())
    };
    match (d, computed.len()) {
        (2, 1) => {
            let s1111 = computed[0];
            let s1122 = mus[0] - s1111;
            let s2222 = mus[1] - s1122;
            let mut s = DiagFourthMoment {
                d: 2,
                s1111,
                s1122,
                s2222,
                s1133: 0.0,
                s2233: 0.0,
                s3333: 0.0,
            };
            finish(&mut s)?;
            Ok(s)
        }
        (3, 3) => {
            let [s1111, s1122, s2222] = [computed[0], computed[1], computed[2]];
            let s1133 = mus[0] - s1111 - s1122;
            let s2233 = mus[1] - s1122 - s2222;
            let s3333 = mus[2] - s1133 - s2233;
            let mut s = DiagFourthMoment {
                d: 3,
                s1111,
                s1122,
                s2222,
                s1133,
                s2233,
                s3333,
            };
            finish(&mut s)?;
            Ok(s)
        }
        _ => Err(Error::Domain {
            what: "complete_fourth",
            detail: format!(
                "dimension {d} with {} computed entries (need 2d − 3)",
                computed.len()
            ),
        }),
    }
}

/// 3×3 product A·B (row-major).
fn mat_mul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] =
                a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
        }
    }
    out
}

/// 3×3 product Aᵀ·B (row-major).
fn mat_tmul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = a[i] * b[j] + a[3 + i] * b[3 + j] + a[6 + i] * b[6 + j];
        }
    }
    out
}

/// 3×3 transpose (row-major).
fn mat_transpose(a: &[f64; 9]) -> [f64; 9] {
    [a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]]
}

/// Evaluates Ω (S̃ : Ωᵀ T Ω) Ωᵀ using only the paired-index sparsity of the
/// diagonal-frame fourth moment: (S̃:T̃)ᵢᵢ = Σₖ S̃ᵢᵢₖₖ T̃ₖₖ and
/// (S̃:T̃)ᵢⱼ = 2 S̃ᵢᵢⱼⱼ T̃ᵢⱼ for i ≠ j. This is the cheap runtime form of the
/// full rank-4 rotation followed by contraction with T.
pub fn contract_rotate(frame: &EigenFrame, s: &DiagFourthMoment, t: &SymTensor) -> SymTensor {
    debug_assert_eq!(frame.d, t.d);
    debug_assert_eq!(frame.d, s.d);
    let tm = t.to_mat3();
    // T̃ = Ωᵀ T Ω; padded rows/columns stay zero in 2D because the third
    // column of Ω is e₃ and T's third row/column is zero.
    let tt = mat_mul(&mat_tmul(&frame.omega, &tm), &frame.omega);
    let mut st = [0.0f64; 9];
    for i in 0..3 {
        for j in 0..3 {
            st[i * 3 + j] = if i == j {
                s.get(i, 0) * tt[0] + s.get(i, 1) * tt[4] + s.get(i, 2) * tt[8]
            } else {
                2.0 * s.get(i, j) * tt[i * 3 + j]
            };
        }
    }
    let full = mat_mul(&mat_mul(&frame.omega, &st), &mat_transpose(&frame.omega));
    // Symmetrize to scrub the last bits of round-off asymmetry from the two
    // different product orders.
    let mut out = SymTensor::zero(t.d);
    for i in 0..t.d {
        for j in i..t.d {
            out.set(i, j, 0.5 * (full[i * 3 + j] + full[j * 3 + i]));
        }
    }
    out
}

/// Moment half of the closure pipeline at one grid point: eigendecompose
/// D/c, evaluate the fitted map in the eigenframe, and complete the diagonal
/// fourth moment by the trace identities. Split out so callers needing the
/// same frame and moments against several T tensors (stress assembly vs the
/// transport right side) pay for the eigensolve and map evaluation once.
///
/// Eigenvalue round-off up to 1e-8 outside the feasible set is projected
/// back (the time stepper's transients sit above fresh-eigensolve noise).
///
/// # Errors
/// `Error::Domain` when trace(D) ≠ c beyond 1e-8 or the map's dimension
/// differs; propagates eigensolver and map errors; `Error::Infeasible` when
/// eigenvalues leave the feasible set beyond the projection tolerance.
pub fn closure_moments(
    d_tensor: &SymTensor,
    c: f64,
    map: &ChebMap,
) -> Result<(EigenFrame, DiagFourthMoment)> {
    let d = d_tensor.d;
    if !(c > 0.0) || (d_tensor.trace() - c).abs() > 1e-8 * c.max(1.0) {
        return Err(Error::Domain {
            what: "closure_moments",
            detail: format!("trace(D) = {} inconsistent with c = {c}", d_tensor.trace()),
        });
    }

    let dn = d_tensor.scaled(1.0 / c);
    let frame = eigen_frame(&dn)?;
    let s = match (d, map) {
        (2, ChebMap::Planar(map1)) => {
            let mu1 = frame.mus[0];
            if !(0.5 - 1e-8..=1.0 + 1e-8).contains(&mu1) {
                return Err(Error::Infeasible(format!(
                    "eigenvalue mu1 = {mu1} outside [1/2, 1] beyond round-off"
                )));
            }
            let mu1 = mu1.clamp(0.5, 1.0);
            let s1111 = eval_map_2d(map1, mu1)?;
            complete_fourth(&[mu1, 1.0 - mu1], &[s1111])?
        }
        (3, ChebMap::Spatial(map2)) => {
            let p = TrianglePoint::project(frame.mus[0], frame.mus[1], 1e-8).map_err(|e| {
                Error::Infeasible(format!("eigenvalues outside the feasible set: {e}"))
            })?;
            let v = eval_map_3d(map2, &p);
            complete_fourth(&[p.mu1(), p.mu2(), p.mu3()], &v)?
        }
        _ => {
            return Err(Error::Domain {
                what: "closure_moments",
                detail: format!("{d}-dimensional input with a map of the other dimension"),
            })
        }
    };
    Ok((frame, s))
}

/// Full closure pipeline at one grid point: eigendecompose D/c, evaluate the
/// fitted closure map in the eigenframe, complete by trace identities, and
/// contract with T = E + 2ζD, returning c · (S_B[D/c] : T) along with the
/// frame and the completed diagonal moment (both reused by stress assembly
/// and diagnostics).
///
/// Eigenvalue round-off up to 1e-8 outside the feasible set is projected
/// back (the time stepper's transients sit above fresh-eigensolve noise).
///
/// # Errors
/// `Error::Domain` when trace(D) ≠ c beyond 1e-8, E has trace above 1e-8,
/// dimensions mismatch, or the map's dimension differs; propagates
/// eigensolver and map errors; `Error::Infeasible` when eigenvalues leave
/// the feasible set beyond the projection tolerance.
pub fn closure_eval(
    d_tensor: &SymTensor,
    c: f64,
    zeta: f64,
    e_tensor: &SymTensor,
    map: &ChebMap,
) -> Result<(SymTensor, EigenFrame, DiagFourthMoment)> {
    let d = d_tensor.d;
    if e_tensor.d != d {
        return Err(Error::Domain {
            what: "closure_eval",
            detail: format!("D is {d}-dimensional but E is {}-dimensional", e_tensor.d),
        });
    }
    if e_tensor.trace().abs() > 1e-8 {
        return Err(Error::Domain {
            what: "closure_eval",
            detail: format!("E must be trace-free (trace {})", e_tensor.trace()),
        });
    }
    let (frame, s) = closure_moments(d_tensor, c, map)?;
    let two_zeta_d = d_tensor.scaled(2.0 * zeta);
    let t = e_tensor + &two_zeta_d;
    let sdot_t = contract_rotate(&frame, &s, &t).scaled(c);
    Ok((sdot_t, frame, s))
}

/// Recovers the Bingham exponent whose closure moments are (μ, S̃): solves
/// the diagonal linear system μᵢλᵢ − Σₖ S̃ᵢᵢₖₖλₖ = (d/2)(μᵢ − 1/d) for the
/// trace-free eigenvalues λ, then returns the shifted convention used
/// throughout (λ′ᵢ = λᵢ − λ_d, λ′_d = 0) with the matching normalization
/// constant (2D: Bessel closed form; 3D: sphere quadrature).
///
/// # Errors
/// `Error::Numerical` when μ₁ − S̃₁₁₁₁ < 1e-14 (2D) or the 3D system is
/// singular away from the isotropic point — both mean the input sits at or
/// beyond perfect alignment where λ diverges.
pub fn recover_b(mus: &[f64], s: &DiagFourthMoment, _c: f64) -> Result<BinghamParams> {
    let d = mus.len();
    let isotropic = mus.iter().all(|&m| (m - 1.0 / d as f64).abs() <= 1e-14);
    match d {
        2 => {
            if isotropic {
                return Ok(BinghamParams::planar(0.0));
            }
            let denom = mus[0] - s.s1111;
            if denom < 1e-14 {
                return Err(Error::Numerical(format!(
                    "exponent recovery overflow: mu1 - S1111 = {denom:e} at mu1 = {}",
                    mus[0]
                )));
            }
            // Trace-free λ₁ = (μ₁ − 1/2)/(2(μ₁ − S̃₁₁₁₁)) equals the λ of
            // the single-angle form exp(λ cos 2θ).
            Ok(BinghamParams::planar((mus[0] - 0.5) / (2.0 * denom)))
        }
        3 => {
            if isotropic {
                return Ok(BinghamParams {
                    d: 3,
                    lambdas: [0.0, 0.0],
                    log_z: (4.0 * std::f64::consts::PI).ln(),
                });
            }
            // Rows i = 1, 2 of the system with λ₃ = −λ₁ − λ₂ eliminated.
            let a11 = mus[0] - s.s1111 + s.s1133;
            let a12 = -s.s1122 + s.s1133;
            let a21 = -s.s1122 + s.s2233;
            let a22 = mus[1] - s.s2222 + s.s2233;
            let r1 = 1.5 * (mus[0] - 1.0 / 3.0);
            let r2 = 1.5 * (mus[1] - 1.0 / 3.0);
            let det = a11 * a22 - a12 * a21;
            if det.abs() < 1e-14 {
                return Err(Error::Numerical(format!(
                    "exponent recovery singular (det {det:e}) at mu = ({}, {})",
                    mus[0], mus[1]
                )));
            }
            let l1 = (r1 * a22 - r2 * a12) / det;
            let l2 = (a11 * r2 - a21 * r1) / det;
            let l3 = -l1 - l2;
            let lambdas = [l1 - l3, l2 - l3];
            let m = crate::solve::fit_quadrature().moments(lambdas[0], lambdas[1]);
            Ok(BinghamParams {
                d: 3,
                lambdas,
                log_z: m.log_z,
            })
        }
        _ => Err(Error::Domain {
            what: "recover_b",
            detail: format!("dimension {d} not supported"),
        }),
    }
}

/// Scalar order parameter s = d(μ₁ − 1/d)/(d − 1) ∈ [0, 1] and the director
/// (largest-eigenvalue axis, sign fixed so its first nonzero component is
/// positive).
///
/// # Errors
/// Propagates eigensolver domain errors.
pub fn scalar_order(d_tensor: &SymTensor, c: f64) -> Result<(f64, [f64; 3])> {
    let d = d_tensor.d as f64;
    let frame = eigen_frame(&d_tensor.scaled(1.0 / c))?;
    let s = (d * (frame.mus[0] - 1.0 / d) / (d - 1.0)).clamp(0.0, 1.0);
    let mut axis = frame.principal_axis();
    fix_sign(&mut axis);
    Ok((s, axis))
}
