//! Chebyshev interpolants of the closure maps: μ₁ ↦ S̃₁₁₁₁ on [1/2, 1] in
//! 2D, and (ν₁, ν₂) ↦ (S̃₁₁₁₁, S̃₁₁₂₂, S̃₂₂₂₂) on the transformed square in
//! 3D. Fitting solves the moment inversion on first-kind Chebyshev grids and
//! applies the discrete Chebyshev transform, which interpolates exactly at
//! the nodes; evaluation replaces the per-point nonlinear solve with a few
//! hundred fused multiply-adds.

use crate::solve::{
    s1111_from_lambda_2d, solve_lambda_2d, solve_lambda_3d_with, square_to_triangle,
    triangle_to_square, SphereQuadrature, SquarePoint, TrianglePoint,
};
use crate::{Error, Result};

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Interpolant of the planar closure map μ₁ ↦ S̃₁₁₁₁ in the Chebyshev basis
/// over ν = 4μ₁ − 3 ∈ [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ChebMap1D {
    degree: usize,
    /// c_m for m = 0..=degree; S̃₁₁₁₁(μ₁) = Σ c_m T_m(4μ₁ − 3).
    coeffs: Vec<f64>,
}

/// Interpolants of the three independent spatial closure components over the
/// transformed square, one coefficient grid per target, stored dense
/// row-major (m₁·(M+1) + m₂) with entries above total degree M zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebMap2D {
    degree: usize,
    /// Coefficient grids for S̃₁₁₁₁, S̃₁₁₂₂, S̃₂₂₂₂ in that order.
    coeffs: [Vec<f64>; 3],
}

/// A fitted closure map of either dimensionality, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum ChebMap {
    /// Planar map (one target).
    Planar(ChebMap1D),
    /// Spatial map (three targets).
    Spatial(ChebMap2D),
}

impl From<ChebMap1D> for ChebMap {
    fn from(map: ChebMap1D) -> Self {
        ChebMap::Planar(map)
    }
}

impl From<ChebMap2D> for ChebMap {
    fn from(map: ChebMap2D) -> Self {
        ChebMap::Spatial(map)
    }
}

impl ChebMap {
    /// The planar map, if this is one.
    pub fn planar(&self) -> Option<&ChebMap1D> {
        match self {
            ChebMap::Planar(m) => Some(m),
            ChebMap::Spatial(_) => None,
        }
    }

    /// The spatial map, if this is one.
    pub fn spatial(&self) -> Option<&ChebMap2D> {
        match self {
            ChebMap::Planar(_) => None,
            ChebMap::Spatial(m) => Some(m),
        }
    }
}

impl ChebMap1D {
    /// Polynomial degree M.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Coefficients c_0..=c_M.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
}

impl ChebMap2D {
    /// Polynomial total degree M.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Coefficient grid for target `t` (0 = S̃₁₁₁₁, 1 = S̃₁₁₂₂, 2 = S̃₂₂₂₂),
    /// row-major over (m₁, m₂).
    pub fn coeffs(&self, t: usize) -> &[f64] {
        &self.coeffs[t]
    }

    /// Mean |C_{m₁m₂}| over the diagonal m₁ + m₂ = m across all three
    /// targets; the standard decay diagnostic for choosing M.
    pub fn degree_averaged_magnitude(&self, m: usize) -> f64 {
        let n = self.degree + 1;
        let mut sum = 0.0;
        let mut count = 0usize;
        for m1 in 0..=m.min(self.degree) {
            let m2 = m - m1;
            if m2 > self.degree {
                continue;
            }
            for grid in &self.coeffs {
                sum += grid[m1 * n + m2].abs();
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

/// First-kind Chebyshev angles θ_k = (2k+1)π/(2n) for k = 0..n; the nodes
/// are cos θ_k, descending.
fn cheb_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| (2 * k + 1) as f64 * PI / (2 * n) as f64).collect()
}

/// Discrete Chebyshev transform on first-kind nodes: given values f_k at
/// x_k = cos θ_k, returns c_m with Σ_m c_m T_m(x_k) = f_k exactly.
fn cheb_transform(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let angles = cheb_angles(n);
    (0..n)
        .map(|m| {
            let scale = if m == 0 { 1.0 } else { 2.0 } / n as f64;
            scale
                * angles
                    .iter()
                    .zip(values)
                    .map(|(&t, &f)| f * (m as f64 * t).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Clenshaw evaluation of Σ c_m T_m(x).
fn clenshaw(coeffs: &[f64], x: f64) -> f64 {
    let mut b1 = 0.0f64;
    let mut b2 = 0.0f64;
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = c + 2.0 * x * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    coeffs[0] + x * b1 - b2
}

/// Fits the planar closure map at degree M by solving the moment inversion
/// on the n = M + 1 first-kind Chebyshev nodes μ₁,k = [cos((2k−1)π/(2n)) + 3]/4
/// and taking the discrete Chebyshev transform.
///
/// # Errors
/// `Error::Domain` for M < 4; solver errors propagate.
pub fn fit_map_2d(degree: usize) -> Result<ChebMap1D> {
    Ok(fit_map_2d_report(degree)?.0)
}

/// [`fit_map_2d`] plus the largest residual between the interpolant and the
/// solver values over the fit nodes (round-off level in 2D, where no
/// coefficients are truncated).
///
/// # Errors
/// As [`fit_map_2d`].
pub fn fit_map_2d_report(degree: usize) -> Result<(ChebMap1D, f64)> {
    if degree < 4 {
        return Err(Error::Domain {
            what: "fit_map_2d",
            detail: format!("degree M = {degree} below the minimum of 4"),
        });
    }
    let n = degree + 1;
    let mus: Vec<f64> = cheb_angles(n).iter().map(|&t| (t.cos() + 3.0) / 4.0).collect();
    let values = mus
        .iter()
        .map(|&mu1| Ok(s1111_from_lambda_2d(solve_lambda_2d(mu1)?)))
        .collect::<Result<Vec<f64>>>()?;
    let map = ChebMap1D {
        degree,
        coeffs: cheb_transform(&values),
    };
    let mut resid = 0.0f64;
    for (v, mu) in values.iter().zip(&mus) {
        resid = resid.max((eval_map_2d(&map, *mu)? - v).abs());
    }
    Ok((map, resid))
}

/// Evaluates the planar map at μ₁ ∈ [1/2, 1] (round-off clamped).
///
/// # Errors
/// `Error::Domain` beyond a 1e-12 clamp.
pub fn eval_map_2d(map: &ChebMap1D, mu1: f64) -> Result<f64> {
    if !(mu1 >= 0.5 - 1e-12 && mu1 <= 1.0 + 1e-12) || mu1.is_nan() {
        return Err(Error::Domain {
            what: "eval_map_2d",
            detail: format!("mu1 = {mu1} outside [1/2, 1]"),
        });
    }
    let nu = (4.0 * mu1 - 3.0).clamp(-1.0, 1.0);
    Ok(clenshaw(&map.coeffs, nu))
}

/// Production quadrature escalated in the azimuthal count, used for the few
/// fit nodes adjacent to the planar-isotropic corner: there the exponents
/// reach ~1/(2μ₃) with a near-zero gap, and the standard azimuthal count
/// leaves ~1e-8 aliasing error in the fourth moments, which would leak into
/// the interpolant above the accuracy target. Denser φ sampling removes it;
/// the escalation rule is deterministic, so fits remain reproducible.
fn escalated_quadrature() -> &'static SphereQuadrature {
    static QUAD: OnceLock<SphereQuadrature> = OnceLock::new();
    QUAD.get_or_init(|| SphereQuadrature::new(4096, 4096).expect("fixed sizes are valid"))
}

/// μ₃ threshold below which a fit node uses the escalated quadrature.
const ESCALATION_MU3: f64 = 1e-4;

/// Solves one constant-ν₂ line of the fit grid in ascending ν₁ order
/// (isotropic edge toward the aligned edge), warm-starting each solve from
/// its neighbor; `angles` are the first-kind Chebyshev angles.
fn fit_line_3d(
    quad: &SphereQuadrature,
    angles: &[f64],
    nu2: f64,
    escalate: bool,
) -> Result<Vec<[f64; 3]>> {
    let n = angles.len();
    let mut out = vec![[0.0f64; 3]; n];
    let mut warm: Option<[f64; 2]> = None;
    for i in (0..n).rev() {
        let q = SquarePoint {
            nu1: angles[i].cos(),
            nu2,
        };
        let p = square_to_triangle(&q);
        let rule = if escalate && p.mu3() < ESCALATION_MU3 {
            escalated_quadrature()
        } else {
            quad
        };
        let params = match solve_lambda_3d_with(&p, rule, warm) {
            Ok(params) => params,
            // A stale warm start can strand Newton; retry with the full
            // initial-guess and continuation ladder before giving up.
            Err(_) if warm.is_some() => solve_lambda_3d_with(&p, rule, None).map_err(|e| {
                Error::Numerical(format!(
                    "fit node (nu1 = {}, nu2 = {nu2}) failed: {e}",
                    q.nu1
                ))
            })?,
            Err(e) => {
                return Err(Error::Numerical(format!(
                    "fit node (nu1 = {}, nu2 = {nu2}) failed: {e}",
                    q.nu1
                )))
            }
        };
        warm = Some(params.lambdas);
        let m = rule.moments(params.lambdas[0], params.lambdas[1]);
        out[i] = [m.p1111, m.p1122, m.p2222];
    }
    Ok(out)
}

/// Fits the spatial closure maps at total degree M on the (M+1)² tensor
/// grid of first-kind Chebyshev nodes in the transformed square, then
/// applies the separable discrete Chebyshev transform and zeroes
/// coefficients with m₁ + m₂ > M.
///
/// Grid lines at constant ν₂ are independent and run concurrently when the
/// `parallel` feature is enabled; within a line the solves sweep ν₁
/// ascending so each node warm-starts from its neighbor. Results are
/// bit-identical regardless of worker count.
///
/// # Errors
/// `Error::Domain` for M < 4; solver failures surface as `Error::Numerical`
/// naming the failing node.
pub fn fit_map_3d(degree: usize) -> Result<ChebMap2D> {
    Ok(fit_map_3d_with(degree, crate::solve::fit_quadrature(), true)?.0)
}

/// [`fit_map_3d`] plus the largest residual between the truncated
/// interpolant and the solver values over the fit nodes (the total-degree
/// truncation makes this a genuine — if benign — fitting error).
///
/// # Errors
/// As [`fit_map_3d`].
pub fn fit_map_3d_report(degree: usize) -> Result<(ChebMap2D, f64)> {
    fit_map_3d_with(degree, crate::solve::fit_quadrature(), true)
}

/// [`fit_map_3d`] with a caller-supplied quadrature (tests use smaller
/// rules); `escalate` enables the corner-node azimuthal escalation. Also
/// returns the maximum node residual of the truncated interpolant.
pub(crate) fn fit_map_3d_with(
    degree: usize,
    quad: &SphereQuadrature,
    escalate: bool,
) -> Result<(ChebMap2D, f64)> {
    if degree < 4 {
        return Err(Error::Domain {
            what: "fit_map_3d",
            detail: format!("degree M = {degree} below the minimum of 4"),
        });
    }
    let n = degree + 1;
    let angles = cheb_angles(n);

    let solve_line = |j: usize| fit_line_3d(quad, &angles, angles[j].cos(), escalate);
    #[cfg(feature = "parallel")]
    let lines: Vec<Vec<[f64; 3]>> = (0..n)
        .into_par_iter()
        .map(solve_line)
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let lines: Vec<Vec<[f64; 3]>> = (0..n).map(solve_line).collect::<Result<_>>()?;

    // Separable transform: first over ν₁ (per line), then over ν₂, per
    // target; `lines[j][i]` holds the value at (ν₁ = cos θ_i, ν₂ = cos θ_j).
    let mut coeffs: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0f64; n * n]);
    for (t, grid) in coeffs.iter_mut().enumerate() {
        // Pass 1: c^{(1)}[m₁][j] over the ν₁ index.
        let mut pass1 = vec![0.0f64; n * n];
        let mut column = vec![0.0f64; n];
        for j in 0..n {
            for i in 0..n {
                column[i] = lines[j][i][t];
            }
            for (m1, c) in cheb_transform(&column).into_iter().enumerate() {
                pass1[m1 * n + j] = c;
            }
        }
        // Pass 2: over the ν₂ index, then truncate to total degree ≤ M.
        for m1 in 0..n {
            let row = &pass1[m1 * n..(m1 + 1) * n];
            for (m2, c) in cheb_transform(row).into_iter().enumerate() {
                grid[m1 * n + m2] = if m1 + m2 > degree { 0.0 } else { c };
            }
        }
    }

    // Node residual of the truncated interpolant against the solver values.
    let basis: Vec<Vec<f64>> = angles.iter().map(|&t| cheb_values(t.cos(), n)).collect();
    let mut resid = 0.0f64;
    for (j, line) in lines.iter().enumerate() {
        let t2 = &basis[j];
        for (i, vals) in line.iter().enumerate() {
            let t1 = &basis[i];
            for (t, grid) in coeffs.iter().enumerate() {
                let mut v = 0.0;
                for (m1, t1m) in t1.iter().enumerate() {
                    let row = &grid[m1 * n..m1 * n + (n - m1)];
                    v += t1m * row.iter().zip(t2).map(|(c, t)| c * t).sum::<f64>();
                }
                resid = resid.max((v - vals[t]).abs());
            }
        }
    }
    Ok((ChebMap2D { degree, coeffs }, resid))
}

/// Evaluates the three spatial closure components at a triangle point. The
/// isotropic corner bypasses the singular square transform and returns the
/// analytic (1/5, 1/15, 1/5); all three targets share one set of Chebyshev
/// polynomial evaluations.
pub fn eval_map_3d(map: &ChebMap2D, p: &TrianglePoint) -> [f64; 3] {
    if p.is_isotropic() {
        return [0.2, 1.0 / 15.0, 0.2];
    }
    let q = triangle_to_square(p).expect("non-isotropic point maps into the square");
    let n = map.degree + 1;
    let t1 = cheb_values(q.nu1.clamp(-1.0, 1.0), n);
    let t2 = cheb_values(q.nu2.clamp(-1.0, 1.0), n);
    let mut out = [0.0f64; 3];
    for m1 in 0..n {
        let row_len = n - m1; // entries with m₁ + m₂ ≤ M
        let mut rows = [0.0f64; 3];
        for (t, grid) in map.coeffs.iter().enumerate() {
            let row = &grid[m1 * n..m1 * n + row_len];
            rows[t] = row.iter().zip(&t2).map(|(c, t)| c * t).sum();
        }
        for (o, r) in out.iter_mut().zip(rows) {
            *o += r * t1[m1];
        }
    }
    out
}

/// T_0(x)..T_{n−1}(x) by the forward recurrence (stable on [−1, 1]).
fn cheb_values(x: f64, n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n);
    t.push(1.0);
    if n > 1 {
        t.push(x);
    }
    for m in 2..n {
        t.push(2.0 * x * t[m - 1] - t[m - 2]);
    }
    t
}

// --- serialization ---------------------------------------------------------

/// CRC-32 (IEEE, reflected) of `data`.
fn crc32(data: &[u8]) -> u32 {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *slot = c;
        }
        table
    });
    let mut c = !0u32;
    for &b in data {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    !c
}

const TARGET_NAMES: [&str; 3] = ["S1111", "S1122", "S2222"];

/// Writes a fitted map as a line-oriented UTF-8 text file:
///
/// ```text
/// binghammap v1 dim=<2|3> M=<int> targets=<1|3>
/// domain=<mu1:0.5:1 | square:H-v1>
/// target=<name>            (repeated per target)
/// <one coefficient per line, 17 significant digits>
/// crc32=<hex>
/// ```
///
/// The checksum covers the coefficient lines exactly as written (newlines
/// included). 2D grids are stored dense row-major over the full (M+1)²
/// square, zeros included.
///
/// # Errors
/// I/O errors from the filesystem.
pub fn save_map(map: &ChebMap, path: &Path) -> Result<()> {
    let mut body = String::new();
    let mut digest = String::new();
    match map {
        ChebMap::Planar(m) => {
            let _ = writeln!(
                body,
                "binghammap v1 dim=2 M={} targets=1\ndomain=mu1:0.5:1",
                m.degree
            );
            let _ = writeln!(body, "target={}", TARGET_NAMES[0]);
            for &c in &m.coeffs {
                let _ = writeln!(digest, "{c:.16e}");
            }
            body.push_str(&digest);
        }
        ChebMap::Spatial(m) => {
            let _ = writeln!(
                body,
                "binghammap v1 dim=3 M={} targets=3\ndomain=square:H-v1",
                m.degree
            );
            for (t, grid) in m.coeffs.iter().enumerate() {
                let _ = writeln!(body, "target={}", TARGET_NAMES[t]);
                let start = digest.len();
                for &c in grid {
                    let _ = writeln!(digest, "{c:.16e}");
                }
                body.push_str(&digest[start..]);
            }
        }
    }
    let _ = writeln!(body, "crc32={:08x}", crc32(digest.as_bytes()));
    std::fs::write(path, body).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

/// Reads a map written by [`save_map`], verifying structure and checksum.
///
/// # Errors
/// `Error::Format` naming the first malformed or missing element; I/O errors
/// from the filesystem.
pub fn load_map(path: &Path) -> Result<ChebMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty file: missing header line".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "binghammap" {
        return Err(Error::Format(format!("malformed header line: {header:?}")));
    }
    if fields[1] != "v1" {
        return Err(Error::Format(format!(
            "unsupported format version {:?} (expected v1)",
            fields[1]
        )));
    }
    let field = |idx: usize, key: &str| -> Result<usize> {
        fields[idx]
            .strip_prefix(key)
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| Error::Format(format!("malformed {key}<int> field: {:?}", fields[idx])))
    };
    let dim = field(2, "dim=")?;
    let degree = field(3, "M=")?;
    let targets = field(4, "targets=")?;
    let (expected_targets, expected_domain) = match dim {
        2 => (1usize, "domain=mu1:0.5:1"),
        3 => (3usize, "domain=square:H-v1"),
        other => {
            return Err(Error::Format(format!(
                "unsupported dimension dim={other} (expected 2 or 3)"
            )))
        }
    };
    if targets != expected_targets {
        return Err(Error::Format(format!(
            "dim={dim} requires targets={expected_targets}, found {targets}"
        )));
    }
    if degree < 4 {
        return Err(Error::Format(format!("degree M={degree} below minimum 4")));
    }
    let domain = lines
        .next()
        .ok_or_else(|| Error::Format("missing domain line".into()))?;
    if domain != expected_domain {
        return Err(Error::Format(format!(
            "unexpected domain line {domain:?} (expected {expected_domain:?})"
        )));
    }

    let n = degree + 1;
    let per_target = if dim == 2 { n } else { n * n };
    let mut digest = String::new();
    let mut grids: Vec<Vec<f64>> = Vec::with_capacity(targets);
    for name in TARGET_NAMES.iter().take(targets) {
        let tag = lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing target={name} section")))?;
        if tag != format!("target={name}") {
            return Err(Error::Format(format!(
                "expected target={name} header, found {tag:?}"
            )));
        }
        let mut grid = Vec::with_capacity(per_target);
        for idx in 0..per_target {
            let line = lines.next().ok_or_else(|| {
                Error::Format(format!(
                    "target={name} truncated: {idx} of {per_target} coefficients present"
                ))
            })?;
            let value: f64 = line.trim().parse().map_err(|_| {
                Error::Format(format!("target={name} coefficient {idx} unparsable: {line:?}"))
            })?;
            digest.push_str(line);
            digest.push('\n');
            grid.push(value);
        }
        grids.push(grid);
    }
    let crc_line = lines
        .next()
        .ok_or_else(|| Error::Format("missing crc32 line".into()))?;
    let stated = crc_line
        .strip_prefix("crc32=")
        .and_then(|v| u32::from_str_radix(v.trim(), 16).ok())
        .ok_or_else(|| Error::Format(format!("malformed crc32 line: {crc_line:?}")))?;
    let computed = crc32(digest.as_bytes());
    if stated != computed {
        return Err(Error::Format(format!(
            "checksum mismatch: file says {stated:08x}, coefficients give {computed:08x}"
        )));
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Format("trailing content after crc32 line".into()));
    }

    Ok(if dim == 2 {
        ChebMap::Planar(ChebMap1D {
            degree,
            coeffs: grids.pop().expect("one target parsed"),
        })
    } else {
        let s2222 = grids.pop().expect("three targets parsed");
        let s1122 = grids.pop().expect("three targets parsed");
        let s1111 = grids.pop().expect("three targets parsed");
        ChebMap::Spatial(ChebMap2D {
            degree,
            coeffs: [s1111, s1122, s2222],
        })
    })
}
