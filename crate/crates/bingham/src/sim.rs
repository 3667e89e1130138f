//! Pseudo-spectral periodic simulator for the coarse-grained orientation
//! dynamics: concentration and second-moment transport with closure-derived
//! active stress, Fourier-space Stokes flow, and second-order semi-implicit
//! (SBDF2) time stepping with 2/3-rule dealiasing.
//!
//! Layout conventions: square/cubic grids with `n` points per axis, fields
//! stored row-major (last axis fastest). Spectra use the convention
//! f(x) = Σ_k f̂(k) e^{ik·x} (forward transform normalized by 1/N), so a
//! field A·cos(k·x + φ) has |f̂(±k)| = A/2. Wavenumbers are lattice integers
//! scaled by 2π/L.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::chebmap::ChebMap;
use crate::frame::{
    closure_moments, contract_rotate, eigen_frame, DiagFourthMoment, EigenFrame, SymTensor,
};
use crate::{Error, Result};

/// How the rate-of-strain entering the stress contraction is obtained each
/// step (the stress depends on E = sym ∇u while u is solved from that same
/// stress).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StressMode {
    /// Two-level explicit extrapolation E* = 2Eⁿ⁻¹ − Eⁿ⁻² (default): keeps
    /// global second order and is stable for coupling gain < 1.
    Extrapolate,
    /// Per-step fixed-point iteration of the stress/flow loop to round-off;
    /// slower, used to validate the extrapolated path.
    Iterate,
}

impl std::str::FromStr for StressMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extrapolate" => Ok(StressMode::Extrapolate),
            "iterate" => Ok(StressMode::Iterate),
            other => Err(Error::Format(format!(
                "unknown stress_mode '{other}' (expected 'extrapolate' or 'iterate')"
            ))),
        }
    }
}

impl fmt::Display for StressMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StressMode::Extrapolate => "extrapolate",
            StressMode::Iterate => "iterate",
        })
    }
}

/// Simulation parameters. The config-file keys match the canonical field
/// names listed per field below (upper-case where customary in the model).
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Spatial dimension, key `d` (2 or 3).
    pub d: usize,
    /// Grid points per axis, key `n` (even).
    pub n: usize,
    /// Box edge length, key `L`.
    pub l: f64,
    /// Time step, key `dt`.
    pub dt: f64,
    /// Dipole strength (negative = extensile), key `alpha`.
    pub alpha: f64,
    /// Density coefficient of the constitutive stress, key `beta`.
    pub beta: f64,
    /// Steric alignment strength, key `zeta`.
    pub zeta: f64,
    /// Translational diffusion, key `dT`.
    pub d_t: f64,
    /// Rotational diffusion, key `dR`.
    pub d_r: f64,
    /// Closure interpolant degree, key `M`.
    pub m: usize,
    /// Initial perturbation amplitude, key `eps`.
    pub eps: f64,
    /// Number of lowest lattice modes perturbed, key `modes`.
    pub modes: usize,
    /// RNG seed for perturbation tensors and phases, key `seed`.
    pub seed: u64,
    /// Final time for `run`, key `t_end`.
    pub t_end: f64,
    /// Steps between snapshot/spectrum outputs (0 = none), key `output_every`.
    pub output_every: usize,
    /// Stress/flow coupling treatment, key `stress_mode`.
    pub stress_mode: StressMode,
    /// Output directory for snapshots and diagnostics, key `out_dir`.
    pub out_dir: PathBuf,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            d: 2,
            n: 64,
            l: 15.0,
            dt: 0.05,
            alpha: -1.0,
            beta: 0.8,
            zeta: 1.0,
            d_t: 0.1,
            d_r: 0.1,
            m: 40,
            eps: 1e-2,
            modes: 3,
            seed: 0,
            t_end: 50.0,
            output_every: 0,
            stress_mode: StressMode::Extrapolate,
            out_dir: PathBuf::from("."),
        }
    }
}

impl SimConfig {
    /// Parses a flat `key = value` config text (`#` starts a comment).
    /// Unknown keys and malformed values are format errors.
    pub fn parse(text: &str) -> Result<SimConfig> {
        let mut cfg = SimConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                Error::Format(format!(
                    "line {}: invalid value '{value}' for {what}",
                    lineno + 1
                ))
            };
            match key {
                "d" => cfg.d = value.parse().map_err(|_| bad("d"))?,
                "n" => cfg.n = value.parse().map_err(|_| bad("n"))?,
                "L" => cfg.l = value.parse().map_err(|_| bad("L"))?,
                "dt" => cfg.dt = value.parse().map_err(|_| bad("dt"))?,
                "alpha" => cfg.alpha = value.parse().map_err(|_| bad("alpha"))?,
                "beta" => cfg.beta = value.parse().map_err(|_| bad("beta"))?,
                "zeta" => cfg.zeta = value.parse().map_err(|_| bad("zeta"))?,
                "dT" => cfg.d_t = value.parse().map_err(|_| bad("dT"))?,
                "dR" => cfg.d_r = value.parse().map_err(|_| bad("dR"))?,
                "M" => cfg.m = value.parse().map_err(|_| bad("M"))?,
                "eps" => cfg.eps = value.parse().map_err(|_| bad("eps"))?,
                "modes" => cfg.modes = value.parse().map_err(|_| bad("modes"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "t_end" => cfg.t_end = value.parse().map_err(|_| bad("t_end"))?,
                "output_every" => cfg.output_every = value.parse().map_err(|_| bad("output_every"))?,
                "stress_mode" => cfg.stress_mode = value.parse()?,
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                other => {
                    return Err(Error::Format(format!(
                        "line {}: unknown config key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the structural invariants (dimension, even grid, positive
    /// steps and box, non-negative diffusivities).
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::Format(detail));
        if self.d != 2 && self.d != 3 {
            return fail(format!("d = {} (must be 2 or 3)", self.d));
        }
        if self.n < 4 || self.n % 2 != 0 {
            return fail(format!("n = {} (must be even and at least 4)", self.n));
        }
        if !(self.l > 0.0) {
            return fail(format!("L = {} (must be positive)", self.l));
        }
        if !(self.dt > 0.0) {
            return fail(format!("dt = {} (must be positive)", self.dt));
        }
        if !(self.d_t >= 0.0) || !(self.d_r >= 0.0) {
            return fail(format!("dT = {}, dR = {} (must be >= 0)", self.d_t, self.d_r));
        }
        if !(self.eps >= 0.0) {
            return fail(format!("eps = {} (must be >= 0)", self.eps));
        }
        if self.modes == 0 || self.modes > 30 {
            return fail(format!("modes = {} (must be in 1..=30)", self.modes));
        }
        if !(self.t_end >= 0.0) {
            return fail(format!("t_end = {} (must be >= 0)", self.t_end));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Spectral grid: per-axis FFTs, wavenumbers, derivatives, dealiasing.
// ---------------------------------------------------------------------------

pub(crate) struct SpectralGrid {
    pub(crate) d: usize,
    pub(crate) n: usize,
    pub(crate) len: usize,
    pub(crate) l: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Signed lattice frequency for each axis index (0, 1, …, n/2, −n/2+1, …, −1).
    pub(crate) k_lat: Vec<i64>,
    /// Dealiasing keep-flag per axis index (false where 3|k| > n).
    keep: Vec<bool>,
    /// Flat-index stride of each axis (axis 0 slowest).
    pub(crate) stride: Vec<usize>,
}

impl SpectralGrid {
    pub(crate) fn new(d: usize, n: usize, l: f64) -> SpectralGrid {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let k_lat: Vec<i64> = (0..n)
            .map(|m| if m <= n / 2 { m as i64 } else { m as i64 - n as i64 })
            .collect();
        let keep: Vec<bool> = k_lat.iter().map(|&k| 3 * k.abs() <= n as i64).collect();
        let stride: Vec<usize> = (0..d).map(|a| n.pow((d - 1 - a) as u32)).collect();
        SpectralGrid {
            d,
            n,
            len: n.pow(d as u32),
            l,
            fwd,
            inv,
            k_lat,
            keep,
            stride,
        }
    }

    /// Lattice frequency of `idx` along `axis`.
    #[inline]
    pub(crate) fn k_axis(&self, idx: usize, axis: usize) -> i64 {
        self.k_lat[(idx / self.stride[axis]) % self.n]
    }

    /// Physical wavevector magnitude squared at `idx`.
    #[inline]
    pub(crate) fn k2(&self, idx: usize) -> f64 {
        let f = 2.0 * std::f64::consts::PI / self.l;
        (0..self.d)
            .map(|a| {
                let k = self.k_axis(idx, a) as f64 * f;
                k * k
            })
            .sum()
    }

    fn fft_lines(&self, buf: &mut [Complex64], forward: bool) {
        let fft = if forward { &self.fwd } else { &self.inv };
        #[cfg(feature = "parallel")]
        {
            buf.par_chunks_mut(self.n).for_each_init(
                || vec![Complex64::default(); fft.get_inplace_scratch_len()],
                |scratch, line| fft.process_with_scratch(line, scratch),
            );
        }
        #[cfg(not(feature = "parallel"))]
        {
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            for line in buf.chunks_mut(self.n) {
                fft.process_with_scratch(line, &mut scratch);
            }
        }
    }

    /// Cyclic axis rotation so the next-to-transform axis becomes contiguous:
    /// 2D transpose, 3D (i, j, k) → (k, i, j).
    fn rotate(&self, src: &[Complex64], dst: &mut [Complex64]) {
        let n = self.n;
        match self.d {
            2 => {
                #[cfg(feature = "parallel")]
                let rows = dst.par_chunks_mut(n);
                #[cfg(not(feature = "parallel"))]
                let rows = dst.chunks_mut(n);
                rows.enumerate().for_each(|(j, row)| {
                    for (i, slot) in row.iter_mut().enumerate() {
                        *slot = src[i * n + j];
                    }
                });
            }
            _ => {
                #[cfg(feature = "parallel")]
                let blocks = dst.par_chunks_mut(n * n);
                #[cfg(not(feature = "parallel"))]
                let blocks = dst.chunks_mut(n * n);
                blocks.enumerate().for_each(|(k, block)| {
                    for i in 0..n {
                        for j in 0..n {
                            block[i * n + j] = src[(i * n + j) * n + k];
                        }
                    }
                });
            }
        }
    }

    fn transform_axes(&self, buf: &mut Vec<Complex64>, forward: bool) {
        let mut scratch = vec![Complex64::default(); self.len];
        for _ in 0..self.d {
            self.fft_lines(buf, forward);
            self.rotate(buf, &mut scratch);
            std::mem::swap(buf, &mut scratch);
        }
    }

    /// Forward transform of a real field (normalized by 1/N).
    pub(crate) fn forward(&self, real: &[f64]) -> Vec<Complex64> {
        self.forward_strided(real, 1, 0)
    }

    /// Forward transform gathering `real[offset + i*stride]`.
    pub(crate) fn forward_strided(
        &self,
        real: &[f64],
        stride: usize,
        offset: usize,
    ) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = (0..self.len)
            .map(|i| Complex64::new(real[offset + i * stride], 0.0))
            .collect();
        self.transform_axes(&mut buf, true);
        let scale = 1.0 / self.len as f64;
        for v in &mut buf {
            *v *= scale;
        }
        buf
    }

    /// Inverse transform, discarding the (round-off level) imaginary part.
    pub(crate) fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        self.inverse_with_residue(spec).0
    }

    /// Inverse transform returning the largest imaginary residue as a
    /// reality diagnostic.
    pub(crate) fn inverse_with_residue(&self, spec: &[Complex64]) -> (Vec<f64>, f64) {
        let mut buf = spec.to_vec();
        self.transform_axes(&mut buf, false);
        let mut resid = 0.0f64;
        let real = buf
            .iter()
            .map(|v| {
                resid = resid.max(v.im.abs());
                v.re
            })
            .collect();
        (real, resid)
    }

    /// Spectral derivative along `axis` (multiplication by i·k).
    pub(crate) fn deriv(&self, spec: &[Complex64], axis: usize) -> Vec<Complex64> {
        let f = 2.0 * std::f64::consts::PI / self.l;
        let stride = self.stride[axis];
        spec.iter()
            .enumerate()
            .map(|(idx, v)| {
                let k = self.k_lat[(idx / stride) % self.n] as f64 * f;
                Complex64::new(-v.im * k, v.re * k)
            })
            .collect()
    }

    /// Zeroes every mode with any |kᵢ| > n/3 (2/3 anti-aliasing rule).
    pub(crate) fn dealias(&self, spec: &mut [Complex64]) {
        for (idx, v) in spec.iter_mut().enumerate() {
            for a in 0..self.d {
                if !self.keep[(idx / self.stride[a]) % self.n] {
                    *v = Complex64::default();
                    break;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Snapshots (binary, little-endian): magic "ANF1", u32 d, u32 n, f64 L,
// f64 t, f64 dt, then row-major f64 arrays: c, then D components in
// upper-triangle order.
// ---------------------------------------------------------------------------

/// In-memory contents of a snapshot file.
#[derive(Debug, Clone)]
pub struct SnapshotData {
    pub d: usize,
    pub n: usize,
    pub l: f64,
    pub t: f64,
    pub dt: f64,
    pub c: Vec<f64>,
    pub d_comp: Vec<Vec<f64>>,
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"ANF1";

/// Writes a snapshot file.
pub fn write_snapshot(path: &Path, snap: &SnapshotData) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(snap.d as u32).to_le_bytes())?;
    w.write_all(&(snap.n as u32).to_le_bytes())?;
    for v in [snap.l, snap.t, snap.dt] {
        w.write_all(&v.to_le_bytes())?;
    }
    for grid in std::iter::once(&snap.c).chain(snap.d_comp.iter()) {
        for v in grid {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates a snapshot file.
pub fn read_snapshot(path: &Path) -> Result<SnapshotData> {
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let fail = |detail: String| Error::Format(format!("snapshot {}: {detail}", path.display()));
    if bytes.len() < 36 {
        return Err(fail("file shorter than the header".into()));
    }
    if &bytes[0..4] != SNAPSHOT_MAGIC {
        return Err(fail("bad magic (expected ANF1)".into()));
    }
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let (l, t, dt) = (f64_at(12), f64_at(20), f64_at(28));
    if d != 2 && d != 3 {
        return Err(fail(format!("dimension {d} unsupported")));
    }
    if n < 4 || n % 2 != 0 {
        return Err(fail(format!("grid size {n} invalid")));
    }
    if !(l > 0.0) || !l.is_finite() || !t.is_finite() || !dt.is_finite() {
        return Err(fail(format!("invalid header values L={l}, t={t}, dt={dt}")));
    }
    let nc = d * (d + 1) / 2;
    let npts = n.pow(d as u32);
    let expected = 36 + (1 + nc) * npts * 8;
    if bytes.len() != expected {
        return Err(fail(format!(
            "size {} does not match header (expected {expected})",
            bytes.len()
        )));
    }
    let read_grid = |g: usize| -> Vec<f64> {
        let base = 36 + g * npts * 8;
        (0..npts)
            .map(|i| f64::from_le_bytes(bytes[base + i * 8..base + i * 8 + 8].try_into().unwrap()))
            .collect()
    };
    Ok(SnapshotData {
        d,
        n,
        l,
        t,
        dt,
        c: read_grid(0),
        d_comp: (0..nc).map(|j| read_grid(1 + j)).collect(),
    })
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

/// Per-step diagnostics.
#[derive(Debug, Clone)]
pub struct StepReport {
    /// Time after the step.
    pub t: f64,
    /// Maximum velocity magnitude component over the grid.
    pub max_u: f64,
    /// CFL number max|u|·Δt/(L/n).
    pub cfl: f64,
    /// True when the CFL number exceeds 1 (heuristic warning, not an error).
    pub cfl_warning: bool,
    /// Maximum |k·û| over modes (incompressibility residual).
    pub max_divergence: f64,
    /// Maximum |trace(D) − c| over the grid after the step.
    pub max_trace_drift: f64,
    /// Grid points whose eigenvalues needed projection back to the feasible
    /// set (round-off scale; large violations abort instead).
    pub clamped_points: usize,
    /// Fixed-point iterations of the stress/flow loop, when that path ran.
    pub fixed_point_iters: Option<usize>,
}

#[derive(Clone)]
struct PointClosure {
    frame: EigenFrame,
    s: DiagFourthMoment,
}

impl Default for PointClosure {
    fn default() -> Self {
        PointClosure {
            frame: EigenFrame {
                d: 2,
                mus: [0.0; 3],
                omega: [0.0; 9],
            },
            s: DiagFourthMoment {
                d: 2,
                s1111: 0.0,
                s1122: 0.0,
                s2222: 0.0,
                s1133: 0.0,
                s2233: 0.0,
                s3333: 0.0,
            },
        }
    }
}

/// Velocity stage outputs produced from one stress assembly.
struct Flow {
    hat_u: Vec<Vec<Complex64>>,
    u: Vec<Vec<f64>>,
    /// (∇u)_ij = ∂u_i/∂x_j, row-major over (i, j).
    grad_u: Vec<Vec<f64>>,
    /// sym ∇u packed like SymTensor components.
    e: Vec<Vec<f64>>,
    max_u: f64,
    max_div: f64,
}

/// The simulator owns the spectral state (dealiased), physical mirrors, the
/// closure map, and the SBDF2/extrapolation histories.
pub struct Simulator {
    cfg: SimConfig,
    grid: SpectralGrid,
    map: ChebMap,
    nc: usize,
    hat_c: Vec<Complex64>,
    hat_d: Vec<Vec<Complex64>>,
    c: Vec<f64>,
    d_comp: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    hat_u: Vec<Vec<Complex64>>,
    closure_pt: Vec<PointClosure>,
    prev_hat_c: Option<Vec<Complex64>>,
    prev_hat_d: Option<Vec<Vec<Complex64>>>,
    prev_nc: Option<Vec<Complex64>>,
    prev_nd: Option<Vec<Vec<Complex64>>>,
    /// (Eⁿ⁻¹, Eⁿ⁻²) physical strain-rate histories for stress extrapolation.
    e_hist: (Option<Vec<Vec<f64>>>, Option<Vec<Vec<f64>>>),
    t: f64,
    steps: usize,
}

/// Packs the upper-triangle component index of a symmetric d×d tensor.
#[inline]
fn sym_index(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    if d == 2 {
        i + j
    } else {
        [0, 1, 2, 0, 3, 4, 0, 0, 5][i * 3 + j]
    }
}

impl Simulator {
    /// Builds a simulator in the uniform isotropic state (c ≡ 1, D = I/d).
    ///
    /// # Errors
    /// Config validation failures; a map of mismatched dimension.
    pub fn new(cfg: SimConfig, map: ChebMap) -> Result<Simulator> {
        cfg.validate()?;
        let map_d = match &map {
            ChebMap::Planar(_) => 2,
            ChebMap::Spatial(_) => 3,
        };
        if map_d != cfg.d {
            return Err(Error::Domain {
                what: "Simulator::new",
                detail: format!("config is {}-dimensional but the map is {map_d}-dimensional", cfg.d),
            });
        }
        let grid = SpectralGrid::new(cfg.d, cfg.n, cfg.l);
        let len = grid.len;
        let nc = cfg.d * (cfg.d + 1) / 2;
        let mut sim = Simulator {
            nc,
            hat_c: vec![Complex64::default(); len],
            hat_d: vec![vec![Complex64::default(); len]; nc],
            c: vec![1.0; len],
            d_comp: vec![vec![0.0; len]; nc],
            u: vec![vec![0.0; len]; cfg.d],
            hat_u: vec![vec![Complex64::default(); len]; cfg.d],
            closure_pt: vec![PointClosure::default(); len],
            prev_hat_c: None,
            prev_hat_d: None,
            prev_nc: None,
            prev_nd: None,
            e_hist: (None, None),
            t: 0.0,
            steps: 0,
            cfg,
            grid,
            map,
        };
        sim.set_uniform_isotropic();
        Ok(sim)
    }

    fn set_uniform_isotropic(&mut self) {
        let d = self.cfg.d as f64;
        for v in &mut self.c {
            *v = 1.0;
        }
        for i in 0..self.cfg.d {
            for j in i..self.cfg.d {
                let val = if i == j { 1.0 / d } else { 0.0 };
                self.d_comp[sym_index(self.cfg.d, i, j)]
                    .iter_mut()
                    .for_each(|x| *x = val);
            }
        }
        self.refresh_spectra();
        self.reset_histories();
    }

    fn refresh_spectra(&mut self) {
        self.hat_c = self.grid.forward(&self.c);
        self.grid.dealias(&mut self.hat_c);
        for j in 0..self.nc {
            self.hat_d[j] = self.grid.forward(&self.d_comp[j]);
            self.grid.dealias(&mut self.hat_d[j]);
        }
        // Physical mirrors re-derived from the dealiased spectra so state
        // and mirror agree exactly.
        self.c = self.grid.inverse(&self.hat_c);
        for j in 0..self.nc {
            self.d_comp[j] = self.grid.inverse(&self.hat_d[j]);
        }
    }

    fn reset_histories(&mut self) {
        self.prev_hat_c = None;
        self.prev_hat_d = None;
        self.prev_nc = None;
        self.prev_nd = None;
        self.e_hist = (None, None);
        self.t = 0.0;
        self.steps = 0;
        for g in self.u.iter_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        for g in self.hat_u.iter_mut() {
            g.iter_mut().for_each(|x| *x = Complex64::default());
        }
    }

    /// Lowest lattice wavevectors of the initialization, in the canonical
    /// half-space (first nonzero component positive), sorted by (|m|², lex).
    fn lowest_modes(d: usize, count: usize) -> Vec<[i64; 3]> {
        let r = 4i64;
        let mut modes: Vec<[i64; 3]> = Vec::new();
        let zrange = if d == 3 { -r..=r } else { 0..=0 };
        for x in -r..=r {
            for y in -r..=r {
                for z in zrange.clone() {
                    let m = [x, y, z];
                    if m == [0, 0, 0] {
                        continue;
                    }
                    let first = m.iter().find(|&&v| v != 0).copied().unwrap();
                    if first < 0 {
                        continue;
                    }
                    modes.push(m);
                }
            }
        }
        modes.sort_by_key(|m| (m.iter().map(|v| v * v).sum::<i64>(), *m));
        modes.truncate(count);
        modes
    }

    /// Smallest eigenvalue of a symmetric tensor (any trace), used by the
    /// initialization feasibility check.
    fn min_eig(p: &SymTensor) -> f64 {
        let d = p.d();
        let shift = p.trace() / d as f64;
        let dev = p.deviatoric();
        let maxabs = dev.entries().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if maxabs == 0.0 {
            return shift;
        }
        // Shift/scale the trace-free part into a unit-trace tensor the
        // eigensolvers accept: Q = I/d + τP has eigenvalues 1/d + τλ.
        let tau = 1.0 / (3.0 * (d as f64) * maxabs);
        let mut q = dev.scaled(tau);
        for i in 0..d {
            q.set(i, i, q.get(i, i) + 1.0 / d as f64);
        }
        let f = eigen_frame(&q).expect("shifted tensor is valid by construction");
        shift + (f.mus[d - 1] - 1.0 / d as f64) / tau
    }

    /// Applies D = I/d + ε Σ A_k cos(k·x + φ_k), c ≡ 1, resetting time and
    /// histories. Each (A_k, φ_k) must have A_k symmetric trace-free.
    fn init_with_modes(&mut self, terms: &[([i64; 3], SymTensor, f64)], eps: f64) -> Result<()> {
        let d = self.cfg.d;
        let n = self.cfg.n;
        let len = self.grid.len;
        for (_, a, _) in terms {
            if a.d() != d || a.trace().abs() > 1e-14 {
                return Err(Error::Domain {
                    what: "init",
                    detail: "perturbation tensors must be trace-free and match the dimension"
                        .into(),
                });
            }
        }
        // Perturbation P(x) componentwise.
        let mut pert = vec![vec![0.0f64; len]; self.nc];
        let two_pi = 2.0 * std::f64::consts::PI;
        for idx in 0..len {
            let coords: Vec<usize> = (0..d).map(|a| (idx / self.grid.stride[a]) % n).collect();
            for (m, a, phi) in terms {
                let mut phase = *phi;
                for (ax, &ci) in coords.iter().enumerate() {
                    phase += two_pi * (m[ax] as f64) * (ci as f64) / (n as f64);
                }
                let cosv = phase.cos();
                for i in 0..d {
                    for j in i..d {
                        pert[sym_index(d, i, j)][idx] += a.get(i, j) * cosv;
                    }
                }
            }
        }
        // Feasibility: eigenvalues of I/d + εP(x) are 1/d + ε·eig(P(x))
        // pointwise, so the exact amplitude bound is (1/d)/max(−λ_min).
        let mut worst = 0.0f64;
        for idx in 0..len {
            let mut p = SymTensor::zero(d);
            for i in 0..d {
                for j in i..d {
                    p.set(i, j, pert[sym_index(d, i, j)][idx]);
                }
            }
            worst = worst.max(-Self::min_eig(&p));
        }
        if worst > 0.0 {
            let eps_max = (1.0 / d as f64) / worst;
            if eps >= eps_max {
                return Err(Error::Infeasible(format!(
                    "perturbation amplitude eps = {eps} leaves the feasible set; \
                     maximum feasible amplitude is {eps_max:.6e}"
                )));
            }
        }
        for v in &mut self.c {
            *v = 1.0;
        }
        for i in 0..d {
            for j in i..d {
                let ci = sym_index(d, i, j);
                let base = if i == j { 1.0 / d as f64 } else { 0.0 };
                for idx in 0..len {
                    self.d_comp[ci][idx] = base + eps * pert[ci][idx];
                }
            }
        }
        self.refresh_spectra();
        self.reset_histories();
        Ok(())
    }

    /// Seeded default initialization: the lowest `modes` lattice wavevectors
    /// with random trace-free symmetric amplitude tensors and phases.
    ///
    /// # Errors
    /// `Error::Infeasible` when `eps` pushes any grid point out of the
    /// feasible eigenvalue set (the message lists the maximum feasible
    /// amplitude).
    pub fn init_planewave(&mut self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let d = self.cfg.d;
        let mut terms = Vec::new();
        for m in Self::lowest_modes(d, self.cfg.modes) {
            let mut a = SymTensor::zero(d);
            if d == 2 {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                a.set(0, 0, x);
                a.set(1, 1, -x);
                a.set(0, 1, b);
            } else {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let y: f64 = rng.gen_range(-1.0..1.0);
                a.set(0, 0, x);
                a.set(1, 1, y);
                a.set(2, 2, -x - y);
                a.set(0, 1, rng.gen_range(-1.0..1.0));
                a.set(0, 2, rng.gen_range(-1.0..1.0));
                a.set(1, 2, rng.gen_range(-1.0..1.0));
            }
            let phi: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            terms.push((m, a, phi));
        }
        self.init_with_modes(&terms, self.cfg.eps)
    }

    /// Single-mode initialization (phase 0) for analytic tests.
    ///
    /// # Errors
    /// Same feasibility check as [`Simulator::init_planewave`].
    pub fn init_single_mode(&mut self, k_lat: [i64; 3], amp: &SymTensor, eps: f64) -> Result<()> {
        self.init_with_modes(&[(k_lat, amp.clone(), 0.0)], eps)
    }

    /// Restores state from a snapshot (config must agree on d, n, L).
    ///
    /// # Errors
    /// Dimension/grid/box mismatch with the config.
    pub fn load_snapshot(&mut self, snap: &SnapshotData) -> Result<()> {
        if snap.d != self.cfg.d || snap.n != self.cfg.n {
            return Err(Error::Format(format!(
                "snapshot is d={}, n={} but the config is d={}, n={}",
                snap.d, snap.n, self.cfg.d, self.cfg.n
            )));
        }
        if (snap.l - self.cfg.l).abs() > 1e-12 * self.cfg.l.abs() {
            return Err(Error::Format(format!(
                "snapshot box L={} differs from config L={}",
                snap.l, self.cfg.l
            )));
        }
        self.c = snap.c.clone();
        self.d_comp = snap.d_comp.clone();
        self.refresh_spectra();
        self.reset_histories();
        self.t = snap.t;
        Ok(())
    }

    /// Current state as snapshot data.
    pub fn snapshot(&self) -> SnapshotData {
        SnapshotData {
            d: self.cfg.d,
            n: self.cfg.n,
            l: self.cfg.l,
            t: self.t,
            dt: self.cfg.dt,
            c: self.c.clone(),
            d_comp: self.d_comp.clone(),
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn concentration(&self) -> &[f64] {
        &self.c
    }

    /// Physical D component in upper-triangle packing order.
    pub fn d_component(&self, idx: usize) -> &[f64] {
        &self.d_comp[idx]
    }

    /// Velocity component from the most recent flow solve.
    pub fn velocity(&self, axis: usize) -> &[f64] {
        &self.u[axis]
    }

    /// Velocity spectrum from the most recent flow solve.
    pub fn velocity_hat(&self) -> &[Vec<Complex64>] {
        &self.hat_u
    }

    /// Spectral coefficient of one D component at a lattice wavevector.
    pub fn d_hat_at(&self, comp: usize, k_lat: [i64; 3]) -> Complex64 {
        let n = self.cfg.n as i64;
        let mut idx = 0usize;
        for a in 0..self.cfg.d {
            let m = k_lat[a].rem_euclid(n) as usize;
            idx += m * self.grid.stride[a];
        }
        self.hat_d[comp][idx]
    }

    /// Largest imaginary residue left by inverse-transforming the current
    /// spectral state (a reality/Hermitian-symmetry health check).
    pub fn reality_residue(&self) -> f64 {
        let mut worst = self.grid.inverse_with_residue(&self.hat_c).1;
        for j in 0..self.nc {
            worst = worst.max(self.grid.inverse_with_residue(&self.hat_d[j]).1);
        }
        worst
    }

    // -- step pipeline ------------------------------------------------------

    /// Closure pass: eigenframe + completed diagonal fourth moment per point.
    /// Returns the number of points whose eigenvalues needed projection.
    fn update_closure_points(&mut self) -> Result<usize> {
        let d = self.cfg.d;
        let nc = self.nc;
        let map = &self.map;
        let c = &self.c;
        let d_comp = &self.d_comp;
        let pts = &mut self.closure_pt;
        let work = |start: usize, chunk: &mut [PointClosure]| -> Result<usize> {
            let mut clamped = 0usize;
            for (off, slot) in chunk.iter_mut().enumerate() {
                let idx = start + off;
                let mut dt = SymTensor::zero(d);
                for i in 0..d {
                    for j in i..d {
                        dt.set(i, j, d_comp[sym_index(d, i, j)][idx]);
                    }
                }
                let (frame, s) = closure_moments(&dt, c[idx], map).map_err(|e| {
                    Error::Numerical(format!("closure failed at grid point {idx}: {e}"))
                })?;
                // Raw eigenvalues outside the feasible set (yet within the
                // projection tolerance) count as clamped.
                let feasible = if d == 2 {
                    frame.mus[0] <= 1.0 && frame.mus[1] >= 0.0
                } else {
                    frame.mus[2] >= 0.0 && frame.mus[0] <= 1.0
                };
                if !feasible {
                    clamped += 1;
                }
                *slot = PointClosure { frame, s };
            }
            Ok(clamped)
        };
        let chunk = 2048usize.max(nc);
        #[cfg(feature = "parallel")]
        {
            pts.par_chunks_mut(chunk)
                .enumerate()
                .map(|(ci, slice)| work(ci * chunk, slice))
                .try_reduce(|| 0usize, |a, b| Ok(a + b))
        }
        #[cfg(not(feature = "parallel"))]
        {
            let mut total = 0usize;
            for (ci, slice) in pts.chunks_mut(chunk).enumerate() {
                total += work(ci * chunk, slice)?;
            }
            Ok(total)
        }
    }

    /// Gathers the SymTensor at one grid point from component grids.
    #[inline]
    fn gather(&self, comps: &[Vec<f64>], idx: usize) -> SymTensor {
        let d = self.cfg.d;
        let mut t = SymTensor::zero(d);
        for i in 0..d {
            for j in i..d {
                t.set(i, j, comps[sym_index(d, i, j)][idx]);
            }
        }
        t
    }

    /// Assembles Σ = αD + β·c·(S̃:T) − 2ζβ D·D with T = E_used + 2ζD and
    /// solves the Stokes flow it forces.
    fn flow_from_strain(&self, e_used: &[Vec<f64>]) -> Flow {
        let cfg = &self.cfg;
        let d = cfg.d;
        let len = self.grid.len;
        let nc = self.nc;
        // Stress, points-major.
        let mut stress = vec![0.0f64; len * nc];
        let pts = &self.closure_pt;
        let assemble = |idx: usize, out: &mut [f64]| {
            let dt = self.gather(&self.d_comp, idx);
            let et = self.gather(e_used, idx);
            let pc = &pts[idx];
            let t = &et + &dt.scaled(2.0 * cfg.zeta);
            let sdot = contract_rotate(&pc.frame, &pc.s, &t).scaled(self.c[idx]);
            let dd = dt.square();
            for i in 0..d {
                for j in i..d {
                    out[sym_index(d, i, j)] = cfg.alpha * dt.get(i, j)
                        + cfg.beta * sdot.get(i, j)
                        - 2.0 * cfg.zeta * cfg.beta * dd.get(i, j);
                }
            }
        };
        #[cfg(feature = "parallel")]
        stress
            .par_chunks_mut(nc)
            .with_min_len(2048)
            .enumerate()
            .for_each(|(idx, out)| assemble(idx, out));
        #[cfg(not(feature = "parallel"))]
        stress
            .chunks_mut(nc)
            .enumerate()
            .for_each(|(idx, out)| assemble(idx, out));

        // Transform and dealias the stress components.
        let hat_sigma: Vec<Vec<Complex64>> = (0..nc)
            .map(|j| {
                let mut s = self.grid.forward_strided(&stress, nc, j);
                self.grid.dealias(&mut s);
                s
            })
            .collect();

        // Stokes projection: û = (I − k̂k̂ᵀ)(i k·Σ̂)/|k|², û(0) = 0.
        let f = 2.0 * std::f64::consts::PI / cfg.l;
        let mut hat_u = vec![vec![Complex64::default(); len]; d];
        let mut max_div = 0.0f64;
        for idx in 1..len {
            let k: Vec<f64> = (0..d).map(|a| self.grid.k_axis(idx, a) as f64 * f).collect();
            let k2: f64 = k.iter().map(|v| v * v).sum();
            if k2 == 0.0 {
                continue;
            }
            let i = Complex64::new(0.0, 1.0);
            let fvec: Vec<Complex64> = (0..d)
                .map(|j| {
                    let mut s = Complex64::default();
                    for a in 0..d {
                        s += hat_sigma[sym_index(d, a, j)][idx] * k[a];
                    }
                    s * i
                })
                .collect();
            let kdotf: Complex64 = (0..d).map(|a| fvec[a] * k[a]).sum();
            let mut div = Complex64::default();
            for j in 0..d {
                let val = (fvec[j] - kdotf * (k[j] / k2)) / k2;
                hat_u[j][idx] = val;
                div += val * k[j];
            }
            max_div = max_div.max(div.norm());
        }

        // Physical velocity and gradient, rate of strain.
        let u: Vec<Vec<f64>> = hat_u.iter().map(|h| self.grid.inverse(h)).collect();
        let max_u = u
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let mut grad_u = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                grad_u.push(self.grid.inverse(&self.grid.deriv(&hat_u[i], j)));
            }
        }
        let mut e = vec![vec![0.0f64; len]; nc];
        for i in 0..d {
            for j in i..d {
                let ci = sym_index(d, i, j);
                let gij = &grad_u[i * d + j];
                let gji = &grad_u[j * d + i];
                for idx in 0..len {
                    e[ci][idx] = 0.5 * (gij[idx] + gji[idx]);
                }
            }
        }
        Flow {
            hat_u,
            u,
            grad_u,
            e,
            max_u,
            max_div,
        }
    }

    /// Strain-rate field used by the stress this step, plus the fixed-point
    /// iteration count when that path ran.
    fn strain_for_stress(&self) -> Result<(Vec<Vec<f64>>, Option<usize>)> {
        let len = self.grid.len;
        let fixed_point = self.cfg.stress_mode == StressMode::Iterate || self.e_hist.0.is_none();
        if !fixed_point {
            let e1 = self.e_hist.0.as_ref().unwrap();
            let e_star = match &self.e_hist.1 {
                Some(e2) => (0..self.nc)
                    .map(|j| {
                        (0..len)
                            .map(|i| 2.0 * e1[j][i] - e2[j][i])
                            .collect::<Vec<f64>>()
                    })
                    .collect(),
                None => e1.clone(),
            };
            return Ok((e_star, None));
        }
        // Fixed point: E ↦ sym ∇ u(Σ(E)), contraction rate ≈ β.
        let mut e = match &self.e_hist.0 {
            Some(prev) => prev.clone(),
            None => vec![vec![0.0f64; len]; self.nc],
        };
        let mut iters = 0usize;
        for k in 0..200 {
            iters = k + 1;
            let flow = self.flow_from_strain(&e);
            let mut diff = 0.0f64;
            let mut scale = 1.0f64;
            for j in 0..self.nc {
                for i in 0..len {
                    diff = diff.max((flow.e[j][i] - e[j][i]).abs());
                    scale = scale.max(flow.e[j][i].abs());
                }
            }
            e = flow.e;
            if diff <= 1e-12 * scale {
                return Ok((e, Some(iters)));
            }
        }
        Err(Error::NonConvergence {
            what: "stress/flow fixed point",
            iterations: iters,
            residual: f64::NAN,
        })
    }

    /// Explicit tendencies N_D (per component) and N_c, dealiased spectra.
    fn rhs_hat(&self, flow: &Flow) -> (Vec<Vec<Complex64>>, Vec<Complex64>) {
        let cfg = &self.cfg;
        let d = cfg.d;
        let nc = self.nc;
        let len = self.grid.len;

        // Spectral gradients of c and D.
        let grad_c: Vec<Vec<f64>> = (0..d)
            .map(|a| self.grid.inverse(&self.grid.deriv(&self.hat_c, a)))
            .collect();
        let grad_d: Vec<Vec<Vec<f64>>> = (0..nc)
            .map(|j| {
                (0..d)
                    .map(|a| self.grid.inverse(&self.grid.deriv(&self.hat_d[j], a)))
                    .collect()
            })
            .collect();

        let mut nd = vec![0.0f64; len * nc];
        let mut ncon = vec![0.0f64; len];
        let pts = &self.closure_pt;
        {
            let assemble = |idx: usize, out_d: &mut [f64], out_c: &mut f64| {
                let dt = self.gather(&self.d_comp, idx);
                let et = self.gather(&flow.e, idx);
                let pc = &pts[idx];
                let t = &et + &dt.scaled(2.0 * cfg.zeta);
                let sdot = contract_rotate(&pc.frame, &pc.s, &t).scaled(self.c[idx]);
                let dd = dt.square();
                for i in 0..d {
                    for j in i..d {
                        let ci = sym_index(d, i, j);
                        // Advection −u·∇D.
                        let mut adv = 0.0;
                        for a in 0..d {
                            adv += flow.u[a][idx] * grad_d[ci][a][idx];
                        }
                        // Stretching ∇u·D + D·∇uᵀ.
                        let mut stretch = 0.0;
                        for k in 0..d {
                            stretch += flow.grad_u[i * d + k][idx] * dt.get(k, j)
                                + dt.get(i, k) * flow.grad_u[j * d + k][idx];
                        }
                        let relax = if i == j { 2.0 * cfg.d_r * self.c[idx] } else { 0.0 };
                        out_d[ci] = -adv + stretch - 2.0 * sdot.get(i, j)
                            + 4.0 * cfg.zeta * dd.get(i, j)
                            + relax;
                    }
                }
                let mut adv_c = 0.0;
                for a in 0..d {
                    adv_c += flow.u[a][idx] * grad_c[a][idx];
                }
                *out_c = -adv_c;
            };
            #[cfg(feature = "parallel")]
            nd.par_chunks_mut(nc)
                .zip(ncon.par_iter_mut())
                .with_min_len(2048)
                .enumerate()
                .for_each(|(idx, (out_d, out_c))| assemble(idx, out_d, out_c));
            #[cfg(not(feature = "parallel"))]
            nd.chunks_mut(nc)
                .zip(ncon.iter_mut())
                .enumerate()
                .for_each(|(idx, (out_d, out_c))| assemble(idx, out_d, out_c));
        }

        let nd_hat: Vec<Vec<Complex64>> = (0..nc)
            .map(|j| {
                let mut h = self.grid.forward_strided(&nd, nc, j);
                self.grid.dealias(&mut h);
                h
            })
            .collect();
        let mut nc_hat = self.grid.forward(&ncon);
        self.grid.dealias(&mut nc_hat);
        (nd_hat, nc_hat)
    }

    /// Advances one time step (IMEX Euler on the first step, SBDF2 after).
    ///
    /// # Errors
    /// Closure infeasibility beyond the projection tolerance, fixed-point
    /// non-convergence, or non-finite fields (the latter writes a diagnostic
    /// snapshot of the last valid state into `out_dir`).
    pub fn step(&mut self) -> Result<StepReport> {
        let cfg = self.cfg.clone();
        let d = cfg.d as f64;
        let len = self.grid.len;

        let clamped = self.update_closure_points()?;
        let (e_used, fp_iters) = self.strain_for_stress()?;
        let flow = self.flow_from_strain(&e_used);
        let (nd_hat, nc_hat) = self.rhs_hat(&flow);

        // Semi-implicit update, diagonal per Fourier mode.
        let first = self.prev_nd.is_none();
        let dt = cfg.dt;
        let mut new_hat_d = vec![vec![Complex64::default(); len]; self.nc];
        let mut new_hat_c = vec![Complex64::default(); len];
        for idx in 0..len {
            let k2 = self.grid.k2(idx);
            let lam_d = cfg.d_t * k2 + 2.0 * d * cfg.d_r;
            let lam_c = cfg.d_t * k2;
            if first {
                for j in 0..self.nc {
                    new_hat_d[j][idx] =
                        (self.hat_d[j][idx] + nd_hat[j][idx] * dt) / (1.0 + dt * lam_d);
                }
                new_hat_c[idx] = (self.hat_c[idx] + nc_hat[idx] * dt) / (1.0 + dt * lam_c);
            } else {
                let pd = self.prev_hat_d.as_ref().unwrap();
                let pnd = self.prev_nd.as_ref().unwrap();
                let pc = self.prev_hat_c.as_ref().unwrap();
                let pnc = self.prev_nc.as_ref().unwrap();
                for j in 0..self.nc {
                    let num = self.hat_d[j][idx] * 4.0 - pd[j][idx]
                        + (nd_hat[j][idx] * 2.0 - pnd[j][idx]) * (2.0 * dt);
                    new_hat_d[j][idx] = num / (3.0 + 2.0 * dt * lam_d);
                }
                let num = self.hat_c[idx] * 4.0 - pc[idx]
                    + (nc_hat[idx] * 2.0 - pnc[idx]) * (2.0 * dt);
                new_hat_c[idx] = num / (3.0 + 2.0 * dt * lam_c);
            }
        }

        // Non-finite check before committing.
        let finite = new_hat_c.iter().all(|v| v.re.is_finite() && v.im.is_finite())
            && new_hat_d
                .iter()
                .all(|g| g.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        if !finite {
            let path = cfg.out_dir.join("nan-abort.snap");
            let _ = write_snapshot(&path, &self.snapshot());
            return Err(Error::Numerical(format!(
                "non-finite field after step {} (t = {}); last valid state written to {}",
                self.steps + 1,
                self.t + dt,
                path.display()
            )));
        }

        // Commit: histories, state, physical mirrors.
        self.prev_hat_d = Some(std::mem::replace(&mut self.hat_d, new_hat_d));
        self.prev_hat_c = Some(std::mem::replace(&mut self.hat_c, new_hat_c));
        self.prev_nd = Some(nd_hat);
        self.prev_nc = Some(nc_hat);
        self.e_hist = (Some(flow.e.clone()), self.e_hist.0.take());
        self.u = flow.u;
        self.hat_u = flow.hat_u;
        self.c = self.grid.inverse(&self.hat_c);
        for j in 0..self.nc {
            self.d_comp[j] = self.grid.inverse(&self.hat_d[j]);
        }
        self.steps += 1;
        self.t += dt;

        let mut drift = 0.0f64;
        for idx in 0..len {
            let mut tr = 0.0;
            for i in 0..cfg.d {
                tr += self.d_comp[sym_index(cfg.d, i, i)][idx];
            }
            drift = drift.max((tr - self.c[idx]).abs());
        }
        let cfl = flow.max_u * dt / (cfg.l / cfg.n as f64);
        Ok(StepReport {
            t: self.t,
            max_u: flow.max_u,
            cfl,
            cfl_warning: cfl > 1.0,
            max_divergence: flow.max_div,
            max_trace_drift: drift,
            clamped_points: clamped,
            fixed_point_iters: fp_iters,
        })
    }

    /// Solves the stress/flow fixed point at the current state without
    /// stepping, populating the velocity fields (used for diagnostics on
    /// freshly loaded snapshots and at t = 0).
    ///
    /// # Errors
    /// Closure or fixed-point failures as in [`Simulator::step`].
    pub fn recompute_velocity(&mut self) -> Result<usize> {
        self.update_closure_points()?;
        let save_mode = self.cfg.stress_mode;
        let save_hist = self.e_hist.clone();
        self.cfg.stress_mode = StressMode::Iterate;
        self.e_hist = (None, None);
        let result = self.strain_for_stress();
        self.cfg.stress_mode = save_mode;
        self.e_hist = save_hist;
        let (e, iters) = result?;
        let flow = self.flow_from_strain(&e);
        self.u = flow.u;
        self.hat_u = flow.hat_u;
        Ok(iters.unwrap_or(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chebmap::fit_map_2d;
    use std::sync::OnceLock;

    fn planar_map() -> ChebMap {
        static COEFFS: OnceLock<ChebMap> = OnceLock::new();
        COEFFS
            .get_or_init(|| ChebMap::Planar(fit_map_2d(32).unwrap()))
            .clone()
    }

    fn decay_config(n: usize) -> SimConfig {
        SimConfig {
            d: 2,
            n,
            l: 15.0,
            dt: 2.5e-3,
            alpha: 0.0,
            beta: 0.0,
            zeta: 0.0,
            d_t: 0.1,
            d_r: 0.1,
            m: 32,
            eps: 1e-2,
            modes: 1,
            seed: 7,
            t_end: 1.0,
            output_every: 0,
            stress_mode: StressMode::Extrapolate,
            out_dir: std::env::temp_dir(),
        }
    }

    #[test]
    fn transforms_round_trip_and_differentiate() {
        for (d, n) in [(2usize, 16usize), (3, 8)] {
            let grid = SpectralGrid::new(d, n, 2.0 * std::f64::consts::PI);
            let len = grid.len;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let field: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let back = grid.inverse(&grid.forward(&field));
            for (a, b) in field.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-13);
            }
        }
        // Derivative of cos(m·x) along each axis with L = 2π: −m sin(m·x).
        let n = 16;
        let grid = SpectralGrid::new(2, n, 2.0 * std::f64::consts::PI);
        let m = 3.0;
        let field: Vec<f64> = (0..grid.len)
            .map(|idx| {
                let x = (idx / n) as f64 * 2.0 * std::f64::consts::PI / n as f64;
                (m * x).cos()
            })
            .collect();
        let dx = grid.inverse(&grid.deriv(&grid.forward(&field), 0));
        for idx in 0..grid.len {
            let x = (idx / n) as f64 * 2.0 * std::f64::consts::PI / n as f64;
            assert!((dx[idx] + m * (m * x).sin()).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_matches_naive_dft() {
        for (d, n) in [(2usize, 8usize), (3, 4)] {
            let grid = SpectralGrid::new(d, n, 1.0);
            let len = grid.len;
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let field: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let spec = grid.forward(&field);
            // Naive O(N²) DFT: f̂(k) = (1/N) Σ_x f(x) e^{−2πi k·x/n}.
            for kidx in 0..len {
                let kv: Vec<usize> = (0..d).map(|a| (kidx / grid.stride[a]) % n).collect();
                let mut acc = Complex64::default();
                for (xidx, &f) in field.iter().enumerate() {
                    let mut phase = 0.0;
                    for (a, &k) in kv.iter().enumerate() {
                        let x = (xidx / grid.stride[a]) % n;
                        phase -= 2.0 * std::f64::consts::PI * (k * x % n) as f64 / n as f64;
                    }
                    acc += Complex64::new(phase.cos(), phase.sin()) * f;
                }
                acc /= len as f64;
                assert!(
                    (spec[kidx] - acc).norm() <= 1e-12,
                    "d={d} mode {kv:?}: {} vs oracle {}",
                    spec[kidx],
                    acc
                );
            }
        }
    }

    #[test]
    fn dealiasing_removes_product_alias_images() {
        // Two in-band modes at k = 10 on n = 32 (Nyquist 16, keep |k| <= 10):
        // their product holds k = 0 and k = ±20; the ±20 content aliases onto
        // ∓12, inside the resolved band but outside the 2/3-rule band, so
        // dealiasing the product removes exactly the spurious content.
        let n = 32;
        let grid = SpectralGrid::new(2, n, 1.0);
        let field: Vec<f64> = (0..grid.len)
            .map(|idx| {
                let theta = 2.0 * std::f64::consts::PI * (idx / n) as f64 / n as f64;
                (10.0 * theta).cos()
            })
            .collect();
        let product: Vec<f64> = field.iter().map(|v| v * v).collect();
        let mut spec = grid.forward(&product);
        // Alias image at lattice (−12, 0) carries the k = 20 amplitude 1/4.
        let alias_idx = (n - 12) * grid.stride[0];
        assert!((spec[alias_idx].re - 0.25).abs() <= 1e-12);
        grid.dealias(&mut spec);
        assert_eq!(spec[alias_idx], Complex64::default());
        // Only the true constant survives.
        assert!((spec[0].re - 0.5).abs() <= 1e-12);
        let spurious = spec
            .iter()
            .enumerate()
            .filter(|(i, v)| *i != 0 && v.norm() > 1e-12)
            .count();
        assert_eq!(spurious, 0);
    }

    #[test]
    fn dealias_keeps_expected_mode_count() {
        let n = 16;
        let grid = SpectralGrid::new(2, n, 1.0);
        let mut spec: Vec<Complex64> = (0..grid.len)
            .map(|i| Complex64::new(1.0 + i as f64, -0.5))
            .collect();
        grid.dealias(&mut spec);
        let kept = spec.iter().filter(|v| v.norm() > 0.0).count();
        let per_axis = 2 * (n / 3) + 1;
        assert_eq!(kept, per_axis * per_axis);
        // Idempotent (bit-exact) on an already band-limited spectrum.
        let copy = spec.clone();
        grid.dealias(&mut spec);
        assert!(spec
            .iter()
            .zip(&copy)
            .all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()));
    }

    #[test]
    fn stokes_satisfies_momentum_and_incompressibility() {
        let cfg = SimConfig {
            d: 2,
            n: 16,
            ..decay_config(16)
        };
        let sim = Simulator::new(cfg, planar_map()).unwrap();
        // Random band-limited stress in physical space via random D-like
        // fields: reuse flow_from_strain with random d_comp directly.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let len = sim.grid.len;
        // Random symmetric stress spectrum built from random real fields.
        let fields: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let hat_sigma: Vec<Vec<Complex64>> = fields
            .iter()
            .map(|f| {
                let mut h = sim.grid.forward(f);
                sim.grid.dealias(&mut h);
                h
            })
            .collect();
        // Direct projection (same code path as flow_from_strain's solve).
        let f = 2.0 * std::f64::consts::PI / sim.cfg.l;
        for idx in 1..len {
            let k: Vec<f64> = (0..2).map(|a| sim.grid.k_axis(idx, a) as f64 * f).collect();
            let k2: f64 = k.iter().map(|v| v * v).sum();
            if k2 == 0.0 {
                continue;
            }
            let i = Complex64::new(0.0, 1.0);
            let fvec: Vec<Complex64> = (0..2)
                .map(|j| {
                    let mut s = Complex64::default();
                    for a in 0..2 {
                        s += hat_sigma[sym_index(2, a, j)][idx] * k[a];
                    }
                    s * i
                })
                .collect();
            let kdotf: Complex64 = (0..2).map(|a| fvec[a] * k[a]).sum();
            let u: Vec<Complex64> = (0..2)
                .map(|j| (fvec[j] - kdotf * (k[j] / k2)) / k2)
                .collect();
            // Momentum residual |k|²û + ik q̂ − F with q̂ reconstructed.
            let q = -Complex64::new(0.0, 1.0) * kdotf / k2;
            for j in 0..2 {
                let resid = u[j] * k2 + Complex64::new(0.0, 1.0) * k[j] * q - fvec[j];
                assert!(resid.norm() <= 1e-12 * (1.0 + fvec[j].norm()));
            }
            let div: Complex64 = (0..2).map(|j| u[j] * k[j]).sum();
            assert!(div.norm() <= 1e-12);
        }
        // Gradient forcing (Σ̂ ∝ kkᵀ at a single mode) is annihilated.
        let cfgb = decay_config(16);
        let simb = Simulator::new(cfgb, planar_map()).unwrap();
        let mut sigma: Vec<Vec<Complex64>> = vec![vec![Complex64::default(); simb.grid.len]; 3];
        let idx = simb.grid.stride[0] * 2 + simb.grid.stride[1] * 3; // k = (2, 3)
        let kv = [2.0 * f, 3.0 * f];
        sigma[0][idx] = Complex64::new(kv[0] * kv[0], 0.0);
        sigma[1][idx] = Complex64::new(kv[0] * kv[1], 0.0);
        sigma[2][idx] = Complex64::new(kv[1] * kv[1], 0.0);
        let k2 = kv[0] * kv[0] + kv[1] * kv[1];
        let i = Complex64::new(0.0, 1.0);
        let fvec: Vec<Complex64> = (0..2)
            .map(|j| {
                let mut s = Complex64::default();
                for a in 0..2 {
                    s += sigma[sym_index(2, a, j)][idx] * kv[a];
                }
                s * i
            })
            .collect();
        let kdotf: Complex64 = (0..2).map(|a| fvec[a] * kv[a]).sum();
        for j in 0..2 {
            let u = (fvec[j] - kdotf * (kv[j] / k2)) / k2;
            assert!(u.norm() <= 1e-14);
        }
    }

    #[test]
    fn uniform_isotropic_state_is_a_fixed_point() {
        let mut cfg = decay_config(16);
        cfg.alpha = -1.0;
        cfg.beta = 0.8;
        cfg.zeta = 1.0;
        cfg.dt = 0.05;
        let mut sim = Simulator::new(cfg, planar_map()).unwrap();
        let c0 = sim.c.clone();
        let d0: Vec<Vec<f64>> = sim.d_comp.clone();
        for _ in 0..100 {
            let rep = sim.step().unwrap();
            assert!(!rep.cfl_warning);
            assert!(rep.max_divergence <= 1e-12);
        }
        for (a, b) in sim.c.iter().zip(&c0) {
            assert!((a - b).abs() <= 1e-13, "c drifted: {a} vs {b}");
        }
        for j in 0..sim.nc {
            for (a, b) in sim.d_comp[j].iter().zip(&d0[j]) {
                assert!((a - b).abs() <= 1e-13, "D[{j}] drifted: {a} vs {b}");
            }
        }
    }

    #[test]
    fn trace_identity_of_full_tendency() {
        // Perturbed state with genuine flow: the trace of the full D
        // tendency must equal the c tendency pointwise.
        let mut cfg = decay_config(16);
        cfg.alpha = -1.0;
        cfg.beta = 0.8;
        cfg.zeta = 1.0;
        cfg.eps = 5e-2;
        cfg.modes = 3;
        cfg.stress_mode = StressMode::Iterate;
        let mut sim = Simulator::new(cfg.clone(), planar_map()).unwrap();
        sim.init_planewave().unwrap();
        sim.update_closure_points().unwrap();
        let (e_used, _) = sim.strain_for_stress().unwrap();
        let flow = sim.flow_from_strain(&e_used);
        let (nd_hat, nc_hat) = sim.rhs_hat(&flow);
        // Implicit parts evaluated at the current state.
        let len = sim.grid.len;
        let d = cfg.d;
        let mut full_d: Vec<Vec<f64>> = (0..sim.nc)
            .map(|j| {
                let spec: Vec<Complex64> = (0..len)
                    .map(|idx| {
                        let lam = cfg.d_t * sim.grid.k2(idx) + 2.0 * d as f64 * cfg.d_r;
                        nd_hat[j][idx] - sim.hat_d[j][idx] * lam
                    })
                    .collect();
                sim.grid.inverse(&spec)
            })
            .collect();
        let full_c: Vec<f64> = {
            let spec: Vec<Complex64> = (0..len)
                .map(|idx| nc_hat[idx] - sim.hat_c[idx] * (cfg.d_t * sim.grid.k2(idx)))
                .collect();
            sim.grid.inverse(&spec)
        };
        for idx in 0..len {
            let mut tr = 0.0;
            for i in 0..d {
                tr += full_d[sym_index(d, i, i)][idx];
            }
            assert!(
                (tr - full_c[idx]).abs() <= 1e-12,
                "trace identity violated at {idx}: {tr} vs {}",
                full_c[idx]
            );
        }
        // Also exercise the drop of the borrow of full_d.
        full_d.clear();
    }

    #[test]
    fn single_mode_init_properties_and_feasibility_error() {
        let cfg = decay_config(16);
        let mut sim = Simulator::new(cfg, planar_map()).unwrap();
        let mut amp = SymTensor::zero(2);
        amp.set(0, 0, 0.6);
        amp.set(1, 1, -0.6);
        amp.set(0, 1, 0.2);
        sim.init_single_mode([1, 0, 0], &amp, 1e-2).unwrap();
        // Trace exactly c = 1 pointwise.
        for idx in 0..sim.grid.len {
            let tr = sim.d_comp[0][idx] + sim.d_comp[2][idx];
            assert!((tr - 1.0).abs() <= 1e-14);
            let p = sim.gather(&sim.d_comp, idx);
            assert!(Simulator::min_eig(&p) > 0.0);
        }
        // Infeasible amplitude errors and names the maximum feasible one.
        let err = sim.init_single_mode([1, 0, 0], &amp, 2.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("maximum feasible amplitude"), "message: {msg}");
        let eps_max: f64 = msg
            .rsplit("is ")
            .next()
            .unwrap()
            .trim()
            .parse()
            .expect("message ends with the amplitude");
        sim.init_single_mode([1, 0, 0], &amp, 0.9 * eps_max).unwrap();
        assert!(sim.init_single_mode([1, 0, 0], &amp, 1.1 * eps_max).is_err());
    }

    #[test]
    fn runs_are_bit_deterministic_for_fixed_seed() {
        let mut cfg = decay_config(16);
        cfg.alpha = -1.0;
        cfg.beta = 0.8;
        cfg.zeta = 1.0;
        cfg.dt = 0.02;
        let run = || {
            let mut sim = Simulator::new(cfg.clone(), planar_map()).unwrap();
            sim.init_planewave().unwrap();
            for _ in 0..5 {
                sim.step().unwrap();
            }
            (sim.c.clone(), sim.d_comp.clone())
        };
        let (c1, d1) = run();
        let (c2, d2) = run();
        assert!(c1.iter().zip(&c2).all(|(a, b)| a.to_bits() == b.to_bits()));
        for (g1, g2) in d1.iter().zip(&d2) {
            assert!(g1.iter().zip(g2).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = decay_config(16);
        cfg.eps = 3e-2;
        let mut sim = Simulator::new(cfg.clone(), planar_map()).unwrap();
        sim.init_planewave().unwrap();
        sim.step().unwrap();
        let dir = std::env::temp_dir().join(format!("bingham-snap-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.snap");
        write_snapshot(&path, &sim.snapshot()).unwrap();
        let snap = read_snapshot(&path).unwrap();
        assert_eq!(snap.d, 2);
        assert_eq!(snap.n, 16);
        assert!((snap.t - sim.t()).abs() < 1e-15);
        assert!(snap
            .c
            .iter()
            .zip(&sim.c)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        for (g, h) in snap.d_comp.iter().zip(&sim.d_comp) {
            assert!(g.iter().zip(h).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        // Load into a fresh simulator and confirm the state matches.
        let mut sim2 = Simulator::new(cfg, planar_map()).unwrap();
        sim2.load_snapshot(&snap).unwrap();
        assert!(sim2
            .c
            .iter()
            .zip(&sim.c)
            .all(|(a, b)| (a - b).abs() <= 1e-13));
        // Corrupted file: truncate.
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(read_snapshot(&path).is_err());
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn config_parses_and_rejects_unknown_keys() {
        let text = "\
# desk config
d = 2
n = 32
L = 15.0   # box
dt = 0.05
alpha = -1.0
beta = 0.8
zeta = 1.0
dT = 0.1
dR = 0.1
M = 20
eps = 0.01
modes = 3
seed = 42
t_end = 5.0
output_every = 10
stress_mode = iterate
";
        let cfg = SimConfig::parse(text).unwrap();
        assert_eq!(cfg.n, 32);
        assert_eq!(cfg.m, 20);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.stress_mode, StressMode::Iterate);
        assert!((cfg.d_t - 0.1).abs() < 1e-15);
        assert!(SimConfig::parse("bogus_key = 1\n").is_err());
        assert!(SimConfig::parse("n = not-a-number\n").is_err());
        assert!(SimConfig::parse("n = 33\n").is_err());
        assert!(SimConfig::parse("d = 4\n").is_err());
    }

    #[test]
    fn nan_in_update_writes_diagnostic_snapshot() {
        let dir = std::env::temp_dir().join(format!("bingham-nan-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let mut cfg = decay_config(16);
        cfg.out_dir = dir.clone();
        let mut sim = Simulator::new(cfg, planar_map()).unwrap();
        // Poison one spectral mode so the update produces non-finite values.
        sim.hat_c[3] = Complex64::new(f64::NAN, 0.0);
        let err = sim.step().unwrap_err();
        assert!(err.is_numerical());
        assert!(dir.join("nan-abort.snap").exists());
        let _ = fs::remove_dir_all(&dir);
    }
}
