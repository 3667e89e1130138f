//! Command-line driver for the closure library: map precomputation, point
//! evaluation, suspension simulation runs, spectrum extraction from
//! snapshots, and closure-degree convergence studies.
//!
//! Exit codes: 0 on success, 1 for usage/format problems, 2 for numerical
//! failures (non-convergence, infeasible states, NaN aborts). All error
//! diagnostics are single lines on stderr.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use bingham::chebmap::{
    eval_map_2d, eval_map_3d, fit_map_2d, fit_map_2d_report, fit_map_3d, fit_map_3d_report,
    load_map, save_map, ChebMap,
};
use bingham::diag::{
    onset_wavenumber, shell_spectrum, vorticity_hat, ShellSpectrum, SpectrumMode, BINNING_NOTE,
    DEFAULT_ONSET_THRESHOLD,
};
use bingham::{Error, Result};
use bingham::frame::{complete_fourth, recover_b};
use bingham::sim::{read_snapshot, write_snapshot, SimConfig, Simulator};
use bingham::solve::TrianglePoint;

#[derive(Parser)]
#[command(
    name = "bingham",
    version,
    about = "Chebyshev-interpolated Bingham closure maps and a pseudo-spectral \
             active-suspension simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the closure map at a given interpolation degree and save it.
    Precompute {
        /// Spatial dimension of the closure (2 or 3).
        #[arg(long, value_parser = clap::value_parser!(u32).range(2..=3))]
        dim: u32,
        /// Interpolation degree M (total degree in 3D).
        #[arg(long)]
        degree: usize,
        /// Output map file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a stored map at one second-moment eigenvalue point and
    /// print the fourth-moment components plus the recovered exponents.
    Eval {
        /// Map file produced by `precompute`.
        #[arg(long)]
        map: PathBuf,
        /// Leading eigenvalue mu1 (2D: in [1/2, 1]; 3D: in [1/3, 1]).
        #[arg(long)]
        mu1: f64,
        /// Middle eigenvalue mu2 (3D maps only).
        #[arg(long)]
        mu2: Option<f64>,
    },
    /// Integrate the coarse-grained suspension model from a seeded
    /// plane-wave perturbation, writing snapshots and spectra on a cadence.
    Run {
        /// Flat `key = value` config file (keys match the config fields).
        #[arg(long)]
        config: PathBuf,
    },
    /// Bin a snapshot's velocity or vorticity spectrum into integer shells
    /// and write it as CSV.
    Spectrum {
        /// Snapshot file written by `run`.
        #[arg(long)]
        snapshot: PathBuf,
        /// Field to transform.
        #[arg(long, value_enum)]
        mode: FieldKind,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Closure map file; fitted on the fly when omitted.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Config file supplying non-header parameters (zeta, beta, ...).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the same seeded simulation at several map degrees and report the
    /// wavenumber where each velocity spectrum diverges from the highest
    /// degree's.
    Convergence {
        /// Flat `key = value` config file (the `M` key is ignored).
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated list of map degrees; the largest is the reference.
        #[arg(long, default_value = "10,20,40,80")]
        degrees: String,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum FieldKind {
    Velocity,
    Vorticity,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        std::process::exit(if err.is_numerical() { 2 } else { 1 });
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Precompute { dim, degree, out } => cmd_precompute(dim, degree, &out),
        Cmd::Eval { map, mu1, mu2 } => cmd_eval(&map, mu1, mu2),
        Cmd::Run { config } => cmd_run(&config),
        Cmd::Spectrum {
            snapshot,
            mode,
            out,
            map,
            config,
        } => cmd_spectrum(&snapshot, mode, &out, map.as_deref(), config.as_deref()),
        Cmd::Convergence { config, degrees } => cmd_convergence(&config, &degrees),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

// --- precompute -------------------------------------------------------------

fn cmd_precompute(dim: u32, degree: usize, out: &Path) -> Result<()> {
    let (map, resid, kind) = match dim {
        2 => {
            let (m, r) = fit_map_2d_report(degree)?;
            (ChebMap::from(m), r, "planar")
        }
        _ => {
            let (m, r) = fit_map_3d_report(degree)?;
            (ChebMap::from(m), r, "spatial")
        }
    };
    save_map(&map, out)?;
    println!(
        "wrote {kind} map of degree {degree} to {}; max node residual {resid:.3e}",
        out.display()
    );
    Ok(())
}

// --- eval -------------------------------------------------------------------

fn cmd_eval(map_path: &Path, mu1: f64, mu2: Option<f64>) -> Result<()> {
    let map = load_map(map_path)?;
    // Eigenvalues, computed fourth-moment entries, and the full set of
    // shifted exponents (smallest is zero by convention).
    let (mus, s, lambdas): (Vec<f64>, _, Vec<f64>) = match (&map, mu2) {
        (ChebMap::Planar(m), None) => {
            let mus = vec![mu1, 1.0 - mu1];
            let s = complete_fourth(&mus, &[eval_map_2d(m, mu1)?])?;
            let params = recover_b(&mus, &s, 1.0)?;
            (mus, s, vec![params.lambdas[0], 0.0])
        }
        (ChebMap::Planar(_), Some(_)) => {
            return Err(Error::Format(
                "--mu2 does not apply to a planar map".into(),
            ))
        }
        (ChebMap::Spatial(_), None) => {
            return Err(Error::Format(
                "--mu2 is required to evaluate a spatial map".into(),
            ))
        }
        (ChebMap::Spatial(m), Some(mu2)) => {
            let p = TrianglePoint::new(mu1, mu2)?;
            let mus = vec![p.mu1(), p.mu2(), p.mu3()];
            let s = complete_fourth(&mus, &eval_map_3d(m, &p))?;
            let params = recover_b(&mus, &s, 1.0)?;
            (mus, s, vec![params.lambdas[0], params.lambdas[1], 0.0])
        }
    };
    let d = mus.len();
    for i in 0..d {
        for j in i..d {
            println!("S{}{}{}{} = {:.12}", i + 1, i + 1, j + 1, j + 1, s.get(i, j));
        }
    }
    for (i, l) in lambdas.iter().enumerate() {
        println!("lambda{} = {l:.12}", i + 1);
    }
    Ok(())
}

// --- run --------------------------------------------------------------------

fn fit_config_map(cfg: &SimConfig) -> Result<ChebMap> {
    Ok(match cfg.d {
        2 => fit_map_2d(cfg.m)?.into(),
        _ => fit_map_3d(cfg.m)?.into(),
    })
}

fn cmd_run(config: &Path) -> Result<()> {
    let cfg = SimConfig::parse(&read_text(config)?)?;
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let map = fit_config_map(&cfg)?;

    let mut sim = Simulator::new(cfg.clone(), map)?;
    sim.init_planewave()?;
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    println!(
        "d={} n={} L={} dt={} M={} steps={steps} out={}",
        cfg.d,
        cfg.n,
        cfg.l,
        cfg.dt,
        cfg.m,
        cfg.out_dir.display()
    );

    if cfg.output_every > 0 {
        write_outputs(&sim, &cfg.out_dir, 0)?;
    }
    let mut cfl_warned = false;
    for i in 1..=steps {
        let rep = sim.step()?;
        if rep.cfl_warning && !cfl_warned {
            eprintln!(
                "warning: CFL number {:.2} exceeds 1 at t={:.4}; results may be inaccurate",
                rep.cfl, rep.t
            );
            cfl_warned = true;
        }
        if cfg.output_every > 0 && i % cfg.output_every == 0 {
            let (snap_name, spec_name) = write_outputs(&sim, &cfg.out_dir, i)?;
            println!(
                "step {i} t={:.4} max|u|={:.3e} cfl={:.2} div={:.1e} drift={:.1e} -> {snap_name}, {spec_name}",
                rep.t, rep.max_u, rep.cfl, rep.max_divergence, rep.max_trace_drift
            );
        }
    }
    let final_path = cfg.out_dir.join("final.snap");
    write_snapshot(&final_path, &sim.snapshot())?;
    println!(
        "completed {steps} steps to t={:.4}; wrote {}",
        sim.t(),
        final_path.display()
    );
    Ok(())
}

/// Writes the cadence snapshot and velocity spectrum for the current state;
/// returns the two file names.
fn write_outputs(sim: &Simulator, out_dir: &Path, step: usize) -> Result<(String, String)> {
    let snap_name = format!("snap-{step:06}.snap");
    let spec_name = format!("spec-{step:06}.csv");
    write_snapshot(&out_dir.join(&snap_name), &sim.snapshot())?;
    let spec = velocity_spectrum(sim)?;
    let meta = spectrum_metadata(&spec, "velocity", sim.t(), None);
    write_spectrum_csv(&out_dir.join(&spec_name), &spec, &meta)?;
    Ok((snap_name, spec_name))
}

fn velocity_spectrum(sim: &Simulator) -> Result<ShellSpectrum> {
    let comps: Vec<&[_]> = sim.velocity_hat().iter().map(|c| c.as_slice()).collect();
    shell_spectrum(&comps, sim.config().d, sim.config().n, SpectrumMode::Mean)
}

// --- spectrum ---------------------------------------------------------------

fn cmd_spectrum(
    snapshot: &Path,
    mode: FieldKind,
    out: &Path,
    map_path: Option<&Path>,
    config: Option<&Path>,
) -> Result<()> {
    let snap = read_snapshot(snapshot)?;
    let mut cfg = match config {
        Some(p) => SimConfig::parse(&read_text(p)?)?,
        None => SimConfig::default(),
    };
    cfg.d = snap.d;
    cfg.n = snap.n;
    cfg.l = snap.l;
    cfg.dt = snap.dt;
    cfg.validate()?;
    let map = match map_path {
        Some(p) => load_map(p)?,
        None => fit_config_map(&cfg)?,
    };

    let mut sim = Simulator::new(cfg, map)?;
    sim.load_snapshot(&snap)?;
    let iters = sim.recompute_velocity()?;
    let (spec, label) = match mode {
        FieldKind::Velocity => (velocity_spectrum(&sim)?, "velocity"),
        FieldKind::Vorticity => {
            let w = vorticity_hat(sim.velocity_hat(), snap.n, snap.l)?;
            let comps: Vec<&[_]> = w.iter().map(|c| c.as_slice()).collect();
            (
                shell_spectrum(&comps, snap.d, snap.n, SpectrumMode::SumSquared)?,
                "vorticity",
            )
        }
    };
    let mut meta = spectrum_metadata(&spec, label, snap.t, Some(snapshot));
    meta.push(format!("velocity fixed-point iterations = {iters}"));
    write_spectrum_csv(out, &spec, &meta)?;
    println!("wrote {} shells to {}", spec.k.len(), out.display());
    Ok(())
}

fn spectrum_metadata(
    spec: &ShellSpectrum,
    label: &str,
    t: f64,
    source: Option<&Path>,
) -> Vec<String> {
    let reduction = match spec.mode {
        SpectrumMode::Mean => "shell mean of the mode magnitude",
        SpectrumMode::SumSquared => "shell sum of the squared mode magnitude",
    };
    let onset = match onset_wavenumber(spec, DEFAULT_ONSET_THRESHOLD) {
        Some(k) => k.to_string(),
        None => "none".into(),
    };
    let mut meta = vec![
        format!("field = {label}, reduction = {reduction}"),
        BINNING_NOTE.to_string(),
        format!("t = {t}"),
        format!("onset_threshold = {DEFAULT_ONSET_THRESHOLD}, onset_k = {onset}"),
    ];
    if let Some(p) = source {
        meta.push(format!("source = {}", p.display()));
    }
    meta
}

/// Writes `# key = value` metadata lines, a `k,value` header, then one shell
/// per line with the value in 17-significant-digit scientific notation (the
/// shortest form that always parses back to the identical float).
fn write_spectrum_csv(path: &Path, spec: &ShellSpectrum, meta: &[String]) -> Result<()> {
    let mut text = String::new();
    for line in meta {
        let _ = writeln!(text, "# {line}");
    }
    let _ = writeln!(text, "k,value");
    for (k, v) in spec.k.iter().zip(&spec.value) {
        let _ = writeln!(text, "{k},{v:.16e}");
    }
    fs::write(path, text)?;
    Ok(())
}

// --- convergence ------------------------------------------------------------

/// Relative tolerance defining the divergence wavenumber between spectra.
const DIVERGENCE_RTOL: f64 = 0.01;

fn cmd_convergence(config: &Path, degrees: &str) -> Result<()> {
    let base = SimConfig::parse(&read_text(config)?)?;
    base.validate()?;
    let mut degrees = degrees
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::Format(format!("bad degree '{}': {e}", s.trim())))
        })
        .collect::<Result<Vec<usize>>>()?;
    degrees.sort_unstable();
    degrees.dedup();
    if degrees.len() < 2 {
        return Err(Error::Format(
            "--degrees needs at least two distinct values".into(),
        ));
    }
    fs::create_dir_all(&base.out_dir)?;

    let mut spectra = Vec::with_capacity(degrees.len());
    for &m in &degrees {
        let mut cfg = base.clone();
        cfg.m = m;
        let map = fit_config_map(&cfg)?;
        let mut sim = Simulator::new(cfg.clone(), map)?;
        sim.init_planewave()?;
        let steps = (cfg.t_end / cfg.dt).round() as usize;
        for _ in 0..steps {
            sim.step()?;
        }
        sim.recompute_velocity()?;
        let spec = velocity_spectrum(&sim)?;
        let meta = spectrum_metadata(&spec, &format!("velocity, map degree {m}"), sim.t(), None);
        let name = format!("conv-M{m:03}.csv");
        write_spectrum_csv(&base.out_dir.join(&name), &spec, &meta)?;
        println!("degree {m}: ran {steps} steps, wrote {name}");
        spectra.push(spec);
    }

    let m_ref = *degrees.last().expect("validated non-empty");
    let reference = spectra.last().expect("one spectrum per degree");
    let k_max = base.n / 3;
    println!(
        "divergence wavenumber vs reference degree {m_ref} \
         (first shell differing by more than {:.0}% up to k={k_max}):",
        DIVERGENCE_RTOL * 100.0
    );
    for (m, spec) in degrees.iter().zip(&spectra).take(degrees.len() - 1) {
        match divergence_wavenumber(spec, reference, k_max) {
            Some(k) => println!("M={m}: k_div={k}"),
            None => println!("M={m}: none (within tolerance over the whole range)"),
        }
    }
    Ok(())
}

/// First shell in 1..=k_max where `spec` differs from `reference` by more
/// than [`DIVERGENCE_RTOL`] relative to the reference shell value.
fn divergence_wavenumber(
    spec: &ShellSpectrum,
    reference: &ShellSpectrum,
    k_max: usize,
) -> Option<usize> {
    for k in 1..=k_max.min(spec.value.len() - 1) {
        if (spec.value[k] - reference.value[k]).abs() > DIVERGENCE_RTOL * reference.value[k] {
            return Some(k);
        }
    }
    None
}
