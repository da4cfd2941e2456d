use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use mbp_lri::experiments::{run_convergence, run_coarsening, CoarsenConfig, ExperimentError, RunReport, WaveConfig};
use mbp_lri::expops::{check_against_dense, DENSE_SIZE_CAP};
use mbp_lri::output::{convergence_csv, fmt_f64, series_csv, snapshot_bytes};
use mbp_lri::potential::{compute_bounds, CeilingRegime};
use mbp_lri::spatial::GridSpec;
use mbp_lri::{PotentialSpec, SchemeKind};

use crate::{BoundsArgs, CheckArgs, CoarsenArgs, ConvergeArgs, Failure, Outcome, PotentialKind};

const CHECK_TOL: f64 = 1e-10;
const CONTRACTION_TOL: f64 = 1e-12;
const MAX_CHECK_NODES: usize = 32;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::Usage)?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid configuration in {}", path.display()))
        .map_err(Failure::Usage)
}

fn experiment_failure(e: ExperimentError) -> Failure {
    match e {
        ExperimentError::Config(_) | ExperimentError::Potential(mbp_lri::potential::PotentialError::Parameters(_)) => {
            Failure::Usage(e.into())
        }
        other => Failure::Verification(other.into()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<Outcome, Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Verification(e.into()))?;
    println!("{text}");
    Ok(Outcome::Clean)
}

pub fn bounds(args: &BoundsArgs) -> Result<Outcome, Failure> {
    let spec = crate::resolve_potential(&args.potential, PotentialKind::DoubleWell)?;
    let potential = spec.build().map_err(Failure::usage)?;
    let b = compute_bounds(&potential).map_err(|e| Failure::Verification(e.into()))?;

    let delta = b.delta.map_or("undefined".to_string(), fmt_f64);
    let regime = match b.regime {
        CeilingRegime::Generic => "generic",
        CeilingRegime::Enlarged => "enlarged",
    };
    let rows: [(&str, String); 18] = [
        ("potential", spec.label().to_string()),
        ("beta", fmt_f64(b.beta)),
        ("omega0", fmt_f64(b.omega0)),
        ("omega1", fmt_f64(b.omega1)),
        ("delta", delta),
        ("delta0", fmt_f64(b.delta0)),
        ("dt_max_first", fmt_f64(b.dt_max_first)),
        ("dt_max_second", fmt_f64(b.dt_max_second)),
        ("dt_max_second_generic", fmt_f64(b.dt_max_second_generic)),
        ("ceiling_regime", regime.to_string()),
        ("F0", fmt_f64(b.f0)),
        ("F1", fmt_f64(b.f1)),
        ("F2", fmt_f64(b.f2)),
        ("F3", fmt_f64(b.f3)),
        ("F4", fmt_f64(b.f4)),
        ("F1_tilde", fmt_f64(b.f1_tilde)),
        ("F2_tilde", fmt_f64(b.f2_tilde)),
        ("theta", match spec {
            PotentialSpec::FloryHuggins { theta, theta_c } => format!("{} (theta_c {})", fmt_f64(theta), fmt_f64(theta_c)),
            PotentialSpec::DoubleWell => "-".into(),
        }),
    ];
    let mut out = String::new();
    for (k, v) in &rows {
        out.push_str(&format!("{k:<24}{v}\n"));
    }
    out.push_str(&format!("\n{:<8}{:<7}{:<24}{}\n", "scheme", "order", "dt_max", "note"));
    for s in SchemeKind::ALL {
        let note = if s.is_lri() { "maximum bound preserved" } else { "reference only" };
        out.push_str(&format!("{:<8}{:<7}{:<24}{}\n", s.name(), s.order(), fmt_f64(s.mbp_ceiling(&b)), note));
    }
    out.push('\n');
    for (k, v) in rows.iter().filter(|(k, _)| !matches!(*k, "potential" | "theta" | "ceiling_regime")) {
        out.push_str(&format!("{k}={v}\n"));
    }
    out.push_str(&format!("ceiling_regime={regime}\n"));
    print!("{out}");
    Ok(Outcome::Clean)
}

pub fn check_operator(args: &CheckArgs) -> Result<Outcome, Failure> {
    if args.n > MAX_CHECK_NODES {
        return Err(Failure::usage(format!("--n {} exceeds the oracle cap of {MAX_CHECK_NODES}", args.n)));
    }
    if !(1..=3).contains(&args.dim) {
        return Err(Failure::usage(format!("--dim must be 1, 2 or 3, got {}", args.dim)));
    }
    let nodes = args.n.pow(args.dim as u32);
    if nodes > DENSE_SIZE_CAP {
        return Err(Failure::usage(format!("{nodes} nodes exceed the dense oracle cap of {DENSE_SIZE_CAP}")));
    }
    if args.times.iter().any(|&t| !(t.is_finite() && t >= 0.0)) {
        return Err(Failure::usage("times must be non-negative"));
    }
    let grid = GridSpec::new(&vec![args.n; args.dim], &vec![1.0; args.dim], &vec![0.0; args.dim], args.bc)
        .map_err(Failure::usage)?;

    println!("{:<10}{:<12}{:<12}{:<12}{:<24}dense ||exp||_inf", "t", "exp", "phi1", "phi2", "||exp||_inf");
    let mut failures = Vec::new();
    for &t in &args.times {
        let c = check_against_dense(&grid, args.eps, t, args.probes).map_err(|e| Failure::Verification(e.into()))?;
        println!(
            "{:<10}{:<12.3e}{:<12.3e}{:<12.3e}{:<24}{}",
            fmt_f64(t),
            c.exp_error,
            c.phi1_error,
            c.phi2_error,
            fmt_f64(c.exp_norm),
            fmt_f64(c.dense_norm)
        );
        for (name, value, tol) in [
            ("exp", c.exp_error, CHECK_TOL),
            ("phi1", c.phi1_error, CHECK_TOL),
            ("phi2", c.phi2_error, CHECK_TOL),
            ("contraction", c.exp_norm - 1.0, CONTRACTION_TOL),
        ] {
            if !(value <= tol) {
                failures.push(format!("{name} at t={}: {value:e} > {tol:e}", fmt_f64(t)));
            }
        }
    }
    if failures.is_empty() {
        println!("all checks within tolerance");
        Ok(Outcome::Clean)
    } else {
        for f in &failures {
            eprintln!("FAILED {f}");
        }
        Ok(Outcome::CheckFailed)
    }
}

fn wave_config(args: &ConvergeArgs) -> Result<WaveConfig, Failure> {
    let mut c = match &args.config {
        Some(path) => read_json(path)?,
        None if args.full_scale => WaveConfig::full_scale(args.eps.unwrap_or(0.02)),
        None => WaveConfig::desk(args.eps.unwrap_or(0.02)),
    };
    if args.full_scale {
        c.h_denom = WaveConfig::full_scale(c.eps).h_denom;
    }
    if let Some(v) = args.eps {
        c.eps = v;
    }
    if let Some(v) = args.h_denom {
        c.h_denom = v;
    }
    if let Some(v) = args.dim {
        c.dim = v;
    }
    if let Some(v) = &args.schemes {
        c.schemes = v.clone();
    }
    if let Some(v) = &args.dt_divisors {
        c.dt_divisors = v.clone();
    }
    c.validate().map_err(experiment_failure)?;
    if !(1..=3).contains(&c.dim) {
        return Err(Failure::usage(format!("dim must be 1, 2 or 3, got {}", c.dim)));
    }
    Ok(c)
}

pub fn converge(args: &ConvergeArgs) -> Result<Outcome, Failure> {
    let config = wave_config(args)?;
    if args.dump_config {
        return print_json(&config);
    }
    // open the destination first so a bad path fails before the sweep
    let mut sink = match &args.out {
        Some(path) => Some(
            fs::File::create(path)
                .with_context(|| format!("cannot write {}", path.display()))
                .map_err(Failure::Usage)?,
        ),
        None => None,
    };
    let table = run_convergence(&config).map_err(experiment_failure)?;
    let csv = convergence_csv(&table);
    match sink.as_mut() {
        Some(file) => {
            file.write_all(csv.as_bytes()).context("writing CSV").map_err(Failure::Usage)?;
            eprintln!("wrote {} rows to {}", table.rows.len(), args.out.as_ref().unwrap().display());
        }
        None => print!("{csv}"),
    }
    if table.any_uncertified() {
        eprintln!("warning: some step sizes exceed the certified ceiling");
    }
    Ok(Outcome::Clean)
}

fn coarsen_config(args: &CoarsenArgs) -> Result<CoarsenConfig, Failure> {
    let mut c = match &args.config {
        Some(path) => read_json(path)?,
        None => {
            let spec = crate::resolve_potential(&args.potential, PotentialKind::DoubleWell)?;
            CoarsenConfig::desk(spec, args.scheme.unwrap_or(SchemeKind::Lri2))
        }
    };
    if args.config.is_some() {
        let fallback = match c.potential {
            PotentialSpec::DoubleWell => PotentialKind::DoubleWell,
            PotentialSpec::FloryHuggins { .. } => PotentialKind::FloryHuggins,
        };
        if args.potential.potential.is_some() || args.potential.theta.is_some() || args.potential.theta_c.is_some() {
            c.potential = crate::resolve_potential(&args.potential, fallback)?;
        }
        if let Some(v) = args.scheme {
            c.scheme = v;
        }
    }
    if let Some(v) = args.dt {
        c.dt = v;
    }
    if let Some(v) = args.t_final {
        c.t_final = v;
    }
    if let Some(v) = args.eps {
        c.eps = v;
    }
    if let Some(v) = args.n {
        c.n = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = &args.init_range {
        c.init_range = (v[0], v[1]);
    }
    if let Some(v) = &args.snapshot_times {
        c.snapshot_times = v.clone();
    }
    if let Some(v) = args.mbp_tol {
        c.mbp_tol = v;
    }
    let potential = c.potential.build().map_err(Failure::usage)?;
    c.validate(&potential).map_err(experiment_failure)?;
    c.grid().map_err(Failure::usage)?;
    Ok(c)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    nx: usize,
    ny: usize,
    h: f64,
    t: f64,
    t_requested: f64,
    step: usize,
    eps: f64,
    bc: &'a str,
    potential: PotentialSpec,
    scheme: SchemeKind,
    seed: u64,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a CoarsenConfig,
    beta: f64,
    dt_ceiling: f64,
    certified: bool,
    steps: usize,
    final_time: f64,
    max_sup_norm: f64,
    anomaly: &'a Option<mbp_lri::experiments::Anomaly>,
}

fn write_outputs(dir: &Path, config: &CoarsenConfig, report: &RunReport) -> anyhow::Result<()> {
    let grid = config.grid()?;
    fs::write(dir.join("series.csv"), series_csv(report))?;
    for snap in &report.snapshots {
        let stem = format!("snapshot_t{}", fmt_f64(snap.requested));
        fs::write(dir.join(format!("{stem}.f64")), snapshot_bytes(&snap.values))?;
        let sidecar = Sidecar {
            nx: grid.n_axis()[0],
            ny: grid.n_axis()[1],
            h: grid.h_axis()[0],
            t: snap.time,
            t_requested: snap.requested,
            step: snap.step,
            eps: config.eps,
            bc: grid.bc().as_str(),
            potential: config.potential,
            scheme: config.scheme,
            seed: config.seed,
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    }
    let ceiling = config.scheme.mbp_ceiling(&report.bounds);
    let summary = Summary {
        config,
        beta: report.beta,
        dt_ceiling: ceiling,
        certified: config.dt <= ceiling,
        steps: report.steps_recorded(),
        final_time: report.times.last().copied().unwrap_or(0.0),
        max_sup_norm: report.sup_norm.iter().copied().fold(0.0, f64::max),
        anomaly: &report.anomaly,
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

pub fn coarsen(args: &CoarsenArgs) -> Result<Outcome, Failure> {
    let config = coarsen_config(args)?;
    if args.dump_config {
        return print_json(&config);
    }
    let dir = args.out_dir.as_ref().expect("required by the parser");
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::Usage)?;
    let report = run_coarsening(&config).map_err(experiment_failure)?;
    let ceiling = config.scheme.mbp_ceiling(&report.bounds);
    if config.dt > ceiling {
        eprintln!("warning: dt = {} exceeds the certified ceiling {}", fmt_f64(config.dt), fmt_f64(ceiling));
    }
    write_outputs(dir, &config, &report)
        .with_context(|| format!("writing outputs to {}", dir.display()))
        .map_err(Failure::Usage)?;
    match &report.anomaly {
        None => {
            eprintln!(
                "{} steps, max sup-norm {} (beta {})",
                report.steps_recorded(),
                fmt_f64(report.sup_norm.iter().copied().fold(0.0, f64::max)),
                fmt_f64(report.beta)
            );
            Ok(Outcome::Clean)
        }
        Some(a) => {
            eprintln!("ANOMALY at step {}: {a:?}", a.step());
            Ok(Outcome::Anomaly)
        }
    }
}
