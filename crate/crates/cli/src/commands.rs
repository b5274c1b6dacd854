use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use canon_sampler::analysis::{all_maximizers, free_entropy, most_probable, rejection_ratio};
use canon_sampler::coupling::{coupling_ensemble, CouplingRun, Variant};
use canon_sampler::exact::{
    contraction_time, d_curve_with, distance_bound, exact_mixing_time_with, exact_nu, kernel_matrix, mixing_bound,
    DEFAULT_T_CAP,
};
use canon_sampler::kernel::{run, run_skip_ahead, skip_ahead_step, step, SkipOutcome};
use canon_sampler::model_file::ModelFile;
use canon_sampler::rng::derive_seed;
use canon_sampler::simulate::{
    beta_tag, dbar_csv, default_betas, eta0_candidates, extreme_configurations, preset, reference_csv, sweep_csv,
    sweep_point, SweepSettings,
};
use canon_sampler::{ChainState, Configuration, Error, FermiSpec, Model};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::model_args::ModelArgs;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(s) | Self::Io(s) => f.write_str(s),
            Self::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Lib(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Lib(e) if e.is_domain() => 1,
            Self::Lib(_) => 2,
            Self::Io(_) => 1,
        }
    }
}

type CliResult = Result<(), CliError>;

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("output serializes"));
}

/// Finite floats as numbers, anything else as `null`.
fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn default_starts(model: &Model) -> Result<Vec<Configuration>, CliError> {
    Ok(match model.fermi() {
        Some(spec) => eta0_candidates(spec)?,
        None => extreme_configurations(model),
    })
}

fn entropy_cell(model: &Model, eta: &Configuration) -> String {
    let f = free_entropy(model, eta);
    if f.is_finite() {
        fmt_f(f.value())
    } else {
        "-inf".into()
    }
}

fn occ_header(prefix: &str, m: usize) -> String {
    let mut s = String::from(prefix);
    for j in 1..=m {
        let _ = write!(s, ",occ_{j}");
    }
    s.push_str(",free_entropy\n");
    s
}

fn occ_row(s: &mut String, id: u64, model: &Model, eta: &Configuration) {
    let _ = write!(s, "{id}");
    for x in eta.occ() {
        let _ = write!(s, ",{x}");
    }
    let _ = writeln!(s, ",{}", entropy_cell(model, eta));
}

// ---------------------------------------------------------------------------
// sample

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Independent chains, one sample each.
    #[arg(long, default_value_t = 1)]
    samples: usize,
    /// Steps per chain (default: the mixing bound at --eps, rounded up).
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Starting configuration, e.g. `3,0,1` (default: top-down fill).
    #[arg(long)]
    start: Option<Configuration>,
    /// Jump between distinct configurations instead of stepping.
    #[arg(long)]
    skip_ahead: bool,
    /// Write the path of the first chain here (step, occ_1..occ_m, free_entropy).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Write samples here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs `steps` steps from `state`, recording `(time, config)` at every
/// change (skip-ahead) or every step.
fn traced_run(model: &Model, state: &mut ChainState, steps: u64, skip: bool) -> Result<String, CliError> {
    let mut s = occ_header("step", model.m());
    occ_row(&mut s, 0, model, state.config());
    if !skip {
        for t in 1..=steps {
            step(model, state)?;
            occ_row(&mut s, t, model, state.config());
        }
        return Ok(s);
    }
    loop {
        let before = state.clone();
        match skip_ahead_step(model, state)? {
            SkipOutcome::Absorbing => break,
            SkipOutcome::Moved { .. } if state.time() > steps => {
                *state = before;
                break;
            }
            SkipOutcome::Moved { .. } => occ_row(&mut s, state.time(), model, state.config()),
        }
    }
    Ok(s)
}

pub fn sample(a: &SampleArgs) -> CliResult {
    let (_, model) = a.model.load()?;
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let steps = match a.steps {
        Some(t) => t,
        None => {
            if !(a.eps > 0.0 && a.eps < 1.0) {
                return Err(CliError::Usage("--eps must lie in (0, 1)".into()));
            }
            let b = mixing_bound(&model, a.eps);
            if !b.is_finite() {
                return Err(Error::UnsupportedKernel("delta = 0: give --steps explicitly".into()).into());
            }
            b.ceil() as u64
        }
    };
    let start = match &a.start {
        Some(c) => c.clone(),
        None => default_starts(&model)?.swap_remove(0),
    };
    let finals = (0..a.samples as u64)
        .into_par_iter()
        .map(|i| -> Result<(Configuration, Option<String>), CliError> {
            let mut state = ChainState::new(&model, start.clone(), derive_seed(a.seed, &[i]))?;
            let mut trace = None;
            if i == 0 && a.trajectory.is_some() {
                trace = Some(traced_run(&model, &mut state, steps, a.skip_ahead)?);
            } else if a.skip_ahead {
                run_skip_ahead(&model, &mut state, steps)?;
            } else {
                run(&model, &mut state, steps)?;
            }
            Ok((state.config().clone(), trace))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut s = occ_header("sample_id", model.m());
    for (i, (c, _)) in finals.iter().enumerate() {
        occ_row(&mut s, i as u64, &model, c);
    }
    if let (Some(path), Some((_, Some(trace)))) = (&a.trajectory, finals.first()) {
        write_file(path, trace)?;
    }
    match &a.out {
        Some(path) => write_file(path, &s),
        None => {
            print!("{s}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// exact

#[derive(Args, Debug)]
pub struct ExactArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// Last t of the d(t) table (default: max(t_eps, bound)).
    #[arg(long)]
    t_max: Option<u64>,
    /// Write `t,d_t,bound_k_exp` here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

pub fn exact(a: &ExactArgs) -> CliResult {
    let (_, model) = a.model.load()?;
    if !(a.eps > 0.0 && a.eps < 1.0) {
        return Err(CliError::Usage("--eps must lie in (0, 1)".into()));
    }
    let dist = exact_nu(&model)?;
    let kernel = kernel_matrix(&model, &dist)?;
    let cert = exact_mixing_time_with(&dist, &kernel, a.eps, DEFAULT_T_CAP)?;
    let bound = mixing_bound(&model, a.eps);
    let bound_steps = finite(bound).map(|b| b.ceil() as u64);
    if let Some(path) = &a.csv {
        let t_max = a.t_max.unwrap_or_else(|| cert.t_eps.max(bound_steps.unwrap_or(0)));
        let curve = d_curve_with(&dist, &kernel, t_max);
        let mut s = String::from("t,d_t,bound_k_exp\n");
        for (t, &d) in curve.iter().enumerate() {
            let _ = writeln!(s, "{t},{},{}", fmt_f(d), fmt_f(distance_bound(&model, t as u64)));
        }
        write_file(path, &s)?;
    }
    print_json(&json!({
        "t_eps": cert.t_eps,
        "bound": bound_steps,
        "bound_real": finite(bound),
        "satisfied": bound.is_finite().then_some(cert.t_eps as f64 <= bound),
        "d_at": cert.d_at,
        "d_before": cert.d_before,
        "worst_start": cert.worst_start,
        "states": dist.len(),
    }));
    Ok(())
}

// ---------------------------------------------------------------------------
// couple

#[derive(Args, Debug)]
pub struct CoupleArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// `colored` (needs delta = 1) or `delta`.
    #[arg(long, default_value = "colored")]
    variant: Variant,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Give up after this many steps (default: alpha (ln k + 20)).
    #[arg(long)]
    max_t: Option<u64>,
    /// First start (default: top-down fill).
    #[arg(long)]
    eta0: Option<Configuration>,
    /// Second start (default: fill by increasing energy).
    #[arg(long)]
    theta0: Option<Configuration>,
    /// Write `run_id,t,rho` traces here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// `P(tau > t)` with runs that never coalesced counted as exceeding every `t`.
fn tail_prob(runs: &[CouplingRun], t: u64) -> f64 {
    let over = runs.iter().filter(|r| r.tau.is_none_or(|tau| tau > t)).count();
    over as f64 / runs.len() as f64
}

pub fn couple(a: &CoupleArgs) -> CliResult {
    let (_, model) = a.model.load()?;
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be positive".into()));
    }
    let starts = default_starts(&model)?;
    let eta0 = a.eta0.clone().unwrap_or_else(|| starts[0].clone());
    let theta0 = a.theta0.clone().unwrap_or_else(|| starts[1].clone());
    let alpha = contraction_time(&model);
    if !alpha.is_finite() {
        return Err(Error::UnsupportedKernel("delta = 0: the coupling is undefined".into()).into());
    }
    let max_t = a
        .max_t
        .unwrap_or_else(|| (alpha * ((model.k().max(1) as f64).ln() + 20.0)).ceil() as u64);
    let runs = coupling_ensemble(&model, &eta0, &theta0, a.seed, a.runs, max_t, a.variant, a.csv.is_some())?;

    if let Some(path) = &a.csv {
        let mut s = String::from("run_id,t,rho\n");
        for (r, run) in runs.iter().enumerate() {
            for (t, rho) in run.trace.iter().flatten().enumerate() {
                let _ = writeln!(s, "{r},{t},{rho}");
            }
        }
        write_file(path, &s)?;
    }

    let taus: Vec<u64> = runs.iter().filter_map(|r| r.tau).collect();
    let mean_tau = (!taus.is_empty()).then(|| taus.iter().sum::<u64>() as f64 / taus.len() as f64);
    let mut grid: Vec<u64> = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
        .iter()
        .map(|f| (f * alpha).ceil() as u64)
        .collect();
    grid.dedup();
    let p_tail: Vec<_> = grid
        .iter()
        .map(|&t| json!({"t": t, "p": tail_prob(&runs, t), "bound": distance_bound(&model, t)}))
        .collect();
    print_json(&json!({
        "variant": a.variant,
        "runs": a.runs,
        "coalesced": taus.len(),
        "max_t": max_t,
        "alpha": alpha,
        "mean_tau": mean_tau,
        "p_tail": p_tail,
    }));
    Ok(())
}

// ---------------------------------------------------------------------------
// sim / sweep

#[derive(Args, Debug)]
pub struct SimArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Named parameter set: desk, case1 or case2.
    #[arg(long)]
    preset: Option<String>,
    /// Inverse temperatures, comma separated.
    #[arg(long, value_delimiter = ',')]
    beta_list: Option<Vec<f64>>,
    /// Chains per ensemble (default 1024, or the preset's).
    #[arg(long = "N", alias = "chains")]
    ensemble: Option<usize>,
    /// Reference cells (default 32, or the preset's).
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "sim-out")]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct SimPlanRecord {
    preset: Option<String>,
    betas: Vec<f64>,
    settings: SweepSettings,
    points: Vec<PointRecord>,
}

#[derive(Serialize)]
struct PointRecord {
    beta: f64,
    beta_index: u64,
    horizon: u64,
    bound: Option<f64>,
    t_hat: u64,
    mixed: bool,
    window: u64,
    eta0: Vec<Configuration>,
}

fn list(xs: impl IntoIterator<Item = impl ToString>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn sim(a: &SimArgs, full_grid: bool) -> CliResult {
    let (base, preset_betas, mut settings) = match &a.preset {
        Some(name) => {
            if a.model.is_given() {
                return Err(CliError::Usage("give either --preset or a model, not both".into()));
            }
            let p = preset(name)?;
            (p.spec, Some(p.betas), p.settings)
        }
        None => match a.model.file()? {
            ModelFile::Fermi(spec) => {
                let defaults = SweepSettings {
                    ensemble: 1024,
                    bins: 32,
                    epsilon: 0.1,
                    base_seed: 0,
                };
                (spec, None, defaults)
            }
            ModelFile::Custom(_) => {
                return Err(CliError::Usage("sim and sweep need a Fermi model (temperature is swept)".into()))
            }
        },
    };
    settings.ensemble = a.ensemble.unwrap_or(settings.ensemble);
    settings.bins = a.bins.unwrap_or(settings.bins);
    settings.epsilon = a.eps.unwrap_or(settings.epsilon);
    settings.base_seed = a.seed.unwrap_or(settings.base_seed);
    let betas = match (&a.beta_list, preset_betas) {
        (Some(list), _) => list.clone(),
        (None, Some(p)) => p,
        (None, None) if full_grid => default_betas(),
        (None, None) => vec![base.beta],
    };
    if betas.is_empty() {
        return Err(CliError::Usage("--beta-list is empty".into()));
    }
    if let Some(b) = betas.iter().find(|b| !b.is_finite()) {
        return Err(CliError::Usage(format!("beta must be finite, got {b}")));
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::Io(format!("{}: {e}", a.out_dir.display())))?;

    let mut outputs = Vec::new();
    let mut points = Vec::new();
    let mut records = Vec::new();
    for (b, &beta) in betas.iter().enumerate() {
        let p = sweep_point(&base, beta, b as u64, &settings)?;
        let tag = beta_tag(beta);
        let dbar_name = format!("dbar_{tag}.csv");
        let ref_name = format!("reference_{tag}.csv");
        write_file(&a.out_dir.join(&dbar_name), &dbar_csv(&p.dbar.series))?;
        write_file(&a.out_dir.join(&ref_name), &reference_csv(&p.dbar.binning, &p.dbar.reference_mass))?;
        outputs.push(dbar_name);
        outputs.push(ref_name);
        records.push(PointRecord {
            beta,
            beta_index: b as u64,
            horizon: p.horizon,
            bound: finite(p.bound),
            t_hat: p.mixing.t_hat,
            mixed: p.mixing.mixed,
            window: p.mixing.window,
            eta0: eta0_candidates(&FermiSpec { beta, ..base.clone() })?,
        });
        points.push(p);
    }
    write_file(&a.out_dir.join("sweep.csv"), &sweep_csv(&points))?;
    outputs.push("sweep.csv".into());

    let command = if full_grid { "sweep" } else { "sim" };
    let argv = vec![
        command.to_string(),
        format!("--k={}", base.k),
        format!("--m={}", base.m),
        format!("--beta={}", base.beta),
        format!("--v={}", list(&base.v)),
        format!("--n={}", list(&base.n)),
        format!("--beta-list={}", list(&betas)),
        format!("--N={}", settings.ensemble),
        format!("--bins={}", settings.bins),
        format!("--eps={}", settings.epsilon),
        format!("--seed={}", settings.base_seed),
    ];
    let plan = SimPlanRecord {
        preset: a.preset.clone(),
        betas,
        settings: settings.clone(),
        points: records,
    };
    let manifest = RunManifest::new(command, argv, settings.base_seed, ModelFile::Fermi(base), outputs, plan);
    write_file(&a.out_dir.join("meta.json"), &manifest.to_json())?;
    print!("{}", sweep_csv(&points));
    Ok(())
}

// ---------------------------------------------------------------------------
// mpc, delta, reject-ratio, dualize

#[derive(Args, Debug)]
pub struct MpcArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// List every maximizer (enumerates the state space).
    #[arg(long)]
    all: bool,
}

pub fn mpc(a: &MpcArgs) -> CliResult {
    let (_, model) = a.model.load()?;
    let config = most_probable(&model)?;
    let f = free_entropy(&model, &config).value();
    if a.all {
        let configs = all_maximizers(&model)?;
        print_json(&json!({"config": config, "free_entropy": f, "all": configs}));
    } else {
        print_json(&json!({"config": config, "free_entropy": f}));
    }
    Ok(())
}

pub fn delta(a: &ModelArgs) -> CliResult {
    let (_, model) = a.load()?;
    let report = model.delta_report();
    let witness = report.witness.map(|(j, x)| json!({"level": j + 1, "x": x}));
    print_json(&json!({
        "delta": report.delta,
        "l_delta": model.l_delta(),
        "ultra_log_concave": model.is_ultra_log_concave(),
        "witness": witness,
    }));
    Ok(())
}

#[derive(Args, Debug)]
pub struct RejectArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Envelope probabilities per level (default uniform).
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<f64>>,
}

pub fn reject_ratio(a: &RejectArgs) -> CliResult {
    let (_, model) = a.model.load()?;
    let r = rejection_ratio(&model, a.q.as_deref())?;
    print_json(&json!({
        "ratio": finite(r.ratio),
        "log_ratio": r.log_ratio,
        "argmax_config": r.argmax,
    }));
    Ok(())
}

pub fn dualize(a: &ModelArgs) -> CliResult {
    match a.file()? {
        ModelFile::Fermi(spec) => {
            let dual = ModelFile::Fermi(canon_sampler::dualize(&spec)?);
            println!("{}", dual.canonical_json());
            Ok(())
        }
        ModelFile::Custom(_) => Err(CliError::Usage("dualize needs a Fermi model".into())),
    }
}
