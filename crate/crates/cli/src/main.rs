//! Command-line driver: solve orbits, scan spectra, continue branches,
//! simulate the network and cross-validate stored orbits.

mod config;
mod output;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

use config::{
    apply_override, build_model, config_from_value, ExperimentConfig, GuessSpec, SeedSpec,
};
use hbnet::{
    classify_pattern, initial_guess_from_simulation, integrate, solve_orbit, ContinuationProblem,
    Error as CoreError, HbProblem, HistoryFunction, MaxExponentOptions, NetworkSystem, NodeModel,
    OrbitSolution, ScanRegion, SimulationResult, SpectralBasis, StabilityProblem, SyncSystem,
};

#[derive(Parser)]
#[command(
    name = "hbnet",
    about = "Periodic orbits, Floquet spectra and branch continuation for delay-coupled oscillator rings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for spectrum scans (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override a configuration entry: dotted path = JSON value,
    /// e.g. `topology.tau_inter=5.3`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Construct a periodic orbit and write it as JSON.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate the stability indicator over a grid per mode; write scan
    /// CSVs and refined roots.
    Spectrum {
        #[command(flatten)]
        common: CommonArgs,
        /// Orbit file produced by `solve`.
        #[arg(long)]
        orbit: PathBuf,
        /// Modes to analyse (default 0..=N/2).
        #[arg(long, value_delimiter = ',')]
        q: Option<Vec<usize>>,
    },
    /// Continue an orbit branch in a scalar parameter.
    Continue {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        orbit: PathBuf,
    },
    /// Integrate the full delayed network and classify the pattern.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Orbit file used as the seed trajectory (required by orbit-based
        /// seeds).
        #[arg(long)]
        orbit: Option<PathBuf>,
    },
    /// Integrate an orbit's own reconstruction and report the deviation.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        orbit: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

/// Exit codes: 1 config/usage, 2 no convergence, 3 equilibrium collapse,
/// 4 orbit/config mismatch, 5 first continuation step failed,
/// 6 non-finite simulation state.
fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::NoConvergence { .. } => 2,
                CoreError::CollapsedToEquilibrium { .. } => 3,
                CoreError::FirstStepFailed(_) => 5,
                CoreError::NonFiniteState { .. } => 6,
                _ => 1,
            };
        }
        if cause.downcast_ref::<MismatchError>().is_some() {
            return 4;
        }
    }
    1
}

#[derive(Debug)]
struct MismatchError(String);

impl std::fmt::Display for MismatchError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "orbit/config mismatch: {}", self.0)
    }
}

impl std::error::Error for MismatchError {}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { common } => {
            let (config, _) = load_config(&common)?;
            cmd_solve(&config, &common.out)
        }
        Command::Spectrum { common, orbit, q } => {
            let (config, _) = load_config(&common)?;
            cmd_spectrum(&config, &orbit, q, &common.out)
        }
        Command::Continue { common, orbit } => {
            let (config, raw) = load_config(&common)?;
            cmd_continue(&config, raw, &orbit, &common.out)
        }
        Command::Simulate { common, orbit } => {
            let (config, _) = load_config(&common)?;
            cmd_simulate(&config, orbit.as_deref(), &common.out)
        }
        Command::Verify { common, orbit } => {
            let (config, _) = load_config(&common)?;
            cmd_verify(&config, &orbit, &common.out)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<(ExperimentConfig, serde_json::Value)> {
    if let Some(threads) = common.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let text = std::fs::read_to_string(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).context("parsing config")?;
    for spec in &common.overrides {
        apply_override(&mut value, spec)?;
    }
    let config = config_from_value(value.clone())?;
    Ok((config, value))
}

fn load_orbit(path: &Path) -> Result<OrbitSolution> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(OrbitSolution::from_json_str(&text)?)
}

fn check_orbit_matches(
    orbit: &OrbitSolution,
    config: &ExperimentConfig,
    model: &NodeModel,
) -> Result<()> {
    if orbit.p != model.dim() {
        bail!(MismatchError(format!(
            "orbit has p = {}, model has p = {}",
            orbit.p,
            model.dim()
        )));
    }
    if orbit.m != config.numerics.m {
        bail!(MismatchError(format!(
            "orbit was solved with M = {}, config requests M = {}",
            orbit.m, config.numerics.m
        )));
    }
    Ok(())
}

/// Integration step honouring the explicitness constraint and, when known,
/// the orbit time scale.
fn choose_dt(config: &ExperimentConfig, model: &NodeModel, period: Option<f64>) -> f64 {
    if let Some(dt) = config.numerics.dt {
        return dt;
    }
    let min_pos = model
        .delays()
        .iter()
        .copied()
        .filter(|&tau| tau > 0.0)
        .fold(f64::INFINITY, f64::min);
    let mut dt: f64 = 0.05;
    if min_pos.is_finite() {
        dt = dt.min(min_pos / 10.0);
    }
    if let Some(t) = period {
        dt = dt.min(t / 256.0);
    }
    dt
}

fn bootstrap_simulation(
    model: &NodeModel,
    config: &ExperimentConfig,
    t_end: f64,
    history_offset: f64,
) -> Result<SimulationResult> {
    let system = SyncSystem::new(model);
    let steady = model
        .steady_states()
        .into_iter()
        .next()
        .ok_or_else(|| anyhow!("no steady state found to seed the simulation"))?;
    let mut state = steady;
    state[0] += history_offset;
    let history = HistoryFunction::Constant(state);
    let dt = choose_dt(config, model, None);
    Ok(integrate(&system, &history, t_end, dt, dt * 5.0)?)
}

fn solve_from_config(config: &ExperimentConfig) -> Result<OrbitSolution> {
    let model = build_model(config)?;
    let basis = SpectralBasis::new(config.numerics.m, model.dim())?;
    let problem = HbProblem::new(&model, &basis)?.with_wave_mode(config.task.solve.wave_mode)?;
    let settings = config.numerics.newton.to_settings();

    let (x, t) = match &config.task.solve.guess {
        GuessSpec::Simulate {
            t_end,
            history_offset,
        } => {
            let sim = bootstrap_simulation(&model, config, *t_end, *history_offset)?;
            initial_guess_from_simulation(&sim, &basis, 0)?
        }
        GuessSpec::OrbitFile { path } => {
            let orbit = load_orbit(Path::new(path))?;
            if orbit.p != model.dim() {
                bail!(MismatchError(format!(
                    "guess orbit has p = {}, model has p = {}",
                    orbit.p,
                    model.dim()
                )));
            }
            // resample onto this basis (the stored truncation may differ)
            let mut x = vec![0.0; basis.len()];
            for (row, tn) in basis.sample_times(orbit.period).iter().enumerate() {
                let v = orbit.evaluate(*tn);
                x[row * orbit.p..(row + 1) * orbit.p].copy_from_slice(&v);
            }
            (x, orbit.period)
        }
        GuessSpec::Sinusoid { amplitude, period } => {
            let steady = model
                .steady_states()
                .into_iter()
                .next()
                .ok_or_else(|| anyhow!("no steady state found to centre the sinusoid guess"))?;
            let p = model.dim();
            let mut x = vec![0.0; basis.len()];
            for (row, tn) in basis.sample_times(*period).iter().enumerate() {
                for (c, s) in steady.iter().enumerate() {
                    x[row * p + c] = s
                        + if c == 0 {
                            amplitude * (2.0 * std::f64::consts::PI * tn / period).cos()
                        } else {
                            0.0
                        };
                }
            }
            (x, *period)
        }
    };
    Ok(solve_orbit(&x, t, &problem, &settings)?)
}

fn cmd_solve(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let orbit = solve_from_config(config)?;
    output::write(&out.join("orbit.json"), &orbit.to_json_string()?)?;
    println!(
        "T = {:.12}  residual = {:.3e}  harmonic tail = {:.3e}",
        orbit.period,
        orbit.residual_norm,
        orbit.tail_magnitude()
    );
    Ok(())
}

fn cmd_spectrum(
    config: &ExperimentConfig,
    orbit_path: &Path,
    modes: Option<Vec<usize>>,
    out: &Path,
) -> Result<()> {
    let model = build_model(config)?;
    let orbit = load_orbit(orbit_path)?;
    check_orbit_matches(&orbit, config, &model)?;
    if orbit.wave_mode != 0 {
        bail!(MismatchError(
            "the stability determinant applies to synchronous orbits (wave_mode 0)".into()
        ));
    }
    let prob = StabilityProblem::new(&model, &orbit)?;
    let n_nodes = prob.n_nodes();
    let modes = modes
        .or_else(|| config.task.spectrum.modes.clone())
        .unwrap_or_else(|| prob.reduced_modes());

    let scan_cfg = &config.numerics.scan;
    let omega = scan_cfg
        .omega
        .unwrap_or((1e-9, 3.0 * std::f64::consts::PI / orbit.period));
    let region = ScanRegion {
        nu_min: scan_cfg.nu.0,
        nu_max: scan_cfg.nu.1,
        omega_min: omega.0,
        omega_max: omega.1,
    };

    let mut all_roots: Vec<hbnet::floquet::RootRecord> = Vec::new();
    println!("q  max_Re  trivial");
    for &q in &modes {
        let scan = prob.scan_spectrum(q, region, scan_cfg.resolution)?;
        output::write(&out.join(format!("spectrum_q{q}.csv")), &scan.to_csv())?;
        let opts = MaxExponentOptions {
            real_interval: config.numerics.real_roots.interval,
            real_grid: config.numerics.real_roots.grid,
            scan: true,
            scan_resolution: scan_cfg.resolution,
        };
        let mode = prob.max_exponent(q, &opts)?;
        for root in &mode.roots {
            all_roots.push(root.into());
            // conjugate-mode synthesis: off-axis roots of mode q mirror
            // into mode N - q
            if root.im != 0.0 && q != 0 && (n_nodes - q) % n_nodes != q {
                let mut conj = hbnet::floquet::RootRecord::from(root);
                conj.q = n_nodes - q;
                conj.im = -conj.im;
                all_roots.push(conj);
            }
        }
        println!(
            "{q}  {}  {}",
            mode.max
                .map(|m| format!("{:+.6e}", m.re))
                .unwrap_or_else(|| "-".into()),
            mode.trivial
                .map(|t| format!("|l|={:.2e}", t.lambda().norm()))
                .unwrap_or_else(|| "-".into())
        );
    }
    all_roots.sort_by(|a, b| {
        (a.q, -a.re, a.im)
            .partial_cmp(&(b.q, -b.re, b.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    output::write(
        &out.join("roots.json"),
        &serde_json::to_string_pretty(&all_roots)?,
    )?;
    Ok(())
}

fn cmd_continue(
    config: &ExperimentConfig,
    raw: serde_json::Value,
    orbit_path: &Path,
    out: &Path,
) -> Result<()> {
    let model = build_model(config)?;
    let orbit = load_orbit(orbit_path)?;
    check_orbit_matches(&orbit, config, &model)?;
    let basis = SpectralBasis::new(orbit.m, orbit.p)?;
    let task = &config.task.continuation;

    let start_param = resolve_path(&raw, &task.parameter)?;
    let raw_clone = raw.clone();
    let parameter = task.parameter.clone();
    let setter = move |value: f64| -> NodeModel {
        let mut v = raw_clone.clone();
        apply_override(&mut v, &format!("{parameter}={value}"))
            .expect("parameter path validated");
        let cfg = config_from_value(v).expect("parameter sweep broke the configuration");
        build_model(&cfg).expect("parameter sweep broke the model")
    };

    let continuation = ContinuationProblem {
        setter: &setter,
        basis: &basis,
        phase_component: 0,
        wave_mode: orbit.wave_mode,
        newton: config.numerics.newton.to_settings(),
        steps: config.numerics.continuation.step_settings(),
        exponents: config.numerics.continuation.exponent_policy(),
    };
    let mut branch =
        continuation.continue_branch(&orbit, start_param, task.direction, task.range)?;
    if continuation.exponents.enabled && orbit.wave_mode == 0 {
        branch.events = continuation.detect_stability_events(&branch)?;
    }

    output::write(&out.join("branch.csv"), &branch.to_csv())?;
    output::write(
        &out.join("events.json"),
        &serde_json::to_string_pretty(&branch.events)?,
    )?;
    if task.embed_orbits {
        let orbits: Vec<serde_json::Value> = branch
            .points
            .iter()
            .map(|p| {
                Ok(serde_json::json!({
                    "param": p.param,
                    "orbit": serde_json::from_str::<serde_json::Value>(
                        &p.orbit.to_json_string()?
                    )?,
                }))
            })
            .collect::<Result<_>>()?;
        output::write(
            &out.join("orbits.json"),
            &serde_json::to_string_pretty(&orbits)?,
        )?;
    }
    println!(
        "{} points, {} folds, {} events, termination: {:?}",
        branch.points.len(),
        branch.folds.len(),
        branch.events.len(),
        branch.termination
    );
    Ok(())
}

fn resolve_path(value: &serde_json::Value, path: &str) -> Result<f64> {
    let mut cursor = value;
    for segment in path.split('.') {
        cursor = cursor
            .get(segment)
            .ok_or_else(|| anyhow!("configuration has no entry at {path:?}"))?;
    }
    cursor
        .as_f64()
        .ok_or_else(|| anyhow!("configuration entry {path:?} is not a number"))
}

fn cmd_simulate(
    config: &ExperimentConfig,
    orbit_path: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let model = build_model(config)?;
    let task = &config.task.simulate;
    let nodes = model.topology.as_ref().map_or(1, |t| t.len());
    let p = model.dim();

    let orbit = match orbit_path {
        Some(path) => {
            let orbit = load_orbit(path)?;
            if orbit.p != p {
                bail!(MismatchError(format!(
                    "orbit has p = {}, model has p = {p}",
                    orbit.p
                )));
            }
            Some(orbit)
        }
        None => None,
    };

    let history = match &task.seed {
        SeedSpec::Constant { state } => {
            if state.len() != p {
                bail!(MismatchError(format!(
                    "constant seed has {} components, node dimension is {p}",
                    state.len()
                )));
            }
            let full: Vec<f64> = (0..nodes).flat_map(|_| state.clone()).collect();
            HistoryFunction::Constant(full)
        }
        SeedSpec::OrbitPerturbation { mode, amplitude } => {
            let orbit = orbit
                .as_ref()
                .ok_or_else(|| anyhow!("orbit-based seed requires --orbit"))?;
            match orbit.wave_mode {
                0 => hbnet::perturb_mode(orbit, nodes, *mode, *amplitude)?,
                q => HistoryFunction::travelling_wave(orbit, nodes, q),
            }
        }
        SeedSpec::Random { scale, rng_seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*rng_seed);
            let offsets: Vec<Vec<f64>> = (0..nodes)
                .map(|_| (0..p).map(|_| rng.gen_range(-scale..*scale)).collect())
                .collect();
            match &orbit {
                Some(orbit) => {
                    HistoryFunction::synchronous(orbit, nodes).with_offsets(offsets)
                }
                None => {
                    let steady = model
                        .steady_states()
                        .into_iter()
                        .next()
                        .ok_or_else(|| anyhow!("no steady state to seed the simulation"))?;
                    let full: Vec<f64> = (0..nodes).flat_map(|_| steady.clone()).collect();
                    HistoryFunction::Constant(full).with_offsets(offsets)
                }
            }
        }
    };

    let dt = choose_dt(config, &model, orbit.as_ref().map(|o| o.period));
    let dt_out = config
        .numerics
        .dt_out
        .or_else(|| orbit.as_ref().map(|o| o.period / 64.0))
        .unwrap_or(0.1);

    let result = if nodes > 1 {
        let system = NetworkSystem::new(&model)?;
        integrate(&system, &history, task.t_end, dt, dt_out)?
    } else {
        let system = SyncSystem::new(&model);
        integrate(&system, &history, task.t_end, dt, dt_out)?
    };

    output::write(
        &out.join("simulation.csv"),
        &output::simulation_csv(&result),
    )?;
    if nodes > 1 {
        match classify_pattern(&result, &config.numerics.classify.to_options()) {
            Ok(label) => {
                println!("pattern: {:?} (T = {:.4})", label.kind, label.period);
                output::write(
                    &out.join("classification.json"),
                    &output::classification_json(&label)?,
                )?;
            }
            Err(e) => {
                println!("pattern: not classifiable ({e})");
                output::write(
                    &out.join("classification.json"),
                    &serde_json::to_string_pretty(
                        &serde_json::json!({ "error": e.to_string() }),
                    )?,
                )?;
            }
        }
    }
    Ok(())
}

fn cmd_verify(config: &ExperimentConfig, orbit_path: &Path, out: &Path) -> Result<()> {
    let model = build_model(config)?;
    let orbit = load_orbit(orbit_path)?;
    if orbit.p != model.dim() {
        bail!(MismatchError(format!(
            "orbit has p = {}, model has p = {}",
            orbit.p,
            model.dim()
        )));
    }
    let periods = config.task.verify.periods;
    let deviation = hbnet::verify_orbit(&orbit, &model, periods)?;
    println!("max deviation over {periods} periods: {deviation:.6e}");
    output::write(
        &out.join("verify.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "periods": periods,
            "max_deviation": deviation,
        }))?,
    )?;
    Ok(())
}
