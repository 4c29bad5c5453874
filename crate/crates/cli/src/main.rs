use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use capflow_core::dynamics::{DynamicsError, EquilibriumOptions, PairOptions, ReducedSystem, SimOptions};
use capflow_core::petri::{PetriNet, DEFAULT_PLACE_CAP, MAX_PLACE_CAP};
use capflow_core::{
    check_persistence_structural, check_persistence_theorem1, closed_form_siphons, compartmental_crn,
    run_suite, CompartmentalGraph, PetriError, SiphonMethod, SiphonReport, VerifyConfig,
};

const EXIT_INPUT: u8 = 1;
const EXIT_INCONCLUSIVE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "capflow", version)]
#[command(about = "Persistence certificates and dynamics checks for bounded-capacity compartmental networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimal siphons and a persistence verdict (siphons.json, persistence.json)
    Analyze(Common),
    /// Integrate the reduced system from --n0 (trajectory.csv)
    Simulate(Common),
    /// Steady state in the level set --level (equilibrium.json)
    Equilibrium(Common),
    /// Numerical verification suite (verification.json)
    Verify(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Graph document (JSON)
    #[arg(long)]
    input: PathBuf,
    /// Output directory, created if missing
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50.0)]
    t_end: f64,
    /// Random pairs, points and starts per check
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Residual target for equilibria; 1e-10 (1 + max c) by default
    #[arg(long)]
    tol_eq: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Place cap for siphon enumeration
    #[arg(long, default_value_t = DEFAULT_PLACE_CAP)]
    max_places: usize,
    /// Initial state for simulate, comma separated
    #[arg(long, value_delimiter = ',')]
    n0: Option<Vec<f64>>,
    /// Record states every DT time units instead of every step
    #[arg(long)]
    sample_dt: Option<f64>,
    /// Total particle level for equilibrium
    #[arg(long)]
    level: Option<f64>,
    /// Also write crn.json from analyze
    #[arg(long)]
    emit_crn: bool,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

/// Validated run configuration.
struct RunConfig {
    common: Common,
    graph: CompartmentalGraph,
    sim: SimOptions,
}

impl RunConfig {
    fn load(common: Common) -> Result<Self, Failure> {
        for (flag, value) in [
            ("--tol-eq", common.tol_eq),
            ("--abs-tol", common.abs_tol),
            ("--rel-tol", common.rel_tol),
            ("--sample-dt", common.sample_dt),
        ] {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return Err(fail(EXIT_INPUT, format!("{flag} must be a positive number, got {v}")));
                }
            }
        }
        if !(common.t_end.is_finite() && common.t_end > 0.0) {
            return Err(fail(EXIT_INPUT, format!("--t-end must be a positive number, got {}", common.t_end)));
        }
        if common.trials == 0 {
            return Err(fail(EXIT_INPUT, "--trials must be at least 1"));
        }
        if common.max_places == 0 || common.max_places > MAX_PLACE_CAP {
            return Err(fail(EXIT_INPUT, format!("--max-places must be in 1..={MAX_PLACE_CAP}")));
        }
        let text = fs::read_to_string(&common.input)
            .map_err(|e| fail(EXIT_INPUT, format!("cannot read {}: {e}", common.input.display())))?;
        let graph = CompartmentalGraph::from_json(&text)
            .map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", common.input.display())))?;
        let defaults = SimOptions::default();
        let sim = SimOptions {
            abs_tol: common.abs_tol.unwrap_or(defaults.abs_tol),
            rel_tol: common.rel_tol.unwrap_or(defaults.rel_tol),
            sample_dt: common.sample_dt,
            ..defaults
        };
        Ok(RunConfig { common, graph, sim })
    }

    fn out_path(&self, name: &str) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.common.out)
            .map_err(|e| fail(EXIT_INPUT, format!("cannot create {}: {e}", self.common.out.display())))?;
        Ok(self.common.out.join(name))
    }

    fn equilibrium_options(&self) -> EquilibriumOptions {
        EquilibriumOptions {
            sim: self.sim,
            tol_eq: self.common.tol_eq,
            ..EquilibriumOptions::default()
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| fail(EXIT_INPUT, format!("cannot write {}: {e}", path.display())))
}

fn dynamics_failure(e: DynamicsError) -> Failure {
    let code = match e {
        DynamicsError::Dimension { .. }
        | DynamicsError::StateOutOfBox { .. }
        | DynamicsError::LevelOutOfRange { .. }
        | DynamicsError::InvalidArgument(_) => EXIT_INPUT,
        DynamicsError::NotStronglyConnected { .. } => EXIT_INCONCLUSIVE,
        _ => EXIT_NUMERICAL,
    };
    fail(code, e.to_string())
}

fn analyze(cfg: &RunConfig) -> Result<u8, Failure> {
    let g = &cfg.graph;
    let crn = compartmental_crn(g);
    let species = crn.species().to_vec();
    let (siphons, method, verdict) = if g.is_strongly_connected() {
        let siphons = closed_form_siphons(g).expect("graph is strongly connected");
        (siphons, SiphonMethod::ClosedForm, check_persistence_structural(g))
    } else {
        let place_error = |e: PetriError| fail(EXIT_INPUT, format!("{e}; raise --max-places (at most {MAX_PLACE_CAP})"));
        let siphons = PetriNet::from_crn(&crn)
            .minimal_siphons(cfg.common.max_places)
            .map_err(place_error)?;
        let verdict = check_persistence_theorem1(&crn, cfg.common.max_places).map_err(place_error)?;
        (siphons, SiphonMethod::Enumeration, verdict)
    };
    verdict
        .audit(&crn.stoichiometric_matrix())
        .map_err(|e| fail(EXIT_NUMERICAL, format!("certificate re-verification failed: {e}")))?;

    write_json(&cfg.out_path("siphons.json")?, &SiphonReport::new(&siphons, &species, method))?;
    let components: Vec<Vec<String>> = g
        .strong_components()
        .components
        .iter()
        .map(|c| c.iter().map(|&i| g.labels()[i].clone()).collect())
        .collect();
    let mut report = verdict.to_json(&species);
    report["strong_components"] = json!(components);
    write_json(&cfg.out_path("persistence.json")?, &report)?;
    if cfg.common.emit_crn {
        write_json(&cfg.out_path("crn.json")?, &crn.to_json())?;
    }

    println!("minimal siphons: {}", siphons.len());
    for s in &siphons {
        println!("  {{{}}}", s.names(&species).join(", "));
    }
    let label = serde_json::to_value(verdict.verdict).expect("verdict serializes");
    println!("verdict: {} ({})", label.as_str().unwrap_or_default(), verdict.reason);
    Ok(if verdict.is_certified() { 0 } else { EXIT_INCONCLUSIVE })
}

fn simulate(cfg: &RunConfig) -> Result<u8, Failure> {
    let n0 = cfg
        .common
        .n0
        .as_ref()
        .ok_or_else(|| fail(EXIT_INPUT, "simulate needs --n0 with one value per compartment"))?;
    let sys = ReducedSystem::new(&cfg.graph);
    let traj = sys.simulate(n0, cfg.common.t_end, &cfg.sim).map_err(dynamics_failure)?;
    let path = cfg.out_path("trajectory.csv")?;
    let file = fs::File::create(&path).map_err(|e| fail(EXIT_INPUT, format!("cannot write {}: {e}", path.display())))?;
    traj.write_csv(file)
        .map_err(|e| fail(EXIT_INPUT, format!("cannot write {}: {e}", path.display())))?;
    println!(
        "{} samples, {} steps ({} rejected), max conservation drift {:e}",
        traj.len(),
        traj.stats.steps,
        traj.stats.rejected_steps,
        traj.stats.max_conservation_drift
    );
    Ok(0)
}

fn equilibrium(cfg: &RunConfig) -> Result<u8, Failure> {
    let level = cfg
        .common
        .level
        .ok_or_else(|| fail(EXIT_INPUT, "equilibrium needs --level"))?;
    let sys = ReducedSystem::new(&cfg.graph);
    let e = sys
        .find_equilibrium(level, &cfg.equilibrium_options())
        .map_err(dynamics_failure)?;
    let mut report = serde_json::to_value(&e).expect("result serializes");
    report["compartments"] = json!(cfg.graph.labels());
    write_json(&cfg.out_path("equilibrium.json")?, &report)?;
    println!("level {level}: residual {:e}", e.residual);
    for (name, v) in cfg.graph.labels().iter().zip(&e.point) {
        println!("  {name} = {v}");
    }
    Ok(0)
}

fn verify(cfg: &RunConfig) -> Result<u8, Failure> {
    let vc = VerifyConfig {
        seed: cfg.common.seed,
        trials: cfg.common.trials,
        t_end: cfg.common.t_end,
        sim: SimOptions {
            sample_dt: None,
            ..cfg.sim
        },
        equilibrium: cfg.equilibrium_options(),
        pair: PairOptions::default(),
        ..VerifyConfig::default()
    };
    let report = run_suite(&cfg.graph, &vc).map_err(dynamics_failure)?;
    write_json(&cfg.out_path("verification.json")?, &report)?;
    for c in &report.checks {
        println!(
            "{} {:<34} measured {:e} (tolerance {:e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance
        );
    }
    Ok(if report.all_passed { 0 } else { EXIT_NUMERICAL })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (Common, fn(&RunConfig) -> Result<u8, Failure>) = match cli.command {
        Command::Analyze(c) => (c, analyze),
        Command::Simulate(c) => (c, simulate),
        Command::Equilibrium(c) => (c, equilibrium),
        Command::Verify(c) => (c, verify),
    };
    match RunConfig::load(common).and_then(|cfg| run(&cfg)) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
