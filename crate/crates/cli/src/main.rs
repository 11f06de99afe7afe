use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use occulimits::analysis::{
    bounds_report, ergodic_table, verify_long_run_optimality, BoundsOptions,
};
use occulimits::dp::{greedy_feedback_from_eta, Plan, DEFAULT_VI_TOL};
use occulimits::measures::prg_detect;
use occulimits::model::{
    constant_cost_model, example1_family, example1_model, example2_model, load_model, validate,
    Kernel, ModelParts, NoiseAtom,
};
use occulimits::output::{fmt_num, round_sig, Csv};
use occulimits::programs::augmented_lp;
use occulimits::{Error, FiniteModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_SANDWICH: u8 = 4;
const EXIT_CERTIFICATION: u8 = 5;

/// Occupational-measure bounds for long-run optimal values of finite
/// controlled stochastic recursions.
#[derive(Parser, Debug)]
#[command(name = "occulimits", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a model and print its sizes.
    Validate(ModelArgs),
    /// v_T and h_eps curves against the bounds d*(y0) <= k*(y0).
    Bounds(BoundsArgs),
    /// min_y v_T and min_y h_eps against k*.
    Ergodic(ErgodicArgs),
    /// Feedback plan from the dual of the augmented program, with verdicts.
    Policy(PolicyArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Builtin {
    Example1,
    Example1Family,
    Example2,
    Constant,
    Random,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// JSON model file.
    #[arg(long, conflicts_with = "builtin")]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    builtin: Option<Builtin>,
    /// Initial state coordinate (also the class of the example1 builtin).
    #[arg(long, allow_hyphen_values = true)]
    y0: Option<f64>,
    /// Initial state by index.
    #[arg(long, conflicts_with = "y0")]
    y0_index: Option<usize>,
    /// Levels of the example1-family builtin.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75,1")]
    levels: Vec<f64>,
    /// Grid exponent of the example2 builtin.
    #[arg(long, default_value_t = 8)]
    m: u32,
    /// Control spacing of the example2 builtin (default: the grid step).
    #[arg(long)]
    control_step: Option<f64>,
    /// Cost of the constant builtin.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    c: f64,
    /// State count of the constant and random builtins.
    #[arg(long, default_value_t = 6)]
    states: usize,
    /// Seed of the random builtin.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "T", value_delimiter = ',', default_value = "1,10,100,1000")]
    ts: Vec<usize>,
    #[arg(long = "eps", value_delimiter = ',', default_value = "0.1,0.01,0.001")]
    epss: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_VI_TOL)]
    vi_tol: f64,
    /// Also require |v_Tmax - k*(y0)| and |h_eps_min - k*(y0)| <= this.
    #[arg(long)]
    limit_slack: Option<f64>,
}

#[derive(Args, Debug)]
struct ErgodicArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "T", value_delimiter = ',', default_value = "10,100,1000,5000")]
    ts: Vec<usize>,
    #[arg(
        long = "eps",
        value_delimiter = ',',
        default_value = "0.1,0.01,0.001,0.0001"
    )]
    epss: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_VI_TOL)]
    vi_tol: f64,
}

#[derive(Args, Debug)]
struct PolicyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// First time at which the optimality conditions are checked.
    #[arg(long = "T0", default_value_t = 1)]
    t0: usize,
    #[arg(long, default_value_t = 200)]
    t_max: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Law-matching tolerance for periodic-regime detection.
    #[arg(long, default_value_t = 1e-10)]
    prg_tol: f64,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Lp(_) | Error::Infeasible(_) | Error::Unbounded(_) | Error::Analysis(_) => {
                EXIT_SOLVER
            }
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

type Outcome = Result<u8, Failure>;

fn random_model(n: usize, seed: u64) -> Result<FiniteModel, Error> {
    if n == 0 {
        return Err(Error::Parameter(
            "random model needs at least one state".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = rng.random_range(1..=3usize);
    let w: Vec<f64> = (0..atoms).map(|_| rng.random::<f64>() + 0.01).collect();
    let total: f64 = w.iter().sum();
    let free = 1.0 - 0.05 * atoms as f64;
    let mut probs: Vec<f64> = w.iter().map(|x| 0.05 + free * x / total).collect();
    let head: f64 = probs[..atoms - 1].iter().sum();
    probs[atoms - 1] = 1.0 - head;
    let mut controls = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(1..=4usize);
        let mut pool: Vec<usize> = (0..4).collect();
        let mut chosen: Vec<usize> = (0..c)
            .map(|_| pool.swap_remove(rng.random_range(0..pool.len())))
            .collect();
        chosen.sort_unstable();
        controls.push(chosen);
    }
    let pairs: usize = controls.iter().map(Vec::len).sum();
    FiniteModel::from_parts(ModelParts {
        states: (0..n).map(|y| vec![y as f64]).collect(),
        control_values: (0..4).map(|u| vec![u as f64]).collect(),
        controls,
        noise: probs
            .iter()
            .enumerate()
            .map(|(i, &p)| NoiseAtom {
                id: i as i64,
                prob: p,
            })
            .collect(),
        kernel: Kernel::Dynamics((0..pairs * atoms).map(|_| rng.random_range(0..n)).collect()),
        cost: (0..pairs).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        initial_state: None,
    })?
    .validated()
}

fn build_model(a: &ModelArgs) -> Result<FiniteModel, Failure> {
    match (&a.model, a.builtin) {
        (Some(path), None) => Ok(load_model(path)?),
        (None, Some(b)) => Ok(match b {
            Builtin::Example1 => {
                let y0 =
                    a.y0.ok_or_else(|| input_error("builtin example1 needs --y0"))?;
                example1_model(y0)?
            }
            Builtin::Example1Family => example1_family(&a.levels)?,
            Builtin::Example2 => {
                let step = a
                    .control_step
                    .unwrap_or_else(|| 2f64.powi(-(a.m.min(64) as i32)));
                example2_model(a.m, step)?
            }
            Builtin::Constant => constant_cost_model(a.states, a.c)?,
            Builtin::Random => random_model(a.states, a.seed)?,
        }),
        _ => Err(input_error("give exactly one of --model and --builtin")),
    }
}

fn select_y0(model: &FiniteModel, a: &ModelArgs) -> Result<usize, Failure> {
    if let Some(i) = a.y0_index {
        if i >= model.num_states() {
            return Err(input_error(format!(
                "--y0-index {i} out of range (model has {} states)",
                model.num_states()
            )));
        }
        return Ok(i);
    }
    if let Some(v) = a.y0 {
        return model
            .find_state(&[v], 1e-9)
            .ok_or_else(|| input_error(format!("no state with coordinate {v}")));
    }
    model
        .initial_state()
        .ok_or_else(|| input_error("model has no initial state; pass --y0 or --y0-index"))
}

fn emit(a: &ModelArgs, text: &str) -> Result<(), Failure> {
    match &a.output {
        Some(path) => fs::write(path, text)
            .map_err(|e| input_error(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(text.as_bytes());
            Ok(())
        }
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn cmd_validate(a: &ModelArgs) -> Outcome {
    let model = match build_model(a) {
        Ok(m) => m,
        Err(f) => {
            eprintln!("invalid model: {}", f.message);
            return Ok(f.code);
        }
    };
    let violations = validate(&model);
    let controls: usize = model.num_pairs();
    let text = match a.format {
        Format::Json => pretty(&json!({
            "valid": violations.is_empty(),
            "states": model.num_states(),
            "pairs": controls,
            "control_values": model.control_values().len(),
            "noise_atoms": model.noise().len(),
            "violations": violations.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        })),
        Format::Csv => {
            let mut csv = Csv::new(&["valid", "states", "pairs", "control_values", "noise_atoms"]);
            csv.row([
                violations.is_empty().to_string(),
                model.num_states().to_string(),
                controls.to_string(),
                model.control_values().len().to_string(),
                model.noise().len().to_string(),
            ]);
            csv.finish()
        }
    };
    emit(a, &text)?;
    if violations.is_empty() {
        Ok(0)
    } else {
        for v in &violations {
            eprintln!("{v}");
        }
        Ok(EXIT_INPUT)
    }
}

fn cmd_bounds(args: &BoundsArgs) -> Outcome {
    let a = &args.model;
    let model = build_model(a)?;
    let y0 = select_y0(&model, a)?;
    let opts = BoundsOptions {
        vi_tol: args.vi_tol,
        limit_slack: args.limit_slack,
    };
    let report = bounds_report(&model, y0, &args.ts, &args.epss, opts)?;
    let text = match a.format {
        Format::Json => pretty(&report.to_json()),
        Format::Csv => report.to_csv(),
    };
    emit(a, &text)?;
    let limit_ok = report.limit_check.as_ref().is_none_or(|l| l.ok);
    if report.sandwich_ok && limit_ok {
        Ok(0)
    } else {
        eprintln!(
            "bound violated: sandwich_ok = {}, limit check ok = {limit_ok}",
            report.sandwich_ok
        );
        Ok(EXIT_SANDWICH)
    }
}

fn cmd_ergodic(args: &ErgodicArgs) -> Outcome {
    let a = &args.model;
    let model = build_model(a)?;
    let table = ergodic_table(&model, &args.ts, &args.epss, args.vi_tol)?;
    let text = match a.format {
        Format::Json => pretty(&table.to_json(&model)),
        Format::Csv => table.to_csv(&model),
    };
    emit(a, &text)?;
    Ok(0)
}

fn cmd_policy(args: &PolicyArgs) -> Outcome {
    let a = &args.model;
    let model = build_model(a)?;
    let y0 = select_y0(&model, a)?;
    let aug = augmented_lp(&model, y0, None)?;
    let dual = aug.dual.clone().ok_or_else(|| Failure {
        code: EXIT_SOLVER,
        message: "augmented program returned no dual".into(),
    })?;
    let plan = greedy_feedback_from_eta(&model, &dual.eta)?;
    let verdict =
        verify_long_run_optimality(&model, &plan, &dual, y0, args.t0, args.t_max, args.tol)?;
    let prg = prg_detect(&model, &plan, y0, args.t_max, args.prg_tol)?;
    let Plan::StationaryDeterministic(sel) = &plan else {
        unreachable!("greedy plans are stationary and deterministic")
    };
    let text = match a.format {
        Format::Json => pretty(&json!({
            "y0": y0,
            "y0_label": model.state_label(y0),
            "k_star_y0": round_sig(aug.optimal_value),
            "mu": round_sig(dual.mu),
            "plan": plan.to_json(&model),
            "certificate_slack": {
                "cost_family": round_sig(verdict.certificate_slack.cost_family),
                "psi_family": round_sig(verdict.certificate_slack.psi_family),
            },
            "cost_residual": verdict.cost_residual.map(round_sig),
            "psi_residual": verdict.psi_residual.map(round_sig),
            "certified": verdict.certified,
            "prg": prg.map(|p| json!({"T0": p.t0, "period": p.period})),
        })),
        Format::Csv => {
            let mut csv = Csv::new(&["state", "control", "eta", "psi"]);
            for (y, &s) in sel.iter().enumerate() {
                csv.row([
                    model.state_label(y),
                    model.control_label(y, s),
                    fmt_num(dual.eta[y]),
                    fmt_num(dual.psi[y]),
                ]);
            }
            csv.finish()
        }
    };
    emit(a, &text)?;
    eprintln!(
        "certified: {}; cost residual {}; psi residual {}; prg: {}",
        verdict.certified,
        verdict.cost_residual.map_or("n/a".into(), fmt_num),
        verdict.psi_residual.map_or("n/a".into(), fmt_num),
        prg.map_or("not detected".into(), |p| format!(
            "T0 = {}, period = {}",
            p.t0, p.period
        )),
    );
    Ok(if verdict.certified {
        0
    } else {
        EXIT_CERTIFICATION
    })
}

fn configure_threads() {
    if let Ok(v) = std::env::var("OCCULIMITS_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => eprintln!("ignoring OCCULIMITS_THREADS={v:?}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let outcome = match &cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Ergodic(a) => cmd_ergodic(a),
        Command::Policy(a) => cmd_policy(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
