use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sit_core::control::law_diagnostics;
use sit_core::error::RunError;
use sit_core::run::{
    analyze_stored, execute, read_text, run_sweep, summary, sweep_csv, sweep_point, to_json,
    write_artifacts, InitialCondition, RunConfig, RunRecord, SweepAxis, DEFAULT_SWEEP_CAP,
};
use sit_core::{ControlLaw, Method, ModelParams, SitState};

const EXIT_USAGE: u8 = 2;
const EXIT_INTEGRATION: u8 = 3;
const EXIT_ANALYSIS: u8 = 4;

#[derive(Parser)]
#[command(name = "sit", version, about = "Sterile insect technique feedback control: simulate, sweep, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one run and write CSV, events sidecar and stability report.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Do not print the report summary.
        #[arg(long)]
        quiet: bool,
    },
    /// Run the cross product of one or more parameter axes.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Axis as `path=v1,v2,...`, e.g. `law.psi=30,60,120` or `params.gamma=0.5,1`.
        #[arg(long = "axis")]
        axes: Vec<String>,
        /// Largest allowed number of grid points.
        #[arg(long, default_value_t = DEFAULT_SWEEP_CAP)]
        cap: usize,
        /// Summary CSV path (default `<out>/<prefix>.sweep.csv`).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Recompute the stability report of a stored run.
    Analyze {
        /// Trajectory CSV.
        #[arg(long)]
        csv: PathBuf,
        /// Events sidecar written next to the CSV.
        #[arg(long)]
        events: PathBuf,
        #[command(flatten)]
        law: LawArgs,
        /// Parameter file the run must have used.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print derived quantities and control thresholds.
    Params {
        #[arg(long)]
        params: Option<PathBuf>,
        /// Parameter override `key=value` (keys as in the parameter file).
        #[arg(long = "set")]
        sets: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LawName {
    Zero,
    Constant,
    Emms,
    Em,
}

#[derive(Args, Default)]
struct LawArgs {
    #[arg(long, value_enum)]
    law: Option<LawName>,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Start from a named configuration: fig1, fig2 or persistence.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML run file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter file (flat `key = value`); replaces the config's parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    law: LawArgs,
    /// `persistence` or `E,F,M,Fs,Ms`.
    #[arg(long)]
    x0: Option<String>,
    #[arg(long, value_enum)]
    method: Option<MethodName>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    /// Sample spacing of the recorded trajectory (days).
    #[arg(long)]
    stride: Option<f64>,
    /// Halt the run at the first time E <= 1.
    #[arg(long)]
    stop_on_extinction: bool,
    /// Numeric override `path=value`, e.g. `params.gamma=0.5`.
    #[arg(long = "set")]
    sets: Vec<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    prefix: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodName {
    Rk4,
    Rk45,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = match e {
            RunError::Integration(_) => EXIT_INTEGRATION,
            RunError::Mismatch(_) | RunError::Analysis(_) => EXIT_ANALYSIS,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { run, quiet } => simulate(&run, quiet),
        Command::Sweep {
            run,
            axes,
            cap,
            summary,
        } => sweep(&run, &axes, cap, summary),
        Command::Analyze {
            csv,
            events,
            law,
            params,
            out,
        } => analyze(&csv, &events, &law, params.as_deref(), out.as_deref()),
        Command::Params { params, sets } => print_params(params.as_deref(), &sets),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn simulate(args: &RunArgs, quiet: bool) -> Result<(), Failure> {
    let cfg = build_config(args)?;
    let out = execute(&cfg)?;
    let paths = write_artifacts(&cfg, &out)?;
    if !quiet {
        print!("{}", summary(&out.report, &cfg.params));
        for p in [paths.csv, paths.events, paths.report].into_iter().flatten() {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn sweep(args: &RunArgs, axes: &[String], cap: usize, summary_path: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = build_config(args)?;
    let axes = axes
        .iter()
        .map(|a| SweepAxis::parse(a))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = run_sweep(&cfg, &axes, cap)?;
    let path = summary_path.unwrap_or_else(|| {
        PathBuf::from(&cfg.outputs.dir).join(format!("{}.sweep.csv", cfg.outputs.prefix))
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(&path, sweep_csv(&axes, &rows))
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("{} runs, {} failed; wrote {}", rows.len(), failed, path.display());
    if failed > 0 {
        return Err(Failure {
            code: EXIT_INTEGRATION,
            message: format!("{failed} sweep runs failed; see the status column"),
        });
    }
    Ok(())
}

fn analyze(
    csv: &std::path::Path,
    events: &std::path::Path,
    law_args: &LawArgs,
    params: Option<&std::path::Path>,
    out: Option<&std::path::Path>,
) -> Result<(), Failure> {
    let record = RunRecord::from_json(&read_text(events)?)?;
    let csv_text = read_text(csv)?;
    let params = params.map(ModelParams::load).transpose().map_err(RunError::from)?;
    let law = if law_args.is_empty() {
        None
    } else {
        let p = params.as_ref().unwrap_or(&record.config.params);
        Some(
            build_law(law_args, &record.config.law, p).map_err(|m| Failure {
                code: EXIT_ANALYSIS,
                message: format!("law flags do not match the recorded run: {m}"),
            })?,
        )
    };
    let report = analyze_stored(&csv_text, &record, params.as_ref(), law.as_ref())?;
    let json = to_json(&report);
    match out {
        Some(path) => std::fs::write(path, json).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?,
        None => print!("{json}"),
    }
    Ok(())
}

fn print_params(path: Option<&std::path::Path>, sets: &[String]) -> Result<(), Failure> {
    let params = match path {
        Some(p) => ModelParams::load(p).map_err(RunError::from)?,
        None => ModelParams::table1(),
    };
    let mut cfg = RunConfig::new(params, ControlLaw::Zero);
    for s in sets {
        let axis = SweepAxis::parse(&format!("params.{s}"))?;
        if axis.values.len() != 1 {
            return Err(Failure::usage(format!("`--set {s}` takes a single value")));
        }
        cfg = sweep_point(&cfg, std::slice::from_ref(&axis), &axis.values)?;
    }
    let params = cfg.params;
    let emms = law_diagnostics(&ControlLaw::fig1(&params), &params).map_err(|e| Failure::usage(e.to_string()))?;
    let em = law_diagnostics(&ControlLaw::fig2(&params), &params).map_err(|e| Failure::usage(e.to_string()))?;
    println!("{}", params.to_toml_string().trim_end());
    println!();
    print!("{}", to_json(&params.derived()));
    println!("delta_hat = {}", params.delta_hat());
    println!("gain threshold (R-1)/gamma = {}", emms.gain_threshold);
    println!("uniqueness threshold = {}", emms.uniqueness_threshold);
    println!("EMMs psi = 2R: T0 = {} d", emms.dominance_time.unwrap_or(f64::NAN));
    println!(
        "EM sigma = 2R, alpha = 4R delta_hat: T_e = {} d (certified {} d)",
        em.dominance_time.unwrap_or(f64::NAN),
        em.certified_dominance_time.unwrap_or(f64::NAN)
    );
    Ok(())
}

impl LawArgs {
    fn is_empty(&self) -> bool {
        self.law.is_none()
            && self.psi.is_none()
            && self.alpha.is_none()
            && self.sigma.is_none()
            && self.rate.is_none()
    }
}

/// Applies law flags on top of `base`. Gains not given on the command line
/// are taken from `base` when it is the same family.
fn build_law(args: &LawArgs, base: &ControlLaw, params: &ModelParams) -> Result<ControlLaw, String> {
    let kind = match args.law {
        Some(k) => k,
        None => match base {
            ControlLaw::Zero => LawName::Zero,
            ControlLaw::Constant { .. } => LawName::Constant,
            ControlLaw::Emms { .. } => LawName::Emms,
            ControlLaw::Em { .. } => LawName::Em,
        },
    };
    let stray = |names: &[(&str, Option<f64>)]| -> Result<(), String> {
        match names.iter().find(|(_, v)| v.is_some()) {
            Some((n, _)) => Err(format!("--{n} does not apply to the `{}` law", law_name(kind))),
            None => Ok(()),
        }
    };
    let law = match kind {
        LawName::Zero => {
            stray(&[("psi", args.psi), ("alpha", args.alpha), ("sigma", args.sigma), ("rate", args.rate)])?;
            ControlLaw::Zero
        }
        LawName::Constant => {
            stray(&[("psi", args.psi), ("alpha", args.alpha), ("sigma", args.sigma)])?;
            let rate = match (args.rate, base) {
                (Some(r), _) => r,
                (None, ControlLaw::Constant { rate }) => *rate,
                _ => return Err("--law constant needs --rate".into()),
            };
            ControlLaw::Constant { rate }
        }
        LawName::Emms => {
            stray(&[("alpha", args.alpha), ("sigma", args.sigma), ("rate", args.rate)])?;
            let psi = match (args.psi, base) {
                (Some(p), _) => p,
                (None, ControlLaw::Emms { psi }) => *psi,
                _ => 2.0 * params.offspring_number(),
            };
            ControlLaw::Emms { psi }
        }
        LawName::Em => {
            stray(&[("psi", args.psi), ("rate", args.rate)])?;
            let (base_alpha, base_sigma) = match base {
                ControlLaw::Em { alpha, sigma } => (*alpha, *sigma),
                _ => match ControlLaw::fig2(params) {
                    ControlLaw::Em { alpha, sigma } => (alpha, sigma),
                    _ => unreachable!(),
                },
            };
            ControlLaw::Em {
                alpha: args.alpha.unwrap_or(base_alpha),
                sigma: args.sigma.unwrap_or(base_sigma),
            }
        }
    };
    law.validate().map_err(|e| e.to_string())?;
    Ok(law)
}

fn law_name(k: LawName) -> &'static str {
    match k {
        LawName::Zero => "zero",
        LawName::Constant => "constant",
        LawName::Emms => "emms",
        LawName::Em => "em",
    }
}

/// Preset or config file, then parameter file, law flags, integrator flags
/// and `--set` overrides, in that order.
fn build_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), _) => RunConfig::preset(name)
            .ok_or_else(|| Failure::usage(format!("unknown preset `{name}` (fig1, fig2, persistence)")))?,
        (None, Some(path)) => RunConfig::load(path)?,
        (None, None) => RunConfig::new(ModelParams::table1(), ControlLaw::Zero),
    };
    if let Some(p) = &args.params {
        cfg.params = ModelParams::load(p).map_err(RunError::from)?;
    }
    if !args.law.is_empty() {
        cfg.law = build_law(&args.law, &cfg.law, &cfg.params).map_err(Failure::usage)?;
    }
    if let Some(x0) = &args.x0 {
        cfg.x0 = parse_x0(x0)?;
    }
    let ig = &mut cfg.integrator;
    if let Some(m) = args.method {
        ig.method = match m {
            MethodName::Rk4 => Method::Rk4,
            MethodName::Rk45 => Method::Rk45,
        };
    }
    let overrides = [
        (&mut ig.t_max, args.t_max),
        (&mut ig.dt_init, args.dt),
        (&mut ig.rel_tol, args.rel_tol),
        (&mut ig.abs_tol, args.abs_tol),
        (&mut ig.record_stride, args.stride),
    ];
    for (slot, value) in overrides {
        if let Some(v) = value {
            *slot = v;
        }
    }
    if args.stop_on_extinction {
        ig.stop_on_extinction = true;
    }
    if let Some(dir) = &args.out {
        cfg.outputs.dir = dir.clone();
    }
    if let Some(prefix) = &args.prefix {
        cfg.outputs.prefix = prefix.clone();
    }
    for s in &args.sets {
        let axis = SweepAxis::parse(s)?;
        if axis.values.len() != 1 {
            return Err(Failure::usage(format!("`--set {s}` takes a single value")));
        }
        cfg = sweep_point(&cfg, std::slice::from_ref(&axis), &axis.values)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_x0(text: &str) -> Result<InitialCondition, Failure> {
    if text.trim() == "persistence" {
        return Ok(InitialCondition::Persistence);
    }
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::usage(format!("--x0 `{text}`: expected `persistence` or E,F,M,Fs,Ms")))?;
    let arr: [f64; 5] = values
        .try_into()
        .map_err(|_| Failure::usage(format!("--x0 `{text}`: expected five components")))?;
    Ok(InitialCondition::State(SitState::from_array(arr)))
}
