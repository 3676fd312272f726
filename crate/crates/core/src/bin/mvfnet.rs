//! `mvfnet`: cost analysis, verification suites, training and evaluation.
//!
//! Exit codes: 0 success, 1 a check failed (or training diverged), 2 bad arguments,
//! 3 configuration error, 4 weight file error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mvfnet::cost::{cost_network, cost_protocol, Convention};
use mvfnet::io::report::{sha256_hex, to_json, CostDocument, EquivDocument, EvalDocument, GradcheckDocument, TrainDocument, REPORT_VERSION};
use mvfnet::io::{ConfigDocument, WeightFile};
use mvfnet::net::{build_network, NetworkSpec, PRESET_NAMES};
use mvfnet::params::Parameterized;
use mvfnet::train::{evaluate, train, History};
use mvfnet::verify::{equivalence_suite, gradcheck_suite, EquivKind, GradTarget, DEFAULT_EQUIV_SEED, DEFAULT_GRAD_SEED, GRAD_TOLERANCE};
use mvfnet::Error;

#[derive(Parser)]
#[command(name = "mvfnet", version, about = "Multi-view fusion modules: cost model, checks, desk-scale training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytical MACs and parameters of a backbone with MVF modules.
    Cost(CostArgs),
    /// Compare every analytic backward pass with central differences.
    Gradcheck(GradcheckArgs),
    /// Check the exact reductions of MVF to TSM, C2D and depthwise SlowOnly.
    Equiv(EquivArgs),
    /// Train the tiny backbone on synthetic motion clips.
    Train(TrainArgs),
    /// Evaluate saved weights with multi-clip, multi-crop inference.
    Eval(EvalArgs),
}

#[derive(clap::Args)]
struct CostArgs {
    #[arg(long, default_value = "r50")]
    backbone: String,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Fraction of channels routed through the MVF module.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Comma-separated stages that get MVF modules, or `none`.
    #[arg(long, default_value = "none")]
    stages: String,
    #[arg(long, default_value_t = 400)]
    classes: usize,
    /// Input side length; defaults to the preset's usual resolution.
    #[arg(long)]
    resolution: Option<usize>,
    /// Spatial crops per clip in the test protocol.
    #[arg(long)]
    crops: Option<usize>,
    /// Clips per video in the test protocol.
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long, value_enum, default_value_t = ConventionArg::Table)]
    convention: ConventionArg,
    /// Emit the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConventionArg {
    Table,
    Macs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    All,
    Ops,
    Mvf,
    Block,
    TinyNet,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = TargetArg::All)]
    target: TargetArg,
    #[arg(long, default_value_t = DEFAULT_GRAD_SEED)]
    seed: u64,
    /// Central-difference step for every target, in [1e-8, 1e-4]. Defaults per target.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Test hook: perturb every analytic gradient before comparing.
    #[arg(long, hide = true)]
    corrupt: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichArg {
    All,
    Tsm,
    C2d,
    Slowonly,
}

#[derive(clap::Args)]
struct EquivArgs {
    #[arg(long, value_enum, default_value_t = WhichArg::All)]
    which: WhichArg,
    #[arg(long, default_value_t = DEFAULT_EQUIV_SEED)]
    seed: u64,
    /// Random inputs per suite. Defaults per suite.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Experiment configuration (JSON).
    config: PathBuf,
    /// Directory for `weights.mvfw`, `history.jsonl` and `report.json`.
    #[arg(long)]
    out: PathBuf,
    /// Print the report to stdout as JSON.
    #[arg(long)]
    json: bool,
    /// Do not print per-epoch progress to stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    config: PathBuf,
    weights: PathBuf,
    #[arg(long)]
    json: bool,
}

/// Failure of a subcommand, carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(flag: &str, msg: impl std::fmt::Display) -> Self {
        Failure { code: 2, message: format!("invalid value for {flag}: {msg}") }
    }

    fn check(msg: impl Into<String>) -> Self {
        Failure { code: 1, message: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 3,
            Error::Weights(_) => 4,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cost(a) => run_cost(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Equiv(a) => run_equiv(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run_cost(a: CostArgs) -> Outcome {
    if !PRESET_NAMES.contains(&a.backbone.as_str()) {
        return Err(Failure::usage("--backbone", format!("unknown backbone '{}' (expected one of {})", a.backbone, PRESET_NAMES.join(", "))));
    }
    let stages: Vec<&str> = match a.stages.trim() {
        "none" | "" => Vec::new(),
        s => s.split(',').map(str::trim).collect(),
    };
    let mut spec = NetworkSpec::new(&a.backbone, a.frames, &stages, a.alpha, a.classes);
    if let Some(r) = a.resolution {
        spec = spec.with_resolution(r);
    } else if a.backbone == "tiny" {
        spec = spec.with_resolution(32);
    }
    if a.frames == 0 {
        return Err(Failure::usage("--frames", "must be >= 1"));
    }
    if a.classes == 0 {
        return Err(Failure::usage("--classes", "must be >= 1"));
    }
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(Failure::usage("--alpha", format!("{} is outside [0, 1]", a.alpha)));
    }
    if let Err(e) = spec.resolve() {
        return Err(Failure::usage("--stages", e));
    }
    let convention = match a.convention {
        ConventionArg::Table => Convention::Table,
        ConventionArg::Macs => Convention::Macs,
    };
    let mut report = cost_network(&spec, convention).map_err(|e| Failure::usage("--resolution", e))?;
    if a.crops.is_some() || a.clips.is_some() {
        let (crops, clips) = (a.crops.unwrap_or(1), a.clips.unwrap_or(1));
        let flag = if crops == 0 { "--crops" } else { "--clips" };
        report.protocol_total = Some(cost_protocol(&report, crops, clips).map_err(|e| Failure::usage(flag, e))?);
    }
    if a.json {
        print!("{}", to_json(&CostDocument::new(report)));
    } else {
        print!("{}", report.render());
    }
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Outcome {
    let targets: Vec<GradTarget> = match a.target {
        TargetArg::All => GradTarget::ALL.to_vec(),
        TargetArg::Ops => vec![GradTarget::Ops],
        TargetArg::Mvf => vec![GradTarget::Mvf],
        TargetArg::Block => vec![GradTarget::Block],
        TargetArg::TinyNet => vec![GradTarget::TinyNet],
    };
    if let Some(e) = a.epsilon {
        if !(1e-8..=1e-4).contains(&e) {
            return Err(Failure::usage("--epsilon", format!("{e} is outside [1e-8, 1e-4]")));
        }
    }
    let mut cases = Vec::new();
    let mut epsilons = Vec::new();
    for &t in &targets {
        let eps = a.epsilon.unwrap_or(t.default_epsilon());
        epsilons.push(eps);
        cases.extend(gradcheck_suite(t, a.seed, eps, a.corrupt)?);
    }
    let doc = GradcheckDocument::new(targets.iter().map(|t| t.name().to_string()).collect(), a.seed, GRAD_TOLERANCE, epsilons, a.corrupt, cases);
    if a.json {
        print!("{}", to_json(&doc));
    } else {
        for c in &doc.cases {
            let refined = if c.refined > 0 { format!(" ({} refined at kinks)", c.refined) } else { String::new() };
            println!("{:<9} {:<34} max_rel_err {:.3e} over {} coords{}{}", c.target, c.case, c.max_rel_err, c.checked, refined, if c.passed { "" } else { "  FAIL" });
        }
        for (t, eps) in targets.iter().zip(&doc.epsilons) {
            let worst = doc.cases.iter().filter(|c| c.target == t.name()).map(|c| c.max_rel_err).fold(0.0, f64::max);
            let verdict = if worst < GRAD_TOLERANCE { "<" } else { ">=" };
            println!("{}: max_rel_err {worst:.3e} {verdict} {GRAD_TOLERANCE:e} (epsilon {eps:e}, seed {})", t.name(), a.seed);
        }
    }
    if doc.passed {
        Ok(())
    } else {
        Err(Failure::check(format!("gradient check failed: max_rel_err {:.3e} >= {GRAD_TOLERANCE:e}", doc.max_rel_err)))
    }
}

fn run_equiv(a: EquivArgs) -> Outcome {
    let kinds: Vec<EquivKind> = match a.which {
        WhichArg::All => EquivKind::ALL.to_vec(),
        WhichArg::Tsm => vec![EquivKind::Tsm],
        WhichArg::C2d => vec![EquivKind::C2d],
        WhichArg::Slowonly => vec![EquivKind::Slowonly],
    };
    if a.trials == Some(0) {
        return Err(Failure::usage("--trials", "must be >= 1"));
    }
    let results = kinds
        .iter()
        .map(|&k| equivalence_suite(k, a.seed, a.trials.unwrap_or(k.default_trials())))
        .collect::<mvfnet::Result<Vec<_>>>()?;
    let doc = EquivDocument::new(a.seed, results);
    if a.json {
        print!("{}", to_json(&doc));
    } else {
        for r in &doc.results {
            let verdict = if r.passed { "verified" } else { "FAILED" };
            println!("{}: {verdict} over {} inputs, max abs deviation {:e}", r.which, r.trials, r.max_abs_deviation);
            if r.which == EquivKind::C2d.name() {
                println!("  {} of the compared outputs were not bitwise identical", r.bitwise_mismatches);
            }
            println!("  {}", r.description);
        }
    }
    if doc.passed {
        Ok(())
    } else {
        Err(Failure::check("equivalence check failed"))
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::check(format!("cannot write {}: {e}", path.display())))
}

fn run_train(a: TrainArgs) -> Outcome {
    let config = ConfigDocument::load(&a.config)?;
    let spec = config.network_spec();
    let quiet = a.quiet;
    let (net, history) = train::<f32>(&spec, &config.task, &config.train, |r| {
        if !quiet {
            let pair = r.val_pair_acc.map(|p| format!(" val_pair_acc {p:.4}")).unwrap_or_default();
            eprintln!("epoch {:>3} lr {:.2e} loss {:.4} train_acc {:.4} val_acc {:.4}{pair}", r.epoch, r.lr, r.train_loss, r.train_acc, r.val_acc);
        }
    })?;
    fs::create_dir_all(&a.out).map_err(|e| Failure::check(format!("cannot create {}: {e}", a.out.display())))?;
    let weights = WeightFile::from_params(&net).to_bytes()?;
    write(&a.out.join("weights.mvfw"), &weights)?;
    write(&a.out.join("history.jsonl"), History::to_json_lines(&history).as_bytes())?;
    let last = history.last();
    let doc = TrainDocument {
        kind: "train".into(),
        version: REPORT_VERSION,
        config,
        parameters: net.param_count(),
        final_val_acc: last.map_or(0.0, |r| r.val_acc),
        final_val_pair_acc: last.and_then(|r| r.val_pair_acc),
        epochs: history.epochs,
        weights_sha256: sha256_hex(&weights),
    };
    let json = to_json(&doc);
    write(&a.out.join("report.json"), json.as_bytes())?;
    if a.json {
        print!("{json}");
    } else {
        let pair = doc.final_val_pair_acc.map(|p| format!(", reversed-pair accuracy {p:.4}")).unwrap_or_default();
        println!("trained {} parameters for {} epochs: val accuracy {:.4}{pair}", doc.parameters, doc.epochs.len(), doc.final_val_acc);
        println!("wrote {}", a.out.join("weights.mvfw").display());
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Outcome {
    let config = ConfigDocument::load(&a.config)?;
    let bytes = fs::read(&a.weights).map_err(|e| Error::Weights(format!("cannot read {}: {e}", a.weights.display())))?;
    let file = WeightFile::from_bytes(&bytes)?;
    let mut net = build_network::<f32>(&config.network_spec(), 0)?;
    file.apply_to(&mut net)?;
    let report = evaluate(&net, &config.task, &config.eval)?;
    let doc = EvalDocument { kind: "eval".into(), version: REPORT_VERSION, config, weights_sha256: sha256_hex(&bytes), report };
    if a.json {
        print!("{}", to_json(&doc));
    } else {
        let r = &doc.report;
        let pair = r.pair_accuracy.map(|p| format!(", reversed-pair accuracy {p:.4}")).unwrap_or_default();
        println!("{} videos, {}: accuracy {:.4}{pair}", r.videos, r.protocol, r.accuracy);
    }
    Ok(())
}
