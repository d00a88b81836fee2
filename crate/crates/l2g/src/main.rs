//! Command-line front end: dataset generation, training, evaluation,
//! sampling, and the grounding benchmarks, all seeded and reproducible.
//!
//! Options resolve in three layers: an explicit flag wins, then a `key=value`
//! config file (`--config`, or the file named by `L2G_CONFIG`), then the
//! built-in default. Commands that draw randomness have no default seed —
//! a run either states its seed or does not happen.
//!
//! Exit codes: 0 on success, 1 on runtime failures (missing files, corrupt
//! models), 2 on usage errors (bad flags, bad config, nonsensical counts).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use l2g::config::{first_unknown_key, parse_config};
use l2g::corpus::{build_splits, read_jsonl, write_jsonl, SplitSpec};
use l2g::evalmod::{evaluate_testsets, EvalReport};
use l2g::goalgen::{train, CVAEModel, Hyperparams, ModelSampler};
use l2g::grounding::{
    expression_protocol, sequence_protocol, transition_protocol, ExecutorConfig, ProtocolReport,
};
use l2g::oracle::{build_oracle, compatible_set};
use l2g::semantics::{
    enumerate_structures, is_valid, realize, valid_configs, ObjectId, SemanticConfig,
    StructureClass, ThirdPattern,
};

#[derive(Parser)]
#[command(
    name = "l2g",
    version,
    about = "Language-conditioned goal generation for a three-block tabletop world"
)]
struct Cli {
    /// Key=value config file supplying defaults for any long option
    /// (falls back to the file named by L2G_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the 35 valid configurations with structure labels.
    Enumerate,
    /// Generate a seeded triplet dataset (JSONL) plus its split manifest.
    GenData(GenDataArgs),
    /// Train a goal generator and save its weights.
    Train(TrainArgs),
    /// Score compatibility probability and coverage over the five test splits.
    Eval(EvalArgs),
    /// Draw goal configurations for one (configuration, instruction) pair.
    Sample(SampleArgs),
    /// Try-again benchmark over all 102 instructions.
    TransEval(ProtocolArgs),
    /// Try-again benchmark over sampled logical expressions.
    ExprEval(ProtocolArgs),
    /// Consecutive-instruction benchmark without resets.
    SeqEval(ProtocolArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of triplets to generate [default: 5000].
    #[arg(long)]
    n: Option<usize>,
    /// Dataset RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSONL path; the split manifest lands next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (JSONL from gen-data).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Where to save the trained weights.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initialization/shuffling/sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Recurrent and MLP hidden width [default: 128].
    #[arg(long)]
    hidden: Option<usize>,
    /// Latent dimensionality [default: 27].
    #[arg(long)]
    latent: Option<usize>,
    /// Word-embedding width [default: 100].
    #[arg(long)]
    embed: Option<usize>,
    /// KL weight [default: 0.6].
    #[arg(long)]
    beta: Option<f64>,
    /// Adam learning rate [default: 0.0005].
    #[arg(long)]
    lr: Option<f64>,
    /// Minibatch size [default: 128].
    #[arg(long)]
    batch: Option<usize>,
    /// Training epochs [default: 150].
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset the splits are rebuilt from (JSONL from gen-data).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Goal draws per test entry and metric [default: 100].
    #[arg(long)]
    draws: Option<usize>,
    /// Evaluation RNG seed (per-entry streams are seed ⊕ entry index).
    #[arg(long)]
    seed: Option<u64>,
    /// Threads for the per-entry fan-out; results do not depend on it
    /// [default: 1].
    #[arg(long)]
    workers: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Render a table instead of JSON on stdout.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct SampleArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Initial configuration as a 9-bit string.
    #[arg(long)]
    ci: Option<String>,
    /// Instruction sentence, e.g. "put red close_to green".
    #[arg(long)]
    s: Option<String>,
    /// Number of goals to draw [default: 5].
    #[arg(long)]
    n: Option<usize>,
    /// Sampling RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Annotate each goal with validity and compatibility instead of JSON.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct ProtocolArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Executor failure probability in [0, 1] [default: 0].
    #[arg(long)]
    p_fail: Option<f64>,
    /// trans-eval: episodes per sentence [default: 5].
    /// expr-eval: total expression episodes [default: 500].
    #[arg(long)]
    episodes: Option<usize>,
    /// seq-eval: number of sequences [default: 20].
    #[arg(long)]
    sequences: Option<usize>,
    /// Protocol RNG seed (drives episodes and the goal sampler).
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Render a summary line instead of JSON on stdout.
    #[arg(long)]
    pretty: bool,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    fn runtime(msg: impl Display) -> Self {
        CliError::Runtime(msg.to_string())
    }
}

fn main() -> ExitCode {
    // Die quietly on SIGPIPE like other line-oriented tools, instead of
    // panicking when a downstream `head` closes the pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Flag → config file → default resolution for one command invocation.
struct Resolver {
    file: BTreeMap<String, String>,
}

impl Resolver {
    fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os("L2G_CONFIG").map(PathBuf::from),
        };
        let Some(path) = path else {
            return Ok(Resolver { file: BTreeMap::new() });
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::runtime(format!("cannot read config {}: {e}", path.display())))?;
        let file = parse_config(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        if let Some(key) = first_unknown_key(&file) {
            return Err(CliError::usage(format!("config {}: unknown key {key:?}", path.display())));
        }
        Ok(Resolver { file })
    }

    /// The value for `key`: the flag if given, else the config file entry,
    /// else nothing.
    fn opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("config key {key}={raw:?}: {e}"))),
            None => Ok(None),
        }
    }

    fn or_default<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    fn required<T>(&self, flag: Option<T>, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.opt(flag, key)?
            .ok_or_else(|| CliError::usage(format!("missing --{}", key.replace('_', "-"))))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let resolver = Resolver::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Enumerate => {
            enumerate_cmd();
            Ok(())
        }
        Cmd::GenData(args) => gen_data_cmd(args, &resolver),
        Cmd::Train(args) => train_cmd(args, &resolver),
        Cmd::Eval(args) => eval_cmd(args, &resolver),
        Cmd::Sample(args) => sample_cmd(args, &resolver),
        Cmd::TransEval(args) => protocol_cmd(args, &resolver, Protocol::Transition),
        Cmd::ExprEval(args) => protocol_cmd(args, &resolver, Protocol::Expression),
        Cmd::SeqEval(args) => protocol_cmd(args, &resolver, Protocol::Sequence),
    }
}

fn structure_label(s: &StructureClass) -> String {
    match *s {
        StructureClass::Flat { pattern } => {
            let names = ["red+green", "red+blue", "green+blue"];
            let close: Vec<&str> = names
                .iter()
                .zip(pattern)
                .filter_map(|(name, bit)| bit.then_some(*name))
                .collect();
            if close.is_empty() {
                "flat".to_string()
            } else {
                format!("flat {}", close.join(" "))
            }
        }
        StructureClass::Stack2 { top, bottom, third } => {
            let placement = match third {
                ThirdPattern::Isolated => "apart",
                ThirdPattern::NearBottom => "near base",
                ThirdPattern::NearBoth => "near both",
            };
            let spare = ObjectId::ALL
                .into_iter()
                .find(|&o| o != top && o != bottom)
                .expect("three distinct ids");
            format!("stack {} on {}, {} {placement}", top.word(), bottom.word(), spare.word())
        }
        StructureClass::Stack3 { top, mid, bottom } => {
            format!("stack {} on {} on {}", top.word(), mid.word(), bottom.word())
        }
        StructureClass::Pyramid { top } => format!("pyramid {} on top", top.word()),
    }
}

fn enumerate_cmd() {
    let labels: BTreeMap<SemanticConfig, String> = enumerate_structures()
        .iter()
        .map(|s| (realize(s), structure_label(s)))
        .collect();
    for c in valid_configs() {
        println!("{c} {}", labels[c]);
    }
}

fn gen_data_cmd(args: GenDataArgs, resolver: &Resolver) -> Result<(), CliError> {
    let n = resolver.or_default(args.n, "n", 5000)?;
    if n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let seed: u64 = resolver.required(args.seed, "seed")?;
    let out: PathBuf = resolver.required(args.out, "out")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dataset = l2g::corpus::generate_dataset(n, &mut rng);
    write_jsonl(&out, &dataset).map_err(|e| CliError::runtime(&e))?;

    let manifest_path = out.with_extension("splits.json");
    let manifest = build_splits(&dataset).manifest();
    let json = serde_json::to_string(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json + "\n")
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", manifest_path.display())))?;

    println!("wrote {n} triplets to {}", out.display());
    println!("wrote split manifest to {}", manifest_path.display());
    Ok(())
}

fn load_splits(data: &Path) -> Result<SplitSpec, CliError> {
    let dataset =
        read_jsonl(data).map_err(|e| CliError::runtime(format!("{}: {e}", data.display())))?;
    Ok(build_splits(&dataset))
}

fn load_model(path: &Path) -> Result<CVAEModel, CliError> {
    CVAEModel::load(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn train_cmd(args: TrainArgs, resolver: &Resolver) -> Result<(), CliError> {
    let data: PathBuf = resolver.required(args.data, "data")?;
    let out: PathBuf = resolver.required(args.out, "out")?;
    let d = Hyperparams::default();
    let hp = Hyperparams {
        hidden: resolver.or_default(args.hidden, "hidden", d.hidden)?,
        latent: resolver.or_default(args.latent, "latent", d.latent)?,
        embed: resolver.or_default(args.embed, "embed", d.embed)?,
        beta: resolver.or_default(args.beta, "beta", d.beta)?,
        lr: resolver.or_default(args.lr, "lr", d.lr)?,
        batch: resolver.or_default(args.batch, "batch", d.batch)?,
        epochs: resolver.or_default(args.epochs, "epochs", d.epochs)?,
        seed: resolver.required(args.seed, "seed")?,
    };
    hp.validate().map_err(CliError::usage)?;

    let splits = load_splits(&data)?;
    let run = train(&splits.train, &hp);
    run.model.save(&out).map_err(|e| CliError::runtime(&e))?;

    let last = run.log.last().expect("training logs at least one epoch");
    println!(
        "trained {} epochs on {} triplets: bce {:.4}  kl {:.4}  loss {:.4}",
        hp.epochs,
        splits.train.len(),
        last.mean_bce,
        last.mean_kl,
        last.mean_total,
    );
    println!("saved model to {}", out.display());
    Ok(())
}

/// Writes `report` as one JSON line to `--out` or stdout; `--pretty` swaps
/// the stdout copy for `table`.
fn emit(
    report: &impl serde::Serialize,
    out: Option<&Path>,
    pretty: Option<String>,
) -> Result<(), CliError> {
    let json = serde_json::to_string(report).expect("reports serialize");
    match out {
        Some(path) => {
            std::fs::write(path, json + "\n")
                .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
            if let Some(table) = pretty {
                println!("{table}");
            }
        }
        None => match pretty {
            Some(table) => println!("{table}"),
            None => println!("{json}"),
        },
    }
    Ok(())
}

fn eval_table(report: &EvalReport) -> String {
    let mut s = format!("test  entries     CP    Cov   (n={}, seed={})", report.n, report.seed);
    for row in &report.tests {
        s += &format!("\n   {}  {:7}  {:.3}  {:.3}", row.test_id, row.n_entries, row.cp_mean, row.cov_mean);
    }
    s
}

fn eval_cmd(args: EvalArgs, resolver: &Resolver) -> Result<(), CliError> {
    let model_path: PathBuf = resolver.required(args.model, "model")?;
    let data: PathBuf = resolver.required(args.data, "data")?;
    let draws = resolver.or_default(args.draws, "draws", 100)?;
    let seed: u64 = resolver.required(args.seed, "seed")?;
    let workers = resolver.or_default(args.workers, "workers", 1)?;
    if draws == 0 || workers == 0 {
        return Err(CliError::usage("--draws and --workers must be at least 1"));
    }

    let model = load_model(&model_path)?;
    let splits = load_splits(&data)?;
    let oracle = build_oracle();
    let report = evaluate_testsets(&model, &oracle, &splits, draws, seed, workers)
        .map_err(|e| CliError::runtime(&e))?;

    emit(&report, args.out.as_deref(), args.pretty.then(|| eval_table(&report)))
}

fn sample_cmd(args: SampleArgs, resolver: &Resolver) -> Result<(), CliError> {
    let model_path: PathBuf = resolver.required(args.model, "model")?;
    let ci: String = resolver.required(args.ci, "ci")?;
    let sentence: String = resolver.required(args.s, "s")?;
    let n = resolver.or_default(args.n, "n", 5)?;
    let seed: u64 = resolver.required(args.seed, "seed")?;
    if n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }

    let c_i: SemanticConfig = ci.parse().map_err(|e| CliError::usage(format!("--ci: {e}")))?;
    if !is_valid(&c_i) {
        return Err(CliError::usage(format!("--ci: {c_i} is not one of the 35 valid configurations")));
    }
    let model = load_model(&model_path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let goals = model
        .sample_goals(&c_i, &sentence, n, &mut rng)
        .map_err(|e| CliError::usage(format!("--s: {e}")))?;

    if args.pretty {
        // Membership marks need the brute-force set, which needs a known,
        // applicable instruction; fall back to validity-only marks otherwise.
        let compatible = l2g::instructions::instruction_set()
            .find(&sentence)
            .and_then(|s| compatible_set(&c_i, s.meaning).ok());
        if compatible.is_none() {
            eprintln!("note: instruction not applicable at {c_i}; compatibility marks omitted");
        }
        for g in &goals {
            let validity = if is_valid(g) { "valid  " } else { "invalid" };
            let membership = match &compatible {
                Some(set) if set.contains(g) => "  compatible",
                Some(_) => "  incompatible",
                None => "",
            };
            println!("{g} {validity}{membership}");
        }
        return Ok(());
    }

    #[derive(serde::Serialize)]
    struct SampleReport {
        ci: String,
        s: String,
        seed: u64,
        goals: Vec<String>,
    }
    let report = SampleReport {
        ci: c_i.to_string(),
        s: sentence,
        seed,
        goals: goals.iter().map(|g| g.to_string()).collect(),
    };
    emit(&report, None, None)
}

enum Protocol {
    Transition,
    Expression,
    Sequence,
}

fn protocol_cmd(args: ProtocolArgs, resolver: &Resolver, which: Protocol) -> Result<(), CliError> {
    let model_path: PathBuf = resolver.required(args.model, "model")?;
    let p_fail = resolver.or_default(args.p_fail, "p_fail", 0.0)?;
    let seed: u64 = resolver.required(args.seed, "seed")?;
    if !(0.0..=1.0).contains(&p_fail) {
        return Err(CliError::usage("--p-fail must lie in [0, 1]"));
    }

    let model = load_model(&model_path)?;
    let cfg = ExecutorConfig::stochastic(p_fail);
    // Two independent streams from one seed: episode randomness and the goal
    // sampler must not share a generator, or draw counts would couple them.
    let mut episode_rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut source = ModelSampler::new(&model, sampler_rng);

    let (report, table): (ProtocolReport, String) = match which {
        Protocol::Transition => {
            let episodes = resolver.or_default(args.episodes, "episodes", 5)?;
            if episodes == 0 {
                return Err(CliError::usage("--episodes must be at least 1"));
            }
            let rates = transition_protocol(&mut source, &cfg, episodes, &mut episode_rng);
            let table = format!(
                "transition: SR1 {:.3}  SR5 {:.3}  ({} episodes, p_fail {p_fail}, seed {seed})",
                rates.sr1, rates.sr5, rates.episodes,
            );
            (rates.report("transition", &cfg, seed), table)
        }
        Protocol::Expression => {
            let episodes = resolver.or_default(args.episodes, "episodes", 500)?;
            if episodes == 0 {
                return Err(CliError::usage("--episodes must be at least 1"));
            }
            let rates = expression_protocol(&mut source, &cfg, episodes, &mut episode_rng);
            let table = format!(
                "expression: SR1 {:.3}  SR5 {:.3}  ({} episodes, p_fail {p_fail}, seed {seed})",
                rates.sr1, rates.sr5, rates.episodes,
            );
            (rates.report("expression", &cfg, seed), table)
        }
        Protocol::Sequence => {
            let sequences = resolver.or_default(args.sequences, "sequences", 20)?;
            if sequences == 0 {
                return Err(CliError::usage("--sequences must be at least 1"));
            }
            let outcome = sequence_protocol(&mut source, &cfg, sequences, &mut episode_rng);
            let table = format!(
                "sequence: mean {:.2} consecutive successes over {} sequences (cap {}, p_fail {p_fail}, seed {seed})",
                outcome.mean_successes, outcome.sequences, outcome.cap,
            );
            (outcome.report(&cfg, seed), table)
        }
    };

    emit(&report, args.out.as_deref(), args.pretty.then_some(table))
}
