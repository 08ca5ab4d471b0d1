//! `socialgen`: synthesize or import interaction data, train, generate and evaluate.
//!
//! Exit codes: 0 success, 1 validation failure, 2 I/O or parse error.
//! Errors go to stderr as `ERROR <code>: <message>`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use socialgen::config::RunConfig;
use socialgen::dataio::{
    encode_sample, import_sample_dir, import_skeleton_file, pairs_from_encoded, read_pairs, split_dataset,
    synthesize_dataset, write_pairs, write_sample_file, DataError, DatasetManifest, EncodedSample,
    InteractionSample, JointIndexMap, RobotRepr, Split, TrainingPair, TARGET_HZ,
};
use socialgen::eval::evaluate_dataset;
use socialgen::model::{ModelConfig, ModelParams, Variant};
use socialgen::par::Exec;
use socialgen::skeleton::{LinkLengths, ANGLE_NAMES};
use socialgen::train::{self, checkpoint_path, gradcheck, train_loop, TrainConfig, TrainState};
use socialgen::Error;

#[derive(Parser, Debug)]
#[command(name = "socialgen", version, about = "Nonverbal robot behavior generation from interaction data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic interaction dataset, one sample file per interaction.
    Synth(SynthArgs),
    /// Turn interaction samples into a training-pair archive.
    Extract(ExtractArgs),
    /// Write a person-disjoint train/test manifest for a sample directory.
    Split(SplitArgs),
    /// Train a model; writes epoch checkpoints and report.tsv.
    Train(TrainArgs),
    /// Generate the robot's behavior for one interaction sample.
    Generate(GenerateArgs),
    /// Closed-loop evaluation with the S1/S2/S3 metrics.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences at toy sizes.
    Gradcheck(GradcheckArgs),
}

fn dflt(what: &str, value: impl std::fmt::Display) -> String {
    format!("{what} [default: {value}]")
}

/// Overrides layered over the built-in defaults and the `--config` file.
#[derive(Args, Debug, Clone, Default)]
struct Overrides {
    /// TOML file with optional [model], [train], [synth] and [data] tables
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64", help = dflt("Random seed", 0))]
    seed: Option<u64>,
    #[arg(long, value_name = "NAME", help = dflt("Model variant: full, original-gan, no-gan, user-positions or robot-vectors", Variant::Full))]
    variant: Option<Variant>,
    #[arg(long, value_name = "N", help = dflt("Training epochs", TrainConfig::default().epochs))]
    epochs: Option<usize>,
    #[arg(long, value_name = "N", help = dflt("Pairs per batch", TrainConfig::default().batch_size))]
    batch_size: Option<usize>,
    #[arg(long, value_name = "F", allow_negative_numbers = true, help = dflt("Adam learning rate", TrainConfig::default().lr))]
    lr: Option<f64>,
    #[arg(long, value_name = "N", help = dflt("User window length", ModelConfig::default().m))]
    m: Option<usize>,
    #[arg(long, value_name = "N", help = dflt("Predicted robot steps", ModelConfig::default().n))]
    n: Option<usize>,
    #[arg(long, value_name = "N", help = dflt("Offset of the discriminator's future window", ModelConfig::default().l))]
    l: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn keeps(self, manifest: Option<&DatasetManifest>, id: &str) -> bool {
        let Some(m) = manifest else { return true };
        match self {
            SplitArg::All => true,
            SplitArg::Train => m.split_of(id) == Some(Split::Train),
            SplitArg::Test => m.split_of(id) == Some(Split::Test),
        }
    }
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Sample file or directory of `*.txt` sample files
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Source joint layout: identity, kinect-v2, or nine comma-separated indices (`-` = missing)
    #[arg(long, value_name = "MAP", default_value = "identity")]
    joint_map: String,
    /// Manifest restricting the samples to one split
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    over: Overrides,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "N", help = dflt("Samples per scenario", 10))]
    samples_per_scenario: Option<usize>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[command(flatten)]
    over: Overrides,
    #[command(flatten)]
    input: InputArgs,
    /// Split to extract when a manifest is given
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Output pair archive
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[command(flatten)]
    over: Overrides,
    /// Directory of sample files
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_name = "F", help = dflt("Share of each (scenario, subject) group held out", 0.2))]
    test_fraction: Option<f64>,
    /// Output manifest
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    over: Overrides,
    /// Pair archive, sample file or directory of sample files
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Source joint layout of sample files
    #[arg(long, value_name = "MAP", default_value = "identity")]
    joint_map: String,
    /// Manifest; only its training samples are used
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Checkpoint directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Continue from the newest checkpoint in the output directory
    #[arg(long)]
    resume: bool,
    /// Run on one thread
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Checkpoint file or checkpoint directory
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Interaction sample file supplying the user's motion and the robot's initial pose
    #[arg(long, value_name = "FILE")]
    sample: PathBuf,
    #[arg(long, value_name = "MAP", default_value = "identity")]
    joint_map: String,
    /// Output pose table
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint file or checkpoint directory
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Split to evaluate when a manifest is given
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Output report
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Run on one thread
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Seed of the random toy model and batch
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

struct Failure {
    code: u8,
    message: String,
}

type CliResult<T = ()> = Result<T, Failure>;

fn validation(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Checkpoint(_) => 2,
            Error::Data(DataError::Parse { .. } | DataError::Io { .. }) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Error::from(e).into()
    }
}

fn load_config(over: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = match &over.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            RunConfig::parse(&text).map_err(|e| Failure {
                code: 2,
                message: format!("{}: {e}", path.display()),
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = over.variant {
        cfg.model = cfg.model.with_variant(v);
    }
    if let Some(s) = over.seed {
        cfg.train.rng_seed = s;
        cfg.synth.rng_seed = s;
        cfg.data.split_seed = s;
    }
    if let Some(x) = over.epochs {
        cfg.train.epochs = x;
    }
    if let Some(x) = over.batch_size {
        cfg.train.batch_size = x;
    }
    if let Some(x) = over.lr {
        cfg.train.lr = x;
    }
    if let Some(x) = over.m {
        cfg.model.m = x;
    }
    if let Some(x) = over.n {
        cfg.model.n = x;
    }
    if let Some(x) = over.l {
        cfg.model.l = x;
    }
    Ok(cfg)
}

fn joint_map(spec: &str) -> CliResult<JointIndexMap> {
    match spec {
        "identity" => Ok(JointIndexMap::identity()),
        "kinect-v2" | "kinect_v2" => Ok(JointIndexMap::kinect_v2()),
        s => JointIndexMap::parse(s).map_err(|e| validation(format!("--joint-map: {e}"))),
    }
}

fn read_manifest(path: Option<&Path>) -> CliResult<Option<DatasetManifest>> {
    path.map(|p| {
        let text = std::fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
        DatasetManifest::parse(&text).map_err(|e| Failure {
            code: 2,
            message: format!("{}: {e}", p.display()),
        })
    })
    .transpose()
}

/// Samples from a file or directory, brought to the model rate.
fn load_samples(path: &Path, map: &JointIndexMap) -> CliResult<Vec<InteractionSample>> {
    let raw = if path.is_dir() {
        import_sample_dir(path, map)?
    } else if path.is_file() {
        vec![import_skeleton_file(path, map)?]
    } else {
        return Err(io_failure(path, "no such file or directory"));
    };
    raw.into_iter()
        .map(|s| if s.fps > TARGET_HZ { s.downsampled() } else { Ok(s) })
        .collect::<Result<_, _>>()
        .map_err(Failure::from)
}

fn selected(
    input: &InputArgs,
    split: SplitArg,
) -> CliResult<Vec<InteractionSample>> {
    let map = joint_map(&input.joint_map)?;
    let manifest = read_manifest(input.manifest.as_deref())?;
    let samples: Vec<_> = load_samples(&input.input, &map)?
        .into_iter()
        .filter(|s| split.keeps(manifest.as_ref(), &s.sample_id))
        .collect();
    if samples.is_empty() {
        return Err(validation(format!("no samples selected from {}", input.input.display())));
    }
    Ok(samples)
}

fn encode_all(samples: &[InteractionSample], mc: &ModelConfig) -> CliResult<Vec<EncodedSample>> {
    let ec = mc.extract_config();
    samples
        .iter()
        .map(|s| encode_sample(s, &ec).map_err(Failure::from))
        .collect()
}

fn pairs_of(encoded: &[EncodedSample], mc: &ModelConfig) -> CliResult<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    for e in encoded {
        let p = pairs_from_encoded(e, mc.m, mc.n, mc.l)
            .map_err(|err| validation(format!("sample {}: {err}", e.sample_id)))?;
        pairs.extend(p);
    }
    Ok(pairs)
}

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_file(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let mut cfg = load_config(&a.over)?;
    if let Some(k) = a.samples_per_scenario {
        cfg.synth.samples_per_scenario = k;
    }
    cfg.synth.validate().map_err(validation)?;
    create_dir(&a.out)?;
    let samples = synthesize_dataset(&cfg.synth);
    for s in &samples {
        write_sample_file(&a.out.join(format!("{}.txt", s.sample_id)), s)?;
    }
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> CliResult {
    let cfg = load_config(&a.over)?;
    cfg.model.validate()?;
    let samples = selected(&a.input, a.split)?;
    let pairs = pairs_of(&encode_all(&samples, &cfg.model)?, &cfg.model)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_pairs(&a.out, &pairs, cfg.model.l)?;
    println!("wrote {} pairs from {} samples to {}", pairs.len(), samples.len(), a.out.display());
    Ok(())
}

fn cmd_split(a: SplitArgs) -> CliResult {
    let mut cfg = load_config(&a.over)?;
    if let Some(f) = a.test_fraction {
        cfg.data.test_fraction = f;
    }
    cfg.data.validate()?;
    let samples = load_samples(&a.input, &JointIndexMap::identity())?;
    let manifest = split_dataset(&samples, cfg.data.test_fraction, cfg.data.split_seed);
    write_file(&a.out, &manifest.to_text())?;
    println!(
        "{} train / {} test samples -> {}",
        manifest.count(Split::Train),
        manifest.count(Split::Test),
        a.out.display()
    );
    Ok(())
}

/// Training pairs from an archive or from sample files; archives fix m, n and l.
fn training_pairs(a: &TrainArgs, cfg: &mut RunConfig) -> CliResult<Vec<TrainingPair>> {
    let is_archive = a.input.is_file()
        && std::fs::read_to_string(&a.input)
            .map_err(|e| io_failure(&a.input, e))?
            .starts_with("# pairs");
    if !is_archive {
        let input = InputArgs {
            input: a.input.clone(),
            joint_map: a.joint_map.clone(),
            manifest: a.manifest.clone(),
        };
        let samples = selected(&input, SplitArg::Train)?;
        return pairs_of(&encode_all(&samples, &cfg.model)?, &cfg.model);
    }
    let (pairs, l) = read_pairs(&a.input)?;
    let first = pairs
        .first()
        .ok_or_else(|| validation(format!("{} holds no pairs", a.input.display())))?;
    let stored = (first.user_window.len(), first.target.len(), l);
    let flagged = [(a.over.m, stored.0, "m"), (a.over.n, stored.1, "n"), (a.over.l, stored.2, "l")];
    for (flag, have, name) in flagged {
        if flag.is_some_and(|f| f != have) {
            return Err(validation(format!("--{name} conflicts with the archive's {name}={have}")));
        }
    }
    (cfg.model.m, cfg.model.n, cfg.model.l) = stored;
    Ok(pairs)
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let mut cfg = load_config(&a.over)?;
    let pairs = training_pairs(&a, &mut cfg)?;
    cfg.validate()?;
    create_dir(&a.out)?;

    let resumed = if a.resume { TrainState::load_latest(&a.out)? } else { None };
    let mut state = match resumed {
        Some((state, _)) => {
            if state.params.config != cfg.model {
                return Err(validation(format!(
                    "checkpoint in {} was trained with a different model configuration",
                    a.out.display()
                )));
            }
            println!("resuming after epoch {}", state.epoch);
            state
        }
        None => {
            remove_old_checkpoints(&a.out)?;
            TrainState::new(ModelParams::init(&cfg.model, cfg.train.rng_seed)?, cfg.train.lr)
        }
    };
    write_file(&a.out.join("config.toml"), &cfg.to_toml())?;
    println!(
        "training {} on {} pairs, {} values, epochs {}..={}",
        cfg.model.variant,
        pairs.len(),
        state.params.num_values(),
        state.epoch + 1,
        cfg.train.epochs
    );
    let started = Instant::now();
    let epochs = cfg.train.epochs;
    train_loop(&pairs, &mut state, &cfg.train, Some(&a.out), exec(a.sequential), |r| {
        println!(
            "epoch {}/{epochs}  loss_g {:.5}  loss_d {:.5}  d_real {:.3}  d_gen {:.3}  {:.1}s",
            r.epoch, r.loss_g, r.loss_d, r.d_real, r.d_gen, r.seconds
        );
    })?;
    println!(
        "done in {:.1}s; latest checkpoint {}",
        started.elapsed().as_secs_f64(),
        checkpoint_path(&a.out, state.epoch).display()
    );
    Ok(())
}

fn remove_old_checkpoints(dir: &Path) -> CliResult {
    let entries = std::fs::read_dir(dir).map_err(|e| io_failure(dir, e))?;
    for e in entries.filter_map(|e| e.ok()) {
        let name = e.file_name().to_string_lossy().into_owned();
        if (name.starts_with("epoch_") && name.ends_with(".ckpt")) || name == "latest" || name == "report.tsv" {
            std::fs::remove_file(e.path()).map_err(|err| io_failure(&e.path(), err))?;
        }
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> CliResult {
    let params = ModelParams::load(&a.checkpoint)?;
    let mc = params.config;
    let samples = load_samples(&a.sample, &joint_map(&a.joint_map)?)?;
    let encoded = encode_all(&samples, &mc)?;
    let poses = socialgen::eval::rollout_sample(&params, &encoded[0])?;
    let mut out = String::from("frame");
    match mc.robot_repr() {
        RobotRepr::JointAngles => ANGLE_NAMES.iter().for_each(|n| {
            let _ = write!(out, "\t{n}");
        }),
        RobotRepr::Vectors => (0..mc.robot_dim).for_each(|i| {
            let _ = write!(out, "\tv{i}");
        }),
    }
    out.push('\n');
    for (k, pose) in poses.iter().enumerate() {
        let _ = write!(out, "{}", mc.m - 1 + k);
        for v in pose {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    write_file(&a.out, &out)?;
    println!(
        "{} poses for {} (frames {}..{}) -> {}",
        poses.len(),
        encoded[0].sample_id,
        mc.m - 1,
        mc.m - 2 + poses.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let params = ModelParams::load(&a.checkpoint)?;
    let samples = selected(&a.input, a.split)?;
    let encoded = encode_all(&samples, &params.config)?;
    let report = evaluate_dataset(&params, &encoded, &LinkLengths::default(), exec(a.sequential))?;
    let tsv = report.to_tsv();
    write_file(&a.out, &tsv)?;
    print!("{tsv}");
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult {
    let r = gradcheck(a.seed)?;
    println!("checked {} gradient entries in {:.1}s", r.checked, r.seconds);
    println!("max rel err {:.3e} (tolerance {:.0e}, worst {})", r.max_rel_err, train::gradcheck::REL_TOL, r.worst);
    println!("max abs err {:.3e} (tolerance {:.0e})", r.max_abs_err, train::gradcheck::ABS_TOL);
    if r.passed() {
        println!("gradcheck passed");
        Ok(())
    } else {
        Err(validation(format!("gradcheck failed: {} entries out of tolerance", r.failures)))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("ERROR 2: {first}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ERROR {}: {}", f.code, f.message);
            ExitCode::from(f.code)
        }
    }
}
