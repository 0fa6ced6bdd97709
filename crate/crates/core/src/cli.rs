//! The `vidta` command line: featurize, train, predict, evaluate and
//! gradcheck.
//!
//! Training flags mirror [`TrainConfig`] field names. A plain `key = value`
//! file given with `--config` may set any of them; flags on the command line
//! take precedence.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::chem::parse_smiles;
use crate::fusion_head::FusionMode;
use crate::graph::{eigendecompose, normalized_laplacian};
use crate::model::{
    check_gradients, featurize_protein, featurize_smiles, GradCheckOptions, ModelConfig, Sample, Vidta,
};
use crate::pipeline::{
    kfold_split, load_dataset, predict_batch, train, Checkpoint, DatasetRecord, EpochLog, LoadReport, TrainConfig,
};

/// Exit status for malformed invocations.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failures while running a valid command.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "vidta", version, about = "Drug–target affinity prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print graph or sequence-encoding statistics for one input.
    Featurize(FeaturizeArgs),
    /// Cross-validated training; writes one checkpoint and log per fold.
    Train(TrainArgs),
    /// Write a predictions CSV for a dataset.
    Predict(PredictArgs),
    /// Print metrics of a checkpoint on a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Compare backpropagated and finite-difference gradients at toy size.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Paper,
    Toy,
}

impl Preset {
    fn config(self) -> ModelConfig {
        match self {
            Preset::Paper => ModelConfig::paper(),
            Preset::Toy => ModelConfig::toy(),
        }
    }
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct FeaturizeInput {
    /// SMILES string of a drug.
    #[arg(long)]
    pub smiles: Option<String>,
    /// Raw protein sequence.
    #[arg(long)]
    pub sequence: Option<String>,
    /// FASTA file holding one protein record.
    #[arg(long)]
    pub fasta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    pub input: FeaturizeInput,
    #[arg(long)]
    pub no_virtual_node: bool,
    #[arg(long, value_enum, default_value = "paper")]
    pub preset: Preset,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV (`smiles,protein,affinity,space`).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` file with defaults for any flag below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr_initial: Option<f64>,
    #[arg(long)]
    pub lr_after_100_epochs: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, alias = "epochs")]
    pub max_epochs: Option<usize>,
    #[arg(long, alias = "patience")]
    pub early_stop_patience: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Read out from the mean of atom states instead of a virtual node.
    #[arg(long)]
    pub no_virtual_node: bool,
    #[arg(long, alias = "fusion-mode")]
    pub fusion: Option<FusionMode>,
    /// Model size: full (`paper`) or tiny (`toy`).
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Disable Laplacian positional encodings.
    #[arg(long)]
    pub no_positional_encoding: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Predictions CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Print one CSV row instead of `key=value` lines.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Check at most this many entries per parameter array.
    #[arg(long)]
    pub max_per_param: Option<usize>,
    /// Check the training-mode loss (dropout masks and batch statistics
    /// seeded by `--seed`). Batch statistics over three samples make this
    /// loss sharply curved, so finite differences are far noisier.
    #[arg(long)]
    pub train_mode: bool,
}

/// A failed command: usage problems exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    /// The reader of standard output went away (e.g. `| head`); not an error.
    OutputClosed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::OutputClosed => 0,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
            CliError::OutputClosed => "output closed",
        }
    }
}

fn output_error(e: std::io::Error) -> CliError {
    if e.kind() == std::io::ErrorKind::BrokenPipe {
        CliError::OutputClosed
    } else {
        CliError::Runtime(format!("writing output: {e}"))
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    // keep the reason on one line
    CliError::Runtime(e.to_string().replace('\n', " "))
}

/// Parses `argv` (including the program name), runs the command writing to
/// `out`, and returns the process exit code.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) | Err(CliError::OutputClosed) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Featurize(a) => featurize(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

macro_rules! say {
    ($out:expr, $($t:tt)*) => {
        writeln!($out, $($t)*).map_err(output_error)
    };
}

fn featurize(a: FeaturizeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = a.preset.config();
    cfg.virtual_node = !a.no_virtual_node;
    if let Some(smiles) = a.input.smiles {
        let mol = parse_smiles(&smiles).map_err(runtime)?;
        let g = featurize_smiles(&smiles, &cfg).map_err(runtime)?;
        say!(out, "smiles={smiles}")?;
        say!(out, "atoms={}", mol.atom_count())?;
        say!(out, "bonds={}", mol.bond_count())?;
        say!(out, "components={}", mol.component_count())?;
        say!(out, "nodes={}", g.n_nodes())?;
        say!(out, "directed_edges={}", g.n_edges())?;
        match g.virtual_node {
            Some(v) => say!(out, "virtual_node={v}")?,
            None => say!(out, "virtual_node=none")?,
        }
        say!(out, "node_feature_dim={}", g.node_features.cols())?;
        say!(out, "edge_feature_dim={}", g.edge_features.cols())?;
        say!(out, "pe_dim={}", g.pe_dim())?;
        let basis = eigendecompose(&normalized_laplacian(&g)).map_err(runtime)?;
        let ev: Vec<String> = basis.eigenvalues.iter().map(|v| format!("{v:.6}")).collect();
        say!(out, "laplacian_eigenvalues={}", ev.join(","))?;
        return Ok(());
    }
    let (label, text) = match (a.input.sequence, a.input.fasta) {
        (Some(s), _) => ("sequence".to_string(), s),
        (None, Some(p)) => (
            p.display().to_string(),
            fs::read_to_string(&p).map_err(|e| runtime(format!("cannot read {}: {e}", p.display())))?,
        ),
        (None, None) => {
            return Err(CliError::Usage(
                "one of --smiles, --sequence, --fasta is required".into(),
            ))
        }
    };
    let enc = featurize_protein(&text, &cfg).map_err(runtime)?;
    let used = enc.original_length.min(cfg.protein_len);
    say!(out, "input={label}")?;
    say!(out, "residues={}", enc.original_length)?;
    say!(out, "encoded_length={}", enc.codes.len())?;
    say!(out, "truncated={}", enc.original_length > cfg.protein_len)?;
    say!(out, "padding={}", cfg.protein_len - used)?;
    let head: Vec<String> = enc.codes[..used.min(20)].iter().map(u8::to_string).collect();
    say!(out, "first_codes={}", head.join(","))?;
    Ok(())
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("config: bad value '{value}' for {key}")))
}

/// Resolves defaults < config file < command line.
pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let file = match &a.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let preset = match (a.preset, file.get("preset")) {
        (Some(p), _) => p,
        (None, Some(v)) => {
            Preset::from_str(v, true).map_err(|_| CliError::Usage(format!("config: bad preset '{v}'")))?
        }
        (None, None) => Preset::Paper,
    };
    let mut cfg = TrainConfig {
        model: preset.config(),
        ..TrainConfig::default()
    };
    for (k, v) in &file {
        match k.as_str() {
            "preset" => {}
            "folds" => cfg.folds = parse_value(k, v)?,
            "seed" => cfg.seed = parse_value(k, v)?,
            "lr_initial" => cfg.lr_initial = parse_value(k, v)?,
            "lr_after_100_epochs" => cfg.lr_after_100_epochs = parse_value(k, v)?,
            "batch_size" => cfg.batch_size = parse_value(k, v)?,
            "max_epochs" | "epochs" => cfg.max_epochs = parse_value(k, v)?,
            "early_stop_patience" | "patience" => cfg.early_stop_patience = parse_value(k, v)?,
            "workers" => cfg.workers = parse_value(k, v)?,
            "virtual_node" => cfg.model.virtual_node = parse_value(k, v)?,
            "positional_encoding" | "use_positional_encoding" => cfg.model.use_positional_encoding = parse_value(k, v)?,
            "fusion" | "fusion_mode" => cfg.model.fusion = v.parse().map_err(CliError::Usage)?,
            "dropout" => cfg.model.dropout = parse_value(k, v)?,
            other => return Err(CliError::Usage(format!("config: unknown key '{other}'"))),
        }
    }
    macro_rules! take {
        ($($field:ident => $target:expr),*) => {
            $(if let Some(v) = a.$field { $target = v; })*
        };
    }
    take!(
        folds => cfg.folds,
        seed => cfg.seed,
        lr_initial => cfg.lr_initial,
        lr_after_100_epochs => cfg.lr_after_100_epochs,
        batch_size => cfg.batch_size,
        max_epochs => cfg.max_epochs,
        early_stop_patience => cfg.early_stop_patience,
        workers => cfg.workers,
        fusion => cfg.model.fusion,
        dropout => cfg.model.dropout
    );
    if a.no_virtual_node {
        cfg.model.virtual_node = false;
    }
    if a.no_positional_encoding {
        cfg.model.use_positional_encoding = false;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn load_records(path: &Path, out: &mut dyn Write) -> Result<LoadReport, CliError> {
    let report = load_dataset(path).map_err(runtime)?;
    for q in &report.quarantined {
        say!(out, "quarantined line {}: {}", q.line, q.reason)?;
    }
    say!(
        out,
        "loaded {} records, quarantined {}",
        report.records.len(),
        report.quarantined.len()
    )?;
    Ok(report)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_train_config(&a)?;
    let report = load_records(&a.data, out)?;
    let records = report.records;
    let folds = kfold_split(records.len(), cfg.folds, cfg.seed).map_err(runtime)?;
    fs::create_dir_all(&a.out).map_err(|e| runtime(format!("cannot create {}: {e}", a.out.display())))?;
    for (k, fold) in folds.iter().enumerate() {
        let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<DatasetRecord>>();
        let (tr, va) = (pick(&fold.train), pick(&fold.valid));
        let fold_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(k as u64),
            ..cfg.clone()
        };
        let log_path = a.out.join(format!("fold{}.log.csv", k + 1));
        let mut log =
            fs::File::create(&log_path).map_err(|e| runtime(format!("cannot create {}: {e}", log_path.display())))?;
        let mut log_err = None;
        let _ = writeln!(log, "{}", EpochLog::CSV_HEADER);
        let outcome = train(&tr, Some(&va), &fold_cfg, |e: &EpochLog| {
            if let Err(err) = writeln!(log, "{}", e.csv_row()) {
                log_err.get_or_insert(err);
            }
        })
        .map_err(runtime)?;
        if let Some(e) = log_err {
            return Err(runtime(format!("writing {}: {e}", log_path.display())));
        }
        let ck_path = a.out.join(format!("fold{}.ckpt", k + 1));
        outcome.best.save(&ck_path).map_err(runtime)?;
        say!(
            out,
            "fold {}: train={} valid={} epochs={} best_epoch={} best_valid_mse={} checkpoint={}",
            k + 1,
            tr.len(),
            va.len(),
            outcome.log.len(),
            outcome.best.epoch,
            outcome.best.best_valid_mse,
            ck_path.display()
        )?;
    }
    Ok(())
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint).map_err(runtime)?;
    let report = load_records(&a.data, out)?;
    let result = predict_batch(&ck, &report.records, a.workers.max(1)).map_err(runtime)?;
    let file = fs::File::create(&a.out).map_err(|e| runtime(format!("cannot create {}: {e}", a.out.display())))?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| runtime(format!("writing {}: {e}", a.out.display()));
    w.write_record(["smiles", "protein", "target", "prediction"])
        .map_err(io)?;
    for (r, p) in report.records.iter().zip(&result.predictions) {
        let target = r
            .target()
            .and_then(Result::ok)
            .map(|t| t.to_string())
            .unwrap_or_default();
        w.write_record([r.smiles.as_str(), &r.protein_seq, &target, &p.to_string()])
            .map_err(io)?;
    }
    w.flush()
        .map_err(|e| runtime(format!("writing {}: {e}", a.out.display())))?;
    say!(
        out,
        "wrote {} predictions to {}",
        result.predictions.len(),
        a.out.display()
    )?;
    if let Some(Ok(m)) = result.metrics {
        write!(out, "{m}").map_err(runtime)?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint).map_err(runtime)?;
    let report = load_dataset(&a.data).map_err(runtime)?;
    if !report.quarantined.is_empty() {
        let q = &report.quarantined[0];
        return Err(runtime(format!(
            "{} rows quarantined (first: line {}: {})",
            report.quarantined.len(),
            q.line,
            q.reason
        )));
    }
    let result = predict_batch(&ck, &report.records, a.workers.max(1)).map_err(runtime)?;
    let metrics = match result.metrics {
        Some(m) => m.map_err(runtime)?,
        None => return Err(runtime("every record needs an affinity to evaluate")),
    };
    if a.csv {
        say!(out, "{}", crate::metrics::MetricsReport::CSV_HEADER)?;
        say!(out, "{}", metrics.csv_row())?;
    } else {
        write!(out, "{metrics}").map_err(runtime)?;
    }
    Ok(())
}

/// Fixed toy inputs for the gradient check: a chain, an aromatic ring with
/// a substituent and a charged fragment pair.
const GRADCHECK_SMILES: [&str; 3] = ["CC(=O)N", "c1ccccc1O", "C[N+](C)(C)C.[Cl-]"];
const GRADCHECK_PROTEINS: [&str; 3] = ["MKVLAGWY", "GGSAT", "MKTAYIAKQR"];
const GRADCHECK_TARGETS: [f64; 3] = [0.5, -0.3, 1.2];

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ModelConfig::toy();
    let mut model = Vidta::<f64>::new(cfg.clone(), a.seed).map_err(runtime)?;
    model.params.jitter(a.seed.wrapping_add(1), 0.05);
    let graphs = GRADCHECK_SMILES
        .iter()
        .map(|s| featurize_smiles(s, &cfg))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let prots = GRADCHECK_PROTEINS
        .iter()
        .map(|s| featurize_protein(s, &cfg))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let samples: Vec<Sample> = graphs
        .iter()
        .zip(&prots)
        .map(|(drug, protein)| Sample { drug, protein })
        .collect();
    let opts = GradCheckOptions {
        eps: a.eps,
        max_per_param: a.max_per_param,
        train_seed: a.train_mode.then_some(a.seed),
        ..GradCheckOptions::default()
    };
    let report = check_gradients(&model, &samples, &GRADCHECK_TARGETS, &opts).map_err(runtime)?;
    say!(out, "checked={}", report.checked)?;
    say!(out, "max_rel_error={:e}", report.max_rel_error)?;
    if let Some((name, idx)) = &report.worst {
        say!(out, "worst={name}[{idx}]")?;
    }
    if report.max_rel_error < a.tolerance {
        say!(out, "status=pass")?;
        Ok(())
    } else {
        say!(out, "status=fail")?;
        Err(CliError::Runtime(format!(
            "max relative error {:e} exceeds {:e}",
            report.max_rel_error, a.tolerance
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("vidta").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn featurize_benzene() {
        let (code, out, _) = run_str(&["featurize", "--smiles", "c1ccccc1"]);
        assert_eq!(code, 0);
        assert!(out.contains("nodes=7\n"));
        assert!(out.contains("directed_edges=24\n"));
        let (_, out, _) = run_str(&["featurize", "--smiles", "c1ccccc1", "--no-virtual-node"]);
        assert!(out.contains("nodes=6\n") && out.contains("directed_edges=12\n"));
    }

    #[test]
    fn featurize_sequence() {
        let (code, out, _) = run_str(&["featurize", "--sequence", "ACB", "--preset", "toy"]);
        assert_eq!(code, 0);
        assert!(out.contains("first_codes=1,2,3\n"));
        assert!(out.contains("padding=9\n"));
    }

    #[test]
    fn usage_and_runtime_exit_codes() {
        assert_eq!(run_str(&[]).0, EXIT_USAGE);
        assert_eq!(run_str(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["featurize"]).0, EXIT_USAGE);
        let (code, _, err) = run_str(&["featurize", "--smiles", "C1CC"]);
        assert_eq!(code, EXIT_RUNTIME);
        assert_eq!(err.lines().count(), 1);
        assert_eq!(run_str(&["--help"]).0, 0);
    }

    #[test]
    fn config_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("train.cfg");
        fs::write(
            &cfg_path,
            "# defaults\nbatch_size = 16\nseed=3\nfusion = add\npreset = toy\n",
        )
        .unwrap();
        let cli = Cli::try_parse_from([
            "vidta",
            "train",
            "--data",
            "x.csv",
            "--out",
            "o",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "9",
            "--no-virtual-node",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let c = resolve_train_config(&a).unwrap();
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.seed, 9);
        assert_eq!(c.model.fusion, FusionMode::Add);
        assert_eq!(c.model, {
            let mut m = ModelConfig::toy();
            m.fusion = FusionMode::Add;
            m.virtual_node = false;
            m
        });
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        assert!(matches!(parse_config_text("a b"), Err(CliError::Usage(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c");
        fs::write(&p, "learning_rate = 3\n").unwrap();
        let (code, _, _) = run_str(&["train", "--data", "x", "--out", "y", "--config", p.to_str().unwrap()]);
        assert_eq!(code, EXIT_USAGE);
    }
}
