//! Command-line surface: `embed`, `synth`, `cluster`, `select`, `evaluate`,
//! `compare`.
//!
//! Every command validates its flags before touching the filesystem, writes
//! output files atomically, and echoes its full resolved configuration
//! (defaults included) into the output document or, for formats that have no
//! room for it, onto standard error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::embedding::{self, EmbeddingMatrix, MatrixFormat, PoolingMode};
use crate::error::{Error, Result};
use crate::eval::{self, Metric, MixtureSpec};
use crate::kmeans::{self, ClusterModel, KMeansConfig};
use crate::par;
use crate::selector::{self, SelectionResult, SelectionSpec, Strategy};

/// Environment variable holding the default thread cap.
pub const THREADS_ENV: &str = "FSEL_THREADS";

/// Budgets above this only trigger a warning.
pub const FEW_SHOT_BUDGET: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "fsel", version, about = "Select the K most representative instances of an unlabeled embedding set")]
pub struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pool word vectors into one embedding per input line.
    Embed(EmbedArgs),
    /// Generate a synthetic Gaussian mixture.
    Synth(SynthArgs),
    /// Fit K-means and write the cluster model.
    Cluster(ClusterArgs),
    /// Select k instances; indices are printed one per line.
    Select(SelectArgs),
    /// Score a selection with a label-free metric.
    Evaluate(EvaluateArgs),
    /// Compare strategies over repeated seeded trials.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Binary,
    Text,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Binary => MatrixFormat::Binary,
            FormatArg::Text => MatrixFormat::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormatArg {
    Auto,
    Binary,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Mean,
    Sum,
}

#[derive(Debug, Args)]
pub struct MatrixInput {
    /// Embedding matrix (binary or text format).
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub input_format: InputFormatArg,
    /// Scale every row to unit length before use.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Text file, one instance per line.
    #[arg(long)]
    pub texts: PathBuf,
    /// Word vectors: `V d` header, then `token v1 .. vd` lines.
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long, value_enum, default_value = "mean")]
    pub pooling: PoolingArg,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub components: usize,
    #[arg(long)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: FormatArg,
    /// Also write ground-truth component labels, one per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub input: MatrixInput,
    #[arg(long, short)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = kmeans::DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = kmeans::DEFAULT_MAX_ITERATIONS)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = kmeans::DEFAULT_REL_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: MatrixInput,
    /// random, ic-random, kmeans-closest, kmeans-random or kmeans-farthest.
    #[arg(long, short)]
    pub strategy: String,
    #[arg(long, short)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reuse a fitted cluster model instead of clustering (kmeans-* only).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Structured selection document.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: MatrixInput,
    /// Selection: one index per line, or a selection document.
    #[arg(long)]
    pub indices: PathBuf,
    #[arg(long, default_value = "facility-location")]
    pub metric: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: MatrixInput,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',', default_value = "random,ic-random,kmeans-closest")]
    pub strategies: Vec<String>,
    #[arg(long, short)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "facility-location")]
    pub metric: String,
    /// CSV report: strategy,metric,trial,seed,value.
    #[arg(long, short)]
    pub output: PathBuf,
}

fn load_input(input: &MatrixInput) -> Result<EmbeddingMatrix> {
    let m = match input.input_format {
        InputFormatArg::Auto => embedding::load_matrix_auto(&input.input)?,
        InputFormatArg::Binary => embedding::load_matrix(&input.input, MatrixFormat::Binary)?,
        InputFormatArg::Text => embedding::load_matrix(&input.input, MatrixFormat::Text)?,
    };
    if input.normalize {
        embedding::normalize_rows(&m)
    } else {
        Ok(m)
    }
}

fn input_echo(input: &MatrixInput) -> serde_json::Value {
    json!({
        "input": input.input.display().to_string(),
        "input_format": format!("{:?}", input.input_format).to_lowercase(),
        "normalize": input.normalize,
    })
}

fn check_k(k: usize, warn: &mut dyn Write) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("--k must be at least 1".into()));
    }
    if k > FEW_SHOT_BUDGET {
        let _ = writeln!(warn, "warning: k = {k} is above the few-shot range (<= {FEW_SHOT_BUDGET})");
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    embedding::write_atomic(path, text.as_bytes())
}

/// Runs one command. Primary output goes to `out`, diagnostics to `err`.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let threads = cli.threads;
    if threads == Some(0) {
        return Err(Error::InvalidConfig("--threads must be at least 1".into()));
    }
    // the pool closure must be Send, so buffer output and flush afterwards
    let (result, stdout, stderr) = par::with_threads(threads, || {
        let mut o = Vec::new();
        let mut e = Vec::new();
        let r = dispatch(cli, &mut o, &mut e);
        (r, o, e)
    });
    out.write_all(&stdout).map_err(|e| Error::io("<stdout>", e))?;
    err.write_all(&stderr).map_err(|e| Error::io("<stderr>", e))?;
    result
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let io = |e| Error::io("<stdout>", e);
    match &cli.command {
        Command::Embed(a) => {
            let texts = fs::read_to_string(&a.texts).map_err(|e| Error::io(&a.texts, e))?;
            let lines: Vec<&str> = texts.lines().collect();
            let table = embedding::load_word_vectors(&a.vectors)?;
            let mode = match a.pooling {
                PoolingArg::Mean => PoolingMode::Mean,
                PoolingArg::Sum => PoolingMode::Sum,
            };
            let mut m = embedding::embed_instances(&lines, &table, mode)?;
            if a.normalize {
                m = embedding::normalize_rows(&m)?;
            }
            embedding::write_matrix(&m, &a.output, a.format.into())?;
            let echo = json!({
                "command": "embed",
                "texts": a.texts.display().to_string(),
                "vectors": a.vectors.display().to_string(),
                "pooling": format!("{:?}", a.pooling).to_lowercase(),
                "normalize": a.normalize,
                "format": format!("{:?}", a.format).to_lowercase(),
                "n": m.n(),
                "d": m.d(),
                "vocabulary": table.len(),
            });
            writeln!(err, "config: {echo}").map_err(io)?;
        }
        Command::Synth(a) => {
            let spec = MixtureSpec { n: a.n, d: a.d, components: a.components, separation: a.separation, seed: a.seed };
            spec.validate()?;
            let (m, labels) = eval::generate_mixture(&spec)?;
            embedding::write_matrix(&m, &a.output, a.format.into())?;
            if let Some(path) = &a.labels {
                let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
                write_text(path, &text)?;
            }
            let echo = json!({ "command": "synth", "spec": spec, "format": format!("{:?}", a.format).to_lowercase() });
            writeln!(err, "config: {echo}").map_err(io)?;
        }
        Command::Cluster(a) => {
            check_k(a.k, err)?;
            let config = KMeansConfig {
                k: a.k,
                n_restarts: a.restarts,
                max_iterations: a.max_iterations,
                rel_tolerance: a.tolerance,
                seed: a.seed,
            };
            config.validate(usize::MAX)?;
            let points = load_input(&a.input)?;
            let report = kmeans::fit_with_report(&points, &config)?;
            let echo = json!({
                "command": "cluster",
                "source": input_echo(&a.input),
                "kmeans": config,
                "best_restart": report.best_restart,
                "restarts": report.restarts,
            });
            write_text(&a.output, &report.model.to_json(Some(echo))?)?;
            writeln!(out, "sse {:?}", report.model.sse).map_err(io)?;
        }
        Command::Select(a) => {
            let strategy: Strategy = a.strategy.parse()?;
            check_k(a.k, err)?;
            if a.model.is_some() && strategy == Strategy::Random {
                return Err(Error::InvalidConfig("--model cannot be combined with --strategy random".into()));
            }
            let points = load_input(&a.input)?;
            let spec = SelectionSpec::new(strategy, a.k, a.seed);
            let result = match &a.model {
                None => selector::select(&points, &spec)?,
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    let model = ClusterModel::from_json(&text)?;
                    if model.k != a.k {
                        return Err(Error::InvalidConfig(format!("--k {} disagrees with model k = {}", a.k, model.k)));
                    }
                    spec.validate(points.n())?;
                    match strategy.in_cluster() {
                        Some(mode) => selector::select_with_model(&points, &model, mode, a.seed)?,
                        None => selector::ic_random_with_model(&points, &model, a.k, a.seed)?,
                    }
                }
            };
            if let Some(path) = &a.output {
                let echo = json!({
                    "command": "select",
                    "source": input_echo(&a.input),
                    "strategy": strategy.name(),
                    "k": a.k,
                    "seed": a.seed,
                    "model": a.model.as_ref().map(|p| p.display().to_string()),
                    "kmeans": if a.model.is_none() && strategy != Strategy::Random {
                        Some(KMeansConfig::new(a.k, a.seed))
                    } else {
                        None
                    },
                });
                write_text(path, &result.to_json(&points, Some(echo))?)?;
            }
            out.write_all(result.to_lines().as_bytes()).map_err(io)?;
        }
        Command::Evaluate(a) => {
            let metric: Metric = a.metric.parse()?;
            let points = load_input(&a.input)?;
            let text = fs::read_to_string(&a.indices).map_err(|e| Error::io(&a.indices, e))?;
            let indices = parse_indices(&text)?;
            let value = metric.score(&points, &indices)?;
            writeln!(out, "{} {:?}", metric.name(), value).map_err(io)?;
        }
        Command::Compare(a) => {
            let strategies = a
                .strategies
                .iter()
                .map(|s| s.trim().parse::<Strategy>())
                .collect::<Result<Vec<_>>>()?;
            let metric: Metric = a.metric.parse()?;
            check_k(a.k, err)?;
            if a.trials == 0 {
                return Err(Error::InvalidConfig("--trials must be at least 1".into()));
            }
            if metric == Metric::Diversity && a.k < 2 {
                return Err(Error::InvalidConfig("diversity needs k >= 2".into()));
            }
            let points = load_input(&a.input)?;
            let reports = eval::compare_strategies(&points, &strategies, a.k, a.trials, a.seed, metric)?;
            let names: Vec<&str> = strategies.iter().map(|s| s.name()).collect();
            let preamble = vec![
                format!("command=compare input={} normalize={}", a.input.input.display(), a.input.normalize),
                format!(
                    "strategies={} k={} trials={} base_seed={} metric={}",
                    names.join(","),
                    a.k,
                    a.trials,
                    a.seed,
                    metric.name()
                ),
                format!(
                    "kmeans restarts={} max_iterations={} rel_tolerance={:e}; trial seed = mix(base_seed, trial)",
                    kmeans::DEFAULT_RESTARTS,
                    kmeans::DEFAULT_MAX_ITERATIONS,
                    kmeans::DEFAULT_REL_TOLERANCE
                ),
            ];
            let mut buf = Vec::new();
            eval::write_csv(&reports, &preamble, &mut buf)?;
            embedding::write_atomic(&a.output, &buf)?;
            out.write_all(eval::render_summary(&reports).as_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// Accepts a selection document or one index per line (blank lines and `#`
/// comments ignored).
pub fn parse_indices(text: &str) -> Result<Vec<usize>> {
    if text.trim_start().starts_with('{') {
        return Ok(SelectionResult::from_json(text)?.indices);
    }
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.parse::<usize>().map_err(|_| Error::Parse { row: i + 1, message: format!("not an index: {l:?}") })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_cli() {
        let cli = Cli::try_parse_from([
            "fsel", "select", "--input", "m.fsel", "--strategy", "kmeans-closest", "--k", "10", "--seed", "7",
        ])
        .unwrap();
        match cli.command {
            Command::Select(a) => {
                assert_eq!(a.k, 10);
                assert_eq!(a.seed, 7);
                assert_eq!(a.strategy, "kmeans-closest");
            }
            other => panic!("unexpected {other:?}"),
        }
        let cli = Cli::try_parse_from(["fsel", "compare", "-i", "x", "--k", "3", "--strategies", "random,ic-random", "-o", "r.csv"])
            .unwrap();
        match cli.command {
            Command::Compare(a) => {
                assert_eq!(a.strategies, vec!["random", "ic-random"]);
                assert_eq!(a.seed, 0);
                assert_eq!(a.trials, 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn index_files() {
        assert_eq!(parse_indices("3\n\n# c\n1\n").unwrap(), vec![3, 1]);
        assert!(matches!(parse_indices("1\nx\n"), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn bad_flags_fail_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r.csv");
        let cli = Cli::try_parse_from([
            "fsel",
            "compare",
            "-i",
            dir.path().join("missing").to_str().unwrap(),
            "--k",
            "3",
            "--strategies",
            "random,nope",
            "-o",
            out.to_str().unwrap(),
        ])
        .unwrap();
        let err = run(&cli, &mut Vec::new(), &mut Vec::new()).unwrap_err();
        assert!(err.to_string().contains("nope"));
        assert!(!out.exists());
    }
}
