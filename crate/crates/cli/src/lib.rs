//! `spanlab` command-line front end.
//!
//! Every subcommand is an in-process function returning the process exit
//! code, so tests can drive the CLI without spawning a binary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};

use spanlab_core::arith;
use spanlab_core::probe::{self, LabeledEmbeddings, ProbeOptions};
use spanlab_core::scenario::{self, Alignment, ScenarioConfig};
use spanlab_core::solvers::{SolverConfig, SolverKind};
use spanlab_core::span::{self, DifferenceMatrix, KMode, Normalization, SpanOptions, SpanReport};
use spanlab_core::stats::{self, F1Aggregation};
use spanlab_core::tensorio::{self, DatasetManifest, Dtype, EmbeddingMatrix, Role};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "spanlab", version, about = "Discriminative span analysis of embedding differences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an L2-regularized logistic probe on real positives vs negatives.
    Probe(ProbeArgs),
    /// Run every requested solver on a difference matrix and classifier direction.
    Span(SpanArgs),
    /// Rank and conditioning statistics of a difference matrix.
    Diagnose(DiagnoseArgs),
    /// Vector-arithmetic alignment statistics of a difference matrix.
    Arith(ArithArgs),
    /// Correlate explained fractions with downstream test F1 across datasets.
    Correlate(CorrelateArgs),
    /// Write a seeded planted-subspace instance as EMB1 files.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Json,
    Markdown,
    Both,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file. With `--format both` the Markdown goes next to it with a
    /// `.md` extension. Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    /// Dataset manifest naming the source/target (and optionally real_pos/real_neg) files.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Real-sample embeddings (EMB1 or CSV).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Synthetic counterparts, row-aligned with --source.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// A precomputed difference matrix instead of a source/target pair.
    #[arg(long, conflicts_with_all = ["source", "target", "manifest"])]
    pub diff: Option<PathBuf>,
    /// Row normalization applied to the differences.
    #[arg(long, default_value = "none")]
    pub normalize: Normalization,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub pos: PathBuf,
    #[arg(long)]
    pub neg: PathBuf,
    /// Where to write the unit direction (EMB1); a JSON sidecar lands next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    pub reg: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Comma-separated solvers: ls, ridge, nnls, l1.
    #[arg(long, value_delimiter = ',', default_value = "ls,ridge,nnls,l1")]
    pub solvers: Vec<SolverKind>,
    #[arg(long, default_value_t = 1e-3)]
    pub ridge_tau: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub l1_fraction: f64,
    /// Truncation level: `auto` (rounded effective rank), `floor` or an integer.
    #[arg(long, default_value = "auto")]
    pub k: KMode,
}

impl SolverArgs {
    fn configs(&self) -> Vec<SolverConfig> {
        self.solvers
            .iter()
            .map(|&kind| SolverConfig::new(kind).with_ridge_tau(self.ridge_tau).with_l1_fraction(self.l1_fraction))
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct SpanArgs {
    #[command(flatten)]
    pub input: DiffArgs,
    /// Classifier direction (1 x d or d x 1 matrix).
    #[arg(long, conflicts_with_all = ["pos", "neg"])]
    pub w: Option<PathBuf>,
    /// Train the direction inline from real positives...
    #[arg(long, requires = "neg")]
    pub pos: Option<PathBuf>,
    /// ...and real negatives.
    #[arg(long, requires = "pos")]
    pub neg: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-2)]
    pub reg: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub embedding: Option<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: DiffArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ArithArgs {
    #[command(flatten)]
    pub input: DiffArgs,
    /// Column heading for the Markdown table.
    #[arg(long, default_value = "Value")]
    pub label: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Directory of span report JSON files.
    #[arg(long)]
    pub reports: PathBuf,
    /// Scores CSV with columns dataset, model, split, accuracy, f1.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub embedding: String,
    /// How per-model test F1 values become one value per dataset.
    #[arg(long, default_value = "best-model")]
    pub f1_aggregate: F1Aggregation,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlignArg {
    InSpan,
    Orthogonal,
    Angled,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = AlignArg::InSpan)]
    pub align: AlignArg,
    /// Angle from the planted span in radians (with `--align angled`).
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write `pos.emb1`/`neg.emb1` blobs separated along w_true, this many rows each.
    #[arg(long)]
    pub blobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `args` (including the program name) and run the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(&cli.command),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

pub fn dispatch(command: &Command) -> i32 {
    match command {
        Command::Probe(a) => cmd_probe(a),
        Command::Span(a) => cmd_span(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Arith(a) => cmd_arith(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn finish(result: Result<i32>) -> i32 {
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INVALID
        }
    }
}

fn emit(output: &OutputArgs, json: &str, markdown: &str) -> Result<()> {
    let write = |path: &Path, text: &str| -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut bytes = text.as_bytes().to_vec();
        if !text.ends_with('\n') {
            bytes.push(b'\n');
        }
        tensorio::write_atomic(path, &bytes)?;
        Ok(())
    };
    match (&output.out, output.format) {
        (Some(p), OutputFormat::Json) => write(p, json),
        (Some(p), OutputFormat::Markdown) => write(p, markdown),
        (Some(p), OutputFormat::Both) => {
            write(p, json)?;
            write(&p.with_extension("md"), markdown)
        }
        (None, OutputFormat::Json) => {
            println!("{json}");
            Ok(())
        }
        (None, OutputFormat::Markdown) => {
            print!("{markdown}");
            Ok(())
        }
        (None, OutputFormat::Both) => {
            println!("{json}");
            print!("{markdown}");
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<EmbeddingMatrix> {
    Ok(tensorio::read_matrix(path)?)
}

struct LoadedInput {
    diff: DifferenceMatrix,
    manifest: Option<(DatasetManifest, PathBuf)>,
}

fn load_diff(args: &DiffArgs) -> Result<LoadedInput> {
    if let Some(p) = &args.diff {
        let m = load(p)?;
        return Ok(LoadedInput { diff: DifferenceMatrix::from_rows(m.into_values(), args.normalize), manifest: None });
    }
    let manifest = match &args.manifest {
        Some(p) => {
            let m = tensorio::read_manifest(p)?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Some((m, base))
        }
        None => None,
    };
    let resolve = |flag: &Option<PathBuf>, role: Role| -> Result<PathBuf> {
        if let Some(p) = flag {
            return Ok(p.clone());
        }
        manifest
            .as_ref()
            .and_then(|(m, base)| m.path(role, base))
            .ok_or_else(|| anyhow!("missing --{} (or a manifest with that role)", role_flag(role)))
    };
    let source = load(&resolve(&args.source, Role::Source)?)?;
    let target = load(&resolve(&args.target, Role::Target)?)?;
    let pairs = tensorio::validate_pairing(source, target)?;
    Ok(LoadedInput { diff: span::build_difference_matrix(&pairs, args.normalize), manifest })
}

fn role_flag(role: Role) -> &'static str {
    match role {
        Role::Source => "source",
        Role::Target => "target",
        Role::RealPos => "pos",
        Role::RealNeg => "neg",
    }
}

fn train_probe(pos: &Path, neg: &Path, opts: ProbeOptions) -> Result<probe::ProbeModel> {
    let pos = load(pos)?;
    let neg = load(neg)?;
    let data = LabeledEmbeddings::from_classes(pos.values().view(), neg.values().view())?;
    let model = probe::train_linear_probe(&data, opts)?;
    Ok(probe::normalize_direction(&model)?)
}

pub fn cmd_probe(args: &ProbeArgs) -> i32 {
    finish((|| {
        let opts = ProbeOptions { reg_strength: args.reg, tol: args.tol, max_iter: args.max_iter };
        let model = train_probe(&args.pos, &args.neg, opts)?;
        probe::write_probe(&model, &args.out)?;
        println!(
            "probe: d={} iterations={} converged={} gradient_norm={:.3e} -> {}",
            model.w.len(),
            model.iterations,
            model.converged,
            model.final_gradient_norm,
            args.out.display()
        );
        if model.converged {
            Ok(EXIT_OK)
        } else {
            eprintln!("warning: probe hit the iteration cap before converging");
            Ok(EXIT_NOT_CONVERGED)
        }
    })())
}

pub fn cmd_span(args: &SpanArgs) -> i32 {
    finish((|| {
        let input = load_diff(&args.input)?;
        let mut probe_converged = true;
        let w: Array1<f64> = if let Some(p) = &args.w {
            probe::read_direction(p)?
        } else {
            let from_manifest = |role| input.manifest.as_ref().and_then(|(m, base)| m.path(role, base));
            let pos = args.pos.clone().or_else(|| from_manifest(Role::RealPos));
            let neg = args.neg.clone().or_else(|| from_manifest(Role::RealNeg));
            let (Some(pos), Some(neg)) = (pos, neg) else {
                bail!("need --w, or --pos and --neg (or a manifest with real_pos and real_neg)");
            };
            let opts = ProbeOptions { reg_strength: args.reg, ..ProbeOptions::default() };
            let model = train_probe(&pos, &neg, opts)?;
            probe_converged = model.converged;
            model.w
        };

        let opts = SpanOptions::default()
            .with_solvers(args.solver.configs())
            .with_k_mode(args.solver.k)
            .with_threads(span::threads_from_env());
        let label = |flag: &Option<String>, pick: fn(&DatasetManifest) -> &String| {
            flag.clone()
                .or_else(|| input.manifest.as_ref().map(|(m, _)| pick(m).clone()))
                .unwrap_or_default()
        };
        let dataset = label(&args.dataset, |m| &m.dataset_name);
        let embedding = label(&args.embedding, |m| &m.embedding_model);
        let report = span::discriminative_span(&input.diff, w.view(), &opts, &dataset, &embedding)?;
        emit(&args.output, &report.to_json(), &report.to_markdown())?;

        for e in &report.entries {
            if let Some(err) = &e.error {
                eprintln!("warning: {} failed: {err}", e.solver);
            }
        }
        let solvers_converged = report.entries.iter().all(|e| e.error.is_some() || e.converged);
        if probe_converged && solvers_converged {
            Ok(EXIT_OK)
        } else {
            eprintln!("warning: at least one iterative step stopped at its iteration cap");
            Ok(EXIT_NOT_CONVERGED)
        }
    })())
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> i32 {
    finish((|| {
        let input = load_diff(&args.input)?;
        let f = spanlab_core::linalg::svd(input.diff.values().view())?;
        let diag = spanlab_core::linalg::diagnostics(f.sigma.as_slice().expect("contiguous"))?;
        let json = serde_json::to_string_pretty(&diag)?;
        emit(&args.output, &json, &span::diagnostics_markdown(&diag))?;
        Ok(EXIT_OK)
    })())
}

pub fn cmd_arith(args: &ArithArgs) -> i32 {
    finish((|| {
        let input = load_diff(&args.input)?;
        let report = arith::alignment_metrics(&input.diff)?;
        emit(&args.output, &report.to_json(), &report.to_markdown(&args.label))?;
        Ok(EXIT_OK)
    })())
}

/// Every `*.json` file in `dir`, parsed as a span report, in file-name order.
pub fn read_reports(dir: &Path) -> Result<Vec<SpanReport>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SpanReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect()
}

pub fn cmd_correlate(args: &CorrelateArgs) -> i32 {
    finish((|| {
        let reports = read_reports(&args.reports)?;
        let scores = tensorio::read_scores(&args.scores)?;
        let analysis = stats::correlate_span_vs_scores(&reports, &scores, &args.embedding, args.f1_aggregate)?;
        for (kind, why) in &analysis.skipped {
            eprintln!("warning: no correlation for {kind}: {why}");
        }
        emit(&args.output, &analysis.to_json(), &analysis.to_markdown())?;
        Ok(EXIT_OK)
    })())
}

fn scenario_config(args: &SimulateArgs) -> Result<ScenarioConfig> {
    let alignment = match (args.align, args.theta) {
        (AlignArg::InSpan, None) => Alignment::InSpan,
        (AlignArg::Orthogonal, None) => Alignment::Orthogonal,
        (AlignArg::Angled, Some(t)) => Alignment::Angled(t),
        (AlignArg::Angled, None) => bail!("--align angled needs --theta"),
        (_, Some(_)) => bail!("--theta only applies to --align angled"),
    };
    let cfg = ScenarioConfig::new(args.n, args.d, args.rank)
        .with_noise(args.noise)
        .with_alignment(alignment)
        .with_seed(args.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn write_matrix(dir: &Path, name: &str, values: Array2<f64>) -> Result<PathBuf> {
    let path = dir.join(name);
    let m = EmbeddingMatrix::new(values, Dtype::F64, name)?;
    tensorio::write_emb1(&m, &path)?;
    Ok(path)
}

pub fn cmd_simulate(args: &SimulateArgs) -> i32 {
    finish((|| {
        let cfg = scenario_config(args)?;
        let inst = scenario::generate(&cfg)?;
        let dir = &args.out;
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

        let (n, d) = (cfg.n, cfg.d);
        write_matrix(dir, "source.emb1", Array2::zeros((n, d)))?;
        write_matrix(dir, "target.emb1", inst.diff.values().clone())?;
        let w = inst.w_true.clone().into_shape_with_order((1, d))?;
        write_matrix(dir, "w_true.emb1", w)?;

        let mut roles = std::collections::BTreeMap::new();
        roles.insert(Role::Source, PathBuf::from("source.emb1"));
        roles.insert(Role::Target, PathBuf::from("target.emb1"));
        if let Some(per_class) = args.blobs {
            let (pos, neg) = scenario::separable_blobs(per_class, inst.w_true.view(), 6.0, cfg.seed ^ 0xB10B);
            write_matrix(dir, "pos.emb1", pos)?;
            write_matrix(dir, "neg.emb1", neg)?;
            roles.insert(Role::RealPos, PathBuf::from("pos.emb1"));
            roles.insert(Role::RealNeg, PathBuf::from("neg.emb1"));
        }
        let manifest = DatasetManifest {
            dataset_name: "simulated".into(),
            embedding_model: "scenario".into(),
            roles,
            notes: Some(serde_json::to_string(&cfg)?),
        };
        let json = serde_json::to_string_pretty(&manifest)? + "\n";
        tensorio::write_atomic(&dir.join("manifest.json"), json.as_bytes())?;
        println!("simulate: wrote {n} x {d} instance to {}", dir.display());
        Ok(EXIT_OK)
    })())
}
