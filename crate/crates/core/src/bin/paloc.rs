use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use paloc::descriptor::{Aggregation, SadConfig, SplitSpec};
use paloc::evaluation::{EvalConfig, PrDenominator};
use paloc::geometry::{self, DEFAULT_OUT_WIDTH};
use paloc::interchange;
use paloc::matching::{ConeParams, Direction};
use paloc::pipeline::{self, DescriptorKind, EvalSection, PipelineConfig};
use paloc::raster::Raster;
use paloc::synthetic::SyntheticParams;

#[derive(Parser)]
#[command(
    name = "paloc",
    version,
    about = "Sequence-based place recognition for panoramic annular imagery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unwrap annular images into rectangular panoramas.
    Unwrap(UnwrapArgs),
    /// Compute thumbnail descriptors for a frame directory.
    Describe(DescribeArgs),
    /// Run the online sequence search on two descriptor files.
    Match(MatchArgs),
    /// Score a decisions CSV against ground truth.
    Evaluate(EvaluateArgs),
    /// End-to-end run from a config file and/or flags.
    Run(Box<RunArgs>),
    /// Write a synthetic matchable dataset.
    GenSynthetic(GenArgs),
    /// Measure per-query decision latency.
    Benchmark(BenchArgs),
}

#[derive(Args)]
struct UnwrapArgs {
    #[arg(long)]
    calibration: PathBuf,
    /// Image file or directory of frames.
    #[arg(long)]
    input: PathBuf,
    /// Output PNG file, or directory when the input is a directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_OUT_WIDTH)]
    width: usize,
}

#[derive(Args, Default)]
struct SplitArgs {
    /// Horizontal parts per panorama (1, 2 or 4).
    #[arg(long)]
    parts: Option<usize>,
    /// sum or concat.
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// Permutation of the query parts before aggregation, e.g. 2,3,0,1.
    #[arg(long, value_delimiter = ',')]
    reorder_parts: Option<Vec<usize>>,
    #[arg(long)]
    thumb_width: Option<usize>,
    #[arg(long)]
    thumb_height: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
}

impl SplitArgs {
    fn apply(&self, split: &mut SplitSpec, sad: &mut SadConfig) {
        if let Some(p) = self.parts {
            split.parts = p;
        }
        if let Some(a) = self.aggregation {
            split.aggregation = a;
        }
        if let Some(w) = self.thumb_width {
            sad.thumb_width = w;
        }
        if let Some(h) = self.thumb_height {
            sad.thumb_height = h;
        }
        if let Some(p) = self.patch_size {
            sad.patch_size = p;
        }
    }
}

#[derive(Args)]
struct DescribeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Calibration file; omit for frames that are already unwrapped.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_OUT_WIDTH)]
    width: usize,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args, Default)]
struct ConeArgs {
    #[arg(long)]
    n_q: Option<usize>,
    #[arg(long)]
    v_min: Option<f64>,
    #[arg(long)]
    v_max: Option<f64>,
    /// both, forward or reverse.
    #[arg(long)]
    direction: Option<Direction>,
    #[arg(long)]
    uniqueness_window: Option<usize>,
    #[arg(long)]
    uniqueness_ratio: Option<f64>,
    #[arg(long)]
    min_score: Option<f64>,
}

impl ConeArgs {
    fn apply(&self, p: &mut ConeParams) {
        if let Some(v) = self.n_q {
            p.n_q = v;
        }
        if let Some(v) = self.v_min {
            p.v_min = v;
        }
        if let Some(v) = self.v_max {
            p.v_max = v;
        }
        if let Some(v) = self.direction {
            p.direction = v;
        }
        if let Some(v) = self.uniqueness_window {
            p.uniqueness_window = v;
        }
        if let Some(v) = self.uniqueness_ratio {
            p.uniqueness_ratio = v;
        }
        if let Some(v) = self.min_score {
            p.min_score = v;
        }
    }
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    database: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    dump_matrices: bool,
    #[command(flatten)]
    cone: ConeArgs,
}

#[derive(Args, Default)]
struct EvalArgs {
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    database_geo: Option<PathBuf>,
    #[arg(long)]
    index_tolerance: Option<usize>,
    #[arg(long)]
    distance_tolerance: Option<f64>,
    /// all_queries or positives.
    #[arg(long)]
    pr_denominator: Option<PrDenominator>,
}

impl EvalArgs {
    fn apply(&self, e: &mut EvalSection) {
        if let Some(p) = &self.ground_truth {
            e.ground_truth = Some(p.clone());
        }
        if let Some(p) = &self.database_geo {
            e.database_geo = Some(p.clone());
        }
        if let Some(v) = self.index_tolerance {
            e.config.index_tolerance = v;
        }
        if let Some(v) = self.distance_tolerance {
            e.config.distance_tolerance_m = v;
        }
        if let Some(v) = self.pr_denominator {
            e.config.pr_denominator = v;
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    decisions: PathBuf,
    /// Number of database frames, for range checks on index ground truth.
    #[arg(long)]
    n_db: Option<usize>,
    /// Write key=value metrics here as well as printing them.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    database_dir: Option<PathBuf>,
    #[arg(long)]
    query_dir: Option<PathBuf>,
    /// Calibration file or `none`.
    #[arg(long)]
    calibration: Option<String>,
    #[arg(long)]
    out_width: Option<usize>,
    /// sad or file.
    #[arg(long)]
    descriptor: Option<String>,
    #[arg(long)]
    database_descriptors: Option<PathBuf>,
    #[arg(long)]
    query_descriptors: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dump_matrices: bool,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    cone: ConeArgs,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_db: usize,
    #[arg(long, default_value_t = 0.6)]
    overlap: f64,
    #[arg(long, default_value_t = 1.0)]
    velocity: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    n_db: usize,
    #[arg(long, default_value_t = 4096)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    cone: ConeArgs,
}

fn parse_descriptor_kind(s: &str) -> Result<DescriptorKind> {
    match s {
        "sad" => Ok(DescriptorKind::Sad),
        "file" => Ok(DescriptorKind::File),
        other => bail!("unknown descriptor `{other}` (expected sad or file)"),
    }
}

fn cmd_unwrap(args: UnwrapArgs) -> Result<()> {
    let calib = geometry::load_calibration(&args.calibration)?;
    let jobs: Vec<(PathBuf, PathBuf)> = if args.input.is_dir() {
        std::fs::create_dir_all(&args.output)
            .with_context(|| format!("creating {}", args.output.display()))?;
        pipeline::list_frames(&args.input)?
            .into_iter()
            .map(|p| {
                let name = Path::new(p.file_stem().unwrap_or_default()).with_extension("png");
                let out = args.output.join(name);
                (p, out)
            })
            .collect()
    } else {
        vec![(args.input.clone(), args.output.clone())]
    };
    for (src, dst) in &jobs {
        let img = Raster::load(src)?;
        let pano = geometry::unwrap(&img, &calib, args.width)?;
        pano.raster.save_png(dst)?;
        println!(
            "{} -> {} ({}x{})",
            src.display(),
            dst.display(),
            pano.width(),
            pano.height()
        );
    }
    Ok(())
}

fn cmd_describe(args: DescribeArgs) -> Result<()> {
    let calib = args
        .calibration
        .as_deref()
        .map(geometry::load_calibration)
        .transpose()?;
    let mut split = SplitSpec::default();
    let mut sad = SadConfig::default();
    args.split.apply(&mut split, &mut sad);
    let set = pipeline::describe_dir(
        &args.input,
        calib.as_ref(),
        args.width,
        &split,
        &sad,
        args.split.reorder_parts.as_deref(),
    )?;
    interchange::write_descriptor_file(&set, &args.output)?;
    println!(
        "{} descriptors of dim {} -> {}",
        set.len(),
        set.dim(),
        args.output.display()
    );
    Ok(())
}

fn cmd_match(args: MatchArgs) -> Result<()> {
    let mut cfg = PipelineConfig {
        output_dir: args.output,
        dump_matrices: args.dump_matrices,
        ..Default::default()
    };
    cfg.descriptor.kind = DescriptorKind::File;
    cfg.descriptor.database_file = Some(args.database);
    cfg.descriptor.query_file = Some(args.queries);
    args.cone.apply(&mut cfg.cone);
    let report = pipeline::run_pipeline(&cfg)?;
    let accepted = report.decisions.iter().filter(|d| d.is_accepted()).count();
    println!(
        "{accepted}/{} queries accepted; decisions in {}",
        report.n_query,
        cfg.output_dir.join("decisions.csv").display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let decisions = pipeline::read_decisions_csv(&args.decisions)?;
    let mut eval = EvalSection {
        config: EvalConfig::default(),
        ..Default::default()
    };
    args.eval.apply(&mut eval);
    if eval.ground_truth.is_none() {
        bail!("--ground-truth is required");
    }
    eval.config.validate()?;
    let n_db = match (args.n_db, &eval.database_geo) {
        (Some(n), _) => n,
        (None, Some(geo)) => paloc::evaluation::read_db_geo_csv(geo)?.len(),
        (None, None) => usize::MAX,
    };
    let metrics = pipeline::evaluate_run(&decisions, n_db, &eval)?;
    print!("{metrics}");
    print!("{}", metrics.to_key_values());
    if let Some(out) = args.output {
        metrics.write_key_values(&out)?;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.database_dir {
        cfg.database_dir = Some(v);
    }
    if let Some(v) = args.query_dir {
        cfg.query_dir = Some(v);
    }
    if let Some(v) = args.calibration {
        cfg.calibration = v;
    }
    if let Some(v) = args.out_width {
        cfg.out_width = v;
    }
    if let Some(v) = &args.descriptor {
        cfg.descriptor.kind = parse_descriptor_kind(v)?;
    }
    if let Some(v) = args.database_descriptors {
        cfg.descriptor.database_file = Some(v);
    }
    if let Some(v) = args.query_descriptors {
        cfg.descriptor.query_file = Some(v);
    }
    if let Some(v) = args.output_dir {
        cfg.output_dir = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.dump_matrices {
        cfg.dump_matrices = true;
    }
    if let Some(r) = &args.split.reorder_parts {
        cfg.descriptor.reorder_parts = Some(r.clone());
    }
    args.split
        .apply(&mut cfg.descriptor.split, &mut cfg.descriptor.sad);
    args.cone.apply(&mut cfg.cone);
    args.eval.apply(&mut cfg.eval);

    let report = pipeline::run_pipeline(&cfg)?;
    let accepted = report.decisions.iter().filter(|d| d.is_accepted()).count();
    println!(
        "{} queries against {} database frames: {accepted} accepted",
        report.n_query, report.n_database
    );
    print!("{}", report.metrics);
    println!(
        "timing: describe {:.1} ms, per-query decision median {:.3} ms (mean {:.3}, max {:.3})",
        report.timing.describe_ms,
        report.timing.per_query_median_ms,
        report.timing.per_query_mean_ms,
        report.timing.per_query_max_ms
    );
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let params = SyntheticParams {
        n_db: args.n_db,
        overlap: args.overlap,
        velocity: args.velocity,
        noise: args.noise,
        dim: args.dim,
        seed: args.seed,
    };
    let files = pipeline::write_synthetic(&params, &args.output)?;
    println!("database     {}", files.database.display());
    println!("queries      {}", files.queries.display());
    println!("ground truth {}", files.ground_truth.display());
    println!("database geo {}", files.database_geo.display());
    Ok(())
}

fn cmd_benchmark(args: BenchArgs) -> Result<()> {
    let mut cone = ConeParams::default();
    args.cone.apply(&mut cone);
    let r = pipeline::benchmark(&cone, args.n_db, args.dim, args.queries, args.seed)?;
    println!("n_db    dim    queries  mean_ms   median_ms  p95_ms");
    println!(
        "{:<7} {:<6} {:<8} {:<9.3} {:<10.3} {:.3}",
        r.n_db, r.dim, r.queries, r.mean_ms, r.median_ms, r.p95_ms
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    pipeline::init_thread_pool_from_env();
    let cli = Cli::parse();
    match cli.command {
        Command::Unwrap(a) => cmd_unwrap(a),
        Command::Describe(a) => cmd_describe(a),
        Command::Match(a) => cmd_match(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Run(a) => cmd_run(*a),
        Command::GenSynthetic(a) => cmd_gen(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    }
}
