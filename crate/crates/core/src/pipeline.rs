//! End-to-end batch runs: frame ingestion, unwrapping, description, online
//! matching, evaluation and artifact output.
//!
//! Frames are ordered by lexicographic file name within each directory, and
//! that order is the temporal order seen by the sequence search.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{describe_panorama, Descriptor, DescriptorSet, SadConfig, SplitSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_f1, evaluate_geo, read_db_geo_csv, EvalConfig, GroundTruth, Metrics,
};
use crate::geometry::{self, AnnularCalibration, UnwrappedPanorama, DEFAULT_OUT_WIDTH};
use crate::interchange;
use crate::matching::{ConeParams, MatchDecision, OnlineMatcher, Outcome, RejectReason};
use crate::raster::Raster;
use crate::synthetic::{gen_synthetic, SyntheticParams};

pub const THREADS_ENV: &str = "PALOC_THREADS";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    #[default]
    Sad,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    pub kind: DescriptorKind,
    /// Interchange files used when `kind = "file"`.
    pub database_file: Option<PathBuf>,
    pub query_file: Option<PathBuf>,
    pub split: SplitSpec,
    pub sad: SadConfig,
    /// Permutation applied to the query sub-descriptors before aggregation.
    pub reorder_parts: Option<Vec<usize>>,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            kind: DescriptorKind::Sad,
            database_file: None,
            query_file: None,
            split: SplitSpec::default(),
            sad: SadConfig::default(),
            reorder_parts: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    #[serde(flatten)]
    pub config: EvalConfig,
    pub ground_truth: Option<PathBuf>,
    pub database_geo: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub database_dir: Option<PathBuf>,
    pub query_dir: Option<PathBuf>,
    /// Calibration file, or `none` when the frames are already unwrapped.
    pub calibration: String,
    pub out_width: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub dump_matrices: bool,
    pub descriptor: DescriptorConfig,
    pub cone: ConeParams,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            database_dir: None,
            query_dir: None,
            calibration: "none".into(),
            out_width: DEFAULT_OUT_WIDTH,
            output_dir: PathBuf::from("paloc-out"),
            seed: 0,
            dump_matrices: false,
            descriptor: DescriptorConfig::default(),
            cone: ConeParams::default(),
            eval: EvalSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn calibration_path(&self) -> Option<PathBuf> {
        (self.calibration != "none" && !self.calibration.is_empty())
            .then(|| PathBuf::from(&self.calibration))
    }

    pub fn validate(&self) -> Result<()> {
        self.cone.validate()?;
        self.eval.config.validate()?;
        self.descriptor.split.validate()?;
        self.descriptor.sad.validate()?;
        let must_exist = |p: &Path| -> Result<()> {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "not found"),
                ))
            }
        };
        match self.descriptor.kind {
            DescriptorKind::Sad => {
                for (name, dir) in [
                    ("database_dir", &self.database_dir),
                    ("query_dir", &self.query_dir),
                ] {
                    let dir = dir.as_ref().ok_or_else(|| {
                        Error::Config(format!("descriptor kind sad needs `{name}`"))
                    })?;
                    must_exist(dir)?;
                }
            }
            DescriptorKind::File => {
                for (name, file) in [
                    ("descriptor.database_file", &self.descriptor.database_file),
                    ("descriptor.query_file", &self.descriptor.query_file),
                ] {
                    let file = file.as_ref().ok_or_else(|| {
                        Error::Config(format!("descriptor kind file needs `{name}`"))
                    })?;
                    must_exist(file)?;
                }
                for dir in [&self.database_dir, &self.query_dir].into_iter().flatten() {
                    must_exist(dir)?;
                }
            }
        }
        if let Some(c) = self.calibration_path() {
            must_exist(&c)?;
        }
        for p in [&self.eval.ground_truth, &self.eval.database_geo]
            .into_iter()
            .flatten()
        {
            must_exist(p)?;
        }
        Ok(())
    }
}

/// Caps rayon's global pool at `PALOC_THREADS` when set.
pub fn init_thread_pool_from_env() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("could not cap threads at {n}: {e}");
            }
        }
    }
}

/// Image files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if is_image && path.is_file() {
            frames.push(path);
        }
    }
    frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(frames)
}

/// Rounds every entry to `f32`, the precision of the interchange format, so
/// in-process and file-based runs see identical descriptors.
fn quantize(d: Descriptor) -> Result<Descriptor> {
    let v: Vec<f32> = d.values().iter().map(|&x| x as f32).collect();
    Descriptor::from_f32(&v)
}

pub fn load_panorama(
    path: &Path,
    calib: Option<&AnnularCalibration>,
    out_width: usize,
) -> Result<UnwrappedPanorama> {
    let raster = Raster::load(path)?;
    match calib {
        Some(c) => geometry::unwrap(&raster, c, out_width),
        None => Ok(UnwrappedPanorama::from_raster(raster)),
    }
}

/// Describes every frame of `dir` with the thumbnail baseline.
pub fn describe_dir(
    dir: &Path,
    calib: Option<&AnnularCalibration>,
    out_width: usize,
    split: &SplitSpec,
    sad: &SadConfig,
    reorder: Option<&[usize]>,
) -> Result<DescriptorSet> {
    let frames = list_frames(dir)?;
    if frames.is_empty() {
        return Err(Error::Config(format!(
            "{}: no image frames found",
            dir.display()
        )));
    }
    let descs = frames
        .par_iter()
        .map(|path| {
            let pano = load_panorama(path, calib, out_width)?;
            let d = describe_panorama(&pano, split, sad, reorder).map_err(|e| match e {
                Error::Indivisible { width, parts } => Error::Config(format!(
                    "{}: panorama width {width} is not divisible into {parts} parts",
                    path.display()
                )),
                other => other,
            })?;
            quantize(d)
        })
        .collect::<Result<Vec<_>>>()?;
    DescriptorSet::from_descriptors(descs, "sad")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub describe_ms: f64,
    pub match_total_ms: f64,
    pub per_query_mean_ms: f64,
    pub per_query_median_ms: f64,
    pub per_query_max_ms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: PipelineConfig,
    pub n_database: usize,
    pub n_query: usize,
    pub decisions: Vec<MatchDecision>,
    pub metrics: Metrics,
    pub timing: Timing,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Output of [`match_sets`]: decisions plus optional matrix rows and the
/// per-query decision latencies.
pub struct MatchRun {
    pub decisions: Vec<MatchDecision>,
    pub distances: Option<Vec<f64>>,
    pub scores: Option<Vec<f64>>,
    pub per_query_ms: Vec<f64>,
}

/// Feeds every query through an [`OnlineMatcher`], timing each decision.
pub fn match_sets(
    db: &DescriptorSet,
    queries: &DescriptorSet,
    cone: &ConeParams,
    keep_matrices: bool,
) -> Result<MatchRun> {
    if queries.dim() != db.dim() {
        return Err(Error::Config(format!(
            "descriptor dimension mismatch: database has {}, queries have {}",
            db.dim(),
            queries.dim()
        )));
    }
    let mut matcher = OnlineMatcher::new(db, *cone)?;
    let n_db = db.len();
    let mut run = MatchRun {
        decisions: Vec::with_capacity(queries.len()),
        distances: keep_matrices.then(|| Vec::with_capacity(queries.len() * n_db)),
        scores: keep_matrices.then(|| Vec::with_capacity(queries.len() * n_db)),
        per_query_ms: Vec::with_capacity(queries.len()),
    };
    for q in queries.iter() {
        let t0 = Instant::now();
        let decision = matcher.push(q)?;
        run.per_query_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        run.decisions.push(decision);
        if let (Some(dist), Some(scores)) = (run.distances.as_mut(), run.scores.as_mut()) {
            dist.extend_from_slice(matcher.last_distances());
            match matcher.last_scores() {
                Some(s) => scores.extend_from_slice(s),
                None => scores.extend(std::iter::repeat_n(0.0, n_db)),
            }
        }
    }
    Ok(run)
}

pub fn decisions_to_csv(decisions: &[MatchDecision]) -> String {
    let mut out = String::from("query_index,status,db_index,score,reason\n");
    for d in decisions {
        match d.outcome {
            Outcome::Accepted { db_index, score } => {
                writeln!(out, "{},accepted,{db_index},{score:.6},", d.query_index).unwrap()
            }
            Outcome::Rejected(reason) => {
                writeln!(out, "{},rejected,,,{reason}", d.query_index).unwrap()
            }
        }
    }
    out
}

pub fn write_decisions_csv(decisions: &[MatchDecision], path: &Path) -> Result<()> {
    std::fs::write(path, decisions_to_csv(decisions)).map_err(|e| Error::io(path, e))
}

pub fn read_decisions_csv(path: &Path) -> Result<Vec<MatchDecision>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| Error::Config(format!("{} row {}: {m}", path.display(), n + 1));
        let get = |i: usize| rec.get(i).unwrap_or("");
        let query_index = get(0).parse().map_err(|_| bad("bad query_index"))?;
        let outcome = match get(1) {
            "accepted" => Outcome::Accepted {
                db_index: get(2).parse().map_err(|_| bad("bad db_index"))?,
                score: get(3).parse().map_err(|_| bad("bad score"))?,
            },
            "rejected" => Outcome::Rejected(get(4).parse::<RejectReason>()?),
            other => return Err(bad(&format!("unknown status `{other}`"))),
        };
        out.push(MatchDecision {
            query_index,
            outcome,
        });
    }
    Ok(out)
}

/// Writes a row-per-query matrix as CSV.
pub fn write_matrix_csv(values: &[f64], n_db: usize, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in values.chunks(n_db.max(1)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_matrix_dumps(
    dir: &Path,
    n_query: usize,
    n_db: usize,
    values: &[f64],
    stem: &str,
    tag: &str,
) -> Result<()> {
    write_matrix_csv(values, n_db, &dir.join(format!("{stem}.csv")))?;
    let f32s: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    interchange::write_table(
        &dir.join(format!("{stem}.pald")),
        n_query,
        n_db,
        &f32s,
        Some(tag),
    )
}

/// Evaluates against whatever ground truth the config provides.
pub fn evaluate_run(
    decisions: &[MatchDecision],
    n_db: usize,
    eval: &EvalSection,
) -> Result<Metrics> {
    let mut metrics = Metrics::default();
    let Some(gt_path) = &eval.ground_truth else {
        return Ok(metrics);
    };
    let gt = GroundTruth::read_csv(gt_path)?;
    if gt.len() != decisions.len() {
        return Err(Error::CountMismatch {
            what: format!("ground truth rows in {}", gt_path.display()),
            expected: decisions.len(),
            found: gt.len(),
        });
    }
    gt.validate_db_range(n_db)?;
    if gt.has_indices() {
        metrics.index = Some(evaluate_f1(decisions, &gt, &eval.config)?);
    }
    if let Some(geo_path) = &eval.database_geo {
        let db_geo = read_db_geo_csv(geo_path)?;
        if db_geo.len() != n_db {
            return Err(Error::CountMismatch {
                what: format!("database geo rows in {}", geo_path.display()),
                expected: n_db,
                found: db_geo.len(),
            });
        }
        metrics.geo = Some(evaluate_geo(
            decisions,
            &gt.geo,
            &db_geo,
            &gt.overlap(),
            &eval.config,
        )?);
    }
    Ok(metrics)
}

fn load_sets(cfg: &PipelineConfig) -> Result<(DescriptorSet, DescriptorSet)> {
    let calib = cfg
        .calibration_path()
        .map(|p| geometry::load_calibration(&p))
        .transpose()?;
    match cfg.descriptor.kind {
        DescriptorKind::Sad => {
            let d = &cfg.descriptor;
            let db_dir = cfg.database_dir.as_deref().expect("validated");
            let q_dir = cfg.query_dir.as_deref().expect("validated");
            let db = describe_dir(
                db_dir,
                calib.as_ref(),
                cfg.out_width,
                &d.split,
                &d.sad,
                None,
            )?;
            let q = describe_dir(
                q_dir,
                calib.as_ref(),
                cfg.out_width,
                &d.split,
                &d.sad,
                d.reorder_parts.as_deref(),
            )?;
            Ok((db, q))
        }
        DescriptorKind::File => {
            let db_file = cfg.descriptor.database_file.as_deref().expect("validated");
            let q_file = cfg.descriptor.query_file.as_deref().expect("validated");
            let db = interchange::read_descriptor_file(db_file)?;
            let q = interchange::read_descriptor_file(q_file)?;
            for (dir, set, file) in [
                (&cfg.database_dir, &db, db_file),
                (&cfg.query_dir, &q, q_file),
            ] {
                if let Some(dir) = dir {
                    let frames = list_frames(dir)?.len();
                    if frames != set.len() {
                        return Err(Error::CountMismatch {
                            what: format!(
                                "descriptors in {} for frames in {}",
                                file.display(),
                                dir.display()
                            ),
                            expected: frames,
                            found: set.len(),
                        });
                    }
                }
            }
            Ok((db, q))
        }
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;

    let t0 = Instant::now();
    let (db, queries) = load_sets(cfg)?;
    let describe_ms = t0.elapsed().as_secs_f64() * 1e3;
    if db.is_empty() || queries.is_empty() {
        return Err(Error::Config(
            "database and query sets must be non-empty".into(),
        ));
    }
    log::info!(
        "{} database / {} query descriptors of dim {}",
        db.len(),
        queries.len(),
        db.dim()
    );

    let t1 = Instant::now();
    let run = match_sets(&db, &queries, &cfg.cone, cfg.dump_matrices)?;
    let match_total_ms = t1.elapsed().as_secs_f64() * 1e3;
    let metrics = evaluate_run(&run.decisions, db.len(), &cfg.eval)?;

    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_decisions_csv(&run.decisions, &out.join("decisions.csv"))?;
    metrics.write_key_values(&out.join("metrics.txt"))?;
    if let (Some(dist), Some(scores)) = (&run.distances, &run.scores) {
        write_matrix_dumps(out, queries.len(), db.len(), dist, "distance", "distmatrix")?;
        write_matrix_dumps(out, queries.len(), db.len(), scores, "score", "scorematrix")?;
    }

    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        n_database: db.len(),
        n_query: queries.len(),
        decisions: run.decisions,
        metrics,
        timing: Timing {
            describe_ms,
            match_total_ms,
            per_query_mean_ms: mean(&run.per_query_ms),
            per_query_median_ms: median(&run.per_query_ms),
            per_query_max_ms: run.per_query_ms.iter().copied().fold(0.0, f64::max),
        },
    };
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    let report_path = out.join("report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    Ok(report)
}

/// Paths written by [`write_synthetic`].
pub struct SyntheticFiles {
    pub database: PathBuf,
    pub queries: PathBuf,
    pub ground_truth: PathBuf,
    pub database_geo: PathBuf,
}

pub fn write_synthetic(params: &SyntheticParams, dir: &Path) -> Result<SyntheticFiles> {
    let ds = gen_synthetic(params)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SyntheticFiles {
        database: dir.join("database.pald"),
        queries: dir.join("queries.pald"),
        ground_truth: dir.join("ground_truth.csv"),
        database_geo: dir.join("database_geo.csv"),
    };
    interchange::write_descriptor_file(&ds.database, &files.database)?;
    interchange::write_descriptor_file(&ds.queries, &files.queries)?;
    ds.ground_truth.write_csv(&files.ground_truth)?;
    crate::evaluation::write_db_geo_csv(&ds.db_geo, &files.database_geo)?;
    Ok(files)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub n_db: usize,
    pub dim: usize,
    pub queries: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

/// Per-query decision latency (distance row, scoring and decision) against a
/// synthetic database of `n_db` frames with `dim`-dimensional descriptors.
pub fn benchmark(
    cone: &ConeParams,
    n_db: usize,
    dim: usize,
    n_queries: usize,
    seed: u64,
) -> Result<BenchmarkReport> {
    if n_queries == 0 {
        return Err(Error::param("queries", "must be positive"));
    }
    let ds = gen_synthetic(&SyntheticParams {
        n_db,
        overlap: 1.0,
        velocity: 1.0,
        noise: 0.05,
        dim,
        seed,
    })?;
    let mut matcher = OnlineMatcher::new(&ds.database, *cone)?;
    let mut times = Vec::with_capacity(n_queries);
    for i in 0..n_queries {
        let q = &ds.queries[i % ds.queries.len()];
        let t0 = Instant::now();
        let decision = matcher.push(q)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(decision);
    }
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let p95 = sorted[((sorted.len() as f64 * 0.95).ceil() as usize).clamp(1, sorted.len()) - 1];
    Ok(BenchmarkReport {
        n_db,
        dim,
        queries: n_queries,
        mean_ms: mean(&times),
        median_ms: median(&times),
        p95_ms: p95,
    })
}
