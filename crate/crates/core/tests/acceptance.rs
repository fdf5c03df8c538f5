//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails. Latency misses within 2x of the target only warn.

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use paloc::descriptor::{
    aggregate, cosine_distance, sad_descriptor, sad_distance, Aggregation, Descriptor, SadConfig,
};
use paloc::evaluation::{
    evaluate_f1, evaluate_geo, f1_from_pr, EvalConfig, GeoPoint, GroundTruth, GtEntry,
};
use paloc::geometry::{unwrap, AnnularCalibration, DEFAULT_OUT_WIDTH};
use paloc::matching::{
    run_online, ConeParams, DistanceMatrix, MatchDecision, Outcome, RejectReason,
};
use paloc::pipeline::{benchmark, match_sets};
use paloc::raster::Raster;
use paloc::synthetic::{gen_synthetic, SyntheticParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Warn(String),
    Fail(String),
}

type Check = fn() -> Verdict;

fn pass(msg: impl Into<String>) -> Verdict {
    Verdict::Pass(msg.into())
}

fn fail(msg: impl Into<String>) -> Verdict {
    Verdict::Fail(msg.into())
}

// ---------------------------------------------------------------------------
// Cone search against a literal enumeration

fn oracle_nn(row: &[f64]) -> Option<usize> {
    let mut best = 0;
    for j in 0..row.len() {
        if row[j] < row[best] {
            best = j;
        }
    }
    if row.len() > 1 && row.iter().all(|&v| v == row[best]) {
        None
    } else {
        Some(best)
    }
}

fn oracle_scores(d: &DistanceMatrix, p: &ConeParams) -> Vec<Vec<Option<f64>>> {
    let nn: Vec<Option<usize>> = (0..d.n_query()).map(|i| oracle_nn(d.row(i))).collect();
    let mut out = Vec::new();
    for i in 0..d.n_query() {
        if i + 1 < p.n_q {
            out.push(vec![None; d.n_db()]);
            continue;
        }
        let mut row = Vec::with_capacity(d.n_db());
        for j in 0..d.n_db() {
            let mut n_match = 0usize;
            for k in 0..p.n_q {
                let mut hit = false;
                for jp in 0..d.n_db() {
                    if nn[i - k] != Some(jp) {
                        continue;
                    }
                    let (kf, jf, jpf) = (k as f64, j as f64, jp as f64);
                    let fwd = jf - kf * p.v_max <= jpf && jpf <= jf - kf * p.v_min;
                    let rev = jf + kf * p.v_min <= jpf && jpf <= jf + kf * p.v_max;
                    hit |= fwd || rev;
                }
                n_match += hit as usize;
            }
            row.push(Some(n_match as f64 / p.n_q as f64));
        }
        out.push(row);
    }
    out
}

fn cone_oracle_equivalence() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let cases = 240;
    for case in 0..cases {
        let n_query = rng.gen_range(1..=60);
        let n_db = rng.gen_range(1..=100);
        // A coarse value grid some of the time so ties and flat rows occur.
        let coarse = case % 4 == 0;
        let values: Vec<f64> = (0..n_query * n_db)
            .map(|_| {
                if coarse {
                    rng.gen_range(0..4) as f64 * 0.5
                } else {
                    rng.gen_range(0.0..2.0)
                }
            })
            .collect();
        let d = DistanceMatrix::from_rows(n_query, n_db, values).unwrap();
        let v_min = rng.gen_range(0.2..=1.0);
        let p = ConeParams {
            n_q: rng.gen_range(2..=12),
            v_min,
            v_max: rng.gen_range(1.0f64..=3.0).max(v_min),
            ..ConeParams::default()
        };
        let (s, decisions) = run_online(&d, &p).unwrap();
        let expected = oracle_scores(&d, &p);
        for i in 0..n_query {
            let warm = matches!(
                decisions[i].outcome,
                Outcome::Rejected(RejectReason::Warmup)
            );
            if warm != (i + 1 < p.n_q) {
                return fail(format!("case {case}: warmup status wrong at query {i}"));
            }
            for (j, e) in expected[i].iter().enumerate() {
                if let Some(e) = *e {
                    if s.get(i, j) != e {
                        return fail(format!(
                            "case {case}: score({i},{j}) = {} but enumeration gives {e}",
                            s.get(i, j)
                        ));
                    }
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return fail(format!("{cases} matrices took {secs:.1} s"));
    }
    pass(format!(
        "{cases} random matrices identical to enumeration in {secs:.2} s"
    ))
}

// ---------------------------------------------------------------------------
// Synthetic end to end

fn synthetic_end_to_end() -> Verdict {
    let t0 = Instant::now();
    let params = SyntheticParams {
        n_db: 200,
        overlap: 0.6,
        velocity: 1.0,
        noise: 0.05,
        dim: 256,
        seed: 0,
    };
    let cone = ConeParams {
        n_q: 10,
        v_min: 0.4,
        v_max: 2.5,
        ..ConeParams::default()
    };
    let ds = gen_synthetic(&params).unwrap();
    let run = match_sets(&ds.database, &ds.queries, &cone, false).unwrap();
    let mut eligible = 0;
    let mut correct = 0;
    let mut unseen_accepted = 0;
    for (d, gt) in run.decisions.iter().zip(&ds.ground_truth.entries) {
        match gt {
            GtEntry::Unseen => unseen_accepted += d.is_accepted() as usize,
            GtEntry::DbIndex(t) if d.query_index + 1 >= cone.n_q => {
                eligible += 1;
                if let Some((j, _)) = d.accepted() {
                    correct += (j.abs_diff(*t) <= 5) as usize;
                }
            }
            _ => {}
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let rate = correct as f64 / eligible as f64;
    let msg = format!(
        "{correct}/{eligible} overlapping queries accepted within 5 ({:.1}%), {unseen_accepted} unseen accepted, {secs:.2} s",
        rate * 100.0
    );
    if rate >= 0.95 && unseen_accepted == 0 && secs < 10.0 {
        pass(msg)
    } else {
        fail(msg)
    }
}

// ---------------------------------------------------------------------------
// Unwrap

fn unwrap_correctness() -> Verdict {
    const WEDGES: usize = 8;
    let calib = AnnularCalibration::new(310.4, 290.6, 60.0, 280.0).unwrap();
    // Source column offset is center_row and row offset is center_col.
    let (cx, cy) = (calib.center_row, calib.center_col);
    let sector = 2.0 * PI / WEDGES as f64;
    // Alternating 0/1 wedges with a 1 px linear ramp across each edge, so the
    // 0.5 level sits exactly on the edge ray.
    let img = Raster::from_fn_gray(600, 620, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let pos = dx.atan2(dy).rem_euclid(2.0 * PI) / sector;
        let frac = pos.fract();
        let across = dx.hypot(dy) * (frac.min(1.0 - frac) * sector).sin();
        let sign = if (pos as usize) % 2 == 1 { 1.0 } else { -1.0 };
        (0.5 + sign * across.min(0.5)) as f32
    });
    let pano = unwrap(&img, &calib, DEFAULT_OUT_WIDTH).unwrap();
    let w = pano.width();
    let spacing = w as f64 / WEDGES as f64;
    let mut worst = 0.0f64;
    let mut transitions = 0;
    for i in 0..pano.height() {
        let row = pano.raster.row(i);
        for j in 1..w {
            if (row[j - 1] >= 0.5) != (row[j] >= 0.5) {
                transitions += 1;
                let edge = j as f64 - 0.5;
                let nearest = (edge / spacing).round() * spacing;
                worst = worst.max((edge - nearest).abs());
            }
        }
    }
    let expected_transitions = (WEDGES - 1) * pano.height();
    if transitions != expected_transitions || worst > 1.0 {
        return fail(format!(
            "{transitions} band edges (expected {expected_transitions}), worst offset {worst:.2} px"
        ));
    }

    let flat = Raster::filled(600, 620, 3, 0.37);
    let flat_pano = unwrap(&flat, &calib, DEFAULT_OUT_WIDTH).unwrap();
    if flat_pano.raster.data().iter().any(|&v| v != 0.37) {
        return fail("constant image did not unwrap to the same constant");
    }
    let ratio = pano.width() as f64 / pano.height() as f64;
    if (calib.aspect_ratio() - 4.8).abs() > 1e-12 || (ratio - 4.8).abs() > 1e-12 {
        return fail(format!(
            "aspect ratio {ratio} ({}x{})",
            pano.width(),
            pano.height()
        ));
    }
    pass(format!(
        "band edges within {worst:.2} px, constant image exact, {}x{} = 4.8:1",
        pano.width(),
        pano.height()
    ))
}

// ---------------------------------------------------------------------------
// Aggregation

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Descriptor {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut d = Descriptor::new(v).unwrap();
    d.normalize();
    d
}

fn aggregation_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_perm = 0.0f64;
    let mut worst_norm = 0.0f64;
    for _ in 0..200 {
        let dim = rng.gen_range(1..=64);
        let parts: Vec<Descriptor> = (0..4).map(|_| random_unit(&mut rng, dim)).collect();
        let summed = aggregate(&parts, Aggregation::Sum).unwrap();
        let mut shuffled = parts.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let reshuffled = aggregate(&shuffled, Aggregation::Sum).unwrap();
        for (a, b) in summed.values().iter().zip(reshuffled.values()) {
            worst_perm = worst_perm.max((a - b).abs());
        }
        if summed.norm() > 0.0 {
            worst_norm = worst_norm.max((summed.norm() - 1.0).abs());
        }
    }
    let parts: Vec<Descriptor> = (0..4).map(|_| random_unit(&mut rng, 16)).collect();
    let concat = aggregate(&parts, Aggregation::Concat).unwrap();
    let swapped = aggregate(
        &[
            parts[1].clone(),
            parts[0].clone(),
            parts[2].clone(),
            parts[3].clone(),
        ],
        Aggregation::Concat,
    )
    .unwrap();
    let order_sensitive = concat.values() != swapped.values();
    if worst_perm > 1e-6 || worst_norm > 1e-4 || !order_sensitive {
        return fail(format!(
            "permutation deviation {worst_perm:.1e}, norm deviation {worst_norm:.1e}, concat order sensitive: {order_sensitive}"
        ));
    }
    pass(format!(
        "sum permutation deviation {worst_perm:.1e}, norm deviation {worst_norm:.1e}, concat order sensitive"
    ))
}

// ---------------------------------------------------------------------------
// Metrics

fn accepted(i: usize, j: usize) -> MatchDecision {
    MatchDecision {
        query_index: i,
        outcome: Outcome::Accepted {
            db_index: j,
            score: 1.0,
        },
    }
}

fn rejected(i: usize) -> MatchDecision {
    MatchDecision {
        query_index: i,
        outcome: Outcome::Rejected(RejectReason::NotUnique),
    }
}

fn metrics_oracle() -> Verdict {
    // 8 hits, 2 misses beyond tolerance, 2 rejected with ground truth, 3 rejected unseen.
    let mut decisions = Vec::new();
    let mut entries = Vec::new();
    for i in 0..8 {
        decisions.push(accepted(i, 100 + i + (i % 6)));
        entries.push(GtEntry::DbIndex(100 + i));
    }
    for i in 8..10 {
        decisions.push(accepted(i, 10));
        entries.push(GtEntry::DbIndex(150));
    }
    for i in 10..12 {
        decisions.push(rejected(i));
        entries.push(GtEntry::DbIndex(i));
    }
    for i in 12..15 {
        decisions.push(rejected(i));
        entries.push(GtEntry::Unseen);
    }
    let gt = GroundTruth::from_entries(entries);
    let m = evaluate_f1(&decisions, &gt, &EvalConfig::default()).unwrap();
    if (m.tp, m.fp, m.fn_) != (8, 2, 2) || m.precision != 0.8 || m.recall != 0.8 || m.f1 != 0.8 {
        return fail(format!(
            "tp={} fp={} fn={} P={} R={} F1={}",
            m.tp, m.fp, m.fn_, m.precision, m.recall, m.f1
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (tp, fp, fn_): (usize, usize, usize) = (
            rng.gen_range(1..500),
            rng.gen_range(0..500),
            rng.gen_range(0..500),
        );
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fn_) as f64;
        let by_counts = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        worst = worst.max((f1_from_pr(p, r) - by_counts).abs());
    }
    if worst > 1e-12 {
        return fail(format!("F1 formulas differ by {worst:.1e}"));
    }

    // 100 queries, 40 accepted, 5 of those on unseen queries.
    let db_geo: Vec<GeoPoint> = (0..100)
        .map(|j| GeoPoint::new(30.0 + j as f64 * 1e-4, 120.0))
        .collect();
    let mut decisions = Vec::new();
    let mut query_geo = Vec::new();
    let mut overlap = Vec::new();
    for (i, &place) in db_geo.iter().enumerate() {
        let seen = !(35..40).contains(&i) && i < 90;
        overlap.push(seen);
        query_geo.push(Some(if seen {
            place
        } else {
            GeoPoint::new(29.0, 120.0)
        }));
        decisions.push(if i < 40 { accepted(i, i) } else { rejected(i) });
    }
    let g = evaluate_geo(
        &decisions,
        &query_geo,
        &db_geo,
        &overlap,
        &EvalConfig::default(),
    )
    .unwrap();
    if g.false_rate != 0.125 {
        return fail(format!(
            "FR = {} from {}/{}",
            g.false_rate, g.false_count, g.positive_count
        ));
    }
    pass(format!(
        "8/2/2 -> P=R=F1=0.8, dual F1 within {worst:.1e}, FR 5/40 = 0.125"
    ))
}

// ---------------------------------------------------------------------------
// SAD illumination robustness

fn textured_image(rng: &mut ChaCha8Rng) -> Raster {
    let (w, h) = (256, 64);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(4.0..24.0),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let raw: Vec<f64> = (0..w * h)
        .map(|p| {
            let (x, y) = ((p % w) as f64, (p / w) as f64);
            blobs
                .iter()
                .map(|&(bx, by, s, a)| {
                    a * (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * s * s)).exp()
                })
                .sum()
        })
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Keep values in [0.25, 0.65] so gain and bias shifts do not clip.
    Raster::from_fn_gray(w, h, |x, y| {
        (0.25 + 0.4 * (raw[y * w + x] - lo) / (hi - lo)) as f32
    })
}

fn sad_illumination_robustness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SadConfig::default();
    let images: Vec<Raster> = (0..20).map(|_| textured_image(&mut rng)).collect();
    let descs: Vec<Descriptor> = images
        .iter()
        .map(|im| sad_descriptor(im, &cfg).unwrap())
        .collect();
    let mut ok = 0;
    let mut total = 0;
    for (i, img) in images.iter().enumerate() {
        let gain = rng.gen_range(0.6f32..1.4);
        let bias = rng.gen_range(-0.1f32..0.1);
        let shifted = sad_descriptor(&img.map(|v| gain * v + bias), &cfg).unwrap();
        let metrics: [fn(&Descriptor, &Descriptor) -> paloc::Result<f64>; 2] =
            [cosine_distance, sad_distance];
        for metric in metrics {
            total += 1;
            let own = metric(&descs[i], &shifted).unwrap();
            let other = (0..images.len())
                .filter(|&k| k != i)
                .map(|k| metric(&descs[i], &descs[k]).unwrap())
                .fold(f64::INFINITY, f64::min);
            ok += (own < other) as usize;
        }
    }
    let msg =
        format!("{ok}/{total} shifted images closest to their source (cosine and SAD distance)");
    if ok == total {
        pass(msg)
    } else {
        fail(msg)
    }
}

// ---------------------------------------------------------------------------
// Latency

const LATENCY_TARGET_MS: f64 = 13.0;

fn latency() -> Verdict {
    let r = benchmark(&ConeParams::default(), 1000, 4096, 200, 0).unwrap();
    let msg = format!(
        "n_db=1000 dim=4096: median {:.3} ms, mean {:.3} ms, p95 {:.3} ms over {} queries",
        r.median_ms, r.mean_ms, r.p95_ms, r.queries
    );
    if r.median_ms <= LATENCY_TARGET_MS {
        pass(msg)
    } else if r.median_ms <= 2.0 * LATENCY_TARGET_MS {
        Verdict::Warn(msg)
    } else {
        fail(msg)
    }
}

// ---------------------------------------------------------------------------
// Determinism

fn run_cli(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_paloc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    if let Err(e) = run_cli(&["gen-synthetic", "--output", "data", "--seed", "5"], root) {
        return fail(format!("gen-synthetic failed: {e}"));
    }
    let mut csvs = Vec::new();
    for out in ["run_a", "run_b"] {
        let args = [
            "run",
            "--descriptor",
            "file",
            "--database-descriptors",
            "data/database.pald",
            "--query-descriptors",
            "data/queries.pald",
            "--ground-truth",
            "data/ground_truth.csv",
            "--output-dir",
            out,
        ];
        if let Err(e) = run_cli(&args, root) {
            return fail(format!("run failed: {e}"));
        }
        csvs.push(std::fs::read(root.join(out).join("decisions.csv")).unwrap());
    }
    if csvs[0] != csvs[1] {
        return fail("decision CSVs differ between identical runs");
    }
    pass(format!(
        "two runs produced identical {}-byte decision CSVs",
        csvs[0].len()
    ))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 8] = [
        ("cone search oracle equivalence", cone_oracle_equivalence),
        ("synthetic end to end", synthetic_end_to_end),
        ("unwrap correctness", unwrap_correctness),
        ("aggregation properties", aggregation_properties),
        ("metrics oracle", metrics_oracle),
        (
            "thumbnail illumination robustness",
            sad_illumination_robustness,
        ),
        ("decision latency", latency),
        ("run determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Verdict::Pass(msg) => println!("[PASS] {name}: {msg}"),
            Verdict::Warn(msg) => println!("[WARN] {name}: {msg}"),
            Verdict::Fail(msg) => {
                failed += 1;
                println!("[FAIL] {name}: {msg}");
            }
        }
    }
    println!(
        "acceptance: {} passed or warned, {failed} failed",
        checks.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
