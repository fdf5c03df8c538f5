//! Scoring decisions against ground truth.
//!
//! Two protocols are supported: index tolerance with precision/recall/F1, and
//! geographic tolerance with a false rate (unseen queries that were matched,
//! over all positives) and a positive rate (positives within the distance
//! tolerance).

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::MatchDecision;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GtEntry {
    DbIndex(usize),
    Geo(GeoPoint),
    /// The query has no counterpart in the database.
    Unseen,
}

/// Per-query ground truth as read from CSV. `geo` carries the optional
/// coordinates of every row, whatever its kind.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub entries: Vec<GtEntry>,
    pub geo: Vec<Option<GeoPoint>>,
}

impl GroundTruth {
    pub fn from_entries(entries: Vec<GtEntry>) -> Self {
        let geo = entries
            .iter()
            .map(|e| match e {
                GtEntry::Geo(p) => Some(*p),
                _ => None,
            })
            .collect();
        Self { entries, geo }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether each query overlaps the database.
    pub fn overlap(&self) -> Vec<bool> {
        self.entries
            .iter()
            .map(|e| !matches!(e, GtEntry::Unseen))
            .collect()
    }

    pub fn has_indices(&self) -> bool {
        self.entries.iter().all(|e| !matches!(e, GtEntry::Geo(_)))
    }

    pub fn has_geo(&self) -> bool {
        self.geo.iter().any(Option::is_some)
    }

    pub fn validate_db_range(&self, n_db: usize) -> Result<()> {
        for (q, e) in self.entries.iter().enumerate() {
            if let GtEntry::DbIndex(j) = e {
                if *j >= n_db {
                    return Err(Error::GroundTruth(format!(
                        "query {q}: db_index {j} outside database of {n_db} frames"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reads `query_id,kind,db_index,lat,lon` rows; `kind` is `db`, `geo` or
    /// `unseen` and unused columns may be empty. Rows must be in query order.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)?;
        let mut gt = GroundTruth::default();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).filter(|s| !s.is_empty());
            let bad = |msg: String| {
                Error::GroundTruth(format!("{} row {}: {msg}", path.display(), n + 1))
            };
            let qid: usize = field(0)
                .ok_or_else(|| bad("missing query_id".into()))?
                .parse()
                .map_err(|_| bad("query_id is not an integer".into()))?;
            if qid != n {
                return Err(bad(format!("query_id {qid} out of order (expected {n})")));
            }
            let num = |i: usize, name: &str| -> Result<Option<f64>> {
                field(i)
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| bad(format!("{name} `{s}` is not a number")))
                    })
                    .transpose()
            };
            let geo = match (num(3, "lat")?, num(4, "lon")?) {
                (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon)),
                (None, None) => None,
                _ => return Err(bad("lat and lon must be given together".into())),
            };
            let entry = match field(1).ok_or_else(|| bad("missing kind".into()))? {
                "db" => {
                    let j = field(2)
                        .ok_or_else(|| bad("kind db needs db_index".into()))?
                        .parse()
                        .map_err(|_| bad("db_index is not an integer".into()))?;
                    GtEntry::DbIndex(j)
                }
                "geo" => GtEntry::Geo(geo.ok_or_else(|| bad("kind geo needs lat and lon".into()))?),
                "unseen" => GtEntry::Unseen,
                other => return Err(bad(format!("unknown kind `{other}`"))),
            };
            gt.entries.push(entry);
            gt.geo.push(geo);
        }
        Ok(gt)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("query_id,kind,db_index,lat,lon\n");
        for (q, (e, g)) in self.entries.iter().zip(&self.geo).enumerate() {
            let (kind, idx) = match e {
                GtEntry::DbIndex(j) => ("db", j.to_string()),
                GtEntry::Geo(_) => ("geo", String::new()),
                GtEntry::Unseen => ("unseen", String::new()),
            };
            let (lat, lon) = g.map_or((String::new(), String::new()), |p| {
                (format!("{:.9}", p.lat), format!("{:.9}", p.lon))
            });
            out.push_str(&format!("{q},{kind},{idx},{lat},{lon}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads `db_id,lat,lon` rows in database order.
pub fn read_db_geo_csv(path: &Path) -> Result<Vec<GeoPoint>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad =
            |msg: &str| Error::GroundTruth(format!("{} row {}: {msg}", path.display(), n + 1));
        let get = |i: usize| rec.get(i).ok_or_else(|| bad("missing column"));
        let id: usize = get(0)?
            .parse()
            .map_err(|_| bad("db_id is not an integer"))?;
        if id != n {
            return Err(bad("db_id out of order"));
        }
        let lat = get(1)?.parse().map_err(|_| bad("lat is not a number"))?;
        let lon = get(2)?.parse().map_err(|_| bad("lon is not a number"))?;
        out.push(GeoPoint::new(lat, lon));
    }
    Ok(out)
}

pub fn write_db_geo_csv(points: &[GeoPoint], path: &Path) -> Result<()> {
    let mut out = String::from("db_id,lat,lon\n");
    for (j, p) in points.iter().enumerate() {
        out.push_str(&format!("{j},{:.9},{:.9}\n", p.lat, p.lon));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrDenominator {
    #[default]
    AllQueries,
    Positives,
}

impl FromStr for PrDenominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_queries" => Ok(Self::AllQueries),
            "positives" => Ok(Self::Positives),
            other => Err(Error::param(
                "pr_denominator",
                format!("`{other}` (expected all_queries or positives)"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub index_tolerance: usize,
    pub distance_tolerance_m: f64,
    pub pr_denominator: PrDenominator,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            index_tolerance: 5,
            distance_tolerance_m: 50.0,
            pr_denominator: PrDenominator::AllQueries,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.index_tolerance == 0 {
            return Err(Error::param("index_tolerance", "must be positive"));
        }
        if self.distance_tolerance_m.is_nan() || self.distance_tolerance_m <= 0.0 {
            return Err(Error::param("distance_tolerance_m", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Rejected queries without a database counterpart.
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

/// `2PR / (P + R)`, zero when both vanish.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * (precision * recall) / (precision + recall)
    }
}

impl F1Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        // 2TP / (2TP + FP + FN) equals 2PR / (P + R) and rounds only once
        let (f1, _) = ratio(2 * tp, 2 * tp + fp + fn_);
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
        }
    }
}

/// Index-tolerance protocol.
pub fn evaluate_f1(
    decisions: &[MatchDecision],
    gt: &GroundTruth,
    cfg: &EvalConfig,
) -> Result<F1Metrics> {
    if decisions.len() != gt.len() {
        return Err(Error::CountMismatch {
            what: "ground truth entries".into(),
            expected: decisions.len(),
            found: gt.len(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (q, (d, e)) in decisions.iter().zip(&gt.entries).enumerate() {
        match (d.accepted(), e) {
            (_, GtEntry::Geo(_)) => {
                return Err(Error::GroundTruth(format!(
                    "query {q}: index protocol needs db or unseen ground truth"
                )))
            }
            (Some((j, _)), GtEntry::DbIndex(g)) if j.abs_diff(*g) <= cfg.index_tolerance => tp += 1,
            (Some(_), _) => fp += 1,
            (None, GtEntry::DbIndex(_)) => fn_ += 1,
            (None, GtEntry::Unseen) => tn += 1,
        }
    }
    Ok(F1Metrics::from_counts(tp, fp, fn_, tn))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoMetrics {
    pub queries: usize,
    pub positive_count: usize,
    /// Positives whose query is not covered by the database.
    pub false_count: usize,
    /// Positives within the distance tolerance.
    pub within_tolerance: usize,
    pub false_rate: f64,
    pub positive_rate: f64,
    pub no_positives: bool,
}

/// Geographic protocol. `query_geo[i]` may be absent for unseen queries, in
/// which case a positive for that query never counts as within tolerance.
pub fn evaluate_geo(
    decisions: &[MatchDecision],
    query_geo: &[Option<GeoPoint>],
    db_geo: &[GeoPoint],
    gt_overlap: &[bool],
    cfg: &EvalConfig,
) -> Result<GeoMetrics> {
    let n = decisions.len();
    for (what, len) in [
        ("query geo points", query_geo.len()),
        ("overlap flags", gt_overlap.len()),
    ] {
        if len != n {
            return Err(Error::CountMismatch {
                what: what.into(),
                expected: n,
                found: len,
            });
        }
    }
    let mut m = GeoMetrics {
        queries: n,
        ..Default::default()
    };
    for (q, d) in decisions.iter().enumerate() {
        let Some((j, _)) = d.accepted() else { continue };
        m.positive_count += 1;
        if !gt_overlap[q] {
            m.false_count += 1;
        }
        let db_point = db_geo.get(j).ok_or_else(|| {
            Error::GroundTruth(format!("query {q} matched db frame {j} with no geo entry"))
        })?;
        if let Some(qp) = query_geo[q] {
            if haversine_m(qp, *db_point) <= cfg.distance_tolerance_m {
                m.within_tolerance += 1;
            }
        }
    }
    if m.positive_count == 0 {
        m.no_positives = true;
        log::warn!("no accepted decisions; false rate reported as 0");
    } else {
        m.false_rate = m.false_count as f64 / m.positive_count as f64;
    }
    let pr_den = match cfg.pr_denominator {
        PrDenominator::AllQueries => n,
        PrDenominator::Positives => m.positive_count,
    };
    if pr_den > 0 {
        m.positive_rate = m.within_tolerance as f64 / pr_den as f64;
    }
    Ok(m)
}

/// Combined evaluation output.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub index: Option<F1Metrics>,
    pub geo: Option<GeoMetrics>,
}

impl Metrics {
    /// Machine-readable `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.index {
            out.push_str(&format!(
                "tp={}\nfp={}\nfn={}\ntn={}\nprecision={:.6}\nrecall={:.6}\nf1={:.6}\nprecision_undefined={}\nrecall_undefined={}\n",
                m.tp, m.fp, m.fn_, m.tn, m.precision, m.recall, m.f1, m.precision_undefined, m.recall_undefined
            ));
        }
        if let Some(g) = &self.geo {
            out.push_str(&format!(
                "queries={}\npositive_count={}\nfalse_count={}\nwithin_tolerance={}\nfalse_rate={:.6}\npositive_rate={:.6}\nno_positives={}\n",
                g.queries, g.positive_count, g.false_count, g.within_tolerance, g.false_rate, g.positive_rate, g.no_positives
            ));
        }
        out
    }

    pub fn write_key_values(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_key_values().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(m) = &self.index {
            writeln!(f, "index protocol")?;
            writeln!(
                f,
                "  TP {:>6}   FP {:>6}   FN {:>6}   TN {:>6}",
                m.tp, m.fp, m.fn_, m.tn
            )?;
            writeln!(
                f,
                "  precision {:.4}{}   recall {:.4}{}   F1 {:.4}",
                m.precision,
                if m.precision_undefined {
                    " (undefined)"
                } else {
                    ""
                },
                m.recall,
                if m.recall_undefined {
                    " (undefined)"
                } else {
                    ""
                },
                m.f1
            )?;
        }
        if let Some(g) = &self.geo {
            writeln!(f, "geo protocol")?;
            writeln!(
                f,
                "  positives {:>6} / {:<6}  FR {:>7.2}%{}   PR {:>7.2}%",
                g.positive_count,
                g.queries,
                100.0 * g.false_rate,
                if g.no_positives {
                    " (no positives)"
                } else {
                    ""
                },
                100.0 * g.positive_rate
            )?;
        }
        Ok(())
    }
}
