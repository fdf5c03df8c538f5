//! Distance matrix construction and online cone-based sequence search.
//!
//! Every query `i` is first paired with its nearest database frame. To score a
//! candidate database frame `j` for query `i`, the search looks back over the
//! last `n_q` queries: the nearest neighbor of query `i - k` counts as a match
//! if it falls inside one of the two velocity cones anchored at `j`,
//!
//! ```text
//! forward: j - k * v_max <= nn(i - k) <= j - k * v_min
//! reverse: j + k * v_min <= nn(i - k) <= j + k * v_max
//! ```
//!
//! and the score is the fraction of the `n_q` offsets that match. Only past
//! queries are consulted, so decisions can be emitted as frames arrive.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{cosine_from_parts, dot, Descriptor, DescriptorSet};
use crate::error::{Error, Result};

/// Database sizes below this are scanned on the calling thread.
const PAR_MIN_DB: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    values: Vec<f64>,
    n_query: usize,
    n_db: usize,
}

impl DistanceMatrix {
    pub fn from_rows(n_query: usize, n_db: usize, values: Vec<f64>) -> Result<Self> {
        if n_query == 0 || n_db == 0 {
            return Err(Error::param(
                "distance matrix",
                "dimensions must be positive",
            ));
        }
        if values.len() != n_query * n_db {
            return Err(Error::DimensionMismatch {
                expected: n_query * n_db,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param(
                "distance matrix",
                format!(
                    "entry ({}, {}) = {} is not finite and non-negative",
                    pos / n_db,
                    pos % n_db,
                    values[pos]
                ),
            ));
        }
        Ok(Self {
            values,
            n_query,
            n_db,
        })
    }

    pub fn n_query(&self) -> usize {
        self.n_query
    }

    pub fn n_db(&self) -> usize {
        self.n_db
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_db + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_db..(i + 1) * self.n_db]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy restricted to the first `n` query rows.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::from_rows(n, self.n_db, self.values[..n * self.n_db].to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    values: Vec<f64>,
    n_query: usize,
    n_db: usize,
}

impl ScoreMatrix {
    pub fn n_query(&self) -> usize {
        self.n_query
    }

    pub fn n_db(&self) -> usize {
        self.n_db
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_db + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_db..(i + 1) * self.n_db]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Both,
    Forward,
    Reverse,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "forward" => Ok(Self::Forward),
            "reverse" => Ok(Self::Reverse),
            other => Err(Error::param(
                "direction",
                format!("`{other}` (expected both, forward or reverse)"),
            )),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Both => "both",
            Self::Forward => "forward",
            Self::Reverse => "reverse",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConeParams {
    /// Sequence length, counting the current query.
    pub n_q: usize,
    /// Minimal database frames advanced per query frame.
    pub v_min: f64,
    pub v_max: f64,
    /// Half-width of the window excluded around the best candidate.
    pub uniqueness_window: usize,
    /// Required ratio of the best score to the best score outside the window.
    pub uniqueness_ratio: f64,
    pub min_score: f64,
    pub direction: Direction,
}

impl Default for ConeParams {
    fn default() -> Self {
        Self {
            n_q: 10,
            v_min: 0.4,
            v_max: 2.5,
            uniqueness_window: 10,
            uniqueness_ratio: 1.11,
            min_score: 0.3,
            direction: Direction::Both,
        }
    }
}

impl ConeParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_q == 0 {
            return Err(Error::param("n_q", "must be at least 1"));
        }
        if !(self.v_min.is_finite()
            && self.v_max.is_finite()
            && self.v_min > 0.0
            && self.v_min <= self.v_max)
        {
            return Err(Error::param(
                "v_min",
                format!(
                    "need 0 < v_min <= v_max, got v_min={} v_max={}",
                    self.v_min, self.v_max
                ),
            ));
        }
        if !(self.uniqueness_ratio >= 1.0 && self.uniqueness_ratio.is_finite()) {
            return Err(Error::param(
                "uniqueness_ratio",
                format!("{} must be >= 1", self.uniqueness_ratio),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(Error::param(
                "min_score",
                format!("{} outside [0, 1]", self.min_score),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Warmup,
    BelowMinScore,
    NotUnique,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Warmup => "warmup",
            Self::BelowMinScore => "below_min_score",
            Self::NotUnique => "not_unique",
        }
    }
}

impl FromStr for RejectReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmup" => Ok(Self::Warmup),
            "below_min_score" => Ok(Self::BelowMinScore),
            "not_unique" => Ok(Self::NotUnique),
            other => Err(Error::param(
                "reason",
                format!("unknown reject reason `{other}`"),
            )),
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Accepted { db_index: usize, score: f64 },
    Rejected(RejectReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub query_index: usize,
    pub outcome: Outcome,
}

impl MatchDecision {
    pub fn accepted(&self) -> Option<(usize, f64)> {
        match self.outcome {
            Outcome::Accepted { db_index, score } => Some((db_index, score)),
            Outcome::Rejected(_) => None,
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.accepted().is_some()
    }
}

/// Cosine distances between every query and every database descriptor.
pub fn build_distance_matrix(
    queries: &DescriptorSet,
    db: &DescriptorSet,
) -> Result<DistanceMatrix> {
    if queries.is_empty() || db.is_empty() {
        return Err(Error::param(
            "distance matrix",
            "query and database sets must be non-empty",
        ));
    }
    if queries.dim() != db.dim() {
        return Err(Error::DimensionMismatch {
            expected: db.dim(),
            found: queries.dim(),
        });
    }
    let index = DatabaseIndex::new(db)?;
    let q_norms = squared_norms(queries, "query")?;
    let n_db = db.len();
    let mut values = vec![0.0; queries.len() * n_db];
    values
        .par_chunks_mut(n_db)
        .zip(queries.descriptors().par_iter().zip(q_norms.par_iter()))
        .for_each(|(row, (q, &qn))| index.fill_row(q.values(), qn, row));
    DistanceMatrix::from_rows(queries.len(), n_db, values)
}

fn squared_norms(set: &DescriptorSet, which: &str) -> Result<Vec<f64>> {
    set.iter()
        .enumerate()
        .map(|(i, d)| {
            let n = dot(d.values(), d.values());
            if n == 0.0 {
                log::error!("{which} descriptor {i} has zero norm");
                Err(Error::ZeroNorm { index: i })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Database descriptors packed row-major with cached squared norms.
#[derive(Clone, Debug)]
struct DatabaseIndex {
    dim: usize,
    values: Vec<f64>,
    norms: Vec<f64>,
}

impl DatabaseIndex {
    fn new(db: &DescriptorSet) -> Result<Self> {
        let norms = squared_norms(db, "database")?;
        let values = db.iter().flat_map(|d| d.values().iter().copied()).collect();
        Ok(Self {
            dim: db.dim(),
            values,
            norms,
        })
    }

    fn len(&self) -> usize {
        self.norms.len()
    }

    fn fill_row(&self, q: &[f64], q_norm: f64, row: &mut [f64]) {
        let work = |(dst, (d, &dn)): (&mut f64, (&[f64], &f64))| {
            *dst = cosine_from_parts(dot(q, d), q_norm, dn);
        };
        if self.len() >= PAR_MIN_DB {
            row.par_iter_mut()
                .zip(
                    self.values
                        .par_chunks_exact(self.dim)
                        .zip(self.norms.par_iter()),
                )
                .for_each(work);
        } else {
            row.iter_mut()
                .zip(self.values.chunks_exact(self.dim).zip(self.norms.iter()))
                .for_each(work);
        }
    }
}

/// Index of the smallest entry of a distance row, ties to the smallest index.
pub fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v < row[best] {
            best = j;
        }
    }
    best
}

pub fn nearest_neighbor(d: &DistanceMatrix, i: usize) -> usize {
    argmin(d.row(i))
}

/// Best-matching database frame of a distance row, or `None` when every entry
/// of a multi-frame row is identical and the row carries no preference.
pub fn best_match(row: &[f64]) -> Option<usize> {
    let best = argmin(row);
    if row.len() > 1 && row.iter().all(|&v| v == row[best]) {
        None
    } else {
        Some(best)
    }
}

/// Whether database frame `j_prime` lies inside the cones anchored at `j` at a
/// look-back offset of `k` queries.
#[inline]
pub fn cone_membership(k: usize, j: usize, j_prime: usize, p: &ConeParams) -> bool {
    let (k, j, jp) = (k as f64, j as f64, j_prime as f64);
    let forward = || j - k * p.v_max <= jp && jp <= j - k * p.v_min;
    let reverse = || j + k * p.v_min <= jp && jp <= j + k * p.v_max;
    match p.direction {
        Direction::Both => forward() || reverse(),
        Direction::Forward => forward(),
        Direction::Reverse => reverse(),
    }
}

/// Score of the pair `(i, j)` given the nearest neighbors of all queries up to
/// `i`. Returns `None` while fewer than `n_q` queries are available.
pub fn score(i: usize, j: usize, p: &ConeParams, nn_cache: &[Option<usize>]) -> Option<f64> {
    if i + 1 < p.n_q || nn_cache.len() <= i {
        return None;
    }
    let n_match = (0..p.n_q)
        .filter(|&k| nn_cache[i - k].is_some_and(|m| cone_membership(k, j, m, p)))
        .count();
    Some(n_match as f64 / p.n_q as f64)
}

/// Scores every database frame for query `i`.
///
/// Each past nearest neighbor only reaches database frames within `k * v_max`
/// of itself, so only that neighborhood is visited and checked with
/// [`cone_membership`].
pub fn score_row(
    i: usize,
    n_db: usize,
    p: &ConeParams,
    nn_cache: &[Option<usize>],
) -> Option<Vec<f64>> {
    if i + 1 < p.n_q || nn_cache.len() <= i {
        return None;
    }
    let mut counts = vec![0u32; n_db];
    for k in 0..p.n_q {
        let Some(m) = nn_cache[i - k] else { continue };
        let reach = k as f64 * p.v_max;
        let lo = (m as f64 - reach).floor() - 1.0;
        let hi = (m as f64 + reach).ceil() + 1.0;
        let lo = lo.max(0.0) as usize;
        let hi = (hi.max(0.0) as usize).min(n_db.saturating_sub(1));
        for (j, c) in counts.iter_mut().enumerate().take(hi + 1).skip(lo) {
            if cone_membership(k, j, m, p) {
                *c += 1;
            }
        }
    }
    let n_q = p.n_q as f64;
    Some(counts.into_iter().map(|c| c as f64 / n_q).collect())
}

/// Window uniqueness thresholding of one score row.
pub fn decide(s_row: &[f64], p: &ConeParams, i: usize) -> MatchDecision {
    let reject = |reason| MatchDecision {
        query_index: i,
        outcome: Outcome::Rejected(reason),
    };
    if s_row.is_empty() {
        return reject(RejectReason::NotUnique);
    }
    let mut best = 0;
    for (j, &s) in s_row.iter().enumerate().skip(1) {
        if s > s_row[best] {
            best = j;
        }
    }
    let top = s_row[best];
    if s_row.len() > 1 && s_row.iter().all(|&s| s == top) {
        return reject(RejectReason::NotUnique);
    }
    if top < p.min_score {
        return reject(RejectReason::BelowMinScore);
    }
    let outside = s_row
        .iter()
        .enumerate()
        .filter(|(j, _)| j.abs_diff(best) > p.uniqueness_window)
        .map(|(_, &s)| s)
        .fold(0.0f64, f64::max);
    if outside > 0.0 && top / outside < p.uniqueness_ratio {
        return reject(RejectReason::NotUnique);
    }
    MatchDecision {
        query_index: i,
        outcome: Outcome::Accepted {
            db_index: best,
            score: top,
        },
    }
}

/// Incremental sequence search over distance rows.
#[derive(Clone, Debug)]
pub struct SequenceSearch {
    params: ConeParams,
    n_db: usize,
    nn_cache: Vec<Option<usize>>,
}

impl SequenceSearch {
    pub fn new(n_db: usize, params: ConeParams) -> Result<Self> {
        params.validate()?;
        if n_db == 0 {
            return Err(Error::param("database", "must contain at least one frame"));
        }
        Ok(Self {
            params,
            n_db,
            nn_cache: Vec::new(),
        })
    }

    pub fn params(&self) -> &ConeParams {
        &self.params
    }

    pub fn processed(&self) -> usize {
        self.nn_cache.len()
    }

    pub fn nn_cache(&self) -> &[Option<usize>] {
        &self.nn_cache
    }

    /// Consumes the distance row of the next query and returns its score row
    /// (absent during warmup) and decision.
    pub fn push_row(&mut self, row: &[f64]) -> Result<(Option<Vec<f64>>, MatchDecision)> {
        if row.len() != self.n_db {
            return Err(Error::DimensionMismatch {
                expected: self.n_db,
                found: row.len(),
            });
        }
        let i = self.nn_cache.len();
        self.nn_cache.push(best_match(row));
        match score_row(i, self.n_db, &self.params, &self.nn_cache) {
            Some(scores) => {
                let decision = decide(&scores, &self.params, i);
                Ok((Some(scores), decision))
            }
            None => Ok((
                None,
                MatchDecision {
                    query_index: i,
                    outcome: Outcome::Rejected(RejectReason::Warmup),
                },
            )),
        }
    }
}

/// Runs the online search over every row of `d` in query order.
pub fn run_online(d: &DistanceMatrix, p: &ConeParams) -> Result<(ScoreMatrix, Vec<MatchDecision>)> {
    let mut search = SequenceSearch::new(d.n_db(), *p)?;
    let mut values = vec![0.0; d.n_query() * d.n_db()];
    let mut decisions = Vec::with_capacity(d.n_query());
    for i in 0..d.n_query() {
        let (scores, decision) = search.push_row(d.row(i))?;
        if let Some(scores) = scores {
            values[i * d.n_db()..(i + 1) * d.n_db()].copy_from_slice(&scores);
        }
        decisions.push(decision);
    }
    Ok((
        ScoreMatrix {
            values,
            n_query: d.n_query(),
            n_db: d.n_db(),
        },
        decisions,
    ))
}

/// Online matcher that takes query descriptors directly.
#[derive(Clone, Debug)]
pub struct OnlineMatcher {
    index: DatabaseIndex,
    search: SequenceSearch,
    last_row: Vec<f64>,
    last_scores: Option<Vec<f64>>,
}

impl OnlineMatcher {
    pub fn new(db: &DescriptorSet, params: ConeParams) -> Result<Self> {
        if db.is_empty() {
            return Err(Error::param("database", "must contain at least one frame"));
        }
        let index = DatabaseIndex::new(db)?;
        let search = SequenceSearch::new(db.len(), params)?;
        Ok(Self {
            last_row: vec![0.0; index.len()],
            index,
            search,
            last_scores: None,
        })
    }

    pub fn n_db(&self) -> usize {
        self.index.len()
    }

    pub fn dim(&self) -> usize {
        self.index.dim
    }

    pub fn processed(&self) -> usize {
        self.search.processed()
    }

    pub fn push(&mut self, query: &Descriptor) -> Result<MatchDecision> {
        if query.dim() != self.index.dim {
            return Err(Error::DimensionMismatch {
                expected: self.index.dim,
                found: query.dim(),
            });
        }
        let qn = dot(query.values(), query.values());
        if qn == 0.0 {
            return Err(Error::ZeroNorm {
                index: self.search.processed(),
            });
        }
        self.index.fill_row(query.values(), qn, &mut self.last_row);
        let (scores, decision) = self.search.push_row(&self.last_row)?;
        self.last_scores = scores;
        Ok(decision)
    }

    /// Distance row of the most recent query.
    pub fn last_distances(&self) -> &[f64] {
        &self.last_row
    }

    pub fn last_scores(&self) -> Option<&[f64]> {
        self.last_scores.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, hot: usize) -> Descriptor {
        let mut v = vec![0.0; dim];
        v[hot] = 1.0;
        Descriptor::new(v).unwrap()
    }

    fn default_cone() -> ConeParams {
        ConeParams::default()
    }

    #[test]
    fn self_distance_diagonal_is_zero() {
        let set = DescriptorSet::from_descriptors(
            (0..5)
                .map(|i| Descriptor::new(vec![1.0 + i as f64, 2.0, -0.5 * i as f64]).unwrap())
                .collect(),
            "",
        )
        .unwrap();
        let d = build_distance_matrix(&set, &set).unwrap();
        for i in 0..5 {
            assert!(d.get(i, i).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_basis() {
        let set =
            DescriptorSet::from_descriptors((0..4).map(|i| unit(4, i)).collect(), "").unwrap();
        let d = build_distance_matrix(&set, &set).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(d.get(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn distance_matrix_errors() {
        let a = DescriptorSet::from_descriptors(vec![unit(3, 0)], "").unwrap();
        let b = DescriptorSet::from_descriptors(vec![unit(4, 0)], "").unwrap();
        assert!(matches!(
            build_distance_matrix(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
        let z = DescriptorSet::from_descriptors(
            vec![unit(3, 0), Descriptor::new(vec![0.0; 3]).unwrap()],
            "",
        )
        .unwrap();
        assert!(matches!(
            build_distance_matrix(&a, &z),
            Err(Error::ZeroNorm { index: 1 })
        ));
    }

    #[test]
    fn nearest_neighbor_examples() {
        let d = DistanceMatrix::from_rows(2, 3, vec![0.5, 0.1, 0.9, 0.3, 0.3, 0.9]).unwrap();
        assert_eq!(nearest_neighbor(&d, 0), 1);
        assert_eq!(nearest_neighbor(&d, 1), 0);
    }

    #[test]
    fn flat_rows_have_no_best_match() {
        assert_eq!(best_match(&[0.4, 0.4, 0.4]), None);
        assert_eq!(best_match(&[0.4]), Some(0));
        assert_eq!(best_match(&[0.4, 0.3, 0.3]), Some(1));
    }

    #[test]
    fn cone_examples() {
        let p = default_cone();
        assert!(cone_membership(0, 37, 37, &p));
        assert!(!cone_membership(0, 37, 38, &p));
        // forward interval [87.5, 98]
        assert!(cone_membership(5, 100, 90, &p));
        assert!(cone_membership(5, 100, 88, &p));
        assert!(!cone_membership(5, 100, 87, &p));
        assert!(cone_membership(5, 100, 98, &p));
        assert!(!cone_membership(5, 100, 99, &p));
        // reverse interval [102, 112.5]
        assert!(cone_membership(5, 100, 105, &p));
        assert!(cone_membership(5, 100, 112, &p));
        assert!(!cone_membership(5, 100, 113, &p));
        assert!(!cone_membership(5, 100, 100, &p));
    }

    #[test]
    fn direction_restricts_cones() {
        let mut p = default_cone();
        p.direction = Direction::Forward;
        assert!(cone_membership(5, 100, 90, &p));
        assert!(!cone_membership(5, 100, 105, &p));
        p.direction = Direction::Reverse;
        assert!(!cone_membership(5, 100, 90, &p));
        assert!(cone_membership(5, 100, 105, &p));
    }

    #[test]
    fn diagonal_history_scores_one() {
        let p = default_cone();
        let nn: Vec<_> = (0..30).map(|i| Some(i + 7)).collect();
        assert_eq!(score(20, 27, &p, &nn), Some(1.0));
        assert_eq!(score(5, 12, &p, &nn), None);
    }

    #[test]
    fn empty_cones_score_zero() {
        let p = default_cone();
        let nn = vec![Some(500); 12];
        assert_eq!(score(11, 100, &p, &nn), Some(0.0));
    }

    #[test]
    fn score_row_agrees_with_pointwise_score() {
        let p = default_cone();
        let nn: Vec<_> = (0..40)
            .map(|i| {
                if i % 7 == 3 {
                    None
                } else {
                    Some((i * 13) % 50)
                }
            })
            .collect();
        for i in p.n_q - 1..40 {
            let row = score_row(i, 50, &p, &nn).unwrap();
            for (j, &s) in row.iter().enumerate() {
                assert_eq!(Some(s), score(i, j, &p, &nn));
            }
        }
    }

    #[test]
    fn decide_examples() {
        let p = default_cone();
        let mut row = vec![0.0; 300];
        row[42] = 1.0;
        assert_eq!(
            decide(&row, &p, 0).outcome,
            Outcome::Accepted {
                db_index: 42,
                score: 1.0
            }
        );

        let mut p2 = p;
        p2.uniqueness_ratio = 1.2;
        let mut row = vec![0.0; 300];
        row[10] = 0.8;
        row[200] = 0.8;
        assert_eq!(
            decide(&row, &p2, 0).outcome,
            Outcome::Rejected(RejectReason::NotUnique)
        );

        let mut row = vec![0.0; 300];
        row[5] = 0.2;
        assert_eq!(
            decide(&row, &p, 0).outcome,
            Outcome::Rejected(RejectReason::BelowMinScore)
        );

        assert_eq!(
            decide(&[0.5; 4], &p, 0).outcome,
            Outcome::Rejected(RejectReason::NotUnique)
        );
    }

    #[test]
    fn peak_inside_window_is_unique() {
        let p = default_cone();
        let mut row = vec![0.0; 100];
        row[50] = 1.0;
        row[45] = 0.9;
        row[70] = 0.5;
        assert_eq!(
            decide(&row, &p, 3).outcome,
            Outcome::Accepted {
                db_index: 50,
                score: 1.0
            }
        );
        row[70] = 0.95;
        assert_eq!(
            decide(&row, &p, 3).outcome,
            Outcome::Rejected(RejectReason::NotUnique)
        );
    }

    #[test]
    fn warmup_then_decisions() {
        let p = default_cone();
        let n_db = 80;
        let rows: Vec<f64> = (0..40)
            .flat_map(|i| (0..n_db).map(move |j| if j == i + 20 { 0.0 } else { 1.0 }))
            .collect();
        let d = DistanceMatrix::from_rows(40, n_db, rows).unwrap();
        let (s, decisions) = run_online(&d, &p).unwrap();
        for dec in &decisions[..9] {
            assert_eq!(dec.outcome, Outcome::Rejected(RejectReason::Warmup));
        }
        for (i, dec) in decisions.iter().enumerate().skip(9) {
            assert_eq!(
                dec.outcome,
                Outcome::Accepted {
                    db_index: i + 20,
                    score: 1.0
                }
            );
        }
        assert!(s.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_equal_matrix_never_unique() {
        let d = DistanceMatrix::from_rows(30, 50, vec![0.7; 1500]).unwrap();
        let (_, decisions) = run_online(&d, &default_cone()).unwrap();
        for dec in decisions.iter().skip(9) {
            assert_eq!(dec.outcome, Outcome::Rejected(RejectReason::NotUnique));
        }
    }

    #[test]
    fn params_validation() {
        let mut p = default_cone();
        p.v_min = 3.0;
        assert!(p.validate().is_err());
        let mut p = default_cone();
        p.n_q = 0;
        assert!(p.validate().is_err());
        let mut p = default_cone();
        p.uniqueness_ratio = 0.9;
        assert!(p.validate().is_err());
        let mut p = default_cone();
        p.min_score = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn matcher_matches_run_online() {
        let n_db = 60;
        let dim = 16;
        let db = DescriptorSet::from_descriptors(
            (0..n_db)
                .map(|j| {
                    Descriptor::new(
                        (0..dim)
                            .map(|k| ((j * 31 + k * 17) % 23) as f64 - 11.0)
                            .collect(),
                    )
                    .unwrap()
                })
                .collect(),
            "",
        )
        .unwrap();
        let queries = DescriptorSet::from_descriptors(
            (0..30).map(|i| db[(i + 5) % n_db].scaled(2.0)).collect(),
            "",
        )
        .unwrap();
        let d = build_distance_matrix(&queries, &db).unwrap();
        let (_, expected) = run_online(&d, &default_cone()).unwrap();
        let mut m = OnlineMatcher::new(&db, default_cone()).unwrap();
        for (i, q) in queries.iter().enumerate() {
            assert_eq!(m.push(q).unwrap(), expected[i]);
            assert_eq!(m.last_distances(), d.row(i));
        }
    }
}
