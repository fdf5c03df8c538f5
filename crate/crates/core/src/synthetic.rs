//! Synthetic database/query sequences with known correspondences.
//!
//! The database is a smooth random walk on the unit sphere. Queries start with
//! independent random unit vectors (the unseen segment) and then re-traverse
//! part of the database at a fixed velocity with additive noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::descriptor::{Descriptor, DescriptorSet};
use crate::error::{Error, Result};
use crate::evaluation::{GeoPoint, GroundTruth, GtEntry};

/// Norm of the per-frame perturbation of the database walk.
pub const WALK_STEP: f64 = 0.35;
/// Latitude spacing of consecutive database frames, about 11 m.
pub const GEO_SPACING_DEG: f64 = 1e-4;
const ORIGIN: GeoPoint = GeoPoint {
    lat: 30.26,
    lon: 120.12,
};
/// Unseen queries are placed this far south of the route, about 5.5 km.
const UNSEEN_OFFSET_DEG: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n_db: usize,
    /// Fraction of queries that re-traverse the database.
    pub overlap: f64,
    /// Database frames advanced per query frame.
    pub velocity: f64,
    /// Norm of the additive query noise relative to the unit descriptors.
    pub noise: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_db: 200,
            overlap: 0.6,
            velocity: 1.0,
            noise: 0.05,
            dim: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub database: DescriptorSet,
    pub queries: DescriptorSet,
    pub ground_truth: GroundTruth,
    pub db_geo: Vec<GeoPoint>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn random_walk(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
    let scale = WALK_STEP / (dim as f64).sqrt();
    let mut walk = Vec::with_capacity(len);
    let mut cur = normalized(gaussian(rng, dim));
    for _ in 0..len {
        walk.push(cur.clone());
        let step = gaussian(rng, dim);
        cur = normalized(cur.iter().zip(&step).map(|(c, s)| c + scale * s).collect());
    }
    walk
}

fn route_point(position: f64) -> GeoPoint {
    GeoPoint::new(ORIGIN.lat + position * GEO_SPACING_DEG, ORIGIN.lon)
}

pub fn gen_synthetic(p: &SyntheticParams) -> Result<SyntheticDataset> {
    if p.n_db < 2 {
        return Err(Error::param("n_db", "need at least 2 database frames"));
    }
    if !(p.overlap > 0.0 && p.overlap <= 1.0) {
        return Err(Error::param(
            "overlap",
            format!("{} outside (0, 1]", p.overlap),
        ));
    }
    if !(p.velocity > 0.0 && p.velocity.is_finite()) {
        return Err(Error::param(
            "velocity",
            format!("{} must be positive", p.velocity),
        ));
    }
    if !(p.noise >= 0.0 && p.noise.is_finite()) {
        return Err(Error::param(
            "noise",
            format!("{} must be non-negative", p.noise),
        ));
    }
    if p.dim == 0 {
        return Err(Error::param("dim", "must be positive"));
    }

    let n_query = p.n_db;
    let n_overlap = ((p.overlap * n_query as f64).round() as usize).max(1);
    let n_unseen = n_query - n_overlap;
    let span = (n_overlap - 1) as f64 * p.velocity;
    let slack = (p.n_db - 1) as f64 - span;
    if slack < 0.0 {
        return Err(Error::param(
            "velocity",
            format!(
                "{n_overlap} overlapping queries at velocity {} span {span:.1} frames, more than the {} in the database",
                p.velocity, p.n_db
            ),
        ));
    }
    let start = (slack / 2.0).floor();

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let db_walk = random_walk(&mut rng, p.n_db, p.dim);
    let unseen: Vec<Vec<f64>> = (0..n_unseen)
        .map(|_| normalized(gaussian(&mut rng, p.dim)))
        .collect();
    let noise_scale = p.noise / (p.dim as f64).sqrt();

    let add_noise = |v: Vec<f64>, rng: &mut ChaCha8Rng| -> Vec<f64> {
        if p.noise == 0.0 {
            return v;
        }
        let n = gaussian(rng, p.dim);
        normalized(v.iter().zip(&n).map(|(x, e)| x + noise_scale * e).collect())
    };

    let mut queries = Vec::with_capacity(n_query);
    let mut entries = Vec::with_capacity(n_query);
    let mut geo = Vec::with_capacity(n_query);
    for (t, v) in unseen.into_iter().enumerate() {
        queries.push(add_noise(v, &mut rng));
        entries.push(GtEntry::Unseen);
        let mut g = route_point(t as f64);
        g.lat -= UNSEEN_OFFSET_DEG;
        geo.push(Some(g));
    }
    for t in 0..n_overlap {
        let pos = start + t as f64 * p.velocity;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let base = if frac == 0.0 {
            db_walk[lo].clone()
        } else {
            let hi = (lo + 1).min(p.n_db - 1);
            normalized(
                db_walk[lo]
                    .iter()
                    .zip(&db_walk[hi])
                    .map(|(a, b)| (1.0 - frac) * a + frac * b)
                    .collect(),
            )
        };
        queries.push(add_noise(base, &mut rng));
        entries.push(GtEntry::DbIndex(pos.round() as usize));
        geo.push(Some(route_point(pos)));
    }

    let to_set = |rows: Vec<Vec<f64>>, tag: &str| -> Result<DescriptorSet> {
        let descs = rows
            .into_iter()
            .map(Descriptor::new_normalized)
            .collect::<Result<Vec<_>>>()?;
        DescriptorSet::from_descriptors(descs, tag)
    };
    Ok(SyntheticDataset {
        database: to_set(db_walk, "synthetic")?,
        queries: to_set(queries, "synthetic")?,
        ground_truth: GroundTruth { entries, geo },
        db_geo: (0..p.n_db).map(|j| route_point(j as f64)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::build_distance_matrix;

    #[test]
    fn noiseless_retraversal_has_zero_band() {
        let ds = gen_synthetic(&SyntheticParams {
            n_db: 50,
            overlap: 1.0,
            noise: 0.0,
            dim: 32,
            ..Default::default()
        })
        .unwrap();
        let d = build_distance_matrix(&ds.queries, &ds.database).unwrap();
        for i in 0..50 {
            assert_eq!(d.get(i, i), 0.0);
        }
        assert!(ds
            .ground_truth
            .entries
            .iter()
            .enumerate()
            .all(|(i, e)| *e == GtEntry::DbIndex(i)));
    }

    #[test]
    fn half_overlap_half_unseen() {
        let ds = gen_synthetic(&SyntheticParams {
            n_db: 100,
            overlap: 0.5,
            ..Default::default()
        })
        .unwrap();
        let unseen = ds
            .ground_truth
            .entries
            .iter()
            .filter(|e| **e == GtEntry::Unseen)
            .count();
        assert_eq!(unseen, 50);
        assert_eq!(ds.queries.len(), 100);
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let p = SyntheticParams::default();
        let a = gen_synthetic(&p).unwrap();
        let b = gen_synthetic(&p).unwrap();
        assert_eq!(a.database, b.database);
        assert_eq!(a.queries, b.queries);
        let c = gen_synthetic(&SyntheticParams { seed: 1, ..p }).unwrap();
        assert_ne!(a.queries, c.queries);
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let base = SyntheticParams::default();
        for bad in [
            SyntheticParams {
                overlap: 0.0,
                ..base
            },
            SyntheticParams {
                overlap: 1.5,
                ..base
            },
            SyntheticParams {
                velocity: 0.0,
                ..base
            },
            SyntheticParams {
                velocity: 2.5,
                overlap: 1.0,
                ..base
            },
            SyntheticParams { dim: 0, ..base },
            SyntheticParams { n_db: 1, ..base },
            SyntheticParams {
                noise: -1.0,
                ..base
            },
        ] {
            assert!(gen_synthetic(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn descriptors_are_unit_norm() {
        let ds = gen_synthetic(&SyntheticParams::default()).unwrap();
        for d in ds.database.iter().chain(ds.queries.iter()) {
            assert!((d.norm() - 1.0).abs() < 1e-9);
        }
    }
}
