//! Global descriptors: the patch-normalized thumbnail baseline, multi-part
//! split/aggregate logic and cosine distance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnwrappedPanorama;
use crate::raster::Raster;

/// Tolerance on the unit norm of normalized descriptors.
pub const UNIT_NORM_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    values: Vec<f64>,
    normalized: bool,
}

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("descriptor", "dimension must be positive"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "descriptor",
                format!("entry {pos} is not finite ({})", values[pos]),
            ));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Wraps values that are already unit length (checked to [`UNIT_NORM_TOL`]).
    pub fn new_normalized(values: Vec<f64>) -> Result<Self> {
        let mut d = Self::new(values)?;
        let n = d.norm();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::param(
                "descriptor",
                format!("expected unit norm, got {n}"),
            ));
        }
        d.normalized = true;
        Ok(d)
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        let mut d = Self::new(values.iter().map(|&v| v as f64).collect())?;
        d.normalized = (d.norm() - 1.0).abs() <= UNIT_NORM_TOL;
        Ok(d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    /// L2-normalizes in place. Zero vectors are left untouched.
    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
            self.normalized = true;
        }
    }

    pub fn scaled(&self, factor: f64) -> Descriptor {
        Descriptor {
            values: self.values.iter().map(|v| v * factor).collect(),
            normalized: false,
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let (ra, rb) = (chunks_a.remainder(), chunks_b.remainder());
    for (x, y) in chunks_a.zip(chunks_b) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `1 - cos(a, b)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let sa = dot(a.values(), a.values());
    let sb = dot(b.values(), b.values());
    if sa == 0.0 {
        return Err(Error::ZeroNorm { index: 0 });
    }
    if sb == 0.0 {
        return Err(Error::ZeroNorm { index: 1 });
    }
    Ok(cosine_from_parts(dot(a.values(), b.values()), sa, sb))
}

/// Cosine distance from a dot product and the two squared norms. Identical
/// vectors give exactly zero since `sqrt(x * x) == x`.
#[inline]
pub(crate) fn cosine_from_parts(dot: f64, sq_a: f64, sq_b: f64) -> f64 {
    (1.0 - dot / (sq_a * sq_b).sqrt()).clamp(0.0, 2.0)
}

/// Mean absolute difference between two descriptors of equal dimension.
pub fn sad_distance(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(sum / a.dim() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Concat,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "concat" => Ok(Self::Concat),
            other => Err(Error::param(
                "aggregation",
                format!("`{other}` (expected sum or concat)"),
            )),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sum => "sum",
            Self::Concat => "concat",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub parts: usize,
    pub aggregation: Aggregation,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            parts: 4,
            aggregation: Aggregation::Sum,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.parts, 1 | 2 | 4) {
            return Err(Error::param(
                "parts",
                format!("{} (expected 1, 2 or 4)", self.parts),
            ));
        }
        Ok(())
    }
}

/// Cuts a panorama into `parts` equal-width vertical strips, left to right.
pub fn split_panorama(pano: &UnwrappedPanorama, parts: usize) -> Result<Vec<Raster>> {
    SplitSpec {
        parts,
        aggregation: Aggregation::Sum,
    }
    .validate()?;
    let width = pano.width();
    if !width.is_multiple_of(parts) {
        return Err(Error::Indivisible { width, parts });
    }
    let part_width = width / parts;
    Ok((0..parts)
        .map(|p| pano.raster.crop_columns(p * part_width, part_width))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SadConfig {
    pub thumb_width: usize,
    pub thumb_height: usize,
    pub patch_size: usize,
    pub epsilon: f64,
}

impl Default for SadConfig {
    fn default() -> Self {
        Self {
            thumb_width: 64,
            thumb_height: 16,
            patch_size: 8,
            epsilon: 1e-6,
        }
    }
}

impl SadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thumb_width == 0 || self.thumb_height == 0 || self.patch_size == 0 {
            return Err(Error::param(
                "sad",
                "thumbnail and patch sizes must be positive",
            ));
        }
        if !self.thumb_width.is_multiple_of(self.patch_size)
            || !self.thumb_height.is_multiple_of(self.patch_size)
        {
            return Err(Error::param(
                "patch_size",
                format!(
                    "{} does not divide the {}x{} thumbnail",
                    self.patch_size, self.thumb_width, self.thumb_height
                ),
            ));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::param(
                "epsilon",
                format!("{} must be positive", self.epsilon),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.thumb_width * self.thumb_height
    }
}

/// Area-weighted resampling weights mapping `src` samples onto `dst` bins.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut taps = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((s, overlap / scale));
                }
                s += 1;
            }
            taps
        })
        .collect()
}

/// Box-filter downsample of a gray raster to `w x h`, in f64.
fn area_resize(gray: &Raster, w: usize, h: usize) -> Vec<f64> {
    let (sw, sh) = (gray.width(), gray.height());
    let wx = area_weights(sw, w);
    let wy = area_weights(sh, h);
    let mut horiz = vec![0.0f64; sh * w];
    for row in 0..sh {
        let src = gray.row(row);
        for (ox, taps) in wx.iter().enumerate() {
            horiz[row * w + ox] = taps.iter().map(|&(s, wt)| src[s] as f64 * wt).sum();
        }
    }
    let mut out = vec![0.0f64; w * h];
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..w {
            out[oy * w + ox] = taps.iter().map(|&(s, wt)| horiz[s * w + ox] * wt).sum();
        }
    }
    out
}

/// Patch-normalized thumbnail descriptor.
///
/// The image is converted to gray, box-filtered down to the thumbnail size and
/// every `patch_size` tile is shifted to zero mean and scaled to unit standard
/// deviation. Tiles whose deviation does not exceed `epsilon` become zeros. The
/// result is flattened row-major and is not L2-normalized.
pub fn sad_descriptor(img: &Raster, cfg: &SadConfig) -> Result<Descriptor> {
    cfg.validate()?;
    if img.is_empty() {
        return Err(Error::param("image", "empty raster"));
    }
    let gray = img.to_gray();
    let (w, h, p) = (cfg.thumb_width, cfg.thumb_height, cfg.patch_size);
    let mut thumb = area_resize(&gray, w, h);
    let n = (p * p) as f64;
    for ty in (0..h).step_by(p) {
        for tx in (0..w).step_by(p) {
            let idx = |dy: usize, dx: usize| (ty + dy) * w + tx + dx;
            let mut mean = 0.0;
            for dy in 0..p {
                for dx in 0..p {
                    mean += thumb[idx(dy, dx)];
                }
            }
            mean /= n;
            let mut var = 0.0;
            for dy in 0..p {
                for dx in 0..p {
                    var += (thumb[idx(dy, dx)] - mean).powi(2);
                }
            }
            let std = (var / n).sqrt();
            for dy in 0..p {
                for dx in 0..p {
                    let v = &mut thumb[idx(dy, dx)];
                    *v = if std > cfg.epsilon {
                        (*v - mean) / std
                    } else {
                        0.0
                    };
                }
            }
        }
    }
    Descriptor::new(thumb)
}

/// Combines per-part descriptors. `Sum` adds element-wise and re-normalizes;
/// `Concat` appends in the given order without normalization.
pub fn aggregate(subdescs: &[Descriptor], mode: Aggregation) -> Result<Descriptor> {
    let first = subdescs
        .first()
        .ok_or_else(|| Error::param("aggregate", "no descriptors to aggregate"))?;
    let dim = first.dim();
    if let Some(bad) = subdescs.iter().find(|d| d.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    match mode {
        Aggregation::Sum => {
            let mut acc = vec![0.0f64; dim];
            for d in subdescs {
                for (a, v) in acc.iter_mut().zip(d.values()) {
                    *a += v;
                }
            }
            let mut out = Descriptor::new(acc)?;
            out.normalize();
            Ok(out)
        }
        Aggregation::Concat => {
            let values = subdescs
                .iter()
                .flat_map(|d| d.values().iter().copied())
                .collect();
            Descriptor::new(values)
        }
    }
}

/// Splits, describes each part with the thumbnail baseline, optionally permutes
/// the parts and aggregates.
pub fn describe_panorama(
    pano: &UnwrappedPanorama,
    split: &SplitSpec,
    sad: &SadConfig,
    reorder: Option<&[usize]>,
) -> Result<Descriptor> {
    split.validate()?;
    let parts = split_panorama(pano, split.parts)?;
    let mut subs = parts
        .iter()
        .map(|p| sad_descriptor(p, sad))
        .collect::<Result<Vec<_>>>()?;
    if let Some(order) = reorder {
        subs = apply_reorder(&subs, order)?;
    }
    aggregate(&subs, split.aggregation)
}

/// Returns `items[order[0]], items[order[1]], ...`; `order` must be a permutation.
pub fn apply_reorder<T: Clone>(items: &[T], order: &[usize]) -> Result<Vec<T>> {
    let mut seen = vec![false; items.len()];
    if order.len() != items.len() {
        return Err(Error::param(
            "reorder_parts",
            format!("{} entries for {} parts", order.len(), items.len()),
        ));
    }
    for &o in order {
        if o >= items.len() || seen[o] {
            return Err(Error::param(
                "reorder_parts",
                format!("{order:?} is not a permutation of 0..{}", items.len()),
            ));
        }
        seen[o] = true;
    }
    Ok(order.iter().map(|&o| items[o].clone()).collect())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescriptorSet {
    descriptors: Vec<Descriptor>,
    dim: usize,
    pub source_tag: String,
}

impl DescriptorSet {
    pub fn new(source_tag: impl Into<String>) -> Self {
        Self {
            descriptors: Vec::new(),
            dim: 0,
            source_tag: source_tag.into(),
        }
    }

    pub fn from_descriptors(
        descriptors: Vec<Descriptor>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        let mut set = Self::new(source_tag);
        for d in descriptors {
            set.push(d)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, d: Descriptor) -> Result<()> {
        if self.descriptors.is_empty() {
            self.dim = d.dim();
        } else if d.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: d.dim(),
            });
        }
        self.descriptors.push(d);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Descriptor> {
        self.descriptors.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Descriptor> {
        self.descriptors.iter()
    }

    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }
}

impl std::ops::Index<usize> for DescriptorSet {
    type Output = Descriptor;

    fn index(&self, i: usize) -> &Descriptor {
        &self.descriptors[i]
    }
}
