//! Annular lens calibration and polar unwrapping.
//!
//! Output pixel `(i, j)` (row, column) of the rectangular panorama samples the
//! annular source at
//!
//! ```text
//! rho   = r_min + (r_max - r_min) * i / height
//! theta = 2 * pi * j / width
//! x     = y_c + rho * sin(theta)     (source column)
//! y     = x_c + rho * cos(theta)     (source row)
//! ```
//!
//! where `x_c = center_col` and `y_c = center_row`. The center coordinates are
//! crossed between the two axes; [`AxisConvention::Centered`] pairs each axis with
//! its own center instead.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Raster;

pub const DEFAULT_VERTICAL_FOV_DEG: f64 = 75.0;
pub const DEFAULT_OUT_WIDTH: usize = 1920;
pub const MIN_OUT_WIDTH: usize = 8;

/// Tolerated overhang of the outer circle past the raster border, in pixels.
const BORDER_SLACK_PX: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AxisConvention {
    /// `x = center_row + rho sin(theta)`, `y = center_col + rho cos(theta)`.
    #[default]
    Literal,
    /// `x = center_col + rho sin(theta)`, `y = center_row + rho cos(theta)`.
    Centered,
}

impl FromStr for AxisConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "centered" => Ok(Self::Centered),
            other => Err(Error::param(
                "axis_convention",
                format!("`{other}` (expected literal or centered)"),
            )),
        }
    }
}

impl fmt::Display for AxisConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Literal => "literal",
            Self::Centered => "centered",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnularCalibration {
    pub center_col: f64,
    pub center_row: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub vertical_fov_deg: f64,
    /// Map row 0 to the outer circle instead of the inner one.
    pub flip_radial: bool,
    pub axis_convention: AxisConvention,
}

impl AnnularCalibration {
    pub fn new(center_col: f64, center_row: f64, r_min: f64, r_max: f64) -> Result<Self> {
        let calib = Self {
            center_col,
            center_row,
            r_min,
            r_max,
            vertical_fov_deg: DEFAULT_VERTICAL_FOV_DEG,
            flip_radial: false,
            axis_convention: AxisConvention::Literal,
        };
        calib.validate()?;
        Ok(calib)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("center_col", self.center_col),
            ("center_row", self.center_row),
            ("r_min", self.r_min),
            ("r_max", self.r_max),
            ("vertical_fov_deg", self.vertical_fov_deg),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return Err(Error::Calibration {
                    field,
                    message: format!("{v} is not finite"),
                });
            }
        }
        if self.center_col < 0.0 {
            return Err(Error::Calibration {
                field: "center_col",
                message: format!("{} is negative", self.center_col),
            });
        }
        if self.center_row < 0.0 {
            return Err(Error::Calibration {
                field: "center_row",
                message: format!("{} is negative", self.center_row),
            });
        }
        if self.r_min <= 0.0 {
            return Err(Error::Calibration {
                field: "r_min",
                message: format!("{} must be positive", self.r_min),
            });
        }
        if self.r_min >= self.r_max {
            return Err(Error::Calibration {
                field: "r_min",
                message: format!("r_min >= r_max ({} >= {})", self.r_min, self.r_max),
            });
        }
        if !(self.vertical_fov_deg > 0.0 && self.vertical_fov_deg < 180.0) {
            return Err(Error::Calibration {
                field: "vertical_fov_deg",
                message: format!("{} outside (0, 180)", self.vertical_fov_deg),
            });
        }
        Ok(())
    }

    /// Panorama width over height: 360 degrees of azimuth against the vertical FOV.
    pub fn aspect_ratio(&self) -> f64 {
        360.0 / self.vertical_fov_deg
    }

    /// Center offsets applied to the source column and row axes respectively.
    fn source_center(&self) -> (f64, f64) {
        match self.axis_convention {
            AxisConvention::Literal => (self.center_row, self.center_col),
            AxisConvention::Centered => (self.center_col, self.center_row),
        }
    }

    /// Parses the `key = value` calibration text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut center_col = None;
        let mut center_row = None;
        let mut r_min = None;
        let mut r_max = None;
        let mut fov = None;
        let mut flip = None;
        let mut axes = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::CalibrationParse {
                    line: line_no,
                    message: format!("expected key=value, got `{line}`"),
                })?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|_| Error::CalibrationParse {
                    line: line_no,
                    message: format!("`{key}`: cannot parse `{v}` as a number"),
                })
            };
            match key {
                "center_col" => center_col = Some(num(value)?),
                "center_row" => center_row = Some(num(value)?),
                "r_min" => r_min = Some(num(value)?),
                "r_max" => r_max = Some(num(value)?),
                "vertical_fov_deg" => fov = Some(num(value)?),
                "flip_radial" => {
                    flip = Some(match value {
                        "true" | "1" | "yes" => true,
                        "false" | "0" | "no" => false,
                        other => {
                            return Err(Error::CalibrationParse {
                                line: line_no,
                                message: format!(
                                    "`flip_radial`: expected a boolean, got `{other}`"
                                ),
                            })
                        }
                    })
                }
                "axis_convention" => axes = Some(value.parse::<AxisConvention>()?),
                other => {
                    return Err(Error::CalibrationParse {
                        line: line_no,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }

        let missing = |field: &'static str| Error::Calibration {
            field,
            message: "missing".into(),
        };
        let calib = Self {
            center_col: center_col.ok_or_else(|| missing("center_col"))?,
            center_row: center_row.ok_or_else(|| missing("center_row"))?,
            r_min: r_min.ok_or_else(|| missing("r_min"))?,
            r_max: r_max.ok_or_else(|| missing("r_max"))?,
            vertical_fov_deg: fov.unwrap_or(DEFAULT_VERTICAL_FOV_DEG),
            flip_radial: flip.unwrap_or(false),
            axis_convention: axes.unwrap_or_default(),
        };
        calib.validate()?;
        Ok(calib)
    }

    pub fn to_text(&self) -> String {
        format!(
            "center_col = {}\ncenter_row = {}\nr_min = {}\nr_max = {}\nvertical_fov_deg = {}\nflip_radial = {}\naxis_convention = {}\n",
            self.center_col,
            self.center_row,
            self.r_min,
            self.r_max,
            self.vertical_fov_deg,
            self.flip_radial,
            self.axis_convention
        )
    }
}

pub fn load_calibration(path: &Path) -> Result<AnnularCalibration> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AnnularCalibration::parse(&text)
}

/// Source-raster coordinates `(column, row)` sampled by output pixel `(i, j)`.
#[inline]
pub fn polar_map(
    i: usize,
    j: usize,
    calib: &AnnularCalibration,
    out_width: usize,
    out_height: usize,
) -> (f64, f64) {
    let row = if calib.flip_radial {
        out_height - 1 - i
    } else {
        i
    };
    let rho = calib.r_min + (calib.r_max - calib.r_min) * row as f64 / out_height as f64;
    let theta = 2.0 * PI * j as f64 / out_width as f64;
    let (sin, cos) = theta.sin_cos();
    let (cx, cy) = calib.source_center();
    (cx + rho * sin, cy + rho * cos)
}

/// Unwrapped rectangular panorama.
#[derive(Clone, Debug, PartialEq)]
pub struct UnwrappedPanorama {
    pub raster: Raster,
    pub aspect_ratio: f64,
}

impl UnwrappedPanorama {
    pub fn from_raster(raster: Raster) -> Self {
        let aspect_ratio = raster.width() as f64 / raster.height().max(1) as f64;
        Self {
            raster,
            aspect_ratio,
        }
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }
}

pub fn output_height(out_width: usize, aspect_ratio: f64) -> usize {
    ((out_width as f64 / aspect_ratio).round() as usize).max(1)
}

/// Bilinear sample at subpixel `(x, y)`; zero outside the raster.
///
/// Uses the two-step lerp form so constant neighborhoods are reproduced exactly.
#[inline]
fn sample_bilinear(img: &Raster, x: f64, y: f64, out: &mut [f32]) {
    let (w, h) = (img.width(), img.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    for (c, o) in out.iter_mut().enumerate() {
        let p00 = img.get(x0, y0, c);
        let p10 = img.get(x1, y0, c);
        let p01 = img.get(x0, y1, c);
        let p11 = img.get(x1, y1, c);
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        *o = top + (bottom - top) * fy;
    }
}

/// Unwraps an annular image into a panorama `out_width` columns wide, with the
/// height derived from the calibration's vertical FOV.
pub fn unwrap(
    img: &Raster,
    calib: &AnnularCalibration,
    out_width: usize,
) -> Result<UnwrappedPanorama> {
    unwrap_with_aspect(img, calib, out_width, calib.aspect_ratio())
}

pub fn unwrap_with_aspect(
    img: &Raster,
    calib: &AnnularCalibration,
    out_width: usize,
    aspect_ratio: f64,
) -> Result<UnwrappedPanorama> {
    calib.validate()?;
    if out_width < MIN_OUT_WIDTH {
        return Err(Error::param(
            "out_width",
            format!("{out_width} is below the minimum of {MIN_OUT_WIDTH}"),
        ));
    }
    if !(aspect_ratio.is_finite() && aspect_ratio > 0.0) {
        return Err(Error::param("aspect_ratio", format!("{aspect_ratio}")));
    }
    if img.is_empty() {
        return Err(Error::param("image", "empty raster"));
    }
    check_bounds(img, calib)?;

    let out_height = output_height(out_width, aspect_ratio);
    let channels = img.channels();
    let mut data = vec![0.0f32; out_width * out_height * channels];
    data.par_chunks_mut(out_width * channels)
        .enumerate()
        .for_each(|(i, row)| {
            for (j, px) in row.chunks_exact_mut(channels).enumerate() {
                let (x, y) = polar_map(i, j, calib, out_width, out_height);
                sample_bilinear(img, x, y, px);
            }
        });
    let raster = Raster::new(out_width, out_height, channels, data)?;
    Ok(UnwrappedPanorama {
        raster,
        aspect_ratio,
    })
}

fn check_bounds(img: &Raster, calib: &AnnularCalibration) -> Result<()> {
    let (cx, cy) = calib.source_center();
    let max_x = (img.width() - 1) as f64;
    let max_y = (img.height() - 1) as f64;
    if cx > max_x || cy > max_y {
        return Err(Error::Calibration {
            field: "center",
            message: format!(
                "center maps to ({cx}, {cy}), outside the {}x{} image",
                img.width(),
                img.height()
            ),
        });
    }
    let overhang = [
        calib.r_max - cx,
        cx + calib.r_max - max_x,
        calib.r_max - cy,
        cy + calib.r_max - max_y,
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    if overhang >= BORDER_SLACK_PX {
        return Err(Error::Calibration {
            field: "r_max",
            message: format!("outer circle exceeds the image border by {overhang:.2} px"),
        });
    }
    if overhang > 0.0 {
        log::warn!("outer circle exceeds the image border by {overhang:.2} px; zero-filling");
    }
    Ok(())
}
