use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Interleaved floating-point image with intensities in `[0, 1]`.
///
/// Only 1 (gray) and 3 (RGB) channel layouts are used by the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::param(
                "channels",
                format!("{channels} (expected 1 or 3)"),
            ));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: width * height * channels,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds a single-channel raster by evaluating `f(col, row)`.
    pub fn from_fn_gray(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, channel: usize, value: f32) {
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }

    pub fn row(&self, row: usize) -> &[f32] {
        let stride = self.width * self.channels;
        &self.data[row * stride..(row + 1) * stride]
    }

    /// Copies the column range `[col_start, col_start + width)`.
    pub fn crop_columns(&self, col_start: usize, width: usize) -> Raster {
        let mut data = Vec::with_capacity(width * self.height * self.channels);
        for row in 0..self.height {
            let r = self.row(row);
            data.extend_from_slice(
                &r[col_start * self.channels..(col_start + width) * self.channels],
            );
        }
        Raster {
            width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }

    /// Luma conversion with Rec. 601 weights; gray rasters are cloned.
    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn from_dynamic(img: DynamicImage) -> Raster {
        let color = img.color();
        if color.has_color() {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb
                .into_raw()
                .into_iter()
                .map(|v| v as f32 / 255.0)
                .collect();
            Raster {
                width: w as usize,
                height: h as usize,
                channels: 3,
                data,
            }
        } else {
            let gray = img.to_luma8();
            let (w, h) = gray.dimensions();
            let data = gray
                .into_raw()
                .into_iter()
                .map(|v| v as f32 / 255.0)
                .collect();
            Raster {
                width: w as usize,
                height: h as usize,
                channels: 1,
                data,
            }
        }
    }

    pub fn load(path: &Path) -> Result<Raster> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(img))
    }

    fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Writes an 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let res = if self.channels == 1 {
            let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(w, h, self.to_u8())
                .expect("buffer sized from raster dimensions");
            buf.save_with_format(path, image::ImageFormat::Png)
        } else {
            let buf: RgbImage = ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, self.to_u8())
                .expect("buffer sized from raster dimensions");
            buf.save_with_format(path, image::ImageFormat::Png)
        };
        res.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}
