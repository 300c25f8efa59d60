//! Grayscale raster with values in [0, 1]: contours are dark (0), background
//! light (1).

use std::path::Path;

use contour_autodiff::Tensor;
use image::{GrayImage, Luma};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl BinaryImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Config(format!(
                "image data has {} values, expected {height}×{width}",
                data.len()
            )));
        }
        Ok(BinaryImage { height, width, data })
    }

    /// All-background image.
    pub fn blank(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        BinaryImage {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_dark_pixels(height: usize, width: usize, dark: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut img = Self::blank(height, width);
        for (r, c) in dark {
            img.set(r, c, 0.0);
        }
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    pub fn is_dark(&self, row: usize, col: usize, threshold: f32) -> bool {
        self.get(row, col) < threshold
    }

    /// φ: number of pixels darker than `threshold`.
    pub fn dark_count(&self, threshold: f32) -> usize {
        self.data.iter().filter(|&&v| v < threshold).count()
    }

    pub fn dark_pixels(&self, threshold: f32) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(move |(_, &v)| v < threshold)
            .map(|(i, _)| (i / self.width, i % self.width))
    }

    /// Hard {0, 1} image: dark below `threshold`, background otherwise.
    pub fn binarize(&self, threshold: f32) -> BinaryImage {
        BinaryImage {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| if v < threshold { 0.0 } else { 1.0 })
                .collect(),
        }
    }

    pub fn is_strictly_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn check_same_dims(&self, other: &BinaryImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimensions {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    /// Dark set grown by a (2·radius+1)² square.
    pub fn dilate_dark(&self, radius: usize, threshold: f32) -> BinaryImage {
        let mut out = BinaryImage::blank(self.height, self.width);
        for (r, c) in self.dark_pixels(threshold) {
            for rr in r.saturating_sub(radius)..(r + radius + 1).min(self.height) {
                for cc in c.saturating_sub(radius)..(c + radius + 1).min(self.width) {
                    out.set(rr, cc, 0.0);
                }
            }
        }
        out
    }

    /// `channels×H×W` tensor with the image replicated on every channel.
    pub fn to_tensor(&self, channels: usize) -> Tensor<f32> {
        let mut data = Vec::with_capacity(channels * self.data.len());
        for _ in 0..channels {
            data.extend_from_slice(&self.data);
        }
        Tensor::new(vec![channels, self.height, self.width], data).expect("consistent shape")
    }

    /// Channel mean of a `C×H×W` tensor.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let [c, h, w] = *t.shape() else {
            return Err(Error::Config(format!("expected a C×H×W tensor, got {:?}", t.shape())));
        };
        let n = h * w;
        let mut data = vec![0.0f32; n];
        for plane in t.data().chunks(n) {
            for (d, &v) in data.iter_mut().zip(plane) {
                *d += v;
            }
        }
        let inv = 1.0 / c as f32;
        data.iter_mut().for_each(|v| *v *= inv);
        BinaryImage::new(h, w, data)
    }

    /// Pads right and bottom with background up to the next multiple of
    /// `multiple`. Returns the padded image and the original dimensions.
    pub fn pad_to_multiple(&self, multiple: usize) -> (BinaryImage, (usize, usize)) {
        let h = self.height.div_ceil(multiple) * multiple;
        let w = self.width.div_ceil(multiple) * multiple;
        let mut out = BinaryImage::blank(h, w);
        for r in 0..self.height {
            out.data[r * w..r * w + self.width].copy_from_slice(&self.data[r * self.width..(r + 1) * self.width]);
        }
        (out, self.dims())
    }

    pub fn crop(&self, height: usize, width: usize) -> BinaryImage {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height.min(self.height) {
            data.extend_from_slice(&self.data[r * self.width..r * self.width + width.min(self.width)]);
        }
        BinaryImage {
            height: height.min(self.height),
            width: width.min(self.width),
            data,
        }
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(y as usize, x as usize).clamp(0.0, 1.0);
            Luma([(v * 255.0).round() as u8])
        })
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        BinaryImage {
            height: h as usize,
            width: w as usize,
            data: img.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
        }
    }

    /// Loads any PNG; color images are reduced to luma.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_gray8(&img.to_luma8()))
    }

    /// Writes an 8-bit grayscale PNG (0 = contour, 255 = background).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_gray8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}
