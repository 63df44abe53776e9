//! In-memory float images and lossless PNG I/O.
//!
//! Images are `[channels x height x width]` f32 tensors with values in [0, 1].
//! Dataset and generated images are persisted as 8-bit grayscale PNG.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::artifacts::Tensor;
use crate::error::TensorError;

/// A float image, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width, "image size mismatch");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    /// Constant-valued image.
    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Mean over channels; identity for single-channel images.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = Image::zeros(1, self.height, self.width);
        let plane = self.height * self.width;
        for i in 0..plane {
            let mut acc = 0.0f32;
            for c in 0..self.channels {
                acc += self.data[c * plane + i];
            }
            out.data[i] = acc / self.channels as f32;
        }
        out
    }

    /// Crops the pixel rectangle `[y0, y1) x [x0, x1)`.
    pub fn crop(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> Image {
        assert!(y0 < y1 && y1 <= self.height && x0 < x1 && x1 <= self.width);
        let (h, w) = (y1 - y0, x1 - x0);
        let mut out = Image::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, self.get(c, y0 + y, x0 + x));
                }
            }
        }
        out
    }

    /// Bilinear resize with center-aligned sampling.
    pub fn resize(&self, new_h: usize, new_w: usize) -> Image {
        assert!(new_h > 0 && new_w > 0);
        let mut out = Image::zeros(self.channels, new_h, new_w);
        let sy = self.height as f64 / new_h as f64;
        let sx = self.width as f64 / new_w as f64;
        for c in 0..self.channels {
            for y in 0..new_h {
                let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(self.height - 1);
                let wy = fy - y0 as f64;
                for x in 0..new_w {
                    let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(self.width - 1);
                    let wx = fx - x0 as f64;
                    let v00 = f64::from(self.get(c, y0, x0));
                    let v01 = f64::from(self.get(c, y0, x1));
                    let v10 = f64::from(self.get(c, y1, x0));
                    let v11 = f64::from(self.get(c, y1, x1));
                    let v = v00 * (1.0 - wy) * (1.0 - wx)
                        + v01 * (1.0 - wy) * wx
                        + v10 * wy * (1.0 - wx)
                        + v11 * wy * wx;
                    out.set(c, y, x, v as f32);
                }
            }
        }
        out
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.channels, self.height, self.width],
            self.data.clone(),
        )
        .expect("image data is finite by construction")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, TensorError> {
        if t.shape().len() != 3 {
            return Err(TensorError::ShapeMismatch {
                shape: t.shape().to_vec(),
                len: t.len(),
            });
        }
        Ok(Self::new(
            t.shape()[0],
            t.shape()[1],
            t.shape()[2],
            t.data().to_vec(),
        ))
    }

    /// SHA-256 over shape and payload bits; used for determinism checks.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for dim in [self.channels, self.height, self.width] {
            hasher.update((dim as u64).to_le_bytes());
        }
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Saves a single-channel (or channel-averaged) image as 8-bit grayscale PNG.
pub fn save_png(path: &Path, image: &Image) -> Result<(), TensorError> {
    let gray = image.to_gray();
    let mut buf = image::GrayImage::new(gray.width as u32, gray.height as u32);
    for y in 0..gray.height {
        for x in 0..gray.width {
            let v = (gray.get(0, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| TensorError::Io {
            path: PathBuf::from(parent),
            source,
        })?;
    }
    buf.save(path).map_err(|e| TensorError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })
}

/// Loads a PNG as a grayscale float image in [0, 1].
pub fn load_png(path: &Path) -> Result<Image, TensorError> {
    let img = image::open(path)
        .map_err(|e| TensorError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = img.pixels().map(|p| f32::from(p.0[0]) / 255.0).collect();
    Ok(Image::new(1, h, w, data))
}

/// Lists the PNG files directly under `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>, TensorError> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|source| TensorError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| TensorError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "png") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
