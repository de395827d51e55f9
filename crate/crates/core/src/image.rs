//! Dense image tensor in `[-1, 1]` with CHW memory layout, plus lossless
//! 16-bit PNG round-tripping used by dataset persistence.

use std::path::Path;

use crate::error::{Error, Result};

/// An `C x H x W` real-valued image with intensities normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            shape_mismatch!(
                "image data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            );
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn splat(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::splat(channels, height, width, 0.0)
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

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn num_elements(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(-1.0, 1.0);
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Mean squared difference, accumulated in f64.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        if !self.same_shape(other) {
            shape_mismatch!("mse: {:?} vs {:?}", self.shape(), other.shape());
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Writes the image as a lossless 16-bit PNG, mapping `[-1, 1]` onto the
    /// full sample range.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to_u16 = |v: f32| -> u16 {
            let unit = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0) as f64;
            (unit * 65535.0).round() as u16
        };
        match self.channels {
            1 => {
                let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
                    self.width as u32,
                    self.height as u32,
                );
                for (x, y, px) in buf.enumerate_pixels_mut() {
                    *px = image::Luma([to_u16(self.get(0, y as usize, x as usize))]);
                }
                buf.save(path)?;
            }
            3 => {
                let mut buf = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(
                    self.width as u32,
                    self.height as u32,
                );
                for (x, y, px) in buf.enumerate_pixels_mut() {
                    let (y, x) = (y as usize, x as usize);
                    *px = image::Rgb([
                        to_u16(self.get(0, y, x)),
                        to_u16(self.get(1, y, x)),
                        to_u16(self.get(2, y, x)),
                    ]);
                }
                buf.save(path)?;
            }
            c => invalid_arg!("png export supports 1 or 3 channels, got {c}"),
        }
        Ok(())
    }

    /// Loads an image file, optionally resizing to `target` (height, width),
    /// normalizing intensities to `[-1, 1]`.
    pub fn load(path: &Path, channels: usize, target: Option<(usize, usize)>) -> Result<Self> {
        let mut img = image::open(path)?;
        if let Some((h, w)) = target {
            if img.height() as usize != h || img.width() as usize != w {
                img = img.resize_exact(w as u32, h as u32, image::imageops::FilterType::Triangle);
            }
        }
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::zeros(channels, h, w);
        match channels {
            1 => {
                let gray = img.into_luma16();
                for (x, y, px) in gray.enumerate_pixels() {
                    out.set(0, y as usize, x as usize, unit_from_u16(px.0[0]));
                }
            }
            3 => {
                let rgb = img.into_rgb16();
                for (x, y, px) in rgb.enumerate_pixels() {
                    for c in 0..3 {
                        out.set(c, y as usize, x as usize, unit_from_u16(px.0[c]));
                    }
                }
            }
            c => invalid_arg!("image loading supports 1 or 3 channels, got {c}"),
        }
        Ok(out)
    }
}

fn unit_from_u16(v: u16) -> f32 {
    (v as f64 / 65535.0 * 2.0 - 1.0) as f32
}

/// Stacks images of identical shape into a flat CHW-major batch buffer.
pub fn batch_to_vec(images: &[&Image]) -> Result<Vec<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let mut out = Vec::with_capacity(images.len() * first.num_elements());
    for img in images {
        if !img.same_shape(first) {
            shape_mismatch!("batch images disagree: {:?} vs {:?}", img.shape(), first.shape());
        }
        out.extend_from_slice(img.data());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_chw() {
        let mut img = Image::zeros(2, 3, 4);
        img.set(1, 2, 3, 0.5);
        assert_eq!(img.data()[1 * 12 + 2 * 4 + 3], 0.5);
        assert_eq!(img.get(1, 2, 3), 0.5);
    }

    #[test]
    fn png_round_trip_is_near_lossless() {
        let dir = std::env::temp_dir().join("sud2_img_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.png");

        let mut img = Image::zeros(1, 8, 8);
        for y in 0..8 {
            for x in 0..8 {
                img.set(0, y, x, (y as f32 / 7.0) * 2.0 - 1.0);
            }
        }
        img.save_png(&path).unwrap();
        let back = Image::load(&path, 1, None).unwrap();
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() < 1.0 / 60_000.0, "{a} vs {b}");
        }
    }

    #[test]
    fn normalization_endpoints() {
        // 16-bit extremes map onto the [-1, 1] endpoints exactly.
        assert_eq!(unit_from_u16(0), -1.0);
        assert_eq!(unit_from_u16(65535), 1.0);
    }
}
