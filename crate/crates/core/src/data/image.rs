use std::path::Path;

use dha_nn::{Scalar, Tensor};
use image::{GrayImage, RgbImage};

use crate::error::{invalid, DhaError, Result};

pub const MIN_SIDE: usize = 16;

/// RGB image with values in `[0, 1]`, stored channel-planar (CHW).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return invalid(format!("image {height}x{width} smaller than {MIN_SIDE}x{MIN_SIDE}"));
        }
        if pixels.len() != 3 * height * width {
            return invalid(format!("image {height}x{width} needs {} values, got {}", 3 * height * width, pixels.len()));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid(format!("pixel value {v} outside [0, 1]"));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let plane = height * width;
        let mut pixels = vec![0.0; 3 * plane];
        for c in 0..3 {
            pixels[c * plane..(c + 1) * plane].fill(rgb[c]);
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn channel_means(&self) -> [f32; 3] {
        let n = (self.height * self.width) as f64;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = (self.plane(c).iter().map(|&v| v as f64).sum::<f64>() / n) as f32;
        }
        out
    }

    /// Rec. 601 luma averaged over the image.
    pub fn mean_luminance(&self) -> f32 {
        let [r, g, b] = self.channel_means();
        0.299 * r + 0.587 * g + 0.114 * b
    }

    /// Clockwise quarter turn.
    pub fn rotate90(&self) -> Image {
        let (h, w) = (self.height, self.width);
        let mut pixels = vec![0.0; self.pixels.len()];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    // (y, x) -> (x, h - 1 - y) in a w×h image
                    pixels[(c * w + x) * h + (h - 1 - y)] = self.get(c, y, x);
                }
            }
        }
        Image {
            height: w,
            width: h,
            pixels,
        }
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let data = self.pixels.iter().map(|&v| S::lit(v as f64)).collect();
        Tensor::new(vec![1, 3, self.height, self.width], data).expect("consistent shape")
    }

    /// Takes batch element `n` of an NCHW tensor, clamping into `[0, 1]`.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>, n: usize) -> Result<Self> {
        let [_, c, h, w] = t.dims4()?;
        if c != 3 {
            return invalid(format!("expected 3 channels, got {c}"));
        }
        let pixels = t
            .item(n)
            .iter()
            .map(|v| v.to_f32().unwrap_or(0.0).clamp(0.0, 1.0))
            .collect();
        Self::new(h, w, pixels)
    }

    /// Bilinear resize (half-pixel centers).
    pub fn resize(&self, height: usize, width: usize) -> Result<Image> {
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let ty = dha_nn::kernels::bilinear_taps::<f32>(self.height, height);
        let tx = dha_nn::kernels::bilinear_taps::<f32>(self.width, width);
        let mut pixels = vec![0.0; 3 * height * width];
        for c in 0..3 {
            dha_nn::kernels::bilinear_forward(
                self.plane(c),
                self.width,
                &ty,
                &tx,
                &mut pixels[c * height * width..(c + 1) * height * width],
            );
        }
        Self::new(height, width, pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Value quantized to the 8-bit grid used on disk.
    pub fn quantized(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height, self.width);
        let mut buf = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                buf.put_pixel(
                    x as u32,
                    y as u32,
                    image::Rgb([to_u8(self.get(0, y, x)), to_u8(self.get(1, y, x)), to_u8(self.get(2, y, x))]),
                );
            }
        }
        buf.save(path).map_err(|e| DhaError::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| DhaError::Image {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut pixels = vec![0.0; 3 * h * w];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                pixels[(c * h + y as usize) * w + x as usize] = p[c] as f32 / 255.0;
            }
        }
        Image::new(h, w, pixels)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-pixel class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl SegMask {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if num_classes == 0 || num_classes > 256 {
            return invalid(format!("num_classes {num_classes} out of range"));
        }
        if labels.len() != height * width {
            return invalid(format!("mask {height}x{width} needs {} labels, got {}", height * width, labels.len()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return invalid(format!("label {l} >= {num_classes} classes"));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("buffer sized to mask");
        buf.save(path).map_err(|e| DhaError::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn load_png(path: &Path, num_classes: usize) -> Result<SegMask> {
        let img = image::open(path)
            .map_err(|e| DhaError::Image {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        SegMask::new(h, w, num_classes, img.into_raw())
    }
}

/// Stack images into one `[N, 3, H, W]` batch.
pub fn batch_tensor<S: Scalar>(images: &[&Image]) -> Result<Tensor<S>> {
    let first = images.first().ok_or_else(|| DhaError::Invalid("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return invalid(format!("batch mixes {}x{} and {h}x{w}", img.height(), img.width()));
        }
        data.extend(img.pixels().iter().map(|&v| S::lit(v as f64)));
    }
    Ok(Tensor::new(vec![images.len(), 3, h, w], data)?)
}

/// Concatenated labels (NHW order) of a batch of masks.
pub fn batch_labels(masks: &[&SegMask]) -> Vec<usize> {
    masks.iter().flat_map(|m| m.labels().iter().map(|&l| l as usize)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_or_out_of_range_images() {
        assert!(Image::filled(8, 64, [0.0; 3]).is_err());
        assert!(Image::new(16, 16, vec![1.5; 3 * 256]).is_err());
        assert!(SegMask::new(2, 2, 5, vec![0, 1, 5, 2]).is_err());
    }

    #[test]
    fn png_round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<f32> = (0..3 * 16 * 20).map(|i| (i % 256) as f32 / 255.0).collect();
        let img = Image::new(16, 20, px).unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img.quantized());
        let mask = SegMask::new(16, 16, 5, (0..256).map(|i| (i % 5) as u8).collect()).unwrap();
        let mp = dir.path().join("m.png");
        mask.save_png(&mp).unwrap();
        assert_eq!(SegMask::load_png(&mp, 5).unwrap(), mask);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let px: Vec<f32> = (0..3 * 16 * 24).map(|i| (i % 97) as f32 / 96.0).collect();
        let img = Image::new(16, 24, px).unwrap();
        let r = img.rotate90();
        assert_eq!((r.height(), r.width()), (24, 16));
        assert_eq!(r.rotate90().rotate90().rotate90(), img);
    }
}
