//! RGB float images and their PNG / PFM encodings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interleaved RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Png,
    Pfm,
}

impl ImageFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Pfm => "pfm",
        }
    }
}

impl std::str::FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "png" => Ok(ImageFormat::Png),
            "pfm" => Ok(ImageFormat::Pfm),
            other => Err(Error::InvalidParameter(format!(
                "unknown image format `{other}`"
            ))),
        }
    }
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            data,
        }
    }

    /// Wraps interleaved RGB values, clamping them into `[0, 1]`.
    pub fn from_vec(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!("image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn map_pixels(&self, f: impl Fn([f32; 3]) -> [f32; 3]) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for p in self.pixels() {
            let q = f(p);
            data.extend(q.iter().map(|v| v.clamp(0.0, 1.0)));
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "images {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Rec. 709 luminance plane.
    pub fn luminance(&self) -> Vec<f32> {
        self.pixels().map(luminance).collect()
    }

    /// Quantizes to 8 bits with `round(255 v)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
        let path = path.as_ref();
        match format {
            ImageFormat::Png => {
                let buf = ::image::RgbImage::from_raw(
                    self.width as u32,
                    self.height as u32,
                    self.to_rgb8(),
                )
                .expect("buffer size matches dimensions");
                buf.save_with_format(path, ::image::ImageFormat::Png)
                    .map_err(|e| Error::ImageCodec {
                        path: path.to_path_buf(),
                        message: e.to_string(),
                    })
            }
            ImageFormat::Pfm => {
                fs::write(path, self.to_pfm_bytes()).map_err(|e| Error::io(path, e))
            }
        }
    }

    /// Loads a PNG or PFM file, chosen by extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        match path.extension().and_then(|e| e.to_str()) {
            Some("pfm") => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                Image::from_pfm_bytes(&bytes)
            }
            _ => {
                let img = ::image::open(path)
                    .map_err(|e| Error::ImageCodec {
                        path: path.to_path_buf(),
                        message: e.to_string(),
                    })?
                    .to_rgb8();
                let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
                Image::from_vec(img.width() as usize, img.height() as usize, data)
            }
        }
    }

    /// Little-endian color PFM; rows are stored bottom-to-top.
    pub fn to_pfm_bytes(&self) -> Vec<u8> {
        let mut out = format!("PF\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len() * 4);
        for y in (0..self.height).rev() {
            let row = &self.data[y * self.width * 3..(y + 1) * self.width * 3];
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_pfm_bytes(bytes: &[u8]) -> Result<Image> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::MalformedHeader("truncated PFM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // Exactly one whitespace byte separates the header from the payload.
        pos += 1;
        if fields[0] != "PF" {
            return Err(Error::MalformedHeader(format!("PFM magic `{}`", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::MalformedHeader(format!("PFM dimension `{s}`")))
        };
        let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
        let scale: f32 = fields[3]
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("PFM scale `{}`", fields[3])))?;
        if scale >= 0.0 {
            return Err(Error::MalformedHeader(
                "big-endian PFM is not supported".into(),
            ));
        }
        let payload = bytes.get(pos..).unwrap_or(&[]);
        if payload.len() != width * height * 12 {
            return Err(Error::MalformedPayload(format!(
                "PFM payload has {} bytes, expected {}",
                payload.len(),
                width * height * 12
            )));
        }
        let mut data = vec![0.0f32; width * height * 3];
        for (row_idx, row) in payload.chunks_exact(width * 12).enumerate() {
            let y = height - 1 - row_idx;
            for (i, b) in row.chunks_exact(4).enumerate() {
                data[y * width * 3 + i] = f32::from_le_bytes(b.try_into().unwrap());
            }
        }
        Image::from_vec(width, height, data)
    }
}

#[inline]
pub fn luminance(p: [f32; 3]) -> f32 {
    0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> Image {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.extend([x as f32 / w as f32, y as f32 / h as f32, 0.3]);
            }
        }
        Image::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn pfm_round_trip_is_exact() {
        let img = gradient(5, 3);
        let back = Image::from_pfm_bytes(&img.to_pfm_bytes()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = gradient(7, 4);
        img.save(&path, ImageFormat::Png).unwrap();
        let back = Image::load(&path).unwrap();
        for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn truncated_pfm_is_rejected() {
        let bytes = gradient(4, 4).to_pfm_bytes();
        assert!(matches!(
            Image::from_pfm_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::MalformedPayload(_))
        ));
    }

    #[test]
    fn values_are_clamped() {
        let img = Image::from_vec(1, 1, vec![-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(img.pixel(0, 0), [0.0, 0.5, 1.0]);
    }
}
