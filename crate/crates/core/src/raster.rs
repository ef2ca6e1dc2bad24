//! Grayscale images and their file formats.
//!
//! PFM (32-bit float, little endian, bottom row first) is the lossless format
//! used for targets; PNG is an 8-bit preview.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;

/// Row-major grayscale image, pixel `(0, 0)` at the top-left.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Area-weighted box filter to a new size.
    pub fn resample_box(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("resampled image must be non-empty"));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let wx = box_weights(self.width, width);
        let wy = box_weights(self.height, height);
        let mut out = Self::zeros(width, height);
        for (oy, ry) in wy.iter().enumerate() {
            for (ox, rx) in wx.iter().enumerate() {
                let mut acc = 0.0;
                for &(sy, fy) in ry {
                    for &(sx, fx) in rx {
                        acc += fy * fx * self.get(sx, sy).as_f64();
                    }
                }
                out.data[oy * width + ox] = T::lit(acc);
            }
        }
        Ok(out)
    }

    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut buf = format!("Pf\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        buf.reserve(self.data.len() * 4);
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                buf.extend_from_slice(&(self.get(x, y).as_f64() as f32).to_le_bytes());
            }
        }
        w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn read_pfm(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::format("PFM image", path, reason);

        // three whitespace-terminated header tokens after the magic line
        let mut pos = 0;
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1; // single whitespace byte before the raster
        if tokens[0] != "Pf" {
            return Err(bad("only grayscale 'Pf' images are supported"));
        }
        let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
        let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
        let little = scale < 0.0;
        let need = width * height * 4;
        if bytes.len() < pos + need {
            return Err(bad("truncated raster"));
        }
        let raster = &bytes[pos..pos + need];
        let mut img = Self::zeros(width, height);
        for (n, chunk) in raster.chunks_exact(4).enumerate() {
            let arr = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little { f32::from_le_bytes(arr) } else { f32::from_be_bytes(arr) };
            let (x, row) = (n % width, n / width);
            img.data[(height - 1 - row) * width + x] = T::lit(v as f64);
        }
        Ok(img)
    }

    /// 8-bit preview with values clamped to `[0, 1]`.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
        img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format("PNG image", path, other.to_string()),
        })
    }
}

/// For each output sample, the overlapping source samples and their
/// fractional coverage (summing to 1).
fn box_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * ratio;
            let hi = (o + 1) as f64 * ratio;
            let mut taps = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((s, overlap / ratio));
                }
                s += 1;
            }
            taps
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_preserves_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pfm");
        let img = Image::from_data(3, 2, vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25]).unwrap();
        img.write_pfm(&path).unwrap();
        let back = Image::<f64>::read_pfm(&path).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.get(0, 1), 0.75);
    }

    #[test]
    fn pfm_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pfm");
        std::fs::write(&path, b"PF\n1 1\n-1.0\n\0\0\0\0").unwrap();
        assert!(Image::<f64>::read_pfm(&path).is_err());
        std::fs::write(&path, b"Pf\n4 4\n-1.0\n\0\0").unwrap();
        assert!(Image::<f64>::read_pfm(&path).is_err());
    }

    #[test]
    fn box_filter_averages_blocks() {
        let img = Image::from_data(4, 2, vec![1.0, 3.0, 0.0, 0.0, 1.0, 3.0, 4.0, 4.0]).unwrap();
        let small = img.resample_box(2, 1).unwrap();
        assert_eq!(small.data(), &[2.0, 2.0]);
        // non-integer ratio keeps the mean
        let odd = img.resample_box(3, 1).unwrap();
        let mean_in: f64 = img.data().iter().sum::<f64>() / 8.0;
        let mean_out: f64 = odd.data().iter().sum::<f64>() / 3.0;
        assert!((mean_in - mean_out).abs() < 1e-12);
    }

    #[test]
    fn png_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        Image::from_data(2, 2, vec![0.0, 0.5, 1.0, 2.0]).unwrap().write_png(&path).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }
}
