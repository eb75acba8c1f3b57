use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Default square input size.
pub const DEFAULT_SIZE: usize = 112;

/// 8-bit interleaved RGB image as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// `r, g, b` per pixel, row-major.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "{}x{} rgb image needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        RgbImage {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() {
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PPM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(Error::Format(format!("unsupported PPM magic `{}`", fields[0])));
        }
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Format(format!("bad PPM header field `{}`", s)))
        };
        let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("only 8-bit PPM supported (maxval {})", maxval)));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = w * h * 3;
        if bytes.len() < pos + need {
            return Err(Error::Format("truncated PPM raster".into()));
        }
        RgbImage::new(w, h, bytes[pos..pos + need].to_vec())
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_ppm())?;
        Ok(())
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        Self::from_ppm(&fs::read(path)?)
    }
}

/// Planar RGB image with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceImage {
    width: usize,
    height: usize,
    /// Channel-major: `data[c * h * w + y * w + x]`.
    data: Vec<f64>,
}

impl FaceImage {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * Self::CHANNELS {
            return Err(Error::invalid("face image data length mismatch"));
        }
        if data.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::invalid("face image values must lie in [-1, 1]"));
        }
        Ok(FaceImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        FaceImage {
            width,
            height,
            data: vec![value.clamp(-1.0, 1.0); width * height * Self::CHANNELS],
        }
    }

    /// Builds an image from a per-pixel function; values are clamped.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, x, y).clamp(-1.0, 1.0));
                }
            }
        }
        FaceImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn same_size(&self, other: &FaceImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Bilinear sample at a continuous position (pixel centres on integers),
    /// clamping to the border. Coordinates within 1e-9 of an integer snap to it.
    pub fn sample(&self, c: usize, x: f64, y: f64) -> f64 {
        sample_plane(
            &self.data[c * self.width * self.height..(c + 1) * self.width * self.height],
            self.width,
            self.height,
            x,
            y,
        )
    }

    /// Unweighted channel mean, row-major `h x w`.
    pub fn grayscale(&self) -> Vec<f64> {
        let n = self.width * self.height;
        (0..n)
            .map(|i| (self.data[i] + self.data[n + i] + self.data[2 * n + i]) / 3.0)
            .collect()
    }

    /// `[3, h, w]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![3, self.height, self.width], self.data.clone()).expect("consistent shape")
    }

    /// Nearest 8-bit representation, `v -> round((v + 1) * 127.5)`.
    pub fn to_rgb(&self) -> RgbImage {
        let n = self.width * self.height;
        let mut data = Vec::with_capacity(n * 3);
        for i in 0..n {
            for c in 0..3 {
                let v = ((self.data[c * n + i] + 1.0) * 127.5).round().clamp(0.0, 255.0);
                data.push(v as u8);
            }
        }
        RgbImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Exact `v / 127.5 - 1` conversion with no resampling.
    pub fn from_rgb(raw: &RgbImage) -> Self {
        let n = raw.width * raw.height;
        let mut data = vec![0.0; n * 3];
        for i in 0..n {
            for c in 0..3 {
                data[c * n + i] = f64::from(raw.data[i * 3 + c]) / 127.5 - 1.0;
            }
        }
        FaceImage {
            width: raw.width,
            height: raw.height,
            data,
        }
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        self.to_rgb().save_ppm(path)
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        Ok(Self::from_rgb(&RgbImage::load_ppm(path)?))
    }

    pub fn max_abs_diff(&self, other: &FaceImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

pub(crate) fn sample_plane(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = snap(x).clamp(0.0, (w - 1) as f64);
    let y = snap(y).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let at = |xx: usize, yy: usize| plane[yy * w + xx];
    if fx == 0.0 && fy == 0.0 {
        return at(x0, y0);
    }
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resize of an 8-bit image to `width x height` followed by scaling
/// to `[-1, 1]`. Output pixel centres map to `(x + 0.5) * scale - 0.5`.
pub fn normalize_image(raw: &RgbImage, width: usize, height: usize) -> Result<FaceImage> {
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::invalid("zero-dimension input image"));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("zero-dimension output size"));
    }
    let (sw, sh) = (raw.width, raw.height);
    let sx = sw as f64 / width as f64;
    let sy = sh as f64 / height as f64;
    let mut planes = vec![vec![0.0; sw * sh]; 3];
    for i in 0..sw * sh {
        for (c, plane) in planes.iter_mut().enumerate() {
            plane[i] = f64::from(raw.data[i * 3 + c]);
        }
    }
    let mut data = Vec::with_capacity(width * height * 3);
    for plane in &planes {
        for y in 0..height {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..width {
                let src_x = (x as f64 + 0.5) * sx - 0.5;
                let v = sample_plane(plane, sw, sh, src_x, src_y);
                data.push((v / 127.5 - 1.0).clamp(-1.0, 1.0));
            }
        }
    }
    FaceImage::new(width, height, data)
}

/// `(1 - alpha) * a + alpha * b`, clamped to `[-1, 1]`.
pub fn alpha_blend(a: &FaceImage, b: &FaceImage, alpha: f64) -> Result<FaceImage> {
    if !a.same_size(b) {
        return Err(Error::invalid(format!(
            "blend size mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha must lie in [0, 1]"));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let v = if alpha == 0.0 {
                x
            } else if alpha == 1.0 {
                y
            } else {
                (1.0 - alpha) * x + alpha * y
            };
            v.clamp(-1.0, 1.0)
        })
        .collect();
    Ok(FaceImage {
        width: a.width,
        height: a.height,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_map_to_unit_range() {
        let black = normalize_image(&RgbImage::filled(30, 20, 0), 112, 112).unwrap();
        assert!(black.data().iter().all(|&v| v == -1.0));
        let white = normalize_image(&RgbImage::filled(30, 20, 255), 112, 112).unwrap();
        assert!(white.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_dimension_rejected() {
        let empty = RgbImage::new(0, 5, vec![]).unwrap();
        assert!(normalize_image(&empty, 112, 112).is_err());
    }

    #[test]
    fn checkerboard_downsample_averages_blocks() {
        let (w, h) = (224, 224);
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let v = if (x + y) % 2 == 0 { 200 } else { 10 };
                data.extend_from_slice(&[v, v / 2, 255 - v]);
            }
        }
        let raw = RgbImage::new(w, h, data).unwrap();
        let out = normalize_image(&raw, 112, 112).unwrap();
        // brute-force 2x2 block mean
        for c in 0..3 {
            for y in 0..112 {
                for x in 0..112 {
                    let mut s = 0.0;
                    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        s += f64::from(raw.data[((2 * y + dy) * w + 2 * x + dx) * 3 + c]);
                    }
                    let expected = s / 4.0 / 127.5 - 1.0;
                    assert!((out.get(c, x, y) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let a = FaceImage::filled(4, 4, -1.0);
        let b = FaceImage::filled(4, 4, 1.0);
        assert_eq!(alpha_blend(&a, &b, 0.0).unwrap(), a);
        assert_eq!(alpha_blend(&a, &b, 1.0).unwrap(), b);
        assert!(alpha_blend(&a, &b, 0.5).unwrap().data().iter().all(|&v| v == 0.0));
        let c = FaceImage::filled(5, 4, 0.0);
        assert!(alpha_blend(&a, &c, 0.5).is_err());
    }

    #[test]
    fn ppm_round_trip_and_header_parsing() {
        let img = FaceImage::from_fn(7, 5, |c, x, y| (c as f64 * 0.3 + x as f64 * 0.1 - y as f64 * 0.2).sin());
        let rgb = img.to_rgb();
        let bytes = rgb.to_ppm();
        assert!(bytes.starts_with(b"P6\n7 5\n255\n"));
        assert_eq!(RgbImage::from_ppm(&bytes).unwrap(), rgb);
        let commented = [b"P6\n# comment\n7 5 255\n".as_slice(), &rgb.data].concat();
        assert_eq!(RgbImage::from_ppm(&commented).unwrap(), rgb);
        assert!(RgbImage::from_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(RgbImage::from_ppm(&bytes[..bytes.len() - 1]).is_err());
        // 8-bit quantization is idempotent
        let back = FaceImage::from_rgb(&rgb);
        assert_eq!(back.to_rgb(), rgb);
    }

    #[test]
    fn sampling_is_exact_on_grid() {
        let img = FaceImage::from_fn(6, 6, |_, x, y| (x * 6 + y) as f64 / 40.0 - 0.5);
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(img.sample(1, x as f64, y as f64), img.get(1, x, y));
            }
        }
        // clamps beyond the border
        assert_eq!(img.sample(0, -3.0, 2.0), img.get(0, 0, 2));
        assert_eq!(img.sample(0, 9.0, 7.5), img.get(0, 5, 5));
    }
}
