use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("pixel {index} = {value} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("image is {found_h}x{found_w}, expected {expected_h}x{expected_w}")]
    SizeMismatch { expected_h: usize, expected_w: usize, found_h: usize, found_w: usize },
    #[error("{pixels} pixels do not fill a {height}x{width} image")]
    BadLength { height: usize, width: usize, pixels: usize },
}

/// Row-major grayscale image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage<T> {
    height: usize,
    width: usize,
    pixels: Vec<T>,
}

impl<T: Real> GrayImage<T> {
    pub fn new(height: usize, width: usize, pixels: Vec<T>) -> Result<Self, ImageError> {
        if pixels.len() != height * width {
            return Err(ImageError::BadLength { height, width, pixels: pixels.len() });
        }
        if let Some((index, v)) = pixels.iter().enumerate().find(|(_, v)| !(**v >= T::zero() && **v <= T::one())) {
            return Err(ImageError::OutOfRange { index, value: v.as_f64() });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("fill value in [0, 1]")
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.pixels[row * self.width + col]
    }

    pub fn same_size(&self, other: &Self) -> Result<(), ImageError> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(ImageError::SizeMismatch {
                expected_h: self.height,
                expected_w: self.width,
                found_h: other.height,
                found_w: other.width,
            });
        }
        Ok(())
    }

    /// Binary image: 1 where the value is at least 0.5.
    pub fn threshold(&self) -> Self {
        let half = T::lit(0.5);
        Self {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| if v >= half { T::one() } else { T::zero() }).collect(),
        }
    }

    /// Number of pixels at or above 0.5.
    pub fn foreground_count(&self) -> usize {
        let half = T::lit(0.5);
        self.pixels.iter().filter(|&&v| v >= half).count()
    }

    /// Intersection over union of the thresholded images; two empty images score 1.
    pub fn iou(&self, other: &Self) -> Result<f64, ImageError> {
        self.same_size(other)?;
        let half = T::lit(0.5);
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.pixels.iter().zip(&other.pixels) {
            let (a, b) = (a >= half, b >= half);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    /// Mean absolute pixel difference.
    pub fn mean_abs_diff(&self, other: &Self) -> Result<f64, ImageError> {
        self.same_size(other)?;
        let sum: f64 = self.pixels.iter().zip(&other.pixels).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum();
        Ok(sum / self.pixels.len().max(1) as f64)
    }

    /// 8-bit quantization, round half up of `255 * v`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| quantize(v.as_f64())).collect()
    }

    pub fn from_u8(height: usize, width: usize, data: &[u8]) -> Result<Self, ImageError> {
        Self::new(height, width, data.iter().map(|&b| T::lit(f64::from(b) / 255.0)).collect())
    }

    pub fn cast<U: Real>(&self) -> GrayImage<U> {
        GrayImage { height: self.height, width: self.width, pixels: self.pixels.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_u8());
        out
    }

    pub fn from_pgm_bytes(bytes: &[u8], path: &str) -> Result<Self, ImageError> {
        let bad = |message: &str| ImageError::Format { path: path.to_string(), message: message.to_string() };
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated PGM header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("only binary PGM (P5) is supported"));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(&format!("invalid {what} {s:?}")));
        let (width, height, maxval) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
        if maxval == 0 || maxval > 255 {
            return Err(bad("maxval must be in 1..=255"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let data = bytes.get(pos..pos + width * height).ok_or_else(|| bad("truncated PGM raster"))?;
        let m = maxval as f64;
        Self::new(height, width, data.iter().map(|&b| T::lit((f64::from(b) / m).min(1.0))).collect())
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        write_file(path.as_ref(), &self.to_pgm_bytes())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| io_err(path, source))?;
        Self::from_pgm_bytes(&bytes, &path.display().to_string())
    }

    /// 8-bit grayscale PNG with the same quantization as PGM.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().expect("png header into memory");
            w.write_image_data(&self.to_u8()).expect("png data into memory");
        }
        out
    }

    /// Decodes any 8- or 16-bit PNG; color is reduced to Rec. 601 luma, alpha is ignored.
    pub fn from_png_bytes(bytes: &[u8], path: &str) -> Result<Self, ImageError> {
        let bad = |e: String| ImageError::Format { path: path.to_string(), message: e };
        let mut dec = png::Decoder::new(Cursor::new(bytes));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info().map_err(|e| bad(e.to_string()))?;
        let size = reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = info.color_type.samples();
        let mut pixels = Vec::with_capacity(w * h);
        for r in 0..h {
            let line = &buf[r * info.line_size..r * info.line_size + w * channels];
            for px in line.chunks_exact(channels) {
                let v = match channels {
                    1 | 2 => f64::from(px[0]),
                    _ => 0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2]),
                };
                pixels.push(T::lit(v / 255.0));
            }
        }
        Self::new(h, w, pixels)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        write_file(path.as_ref(), &self.to_png_bytes())
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| io_err(path, source))?;
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut BufReader::new(file), &mut bytes).map_err(|source| io_err(path, source))?;
        Self::from_png_bytes(&bytes, &path.display().to_string())
    }

    /// Reads a PGM or PNG, chosen by the file signature.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| io_err(path, source))?;
        let name = path.display().to_string();
        if bytes.starts_with(b"\x89PNG") {
            Self::from_png_bytes(&bytes, &name)
        } else {
            Self::from_pgm_bytes(&bytes, &name)
        }
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (255.0 * v + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ImageError> {
    let file = File::create(path).map_err(|source| io_err(path, source))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|source| io_err(path, source))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> GrayImage<f64> {
        GrayImage::new(3, 5, (0..15).map(|i| i as f64 / 14.0).collect()).unwrap()
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
    }

    #[test]
    fn pgm_and_png_decode_to_same_grid() {
        let img = ramp();
        let pgm = GrayImage::<f64>::from_pgm_bytes(&img.to_pgm_bytes(), "a").unwrap();
        let png = GrayImage::<f64>::from_png_bytes(&img.to_png_bytes(), "b").unwrap();
        assert_eq!(pgm.to_u8(), img.to_u8());
        assert_eq!(png.to_u8(), img.to_u8());
        assert_eq!(pgm, png);
    }

    #[test]
    fn pgm_header_comments_and_errors() {
        let bytes = b"P5 # c\n2 1\n# more\n255\n\x00\xff";
        let img = GrayImage::<f64>::from_pgm_bytes(bytes, "x").unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
        assert!(GrayImage::<f64>::from_pgm_bytes(b"P2\n1 1\n255\n0", "x").is_err());
        assert!(GrayImage::<f64>::from_pgm_bytes(b"P5\n2 2\n255\n\x00", "x").is_err());
    }

    #[test]
    fn range_and_iou() {
        assert!(matches!(GrayImage::new(1, 2, vec![0.0, 1.5]), Err(ImageError::OutOfRange { index: 1, .. })));
        let a = GrayImage::new(1, 4, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = GrayImage::new(1, 4, vec![0.0, 1.0, 0.6, 0.0]).unwrap();
        assert!((a.iou(&b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let e = GrayImage::<f64>::zeros(1, 4);
        assert_eq!(e.iou(&e).unwrap(), 1.0);
        assert_eq!(b.threshold().pixels(), &[0.0, 1.0, 1.0, 0.0]);
    }
}
