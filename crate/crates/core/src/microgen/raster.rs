use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::rsa::Rve;
use crate::error::{Error, Result};

pub const MATRIX_PIXEL: u8 = 0;
pub const INCLUSION_PIXEL: u8 = 255;

/// 8-bit grayscale image, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "{height}x{width} image with {} pixels",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Fraction of pixels at or above the phase threshold (128).
    pub fn inclusion_fraction(&self) -> f64 {
        self.pixels.iter().filter(|&&p| p >= 128).count() as f64 / self.pixels.len() as f64
    }

    /// Pixels mapped to `[0, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn from_pgm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1; // single whitespace byte before the raster
        if fields[0] != "P5" {
            return Err(format!("unsupported magic {}", fields[0]));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field {s}: {e}"));
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        let body = bytes.get(pos..pos + width * height).ok_or("truncated raster")?;
        Ok(Self {
            height,
            width,
            pixels: body.to_vec(),
        })
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_pgm(&bytes).map_err(|detail| Error::Image {
            path: path.display().to_string(),
            detail,
        })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Grayscale, &self.pixels)
    }
}

pub(crate) fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let image_err = |e: png::EncodingError| Error::Image {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(image_err)?;
    writer.write_image_data(data).map_err(image_err)?;
    writer.finish().map_err(image_err)?;
    Ok(())
}

/// Renders the RVE at `resolution`²: a pixel is inclusion iff its centre lies
/// inside some periodically wrapped inclusion.
pub fn rasterize(rve: &Rve, resolution: usize) -> Result<RasterImage> {
    if resolution < 16 {
        return Err(Error::invalid(format!("resolution {resolution} < 16")));
    }
    let n = resolution as isize;
    let h = 1.0 / resolution as f64;
    let mut img = RasterImage::filled(resolution, resolution, MATRIX_PIXEL);
    for e in &rve.inclusions {
        // unwrapped pixel index range covering the bounding circle
        let lo = |c: f64| ((c - e.a) / h - 0.5).floor() as isize;
        let hi = |c: f64| ((c + e.a) / h - 0.5).ceil() as isize;
        for row in lo(e.cy)..=hi(e.cy) {
            let dy = (row as f64 + 0.5) * h - e.cy;
            for col in lo(e.cx)..=hi(e.cx) {
                let dx = (col as f64 + 0.5) * h - e.cx;
                if e.contains_offset(dx, dy) {
                    let (r, c) = (row.rem_euclid(n) as usize, col.rem_euclid(n) as usize);
                    img.pixels[r * resolution + c] = INCLUSION_PIXEL;
                }
            }
        }
    }
    Ok(img)
}

/// Writes `rows` as a CSV grid.
pub(crate) fn write_grid_csv(path: &Path, width: usize, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
