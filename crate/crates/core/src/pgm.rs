//! Binary portable graymaps (`P5`, maxval 255) and image tiling.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Grayscale image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl Gray {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Argument(format!(
                "{} pixels do not fill a {width}×{height} image",
                pixels.len()
            )));
        }
        Ok(Gray {
            width,
            height,
            pixels,
        })
    }

    /// `count` square tiles of side `side`, laid out `columns` per row.
    pub fn tiled(tiles: &[f32], side: usize, columns: usize) -> Result<Self> {
        let area = side * side;
        if area == 0 || columns == 0 || tiles.is_empty() || !tiles.len().is_multiple_of(area) {
            return Err(Error::Argument("tiles are not whole square images".into()));
        }
        let count = tiles.len() / area;
        let rows = count.div_ceil(columns);
        let (width, height) = (columns * side, rows * side);
        let mut pixels = vec![0.0; width * height];
        for (t, tile) in tiles.chunks(area).enumerate() {
            let (r0, c0) = ((t / columns) * side, (t % columns) * side);
            for (r, line) in tile.chunks(side).enumerate() {
                let start = (r0 + r) * width + c0;
                pixels[start..start + side].copy_from_slice(line);
            }
        }
        Gray::new(width, height, pixels)
    }

    /// Places images side by side; all must share the same height.
    pub fn hconcat(images: &[Gray]) -> Result<Self> {
        let height = images.first().map_or(0, |g| g.height);
        if images.iter().any(|g| g.height != height) {
            return Err(Error::Argument("images differ in height".into()));
        }
        let width = images.iter().map(|g| g.width).sum();
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for g in images {
                pixels.extend_from_slice(&g.pixels[r * g.width..(r + 1) * g.width]);
            }
        }
        Gray::new(width, height, pixels)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.pixels
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Parses a `P5` file with maxval 255 back into `[0, 1]` values.
pub fn parse_pgm(bytes: &[u8]) -> Result<Gray> {
    let bad = |what: &str| Error::Argument(format!("not a P5 graymap: {what}"));
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
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("magic or maxval"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("size"));
    let (width, height) = (num(fields[1])?, num(fields[2])?);
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if data.len() != width * height {
        return Err(bad("raster size"));
    }
    Gray::new(width, height, data.iter().map(|&b| f32::from(b) / 255.0).collect())
}
