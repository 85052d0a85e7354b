//! Binary greyscale (P5) images and tiling helpers for weight visualisation.

use std::path::Path;

use super::write_file;
use crate::error::Result;

/// 8-bit greyscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_pgm())
    }
}

/// Lays out equally sized tiles on a `grid_cols`-wide grid with a one-pixel
/// separator of value 128.
pub fn tile(tiles: &[Vec<u8>], tile_w: usize, tile_h: usize, grid_cols: usize) -> GrayImage {
    let grid_cols = grid_cols.max(1);
    let grid_rows = tiles.len().div_ceil(grid_cols).max(1);
    let width = grid_cols * (tile_w + 1) + 1;
    let height = grid_rows * (tile_h + 1) + 1;
    let mut img = GrayImage::filled(width, height, 128);
    for (n, t) in tiles.iter().enumerate() {
        let (gr, gc) = (n / grid_cols, n % grid_cols);
        let (x0, y0) = (1 + gc * (tile_w + 1), 1 + gr * (tile_h + 1));
        for y in 0..tile_h {
            for x in 0..tile_w {
                img.set(x0 + x, y0 + y, t[y * tile_w + x]);
            }
        }
    }
    img
}
