//! Tiling of image batches into PNG grids.

use std::path::Path;

use c3gan::tensor::Array;
use c3gan::Result;
use image::{Rgb, RgbImage};

/// Gap between tiles in pixels.
pub const SEPARATOR: u32 = 2;
const SEPARATOR_COLOR: Rgb<u8> = Rgb([255, 255, 255]);

/// One `[3, H, W]` or `[1, H, W]` panel of a batch, in `[-1, 1]` (`signed`)
/// or `[0, 1]`.
pub struct Tile<'a> {
    pub batch: &'a Array<f32>,
    pub index: usize,
    pub signed: bool,
}

fn to_u8(v: f32, signed: bool) -> u8 {
    let u = if signed { (v + 1.0) * 0.5 } else { v };
    (u.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Lays out `rows × cols` tiles, row-major, with separators.
pub fn tile(tiles: &[Tile<'_>], rows: usize, cols: usize) -> RgbImage {
    assert_eq!(tiles.len(), rows * cols, "grid needs rows × cols tiles");
    let (h, w) = tiles.first().map_or((0, 0), |t| (t.batch.dim(2), t.batch.dim(3)));
    let (h32, w32) = (h as u32, w as u32);
    let width = cols as u32 * w32 + (cols as u32 + 1) * SEPARATOR;
    let height = rows as u32 * h32 + (rows as u32 + 1) * SEPARATOR;
    let mut img = RgbImage::from_pixel(width, height, SEPARATOR_COLOR);
    for (k, t) in tiles.iter().enumerate() {
        let (r, c) = ((k / cols) as u32, (k % cols) as u32);
        let (x0, y0) = (SEPARATOR + c * (w32 + SEPARATOR), SEPARATOR + r * (h32 + SEPARATOR));
        let channels = t.batch.dim(1);
        let plane = h * w;
        let base = t.index * channels * plane;
        let data = t.batch.data();
        for y in 0..h {
            for x in 0..w {
                let px = |ch: usize| to_u8(data[base + ch.min(channels - 1) * plane + y * w + x], t.signed);
                img.put_pixel(x0 + x as u32, y0 + y as u32, Rgb([px(0), px(1), px(2)]));
            }
        }
    }
    img
}

/// Writes a PNG, creating parent directories.
pub fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path).map_err(|source| c3gan::Error::Image { path: path.to_path_buf(), source })
}
