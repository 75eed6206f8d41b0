//! PNG image grids.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use transduct_core::ImageBatch;

use crate::datasets::denormalize;
use crate::error::{Error, IoContext, Result};

/// Background pixels between tiles.
pub const GRID_PADDING: usize = 2;

/// A rendered 8-bit grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridImage {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub pixels: Vec<u8>,
}

/// Lays out the first `rows * cols` images row-major with
/// [`GRID_PADDING`] black pixels between and around tiles.
pub fn render_grid(images: &ImageBatch, rows: usize, cols: usize) -> Result<GridImage> {
    let shape = images.shape();
    if shape.channels != 1 && shape.channels != 3 {
        return Err(Error::Format(format!("cannot render {} channels", shape.channels)));
    }
    if rows == 0 || cols == 0 || images.count() < rows * cols {
        return Err(Error::Format(format!(
            "a {rows}x{cols} grid needs {} images, got {}",
            rows * cols,
            images.count()
        )));
    }
    let (c, h, w) = (shape.channels, shape.height, shape.width);
    let width = cols * (w + GRID_PADDING) + GRID_PADDING;
    let height = rows * (h + GRID_PADDING) + GRID_PADDING;
    let mut pixels = vec![0u8; width * height * c];
    for tile in 0..rows * cols {
        let img = images.sample(tile);
        let x0 = GRID_PADDING + (tile % cols) * (w + GRID_PADDING);
        let y0 = GRID_PADDING + (tile / cols) * (h + GRID_PADDING);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = img[ch * h * w + y * w + x];
                    pixels[((y0 + y) * width + x0 + x) * c + ch] = denormalize(v);
                }
            }
        }
    }
    Ok(GridImage {
        width,
        height,
        channels: c,
        pixels,
    })
}

/// Renders a grid and writes it as PNG.
pub fn export_image_grid(images: &ImageBatch, rows: usize, cols: usize, path: &Path) -> Result<()> {
    let grid = render_grid(images, rows, cols)?;
    let file = File::create(path).at(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), grid.width as u32, grid.height as u32);
    encoder.set_color(if grid.channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&grid.pixels)?;
    writer.finish()?;
    Ok(())
}

/// Largest `(rows, cols)` grid with `cols` columns that `count` images fill.
pub fn grid_dims(count: usize, cols: usize) -> Option<(usize, usize)> {
    let cols = cols.min(count);
    if cols == 0 {
        return None;
    }
    Some(((count / cols).min(cols), cols))
}
