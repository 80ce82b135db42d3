use crate::error::{Error, Result};
use crate::types::ImagePatch;

/// A tile cut from a larger image at grid position `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub patch: ImagePatch,
}

/// Cuts an image into non-overlapping `size × size` tiles, row-major.
pub fn tile_image(image: &ImagePatch, size: usize) -> Result<Vec<Tile>> {
    if size == 0 || !image.height.is_multiple_of(size) || !image.width.is_multiple_of(size) {
        return Err(Error::invalid(format!(
            "{}x{} image does not divide into {size}x{size} tiles",
            image.height, image.width
        )));
    }
    let (rows, cols) = (image.height / size, image.width / size);
    let mut out = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let mut px = Vec::with_capacity(size * size * 3);
            for y in 0..size {
                let o = ((row * size + y) * image.width + col * size) * 3;
                px.extend_from_slice(&image.pixels[o..o + size * 3]);
            }
            let mut patch = image.with_pixels(px);
            patch.height = size;
            patch.width = size;
            patch.patch_id = format!("{}-r{row}c{col}", image.patch_id);
            out.push(Tile { row, col, patch });
        }
    }
    Ok(out)
}

/// Inverse of [`tile_image`]: places tiles back on a `rows × cols` grid.
pub fn reassemble(tiles: &[Tile], rows: usize, cols: usize, template: &ImagePatch) -> Result<ImagePatch> {
    let size = tiles.first().ok_or_else(|| Error::invalid("no tiles to reassemble"))?.patch.height;
    if tiles.len() != rows * cols {
        return Err(Error::invalid(format!("{} tiles cannot fill a {rows}x{cols} grid", tiles.len())));
    }
    let (h, w) = (rows * size, cols * size);
    let mut px = vec![0f32; h * w * 3];
    let mut seen = vec![false; rows * cols];
    for t in tiles {
        if t.row >= rows || t.col >= cols || t.patch.height != size || t.patch.width != size {
            return Err(Error::invalid(format!("tile ({}, {}) does not fit the grid", t.row, t.col)));
        }
        if std::mem::replace(&mut seen[t.row * cols + t.col], true) {
            return Err(Error::invalid(format!("tile ({}, {}) given twice", t.row, t.col)));
        }
        for y in 0..size {
            let o = ((t.row * size + y) * w + t.col * size) * 3;
            px[o..o + size * 3].copy_from_slice(&t.patch.pixels[y * size * 3..(y + 1) * size * 3]);
        }
    }
    let mut out = template.with_pixels(px);
    out.height = h;
    out.width = w;
    Ok(out)
}
