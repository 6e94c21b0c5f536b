use std::path::Path;

use crate::image::GrayImage;

use super::{ExploreError, SampleManifest};

/// Intensity of separators and border.
pub const SEPARATOR: u8 = 0;
/// Fill for cells past the last image.
pub const EMPTY: u8 = 255;

/// Tiles `images` row by row into `columns` columns with 1-px separators
/// and a 1-px border. All images must share one size.
pub fn montage(images: &[GrayImage], columns: usize) -> Result<GrayImage, ExploreError> {
    let first = images
        .first()
        .ok_or_else(|| ExploreError::Montage("no images".into()))?;
    if columns == 0 {
        return Err(ExploreError::Montage("columns must be positive".into()));
    }
    let (w, h) = (first.width(), first.height());
    if let Some(odd) = images.iter().find(|i| i.width() != w || i.height() != h) {
        return Err(ExploreError::Montage(format!(
            "mixed image sizes: {w}x{h} and {}x{}",
            odd.width(),
            odd.height()
        )));
    }
    let cols = columns.min(images.len());
    let rows = images.len().div_ceil(cols);
    let (mw, mh) = (cols * (w + 1) + 1, rows * (h + 1) + 1);
    let mut out = GrayImage::filled(mw, mh, SEPARATOR);
    for cell in 0..rows * cols {
        let (r, c) = (cell / cols, cell % cols);
        let (x0, y0) = (1 + c * (w + 1), 1 + r * (h + 1));
        let src = images.get(cell);
        for y in 0..h {
            for x in 0..w {
                out.set(x0 + x, y0 + y, src.map_or(EMPTY, |img| img.get(x, y)));
            }
        }
    }
    Ok(out)
}

/// Montage of a decoded grid in manifest order.
pub fn montage_dir(dir: &Path, columns: usize) -> Result<GrayImage, ExploreError> {
    let manifest = SampleManifest::load(dir)?;
    let images = manifest
        .paths(dir)
        .iter()
        .map(|p| GrayImage::load_png(p).map_err(ExploreError::from))
        .collect::<Result<Vec<_>, _>>()?;
    montage(&images, columns)
}
