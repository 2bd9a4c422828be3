//! `montage`: render a volume as an 8-bit grayscale PNG grid — three axial
//! sections at fixed depth fractions on the first row, central coronal and
//! sagittal sections on the second.

use std::path::Path;

use image::{GrayImage, ImageFormat};
use ndarray::Array2;
use volgen_core::phantom::{read_volume, Volume};
use volgen_core::{Error, Result};

use crate::runlog::{require_file, RunManifest};

/// Depth fractions of the axial row.
const AXIAL_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];

pub fn run(volume_path: &Path, output: &Path) -> Result<()> {
    require_file(volume_path, "volume file")?;
    let volume = read_volume(volume_path)?;
    let image = montage_image(&volume);

    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image
        .save_with_format(output, ImageFormat::Png)
        .map_err(|e| Error::validation("montage", format!("png encode: {e}")))?;

    let mut log = RunManifest::new("montage", &serde_json::json!({
        "volume": volume_path.display().to_string(),
        "output": output.display().to_string(),
    }))?;
    log.hash_input(volume_path)?;
    log.record_output(output);
    let log_dir = output.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    log.write(log_dir)?;

    println!("montage: {} ({}x{}) -> {}", volume_path.display(), image.width(), image.height(), output.display());
    Ok(())
}

/// Grid layout: 2 rows x 3 columns of cells sized to the largest section;
/// sections are blitted at each cell's top-left corner, the unused sixth
/// cell stays black.
pub fn montage_image(volume: &Volume) -> GrayImage {
    let (h, w, z) = volume.dims();
    let mut sections: Vec<Array2<f32>> = AXIAL_FRACTIONS
        .iter()
        .map(|f| volume.slice(slice_index(*f, z)).to_owned())
        .collect();
    // Coronal: fix y at the central row, image is depth x width.
    sections.push(volume.data().slice(ndarray::s![.., h / 2, ..]).to_owned());
    // Sagittal: fix x at the central column, image is depth x height.
    sections.push(volume.data().slice(ndarray::s![.., .., w / 2]).to_owned());

    let cell_h = sections.iter().map(|s| s.nrows()).max().unwrap_or(1);
    let cell_w = sections.iter().map(|s| s.ncols()).max().unwrap_or(1);
    let mut canvas = GrayImage::new((3 * cell_w) as u32, (2 * cell_h) as u32);
    for (i, section) in sections.iter().enumerate() {
        let (row, col) = (i / 3, i % 3);
        for ((y, x), &v) in section.indexed_iter() {
            let px = (col * cell_w + x) as u32;
            let py = (row * cell_h + y) as u32;
            canvas.put_pixel(px, py, image::Luma([intensity_to_u8(v)]));
        }
    }
    canvas
}

fn slice_index(fraction: f64, depth: usize) -> usize {
    ((depth - 1) as f64 * fraction).floor() as usize
}

/// Map the [-1, 1] intensity range onto 8-bit gray; -1 is black.
fn intensity_to_u8(v: f32) -> u8 {
    (((v + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8
}
