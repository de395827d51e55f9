//! Sample grids (input / reconstruction / reference side by side) and simple
//! line plots rasterized straight into image tensors.

use sud2_core::{Image, Result};

/// Assembles rows of images into one sheet; every image must share shape.
pub fn assemble_grid(rows: &[Vec<&Image>]) -> Result<Image> {
    let first = rows[0][0];
    let (c, h, w) = first.shape();
    let n_cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let pad = 2usize;
    let out_h = rows.len() * (h + pad) - pad;
    let out_w = n_cols * (w + pad) - pad;
    let mut sheet = Image::splat(c, out_h, out_w, -1.0);
    for (ri, row) in rows.iter().enumerate() {
        for (ci, img) in row.iter().enumerate() {
            let oy = ri * (h + pad);
            let ox = ci * (w + pad);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        sheet.set(ch, oy + y, ox + x, img.get(ch, y, x));
                    }
                }
            }
        }
    }
    Ok(sheet)
}

/// Rasterizes one or more named series into a simple line chart.
pub fn plot_series(series: &[(&str, Vec<(f64, f64)>)], height: usize, width: usize) -> Image {
    let mut img = Image::splat(1, height, width, 1.0);
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if finite.is_empty() {
        return img;
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let margin = 4usize;
    let to_px = |x: f64, y: f64| {
        let px = margin as f64
            + (x - x0) / (x1 - x0) * (width - 2 * margin - 1) as f64;
        let py = (height - margin - 1) as f64
            - (y - y0) / (y1 - y0) * (height - 2 * margin - 1) as f64;
        (px, py)
    };
    // Distinct gray levels per series.
    for (si, (_, pts)) in series.iter().enumerate() {
        let tone = -1.0 + 0.55 * si as f32;
        let pts: Vec<(f64, f64)> = pts
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        for pair in pts.windows(2) {
            let (ax, ay) = to_px(pair[0].0, pair[0].1);
            let (bx, by) = to_px(pair[1].0, pair[1].1);
            let steps = ((bx - ax).abs().max((by - ay).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let x = (ax + (bx - ax) * t).round() as isize;
                let y = (ay + (by - ay) * t).round() as isize;
                if x >= 0 && (x as usize) < width && y >= 0 && (y as usize) < height {
                    img.set(0, y as usize, x as usize, tone);
                }
            }
        }
    }
    img
}
