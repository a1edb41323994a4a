use std::path::{Path, PathBuf};

use serde::Serialize;

use super::QualityError;

pub const GRID_POINTS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityGrid {
    pub bandwidth: f64,
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb, `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
/// Falls back to the standard deviation, then 1.0, when the spread is zero.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, _) => 1.0 / 0.9,
    };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian KDE evaluated on `GRID_POINTS` evenly spaced points spanning
/// three bandwidths beyond the sample range.
pub fn kde_grid(values: &[f64]) -> DensityGrid {
    let h = silverman_bandwidth(values);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let xs: Vec<f64> = (0..GRID_POINTS).map(|i| lo + step * i as f64).collect();
    let density = xs
        .iter()
        .map(|x| {
            norm * values
                .iter()
                .map(|v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    DensityGrid {
        bandwidth: h,
        xs,
        density,
    }
}

/// Sibling file holding the raw sample, `<stem>_values.csv`.
pub fn values_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "density".into());
    path.with_file_name(format!("{stem}_values.csv"))
}

/// Writes the density grid as `x,density` CSV at `path` and the raw sample
/// as a one-column `value` CSV next to it.
pub fn export_density(values: &[f64], path: &Path) -> Result<DensityGrid, QualityError> {
    if values.is_empty() {
        return Err(QualityError::SampleTooSmall(0));
    }
    let grid = kde_grid(values);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "density"])?;
    for (x, d) in grid.xs.iter().zip(&grid.density) {
        w.write_record([x.to_string(), d.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(values_path(path))?;
    w.write_record(["value"])?;
    for v in values {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    Ok(grid)
}
