use super::ModelError;

/// Crops the `height × width` window with the highest pixel variance, then
/// standardizes it and rescales it affinely into `[0, 1]`.
///
/// Ties between windows go to the topmost, then leftmost, window. A window
/// with zero variance maps to a constant 0.5 patch.
pub fn preprocess(
    raw: &[f64],
    raw_height: usize,
    raw_width: usize,
    height: usize,
    width: usize,
) -> Result<Vec<f64>, ModelError> {
    if raw.len() != raw_height * raw_width {
        return Err(ModelError::Size(format!(
            "raw buffer has {} pixels, expected {raw_height}×{raw_width}",
            raw.len()
        )));
    }
    if raw_height < height || raw_width < width || height == 0 || width == 0 {
        return Err(ModelError::Size(format!(
            "raw image {raw_height}×{raw_width} is smaller than patch {height}×{width}"
        )));
    }
    let (top, left) = select_window(raw, raw_width, raw_height, height, width);
    let mut patch = Vec::with_capacity(height * width);
    for r in top..top + height {
        patch.extend_from_slice(&raw[r * raw_width + left..r * raw_width + left + width]);
    }
    standardize_unit_range(&mut patch);
    Ok(patch)
}

/// Top-left corner of the highest-variance window.
pub fn select_window(
    raw: &[f64],
    raw_width: usize,
    raw_height: usize,
    height: usize,
    width: usize,
) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_var = f64::NEG_INFINITY;
    for top in 0..=raw_height - height {
        for left in 0..=raw_width - width {
            let var = window_variance(raw, raw_width, top, left, height, width);
            if var > best_var {
                best_var = var;
                best = (top, left);
            }
        }
    }
    best
}

fn window_variance(
    raw: &[f64],
    raw_width: usize,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> f64 {
    let n = (height * width) as f64;
    let rows = (top..top + height).map(|r| &raw[r * raw_width + left..r * raw_width + left + width]);
    let mean = rows.clone().flatten().sum::<f64>() / n;
    rows.flatten().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Zero-mean/unit-variance standardization followed by a min-max rescale.
fn standardize_unit_range(patch: &mut [f64]) {
    let n = patch.len() as f64;
    let mean = patch.iter().sum::<f64>() / n;
    let var = patch.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 {
        patch.iter_mut().for_each(|x| *x = 0.5);
        return;
    }
    for x in patch.iter_mut() {
        *x = (*x - mean) / std;
    }
    let (lo, hi) = patch
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let span = hi - lo;
    for x in patch.iter_mut() {
        *x = ((*x - lo) / span).clamp(0.0, 1.0);
    }
}
