//! Small feed-forward classifiers with hand-written reverse-mode gradients.

mod model;
mod params;

pub use model::{
    dropconnect_mask, dropout_mask, finite_diff_grad, Batch, ForwardOutput, LayerSpec, Mode, Model, ModelSpec, Padding,
};
pub use params::{Gradients, ParamGroup, ParamKind, ParamSet};

/// Largest coordinate-wise `|a - b| / max(|a|, |b|, floor)` over two aligned
/// sets. The floor keeps near-zero coordinates from dominating.
pub fn max_relative_error(a: &ParamSet, b: &ParamSet, floor: f64) -> crate::Result<f64> {
    a.check_aligned(b)?;
    Ok(a.groups()
        .iter()
        .zip(b.groups())
        .flat_map(|(ga, gb)| ga.data().iter().zip(gb.data()))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests;
