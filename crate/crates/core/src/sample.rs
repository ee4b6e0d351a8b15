//! Seeded random test data.

use rand::Rng;

use crate::grid::{GridField, PeriodicGrid};
use crate::scalar::Real;

/// Random trigonometric polynomial with modes up to 4 per axis and a random offset.
///
/// Mode `k` has amplitude at most `amplitude / k^2`, so the field is smooth
/// and its sup norm is below `3 amplitude` in one dimension.
pub fn smooth_random_field<T: Real, R: Rng + ?Sized>(grid: &PeriodicGrid<T>, rng: &mut R, amplitude: T) -> GridField<T> {
    let dim = grid.dim();
    let lengths = grid.lengths();
    let mut modes = Vec::new();
    let offset = amplitude * T::lit(rng.gen_range(-1.0..1.0));
    for axis in 0..dim {
        for k in 1..=4usize {
            let scale = amplitude / T::count(k * k);
            let a = scale * T::lit(rng.gen_range(-1.0..1.0));
            let b = scale * T::lit(rng.gen_range(-1.0..1.0));
            modes.push((axis, T::TAU() * T::count(k) / lengths[axis], a, b));
        }
    }
    if dim == 2 {
        let a = amplitude * T::lit(rng.gen_range(-0.5..0.5));
        let w = [T::TAU() / lengths[0], T::TAU() / lengths[1]];
        return GridField::from_fn(*grid, |x| {
            let base = modes.iter().fold(offset, |s, &(ax, w, a, b)| s + a * (w * x[ax]).cos() + b * (w * x[ax]).sin());
            base + a * (w[0] * x[0] + w[1] * x[1]).sin()
        });
    }
    GridField::from_fn(*grid, |x| {
        modes.iter().fold(offset, |s, &(ax, w, a, b)| s + a * (w * x[ax]).cos() + b * (w * x[ax]).sin())
    })
}
