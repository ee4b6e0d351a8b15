//! Implicit action functions.
//!
//! `h_{x0,u0}(x, t)` is the smallest terminal action over curves from `x0` to
//! `x` in time `t` started with action `u0`; `h^{x0,u0}(x, t)` is the largest
//! initial action over curves from `x` to `x0` ending with action `u0`. Both
//! are initialized by a one-segment formula at a short time `delta` and then
//! advanced with the matching solution semigroup.

use crate::error::{usage, Result};
use crate::grid::{GridField, PeriodicGrid};
use crate::model::HamiltonianModel;
use crate::scalar::{Real, Vector};
use crate::semigroup::{evolve, Direction, SchemeOptions};

/// Default initialization time.
pub const DEFAULT_DELTA: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    /// `h_{x0,u0}(., t)`, advanced by the backward semigroup.
    ForwardH,
    /// `h^{x0,u0}(., t)`, advanced by the forward semigroup.
    BackwardH,
}

impl ActionKind {
    fn direction(self) -> Direction {
        match self {
            ActionKind::ForwardH => Direction::Backward,
            ActionKind::BackwardH => Direction::Forward,
        }
    }
}

/// One time slice of an action function together with its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSlice<T> {
    pub base_x: Vector<T>,
    pub base_u: T,
    pub t: T,
    pub values: GridField<T>,
    pub kind: ActionKind,
}

impl<T: Real> ActionSlice<T> {
    /// Slice value at an arbitrary point.
    pub fn at(&self, x: &Vector<T>) -> T {
        self.values.interpolate(x)
    }
}

// The initialization segment is not a scheme step, so delta is not tied to dt_max.
fn check_delta<T: Real>(delta: T) -> Result<()> {
    if !(delta > T::zero()) || !delta.is_finite() {
        return usage(format!("initialization time must be positive, got {delta}"));
    }
    Ok(())
}

fn one_segment<T: Real>(
    model: &HamiltonianModel<T>,
    grid: &PeriodicGrid<T>,
    base_x: &Vector<T>,
    base_u: T,
    delta: T,
    kind: ActionKind,
) -> Result<ActionSlice<T>> {
    if model.dim != grid.dim() {
        return usage("model and grid dimensions differ");
    }
    let dim = model.dim;
    let half = T::lit(0.5);
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let x = grid.coord(i);
        // the segment runs base -> x for h and x -> base for the dual
        let (from, disp) = match kind {
            ActionKind::ForwardH => (*base_x, grid.displacement(base_x, &x)),
            ActionKind::BackwardH => (x, grid.displacement(&x, base_x)),
        };
        let mut mid = from;
        let mut v = [T::zero(); 2];
        for k in 0..dim {
            mid[k] = from[k] + half * disp[k];
            v[k] = disp[k] / delta;
        }
        let l = model.eval_l(&model.reduce(mid), base_u, &v)?;
        values.push(match kind {
            ActionKind::ForwardH => base_u + delta * l,
            ActionKind::BackwardH => base_u - delta * l,
        });
    }
    Ok(ActionSlice {
        base_x: model.reduce(*base_x),
        base_u,
        t: delta,
        values: GridField::new(*grid, values)?,
        kind,
    })
}

/// `h_{x0,u0}(., delta)` from the one-segment formula `u0 + delta L(mid, u0, disp / delta)`.
pub fn init_action<T: Real>(
    model: &HamiltonianModel<T>,
    grid: &PeriodicGrid<T>,
    x0: &Vector<T>,
    u0: T,
    delta: T,
) -> Result<ActionSlice<T>> {
    check_delta(delta)?;
    one_segment(model, grid, x0, u0, delta, ActionKind::ForwardH)
}

/// Advances a slice by `horizon` with the semigroup matching its kind.
pub fn propagate_action<T: Real>(
    model: &HamiltonianModel<T>,
    slice: &ActionSlice<T>,
    horizon: T,
    dt: T,
    opts: &SchemeOptions<T>,
) -> Result<ActionSlice<T>> {
    let evo = evolve(
        model,
        &slice.values,
        slice.kind.direction(),
        horizon,
        dt,
        opts,
        |_, _, _| {},
    )?;
    let steps = evo.history.len();
    Ok(ActionSlice {
        t: slice.t + dt * T::count(steps),
        values: evo.field,
        ..slice.clone()
    })
}

/// `h_{x0,u0}(., t)`: initialization at `delta` followed by `t - delta` of backward evolution.
pub fn forward_action<T: Real>(
    model: &HamiltonianModel<T>,
    grid: &PeriodicGrid<T>,
    x0: &Vector<T>,
    u0: T,
    t: T,
    dt: T,
    delta: T,
    opts: &SchemeOptions<T>,
) -> Result<ActionSlice<T>> {
    if t < delta {
        return usage(format!("time {t} is below the initialization time {delta}"));
    }
    let init = init_action(model, grid, x0, u0, delta)?;
    propagate_action(model, &init, t - delta, dt, opts)
}

/// `h^{x_from,u_from}(., t)`: dual initialization followed by forward evolution.
pub fn backward_action<T: Real>(
    model: &HamiltonianModel<T>,
    grid: &PeriodicGrid<T>,
    x_from: &Vector<T>,
    u_from: T,
    t: T,
    dt: T,
    delta: T,
    opts: &SchemeOptions<T>,
) -> Result<ActionSlice<T>> {
    check_delta(delta)?;
    if t < delta {
        return usage(format!("time {t} is below the initialization time {delta}"));
    }
    let init = one_segment(model, grid, x_from, u_from, delta, ActionKind::BackwardH)?;
    propagate_action(model, &init, t - delta, dt, opts)
}

/// `|h^{x,u}(x0, t) - u0|` with `u = h_{x0,u0}(x, t)`; zero in exact arithmetic.
pub fn check_reversibility<T: Real>(
    model: &HamiltonianModel<T>,
    grid: &PeriodicGrid<T>,
    x0: &Vector<T>,
    u0: T,
    x: &Vector<T>,
    t: T,
    dt: T,
    delta: T,
    opts: &SchemeOptions<T>,
) -> Result<T> {
    if t < T::lit(2.0) * delta {
        return usage("reversibility check needs t >= 2 delta");
    }
    let h = forward_action(model, grid, x0, u0, t, dt, delta, opts)?;
    let u = h.at(x);
    let back = backward_action(model, grid, x, u, t, dt, delta, opts)?;
    Ok((back.at(x0) - u0).abs())
}

/// Nodes used as intermediate points in the two-stage Markov computation.
fn subsample(n_nodes: usize, count: usize) -> Vec<usize> {
    let count = count.min(n_nodes).max(1);
    (0..count).map(|j| j * n_nodes / count).collect()
}

/// `min_y h_{y, h(y,t)}(., s)` over `y` in an evenly spaced node subsample.
pub fn markov_two_stage<T: Real>(
    model: &HamiltonianModel<T>,
    first: &ActionSlice<T>,
    s: T,
    dt: T,
    delta: T,
    y_points: usize,
    opts: &SchemeOptions<T>,
) -> Result<GridField<T>> {
    if first.kind != ActionKind::ForwardH {
        return usage("the two-stage Markov computation takes a forward action slice");
    }
    let grid = *first.values.grid();
    let mut best: Option<Vec<T>> = None;
    for j in subsample(grid.len(), y_points) {
        let y = grid.coord(j);
        let h = forward_action(model, &grid, &y, first.values.value(j), s, dt, delta, opts)?;
        best = Some(match best {
            None => h.values.into_values(),
            Some(b) => b
                .into_iter()
                .zip(h.values.values())
                .map(|(a, c)| a.min(*c))
                .collect(),
        });
    }
    GridField::new(grid, best.unwrap_or_default())
}

/// Markov property check for `h_{x0,u0}` at `t + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovReport<T> {
    /// `h(., t + s)` by direct propagation.
    pub direct: GridField<T>,
    /// The two-stage minimum over intermediate points.
    pub two_stage: GridField<T>,
    /// `sup |direct - two_stage|` over a node subsample.
    pub defect: T,
}

pub fn markov_defect<T: Real>(
    model: &HamiltonianModel<T>,
    grid: &PeriodicGrid<T>,
    x0: &Vector<T>,
    u0: T,
    t: T,
    s: T,
    dt: T,
    delta: T,
    y_points: usize,
    opts: &SchemeOptions<T>,
) -> Result<MarkovReport<T>> {
    if t < delta || s < delta {
        return usage("both Markov times must be at least the initialization time");
    }
    let first = forward_action(model, grid, x0, u0, t, dt, delta, opts)?;
    let direct = propagate_action(model, &first, s, dt, opts)?.values;
    let two_stage = markov_two_stage(model, &first, s, dt, delta, y_points, opts)?;
    let defect = subsample(grid.len(), y_points)
        .into_iter()
        .map(|i| (direct.value(i) - two_stage.value(i)).abs())
        .fold(T::zero(), T::max);
    Ok(MarkovReport {
        direct,
        two_stage,
        defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn setup(n: usize) -> (HamiltonianModel<f64>, PeriodicGrid<f64>, SchemeOptions<f64>) {
        let m = HamiltonianModel::quadratic_contact(1);
        let g = PeriodicGrid::for_model(&m, n).unwrap();
        (m, g, SchemeOptions::default())
    }

    #[test]
    fn one_segment_values() {
        let (m, g, o) = setup(100);
        let s = init_action(&m, &g, &[0.2, 0.0], 0.0, 0.01).unwrap();
        assert_eq!(s.t, 0.01);
        assert_eq!(s.values.value(20), 0.0);
        // displacement 0.1 over 0.01: 0.01 * 10^2 / 2
        assert_abs_diff_eq!(s.values.value(30), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.values.value(10), 0.5, epsilon = 1e-12);

        let b = backward_action(&m, &g, &[0.2, 0.0], 0.0, 0.01, 1e-3, 0.01, &o).unwrap();
        assert_eq!(b.kind, ActionKind::BackwardH);
        assert_eq!(b.values.value(20), 0.0);
        assert_abs_diff_eq!(b.values.value(30), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn delta_guard() {
        let (m, g, o) = setup(64);
        assert!(init_action(&m, &g, &[0.0, 0.0], 0.0, 0.0).is_err());
        assert!(init_action(&m, &g, &[0.0, 0.0], 0.0, f64::NAN).is_err());
        assert!(forward_action(&m, &g, &[0.0, 0.0], 0.0, 0.001, 1e-3, 0.005, &o).is_err());
    }

    #[test]
    fn monotone_in_base_value() {
        let (m, g, o) = setup(128);
        let x0 = [0.3, 0.0];
        let mut lo = init_action(&m, &g, &x0, -1.0, 5e-3).unwrap();
        let mut hi = init_action(&m, &g, &x0, 1.0, 5e-3).unwrap();
        for _ in 0..5 {
            lo = propagate_action(&m, &lo, 0.2, 2e-3, &o).unwrap();
            hi = propagate_action(&m, &hi, 0.2, 2e-3, &o).unwrap();
            for i in 0..g.len() {
                assert!(lo.values.value(i) < hi.values.value(i));
            }
        }
        assert_abs_diff_eq!(lo.t, 1.005, epsilon = 1e-12);

        let lo = backward_action(&m, &g, &x0, -1.0, 0.5, 2e-3, 5e-3, &o).unwrap();
        let hi = backward_action(&m, &g, &x0, 1.0, 0.5, 2e-3, 5e-3, &o).unwrap();
        for i in 0..g.len() {
            assert!(lo.values.value(i) < hi.values.value(i));
        }
    }

    #[test]
    fn stationary_base_point_is_reversible() {
        let (m, g, o) = setup(128);
        let x0 = [0.25, 0.0];
        let d = check_reversibility(&m, &g, &x0, 0.0, &x0, 1.0, 2e-3, 5e-3, &o).unwrap();
        assert!(d <= 1e-2, "defect {d}");
    }

    #[test]
    fn halving_delta_changes_little() {
        let (m, g, o) = setup(128);
        let x0 = [0.5, 0.0];
        let a = forward_action(&m, &g, &x0, 0.5, 0.02, 1e-3, 0.01, &o).unwrap();
        let b = forward_action(&m, &g, &x0, 0.5, 0.02, 1e-3, 0.005, &o).unwrap();
        // compare near the base point where both are well resolved
        let near: f64 = (54..=74).map(|i| (a.values.value(i) - b.values.value(i)).abs()).fold(0.0, f64::max);
        assert!(near < 2e-2, "{near}");
    }
}
