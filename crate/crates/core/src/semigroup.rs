//! Discrete backward and forward solution semigroups.
//!
//! One backward step at node `x` is
//!
//! ```text
//! min_v  f(y) + dt L(y, f(y), v),   y = x - v dt
//! ```
//!
//! and one forward step is
//!
//! ```text
//! max_v  f(y) - dt L(y, f(y), v),   y = x + v dt
//! ```
//!
//! with `f(y)` read by multilinear interpolation. The action argument of `L`
//! is taken at the known endpoint, so each step is explicit. Velocities are
//! searched on a lattice of `n_v` points per axis over `[-v_max, v_max]`,
//! followed by parabolic refinement around the best lattice point and its
//! better neighbour on each axis.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{usage, Error, Result};
use crate::grid::{fmt_real, GridField};
use crate::model::HamiltonianModel;
use crate::scalar::{Real, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Backward,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeOptions<T> {
    /// Velocity lattice points per axis.
    pub n_v: usize,
    pub dt_max: T,
    /// Largest allowed `v_max dt / h`.
    pub locality: T,
    /// Sup-norm above which an evolution aborts.
    pub blowup_guard: T,
}

impl<T: Real> Default for SchemeOptions<T> {
    fn default() -> Self {
        Self {
            n_v: 33,
            dt_max: T::lit(5e-3),
            locality: T::lit(4.0),
            blowup_guard: T::lit(1e6),
        }
    }
}

/// Where the action argument of `L` comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ActionArgument<T> {
    /// Interpolated field value at the known endpoint.
    Field,
    /// A fixed level `a`: the classical Lagrangian `L(x, a, v)`.
    Frozen(T),
}

/// Checks `0 < dt <= dt_max` and `v_max dt <= locality h`.
pub fn check_step_size<T: Real>(
    model: &HamiltonianModel<T>,
    f: &GridField<T>,
    dt: T,
    opts: &SchemeOptions<T>,
) -> Result<()> {
    if !(dt > T::zero()) {
        return usage(format!("time step must be positive, got {dt}"));
    }
    if dt > opts.dt_max * (T::one() + T::lit(1e-12)) {
        return usage(format!("time step {dt} exceeds dt_max = {}", opts.dt_max));
    }
    let h = f.grid().min_spacing();
    if model.v_max * dt > opts.locality * h * (T::one() + T::lit(1e-12)) {
        return usage(format!(
            "locality constraint v_max * dt <= {} * h violated: v_max = {}, dt = {dt}, h = {h}",
            opts.locality, model.v_max
        ));
    }
    if model.dim != f.grid().dim() {
        return usage("model and grid dimensions differ");
    }
    if opts.n_v < 3 {
        return usage("velocity lattice needs at least 3 points per axis");
    }
    Ok(())
}

pub fn backward_step<T: Real>(
    model: &HamiltonianModel<T>,
    f: &GridField<T>,
    dt: T,
    opts: &SchemeOptions<T>,
) -> Result<GridField<T>> {
    step_with(model, f, dt, opts, Direction::Backward, ActionArgument::Field)
}

pub fn forward_step<T: Real>(
    model: &HamiltonianModel<T>,
    f: &GridField<T>,
    dt: T,
    opts: &SchemeOptions<T>,
) -> Result<GridField<T>> {
    step_with(model, f, dt, opts, Direction::Forward, ActionArgument::Field)
}

/// One step in the given direction.
pub fn step<T: Real>(
    model: &HamiltonianModel<T>,
    f: &GridField<T>,
    dt: T,
    opts: &SchemeOptions<T>,
    direction: Direction,
) -> Result<GridField<T>> {
    step_with(model, f, dt, opts, direction, ActionArgument::Field)
}

pub(crate) fn step_with<T: Real>(
    model: &HamiltonianModel<T>,
    f: &GridField<T>,
    dt: T,
    opts: &SchemeOptions<T>,
    direction: Direction,
    arg: ActionArgument<T>,
) -> Result<GridField<T>> {
    check_step_size(model, f, dt, opts)?;
    let grid = *f.grid();
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| node_update(model, f, dt, opts, direction, arg, &grid.coord(i)))
        .collect::<Result<Vec<T>>>()?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite value at node {i} after one step"
        )));
    }
    Ok(GridField::from_values_unchecked(grid, values))
}

/// Optimizes over velocities at one point. Returns the updated value.
fn node_update<T: Real>(
    model: &HamiltonianModel<T>,
    f: &GridField<T>,
    dt: T,
    opts: &SchemeOptions<T>,
    direction: Direction,
    arg: ActionArgument<T>,
    x: &Vector<T>,
) -> Result<T> {
    let dim = model.dim;
    let n_v = opts.n_v;
    let v_max = model.v_max;
    let dv = T::lit(2.0) * v_max / T::count(n_v - 1);
    let lattice = |k: usize| -v_max + dv * T::count(k);

    // objective to minimize; the forward gain enters with a minus sign
    let key = |v: &Vector<T>| -> Result<T> {
        let mut y = *x;
        for k in 0..dim {
            y[k] = match direction {
                Direction::Backward => x[k] - v[k] * dt,
                Direction::Forward => x[k] + v[k] * dt,
            };
        }
        let fy = f.interpolate(&y);
        let u = match arg {
            ActionArgument::Field => fy,
            ActionArgument::Frozen(a) => a,
        };
        let l = model.eval_l(&y, u, v)?;
        Ok(match direction {
            Direction::Backward => fy + dt * l,
            Direction::Forward => dt * l - fy,
        })
    };
    let speed2 = |v: &Vector<T>| v[0] * v[0] + v[1] * v[1];

    let mut best = T::infinity();
    let mut best_idx = [0usize; 2];
    let mut best_v = [T::zero(); 2];
    let outer = if dim == 2 { n_v } else { 1 };
    for k1 in 0..outer {
        for k0 in 0..n_v {
            let v = [lattice(k0), if dim == 2 { lattice(k1) } else { T::zero() }];
            let val = key(&v)?;
            if val < best || (val == best && speed2(&v) < speed2(&best_v)) {
                best = val;
                best_idx = [k0, k1];
                best_v = v;
            }
        }
    }

    // Parabolic refinement around the best lattice point and around its better
    // neighbour on each axis. Using both brackets keeps the update continuous
    // when the best lattice point moves to a neighbour; a single bracket jumps
    // there, and the fixed-point iteration then chatters instead of settling.
    let mut coords: [Vec<T>; 2] = [vec![best_v[0]], vec![best_v[1]]];
    for axis in 0..dim {
        let i = best_idx[axis];
        let at = |k: usize| {
            let mut v = best_v;
            v[axis] = lattice(k);
            v
        };
        let mut vals = vec![None; n_v];
        let mut val = |k: usize| -> Result<T> {
            if k == i {
                return Ok(best);
            }
            if vals[k].is_none() {
                vals[k] = Some(key(&at(k))?);
            }
            Ok(vals[k].expect("just set"))
        };
        let mut centres = vec![i];
        if i > 0 && i + 1 < n_v {
            centres.push(if val(i - 1)? < val(i + 1)? { i - 1 } else { i + 1 });
        } else if i > 0 {
            centres.push(i - 1);
        } else if i + 1 < n_v {
            centres.push(i + 1);
        }
        for c in centres {
            if c == 0 || c + 1 == n_v {
                continue;
            }
            let (a, b, d) = (val(c - 1)?, val(c)?, val(c + 1)?);
            let den = a - T::lit(2.0) * b + d;
            if den > T::zero() {
                let off = (T::lit(0.5) * (a - d) / den).max(-T::one()).min(T::one());
                coords[axis].push(lattice(c) + off * dv);
            }
        }
    }
    for &v0 in &coords[0] {
        for &v1 in &coords[1] {
            let v = [v0, v1];
            if v == best_v {
                continue;
            }
            let val = key(&v)?;
            if val < best {
                best = val;
            }
        }
    }
    Ok(match direction {
        Direction::Backward => best,
        Direction::Forward => -best,
    })
}

/// One row of an evolution history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord<T> {
    pub step: usize,
    pub t: T,
    /// `sup |f_n - f_{n-1}|`.
    pub sup_change: T,
    pub min: T,
    pub max: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolution<T> {
    pub field: GridField<T>,
    pub history: Vec<HistoryRecord<T>>,
}

/// Number of steps used for horizon `t`: `ceil(t / dt)`.
pub fn step_count<T: Real>(horizon: T, dt: T) -> usize {
    if horizon <= T::zero() {
        return 0;
    }
    let r = horizon / dt;
    let rounded = r.round();
    let n = if (r - rounded).abs() <= T::lit(1e-9) * rounded.max(T::one()) {
        rounded
    } else {
        r.ceil()
    };
    n.to_usize().unwrap_or(0)
}

/// Iterates a step `ceil(T/dt)` times, reporting every step to `observer`.
pub fn evolve<T: Real>(
    model: &HamiltonianModel<T>,
    f0: &GridField<T>,
    direction: Direction,
    horizon: T,
    dt: T,
    opts: &SchemeOptions<T>,
    mut observer: impl FnMut(usize, T, &GridField<T>),
) -> Result<Evolution<T>> {
    if horizon < T::zero() {
        return usage("evolution horizon must be non-negative");
    }
    let steps = step_count(horizon, dt);
    if steps > 0 {
        check_step_size(model, f0, dt, opts)?;
    }
    let mut field = f0.clone();
    let mut history = Vec::with_capacity(steps);
    for n in 1..=steps {
        let next = step(model, &field, dt, opts, direction)?;
        let t = dt * T::count(n);
        let change = next.sup_distance(&field)?;
        let sup = next.sup_norm();
        if sup > opts.blowup_guard {
            return Err(Error::Blowup {
                step: n,
                t: t.to_f64_lossy(),
                sup_norm: sup.to_f64_lossy(),
                guard: opts.blowup_guard.to_f64_lossy(),
            });
        }
        history.push(HistoryRecord {
            step: n,
            t,
            sup_change: change,
            min: next.min(),
            max: next.max(),
        });
        field = next;
        observer(n, t, &field);
    }
    Ok(Evolution { field, history })
}

/// Writes `step,t,sup_change,min,max` rows.
pub fn write_history_csv<T: Real, W: Write>(history: &[HistoryRecord<T>], mut w: W) -> io::Result<()> {
    writeln!(w, "step,t,sup_change,min,max")?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step,
            fmt_real(r.t),
            fmt_real(r.sup_change),
            fmt_real(r.min),
            fmt_real(r.max)
        )?;
    }
    Ok(())
}
