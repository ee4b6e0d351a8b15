//! Barrier function, projected Aubry set, its lift to phase space and the
//! recurrence-based Mather set estimate.

use std::fmt;

use rayon::prelude::*;

use crate::error::{usage, Error, Result};
use crate::flow::{integrate, phase_distance, return_time, speed};
use crate::grid::{GradientMode, GridField, PeriodicGrid};
use crate::model::{ContactPoint, HamiltonianModel};
use crate::scalar::Real;
use crate::semigroup::Direction;
use crate::weakkam::{hj_residual, kink_tolerant_gradient};

/// `u_minus - v_plus`, with negatives above `-tol_clamp` set to zero.
pub fn barrier<T: Real>(u_minus: &GridField<T>, v_plus: &GridField<T>, tol_clamp: T) -> Result<GridField<T>> {
    let diff = u_minus.difference(v_plus)?;
    let grid = *diff.grid();
    if let Some(i) = (0..grid.len()).find(|&i| diff.value(i) < -tol_clamp) {
        return Err(Error::Consistency(format!(
            "barrier is {:e} at x = {:?}: the forward solution exceeds the backward one",
            diff.value(i),
            &grid.coord(i)[..grid.dim()]
        )));
    }
    Ok(diff.map(|v| v.max(T::zero())))
}

/// Thresholds for the Aubry estimate. `None` picks the grid-scaled default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AubryOptions<T> {
    /// Barrier threshold; defaults to ten times the sup residual of `u-`.
    pub tol_set: Option<T>,
    /// Allowed gradient mismatch on cells; defaults to `10 h`.
    pub grad_tol: Option<T>,
    /// Allowed `|H|` on lift points.
    pub residual_tol: T,
    pub tol_clamp: T,
}

impl<T: Real> Default for AubryOptions<T> {
    fn default() -> Self {
        Self {
            tol_set: None,
            grad_tol: None,
            residual_tol: T::lit(1e-2),
            tol_clamp: T::lit(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AubryEstimate<T> {
    pub barrier: GridField<T>,
    pub tol_set: T,
    pub grad_tol: T,
    /// Node indices with `B <= tol_set`.
    pub cells: Vec<usize>,
    /// `(x, u-(x), Du-(x))` over the cells, central gradients.
    pub lift: Vec<ContactPoint<T>>,
}

impl<T: Real> AubryEstimate<T> {
    pub fn grid(&self) -> &PeriodicGrid<T> {
        self.barrier.grid()
    }
}

/// Near-zero set of the barrier of `u_minus` and the maximal forward solution.
pub fn projected_aubry<T: Real>(
    model: &HamiltonianModel<T>,
    u_minus: &GridField<T>,
    u_plus: &GridField<T>,
    opts: &AubryOptions<T>,
) -> Result<AubryEstimate<T>> {
    let b = barrier(u_minus, u_plus, opts.tol_clamp)?;
    let grid = *b.grid();
    let tol_set = opts
        .tol_set
        .unwrap_or_else(|| (T::lit(10.0) * hj_residual(model, u_minus).max()).max(opts.tol_clamp));
    let grad_tol = opts.grad_tol.unwrap_or(T::lit(10.0) * grid.min_spacing());
    let cells: Vec<usize> = (0..grid.len()).filter(|&i| b.value(i) <= tol_set).collect();
    if cells.is_empty() {
        return Err(Error::Tolerance(format!(
            "no node has barrier below {tol_set:e} (min {:e}); raise tol_set or refine the grid",
            b.min()
        )));
    }
    let lift = cells
        .iter()
        .map(|&i| ContactPoint::new(grid.coord(i), u_minus.value(i), u_minus.gradient(i, GradientMode::Central)))
        .collect();
    Ok(AubryEstimate {
        barrier: b,
        tol_set,
        grad_tol,
        cells,
        lift,
    })
}

/// Largest cell count for the all-pairs graph check.
pub const ALL_PAIRS_LIMIT: usize = 4096;

/// Lipschitz constant of `x -> (u, p)` over the lift. All pairs for small
/// cell sets, grid neighbours otherwise.
pub fn graph_check<T: Real>(est: &AubryEstimate<T>) -> Result<T> {
    if est.cells.len() < 2 {
        return usage("graph check needs at least two cells");
    }
    let grid = est.grid();
    let dim = grid.dim();
    let ratio = |a: &ContactPoint<T>, b: &ContactPoint<T>| {
        let d = grid.distance(&a.x, &b.x);
        let mut s = (a.u - b.u) * (a.u - b.u);
        for k in 0..dim {
            s += (a.p[k] - b.p[k]) * (a.p[k] - b.p[k]);
        }
        s.sqrt() / d
    };
    if est.cells.len() <= ALL_PAIRS_LIMIT {
        let worst = (0..est.lift.len())
            .into_par_iter()
            .map(|i| {
                est.lift[i + 1..]
                    .iter()
                    .map(|b| ratio(&est.lift[i], b))
                    .fold(T::zero(), T::max)
            })
            .reduce(T::zero, T::max);
        return Ok(worst);
    }
    let pos = lift_index(est);
    let mut worst = T::zero();
    for (li, &cell) in est.cells.iter().enumerate() {
        for axis in 0..dim {
            if let Some(lj) = pos[grid.neighbor(cell, axis, 1)] {
                worst = worst.max(ratio(&est.lift[li], &est.lift[lj]));
            }
        }
    }
    Ok(worst)
}

fn lift_index<T: Real>(est: &AubryEstimate<T>) -> Vec<Option<usize>> {
    let mut pos = vec![None; est.grid().len()];
    for (li, &c) in est.cells.iter().enumerate() {
        pos[c] = Some(li);
    }
    pos
}

/// Nearest-point queries against lift points indexed by grid node.
struct LiftLookup<'a, T> {
    model: &'a HamiltonianModel<T>,
    grid: PeriodicGrid<T>,
    points: &'a [ContactPoint<T>],
    pos: Vec<Option<usize>>,
}

impl<'a, T: Real> LiftLookup<'a, T> {
    const WINDOW: isize = 8;

    fn new(model: &'a HamiltonianModel<T>, grid: PeriodicGrid<T>, cells: &[usize], points: &'a [ContactPoint<T>]) -> Self {
        let mut pos = vec![None; grid.len()];
        for (li, &c) in cells.iter().enumerate() {
            pos[c] = Some(li);
        }
        Self {
            model,
            grid,
            points,
            pos,
        }
    }

    /// Phase-space distance from `z` to the nearest lift point.
    fn distance(&self, z: &ContactPoint<T>) -> T {
        let centre = self.grid.nearest_node(&z.x);
        let dim = self.grid.dim();
        let mut best = T::infinity();
        let w = Self::WINDOW;
        let outer = if dim == 2 { w } else { 0 };
        for j in -outer..=outer {
            let row = if dim == 2 { self.grid.neighbor(centre, 1, j) } else { centre };
            for i in -w..=w {
                if let Some(li) = self.pos[self.grid.neighbor(row, 0, i)] {
                    best = best.min(phase_distance(self.model, z, &self.points[li]));
                }
            }
        }
        // the window is exact when the best match is closer than its radius
        if best <= T::count(Self::WINDOW as usize) * self.grid.min_spacing() {
            return best;
        }
        self.points
            .iter()
            .map(|p| phase_distance(self.model, z, p))
            .fold(T::infinity(), T::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport<T> {
    /// `max |u+ - u-|` on cells.
    pub max_value_gap: T,
    /// `max |Du+ - Du-|` on cells with kink-tolerant gradients.
    pub max_grad_gap: T,
    /// `max |H|` on lift points.
    pub max_lift_residual: T,
    pub grad_tol: T,
    pub residual_tol: T,
}

impl<T: Real> CellReport<T> {
    pub fn passed(&self, tol_set: T) -> bool {
        self.max_value_gap <= tol_set && self.max_grad_gap <= self.grad_tol && self.max_lift_residual <= self.residual_tol
    }
}

/// Checks agreement of `u-` and `u+` on the cells and the residual of the lift.
pub fn cell_report<T: Real>(
    model: &HamiltonianModel<T>,
    est: &AubryEstimate<T>,
    u_minus: &GridField<T>,
    u_plus: &GridField<T>,
    residual_tol: T,
) -> CellReport<T> {
    let dim = model.dim;
    let mut out = CellReport {
        max_value_gap: T::zero(),
        max_grad_gap: T::zero(),
        max_lift_residual: T::zero(),
        grad_tol: est.grad_tol,
        residual_tol,
    };
    for (&c, pt) in est.cells.iter().zip(&est.lift) {
        out.max_value_gap = out.max_value_gap.max((u_plus.value(c) - u_minus.value(c)).abs());
        let gm = kink_tolerant_gradient(model, u_minus, c);
        let gp = kink_tolerant_gradient(model, u_plus, c);
        let mut s = T::zero();
        for k in 0..dim {
            s += (gm[k] - gp[k]) * (gm[k] - gp[k]);
        }
        out.max_grad_gap = out.max_grad_gap.max(s.sqrt());
        out.max_lift_residual = out.max_lift_residual.max(model.eval_h(pt).abs());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport<T> {
    /// Largest distance from the lift reached by any orbit.
    pub worst_distance: T,
    pub worst_start: Option<ContactPoint<T>>,
    pub dist_tol: T,
    /// Orbits that blew up numerically.
    pub escaped: usize,
}

impl<T: Real> InvarianceReport<T> {
    pub fn passed(&self) -> bool {
        self.escaped == 0 && self.worst_distance <= self.dist_tol
    }
}

fn orbit_excursion<T: Real>(
    model: &HamiltonianModel<T>,
    start: &ContactPoint<T>,
    lookup: &LiftLookup<'_, T>,
    horizon: T,
    dt_flow: T,
) -> Option<T> {
    let tr = integrate(model, start, horizon, dt_flow, Direction::Forward).ok()?;
    Some(
        tr.samples
            .iter()
            .map(|(_, z)| lookup.distance(z))
            .fold(T::zero(), T::max),
    )
}

/// Integrates the flow from every lift point over `[0, horizon]` and measures
/// the largest distance from the lift.
pub fn flow_invariance<T: Real>(
    model: &HamiltonianModel<T>,
    est: &AubryEstimate<T>,
    horizon: T,
    dt_flow: T,
    dist_tol: T,
) -> InvarianceReport<T> {
    let lookup = LiftLookup::new(model, *est.grid(), &est.cells, &est.lift);
    let results: Vec<Option<T>> = est
        .lift
        .par_iter()
        .map(|z| orbit_excursion(model, z, &lookup, horizon, dt_flow))
        .collect();
    let mut report = InvarianceReport {
        worst_distance: T::zero(),
        worst_start: None,
        dist_tol,
        escaped: 0,
    };
    for (z, r) in est.lift.iter().zip(results) {
        match r {
            Some(d) if d > report.worst_distance || report.worst_start.is_none() => {
                report.worst_distance = d;
                report.worst_start = Some(*z);
            }
            Some(_) => {}
            None => report.escaped += 1,
        }
    }
    report
}

/// Nodes whose graph point over `u_minus` stays within `dist_tol` of the
/// graph for `t` in `[0, horizon]`; the flow-invariant core of the graph.
pub fn invariant_core<T: Real>(
    model: &HamiltonianModel<T>,
    u_minus: &GridField<T>,
    horizon: T,
    dt_flow: T,
    dist_tol: T,
) -> Vec<usize> {
    let grid = *u_minus.grid();
    let all: Vec<usize> = (0..grid.len()).collect();
    let graph: Vec<ContactPoint<T>> = all
        .iter()
        .map(|&i| ContactPoint::new(grid.coord(i), u_minus.value(i), u_minus.gradient(i, GradientMode::Central)))
        .collect();
    let lookup = LiftLookup::new(model, grid, &all, &graph);
    all.par_iter()
        .filter(|&&i| {
            orbit_excursion(model, &graph[i], &lookup, horizon, dt_flow).is_some_and(|d| d <= dist_tol)
        })
        .copied()
        .collect()
}

/// Hausdorff distance between two node sets on the torus; infinite if
/// exactly one is empty.
pub fn hausdorff_nodes<T: Real>(grid: &PeriodicGrid<T>, a: &[usize], b: &[usize]) -> T {
    if a.is_empty() && b.is_empty() {
        return T::zero();
    }
    if a.is_empty() || b.is_empty() {
        return T::infinity();
    }
    let one_way = |from: &[usize], to: &[usize]| {
        from.par_iter()
            .map(|&i| {
                let x = grid.coord(i);
                to.iter()
                    .map(|&j| grid.distance(&x, &grid.coord(j)))
                    .fold(T::infinity(), T::min)
            })
            .reduce(T::zero, T::max)
    };
    one_way(a, b).max(one_way(b, a))
}

/// Settings for [`mather_estimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatherOptions<T> {
    pub t_rec: T,
    /// Return radius; defaults to `3 h`.
    pub r_rec: Option<T>,
    pub dt_flow: T,
    /// Speed below which a lift point is a fixed point.
    pub fixed_tol: T,
}

impl<T: Real> Default for MatherOptions<T> {
    fn default() -> Self {
        Self {
            t_rec: T::lit(20.0),
            r_rec: None,
            dt_flow: T::lit(1e-3),
            fixed_tol: T::lit(1e-8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecurrenceClass<T> {
    /// No lift point recurs.
    Empty,
    /// Every recurrent point is a rest point of the flow.
    FixedPoints,
    /// All recurrent points lie on one closed orbit.
    PeriodicOrbit { period: T },
    /// Anything else.
    Mixed,
}

impl<T: Real> fmt::Display for RecurrenceClass<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecurrenceClass::Empty => f.write_str("empty"),
            RecurrenceClass::FixedPoints => f.write_str("fixed points"),
            RecurrenceClass::PeriodicOrbit { period } => write!(f, "periodic orbit (period {period:.6})"),
            RecurrenceClass::Mixed => f.write_str("mixed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatherEstimate<T> {
    /// Recurrent lift points.
    pub points: Vec<ContactPoint<T>>,
    /// Whether each recurrent point is a rest point.
    pub fixed: Vec<bool>,
    /// First return time of each recurrent point; `None` for rest points.
    pub periods: Vec<Option<T>>,
    pub class: RecurrenceClass<T>,
    pub r_rec: T,
    pub warnings: Vec<String>,
}

enum Recurrence<T> {
    Fixed,
    Returns(T),
    Never,
    Escaped,
}

/// Recurrent subset of the lift under the contact flow.
pub fn mather_estimate<T: Real>(
    model: &HamiltonianModel<T>,
    est: &AubryEstimate<T>,
    opts: &MatherOptions<T>,
) -> Result<MatherEstimate<T>> {
    if est.lift.is_empty() {
        return usage("Mather estimate needs a nonempty lift");
    }
    let r_rec = opts.r_rec.unwrap_or(T::lit(3.0) * est.grid().min_spacing());
    let scan: Vec<Recurrence<T>> = est
        .lift
        .par_iter()
        .map(|z| {
            if speed(model, z) < opts.fixed_tol {
                return Recurrence::Fixed;
            }
            match integrate(model, z, opts.t_rec, opts.dt_flow, Direction::Forward) {
                Ok(tr) => match return_time(model, &tr.samples, r_rec) {
                    Some(p) => Recurrence::Returns(p),
                    None => Recurrence::Never,
                },
                Err(_) => Recurrence::Escaped,
            }
        })
        .collect();

    let mut points = Vec::new();
    let mut fixed = Vec::new();
    let mut periods = Vec::new();
    let mut escaped = 0usize;
    for (z, r) in est.lift.iter().zip(&scan) {
        match r {
            Recurrence::Fixed => {
                points.push(*z);
                fixed.push(true);
                periods.push(None);
            }
            Recurrence::Returns(p) => {
                points.push(*z);
                fixed.push(false);
                periods.push(Some(*p));
            }
            Recurrence::Never => {}
            Recurrence::Escaped => escaped += 1,
        }
    }
    let mut warnings = Vec::new();
    if escaped > 0 {
        warnings.push(format!("{escaped} orbits left the finite range; the lift is numerically unstable there"));
    }

    let class = if points.is_empty() {
        RecurrenceClass::Empty
    } else if fixed.iter().all(|&f| f) {
        RecurrenceClass::FixedPoints
    } else if fixed.iter().any(|&f| f) {
        RecurrenceClass::Mixed
    } else {
        single_orbit(model, &points, &periods, r_rec, opts.dt_flow)?
    };
    Ok(MatherEstimate {
        points,
        fixed,
        periods,
        class,
        r_rec,
        warnings,
    })
}

/// Tests whether all recurrent points lie on the orbit of the first one.
fn single_orbit<T: Real>(
    model: &HamiltonianModel<T>,
    points: &[ContactPoint<T>],
    periods: &[Option<T>],
    r_rec: T,
    dt_flow: T,
) -> Result<RecurrenceClass<T>> {
    let period = periods[0].expect("non-fixed points carry a period");
    let orbit = integrate(model, &points[0], period, dt_flow, Direction::Forward)?;
    let on_orbit = points.par_iter().all(|z| {
        orbit
            .samples
            .iter()
            .any(|(_, o)| phase_distance(model, z, o) <= r_rec)
    });
    let same_period = periods
        .iter()
        .flatten()
        .all(|p| (*p - period).abs() <= T::lit(0.05) * period);
    Ok(if on_orbit && same_period {
        RecurrenceClass::PeriodicOrbit { period }
    } else {
        RecurrenceClass::Mixed
    })
}
