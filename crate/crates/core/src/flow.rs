//! The contact Hamiltonian flow
//!
//! ```text
//! x' = H_p,   u' = <H_p, p> - H,   p' = -H_x - H_u p
//! ```
//!
//! integrated with fixed-step RK4, together with calibrated curves seeded
//! from weak KAM solutions and diagnostics along them.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{usage, Error, Result};
use crate::grid::{fmt_real, torus_distance, GridField};
use crate::model::{ContactPoint, HamiltonianModel};
use crate::scalar::{dot, norm, Real, Vector};
use crate::semigroup::{step_count, Direction};
use crate::weakkam::kink_tolerant_gradient;

/// Tangent vector `(x', u', p')` at a contact point.
pub fn vector_field<T: Real>(model: &HamiltonianModel<T>, pt: &ContactPoint<T>) -> ContactPoint<T> {
    let g = model.grad_h(pt);
    let h = model.eval_h(pt);
    let dim = model.dim;
    let mut dp = [T::zero(); 2];
    for k in 0..dim {
        dp[k] = -g.dx[k] - g.du * pt.p[k];
    }
    ContactPoint::new(g.dp, dot(&g.dp, &pt.p, dim) - h, dp)
}

/// Euclidean norm of the tangent vector.
pub fn speed<T: Real>(model: &HamiltonianModel<T>, pt: &ContactPoint<T>) -> T {
    let v = vector_field(model, pt);
    let dim = model.dim;
    (dot(&v.x, &v.x, dim) + v.u * v.u + dot(&v.p, &v.p, dim)).sqrt()
}

/// Distance in `(x, u, p)` with `x` measured on the torus.
pub fn phase_distance<T: Real>(model: &HamiltonianModel<T>, a: &ContactPoint<T>, b: &ContactPoint<T>) -> T {
    let dim = model.dim;
    let dx = torus_distance(&model.circle_lengths, dim, &a.x, &b.x);
    let mut s = dx * dx + (a.u - b.u) * (a.u - b.u);
    for k in 0..dim {
        s += (a.p[k] - b.p[k]) * (a.p[k] - b.p[k]);
    }
    s.sqrt()
}

/// Time-ordered samples of one orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    /// `(t, state)` with `x` reduced to the fundamental domain. Times
    /// decrease for backward trajectories.
    pub samples: Vec<(T, ContactPoint<T>)>,
    pub dt_flow: T,
    pub direction: Direction,
}

impl<T: Real> Trajectory<T> {
    pub fn start(&self) -> &ContactPoint<T> {
        &self.samples[0].1
    }

    pub fn last(&self) -> &ContactPoint<T> {
        &self.samples[self.samples.len() - 1].1
    }

    /// `H` along the samples.
    pub fn hamiltonian(&self, model: &HamiltonianModel<T>) -> Vec<T> {
        self.samples.iter().map(|(_, pt)| model.eval_h(pt)).collect()
    }

    /// Writes `t,x1[,x2],u,p1[,p2],H` rows.
    pub fn write_csv<W: Write>(&self, model: &HamiltonianModel<T>, mut w: W) -> io::Result<()> {
        if model.dim == 1 {
            writeln!(w, "t,x1,u,p1,H")?;
        } else {
            writeln!(w, "t,x1,x2,u,p1,p2,H")?;
        }
        for (t, pt) in &self.samples {
            let mut row = vec![fmt_real(*t)];
            row.extend(pt.x[..model.dim].iter().map(|v| fmt_real(*v)));
            row.push(fmt_real(pt.u));
            row.extend(pt.p[..model.dim].iter().map(|v| fmt_real(*v)));
            row.push(fmt_real(model.eval_h(pt)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn axpy<T: Real>(a: &ContactPoint<T>, s: T, d: &ContactPoint<T>, dim: usize) -> ContactPoint<T> {
    let mut out = *a;
    for k in 0..dim {
        out.x[k] += s * d.x[k];
        out.p[k] += s * d.p[k];
    }
    out.u += s * d.u;
    out
}

fn rk4_step<T: Real>(model: &HamiltonianModel<T>, y: &ContactPoint<T>, h: T) -> ContactPoint<T> {
    let dim = model.dim;
    let half = T::lit(0.5);
    let k1 = vector_field(model, y);
    let k2 = vector_field(model, &axpy(y, half * h, &k1, dim));
    let k3 = vector_field(model, &axpy(y, half * h, &k2, dim));
    let k4 = vector_field(model, &axpy(y, h, &k3, dim));
    let sixth = h / T::lit(6.0);
    let mut out = *y;
    for k in 0..dim {
        out.x[k] += sixth * (k1.x[k] + T::lit(2.0) * (k2.x[k] + k3.x[k]) + k4.x[k]);
        out.p[k] += sixth * (k1.p[k] + T::lit(2.0) * (k2.p[k] + k3.p[k]) + k4.p[k]);
    }
    out.u += sixth * (k1.u + T::lit(2.0) * (k2.u + k3.u) + k4.u);
    out
}

/// Largest admissible flow step at a state.
pub fn max_flow_step<T: Real>(model: &HamiltonianModel<T>, pt: &ContactPoint<T>) -> T {
    T::lit(1e-3) * T::one().max(norm(&pt.p, model.dim))
}

/// RK4 orbit over `[0, horizon]` (or `[-horizon, 0]` backward).
pub fn integrate<T: Real>(
    model: &HamiltonianModel<T>,
    start: &ContactPoint<T>,
    horizon: T,
    dt_flow: T,
    direction: Direction,
) -> Result<Trajectory<T>> {
    if !(horizon > T::zero()) {
        return usage(format!("flow horizon must be positive, got {horizon}"));
    }
    if !start.is_finite() {
        return usage("flow start point is not finite");
    }
    let limit = max_flow_step(model, start);
    if !(dt_flow > T::zero()) || dt_flow > limit * (T::one() + T::lit(1e-12)) {
        return usage(format!(
            "flow step must lie in (0, 1e-3 max(1, |p|)] = (0, {limit}], got {dt_flow}"
        ));
    }
    let steps = step_count(horizon, dt_flow);
    let h = match direction {
        Direction::Forward => dt_flow,
        Direction::Backward => -dt_flow,
    };
    let mut y = *start;
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push((T::zero(), model.point(y.x, y.u, y.p)));
    for n in 1..=steps {
        let next = rk4_step(model, &y, h);
        let t = h * T::count(n);
        if !next.is_finite() {
            let last = model.point(y.x, y.u, y.p);
            return Err(Error::FlowBlowup {
                t: t.to_f64_lossy(),
                x: [last.x[0].to_f64_lossy(), last.x[1].to_f64_lossy()],
                u: last.u.to_f64_lossy(),
                p: [last.p[0].to_f64_lossy(), last.p[1].to_f64_lossy()],
            });
        }
        y = next;
        y.x = model.reduce(y.x);
        samples.push((t, y));
    }
    Ok(Trajectory {
        samples,
        dt_flow,
        direction,
    })
}

/// Settings for calibrated curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions<T> {
    /// One-sided derivative jump above which a node counts as a kink.
    pub kink_tol: T,
    /// Largest tolerated `|u(t) - f(x(t))|` before a warning.
    pub drift_tol: T,
}

impl<T: Real> Default for CalibrationOptions<T> {
    fn default() -> Self {
        Self {
            kink_tol: T::lit(0.1),
            drift_tol: T::lit(2e-2),
        }
    }
}

/// Nodes where some one-sided derivative jumps by more than `kink_tol`.
pub fn kink_nodes<T: Real>(f: &GridField<T>, kink_tol: T) -> Vec<usize> {
    use crate::grid::GradientMode::{Left, Right};
    let grid = f.grid();
    (0..grid.len())
        .filter(|&i| {
            (0..grid.dim()).any(|k| (f.axis_derivative(i, k, Right) - f.axis_derivative(i, k, Left)).abs() > kink_tol)
        })
        .collect()
}

/// Kink-tolerant gradient interpolated to an arbitrary point.
pub fn seed_gradient<T: Real>(model: &HamiltonianModel<T>, f: &GridField<T>, x: &Vector<T>) -> Vector<T> {
    let grid = f.grid();
    let mut p = [T::zero(); 2];
    for (k, pk) in p.iter_mut().enumerate().take(model.dim) {
        *pk = grid.interpolate_nodes(x, |i| kink_tolerant_gradient(model, f, i)[k]);
    }
    p
}

/// A calibrated curve with its drift from the seeding field.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedCurve<T> {
    pub trajectory: Trajectory<T>,
    /// `max |u(t) - f(x(t))|` along the curve.
    pub max_drift: T,
    pub warnings: Vec<String>,
}

fn calibrated<T: Real>(
    model: &HamiltonianModel<T>,
    f: &GridField<T>,
    x: &Vector<T>,
    horizon: T,
    dt_flow: T,
    direction: Direction,
    opts: &CalibrationOptions<T>,
) -> Result<CalibratedCurve<T>> {
    if model.dim != f.grid().dim() {
        return usage("model and grid dimensions differ");
    }
    let grid = f.grid();
    let x = model.reduce(*x);
    let reach = T::lit(2.0) * grid.min_spacing() * (T::one() + T::lit(1e-9));
    if let Some(k) = kink_nodes(f, opts.kink_tol)
        .into_iter()
        .find(|&i| grid.distance(&grid.coord(i), &x) <= reach)
    {
        let at = grid.coord(k);
        return usage(format!(
            "start point {:?} lies within 2h of a kink of the field at {:?}; pick a smooth start",
            &x[..model.dim],
            &at[..model.dim]
        ));
    }
    let start = ContactPoint::new(x, f.interpolate(&x), seed_gradient(model, f, &x));
    let trajectory = integrate(model, &start, horizon, dt_flow, direction)?;
    let max_drift = trajectory
        .samples
        .iter()
        .map(|(_, pt)| (pt.u - f.interpolate(&pt.x)).abs())
        .fold(T::zero(), T::max);
    let mut warnings = Vec::new();
    if max_drift > opts.drift_tol {
        warnings.push(format!(
            "calibrated curve drifts {max_drift:e} from the field (tolerance {:e})",
            opts.drift_tol
        ));
    }
    Ok(CalibratedCurve {
        trajectory,
        max_drift,
        warnings,
    })
}

/// Characteristic of `u_minus` from `x`, followed backward in time.
pub fn calibrated_backward<T: Real>(
    model: &HamiltonianModel<T>,
    u_minus: &GridField<T>,
    x: &Vector<T>,
    horizon: T,
    dt_flow: T,
    opts: &CalibrationOptions<T>,
) -> Result<CalibratedCurve<T>> {
    calibrated(model, u_minus, x, horizon, dt_flow, Direction::Backward, opts)
}

/// Characteristic of a forward solution from `x`, followed forward in time.
pub fn calibrated_forward<T: Real>(
    model: &HamiltonianModel<T>,
    v_plus: &GridField<T>,
    x: &Vector<T>,
    horizon: T,
    dt_flow: T,
    opts: &CalibrationOptions<T>,
) -> Result<CalibratedCurve<T>> {
    calibrated(model, v_plus, x, horizon, dt_flow, Direction::Forward, opts)
}

/// `max_k |u(x(t_k)) - u(x(t_0)) - int_{t_0}^{t_k} L(x, u(x), x') dt|` with
/// the signed trapezoid rule and `x' = H_p` along the trajectory.
pub fn calibration_defect<T: Real>(model: &HamiltonianModel<T>, u: &GridField<T>, traj: &Trajectory<T>) -> Result<T> {
    let lag = |pt: &ContactPoint<T>| -> Result<(T, T)> {
        let fu = u.interpolate(&pt.x);
        let v = model.grad_h(pt).dp;
        Ok((fu, model.eval_l(&pt.x, fu, &v)?))
    };
    let (u0, mut l_prev) = lag(&traj.samples[0].1)?;
    let mut t_prev = traj.samples[0].0;
    let mut integral = T::zero();
    let mut worst = T::zero();
    let half = T::lit(0.5);
    for (t, pt) in &traj.samples[1..] {
        let (fu, l) = lag(pt)?;
        integral += half * (*t - t_prev) * (l + l_prev);
        worst = worst.max((fu - u0 - integral).abs());
        l_prev = l;
        t_prev = *t;
    }
    Ok(worst)
}

/// Barrier values sampled along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierTrace<T> {
    pub values: Vec<(T, T)>,
    /// Largest increase between consecutive samples; nonpositive when the
    /// barrier decreases monotonically.
    pub max_increase: T,
}

pub fn barrier_along<T: Real>(barrier: &GridField<T>, traj: &Trajectory<T>) -> BarrierTrace<T> {
    let values: Vec<(T, T)> = traj
        .samples
        .iter()
        .map(|(t, pt)| (*t, barrier.interpolate(&pt.x)))
        .collect();
    let max_increase = values
        .windows(2)
        .map(|w| w[1].1 - w[0].1)
        .fold(T::neg_infinity(), T::max);
    BarrierTrace { values, max_increase }
}

/// Minimum tail length accepted by [`limit_set`].
pub const MIN_TAIL_SAMPLES: usize = 100;

fn tail<T: Real>(traj: &Trajectory<T>, tail_fraction: T) -> Result<&[(T, ContactPoint<T>)]> {
    if !(tail_fraction > T::zero() && tail_fraction <= T::one()) {
        return usage("tail fraction must lie in (0, 1]");
    }
    let n = traj.samples.len();
    let len = (tail_fraction * T::count(n)).floor().to_usize().unwrap_or(0).min(n);
    if len < MIN_TAIL_SAMPLES {
        return usage(format!(
            "the trajectory tail holds {len} samples; at least {MIN_TAIL_SAMPLES} are needed"
        ));
    }
    Ok(&traj.samples[n - len..])
}

/// Greedy clustering of the trajectory tail; returns cluster representatives.
pub fn limit_set<T: Real>(
    model: &HamiltonianModel<T>,
    traj: &Trajectory<T>,
    tail_fraction: T,
    cluster_radius: T,
) -> Result<Vec<ContactPoint<T>>> {
    let mut reps: Vec<ContactPoint<T>> = Vec::new();
    for (_, pt) in tail(traj, tail_fraction)? {
        if !reps.iter().any(|r| phase_distance(model, r, pt) <= cluster_radius) {
            reps.push(*pt);
        }
    }
    Ok(reps)
}

/// First return time of the tail to its first sample, if it leaves the
/// `2 radius` ball and comes back within `radius`.
pub fn return_time<T: Real>(
    model: &HamiltonianModel<T>,
    samples: &[(T, ContactPoint<T>)],
    radius: T,
) -> Option<T> {
    let (t0, z0) = samples.first()?;
    let d = |pt: &ContactPoint<T>| phase_distance(model, z0, pt);
    let mut left = false;
    for w in samples.windows(3) {
        if !left {
            left = d(&w[1].1) > T::lit(2.0) * radius;
            continue;
        }
        let (a, b, c) = (d(&w[0].1), d(&w[1].1), d(&w[2].1));
        if b <= radius && b <= a && b <= c {
            return Some((w[1].0 - *t0).abs());
        }
    }
    None
}

/// Period of the orbit traced by the trajectory tail.
pub fn estimate_period<T: Real>(
    model: &HamiltonianModel<T>,
    traj: &Trajectory<T>,
    tail_fraction: T,
    radius: T,
) -> Result<Option<T>> {
    Ok(return_time(model, tail(traj, tail_fraction)?, radius))
}

/// Smallest flow speed over a box of states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedAudit<T> {
    pub min_speed: T,
    pub at: ContactPoint<T>,
    pub samples: usize,
}

/// Scans `x_points^d * p_points^d * u_points` states with `|u| <= u_max` and `|p_k| <= p_max`.
pub fn min_speed<T: Real>(
    model: &HamiltonianModel<T>,
    x_points: usize,
    p_points: usize,
    u_points: usize,
    u_max: T,
    p_max: T,
) -> SpeedAudit<T> {
    let dim = model.dim;
    let lin = |lo: T, hi: T, n: usize, i: usize| {
        if n <= 1 {
            T::lit(0.5) * (lo + hi)
        } else {
            lo + (hi - lo) * T::count(i) / T::count(n - 1)
        }
    };
    let nx = if dim == 2 { x_points * x_points } else { x_points };
    let np = if dim == 2 { p_points * p_points } else { p_points };
    let xs: Vec<Vector<T>> = (0..nx)
        .map(|i| {
            let mut x = [T::zero(); 2];
            for (k, xk) in x.iter_mut().enumerate().take(dim) {
                let j = if k == 0 { i % x_points } else { i / x_points };
                *xk = model.circle_lengths[k] * T::count(j) / T::count(x_points);
            }
            x
        })
        .collect();
    let best = xs
        .par_iter()
        .map(|x| {
            let mut best = (T::infinity(), ContactPoint::new(*x, T::zero(), [T::zero(); 2]));
            for iu in 0..u_points {
                let u = lin(-u_max, u_max, u_points, iu);
                for ip in 0..np {
                    let mut p = [T::zero(); 2];
                    p[0] = lin(-p_max, p_max, p_points, ip % p_points);
                    if dim == 2 {
                        p[1] = lin(-p_max, p_max, p_points, ip / p_points);
                    }
                    let pt = ContactPoint::new(*x, u, p);
                    let s = speed(model, &pt);
                    if s < best.0 {
                        best = (s, pt);
                    }
                }
            }
            best
        })
        .reduce_with(|a, b| if b.0 < a.0 { b } else { a })
        .expect("nonempty box");
    SpeedAudit {
        min_speed: best.0,
        at: best.1,
        samples: nx * np * u_points,
    }
}
