//! Frozen-level Lax-Oleinik evolution, Mañé critical values and admissibility.
//!
//! Freezing the action argument at a level `a` gives the classical
//! Hamiltonian `H^a(x, p) = H(x, a, p)`. Its Lax-Oleinik evolution drifts
//! like `-c(H^a) t` plus a bounded term, so the critical value is read off
//! from the slope of the spatial mean.

use std::fmt;

use crate::action::{init_action, propagate_action};
use crate::error::{usage, Error, Result};
use crate::grid::{GridField, PeriodicGrid};
use crate::model::HamiltonianModel;
use crate::scalar::{Real, Vector};
use crate::semigroup::{step_count, step_with, ActionArgument, Direction, SchemeOptions};

/// Backward step with `L(x, a, v)` in place of `L(x, f(y), v)`.
pub fn frozen_backward_step<T: Real>(
    model: &HamiltonianModel<T>,
    a: T,
    f: &GridField<T>,
    dt: T,
    opts: &SchemeOptions<T>,
) -> Result<GridField<T>> {
    step_with(model, f, dt, opts, Direction::Backward, ActionArgument::Frozen(a))
}

/// Least-squares line through `(t, y)`: slope, intercept and RMS residual.
fn fit_line<T: Real>(pts: &[(T, T)]) -> (T, T, T) {
    let n = T::count(pts.len());
    let mt = pts.iter().map(|p| p.0).sum::<T>() / n;
    let my = pts.iter().map(|p| p.1).sum::<T>() / n;
    let mut stt = T::zero();
    let mut sty = T::zero();
    for &(t, y) in pts {
        stt += (t - mt) * (t - mt);
        sty += (t - mt) * (y - my);
    }
    let slope = if stt > T::zero() { sty / stt } else { T::zero() };
    let intercept = my - slope * mt;
    let rss = pts
        .iter()
        .map(|&(t, y)| {
            let r = y - intercept - slope * t;
            r * r
        })
        .sum::<T>();
    (slope, intercept, (rss / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalValue<T> {
    pub a: T,
    /// `c(H^a)`.
    pub c: T,
    /// RMS deviation of the trailing-half mean from its fitted line.
    pub fit_residual: T,
    /// `max - min` of `mean(f_t) + c t` over the trailing half.
    pub band: T,
    pub warning: Option<String>,
}

/// Fit residual above which the drift is reported as not linear.
pub const FIT_WARNING: f64 = 1e-3;

/// `c(H^a)` from the drift of the frozen evolution of `f = 0` over `[0, t_avg]`.
pub fn mane_critical_value<T: Real>(
    model: &HamiltonianModel<T>,
    grid: &PeriodicGrid<T>,
    a: T,
    dt: T,
    t_avg: T,
    opts: &SchemeOptions<T>,
) -> Result<CriticalValue<T>> {
    if t_avg < T::lit(5.0) {
        return usage(format!("averaging time must be at least 5, got {t_avg}"));
    }
    let steps = step_count(t_avg, dt);
    let mut f = GridField::constant(*grid, T::zero());
    let mut tail = Vec::with_capacity(steps / 2 + 1);
    for n in 1..=steps {
        f = frozen_backward_step(model, a, &f, dt, opts)?;
        if 2 * n >= steps {
            tail.push((dt * T::count(n), f.mean()));
        }
    }
    let (slope, _, fit_residual) = fit_line(&tail);
    let c = -slope;
    let shifted = tail.iter().map(|&(t, m)| m + c * t);
    let (lo, hi) = shifted.fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let warning = (fit_residual > T::lit(FIT_WARNING)).then(|| {
        format!("frozen evolution at a = {a} drifts nonlinearly (fit residual {fit_residual:e})")
    });
    Ok(CriticalValue {
        a,
        c,
        fit_residual,
        band: hi - lo,
        warning,
    })
}

/// Settings for [`find_admissible_level`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSearch<T> {
    pub a_lo: T,
    pub a_hi: T,
    pub tol_a: T,
    pub tol_c: T,
    pub dt: T,
    pub t_avg: T,
    pub max_iter: usize,
}

impl<T: Real> Default for LevelSearch<T> {
    fn default() -> Self {
        Self {
            a_lo: T::lit(-10.0),
            a_hi: T::lit(10.0),
            tol_a: T::lit(1e-3),
            tol_c: T::lit(1e-4),
            dt: T::lit(5e-3),
            t_avg: T::lit(10.0),
            max_iter: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleLevel<T> {
    /// `a*` with `c(H^{a*})` approximately zero.
    pub a: T,
    pub c: T,
    /// Every evaluated `(a, c(H^a))`, in evaluation order.
    pub samples: Vec<(T, T)>,
    /// Bracket after each bisection step.
    pub brackets: Vec<(T, T)>,
    pub warnings: Vec<String>,
}

/// Bisection for `c(H^a) = 0` on `[a_lo, a_hi]`.
pub fn find_admissible_level<T: Real>(
    model: &HamiltonianModel<T>,
    grid: &PeriodicGrid<T>,
    search: &LevelSearch<T>,
    opts: &SchemeOptions<T>,
) -> Result<AdmissibleLevel<T>> {
    if !(search.a_lo < search.a_hi) {
        return usage("admissibility bracket needs a_lo < a_hi");
    }
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut eval = |a: T| -> Result<T> {
        let cv = mane_critical_value(model, grid, a, search.dt, search.t_avg, opts)?;
        samples.push((a, cv.c));
        warnings.extend(cv.warning);
        Ok(cv.c)
    };
    let (mut lo, mut hi) = (search.a_lo, search.a_hi);
    let c_lo = eval(lo)?;
    let c_hi = eval(hi)?;
    if !(c_lo < T::zero() && c_hi > T::zero()) {
        return Err(Error::Bracket(format!(
            "c(H^a) does not change sign on [{lo}, {hi}]: c({lo}) = {c_lo}, c({hi}) = {c_hi}; \
             the family is not admissible in this range"
        )));
    }
    let mut brackets = vec![(lo, hi)];
    let half = T::lit(0.5);
    let mut mid = half * (lo + hi);
    let mut c_mid = T::nan();
    for _ in 0..search.max_iter {
        if hi - lo <= search.tol_a {
            break;
        }
        mid = half * (lo + hi);
        c_mid = eval(mid)?;
        if c_mid.abs() <= search.tol_c {
            break;
        }
        if c_mid < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        brackets.push((lo, hi));
    }
    if c_mid.is_nan() || (hi - lo <= search.tol_a && c_mid.abs() > search.tol_c) {
        mid = half * (lo + hi);
        c_mid = eval(mid)?;
    }
    Ok(AdmissibleLevel {
        a: mid,
        c: c_mid,
        samples,
        brackets,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundednessVerdict {
    /// Slices stay bounded and settle.
    Bounded,
    /// Slices drift linearly or exceed the blowup guard.
    Unbounded,
}

impl fmt::Display for BoundednessVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundednessVerdict::Bounded => "bounded",
            BoundednessVerdict::Unbounded => "unbounded",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundednessReport<T> {
    /// `(t, min, max)` of each slice.
    pub slices: Vec<(T, T, T)>,
    /// Slope of the slice mean over the trailing half.
    pub drift: T,
    pub final_slice: GridField<T>,
    pub verdict: BoundednessVerdict,
}

/// Drift per unit time below which slices count as settling.
pub const DRIFT_TOL: f64 = 1e-2;

/// Propagates `h_{x0,u0}` to `t_max` and classifies its long-time behavior.
pub fn boundedness_check<T: Real>(
    model: &HamiltonianModel<T>,
    grid: &PeriodicGrid<T>,
    x0: &Vector<T>,
    u0: T,
    delta: T,
    t_max: T,
    dt: T,
    opts: &SchemeOptions<T>,
) -> Result<BoundednessReport<T>> {
    if t_max <= delta {
        return usage("boundedness horizon must exceed the initialization time");
    }
    let mut slice = init_action(model, grid, x0, u0, delta)?;
    let mut slices = vec![(slice.t, slice.values.min(), slice.values.max())];
    let mut means = vec![(slice.t, slice.values.mean())];
    // record in blocks so the trailing-half fit has enough points
    let blocks = 100usize;
    let block = (t_max - delta) / T::count(blocks);
    let block_steps = step_count(block, dt).max(1);
    let block_time = dt * T::count(block_steps);
    let mut unbounded = false;
    while slice.t + block_time * T::lit(0.5) < t_max {
        match propagate_action(model, &slice, block_time, dt, opts) {
            Ok(next) => slice = next,
            Err(Error::Blowup { .. }) => {
                unbounded = true;
                break;
            }
            Err(e) => return Err(e),
        }
        slices.push((slice.t, slice.values.min(), slice.values.max()));
        means.push((slice.t, slice.values.mean()));
    }
    let tail = &means[means.len() / 2..];
    let drift = if tail.len() >= 2 { fit_line(tail).0 } else { T::zero() };
    if drift.abs() > T::lit(DRIFT_TOL) {
        unbounded = true;
    }
    Ok(BoundednessReport {
        slices,
        drift,
        final_slice: slice.values,
        verdict: if unbounded {
            BoundednessVerdict::Unbounded
        } else {
            BoundednessVerdict::Bounded
        },
    })
}
