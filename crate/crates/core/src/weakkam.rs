//! Backward and forward weak KAM solutions, Hamilton-Jacobi residuals and
//! randomized checks of the semigroup laws.

use std::collections::VecDeque;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{usage, Error, Result};
use crate::grid::{GradientMode, GridField, PeriodicGrid};
use crate::model::HamiltonianModel;
use crate::sample::smooth_random_field;
use crate::scalar::{Real, Vector};
use crate::semigroup::{evolve, step, Direction, HistoryRecord, SchemeOptions};

/// Stopping rule for fixed-point iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions<T> {
    /// Threshold on the sup change per unit time.
    pub tol_fix: T,
    pub t_max: T,
    /// Steps in the sliding window used to measure the change rate.
    pub window: usize,
    pub scheme: SchemeOptions<T>,
}

impl<T: Real> Default for FixedPointOptions<T> {
    fn default() -> Self {
        Self {
            tol_fix: T::lit(1e-6),
            t_max: T::lit(100.0),
            window: 50,
            scheme: SchemeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// The change rate fell below `tol_fix`.
    Converged,
    /// The forward iteration stalled and then started to drift away; the
    /// field with the smallest change rate is returned.
    Plateau,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub field: GridField<T>,
    pub status: SolveStatus,
    /// Time at which the returned field was reached.
    pub t: T,
    pub steps: usize,
    /// Change rate of the returned field.
    pub rate: T,
    pub history: Vec<HistoryRecord<T>>,
    /// Largest amount by which an unclamped forward step exceeded the
    /// previous iterate. Zero for backward solves.
    pub max_clamp: T,
}

/// Sliding window of recent iterates.
struct Window<T> {
    fields: VecDeque<GridField<T>>,
    len: usize,
}

impl<T: Real> Window<T> {
    fn new(first: &GridField<T>, len: usize) -> Self {
        let mut fields = VecDeque::with_capacity(len + 1);
        fields.push_back(first.clone());
        Self { fields, len }
    }

    /// Pushes a new iterate; returns the change rate once the window is full.
    fn push(&mut self, f: &GridField<T>, dt: T) -> Result<Option<T>> {
        self.fields.push_back(f.clone());
        if self.fields.len() > self.len + 1 {
            self.fields.pop_front();
        }
        if self.fields.len() < self.len + 1 {
            return Ok(None);
        }
        let d = f.sup_distance(&self.fields[0])?;
        Ok(Some(d / (dt * T::count(self.len))))
    }
}

fn check_fixed_point_options<T: Real>(opts: &FixedPointOptions<T>) -> Result<()> {
    if opts.window == 0 {
        return usage("convergence window must hold at least one step");
    }
    if !(opts.tol_fix > T::zero()) || !(opts.t_max > T::zero()) {
        return usage("tol_fix and t_max must be positive");
    }
    Ok(())
}

fn record<T: Real>(n: usize, t: T, prev: &GridField<T>, next: &GridField<T>) -> Result<HistoryRecord<T>> {
    Ok(HistoryRecord {
        step: n,
        t,
        sup_change: next.sup_distance(prev)?,
        min: next.min(),
        max: next.max(),
    })
}

fn guard<T: Real>(f: &GridField<T>, n: usize, t: T, opts: &SchemeOptions<T>) -> Result<()> {
    let sup = f.sup_norm();
    if sup > opts.blowup_guard {
        return Err(Error::Blowup {
            step: n,
            t: t.to_f64_lossy(),
            sup_norm: sup.to_f64_lossy(),
            guard: opts.blowup_guard.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Evolves backward until the change rate drops below `tol_fix`.
pub fn solve_backward<T: Real>(
    model: &HamiltonianModel<T>,
    f0: &GridField<T>,
    dt: T,
    opts: &FixedPointOptions<T>,
) -> Result<Solution<T>> {
    check_fixed_point_options(opts)?;
    let mut f = f0.clone();
    let mut window = Window::new(&f, opts.window);
    let mut history = Vec::new();
    let mut n = 0usize;
    let mut rate = T::infinity();
    loop {
        let t = dt * T::count(n);
        if t >= opts.t_max {
            return Err(Error::Timeout {
                t: t.to_f64_lossy(),
                rate: rate.to_f64_lossy(),
                tol: opts.tol_fix.to_f64_lossy(),
            });
        }
        let next = step(model, &f, dt, &opts.scheme, Direction::Backward)?;
        n += 1;
        let t = dt * T::count(n);
        guard(&next, n, t, &opts.scheme)?;
        history.push(record(n, t, &f, &next)?);
        f = next;
        if let Some(r) = window.push(&f, dt)? {
            rate = r;
            if r < opts.tol_fix {
                return Ok(Solution {
                    field: f,
                    status: SolveStatus::Converged,
                    t,
                    steps: n,
                    rate,
                    history,
                    max_clamp: T::zero(),
                });
            }
        }
    }
}

/// Evolves `u_minus` forward to the maximal forward solution.
///
/// Iterates are clamped from above by their predecessor, which keeps the
/// sequence nonincreasing as it is in exact arithmetic. The backward solution
/// is an unstable fixed point of the forward semigroup, so scheme defects can
/// make the iterates drift downward without bound after they have settled. A
/// rate that climbs to ten times its running minimum ends the run; the field
/// with the minimal rate is then returned with status `Plateau`.
pub fn solve_forward<T: Real>(
    model: &HamiltonianModel<T>,
    u_minus: &GridField<T>,
    dt: T,
    opts: &FixedPointOptions<T>,
) -> Result<Solution<T>> {
    check_fixed_point_options(opts)?;
    let mut f = u_minus.clone();
    let mut window = Window::new(&f, opts.window);
    let mut history = Vec::new();
    let mut max_clamp = T::zero();
    let mut best: Option<(T, GridField<T>, T, usize)> = None;
    let mut n = 0usize;
    loop {
        let t = dt * T::count(n);
        if t >= opts.t_max {
            let best_rate = best.as_ref().map(|b| b.0).unwrap_or(T::infinity());
            if let Some((rate, field, tb, nb)) = best {
                if rate <= opts.tol_fix * T::lit(10.0) {
                    history.truncate(nb);
                    return Ok(Solution {
                        field,
                        status: SolveStatus::Plateau,
                        t: tb,
                        steps: nb,
                        rate,
                        history,
                        max_clamp,
                    });
                }
            }
            return Err(Error::Timeout {
                t: t.to_f64_lossy(),
                rate: best_rate.to_f64_lossy(),
                tol: opts.tol_fix.to_f64_lossy(),
            });
        }
        let raw = step(model, &f, dt, &opts.scheme, Direction::Forward)?;
        let mut values = raw.into_values();
        for (v, prev) in values.iter_mut().zip(f.values()) {
            if *v > *prev {
                max_clamp = max_clamp.max(*v - *prev);
                *v = *prev;
            }
        }
        let next = GridField::new(*f.grid(), values)?;
        n += 1;
        let t = dt * T::count(n);
        guard(&next, n, t, &opts.scheme)?;
        history.push(record(n, t, &f, &next)?);
        f = next;
        let Some(rate) = window.push(&f, dt)? else {
            continue;
        };
        if rate < opts.tol_fix {
            return Ok(Solution {
                field: f,
                status: SolveStatus::Converged,
                t,
                steps: n,
                rate,
                history,
                max_clamp,
            });
        }
        match &best {
            Some((r, ..)) if rate >= *r => {
                if rate > *r * T::lit(10.0) {
                    let (rate, field, tb, nb) = best.take().expect("checked above");
                    history.truncate(nb);
                    return Ok(Solution {
                        field,
                        status: SolveStatus::Plateau,
                        t: tb,
                        steps: nb,
                        rate,
                        history,
                        max_clamp,
                    });
                }
            }
            _ => best = Some((rate, f.clone(), t, n)),
        }
    }
}

/// Stencil combination per axis minimizing `|H(x, u, p)|` at a node.
pub fn kink_tolerant_gradient<T: Real>(model: &HamiltonianModel<T>, u: &GridField<T>, idx: usize) -> Vector<T> {
    let x = u.grid().coord(idx);
    let value = u.value(idx);
    let dim = model.dim;
    let combos: Vec<[GradientMode; 2]> = if dim == 1 {
        GradientMode::ALL.iter().map(|&m| [m, GradientMode::Central]).collect()
    } else {
        GradientMode::ALL
            .iter()
            .flat_map(|&a| GradientMode::ALL.iter().map(move |&b| [a, b]))
            .collect()
    };
    let mut best = (T::infinity(), [T::zero(); 2]);
    for modes in combos {
        let mut p = [T::zero(); 2];
        for k in 0..dim {
            p[k] = u.axis_derivative(idx, k, modes[k]);
        }
        let h = model.eval_h(&model.point(x, value, p)).abs();
        if h < best.0 {
            best = (h, p);
        }
    }
    best.1
}

/// `|H(x, u, Du)|` per node with the kink-tolerant gradient.
pub fn hj_residual<T: Real>(model: &HamiltonianModel<T>, u: &GridField<T>) -> GridField<T> {
    let grid = *u.grid();
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = kink_tolerant_gradient(model, u, i);
            model.eval_h(&model.point(grid.coord(i), u.value(i), p)).abs()
        })
        .collect();
    GridField::from_values_unchecked(grid, values)
}

/// `|H(x, u, Du)|` per node with a single stencil.
pub fn hj_residual_with_mode<T: Real>(model: &HamiltonianModel<T>, u: &GridField<T>, mode: GradientMode) -> GridField<T> {
    let grid = *u.grid();
    GridField::from_values_unchecked(
        grid,
        (0..grid.len())
            .map(|i| model.eval_h(&model.point(grid.coord(i), u.value(i), u.gradient(i, mode))).abs())
            .collect(),
    )
}

/// One line of a [`LawReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct LawCheck {
    pub name: &'static str,
    pub violations: usize,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    /// Value the check compares `worst` against.
    pub bound: f64,
    pub passed: bool,
}

impl fmt::Display for LawCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<24} {}  violations {}  worst {:.6e}  bound {:.6e}",
            self.name,
            if self.passed { "pass" } else { "FAIL" },
            self.violations,
            self.worst,
            self.bound
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LawReport {
    pub trials: usize,
    pub checks: Vec<LawCheck>,
}

impl LawReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&LawCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for LawReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} trials", self.trials)?;
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Settings for [`law_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawOptions<T> {
    pub trials: usize,
    pub dt: T,
    pub seed: u64,
    /// Horizon of the strict contraction check.
    pub contraction_time: T,
    /// Extra slack on the forward expansion bound.
    pub expansion_slack: T,
    pub scheme: SchemeOptions<T>,
}

impl<T: Real> Default for LawOptions<T> {
    fn default() -> Self {
        Self {
            trials: 20,
            dt: T::lit(2e-3),
            seed: 42,
            contraction_time: T::one(),
            expansion_slack: T::lit(1e-6),
            scheme: SchemeOptions::default(),
        }
    }
}

/// Randomized checks of comparison, non-expansiveness, the forward expansion
/// bound, continuity at the origin and strict contraction.
pub fn law_report<T: Real>(
    model: &HamiltonianModel<T>,
    grid: &PeriodicGrid<T>,
    opts: &LawOptions<T>,
) -> Result<LawReport> {
    if opts.trials == 0 {
        return usage("law report needs at least one trial");
    }
    let dt = opts.dt;
    let scheme = &opts.scheme;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let roundoff = T::lit(1e-12);

    let mut comparison = (0usize, f64::NEG_INFINITY);
    let mut nonexp = (0usize, f64::NEG_INFINITY);
    let mut expansion = (0usize, f64::NEG_INFINITY);
    let mut origin = (0usize, 0.0f64);
    let mut contraction = (0usize, f64::NEG_INFINITY);
    let growth = (model.lambda_bound * dt).exp() + opts.expansion_slack;

    for _ in 0..opts.trials {
        let f = smooth_random_field(grid, &mut rng, T::one());
        let bump = smooth_random_field(grid, &mut rng, T::lit(0.3));
        let g = GridField::new(
            *grid,
            f.values()
                .iter()
                .zip(bump.values())
                .map(|(a, b)| *a + b.abs() + T::lit(0.01))
                .collect(),
        )?;
        let other = smooth_random_field(grid, &mut rng, T::one());

        for dir in [Direction::Backward, Direction::Forward] {
            let sf = step(model, &f, dt, scheme, dir)?;
            let sg = step(model, &g, dt, scheme, dir)?;
            for (a, b) in sf.values().iter().zip(sg.values()) {
                let excess = (*a - *b).to_f64_lossy();
                comparison.1 = comparison.1.max(excess);
                if excess > 0.0 {
                    comparison.0 += 1;
                }
            }
        }

        let d0 = f.sup_distance(&other)?;
        let bf = step(model, &f, dt, scheme, Direction::Backward)?;
        let bo = step(model, &other, dt, scheme, Direction::Backward)?;
        let ratio = bf.sup_distance(&bo)? / d0;
        nonexp.1 = nonexp.1.max(ratio.to_f64_lossy());
        if ratio > T::one() + roundoff {
            nonexp.0 += 1;
        }

        let ff = step(model, &f, dt, scheme, Direction::Forward)?;
        let fo = step(model, &other, dt, scheme, Direction::Forward)?;
        let ratio = ff.sup_distance(&fo)? / d0;
        expansion.1 = expansion.1.max(ratio.to_f64_lossy());
        if ratio > growth {
            expansion.0 += 1;
        }

        // T_0 is the identity and T_s f -> f as s -> 0
        for dir in [Direction::Backward, Direction::Forward] {
            let same = evolve(model, &f, dir, T::zero(), dt, scheme, |_, _, _| {})?;
            if same.field != f {
                origin.0 += 1;
            }
            let full = step(model, &f, dt, scheme, dir)?.sup_distance(&f)?;
            let half = step(model, &f, dt * T::lit(0.5), scheme, dir)?.sup_distance(&f)?;
            origin.1 = origin.1.max(half.to_f64_lossy());
            if half > full + roundoff {
                origin.0 += 1;
            }
        }

        let ef = evolve(model, &f, Direction::Backward, opts.contraction_time, dt, scheme, |_, _, _| {})?;
        let eo = evolve(model, &other, Direction::Backward, opts.contraction_time, dt, scheme, |_, _, _| {})?;
        let ratio = (ef.field.sup_distance(&eo.field)? / d0).to_f64_lossy();
        contraction.1 = contraction.1.max(ratio);
        if ratio >= 1.0 {
            contraction.0 += 1;
        }
    }

    let check = |name, (violations, worst): (usize, f64), bound: f64| LawCheck {
        name,
        violations,
        worst,
        bound,
        passed: violations == 0,
    };
    Ok(LawReport {
        trials: opts.trials,
        checks: vec![
            check("comparison", comparison, 0.0),
            check("backward_nonexpansive", nonexp, 1.0),
            check("forward_expansion", expansion, growth.to_f64_lossy()),
            check("origin_continuity", origin, f64::NAN),
            check("strict_contraction", contraction, 1.0),
        ],
    })
}
