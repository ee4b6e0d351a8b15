//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so every criterion is evaluated and reported even
//! when an earlier one fails. The process exits nonzero only if a criterion
//! could not be evaluated at all (an error or a panic), so numerical shortfalls
//! show up as FAIL lines rather than aborting the run.

use std::f64::consts::TAU;
use std::time::Instant;

use contact_wkam::action::{check_reversibility, forward_action, markov_defect, markov_two_stage};
use contact_wkam::aubry::{cell_report, flow_invariance, mather_estimate, projected_aubry};
use contact_wkam::critical::{find_admissible_level, mane_critical_value};
use contact_wkam::flow::{
    barrier_along, calibrated_forward, estimate_period, integrate, limit_set, min_speed, phase_distance,
};
use contact_wkam::semigroup::forward_step;
use contact_wkam::weakkam::{law_report, solve_backward, solve_forward};
use contact_wkam::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String)>;
type Criterion = Box<dyn Fn(&mut Cache) -> Outcome>;

struct Check {
    parts: Vec<String>,
    ok: bool,
}

impl Check {
    fn new() -> Self {
        Self {
            parts: Vec::new(),
            ok: true,
        }
    }

    /// Records `value <= bound`.
    fn le(&mut self, name: &str, value: f64, bound: f64) {
        let pass = value <= bound;
        self.ok &= pass;
        self.parts.push(format!("{name} {value:.3e} <= {bound:.1e} {}", mark(pass)));
    }

    /// Records `value >= bound`.
    fn ge(&mut self, name: &str, value: f64, bound: f64) {
        let pass = value >= bound;
        self.ok &= pass;
        self.parts.push(format!("{name} {value:.3e} >= {bound:.1e} {}", mark(pass)));
    }

    fn flag(&mut self, name: &str, pass: bool, note: impl AsRef<str>) {
        self.ok &= pass;
        self.parts.push(format!("{name} {} {}", note.as_ref(), mark(pass)));
    }

    fn finish(self) -> Outcome {
        Ok((self.ok, self.parts.join("; ")))
    }
}

fn mark(pass: bool) -> &'static str {
    if pass {
        "ok"
    } else {
        "MISS"
    }
}

fn u1(grid: &Grid) -> Field {
    GridField::from_fn(*grid, |x| {
        let d = x[0] - x[0].round();
        -0.5 * d * d
    })
}

fn manufactured_w(x: f64) -> f64 {
    0.3 * (TAU * x).cos()
}

/// A family solved once and shared by several criteria.
struct Solved {
    model: Model,
    grid: Grid,
    u_minus: Solution<f64>,
    u_plus: Solution<f64>,
    backward_secs: f64,
}

fn solve_family(model: Model, n: usize, dt: f64, f0: f64) -> Result<Solved> {
    let grid = Grid::for_model(&model, n)?;
    let opts = FixedPointOptions::default();
    let clock = Instant::now();
    let u_minus = solve_backward(&model, &GridField::constant(grid, f0), dt, &opts)?;
    let backward_secs = clock.elapsed().as_secs_f64();
    let u_plus = solve_forward(&model, &u_minus.field, dt, &opts)?;
    Ok(Solved {
        model,
        grid,
        u_minus,
        u_plus,
        backward_secs,
    })
}

#[derive(Default)]
struct Cache {
    quadratic: Option<Solved>,
    pendulum: Option<Solved>,
    manufactured: Option<Solved>,
}

impl Cache {
    fn quadratic(&mut self) -> Result<&Solved> {
        if self.quadratic.is_none() {
            self.quadratic = Some(solve_family(Model::quadratic_contact(1), 256, 1e-3, 1.0)?);
        }
        Ok(self.quadratic.as_ref().expect("just set"))
    }

    fn pendulum(&mut self) -> Result<&Solved> {
        if self.pendulum.is_none() {
            self.pendulum = Some(solve_family(Model::pendulum(2.0), 256, 5e-3, 0.0)?);
        }
        Ok(self.pendulum.as_ref().expect("just set"))
    }

    // |W'| <= 0.6 pi < 3, and v_max = 3 keeps v_max dt <= 4h at n = 512, dt = 2e-3
    fn manufactured(&mut self) -> Result<&Solved> {
        if self.manufactured.is_none() {
            let model = Model::manufactured(0.3, 1).with_v_max(3.0);
            self.manufactured = Some(solve_family(model, 512, 2e-3, 0.0)?);
        }
        Ok(self.manufactured.as_ref().expect("just set"))
    }
}

fn sup_error_to_w(f: &Field) -> f64 {
    (0..f.grid().len())
        .map(|i| (f.value(i) - manufactured_w(f.grid().coord(i)[0])).abs())
        .fold(0.0, f64::max)
}

fn criterion_1(cache: &mut Cache) -> Outcome {
    let mut c = Check::new();
    let coarse = cache.manufactured()?;
    let e1 = sup_error_to_w(&coarse.u_minus.field);
    c.flag("converged", coarse.u_minus.status == SolveStatus::Converged, format!("t={:.2}", coarse.u_minus.t));
    c.le("sup|u- - W| n=512", e1, 2e-2);
    c.le("runtime s", coarse.backward_secs, 120.0);

    let model = Model::manufactured(0.3, 1).with_v_max(3.0);
    let grid = Grid::for_model(&model, 1024)?;
    let fine = solve_backward(&model, &GridField::constant(grid, 0.0), 1e-3, &FixedPointOptions::default())?;
    let e2 = sup_error_to_w(&fine.field);
    c.le("sup|u- - W| n=1024", e2, 2e-2);
    c.ge("refinement ratio", e1 / e2, 1.5);
    c.finish()
}

fn criterion_2(cache: &mut Cache) -> Outcome {
    let mut c = Check::new();
    let q = cache.quadratic()?;
    c.le("sup|u-|", q.u_minus.field.sup_norm(), 5e-3);
    c.le("sup|u+|", q.u_plus.field.sup_norm(), 5e-3);
    let u1 = u1(&q.grid);
    let stepped = forward_step(&q.model, &u1, 1e-3, &Options::default())?;
    c.le("sup|T+ u1 - u1|", stepped.sup_distance(&u1)?, 5e-3);
    c.finish()
}

fn criterion_3() -> Outcome {
    let mut c = Check::new();
    let model = Model::quadratic_contact(1);
    let grid = Grid::for_model(&model, 4096)?;
    let h = grid.spacing(0);
    let u_minus = solve_backward(&model, &GridField::constant(grid, 0.0), 1e-4, &FixedPointOptions::default())?;
    let v_plus = u1(&grid);
    let b = aubry::barrier(&u_minus.field, &v_plus, 1e-6)?;

    let curve = calibrated_forward(&model, &v_plus, &[0.3, 0.0], 5.0, 1e-3, &Default::default())?;
    let x_err = curve
        .trajectory
        .samples
        .iter()
        .map(|(t, pt)| (pt.x[0] - 0.3 * (-t).exp()).abs())
        .fold(0.0, f64::max);
    c.le("max|x(t) - 0.3e^-t|", x_err, 1e-4);

    let trace = barrier_along(&b, &curve.trajectory);
    c.flag(
        "B strictly decreasing",
        trace.max_increase < 0.0,
        format!("max increment {:.3e}", trace.max_increase),
    );
    let rel = trace
        .values
        .iter()
        .map(|(t, v)| {
            let exact = 0.045 * (-2.0 * t).exp();
            (v - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    c.le("relative B deviation", rel, 1e-2);

    let long = calibrated_forward(&model, &v_plus, &[0.3, 0.0], 30.0, 1e-3, &Default::default())?;
    let omega = limit_set(&model, &long.trajectory, 0.1, h)?;
    let origin = ContactPoint::new([0.0, 0.0], 0.0, [0.0, 0.0]);
    let far = omega.iter().map(|z| phase_distance(&model, z, &origin)).fold(0.0, f64::max);
    c.le("omega-limit distance to origin", far, 3.0 * h);
    c.finish()
}

fn criterion_4(cache: &mut Cache) -> Outcome {
    let mut c = Check::new();
    let p = cache.pendulum()?;
    let model = &p.model;
    let audit = min_speed(model, 128, 128, 33, 3.0, 8.0);
    c.flag("no rest points", audit.min_speed > 0.0, format!("min speed {:.3e}", audit.min_speed));

    let start = ContactPoint::new([0.0, 0.0], 0.0, [0.0, 0.0]);
    let run = integrate(model, &start, 200.0, 1e-3, Direction::Forward)?;
    let period = estimate_period(model, &run, 0.25, 1e-3)?;
    c.flag(
        "tail returns",
        period.is_some(),
        format!("period {:.6}", period.unwrap_or(f64::NAN)),
    );
    if let Some(period) = period {
        // compare the last period with the one before it
        let shift = (period / run.dt_flow).round() as usize;
        let n = run.samples.len();
        let gap = (n - shift..n)
            .map(|i| phase_distance(model, &run.samples[i].1, &run.samples[i - shift].1))
            .fold(0.0, f64::max);
        c.le("orbit closure gap", gap, 1e-2);
    }
    let tail_h = run.samples[run.samples.len() * 3 / 4..]
        .iter()
        .map(|(_, z)| model.eval_h(z).abs())
        .fold(0.0, f64::max);
    c.le("tail |H|", tail_h, 1e-3);

    let est = projected_aubry(model, &p.u_minus.field, &p.u_plus.field, &AubryOptions::default())?;
    let mather = mather_estimate(model, &est, &MatherOptions::default())?;
    c.flag(
        "recurrent set is one periodic orbit",
        matches!(mather.class, RecurrenceClass::PeriodicOrbit { .. }),
        format!("{} of {} lift points recurrent, class {}", mather.points.len(), est.lift.len(), mather.class),
    );
    c.flag("no fixed points", mather.fixed.iter().all(|f| !f), "");
    c.finish()
}

fn criterion_5() -> Outcome {
    let mut c = Check::new();
    // u + |p|^2/2 + cos x: frozen at a this is p^2/2 + cos x + a
    let model = Model::discounted_mechanical(1.0, 1.0, 0.0, 1);
    let grid = Grid::for_model(&model, 128)?;
    let opts = Options::default();
    let cv = mane_critical_value(&model, &grid, 0.0, 5e-3, 10.0, &opts)?;
    c.le("|c(H^0) - 1|", (cv.c - 1.0).abs(), 2e-2);
    let level = find_admissible_level(&model, &grid, &LevelSearch::default(), &opts)?;
    c.le("|a* + 1|", (level.a + 1.0).abs(), 2e-2);
    c.finish()
}

fn criterion_6() -> Outcome {
    let mut c = Check::new();
    let opts = LawOptions::default();
    for (name, model) in [("quadratic", Model::quadratic_contact(1)), ("pendulum", Model::pendulum(2.0))] {
        let grid = Grid::for_model(&model, 128)?;
        let report = law_report(&model, &grid, &opts)?;
        for check in &report.checks {
            c.flag(
                &format!("{name}/{}", check.name),
                check.passed,
                format!("violations {} worst {:.4e}", check.violations, check.worst),
            );
        }
    }
    c.finish()
}

fn criterion_7() -> Outcome {
    let mut c = Check::new();
    let model = Model::quadratic_contact(1);
    let grid = Grid::for_model(&model, 256)?;
    let opts = Options::default();
    let (dt, delta) = (1e-3, action::DEFAULT_DELTA);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_rev = 0.0f64;
    let mut worst_split = 0.0f64;
    let mut worst_markov = 0.0f64;
    for _ in 0..10 {
        let x0 = [rng.gen_range(0.0..1.0), 0.0];
        let u0 = rng.gen_range(-1.0..1.0);
        let x = [rng.gen_range(0.0..1.0), 0.0];
        let t: f64 = rng.gen_range(0.5..1.5);
        let t = (t / dt).round() * dt;
        worst_rev = worst_rev.max(check_reversibility(&model, &grid, &x0, u0, &x, t, dt, delta, &opts)?);

        let split = |t1: f64| -> Result<Field> {
            let t1 = (t1 / dt).round() * dt;
            let first = forward_action(&model, &grid, &x0, u0, t1, dt, delta, &opts)?;
            markov_two_stage(&model, &first, t - t1, dt, delta, 32, &opts)
        };
        let a = split(t / 3.0)?;
        let b = split(2.0 * t / 3.0)?;
        worst_split = worst_split.max(a.sup_distance(&b)?);
        let m = markov_defect(&model, &grid, &x0, u0, (t / 2.0 / dt).round() * dt, t - (t / 2.0 / dt).round() * dt, dt, delta, 32, &opts)?;
        worst_markov = worst_markov.max(m.defect);
    }
    c.le("reversibility defect", worst_rev, 1e-2);
    c.le("Markov split independence", worst_split, 2e-2);
    c.le("Markov defect vs direct", worst_markov, 2e-2);

    let a = forward_action(&model, &grid, &[0.1, 0.0], -0.5, 10.0, dt, delta, &opts)?;
    let b = forward_action(&model, &grid, &[0.6, 0.0], 0.8, 10.0, dt, delta, &opts)?;
    c.le("base-point independence t=10", a.values.sup_distance(&b.values)?, 1e-2);
    c.finish()
}

fn aubry_checks(c: &mut Check, name: &str, s: &Solved) -> Result<()> {
    let h = s.grid.min_spacing();
    let raw = s.u_minus.field.difference(&s.u_plus.field)?.min();
    c.ge(&format!("{name}: min B"), raw, -1e-6);
    let est = projected_aubry(&s.model, &s.u_minus.field, &s.u_plus.field, &AubryOptions::default())?;
    let cells = cell_report(&s.model, &est, &s.u_minus.field, &s.u_plus.field, 1e-2);
    c.le(&format!("{name}: cells {} |Du+ - Du-|", est.cells.len()), cells.max_grad_gap, 10.0 * h);
    c.le(&format!("{name}: lift |H|"), cells.max_lift_residual, 1e-2);
    let inv = flow_invariance(&s.model, &est, 1.0, 1e-3, 3.0 * h);
    c.le(
        &format!("{name}: flow distance from lift ({} escaped)", inv.escaped),
        if inv.escaped > 0 { f64::INFINITY } else { inv.worst_distance },
        3.0 * h,
    );
    Ok(())
}

fn criterion_8(cache: &mut Cache) -> Outcome {
    let mut c = Check::new();
    aubry_checks(&mut c, "quadratic", cache.quadratic()?)?;
    aubry_checks(&mut c, "pendulum", cache.pendulum()?)?;
    aubry_checks(&mut c, "manufactured", cache.manufactured()?)?;
    c.finish()
}

fn main() {
    // cargo passes harness flags such as --nocapture; they are not needed here
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut cache = Cache::default();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 manufactured solution", Box::new(criterion_1)),
        ("2 discounted example fixed points", Box::new(criterion_2)),
        ("3 barrier dynamics", Box::new(|_: &mut Cache| criterion_3())),
        ("4 dissipative pendulum", Box::new(criterion_4)),
        ("5 admissibility", Box::new(|_: &mut Cache| criterion_5())),
        ("6 semigroup laws", Box::new(|_: &mut Cache| criterion_6())),
        ("7 action calculus", Box::new(|_: &mut Cache| criterion_7())),
        ("8 Aubry structure", Box::new(criterion_8)),
    ];
    let mut passed = 0;
    let mut errored = 0;
    let total = criteria.len();
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.starts_with(f.as_str())) {
            continue;
        }
        let clock = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut cache)));
        let secs = clock.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Ok(Ok((true, d))) => {
                passed += 1;
                ("PASS", d)
            }
            Ok(Ok((false, d))) => ("FAIL", d),
            Ok(Err(e)) => {
                errored += 1;
                ("FAIL", format!("error: {e}"))
            }
            Err(_) => {
                errored += 1;
                ("FAIL", "panicked".to_string())
            }
        };
        println!("criterion {name}: {status} [{secs:.1}s] {detail}");
    }
    println!("acceptance: {passed}/{total} criteria passed");
    if errored > 0 {
        std::process::exit(1);
    }
}
