//! Subcommand dispatch and CSV emission.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use contact_wkam::action::{
    backward_action, check_reversibility, forward_action, propagate_action,
};
use contact_wkam::aubry::{
    cell_report, flow_invariance, graph_check, mather_estimate, projected_aubry,
};
use contact_wkam::critical::{find_admissible_level, mane_critical_value};
use contact_wkam::flow::{calibrated_backward, calibrated_forward, integrate};
use contact_wkam::model::audit_assumptions;
use contact_wkam::semigroup::write_history_csv;
use contact_wkam::weakkam::{hj_residual, law_report, solve_backward, solve_forward};
use contact_wkam::{fmt_real, Direction, Grid, GridField, LawOptions, Solution, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ActionDirection, ConfigError, FlowMode, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Audit,
    Solve,
    Action,
    Aubry,
    Flow,
    Admissible,
    Verify,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Core(contact_wkam::Error),
    Io {
        path: PathBuf,
        source: io::Error,
    },
    /// A checked property did not hold; the report has been written.
    Property(String),
}

impl RunError {
    /// 1 usage, 2 numerical failure, 3 failed property check.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io { .. } => 1,
            RunError::Core(e) if e.is_usage() => 1,
            RunError::Core(_) => 2,
            RunError::Property(_) => 3,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "configuration error: {e}"),
            RunError::Core(e) => e.fmt(f),
            RunError::Io { path, source } => write!(f, "cannot write {}: {source}", path.display()),
            RunError::Property(s) => write!(f, "property check failed: {s}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<contact_wkam::Error> for RunError {
    fn from(e: contact_wkam::Error) -> Self {
        RunError::Core(e)
    }
}

pub type Result<T> = std::result::Result<T, RunError>;

/// Output directory plus the messages printed for the user.
struct Output<'a> {
    dir: &'a Path,
    log: &'a mut dyn Write,
}

impl Output<'_> {
    fn write(
        &self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    ) -> Result<()> {
        let path = self.dir.join(name);
        let io_err = |source| RunError::Io {
            path: path.clone(),
            source,
        };
        let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
        body(&mut w).and_then(|_| w.flush()).map_err(io_err)
    }

    fn say(&mut self, line: impl AsRef<str>) {
        // a closed stdout is not worth aborting a finished computation for
        let _ = writeln!(self.log, "{}", line.as_ref());
    }
}

/// Runs one subcommand, writing files under the configured output directory
/// and a human-readable summary to `log`.
pub fn run(command: Command, cfg: &RunConfig, log: &mut dyn Write) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).map_err(|source| RunError::Io {
        path: cfg.output_dir.clone(),
        source,
    })?;
    let mut out = Output {
        dir: &cfg.output_dir,
        log,
    };
    match command {
        Command::Audit => audit(cfg, &mut out),
        Command::Solve => solve(cfg, &mut out),
        Command::Action => action(cfg, &mut out),
        Command::Aubry => aubry(cfg, &mut out),
        Command::Flow => flow(cfg, &mut out),
        Command::Admissible => admissible(cfg, &mut out),
        Command::Verify => verify(cfg, &mut out),
    }
}

fn grid(cfg: &RunConfig) -> Result<Grid> {
    Ok(Grid::for_model(&cfg.model, cfg.n)?)
}

fn describe(sol: &Solution<f64>) -> String {
    format!(
        "{:?} at t = {:.4} after {} steps (rate {:.3e})",
        sol.status, sol.t, sol.steps, sol.rate
    )
}

fn solve_pair(cfg: &RunConfig, out: &mut Output<'_>) -> Result<(Solution<f64>, Solution<f64>)> {
    let u_minus = solve_backward(
        &cfg.model,
        &GridField::constant(grid(cfg)?, cfg.solve_f0),
        cfg.dt,
        &cfg.fixed_point,
    )?;
    out.say(format!("u-: {}", describe(&u_minus)));
    let u_plus = solve_forward(&cfg.model, &u_minus.field, cfg.dt, &cfg.fixed_point)?;
    out.say(format!(
        "u+: {}, largest clamp {:.3e}",
        describe(&u_plus),
        u_plus.max_clamp
    ));
    Ok((u_minus, u_plus))
}

fn audit(cfg: &RunConfig, out: &mut Output<'_>) -> Result<()> {
    let report = audit_assumptions(&cfg.model, &cfg.audit);
    let text = format!("family: {}\n{report}\n", cfg.model.family.tag());
    out.write("audit.txt", |w| w.write_all(text.as_bytes()))?;
    out.say(text.trim_end());
    if report.passed() {
        Ok(())
    } else {
        Err(RunError::Property("assumption audit".into()))
    }
}

fn solve(cfg: &RunConfig, out: &mut Output<'_>) -> Result<()> {
    let (u_minus, u_plus) = solve_pair(cfg, out)?;
    out.write("u_minus.csv", |w| u_minus.field.write_csv(w))?;
    out.write("u_plus.csv", |w| u_plus.field.write_csv(w))?;
    let residual = hj_residual(&cfg.model, &u_minus.field);
    out.write("residual.csv", |w| residual.write_csv(w))?;
    out.write("convergence_backward.csv", |w| {
        write_history_csv(&u_minus.history, w)
    })?;
    out.write("convergence_forward.csv", |w| {
        write_history_csv(&u_plus.history, w)
    })?;
    out.say(format!("sup |H(x, u-, Du-)|: {:.3e}", residual.max()));
    if cfg.model.manufactured_w(&[0.0, 0.0]).is_some() {
        let g = u_minus.field.grid();
        let err = (0..g.len())
            .map(|i| {
                let w = cfg
                    .model
                    .manufactured_w(&g.coord(i))
                    .expect("manufactured family")
                    .0;
                (u_minus.field.value(i) - w).abs()
            })
            .fold(0.0, f64::max);
        out.say(format!("sup |u- - W|: {err:.3e}"));
    }
    Ok(())
}

fn action(cfg: &RunConfig, out: &mut Output<'_>) -> Result<()> {
    let a = &cfg.action;
    let g = grid(cfg)?;
    let first = a.times[0];
    let mut slice = match a.kind {
        ActionDirection::Forward => forward_action(
            &cfg.model,
            &g,
            &a.x0,
            a.u0,
            first,
            cfg.dt,
            a.delta,
            cfg.scheme(),
        )?,
        ActionDirection::Backward => backward_action(
            &cfg.model,
            &g,
            &a.x0,
            a.u0,
            first,
            cfg.dt,
            a.delta,
            cfg.scheme(),
        )?,
    };
    let mut slices = vec![slice.clone()];
    for &t in &a.times[1..] {
        slice = propagate_action(&cfg.model, &slice, t - slice.t, cfg.dt, cfg.scheme())?;
        slices.push(slice.clone());
    }
    let dim = cfg.model.dim;
    out.write("action.csv", |w| {
        writeln!(w, "{}", if dim == 1 { "t,x1,h" } else { "t,x1,x2,h" })?;
        for s in &slices {
            for i in 0..g.len() {
                write!(w, "{}", fmt_real(s.t))?;
                for xk in &g.coord(i)[..dim] {
                    write!(w, ",{}", fmt_real(*xk))?;
                }
                writeln!(w, ",{}", fmt_real(s.values.value(i)))?;
            }
        }
        Ok(())
    })?;
    for s in &slices {
        out.say(format!(
            "t = {:.4}: min {:.6e} max {:.6e}",
            s.t,
            s.values.min(),
            s.values.max()
        ));
    }
    Ok(())
}

fn aubry(cfg: &RunConfig, out: &mut Output<'_>) -> Result<()> {
    let (u_minus, u_plus) = solve_pair(cfg, out)?;
    let (um, up) = (&u_minus.field, &u_plus.field);
    let est = projected_aubry(&cfg.model, um, up, &cfg.aubry.options)?;
    out.write("barrier.csv", |w| est.barrier.write_csv(w))?;
    let g = *est.grid();
    let dim = cfg.model.dim;
    out.write("cells.csv", |w| {
        writeln!(w, "{}", if dim == 1 { "x1,u,p1" } else { "x1,x2,u,p1,p2" })?;
        for pt in &est.lift {
            for xk in &pt.x[..dim] {
                write!(w, "{},", fmt_real(*xk))?;
            }
            write!(w, "{}", fmt_real(pt.u))?;
            for pk in &pt.p[..dim] {
                write!(w, ",{}", fmt_real(*pk))?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;

    let cells = cell_report(&cfg.model, &est, um, up, cfg.aubry.options.residual_tol);
    let spread = graph_check(&est)?;
    let dist_tol = cfg.aubry.dist_tol.unwrap_or(3.0 * g.min_spacing());
    let inv = flow_invariance(&cfg.model, &est, cfg.aubry.horizon, cfg.dt_flow, dist_tol);
    let mather = mather_estimate(&cfg.model, &est, &cfg.aubry.mather)?;
    let flag = |b: bool| if b { "pass" } else { "FAIL" };

    let mut report = String::new();
    let mut line = |s: String| {
        report.push_str(&s);
        report.push('\n');
    };
    line(format!("family: {}", cfg.model.family.tag()));
    line(format!(
        "barrier min {:.6e} max {:.6e}",
        est.barrier.min(),
        est.barrier.max()
    ));
    line(format!(
        "cells: {} of {} (tol_set {:.3e})",
        est.cells.len(),
        g.len(),
        est.tol_set
    ));
    line(format!("graph Lipschitz ratio: {spread:.6e}"));
    line(format!(
        "gradient gap {:.6e} <= {:.3e}: {}",
        cells.max_grad_gap,
        cells.grad_tol,
        flag(cells.max_grad_gap <= cells.grad_tol)
    ));
    line(format!(
        "lift |H| {:.6e} <= {:.3e}: {}",
        cells.max_lift_residual,
        cells.residual_tol,
        flag(cells.max_lift_residual <= cells.residual_tol)
    ));
    line(format!(
        "flow invariance over t in [0, {}]: distance {:.6e} <= {:.3e}, escaped {}: {}",
        cfg.aubry.horizon,
        inv.worst_distance,
        inv.dist_tol,
        inv.escaped,
        flag(inv.passed())
    ));
    line(format!(
        "recurrent points: {} ({} rest points), return radius {:.3e}",
        mather.points.len(),
        mather.fixed.iter().filter(|f| **f).count(),
        mather.r_rec
    ));
    line(format!("classification: {}", mather.class));
    for w in &mather.warnings {
        line(format!("warning: {w}"));
    }
    out.write("aubry_report.txt", |w| w.write_all(report.as_bytes()))?;
    out.say(report.trim_end());
    Ok(())
}

fn flow(cfg: &RunConfig, out: &mut Output<'_>) -> Result<()> {
    let f = &cfg.flow;
    let traj = match f.mode {
        FlowMode::Free => {
            let start = cfg.model.point(f.x0, f.u0, f.p0);
            integrate(
                &cfg.model,
                &start,
                f.horizon,
                cfg.dt_flow,
                Direction::Forward,
            )?
        }
        FlowMode::CalibratedForward => {
            let (_, u_plus) = solve_pair(cfg, out)?;
            let curve = calibrated_forward(
                &cfg.model,
                &u_plus.field,
                &f.x0,
                f.horizon,
                cfg.dt_flow,
                &f.calibration,
            )?;
            report_curve(out, curve.max_drift, &curve.warnings);
            curve.trajectory
        }
        FlowMode::CalibratedBackward => {
            let u_minus = solve_backward(
                &cfg.model,
                &GridField::constant(grid(cfg)?, cfg.solve_f0),
                cfg.dt,
                &cfg.fixed_point,
            )?;
            out.say(format!("u-: {}", describe(&u_minus)));
            let curve = calibrated_backward(
                &cfg.model,
                &u_minus.field,
                &f.x0,
                f.horizon,
                cfg.dt_flow,
                &f.calibration,
            )?;
            report_curve(out, curve.max_drift, &curve.warnings);
            curve.trajectory
        }
    };
    out.write("trajectory.csv", |w| traj.write_csv(&cfg.model, w))?;
    let (t, end) = *traj.samples.last().expect("trajectories hold their start");
    out.say(format!(
        "{} samples; final t = {t:.4}: x = {:?}, u = {:.6e}, p = {:?}, H = {:.3e}",
        traj.samples.len(),
        &end.x[..cfg.model.dim],
        end.u,
        &end.p[..cfg.model.dim],
        cfg.model.eval_h(&end)
    ));
    Ok(())
}

fn report_curve(out: &mut Output<'_>, drift: f64, warnings: &[String]) {
    out.say(format!("largest |u(t) - field(x(t))|: {drift:.3e}"));
    for w in warnings {
        out.say(format!("warning: {w}"));
    }
}

fn admissible(cfg: &RunConfig, out: &mut Output<'_>) -> Result<()> {
    let g = grid(cfg)?;
    let s = &cfg.admissible.search;
    let level = find_admissible_level(&cfg.model, &g, s, cfg.scheme())?;
    let mut curve = level.samples.clone();
    let k = cfg.admissible.curve_points;
    for j in 0..k {
        let a = if k == 1 {
            0.5 * (s.a_lo + s.a_hi)
        } else {
            s.a_lo + (s.a_hi - s.a_lo) * j as f64 / (k - 1) as f64
        };
        curve.push((
            a,
            mane_critical_value(&cfg.model, &g, a, s.dt, s.t_avg, cfg.scheme())?.c,
        ));
    }
    curve.sort_by(|x, y| x.0.total_cmp(&y.0));
    curve.dedup_by(|x, y| x.0 == y.0);
    out.write("c_curve.csv", |w| {
        writeln!(w, "a,c")?;
        for (a, c) in &curve {
            writeln!(w, "{},{}", fmt_real(*a), fmt_real(*c))?;
        }
        Ok(())
    })?;
    out.say(format!("a* = {:.6e}", level.a));
    out.say(format!("c(H^a*) = {:.6e}", level.c));
    out.say(format!("{} evaluations", level.samples.len()));
    for w in &level.warnings {
        out.say(format!("warning: {w}"));
    }
    Ok(())
}

/// Largest reversibility defect accepted by `verify`.
pub const REVERSIBILITY_TOL: f64 = 1e-2;

fn verify(cfg: &RunConfig, out: &mut Output<'_>) -> Result<()> {
    let g = grid(cfg)?;
    let mut lines = Vec::new();
    let mut failed = Vec::new();

    let audit = audit_assumptions(&cfg.model, &cfg.audit);
    for (name, ok) in [
        ("H1 strict convexity", audit.h1_pass),
        ("H3 moderate increase", audit.h3_pass),
        ("Legendre duality", audit.legendre_pass),
    ] {
        lines.push(format!("{name:<24} {}", if ok { "pass" } else { "FAIL" }));
        if !ok {
            failed.push(name.to_string());
        }
    }

    let laws = law_report(
        &cfg.model,
        &g,
        &LawOptions {
            trials: cfg.verify.trials,
            dt: cfg.dt,
            seed: cfg.verify.seed,
            scheme: *cfg.scheme(),
            ..LawOptions::default()
        },
    )?;
    for c in &laws.checks {
        lines.push(c.to_string());
        if !c.passed {
            failed.push(c.name.to_string());
        }
    }

    if cfg.verify.action_tuples > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.verify.seed);
        let lengths = cfg.model.circle_lengths;
        let dim = cfg.model.dim;
        let random_point = |rng: &mut ChaCha8Rng| -> Vector<f64> {
            let mut x = [0.0; 2];
            for k in 0..dim {
                x[k] = rng.gen_range(0.0..lengths[k]);
            }
            x
        };
        let delta = cfg.action.delta;
        let mut worst = 0.0f64;
        for _ in 0..cfg.verify.action_tuples {
            let x0 = random_point(&mut rng);
            let u0 = rng.gen_range(-1.0..1.0);
            let x = random_point(&mut rng);
            let t = (rng.gen_range(0.5..1.0f64) / cfg.dt).round() * cfg.dt;
            let t = t.max(2.0 * delta);
            worst = worst.max(check_reversibility(
                &cfg.model,
                &g,
                &x0,
                u0,
                &x,
                t,
                cfg.dt,
                delta,
                cfg.scheme(),
            )?);
        }
        let ok = worst <= REVERSIBILITY_TOL;
        lines.push(format!(
            "{:<24} {}  tuples {}  worst {:.6e}  bound {:.6e}",
            "action_reversibility",
            if ok { "pass" } else { "FAIL" },
            cfg.verify.action_tuples,
            worst,
            REVERSIBILITY_TOL
        ));
        if !ok {
            failed.push("action_reversibility".into());
        }
    }

    let text = format!(
        "family: {}\nseed: {}\ntrials: {}\n{}\n",
        cfg.model.family.tag(),
        cfg.verify.seed,
        laws.trials,
        lines.join("\n")
    );
    out.write("verify.txt", |w| w.write_all(text.as_bytes()))?;
    out.say(text.trim_end());
    if failed.is_empty() {
        out.say("all invariants passed");
        Ok(())
    } else {
        Err(RunError::Property(failed.join(", ")))
    }
}
