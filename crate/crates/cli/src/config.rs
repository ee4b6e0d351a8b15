//! Line-oriented `key = value` run configuration.
//!
//! Keys are dotted (`grid.n`, `model.p0`). `#` starts a comment. Vector values
//! are comma separated. Unknown keys, duplicates and keys that do not apply to
//! the chosen family are rejected with the offending line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use contact_wkam::model::{CustomCoefficients, Family, FamilyTag, SampleSpec};
use contact_wkam::{
    AubryOptions, CalibrationOptions, FixedPointOptions, LevelSearch, MatherOptions, Model,
    SchemeOptions, Vector,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        Self {
            path: None,
            line: None,
            key: None,
            message: message.into(),
        }
    }

    fn at(line: usize, key: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            key: key.map(str::to_string),
            ..Self::new(message)
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.path {
            write!(f, "{}", p.display())?;
            if let Some(l) = self.line {
                write!(f, ":{l}")?;
            }
            write!(f, ": ")?;
        } else if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "key `{k}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

const KEYS: &[&str] = &[
    "threads",
    "output.dir",
    "model.family",
    "model.dim",
    "model.length",
    "model.v_max",
    "model.lambda",
    "model.amplitude",
    "model.p0",
    "model.coupling",
    "model.potential",
    "model.offset",
    "model.mass",
    "model.quartic",
    "model.drift",
    "model.kappa0",
    "model.kappa1",
    "grid.n",
    "time.dt",
    "time.t_max",
    "time.dt_flow",
    "tol.fix",
    "tol.window",
    "tol.set",
    "tol.grad",
    "tol.residual",
    "tol.clamp",
    "scheme.n_v",
    "scheme.dt_max",
    "scheme.locality",
    "scheme.blowup_guard",
    "audit.u_max",
    "audit.p_max",
    "audit.points",
    "audit.velocity_points",
    "solve.f0",
    "action.kind",
    "action.x0",
    "action.u0",
    "action.times",
    "action.delta",
    "flow.mode",
    "flow.x0",
    "flow.u0",
    "flow.p0",
    "flow.horizon",
    "flow.kink_tol",
    "flow.drift_tol",
    "aubry.t_rec",
    "aubry.r_rec",
    "aubry.horizon",
    "aubry.dist_tol",
    "admissible.a_lo",
    "admissible.a_hi",
    "admissible.tol_a",
    "admissible.tol_c",
    "admissible.dt",
    "admissible.t_avg",
    "admissible.max_iter",
    "admissible.curve_points",
    "verify.seed",
    "verify.trials",
    "verify.action_tuples",
];

/// Family parameter keys and the families they belong to.
fn param_family(key: &str) -> Option<&'static [FamilyTag]> {
    use FamilyTag::*;
    Some(match key {
        "model.amplitude" => &[Manufactured],
        "model.p0" => &[PendulumDissipative],
        "model.coupling" => &[DiscountedMechanical],
        "model.potential" | "model.offset" => &[DiscountedMechanical, CustomCoefficients],
        "model.mass" | "model.quartic" | "model.drift" | "model.kappa0" | "model.kappa1" => {
            &[CustomCoefficients]
        }
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionDirection {
    /// `h_{x0,u0}(., t)`.
    Forward,
    /// `h^{x0,u0}(., t)`.
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionConfig {
    pub kind: ActionDirection,
    pub x0: Vector<f64>,
    pub u0: f64,
    /// Output times, strictly increasing.
    pub times: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMode {
    /// Integrate from `(x0, u0, p0)` as given.
    Free,
    /// Characteristic of `u+` from `x0`, forward in time.
    CalibratedForward,
    /// Characteristic of `u-` from `x0`, backward in time.
    CalibratedBackward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub mode: FlowMode,
    pub x0: Vector<f64>,
    pub u0: f64,
    pub p0: Vector<f64>,
    pub horizon: f64,
    pub calibration: CalibrationOptions<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AubryConfig {
    pub options: AubryOptions<f64>,
    pub mather: MatherOptions<f64>,
    /// Horizon of the flow invariance check.
    pub horizon: f64,
    /// Distance bound of the invariance check; `None` means `3 h`.
    pub dist_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleConfig {
    pub search: LevelSearch<f64>,
    /// Extra evenly spaced `a` samples written to the c-curve.
    pub curve_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    pub trials: usize,
    /// Random `(x0, u0, x, t)` tuples for the reversibility check.
    pub action_tuples: usize,
}

/// Validated run configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: Model,
    pub n: usize,
    pub dt: f64,
    pub dt_flow: f64,
    pub fixed_point: FixedPointOptions<f64>,
    pub audit: SampleSpec<f64>,
    pub solve_f0: f64,
    pub action: ActionConfig,
    pub flow: FlowConfig,
    pub aubry: AubryConfig,
    pub admissible: AdmissibleConfig,
    pub verify: VerifyConfig,
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn scheme(&self) -> &SchemeOptions<f64> {
        &self.fixed_point.scheme
    }

    /// Grid spacing.
    pub fn h(&self) -> f64 {
        self.model.circle_lengths[..self.model.dim]
            .iter()
            .fold(f64::INFINITY, |m, l| m.min(l / self.n as f64))
    }
}

struct Entry {
    line: usize,
    value: String,
}

struct Table {
    entries: BTreeMap<String, Entry>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::at(
                    line,
                    None,
                    format!("expected `key = value`, found `{content}`"),
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::at(line, None, "missing key before `=`"));
            }
            if !KEYS.contains(&key) {
                return Err(ConfigError::at(line, Some(key), "unknown key"));
            }
            if value.is_empty() {
                return Err(ConfigError::at(line, Some(key), "missing value"));
            }
            if let Some(prev) = entries.get(key) {
                let prev: &Entry = prev;
                return Err(ConfigError::at(
                    line,
                    Some(key),
                    format!("duplicate key (first set on line {})", prev.line),
                ));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    line,
                    value: value.to_string(),
                },
            );
        }
        Ok(Self { entries })
    }

    fn raw(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    fn parse_entry<V: FromStr>(key: &str, e: &Entry) -> Result<V> {
        e.value.parse().map_err(|_| {
            ConfigError::at(
                e.line,
                Some(key),
                format!("cannot parse `{}` as {}", e.value, type_label::<V>()),
            )
        })
    }

    fn get<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        self.raw(key)
            .map_or(Ok(default), |e| Self::parse_entry(key, e))
    }

    fn opt<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        self.raw(key).map(|e| Self::parse_entry(key, e)).transpose()
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.raw(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    ConfigError::at(
                        e.line,
                        Some(key),
                        format!("cannot parse `{}` as a number", s.trim()),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Vector<f64> of dimension `dim`; a single entry is broadcast to every axis.
    fn point(&self, key: &str, dim: usize, default: Vector<f64>) -> Result<Vector<f64>> {
        let Some(v) = self.list(key)? else {
            return Ok(default);
        };
        let line = self.raw(key).map(|e| e.line).unwrap_or(0);
        match v.len() {
            1 => Ok([v[0], if dim == 2 { v[0] } else { 0.0 }]),
            2 if dim == 2 => Ok([v[0], v[1]]),
            k => Err(ConfigError::at(
                line,
                Some(key),
                format!("expected {dim} component(s), found {k}"),
            )),
        }
    }

    fn fail<V>(&self, key: &str, message: impl Into<String>) -> Result<V> {
        let line = self.raw(key).map(|e| e.line);
        Err(ConfigError {
            line,
            key: Some(key.to_string()),
            ..ConfigError::new(message)
        })
    }
}

fn type_label<V>() -> &'static str {
    let name = std::any::type_name::<V>();
    if name.contains("f64") {
        "a number"
    } else if name.contains("usize") || name.contains("u64") {
        "a nonnegative integer"
    } else {
        "the expected type"
    }
}

fn positive(t: &Table, key: &str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        t.fail(key, format!("must be positive and finite, got {value}"))
    }
}

fn finite(t: &Table, key: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        t.fail(key, format!("must be finite, got {value}"))
    }
}

fn parse_family(t: &Table) -> Result<Family<f64>> {
    let Some(e) = t.raw("model.family") else {
        return Err(ConfigError::new("missing required key `model.family`"));
    };
    let tag = FamilyTag::from_str(&e.value).map_err(|err| {
        let msg = err.to_string();
        let msg = msg
            .strip_prefix("usage error: ")
            .unwrap_or(&msg)
            .to_string();
        ConfigError::at(e.line, Some("model.family"), msg)
    })?;
    for key in t.entries.keys() {
        if let Some(families) = param_family(key) {
            if !families.contains(&tag) {
                return t.fail(key, format!("not a parameter of family {tag}"));
            }
        }
    }
    let num = |key: &str, default: f64| -> Result<f64> { finite(t, key, t.get(key, default)?) };
    Ok(match Family::<f64>::with_defaults(tag) {
        Family::QuadraticContact => Family::QuadraticContact,
        Family::Manufactured { amplitude } => Family::Manufactured {
            amplitude: num("model.amplitude", amplitude)?,
        },
        Family::PendulumDissipative { p0 } => Family::PendulumDissipative {
            p0: num("model.p0", p0)?,
        },
        Family::DiscountedMechanical {
            coupling,
            potential,
            offset,
        } => Family::DiscountedMechanical {
            coupling: num("model.coupling", coupling)?,
            potential: num("model.potential", potential)?,
            offset: num("model.offset", offset)?,
        },
        Family::CustomCoefficients(c) => Family::CustomCoefficients(CustomCoefficients {
            mass: num("model.mass", c.mass)?,
            quartic: num("model.quartic", c.quartic)?,
            drift: num("model.drift", c.drift)?,
            potential: num("model.potential", c.potential)?,
            offset: num("model.offset", c.offset)?,
            kappa0: num("model.kappa0", c.kappa0)?,
            kappa1: num("model.kappa1", c.kappa1)?,
        }),
    })
}

fn parse_model(t: &Table) -> Result<Model> {
    let family = parse_family(t)?;
    let dim: usize = t.get("model.dim", 1)?;
    if !(1..=2).contains(&dim) {
        return t.fail(
            "model.dim",
            format!("torus dimension must be 1 or 2, got {dim}"),
        );
    }
    if family.tag() == FamilyTag::PendulumDissipative && dim != 1 {
        return t.fail("model.dim", "the pendulum family is one-dimensional");
    }
    let default_len = Family::<f64>::default_length(family.tag());
    let lengths = t.point("model.length", dim, [default_len, default_len])?;
    for l in &lengths[..dim] {
        positive(t, "model.length", *l)?;
    }
    let mut model =
        Model::with_lengths(family, dim, lengths).map_err(|e| ConfigError::new(e.to_string()))?;
    if let Some(v) = t.opt::<f64>("model.v_max")? {
        model = model.with_v_max(positive(t, "model.v_max", v)?);
    }
    if let Some(l) = t.opt::<f64>("model.lambda")? {
        model = model.with_lambda(positive(t, "model.lambda", l)?);
    }
    Ok(model)
}

fn parse_scheme(t: &Table) -> Result<SchemeOptions<f64>> {
    let d = SchemeOptions::<f64>::default();
    let n_v: usize = t.get("scheme.n_v", d.n_v)?;
    if n_v < 3 {
        return t.fail(
            "scheme.n_v",
            "velocity lattice needs at least 3 points per axis",
        );
    }
    Ok(SchemeOptions {
        n_v,
        dt_max: positive(t, "scheme.dt_max", t.get("scheme.dt_max", d.dt_max)?)?,
        locality: positive(t, "scheme.locality", t.get("scheme.locality", d.locality)?)?,
        blowup_guard: positive(
            t,
            "scheme.blowup_guard",
            t.get("scheme.blowup_guard", d.blowup_guard)?,
        )?,
    })
}

/// Parses configuration text. Errors carry line and key but no path.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let t = Table::parse(text)?;
    let model = parse_model(&t)?;
    let dim = model.dim;

    let n: usize = t.get("grid.n", 256)?;
    if n < 8 {
        return t.fail(
            "grid.n",
            format!("grid needs at least 8 points per axis, got {n}"),
        );
    }
    let scheme = parse_scheme(&t)?;
    let h = model.circle_lengths[..dim]
        .iter()
        .fold(f64::INFINITY, |m, l| m.min(l / n as f64));
    // default: the largest step both guards allow
    let dt_default = scheme.dt_max.min(scheme.locality * h / model.v_max);
    let dt = positive(&t, "time.dt", t.get("time.dt", dt_default)?)?;
    if dt > scheme.dt_max * (1.0 + 1e-12) {
        return t.fail(
            "time.dt",
            format!("time step {dt} exceeds dt_max = {}", scheme.dt_max),
        );
    }
    if model.v_max * dt > scheme.locality * h * (1.0 + 1e-12) {
        return t.fail(
            "time.dt",
            format!(
                "locality constraint v_max * dt <= {} * h violated: v_max = {}, dt = {dt}, h = {h}",
                scheme.locality, model.v_max
            ),
        );
    }

    let fp_default = FixedPointOptions::<f64>::default();
    let window: usize = t.get("tol.window", fp_default.window)?;
    if window == 0 {
        return t.fail("tol.window", "convergence window must be at least one step");
    }
    let fixed_point = FixedPointOptions {
        tol_fix: positive(&t, "tol.fix", t.get("tol.fix", fp_default.tol_fix)?)?,
        t_max: positive(&t, "time.t_max", t.get("time.t_max", fp_default.t_max)?)?,
        window,
        scheme,
    };
    let dt_flow = positive(&t, "time.dt_flow", t.get("time.dt_flow", 1e-3)?)?;

    let sd = SampleSpec::<f64>::default();
    let audit = SampleSpec {
        u_max: positive(&t, "audit.u_max", t.get("audit.u_max", sd.u_max)?)?,
        p_max: positive(&t, "audit.p_max", t.get("audit.p_max", sd.p_max)?)?,
        points: t.get("audit.points", sd.points)?,
        velocity_points: t.get("audit.velocity_points", sd.velocity_points)?,
    };
    if audit.points < 2 {
        return t.fail(
            "audit.points",
            "audit lattice needs at least 2 points per axis",
        );
    }

    let kind = match t.raw("action.kind").map(|e| e.value.as_str()) {
        None | Some("forward") => ActionDirection::Forward,
        Some("backward") => ActionDirection::Backward,
        Some(other) => {
            return t.fail(
                "action.kind",
                format!("expected `forward` or `backward`, got `{other}`"),
            )
        }
    };
    let delta = positive(
        &t,
        "action.delta",
        t.get("action.delta", contact_wkam::action::DEFAULT_DELTA)?,
    )?;
    let times = t.list("action.times")?.unwrap_or_else(|| vec![0.5, 1.0]);
    if times.iter().any(|s| !s.is_finite() || *s < delta) {
        return t.fail(
            "action.times",
            format!("every time must be finite and at least action.delta = {delta}"),
        );
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return t.fail("action.times", "times must be strictly increasing");
    }
    let action = ActionConfig {
        kind,
        x0: t.point("action.x0", dim, [0.0, 0.0])?,
        u0: finite(&t, "action.u0", t.get("action.u0", 0.0)?)?,
        times,
        delta,
    };

    let mode =
        match t.raw("flow.mode").map(|e| e.value.as_str()) {
            None | Some("calibrated_forward") => FlowMode::CalibratedForward,
            Some("calibrated_backward") => FlowMode::CalibratedBackward,
            Some("free") => FlowMode::Free,
            Some(other) => return t.fail(
                "flow.mode",
                format!(
                    "expected `free`, `calibrated_forward` or `calibrated_backward`, got `{other}`"
                ),
            ),
        };
    if mode != FlowMode::Free {
        for key in ["flow.u0", "flow.p0"] {
            if t.raw(key).is_some() {
                return t.fail(key, "only used with flow.mode = free; calibrated starts take u and p from the field");
            }
        }
    }
    let cd = CalibrationOptions::<f64>::default();
    let flow = FlowConfig {
        mode,
        x0: t.point("flow.x0", dim, [0.0, 0.0])?,
        u0: finite(&t, "flow.u0", t.get("flow.u0", 0.0)?)?,
        p0: t.point("flow.p0", dim, [0.0, 0.0])?,
        horizon: positive(&t, "flow.horizon", t.get("flow.horizon", 10.0)?)?,
        calibration: CalibrationOptions {
            kink_tol: positive(&t, "flow.kink_tol", t.get("flow.kink_tol", cd.kink_tol)?)?,
            drift_tol: positive(&t, "flow.drift_tol", t.get("flow.drift_tol", cd.drift_tol)?)?,
        },
    };

    let ad = AubryOptions::<f64>::default();
    let md = MatherOptions::<f64>::default();
    let aubry = AubryConfig {
        options: AubryOptions {
            tol_set: t
                .opt("tol.set")?
                .map(|v| positive(&t, "tol.set", v))
                .transpose()?,
            grad_tol: t
                .opt("tol.grad")?
                .map(|v| positive(&t, "tol.grad", v))
                .transpose()?,
            residual_tol: positive(&t, "tol.residual", t.get("tol.residual", ad.residual_tol)?)?,
            tol_clamp: positive(&t, "tol.clamp", t.get("tol.clamp", ad.tol_clamp)?)?,
        },
        mather: MatherOptions {
            t_rec: positive(&t, "aubry.t_rec", t.get("aubry.t_rec", md.t_rec)?)?,
            r_rec: t
                .opt("aubry.r_rec")?
                .map(|v| positive(&t, "aubry.r_rec", v))
                .transpose()?,
            dt_flow,
            fixed_tol: md.fixed_tol,
        },
        horizon: positive(&t, "aubry.horizon", t.get("aubry.horizon", 1.0)?)?,
        dist_tol: t
            .opt("aubry.dist_tol")?
            .map(|v| positive(&t, "aubry.dist_tol", v))
            .transpose()?,
    };

    let ld = LevelSearch::<f64>::default();
    let search = LevelSearch {
        a_lo: finite(&t, "admissible.a_lo", t.get("admissible.a_lo", ld.a_lo)?)?,
        a_hi: finite(&t, "admissible.a_hi", t.get("admissible.a_hi", ld.a_hi)?)?,
        tol_a: positive(&t, "admissible.tol_a", t.get("admissible.tol_a", ld.tol_a)?)?,
        tol_c: positive(&t, "admissible.tol_c", t.get("admissible.tol_c", ld.tol_c)?)?,
        dt: positive(&t, "admissible.dt", t.get("admissible.dt", ld.dt)?)?,
        t_avg: positive(&t, "admissible.t_avg", t.get("admissible.t_avg", ld.t_avg)?)?,
        max_iter: t.get("admissible.max_iter", ld.max_iter)?,
    };
    if search.a_lo >= search.a_hi {
        return t.fail(
            "admissible.a_hi",
            "bracket needs admissible.a_lo < admissible.a_hi",
        );
    }
    let admissible = AdmissibleConfig {
        search,
        curve_points: t.get("admissible.curve_points", 0)?,
    };

    let verify = VerifyConfig {
        seed: t.get("verify.seed", 42)?,
        trials: t.get("verify.trials", 20)?,
        action_tuples: t.get("verify.action_tuples", 3)?,
    };
    if verify.trials == 0 {
        return t.fail("verify.trials", "needs at least one trial");
    }

    let threads = t.opt::<usize>("threads")?;
    if threads == Some(0) {
        return t.fail("threads", "worker count must be at least 1");
    }

    Ok(RunConfig {
        model,
        n,
        dt,
        dt_flow,
        fixed_point,
        audit,
        solve_f0: finite(&t, "solve.f0", t.get("solve.f0", 0.0)?)?,
        action,
        flow,
        aubry,
        admissible,
        verify,
        threads,
        output_dir: PathBuf::from(
            t.raw("output.dir")
                .map(|e| e.value.as_str())
                .unwrap_or("out"),
        ),
    })
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: Some(path.to_path_buf()),
        ..ConfigError::new(format!("cannot read configuration: {e}"))
    })?;
    parse_config_str(&text).map_err(|e| ConfigError {
        path: Some(path.to_path_buf()),
        ..e
    })
}
