//! Contact Hamiltonian families `H(x, u, p)` on flat tori and their Lagrangians.
//!
//! Every built-in family has the form
//!
//! ```text
//! H(x, u, p) = m/2 |p - b|^2 + q/4 |p|^4 + V(x) + g(x) u + c
//! ```
//!
//! with family-specific mass `m`, drift `b`, quartic coefficient `q`,
//! potential `V`, coupling `g` and offset `c`. When `q = 0` the Lagrangian has
//! the closed form `|v|^2/(2m) + b.v - V - g u - c`; otherwise it is obtained
//! by a damped Newton ascent on `p`.

use std::fmt;
use std::str::FromStr;

use crate::error::{usage, Error, Result};
use crate::scalar::{dot, norm, zero_vec, Real, Vector};

/// Names of the built-in families, in declaration order.
pub const FAMILY_NAMES: [&str; 5] = [
    "quadratic_contact",
    "manufactured",
    "pendulum_dissipative",
    "discounted_mechanical",
    "custom_coefficients",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyTag {
    QuadraticContact,
    Manufactured,
    PendulumDissipative,
    DiscountedMechanical,
    CustomCoefficients,
}

impl FamilyTag {
    pub fn name(self) -> &'static str {
        FAMILY_NAMES[self as usize]
    }
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use FamilyTag::*;
        match s.trim() {
            "quadratic_contact" => Ok(QuadraticContact),
            "manufactured" => Ok(Manufactured),
            "pendulum_dissipative" => Ok(PendulumDissipative),
            "discounted_mechanical" => Ok(DiscountedMechanical),
            "custom_coefficients" => Ok(CustomCoefficients),
            other => usage(format!(
                "unknown family `{other}`; valid families: {}",
                FAMILY_NAMES.join(", ")
            )),
        }
    }
}

/// Coefficients of the `custom_coefficients` family.
///
/// `H = m/2 |p - b|^2 + q/4 |p|^4 + V0 sum_k cos(w_k x_k) + (k0 + k1 mean_k cos(w_k x_k)) u + c`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CustomCoefficients<T> {
    pub mass: T,
    pub quartic: T,
    pub drift: T,
    pub potential: T,
    pub offset: T,
    pub kappa0: T,
    pub kappa1: T,
}

impl<T: Real> Default for CustomCoefficients<T> {
    fn default() -> Self {
        Self {
            mass: T::one(),
            quartic: T::zero(),
            drift: T::zero(),
            potential: T::zero(),
            offset: T::zero(),
            kappa0: T::one(),
            kappa1: T::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family<T> {
    /// `H = u + |p|^2/2`.
    QuadraticContact,
    /// `H = u + |p|^2/2 - W - |DW|^2/2` with `W = A sum_k cos(w_k x_k)`, so `W` solves `H(x, W, DW) = 0`.
    Manufactured { amplitude: T },
    /// `H = |p - p0|^2/2 + sum_k cos(w_k x_k) + u`.
    PendulumDissipative { p0: T },
    /// `H = kappa u + |p|^2/2 + V0 sum_k cos(w_k x_k) + c`.
    DiscountedMechanical { coupling: T, potential: T, offset: T },
    CustomCoefficients(CustomCoefficients<T>),
}

impl<T: Real> Family<T> {
    pub fn tag(&self) -> FamilyTag {
        match self {
            Family::QuadraticContact => FamilyTag::QuadraticContact,
            Family::Manufactured { .. } => FamilyTag::Manufactured,
            Family::PendulumDissipative { .. } => FamilyTag::PendulumDissipative,
            Family::DiscountedMechanical { .. } => FamilyTag::DiscountedMechanical,
            Family::CustomCoefficients(_) => FamilyTag::CustomCoefficients,
        }
    }

    /// Family defaults for the parameters.
    pub fn with_defaults(tag: FamilyTag) -> Self {
        match tag {
            FamilyTag::QuadraticContact => Family::QuadraticContact,
            FamilyTag::Manufactured => Family::Manufactured {
                amplitude: T::lit(0.3),
            },
            FamilyTag::PendulumDissipative => Family::PendulumDissipative { p0: T::lit(2.0) },
            FamilyTag::DiscountedMechanical => Family::DiscountedMechanical {
                coupling: T::one(),
                potential: T::one(),
                offset: T::zero(),
            },
            FamilyTag::CustomCoefficients => Family::CustomCoefficients(Default::default()),
        }
    }

    /// Natural period of the torus for the family.
    pub fn default_length(tag: FamilyTag) -> T {
        match tag {
            FamilyTag::PendulumDissipative | FamilyTag::DiscountedMechanical => T::TAU(),
            _ => T::one(),
        }
    }

    /// `sup |dH/du|`.
    fn derived_lambda(&self) -> T {
        match *self {
            Family::QuadraticContact
            | Family::Manufactured { .. }
            | Family::PendulumDissipative { .. } => T::one(),
            Family::DiscountedMechanical { coupling, .. } => coupling.abs(),
            Family::CustomCoefficients(c) => c.kappa0.abs() + c.kappa1.abs(),
        }
    }
}

/// State `(x, u, p)` of the contact phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint<T> {
    pub x: Vector<T>,
    pub u: T,
    pub p: Vector<T>,
}

impl<T: Real> ContactPoint<T> {
    pub fn new(x: Vector<T>, u: T, p: Vector<T>) -> Self {
        Self { x, u, p }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.p.iter()).all(|v| v.is_finite()) && self.u.is_finite()
    }
}

/// Partial derivatives of `H` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianGradient<T> {
    pub dx: Vector<T>,
    pub du: T,
    pub dp: Vector<T>,
}

/// Position-dependent pieces of the canonical form.
struct Parts<T> {
    mass: T,
    drift: T,
    quartic: T,
    potential: T,
    potential_grad: Vector<T>,
    coupling: T,
    coupling_grad: Vector<T>,
    offset: T,
}

/// A contact Hamiltonian family on `T^d`, `d` in {1, 2}.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel<T> {
    pub family: Family<T>,
    pub dim: usize,
    pub circle_lengths: Vector<T>,
    pub lambda_bound: T,
    pub v_max: T,
}

impl<T: Real> HamiltonianModel<T> {
    /// Model with the family's natural circle length, derived `lambda` and `v_max = 8`.
    pub fn new(family: Family<T>, dim: usize) -> Result<Self> {
        let len = Family::<T>::default_length(family.tag());
        Self::with_lengths(family, dim, [len, len])
    }

    pub fn with_lengths(family: Family<T>, dim: usize, circle_lengths: Vector<T>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return usage(format!("torus dimension must be 1 or 2, got {dim}"));
        }
        if circle_lengths[..dim].iter().any(|l| !(*l > T::zero()) || !l.is_finite()) {
            return usage("circle lengths must be positive and finite");
        }
        Ok(Self {
            lambda_bound: family.derived_lambda(),
            family,
            dim,
            circle_lengths,
            v_max: T::lit(8.0),
        })
    }

    pub fn quadratic_contact(dim: usize) -> Self {
        Self::new(Family::QuadraticContact, dim).expect("valid dimension")
    }

    pub fn manufactured(amplitude: T, dim: usize) -> Self {
        Self::new(Family::Manufactured { amplitude }, dim).expect("valid dimension")
    }

    pub fn pendulum(p0: T) -> Self {
        Self::new(Family::PendulumDissipative { p0 }, 1).expect("valid dimension")
    }

    pub fn discounted_mechanical(coupling: T, potential: T, offset: T, dim: usize) -> Self {
        Self::new(
            Family::DiscountedMechanical {
                coupling,
                potential,
                offset,
            },
            dim,
        )
        .expect("valid dimension")
    }

    pub fn with_v_max(mut self, v_max: T) -> Self {
        self.v_max = v_max;
        self
    }

    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.lambda_bound = lambda;
        self
    }

    #[inline]
    fn freq(&self, k: usize) -> T {
        T::TAU() / self.circle_lengths[k]
    }

    /// Reduces `x` to the fundamental domain `[0, l_k)` on each axis.
    pub fn reduce(&self, x: Vector<T>) -> Vector<T> {
        let mut out = x;
        for (k, xk) in out.iter_mut().enumerate().take(self.dim) {
            let l = self.circle_lengths[k];
            let r = *xk - (*xk / l).floor() * l;
            *xk = if r >= l { r - l } else { r };
        }
        out
    }

    /// Contact point with `x` reduced to the fundamental domain.
    pub fn point(&self, x: Vector<T>, u: T, p: Vector<T>) -> ContactPoint<T> {
        ContactPoint::new(self.reduce(x), u, p)
    }

    /// Sum of `cos(w_k x_k)` and its gradient.
    fn cos_sum(&self, x: &Vector<T>) -> (T, Vector<T>) {
        let mut s = T::zero();
        let mut g = zero_vec();
        for k in 0..self.dim {
            let w = self.freq(k);
            s += (w * x[k]).cos();
            g[k] = -w * (w * x[k]).sin();
        }
        (s, g)
    }

    /// Manufactured potential `W`, its gradient and the diagonal of its Hessian.
    pub fn manufactured_w(&self, x: &Vector<T>) -> Option<(T, Vector<T>, Vector<T>)> {
        let Family::Manufactured { amplitude } = self.family else {
            return None;
        };
        let mut w = T::zero();
        let mut dw = zero_vec();
        let mut ddw = zero_vec();
        for k in 0..self.dim {
            let om = self.freq(k);
            let (s, c) = (om * x[k]).sin_cos();
            w += amplitude * c;
            dw[k] = -amplitude * om * s;
            ddw[k] = -amplitude * om * om * c;
        }
        Some((w, dw, ddw))
    }

    fn parts(&self, x: &Vector<T>) -> Parts<T> {
        let one = T::one();
        let zero = T::zero();
        let base = Parts {
            mass: one,
            drift: zero,
            quartic: zero,
            potential: zero,
            potential_grad: zero_vec(),
            coupling: one,
            coupling_grad: zero_vec(),
            offset: zero,
        };
        match self.family {
            Family::QuadraticContact => base,
            Family::Manufactured { .. } => {
                let (w, dw, ddw) = self.manufactured_w(x).expect("manufactured family");
                let half = T::lit(0.5);
                let mut grad = zero_vec();
                for k in 0..self.dim {
                    grad[k] = -dw[k] - dw[k] * ddw[k];
                }
                Parts {
                    potential: -w - half * dot(&dw, &dw, self.dim),
                    potential_grad: grad,
                    ..base
                }
            }
            Family::PendulumDissipative { p0 } => {
                let (s, g) = self.cos_sum(x);
                Parts {
                    drift: p0,
                    potential: s,
                    potential_grad: g,
                    ..base
                }
            }
            Family::DiscountedMechanical {
                coupling,
                potential,
                offset,
            } => {
                let (s, g) = self.cos_sum(x);
                Parts {
                    potential: potential * s,
                    potential_grad: [potential * g[0], potential * g[1]],
                    coupling,
                    offset,
                    ..base
                }
            }
            Family::CustomCoefficients(c) => {
                let (s, g) = self.cos_sum(x);
                let inv_d = one / T::count(self.dim);
                Parts {
                    mass: c.mass,
                    drift: c.drift,
                    quartic: c.quartic,
                    potential: c.potential * s,
                    potential_grad: [c.potential * g[0], c.potential * g[1]],
                    coupling: c.kappa0 + c.kappa1 * s * inv_d,
                    coupling_grad: [c.kappa1 * g[0] * inv_d, c.kappa1 * g[1] * inv_d],
                    offset: c.offset,
                }
            }
        }
    }

    /// True when `H` is quadratic in `p` and `L` has a closed form.
    pub fn is_quadratic_in_p(&self) -> bool {
        match self.family {
            Family::CustomCoefficients(c) => c.quartic == T::zero(),
            _ => true,
        }
    }

    fn kinetic(&self, parts: &Parts<T>, p: &Vector<T>) -> T {
        let half = T::lit(0.5);
        let mut shifted = T::zero();
        for k in 0..self.dim {
            let d = p[k] - parts.drift;
            shifted += d * d;
        }
        let mut h = half * parts.mass * shifted;
        if parts.quartic != T::zero() {
            let p2 = dot(p, p, self.dim);
            h += parts.quartic * T::lit(0.25) * p2 * p2;
        }
        h
    }

    fn h_from_parts(&self, parts: &Parts<T>, u: T, p: &Vector<T>) -> T {
        self.kinetic(parts, p) + parts.potential + parts.coupling * u + parts.offset
    }

    fn dp_from_parts(&self, parts: &Parts<T>, p: &Vector<T>) -> Vector<T> {
        let p2 = dot(p, p, self.dim);
        let mut g = zero_vec();
        for k in 0..self.dim {
            g[k] = parts.mass * (p[k] - parts.drift) + parts.quartic * p2 * p[k];
        }
        g
    }

    fn hess_from_parts(&self, parts: &Parts<T>, p: &Vector<T>) -> [[T; 2]; 2] {
        let p2 = dot(p, p, self.dim);
        let two = T::lit(2.0);
        let mut m = [[T::zero(); 2]; 2];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let delta = if i == j { T::one() } else { T::zero() };
                m[i][j] = parts.mass * delta + parts.quartic * (p2 * delta + two * p[i] * p[j]);
            }
        }
        m
    }

    /// `H(x, u, p)`.
    pub fn eval_h(&self, pt: &ContactPoint<T>) -> T {
        let parts = self.parts(&pt.x);
        self.h_from_parts(&parts, pt.u, &pt.p)
    }

    /// `(dH/dx, dH/du, dH/dp)` in closed form.
    pub fn grad_h(&self, pt: &ContactPoint<T>) -> HamiltonianGradient<T> {
        let parts = self.parts(&pt.x);
        let mut dx = zero_vec();
        for k in 0..self.dim {
            dx[k] = parts.potential_grad[k] + parts.coupling_grad[k] * pt.u;
        }
        HamiltonianGradient {
            dx,
            du: parts.coupling,
            dp: self.dp_from_parts(&parts, &pt.p),
        }
    }

    /// `d^2 H / dp^2`; only the leading `dim x dim` block is meaningful.
    pub fn hess_pp(&self, pt: &ContactPoint<T>) -> [[T; 2]; 2] {
        let parts = self.parts(&pt.x);
        self.hess_from_parts(&parts, &pt.p)
    }

    /// Smallest eigenvalue of `d^2 H / dp^2`.
    pub fn min_hess_eigenvalue(&self, pt: &ContactPoint<T>) -> T {
        let m = self.hess_pp(pt);
        if self.dim == 1 {
            return m[0][0];
        }
        let half = T::lit(0.5);
        let mean = half * (m[0][0] + m[1][1]);
        let d = half * (m[0][0] - m[1][1]);
        mean - (d * d + m[0][1] * m[1][0]).sqrt()
    }

    /// The covector `p*` maximizing `<v, p> - H(x, u, p)`.
    pub fn legendre_argmax(&self, x: &Vector<T>, u: T, v: &Vector<T>) -> Result<Vector<T>> {
        let parts = self.parts(x);
        self.argmax_with(&parts, u, v)
    }

    fn argmax_with(&self, parts: &Parts<T>, u: T, v: &Vector<T>) -> Result<Vector<T>> {
        let dim = self.dim;
        if parts.quartic == T::zero() {
            let mut p = zero_vec();
            for k in 0..dim {
                p[k] = parts.drift + v[k] / parts.mass;
            }
            return Ok(p);
        }
        let tol = T::solver_tol(1e-10);
        let objective = |p: &Vector<T>| dot(v, p, dim) - self.h_from_parts(parts, u, p);
        let residual = |p: &Vector<T>| {
            let g = self.dp_from_parts(parts, p);
            let mut r = zero_vec();
            for k in 0..dim {
                r[k] = v[k] - g[k];
            }
            r
        };

        // damped Newton from p = 0
        let mut p = zero_vec();
        let max_iter = 100;
        for _ in 0..max_iter {
            let r = residual(&p);
            if norm(&r, dim) <= tol {
                return Ok(p);
            }
            let m = self.hess_from_parts(parts, &p);
            let step = solve_spd(&m, &r, dim);
            let f0 = objective(&p);
            let r0 = norm(&r, dim);
            let mut t = T::one();
            let mut accepted = false;
            for _ in 0..40 {
                let mut trial = p;
                for k in 0..dim {
                    trial[k] += t * step[k];
                }
                // near the optimum objective changes drop below roundoff
                if objective(&trial) >= f0 || norm(&residual(&trial), dim) < r0 {
                    p = trial;
                    accepted = true;
                    break;
                }
                t = t * T::lit(0.5);
            }
            if !accepted {
                break;
            }
        }
        if norm(&residual(&p), dim) <= tol {
            return Ok(p);
        }

        // golden-section coordinate ascent fallback
        let bound = T::lit(1.0) + norm(v, dim) / parts.mass + parts.drift.abs();
        for _ in 0..200 {
            for k in 0..dim {
                let f = |s: T| {
                    let mut q = p;
                    q[k] = s;
                    objective(&q)
                };
                p[k] = golden_max(f, p[k] - bound, p[k] + bound, tol);
            }
            if norm(&residual(&p), dim) <= tol {
                return Ok(p);
            }
        }
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual: norm(&residual(&p), dim).to_f64_lossy(),
        })
    }

    /// `L(x, u, v) = sup_p { <v, p> - H(x, u, p) }`.
    pub fn eval_l(&self, x: &Vector<T>, u: T, v: &Vector<T>) -> Result<T> {
        let parts = self.parts(x);
        if parts.quartic == T::zero() {
            let mut kin = T::zero();
            let mut lin = T::zero();
            for k in 0..self.dim {
                kin += v[k] * v[k];
                lin += parts.drift * v[k];
            }
            return Ok(kin / (T::lit(2.0) * parts.mass) + lin
                - parts.potential
                - parts.coupling * u
                - parts.offset);
        }
        let p = self.argmax_with(&parts, u, v)?;
        Ok(dot(v, &p, self.dim) - self.h_from_parts(&parts, u, &p))
    }

    /// Samples `H` over a lattice and checks strict convexity and moderate increase.
    pub fn audit(&self, spec: &SampleSpec<T>) -> AuditReport<T> {
        audit_assumptions(self, spec)
    }
}

fn solve_spd<T: Real>(m: &[[T; 2]; 2], r: &Vector<T>, dim: usize) -> Vector<T> {
    if dim == 1 {
        return [r[0] / m[0][0], T::zero()];
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        (m[1][1] * r[0] - m[0][1] * r[1]) / det,
        (m[0][0] * r[1] - m[1][0] * r[0]) / det,
    ]
}

fn golden_max<T: Real, F: Fn(T) -> T>(f: F, mut a: T, mut b: T, tol: T) -> T {
    let ratio = T::lit(0.618_033_988_749_894_9);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    T::lit(0.5) * (a + b)
}

/// Lattice bounds for assumption audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec<T> {
    pub u_max: T,
    pub p_max: T,
    /// Points per axis, for `x`, `u` and each `p` component alike.
    pub points: usize,
    /// Velocity samples per axis for the Legendre round trip.
    pub velocity_points: usize,
}

impl<T: Real> Default for SampleSpec<T> {
    fn default() -> Self {
        Self {
            u_max: T::lit(3.0),
            p_max: T::lit(8.0),
            points: 17,
            velocity_points: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport<T> {
    pub samples: usize,
    pub min_hess_eigenvalue: T,
    pub min_hess_at: ContactPoint<T>,
    pub min_du: T,
    pub min_du_at: ContactPoint<T>,
    pub max_du: T,
    pub max_du_at: ContactPoint<T>,
    pub lambda_bound: T,
    /// Largest `|dH/dp(p*) - v|` over the velocity samples.
    pub legendre_residual: T,
    /// Largest `|L + H(p*) - <v, p*>|`.
    pub fenchel_residual: T,
    pub h1_pass: bool,
    pub h3_pass: bool,
    pub legendre_pass: bool,
}

impl<T: Real> AuditReport<T> {
    pub fn passed(&self) -> bool {
        self.h1_pass && self.h3_pass && self.legendre_pass
    }
}

impl<T: Real> fmt::Display for AuditReport<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flag = |b: bool| if b { "pass" } else { "FAIL" };
        writeln!(f, "samples: {}", self.samples)?;
        writeln!(
            f,
            "H1 strict convexity: {} (min eigenvalue {:e} at x={:?} u={} p={:?})",
            flag(self.h1_pass),
            self.min_hess_eigenvalue,
            self.min_hess_at.x,
            self.min_hess_at.u,
            self.min_hess_at.p
        )?;
        writeln!(
            f,
            "H3 moderate increase: {} (dH/du in [{:e}, {:e}], lambda = {:e}; min at x={:?}, max at x={:?})",
            flag(self.h3_pass),
            self.min_du,
            self.max_du,
            self.lambda_bound,
            self.min_du_at.x,
            self.max_du_at.x
        )?;
        write!(
            f,
            "Legendre duality: {} (velocity residual {:e}, Fenchel residual {:e})",
            flag(self.legendre_pass),
            self.legendre_residual,
            self.fenchel_residual
        )
    }
}

fn linspace<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![T::lit(0.5) * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * T::count(i) / T::count(n - 1))
        .collect()
}

fn lattice<T: Real>(axis: &[T], dim: usize) -> Vec<Vector<T>> {
    if dim == 1 {
        axis.iter().map(|&a| [a, T::zero()]).collect()
    } else {
        axis.iter()
            .flat_map(|&a| axis.iter().map(move |&b| [a, b]))
            .collect()
    }
}

/// Checks (H1), (H3) and the Legendre round trip on a finite sample.
pub fn audit_assumptions<T: Real>(model: &HamiltonianModel<T>, spec: &SampleSpec<T>) -> AuditReport<T> {
    let dim = model.dim;
    let n = spec.points.max(2);
    // n - 1 distinct torus points: the same spacing as the u and p axes, so an
    // odd count hits the half period
    let m = n - 1;
    let xs: Vec<Vector<T>> = if dim == 1 {
        (0..m)
            .map(|i| [model.circle_lengths[0] * T::count(i) / T::count(m), T::zero()])
            .collect()
    } else {
        (0..m)
            .flat_map(|i| {
                (0..m).map(move |j| {
                    [
                        model.circle_lengths[0] * T::count(i) / T::count(m),
                        model.circle_lengths[1] * T::count(j) / T::count(m),
                    ]
                })
            })
            .collect()
    };
    let us = linspace(-spec.u_max, spec.u_max, n);
    let ps = lattice(&linspace(-spec.p_max, spec.p_max, n), dim);

    let origin = ContactPoint::new(zero_vec(), T::zero(), zero_vec());
    let mut min_eig = (T::infinity(), origin);
    let mut min_du = (T::infinity(), origin);
    let mut max_du = (T::neg_infinity(), origin);
    let mut samples = 0usize;
    for x in &xs {
        for &u in &us {
            for p in &ps {
                let pt = ContactPoint::new(*x, u, *p);
                samples += 1;
                let eig = model.min_hess_eigenvalue(&pt);
                if eig < min_eig.0 {
                    min_eig = (eig, pt);
                }
                let du = model.grad_h(&pt).du;
                if du < min_du.0 {
                    min_du = (du, pt);
                }
                if du > max_du.0 {
                    max_du = (du, pt);
                }
            }
        }
    }

    let vs = lattice(
        &linspace(-model.v_max, model.v_max, spec.velocity_points.max(2)),
        dim,
    );
    let mut legendre_residual = T::zero();
    let mut fenchel_residual = T::zero();
    let mut legendre_ok = true;
    for x in &xs {
        for &u in [us[0], us[us.len() / 2], us[us.len() - 1]].iter() {
            for v in &vs {
                let Ok(p) = model.legendre_argmax(x, u, v) else {
                    legendre_ok = false;
                    continue;
                };
                let Ok(l) = model.eval_l(x, u, v) else {
                    legendre_ok = false;
                    continue;
                };
                let pt = ContactPoint::new(*x, u, p);
                let dp = model.grad_h(&pt).dp;
                for k in 0..dim {
                    legendre_residual = legendre_residual.max((dp[k] - v[k]).abs());
                }
                let fenchel = (l + model.eval_h(&pt) - dot(v, &p, dim)).abs();
                fenchel_residual = fenchel_residual.max(fenchel);
            }
        }
    }
    let tol = T::solver_tol(1e-8);
    AuditReport {
        samples,
        min_hess_eigenvalue: min_eig.0,
        min_hess_at: min_eig.1,
        min_du: min_du.0,
        min_du_at: min_du.1,
        max_du: max_du.0,
        max_du_at: max_du.1,
        lambda_bound: model.lambda_bound,
        legendre_residual,
        fenchel_residual,
        h1_pass: min_eig.0 > T::zero(),
        h3_pass: min_du.0 > T::zero() && max_du.0 <= model.lambda_bound * (T::one() + tol),
        legendre_pass: legendre_ok && legendre_residual <= tol && fenchel_residual <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pt(x: f64, u: f64, p: f64) -> ContactPoint<f64> {
        ContactPoint::new([x, 0.0], u, [p, 0.0])
    }

    #[test]
    fn eval_h_examples() {
        let q = HamiltonianModel::<f64>::quadratic_contact(1);
        assert_eq!(q.eval_h(&pt(0.37, 0.0, 0.0)), 0.0);

        let pend = HamiltonianModel::pendulum(2.0);
        assert_abs_diff_eq!(pend.eval_h(&pt(0.0, 0.0, 2.0)), 1.0, epsilon = 1e-15);

        let m = HamiltonianModel::manufactured(0.3, 1);
        for &x in &[0.0, 0.1, 0.37, 0.8] {
            let (w, dw, _) = m.manufactured_w(&[x, 0.0]).unwrap();
            assert_abs_diff_eq!(m.eval_h(&pt(x, w, dw[0])), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn eval_l_examples() {
        let q = HamiltonianModel::<f64>::quadratic_contact(1);
        assert_eq!(q.eval_l(&[0.2, 0.0], 0.0, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(q.eval_l(&[0.2, 0.0], 1.0, &[2.0, 0.0]).unwrap(), 1.0);

        // symbolic conjugate v^2/2 + 2v - cos x - u, checked against a p-lattice sup
        let pend = HamiltonianModel::pendulum(2.0);
        assert_abs_diff_eq!(pend.eval_l(&[0.0, 0.0], 0.0, &[0.0, 0.0]).unwrap(), -1.0);
        for &(x, u, v) in &[(0.0, 0.0, 0.0), (1.3, -0.4, 0.7), (4.0, 1.1, -2.5)] {
            let brute = (0..=200_000)
                .map(|i| -10.0 + 20.0 * i as f64 / 200_000.0)
                .map(|p| v * p - pend.eval_h(&pt(x, u, p)))
                .fold(f64::NEG_INFINITY, f64::max);
            let l = pend.eval_l(&[x, 0.0], u, &[v, 0.0]).unwrap();
            assert_abs_diff_eq!(l, brute, epsilon = 1e-7);
        }
    }

    #[test]
    fn grad_h_examples() {
        let q = HamiltonianModel::<f64>::quadratic_contact(1);
        let g = q.grad_h(&pt(0.3, 0.7, -1.5));
        assert_eq!((g.dx[0], g.du, g.dp[0]), (0.0, 1.0, -1.5));

        let pend = HamiltonianModel::pendulum(2.0);
        let g = pend.grad_h(&pt(0.0, 0.0, 2.0));
        assert_abs_diff_eq!(g.dx[0], 0.0);
        assert_eq!(g.du, 1.0);
        assert_eq!(g.dp[0], 0.0);
    }

    fn fd_check(model: &HamiltonianModel<f64>, p: ContactPoint<f64>) {
        let e = 1e-6;
        let g = model.grad_h(&p);
        let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
        for k in 0..model.dim {
            let mut a = p;
            let mut b = p;
            a.x[k] += e;
            b.x[k] -= e;
            let fd = (model.eval_h(&a) - model.eval_h(&b)) / (2.0 * e);
            assert!(rel(fd, g.dx[k]) < 1e-6, "dx {fd} vs {}", g.dx[k]);
            let mut a = p;
            let mut b = p;
            a.p[k] += e;
            b.p[k] -= e;
            let fd = (model.eval_h(&a) - model.eval_h(&b)) / (2.0 * e);
            assert!(rel(fd, g.dp[k]) < 1e-6, "dp {fd} vs {}", g.dp[k]);
        }
        let mut a = p;
        let mut b = p;
        a.u += e;
        b.u -= e;
        let fd = (model.eval_h(&a) - model.eval_h(&b)) / (2.0 * e);
        assert!(rel(fd, g.du) < 1e-6);
    }

    #[test]
    fn grad_h_matches_finite_differences() {
        let m = HamiltonianModel::manufactured(0.3, 1);
        for &x in &[0.05, 0.3, 0.61, 0.9] {
            let (w, dw, _) = m.manufactured_w(&[x, 0.0]).unwrap();
            fd_check(&m, pt(x, w, dw[0]));
        }
        let m2 = HamiltonianModel::manufactured(0.2, 2);
        fd_check(&m2, ContactPoint::new([0.1, 0.7], 0.3, [0.4, -1.2]));
        let custom = HamiltonianModel::new(
            Family::CustomCoefficients(CustomCoefficients {
                mass: 1.5,
                quartic: 0.2,
                drift: 0.3,
                potential: 0.7,
                offset: 0.1,
                kappa0: 1.0,
                kappa1: 0.5,
            }),
            2,
        )
        .unwrap();
        fd_check(&custom, ContactPoint::new([0.2, 0.45], -0.8, [0.9, -0.3]));
        fd_check(&HamiltonianModel::pendulum(2.0), pt(1.1, 0.2, 0.5));
    }

    #[test]
    fn newton_legendre_on_quartic_family() {
        let model = HamiltonianModel::new(
            Family::CustomCoefficients(CustomCoefficients {
                quartic: 0.5,
                drift: 0.2,
                ..Default::default()
            }),
            2,
        )
        .unwrap();
        let x = [0.3, 0.6];
        let v = [1.7, -0.4];
        let p = model.legendre_argmax(&x, 0.2, &v).unwrap();
        let dp = model.grad_h(&ContactPoint::new(x, 0.2, p)).dp;
        assert_abs_diff_eq!(dp[0], v[0], epsilon = 1e-10);
        assert_abs_diff_eq!(dp[1], v[1], epsilon = 1e-10);
        // sup over a lattice never beats the Newton value
        let l = model.eval_l(&x, 0.2, &v).unwrap();
        for i in 0..60 {
            for j in 0..60 {
                let q = [-3.0 + 0.1 * i as f64, -3.0 + 0.1 * j as f64];
                let val = v[0] * q[0] + v[1] * q[1] - model.eval_h(&ContactPoint::new(x, 0.2, q));
                assert!(val <= l + 1e-12);
            }
        }
    }

    #[test]
    fn audits() {
        let spec = SampleSpec::default();
        let r = HamiltonianModel::<f64>::quadratic_contact(1).audit(&spec);
        assert!(r.passed(), "{r}");
        assert_eq!(r.min_hess_eigenvalue, 1.0);
        assert_eq!((r.min_du, r.max_du), (1.0, 1.0));

        let r = HamiltonianModel::pendulum(2.0).audit(&spec);
        assert!(r.passed());
        assert_eq!(r.min_hess_eigenvalue, 1.0);
        assert_eq!((r.min_du, r.max_du), (1.0, 1.0));

        // dH/du = 1 + cos(2 pi x) vanishes at x = 1/2
        let broken = HamiltonianModel::new(
            Family::CustomCoefficients(CustomCoefficients {
                kappa1: 1.0,
                ..Default::default()
            }),
            1,
        )
        .unwrap();
        let r = broken.audit(&spec);
        assert!(!r.h3_pass);
        assert!(r.h1_pass);
        assert!(r.min_du.abs() < 1e-12);
        assert_abs_diff_eq!(r.min_du_at.x[0], 0.5, epsilon = 1e-12);

        let quartic = HamiltonianModel::new(
            Family::CustomCoefficients(CustomCoefficients {
                quartic: 0.1,
                ..Default::default()
            }),
            1,
        )
        .unwrap();
        assert!(quartic.audit(&spec).passed());
    }

    #[test]
    fn unknown_family_lists_valid_ones() {
        let err = "harmonic".parse::<FamilyTag>().unwrap_err();
        let msg = err.to_string();
        for name in FAMILY_NAMES {
            assert!(msg.contains(name));
        }
    }

    #[test]
    fn reduce_wraps_into_fundamental_domain() {
        let m = HamiltonianModel::<f64>::pendulum(2.0);
        let r = m.reduce([-0.5, 0.0]);
        assert_abs_diff_eq!(r[0], std::f64::consts::TAU - 0.5, epsilon = 1e-15);
        assert!(m.reduce([7.0, 0.0])[0] < std::f64::consts::TAU);
    }

    #[test]
    fn works_in_single_precision() {
        let m = HamiltonianModel::<f32>::pendulum(2.0);
        let l = m.eval_l(&[0.0, 0.0], 0.0, &[0.0, 0.0]).unwrap();
        assert!((l + 1.0).abs() < 1e-6);
    }

    proptest::proptest! {
        #[test]
        fn fenchel_equality_and_u_monotonicity(
            x in 0.0f64..1.0, u in -3.0f64..3.0, v in -5.0f64..5.0, du in 0.01f64..2.0,
            quartic in 0.0f64..0.5,
        ) {
            let model = HamiltonianModel::new(
                Family::CustomCoefficients(CustomCoefficients {
                    quartic,
                    potential: 0.4,
                    kappa1: 0.5,
                    ..Default::default()
                }),
                1,
            ).unwrap();
            let xv = [x, 0.0];
            let vv = [v, 0.0];
            let p = model.legendre_argmax(&xv, u, &vv).unwrap();
            let l = model.eval_l(&xv, u, &vv).unwrap();
            let h = model.eval_h(&ContactPoint::new(xv, u, p));
            proptest::prop_assert!((l + h - v * p[0]).abs() < 1e-9);
            let l2 = model.eval_l(&xv, u + du, &vv).unwrap();
            proptest::prop_assert!(l2 < l);
        }
    }
}
