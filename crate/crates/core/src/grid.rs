//! Node-centred periodic grids on `T^d`, scalar fields and interpolation.

use std::io::{self, Write};

use crate::error::{usage, Error, Result};
use crate::scalar::{zero_vec, Real, Vector};

/// Formats a value with 17 significant digits.
pub fn fmt_real<T: Real>(v: T) -> String {
    format!("{:.16e}", v)
}

/// Shortest displacement from `from` to `to` on a torus with the given periods.
///
/// Each component lies in `(-l/2, l/2]`; the cut locus resolves toward the
/// positive direction.
pub fn torus_displacement<T: Real>(
    lengths: &Vector<T>,
    dim: usize,
    from: &Vector<T>,
    to: &Vector<T>,
) -> Vector<T> {
    let half = T::lit(0.5);
    let mut d = zero_vec();
    for k in 0..dim {
        let l = lengths[k];
        let mut r = (to[k] - from[k]) / l;
        r = r - r.round();
        if r <= -half {
            r += T::one();
        }
        if r > half {
            r -= T::one();
        }
        d[k] = r * l;
    }
    d
}

pub fn torus_distance<T: Real>(lengths: &Vector<T>, dim: usize, a: &Vector<T>, b: &Vector<T>) -> T {
    let d = torus_displacement(lengths, dim, a, b);
    let mut s = T::zero();
    for v in d.iter().take(dim) {
        s += *v * *v;
    }
    s.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicGrid<T> {
    dim: usize,
    n: usize,
    lengths: Vector<T>,
}

impl<T: Real> PeriodicGrid<T> {
    pub fn new(dim: usize, n: usize, lengths: Vector<T>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return usage(format!("grid dimension must be 1 or 2, got {dim}"));
        }
        if n < 8 {
            return usage(format!("grid needs at least 8 points per axis, got {n}"));
        }
        if lengths[..dim].iter().any(|l| !(*l > T::zero()) || !l.is_finite()) {
            return usage("grid lengths must be positive and finite");
        }
        Ok(Self { dim, n, lengths })
    }

    /// Grid matching a model's torus.
    pub fn for_model(model: &crate::model::HamiltonianModel<T>, n: usize) -> Result<Self> {
        Self::new(model.dim, n, model.circle_lengths)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lengths(&self) -> Vector<T> {
        self.lengths
    }

    /// Total node count `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> T {
        self.lengths[axis] / T::count(self.n)
    }

    pub fn min_spacing(&self) -> T {
        (0..self.dim)
            .map(|k| self.spacing(k))
            .fold(T::infinity(), T::min)
    }

    /// Per-axis indices of a flat node index; axis 0 varies fastest.
    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        [idx % self.n, idx / self.n]
    }

    #[inline]
    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        mi[0] + if self.dim == 2 { self.n * mi[1] } else { 0 }
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> Vector<T> {
        let mi = self.multi_index(idx);
        let mut x = zero_vec();
        for k in 0..self.dim {
            x[k] = T::count(mi[k]) * self.spacing(k);
        }
        x
    }

    /// Node reached by moving `offset` cells along `axis`, with wraparound.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let mut mi = self.multi_index(idx);
        let n = self.n as isize;
        mi[axis] = ((mi[axis] as isize + offset).rem_euclid(n)) as usize;
        self.flat_index(mi)
    }

    pub fn displacement(&self, from: &Vector<T>, to: &Vector<T>) -> Vector<T> {
        torus_displacement(&self.lengths, self.dim, from, to)
    }

    pub fn distance(&self, a: &Vector<T>, b: &Vector<T>) -> T {
        torus_distance(&self.lengths, self.dim, a, b)
    }

    /// Nearest node to `x`.
    pub fn nearest_node(&self, x: &Vector<T>) -> usize {
        let mut mi = [0usize; 2];
        for k in 0..self.dim {
            let s = (x[k] / self.spacing(k)).round().to_f64_lossy() as i64;
            mi[k] = s.rem_euclid(self.n as i64) as usize;
        }
        self.flat_index(mi)
    }

    /// Multilinear interpolation of a per-node quantity given by `value`.
    pub fn interpolate_nodes(&self, x: &Vector<T>, value: impl Fn(usize) -> T) -> T {
        let (base, w) = self.locate(x);
        let one = T::one();
        let up = |i: usize| if i + 1 == self.n { 0 } else { i + 1 };
        if self.dim == 1 {
            return (one - w[0]) * value(base[0]) + w[0] * value(up(base[0]));
        }
        let (i0, j0) = (base[0], base[1]);
        let (i1, j1) = (up(i0), up(j0));
        let v = |i: usize, j: usize| value(i + self.n * j);
        let lo = (one - w[0]) * v(i0, j0) + w[0] * v(i1, j0);
        let hi = (one - w[0]) * v(i0, j1) + w[0] * v(i1, j1);
        (one - w[1]) * lo + w[1] * hi
    }

    /// Interpolation stencil: per-axis lower node index and weight of the upper node.
    #[inline]
    fn locate(&self, x: &Vector<T>) -> ([usize; 2], Vector<T>) {
        let mut base = [0usize; 2];
        let mut w = zero_vec();
        let n = T::count(self.n);
        for k in 0..self.dim {
            let mut s = x[k] / self.spacing(k);
            s = s - (s / n).floor() * n;
            let mut i = s.floor();
            let mut frac = s - i;
            if i >= n {
                i = T::zero();
                frac = T::zero();
            }
            base[k] = i.to_usize().unwrap_or(0).min(self.n - 1);
            w[k] = frac;
        }
        (base, w)
    }
}

/// Finite-difference stencil choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Central,
    Left,
    Right,
}

impl GradientMode {
    pub const ALL: [GradientMode; 3] = [GradientMode::Central, GradientMode::Left, GradientMode::Right];
}

/// Scalar field sampled at the nodes of a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField<T> {
    grid: PeriodicGrid<T>,
    values: Vec<T>,
}

impl<T: Real> GridField<T> {
    pub fn new(grid: PeriodicGrid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return usage(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite field value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    /// Field without the finiteness check; callers guarantee finite values.
    pub(crate) fn from_values_unchecked(grid: PeriodicGrid<T>, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: PeriodicGrid<T>, c: T) -> Self {
        Self {
            values: vec![c; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: PeriodicGrid<T>, f: impl Fn(&Vector<T>) -> T) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coord(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &PeriodicGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn value(&self, idx: usize) -> T {
        self.values[idx]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::count(self.values.len())
    }

    /// Multilinear periodic interpolation; exact at nodes.
    #[inline]
    pub fn interpolate(&self, x: &Vector<T>) -> T {
        let (base, w) = self.grid.locate(x);
        let n = self.grid.n;
        let one = T::one();
        if self.grid.dim == 1 {
            let i = base[0];
            let j = if i + 1 == n { 0 } else { i + 1 };
            return (one - w[0]) * self.values[i] + w[0] * self.values[j];
        }
        let i0 = base[0];
        let i1 = if i0 + 1 == n { 0 } else { i0 + 1 };
        let j0 = base[1];
        let j1 = if j0 + 1 == n { 0 } else { j0 + 1 };
        let v = |i: usize, j: usize| self.values[i + n * j];
        let lo = (one - w[0]) * v(i0, j0) + w[0] * v(i1, j0);
        let hi = (one - w[0]) * v(i0, j1) + w[0] * v(i1, j1);
        (one - w[1]) * lo + w[1] * hi
    }

    /// Finite-difference gradient at a node with periodic wraparound.
    pub fn gradient(&self, idx: usize, mode: GradientMode) -> Vector<T> {
        let mut g = zero_vec();
        for (k, gk) in g.iter_mut().enumerate().take(self.grid.dim) {
            *gk = self.axis_derivative(idx, k, mode);
        }
        g
    }

    /// One component of [`GridField::gradient`].
    #[inline]
    pub fn axis_derivative(&self, idx: usize, axis: usize, mode: GradientMode) -> T {
        let h = self.grid.spacing(axis);
        let v = |off: isize| self.values[self.grid.neighbor(idx, axis, off)];
        match mode {
            GradientMode::Central => (v(1) - v(-1)) / (T::lit(2.0) * h),
            GradientMode::Left => (self.values[idx] - v(-1)) / h,
            GradientMode::Right => (v(1) - self.values[idx]) / h,
        }
    }

    /// Central gradient interpolated to an arbitrary point.
    pub fn interpolate_gradient(&self, x: &Vector<T>) -> Vector<T> {
        let mut g = zero_vec();
        for (k, gk) in g.iter_mut().enumerate().take(self.grid.dim) {
            *gk = self
                .grid
                .interpolate_nodes(x, |i| self.axis_derivative(i, k, GradientMode::Central));
        }
        g
    }

    /// `max |f - g|` over nodes.
    pub fn sup_distance(&self, other: &Self) -> Result<T> {
        if self.grid != other.grid {
            return usage("sup_distance on fields over different grids");
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs())))
    }

    /// Nodewise `self - other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return usage("difference of fields over different grids");
        }
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| *a - *b)
                .collect(),
        })
    }

    /// Writes `x1[,x2],value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        if self.grid.dim == 1 {
            writeln!(w, "x1,value")?;
        } else {
            writeln!(w, "x1,x2,value")?;
        }
        for (i, v) in self.values.iter().enumerate() {
            let x = self.grid.coord(i);
            for xk in x.iter().take(self.grid.dim) {
                write!(w, "{},", fmt_real(*xk))?;
            }
            writeln!(w, "{}", fmt_real(*v))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid1(n: usize) -> PeriodicGrid<f64> {
        PeriodicGrid::new(1, n, [1.0, 1.0]).unwrap()
    }

    #[test]
    fn rejects_coarse_grids() {
        assert!(PeriodicGrid::<f64>::new(1, 4, [1.0, 1.0]).is_err());
        assert!(PeriodicGrid::<f64>::new(3, 16, [1.0, 1.0]).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let g = grid1(8);
        let c = GridField::constant(g, 2.5);
        assert_eq!(c.interpolate(&[0.3141, 0.0]), 2.5);

        // n = 4 violates the grid minimum, so emulate the four-node example on n = 8
        // with the same piecewise-linear data: (0, 1, 0, -1) at 0, 1/4, 1/2, 3/4.
        let f = GridField::from_fn(g, |x| {
            let t = x[0] * 4.0;
            let k = t.floor();
            let vals = [0.0, 1.0, 0.0, -1.0, 0.0];
            let i = k as usize;
            vals[i] + (t - k) * (vals[i + 1] - vals[i])
        });
        assert_abs_diff_eq!(f.interpolate(&[0.125, 0.0]), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(f.interpolate(&[1.125, 0.0]), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(f.interpolate(&[-0.125, 0.0]), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn interpolation_error_bound_for_sine() {
        let n = 256;
        let g = grid1(n);
        let f = GridField::from_fn(g, |x| (std::f64::consts::TAU * x[0]).sin());
        let h = 1.0 / n as f64;
        let bound = std::f64::consts::TAU.powi(2) * h * h / 8.0;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 1..8 {
                let x = (i as f64 + j as f64 / 8.0) * h;
                worst = worst.max((f.interpolate(&[x, 0.0]) - (std::f64::consts::TAU * x).sin()).abs());
            }
        }
        assert!(worst <= bound, "{worst} > {bound}");
    }

    #[test]
    fn bilinear_reproduces_bilinear_data() {
        let g = PeriodicGrid::new(2, 16, [1.0, 2.0]).unwrap();
        // (x,y) -> x*y is bilinear inside one cell
        let f = GridField::from_fn(g, |x| x[0] * x[1]);
        let p = [0.3 + 0.01, 0.5 + 0.02];
        assert_abs_diff_eq!(f.interpolate(&p), p[0] * p[1], epsilon = 1e-14);
    }

    #[test]
    fn gradient_examples() {
        let g = grid1(64);
        let c = GridField::constant(g, 3.0);
        for mode in GradientMode::ALL {
            assert_eq!(c.gradient(10, mode)[0], 0.0);
        }
        // sawtooth x - 1/2 with the seam at 0
        let saw = GridField::from_fn(g, |x| x[0] - 0.5);
        for i in 2..62 {
            assert_abs_diff_eq!(saw.gradient(i, GradientMode::Central)[0], 1.0, epsilon = 1e-12);
        }

        let n = 512;
        let g = grid1(n);
        let tau = std::f64::consts::TAU;
        let w = GridField::from_fn(g, |x| 0.3 * (tau * x[0]).cos());
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let x = g.coord(i)[0];
            let exact = -0.3 * tau * (tau * x).sin();
            worst = worst.max((w.gradient(i, GradientMode::Central)[0] - exact).abs());
        }
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn sup_distance_examples() {
        let g = grid1(32);
        let f = GridField::from_fn(g, |x| (7.0 * x[0]).sin());
        assert_eq!(f.sup_distance(&f).unwrap(), 0.0);
        let shifted = f.map(|v| v + 0.3);
        assert_abs_diff_eq!(f.sup_distance(&shifted).unwrap(), 0.3, epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = GridField::new(g, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = GridField::new(g, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut brute: f64 = 0.0;
        for i in 0..32 {
            brute = brute.max((a.value(i) - b.value(i)).abs());
        }
        assert_eq!(a.sup_distance(&b).unwrap(), brute);

        let other = GridField::constant(grid1(16), 0.0);
        assert!(a.sup_distance(&other).is_err());
    }

    #[test]
    fn displacement_ties_go_positive() {
        let l = [1.0, 1.0];
        let d = torus_displacement(&l, 1, &[0.0, 0.0], &[0.5, 0.0]);
        assert_eq!(d[0], 0.5);
        let d = torus_displacement(&l, 1, &[0.5, 0.0], &[0.0, 0.0]);
        assert_eq!(d[0], 0.5);
        let d = torus_displacement(&l, 1, &[0.9, 0.0], &[0.1, 0.0]);
        assert_abs_diff_eq!(d[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn csv_layout() {
        let g = grid1(8);
        let f = GridField::constant(g, 1.0);
        let mut out = Vec::new();
        f.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x1,value"));
        assert_eq!(
            lines.next(),
            Some("0.0000000000000000e0,1.0000000000000000e0")
        );
        assert_eq!(text.lines().count(), 9);
    }

    proptest! {
        #[test]
        fn interpolation_is_monotone_in_nodal_values(
            vals in proptest::collection::vec(-1.0f64..1.0, 16),
            bump in 0.0f64..1.0, node in 0usize..16, x in -2.0f64..2.0,
        ) {
            let g = grid1(16);
            let f = GridField::new(g, vals.clone()).unwrap();
            let mut raised = vals;
            raised[node] += bump;
            let r = GridField::new(g, raised).unwrap();
            prop_assert!(r.interpolate(&[x, 0.0]) >= f.interpolate(&[x, 0.0]));
            let v = f.interpolate(&[x, 0.0]);
            prop_assert!(v >= f.min() - 1e-15 && v <= f.max() + 1e-15);
        }

        #[test]
        fn sup_distance_is_a_metric(
            a in proptest::collection::vec(-1.0f64..1.0, 16),
            b in proptest::collection::vec(-1.0f64..1.0, 16),
            c in proptest::collection::vec(-1.0f64..1.0, 16),
        ) {
            let g = grid1(16);
            let (fa, fb, fc) = (
                GridField::new(g, a).unwrap(),
                GridField::new(g, b).unwrap(),
                GridField::new(g, c).unwrap(),
            );
            let ab = fa.sup_distance(&fb).unwrap();
            prop_assert_eq!(ab, fb.sup_distance(&fa).unwrap());
            prop_assert!(ab <= fa.sup_distance(&fc).unwrap() + fc.sup_distance(&fb).unwrap() + 1e-15);
        }
    }
}
