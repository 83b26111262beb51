//! Named function families used by examples, tests and the CLI.

use crate::error::{check_dim, Error, Result};
use crate::field::ScalarField;
use crate::lipschitz::{mcshane_extend, EnvelopeExtension, FiniteSampleFunction};
use crate::normed_space::NormedSpace;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x ↦ c`.
#[derive(Clone, Debug)]
pub struct Constant {
    space: NormedSpace,
    value: f64,
}

impl Constant {
    pub fn new(space: NormedSpace, value: f64) -> Self {
        Constant { space, value }
    }
}

impl ScalarField for Constant {
    fn space(&self) -> &NormedSpace {
        &self.space
    }
    fn eval(&self, _x: &[f64]) -> f64 {
        self.value
    }
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; self.space.dim()])
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(0.0)
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        Some((self.value, self.value))
    }
}

/// `x ↦ median(lo, ω·x + c, hi)`: affine on the slab where it is not clamped.
#[derive(Clone, Debug)]
pub struct Affine {
    space: NormedSpace,
    omega: Vec<f64>,
    offset: f64,
    range: (f64, f64),
    lip: f64,
}

impl Affine {
    /// Clamped to `offset ± 1000`, far outside any desk-scale domain.
    pub fn new(space: NormedSpace, omega: Vec<f64>, offset: f64) -> Result<Self> {
        Affine::with_range(space, omega, offset, (offset - 1e3, offset + 1e3))
    }

    pub fn with_range(space: NormedSpace, omega: Vec<f64>, offset: f64, range: (f64, f64)) -> Result<Self> {
        check_dim(space.dim(), omega.len())?;
        if !(range.0 <= range.1) {
            return Err(Error::InvalidArgument("affine range must satisfy lo <= hi".into()));
        }
        let lip = space.dual_norm(&omega)?;
        Ok(Affine { space, omega, offset, range, lip })
    }

    pub fn linear_part(&self) -> &[f64] {
        &self.omega
    }
}

impl ScalarField for Affine {
    fn space(&self) -> &NormedSpace {
        &self.space
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (dot(&self.omega, x) + self.offset).clamp(self.range.0, self.range.1)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let v = dot(&self.omega, x) + self.offset;
        if v <= self.range.0 || v >= self.range.1 {
            Some(vec![0.0; self.space.dim()])
        } else {
            Some(self.omega.clone())
        }
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.lip)
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        Some(self.range)
    }
}

/// `x ↦ min(cap, ‖x‖₁)` with the coordinate ℓ1 norm, whatever the ambient norm.
#[derive(Clone, Debug)]
pub struct NormCone {
    space: NormedSpace,
    cap: f64,
    lip: f64,
}

impl NormCone {
    pub fn new(space: NormedSpace, cap: f64) -> Result<Self> {
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(Error::InvalidArgument("cone cap must be positive".into()));
        }
        let d = space.dim();
        if d > 20 {
            return Err(Error::BudgetExceeded("norm cone Lipschitz constant needs 2^dim sign vectors".into()));
        }
        // Lipschitz constant is the largest dual norm of a sign vector.
        let mut lip = 0.0_f64;
        for mask in 0..(1usize << d) {
            let s: Vec<f64> = (0..d).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
            lip = lip.max(space.dual_norm(&s)?);
        }
        Ok(NormCone { space, cap, lip })
    }
}

impl ScalarField for NormCone {
    fn space(&self) -> &NormedSpace {
        &self.space
    }
    fn eval(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v.abs()).sum::<f64>().min(self.cap)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n: f64 = x.iter().map(|v| v.abs()).sum();
        if n >= self.cap {
            Some(vec![0.0; x.len()])
        } else {
            Some(x.iter().map(|v| v.signum()).collect())
        }
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.lip)
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        Some((0.0, self.cap))
    }
}

/// `x ↦ min(cap, ‖x − c‖)` in the ambient norm.
#[derive(Clone, Debug)]
pub struct Kink {
    space: NormedSpace,
    center: Vec<f64>,
    cap: f64,
}

impl Kink {
    pub fn new(space: NormedSpace, center: Vec<f64>, cap: f64) -> Result<Self> {
        check_dim(space.dim(), center.len())?;
        if !(cap > 0.0) {
            return Err(Error::InvalidArgument("kink cap must be positive".into()));
        }
        Ok(Kink { space, center, cap })
    }
}

impl ScalarField for Kink {
    fn space(&self) -> &NormedSpace {
        &self.space
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.space.distance(x, &self.center).min(self.cap)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let diff: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        if self.space.norm(&diff) >= self.cap {
            Some(vec![0.0; x.len()])
        } else {
            Some(self.space.norm_gradient(&diff))
        }
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(1.0)
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        Some((0.0, if self.cap.is_finite() { self.cap } else { f64::INFINITY }))
    }
}

/// Piecewise-constant function on the line: `values[j]` on `[b_j, b_{j+1})`,
/// with `b_0 = −∞` and a final `b = +∞`.
#[derive(Clone, Debug)]
pub struct StepFunction {
    space: NormedSpace,
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(Error::InvalidArgument("a step function needs one more value than breaks".into()));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("breaks must be finite and strictly increasing".into()));
        }
        Ok(StepFunction { space: NormedSpace::euclidean(1), breaks, values })
    }

    /// Indicator of `[a, b)`.
    pub fn indicator(a: f64, b: f64) -> Result<Self> {
        StepFunction::new(vec![a, b], vec![0.0, 1.0, 0.0])
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    /// Total variation over the open interval `(lo, hi)`: jumps strictly inside it.
    pub fn variation_on(&self, lo: f64, hi: f64) -> f64 {
        self.interior_jumps(lo, hi).map(|(_, j)| j.abs()).sum()
    }

    /// `(location, signed jump)` for each break strictly inside `(lo, hi)`.
    pub fn interior_jumps(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breaks
            .iter()
            .enumerate()
            .filter(move |(_, b)| **b > lo && **b < hi)
            .map(|(i, b)| (*b, self.values[i + 1] - self.values[i]))
    }

    /// Lipschitz ramp approximation on `[lo, hi]`: across each break inside
    /// `(lo, hi)` the jump is spread linearly over `[b − w/2, b + w/2]`. Outside
    /// `[lo, hi]` the ramp keeps its boundary values.
    pub fn ramped(&self, width: f64, lo: f64, hi: f64) -> Result<RampedStep> {
        if !(width > 0.0) {
            return Err(Error::InvalidArgument("ramp width must be positive".into()));
        }
        let jumps: Vec<(f64, f64)> = self.interior_jumps(lo, hi).collect();
        if jumps.windows(2).any(|w| w[1].0 - w[0].0 <= width) {
            return Err(Error::InvalidArgument("ramp width exceeds the gap between breaks".into()));
        }
        let lip = jumps.iter().map(|(_, j)| j.abs()).fold(0.0, f64::max) / width;
        if !(lo < hi) {
            return Err(Error::InvalidArgument("ramp domain needs lo < hi".into()));
        }
        Ok(RampedStep { step: self.clone(), jumps, width, lip, domain: (lo, hi) })
    }
}

impl ScalarField for StepFunction {
    fn space(&self) -> &NormedSpace {
        &self.space
    }
    fn eval(&self, x: &[f64]) -> f64 {
        let j = self.breaks.partition_point(|b| *b <= x[0]);
        self.values[j]
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }
}

/// A [`StepFunction`] with its interior jumps replaced by linear ramps.
#[derive(Clone, Debug)]
pub struct RampedStep {
    step: StepFunction,
    jumps: Vec<(f64, f64)>,
    width: f64,
    lip: f64,
    domain: (f64, f64),
}

impl RampedStep {
    pub fn width(&self) -> f64 {
        self.width
    }

    fn active(&self, x: f64) -> Option<(f64, f64)> {
        self.jumps.iter().copied().find(|(b, _)| (x - b).abs() < self.width / 2.0)
    }
}

impl ScalarField for RampedStep {
    fn space(&self) -> &NormedSpace {
        &self.step.space
    }
    fn eval(&self, x: &[f64]) -> f64 {
        if x[0] >= self.domain.1 {
            // limit from inside the domain
            let j = self.step.breaks.partition_point(|b| *b < self.domain.1);
            return self.step.values[j];
        }
        let t = x[0].max(self.domain.0);
        match self.active(t) {
            Some((b, jump)) => {
                let left = self.step.eval(&[b - self.width]);
                left + jump * ((t - b) / self.width + 0.5)
            }
            None => self.step.eval(&[t]),
        }
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        if x[0] < self.domain.0 || x[0] > self.domain.1 {
            return Some(vec![0.0]);
        }
        Some(vec![self.active(x[0]).map_or(0.0, |(_, j)| j / self.width)])
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.lip)
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        self.step.bounds()
    }
}

/// Indicator of a simple polygon in the plane (closed boundary counted inside).
#[derive(Clone, Debug)]
pub struct PolygonIndicator {
    space: NormedSpace,
    vertices: Vec<[f64; 2]>,
}

impl PolygonIndicator {
    pub fn new(space: NormedSpace, vertices: Vec<[f64; 2]>) -> Result<Self> {
        check_dim(2, space.dim())?;
        if vertices.len() < 3 {
            return Err(Error::InvalidArgument("a polygon needs at least 3 vertices".into()));
        }
        Ok(PolygonIndicator { space, vertices })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn contains(&self, p: &[f64]) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let t = (p[1] - a[1]) / (b[1] - a[1]);
                if p[0] < a[0] + t * (b[0] - a[0]) {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Euclidean signed distance to the boundary (negative inside) and its gradient.
    pub fn signed_distance(&self, p: &[f64]) -> (f64, [f64; 2]) {
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for (a, b) in self.edges() {
            let e = [b[0] - a[0], b[1] - a[1]];
            let len2 = e[0] * e[0] + e[1] * e[1];
            let t = (((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / len2).clamp(0.0, 1.0);
            let q = [a[0] + t * e[0], a[1] + t * e[1]];
            let diff = [p[0] - q[0], p[1] - q[1]];
            let d = (diff[0] * diff[0] + diff[1] * diff[1]).sqrt();
            if d < best.0 {
                let dir = if d > 0.0 { [diff[0] / d, diff[1] / d] } else { [0.0, 0.0] };
                best = (d, dir);
            }
        }
        if self.contains(p) {
            (-best.0, [-best.1[0], -best.1[1]])
        } else {
            best
        }
    }

    /// Perimeter measured with the dual norm of the unit normals:
    /// `Σ_edges |e|₂ ‖ν_e‖_*`. This is the total variation of the indicator
    /// when the ambient norm is used for slopes.
    pub fn anisotropic_perimeter(&self) -> Result<f64> {
        let mut total = 0.0;
        for (a, b) in self.edges() {
            let e = [b[0] - a[0], b[1] - a[1]];
            let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
            let normal = [e[1] / len, -e[0] / len];
            total += len * self.space.dual_norm(&normal)?;
        }
        Ok(total)
    }

    /// `clamp(1/2 − sd/w, 0, 1)` with `sd` the signed distance.
    pub fn ramped(&self, width: f64) -> Result<RampedPolygon> {
        if !(width > 0.0) {
            return Err(Error::InvalidArgument("ramp width must be positive".into()));
        }
        let lip = self.space.dual_norm(&[1.0, 0.0])?.max(self.space.dual_norm(&[0.0, 1.0])?);
        // Bound for ‖ν‖_* over Euclidean unit vectors: at most √2 times the axis maximum.
        let lip = lip * std::f64::consts::SQRT_2 / width;
        Ok(RampedPolygon { polygon: self.clone(), width, lip })
    }
}

impl ScalarField for PolygonIndicator {
    fn space(&self) -> &NormedSpace {
        &self.space
    }
    fn eval(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            1.0
        } else {
            0.0
        }
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        Some((0.0, 1.0))
    }
}

/// Lipschitz approximation of a [`PolygonIndicator`] across a band of width `w`.
#[derive(Clone, Debug)]
pub struct RampedPolygon {
    polygon: PolygonIndicator,
    width: f64,
    lip: f64,
}

impl ScalarField for RampedPolygon {
    fn space(&self) -> &NormedSpace {
        &self.polygon.space
    }
    fn eval(&self, x: &[f64]) -> f64 {
        let (sd, _) = self.polygon.signed_distance(x);
        (0.5 - sd / self.width).clamp(0.0, 1.0)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (sd, dir) = self.polygon.signed_distance(x);
        if (0.5 - sd / self.width) <= 0.0 || (0.5 - sd / self.width) >= 1.0 {
            return Some(vec![0.0, 0.0]);
        }
        Some(vec![-dir[0] / self.width, -dir[1] / self.width])
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.lip)
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        Some((0.0, 1.0))
    }
}

/// Clamped McShane extension of grid or scattered samples.
pub fn sampled_field(base: &FiniteSampleFunction) -> Result<EnvelopeExtension> {
    let l = base.lipschitz_constant();
    let e = mcshane_extend(base, l)?;
    EnvelopeExtension::new(
        base.space().clone(),
        e.anchors().to_vec(),
        e.values().to_vec(),
        l,
        0.0,
        Some(base.value_range()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::finite_difference_gradient;

    #[test]
    fn cone_lipschitz_constant_matches_norm() {
        let c = NormCone::new(NormedSpace::sup(2), 1.0).unwrap();
        assert_eq!(c.lipschitz_bound(), Some(2.0));
        let c = NormCone::new(NormedSpace::l1(3), 1.0).unwrap();
        assert_eq!(c.lipschitz_bound(), Some(1.0));
        assert!((c.eval(&[0.2, -0.3, 0.1]) - 0.6).abs() < 1e-15);
        assert_eq!(c.eval(&[2.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn step_variation_counts_interior_jumps() {
        let s = StepFunction::indicator(0.5, 1.0).unwrap();
        assert_eq!(s.eval(&[0.5]), 1.0);
        assert_eq!(s.eval(&[0.49]), 0.0);
        assert_eq!(s.variation_on(0.0, 1.0), 1.0);
        assert_eq!(s.variation_on(0.0, 2.0), 2.0);
    }

    #[test]
    fn ramp_interpolates() {
        let s = StepFunction::indicator(0.5, 1.0).unwrap();
        let r = s.ramped(0.1, 0.0, 1.0).unwrap();
        assert!((r.eval(&[0.5]) - 0.5).abs() < 1e-15);
        assert!((r.eval(&[0.475]) - 0.25).abs() < 1e-12);
        assert_eq!(r.eval(&[0.6]), 1.0);
        assert_eq!(r.eval(&[0.4]), 0.0);
        assert_eq!(r.lipschitz_bound(), Some(10.0));
        assert_eq!(r.gradient(&[0.52]).unwrap(), vec![10.0]);
    }

    #[test]
    fn polygon_signed_distance_and_perimeter() {
        let sq = PolygonIndicator::new(
            NormedSpace::euclidean(2),
            vec![[0.25, 0.25], [0.75, 0.25], [0.75, 0.75], [0.25, 0.75]],
        )
        .unwrap();
        assert_eq!(sq.eval(&[0.5, 0.5]), 1.0);
        assert_eq!(sq.eval(&[0.1, 0.5]), 0.0);
        assert!((sq.signed_distance(&[0.5, 0.5]).0 + 0.25).abs() < 1e-15);
        assert!((sq.anisotropic_perimeter().unwrap() - 2.0).abs() < 1e-15);
        let sq_inf = PolygonIndicator::new(NormedSpace::sup(2), sq.vertices().to_vec()).unwrap();
        assert!((sq_inf.anisotropic_perimeter().unwrap() - 2.0).abs() < 1e-15);
        let r = sq.ramped(0.05).unwrap();
        let x = [0.26, 0.5];
        let fd = finite_difference_gradient(&r, &x, 1e-7);
        let g = r.gradient(&x).unwrap();
        assert!((fd[0] - g[0]).abs() < 1e-4 * g[0].abs());
    }

    #[test]
    fn affine_gradient_and_bounds() {
        let a = Affine::new(NormedSpace::sup(2), vec![1.0, 1.0], 0.5).unwrap();
        assert_eq!(a.lipschitz_bound(), Some(2.0));
        assert_eq!(a.eval(&[1.0, 2.0]), 3.5);
        assert_eq!(a.gradient(&[1.0, 2.0]).unwrap(), vec![1.0, 1.0]);
    }
}
