//! Lipschitz constants on finite sets, asymptotic-slope estimation and
//! Lipschitz extensions from finite sets (McShane and plateau envelopes).

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::field::{gradient_or_fd, ScalarField};
use crate::normed_space::NormedSpace;
use crate::sampling;

/// Values attached to a finite set of pairwise distinct points.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteSampleFunction {
    space: NormedSpace,
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    min_separation: f64,
}

impl FiniteSampleFunction {
    pub fn new(space: NormedSpace, points: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("empty point set".into()));
        }
        if points.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        for p in &points {
            check_dim(space.dim(), p.len())?;
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite sample value".into()));
        }
        let min_separation = min_separation(&space, &points)?;
        Ok(FiniteSampleFunction { space, points, values, min_separation })
    }

    pub fn space(&self) -> &NormedSpace {
        &self.space
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest pairwise distance; infinite for a single point.
    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }

    pub fn value_range(&self) -> (f64, f64) {
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Brute-force Lipschitz constant over all pairs.
    pub fn lipschitz_constant(&self) -> f64 {
        pairwise_max(&self.space, &self.points, &self.values)
    }

    /// Reads rows `x_1, …, x_d, value`. A header row is expected.
    pub fn read_csv<R: Read>(space: NormedSpace, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let mut points = Vec::new();
        let mut values = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            check_dim(space.dim() + 1, record.len())?;
            let nums: Vec<f64> = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("row {}: bad number {s:?}", row + 1)))
                })
                .collect::<Result<_>>()?;
            values.push(nums[space.dim()]);
            points.push(nums[..space.dim()].to_vec());
        }
        FiniteSampleFunction::new(space, points, values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header: Vec<String> = (1..=self.space.dim()).map(|i| format!("x_{i}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (p, v) in self.points.iter().zip(&self.values) {
            let row: Vec<String> = p.iter().chain(std::iter::once(v)).map(|x| format_f64(*x)).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fixed 17-significant-digit rendering used by every CSV writer.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn min_separation(space: &NormedSpace, points: &[Vec<f64>]) -> Result<f64> {
    let found = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in i + 1..points.len() {
                let d = space.distance(&points[i], &points[j]);
                if d < best.0 {
                    best = (d, j);
                }
            }
            (best.0, i, best.1)
        })
        .reduce(|| (f64::INFINITY, usize::MAX, usize::MAX), |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    if found.0 == 0.0 {
        return Err(Error::DuplicatePoints(found.1, found.2));
    }
    Ok(found.0)
}

fn pairwise_max(space: &NormedSpace, points: &[Vec<f64>], values: &[f64]) -> f64 {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0_f64;
            for j in i + 1..points.len() {
                let d = space.distance(&points[i], &points[j]);
                best = best.max((values[i] - values[j]).abs() / d);
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// `Lip(f; E)`: the largest difference quotient over distinct pairs of `E`.
pub fn lip_on_set(f: &(impl ScalarField + ?Sized), points: &[Vec<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty point set".into()));
    }
    for p in points {
        check_dim(f.space().dim(), p.len())?;
    }
    min_separation(f.space(), points)?;
    let values: Vec<f64> = points.iter().map(|p| f.eval(p)).collect();
    Ok(pairwise_max(f.space(), points, &values))
}

pub fn lip_of_samples(base: &FiniteSampleFunction) -> f64 {
    base.lipschitz_constant()
}

/// A lower bound for `Lip(f; B_r(center))` built from points of the open ball:
/// the centre, the `extra` points that lie in the ball, and `samples` uniform
/// draws. It combines pairwise quotients among centre and draws with quotients
/// taken from every point along the direction that attains the dual norm of
/// the (declared or finite-difference) gradient there.
pub fn local_lipschitz_lower_bound(
    f: &(impl ScalarField + ?Sized),
    center: &[f64],
    radius: f64,
    extra: &[Vec<f64>],
    samples: usize,
    seed: u64,
) -> f64 {
    let space = f.space();
    let mut rng = sampling::rng(seed);
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(1 + samples + extra.len());
    pts.push(center.to_vec());
    for _ in 0..samples {
        pts.push(space.sample_ball(center, radius, &mut rng));
    }
    let drawn = pts.len();
    pts.extend(extra.iter().filter(|p| space.distance(p, center) < radius).cloned());
    let vals: Vec<f64> = pts.iter().map(|p| f.eval(p)).collect();

    // shorter separations let value rounding dominate the quotient
    let min_sep = radius / 128.0;
    let mut best = 0.0_f64;
    for i in 0..drawn {
        for j in i + 1..drawn {
            let d = space.distance(&pts[i], &pts[j]);
            if d >= min_sep {
                best = best.max((vals[i] - vals[j]).abs() / d);
            }
        }
    }
    for j in drawn..pts.len() {
        let d = space.distance(&pts[0], &pts[j]);
        if d >= min_sep {
            best = best.max((vals[0] - vals[j]).abs() / d);
        }
    }
    let mut probe = vec![0.0; space.dim()];
    for (z, fz) in pts.iter().zip(&vals) {
        let g = gradient_or_fd(f, z);
        if g.iter().all(|x| *x == 0.0 || !x.is_finite()) {
            continue;
        }
        let Ok(pair) = space.dual_norm_with_witness(&g) else { continue };
        let avail = radius - space.distance(z, center);
        for s in [avail / 2.0, avail / 64.0] {
            if !(s > 0.0) {
                continue;
            }
            for (q, (zi, vi)) in probe.iter_mut().zip(z.iter().zip(&pair.witness)) {
                *q = zi + s * vi;
            }
            if space.distance(&probe, center) >= radius {
                continue;
            }
            let d = space.distance(&probe, z);
            if d >= min_sep {
                best = best.max((f.eval(&probe) - fz).abs() / d);
            }
        }
    }
    best
}

/// Result of [`asymptotic_slope`].
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeEstimate {
    /// Estimate at the smallest radius.
    pub estimate: f64,
    /// `(radius, estimate of Lip(f; B_radius(x)))` in schedule order.
    pub trace: Vec<(f64, f64)>,
}

/// Estimates `lip_a(f)(x) = inf_r Lip(f; B_r(x))` along a strictly decreasing
/// radius schedule. Each radius uses an independent seeded stream.
pub fn asymptotic_slope(
    f: &(impl ScalarField + ?Sized),
    x: &[f64],
    radii: &[f64],
    samples_per_radius: usize,
    seed: u64,
) -> Result<SlopeEstimate> {
    check_dim(f.space().dim(), x.len())?;
    if radii.is_empty() {
        return Err(Error::InvalidArgument("empty radius schedule".into()));
    }
    if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("radius schedule must be positive and strictly decreasing".into()));
    }
    if samples_per_radius < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples per radius".into()));
    }
    let trace: Vec<(f64, f64)> = radii
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let est = local_lipschitz_lower_bound(
                f,
                x,
                r,
                &[],
                samples_per_radius,
                sampling::derive_seed(seed, i as u64),
            );
            (r, est)
        })
        .collect();
    Ok(SlopeEstimate { estimate: trace.last().expect("nonempty").1, trace })
}

/// `y ↦ median(m, min_x [v_x + L·max(0, ‖y − x‖ − r)], M)`.
///
/// With `r = 0` and no clamp this is the McShane extension; with `r > 0` it is
/// the plateau extension.
#[derive(Clone, Debug)]
pub struct EnvelopeExtension {
    space: NormedSpace,
    anchors: Vec<Vec<f64>>,
    values: Vec<f64>,
    slope: f64,
    plateau: f64,
    clamp: Option<(f64, f64)>,
}

impl EnvelopeExtension {
    pub fn new(
        space: NormedSpace,
        anchors: Vec<Vec<f64>>,
        values: Vec<f64>,
        slope: f64,
        plateau: f64,
        clamp: Option<(f64, f64)>,
    ) -> Result<Self> {
        if anchors.is_empty() || anchors.len() != values.len() {
            return Err(Error::InvalidArgument("envelope needs matching nonempty anchors and values".into()));
        }
        for a in &anchors {
            check_dim(space.dim(), a.len())?;
        }
        if !(slope >= 0.0 && slope.is_finite()) || !(plateau >= 0.0) {
            return Err(Error::InvalidArgument("envelope slope and plateau must be nonnegative".into()));
        }
        Ok(EnvelopeExtension { space, anchors, values, slope, plateau, clamp })
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn plateau_radius(&self) -> f64 {
        self.plateau
    }

    pub fn clamp(&self) -> Option<(f64, f64)> {
        self.clamp
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn excess(&self, d: f64) -> f64 {
        if self.plateau.is_infinite() {
            0.0
        } else {
            (d - self.plateau).max(0.0)
        }
    }

    fn argmin(&self, y: &[f64]) -> (usize, f64, f64) {
        let mut best = (0, f64::INFINITY, 0.0);
        for (i, (a, v)) in self.anchors.iter().zip(&self.values).enumerate() {
            let d = self.space.distance(y, a);
            if d == 0.0 {
                // on E the envelope equals the data; other terms can only undercut by rounding
                return (i, *v, 0.0);
            }
            let t = v + self.slope * self.excess(d);
            if t < best.1 {
                best = (i, t, d);
            }
        }
        best
    }

    /// The unclamped lower envelope `min_x [v_x + L·max(0, ‖y − x‖ − r)]`.
    pub fn lower_envelope(&self, y: &[f64]) -> f64 {
        self.argmin(y).1
    }

    /// The unclamped upper envelope `max_x [v_x − L·max(0, ‖y − x‖ − r)]`.
    pub fn upper_envelope(&self, y: &[f64]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (a, v) in self.anchors.iter().zip(&self.values) {
            let d = self.space.distance(y, a);
            if d == 0.0 {
                return *v;
            }
            best = best.max(v - self.slope * self.excess(d));
        }
        best
    }

    /// An envelope with fewer anchors that agrees with `self` on `B_radius(center)`.
    pub fn localized(&self, center: &[f64], radius: f64) -> EnvelopeExtension {
        let dists: Vec<f64> = self.anchors.iter().map(|a| self.space.distance(center, a)).collect();
        let upper = dists
            .iter()
            .zip(&self.values)
            .map(|(d, v)| v + self.slope * self.excess(d + radius))
            .fold(f64::INFINITY, f64::min);
        let keep: Vec<usize> = (0..self.anchors.len())
            .filter(|&i| self.values[i] + self.slope * self.excess((dists[i] - radius).max(0.0)) <= upper)
            .collect();
        EnvelopeExtension {
            space: self.space.clone(),
            anchors: keep.iter().map(|&i| self.anchors[i].clone()).collect(),
            values: keep.iter().map(|&i| self.values[i]).collect(),
            slope: self.slope,
            plateau: self.plateau,
            clamp: self.clamp,
        }
    }
}

impl ScalarField for EnvelopeExtension {
    fn space(&self) -> &NormedSpace {
        &self.space
    }

    fn eval(&self, y: &[f64]) -> f64 {
        let v = self.lower_envelope(y);
        match self.clamp {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }

    /// Gradient of the active envelope piece; defined off a null set.
    fn gradient(&self, y: &[f64]) -> Option<Vec<f64>> {
        let (i, v, d) = self.argmin(y);
        let flat = vec![0.0; self.space.dim()];
        if let Some((lo, hi)) = self.clamp {
            if v <= lo || v >= hi {
                return Some(flat);
            }
        }
        if self.excess(d) <= 0.0 {
            return Some(flat);
        }
        let diff: Vec<f64> = y.iter().zip(&self.anchors[i]).map(|(a, b)| a - b).collect();
        Some(self.space.norm_gradient(&diff).into_iter().map(|g| g * self.slope).collect())
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.slope)
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        self.clamp
    }
}

/// `y ↦ min_x (v_x + L‖y − x‖)`.
pub fn mcshane_extend(base: &FiniteSampleFunction, slope: f64) -> Result<EnvelopeExtension> {
    let required = base.lipschitz_constant();
    if !(slope >= required) {
        return Err(Error::LipschitzTooSmall { requested: slope, required });
    }
    EnvelopeExtension::new(
        base.space().clone(),
        base.points().to_vec(),
        base.values().to_vec(),
        slope,
        0.0,
        None,
    )
}

/// An `(L + ε)`-Lipschitz extension that is constant on a ball around each data point.
#[derive(Clone, Debug)]
pub struct PlateauExtension {
    base: FiniteSampleFunction,
    envelope: EnvelopeExtension,
}

impl PlateauExtension {
    pub fn base(&self) -> &FiniteSampleFunction {
        &self.base
    }

    pub fn envelope(&self) -> &EnvelopeExtension {
        &self.envelope
    }

    pub fn slope(&self) -> f64 {
        self.envelope.slope
    }

    /// Radius of the constancy ball around each base point (infinite for one point).
    pub fn radius(&self) -> f64 {
        self.envelope.plateau
    }

    pub fn clamp(&self) -> (f64, f64) {
        self.envelope.clamp.expect("plateau extensions are clamped")
    }
}

impl ScalarField for PlateauExtension {
    fn space(&self) -> &NormedSpace {
        self.envelope.space()
    }

    fn eval(&self, y: &[f64]) -> f64 {
        self.envelope.eval(y)
    }

    fn gradient(&self, y: &[f64]) -> Option<Vec<f64>> {
        self.envelope.gradient(y)
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        self.envelope.lipschitz_bound()
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        self.envelope.bounds()
    }
}

/// Plateau extension with `L_ext = L + ε` and radius `r = ε·δ_min / (2(L + ε))`.
///
/// For distinct base points `x, z` at distance `d ≥ δ_min` the margin
/// `ε d − 2r(L + ε) ≥ 0` makes the lower envelope dominate the upper one, so
/// the envelope reproduces the data exactly and is flat on each `r`-ball.
pub fn plateau_extend(base: &FiniteSampleFunction, epsilon: f64) -> Result<PlateauExtension> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("plateau epsilon must be positive, got {epsilon}")));
    }
    let l = base.lipschitz_constant();
    let slope = l + epsilon;
    let radius = if base.len() == 1 {
        f64::INFINITY
    } else {
        epsilon * base.min_separation() / (2.0 * slope)
    };
    let envelope = EnvelopeExtension::new(
        base.space().clone(),
        base.points().to_vec(),
        base.values().to_vec(),
        slope,
        radius,
        Some(base.value_range()),
    )?;
    Ok(PlateauExtension { base: base.clone(), envelope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;

    fn line() -> NormedSpace {
        NormedSpace::euclidean(1)
    }

    #[test]
    fn lip_on_set_examples() {
        let f = FnField::new(line(), |x| 2.0 * x[0]);
        let e = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(lip_on_set(&f, &e).unwrap(), 2.0);
        let c = FnField::new(line(), |_| 4.0);
        assert_eq!(lip_on_set(&c, &e).unwrap(), 0.0);
        let g = FnField::new(NormedSpace::sup(2), |x| x[0] + x[1]);
        let e2 = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(lip_on_set(&g, &e2).unwrap(), 2.0);
        assert_eq!(lip_on_set(&f, &[vec![3.0]]).unwrap(), 0.0);
    }

    #[test]
    fn duplicates_are_rejected() {
        let f = FnField::new(line(), |x| x[0]);
        assert!(matches!(
            lip_on_set(&f, &[vec![1.0], vec![2.0], vec![1.0]]),
            Err(Error::DuplicatePoints(0, 2))
        ));
    }

    #[test]
    fn slope_of_affine_is_dual_norm() {
        let f = FnField::new(NormedSpace::l1(2), |x| 3.0 * x[0] - 4.0 * x[1] + 1.0)
            .with_gradient(|_| vec![3.0, -4.0]);
        for x in [[0.0, 0.0], [5.0, -2.0]] {
            let s = asymptotic_slope(&f, &x, &[1.0, 0.1], 16, 5).unwrap();
            for (_, est) in &s.trace {
                assert!((est - 4.0).abs() <= 1e-9, "{est}");
            }
        }
    }

    #[test]
    fn slope_of_abs_at_kink() {
        let f = FnField::new(line(), |x| x[0].abs());
        let s = asymptotic_slope(&f, &[0.0], &[1.0, 0.1, 0.01], 8, 1).unwrap();
        assert!((s.estimate - 1.0).abs() < 1e-9);
    }

    #[test]
    fn slope_of_square_approaches_six() {
        let f = FnField::new(line(), |x| x[0] * x[0]).with_gradient(|x| vec![2.0 * x[0]]);
        let s = asymptotic_slope(&f, &[3.0], &[1.0, 0.1, 0.01], 32, 2).unwrap();
        for (r, est) in &s.trace {
            assert!((est - 6.0).abs() <= 2.0 * r, "r={r} est={est}");
        }
    }

    #[test]
    fn slope_schedule_errors() {
        let f = FnField::new(line(), |x| x[0]);
        assert!(asymptotic_slope(&f, &[0.0], &[], 4, 0).is_err());
        assert!(asymptotic_slope(&f, &[0.0], &[0.1, 0.2], 4, 0).is_err());
        assert!(asymptotic_slope(&f, &[0.0], &[0.1], 1, 0).is_err());
    }

    #[test]
    fn mcshane_examples() {
        let one = FiniteSampleFunction::new(line(), vec![vec![0.3]], vec![2.5]).unwrap();
        let e = mcshane_extend(&one, 0.0).unwrap();
        assert_eq!(e.eval(&[-7.0]), 2.5);
        assert_eq!(e.eval(&[0.3]), 2.5);
        let two = FiniteSampleFunction::new(line(), vec![vec![0.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        let e = mcshane_extend(&two, 1.0).unwrap();
        assert_eq!(e.eval(&[0.5]), 0.5);
        assert_eq!(e.eval(&[0.0]), 0.0);
        assert_eq!(e.eval(&[1.0]), 1.0);
        assert!(matches!(mcshane_extend(&two, 0.5), Err(Error::LipschitzTooSmall { .. })));
    }

    #[test]
    fn plateau_example() {
        let two = FiniteSampleFunction::new(line(), vec![vec![0.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        let p = plateau_extend(&two, 1.0).unwrap();
        assert_eq!(p.slope(), 2.0);
        assert_eq!(p.radius(), 0.25);
        assert_eq!(p.eval(&[0.2]), 0.0);
        assert_eq!(p.eval(&[-0.25]), 0.0);
        assert_eq!(p.eval(&[0.5]), 0.5);
        assert_eq!(p.eval(&[0.9]), 1.0);
        assert_eq!(p.eval(&[7.0]), 1.0);
        assert!(plateau_extend(&two, 0.0).is_err());
        let one = FiniteSampleFunction::new(line(), vec![vec![0.0]], vec![-2.0]).unwrap();
        let p = plateau_extend(&one, 0.5).unwrap();
        assert_eq!(p.eval(&[100.0]), -2.0);
    }

    #[test]
    fn localized_envelope_agrees_in_ball() {
        let space = NormedSpace::euclidean(2);
        let mut rng = sampling::rng(4);
        let pts: Vec<Vec<f64>> = (0..60).map(|_| sampling::uniform_box(&[-2.0, -2.0], &[2.0, 2.0], &mut rng)).collect();
        let vals: Vec<f64> = pts.iter().map(|p| (p[0] * 3.0).sin()).collect();
        let base = FiniteSampleFunction::new(space.clone(), pts, vals).unwrap();
        let e = mcshane_extend(&base, base.lipschitz_constant() + 0.1).unwrap();
        let c = [0.3, -0.1];
        let loc = e.localized(&c, 0.2);
        assert!(loc.anchors().len() < e.anchors().len());
        for _ in 0..200 {
            let y = space.sample_ball(&c, 0.2, &mut rng);
            assert_eq!(loc.eval(&y), e.eval(&y));
        }
    }

    #[test]
    fn csv_round_trip() {
        let base = FiniteSampleFunction::new(
            NormedSpace::euclidean(2),
            vec![vec![0.1, 0.2], vec![-1.0, 1.0 / 3.0]],
            vec![1.5, -0.25],
        )
        .unwrap();
        let mut buf = Vec::new();
        base.write_csv(&mut buf).unwrap();
        let back = FiniteSampleFunction::read_csv(NormedSpace::euclidean(2), buf.as_slice()).unwrap();
        assert_eq!(back, base);
    }
}
