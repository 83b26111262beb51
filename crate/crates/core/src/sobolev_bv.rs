//! Finite weighted measures, `L^p(μ)` norms, and energy-density checks for
//! Sobolev and BV functionals along the cylindrical approximations of
//! [`crate::pipeline`].

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result, ResultExt};
use crate::families::{PolygonIndicator, StepFunction};
use crate::field::ScalarField;
use crate::lipschitz::{asymptotic_slope, format_f64};
use crate::normed_space::NormedSpace;
use crate::pipeline::{CompactExhaustion, Pipeline, PipelineConfig};
use crate::sampling;

/// Finitely many weighted atoms. A measure built by [`WeightedMeasure::uniform_grid`]
/// also remembers the box it discretizes and its (constant) density there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    domain: Option<(Vec<f64>, Vec<f64>)>,
}

impl WeightedMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidArgument("a measure needs matching nonempty atoms and weights".into()));
        }
        let d = points[0].len();
        for p in &points {
            check_dim(d, p.len())?;
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("atoms must be finite".into()));
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        Ok(WeightedMeasure { points, weights, domain: None })
    }

    /// Cell midpoints of a `counts[0] × … ` grid on the box `[lo, hi]`, each
    /// carrying its cell volume, so the total mass is the box volume.
    pub fn uniform_grid(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != counts.len() || lo.is_empty() {
            return Err(Error::InvalidArgument("grid descriptor lengths differ".into()));
        }
        if lo.iter().zip(hi).any(|(a, b)| !(a < b)) || counts.contains(&0) {
            return Err(Error::InvalidArgument("grid needs lo < hi and positive counts".into()));
        }
        let d = lo.len();
        let steps: Vec<f64> = (0..d).map(|i| (hi[i] - lo[i]) / counts[i] as f64).collect();
        let cell: f64 = steps.iter().product();
        let mut points = Vec::with_capacity(counts.iter().product());
        let mut idx = vec![0usize; d];
        'outer: loop {
            points.push((0..d).map(|i| lo[i] + (idx[i] as f64 + 0.5) * steps[i]).collect());
            for i in 0..d {
                idx[i] += 1;
                if idx[i] < counts[i] {
                    continue 'outer;
                }
                idx[i] = 0;
            }
            break;
        }
        let weights = vec![cell; points.len()];
        Ok(WeightedMeasure { points, weights, domain: Some((lo.to_vec(), hi.to_vec())) })
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The discretized box, for grid measures.
    pub fn domain(&self) -> Option<(&[f64], &[f64])> {
        self.domain.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    /// Mass per unit volume, for grid measures.
    pub fn density(&self) -> Option<f64> {
        let (lo, hi) = self.domain()?;
        let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
        Some(self.total_mass() / vol)
    }

    /// `Σ w_i v_i`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn lp_norm_values(&self, values: &[f64], p: f64) -> Result<f64> {
        check_exponent(p)?;
        check_dim(self.len(), values.len())?;
        let s: f64 = self.weights.iter().zip(values).map(|(w, v)| w * v.abs().powf(p)).sum();
        Ok(s.powf(1.0 / p))
    }

    /// `(Σ w_i |g(x_i)|^p)^{1/p}`.
    pub fn lp_norm(&self, g: &(impl ScalarField + ?Sized), p: f64) -> Result<f64> {
        check_dim(self.dim(), g.space().dim())?;
        let values: Vec<f64> = self.points.iter().map(|x| g.eval(x)).collect();
        self.lp_norm_values(&values, p)
    }

    pub fn lp_distance_values(&self, a: &[f64], b: &[f64], p: f64) -> Result<f64> {
        check_dim(a.len(), b.len())?;
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.lp_norm_values(&diff, p)
    }

    fn eval(&self, f: &(impl ScalarField + ?Sized)) -> Vec<f64> {
        self.points.par_iter().map(|x| f.eval(x)).collect()
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("exponent must lie in [1, ∞), got {p}")));
    }
    Ok(())
}

/// `x ↦ ‖∇f(x)‖_*`, the slope of a smooth field.
pub struct SlopeOracle {
    field: Arc<dyn ScalarField>,
    space: NormedSpace,
}

impl ScalarField for SlopeOracle {
    fn space(&self) -> &NormedSpace {
        &self.space
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let g = self.field.gradient(x).expect("checked at construction");
        self.space.dual_norm(&g).unwrap_or(f64::NAN)
    }
}

/// Requires a declared gradient; dual norms are taken in `space`.
pub fn relaxed_slope_oracle(f: Arc<dyn ScalarField>, space: NormedSpace) -> Result<SlopeOracle> {
    check_dim(space.dim(), f.space().dim())?;
    if f.gradient(&vec![0.0; space.dim()]).is_none() {
        return Err(Error::OracleUnavailable("the field has no analytic gradient".into()));
    }
    Ok(SlopeOracle { field: f, space })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub pipeline: PipelineConfig,
    /// Number of trailing rows checked against tolerances.
    pub window: usize,
    /// `‖f_n − f‖_{L^p}` allowance relative to `‖f‖_{L^p}`.
    pub lp_tolerance: f64,
    /// Energy allowance relative to the oracle.
    pub energy_tolerance: f64,
    /// Absolute allowance on the weak-convergence panel.
    pub panel_tolerance: f64,
    /// Radii for the asymptotic-slope estimates of the Lipschitz pre-approximations.
    pub slope_radii: Vec<f64>,
    pub slope_samples: usize,
    /// Ramp width of the first BV pre-approximation; later ones halve it.
    pub ramp_width: f64,
    pub ramp_levels: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            pipeline: PipelineConfig { max_index: 64, ..Default::default() },
            window: 3,
            lp_tolerance: 0.01,
            energy_tolerance: 0.02,
            panel_tolerance: 0.05,
            slope_radii: vec![1e-2, 1e-3, 1e-4],
            slope_samples: 8,
            ramp_width: 0.256,
            ramp_levels: 8,
        }
    }
}

impl DensityConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.window == 0 {
            return Err(Error::InvalidArgument("window must be positive".into()));
        }
        for (name, v) in [
            ("lp_tolerance", self.lp_tolerance),
            ("energy_tolerance", self.energy_tolerance),
            ("panel_tolerance", self.panel_tolerance),
            ("ramp_width", self.ramp_width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.ramp_levels == 0 {
            return Err(Error::InvalidArgument("ramp_levels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Sobolev,
    Bv,
    LpDensity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub n: usize,
    /// Index of the cylindrical approximation selected for `n`.
    pub k: usize,
    /// `‖f_k − f‖_{L^p(μ)}`.
    pub lp_distance: f64,
    /// `‖‖d f_k‖_*‖_{L^p(μ)}`, absent for plain density runs.
    pub energy: Option<f64>,
    pub oracle: Option<f64>,
    /// `‖‖d f_k‖_* − |Df|‖_{L^p(μ)}` when a pointwise oracle exists.
    pub slope_distance: Option<f64>,
    /// Allowed `|energy − oracle|` (or `lp_distance` for density runs).
    pub slack: f64,
    /// Whether `k` met both diagonal conditions.
    pub selected: bool,
    pub in_window: bool,
    pub pass: bool,
}

/// Weak convergence of `ν_n = ‖d f_n‖_* μ` against fixed test functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelReport {
    pub functions: Vec<String>,
    /// `∫ φ d|Df|` per function.
    pub targets: Vec<f64>,
    /// `max_φ |∫ φ dν_n − ∫ φ d|Df||` per row.
    pub discrepancies: Vec<f64>,
    /// `ν_n(𝔹)` per row, computed with the same sum as the energy.
    pub masses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub kind: ReportKind,
    pub p: f64,
    /// `‖f‖_{L^p(μ)}`.
    pub norm_f: f64,
    /// `‖|Df|‖_{L^p(μ)}` or `|Df|(𝔹)`.
    pub oracle: Option<f64>,
    pub rows: Vec<EnergyRow>,
    pub panel: Option<PanelReport>,
    /// `‖g_n − f‖_{L¹(μ)}` for the Lipschitz pre-approximations.
    pub pre_approximation: Vec<f64>,
    pub failures: Vec<String>,
}

impl EnergyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn final_row(&self) -> &EnergyRow {
        self.rows.last().expect("reports have rows")
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)
            .map_err(|e| Error::InvalidArgument(format!("report serialization: {e}")))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["n", "k", "lp_distance", "energy", "oracle", "slope_distance", "slack", "pass"])?;
        let opt = |x: Option<f64>| x.map(format_f64).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.k.to_string(),
                format_f64(r.lp_distance),
                opt(r.energy),
                opt(r.oracle),
                opt(r.slope_distance),
                format_f64(r.slack),
                r.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Values and slopes of one `f_k` at the atoms.
struct Sampled {
    values: Vec<f64>,
    slopes: Vec<f64>,
}

fn sample_stage(pipeline: &Pipeline, k: usize, mu: &WeightedMeasure) -> Result<Sampled> {
    let stage = pipeline.stage(k)?;
    let pairs: Vec<(f64, f64)> =
        mu.points().par_iter().map(|x| pipeline.evaluate(&stage, x)).collect::<Result<_>>()?;
    let (values, slopes) = pairs.into_iter().unzip();
    Ok(Sampled { values, slopes })
}

/// `‖lip_a(g)‖_{L^p(μ)}` from asymptotic-slope estimates at the atoms.
fn slope_norm(g: &dyn ScalarField, mu: &WeightedMeasure, p: f64, cfg: &DensityConfig, stream: u64) -> Result<f64> {
    let seed = sampling::derive_seed(cfg.pipeline.seed, stream);
    let slopes: Vec<f64> = mu
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            asymptotic_slope(g, x, &cfg.slope_radii, cfg.slope_samples, sampling::derive_seed(seed, i as u64))
                .map(|s| s.estimate)
        })
        .collect::<Result<_>>()?;
    mu.lp_norm_values(&slopes, p)
}

/// Diagonal selection: for each `n`, the smallest `k ∈ [n, N]` with
/// `‖f_k − g_n‖ ≤ 1/n` and `energy_k ≤ ‖lip_a g_n‖ + 1/n`. Stages are computed
/// lazily and cached per pipeline.
struct Diagonal<'a> {
    mu: &'a WeightedMeasure,
    p: f64,
    max_index: usize,
}

impl Diagonal<'_> {
    fn select(
        &self,
        n: usize,
        pipeline: &Pipeline,
        g_values: &[f64],
        g_slope_norm: f64,
        cache: &mut [Option<Sampled>],
    ) -> Result<(usize, bool)> {
        let tol = 1.0 / n as f64;
        for (k, slot) in cache.iter_mut().enumerate().take(self.max_index + 1).skip(n) {
            if slot.is_none() {
                *slot = Some(sample_stage(pipeline, k, self.mu).with_context(|| format!("stage {k}"))?);
            }
            let s = slot.as_ref().expect("just filled");
            let dist = self.mu.lp_distance_values(&s.values, g_values, self.p)?;
            let energy = self.mu.lp_norm_values(&s.slopes, self.p)?;
            if dist <= tol && energy <= g_slope_norm + tol {
                return Ok((k, true));
            }
        }
        Ok((self.max_index, false))
    }
}

fn relative_ok(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target.abs().max(f64::MIN_POSITIVE)
}

/// Energy density in `W^{1,p}`: `f_n → f` and `‖d f_n‖_* → |Df|` in `L^p(μ)`,
/// with `|Df| = ‖∇f‖_*` for fields that declare a gradient.
pub fn sobolev_density_check(
    f: Arc<dyn ScalarField>,
    mu: &WeightedMeasure,
    p: f64,
    cfg: &DensityConfig,
) -> Result<EnergyReport> {
    cfg.validate()?;
    check_exponent(p)?;
    check_dim(f.space().dim(), mu.dim())?;
    let space = f.space().clone();
    let oracle_field = relaxed_slope_oracle(f.clone(), space)?;
    let oracle_values = mu.eval(&oracle_field);
    let oracle = mu.lp_norm_values(&oracle_values, p)?;
    let f_values = mu.eval(f.as_ref());
    let norm_f = mu.lp_norm_values(&f_values, p)?;
    let g_slope = slope_norm(f.as_ref(), mu, p, cfg, 0x534f_424f)?;

    let exhaustion = CompactExhaustion::constant(mu.points().to_vec())?;
    let pipeline = Pipeline::new(f, exhaustion, cfg.pipeline.clone()).context("sobolev pipeline")?;
    let max_index = cfg.pipeline.max_index;
    let diag = Diagonal { mu, p, max_index };
    let mut cache: Vec<Option<Sampled>> = (0..=max_index).map(|_| None).collect();
    let slack = cfg.energy_tolerance * oracle;
    let mut rows = Vec::new();
    for n in 1..=max_index {
        let (k, selected) = diag.select(n, &pipeline, &f_values, g_slope, &mut cache)?;
        let s = cache[k].as_ref().expect("selected stage is cached");
        let lp_distance = mu.lp_distance_values(&s.values, &f_values, p)?;
        let energy = mu.lp_norm_values(&s.slopes, p)?;
        let slope_distance = mu.lp_distance_values(&s.slopes, &oracle_values, p)?;
        let in_window = n + cfg.window > max_index;
        let pass = if in_window {
            lp_distance <= cfg.lp_tolerance * norm_f && relative_ok(energy, oracle, cfg.energy_tolerance)
        } else {
            selected
        };
        rows.push(EnergyRow {
            n,
            k,
            lp_distance,
            energy: Some(energy),
            oracle: Some(oracle),
            slope_distance: Some(slope_distance),
            slack,
            selected,
            in_window,
            pass,
        });
    }
    let failures = window_failures(&rows);
    Ok(EnergyReport {
        kind: ReportKind::Sobolev,
        p,
        norm_f,
        oracle: Some(oracle),
        rows,
        panel: None,
        pre_approximation: Vec::new(),
        failures,
    })
}

fn window_failures(rows: &[EnergyRow]) -> Vec<String> {
    rows.iter()
        .filter(|r| r.in_window && !r.pass)
        .map(|r| {
            format!(
                "row n={}: lp_distance {} energy {} oracle {}",
                r.n,
                format_f64(r.lp_distance),
                r.energy.map(format_f64).unwrap_or_default(),
                r.oracle.map(format_f64).unwrap_or_default()
            )
        })
        .collect()
}

/// A BV function with a known total-variation oracle.
#[derive(Clone)]
pub enum BvSource {
    /// Piecewise constant on the line; ramps replace jumps inside the domain.
    Step(StepFunction),
    /// Indicator of a polygon in the plane.
    Polygon(PolygonIndicator),
    /// Already Lipschitz, with a declared gradient.
    Lipschitz(Arc<dyn ScalarField>),
}

impl BvSource {
    fn field(&self) -> Arc<dyn ScalarField> {
        match self {
            BvSource::Step(s) => Arc::new(s.clone()),
            BvSource::Polygon(p) => Arc::new(p.clone()),
            BvSource::Lipschitz(f) => f.clone(),
        }
    }

    fn ramp(&self, width: f64, domain: (&[f64], &[f64])) -> Result<Arc<dyn ScalarField>> {
        Ok(match self {
            BvSource::Step(s) => Arc::new(s.ramped(width, domain.0[0], domain.1[0])?),
            BvSource::Polygon(p) => Arc::new(p.ramped(width)?),
            BvSource::Lipschitz(f) => f.clone(),
        })
    }
}

/// Test functions of each coordinate: `1`, `x_i^j` for `j ≤ 4`, `cos(kπ x_i)` for `k ≤ 4`.
type TestFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

fn panel(dim: usize) -> (Vec<String>, Vec<TestFn>) {
    let mut names = vec!["1".to_string()];
    let mut fns: Vec<TestFn> = vec![Box::new(|_: &[f64]| 1.0)];
    for i in 0..dim {
        for j in 1..=4 {
            names.push(format!("x{}^{j}", i + 1));
            fns.push(Box::new(move |x: &[f64]| x[i].powi(j)));
        }
        for k in 1..=4 {
            names.push(format!("cos({k}pi x{})", i + 1));
            fns.push(Box::new(move |x: &[f64]| (k as f64 * std::f64::consts::PI * x[i]).cos()));
        }
    }
    (names, fns)
}

/// `∫ φ d|Df|` for each panel function.
fn panel_targets(
    source: &BvSource,
    mu: &WeightedMeasure,
    domain: (&[f64], &[f64]),
    density: f64,
    fns: &[TestFn],
) -> Result<Vec<f64>> {
    Ok(match source {
        BvSource::Step(s) => {
            let jumps: Vec<(f64, f64)> = s.interior_jumps(domain.0[0], domain.1[0]).collect();
            fns.iter().map(|phi| density * jumps.iter().map(|(b, j)| j.abs() * phi(&[*b])).sum::<f64>()).collect()
        }
        BvSource::Polygon(poly) => {
            let space = poly.space().clone();
            let v = poly.vertices();
            let m = 512;
            let mut targets = vec![0.0; fns.len()];
            for i in 0..v.len() {
                let (a, b) = (v[i], v[(i + 1) % v.len()]);
                let e = [b[0] - a[0], b[1] - a[1]];
                let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
                let weight = len * space.dual_norm(&[e[1] / len, -e[0] / len])? * density;
                for (t, phi) in targets.iter_mut().zip(fns) {
                    // composite Simpson along the edge
                    let mut acc = 0.0;
                    for s in 0..=m {
                        let u = s as f64 / m as f64;
                        let c = if s == 0 || s == m { 1.0 } else if s % 2 == 1 { 4.0 } else { 2.0 };
                        acc += c * phi(&[a[0] + u * e[0], a[1] + u * e[1]]);
                    }
                    *t += weight * acc / (3.0 * m as f64);
                }
            }
            targets
        }
        BvSource::Lipschitz(f) => {
            let oracle = relaxed_slope_oracle(f.clone(), f.space().clone())?;
            let slopes = mu.eval(&oracle);
            fns.iter()
                .map(|phi| {
                    let vals: Vec<f64> = mu.points().iter().zip(&slopes).map(|(x, s)| phi(x) * s).collect();
                    mu.integrate(&vals)
                })
                .collect()
        }
    })
}

/// Energy density in BV: ramps `g_n` of width `w_0 2^{1−n}` pre-approximate
/// `f` in `L¹(μ)`; the pipeline approximates each ramp, a diagonal index is
/// selected, and the total energy `∫ ‖d f_n‖_* dμ` and the measures
/// `ν_n = ‖d f_n‖_* μ` are compared with `|Df|`.
pub fn bv_density_check(source: &BvSource, mu: &WeightedMeasure, cfg: &DensityConfig) -> Result<EnergyReport> {
    cfg.validate()?;
    let domain = mu
        .domain()
        .ok_or_else(|| Error::OracleUnavailable("the total-variation oracle needs a grid measure".into()))?;
    let density = mu.density().expect("grid measure");
    let f = source.field();
    check_dim(f.space().dim(), mu.dim())?;
    let levels = cfg.ramp_levels;
    let max_index = cfg.pipeline.max_index;
    if max_index < levels {
        return Err(Error::InvalidArgument(format!(
            "max_index {max_index} is below the number of ramp levels {levels}"
        )));
    }
    let (names, fns) = panel(mu.dim());
    let targets = panel_targets(source, mu, domain, density, &fns)?;
    let oracle = targets[0];
    let f_values = mu.eval(f.as_ref());
    let norm_f = mu.lp_norm_values(&f_values, 1.0)?;
    let slack = cfg.energy_tolerance * oracle;

    let diag = Diagonal { mu, p: 1.0, max_index };
    let mut rows = Vec::new();
    let mut pre = Vec::new();
    let mut discrepancies = Vec::new();
    let mut masses = Vec::new();
    let mut mass_mismatch = Vec::new();
    for n in 1..=levels {
        let width = cfg.ramp_width * 0.5f64.powi(n as i32 - 1);
        let g = source.ramp(width, domain)?;
        let g_values = mu.eval(g.as_ref());
        pre.push(mu.lp_distance_values(&g_values, &f_values, 1.0)?);
        let g_slope = slope_norm(g.as_ref(), mu, 1.0, cfg, 0x4256_0000 + n as u64)?;
        let exhaustion = CompactExhaustion::constant(mu.points().to_vec())?;
        let pipeline =
            Pipeline::new(g, exhaustion, cfg.pipeline.clone()).with_context(|| format!("BV pipeline at level {n}"))?;
        let mut cache: Vec<Option<Sampled>> = (0..=max_index).map(|_| None).collect();
        let (k, selected) = diag.select(n, &pipeline, &g_values, g_slope, &mut cache)?;
        let s = cache[k].take().expect("selected stage is cached");
        let lp_distance = mu.lp_distance_values(&s.values, &f_values, 1.0)?;
        let energy = mu.integrate(&s.slopes);

        let integrals: Vec<f64> = fns
            .iter()
            .map(|phi| {
                let vals: Vec<f64> = mu.points().iter().zip(&s.slopes).map(|(x, sl)| phi(x) * sl).collect();
                mu.integrate(&vals)
            })
            .collect();
        masses.push(integrals[0]);
        if integrals[0] != energy {
            mass_mismatch.push(n);
        }
        discrepancies.push(integrals.iter().zip(&targets).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        let in_window = n + cfg.window > levels;
        let pass = if in_window {
            lp_distance <= cfg.lp_tolerance * norm_f && relative_ok(energy, oracle, cfg.energy_tolerance)
        } else {
            selected
        };
        rows.push(EnergyRow {
            n,
            k,
            lp_distance,
            energy: Some(energy),
            oracle: Some(oracle),
            slope_distance: None,
            slack,
            selected,
            in_window,
            pass,
        });
    }

    if pre.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-9) + 1e-15) || pre.last().copied().unwrap_or(0.0) > pre[0].max(1e-15) {
        return Err(Error::InvalidArgument(format!("ramp pre-approximation is not converging in L¹: {pre:?}")));
    }

    let mut failures = window_failures(&rows);
    let last = *discrepancies.last().expect("at least one level");
    if last >= cfg.panel_tolerance {
        failures.push(format!("panel discrepancy {} at the final index", format_f64(last)));
    }
    let start = levels.saturating_sub(cfg.window);
    for i in start + 1..levels {
        if discrepancies[i] > discrepancies[i - 1] + 0.01 {
            failures.push(format!("panel discrepancy rose at index {}", i + 1));
        }
    }
    for n in mass_mismatch {
        failures.push(format!("panel mass differs from the energy at index {n}"));
    }
    Ok(EnergyReport {
        kind: ReportKind::Bv,
        p: 1.0,
        norm_f,
        oracle: Some(oracle),
        rows,
        panel: Some(PanelReport { functions: names, targets, discrepancies, masses }),
        pre_approximation: pre,
        failures,
    })
}

/// `‖f_n − f‖_{L^p(μ)}` along the pipeline; passes when the final window is
/// below `lp_tolerance · ‖f‖_{L^p(μ)}`.
pub fn lp_strong_density_check(
    f: Arc<dyn ScalarField>,
    mu: &WeightedMeasure,
    p: f64,
    cfg: &DensityConfig,
) -> Result<EnergyReport> {
    Ok(lp_strong_density_reports(f, mu, &[p], cfg)?.remove(0))
}

/// [`lp_strong_density_check`] for several exponents sharing one run.
pub fn lp_strong_density_reports(
    f: Arc<dyn ScalarField>,
    mu: &WeightedMeasure,
    ps: &[f64],
    cfg: &DensityConfig,
) -> Result<Vec<EnergyReport>> {
    cfg.validate()?;
    if ps.is_empty() {
        return Err(Error::InvalidArgument("no exponents given".into()));
    }
    for &p in ps {
        check_exponent(p)?;
    }
    check_dim(f.space().dim(), mu.dim())?;
    let f_values = mu.eval(f.as_ref());
    let exhaustion = CompactExhaustion::constant(mu.points().to_vec())?;
    let pipeline = Pipeline::new(f, exhaustion, cfg.pipeline.clone()).context("density pipeline")?;
    let max_index = cfg.pipeline.max_index;
    let mut stage_values = Vec::with_capacity(max_index);
    for n in 1..=max_index {
        let stage = pipeline.stage(n)?;
        let values: Vec<f64> =
            mu.points().par_iter().map(|x| pipeline.value(&stage, x)).collect::<Result<_>>()?;
        stage_values.push(values);
    }
    ps.iter()
        .map(|&p| {
            let norm_f = mu.lp_norm_values(&f_values, p)?;
            let slack = cfg.lp_tolerance * norm_f;
            let rows: Vec<EnergyRow> = stage_values
                .iter()
                .enumerate()
                .map(|(i, values)| {
                    let n = i + 1;
                    let lp_distance = mu.lp_distance_values(values, &f_values, p)?;
                    Ok(EnergyRow {
                        n,
                        k: n,
                        lp_distance,
                        energy: None,
                        oracle: None,
                        slope_distance: None,
                        slack,
                        selected: true,
                        in_window: n + cfg.window > max_index,
                        pass: lp_distance <= slack,
                    })
                })
                .collect::<Result<_>>()?;
            let failures = rows
                .iter()
                .filter(|r| r.in_window && !r.pass)
                .map(|r| format!("row n={}: lp_distance {} above {}", r.n, format_f64(r.lp_distance), format_f64(slack)))
                .collect();
            Ok(EnergyReport {
                kind: ReportKind::LpDensity,
                p,
                norm_f,
                oracle: None,
                rows,
                panel: None,
                pre_approximation: Vec::new(),
                failures,
            })
        })
        .collect()
}
