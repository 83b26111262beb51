//! Smooth cylindrical approximation of a bounded Lipschitz field, with
//! per-point certificates.
//!
//! For each index `n` the construction is
//!
//! 1. embed `X` into `ℓ∞(F)` through a dual net `F` (one functional per
//!    antipodal pair), `J x = (ω(x))_{ω∈F}`;
//! 2. extend `f ∘ J⁻¹` to a Lipschitz `f̄` on `ℓ∞(F)`;
//! 3. partition `F` by the embedded sample `J(K_n)` at tolerance `1/n`, giving
//!    `p_n` with `‖p_n(Jx) − Jx‖_∞ ≤ 1/n` on `K_n`, image coordinates
//!    `V_n = ℓ∞^k` and `P_n x = (ω_{rep j}(x))_j`;
//! 4. mollify `f̄ ∘ lift` on `V_n` at scale `ε_n = 1/(n·max(1, Lip f̄))`, so that
//!    the smoothing error is at most `1/n`;
//! 5. `f_n = g_n ∘ P_n`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result, ResultExt};
use crate::field::{gradient_or_fd, ScalarField};
use crate::lipschitz::{format_f64, local_lipschitz_lower_bound, EnvelopeExtension, FiniteSampleFunction};
use crate::map_operator::{integer_labels, BoundedSeq, MapOperator};
use crate::mollify::{mollify_with, Quadrature, SmoothedField, MAX_GRID_DIM};
use crate::normed_space::{dual_sphere_net_with_budget, NormedSpace};
use crate::sampling;

/// Absolute floating-point allowance on value comparisons.
const ROUNDING: f64 = 1e-9;

/// How `f̄` is obtained from `f`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionMode {
    /// `f ∘ J⁻¹` when `J` is onto, otherwise a McShane extension from the
    /// embedded samples (and optional anchor grid) with slope `L/(1−δ) + ε`.
    #[default]
    Faithful,
    /// Plateau extension from the embedded samples: flat near every sample.
    ExactContract,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Allowed excess in `Lip(f_n) ≤ Lip(f) + ε`.
    pub epsilon: f64,
    /// Largest index `N`.
    pub max_index: usize,
    pub mode: ExtensionMode,
    /// Target distortion of the dual net for non-polyhedral norms.
    pub net_distortion: f64,
    pub net_budget: usize,
    /// Kernel support radius over lattice spacing.
    pub grid_ratio: f64,
    /// Monte Carlo offsets when the image dimension exceeds 3.
    pub mc_samples: usize,
    /// Spacing of an extra anchor grid for the McShane extension, if any.
    pub anchor_spacing: Option<f64>,
    /// Random points used to estimate `Lip(f_n)` per index.
    pub lip_samples: usize,
    /// Random points per reference-slope estimate.
    pub reference_samples: usize,
    /// Allowance for sampling error in the slope comparison.
    pub sampling_slack: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            epsilon: 0.1,
            max_index: 8,
            mode: ExtensionMode::Faithful,
            net_distortion: 0.05,
            net_budget: 4096,
            grid_ratio: 24.0,
            mc_samples: 2048,
            anchor_spacing: None,
            lip_samples: 32,
            reference_samples: 16,
            sampling_slack: 1e-6,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_index == 0 {
            return Err(Error::InvalidArgument("empty index range".into()));
        }
        let positive = [
            ("epsilon", self.epsilon),
            ("net_distortion", self.net_distortion),
            ("grid_ratio", self.grid_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.net_distortion >= 1.0 {
            return Err(Error::InvalidArgument("net_distortion must be below 1".into()));
        }
        if let Some(s) = self.anchor_spacing {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument("anchor_spacing must be positive".into()));
            }
        }
        if self.net_budget == 0 || self.mc_samples < 2 {
            return Err(Error::InvalidArgument("budgets must be positive".into()));
        }
        if !(self.sampling_slack >= 0.0) {
            return Err(Error::InvalidArgument("sampling_slack must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Nested finite samples `K_1 ⊆ K_2 ⊆ …`, stored as one list with prefix sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactExhaustion {
    points: Vec<Vec<f64>>,
    sizes: Vec<usize>,
}

impl CompactExhaustion {
    /// Levels given as sets; each must contain the previous one.
    pub fn from_levels(levels: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut sizes = Vec::new();
        for (i, level) in levels.into_iter().enumerate() {
            if points.iter().any(|p| !level.contains(p)) {
                return Err(Error::InvalidArgument(format!("exhaustion level {} does not contain level {i}", i + 1)));
            }
            for p in level {
                if !points.contains(&p) {
                    points.push(p);
                }
            }
            sizes.push(points.len());
        }
        CompactExhaustion::from_prefixes(points, sizes)
    }

    /// `K_n` is the first `sizes[n−1]` points (the last level repeats).
    pub fn from_prefixes(points: Vec<Vec<f64>>, sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes[0] == 0 {
            return Err(Error::InvalidArgument("empty exhaustion".into()));
        }
        if sizes.windows(2).any(|w| w[1] < w[0]) || *sizes.last().expect("nonempty") > points.len() {
            return Err(Error::InvalidArgument("exhaustion sizes must be nondecreasing and within range".into()));
        }
        Ok(CompactExhaustion { points, sizes })
    }

    /// The same set at every index.
    pub fn constant(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        CompactExhaustion::from_prefixes(points, vec![n])
    }

    /// Level `j` adds `counts[j]` uniform samples from `B_{radii[j]}(center)`.
    pub fn ball_samples(space: &NormedSpace, center: &[f64], radii: &[f64], counts: &[usize], seed: u64) -> Result<Self> {
        check_dim(space.dim(), center.len())?;
        if radii.len() != counts.len() || radii.is_empty() {
            return Err(Error::InvalidArgument("need one sample count per radius".into()));
        }
        if radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("radii must be positive and nondecreasing".into()));
        }
        let mut rng = sampling::rng(seed);
        let mut points = Vec::new();
        let mut sizes = Vec::new();
        for (r, c) in radii.iter().zip(counts) {
            for _ in 0..*c {
                points.push(space.sample_ball(center, *r, &mut rng));
            }
            sizes.push(points.len());
        }
        CompactExhaustion::from_prefixes(points, sizes)
    }

    /// `K_n` for `n ≥ 1`.
    pub fn level(&self, n: usize) -> &[Vec<f64>] {
        let i = (n.max(1) - 1).min(self.sizes.len() - 1);
        &self.points[..self.sizes[i]]
    }

    /// `⋃_{n ≤ N} K_n`.
    pub fn union_up_to(&self, n: usize) -> &[Vec<f64>] {
        self.level(n)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// `f ∘ J⁻¹`, clamped to the declared range, when `J` is invertible.
pub struct Pullback {
    space: NormedSpace,
    source: Arc<dyn ScalarField>,
    inverse: Vec<f64>,
    dim: usize,
    lip: f64,
    range: (f64, f64),
}

impl Pullback {
    fn preimage(&self, u: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.inverse[i * self.dim + j] * u[j]).sum()).collect()
    }
}

/// The extension `f̄` on `ℓ∞(F)`.
pub enum Extension {
    Pullback(Pullback),
    Envelope(EnvelopeExtension),
}

impl Extension {
    fn localized(&self, center: &[f64], radius: f64) -> LocalExtension<'_> {
        match self {
            Extension::Pullback(p) => LocalExtension::Pullback(p),
            Extension::Envelope(e) => LocalExtension::Envelope(e.localized(center, radius)),
        }
    }
}

impl ScalarField for Extension {
    fn space(&self) -> &NormedSpace {
        match self {
            Extension::Pullback(p) => &p.space,
            Extension::Envelope(e) => e.space(),
        }
    }

    fn eval(&self, u: &[f64]) -> f64 {
        match self {
            Extension::Pullback(p) => p.source.eval(&p.preimage(u)).clamp(p.range.0, p.range.1),
            Extension::Envelope(e) => e.eval(u),
        }
    }

    fn gradient(&self, u: &[f64]) -> Option<Vec<f64>> {
        match self {
            Extension::Pullback(p) => {
                let x = p.preimage(u);
                let v = p.source.eval(&x);
                if v <= p.range.0 || v >= p.range.1 {
                    return Some(vec![0.0; p.dim]);
                }
                let g = gradient_or_fd(p.source.as_ref(), &x);
                // J⁻ᵀ g
                Some((0..p.dim).map(|i| (0..p.dim).map(|j| p.inverse[j * p.dim + i] * g[j]).sum()).collect())
            }
            Extension::Envelope(e) => e.gradient(u),
        }
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        match self {
            Extension::Pullback(p) => Some(p.lip),
            Extension::Envelope(e) => e.lipschitz_bound(),
        }
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            Extension::Pullback(p) => Some(p.range),
            Extension::Envelope(e) => e.bounds(),
        }
    }
}

enum LocalExtension<'a> {
    Pullback(&'a Pullback),
    Envelope(EnvelopeExtension),
}

impl ScalarField for LocalExtension<'_> {
    fn space(&self) -> &NormedSpace {
        match self {
            LocalExtension::Pullback(p) => &p.space,
            LocalExtension::Envelope(e) => e.space(),
        }
    }

    fn eval(&self, u: &[f64]) -> f64 {
        match self {
            LocalExtension::Pullback(p) => p.source.eval(&p.preimage(u)).clamp(p.range.0, p.range.1),
            LocalExtension::Envelope(e) => e.eval(u),
        }
    }

    fn gradient(&self, u: &[f64]) -> Option<Vec<f64>> {
        match self {
            LocalExtension::Pullback(p) => {
                let x = p.preimage(u);
                let v = p.source.eval(&x);
                if v <= p.range.0 || v >= p.range.1 {
                    return Some(vec![0.0; p.dim]);
                }
                let g = gradient_or_fd(p.source.as_ref(), &x);
                Some((0..p.dim).map(|i| (0..p.dim).map(|j| p.inverse[j * p.dim + i] * g[j]).sum()).collect())
            }
            LocalExtension::Envelope(e) => e.gradient(u),
        }
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        match self {
            LocalExtension::Pullback(p) => Some(p.lip),
            LocalExtension::Envelope(e) => e.lipschitz_bound(),
        }
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            LocalExtension::Pullback(p) => Some(p.range),
            LocalExtension::Envelope(e) => e.bounds(),
        }
    }
}

/// `z ↦ f̄(lift z)` on the image `V = ℓ∞^k` of a partition operator.
pub struct BlockRestriction<E> {
    space: NormedSpace,
    extension: E,
    block_of: Arc<[usize]>,
}

impl<E: ScalarField> BlockRestriction<E> {
    fn lift(&self, z: &[f64]) -> Vec<f64> {
        self.block_of.iter().map(|&b| z[b]).collect()
    }
}

impl<E: ScalarField> ScalarField for BlockRestriction<E> {
    fn space(&self) -> &NormedSpace {
        &self.space
    }

    fn eval(&self, z: &[f64]) -> f64 {
        self.extension.eval(&self.lift(z))
    }

    fn gradient(&self, z: &[f64]) -> Option<Vec<f64>> {
        let g = self.extension.gradient(&self.lift(z))?;
        let mut out = vec![0.0; self.space.dim()];
        for (w, &b) in g.iter().zip(self.block_of.iter()) {
            out[b] += w;
        }
        Some(out)
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        self.extension.lipschitz_bound()
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        self.extension.bounds()
    }
}

/// `g ∘ P` for a linear `P: X → V` given by its rows and a field `g` on `V`.
pub struct CylinderFunction<G> {
    space: NormedSpace,
    projection: Vec<Vec<f64>>,
    inner: G,
}

impl<G: ScalarField> CylinderFunction<G> {
    pub fn new(space: NormedSpace, projection: Vec<Vec<f64>>, inner: G) -> Result<Self> {
        check_dim(inner.space().dim(), projection.len())?;
        for row in &projection {
            check_dim(space.dim(), row.len())?;
        }
        Ok(CylinderFunction { space, projection, inner })
    }

    pub fn projection(&self) -> &[Vec<f64>] {
        &self.projection
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.projection.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// `g(P x)`.
    pub fn cyl_eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.space.dim(), x.len())?;
        Ok(self.inner.eval(&self.project(x)))
    }

    /// `Pᵀ ∇g(P x)` and its dual norm in `X*`.
    pub fn cyl_differential(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_dim(self.space.dim(), x.len())?;
        let grad = self
            .inner
            .gradient(&self.project(x))
            .ok_or_else(|| Error::Quadrature("inner gradient unavailable".into()))?;
        let d = self.adjoint(&grad);
        let norm = self.space.dual_norm(&d)?;
        Ok((d, norm))
    }

    fn adjoint(&self, w: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.space.dim()];
        for (row, wj) in self.projection.iter().zip(w) {
            for (di, r) in d.iter_mut().zip(row) {
                *di += r * wj;
            }
        }
        d
    }
}

impl<G: ScalarField> ScalarField for CylinderFunction<G> {
    fn space(&self) -> &NormedSpace {
        &self.space
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.inner.eval(&self.project(x))
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.inner.gradient(&self.project(x)).map(|g| self.adjoint(&g))
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        self.inner.lipschitz_bound()
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        self.inner.bounds()
    }
}

pub type StageFunction = CylinderFunction<SmoothedField<BlockRestriction<Arc<Extension>>>>;

/// One index of the construction.
pub struct Stage {
    pub n: usize,
    pub operator: MapOperator,
    pub epsilon_moll: f64,
    pub function: StageFunction,
}

/// One (index, sample point) row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub n: usize,
    pub point: usize,
    pub f_n: f64,
    pub f: f64,
    pub error: f64,
    /// `(Lip(f̄) + 1)/n`.
    pub error_bound: f64,
    pub error_slack: f64,
    /// `‖d_x f_n‖_{X*}`.
    pub slope: f64,
    /// Lower estimate of `Lip(f̄; B_{2/n}(Jx))`.
    pub reference_slope: f64,
    pub slope_slack: f64,
    /// Estimate of `Lip(f_n)` for this index.
    pub lip_estimate: f64,
    /// `Lip(f) + ε`.
    pub lip_bound: f64,
    pub lip_slack: f64,
    pub range_ok: bool,
    pub pass: bool,
}

impl CertificateRow {
    pub fn error_ok(&self) -> bool {
        self.error <= self.error_bound + self.error_slack
    }

    pub fn slope_ok(&self) -> bool {
        self.slope <= self.reference_slope + self.slope_slack
    }

    pub fn lip_ok(&self) -> bool {
        self.lip_estimate <= self.lip_bound + self.lip_slack
    }

    /// Names of the violated inequalities.
    pub fn violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !self.error_ok() {
            v.push("error");
        }
        if !self.slope_ok() {
            v.push("slope");
        }
        if !self.lip_ok() {
            v.push("lipschitz");
        }
        if !self.range_ok {
            v.push("range");
        }
        v
    }
}

/// Per-index construction data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub n: usize,
    pub sample_size: usize,
    pub rank: usize,
    pub epsilon_moll: f64,
    pub quadrature: String,
    pub tau_q: f64,
    pub lip_estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxCertificate {
    pub seed: u64,
    pub mode: ExtensionMode,
    pub epsilon: f64,
    pub max_index: usize,
    /// Declared `Lip(f)`.
    pub lipschitz: f64,
    /// `Lip(f̄)` of the extension used.
    pub extension_lipschitz: f64,
    pub range: (f64, f64),
    pub net_size: usize,
    pub net_distortion: f64,
    pub indices: Vec<IndexSummary>,
    pub rows: Vec<CertificateRow>,
    /// `(point, n)` where the reference slope rose above its value at a smaller
    /// index by more than the sampling slack. Informational.
    pub trace_increases: Vec<(usize, usize)>,
}

impl ApproxCertificate {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CertificateRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)
            .map_err(|e| Error::InvalidArgument(format!("certificate serialization: {e}")))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record([
            "n", "point", "f_n", "f", "error", "error_bound", "error_slack", "slope", "reference_slope",
            "slope_slack", "lip_estimate", "lip_bound", "lip_slack", "range_ok", "pass",
        ])?;
        for r in &self.rows {
            let mut rec = vec![r.n.to_string(), r.point.to_string()];
            for x in [
                r.f_n, r.f, r.error, r.error_bound, r.error_slack, r.slope, r.reference_slope, r.slope_slack,
                r.lip_estimate, r.lip_bound, r.lip_slack,
            ] {
                rec.push(format_f64(x));
            }
            rec.push(r.range_ok.to_string());
            rec.push(r.pass.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything the construction needs once, shared across indices.
pub struct Pipeline {
    space: NormedSpace,
    source: Arc<dyn ScalarField>,
    config: PipelineConfig,
    exhaustion: CompactExhaustion,
    net: Vec<Vec<f64>>,
    distortion: f64,
    lip: f64,
    range: (f64, f64),
    extension: Arc<Extension>,
}

impl Pipeline {
    /// Builds the net and the extension.
    pub fn new(source: Arc<dyn ScalarField>, exhaustion: CompactExhaustion, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let space = source.space().clone();
        for p in exhaustion.points() {
            check_dim(space.dim(), p.len())?;
        }
        let lip = source.lipschitz_bound().ok_or(Error::MissingMetadata("lipschitz bound"))?;
        let range = source.bounds().ok_or(Error::MissingMetadata("bounds"))?;
        if !(range.0.is_finite() && range.1.is_finite()) {
            return Err(Error::InvalidArgument("the field must be bounded".into()));
        }
        let net = dual_sphere_net_with_budget(&space, config.net_distortion, config.net_budget)
            .context("building the dual net")?
            .antipodal_reduced();
        let distortion = net.distortion();
        let net: Vec<Vec<f64>> = net.functionals().to_vec();
        let m = net.len();
        let sup = NormedSpace::sup(m);
        let embed = |x: &[f64]| -> Vec<f64> { net.iter().map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum()).collect() };
        let union = exhaustion.union_up_to(config.max_index);

        let extension = match config.mode {
            ExtensionMode::Faithful => {
                let d = space.dim();
                let matrix = DMatrix::from_fn(m, d, |i, j| net[i][j]);
                let inverse = if m == d { matrix.try_inverse() } else { None };
                match inverse {
                    Some(inv) => Extension::Pullback(Pullback {
                        space: sup,
                        source: source.clone(),
                        inverse: (0..d * d).map(|k| inv[(k / d, k % d)]).collect(),
                        dim: d,
                        lip: lip / (1.0 - distortion),
                        range,
                    }),
                    None => {
                        let mut anchors: Vec<Vec<f64>> = union.to_vec();
                        if let Some(spacing) = config.anchor_spacing {
                            anchors.extend(anchor_grid(union, spacing, 2.0)?);
                        }
                        let values: Vec<f64> = anchors.iter().map(|x| source.eval(x)).collect();
                        let embedded: Vec<Vec<f64>> = anchors.iter().map(|x| embed(x)).collect();
                        let slope = lip / (1.0 - distortion) + config.epsilon;
                        Extension::Envelope(EnvelopeExtension::new(sup, embedded, values, slope, 0.0, Some(range))?)
                    }
                }
            }
            ExtensionMode::ExactContract => {
                let embedded: Vec<Vec<f64>> = union.iter().map(|x| embed(x)).collect();
                let values: Vec<f64> = union.iter().map(|x| source.eval(x)).collect();
                let base = FiniteSampleFunction::new(sup, embedded, values).context("embedding the sample")?;
                let plateau = crate::lipschitz::plateau_extend(&base, config.epsilon)?;
                Extension::Envelope(plateau.envelope().clone())
            }
        };
        Ok(Pipeline {
            space,
            source,
            config,
            exhaustion,
            net,
            distortion,
            lip,
            range,
            extension: Arc::new(extension),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn extension(&self) -> &Arc<Extension> {
        &self.extension
    }

    pub fn net(&self) -> &[Vec<f64>] {
        &self.net
    }

    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    /// `Lip(f̄)`.
    pub fn extension_lipschitz(&self) -> f64 {
        self.extension.lipschitz_bound().expect("extensions declare a constant")
    }

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        self.net.iter().map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// Smoothing scale `1/(n·max(1, Lip f̄))`.
    pub fn epsilon_moll(&self, n: usize) -> f64 {
        1.0 / (n as f64 * self.extension_lipschitz().max(1.0))
    }

    /// Builds `f_n`.
    pub fn stage(&self, n: usize) -> Result<Stage> {
        let k_n = self.exhaustion.level(n);
        self.stage_on(n, k_n)
    }

    /// Builds `f_n` with the partition computed from `sample` instead of `K_n`.
    pub fn stage_on(&self, n: usize, sample: &[Vec<f64>]) -> Result<Stage> {
        if n == 0 {
            return Err(Error::InvalidArgument("indices start at 1".into()));
        }
        let labels = integer_labels(self.net.len());
        let vectors: Vec<BoundedSeq> = sample
            .iter()
            .map(|x| BoundedSeq::new(labels.clone(), self.embed(x)))
            .collect::<Result<_>>()?;
        let operator = MapOperator::partition_for_diameter(&vectors, 1.0 / n as f64)
            .with_context(|| format!("partition at index {n}"))?;
        let k = operator.rank();
        let projection: Vec<Vec<f64>> = operator.representatives().iter().map(|&r| self.net[r].clone()).collect();
        let restriction = BlockRestriction {
            space: NormedSpace::sup(k),
            extension: self.extension.clone(),
            block_of: operator.block_of().into(),
        };
        let epsilon_moll = self.epsilon_moll(n);
        let quadrature = if k <= MAX_GRID_DIM {
            let support = NormedSpace::sup(k).euclidean_inradius() * epsilon_moll;
            Quadrature::Grid { h: support / self.config.grid_ratio }
        } else {
            Quadrature::MonteCarlo {
                samples: self.config.mc_samples,
                seed: sampling::derive_seed(self.config.seed, 0x4d43_0000 + n as u64),
            }
        };
        let smoothed = mollify_with(restriction, epsilon_moll, quadrature)
            .with_context(|| format!("mollification at index {n}"))?;
        let function = CylinderFunction::new(self.space.clone(), projection, smoothed)?;
        Ok(Stage { n, operator, epsilon_moll, function })
    }

    /// `(f_n(x), ‖d_x f_n‖_{X*})`.
    pub fn evaluate(&self, stage: &Stage, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.space.dim(), x.len())?;
        let ev = self.local_eval(stage, x)?;
        Ok((ev.value, ev.slope))
    }

    /// `f_n(x)`.
    pub fn value(&self, stage: &Stage, x: &[f64]) -> Result<f64> {
        check_dim(self.space.dim(), x.len())?;
        let f = &stage.function;
        let z = f.project(x);
        let sf = f.inner();
        let center = stage.operator.lift(&z);
        let local = sf.rebind(BlockRestriction {
            space: sf.space().clone(),
            extension: self.extension.localized(&center, stage.epsilon_moll),
            block_of: sf.source().block_of.clone(),
        });
        Ok(local.eval(&z))
    }

    /// Value and differential of `f_n` at `x`, using a copy of `f̄` pruned to
    /// the smoothing ball, plus the quadrature nodes used.
    fn local_eval(&self, stage: &Stage, x: &[f64]) -> Result<LocalEval<'_>> {
        let f = &stage.function;
        let z = f.project(x);
        let sf = f.inner();
        let center = stage.operator.lift(&z);
        let local = sf.rebind(BlockRestriction {
            space: sf.space().clone(),
            extension: self.extension.localized(&center, stage.epsilon_moll),
            block_of: sf.source().block_of.clone(),
        });
        let (value, grad) = local.value_and_gradient(&z)?;
        let differential = f.adjoint(&grad);
        let slope = self.space.dual_norm(&differential)?;
        Ok(LocalEval { value, slope, z, local })
    }

    /// Runs all indices and assembles the certificate.
    pub fn run(&self) -> Result<(Vec<Stage>, ApproxCertificate)> {
        let cfg = &self.config;
        let lbar = self.extension_lipschitz();
        let lip_slack_base = self.lip * self.distortion / (1.0 - self.distortion);
        let stages: Vec<Stage> = (1..=cfg.max_index).map(|n| self.stage(n)).collect::<Result<_>>()?;

        let mut rows = Vec::new();
        let mut indices = Vec::new();
        for stage in &stages {
            let n = stage.n;
            let k_n = self.exhaustion.level(n);
            let tau = stage.function.inner().tau_q();
            let lip_estimate = self.lipschitz_estimate(stage, k_n)?;
            indices.push(IndexSummary {
                n,
                sample_size: k_n.len(),
                rank: stage.operator.rank(),
                epsilon_moll: stage.epsilon_moll,
                quadrature: match stage.function.inner().quadrature() {
                    Quadrature::Grid { h } => format!("grid h={}", format_f64(h)),
                    Quadrature::MonteCarlo { samples, .. } => format!("monte_carlo samples={samples}"),
                },
                tau_q: tau,
                lip_estimate,
            });
            let lip_bound = self.lip + cfg.epsilon;
            let lip_slack = lip_slack_base + tau;
            let new_rows: Vec<CertificateRow> = k_n
                .par_iter()
                .enumerate()
                .map(|(i, x)| -> Result<CertificateRow> {
                    let ev = self.local_eval(stage, x)?;
                    let fx = self.source.eval(x);
                    let error = (ev.value - fx).abs();
                    let error_bound = (lbar + 1.0) / n as f64;
                    let error_slack = ROUNDING * fx.abs().max(1.0);
                    let seed = sampling::derive_seed(cfg.seed, ((n as u64) << 32) | i as u64);
                    let nodes = ev.local.support_nodes(&ev.z);
                    let in_image = local_lipschitz_lower_bound(
                        ev.local.source(),
                        &ev.z,
                        stage.epsilon_moll,
                        &nodes,
                        cfg.reference_samples,
                        seed,
                    );
                    let jx = self.embed(x);
                    let radius = 2.0 / n as f64;
                    let ambient = local_lipschitz_lower_bound(
                        &self.extension.localized(&jx, radius),
                        &jx,
                        radius,
                        &[],
                        cfg.reference_samples,
                        sampling::derive_seed(seed, 1),
                    );
                    let reference_slope = in_image.max(ambient);
                    let slope_slack = tau + cfg.sampling_slack;
                    let range_ok = ev.value >= self.range.0 && ev.value <= self.range.1;
                    let mut row = CertificateRow {
                        n,
                        point: i,
                        f_n: ev.value,
                        f: fx,
                        error,
                        error_bound,
                        error_slack,
                        slope: ev.slope,
                        reference_slope,
                        slope_slack,
                        lip_estimate,
                        lip_bound,
                        lip_slack,
                        range_ok,
                        pass: false,
                    };
                    row.pass = row.violations().is_empty();
                    Ok(row)
                })
                .collect::<Result<_>>()?;
            rows.extend(new_rows);
        }

        let mut trace_increases = Vec::new();
        let points = self.exhaustion.level(cfg.max_index).len();
        for p in 0..points {
            let mut best = f64::INFINITY;
            for r in rows.iter().filter(|r| r.point == p) {
                if r.reference_slope > best + cfg.sampling_slack.max(1e-9) {
                    trace_increases.push((p, r.n));
                }
                best = best.min(r.reference_slope);
            }
        }

        let cert = ApproxCertificate {
            seed: cfg.seed,
            mode: cfg.mode,
            epsilon: cfg.epsilon,
            max_index: cfg.max_index,
            lipschitz: self.lip,
            extension_lipschitz: lbar,
            range: self.range,
            net_size: self.net.len(),
            net_distortion: self.distortion,
            indices,
            rows,
            trace_increases,
        };
        Ok((stages, cert))
    }

    /// Largest sampled slope and difference quotient of `f_n` near `K_n`.
    fn lipschitz_estimate(&self, stage: &Stage, k_n: &[Vec<f64>]) -> Result<f64> {
        let cfg = &self.config;
        let mut rng = sampling::rng(sampling::derive_seed(cfg.seed, 0x4c49_5000 + stage.n as u64));
        let radius = 1.0 / stage.n as f64;
        let mut probes: Vec<Vec<f64>> = k_n.to_vec();
        for i in 0..cfg.lip_samples {
            let c = &k_n[i % k_n.len()];
            probes.push(self.space.sample_ball(c, radius, &mut rng));
        }
        let evals: Vec<(f64, f64)> = probes
            .par_iter()
            .map(|x| self.local_eval(stage, x).map(|e| (e.value, e.slope)))
            .collect::<Result<_>>()?;
        let mut best = evals.iter().map(|e| e.1).fold(0.0, f64::max);
        for i in k_n.len()..probes.len() {
            let j = i % k_n.len();
            let d = self.space.distance(&probes[i], &probes[j]);
            if d > 0.0 {
                best = best.max((evals[i].0 - evals[j].0).abs() / d);
            }
        }
        Ok(best)
    }
}

struct LocalEval<'a> {
    value: f64,
    slope: f64,
    z: Vec<f64>,
    local: SmoothedField<BlockRestriction<LocalExtension<'a>>>,
}

fn anchor_grid(points: &[Vec<f64>], spacing: f64, margin: f64) -> Result<Vec<Vec<f64>>> {
    let d = points[0].len();
    let lo: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min) - margin * spacing).collect();
    let hi: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max) + margin * spacing).collect();
    let counts: Vec<usize> = lo.iter().zip(&hi).map(|(a, b)| ((b - a) / spacing).floor() as usize + 1).collect();
    let total: f64 = counts.iter().map(|c| *c as f64).product();
    if total > 200_000.0 {
        return Err(Error::BudgetExceeded(format!("anchor grid needs {total} points")));
    }
    let mut out = Vec::new();
    let radix = *counts.iter().max().expect("positive dimension");
    let mut idx = vec![0usize; d];
    loop {
        if idx.iter().zip(&counts).all(|(i, c)| i < c) {
            let p: Vec<f64> = (0..d).map(|j| lo[j] + idx[j] as f64 * spacing).collect();
            if !points.contains(&p) {
                out.push(p);
            }
        }
        if !crate::normed_space::odometer(&mut idx, radix) {
            break;
        }
    }
    Ok(out)
}

/// Builds and certifies `f_1, …, f_N`.
pub fn run_pipeline(
    source: Arc<dyn ScalarField>,
    exhaustion: CompactExhaustion,
    config: PipelineConfig,
) -> Result<(Vec<Stage>, ApproxCertificate)> {
    Pipeline::new(source, exhaustion, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{Affine, Constant, NormCone};
    use crate::field::finite_difference_gradient;

    fn plane_cone() -> Arc<dyn ScalarField> {
        Arc::new(NormCone::new(NormedSpace::sup(2), 1.0).unwrap())
    }

    #[test]
    fn exhaustion_levels_nest() {
        let e = CompactExhaustion::from_levels(vec![vec![vec![0.0]], vec![vec![1.0], vec![0.0]]]).unwrap();
        assert_eq!(e.level(1), &[vec![0.0]]);
        assert_eq!(e.level(2).len(), 2);
        assert_eq!(e.level(9).len(), 2);
        assert!(CompactExhaustion::from_levels(vec![vec![vec![0.0]], vec![vec![1.0]]]).is_err());
    }

    #[test]
    fn zero_index_range_is_rejected() {
        let cfg = PipelineConfig { max_index: 0, ..Default::default() };
        let e = CompactExhaustion::constant(vec![vec![0.0, 0.0]]).unwrap();
        let err = run_pipeline(plane_cone(), e, cfg).err().unwrap();
        assert!(err.to_string().contains("empty index range"));
    }

    #[test]
    fn single_point_exhaustion() {
        let cfg = PipelineConfig { max_index: 3, ..Default::default() };
        let e = CompactExhaustion::constant(vec![vec![0.3, -0.2]]).unwrap();
        let (_, cert) = run_pipeline(plane_cone(), e, cfg).unwrap();
        assert_eq!(cert.rows.len(), 3);
        assert!(cert.passed(), "{:?}", cert.failures().collect::<Vec<_>>());
    }

    #[test]
    fn affine_is_recovered() {
        let space = NormedSpace::sup(2);
        let f: Arc<dyn ScalarField> = Arc::new(Affine::new(space.clone(), vec![0.5, -1.0], 0.2).unwrap());
        let e = CompactExhaustion::ball_samples(&space, &[0.0, 0.0], &[1.0], &[12], 3).unwrap();
        let cfg = PipelineConfig { max_index: 4, ..Default::default() };
        let (_, cert) = run_pipeline(f, e, cfg).unwrap();
        assert!(cert.passed());
        for r in &cert.rows {
            assert!(r.error <= r.slope_slack + 1e-9, "{r:?}");
            assert!((r.slope - 1.5).abs() <= r.slope_slack, "{r:?}");
        }
    }

    #[test]
    fn constant_stage_is_constant() {
        let space = NormedSpace::euclidean(2);
        let f: Arc<dyn ScalarField> = Arc::new(Constant::new(space.clone(), 2.0));
        let e = CompactExhaustion::constant(vec![vec![0.0, 0.0], vec![0.5, 0.1]]).unwrap();
        let cfg = PipelineConfig { max_index: 2, ..Default::default() };
        let (stages, cert) = run_pipeline(f, e, cfg).unwrap();
        assert!(cert.passed());
        let (d, norm) = stages[1].function.cyl_differential(&[0.2, 0.2]).unwrap();
        assert_eq!(norm, 0.0);
        assert!(d.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn cylinder_differential_matches_finite_differences() {
        let space = NormedSpace::l1(2);
        let inner = crate::mollify::mollify(
            NormCone::new(NormedSpace::sup(2), 1.0).unwrap(),
            0.1,
            0.1 / 30.0,
        )
        .unwrap();
        let cf = CylinderFunction::new(space, vec![vec![1.0, 0.5], vec![-0.3, 1.0]], inner).unwrap();
        let x = [0.21, -0.37];
        let (d, _) = cf.cyl_differential(&x).unwrap();
        let fd = finite_difference_gradient(&cf, &x, 1e-6);
        for (a, b) in d.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-4 * a.abs().max(1e-2), "{a} vs {b}");
        }
    }

    #[test]
    fn zero_projection_is_constant() {
        let inner = crate::mollify::mollify(NormCone::new(NormedSpace::sup(1), 1.0).unwrap(), 0.1, 0.1 / 30.0).unwrap();
        let g0 = inner.eval(&[0.0]);
        let cf = CylinderFunction::new(NormedSpace::euclidean(2), vec![vec![0.0, 0.0]], inner).unwrap();
        assert_eq!(cf.cyl_eval(&[3.0, -1.0]).unwrap(), g0);
        assert_eq!(cf.cyl_differential(&[3.0, -1.0]).unwrap().1, 0.0);
        assert!(cf.cyl_eval(&[1.0]).is_err());
    }

    #[test]
    fn exact_contract_flattens_at_samples() {
        let space = NormedSpace::sup(2);
        let pts = vec![vec![0.1, 0.2], vec![-0.5, 0.4], vec![0.3, -0.6]];
        let e = CompactExhaustion::constant(pts.clone()).unwrap();
        let cfg = PipelineConfig { max_index: 4, mode: ExtensionMode::ExactContract, ..Default::default() };
        let f: Arc<dyn ScalarField> = Arc::new(NormCone::new(space, 1.0).unwrap());
        let p = Pipeline::new(f, e, cfg).unwrap();
        let Extension::Envelope(env) = p.extension().as_ref() else { panic!("plateau expected") };
        // smoothing ball inside the plateau once 1/(n·L̄) < r
        let n = (1.0 / (env.plateau_radius() * p.extension_lipschitz())).ceil() as usize + 1;
        let stage = p.stage(n).unwrap();
        for x in &pts {
            let (_, slope) = stage.function.cyl_differential(x).unwrap();
            assert!(slope < 1e-12, "{slope}");
        }
        let (_, cert) = p.run().unwrap();
        assert!(cert.passed());
    }

    #[test]
    fn euclidean_plane_uses_an_envelope() {
        let space = NormedSpace::euclidean(2);
        let f: Arc<dyn ScalarField> = Arc::new(NormCone::new(space.clone(), 1.0).unwrap());
        let e = CompactExhaustion::ball_samples(&space, &[0.0, 0.0], &[0.8], &[6], 1).unwrap();
        let cfg = PipelineConfig { max_index: 3, net_distortion: 0.2, ..Default::default() };
        let p = Pipeline::new(f, e, cfg).unwrap();
        assert!(matches!(p.extension().as_ref(), Extension::Envelope(_)));
        let (_, cert) = p.run().unwrap();
        assert!(cert.passed(), "{:?}", cert.failures().collect::<Vec<_>>());
    }

    #[test]
    fn csv_is_deterministic() {
        let e = CompactExhaustion::ball_samples(&NormedSpace::sup(2), &[0.0, 0.0], &[1.0], &[5], 2).unwrap();
        let cfg = PipelineConfig { max_index: 2, ..Default::default() };
        let (_, a) = run_pipeline(plane_cone(), e.clone(), cfg.clone()).unwrap();
        let (_, b) = run_pipeline(plane_cone(), e, cfg).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert!(String::from_utf8(x).unwrap().starts_with("n,point,f_n,f,error"));
    }
}
