//! Experiment configuration: one JSON document per run.
//!
//! Every section is optional at parse time; each subcommand asks for the
//! sections it needs and reports a config error (exit 2) when one is missing.
//!
//! ```json
//! {
//!   "space": { "dim": 2, "kind": "lp", "p": "inf" },
//!   "function": { "family": "norm_cone", "cap": 1.0 },
//!   "exhaustion": { "kind": "balls", "radii": [0.5, 1.0], "counts": [30, 40] },
//!   "epsilon": 0.1,
//!   "max_index": 32,
//!   "seed": 0
//! }
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use liplab_core::families::{Affine, Constant, Kink, NormCone, PolygonIndicator, StepFunction};
use liplab_core::lipschitz::FiniteSampleFunction;
use liplab_core::normed_space::NormDescriptor;
use liplab_core::pipeline::{CompactExhaustion, ExtensionMode, PipelineConfig};
use liplab_core::sampling;
use liplab_core::sobolev_bv::{BvSource, DensityConfig, WeightedMeasure};
use liplab_core::verify::VerifyConfig;
use liplab_core::{families, NormedSpace, ScalarField};
use serde::{Deserialize, Serialize};

/// A configuration problem. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<liplab_core::Error> for ConfigError {
    fn from(e: liplab_core::Error) -> Self {
        ConfigError(e.to_string())
    }
}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    Constant {
        value: f64,
    },
    Affine {
        omega: Vec<f64>,
        #[serde(default)]
        offset: f64,
        /// Declared value range; required by the pipeline when the space is unbounded
        /// along `omega`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<(f64, f64)>,
    },
    /// `min(cap, ‖x‖)`.
    NormCone {
        #[serde(default = "one")]
        cap: f64,
    },
    /// `min(cap, ‖x − center‖)`.
    Kink {
        center: Vec<f64>,
        #[serde(default = "one")]
        cap: f64,
    },
    /// Indicator of `[a, b)` on the line.
    Indicator {
        a: f64,
        b: f64,
    },
    /// Piecewise constant on the line: `values[i]` on `[breaks[i-1], breaks[i])`.
    Step {
        breaks: Vec<f64>,
        values: Vec<f64>,
    },
    /// Indicator of a convex or simple polygon in the plane.
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
    /// Finitely many samples, extended by a McShane envelope. Either inline
    /// `points`/`values` or a CSV file with columns `x0..x{d-1},value`.
    Samples {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        points: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExhaustionSpec {
    /// Nested random samples of balls `B_{r_i}(center)` with `counts[i]` points each.
    Balls {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
        radii: Vec<f64>,
        counts: Vec<usize>,
    },
    /// The same explicit point set at every index.
    Points { points: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// Uniform midpoint grid on the box `[lo, hi]`, each cell weighted by its volume.
    Grid { lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize> },
    /// Explicit weighted atoms.
    Atoms { points: Vec<Vec<f64>>, weights: Vec<f64> },
}

/// Pipeline knobs beyond `epsilon`, `max_index`, `mode` and `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tuning {
    pub net_distortion: f64,
    pub net_budget: usize,
    pub grid_ratio: f64,
    pub mc_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor_spacing: Option<f64>,
    pub lip_samples: usize,
    pub reference_samples: usize,
    pub sampling_slack: f64,
}

impl Default for Tuning {
    fn default() -> Self {
        let d = PipelineConfig::default();
        Tuning {
            net_distortion: d.net_distortion,
            net_budget: d.net_budget,
            grid_ratio: d.grid_ratio,
            mc_samples: d.mc_samples,
            anchor_spacing: d.anchor_spacing,
            lip_samples: d.lip_samples,
            reference_samples: d.reference_samples,
            sampling_slack: d.sampling_slack,
        }
    }
}

/// Tolerances of the energy checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySpec {
    pub window: usize,
    pub lp_tolerance: f64,
    pub energy_tolerance: f64,
    pub panel_tolerance: f64,
    pub slope_radii: Vec<f64>,
    pub slope_samples: usize,
    pub ramp_width: f64,
    pub ramp_levels: usize,
}

impl Default for DensitySpec {
    fn default() -> Self {
        let d = DensityConfig::default();
        DensitySpec {
            window: d.window,
            lp_tolerance: d.lp_tolerance,
            energy_tolerance: d.energy_tolerance,
            panel_tolerance: d.panel_tolerance,
            slope_radii: d.slope_radii,
            slope_samples: d.slope_samples,
            ramp_width: d.ramp_width,
            ramp_levels: d.ramp_levels,
        }
    }
}

/// Random net instances for the amplification stress run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressSpec {
    pub instances: usize,
    /// Largest index set size `|S|`.
    pub max_support: usize,
    /// Largest net size.
    pub max_net: usize,
    /// Largest number of extra points of `K` per instance.
    pub max_extra: usize,
}

impl Default for StressSpec {
    fn default() -> Self {
        StressSpec { instances: 200, max_support: 2000, max_net: 5, max_extra: 10 }
    }
}

/// Input of the `mapop` subcommand: explicit vectors, a random stress run, or both.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapopSpec {
    /// Vectors `a¹..aⁿ` of `ℓ∞(S)`, all of length `|S|`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub vectors: Vec<Vec<f64>>,
    /// Extra points of `K` certified against the net formed by `vectors`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stress: Option<StressSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub instances: usize,
    pub pairs: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        let d = VerifyConfig::default();
        VerifySpec { instances: d.instances, pairs: d.pairs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub space: Option<NormDescriptor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub function: Option<FunctionSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exhaustion: Option<ExhaustionSpec>,
    pub epsilon: f64,
    pub max_index: usize,
    pub mode: ExtensionMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
    /// Exponents for the `sobolev` command.
    pub p: Vec<f64>,
    pub seed: u64,
    pub output: PathBuf,
    pub tuning: Tuning,
    pub density: DensitySpec,
    pub mapop: MapopSpec,
    pub verify: VerifySpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let d = PipelineConfig::default();
        ExperimentConfig {
            space: None,
            function: None,
            exhaustion: None,
            epsilon: d.epsilon,
            max_index: d.max_index,
            mode: d.mode,
            measure: None,
            p: vec![1.0, 2.0],
            seed: d.seed,
            output: PathBuf::from("liplab-out"),
            tuning: Tuning::default(),
            density: DensitySpec::default(),
            mapop: MapopSpec::default(),
            verify: VerifySpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| bad(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical form: pretty JSON with every default spelled out.
    pub fn emit(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section that is present, so that a bad value fails at
    /// parse time whichever subcommand runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline_config().validate()?;
        self.density_config().validate()?;
        self.verify_config().validate()?;
        if self.p.is_empty() {
            return Err(bad("p list is empty"));
        }
        if let Some(p) = self.p.iter().find(|p| !(p.is_finite() && **p >= 1.0)) {
            return Err(bad(format!("exponent {p} must be finite and at least 1")));
        }
        let space = self.space.clone().map(NormedSpace::try_from).transpose()?;
        if let Some(m) = &self.measure {
            let mu = build_measure(m)?;
            if let Some(s) = &space {
                if s.dim() != mu.dim() {
                    return Err(bad(format!("measure dimension {} differs from space dimension {}", mu.dim(), s.dim())));
                }
            }
        }
        if let (Some(s), Some(e)) = (&space, &self.exhaustion) {
            self.build_exhaustion_in(s, e)?;
        }
        if let (Some(s), Some(f)) = (&space, &self.function) {
            build_function(s, f)?;
        }
        if let Some(st) = &self.mapop.stress {
            if st.instances == 0 || st.max_support == 0 || st.max_net == 0 {
                return Err(bad("stress budgets must be positive"));
            }
        }
        let lens: Vec<usize> = self.mapop.vectors.iter().chain(&self.mapop.points).map(Vec::len).collect();
        if lens.iter().any(|&l| l != lens[0]) {
            return Err(bad("mapop vectors differ in length"));
        }
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let t = &self.tuning;
        PipelineConfig {
            epsilon: self.epsilon,
            max_index: self.max_index,
            mode: self.mode,
            net_distortion: t.net_distortion,
            net_budget: t.net_budget,
            grid_ratio: t.grid_ratio,
            mc_samples: t.mc_samples,
            anchor_spacing: t.anchor_spacing,
            lip_samples: t.lip_samples,
            reference_samples: t.reference_samples,
            sampling_slack: t.sampling_slack,
            seed: self.seed,
        }
    }

    pub fn density_config(&self) -> DensityConfig {
        let d = &self.density;
        DensityConfig {
            pipeline: self.pipeline_config(),
            window: d.window,
            lp_tolerance: d.lp_tolerance,
            energy_tolerance: d.energy_tolerance,
            panel_tolerance: d.panel_tolerance,
            slope_radii: d.slope_radii.clone(),
            slope_samples: d.slope_samples,
            ramp_width: d.ramp_width,
            ramp_levels: d.ramp_levels,
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            instances: self.verify.instances,
            pairs: self.verify.pairs,
            max_index: self.max_index,
            seed: self.seed,
        }
    }

    pub fn space(&self) -> Result<NormedSpace, ConfigError> {
        let d = self.space.clone().ok_or_else(|| bad("missing section `space`"))?;
        Ok(NormedSpace::try_from(d)?)
    }

    pub fn function_spec(&self) -> Result<&FunctionSpec, ConfigError> {
        self.function.as_ref().ok_or_else(|| bad("missing section `function`"))
    }

    /// The configured function as a Lipschitz field.
    pub fn field(&self) -> Result<Arc<dyn ScalarField>, ConfigError> {
        build_function(&self.space()?, self.function_spec()?)?
            .into_field()
            .map_err(|family| bad(format!("function family `{family}` is not Lipschitz; use the bv command")))
    }

    /// The configured function as a BV source.
    pub fn bv_source(&self) -> Result<BvSource, ConfigError> {
        Ok(match build_function(&self.space()?, self.function_spec()?)? {
            Built::Field(f) => BvSource::Lipschitz(f),
            Built::Step(s) => BvSource::Step(s),
            Built::Polygon(p) => BvSource::Polygon(p),
        })
    }

    pub fn measure(&self) -> Result<WeightedMeasure, ConfigError> {
        build_measure(self.measure.as_ref().ok_or_else(|| bad("missing section `measure`"))?)
    }

    pub fn exhaustion(&self) -> Result<CompactExhaustion, ConfigError> {
        let spec = self.exhaustion.as_ref().ok_or_else(|| bad("missing section `exhaustion`"))?;
        self.build_exhaustion_in(&self.space()?, spec)
    }

    fn build_exhaustion_in(&self, space: &NormedSpace, spec: &ExhaustionSpec) -> Result<CompactExhaustion, ConfigError> {
        match spec {
            ExhaustionSpec::Balls { center, radii, counts } => {
                let origin = vec![0.0; space.dim()];
                let center = center.as_deref().unwrap_or(&origin);
                if center.len() != space.dim() {
                    return Err(bad(format!("exhaustion center has {} coordinates, space has {}", center.len(), space.dim())));
                }
                if counts.contains(&0) {
                    return Err(bad("exhaustion counts must be positive"));
                }
                let seed = sampling::derive_seed(self.seed, 5);
                Ok(CompactExhaustion::ball_samples(space, center, radii, counts, seed)?)
            }
            ExhaustionSpec::Points { points } => {
                if let Some(p) = points.iter().find(|p| p.len() != space.dim()) {
                    return Err(bad(format!("exhaustion point {p:?} has the wrong dimension")));
                }
                Ok(CompactExhaustion::constant(points.clone())?)
            }
        }
    }
}

enum Built {
    Field(Arc<dyn ScalarField>),
    Step(StepFunction),
    Polygon(PolygonIndicator),
}

impl Built {
    fn into_field(self) -> Result<Arc<dyn ScalarField>, &'static str> {
        match self {
            Built::Field(f) => Ok(f),
            Built::Step(_) => Err("step"),
            Built::Polygon(_) => Err("polygon"),
        }
    }
}

fn build_function(space: &NormedSpace, spec: &FunctionSpec) -> Result<Built, ConfigError> {
    let line = |family: &str| {
        if space.dim() == 1 {
            Ok(())
        } else {
            Err(bad(format!("family `{family}` needs a one-dimensional space")))
        }
    };
    Ok(match spec {
        FunctionSpec::Constant { value } => Built::Field(Arc::new(Constant::new(space.clone(), *value))),
        FunctionSpec::Affine { omega, offset, range } => Built::Field(Arc::new(match range {
            Some(r) => Affine::with_range(space.clone(), omega.clone(), *offset, *r)?,
            None => Affine::new(space.clone(), omega.clone(), *offset)?,
        })),
        FunctionSpec::NormCone { cap } => Built::Field(Arc::new(NormCone::new(space.clone(), *cap)?)),
        FunctionSpec::Kink { center, cap } => Built::Field(Arc::new(Kink::new(space.clone(), center.clone(), *cap)?)),
        FunctionSpec::Indicator { a, b } => {
            line("indicator")?;
            Built::Step(StepFunction::indicator(*a, *b)?)
        }
        FunctionSpec::Step { breaks, values } => {
            line("step")?;
            Built::Step(StepFunction::new(breaks.clone(), values.clone())?)
        }
        FunctionSpec::Polygon { vertices } => Built::Polygon(PolygonIndicator::new(space.clone(), vertices.clone())?),
        FunctionSpec::Samples { points, values, path } => {
            let base = match path {
                Some(p) => {
                    if !points.is_empty() || !values.is_empty() {
                        return Err(bad("samples: give either `path` or inline points, not both"));
                    }
                    let file = std::fs::File::open(p).map_err(|e| bad(format!("{}: {e}", p.display())))?;
                    FiniteSampleFunction::read_csv(space.clone(), file)?
                }
                None => FiniteSampleFunction::new(space.clone(), points.clone(), values.clone())?,
            };
            Built::Field(Arc::new(families::sampled_field(&base)?))
        }
    })
}

fn build_measure(spec: &MeasureSpec) -> Result<WeightedMeasure, ConfigError> {
    Ok(match spec {
        MeasureSpec::Grid { lo, hi, counts } => WeightedMeasure::uniform_grid(lo, hi, counts)?,
        MeasureSpec::Atoms { points, weights } => WeightedMeasure::new(points.clone(), weights.clone())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONE: &str = r#"{
        "space": { "dim": 2, "kind": "lp", "p": "inf" },
        "function": { "family": "norm_cone" },
        "exhaustion": { "kind": "balls", "radii": [0.5, 1.0], "counts": [10, 10] },
        "max_index": 4
    }"#;

    #[test]
    fn parse_emit_round_trip() {
        let cfg = ExperimentConfig::parse(CONE).unwrap();
        let text = cfg.emit();
        let again = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, again.emit());
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::parse(CONE).unwrap();
        assert_eq!(cfg.epsilon, PipelineConfig::default().epsilon);
        assert_eq!(cfg.function, Some(FunctionSpec::NormCone { cap: 1.0 }));
        assert!(cfg.field().is_ok());
    }

    #[test]
    fn rejects_bad_values() {
        let with = |patch: &str| CONE.replacen("\"max_index\": 4", patch, 1);
        let err = ExperimentConfig::parse(&with("\"max_index\": 0")).unwrap_err();
        assert!(err.0.contains("empty index range"), "{err}");
        assert!(ExperimentConfig::parse(&with("\"max_index\": 4, \"epsilon\": 0")).is_err());
        assert!(ExperimentConfig::parse(&with("\"max_index\": 4, \"bogus\": 1")).is_err());
        let neg = with(r#""max_index": 4, "measure": {"kind": "atoms", "points": [[0,0],[1,1]], "weights": [1, -1]}"#);
        assert!(ExperimentConfig::parse(&neg).is_err());
    }

    #[test]
    fn step_is_not_a_field() {
        let text = r#"{
            "space": { "dim": 1, "kind": "lp", "p": 2 },
            "function": { "family": "indicator", "a": 0.5, "b": 1.0 }
        }"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert!(cfg.field().is_err());
        assert!(matches!(cfg.bv_source().unwrap(), BvSource::Step(_)));
    }
}
