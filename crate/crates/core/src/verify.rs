//! Invariant suites over every module, sized by [`VerifyConfig`].

use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{Affine, Constant, Kink, NormCone, StepFunction};
use crate::field::{finite_difference_gradient, FnField, ScalarField};
use crate::lipschitz::{asymptotic_slope, mcshane_extend, plateau_extend, FiniteSampleFunction};
use crate::map_operator::{integer_labels, net_amplification_certificate, BoundedSeq, MapOperator};
use crate::mollify::mollify;
use crate::normed_space::{dual_sphere_net_with_budget, NormedSpace};
use crate::pipeline::{run_pipeline, CompactExhaustion, ExtensionMode, PipelineConfig};
use crate::sampling::{self, SeededRng};
use crate::sobolev_bv::{bv_density_check, sobolev_density_check, BvSource, DensityConfig, WeightedMeasure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Random instances per property.
    pub instances: usize,
    /// Random pairs per instance for pairwise inequalities.
    pub pairs: usize,
    /// Largest index for the pipeline suite.
    pub max_index: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { instances: 40, pairs: 1000, max_index: 8, seed: 7 }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.pairs == 0 {
            return Err(Error::InvalidArgument("verify budgets must be positive".into()));
        }
        if self.max_index == 0 {
            return Err(Error::InvalidArgument("empty index range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        SuiteReport { suite: suite.to_string(), checks: 0, failures: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.failures.len() < 20 {
            self.failures.push(msg());
        }
    }

    fn error(&mut self, context: &str, e: Error) {
        self.checks += 1;
        self.failures.push(format!("{context}: {e}"));
    }
}

fn random_space(rng: &mut SeededRng, max_dim: usize) -> NormedSpace {
    let d = rng.random_range(1..=max_dim);
    match rng.random_range(0..5) {
        0 => NormedSpace::l1(d),
        1 => NormedSpace::euclidean(d),
        2 => NormedSpace::sup(d),
        3 => NormedSpace::weighted_lp(rng.random_range(1.0..6.0), (0..d).map(|_| rng.random_range(0.5..2.0)).collect())
            .expect("valid weights"),
        _ => {
            // symmetric polyhedral norm from random functionals plus the coordinate ones
            let mut f: Vec<Vec<f64>> = (0..d)
                .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect();
            for _ in 0..3 {
                f.push((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
            }
            NormedSpace::polyhedral(f).expect("coordinate functionals make it a norm")
        }
    }
}

fn random_vec(rng: &mut SeededRng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn normed_space_suite(cfg: &VerifyConfig) -> SuiteReport {
    let mut r = SuiteReport::new("normed_space");
    let mut rng = sampling::rng(sampling::derive_seed(cfg.seed, 1));
    for _ in 0..cfg.instances {
        let space = random_space(&mut rng, 3);
        let d = space.dim();
        for _ in 0..cfg.pairs {
            let (u, v) = (random_vec(&mut rng, d, 2.0), random_vec(&mut rng, d, 2.0));
            let t = rng.random_range(-3.0..3.0);
            let tu: Vec<f64> = u.iter().map(|x| t * x).collect();
            let (nu, nv) = (space.norm(&u), space.norm(&v));
            r.check((space.norm(&tu) - t.abs() * nu).abs() <= 1e-9 * (1.0 + nu), || {
                format!("homogeneity fails in {:?}", space.kind())
            });
            let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
            r.check(space.norm(&sum) <= nu + nv + 1e-9, || format!("triangle fails in {:?}", space.kind()));
        }
        for _ in 0..20 {
            let omega = random_vec(&mut rng, d, 1.0);
            let v = random_vec(&mut rng, d, 1.0);
            match space.dual_norm_with_witness(&omega) {
                Ok(pair) => {
                    let pairing: f64 = omega.iter().zip(&v).map(|(a, b)| a * b).sum();
                    r.check(pairing <= pair.value * space.norm(&v) + 1e-9, || "Hölder bound fails".into());
                    let attained: f64 = omega.iter().zip(&pair.witness).map(|(a, b)| a * b).sum();
                    r.check(
                        (attained - pair.value).abs() <= 1e-6 && (space.norm(&pair.witness) - 1.0).abs() <= 1e-6,
                        || format!("witness does not attain the dual norm in {:?}", space.kind()),
                    );
                }
                Err(e) => r.error("dual norm", e),
            }
        }
        match dual_sphere_net_with_budget(&space, 0.25, 1 << 16) {
            Ok(net) => {
                let delta = net.distortion();
                for _ in 0..50 {
                    let (u, v) = (random_vec(&mut rng, d, 1.0), random_vec(&mut rng, d, 1.0));
                    let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                    let comb: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
                    let ju = net.embed(&u).expect("dimension");
                    let jv = net.embed(&v).expect("dimension");
                    let jc = net.embed(&comb).expect("dimension");
                    let linear = jc
                        .iter()
                        .zip(ju.iter().zip(&jv))
                        .all(|(c, (x, y))| (c - (a * x + b * y)).abs() <= 1e-9 * (1.0 + c.abs()));
                    r.check(linear, || "embedding is not linear".into());
                    let sup = ju.iter().map(|x| x.abs()).fold(0.0, f64::max);
                    let n = space.norm(&u);
                    r.check(sup <= n + 1e-9 && sup >= (1.0 - delta) * n - 1e-9, || {
                        format!("embedding distortion exceeds {delta} in {:?}", space.kind())
                    });
                }
            }
            Err(e) => r.error("dual net", e),
        }
    }
    r
}

pub fn lipschitz_suite(cfg: &VerifyConfig) -> SuiteReport {
    let mut r = SuiteReport::new("lipschitz");
    let mut rng = sampling::rng(sampling::derive_seed(cfg.seed, 2));
    for inst in 0..cfg.instances {
        let space = random_space(&mut rng, 3);
        let d = space.dim();
        let m = rng.random_range(2..=8);
        let mut points: Vec<Vec<f64>> = Vec::new();
        while points.len() < m {
            let p = random_vec(&mut rng, d, 1.0);
            if points.iter().all(|q| space.distance(q, &p) > 1e-3) {
                points.push(p);
            }
        }
        let values: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = match FiniteSampleFunction::new(space.clone(), points.clone(), values.clone()) {
            Ok(b) => b,
            Err(e) => {
                r.error("base", e);
                continue;
            }
        };
        let l = base.lipschitz_constant();
        let plateau = plateau_extend(&base, 0.1).expect("positive epsilon");
        let mc = mcshane_extend(&base, l).expect("L = Lip(base)");
        for (p, v) in points.iter().zip(&values) {
            r.check(mc.eval(p) == *v, || format!("instance {inst}: McShane misses a base value"));
            let env = plateau.envelope();
            r.check(env.lower_envelope(p) == *v && env.upper_envelope(p) == *v, || {
                format!("instance {inst}: plateau envelopes miss a base value")
            });
        }
        for _ in 0..cfg.pairs / 10 {
            let (x, y) = (random_vec(&mut rng, d, 1.5), random_vec(&mut rng, d, 1.5));
            let env = plateau.envelope();
            r.check(env.lower_envelope(&x) >= env.upper_envelope(&x) - 1e-12, || {
                format!("instance {inst}: lower envelope below upper envelope")
            });
            let dist = space.distance(&x, &y);
            if dist > 0.0 {
                let q = (mc.eval(&x) - mc.eval(&y)).abs() / dist;
                r.check(q <= l + 1e-9, || format!("instance {inst}: McShane quotient {q} above {l}"));
            }
        }
        let omega = random_vec(&mut rng, d, 1.0);
        let affine = Affine::new(space.clone(), omega.clone(), 0.0).expect("dimension");
        let target = space.dual_norm(&omega).expect("dual norm");
        for radii in [vec![0.5, 0.1], vec![1e-2, 1e-3, 1e-4]] {
            let x = random_vec(&mut rng, d, 1.0);
            match asymptotic_slope(&affine, &x, &radii, 8, rng.random()) {
                Ok(s) => r.check((s.estimate - target).abs() <= 1e-9 * (1.0 + target), || {
                    format!("instance {inst}: affine slope {} vs {target} in {:?}", s.estimate, space.kind())
                }),
                Err(e) => r.error("asymptotic slope", e),
            }
        }
        let cone = NormCone::new(space.clone(), 1.0).expect("cap");
        let kink = Kink::new(space.clone(), random_vec(&mut rng, d, 0.5), 2.0).expect("dimension");
        for f in [&cone as &dyn ScalarField, &kink] {
            let decl = f.lipschitz_bound().expect("declared");
            let x = random_vec(&mut rng, d, 1.0);
            match asymptotic_slope(f, &x, &[0.1, 0.01], 8, rng.random()) {
                Ok(s) => r.check(s.trace.iter().all(|(_, e)| *e <= decl + 1e-9), || {
                    format!("instance {inst}: slope estimate {:?} above declared {decl} in {:?}", s.trace, space.kind())
                }),
                Err(e) => r.error("asymptotic slope", e),
            }
        }
    }
    r
}

pub fn map_operator_suite(cfg: &VerifyConfig) -> SuiteReport {
    let mut r = SuiteReport::new("map_operator");
    let mut rng = sampling::rng(sampling::derive_seed(cfg.seed, 3));
    let unit = 1.0 / 256.0;
    for inst in 0..cfg.instances {
        let size = rng.random_range(1..=500);
        let labels = integer_labels(size);
        let eps_units = rng.random_range(4..=64) as i64;
        let eps = eps_units as f64 * unit;
        let n = rng.random_range(1..=5);
        let vectors: Vec<BoundedSeq> = (0..n)
            .map(|_| {
                let v = (0..size).map(|_| rng.random_range(-512..=512) as f64 * unit).collect();
                BoundedSeq::new(labels.clone(), v).expect("labels match")
            })
            .collect();
        let op = match MapOperator::partition_for_diameter(&vectors, eps) {
            Ok(op) => op,
            Err(e) => {
                r.error("partition", e);
                continue;
            }
        };
        r.check(op.rank() == op.blocks().len(), || format!("instance {inst}: rank differs from block count"));
        for a in &vectors {
            let pa = op.apply(a).expect("labels match");
            r.check(pa.sup_distance(a).expect("labels") <= eps, || format!("instance {inst}: generator moved"));
            r.check(op.apply(&pa).expect("labels") == pa, || format!("instance {inst}: not idempotent"));
            r.check(pa.sup_norm() <= a.sup_norm(), || format!("instance {inst}: norm increased"));
        }
        let c = BoundedSeq::new(labels.clone(), vec![0.75; size]).expect("labels");
        r.check(op.apply(&c).expect("labels") == c, || format!("instance {inst}: constants move"));
        let (a, b) = (&vectors[0], &vectors[n - 1]);
        let lhs = op.apply(&a.combine(0.5, b, -2.0).expect("labels")).expect("labels");
        let rhs = op.apply(a).expect("labels").combine(0.5, &op.apply(b).expect("labels"), -2.0).expect("labels");
        r.check(lhs == rhs, || format!("instance {inst}: not linear"));
        let mut k = vectors.clone();
        for f in &vectors {
            let v = f.values().iter().map(|x| x + rng.random_range(-eps_units..=eps_units) as f64 * unit).collect();
            k.push(BoundedSeq::new(labels.clone(), v).expect("labels"));
        }
        match net_amplification_certificate(&k, &vectors, &op, eps) {
            Ok(cert) => r.check(cert.pass, || format!("instance {inst}: ratio {} above 3", cert.worst_ratio)),
            Err(e) => r.error("amplification", e),
        }
    }
    r
}

pub fn mollify_suite(cfg: &VerifyConfig) -> SuiteReport {
    let mut r = SuiteReport::new("mollify");
    let mut rng = sampling::rng(sampling::derive_seed(cfg.seed, 4));
    for space in [NormedSpace::euclidean(1), NormedSpace::sup(2), NormedSpace::l1(2)] {
        let d = space.dim();
        let eps = 0.1;
        let fields: Vec<Arc<dyn ScalarField>> = vec![
            Arc::new(Constant::new(space.clone(), -0.25)),
            Arc::new(Affine::new(space.clone(), random_vec(&mut rng, d, 1.0), 0.3).expect("dimension")),
            Arc::new(NormCone::new(space.clone(), 0.5).expect("cap")),
        ];
        for f in fields {
            let h = eps * space.euclidean_inradius() / 24.0;
            let sf = match mollify(f.clone(), eps, h) {
                Ok(sf) => sf,
                Err(e) => {
                    r.error("mollify", e);
                    continue;
                }
            };
            let (lo, hi) = f.bounds().expect("bounded families");
            let lip = f.lipschitz_bound().expect("declared");
            let tau = sf.tau_q();
            for _ in 0..cfg.pairs / 10 {
                let x = random_vec(&mut rng, d, 1.0);
                let y: Vec<f64> = x.iter().map(|c| c + rng.random_range(-0.05..0.05)).collect();
                let (fx, fy) = (sf.eval(&x), sf.eval(&y));
                r.check(fx >= lo && fx <= hi, || format!("range violated at {x:?}"));
                let dist = space.distance(&x, &y);
                if dist > 0.0 {
                    let q = (fx - fy).abs() / dist;
                    r.check(q <= lip + tau, || format!("quotient {q} above {lip} + {tau}"));
                }
            }
            for _ in 0..cfg.instances {
                let x = random_vec(&mut rng, d, 1.0);
                let g = sf.smoothed_gradient(&x).expect("grid rule");
                let fd = finite_difference_gradient(&sf, &x, 1e-5);
                let scale = space.dual_norm(&g).expect("dual norm");
                let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
                let err = space.dual_norm(&diff).expect("dual norm");
                r.check(err <= 1e-4 * scale.max(1e-2), || format!("gradient differs from finite differences by {err}"));
            }
        }
        let seen = Arc::new(Mutex::new(0.0f64));
        let center = random_vec(&mut rng, d, 1.0);
        let (probe, c2, s2) = (seen.clone(), center.clone(), space.clone());
        let traced = FnField::new(space.clone(), move |z| {
            let mut m = probe.lock().expect("not poisoned");
            *m = m.max(s2.distance(z, &c2));
            z.iter().sum::<f64>().sin()
        })
        .with_lipschitz(space.dual_norm(&vec![1.0; d]).expect("dual norm"))
        .with_bounds(-1.0, 1.0);
        match mollify(traced, eps, eps * space.euclidean_inradius() / 24.0) {
            Ok(sf) => {
                *seen.lock().expect("not poisoned") = 0.0;
                let _ = sf.eval(&center);
                let reach = *seen.lock().expect("not poisoned");
                r.check(reach < eps, || format!("source read at distance {reach} >= {eps}"));
            }
            Err(e) => r.error("mollify", e),
        }
    }
    r
}

pub fn pipeline_suite(cfg: &VerifyConfig) -> SuiteReport {
    let mut r = SuiteReport::new("pipeline");
    let space = NormedSpace::sup(2);
    let cone: Arc<dyn ScalarField> = Arc::new(NormCone::new(space.clone(), 1.0).expect("cap"));
    let exhaustion = CompactExhaustion::ball_samples(&space, &[0.0, 0.0], &[0.5, 1.5], &[6, 6], cfg.seed)
        .expect("valid exhaustion");
    for mode in [ExtensionMode::Faithful, ExtensionMode::ExactContract] {
        let pc = PipelineConfig { max_index: cfg.max_index, mode, seed: cfg.seed, ..Default::default() };
        match run_pipeline(cone.clone(), exhaustion.clone(), pc) {
            Ok((_, cert)) => {
                for row in &cert.rows {
                    r.check(row.pass, || format!("{mode:?} n={} point={} violates {:?}", row.n, row.point, row.violations()));
                    r.check(row.f_n >= cert.range.0 && row.f_n <= cert.range.1, || "range".into());
                }
            }
            Err(e) => r.error("pipeline", e),
        }
    }
    let affine: Arc<dyn ScalarField> = Arc::new(Affine::new(space.clone(), vec![0.5, -1.0], 0.2).expect("dimension"));
    let pc = PipelineConfig { max_index: cfg.max_index.min(4), seed: cfg.seed, ..Default::default() };
    match run_pipeline(affine, exhaustion, pc) {
        Ok((_, cert)) => {
            for row in &cert.rows {
                r.check((row.slope - 1.5).abs() <= row.slope_slack, || format!("affine slope {} at n={}", row.slope, row.n));
            }
        }
        Err(e) => r.error("affine pipeline", e),
    }
    r
}

pub fn sobolev_bv_suite(cfg: &VerifyConfig) -> SuiteReport {
    let mut r = SuiteReport::new("sobolev_bv");
    let mu = WeightedMeasure::uniform_grid(&[0.0], &[1.0], &[1000]).expect("grid");
    let dc = DensityConfig {
        pipeline: PipelineConfig { max_index: 64, seed: cfg.seed, ..Default::default() },
        ..Default::default()
    };
    let kink: Arc<dyn ScalarField> = Arc::new(Kink::new(NormedSpace::euclidean(1), vec![0.5], 1.0).expect("kink"));
    for p in [1.0, 2.0] {
        match sobolev_density_check(kink.clone(), &mu, p, &dc) {
            Ok(rep) => {
                r.check(rep.passed(), || format!("Sobolev p={p}: {:?}", rep.failures));
                let oracle = rep.oracle.unwrap_or(0.0);
                for row in rep.rows.iter().filter(|row| row.in_window) {
                    let e = row.energy.unwrap_or(f64::NAN);
                    r.check(e >= oracle - row.slack, || format!("energy {e} below oracle at n={}", row.n));
                }
            }
            Err(e) => r.error("Sobolev check", e),
        }
    }
    let step = StepFunction::indicator(0.5, 1.0).expect("interval");
    match bv_density_check(&BvSource::Step(step), &mu, &dc) {
        Ok(rep) => r.check(rep.passed(), || format!("BV: {:?}", rep.failures)),
        Err(e) => r.error("BV check", e),
    }
    r
}

/// Runs every suite in a fixed order.
pub fn run_all(cfg: &VerifyConfig) -> Result<Vec<SuiteReport>> {
    cfg.validate()?;
    Ok(vec![
        normed_space_suite(cfg),
        lipschitz_suite(cfg),
        map_operator_suite(cfg),
        mollify_suite(cfg),
        pipeline_suite(cfg),
        sobolev_bv_suite(cfg),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        let cfg = VerifyConfig { instances: 5, pairs: 100, max_index: 3, seed: 1 };
        for rep in [normed_space_suite(&cfg), lipschitz_suite(&cfg), map_operator_suite(&cfg), mollify_suite(&cfg)] {
            assert!(rep.passed(), "{rep:?}");
            assert!(rep.checks > 0);
        }
    }

    #[test]
    fn zero_budget_is_rejected() {
        assert!(run_all(&VerifyConfig { instances: 0, ..Default::default() }).is_err());
    }
}
