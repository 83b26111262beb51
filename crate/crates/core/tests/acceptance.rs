//! Acceptance suite. Runs as a plain binary (`harness = false`) so that every
//! criterion prints one PASS/FAIL line regardless of output capture.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use liplab_core::families::{Affine, Constant, Kink, NormCone, StepFunction};
use liplab_core::field::{finite_difference_gradient, FnField, ScalarField};
use liplab_core::lipschitz::{plateau_extend, FiniteSampleFunction};
use liplab_core::map_operator::{integer_labels, net_amplification_certificate, BoundedSeq, MapOperator};
use liplab_core::mollify::{mollify, slope_bullet_check};
use liplab_core::normed_space::NormedSpace;
use liplab_core::pipeline::{run_pipeline, CompactExhaustion, CylinderFunction, PipelineConfig};
use liplab_core::sampling::{self, SeededRng};
use liplab_core::sobolev_bv::{
    bv_density_check, lp_strong_density_reports, sobolev_density_check, BvSource, DensityConfig, WeightedMeasure,
};
use rand::Rng;

const SEED: u64 = 20_240_601;

// criterion 3
const PLATEAU_EXACT: f64 = 1e-12;
const PLATEAU_LIP_SLACK: f64 = 1e-9;
// criterion 4
const MOLLIFY_SLACK: f64 = 1e-3;
// criterion 6
const SOBOLEV_LP_REL: f64 = 0.01;
const SOBOLEV_ENERGY: f64 = 0.02;
// criterion 7
const BV_ENERGY: f64 = 0.02;
const BV_PANEL: f64 = 0.05;
// criterion 8
const DENSITY_REL: f64 = 0.01;
// criterion 9
const DIFFERENTIAL_REL: f64 = 1e-4;

type Outcome = Result<String, String>;

fn random_space(rng: &mut SeededRng, max_dim: usize) -> NormedSpace {
    let d = rng.random_range(1..=max_dim);
    match rng.random_range(0..4) {
        0 => NormedSpace::l1(d),
        1 => NormedSpace::euclidean(d),
        2 => NormedSpace::sup(d),
        _ => NormedSpace::weighted_lp(3.0, (0..d).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap(),
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// MAP operator suite.
type Criterion = (&'static str, fn() -> Outcome);

fn criterion_1() -> Outcome {
    let mut rng = sampling::rng(sampling::derive_seed(SEED, 1));
    let mut checked = 0usize;
    for inst in 0..200 {
        let size = rng.random_range(1..=10_000);
        let n = rng.random_range(1..=5);
        let eps = rng.random_range(0.01..1.0);
        let labels = integer_labels(size);
        let vectors: Vec<BoundedSeq> = (0..n)
            .map(|_| BoundedSeq::new(labels.clone(), (0..size).map(|_| rng.random_range(-3.0..3.0)).collect()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let op = MapOperator::partition_for_diameter(&vectors, eps).map_err(|e| e.to_string())?;
        for (i, a) in vectors.iter().enumerate() {
            let pa = op.apply(a).map_err(|e| e.to_string())?;
            let err = pa.sup_distance(a).map_err(|e| e.to_string())?;
            ensure(err <= eps, || format!("instance {inst}: vector {i} moved by {err} > {eps}"))?;
            let ppa = op.apply(&pa).map_err(|e| e.to_string())?;
            ensure(ppa == pa, || format!("instance {inst}: not idempotent"))?;
            ensure(pa.sup_norm() <= a.sup_norm(), || format!("instance {inst}: norm increased"))?;
        }
        let (alpha, beta) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let a = &vectors[0];
        let b = &vectors[n - 1];
        let lhs = op.apply(&a.combine(alpha, b, beta).unwrap()).unwrap();
        let rhs = op.apply(a).unwrap().combine(alpha, &op.apply(b).unwrap(), beta).unwrap();
        ensure(lhs == rhs, || format!("instance {inst}: not linear"))?;
        let c = rng.random_range(-5.0..5.0);
        let constant = BoundedSeq::new(labels.clone(), vec![c; size]).unwrap();
        let pc = op.apply(&constant).unwrap();
        ensure(pc == constant && pc.sup_norm() == constant.sup_norm(), || {
            format!("instance {inst}: constants are not fixed")
        })?;
        ensure(op.rank() == op.blocks().len() && op.rank() <= size, || format!("instance {inst}: rank"))?;
        checked += 1;
    }
    Ok(format!("{checked} instances"))
}

/// 3ε amplification with dyadic data, so every comparison is exact.
fn criterion_2() -> Outcome {
    let mut rng = sampling::rng(sampling::derive_seed(SEED, 2));
    let unit = 1.0 / 1024.0;
    let mut worst = 0.0f64;
    for inst in 0..200 {
        let size = rng.random_range(1..=2_000);
        let labels = integer_labels(size);
        let eps_units = rng.random_range(8..=256) as i64;
        let eps = eps_units as f64 * unit;
        let net_size = rng.random_range(1..=5);
        let net: Vec<BoundedSeq> = (0..net_size)
            .map(|_| {
                let v = (0..size).map(|_| rng.random_range(-2048..=2048) as f64 * unit).collect();
                BoundedSeq::new(labels.clone(), v).unwrap()
            })
            .collect();
        let op = MapOperator::partition_for_diameter(&net, eps).map_err(|e| e.to_string())?;
        let mut k: Vec<BoundedSeq> = net.clone();
        for _ in 0..rng.random_range(1..=10) {
            let f = &net[rng.random_range(0..net_size)];
            let v = f.values().iter().map(|x| x + rng.random_range(-eps_units..=eps_units) as f64 * unit).collect();
            k.push(BoundedSeq::new(labels.clone(), v).unwrap());
        }
        let cert = net_amplification_certificate(&k, &net, &op, eps).map_err(|e| format!("instance {inst}: {e}"))?;
        ensure(cert.pass && cert.worst_ratio <= 3.0, || {
            format!("instance {inst}: worst ratio {}", cert.worst_ratio)
        })?;
        worst = worst.max(cert.worst_ratio);
    }
    Ok(format!("200 instances, worst ratio {worst:.4}"))
}

/// Plateau extension contract.
fn criterion_3() -> Outcome {
    let mut rng = sampling::rng(sampling::derive_seed(SEED, 3));
    let mut pairs_total = 0usize;
    for inst in 0..100 {
        let space = random_space(&mut rng, 3);
        let d = space.dim();
        let m = rng.random_range(1..=12);
        let mut points: Vec<Vec<f64>> = Vec::new();
        while points.len() < m {
            let p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if points.iter().all(|q| space.distance(q, &p) > 1e-3) {
                points.push(p);
            }
        }
        let values: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = FiniteSampleFunction::new(space.clone(), points.clone(), values.clone()).map_err(|e| e.to_string())?;
        let eps = rng.random_range(0.01..0.5);
        let ext = plateau_extend(&base, eps).map_err(|e| e.to_string())?;
        let bound = base.lipschitz_constant() + eps + PLATEAU_LIP_SLACK;
        for (p, v) in points.iter().zip(&values) {
            let got = ext.eval(p);
            ensure((got - v).abs() <= PLATEAU_EXACT, || format!("instance {inst}: extension {got} vs data {v}"))?;
        }
        for _ in 0..10_000 {
            let x: Vec<f64> = if rng.random_bool(0.5) {
                points[rng.random_range(0..m)].iter().map(|c| c + rng.random_range(-0.3..0.3)).collect()
            } else {
                (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()
            };
            let y: Vec<f64> = if rng.random_bool(0.5) {
                x.iter().map(|c| c + rng.random_range(-0.05..0.05)).collect()
            } else {
                (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()
            };
            let dist = space.distance(&x, &y);
            if dist > 0.0 {
                let q = (ext.eval(&x) - ext.eval(&y)).abs() / dist;
                ensure(q <= bound, || format!("instance {inst}: quotient {q} above {bound}"))?;
            }
            pairs_total += 1;
        }
        let r = ext.radius();
        let probe = if r.is_finite() { r / 2.0 } else { 10.0 };
        for (p, v) in points.iter().zip(&values) {
            for _ in 0..20 {
                let y = space.sample_ball(p, probe, &mut rng);
                let got = ext.eval(&y);
                ensure((got - v).abs() <= PLATEAU_EXACT, || {
                    format!("instance {inst}: not constant near a sample ({got} vs {v})")
                })?;
            }
        }
    }
    Ok(format!("100 bases, {pairs_total} pairs"))
}

/// Mollifier bullets.
fn criterion_4() -> Outcome {
    let mut rng = sampling::rng(sampling::derive_seed(SEED, 4));
    let spaces = [NormedSpace::euclidean(1), NormedSpace::euclidean(2), NormedSpace::sup(2)];
    let mut runs = 0;
    for space in &spaces {
        let d = space.dim();
        let fields: Vec<(&str, Arc<dyn ScalarField>)> = vec![
            ("constant", Arc::new(Constant::new(space.clone(), 0.375))),
            (
                "affine",
                Arc::new(Affine::new(space.clone(), (0..d).map(|i| 0.75 - 0.5 * i as f64).collect(), 0.2).unwrap()),
            ),
            ("abs", Arc::new(Kink::new(space.clone(), vec![0.0; d], f64::INFINITY).unwrap())),
        ];
        for (name, f) in fields {
            let lip = f.lipschitz_bound().unwrap();
            let (lo, hi) = f.bounds().unwrap();
            for eps in [0.2, 0.05] {
                let sf = mollify(f.clone(), eps, eps / 50.0).map_err(|e| format!("{name} eps={eps}: {e}"))?;
                let points: Vec<Vec<f64>> = (0..100)
                    .map(|i| {
                        if i < 10 {
                            // near the kink
                            (0..d).map(|_| rng.random_range(-eps..eps)).collect()
                        } else {
                            (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
                        }
                    })
                    .collect();
                let tag = |msg: String| format!("{name} in {:?} eps={eps}: {msg}", space.kind());
                for x in &points {
                    let v = sf.eval(x);
                    let nodes = sf.support_nodes(x);
                    let node_vals: Vec<f64> = nodes.iter().map(|z| f.eval(z)).collect();
                    let nlo = node_vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    let nhi = node_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    ensure(v >= lo && v <= hi && v >= nlo && v <= nhi, || tag(format!("range violated at {x:?}: {v}")))?;
                    if name == "constant" {
                        ensure(v == 0.375, || tag(format!("constant moved to {v}")))?;
                    }
                    let err = (v - f.eval(x)).abs();
                    ensure(err <= lip * eps + MOLLIFY_SLACK, || tag(format!("|f_eps - f| = {err} at {x:?}")))?;
                    let g = sf.smoothed_gradient(x).map_err(|e| e.to_string())?;
                    let s = space.dual_norm(&g).unwrap();
                    ensure(s <= lip + MOLLIFY_SLACK, || tag(format!("slope {s} at {x:?}")))?;
                }
                for w in points.windows(2) {
                    let y: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| a + 0.01 * (b - a)).collect();
                    let dist = space.distance(&w[0], &y);
                    if dist > 0.0 {
                        let q = (sf.eval(&w[0]) - sf.eval(&y)).abs() / dist;
                        ensure(q <= lip + MOLLIFY_SLACK, || tag(format!("quotient {q}")))?;
                    }
                }
                let rows = slope_bullet_check(&sf, &points, 16, sampling::derive_seed(SEED, 40 + runs)).map_err(|e| e.to_string())?;
                for r in &rows {
                    ensure(r.slope <= r.local_lip + MOLLIFY_SLACK, || {
                        tag(format!("slope bullet at {:?}: {} > {}", r.point, r.slope, r.local_lip))
                    })?;
                }
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs x 100 points"))
}

/// Pipeline certificates in the sup-norm plane.
fn criterion_5() -> Outcome {
    let space = NormedSpace::sup(2);
    let f: Arc<dyn ScalarField> = Arc::new(NormCone::new(space.clone(), 1.0).unwrap());
    let exhaustion =
        CompactExhaustion::ball_samples(&space, &[0.0, 0.0], &[0.5, 1.0, 1.5], &[30, 40, 30], sampling::derive_seed(SEED, 5))
            .map_err(|e| e.to_string())?;
    let cfg = PipelineConfig { max_index: 32, seed: SEED, ..Default::default() };
    let (_, cert) = run_pipeline(f, exhaustion, cfg.clone()).map_err(|e| e.to_string())?;
    let failures: Vec<String> = cert
        .failures()
        .take(5)
        .map(|r| format!("n={} point={} violates {:?}", r.n, r.point, r.violations()))
        .collect();
    ensure(failures.is_empty(), || format!("{} failing rows, e.g. {failures:?}", cert.failures().count()))?;

    // affine control: the two coordinates stay more than 1 apart, so every p_n is the identity
    let control = Arc::new(Affine::new(space.clone(), vec![0.5, -1.0], 0.25).unwrap());
    let spread = CompactExhaustion::ball_samples(&space, &[0.0, 4.0], &[1.0], &[40], sampling::derive_seed(SEED, 50))
        .map_err(|e| e.to_string())?;
    let (_, ctrl) = run_pipeline(control, spread, cfg).map_err(|e| e.to_string())?;
    ensure(ctrl.passed(), || "affine control has failing rows".into())?;
    for r in &ctrl.rows {
        ensure(r.error <= r.slope_slack + r.error_slack, || {
            format!("affine control error {} above slack at n={} point={}", r.error, r.n, r.point)
        })?;
    }
    ensure(ctrl.indices.iter().all(|s| s.rank == 2), || "affine control partition is not the identity".into())?;
    let worst = cert.rows.iter().map(|r| r.error / r.error_bound).fold(0.0, f64::max);
    Ok(format!("{} rows pass, worst error/bound {worst:.3}; control {} rows", cert.rows.len(), ctrl.rows.len()))
}

fn unit_interval() -> WeightedMeasure {
    WeightedMeasure::uniform_grid(&[0.0], &[1.0], &[1000]).unwrap()
}

/// Sobolev energy density for |x − 1/2|.
fn criterion_6() -> Outcome {
    let mu = unit_interval();
    let f: Arc<dyn ScalarField> = Arc::new(Kink::new(NormedSpace::euclidean(1), vec![0.5], 1.0).unwrap());
    let cfg = DensityConfig {
        pipeline: PipelineConfig { max_index: 64, seed: SEED, ..Default::default() },
        lp_tolerance: SOBOLEV_LP_REL,
        energy_tolerance: SOBOLEV_ENERGY,
        ..Default::default()
    };
    let mut summary = Vec::new();
    for p in [1.0, 2.0] {
        let report = sobolev_density_check(f.clone(), &mu, p, &cfg).map_err(|e| e.to_string())?;
        for row in report.rows.iter().filter(|r| r.in_window) {
            let e = row.energy.unwrap();
            ensure(row.lp_distance < SOBOLEV_LP_REL * report.norm_f, || {
                format!("p={p} n={}: L^p distance {} vs norm {}", row.n, row.lp_distance, report.norm_f)
            })?;
            ensure((e - 1.0).abs() < SOBOLEV_ENERGY, || format!("p={p} n={}: energy {e}", row.n))?;
        }
        ensure(report.passed(), || format!("p={p}: {:?}", report.failures))?;
        let last = report.final_row();
        summary.push(format!("p={p}: energy {:.5}, rel L^p {:.2e}", last.energy.unwrap(), last.lp_distance / report.norm_f));
    }
    Ok(summary.join("; "))
}

/// BV energy density for the indicator of [1/2, 1].
fn criterion_7() -> Outcome {
    let mu = unit_interval();
    let step = StepFunction::indicator(0.5, 1.0).unwrap();
    let cfg = DensityConfig {
        pipeline: PipelineConfig { max_index: 32, seed: SEED, ..Default::default() },
        energy_tolerance: BV_ENERGY,
        panel_tolerance: BV_PANEL,
        ..Default::default()
    };
    let report = bv_density_check(&BvSource::Step(step), &mu, &cfg).map_err(|e| e.to_string())?;
    let energy = report.final_row().energy.unwrap();
    let panel = report.panel.as_ref().unwrap();
    let disc = *panel.discrepancies.last().unwrap();
    ensure((energy - 1.0).abs() < BV_ENERGY, || format!("final energy {energy}"))?;
    ensure(disc < BV_PANEL, || format!("panel discrepancy {disc}"))?;
    ensure(report.passed(), || format!("{:?}", report.failures))?;
    Ok(format!("energy {energy:.5}, panel discrepancy {disc:.2e}"))
}

/// L^p strong density.
fn criterion_8() -> Outcome {
    let space = NormedSpace::sup(2);
    let square = WeightedMeasure::uniform_grid(&[-1.0, -1.0], &[1.0, 1.0], &[40, 40]).unwrap();
    let cfg = DensityConfig {
        pipeline: PipelineConfig { max_index: 16, seed: SEED, ..Default::default() },
        lp_tolerance: DENSITY_REL,
        ..Default::default()
    };
    let scenarios: Vec<(&str, Arc<dyn ScalarField>)> = vec![
        ("constant", Arc::new(Constant::new(space.clone(), 0.7))),
        ("affine", Arc::new(Affine::new(space.clone(), vec![0.5, -0.25], 0.1).unwrap())),
        ("cone", Arc::new(NormCone::new(space.clone(), 1.0).unwrap())),
    ];
    let mut summary = Vec::new();
    for (name, f) in scenarios {
        let reports = lp_strong_density_reports(f, &square, &[1.0, 2.0], &cfg).map_err(|e| e.to_string())?;
        for report in reports {
            let p = report.p;
            let last = report.final_row();
            let rel = last.lp_distance / report.norm_f;
            ensure(rel < DENSITY_REL, || format!("{name} p={p}: relative error {rel}"))?;
            if name == "constant" {
                ensure(report.rows[0].lp_distance == 0.0, || "constant error is not 0 at n=1".into())?;
            }
            summary.push(format!("{name} p={p} {rel:.1e}"));
        }
    }
    Ok(summary.join(", "))
}

/// Chain-rule differentials of cylinder functions against central differences.
fn criterion_9() -> Outcome {
    let mut rng = sampling::rng(sampling::derive_seed(SEED, 9));
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let space = random_space(&mut rng, 3);
        let d = space.dim();
        let k = rng.random_range(1..=3);
        let projection: Vec<Vec<f64>> =
            (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (diff, fd) = if inst % 5 == 0 && k <= 2 {
            let inner = mollify(Kink::new(NormedSpace::sup(k), vec![0.1; k], 2.0).unwrap(), 0.2, 0.2 / 24.0)
                .map_err(|e| e.to_string())?;
            let cf = CylinderFunction::new(space.clone(), projection, inner).map_err(|e| e.to_string())?;
            (cf.cyl_differential(&x).map_err(|e| e.to_string())?.0, finite_difference_gradient(&cf, &x, 1e-5))
        } else {
            let a: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..3.0)).collect();
            let (a2, b2) = (a.clone(), b.clone());
            let g = FnField::new(NormedSpace::sup(k), move |z| {
                let s: f64 = z.iter().zip(&a).map(|(u, v)| u * v).sum();
                s.tanh() + z.iter().zip(&b).map(|(u, w)| (w * u).sin()).sum::<f64>()
            })
            .with_gradient(move |z| {
                let s: f64 = z.iter().zip(&a2).map(|(u, v)| u * v).sum();
                let t = 1.0 - s.tanh().powi(2);
                z.iter().zip(a2.iter().zip(&b2)).map(|(u, (v, w))| t * v + w * (w * u).cos()).collect()
            });
            let cf = CylinderFunction::new(space.clone(), projection, g).map_err(|e| e.to_string())?;
            (cf.cyl_differential(&x).map_err(|e| e.to_string())?.0, finite_difference_gradient(&cf, &x, 1e-5))
        };
        let scale = space.dual_norm(&diff).unwrap();
        let delta: Vec<f64> = diff.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let err = space.dual_norm(&delta).unwrap() / scale.max(1e-6);
        ensure(err <= DIFFERENTIAL_REL, || format!("instance {inst}: relative error {err:.3e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("100 cylinder functions, worst relative error {worst:.2e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("MAP operator suite", criterion_1),
        ("3-epsilon amplification", criterion_2),
        ("plateau extension", criterion_3),
        ("mollifier bullets", criterion_4),
        ("pipeline certificates", criterion_5),
        ("Sobolev energy density", criterion_6),
        ("BV energy density", criterion_7),
        ("L^p strong density", criterion_8),
        ("differential consistency", criterion_9),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
