//! Finite-dimensional normed spaces, their dual norms, finite nets on the dual
//! sphere and the isometric (up to a tracked distortion) embedding into ℓ∞ over
//! a finite set of functionals.
//!
//! Three norm kinds are supported:
//!
//! * `lp`: the plain ℓp norm, `p ∈ [1, ∞]`;
//! * `weighted_lp`: `(Σ wᵢ |vᵢ|^p)^{1/p}` for finite `p`, `maxᵢ wᵢ |vᵢ|` for `p = ∞`;
//! * `polyhedral`: `maxⱼ |aⱼ · v|` for a finite family of functionals spanning the dual.
//!
//! Dual norms are closed form for the ℓp kinds. For polyhedral norms the unit
//! ball vertices are enumerated once at construction, and every dual norm
//! evaluation returns a vertex together with nonnegative multipliers that
//! certify optimality (a KKT pair for the linear program `max ω·v, |aⱼ·v| ≤ 1`).

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Error, Result};
use crate::sampling;

/// Maximum number of (basis, sign) combinations examined when enumerating
/// the vertices of a polyhedral unit ball.
const VERTEX_BUDGET: usize = 200_000;

/// Default cap on the number of functionals in a dual-sphere net.
pub const DEFAULT_NET_BUDGET: usize = 4096;

/// An exponent `p ∈ [1, ∞]`. Serialized as a number, or as the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponent(f64);

impl Exponent {
    pub const ONE: Exponent = Exponent(1.0);
    pub const TWO: Exponent = Exponent(2.0);
    pub const INFINITY: Exponent = Exponent(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidNorm(format!("exponent must lie in [1, inf], got {p}")));
        }
        Ok(Exponent(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// Hölder conjugate `q` with `1/p + 1/q = 1`.
    pub fn conjugate(self) -> Exponent {
        if self.0 == 1.0 {
            Exponent::INFINITY
        } else if self.0.is_infinite() {
            Exponent::ONE
        } else {
            Exponent(self.0 / (self.0 - 1.0))
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let p = match Raw::deserialize(deserializer)? {
            Raw::Num(p) => p,
            Raw::Text(s) => match s.to_ascii_lowercase().as_str() {
                "inf" | "infinity" => f64::INFINITY,
                other => other
                    .parse::<f64>()
                    .map_err(|_| serde::de::Error::custom(format!("bad exponent {s:?}")))?,
            },
        };
        Exponent::new(p).map_err(serde::de::Error::custom)
    }
}

/// The norm family and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormKind {
    Lp { p: Exponent },
    WeightedLp { p: Exponent, weights: Vec<f64> },
    Polyhedral { functionals: Vec<Vec<f64>> },
}

/// Serializable description of a normed space: dimension plus norm kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormDescriptor {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: NormKind,
}

#[derive(Clone, Debug)]
struct PolyBasis {
    signs: Vec<f64>,
    vertex: Vec<f64>,
    /// `A_I^{-T}` in row-major order, `A_I` having the basis functionals as rows.
    inv_t: Vec<f64>,
}

/// A finite-dimensional real normed space.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "NormDescriptor", into = "NormDescriptor")]
pub struct NormedSpace {
    dim: usize,
    kind: NormKind,
    /// Coordinate scales `cᵢ` such that `‖v‖ = ‖c ∘ v‖_p` for the ℓp kinds.
    scales: Vec<f64>,
    bases: Vec<PolyBasis>,
}

impl PartialEq for NormedSpace {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.kind == other.kind
    }
}

impl TryFrom<NormDescriptor> for NormedSpace {
    type Error = Error;

    fn try_from(d: NormDescriptor) -> Result<Self> {
        NormedSpace::new(d.dim, d.kind)
    }
}

impl From<NormedSpace> for NormDescriptor {
    fn from(s: NormedSpace) -> Self {
        NormDescriptor { dim: s.dim, kind: s.kind }
    }
}

/// A dual-norm value together with a unit vector attaining it.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPairing {
    pub value: f64,
    /// `‖witness‖ = 1` and `ω · witness = value`.
    pub witness: Vec<f64>,
}

impl NormedSpace {
    pub fn new(dim: usize, kind: NormKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidNorm("dimension must be positive".into()));
        }
        match &kind {
            NormKind::Lp { p } => {
                Exponent::new(p.value())?;
                Ok(NormedSpace { dim, kind, scales: vec![1.0; dim], bases: Vec::new() })
            }
            NormKind::WeightedLp { p, weights } => {
                Exponent::new(p.value())?;
                check_dim(dim, weights.len())?;
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::InvalidNorm("weights must be positive and finite".into()));
                }
                let scales = if p.is_infinite() {
                    weights.clone()
                } else {
                    weights.iter().map(|w| w.powf(1.0 / p.value())).collect()
                };
                Ok(NormedSpace { dim, kind, scales, bases: Vec::new() })
            }
            NormKind::Polyhedral { functionals } => {
                let bases = enumerate_vertices(dim, functionals)?;
                Ok(NormedSpace { dim, kind, scales: Vec::new(), bases })
            }
        }
    }

    pub fn lp(dim: usize, p: f64) -> Result<Self> {
        NormedSpace::new(dim, NormKind::Lp { p: Exponent::new(p)? })
    }

    pub fn euclidean(dim: usize) -> Self {
        NormedSpace::new(dim, NormKind::Lp { p: Exponent::TWO }).expect("positive dimension")
    }

    /// ℓ∞ on `dim` coordinates; also the model of ℓ∞(S) for a finite index set.
    pub fn sup(dim: usize) -> Self {
        NormedSpace::new(dim, NormKind::Lp { p: Exponent::INFINITY }).expect("positive dimension")
    }

    pub fn l1(dim: usize) -> Self {
        NormedSpace::new(dim, NormKind::Lp { p: Exponent::ONE }).expect("positive dimension")
    }

    pub fn weighted_lp(p: f64, weights: Vec<f64>) -> Result<Self> {
        NormedSpace::new(weights.len(), NormKind::WeightedLp { p: Exponent::new(p)?, weights })
    }

    pub fn polyhedral(functionals: Vec<Vec<f64>>) -> Result<Self> {
        let dim = functionals.first().map(Vec::len).unwrap_or(0);
        NormedSpace::new(dim, NormKind::Polyhedral { functionals })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &NormKind {
        &self.kind
    }

    pub fn descriptor(&self) -> NormDescriptor {
        self.clone().into()
    }

    fn exponent(&self) -> Option<Exponent> {
        match &self.kind {
            NormKind::Lp { p } | NormKind::WeightedLp { p, .. } => Some(*p),
            NormKind::Polyhedral { .. } => None,
        }
    }

    /// True when the dual unit ball is a polytope, so that finite nets are exact.
    pub fn is_polyhedral(&self) -> bool {
        match self.exponent() {
            None => true,
            Some(p) => p.value() == 1.0 || p.is_infinite() || self.dim == 1,
        }
    }

    /// Norm of `v`, checking the dimension.
    pub fn try_norm(&self, v: &[f64]) -> Result<f64> {
        check_dim(self.dim, v.len())?;
        Ok(self.norm(v))
    }

    /// Norm of `v`. The caller guarantees `v.len() == self.dim()`.
    pub fn norm(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        match &self.kind {
            NormKind::Polyhedral { functionals } => functionals
                .iter()
                .map(|a| dot(a, v).abs())
                .fold(0.0, f64::max),
            _ => {
                let p = self.exponent().expect("lp kind");
                scaled_lp(v, &self.scales, p)
            }
        }
    }

    pub fn distance(&self, u: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), v.len());
        let diff: smallvec::SmallVec<[f64; 8]> = u.iter().zip(v).map(|(a, b)| a - b).collect();
        self.norm(&diff)
    }

    /// Dual norm `sup{ω·v : ‖v‖ ≤ 1}`.
    pub fn dual_norm(&self, omega: &[f64]) -> Result<f64> {
        Ok(self.dual_norm_with_witness(omega)?.value)
    }

    /// Dual norm together with a unit vector attaining the supremum.
    pub fn dual_norm_with_witness(&self, omega: &[f64]) -> Result<DualPairing> {
        check_dim(self.dim, omega.len())?;
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("non-finite dual vector".into()));
        }
        match &self.kind {
            NormKind::Polyhedral { .. } => self.polyhedral_dual(omega),
            _ => Ok(self.lp_dual(omega)),
        }
    }

    fn lp_dual(&self, omega: &[f64]) -> DualPairing {
        let p = self.exponent().expect("lp kind");
        let q = p.conjugate();
        let a: Vec<f64> = omega.iter().zip(&self.scales).map(|(w, c)| w / c).collect();
        let value = lp_raw(&a, q);
        if value == 0.0 {
            let mut witness = vec![0.0; self.dim];
            witness[0] = 1.0 / self.norm(&unit(self.dim, 0));
            return DualPairing { value, witness };
        }
        let u: Vec<f64> = if q.is_infinite() {
            let j = argmax_abs(&a);
            (0..self.dim).map(|i| if i == j { a[j].signum() } else { 0.0 }).collect()
        } else if q.value() == 1.0 {
            a.iter().map(|x| if *x == 0.0 { 0.0 } else { x.signum() }).collect()
        } else {
            let qv = q.value();
            a.iter()
                .map(|x| x.signum() * (x.abs() / value).powf(qv - 1.0))
                .collect()
        };
        let witness = u.iter().zip(&self.scales).map(|(x, c)| x / c).collect();
        DualPairing { value, witness }
    }

    fn polyhedral_dual(&self, omega: &[f64]) -> Result<DualPairing> {
        let d = self.dim;
        let scale: f64 = omega.iter().map(|w| w.abs()).sum();
        if scale == 0.0 {
            let witness = self.bases[0].vertex.clone();
            let n = self.norm(&witness);
            return Ok(DualPairing { value: 0.0, witness: witness.iter().map(|x| x / n).collect() });
        }
        let tol = 1e-10 * scale;
        for basis in &self.bases {
            let mut total = 0.0;
            let mut feasible = true;
            for i in 0..d {
                let t: f64 = (0..d).map(|j| basis.inv_t[i * d + j] * omega[j]).sum();
                let mu = basis.signs[i] * t;
                if mu < -tol {
                    feasible = false;
                    break;
                }
                total += mu;
            }
            if feasible {
                let value = dot(omega, &basis.vertex);
                if (value - total).abs() > 1e-8 * scale.max(value.abs()) {
                    continue;
                }
                return Ok(DualPairing { value: value.max(0.0), witness: basis.vertex.clone() });
            }
        }
        Err(Error::DualNormUncertified(format!(
            "no dual-feasible vertex basis found for {omega:?}"
        )))
    }

    /// A norm-one dual vector `g` with `g·v = ‖v‖` (a subgradient of the norm at `v`).
    /// Returns zeros at `v = 0`.
    pub fn norm_gradient(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        if v.iter().all(|x| *x == 0.0) {
            return vec![0.0; self.dim];
        }
        match &self.kind {
            NormKind::Polyhedral { functionals } => {
                let (j, s) = functionals
                    .iter()
                    .enumerate()
                    .map(|(j, a)| (j, dot(a, v)))
                    .fold((0, 0.0_f64), |best, (j, s)| if s.abs() > best.1.abs() { (j, s) } else { best });
                functionals[j].iter().map(|a| a * s.signum()).collect()
            }
            _ => {
                let p = self.exponent().expect("lp kind");
                let u: Vec<f64> = v.iter().zip(&self.scales).map(|(x, c)| x * c).collect();
                if p.value() == 1.0 {
                    self.scales.iter().zip(&u).map(|(c, x)| c * x.signum()).collect()
                } else if p.is_infinite() {
                    let j = argmax_abs(&u);
                    (0..self.dim)
                        .map(|i| if i == j { self.scales[j] * u[j].signum() } else { 0.0 })
                        .collect()
                } else {
                    let n = lp_raw(&u, p);
                    let pv = p.value();
                    self.scales
                        .iter()
                        .zip(&u)
                        .map(|(c, x)| c * x.signum() * (x.abs() / n).powf(pv - 1.0))
                        .collect()
                }
            }
        }
    }

    /// Dual norm of the i-th coordinate functional, i.e. the half-width of the
    /// unit ball's bounding box along axis `i`.
    pub fn coordinate_extent(&self, i: usize) -> f64 {
        self.dual_norm(&unit(self.dim, i)).expect("coordinate functional")
    }

    /// Radius `ρ` of a Euclidean ball centred at the origin and contained in the unit ball.
    pub fn euclidean_inradius(&self) -> f64 {
        match &self.kind {
            NormKind::Polyhedral { functionals } => {
                let m = functionals.iter().map(|a| dot(a, a).sqrt()).fold(0.0, f64::max);
                1.0 / m
            }
            _ => {
                let p = self.exponent().expect("lp kind").value();
                let cmax = self.scales.iter().cloned().fold(0.0, f64::max);
                let growth = if p >= 2.0 {
                    1.0
                } else {
                    (self.dim as f64).powf(1.0 / p - 0.5)
                };
                1.0 / (growth * cmax)
            }
        }
    }

    /// Constants `(a, b)` with `a|ω|₂ ≤ ‖ω‖_* ≤ b|ω|₂` (ℓp kinds only).
    fn dual_equivalence(&self) -> (f64, f64) {
        let q = self.exponent().expect("lp kind").conjugate();
        let d = self.dim as f64;
        let inv_q = if q.is_infinite() { 0.0 } else { 1.0 / q.value() };
        let (lo, hi) = if inv_q <= 0.5 {
            (d.powf(inv_q - 0.5), 1.0)
        } else {
            (1.0, d.powf(inv_q - 0.5))
        };
        let cmax = self.scales.iter().cloned().fold(0.0, f64::max);
        let cmin = self.scales.iter().cloned().fold(f64::INFINITY, f64::min);
        (lo / cmax, hi / cmin)
    }

    /// Uniform sample from the open ball `B_r(center)` by rejection from its bounding box.
    pub fn sample_ball<R: Rng + ?Sized>(&self, center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
        let extents: Vec<f64> = (0..self.dim).map(|i| radius * self.coordinate_extent(i)).collect();
        sampling::rejection_ball(self, center, radius, &extents, rng)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(dim: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    e[i] = 1.0;
    e
}

fn argmax_abs(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

fn lp_raw(v: &[f64], p: Exponent) -> f64 {
    if p.is_infinite() {
        return v.iter().fold(0.0, |m, x| m.max(x.abs()));
    }
    let pv = p.value();
    if pv == 1.0 {
        return v.iter().map(|x| x.abs()).sum();
    }
    let m = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    if pv == 2.0 {
        return m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt();
    }
    m * v.iter().map(|x| (x.abs() / m).powf(pv)).sum::<f64>().powf(1.0 / pv)
}

fn scaled_lp(v: &[f64], scales: &[f64], p: Exponent) -> f64 {
    let u: smallvec::SmallVec<[f64; 8]> = v.iter().zip(scales).map(|(x, c)| x * c).collect();
    lp_raw(&u, p)
}

fn enumerate_vertices(dim: usize, functionals: &[Vec<f64>]) -> Result<Vec<PolyBasis>> {
    if functionals.is_empty() {
        return Err(Error::InvalidNorm("polyhedral norm needs at least one functional".into()));
    }
    for a in functionals {
        check_dim(dim, a.len())?;
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidNorm("non-finite functional".into()));
        }
    }
    let m = functionals.len();
    let all = DMatrix::from_fn(m, dim, |i, j| functionals[i][j]);
    if all.rank(1e-10 * all.norm().max(1e-300)) < dim {
        return Err(Error::InvalidNorm(
            "polyhedral functionals do not span the dual space".into(),
        ));
    }
    let combos = binomial(m, dim).saturating_mul(1usize << dim.min(62));
    if combos > VERTEX_BUDGET {
        return Err(Error::BudgetExceeded(format!(
            "polyhedral vertex enumeration needs {combos} solves (budget {VERTEX_BUDGET})"
        )));
    }

    let mut bases = Vec::new();
    let mut subset: Vec<usize> = (0..dim).collect();
    loop {
        let a = DMatrix::from_fn(dim, dim, |i, j| functionals[subset[i]][j]);
        if let Some(inv) = a.clone().try_inverse() {
            let cond = a.norm() * inv.norm();
            if cond.is_finite() && cond < 1e12 {
                for mask in 0..(1usize << dim) {
                    let signs: Vec<f64> =
                        (0..dim).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
                    let vertex: Vec<f64> =
                        (0..dim).map(|i| (0..dim).map(|j| inv[(i, j)] * signs[j]).sum()).collect();
                    let feasible = functionals.iter().all(|f| dot(f, &vertex).abs() <= 1.0 + 1e-9);
                    if feasible {
                        let inv_t = (0..dim * dim).map(|k| inv[(k % dim, k / dim)]).collect();
                        bases.push(PolyBasis { signs, vertex, inv_t });
                    }
                }
            }
        }
        if !next_subset(&mut subset, m) {
            break;
        }
    }
    if bases.is_empty() {
        return Err(Error::InvalidNorm("polyhedral unit ball has no vertices".into()));
    }
    Ok(bases)
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut r: usize = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

fn next_subset(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// A finite set of norm-one dual vectors with tracked distortion `δ`:
/// `(1 − δ)‖v‖ ≤ max_ω ω(v) ≤ ‖v‖` for every `v`.
#[derive(Clone, Debug)]
pub struct DualNet {
    space: NormedSpace,
    functionals: Vec<Vec<f64>>,
    distortion: f64,
}

impl DualNet {
    pub fn new(space: NormedSpace, functionals: Vec<Vec<f64>>, distortion: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&distortion) {
            return Err(Error::InvalidArgument(format!("distortion {distortion} not in [0, 1)")));
        }
        if functionals.is_empty() {
            return Err(Error::InvalidArgument("empty dual net".into()));
        }
        for w in &functionals {
            let n = space.dual_norm(w)?;
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("net functional has dual norm {n}")));
            }
        }
        Ok(DualNet { space, functionals, distortion })
    }

    pub fn space(&self) -> &NormedSpace {
        &self.space
    }

    pub fn functionals(&self) -> &[Vec<f64>] {
        &self.functionals
    }

    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    pub fn len(&self) -> usize {
        self.functionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functionals.is_empty()
    }

    /// `v ↦ (ω(v))_{ω ∈ F}`.
    pub fn embed(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.space.dim(), v.len())?;
        Ok(self.embed_unchecked(v))
    }

    pub(crate) fn embed_unchecked(&self, v: &[f64]) -> Vec<f64> {
        self.functionals.iter().map(|w| dot(w, v)).collect()
    }

    /// `max_ω ω(v)` over the net.
    pub fn max_pairing(&self, v: &[f64]) -> f64 {
        self.functionals.iter().map(|w| dot(w, v)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Keeps one functional out of each antipodal pair `{ω, −ω}`. The sup norm of
    /// the embedding is unchanged, since it only sees `|ω(v)|`.
    pub fn antipodal_reduced(&self) -> DualNet {
        let mut kept: Vec<Vec<f64>> = Vec::new();
        for w in &self.functionals {
            let duplicate = kept.iter().any(|k| {
                let scale = k.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
                let neg = k.iter().zip(w).all(|(a, b)| (a + b).abs() <= 1e-12 * scale);
                let same = k.iter().zip(w).all(|(a, b)| (a - b).abs() <= 1e-12 * scale);
                neg || same
            });
            if !duplicate {
                kept.push(w.clone());
            }
        }
        DualNet { space: self.space.clone(), functionals: kept, distortion: self.distortion }
    }

    /// Largest observed `1 − max_ω |ω(v)| / ‖v‖` over random Euclidean directions.
    pub fn measured_distortion(&self, directions: usize, seed: u64) -> f64 {
        let mut rng = sampling::rng(seed);
        let mut worst = 0.0_f64;
        for _ in 0..directions {
            let v = sampling::euclidean_direction(self.space.dim(), &mut rng);
            let n = self.space.norm(&v);
            let m = self.functionals.iter().map(|w| dot(w, &v).abs()).fold(0.0, f64::max);
            worst = worst.max(1.0 - m / n);
        }
        worst
    }
}

/// Finite net on the dual unit sphere with distortion at most `delta`.
pub fn dual_sphere_net(space: &NormedSpace, delta: f64) -> Result<DualNet> {
    dual_sphere_net_with_budget(space, delta, DEFAULT_NET_BUDGET)
}

/// As [`dual_sphere_net`], failing when more than `budget` functionals are needed.
///
/// Net density per norm kind:
/// * polyhedral (including ℓ1, ℓ∞ and every norm in dimension one): the exact
///   extreme points of the dual ball, `δ = 0`;
/// * Euclidean plane: `n` equally spaced angles, `n` the smallest even integer
///   with `1 − cos(π/n) ≤ δ`; the reported distortion is exactly `1 − cos(π/n)`;
/// * other ℓp kinds: centres of an `r^{d−1}` grid on each face of the cube
///   `[−1, 1]^d`, normalized in the dual norm. Normalized grid directions lie
///   within chord `χ = 2√(d−1)/r` of every Euclidean direction, which gives
///   `δ ≤ χ²/2` for the Euclidean norm and `δ ≤ 2(b/a)χ` in general, where
///   `a|ω|₂ ≤ ‖ω‖_* ≤ b|ω|₂`.
pub fn dual_sphere_net_with_budget(space: &NormedSpace, delta: f64, budget: usize) -> Result<DualNet> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("net distortion must lie in (0, 1), got {delta}")));
    }
    let d = space.dim();
    let check_budget = |count: usize| -> Result<()> {
        if count > budget {
            Err(Error::BudgetExceeded(format!(
                "dual net needs {count} functionals (budget {budget})"
            )))
        } else {
            Ok(())
        }
    };

    let (functionals, distortion) = match space.kind() {
        NormKind::Polyhedral { functionals } => {
            check_budget(2 * functionals.len())?;
            let mut out: Vec<Vec<f64>> = Vec::new();
            for a in functionals {
                let n = space.dual_norm(a)?;
                if n < 1.0 - 1e-9 {
                    continue;
                }
                let w: Vec<f64> = a.iter().map(|x| x / n).collect();
                out.push(w.iter().map(|x| -x).collect());
                out.push(w);
            }
            (out, 0.0)
        }
        _ if d == 1 => {
            let c = space.scales[0];
            (vec![vec![c], vec![-c]], 0.0)
        }
        _ => {
            let p = space.exponent().expect("lp kind");
            if p.value() == 1.0 {
                check_budget(1usize.checked_shl(d as u32).unwrap_or(usize::MAX))?;
                let out = (0..(1usize << d))
                    .map(|mask| {
                        (0..d)
                            .map(|i| if mask >> i & 1 == 1 { -space.scales[i] } else { space.scales[i] })
                            .collect()
                    })
                    .collect();
                (out, 0.0)
            } else if p.is_infinite() {
                check_budget(2 * d)?;
                let mut out = Vec::new();
                for i in 0..d {
                    let mut e = vec![0.0; d];
                    e[i] = space.scales[i];
                    out.push(e.clone());
                    e[i] = -space.scales[i];
                    out.push(e);
                }
                (out, 0.0)
            } else if d == 2 && p.value() == 2.0 && matches!(space.kind(), NormKind::Lp { .. }) {
                let theta = 2.0 * (1.0 - delta).acos();
                let mut n = (2.0 * std::f64::consts::PI / theta).ceil() as usize;
                n = n.max(4);
                if n % 2 == 1 {
                    n += 1;
                }
                check_budget(n)?;
                let out = (0..n)
                    .map(|k| {
                        let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                        vec![t.cos(), t.sin()]
                    })
                    .collect();
                (out, 1.0 - (std::f64::consts::PI / n as f64).cos())
            } else {
                let euclid = p.value() == 2.0 && matches!(space.kind(), NormKind::Lp { .. });
                let (a, b) = space.dual_equivalence();
                let chord_per_r = 2.0 * ((d - 1) as f64).sqrt();
                let r = if euclid {
                    (chord_per_r / (2.0 * delta).sqrt()).ceil()
                } else {
                    (2.0 * (b / a) * chord_per_r / delta).ceil()
                };
                let r = r.max(1.0);
                let count = (2 * d) as f64 * r.powi(d as i32 - 1);
                if count > budget as f64 {
                    return Err(Error::BudgetExceeded(format!(
                        "dual net needs {count} functionals (budget {budget})"
                    )));
                }
                let r = r as usize;
                let chord = chord_per_r / r as f64;
                let distortion = if euclid { chord * chord / 2.0 } else { 2.0 * (b / a) * chord };
                if distortion >= 1.0 {
                    return Err(Error::InvalidArgument("net distortion bound not below one".into()));
                }
                let mut out = Vec::new();
                let mut idx = vec![0usize; d - 1];
                for axis in 0..d {
                    for sign in [1.0, -1.0] {
                        idx.iter_mut().for_each(|i| *i = 0);
                        loop {
                            let mut u = Vec::with_capacity(d);
                            let mut k = 0;
                            for j in 0..d {
                                if j == axis {
                                    u.push(sign);
                                } else {
                                    u.push(-1.0 + (2 * idx[k] + 1) as f64 / r as f64);
                                    k += 1;
                                }
                            }
                            let n = space.dual_norm(&u)?;
                            out.push(u.iter().map(|x| x / n).collect());
                            if !odometer(&mut idx, r) {
                                break;
                            }
                        }
                    }
                }
                (out, distortion)
            }
        }
    };
    DualNet::new(space.clone(), functionals, distortion)
}

/// Advances a mixed-radix counter; false once it wraps around.
pub(crate) fn odometer(idx: &mut [usize], radix: usize) -> bool {
    for slot in idx.iter_mut() {
        *slot += 1;
        if *slot < radix {
            return true;
        }
        *slot = 0;
    }
    false
}
