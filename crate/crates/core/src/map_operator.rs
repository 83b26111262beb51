//! Bounded sequences on a finite index set and the partition-induced
//! finite-rank operators `p(a)_x = a_{x_j}` for `x ∈ S_j`.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lipschitz::format_f64;

/// An opaque index label: an integer or a string.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Int(i64),
    Str(String),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Int(i) => write!(f, "{i}"),
            Label::Str(s) => f.write_str(s),
        }
    }
}

impl Label {
    fn parse(s: &str) -> Label {
        s.parse::<i64>().map(Label::Int).unwrap_or_else(|_| Label::Str(s.to_string()))
    }
}

/// An element of ℓ∞(S) for a finite, ordered label set `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundedSeq {
    labels: Arc<[Label]>,
    values: Vec<f64>,
}

impl BoundedSeq {
    pub fn new(labels: Arc<[Label]>, values: Vec<f64>) -> Result<Self> {
        if labels.len() != values.len() {
            return Err(Error::IndexMismatch(format!(
                "{} labels but {} values",
                labels.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sequence values must be finite".into()));
        }
        Ok(BoundedSeq { labels, values })
    }

    /// Labels `1..=n`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        BoundedSeq::new(integer_labels(values.len()), values)
    }

    /// A sequence over the same labels as `self`.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        BoundedSeq::new(self.labels.clone(), values)
    }

    pub fn labels(&self) -> &Arc<[Label]> {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖_∞`.
    pub fn sup_distance(&self, other: &BoundedSeq) -> Result<f64> {
        same_labels(&self.labels, &other.labels)?;
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `α·self + β·other`.
    pub fn combine(&self, alpha: f64, other: &BoundedSeq, beta: f64) -> Result<BoundedSeq> {
        same_labels(&self.labels, &other.labels)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect();
        BoundedSeq::new(self.labels.clone(), values)
    }

    /// Rows `label,value` with a header row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::InvalidArgument(format!("row {}: expected label,value", row + 1)));
            }
            labels.push(Label::parse(&record[0]));
            values.push(
                record[1]
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("row {}: bad value {:?}", row + 1, &record[1])))?,
            );
        }
        BoundedSeq::new(labels.into(), values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["label", "value"])?;
        for (l, v) in self.labels.iter().zip(&self.values) {
            w.write_record([l.to_string(), format_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn integer_labels(n: usize) -> Arc<[Label]> {
    (1..=n as i64).map(Label::Int).collect()
}

fn same_labels(a: &Arc<[Label]>, b: &Arc<[Label]>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::IndexMismatch("sequences are indexed by different label sets".into()))
    }
}

/// Finite-rank operator on ℓ∞(S) induced by a partition with representatives.
#[derive(Clone, Debug, PartialEq)]
pub struct MapOperator {
    labels: Arc<[Label]>,
    block_of: Vec<usize>,
    representatives: Vec<usize>,
}

/// Serialized form: block id per label plus the representative labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorRecord {
    pub labels: Vec<Label>,
    pub block_of: Vec<usize>,
    pub representatives: Vec<Label>,
}

impl MapOperator {
    /// Buckets each index `x` by the tuple `(a¹_x, …, aⁿ_x)` into the half-open
    /// cells `∏ [k_i ε, (k_i + 1) ε)`. Blocks and representatives are numbered
    /// by first appearance. Inside a cell an index joins the first block whose
    /// representative is within `ε` in every coordinate as computed in floating
    /// point, so the guarantee `|a_x − a_{rep}| ≤ ε` holds exactly even where
    /// the cell assignment rounds.
    pub fn partition_for_diameter(vectors: &[BoundedSeq], epsilon: f64) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::InvalidArgument("need at least one vector".into()))?;
        if first.is_empty() {
            return Err(Error::InvalidArgument("empty index set".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        for v in vectors {
            same_labels(&first.labels, &v.labels)?;
        }
        let size = first.len();
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let mut block_of = Vec::with_capacity(size);
        let mut representatives: Vec<usize> = Vec::new();
        let mut key = Vec::with_capacity(vectors.len());
        for x in 0..size {
            key.clear();
            key.extend(vectors.iter().map(|v| (v.values[x] / epsilon).floor() as i64));
            let blocks = cells.entry(key.clone()).or_default();
            let found = blocks.iter().copied().find(|&b| {
                let r = representatives[b];
                vectors.iter().all(|v| (v.values[x] - v.values[r]).abs() <= epsilon)
            });
            let b = match found {
                Some(b) => b,
                None => {
                    representatives.push(x);
                    blocks.push(representatives.len() - 1);
                    representatives.len() - 1
                }
            };
            block_of.push(b);
        }
        Ok(MapOperator { labels: first.labels.clone(), block_of, representatives })
    }

    /// The identity on ℓ∞(S) as a partition into singletons.
    pub fn identity(labels: Arc<[Label]>) -> Self {
        let n = labels.len();
        MapOperator { labels, block_of: (0..n).collect(), representatives: (0..n).collect() }
    }

    pub fn labels(&self) -> &Arc<[Label]> {
        &self.labels
    }

    pub fn block_of(&self) -> &[usize] {
        &self.block_of
    }

    /// Index of the representative of each block.
    pub fn representatives(&self) -> &[usize] {
        &self.representatives
    }

    /// Number of blocks, which is the dimension of the image.
    pub fn rank(&self) -> usize {
        self.representatives.len()
    }

    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.rank()];
        for (x, &b) in self.block_of.iter().enumerate() {
            out[b].push(x);
        }
        out
    }

    /// `(p a)_x = a_{rep(x)}`.
    pub fn apply(&self, a: &BoundedSeq) -> Result<BoundedSeq> {
        same_labels(&self.labels, &a.labels)?;
        Ok(BoundedSeq {
            labels: self.labels.clone(),
            values: self.apply_values(&a.values),
        })
    }

    pub(crate) fn apply_values(&self, a: &[f64]) -> Vec<f64> {
        self.block_of.iter().map(|&b| a[self.representatives[b]]).collect()
    }

    /// Coordinates of `p(a)` in the image: the representative values.
    pub fn compress(&self, a: &[f64]) -> Vec<f64> {
        self.representatives.iter().map(|&r| a[r]).collect()
    }

    /// Inverse of [`MapOperator::compress`] on the image.
    pub fn lift(&self, z: &[f64]) -> Vec<f64> {
        self.block_of.iter().map(|&b| z[b]).collect()
    }

    pub fn to_record(&self) -> OperatorRecord {
        OperatorRecord {
            labels: self.labels.to_vec(),
            block_of: self.block_of.clone(),
            representatives: self.representatives.iter().map(|&r| self.labels[r].clone()).collect(),
        }
    }

    pub fn from_record(record: &OperatorRecord) -> Result<Self> {
        let n = record.labels.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty index set".into()));
        }
        if record.block_of.len() != n {
            return Err(Error::IndexMismatch("block_of must have one entry per label".into()));
        }
        let position: HashMap<&Label, usize> = record.labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
        if position.len() != n {
            return Err(Error::InvalidArgument("labels must be distinct".into()));
        }
        let representatives: Vec<usize> = record
            .representatives
            .iter()
            .map(|l| position.get(l).copied().ok_or_else(|| Error::IndexMismatch(format!("unknown label {l}"))))
            .collect::<Result<_>>()?;
        let k = representatives.len();
        if record.block_of.iter().any(|&b| b >= k) {
            return Err(Error::InvalidArgument("block id out of range".into()));
        }
        for (j, &r) in representatives.iter().enumerate() {
            if record.block_of[r] != j {
                return Err(Error::InvalidArgument(format!("representative of block {j} lies outside it")));
            }
        }
        Ok(MapOperator { labels: record.labels.clone().into(), block_of: record.block_of.clone(), representatives })
    }
}

/// Outcome of [`net_amplification_certificate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AmplificationCertificate {
    pub epsilon: f64,
    /// `‖p(a) − a‖_∞ / ε` for each `a ∈ K`, in input order.
    pub ratios: Vec<f64>,
    pub worst_ratio: f64,
    /// True iff `‖p(a) − a‖_∞ ≤ 3ε` for every `a ∈ K`.
    pub pass: bool,
}

/// Checks that an operator which `ε`-approximates the identity on an `ε`-net
/// `F` of `K` is a `3ε`-approximation on all of `K`.
pub fn net_amplification_certificate(
    k: &[BoundedSeq],
    net: &[BoundedSeq],
    op: &MapOperator,
    epsilon: f64,
) -> Result<AmplificationCertificate> {
    if net.is_empty() {
        return Err(Error::NetPremise("empty net".into()));
    }
    for (i, f) in net.iter().enumerate() {
        let err = op.apply(f)?.sup_distance(f)?;
        if err > epsilon {
            return Err(Error::NetPremise(format!(
                "operator moves net vector {i} by {err} > {epsilon}"
            )));
        }
    }
    let mut ratios = Vec::with_capacity(k.len());
    let mut pass = true;
    for (i, a) in k.iter().enumerate() {
        let mut covered = false;
        for f in net {
            if a.sup_distance(f)? <= epsilon {
                covered = true;
                break;
            }
        }
        if !covered {
            return Err(Error::NetPremise(format!("point {i} of K is farther than {epsilon} from the net")));
        }
        let err = op.apply(a)?.sup_distance(a)?;
        pass &= err <= 3.0 * epsilon;
        ratios.push(err / epsilon);
    }
    let worst_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(AmplificationCertificate { epsilon, ratios, worst_ratio, pass })
}
