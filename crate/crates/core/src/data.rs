//! Domain records, dataset files, feature scaling and query-level splits.
//!
//! Two on-disk formats are supported:
//!
//! * annotations in SVMLight-with-qid form,
//!   `<grade> qid:<q> <idx>:<val> ... # <doc_id>`, with 1-based sparse
//!   feature indices (absent indices read as `0.0`);
//! * click logs as tab-separated rows
//!   `query_id \t doc_id \t position \t clicked \t f1,...,fD` preceded by a
//!   `#D=<int>` header line.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Highest relevance grade an annotation may carry.
pub const MAX_GRADE: u8 = 4;

/// Fixed-dimension numeric representation of a query-document pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "feature {} is not finite ({})",
                i + 1,
                values[i]
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A query-document pair with an expert relevance grade in `0..=4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub query_id: String,
    pub doc_id: String,
    pub features: FeatureVector,
    pub grade: u8,
}

/// One displayed document inside an [`Impression`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionEntry {
    pub doc_id: String,
    pub features: FeatureVector,
    /// 1-based rank at which the document was shown.
    pub position: usize,
    pub clicked: bool,
}

/// A logged ranked list for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub query_id: String,
    pub entries: Vec<ImpressionEntry>,
}

impl Impression {
    /// Checks that positions are exactly `1..=n`.
    pub fn validate_positions(&self) -> Result<()> {
        let n = self.entries.len();
        let mut seen = vec![false; n];
        for e in &self.entries {
            if e.position == 0 || e.position > n || seen[e.position - 1] {
                return Err(Error::validation(format!(
                    "query {}: positions are not a permutation of 1..={n}",
                    self.query_id
                )));
            }
            seen[e.position - 1] = true;
        }
        Ok(())
    }

    /// Entry indices in displayed order.
    pub fn display_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.sort_by_key(|&i| self.entries[i].position);
        idx
    }
}

/// Records that belong to a query.
pub trait QueryRecord {
    fn query_id(&self) -> &str;
}

impl QueryRecord for AnnotatedExample {
    fn query_id(&self) -> &str {
        &self.query_id
    }
}

impl QueryRecord for Impression {
    fn query_id(&self) -> &str {
        &self.query_id
    }
}

/// Contiguous index ranges of records sharing a query id, in input order.
pub fn query_groups<T: QueryRecord>(records: &[T]) -> Vec<Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || records[i].query_id() != records[start].query_id() {
            if i > start {
                groups.push(start..i);
            }
            start = i;
        }
    }
    groups
}

// ---------------------------------------------------------------------------
// SVMLight annotations

/// Reads an SVMLight-with-qid annotation file with feature dimension `dim`.
pub fn load_annotations(path: impl AsRef<Path>, dim: usize) -> Result<Vec<AnnotatedExample>> {
    parse_annotations(BufReader::new(File::open(path)?), dim)
}

pub fn parse_annotations(reader: impl Read, dim: usize) -> Result<Vec<AnnotatedExample>> {
    let reader = BufReader::new(reader);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = parse_annotation_line(&line, line_no, dim)?;
        if !seen.insert((ex.query_id.clone(), ex.doc_id.clone())) {
            return Err(Error::validation(format!(
                "line {line_no}: duplicate (query {}, doc {})",
                ex.query_id, ex.doc_id
            )));
        }
        out.push(ex);
    }
    Ok(group_preserving_order(out))
}

fn parse_annotation_line(line: &str, line_no: usize, dim: usize) -> Result<AnnotatedExample> {
    let (body, comment) = match line.split_once('#') {
        Some((b, c)) => (b, c.trim()),
        None => return Err(Error::parse(line_no, "missing '# <doc_id>' comment")),
    };
    let doc_id = comment
        .split_whitespace()
        .next()
        .ok_or_else(|| Error::parse(line_no, "empty doc id"))?
        .to_string();
    let mut tokens = body.split_whitespace();
    let grade_tok = tokens
        .next()
        .ok_or_else(|| Error::parse(line_no, "missing grade"))?;
    let grade: i64 = grade_tok
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad grade {grade_tok:?}")))?;
    if !(0..=MAX_GRADE as i64).contains(&grade) {
        return Err(Error::validation(format!(
            "line {line_no}: grade {grade} outside 0..={MAX_GRADE}"
        )));
    }
    let qid_tok = tokens
        .next()
        .ok_or_else(|| Error::parse(line_no, "missing qid"))?;
    let query_id = qid_tok
        .strip_prefix("qid:")
        .filter(|q| !q.is_empty())
        .ok_or_else(|| Error::parse(line_no, format!("expected qid:<id>, got {qid_tok:?}")))?
        .to_string();
    let mut values = vec![0.0; dim];
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| Error::parse(line_no, format!("bad feature token {tok:?}")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad feature index {idx:?}")))?;
        let val: f64 = val
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad feature value {val:?}")))?;
        if idx == 0 {
            return Err(Error::parse(line_no, "feature indices are 1-based"));
        }
        if idx > dim {
            return Err(Error::validation(format!(
                "line {line_no}: feature index {idx} exceeds declared dimension {dim}"
            )));
        }
        if !val.is_finite() {
            return Err(Error::validation(format!(
                "line {line_no}: feature {idx} is not finite"
            )));
        }
        values[idx - 1] = val;
    }
    Ok(AnnotatedExample {
        query_id,
        doc_id,
        features: FeatureVector(values),
        grade: grade as u8,
    })
}

/// Stable regrouping: records of a query become contiguous, queries keep the
/// order of first appearance, records keep file order within a query.
fn group_preserving_order<T: QueryRecord>(records: Vec<T>) -> Vec<T> {
    let mut order: Vec<String> = Vec::new();
    let mut buckets: HashMap<String, Vec<T>> = HashMap::new();
    for r in records {
        let q = r.query_id().to_string();
        if !buckets.contains_key(&q) {
            order.push(q.clone());
        }
        buckets.entry(q).or_default().push(r);
    }
    order
        .into_iter()
        .flat_map(|q| buckets.remove(&q).unwrap_or_default())
        .collect()
}

/// Writes annotations in SVMLight-with-qid form. Zero features are omitted.
pub fn write_annotations(writer: impl Write, examples: &[AnnotatedExample]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for ex in examples {
        write!(w, "{} qid:{}", ex.grade, ex.query_id)?;
        for (i, v) in ex.features.as_slice().iter().enumerate() {
            if *v != 0.0 {
                write!(w, " {}:{}", i + 1, v)?;
            }
        }
        writeln!(w, " # {}", ex.doc_id)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Click log

/// Impressions plus the feature dimension declared in the file header.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickLog {
    pub dim: usize,
    pub impressions: Vec<Impression>,
}

pub fn load_click_log(path: impl AsRef<Path>) -> Result<ClickLog> {
    parse_click_log(File::open(path)?)
}

pub fn parse_click_log(reader: impl Read) -> Result<ClickLog> {
    let reader = BufReader::new(reader);
    let mut dim: Option<usize> = None;
    let mut impressions: Vec<Impression> = Vec::new();
    let mut finished: HashSet<String> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let Some(d) = dim else {
            let d = line
                .strip_prefix("#D=")
                .and_then(|d| d.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::parse(line_no, "expected header line #D=<int>"))?;
            dim = Some(d);
            continue;
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                line_no,
                format!("expected 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        let position: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad position {:?}", fields[2])))?;
        let clicked = match fields[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    line_no,
                    format!("clicked must be 0 or 1, got {other:?}"),
                ))
            }
        };
        let values = if fields[4].is_empty() {
            Vec::new()
        } else {
            fields[4]
                .split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::parse(line_no, format!("bad feature value {v:?}")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        if values.len() != d {
            return Err(Error::validation(format!(
                "line {line_no}: {} features, header declares {d}",
                values.len()
            )));
        }
        let features = FeatureVector::new(values)
            .map_err(|e| Error::validation(format!("line {line_no}: {e}")))?;
        let entry = ImpressionEntry {
            doc_id: fields[1].to_string(),
            features,
            position,
            clicked,
        };
        let query_id = fields[0];
        match impressions.last_mut() {
            Some(last) if last.query_id == query_id => last.entries.push(entry),
            _ => {
                if let Some(last) = impressions.last() {
                    finished.insert(last.query_id.clone());
                }
                if finished.contains(query_id) {
                    return Err(Error::validation(format!(
                        "line {line_no}: rows for query {query_id} are not contiguous"
                    )));
                }
                impressions.push(Impression {
                    query_id: query_id.to_string(),
                    entries: vec![entry],
                });
            }
        }
    }
    for imp in &impressions {
        imp.validate_positions()?;
    }
    Ok(ClickLog {
        dim: dim.unwrap_or(0),
        impressions,
    })
}

/// Writes a click log; entries are emitted in displayed order.
pub fn write_click_log(writer: impl Write, dim: usize, impressions: &[Impression]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "#D={dim}")?;
    for imp in impressions {
        for i in imp.display_order() {
            let e = &imp.entries[i];
            if e.features.dim() != dim {
                return Err(Error::validation(format!(
                    "query {}: doc {} has {} features, expected {dim}",
                    imp.query_id,
                    e.doc_id,
                    e.features.dim()
                )));
            }
            write!(
                w,
                "{}\t{}\t{}\t{}\t",
                imp.query_id,
                e.doc_id,
                e.position,
                u8::from(e.clicked)
            )?;
            for (j, v) in e.features.as_slice().iter().enumerate() {
                if j > 0 {
                    w.write_all(b",")?;
                }
                write!(w, "{v}")?;
            }
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Scaling

/// Signed log scaling, `sign(x) * ln(1 + |x|)`, applied elementwise.
pub fn scale_features_log1p(v: &FeatureVector) -> Result<FeatureVector> {
    FeatureVector::new(v.as_slice().to_vec())?;
    Ok(FeatureVector(v.as_slice().iter().map(|&x| signed_log1p(x)).collect()))
}

#[inline]
pub fn signed_log1p(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

// ---------------------------------------------------------------------------
// Splitting

/// Records partitioned by query into train / validation / test.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

/// Shuffles the distinct query ids with `seed`, then cuts the shuffled list
/// at the cumulative fractions.
pub fn split_by_query<T: QueryRecord + Clone>(
    records: &[T],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit<T>> {
    let parts = [fractions.0, fractions.1, fractions.2];
    if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::validation(format!(
            "split fractions must be non-negative, got {fractions:?}"
        )));
    }
    if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split fractions must sum to 1, got {fractions:?}"
        )));
    }
    let mut queries: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for r in records {
        if seen.insert(r.query_id()) {
            queries.push(r.query_id());
        }
    }
    let nonzero = parts.iter().filter(|f| **f > 0.0).count();
    if queries.len() < nonzero {
        return Err(Error::validation(format!(
            "{} queries cannot fill {nonzero} non-empty splits",
            queries.len()
        )));
    }
    queries.sort_unstable();
    queries.shuffle(&mut seed::rng_for(seed, "split"));

    let n = queries.len();
    let cut1 = ((parts[0] * n as f64).round() as usize).min(n);
    let cut2 = (((parts[0] + parts[1]) * n as f64).round() as usize).clamp(cut1, n);
    let mut assignment: HashMap<&str, u8> = HashMap::with_capacity(n);
    for (i, q) in queries.iter().enumerate() {
        let part = if i < cut1 {
            0
        } else if i < cut2 {
            1
        } else {
            2
        };
        assignment.insert(q, part);
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for r in records {
        match assignment[r.query_id()] {
            0 => split.train.push(r.clone()),
            1 => split.validation.push(r.clone()),
            _ => split.test.push(r.clone()),
        }
    }
    Ok(split)
}

/// Distinct query ids of a record set.
pub fn query_ids<T: QueryRecord>(records: &[T]) -> BTreeSet<String> {
    records.iter().map(|r| r.query_id().to_string()).collect()
}
