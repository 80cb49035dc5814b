//! Bag-of-words ingestion, shared vocabulary, and zero-padded design matrices.
//!
//! Input files hold one example per line:
//!
//! ```text
//! <label> <idx>:<value> <idx>:<value> ...   # comment
//! ```
//!
//! with `label` one of `+1`, `-1`, `0` (unlabeled). Feature indices are raw
//! term ids; [`Vocabulary::build`] ranks them by total token count over the
//! pooled corpus and assigns compact indices in rank order, so vocabulary
//! index 0 is the most frequent term.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::write_atomic;
use crate::matrix::DataMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn from_sign(value: f64) -> Label {
        if value >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// `(raw term id, count)` pairs.
    pub features: Vec<(usize, f64)>,
    pub label: Option<Label>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain_id: String,
    pub examples: Vec<Example>,
}

impl DomainDataset {
    pub fn new(domain_id: impl Into<String>, examples: Vec<Example>) -> Self {
        DomainDataset {
            domain_id: domain_id.into(),
            examples,
        }
    }

    /// Parses the sparse example format. `origin` names the source in errors.
    pub fn parse<R: Read>(reader: R, domain_id: &str, origin: &Path) -> Result<Self> {
        let mut examples = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let content = line.split('#').next().unwrap_or("");
            let mut tokens = content.split_whitespace();
            let Some(label_tok) = tokens.next() else {
                continue;
            };
            let label = match label_tok {
                "+1" | "1" => Some(Label::Positive),
                "-1" => Some(Label::Negative),
                "0" => None,
                other => return Err(parse_err(format!("invalid label {other:?}"))),
            };
            let mut features = Vec::new();
            for tok in tokens {
                let (idx, value) = tok
                    .split_once(':')
                    .ok_or_else(|| parse_err(format!("expected <idx>:<value>, got {tok:?}")))?;
                if idx.starts_with('-') {
                    return Err(Error::Format(format!(
                        "{}:{}: negative feature index {idx}",
                        origin.display(),
                        lineno + 1
                    )));
                }
                let idx: usize = idx
                    .parse()
                    .map_err(|_| parse_err(format!("invalid feature index {idx:?}")))?;
                let value: f64 = value
                    .parse()
                    .map_err(|_| parse_err(format!("invalid feature value {value:?}")))?;
                if !value.is_finite() || value < 0.0 {
                    return Err(Error::Format(format!(
                        "{}:{}: feature value {value} must be finite and non-negative",
                        origin.display(),
                        lineno + 1
                    )));
                }
                features.push((idx, value));
            }
            examples.push(Example { features, label });
        }
        Ok(DomainDataset::new(domain_id, examples))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Copy restricted to labeled examples.
    pub fn labeled(&self) -> DomainDataset {
        DomainDataset::new(
            self.domain_id.clone(),
            self.examples
                .iter()
                .filter(|e| e.label.is_some())
                .cloned()
                .collect(),
        )
    }

    pub fn labels(&self) -> Vec<Option<Label>> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ex in &self.examples {
            let label = match ex.label {
                Some(Label::Positive) => "+1",
                Some(Label::Negative) => "-1",
                None => "0",
            };
            w.write_all(label.as_bytes())?;
            for (idx, v) in &ex.features {
                write!(w, " {idx}:{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Reads one dataset per `(path, domain id)` pair.
pub fn ingest<P: AsRef<Path>>(inputs: &[(P, String)]) -> Result<Vec<DomainDataset>> {
    inputs
        .iter()
        .map(|(path, id)| {
            let path = path.as_ref();
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            DomainDataset::parse(file, id, path)
        })
        .collect()
}

/// Raw term id to human-readable term, loaded from a sidecar file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TermDictionary {
    names: HashMap<usize, String>,
}

impl TermDictionary {
    pub fn new(names: HashMap<usize, String>) -> Self {
        TermDictionary { names }
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (usize, S)>) -> Self {
        TermDictionary {
            names: pairs.into_iter().map(|(k, v)| (k, v.into())).collect(),
        }
    }

    /// Loads `term<TAB>index<TAB>count` lines; the count column is ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let rows = read_sidecar(path)?;
        Ok(TermDictionary {
            names: rows.into_iter().map(|(t, i, _)| (i, t)).collect(),
        })
    }

    pub fn name(&self, raw_id: usize) -> Option<&str> {
        self.names.get(&raw_id).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VocabEntry {
    pub term: String,
    pub raw_id: usize,
    /// Total token count over the pooled corpus.
    pub count: f64,
}

/// Shared vocabulary. Entry `i` has compact index `i`; entries are in
/// frequency rank order (descending count, ties by term).
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index_of_raw: HashMap<usize, usize>,
}

impl Vocabulary {
    /// Keeps the `max_features` most frequent terms (all when `None`).
    /// Terms without a dictionary name are named by their raw id in decimal.
    pub fn build(
        datasets: &[DomainDataset],
        max_features: Option<usize>,
        names: Option<&TermDictionary>,
    ) -> Result<Self> {
        if datasets.iter().all(DomainDataset::is_empty) {
            return Err(Error::EmptyCorpus);
        }
        if max_features == Some(0) {
            return Err(Error::Parameter("max_features must be positive".into()));
        }
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for ex in datasets.iter().flat_map(|d| &d.examples) {
            for &(id, v) in &ex.features {
                if v > 0.0 {
                    *counts.entry(id).or_insert(0.0) += v;
                }
            }
        }
        let mut entries: Vec<VocabEntry> = counts
            .into_iter()
            .map(|(raw_id, count)| VocabEntry {
                term: names
                    .and_then(|n| n.name(raw_id))
                    .map_or_else(|| raw_id.to_string(), str::to_owned),
                raw_id,
                count,
            })
            .collect();
        entries.sort_by(|a, b| {
            b.count
                .total_cmp(&a.count)
                .then_with(|| a.term.cmp(&b.term))
                .then_with(|| a.raw_id.cmp(&b.raw_id))
        });
        if let Some(k) = max_features {
            entries.truncate(k);
        }
        Ok(Self::from_entries(entries))
    }

    fn from_entries(entries: Vec<VocabEntry>) -> Self {
        let index_of_raw = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.raw_id, i))
            .collect();
        Vocabulary {
            entries,
            index_of_raw,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn index_of_raw(&self, raw_id: usize) -> Option<usize> {
        self.index_of_raw.get(&raw_id).copied()
    }

    pub fn index_of_term(&self, term: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.term == term)
    }

    /// Compact indices of the `r` most frequent terms, most frequent first.
    pub fn top(&self, r: usize) -> Vec<usize> {
        (0..r.min(self.len())).collect()
    }

    /// Builds the `d x n` design matrix; columns follow dataset order, then
    /// example order. Out-of-vocabulary terms are dropped.
    pub fn to_matrix(&self, datasets: &[DomainDataset]) -> Result<DataMatrix> {
        let columns = datasets.iter().flat_map(|d| &d.examples).map(|ex| {
            ex.features
                .iter()
                .filter_map(|&(id, v)| self.index_of_raw(id).map(|i| (i, v)))
                .collect::<Vec<_>>()
        });
        DataMatrix::from_sparse_columns(self.len(), columns)
    }

    /// Design matrix and labels of the labeled examples of one dataset.
    pub fn labeled_matrix(&self, dataset: &DomainDataset) -> Result<(DataMatrix, Vec<Label>)> {
        let labeled = dataset.labeled();
        let labels = labeled.examples.iter().filter_map(|e| e.label).collect();
        Ok((self.to_matrix(std::slice::from_ref(&labeled))?, labels))
    }

    /// Writes `term<TAB>index<TAB>count`, one line per entry in rank order.
    pub fn write_sidecar<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}", e.term, i, e.count)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_sidecar(w))
    }

    /// Loads a sidecar written by [`Vocabulary::save`]. Raw ids are resolved
    /// through `names` when given, otherwise the term must be a decimal id.
    pub fn load(path: &Path, names: Option<&TermDictionary>) -> Result<Self> {
        let mut rows = read_sidecar(path)?;
        rows.sort_by_key(|r| r.1);
        let by_name: Option<HashMap<&str, usize>> = names.map(|n| {
            n.names
                .iter()
                .map(|(&id, name)| (name.as_str(), id))
                .collect()
        });
        let mut entries = Vec::with_capacity(rows.len());
        for (expected, (term, index, count)) in rows.iter().enumerate() {
            if *index != expected {
                return Err(Error::Format(format!(
                    "{}: vocabulary indices must cover 0..{} exactly once",
                    path.display(),
                    rows.len()
                )));
            }
            let raw_id = match &by_name {
                Some(map) => map.get(term.as_str()).copied(),
                None => term.parse().ok(),
            }
            .ok_or_else(|| {
                Error::Format(format!(
                    "{}: cannot resolve raw id of term {term:?}",
                    path.display()
                ))
            })?;
            entries.push(VocabEntry {
                term: term.clone(),
                raw_id,
                count: *count,
            });
        }
        Ok(Self::from_entries(entries))
    }
}

fn read_sidecar(path: &Path) -> Result<Vec<(String, usize, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: message.to_owned(),
        };
        let mut fields = line.split('\t');
        let term = fields.next().ok_or_else(|| parse_err("missing term"))?;
        let index = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| parse_err("missing or invalid index"))?;
        let count = match fields.next() {
            Some(f) => f.trim().parse().map_err(|_| parse_err("invalid count"))?,
            None => 0.0,
        };
        rows.push((term.to_owned(), index, count));
    }
    Ok(rows)
}
