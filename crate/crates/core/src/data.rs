//! Taxonomy, sample records, label semantics and soft training targets.
//!
//! A manifest is a CSV file with header `id,species_group,label,source`. Labels use the
//! grammar `nonhybrid:<class>`, `hybrid:<classA>+<classB>` or `unlabeled`. The `source`
//! column is either a row index into the companion embedding file or an image path.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::Rng;
use rand::SeedableRng;

pub const MANIFEST_HEADER: [&str; 4] = ["id", "species_group", "label", "source"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    pub species: String,
}

/// Ordered set of subspecies classes. Class indices used throughout the crate refer to
/// positions in this list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyFile", into = "TaxonomyFile")]
pub struct Taxonomy {
    classes: Vec<ClassInfo>,
}

#[derive(Serialize, Deserialize)]
struct TaxonomyFile {
    classes: Vec<ClassInfo>,
}

impl TryFrom<TaxonomyFile> for Taxonomy {
    type Error = Error;

    fn try_from(f: TaxonomyFile) -> Result<Self> {
        Taxonomy::new(f.classes)
    }
}

impl From<Taxonomy> for TaxonomyFile {
    fn from(t: Taxonomy) -> Self {
        TaxonomyFile { classes: t.classes }
    }
}

impl Taxonomy {
    pub fn new(classes: Vec<ClassInfo>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::invalid(format!(
                "taxonomy needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if c.name.is_empty() || c.species.is_empty() {
                return Err(Error::invalid("class and species names must be non-empty"));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::invalid(format!("duplicate class `{}`", c.name)));
            }
        }
        Ok(Taxonomy { classes })
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn class(&self, index: usize) -> Option<&ClassInfo> {
        self.classes.get(index)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn species_groups(&self) -> BTreeSet<&str> {
        self.classes.iter().map(|c| c.species.as_str()).collect()
    }

    /// Hex SHA-256 of the canonical JSON form; checkpoints use it to pin the class order.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("taxonomy serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn write_json_file(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Keeps only the classes referenced by labeled records (in taxonomy order) and
    /// remaps the labels onto the reduced index space.
    pub fn restrict_to(&self, records: &[SampleRecord]) -> Result<(Taxonomy, Vec<SampleRecord>)> {
        let mut used = BTreeSet::new();
        for r in records {
            match r.label {
                HybridLabel::NonHybrid(c) => {
                    used.insert(c);
                }
                HybridLabel::Hybrid(a, b) => {
                    used.insert(a);
                    used.insert(b);
                }
                HybridLabel::Unlabeled => {}
            }
        }
        let remap: BTreeMap<usize, usize> = used.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let classes = used.iter().map(|&i| self.classes[i].clone()).collect();
        let taxonomy = Taxonomy::new(classes)?;
        let records = records
            .iter()
            .map(|r| {
                let label = match r.label {
                    HybridLabel::NonHybrid(c) => HybridLabel::NonHybrid(remap[&c]),
                    HybridLabel::Hybrid(a, b) => HybridLabel::hybrid(remap[&a], remap[&b])?,
                    HybridLabel::Unlabeled => HybridLabel::Unlabeled,
                };
                Ok(SampleRecord { label, ..r.clone() })
            })
            .collect::<Result<_>>()?;
        Ok((taxonomy, records))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HybridLabel {
    NonHybrid(usize),
    /// Parents are stored with the lower index first.
    Hybrid(usize, usize),
    Unlabeled,
}

impl HybridLabel {
    /// Builds a hybrid label with normalized parent order.
    pub fn hybrid(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::invalid(format!(
                "hybrid parents must differ (both are class {a})"
            )));
        }
        Ok(HybridLabel::Hybrid(a.min(b), a.max(b)))
    }

    /// `Some(true)` for hybrids, `Some(false)` for non-hybrids, `None` when unlabeled.
    pub fn is_hybrid(&self) -> Option<bool> {
        match self {
            HybridLabel::NonHybrid(_) => Some(false),
            HybridLabel::Hybrid(..) => Some(true),
            HybridLabel::Unlabeled => None,
        }
    }

    pub fn parse(text: &str, taxonomy: &Taxonomy) -> Result<Self> {
        let class = |name: &str| {
            taxonomy
                .index_of(name)
                .ok_or_else(|| Error::invalid(format!("unknown class `{name}`")))
        };
        match split_label(text)? {
            RawLabel::NonHybrid(c) => Ok(HybridLabel::NonHybrid(class(c)?)),
            RawLabel::Hybrid(a, b) => HybridLabel::hybrid(class(a)?, class(b)?),
            RawLabel::Unlabeled => Ok(HybridLabel::Unlabeled),
        }
    }

    pub fn to_manifest_string(&self, taxonomy: &Taxonomy) -> String {
        let name = |i: usize| taxonomy.classes[i].name.as_str();
        match *self {
            HybridLabel::NonHybrid(c) => format!("nonhybrid:{}", name(c)),
            HybridLabel::Hybrid(a, b) => format!("hybrid:{}+{}", name(a), name(b)),
            HybridLabel::Unlabeled => "unlabeled".to_string(),
        }
    }
}

enum RawLabel<'a> {
    NonHybrid(&'a str),
    Hybrid(&'a str, &'a str),
    Unlabeled,
}

fn split_label(text: &str) -> Result<RawLabel<'_>> {
    let text = text.trim();
    if text == "unlabeled" {
        return Ok(RawLabel::Unlabeled);
    }
    if let Some(c) = text.strip_prefix("nonhybrid:") {
        if c.is_empty() {
            return Err(Error::invalid("empty class name in label"));
        }
        return Ok(RawLabel::NonHybrid(c));
    }
    if let Some(pair) = text.strip_prefix("hybrid:") {
        let (a, b) = pair
            .split_once('+')
            .ok_or_else(|| Error::invalid(format!("hybrid label `{text}` needs `<a>+<b>`")))?;
        if a.is_empty() || b.is_empty() {
            return Err(Error::invalid("empty class name in label"));
        }
        if a == b {
            return Err(Error::invalid(format!("hybrid parents must differ in `{text}`")));
        }
        return Ok(RawLabel::Hybrid(a, b));
    }
    Err(Error::invalid(format!("unrecognized label `{text}`")))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    /// Row index into the companion embedding matrix.
    Row(usize),
    Image(PathBuf),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Row(i) => write!(f, "{i}"),
            Source::Image(p) => write!(f, "{}", p.display()),
        }
    }
}

impl Source {
    fn parse(text: &str) -> Self {
        match text.trim().parse::<usize>() {
            Ok(i) => Source::Row(i),
            Err(_) => Source::Image(PathBuf::from(text.trim())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub label: HybridLabel,
    pub source: Source,
    pub species_group: String,
}

/// Training distribution over the K classes: one-hot for non-hybrids, 0.5/0.5 on the
/// two parents for hybrids.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftTarget {
    probs: Vec<f64>,
}

impl SoftTarget {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

pub fn build_soft_target(label: &HybridLabel, taxonomy: &Taxonomy) -> Result<SoftTarget> {
    let k = taxonomy.k();
    let check = |c: usize| {
        if c < k {
            Ok(c)
        } else {
            Err(Error::invalid(format!("class index {c} out of range for K={k}")))
        }
    };
    let mut probs = vec![0.0; k];
    match *label {
        HybridLabel::NonHybrid(c) => probs[check(c)?] = 1.0,
        HybridLabel::Hybrid(a, b) => {
            if a == b {
                return Err(Error::invalid(format!("hybrid parents must differ (both {a})")));
            }
            probs[check(a)?] = 0.5;
            probs[check(b)?] = 0.5;
        }
        HybridLabel::Unlabeled => return Err(Error::invalid("target undefined for unlabeled sample")),
    }
    Ok(SoftTarget { probs })
}

struct RawRow {
    line: usize,
    id: String,
    species_group: String,
    label: String,
    source: String,
}

fn read_raw_rows(path: &Path) -> Result<Vec<RawRow>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(format!("reading {}", path.display()), io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.is_empty() {
        return Err(parse_err(1, "no records".into()));
    }
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(parse_err(
            1,
            format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, format!("malformed row: {e}"))
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, got {}", rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(line, "empty id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(line, format!("duplicate id `{id}`")));
        }
        if rec[1].is_empty() {
            return Err(parse_err(line, "empty species_group".into()));
        }
        rows.push(RawRow {
            line,
            id,
            species_group: rec[1].to_string(),
            label: rec[2].to_string(),
            source: rec[3].to_string(),
        });
    }
    if rows.is_empty() {
        return Err(parse_err(1, "no records".into()));
    }
    Ok(rows)
}

fn rows_to_records(path: &Path, rows: Vec<RawRow>, taxonomy: &Taxonomy) -> Result<Vec<SampleRecord>> {
    rows.into_iter()
        .map(|row| {
            let label = HybridLabel::parse(&row.label, taxonomy).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: row.line,
                msg: e.to_string(),
            })?;
            Ok(SampleRecord {
                id: row.id,
                label,
                source: Source::parse(&row.source),
                species_group: row.species_group,
            })
        })
        .collect()
}

/// Loads a manifest and infers its taxonomy from the labels: every class named in a
/// label becomes a class of the row's species group, ordered by name.
pub fn load_manifest(path: &Path) -> Result<(Taxonomy, Vec<SampleRecord>)> {
    let rows = read_raw_rows(path)?;
    let mut classes: BTreeMap<String, String> = BTreeMap::new();
    for row in &rows {
        let names = match split_label(&row.label).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: row.line,
            msg: e.to_string(),
        })? {
            RawLabel::NonHybrid(c) => vec![c],
            RawLabel::Hybrid(a, b) => vec![a, b],
            RawLabel::Unlabeled => vec![],
        };
        for name in names {
            match classes.get(name) {
                Some(species) if species != &row.species_group => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: row.line,
                        msg: format!(
                            "class `{name}` appears under species `{species}` and `{}`",
                            row.species_group
                        ),
                    })
                }
                Some(_) => {}
                None => {
                    classes.insert(name.to_string(), row.species_group.clone());
                }
            }
        }
    }
    let taxonomy = Taxonomy::new(
        classes
            .into_iter()
            .map(|(name, species)| ClassInfo { name, species })
            .collect(),
    )
    .map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: e.to_string(),
    })?;
    let records = rows_to_records(path, rows, &taxonomy)?;
    Ok((taxonomy, records))
}

/// Loads a manifest against a known taxonomy; labels naming classes outside it are errors.
pub fn load_manifest_with(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<SampleRecord>> {
    let rows = read_raw_rows(path)?;
    rows_to_records(path, rows, taxonomy)
}

pub fn write_manifest(path: &Path, taxonomy: &Taxonomy, records: &[SampleRecord]) -> Result<()> {
    let io_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(MANIFEST_HEADER).map_err(io_err)?;
    for r in records {
        w.write_record([
            r.id.as_str(),
            r.species_group.as_str(),
            r.label.to_manifest_string(taxonomy).as_str(),
            r.source.to_string().as_str(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Splits the labeled records into train and validation, stratified by hybrid status.
/// Each stratum sends `round(n * val_fraction)` samples to validation, clamped so that
/// both sides keep at least one. Ids keep manifest order within each partition.
pub fn stratified_split(records: &[SampleRecord], val_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "val_fraction must be in (0,1), got {val_fraction}"
        )));
    }
    let mut strata: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, r) in records.iter().enumerate() {
        if let Some(h) = r.label.is_hybrid() {
            strata[usize::from(h)].push(i);
        }
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut in_val = vec![false; records.len()];
    for (stratum, name) in strata.iter_mut().zip(["non-hybrid", "hybrid"]) {
        if stratum.len() < 2 {
            return Err(Error::invalid(format!(
                "stratum too small: {} {name} sample(s), need at least 2",
                stratum.len()
            )));
        }
        let n = stratum.len();
        let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
        stratum.shuffle(&mut rng);
        for &i in &stratum[..n_val] {
            in_val[i] = true;
        }
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
    };
    for (i, r) in records.iter().enumerate() {
        if r.label.is_hybrid().is_none() {
            continue;
        }
        if in_val[i] {
            split.val.push(r.id.clone());
        } else {
            split.train.push(r.id.clone());
        }
    }
    Ok(split)
}
