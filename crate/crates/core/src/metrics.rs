//! ROC-AUC, recall and the per-species evaluation report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub id: String,
    pub score: f64,
    pub is_hybrid: bool,
    pub species_group: String,
}

/// Tie-aware rank AUC (Mann-Whitney U) over `(score, is_positive)` pairs.
pub fn auc_from_pairs(pairs: &[(f64, bool)]) -> Result<f64> {
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(format!(
            "AUC undefined: {n_pos} positive and {n_neg} negative samples"
        )));
    }
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share their mean.
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = sorted[i..j].iter().filter(|p| p.1).count();
        rank_sum_pos += mean_rank * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC with hybrids as the positive class.
pub fn roc_auc(scores: &[LabeledScore]) -> Result<f64> {
    auc_from_pairs(&scores.iter().map(|s| (s.score, s.is_hybrid)).collect::<Vec<_>>())
}

/// Fraction of hybrids scored at or above `threshold`.
pub fn recall_at(scores: &[LabeledScore], threshold: f64) -> Result<f64> {
    let hybrids: Vec<f64> = scores.iter().filter(|s| s.is_hybrid).map(|s| s.score).collect();
    if hybrids.is_empty() {
        return Err(Error::invalid("recall undefined: no hybrid samples"));
    }
    Ok(hybrids.iter().filter(|&&s| s >= threshold).count() as f64 / hybrids.len() as f64)
}

/// `(FPR, TPR)` points of the ROC curve, one per distinct score, from (0,0) to (1,1).
pub fn roc_points(pairs: &[(f64, bool)]) -> Vec<(f64, f64)> {
    let n_pos = pairs.iter().filter(|p| p.1).count() as f64;
    let n_neg = pairs.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Vec::new();
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((fp / n_neg, tp / n_pos));
    }
    points
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveClass {
    Hybrid,
    NonHybrid,
}

/// Orientation of the secondary (non-canonical) AUC column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AucOrientation {
    pub positive: PositiveClass,
    /// Use `1 - score` instead of `score`.
    pub invert_score: bool,
}

impl Default for AucOrientation {
    fn default() -> Self {
        AucOrientation {
            positive: PositiveClass::NonHybrid,
            invert_score: true,
        }
    }
}

pub fn oriented_auc(scores: &[LabeledScore], o: AucOrientation) -> Result<f64> {
    let pairs: Vec<(f64, bool)> = scores
        .iter()
        .map(|s| {
            let v = if o.invert_score { 1.0 - s.score } else { s.score };
            let pos = match o.positive {
                PositiveClass::Hybrid => s.is_hybrid,
                PositiveClass::NonHybrid => !s.is_hybrid,
            };
            (v, pos)
        })
        .collect();
    auc_from_pairs(&pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    /// Hybrid-positive AUC.
    AucHybrid,
    /// Configurable secondary AUC.
    AucSecondary,
    Recall,
}

/// One report column, e.g. `A^H_A` (hybrid AUC on group A) or `R_B` (recall on group B).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnKey {
    pub metric: Metric,
    pub group: String,
}

impl ColumnKey {
    pub fn new(metric: Metric, group: &str) -> Self {
        ColumnKey {
            metric,
            group: group.to_string(),
        }
    }

    /// Primary-species AUCs, then mimic recall and AUC.
    pub fn transfer_layout(primary: &str, mimic: &str) -> Vec<ColumnKey> {
        vec![
            ColumnKey::new(Metric::AucHybrid, primary),
            ColumnKey::new(Metric::AucSecondary, primary),
            ColumnKey::new(Metric::Recall, mimic),
            ColumnKey::new(Metric::AucHybrid, mimic),
        ]
    }
}

impl fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = match self.metric {
            Metric::AucHybrid => "A^H",
            Metric::AucSecondary => "A^N",
            Metric::Recall => "R",
        };
        write!(f, "{m}_{}", self.group)
    }
}

impl FromStr for ColumnKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (m, group) = s
            .split_once('_')
            .filter(|(_, g)| !g.is_empty())
            .ok_or_else(|| Error::invalid(format!("bad column `{s}`, expected e.g. `A^H_A`")))?;
        let metric = match m {
            "A^H" => Metric::AucHybrid,
            "A^N" => Metric::AucSecondary,
            "R" => Metric::Recall,
            _ => return Err(Error::invalid(format!("unknown metric `{m}` in column `{s}`"))),
        };
        Ok(ColumnKey::new(metric, group))
    }
}

impl Serialize for ColumnKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ColumnKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub recall_threshold: f64,
    pub secondary_auc: AucOrientation,
    /// Column order; `None` means `A^H`, `A^N`, `R` for every group in name order.
    pub columns: Option<Vec<ColumnKey>>,
    /// Weights for the aggregate score keyed by column label; `None` weighs all equally.
    pub aggregate_weights: Option<BTreeMap<String, f64>>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            recall_threshold: 0.5,
            secondary_auc: AucOrientation::default(),
            columns: None,
            aggregate_weights: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub n_samples: usize,
    pub n_hybrid: usize,
    pub auc_hybrid: Option<f64>,
    pub auc_secondary: Option<f64>,
    pub recall: Option<f64>,
    pub roc_points: Vec<(f64, f64)>,
}

impl GroupMetrics {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::AucHybrid => self.auc_hybrid,
            Metric::AucSecondary => self.auc_secondary,
            Metric::Recall => self.recall,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub key: ColumnKey,
    pub value: Option<f64>,
}

/// Evaluation of one scoring method across species groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub groups: Vec<GroupMetrics>,
    pub columns: Vec<Column>,
    pub aggregate_score: Option<f64>,
}

fn aggregate(columns: &[Column], weights: Option<&BTreeMap<String, f64>>) -> Result<Option<f64>> {
    let (mut num, mut den) = (0.0, 0.0);
    for c in columns {
        let w = match weights {
            Some(map) => map.get(&c.key.to_string()).copied().unwrap_or(0.0),
            None => 1.0,
        };
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::invalid(format!("aggregate weight for {} must be >= 0", c.key)));
        }
        if let Some(v) = c.value {
            num += w * v;
            den += w;
        }
    }
    Ok((den > 0.0).then(|| num / den))
}

pub fn build_report(method: &str, scores: &[LabeledScore], cfg: &ReportConfig) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&cfg.recall_threshold) {
        return Err(Error::invalid("recall_threshold must be in [0, 1]"));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(&s.score)) {
        return Err(Error::invalid(format!("score {} for `{}` outside [0, 1]", s.score, s.id)));
    }
    let groups: BTreeSet<&str> = scores.iter().map(|s| s.species_group.as_str()).collect();
    let mut metrics = Vec::new();
    for g in &groups {
        let subset: Vec<LabeledScore> = scores.iter().filter(|s| s.species_group == *g).cloned().collect();
        let pairs: Vec<(f64, bool)> = subset.iter().map(|s| (s.score, s.is_hybrid)).collect();
        metrics.push(GroupMetrics {
            group: g.to_string(),
            n_samples: subset.len(),
            n_hybrid: subset.iter().filter(|s| s.is_hybrid).count(),
            auc_hybrid: roc_auc(&subset).ok(),
            auc_secondary: oriented_auc(&subset, cfg.secondary_auc).ok(),
            recall: recall_at(&subset, cfg.recall_threshold).ok(),
            roc_points: roc_points(&pairs),
        });
    }
    let layout = match &cfg.columns {
        Some(cols) => cols.clone(),
        None => groups
            .iter()
            .flat_map(|g| [Metric::AucHybrid, Metric::AucSecondary, Metric::Recall].map(|m| ColumnKey::new(m, g)))
            .collect(),
    };
    let columns: Vec<Column> = layout
        .into_iter()
        .map(|key| {
            let value = metrics.iter().find(|m| m.group == key.group).and_then(|m| m.get(key.metric));
            Column { key, value }
        })
        .collect();
    let aggregate_score = aggregate(&columns, cfg.aggregate_weights.as_ref())?;
    Ok(EvalReport {
        method: method.to_string(),
        groups: metrics,
        columns,
        aggregate_score,
    })
}

impl EvalReport {
    /// A report row from precomputed column values (e.g. a published result).
    pub fn from_columns(method: &str, columns: Vec<(ColumnKey, Option<f64>)>, aggregate_score: Option<f64>) -> Self {
        EvalReport {
            method: method.to_string(),
            groups: Vec::new(),
            columns: columns.into_iter().map(|(key, value)| Column { key, value }).collect(),
            aggregate_score,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub threshold: f64,
    pub recall_threshold: f64,
    pub seed: u64,
    /// `Some(false)` for image-mode runs with color jitter disabled; `None` in embedding mode.
    pub color_jitter: Option<bool>,
    pub notes: Vec<String>,
}

/// Several methods evaluated on the same data, rendered as one table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub metadata: ReportMetadata,
    pub rows: Vec<EvalReport>,
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

impl EvalTable {
    /// Aligned text table. Columns come from the first row.
    pub fn render(&self) -> String {
        let Some(first) = self.rows.first() else {
            return String::from("(no results)\n");
        };
        let mut header = vec!["Method".to_string()];
        header.extend(first.columns.iter().map(|c| c.key.to_string()));
        header.push("Score".to_string());
        let mut lines = vec![header];
        for r in &self.rows {
            let mut line = vec![r.method.clone()];
            line.extend(first.columns.iter().map(|c| {
                fmt_value(r.columns.iter().find(|x| x.key == c.key).and_then(|x| x.value))
            }));
            line.push(fmt_value(r.aggregate_score));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|j| lines.iter().map(|l| l[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        if let Some(j) = self.metadata.color_jitter {
            out.push_str(&format!("color jitter: {}\n", if j { "on" } else { "off" }));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Rng;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};

    fn ls(score: f64, hybrid: bool, group: &str) -> LabeledScore {
        LabeledScore {
            id: format!("{group}-{score}-{hybrid}"),
            score,
            is_hybrid: hybrid,
            species_group: group.to_string(),
        }
    }

    fn brute_force(pairs: &[(f64, bool)]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &(sp, p) in pairs.iter().filter(|x| x.1) {
            for &(sn, _) in pairs.iter().filter(|x| !x.1) {
                let _ = p;
                den += 1.0;
                num += if sp > sn {
                    1.0
                } else if sp == sn {
                    0.5
                } else {
                    0.0
                };
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        let perfect: Vec<_> = [0.9, 0.9, 0.9].iter().map(|&s| ls(s, true, "A")).chain([0.1, 0.1].iter().map(|&s| ls(s, false, "A"))).collect();
        assert_eq!(roc_auc(&perfect).unwrap(), 1.0);
        let ties: Vec<_> = (0..6).map(|i| ls(0.3, i % 2 == 0, "A")).collect();
        assert_eq!(roc_auc(&ties).unwrap(), 0.5);
        let mixed = vec![ls(0.8, true, "A"), ls(0.4, true, "A"), ls(0.6, false, "A"), ls(0.2, false, "A")];
        assert_eq!(roc_auc(&mixed).unwrap(), 0.75);
        let err = roc_auc(&[ls(0.3, true, "A")]).unwrap_err();
        assert!(err.to_string().contains("AUC undefined"));
    }

    #[test]
    fn recall_examples() {
        let all = vec![ls(1.0, true, "A"), ls(1.0, true, "A"), ls(0.0, false, "A")];
        assert_eq!(recall_at(&all, 0.5).unwrap(), 1.0);
        let none = vec![ls(0.1, true, "A"), ls(0.9, false, "A")];
        assert_eq!(recall_at(&none, 0.5).unwrap(), 0.0);
        let some = vec![ls(0.6, true, "A"), ls(0.7, true, "A"), ls(0.3, true, "A")];
        assert!((recall_at(&some, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(recall_at(&[ls(0.5, false, "A")], 0.5).is_err());
    }

    #[test]
    fn roc_curve_endpoints() {
        let pairs = [(0.9, true), (0.5, false), (0.5, true), (0.1, false)];
        let pts = roc_points(&pairs);
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert_eq!(pts[1], (0.0, 0.5));
    }

    #[test]
    fn perfect_single_group_report() {
        let scores = vec![ls(0.9, true, "A"), ls(0.8, true, "A"), ls(0.1, false, "A"), ls(0.2, false, "A")];
        let r = build_report("pf", &scores, &ReportConfig::default()).unwrap();
        assert!(r.columns.iter().all(|c| c.value == Some(1.0)));
        assert_eq!(r.aggregate_score, Some(1.0));
    }

    #[test]
    fn group_without_hybrids_is_undefined() {
        let scores = vec![ls(0.9, true, "A"), ls(0.1, false, "A"), ls(0.2, false, "B"), ls(0.4, false, "B")];
        let r = build_report("pf", &scores, &ReportConfig::default()).unwrap();
        let b = r.groups.iter().find(|g| g.group == "B").unwrap();
        assert_eq!((b.auc_hybrid, b.recall), (None, None));
        let text = EvalTable { metadata: ReportMetadata::default(), rows: vec![r] }.render();
        assert!(text.contains("undefined"), "{text}");
    }

    #[test]
    fn weighted_aggregate() {
        let scores = vec![ls(0.9, true, "A"), ls(0.3, true, "A"), ls(0.1, false, "A"), ls(0.2, false, "A")];
        let cfg = ReportConfig {
            columns: Some(vec!["A^H_A".parse().unwrap(), "R_A".parse().unwrap()]),
            aggregate_weights: Some(BTreeMap::from([("A^H_A".to_string(), 3.0), ("R_A".to_string(), 1.0)])),
            ..ReportConfig::default()
        };
        let r = build_report("pf", &scores, &cfg).unwrap();
        assert_eq!(r.columns[0].value, Some(1.0));
        assert_eq!(r.columns[1].value, Some(0.5));
        assert_eq!(r.aggregate_score, Some((3.0 + 0.5) / 4.0));
    }

    #[test]
    fn published_row_renders() {
        let layout = ColumnKey::transfer_layout("A", "B");
        let values = [0.99, 0.21, 0.68, 0.81];
        let row = EvalReport::from_columns("Ours", layout.into_iter().zip(values.map(Some)).collect(), Some(0.44));
        let text = EvalTable { metadata: ReportMetadata::default(), rows: vec![row] }.render();
        let lines: Vec<&str> = text.lines().collect();
        let header: Vec<&str> = lines[0].split_whitespace().collect();
        assert_eq!(header, ["Method", "A^H_A", "A^N_A", "R_B", "A^H_B", "Score"]);
        let cells: Vec<&str> = lines[2].split_whitespace().collect();
        assert_eq!(cells, ["Ours", "0.9900", "0.2100", "0.6800", "0.8100", "0.4400"]);
    }

    #[test]
    fn column_key_parsing() {
        let k: ColumnKey = "A^N_mimic_B".parse().unwrap();
        assert_eq!(k, ColumnKey::new(Metric::AucSecondary, "mimic_B"));
        assert!("X_A".parse::<ColumnKey>().is_err());
        assert_eq!("R_B".parse::<ColumnKey>().unwrap().to_string(), "R_B");
    }

    #[test]
    fn oracle_on_random_tied_instances() {
        let mut rng = Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = rng.gen_range(2..50);
            let mut pairs: Vec<(f64, bool)> = (0..n).map(|_| (rng.gen_range(0..5) as f64 / 4.0, rng.gen_bool(0.4))).collect();
            pairs[0].1 = true;
            pairs[1].1 = false;
            assert!((auc_from_pairs(&pairs).unwrap() - brute_force(&pairs)).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn complement_and_monotone_invariance(raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..40)) {
            let mut pairs = raw;
            pairs[0].1 = true;
            pairs[1].1 = false;
            let a = auc_from_pairs(&pairs).unwrap();
            let flipped: Vec<_> = pairs.iter().map(|&(s, l)| (1.0 - s, l)).collect();
            prop_assert!((a + auc_from_pairs(&flipped).unwrap() - 1.0).abs() <= 1e-12);
            let warped: Vec<_> = pairs.iter().map(|&(s, l)| ((3.0 * s).exp() + s, l)).collect();
            prop_assert!((a - auc_from_pairs(&warped).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn recall_non_increasing(scores in proptest::collection::vec(0.0f64..1.0, 1..30), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let s: Vec<_> = scores.iter().map(|&v| ls(v, true, "A")).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(recall_at(&s, lo).unwrap() >= recall_at(&s, hi).unwrap());
        }
    }
}
