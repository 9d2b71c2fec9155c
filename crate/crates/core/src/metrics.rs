//! Fairness evaluation over prediction tables.
//!
//! Formula choices (tagged in every report as [`FORMULA_VERSION`]):
//!
//! * AP: `Σ_k (R_k − R_{k−1}) · P_k` over the score-descending ranking.
//! * DEO: `|AP_0 − AP_1|` in percentage points.
//! * BA: `P̂(Z = z* | Ŷ = 1) − P(Z = z* | Y = 1)` in percentage points, where
//!   `z*` is the group holding the majority of training positives.
//! * KL: `½ Σ_y KL(H_0(s | Y = y) ‖ H_1(s | Y = y))` over equal-width
//!   histograms on `[0, 1]`, smoothed as `(p_i + ε) / (1 + bins · ε)`.
//! * dCor²: squared sample distance correlation (V-statistic, double
//!   centered distance matrices), `0` when either distance variance is `0`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::balance::CountTable;
use crate::error::{Error, Result};

pub const FORMULA_VERSION: &str = "fairsynth-metrics/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMode {
    /// Equal scores keep their input order.
    #[default]
    Stable,
    /// Equal scores rank negatives before positives.
    Pessimistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub group: u8,
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
    pub representation: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTable {
    attributes: Vec<String>,
    rows: Vec<PredictionRow>,
    representation_dim: Option<usize>,
}

impl PredictionTable {
    pub fn new(attributes: Vec<String>, rows: Vec<PredictionRow>) -> Result<Self> {
        let representation_dim = rows.first().and_then(|r| r.representation.as_ref().map(Vec::len));
        for r in &rows {
            if r.group > 1 {
                return Err(Error::NonBinary {
                    column: "group".into(),
                    value: r.group.to_string(),
                });
            }
            if r.labels.len() != attributes.len() || r.scores.len() != attributes.len() {
                return Err(Error::Format(format!("row `{}` does not cover every attribute", r.id)));
            }
            if let Some(v) = r.labels.iter().find(|&&v| v > 1) {
                return Err(Error::NonBinary {
                    column: r.id.clone(),
                    value: v.to_string(),
                });
            }
            if r.scores.iter().any(|s| !(s.is_finite() && (0.0..=1.0).contains(s))) {
                return Err(Error::Format(format!("row `{}` has a score outside [0, 1]", r.id)));
            }
            if r.representation.as_ref().map(Vec::len) != representation_dim {
                return Err(Error::Format(format!(
                    "row `{}` has a different representation size",
                    r.id
                )));
            }
            if r.representation.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("representation"));
            }
        }
        Ok(Self {
            attributes,
            rows,
            representation_dim,
        })
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn rows(&self) -> &[PredictionRow] {
        &self.rows
    }

    pub fn representation_dim(&self) -> Option<usize> {
        self.representation_dim
    }

    pub fn column(&self, attribute: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a == attribute)
            .ok_or_else(|| Error::MissingColumn(attribute.to_string()))
    }

    /// `(scores, labels)` for one attribute, optionally restricted to a group.
    pub fn slice(&self, col: usize, group: Option<u8>) -> (Vec<f64>, Vec<u8>) {
        self.rows
            .iter()
            .filter(|r| group.is_none_or(|g| r.group == g))
            .map(|r| (r.scores[col], r.labels[col]))
            .unzip()
    }

    fn sorted_by_id(&self) -> Self {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            attributes: self.attributes.clone(),
            rows,
            representation_dim: self.representation_dim,
        }
    }
}

/// Parses the comma-separated prediction format:
///
/// ```text
/// id,group,Blond_Hair:label,Blond_Hair:score,...,repr:0,repr:1,...
/// ```
pub fn parse_predictions_str(src: &str) -> Result<PredictionTable> {
    let mut lines = src.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::EmptyRequest("prediction file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "id" || cols[1] != "group" {
        return Err(Error::Parse {
            line: 1,
            msg: "header must start with `id,group`".into(),
        });
    }
    let mut attributes = Vec::new();
    let mut label_col = Vec::new();
    let mut score_col = Vec::new();
    let mut repr_cols = Vec::new();
    for (i, c) in cols.iter().enumerate().skip(2) {
        if let Some(idx) = c.strip_prefix("repr:") {
            let n: usize = idx.parse().map_err(|_| Error::Parse {
                line: 1,
                msg: format!("bad representation column `{c}`"),
            })?;
            if n != repr_cols.len() {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("representation columns out of order at `{c}`"),
                });
            }
            repr_cols.push(i);
        } else if let Some(a) = c.strip_suffix(":label") {
            attributes.push(a.to_string());
            label_col.push(i);
        } else if let Some(a) = c.strip_suffix(":score") {
            if attributes.last().map(String::as_str) != Some(a) || score_col.len() + 1 != label_col.len() {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("`{c}` must follow `{a}:label`"),
                });
            }
            score_col.push(i);
        } else {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unknown column `{c}`"),
            });
        }
    }
    if score_col.len() != label_col.len() {
        return Err(Error::Parse {
            line: 1,
            msg: "every attribute needs a label and a score column".into(),
        });
    }

    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} fields, found {}", cols.len(), f.len()),
            });
        }
        let bad = |what: &str, v: &str| Error::Parse {
            line: line_no,
            msg: format!("bad {what} `{v}`"),
        };
        let id = f[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let group = match f[1] {
            "0" => 0,
            "1" => 1,
            v => return Err(bad("group", v)),
        };
        let labels = label_col
            .iter()
            .map(|&c| match f[c] {
                "0" | "-1" => Ok(0),
                "1" => Ok(1),
                v => Err(bad("label", v)),
            })
            .collect::<Result<Vec<u8>>>()?;
        let scores = score_col
            .iter()
            .map(|&c| f[c].parse::<f64>().map_err(|_| bad("score", f[c])))
            .collect::<Result<Vec<f64>>>()?;
        let representation = if repr_cols.is_empty() {
            None
        } else {
            Some(
                repr_cols
                    .iter()
                    .map(|&c| f[c].parse::<f64>().map_err(|_| bad("representation value", f[c])))
                    .collect::<Result<Vec<f64>>>()?,
            )
        };
        rows.push(PredictionRow {
            id,
            group,
            labels,
            scores,
            representation,
        });
    }
    PredictionTable::new(attributes, rows)
}

pub fn parse_predictions(path: &Path) -> Result<PredictionTable> {
    parse_predictions_str(&fs::read_to_string(path)?)
}

pub fn write_predictions(table: &PredictionTable) -> String {
    let mut out = String::from("id,group");
    for a in &table.attributes {
        let _ = write!(out, ",{a}:label,{a}:score");
    }
    for i in 0..table.representation_dim.unwrap_or(0) {
        let _ = write!(out, ",repr:{i}");
    }
    out.push('\n');
    for r in &table.rows {
        let _ = write!(out, "{},{}", r.id, r.group);
        for (l, s) in r.labels.iter().zip(&r.scores) {
            let _ = write!(out, ",{l},{s}");
        }
        for v in r.representation.iter().flatten() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Average precision of a ranking by descending score.
pub fn average_precision(scores: &[f64], labels: &[u8], tie: TieMode) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Format("scores and labels differ in length".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(Error::Undefined("average precision with no positive labels".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let by_score = scores[b].total_cmp(&scores[a]);
        match tie {
            TieMode::Stable => by_score,
            TieMode::Pessimistic => by_score.then(labels[a].cmp(&labels[b])),
        }
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Per-group and overall AP as fractions; `None` where undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAp {
    pub overall: Option<f64>,
    pub groups: [Option<f64>; 2],
}

impl GroupAp {
    /// DEO in percentage points; `None` unless both groups have an AP.
    pub fn deo(&self) -> Option<f64> {
        match self.groups {
            [Some(a), Some(b)] => Some(100.0 * (a - b).abs()),
            _ => None,
        }
    }
}

pub fn group_ap(pred: &PredictionTable, attribute: &str, tie: TieMode) -> Result<GroupAp> {
    let col = pred.column(attribute)?;
    let ap = |g: Option<u8>| {
        let (s, l) = pred.slice(col, g);
        average_precision(&s, &l, tie).ok()
    };
    Ok(GroupAp {
        overall: ap(None),
        groups: [ap(Some(0)), ap(Some(1))],
    })
}

/// Difference in equal opportunity, in percentage points.
pub fn deo(pred: &PredictionTable, attribute: &str) -> Result<f64> {
    group_ap(pred, attribute, TieMode::Stable)?
        .deo()
        .ok_or_else(|| Error::Undefined(format!("DEO for `{attribute}`: a group has no positives")))
}

/// DEO from per-group APs already expressed in percent.
pub fn deo_from_percent(ap_group0: f64, ap_group1: f64) -> f64 {
    (ap_group0 - ap_group1).abs()
}

/// Directional bias amplification toward the training-majority group, in
/// percentage points. Positive values mean the model over-represents that
/// group among its predicted positives.
pub fn bias_amplification(
    train: &CountTable,
    pred: &PredictionTable,
    attribute: &str,
    score_threshold: f64,
) -> Result<f64> {
    let counts = train
        .attributes
        .get(attribute)
        .ok_or_else(|| Error::MissingColumn(attribute.to_string()))?;
    let [p0, p1] = counts.positive;
    let majority = match p0.cmp(&p1) {
        std::cmp::Ordering::Greater => 0u8,
        std::cmp::Ordering::Less => 1u8,
        std::cmp::Ordering::Equal => {
            return Err(Error::Tie(format!(
                "`{attribute}` training positives are split evenly ({p0} / {p1})"
            )))
        }
    };
    let train_share = counts.positive[usize::from(majority)] as f64 / (p0 + p1) as f64;
    let col = pred.column(attribute)?;
    let (mut predicted, mut in_majority) = (0u64, 0u64);
    for r in pred.rows() {
        if r.scores[col] > score_threshold {
            predicted += 1;
            in_majority += u64::from(r.group == majority);
        }
    }
    if predicted == 0 {
        return Err(Error::Undefined(format!(
            "BA for `{attribute}`: no predicted positives"
        )));
    }
    Ok(100.0 * (in_majority as f64 / predicted as f64 - train_share))
}

/// Normalized, smoothed histogram of scores on `[0, 1]`.
pub fn score_histogram(scores: &[f64], bins: usize, epsilon: f64) -> Vec<f64> {
    let mut counts = vec![0u64; bins];
    for &s in scores {
        let i = ((s * bins as f64).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = scores.len() as f64;
    let z = 1.0 + bins as f64 * epsilon;
    counts.iter().map(|&c| (c as f64 / n + epsilon) / z).collect()
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

pub fn kl_score_divergence(pred: &PredictionTable, attribute: &str, bins: usize, epsilon: f64) -> Result<f64> {
    if bins == 0 {
        return Err(Error::InvalidConfig("KL needs at least one bin".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig("KL smoothing epsilon must be > 0".into()));
    }
    let col = pred.column(attribute)?;
    let mut total = 0.0;
    for y in [0u8, 1] {
        let cond = |g: u8| -> Vec<f64> {
            pred.rows()
                .iter()
                .filter(|r| r.group == g && r.labels[col] == y)
                .map(|r| r.scores[col])
                .collect()
        };
        let (s0, s1) = (cond(0), cond(1));
        if s0.is_empty() || s1.is_empty() {
            return Err(Error::Undefined(format!(
                "KL for `{attribute}`: a group has no samples with label {y}"
            )));
        }
        total += kl_divergence(
            &score_histogram(&s0, bins, epsilon),
            &score_histogram(&s1, bins, epsilon),
        );
    }
    Ok(0.5 * total)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sums of a distance matrix by row, plus its grand mean, without storing it.
fn distance_means<F: Fn(usize, usize) -> f64>(n: usize, dist: &F) -> (Vec<f64>, f64) {
    let rows: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| dist(i, j)).sum::<f64>() / n as f64)
        .collect();
    let grand = rows.iter().sum::<f64>() / n as f64;
    (rows, grand)
}

/// Squared distance correlation between the rows of `x` and binary labels `z`.
///
/// Memory is `O(n)`; distances are recomputed on the fly in a fixed order.
pub fn distance_correlation_sq(x: &[Vec<f64>], z: &[u8]) -> Result<f64> {
    let n = x.len();
    if n != z.len() {
        return Err(Error::Format(format!("{n} representations but {} labels", z.len())));
    }
    if n < 2 {
        return Err(Error::InsufficientSeeds { needed: 2, found: n });
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Format("representation rows differ in length".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("representation"));
    }
    let zf: Vec<f64> = z.iter().map(|&v| f64::from(v)).collect();
    let dx = |i: usize, j: usize| euclid(&x[i], &x[j]);
    let dz = |i: usize, j: usize| (zf[i] - zf[j]).abs();
    let (ax, gx) = distance_means(n, &dx);
    let (az, gz) = distance_means(n, &dz);
    let (mut cov, mut vx, mut vz) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let a = dx(i, j) - ax[i] - ax[j] + gx;
            let b = dz(i, j) - az[i] - az[j] + gz;
            cov += a * b;
            vx += a * a;
            vz += b * b;
        }
    }
    let nn = (n * n) as f64;
    let (cov, vx, vz) = (cov / nn, vx / nn, vz / nn);
    if vx <= 0.0 || vz <= 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (vx * vz).sqrt()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub bins: usize,
    pub epsilon: f64,
    pub score_threshold: f64,
    pub tie_mode: TieMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bins: 10,
            epsilon: 1e-6,
            score_threshold: 0.5,
            tie_mode: TieMode::Stable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMetrics {
    pub attribute: String,
    /// Percent.
    pub ap: Option<f64>,
    /// Percent, per group.
    pub ap_group: [Option<f64>; 2],
    /// Percentage points.
    pub deo: Option<f64>,
    /// Percentage points.
    pub ba: Option<f64>,
    pub kl: Option<f64>,
    /// dCor² between this attribute's scores and the group labels.
    pub dcor2: Option<f64>,
    /// Thresholded accuracy per group, percent.
    pub accuracy_group: [Option<f64>; 2],
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub ap: Option<f64>,
    pub deo: Option<f64>,
    pub ba: Option<f64>,
    pub kl: Option<f64>,
    pub dcor2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub formula_version: String,
    pub config: MetricsConfig,
    /// Scale of AP, DEO, BA and accuracy values.
    pub scale: String,
    pub rows: usize,
    pub attributes: Vec<AttributeMetrics>,
    pub means: MetricMeans,
    /// dCor² between the representation vectors and the group labels.
    pub dcor2_representation: Option<f64>,
    pub notes: Vec<String>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn keep<T>(r: Result<T>, label: &str, notes: &mut Vec<String>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{label}: {e}"));
            None
        }
    }
}

fn group_accuracy(pred: &PredictionTable, col: usize, group: u8, threshold: f64) -> Option<f64> {
    let rows: Vec<&PredictionRow> = pred.rows().iter().filter(|r| r.group == group).collect();
    if rows.is_empty() {
        return None;
    }
    let correct = rows
        .iter()
        .filter(|r| u8::from(r.scores[col] > threshold) == r.labels[col])
        .count();
    Some(100.0 * correct as f64 / rows.len() as f64)
}

/// Every metric for every attribute. Rows are put in id order first, so the
/// report does not depend on input row order. Undefined metrics stay `None`
/// with the reason recorded in `notes`.
pub fn evaluate_all(
    pred: &PredictionTable,
    train: Option<&CountTable>,
    config: &MetricsConfig,
) -> Result<MetricsReport> {
    if config.bins == 0 || !(config.epsilon > 0.0 && config.epsilon.is_finite()) {
        return Err(Error::InvalidConfig("metric bins must be >= 1 and epsilon > 0".into()));
    }
    let pred = pred.sorted_by_id();
    let groups: Vec<u8> = pred.rows().iter().map(|r| r.group).collect();
    let mut attributes = Vec::with_capacity(pred.attributes().len());
    for (col, name) in pred.attributes().iter().enumerate() {
        let mut notes = Vec::new();
        let ap = group_ap(&pred, name, config.tie_mode)?;
        if ap.overall.is_none() {
            notes.push("AP: no positive labels".into());
        }
        for g in 0..2 {
            if ap.groups[g].is_none() {
                notes.push(format!("AP group {g}: no positive labels"));
            }
        }
        let ba = match train {
            Some(t) => keep(
                bias_amplification(t, &pred, name, config.score_threshold),
                "BA",
                &mut notes,
            ),
            None => {
                notes.push("BA: no training counts supplied".into());
                None
            }
        };
        let kl = keep(
            kl_score_divergence(&pred, name, config.bins, config.epsilon),
            "KL",
            &mut notes,
        );
        let scores: Vec<Vec<f64>> = pred.rows().iter().map(|r| vec![r.scores[col]]).collect();
        let dcor2 = keep(distance_correlation_sq(&scores, &groups), "dcor2", &mut notes);
        attributes.push(AttributeMetrics {
            attribute: name.clone(),
            ap: ap.overall.map(|v| 100.0 * v),
            ap_group: ap.groups.map(|g| g.map(|v| 100.0 * v)),
            deo: ap.deo(),
            ba,
            kl,
            dcor2,
            accuracy_group: [0, 1].map(|g| group_accuracy(&pred, col, g, config.score_threshold)),
            notes,
        });
    }
    let mut notes = vec![format!(
        "accuracy uses score threshold {} (threshold not fixed by the protocol)",
        config.score_threshold
    )];
    let dcor2_representation = if pred.representation_dim().is_some() {
        let reps: Vec<Vec<f64>> = pred
            .rows()
            .iter()
            .map(|r| r.representation.clone().unwrap_or_default())
            .collect();
        keep(
            distance_correlation_sq(&reps, &groups),
            "dcor2 (representation)",
            &mut notes,
        )
    } else {
        None
    };
    let means = MetricMeans {
        ap: mean(attributes.iter().map(|a| a.ap)),
        deo: mean(attributes.iter().map(|a| a.deo)),
        ba: mean(attributes.iter().map(|a| a.ba)),
        kl: mean(attributes.iter().map(|a| a.kl)),
        dcor2: mean(attributes.iter().map(|a| a.dcor2)),
    };
    Ok(MetricsReport {
        formula_version: FORMULA_VERSION.into(),
        config: config.clone(),
        scale: "percentage points".into(),
        rows: pred.rows().len(),
        attributes,
        means,
        dcor2_representation,
        notes,
    })
}

/// `-` for undefined values, like the published tables.
pub fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{x:.decimals$}"),
        None => "-".into(),
    }
}

/// Aligned text table: Attribute | AP | DEO | BA | KL | dcor².
pub fn render_table(report: &MetricsReport) -> String {
    let header = ["Attribute", "AP", "DEO", "BA", "KL", "dcor2"];
    let mut rows: Vec<[String; 6]> = report
        .attributes
        .iter()
        .map(|a| {
            [
                a.attribute.clone(),
                fmt_opt(a.ap, 1),
                fmt_opt(a.deo, 1),
                fmt_opt(a.ba, 1),
                fmt_opt(a.kl, 4),
                fmt_opt(a.dcor2, 4),
            ]
        })
        .collect();
    let m = &report.means;
    rows.push([
        "Mean".into(),
        fmt_opt(m.ap, 1),
        fmt_opt(m.deo, 1),
        fmt_opt(m.ba, 1),
        fmt_opt(m.kl, 4),
        fmt_opt(m.dcor2, 4),
    ]);
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&line(&header.map(String::from)));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        if i + 1 == rows.len() {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
        out.push_str(&line(r));
        out.push('\n');
    }
    if let Some(d) = report.dcor2_representation {
        let _ = writeln!(out, "dcor2 (representation vs group): {d:.4}");
    }
    out
}

/// Report values keyed by attribute, handy for assertions and diffs.
pub fn deo_column(report: &MetricsReport) -> BTreeMap<String, String> {
    report
        .attributes
        .iter()
        .map(|a| (a.attribute.clone(), fmt_opt(a.deo, 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::GroupCounts;

    fn row(id: &str, group: u8, label: u8, score: f64) -> PredictionRow {
        PredictionRow {
            id: id.into(),
            group,
            labels: vec![label],
            scores: vec![score],
            representation: None,
        }
    }

    fn table(rows: Vec<PredictionRow>) -> PredictionTable {
        PredictionTable::new(vec!["Y".into()], rows).unwrap()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0], TieMode::Stable).unwrap(),
            1.0
        );
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.7, 0.1], &[0, 0, 0, 1], TieMode::Stable).unwrap(),
            0.25
        );
        assert_eq!(average_precision(&[0.3, 0.2], &[1, 1], TieMode::Stable).unwrap(), 1.0);
        assert!(matches!(
            average_precision(&[0.3], &[0], TieMode::Stable),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn ap_hand_enumerated() {
        // Ranking: + - + - -  -> (1/1 + 2/3) / 2
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.6, 0.5], &[1, 0, 1, 0, 0], TieMode::Stable).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        // Ties: stable keeps + before -, pessimistic puts - first.
        let s = [0.5, 0.5];
        assert_eq!(average_precision(&s, &[1, 0], TieMode::Stable).unwrap(), 1.0);
        assert_eq!(average_precision(&s, &[1, 0], TieMode::Pessimistic).unwrap(), 0.5);
    }

    #[test]
    fn deo_examples() {
        assert!((deo_from_percent(92.6, 58.7) - 33.9).abs() < 0.05);
        assert!((deo_from_percent(86.3, 92.8) - 6.5).abs() < 0.05);
        let t = table(vec![
            row("a", 0, 1, 0.9),
            row("b", 0, 0, 0.1),
            row("c", 1, 1, 0.9),
            row("d", 1, 0, 0.1),
        ]);
        assert_eq!(deo(&t, "Y").unwrap(), 0.0);
        let t = table(vec![row("a", 0, 1, 0.9), row("b", 1, 0, 0.1)]);
        assert!(matches!(deo(&t, "Y"), Err(Error::Undefined(_))));
    }

    fn train(p0: u64, p1: u64) -> CountTable {
        CountTable::new("Male", [100, 100]).with_attribute(
            "Y",
            GroupCounts {
                positive: [p0, p1],
                negative: [100 - p0, 100 - p1],
            },
        )
    }

    #[test]
    fn ba_examples() {
        // Majority group 0 holds 60% of training positives.
        let mut rows: Vec<PredictionRow> = (0..9).map(|i| row(&format!("a{i}"), 0, 1, 0.9)).collect();
        rows.extend((0..3).map(|i| row(&format!("b{i}"), 1, 1, 0.9)));
        rows.push(row("c", 1, 0, 0.2));
        let ba = bias_amplification(&train(30, 20), &table(rows), "Y", 0.5).unwrap();
        assert!((ba - 15.0).abs() < 1e-9);

        let rows = vec![row("a", 1, 1, 0.8), row("b", 1, 1, 0.7), row("c", 0, 1, 0.4)];
        let ba = bias_amplification(&train(30, 20), &table(rows), "Y", 0.5).unwrap();
        assert!((ba + 60.0).abs() < 1e-9);

        let rows: Vec<PredictionRow> = (0..5)
            .map(|i| row(&format!("p{i}"), u8::from(i >= 3), 1, 0.9))
            .collect();
        assert!(
            bias_amplification(&train(30, 20), &table(rows), "Y", 0.5)
                .unwrap()
                .abs()
                < 1e-12
        );

        let t = table(vec![row("a", 0, 1, 0.1)]);
        assert!(matches!(
            bias_amplification(&train(30, 20), &t, "Y", 0.5),
            Err(Error::Undefined(_))
        ));
        assert!(matches!(
            bias_amplification(&train(20, 20), &t, "Y", 0.5),
            Err(Error::Tie(_))
        ));
    }

    #[test]
    fn kl_examples() {
        let sym = table(vec![
            row("a", 0, 1, 0.9),
            row("b", 0, 0, 0.2),
            row("c", 1, 1, 0.9),
            row("d", 1, 0, 0.2),
        ]);
        assert_eq!(kl_score_divergence(&sym, "Y", 10, 1e-6).unwrap(), 0.0);

        let split = table(vec![
            row("a", 0, 1, 0.05),
            row("b", 0, 0, 0.01),
            row("c", 1, 1, 0.95),
            row("d", 1, 0, 0.99),
        ]);
        let eps: f64 = 1e-6;
        // Closed form: each condition gives ln((1+ε)/ε) / (1 + 10ε).
        let expect = ((1.0 + eps) / eps).ln() / (1.0 + 10.0 * eps);
        let got = kl_score_divergence(&split, "Y", 10, eps).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");

        let mut doubled = split.rows().to_vec();
        doubled.extend(split.rows().iter().map(|r| PredictionRow {
            id: format!("{}2", r.id),
            ..r.clone()
        }));
        let got2 = kl_score_divergence(&table(doubled), "Y", 10, eps).unwrap();
        assert!((got - got2).abs() < 1e-12);

        let missing = table(vec![row("a", 0, 1, 0.5), row("b", 1, 1, 0.5)]);
        assert!(matches!(
            kl_score_divergence(&missing, "Y", 10, eps),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn dcor_examples() {
        let z = [0u8, 0, 1, 1];
        let constant = vec![vec![2.0]; 4];
        assert_eq!(distance_correlation_sq(&constant, &z).unwrap(), 0.0);
        let same: Vec<Vec<f64>> = z.iter().map(|&v| vec![f64::from(v)]).collect();
        assert!((distance_correlation_sq(&same, &z).unwrap() - 1.0).abs() < 1e-12);
        assert!(distance_correlation_sq(&[vec![f64::NAN], vec![0.0]], &[0, 1]).is_err());
        assert!(distance_correlation_sq(&[vec![0.0]], &[0]).is_err());
    }

    #[test]
    fn prediction_file_round_trip_and_errors() {
        let src =
            "id,group,A:label,A:score,B:label,B:score,repr:0,repr:1\nx,0,1,0.9,0,0.25,1.5,-2\ny,1,0,0.1,1,0.75,0,0\n";
        let t = parse_predictions_str(src).unwrap();
        assert_eq!(t.attributes(), &["A".to_string(), "B".to_string()]);
        assert_eq!(t.representation_dim(), Some(2));
        assert_eq!(parse_predictions_str(&write_predictions(&t)).unwrap(), t);
        assert!(parse_predictions_str("id,group,A:label,A:score\nx,0,1,1.5\n").is_err());
        assert!(parse_predictions_str("id,group,A:label,A:score\nx,2,1,0.5\n").is_err());
        assert!(parse_predictions_str("id,group,A:score,A:label\n").is_err());
        assert!(matches!(
            parse_predictions_str("id,group,A:label,A:score\nx,0,1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn symmetric_fixture_report() {
        let t = table(vec![
            row("a", 0, 1, 0.9),
            row("b", 0, 0, 0.2),
            row("c", 1, 1, 0.9),
            row("d", 1, 0, 0.2),
        ]);
        let ct = train(30, 20);
        let rep = evaluate_all(&t, Some(&ct), &MetricsConfig::default()).unwrap();
        let a = &rep.attributes[0];
        assert_eq!(a.deo, Some(0.0));
        assert_eq!(a.kl, Some(0.0));
        // Predicted positives split 1:1 while training share is 0.6.
        assert!((a.ba.unwrap() + 10.0).abs() < 1e-9);
        let table = render_table(&rep);
        assert!(table.contains("DEO") && table.contains("dcor2"));
    }
}
