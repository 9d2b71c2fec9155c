//! Per-attribute positive rates, per-group AP, DEO and the attribute taxonomy.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotations::AnnotationTable;
use crate::error::{Error, Result};
use crate::metrics::{fmt_opt, group_ap, GroupAp, PredictionTable, TieMode};

/// Attributes with DEO strictly below this many points are "unbiased".
pub const UNBIASED_DEO: f64 = 5.0;

pub const MASCULINITY: [&str; 8] = [
    "5_o_Clock_Shadow",
    "Bald",
    "Bushy_Eyebrows",
    "Goatee",
    "Mustache",
    "Receding_Hairline",
    "Sideburns",
    "Wearing_Necktie",
];

pub const FEMININITY: [&str; 9] = [
    "Arched_Eyebrows",
    "Heavy_Makeup",
    "No_Beard",
    "Oval_Face",
    "Rosy_Cheeks",
    "Wearing_Earrings",
    "Wearing_Lipstick",
    "Wearing_Necklace",
    "Attractive",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taxonomy {
    Unbiased,
    Masculinity,
    Femininity,
    Aoi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaxonomyLists {
    pub masculinity: Vec<String>,
    pub femininity: Vec<String>,
    pub unbiased_deo: f64,
}

impl Default for TaxonomyLists {
    fn default() -> Self {
        Self {
            masculinity: MASCULINITY.iter().map(|s| s.to_string()).collect(),
            femininity: FEMININITY.iter().map(|s| s.to_string()).collect(),
            unbiased_deo: UNBIASED_DEO,
        }
    }
}

impl TaxonomyLists {
    /// `unbiased` whenever DEO is defined and below the cutoff; otherwise the
    /// named lists decide, and anything else is an attribute of interest.
    pub fn classify(&self, attribute: &str, deo: Option<f64>) -> Taxonomy {
        if deo.is_some_and(|d| d < self.unbiased_deo) {
            Taxonomy::Unbiased
        } else if self.masculinity.iter().any(|a| a == attribute) {
            Taxonomy::Masculinity
        } else if self.femininity.iter().any(|a| a == attribute) {
            Taxonomy::Femininity
        } else {
            Taxonomy::Aoi
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeStudyRow {
    pub attribute: String,
    /// Percent positive in group 0 and group 1.
    pub positive_rate: [f64; 2],
    pub positive_rate_overall: f64,
    /// Percent.
    pub ap: [Option<f64>; 2],
    pub ap_overall: Option<f64>,
    /// Percentage points.
    pub deo: Option<f64>,
    pub taxonomy: Taxonomy,
}

/// Builds a row from precomputed pieces. APs are in percent.
pub fn study_row(
    attribute: &str,
    positive_rate: [f64; 2],
    positive_rate_overall: f64,
    ap: [Option<f64>; 2],
    ap_overall: Option<f64>,
    lists: &TaxonomyLists,
) -> AttributeStudyRow {
    let deo = GroupAp {
        overall: ap_overall,
        groups: ap.map(|g| g.map(|v| v / 100.0)),
    }
    .deo();
    AttributeStudyRow {
        attribute: attribute.to_string(),
        positive_rate,
        positive_rate_overall,
        ap,
        ap_overall,
        deo,
        taxonomy: lists.classify(attribute, deo),
    }
}

/// One row per non-protected annotation attribute. Positive rates come from
/// the annotations; APs come from predictions for the same ids.
pub fn attribute_study(
    ann: &AnnotationTable,
    pred: &PredictionTable,
    protected: &str,
    lists: &TaxonomyLists,
) -> Result<Vec<AttributeStudyRow>> {
    let pcol = ann.column(protected)?;
    let pred_ids: std::collections::HashSet<&str> = pred.rows().iter().map(|r| r.id.as_str()).collect();
    if let Some(missing) = ann.ids().iter().find(|id| !pred_ids.contains(id.as_str())) {
        return Err(Error::Format(format!(
            "predictions do not cover annotation id `{missing}`"
        )));
    }
    let mut totals = [0u64; 2];
    for row in ann.rows() {
        totals[usize::from(row[pcol])] += 1;
    }
    let mut out = Vec::new();
    for (col, name) in ann.attributes().iter().enumerate() {
        if col == pcol {
            continue;
        }
        let mut pos = [0u64; 2];
        for row in ann.rows() {
            pos[usize::from(row[pcol])] += u64::from(row[col]);
        }
        let rate = |p: u64, n: u64| if n == 0 { 0.0 } else { 100.0 * p as f64 / n as f64 };
        let (ap, ap_overall) = match pred.column(name) {
            Ok(_) => {
                let g = group_ap(pred, name, TieMode::Stable)?;
                (g.groups.map(|v| v.map(|x| 100.0 * x)), g.overall.map(|x| 100.0 * x))
            }
            Err(_) => ([None, None], None),
        };
        out.push(study_row(
            name,
            [rate(pos[0], totals[0]), rate(pos[1], totals[1])],
            rate(pos[0] + pos[1], totals[0] + totals[1]),
            ap,
            ap_overall,
            lists,
        ));
    }
    Ok(out)
}

/// Rejects a study request on the protected attribute itself.
pub fn check_study_target(protected: &str, attribute: &str) -> Result<()> {
    if protected == attribute {
        return Err(Error::InvalidConfig(format!(
            "`{attribute}` is the protected attribute, not an attribute of interest"
        )));
    }
    Ok(())
}

pub fn render_study(rows: &[AttributeStudyRow], group_names: [&str; 2]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6}  Type",
        "Attribute",
        format!("{}%", group_names[0]),
        format!("{}%", group_names[1]),
        "All%",
        format!("AP-{}", group_names[0]),
        format!("AP-{}", group_names[1]),
        "AP",
        "DEO",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<22} {:>8.1} {:>8.1} {:>8.1} {:>8} {:>8} {:>8} {:>6}  {:?}",
            r.attribute,
            r.positive_rate[0],
            r.positive_rate[1],
            r.positive_rate_overall,
            fmt_opt(r.ap[0], 1),
            fmt_opt(r.ap[1], 1),
            fmt_opt(r.ap_overall, 1),
            fmt_opt(r.deo, 1),
            r.taxonomy
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PredictionRow;

    #[test]
    fn taxonomy_cases() {
        let lists = TaxonomyLists::default();
        let blond = study_row(
            "Blond_Hair",
            [24.0, 2.0],
            13.0,
            [Some(92.6), Some(58.7)],
            Some(91.2),
            &lists,
        );
        assert!((blond.deo.unwrap() - 33.9).abs() < 0.05);
        assert_eq!(fmt_opt(blond.deo, 1), "33.9");
        assert_eq!(blond.taxonomy, Taxonomy::Aoi);

        let bangs = study_row("Bangs", [20.0, 8.0], 14.0, [Some(94.4), Some(89.6)], Some(93.4), &lists);
        assert_eq!(fmt_opt(bangs.deo, 1), "4.8");
        assert_eq!(bangs.taxonomy, Taxonomy::Unbiased);

        let shadow = study_row(
            "5_o_Clock_Shadow",
            [0.0, 27.0],
            13.5,
            [None, Some(82.1)],
            Some(82.1),
            &lists,
        );
        assert_eq!(shadow.deo, None);
        assert_eq!(fmt_opt(shadow.deo, 1), "-");
        assert_eq!(shadow.taxonomy, Taxonomy::Masculinity);

        let lip = study_row(
            "Wearing_Lipstick",
            [80.1, 1.0],
            40.6,
            [Some(99.0), Some(22.1)],
            Some(98.9),
            &lists,
        );
        assert_eq!(lip.taxonomy, Taxonomy::Femininity);
        assert_eq!(lists.classify("Blurry", Some(5.0)), Taxonomy::Aoi);
    }

    #[test]
    fn study_over_tables() {
        let ann = AnnotationTable::new(
            vec!["Male".into(), "Goatee".into(), "Smiling".into()],
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![vec![0, 0, 1], vec![0, 0, 0], vec![1, 1, 1], vec![1, 0, 0]],
        )
        .unwrap();
        let rows = ["a", "b", "c", "d"]
            .iter()
            .zip([
                (0, 0, 0.1, 1, 0.9),
                (0, 0, 0.2, 0, 0.3),
                (1, 1, 0.8, 1, 0.7),
                (1, 0, 0.3, 0, 0.2),
            ])
            .map(|(id, (g, l1, s1, l2, s2))| PredictionRow {
                id: id.to_string(),
                group: g,
                labels: vec![l1, l2],
                scores: vec![s1, s2],
                representation: None,
            })
            .collect();
        let pred = PredictionTable::new(vec!["Goatee".into(), "Smiling".into()], rows).unwrap();
        let study = attribute_study(&ann, &pred, "Male", &TaxonomyLists::default()).unwrap();
        assert_eq!(study.len(), 2);
        assert_eq!(study[0].attribute, "Goatee");
        assert_eq!(study[0].positive_rate, [0.0, 50.0]);
        assert_eq!(study[0].deo, None);
        assert_eq!(study[1].deo, Some(0.0));
        assert_eq!(study[1].taxonomy, Taxonomy::Unbiased);
        assert!(render_study(&study, ["Female", "Male"]).contains("Goatee"));
        assert!(attribute_study(&ann, &pred, "Sex", &TaxonomyLists::default()).is_err());
        assert!(check_study_target("Male", "Male").is_err());
    }
}
