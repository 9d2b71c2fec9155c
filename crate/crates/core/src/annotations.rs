//! Binary attribute annotation tables in the CelebA list layout.
//!
//! ```text
//! 202599                       <- optional row count
//! 5_o_Clock_Shadow Arched_Eyebrows ...
//! 000001.jpg -1  1  1 -1 ...
//! ```
//!
//! Values may be `-1/1` or `0/1`; both normalize to `0/1`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// The 40 attribute columns of CelebA, in file order.
pub const CELEBA_ATTRIBUTES: [&str; 40] = [
    "5_o_Clock_Shadow",
    "Arched_Eyebrows",
    "Attractive",
    "Bags_Under_Eyes",
    "Bald",
    "Bangs",
    "Big_Lips",
    "Big_Nose",
    "Black_Hair",
    "Blond_Hair",
    "Blurry",
    "Brown_Hair",
    "Bushy_Eyebrows",
    "Chubby",
    "Double_Chin",
    "Eyeglasses",
    "Goatee",
    "Gray_Hair",
    "Heavy_Makeup",
    "High_Cheekbones",
    "Male",
    "Mouth_Slightly_Open",
    "Mustache",
    "Narrow_Eyes",
    "No_Beard",
    "Oval_Face",
    "Pale_Skin",
    "Pointy_Nose",
    "Receding_Hairline",
    "Rosy_Cheeks",
    "Sideburns",
    "Smiling",
    "Straight_Hair",
    "Wavy_Hair",
    "Wearing_Earrings",
    "Wearing_Hat",
    "Wearing_Lipstick",
    "Wearing_Necklace",
    "Wearing_Necktie",
    "Young",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationTable {
    attributes: Vec<String>,
    ids: Vec<String>,
    rows: Vec<Vec<u8>>,
}

impl AnnotationTable {
    pub fn new(attributes: Vec<String>, ids: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for a in &attributes {
            if !seen.insert(a.as_str()) {
                return Err(Error::Format(format!("duplicate attribute `{a}`")));
            }
        }
        if ids.len() != rows.len() {
            return Err(Error::Format(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        let mut seen = HashSet::new();
        for (i, (id, row)) in ids.iter().zip(&rows).enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
            if row.len() != attributes.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("row `{id}` has {} values, expected {}", row.len(), attributes.len()),
                });
            }
            if let Some(v) = row.iter().find(|&&v| v > 1) {
                return Err(Error::NonBinary {
                    column: id.clone(),
                    value: v.to_string(),
                });
            }
        }
        Ok(Self { attributes, ids, rows })
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn value(&self, row: usize, col: usize) -> u8 {
        self.rows[row][col]
    }

    pub fn is_celeba_profile(&self) -> bool {
        self.attributes.iter().map(String::as_str).eq(CELEBA_ATTRIBUTES)
    }

    /// Rows restricted to `indices`, in that order. Duplicated indices get
    /// suffixed ids so the result stays a valid table.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut ids = Vec::with_capacity(indices.len());
        let mut rows = Vec::with_capacity(indices.len());
        for &i in indices {
            let row = self
                .rows
                .get(i)
                .ok_or_else(|| Error::Format(format!("row index {i} out of range")))?;
            let id = if seen.insert(i) {
                self.ids[i].clone()
            } else {
                format!("{}#{}", self.ids[i], ids.len())
            };
            ids.push(id);
            rows.push(row.clone());
        }
        Self::new(self.attributes.clone(), ids, rows)
    }
}

fn parse_value(tok: &str, column: &str, line: usize) -> Result<u8> {
    match tok {
        "1" | "+1" => Ok(1),
        "-1" | "0" => Ok(0),
        other => Err(Error::Parse {
            line,
            msg: format!("unknown token `{other}` in column `{column}`"),
        }),
    }
}

pub fn parse_annotations_str(src: &str) -> Result<AnnotationTable> {
    let mut lines = src
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (mut line_no, mut first) = lines.next().ok_or(Error::EmptyRequest("annotation file"))?;
    let mut declared = None;
    if let Ok(n) = first.parse::<usize>() {
        declared = Some(n);
        (line_no, first) = lines.next().ok_or_else(|| Error::Parse {
            line: line_no + 1,
            msg: "missing attribute header".into(),
        })?;
    }
    let attributes: Vec<String> = first.split_whitespace().map(str::to_string).collect();
    if attributes.is_empty() {
        return Err(Error::Parse {
            line: line_no,
            msg: "empty attribute header".into(),
        });
    }

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (line, text) in lines {
        let mut toks = text.split_whitespace();
        let id = toks.next().unwrap_or_default().to_string();
        let values: Vec<&str> = toks.collect();
        if values.len() != attributes.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} values, found {}", attributes.len(), values.len()),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let row = values
            .iter()
            .zip(&attributes)
            .map(|(t, a)| parse_value(t, a, line))
            .collect::<Result<Vec<_>>>()?;
        ids.push(id);
        rows.push(row);
    }
    if let Some(n) = declared {
        if n != rows.len() {
            return Err(Error::Format(format!("header declares {n} rows, found {}", rows.len())));
        }
    }
    log::info!(
        "parsed {} annotation rows over {} attributes",
        rows.len(),
        attributes.len()
    );
    AnnotationTable::new(attributes, ids, rows)
}

pub fn parse_annotations(path: &Path) -> Result<AnnotationTable> {
    parse_annotations_str(&fs::read_to_string(path)?)
}

/// Writes the CelebA layout with `-1/1` values.
pub fn write_annotations<W: Write>(table: &AnnotationTable, mut w: W) -> Result<()> {
    writeln!(w, "{}", table.len())?;
    writeln!(w, "{}", table.attributes.join(" "))?;
    for (id, row) in table.ids.iter().zip(&table.rows) {
        write!(w, "{id}")?;
        for &v in row {
            write!(w, " {}", if v == 1 { " 1" } else { "-1" })?;
        }
        writeln!(w)?;
    }
    Ok(())
}
