//! Count tables over protected group x attribute label, the fairness
//! criteria as count equalities, and balance plans that satisfy them.
//!
//! Groups are the values `0` and `1` of the protected attribute column. For
//! every attribute `Y` the planner targets
//!
//! * equal opportunity: `n(0, Y) = n(1, Y)`,
//! * equalized odds: additionally `n(0, not Y) = n(1, not Y)`,
//! * demographic parity: equal group totals.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::AnnotationTable;
use crate::error::{Error, Result};
use crate::synthesis::{check_exclusive, SignatureRegistry};

pub const PLAN_VERSION: u32 = 1;
/// Largest attribute count for joint (cross-product) planning.
pub const MAX_JOINT_ATTRIBUTES: usize = 3;

/// Label counts per group, indexed by group value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupCounts {
    pub positive: [u64; 2],
    pub negative: [u64; 2],
}

impl GroupCounts {
    /// From `(n(z, Y), n(z, not Y), n(other, Y), n(other, not Y))`.
    pub fn from_tuple(z: u8, (zp, zn, op, on): (u64, u64, u64, u64)) -> Self {
        let mut c = GroupCounts::default();
        let (z, o) = (usize::from(z), usize::from(1 - z));
        c.positive[z] = zp;
        c.negative[z] = zn;
        c.positive[o] = op;
        c.negative[o] = on;
        c
    }

    pub fn as_tuple(&self, z: u8) -> (u64, u64, u64, u64) {
        let (z, o) = (usize::from(z), usize::from(1 - z));
        (self.positive[z], self.negative[z], self.positive[o], self.negative[o])
    }

    pub fn totals(&self) -> [u64; 2] {
        [self.positive[0] + self.negative[0], self.positive[1] + self.negative[1]]
    }

    fn cell_mut(&mut self, group: u8, value: u8) -> &mut u64 {
        let g = usize::from(group);
        if value == 1 {
            &mut self.positive[g]
        } else {
            &mut self.negative[g]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    pub protected: String,
    pub group_totals: [u64; 2],
    pub attributes: BTreeMap<String, GroupCounts>,
}

impl CountTable {
    pub fn new(protected: impl Into<String>, group_totals: [u64; 2]) -> Self {
        Self {
            protected: protected.into(),
            group_totals,
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attribute(mut self, name: impl Into<String>, counts: GroupCounts) -> Self {
        self.attributes.insert(name.into(), counts);
        self
    }

    /// Every attribute's per-group row sums equal the group totals.
    pub fn validate(&self) -> Result<()> {
        for (name, c) in &self.attributes {
            if c.totals() != self.group_totals {
                return Err(Error::InvalidConfig(format!(
                    "attribute `{name}` sums to {:?}, group totals are {:?}",
                    c.totals(),
                    self.group_totals
                )));
            }
        }
        Ok(())
    }
}

/// Exact 2x2 counts per attribute of interest.
pub fn tabulate_counts(ann: &AnnotationTable, protected: &str, aoi: &[String]) -> Result<CountTable> {
    let pcol = ann.column(protected)?;
    let cols = aoi
        .iter()
        .map(|a| {
            if a == protected {
                Err(Error::InvalidConfig(format!("`{a}` is the protected attribute")))
            } else {
                ann.column(a)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ct = CountTable::new(protected, [0, 0]);
    let mut counts = vec![GroupCounts::default(); aoi.len()];
    for row in ann.rows() {
        let g = row[pcol];
        ct.group_totals[usize::from(g)] += 1;
        for (c, &col) in counts.iter_mut().zip(&cols) {
            *c.cell_mut(g, row[col]) += 1;
        }
    }
    ct.attributes = aoi.iter().cloned().zip(counts).collect();
    Ok(ct)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeCriteria {
    pub dp_ok: bool,
    pub eo_ok: bool,
    pub eodds_ok: bool,
    /// `n(0, Y) - n(1, Y)`.
    pub positive_gap: i64,
    /// `n(0, not Y) - n(1, not Y)`.
    pub negative_gap: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub group_dp_ok: bool,
    pub group_gap: i64,
    pub attributes: BTreeMap<String, AttributeCriteria>,
}

impl CriteriaReport {
    pub fn all_eodds(&self) -> bool {
        self.attributes.values().all(|c| c.eodds_ok)
    }
}

fn gap(a: u64, b: u64) -> i64 {
    a as i64 - b as i64
}

pub fn check_criteria(ct: &CountTable) -> CriteriaReport {
    let attributes = ct
        .attributes
        .iter()
        .map(|(name, c)| {
            let totals = c.totals();
            let eo_ok = c.positive[0] == c.positive[1];
            let crit = AttributeCriteria {
                dp_ok: totals[0] == totals[1],
                eo_ok,
                eodds_ok: eo_ok && c.negative[0] == c.negative[1],
                positive_gap: gap(c.positive[0], c.positive[1]),
                negative_gap: gap(c.negative[0], c.negative[1]),
            };
            (name.clone(), crit)
        })
        .collect();
    CriteriaReport {
        group_dp_ok: ct.group_totals[0] == ct.group_totals[1],
        group_gap: gap(ct.group_totals[0], ct.group_totals[1]),
        attributes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Supplement,
    SameSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStrategy {
    /// One cell family per attribute; each attribute is balanced on its own.
    #[default]
    Marginal,
    /// Cells over the full assignment of up to three attributes.
    Joint,
}

/// A synthesis request: `count` samples of `group` with `assignments`.
/// Empty assignments mean identity-level samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanCell {
    pub group: u8,
    pub assignments: BTreeMap<String, u8>,
    pub count: u64,
}

/// Original rows kept, as sorted row indices per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetainedOriginal {
    pub groups: [Vec<usize>; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub version: u32,
    pub mode: PlanMode,
    pub protected: String,
    pub cells: Vec<PlanCell>,
    pub retained_original: Option<RetainedOriginal>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl BalancePlan {
    pub fn total_count(&self) -> u64 {
        self.cells.iter().map(|c| c.count).sum()
    }

    pub fn group_counts(&self) -> [u64; 2] {
        let mut out = [0, 0];
        for c in &self.cells {
            out[usize::from(c.group)] += c.count;
        }
        out
    }

    fn push(&mut self, group: u8, assignments: BTreeMap<String, u8>, count: u64) {
        if count > 0 {
            self.cells.push(PlanCell {
                group,
                assignments,
                count,
            });
        }
    }
}

fn empty_plan(mode: PlanMode, protected: &str) -> BalancePlan {
    BalancePlan {
        version: PLAN_VERSION,
        mode,
        protected: protected.to_string(),
        cells: Vec::new(),
        retained_original: None,
        notes: Vec::new(),
    }
}

/// Smaller group gets `|a - b|` samples; `None` when already equal.
fn deficit(counts: [u64; 2]) -> Option<(u8, u64)> {
    match counts[0].cmp(&counts[1]) {
        std::cmp::Ordering::Less => Some((0, counts[1] - counts[0])),
        std::cmp::Ordering::Greater => Some((1, counts[0] - counts[1])),
        std::cmp::Ordering::Equal => None,
    }
}

/// Supplement-only plan over marginal attributes. Nothing is removed.
///
/// Each attribute's smaller `Y` and `not Y` cells are topped up to match the
/// other group. A final identity-level cell equalizes group totals when the
/// per-attribute additions leave them unequal (always the case with no
/// attributes of interest).
pub fn plan_supplement(ct: &CountTable) -> BalancePlan {
    let mut plan = empty_plan(PlanMode::Supplement, &ct.protected);
    for (name, c) in &ct.attributes {
        for (value, counts) in [(1u8, c.positive), (0u8, c.negative)] {
            if let Some((group, n)) = deficit(counts) {
                plan.push(group, BTreeMap::from([(name.clone(), value)]), n);
            }
        }
    }
    let added = plan.group_counts();
    let after = [ct.group_totals[0] + added[0], ct.group_totals[1] + added[1]];
    if let Some((group, n)) = deficit(after) {
        plan.push(group, BTreeMap::new(), n);
    }
    plan
}

/// Applies a plan's synthetic cells to a count table.
///
/// Every cell adds to its group's total; a cell adds to an attribute's 2x2
/// only when it assigns that attribute. Retained-original selections are not
/// represented in a count table; use [`apply_plan_to_rows`] for those plans.
pub fn apply_plan(ct: &CountTable, plan: &BalancePlan) -> CountTable {
    let mut out = ct.clone();
    for cell in &plan.cells {
        out.group_totals[usize::from(cell.group)] += cell.count;
        for (attr, &value) in &cell.assignments {
            if let Some(c) = out.attributes.get_mut(attr) {
                *c.cell_mut(cell.group, value) += cell.count;
            }
        }
    }
    out
}

/// Counts of the retained original rows (all rows when the plan retains
/// everything) plus the plan's synthetic cells.
pub fn apply_plan_to_rows(ann: &AnnotationTable, aoi: &[String], plan: &BalancePlan) -> Result<CountTable> {
    let base = match &plan.retained_original {
        Some(r) => {
            let idx: Vec<usize> = r.groups.iter().flatten().copied().collect();
            tabulate_counts(&ann.select(&idx)?, &plan.protected, aoi)?
        }
        None => tabulate_counts(ann, &plan.protected, aoi)?,
    };
    Ok(apply_plan(&base, plan))
}

/// Counts over the joint assignment of up to three attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointCounts {
    pub protected: String,
    pub attributes: Vec<String>,
    /// Keyed by the attribute values in `attributes` order.
    pub counts: BTreeMap<Vec<u8>, [u64; 2]>,
}

impl JointCounts {
    fn assignment(&self, key: &[u8]) -> BTreeMap<String, u8> {
        self.attributes.iter().cloned().zip(key.iter().copied()).collect()
    }
}

fn all_keys(m: usize) -> Vec<Vec<u8>> {
    (0..1u32 << m)
        .map(|bits| (0..m).map(|i| ((bits >> (m - 1 - i)) & 1) as u8).collect())
        .collect()
}

fn joint_columns(ann: &AnnotationTable, protected: &str, aoi: &[String]) -> Result<(usize, Vec<usize>)> {
    if aoi.len() > MAX_JOINT_ATTRIBUTES {
        return Err(Error::InvalidConfig(format!(
            "joint planning supports at most {MAX_JOINT_ATTRIBUTES} attributes, got {}",
            aoi.len()
        )));
    }
    let pcol = ann.column(protected)?;
    let cols = aoi
        .iter()
        .map(|a| {
            if a == protected {
                Err(Error::InvalidConfig(format!("`{a}` is the protected attribute")))
            } else {
                ann.column(a)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pcol, cols))
}

fn joint_over_rows<'a>(
    rows: impl Iterator<Item = &'a Vec<u8>>,
    protected: &str,
    aoi: &[String],
    pcol: usize,
    cols: &[usize],
) -> JointCounts {
    let mut counts: BTreeMap<Vec<u8>, [u64; 2]> = all_keys(aoi.len()).into_iter().map(|k| (k, [0, 0])).collect();
    for row in rows {
        let key: Vec<u8> = cols.iter().map(|&c| row[c]).collect();
        counts.get_mut(&key).expect("all keys present")[usize::from(row[pcol])] += 1;
    }
    JointCounts {
        protected: protected.to_string(),
        attributes: aoi.to_vec(),
        counts,
    }
}

pub fn tabulate_joint(ann: &AnnotationTable, protected: &str, aoi: &[String]) -> Result<JointCounts> {
    let (pcol, cols) = joint_columns(ann, protected, aoi)?;
    Ok(joint_over_rows(ann.rows().iter(), protected, aoi, pcol, &cols))
}

/// Supplement plan over joint cells. Joint cells that set two members of an
/// exclusive family are never emitted; their unresolved gaps go to `notes`.
pub fn plan_joint_supplement(jt: &JointCounts, families: &[Vec<String>]) -> BalancePlan {
    let mut plan = empty_plan(PlanMode::Supplement, &jt.protected);
    for (key, &counts) in &jt.counts {
        let assignment = jt.assignment(key);
        if let Some((group, n)) = deficit(counts) {
            if let Err(e) = check_exclusive(families, &assignment) {
                plan.notes
                    .push(format!("skipped joint cell {assignment:?} (gap {n}): {e}"));
                continue;
            }
            plan.push(group, assignment, n);
        }
    }
    plan
}

/// Largest-remainder apportionment of `total` by `weights`; ties go to the
/// earlier index. All-zero weights split evenly.
fn apportion(total: u64, weights: &[u64]) -> Vec<u64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: u64 = weights.iter().sum();
    let weights: Vec<u64> = if sum == 0 {
        vec![1; weights.len()]
    } else {
        weights.to_vec()
    };
    let sum: u128 = weights.iter().map(|&w| u128::from(w)).sum();
    let mut out: Vec<u64> = Vec::with_capacity(weights.len());
    let mut rems: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let q = u128::from(total) * u128::from(w);
        out.push((q / sum) as u64);
        rems.push((q % sum, i));
    }
    let mut left = total - out.iter().sum::<u64>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in rems {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Same-size plan: keep a uniformly sampled half of the group-balanced
/// original, then fill joint cells with synthetic samples so each group ends
/// at the balanced group size `m` with identical joint counts.
///
/// Final joint counts start at the larger retained count of each cell; the
/// remaining `m - sum` slots are apportioned by the original joint frequency.
pub fn plan_same_size(
    ann: &AnnotationTable,
    protected: &str,
    aoi: &[String],
    families: &[Vec<String>],
    rng_seed: u64,
) -> Result<BalancePlan> {
    let (pcol, cols) = joint_columns(ann, protected, aoi)?;
    let by_group = group_indices(ann, pcol);
    let m = by_group[0].len().min(by_group[1].len());
    if m == 0 {
        return Err(Error::EmptyGroup(format!("`{protected}` has an empty group")));
    }
    let half = m / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let retained: [Vec<usize>; 2] = [0, 1].map(|g| {
        let mut pick: Vec<usize> = sample(&mut rng, by_group[g].len(), half)
            .into_iter()
            .map(|i| by_group[g][i])
            .collect();
        pick.sort_unstable();
        pick
    });

    let kept = joint_over_rows(
        retained.iter().flatten().map(|&i| &ann.rows()[i]),
        protected,
        aoi,
        pcol,
        &cols,
    );
    let full = joint_over_rows(ann.rows().iter(), protected, aoi, pcol, &cols);

    let keys: Vec<&Vec<u8>> = kept.counts.keys().collect();
    let allowed: Vec<bool> = keys
        .iter()
        .map(|k| check_exclusive(families, &kept.assignment(k)).is_ok())
        .collect();
    let base: Vec<u64> = keys
        .iter()
        .map(|k| kept.counts[*k].iter().copied().max().unwrap_or(0))
        .collect();
    let weights: Vec<u64> = keys
        .iter()
        .zip(&allowed)
        .map(|(k, &ok)| if ok { full.counts[*k][0] + full.counts[*k][1] } else { 0 })
        .collect();
    let base_sum: u64 = base.iter().sum();
    let extra = apportion(m as u64 - base_sum, &weights);

    let mut plan = empty_plan(PlanMode::SameSize, protected);
    for (i, key) in keys.iter().enumerate() {
        let target = base[i] + extra[i];
        let assignment = kept.assignment(key);
        for g in 0..2u8 {
            let need = target - kept.counts[*key][usize::from(g)];
            if need > 0 && !allowed[i] {
                plan.notes.push(format!(
                    "joint cell {assignment:?} group {g} short by {need}: exclusive family"
                ));
                continue;
            }
            plan.push(g, assignment.clone(), need);
        }
    }
    plan.retained_original = Some(RetainedOriginal { groups: retained });
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub protected: String,
    pub aoi: Vec<String>,
    pub mode: PlanMode,
    pub strategy: PlanStrategy,
    pub families: Vec<Vec<String>>,
    pub rng_seed: u64,
}

/// Chooses the planner for a request.
///
/// Joint planning merges attributes into one cell only when the registry (if
/// given) shows their signatures are disjoint; otherwise supplement plans fall
/// back to marginal and same-size plans fail.
pub fn plan_balance(
    ann: &AnnotationTable,
    req: &PlanRequest,
    registry: Option<&SignatureRegistry>,
) -> Result<BalancePlan> {
    let names: Vec<&str> = req.aoi.iter().map(String::as_str).collect();
    let disjoint = registry.is_none_or(|r| r.attributes_disjoint(&names));
    match (req.mode, req.strategy) {
        (PlanMode::Supplement, PlanStrategy::Marginal) => {
            Ok(plan_supplement(&tabulate_counts(ann, &req.protected, &req.aoi)?))
        }
        (PlanMode::Supplement, PlanStrategy::Joint) => {
            if disjoint {
                Ok(plan_joint_supplement(
                    &tabulate_joint(ann, &req.protected, &req.aoi)?,
                    &req.families,
                ))
            } else {
                let mut plan = plan_supplement(&tabulate_counts(ann, &req.protected, &req.aoi)?);
                plan.notes
                    .push("signatures overlap; attributes planned independently".into());
                Ok(plan)
            }
        }
        (PlanMode::SameSize, _) => {
            if !disjoint {
                return Err(Error::InvalidConfig(
                    "same-size planning needs cell-disjoint signatures for all attributes".into(),
                ));
            }
            plan_same_size(ann, &req.protected, &req.aoi, &req.families, req.rng_seed)
        }
    }
}

fn group_indices(ann: &AnnotationTable, pcol: usize) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, row) in ann.rows().iter().enumerate() {
        out[usize::from(row[pcol])].push(i);
    }
    out
}

/// Group-level resampling: keep every minority row and a uniform seeded
/// subsample of the majority group of the same size.
pub fn resampling_baseline(ann: &AnnotationTable, protected: &str, rng_seed: u64) -> Result<RetainedOriginal> {
    let pcol = ann.column(protected)?;
    let by_group = group_indices(ann, pcol);
    for (g, rows) in by_group.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::EmptyGroup(format!("`{protected}` group {g} has no rows")));
        }
    }
    let m = by_group[0].len().min(by_group[1].len());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let groups = by_group.map(|rows| {
        if rows.len() == m {
            rows
        } else {
            let mut pick: Vec<usize> = sample(&mut rng, rows.len(), m).into_iter().map(|i| rows[i]).collect();
            pick.sort_unstable();
            pick
        }
    });
    Ok(RetainedOriginal { groups })
}
