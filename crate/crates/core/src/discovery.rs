//! Attribute discovery in latent space.
//!
//! For an attribute `Y` with positive seeds `S_Y` and negative seeds `S_Ybar`,
//! each layer in the requested range gets a dimension mask
//!
//! * `A` (intra-class similarity): dims where every unordered pair of positive
//!   seeds differs by strictly less than `intra_threshold`;
//! * `B` (inter-class difference): dims where every (positive, negative) pair
//!   differs by strictly more than `inter_threshold`;
//! * `C = A ∪ B`, the attribute signature.
//!
//! Both intersections start from the full dimension set.

use std::collections::BTreeSet;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{abs_diff, LayerRange, LayeredLatent, SeedSet};

pub const DEFAULT_INTRA: f64 = 2.0 * SQRT_2;
pub const DEFAULT_INTER: f64 = SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub intra: f64,
    pub inter: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            intra: DEFAULT_INTRA,
            inter: DEFAULT_INTER,
        }
    }
}

impl Thresholds {
    pub fn new(intra: f64, inter: f64) -> Result<Self> {
        check_threshold(intra)?;
        check_threshold(inter)?;
        Ok(Self { intra, inter })
    }

    /// Names of thresholds outside `[√2, 2√2]`. Values there still work.
    pub fn out_of_recommended_range(&self) -> Vec<&'static str> {
        let range = SQRT_2 - 1e-9..=2.0 * SQRT_2 + 1e-9;
        let mut out = Vec::new();
        if !range.contains(&self.intra) {
            out.push("intra");
        }
        if !range.contains(&self.inter) {
            out.push("inter");
        }
        out
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::InvalidThreshold(format!("{t} (must be >= 0)")));
    }
    Ok(())
}

/// Sorted, duplicate-free set of dimension indices within one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionMask {
    pub layer: usize,
    pub dims: Vec<usize>,
}

impl DimensionMask {
    pub fn new(layer: usize, dims: impl IntoIterator<Item = usize>, k: usize) -> Result<Self> {
        let dims: BTreeSet<usize> = dims.into_iter().collect();
        if let Some(&d) = dims.iter().next_back() {
            if d >= k {
                return Err(Error::DimOutOfRange { dim: d, dims: k });
            }
        }
        Ok(Self {
            layer,
            dims: dims.into_iter().collect(),
        })
    }

    pub fn empty(layer: usize) -> Self {
        Self {
            layer,
            dims: Vec::new(),
        }
    }

    pub fn full(layer: usize, k: usize) -> Self {
        Self {
            layer,
            dims: (0..k).collect(),
        }
    }

    fn from_flags(layer: usize, flags: &[bool]) -> Self {
        Self {
            layer,
            dims: flags.iter().enumerate().filter_map(|(i, &f)| f.then_some(i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn contains(&self, dim: usize) -> bool {
        self.dims.binary_search(&dim).is_ok()
    }

    pub fn union(&self, other: &Self) -> Self {
        let set: BTreeSet<usize> = self.dims.iter().chain(&other.dims).copied().collect();
        Self {
            layer: self.layer,
            dims: set.into_iter().collect(),
        }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.dims.iter().all(|d| other.contains(*d))
    }
}

/// An executable attribute: which cells to copy, and where to copy them from.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSignature {
    pub label: String,
    pub layer_range: LayerRange,
    pub masks: Vec<DimensionMask>,
    pub donor_pool: SeedSet,
}

impl AttributeSignature {
    pub fn new(
        label: impl Into<String>,
        layer_range: LayerRange,
        masks: Vec<DimensionMask>,
        donor_pool: SeedSet,
    ) -> Result<Self> {
        let (layers, dims) = donor_pool.shape();
        layer_range.check(layers)?;
        let expected: Vec<usize> = layer_range.iter().collect();
        let got: Vec<usize> = masks.iter().map(|m| m.layer).collect();
        if expected != got {
            return Err(Error::InvalidConfig(format!(
                "masks cover layers {got:?}, range {layer_range} needs {expected:?}"
            )));
        }
        for m in &masks {
            if let Some(&d) = m.dims.last() {
                if d >= dims {
                    return Err(Error::DimOutOfRange { dim: d, dims });
                }
            }
        }
        Ok(Self {
            label: label.into(),
            layer_range,
            masks,
            donor_pool,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.donor_pool.shape()
    }

    /// All `(layer, dim)` cells the signature rewrites.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.masks
            .iter()
            .flat_map(|m| m.dims.iter().map(move |&d| (m.layer, d)))
    }

    pub fn cell_count(&self) -> usize {
        self.masks.iter().map(DimensionMask::len).sum()
    }
}

/// Per-layer sizes of `A`, `B` and `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub intra: usize,
    pub inter: usize,
    pub combined: usize,
}

#[derive(Debug, Clone)]
pub struct Discovery {
    pub signature: AttributeSignature,
    pub intra: Vec<DimensionMask>,
    pub inter: Vec<DimensionMask>,
    pub diagnostics: Vec<LayerDiagnostics>,
    pub warnings: Vec<String>,
}

fn compare_dims<F>(a: &LayeredLatent, b: &LayeredLatent, layer: usize, t: f64, keep: F) -> Result<DimensionMask>
where
    F: Fn(f64, f64) -> bool,
{
    a.check_same_shape(b)?;
    a.check_layer(layer)?;
    check_threshold(t)?;
    let dims = a
        .layer(layer)
        .iter()
        .zip(b.layer(layer))
        .enumerate()
        .filter_map(|(l, (&x, &y))| keep(abs_diff(x, y), t).then_some(l))
        .collect();
    Ok(DimensionMask { layer, dims })
}

/// Dims of `layer` where `|a - b| < t`.
pub fn pairwise_similar_dims(a: &LayeredLatent, b: &LayeredLatent, layer: usize, t: f64) -> Result<DimensionMask> {
    compare_dims(a, b, layer, t, |d, t| d < t)
}

/// Dims of `layer` where `|a - b| > t`.
pub fn pairwise_different_dims(a: &LayeredLatent, b: &LayeredLatent, layer: usize, t: f64) -> Result<DimensionMask> {
    compare_dims(a, b, layer, t, |d, t| d > t)
}

fn check_set_layer(set: &SeedSet, layer: usize) -> Result<()> {
    let (layers, _) = set.shape();
    if layer >= layers {
        return Err(Error::LayerOutOfRange { layer, layers });
    }
    Ok(())
}

/// Intersection of [`pairwise_similar_dims`] over all unordered pairs `i < j`.
pub fn intra_class_similarity(positives: &SeedSet, layer: usize, t: f64) -> Result<DimensionMask> {
    if positives.len() < 2 {
        return Err(Error::InsufficientSeeds {
            needed: 2,
            found: positives.len(),
        });
    }
    check_set_layer(positives, layer)?;
    check_threshold(t)?;
    let members = positives.members();
    let k = positives.shape().1;
    let mut keep = vec![true; k];
    for (i, a) in members.iter().enumerate() {
        let ra = a.layer(layer);
        for b in &members[i + 1..] {
            for ((flag, &x), &y) in keep.iter_mut().zip(ra).zip(b.layer(layer)) {
                *flag &= abs_diff(x, y) < t;
            }
        }
    }
    Ok(DimensionMask::from_flags(layer, &keep))
}

/// Intersection of [`pairwise_different_dims`] over all cross pairs
/// `(e_i ∈ positives, e_j ∈ negatives)`.
pub fn inter_class_difference(positives: &SeedSet, negatives: &SeedSet, layer: usize, t: f64) -> Result<DimensionMask> {
    if positives.shape() != negatives.shape() {
        return Err(Error::ShapeMismatch {
            expected: positives.shape(),
            found: negatives.shape(),
        });
    }
    check_set_layer(positives, layer)?;
    check_threshold(t)?;
    let k = positives.shape().1;
    let mut keep = vec![true; k];
    for a in positives.members() {
        let ra = a.layer(layer);
        for b in negatives.members() {
            for ((flag, &x), &y) in keep.iter_mut().zip(ra).zip(b.layer(layer)) {
                *flag &= abs_diff(x, y) > t;
            }
        }
    }
    Ok(DimensionMask::from_flags(layer, &keep))
}

/// Runs discovery independently on every layer of `layer_range`.
///
/// Empty signatures across the whole range and thresholds outside the
/// recommended range are reported in `warnings`, not as errors.
pub fn discover(
    positives: &SeedSet,
    negatives: &SeedSet,
    layer_range: LayerRange,
    th: Thresholds,
) -> Result<Discovery> {
    if positives.len() < 2 {
        return Err(Error::InsufficientSeeds {
            needed: 2,
            found: positives.len(),
        });
    }
    check_threshold(th.intra)?;
    check_threshold(th.inter)?;
    layer_range.check(positives.shape().0)?;

    let mut intra = Vec::with_capacity(layer_range.len());
    let mut inter = Vec::with_capacity(layer_range.len());
    let mut masks = Vec::with_capacity(layer_range.len());
    let mut diagnostics = Vec::with_capacity(layer_range.len());
    for layer in layer_range.iter() {
        let a = intra_class_similarity(positives, layer, th.intra)?;
        let b = inter_class_difference(positives, negatives, layer, th.inter)?;
        let c = a.union(&b);
        diagnostics.push(LayerDiagnostics {
            layer,
            intra: a.len(),
            inter: b.len(),
            combined: c.len(),
        });
        intra.push(a);
        inter.push(b);
        masks.push(c);
    }

    let mut warnings = Vec::new();
    let off = th.out_of_recommended_range();
    if !off.is_empty() {
        warnings.push(format!(
            "threshold(s) {} outside recommended range [√2, 2√2]",
            off.join(", ")
        ));
    }
    if masks.iter().all(DimensionMask::is_empty) {
        warnings.push(format!(
            "signature `{}` is empty on every layer of {layer_range}",
            positives.label()
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let signature = AttributeSignature::new(positives.label(), layer_range, masks, positives.clone())?;
    Ok(Discovery {
        signature,
        intra,
        inter,
        diagnostics,
        warnings,
    })
}
