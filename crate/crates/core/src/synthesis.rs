//! Attribute assignment and labeled sample synthesis.
//!
//! An identity latent receives attribute `Y` by copying, on every
//! `(layer, dim)` cell of the signature, the value of a donor drawn from the
//! signature's donor pool. The resulting label comes from the signature, not
//! from a classifier.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::balance::{BalancePlan, PlanCell};
use crate::discovery::AttributeSignature;
use crate::error::{Error, Result};
use crate::latent::{LayerRange, LayeredLatent, Polarity, SeedSet};

/// Stand-in for a rendered image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageVector(pub Vec<f64>);

impl ImageVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A deterministic map from latent codes to images.
pub trait Generator: Sync {
    fn shape(&self) -> (usize, usize);
    fn output_dim(&self) -> usize;
    fn render(&self, latent: &LayeredLatent) -> Result<ImageVector>;
}

/// Value a signature assigns: its donor pool's polarity.
pub fn signature_value(sig: &AttributeSignature) -> u8 {
    u8::from(sig.donor_pool.polarity() == Polarity::Positive)
}

/// Copies the donor's values onto `identity` at every signature cell.
pub fn apply_attribute(
    identity: &LayeredLatent,
    sig: &AttributeSignature,
    donor: &LayeredLatent,
) -> Result<LayeredLatent> {
    identity.check_same_shape(donor)?;
    if identity.shape() != sig.shape() {
        return Err(Error::ShapeMismatch {
            expected: sig.shape(),
            found: identity.shape(),
        });
    }
    if !sig.donor_pool.members().iter().any(|m| m == donor) {
        return Err(Error::InvalidConfig(format!(
            "donor is not a member of the `{}` donor pool",
            sig.label
        )));
    }
    Ok(copy_cells(identity, sig, donor))
}

fn copy_cells(identity: &LayeredLatent, sig: &AttributeSignature, donor: &LayeredLatent) -> LayeredLatent {
    let mut out = identity.clone();
    for (layer, dim) in sig.cells() {
        out.set(layer, dim, donor.get(layer, dim));
    }
    out
}

/// Fails with every shared `(layer, dim)` cell if any two signatures overlap.
pub fn check_disjoint(sigs: &[&AttributeSignature]) -> Result<()> {
    let mut owner: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut shared = BTreeSet::new();
    for (i, sig) in sigs.iter().enumerate() {
        for cell in sig.cells() {
            if let Some(&j) = owner.get(&cell) {
                if j != i {
                    shared.insert(cell);
                }
            } else {
                owner.insert(cell, i);
            }
        }
    }
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::MaskConflict {
            cells: shared.into_iter().collect(),
        })
    }
}

/// Applies several signatures in sequence. Their cells must be disjoint, which
/// makes the result independent of order.
pub fn apply_attributes(
    identity: &LayeredLatent,
    sigs: &[&AttributeSignature],
    donors: &[&LayeredLatent],
) -> Result<LayeredLatent> {
    if sigs.len() != donors.len() {
        return Err(Error::InvalidConfig(format!(
            "{} signatures but {} donors",
            sigs.len(),
            donors.len()
        )));
    }
    check_disjoint(sigs)?;
    let mut out = identity.clone();
    for (sig, donor) in sigs.iter().zip(donors) {
        out = apply_attribute(&out, sig, donor)?;
    }
    Ok(out)
}

/// Signatures keyed by `(attribute, assigned value)`, plus mutually exclusive
/// attribute families.
#[derive(Debug, Clone, Default)]
pub struct SignatureRegistry {
    entries: BTreeMap<(String, u8), AttributeSignature>,
    families: Vec<Vec<String>>,
}

impl SignatureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_families(families: Vec<Vec<String>>) -> Self {
        Self {
            entries: BTreeMap::new(),
            families,
        }
    }

    pub fn insert(&mut self, sig: AttributeSignature) -> Result<()> {
        if let Some(existing) = self.entries.values().next() {
            if existing.shape() != sig.shape() {
                return Err(Error::ShapeMismatch {
                    expected: existing.shape(),
                    found: sig.shape(),
                });
            }
        }
        let key = (sig.label.clone(), signature_value(&sig));
        self.entries.insert(key, sig);
        Ok(())
    }

    pub fn get(&self, attribute: &str, value: u8) -> Option<&AttributeSignature> {
        self.entries.get(&(attribute.to_string(), value))
    }

    pub fn families(&self) -> &[Vec<String>] {
        &self.families
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.entries.values().next().map(AttributeSignature::shape)
    }

    /// True when every registered signature of one attribute is cell-disjoint
    /// from every registered signature of each other attribute.
    pub fn attributes_disjoint(&self, attributes: &[&str]) -> bool {
        let sigs: Vec<Vec<&AttributeSignature>> = attributes
            .iter()
            .map(|a| (0..=1).filter_map(|v| self.get(a, v)).collect())
            .collect();
        for i in 0..sigs.len() {
            for j in i + 1..sigs.len() {
                for a in &sigs[i] {
                    for b in &sigs[j] {
                        if check_disjoint(&[a, b]).is_err() {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Rejects assignments that set two members of one exclusive family to 1.
    pub fn check_exclusive(&self, assignments: &BTreeMap<String, u8>) -> Result<()> {
        check_exclusive(&self.families, assignments)
    }
}

pub(crate) fn check_exclusive(families: &[Vec<String>], assignments: &BTreeMap<String, u8>) -> Result<()> {
    for family in families {
        let on: Vec<&String> = family
            .iter()
            .filter(|a| assignments.get(a.as_str()) == Some(&1))
            .collect();
        if on.len() > 1 {
            return Err(Error::ExclusiveConflict(on[0].clone(), on[1].clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub latent: LayeredLatent,
    pub image: ImageVector,
    pub labels: BTreeMap<String, u8>,
    pub protected: u8,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityMode {
    /// A fresh identity seed for every sample.
    #[default]
    Independent,
    /// Cells that differ only in protected group share identity seeds by
    /// sample position, producing paired images.
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub rng_seed: u64,
    pub identity_mode: IdentityMode,
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ tag).wrapping_add(index)))
}

const TAG_IDENTITY: u64 = 0x1D;
const TAG_DONOR: u64 = 0xD0;

fn resolve_cell<'a>(
    cell: &PlanCell,
    protected: &str,
    registry: &'a SignatureRegistry,
) -> Result<Vec<&'a AttributeSignature>> {
    registry.check_exclusive(&cell.assignments)?;
    let mut sigs = Vec::with_capacity(cell.assignments.len() + 1);
    let protected_sig = registry
        .get(protected, cell.group)
        .ok_or_else(|| Error::UnknownSignature(format!("{protected}={}", cell.group)))?;
    sigs.push(protected_sig);
    for (attr, &value) in &cell.assignments {
        let sig = registry
            .get(attr, value)
            .ok_or_else(|| Error::UnknownSignature(format!("{attr}={value}")))?;
        sigs.push(sig);
    }
    check_disjoint(&sigs)?;
    Ok(sigs)
}

/// Renders exactly `count` labeled samples for every plan cell.
///
/// Each sample's identity and donor choice come from rng streams derived from
/// `(rng_seed, sample index)`, so output does not depend on scheduling.
/// Every cell is resolved before any sample is generated.
pub fn synthesize_batch(
    plan: &BalancePlan,
    registry: &SignatureRegistry,
    generator: &dyn Generator,
    opts: SynthesisOptions,
) -> Result<Vec<LabeledSample>> {
    let resolved = plan
        .cells
        .iter()
        .map(|c| resolve_cell(c, &plan.protected, registry))
        .collect::<Result<Vec<_>>>()?;
    if let Some(shape) = registry.shape() {
        if shape != generator.shape() {
            return Err(Error::ShapeMismatch {
                expected: generator.shape(),
                found: shape,
            });
        }
    }
    let (layers, dims) = generator.shape();

    let mut out = Vec::with_capacity(plan.total_count() as usize);
    let mut index = 0u64;
    for (cell, sigs) in plan.cells.iter().zip(&resolved) {
        let pair_key = fnv1a(serde_json::to_string(&cell.assignments)?.into_bytes());
        for j in 0..cell.count {
            let mut id_rng = match opts.identity_mode {
                IdentityMode::Independent => stream(opts.rng_seed, TAG_IDENTITY, index),
                IdentityMode::Paired => stream(opts.rng_seed, TAG_IDENTITY ^ pair_key, j),
            };
            let identity = LayeredLatent::sample(layers, dims, &mut id_rng);
            let mut donor_rng = stream(opts.rng_seed, TAG_DONOR, index);
            let donors: Vec<&LayeredLatent> = sigs
                .iter()
                .map(|s| {
                    let pool = s.donor_pool.members();
                    &pool[donor_rng.random_range(0..pool.len())]
                })
                .collect();
            let mut latent = identity;
            for (sig, donor) in sigs.iter().zip(&donors) {
                latent = copy_cells(&latent, sig, donor);
            }
            let image = generator.render(&latent)?;
            out.push(LabeledSample {
                id: format!("syn-{index:08}"),
                latent,
                image,
                labels: cell.assignments.clone(),
                protected: cell.group,
                provenance: Provenance::Synthetic,
            });
            index += 1;
        }
    }
    Ok(out)
}

/// One attribute of the toy generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyAttribute {
    pub name: String,
    pub control_dims: Vec<usize>,
    pub control_layers: LayerRange,
    /// Mean of the control cells in positive seeds (negatives use `-shift`).
    pub shift: f64,
    /// Standard deviation of control cells around `±shift`.
    pub jitter: f64,
    /// Oracle decision threshold on the pooled feature.
    pub threshold: f64,
}

impl ToyAttribute {
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.control_layers
            .iter()
            .flat_map(move |r| self.control_dims.iter().map(move |&d| (r, d)))
    }
}

/// A generator with known ground truth: feature `a` is the mean of the latent
/// over attribute `a`'s control cells, plus noise of amplitude `noise`.
/// `mixing_features` extra outputs are fixed random linear mixtures of the
/// whole latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGeneratorSpec {
    pub layers: usize,
    pub dims: usize,
    pub attributes: Vec<ToyAttribute>,
    pub noise: f64,
    pub mixing_features: usize,
    pub seed: u64,
}

impl ToyGeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dims == 0 {
            return Err(Error::InvalidConfig("toy generator shape must be nonzero".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise {} must be >= 0", self.noise)));
        }
        let mut owner: BTreeMap<(usize, usize), &str> = BTreeMap::new();
        let mut names = BTreeSet::new();
        for a in &self.attributes {
            if !names.insert(a.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate toy attribute `{}`", a.name)));
            }
            a.control_layers.check(self.layers)?;
            if a.control_dims.is_empty() {
                return Err(Error::InvalidConfig(format!("`{}` has no control dims", a.name)));
            }
            if let Some(&d) = a.control_dims.iter().find(|&&d| d >= self.dims) {
                return Err(Error::DimOutOfRange {
                    dim: d,
                    dims: self.dims,
                });
            }
            if !(a.shift > a.threshold && a.threshold > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "`{}` needs shift > threshold > 0, got shift={} threshold={}",
                    a.name, a.shift, a.threshold
                )));
            }
            if !(a.jitter >= 0.0 && a.jitter.is_finite()) {
                return Err(Error::InvalidConfig(format!("`{}` jitter must be >= 0", a.name)));
            }
            for cell in a.cells() {
                if let Some(other) = owner.insert(cell, &a.name) {
                    if other != a.name {
                        return Err(Error::InvalidConfig(format!(
                            "`{other}` and `{}` share control cell {cell:?}",
                            a.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn attribute(&self, name: &str) -> Option<&ToyAttribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct ToyGenerator {
    spec: ToyGeneratorSpec,
    weights: Vec<Vec<f64>>,
}

impl ToyGenerator {
    pub fn new(spec: ToyGeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(spec.seed, 0x31, 0);
        let n = spec.layers * spec.dims;
        let scale = 1.0 / (n as f64).sqrt();
        let weights = (0..spec.mixing_features)
            .map(|_| (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Ok(Self { spec, weights })
    }

    pub fn spec(&self) -> &ToyGeneratorSpec {
        &self.spec
    }

    /// Seeds for one attribute: N(0, 1) everywhere except the control cells,
    /// which sit at `±shift` with `jitter` spread.
    pub fn attribute_seeds<R: Rng + ?Sized>(
        &self,
        name: &str,
        polarity: Polarity,
        n: usize,
        rng: &mut R,
    ) -> Result<SeedSet> {
        let attr = self
            .spec
            .attribute(name)
            .ok_or_else(|| Error::UnknownSignature(name.to_string()))?;
        let centre = match polarity {
            Polarity::Positive => attr.shift,
            Polarity::Negative => -attr.shift,
        };
        let members = (0..n)
            .map(|_| {
                let mut m = LayeredLatent::sample(self.spec.layers, self.spec.dims, rng);
                for (r, d) in attr.cells() {
                    let jitter: f64 = rng.sample(StandardNormal);
                    m.set(r, d, (centre + attr.jitter * jitter) as f32);
                }
                m
            })
            .collect();
        SeedSet::new(name, polarity, members)
    }
}

impl Generator for ToyGenerator {
    fn shape(&self) -> (usize, usize) {
        (self.spec.layers, self.spec.dims)
    }

    fn output_dim(&self) -> usize {
        self.spec.attributes.len() + self.spec.mixing_features
    }

    fn render(&self, latent: &LayeredLatent) -> Result<ImageVector> {
        if latent.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: latent.shape(),
            });
        }
        // Noise is a function of the latent bits so rendering stays deterministic.
        let key = fnv1a(latent.values().iter().flat_map(|v| v.to_bits().to_le_bytes()));
        let mut rng = stream(self.spec.seed, key, 1);
        let mut features = Vec::with_capacity(self.output_dim());
        for a in &self.spec.attributes {
            let (sum, n) = a
                .cells()
                .fold((0.0, 0usize), |(s, n), (r, d)| (s + f64::from(latent.get(r, d)), n + 1));
            let eps: f64 = rng.sample(StandardNormal);
            features.push(sum / n as f64 + self.spec.noise * eps);
        }
        for w in &self.weights {
            features.push(w.iter().zip(latent.values()).map(|(w, &x)| w * f64::from(x)).sum());
        }
        Ok(ImageVector(features))
    }
}

pub fn toy_render(latent: &LayeredLatent, spec: &ToyGeneratorSpec) -> Result<ImageVector> {
    ToyGenerator::new(spec.clone())?.render(latent)
}

/// Ground-truth labels: attribute `a` is 1 iff its feature exceeds its threshold.
pub fn oracle_annotate(image: &ImageVector, spec: &ToyGeneratorSpec) -> BTreeMap<String, u8> {
    spec.attributes
        .iter()
        .zip(&image.0)
        .map(|(a, &f)| (a.name.clone(), u8::from(f > a.threshold)))
        .collect()
}

/// One line of the synthetic dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: u64,
    pub id: String,
    pub provenance: Provenance,
    pub protected: String,
    pub group: u8,
    pub labels: BTreeMap<String, u8>,
    /// Byte offset of this sample's latent in the latent blob (f32 LE).
    pub latent_offset: u64,
    /// Byte offset of this sample's features in the feature blob (f64 LE).
    pub feature_offset: u64,
}

/// Writes the JSON-lines manifest plus the latent and feature blobs.
pub fn write_manifest<M: Write, L: Write, F: Write>(
    samples: &[LabeledSample],
    protected: &str,
    mut manifest: M,
    mut latents: L,
    mut features: F,
) -> Result<()> {
    let mut latent_offset = 0u64;
    let mut feature_offset = 0u64;
    for (i, s) in samples.iter().enumerate() {
        let rec = ManifestRecord {
            index: i as u64,
            id: s.id.clone(),
            provenance: s.provenance,
            protected: protected.to_string(),
            group: s.protected,
            labels: s.labels.clone(),
            latent_offset,
            feature_offset,
        };
        serde_json::to_writer(&mut manifest, &rec)?;
        manifest.write_all(b"\n")?;
        for v in s.latent.values() {
            latents.write_all(&v.to_le_bytes())?;
        }
        for v in &s.image.0 {
            features.write_all(&v.to_le_bytes())?;
        }
        latent_offset += 4 * s.latent.values().len() as u64;
        feature_offset += 8 * s.image.len() as u64;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::PlanMode;
    use crate::discovery::DimensionMask;

    fn sig(
        label: &str,
        range: LayerRange,
        masks: Vec<DimensionMask>,
        donors: Vec<LayeredLatent>,
    ) -> AttributeSignature {
        AttributeSignature::new(
            label,
            range,
            masks,
            SeedSet::new(label, Polarity::Positive, donors).unwrap(),
        )
        .unwrap()
    }

    fn toy_spec() -> ToyGeneratorSpec {
        let attr = |name: &str, layer: usize| ToyAttribute {
            name: name.into(),
            control_dims: vec![0, 1, 2],
            control_layers: LayerRange { lo: layer, hi: layer },
            shift: 3.0,
            jitter: 0.1,
            threshold: 1.5,
        };
        ToyGeneratorSpec {
            layers: 4,
            dims: 8,
            attributes: vec![attr("Male", 0), attr("A", 1), attr("B", 2), attr("C", 3)],
            noise: 0.0,
            mixing_features: 2,
            seed: 1,
        }
    }

    #[test]
    fn empty_masks_leave_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = LayeredLatent::sample(2, 4, &mut rng);
        let donor = LayeredLatent::sample(2, 4, &mut rng);
        let s = sig(
            "Y",
            LayerRange::all(2),
            vec![DimensionMask::empty(0), DimensionMask::empty(1)],
            vec![donor.clone()],
        );
        assert_eq!(apply_attribute(&id, &s, &donor).unwrap(), id);
    }

    #[test]
    fn full_masks_yield_donor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = LayeredLatent::sample(2, 4, &mut rng);
        let donor = LayeredLatent::sample(2, 4, &mut rng);
        let s = sig(
            "Y",
            LayerRange::all(2),
            vec![DimensionMask::full(0, 4), DimensionMask::full(1, 4)],
            vec![donor.clone()],
        );
        assert_eq!(apply_attribute(&id, &s, &donor).unwrap(), donor);
    }

    #[test]
    fn two_cell_mask_changes_exactly_two_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let id = LayeredLatent::sample(3, 5, &mut rng);
        let donor = LayeredLatent::sample(3, 5, &mut rng);
        let s = sig(
            "Y",
            LayerRange { lo: 1, hi: 1 },
            vec![DimensionMask::new(1, [0, 2], 5).unwrap()],
            vec![donor.clone()],
        );
        let out = apply_attribute(&id, &s, &donor).unwrap();
        let mut changed = Vec::new();
        for r in 0..3 {
            for l in 0..5 {
                if out.get(r, l).to_bits() != id.get(r, l).to_bits() {
                    changed.push((r, l));
                }
            }
        }
        assert_eq!(changed, vec![(1, 0), (1, 2)]);
        assert_eq!(apply_attribute(&out, &s, &donor).unwrap(), out);
    }

    #[test]
    fn donor_outside_pool_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let id = LayeredLatent::sample(1, 3, &mut rng);
        let donor = LayeredLatent::sample(1, 3, &mut rng);
        let s = sig("Y", LayerRange::all(1), vec![DimensionMask::full(0, 3)], vec![donor]);
        assert!(apply_attribute(&id, &s, &id).is_err());
    }

    #[test]
    fn overlapping_signatures_report_cells() {
        let d = LayeredLatent::zeros(1, 4);
        let a = sig(
            "A",
            LayerRange::all(1),
            vec![DimensionMask::new(0, [0, 1], 4).unwrap()],
            vec![d.clone()],
        );
        let b = sig(
            "B",
            LayerRange::all(1),
            vec![DimensionMask::new(0, [1, 3], 4).unwrap()],
            vec![d.clone()],
        );
        match apply_attributes(&d, &[&a, &b], &[&d, &d]) {
            Err(Error::MaskConflict { cells }) => assert_eq!(cells, vec![(0, 1)]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disjoint_order_independent_and_single_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let id = LayeredLatent::sample(2, 4, &mut rng);
        let da = LayeredLatent::sample(2, 4, &mut rng);
        let db = LayeredLatent::sample(2, 4, &mut rng);
        let a = sig(
            "A",
            LayerRange::all(2),
            vec![DimensionMask::new(0, [0, 1], 4).unwrap(), DimensionMask::empty(1)],
            vec![da.clone()],
        );
        let b = sig(
            "B",
            LayerRange::all(2),
            vec![DimensionMask::new(0, [2], 4).unwrap(), DimensionMask::full(1, 4)],
            vec![db.clone()],
        );
        let ab = apply_attributes(&id, &[&a, &b], &[&da, &db]).unwrap();
        let ba = apply_attributes(&id, &[&b, &a], &[&db, &da]).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(
            apply_attributes(&id, &[&a], &[&da]).unwrap(),
            apply_attribute(&id, &a, &da).unwrap()
        );
    }

    #[test]
    fn toy_render_examples() {
        let spec = toy_spec();
        let gen = ToyGenerator::new(spec.clone()).unwrap();
        let zeros = LayeredLatent::zeros(4, 8);
        let img = gen.render(&zeros).unwrap();
        assert_eq!(img.len(), 6);
        assert!(img.0[..4].iter().all(|&f| f == 0.0));

        let mut m = zeros.clone();
        for (r, d) in spec.attributes[1].cells() {
            m.set(r, d, 3.0);
        }
        assert_eq!(toy_render(&m, &spec).unwrap().0[1], 3.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = LayeredLatent::sample(4, 8, &mut rng);
        let img = gen.render(&x).unwrap();
        for (i, a) in spec.attributes.iter().enumerate() {
            let mut s = 0.0;
            for &d in &a.control_dims {
                s += x.get(a.control_layers.lo, d) as f64;
            }
            assert!((img.0[i] - s / 3.0).abs() < 1e-12);
        }
        assert_eq!(gen.render(&x).unwrap(), img);
    }

    #[test]
    fn oracle_boundaries() {
        let spec = toy_spec();
        let lab = |f: f64| oracle_annotate(&ImageVector(vec![0.0, f, 0.0, 0.0]), &spec)["A"];
        assert_eq!(lab(3.0), 1);
        assert_eq!(lab(0.0), 0);
        assert_eq!(lab(1.5), 0);
    }

    #[test]
    fn toy_spec_validation() {
        let mut s = toy_spec();
        s.attributes[1].threshold = 4.0;
        assert!(s.validate().is_err());
        let mut s = toy_spec();
        s.attributes[2].control_layers = LayerRange { lo: 1, hi: 1 };
        assert!(s.validate().is_err());
        let mut s = toy_spec();
        s.attributes[2].control_layers = LayerRange { lo: 1, hi: 1 };
        s.attributes[2].control_dims = vec![5, 6];
        assert!(s.validate().is_ok());
    }

    fn toy_registry(gen: &ToyGenerator) -> SignatureRegistry {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut reg = SignatureRegistry::new();
        for a in &gen.spec().attributes {
            for pol in [Polarity::Positive, Polarity::Negative] {
                let donors = gen.attribute_seeds(&a.name, pol, 5, &mut rng).unwrap();
                let masks = vec![DimensionMask::new(a.control_layers.lo, a.control_dims.clone(), 8).unwrap()];
                reg.insert(AttributeSignature::new(&a.name, a.control_layers, masks, donors).unwrap())
                    .unwrap();
            }
        }
        reg
    }

    fn plan(cells: Vec<PlanCell>) -> BalancePlan {
        BalancePlan {
            version: 1,
            mode: PlanMode::Supplement,
            protected: "Male".into(),
            cells,
            retained_original: None,
            notes: vec![],
        }
    }

    #[test]
    fn batch_contract_and_empty_plan() {
        let gen = ToyGenerator::new(toy_spec()).unwrap();
        let reg = toy_registry(&gen);
        let opts = SynthesisOptions {
            rng_seed: 3,
            identity_mode: IdentityMode::Independent,
        };
        let cell = PlanCell {
            group: 1,
            assignments: [("A".to_string(), 1)].into(),
            count: 5,
        };
        let out = synthesize_batch(&plan(vec![cell]), &reg, &gen, opts).unwrap();
        assert_eq!(out.len(), 5);
        for s in &out {
            assert_eq!(s.labels["A"], 1);
            assert_eq!(s.protected, 1);
            assert_eq!(s.provenance, Provenance::Synthetic);
            let oracle = oracle_annotate(&s.image, gen.spec());
            assert_eq!(oracle["A"], 1);
            assert_eq!(oracle["Male"], 1);
        }
        assert!(synthesize_batch(&plan(vec![]), &reg, &gen, opts).unwrap().is_empty());
        let again = synthesize_batch(
            &plan(vec![PlanCell {
                group: 1,
                assignments: [("A".to_string(), 1)].into(),
                count: 5,
            }]),
            &reg,
            &gen,
            opts,
        )
        .unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn three_attributes_at_once() {
        let gen = ToyGenerator::new(toy_spec()).unwrap();
        let reg = toy_registry(&gen);
        let opts = SynthesisOptions {
            rng_seed: 5,
            identity_mode: IdentityMode::Independent,
        };
        let assignments: BTreeMap<String, u8> = [("A", 1), ("B", 1), ("C", 1)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let out = synthesize_batch(
            &plan(vec![PlanCell {
                group: 0,
                assignments,
                count: 20,
            }]),
            &reg,
            &gen,
            opts,
        )
        .unwrap();
        for s in &out {
            let o = oracle_annotate(&s.image, gen.spec());
            assert_eq!((o["A"], o["B"], o["C"], o["Male"]), (1, 1, 1, 0));
        }
    }

    #[test]
    fn unknown_signature_and_exclusive_family() {
        let gen = ToyGenerator::new(toy_spec()).unwrap();
        let mut reg = toy_registry(&gen);
        let opts = SynthesisOptions {
            rng_seed: 5,
            identity_mode: IdentityMode::Independent,
        };
        let bad = PlanCell {
            group: 0,
            assignments: [("Z".to_string(), 1)].into(),
            count: 1,
        };
        assert!(matches!(
            synthesize_batch(&plan(vec![bad]), &reg, &gen, opts),
            Err(Error::UnknownSignature(_))
        ));
        reg.families = vec![vec!["A".into(), "B".into()]];
        let both = PlanCell {
            group: 0,
            assignments: [("A".to_string(), 1), ("B".to_string(), 1)].into(),
            count: 1,
        };
        assert!(matches!(
            synthesize_batch(&plan(vec![both]), &reg, &gen, opts),
            Err(Error::ExclusiveConflict(..))
        ));
    }

    #[test]
    fn paired_mode_shares_identity_across_groups() {
        let gen = ToyGenerator::new(toy_spec()).unwrap();
        let reg = toy_registry(&gen);
        let opts = SynthesisOptions {
            rng_seed: 5,
            identity_mode: IdentityMode::Paired,
        };
        let f = PlanCell {
            group: 0,
            assignments: [("A".to_string(), 1)].into(),
            count: 3,
        };
        let m = PlanCell { group: 1, ..f.clone() };
        let out = synthesize_batch(&plan(vec![f, m]), &reg, &gen, opts).unwrap();
        // Layer 3 is untouched by Male and A, so it still carries the identity.
        for j in 0..3 {
            assert_eq!(out[j].latent.layer(3), out[j + 3].latent.layer(3));
        }
        assert_ne!(out[0].latent.layer(3), out[1].latent.layer(3));
    }

    #[test]
    fn manifest_offsets() {
        let gen = ToyGenerator::new(toy_spec()).unwrap();
        let reg = toy_registry(&gen);
        let opts = SynthesisOptions {
            rng_seed: 1,
            identity_mode: IdentityMode::Independent,
        };
        let cell = PlanCell {
            group: 1,
            assignments: BTreeMap::new(),
            count: 3,
        };
        let out = synthesize_batch(&plan(vec![cell]), &reg, &gen, opts).unwrap();
        let (mut m, mut l, mut f) = (Vec::new(), Vec::new(), Vec::new());
        write_manifest(&out, "Male", &mut m, &mut l, &mut f).unwrap();
        let recs: Vec<ManifestRecord> = String::from_utf8(m)
            .unwrap()
            .lines()
            .map(|s| serde_json::from_str(s).unwrap())
            .collect();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].latent_offset, 2 * 4 * 32);
        assert_eq!(recs[2].feature_offset, 2 * 8 * 6);
        assert_eq!(l.len(), 3 * 4 * 32);
        let off = recs[1].latent_offset as usize;
        let first = f32::from_le_bytes(l[off..off + 4].try_into().unwrap());
        assert_eq!(first.to_bits(), out[1].latent.get(0, 0).to_bits());
    }
}
