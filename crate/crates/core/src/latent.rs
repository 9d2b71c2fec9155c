//! Layered latent codes, seed sets and seeded sampling.
//!
//! A latent is an `R x k` matrix: `R` generator layers (resolutions), each a
//! `k`-dimensional code. Values are kept as `f32` so seed files round-trip
//! bit-exactly; all arithmetic on them is done in `f64`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentConfig {
    pub layers: usize,
    pub dims_per_layer: usize,
    pub rng_seed: u64,
}

impl LatentConfig {
    pub fn new(layers: usize, dims_per_layer: usize, rng_seed: u64) -> Result<Self> {
        if layers == 0 || dims_per_layer == 0 {
            return Err(Error::InvalidConfig(format!(
                "layers and dims_per_layer must be >= 1, got ({layers}, {dims_per_layer})"
            )));
        }
        Ok(Self {
            layers,
            dims_per_layer,
            rng_seed,
        })
    }

    /// 14 layers of 512 dims: the layout of a 256x256 style-based generator.
    pub const fn stylegan_256(rng_seed: u64) -> Self {
        Self {
            layers: 14,
            dims_per_layer: 512,
            rng_seed,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.layers, self.dims_per_layer)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredLatent {
    layers: usize,
    dims: usize,
    values: Vec<f32>,
}

impl LayeredLatent {
    pub fn zeros(layers: usize, dims: usize) -> Self {
        Self {
            layers,
            dims,
            values: vec![0.0; layers * dims],
        }
    }

    /// Builds a latent from a row-major buffer.
    pub fn from_vec(layers: usize, dims: usize, values: Vec<f32>) -> Result<Self> {
        if layers == 0 || dims == 0 {
            return Err(Error::InvalidConfig("latent shape must be nonzero".into()));
        }
        if values.len() != layers * dims {
            return Err(Error::InvalidConfig(format!(
                "expected {} values for a {layers}x{dims} latent, got {}",
                layers * dims,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent"));
        }
        Ok(Self { layers, dims, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let layers = rows.len();
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(Error::InvalidConfig("ragged latent rows".into()));
        }
        Self::from_vec(layers, dims, rows.concat())
    }

    /// Draws every entry i.i.d. from N(0, 1).
    pub fn sample<R: Rng + ?Sized>(layers: usize, dims: usize, rng: &mut R) -> Self {
        let values = (0..layers * dims)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        Self { layers, dims, values }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.layers, self.dims)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn get(&self, layer: usize, dim: usize) -> f32 {
        self.values[layer * self.dims + dim]
    }

    pub fn set(&mut self, layer: usize, dim: usize, value: f32) {
        self.values[layer * self.dims + dim] = value;
    }

    pub fn layer(&self, layer: usize) -> &[f32] {
        &self.values[layer * self.dims..(layer + 1) * self.dims]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn matches(&self, cfg: &LatentConfig) -> bool {
        self.shape() == cfg.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.layers {
            return Err(Error::LayerOutOfRange {
                layer,
                layers: self.layers,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" | "pos" | "+" => Ok(Polarity::Positive),
            "negative" | "neg" | "-" => Ok(Polarity::Negative),
            other => Err(Error::Format(format!("unknown polarity `{other}`"))),
        }
    }
}

/// A labeled, nonempty set of latents sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    label: String,
    polarity: Polarity,
    layers: usize,
    dims: usize,
    members: Vec<LayeredLatent>,
}

impl SeedSet {
    pub fn new(label: impl Into<String>, polarity: Polarity, members: Vec<LayeredLatent>) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptyRequest("seed set"))?;
        let (layers, dims) = first.shape();
        for m in &members[1..] {
            first.check_same_shape(m)?;
        }
        Ok(Self {
            label: label.into(),
            polarity,
            layers,
            dims,
            members,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.layers, self.dims)
    }

    pub fn members(&self) -> &[LayeredLatent] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn into_members(self) -> Vec<LayeredLatent> {
        self.members
    }
}

/// Inclusive range of layer indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRange {
    pub lo: usize,
    pub hi: usize,
}

impl LayerRange {
    pub fn new(lo: usize, hi: usize, layers: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidConfig(format!("layer range {lo}:{hi} is reversed")));
        }
        if hi >= layers {
            return Err(Error::LayerOutOfRange { layer: hi, layers });
        }
        Ok(Self { lo, hi })
    }

    pub fn single(layer: usize, layers: usize) -> Result<Self> {
        Self::new(layer, layer, layers)
    }

    pub fn all(layers: usize) -> Self {
        Self {
            lo: 0,
            hi: layers.saturating_sub(1),
        }
    }

    pub fn contains(&self, layer: usize) -> bool {
        (self.lo..=self.hi).contains(&layer)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.lo..=self.hi
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &LayerRange) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn check(&self, layers: usize) -> Result<()> {
        Self::new(self.lo, self.hi, layers).map(|_| ())
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

impl FromStr for LayerRange {
    type Err = Error;

    /// Parses `lo:hi` or a single layer index. Bounds are checked by [`LayerRange::check`].
    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad layer index `{t}`")))
        };
        let (lo, hi) = match s.split_once(':') {
            Some((a, b)) => (parse(a)?, parse(b)?),
            None => {
                let v = parse(s)?;
                (v, v)
            }
        };
        if lo > hi {
            return Err(Error::InvalidConfig(format!("layer range {lo}:{hi} is reversed")));
        }
        Ok(Self { lo, hi })
    }
}

/// Samples `n` identity seeds with every entry drawn from N(0, 1).
///
/// The output depends only on `cfg` (shape and `rng_seed`).
pub fn sample_identity_seeds(n: usize, cfg: &LatentConfig) -> Result<SeedSet> {
    if n == 0 {
        return Err(Error::EmptyRequest("identity seeds"));
    }
    let mut rng = cfg.rng();
    let members = (0..n)
        .map(|_| LayeredLatent::sample(cfg.layers, cfg.dims_per_layer, &mut rng))
        .collect();
    SeedSet::new("identity", Polarity::Positive, members)
}

/// Elementwise `|a - b|` as an `R x k` matrix (row per layer).
pub fn latent_delta(a: &LayeredLatent, b: &LayeredLatent) -> Result<Vec<Vec<f64>>> {
    a.check_same_shape(b)?;
    Ok((0..a.layers())
        .map(|r| {
            a.layer(r)
                .iter()
                .zip(b.layer(r))
                .map(|(&x, &y)| abs_diff(x, y))
                .collect()
        })
        .collect())
}

#[inline]
pub(crate) fn abs_diff(x: f32, y: f32) -> f64 {
    (f64::from(x) - f64::from(y)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic() {
        let cfg = LatentConfig::new(1, 4, 7).unwrap();
        let a = sample_identity_seeds(1, &cfg).unwrap();
        let b = sample_identity_seeds(1, &cfg).unwrap();
        assert_eq!(a.members()[0].shape(), (1, 4));
        let bits = |s: &SeedSet| s.members()[0].values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn empty_request_rejected() {
        let cfg = LatentConfig::new(1, 4, 7).unwrap();
        assert!(matches!(sample_identity_seeds(0, &cfg), Err(Error::EmptyRequest(_))));
    }

    #[test]
    fn standard_normal_moments() {
        // n = 1e4: sd(mean) = 0.01, sd(var) ~ 0.014, bounds are >= 4 sigma.
        let cfg = LatentConfig::new(1, 1, 11).unwrap();
        let s = sample_identity_seeds(10_000, &cfg).unwrap();
        let xs: Vec<f64> = s.members().iter().map(|m| f64::from(m.get(0, 0))).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((-0.05..=0.05).contains(&mean), "mean {mean}");
        assert!((0.94..=1.06).contains(&var), "var {var}");
    }

    #[test]
    fn two_samples_differ() {
        let cfg = LatentConfig::new(3, 5, 1).unwrap();
        let s = sample_identity_seeds(2, &cfg).unwrap();
        assert_ne!(s.members()[0], s.members()[1]);
    }

    #[test]
    fn delta_examples() {
        let a = LayeredLatent::from_rows(&[vec![0.0, 3.0]]).unwrap();
        let b = LayeredLatent::from_rows(&[vec![3.0, 0.0]]).unwrap();
        assert_eq!(latent_delta(&a, &b).unwrap(), vec![vec![3.0, 3.0]]);
        assert_eq!(latent_delta(&a, &a).unwrap(), vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn delta_matches_elementwise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = LayeredLatent::sample(3, 7, &mut rng);
        let b = LayeredLatent::sample(3, 7, &mut rng);
        let d = latent_delta(&a, &b).unwrap();
        for (r, row) in d.iter().enumerate() {
            for (l, &v) in row.iter().enumerate() {
                let expect = (a.get(r, l) as f64 - b.get(r, l) as f64).abs();
                assert_eq!(v, expect);
            }
        }
    }

    #[test]
    fn delta_shape_mismatch() {
        let a = LayeredLatent::zeros(1, 2);
        let b = LayeredLatent::zeros(2, 2);
        assert!(matches!(latent_delta(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn layer_range_parse_and_bounds() {
        let r: LayerRange = "2:3".parse().unwrap();
        assert_eq!(r, LayerRange { lo: 2, hi: 3 });
        assert!(r.check(4).is_ok());
        assert!(r.check(3).is_err());
        assert_eq!("5".parse::<LayerRange>().unwrap(), LayerRange { lo: 5, hi: 5 });
        assert!("3:2".parse::<LayerRange>().is_err());
    }

    #[test]
    fn seed_set_rejects_mixed_shapes() {
        let r = SeedSet::new(
            "x",
            Polarity::Positive,
            vec![LayeredLatent::zeros(1, 2), LayeredLatent::zeros(1, 3)],
        );
        assert!(r.is_err());
        assert!(SeedSet::new("x", Polarity::Positive, vec![]).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(LayeredLatent::from_vec(1, 2, vec![0.0, f32::NAN]).is_err());
    }
}
