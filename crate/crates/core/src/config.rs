//! Run configuration: thresholds, the attribute-to-layer registry, metric
//! settings, taxonomy lists and exclusive attribute families.
//!
//! Stored as TOML with a `schema_version` key. Missing sections take defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discovery::Thresholds;
use crate::error::{Error, Result};
use crate::latent::LayerRange;
use crate::metrics::MetricsConfig;
use crate::study::TaxonomyLists;

pub const SCHEMA_VERSION: u32 = 1;

/// Layer pair of a generator resolution in the 14-layer profile
/// (`4² -> 0:1`, `8² -> 2:3`, ..., `256² -> 12:13`).
pub fn resolution_layers(resolution: u32) -> Result<LayerRange> {
    if !resolution.is_power_of_two() || !(4..=256).contains(&resolution) {
        return Err(Error::InvalidConfig(format!("no layers for resolution {resolution}")));
    }
    let lo = 2 * (resolution.trailing_zeros() as usize - 2);
    Ok(LayerRange { lo, hi: lo + 1 })
}

fn span(lo_res: u32, hi_res: u32) -> LayerRange {
    let lo = resolution_layers(lo_res).expect("valid resolution").lo;
    let hi = resolution_layers(hi_res).expect("valid resolution").hi;
    LayerRange { lo, hi }
}

/// Default attribute placement for the 14-layer profile. The 4² layers are
/// left to the identity.
pub fn default_layer_registry() -> BTreeMap<String, LayerRange> {
    let mut m = BTreeMap::new();
    let mut put = |names: &[&str], r: LayerRange| {
        for n in names {
            m.insert(n.to_string(), r);
        }
    };
    put(
        &["Chubby", "Big_Nose", "Pointy_Nose", "High_Cheekbones", "Double_Chin"],
        span(8, 8),
    );
    put(&["Bags_Under_Eyes", "Wavy_Hair", "Straight_Hair"], span(16, 16));
    put(&["Black_Hair", "Blond_Hair", "Brown_Hair", "Gray_Hair"], span(32, 64));
    put(&["Pale_Skin"], span(128, 256));
    let sex: Vec<&str> = crate::study::MASCULINITY
        .iter()
        .chain(crate::study::FEMININITY.iter())
        .copied()
        .chain(["Male"])
        .collect();
    put(&sex, span(8, 16));
    m
}

pub fn default_families() -> Vec<Vec<String>> {
    vec![
        vec![
            "Black_Hair".into(),
            "Blond_Hair".into(),
            "Brown_Hair".into(),
            "Gray_Hair".into(),
        ],
        vec!["Straight_Hair".into(), "Wavy_Hair".into()],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub families: Vec<Vec<String>>,
    pub group_names: [String; 2],
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            families: default_families(),
            group_names: ["Female".into(), "Male".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub schema_version: u32,
    pub discovery: Thresholds,
    pub metrics: MetricsConfig,
    pub taxonomy: TaxonomyLists,
    pub planner: PlannerConfig,
    /// Attribute name to `lo:hi` layer range.
    pub layers: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            discovery: Thresholds::default(),
            metrics: MetricsConfig::default(),
            taxonomy: TaxonomyLists::default(),
            planner: PlannerConfig::default(),
            layers: default_layer_registry()
                .into_iter()
                .map(|(k, v)| (k, v.to_string()))
                .collect(),
        }
    }
}

impl Config {
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(src)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Thresholds::new(cfg.discovery.intra, cfg.discovery.inter)?;
        cfg.layer_registry()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn layer_registry(&self) -> Result<BTreeMap<String, LayerRange>> {
        self.layers
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.parse::<LayerRange>()?)))
            .collect()
    }
}
