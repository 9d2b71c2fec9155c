//! On-disk artifacts shared by the CLI subcommands.
//!
//! Every artifact embeds a [`RunProvenance`] block (tool version, command
//! line, rng seed and the full configuration). Nothing time-dependent is
//! recorded, so rerunning a command reproduces its artifacts byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::balance::{BalancePlan, CountTable, CriteriaReport};
use crate::config::Config;
use crate::discovery::{AttributeSignature, DimensionMask, Discovery, LayerDiagnostics, Thresholds};
use crate::error::{Error, Result};
use crate::latent::LayerRange;
use crate::seedfile;
use crate::study::AttributeStudyRow;
use crate::synthesis::{signature_value, SignatureRegistry};

pub const SIGNATURE_FORMAT: &str = "fairsynth-signature/1";
pub const PLAN_FORMAT: &str = "fairsynth-plan/1";
pub const COUNTS_FORMAT: &str = "fairsynth-counts/1";

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub tool: String,
    pub command: Vec<String>,
    pub rng_seed: u64,
    pub config: Config,
}

impl RunProvenance {
    pub fn new(command: Vec<String>, rng_seed: u64, config: &Config) -> Self {
        Self {
            tool: concat!("fairsynth ", env!("CARGO_PKG_VERSION")).into(),
            command,
            rng_seed,
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureFile {
    pub format: String,
    pub label: String,
    /// Label value the signature assigns (1 for a positive donor pool).
    pub value: u8,
    pub layers: usize,
    pub dims: usize,
    pub layer_range: LayerRange,
    pub thresholds: Thresholds,
    pub masks: Vec<DimensionMask>,
    pub diagnostics: Vec<LayerDiagnostics>,
    /// Path of the donor seed file, as given when the signature was made.
    pub donor_pool: String,
    pub provenance: Option<RunProvenance>,
}

impl SignatureFile {
    pub fn from_discovery(
        d: &Discovery,
        thresholds: Thresholds,
        donor_pool: &str,
        provenance: Option<RunProvenance>,
    ) -> Self {
        let (layers, dims) = d.signature.shape();
        Self {
            format: SIGNATURE_FORMAT.into(),
            label: d.signature.label.clone(),
            value: signature_value(&d.signature),
            layers,
            dims,
            layer_range: d.signature.layer_range,
            thresholds,
            masks: d.signature.masks.clone(),
            diagnostics: d.diagnostics.clone(),
            donor_pool: donor_pool.to_string(),
            provenance,
        }
    }

    fn donor_path(&self, signature_path: &Path) -> PathBuf {
        let p = PathBuf::from(&self.donor_pool);
        if p.is_relative() && !p.exists() {
            if let Some(dir) = signature_path.parent() {
                let alt = dir.join(&p);
                if alt.exists() {
                    return alt;
                }
            }
        }
        p
    }
}

pub fn read_signature_file(path: &Path) -> Result<SignatureFile> {
    let file: SignatureFile = serde_json::from_slice(&fs::read(path)?)?;
    if file.format != SIGNATURE_FORMAT {
        return Err(Error::Format(format!(
            "`{}` is not a {SIGNATURE_FORMAT} file",
            path.display()
        )));
    }
    Ok(file)
}

/// Loads a signature and its donor pool.
pub fn load_signature(path: &Path) -> Result<AttributeSignature> {
    let file = read_signature_file(path)?;
    let pool = seedfile::load(&file.donor_path(path))?;
    if pool.shape() != (file.layers, file.dims) {
        return Err(Error::ShapeMismatch {
            expected: (file.layers, file.dims),
            found: pool.shape(),
        });
    }
    let sig = AttributeSignature::new(file.label, file.layer_range, file.masks, pool)?;
    if signature_value(&sig) != file.value {
        return Err(Error::Format(format!(
            "donor pool polarity does not match signature value {}",
            file.value
        )));
    }
    Ok(sig)
}

pub fn load_registry(paths: &[PathBuf], families: Vec<Vec<String>>) -> Result<SignatureRegistry> {
    let mut reg = SignatureRegistry::with_families(families);
    for p in paths {
        reg.insert(load_signature(p)?)?;
    }
    Ok(reg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub format: String,
    pub plan: BalancePlan,
    pub provenance: Option<RunProvenance>,
}

pub fn read_plan_file(path: &Path) -> Result<PlanFile> {
    let file: PlanFile = serde_json::from_slice(&fs::read(path)?)?;
    if file.format != PLAN_FORMAT {
        return Err(Error::Format(format!(
            "`{}` is not a {PLAN_FORMAT} file",
            path.display()
        )));
    }
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsFile {
    pub format: String,
    pub counts: CountTable,
    pub criteria: CriteriaReport,
    #[serde(default)]
    pub study: Vec<AttributeStudyRow>,
    pub provenance: Option<RunProvenance>,
}

/// Accepts either a counts artifact or a bare count table.
pub fn read_counts(path: &Path) -> Result<CountTable> {
    let bytes = fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    let table = if value.get("format").is_some() {
        let file: CountsFile = serde_json::from_value(value)?;
        if file.format != COUNTS_FORMAT {
            return Err(Error::Format(format!(
                "`{}` is not a {COUNTS_FORMAT} file",
                path.display()
            )));
        }
        file.counts
    } else {
        serde_json::from_value(value)?
    };
    table.validate()?;
    Ok(table)
}
