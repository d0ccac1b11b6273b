//! Two-file checkpoints: `<stem>.json` holds a small manifest describing the
//! network, `<stem>.bin` holds every parameter value as little-endian f64 in
//! declaration order (weights then bias, layer by layer).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ClassifierNet, CriticNet, GeneratorNet};
use crate::optim::Parameter;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetKind {
    Classifier,
    Generator,
    Critic,
}

impl std::fmt::Display for NetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            NetKind::Classifier => "classifier",
            NetKind::Generator => "generator",
            NetKind::Critic => "critic",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: NetKind,
    pub layer_widths: Vec<usize>,
    pub seed: u64,
    /// Only present for classifiers; equals the final layer width.
    pub class_count: Option<usize>,
}

fn blob_len(widths: &[usize]) -> usize {
    widths
        .windows(2)
        .map(|w| w[0] * w[1] + w[1])
        .sum()
}

fn write_files(stem: &Path, manifest: &CheckpointManifest, params: &[Parameter]) -> Result<()> {
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(stem.with_extension("json"), json + "\n")?;
    let mut blob = Vec::with_capacity(blob_len(&manifest.layer_widths) * 8);
    for p in params {
        for v in p.tensor().to_vec() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(stem.with_extension("bin"), blob)?;
    Ok(())
}

fn read_files(stem: &Path, want: NetKind) -> Result<(CheckpointManifest, Vec<f64>)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
    if manifest.kind != want {
        return Err(Error::format(format!(
            "checkpoint {} holds a {}, expected a {}",
            stem.display(),
            manifest.kind,
            want
        )));
    }
    let blob = fs::read(stem.with_extension("bin"))?;
    let expect = blob_len(&manifest.layer_widths) * 8;
    if blob.len() != expect {
        return Err(Error::format(format!(
            "checkpoint {} holds {} bytes but widths {:?} need {expect}",
            stem.display(),
            blob.len(),
            manifest.layer_widths
        )));
    }
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((manifest, values))
}

/// Rebuilds the parameter list from a flat value vector, mirroring the
/// declaration order used by the networks.
fn params_from_blob(widths: &[usize], values: &[f64]) -> Vec<Parameter> {
    let mut params = Vec::with_capacity((widths.len() - 1) * 2);
    let mut at = 0;
    for l in 0..widths.len() - 1 {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let w = values[at..at + fan_in * fan_out].to_vec();
        at += fan_in * fan_out;
        let b = values[at..at + fan_out].to_vec();
        at += fan_out;
        params.push(Parameter::new(format!("w{l}"), w, &[fan_in, fan_out]));
        params.push(Parameter::new(format!("b{l}"), b, &[fan_out]));
    }
    debug_assert_eq!(at, values.len());
    params
}

pub fn save_classifier(net: &ClassifierNet, stem: &Path) -> Result<()> {
    let manifest = CheckpointManifest {
        kind: NetKind::Classifier,
        layer_widths: net.layer_widths().to_vec(),
        seed: net.seed(),
        class_count: Some(net.class_count()),
    };
    write_files(stem, &manifest, net.params())
}

pub fn load_classifier(stem: &Path) -> Result<ClassifierNet> {
    let (manifest, values) = read_files(stem, NetKind::Classifier)?;
    let head = *manifest.layer_widths.last().ok_or_else(|| {
        Error::format("checkpoint manifest lists no layer widths")
    })?;
    if let Some(count) = manifest.class_count {
        if count != head {
            return Err(Error::format(format!(
                "manifest claims {count} classes but the head is {head} wide"
            )));
        }
    }
    let params = params_from_blob(&manifest.layer_widths, &values);
    Ok(ClassifierNet::from_parts(
        manifest.layer_widths,
        params,
        manifest.seed,
    ))
}

pub fn save_generator(net: &GeneratorNet, stem: &Path) -> Result<()> {
    let manifest = CheckpointManifest {
        kind: NetKind::Generator,
        layer_widths: net.layer_widths().to_vec(),
        seed: net.seed(),
        class_count: None,
    };
    write_files(stem, &manifest, net.params())
}

pub fn load_generator(stem: &Path) -> Result<GeneratorNet> {
    let (manifest, values) = read_files(stem, NetKind::Generator)?;
    let params = params_from_blob(&manifest.layer_widths, &values);
    Ok(GeneratorNet::from_parts(
        manifest.layer_widths,
        params,
        manifest.seed,
    ))
}

pub fn save_critic(net: &CriticNet, stem: &Path) -> Result<()> {
    let manifest = CheckpointManifest {
        kind: NetKind::Critic,
        layer_widths: net.layer_widths().to_vec(),
        seed: net.seed(),
        class_count: None,
    };
    write_files(stem, &manifest, net.params())
}

pub fn load_critic(stem: &Path) -> Result<CriticNet> {
    let (manifest, values) = read_files(stem, NetKind::Critic)?;
    if manifest.layer_widths.last() != Some(&1) {
        return Err(Error::format(format!(
            "critic checkpoint must end in a single score, widths are {:?}",
            manifest.layer_widths
        )));
    }
    let params = params_from_blob(&manifest.layer_widths, &values);
    Ok(CriticNet::from_parts(
        manifest.layer_widths,
        params,
        manifest.seed,
    ))
}
