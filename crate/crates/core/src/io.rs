//! On-disk formats.
//!
//! Models and bundles are JSON documents carrying `format_version = 1`.
//! Floats are written in shortest round-trip form and parsed exactly, so
//! `load(save(x)) == x` bit for bit.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attacks::AttackBundle;
use crate::error::{Error, Result};
use crate::net::Network;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub layer_dims: Vec<usize>,
    pub clip_bound: f64,
    /// Per layer, the row-major weight matrix.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
    pub format_version: u32,
}

impl From<&Network> for ModelFile {
    fn from(net: &Network) -> Self {
        ModelFile {
            layer_dims: net.layer_dims().to_vec(),
            clip_bound: net.clip_bound(),
            weights: net.layers().iter().map(|l| l.weights.clone()).collect(),
            biases: net.layers().iter().map(|l| l.bias.clone()).collect(),
            seed: net.seed(),
            format_version: FORMAT_VERSION,
        }
    }
}

impl From<Network> for ModelFile {
    fn from(net: Network) -> Self {
        ModelFile::from(&net)
    }
}

impl TryFrom<ModelFile> for Network {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Network> {
        check_version(f.format_version)?;
        Network::from_parts(&f.layer_dims, f.weights, f.biases, f.clip_bound, f.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFile {
    pub epsilon: f64,
    pub dataset_id: String,
    pub deltas: Vec<Vec<f64>>,
    pub format_version: u32,
}

impl From<&AttackBundle> for BundleFile {
    fn from(b: &AttackBundle) -> Self {
        BundleFile {
            epsilon: b.epsilon,
            dataset_id: b.dataset_id.clone(),
            deltas: b.deltas.clone(),
            format_version: FORMAT_VERSION,
        }
    }
}

impl From<AttackBundle> for BundleFile {
    fn from(b: AttackBundle) -> Self {
        BundleFile::from(&b)
    }
}

impl TryFrom<BundleFile> for AttackBundle {
    type Error = Error;

    fn try_from(f: BundleFile) -> Result<AttackBundle> {
        check_version(f.format_version)?;
        if !(f.epsilon >= 0.0 && f.epsilon.is_finite()) {
            return Err(Error::InvalidRadius(f.epsilon));
        }
        if let Some(i) = f
            .deltas
            .iter()
            .position(|d| d.iter().any(|v| !(v.abs() <= f.epsilon)))
        {
            return Err(Error::Validation(format!(
                "perturbation {i} leaves the {}-ball",
                f.epsilon
            )));
        }
        Ok(AttackBundle {
            epsilon: f.epsilon,
            dataset_id: f.dataset_id,
            deltas: f.deltas,
        })
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported format_version {v}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = to_json_string(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_model(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    save_json(path, &ModelFile::from(net))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    Network::try_from(load_json::<ModelFile>(path)?)
}

pub fn save_bundle(path: impl AsRef<Path>, bundle: &AttackBundle) -> Result<()> {
    save_json(path, &BundleFile::from(bundle))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<AttackBundle> {
    AttackBundle::try_from(load_json::<BundleFile>(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_json_has_contract_fields() {
        let net = Network::random(&[2, 3, 2], 1.0, 4).unwrap();
        let v: serde_json::Value = serde_json::to_value(ModelFile::from(&net)).unwrap();
        for key in ["layer_dims", "clip_bound", "weights", "biases", "seed", "format_version"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["weights"][0].as_array().unwrap().len(), 6);
    }

    #[test]
    fn model_round_trip_is_bitwise() {
        let net = Network::random(&[3, 7, 2], 0.8, 11).unwrap();
        let text = to_json_string(&ModelFile::from(&net)).unwrap();
        let back = Network::try_from(serde_json::from_str::<ModelFile>(&text).unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn wrong_version_rejected() {
        let net = Network::random(&[1, 2], 1.0, 0).unwrap();
        let mut f = ModelFile::from(&net);
        f.format_version = 2;
        assert!(Network::try_from(f).is_err());
    }

    #[test]
    fn bundle_outside_ball_rejected() {
        let f = BundleFile {
            epsilon: 0.1,
            dataset_id: "x".into(),
            deltas: vec![vec![0.2]],
            format_version: 1,
        };
        assert!(AttackBundle::try_from(f).is_err());
    }
}
