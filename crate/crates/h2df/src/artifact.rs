//! `RLPA` binary container for policies and plant models.
//!
//! Layout: magic `RLPA`, format version (u16 LE), kind tag (u8, 1 policy /
//! 2 plant), metadata length (u32 LE), UTF-8 JSON metadata, then every
//! parameter tensor as raw little-endian f64 in declared layer order. The
//! metadata carries a SHA-256 of those parameter bytes.

use std::path::Path;

use h2df_core::agents::Policy;
use h2df_core::env::ObservationRanges;
use h2df_core::nn::{Activation, DenseLayer, GruCell, Mlp, Network, Parameters, Tensor};
use h2df_core::sysid::{Normalizer, PlantModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: [u8; 4] = *b"RLPA";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an RLPA artifact")]
    BadMagic,
    #[error("unsupported artifact version {0}")]
    UnsupportedVersion(u16),
    #[error("artifact kind {found} where {expected} was expected")]
    KindMismatch { expected: &'static str, found: String },
    #[error("artifact truncated")]
    Truncated,
    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error("parameter hash mismatch: stored {stored}, computed {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error("shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] h2df_core::Error),
}

pub type Result<T> = std::result::Result<T, ArtifactError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Policy,
    Plant,
}

impl ArtifactKind {
    pub fn tag(self) -> u8 {
        match self {
            ArtifactKind::Policy => 1,
            ArtifactKind::Plant => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            1 => Some(ArtifactKind::Policy),
            2 => Some(ArtifactKind::Plant),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Policy => "policy",
            ArtifactKind::Plant => "plant",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
    pub tensors: Vec<TensorInfo>,
}

/// JSON header of an artifact. For plant artifacts the observation and
/// action sizes are the model's input and output widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub kind: ArtifactKind,
    pub observation_size: usize,
    pub action_size: usize,
    pub layers: Vec<LayerInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation_ranges: Option<ObservationRanges>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_norm: Option<Normalizer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_norm: Option<Normalizer>,
    pub training_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    /// Hex SHA-256 of the parameter bytes.
    pub content_hash: String,
}

impl Metadata {
    fn num_params(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.tensors).map(|t| t.shape.iter().product::<usize>()).sum()
    }
}

fn dense_info(name: String, l: &DenseLayer) -> LayerInfo {
    LayerInfo {
        name,
        activation: Some(l.activation.name().into()),
        tensors: vec![
            TensorInfo { name: "w".into(), shape: l.w.shape().to_vec() },
            TensorInfo { name: "b".into(), shape: l.b.shape().to_vec() },
        ],
    }
}

fn parse_activation(name: Option<&str>) -> Result<Activation> {
    let name = name.ok_or_else(|| ArtifactError::Shape("dense layer without activation".into()))?;
    [Activation::Tanh, Activation::Relu, Activation::Linear, Activation::Sigmoid]
        .into_iter()
        .find(|a| a.name() == name)
        .ok_or_else(|| ArtifactError::Shape(format!("unknown activation {name}")))
}

fn param_bytes<P: Parameters>(p: &P, extra: &[f64]) -> Vec<u8> {
    let flat = p.to_flat();
    flat.iter().chain(extra).flat_map(|v| v.to_le_bytes()).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn assemble(kind: ArtifactKind, mut meta: Metadata, params: Vec<u8>) -> Result<Vec<u8>> {
    meta.content_hash = sha256_hex(&params);
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind.tag());
    let len = u32::try_from(json.len()).map_err(|_| ArtifactError::Shape("metadata too large".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&params);
    Ok(out)
}

/// Parses the header and metadata, checks kind and hash, and returns the
/// metadata with the parameter values.
fn open(bytes: &[u8], expected: ArtifactKind) -> Result<(Metadata, Vec<f64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(ArtifactError::Truncated);
    }
    if bytes[0..4] != MAGIC {
        return Err(ArtifactError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(ArtifactError::UnsupportedVersion(version));
    }
    let found = ArtifactKind::from_tag(bytes[6]);
    if found != Some(expected) {
        let found = found.map_or_else(|| format!("tag {}", bytes[6]), |k| k.as_str().to_string());
        return Err(ArtifactError::KindMismatch { expected: expected.as_str(), found });
    }
    let len = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let json_end = HEADER_LEN.checked_add(len).filter(|&e| e <= bytes.len()).ok_or(ArtifactError::Truncated)?;
    let meta: Metadata = serde_json::from_slice(&bytes[HEADER_LEN..json_end])?;
    if meta.kind != expected {
        return Err(ArtifactError::KindMismatch { expected: expected.as_str(), found: meta.kind.as_str().into() });
    }
    let params = &bytes[json_end..];
    let computed = sha256_hex(params);
    if computed != meta.content_hash {
        return Err(ArtifactError::HashMismatch { stored: meta.content_hash.clone(), computed });
    }
    if params.len() != meta.num_params() * 8 {
        return Err(ArtifactError::Shape(format!(
            "declared shapes need {} parameters, payload holds {} bytes",
            meta.num_params(),
            params.len()
        )));
    }
    let values = params.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((meta, values))
}

/// Hands out consecutive tensors from a flat parameter list.
struct Reader<'a> {
    values: &'a [f64],
    at: usize,
}

impl Reader<'_> {
    fn tensor(&mut self, info: &TensorInfo) -> Result<Tensor> {
        let n: usize = info.shape.iter().product();
        let data = self.values[self.at..self.at + n].to_vec();
        self.at += n;
        Ok(Tensor::from_vec(&info.shape, data)?)
    }

    fn dense(&mut self, layer: &LayerInfo) -> Result<DenseLayer> {
        let [w, b] = layer.tensors.as_slice() else {
            return Err(ArtifactError::Shape(format!("layer {} needs exactly w and b", layer.name)));
        };
        Ok(DenseLayer::from_parts(self.tensor(w)?, self.tensor(b)?, parse_activation(layer.activation.as_deref())?)?)
    }
}

/// Provenance stored next to a policy.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyInfo {
    pub training_seed: u64,
    pub algorithm: Option<String>,
    pub observation_ranges: Option<ObservationRanges>,
}

pub fn encode_policy(policy: &Policy, info: &PolicyInfo) -> Result<Vec<u8>> {
    policy.validate()?;
    let mut layers: Vec<LayerInfo> =
        policy.actor.layers.iter().enumerate().map(|(i, l)| dense_info(format!("dense{i}"), l)).collect();
    let log_std = policy.log_std.clone().unwrap_or_default();
    if policy.log_std.is_some() {
        layers.push(LayerInfo {
            name: "log_std".into(),
            activation: None,
            tensors: vec![TensorInfo { name: "log_std".into(), shape: vec![log_std.len()] }],
        });
    }
    let meta = Metadata {
        kind: ArtifactKind::Policy,
        observation_size: policy.obs_dim(),
        action_size: policy.actor.output_size(),
        layers,
        observation_ranges: info.observation_ranges.clone(),
        input_norm: None,
        output_norm: None,
        training_seed: info.training_seed,
        algorithm: info.algorithm.clone(),
        content_hash: String::new(),
    };
    assemble(ArtifactKind::Policy, meta, param_bytes(&policy.actor, &log_std))
}

pub fn decode_policy(bytes: &[u8]) -> Result<(Policy, Metadata)> {
    let (meta, values) = open(bytes, ArtifactKind::Policy)?;
    let mut r = Reader { values: &values, at: 0 };
    let mut layers = Vec::new();
    let mut log_std = None;
    for l in &meta.layers {
        if l.name == "log_std" {
            let t = r.tensor(l.tensors.first().ok_or_else(|| ArtifactError::Shape("empty log_std layer".into()))?)?;
            log_std = Some(t.data().to_vec());
        } else {
            layers.push(r.dense(l)?);
        }
    }
    let policy = Policy::new(Mlp { layers }, log_std)?;
    if policy.obs_dim() != meta.observation_size || policy.actor.output_size() != meta.action_size {
        return Err(ArtifactError::Shape("declared observation/action sizes disagree with the layers".into()));
    }
    Ok((policy, meta))
}

pub fn encode_plant(model: &PlantModel, training_seed: u64) -> Result<Vec<u8>> {
    let net = &model.net;
    let mut layers: Vec<LayerInfo> = net.encoder.iter().enumerate().map(|(i, l)| dense_info(format!("encoder{i}"), l)).collect();
    let g = &net.gru;
    let gru_tensors = [
        ("w_hz", &g.w_hz),
        ("w_uz", &g.w_uz),
        ("b_z", &g.b_z),
        ("w_hr", &g.w_hr),
        ("w_ur", &g.w_ur),
        ("b_r", &g.b_r),
        ("w_uh", &g.w_uh),
        ("w_hh", &g.w_hh),
        ("b_h", &g.b_h),
    ];
    layers.push(LayerInfo {
        name: "gru".into(),
        activation: None,
        tensors: gru_tensors.iter().map(|(n, t)| TensorInfo { name: (*n).into(), shape: t.shape().to_vec() }).collect(),
    });
    layers.extend(net.decoder.iter().enumerate().map(|(i, l)| dense_info(format!("decoder{i}"), l)));
    let meta = Metadata {
        kind: ArtifactKind::Plant,
        observation_size: net.input_size(),
        action_size: net.output_size(),
        layers,
        observation_ranges: None,
        input_norm: Some(model.input_norm.clone()),
        output_norm: Some(model.output_norm.clone()),
        training_seed,
        algorithm: None,
        content_hash: String::new(),
    };
    assemble(ArtifactKind::Plant, meta, param_bytes(net, &[]))
}

pub fn decode_plant(bytes: &[u8]) -> Result<(PlantModel, Metadata)> {
    let (meta, values) = open(bytes, ArtifactKind::Plant)?;
    let mut r = Reader { values: &values, at: 0 };
    let (mut encoder, mut decoder, mut gru) = (Vec::new(), Vec::new(), None);
    for l in &meta.layers {
        if l.name == "gru" {
            let t: Vec<Tensor> = l.tensors.iter().map(|t| r.tensor(t)).collect::<Result<_>>()?;
            let [w_hz, w_uz, b_z, w_hr, w_ur, b_r, w_uh, w_hh, b_h]: [Tensor; 9] =
                t.try_into().map_err(|_| ArtifactError::Shape("GRU layer needs 9 tensors".into()))?;
            let hidden_size = b_z.len();
            let input_size = w_uz.shape().get(1).copied().unwrap_or(0);
            let cell = GruCell { w_hz, w_uz, b_z, w_hr, w_ur, b_r, w_uh, w_hh, b_h, hidden_size, input_size };
            cell.validate()?;
            gru = Some(cell);
        } else if gru.is_none() {
            encoder.push(r.dense(l)?);
        } else {
            decoder.push(r.dense(l)?);
        }
    }
    let gru = gru.ok_or_else(|| ArtifactError::Shape("plant artifact has no GRU layer".into()))?;
    let (Some(input_norm), Some(output_norm)) = (meta.input_norm.clone(), meta.output_norm.clone()) else {
        return Err(ArtifactError::Shape("plant artifact lacks normalization ranges".into()));
    };
    let model = PlantModel::from_parts(Network { encoder, gru, decoder }, input_norm, output_norm)?;
    Ok((model, meta))
}

pub fn save_policy(path: &Path, policy: &Policy, info: &PolicyInfo) -> Result<()> {
    Ok(std::fs::write(path, encode_policy(policy, info)?)?)
}

pub fn load_policy(path: &Path) -> Result<(Policy, Metadata)> {
    decode_policy(&std::fs::read(path)?)
}

pub fn save_plant(path: &Path, model: &PlantModel, training_seed: u64) -> Result<()> {
    Ok(std::fs::write(path, encode_plant(model, training_seed)?)?)
}

pub fn load_plant(path: &Path) -> Result<(PlantModel, Metadata)> {
    decode_plant(&std::fs::read(path)?)
}
