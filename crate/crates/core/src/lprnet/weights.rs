//! Weight file: `LPRNETW1`, a `u32` little-endian manifest length, a UTF-8
//! JSON manifest, then a blob of little-endian `f32` values. Offsets in the
//! manifest are byte offsets from the start of the blob; tensors are
//! row-major.
//!
//! Stored values are the effective ones (`rho`, `tau`, `mu` positive,
//! `b >= 1`). In memory they are `f64`; a file written from `f64` weights
//! rounds each value to the nearest `f32`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BlockWeights, MuCnnWeights, MuSource, NetConfig, NetWeights, ParamSet};
use crate::error::{Result, WeightsError};
use crate::imgcore::atomic_write;
use crate::lprnet::Conv3x3;
use crate::operators::{AdjointKernel, ConvKernel2x2, GradientKernel, PatchConfig};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"LPRNETW1";
const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset_bytes: u64,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub config_id: u8,
    pub p: usize,
    pub o: usize,
    pub tensors: Vec<TensorEntry>,
}

/// Names and shapes of every tensor a configuration requires, in file order.
pub fn tensor_layout(config: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = vec![
        ("shared.rho_t".to_string(), vec![1]),
        ("shared.rho_s".to_string(), vec![1]),
        ("shared.tau".to_string(), vec![1]),
    ];
    for k in 0..config.blocks {
        let pre = format!("block.{k}");
        out.push((format!("{pre}.D_T.weight"), vec![2, 1, 2, 2]));
        out.push((format!("{pre}.D_X.weight"), vec![2, 1, 2, 2]));
        out.push((format!("{pre}.D_X_tilde.weight"), vec![1, 2, 2, 2]));
        out.push((format!("{pre}.D_Y.weight"), vec![2, 1, 2, 2]));
        if !config.params.uses_cnn() {
            out.push((format!("{pre}.mu"), vec![1]));
        }
        if config.params.learns_b() {
            out.push((format!("{pre}.b"), vec![1]));
        }
        if config.params.uses_cnn() {
            let m = format!("{pre}.mucnn");
            out.push((format!("{m}.conv1.weight"), vec![4, 2, 3, 3]));
            out.push((format!("{m}.conv1.bias"), vec![4]));
            out.push((format!("{m}.conv2.weight"), vec![8, 4, 3, 3]));
            out.push((format!("{m}.conv2.bias"), vec![8]));
            out.push((format!("{m}.conv3.weight"), vec![16, 8, 3, 3]));
            out.push((format!("{m}.conv3.bias"), vec![16]));
            out.push((format!("{m}.fc.weight"), vec![1, 16]));
            out.push((format!("{m}.fc.bias"), vec![1]));
        }
    }
    out
}

fn flatten(net: &NetWeights) -> Vec<(String, Vec<f64>)> {
    let mut values: HashMap<String, Vec<f64>> = HashMap::new();
    values.insert("shared.rho_t".into(), vec![net.rho_t]);
    values.insert("shared.rho_s".into(), vec![net.rho_s]);
    values.insert("shared.tau".into(), vec![net.tau]);
    for (k, b) in net.blocks.iter().enumerate() {
        let pre = format!("block.{k}");
        values.insert(format!("{pre}.D_T.weight"), b.d_t.kernel().taps().to_vec());
        values.insert(format!("{pre}.D_X.weight"), b.d_x.kernel().taps().to_vec());
        values.insert(
            format!("{pre}.D_X_tilde.weight"),
            b.d_x_tilde.kernel().taps().to_vec(),
        );
        values.insert(format!("{pre}.D_Y.weight"), b.d_y.kernel().taps().to_vec());
        match &b.mu {
            MuSource::Fixed(mu) => {
                values.insert(format!("{pre}.mu"), vec![*mu]);
            }
            MuSource::Cnn(w) => {
                let m = format!("{pre}.mucnn");
                for (name, layer) in [
                    ("conv1", &w.conv1),
                    ("conv2", &w.conv2),
                    ("conv3", &w.conv3),
                ] {
                    values.insert(format!("{m}.{name}.weight"), layer.weight.clone());
                    values.insert(format!("{m}.{name}.bias"), layer.bias.clone());
                }
                values.insert(format!("{m}.fc.weight"), w.fc_weight.clone());
                values.insert(format!("{m}.fc.bias"), vec![w.fc_bias]);
            }
        }
        if let Some(bv) = b.b {
            values.insert(format!("{pre}.b"), vec![bv]);
        }
    }
    tensor_layout(&net.config)
        .into_iter()
        .map(|(name, _)| {
            let v = values.remove(&name).unwrap_or_default();
            (name, v)
        })
        .collect()
}

pub fn encode_weights(net: &NetWeights) -> Result<Vec<u8>> {
    net.validate()?;
    let layout = tensor_layout(&net.config);
    let flat = flatten(net);
    let mut tensors = Vec::with_capacity(layout.len());
    let mut blob = Vec::new();
    for ((name, shape), (_, values)) in layout.into_iter().zip(&flat) {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>(), "{name}");
        tensors.push(TensorEntry {
            name,
            shape,
            offset_bytes: blob.len() as u64,
        });
        for &x in values {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        k: net.config.blocks,
        n: net.config.pgd_iters,
        config_id: net.config.params.id(),
        p: net.config.patch.size,
        o: net.config.patch.overlap,
        tensors,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(12 + json.len() + blob.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

fn split_header(bytes: &[u8]) -> std::result::Result<(Manifest, &[u8]), WeightsError> {
    if bytes.len() < 8 || &bytes[..8] != WEIGHTS_MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let len_bytes: [u8; 4] = bytes
        .get(8..12)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| WeightsError::LengthMismatch("file ends inside the header".into()))?;
    let len = u32::from_le_bytes(len_bytes) as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| {
        WeightsError::LengthMismatch(format!(
            "manifest length {len} exceeds the {} bytes after the header",
            bytes.len() - 12
        ))
    })?;
    let value: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| WeightsError::Manifest(e.to_string()))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(WeightsError::VersionMismatch(v)),
        None => return Err(WeightsError::Manifest("missing format_version".into())),
    }
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|e| WeightsError::Manifest(e.to_string()))?;
    Ok((manifest, &bytes[12 + len..]))
}

fn manifest_config(m: &Manifest) -> std::result::Result<NetConfig, WeightsError> {
    let params = ParamSet::from_id(m.config_id)
        .ok_or_else(|| WeightsError::Manifest(format!("config_id {} not in 1..=4", m.config_id)))?;
    let patch = PatchConfig::new(m.p, m.o).map_err(|e| WeightsError::Manifest(e.to_string()))?;
    Ok(NetConfig {
        blocks: m.k,
        pgd_iters: m.n,
        params,
        patch,
    })
}

/// Checks tensor names and shapes against the configuration, then offsets
/// against the blob. Returns each tensor's values by name.
fn read_tensors(
    m: &Manifest,
    config: &NetConfig,
    blob: &[u8],
) -> std::result::Result<HashMap<String, Vec<f64>>, WeightsError> {
    let layout = tensor_layout(config);
    let mut by_name: HashMap<&str, &TensorEntry> = HashMap::new();
    for t in &m.tensors {
        if by_name.insert(&t.name, t).is_some() {
            return Err(WeightsError::Manifest(format!(
                "duplicate tensor {}",
                t.name
            )));
        }
    }
    let expected: HashSet<&str> = layout.iter().map(|(n, _)| n.as_str()).collect();
    for (name, shape) in &layout {
        let entry = by_name
            .get(name.as_str())
            .ok_or_else(|| WeightsError::MissingTensor(name.clone()))?;
        if &entry.shape != shape {
            return Err(WeightsError::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                found: entry.shape.clone(),
            });
        }
    }
    if let Some(extra) = m
        .tensors
        .iter()
        .find(|t| !expected.contains(t.name.as_str()))
    {
        return Err(WeightsError::UnexpectedTensor(extra.name.clone()));
    }

    let total: usize = m.tensors.iter().map(|t| 4 * t.numel()).sum();
    if blob.len() != total {
        return Err(WeightsError::LengthMismatch(format!(
            "manifest describes {total} bytes of tensor data, blob has {}",
            blob.len()
        )));
    }
    let mut ranges: Vec<(usize, usize, &str)> = Vec::with_capacity(m.tensors.len());
    for t in &m.tensors {
        let start = t.offset_bytes as usize;
        let end = start + 4 * t.numel();
        if t.offset_bytes % 4 != 0 || end > blob.len() {
            return Err(WeightsError::LengthMismatch(format!(
                "{} occupies bytes {start}..{end} of a {}-byte blob",
                t.name,
                blob.len()
            )));
        }
        ranges.push((start, end, &t.name));
    }
    ranges.sort_unstable();
    if let Some(w) = ranges.windows(2).find(|w| w[1].0 < w[0].1) {
        return Err(WeightsError::LengthMismatch(format!(
            "tensors {} and {} overlap",
            w[0].2, w[1].2
        )));
    }

    let mut values = HashMap::with_capacity(m.tensors.len());
    for t in &m.tensors {
        let start = t.offset_bytes as usize;
        let data: Vec<f64> = blob[start..start + 4 * t.numel()]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(WeightsError::InvalidValue {
                name: t.name.clone(),
                reason: "non-finite value".into(),
            });
        }
        values.insert(t.name.clone(), data);
    }
    Ok(values)
}

fn assemble(
    config: NetConfig,
    mut values: HashMap<String, Vec<f64>>,
) -> std::result::Result<NetWeights, WeightsError> {
    let mut take = |name: &str| {
        values
            .remove(name)
            .expect("presence checked against layout")
    };
    let positive = |name: &str, x: f64| {
        if x > 0.0 {
            Ok(x)
        } else {
            Err(WeightsError::InvalidValue {
                name: name.into(),
                reason: format!("must be positive, got {x}"),
            })
        }
    };
    let rho_t = positive("shared.rho_t", take("shared.rho_t")[0])?;
    let rho_s = positive("shared.rho_s", take("shared.rho_s")[0])?;
    let tau = positive("shared.tau", take("shared.tau")[0])?;
    // shapes were checked, so kernel construction cannot fail
    let grad_kernel =
        |taps: Vec<f64>| GradientKernel::new(ConvKernel2x2::new(2, 1, taps).expect("2x1x2x2"));
    let mut blocks = Vec::with_capacity(config.blocks);
    for k in 0..config.blocks {
        let pre = format!("block.{k}");
        let d_t = grad_kernel(take(&format!("{pre}.D_T.weight"))).expect("shape checked");
        let d_x = grad_kernel(take(&format!("{pre}.D_X.weight"))).expect("shape checked");
        let d_x_tilde = AdjointKernel::new(
            ConvKernel2x2::new(1, 2, take(&format!("{pre}.D_X_tilde.weight"))).expect("1x2x2x2"),
        )
        .expect("shape checked");
        let d_y = grad_kernel(take(&format!("{pre}.D_Y.weight"))).expect("shape checked");
        let mu = if config.params.uses_cnn() {
            let m = format!("{pre}.mucnn");
            let mut layer = |name: &str, o: usize, i: usize| Conv3x3 {
                out_channels: o,
                in_channels: i,
                weight: take(&format!("{m}.{name}.weight")),
                bias: take(&format!("{m}.{name}.bias")),
            };
            let conv1 = layer("conv1", 4, 2);
            let conv2 = layer("conv2", 8, 4);
            let conv3 = layer("conv3", 16, 8);
            MuSource::Cnn(Box::new(MuCnnWeights {
                conv1,
                conv2,
                conv3,
                fc_weight: take(&format!("{m}.fc.weight")),
                fc_bias: take(&format!("{m}.fc.bias"))[0],
            }))
        } else {
            let name = format!("{pre}.mu");
            MuSource::Fixed(positive(&name, take(&name)[0])?)
        };
        let b = if config.params.learns_b() {
            let name = format!("{pre}.b");
            let bv = take(&name)[0];
            if bv < 1.0 {
                return Err(WeightsError::InvalidValue {
                    name,
                    reason: format!("must be >= 1, got {bv}"),
                });
            }
            Some(bv)
        } else {
            None
        };
        blocks.push(BlockWeights {
            d_t,
            d_x,
            d_x_tilde,
            d_y,
            mu,
            b,
        });
    }
    Ok(NetWeights {
        config,
        rho_t,
        rho_s,
        tau,
        blocks,
    })
}

pub fn decode_weights(bytes: &[u8]) -> Result<NetWeights> {
    let (manifest, blob) = split_header(bytes)?;
    let config = manifest_config(&manifest)?;
    let values = read_tensors(&manifest, &config, blob)?;
    Ok(assemble(config, values)?)
}

/// Reads and validates only the manifest (names and shapes, not values).
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let bytes = fs::read(path.as_ref())?;
    let (manifest, blob) = split_header(&bytes)?;
    let config = manifest_config(&manifest)?;
    read_tensors(&manifest, &config, blob)?;
    Ok(manifest)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<NetWeights> {
    decode_weights(&fs::read(path.as_ref())?)
}

/// Writes atomically: a failed save leaves any existing file untouched.
pub fn save_weights(path: impl AsRef<Path>, net: &NetWeights) -> Result<()> {
    let bytes = encode_weights(net)?;
    atomic_write(path.as_ref(), &bytes)
}
