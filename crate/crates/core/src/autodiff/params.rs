use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::array::NdArray;
use crate::binio::{read_f64_le, write_f64_le};
use crate::error::{Error, Result};

/// Index of a parameter in a [`ModelParams`] collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, uniquely named parameter arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    entries: IndexMap<String, NdArray>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter. Names must be unique.
    pub fn register(&mut self, name: impl Into<String>, value: NdArray) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let (id, _) = self.entries.insert_full(name, value);
        Ok(ParamId(id))
    }

    /// Adds a `rows x cols` parameter drawn uniformly from `±bound`.
    pub fn register_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.register(name, NdArray::from_vec(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &NdArray {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut NdArray {
        &mut self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&NdArray> {
        self.entries.get(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid id")
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &NdArray)> {
        self.entries.iter().enumerate().map(|(i, (k, v))| (ParamId(i), k.as_str(), v))
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(NdArray::len).sum()
    }

    /// Sets every value to zero, keeping names and shapes.
    pub fn zero_all(&mut self) {
        for v in self.entries.values_mut() {
            v.data_mut().fill(0.0);
        }
    }

    /// Writes `manifest.json` and `params.bin` into `dir`. `config` is stored
    /// verbatim in the manifest.
    pub fn save(&self, dir: &Path, config: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            dtype: "f64le".into(),
            params: self
                .iter()
                .map(|(_, name, v)| ParamEntry { name: name.to_string(), shape: [v.rows(), v.cols()] })
                .collect(),
            config,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        let flat: Vec<f64> = self.entries.values().flat_map(|v| v.data().iter().copied()).collect();
        write_f64_le(&dir.join("params.bin"), &flat)
    }

    /// Reads a checkpoint written by [`ModelParams::save`].
    pub fn load(dir: &Path) -> Result<(ModelParams, serde_json::Value)> {
        let manifest = read_manifest(dir)?;
        let flat = read_f64_le(&dir.join("params.bin"))?;
        let expected: usize = manifest.params.iter().map(|p| p.shape[0] * p.shape[1]).sum();
        if flat.len() != expected {
            return Err(Error::Data(format!("params.bin holds {} values, manifest expects {expected}", flat.len())));
        }
        let mut params = ModelParams::new();
        let mut offset = 0;
        for p in &manifest.params {
            let size = p.shape[0] * p.shape[1];
            params.register(
                p.name.clone(),
                NdArray::from_vec(p.shape[0], p.shape[1], flat[offset..offset + size].to_vec())?,
            )?;
            offset += size;
        }
        Ok((params, manifest.config))
    }

    /// Copies values from `other` by name; every name and shape must match.
    pub fn assign_from(&mut self, other: &ModelParams) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Mismatch(format!(
                "checkpoint has {} parameters, model expects {}",
                other.len(),
                self.len()
            )));
        }
        for (name, value) in self.entries.iter_mut() {
            let src =
                other.by_name(name).ok_or_else(|| Error::Mismatch(format!("checkpoint lacks parameter {name}")))?;
            if src.shape() != value.shape() {
                return Err(Error::Mismatch(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    value.shape()
                )));
            }
            *value = src.clone();
        }
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub params: Vec<ParamEntry>,
    pub config: serde_json::Value,
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION || manifest.dtype != "f64le" {
        return Err(Error::Data(format!(
            "unsupported checkpoint format {} / {}",
            manifest.format_version, manifest.dtype
        )));
    }
    Ok(manifest)
}

/// Gradient buffers aligned with a [`ModelParams`] collection.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    slots: Vec<NdArray>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients { slots: params.entries.values().map(|v| NdArray::zeros(v.rows(), v.cols())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &NdArray {
        &self.slots[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &NdArray) {
        self.slots[id.0].add_assign(g);
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.slots {
            a.scale_assign(s);
        }
    }

    pub fn zero(&mut self) {
        for a in &mut self.slots {
            a.data_mut().fill(0.0);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.slots.iter().flat_map(|a| a.data()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}
