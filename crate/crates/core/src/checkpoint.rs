//! Checkpoints, deltas between them, parameter classification and grafting.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, BlobRef};
use crate::error::{Error, Result};
use crate::skillpack::SkillPack;
use crate::tensor::{DType, Tensor};

pub const GLTC_MAGIC: &[u8; 4] = b"GLTC";
pub const GLTC_VERSION: u32 = 1;

/// Named tensors plus the identity of the model they belong to. Iteration
/// order is insertion order, which is also the serialized order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub model_id: String,
    tensors: IndexMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(model_id: impl Into<String>) -> Self {
        Checkpoint { model_id: model_id.into(), tensors: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Same names, shapes, dtypes and element bits (model id ignored).
    pub fn tensors_bit_eq(&self, other: &Checkpoint) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let blobs: Vec<Vec<u8>> = self.tensors.values().map(encode_tensor).collect();
        let refs = container::layout(&blobs);
        let header = GltcHeader {
            model_id: self.model_id.clone(),
            tensors: self
                .tensors
                .iter()
                .zip(&refs)
                .map(|((name, t), r)| GltcEntry {
                    name: name.clone(),
                    dtype: t.dtype(),
                    shape: t.shape().to_vec(),
                    offset: r.offset,
                    byte_len: r.byte_len,
                    crc32: r.crc32,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        container::encode(GLTC_MAGIC, GLTC_VERSION, &json, &blobs, &refs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = container::decode(bytes, GLTC_MAGIC, GLTC_VERSION)?;
        let header: GltcHeader = serde_json::from_slice(header)?;
        let mut seen = HashSet::new();
        for e in &header.tensors {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::DuplicateName(e.name.clone()));
            }
        }
        let refs: Vec<BlobRef> = header
            .tensors
            .iter()
            .map(|e| BlobRef { offset: e.offset, byte_len: e.byte_len, crc32: e.crc32 })
            .collect();
        container::check_padding(payload, &refs)?;
        let decoded: Vec<Tensor> = header
            .tensors
            .par_iter()
            .zip(&refs)
            .map(|(e, r)| {
                let bytes = container::blob(payload, r, &e.name)?;
                decode_tensor(&e.name, e.dtype, &e.shape, bytes)
            })
            .collect::<Result<_>>()?;
        let mut ckpt = Checkpoint::new(header.model_id);
        for (e, t) in header.tensors.into_iter().zip(decoded) {
            ckpt.insert(e.name, t)?;
        }
        Ok(ckpt)
    }

    /// One line per tensor with dtype, shape and payload checksum.
    pub fn inspect(&self) -> String {
        let mut out = format!("checkpoint {}\ntensors: {}\n", self.model_id, self.len());
        for (name, t) in self.iter() {
            let crc = crc32fast::hash(&encode_tensor(t));
            out.push_str(&format!("  {name}  dtype={:?} shape={:?} crc32={crc:08x}\n", t.dtype(), t.shape()));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct GltcHeader {
    model_id: String,
    tensors: Vec<GltcEntry>,
}

#[derive(Serialize, Deserialize)]
struct GltcEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    byte_len: u64,
    crc32: u32,
}

fn encode_tensor(t: &Tensor) -> Vec<u8> {
    match t.dtype() {
        DType::F32 => container::f32s_to_bytes(t.data()),
        DType::F16 => t.data().iter().flat_map(|&v| half::f16::from_f32(v).to_le_bytes()).collect(),
    }
}

fn decode_tensor(name: &str, dtype: DType, shape: &[usize], bytes: &[u8]) -> Result<Tensor> {
    let numel: usize = shape.iter().product();
    if bytes.len() != numel * dtype.size_bytes() {
        return Err(Error::InvalidFormat(format!(
            "'{name}': {} bytes for {numel} {dtype:?} elements",
            bytes.len()
        )));
    }
    let data = match dtype {
        DType::F32 => container::bytes_to_f32s(bytes, name)?,
        DType::F16 => bytes
            .chunks_exact(2)
            .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
    };
    Tensor::with_dtype(dtype, shape.to_vec(), data).map_err(|e| match e {
        Error::NonFinite(_) => Error::NonFinite(name.to_string()),
        other => other,
    })
}

/// Elementwise `tuned − base` for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMap {
    pub base_id: String,
    pub tuned_id: String,
    pub deltas: IndexMap<String, Tensor>,
}

impl DeltaMap {
    /// Stores the delta as a checkpoint whose model id is `"<base>-><tuned>"`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_id: format!("{}->{}", self.base_id, self.tuned_id),
            tensors: self.deltas.clone(),
        }
    }

    /// Inverse of [`DeltaMap::to_checkpoint`]. A model id without `->` yields
    /// an empty base id and the whole id as tuned id.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        let (base_id, tuned_id) = match ckpt.model_id.split_once("->") {
            Some((b, t)) => (b.to_string(), t.to_string()),
            None => (String::new(), ckpt.model_id.clone()),
        };
        DeltaMap { base_id, tuned_id, deltas: ckpt.tensors }
    }
}

/// `tuned − base`, computed in 32-bit. Both checkpoints must share names and
/// shapes.
pub fn diff(base: &Checkpoint, tuned: &Checkpoint) -> Result<DeltaMap> {
    let only_in_base: Vec<String> = base.names().filter(|n| tuned.get(n).is_none()).cloned().collect();
    let only_in_tuned: Vec<String> = tuned.names().filter(|n| base.get(n).is_none()).cloned().collect();
    if !only_in_base.is_empty() || !only_in_tuned.is_empty() {
        return Err(Error::NameSetMismatch { only_in_base, only_in_tuned });
    }
    let mut deltas = IndexMap::with_capacity(base.len());
    for (name, b) in base.iter() {
        let t = tuned.get(name).expect("name sets are equal");
        if b.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                left: b.shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
        let data = t.data().iter().zip(b.data()).map(|(&t, &b)| t - b).collect();
        deltas.insert(name.clone(), Tensor::new(b.shape().to_vec(), data)?);
    }
    Ok(DeltaMap { base_id: base.model_id.clone(), tuned_id: tuned.model_id.clone(), deltas })
}

/// Module category that selects the compression operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleClass {
    EmbeddingOrHead,
    Mlp,
    Attention,
    Passthrough,
}

impl ModuleClass {
    pub const ALL: [ModuleClass; 4] =
        [ModuleClass::EmbeddingOrHead, ModuleClass::Mlp, ModuleClass::Attention, ModuleClass::Passthrough];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleClass::EmbeddingOrHead => "embedding_or_head",
            ModuleClass::Mlp => "mlp",
            ModuleClass::Attention => "attention",
            ModuleClass::Passthrough => "passthrough",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRule {
    /// Substring, or a glob over the whole name when it contains `*` or `?`.
    pub pattern: String,
    pub class: ModuleClass,
}

/// Ordered name rules; the first match wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationManifest {
    pub rules: Vec<ManifestRule>,
    pub default: ModuleClass,
}

impl Default for ClassificationManifest {
    fn default() -> Self {
        use ModuleClass::*;
        let groups: [(&[&str], ModuleClass); 3] = [
            (&["embed", "lm_head", "output.weight"], EmbeddingOrHead),
            (&["mlp", "ffn", "fc", "gate_proj", "up_proj", "down_proj"], Mlp),
            (&["attn", "attention", "q_proj", "k_proj", "v_proj", "o_proj"], Attention),
        ];
        let rules = groups
            .iter()
            .flat_map(|(pats, class)| {
                pats.iter().map(move |p| ManifestRule { pattern: p.to_string(), class: *class })
            })
            .collect();
        ClassificationManifest { rules, default: Passthrough }
    }
}

impl ClassificationManifest {
    pub fn empty(default: ModuleClass) -> Self {
        ClassificationManifest { rules: Vec::new(), default }
    }
}

pub fn classify(name: &str, manifest: &ClassificationManifest) -> ModuleClass {
    manifest
        .rules
        .iter()
        .find(|r| pattern_matches(&r.pattern, name))
        .map(|r| r.class)
        .unwrap_or(manifest.default)
}

/// Like [`classify`], but anything that is not a matrix is `Passthrough`.
pub fn classify_tensor(name: &str, shape: &[usize], manifest: &ClassificationManifest) -> ModuleClass {
    if shape.len() != 2 {
        ModuleClass::Passthrough
    } else {
        classify(name, manifest)
    }
}

fn pattern_matches(pattern: &str, name: &str) -> bool {
    if pattern.contains(['*', '?']) {
        glob_match(pattern.as_bytes(), name.as_bytes())
    } else {
        name.contains(pattern)
    }
}

fn glob_match(pat: &[u8], text: &[u8]) -> bool {
    let (mut p, mut t) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while t < text.len() {
        if p < pat.len() && (pat[p] == b'?' || pat[p] == text[t]) {
            p += 1;
            t += 1;
        } else if p < pat.len() && pat[p] == b'*' {
            star = Some((p, t));
            p += 1;
        } else if let Some((sp, st)) = star {
            p = sp + 1;
            t = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    pat[p..].iter().all(|&c| c == b'*')
}

/// Adds `scale · delta` onto `target` in 32-bit. Elements whose scaled delta
/// is zero are left untouched, so a zero delta never rewrites `-0.0`.
pub(crate) fn accumulate(target: &mut Tensor, delta: &[f32], scale: f32) -> Result<()> {
    let dtype = target.dtype();
    let shape = target.shape().to_vec();
    let data: Vec<f32> = target
        .data()
        .iter()
        .zip(delta)
        .map(|(&b, &d)| {
            let step = scale * d;
            if step == 0.0 {
                b
            } else {
                b + step
            }
        })
        .collect();
    *target = Tensor::with_dtype(dtype, shape, data)?;
    Ok(())
}

/// Grafts one pack onto `base`: `base + scale · reconstruct(entry)` for every
/// covered parameter. `base` is not modified; unloading is re-deriving from it.
pub fn apply(base: &Checkpoint, pack: &SkillPack, scale: f32, force: bool) -> Result<Checkpoint> {
    if !force && pack.base_model_id != base.model_id {
        return Err(Error::ModelIdMismatch { expected: pack.base_model_id.clone(), found: base.model_id.clone() });
    }
    let mut out = base.clone();
    if !pack.entries.is_empty() {
        out.model_id = format!("{}+{}", base.model_id, pack.task_tag);
    }
    if scale == 0.0 {
        return Ok(out);
    }
    let recon = pack.reconstruct_all()?;
    for (name, delta) in recon {
        let target = out.get_mut(&name).ok_or_else(|| Error::NameSetMismatch {
            only_in_base: Vec::new(),
            only_in_tuned: vec![name.clone()],
        })?;
        if target.shape() != delta.shape() {
            return Err(Error::ShapeMismatch { name, left: target.shape().to_vec(), right: delta.shape().to_vec() });
        }
        accumulate(target, delta.data(), scale)?;
    }
    Ok(out)
}
