//! The SkillPack container: compressed delta entries, storage accounting,
//! the `SKPK` file format and a plain-text inspector.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::ModuleClass;
use crate::compressor::reconstruct_entry;
use crate::container::{self, BlobRef};
use crate::error::{Error, Result};
use crate::plan::{ClassStrategy, CompressionPlan};
use crate::quant::{self, Axis, BitGroup, QuantizedMatrix};
use crate::tensor::{retained_count, Tensor};

pub const SKPK_MAGIC: &[u8; 4] = b"SKPK";
pub const SKPK_VERSION: u32 = 1;

/// Baseline precision the storage ratios are measured against.
pub const BASELINE_BITS: u64 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedEntry {
    pub class: ModuleClass,
    pub shape: Vec<usize>,
    pub payload: EntryPayload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EntryPayload {
    /// Retained positions with their quantized values; one scale per row.
    PrunedSparse { alpha: f64, value_bits: u32, indices: Vec<u64>, codes: Vec<i32>, scales: Vec<f32> },
    /// `u` is `h_out × rank` with one scale per column, `vt` is `rank × h_in`
    /// with one scale per row; both share `groups`.
    QuantizedSvd { rank: usize, groups: Vec<BitGroup>, sigma: Vec<f32>, u: QuantizedMatrix, vt: QuantizedMatrix },
    Dense { values: Vec<f32> },
}

impl CompressedEntry {
    pub fn kind(&self) -> &'static str {
        match self.payload {
            EntryPayload::PrunedSparse { .. } => "pruned_sparse",
            EntryPayload::QuantizedSvd { .. } => "quantized_svd",
            EntryPayload::Dense { .. } => "dense",
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// The strategy whose closed-form accounting describes this entry.
    pub fn strategy(&self) -> ClassStrategy {
        match &self.payload {
            EntryPayload::PrunedSparse { alpha, value_bits, .. } => {
                ClassStrategy::Prune { alpha: *alpha, value_bits: *value_bits }
            }
            EntryPayload::QuantizedSvd { rank, groups, .. } => {
                ClassStrategy::SvdQuant { rank: Some(*rank), groups: groups.clone() }
            }
            EntryPayload::Dense { .. } => ClassStrategy::Dense,
        }
    }

    /// Structural checks: index ordering, buffer sizes and code ranges.
    pub fn validate(&self, name: &str) -> Result<()> {
        let numel = self.numel();
        let bad = |msg: String| Error::InvalidFormat(format!("'{name}': {msg}"));
        match &self.payload {
            EntryPayload::PrunedSparse { alpha, value_bits, indices, codes, scales } => {
                let [rows, _] = self.shape[..] else {
                    return Err(bad("pruned entries must be 2-D".into()));
                };
                quant::check_bits(*value_bits)?;
                crate::tensor::check_alpha(*alpha)?;
                if indices.len() != codes.len() || scales.len() != rows {
                    return Err(bad("pruned buffers disagree in length".into()));
                }
                if indices.len() != retained_count(*alpha, numel) {
                    return Err(bad(format!("{} retained values for alpha {alpha}", indices.len())));
                }
                if indices.windows(2).any(|w| w[0] >= w[1]) || indices.last().is_some_and(|&i| i as usize >= numel) {
                    return Err(bad("indices must be strictly increasing and in range".into()));
                }
                let q = quant::qmax(*value_bits);
                if let Some(&c) = codes.iter().find(|c| c.abs() > q) {
                    return Err(Error::CorruptCodes { name: name.to_string(), code: c as i64, bits: *value_bits });
                }
            }
            EntryPayload::QuantizedSvd { rank, groups, sigma, u, vt } => {
                let [m, n] = self.shape[..] else {
                    return Err(bad("svd entries must be 2-D".into()));
                };
                quant::check_groups(groups, *rank)?;
                if sigma.len() != *rank
                    || (u.rows, u.cols, u.axis) != (m, *rank, Axis::PerColumn)
                    || (vt.rows, vt.cols, vt.axis) != (*rank, n, Axis::PerRow)
                    || &u.groups != groups
                    || &vt.groups != groups
                {
                    return Err(bad("svd factor layout disagrees with shape/rank".into()));
                }
                u.validate(name)?;
                vt.validate(name)?;
            }
            EntryPayload::Dense { values } => {
                if values.len() != numel {
                    return Err(bad("dense buffer disagrees with shape".into()));
                }
            }
        }
        Ok(())
    }
}

/// Bit counts and ratios for one class or for the whole pack.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StorageRow {
    /// Payload size at the 16-bit baseline.
    pub original_bits: u64,
    /// Codes, sigma, dense values.
    pub stored_value_bits: u64,
    /// Indices and scales.
    pub stored_overhead_bits: u64,
    pub ratio_value_only: f64,
    pub ratio_total: f64,
}

impl StorageRow {
    fn from_bits(original_bits: u64, stored_value_bits: u64, stored_overhead_bits: u64) -> Self {
        let ratio = |bits: u64| if original_bits == 0 { 0.0 } else { bits as f64 / original_bits as f64 };
        StorageRow {
            original_bits,
            stored_value_bits,
            stored_overhead_bits,
            ratio_value_only: ratio(stored_value_bits),
            ratio_total: ratio(stored_value_bits + stored_overhead_bits),
        }
    }

    fn add(&self, other: &StorageRow) -> StorageRow {
        StorageRow::from_bits(
            self.original_bits + other.original_bits,
            self.stored_value_bits + other.stored_value_bits,
            self.stored_overhead_bits + other.stored_overhead_bits,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StorageStats {
    pub per_class: BTreeMap<ModuleClass, StorageRow>,
    pub total: StorageRow,
}

impl StorageStats {
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = &'a CompressedEntry>) -> Result<Self> {
        let mut stats = StorageStats::default();
        for e in entries {
            let row = storage_ratio(&e.shape, &e.strategy())?;
            let slot = stats.per_class.entry(e.class).or_default();
            *slot = slot.add(&row);
            stats.total = stats.total.add(&row);
        }
        Ok(stats)
    }
}

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        (u64::BITS - (n - 1).leading_zeros()) as u64
    }
}

/// Closed-form storage of one tensor under `strategy`, relative to 16-bit.
///
/// * Prune: `retained · k` value bits; `retained · ceil(log2 N)` index bits
///   plus 32 bits per row scale.
/// * SvdQuant: `Σ_groups len · k · (m + n) + 32 · r` value bits (codes plus
///   32-bit sigma); `2 · 32 · r` scale bits. Rank clamps to `min(m, n)`.
/// * Dense: 32 bits per element.
///
/// Non-matrix shapes are always accounted as dense.
pub fn storage_ratio(shape: &[usize], strategy: &ClassStrategy) -> Result<StorageRow> {
    strategy.validate()?;
    let numel: u64 = shape.iter().map(|&d| d as u64).product();
    let original = BASELINE_BITS * numel;
    let dims = match shape {
        [m, n] => Some((*m as u64, *n as u64)),
        _ => None,
    };
    let (value, overhead) = match (strategy, dims) {
        (ClassStrategy::Prune { alpha, value_bits }, Some((rows, _))) => {
            let kept = retained_count(*alpha, numel as usize) as u64;
            (kept * *value_bits as u64, kept * ceil_log2(numel) + 32 * rows)
        }
        (ClassStrategy::SvdQuant { rank, groups }, Some((m, n))) => {
            let r = rank.unwrap_or(usize::MAX).min(m.min(n) as usize);
            let groups = ClassStrategy::effective_groups(groups, rank.is_none(), r);
            let code_bits: u64 = groups.iter().map(|g| g.len() as u64 * g.bits as u64).sum::<u64>() * (m + n);
            (code_bits + 32 * r as u64, 64 * r as u64)
        }
        _ => (32 * numel, 0),
    };
    Ok(StorageRow::from_bits(original, value, overhead))
}

/// A compressed, transferable delta between two checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillPack {
    pub format_version: u32,
    pub base_model_id: String,
    pub tuned_model_id: String,
    pub task_tag: String,
    pub plan_snapshot: CompressionPlan,
    pub entries: IndexMap<String, CompressedEntry>,
    pub stats: StorageStats,
}

impl SkillPack {
    /// Builds a pack and computes its stats.
    pub fn new(
        base_model_id: impl Into<String>,
        tuned_model_id: impl Into<String>,
        task_tag: impl Into<String>,
        plan_snapshot: CompressionPlan,
        entries: IndexMap<String, CompressedEntry>,
    ) -> Result<Self> {
        let stats = StorageStats::from_entries(entries.values())?;
        Ok(SkillPack {
            format_version: SKPK_VERSION,
            base_model_id: base_model_id.into(),
            tuned_model_id: tuned_model_id.into(),
            task_tag: task_tag.into(),
            plan_snapshot,
            entries,
            stats,
        })
    }

    /// Dense reconstruction of every entry, in entry order.
    pub fn reconstruct_all(&self) -> Result<Vec<(String, Tensor)>> {
        let entries: Vec<(&String, &CompressedEntry)> = self.entries.iter().collect();
        entries
            .par_iter()
            .map(|(name, e)| Ok(((*name).clone(), reconstruct_entry(name, e)?)))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blobs: Vec<Vec<u8>> = Vec::new();
        let mut headers = Vec::with_capacity(self.entries.len());
        let mut roles: Vec<Vec<&'static str>> = Vec::with_capacity(self.entries.len());
        for (name, e) in &self.entries {
            e.validate(name)?;
            let (entry_blobs, entry_roles) = encode_entry(e);
            blobs.extend(entry_blobs);
            roles.push(entry_roles);
            headers.push((name, e));
        }
        let refs = container::layout(&blobs);
        let mut cursor = refs.iter();
        let entries = headers
            .into_iter()
            .zip(roles)
            .map(|((name, e), roles)| EntryHeader::describe(name, e, roles, &mut cursor))
            .collect();
        let header = PackHeader {
            format_version: self.format_version,
            base_model_id: self.base_model_id.clone(),
            tuned_model_id: self.tuned_model_id.clone(),
            task_tag: self.task_tag.clone(),
            plan: self.plan_snapshot.clone(),
            stats: self.stats.clone(),
            entries,
        };
        let json = serde_json::to_vec(&header)?;
        Ok(container::encode(SKPK_MAGIC, SKPK_VERSION, &json, &blobs, &refs))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = container::decode(bytes, SKPK_MAGIC, SKPK_VERSION)?;
        let header: PackHeader = serde_json::from_slice(header)?;
        if header.format_version != SKPK_VERSION {
            return Err(Error::UnsupportedVersion(header.format_version));
        }
        let mut seen = HashSet::new();
        for e in &header.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::DuplicateName(e.name.clone()));
            }
        }
        let refs: Vec<BlobRef> = header
            .entries
            .iter()
            .flat_map(|e| &e.blobs)
            .map(|b| BlobRef { offset: b.offset, byte_len: b.byte_len, crc32: b.crc32 })
            .collect();
        container::check_padding(payload, &refs)?;
        let decoded: Vec<CompressedEntry> =
            header.entries.par_iter().map(|h| decode_entry(h, payload)).collect::<Result<_>>()?;
        let entries: IndexMap<String, CompressedEntry> =
            header.entries.iter().map(|h| h.name.clone()).zip(decoded).collect();
        let recomputed = StorageStats::from_entries(entries.values())?;
        if recomputed != header.stats {
            return Err(Error::StatsMismatch(format!(
                "header total ratio {} vs recomputed {}",
                header.stats.total.ratio_total, recomputed.total.ratio_total
            )));
        }
        Ok(SkillPack {
            format_version: header.format_version,
            base_model_id: header.base_model_id,
            tuned_model_id: header.tuned_model_id,
            task_tag: header.task_tag,
            plan_snapshot: header.plan,
            entries,
            stats: header.stats,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct PackHeader {
    format_version: u32,
    base_model_id: String,
    tuned_model_id: String,
    task_tag: String,
    plan: CompressionPlan,
    stats: StorageStats,
    entries: Vec<EntryHeader>,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    kind: String,
    class: ModuleClass,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    groups: Option<Vec<BitGroup>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value_bits: Option<u32>,
    blobs: Vec<BlobHeader>,
}

#[derive(Serialize, Deserialize)]
struct BlobHeader {
    role: String,
    offset: u64,
    byte_len: u64,
    crc32: u32,
}

impl EntryHeader {
    fn describe<'a>(
        name: &str,
        e: &CompressedEntry,
        roles: Vec<&'static str>,
        refs: &mut impl Iterator<Item = &'a BlobRef>,
    ) -> Self {
        let (mut rank, mut groups, mut alpha, mut value_bits) = (None, None, None, None);
        match &e.payload {
            EntryPayload::PrunedSparse { alpha: a, value_bits: k, .. } => {
                alpha = Some(*a);
                value_bits = Some(*k);
            }
            EntryPayload::QuantizedSvd { rank: r, groups: g, .. } => {
                rank = Some(*r);
                groups = Some(g.clone());
            }
            EntryPayload::Dense { .. } => {}
        }
        let blobs = roles
            .into_iter()
            .map(|role| {
                let r = refs.next().expect("one ref per blob");
                BlobHeader { role: role.to_string(), offset: r.offset, byte_len: r.byte_len, crc32: r.crc32 }
            })
            .collect();
        EntryHeader {
            name: name.to_string(),
            kind: e.kind().to_string(),
            class: e.class,
            shape: e.shape.clone(),
            rank,
            groups,
            alpha,
            value_bits,
            blobs,
        }
    }
}

fn index_bytes(indices: &[u64], numel: usize) -> Vec<u8> {
    if (numel as u64) < (1u64 << 32) {
        indices.iter().flat_map(|&i| (i as u32).to_le_bytes()).collect()
    } else {
        indices.iter().flat_map(|&i| i.to_le_bytes()).collect()
    }
}

/// Codes of the vectors in `g`, vector by vector.
fn group_codes(q: &QuantizedMatrix, g: &BitGroup) -> Vec<i32> {
    (g.rank_begin..g.rank_end).flat_map(|v| q.vector_codes(v)).collect()
}

fn encode_entry(e: &CompressedEntry) -> (Vec<Vec<u8>>, Vec<&'static str>) {
    match &e.payload {
        EntryPayload::PrunedSparse { value_bits, indices, codes, scales, .. } => (
            vec![
                index_bytes(indices, e.numel()),
                quant::pack_codes(codes, *value_bits),
                container::f32s_to_bytes(scales),
            ],
            vec!["indices", "values", "scales"],
        ),
        EntryPayload::QuantizedSvd { groups, sigma, u, vt, .. } => {
            let mut blobs = vec![container::f32s_to_bytes(sigma)];
            let mut roles = vec!["sigma"];
            for g in groups {
                blobs.push(quant::pack_codes(&group_codes(u, g), g.bits));
                roles.push("codes_u");
            }
            blobs.push(container::f32s_to_bytes(&u.scales));
            roles.push("scales_u");
            for g in groups {
                blobs.push(quant::pack_codes(&group_codes(vt, g), g.bits));
                roles.push("codes_v");
            }
            blobs.push(container::f32s_to_bytes(&vt.scales));
            roles.push("scales_v");
            (blobs, roles)
        }
        EntryPayload::Dense { values } => (vec![container::f32s_to_bytes(values)], vec!["dense"]),
    }
}

fn decode_entry(h: &EntryHeader, payload: &[u8]) -> Result<CompressedEntry> {
    let name = h.name.as_str();
    let bad = |msg: &str| Error::InvalidFormat(format!("'{name}': {msg}"));
    let mut blobs = h.blobs.iter();
    let mut next = |role: &str| -> Result<&[u8]> {
        let b = blobs.next().ok_or_else(|| bad(&format!("missing '{role}' blob")))?;
        if b.role != role {
            return Err(bad(&format!("expected '{role}' blob, found '{}'", b.role)));
        }
        container::blob(payload, &BlobRef { offset: b.offset, byte_len: b.byte_len, crc32: b.crc32 }, name)
    };
    let numel: usize = h.shape.iter().product();
    let payload = match h.kind.as_str() {
        "pruned_sparse" => {
            let (Some(alpha), Some(value_bits)) = (h.alpha, h.value_bits) else {
                return Err(bad("pruned entry needs alpha and value_bits"));
            };
            quant::check_bits(value_bits)?;
            crate::tensor::check_alpha(alpha)?;
            let kept = retained_count(alpha, numel);
            let raw = next("indices")?;
            let indices: Vec<u64> = if (numel as u64) < (1u64 << 32) {
                if raw.len() != kept * 4 {
                    return Err(bad("index blob length"));
                }
                raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as u64).collect()
            } else {
                if raw.len() != kept * 8 {
                    return Err(bad("index blob length"));
                }
                raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()
            };
            let codes = quant::unpack_codes(next("values")?, value_bits, kept)?;
            let scales = container::bytes_to_f32s(next("scales")?, name)?;
            EntryPayload::PrunedSparse { alpha, value_bits, indices, codes, scales }
        }
        "quantized_svd" => {
            let (Some(rank), Some(groups)) = (h.rank, h.groups.clone()) else {
                return Err(bad("svd entry needs rank and groups"));
            };
            let [m, n] = h.shape[..] else {
                return Err(bad("svd entries must be 2-D"));
            };
            quant::check_groups(&groups, rank)?;
            let sigma = container::bytes_to_f32s(next("sigma")?, name)?;
            let mut u_vectors = Vec::with_capacity(rank);
            for g in &groups {
                let codes = quant::unpack_codes(next("codes_u")?, g.bits, g.len() * m)?;
                u_vectors.extend(codes.chunks(m.max(1)).take(g.len()).map(<[i32]>::to_vec));
            }
            let u_scales = container::bytes_to_f32s(next("scales_u")?, name)?;
            let mut v_codes = Vec::with_capacity(rank * n);
            for g in &groups {
                v_codes.extend(quant::unpack_codes(next("codes_v")?, g.bits, g.len() * n)?);
            }
            let v_scales = container::bytes_to_f32s(next("scales_v")?, name)?;
            let mut u_codes = vec![0i32; m * rank];
            for (v, col) in u_vectors.iter().enumerate() {
                for (i, &c) in col.iter().enumerate() {
                    u_codes[i * rank + v] = c;
                }
            }
            let u = QuantizedMatrix {
                rows: m,
                cols: rank,
                axis: Axis::PerColumn,
                groups: groups.clone(),
                scales: u_scales,
                codes: u_codes,
            };
            let vt = QuantizedMatrix {
                rows: rank,
                cols: n,
                axis: Axis::PerRow,
                groups: groups.clone(),
                scales: v_scales,
                codes: v_codes,
            };
            EntryPayload::QuantizedSvd { rank, groups, sigma, u, vt }
        }
        "dense" => EntryPayload::Dense { values: container::bytes_to_f32s(next("dense")?, name)? },
        other => return Err(bad(&format!("unknown entry kind '{other}'"))),
    };
    if blobs.next().is_some() {
        return Err(bad("unexpected extra blobs"));
    }
    let entry = CompressedEntry { class: h.class, shape: h.shape.clone(), payload };
    entry.validate(name)?;
    Ok(entry)
}

fn pct(r: f64) -> String {
    format!("{:.4}%", r * 100.0)
}

/// Human-readable summary with a stable layout.
pub fn inspect(p: &SkillPack) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "skillpack v{}", p.format_version);
    let _ = writeln!(out, "base_model_id: {}", p.base_model_id);
    let _ = writeln!(out, "tuned_model_id: {}", p.tuned_model_id);
    let _ = writeln!(out, "task_tag: {}", p.task_tag);
    let _ = writeln!(out, "entries: {}", p.entries.len());
    for (name, e) in &p.entries {
        let detail = match &e.payload {
            EntryPayload::PrunedSparse { alpha, value_bits, indices, .. } => {
                format!("alpha={alpha} value_bits={value_bits} retained={}", indices.len())
            }
            EntryPayload::QuantizedSvd { rank, groups, .. } => {
                let gs: Vec<String> =
                    groups.iter().map(|g| format!("[{},{})@{}", g.rank_begin, g.rank_end, g.bits)).collect();
                format!("rank={rank} groups={}", gs.join(","))
            }
            EntryPayload::Dense { .. } => String::new(),
        };
        let _ = writeln!(
            out,
            "  {name}  kind={} class={} shape={:?} {detail}",
            e.kind(),
            e.class.as_str(),
            e.shape
        );
    }
    let _ = writeln!(out, "storage (baseline {BASELINE_BITS}-bit):");
    for (class, row) in &p.stats.per_class {
        let _ = writeln!(
            out,
            "  {:<18} value_only={} total={} original_bits={}",
            class.as_str(),
            pct(row.ratio_value_only),
            pct(row.ratio_total),
            row.original_bits
        );
    }
    let t = &p.stats.total;
    let _ = writeln!(
        out,
        "  {:<18} value_only={} total={} original_bits={}",
        "total",
        pct(t.ratio_value_only),
        pct(t.ratio_total),
        t.original_bits
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::BitGroup;

    #[test]
    fn embedding_row_is_twelve_and_a_half_percent() {
        let row = storage_ratio(&[4096, 4096], &ClassStrategy::Prune { alpha: 0.5, value_bits: 4 }).unwrap();
        assert_eq!(row.ratio_value_only, 0.125);
        assert!(row.ratio_total > row.ratio_value_only);
    }

    #[test]
    fn small_svd_example() {
        let s = ClassStrategy::SvdQuant { rank: Some(2), groups: vec![BitGroup::new(0, 2, 8)] };
        let row = storage_ratio(&[4, 4], &s).unwrap();
        assert_eq!(row.ratio_value_only, 0.75);
        // Codes alone: 2·8·8 / 256.
        assert_eq!(row.stored_value_bits - 32 * 2, 128);
        assert_eq!(row.stored_overhead_bits, 128);
    }

    #[test]
    fn dense_is_two_hundred_percent() {
        let row = storage_ratio(&[3, 5], &ClassStrategy::Dense).unwrap();
        assert_eq!(row.ratio_value_only, 2.0);
        assert_eq!(row.ratio_total, 2.0);
        let bias = storage_ratio(&[7], &ClassStrategy::Prune { alpha: 0.5, value_bits: 4 }).unwrap();
        assert_eq!(bias.ratio_value_only, 2.0);
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(16), 4);
        assert_eq!(ceil_log2(17), 5);
    }

    #[test]
    fn empty_pack_report() {
        let p = SkillPack::new("b", "t", "none", CompressionPlan::dense(), IndexMap::new()).unwrap();
        assert_eq!(p.stats.total.ratio_total, 0.0);
        let report = inspect(&p);
        assert!(report.contains("entries: 0"));
        assert!(report.contains("total              value_only=0.0000% total=0.0000%"));
        let back = SkillPack::from_bytes(&p.to_bytes().unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
