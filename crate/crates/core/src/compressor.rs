//! Module-aware compression of a delta map into a SkillPack, and the inverse
//! dense reconstruction.

use std::collections::{BTreeSet, HashMap};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::checkpoint::{classify_tensor, Checkpoint, ClassificationManifest, DeltaMap, ModuleClass};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::plan::{CalibrationSpec, ClassStrategy, CompressionPlan};
use crate::quant::{self, Axis, BitGroup, QuantizedMatrix};
use crate::skillpack::{CompressedEntry, EntryPayload, SkillPack};
use crate::tensor::{magnitude_prune, Tensor};

/// Source of `h_in × s` input activations per parameter.
#[derive(Debug, Clone)]
pub enum Calibration {
    Synthetic { seed: u64, samples: usize, cache: HashMap<usize, Matrix<f64>> },
    File(Checkpoint),
}

/// Standard-normal activations that depend only on `(seed, width)`.
pub fn synthetic_activations(seed: u64, h_in: usize, samples: usize) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (h_in as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    Matrix::from_fn(h_in, samples, |_, _| StandardNormal.sample(&mut rng))
}

impl Calibration {
    pub fn from_spec(spec: &CalibrationSpec) -> Result<Self> {
        Ok(match spec {
            CalibrationSpec::Synthetic { seed, samples } => {
                Calibration::Synthetic { seed: *seed, samples: *samples, cache: HashMap::new() }
            }
            CalibrationSpec::File { path } => Calibration::File(Checkpoint::load(path)?),
        })
    }

    /// Generates synthetic activations for every width up front so lookups
    /// can run without locking.
    pub fn prepare(&mut self, widths: impl IntoIterator<Item = usize>) {
        if let Calibration::Synthetic { seed, samples, cache } = self {
            for w in widths {
                cache.entry(w).or_insert_with(|| synthetic_activations(*seed, w, *samples));
            }
        }
    }

    pub fn activations(&self, name: &str, h_in: usize) -> Result<Matrix<f64>> {
        match self {
            Calibration::Synthetic { seed, samples, cache } => Ok(cache
                .get(&h_in)
                .cloned()
                .unwrap_or_else(|| synthetic_activations(*seed, h_in, *samples))),
            Calibration::File(ckpt) => {
                let t = ckpt.get(name).ok_or_else(|| Error::MissingCalibration(name.to_string()))?;
                let x = t.to_matrix_f64()?;
                if x.rows() != h_in {
                    return Err(Error::DimensionMismatch(format!(
                        "calibration for '{name}' has {} rows, expected {h_in}",
                        x.rows()
                    )));
                }
                Ok(x)
            }
        }
    }
}

fn compress_pruned(delta: &Tensor, alpha: f64, value_bits: u32) -> Result<EntryPayload> {
    quant::check_bits(value_bits)?;
    let (rows, cols) = delta.dims2()?;
    let sparse = magnitude_prune(delta, alpha)?;
    let mut row_max = vec![0.0f64; rows];
    for (&i, &v) in sparse.indices.iter().zip(&sparse.values) {
        let r = i as usize / cols;
        row_max[r] = row_max[r].max((v as f64).abs());
    }
    let scales: Vec<f32> = row_max.iter().map(|&m| quant::rtn_scale([m], value_bits)).collect();
    let codes = sparse
        .indices
        .iter()
        .zip(&sparse.values)
        .map(|(&i, &v)| quant::quantize_value(v as f64, scales[i as usize / cols], value_bits))
        .collect();
    Ok(EntryPayload::PrunedSparse { alpha, value_bits, indices: sparse.indices, codes, scales })
}

fn compress_svd(
    name: &str,
    delta: &Tensor,
    rank: Option<usize>,
    groups: &[BitGroup],
    damping: f64,
    calib: &Calibration,
) -> Result<EntryPayload> {
    let (m, n) = delta.dims2()?;
    let r = rank.unwrap_or(usize::MAX).min(m.min(n));
    let groups = ClassStrategy::effective_groups(groups, rank.is_none(), r);
    if r == 0 {
        return Err(Error::invalid(format!("'{name}' has an empty dimension")));
    }
    let f = crate::tensor::svd(delta)?.truncate(r)?;
    let x = calib.activations(name, n)?;
    let hinv_v = quant::hessian_factor(&x, damping)?;

    let mut u_codes = vec![0i32; m * r];
    let mut u_scales = Vec::with_capacity(r);
    let mut v_codes = Vec::with_capacity(r * n);
    let mut v_scales = Vec::with_capacity(r);
    for g in &groups {
        let vt_g = f.vt.row_range(g.rank_begin, g.rank_end);
        let qv = quant::gptq_with_factor(&vt_g, &hinv_v, g.bits, Axis::PerRow)?;
        // U sees the activations that actually reach it through the quantized V.
        let sigma_g = &f.sigma[g.rank_begin..g.rank_end];
        let xu = qv.dequantize().cast::<f64>().scale_rows(sigma_g).matmul(&x)?;
        let u_g = f.u.col_range(g.rank_begin, g.rank_end);
        let qu = quant::gptq_matrix(&u_g, &xu, g.bits, damping, Axis::PerColumn)?;

        for i in 0..m {
            for (k, v) in (g.rank_begin..g.rank_end).enumerate() {
                u_codes[i * r + v] = qu.codes[i * g.len() + k];
            }
        }
        u_scales.extend_from_slice(&qu.scales);
        v_codes.extend_from_slice(&qv.codes);
        v_scales.extend_from_slice(&qv.scales);
    }
    let sigma = f.sigma.iter().map(|&s| s as f32).collect();
    let u = QuantizedMatrix { rows: m, cols: r, axis: Axis::PerColumn, groups: groups.clone(), scales: u_scales, codes: u_codes };
    let vt = QuantizedMatrix { rows: r, cols: n, axis: Axis::PerRow, groups: groups.clone(), scales: v_scales, codes: v_codes };
    Ok(EntryPayload::QuantizedSvd { rank: r, groups, sigma, u, vt })
}

/// Compresses one delta under the strategy of `class`. Non-matrix tensors
/// are always stored dense.
pub fn compress_entry(
    name: &str,
    delta: &Tensor,
    class: ModuleClass,
    plan: &CompressionPlan,
    calib: &Calibration,
) -> Result<CompressedEntry> {
    let strategy = if delta.ndim() == 2 { plan.strategies.get(class) } else { &ClassStrategy::Dense };
    let payload = match strategy {
        ClassStrategy::Prune { alpha, value_bits } => compress_pruned(delta, *alpha, *value_bits)?,
        ClassStrategy::SvdQuant { rank, groups } => compress_svd(name, delta, *rank, groups, plan.damping, calib)?,
        ClassStrategy::Dense => EntryPayload::Dense { values: delta.data().to_vec() },
    };
    Ok(CompressedEntry { class, shape: delta.shape().to_vec(), payload })
}

/// Compresses every delta in order, in parallel, with calibration resolved
/// from the plan.
pub fn compress_delta(
    delta: &DeltaMap,
    manifest: &ClassificationManifest,
    plan: &CompressionPlan,
    task_tag: &str,
) -> Result<SkillPack> {
    let calib = Calibration::from_spec(&plan.calibration)?;
    compress_delta_with(delta, manifest, plan, calib, task_tag)
}

pub fn compress_delta_with(
    delta: &DeltaMap,
    manifest: &ClassificationManifest,
    plan: &CompressionPlan,
    mut calib: Calibration,
    task_tag: &str,
) -> Result<SkillPack> {
    plan.validate()?;
    let work: Vec<(&String, &Tensor, ModuleClass)> = delta
        .deltas
        .iter()
        .map(|(name, t)| (name, t, classify_tensor(name, t.shape(), manifest)))
        .collect();
    let widths: BTreeSet<usize> = work
        .iter()
        .filter(|(_, t, c)| t.ndim() == 2 && matches!(plan.strategies.get(*c), ClassStrategy::SvdQuant { .. }))
        .map(|(_, t, _)| t.shape()[1])
        .collect();
    calib.prepare(widths);
    let entries: Vec<CompressedEntry> = work
        .par_iter()
        .map(|(name, t, class)| compress_entry(name, t, *class, plan, &calib))
        .collect::<Result<_>>()?;
    let entries: IndexMap<String, CompressedEntry> =
        work.iter().map(|(name, _, _)| (*name).clone()).zip(entries).collect();
    SkillPack::new(delta.base_id.clone(), delta.tuned_id.clone(), task_tag, plan.clone(), entries)
}

/// Dense 32-bit reconstruction of one entry. Sums are accumulated in 64-bit.
pub fn reconstruct_entry(name: &str, e: &CompressedEntry) -> Result<Tensor> {
    e.validate(name)?;
    let shape = e.shape.clone();
    let data = match &e.payload {
        EntryPayload::PrunedSparse { indices, codes, scales, .. } => {
            let cols = shape[1];
            let mut out = vec![0.0f32; e.numel()];
            for (&i, &c) in indices.iter().zip(codes) {
                out[i as usize] = c as f32 * scales[i as usize / cols];
            }
            out
        }
        EntryPayload::QuantizedSvd { rank, sigma, u, vt, .. } => {
            let (m, n, r) = (shape[0], shape[1], *rank);
            let uhat = u.dequantize();
            let vhat = vt.dequantize();
            // Fold sigma into U once, then a plain m×r·r×n product.
            let us: Vec<f64> =
                (0..m * r).map(|idx| uhat.as_slice()[idx] as f64 * sigma[idx % r] as f64).collect();
            let mut out = vec![0.0f32; m * n];
            out.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
                let mut acc = vec![0.0f64; n];
                for k in 0..r {
                    let a = us[i * r + k];
                    if a == 0.0 {
                        continue;
                    }
                    for (o, &v) in acc.iter_mut().zip(vhat.row(k)) {
                        *o += a * v as f64;
                    }
                }
                for (o, a) in row.iter_mut().zip(acc) {
                    *o = a as f32;
                }
            });
            out
        }
        EntryPayload::Dense { values } => values.clone(),
    };
    Tensor::new(shape, data)
}
