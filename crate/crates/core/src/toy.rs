//! Synthetic base/tuned checkpoint pairs, a fixed toy forward map and the
//! retention evaluator built on them.
//!
//! Base weights are snapped to a 2^-23 grid and every injected delta lives on
//! the same grid, so `tuned - base` and `base + (tuned - base)` are exact in
//! 32-bit and a dense graft reproduces the tuned checkpoint bit for bit.

use rand::seq::index;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{apply, classify_tensor, Checkpoint, ClassificationManifest, DeltaMap, ModuleClass};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::plan::{ClassStrategies, ClassStrategy, CompressionPlan};
use crate::quant::BitGroup;
use crate::skillpack::{storage_ratio, SkillPack, StorageRow};
use crate::tensor::Tensor;

const GRID: f64 = (1u64 << 23) as f64;
const FACTOR_GRID: f64 = (1u64 << 9) as f64;
const BASE_CLAMP: f64 = 0.9;
pub const PROBE_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecipe {
    /// Rank of the low-rank update on every attention and MLP projection.
    pub rank: usize,
    /// Nonzeros injected into each embedding/head matrix.
    pub sparse_nnz: usize,
    /// Standard deviation of dense noise on every matrix.
    pub noise: f64,
    /// Overall delta magnitude; entries have roughly `delta_scale / √d` spread.
    pub delta_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub seed: u64,
    pub layers: usize,
    pub d: usize,
    pub mlp: usize,
    pub vocab: usize,
    pub recipe: DeltaRecipe,
}

impl ToySpec {
    pub fn with_seed(seed: u64) -> Self {
        ToySpec {
            seed,
            layers: 2,
            d: 64,
            mlp: 256,
            vocab: 512,
            recipe: DeltaRecipe { rank: 8, sparse_nnz: 16, noise: 0.0, delta_scale: 0.1 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d == 0 || self.mlp == 0 || self.vocab == 0 {
            return Err(Error::invalid("toy dimensions must all be at least 1"));
        }
        let r = &self.recipe;
        if r.rank > self.d.min(self.mlp) {
            return Err(Error::invalid(format!("recipe rank {} exceeds the smallest matrix dimension", r.rank)));
        }
        if r.sparse_nnz > self.vocab * self.d {
            return Err(Error::invalid("sparse nnz exceeds the embedding size"));
        }
        if !(r.noise >= 0.0 && r.noise.is_finite()) || !(r.delta_scale >= 0.0 && r.delta_scale.is_finite()) {
            return Err(Error::invalid("noise and delta scale must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Parameter names and shapes in checkpoint order.
    pub fn parameters(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d, self.mlp);
        let mut out = vec![("model.embed_tokens.weight".to_string(), vec![self.vocab, d])];
        for i in 0..self.layers {
            let p = format!("model.layers.{i}");
            out.push((format!("{p}.input_layernorm.weight"), vec![d]));
            for proj in ["q_proj", "k_proj", "v_proj", "o_proj"] {
                out.push((format!("{p}.self_attn.{proj}.weight"), vec![d, d]));
            }
            out.push((format!("{p}.post_attention_layernorm.weight"), vec![d]));
            out.push((format!("{p}.mlp.gate_proj.weight"), vec![f, d]));
            out.push((format!("{p}.mlp.up_proj.weight"), vec![f, d]));
            out.push((format!("{p}.mlp.down_proj.weight"), vec![d, f]));
        }
        out.push(("model.norm.weight".to_string(), vec![d]));
        out.push(("lm_head.weight".to_string(), vec![self.vocab, d]));
        out
    }
}

fn snap(x: f64) -> f64 {
    (x * GRID).round() / GRID
}

fn to_f32(values: Vec<f64>) -> Vec<f32> {
    values.into_iter().map(|v| v as f32).collect()
}

/// Rank-`r` product of integer-valued factors on a 2^-9 grid; the result is
/// exactly rank `r` (generically) and lies on a 2^-18 grid.
fn low_rank_delta(rng: &mut ChaCha8Rng, m: usize, n: usize, r: usize, target_std: f64) -> Vec<f64> {
    let q = (3.0 * target_std * FACTOR_GRID * FACTOR_GRID / (r as f64).sqrt()).sqrt().round().max(1.0) as i64;
    let l: Vec<i64> = (0..m * r).map(|_| rng.random_range(-q..=q)).collect();
    let rt: Vec<i64> = (0..r * n).map(|_| rng.random_range(-q..=q)).collect();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let s: i64 = (0..r).map(|k| l[i * r + k] * rt[k * n + j]).sum();
            out[i * n + j] = s as f64 / (FACTOR_GRID * FACTOR_GRID);
        }
    }
    out
}

/// Deterministic base/tuned pair. Norm gains are ones and are left unchanged.
pub fn gen_toy(spec: &ToySpec) -> Result<(Checkpoint, Checkpoint)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let manifest = ClassificationManifest::default();
    let recipe = &spec.recipe;
    let target_std = recipe.delta_scale / (spec.d as f64).sqrt();
    let noise = Normal::new(0.0, recipe.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut base = Checkpoint::new(format!("toy-{}", spec.seed));
    let mut tuned = Checkpoint::new(format!("toy-{}-tuned", spec.seed));

    for (name, shape) in spec.parameters() {
        if shape.len() == 1 {
            let ones = Tensor::new(shape.clone(), vec![1.0; shape[0]])?;
            base.insert(name.clone(), ones.clone())?;
            tuned.insert(name, ones)?;
            continue;
        }
        let (m, n) = (shape[0], shape[1]);
        let scale = 1.0 / (spec.d as f64).sqrt();
        let b: Vec<f64> = (0..m * n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                snap((z * scale).clamp(-BASE_CLAMP, BASE_CLAMP))
            })
            .collect();
        let mut delta = vec![0.0f64; m * n];
        match classify_tensor(&name, &shape, &manifest) {
            ModuleClass::Mlp | ModuleClass::Attention if recipe.rank > 0 => {
                delta = low_rank_delta(&mut rng, m, n, recipe.rank, target_std);
            }
            ModuleClass::EmbeddingOrHead if recipe.sparse_nnz > 0 => {
                for pos in index::sample(&mut rng, m * n, recipe.sparse_nnz) {
                    let mag = recipe.delta_scale * rng.random_range(0.5..1.0);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    delta[pos] = snap(sign * mag);
                }
            }
            _ => {}
        }
        if recipe.noise > 0.0 {
            for v in delta.iter_mut() {
                *v = snap(*v + noise.sample(&mut rng));
            }
        }
        // Keep |tuned| < 2 so it stays on the grid in 32-bit.
        let t: Vec<f64> = b.iter().zip(&delta).map(|(&b, &d)| (b + d).clamp(-1.99, 1.99)).collect();
        base.insert(name.clone(), Tensor::new(shape.clone(), to_f32(b))?)?;
        tuned.insert(name, Tensor::new(shape, to_f32(t))?)?;
    }
    Ok((base, tuned))
}

/// Architecture recovered from a checkpoint's parameter names and shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Arch {
    layers: usize,
    d: usize,
    vocab: usize,
}

fn arch(c: &Checkpoint) -> Result<Arch> {
    let embed = c
        .get("model.embed_tokens.weight")
        .ok_or_else(|| Error::invalid("checkpoint lacks model.embed_tokens.weight"))?;
    let (vocab, d) = embed.dims2()?;
    let mut layers = 0;
    while c.get(&format!("model.layers.{layers}.self_attn.q_proj.weight")).is_some() {
        layers += 1;
    }
    Ok(Arch { layers, d, vocab })
}

fn param(c: &Checkpoint, name: &str) -> Result<Matrix<f64>> {
    let t = c.get(name).ok_or_else(|| Error::invalid(format!("checkpoint lacks '{name}'")))?;
    if t.ndim() == 1 {
        Matrix::from_vec(1, t.numel(), t.data().iter().map(|&v| v as f64).collect())
    } else {
        t.to_matrix_f64()
    }
}

fn rms_norm(h: &Matrix<f64>, gain: &Matrix<f64>) -> Matrix<f64> {
    let g = gain.row(0);
    let mut out = h.clone();
    for i in 0..h.rows() {
        let row = out.row_mut(i);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + 1e-6).sqrt();
        for (v, &g) in row.iter_mut().zip(g) {
            *v *= inv * g;
        }
    }
    out
}

/// `x · wᵀ` for a weight stored as `out × in`.
fn linear(x: &Matrix<f64>, w: &Matrix<f64>) -> Result<Matrix<f64>> {
    x.matmul(&w.transpose())
}

fn add_in_place(h: &mut Matrix<f64>, delta: &Matrix<f64>) {
    for (a, b) in h.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *a += b;
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Toy forward map over one token sequence, in 64-bit. Per layer: RMS norm,
/// single-head causal attention through q/k/v/o with a residual, RMS norm, a
/// SiLU-gated MLP with a residual. Then a final norm and the output head.
/// Returns `len × vocab` logits.
pub fn forward(c: &Checkpoint, tokens: &[usize]) -> Result<Matrix<f64>> {
    let a = arch(c)?;
    let embed = param(c, "model.embed_tokens.weight")?;
    if let Some(&t) = tokens.iter().find(|&&t| t >= a.vocab) {
        return Err(Error::invalid(format!("token {t} outside vocabulary of {}", a.vocab)));
    }
    let len = tokens.len();
    let mut h = Matrix::from_fn(len, a.d, |i, j| embed[(tokens[i], j)]);
    let inv_sqrt_d = 1.0 / (a.d as f64).sqrt();
    for l in 0..a.layers {
        let p = |s: &str| param(c, &format!("model.layers.{l}.{s}"));
        let x = rms_norm(&h, &p("input_layernorm.weight")?);
        let q = linear(&x, &p("self_attn.q_proj.weight")?)?;
        let k = linear(&x, &p("self_attn.k_proj.weight")?)?;
        let v = linear(&x, &p("self_attn.v_proj.weight")?)?;
        let mut scores = q.matmul(&k.transpose())?;
        for i in 0..len {
            let row = scores.row_mut(i);
            let max = row[..=i].iter().map(|s| s * inv_sqrt_d).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, s) in row.iter_mut().enumerate() {
                *s = if j <= i { (*s * inv_sqrt_d - max).exp() } else { 0.0 };
                z += *s;
            }
            row.iter_mut().for_each(|s| *s /= z);
        }
        let attn = scores.matmul(&v)?;
        add_in_place(&mut h, &linear(&attn, &p("self_attn.o_proj.weight")?)?);

        let x = rms_norm(&h, &p("post_attention_layernorm.weight")?);
        let gate = linear(&x, &p("mlp.gate_proj.weight")?)?;
        let up = linear(&x, &p("mlp.up_proj.weight")?)?;
        let act = Matrix::from_fn(len, gate.cols(), |i, j| silu(gate[(i, j)]) * up[(i, j)]);
        add_in_place(&mut h, &linear(&act, &p("mlp.down_proj.weight")?)?);
    }
    let x = rms_norm(&h, &param(c, "model.norm.weight")?);
    linear(&x, &param(c, "lm_head.weight")?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    /// Per-probe `‖y_pack − y_tuned‖ / ‖y_tuned‖`.
    pub deviations: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    pub ratio_total: f64,
    pub ratio_value_only: f64,
}

/// Random probe sequences of [`PROBE_LEN`] tokens.
pub fn probes(vocab: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..PROBE_LEN).map(|_| rng.random_range(0..vocab)).collect()).collect()
}

/// Compares the tuned model with `base` grafted with `pack` on random probes.
pub fn eval_retention(
    base: &Checkpoint,
    tuned: &Checkpoint,
    pack: &SkillPack,
    probe_count: usize,
    seed: u64,
) -> Result<RetentionReport> {
    if probe_count == 0 {
        return Err(Error::invalid("probe count must be at least 1"));
    }
    let a = arch(tuned)?;
    if arch(base)? != a {
        return Err(Error::invalid("base and tuned checkpoints differ in architecture"));
    }
    let grafted = apply(base, pack, 1.0, false)?;
    let mut deviations = Vec::with_capacity(probe_count);
    for tokens in probes(a.vocab, probe_count, seed) {
        let full = forward(tuned, &tokens)?;
        let approx = forward(&grafted, &tokens)?;
        let diff = full.sub(&approx)?.frobenius_norm();
        let norm = full.frobenius_norm();
        deviations.push(if norm == 0.0 { diff } else { diff / norm });
    }
    let mean = deviations.iter().sum::<f64>() / probe_count as f64;
    let max = deviations.iter().cloned().fold(0.0, f64::max);
    Ok(RetentionReport {
        deviations,
        mean,
        max,
        ratio_total: pack.stats.total.ratio_total,
        ratio_value_only: pack.stats.total.ratio_value_only,
    })
}

/// Total storage of `delta` under `plan`, without compressing anything.
pub fn planned_storage(delta: &DeltaMap, manifest: &ClassificationManifest, plan: &CompressionPlan) -> Result<StorageRow> {
    let mut original = 0u64;
    let mut stored = 0u64;
    let mut value = 0u64;
    for (name, t) in &delta.deltas {
        let class = classify_tensor(name, t.shape(), manifest);
        let row = storage_ratio(t.shape(), plan.strategies.get(class))?;
        original += row.original_bits;
        stored += row.stored_value_bits + row.stored_overhead_bits;
        value += row.stored_value_bits;
    }
    let ratio = |b: u64| if original == 0 { 0.0 } else { b as f64 / original as f64 };
    Ok(StorageRow {
        original_bits: original,
        stored_value_bits: value,
        stored_overhead_bits: stored - value,
        ratio_value_only: ratio(value),
        ratio_total: ratio(stored),
    })
}

/// Candidate plans for `delta`, ordered by increasing fidelity: rank grows
/// at 4 bits up to the deltas' numerical rank, then bit width grows at that
/// rank. Embedding/head deltas keep their nonzero fraction at 8 bits.
pub fn plan_ladder(delta: &DeltaMap, manifest: &ClassificationManifest) -> Result<Vec<CompressionPlan>> {
    let mut rank_cap = 1;
    let mut embed_nnz = 0usize;
    let mut embed_numel = 0usize;
    for (name, t) in &delta.deltas {
        match classify_tensor(name, t.shape(), manifest) {
            ModuleClass::Mlp | ModuleClass::Attention => {
                let f = crate::tensor::svd(t)?;
                rank_cap = rank_cap.max(f.numerical_rank(1e-6));
            }
            ModuleClass::EmbeddingOrHead => {
                embed_nnz += t.count_nonzero();
                embed_numel += t.numel();
            }
            ModuleClass::Passthrough => {}
        }
    }
    let rank_cap = rank_cap.min(64);
    let alpha = if embed_numel == 0 { 1.0 } else { (embed_nnz.max(1) as f64 / embed_numel as f64).min(0.01) };
    let embed = ClassStrategy::Prune { alpha, value_bits: 8 };
    let svd = |rank: usize, bits: u32| ClassStrategy::SvdQuant { rank: Some(rank), groups: vec![BitGroup::new(0, rank, bits)] };
    let mut steps: Vec<(usize, u32)> = (1..=rank_cap).map(|r| (r, 4)).collect();
    steps.extend([5, 6, 8, 10, 12, 16].map(|b| (rank_cap, b)));
    Ok(steps
        .into_iter()
        .map(|(r, b)| CompressionPlan {
            strategies: ClassStrategies {
                embedding_or_head: embed.clone(),
                mlp: svd(r, b),
                attention: svd(r, b),
                passthrough: ClassStrategy::Dense,
            },
            ..CompressionPlan::default()
        })
        .collect())
}

/// Highest-fidelity ladder plan whose total ratio does not exceed `target`.
pub fn plan_for_budget(delta: &DeltaMap, manifest: &ClassificationManifest, target: f64) -> Result<CompressionPlan> {
    let mut best = None;
    for plan in plan_ladder(delta, manifest)? {
        if planned_storage(delta, manifest, &plan)?.ratio_total <= target {
            best = Some(plan);
        }
    }
    best.ok_or_else(|| Error::invalid(format!("no ladder plan fits a total storage ratio of {target}")))
}
