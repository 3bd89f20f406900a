//! Routing SkillPacks onto a base checkpoint: tag tables, a linear
//! classifier router and its loss-supervised training.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{accumulate, Checkpoint};
use crate::error::{Error, Result};
use crate::skillpack::SkillPack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub d: usize,
    /// Row-major `n_classes × d`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub class_to_pack: Vec<String>,
}

impl LinearClassifier {
    pub fn n_classes(&self) -> usize {
        self.class_to_pack.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_classes();
        if self.d == 0 || n == 0 {
            return Err(Error::invalid("classifier needs d ≥ 1 and at least one class"));
        }
        if self.weights.len() != n * self.d || self.bias.len() != n {
            return Err(Error::InvalidFormat(format!(
                "classifier with {n} classes and d={} has {} weights and {} biases",
                self.d,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("router".into()));
        }
        Ok(())
    }

    /// Class logits in 64-bit.
    pub fn logits(&self, features: &[f32]) -> Result<Vec<f64>> {
        self.validate()?;
        if features.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "router expects {} features, got {}",
                self.d,
                features.len()
            )));
        }
        Ok(self
            .weights
            .chunks(self.d)
            .zip(&self.bias)
            .map(|(w, &b)| w.iter().zip(features).map(|(&w, &x)| w as f64 * x as f64).sum::<f64>() + b as f64)
            .collect())
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, features: &[f32]) -> Result<usize> {
        Ok(argmax(&self.logits(features)?))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Router {
    TaskTable { table: BTreeMap<String, Vec<String>> },
    LinearClassifier(LinearClassifier),
}

impl Router {
    pub fn validate(&self) -> Result<()> {
        match self {
            Router::TaskTable { table } => {
                for (tag, ids) in table {
                    let unique: BTreeSet<&String> = ids.iter().collect();
                    if unique.len() != ids.len() {
                        return Err(Error::InvalidFormat(format!("tag '{tag}' lists a pack twice")));
                    }
                }
                Ok(())
            }
            Router::LinearClassifier(c) => c.validate(),
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let r: Router = serde_json::from_slice(&std::fs::read(path)?)?;
        r.validate()?;
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Tag(String),
    Features(Vec<f32>),
}

/// Packs selected by `router` with unit weights. A table returns every pack
/// under the tag; a classifier returns its argmax class's pack.
pub fn route(router: &Router, selector: &Selector) -> Result<Vec<(String, f32)>> {
    router.validate()?;
    match (router, selector) {
        (Router::TaskTable { table }, Selector::Tag(tag)) => {
            let ids = table.get(tag).ok_or_else(|| Error::UnknownTag(tag.clone()))?;
            Ok(ids.iter().map(|id| (id.clone(), 1.0)).collect())
        }
        (Router::LinearClassifier(c), Selector::Features(x)) => {
            let class = c.predict(x)?;
            Ok(vec![(c.class_to_pack[class].clone(), 1.0)])
        }
        (Router::TaskTable { .. }, Selector::Features(_)) => {
            Err(Error::invalid("a task-table router needs a tag selector"))
        }
        (Router::LinearClassifier(_), Selector::Tag(_)) => {
            Err(Error::invalid("a classifier router needs a feature selector"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionRequest<'a> {
    pub base: &'a Checkpoint,
    /// Pack id → pack.
    pub packs: &'a BTreeMap<String, SkillPack>,
    pub router: &'a Router,
    pub selector: Selector,
}

/// `base + Σ weight · reconstruct(pack)` over the routed packs, summed in
/// pack id order. The base is never modified.
pub fn fuse(req: &FusionRequest) -> Result<Checkpoint> {
    let mut routed = route(req.router, &req.selector)?;
    routed.sort_by(|a, b| a.0.cmp(&b.0));
    fuse_weighted(req.base, req.packs, &routed)
}

fn fuse_weighted(base: &Checkpoint, packs: &BTreeMap<String, SkillPack>, routed: &[(String, f32)]) -> Result<Checkpoint> {
    let mut selected = Vec::with_capacity(routed.len());
    for (id, w) in routed {
        let pack = packs.get(id).ok_or_else(|| Error::UnknownPack(id.clone()))?;
        if pack.base_model_id != base.model_id {
            return Err(Error::ModelIdMismatch { expected: pack.base_model_id.clone(), found: base.model_id.clone() });
        }
        selected.push((pack, *w));
    }
    let mut out = base.clone();
    for (pack, w) in selected {
        if !pack.entries.is_empty() {
            out.model_id = format!("{}+{}", out.model_id, pack.task_tag);
        }
        if w == 0.0 {
            continue;
        }
        for (name, delta) in pack.reconstruct_all()? {
            let target = out.get_mut(&name).ok_or_else(|| Error::NameSetMismatch {
                only_in_base: Vec::new(),
                only_in_tuned: vec![name.clone()],
            })?;
            if target.shape() != delta.shape() {
                return Err(Error::ShapeMismatch {
                    name,
                    left: target.shape().to_vec(),
                    right: delta.shape().to_vec(),
                });
            }
            accumulate(target, delta.data(), w)?;
        }
    }
    Ok(out)
}

/// Fuses exactly the packs mapped to `task_tag`, always starting from `base`.
pub fn instantiate_task(
    base: &Checkpoint,
    packs: &BTreeMap<String, SkillPack>,
    task_tag: &str,
    router: &Router,
) -> Result<Checkpoint> {
    if !matches!(router, Router::TaskTable { .. }) {
        return Err(Error::invalid("task instantiation needs a task-table router"));
    }
    fuse(&FusionRequest { base, packs, router, selector: Selector::Tag(task_tag.to_string()) })
}

/// Tensor names touched by more than one of the given packs.
pub fn overlapping_names(packs: &[&SkillPack]) -> Vec<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for p in packs {
        for name in p.entries.keys() {
            *seen.entry(name.as_str()).or_default() += 1;
        }
    }
    seen.into_iter().filter(|&(_, c)| c > 1).map(|(n, _)| n.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub features: Vec<f32>,
    /// One loss per pack; lower is better.
    pub losses: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterTrainingSet {
    pub pack_ids: Vec<String>,
    pub rows: Vec<TrainingRow>,
}

impl RouterTrainingSet {
    pub fn validate(&self) -> Result<usize> {
        let Some(first) = self.rows.first() else {
            return Err(Error::DegenerateRouterData("no training rows".into()));
        };
        let d = first.features.len();
        if d == 0 {
            return Err(Error::invalid("features must be nonempty"));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.features.len() != d || row.losses.len() != self.pack_ids.len() {
                return Err(Error::DimensionMismatch(format!("row {i} disagrees in feature or pack count")));
            }
            if !row.features.iter().chain(&row.losses).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("router training row {i}")));
            }
        }
        Ok(d)
    }

    /// Lowest-loss pack per row, ties to the lowest index.
    pub fn labels(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| argmin(&r.losses.iter().map(|&l| l as f64).collect::<Vec<_>>()))
            .collect()
    }
}

/// Multinomial logistic regression on argmin-loss labels, full-batch
/// gradient descent from zero weights. Returns the classifier and its final
/// training accuracy.
pub fn train_router(data: &RouterTrainingSet, epochs: usize, learning_rate: f64) -> Result<(LinearClassifier, f64)> {
    let d = data.validate()?;
    if epochs == 0 {
        return Err(Error::invalid("epochs must be at least 1"));
    }
    if !(learning_rate > 0.0) || !learning_rate.is_finite() {
        return Err(Error::invalid(format!("learning rate must be positive, got {learning_rate}")));
    }
    let labels = data.labels();
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::DegenerateRouterData(
            "every row selects the same pack; use a task-table router instead".into(),
        ));
    }
    let k = data.pack_ids.len();
    let n = data.rows.len() as f64;
    let mut w = vec![0.0f64; k * d];
    let mut b = vec![0.0f64; k];
    let mut gw = vec![0.0f64; k * d];
    let mut gb = vec![0.0f64; k];
    let mut probs = vec![0.0f64; k];
    for _ in 0..epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        gb.iter_mut().for_each(|g| *g = 0.0);
        for (row, &y) in data.rows.iter().zip(&labels) {
            for c in 0..k {
                probs[c] = b[c]
                    + w[c * d..(c + 1) * d].iter().zip(&row.features).map(|(&w, &x)| w * x as f64).sum::<f64>();
            }
            let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for p in probs.iter_mut() {
                *p = (*p - max).exp();
                z += *p;
            }
            for c in 0..k {
                let g = probs[c] / z - if c == y { 1.0 } else { 0.0 };
                gb[c] += g;
                for (gw, &x) in gw[c * d..(c + 1) * d].iter_mut().zip(&row.features) {
                    *gw += g * x as f64;
                }
            }
        }
        for (w, g) in w.iter_mut().zip(&gw) {
            *w -= learning_rate * g / n;
        }
        for (b, g) in b.iter_mut().zip(&gb) {
            *b -= learning_rate * g / n;
        }
    }
    let classifier = LinearClassifier {
        d,
        weights: w.iter().map(|&v| v as f32).collect(),
        bias: b.iter().map(|&v| v as f32).collect(),
        class_to_pack: data.pack_ids.clone(),
    };
    let mut correct = 0usize;
    for (row, &y) in data.rows.iter().zip(&labels) {
        if classifier.predict(&row.features)? == y {
            correct += 1;
        }
    }
    Ok((classifier, correct as f64 / n))
}
