//! Compression plans: which operator each module class gets, with what
//! parameters, and where calibration activations come from.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::checkpoint::ModuleClass;
use crate::error::{Error, Result};
use crate::quant::{check_bits, check_groups, BitGroup};
use crate::tensor::check_alpha;

pub const DEFAULT_DAMPING: f64 = 0.01;
pub const DEFAULT_CALIBRATION_SAMPLES: usize = 128;
pub const DEFAULT_CALIBRATION_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassStrategy {
    /// Magnitude pruning, retained values quantized with one scale per row.
    Prune { alpha: f64, value_bits: u32 },
    /// Truncated SVD with group-wise calibrated quantization of both factors.
    /// `rank: None` keeps the full rank; the last group then stretches to it.
    SvdQuant {
        #[serde(default)]
        rank: Option<usize>,
        groups: Vec<BitGroup>,
    },
    /// Exact 32-bit copy.
    Dense,
}

impl ClassStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            ClassStrategy::Prune { alpha, value_bits } => {
                check_alpha(*alpha)?;
                check_bits(*value_bits)
            }
            ClassStrategy::SvdQuant { rank: Some(r), groups } => {
                if *r == 0 {
                    return Err(Error::invalid("svd rank must be at least 1"));
                }
                check_groups(groups, *r)
            }
            ClassStrategy::SvdQuant { rank: None, groups } => {
                let end = groups.last().map(|g| g.rank_end).unwrap_or(0);
                if groups.is_empty() {
                    return Err(Error::invalid("svd strategy needs at least one bit group"));
                }
                check_groups(groups, end)
            }
            ClassStrategy::Dense => Ok(()),
        }
    }

    /// Groups restricted to an effective rank `r`: groups past `r` are dropped,
    /// the one straddling `r` is cut, and for a full-rank strategy the last
    /// group is stretched to reach `r`.
    pub fn effective_groups(groups: &[BitGroup], full_rank: bool, r: usize) -> Vec<BitGroup> {
        let mut out: Vec<BitGroup> = groups
            .iter()
            .filter(|g| g.rank_begin < r)
            .map(|g| BitGroup::new(g.rank_begin, g.rank_end.min(r), g.bits))
            .collect();
        if full_rank {
            if let Some(last) = out.last_mut() {
                last.rank_end = r;
            }
        }
        out
    }
}

/// One strategy per module class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStrategies {
    pub embedding_or_head: ClassStrategy,
    pub mlp: ClassStrategy,
    pub attention: ClassStrategy,
    pub passthrough: ClassStrategy,
}

impl ClassStrategies {
    pub fn get(&self, class: ModuleClass) -> &ClassStrategy {
        match class {
            ModuleClass::EmbeddingOrHead => &self.embedding_or_head,
            ModuleClass::Mlp => &self.mlp,
            ModuleClass::Attention => &self.attention,
            ModuleClass::Passthrough => &self.passthrough,
        }
    }

    pub fn uniform(strategy: ClassStrategy) -> Self {
        ClassStrategies {
            embedding_or_head: strategy.clone(),
            mlp: strategy.clone(),
            attention: strategy,
            passthrough: ClassStrategy::Dense,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationSpec {
    /// Standard-normal activations; one matrix per input width, derived from
    /// `(seed, width)` alone.
    Synthetic { seed: u64, samples: usize },
    /// A GLTC container mapping parameter names to `h_in × s` activations.
    File { path: PathBuf },
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        CalibrationSpec::Synthetic { seed: DEFAULT_CALIBRATION_SEED, samples: DEFAULT_CALIBRATION_SAMPLES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub strategies: ClassStrategies,
    #[serde(default)]
    pub calibration: CalibrationSpec,
    /// Hessian damping relative to the mean diagonal.
    #[serde(default = "default_damping")]
    pub damping: f64,
}

fn default_damping() -> f64 {
    DEFAULT_DAMPING
}

impl Default for CompressionPlan {
    /// Embedding/head: prune α = 0.5 at 4 bits. MLP: rank 1400 with 8/3/2-bit
    /// groups over ranks 20/180/1200. Attention: rank 1000 with 8/2-bit groups
    /// over ranks 20/980. Ranks clamp on smaller matrices.
    fn default() -> Self {
        CompressionPlan {
            strategies: ClassStrategies {
                embedding_or_head: ClassStrategy::Prune { alpha: 0.5, value_bits: 4 },
                mlp: ClassStrategy::SvdQuant {
                    rank: Some(1400),
                    groups: vec![BitGroup::new(0, 20, 8), BitGroup::new(20, 200, 3), BitGroup::new(200, 1400, 2)],
                },
                attention: ClassStrategy::SvdQuant {
                    rank: Some(1000),
                    groups: vec![BitGroup::new(0, 20, 8), BitGroup::new(20, 1000, 2)],
                },
                passthrough: ClassStrategy::Dense,
            },
            calibration: CalibrationSpec::default(),
            damping: DEFAULT_DAMPING,
        }
    }
}

impl CompressionPlan {
    /// Dense for every class: exact, lossless packs.
    pub fn dense() -> Self {
        CompressionPlan {
            strategies: ClassStrategies::uniform(ClassStrategy::Dense),
            calibration: CalibrationSpec::default(),
            damping: DEFAULT_DAMPING,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for class in ModuleClass::ALL {
            self.strategies.get(class).validate()?;
        }
        if self.strategies.passthrough != ClassStrategy::Dense {
            return Err(Error::invalid("the passthrough class must use the dense strategy"));
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return Err(Error::invalid(format!("damping must be finite and nonnegative, got {}", self.damping)));
        }
        if let CalibrationSpec::Synthetic { samples: 0, .. } = self.calibration {
            return Err(Error::invalid("synthetic calibration needs at least one sample"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_is_valid_and_round_trips_through_json() {
        let plan = CompressionPlan::default();
        plan.validate().unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        let back: CompressionPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let plan: CompressionPlan = serde_json::from_str(
            r#"{"strategies": {
                "embedding_or_head": {"kind": "prune", "alpha": 0.25, "value_bits": 8},
                "mlp": {"kind": "svd_quant", "groups": [{"rank_begin": 0, "rank_end": 4, "bits": 4}]},
                "attention": {"kind": "dense"},
                "passthrough": {"kind": "dense"}}}"#,
        )
        .unwrap();
        plan.validate().unwrap();
        assert_eq!(plan.damping, DEFAULT_DAMPING);
        assert_eq!(plan.calibration, CalibrationSpec::default());
        assert!(matches!(plan.strategies.mlp, ClassStrategy::SvdQuant { rank: None, .. }));
    }

    #[test]
    fn invalid_plans() {
        let mut plan = CompressionPlan::default();
        plan.strategies.passthrough = ClassStrategy::Prune { alpha: 0.5, value_bits: 4 };
        assert!(plan.validate().is_err());

        let mut plan = CompressionPlan::default();
        plan.strategies.mlp = ClassStrategy::SvdQuant { rank: Some(10), groups: vec![BitGroup::new(0, 8, 4)] };
        assert!(plan.validate().is_err());

        let mut plan = CompressionPlan::default();
        plan.strategies.embedding_or_head = ClassStrategy::Prune { alpha: 0.0, value_bits: 4 };
        assert!(plan.validate().is_err());

        let mut plan = CompressionPlan::default();
        plan.calibration = CalibrationSpec::Synthetic { seed: 1, samples: 0 };
        assert!(plan.validate().is_err());
    }

    #[test]
    fn effective_groups_clip_and_stretch() {
        let groups = [BitGroup::new(0, 20, 8), BitGroup::new(20, 200, 3), BitGroup::new(200, 1400, 2)];
        assert_eq!(ClassStrategy::effective_groups(&groups, false, 4), vec![BitGroup::new(0, 4, 8)]);
        assert_eq!(
            ClassStrategy::effective_groups(&groups, false, 64),
            vec![BitGroup::new(0, 20, 8), BitGroup::new(20, 64, 3)]
        );
        let open = [BitGroup::new(0, 2, 8), BitGroup::new(2, 3, 4)];
        assert_eq!(
            ClassStrategy::effective_groups(&open, true, 10),
            vec![BitGroup::new(0, 2, 8), BitGroup::new(2, 10, 4)]
        );
    }
}
