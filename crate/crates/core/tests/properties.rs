use indexmap::IndexMap;
use proptest::prelude::*;

use skillgraft_core::checkpoint::ModuleClass;
use skillgraft_core::compressor::{compress_entry, Calibration};
use skillgraft_core::container::{self, BlobRef};
use skillgraft_core::linalg::{svd, Matrix};
use skillgraft_core::objectives::{dpo_loss, sft_nll, Aggregation, PreferenceScores};
use skillgraft_core::skillpack::{storage_ratio, SKPK_MAGIC, SKPK_VERSION};
use skillgraft_core::tensor::DType;
use skillgraft_core::{
    BitGroup, CalibrationSpec, Checkpoint, ClassStrategy, CompressionPlan, Error, SkillPack, Tensor,
};

fn finite() -> impl Strategy<Value = f32> {
    prop_oneof![-1e3f32..1e3, Just(0.0), Just(-0.0), Just(f32::MIN_POSITIVE), Just(f32::MAX)]
}

fn tensor() -> impl Strategy<Value = Tensor> {
    (prop::collection::vec(1usize..5, 1..3), any::<bool>()).prop_flat_map(|(shape, half)| {
        let n: usize = shape.iter().product();
        prop::collection::vec(finite(), n).prop_map(move |data| {
            let data = if half { data.into_iter().map(|v| v.clamp(-6e4, 6e4)).collect() } else { data };
            let dtype = if half { DType::F16 } else { DType::F32 };
            Tensor::with_dtype(dtype, shape.clone(), data).unwrap()
        })
    })
}

fn checkpoint() -> impl Strategy<Value = Checkpoint> {
    (prop::collection::vec(tensor(), 0..6), "[a-z]{1,8}").prop_map(|(tensors, id)| {
        let mut c = Checkpoint::new(id);
        for (i, t) in tensors.into_iter().enumerate() {
            c.insert(format!("layer.{i}.w"), t).unwrap();
        }
        c
    })
}

fn strategy() -> impl Strategy<Value = ClassStrategy> {
    prop_oneof![
        (0.05f64..1.0, 2u32..=12).prop_map(|(alpha, value_bits)| ClassStrategy::Prune { alpha, value_bits }),
        (1usize..4, 2u32..=8, 2u32..=8).prop_map(|(r, a, b)| ClassStrategy::SvdQuant {
            rank: Some(r + 1),
            groups: vec![BitGroup::new(0, 1, a), BitGroup::new(1, r + 1, b)],
        }),
        Just(ClassStrategy::Dense),
    ]
}

fn matrix_tensor() -> impl Strategy<Value = Tensor> {
    (1usize..7, 1usize..7).prop_flat_map(|(m, n)| {
        prop::collection::vec(-2.0f32..2.0, m * n).prop_map(move |d| Tensor::new(vec![m, n], d).unwrap())
    })
}

fn pack() -> impl Strategy<Value = SkillPack> {
    prop::collection::vec((matrix_tensor(), strategy()), 0..5).prop_map(|items| {
        let calib = Calibration::from_spec(&CalibrationSpec::Synthetic { seed: 1, samples: 16 }).unwrap();
        let mut entries = IndexMap::new();
        for (i, (t, s)) in items.into_iter().enumerate() {
            let mut plan = CompressionPlan::dense();
            plan.strategies.mlp = s;
            let e = compress_entry(&format!("mlp.{i}"), &t, ModuleClass::Mlp, &plan, &calib).unwrap();
            entries.insert(format!("mlp.{i}"), e);
        }
        SkillPack::new("base", "tuned", "task", CompressionPlan::default(), entries).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_round_trip(c in checkpoint()) {
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert!(back.tensors_bit_eq(&c));
        prop_assert_eq!(&back.model_id, &c.model_id);
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn pack_round_trip(p in pack()) {
        let bytes = p.to_bytes().unwrap();
        let back = SkillPack::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn payload_bit_flips_are_detected(p in pack(), pick in any::<prop::sample::Index>(), bit in 0u8..8) {
        let bytes = p.to_bytes().unwrap();
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let start = 16 + header_len;
        prop_assume!(bytes.len() > start);
        let mut dirty = bytes.clone();
        dirty[start + pick.index(bytes.len() - start)] ^= 1 << bit;
        prop_assert!(SkillPack::from_bytes(&dirty).is_err());
    }

    #[test]
    fn total_ratio_dominates_value_ratio(
        m in 1usize..300, n in 1usize..300, s in strategy(),
    ) {
        let row = storage_ratio(&[m, n], &s).unwrap();
        prop_assert!(row.ratio_total >= row.ratio_value_only);
    }

    #[test]
    fn fewer_bits_store_less(m in 2usize..200, n in 2usize..200, r in 1usize..3, bits in 3u32..=16) {
        let at = |b: u32| storage_ratio(&[m, n], &ClassStrategy::SvdQuant {
            rank: Some(r),
            groups: vec![BitGroup::new(0, r, b)],
        }).unwrap();
        let (hi, lo) = (at(bits), at(bits - 1));
        prop_assert!(lo.ratio_value_only < hi.ratio_value_only);
        prop_assert!(lo.ratio_total < hi.ratio_total);
    }

    #[test]
    fn svd_reconstructs(m in 1usize..12, n in 1usize..12, seed in any::<u64>()) {
        let mut state = seed | 1;
        let a = Matrix::<f64>::from_fn(m, n, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 2001) as f64 / 1000.0 - 1.0
        });
        let f = svd(&a).unwrap();
        prop_assert!(f.reconstruct().rel_err(&a).unwrap() <= 1e-12);
        prop_assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(f.sigma.iter().all(|&s| s >= 0.0));
        let utu = f.u.transpose().matmul(&f.u).unwrap();
        let eye = Matrix::<f64>::identity(f.rank());
        prop_assert!(utu.sub(&eye).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn dpo_depends_only_on_scaled_margin(
        w in -50.0f64..0.0, l in -50.0f64..0.0, wr in -50.0f64..0.0, lr in -50.0f64..0.0,
        shift in -10.0f64..10.0, beta in 0.0f64..5.0,
    ) {
        let s = PreferenceScores { logp_w_policy: w, logp_l_policy: l, logp_w_ref: wr, logp_l_ref: lr, beta };
        // Shifting a policy score and its reference by the same amount keeps the margin.
        let t = PreferenceScores { logp_w_policy: w + shift, logp_w_ref: wr + shift, ..s };
        prop_assert!((dpo_loss(&s).unwrap() - dpo_loss(&t).unwrap()).abs() <= 1e-9);
        let better = PreferenceScores { logp_w_policy: w + 1.0, ..s };
        if beta > 0.0 {
            prop_assert!(dpo_loss(&better).unwrap() < dpo_loss(&s).unwrap());
        }
    }

    #[test]
    fn nll_is_permutation_invariant(mut lp in prop::collection::vec(-20.0f64..=0.0, 1..30)) {
        let a = sft_nll(&lp, Aggregation::Mean).unwrap();
        lp.reverse();
        prop_assert!((a - sft_nll(&lp, Aggregation::Mean).unwrap()).abs() <= 1e-12);
        let sum = sft_nll(&lp, Aggregation::Sum).unwrap();
        prop_assert!((sum / lp.len() as f64 - a).abs() <= 1e-12);
    }
}

fn rewrite_header(bytes: &[u8], edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
    let (header, payload) = container::decode(bytes, SKPK_MAGIC, SKPK_VERSION).unwrap();
    let mut json: serde_json::Value = serde_json::from_slice(header).unwrap();
    edit(&mut json);
    let header = serde_json::to_vec(&json).unwrap();
    let whole = BlobRef { offset: 0, byte_len: payload.len() as u64, crc32: 0 };
    container::encode(SKPK_MAGIC, SKPK_VERSION, &header, &[payload.to_vec()], &[whole])
}

fn sample_pack() -> SkillPack {
    let t = Tensor::new(vec![3, 4], (0..12).map(|i| i as f32 / 7.0 - 0.8).collect()).unwrap();
    let calib = Calibration::from_spec(&CalibrationSpec::default()).unwrap();
    let mut entries = IndexMap::new();
    let mut plan = CompressionPlan::dense();
    plan.strategies.mlp = ClassStrategy::SvdQuant { rank: Some(2), groups: vec![BitGroup::new(0, 2, 4)] };
    entries.insert("mlp.w".to_string(), compress_entry("mlp.w", &t, ModuleClass::Mlp, &plan, &calib).unwrap());
    SkillPack::new("b", "t", "x", plan, entries).unwrap()
}

#[test]
fn tampered_stats_are_rejected() {
    let bytes = sample_pack().to_bytes().unwrap();
    let same = rewrite_header(&bytes, |_| {});
    assert!(SkillPack::from_bytes(&same).is_ok());
    let dirty = rewrite_header(&bytes, |h| h["stats"]["total"]["ratio_total"] = serde_json::json!(0.01));
    assert!(matches!(SkillPack::from_bytes(&dirty), Err(Error::StatsMismatch(_))));
}

#[test]
fn corrupted_blob_names_the_entry() {
    let bytes = sample_pack().to_bytes().unwrap();
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut dirty = bytes.clone();
    dirty[16 + header_len] ^= 0x10;
    match SkillPack::from_bytes(&dirty) {
        Err(Error::ChecksumMismatch { name, .. }) => assert_eq!(name, "mlp.w"),
        other => panic!("expected checksum error, got {other:?}"),
    }
}

#[test]
fn out_of_range_codes_are_rejected() {
    let mut p = sample_pack();
    let e = p.entries.get_mut("mlp.w").unwrap();
    if let skillgraft_core::skillpack::EntryPayload::QuantizedSvd { u, .. } = &mut e.payload {
        u.codes[0] = 100;
    }
    assert!(matches!(p.to_bytes(), Err(Error::CorruptCodes { code: 100, bits: 4, .. })));
}
