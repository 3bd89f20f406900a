use std::collections::BTreeMap;

use indexmap::IndexMap;

use skillgraft_core::router::overlapping_names;
use skillgraft_core::toy::{gen_toy, ToySpec};
use skillgraft_core::{
    apply, compress_delta, diff, fuse, instantiate_task, Checkpoint, ClassificationManifest, CompressionPlan,
    DeltaMap, Error, FusionRequest, Router, Selector, SkillPack,
};

fn small(seed: u64) -> ToySpec {
    ToySpec { layers: 1, d: 16, mlp: 32, vocab: 40, ..ToySpec::with_seed(seed) }
}

/// Splits the toy delta into a pack over the names accepted by `keep`.
fn pack_for(base: &Checkpoint, tuned: &Checkpoint, tag: &str, keep: impl Fn(&str) -> bool) -> SkillPack {
    let d = diff(base, tuned).unwrap();
    let deltas: IndexMap<_, _> = d.deltas.into_iter().filter(|(n, _)| keep(n)).collect();
    let d = DeltaMap { deltas, ..d };
    compress_delta(&d, &ClassificationManifest::default(), &CompressionPlan::default(), tag).unwrap()
}

fn table(entries: &[(&str, &[&str])]) -> Router {
    Router::TaskTable {
        table: entries.iter().map(|(t, ids)| (t.to_string(), ids.iter().map(|s| s.to_string()).collect())).collect(),
    }
}

#[test]
fn disjoint_packs_match_their_single_grafts() {
    let (base, tuned) = gen_toy(&small(1)).unwrap();
    let code = pack_for(&base, &tuned, "code", |n| n.contains("mlp"));
    let math = pack_for(&base, &tuned, "math", |n| n.contains("attn"));
    assert!(overlapping_names(&[&code, &math]).is_empty());
    let packs = BTreeMap::from([("code".to_string(), code.clone()), ("math".to_string(), math.clone())]);
    let router = table(&[("both", &["code", "math"])]);
    let fused = fuse(&FusionRequest { base: &base, packs: &packs, router: &router, selector: Selector::Tag("both".into()) })
        .unwrap();
    let only_code = apply(&base, &code, 1.0, false).unwrap();
    let only_math = apply(&base, &math, 1.0, false).unwrap();
    for (name, t) in fused.iter() {
        let expected = if code.entries.contains_key(name) {
            only_code.get(name).unwrap()
        } else if math.entries.contains_key(name) {
            only_math.get(name).unwrap()
        } else {
            base.get(name).unwrap()
        };
        assert!(t.bit_eq(expected), "{name}");
    }
}

#[test]
fn single_pack_fusion_is_apply() {
    let (base, tuned) = gen_toy(&small(2)).unwrap();
    let p = pack_for(&base, &tuned, "t", |_| true);
    let packs = BTreeMap::from([("p".to_string(), p.clone())]);
    let router = table(&[("t", &["p"])]);
    let fused = instantiate_task(&base, &packs, "t", &router).unwrap();
    let applied = apply(&base, &p, 1.0, false).unwrap();
    assert_eq!(fused.to_bytes(), applied.to_bytes());
}

#[test]
fn fusion_order_is_fixed_by_pack_id() {
    let (base, tuned) = gen_toy(&small(3)).unwrap();
    let a = pack_for(&base, &tuned, "a", |_| true);
    let b = pack_for(&base, &tuned, "b", |n| n.contains("mlp"));
    assert!(!overlapping_names(&[&a, &b]).is_empty());
    let packs = BTreeMap::from([("a".to_string(), a), ("b".to_string(), b)]);
    let run = |ids: &[&str]| {
        let router = table(&[("x", ids)]);
        fuse(&FusionRequest { base: &base, packs: &packs, router: &router, selector: Selector::Tag("x".into()) })
            .unwrap()
            .to_bytes()
    };
    assert_eq!(run(&["a", "b"]), run(&["b", "a"]));
}

#[test]
fn empty_tag_and_mismatched_base() {
    let (base, tuned) = gen_toy(&small(4)).unwrap();
    let p = pack_for(&base, &tuned, "t", |_| true);
    let packs = BTreeMap::from([("p".to_string(), p)]);
    let router = table(&[("none", &[]), ("t", &["p"]), ("ghost", &["q"])]);
    let out = instantiate_task(&base, &packs, "none", &router).unwrap();
    assert_eq!(out.to_bytes(), base.to_bytes());
    assert!(matches!(instantiate_task(&base, &packs, "nope", &router), Err(Error::UnknownTag(_))));
    assert!(matches!(instantiate_task(&base, &packs, "ghost", &router), Err(Error::UnknownPack(_))));
    assert!(matches!(instantiate_task(&tuned, &packs, "t", &router), Err(Error::ModelIdMismatch { .. })));
}

#[test]
fn ungrafting_is_rederiving_from_base() {
    let (base, tuned) = gen_toy(&small(5)).unwrap();
    let p = pack_for(&base, &tuned, "t", |_| true);
    let before = base.to_bytes();
    let _ = apply(&base, &p, 1.0, false).unwrap();
    let zero = apply(&base, &p, 0.0, false).unwrap();
    assert_eq!(base.to_bytes(), before);
    assert!(zero.tensors_bit_eq(&base));
}
