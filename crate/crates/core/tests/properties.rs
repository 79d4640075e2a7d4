mod support;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stare::graph::{augment_edges, build_vocabulary, to_sparse, EntityId, RawStatement};
use stare::pipeline::{clean, sample_by_qualifier_ratio, truncate_qualifiers, Split};
use stare::synth::{random_statements, RandomGraphConfig};
use stare::{
    encoder, filtered_rank, gamma, phi, EdgeIndex, EncoderConfig, GammaKind, Matrix, ParamSet, PhiKind, StarEEncoder,
};

fn statement_strategy() -> impl Strategy<Value = RawStatement> {
    (
        0..8usize,
        0..3usize,
        0..8usize,
        prop::collection::vec((0..3usize, 0..8usize), 0..5),
    )
        .prop_map(|(s, r, o, q)| {
            let mut st = RawStatement::new(format!("e{s}"), format!("r{r}"), format!("e{o}"));
            let mut seen = HashSet::new();
            for (qr, qv) in q {
                if seen.insert(qr) {
                    st = st.qualifier(format!("q{qr}"), format!("e{qv}"));
                }
            }
            st
        })
}

fn split_strategy() -> impl Strategy<Value = Split> {
    (
        prop::collection::vec(statement_strategy(), 0..30),
        prop::collection::vec(statement_strategy(), 0..10),
        prop::collection::vec(statement_strategy(), 0..10),
    )
        .prop_map(|(train, valid, test)| Split { train, valid, test })
}

fn scores_strategy() -> impl Strategy<Value = (Vec<f64>, usize, Vec<bool>, Vec<bool>)> {
    (2..40usize).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![(-3i32..3).prop_map(f64::from), -3.0..3.0f64], n),
            0..n,
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn known(flags: &[bool], gold: usize) -> HashSet<EntityId> {
    let mut set: HashSet<EntityId> = flags
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(i, _)| EntityId(i))
        .collect();
    set.insert(EntityId(gold));
    set
}

proptest! {
    #[test]
    fn filtering_more_never_worsens_rank((scores, gold, a, b) in scores_strategy()) {
        let mask = vec![true; scores.len()];
        let small = known(&a, gold);
        let mut large = small.clone();
        large.extend(known(&b, gold));
        let r_small = filtered_rank(&scores, EntityId(gold), &small, &mask).unwrap();
        let r_large = filtered_rank(&scores, EntityId(gold), &large, &mask).unwrap();
        prop_assert!(r_large.twice() <= r_small.twice());
    }

    #[test]
    fn rank_is_shift_invariant((scores, gold, a, _) in scores_strategy(), shift in -8i32..8) {
        let mask = vec![true; scores.len()];
        let filter = known(&a, gold);
        let shifted: Vec<f64> = scores.iter().map(|s| s + f64::from(shift)).collect();
        let before = filtered_rank(&scores, EntityId(gold), &filter, &mask).unwrap();
        let after = filtered_rank(&shifted, EntityId(gold), &filter, &mask).unwrap();
        prop_assert_eq!(before.twice(), after.twice());
        let set: HashSet<usize> = filter.iter().map(|e| e.0).collect();
        prop_assert_eq!(before.twice(), support::doubled_rank(&scores, gold, &set, &mask));
    }

    #[test]
    fn rotate_by_unit_phases_preserves_norm(e in prop::collection::vec(-2.0..2.0f64, 8), theta in prop::collection::vec(0.0..6.3f64, 4)) {
        let r: Vec<f64> = theta.iter().map(|t| t.cos()).chain(theta.iter().map(|t| t.sin())).collect();
        let out = phi(&e, &r, PhiKind::Rotate).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm(&out) - norm(&e)).abs() <= 1e-12 * (1.0 + norm(&e)));
    }

    #[test]
    fn weighted_sum_stays_between_inputs(a in prop::collection::vec(-5.0..5.0f64, 6), b in prop::collection::vec(-5.0..5.0f64, 6), alpha in 0.0..=1.0f64) {
        let out = gamma(&a, &b, GammaKind::WeightedSum, alpha).unwrap();
        for ((o, x), y) in out.iter().zip(&a).zip(&b) {
            prop_assert!(*o >= x.min(*y) - 1e-12 && *o <= x.max(*y) + 1e-12);
        }
    }

    #[test]
    fn truncation_keeps_statements_and_order(st in prop::collection::vec(statement_strategy(), 0..30), n in 0..7usize, seed in any::<u64>()) {
        let out = truncate_qualifiers(&st, n, seed);
        prop_assert_eq!(out.len(), st.len());
        for (t, s) in out.iter().zip(&st) {
            prop_assert_eq!(t.main_triple(), s.main_triple());
            prop_assert_eq!(t.qualifiers.len(), s.qualifiers.len().min(n));
            let mut it = s.qualifiers.iter();
            prop_assert!(t.qualifiers.iter().all(|q| it.any(|x| x == q)));
        }
    }

    #[test]
    fn cleaning_is_idempotent(split in split_strategy()) {
        let (once, _) = clean(&split);
        let (twice, report) = clean(&once);
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(report.unseen_removed, 0);
    }

    #[test]
    fn ratio_sampler_keeps_every_qualified_statement(st in prop::collection::vec(statement_strategy(), 1..40), ratio in 0.05..=1.0f64, seed in any::<u64>()) {
        if let Ok(out) = sample_by_qualifier_ratio(&st, ratio, seed) {
            let want: Vec<_> = st.iter().filter(|s| s.has_qualifiers()).collect();
            let got: Vec<_> = out.iter().filter(|s| s.has_qualifiers()).collect();
            prop_assert_eq!(want, got);
        }
    }
}

fn one_layer(raw: &[RawStatement], h_seed: u64, perturb: Option<usize>) -> (Vec<Vec<f64>>, HashSet<usize>) {
    let vocab = build_vocabulary(raw).unwrap();
    let base = vocab.encode_all(raw).unwrap();
    let (aug, aug_vocab) = augment_edges(&base, &vocab).unwrap();
    let graph = to_sparse(&aug, &aug_vocab).unwrap();
    let config = EncoderConfig {
        num_layers: 1,
        dim: 8,
        dropout: 0.0,
        ..EncoderConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(h_seed);
    let mut params = ParamSet::new();
    let enc = StarEEncoder::new(config.clone(), &mut params, &mut rng).unwrap();
    let mut h = Matrix::xavier(vocab.num_entities(), 8, &mut rng);
    let r = Matrix::xavier(aug_vocab.num_relations(), 8, &mut rng);
    let mut touched = HashSet::new();
    if let Some(x) = perturb {
        for v in h.row_mut(x) {
            *v += 0.5;
        }
        touched.insert(x);
        for st in &aug {
            let mentions = st.subject.0 == x || st.qualifiers.iter().any(|q| q.value.0 == x);
            if mentions {
                touched.insert(st.object.0);
            }
        }
    }
    let (out, _) = encoder::layer_forward_eval(&EdgeIndex::new(&graph), &h, &r, &params, &enc.layers()[0], &config);
    ((0..out.rows()).map(|i| out.row(i).to_vec()).collect(), touched)
}

#[test]
fn one_layer_only_reaches_direct_neighbours() {
    for seed in 0..20 {
        let raw = random_statements(
            &RandomGraphConfig {
                entities: 25,
                relations: 3,
                statements: 30,
                qualified_fraction: 0.4,
                max_qualifiers: 2,
            },
            seed,
        );
        let (base, _) = one_layer(&raw, seed, None);
        let x = (seed as usize * 7) % 25;
        let (moved, touched) = one_layer(&raw, seed, Some(x));
        for (v, (a, b)) in base.iter().zip(&moved).enumerate() {
            if !touched.contains(&v) {
                assert_eq!(a, b, "entity {v} changed although it is not adjacent to {x}");
            }
        }
        assert_ne!(base[x], moved[x]);
    }
}
