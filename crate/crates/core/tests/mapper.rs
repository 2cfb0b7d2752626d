use std::collections::BTreeMap;

use proptest::prelude::*;

use textchart_core::corpus::{generate_synthetic_corpus, EntityKind, EntitySpan, EntityTag, Sample};
use textchart_core::mapper::{
    baseline_map, best_threshold, entity_distance, evaluate_mapper, extract_features, labeled_distances, learn_distance_distributions, pair_dataset,
    train_forest, ForestModel, PairMapper, FEATURE_COUNT,
};
use textchart_core::model_file::ModelFile;
use textchart_core::Error;

fn spans(kind: EntityKind, starts: &[usize]) -> Vec<EntitySpan> {
    starts
        .iter()
        .map(|&start| EntitySpan {
            kind,
            start,
            end: start,
            surface: start.to_string(),
        })
        .collect()
}

/// Raw per-class distance counts, the oracle for the learned histogram.
fn distance_counts(samples: &[Sample]) -> (BTreeMap<i64, u64>, BTreeMap<i64, u64>) {
    let (mut pos, mut neg) = (BTreeMap::new(), BTreeMap::new());
    for s in samples {
        let (xs, ys) = s.spans_by_kind();
        for (i, x) in xs.iter().enumerate() {
            for (k, y) in ys.iter().enumerate() {
                let side = if s.mapping.contains(&(i, k)) { &mut pos } else { &mut neg };
                *side.entry(y.start as i64 - x.start as i64).or_insert(0) += 1;
            }
        }
    }
    (pos, neg)
}

#[test]
fn histogram_matches_counts_where_observed() {
    let corpus = generate_synthetic_corpus(80, 12);
    let hist = learn_distance_distributions(&corpus).unwrap();
    let (pos, neg) = distance_counts(&corpus);
    let total = |m: &BTreeMap<i64, u64>| m.values().sum::<u64>() as f64;
    assert_eq!(labeled_distances(&corpus[0]).len(), {
        let (xs, ys) = corpus[0].spans_by_kind();
        xs.len() * ys.len()
    });
    // Observed bins keep their relative frequencies up to the common
    // renormalization introduced by gap filling.
    for (counts, dist) in [(&pos, &hist.positive), (&neg, &hist.negative)] {
        let (d0, c0) = counts.iter().next().unwrap();
        for (d, c) in counts {
            let want = *c as f64 / *c0 as f64;
            assert!((dist[d] / dist[d0] - want).abs() < 1e-9, "bin {d}");
        }
        let observed_mass: f64 = counts.keys().map(|d| dist[d]).sum();
        assert!(observed_mass <= 1.0 + 1e-12 && observed_mass > 0.0);
        assert!(total(counts) > 0.0);
    }
    assert_eq!(hist.min, *pos.keys().chain(neg.keys()).min().unwrap());
    assert_eq!(hist.max, *pos.keys().chain(neg.keys()).max().unwrap());
}

#[test]
fn histogram_needs_both_classes() {
    assert!(matches!(learn_distance_distributions(&[]), Err(Error::EmptyTrainingSet)));
    // One y entity that every x maps to yields positive pairs only.
    let mut corpus = generate_synthetic_corpus(5, 1);
    for s in &mut corpus {
        let xs = s.spans_by_kind().0.len();
        for t in &mut s.tags {
            if *t == EntityTag::Y {
                *t = EntityTag::None;
            }
        }
        let last = s.tokens.len() - 1;
        s.tags[last] = EntityTag::Y;
        s.mapping = (0..xs).map(|i| (i, 0)).collect();
    }
    assert!(matches!(learn_distance_distributions(&corpus), Err(Error::SingleClass)));
}

#[test]
fn features_follow_the_pairwise_layout() {
    let xs = spans(EntityKind::X, &[2, 6, 10]);
    let ys = spans(EntityKind::Y, &[4, 8]);
    let f = extract_features(&xs, &ys, 1, 0).unwrap().values;
    // positions: x-=2, x=6, x+=10, y-=4 (own), y=4, y+=8
    let p = [2i64, 6, 10, 4, 4, 8];
    let mut want = Vec::new();
    for a in 0..6 {
        for b in a + 1..6 {
            let d = p[b] - p[a];
            want.push(if (a < 3) == (b < 3) { d.abs() } else { d } as f64);
        }
    }
    assert_eq!(f.to_vec(), want);
    assert_eq!(f.len(), FEATURE_COUNT);
    assert!(matches!(extract_features(&xs, &ys, 3, 0), Err(Error::IndexOutOfRange(_))));
}

#[test]
fn single_y_means_every_x_maps_to_it() {
    let corpus = generate_synthetic_corpus(60, 3);
    let hist = learn_distance_distributions(&corpus).unwrap();
    let (f, l) = pair_dataset(&corpus);
    let forest = train_forest(&f, &l, 5, 3).unwrap();
    let xs = spans(EntityKind::X, &[1, 5, 9, 20]);
    let ys = spans(EntityKind::Y, &[12]);
    for mapper in [PairMapper::Baseline(hist), PairMapper::Forest(forest)] {
        assert_eq!(mapper.map(&xs, &ys).unwrap().pairs, vec![(0, 0), (1, 0), (2, 0), (3, 0)]);
        assert!(mapper.map(&xs, &[]).is_err());
    }
}

#[test]
fn gini_split_on_small_examples() {
    assert_eq!(best_threshold(&[1.0, 2.0, 8.0, 9.0], &[false, false, true, true]), Some((0.0, 5.0)));
    assert_eq!(best_threshold(&[3.0, 3.0], &[false, true]), None);
    let (impurity, t) = best_threshold(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
    assert_eq!(t, 1.5);
    assert!((impurity - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn mappers_round_trip_through_model_files() {
    let corpus = generate_synthetic_corpus(40, 5);
    let (f, l) = pair_dataset(&corpus);
    let mappers = [
        PairMapper::Baseline(learn_distance_distributions(&corpus).unwrap()),
        PairMapper::Forest(train_forest(&f, &l, 4, 5).unwrap()),
    ];
    for mapper in mappers {
        let bytes = mapper.to_model_file().unwrap().to_bytes();
        let loaded = PairMapper::from_model_file(&ModelFile::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(loaded, mapper);
    }
}

#[test]
fn evaluation_counts_every_candidate_pair() {
    let corpus = generate_synthetic_corpus(30, 7);
    let hist = learn_distance_distributions(&corpus).unwrap();
    let eval = evaluate_mapper(&PairMapper::Baseline(hist), &corpus).unwrap();
    let pairs: usize = corpus
        .iter()
        .map(|s| {
            let (xs, ys) = s.spans_by_kind();
            xs.len() * ys.len()
        })
        .sum();
    assert_eq!(eval.pair_count, pairs);
    assert_eq!(eval.confusion.total() as usize, pairs);
    let selected: usize = corpus.iter().map(|s| s.spans_by_kind().0.len()).sum();
    assert_eq!((eval.confusion.tp + eval.confusion.fp) as usize, selected);
}

#[test]
fn forest_rejects_degenerate_training_sets() {
    let f = pair_dataset(&generate_synthetic_corpus(5, 1)).0;
    assert!(train_forest(&f[..1], &[true], 3, 0).is_err());
    assert!(matches!(train_forest(&f[..4], &[true; 4], 3, 0), Err(Error::SingleClass)));
    assert!(train_forest(&f[..4], &[true, false], 3, 0).is_err());
    let ok: ForestModel = train_forest(&f[..4], &[true, false, true, false], 3, 0).unwrap();
    assert_eq!(ok.trees.len(), 3);
}

proptest! {
    #[test]
    fn baseline_picks_an_argmax(xs in proptest::collection::btree_set(0usize..60, 1..6), ys in proptest::collection::btree_set(0usize..60, 1..6)) {
        let hist = learn_distance_distributions(&generate_synthetic_corpus(40, 9)).unwrap();
        let xs = spans(EntityKind::X, &xs.into_iter().collect::<Vec<_>>());
        let ys = spans(EntityKind::Y, &ys.into_iter().collect::<Vec<_>>());
        let result = baseline_map(&xs, &ys, &hist).unwrap();
        prop_assert_eq!(result.pairs.len(), xs.len());
        for (i, &(xi, k)) in result.pairs.iter().enumerate() {
            prop_assert_eq!(xi, i);
            let best = ys.iter().map(|y| hist.score(entity_distance(&xs[i], y))).fold(f64::MIN, f64::max);
            prop_assert_eq!(hist.score(entity_distance(&xs[i], &ys[k])), best);
            prop_assert_eq!(result.scores[i], best);
        }
    }

    #[test]
    fn forest_scores_are_probabilities(seed in 0u64..50) {
        let (f, l) = pair_dataset(&generate_synthetic_corpus(20, seed));
        let forest = train_forest(&f, &l, 3, seed).unwrap();
        for x in &f {
            let s = forest.score(&x.values);
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
