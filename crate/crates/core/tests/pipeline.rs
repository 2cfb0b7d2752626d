use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;

use textchart_core::corpus::{generate_synthetic_corpus, ChartType, EntityKind, EntitySpan, Sample, Token};
use textchart_core::mapper::{learn_distance_distributions, MappingResult, PairMapper};
use textchart_core::pipeline::{
    count_stage_errors, cumulative_error_frequency, evaluate_pipeline, run_pipeline, run_pipeline_tokens, ChartTypePredictor, EntityMapper,
    EntityRecognizer, FixedChartTypes, FixedEntities, FixedMapping, PipelineOutcome, StageErrorReport,
};
use textchart_core::Result;

/// Stand-in stages that answer with the gold labels of whichever sample has
/// the given tokens.
struct Oracle {
    by_tokens: HashMap<Vec<String>, Sample>,
}

impl Oracle {
    fn new(samples: &[Sample]) -> Self {
        let by_tokens = samples.iter().map(|s| (s.tokens.iter().map(|t| t.text.clone()).collect(), s.clone())).collect();
        Self { by_tokens }
    }

    fn lookup(&self, tokens: &[Token]) -> &Sample {
        &self.by_tokens[&tokens.iter().map(|t| t.text.clone()).collect::<Vec<_>>()]
    }
}

impl EntityRecognizer for Oracle {
    fn recognize(&self, tokens: &[Token]) -> Result<(Vec<EntitySpan>, Vec<EntitySpan>)> {
        Ok(self.lookup(tokens).spans_by_kind())
    }
}

impl ChartTypePredictor for Oracle {
    fn predict(&self, tokens: &[Token]) -> Result<textchart_core::chart_type::ChartTypeResult> {
        let types = &self.lookup(tokens).chart_types;
        let mut result = textchart_core::chart_type::decide(0.0, 0.0, 0.5);
        result.types = types.clone();
        Ok(result)
    }
}

/// Gold mapping keyed by the entity start positions.
struct OracleMapper(HashMap<(Vec<usize>, Vec<usize>), Vec<(usize, usize)>>);

impl OracleMapper {
    fn new(samples: &[Sample]) -> Self {
        let key = |s: &Sample| {
            let (xs, ys) = s.spans_by_kind();
            (xs.iter().map(|x| x.start).collect(), ys.iter().map(|y| y.start).collect())
        };
        Self(samples.iter().map(|s| (key(s), s.mapping.clone())).collect())
    }
}

impl EntityMapper for OracleMapper {
    fn map(&self, xs: &[EntitySpan], ys: &[EntitySpan]) -> Result<MappingResult> {
        let key = (xs.iter().map(|x| x.start).collect(), ys.iter().map(|y| y.start).collect());
        let pairs = self.0[&key].clone();
        Ok(MappingResult {
            scores: vec![1.0; pairs.len()],
            pairs,
        })
    }
}

fn span(kind: EntityKind, start: usize, surface: &str) -> EntitySpan {
    EntitySpan {
        kind,
        start,
        end: start,
        surface: surface.into(),
    }
}

#[test]
fn gold_stages_make_no_errors() {
    let corpus = generate_synthetic_corpus(40, 17);
    let oracle = Oracle::new(&corpus);
    let mapper = OracleMapper::new(&corpus);
    let reports = evaluate_pipeline(&corpus, &oracle, &mapper, &oracle).unwrap();
    assert_eq!(reports.len(), corpus.len());
    for (r, s) in reports.iter().zip(&corpus) {
        assert_eq!(r, &StageErrorReport { sample_id: s.id.clone(), stage1_errors: 0, stage2_errors: 0, stage3_errors: 0 });
    }
}

#[test]
fn stage_errors_count_symmetric_differences() {
    let sample = generate_synthetic_corpus(1, 4).remove(0);
    let (mut xs, ys) = sample.spans_by_kind();
    let dropped = xs.pop().unwrap();
    let remaining = FixedMapping((0..xs.len()).map(|i| (i, 0)).collect());
    let outcome = run_pipeline_tokens(
        sample.tokens.clone(),
        &FixedEntities { xs, ys: ys.clone() },
        &remaining,
        &FixedChartTypes(BTreeSet::from([ChartType::Pie])),
    )
    .unwrap();
    // A mapper that pairs every x with y 0 misses every gold pair not on y 0.
    let all_first = FixedMapping((0..sample.spans_by_kind().0.len()).map(|i| (i, 0)).collect());
    let report = count_stage_errors(outcome.trace(), &sample, &all_first).unwrap();
    assert_eq!(report.stage1_errors, 1, "dropped {dropped:?}");
    let equal_counts = sample.spans_by_kind().0.len() == ys.len();
    let missed = if equal_counts {
        sample.mapping.iter().filter(|&&(i, k)| i != k).count()
    } else {
        sample.mapping.iter().filter(|&&(_, k)| k != 0).count()
    };
    assert_eq!(report.stage2_errors, missed);
    let predicted = BTreeSet::from([ChartType::Bar, ChartType::Pie]);
    assert_eq!(report.stage3_errors, predicted.symmetric_difference(&sample.chart_types).count());
}

#[test]
fn missing_entities_are_unchartable_but_still_typed() {
    let types = FixedChartTypes(BTreeSet::from([ChartType::Line]));
    for (xs, ys, reason) in [
        (vec![], vec![], "no x or y entities found"),
        (vec![span(EntityKind::X, 0, "May")], vec![], "no y entities found"),
        (vec![], vec![span(EntityKind::Y, 1, "4")], "no x entities found"),
    ] {
        let outcome = run_pipeline("May 4", &FixedEntities { xs, ys }, &FixedMapping(vec![]), &types).unwrap();
        match outcome {
            PipelineOutcome::Unchartable { reason: got, trace } => {
                assert_eq!(got, reason);
                assert!(trace.chart.types.contains(&ChartType::Line));
                assert!(trace.mapping.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn labels_follow_x_order_whatever_the_mapper_order() {
    let recognizer = FixedEntities {
        xs: vec![span(EntityKind::X, 0, "a"), span(EntityKind::X, 2, "b"), span(EntityKind::X, 4, "c")],
        ys: vec![span(EntityKind::Y, 1, "1"), span(EntityKind::Y, 3, "2")],
    };
    let mapper = FixedMapping(vec![(2, 1), (0, 0), (1, 1)]);
    let outcome = run_pipeline("a 1 b 2 c", &recognizer, &mapper, &FixedChartTypes(BTreeSet::new())).unwrap();
    let spec = outcome.spec().unwrap();
    assert_eq!(spec.x_labels, ["a", "b", "c"]);
    assert_eq!(spec.y_values, ["1", "2", "2"]);
    assert!(!outcome.trace().bypassed);
}

#[test]
fn learned_mapper_is_used_when_counts_differ() {
    let corpus = generate_synthetic_corpus(50, 6);
    let mapper = PairMapper::Baseline(learn_distance_distributions(&corpus).unwrap());
    let sample = corpus.iter().find(|s| {
        let (xs, ys) = s.spans_by_kind();
        xs.len() != ys.len() && !ys.is_empty()
    });
    let Some(sample) = sample else { return };
    let (xs, ys) = sample.spans_by_kind();
    let outcome = run_pipeline_tokens(sample.tokens.clone(), &FixedEntities { xs: xs.clone(), ys: ys.clone() }, &mapper, &FixedChartTypes(BTreeSet::new())).unwrap();
    assert_eq!(outcome.trace().mapping, mapper.map(&xs, &ys).unwrap().pairs);
}

proptest! {
    #[test]
    fn cumulative_frequency_matches_counting(errors in proptest::collection::vec((0usize..6, 0usize..6, 0usize..6), 0..30)) {
        let reports: Vec<StageErrorReport> = errors
            .iter()
            .enumerate()
            .map(|(i, &(a, b, c))| StageErrorReport { sample_id: i.to_string(), stage1_errors: a, stage2_errors: b, stage3_errors: c })
            .collect();
        let cum = cumulative_error_frequency(&reports);
        let stages: [(&_, fn(&StageErrorReport) -> usize); 3] = [
            (&cum.stage1, |r| r.stage1_errors),
            (&cum.stage2, |r| r.stage2_errors),
            (&cum.stage3, |r| r.stage3_errors),
        ];
        for (table, get) in stages {
            let max = reports.iter().map(get).max();
            prop_assert_eq!(table.len(), max.map_or(0, |m| m + 1));
            for (&k, &n) in table.iter() {
                prop_assert_eq!(n, reports.iter().filter(|r| get(r) <= k).count());
            }
        }
    }

    #[test]
    fn equal_counts_bypass_any_mapper(n in 1usize..8, perm_seed in any::<u64>()) {
        let xs: Vec<EntitySpan> = (0..n).map(|i| span(EntityKind::X, 2 * i, &format!("x{i}"))).collect();
        let ys: Vec<EntitySpan> = (0..n).map(|i| span(EntityKind::Y, 2 * i + 1, &format!("{i}"))).collect();
        let scrambled = FixedMapping((0..n).map(|i| (i, (i as u64 ^ perm_seed) as usize % n)).collect());
        let text: Vec<String> = (0..n).flat_map(|i| [format!("x{i}"), i.to_string()]).collect();
        let outcome = run_pipeline(&text.join(" "), &FixedEntities { xs, ys }, &scrambled, &FixedChartTypes(BTreeSet::new())).unwrap();
        prop_assert!(outcome.trace().bypassed);
        let spec = outcome.spec().unwrap();
        prop_assert_eq!(spec.y_values.clone(), (0..n).map(|i| i.to_string()).collect::<Vec<_>>());
    }
}
