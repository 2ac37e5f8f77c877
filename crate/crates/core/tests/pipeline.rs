use proptest::prelude::*;
use salience::backend::{MaskedLm, ReferenceConfig, ReferenceMlm, UniformBackend};
use salience::data::{load_dataset, write_dataset, AnnotatedTriple, Dataset, Schema, Triple};
use salience::datatools::{split_concept, split_random, Ratios, Strictness};
use salience::eval::auc;
use salience::scoring::{score_batch, ScoreConfig};
use salience::templates::{PromptLayout, TemplateRegistry};
use salience::training::{train, LossMode, ModelArtifact, TrainConfig};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn triple(s: &str, o: &str) -> Triple {
    Triple::from_parts(s, "requires", o).unwrap()
}

/// Each subject is always followed by its partner object, so the backend
/// learns a near-deterministic bigram across the template.
fn bigram_backend() -> ReferenceMlm {
    let pairs = [("run", "shoe"), ("swim", "pool"), ("cook", "pan"), ("read", "book")];
    let corpus: Vec<Vec<String>> = (0..40)
        .flat_map(|_| pairs.iter().map(|(s, o)| words(&format!("{s} requires {o} ."))))
        .collect();
    ReferenceMlm::train(&corpus, ReferenceConfig::new(1, 16, 1, 600)).unwrap()
}

#[test]
fn forced_bigram_ranks_partners_above_strangers() {
    let mlm = bigram_backend();
    let registry = TemplateRegistry::default();
    let triples = vec![
        triple("run", "shoe"),
        triple("swim", "pool"),
        triple("cook", "pan"),
        triple("read", "book"),
        triple("run", "pan"),
        triple("swim", "book"),
        triple("cook", "shoe"),
        triple("read", "pool"),
    ];
    let labels = [1, 1, 1, 1, 0, 0, 0, 0];
    let out = score_batch(&mlm, &registry, &triples, None, &ScoreConfig::default()).unwrap();
    assert!(out.failures.is_empty());
    let salience: Vec<f64> = out.scores.iter().map(|s| s.unwrap().salience).collect();
    assert_eq!(auc(&salience, &labels).unwrap(), 1.0, "{salience:?}");
    for s in out.scores.iter().take(4) {
        let s = s.unwrap();
        assert!(s.necessity > 0.0 && s.sufficiency > 0.0, "{s:?}");
    }
}

#[test]
fn uniform_scores_depend_only_on_span_lengths() {
    let backend = UniformBackend::new(10, 8).unwrap();
    let triples = vec![triple("a b", "c"), triple("d", "e f g"), triple("h", "i")];
    let spans = [(2.0, 1.0), (1.0, 3.0), (1.0, 1.0)];
    let config = ScoreConfig::default();
    let alpha = config.alpha;
    let out = score_batch(&backend, &TemplateRegistry::default(), &triples, None, &config).unwrap();
    for (s, (a, b)) in out.scores.into_iter().zip(spans) {
        let s = s.unwrap();
        // Every token costs ln V, so only the span lengths remain.
        let nec = -a * (1.0 - alpha) / (a + alpha * b);
        let suf = -b * (1.0 - alpha) / (b + alpha * a);
        assert!((s.necessity - nec).abs() < 1e-12, "{s:?}");
        assert!((s.sufficiency - suf).abs() < 1e-12, "{s:?}");
    }
}

#[test]
fn trained_model_round_trips_through_disk() {
    let mlm = bigram_backend();
    let registry = TemplateRegistry::default();
    let records: Vec<AnnotatedTriple> = [
        ("run", "shoe", 1),
        ("swim", "pool", 1),
        ("cook", "pan", 1),
        ("read", "book", 1),
        ("run", "pan", 0),
        ("swim", "book", 0),
        ("cook", "shoe", 0),
        ("read", "pool", 0),
    ]
    .iter()
    .map(|&(s, o, l)| AnnotatedTriple::with_salient(triple(s, o), l))
    .collect();
    let data = Dataset::new("pairs", Schema::Simplified, records);
    let config = TrainConfig {
        loss_mode: LossMode::Simplified,
        learning_rate: 1e-3,
        epochs: 2,
        layout: PromptLayout::new(1, 1, 1),
        ..TrainConfig::default()
    };
    let model = train(&config, &data, &data, &mlm, &registry).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = ModelArtifact::load(dir.path()).unwrap();
    assert_eq!(loaded, model);
    let a = score_batch(&mlm, &registry, &data.triples(), Some(&model), &config.score_config).unwrap();
    let b = score_batch(&mlm, &registry, &data.triples(), Some(&loaded), &config.score_config).unwrap();
    assert_eq!(a, b);
    assert_eq!(loaded.backend_fingerprint, mlm.fingerprint());
}

#[test]
fn dataset_files_round_trip() {
    let records = vec![
        AnnotatedTriple::fully_labeled(triple("run", "shoe"), 1.0, 0.5, 1),
        AnnotatedTriple::fully_labeled(triple("read", "pool"), 0.0, 0.0, 0),
    ];
    let data = Dataset::new("rt", Schema::Original, records);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.jsonl");
    write_dataset(&data, &path).unwrap();
    let back = load_dataset(&path, Schema::Original).unwrap();
    assert_eq!(back.records, data.records);
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    prop::collection::vec((0u8..12, 0u8..20), 10..80).prop_map(|pairs| {
        let records = pairs
            .into_iter()
            .map(|(s, o)| AnnotatedTriple::unlabeled(triple(&format!("s{s}"), &format!("o{o}"))))
            .collect();
        Dataset::new("prop", Schema::Unlabeled, records)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_are_seeded_partitions(data in dataset_strategy(), seed in 0u64..1000) {
        let ratios = Ratios::new(0.7, 0.15, 0.15).unwrap();
        let a = split_random(&data, ratios, seed).unwrap();
        prop_assert!(a.is_total_partition(data.len()));
        prop_assert_eq!(&a, &split_random(&data, ratios, seed).unwrap());
        let c = split_concept(&data, ratios, seed, Strictness::Subject).unwrap();
        prop_assert!(c.assignment.is_total_partition(data.len()));
        prop_assert_eq!(c.assignment, split_concept(&data, ratios, seed, Strictness::Subject).unwrap().assignment);
    }

    #[test]
    fn auc_ignores_monotone_rescaling(
        pairs in prop::collection::vec((-5.0f64..5.0, 0u8..2), 2..100),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let (scores, labels): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let moved: Vec<f64> = scores.iter().map(|x| x * scale + shift).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&moved, &labels).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        prop_assert!((auc(&scores, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
    }
}
