use itk_core::features::HashedNgramExtractor;
use itk_core::linear::{FastTextConfig, TrainConfig};
use itk_core::model::{train_model, ModelKind, ModelSpec, TfidfConfig, TrainedModel};
use itk_core::normalize::{clean_record, CleanRecord, IssueText, NormalizationConfig};
use itk_core::synthetic::{generate, SyntheticConfig};
use itk_core::transformer::TransformerConfig;
use itk_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize) -> Vec<CleanRecord> {
    let norm = NormalizationConfig::default();
    generate(&SyntheticConfig::default(), n, 0)
        .iter()
        .map(|r| clean_record(r, &norm))
        .collect()
}

fn spec(kind: ModelKind) -> ModelSpec {
    match kind {
        ModelKind::Logreg => ModelSpec::Logreg {
            tfidf: TfidfConfig::default(),
            train: TrainConfig::logreg_default(),
        },
        ModelKind::Fasttext => ModelSpec::Fasttext {
            fasttext: FastTextConfig {
                dim: 16,
                extractor: HashedNgramExtractor {
                    n_buckets: 1 << 14,
                    ..Default::default()
                },
            },
            train: TrainConfig::fasttext_default(),
        },
        ModelKind::Transformer => ModelSpec::Transformer {
            transformer: TransformerConfig {
                d_model: 16,
                n_heads: 2,
                n_layers: 1,
                d_ff: 32,
                max_len: 64,
                epochs: 1,
                ..Default::default()
            },
            seed: 3,
        },
    }
}

fn random_issue(rng: &mut ChaCha8Rng) -> IssueText {
    const WORDS: &[&str] = &[
        "crash", "feature", "how", "the", "app", "ka", "lomi", "Ünïcode", "foo(bar)", "v1.2", "12345", "src/a.rs",
    ];
    let mut text = |n: usize| -> String {
        (0..rng.random_range(0..n))
            .map(|_| WORDS[rng.random_range(0..WORDS.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    IssueText {
        created_at: "2021-01-01T00:00:00Z".into(),
        author_association: "NONE".into(),
        repository: "https://api.github.com/repos/a/b".into(),
        title: text(6),
        body: text(30),
    }
}

#[test]
fn save_load_predicts_bitwise_identically() {
    let data = corpus(300);
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::Logreg, ModelKind::Fasttext, ModelKind::Transformer] {
        let (model, _) = train_model(&data, &spec(kind), &NormalizationConfig::default()).unwrap();
        let path = dir.path().join(format!("{kind}.itk"));
        model.save(&path).unwrap();
        let loaded = TrainedModel::load(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let issue = random_issue(&mut rng);
            let a = model.predict_text(&issue).unwrap();
            let b = loaded.predict_text(&issue).unwrap();
            assert_eq!(a.label_code, b.label_code);
            for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
                assert_eq!(x.to_bits(), y.to_bits(), "{kind}");
            }
            let s: f64 = a.probabilities.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let data = corpus(200);
    for kind in [ModelKind::Logreg, ModelKind::Fasttext, ModelKind::Transformer] {
        let norm = NormalizationConfig::default();
        let (a, _) = train_model(&data, &spec(kind), &norm).unwrap();
        let (b, _) = train_model(&data, &spec(kind), &norm).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap(), "{kind}");
    }
}

#[test]
fn stored_normalization_is_used_for_prediction() {
    let data = corpus(200);
    let norm = NormalizationConfig::default().with_fields(&[itk_core::normalize::Field::Title]);
    let (model, _) = train_model(&data, &spec(ModelKind::Logreg), &norm).unwrap();
    let loaded = TrainedModel::from_bytes(&model.to_bytes().unwrap()).unwrap();
    assert_eq!(loaded.normalization, norm);
    let issue = IssueText {
        title: "crash".into(),
        body: "feature feature feature how how".into(),
        ..Default::default()
    };
    assert_eq!(loaded.predict_text(&issue).unwrap().label_code, 0);
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(
        TrainedModel::load(std::path::Path::new("/nonexistent/model.itk")),
        Err(Error::Io { .. })
    ));
}
