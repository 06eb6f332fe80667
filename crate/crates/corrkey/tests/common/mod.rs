//! Shared fixtures for the integration and acceptance suites: synthetic
//! corpora with known structure and small helpers for driving the pipeline.

use corrkey::corpus::{make_instances, Document, TrainingInstance, Vocab, RESERVED};
use corrkey::training::TrainConfig;

/// Content words that are invariant under stemming, so present/absent
/// bookkeeping in fixtures stays exact.
pub const POOL: [&str; 30] = [
    "red", "blue", "green", "black", "white", "sun", "moon", "star", "rock", "sand", "wind",
    "rain", "snow", "fire", "ice", "tree", "leaf", "root", "bird", "fish", "wolf", "bear", "frog",
    "crab", "ant", "bee", "oak", "elm", "fig", "yew",
];

/// Words reserved for absent gold phrases; they appear only in keyphrase
/// lists, never in any source text.
pub const ABSENT_POOL: [&str; 20] = [
    "ghost", "omen", "myth", "rune", "echo", "shade", "glow", "ember", "frost", "mist", "dusk",
    "dawn", "storm", "tide", "drift", "spark", "flame", "cloud", "peak", "vale",
];

/// Ten documents, each with five present phrases (lengths 3,2,2,2,1) laid
/// out contiguously in the source and one absent two-word phrase unique to
/// the document. No gold phrase is a substring of another.
pub fn overfit_corpus() -> Vec<Document> {
    (0..10)
        .map(|i| {
            let w = |k: usize| POOL[(i * 7 + k) % 30].to_string();
            let p1 = vec![w(0), w(1), w(2)];
            let p2 = vec![w(3), w(4)];
            let p3 = vec![w(5), w(6)];
            let p4 = vec![w(7), w(8)];
            let p5 = vec![w(9)];
            let absent = vec![
                ABSENT_POOL[2 * i].to_string(),
                ABSENT_POOL[2 * i + 1].to_string(),
            ];
            let title = p1.join(" ");
            let abstract_text = format!(
                "on {} in {} at {} by {} end",
                p2.join(" "),
                p3.join(" "),
                p4.join(" "),
                p5.join(" ")
            );
            Document {
                id: format!("doc{}", i),
                title,
                abstract_text,
                keyphrases: vec![
                    p1.join(" "),
                    p2.join(" "),
                    p3.join(" "),
                    p4.join(" "),
                    p5.join(" "),
                    absent.join(" "),
                ],
            }
        })
        .collect()
}

/// Two-topic corpus: each document's source interleaves a topic-A section
/// and a topic-B section, and its gold set spans both topics.
pub fn two_topic_corpus() -> Vec<Document> {
    let topic_a = ["sun", "moon", "star", "sky", "dawn", "dusk", "glow", "ray"];
    let topic_b = ["fish", "crab", "wave", "tide", "reef", "sand", "kelp", "foam"];
    (0..8)
        .map(|i| {
            let a = |k: usize| topic_a[(i + k) % 8].to_string();
            let b = |k: usize| topic_b[(i + k) % 8].to_string();
            let pa1 = vec![a(0), a(1)];
            let pa2 = vec![a(2)];
            let pb1 = vec![b(0), b(1)];
            let pb2 = vec![b(2)];
            Document {
                id: format!("tt{}", i),
                title: format!("{} and {}", pa1.join(" "), pb1.join(" ")),
                abstract_text: format!("{} over {} under {}", a(2), b(2), pa1.join(" ")),
                keyphrases: vec![pa1.join(" "), pa2.join(" "), pb1.join(" "), pb2.join(" ")],
            }
        })
        .collect()
}

/// Vocabulary over every token in the corpus (sources and keyphrases).
pub fn corpus_vocab(docs: &[Document], cap: usize) -> Vocab {
    let streams: Vec<Vec<String>> = docs
        .iter()
        .map(|d| {
            let mut t = corrkey::corpus::preprocess_text(&d.title);
            t.extend(corrkey::corpus::preprocess_text(&d.abstract_text));
            for kp in &d.keyphrases {
                t.extend(corrkey::corpus::preprocess_text(kp));
            }
            t
        })
        .collect();
    Vocab::build(streams.iter().map(|s| s.as_slice()), cap).unwrap()
}

pub fn corpus_instances(
    docs: &[Document],
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Vec<TrainingInstance> {
    docs.iter()
        .flat_map(|d| make_instances(d, vocab, cfg.max_phrases, cfg.max_source_len, true).unwrap())
        .collect()
}

/// Overfit-scale hyperparameters shared by the acceptance runs.
pub fn overfit_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        clip: 1.0,
        dropout: 0.0,
        embed_dim: 24,
        hidden_dim: 24,
        attn_dim: None,
        max_epochs: 200,
        patience: 200,
        seed,
        ..TrainConfig::default()
    }
}

/// Reserved-block sanity for fixtures.
pub fn reserved_len() -> usize {
    RESERVED.len()
}
