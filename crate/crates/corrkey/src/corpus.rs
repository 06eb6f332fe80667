//! Corpus ingestion: text normalization, vocabulary construction and
//! training/eval instances with copy-extended token ids.
//!
//! Dataset files are JSONL: one object per line with `title`, `abstract`,
//! `keyphrases` (array of strings) and an optional `id`. Vocabulary files are
//! plain text, one token per line; line number plus the reserved block size
//! gives the id. The reserved block is fixed: PAD, UNK, BOS, EOS, DIGIT.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const DIGIT: usize = 4;
pub const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<digit>"];

pub const DIGIT_TOKEN: &str = "<digit>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed JSON: {source}")]
    MalformedLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("document {0}: source text empty after preprocessing")]
    EmptySource(String),
    #[error("document {0}: empty id")]
    EmptyId(String),
    #[error("document {0}: no keyphrases in training mode")]
    NoKeyphrases(String),
    #[error("vocabulary cap {cap} below reserved block size {reserved}")]
    CapTooSmall { cap: usize, reserved: usize },
    #[error("empty corpus: no usable tokens")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One raw document: title, abstract and gold keyphrases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    #[serde(default)]
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub keyphrases: Vec<String>,
}

/// Lowercase, split into tokens, and replace digit runs.
///
/// Tokens are maximal runs of non-digit alphanumeric characters; every
/// maximal run of ASCII digits becomes the `<digit>` placeholder; any other
/// non-whitespace character is a standalone token.
pub fn preprocess_text(raw: &str) -> Vec<String> {
    let lower = raw.to_lowercase();
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut digits = false;

    let flush = |word: &mut String, digits: &mut bool, tokens: &mut Vec<String>| {
        if !word.is_empty() {
            if *digits {
                tokens.push(DIGIT_TOKEN.to_string());
            } else {
                tokens.push(std::mem::take(word));
            }
            word.clear();
            *digits = false;
        }
    };

    for c in lower.chars() {
        if c.is_whitespace() {
            flush(&mut word, &mut digits, &mut tokens);
        } else if c.is_ascii_digit() {
            if !word.is_empty() && !digits {
                flush(&mut word, &mut digits, &mut tokens);
            }
            digits = true;
            word.push(c);
        } else if c.is_alphanumeric() {
            if digits {
                flush(&mut word, &mut digits, &mut tokens);
            }
            word.push(c);
        } else {
            // punctuation and symbols become standalone tokens
            flush(&mut word, &mut digits, &mut tokens);
            tokens.push(c.to_string());
        }
    }
    flush(&mut word, &mut digits, &mut tokens);
    tokens
}

/// Token ids with a fixed reserved block at the bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    word_to_id: HashMap<String, usize>,
    id_to_word: Vec<String>,
}

impl Vocab {
    /// Keep the `cap - reserved` most frequent tokens; frequency ties break
    /// by first occurrence across the streams.
    pub fn build<'a>(
        token_streams: impl IntoIterator<Item = &'a [String]>,
        cap: usize,
    ) -> Result<Vocab, CorpusError> {
        if cap < RESERVED.len() {
            return Err(CorpusError::CapTooSmall {
                cap,
                reserved: RESERVED.len(),
            });
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new(); // token -> (count, first index)
        let mut seen = 0usize;
        for stream in token_streams {
            for tok in stream {
                let entry = counts.entry(tok.as_str()).or_insert((0, seen));
                entry.0 += 1;
                seen += 1;
            }
        }
        counts.retain(|tok, _| !RESERVED.contains(tok));

        let mut ranked: Vec<(&str, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        ranked.truncate(cap - RESERVED.len());

        let mut id_to_word: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_word.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        let word_to_id = id_to_word
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Vocab {
            word_to_id,
            id_to_word,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.word_to_id.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.id_to_word.get(id).map(String::as_str)
    }

    /// Serialize the non-reserved tokens, one per line.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for w in &self.id_to_word[RESERVED.len()..] {
            let _ = writeln!(out, "{}", w);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab, CorpusError> {
        let text = fs::read_to_string(path)?;
        let mut id_to_word: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_word.extend(text.lines().map(|l| l.to_string()));
        let word_to_id = id_to_word
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Vocab {
            word_to_id,
            id_to_word,
        })
    }
}

/// One source sequence paired with an ordered chunk of its target phrases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub id: String,
    /// In-vocabulary ids (OOV source words map to UNK).
    pub source_ids: Vec<usize>,
    /// Extended ids: OOV source words get dense per-document ids >= |vocab|,
    /// ordered by first occurrence.
    pub source_ext_ids: Vec<usize>,
    /// Preprocessed source tokens, aligned with the id sequences.
    pub source_tokens: Vec<String>,
    /// Target phrases as id sequences ending in EOS.
    pub phrases: Vec<Vec<usize>>,
    /// This document's unique OOV source words in first-occurrence order.
    pub oov_words: Vec<String>,
}

impl TrainingInstance {
    pub fn ext_vocab_size(&self, vocab: &Vocab) -> usize {
        vocab.len() + self.oov_words.len()
    }

    /// Render an extended id back to a surface token.
    pub fn render(&self, id: usize, vocab: &Vocab) -> String {
        if id < vocab.len() {
            vocab.word(id).unwrap_or(RESERVED[UNK]).to_string()
        } else {
            self.oov_words[id - vocab.len()].clone()
        }
    }
}

/// Build instances for one document: preprocess, truncate, resolve copy ids,
/// and chunk the phrase list into groups of at most `max_phrases`.
pub fn make_instances(
    doc: &Document,
    vocab: &Vocab,
    max_phrases: usize,
    max_source_len: usize,
    require_phrases: bool,
) -> Result<Vec<TrainingInstance>, CorpusError> {
    let doc_id = if doc.id.is_empty() {
        "<unnamed>".to_string()
    } else {
        doc.id.clone()
    };
    let mut source_tokens = preprocess_text(&doc.title);
    source_tokens.extend(preprocess_text(&doc.abstract_text));
    source_tokens.truncate(max_source_len);
    if source_tokens.is_empty() {
        return Err(CorpusError::EmptySource(doc_id));
    }

    let mut oov_words: Vec<String> = Vec::new();
    let mut source_ids = Vec::with_capacity(source_tokens.len());
    let mut source_ext_ids = Vec::with_capacity(source_tokens.len());
    for tok in &source_tokens {
        match vocab.id(tok) {
            Some(i) => {
                source_ids.push(i);
                source_ext_ids.push(i);
            }
            None => {
                let pos = match oov_words.iter().position(|w| w == tok) {
                    Some(p) => p,
                    None => {
                        oov_words.push(tok.clone());
                        oov_words.len() - 1
                    }
                };
                source_ids.push(UNK);
                source_ext_ids.push(vocab.len() + pos);
            }
        }
    }

    let mut phrase_ids: Vec<Vec<usize>> = Vec::new();
    for phrase in &doc.keyphrases {
        let toks = preprocess_text(phrase);
        if toks.is_empty() {
            continue;
        }
        let mut ids: Vec<usize> = toks
            .iter()
            .map(|tok| match vocab.id(tok) {
                Some(i) => i,
                None => match oov_words.iter().position(|w| w == tok) {
                    Some(p) => vocab.len() + p,
                    None => UNK,
                },
            })
            .collect();
        ids.push(EOS);
        phrase_ids.push(ids);
    }

    if require_phrases && phrase_ids.is_empty() {
        return Err(CorpusError::NoKeyphrases(doc_id));
    }

    let chunks: Vec<Vec<Vec<usize>>> = if phrase_ids.is_empty() {
        vec![vec![]]
    } else {
        phrase_ids
            .chunks(max_phrases)
            .map(|c| c.to_vec())
            .collect()
    };

    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(k, phrases)| TrainingInstance {
            id: if k == 0 {
                doc_id.clone()
            } else {
                format!("{}#{}", doc_id, k)
            },
            source_ids: source_ids.clone(),
            source_ext_ids: source_ext_ids.clone(),
            source_tokens: source_tokens.clone(),
            phrases,
            oov_words: oov_words.clone(),
        })
        .collect())
}

/// Read a JSONL corpus, reporting the first malformed line by number.
pub fn read_jsonl(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: Document = serde_json::from_str(&line)
            .map_err(|source| CorpusError::MalformedLine { line: i + 1, source })?;
        if doc.id.is_empty() {
            doc.id = format!("doc{}", i + 1);
        }
        docs.push(doc);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn preprocess_lowercases() {
        assert_eq!(preprocess_text("Resolving Conflict"), toks(&["resolving", "conflict"]));
    }

    #[test]
    fn preprocess_replaces_digit_runs() {
        assert_eq!(
            preprocess_text("conference servers 42"),
            toks(&["conference", "servers", "<digit>"])
        );
        assert_eq!(preprocess_text("3.5"), toks(&["<digit>", ".", "<digit>"]));
        assert_eq!(preprocess_text("mp3 player"), toks(&["mp", "<digit>", "player"]));
    }

    #[test]
    fn preprocess_empty_is_empty() {
        assert_eq!(preprocess_text(""), Vec::<String>::new());
    }

    #[test]
    fn preprocess_detaches_punctuation() {
        assert_eq!(
            preprocess_text("state-of-the-art, really?"),
            toks(&["state", "-", "of", "-", "the", "-", "art", ",", "really", "?"])
        );
    }

    #[test]
    fn vocab_keeps_most_frequent() {
        let stream = toks(&["a", "a", "a", "b"]);
        let v = Vocab::build([stream.as_slice()], RESERVED.len() + 2).unwrap();
        assert!(v.id("a").is_some() && v.id("b").is_some());

        let stream = toks(&["a", "a", "a", "b", "b", "c"]);
        let v = Vocab::build([stream.as_slice()], RESERVED.len() + 2).unwrap();
        assert!(v.id("a").is_some() && v.id("b").is_some());
        assert_eq!(v.id("c"), None);
    }

    #[test]
    fn vocab_tie_breaks_by_first_occurrence() {
        let stream = toks(&["a", "b", "a", "b"]);
        let v = Vocab::build([stream.as_slice()], RESERVED.len() + 1).unwrap();
        assert!(v.id("a").is_some());
        assert_eq!(v.id("b"), None);

        let stream = toks(&["b", "a", "b", "a"]);
        let v = Vocab::build([stream.as_slice()], RESERVED.len() + 1).unwrap();
        assert!(v.id("b").is_some());
        assert_eq!(v.id("a"), None);
    }

    #[test]
    fn vocab_reserved_block_is_stable() {
        let stream = toks(&["x"]);
        let v = Vocab::build([stream.as_slice()], 100).unwrap();
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), Some(i));
            assert_eq!(v.word(i), Some(*r));
        }
        assert_eq!(v.id("x"), Some(RESERVED.len()));
    }

    #[test]
    fn vocab_cap_below_reserved_rejected() {
        let stream = toks(&["x"]);
        assert!(Vocab::build([stream.as_slice()], 2).is_err());
    }

    #[test]
    fn vocab_roundtrips_through_file_format() {
        let stream = toks(&["alpha", "beta", "alpha"]);
        let v = Vocab::build([stream.as_slice()], 100).unwrap();
        let dir = std::env::temp_dir().join("corrkey_vocab_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vocab.txt");
        v.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(v, loaded);
    }

    fn doc(title: &str, abs: &str, phrases: &[&str]) -> Document {
        Document {
            id: "d1".into(),
            title: title.into(),
            abstract_text: abs.into(),
            keyphrases: phrases.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn tiny_vocab(words: &[&str]) -> Vocab {
        let stream: Vec<String> = words.iter().map(|s| s.to_string()).collect();
        Vocab::build([stream.as_slice()], RESERVED.len() + words.len()).unwrap()
    }

    #[test]
    fn many_phrases_split_into_chunks() {
        let phrases: Vec<String> = (0..12).map(|i| format!("phrase{}", i)).collect();
        let refs: Vec<&str> = phrases.iter().map(String::as_str).collect();
        let d = doc("a title", "an abstract", &refs);
        let v = tiny_vocab(&["a", "title", "an", "abstract"]);
        let instances = make_instances(&d, &v, 10, 400, true).unwrap();
        assert_eq!(instances.len(), 2);
        assert_eq!(instances[0].phrases.len(), 10);
        assert_eq!(instances[1].phrases.len(), 2);
        assert_eq!(instances[0].id, "d1");
        assert_eq!(instances[1].id, "d1#1");
    }

    #[test]
    fn few_phrases_single_instance() {
        let d = doc("a title", "an abstract", &["one", "two", "three"]);
        let v = tiny_vocab(&["a", "title", "an", "abstract", "one", "two", "three"]);
        let instances = make_instances(&d, &v, 10, 400, true).unwrap();
        assert_eq!(instances.len(), 1);
        assert_eq!(instances[0].phrases.len(), 3);
    }

    #[test]
    fn oov_phrase_word_in_source_gets_extended_id() {
        // "voip" is OOV but sits at source position 4
        let d = doc("low latency audio with voip", "", &["voip"]);
        let v = tiny_vocab(&["low", "latency", "audio", "with"]);
        let instances = make_instances(&d, &v, 10, 400, true).unwrap();
        let inst = &instances[0];
        assert_eq!(inst.source_tokens[4], "voip");
        assert_eq!(inst.oov_words, vec!["voip".to_string()]);
        assert_eq!(inst.source_ext_ids[4], v.len());
        assert_eq!(inst.source_ids[4], UNK);
        assert_eq!(inst.phrases[0], vec![v.len(), EOS]);
    }

    #[test]
    fn phrase_word_nowhere_maps_to_unk() {
        let d = doc("some title", "", &["missing"]);
        let v = tiny_vocab(&["some", "title"]);
        let instances = make_instances(&d, &v, 10, 400, true).unwrap();
        assert_eq!(instances[0].phrases[0], vec![UNK, EOS]);
    }

    #[test]
    fn empty_source_rejected() {
        let d = doc("", "", &["x"]);
        let v = tiny_vocab(&["a"]);
        assert!(matches!(
            make_instances(&d, &v, 10, 400, true),
            Err(CorpusError::EmptySource(_))
        ));
    }

    #[test]
    fn source_truncated_to_max_len() {
        let d = doc("a b c d e f", "", &["a"]);
        let v = tiny_vocab(&["a", "b", "c", "d", "e", "f"]);
        let instances = make_instances(&d, &v, 10, 3, true).unwrap();
        assert_eq!(instances[0].source_tokens.len(), 3);
    }

    #[test]
    fn ext_ids_roundtrip_to_tokens() {
        let d = doc(
            "qubit decoherence in qubit arrays",
            "fast qubit gates",
            &["qubit"],
        );
        let v = tiny_vocab(&["in", "fast", "gates"]);
        let inst = &make_instances(&d, &v, 10, 400, true).unwrap()[0];
        let decoded: Vec<String> = inst
            .source_ext_ids
            .iter()
            .map(|&i| inst.render(i, &v))
            .collect();
        assert_eq!(decoded, inst.source_tokens);
        // dense, document-local, ordered by first occurrence
        assert_eq!(inst.oov_words, vec!["qubit".to_string(), "decoherence".to_string(), "arrays".to_string()]);
        let max_id = inst.source_ext_ids.iter().max().unwrap();
        assert!(*max_id < v.len() + inst.oov_words.len());
    }
}
