//! Datasets: GLUE-style TSV ingestion and the two seeded synthetic corpora.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{tokenize, tokenize_pair, TokenSequence, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub seq: TokenSequence,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

/// Column names of a TSV file with a header row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsvSchema {
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: String,
}

impl Default for TsvSchema {
    fn default() -> Self {
        TsvSchema {
            text_a: "sentence".into(),
            text_b: None,
            label: "label".into(),
        }
    }
}

pub fn read_tsv(r: impl Read, schema: &TsvSchema) -> Result<Vec<RawExample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(false)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("TSV has no column `{name}`")))
    };
    let a = col(&schema.text_a)?;
    let b = schema.text_b.as_deref().map(col).transpose()?;
    let l = col(&schema.label)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(RawExample {
            text_a: rec[a].to_string(),
            text_b: b.map(|b| rec[b].to_string()),
            label: rec[l].trim().to_string(),
        });
    }
    Ok(out)
}

pub fn load_tsv(path: impl AsRef<Path>, schema: &TsvSchema) -> Result<Vec<RawExample>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_tsv(file, schema)
}

/// Maps label strings to class indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub labels: Vec<String>,
}

impl LabelSet {
    /// Sorted distinct labels; numerically when every label is an integer.
    pub fn infer(examples: &[RawExample]) -> Self {
        let set: BTreeSet<&str> = examples.iter().map(|e| e.label.as_str()).collect();
        let mut labels: Vec<String> = set.into_iter().map(str::to_string).collect();
        if labels.iter().all(|l| l.parse::<u64>().is_ok()) {
            labels.sort_by_key(|l| l.parse::<u64>().unwrap());
        }
        LabelSet { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Data(format!("unknown label `{label}`")))
    }
}

pub fn build_vocabulary(examples: &[RawExample]) -> Vocabulary {
    let pairs = examples.iter().any(|e| e.text_b.is_some());
    let texts = examples
        .iter()
        .flat_map(|e| std::iter::once(e.text_a.as_str()).chain(e.text_b.as_deref()));
    Vocabulary::build(texts, pairs)
}

pub fn encode(
    name: &str,
    raw: &[RawExample],
    vocab: &Vocabulary,
    labels: &LabelSet,
    max_len: usize,
) -> Result<Dataset> {
    let mut examples = Vec::with_capacity(raw.len());
    for (i, r) in raw.iter().enumerate() {
        let seq = match &r.text_b {
            Some(b) => tokenize_pair(&r.text_a, b, vocab, max_len)?,
            None => tokenize(&r.text_a, vocab, max_len),
        };
        if seq.len == 0 {
            return Err(Error::Data(format!("{name}: row {} has no tokens", i + 1)));
        }
        examples.push(Example {
            seq,
            label: labels.index(&r.label)?,
        });
    }
    Ok(Dataset {
        name: name.to_string(),
        num_classes: labels.len(),
        examples,
    })
}

const SENTIMENT_KEYWORDS: usize = 20;
const SENTIMENT_FILLERS: usize = 160;

/// Sentences of 5–20 tokens with an odd number (1, 3 or 5) of planted
/// `posK`/`negK` keywords among `wK` fillers; label 1 when positives are
/// the majority.
pub fn keyword_sentiment(n: usize, seed: u64) -> Vec<RawExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(5..=20);
            let k = [1, 3, 5][rng.gen_range(0..3)];
            let mut words: Vec<String> = (0..len - k)
                .map(|_| format!("w{}", rng.gen_range(0..SENTIMENT_FILLERS)))
                .collect();
            let mut pos = 0;
            for _ in 0..k {
                let positive = rng.gen_bool(0.5);
                pos += positive as usize;
                let id = rng.gen_range(0..SENTIMENT_KEYWORDS);
                words.push(if positive {
                    format!("pos{id}")
                } else {
                    format!("neg{id}")
                });
            }
            words.shuffle(&mut rng);
            RawExample {
                text_a: words.join(" "),
                text_b: None,
                label: ((2 * pos > k) as u8).to_string(),
            }
        })
        .collect()
}

const PAIR_KEYWORDS: usize = 30;
const PAIR_FILLERS: usize = 170;

/// Sentence pairs: label 1 when every keyword (`kK`) in B also occurs in A.
/// Roughly half the pairs are positive.
pub fn pair_entailment(n: usize, seed: u64) -> Vec<RawExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentence = |rng: &mut ChaCha8Rng, keys: &[usize], len: usize| {
        let mut words: Vec<String> = (0..len - keys.len())
            .map(|_| format!("f{}", rng.gen_range(0..PAIR_FILLERS)))
            .collect();
        words.extend(keys.iter().map(|k| format!("k{k}")));
        words.shuffle(rng);
        words.join(" ")
    };
    (0..n)
        .map(|_| {
            let mut all: Vec<usize> = (0..PAIR_KEYWORDS).collect();
            all.shuffle(&mut rng);
            let na = rng.gen_range(2..=4);
            let a_keys = all[..na].to_vec();
            let nb = rng.gen_range(1..=na.min(3));
            let entailed = rng.gen_bool(0.5);
            let mut b_keys: Vec<usize> = a_keys[..nb].to_vec();
            if !entailed {
                b_keys[nb - 1] = all[na + rng.gen_range(0..PAIR_KEYWORDS - na)];
            }
            let la = rng.gen_range(5..=12);
            let lb = rng.gen_range(5..=8);
            RawExample {
                text_a: sentence(&mut rng, &a_keys, la),
                text_b: Some(sentence(&mut rng, &b_keys, lb)),
                label: (entailed as u8).to_string(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::words;

    #[test]
    fn sentiment_labels_follow_the_majority() {
        let data = keyword_sentiment(500, 3);
        assert_eq!(data, keyword_sentiment(500, 3));
        let mut ones = 0;
        for e in &data {
            let ws = words(&e.text_a);
            assert!((5..=20).contains(&ws.len()));
            let pos = ws.iter().filter(|w| w.starts_with("pos")).count();
            let neg = ws.iter().filter(|w| w.starts_with("neg")).count();
            assert_eq!((pos + neg) % 2, 1);
            assert_eq!(e.label, if pos > neg { "1" } else { "0" });
            ones += (e.label == "1") as usize;
        }
        assert!((200..300).contains(&ones));
        let vocab = build_vocabulary(&keyword_sentiment(5000, 1));
        assert!((190..=200).contains(&vocab.len()), "{}", vocab.len());
    }

    #[test]
    fn entailment_labels_follow_subset_rule() {
        let data = pair_entailment(400, 5);
        for e in &data {
            let keys = |t: &str| -> BTreeSet<String> {
                words(t)
                    .into_iter()
                    .filter(|w| w.starts_with('k'))
                    .collect()
            };
            let a = keys(&e.text_a);
            let b = keys(e.text_b.as_deref().unwrap());
            assert_eq!(e.label == "1", b.is_subset(&a));
        }
        let vocab = build_vocabulary(&data);
        assert!(vocab.sep_id().is_some());
    }

    #[test]
    fn tsv_ingestion() {
        let tsv = "id\tsentence\tlabel\n1\tA fine film .\t1\n2\tdull\t0\n";
        let raw = read_tsv(tsv.as_bytes(), &TsvSchema::default()).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw[0].text_a, "A fine film .");
        let labels = LabelSet::infer(&raw);
        assert_eq!(labels.labels, vec!["0", "1"]);
        let vocab = build_vocabulary(&raw);
        let ds = encode("toy", &raw, &vocab, &labels, 8).unwrap();
        assert_eq!(ds.labels(), vec![1, 0]);
        assert_eq!(ds.examples[0].seq.len, 4);
    }

    #[test]
    fn tsv_pairs_and_missing_columns() {
        let tsv = "sentence1\tsentence2\tlabel\nx y\ty\tentailment\nx\tz\tneutral\n";
        let schema = TsvSchema {
            text_a: "sentence1".into(),
            text_b: Some("sentence2".into()),
            label: "label".into(),
        };
        let raw = read_tsv(tsv.as_bytes(), &schema).unwrap();
        assert_eq!(raw[1].text_b.as_deref(), Some("z"));
        assert_eq!(LabelSet::infer(&raw).labels, vec!["entailment", "neutral"]);
        assert!(matches!(
            read_tsv(tsv.as_bytes(), &TsvSchema::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn empty_rows_and_unknown_labels_are_data_errors() {
        let raw = vec![RawExample {
            text_a: "   ".into(),
            text_b: None,
            label: "1".into(),
        }];
        let labels = LabelSet {
            labels: vec!["0".into(), "1".into()],
        };
        let vocab = Vocabulary::from_tokens(["a"]).unwrap();
        assert!(matches!(
            encode("x", &raw, &vocab, &labels, 4),
            Err(Error::Data(_))
        ));
        assert!(matches!(labels.index("2"), Err(Error::Data(_))));
    }

    #[test]
    fn ragged_tsv_is_a_data_error() {
        let tsv = "sentence\tlabel\na\t1\nb\n";
        assert!(matches!(
            read_tsv(tsv.as_bytes(), &TsvSchema::default()),
            Err(Error::Data(_))
        ));
    }
}
