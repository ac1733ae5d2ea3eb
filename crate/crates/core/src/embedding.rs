//! Vocabulary, tokenization, and the embedded model input.
//!
//! Token ids start at 1; id 0 is padding and `|V| + 1` is the unknown token,
//! so an embedding table has `|V| + 2` rows. The model input is the learned
//! token embedding (width `D′`) concatenated with a fixed sinusoidal position
//! encoding (width `D′`), giving `D = 2D′`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::compute::Tensor;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
/// Separator inserted between the two sentences of a pair. Brackets are
/// split off by the tokenizer, so no input text can produce this token.
pub const SEP_TOKEN: &str = "[SEP]";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    lut: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Ids are assigned in the given order, starting at 1.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary::default();
        for t in tokens {
            let t = t.into();
            if t.is_empty() || t.contains(['\t', '\n']) {
                return Err(Error::Data(format!("invalid vocabulary token {t:?}")));
            }
            if v.lut.contains_key(&t) {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
            v.tokens.push(t.clone());
            v.lut.insert(t, v.tokens.len());
        }
        Ok(v)
    }

    /// Builds from a corpus: most frequent first, ties broken lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, with_sep: bool) -> Self {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in words(text) {
                *freq.entry(w).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = freq.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let sep = with_sep.then(|| SEP_TOKEN.to_string());
        Vocabulary::from_tokens(sep.into_iter().chain(entries.into_iter().map(|(t, _)| t)))
            .expect("corpus tokens are unique and well-formed")
    }

    /// `|V|`, excluding padding and the unknown id.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.tokens.len() + 1
    }

    /// Rows needed in an embedding table for this vocabulary.
    pub fn table_rows(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.lut.get(token).copied()
    }

    pub fn encode(&self, token: &str) -> usize {
        self.id(token).unwrap_or_else(|| self.unk_id())
    }

    pub fn decode(&self, id: usize) -> Option<&str> {
        id.checked_sub(1)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    pub fn sep_id(&self) -> Option<usize> {
        self.id(SEP_TOKEN)
    }

    /// One `token<TAB>id` line per entry, in id order.
    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(w, "{t}\t{}", i + 1)?;
        }
        Ok(())
    }

    pub fn read_tsv(r: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("vocab line {}: missing tab", n + 1)))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("vocab line {}: bad id {id:?}", n + 1)))?;
            if id != tokens.len() + 1 {
                return Err(Error::Format(format!(
                    "vocab line {}: expected id {}, found {id}",
                    n + 1,
                    tokens.len() + 1
                )));
            }
            tokens.push(tok.to_string());
        }
        Vocabulary::from_tokens(tokens).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Lowercases and splits on whitespace; every other non-alphanumeric
/// character becomes a token of its own.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    /// Exactly `max_len` ids; positions `len..` are [`PAD_ID`].
    pub ids: Vec<usize>,
    pub len: usize,
}

impl TokenSequence {
    fn from_words(words: impl IntoIterator<Item = usize>, max_len: usize) -> Self {
        let mut ids: Vec<usize> = words.into_iter().take(max_len).collect();
        let len = ids.len();
        ids.resize(max_len, PAD_ID);
        TokenSequence { ids, len }
    }

    pub fn pad_mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&id| id == PAD_ID).collect()
    }

    /// The same tokens with trailing padding dropped.
    pub fn trimmed(&self) -> TokenSequence {
        TokenSequence {
            ids: self.ids[..self.len].to_vec(),
            len: self.len,
        }
    }
}

/// Maps the first `max_len` tokens through the vocabulary and zero-pads the rest.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    TokenSequence::from_words(words(text).iter().map(|w| vocab.encode(w)), max_len)
}

/// `a [SEP] b`, truncated to `max_len`.
pub fn tokenize_pair(
    a: &str,
    b: &str,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence> {
    let sep = vocab
        .sep_id()
        .ok_or_else(|| Error::Config("pair input needs a vocabulary built with [SEP]".into()))?;
    let ids = words(a)
        .iter()
        .map(|w| vocab.encode(w))
        .chain(std::iter::once(sep))
        .chain(words(b).iter().map(|w| vocab.encode(w)))
        .collect::<Vec<_>>();
    Ok(TokenSequence::from_words(ids, max_len))
}

/// Sinusoidal encoding: `sin(i / 10000^(d/D′))` on even `d`,
/// `cos(i / 10000^((d−1)/D′))` on odd `d`.
pub fn position_encoding(len: usize, dim: usize) -> Result<Tensor> {
    if dim < 2 {
        return Err(Error::Config(format!(
            "position encoding width must be at least 2, got {dim}"
        )));
    }
    let mut data = Vec::with_capacity(len * dim);
    for i in 0..len {
        for d in 0..dim {
            let even = d - d % 2;
            let angle = i as f64 / 10000f64.powf(even as f64 / dim as f64);
            data.push(if d % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(len, dim, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSequence {
    /// `L × 2D′`.
    pub values: Tensor,
    pub pad_mask: Vec<bool>,
}

/// Gradient-free embedding lookup; see `TapedModel::embed` for the taped one.
pub fn embed(seq: &TokenSequence, table: &Tensor) -> Result<EmbeddedSequence> {
    let dim = table.cols();
    let mut rows = Vec::with_capacity(seq.ids.len() * dim);
    for &id in &seq.ids {
        if id >= table.rows() {
            return Err(Error::Contract(format!(
                "token id {id} out of range for {} embedding rows",
                table.rows()
            )));
        }
        rows.extend_from_slice(table.row(id));
    }
    let tokens = Tensor::matrix(seq.ids.len(), dim, rows)?;
    let pos = position_encoding(seq.ids.len(), dim)?;
    Ok(EmbeddedSequence {
        values: Tensor::concat_cols(&[&tokens, &pos])?,
        pad_mask: seq.pad_mask(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Vocabulary {
        Vocabulary::from_tokens(["a", "b"]).unwrap()
    }

    #[test]
    fn algorithm_trace() {
        assert_eq!(tokenize("a b", &ab(), 4).ids, vec![1, 2, 0, 0]);
        let empty = tokenize("", &ab(), 4);
        assert_eq!(empty.ids, vec![0, 0, 0, 0]);
        assert_eq!(empty.len, 0);
    }

    #[test]
    fn truncates_at_max_len() {
        let s = tokenize("a a a a a", &ab(), 4);
        assert_eq!(s.ids, vec![1, 1, 1, 1]);
        assert_eq!(s.len, 4);
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = ab();
        assert_eq!(tokenize("a zebra", &v, 3).ids, vec![1, 3, 0]);
        assert_eq!(v.table_rows(), 4);
    }

    #[test]
    fn tokenizer_splits_punctuation_and_lowercases() {
        assert_eq!(words("Hello, World!"), vec!["hello", ",", "world", "!"]);
        assert_eq!(words("  "), Vec::<String>::new());
        assert_eq!(words("[SEP]"), vec!["[", "sep", "]"]);
    }

    #[test]
    fn pair_packing() {
        let v = Vocabulary::build(["x y", "y z"], true);
        let sep = v.sep_id().unwrap();
        let s = tokenize_pair("x", "z", &v, 5).unwrap();
        assert_eq!(s.ids, vec![v.encode("x"), sep, v.encode("z"), 0, 0]);
        assert!(tokenize_pair("x", "z", &ab(), 5).is_err());
    }

    #[test]
    fn vocab_tsv_round_trip() {
        let v = Vocabulary::build(["the cat sat", "the dog"], true);
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        let back = Vocabulary::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back, v);
        for id in 1..=v.len() {
            let t = v.decode(id).unwrap();
            assert_eq!(v.encode(t), id);
        }
        assert_eq!(v.decode(0), None);
        assert_eq!(v.encode("the"), 2);
    }

    #[test]
    fn vocab_tsv_rejects_gaps() {
        assert!(Vocabulary::read_tsv("a\t1\nb\t3\n".as_bytes()).is_err());
        assert!(Vocabulary::read_tsv("a 1\n".as_bytes()).is_err());
    }

    #[test]
    fn position_encoding_values() {
        let pe = position_encoding(2, 4).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.get(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.get(1, 1) - 1f64.cos()).abs() < 1e-15);
        assert!((pe.get(1, 0) - 0.84147).abs() < 1e-5);
        assert!((pe.get(1, 1) - 0.54030).abs() < 1e-5);
        assert!((pe.get(1, 2) - (1.0 / 100.0f64).sin()).abs() < 1e-15);
        assert!(position_encoding(3, 1).is_err());
    }

    #[test]
    fn embed_pads_and_concatenates() {
        let mut table = Tensor::zeros(&[4, 3]);
        table.data_mut()[3..6].copy_from_slice(&[1.0, 2.0, 3.0]);
        let seq = tokenize("a", &ab(), 3);
        let e = embed(&seq, &table).unwrap();
        assert_eq!(e.values.shape(), &[3, 6]);
        assert_eq!(e.pad_mask, vec![false, true, true]);
        let pe = position_encoding(3, 3).unwrap();
        assert_eq!(&e.values.row(0)[..3], &[1.0, 2.0, 3.0]);
        assert_eq!(&e.values.row(1)[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&e.values.row(1)[3..], pe.row(1));
    }

    #[test]
    fn shifting_a_token_only_changes_the_positional_half() {
        let table = Tensor::matrix(4, 2, vec![0.0, 0.0, 0.3, -0.2, 0.9, 0.1, 0.0, 0.0]).unwrap();
        let first = TokenSequence {
            ids: vec![1, 2, 0],
            len: 2,
        };
        let second = TokenSequence {
            ids: vec![2, 1, 0],
            len: 2,
        };
        let a = embed(&first, &table).unwrap();
        let b = embed(&second, &table).unwrap();
        // token 1 moved from position 0 to 1: token half equal, position half differs
        assert_eq!(&a.values.row(0)[..2], &b.values.row(1)[..2]);
        assert_ne!(&a.values.row(0)[2..], &b.values.row(1)[2..]);
    }

    #[test]
    fn out_of_range_id_is_a_contract_error() {
        let seq = TokenSequence {
            ids: vec![9],
            len: 1,
        };
        assert!(matches!(
            embed(&seq, &Tensor::zeros(&[4, 2])),
            Err(Error::Contract(_))
        ));
    }
}
