//! Tokenization, chunking and the mean-pooled embedding encoder.
//!
//! Documents and class-label texts go through the same embedding table, so
//! label embeddings live in the same space as chunk encodings.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor, Var};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let index = tokens.iter().cloned().zip(0..).collect();
        Self { tokens, index }
    }

    /// Builds a vocabulary in order of first appearance.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Self::new();
        for text in texts {
            for tok in tokenize(text) {
                vocab.insert(tok);
            }
        }
        vocab
    }

    pub fn insert(&mut self, token: String) -> usize {
        if let Some(&id) = self.index.get(&token) {
            return id;
        }
        let id = self.tokens.len();
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// One token per line; line `i` (0-based) holds id `i + 2`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for tok in &self.tokens[2..] {
            out.push_str(tok);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Self::new();
        for (i, line) in text.lines().enumerate() {
            let before = vocab.len();
            if line.is_empty() || vocab.insert(line.to_string()) != before {
                return Err(Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    message: format!("empty or duplicate token {line:?}"),
                });
            }
        }
        Ok(vocab)
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = String;

    fn try_from(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err("vocabulary must start with <pad>, <unk>".into());
        }
        let index: HashMap<String, usize> = tokens.iter().cloned().zip(0..).collect();
        if index.len() != tokens.len() {
            return Err("duplicate vocabulary entries".into());
        }
        Ok(Self { tokens, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// A window of at most `s` consecutive token ids from one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub token_ids: Vec<usize>,
    pub source_admission: usize,
    pub chunk_index: usize,
}

/// Splits a document into consecutive non-overlapping windows of `s` tokens.
pub fn chunk_document(token_ids: &[usize], s: usize, source_admission: usize) -> Result<Vec<Chunk>> {
    if s == 0 {
        return Err(Error::InvalidArgument("chunk length must be at least 1".into()));
    }
    if token_ids.is_empty() {
        return Err(Error::Data(format!(
            "admission {source_admission} has an empty document"
        )));
    }
    Ok(token_ids
        .chunks(s)
        .enumerate()
        .map(|(chunk_index, ids)| Chunk {
            token_ids: ids.to_vec(),
            source_admission,
            chunk_index,
        })
        .collect())
}

/// Trainable embedding table shared by documents and label texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub embedding: Tensor,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, d_h: usize, rng: &mut R) -> Result<Self> {
        if d_h < 2 {
            return Err(Error::Config(format!("hidden dimension {d_h} must be at least 2")));
        }
        Ok(Self {
            embedding: Tensor::uniform(&[vocab_size, d_h], 1.0, rng),
        })
    }

    pub fn d_h(&self) -> usize {
        self.embedding.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }
}

/// Mean of the non-padding embedding rows of each chunk: `[chunks, d_h]`.
pub fn encode_chunks(g: &mut Graph, table: Var, chunks: &[&[usize]]) -> Result<Var> {
    let rows: Vec<Vec<usize>> = chunks.iter().map(|c| c.to_vec()).collect();
    g.embedding_mean(table, &rows)
}

/// Encodes a single chunk to a `[d_h]` vector.
pub fn encode_chunk(g: &mut Graph, table: Var, chunk: &Chunk) -> Result<Var> {
    let h = encode_chunks(g, table, &[&chunk.token_ids])?;
    let d = g.shape(h)[1];
    g.reshape(h, &[d])
}

/// Encodes label texts with the document encoder: `[labels, d_h]`.
pub fn encode_labels(g: &mut Graph, table: Var, vocab: &Vocab, labels: &[String]) -> Result<Var> {
    let mut rows = Vec::with_capacity(labels.len());
    for label in labels {
        let ids = vocab.encode(label);
        if ids.is_empty() {
            return Err(Error::InvalidArgument(format!("label text {label:?} has no tokens")));
        }
        rows.push(ids);
    }
    g.embedding_mean(table, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Acute Renal Failure"), ["acute", "renal", "failure"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("sepsis, sepsis!"), ["sepsis", "sepsis"]);
    }

    #[test]
    fn chunk_sizes() {
        let ids: Vec<usize> = (2..12).collect();
        let sizes: Vec<usize> = chunk_document(&ids, 4, 0)
            .unwrap()
            .iter()
            .map(|c| c.token_ids.len())
            .collect();
        assert_eq!(sizes, [4, 4, 2]);
        assert_eq!(chunk_document(&ids[..4], 4, 0).unwrap().len(), 1);
        let one = chunk_document(&[5], 128, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].token_ids, [5]);
        assert!(chunk_document(&[], 4, 0).is_err());
        assert!(chunk_document(&ids, 0, 0).is_err());
    }

    fn table() -> Tensor {
        Tensor::from_rows(&[vec![0.0, 0.0], vec![9.0, -9.0], vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap()
    }

    #[test]
    fn encode_chunk_examples() {
        let mut g = Graph::new();
        let t = g.constant(table());
        let one = Chunk {
            token_ids: vec![2],
            source_admission: 0,
            chunk_index: 0,
        };
        let h = encode_chunk(&mut g, t, &one).unwrap();
        assert_eq!(g.value(h).data(), &[1.0, 2.0]);

        let two = Chunk {
            token_ids: vec![2, 3],
            source_admission: 0,
            chunk_index: 0,
        };
        let h = encode_chunk(&mut g, t, &two).unwrap();
        assert_eq!(g.value(h).data(), &[2.0, 4.0]);

        let unk = Chunk {
            token_ids: vec![UNK, UNK],
            source_admission: 0,
            chunk_index: 0,
        };
        let h = encode_chunk(&mut g, t, &unk).unwrap();
        assert_eq!(g.value(h).data(), &[9.0, -9.0]);

        let pad = Chunk {
            token_ids: vec![PAD, PAD],
            source_admission: 0,
            chunk_index: 0,
        };
        assert!(encode_chunk(&mut g, t, &pad).is_err());
    }

    #[test]
    fn encode_label_examples() {
        let mut vocab = Vocab::new();
        vocab.insert("pneumonia".into());
        vocab.insert("sepsis".into());
        let mut g = Graph::new();
        let t = g.constant(table());
        let e = encode_labels(&mut g, t, &vocab, &["pneumonia".into()]).unwrap();
        assert_eq!(g.value(e).data(), &[1.0, 2.0]);

        let e = encode_labels(
            &mut g,
            t,
            &vocab,
            &["sepsis pneumonia".into(), "Pneumonia, sepsis".into()],
        )
        .unwrap();
        assert_eq!(g.value(e).row(0), g.value(e).row(1));

        assert!(encode_labels(&mut g, t, &vocab, &["  ,".into()]).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let vocab = Vocab::from_texts(["acute renal failure", "renal sepsis"]);
        assert_eq!(vocab.id("acute"), 2);
        assert_eq!(vocab.id("missing"), UNK);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        vocab.write(&path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "acute\nrenal\nfailure\nsepsis\n"
        );
        assert_eq!(Vocab::read(&path).unwrap(), vocab);

        std::fs::write(&path, "a\nb\na\n").unwrap();
        assert!(matches!(Vocab::read(&path), Err(Error::Parse { line: 3, .. })));
    }

    proptest! {
        #[test]
        fn chunks_reassemble_the_document(ids in prop::collection::vec(1usize..50, 1..200), s in 1usize..40) {
            let chunks = chunk_document(&ids, s, 3).unwrap();
            let joined: Vec<usize> = chunks.iter().flat_map(|c| c.token_ids.clone()).collect();
            prop_assert_eq!(joined, ids);
            for (i, c) in chunks.iter().enumerate() {
                prop_assert_eq!(c.chunk_index, i);
                prop_assert!(!c.token_ids.is_empty() && c.token_ids.len() <= s);
            }
        }

        #[test]
        fn encoding_is_permutation_invariant(ids in prop::collection::vec(1usize..20, 1..30), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = EncoderParams::init(20, 4, &mut rng).unwrap();
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut rng);
            let mut g = Graph::new();
            let t = g.constant(params.embedding.clone());
            let a = encode_chunks(&mut g, t, &[&ids]).unwrap();
            let b = encode_chunks(&mut g, t, &[&shuffled]).unwrap();
            for (x, y) in g.value(a).data().iter().zip(g.value(b).data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
