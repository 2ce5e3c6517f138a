use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::PAD;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frozen word vectors. Lookups of unknown words and of [`PAD`] give zeros.
///
/// The table lives outside every `ParamStore`, so no optimizer can reach it.
#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    words: Vec<String>,
    data: Vec<f64>,
}

impl WordEmbeddingTable {
    pub fn new(dim: usize) -> Self {
        WordEmbeddingTable {
            dim,
            index: HashMap::new(),
            words: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Uniform vectors in `[-0.5, 0.5)` for each distinct word, in first-seen order.
    pub fn synthesize<'a>(words: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = WordEmbeddingTable::new(dim);
        for w in words {
            if w == PAD || table.index.contains_key(w) {
                continue;
            }
            let v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
            table.insert(w, v).expect("dimension matches");
        }
        table
    }

    /// Adds or replaces a row.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                op: "word_vector",
                lhs: vec![self.dim],
                rhs: vec![vector.len()],
            });
        }
        match self.index.get(word) {
            Some(&row) => self.data[row * self.dim..(row + 1) * self.dim].copy_from_slice(&vector),
            None => {
                self.index.insert(word.to_string(), self.words.len());
                self.words.push(word.to_string());
                self.data.extend(vector);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&r| &self.data[r * self.dim..(r + 1) * self.dim])
    }

    pub fn embed_word(&self, token: &str) -> Tensor {
        match self.get(token) {
            Some(v) => Tensor::vector(v.to_vec()).expect("dim > 0"),
            None => Tensor::zeros([self.dim]),
        }
    }

    /// `tokens.len() × dim` matrix of lookups.
    pub fn embed_sequence(&self, tokens: &[String]) -> Result<Tensor> {
        let mut data = vec![0.0; tokens.len() * self.dim];
        for (t, tok) in tokens.iter().enumerate() {
            if let Some(v) = self.get(tok) {
                data[t * self.dim..(t + 1) * self.dim].copy_from_slice(v);
            }
        }
        Tensor::matrix(tokens.len(), self.dim, data)
    }

    /// Parses `word v1 … vd` lines, optionally preceded by a `count dim` header.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut table: Option<WordEmbeddingTable> = None;
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                let dim: usize = fields[1].parse().unwrap();
                if dim == 0 {
                    return Err(err("header dimension must be positive".into()));
                }
                table = Some(WordEmbeddingTable::new(dim));
                continue;
            }
            if fields.len() < 2 {
                return Err(err("expected `word v1 … vd`".into()));
            }
            let values = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| err(format!("bad value: {e}")))?;
            let table = table.get_or_insert_with(|| WordEmbeddingTable::new(values.len()));
            if values.len() != table.dim {
                return Err(err(format!(
                    "expected {} values, found {}",
                    table.dim,
                    values.len()
                )));
            }
            table.insert(fields[0], values)?;
        }
        table.ok_or_else(|| Error::Input(format!("{origin}: no word vectors found")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        WordEmbeddingTable::parse(&text, &path.display().to_string())
    }

    /// Text form with a `count dim` header; values use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (r, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for v in &self.data[r * self.dim..(r + 1) * self.dim] {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 over dimension, words and raw value bits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (r, w) in self.words.iter().enumerate() {
            h.update((w.len() as u64).to_le_bytes());
            h.update(w.as_bytes());
            for v in &self.data[r * self.dim..(r + 1) * self.dim] {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
