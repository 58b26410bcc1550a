//! Word-embedding table: text-format parsing, lookup, bag-of-words means
//! and nearest-neighbor decoding back to tokens.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{dot, norm};

/// Reserved end-of-sequence token appended to the vocabulary at load time.
pub const EOS_TOKEN: &str = "<eos>";

/// Seed for the deterministic pseudo-random unit-norm EOS embedding.
const EOS_SEED: u64 = 0xE05;

/// Immutable vocabulary of tokens with one embedding row per token.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    matrix: Vec<f64>, // V x dim row-major
    index: HashMap<String, usize>,
}

/// Mean embedding of a bag of tokens; `known` counts in-vocabulary tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct BagEmbedding {
    pub vector: Vec<f64>,
    pub known: usize,
}

impl BagEmbedding {
    pub fn no_known_words(&self) -> bool {
        self.known == 0
    }
}

/// Result of a nearest-neighbor decode.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestWord {
    pub token: String,
    pub row: usize,
    pub similarity: f64,
    /// Set when the query was the zero vector (cosine undefined).
    pub degenerate: bool,
}

impl EmbeddingTable {
    pub fn new(words: Vec<String>, dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dim("embedding dimension must be >= 1".into()));
        }
        if matrix.len() != words.len() * dim {
            return Err(Error::Dim(format!(
                "matrix has {} values, expected {} x {}",
                matrix.len(),
                words.len(),
                dim
            )));
        }
        if !matrix.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric("non-finite embedding value".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate token {w:?}")));
            }
        }
        Ok(EmbeddingTable {
            dim,
            words,
            matrix,
            index,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, row: usize) -> &str {
        &self.words[row]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.row(i))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// SHA-256 over the newline-joined vocabulary, hex encoded. Used to pair
    /// checkpoints with the table they were trained against.
    pub fn vocab_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.words {
            hasher.update(w.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Arithmetic mean of the embeddings of the in-vocabulary tokens.
    /// Out-of-vocabulary tokens are skipped; if none are known the result is
    /// the zero vector with `known == 0`.
    pub fn bag_embedding<S: AsRef<str>>(&self, tokens: &[S]) -> BagEmbedding {
        let mut vector = vec![0.0; self.dim];
        let mut known = 0usize;
        for t in tokens {
            if let Some(row) = self.lookup(t.as_ref()) {
                for (v, r) in vector.iter_mut().zip(row) {
                    *v += r;
                }
                known += 1;
            }
        }
        if known > 0 {
            let k = known as f64;
            vector.iter_mut().for_each(|v| *v /= k);
        }
        BagEmbedding { vector, known }
    }

    /// Token maximizing cosine similarity with `query`. Ties break to the
    /// lowest row index; a zero query returns row 0 flagged degenerate.
    pub fn nearest_word(&self, query: &[f64]) -> Result<NearestWord> {
        if self.words.is_empty() {
            return Err(Error::Data("nearest_word on empty table".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Dim(format!(
                "query has dim {}, table has {}",
                query.len(),
                self.dim
            )));
        }
        let qn = norm(query);
        if qn == 0.0 {
            return Ok(NearestWord {
                token: self.words[0].clone(),
                row: 0,
                similarity: 0.0,
                degenerate: true,
            });
        }
        let (row, similarity) = self.nearest_row(query, qn);
        Ok(NearestWord {
            token: self.words[row].clone(),
            row,
            similarity,
            degenerate: false,
        })
    }

    #[cfg(feature = "parallel")]
    fn nearest_row(&self, query: &[f64], qn: f64) -> (usize, f64) {
        use rayon::prelude::*;
        (0..self.vocab_size())
            .into_par_iter()
            .map(|i| (i, self.cosine_against(i, query, qn)))
            .reduce_with(|a, b| {
                if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            })
            .expect("non-empty table")
    }

    #[cfg(not(feature = "parallel"))]
    fn nearest_row(&self, query: &[f64], qn: f64) -> (usize, f64) {
        self.nearest_row_seq(query, qn)
    }

    /// Sequential scan, kept available for benches and the brute-force oracle.
    pub fn nearest_row_seq(&self, query: &[f64], qn: f64) -> (usize, f64) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for i in 0..self.vocab_size() {
            let sim = self.cosine_against(i, query, qn);
            if sim > best.1 {
                best = (i, sim);
            }
        }
        best
    }

    fn cosine_against(&self, row: usize, query: &[f64], qn: f64) -> f64 {
        const EPS: f64 = 1e-12;
        let r = self.row(row);
        dot(r, query) / ((norm(r) + EPS) * (qn + EPS))
    }

    /// Returns a table that contains the reserved EOS token, adding a
    /// deterministic unit-norm embedding for it when absent.
    pub fn with_eos(self) -> Result<Self> {
        if self.contains(EOS_TOKEN) {
            return Ok(self);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(EOS_SEED);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= n);
        }
        let mut words = self.words;
        let mut matrix = self.matrix;
        words.push(EOS_TOKEN.to_string());
        matrix.extend_from_slice(&v);
        EmbeddingTable::new(words, self.dim, matrix)
    }

    /// Writes the text format: `V D` header, then one `token v1 .. vD` line
    /// per row, values at 17 significant digits, newline terminated.
    pub fn serialize<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.vocab_size(), self.dim)?;
        for (i, w) in self.words.iter().enumerate() {
            write!(out, "{w}")?;
            for v in self.row(i) {
                write!(out, " {v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Parses the embedding text format. Errors report 1-based line numbers.
pub fn parse_embedding_text<R: Read>(source: R) -> Result<EmbeddingTable> {
    let reader = BufReader::new(source);
    let mut lines = reader.lines();

    let header = match lines.next() {
        Some(l) => l?,
        None => return Err(Error::parse(1, "empty file, expected header \"V D\"")),
    };
    let mut parts = header.split(' ');
    let v: i64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(1, format!("malformed header {header:?}")))?;
    let d: i64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(1, format!("malformed header {header:?}")))?;
    if parts.next().is_some() {
        return Err(Error::parse(
            1,
            format!("malformed header {header:?}: extra fields"),
        ));
    }
    if v <= 0 || d <= 0 {
        return Err(Error::parse(
            1,
            format!("header dimensions must be positive, got {v} {d}"),
        ));
    }
    let (v, d) = (v as usize, d as usize);

    let mut words = Vec::with_capacity(v);
    let mut matrix = Vec::with_capacity(v * d);
    let mut seen: HashMap<String, usize> = HashMap::with_capacity(v);

    for row in 0..v {
        let line_no = row + 2;
        let line = match lines.next() {
            Some(l) => l?,
            None => {
                return Err(Error::parse(
                    line_no,
                    format!("expected {v} rows, file ended"),
                ))
            }
        };
        let mut fields = line.split(' ');
        let token = fields
            .next()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| Error::parse(line_no, "missing token"))?;
        if token.chars().any(char::is_whitespace) {
            return Err(Error::parse(
                line_no,
                format!("token {token:?} contains whitespace"),
            ));
        }
        if let Some(prev) = seen.insert(token.to_string(), line_no) {
            return Err(Error::parse(
                line_no,
                format!("duplicate token {token:?} (first seen at line {prev})"),
            ));
        }
        let mut count = 0usize;
        for f in fields {
            let x: f64 = f
                .parse()
                .map_err(|_| Error::parse(line_no, format!("unparseable value {f:?}")))?;
            if !x.is_finite() {
                return Err(Error::parse(line_no, format!("non-finite value {f:?}")));
            }
            matrix.push(x);
            count += 1;
        }
        if count != d {
            return Err(Error::parse(
                line_no,
                format!("wrong field count: expected {d} values, found {count}"),
            ));
        }
        words.push(token.to_string());
    }

    for extra in lines {
        let line = extra?;
        if !line.is_empty() {
            return Err(Error::parse(
                v + 2,
                format!("unexpected content after {v} rows"),
            ));
        }
    }

    EmbeddingTable::new(words, d, matrix)
}
