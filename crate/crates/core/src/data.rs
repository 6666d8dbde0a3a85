//! Word vectors and labelled token-sequence datasets.
//!
//! Embedding files hold one entry per line, `token v1 … vd`, separated by
//! whitespace (GloVe layout). A leading `count dim` line as written by
//! word2vec is detected and skipped. Vectors are scaled to unit norm on load;
//! all-zero vectors stay zero.
//!
//! Dataset files hold one example per line, `label<TAB>tok tok …`, already
//! tokenized. Phrase-expanded training sets use the same layout.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Fixed word vectors with a token index. Unknown tokens map to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    words: Vec<String>,
    vectors: Array2<f64>,
}

impl EmbeddingTable {
    /// Builds a table from `(token, vector)` pairs, normalizing every row.
    /// A repeated token keeps its last vector.
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut dim = None;
        let mut index = HashMap::new();
        let mut words = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, (word, vec)) in entries.into_iter().enumerate() {
            let d = *dim.get_or_insert(vec.len());
            if vec.len() != d || d == 0 {
                return Err(Error::Format {
                    line: i + 1,
                    message: format!(
                        "vector for {word:?} has {} components, expected {d}",
                        vec.len()
                    ),
                });
            }
            insert_row(&mut index, &mut words, &mut rows, word, vec, i + 1);
        }
        let dim = dim.ok_or_else(|| Error::Format {
            line: 0,
            message: "no embeddings".into(),
        })?;
        Ok(Self::assemble(dim, index, words, rows))
    }

    fn assemble(
        dim: usize,
        index: HashMap<String, usize>,
        words: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Self {
        let mut vectors = Array2::zeros((rows.len(), dim));
        for (mut dst, src) in vectors.rows_mut().into_iter().zip(rows) {
            let norm = src.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = s / norm);
            }
        }
        EmbeddingTable {
            dim,
            index,
            words,
            vectors,
        }
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate().peekable();
        let mut dim: Option<usize> = None;
        let mut index = HashMap::new();
        let mut words = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut first = true;

        while let Some((i, line)) = lines.next() {
            let line = line?;
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else {
                continue;
            };
            let values: Vec<&str> = fields.collect();

            if first {
                first = false;
                if let Some(declared) = header_dim(word, &values) {
                    // only a header if the next entry agrees with it
                    let next_len = match lines.peek() {
                        Some((_, Ok(next))) => Some(next.split_whitespace().count()),
                        _ => None,
                    };
                    if next_len.is_none_or(|n| n == declared + 1) {
                        continue;
                    }
                }
            }

            let vec = values
                .iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| Error::Format {
                        line: lineno,
                        message: format!("cannot parse {v:?} as a number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let d = *dim.get_or_insert(vec.len());
            if vec.is_empty() || vec.len() != d {
                return Err(Error::Format {
                    line: lineno,
                    message: format!("expected {d} components, found {}", vec.len()),
                });
            }
            if let Some(bad) = vec.iter().find(|v| !v.is_finite()) {
                return Err(Error::Format {
                    line: lineno,
                    message: format!("non-finite component {bad}"),
                });
            }
            insert_row(
                &mut index,
                &mut words,
                &mut rows,
                word.to_string(),
                vec,
                lineno,
            );
        }

        let dim = dim.ok_or_else(|| Error::Format {
            line: 0,
            message: "embedding file contains no vectors".into(),
        })?;
        Ok(Self::assemble(dim, index, words, rows))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    /// Writes the normalized table, 17 significant digits per component.
    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        for (word, row) in self.words.iter().zip(self.vectors.rows()) {
            write!(writer, "{word}")?;
            for v in row {
                write!(writer, " {v:.16e}")?;
            }
            writeln!(writer)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
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

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn lookup(&self, token: &str) -> Option<ArrayView1<'_, f64>> {
        self.index.get(token).map(|&i| self.vectors.row(i))
    }

    /// The vector for `token`, or zeros when it is not in the vocabulary.
    pub fn vector(&self, token: &str) -> Array1<f64> {
        self.lookup(token)
            .map(|v| v.to_owned())
            .unwrap_or_else(|| Array1::zeros(self.dim))
    }

    /// Stacks the vectors of `tokens` into an `L × d` matrix.
    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Array2<f64> {
        let mut out = Array2::zeros((tokens.len(), self.dim));
        for (mut row, tok) in out.rows_mut().into_iter().zip(tokens) {
            if let Some(v) = self.lookup(tok.as_ref()) {
                row.assign(&v);
            }
        }
        out
    }
}

fn insert_row(
    index: &mut HashMap<String, usize>,
    words: &mut Vec<String>,
    rows: &mut Vec<Vec<f64>>,
    word: String,
    vec: Vec<f64>,
    lineno: usize,
) {
    if let Some(&existing) = index.get(&word) {
        warn!("line {lineno}: duplicate token {word:?}, keeping the later vector");
        rows[existing] = vec;
    } else {
        index.insert(word.clone(), words.len());
        words.push(word);
        rows.push(vec);
    }
}

/// `count dim` header as written by word2vec.
fn header_dim(first: &str, rest: &[&str]) -> Option<usize> {
    if rest.len() != 1 {
        return None;
    }
    first.parse::<usize>().ok()?;
    rest[0].parse::<usize>().ok()
}

/// One labelled token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub label: usize,
}

impl Example {
    pub fn embed(&self, table: &EmbeddingTable) -> Array2<f64> {
        table.embed(&self.tokens)
    }
}

/// Ordered examples plus the label vocabulary they index into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub labels: Vec<String>,
}

/// An example already mapped to its word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub inputs: Array2<f64>,
    pub label: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Reads `label<TAB>tokens` lines. Labels must appear in `labels`.
    pub fn read<R: BufRead>(reader: R, labels: &[String]) -> Result<Self> {
        let lookup: HashMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let mut examples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                warn!("line {lineno}: skipping blank line");
                continue;
            }
            let (label, text) = line.split_once('\t').ok_or_else(|| Error::Data {
                line: lineno,
                message: "expected <label>\\t<tokens>".into(),
            })?;
            let &label = lookup.get(label).ok_or_else(|| Error::Data {
                line: lineno,
                message: format!("unknown label {label:?}"),
            })?;
            let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() {
                return Err(Error::Data {
                    line: lineno,
                    message: "no tokens after the label".into(),
                });
            }
            examples.push(Example { tokens, label });
        }
        Ok(Dataset {
            examples,
            labels: labels.to_vec(),
        })
    }

    pub fn load(path: impl AsRef<Path>, labels: &[String]) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?), labels)
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        for ex in &self.examples {
            let label = self
                .labels
                .get(ex.label)
                .ok_or_else(|| Error::invalid(format!("label index {} out of range", ex.label)))?;
            writeln!(writer, "{label}\t{}", ex.tokens.join(" "))?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn encode(&self, table: &EmbeddingTable) -> Vec<EncodedExample> {
        self.examples
            .iter()
            .map(|ex| EncodedExample {
                inputs: ex.embed(table),
                label: ex.label,
            })
            .collect()
    }
}

/// Distinct labels of a dataset file, sorted.
pub fn scan_labels<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut labels = std::collections::BTreeSet::new();
    for line in reader.lines() {
        let line = line?;
        if let Some((label, _)) = line.split_once('\t') {
            labels.insert(label.to_string());
        }
    }
    Ok(labels.into_iter().collect())
}
