//! Category word embeddings: the semantic space fed into the projection
//! layer. Rows come either from an embeddings text file produced offline or
//! from a deterministic hash-seeded generator.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::HashMap;
use std::path::Path;

pub const BACKGROUND: &str = "background";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryVocabulary {
    names: Vec<String>,
}

impl CategoryVocabulary {
    /// Builds a vocabulary from foreground class names; index 0 is always
    /// "background".
    pub fn new(foreground: &[&str]) -> Result<Self> {
        let mut names = vec![BACKGROUND.to_string()];
        names.extend(foreground.iter().map(|s| s.to_string()));
        let vocab = CategoryVocabulary { names };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let vocab = CategoryVocabulary { names };
        vocab.validate()?;
        Ok(vocab)
    }

    fn validate(&self) -> Result<()> {
        if self.names.len() < 2 {
            return Err(Error::Config(
                "vocabulary needs background plus at least one class".into(),
            ));
        }
        if self.names[0] != BACKGROUND {
            return Err(Error::Config(format!(
                "vocabulary index 0 must be '{}', got '{}'",
                BACKGROUND, self.names[0]
            )));
        }
        let mut seen = HashMap::new();
        for (i, n) in self.names.iter().enumerate() {
            if n.is_empty() || n.contains(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "category name {:?} must be non-empty without whitespace",
                    n
                )));
            }
            if let Some(prev) = seen.insert(n.clone(), i) {
                return Err(Error::Config(format!(
                    "duplicate category '{}' at indices {} and {}",
                    n, prev, i
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Loaded,
    Hashed,
}

#[derive(Debug, Clone)]
pub struct EmbeddingMatrix<F: Scalar> {
    pub rows: Tensor<F>,
    pub dim: usize,
    pub source: EmbeddingSource,
}

impl<F: Scalar> EmbeddingMatrix<F> {
    pub fn row(&self, i: usize) -> &[F] {
        &self.rows.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Parses the embeddings text format: line 1 is "N d_w", then one line per
/// category ("name v1 .. v_dw"). Rows are reordered to vocabulary order.
pub fn load_embeddings<F: Scalar>(
    path: &Path,
    vocab: &CategoryVocabulary,
) -> Result<EmbeddingMatrix<F>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let pname = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: pname.clone(),
        line: 1,
        message: "empty file".into(),
    })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let parse_header = |s: &str| {
        s.parse::<usize>().map_err(|_| Error::Parse {
            path: pname.clone(),
            line: 1,
            message: format!("bad header integer {:?}", s),
        })
    };
    if parts.len() != 2 {
        return Err(Error::Parse {
            path: pname,
            line: 1,
            message: format!("header must be 'N d_w', got {:?}", header),
        });
    }
    let n = parse_header(parts[0])?;
    let dim = parse_header(parts[1])?;

    let mut by_name: HashMap<String, Vec<F>> = HashMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split(' ');
        let name = tokens.next().unwrap_or("").to_string();
        let mut row = Vec::with_capacity(dim);
        for tok in tokens {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                path: pname.clone(),
                line: idx + 1,
                message: format!("malformed float {:?}", tok),
            })?;
            row.push(F::real(v));
        }
        if row.len() != dim {
            return Err(Error::Parse {
                path: pname.clone(),
                line: idx + 1,
                message: format!("expected {} values, got {}", dim, row.len()),
            });
        }
        by_name.insert(name, row);
    }
    if by_name.len() != n {
        return Err(Error::Parse {
            path: pname,
            line: 1,
            message: format!("header promised {} rows, found {}", n, by_name.len()),
        });
    }

    let mut data = Vec::with_capacity(vocab.len() * dim);
    for name in vocab.names() {
        let row = by_name.get(name).ok_or_else(|| {
            Error::Alignment(format!("embeddings file is missing category '{}'", name))
        })?;
        data.extend_from_slice(row);
    }
    Ok(EmbeddingMatrix {
        rows: Tensor::new(vec![vocab.len(), dim], data)?,
        dim,
        source: EmbeddingSource::Loaded,
    })
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic stand-in embeddings: each row is the unit-normalized output
/// of a splitmix64 stream seeded by FNV-1a(name) XOR the global seed.
/// Platform-independent and a pure function of (names, d_w, seed).
pub fn hash_embed<F: Scalar>(
    vocab: &CategoryVocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix<F>> {
    if dim < 2 {
        return Err(Error::Config(format!("embedding dim must be >= 2, got {}", dim)));
    }
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for name in vocab.names() {
        let mut state = fnv1a64(name.as_bytes()) ^ seed;
        let mut row: Vec<f64> = (0..dim)
            .map(|_| {
                // 53 uniform bits -> [-1, 1)
                let u = (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64;
                2.0 * u - 1.0
            })
            .collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        } else {
            row[0] = 1.0;
        }
        data.extend(row.into_iter().map(F::real));
    }
    Ok(EmbeddingMatrix {
        rows: Tensor::new(vec![vocab.len(), dim], data)?,
        dim,
        source: EmbeddingSource::Hashed,
    })
}
