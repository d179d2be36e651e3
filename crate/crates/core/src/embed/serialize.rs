use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{EmbeddingConfig, EmbeddingModel};

const MAGIC: &[u8; 6] = b"TXEMB\0";
const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32s(&mut self, n: usize, out: &mut Vec<f32>) -> Result<()> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| corrupt("length overflow"))?)?;
        out.extend(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))));
        Ok(())
    }
}

fn corrupt(reason: &str) -> Error {
    Error::Integrity {
        name: "embedding".into(),
        reason: reason.into(),
    }
}

impl EmbeddingModel {
    /// Binary layout: magic, version, config, vocabulary (word, count,
    /// vector), then n-gram buckets with vectors. All numbers little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + 4 * (self.word_vectors.len() + self.ngram_vectors.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [c.dim, c.min_n, c.max_n, c.window, c.negatives, c.epochs, c.min_count, c.workers] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.learning_rate.to_le_bytes());
        out.extend_from_slice(&c.bucket_count.to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.extend_from_slice(&(self.words.len() as u32).to_le_bytes());
        for (i, w) in self.words.iter().enumerate() {
            out.extend_from_slice(&(w.len() as u32).to_le_bytes());
            out.extend_from_slice(w.as_bytes());
            out.extend_from_slice(&self.counts[i].to_le_bytes());
            for x in self.word_row(i) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.ngram_rows.len() as u32).to_le_bytes());
        for (&bucket, &row) in &self.ngram_rows {
            out.extend_from_slice(&bucket.to_le_bytes());
            for x in &self.ngram_vectors[row * c.dim..(row + 1) * c.dim] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let mut f = [0usize; 8];
        for v in f.iter_mut() {
            *v = r.u32()? as usize;
        }
        let config = EmbeddingConfig {
            dim: f[0],
            min_n: f[1],
            max_n: f[2],
            window: f[3],
            negatives: f[4],
            epochs: f[5],
            min_count: f[6],
            workers: f[7],
            learning_rate: r.f64()?,
            bucket_count: r.u32()?,
            seed: r.u64()?,
        };
        config.validate().map_err(|e| corrupt(&e.to_string()))?;
        let dim = config.dim;
        let n_words = r.u32()? as usize;
        let (mut words, mut counts, mut word_vectors) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n_words {
            let len = r.u32()? as usize;
            let w = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("word is not UTF-8"))?;
            words.push(w.to_string());
            counts.push(r.u64()?);
            r.f32s(dim, &mut word_vectors)?;
        }
        let n_ngrams = r.u32()? as usize;
        let mut ngram_rows = BTreeMap::new();
        let mut ngram_vectors = Vec::new();
        for row in 0..n_ngrams {
            ngram_rows.insert(r.u32()?, row);
            r.f32s(dim, &mut ngram_vectors)?;
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        if word_vectors.iter().chain(&ngram_vectors).any(|x| !x.is_finite()) {
            return Err(corrupt("non-finite entry"));
        }
        Ok(EmbeddingModel::from_parts(config, words, counts, word_vectors, ngram_rows, ngram_vectors))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// One vocabulary word per line followed by its space-separated vector.
    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.words.len(), self.config.dim)?;
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for x in self.word_row(i) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::train_embedding;
    use crate::txprep::NormalizedText;

    fn model() -> EmbeddingModel {
        let corpus: Vec<NormalizedText> = (0..30)
            .map(|i| NormalizedText::from_tokens(vec!["gas station".into(), if i % 2 == 0 { "shell".into() } else { "exxon".into() }]))
            .collect();
        let c = EmbeddingConfig {
            dim: 8,
            min_count: 1,
            epochs: 1,
            bucket_count: 5003,
            ..Default::default()
        };
        train_embedding(&corpus, &c).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let m = model();
        let back = EmbeddingModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), m.to_bytes());
    }

    #[test]
    fn corrupt_input_rejected() {
        let bytes = model().to_bytes();
        assert!(EmbeddingModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(EmbeddingModel::from_bytes(&bad).unwrap_err().exit_code(), 4);
        let mut long = bytes;
        long.push(0);
        assert!(EmbeddingModel::from_bytes(&long).is_err());
    }

    #[test]
    fn text_export_has_one_line_per_word() {
        let m = model();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + m.vocabulary().len());
        assert_eq!(lines[1].split(' ').count(), 1 + m.dim());
    }
}
