//! Token vocabulary and embedding table.
//!
//! Row 0 is a frozen all-zero PAD row; row 1 is the UNK row for
//! out-of-vocabulary tokens. Remaining rows follow the sorted vocabulary
//! order so a rebuilt table is independent of corpus iteration order.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;

use super::normal_init;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Build from an unordered token stream; ids are assigned in sorted
    /// token order after the two reserved rows.
    pub fn build<I, S>(tokens: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut unique: Vec<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .collect();
        unique.sort();
        unique.dedup();
        Vocab::from_sorted(unique)
    }

    pub fn from_sorted(tokens: Vec<String>) -> Vocab {
        let mut id_to_token = Vec::with_capacity(tokens.len() + 2);
        id_to_token.push("<pad>".to_string());
        id_to_token.push("<unk>".to_string());
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        *self.token_to_id.get(token).unwrap_or(&UNK_ID)
    }

    /// Tokens after the reserved rows, in id order.
    pub fn content_tokens(&self) -> &[String] {
        &self.id_to_token[2..]
    }

    /// Map a tokenized utterance to ids; an empty utterance becomes a
    /// single PAD token so downstream encoders always see one step.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        if tokens.is_empty() {
            return vec![PAD_ID];
        }
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocab,
    /// `(vocab, dim)`; row PAD_ID stays zero.
    pub weights: Array2<f64>,
}

impl EmbeddingTable {
    /// Random-normal initialization (mean 0, std 0.1); the PAD row is zero.
    pub fn new<R: Rng>(rng: &mut R, vocab: Vocab, dim: usize) -> EmbeddingTable {
        let mut weights = normal_init(rng, vocab.len(), dim, 0.1);
        weights.row_mut(PAD_ID).fill(0.0);
        EmbeddingTable { vocab, weights }
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Overwrite rows for tokens found in a whitespace-separated
    /// `token v1 .. vD` text file. Unknown tokens in the file are ignored;
    /// returns how many rows were loaded.
    pub fn load_pretrained<P: AsRef<Path>>(&mut self, path: P) -> std::io::Result<usize> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let dim = self.dim();
        let mut loaded = 0;
        for line in reader.lines() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let id = match self.vocab.token_to_id.get(token) {
                Some(&id) if id != PAD_ID => id,
                _ => continue,
            };
            let values: Vec<f64> = parts.filter_map(|v| v.parse().ok()).collect();
            if values.len() != dim {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!(
                        "embedding row for \"{token}\" has {} values, expected {dim}",
                        values.len()
                    ),
                ));
            }
            for (dst, src) in self.weights.row_mut(id).iter_mut().zip(values) {
                *dst = src;
            }
            loaded += 1;
        }
        Ok(loaded)
    }

    /// Look up each id; row `i` of the result is the embedding of
    /// `ids[i]`.
    pub fn embed(&self, ids: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((ids.len(), self.dim()));
        for (mut row, &id) in out.rows_mut().into_iter().zip(ids) {
            row.assign(&self.weights.row(id));
        }
        out
    }

    /// Accumulate `d loss / d weights` for a lookup. The PAD row never
    /// receives gradient.
    pub fn backward(&self, ids: &[usize], upstream: &Array2<f64>, grads: &mut Array2<f64>) {
        debug_assert_eq!(upstream.nrows(), ids.len());
        for (row, &id) in upstream.rows().into_iter().zip(ids) {
            if id == PAD_ID {
                continue;
            }
            grads.row_mut(id).scaled_add(1.0, &row);
        }
    }

    pub fn zeros_grad(&self) -> Array2<f64> {
        Array2::zeros(self.weights.dim())
    }

    pub fn row(&self, id: usize) -> Array1<f64> {
        self.weights.row(id).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> EmbeddingTable {
        let vocab = Vocab::build(["beta", "alpha", "beta", "gamma"]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        EmbeddingTable::new(&mut rng, vocab, 4)
    }

    #[test]
    fn vocab_is_sorted_and_deduplicated() {
        let t = table();
        assert_eq!(t.vocab.content_tokens(), ["alpha", "beta", "gamma"]);
        assert_eq!(t.vocab.len(), 5);
    }

    #[test]
    fn pad_row_is_zero_and_frozen() {
        let t = table();
        assert!(t.weights.row(PAD_ID).iter().all(|v| *v == 0.0));
        let out = t.embed(&[PAD_ID]);
        assert!(out.iter().all(|v| *v == 0.0));

        let mut grads = t.zeros_grad();
        let upstream = Array2::from_elem((1, 4), 3.0);
        t.backward(&[PAD_ID], &upstream, &mut grads);
        assert!(grads.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unknown_token_maps_to_unk() {
        let t = table();
        let ids = t.vocab.encode(&["zeta".to_string(), "alpha".to_string()]);
        assert_eq!(ids[0], UNK_ID);
        assert_eq!(ids[1], t.vocab.id("alpha"));
        let out = t.embed(&ids);
        assert_eq!(out.row(0), t.weights.row(UNK_ID));
    }

    #[test]
    fn empty_utterance_becomes_single_pad() {
        let t = table();
        assert_eq!(t.vocab.encode(&[]), vec![PAD_ID]);
    }

    #[test]
    fn gradient_accumulates_upstream_rows_per_id() {
        let t = table();
        let a = t.vocab.id("alpha");
        let ids = vec![a, a, t.vocab.id("beta")];
        let upstream = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        let mut grads = t.zeros_grad();
        t.backward(&ids, &upstream, &mut grads);
        // alpha receives the sum of rows 0 and 1.
        for j in 0..4 {
            assert_eq!(grads[(a, j)], upstream[(0, j)] + upstream[(1, j)]);
        }
        let b = t.vocab.id("beta");
        for j in 0..4 {
            assert_eq!(grads[(b, j)], upstream[(2, j)]);
        }
    }
}
