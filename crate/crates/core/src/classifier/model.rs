use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use txclass_nn::{checkpoint, Activation, Dropout, Graph, Gru, GruConfig, Mlp, ParamStore, Tensor, Var};

use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};

use super::features::GroupFeatures;
use super::ClassifierConfig;

const MAGIC: &[u8; 4] = b"TXCL";
const VERSION: u32 = 1;

/// Trained network weights plus everything needed to rebuild the graph.
#[derive(Debug, Clone)]
pub struct Classifier {
    config: ClassifierConfig,
    text_dim: usize,
    /// Token rows of the fine-tuned embedding table (empty when frozen).
    token_rows: BTreeMap<String, usize>,
    store: ParamStore,
    ts_gru: Gru,
    text_gru: Gru,
    mlp: Mlp,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ClassifierConfig,
    text_dim: usize,
    token_rows: BTreeMap<String, usize>,
}

fn activations(config: &ClassifierConfig) -> Vec<Activation> {
    let mut a = vec![Activation::Relu; config.mlp_hidden.len()];
    a.push(Activation::Sigmoid);
    a
}

fn gru_configs(config: &ClassifierConfig, text_dim: usize) -> (GruConfig, GruConfig) {
    (
        GruConfig {
            input_size: 2,
            hidden_size: config.ts_hidden,
            num_layers: config.gru_layers,
            bidirectional: true,
        },
        GruConfig {
            input_size: text_dim,
            hidden_size: config.text_hidden,
            num_layers: config.gru_layers,
            bidirectional: true,
        },
    )
}

impl Classifier {
    /// Fresh weights from `config.seed`. With `embedding_finetune`, the
    /// vocabulary vectors of `finetune_vocab` become trainable rows.
    pub fn new(config: &ClassifierConfig, text_dim: usize, finetune: Option<(&EmbeddingModel, &[String])>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (ts_cfg, text_cfg) = gru_configs(config, text_dim);
        let ts_gru = Gru::new(&mut store, "ts", ts_cfg, &mut rng);
        let text_gru = Gru::new(&mut store, "text", text_cfg, &mut rng);
        let mut sizes = vec![ts_cfg.output_size() + text_cfg.output_size()];
        sizes.extend(&config.mlp_hidden);
        sizes.push(1);
        let mlp = Mlp::new(&mut store, "mlp", &sizes, &activations(config), &mut rng)?;
        let mut token_rows = BTreeMap::new();
        if config.embedding_finetune {
            let (model, vocab) = finetune.ok_or_else(|| Error::Config("embedding_finetune needs the embedding model".into()))?;
            let mut data = Vec::new();
            for w in vocab {
                if !token_rows.contains_key(w) {
                    token_rows.insert(w.clone(), token_rows.len());
                    data.extend(model.vector(w).into_iter().map(f64::from));
                }
            }
            store.add("embed.table", Tensor::new(vec![token_rows.len(), text_dim], data)?);
        }
        Ok(Self {
            config: config.clone(),
            text_dim,
            token_rows,
            store,
            ts_gru,
            text_gru,
            mlp,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    /// Zeroes the output layer so every prediction is exactly 0.5.
    pub fn zero_output_layer(&mut self) {
        self.mlp.zero_output_layer(&mut self.store);
    }

    /// Builds the forward graph for a batch and returns the `batch x 1`
    /// probability node.
    pub fn forward<'p, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'p>,
        batch: &[&GroupFeatures],
        dropout_rng: Option<&mut R>,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let ts_inputs: Vec<Var> = batch.iter().map(|f| g.constant(f.ts_sequence.clone())).collect();
        let text_inputs = batch.iter().map(|f| self.text_input(g, f)).collect::<Result<Vec<_>>>()?;
        let ts = self.ts_gru.forward_packed(g, &ts_inputs)?;
        let text = self.text_gru.forward_packed(g, &text_inputs)?;
        let joined = g.concat_cols(&[ts.final_hidden, text.final_hidden])?;
        let dropout = dropout_rng.map(|rng| Dropout {
            rate: self.config.dropout,
            rng,
        });
        Ok(self.mlp.forward(g, joined, dropout)?)
    }

    fn text_input(&self, g: &mut Graph<'_>, f: &GroupFeatures) -> Result<Var> {
        let frozen = g.constant(f.text_vectors.clone());
        if self.token_rows.is_empty() || f.tokens.is_empty() {
            return Ok(frozen);
        }
        let table = g.param(self.store.find("embed.table")?);
        let rows: Vec<(Var, usize)> = f
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| match self.token_rows.get(t) {
                Some(&r) => (table, r),
                None => (frozen, i),
            })
            .collect();
        Ok(g.gather_rows(&rows)?)
    }

    /// Probabilities for `features`, evaluated in chunks of `batch_size`.
    pub fn predict(&self, features: &[GroupFeatures]) -> Result<Vec<f64>> {
        let refs: Vec<&GroupFeatures> = features.iter().collect();
        self.predict_refs(&refs)
    }

    pub fn predict_refs(&self, features: &[&GroupFeatures]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(self.config.batch_size.max(1)) {
            let mut g = Graph::new(&self.store);
            let p = self.forward::<ChaCha8Rng>(&mut g, chunk, None)?;
            out.extend_from_slice(g.value(p).data());
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            text_dim: self.text_dim,
            token_rows: self.token_rows.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&checkpoint::to_bytes(&self.store));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |reason: String| Error::Integrity {
            name: "classifier".into(),
            reason,
        };
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..end]).map_err(|e| corrupt(e.to_string()))?;
        let store = checkpoint::from_bytes(&bytes[end..]).map_err(|e| corrupt(e.to_string()))?;
        let (ts_cfg, text_cfg) = gru_configs(&header.config, header.text_dim);
        let bind = |e: txclass_nn::NnError| corrupt(e.to_string());
        let ts_gru = Gru::bind(&store, "ts", ts_cfg).map_err(bind)?;
        let text_gru = Gru::bind(&store, "text", text_cfg).map_err(bind)?;
        let mlp = Mlp::bind(&store, "mlp", &activations(&header.config)).map_err(bind)?;
        Ok(Self {
            config: header.config,
            text_dim: header.text_dim,
            token_rows: header.token_rows,
            store,
            ts_gru,
            text_gru,
            mlp,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(len: usize, tokens: usize, dim: usize, salt: f64) -> GroupFeatures {
        GroupFeatures {
            group_id: format!("g{len}{tokens}"),
            ts_sequence: Tensor::new(vec![len, 2], (0..len * 2).map(|i| (i as f64 * 0.37 + salt).sin()).collect()).unwrap(),
            text_vectors: Tensor::new(vec![tokens, dim], (0..tokens * dim).map(|i| (i as f64 * 0.11 - salt).cos()).collect()).unwrap(),
            tokens: (0..tokens).map(|i| format!("w{i}")).collect(),
        }
    }

    fn small() -> ClassifierConfig {
        ClassifierConfig {
            ts_hidden: 3,
            text_hidden: 4,
            mlp_hidden: vec![5],
            ..Default::default()
        }
    }

    #[test]
    fn zero_output_layer_gives_half() {
        let mut c = Classifier::new(&small(), 3, None).unwrap();
        c.zero_output_layer();
        let p = c.predict(&[feat(1, 1, 3, 0.0), feat(4, 2, 3, 1.0)]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn batch_prediction_matches_single() {
        let c = Classifier::new(&small(), 3, None).unwrap();
        let fs = vec![feat(1, 1, 3, 0.0), feat(5, 3, 3, 1.0), feat(2, 2, 3, 2.0)];
        let all = c.predict(&fs).unwrap();
        for (i, f) in fs.iter().enumerate() {
            let one = c.predict(std::slice::from_ref(f)).unwrap();
            assert!((one[0] - all[i]).abs() < 1e-12);
        }
        assert_eq!(all, c.predict(&fs).unwrap());
    }

    #[test]
    fn bytes_round_trip() {
        let c = Classifier::new(&small(), 3, None).unwrap();
        let back = Classifier::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), c.to_bytes());
        let f = vec![feat(3, 2, 3, 0.5)];
        assert_eq!(back.predict(&f).unwrap(), c.predict(&f).unwrap());
        assert_eq!(Classifier::from_bytes(b"nope").unwrap_err().exit_code(), 4);
    }

    #[test]
    fn seeded_initialization_is_reproducible() {
        let a = Classifier::new(&small(), 3, None).unwrap();
        let b = Classifier::new(&small(), 3, None).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = Classifier::new(&ClassifierConfig { seed: 9, ..small() }, 3, None).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }
}
