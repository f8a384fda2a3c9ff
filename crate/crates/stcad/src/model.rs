//! The dynamic graph transformer.
//!
//! Per node: six projected feature scalars summed into a d-dim embedding,
//! plus a two-dimensional positional encoding (temporal window position and
//! relative structural class, each projected to d/2 and concatenated). The
//! K = (C+2)*T rows flow through stacked self-attention layers; the edge
//! embedding is the row mean, scored by a sigmoid head. A per-position MLP
//! decoder reconstructs masked sequences for the contextual loss.

use rand::Rng;
use thiserror::Error;

use crate::features::SampleFeatures;
use crate::seed::derived_rng;
use crate::tensor::{ParamId, ParamStore, Tape, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("relative class {0} outside 0..=2")]
    BadRelClass(u8),
    #[error("sample has {got} positions, model expects {expected}")]
    WrongSequenceLength { got: usize, expected: usize },
}

/// Architecture hyperparameters and ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Embedding dimension d (even).
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    /// Context nodes per timestamp (C).
    pub context: usize,
    /// Window length in snapshots (T).
    pub window: usize,
    /// Feed-forward width.
    pub d_ff: usize,
    pub use_level1: bool,
    pub use_level2: bool,
    pub use_pe_tmp: bool,
    pub use_pe_rel: bool,
    pub use_contextual_loss: bool,
    /// First residual adds the layer input instead of the Q projection.
    pub residual_uses_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 32,
            heads: 2,
            layers: 2,
            context: 5,
            window: 4,
            d_ff: 128,
            use_level1: true,
            use_level2: true,
            use_pe_tmp: true,
            use_pe_rel: true,
            use_contextual_loss: true,
            residual_uses_input: false,
        }
    }
}

impl ModelConfig {
    /// Total sequence length K = (C+2) * T.
    pub fn seq_len(&self) -> usize {
        (self.context + 2) * self.window
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d == 0 || self.d % 2 != 0 {
            return Err(ModelError::Config(format!("d must be even, got {}", self.d)));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "d = {} not divisible by heads = {}",
                self.d, self.heads
            )));
        }
        if self.layers == 0 || self.window == 0 || self.context == 0 || self.d_ff == 0 {
            return Err(ModelError::Config("zero-sized dimension".into()));
        }
        Ok(())
    }
}

struct LayerIds {
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    w_o: ParamId,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

/// All learnable state plus the architecture config.
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    feat_w: [ParamId; 6], // w_g, w_l, w_t, w_d, w_i, w_c
    pe_tmp: ParamId,
    pe_rel: ParamId,
    layers: Vec<LayerIds>,
    scorer_w: ParamId,
    scorer_b: ParamId,
    dec_w1: ParamId,
    dec_b1: ParamId,
    dec_w2: ParamId,
    dec_b2: ParamId,
}

const LN_EPS: f64 = 1e-5;

/// Tape bindings of every parameter for one forward pass.
pub struct Bound {
    tids: Vec<TensorId>,
    pub bindings: Vec<(ParamId, TensorId)>,
}

impl Bound {
    fn tid(&self, id: ParamId) -> TensorId {
        self.tids[id.index()]
    }
}

impl Model {
    /// Freshly initialized model: uniform(-a, a) with a = sqrt(6/(fan_in +
    /// fan_out)) for matrices, zeros for biases, ones for layer-norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d;
        let mut params = ParamStore::new();
        let mut counter = 0u64;
        let mut glorot = |params: &mut ParamStore, name: &str, rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let mut rng = derived_rng(seed, "init", &[counter]);
            counter += 1;
            let values = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
            params.add(name, rows, cols, values)
        };
        let zeros =
            |params: &mut ParamStore, name: &str, cols: usize| params.add(name, 1, cols, vec![0.0; cols]);
        let ones =
            |params: &mut ParamStore, name: &str, cols: usize| params.add(name, 1, cols, vec![1.0; cols]);

        let feat_w = [
            glorot(&mut params, "feat.w_glo", 1, d),
            glorot(&mut params, "feat.w_loc", 1, d),
            glorot(&mut params, "feat.w_tmp", 1, d),
            glorot(&mut params, "feat.w_dc", 1, d),
            glorot(&mut params, "feat.w_ic", 1, d),
            glorot(&mut params, "feat.w_nc", 1, d),
        ];
        let pe_tmp = glorot(&mut params, "pe.w_tmp", 1, d / 2);
        let pe_rel = glorot(&mut params, "pe.w_rel", 1, d / 2);

        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerIds {
                w_q: glorot(&mut params, &p("w_q"), d, d),
                w_k: glorot(&mut params, &p("w_k"), d, d),
                w_v: glorot(&mut params, &p("w_v"), d, d),
                w_o: glorot(&mut params, &p("w_o"), d, d),
                ffn_w1: glorot(&mut params, &p("ffn_w1"), d, config.d_ff),
                ffn_b1: zeros(&mut params, &p("ffn_b1"), config.d_ff),
                ffn_w2: glorot(&mut params, &p("ffn_w2"), config.d_ff, d),
                ffn_b2: zeros(&mut params, &p("ffn_b2"), d),
                ln1_gain: ones(&mut params, &p("ln1_gain"), d),
                ln1_bias: zeros(&mut params, &p("ln1_bias"), d),
                ln2_gain: ones(&mut params, &p("ln2_gain"), d),
                ln2_bias: zeros(&mut params, &p("ln2_bias"), d),
            });
        }
        let scorer_w = glorot(&mut params, "scorer.w", d, 1);
        let scorer_b = zeros(&mut params, "scorer.b", 1);
        let dec_w1 = glorot(&mut params, "decoder.w1", d, config.d_ff);
        let dec_b1 = zeros(&mut params, "decoder.b1", config.d_ff);
        let dec_w2 = glorot(&mut params, "decoder.w2", config.d_ff, d);
        let dec_b2 = zeros(&mut params, "decoder.b2", d);

        Ok(Model {
            config,
            params,
            feat_w,
            pe_tmp,
            pe_rel,
            layers,
            scorer_w,
            scorer_b,
            dec_w1,
            dec_b1,
            dec_w2,
            dec_b2,
        })
    }

    /// Bind every parameter onto the tape as leaves.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let mut tids = Vec::with_capacity(self.params.len());
        let mut bindings = Vec::with_capacity(self.params.len());
        for (pid, _) in self.params.iter() {
            let tid = self.params.bind(tape, pid);
            tids.push(tid);
            bindings.push((pid, tid));
        }
        Bound { tids, bindings }
    }

    /// Input embedding rows: aggregated feature projection plus 2D positional
    /// encoding, ordered window-major.
    pub fn input_sequence(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        feats: &SampleFeatures,
    ) -> Result<TensorId, ModelError> {
        let k = self.config.seq_len();
        if feats.rows.len() != k {
            return Err(ModelError::WrongSequenceLength {
                got: feats.rows.len(),
                expected: k,
            });
        }
        for &rc in &feats.rel_class {
            if rc > 2 {
                return Err(ModelError::BadRelClass(rc));
            }
        }
        let d = self.config.d;

        // feature aggregation: sum of scalar-column x weight-row products
        let mut x = tape.leaf(k, d, vec![0.0; k * d]);
        let level_enabled = [self.config.use_level1, self.config.use_level2];
        for (fi, &w) in self.feat_w.iter().enumerate() {
            if !level_enabled[fi / 3] {
                continue;
            }
            let col: Vec<f64> = feats.rows.iter().map(|r| r.as_array()[fi]).collect();
            let col_t = tape.leaf(k, 1, col);
            let contrib = tape.matmul(col_t, bound.tid(w))?;
            x = tape.add(x, contrib)?;
        }

        // positional encoding: concat(t * w_tmp, rel * w_rel)
        let t_col: Vec<f64> = if self.config.use_pe_tmp {
            feats.window_pos.iter().map(|&t| t as f64).collect()
        } else {
            vec![0.0; k]
        };
        let rel_col: Vec<f64> = if self.config.use_pe_rel {
            feats.rel_class.iter().map(|&r| r as f64).collect()
        } else {
            vec![0.0; k]
        };
        let t_leaf = tape.leaf(k, 1, t_col);
        let rel_leaf = tape.leaf(k, 1, rel_col);
        let pe_t = tape.matmul(t_leaf, bound.tid(self.pe_tmp))?;
        let pe_r = tape.matmul(rel_leaf, bound.tid(self.pe_rel))?;
        let pe = tape.concat_cols(&[pe_t, pe_r])?;

        Ok(tape.add(x, pe)?)
    }

    /// The transformer encoder stack. When `attention_out` is given, the
    /// per-head softmax attention matrices of every layer are appended to it.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: TensorId,
        mut attention_out: Option<&mut Vec<TensorId>>,
    ) -> Result<TensorId, ModelError> {
        let d = self.config.d;
        let heads = self.config.heads;
        let head_w = d / heads;
        // score scale uses d' = d
        let scale = 1.0 / (d as f64).sqrt();

        let mut h = input;
        for layer in &self.layers {
            let q = tape.matmul(h, bound.tid(layer.w_q))?;
            let k = tape.matmul(h, bound.tid(layer.w_k))?;
            let v = tape.matmul(h, bound.tid(layer.w_v))?;

            let mut head_outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = tape.slice_cols(q, hd * head_w, head_w)?;
                let kh = tape.slice_cols(k, hd * head_w, head_w)?;
                let vh = tape.slice_cols(v, hd * head_w, head_w)?;
                let raw = tape.matmul_bt(qh, kh)?;
                let scaled = tape.scale(raw, scale);
                let attn = tape.softmax_rows(scaled);
                if let Some(out) = attention_out.as_deref_mut() {
                    out.push(attn);
                }
                head_outs.push(tape.matmul(attn, vh)?);
            }
            let concat = tape.concat_cols(&head_outs)?;
            let projected = tape.matmul(concat, bound.tid(layer.w_o))?;

            let residual = if self.config.residual_uses_input { h } else { q };
            let sum1 = tape.add(projected, residual)?;
            let h1 = tape.layer_norm(
                sum1,
                bound.tid(layer.ln1_gain),
                bound.tid(layer.ln1_bias),
                LN_EPS,
            )?;

            let ff1 = tape.matmul(h1, bound.tid(layer.ffn_w1))?;
            let ff1b = tape.add_row_broadcast(ff1, bound.tid(layer.ffn_b1))?;
            let act = tape.relu(ff1b);
            let ff2 = tape.matmul(act, bound.tid(layer.ffn_w2))?;
            let ff2b = tape.add_row_broadcast(ff2, bound.tid(layer.ffn_b2))?;
            let sum2 = tape.add(ff2b, h1)?;
            h = tape.layer_norm(
                sum2,
                bound.tid(layer.ln2_gain),
                bound.tid(layer.ln2_bias),
                LN_EPS,
            )?;
        }
        Ok(h)
    }

    /// Row mean of the encoder output: the edge embedding.
    pub fn edge_embedding(&self, tape: &mut Tape, encoded: TensorId) -> TensorId {
        tape.mean_rows(encoded)
    }

    /// Sigmoid(Linear(embedding)): anomaly probability in (0, 1).
    pub fn score_edge(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        embedding: TensorId,
    ) -> Result<TensorId, ModelError> {
        let lin = tape.matmul(embedding, bound.tid(self.scorer_w))?;
        let biased = tape.add(lin, bound.tid(self.scorer_b))?;
        Ok(tape.sigmoid(biased))
    }

    /// Per-position MLP decoder.
    pub fn decode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        encoded: TensorId,
    ) -> Result<TensorId, ModelError> {
        let h1 = tape.matmul(encoded, bound.tid(self.dec_w1))?;
        let h1b = tape.add_row_broadcast(h1, bound.tid(self.dec_b1))?;
        let act = tape.relu(h1b);
        let h2 = tape.matmul(act, bound.tid(self.dec_w2))?;
        Ok(tape.add_row_broadcast(h2, bound.tid(self.dec_b2))?)
    }

    /// Zero one input row, re-encode, and decode a reconstruction of the full
    /// sequence.
    pub fn mask_and_reconstruct(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: TensorId,
        mask_index: usize,
    ) -> Result<TensorId, ModelError> {
        let masked = tape.mask_row(input, mask_index)?;
        let encoded = self.encode(tape, bound, masked, None)?;
        self.decode(tape, bound, encoded)
    }

    /// Full discriminative pass on a fresh tape; returns the score in (0, 1).
    pub fn score_sample(&self, feats: &SampleFeatures) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let input = self.input_sequence(&mut tape, &bound, feats)?;
        let encoded = self.encode(&mut tape, &bound, input, None)?;
        let emb = self.edge_embedding(&mut tape, encoded);
        let score = self.score_edge(&mut tape, &bound, emb)?;
        Ok(tape.value_scalar(score))
    }

    /// Encoder-output edge embedding on a fresh tape (export path).
    pub fn embed_sample(&self, feats: &SampleFeatures) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let input = self.input_sequence(&mut tape, &bound, feats)?;
        let encoded = self.encode(&mut tape, &bound, input, None)?;
        let emb = self.edge_embedding(&mut tape, encoded);
        Ok(tape.values(emb).to_vec())
    }
}
