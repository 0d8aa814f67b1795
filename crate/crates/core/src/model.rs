//! A multi-head self-attention encoder classifier, built from scratch.
//!
//! One attention head computes
//!
//! ```text
//! Z = softmax( (Q·K / sqrt(d·l)) · Vᵀ · Qᵀ ) · (Q·U)
//! ```
//!
//! over a sequence matrix `Q ∈ [n×d]` with key/value maps `K, V ∈ [d×l]` and
//! output map `U`. Note the scores are scaled by `1/sqrt(d·l)` — the full
//! product of both projection dimensions, not the conventional `1/sqrt(l)`.
//! An encoder block concatenates the heads, reconciles the concat width back
//! to `d` with a learned affine map, adds the residual, layer-normalises, and
//! applies a two-layer relu feedforward. Classification mean-pools the final
//! hidden states and applies an affine head.
//!
//! Parameters are partitioned into layers for gradient masking: layer `0`
//! holds the embeddings, layers `1..=L` the encoder blocks, and layer `L+1`
//! the classifier head. Only encoder-block parameters are maskable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Layer index reserved for the embeddings.
pub const EMBED_LAYER: usize = 0;

/// Dimensions of the encoder classifier.
///
/// `embed_dim` is the model width `d`, `attn_dim` the key/value width `l`,
/// and `head_dim` the per-head output width; `heads * head_dim` is the concat
/// width consumed by the per-block output projection (defaults keep it equal
/// to `d`). The output projection width always equals `d` so the residual is
/// well-formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width `d`.
    pub embed_dim: usize,
    /// Key/value projection width `l`.
    pub attn_dim: usize,
    /// Number of attention heads.
    pub heads: usize,
    /// Per-head output width.
    pub head_dim: usize,
    /// Number of encoder blocks `L`.
    pub layers: usize,
    /// Token vocabulary size (a mask slot for pretraining is added on top).
    pub vocab: usize,
    /// Maximum sequence length.
    pub max_len: usize,
    /// Output class count.
    pub classes: usize,
    /// Feedforward inner width; 0 means the default `4 * heads * head_dim`.
    pub ff_hidden: usize,
}

impl Default for ModelConfig {
    /// Desk-scale defaults: minutes-level CPU runs.
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            attn_dim: 16,
            heads: 2,
            head_dim: 16,
            layers: 4,
            vocab: 32,
            max_len: 16,
            classes: 2,
            ff_hidden: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("embed_dim", self.embed_dim),
            ("attn_dim", self.attn_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("layers", self.layers),
            ("vocab", self.vocab),
            ("max_len", self.max_len),
            ("classes", self.classes),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Effective feedforward inner width.
    pub fn ff_width(&self) -> usize {
        if self.ff_hidden > 0 {
            self.ff_hidden
        } else {
            4 * self.heads * self.head_dim
        }
    }

    /// Layer index of the classifier head (`L + 1`).
    pub fn head_layer(&self) -> usize {
        self.layers + 1
    }

    /// Token id used for masked-token pretraining; one past the data vocab.
    pub fn mask_token(&self) -> usize {
        self.vocab
    }
}

/// One named trainable tensor with its layer assignment.
#[derive(Clone)]
pub struct Param {
    pub name: String,
    pub layer: usize,
    pub maskable: bool,
    pub tensor: Tensor,
}

/// Ordered collection of named parameters, partitioned into layers.
///
/// Registration enforces the exclusion rule: parameters in layer 0 (the
/// embeddings) and layer `L+1` (the head) are never maskable, and every
/// encoder-block parameter is.
pub struct ParamSet {
    params: Vec<Param>,
    encoder_layers: usize,
}

impl ParamSet {
    pub fn new(encoder_layers: usize) -> ParamSet {
        ParamSet {
            params: Vec::new(),
            encoder_layers,
        }
    }

    pub fn register(&mut self, name: &str, layer: usize, tensor: Tensor) -> Result<()> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        if layer > self.encoder_layers + 1 {
            return Err(Error::Contract(format!(
                "layer {layer} out of range for {} encoder layers",
                self.encoder_layers
            )));
        }
        let maskable = (1..=self.encoder_layers).contains(&layer);
        self.params.push(Param {
            name: name.to_string(),
            layer,
            maskable,
            tensor: tensor.requires_grad(),
        });
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Number of encoder layers `L`.
    pub fn encoder_layers(&self) -> usize {
        self.encoder_layers
    }

    /// Total entry count per layer, indexed `0..=L+1`.
    pub fn entries_per_layer(&self) -> Vec<usize> {
        let mut totals = vec![0usize; self.encoder_layers + 2];
        for p in &self.params {
            totals[p.layer] += p.tensor.len();
        }
        totals
    }

    /// Snapshot of every tensor's data, for bitwise comparisons.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.tensor.data_vec()).collect()
    }
}

struct HeadParams {
    key: Tensor,
    value: Tensor,
    proj: Tensor,
}

struct Block {
    heads: Vec<HeadParams>,
    concat_w: Tensor,
    concat_b: Tensor,
    norm_gain: Tensor,
    norm_bias: Tensor,
    ff_w1: Tensor,
    ff_b1: Tensor,
    ff_w2: Tensor,
    ff_b2: Tensor,
}

impl Block {
    fn forward(&self, q: &Tensor) -> Result<Tensor> {
        let head_outs = self
            .heads
            .iter()
            .map(|h| attention_head(q, &h.key, &h.value, &h.proj))
            .collect::<Result<Vec<_>>>()?;
        let cat = Tensor::concat_cols(&head_outs)?;
        let reconciled = cat.matmul(&self.concat_w)?.add_row(&self.concat_b)?;
        let normed = reconciled
            .add(q)?
            .layer_norm(&self.norm_gain, &self.norm_bias)?;
        normed
            .matmul(&self.ff_w1)?
            .add_row(&self.ff_b1)?
            .relu()
            .matmul(&self.ff_w2)?
            .add_row(&self.ff_b2)
    }
}

/// Single attention head. `q` is `[n×d]`, `key` and `value` are `[d×l]`, and
/// `proj` is `[d×o]`; the result is `[n×o]`. Scores are scaled by
/// `1/sqrt(d·l)` taken from the key's dimensions.
pub fn attention_head(q: &Tensor, key: &Tensor, value: &Tensor, proj: &Tensor) -> Result<Tensor> {
    let kshape = key.shape();
    if kshape.len() != 2 {
        return Err(Error::Contract(format!(
            "attention key must be 2-D, got {kshape:?}"
        )));
    }
    let (d, l) = (kshape[0], kshape[1]);
    let scaled = q.matmul(key)?.scale(1.0 / ((d * l) as f64).sqrt());
    let scores = scaled
        .matmul(&value.transpose()?)?
        .matmul(&q.transpose()?)?;
    let attention = scores.softmax_rows()?;
    attention.matmul(&q.matmul(proj)?)
}

fn init_weight(shape: &[usize], init_seed: u64, name: &str) -> Tensor {
    let fan_in = shape[0] as f64;
    let bound = 1.0 / fan_in.sqrt();
    let mut stream = Stream::keyed(init_seed, 0, 0, name);
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| stream.uniform(-bound, bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// The encoder classifier: embeddings, `L` blocks, and an affine head over
/// mean-pooled positions.
pub struct Model {
    pub cfg: ModelConfig,
    token_emb: Tensor,
    pos_emb: Tensor,
    blocks: Vec<Block>,
    head_w: Tensor,
    head_b: Tensor,
    params: ParamSet,
}

impl Model {
    /// Build a model with seeded initialisation: weights uniform in
    /// `±1/sqrt(fan_in)`, biases zero, norm gains one. Initialisation is
    /// keyed per parameter name, so it does not depend on build order.
    pub fn new(cfg: &ModelConfig, init_seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut params = ParamSet::new(cfg.layers);
        let d = cfg.embed_dim;
        let l = cfg.attn_dim;
        let concat_width = cfg.heads * cfg.head_dim;
        let ff = cfg.ff_width();

        // vocab + 1 rows: the extra row is the pretraining mask slot.
        let token_emb = init_weight(&[cfg.vocab + 1, d], init_seed, "embed.token");
        let pos_emb = init_weight(&[cfg.max_len, d], init_seed, "embed.pos");
        params.register("embed.token", EMBED_LAYER, token_emb.clone())?;
        params.register("embed.pos", EMBED_LAYER, pos_emb.clone())?;

        let mut blocks = Vec::with_capacity(cfg.layers);
        for li in 1..=cfg.layers {
            let mut heads = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let base = format!("enc.{li}.head.{h}");
                let key = init_weight(&[d, l], init_seed, &format!("{base}.key"));
                let value = init_weight(&[d, l], init_seed, &format!("{base}.value"));
                let proj = init_weight(&[d, cfg.head_dim], init_seed, &format!("{base}.proj"));
                params.register(&format!("{base}.key"), li, key.clone())?;
                params.register(&format!("{base}.value"), li, value.clone())?;
                params.register(&format!("{base}.proj"), li, proj.clone())?;
                heads.push(HeadParams { key, value, proj });
            }
            let concat_w = init_weight(&[concat_width, d], init_seed, &format!("enc.{li}.concat.weight"));
            let concat_b = Tensor::zeros(&[d]);
            let norm_gain = Tensor::from_vec(&[d], vec![1.0; d])?;
            let norm_bias = Tensor::zeros(&[d]);
            let ff_w1 = init_weight(&[d, ff], init_seed, &format!("enc.{li}.ff.w1"));
            let ff_b1 = Tensor::zeros(&[ff]);
            let ff_w2 = init_weight(&[ff, d], init_seed, &format!("enc.{li}.ff.w2"));
            let ff_b2 = Tensor::zeros(&[d]);
            params.register(&format!("enc.{li}.concat.weight"), li, concat_w.clone())?;
            params.register(&format!("enc.{li}.concat.bias"), li, concat_b.clone())?;
            params.register(&format!("enc.{li}.norm.gain"), li, norm_gain.clone())?;
            params.register(&format!("enc.{li}.norm.bias"), li, norm_bias.clone())?;
            params.register(&format!("enc.{li}.ff.w1"), li, ff_w1.clone())?;
            params.register(&format!("enc.{li}.ff.b1"), li, ff_b1.clone())?;
            params.register(&format!("enc.{li}.ff.w2"), li, ff_w2.clone())?;
            params.register(&format!("enc.{li}.ff.b2"), li, ff_b2.clone())?;
            blocks.push(Block {
                heads,
                concat_w,
                concat_b,
                norm_gain,
                norm_bias,
                ff_w1,
                ff_b1,
                ff_w2,
                ff_b2,
            });
        }

        let head_w = init_weight(&[d, cfg.classes], init_seed, "head.weight");
        let head_b = Tensor::zeros(&[cfg.classes]);
        let head_layer = cfg.head_layer();
        params.register("head.weight", head_layer, head_w.clone())?;
        params.register("head.bias", head_layer, head_b.clone())?;

        Ok(Model {
            cfg: cfg.clone(),
            token_emb,
            pos_emb,
            blocks,
            head_w,
            head_b,
            params,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Hidden states `[n×d]` after the embedding sum and all encoder blocks.
    /// Accepts the mask token (id `vocab`) so the pretraining path can reuse
    /// it; classification rejects it earlier.
    pub fn forward_hidden(&self, tokens: &[usize]) -> Result<Tensor> {
        let n = tokens.len();
        if n == 0 || n > self.cfg.max_len {
            return Err(Error::Input(format!(
                "sequence length {n} outside 1..={}",
                self.cfg.max_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t > self.cfg.vocab) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocab {}",
                self.cfg.vocab
            )));
        }
        let positions: Vec<usize> = (0..n).collect();
        let mut x = self
            .token_emb
            .gather_rows(tokens)?
            .add(&self.pos_emb.gather_rows(&positions)?)?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        Ok(x)
    }

    /// Class logits `[1×classes]` for one token sequence.
    pub fn forward_classify(&self, tokens: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.cfg.vocab) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocab {}",
                self.cfg.vocab
            )));
        }
        self.forward_hidden(tokens)?
            .mean_rows()?
            .matmul(&self.head_w)?
            .add_row(&self.head_b)
    }

    /// Argmax class for one sequence; ties resolve to the lowest index.
    pub fn predict(&self, tokens: &[usize]) -> Result<usize> {
        let logits = self.forward_classify(tokens)?;
        let data = logits.data_vec();
        let mut best = 0;
        for (i, &v) in data.iter().enumerate() {
            if v > data[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Mean cross-entropy over a batch of sequences, as one graph.
    pub fn batch_loss(&self, sequences: &[&[usize]], labels: &[usize]) -> Result<Tensor> {
        if sequences.is_empty() || sequences.len() != labels.len() {
            return Err(Error::Input(format!(
                "batch of {} sequences with {} labels",
                sequences.len(),
                labels.len()
            )));
        }
        let mut total: Option<Tensor> = None;
        for (seq, &label) in sequences.iter().zip(labels) {
            let loss = self.forward_classify(seq)?.cross_entropy(&[label])?;
            total = Some(match total {
                Some(t) => t.add(&loss)?,
                None => loss,
            });
        }
        Ok(total.unwrap().scale(1.0 / sequences.len() as f64))
    }

    /// Masked-token prediction loss: hidden states at `masked_positions` are
    /// projected with the given head and scored against the original tokens.
    pub fn masked_token_loss(
        &self,
        tokens_with_masks: &[usize],
        masked_positions: &[usize],
        originals: &[usize],
        mlm_w: &Tensor,
        mlm_b: &Tensor,
    ) -> Result<Tensor> {
        if masked_positions.len() != originals.len() || masked_positions.is_empty() {
            return Err(Error::Input("masked positions and originals disagree".into()));
        }
        let hidden = self.forward_hidden(tokens_with_masks)?;
        hidden
            .gather_rows(masked_positions)?
            .matmul(mlm_w)?
            .add_row(mlm_b)?
            .cross_entropy(originals)
    }

    /// Parameter set extended with a fresh masked-token head; the extra head
    /// lives in the embedding layer's exclusion class and is discarded after
    /// pretraining.
    pub fn pretrain_params(&self, mlm_w: &Tensor, mlm_b: &Tensor) -> Result<ParamSet> {
        let mut set = ParamSet::new(self.cfg.layers);
        for p in self.params.iter() {
            if p.layer == self.cfg.head_layer() {
                continue; // the classifier head is not trained during pretraining
            }
            set.register(&p.name, p.layer, p.tensor.clone())?;
        }
        set.register("mlm.weight", EMBED_LAYER, mlm_w.clone())?;
        set.register("mlm.bias", EMBED_LAYER, mlm_b.clone())?;
        Ok(set)
    }

    /// Fresh masked-token head tensors, seeded by name.
    pub fn new_mlm_head(&self, init_seed: u64) -> (Tensor, Tensor) {
        let w = init_weight(&[self.cfg.embed_dim, self.cfg.vocab], init_seed, "mlm.weight");
        let b = Tensor::zeros(&[self.cfg.vocab]);
        (w, b)
    }
}
