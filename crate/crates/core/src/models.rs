//! Decoder-only causal transformer language model.
//!
//! Layout is pre-norm: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`, with a
//! final layer norm whose output (`final_hidden`) feeds an untied output
//! embedding. Positions use a learned absolute embedding.
//!
//! Parameters live in one ordered list. That order is also the flattening
//! order of every [`Selector`]:
//!
//! 1. token embedding `[vocab, d]`
//! 2. position embedding `[context, d]`
//! 3. for each block `0..depth`, in [`BlockPart::ALL`] order:
//!    `ln1 gain, ln1 bias, Wq, bq, Wk, bk, Wv, bv, Wo, bo, ln2 gain, ln2 bias,
//!    W1, b1, W2, b2`
//! 4. final layer-norm gain, final layer-norm bias
//! 5. output embedding `[vocab, d]`

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{FlatVector, Gradients, Graph, Tensor, Var};
use crate::seeded_rng;

/// Byte-level vocabulary: 256 byte values plus one padding token.
pub const BYTE_VOCAB: usize = 257;
/// Padding token id of the byte-level vocabulary.
pub const PAD: usize = 256;

const LN_EPS: f64 = 1e-5;
const SIMPLE_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Small-init Gaussians with depth-scaled output projections.
    #[default]
    Scaled,
    /// Every weight matrix from N(0, 0.02^2).
    Simple,
}

fn default_vocab() -> usize {
    BYTE_VOCAB
}

fn default_mlp_ratio() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub context: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default)]
    pub init_scheme: InitScheme,
    #[serde(default)]
    pub frozen_blocks: usize,
}

impl TransformerConfig {
    pub fn new(width: usize, depth: usize, heads: usize, context: usize) -> Self {
        Self {
            vocab_size: BYTE_VOCAB,
            width,
            depth,
            heads,
            context,
            mlp_ratio: 4,
            init_scheme: InitScheme::Scaled,
            frozen_blocks: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if self.width == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return fail("width, heads and mlp_ratio must be positive".into());
        }
        if !self.width.is_multiple_of(self.heads) {
            return fail(format!("width {} is not divisible by heads {}", self.width, self.heads));
        }
        if self.frozen_blocks > self.depth {
            return fail(format!("frozen_blocks {} exceeds depth {}", self.frozen_blocks, self.depth));
        }
        if self.context < 2 {
            return fail(format!("context must be at least 2, got {}", self.context));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Total parameter count; a pure function of the config.
    pub fn param_count(&self) -> usize {
        layout(self).iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// One of the sixteen parameter tensors of a transformer block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockPart {
    Ln1Gain,
    Ln1Bias,
    Wq,
    Bq,
    Wk,
    Bk,
    Wv,
    Bv,
    Wo,
    Bo,
    Ln2Gain,
    Ln2Bias,
    W1,
    B1,
    W2,
    B2,
}

impl BlockPart {
    pub const ALL: [BlockPart; 16] = [
        BlockPart::Ln1Gain,
        BlockPart::Ln1Bias,
        BlockPart::Wq,
        BlockPart::Bq,
        BlockPart::Wk,
        BlockPart::Bk,
        BlockPart::Wv,
        BlockPart::Bv,
        BlockPart::Wo,
        BlockPart::Bo,
        BlockPart::Ln2Gain,
        BlockPart::Ln2Bias,
        BlockPart::W1,
        BlockPart::B1,
        BlockPart::W2,
        BlockPart::B2,
    ];

    pub fn is_attention(self) -> bool {
        matches!(
            self,
            BlockPart::Wq | BlockPart::Bq | BlockPart::Wk | BlockPart::Bk | BlockPart::Wv | BlockPart::Bv | BlockPart::Wo | BlockPart::Bo
        )
    }

    fn shape(self, cfg: &TransformerConfig) -> Vec<usize> {
        let d = cfg.width;
        let hidden = cfg.mlp_ratio * d;
        match self {
            BlockPart::Wq | BlockPart::Wk | BlockPart::Wv | BlockPart::Wo => vec![d, d],
            BlockPart::W1 => vec![d, hidden],
            BlockPart::B1 => vec![hidden],
            BlockPart::W2 => vec![hidden, d],
            _ => vec![d],
        }
    }

    fn name(self) -> &'static str {
        match self {
            BlockPart::Ln1Gain => "ln1.gain",
            BlockPart::Ln1Bias => "ln1.bias",
            BlockPart::Wq => "attn.wq",
            BlockPart::Bq => "attn.bq",
            BlockPart::Wk => "attn.wk",
            BlockPart::Bk => "attn.bk",
            BlockPart::Wv => "attn.wv",
            BlockPart::Bv => "attn.bv",
            BlockPart::Wo => "attn.wo",
            BlockPart::Bo => "attn.bo",
            BlockPart::Ln2Gain => "ln2.gain",
            BlockPart::Ln2Bias => "ln2.bias",
            BlockPart::W1 => "mlp.w1",
            BlockPart::B1 => "mlp.b1",
            BlockPart::W2 => "mlp.w2",
            BlockPart::B2 => "mlp.b2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    TokenEmbedding,
    PositionEmbedding,
    Block { index: usize, part: BlockPart },
    FinalNormGain,
    FinalNormBias,
    OutputEmbedding,
}

impl ParamKind {
    pub fn name(self) -> String {
        match self {
            ParamKind::TokenEmbedding => "tok_emb".into(),
            ParamKind::PositionEmbedding => "pos_emb".into(),
            ParamKind::Block { index, part } => format!("block{index}.{}", part.name()),
            ParamKind::FinalNormGain => "ln_f.gain".into(),
            ParamKind::FinalNormBias => "ln_f.bias".into(),
            ParamKind::OutputEmbedding => "out_emb".into(),
        }
    }
}

enum InitClass {
    Matrix,
    OutputProjection,
    Zero,
    One,
}

fn init_class(kind: ParamKind) -> InitClass {
    match kind {
        ParamKind::FinalNormGain => InitClass::One,
        ParamKind::FinalNormBias => InitClass::Zero,
        ParamKind::Block { part, .. } => match part {
            BlockPart::Ln1Gain | BlockPart::Ln2Gain => InitClass::One,
            BlockPart::Wq | BlockPart::Wk | BlockPart::Wv | BlockPart::W1 => InitClass::Matrix,
            BlockPart::Wo | BlockPart::W2 => InitClass::OutputProjection,
            _ => InitClass::Zero,
        },
        _ => InitClass::Matrix,
    }
}

fn layout(cfg: &TransformerConfig) -> Vec<(ParamKind, Vec<usize>)> {
    let d = cfg.width;
    let mut out = vec![
        (ParamKind::TokenEmbedding, vec![cfg.vocab_size, d]),
        (ParamKind::PositionEmbedding, vec![cfg.context, d]),
    ];
    for index in 0..cfg.depth {
        for part in BlockPart::ALL {
            out.push((ParamKind::Block { index, part }, part.shape(cfg)));
        }
    }
    out.push((ParamKind::FinalNormGain, vec![d]));
    out.push((ParamKind::FinalNormBias, vec![d]));
    out.push((ParamKind::OutputEmbedding, vec![cfg.vocab_size, d]));
    out
}

/// Addresses a subset of parameters, flattened in layout order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Selector {
    All,
    /// `Wq, bq, Wk, bk, Wv, bv, Wo, bo` of one block.
    BlockAttention(usize),
    OutputEmbedding,
    /// Everything outside the frozen prefix blocks.
    TrainableOnly,
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::All => f.write_str("all"),
            Selector::BlockAttention(k) => write!(f, "block({k}).attention"),
            Selector::OutputEmbedding => f.write_str("final-output-embedding"),
            Selector::TrainableOnly => f.write_str("trainable-only"),
        }
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Selector::All),
            "final-output-embedding" => Ok(Selector::OutputEmbedding),
            "trainable-only" => Ok(Selector::TrainableOnly),
            _ => s
                .strip_prefix("block(")
                .and_then(|r| r.strip_suffix(").attention"))
                .and_then(|k| k.parse().ok())
                .map(Selector::BlockAttention)
                .ok_or_else(|| Error::Selector(format!("unknown selector `{s}`"))),
        }
    }
}

impl TryFrom<String> for Selector {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Selector> for String {
    fn from(s: Selector) -> String {
        s.to_string()
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub kind: ParamKind,
    pub tensor: Arc<Tensor>,
}

/// Which leaves of a recorded forward pass request gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    None,
    Trainable,
    All,
    /// Only the parameters covered by the selector.
    Selected(Selector),
}

/// Input/target pairing for next-token prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LmExample {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    /// Positions whose target is a real token and enters the loss.
    pub loss_mask: Vec<bool>,
}

impl LmExample {
    /// Targets are `tokens` shifted left by one; the final position has no
    /// target. PAD targets are excluded from the loss.
    pub fn next_token(tokens: &[usize]) -> Self {
        let n = tokens.len();
        let targets: Vec<usize> = (0..n).map(|p| if p + 1 < n { tokens[p + 1] } else { PAD }).collect();
        let loss_mask = targets.iter().enumerate().map(|(p, &t)| p + 1 < n && t != PAD).collect();
        Self {
            inputs: tokens.to_vec(),
            targets,
            loss_mask,
        }
    }

    /// Shifted targets with a caller-supplied mask.
    pub fn with_mask(tokens: &[usize], loss_mask: &[bool]) -> Result<Self> {
        if loss_mask.len() != tokens.len() {
            return Err(Error::Input(format!(
                "loss mask has {} entries for {} tokens",
                loss_mask.len(),
                tokens.len()
            )));
        }
        let mut ex = Self::next_token(tokens);
        ex.loss_mask = loss_mask.iter().enumerate().map(|(p, &m)| m && p + 1 < tokens.len()).collect();
        Ok(ex)
    }
}

/// A recorded forward pass.
pub struct Recording {
    pub graph: Graph,
    pub logits: Var,
    pub hidden: Var,
    /// One leaf per parameter, in layout order.
    pub leaves: Vec<Var>,
}

/// A recorded loss.
pub struct LossRecording {
    pub recording: Recording,
    pub loss: Var,
    pub value: f64,
}

impl LossRecording {
    /// Backpropagates and returns gradients in layout order; `None` for
    /// parameters that did not request a gradient.
    pub fn gradients(self) -> Result<Vec<Option<Tensor>>> {
        let Recording { graph, leaves, .. } = self.recording;
        let mut grads: Gradients = graph.backward(self.loss)?;
        drop(graph);
        Ok(leaves.iter().map(|&v| grads.remove(v)).collect())
    }
}

#[derive(Clone, Debug)]
pub struct TransformerLM {
    config: TransformerConfig,
    params: Vec<Param>,
}

impl TransformerLM {
    /// Seeded initialization; bit-identical for equal `(config, seed)`.
    pub fn init(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let d = config.width as f64;
        let (matrix_std, proj_std) = match config.init_scheme {
            InitScheme::Simple => (SIMPLE_STD, SIMPLE_STD),
            InitScheme::Scaled => ((2.0 / (5.0 * d)).sqrt(), 2.0 / (config.depth.max(1) as f64 * d.sqrt())),
        };
        let matrix = Normal::new(0.0, matrix_std).expect("positive std");
        let proj = Normal::new(0.0, proj_std).expect("positive std");
        let params = layout(&config)
            .into_iter()
            .map(|(kind, shape)| {
                let numel: usize = shape.iter().product();
                let data: Vec<f64> = match init_class(kind) {
                    InitClass::Matrix => (0..numel).map(|_| matrix.sample(&mut rng)).collect(),
                    InitClass::OutputProjection => (0..numel).map(|_| proj.sample(&mut rng)).collect(),
                    InitClass::Zero => vec![0.0; numel],
                    InitClass::One => vec![1.0; numel],
                };
                Param {
                    kind,
                    tensor: Arc::new(Tensor::raw(shape, data)),
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Rebuilds a model from a `Selector::All` flat vector.
    pub fn from_flat(config: TransformerConfig, flat: &FlatVector) -> Result<Self> {
        let mut model = Self::init(config, 0)?;
        model.load_selected(Selector::All, flat)?;
        Ok(model)
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn is_trainable(&self, kind: ParamKind) -> bool {
        !matches!(kind, ParamKind::Block { index, .. } if index < self.config.frozen_blocks)
    }

    /// Layout indices of the trainable parameters.
    pub fn trainable_indices(&self) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.is_trainable(self.params[i].kind)).collect()
    }

    /// Trainable parameter buffers, aligned with [`Self::trainable_indices`].
    pub fn trainable_params_mut(&mut self) -> Vec<&mut [f64]> {
        let frozen = self.config.frozen_blocks;
        self.params
            .iter_mut()
            .filter(|p| !matches!(p.kind, ParamKind::Block { index, .. } if index < frozen))
            .map(|p| Arc::make_mut(&mut p.tensor).data_mut())
            .collect()
    }

    /// Mutable access for optimizer updates; clones only if a graph still
    /// shares the tensor.
    pub fn param_mut(&mut self, index: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.params[index].tensor)
    }

    /// Layout indices covered by `selector`.
    pub fn selector_indices(&self, selector: Selector) -> Result<Vec<usize>> {
        let all = 0..self.params.len();
        Ok(match selector {
            Selector::All => all.collect(),
            Selector::TrainableOnly => self.trainable_indices(),
            Selector::OutputEmbedding => all.filter(|&i| self.params[i].kind == ParamKind::OutputEmbedding).collect(),
            Selector::BlockAttention(k) => {
                if k >= self.config.depth {
                    return Err(Error::Selector(format!(
                        "block {k} does not exist in a model of depth {}",
                        self.config.depth
                    )));
                }
                all.filter(|&i| matches!(self.params[i].kind, ParamKind::Block { index, part } if index == k && part.is_attention()))
                    .collect()
            }
        })
    }

    pub fn select_params(&self, selector: Selector) -> Result<FlatVector> {
        let idx = self.selector_indices(selector)?;
        let mut values = Vec::with_capacity(idx.iter().map(|&i| self.params[i].tensor.numel()).sum());
        for i in idx {
            values.extend_from_slice(self.params[i].tensor.data());
        }
        Ok(FlatVector::new(values, selector.to_string()))
    }

    /// Flattens per-parameter tensors (for example gradients) in selector
    /// order.
    pub fn select_from(&self, selector: Selector, per_param: &[Option<Tensor>]) -> Result<FlatVector> {
        let mut values = Vec::new();
        for i in self.selector_indices(selector)? {
            match &per_param[i] {
                Some(t) => values.extend_from_slice(t.data()),
                None => values.extend(std::iter::repeat_n(0.0, self.params[i].tensor.numel())),
            }
        }
        Ok(FlatVector::new(values, selector.to_string()))
    }

    /// Overwrites the parameters covered by `selector`.
    pub fn load_selected(&mut self, selector: Selector, flat: &FlatVector) -> Result<()> {
        let idx = self.selector_indices(selector)?;
        let expected: usize = idx.iter().map(|&i| self.params[i].tensor.numel()).sum();
        if flat.len() != expected {
            return Err(Error::Store(format!(
                "selector {selector} needs {expected} values, snapshot has {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for i in idx {
            let t = self.param_mut(i);
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat.values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn block_index(&self, block: usize, part: BlockPart) -> usize {
        let p = BlockPart::ALL.iter().position(|&q| q == part).expect("part listed");
        2 + block * BlockPart::ALL.len() + p
    }

    /// Records the forward pass for `tokens` (length at most `context`).
    pub fn record(&self, tokens: &[usize], mode: GradMode) -> Result<Recording> {
        let cfg = &self.config;
        let n = tokens.len();
        if n == 0 || n > cfg.context {
            return Err(Error::Input(format!("sequence length {n} outside 1..={}", cfg.context)));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::Input(format!("token {bad} out of range for vocabulary {}", cfg.vocab_size)));
        }

        let selected = match mode {
            GradMode::Selected(sel) => self.selector_indices(sel)?,
            _ => Vec::new(),
        };
        let mut g = Graph::new();
        let leaves: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let rg = match mode {
                    GradMode::None => false,
                    GradMode::All => true,
                    GradMode::Trainable => self.is_trainable(p.kind),
                    GradMode::Selected(_) => selected.contains(&i),
                };
                g.shared_leaf(&p.tensor, rg)
            })
            .collect();
        let leaf = |kind_idx: usize| leaves[kind_idx];

        let tok = g.gather(leaf(0), tokens.to_vec())?;
        let pos = g.gather(leaf(1), (0..n).collect())?;
        let mut x = g.add(tok, pos)?;

        let dh = cfg.head_dim();
        let att_scale = 1.0 / (dh as f64).sqrt();
        for b in 0..cfg.depth {
            let p = |part| leaf(self.block_index(b, part));
            let h = g.layer_norm(x, p(BlockPart::Ln1Gain), p(BlockPart::Ln1Bias), LN_EPS)?;
            let q = affine(&mut g, h, p(BlockPart::Wq), p(BlockPart::Bq))?;
            let k = affine(&mut g, h, p(BlockPart::Wk), p(BlockPart::Bk))?;
            let v = affine(&mut g, h, p(BlockPart::Wv), p(BlockPart::Bv))?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let (lo, hi) = (head * dh, (head + 1) * dh);
                let qh = g.slice(q, lo, hi)?;
                let kh = g.slice(k, lo, hi)?;
                let vh = g.slice(v, lo, hi)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, att_scale)?;
                let weights = g.softmax(scores, true)?;
                heads.push(g.matmul(weights, vh)?);
            }
            let merged = if heads.len() == 1 { heads[0] } else { g.concat(&heads)? };
            let attn = affine(&mut g, merged, p(BlockPart::Wo), p(BlockPart::Bo))?;
            x = g.add(x, attn)?;

            let h = g.layer_norm(x, p(BlockPart::Ln2Gain), p(BlockPart::Ln2Bias), LN_EPS)?;
            let up = affine(&mut g, h, p(BlockPart::W1), p(BlockPart::B1))?;
            let act = g.gelu(up)?;
            let down = affine(&mut g, act, p(BlockPart::W2), p(BlockPart::B2))?;
            x = g.add(x, down)?;
        }
        let base = 2 + cfg.depth * BlockPart::ALL.len();
        let hidden = g.layer_norm(x, leaf(base), leaf(base + 1), LN_EPS)?;
        let out_t = g.transpose(leaf(base + 2))?;
        let logits = g.matmul(hidden, out_t)?;
        Ok(Recording {
            graph: g,
            logits,
            hidden,
            leaves,
        })
    }

    /// Logits `[n, vocab]` and final hidden states `[n, d]`.
    pub fn forward(&self, tokens: &[usize]) -> Result<(Tensor, Tensor)> {
        let r = self.record(tokens, GradMode::None)?;
        Ok((r.graph.value(r.logits).clone(), r.graph.value(r.hidden).clone()))
    }

    /// Records the mean masked next-token cross-entropy.
    pub fn lm_loss(&self, example: &LmExample, mode: GradMode) -> Result<LossRecording> {
        if example.targets.len() != example.inputs.len() || example.loss_mask.len() != example.inputs.len() {
            return Err(Error::Input("inputs, targets and loss mask must have equal length".into()));
        }
        if !example.loss_mask.iter().any(|&m| m) {
            return Err(Error::Contract("loss mask selects no position".into()));
        }
        let mut recording = self.record(&example.inputs, mode)?;
        // Unmasked targets may be PAD or anything else; clamp them into range
        // so the op's bounds check only ever sees masked positions.
        let targets = example
            .targets
            .iter()
            .zip(&example.loss_mask)
            .map(|(&t, &m)| if m { t } else { 0 })
            .collect();
        let loss = recording
            .graph
            .cross_entropy(recording.logits, targets, example.loss_mask.clone())?;
        let value = recording.graph.value(loss).data()[0];
        Ok(LossRecording {
            recording,
            loss,
            value,
        })
    }

    /// Loss value only, no gradient bookkeeping.
    pub fn loss_value(&self, example: &LmExample) -> Result<f64> {
        Ok(self.lm_loss(example, GradMode::None)?.value)
    }
}

fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}
