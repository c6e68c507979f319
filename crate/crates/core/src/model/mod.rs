//! The entropy-sequence classifier.
//!
//! Layer stack: scalar embedding (affine, layer norm, GELU) -> stacked BiLSTM ->
//! attention pooling -> fully-connected blocks (affine, batch norm, ReLU) ->
//! output affine. Dropout sits after the embedding, between BiLSTM layers, on the
//! pooled context and after each fully-connected block.

mod config;
mod io;

pub use config::{ComponentCounts, ModelConfig};
pub use io::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};
use crate::nn::activation::{gelu, gelu_grad, softmax};
use crate::nn::attention::AttentionCache;
use crate::nn::dropout::{apply_mask, dropout};
use crate::nn::gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
use crate::nn::loss::weighted_cross_entropy;
use crate::nn::lstm::BiLayerCache;
use crate::nn::norm::{BatchNormCache, NormCache};
use crate::nn::{
    Affine, AttentionPool, BatchNorm, BatchNormState, BiLstmLayer, LayerNorm, Matrix, Mode, PackedLayout, ParamStore,
    RngStream,
};

/// Sub-stream of the build seed used for weight initialization.
const INIT_STREAM: u64 = 0;
/// Sub-stream of the build seed used for dropout masks.
const DROPOUT_STREAM: u64 = 1;

/// A batch of entropy sequences, right-padded to the longest member.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    lengths: Vec<usize>,
    width: usize,
    padded: Vec<f64>,
}

impl Batch {
    pub fn from_sequences<S: AsRef<[f64]>>(seqs: &[S]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        let lengths: Vec<usize> = seqs.iter().map(|s| s.as_ref().len()).collect();
        if let Some(i) = lengths.iter().position(|&l| l == 0) {
            return Err(Error::validation(format!("batch row {i} is all padding")));
        }
        let width = *lengths.iter().max().unwrap();
        let mut padded = vec![0.0; seqs.len() * width];
        for (i, s) in seqs.iter().enumerate() {
            padded[i * width..i * width + lengths[i]].copy_from_slice(s.as_ref());
        }
        Ok(Self {
            lengths,
            width,
            padded,
        })
    }

    /// Builds a batch from a padded matrix and a mask marking real positions.
    /// Real positions must precede padding in every row.
    pub fn from_padded(values: &Matrix, mask: &[Vec<bool>]) -> Result<Self> {
        if mask.len() != values.rows {
            return Err(Error::dims("batch mask", &values.shape(), &[mask.len()]));
        }
        let mut seqs = Vec::with_capacity(values.rows);
        for (i, m) in mask.iter().enumerate() {
            if m.len() != values.cols {
                return Err(Error::dims("batch mask row", &values.shape(), &[m.len()]));
            }
            let len = m.iter().take_while(|&&b| b).count();
            if m[len..].iter().any(|&b| b) {
                return Err(Error::validation(format!(
                    "batch row {i}: real positions must precede padding"
                )));
            }
            seqs.push(values.row(i)[..len].to_vec());
        }
        let mut batch = Self::from_sequences(&seqs)?;
        batch.width = values.cols;
        batch.padded = vec![0.0; values.rows * values.cols];
        for (i, s) in seqs.iter().enumerate() {
            batch.padded[i * values.cols..i * values.cols + s.len()].copy_from_slice(s);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Padded width of the batch.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sequence(&self, i: usize) -> &[f64] {
        &self.padded[i * self.width..i * self.width + self.lengths[i]]
    }

    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.lengths
            .iter()
            .map(|&l| (0..self.width).map(|t| t < l).collect())
            .collect()
    }
}

/// Logits and attention weights for a batch, in batch order.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[batch x num_classes]`
    pub logits: Matrix,
    /// Attention over each sequence's real positions; padding implicitly has weight 0.
    pub attention: Vec<Vec<f64>>,
}

/// Class probabilities, decision and attention for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `[p_truth, p_hallucination]`
    pub probs: Vec<f64>,
    pub predicted_class: usize,
    pub attention: Vec<f64>,
}

impl Prediction {
    /// Softmax of the logits; ties go to the lower class index.
    pub fn from_logits(logits: &[f64], attention: Vec<f64>) -> Self {
        let probs = softmax(logits);
        let mut predicted_class = 0;
        for (c, &p) in probs.iter().enumerate() {
            if p > probs[predicted_class] {
                predicted_class = c;
            }
        }
        Self {
            probs,
            predicted_class,
            attention,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FcBlock {
    affine: Affine,
    norm: BatchNorm,
}

/// Saved activations of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layout: PackedLayout,
    x: Vec<f64>,
    norm: NormCache,
    norm_out: Vec<f64>,
    embed_mask: Option<Vec<f64>>,
    lstm: Vec<BiLayerCache>,
    between_masks: Vec<Option<Vec<f64>>>,
    top: Vec<f64>,
    attention: AttentionCache,
    context_mask: Option<Vec<f64>>,
    fc_inputs: Vec<Vec<f64>>,
    fc_norm: Vec<BatchNormCache>,
    fc_norm_out: Vec<Vec<f64>>,
    fc_masks: Vec<Option<Vec<f64>>>,
    head_input: Vec<f64>,
}

/// The full classifier: parameters, batch-norm running statistics and dropout stream.
#[derive(Debug, Clone)]
pub struct ShedModel {
    config: ModelConfig,
    params: ParamStore,
    embed: Affine,
    embed_norm: LayerNorm,
    lstm: Vec<BiLstmLayer>,
    attention: AttentionPool,
    fc: Vec<FcBlock>,
    bn_state: Vec<BatchNormState>,
    output: Affine,
    mode: Mode,
    rng: RngStream,
}

/// Initializes a model from `config`, drawing weights from `rng`'s seed.
pub fn build_model(config: &ModelConfig, rng: &RngStream) -> Result<ShedModel> {
    ShedModel::new(config.clone(), rng)
}

impl ShedModel {
    pub fn new(config: ModelConfig, rng: &RngStream) -> Result<Self> {
        config.validate()?;
        let mut init = rng.derive(INIT_STREAM);
        let mut params = ParamStore::new();
        let e = config.embed_dim;
        let h = config.lstm_hidden;
        let embed = Affine::new(&mut params, "embed", 1, e, &mut init)?;
        let embed_norm = LayerNorm::new(&mut params, "embed_norm", e)?;
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            let input = if l == 0 { e } else { 2 * h };
            lstm.push(BiLstmLayer::new(&mut params, &format!("lstm.l{l}"), input, h, &mut init)?);
        }
        let attention = AttentionPool::new(&mut params, "attn", 2 * h, config.attn_hidden, &mut init)?;
        let mut fc = Vec::with_capacity(config.fc_dims.len());
        let mut bn_state = Vec::with_capacity(config.fc_dims.len());
        let mut input = 2 * h;
        for (i, &d) in config.fc_dims.iter().enumerate() {
            fc.push(FcBlock {
                affine: Affine::new(&mut params, &format!("fc{i}"), input, d, &mut init)?,
                norm: BatchNorm::new(&mut params, &format!("fc{i}.bn"), d)?,
            });
            bn_state.push(BatchNormState::new(d));
            input = d;
        }
        let output = Affine::new(&mut params, "out", input, config.num_classes, &mut init)?;
        let model = Self {
            params,
            embed,
            embed_norm,
            lstm,
            attention,
            fc,
            bn_state,
            output,
            mode: Mode::Eval,
            rng: rng.derive(DROPOUT_STREAM),
            config,
        };
        let expected = model.config.component_counts()?;
        let actual = model.component_counts();
        if expected != actual {
            return Err(Error::validation(format!(
                "parameter counts {actual:?} disagree with closed form {expected:?}"
            )));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn batch_norm_states(&self) -> &[BatchNormState] {
        &self.bn_state
    }

    pub(crate) fn batch_norm_states_mut(&mut self) -> &mut [BatchNormState] {
        &mut self.bn_state
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Replaces the dropout stream.
    pub fn reseed_dropout(&mut self, rng: &RngStream) {
        self.rng = rng.derive(DROPOUT_STREAM);
    }

    /// Parameter counts measured from the allocated tensors.
    pub fn component_counts(&self) -> ComponentCounts {
        let mut counts = ComponentCounts::default();
        for t in self.params.iter() {
            let name = t.name();
            let slot = if name.starts_with("embed") {
                &mut counts.embedding
            } else if name.starts_with("lstm.") {
                &mut counts.bilstm
            } else if name.starts_with("attn.") {
                &mut counts.attention
            } else if name.starts_with("fc") {
                &mut counts.fully_connected
            } else {
                &mut counts.output
            };
            *slot += t.len();
        }
        counts
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Scoring-network parameters of the attention pool.
    pub fn attention_layer(&self) -> &AttentionPool {
        &self.attention
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if let Some((i, &l)) = batch
            .lengths()
            .iter()
            .enumerate()
            .find(|(_, &l)| l > self.config.max_seq_len)
        {
            return Err(Error::validation(format!(
                "sequence {i} has length {l}, longer than the model's max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        Ok(())
    }

    /// Eval-mode forward pass. Pure: no state is touched.
    pub fn forward_eval(&self, batch: &Batch) -> Result<ForwardOutput> {
        let mut bn = self.bn_state.clone();
        let mut rng = self.rng.clone();
        let (out, _) = self.forward_impl(batch, Mode::Eval, &mut rng, &mut bn)?;
        Ok(out)
    }

    /// Forward pass in the model's current mode. In train mode the returned cache
    /// feeds [`ShedModel::backward`], dropout masks come from the model's stream and
    /// batch-norm running statistics are updated.
    pub fn forward(&mut self, batch: &Batch) -> Result<(ForwardOutput, ForwardCache)> {
        let mode = self.mode;
        let mut rng = self.rng.clone();
        let mut bn = std::mem::take(&mut self.bn_state);
        let result = self.forward_impl(batch, mode, &mut rng, &mut bn);
        self.bn_state = bn;
        let out = result?;
        self.rng = rng;
        Ok(out)
    }

    fn forward_impl(
        &self,
        batch: &Batch,
        mode: Mode,
        rng: &mut RngStream,
        bn_state: &mut [BatchNormState],
    ) -> Result<(ForwardOutput, ForwardCache)> {
        self.check_batch(batch)?;
        let rate = self.config.dropout;
        let seqs: Vec<&[f64]> = (0..batch.len()).map(|i| batch.sequence(i)).collect();
        let layout = PackedLayout::new(batch.lengths())?;
        let total = layout.total();
        let n = layout.num_seqs();

        let x = layout.pack(&seqs);
        let pre = self.embed.forward(&self.params, &x, total);
        let (norm_out, norm) = self.embed_norm.forward(&self.params, &pre, total);
        let activated: Vec<f64> = norm_out.iter().map(|&v| gelu(v)).collect();
        let (mut hidden, embed_mask) = dropout(&activated, rate, mode, rng)?;

        let mut lstm_caches = Vec::with_capacity(self.lstm.len());
        let mut between_masks = Vec::new();
        for (l, layer) in self.lstm.iter().enumerate() {
            if l > 0 {
                let (dropped, mask) = dropout(&hidden, rate, mode, rng)?;
                between_masks.push(mask);
                hidden = dropped;
            }
            let (out, cache) = layer.forward(&self.params, &layout, &hidden);
            hidden = out;
            lstm_caches.push(cache);
        }
        let top = hidden;

        let (context, attention) = self.attention.forward(&self.params, &layout, &top);
        let (mut h, context_mask) = dropout(&context, rate, mode, rng)?;

        let mut fc_inputs = Vec::with_capacity(self.fc.len());
        let mut fc_norm = Vec::new();
        let mut fc_norm_out = Vec::with_capacity(self.fc.len());
        let mut fc_masks = Vec::with_capacity(self.fc.len());
        for (block, state) in self.fc.iter().zip(bn_state.iter_mut()) {
            let z = block.affine.forward(&self.params, &h, n);
            let (normed, cache) = block.norm.forward(&self.params, state, &z, n, mode)?;
            if let Some(c) = cache {
                fc_norm.push(c);
            }
            let relu: Vec<f64> = normed.iter().map(|&v| v.max(0.0)).collect();
            let (dropped, mask) = dropout(&relu, rate, mode, rng)?;
            fc_inputs.push(std::mem::replace(&mut h, dropped));
            fc_norm_out.push(normed);
            fc_masks.push(mask);
        }
        let logits_ranked = self.output.forward(&self.params, &h, n);

        let c = self.config.num_classes;
        let mut logits = Matrix::zeros(n, c);
        let mut attn_out = vec![Vec::new(); n];
        for r in 0..n {
            let orig = layout.original_index(r);
            logits.data[orig * c..(orig + 1) * c].copy_from_slice(&logits_ranked[r * c..(r + 1) * c]);
            attn_out[orig] = (0..layout.len_of(r))
                .map(|t| attention.weights[layout.row(t, r)])
                .collect();
        }
        let cache = ForwardCache {
            layout,
            x,
            norm,
            norm_out,
            embed_mask,
            lstm: lstm_caches,
            between_masks,
            top,
            attention,
            context_mask,
            fc_inputs,
            fc_norm,
            fc_norm_out,
            fc_masks,
            head_input: h,
        };
        Ok((
            ForwardOutput {
                logits,
                attention: attn_out,
            },
            cache,
        ))
    }

    /// Accumulates parameter gradients for upstream logit gradients `dlogits`
    /// (`[batch x num_classes]`, batch order). Requires a train-mode cache.
    pub fn backward(&mut self, cache: &ForwardCache, dlogits: &Matrix) -> Result<()> {
        let layout = &cache.layout;
        let n = layout.num_seqs();
        let c = self.config.num_classes;
        if dlogits.rows != n || dlogits.cols != c {
            return Err(Error::dims("backward", &dlogits.shape(), &[n, c]));
        }
        if cache.fc_norm.len() != self.fc.len() {
            return Err(Error::validation("backward requires a train-mode forward pass"));
        }
        let mut d = vec![0.0; n * c];
        for r in 0..n {
            let orig = layout.original_index(r);
            d[r * c..(r + 1) * c].copy_from_slice(dlogits.row(orig));
        }
        let params = &mut self.params;
        let mut dh = self
            .output
            .backward(params, &cache.head_input, n, &d, true)
            .unwrap();
        for (i, block) in self.fc.iter().enumerate().rev() {
            apply_mask(&mut dh, cache.fc_masks[i].as_ref());
            dh.iter_mut()
                .zip(&cache.fc_norm_out[i])
                .for_each(|(g, &z)| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            let dz = block.norm.backward(params, &cache.fc_norm[i], n, &dh);
            dh = block.affine.backward(params, &cache.fc_inputs[i], n, &dz, true).unwrap();
        }
        apply_mask(&mut dh, cache.context_mask.as_ref());
        let mut dtop = self
            .attention
            .backward(params, layout, &cache.attention, &cache.top, &dh);
        for (l, layer) in self.lstm.iter().enumerate().rev() {
            let mut dx = layer.backward(params, layout, &cache.lstm[l], &dtop);
            if l > 0 {
                apply_mask(&mut dx, cache.between_masks[l - 1].as_ref());
            }
            dtop = dx;
        }
        apply_mask(&mut dtop, cache.embed_mask.as_ref());
        dtop.iter_mut()
            .zip(&cache.norm_out)
            .for_each(|(g, &v)| *g *= gelu_grad(v));
        let total = layout.total();
        let dpre = self.embed_norm.backward(params, &cache.norm, total, &dtop);
        self.embed.backward(params, &cache.x, total, &dpre, false);
        Ok(())
    }

    /// Zeroes gradients, runs a forward pass in the current mode and backpropagates
    /// the class-weighted cross-entropy. Returns the loss.
    pub fn loss_and_grad(&mut self, batch: &Batch, labels: &[usize], class_weights: &[f64]) -> Result<f64> {
        self.params.zero_grad();
        let (out, cache) = self.forward(batch)?;
        let (loss, dlogits) = weighted_cross_entropy(&out.logits, labels, class_weights)?;
        self.backward(&cache, &dlogits)?;
        Ok(loss)
    }

    /// Eval-mode predictions for every sequence in the batch.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<Prediction>> {
        let out = self.forward_eval(batch)?;
        Ok(out
            .attention
            .into_iter()
            .enumerate()
            .map(|(i, a)| Prediction::from_logits(out.logits.row(i), a))
            .collect())
    }

    pub fn predict(&self, seq: &[f64]) -> Result<Prediction> {
        let batch = Batch::from_sequences(&[seq])?;
        Ok(self.predict_batch(&batch)?.remove(0))
    }

    /// Eval-mode predictions for many sequences, processed in chunks of `chunk`.
    pub fn predict_all<S: AsRef<[f64]>>(&self, seqs: &[S], chunk: usize) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(seqs.len());
        for part in seqs.chunks(chunk.max(1)) {
            out.extend(self.predict_batch(&Batch::from_sequences(part)?)?);
        }
        Ok(out)
    }
}

/// Finite-difference check of the full training loss.
///
/// Checks `per_tensor` randomly chosen coordinates of every parameter tensor
/// (all coordinates when the tensor is smaller). Dropout masks are held fixed by
/// replaying the same dropout stream for every evaluation.
pub fn grad_check_model(
    model: &ShedModel,
    batch: &Batch,
    labels: &[usize],
    class_weights: &[f64],
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut analytic_model = model.clone();
    analytic_model.set_mode(Mode::Train);
    analytic_model.loss_and_grad(batch, labels, class_weights)?;
    let analytic = analytic_model.params.flat_grads();
    let point = model.params.flat_values();

    let mut rng = RngStream::new(seed);
    let mut coords = Vec::new();
    let mut offset = 0;
    for t in model.params.iter() {
        let n = t.len();
        if n <= per_tensor {
            coords.extend(offset..offset + n);
        } else {
            for _ in 0..per_tensor {
                coords.push(offset + rng.int_inclusive(0, n - 1));
            }
        }
        offset += n;
    }

    let mut probe = model.clone();
    probe.set_mode(Mode::Train);
    let mut failure = None;
    let report = grad_check(
        |theta| {
            let mut m = probe.clone();
            m.params.set_flat_values(theta).expect("same parameter layout");
            match m.forward(batch).and_then(|(out, _)| {
                weighted_cross_entropy(&out.logits, labels, class_weights).map(|(l, _)| l)
            }) {
                Ok(l) => l,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &point,
        &analytic,
        Some(&coords),
        DEFAULT_STEP,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    report
}
