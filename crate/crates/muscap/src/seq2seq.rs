//! Two-layer GRU encoder/decoder with embedding-regression output.
//!
//! The encoder consumes the track-feature sequence left to right from zero
//! initial states; its final hidden states (both layers) form the context
//! and initialize the corresponding decoder layers. The decoder is trained
//! with teacher forcing under mean 1−cosine loss and decoded greedily by
//! snapping each prediction to its nearest vocabulary embedding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{EmbeddingTable, EOS_TOKEN};
use crate::error::{Error, Result};
use crate::features::PlaylistExample;
use crate::nn::adam::{AdamHyper, AdamState};
use crate::nn::dense::DenseParams;
use crate::nn::gru::{GruCache, GruCellParams};
use crate::nn::loss::cosine_proximity_loss;
use crate::nn::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub enc1: GruCellParams,
    pub enc2: GruCellParams,
    pub dec1: GruCellParams,
    pub dec2: GruCellParams,
    pub proj: DenseParams,
}

/// Final hidden states of both encoder layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

pub struct EncodeCache {
    caches1: Vec<GruCache>,
    caches2: Vec<GruCache>,
}

/// (loss, per-step predicted embeddings, gradient w.r.t. each track input).
pub type ForwardBackwardOutput = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

pub struct DecodeTrainOutput {
    pub loss: f64,
    pub predictions: Vec<Vec<f64>>,
    /// Gradient w.r.t. the context that initialized the decoder.
    pub d_context: Context,
}

impl Seq2SeqModel {
    pub fn zeros(input_dim: usize, d_w: usize, hidden: usize) -> Self {
        Seq2SeqModel {
            enc1: GruCellParams::zeros(hidden, input_dim),
            enc2: GruCellParams::zeros(hidden, hidden),
            dec1: GruCellParams::zeros(hidden, d_w),
            dec2: GruCellParams::zeros(hidden, hidden),
            proj: DenseParams::zeros(d_w, hidden),
        }
    }

    pub fn init(input_dim: usize, d_w: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Seq2SeqModel {
            enc1: GruCellParams::init(hidden, input_dim, rng),
            enc2: GruCellParams::init(hidden, hidden, rng),
            dec1: GruCellParams::init(hidden, d_w, rng),
            dec2: GruCellParams::init(hidden, hidden, rng),
            proj: DenseParams::init(d_w, hidden, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.enc1.hidden_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.enc1.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.proj.out_dim()
    }

    pub fn encode(&self, tracks: &[Vec<f64>]) -> Result<(Context, EncodeCache)> {
        if tracks.is_empty() {
            return Err(Error::Dim("encode: empty track sequence".into()));
        }
        let h = self.hidden_dim();
        let mut h1 = vec![0.0; h];
        let mut h2 = vec![0.0; h];
        let mut caches1 = Vec::with_capacity(tracks.len());
        let mut caches2 = Vec::with_capacity(tracks.len());
        for x in tracks {
            let (nh1, c1) = self.enc1.forward(x, &h1)?;
            let (nh2, c2) = self.enc2.forward(&nh1, &h2)?;
            h1 = nh1;
            h2 = nh2;
            caches1.push(c1);
            caches2.push(c2);
        }
        Ok((Context { h1, h2 }, EncodeCache { caches1, caches2 }))
    }

    /// Encode the first `len` entries of a padded batch row; trailing padding
    /// beyond `len` never influences the context.
    pub fn encode_padded(&self, padded: &[Vec<f64>], len: usize) -> Result<(Context, EncodeCache)> {
        if len == 0 || len > padded.len() {
            return Err(Error::Dim(format!(
                "encode_padded: declared length {len} out of range 1..={}",
                padded.len()
            )));
        }
        self.encode(&padded[..len])
    }

    /// Backpropagates a context gradient through the encoder unroll.
    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// w.r.t. each input track feature (needed by the fully-training path).
    pub fn encode_backward(
        &self,
        cache: &EncodeCache,
        d_context: &Context,
        grads: &mut Seq2SeqModel,
    ) -> Result<Vec<Vec<f64>>> {
        let n = cache.caches1.len();
        let mut dh1 = d_context.h1.clone();
        let mut dh2 = d_context.h2.clone();
        let mut d_inputs = vec![Vec::new(); n];
        for t in (0..n).rev() {
            let (dx2, dh2_prev) = self
                .enc2
                .backward(&dh2, &cache.caches2[t], &mut grads.enc2)?;
            for (a, b) in dh1.iter_mut().zip(&dx2) {
                *a += b;
            }
            let (dx1, dh1_prev) = self
                .enc1
                .backward(&dh1, &cache.caches1[t], &mut grads.enc1)?;
            d_inputs[t] = dx1;
            dh1 = dh1_prev;
            dh2 = dh2_prev;
        }
        Ok(d_inputs)
    }

    /// Teacher-forced decode. Input at step 0 is the zero vector, at step m
    /// the ground-truth embedding m−1. Loss is the mean over steps of the
    /// 1−cosine loss. Parameter gradients accumulate into `grads`.
    pub fn decode_train(
        &self,
        context: &Context,
        targets: &[Vec<f64>],
        grads: &mut Seq2SeqModel,
    ) -> Result<DecodeTrainOutput> {
        let m_steps = targets.len();
        if m_steps == 0 {
            return Err(Error::Dim("decode_train: empty target sequence".into()));
        }
        let d_w = self.output_dim();
        let mut h1 = context.h1.clone();
        let mut h2 = context.h2.clone();
        let mut caches1 = Vec::with_capacity(m_steps);
        let mut caches2 = Vec::with_capacity(m_steps);
        let mut h2_states = Vec::with_capacity(m_steps);
        let mut predictions = Vec::with_capacity(m_steps);
        let mut dpreds = Vec::with_capacity(m_steps);
        let mut loss = 0.0;

        let zero = vec![0.0; d_w];
        for m in 0..m_steps {
            let x = if m == 0 { &zero } else { &targets[m - 1] };
            let (nh1, c1) = self.dec1.forward(x, &h1)?;
            let (nh2, c2) = self.dec2.forward(&nh1, &h2)?;
            let pred = self.proj.forward(&nh2)?;
            let (l, dpred) = cosine_proximity_loss(&pred, &targets[m])?;
            loss += l;
            h1 = nh1;
            h2 = nh2;
            h2_states.push(h2.clone());
            caches1.push(c1);
            caches2.push(c2);
            predictions.push(pred);
            dpreds.push(dpred);
        }
        let scale = 1.0 / m_steps as f64;
        loss *= scale;

        let h = self.hidden_dim();
        let mut dh1_next = vec![0.0; h];
        let mut dh2_next = vec![0.0; h];
        for m in (0..m_steps).rev() {
            let dpred: Vec<f64> = dpreds[m].iter().map(|g| g * scale).collect();
            let mut dh2 = self.proj.backward(&h2_states[m], &dpred, &mut grads.proj)?;
            for (a, b) in dh2.iter_mut().zip(&dh2_next) {
                *a += b;
            }
            let (dx2, dh2_prev) = self.dec2.backward(&dh2, &caches2[m], &mut grads.dec2)?;
            let mut dh1 = dx2;
            for (a, b) in dh1.iter_mut().zip(&dh1_next) {
                *a += b;
            }
            let (_dx, dh1_prev) = self.dec1.backward(&dh1, &caches1[m], &mut grads.dec1)?;
            dh1_next = dh1_prev;
            dh2_next = dh2_prev;
        }

        Ok(DecodeTrainOutput {
            loss,
            predictions,
            d_context: Context {
                h1: dh1_next,
                h2: dh2_next,
            },
        })
    }

    /// Full teacher-forced pass: encode, decode, backprop into every model
    /// parameter. Returns (loss, predictions, gradient w.r.t. each track).
    pub fn forward_backward(
        &self,
        tracks: &[Vec<f64>],
        targets: &[Vec<f64>],
        grads: &mut Seq2SeqModel,
    ) -> Result<ForwardBackwardOutput> {
        let (context, enc_cache) = self.encode(tracks)?;
        let out = self.decode_train(&context, targets, grads)?;
        let d_tracks = self.encode_backward(&enc_cache, &out.d_context, grads)?;
        Ok((out.loss, out.predictions, d_tracks))
    }

    /// Teacher-forced loss without gradient accumulation.
    pub fn teacher_forced_loss(&self, tracks: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        let (context, _) = self.encode(tracks)?;
        let mut h1 = context.h1;
        let mut h2 = context.h2;
        let zero = vec![0.0; self.output_dim()];
        let mut loss = 0.0;
        for m in 0..targets.len() {
            let x = if m == 0 { &zero } else { &targets[m - 1] };
            let (nh1, _) = self.dec1.forward(x, &h1)?;
            let (nh2, _) = self.dec2.forward(&nh1, &h2)?;
            let pred = self.proj.forward(&nh2)?;
            let (l, _) = cosine_proximity_loss(&pred, &targets[m])?;
            loss += l;
            h1 = nh1;
            h2 = nh2;
        }
        Ok(loss / targets.len() as f64)
    }

    /// Greedy decode: each prediction is snapped to its nearest vocabulary
    /// embedding, which is also the next decoder input. Stops at EOS or
    /// max_len; EOS is excluded from the returned sequence.
    pub fn decode_greedy(
        &self,
        context: &Context,
        table: &EmbeddingTable,
        max_len: usize,
    ) -> Result<Vec<String>> {
        let mut h1 = context.h1.clone();
        let mut h2 = context.h2.clone();
        let mut x = vec![0.0; self.output_dim()];
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (nh1, _) = self.dec1.forward(&x, &h1)?;
            let (nh2, _) = self.dec2.forward(&nh1, &h2)?;
            let pred = self.proj.forward(&nh2)?;
            let nearest = table.nearest_word(&pred)?;
            h1 = nh1;
            h2 = nh2;
            if nearest.token == EOS_TOKEN {
                break;
            }
            x = table
                .lookup(&nearest.token)
                .expect("nearest_word returns vocabulary tokens")
                .to_vec();
            out.push(nearest.token);
        }
        Ok(out)
    }

    pub fn caption(
        &self,
        tracks: &[Vec<f64>],
        table: &EmbeddingTable,
        max_len: usize,
    ) -> Result<Vec<String>> {
        let (context, _) = self.encode(tracks)?;
        self.decode_greedy(&context, table, max_len)
    }
}

impl ParamSet for Seq2SeqModel {
    fn param_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.enc1.named("enc1");
        out.extend(self.enc2.named("enc2"));
        out.extend(self.dec1.named("dec1"));
        out.extend(self.dec2.named("dec2"));
        out.extend(self.proj.named("proj"));
        out
    }

    fn param_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.enc1.named_mut("enc1");
        out.extend(self.enc2.named_mut("enc2"));
        out.extend(self.dec1.named_mut("dec1"));
        out.extend(self.dec2.named_mut("dec2"));
        out.extend(self.proj.named_mut("proj"));
        out
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub epochs: usize,
    /// None means no early stopping.
    pub patience: Option<usize>,
    pub seed: u64,
    pub adam: AdamHyper,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

pub(crate) fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

fn apply_adam(model: &mut Seq2SeqModel, grads: &Seq2SeqModel, state: &mut AdamState) -> Result<()> {
    let grad_refs: Vec<&Tensor> = grads.param_tensors().into_iter().map(|(_, t)| t).collect();
    let mut param_refs: Vec<&mut Tensor> = model
        .param_tensors_mut()
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    state.step(&mut param_refs, &grad_refs)
}

fn mean_val_loss(model: &Seq2SeqModel, set: &[PlaylistExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in set {
        let tracks: Vec<Vec<f64>> = ex.tracks.iter().map(|t| t.combined.clone()).collect();
        total += model.teacher_forced_loss(&tracks, &ex.target_embeddings)?;
    }
    Ok(total / set.len() as f64)
}

/// Per-example ADAM training with seeded shuffling and early stopping on
/// validation loss. The model is left at the best-validation parameters.
pub fn fit(
    model: &mut Seq2SeqModel,
    train: &[PlaylistExample],
    validation: &[PlaylistExample],
    config: &FitConfig,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Data("fit: empty training set".into()));
    }
    let shapes: Vec<&Tensor> = model.param_tensors().into_iter().map(|(_, t)| t).collect();
    let mut adam = AdamState::new(&shapes, config.adam);
    drop(shapes);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (input_dim, d_w, h) = (model.input_dim(), model.output_dim(), model.hidden_dim());

    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best_params = model.clone();
    let mut epochs_without_improvement = 0usize;

    for epoch in 0..config.epochs {
        let order = shuffled_indices(train.len(), &mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let ex = &train[i];
            let tracks: Vec<Vec<f64>> = ex.tracks.iter().map(|t| t.combined.clone()).collect();
            let mut grads = Seq2SeqModel::zeros(input_dim, d_w, h);
            let (loss, _, _) =
                model.forward_backward(&tracks, &ex.target_embeddings, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            epoch_loss += loss;
            apply_adam(model, &grads, &mut adam)?;
        }
        report.train_loss.push(epoch_loss / train.len() as f64);

        let monitored = if validation.is_empty() {
            *report.train_loss.last().unwrap()
        } else {
            mean_val_loss(model, validation)?
        };
        report.val_loss.push(monitored);

        if monitored < report.best_val_loss {
            report.best_val_loss = monitored;
            report.best_epoch = epoch;
            best_params = model.clone();
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if let Some(p) = config.patience {
                if epochs_without_improvement > p {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }

    *model = best_params;
    Ok(report)
}
