//! Fully-training variant: a trainable convolutional audio summarizer over
//! spectrograms, a GRU text summarizer producing a sentence vector per
//! track, and an optional auxiliary label head. Everything is optimized
//! jointly with the seq2seq captioner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::adam::AdamState;
use crate::nn::conv::{
    conv2d_backward, conv2d_forward, global_avg_pool_backward, global_avg_pool_forward,
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, ConvLayerParams,
};
use crate::nn::dense::DenseParams;
use crate::nn::gru::{GruCache, GruCellParams};
use crate::nn::loss::binary_cross_entropy;
use crate::nn::{sigmoid, ParamSet};
use crate::seq2seq::{shuffled_indices, FitConfig, Seq2SeqModel, TrainReport};
use crate::tensor::Tensor;

pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 16;

/// Two conv+relu+maxpool stages, global average pool, dense to D_a.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSummarizerParams {
    pub conv1: ConvLayerParams,
    pub conv2: ConvLayerParams,
    pub dense: DenseParams,
}

pub struct AudioCache {
    input: Tensor,
    a1: Tensor,
    pool1: Tensor,
    argmax1: Vec<usize>,
    a2: Tensor,
    pool2: Tensor,
    argmax2: Vec<usize>,
    gap: Vec<f64>,
}

impl AudioSummarizerParams {
    pub fn zeros(d_a: usize) -> Self {
        AudioSummarizerParams {
            conv1: ConvLayerParams::zeros(CONV1_CHANNELS, 1),
            conv2: ConvLayerParams::zeros(CONV2_CHANNELS, CONV1_CHANNELS),
            dense: DenseParams::zeros(d_a, CONV2_CHANNELS),
        }
    }

    pub fn init(d_a: usize, rng: &mut ChaCha8Rng) -> Self {
        AudioSummarizerParams {
            conv1: ConvLayerParams::init(CONV1_CHANNELS, 1, rng),
            conv2: ConvLayerParams::init(CONV2_CHANNELS, CONV1_CHANNELS, rng),
            dense: DenseParams::init(d_a, CONV2_CHANNELS, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.dense.out_dim()
    }

    /// spectrogram: [bands, frames] real matrix, finite, large enough for
    /// both conv+pool stages.
    pub fn forward(&self, spectrogram: &Tensor) -> Result<(Vec<f64>, AudioCache)> {
        if spectrogram.shape.len() != 2 {
            return Err(Error::Dim(
                "audio_summarize: spectrogram must be rank 2".into(),
            ));
        }
        spectrogram.check_finite("spectrogram")?;
        let input = Tensor {
            shape: vec![1, spectrogram.shape[0], spectrogram.shape[1]],
            data: spectrogram.data.clone(),
        };
        let a1 = conv2d_forward(&self.conv1, &input)
            .map_err(|e| Error::Dim(format!("audio_summarize: spectrogram too small ({e})")))?;
        let r1 = relu_forward(&a1);
        let (pool1, argmax1) = maxpool2_forward(&r1)
            .map_err(|e| Error::Dim(format!("audio_summarize: spectrogram too small ({e})")))?;
        let a2 = conv2d_forward(&self.conv2, &pool1)
            .map_err(|e| Error::Dim(format!("audio_summarize: spectrogram too small ({e})")))?;
        let r2 = relu_forward(&a2);
        let (pool2, argmax2) = maxpool2_forward(&r2)
            .map_err(|e| Error::Dim(format!("audio_summarize: spectrogram too small ({e})")))?;
        let gap = global_avg_pool_forward(&pool2);
        let out = self.dense.forward(&gap)?;
        Ok((
            out,
            AudioCache {
                input,
                a1,
                pool1,
                argmax1,
                a2,
                pool2,
                argmax2,
                gap,
            },
        ))
    }

    pub fn backward(
        &self,
        d_out: &[f64],
        cache: &AudioCache,
        grads: &mut AudioSummarizerParams,
    ) -> Result<()> {
        let d_gap = self.dense.backward(&cache.gap, d_out, &mut grads.dense)?;
        let d_pool2 = global_avg_pool_backward(&cache.pool2.shape, &d_gap);
        let r2 = relu_forward(&cache.a2);
        let d_r2 = maxpool2_backward(&r2.shape, &d_pool2, &cache.argmax2);
        let d_a2 = relu_backward(&cache.a2, &d_r2);
        let d_pool1 = conv2d_backward(&self.conv2, &cache.pool1, &d_a2, &mut grads.conv2)?;
        let r1 = relu_forward(&cache.a1);
        let d_r1 = maxpool2_backward(&r1.shape, &d_pool1, &cache.argmax1);
        let d_a1 = relu_backward(&cache.a1, &d_r1);
        let _ = conv2d_backward(&self.conv1, &cache.input, &d_a1, &mut grads.conv1)?;
        Ok(())
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.conv1.kernels"), &self.conv1.kernels),
            (format!("{prefix}.conv1.bias"), &self.conv1.bias),
            (format!("{prefix}.conv2.kernels"), &self.conv2.kernels),
            (format!("{prefix}.conv2.bias"), &self.conv2.bias),
            (format!("{prefix}.dense.w"), &self.dense.w),
            (format!("{prefix}.dense.b"), &self.dense.b),
        ]
    }

    fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.conv1.kernels"), &mut self.conv1.kernels),
            (format!("{prefix}.conv1.bias"), &mut self.conv1.bias),
            (format!("{prefix}.conv2.kernels"), &mut self.conv2.kernels),
            (format!("{prefix}.conv2.bias"), &mut self.conv2.bias),
            (format!("{prefix}.dense.w"), &mut self.dense.w),
            (format!("{prefix}.dense.b"), &mut self.dense.b),
        ]
    }
}

/// Single-layer GRU whose final hidden state is the sentence vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TextSummarizerParams {
    pub gru: GruCellParams,
}

impl TextSummarizerParams {
    pub fn zeros(d_w: usize, d_s: usize) -> Self {
        TextSummarizerParams {
            gru: GruCellParams::zeros(d_s, d_w),
        }
    }

    pub fn init(d_w: usize, d_s: usize, rng: &mut ChaCha8Rng) -> Self {
        TextSummarizerParams {
            gru: GruCellParams::init(d_s, d_w, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn forward(&self, word_embeddings: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<GruCache>)> {
        if word_embeddings.is_empty() {
            return Err(Error::Dim("text_summarize: empty token sequence".into()));
        }
        let mut h = vec![0.0; self.gru.hidden_dim()];
        let mut caches = Vec::with_capacity(word_embeddings.len());
        for x in word_embeddings {
            let (nh, c) = self.gru.forward(x, &h)?;
            h = nh;
            caches.push(c);
        }
        Ok((h, caches))
    }

    pub fn backward(
        &self,
        d_sentence: &[f64],
        caches: &[GruCache],
        grads: &mut TextSummarizerParams,
    ) -> Result<()> {
        let mut dh = d_sentence.to_vec();
        for c in caches.iter().rev() {
            let (_dx, dh_prev) = self.gru.backward(&dh, c, &mut grads.gru)?;
            dh = dh_prev;
        }
        Ok(())
    }
}

/// Dense projection of the per-track combined feature to label logits,
/// squashed to (0,1) elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelHeadParams {
    pub dense: DenseParams,
}

impl LabelHeadParams {
    pub fn zeros(l: usize, d_track: usize) -> Self {
        LabelHeadParams {
            dense: DenseParams::zeros(l, d_track),
        }
    }

    pub fn init(l: usize, d_track: usize, rng: &mut ChaCha8Rng) -> Self {
        LabelHeadParams {
            dense: DenseParams::init(l, d_track, rng),
        }
    }

    pub fn forward(&self, feature: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .dense
            .forward(feature)?
            .into_iter()
            .map(sigmoid)
            .collect())
    }

    /// d_out is the gradient w.r.t. the squashed outputs; returns the
    /// gradient w.r.t. the input feature.
    pub fn backward(
        &self,
        feature: &[f64],
        out: &[f64],
        d_out: &[f64],
        grads: &mut LabelHeadParams,
    ) -> Result<Vec<f64>> {
        let d_logits: Vec<f64> = d_out
            .iter()
            .zip(out)
            .map(|(d, o)| d * o * (1.0 - o))
            .collect();
        self.dense.backward(feature, &d_logits, &mut grads.dense)
    }
}

/// total = caption_loss + λ·BCE(out, y). Returns the total and the λ-scaled
/// gradient w.r.t. the label outputs.
pub fn multitask_loss(
    caption_loss: f64,
    label_out: &[f64],
    labels: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    if lambda < 0.0 {
        return Err(Error::Config("lambda must be >= 0".into()));
    }
    let (bce, mut d_out) = binary_cross_entropy(label_out, labels)?;
    d_out.iter_mut().for_each(|d| *d *= lambda);
    Ok((caption_loss + lambda * bce, d_out))
}

/// All trainable parameters of the fully-training variant.
#[derive(Debug, Clone, PartialEq)]
pub struct FullModel {
    pub seq2seq: Seq2SeqModel,
    pub audio: AudioSummarizerParams,
    pub text: TextSummarizerParams,
    pub label: LabelHeadParams,
}

impl FullModel {
    pub fn zeros(d_a: usize, d_w: usize, d_s: usize, hidden: usize, l: usize) -> Self {
        FullModel {
            seq2seq: Seq2SeqModel::zeros(d_a + d_s, d_w, hidden),
            audio: AudioSummarizerParams::zeros(d_a),
            text: TextSummarizerParams::zeros(d_w, d_s),
            label: LabelHeadParams::zeros(l, d_a + d_s),
        }
    }

    pub fn init(
        d_a: usize,
        d_w: usize,
        d_s: usize,
        hidden: usize,
        l: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        FullModel {
            seq2seq: Seq2SeqModel::init(d_a + d_s, d_w, hidden, rng),
            audio: AudioSummarizerParams::init(d_a, rng),
            text: TextSummarizerParams::init(d_w, d_s, rng),
            label: LabelHeadParams::init(l, d_a + d_s, rng),
        }
    }

    pub fn d_a(&self) -> usize {
        self.audio.output_dim()
    }

    pub fn d_s(&self) -> usize {
        self.text.output_dim()
    }

    /// Per-track combined feature: [audio summary ; sentence vector].
    pub fn track_feature(&self, track: &FullTrack) -> Result<Vec<f64>> {
        let (audio_vec, _) = self.audio.forward(&track.spectrogram)?;
        let (sentence, _) = self.text.forward(&track.token_embeddings)?;
        let mut combined = audio_vec;
        combined.extend(sentence);
        Ok(combined)
    }

    /// Caption loss plus λ-weighted label loss, without gradients.
    pub fn total_loss(&self, example: &FullExample, lambda: f64) -> Result<f64> {
        let tracks: Vec<Vec<f64>> = example
            .tracks
            .iter()
            .map(|t| self.track_feature(t))
            .collect::<Result<_>>()?;
        let caption = self
            .seq2seq
            .teacher_forced_loss(&tracks, &example.target_embeddings)?;
        let label_term = self.label_loss(&tracks, example)?;
        Ok(caption + lambda * label_term)
    }

    fn label_loss(&self, features: &[Vec<f64>], example: &FullExample) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (f, t) in features.iter().zip(&example.tracks) {
            if let Some(y) = &t.labels {
                let out = self.label.forward(f)?;
                let (bce, _) = binary_cross_entropy(&out, y)?;
                total += bce;
                count += 1;
            }
        }
        Ok(if count == 0 {
            0.0
        } else {
            total / count as f64
        })
    }

    /// One joint forward/backward pass. Gradients for every parameter group
    /// accumulate into `grads`; returns the total loss.
    pub fn forward_backward(
        &self,
        example: &FullExample,
        lambda: f64,
        include_label_loss: bool,
        grads: &mut FullModel,
    ) -> Result<f64> {
        let n = example.tracks.len();
        let mut features = Vec::with_capacity(n);
        let mut audio_caches = Vec::with_capacity(n);
        let mut text_caches = Vec::with_capacity(n);
        for t in &example.tracks {
            let (audio_vec, ac) = self.audio.forward(&t.spectrogram)?;
            let (sentence, tc) = self.text.forward(&t.token_embeddings)?;
            let mut combined = audio_vec;
            combined.extend(sentence);
            features.push(combined);
            audio_caches.push(ac);
            text_caches.push(tc);
        }

        let (caption_loss, _, mut d_features) = self.seq2seq.forward_backward(
            &features,
            &example.target_embeddings,
            &mut grads.seq2seq,
        )?;

        let mut total = caption_loss;
        if include_label_loss {
            let labeled = example.tracks.iter().filter(|t| t.labels.is_some()).count();
            if labeled > 0 {
                let per_track = 1.0 / labeled as f64;
                for i in 0..n {
                    let Some(y) = &example.tracks[i].labels else {
                        continue;
                    };
                    let out = self.label.forward(&features[i])?;
                    // weighted_bce = λ·BCE, d_out already carries the λ factor
                    let (weighted_bce, d_out) = multitask_loss(0.0, &out, y, lambda)?;
                    total += weighted_bce * per_track;
                    let d_out_scaled: Vec<f64> = d_out.iter().map(|d| d * per_track).collect();
                    let d_feature =
                        self.label
                            .backward(&features[i], &out, &d_out_scaled, &mut grads.label)?;
                    for (a, b) in d_features[i].iter_mut().zip(&d_feature) {
                        *a += b;
                    }
                }
            }
        }

        let d_a = self.d_a();
        for i in 0..n {
            let (d_audio, d_sentence) = d_features[i].split_at(d_a);
            self.audio
                .backward(d_audio, &audio_caches[i], &mut grads.audio)?;
            self.text
                .backward(d_sentence, &text_caches[i], &mut grads.text)?;
        }
        Ok(total)
    }
}

impl ParamSet for FullModel {
    fn param_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.seq2seq.param_tensors();
        out.extend(self.audio.named("audio"));
        out.extend(self.text.gru.named("text.gru"));
        out.extend(self.label.dense.named("label.dense"));
        out
    }

    fn param_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.seq2seq.param_tensors_mut();
        out.extend(self.audio.named_mut("audio"));
        out.extend(self.text.gru.named_mut("text.gru"));
        out.extend(self.label.dense.named_mut("label.dense"));
        out
    }
}

/// One track of raw input for the fully-training path.
#[derive(Debug, Clone)]
pub struct FullTrack {
    /// [bands, frames] matrix.
    pub spectrogram: Tensor,
    /// In-vocabulary metadata token embeddings in order; a single zero row
    /// when no metadata token was known.
    pub token_embeddings: Vec<Vec<f64>>,
    pub labels: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FullExample {
    pub id: String,
    pub tracks: Vec<FullTrack>,
    pub target_tokens: Vec<String>,
    pub target_embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FullFitConfig {
    pub fit: FitConfig,
    pub lambda: f64,
    pub include_label_loss: bool,
}

/// Joint ADAM training of summarizers, label head and seq2seq, with the same
/// early-stopping contract as the pre-training path.
pub fn fit_fully(
    model: &mut FullModel,
    train: &[FullExample],
    validation: &[FullExample],
    config: &FullFitConfig,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Data("fit_fully: empty training set".into()));
    }
    let shapes: Vec<&Tensor> = model.param_tensors().into_iter().map(|(_, t)| t).collect();
    let mut adam = AdamState::new(&shapes, config.fit.adam);
    drop(shapes);

    let mut rng = ChaCha8Rng::seed_from_u64(config.fit.seed);
    let grad_template = {
        let mut g = model.clone();
        for (_, t) in g.param_tensors_mut() {
            t.fill(0.0);
        }
        g
    };

    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best_params = model.clone();
    let mut epochs_without_improvement = 0usize;
    let monitor_lambda = if config.include_label_loss {
        config.lambda
    } else {
        0.0
    };

    for epoch in 0..config.fit.epochs {
        let order = shuffled_indices(train.len(), &mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let mut grads = grad_template.clone();
            let loss = model.forward_backward(
                &train[i],
                config.lambda,
                config.include_label_loss,
                &mut grads,
            )?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            epoch_loss += loss;
            let grad_refs: Vec<&Tensor> =
                grads.param_tensors().into_iter().map(|(_, t)| t).collect();
            let mut param_refs: Vec<&mut Tensor> = model
                .param_tensors_mut()
                .into_iter()
                .map(|(_, t)| t)
                .collect();
            adam.step(&mut param_refs, &grad_refs)?;
        }
        report.train_loss.push(epoch_loss / train.len() as f64);

        let monitored = if validation.is_empty() {
            *report.train_loss.last().unwrap()
        } else {
            let mut total = 0.0;
            for ex in validation {
                total += model.total_loss(ex, monitor_lambda)?;
            }
            total / validation.len() as f64
        };
        report.val_loss.push(monitored);

        if monitored < report.best_val_loss {
            report.best_val_loss = monitored;
            report.best_epoch = epoch;
            best_params = model.clone();
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if let Some(p) = config.fit.patience {
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

/// Deterministic seeded constructor used by the CLI.
pub fn full_model_from_seed(
    d_a: usize,
    d_w: usize,
    d_s: usize,
    hidden: usize,
    l: usize,
    seed: u64,
) -> FullModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FullModel::init(d_a, d_w, d_s, hidden, l, &mut rng)
}
