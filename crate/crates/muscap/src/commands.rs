//! Library-level implementations of the CLI workflows. The binary is a thin
//! argument-parsing shell over these, and tests drive them directly.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointConfig, LoadedModel};
use crate::config::{RunConfig, RunMode};
use crate::data::{load_manifest, split, synthesize, LoadedManifest, SynthConfig};
use crate::embeddings::{parse_embedding_text, EmbeddingTable, EOS_TOKEN};
use crate::error::{Error, Result};
use crate::features::PlaylistExample;
use crate::fully::{fit_fully, FullExample, FullFitConfig, FullModel};
use crate::nn::adam::AdamHyper;
use crate::seq2seq::{fit, FitConfig, Seq2SeqModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReportFile {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mean_teacher_forced_loss: f64,
    pub exact_match_rate: f64,
    pub mean_token_agreement: f64,
    pub playlists: usize,
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot read embeddings {}: {e}", path.display())))?;
    parse_embedding_text(std::io::BufReader::new(file))?.with_eos()
}

fn fit_config(config: &RunConfig) -> FitConfig {
    FitConfig {
        epochs: config.training.epochs,
        patience: config.training.patience,
        seed: config.training.seed,
        adam: AdamHyper {
            lr: config.optimizer.lr,
            beta1: config.optimizer.beta1,
            beta2: config.optimizer.beta2,
            epsilon: 1e-8,
        },
    }
}

fn checkpoint_config(config: &RunConfig, table: &EmbeddingTable) -> CheckpointConfig {
    CheckpointConfig {
        mode: config.mode.into(),
        d_a: config.dims.d_a,
        d_w: config.dims.d_w,
        d_s: config.dims.d_s,
        hidden: config.dims.hidden,
        labels: config.dims.labels,
        seed: config.training.seed,
        vocab_hash: table.vocab_hash(),
        max_caption_len: config.training.max_caption_len,
    }
}

/// Trains per the config, writes the checkpoint and a JSON report, and
/// returns the report.
pub fn cmd_train(config: &RunConfig) -> Result<TrainingReportFile> {
    config.validate()?;
    let table = load_embeddings(Path::new(&config.paths.embeddings))?;
    if table.dim() != config.dims.d_w {
        return Err(Error::Config(format!(
            "embeddings have dim {}, config says d_w = {}",
            table.dim(),
            config.dims.d_w
        )));
    }
    let loaded = load_manifest(Path::new(&config.paths.manifest))?;
    let started = Instant::now();
    let ckpt_cfg = checkpoint_config(config, &table);
    let out_path = Path::new(&config.paths.checkpoint_out);

    let report = match config.mode {
        RunMode::PretrainFeatures => {
            let examples =
                loaded.build_examples(&table, config.dims.d_a, config.training.max_caption_len)?;
            let (train, validation) = split(
                &examples,
                config.training.validation_fraction,
                config.training.seed,
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.training.seed);
            let mut model = Seq2SeqModel::init(
                config.dims.d_a + config.dims.d_w,
                config.dims.d_w,
                config.dims.hidden,
                &mut rng,
            );
            let r = fit(&mut model, &train, &validation, &fit_config(config))?;
            checkpoint::save_pretrain(out_path, &model, &ckpt_cfg)?;
            r
        }
        RunMode::FullyTrain => {
            let examples = loaded.build_full_examples(&table, config.training.max_caption_len)?;
            let (train, validation) = split(
                &examples,
                config.training.validation_fraction,
                config.training.seed,
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.training.seed);
            let mut model = FullModel::init(
                config.dims.d_a,
                config.dims.d_w,
                config.dims.d_s,
                config.dims.hidden,
                config.dims.labels,
                &mut rng,
            );
            let full_cfg = FullFitConfig {
                fit: fit_config(config),
                lambda: config.training.lambda,
                include_label_loss: true,
            };
            let r = fit_fully(&mut model, &train, &validation, &full_cfg)?;
            checkpoint::save_fully(out_path, &model, &ckpt_cfg)?;
            r
        }
    };

    let report_file = TrainingReportFile {
        train_loss: report.train_loss,
        val_loss: report.val_loss,
        best_epoch: report.best_epoch,
        best_val_loss: report.best_val_loss,
        stopped_early: report.stopped_early,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    fs::write(
        &config.paths.report_out,
        serde_json::to_string_pretty(&report_file)? + "\n",
    )?;
    Ok(report_file)
}

fn check_vocab_hash(cfg: &CheckpointConfig, table: &EmbeddingTable) -> Result<()> {
    let hash = table.vocab_hash();
    if cfg.vocab_hash != hash {
        return Err(Error::Data(format!(
            "vocab hash mismatch: checkpoint {} vs embeddings {}",
            cfg.vocab_hash, hash
        )));
    }
    Ok(())
}

/// Caption playlists with a trained checkpoint. Output: one line per
/// playlist, `<id>\t<space-joined tokens>`, in manifest order.
pub fn cmd_caption(
    checkpoint_path: &Path,
    manifest_path: &Path,
    embeddings_path: &Path,
    playlist_id: Option<&str>,
    max_len: Option<usize>,
) -> Result<String> {
    let table = load_embeddings(embeddings_path)?;
    let (model, cfg) = checkpoint::load(checkpoint_path)?;
    check_vocab_hash(&cfg, &table)?;
    let loaded = load_manifest(manifest_path)?;
    let max_len = max_len.unwrap_or(cfg.max_caption_len);

    if let Some(id) = playlist_id {
        if !loaded.manifest.playlists.iter().any(|p| p.id == id) {
            return Err(Error::Data(format!("unknown playlist id {id:?}")));
        }
    }

    let features = playlist_features(&model, &cfg, &loaded, &table)?;
    let mut out = String::new();
    for (p, tracks) in loaded.manifest.playlists.iter().zip(&features) {
        if let Some(id) = playlist_id {
            if p.id != id {
                continue;
            }
        }
        let seq2seq = seq2seq_of(&model);
        let tokens = seq2seq.caption(tracks, &table, max_len)?;
        out.push_str(&p.id);
        out.push('\t');
        out.push_str(&tokens.join(" "));
        out.push('\n');
    }
    Ok(out)
}

fn seq2seq_of(model: &LoadedModel) -> &Seq2SeqModel {
    match model {
        LoadedModel::Pretrain(m) => m,
        LoadedModel::Fully(m) => &m.seq2seq,
    }
}

/// Combined per-track features for every playlist, mode-appropriate.
fn playlist_features(
    model: &LoadedModel,
    cfg: &CheckpointConfig,
    loaded: &LoadedManifest,
    table: &EmbeddingTable,
) -> Result<Vec<Vec<Vec<f64>>>> {
    match model {
        LoadedModel::Pretrain(_) => {
            let examples = loaded.build_examples(table, cfg.d_a, cfg.max_caption_len)?;
            Ok(examples
                .into_iter()
                .map(|e| e.tracks.into_iter().map(|t| t.combined).collect())
                .collect())
        }
        LoadedModel::Fully(m) => {
            let examples = loaded.build_full_examples(table, cfg.max_caption_len)?;
            examples
                .iter()
                .map(|e| e.tracks.iter().map(|t| m.track_feature(t)).collect())
                .collect()
        }
    }
}

pub fn cmd_eval(
    checkpoint_path: &Path,
    manifest_path: &Path,
    embeddings_path: &Path,
) -> Result<EvalMetrics> {
    let table = load_embeddings(embeddings_path)?;
    let (model, cfg) = checkpoint::load(checkpoint_path)?;
    check_vocab_hash(&cfg, &table)?;
    let loaded = load_manifest(manifest_path)?;

    let features = playlist_features(&model, &cfg, &loaded, &table)?;
    let targets: Vec<(Vec<String>, Vec<Vec<f64>>)> = match &model {
        LoadedModel::Pretrain(_) => loaded
            .build_examples(&table, cfg.d_a, cfg.max_caption_len)?
            .into_iter()
            .map(|e| (e.target_tokens, e.target_embeddings))
            .collect(),
        LoadedModel::Fully(_) => loaded
            .build_full_examples(&table, cfg.max_caption_len)?
            .into_iter()
            .map(|e| (e.target_tokens, e.target_embeddings))
            .collect(),
    };

    let seq2seq = seq2seq_of(&model);
    evaluate(seq2seq, &features, &targets, &table, cfg.max_caption_len)
}

/// Shared metric computation: mean teacher-forced loss, greedy exact-match
/// rate, mean per-token agreement with the target tokens.
pub fn evaluate(
    model: &Seq2SeqModel,
    features: &[Vec<Vec<f64>>],
    targets: &[(Vec<String>, Vec<Vec<f64>>)],
    table: &EmbeddingTable,
    max_len: usize,
) -> Result<EvalMetrics> {
    let n = features.len();
    if n == 0 {
        return Err(Error::Data("eval: empty dataset".into()));
    }
    let mut loss_total = 0.0;
    let mut exact = 0usize;
    let mut agreement_total = 0.0;
    for (tracks, (target_tokens, target_embeddings)) in features.iter().zip(targets) {
        loss_total += model.teacher_forced_loss(tracks, target_embeddings)?;
        let greedy = model.caption(tracks, table, max_len)?;
        let reference: Vec<&String> = target_tokens
            .iter()
            .filter(|t| t.as_str() != EOS_TOKEN)
            .collect();
        let matched = greedy
            .iter()
            .zip(&reference)
            .filter(|(g, r)| g == *r)
            .count();
        if greedy.len() == reference.len() && matched == reference.len() {
            exact += 1;
        }
        agreement_total += matched as f64 / reference.len().max(1) as f64;
    }
    Ok(EvalMetrics {
        mean_teacher_forced_loss: loss_total / n as f64,
        exact_match_rate: exact as f64 / n as f64,
        mean_token_agreement: agreement_total / n as f64,
        playlists: n,
    })
}

pub fn cmd_synth(config: &SynthConfig, out_dir: &Path) -> Result<String> {
    let manifest_path = synthesize(config, out_dir)?;
    Ok(format!(
        "wrote {} ({} playlists, {} tracks each, vocab {})\n",
        manifest_path.display(),
        config.num_playlists,
        config.tracks_per_playlist,
        config.vocab.len()
    ))
}

/// Summarizes either an embedding file or a checkpoint, detected by magic.
pub fn cmd_inspect(path: &Path) -> Result<String> {
    let head =
        fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    if head.starts_with(checkpoint::MAGIC) {
        let (tensors, cfg) = checkpoint::inspect(path)?;
        let mut out = format!(
            "checkpoint: mode={:?} d_a={} d_w={} d_s={} hidden={} labels={} seed={}\n",
            cfg.mode, cfg.d_a, cfg.d_w, cfg.d_s, cfg.hidden, cfg.labels, cfg.seed
        );
        out.push_str(&format!("vocab_hash: {}\n", cfg.vocab_hash));
        out.push_str(&format!("tensors: {}\n", tensors.len()));
        for (name, shape) in tensors {
            out.push_str(&format!("  {name} {shape:?}\n"));
        }
        Ok(out)
    } else {
        let table = parse_embedding_text(head.as_slice())?;
        Ok(format!(
            "embeddings: vocab_size={} dim={} vocab_hash={}\n",
            table.vocab_size(),
            table.dim(),
            table.vocab_hash()
        ))
    }
}

/// Convenience used by tests: builds examples from a manifest for the
/// pre-training path.
pub fn build_pretrain_dataset(
    manifest_path: &Path,
    table: &EmbeddingTable,
    d_a: usize,
    max_caption_len: usize,
) -> Result<Vec<PlaylistExample>> {
    load_manifest(manifest_path)?.build_examples(table, d_a, max_caption_len)
}

pub fn build_fully_dataset(
    manifest_path: &Path,
    table: &EmbeddingTable,
    max_caption_len: usize,
) -> Result<Vec<FullExample>> {
    load_manifest(manifest_path)?.build_full_examples(table, max_caption_len)
}
