//! Dataset manifests, deterministic train/validation splitting and a
//! synthetic dataset generator for desk-scale verification.
//!
//! Manifests are JSON; numeric payloads live in sidecar text files next to
//! the manifest (audio features: one line of space-separated reals;
//! spectrograms: `F T` header then F rows of T reals).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::features::{build_playlist_target, build_track_feature, tokenize, PlaylistExample};
use crate::fully::{FullExample, FullTrack};
use crate::tensor::{norm, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackEntry {
    pub id: String,
    pub metadata: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audio_feature_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrogram_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaylistEntry {
    pub id: String,
    pub description: String,
    pub tracks: Vec<TrackEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub playlists: Vec<PlaylistEntry>,
}

/// A manifest with every referenced sidecar file parsed and validated.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub dir: PathBuf,
    pub audio_features: HashMap<String, Vec<f64>>,
    pub spectrograms: HashMap<String, Tensor>,
}

fn validate_manifest(m: &Manifest) -> Result<()> {
    let mut playlist_ids = HashSet::new();
    let mut track_ids = HashSet::new();
    for p in &m.playlists {
        if !playlist_ids.insert(&p.id) {
            return Err(Error::Data(format!("duplicate playlist id {:?}", p.id)));
        }
        if p.description.trim().is_empty() {
            return Err(Error::Data(format!(
                "playlist {:?} has an empty description",
                p.id
            )));
        }
        if p.tracks.is_empty() {
            return Err(Error::Data(format!("playlist {:?} has no tracks", p.id)));
        }
        for t in &p.tracks {
            if !track_ids.insert(&t.id) {
                return Err(Error::Data(format!("duplicate track id {:?}", t.id)));
            }
        }
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<LoadedManifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("manifest {}: {e}", path.display())))?;
    validate_manifest(&manifest)?;

    let dir = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let mut audio_features = HashMap::new();
    let mut spectrograms = HashMap::new();
    for p in &manifest.playlists {
        for t in &p.tracks {
            if let Some(rel) = &t.audio_feature_path {
                let fp = dir.join(rel);
                let v = parse_audio_feature_file(&fp).map_err(|e| {
                    Error::Data(format!(
                        "track {:?}: audio feature {}: {e}",
                        t.id,
                        fp.display()
                    ))
                })?;
                audio_features.insert(t.id.clone(), v);
            }
            if let Some(rel) = &t.spectrogram_path {
                let fp = dir.join(rel);
                let s = parse_spectrogram_file(&fp).map_err(|e| {
                    Error::Data(format!(
                        "track {:?}: spectrogram {}: {e}",
                        t.id,
                        fp.display()
                    ))
                })?;
                spectrograms.insert(t.id.clone(), s);
            }
        }
    }
    Ok(LoadedManifest {
        manifest,
        dir,
        audio_features,
        spectrograms,
    })
}

impl LoadedManifest {
    /// Builds pre-training-path examples; every track needs an audio feature
    /// of dimension d_a.
    pub fn build_examples(
        &self,
        table: &EmbeddingTable,
        d_a: usize,
        max_caption_len: usize,
    ) -> Result<Vec<PlaylistExample>> {
        let mut out = Vec::with_capacity(self.manifest.playlists.len());
        for p in &self.manifest.playlists {
            let mut tracks = Vec::with_capacity(p.tracks.len());
            for t in &p.tracks {
                let audio = self.audio_features.get(&t.id).ok_or_else(|| {
                    Error::Data(format!("track {:?} has no audio_feature_path", t.id))
                })?;
                if audio.len() != d_a {
                    return Err(Error::Dim(format!(
                        "track {:?}: audio feature has dim {}, expected {d_a}",
                        t.id,
                        audio.len()
                    )));
                }
                tracks.push(build_track_feature(audio, &t.metadata, table)?);
            }
            let (tokens, embeddings, _) =
                build_playlist_target(&p.description, table, max_caption_len)?;
            out.push(PlaylistExample {
                id: p.id.clone(),
                tracks,
                target_tokens: tokens,
                target_embeddings: embeddings,
                labels: None,
            });
        }
        Ok(out)
    }

    /// Builds fully-training-path examples; every track needs a spectrogram.
    pub fn build_full_examples(
        &self,
        table: &EmbeddingTable,
        max_caption_len: usize,
    ) -> Result<Vec<FullExample>> {
        let mut out = Vec::with_capacity(self.manifest.playlists.len());
        for p in &self.manifest.playlists {
            let mut tracks = Vec::with_capacity(p.tracks.len());
            for t in &p.tracks {
                let spectrogram = self.spectrograms.get(&t.id).ok_or_else(|| {
                    Error::Data(format!("track {:?} has no spectrogram_path", t.id))
                })?;
                let mut token_embeddings: Vec<Vec<f64>> = tokenize(&t.metadata)
                    .iter()
                    .filter_map(|tok| table.lookup(tok).map(|r| r.to_vec()))
                    .collect();
                if token_embeddings.is_empty() {
                    token_embeddings.push(vec![0.0; table.dim()]);
                }
                tracks.push(FullTrack {
                    spectrogram: spectrogram.clone(),
                    token_embeddings,
                    labels: t.labels.clone(),
                });
            }
            let (tokens, embeddings, _) =
                build_playlist_target(&p.description, table, max_caption_len)?;
            out.push(FullExample {
                id: p.id.clone(),
                tracks,
                target_tokens: tokens,
                target_embeddings: embeddings,
            });
        }
        Ok(out)
    }
}

/// Seeded deterministic partition of `n` items. Validation takes
/// max(1, round(fraction·n)) items; every index lands on exactly one side.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Data("split requires at least 2 playlists".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction {fraction} not in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let val_size = ((fraction * n as f64).round() as usize).max(1).min(n - 1);
    let validation = idx.split_off(n - val_size);
    Ok((idx, validation))
}

pub fn split<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (tr, va) = split_indices(items.len(), fraction, seed)?;
    Ok((
        tr.iter().map(|&i| items[i].clone()).collect(),
        va.iter().map(|&i| items[i].clone()).collect(),
    ))
}

// --- sidecar file formats ---

pub fn parse_audio_feature_file(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let line = text
        .lines()
        .next()
        .ok_or_else(|| Error::parse(1, "empty audio feature file"))?;
    let mut out = Vec::new();
    for f in line.split(' ') {
        let x: f64 = f
            .parse()
            .map_err(|_| Error::parse(1, format!("unparseable value {f:?}")))?;
        if !x.is_finite() {
            return Err(Error::parse(1, format!("non-finite value {f:?}")));
        }
        out.push(x);
    }
    Ok(out)
}

pub fn write_audio_feature_file(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{v:.16e}"));
    }
    out.push('\n');
    fs::write(path, out)?;
    Ok(())
}

/// Text spectrogram: line 1 is `F T`, then F lines of T space-separated reals.
pub fn parse_spectrogram_file(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty spectrogram file"))?;
    let mut parts = header.split(' ');
    let f: i64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(1, format!("malformed header {header:?}")))?;
    let t: i64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(1, format!("malformed header {header:?}")))?;
    if f <= 0 || t <= 0 || parts.next().is_some() {
        return Err(Error::parse(1, format!("malformed header {header:?}")));
    }
    let (f, t) = (f as usize, t as usize);
    let mut data = Vec::with_capacity(f * t);
    for row in 0..f {
        let line_no = row + 2;
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(line_no, format!("expected {f} rows, file ended")))?;
        let mut count = 0;
        for field in line.split(' ') {
            let x: f64 = field
                .parse()
                .map_err(|_| Error::parse(line_no, format!("unparseable value {field:?}")))?;
            if !x.is_finite() {
                return Err(Error::parse(line_no, format!("non-finite value {field:?}")));
            }
            data.push(x);
            count += 1;
        }
        if count != t {
            return Err(Error::parse(
                line_no,
                format!("wrong field count: expected {t} values, found {count}"),
            ));
        }
    }
    Ok(Tensor {
        shape: vec![f, t],
        data,
    })
}

pub fn write_spectrogram_file(path: &Path, spec: &Tensor) -> Result<()> {
    let (f, t) = (spec.shape[0], spec.shape[1]);
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{f} {t}")?;
    for i in 0..f {
        for j in 0..t {
            if j > 0 {
                write!(w, " ")?;
            }
            write!(w, "{:.16e}", spec.at(i, j))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

// --- synthetic data ---

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_playlists: usize,
    pub tracks_per_playlist: usize,
    pub vocab: Vec<String>,
    pub d_a: usize,
    pub d_w: usize,
    pub bands: usize,
    pub frames: usize,
    pub description_len: usize,
    pub num_labels: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            num_playlists: 4,
            tracks_per_playlist: 3,
            vocab: default_vocab(),
            d_a: 50,
            d_w: 300,
            bands: 12,
            frames: 16,
            description_len: 3,
            num_labels: 4,
        }
    }
}

pub fn default_vocab() -> Vec<String> {
    [
        "dramatic",
        "soaring",
        "epic",
        "action",
        "adventure",
        "mellow",
        "acoustic",
        "chilled",
        "intense",
        "gloomy",
        "upbeat",
        "dreamy",
        "cinematic",
        "orchestral",
        "electronic",
        "ambient",
        "folk",
        "jazzy",
        "gritty",
        "romantic",
        "melancholic",
        "triumphant",
        "nocturnal",
        "pastoral",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Deterministically generates an embedding file, per-track feature and
/// spectrogram files, and a manifest under `out_dir`. Audio features are
/// correlated with the description tokens (each token contributes a fixed
/// pseudo-random offset), so captions are learnable from the inputs.
pub fn synthesize(config: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    if config.vocab.is_empty() {
        return Err(Error::Config("synthesize: empty vocabulary".into()));
    }
    if config.num_playlists == 0 || config.tracks_per_playlist == 0 {
        return Err(Error::Config("synthesize: sizes must be >= 1".into()));
    }
    if config.description_len > config.vocab.len() {
        return Err(Error::Config(
            "synthesize: description_len exceeds vocabulary".into(),
        ));
    }
    fs::create_dir_all(out_dir)?;
    fs::create_dir_all(out_dir.join("features"))?;
    fs::create_dir_all(out_dir.join("specs"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let v = config.vocab.len();

    // unit-norm random embeddings, one per vocab token
    let mut matrix = Vec::with_capacity(v * config.d_w);
    for _ in 0..v {
        let mut row: Vec<f64> = (0..config.d_w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&row);
        row.iter_mut().for_each(|x| *x /= n);
        matrix.extend(row);
    }
    let table = EmbeddingTable::new(config.vocab.clone(), config.d_w, matrix)?;
    let emb_path = out_dir.join("embeddings.txt");
    let file = fs::File::create(&emb_path)?;
    table.serialize(std::io::BufWriter::new(file))?;

    // fixed audio-feature offset per token
    let offsets: Vec<Vec<f64>> = (0..v)
        .map(|_| (0..config.d_a).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    // distinct descriptions: sample token subsets until unseen
    let mut seen = HashSet::new();
    let mut playlists = Vec::with_capacity(config.num_playlists);
    for p in 0..config.num_playlists {
        let token_ids = loop {
            let mut ids: Vec<usize> = (0..v).collect();
            for i in (1..v).rev() {
                let j = rng.gen_range(0..=i);
                ids.swap(i, j);
            }
            ids.truncate(config.description_len);
            if seen.insert(ids.clone()) {
                break ids;
            }
        };
        let description: Vec<&str> = token_ids
            .iter()
            .map(|&i| config.vocab[i].as_str())
            .collect();
        let description = description.join(" ");

        // playlist-level audio signature: mean of its tokens' offsets
        let mut signature = vec![0.0; config.d_a];
        for &ti in &token_ids {
            for (s, o) in signature.iter_mut().zip(&offsets[ti]) {
                *s += o / config.description_len as f64;
            }
        }

        let labels: Vec<f64> = (0..config.num_labels)
            .map(|l| {
                if token_ids.contains(&(l % v)) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();

        let mut tracks = Vec::with_capacity(config.tracks_per_playlist);
        for t in 0..config.tracks_per_playlist {
            let track_id = format!("p{p}_t{t}");
            let audio: Vec<f64> = signature
                .iter()
                .map(|s| s + 0.05 * rng.gen_range(-1.0..1.0))
                .collect();
            let feature_rel = format!("features/{track_id}.txt");
            write_audio_feature_file(&out_dir.join(&feature_rel), &audio)?;

            // spectrogram carries the signature along the band axis
            let mut spec = Tensor::zeros(&[config.bands, config.frames]);
            for i in 0..config.bands {
                for j in 0..config.frames {
                    let base = signature[i % config.d_a];
                    *spec.at_mut(i, j) = base + 0.1 * rng.gen_range(-1.0..1.0);
                }
            }
            let spec_rel = format!("specs/{track_id}.txt");
            write_spectrogram_file(&out_dir.join(&spec_rel), &spec)?;

            let metadata = token_ids
                .iter()
                .take(2)
                .map(|&i| config.vocab[i].as_str())
                .collect::<Vec<_>>()
                .join(" ");
            tracks.push(TrackEntry {
                id: track_id,
                metadata,
                audio_feature_path: Some(feature_rel),
                spectrogram_path: Some(spec_rel),
                labels: Some(labels.clone()),
            });
        }
        playlists.push(PlaylistEntry {
            id: format!("p{p}"),
            description,
            tracks,
        });
    }

    let manifest = Manifest { playlists };
    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json + "\n")?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_config() -> SynthConfig {
        SynthConfig {
            num_playlists: 4,
            tracks_per_playlist: 3,
            d_a: 6,
            d_w: 8,
            ..Default::default()
        }
    }

    #[test]
    fn synthesized_manifest_loads_and_validates() {
        let dir = tempdir().unwrap();
        let path = synthesize(&small_config(), dir.path()).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.manifest.playlists.len(), 4);
        assert_eq!(loaded.audio_features.len(), 12);
        assert_eq!(loaded.spectrograms.len(), 12);
    }

    #[test]
    fn synthesis_is_bit_deterministic() {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        synthesize(&small_config(), d1.path()).unwrap();
        synthesize(&small_config(), d2.path()).unwrap();
        for rel in [
            "manifest.json",
            "embeddings.txt",
            "features/p0_t0.txt",
            "specs/p3_t2.txt",
        ] {
            let a = fs::read(d1.path().join(rel)).unwrap();
            let b = fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between runs");
        }
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let dir = tempdir().unwrap();
        let path = synthesize(&small_config(), dir.path()).unwrap();
        let loaded = load_manifest(&path).unwrap();
        let json = serde_json::to_string(&loaded.manifest).unwrap();
        let back: Manifest = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn missing_description_is_a_schema_error() {
        let m = Manifest {
            playlists: vec![PlaylistEntry {
                id: "p0".into(),
                description: "  ".into(),
                tracks: vec![TrackEntry {
                    id: "t0".into(),
                    metadata: "x".into(),
                    audio_feature_path: None,
                    spectrogram_path: None,
                    labels: None,
                }],
            }],
        };
        let err = validate_manifest(&m).unwrap_err();
        assert!(err.to_string().contains("p0"));
    }

    #[test]
    fn dangling_reference_is_reported() {
        let dir = tempdir().unwrap();
        let manifest = Manifest {
            playlists: vec![PlaylistEntry {
                id: "p0".into(),
                description: "hello".into(),
                tracks: vec![TrackEntry {
                    id: "t0".into(),
                    metadata: "x".into(),
                    audio_feature_path: Some("missing.txt".into()),
                    spectrogram_path: None,
                    labels: None,
                }],
            }],
        };
        let path = dir.path().join("manifest.json");
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("missing.txt"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempdir().unwrap();
        let path = synthesize(&small_config(), dir.path()).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text = text.replace("\"p1\"", "\"p0\"");
        fs::write(&path, text).unwrap();
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let items: Vec<usize> = (0..10).collect();
        let (tr, va) = split(&items, 0.2, 1).unwrap();
        assert_eq!(tr.len(), 8);
        assert_eq!(va.len(), 2);
        let (tr2, va2) = split(&items, 0.2, 1).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);

        for seed in 0..100u64 {
            let (tr, va) = split(&items, 0.3, seed).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(va.iter()).copied().collect();
            all.sort_unstable();
            assert_eq!(all, items, "seed {seed} is not a partition");
        }
    }

    #[test]
    fn split_requires_two_playlists() {
        assert!(split(&[1], 0.5, 0).is_err());
    }

    #[test]
    fn spectrogram_file_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let spec = Tensor {
            shape: vec![2, 3],
            data: vec![1.0, -0.5, 0.25, 3.0, 0.125, -2.0],
        };
        write_spectrogram_file(&path, &spec).unwrap();
        assert_eq!(parse_spectrogram_file(&path).unwrap(), spec);
    }
}
