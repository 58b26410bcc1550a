//! Per-track input features and per-playlist target sequences.

use crate::embeddings::{EmbeddingTable, EOS_TOKEN};
use crate::error::{Error, Result};

/// One track's input feature: audio summary vector concatenated with the
/// mean metadata word embedding, audio first.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFeature {
    pub audio: Vec<f64>,
    pub words: Vec<f64>,
    pub combined: Vec<f64>,
    /// Set when no metadata token was in the vocabulary (words is zero).
    pub no_known_words: bool,
}

/// One supervised example: a track-feature sequence and an aligned target
/// token/embedding sequence, plus optional auxiliary labels.
#[derive(Debug, Clone)]
pub struct PlaylistExample {
    pub id: String,
    pub tracks: Vec<TrackFeature>,
    pub target_tokens: Vec<String>,
    /// M rows of dim D_w, row m is the embedding of target_tokens[m].
    pub target_embeddings: Vec<Vec<f64>>,
    pub labels: Option<Vec<f64>>,
}

/// Lowercases and splits on any character that is not a letter, digit or
/// underscore. Underscore-joined phrases survive as single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn build_track_feature(
    audio: &[f64],
    metadata_text: &str,
    table: &EmbeddingTable,
) -> Result<TrackFeature> {
    if audio.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(
            "track audio feature has non-finite entries".into(),
        ));
    }
    let tokens = tokenize(metadata_text);
    let bag = table.bag_embedding(&tokens);
    let mut combined = Vec::with_capacity(audio.len() + bag.vector.len());
    combined.extend_from_slice(audio);
    combined.extend_from_slice(&bag.vector);
    Ok(TrackFeature {
        audio: audio.to_vec(),
        no_known_words: bag.no_known_words(),
        words: bag.vector,
        combined,
    })
}

/// Tokenizes a description, drops OOV tokens, truncates to max_len−1 and
/// appends the reserved EOS token. The table must already contain EOS.
pub fn build_playlist_target(
    description: &str,
    table: &EmbeddingTable,
    max_len: usize,
) -> Result<(Vec<String>, Vec<Vec<f64>>, usize)> {
    if max_len < 1 {
        return Err(Error::Config("max_len must be >= 1".into()));
    }
    let eos = table
        .lookup(EOS_TOKEN)
        .ok_or_else(|| Error::Data("embedding table is missing the EOS token".into()))?
        .to_vec();

    let mut tokens = Vec::new();
    let mut embeddings = Vec::new();
    let mut dropped = 0usize;
    for t in tokenize(description) {
        if t == EOS_TOKEN {
            continue;
        }
        match table.lookup(&t) {
            Some(row) => {
                tokens.push(t);
                embeddings.push(row.to_vec());
            }
            None => dropped += 1,
        }
    }
    if tokens.is_empty() {
        return Err(Error::Data(format!(
            "description {description:?} has no in-vocabulary tokens (unusable supervision)"
        )));
    }
    tokens.truncate(max_len - 1);
    embeddings.truncate(max_len - 1);
    tokens.push(EOS_TOKEN.to_string());
    embeddings.push(eos);
    Ok((tokens, embeddings, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::parse_embedding_text;

    fn table() -> EmbeddingTable {
        parse_embedding_text("2 3\ncat 3 4 5\ndog 0 1 0\n".as_bytes())
            .unwrap()
            .with_eos()
            .unwrap()
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(
            tokenize("Love Songs, ballads!"),
            vec!["love", "songs", "ballads"]
        );
        assert_eq!(
            tokenize("Roger_Deakins_cinematography"),
            vec!["roger_deakins_cinematography"]
        );
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn tokenize_idempotent_on_joined_output() {
        let once = tokenize("A,B c_d e!!f");
        let again = tokenize(&once.join(" "));
        assert_eq!(once, again);
    }

    #[test]
    fn track_feature_concatenation_order() {
        let t = table();
        let f = build_track_feature(&[1.0, 2.0], "cat", &t).unwrap();
        assert_eq!(f.combined, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(&f.combined[..2], f.audio.as_slice());
        assert_eq!(&f.combined[2..], f.words.as_slice());
    }

    #[test]
    fn all_oov_metadata_sets_flag() {
        let t = table();
        let f = build_track_feature(&[0.0, 0.0], "bird", &t).unwrap();
        assert!(f.no_known_words);
        assert!(f.combined.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_finite_audio_rejected() {
        let t = table();
        assert!(build_track_feature(&[f64::NAN], "cat", &t).is_err());
    }

    #[test]
    fn playlist_target_appends_eos() {
        let t = table();
        let (tokens, emb, dropped) = build_playlist_target("cat dog", &t, 8).unwrap();
        assert_eq!(tokens, vec!["cat", "dog", EOS_TOKEN]);
        assert_eq!(emb.len(), 3);
        assert_eq!(dropped, 0);
        assert_eq!(emb[2], t.lookup(EOS_TOKEN).unwrap());
    }

    #[test]
    fn playlist_target_drops_oov() {
        let t = table();
        let (tokens, _, dropped) = build_playlist_target("cat bird dog", &t, 8).unwrap();
        assert_eq!(tokens, vec!["cat", "dog", EOS_TOKEN]);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn all_oov_description_is_an_error() {
        let t = table();
        assert!(build_playlist_target("bird", &t, 8).is_err());
    }

    #[test]
    fn truncation_respects_max_len() {
        let t = table();
        let (tokens, emb, _) = build_playlist_target("cat dog cat dog", &t, 3).unwrap();
        assert_eq!(tokens.len(), 3);
        assert_eq!(emb.len(), 3);
        assert_eq!(tokens.last().unwrap(), EOS_TOKEN);
    }
}
