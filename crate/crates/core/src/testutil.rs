//! Shared fixtures for integration-style unit tests.
//!
//! Building a corpus and analyzing every utterance is the expensive part of
//! most end-to-end tests, so it lives here once.

use std::collections::BTreeMap;

use crate::config::ExperimentConfig;
use crate::featcache::{self, FeatureBundle};
use crate::signal::pitchnorm::{self, SpeakerF0Stats};
use crate::signal::wav::load_wav;
use crate::synthcorpus::{make_corpus, CorpusManifest};

/// Synthesizes the corpus described by `cfg` in a temp dir, analyzes every
/// utterance, and returns the manifest plus feature bundles keyed by
/// utterance id. The temp dir is dropped; only in-memory features survive.
pub(crate) fn corpus_bundles(
    cfg: &ExperimentConfig,
) -> (CorpusManifest, BTreeMap<String, FeatureBundle>) {
    let dir = tempfile::tempdir().expect("tempdir");
    let manifest = make_corpus(cfg, dir.path()).expect("corpus synthesis");

    let mut waves = BTreeMap::new();
    let mut tracks = BTreeMap::new();
    for utt in &manifest.utterances {
        let w = load_wav(&dir.path().join(&utt.wav)).expect("wav readback");
        let f0 = featcache::raw_f0(&w, cfg).expect("f0");
        waves.insert(utt.id.clone(), w);
        tracks.insert(utt.id.clone(), f0);
    }

    let mut stats: BTreeMap<String, SpeakerF0Stats> = BTreeMap::new();
    for utt in &manifest.utterances {
        if stats.contains_key(&utt.speaker) {
            continue;
        }
        let theirs: Vec<_> = manifest
            .utterances
            .iter()
            .filter(|u| u.speaker == utt.speaker)
            .map(|u| &tracks[&u.id])
            .collect();
        stats.insert(
            utt.speaker.clone(),
            pitchnorm::speaker_stats(&theirs).expect("speaker stats"),
        );
    }

    let mut bundles = BTreeMap::new();
    for utt in &manifest.utterances {
        let b = featcache::extract_features(
            &waves[&utt.id],
            &tracks[&utt.id],
            &stats[&utt.speaker],
            &utt.speaker,
            &utt.emotion,
            cfg,
        )
        .expect("feature extraction");
        bundles.insert(utt.id.clone(), b);
    }
    (manifest, bundles)
}
