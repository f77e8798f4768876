//! Utterances, manifests, and WAV pools.
//!
//! A manifest is UTF-8 text, one record per line, with tab-separated fields
//! id, audio_path, transcript, source. Audio paths resolve relative to the
//! manifest's directory. Pools are directories of 16 kHz mono WAV files
//! enumerated in lexicographic filename order.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::audio::{read_wav, write_wav, Waveform};
use crate::augment::AcousticImpulseResponse;
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real,
    Synthetic,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Real => "real",
            Source::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Source::Real),
            "synthetic" => Ok(Source::Synthetic),
            other => Err(Error::Manifest(format!("bad source field {other:?}"))),
        }
    }
}

/// One training or evaluation utterance, audio already loaded.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<u32>,
    pub transcript: String,
    pub source: Source,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub audio_path: String,
    pub transcript: String,
    pub source: Source,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let tmp = crate::audio::temp_path(path)?;
    {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for e in entries {
            for (field, value) in [("id", &e.id), ("audio_path", &e.audio_path), ("transcript", &e.transcript)] {
                if value.contains('\t') || value.contains('\n') {
                    return Err(Error::Manifest(format!(
                        "{field} {value:?} contains a tab or newline"
                    )));
                }
            }
            writeln!(f, "{}\t{}\t{}\t{}", e.id, e.audio_path, e.transcript, e.source.as_str())?;
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Manifest(format!(
                "{}:{}: expected 4 tab-separated fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Manifest(format!(
                "{}:{}: duplicate id {id:?}",
                path.display(),
                lineno + 1
            )));
        }
        entries.push(ManifestEntry {
            id,
            audio_path: fields[1].to_string(),
            transcript: fields[2].to_string(),
            source: Source::parse(fields[3])
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), lineno + 1)))?,
        });
    }
    Ok(entries)
}

/// Loads every manifest entry's audio and tokenizes its transcript.
pub fn load_corpus(manifest_path: &Path, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let entries = read_manifest(manifest_path)?;
    let mut utterances = Vec::with_capacity(entries.len());
    for e in entries {
        let tokens = vocab.tokenize(&e.transcript).map_err(|err| {
            Error::Manifest(format!("utterance {:?}: {err}", e.id))
        })?;
        if tokens.is_empty() {
            return Err(Error::Manifest(format!("utterance {:?} has an empty transcript", e.id)));
        }
        let waveform = read_wav(&base.join(&e.audio_path))?;
        utterances.push(Utterance {
            id: e.id,
            tokens,
            transcript: e.transcript,
            source: e.source,
            waveform,
        });
    }
    Ok(utterances)
}

fn wav_paths_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("pool directory {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "wav").unwrap_or(false))
        .collect();
    paths.sort_by_key(|p| p.file_name().map(|n| n.to_os_string()));
    Ok(paths)
}

/// Noise pool: all WAVs in a directory, lexicographic filename order.
pub fn load_wav_pool(dir: &Path) -> Result<Vec<Waveform>> {
    wav_paths_sorted(dir)?.iter().map(|p| read_wav(p)).collect()
}

/// Impulse-response pool from WAV files.
pub fn load_air_pool(dir: &Path) -> Result<Vec<AcousticImpulseResponse>> {
    wav_paths_sorted(dir)?
        .iter()
        .map(|p| {
            let w = read_wav(p)?;
            AcousticImpulseResponse::new(w.samples, w.sample_rate)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Writes utterance audio plus a manifest into `dir`. Returns the manifest
/// path. Audio files are named `<id>.wav`.
pub fn write_corpus(dir: &Path, utterances: &[Utterance]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(utterances.len());
    for u in utterances {
        let file = format!("{}.wav", u.id);
        write_wav(&dir.join(&file), &u.waveform)?;
        entries.push(ManifestEntry {
            id: u.id.clone(),
            audio_path: file,
            transcript: u.transcript.clone(),
            source: u.source,
        });
    }
    let manifest = dir.join("manifest.tsv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
