//! Command implementations behind the CLI subcommands. Everything is a pure
//! function of the run configuration; all randomness flows from its seeds.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mimic::audio::{read_wav, write_wav, Waveform};
use mimic::augment::{corrupt, AcousticImpulseResponse};
use mimic::checkpoint::{self, Checkpoint, RecipePosition};
use mimic::corpus::{
    load_air_pool, load_corpus, load_wav_pool, write_manifest, ManifestEntry, Utterance,
};
use mimic::error::Error;
use mimic::eval::{
    greedy_decode, nwer, read_report_wer, summarize, wer, write_report, EvalSummary, UtteranceEval,
};
use mimic::features::{log_mel, stack_downsample, write_feature_dump};
use mimic::model::RnntModel;
use mimic::rng::{derive_seed, stream_rng};
use mimic::synth::{sample_profiles, synthesize};
use mimic::train::{run_recipe, AdamState, RecipeOptions, ResumePoint, TrainEnv};
use rand::Rng;

use crate::config::{RunConfig, TrainSection};
use crate::{CliError, CliResult};

fn runtime(e: Error) -> CliError {
    CliError::Runtime(e)
}

fn config_errs(errs: Vec<String>) -> CliError {
    CliError::Config(errs)
}

pub struct SynthOutcome {
    pub manifest: PathBuf,
    pub rendered: usize,
}

/// Expands templates x slot words, renders each text with sampled voice
/// profiles, and writes WAVs plus a manifest into the output directory.
pub fn cmd_synth(cfg: &RunConfig) -> CliResult<SynthOutcome> {
    let section = cfg
        .synth
        .as_ref()
        .ok_or_else(|| config_errs(vec!["config has no synth.* section".into()]))?;

    let templates = read_templates(&section.templates, cfg)?;
    let words = read_slot_words(&section.slot_words, cfg)?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| runtime(e.into()))?;
    let pool = sample_profiles(section.pool_seed, section.pool_size).map_err(runtime)?;
    let mut rng = stream_rng(cfg.seed, &[mimic::rng::stream::POOL]);

    let mut entries = Vec::new();
    let mut rendered = 0usize;
    for (ti, template) in templates.iter().enumerate() {
        for (wi, word) in words.iter().enumerate() {
            let text = template.replace(SLOT_MARKER, word);
            let tokens = cfg.vocab.tokenize(&text).map_err(runtime)?;
            for k in 0..section.profiles_per_text {
                let profile = &pool[rng.random_range(0..pool.len())];
                let render_seed =
                    derive_seed(cfg.seed, &[ti as u64, wi as u64, k as u64, 0x5EED]);
                let wave = synthesize(&tokens, profile, render_seed, &cfg.vocab).map_err(runtime)?;
                let id = format!("{}-{ti:03}-{wi:03}-{k:02}", section.id_prefix);
                let file = format!("{id}.wav");
                write_wav(&cfg.out_dir.join(&file), &wave).map_err(runtime)?;
                entries.push(ManifestEntry {
                    id,
                    audio_path: file,
                    transcript: text.clone(),
                    source: section.source,
                });
                rendered += 1;
            }
        }
    }
    let manifest = cfg.out_dir.join("manifest.tsv");
    write_manifest(&manifest, &entries).map_err(runtime)?;
    Ok(SynthOutcome { manifest, rendered })
}

pub const SLOT_MARKER: &str = "{word}";

fn read_templates(path: &Path, cfg: &RunConfig) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(e.into()))?;
    let mut templates = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let markers = line.matches(SLOT_MARKER).count();
        if markers != 1 {
            errors.push(format!(
                "{}:{}: template must contain exactly one {SLOT_MARKER} marker, found {markers}",
                path.display(),
                idx + 1
            ));
            continue;
        }
        // every fixed word must be in the vocabulary
        for word in line.replace(SLOT_MARKER, "").split_whitespace() {
            if cfg.vocab.id(word).is_none() {
                errors.push(format!(
                    "{}:{}: template word {word:?} is not in the vocabulary",
                    path.display(),
                    idx + 1
                ));
            }
        }
        templates.push(line.to_string());
    }
    if templates.is_empty() {
        errors.push(format!("{}: no templates found", path.display()));
    }
    if errors.is_empty() {
        Ok(templates)
    } else {
        Err(config_errs(errors))
    }
}

fn read_slot_words(path: &Path, cfg: &RunConfig) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(e.into()))?;
    let mut words = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let word = line.trim();
        if word.is_empty() || word.starts_with('#') {
            continue;
        }
        if cfg.vocab.id(word).is_none() {
            errors.push(format!(
                "{}:{}: slot word {word:?} is not in the vocabulary",
                path.display(),
                idx + 1
            ));
        }
        words.push(word.to_string());
    }
    if words.is_empty() {
        errors.push(format!("{}: no slot words found", path.display()));
    }
    if errors.is_empty() {
        Ok(words)
    } else {
        Err(config_errs(errors))
    }
}

#[derive(Serialize)]
struct StageSummary {
    name: String,
    steps: u64,
    final_loss: f64,
    mean_loss_last_20: f64,
    final_lr: f64,
    final_penalty: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    stages: Vec<StageSummary>,
    final_checkpoint: String,
    resumed: bool,
}

pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub summary: PathBuf,
}

/// Runs the configured recipe: loads corpora and pools, builds or restores
/// the model, trains every stage with per-stage checkpoints, and writes a
/// machine-readable summary.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainOutcome> {
    let section = cfg
        .train
        .as_ref()
        .ok_or_else(|| config_errs(vec!["config has no stage.* section".into()]))?;
    let needs = corpus_needs(section);
    let mut errors = Vec::new();
    if needs.real && cfg.data.real_manifest.is_none() {
        errors.push("a stage mixes real data but data.real_manifest is not set".into());
    }
    if needs.synth && cfg.data.synth_manifest.is_none() {
        errors.push("a stage mixes synthetic data but data.synth_manifest is not set".into());
    }
    if needs.synth && cfg.corruption.p_reverb > 0.0 && cfg.data.air_dir.is_none() {
        errors.push("synthetic data is corrupted (p_reverb > 0) but data.air_dir is not set".into());
    }
    if needs.synth && cfg.corruption.p_noise > 0.0 && cfg.data.noise_dir.is_none() {
        errors.push("synthetic data is corrupted (p_noise > 0) but data.noise_dir is not set".into());
    }
    if !errors.is_empty() {
        return Err(config_errs(errors));
    }

    let real = match &cfg.data.real_manifest {
        Some(m) if needs.real => load_corpus(m, &cfg.vocab).map_err(runtime)?,
        _ => Vec::new(),
    };
    let synth = match &cfg.data.synth_manifest {
        Some(m) if needs.synth => load_corpus(m, &cfg.vocab).map_err(runtime)?,
        _ => Vec::new(),
    };
    let air_pool = match &cfg.data.air_dir {
        Some(d) if needs.synth => load_air_pool(d).map_err(runtime)?,
        _ => Vec::new(),
    };
    let noise_pool = match &cfg.data.noise_dir {
        Some(d) if needs.synth => load_wav_pool(d).map_err(runtime)?,
        _ => Vec::new(),
    };

    let (mut model, mut adam, resume) = restore_model(cfg, section)?;

    let env = TrainEnv {
        real: &real,
        synth: &synth,
        air_pool: &air_pool,
        noise_pool: &noise_pool,
        policy: cfg.corruption.clone(),
        spec_augment: cfg.spec_augment.clone(),
        features: cfg.features.clone(),
        adam: Default::default(),
        grad_clip: section.grad_clip,
    };

    let ckpt_dir = cfg.out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| runtime(e.into()))?;
    let log_path = cfg.out_dir.join("train.log");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| runtime(e.into()))?,
    );

    let opts = RecipeOptions {
        checkpoint_dir: Some(&ckpt_dir),
        checkpoint_every: section.checkpoint_every,
        resume: resume.clone(),
    };
    let report = run_recipe(&mut model, &mut adam, &env, &section.stages, &opts, &mut log)
        .map_err(runtime)?;
    log.flush().map_err(|e| runtime(e.into()))?;

    // the last stage's boundary checkpoint doubles as the final model
    let last_stage = section.stages.len();
    let final_checkpoint = ckpt_dir.join("final.ckpt");
    std::fs::copy(ckpt_dir.join(format!("stage{last_stage}.ckpt")), &final_checkpoint)
        .map_err(|e| runtime(e.into()))?;

    let summary = TrainSummary {
        stages: report
            .stages
            .iter()
            .map(|s| StageSummary {
                name: s.name.clone(),
                steps: s.records.len() as u64,
                final_loss: s.final_loss().unwrap_or(f64::NAN),
                mean_loss_last_20: s.mean_loss(20).unwrap_or(f64::NAN),
                final_lr: s.records.last().map(|r| r.lr).unwrap_or(f64::NAN),
                final_penalty: s.records.last().map(|r| r.penalty).unwrap_or(f64::NAN),
            })
            .collect(),
        final_checkpoint: "checkpoints/final.ckpt".into(),
        resumed: resume.is_some(),
    };
    let summary_path = cfg.out_dir.join("summary.json");
    let body = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&summary_path, body.as_bytes())?;
    Ok(TrainOutcome { final_checkpoint, summary: summary_path })
}

struct CorpusNeeds {
    real: bool,
    synth: bool,
}

fn corpus_needs(section: &TrainSection) -> CorpusNeeds {
    CorpusNeeds {
        real: section.stages.iter().any(|s| s.mix.real_pct > 0.0),
        synth: section.stages.iter().any(|s| s.mix.synth_pct > 0.0),
    }
}

/// Builds the model/optimizer: fresh, from an initial checkpoint (parameters
/// only), or fully resumed (parameters, moments, recipe position, snapshot).
fn restore_model(
    cfg: &RunConfig,
    section: &TrainSection,
) -> CliResult<(RnntModel, AdamState, Option<ResumePoint>)> {
    if let Some(path) = &section.resume {
        let ckpt = checkpoint::load(path).map_err(runtime)?;
        check_ckpt_config(cfg, &ckpt)?;
        let model = RnntModel::from_parts(ckpt.config, ckpt.store).map_err(runtime)?;
        let adam = ckpt
            .adam
            .ok_or_else(|| config_errs(vec![format!(
                "checkpoint {} has no optimizer state; cannot resume",
                path.display()
            )]))?;
        let position = ckpt.position.unwrap_or(RecipePosition { stage_index: 0, step: 0 });
        if position.stage_index as usize >= section.stages.len() && position.step == 0 {
            return Err(config_errs(vec![format!(
                "checkpoint {} is already past the final stage",
                path.display()
            )]));
        }
        let resume = ResumePoint {
            stage_index: position.stage_index as usize,
            step: position.step,
            snapshot: ckpt.snapshot,
        };
        Ok((model, adam, Some(resume)))
    } else if let Some(path) = &section.init_checkpoint {
        let ckpt = checkpoint::load(path).map_err(runtime)?;
        check_ckpt_config(cfg, &ckpt)?;
        let model = RnntModel::from_parts(ckpt.config, ckpt.store).map_err(runtime)?;
        let adam = AdamState::new(&model.store);
        Ok((model, adam, None))
    } else {
        let model = RnntModel::init(cfg.model.clone(), cfg.seed).map_err(runtime)?;
        let adam = AdamState::new(&model.store);
        Ok((model, adam, None))
    }
}

fn check_ckpt_config(cfg: &RunConfig, ckpt: &Checkpoint) -> CliResult<()> {
    if ckpt.config != cfg.model {
        return Err(config_errs(vec![format!(
            "checkpoint model config {:?} does not match configured {:?}",
            ckpt.config, cfg.model
        )]));
    }
    Ok(())
}

pub struct EvalOutcome {
    pub report: PathBuf,
    pub summary: EvalSummary,
    pub nwer: Option<f64>,
}

/// Decodes every manifest utterance with a checkpointed model and writes the
/// per-utterance report plus aggregate WER (and NWER when a baseline report
/// is supplied).
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<EvalOutcome> {
    let section = cfg
        .eval
        .as_ref()
        .ok_or_else(|| config_errs(vec!["config has no eval.* section".into()]))?;
    let ckpt = checkpoint::load(&section.checkpoint).map_err(runtime)?;
    if ckpt.config.vocab_size != cfg.vocab.size() {
        return Err(config_errs(vec![format!(
            "checkpoint vocab size {} does not match vocabulary {}",
            ckpt.config.vocab_size,
            cfg.vocab.size()
        )]));
    }
    if ckpt.config.input_dim != cfg.features.stacked_dim() {
        return Err(config_errs(vec![format!(
            "checkpoint input dim {} does not match stacked feature dim {}",
            ckpt.config.input_dim,
            cfg.features.stacked_dim()
        )]));
    }
    let model = RnntModel::from_parts(ckpt.config, ckpt.store).map_err(runtime)?;
    let corpus = load_corpus(&section.manifest, &cfg.vocab).map_err(runtime)?;

    let mut rows = Vec::with_capacity(corpus.len());
    for utt in &corpus {
        let (reference, hypothesis) = decode_one(&model, cfg, utt, section.max_emit_per_frame)?;
        let ref_words: Vec<&str> = reference.split_whitespace().collect();
        let hyp_words: Vec<&str> = hypothesis.split_whitespace().collect();
        let report = wer(&ref_words, &hyp_words).map_err(runtime)?;
        rows.push(UtteranceEval { id: utt.id.clone(), reference, hypothesis, report });
    }
    let summary = summarize(&rows).map_err(runtime)?;

    let nwer_vs = match &section.baseline_report {
        Some(path) => {
            let baseline_wer = read_report_wer(path).map_err(runtime)?;
            let value = nwer(summary.wer, baseline_wer).map_err(runtime)?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("baseline").to_string();
            Some((value, name))
        }
        None => None,
    };

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| runtime(e.into()))?;
    let report_path = cfg.out_dir.join(&section.report_name);
    write_report(
        &report_path,
        &rows,
        &summary,
        nwer_vs.as_ref().map(|(v, n)| (*v, n.as_str())),
    )
    .map_err(runtime)?;
    Ok(EvalOutcome { report: report_path, summary, nwer: nwer_vs.map(|(v, _)| v) })
}

fn decode_one(
    model: &RnntModel,
    cfg: &RunConfig,
    utt: &Utterance,
    max_emit: usize,
) -> CliResult<(String, String)> {
    let feats = log_mel(&utt.waveform, &cfg.features).map_err(runtime)?;
    let stacked = stack_downsample(&feats, &cfg.features);
    let hyp = greedy_decode(model, &stacked, max_emit).map_err(runtime)?;
    let text = cfg.vocab.detokenize(&hyp.tokens).map_err(runtime)?;
    Ok((utt.transcript.clone(), text))
}

/// Decodes a manifest and writes `id \t hypothesis \t score` lines.
pub fn cmd_decode(cfg: &RunConfig) -> CliResult<PathBuf> {
    let section = cfg
        .decode
        .as_ref()
        .ok_or_else(|| config_errs(vec!["config has no decode.* section".into()]))?;
    let ckpt = checkpoint::load(&section.checkpoint).map_err(runtime)?;
    let model = RnntModel::from_parts(ckpt.config, ckpt.store).map_err(runtime)?;
    let corpus = load_corpus(&section.manifest, &cfg.vocab).map_err(runtime)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| runtime(e.into()))?;
    let out_path = cfg.out_dir.join(&section.out_name);
    let mut body = String::new();
    for utt in &corpus {
        let feats = log_mel(&utt.waveform, &cfg.features).map_err(runtime)?;
        let stacked = stack_downsample(&feats, &cfg.features);
        let hyp = greedy_decode(&model, &stacked, section.max_emit_per_frame).map_err(runtime)?;
        let text = cfg.vocab.detokenize(&hyp.tokens).map_err(runtime)?;
        body.push_str(&format!("{}\t{}\t{:.6}\n", utt.id, text, hyp.score));
    }
    write_atomic(&out_path, body.as_bytes())?;
    Ok(out_path)
}

/// Applies the corruption policy once per utterance and writes the corrupted
/// audio plus an outcome log, for listening and inspection.
pub fn cmd_corrupt_preview(cfg: &RunConfig) -> CliResult<PathBuf> {
    let section = cfg
        .corrupt_preview
        .as_ref()
        .ok_or_else(|| config_errs(vec!["config has no corrupt_preview.* section".into()]))?;
    let mut errors = Vec::new();
    if cfg.corruption.p_reverb > 0.0 && cfg.data.air_dir.is_none() {
        errors.push("corrupt preview needs data.air_dir (p_reverb > 0)".into());
    }
    if cfg.corruption.p_noise > 0.0 && cfg.data.noise_dir.is_none() {
        errors.push("corrupt preview needs data.noise_dir (p_noise > 0)".into());
    }
    if !errors.is_empty() {
        return Err(config_errs(errors));
    }
    let air_pool: Vec<AcousticImpulseResponse> = match &cfg.data.air_dir {
        Some(d) => load_air_pool(d).map_err(runtime)?,
        None => Vec::new(),
    };
    let noise_pool: Vec<Waveform> = match &cfg.data.noise_dir {
        Some(d) => load_wav_pool(d).map_err(runtime)?,
        None => Vec::new(),
    };
    let corpus = load_corpus(&section.manifest, &cfg.vocab).map_err(runtime)?;
    let take = section.count.unwrap_or(corpus.len()).min(corpus.len());
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| runtime(e.into()))?;

    let mut outcomes = String::new();
    for (i, utt) in corpus.iter().take(take).enumerate() {
        let seed = derive_seed(cfg.seed, &[0xC0FF, i as u64]);
        let (wave, outcome) =
            corrupt(&utt.waveform, &cfg.corruption, &air_pool, &noise_pool, seed)
                .map_err(runtime)?;
        let file = format!("{}-corrupt.wav", utt.id);
        write_wav(&cfg.out_dir.join(&file), &wave).map_err(runtime)?;
        outcomes.push_str(&format!(
            "{}\t{}\treverb={}\tnoise={}\tsnr_db={}\n",
            utt.id,
            file,
            outcome.reverb.map(|x| x.to_string()).unwrap_or_else(|| "-".into()),
            outcome.noise.map(|x| x.to_string()).unwrap_or_else(|| "-".into()),
            outcome.snr_db.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into()),
        ));
    }
    let out_path = cfg.out_dir.join("corrupt-outcomes.tsv");
    write_atomic(&out_path, outcomes.as_bytes())?;
    Ok(out_path)
}

/// Extracts features from one WAV and writes the binary dump.
pub fn cmd_features_dump(cfg: &RunConfig) -> CliResult<PathBuf> {
    let section = cfg
        .features_dump
        .as_ref()
        .ok_or_else(|| config_errs(vec!["config has no features_dump.* section".into()]))?;
    let wave = read_wav(&section.wav).map_err(runtime)?;
    let feats = log_mel(&wave, &cfg.features).map_err(runtime)?;
    let out = if section.stacked { stack_downsample(&feats, &cfg.features) } else { feats };
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| runtime(e.into()))?;
    let out_path = cfg.out_dir.join(&section.out_name);
    write_feature_dump(&out_path, &out).map_err(runtime)?;
    Ok(out_path)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| runtime(e.into()))?;
    std::fs::rename(&tmp, path).map_err(|e| runtime(e.into()))?;
    Ok(())
}
