//! Flat key-value run configuration.
//!
//! Syntax: one `key = value` per line, `#` comments, dotted section keys
//! (`stage.1.steps = 400`). Parsing and validation are total: every problem
//! in the file is collected and reported before any command does work, and
//! unknown keys are rejected.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use mimic::augment::{CorruptionPolicy, SpecAugmentConfig};
use mimic::corpus::Source;
use mimic::features::FeatureConfig;
use mimic::model::ModelConfig;
use mimic::params::Component;
use mimic::rng::derive_seed;
use mimic::train::{ElasticSpec, LrSchedule, MixWeights, StageConfig};
use mimic::vocab::Vocabulary;

use crate::CliError;

struct Entry {
    value: String,
    line: usize,
    used: Cell<bool>,
}

pub struct KvFile {
    entries: BTreeMap<String, Entry>,
    path: PathBuf,
}

impl KvFile {
    pub fn parse(path: &Path) -> Result<Self, Vec<String>> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return Err(vec![format!("cannot read config {}: {e}", path.display())]),
        };
        let mut entries = BTreeMap::new();
        let mut errors = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                errors.push(format!("line {line}: expected `key = value`, got {stripped:?}"));
                continue;
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                errors.push(format!("line {line}: empty key"));
                continue;
            }
            if entries
                .insert(key.clone(), Entry { value, line, used: Cell::new(false) })
                .is_some()
            {
                errors.push(format!("line {line}: duplicate key {key:?}"));
            }
        }
        if errors.is_empty() {
            Ok(KvFile { entries, path: path.to_path_buf() })
        } else {
            Err(errors)
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| {
            e.used.set(true);
            e.value.as_str()
        })
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Keys in a dotted section, e.g. section "stage" matches "stage.1.steps".
    fn section_keys(&self, section: &str) -> Vec<&str> {
        let prefix = format!("{section}.");
        self.entries.keys().filter(|k| k.starts_with(&prefix)).map(String::as_str).collect()
    }

    fn unused(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| !e.used.get())
            .map(|(k, e)| format!("line {}: unknown key {k:?}", e.line))
            .collect()
    }
}

/// Typed getters that collect errors instead of failing fast.
struct Getter<'a> {
    file: &'a KvFile,
    errors: Vec<String>,
}

impl<'a> Getter<'a> {
    fn new(file: &'a KvFile) -> Self {
        Getter { file, errors: Vec::new() }
    }

    fn err(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.file.raw(key).map(str::to_string)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, kind: &str) -> Option<T> {
        let raw = self.file.raw(key)?;
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.err(format!("key {key:?}: {raw:?} is not a valid {kind}"));
                None
            }
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> u64 {
        self.parse::<u64>(key, "integer").unwrap_or(default)
    }

    fn usize_or(&mut self, key: &str, default: usize) -> usize {
        self.parse::<usize>(key, "integer").unwrap_or(default)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> f64 {
        self.parse::<f64>(key, "number").unwrap_or(default)
    }

    fn bool_or(&mut self, key: &str, default: bool) -> bool {
        match self.file.raw(key) {
            None => default,
            Some("true") | Some("yes") | Some("on") => true,
            Some("false") | Some("no") | Some("off") => false,
            Some(other) => {
                let msg = format!("key {key:?}: {other:?} is not a boolean");
                self.err(msg);
                default
            }
        }
    }

    /// Path relative to the config file's directory.
    fn path(&mut self, key: &str) -> Option<PathBuf> {
        let raw = self.string(key)?;
        let base = self.file.path.parent().unwrap_or_else(|| Path::new("."));
        Some(base.join(raw))
    }

    fn existing_path(&mut self, key: &str) -> Option<PathBuf> {
        let p = self.path(key)?;
        if !p.exists() {
            self.err(format!("key {key:?}: path {} does not exist", p.display()));
            return None;
        }
        Some(p)
    }

    fn required_existing_path(&mut self, key: &str) -> Option<PathBuf> {
        if !self.file.has(key) {
            self.err(format!("missing required key {key:?}"));
            return None;
        }
        self.existing_path(key)
    }
}

#[derive(Debug, Clone)]
pub struct DataSection {
    pub real_manifest: Option<PathBuf>,
    pub synth_manifest: Option<PathBuf>,
    pub air_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SynthSection {
    pub templates: PathBuf,
    pub slot_words: PathBuf,
    pub pool_size: usize,
    pub pool_seed: u64,
    pub profiles_per_text: usize,
    pub source: Source,
    pub id_prefix: String,
}

#[derive(Debug, Clone)]
pub struct TrainSection {
    pub stages: Vec<StageConfig>,
    pub init_checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub checkpoint_every: u64,
    pub grad_clip: f64,
}

#[derive(Debug, Clone)]
pub struct EvalSection {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub baseline_report: Option<PathBuf>,
    pub report_name: String,
    pub max_emit_per_frame: usize,
}

#[derive(Debug, Clone)]
pub struct DecodeSection {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub out_name: String,
    pub max_emit_per_frame: usize,
}

#[derive(Debug, Clone)]
pub struct CorruptPreviewSection {
    pub manifest: PathBuf,
    pub count: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FeaturesDumpSection {
    pub wav: PathBuf,
    pub out_name: String,
    pub stacked: bool,
}

/// Fully parsed and validated run configuration.
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub vocab_path: PathBuf,
    pub vocab: Vocabulary,
    pub model: ModelConfig,
    pub features: FeatureConfig,
    pub corruption: CorruptionPolicy,
    pub spec_augment: SpecAugmentConfig,
    pub data: DataSection,
    pub synth: Option<SynthSection>,
    pub train: Option<TrainSection>,
    pub eval: Option<EvalSection>,
    pub decode: Option<DecodeSection>,
    pub corrupt_preview: Option<CorruptPreviewSection>,
    pub features_dump: Option<FeaturesDumpSection>,
}

impl RunConfig {
    pub fn load(
        path: &Path,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<RunConfig, CliError> {
        let file = KvFile::parse(path).map_err(CliError::Config)?;
        let mut g = Getter::new(&file);

        let seed = match seed_override {
            Some(s) => {
                let _ = g.string("seed"); // consumed even when overridden
                s
            }
            None => match g.parse::<u64>("seed", "integer") {
                Some(s) => s,
                None => {
                    if !file.has("seed") {
                        g.err("missing required key \"seed\" (explicit seeds only)");
                    }
                    0
                }
            },
        };
        let out_dir = match out_override {
            Some(o) => {
                let _ = g.string("out_dir");
                o
            }
            None => g.path("out_dir").unwrap_or_else(|| {
                g.err("missing required key \"out_dir\" (or pass --out)");
                PathBuf::from(".")
            }),
        };

        let vocab_path = g.required_existing_path("vocab").unwrap_or_default();
        let vocab = if vocab_path.as_os_str().is_empty() {
            None
        } else {
            match Vocabulary::from_file(&vocab_path) {
                Ok(v) => Some(v),
                Err(e) => {
                    g.err(format!("vocab file {}: {e}", vocab_path.display()));
                    None
                }
            }
        };

        let features = FeatureConfig {
            n_mels: g.usize_or("features.n_mels", 64),
            window_ms: g.f64_or("features.window_ms", 25.0),
            shift_ms: g.f64_or("features.shift_ms", 10.0),
            stack_left: g.usize_or("features.stack_left", 2),
            downsample: g.usize_or("features.downsample", 3),
            log_floor: g.f64_or("features.log_floor", 1e-10),
            normalize: g.bool_or("features.normalize", false),
        };
        if let Err(e) = features.validate() {
            g.err(format!("features: {e}"));
        }

        let defaults = ModelConfig::default();
        let vocab_size = vocab.as_ref().map(|v| v.size()).unwrap_or(defaults.vocab_size);
        let model = ModelConfig {
            enc_layers: g.usize_or("model.enc_layers", defaults.enc_layers),
            enc_units: g.usize_or("model.enc_units", defaults.enc_units),
            dec_layers: g.usize_or("model.dec_layers", defaults.dec_layers),
            dec_units: g.usize_or("model.dec_units", defaults.dec_units),
            proj_dim: g.usize_or("model.proj_dim", defaults.proj_dim),
            joint_units: g.usize_or("model.joint_units", defaults.joint_units),
            vocab_size,
            input_dim: g.usize_or("model.input_dim", features.stacked_dim()),
        };
        if let Err(e) = model.validate() {
            g.err(format!("model: {e}"));
        }
        if model.input_dim != features.stacked_dim() {
            g.err(format!(
                "model.input_dim {} does not match stacked feature dim {}",
                model.input_dim,
                features.stacked_dim()
            ));
        }

        let corruption = CorruptionPolicy {
            p_reverb: g.f64_or("corruption.p_reverb", 0.6),
            p_noise: g.f64_or("corruption.p_noise", 0.6),
            snr_low_db: g.f64_or("corruption.snr_low_db", 10.0),
            snr_high_db: g.f64_or("corruption.snr_high_db", 20.0),
        };
        if let Err(e) = corruption.validate() {
            g.err(format!("corruption: {e}"));
        }

        let spec_augment = SpecAugmentConfig {
            n_freq_masks: g.usize_or("specaugment.n_freq_masks", 2),
            max_freq_fraction: g.f64_or("specaugment.max_freq_fraction", 0.375),
            max_time_mask_fraction: g.f64_or("specaugment.max_time_mask_fraction", 0.05),
            time_mask_count_fraction: g.f64_or("specaugment.time_mask_count_fraction", 0.05),
            time_mask_count_cap: g.usize_or("specaugment.time_mask_count_cap", 10),
        };
        if let Err(e) = spec_augment.validate() {
            g.err(format!("specaugment: {e}"));
        }

        let data = DataSection {
            real_manifest: g.existing_path("data.real_manifest"),
            synth_manifest: g.existing_path("data.synth_manifest"),
            air_dir: g.existing_path("data.air_dir"),
            noise_dir: g.existing_path("data.noise_dir"),
        };

        let synth = parse_synth(&mut g, seed);
        let train = parse_train(&mut g, seed, &file);
        let eval = parse_eval(&mut g, &file);
        let decode = parse_decode(&mut g, &file);
        let corrupt_preview = parse_corrupt_preview(&mut g, &file);
        let features_dump = parse_features_dump(&mut g, &file);

        let mut errors = g.errors;
        errors.extend(file.unused());
        if !errors.is_empty() {
            return Err(CliError::Config(errors));
        }
        Ok(RunConfig {
            seed,
            out_dir,
            vocab_path,
            vocab: vocab.expect("validated above"),
            model,
            features,
            corruption,
            spec_augment,
            data,
            synth,
            train,
            eval,
            decode,
            corrupt_preview,
            features_dump,
        })
    }
}

fn parse_synth(g: &mut Getter, seed: u64) -> Option<SynthSection> {
    if !g.file.has("synth.templates") && !g.file.has("synth.slot_words") {
        return None;
    }
    let templates = g.required_existing_path("synth.templates");
    let slot_words = g.required_existing_path("synth.slot_words");
    let source = match g.string("synth.source").as_deref() {
        None => Source::Synthetic,
        Some(s) => match Source::parse(s) {
            Ok(v) => v,
            Err(_) => {
                g.err(format!("synth.source: {s:?} must be real or synthetic"));
                Source::Synthetic
            }
        },
    };
    let pool_size = g.usize_or("synth.pool_size", 500);
    if pool_size == 0 {
        g.err("synth.pool_size must be at least 1");
    }
    let profiles_per_text = g.usize_or("synth.profiles_per_text", 1);
    if profiles_per_text == 0 {
        g.err("synth.profiles_per_text must be at least 1");
    }
    Some(SynthSection {
        templates: templates?,
        slot_words: slot_words?,
        pool_size,
        pool_seed: g.u64_or("synth.pool_seed", seed),
        profiles_per_text,
        source,
        id_prefix: g.string("synth.id_prefix").unwrap_or_else(|| "synth".into()),
    })
}

fn parse_train(g: &mut Getter, seed: u64, file: &KvFile) -> Option<TrainSection> {
    let stage_keys = file.section_keys("stage");
    let has_train = !stage_keys.is_empty() || !file.section_keys("train").is_empty();
    if !has_train {
        return None;
    }
    // stage indices must be 1..=n contiguous
    let mut indices = BTreeSet::new();
    for key in &stage_keys {
        let rest = &key["stage.".len()..];
        match rest.split('.').next().and_then(|i| i.parse::<usize>().ok()) {
            Some(i) if i >= 1 => {
                indices.insert(i);
            }
            _ => g.err(format!("bad stage key {key:?} (expected stage.<n>.<field>)")),
        }
    }
    let n = indices.len();
    if n == 0 {
        g.err("train section present but no stage.<n>.* keys found");
        return None;
    }
    if indices.iter().copied().ne(1..=n) {
        g.err(format!("stage indices must be contiguous from 1, got {indices:?}"));
    }

    let mut stages = Vec::with_capacity(n);
    for i in 1..=n {
        let pre = |f: &str| format!("stage.{i}.{f}");
        // either weight may be given alone; the other is its complement
        let has_real = g.file.has(&pre("mix.real_pct"));
        let has_synth = g.file.has(&pre("mix.synth_pct"));
        let (real_pct, synth_pct) = match (has_real, has_synth) {
            (false, false) => (100.0, 0.0),
            (true, false) => {
                let r = g.f64_or(&pre("mix.real_pct"), 100.0);
                (r, 100.0 - r)
            }
            (false, true) => {
                let s = g.f64_or(&pre("mix.synth_pct"), 0.0);
                (100.0 - s, s)
            }
            (true, true) => (
                g.f64_or(&pre("mix.real_pct"), 100.0),
                g.f64_or(&pre("mix.synth_pct"), 0.0),
            ),
        };
        let mix = match MixWeights::new(real_pct, synth_pct) {
            Ok(m) => m,
            Err(e) => {
                g.err(format!("stage {i}: {e}"));
                MixWeights::real_only()
            }
        };
        let elastic = if g.file.has(&pre("elastic.lambda")) {
            let lambda = g.f64_or(&pre("elastic.lambda"), 0.0);
            let scope_raw = g.string(&pre("elastic.scope")).unwrap_or_else(|| "decoder".into());
            let mut scope = BTreeSet::new();
            for part in scope_raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                match Component::parse(part) {
                    Ok(c) => {
                        scope.insert(c);
                    }
                    Err(_) => g.err(format!(
                        "stage {i}: elastic.scope component {part:?} unknown"
                    )),
                }
            }
            Some(ElasticSpec { lambda, scope })
        } else {
            None
        };
        let peak_lr = g.f64_or(&pre("schedule.peak_lr"), 1e-3);
        let schedule = LrSchedule {
            warmup_steps: g.u64_or(&pre("schedule.warmup_steps"), 0),
            hold_steps: g.u64_or(&pre("schedule.hold_steps"), 0),
            decay_steps: g.u64_or(&pre("schedule.decay_steps"), 0),
            peak_lr,
            final_lr: g.f64_or(&pre("schedule.final_lr"), peak_lr),
        };
        let steps = g.u64_or(&pre("steps"), 0);
        if !g.file.has(&pre("steps")) {
            g.err(format!("missing required key \"stage.{i}.steps\""));
        }
        let stage = StageConfig {
            name: g.string(&pre("name")).unwrap_or_else(|| format!("stage{i}")),
            mix,
            freeze_encoder: g.bool_or(&pre("freeze_encoder"), false),
            elastic,
            schedule,
            steps,
            batch_size: g.usize_or(&pre("batch_size"), 8),
            seed: g.u64_or(&pre("seed"), derive_seed(seed, &[0x57A6E, i as u64])),
        };
        if let Err(e) = stage.validate() {
            g.err(e.to_string());
        }
        stages.push(stage);
    }

    let init_checkpoint = g.existing_path("train.init_checkpoint");
    let resume = g.existing_path("train.resume");
    if init_checkpoint.is_some() && resume.is_some() {
        g.err("train.init_checkpoint and train.resume are mutually exclusive");
    }
    Some(TrainSection {
        stages,
        init_checkpoint,
        resume,
        checkpoint_every: g.u64_or("train.checkpoint_every", 0),
        grad_clip: g.f64_or("train.grad_clip", 5.0),
    })
}

fn parse_eval(g: &mut Getter, file: &KvFile) -> Option<EvalSection> {
    if file.section_keys("eval").is_empty() {
        return None;
    }
    let checkpoint = g.required_existing_path("eval.checkpoint");
    let manifest = g.required_existing_path("eval.manifest");
    let baseline_report = if file.has("eval.baseline_report") {
        g.required_existing_path("eval.baseline_report")
    } else {
        None
    };
    Some(EvalSection {
        checkpoint: checkpoint?,
        manifest: manifest?,
        baseline_report,
        report_name: g.string("eval.report").unwrap_or_else(|| "report.tsv".into()),
        max_emit_per_frame: g.usize_or("eval.max_emit_per_frame", 10),
    })
}

fn parse_decode(g: &mut Getter, file: &KvFile) -> Option<DecodeSection> {
    if file.section_keys("decode").is_empty() {
        return None;
    }
    let checkpoint = g.required_existing_path("decode.checkpoint");
    let manifest = g.required_existing_path("decode.manifest");
    Some(DecodeSection {
        checkpoint: checkpoint?,
        manifest: manifest?,
        out_name: g.string("decode.out").unwrap_or_else(|| "hypotheses.tsv".into()),
        max_emit_per_frame: g.usize_or("decode.max_emit_per_frame", 10),
    })
}

fn parse_corrupt_preview(g: &mut Getter, file: &KvFile) -> Option<CorruptPreviewSection> {
    if file.section_keys("corrupt_preview").is_empty() {
        return None;
    }
    let manifest = g.required_existing_path("corrupt_preview.manifest");
    let count = if file.has("corrupt_preview.count") {
        Some(g.usize_or("corrupt_preview.count", 0))
    } else {
        None
    };
    Some(CorruptPreviewSection { manifest: manifest?, count })
}

fn parse_features_dump(g: &mut Getter, file: &KvFile) -> Option<FeaturesDumpSection> {
    if file.section_keys("features_dump").is_empty() {
        return None;
    }
    let wav = g.required_existing_path("features_dump.wav");
    Some(FeaturesDumpSection {
        wav: wav?,
        out_name: g.string("features_dump.out").unwrap_or_else(|| "features.bin".into()),
        stacked: g.bool_or("features_dump.stacked", true),
    })
}
