//! Shared test-world construction: a small vocabulary of general and new
//! words, template files, impulse-response and noise pools, and rendered
//! corpora, all driven through the real CLI code paths.

use std::path::{Path, PathBuf};

use mimic::audio::{write_wav, Waveform, SAMPLE_RATE};
use mimic::rng::stream_rng;
use mimic_cli::{cmd_synth, RunConfig};
use rand::Rng;

pub const GENERAL_WORDS: [&str; 20] = [
    "play", "stop", "pause", "resume", "music", "radio", "lights", "alarm", "timer", "volume",
    "up", "down", "call", "home", "check", "weather", "time", "open", "take", "refill",
];

pub const NEW_WORDS: [&str; 5] = ["zyrtec", "lipitor", "prozac", "ambien", "xanax"];

pub const GENERAL_TEMPLATES: [&str; 10] = [
    "play {word}",
    "stop {word}",
    "check {word}",
    "open {word}",
    "{word} up",
    "{word} down",
    "pause {word}",
    "resume {word}",
    "call {word}",
    "take {word}",
];

pub const GENERAL_SLOT_WORDS: [&str; 10] = [
    "music", "radio", "lights", "alarm", "timer", "volume", "weather", "time", "home", "refill",
];

pub const MED_TEMPLATES: [&str; 5] =
    ["take {word}", "refill {word}", "check {word}", "open {word}", "stop {word}"];

/// Paths of a fully built toy world.
pub struct ToyWorld {
    pub root: PathBuf,
    pub vocab: PathBuf,
    pub air_dir: PathBuf,
    pub noise_dir: PathBuf,
    pub general_manifest: PathBuf,
    pub med_manifest: PathBuf,
    pub eval_gen_manifest: PathBuf,
    pub eval_new_manifest: PathBuf,
}

pub fn write_lines(path: &Path, lines: &[&str]) {
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

/// Exponentially decaying random impulse responses.
pub fn write_air_pool(dir: &Path, count: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = stream_rng(seed, &[0xA1A]);
    for i in 0..count {
        let len = rng.random_range(800..4000);
        let tau = rng.random_range(300.0..1500.0);
        let mut taps = vec![0.0f64; len];
        taps[0] = 1.0;
        for (n, tap) in taps.iter_mut().enumerate().skip(1) {
            let u: f64 = rng.random_range(-1.0..1.0);
            *tap = 0.35 * u * (-(n as f64) / tau).exp();
        }
        write_wav(&dir.join(format!("air-{i:02}.wav")), &Waveform::new(taps)).unwrap();
    }
}

/// Low-passed noise clips, one to two seconds long.
pub fn write_noise_pool(dir: &Path, count: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = stream_rng(seed, &[0xB0B]);
    for i in 0..count {
        let len = rng.random_range(SAMPLE_RATE as usize..2 * SAMPLE_RATE as usize);
        let alpha = rng.random_range(0.02..0.3);
        let mut state = 0.0f64;
        let samples: Vec<f64> = (0..len)
            .map(|_| {
                let white: f64 = rng.random_range(-1.0..1.0);
                state += alpha * (white - state);
                state * 0.5
            })
            .collect();
        write_wav(&dir.join(format!("noise-{i:02}.wav")), &Waveform::new(samples)).unwrap();
    }
}

/// Renders a corpus through `mimic synth` config/commands and returns its
/// manifest path.
#[allow(clippy::too_many_arguments)]
pub fn render_corpus(
    root: &Path,
    vocab: &Path,
    name: &str,
    templates: &[&str],
    slot_words: &[&str],
    profiles_per_text: usize,
    pool_size: usize,
    pool_seed: u64,
    source: &str,
    seed: u64,
) -> PathBuf {
    let tpl_path = root.join(format!("{name}-templates.txt"));
    let words_path = root.join(format!("{name}-words.txt"));
    write_lines(&tpl_path, templates);
    write_lines(&words_path, slot_words);
    let out_dir = root.join(name);
    let conf_path = root.join(format!("{name}-synth.conf"));
    let conf = format!(
        "seed = {seed}\n\
         out_dir = {}\n\
         vocab = {}\n\
         synth.templates = {}\n\
         synth.slot_words = {}\n\
         synth.pool_size = {pool_size}\n\
         synth.pool_seed = {pool_seed}\n\
         synth.profiles_per_text = {profiles_per_text}\n\
         synth.source = {source}\n\
         synth.id_prefix = {name}\n",
        out_dir.display(),
        vocab.display(),
        tpl_path.display(),
        words_path.display(),
    );
    std::fs::write(&conf_path, conf).unwrap();
    let cfg = RunConfig::load(&conf_path, None, None).unwrap();
    let outcome = cmd_synth(&cfg).unwrap();
    outcome.manifest
}

/// Builds the complete world: vocabulary, pools, the general corpus
/// (synthetic-as-real), the new-word corpus, and both eval sets.
pub fn build_world(root: &Path) -> ToyWorld {
    std::fs::create_dir_all(root).unwrap();
    let vocab = root.join("vocab.txt");
    // low token ids map to closely spaced fundamentals; park unused filler
    // entries there so the spoken words sit in the better-resolved band
    let fillers: Vec<String> = (1..=6).map(|i| format!("fill{i:02}")).collect();
    let mut all_words: Vec<&str> = fillers.iter().map(String::as_str).collect();
    all_words.extend(GENERAL_WORDS.iter().copied());
    all_words.extend(NEW_WORDS.iter().copied());
    write_lines(&vocab, &all_words);

    let air_dir = root.join("pools/air");
    let noise_dir = root.join("pools/noise");
    write_air_pool(&air_dir, 20, 11);
    write_noise_pool(&noise_dir, 20, 12);

    // training profile pool is shared (same pool seed) across corpora;
    // render seeds differ so eval draws fresh profile/jitter combinations
    let pool_seed = 404;
    let pool_size = 8;
    let general_manifest = render_corpus(
        root,
        &vocab,
        "corpus-general",
        &GENERAL_TEMPLATES,
        &GENERAL_SLOT_WORDS,
        24,
        pool_size,
        pool_seed,
        "real",
        1001,
    );
    let med_manifest = render_corpus(
        root,
        &vocab,
        "corpus-med",
        &MED_TEMPLATES,
        &NEW_WORDS,
        32,
        pool_size,
        pool_seed,
        "synthetic",
        1002,
    );
    let eval_gen_manifest = render_corpus(
        root,
        &vocab,
        "eval-gen",
        &GENERAL_TEMPLATES,
        &GENERAL_SLOT_WORDS,
        2,
        pool_size,
        pool_seed,
        "real",
        2001,
    );
    let eval_new_manifest = render_corpus(
        root,
        &vocab,
        "eval-new",
        &MED_TEMPLATES,
        &NEW_WORDS,
        8,
        pool_size,
        pool_seed,
        "real",
        2002,
    );

    ToyWorld {
        root: root.to_path_buf(),
        vocab,
        air_dir,
        noise_dir,
        general_manifest,
        med_manifest,
        eval_gen_manifest,
        eval_new_manifest,
    }
}

/// Fresh scratch directory under the target dir.
pub fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mimic-world-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
