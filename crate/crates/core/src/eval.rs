//! Greedy transducer decoding and word-error-rate evaluation.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::RnntModel;
use crate::vocab::BLANK;

pub const DEFAULT_MAX_EMIT_PER_FRAME: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    /// Total log-probability of the greedy path (labels and blanks).
    pub score: f64,
}

/// Frame-synchronous greedy decoding: at each frame take the argmax symbol
/// (ties break to the lowest id); blank advances the frame, a label advances
/// the decoder state and re-evaluates the same frame, with at most
/// `max_emit_per_frame` labels per frame.
pub fn greedy_decode(
    model: &RnntModel,
    feats: &FeatureMatrix,
    max_emit_per_frame: usize,
) -> Result<Hypothesis> {
    let (enc_states, _) = model.encode(feats)?;
    let mut state = model.decoder_start();
    let mut tokens = Vec::new();
    let mut score = 0.0;
    for t in 0..enc_states.nrows() {
        let mut emitted = 0;
        loop {
            let logits = model.joint_step(enc_states.row(t), &state.out);
            let (best, lp) = argmax_log_prob(&logits);
            score += lp;
            if best == BLANK {
                break;
            }
            tokens.push(best);
            state = model.decoder_advance(&state, best)?;
            emitted += 1;
            if emitted >= max_emit_per_frame {
                break;
            }
        }
    }
    Ok(Hypothesis { tokens, score })
}

/// Argmax index (lowest id on ties) and its log-softmax value.
fn argmax_log_prob(logits: &ndarray::Array1<f64>) -> (u32, f64) {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    let m = logits[best];
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    (best as u32, logits[best] - lse)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_words: usize,
    pub wer: f64,
}

impl WerReport {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Levenshtein alignment with unit costs. Cost ties prefer substitution,
/// then insertion, then deletion; the tie rule only affects the reported
/// counts, never the error total.
pub fn wer(reference: &[&str], hypothesis: &[&str]) -> Result<WerReport> {
    if reference.is_empty() {
        return Err(Error::invalid("reference must be nonempty"));
    }
    let n = reference.len();
    let m = hypothesis.len();
    // per cell: total cost plus the op counts of one preferred alignment
    #[derive(Clone, Copy)]
    struct Cell {
        cost: usize,
        s: usize,
        i: usize,
        d: usize,
    }
    let mut dp = vec![vec![Cell { cost: 0, s: 0, i: 0, d: 0 }; m + 1]; n + 1];
    for i in 1..=n {
        dp[i][0] = Cell { cost: i, s: 0, i: 0, d: i };
    }
    for j in 1..=m {
        dp[0][j] = Cell { cost: j, s: 0, i: j, d: 0 };
    }
    for i in 1..=n {
        for j in 1..=m {
            let hit = reference[i - 1] == hypothesis[j - 1];
            let diag = {
                let mut c = dp[i - 1][j - 1];
                if !hit {
                    c.cost += 1;
                    c.s += 1;
                }
                c
            };
            let ins = {
                let mut c = dp[i][j - 1];
                c.cost += 1;
                c.i += 1;
                c
            };
            let del = {
                let mut c = dp[i - 1][j];
                c.cost += 1;
                c.d += 1;
                c
            };
            // preference order on equal cost: substitution/match, insertion, deletion
            let mut best = diag;
            if ins.cost < best.cost {
                best = ins;
            }
            if del.cost < best.cost {
                best = del;
            }
            dp[i][j] = best;
        }
    }
    let cell = dp[n][m];
    Ok(WerReport {
        substitutions: cell.s,
        insertions: cell.i,
        deletions: cell.d,
        reference_words: n,
        wer: cell.cost as f64 / n as f64,
    })
}

/// Normalized WER: 100 * wer / baseline_wer.
pub fn nwer(wer_value: f64, baseline_wer: f64) -> Result<f64> {
    if baseline_wer <= 0.0 {
        return Err(Error::UndefinedBaseline(format!(
            "baseline WER must be positive, got {baseline_wer}"
        )));
    }
    Ok(100.0 * wer_value / baseline_wer)
}

/// Relative change (a - b) / b.
pub fn relative_change(a: f64, b: f64) -> Result<f64> {
    if b <= 0.0 {
        return Err(Error::invalid(format!("denominator must be positive, got {b}")));
    }
    Ok((a - b) / b)
}

/// Per-utterance evaluation row.
#[derive(Debug, Clone)]
pub struct UtteranceEval {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub report: WerReport,
}

/// Corpus-level aggregate: total errors over total reference words.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub utterances: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_words: usize,
    pub wer: f64,
}

pub fn summarize(rows: &[UtteranceEval]) -> Result<EvalSummary> {
    if rows.is_empty() {
        return Err(Error::invalid("cannot summarize an empty evaluation"));
    }
    let mut s = EvalSummary {
        utterances: rows.len(),
        substitutions: 0,
        insertions: 0,
        deletions: 0,
        reference_words: 0,
        wer: 0.0,
    };
    for r in rows {
        s.substitutions += r.report.substitutions;
        s.insertions += r.report.insertions;
        s.deletions += r.report.deletions;
        s.reference_words += r.report.reference_words;
    }
    s.wer = (s.substitutions + s.insertions + s.deletions) as f64 / s.reference_words as f64;
    Ok(s)
}

/// Writes the evaluation report: one `utt` line per utterance plus a
/// `summary` block, tab-separated. NWER appears only when a baseline was
/// supplied.
pub fn write_report(
    path: &Path,
    rows: &[UtteranceEval],
    summary: &EvalSummary,
    nwer_vs: Option<(f64, &str)>,
) -> Result<()> {
    let tmp = crate::audio::temp_path(path)?;
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for r in rows {
            writeln!(
                f,
                "utt\t{}\t{}\t{}\tsub={}\tins={}\tdel={}",
                r.id,
                r.reference,
                r.hypothesis,
                r.report.substitutions,
                r.report.insertions,
                r.report.deletions
            )?;
        }
        writeln!(f, "summary\tutterances\t{}", summary.utterances)?;
        writeln!(f, "summary\tsubstitutions\t{}", summary.substitutions)?;
        writeln!(f, "summary\tinsertions\t{}", summary.insertions)?;
        writeln!(f, "summary\tdeletions\t{}", summary.deletions)?;
        writeln!(f, "summary\treference_words\t{}", summary.reference_words)?;
        writeln!(f, "summary\twer\t{:.9}", summary.wer)?;
        if let Some((value, baseline)) = nwer_vs {
            writeln!(f, "summary\tnwer\t{:.6}\tbaseline\t{}", value, baseline)?;
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a report's aggregate WER back, recomputed exactly from the integer
/// counts so baselines do not lose precision through formatting.
pub fn read_report_wer(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path)?;
    let mut errors: Option<usize> = None;
    let mut words: Option<usize> = None;
    let mut total_err = 0usize;
    for line in text.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.first() != Some(&"summary") || fields.len() < 3 {
            continue;
        }
        let value = fields[2];
        match fields[1] {
            "substitutions" | "insertions" | "deletions" => {
                total_err += value.parse::<usize>().map_err(|_| bad_report(path, line))?;
                errors = Some(total_err);
            }
            "reference_words" => {
                words = Some(value.parse().map_err(|_| bad_report(path, line))?);
            }
            _ => {}
        }
    }
    match (errors, words) {
        (Some(e), Some(w)) if w > 0 => Ok(e as f64 / w as f64),
        _ => Err(bad_report(path, "missing summary counts")),
    }
}

fn bad_report(path: &Path, what: &str) -> Error {
    Error::CorruptFile { path: path.display().to_string(), reason: format!("bad report: {what}") }
}
