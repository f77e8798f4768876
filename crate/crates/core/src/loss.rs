//! Transducer loss: negative log-probability of the target sequence summed
//! over all blank-augmented alignments, computed by forward-backward dynamic
//! programming in log space, with exact gradients w.r.t. the log-prob grid.
//!
//! A brute-force path enumerator serves as an independent oracle for small
//! lattices.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::vocab::BLANK;

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Largest T + U the brute-force enumerator accepts.
pub const BRUTE_FORCE_LIMIT: usize = 14;

fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// A T x (U+1) x V grid of per-state log output distributions plus the
/// target label sequence. Axis 1 index u means u target labels consumed.
#[derive(Debug, Clone)]
pub struct AlignmentLattice {
    pub log_probs: Array3<f64>,
    pub target: Vec<u32>,
}

impl AlignmentLattice {
    /// Validates shapes, label range, and per-state normalization
    /// (logsumexp of every [t,u,:] slice must be 0 within 1e-9).
    pub fn new(log_probs: Array3<f64>, target: Vec<u32>) -> Result<Self> {
        let (t_len, u_rows, vocab) = log_probs.dim();
        if t_len == 0 || u_rows != target.len() + 1 {
            return Err(Error::InvalidLattice(format!(
                "grid {t_len} x {u_rows} does not fit {} target labels",
                target.len()
            )));
        }
        for &label in &target {
            if label == BLANK || label as usize >= vocab {
                return Err(Error::invalid(format!(
                    "target label {label} outside [1, {vocab})"
                )));
            }
        }
        for t in 0..t_len {
            for u in 0..u_rows {
                let slice = log_probs.index_axis(ndarray::Axis(0), t);
                let row = slice.index_axis(ndarray::Axis(0), u);
                let m = row.iter().fold(NEG_INF, |a, &b| a.max(b));
                if !m.is_finite() {
                    return Err(Error::InvalidLattice(format!(
                        "state ({t},{u}) has no finite probabilities"
                    )));
                }
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
                if lse.abs() > 1e-9 {
                    return Err(Error::InvalidLattice(format!(
                        "state ({t},{u}) is not normalized (logsumexp {lse:.3e})"
                    )));
                }
            }
        }
        Ok(AlignmentLattice { log_probs, target })
    }

    pub fn frames(&self) -> usize {
        self.log_probs.dim().0
    }

    pub fn labels(&self) -> usize {
        self.target.len()
    }
}

#[derive(Debug, Clone)]
pub struct LossResult {
    /// -log P(target | encoder states); nonnegative for normalized lattices.
    pub loss: f64,
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    /// d loss / d log_probs, nonzero only for blank and next-label entries.
    pub grad_log_probs: Array3<f64>,
}

/// Forward-backward over a validated lattice.
pub fn transducer_loss(lattice: &AlignmentLattice) -> Result<LossResult> {
    Ok(forward_backward(&lattice.log_probs, &lattice.target))
}

/// Gradient of the loss w.r.t. every log-probability entry.
pub fn loss_gradients(lattice: &AlignmentLattice) -> Result<Array3<f64>> {
    Ok(forward_backward(&lattice.log_probs, &lattice.target).grad_log_probs)
}

/// Core recursion without lattice validation. The grid is treated as free
/// log-scores, which keeps finite-difference probing meaningful.
pub fn forward_backward(log_probs: &Array3<f64>, target: &[u32]) -> LossResult {
    let (t_len, u_rows, _) = log_probs.dim();
    let u_len = target.len();
    debug_assert_eq!(u_rows, u_len + 1);
    let blank = BLANK as usize;
    let label = |u: usize| target[u] as usize; // label consumed moving u -> u+1

    let mut alpha = Array2::from_elem((t_len, u_len + 1), NEG_INF);
    alpha[[0, 0]] = 0.0;
    for t in 0..t_len {
        for u in 0..=u_len {
            if t == 0 && u == 0 {
                continue;
            }
            let from_blank = if t > 0 {
                alpha[[t - 1, u]] + log_probs[[t - 1, u, blank]]
            } else {
                NEG_INF
            };
            let from_label = if u > 0 {
                alpha[[t, u - 1]] + log_probs[[t, u - 1, label(u - 1)]]
            } else {
                NEG_INF
            };
            alpha[[t, u]] = logsumexp2(from_blank, from_label);
        }
    }
    let total = alpha[[t_len - 1, u_len]] + log_probs[[t_len - 1, u_len, blank]];

    // beta includes the emission at its own state
    let mut beta = Array2::from_elem((t_len, u_len + 1), NEG_INF);
    for t in (0..t_len).rev() {
        for u in (0..=u_len).rev() {
            let blank_term = if t + 1 < t_len {
                log_probs[[t, u, blank]] + beta[[t + 1, u]]
            } else if u == u_len {
                log_probs[[t, u, blank]] // final mandatory blank
            } else {
                NEG_INF
            };
            let label_term = if u < u_len {
                log_probs[[t, u, label(u)]] + beta[[t, u + 1]]
            } else {
                NEG_INF
            };
            beta[[t, u]] = logsumexp2(blank_term, label_term);
        }
    }

    let mut grad = Array3::zeros(log_probs.raw_dim());
    if total > NEG_INF {
        for t in 0..t_len {
            for u in 0..=u_len {
                let a = alpha[[t, u]];
                if a == NEG_INF {
                    continue;
                }
                // blank transition (t,u) -> (t+1,u), or termination
                let blank_continuation = if t + 1 < t_len {
                    beta[[t + 1, u]]
                } else if u == u_len {
                    0.0
                } else {
                    NEG_INF
                };
                if blank_continuation > NEG_INF {
                    let occ = a + log_probs[[t, u, blank]] + blank_continuation - total;
                    grad[[t, u, blank]] = -occ.exp();
                }
                // label transition (t,u) -> (t,u+1)
                if u < u_len && beta[[t, u + 1]] > NEG_INF {
                    let k = label(u);
                    let occ = a + log_probs[[t, u, k]] + beta[[t, u + 1]] - total;
                    grad[[t, u, k]] = -occ.exp();
                }
            }
        }
    }

    LossResult { loss: -total, alpha, beta, grad_log_probs: grad }
}

#[derive(Debug, Clone, Copy)]
pub struct BruteForceResult {
    pub loss: f64,
    pub paths: u64,
}

/// Enumerates every interleaving of T blanks and U labels that ends with a
/// blank, sums the path probabilities, and returns the negative log.
pub fn brute_force(lattice: &AlignmentLattice) -> Result<BruteForceResult> {
    let t_len = lattice.frames();
    let u_len = lattice.labels();
    if t_len + u_len > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "T + U = {} exceeds enumeration bound {}",
            t_len + u_len,
            BRUTE_FORCE_LIMIT
        )));
    }
    let mut total = 0.0;
    let mut paths = 0u64;
    walk(&lattice.log_probs, &lattice.target, 0, 0, 1.0, &mut total, &mut paths);
    Ok(BruteForceResult { loss: -total.ln(), paths })
}

pub fn brute_force_loss(lattice: &AlignmentLattice) -> Result<f64> {
    Ok(brute_force(lattice)?.loss)
}

fn walk(
    log_probs: &Array3<f64>,
    target: &[u32],
    t: usize,
    u: usize,
    prob: f64,
    total: &mut f64,
    paths: &mut u64,
) {
    let (t_len, _, _) = log_probs.dim();
    let u_len = target.len();
    if t == t_len - 1 && u == u_len {
        *total += prob * log_probs[[t, u, BLANK as usize]].exp();
        *paths += 1;
        return;
    }
    if t + 1 < t_len {
        walk(
            log_probs,
            target,
            t + 1,
            u,
            prob * log_probs[[t, u, BLANK as usize]].exp(),
            total,
            paths,
        );
    }
    if u < u_len {
        walk(
            log_probs,
            target,
            t,
            u + 1,
            prob * log_probs[[t, u, target[u] as usize]].exp(),
            total,
            paths,
        );
    }
}

/// Uniform log-probability lattice, handy for closed-form checks.
pub fn uniform_lattice(t_len: usize, u_len: usize, vocab: usize) -> AlignmentLattice {
    let lp = (1.0 / vocab as f64).ln();
    let log_probs = Array3::from_elem((t_len, u_len + 1, vocab), lp);
    let target: Vec<u32> = (0..u_len).map(|u| 1 + (u % (vocab - 1)) as u32).collect();
    AlignmentLattice::new(log_probs, target).expect("uniform lattice is valid")
}

/// Random normalized lattice from a seeded generator.
pub fn random_lattice(t_len: usize, u_len: usize, vocab: usize, seed: u64) -> AlignmentLattice {
    use rand::Rng;
    let mut rng = crate::rng::stream_rng(seed, &[0xA77]);
    let mut log_probs = Array3::zeros((t_len, u_len + 1, vocab));
    for t in 0..t_len {
        for u in 0..=u_len {
            let logits: Vec<f64> = (0..vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m = logits.iter().cloned().fold(NEG_INF, f64::max);
            let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            for (v, &logit) in logits.iter().enumerate() {
                log_probs[[t, u, v]] = logit - lse;
            }
        }
    }
    let target: Vec<u32> = (0..u_len)
        .map(|_| rng.random_range(1..vocab as u32))
        .collect();
    AlignmentLattice::new(log_probs, target).expect("softmax rows are normalized")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_blank_uniform_is_ln2() {
        let lat = uniform_lattice(1, 0, 2);
        let res = transducer_loss(&lat).unwrap();
        assert!((res.loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_one_label_uniform_is_ln4() {
        let lat = uniform_lattice(2, 1, 2);
        let res = transducer_loss(&lat).unwrap();
        assert!((res.loss - 4.0f64.ln()).abs() < 1e-12);
        let bf = brute_force(&lat).unwrap();
        assert_eq!(bf.paths, 2);
        assert!((bf.loss - res.loss).abs() < 1e-12);
    }

    #[test]
    fn deterministic_path_has_zero_loss_and_zero_gradients() {
        // assign probability ~1 along the alignment blank,label,blank for T=2,U=1
        let big = 30.0;
        let mut logits = Array3::from_elem((2, 2, 3), -big);
        logits[[0, 0, 0]] = big; // blank at (0,0)
        logits[[1, 0, 1]] = big; // label 1 at (1,0)
        logits[[1, 1, 0]] = big; // final blank
        // remaining states don't matter but must be normalized; normalize all
        let mut log_probs = Array3::zeros((2, 2, 3));
        for t in 0..2 {
            for u in 0..2 {
                let row: Vec<f64> = (0..3).map(|v| logits[[t, u, v]]).collect();
                let m = row.iter().cloned().fold(NEG_INF, f64::max);
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
                for v in 0..3 {
                    log_probs[[t, u, v]] = logits[[t, u, v]] - lse;
                }
            }
        }
        let lat = AlignmentLattice::new(log_probs, vec![1]).unwrap();
        let res = transducer_loss(&lat).unwrap();
        assert!(res.loss >= 0.0);
        assert!(res.loss < 1e-12);
        // log-prob gradients on the sure path equal minus the occupancy (one)
        assert!((res.grad_log_probs[[0, 0, 0]] + 1.0).abs() < 1e-9);
        assert!((res.grad_log_probs[[1, 0, 1]] + 1.0).abs() < 1e-9);
        assert!((res.grad_log_probs[[1, 1, 0]] + 1.0).abs() < 1e-9);
        // zero loss is a stationary point of the training objective: the
        // logit gradients through the softmax all vanish
        let d_logits = crate::train::logit_grads(&lat.log_probs, &res.grad_log_probs);
        for &g in d_logits.iter() {
            assert!(g.abs() < 1e-9, "logit gradient should vanish on the sure path");
        }
    }

    #[test]
    fn path_counts_are_binomial() {
        let lat = uniform_lattice(3, 2, 3);
        let bf = brute_force(&lat).unwrap();
        assert_eq!(bf.paths, 6); // C(4, 2)
        let lat = uniform_lattice(4, 3, 3);
        assert_eq!(brute_force(&lat).unwrap().paths, 20); // C(6, 3)
    }

    #[test]
    fn oracle_agrees_on_random_lattices() {
        let mut cases = 0;
        for t_len in 1..=4 {
            for u_len in 0..=3 {
                for vocab in 2..=4 {
                    for rep in 0..5 {
                        let seed = (t_len * 1000 + u_len * 100 + vocab * 10 + rep) as u64;
                        let lat = random_lattice(t_len, u_len, vocab, seed);
                        let fb = transducer_loss(&lat).unwrap();
                        let bf = brute_force_loss(&lat).unwrap();
                        assert!(
                            (fb.loss - bf).abs() < 1e-9,
                            "T={t_len} U={u_len} V={vocab}: {} vs {}",
                            fb.loss,
                            bf
                        );
                        cases += 1;
                    }
                }
            }
        }
        assert_eq!(cases, 4 * 4 * 3 * 5);
    }

    #[test]
    fn alpha_beta_conservation_along_antidiagonals() {
        let lat = random_lattice(4, 3, 4, 99);
        let res = transducer_loss(&lat).unwrap();
        let total = -res.loss;
        for d in 0..(4 + 3) {
            let mut acc = NEG_INF;
            for t in 0..4usize {
                if d < t {
                    continue;
                }
                let u = d - t;
                if u > 3 {
                    continue;
                }
                let (a, b) = (res.alpha[[t, u]], res.beta[[t, u]]);
                if a > NEG_INF && b > NEG_INF {
                    acc = logsumexp2(acc, a + b);
                }
            }
            assert!((acc - total).abs() < 1e-9, "antidiagonal {d}: {acc} vs {total}");
        }
        // termination identity
        let t_end = res.alpha[[3, 3]] + lat.log_probs[[3, 3, 0]];
        assert!((t_end - res.beta[[0, 0]]).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in [1u64, 2, 3] {
            let lat = random_lattice(3, 2, 3, seed);
            let res = transducer_loss(&lat).unwrap();
            let h = 1e-6;
            for t in 0..3 {
                for u in 0..3 {
                    for v in 0..3 {
                        let mut plus = lat.log_probs.clone();
                        plus[[t, u, v]] += h;
                        let mut minus = lat.log_probs.clone();
                        minus[[t, u, v]] -= h;
                        let lp = forward_backward(&plus, &lat.target).loss;
                        let lm = forward_backward(&minus, &lat.target).loss;
                        let numeric = (lp - lm) / (2.0 * h);
                        let analytic = res.grad_log_probs[[t, u, v]];
                        assert!(
                            (numeric - analytic).abs() < 1e-6,
                            "({t},{u},{v}): fd {numeric} vs {analytic}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn unreachable_cells_have_zero_gradient() {
        // T=1: cells with u < U are passed through only by label emissions;
        // cell (0,0) blank is unreachable as a *transition* since T=1 and U=1
        let lat = random_lattice(1, 1, 3, 5);
        let res = transducer_loss(&lat).unwrap();
        // at (0,0) only the label transition is possible; blank grad must be 0
        assert_eq!(res.grad_log_probs[[0, 0, 0]], 0.0);
        assert!(res.grad_log_probs[[0, 0, lat.target[0] as usize]] < 0.0);
    }

    #[test]
    fn node_occupancy_identity() {
        // sum over transition symbols at a cell equals minus the node occupancy
        let lat = random_lattice(4, 2, 4, 31);
        let res = transducer_loss(&lat).unwrap();
        let total = -res.loss;
        for t in 0..4 {
            for u in 0..3 {
                let (a, b) = (res.alpha[[t, u]], res.beta[[t, u]]);
                let occupancy = if a > NEG_INF && b > NEG_INF {
                    (a + b - total).exp()
                } else {
                    0.0
                };
                let grad_sum: f64 = (0..4).map(|v| res.grad_log_probs[[t, u, v]]).sum();
                assert!(
                    (grad_sum + occupancy).abs() < 1e-9,
                    "({t},{u}): grads {grad_sum} occupancy {occupancy}"
                );
            }
        }
    }

    #[test]
    fn validation_rejects_malformed_lattices() {
        let mut lp = Array3::from_elem((2, 2, 3), (1.0f64 / 3.0).ln());
        assert!(AlignmentLattice::new(lp.clone(), vec![0]).is_err()); // blank target
        assert!(AlignmentLattice::new(lp.clone(), vec![7]).is_err()); // out of range
        assert!(AlignmentLattice::new(lp.clone(), vec![1, 2]).is_err()); // wrong rows
        lp[[0, 0, 0]] = 0.5; // denormalized
        assert!(matches!(
            AlignmentLattice::new(lp, vec![1]),
            Err(Error::InvalidLattice(_))
        ));
    }

    #[test]
    fn oversized_enumeration_is_rejected() {
        let lat = uniform_lattice(12, 3, 2);
        assert!(matches!(brute_force(&lat), Err(Error::TooLarge(_))));
    }

    #[test]
    fn loss_is_nonnegative_on_random_lattices() {
        for seed in 0..50 {
            let lat = random_lattice(3, 2, 4, 1000 + seed);
            assert!(transducer_loss(&lat).unwrap().loss >= 0.0);
        }
    }
}
