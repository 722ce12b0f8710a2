//! Connectionist temporal classification: loss, a brute-force oracle and
//! greedy decoding. Class 0 is the blank.

use thiserror::Error;

use crate::tensor::{Tensor, TensorError, Value};

pub const BLANK: usize = 0;

/// Largest problem [`ctc_brute_force`] will enumerate.
pub const BRUTE_FORCE_MAX_FRAMES: usize = 8;
pub const BRUTE_FORCE_MAX_CLASSES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtcError {
    #[error("target needs at least {needed} frames but only {frames} are available")]
    InfeasibleTarget { needed: usize, frames: usize },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("brute force limited to T <= {BRUTE_FORCE_MAX_FRAMES}, V <= {BRUTE_FORCE_MAX_CLASSES}; got T={frames}, V={classes}")]
    OracleTooLarge { frames: usize, classes: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Target symbols without blanks; every symbol lies in `1..alphabet_size`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelSequence {
    pub symbols: Vec<usize>,
    pub alphabet_size: usize,
}

impl LabelSequence {
    pub fn new(symbols: Vec<usize>, alphabet_size: usize) -> Result<Self, CtcError> {
        if let Some(&bad) = symbols.iter().find(|&&s| s == BLANK || s >= alphabet_size) {
            return Err(CtcError::InvalidTarget(format!(
                "symbol {bad} outside 1..{alphabet_size}"
            )));
        }
        Ok(Self {
            symbols,
            alphabet_size,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Minimum frames able to emit this target: one per symbol plus a
    /// separating blank between each pair of equal neighbours.
    pub fn min_frames(&self) -> usize {
        let repeats = self.symbols.windows(2).filter(|w| w[0] == w[1]).count();
        self.symbols.len() + repeats
    }
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Blank-interleaved target `[∅, l1, ∅, l2, …, lU, ∅]`.
fn extend(target: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &s in target {
        ext.push(s);
        ext.push(BLANK);
    }
    ext
}

struct Lattice {
    ext: Vec<usize>,
    /// `alpha[t * S + s]`, log space, including the emission at `t`.
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_prob: f64,
}

fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

fn lattice(logp: &[f64], frames: usize, classes: usize, target: &[usize]) -> Lattice {
    let ext = extend(target);
    let n = ext.len();
    let lp = |t: usize, s: usize| logp[t * classes + ext[s]];
    let mut alpha = vec![f64::NEG_INFINITY; frames * n];
    alpha[0] = lp(0, 0);
    if n > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..frames {
        for s in 0..n {
            let prev = &alpha[(t - 1) * n..t * n];
            let mut acc = prev[s];
            if s >= 1 {
                acc = lse2(acc, prev[s - 1]);
            }
            if can_skip(&ext, s) {
                acc = lse2(acc, prev[s - 2]);
            }
            alpha[t * n + s] = if acc == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                acc + lp(t, s)
            };
        }
    }
    let last = (frames - 1) * n;
    let log_prob = if n > 1 {
        lse2(alpha[last + n - 1], alpha[last + n - 2])
    } else {
        alpha[last]
    };

    let mut beta = vec![f64::NEG_INFINITY; frames * n];
    beta[last + n - 1] = lp(frames - 1, n - 1);
    if n > 1 {
        beta[last + n - 2] = lp(frames - 1, n - 2);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..n {
            let next = &beta[(t + 1) * n..(t + 2) * n];
            let mut acc = next[s];
            if s + 1 < n {
                acc = lse2(acc, next[s + 1]);
            }
            if s + 2 < n && can_skip(&ext, s + 2) {
                acc = lse2(acc, next[s + 2]);
            }
            beta[t * n + s] = if acc == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                acc + lp(t, s)
            };
        }
    }
    Lattice {
        ext,
        alpha,
        beta,
        log_prob,
    }
}

fn check_posteriors(shape: &[usize]) -> Result<(usize, usize), CtcError> {
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(TensorError::InvalidShape(format!(
            "posteriors must be [T × V], got {shape:?}"
        ))
        .into());
    }
    Ok((shape[0], shape[1]))
}

fn check_target(target: &LabelSequence, frames: usize, classes: usize) -> Result<(), CtcError> {
    if target.is_empty() {
        return Err(CtcError::InvalidTarget("empty target".into()));
    }
    if target.alphabet_size != classes {
        return Err(CtcError::InvalidTarget(format!(
            "target alphabet has {} classes, posteriors have {classes}",
            target.alphabet_size
        )));
    }
    let needed = target.min_frames();
    if needed > frames {
        return Err(CtcError::InfeasibleTarget { needed, frames });
    }
    Ok(())
}

/// `ln P(target | posteriors)` via the forward recursion. `log_posteriors`
/// is a row-major `[T × V]` matrix of per-frame log-probabilities.
pub fn ctc_log_likelihood(
    log_posteriors: &Tensor,
    target: &LabelSequence,
) -> Result<f64, CtcError> {
    let (frames, classes) = check_posteriors(log_posteriors.shape())?;
    check_target(target, frames, classes)?;
    Ok(lattice(log_posteriors.data(), frames, classes, &target.symbols).log_prob)
}

/// Negative log-likelihood of `target`, differentiable w.r.t. the
/// `[T × V]` log-posteriors (typically the output of `log_softmax`).
pub fn ctc_loss(log_posteriors: &Value, target: &LabelSequence) -> Result<Value, CtcError> {
    let lp = log_posteriors.tensor();
    let (frames, classes) = check_posteriors(lp.shape())?;
    check_target(target, frames, classes)?;
    let lat = lattice(lp.data(), frames, classes, &target.symbols);
    let n = lat.ext.len();

    // dL/dlp[t,k] = −Σ_{s: ext[s]=k} α_t(s)·β_t(s) / (y_t(k)·p): the expected
    // occupancy of class k at frame t.
    let mut grad = vec![0.0; frames * classes];
    if lat.log_prob.is_finite() {
        for t in 0..frames {
            let mut occ = vec![f64::NEG_INFINITY; classes];
            for s in 0..n {
                let k = lat.ext[s];
                occ[k] = lse2(occ[k], lat.alpha[t * n + s] + lat.beta[t * n + s]);
            }
            for k in 0..classes {
                let y = lp.data()[t * classes + k];
                if occ[k] == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
                    continue;
                }
                grad[t * classes + k] = -(occ[k] - y - lat.log_prob).exp();
            }
        }
    }
    Ok(log_posteriors.scalar_with_grad(-lat.log_prob, grad)?)
}

/// Sums the probability of every frame path collapsing to `target` by
/// explicit enumeration of all `V^T` paths. Test oracle only.
pub fn ctc_brute_force(log_posteriors: &Tensor, target: &[usize]) -> Result<f64, CtcError> {
    let (frames, classes) = check_posteriors(log_posteriors.shape())?;
    if frames > BRUTE_FORCE_MAX_FRAMES || classes > BRUTE_FORCE_MAX_CLASSES {
        return Err(CtcError::OracleTooLarge { frames, classes });
    }
    let lp = log_posteriors.data();
    let mut total = 0.0;
    let mut path = vec![0usize; frames];
    let count = classes.pow(frames as u32);
    for mut code in 0..count {
        for slot in path.iter_mut() {
            *slot = code % classes;
            code /= classes;
        }
        if collapse(&path) == target {
            let log_p: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &k)| lp[t * classes + k])
                .sum();
            total += log_p.exp();
        }
    }
    Ok(total)
}

/// Merge repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Best-path decoding: per-frame argmax (ties go to the lower index), then
/// [`collapse`].
pub fn ctc_greedy_decode(posteriors: &Tensor) -> Vec<usize> {
    let classes = posteriors.cols();
    let path: Vec<usize> = posteriors
        .data()
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                    if v > best.1 {
                        (k, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect();
    collapse(&path)
}
