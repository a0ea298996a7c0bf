//! Alignment-free sequence loss over per-frame log probabilities, with its
//! exact gradient and a greedy collapsing decoder.
//!
//! Frames are rows of a [W, K] tensor of log probabilities; class K-1 is the
//! separator ("blank"). A label sequence is feasible for width W when
//! W >= len + number-of-adjacent-equal-pairs, since repeated symbols need a
//! separator frame between them.

use crate::error::{FotsError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NEG_INF: f64 = f64::NEG_INFINITY;

#[inline]
fn lse2(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum number of frames needed to emit `labels`.
pub fn min_frames(labels: &[usize]) -> usize {
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    labels.len() + repeats
}

pub fn is_feasible(labels: &[usize], width: usize) -> bool {
    min_frames(labels) <= width
}

fn validate<T: Scalar>(log_probs: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    if log_probs.shape().len() != 2 {
        return Err(FotsError::Invalid(format!(
            "expected [frames, classes] log probabilities, got rank {}",
            log_probs.shape().len()
        )));
    }
    let (w, k) = (log_probs.shape()[0], log_probs.shape()[1]);
    if w == 0 || k < 2 {
        return Err(FotsError::Invalid(format!(
            "need at least 1 frame and 2 classes, got {w}x{k}"
        )));
    }
    let blank = k - 1;
    if let Some(&bad) = labels.iter().find(|&&l| l >= blank) {
        return Err(FotsError::Invalid(format!(
            "label index {bad} out of range (classes 0..{blank}, {blank} is the separator)"
        )));
    }
    if !is_feasible(labels, w) {
        return Err(FotsError::Invalid(format!(
            "label of length {} needs {} frames, sequence has {w}",
            labels.len(),
            min_frames(labels)
        )));
    }
    Ok((w, k))
}

/// Negative log probability of `labels` under the per-frame distribution,
/// plus the gradient with respect to the log probabilities.
pub fn ctc_loss<T: Scalar>(log_probs: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (w, k) = validate(log_probs, labels)?;
    let blank = k - 1;
    let s = 2 * labels.len() + 1;
    let ext: Vec<usize> = (0..s)
        .map(|i| if i % 2 == 0 { blank } else { labels[i / 2] })
        .collect();
    let lp = |t: usize, cls: usize| log_probs.data()[t * k + cls].to_f64();

    // forward/backward lattices over the separator-augmented label
    let mut alpha = vec![NEG_INF; w * s];
    alpha[0] = lp(0, ext[0]);
    if s > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..w {
        for i in 0..s {
            let mut best = alpha[(t - 1) * s + i];
            if i >= 1 {
                best = lse2(best, alpha[(t - 1) * s + i - 1]);
            }
            if i >= 2 && ext[i] != blank && ext[i] != ext[i - 2] {
                best = lse2(best, alpha[(t - 1) * s + i - 2]);
            }
            alpha[t * s + i] = best + lp(t, ext[i]);
        }
    }
    let log_z = if s > 1 {
        lse2(alpha[(w - 1) * s + s - 1], alpha[(w - 1) * s + s - 2])
    } else {
        alpha[(w - 1) * s + s - 1]
    };
    if !log_z.is_finite() {
        return Err(FotsError::Numeric(format!(
            "sequence probability underflowed (log {log_z})"
        )));
    }

    let mut beta = vec![NEG_INF; w * s];
    beta[(w - 1) * s + s - 1] = lp(w - 1, ext[s - 1]);
    if s > 1 {
        beta[(w - 1) * s + s - 2] = lp(w - 1, ext[s - 2]);
    }
    for t in (0..w - 1).rev() {
        for i in 0..s {
            let mut best = beta[(t + 1) * s + i];
            if i + 1 < s {
                best = lse2(best, beta[(t + 1) * s + i + 1]);
            }
            if i + 2 < s && ext[i] != blank && ext[i] != ext[i + 2] {
                best = lse2(best, beta[(t + 1) * s + i + 2]);
            }
            beta[t * s + i] = best + lp(t, ext[i]);
        }
    }

    // dL/dlogp[t,c] = -sum over lattice states of class c of
    // exp(alpha + beta - logp - logZ); both lattices include the frame term,
    // so one copy is divided back out
    let mut grad = Tensor::zeros(log_probs.shape());
    for t in 0..w {
        let mut per_class = vec![NEG_INF; k];
        for i in 0..s {
            let v = alpha[t * s + i] + beta[t * s + i] - lp(t, ext[i]);
            per_class[ext[i]] = lse2(per_class[ext[i]], v);
        }
        for c in 0..k {
            if per_class[c] != NEG_INF {
                grad.data_mut()[t * k + c] = T::from_f64(-((per_class[c] - log_z).exp()));
            }
        }
    }
    Ok((T::from_f64(-log_z), grad))
}

/// Per-frame argmax, collapsing runs and dropping separators.
pub fn ctc_greedy_decode<T: Scalar>(log_probs: &Tensor<T>) -> Vec<usize> {
    let (w, k) = (log_probs.shape()[0], log_probs.shape()[1]);
    let blank = k - 1;
    let mut out = Vec::new();
    let mut prev = blank;
    for t in 0..w {
        let row = &log_probs.data()[t * k..(t + 1) * k];
        let mut arg = 0;
        for c in 1..k {
            if row[c] > row[arg] {
                arg = c;
            }
        }
        if arg != blank && arg != prev {
            out.push(arg);
        }
        prev = arg;
    }
    out
}
