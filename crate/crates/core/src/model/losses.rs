use crate::autodiff::{row_distance, Tape, Var};
use crate::error::{GpnetError, Result};

/// Hardest positive and hardest negative for every anchor, by index.
/// Ties resolve to the lowest index.
pub fn hardest_pairs(tape: &Tape, features: Var, labels: &[usize]) -> Result<Vec<(usize, usize)>> {
    let f = tape.value(features);
    let n = f.nrows();
    if labels.len() != n {
        return Err(GpnetError::Contract(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut pos: Option<(f64, usize)> = None;
        let mut neg: Option<(f64, usize)> = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = row_distance(f, i, j);
            if labels[j] == labels[i] {
                if pos.is_none_or(|(best, _)| d > best) {
                    pos = Some((d, j));
                }
            } else if neg.is_none_or(|(best, _)| d < best) {
                neg = Some((d, j));
            }
        }
        match (pos, neg) {
            (Some((_, p)), Some((_, q))) => out.push((p, q)),
            _ => {
                return Err(GpnetError::Sampling(format!(
                    "anchor {i} (label {}) lacks a positive or a negative",
                    labels[i]
                )))
            }
        }
    }
    Ok(out)
}

/// Batch-hard triplet loss, summed over anchors:
/// `Σ_i max(0, margin + max_pos ‖f_i − f_p‖ − min_neg ‖f_i − f_n‖)`.
pub fn triplet_loss(tape: &mut Tape, features: Var, labels: &[usize], margin: f64) -> Result<Var> {
    let pairs = hardest_pairs(tape, features, labels)?;
    let pos: Vec<(usize, usize)> = pairs
        .iter()
        .enumerate()
        .map(|(i, (p, _))| (i, *p))
        .collect();
    let neg: Vec<(usize, usize)> = pairs
        .iter()
        .enumerate()
        .map(|(i, (_, q))| (i, *q))
        .collect();
    let dp = tape.pair_distances(features, &pos)?;
    let dn = tape.pair_distances(features, &neg)?;
    let gap = tape.sub(dp, dn)?;
    let m = tape.scalar(margin);
    let shifted = tape.add(gap, m)?;
    let hinge = tape.relu(shifted);
    Ok(tape.sum(hinge))
}

/// Mean cross-entropy of `softmax(logits)` against class labels.
pub fn identity_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, classes) = tape.shape(logits);
    if labels.len() != n {
        return Err(GpnetError::Contract(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(GpnetError::Range {
            label: bad,
            classes,
        });
    }
    let logp = tape.log_softmax_rows(logits);
    let picked = tape.gather(logp, labels)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -1.0))
}
