//! Permutation-invariant multitask objective with Hungarian matching of
//! lone pairs within each atom.

use std::collections::HashSet;

use rand::seq::index::sample;

use crate::models::{Batch, BatchTargets, PredictionBundle};
use crate::synth::item_rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("cost matrix is not square")]
    NonSquare,
    #[error("cost matrix has a non-finite entry")]
    NonFinite,
    #[error("targets do not align with predictions: {0}")]
    Alignment(String),
}

/// Minimum-cost perfect assignment of a square matrix. Returns the column
/// assigned to each row and the total cost.
pub fn hungarian(c: &[Vec<f64>]) -> Result<(Vec<usize>, f64), LossError> {
    let n = c.len();
    if c.iter().any(|r| r.len() != n) {
        return Err(LossError::NonSquare);
    }
    if c.iter().flatten().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // Shortest augmenting paths with row/column potentials; index 0 is a
    // virtual column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    let cost = assignment.iter().enumerate().map(|(i, &j)| c[i][j]).sum();
    Ok((assignment, cost))
}

/// Matching of one atom's lone pairs: prediction `members[p]` takes the
/// targets of `members[perm[p]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupMatch {
    pub members: Vec<usize>,
    pub perm: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchingResult {
    pub groups: Vec<GroupMatch>,
    /// Σ per-node cost under the matching / under the identity.
    pub matched_cost: f64,
    pub unmatched_cost: f64,
}

impl MatchingResult {
    /// Identity matching over the batch's lone-pair groups.
    pub fn identity(batch: &Batch) -> Self {
        MatchingResult {
            groups: batch
                .lp_groups
                .iter()
                .map(|g| GroupMatch {
                    members: g.clone(),
                    perm: (0..g.len()).collect(),
                })
                .collect(),
            matched_cost: 0.0,
            unmatched_cost: 0.0,
        }
    }

    /// Target lone-pair index assigned to each predicted lone pair.
    pub fn target_of(&self, n_lp: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..n_lp).collect();
        for g in &self.groups {
            for (p, &t) in g.perm.iter().enumerate() {
                out[g.members[p]] = g.members[t];
            }
        }
        out
    }
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    row.iter().map(|v| v - z).collect()
}

/// Per-node cost of giving prediction row `p` the targets of row `t`:
/// character cross-entropy plus squared occupancy error.
pub fn lp_node_cost(logits: &Tensor, occ: &Tensor, targets: &BatchTargets, p: usize, t: usize) -> f64 {
    let lp = log_softmax_row(logits.row_slice(p));
    let ce: f64 = -targets.lp_chars.row_slice(t).iter().zip(&lp).map(|(a, b)| a * b).sum::<f64>();
    let d = occ.get(p, 0) - targets.lp_occ.get(t, 0);
    ce + d * d
}

/// Optimal within-atom assignment of predicted to target lone pairs.
pub fn group_match(tape: &Tape, bundle: &PredictionBundle, batch: &Batch, targets: &BatchTargets) -> Result<MatchingResult, LossError> {
    let logits = tape.value(bundle.lp_char_logits);
    let occ = tape.value(bundle.lp_occ);
    let n_lp = batch.lp_rows.len();
    if logits.rows() != n_lp || targets.lp_chars.rows() != n_lp || targets.lp_occ.rows() != n_lp {
        return Err(LossError::Alignment(format!(
            "{} lone-pair rows, {} predicted, {} targets",
            n_lp,
            logits.rows(),
            targets.lp_chars.rows()
        )));
    }
    let mut groups = Vec::with_capacity(batch.lp_groups.len());
    let (mut matched, mut unmatched) = (0.0, 0.0);
    for members in &batch.lp_groups {
        let cost: Vec<Vec<f64>> = members.iter().map(|&p| members.iter().map(|&t| lp_node_cost(logits, occ, targets, p, t)).collect()).collect();
        let (perm, c) = hungarian(&cost)?;
        matched += c;
        unmatched += (0..members.len()).map(|i| cost[i][i]).sum::<f64>();
        groups.push(GroupMatch {
            members: members.clone(),
            perm,
        });
    }
    Ok(MatchingResult {
        groups,
        matched_cost: matched,
        unmatched_cost: unmatched,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOptions {
    pub perform_matching: bool,
    pub negative_seed: u64,
    /// Weights of Lα, Lβ, Lγ, Lδ.
    pub weights: [f64; 4],
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            perform_matching: true,
            negative_seed: 0,
            weights: [1.0; 4],
        }
    }
}

pub struct LossTerms {
    pub alpha: Var,
    pub beta: Var,
    pub gamma: Var,
    pub delta: Var,
    pub total: Var,
    pub matching: MatchingResult,
    /// Candidate rows and labels that entered Lγ.
    pub link_rows: Vec<usize>,
    pub link_labels: Vec<f64>,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> [f64; 5] {
        [self.alpha, self.beta, self.gamma, self.delta, self.total].map(|v| tape.value(v).item())
    }
}

fn mse(tape: &mut Tape, pred: Var, target: &Tensor) -> Option<Var> {
    if target.is_empty() {
        return None;
    }
    let t = tape.constant(target.clone());
    let d = tape.sub(pred, t);
    let sq = tape.square(d);
    Some(tape.mean(sq))
}

/// Mean over rows of −Σ t log softmax(logits).
fn cross_entropy(tape: &mut Tape, logits: &[Var], targets: &[&Tensor]) -> Option<Var> {
    let rows: usize = targets.iter().map(|t| t.rows()).sum();
    if rows == 0 {
        return None;
    }
    let mut parts = Vec::new();
    for (&l, &t) in logits.iter().zip(targets) {
        let ls = tape.log_softmax_rows(l);
        let tc = tape.constant(t.clone());
        let p = tape.mul(ls, tc);
        parts.push(tape.sum(p));
    }
    let mut s = parts[0];
    for &p in &parts[1..] {
        s = tape.add(s, p);
    }
    Some(tape.scale(s, -1.0 / rows as f64))
}

fn sum_terms(tape: &mut Tape, terms: &[Option<Var>]) -> Var {
    let mut acc = tape.constant(Tensor::scalar(0.0));
    for t in terms.iter().flatten() {
        acc = tape.add(acc, *t);
    }
    acc
}

fn permute_rows(t: &Tensor, target_of: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(t.len());
    for &r in target_of {
        data.extend_from_slice(t.row_slice(r));
    }
    Tensor::new(target_of.len(), t.cols(), data).unwrap()
}

/// L = Lα + Lβ + Lγ + Lδ, with lone-pair targets matched per atom when
/// `perform_matching` is set.
pub fn total_loss(tape: &mut Tape, bundle: &PredictionBundle, batch: &Batch, targets: &BatchTargets, opts: &LossOptions) -> Result<LossTerms, LossError> {
    let matching = if opts.perform_matching {
        group_match(tape, bundle, batch, targets)?
    } else {
        MatchingResult::identity(batch)
    };
    total_loss_with(tape, bundle, batch, targets, matching, opts)
}

/// [`total_loss`] under a given (frozen) matching.
pub fn total_loss_with(
    tape: &mut Tape,
    bundle: &PredictionBundle,
    batch: &Batch,
    targets: &BatchTargets,
    matching: MatchingResult,
    opts: &LossOptions,
) -> Result<LossTerms, LossError> {
    let n_lp = batch.lp_rows.len();
    if targets.atom.rows() != batch.n_atoms() || targets.lp_chars.rows() != n_lp || targets.bond.rows() != batch.bond_rows.len() || targets.ab_reg.rows() != batch.atom_bond.len() {
        return Err(LossError::Alignment("target tables do not match the batch".into()));
    }
    let target_of = matching.target_of(n_lp);
    let mut pred_of = vec![0; n_lp];
    for (p, &t) in target_of.iter().enumerate() {
        pred_of[t] = p;
    }
    let lp_chars = permute_rows(&targets.lp_chars, &target_of);
    let lp_occ = permute_rows(&targets.lp_occ, &target_of);

    let alpha_terms = [
        mse(tape, bundle.atom_preds, &targets.atom),
        mse(tape, bundle.lp_occ, &lp_occ),
        cross_entropy(tape, &[bundle.lp_char_logits], &[&lp_chars]),
        mse(tape, bundle.bond_preds, &targets.bond),
    ];
    let alpha = sum_terms(tape, &alpha_terms);
    let beta_terms = [
        mse(tape, bundle.ab_reg, &targets.ab_reg),
        cross_entropy(tape, &bundle.ab_char_logits, &[&targets.ab_chars[0], &targets.ab_chars[1]]),
    ];
    let beta = sum_terms(tape, &beta_terms);

    let mut lp_of_row = vec![usize::MAX; batch.n_orbitals()];
    for (k, &r) in batch.lp_rows.iter().enumerate() {
        lp_of_row[r] = k;
    }
    let mut pos_rows = Vec::new();
    let mut pos_targets = Vec::new();
    for &(d, a, t) in &targets.interactions {
        let d = match lp_of_row.get(d) {
            Some(&k) if k != usize::MAX => batch.lp_rows[pred_of[k]],
            Some(_) => d,
            None => return Err(LossError::Alignment(format!("interaction donor row {d} out of range"))),
        };
        if let Some(&c) = batch.cand_lookup.get(&(d, a)) {
            pos_rows.push(c);
            pos_targets.extend_from_slice(&t);
        }
    }
    let positives: HashSet<usize> = pos_rows.iter().copied().collect();
    let mut link_rows = pos_rows.clone();
    let mut link_labels = vec![1.0; pos_rows.len()];
    for (g, &(start, len)) in batch.cand_ranges.iter().enumerate() {
        let n_pos = pos_rows.iter().filter(|&&c| c >= start && c < start + len).count();
        let avail: Vec<usize> = (start..start + len).filter(|c| !positives.contains(c)).collect();
        let k = n_pos.min(avail.len());
        if k == 0 {
            continue;
        }
        let mut rng = item_rng(opts.negative_seed, "negatives", batch.keys[g]);
        let mut picked: Vec<usize> = sample(&mut rng, avail.len(), k).into_iter().map(|i| avail[i]).collect();
        picked.sort_unstable();
        link_rows.extend_from_slice(&picked);
        link_labels.extend(std::iter::repeat_n(0.0, k));
    }
    let gamma = if link_rows.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        let z = tape.gather_rows(bundle.link_logits, &link_rows);
        let sp = tape.softplus(z);
        let y = tape.constant(Tensor::column(link_labels.clone()));
        let yz = tape.mul(y, z);
        let bce = tape.sub(sp, yz);
        tape.mean(bce)
    };
    let delta = if pos_rows.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        let p = tape.gather_rows(bundle.interaction_preds, &pos_rows);
        let t = Tensor::new(pos_rows.len(), 3, pos_targets).unwrap();
        mse(tape, p, &t).expect("non-empty")
    };
    let w = opts.weights;
    let parts = [tape.scale(alpha, w[0]), tape.scale(beta, w[1]), tape.scale(gamma, w[2]), tape.scale(delta, w[3])];
    let total = sum_terms(tape, &parts.map(Some));
    Ok(LossTerms {
        alpha,
        beta,
        gamma,
        delta,
        total,
        matching,
        link_rows,
        link_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hungarian_examples() {
        let (a, c) = hungarian(&[vec![0.0, 9.0], vec![9.0, 0.0]]).unwrap();
        assert_eq!((a, c), (vec![0, 1], 0.0));
        let (a, c) = hungarian(&[vec![5.0, 1.0], vec![2.0, 7.0]]).unwrap();
        assert_eq!((a, c), (vec![1, 0], 3.0));
    }

    #[test]
    fn hungarian_rejects_bad_input() {
        assert_eq!(hungarian(&[vec![1.0, 2.0]]), Err(LossError::NonSquare));
        assert_eq!(hungarian(&[vec![f64::NAN]]), Err(LossError::NonFinite));
        assert_eq!(hungarian(&[]), Ok((vec![], 0.0)));
    }
}
