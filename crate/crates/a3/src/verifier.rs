//! Dual hierarchical verification and horizon commitment.
//!
//! The draft chunk from the consensus stage is adjudicated by re-decoding
//! every action under two fixed contexts: the *invariance* context (all
//! actions with strictly higher consensus scores) and the *sequential*
//! context (all temporally earlier actions). A step passes a check when the
//! re-decoded action agrees with the draft within a per-dimension threshold
//! on every continuous dimension; the gripper channel is excluded. The
//! committed horizon is the longest prefix in which every step passes both
//! checks.
//!
//! All `2H` re-decode queries go to the policy as one batch, so verification
//! costs exactly one policy invocation regardless of the horizon.

use serde::Serialize;

use crate::consensus::{run_stage1, ClusterConfig, ConsensusReport};
use crate::error::Error;
use crate::policy::ChunkPolicy;
use crate::seed::mix;
use crate::trajectory::{Action, ActionChunk, AlignmentWindow, State};
use crate::Result;

/// Which verification constraint a context belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ContextKind {
    /// Fix all strictly-higher-consensus positions.
    Invariance,
    /// Fix all temporally earlier positions.
    Sequential,
}

/// One conditional re-decoding query: re-generate the action at `target`
/// while the listed positions are clamped to their draft values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyContext {
    kind: ContextKind,
    target: usize,
    /// `(position, draft action)` pairs, sorted by position.
    fixed: Vec<(usize, Action)>,
}

impl VerifyContext {
    /// Build a context, rejecting targets that appear among the fixed
    /// positions and duplicate fixed positions.
    pub fn new(kind: ContextKind, target: usize, mut fixed: Vec<(usize, Action)>) -> Result<Self> {
        fixed.sort_by_key(|(p, _)| *p);
        for pair in fixed.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidContext(format!(
                    "duplicate fixed position {}",
                    pair[0].0
                )));
            }
        }
        if fixed.iter().any(|(p, _)| *p == target) {
            return Err(Error::InvalidContext(format!(
                "target {target} appears among fixed positions"
            )));
        }
        Ok(Self {
            kind,
            target,
            fixed,
        })
    }

    pub fn kind(&self) -> ContextKind {
        self.kind
    }

    /// Step index being re-decoded (0-based).
    pub fn target(&self) -> usize {
        self.target
    }

    /// Clamped positions with their values, sorted by position.
    pub fn fixed(&self) -> &[(usize, Action)] {
        &self.fixed
    }

    /// Clamped positions only.
    pub fn fixed_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.fixed.iter().map(|(p, _)| *p)
    }
}

/// Per-dimension acceptance threshold for the re-decode comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceptanceThreshold {
    per_dim: Vec<f64>,
}

impl AcceptanceThreshold {
    pub fn new(per_dim: Vec<f64>) -> Result<Self> {
        if per_dim.is_empty() {
            return Err(Error::EmptyInput("acceptance threshold"));
        }
        if per_dim.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidConfig(
                "acceptance thresholds must be strictly positive".into(),
            ));
        }
        Ok(Self { per_dim })
    }

    /// Same tolerance on every continuous dimension.
    pub fn uniform(dims: usize, delta: f64) -> Result<Self> {
        Self::new(vec![delta; dims])
    }

    pub fn per_dim(&self) -> &[f64] {
        &self.per_dim
    }

    pub fn dims(&self) -> usize {
        self.per_dim.len()
    }

    /// Multiply every tolerance by a positive factor.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.per_dim.iter().map(|d| d * factor).collect())
    }
}

/// Result of the dual verification pass plus the committed horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationOutcome {
    /// Conditional-invariance verdict per step.
    pub v_inv: Vec<bool>,
    /// Sequential-consistency verdict per step.
    pub v_seq: Vec<bool>,
    /// Committed horizon `l*`, in `1..=H`.
    pub horizon: usize,
    /// True when no step passed both checks (or verification was
    /// unavailable) and the single-action fallback was taken.
    pub fallback_used: bool,
}

/// Parameters of one adaptive decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A3Params {
    /// Number of candidate chunks sampled per decision.
    pub samples: usize,
    /// Temporal alignment window for trajectory distances.
    pub window: AlignmentWindow,
    /// Consensus-stage parameters.
    pub cluster: ClusterConfig,
    /// Per-dimension acceptance thresholds.
    pub threshold: AcceptanceThreshold,
}

impl A3Params {
    /// Standard construction: thresholds are given, consensus parameters
    /// derive from them.
    pub fn from_threshold(
        samples: usize,
        window: AlignmentWindow,
        horizon: usize,
        threshold: AcceptanceThreshold,
    ) -> Result<Self> {
        if samples == 0 {
            return Err(Error::InvalidConfig("samples must be at least 1".into()));
        }
        let cluster = ClusterConfig::from_tolerances(horizon, threshold.per_dim())?;
        Ok(Self {
            samples,
            window,
            cluster,
            threshold,
        })
    }
}

/// A full adaptive decision: consensus report plus verification outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub report: ConsensusReport,
    pub outcome: VerificationOutcome,
}

impl Decision {
    /// The committed prefix of the draft.
    pub fn committed(&self) -> &[Action] {
        &self.report.draft.actions()[..self.outcome.horizon]
    }
}

/// Build the `2H` verification contexts for one draft.
///
/// For step `i`, the invariance context fixes `{ j : scores[j] > scores[i] }`
/// (strict inequality, so tied steps exclude each other) and the sequential
/// context fixes `{ j : j < i }`. Contexts are emitted as the pair
/// `(invariance_i, sequential_i)` for `i = 0..H`.
pub fn build_tree(draft: &ActionChunk, scores: &[f64]) -> Result<Vec<VerifyContext>> {
    let h = draft.horizon();
    if scores.len() != h {
        return Err(Error::LengthMismatch {
            what: "consensus scores",
            expected: h,
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("consensus scores"));
    }
    let actions = draft.actions();
    let mut contexts = Vec::with_capacity(2 * h);
    for i in 0..h {
        let inv_fixed: Vec<(usize, Action)> = (0..h)
            .filter(|&j| scores[j] > scores[i])
            .map(|j| (j, actions[j].clone()))
            .collect();
        contexts.push(VerifyContext::new(ContextKind::Invariance, i, inv_fixed)?);
        let seq_fixed: Vec<(usize, Action)> =
            (0..i).map(|j| (j, actions[j].clone())).collect();
        contexts.push(VerifyContext::new(ContextKind::Sequential, i, seq_fixed)?);
    }
    Ok(contexts)
}

/// Compare a re-decoded action against the draft action dimension-wise.
/// Passes only if every continuous dimension deviates strictly less than its
/// threshold; the gripper channel never participates.
fn accepts(redecoded: &Action, draft: &Action, threshold: &AcceptanceThreshold) -> bool {
    redecoded
        .deltas
        .iter()
        .zip(&draft.deltas)
        .zip(threshold.per_dim())
        .all(|((r, d), t)| (r - d).abs() < *t)
}

/// Evaluate all contexts in a single batched policy invocation and fold the
/// results into per-step verdict vectors `(v_inv, v_seq)`.
///
/// The context list must cover each `(kind, step)` pair exactly once for the
/// draft's horizon, as produced by [`build_tree`]. A policy failure is
/// reported as [`Error::VerificationUnavailable`].
pub fn verify_batch<P: ChunkPolicy + ?Sized>(
    policy: &P,
    base: &State,
    contexts: &[VerifyContext],
    draft: &ActionChunk,
    threshold: &AcceptanceThreshold,
    seed: u64,
) -> Result<(Vec<bool>, Vec<bool>)> {
    let h = draft.horizon();
    if threshold.dims() != draft.dims() {
        return Err(Error::DimensionMismatch {
            expected: draft.dims(),
            got: threshold.dims(),
        });
    }
    if contexts.len() != 2 * h {
        return Err(Error::LengthMismatch {
            what: "verification contexts",
            expected: 2 * h,
            got: contexts.len(),
        });
    }
    let mut seen_inv = vec![false; h];
    let mut seen_seq = vec![false; h];
    for ctx in contexts {
        if ctx.target() >= h {
            return Err(Error::StepOutOfRange {
                step: ctx.target(),
                horizon: h,
            });
        }
        let seen = match ctx.kind() {
            ContextKind::Invariance => &mut seen_inv,
            ContextKind::Sequential => &mut seen_seq,
        };
        if seen[ctx.target()] {
            return Err(Error::InvalidContext(format!(
                "duplicate context for step {}",
                ctx.target()
            )));
        }
        seen[ctx.target()] = true;
    }

    // The single policy invocation for the whole tree.
    let redecoded = policy
        .redecode_batch(base, contexts, seed)
        .map_err(|e| Error::VerificationUnavailable(e.to_string()))?;
    if redecoded.len() != contexts.len() {
        return Err(Error::VerificationUnavailable(format!(
            "policy returned {} actions for {} contexts",
            redecoded.len(),
            contexts.len()
        )));
    }

    let mut v_inv = vec![false; h];
    let mut v_seq = vec![false; h];
    for (ctx, action) in contexts.iter().zip(&redecoded) {
        let pass = accepts(action, &draft.actions()[ctx.target()], threshold);
        match ctx.kind() {
            ContextKind::Invariance => v_inv[ctx.target()] = pass,
            ContextKind::Sequential => v_seq[ctx.target()] = pass,
        }
    }
    Ok((v_inv, v_seq))
}

/// Longest prefix on which both verdicts hold at every step.
///
/// Returns `(l*, fallback_used)`: if even the first step fails, the
/// single-action fallback `(1, true)` keeps execution live.
pub fn commit_horizon(v_inv: &[bool], v_seq: &[bool]) -> Result<(usize, bool)> {
    if v_inv.len() != v_seq.len() {
        return Err(Error::LengthMismatch {
            what: "verdict vectors",
            expected: v_inv.len(),
            got: v_seq.len(),
        });
    }
    if v_inv.is_empty() {
        return Err(Error::EmptyInput("verdict vectors"));
    }
    let mut horizon = 0;
    for (i, s) in v_inv.iter().zip(v_seq).enumerate() {
        if *s.0 && *s.1 {
            horizon = i + 1;
        } else {
            break;
        }
    }
    if horizon == 0 {
        Ok((1, true))
    } else {
        Ok((horizon, false))
    }
}

/// One full adaptive decision: sample, build consensus, verify, commit.
///
/// Makes exactly two policy invocations: one `K`-chunk sampling call and one
/// `2H`-context verification call. If the verification call itself fails,
/// the decision degrades to the single-action fallback (`l* = 1`, all
/// verdicts false, `fallback_used = true`) so the caller can always act;
/// sampling and consensus errors propagate.
pub fn a3_decide<P: ChunkPolicy + ?Sized>(
    policy: &P,
    base: &State,
    params: &A3Params,
    seed: u64,
) -> Result<Decision> {
    if params.samples == 0 {
        return Err(Error::InvalidConfig("samples must be at least 1".into()));
    }
    let chunks = policy.sample_chunks(base, params.samples, mix(seed, STREAM_SAMPLE))?;
    let report = run_stage1(base, &chunks, params.window, &params.cluster)?;
    let contexts = build_tree(&report.draft, &report.scores)?;
    let h = report.draft.horizon();
    let outcome = match verify_batch(
        policy,
        base,
        &contexts,
        &report.draft,
        &params.threshold,
        mix(seed, STREAM_VERIFY),
    ) {
        Ok((v_inv, v_seq)) => {
            let (horizon, fallback_used) = commit_horizon(&v_inv, &v_seq)?;
            VerificationOutcome {
                v_inv,
                v_seq,
                horizon,
                fallback_used,
            }
        }
        Err(Error::VerificationUnavailable(_)) => VerificationOutcome {
            v_inv: vec![false; h],
            v_seq: vec![false; h],
            horizon: 1,
            fallback_used: true,
        },
        Err(e) => return Err(e),
    };
    Ok(Decision { report, outcome })
}

const STREAM_SAMPLE: u64 = 0xA3_5A;
const STREAM_VERIFY: u64 = 0xA3_7E;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Gripper;

    fn chunk(rows: Vec<Vec<f64>>) -> ActionChunk {
        ActionChunk::from_deltas(rows, Gripper::Open).unwrap()
    }

    #[test]
    fn tree_orders_by_strict_score_comparison() {
        let draft = chunk(vec![vec![0.0], vec![1.0], vec![2.0]]);
        let contexts = build_tree(&draft, &[0.2, 0.9, 0.5]).unwrap();
        assert_eq!(contexts.len(), 6);
        let inv: Vec<Vec<usize>> = contexts
            .iter()
            .filter(|c| c.kind() == ContextKind::Invariance)
            .map(|c| c.fixed_positions().collect())
            .collect();
        assert_eq!(inv, vec![vec![1, 2], vec![], vec![1]]);
        let seq: Vec<Vec<usize>> = contexts
            .iter()
            .filter(|c| c.kind() == ContextKind::Sequential)
            .map(|c| c.fixed_positions().collect())
            .collect();
        assert_eq!(seq, vec![vec![], vec![0], vec![0, 1]]);
    }

    #[test]
    fn tree_collapses_for_decreasing_scores() {
        let draft = chunk(vec![vec![0.0], vec![1.0], vec![2.0]]);
        let contexts = build_tree(&draft, &[0.9, 0.5, 0.2]).unwrap();
        for i in 0..3 {
            let inv: Vec<usize> = contexts[2 * i].fixed_positions().collect();
            let seq: Vec<usize> = contexts[2 * i + 1].fixed_positions().collect();
            assert_eq!(inv, (0..i).collect::<Vec<_>>());
            assert_eq!(inv, seq);
        }
    }

    #[test]
    fn tree_with_tied_scores_has_empty_invariance_contexts() {
        let draft = chunk(vec![vec![0.0], vec![1.0], vec![2.0]]);
        let contexts = build_tree(&draft, &[0.4, 0.4, 0.4]).unwrap();
        for c in contexts.iter().filter(|c| c.kind() == ContextKind::Invariance) {
            assert_eq!(c.fixed().len(), 0);
        }
    }

    #[test]
    fn tree_rejects_length_mismatch() {
        let draft = chunk(vec![vec![0.0], vec![1.0]]);
        assert!(build_tree(&draft, &[0.5]).is_err());
    }

    #[test]
    fn context_rejects_target_in_fixed() {
        let a = Action::new(vec![0.0], Gripper::Open).unwrap();
        assert!(VerifyContext::new(ContextKind::Sequential, 1, vec![(1, a)]).is_err());
    }

    #[test]
    fn commit_takes_longest_clean_prefix() {
        assert_eq!(
            commit_horizon(&[true; 10], &[true; 10]).unwrap(),
            (10, false)
        );
        let v_seq = [true, true, false, true];
        assert_eq!(commit_horizon(&[true; 4], &v_seq).unwrap(), (2, false));
        assert_eq!(
            commit_horizon(&[false, true], &[true, true]).unwrap(),
            (1, true)
        );
    }

    #[test]
    fn commit_rejects_mismatched_lengths() {
        assert!(commit_horizon(&[true], &[true, true]).is_err());
        assert!(commit_horizon(&[], &[]).is_err());
    }

    #[test]
    fn threshold_requires_positive_entries() {
        assert!(AcceptanceThreshold::new(vec![0.1, 0.0]).is_err());
        assert!(AcceptanceThreshold::new(vec![]).is_err());
        assert!(AcceptanceThreshold::uniform(3, 0.5).is_ok());
    }
}
