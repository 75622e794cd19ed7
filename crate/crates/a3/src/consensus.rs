//! Trajectory consensus: clustering, dominant-mode selection, medoid draft,
//! and per-step consensus scores.
//!
//! Given `K` candidate chunks integrated from a common base state, this
//! module clusters the induced trajectories under the symmetrized
//! time-aligned distance, scores each cluster by mass times compactness,
//! picks the dominant cluster and its medoid as the draft, and computes one
//! consensus score per step from the cluster's mean aligned distance to the
//! medoid at that step.
//!
//! The scores are a self-consistency prior: downstream they order
//! verification contexts and select the draft, nothing else. They are not a
//! calibrated probability of correctness and no other component treats them
//! as one.

use serde::Serialize;

use crate::error::Error;
use crate::trajectory::{
    integrate, step_distance, trajectory_distance, ActionChunk, AlignmentWindow, State, Trajectory,
};
use crate::Result;

/// Dense symmetric pairwise dissimilarity matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Build an `n`×`n` matrix from an upper-triangle generator; both sides
    /// of each pair are assigned from the same value, so the result is
    /// exactly symmetric.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = f(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self { n, data }
    }

    /// Pairwise symmetrized trajectory distances.
    pub fn from_trajectories(trajectories: &[Trajectory], w: AlignmentWindow) -> Result<Self> {
        let n = trajectories.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = trajectory_distance(&trajectories[i], &trajectories[j], w)?;
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Ok(Self { n, data })
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Wrap a row-major `n`×`n` buffer. Shape is checked here; symmetry and
    /// finiteness are checked by [`DistanceMatrix::validate`] at use sites.
    pub fn from_raw(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::LengthMismatch {
                what: "distance matrix buffer",
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    /// Reject matrices that are not symmetric with a zero diagonal, or that
    /// contain non-finite entries.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(Error::InvalidMatrix("non-zero diagonal"));
            }
            for j in 0..self.n {
                let d = self.get(i, j);
                if !d.is_finite() {
                    return Err(Error::InvalidMatrix("non-finite entry"));
                }
                if d != self.get(j, i) {
                    return Err(Error::InvalidMatrix("not symmetric"));
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the consensus stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterConfig {
    /// Compactness temperature in the cluster score `p_c · exp(-disp/tau)`.
    pub tau: f64,
    /// Average-linkage stopping threshold: merging stops once the minimum
    /// inter-cluster average distance exceeds this value.
    pub cluster_cutoff: f64,
    /// Length scale dividing per-step distances inside the consensus-score
    /// exponential.
    pub consensus_scale: f64,
}

impl ClusterConfig {
    pub fn new(tau: f64, cluster_cutoff: f64, consensus_scale: f64) -> Result<Self> {
        for (name, v) in [
            ("tau", tau),
            ("cluster_cutoff", cluster_cutoff),
            ("consensus_scale", consensus_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(Self {
            tau,
            cluster_cutoff,
            consensus_scale,
        })
    }

    /// Derive defaults from the per-dimension acceptance tolerances: one
    /// tolerance ball per step for the cutoff and the temperature, one ball
    /// for the per-step consensus scale.
    pub fn from_tolerances(horizon: usize, per_dim: &[f64]) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if per_dim.is_empty() {
            return Err(Error::EmptyInput("tolerances"));
        }
        let unit: f64 = per_dim.iter().map(|d| d * d).sum();
        let cutoff = horizon as f64 * unit;
        Self::new(cutoff, cutoff, unit)
    }
}

/// Output of the consensus stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusReport {
    /// Cluster id per sample. Ids are canonical: clusters are numbered by
    /// their smallest member index, so sample 0 always lies in cluster 0.
    pub assignments: Vec<usize>,
    /// Score of each cluster, indexed by cluster id.
    pub cluster_scores: Vec<f64>,
    /// Id of the dominant cluster (argmax score, ties to the lowest id).
    pub dominant: usize,
    /// Sample index of the dominant cluster's medoid.
    pub medoid: usize,
    /// The medoid's chunk, unmodified; the draft under verification.
    pub draft: ActionChunk,
    /// Per-step consensus scores, each in `(0, 1]`.
    pub scores: Vec<f64>,
}

impl ConsensusReport {
    /// Member indices of the dominant cluster.
    pub fn dominant_members(&self) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == self.dominant)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Group sample indices by cluster id. Ids must be canonical (0-based,
/// dense); the result is indexed by id.
pub fn members_by_cluster(assignments: &[usize]) -> Vec<Vec<usize>> {
    let count = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); count];
    for (sample, &cluster) in assignments.iter().enumerate() {
        members[cluster].push(sample);
    }
    members
}

fn average_linkage(a: &[usize], b: &[usize], distances: &DistanceMatrix) -> f64 {
    let mut total = 0.0;
    for &i in a {
        for &j in b {
            total += distances.get(i, j);
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Average-linkage agglomerative clustering with a distance cutoff.
///
/// Starting from singletons, repeatedly merges the pair of clusters with the
/// smallest average inter-cluster distance while that minimum stays at or
/// below `cluster_cutoff`. Ties pick the lexicographically lowest pair of
/// cluster ids, so the partition is a deterministic function of the input.
///
/// Returns one canonical cluster id per sample (clusters numbered by their
/// smallest member).
pub fn cluster(distances: &DistanceMatrix, config: &ClusterConfig) -> Result<Vec<usize>> {
    distances.validate()?;
    let n = distances.len();
    if n == 0 {
        return Err(Error::EmptyInput("distance matrix"));
    }
    // Kept sorted by smallest member, which makes pair iteration order the
    // lexicographic order of (min_a, min_b) and keeps ids canonical.
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let link = average_linkage(&clusters[a], &clusters[b], distances);
                if best.map_or(true, |(d, _, _)| link < d) {
                    best = Some((link, a, b));
                }
            }
        }
        let (link, a, b) = best.expect("at least one pair");
        if link > config.cluster_cutoff {
            break;
        }
        let absorbed = clusters.remove(b);
        clusters[a].extend(absorbed);
        clusters[a].sort_unstable();
    }
    let mut assignments = vec![0; n];
    for (id, members) in clusters.iter().enumerate() {
        for &m in members {
            assignments[m] = id;
        }
    }
    Ok(assignments)
}

/// Mean pairwise distance within a cluster; zero for singletons.
pub fn dispersion(members: &[usize], distances: &DistanceMatrix) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    if members.len() == 1 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (idx, &i) in members.iter().enumerate() {
        for &j in &members[idx + 1..] {
            total += distances.get(i, j);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Cluster score: mass times compactness, `(|c|/K) · exp(-disp(c)/tau)`.
pub fn score_cluster(
    members: &[usize],
    total_samples: usize,
    distances: &DistanceMatrix,
    tau: f64,
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let mass = members.len() as f64 / total_samples as f64;
    let disp = dispersion(members, distances)?;
    Ok(mass * (-disp / tau).exp())
}

/// Member minimizing the summed distance to all members of the cluster.
/// Ties resolve to the lowest sample index.
pub fn select_medoid(members: &[usize], distances: &DistanceMatrix) -> Result<usize> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let mut best = members[0];
    let mut best_sum = f64::INFINITY;
    for &candidate in members {
        let sum: f64 = members
            .iter()
            .map(|&other| distances.get(candidate, other))
            .sum();
        if sum < best_sum {
            best_sum = sum;
            best = candidate;
        }
    }
    Ok(best)
}

/// Per-step consensus scores for the dominant cluster.
///
/// `step_dists[k][j]` must hold the time-aligned distance from sample `k`'s
/// trajectory to the medoid's at step `j`; only rows of dominant members are
/// read (the medoid's own row contributes zeros). The score at step `j` is
/// the cluster mass times `exp(-mean_k step_dists[k][j] / scale)`.
pub fn consensus_scores(
    dominant: &[usize],
    medoid: usize,
    step_dists: &[Vec<f64>],
    total_samples: usize,
    scale: f64,
) -> Result<Vec<f64>> {
    if dominant.is_empty() {
        return Err(Error::EmptyCluster);
    }
    if !dominant.contains(&medoid) {
        return Err(Error::InvalidConfig(format!(
            "medoid {medoid} is not a member of the dominant cluster"
        )));
    }
    let horizon = step_dists
        .get(dominant[0])
        .map(|row| row.len())
        .ok_or(Error::EmptyInput("step distances"))?;
    if horizon == 0 {
        return Err(Error::EmptyInput("step distances"));
    }
    for &k in dominant {
        let row = step_dists
            .get(k)
            .ok_or(Error::EmptyInput("step distance row"))?;
        if row.len() != horizon {
            return Err(Error::LengthMismatch {
                what: "step distance row",
                expected: horizon,
                got: row.len(),
            });
        }
    }
    let mass = dominant.len() as f64 / total_samples as f64;
    let mut scores = Vec::with_capacity(horizon);
    for j in 0..horizon {
        let mean: f64 =
            dominant.iter().map(|&k| step_dists[k][j]).sum::<f64>() / dominant.len() as f64;
        scores.push(mass * (-mean / scale).exp());
    }
    Ok(scores)
}

/// Run the full consensus stage over `K` candidate chunks.
///
/// Integrates every chunk from `base`, computes pairwise symmetrized
/// distances, clusters, scores each cluster, selects the dominant cluster
/// and its medoid, and computes per-step scores. The returned draft is the
/// medoid's chunk, bitwise unmodified.
pub fn run_stage1(
    base: &State,
    chunks: &[ActionChunk],
    w: AlignmentWindow,
    config: &ClusterConfig,
) -> Result<ConsensusReport> {
    if chunks.is_empty() {
        return Err(Error::EmptyInput("chunks"));
    }
    let horizon = chunks[0].horizon();
    let dims = chunks[0].dims();
    for c in chunks {
        if c.horizon() != horizon {
            return Err(Error::HorizonMismatch {
                expected: horizon,
                got: c.horizon(),
            });
        }
        if c.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                got: c.dims(),
            });
        }
    }
    let trajectories: Vec<Trajectory> = chunks
        .iter()
        .map(|c| integrate(base, c))
        .collect::<Result<_>>()?;
    let distances = DistanceMatrix::from_trajectories(&trajectories, w)?;
    let assignments = cluster(&distances, config)?;
    let members = members_by_cluster(&assignments);

    let mut cluster_scores = Vec::with_capacity(members.len());
    for m in &members {
        cluster_scores.push(score_cluster(m, chunks.len(), &distances, config.tau)?);
    }
    let mut dominant = 0;
    for (id, &s) in cluster_scores.iter().enumerate() {
        if s > cluster_scores[dominant] {
            dominant = id;
        }
    }

    let medoid = select_medoid(&members[dominant], &distances)?;
    let mut step_dists = vec![Vec::new(); chunks.len()];
    for &k in &members[dominant] {
        let mut row = Vec::with_capacity(horizon);
        for j in 0..horizon {
            row.push(step_distance(&trajectories[k], &trajectories[medoid], j, w)?);
        }
        step_dists[k] = row;
    }
    let scores = consensus_scores(
        &members[dominant],
        medoid,
        &step_dists,
        chunks.len(),
        config.consensus_scale,
    )?;

    Ok(ConsensusReport {
        assignments,
        cluster_scores,
        dominant,
        medoid,
        draft: chunks[medoid].clone(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Gripper;

    fn config(tau: f64, cutoff: f64, scale: f64) -> ClusterConfig {
        ClusterConfig::new(tau, cutoff, scale).unwrap()
    }

    fn chunk_1d(deltas: &[f64]) -> ActionChunk {
        ActionChunk::from_deltas(deltas.iter().map(|&d| vec![d]).collect(), Gripper::Open)
            .unwrap()
    }

    #[test]
    fn all_zero_distances_form_single_cluster() {
        let d = DistanceMatrix::from_fn(8, |_, _| 0.0);
        let assignments = cluster(&d, &config(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(assignments, vec![0; 8]);
    }

    #[test]
    fn two_tight_groups_split_at_cutoff() {
        // Members 0-3 and 4-7, intra 0.01, inter 100, cutoff 1.
        let d = DistanceMatrix::from_fn(8, |i, j| if (i < 4) == (j < 4) { 0.01 } else { 100.0 });
        let assignments = cluster(&d, &config(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(assignments, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn singleton_input_is_single_cluster() {
        let d = DistanceMatrix::from_fn(1, |_, _| 0.0);
        assert_eq!(cluster(&d, &config(1.0, 1.0, 1.0)).unwrap(), vec![0]);
    }

    #[test]
    fn cluster_rejects_bad_matrices() {
        let asym = DistanceMatrix::from_raw(2, vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        assert!(matches!(
            cluster(&asym, &config(1.0, 1.0, 1.0)),
            Err(Error::InvalidMatrix(_))
        ));
        let nan =
            DistanceMatrix::from_raw(2, vec![0.0, f64::NAN, f64::NAN, 0.0]).unwrap();
        assert!(matches!(
            cluster(&nan, &config(1.0, 1.0, 1.0)),
            Err(Error::InvalidMatrix(_))
        ));
    }

    #[test]
    fn singleton_cluster_score_is_mass() {
        let d = DistanceMatrix::from_fn(8, |_, _| 50.0);
        let s = score_cluster(&[3], 8, &d, 1.0).unwrap();
        assert_eq!(s, 0.125);
    }

    #[test]
    fn full_tight_cluster_scores_one() {
        let d = DistanceMatrix::from_fn(8, |_, _| 0.0);
        let members: Vec<usize> = (0..8).collect();
        let s = score_cluster(&members, 8, &d, 1.0).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn pair_cluster_score_direct_substitution() {
        // |c|=2 of K=4, single pair distance 2, tau 1:
        // 0.5 * exp(-2) = 0.06766764161830635.
        let d = DistanceMatrix::from_fn(4, |i, j| if i == 0 && j == 1 { 2.0 } else { 9.0 });
        let s = score_cluster(&[0, 1], 4, &d, 1.0).unwrap();
        let direct = 0.5 * (-2.0f64).exp();
        assert!((s - direct).abs() < 1e-15);
        assert!((s - 0.06766764161830635).abs() < 1e-15);
    }

    #[test]
    fn score_cluster_rejects_empty() {
        let d = DistanceMatrix::from_fn(2, |_, _| 1.0);
        assert!(matches!(
            score_cluster(&[], 2, &d, 1.0),
            Err(Error::EmptyCluster)
        ));
    }

    #[test]
    fn medoid_minimizes_distance_sum() {
        // 1-D points at 0, 1, 10 with absolute-difference dissimilarity:
        // sums are 11, 10, 19, so the middle point wins.
        let pts = [0.0f64, 1.0, 10.0];
        let d = DistanceMatrix::from_fn(3, |i, j| (pts[i] - pts[j]).abs());
        assert_eq!(select_medoid(&[0, 1, 2], &d).unwrap(), 1);

        // Exhaustive check of the same rule.
        let sums: Vec<f64> = (0..3).map(|i| (0..3).map(|j| d.get(i, j)).sum()).collect();
        let brute = sums
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(brute, 1);
    }

    #[test]
    fn medoid_singleton_and_ties() {
        let d = DistanceMatrix::from_fn(2, |_, _| 3.0);
        assert_eq!(select_medoid(&[1], &d).unwrap(), 1);
        // Symmetric pair: equal sums, lower index wins.
        assert_eq!(select_medoid(&[0, 1], &d).unwrap(), 0);
    }

    #[test]
    fn consensus_scores_identical_samples_are_one() {
        let step_dists = vec![vec![0.0; 4]; 3];
        let s = consensus_scores(&[0, 1, 2], 0, &step_dists, 3, 1.0).unwrap();
        assert_eq!(s, vec![1.0; 4]);
    }

    #[test]
    fn consensus_scores_direct_substitution() {
        // Dominant pair of K=4; non-medoid distance equals the scale, so the
        // cluster mean is scale/2 and the score is 0.5 * exp(-0.5).
        let scale = 2.5;
        let step_dists = vec![vec![0.0], vec![scale], vec![], vec![]];
        let s = consensus_scores(&[0, 1], 0, &step_dists, 4, scale).unwrap();
        let direct = 0.5 * (-0.5f64).exp();
        assert!((s[0] - direct).abs() < 1e-15);
        assert!((s[0] - 0.3032653298563167).abs() < 1e-15);
    }

    #[test]
    fn consensus_scores_decrease_with_drift() {
        let base = vec![vec![0.0, 0.0], vec![0.1, 0.5]];
        let s0 = consensus_scores(&[0, 1], 0, &base, 2, 1.0).unwrap();
        let drifted = vec![vec![0.0, 0.0], vec![0.1, 0.9]];
        let s1 = consensus_scores(&[0, 1], 0, &drifted, 2, 1.0).unwrap();
        assert_eq!(s0[0], s1[0]);
        assert!(s1[1] < s0[1]);
    }

    #[test]
    fn consensus_scores_require_medoid_membership() {
        let step_dists = vec![vec![0.0], vec![1.0]];
        assert!(consensus_scores(&[1], 0, &step_dists, 2, 1.0).is_err());
    }

    #[test]
    fn stage1_identical_chunks() {
        let base = State::origin(1);
        let chunks = vec![chunk_1d(&[0.5, 0.5, 0.5]); 6];
        let report = run_stage1(
            &base,
            &chunks,
            AlignmentWindow::new(1),
            &config(1.0, 1.0, 1.0),
        )
        .unwrap();
        assert_eq!(report.assignments, vec![0; 6]);
        assert_eq!(report.dominant, 0);
        assert_eq!(report.medoid, 0);
        assert_eq!(report.scores, vec![1.0; 3]);
        assert_eq!(&report.draft, &chunks[0]);
    }

    #[test]
    fn stage1_majority_mode_sets_mass_factor() {
        // Six identical chunks near one plan, two identical chunks far away:
        // the majority cluster wins and every score carries its 0.75 mass.
        let base = State::origin(1);
        let mut chunks = vec![chunk_1d(&[0.1, 0.1]); 6];
        chunks.extend(vec![chunk_1d(&[50.0, 50.0]); 2]);
        let report = run_stage1(
            &base,
            &chunks,
            AlignmentWindow::new(0),
            &config(1.0, 1.0, 1.0),
        )
        .unwrap();
        assert_eq!(report.assignments, vec![0, 0, 0, 0, 0, 0, 1, 1]);
        assert_eq!(report.dominant, 0);
        assert!(report.dominant_members().contains(&report.medoid));
        assert_eq!(report.scores, vec![0.75; 2]);
    }

    #[test]
    fn stage1_tighter_minority_can_dominate() {
        // Five spread-out chunks versus a tight trio far away. With tau=1
        // the trio's compactness beats the majority's mass.
        let base = State::origin(1);
        let majority: Vec<ActionChunk> = [0.0, 1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&x| chunk_1d(&[x]))
            .collect();
        let tight = vec![chunk_1d(&[100.0]), chunk_1d(&[100.0]), chunk_1d(&[100.0])];
        let mut chunks = majority.clone();
        chunks.extend(tight);
        let cfg = config(1.0, 20.0, 1.0);
        let report = run_stage1(&base, &chunks, AlignmentWindow::new(0), &cfg).unwrap();

        // Independent evaluation of both scores.
        let trajs: Vec<Trajectory> = chunks
            .iter()
            .map(|c| integrate(&base, c).unwrap())
            .collect();
        let d = DistanceMatrix::from_trajectories(&trajs, AlignmentWindow::new(0)).unwrap();
        let s_major = score_cluster(&[0, 1, 2, 3, 4], 8, &d, cfg.tau).unwrap();
        let s_minor = score_cluster(&[5, 6, 7], 8, &d, cfg.tau).unwrap();
        assert!(s_minor > s_major);
        assert_eq!(report.dominant, 1);
        assert_eq!(report.dominant_members(), vec![5, 6, 7]);
    }

    #[test]
    fn stage1_single_chunk_degenerates_to_trusting_it() {
        let base = State::origin(1);
        let chunks = vec![chunk_1d(&[1.0, 2.0])];
        let report = run_stage1(
            &base,
            &chunks,
            AlignmentWindow::new(0),
            &config(1.0, 1.0, 1.0),
        )
        .unwrap();
        assert_eq!(report.assignments, vec![0]);
        assert_eq!(report.medoid, 0);
        assert_eq!(report.scores, vec![1.0; 2]);
    }

    #[test]
    fn stage1_rejects_mixed_horizons() {
        let base = State::origin(1);
        let chunks = vec![chunk_1d(&[1.0]), chunk_1d(&[1.0, 1.0])];
        assert!(run_stage1(
            &base,
            &chunks,
            AlignmentWindow::new(0),
            &config(1.0, 1.0, 1.0)
        )
        .is_err());
    }
}
