//! Actions, states, kinematic integration, and locally time-aligned
//! trajectory distances.
//!
//! A chunk of incremental actions is turned into a trajectory of cumulative
//! poses by [`integrate`]; trajectories are compared with a per-step distance
//! that may shift one trajectory by up to `w` steps to absorb temporal phase
//! offsets ([`step_distance`]), aggregated and symmetrized over the horizon
//! by [`trajectory_distance`].
//!
//! All step indices in this module are 0-based: step `j` refers to the pose
//! reached after executing actions `0..=j`.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Binary gripper channel.
///
/// The gripper rides along with each action but is excluded from every
/// distance and every verification comparison; it uses latest-value
/// semantics rather than integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gripper {
    Open,
    Closed,
}

impl Gripper {
    /// The other gripper state.
    pub fn flipped(self) -> Self {
        match self {
            Gripper::Open => Gripper::Closed,
            Gripper::Closed => Gripper::Open,
        }
    }
}

/// One incremental displacement over the continuous action dimensions, plus
/// the commanded gripper state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// Incremental displacement per continuous dimension, environment units.
    pub deltas: Vec<f64>,
    /// Commanded gripper state for this step.
    pub gripper: Gripper,
}

impl Action {
    /// Build an action, rejecting empty or non-finite displacement vectors.
    pub fn new(deltas: Vec<f64>, gripper: Gripper) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::EmptyInput("action deltas"));
        }
        if deltas.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("action deltas"));
        }
        Ok(Self { deltas, gripper })
    }

    /// Number of continuous dimensions.
    pub fn dims(&self) -> usize {
        self.deltas.len()
    }
}

/// A fixed-horizon sequence of actions emitted by one policy forward pass.
///
/// Invariants: at least one action, and every action shares the same number
/// of continuous dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    actions: Vec<Action>,
}

impl ActionChunk {
    /// Build a chunk, validating the shared-dimension invariant.
    pub fn new(actions: Vec<Action>) -> Result<Self> {
        let first = actions.first().ok_or(Error::EmptyInput("chunk actions"))?;
        let dims = first.dims();
        for a in &actions {
            if a.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    got: a.dims(),
                });
            }
        }
        Ok(Self { actions })
    }

    /// Build a chunk from raw delta rows with a uniform gripper state.
    pub fn from_deltas(rows: Vec<Vec<f64>>, gripper: Gripper) -> Result<Self> {
        let actions = rows
            .into_iter()
            .map(|r| Action::new(r, gripper))
            .collect::<Result<Vec<_>>>()?;
        Self::new(actions)
    }

    /// Prediction horizon `H`.
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Number of continuous dimensions `d_c`.
    pub fn dims(&self) -> usize {
        self.actions[0].dims()
    }

    /// The ordered actions.
    pub fn actions(&self) -> &[Action] {
        &self.actions
    }
}

/// A cumulative pose plus the current gripper state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Cumulative pose per continuous dimension, environment units.
    pub pose: Vec<f64>,
    /// Current gripper state.
    pub gripper: Gripper,
}

impl State {
    pub fn new(pose: Vec<f64>, gripper: Gripper) -> Result<Self> {
        if pose.is_empty() {
            return Err(Error::EmptyInput("state pose"));
        }
        if pose.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("state pose"));
        }
        Ok(Self { pose, gripper })
    }

    /// Origin state with the gripper open.
    pub fn origin(dims: usize) -> Self {
        Self {
            pose: vec![0.0; dims],
            gripper: Gripper::Open,
        }
    }

    pub fn dims(&self) -> usize {
        self.pose.len()
    }
}

/// The `H` cumulative states induced by integrating a chunk from a base
/// state. Produced by [`integrate`]; `states[j]` is the pose after actions
/// `0..=j`, and its gripper is the gripper commanded by action `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    base: State,
    states: Vec<State>,
}

impl Trajectory {
    /// The state the chunk was integrated from.
    pub fn base(&self) -> &State {
        &self.base
    }

    /// The induced states, one per chunk step.
    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn dims(&self) -> usize {
        self.base.dims()
    }

    /// Final induced state.
    pub fn terminal(&self) -> &State {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Maximum temporal shift used when matching one trajectory's step against
/// another's neighborhood. Must stay strictly below the horizon of the
/// trajectories it is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentWindow {
    /// Maximum absolute shift, in steps.
    pub w: usize,
}

impl AlignmentWindow {
    pub fn new(w: usize) -> Self {
        Self { w }
    }
}

/// Kinematically integrate a chunk of incremental actions from a base state.
///
/// Pose dimensions add; the gripper carries the latest commanded value.
pub fn integrate(base: &State, chunk: &ActionChunk) -> Result<Trajectory> {
    if chunk.dims() != base.dims() {
        return Err(Error::DimensionMismatch {
            expected: base.dims(),
            got: chunk.dims(),
        });
    }
    let mut pose = base.pose.clone();
    let mut states = Vec::with_capacity(chunk.horizon());
    for action in chunk.actions() {
        for (p, d) in pose.iter_mut().zip(&action.deltas) {
            *p += d;
        }
        states.push(State {
            pose: pose.clone(),
            gripper: action.gripper,
        });
    }
    Ok(Trajectory {
        base: base.clone(),
        states,
    })
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn check_pair(ta: &Trajectory, tb: &Trajectory, w: AlignmentWindow) -> Result<usize> {
    let h = ta.horizon();
    if tb.horizon() != h {
        return Err(Error::HorizonMismatch {
            expected: h,
            got: tb.horizon(),
        });
    }
    if ta.dims() != tb.dims() {
        return Err(Error::DimensionMismatch {
            expected: ta.dims(),
            got: tb.dims(),
        });
    }
    if w.w >= h {
        return Err(Error::WindowTooLarge {
            window: w.w,
            horizon: h,
        });
    }
    Ok(h)
}

/// Locally time-aligned squared distance at step `j` (0-based).
///
/// Returns the minimum over shifts `|Δ| ≤ w` (with `j+Δ` kept inside the
/// horizon; out-of-range shifts are skipped) of the squared Euclidean
/// distance between `ta`'s pose at `j` and `tb`'s pose at `j+Δ`. The shift
/// applies to `tb` only, so this quantity is directional. Gripper channels
/// never enter the distance.
pub fn step_distance(
    ta: &Trajectory,
    tb: &Trajectory,
    j: usize,
    w: AlignmentWindow,
) -> Result<f64> {
    let h = check_pair(ta, tb, w)?;
    if j >= h {
        return Err(Error::StepOutOfRange {
            step: j,
            horizon: h,
        });
    }
    let pose_a = &ta.states()[j].pose;
    let mut best = f64::INFINITY;
    let lo = j.saturating_sub(w.w);
    let hi = (j + w.w).min(h - 1);
    for idx in lo..=hi {
        let d = squared_euclidean(pose_a, &tb.states()[idx].pose);
        if d < best {
            best = d;
        }
    }
    Ok(best)
}

fn directed_distance(ta: &Trajectory, tb: &Trajectory, w: AlignmentWindow) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..ta.horizon() {
        total += step_distance(ta, tb, j, w)?;
    }
    Ok(total)
}

/// Aggregated, symmetrized trajectory distance.
///
/// The per-step aligned distance is directional (the shift applies to the
/// second argument), so the sum over steps is averaged over both argument
/// orders to make a symmetric dissimilarity suitable for clustering.
pub fn trajectory_distance(ta: &Trajectory, tb: &Trajectory, w: AlignmentWindow) -> Result<f64> {
    check_pair(ta, tb, w)?;
    let forward = directed_distance(ta, tb, w)?;
    let backward = directed_distance(tb, ta, w)?;
    Ok(0.5 * (forward + backward))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk_1d(deltas: &[f64]) -> ActionChunk {
        ActionChunk::from_deltas(deltas.iter().map(|&d| vec![d]).collect(), Gripper::Open)
            .unwrap()
    }

    fn traj_1d(base: f64, deltas: &[f64]) -> Trajectory {
        integrate(&State::new(vec![base], Gripper::Open).unwrap(), &chunk_1d(deltas)).unwrap()
    }

    /// Trajectory through the given absolute 1-D positions.
    fn traj_through(base: f64, positions: &[f64]) -> Trajectory {
        let mut deltas = Vec::new();
        let mut prev = base;
        for &p in positions {
            deltas.push(p - prev);
            prev = p;
        }
        traj_1d(base, &deltas)
    }

    /// Reference step distance: exhaustive enumeration of all in-range
    /// shifts, written independently of the implementation.
    fn brute_force_step(ta: &Trajectory, tb: &Trajectory, j: usize, w: usize) -> f64 {
        let h = ta.horizon() as isize;
        let mut best = f64::INFINITY;
        for delta in -(w as isize)..=(w as isize) {
            let idx = j as isize + delta;
            if idx < 0 || idx >= h {
                continue;
            }
            let d: f64 = ta.states()[j]
                .pose
                .iter()
                .zip(&tb.states()[idx as usize].pose)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            best = best.min(d);
        }
        best
    }

    #[test]
    fn integrate_cumulative_sum_2d() {
        let base = State::new(vec![0.0, 0.0], Gripper::Open).unwrap();
        let chunk =
            ActionChunk::from_deltas(vec![vec![1.0, 0.0], vec![0.0, 1.0]], Gripper::Open).unwrap();
        let t = integrate(&base, &chunk).unwrap();
        assert_eq!(t.states()[0].pose, vec![1.0, 0.0]);
        assert_eq!(t.states()[1].pose, vec![1.0, 1.0]);
    }

    #[test]
    fn integrate_zero_chunk_holds_pose() {
        let base = State::new(vec![5.0, 5.0], Gripper::Closed).unwrap();
        let chunk = ActionChunk::from_deltas(vec![vec![0.0, 0.0]; 3], Gripper::Closed).unwrap();
        let t = integrate(&base, &chunk).unwrap();
        assert_eq!(t.horizon(), 3);
        for s in t.states() {
            assert_eq!(s.pose, vec![5.0, 5.0]);
        }
    }

    #[test]
    fn integrate_running_sum_1d() {
        let t = traj_1d(0.0, &[0.1, -0.2, 0.4]);
        // Prefix sums computed independently of the integration loop.
        let expected: Vec<f64> = [0.1, -0.2, 0.4]
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect();
        for (s, e) in t.states().iter().zip(&expected) {
            assert!((s.pose[0] - e).abs() < 1e-12);
        }
        assert!((t.states()[2].pose[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn integrate_rejects_dimension_mismatch() {
        let base = State::new(vec![0.0], Gripper::Open).unwrap();
        let chunk =
            ActionChunk::from_deltas(vec![vec![1.0, 2.0]], Gripper::Open).unwrap();
        assert!(matches!(
            integrate(&base, &chunk),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gripper_uses_latest_value() {
        let base = State::new(vec![0.0], Gripper::Open).unwrap();
        let actions = vec![
            Action::new(vec![1.0], Gripper::Open).unwrap(),
            Action::new(vec![1.0], Gripper::Closed).unwrap(),
        ];
        let t = integrate(&base, &ActionChunk::new(actions).unwrap()).unwrap();
        assert_eq!(t.states()[0].gripper, Gripper::Open);
        assert_eq!(t.states()[1].gripper, Gripper::Closed);
    }

    #[test]
    fn step_distance_zero_on_identical() {
        let t = traj_through(0.0, &[0.0, 1.0, 2.0]);
        for j in 0..3 {
            for w in 0..3 {
                assert_eq!(step_distance(&t, &t, j, AlignmentWindow::new(w)).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn step_distance_alignment_absorbs_phase_shift() {
        let ta = traj_through(0.0, &[0.0, 1.0, 2.0]);
        let tb = traj_through(0.0, &[1.0, 2.0, 3.0]);
        let aligned = step_distance(&ta, &tb, 1, AlignmentWindow::new(1)).unwrap();
        assert_eq!(aligned, brute_force_step(&ta, &tb, 1, 1));
        assert_eq!(aligned, 0.0);
        let unaligned = step_distance(&ta, &tb, 1, AlignmentWindow::new(0)).unwrap();
        assert_eq!(unaligned, brute_force_step(&ta, &tb, 1, 0));
        assert_eq!(unaligned, 1.0);
        assert!(aligned <= unaligned);
    }

    #[test]
    fn step_distance_rejects_bad_indices() {
        let t = traj_through(0.0, &[0.0, 1.0]);
        assert!(matches!(
            step_distance(&t, &t, 2, AlignmentWindow::new(0)),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(matches!(
            step_distance(&t, &t, 0, AlignmentWindow::new(2)),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn trajectory_distance_zero_on_identical() {
        let t = traj_through(0.0, &[0.3, -0.1, 0.8, 0.8]);
        for w in 0..4 {
            assert_eq!(trajectory_distance(&t, &t, AlignmentWindow::new(w)).unwrap(), 0.0);
        }
    }

    #[test]
    fn trajectory_distance_constant_offset_no_window() {
        let ta = traj_through(0.0, &[0.0, 1.0, 2.0]);
        let tb = traj_through(0.0, &[1.0, 2.0, 3.0]);
        let d = trajectory_distance(&ta, &tb, AlignmentWindow::new(0)).unwrap();
        assert_eq!(d, 3.0);
    }

    #[test]
    fn trajectory_distance_matches_exhaustive_shift_enumeration() {
        let ta = traj_through(0.0, &[0.0, 1.0, 2.0]);
        let tb = traj_through(0.0, &[1.0, 2.0, 3.0]);
        let w = 1;
        let forward: f64 = (0..3).map(|j| brute_force_step(&ta, &tb, j, w)).sum();
        let backward: f64 = (0..3).map(|j| brute_force_step(&tb, &ta, j, w)).sum();
        let expected = 0.5 * (forward + backward);
        let d = trajectory_distance(&ta, &tb, AlignmentWindow::new(w)).unwrap();
        assert_eq!(d, expected);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn trajectory_distance_rejects_horizon_mismatch() {
        let ta = traj_through(0.0, &[0.0, 1.0]);
        let tb = traj_through(0.0, &[0.0, 1.0, 2.0]);
        assert!(matches!(
            trajectory_distance(&ta, &tb, AlignmentWindow::new(0)),
            Err(Error::HorizonMismatch { .. })
        ));
    }

    #[test]
    fn window_growth_never_increases_step_distance() {
        let ta = traj_through(0.0, &[0.2, 0.9, 1.4, 2.2, 3.0]);
        let tb = traj_through(0.1, &[0.0, 0.7, 1.9, 2.1, 2.8]);
        for j in 0..5 {
            let mut prev = f64::INFINITY;
            for w in 0..5 {
                let d = step_distance(&ta, &tb, j, AlignmentWindow::new(w)).unwrap();
                assert!(d <= prev);
                prev = d;
            }
        }
    }
}
