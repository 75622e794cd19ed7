//! Single-episode rollout under a fixed or adaptive execution strategy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::policy::{ChunkPolicy, MixturePolicy};
use crate::seed::mix2;
use crate::sim::scenario::{Scenario, Strategy};
use crate::trajectory::{Gripper, State};
use crate::verifier::a3_decide;
use crate::Result;

const STREAM_OBS: u64 = 0x0B5;
const STREAM_DECIDE: u64 = 0xDEC;

/// Per-decision log used by horizon-adaptivity analyses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionStat {
    /// Horizon the strategy decided to commit (before truncation by success
    /// or budget exhaustion).
    pub decided: usize,
    /// Steps actually executed from this decision's chunk.
    pub executed: usize,
    /// Whether the true state lay inside a precision phase at decision time.
    pub in_phase: bool,
    /// Whether the adaptive decision fell back to a single action.
    pub fallback: bool,
}

/// Outcome and accounting of one episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub success: bool,
    /// Environment steps executed; always the sum of `committed_horizons`.
    pub total_steps: usize,
    /// Policy invocations: one per decision for fixed strategies, two per
    /// decision (sampling batch + verification batch) for adaptive ones.
    pub forward_calls: usize,
    /// Executed prefix length per decision.
    pub committed_horizons: Vec<usize>,
    pub seed: u64,
    /// Per-decision detail.
    pub decisions: Vec<DecisionStat>,
}

/// Roll out one episode.
///
/// Loop: observe the true state under observation noise, decide a committed
/// prefix with the strategy, execute it open-loop (each action's deltas are
/// applied exactly, so the sampled noise inside the chunk is the actuation
/// error), and repeat until the goal ball is reached or the step budget is
/// exhausted. Fully deterministic given the scenario seed and `episode_seed`.
pub fn run_episode(
    scenario: &Scenario,
    policy: &MixturePolicy,
    strategy: &Strategy,
    episode_seed: u64,
) -> Result<EpisodeRecord> {
    let master = mix2(scenario.seed, episode_seed, 0xE9);
    let mut obs_rng = ChaCha8Rng::seed_from_u64(mix2(master, STREAM_OBS, 0));

    let mut pose = scenario.start.clone();
    let mut gripper = Gripper::Open;
    let mut success = scenario.goal_distance(&pose) <= scenario.success_radius;
    let mut total_steps = 0usize;
    let mut forward_calls = 0usize;
    let mut committed_horizons = Vec::new();
    let mut decisions = Vec::new();

    let mut decision_idx = 0u64;
    while !success && total_steps < scenario.step_budget {
        // Observe.
        let mut observed = pose.clone();
        if scenario.observation_noise > 0.0 {
            for o in observed.iter_mut() {
                let z: f64 = obs_rng.sample(StandardNormal);
                *o += scenario.observation_noise * z;
            }
        }
        let obs_state = State {
            pose: observed,
            gripper,
        };
        let in_phase = scenario.in_phase(&pose);

        // The policy's confidence degrades inside precision phases and under
        // observation corruption.
        let scale = scenario.noise_scale_at(&obs_state.pose);
        let scaled;
        let decision_policy: &MixturePolicy = if (scale - 1.0).abs() > 1e-12 {
            scaled = policy.scaled_noise(scale)?;
            &scaled
        } else {
            policy
        };

        // Decide.
        let decision_seed = mix2(master, STREAM_DECIDE, decision_idx);
        decision_idx += 1;
        let (chunk, decided, fallback) = match strategy {
            Strategy::Fixed { l } => {
                let mut chunks = decision_policy.sample_chunks(&obs_state, 1, decision_seed)?;
                forward_calls += 1;
                (chunks.pop().expect("one chunk"), *l, false)
            }
            Strategy::Adaptive { params } => {
                let decision = a3_decide(decision_policy, &obs_state, params, decision_seed)?;
                forward_calls += 2;
                (
                    decision.report.draft,
                    decision.outcome.horizon,
                    decision.outcome.fallback_used,
                )
            }
        };

        // Execute the committed prefix open-loop against the true state.
        let mut executed = 0usize;
        for action in chunk.actions().iter().take(decided) {
            for (p, d) in pose.iter_mut().zip(&action.deltas) {
                *p += d;
            }
            gripper = action.gripper;
            total_steps += 1;
            executed += 1;
            if scenario.goal_distance(&pose) <= scenario.success_radius {
                success = true;
                break;
            }
            if total_steps >= scenario.step_budget {
                break;
            }
        }
        committed_horizons.push(executed);
        decisions.push(DecisionStat {
            decided,
            executed,
            in_phase,
            fallback,
        });
    }

    Ok(EpisodeRecord {
        success,
        total_steps,
        forward_calls,
        committed_horizons,
        seed: episode_seed,
        decisions,
    })
}
