//! Scenario and strategy definitions, plus policy construction.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::policy::{
    GaussianChunkPolicy, MeanPlan, MixtureGating, MixturePolicy, RedecodeMode,
};
use crate::trajectory::{AlignmentWindow, Gripper};
use crate::verifier::{A3Params, AcceptanceThreshold};
use crate::Result;

/// A spherical region with a noise-inflation multiplier. While the state is
/// inside, the policy's sampling noise is scaled by `multiplier`, modeling
/// reduced predictive reliability in contact-like, precision-critical zones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: Vec<f64>,
    pub radius: f64,
    pub multiplier: f64,
}

impl Region {
    pub fn contains(&self, pose: &[f64]) -> bool {
        let d2: f64 = self
            .center
            .iter()
            .zip(pose)
            .map(|(c, p)| (c - p) * (c - p))
            .sum();
        d2.sqrt() <= self.radius
    }
}

/// One mixture component of the scenario policy: a route toward the goal,
/// optionally via an intermediate waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub weight: f64,
    #[serde(default)]
    pub via: Option<Vec<f64>>,
}

/// Parameters of the scenario's chunking policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    /// Base per-step noise standard deviation at step 0.
    pub sigma0: f64,
    /// Per-step noise growth factor; deeper chunk steps are noisier when
    /// this exceeds 1.
    #[serde(default = "default_growth")]
    pub growth: f64,
    /// Temporal correlation between consecutive steps.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Nominal displacement per step.
    pub step_size: f64,
    /// Route-plausibility gating temperature; weights of detour routes decay
    /// as `exp(-extra_cost/gate_eta)` once the state has advanced.
    #[serde(default = "default_gate_eta")]
    pub gate_eta: f64,
    /// Mixture routes. A single route makes the policy unimodal.
    pub routes: Vec<RouteSpec>,
    /// Steps at or beyond this index command a closed gripper.
    #[serde(default)]
    pub close_from: Option<usize>,
}

fn default_growth() -> f64 {
    1.0
}
fn default_rho() -> f64 {
    0.8
}
fn default_gate_eta() -> f64 {
    1.0
}

/// A rollout task: reach `goal` within `success_radius` before the step
/// budget runs out, replanning with some execution strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub dims: usize,
    pub horizon: usize,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub success_radius: f64,
    /// Noise-inflation regions (contact-like precision phases).
    #[serde(default)]
    pub phases: Vec<Region>,
    pub step_budget: usize,
    /// Standard deviation of the observation noise added per decision.
    #[serde(default)]
    pub observation_noise: f64,
    /// How strongly observation corruption inflates the policy's sampling
    /// noise, per unit of `observation_noise / sigma0`. Models the loss of
    /// predictive confidence under degraded observations.
    #[serde(default = "default_noise_sensitivity")]
    pub noise_sensitivity: f64,
    pub seed: u64,
    pub policy: PolicySpec,
}

fn default_noise_sensitivity() -> f64 {
    1.0
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dims == 0 {
            return fail(format!("scenario {}: dims must be positive", self.name));
        }
        if self.horizon == 0 {
            return fail(format!("scenario {}: horizon must be positive", self.name));
        }
        if self.start.len() != self.dims || self.goal.len() != self.dims {
            return fail(format!(
                "scenario {}: start/goal must have {} entries",
                self.name, self.dims
            ));
        }
        if !(self.success_radius > 0.0) {
            return fail(format!(
                "scenario {}: success_radius must be positive",
                self.name
            ));
        }
        if self.step_budget < self.horizon {
            return fail(format!(
                "scenario {}: step_budget must be at least the horizon",
                self.name
            ));
        }
        if !(self.observation_noise >= 0.0) {
            return fail(format!(
                "scenario {}: observation_noise must be non-negative",
                self.name
            ));
        }
        if self.noise_sensitivity < 0.0 {
            return fail(format!(
                "scenario {}: noise_sensitivity must be non-negative",
                self.name
            ));
        }
        for (i, r) in self.phases.iter().enumerate() {
            if r.center.len() != self.dims {
                return fail(format!(
                    "scenario {}: phases[{i}].center must have {} entries",
                    self.name, self.dims
                ));
            }
            if !(r.radius > 0.0) || !(r.multiplier > 0.0) {
                return fail(format!(
                    "scenario {}: phases[{i}] radius and multiplier must be positive",
                    self.name
                ));
            }
        }
        if self.policy.routes.is_empty() {
            return fail(format!(
                "scenario {}: policy.routes must not be empty",
                self.name
            ));
        }
        for (i, r) in self.policy.routes.iter().enumerate() {
            if let Some(via) = &r.via {
                if via.len() != self.dims {
                    return fail(format!(
                        "scenario {}: policy.routes[{i}].via must have {} entries",
                        self.name, self.dims
                    ));
                }
            }
            if !(r.weight > 0.0) {
                return fail(format!(
                    "scenario {}: policy.routes[{i}].weight must be positive",
                    self.name
                ));
            }
        }
        if !(self.policy.sigma0 >= 0.0) {
            return fail(format!("scenario {}: policy.sigma0 must be non-negative", self.name));
        }
        if !(self.policy.step_size > 0.0) {
            return fail(format!("scenario {}: policy.step_size must be positive", self.name));
        }
        Ok(())
    }

    /// Build the scenario's chunking policy (unscaled).
    pub fn build_policy(&self) -> Result<MixturePolicy> {
        let gripper_plan: Vec<Gripper> = (0..self.horizon)
            .map(|j| match self.policy.close_from {
                Some(c) if j >= c => Gripper::Closed,
                _ => Gripper::Open,
            })
            .collect();
        let components = self
            .policy
            .routes
            .iter()
            .map(|route| {
                let plan = match &route.via {
                    Some(via) => MeanPlan::Via {
                        waypoint: via.clone(),
                        goal: self.goal.clone(),
                        step_size: self.policy.step_size,
                    },
                    None => MeanPlan::GoalDirected {
                        goal: self.goal.clone(),
                        step_size: self.policy.step_size,
                    },
                };
                GaussianChunkPolicy::ar1(
                    plan,
                    gripper_plan.clone(),
                    self.dims,
                    // A mixture needs non-degenerate components; a zero-noise
                    // scenario is modeled with a tiny but positive sigma.
                    self.policy.sigma0.max(1e-12),
                    self.policy.growth,
                    self.policy.rho,
                )
                .map(|c| (route.weight, c))
            })
            .collect::<Result<Vec<_>>>()?;
        MixturePolicy::new(components)?.with_gating(MixtureGating::RouteCost {
            eta: self.policy.gate_eta,
        })
    }

    /// Largest phase multiplier whose region contains the pose; 1 elsewhere.
    pub fn phase_multiplier(&self, pose: &[f64]) -> f64 {
        self.phases
            .iter()
            .filter(|r| r.contains(pose))
            .map(|r| r.multiplier)
            .fold(1.0, f64::max)
    }

    /// Whether the pose lies inside any phase region.
    pub fn in_phase(&self, pose: &[f64]) -> bool {
        self.phases.iter().any(|r| r.contains(pose))
    }

    /// Noise-scale factor applied to the policy for a decision made at the
    /// given observed pose: phase inflation times observation-corruption
    /// inflation.
    pub fn noise_scale_at(&self, observed_pose: &[f64]) -> f64 {
        let obs_factor = if self.policy.sigma0 > 0.0 {
            1.0 + self.noise_sensitivity * self.observation_noise / self.policy.sigma0
        } else {
            1.0
        };
        self.phase_multiplier(observed_pose) * obs_factor
    }

    /// Default per-dimension acceptance threshold: twice the base noise
    /// standard deviation, so roughly nine of ten unconditional draws pass
    /// at step 0 in two dimensions.
    pub fn default_threshold(&self) -> Result<AcceptanceThreshold> {
        let delta = if self.policy.sigma0 > 0.0 {
            2.0 * self.policy.sigma0
        } else {
            1e-9
        };
        AcceptanceThreshold::uniform(self.dims, delta)
    }

    /// Distance from a pose to the goal.
    pub fn goal_distance(&self, pose: &[f64]) -> f64 {
        self.goal
            .iter()
            .zip(pose)
            .map(|(g, p)| (g - p) * (g - p))
            .sum::<f64>()
            .sqrt()
    }
}

/// Configuration form of an execution strategy, resolved against a scenario
/// into a runtime [`Strategy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StrategySpec {
    /// Execute a fixed prefix of `l` actions per decision.
    Fixed { l: usize },
    /// Adaptive acceptance.
    A3 {
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_window")]
        window: usize,
        /// Absolute per-dimension thresholds; defaults to the scenario's.
        #[serde(default)]
        delta: Option<Vec<f64>>,
        /// Multiplier on the (default or given) thresholds.
        #[serde(default = "default_delta_scale")]
        delta_scale: f64,
        /// Consensus overrides; default derives from the thresholds.
        #[serde(default)]
        tau: Option<f64>,
        #[serde(default)]
        cluster_cutoff: Option<f64>,
        #[serde(default)]
        consensus_scale: Option<f64>,
    },
}

fn default_samples() -> usize {
    8
}
fn default_window() -> usize {
    1
}
fn default_delta_scale() -> f64 {
    1.0
}

impl StrategySpec {
    /// Resolve against a scenario: validates ranges and fills defaults.
    pub fn resolve(&self, scenario: &Scenario) -> Result<Strategy> {
        match self {
            StrategySpec::Fixed { l } => {
                if *l == 0 || *l > scenario.horizon {
                    return Err(Error::InvalidConfig(format!(
                        "fixed strategy: l={l} outside 1..={}",
                        scenario.horizon
                    )));
                }
                Ok(Strategy::Fixed { l: *l })
            }
            StrategySpec::A3 {
                samples,
                window,
                delta,
                delta_scale,
                tau,
                cluster_cutoff,
                consensus_scale,
            } => {
                if *window >= scenario.horizon {
                    return Err(Error::InvalidConfig(format!(
                        "a3 strategy: window={window} must be below horizon {}",
                        scenario.horizon
                    )));
                }
                let threshold = match delta {
                    Some(d) => {
                        if d.len() != scenario.dims {
                            return Err(Error::InvalidConfig(format!(
                                "a3 strategy: delta must have {} entries",
                                scenario.dims
                            )));
                        }
                        AcceptanceThreshold::new(d.clone())?
                    }
                    None => scenario.default_threshold()?,
                }
                .scaled(*delta_scale)?;
                let mut params = A3Params::from_threshold(
                    *samples,
                    AlignmentWindow::new(*window),
                    scenario.horizon,
                    threshold,
                )?;
                if let Some(t) = tau {
                    params.cluster.tau = *t;
                }
                if let Some(c) = cluster_cutoff {
                    params.cluster.cluster_cutoff = *c;
                }
                if let Some(s) = consensus_scale {
                    params.cluster.consensus_scale = *s;
                }
                // Re-validate after overrides.
                crate::consensus::ClusterConfig::new(
                    params.cluster.tau,
                    params.cluster.cluster_cutoff,
                    params.cluster.consensus_scale,
                )?;
                Ok(Strategy::Adaptive {
                    params: Box::new(params),
                })
            }
        }
    }
}

/// Runtime execution strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Strategy {
    Fixed { l: usize },
    Adaptive { params: Box<A3Params> },
}

impl Strategy {
    /// Stable label used in CSV rows and tables.
    pub fn label(&self) -> String {
        match self {
            Strategy::Fixed { l } => format!("fixed({l})"),
            Strategy::Adaptive { params } => {
                format!("a3(k={},w={})", params.samples, params.window.w)
            }
        }
    }
}
