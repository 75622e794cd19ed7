//! Chunking-policy interface and reference stochastic policies.
//!
//! [`ChunkPolicy`] is the surface the decision pipeline drives: sample `K`
//! chunks, or conditionally re-decode target actions with some positions
//! clamped (inpainting). The reference implementations are Gaussian
//! ([`GaussianChunkPolicy`]) and mixture-of-Gaussian ([`MixturePolicy`])
//! chunk generators whose conditionals are available in closed form, which
//! makes every downstream check testable against exact oracles.
//!
//! Re-decoding returns the conditional *mean* by default so the acceptance
//! event is well-defined; a seeded conditional-sampling mode exists for
//! robustness experiments. Either way, a re-decode is a pure function of
//! `(base, context, seed)` — never of batch composition — which is what
//! makes batched verification equivalent to sequential verification.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Error;
use crate::seed::{mix, mix2};
use crate::trajectory::{Action, ActionChunk, Gripper, State};
use crate::verifier::{ContextKind, VerifyContext};
use crate::Result;

/// A query against a chunking policy: either draw chunks or re-decode
/// targets under fixed contexts.
#[derive(Debug, Clone)]
pub struct PolicyQuery {
    pub base: State,
    pub mode: QueryMode,
}

#[derive(Debug, Clone)]
pub enum QueryMode {
    Sample { count: usize, seed: u64 },
    Redecode { contexts: Vec<VerifyContext>, seed: u64 },
}

#[derive(Debug, Clone)]
pub enum QueryResult {
    Chunks(Vec<ActionChunk>),
    Redecoded(Vec<Action>),
}

/// An action-chunking policy: the drafting and re-decoding surface consumed
/// by the adaptive decision pipeline.
///
/// Implementations must be deterministic given `(inputs, seed)`, and each
/// re-decoded element must depend only on its own context — not on the rest
/// of the batch or its position in it — so that a batched call and a
/// sequence of single-context calls produce identical results.
pub trait ChunkPolicy {
    /// Prediction horizon `H` of emitted chunks.
    fn horizon(&self) -> usize;

    /// Number of continuous action dimensions `d_c`.
    fn action_dims(&self) -> usize;

    /// Draw `count` independent chunks from the current state.
    fn sample_chunks(&self, base: &State, count: usize, seed: u64) -> Result<Vec<ActionChunk>>;

    /// Re-decode the target action of every context, with the context's
    /// fixed positions clamped to their given values.
    fn redecode_batch(
        &self,
        base: &State,
        contexts: &[VerifyContext],
        seed: u64,
    ) -> Result<Vec<Action>>;

    /// Single-context convenience wrapper around [`ChunkPolicy::redecode_batch`].
    fn redecode(&self, base: &State, context: &VerifyContext, seed: u64) -> Result<Action> {
        let mut out = self.redecode_batch(base, std::slice::from_ref(context), seed)?;
        out.pop()
            .ok_or_else(|| Error::Policy("policy returned an empty re-decode batch".into()))
    }

    /// Dispatch a [`PolicyQuery`].
    fn query(&self, query: &PolicyQuery) -> Result<QueryResult> {
        match &query.mode {
            QueryMode::Sample { count, seed } => Ok(QueryResult::Chunks(self.sample_chunks(
                &query.base,
                *count,
                *seed,
            )?)),
            QueryMode::Redecode { contexts, seed } => Ok(QueryResult::Redecoded(
                self.redecode_batch(&query.base, contexts, *seed)?,
            )),
        }
    }
}

/// How a Gaussian policy serves re-decode queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RedecodeMode {
    /// Return the exact conditional mean (default).
    Mean,
    /// Return a seeded draw from the conditional distribution.
    Sample,
}

/// Nominal delta plan as a function of the base state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MeanPlan {
    /// Fixed `H`×`d` delta rows, independent of the base state.
    Constant(Vec<Vec<f64>>),
    /// Move up to `step_size` straight toward `goal` each step, stopping on
    /// arrival.
    GoalDirected { goal: Vec<f64>, step_size: f64 },
    /// Head for `waypoint` until at least as close to `goal` as the
    /// waypoint is, then head for `goal`.
    Via {
        waypoint: Vec<f64>,
        goal: Vec<f64>,
        step_size: f64,
    },
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn pursuit_step(from: &[f64], target: &[f64], step_size: f64) -> Vec<f64> {
    let diff: Vec<f64> = target.iter().zip(from).map(|(t, q)| t - q).collect();
    let dist = norm(&diff);
    if dist <= 1e-12 {
        return vec![0.0; from.len()];
    }
    let scale = step_size.min(dist) / dist;
    diff.iter().map(|d| d * scale).collect()
}

impl MeanPlan {
    fn validate(&self, horizon: usize, dims: usize) -> Result<()> {
        match self {
            MeanPlan::Constant(rows) => {
                if rows.len() != horizon {
                    return Err(Error::HorizonMismatch {
                        expected: horizon,
                        got: rows.len(),
                    });
                }
                for row in rows {
                    if row.len() != dims {
                        return Err(Error::DimensionMismatch {
                            expected: dims,
                            got: row.len(),
                        });
                    }
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("constant mean plan"));
                    }
                }
            }
            MeanPlan::GoalDirected { goal, step_size } => {
                if goal.len() != dims {
                    return Err(Error::DimensionMismatch {
                        expected: dims,
                        got: goal.len(),
                    });
                }
                if !(step_size.is_finite() && *step_size > 0.0) {
                    return Err(Error::InvalidConfig("step_size must be positive".into()));
                }
            }
            MeanPlan::Via {
                waypoint,
                goal,
                step_size,
            } => {
                if goal.len() != dims || waypoint.len() != dims {
                    return Err(Error::DimensionMismatch {
                        expected: dims,
                        got: goal.len().max(waypoint.len()),
                    });
                }
                if !(step_size.is_finite() && *step_size > 0.0) {
                    return Err(Error::InvalidConfig("step_size must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Nominal `H`×`d` delta rows from the given base pose.
    pub fn nominal(&self, base: &State, horizon: usize) -> Vec<Vec<f64>> {
        match self {
            MeanPlan::Constant(rows) => rows.clone(),
            MeanPlan::GoalDirected { goal, step_size } => {
                let mut q = base.pose.clone();
                let mut rows = Vec::with_capacity(horizon);
                for _ in 0..horizon {
                    let delta = pursuit_step(&q, goal, *step_size);
                    for (qi, di) in q.iter_mut().zip(&delta) {
                        *qi += di;
                    }
                    rows.push(delta);
                }
                rows
            }
            MeanPlan::Via {
                waypoint,
                goal,
                step_size,
            } => {
                let via_gap = distance(waypoint, goal);
                let mut q = base.pose.clone();
                let mut rows = Vec::with_capacity(horizon);
                for _ in 0..horizon {
                    let target = if distance(&q, goal) > via_gap {
                        waypoint
                    } else {
                        goal
                    };
                    let delta = pursuit_step(&q, target, *step_size);
                    for (qi, di) in q.iter_mut().zip(&delta) {
                        *qi += di;
                    }
                    rows.push(delta);
                }
                rows
            }
        }
    }

    /// Remaining route length from the given pose; used by mixture gating.
    pub fn route_cost(&self, base: &State) -> f64 {
        match self {
            MeanPlan::Constant(_) => 0.0,
            MeanPlan::GoalDirected { goal, .. } => distance(&base.pose, goal),
            MeanPlan::Via { waypoint, goal, .. } => {
                let via_gap = distance(waypoint, goal);
                if distance(&base.pose, goal) > via_gap {
                    distance(&base.pose, waypoint) + via_gap
                } else {
                    distance(&base.pose, goal)
                }
            }
        }
    }
}

/// Temporally correlated AR(1) covariance over the flattened `H·d` action
/// vector: dimensions are independent, steps `s` and `s'` of the same
/// dimension correlate as `rho^|s-s'|` with per-step scales
/// `sigma0 · growth^s`.
pub fn ar1_covariance(
    horizon: usize,
    dims: usize,
    sigma0: f64,
    growth: f64,
    rho: f64,
) -> Result<DMatrix<f64>> {
    if horizon == 0 || dims == 0 {
        return Err(Error::InvalidConfig("horizon and dims must be positive".into()));
    }
    if !(sigma0.is_finite() && sigma0 >= 0.0) {
        return Err(Error::InvalidConfig("sigma0 must be non-negative".into()));
    }
    if !(growth.is_finite() && growth > 0.0) {
        return Err(Error::InvalidConfig("growth must be positive".into()));
    }
    if !(rho.is_finite() && rho.abs() < 1.0) {
        return Err(Error::InvalidConfig(
            "rho must lie strictly inside (-1, 1)".into(),
        ));
    }
    let sigma: Vec<f64> = (0..horizon)
        .map(|s| sigma0 * growth.powi(s as i32))
        .collect();
    let n = horizon * dims;
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let (si, di) = (i / dims, i % dims);
        let (sj, dj) = (j / dims, j % dims);
        if di != dj {
            0.0
        } else {
            sigma[si] * sigma[sj] * rho.powi((si as i32 - sj as i32).abs())
        }
    });
    Ok(cov)
}

/// Gaussian chunk generator: a state-dependent nominal plan plus zero-mean
/// correlated noise over the flattened `H·d` action vector.
#[derive(Debug, Clone)]
pub struct GaussianChunkPolicy {
    mean_plan: MeanPlan,
    gripper_plan: Vec<Gripper>,
    dims: usize,
    covariance: DMatrix<f64>,
    /// Lower Cholesky factor of `covariance`; `None` when the covariance is
    /// exactly zero (deterministic policy).
    chol_lower: Option<DMatrix<f64>>,
    noise_scale: f64,
    mode: RedecodeMode,
}

impl GaussianChunkPolicy {
    /// Build from an explicit covariance over the flattened action vector.
    /// The covariance must be symmetric and either positive-definite or
    /// exactly zero.
    pub fn new(
        mean_plan: MeanPlan,
        gripper_plan: Vec<Gripper>,
        dims: usize,
        covariance: DMatrix<f64>,
    ) -> Result<Self> {
        let horizon = gripper_plan.len();
        if horizon == 0 {
            return Err(Error::EmptyInput("gripper plan"));
        }
        if dims == 0 {
            return Err(Error::InvalidConfig("dims must be positive".into()));
        }
        mean_plan.validate(horizon, dims)?;
        let n = horizon * dims;
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: covariance.nrows().max(covariance.ncols()),
            });
        }
        if covariance != covariance.transpose() {
            return Err(Error::InvalidConfig("covariance must be symmetric".into()));
        }
        let chol_lower = if covariance.iter().all(|v| *v == 0.0) {
            None
        } else {
            let chol = covariance
                .clone()
                .cholesky()
                .ok_or_else(|| Error::InvalidConfig("covariance not positive definite".into()))?;
            Some(chol.l())
        };
        Ok(Self {
            mean_plan,
            gripper_plan,
            dims,
            covariance,
            chol_lower,
            noise_scale: 1.0,
            mode: RedecodeMode::Mean,
        })
    }

    /// AR(1) construction; `sigma0 = 0` yields a deterministic policy.
    pub fn ar1(
        mean_plan: MeanPlan,
        gripper_plan: Vec<Gripper>,
        dims: usize,
        sigma0: f64,
        growth: f64,
        rho: f64,
    ) -> Result<Self> {
        let covariance = ar1_covariance(gripper_plan.len(), dims, sigma0, growth, rho)?;
        Self::new(mean_plan, gripper_plan, dims, covariance)
    }

    /// Copy of this policy with every noise standard deviation multiplied by
    /// `factor`. Conditional means are unaffected; sampled deviations and
    /// conditional spreads scale linearly.
    pub fn scaled_noise(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidConfig("noise scale must be positive".into()));
        }
        let mut out = self.clone();
        out.noise_scale = self.noise_scale * factor;
        Ok(out)
    }

    /// Switch between conditional-mean and conditional-sample re-decoding.
    pub fn with_redecode_mode(mut self, mode: RedecodeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mean_plan(&self) -> &MeanPlan {
        &self.mean_plan
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// Marginal standard deviation of each step's noise (dimension 0),
    /// including the current noise scale.
    pub fn step_stds(&self) -> Vec<f64> {
        (0..self.gripper_plan.len())
            .map(|s| self.noise_scale * self.covariance[(s * self.dims, s * self.dims)].sqrt())
            .collect()
    }

    fn check_base(&self, base: &State) -> Result<()> {
        if base.dims() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: base.dims(),
            });
        }
        Ok(())
    }

    fn nominal_rows(&self, base: &State) -> Vec<Vec<f64>> {
        self.mean_plan.nominal(base, self.gripper_plan.len())
    }

    pub(crate) fn sample_one(&self, base: &State, rng: &mut ChaCha8Rng) -> Result<ActionChunk> {
        let mut rows = self.nominal_rows(base);
        if let Some(l) = &self.chol_lower {
            let n = rows.len() * self.dims;
            let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
            let noise = l * z;
            for (flat, v) in noise.iter().enumerate() {
                rows[flat / self.dims][flat % self.dims] += self.noise_scale * v;
            }
        }
        let actions = rows
            .into_iter()
            .zip(&self.gripper_plan)
            .map(|(r, &g)| Action::new(r, g))
            .collect::<Result<Vec<_>>>()?;
        ActionChunk::new(actions)
    }

    fn check_context(&self, ctx: &VerifyContext) -> Result<()> {
        let h = self.gripper_plan.len();
        if ctx.target() >= h {
            return Err(Error::StepOutOfRange {
                step: ctx.target(),
                horizon: h,
            });
        }
        for (pos, action) in ctx.fixed() {
            if *pos >= h {
                return Err(Error::StepOutOfRange {
                    step: *pos,
                    horizon: h,
                });
            }
            if action.dims() != self.dims {
                return Err(Error::DimensionMismatch {
                    expected: self.dims,
                    got: action.dims(),
                });
            }
        }
        Ok(())
    }

    /// Conditional mean of the target step's deltas given the clamped
    /// positions, via Gaussian conditioning on the joint covariance.
    fn conditional_mean(&self, base: &State, ctx: &VerifyContext) -> Result<DVector<f64>> {
        let rows = self.nominal_rows(base);
        let d = self.dims;
        let t0 = ctx.target() * d;
        let mu_t = DVector::from_fn(d, |i, _| rows[ctx.target()][i]);
        if ctx.fixed().is_empty() || self.chol_lower.is_none() {
            return Ok(mu_t);
        }
        let f_idx: Vec<usize> = ctx
            .fixed()
            .iter()
            .flat_map(|(p, _)| (p * d..p * d + d))
            .collect();
        let resid = DVector::from_fn(f_idx.len(), |i, _| {
            let (p, a) = &ctx.fixed()[i / d];
            a.deltas[i % d] - rows[*p][i % d]
        });
        let sigma_ff = DMatrix::from_fn(f_idx.len(), f_idx.len(), |r, c| {
            self.covariance[(f_idx[r], f_idx[c])]
        });
        let chol = sigma_ff.cholesky().ok_or(Error::SingularConditioning)?;
        let alpha = chol.solve(&resid);
        let sigma_tf =
            DMatrix::from_fn(d, f_idx.len(), |r, c| self.covariance[(t0 + r, f_idx[c])]);
        Ok(mu_t + sigma_tf * alpha)
    }

    /// Conditional covariance of the target step given the clamped
    /// positions, scaled by the current noise scale squared.
    fn conditional_cov(&self, ctx: &VerifyContext) -> Result<DMatrix<f64>> {
        let d = self.dims;
        let t0 = ctx.target() * d;
        let sigma_tt = DMatrix::from_fn(d, d, |r, c| self.covariance[(t0 + r, t0 + c)]);
        let cond = if ctx.fixed().is_empty() {
            sigma_tt
        } else {
            let f_idx: Vec<usize> = ctx
                .fixed()
                .iter()
                .flat_map(|(p, _)| (p * d..p * d + d))
                .collect();
            let sigma_ff = DMatrix::from_fn(f_idx.len(), f_idx.len(), |r, c| {
                self.covariance[(f_idx[r], f_idx[c])]
            });
            let sigma_tf =
                DMatrix::from_fn(d, f_idx.len(), |r, c| self.covariance[(t0 + r, f_idx[c])]);
            let chol = sigma_ff.cholesky().ok_or(Error::SingularConditioning)?;
            let solved = chol.solve(&sigma_tf.transpose());
            &sigma_tt - &sigma_tf * solved
        };
        Ok(cond * (self.noise_scale * self.noise_scale))
    }

    fn redecode_one(&self, base: &State, ctx: &VerifyContext, seed: u64) -> Result<Action> {
        self.check_context(ctx)?;
        let mean = self.conditional_mean(base, ctx)?;
        let gripper = self.gripper_plan[ctx.target()];
        let deltas: Vec<f64> = match self.mode {
            RedecodeMode::Mean => mean.iter().copied().collect(),
            RedecodeMode::Sample => {
                if self.chol_lower.is_none() {
                    mean.iter().copied().collect()
                } else {
                    let cov = self.conditional_cov(ctx)?;
                    let chol = cov.cholesky().ok_or(Error::SingularConditioning)?;
                    // Seeded by (kind, target) only, so the draw is identical
                    // whether the context is served alone or in a batch.
                    let tag = match ctx.kind() {
                        ContextKind::Invariance => 0x1A,
                        ContextKind::Sequential => 0x5E,
                    };
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(mix2(seed, tag, ctx.target() as u64));
                    let z = DVector::from_fn(self.dims, |_, _| rng.sample(StandardNormal));
                    let noisy = mean + chol.l() * z;
                    noisy.iter().copied().collect()
                }
            }
        };
        Action::new(deltas, gripper)
    }

    /// Log-density of the clamped values under this component's marginal at
    /// the fixed positions (including the noise scale). Used for mixture
    /// responsibilities.
    fn log_density_fixed(&self, base: &State, ctx: &VerifyContext) -> Result<f64> {
        if ctx.fixed().is_empty() {
            return Ok(0.0);
        }
        let rows = self.nominal_rows(base);
        let d = self.dims;
        let f_idx: Vec<usize> = ctx
            .fixed()
            .iter()
            .flat_map(|(p, _)| (p * d..p * d + d))
            .collect();
        let m = f_idx.len();
        let resid = DVector::from_fn(m, |i, _| {
            let (p, a) = &ctx.fixed()[i / d];
            a.deltas[i % d] - rows[*p][i % d]
        });
        let s2 = self.noise_scale * self.noise_scale;
        let sigma_ff = DMatrix::from_fn(m, m, |r, c| s2 * self.covariance[(f_idx[r], f_idx[c])]);
        let chol = sigma_ff.cholesky().ok_or(Error::SingularConditioning)?;
        let alpha = chol.solve(&resid);
        let quad: f64 = resid.dot(&alpha);
        let log_det: f64 = (0..m).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
        Ok(-0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
    }
}

impl ChunkPolicy for GaussianChunkPolicy {
    fn horizon(&self) -> usize {
        self.gripper_plan.len()
    }

    fn action_dims(&self) -> usize {
        self.dims
    }

    fn sample_chunks(&self, base: &State, count: usize, seed: u64) -> Result<Vec<ActionChunk>> {
        self.check_base(base)?;
        if count == 0 {
            return Err(Error::InvalidConfig("sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample_one(base, &mut rng)).collect()
    }

    fn redecode_batch(
        &self,
        base: &State,
        contexts: &[VerifyContext],
        seed: u64,
    ) -> Result<Vec<Action>> {
        self.check_base(base)?;
        contexts
            .iter()
            .map(|ctx| self.redecode_one(base, ctx, seed))
            .collect()
    }
}

/// How a mixture policy weights its components as a function of the base
/// state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MixtureGating {
    /// Use the configured weights everywhere.
    Prior,
    /// Multiply the configured weights by `exp(-route_cost/eta)` and
    /// renormalize, so implausibly long routes lose mass as the state
    /// advances.
    RouteCost { eta: f64 },
}

/// Mixture of Gaussian chunk generators over a shared horizon and dimension
/// count. Sampling draws a component per chunk; re-decoding conditions
/// within the component of maximum posterior responsibility for the clamped
/// values.
#[derive(Debug, Clone)]
pub struct MixturePolicy {
    components: Vec<(f64, GaussianChunkPolicy)>,
    gating: MixtureGating,
}

impl MixturePolicy {
    pub fn new(components: Vec<(f64, GaussianChunkPolicy)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("mixture components"));
        }
        let horizon = components[0].1.horizon();
        let dims = components[0].1.action_dims();
        let mut total = 0.0;
        for (w, c) in &components {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::InvalidConfig(
                    "mixture weights must be strictly positive".into(),
                ));
            }
            if c.horizon() != horizon {
                return Err(Error::HorizonMismatch {
                    expected: horizon,
                    got: c.horizon(),
                });
            }
            if c.action_dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    got: c.action_dims(),
                });
            }
            if c.chol_lower.is_none() {
                return Err(Error::InvalidConfig(
                    "mixture components must have non-degenerate covariance".into(),
                ));
            }
            total += w;
        }
        let components = components
            .into_iter()
            .map(|(w, c)| (w / total, c))
            .collect();
        Ok(Self {
            components,
            gating: MixtureGating::Prior,
        })
    }

    pub fn with_gating(mut self, gating: MixtureGating) -> Result<Self> {
        if let MixtureGating::RouteCost { eta } = gating {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::InvalidConfig("gating eta must be positive".into()));
            }
        }
        self.gating = gating;
        Ok(self)
    }

    pub fn components(&self) -> &[(f64, GaussianChunkPolicy)] {
        &self.components
    }

    /// Copy with every component's noise standard deviation multiplied by
    /// `factor`.
    pub fn scaled_noise(&self, factor: f64) -> Result<Self> {
        let components = self
            .components
            .iter()
            .map(|(w, c)| c.scaled_noise(factor).map(|c| (*w, c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            components,
            gating: self.gating,
        })
    }

    /// Switch re-decode mode on every component.
    pub fn with_redecode_mode(mut self, mode: RedecodeMode) -> Self {
        for (_, c) in &mut self.components {
            c.mode = mode;
        }
        self
    }

    /// Effective component weights at the given state.
    pub fn weights(&self, base: &State) -> Vec<f64> {
        match self.gating {
            MixtureGating::Prior => self.components.iter().map(|(w, _)| *w).collect(),
            MixtureGating::RouteCost { eta } => {
                let costs: Vec<f64> = self
                    .components
                    .iter()
                    .map(|(_, c)| c.mean_plan().route_cost(base))
                    .collect();
                let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
                let raw: Vec<f64> = self
                    .components
                    .iter()
                    .zip(&costs)
                    .map(|((w, _), c)| w * (-(c - min) / eta).exp())
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / total).collect()
            }
        }
    }

    fn pick_component(weights: &[f64], u: f64) -> usize {
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.len() - 1
    }

    /// Index of the component with maximum posterior responsibility for the
    /// context's clamped values (ties to the lowest index).
    pub fn max_responsibility(&self, base: &State, ctx: &VerifyContext) -> Result<usize> {
        let weights = self.weights(base);
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, (_, c)) in self.components.iter().enumerate() {
            let score = weights[i].ln() + c.log_density_fixed(base, ctx)?;
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        Ok(best)
    }
}

impl ChunkPolicy for MixturePolicy {
    fn horizon(&self) -> usize {
        self.components[0].1.horizon()
    }

    fn action_dims(&self) -> usize {
        self.components[0].1.action_dims()
    }

    fn sample_chunks(&self, base: &State, count: usize, seed: u64) -> Result<Vec<ActionChunk>> {
        self.components[0].1.check_base(base)?;
        if count == 0 {
            return Err(Error::InvalidConfig("sample count must be at least 1".into()));
        }
        let weights = self.weights(base);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let u: f64 = rng.gen();
            let comp = Self::pick_component(&weights, u);
            out.push(self.components[comp].1.sample_one(base, &mut rng)?);
        }
        Ok(out)
    }

    fn redecode_batch(
        &self,
        base: &State,
        contexts: &[VerifyContext],
        seed: u64,
    ) -> Result<Vec<Action>> {
        self.components[0].1.check_base(base)?;
        contexts
            .iter()
            .map(|ctx| {
                self.components[0].1.check_context(ctx)?;
                let comp = self.max_responsibility(base, ctx)?;
                self.components[comp].1.redecode_one(base, ctx, seed)
            })
            .collect()
    }
}

/// Rejection-sampling estimate of a conditional mean; the independent oracle
/// for [`ChunkPolicy::redecode_batch`] on Gaussian policies.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalConditional {
    /// Per-dimension mean of the target deltas over accepted samples.
    pub mean: Vec<f64>,
    /// Per-dimension standard error of that mean.
    pub stderr: Vec<f64>,
    /// Number of accepted samples.
    pub accepted: usize,
}

/// Draw unconditional chunks, keep those whose fixed positions all lie
/// within `band` of the clamped values (per dimension), and average the
/// target deltas.
pub fn brute_force_conditional<P: ChunkPolicy + ?Sized>(
    policy: &P,
    base: &State,
    context: &VerifyContext,
    n_samples: usize,
    band: f64,
    seed: u64,
) -> Result<EmpiricalConditional> {
    if !(band.is_finite() && band > 0.0) {
        return Err(Error::InvalidConfig("band must be positive".into()));
    }
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    let h = policy.horizon();
    if context.target() >= h || context.fixed_positions().any(|p| p >= h) {
        return Err(Error::StepOutOfRange {
            step: context.target(),
            horizon: h,
        });
    }
    let dims = policy.action_dims();
    let mut accepted = 0usize;
    let mut mean = vec![0.0; dims];
    let mut m2 = vec![0.0; dims];
    const BATCH: usize = 8192;
    let mut drawn = 0usize;
    let mut round = 0u64;
    while drawn < n_samples {
        let take = BATCH.min(n_samples - drawn);
        let chunks = policy.sample_chunks(base, take, mix(seed, round))?;
        drawn += take;
        round += 1;
        for chunk in &chunks {
            let ok = context.fixed().iter().all(|(pos, value)| {
                chunk.actions()[*pos]
                    .deltas
                    .iter()
                    .zip(&value.deltas)
                    .all(|(x, v)| (x - v).abs() <= band)
            });
            if !ok {
                continue;
            }
            accepted += 1;
            let target = &chunk.actions()[context.target()].deltas;
            for i in 0..dims {
                let delta = target[i] - mean[i];
                mean[i] += delta / accepted as f64;
                m2[i] += delta * (target[i] - mean[i]);
            }
        }
    }
    if accepted == 0 {
        return Err(Error::InsufficientData {
            attempted: n_samples,
        });
    }
    let stderr = m2
        .iter()
        .map(|&s| {
            if accepted > 1 {
                (s / (accepted - 1) as f64 / accepted as f64).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(EmpiricalConditional {
        mean,
        stderr,
        accepted,
    })
}
