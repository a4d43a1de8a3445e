//! Monte Carlo verification through the controlled atom-weight SDEs.
//!
//! Each atom weight follows `dξ^n = w^n dW` with a zero-sum control vector
//! of norm at most one; weights are absorbed at 0 and 1 and the control must
//! vanish on absorbed coordinates. Policies act stage-wise: at each planning
//! point they either stop or drive the weights along a constant direction
//! until a segment end is hit, after which the support face may drop and the
//! policy replans. Paths run in the internal (time-changed) clock; the
//! calendar clock is reconstructed afterwards as a diagnostic.
//!
//! Per-path randomness comes from counter-based ChaCha streams keyed by
//! `(master_seed, path_index)`, so estimates are reproducible bit-for-bit
//! regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::envelope::{EnvelopeField, EnvelopeSolution, Tolerances};
use crate::error::{Error, Result};
use crate::measures::{Face, ProbabilityVector};
use crate::payoff::ModifiedCost;
use crate::strategy::{self, ControlPlan, PlanOrStop, CONTROL_NORM};

/// Hard cap on Euler steps per path.
pub const MAX_STEPS_PER_PATH: usize = 20_000_000;

/// State of one simulated path on a fixed base face.
#[derive(Debug, Clone)]
pub struct PathState {
    face: Face,
    weights: Vec<f64>,
    absorbed: Vec<bool>,
    stage: usize,
    r: f64,
    stopped: bool,
}

impl PathState {
    pub fn new(z0: &ProbabilityVector) -> Self {
        let weights = z0.weights().to_vec();
        let absorbed = weights.iter().map(|&w| w == 0.0 || w == 1.0).collect();
        Self {
            face: z0.face().clone(),
            weights,
            absorbed,
            stage: 0,
            r: 0.0,
            stopped: false,
        }
    }

    pub fn face(&self) -> &Face {
        &self.face
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn absorbed(&self) -> &[bool] {
        &self.absorbed
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    /// Internal clock.
    pub fn clock(&self) -> f64 {
        self.r
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    /// Coordinates with positive weight, as positions within the base face.
    pub fn support_positions(&self) -> Vec<usize> {
        (0..self.weights.len())
            .filter(|&i| self.weights[i] > 0.0)
            .collect()
    }

    fn validate_control(&self, w: &[f64], eps: f64) -> Result<()> {
        if w.len() != self.weights.len() {
            return Err(Error::InvalidControl("control dimension mismatch".into()));
        }
        let sum: f64 = w.iter().sum();
        if sum.abs() > 1e-9 {
            return Err(Error::InvalidControl(format!(
                "control does not sum to zero: {sum:.3e}"
            )));
        }
        let norm2: f64 = w.iter().map(|x| x * x).sum();
        if norm2 > 1.0 + 1e-9 {
            return Err(Error::InvalidControl(format!(
                "control norm {} exceeds one",
                norm2.sqrt()
            )));
        }
        for (i, &wi) in w.iter().enumerate() {
            if self.absorbed[i] && wi.abs() > eps {
                return Err(Error::InvalidControl(format!(
                    "nonzero control {wi:.3e} on absorbed coordinate {i}"
                )));
            }
        }
        Ok(())
    }

    /// One Euler step `ξ ← ξ + w·ΔW` with `ΔW = √dt·g`.
    ///
    /// When a coordinate would cross 0 or 1 the step is shortened to the
    /// exact hitting fraction, the offender is clamped and flagged absorbed.
    /// Mass is renormalized to exactly one afterwards.
    pub fn step_in_place(&mut self, w: &[f64], dt: f64, gauss: f64, tol: &Tolerances) -> Result<()> {
        self.validate_control(w, 1e-12)?;
        let dw = dt.sqrt() * gauss;
        let mut theta = 1.0f64;
        for i in 0..self.weights.len() {
            let delta = w[i] * dw;
            if delta == 0.0 {
                continue;
            }
            let target = self.weights[i] + delta;
            if target < 0.0 {
                theta = theta.min(self.weights[i] / -delta);
            } else if target > 1.0 {
                theta = theta.min((1.0 - self.weights[i]) / delta);
            }
        }
        for i in 0..self.weights.len() {
            self.weights[i] += theta * w[i] * dw;
        }
        self.r += theta * theta * dt;
        self.apply_absorption(tol);
        Ok(())
    }

    fn apply_absorption(&mut self, tol: &Tolerances) {
        let mut any_one = false;
        for i in 0..self.weights.len() {
            if self.absorbed[i] {
                continue;
            }
            if self.weights[i] <= tol.eps_abs {
                self.weights[i] = 0.0;
                self.absorbed[i] = true;
            } else if self.weights[i] >= 1.0 - tol.eps_abs {
                self.weights[i] = 1.0;
                self.absorbed[i] = true;
                any_one = true;
            }
        }
        if any_one {
            for i in 0..self.weights.len() {
                if self.weights[i] != 1.0 {
                    self.weights[i] = 0.0;
                    self.absorbed[i] = true;
                }
            }
            return;
        }
        let fixed: f64 = self
            .weights
            .iter()
            .zip(&self.absorbed)
            .filter(|(_, &a)| a)
            .map(|(&w, _)| w)
            .sum();
        let free: f64 = self
            .weights
            .iter()
            .zip(&self.absorbed)
            .filter(|(_, &a)| !a)
            .map(|(&w, _)| w)
            .sum();
        if free > 0.0 {
            let scale = (1.0 - fixed) / free;
            if scale != 1.0 {
                for (w, &a) in self.weights.iter_mut().zip(&self.absorbed) {
                    if !a {
                        *w *= scale;
                    }
                }
            }
        }
    }
}

/// Functional form of the Euler step, for tests and small drivers.
pub fn step(state: &PathState, w: &[f64], dt: f64, gauss: f64, tol: &Tolerances) -> Result<PathState> {
    let mut next = state.clone();
    next.step_in_place(w, dt, gauss, tol)?;
    Ok(next)
}

/// Stage decision of a policy at the current support point.
#[derive(Debug, Clone)]
pub enum StageAction {
    Stop,
    /// Drive along `direction` (unit, zero-sum, in support-face coordinates)
    /// until the walk parameter leaves `(v_lo, v_hi)`; land exactly on the
    /// matching target weights.
    Drive {
        direction: Vec<f64>,
        v_lo: f64,
        v_hi: f64,
        lo_target: Vec<f64>,
        hi_target: Vec<f64>,
    },
}

/// A stage-wise admissible policy.
///
/// `path` and `stage` key any policy-internal randomization so paths stay
/// reproducible and independent.
pub trait StagePolicy: Sync {
    fn act(&self, face: &Face, weights: &[f64], path: u64, stage: usize) -> Result<StageAction>;

    /// Stages after which a path is rejected as a diagnostic.
    fn max_stages(&self) -> usize {
        64
    }
}

/// The extracted optimal policy: stop on the contact set, otherwise drive
/// along the planar chord of the envelope through the current point.
pub struct OptimalPolicy<'a> {
    solution: &'a EnvelopeSolution,
    tol: &'a Tolerances,
    costs: std::collections::BTreeMap<Face, ModifiedCost>,
    cache: std::sync::Mutex<std::collections::HashMap<PlanKey, StageAction>>,
}

#[derive(PartialEq, Eq, Hash)]
struct PlanKey(Vec<usize>, Vec<u64>);

impl<'a> OptimalPolicy<'a> {
    pub fn new(solution: &'a EnvelopeSolution, tol: &'a Tolerances) -> Result<Self> {
        let mut costs = std::collections::BTreeMap::new();
        for face in solution.fields().keys() {
            costs.insert(face.clone(), solution.modified_cost(face)?);
        }
        Ok(Self {
            solution,
            tol,
            costs,
            cache: std::sync::Mutex::new(std::collections::HashMap::new()),
        })
    }

    pub fn plan_at(&self, face: &Face, weights: &[f64]) -> Result<PlanOrStop> {
        let field = self.solution.field(face)?;
        let mc = &self.costs[face];
        let z = ProbabilityVector::new(face.clone(), weights.to_vec())?;
        strategy::optimal_direction(field, mc, &z, self.tol)
    }

    pub fn field(&self, face: &Face) -> Result<&EnvelopeField> {
        self.solution.field(face)
    }
}

impl StagePolicy for OptimalPolicy<'_> {
    // fold-to-fold replans on coarse grids can take many short hops
    fn max_stages(&self) -> usize {
        512
    }

    fn act(&self, face: &Face, weights: &[f64], _path: u64, _stage: usize) -> Result<StageAction> {
        let key = PlanKey(
            face.indices().to_vec(),
            weights.iter().map(|w| w.to_bits()).collect(),
        );
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let action = match self.plan_at(face, weights)? {
            PlanOrStop::Stop => StageAction::Stop,
            PlanOrStop::Plan(ControlPlan {
                direction,
                z1,
                z2,
                v1,
                v2,
                ..
            }) => StageAction::Drive {
                direction,
                v_lo: v1,
                v_hi: v2,
                lo_target: z1,
                hi_target: z2,
            },
        };
        self.cache.lock().unwrap().insert(key, action.clone());
        Ok(action)
    }
}

/// Seeded randomized admissible policy for the supersolution bound tests:
/// random stop coin, random hyperplane direction, random exit levels inside
/// the simplex.
pub struct RandomPolicy {
    pub seed: u64,
    pub stop_prob: f64,
    pub hard_stop_stage: usize,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            stop_prob: 0.3,
            hard_stop_stage: 10,
        }
    }
}

impl StagePolicy for RandomPolicy {
    fn act(&self, face: &Face, weights: &[f64], path: u64, stage: usize) -> Result<StageAction> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ path.wrapping_mul(0x9E3779B97F4A7C15) ^ (stage as u64) << 32,
        );
        let order = face.order();
        if stage >= self.hard_stop_stage || rand::Rng::random::<f64>(&mut rng) < self.stop_prob {
            return Ok(StageAction::Stop);
        }
        // random unit zero-sum direction
        let mut dir = vec![0.0; order];
        let mut norm = 0.0;
        for _ in 0..16 {
            let mut mean = 0.0;
            for d in dir.iter_mut() {
                *d = StandardNormal.sample(&mut rng);
                mean += *d;
            }
            mean /= order as f64;
            norm = 0.0;
            for d in dir.iter_mut() {
                *d -= mean;
                norm += *d * *d;
            }
            norm = norm.sqrt();
            if norm > 1e-9 {
                break;
            }
        }
        if norm <= 1e-9 {
            return Ok(StageAction::Stop);
        }
        for d in dir.iter_mut() {
            *d /= norm;
        }
        let mut t_hi = f64::INFINITY;
        let mut t_lo = f64::INFINITY;
        for i in 0..order {
            if dir[i] < -1e-14 {
                t_hi = t_hi.min(weights[i] / -dir[i]);
            } else if dir[i] > 1e-14 {
                t_lo = t_lo.min(weights[i] / dir[i]);
            }
        }
        if !t_hi.is_finite() || !t_lo.is_finite() || t_hi <= 0.0 || t_lo <= 0.0 {
            return Ok(StageAction::Stop);
        }
        let u_hi = 0.2 + 0.8 * rand::Rng::random::<f64>(&mut rng);
        let u_lo = 0.2 + 0.8 * rand::Rng::random::<f64>(&mut rng);
        let v_hi = u_hi * t_hi;
        let v_lo = -u_lo * t_lo;
        let target = |t: f64| -> Vec<f64> {
            let mut w: Vec<f64> = weights.iter().zip(&dir).map(|(&w, &d)| w + t * d).collect();
            let mut sum = 0.0;
            for x in &mut w {
                if *x < 1e-13 {
                    *x = 0.0;
                }
                sum += *x;
            }
            for x in &mut w {
                *x /= sum;
            }
            w
        };
        Ok(StageAction::Drive {
            direction: dir.clone(),
            v_lo,
            v_hi,
            lo_target: target(v_lo),
            hi_target: target(v_hi),
        })
    }

    fn max_stages(&self) -> usize {
        self.hard_stop_stage + 2
    }
}

/// Policy that always stops immediately (zero control).
pub struct StopNowPolicy;

impl StagePolicy for StopNowPolicy {
    fn act(&self, _face: &Face, _weights: &[f64], _path: u64, _stage: usize) -> Result<StageAction> {
        Ok(StageAction::Stop)
    }
}

/// One row of a path trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub stage: usize,
    pub r: f64,
    pub weights: Vec<f64>,
    pub stopped: bool,
}

/// Outcome of one simulated path.
#[derive(Debug, Clone)]
pub struct PathOutcome {
    pub state: PathState,
    /// `f̄` at the stopping point.
    pub payoff: f64,
    pub steps: usize,
    pub stages: usize,
    pub stopped_at_dirac: bool,
    /// `(internal time at stage end, ‖w‖² during the stage)` per stage.
    pub control_record: Vec<(f64, f64)>,
    pub trace: Option<Vec<TraceRow>>,
}

/// Runs one path of the staged simulation.
///
/// Per stage: query the policy at the current support point; `Stop` halts
/// and collects `f̄`; `Drive` walks the scalar Brownian parameter with Euler
/// steps until it leaves `(v_lo, v_hi)`, landing exactly on the stored
/// target. When a weight dies the support face drops and the policy replans.
#[allow(clippy::too_many_arguments)]
pub fn run_path(
    policy: &dyn StagePolicy,
    mc_base: &ModifiedCost,
    z0: &ProbabilityVector,
    path_index: u64,
    master_seed: u64,
    dt: f64,
    tol: &Tolerances,
    with_trace: bool,
) -> Result<PathOutcome> {
    if z0.face() != mc_base.face() {
        return Err(Error::FaceMismatch {
            expected: mc_base.face().indices().to_vec(),
            got: z0.face().indices().to_vec(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    let mut state = PathState::new(z0);
    let mut steps = 0usize;
    let mut control_record: Vec<(f64, f64)> = Vec::new();
    let mut trace: Option<Vec<TraceRow>> = with_trace.then(Vec::new);
    let base_order = z0.face().order();

    loop {
        if state.stage >= policy.max_stages() {
            return Err(Error::MaxPathLength {
                max_steps: policy.max_stages(),
            });
        }
        let support = state.support_positions();
        let sub_face = Face::new(
            support
                .iter()
                .map(|&p| state.face.indices()[p])
                .collect::<Vec<_>>(),
        )?;
        let sub_weights: Vec<f64> = support.iter().map(|&p| state.weights[p]).collect();
        if support.len() == 1 {
            state.stopped = true;
            let payoff = mc_base.eval_weights(&state.weights);
            if let Some(t) = trace.as_mut() {
                t.push(TraceRow {
                    stage: state.stage,
                    r: state.r,
                    weights: state.weights.clone(),
                    stopped: true,
                });
            }
            return Ok(PathOutcome {
                payoff,
                steps,
                stages: state.stage,
                stopped_at_dirac: true,
                control_record,
                trace,
                state,
            });
        }
        let action = policy.act(&sub_face, &sub_weights, path_index, state.stage)?;
        match action {
            StageAction::Stop => {
                state.stopped = true;
                let payoff = mc_base.eval_weights(&state.weights);
                if let Some(t) = trace.as_mut() {
                    t.push(TraceRow {
                        stage: state.stage,
                        r: state.r,
                        weights: state.weights.clone(),
                        stopped: true,
                    });
                }
                return Ok(PathOutcome {
                    payoff,
                    steps,
                    stages: state.stage,
                    stopped_at_dirac: false,
                    control_record,
                    trace,
                    state,
                });
            }
            StageAction::Drive {
                direction,
                v_lo,
                v_hi,
                lo_target,
                hi_target,
            } => {
                // control on the base face: zero on dead coordinates
                let mut w_base = vec![0.0; base_order];
                for (sub_pos, &base_pos) in support.iter().enumerate() {
                    w_base[base_pos] = CONTROL_NORM * direction[sub_pos];
                }
                let stage_start_absorbed = state.absorbed.clone();
                let step_var = CONTROL_NORM * CONTROL_NORM * dt;
                let mut v = 0.0f64;
                let landed: Option<&Vec<f64>> = loop {
                    // the stage may start on (or within eps_hit of) an end
                    if v_lo >= -tol.eps_hit {
                        break Some(&lo_target);
                    }
                    if v_hi <= tol.eps_hit {
                        break Some(&hi_target);
                    }
                    if steps >= MAX_STEPS_PER_PATH {
                        return Err(Error::MaxPathLength {
                            max_steps: MAX_STEPS_PER_PATH,
                        });
                    }
                    let g: f64 = StandardNormal.sample(&mut rng);
                    let dv = CONTROL_NORM * dt.sqrt() * g;
                    steps += 1;
                    if v + dv <= v_lo {
                        let theta = (v_lo - v) / dv;
                        state.r += theta * theta * dt;
                        break Some(&lo_target);
                    }
                    if v + dv >= v_hi {
                        let theta = (v_hi - v) / dv;
                        state.r += theta * theta * dt;
                        break Some(&hi_target);
                    }
                    // within-step barrier excursions: the stage dynamics are
                    // exactly Brownian, so the bridge crossing probability
                    // exp(-2ab/σ²dt) makes the exit law exact, removing the
                    // O(√dt) discrete-monitoring bias
                    let a_lo = (v - v_lo) * (v + dv - v_lo);
                    if a_lo < 14.0 * step_var
                        && rand::Rng::random::<f64>(&mut rng) < (-2.0 * a_lo / step_var).exp()
                    {
                        state.r += dt;
                        break Some(&lo_target);
                    }
                    let a_hi = (v_hi - v) * (v_hi - v - dv);
                    if a_hi < 14.0 * step_var
                        && rand::Rng::random::<f64>(&mut rng) < (-2.0 * a_hi / step_var).exp()
                    {
                        state.r += dt;
                        break Some(&hi_target);
                    }
                    v += dv;
                    state.step_in_place(&w_base, dt, g, tol)?;
                    if let Some(t) = trace.as_mut() {
                        t.push(TraceRow {
                            stage: state.stage,
                            r: state.r,
                            weights: state.weights.clone(),
                            stopped: false,
                        });
                    }
                    // absorption mid-stage ends the stage early
                    if state.absorbed != stage_start_absorbed {
                        break None;
                    }
                };
                if let Some(target) = landed {
                    for (sub_pos, &base_pos) in support.iter().enumerate() {
                        state.weights[base_pos] = target[sub_pos];
                    }
                    state.apply_absorption(tol);
                }
                control_record.push((state.r, CONTROL_NORM * CONTROL_NORM));
                state.stage += 1;
            }
        }
    }
}

/// Monte Carlo estimate with deterministic per-path seeding.
#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: u64,
    pub requested_paths: u64,
    pub master_seed: u64,
    pub rejected: u64,
    pub unreliable: bool,
}

/// Estimates the policy value `E[f̄(ξ_stop)]` from `z0`.
///
/// Paths whose outcome errors (length cap) are dropped and counted; above
/// 0.1% rejected the estimate is flagged unreliable.
pub fn mc_value(
    policy: &dyn StagePolicy,
    mc_base: &ModifiedCost,
    z0: &ProbabilityVector,
    n_paths: u64,
    master_seed: u64,
    dt: f64,
    tol: &Tolerances,
) -> Result<McEstimate> {
    if n_paths < 100 {
        return Err(Error::Invalid {
            what: "mc settings",
            reason: "need at least 100 paths".into(),
        });
    }
    let payoffs: Vec<Option<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            run_path(policy, mc_base, z0, i, master_seed, dt, tol, false)
                .ok()
                .map(|o| o.payoff)
        })
        .collect();
    let kept: Vec<f64> = payoffs.iter().filter_map(|p| *p).collect();
    let rejected = n_paths - kept.len() as u64;
    if kept.is_empty() {
        return Err(Error::Internal("all paths rejected".into()));
    }
    let n = kept.len() as f64;
    let mean = pairwise_sum(&kept) / n;
    let sq: Vec<f64> = kept.iter().map(|p| (p - mean) * (p - mean)).collect();
    let var = if kept.len() > 1 {
        pairwise_sum(&sq) / (n - 1.0)
    } else {
        0.0
    };
    let std_error = (var / n).sqrt();
    let unreliable = (rejected as f64) > 0.001 * (n_paths as f64);
    Ok(McEstimate {
        mean,
        std_error,
        n_paths: kept.len() as u64,
        requested_paths: n_paths,
        master_seed,
        rejected,
        unreliable,
    })
}

/// Order-independent summation.
fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Per-coordinate martingale check: stopped means against initial weights.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub coords: Vec<CoordCheck>,
    pub n_paths: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordCheck {
    pub initial: f64,
    pub stopped_mean: f64,
    pub std_error: f64,
    pub pass: bool,
}

/// Verifies `E[ξ^n_stop] = ξ^n_0` within `3·SE` per coordinate.
pub fn verify_martingale(stopped_weights: &[Vec<f64>], z0: &ProbabilityVector) -> Result<MartingaleReport> {
    if stopped_weights.len() < 1000 {
        return Err(Error::Invalid {
            what: "martingale check",
            reason: "needs at least 1000 recorded paths".into(),
        });
    }
    let order = z0.face().order();
    let n = stopped_weights.len() as f64;
    let mut coords = Vec::with_capacity(order);
    let mut pass = true;
    for c in 0..order {
        let col: Vec<f64> = stopped_weights.iter().map(|w| w[c]).collect();
        let mean = pairwise_sum(&col) / n;
        let sq: Vec<f64> = col.iter().map(|x| (x - mean) * (x - mean)).collect();
        let se = (pairwise_sum(&sq) / (n - 1.0) / n).sqrt();
        let ok = (mean - z0.weights()[c]).abs() <= 3.0 * se + 1e-12;
        pass &= ok;
        coords.push(CoordCheck {
            initial: z0.weights()[c],
            stopped_mean: mean,
            std_error: se,
            pass: ok,
        });
    }
    Ok(MartingaleReport {
        coords,
        n_paths: stopped_weights.len() as u64,
        pass,
    })
}

/// Calendar-time reconstruction of a path from its stage control record.
#[derive(Debug, Clone, Serialize)]
pub struct TimeChange {
    pub horizon: f64,
    /// Internal-clock sample times.
    pub times: Vec<f64>,
    /// Time-change rate `λ = 1 − ‖w‖²` on the segment starting at each
    /// sample; the final entry is the halt at the horizon.
    pub lambda: Vec<f64>,
    /// Calendar time `T_r = ∫₀^r λ ds` by trapezoidal quadrature of the
    /// rate samples.
    pub t_cal: Vec<f64>,
    /// Whether the calendar clock reached the horizon before the stop.
    pub reached_before_stop: bool,
}

/// Maps a recorded path onto the calendar clock.
///
/// During stages `λ = 1 − ‖w‖²`; after the stop the weights rest (`w = 0`,
/// `λ = 1`) until the calendar horizon, where the indicator terms let the
/// clock halt. Both the rate positivity and the strict monotonicity of the
/// calendar time are diagnostic invariants.
pub fn time_change_map(control_record: &[(f64, f64)], horizon: f64) -> Result<TimeChange> {
    if horizon <= 0.0 {
        return Err(Error::InvalidTimeChange("horizon must be positive".into()));
    }
    let mut times = vec![0.0];
    let mut lambda: Vec<f64> = Vec::new();
    let mut t_cal = vec![0.0];
    let mut prev_r = 0.0;
    for &(r_end, w2) in control_record {
        if r_end < prev_r {
            return Err(Error::InvalidTimeChange("record times must increase".into()));
        }
        let lam = 1.0 - w2;
        if lam <= 0.0 {
            return Err(Error::InvalidTimeChange(format!(
                "control norm² {w2} leaves no positive time-change rate"
            )));
        }
        if r_end > prev_r {
            lambda.push(lam);
            t_cal.push(t_cal.last().unwrap() + (r_end - prev_r) * lam);
            times.push(r_end);
            prev_r = r_end;
        }
    }
    let reached_before_stop = *t_cal.last().unwrap() >= horizon;
    // the stopped weights rest (w = 0, λ = 1) until the calendar horizon,
    // where the indicator terms let the clock halt
    let remaining = horizon - t_cal.last().unwrap();
    if remaining > 0.0 {
        lambda.push(1.0);
        times.push(prev_r + remaining);
        t_cal.push(horizon);
    }
    lambda.push(0.0); // halted: λ may vanish only here
    Ok(TimeChange {
        horizon,
        times,
        lambda,
        t_cal,
        reached_before_stop,
    })
}

/// Collects stopped weights over paths for martingale verification.
pub fn collect_stopped_weights(
    policy: &dyn StagePolicy,
    mc_base: &ModifiedCost,
    z0: &ProbabilityVector,
    n_paths: u64,
    master_seed: u64,
    dt: f64,
    tol: &Tolerances,
) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Option<Vec<f64>>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            run_path(policy, mc_base, z0, i, master_seed, dt, tol, false)
                .ok()
                .map(|o| o.state.weights)
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}
