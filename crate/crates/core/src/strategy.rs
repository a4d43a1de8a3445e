//! Optimal controls and stopping extracted from a solved envelope field.
//!
//! Off the contact set the envelope is affine along some chord through the
//! query point; driving the weights back and forth along that chord until it
//! exits at the chord ends realizes the envelope value by the scalar
//! Brownian exit formula. The chord is found by marching along candidate
//! directions and keeping the one whose end-to-end chord reproduces the
//! envelope value at the point (the widest-stencil second difference).
//!
//! Chord ends are classified as contact points, simplex-boundary hits, or
//! folds of the envelope (where affinity breaks); folds end the stage early
//! and the simulator replans from there. Ends that land on a kink line of
//! the modified cost are snapped to the exact kink parameter so the exit
//! law carries no grid bias.

use serde::Serialize;

use crate::envelope::{DirectionSet, EnvelopeField, Tolerances};
use crate::error::{Error, Result};
use crate::measures::ProbabilityVector;
use crate::payoff::ModifiedCost;

/// Norm of the control vector during a stage; inside the open unit disk so
/// the time-change rate stays strictly positive.
pub const CONTROL_NORM: f64 = 0.9;

/// How a chord end was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndKind {
    /// Envelope touches the obstacle there.
    Contact,
    /// Simplex boundary: a weight vanishes and the face drops.
    Boundary,
    /// Affinity of the envelope breaks; replan from there.
    Fold,
}

/// Constant-direction control for one stage.
#[derive(Debug, Clone)]
pub struct ControlPlan {
    /// Unit zero-sum direction, pointing from `z1` toward `z2`.
    pub direction: Vec<f64>,
    /// Chord end on the negative side (the preferred contact target).
    pub z1: Vec<f64>,
    /// Chord end on the positive side.
    pub z2: Vec<f64>,
    /// Signed parameter of `z1` relative to the planning point (≤ 0).
    pub v1: f64,
    /// Signed parameter of `z2` relative to the planning point (≥ 0).
    pub v2: f64,
    pub end1: EndKind,
    pub end2: EndKind,
    /// `c₁` scaling `z − z1` to the control vector.
    pub scale: f64,
    /// Affinity defect of the chord at the planning point.
    pub defect: f64,
}

impl ControlPlan {
    /// The control vector `w = c₁ (z − z1)`, of norm [`CONTROL_NORM`].
    pub fn control_vector(&self) -> Vec<f64> {
        self.direction.iter().map(|d| d * CONTROL_NORM).collect()
    }

    /// Probability of exiting at `z1`.
    pub fn p_hit_z1(&self) -> f64 {
        if self.v2 - self.v1 <= 0.0 {
            1.0
        } else {
            self.v2 / (self.v2 - self.v1)
        }
    }
}

/// Result of planning at a point.
#[derive(Debug, Clone)]
pub enum PlanOrStop {
    /// The point is in the contact set: stop, collect the cost.
    Stop,
    Plan(ControlPlan),
}

/// Stopping rule `τ*`: stop as soon as the envelope meets the modified cost.
pub fn stopping_rule(field: &EnvelopeField, mc: &ModifiedCost, weights: &[f64]) -> bool {
    field.query_weights(weights) - mc.eval_weights(weights) <= field.tol_contact()
}

/// Two-point exit value: the chord of `f̄` through the plan ends, evaluated
/// at `z` with the scalar Brownian exit probabilities.
pub fn exit_value(z: &[f64], plan: &ControlPlan, mc: &ModifiedCost) -> Result<f64> {
    let order = z.len();
    if plan.z1.len() != order || plan.z2.len() != order {
        return Err(Error::Invalid {
            what: "exit value query",
            reason: "dimension mismatch with plan".into(),
        });
    }
    let mut chord = vec![0.0; order];
    let mut len2 = 0.0;
    for i in 0..order {
        chord[i] = plan.z2[i] - plan.z1[i];
        len2 += chord[i] * chord[i];
    }
    let len = len2.sqrt();
    if len <= 1e-14 {
        return Ok(mc.eval_weights(&plan.z1));
    }
    let mut v = 0.0;
    for i in 0..order {
        v += (z[i] - plan.z1[i]) * chord[i] / len;
    }
    let slack = 1e-9 * (1.0 + len);
    if !(-slack..=len + slack).contains(&v) {
        return Err(Error::Invalid {
            what: "exit value query",
            reason: format!("point at parameter {v:.3e} outside segment of length {len:.3e}"),
        });
    }
    // collinearity of z with the chord
    let mut off2 = 0.0;
    for i in 0..order {
        let proj = plan.z1[i] + v * chord[i] / len;
        off2 += (z[i] - proj) * (z[i] - proj);
    }
    if off2.sqrt() > 1e-8 * (1.0 + len) {
        return Err(Error::Invalid {
            what: "exit value query",
            reason: "point not on the plan segment".into(),
        });
    }
    let v1 = -v;
    let v2 = len - v;
    if v2 - v1 <= 1e-14 {
        return Ok(mc.eval_weights(&plan.z1));
    }
    let p1 = v2 / (v2 - v1);
    let p2 = -v1 / (v2 - v1);
    Ok(p1 * mc.eval_weights(&plan.z1) + p2 * mc.eval_weights(&plan.z2))
}

/// JSON dump of a plan at one queried point.
#[derive(Debug, Clone, Serialize)]
pub struct PlanJson {
    pub z: Vec<f64>,
    pub direction: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub p_hit_z1: f64,
    pub value: f64,
    pub end1: EndKind,
    pub end2: EndKind,
}

impl PlanJson {
    pub fn new(z: &[f64], plan: &ControlPlan, mc: &ModifiedCost) -> Result<Self> {
        Ok(Self {
            z: z.to_vec(),
            direction: plan.direction.clone(),
            z1: plan.z1.clone(),
            z2: plan.z2.clone(),
            p_hit_z1: plan.p_hit_z1(),
            value: exit_value(z, plan, mc)?,
            end1: plan.end1,
            end2: plan.end2,
        })
    }
}

/// Plans the stage at `z`: Stop on the contact set, otherwise the best
/// affine chord through `z`.
///
/// Candidates are scanned in a fixed order (exchange pairs, directions
/// toward the face vertices, the wider lattice family, and finally
/// directions toward contact-frontier nodes) and ties go to the earliest.
/// The vertex and frontier candidates adapt to `z`; fixed sets alone cannot
/// span the radial planar fans that concave envelopes of kinked costs
/// produce.
pub fn optimal_direction(
    field: &EnvelopeField,
    mc: &ModifiedCost,
    z: &ProbabilityVector,
    tol: &Tolerances,
) -> Result<PlanOrStop> {
    if z.face() != field.face() {
        return Err(Error::OffFace {
            face: field.face().indices().to_vec(),
        });
    }
    let w0 = z.weights();
    if stopping_rule(field, mc, w0) {
        return Ok(PlanOrStop::Stop);
    }
    let order = field.grid().order();
    let m = field.grid().resolution() as f64;
    let v0 = field.query_weights(w0);
    let tol_planar = tol.tol_planar(field.range());
    let max_atom = mc
        .face_atoms()
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    let lip = mc.cost().lipschitz_constant() * max_atom;
    let accept = tol_planar + 4.0 * lip * std::f64::consts::SQRT_2 / m;
    let tie = 1e-12 * (1.0 + field.range());

    let scan = Scanner {
        field,
        mc,
        tol_contact: field.tol_contact(),
        tol_planar,
    };

    let dirs = DirectionSet::standard(order, tol);
    let mut candidates: Vec<Vec<f64>> = dirs.exchange_directions().to_vec();
    for r in 0..order {
        let mut d = vec![0.0; order];
        let mut norm = 0.0;
        for i in 0..order {
            d[i] = if i == r { 1.0 - w0[i] } else { -w0[i] };
            norm += d[i] * d[i];
        }
        let norm = norm.sqrt();
        if norm > 1e-9 {
            for x in &mut d {
                *x /= norm;
            }
            candidates.push(d);
        }
    }
    candidates.extend(
        dirs.unit_directions()
            .into_iter()
            .filter(|d| d.iter().filter(|x| x.abs() > 1e-12).count() > 2),
    );

    let mut best: Option<(ControlPlan, f64)> = None;
    for dir in &candidates {
        consider(&scan, w0, v0, dir, tie, &mut best);
        if let Some((p, d)) = &best {
            if *d <= 0.01 * tol_planar && fold_ends(p) == 0 {
                break;
            }
        }
    }
    let need_fallback = best
        .as_ref()
        .is_none_or(|(p, d)| *d > 0.01 * tol_planar || fold_ends(p) > 0);
    if need_fallback {
        for idx in contact_frontier(field) {
            let node_w = field.grid().node_weights(idx);
            let mut d = vec![0.0; order];
            let mut norm = 0.0;
            for i in 0..order {
                d[i] = node_w[i] - w0[i];
                norm += d[i] * d[i];
            }
            let norm = norm.sqrt();
            if norm <= 1e-9 {
                continue;
            }
            for x in &mut d {
                *x /= norm;
            }
            consider(&scan, w0, v0, &d, tie, &mut best);
        }
    }

    match best {
        Some((plan, defect)) if defect <= accept => Ok(PlanOrStop::Plan(plan)),
        Some((_, defect)) => Err(Error::NonPlanar {
            defect,
            tol: accept,
        }),
        None => Err(Error::NonPlanar {
            defect: f64::INFINITY,
            tol: accept,
        }),
    }
}

fn fold_ends(plan: &ControlPlan) -> usize {
    usize::from(plan.end1 == EndKind::Fold) + usize::from(plan.end2 == EndKind::Fold)
}

/// Keeps the incumbent unless the candidate has a strictly smaller defect;
/// defect ties go to the plan with fewer fold ends, then to scan order.
fn consider(
    scan: &Scanner<'_>,
    w0: &[f64],
    v0: f64,
    dir: &[f64],
    tie: f64,
    best: &mut Option<(ControlPlan, f64)>,
) {
    let Some(plan) = scan.plan_along(w0, v0, dir) else {
        return;
    };
    let defect = plan.defect;
    let better = match best {
        None => true,
        Some((incumbent, best_defect)) => {
            defect < *best_defect - tie
                || ((defect - *best_defect).abs() <= tie && fold_ends(&plan) < fold_ends(incumbent))
        }
    };
    if better {
        *best = Some((plan, defect));
    }
}

/// Contact nodes with a non-contact exchange neighbor.
fn contact_frontier(field: &EnvelopeField) -> Vec<usize> {
    let grid = field.grid();
    let order = grid.order();
    let contact = field.contact();
    let mut out = Vec::new();
    let mut nb = vec![0u32; order];
    for idx in 0..grid.node_count() {
        if !contact[idx] {
            continue;
        }
        let lat = grid.lattice_node(idx);
        let mut frontier = false;
        'outer: for p in 0..order {
            if lat[p] == 0 {
                continue;
            }
            for q in 0..order {
                if q == p {
                    continue;
                }
                nb.copy_from_slice(lat);
                nb[p] -= 1;
                nb[q] += 1;
                if !contact[grid.rank(&nb)] {
                    frontier = true;
                    break 'outer;
                }
            }
        }
        if frontier {
            out.push(idx);
        }
    }
    out
}

struct Scanner<'a> {
    field: &'a EnvelopeField,
    mc: &'a ModifiedCost,
    tol_contact: f64,
    tol_planar: f64,
}

struct RayEnd {
    t: f64,
    kind: EndKind,
    /// Whether `t` is exactly the simplex-boundary parameter.
    at_boundary: bool,
}

impl Scanner<'_> {
    /// Builds the chord through `w0` along `±dir`, oriented with the contact
    /// end on the negative side (the smaller-cost one when both contact).
    ///
    /// The first pass marches straight to contact or boundary; by concavity
    /// the chord is exactly affine iff its end values reproduce the envelope
    /// at `w0`, so no interior affinity test is needed. Only when that chord
    /// kinks is a second, affinity-truncating pass used to cut the segment
    /// at the fold.
    fn plan_along(&self, w0: &[f64], v0: f64, dir: &[f64]) -> Option<ControlPlan> {
        let full = self.assemble(w0, v0, dir, false)?;
        if full.defect <= self.tol_planar {
            return Some(full);
        }
        match self.assemble(w0, v0, dir, true) {
            Some(truncated) if truncated.defect < full.defect => Some(truncated),
            _ => Some(full),
        }
    }

    fn assemble(&self, w0: &[f64], v0: f64, dir: &[f64], truncate: bool) -> Option<ControlPlan> {
        let neg_dir: Vec<f64> = dir.iter().map(|d| -d).collect();
        let plus = self.march(w0, dir, v0, truncate)?;
        let minus = self.march(w0, &neg_dir, v0, truncate)?;
        if plus.t + minus.t <= 1e-12 {
            return None;
        }
        let (mut dir, mut plus, mut minus) = (dir.to_vec(), plus, minus);
        let z_plus = point_on_ray(w0, &dir, plus.t, plus.at_boundary);
        let z_minus = point_on_ray(w0, &neg_dir, minus.t, minus.at_boundary);
        let flip = match (minus.kind, plus.kind) {
            (EndKind::Contact, EndKind::Contact) => {
                self.mc.eval_weights(&z_plus) < self.mc.eval_weights(&z_minus)
            }
            (EndKind::Contact, _) => false,
            (_, EndKind::Contact) => true,
            _ => false,
        };
        let (z1, z2) = if flip {
            for d in &mut dir {
                *d = -*d;
            }
            std::mem::swap(&mut plus, &mut minus);
            (z_plus, z_minus)
        } else {
            (z_minus, z_plus)
        };
        let v1 = -minus.t;
        let v2 = plus.t;
        // affinity defect of the chord at z: ends valued at the obstacle
        // when they are contacts (exact), at the envelope otherwise
        let end_val = |z: &[f64], kind: EndKind| -> f64 {
            match kind {
                EndKind::Contact => self.mc.eval_weights(z),
                _ => self.field.query_weights(z),
            }
        };
        let chord_env = if v2 - v1 <= 1e-14 {
            end_val(&z1, minus.kind)
        } else {
            (v2 * end_val(&z1, minus.kind) - v1 * end_val(&z2, plus.kind)) / (v2 - v1)
        };
        let defect = (chord_env - v0).abs();
        let scale = CONTROL_NORM / minus.t.max(1e-14);
        Some(ControlPlan {
            direction: dir,
            z1,
            z2,
            v1,
            v2,
            end1: minus.kind,
            end2: plus.kind,
            scale,
            defect,
        })
    }

    /// Marches from `w0` along `dir` until contact or the simplex boundary
    /// (plus affinity breaks when `truncate` is set), refining the end by
    /// bisection and snapping it to an exact kink parameter of the modified
    /// cost when one is adjacent.
    fn march(&self, w0: &[f64], dir: &[f64], v0: f64, truncate: bool) -> Option<RayEnd> {
        let m = self.field.grid().resolution() as f64;
        let t_bdry = boundary_param(w0, dir);
        if !(t_bdry.is_finite()) || t_bdry <= 1e-13 {
            return Some(RayEnd {
                t: t_bdry.clamp(0.0, 1.0),
                kind: EndKind::Boundary,
                at_boundary: true,
            });
        }
        let max_d = dir.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let mut step = 0.5 / (m * max_d);
        step = step.min(t_bdry / 4.0).max(t_bdry * 1e-12);
        let kinks = self.kink_params(w0, dir, t_bdry);

        let mut slope = 0.0;
        let mut prev_t = 0.0;
        let mut n = 1usize;
        loop {
            let mut t = n as f64 * step;
            let mut at_boundary = false;
            if t >= t_bdry {
                t = t_bdry;
                at_boundary = true;
            }
            let w = point_on_ray(w0, dir, t, at_boundary);
            let v = self.field.query_weights(&w);
            let fb = self.mc.eval_weights(&w);
            if v - fb <= self.tol_contact {
                // a contact first sighted at the boundary point is the
                // boundary point, exactly
                if at_boundary {
                    return Some(RayEnd {
                        t: t_bdry,
                        kind: EndKind::Contact,
                        at_boundary: true,
                    });
                }
                let t_hit = self.bisect(w0, dir, prev_t, t, |v, fb, _| v - fb <= self.tol_contact);
                let t_hit = self.snap_to_kink(w0, dir, t_hit, step, t_bdry, &kinks, true);
                if t_bdry - t_hit <= 2.0 * step && self.contact_at(w0, dir, t_bdry) {
                    return Some(RayEnd {
                        t: t_bdry,
                        kind: EndKind::Contact,
                        at_boundary: true,
                    });
                }
                return Some(RayEnd {
                    t: t_hit,
                    kind: EndKind::Contact,
                    at_boundary: false,
                });
            }
            if n == 1 {
                slope = (v - v0) / t;
            } else if truncate {
                let dev = (v - (v0 + slope * t)).abs();
                if dev > self.tol_planar {
                    let t_fold = self.bisect(w0, dir, prev_t, t, |v, _, tt| {
                        (v - (v0 + slope * tt)).abs() > self.tol_planar
                    });
                    let t_fold = self.snap_to_kink(w0, dir, t_fold, step, t_bdry, &kinks, false);
                    return Some(RayEnd {
                        t: t_fold,
                        kind: EndKind::Fold,
                        at_boundary: false,
                    });
                }
            }
            if at_boundary {
                return Some(RayEnd {
                    t: t_bdry,
                    kind: EndKind::Boundary,
                    at_boundary: true,
                });
            }
            prev_t = t;
            n += 1;
        }
    }

    fn contact_at(&self, w0: &[f64], dir: &[f64], t: f64) -> bool {
        let w = point_on_ray(w0, dir, t, true);
        self.field.query_weights(&w) - self.mc.eval_weights(&w) <= self.tol_contact
    }

    /// Bisection on a predicate that is false at `lo` and true at `hi`;
    /// returns the flip parameter.
    fn bisect(
        &self,
        w0: &[f64],
        dir: &[f64],
        mut lo: f64,
        mut hi: f64,
        pred: impl Fn(f64, f64, f64) -> bool,
    ) -> f64 {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let w = point_on_ray(w0, dir, mid, false);
            let v = self.field.query_weights(&w);
            let fb = self.mc.eval_weights(&w);
            if pred(v, fb, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Parameters where the modified cost kinks along the ray; these are the
    /// only places a contact edge or fold of a piecewise-linear envelope can
    /// sit between lattice lines.
    fn kink_params(&self, w0: &[f64], dir: &[f64], t_bdry: f64) -> Vec<f64> {
        let atoms = self.mc.face_atoms();
        let mean0: f64 = atoms.iter().zip(w0).map(|(&x, &w)| x * w).sum();
        let mdot: f64 = atoms.iter().zip(dir).map(|(&x, &d)| x * d).sum();
        if mdot.abs() < 1e-14 {
            return Vec::new();
        }
        let mut out: Vec<f64> = self
            .mc
            .cost()
            .breakpoints()
            .iter()
            .map(|&(s, _)| (s - mean0) / mdot)
            .filter(|t| *t > 1e-13 && *t <= t_bdry)
            .collect();
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    /// Moves `t` to an adjacent exact kink parameter when the end condition
    /// still holds there, removing the grid-resolution bias of the march.
    #[allow(clippy::too_many_arguments)]
    fn snap_to_kink(
        &self,
        w0: &[f64],
        dir: &[f64],
        t: f64,
        step: f64,
        t_bdry: f64,
        kinks: &[f64],
        contact: bool,
    ) -> f64 {
        let window = 2.0 * step;
        let mut best = t;
        let mut best_dist = window;
        for &tk in kinks {
            let dist = (tk - t).abs();
            if dist >= best_dist || tk > t_bdry {
                continue;
            }
            let w = point_on_ray(w0, dir, tk, false);
            let v = self.field.query_weights(&w);
            let fb = self.mc.eval_weights(&w);
            let ok = if contact {
                v - fb <= self.tol_contact
            } else {
                // fold snap: the kink must still look affine from the start
                true
            };
            if ok {
                best = tk;
                best_dist = dist;
            }
        }
        best
    }
}

/// Largest `t ≥ 0` with `w0 + t·dir` in the simplex.
fn boundary_param(w0: &[f64], dir: &[f64]) -> f64 {
    let mut t = f64::INFINITY;
    for (w, d) in w0.iter().zip(dir) {
        if *d < -1e-14 {
            t = t.min(w / -d);
        }
    }
    t
}

/// Point on the ray, clamped into the simplex with exact mass one.
fn point_on_ray(w0: &[f64], dir: &[f64], t: f64, at_boundary: bool) -> Vec<f64> {
    let mut w: Vec<f64> = w0.iter().zip(dir).map(|(&w, &d)| w + t * d).collect();
    let mut sum = 0.0;
    for x in &mut w {
        if *x < 0.0 || (at_boundary && *x < 1e-12) {
            *x = 0.0;
        }
        sum += *x;
    }
    if sum > 0.0 && (sum - 1.0).abs() > 0.0 {
        for x in &mut w {
            *x /= sum;
        }
    }
    w
}
