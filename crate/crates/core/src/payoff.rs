//! Cost functions on the real line and their pullback to the simplex.
//!
//! The solvers consume bounded piecewise-linear costs `f` with constant
//! extrapolation beyond the extreme breakpoints. The *modified cost* is the
//! pullback `f̄(ξ) = f(mean(ξ))` onto the probability simplex of a face.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{mean, AtomGrid, Face, ProbabilityVector};

/// A bounded piecewise-linear cost function.
///
/// Stored as strictly increasing breakpoints `(s_i, f(s_i))`; evaluation is
/// linear between breakpoints and constant outside them, which keeps the
/// function bounded as the envelope characterization requires.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFunction {
    points: Vec<(f64, f64)>,
}

impl CostFunction {
    pub fn piecewise_linear(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid {
                what: "cost function",
                reason: "needs at least one breakpoint".into(),
            });
        }
        if points.iter().any(|(s, v)| !s.is_finite() || !v.is_finite()) {
            return Err(Error::Invalid {
                what: "cost function",
                reason: "breakpoints must be finite".into(),
            });
        }
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Invalid {
                what: "cost function",
                reason: "breakpoints must be strictly increasing in s".into(),
            });
        }
        Ok(Self { points })
    }

    /// Bull call spread `f(s) = (s − k1)⁺ − (s − k2)⁺`.
    pub fn call_spread(k1: f64, k2: f64) -> Result<Self> {
        if k1 >= k2 {
            return Err(Error::Invalid {
                what: "call spread",
                reason: format!("k1 = {k1} must be below k2 = {k2}"),
            });
        }
        Self::piecewise_linear(vec![(k1, 0.0), (k2, k2 - k1)])
    }

    /// `f = (g)⁺` for a piecewise-linear `g` (constant beyond its breakpoints).
    ///
    /// Zero crossings of `g` become breakpoints so the clamp stays exact.
    pub fn put_plus(g_points: Vec<(f64, f64)>) -> Result<Self> {
        let g = Self::piecewise_linear(g_points)?;
        let mut points: Vec<(f64, f64)> = Vec::new();
        for w in g.points.windows(2) {
            let (s0, v0) = w[0];
            let (s1, v1) = w[1];
            points.push((s0, v0.max(0.0)));
            if (v0 > 0.0) != (v1 > 0.0) && v0 != v1 {
                let s_cross = s0 + (s1 - s0) * (0.0 - v0) / (v1 - v0);
                if s_cross > s0 && s_cross < s1 {
                    points.push((s_cross, 0.0));
                }
            }
        }
        let last = *g.points.last().expect("nonempty");
        points.push((last.0, last.1.max(0.0)));
        points.dedup_by(|a, b| a.0 == b.0);
        Self::piecewise_linear(points)
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Exact piecewise-linear evaluation with constant extrapolation.
    pub fn eval(&self, s: f64) -> f64 {
        let pts = &self.points;
        if s <= pts[0].0 {
            return pts[0].1;
        }
        if s >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        // partition_point returns the first breakpoint with s_i > s
        let hi = pts.partition_point(|p| p.0 <= s);
        let (s0, v0) = pts[hi - 1];
        let (s1, v1) = pts[hi];
        v0 + (v1 - v0) * (s - s0) / (s1 - s0)
    }

    /// Largest absolute segment slope.
    pub fn lipschitz_constant(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }
}

/// JSON payoff spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffSpec {
    CallSpread { k1: f64, k2: f64 },
    Pwl { points: Vec<[f64; 2]> },
    PutPlus { g_points: Vec<[f64; 2]> },
}

impl PayoffSpec {
    pub fn build(&self) -> Result<CostFunction> {
        match self {
            PayoffSpec::CallSpread { k1, k2 } => CostFunction::call_spread(*k1, *k2),
            PayoffSpec::Pwl { points } => {
                CostFunction::piecewise_linear(points.iter().map(|p| (p[0], p[1])).collect())
            }
            PayoffSpec::PutPlus { g_points } => {
                CostFunction::put_plus(g_points.iter().map(|p| (p[0], p[1])).collect())
            }
        }
    }
}

/// The cost pulled back to the simplex of a face: `f̄(ξ) = f(x^α · ξ)`.
#[derive(Debug, Clone)]
pub struct ModifiedCost {
    grid: AtomGrid,
    face: Face,
    cost: CostFunction,
    face_atoms: Vec<f64>,
}

impl ModifiedCost {
    pub fn new(grid: AtomGrid, face: Face, cost: CostFunction) -> Result<Self> {
        face.validate_for(&grid)?;
        let face_atoms = face.atoms_on(&grid);
        Ok(Self {
            grid,
            face,
            cost,
            face_atoms,
        })
    }

    pub fn grid(&self) -> &AtomGrid {
        &self.grid
    }

    pub fn face(&self) -> &Face {
        &self.face
    }

    pub fn cost(&self) -> &CostFunction {
        &self.cost
    }

    /// Atom locations of the face, aligned with weight coordinates.
    pub fn face_atoms(&self) -> &[f64] {
        &self.face_atoms
    }

    pub fn eval(&self, xi: &ProbabilityVector) -> Result<f64> {
        if xi.face() != &self.face {
            return Err(Error::FaceMismatch {
                expected: self.face.indices().to_vec(),
                got: xi.face().indices().to_vec(),
            });
        }
        Ok(self.cost.eval(mean(&self.grid, xi)?))
    }

    /// Evaluation from raw face weights, skipping vector construction.
    pub fn eval_weights(&self, weights: &[f64]) -> f64 {
        let s: f64 = self
            .face_atoms
            .iter()
            .zip(weights)
            .map(|(&x, &w)| x * w)
            .sum();
        self.cost.eval(s)
    }

    /// Restriction of the modified cost to a sub-face.
    pub fn restrict(&self, face: &Face) -> Result<ModifiedCost> {
        if !face.is_subface_of(&self.face) {
            return Err(Error::FaceMismatch {
                expected: self.face.indices().to_vec(),
                got: face.indices().to_vec(),
            });
        }
        ModifiedCost::new(self.grid.clone(), face.clone(), self.cost.clone())
    }
}
