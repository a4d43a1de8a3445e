//! Closed-form value function and strategy for the bull call spread on the
//! three-atom grid `{-1, 0, 1}`.
//!
//! With terminal law `(1−γ−β)δ₋₁ + βδ₀ + γδ₁` and payoff
//! `f(s) = (s−K₁)⁺ − (s−K₂)⁺`, the value function splits into four planar
//! cases indexed by where the barycenter sits relative to `K₂` after
//! dropping atoms from below. The case table doubles as the reference
//! surface for both envelope solvers.

use serde::Serialize;

use crate::error::{Error, Result};

/// Which planar case of the value table is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadCase {
    /// (i) `s^{-101} ≥ K₂`: stop immediately, collect `K₂ − K₁`.
    ImmediateStop,
    /// (ii) `s^{01} ≥ K₂ > s^{-101}`: split into the three-atom measure on
    /// the `K₂` line and the Dirac at −1.
    SplitAgainstBottom,
    /// (iii) `K₂ > s^{01}`, `K₁ ≥ 0`: drop the bottom pair after one exit.
    SplitKeepTop,
    /// (iv) `K₂ > s^{01}`, `K₁ < 0`: as (iii), then work the middle atom.
    SplitKeepTopThenMiddle,
}

/// Parameters of the spread instance: strikes and the initial weights
/// `β` on the middle atom and `γ` on the top atom.
#[derive(Debug, Clone, Copy)]
pub struct SpreadParams {
    pub k1: f64,
    pub k2: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl SpreadParams {
    pub fn new(k1: f64, k2: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(-1.0 < k1 && k1 < 1.0) {
            return Err(Error::Invalid {
                what: "spread params",
                reason: format!("k1 = {k1} outside (-1, 1)"),
            });
        }
        if !(0.0 < k2 && k2 < 1.0) {
            return Err(Error::Invalid {
                what: "spread params",
                reason: format!("k2 = {k2} outside (0, 1)"),
            });
        }
        if k1 >= k2 {
            return Err(Error::Invalid {
                what: "spread params",
                reason: format!("k1 = {k1} must be below k2 = {k2}"),
            });
        }
        if !(0.0 < beta && beta < 1.0 && 0.0 < gamma && gamma < 1.0 && beta + gamma < 1.0) {
            return Err(Error::Invalid {
                what: "spread params",
                reason: format!("(beta, gamma) = ({beta}, {gamma}) not interior"),
            });
        }
        Ok(Self {
            k1,
            k2,
            beta,
            gamma,
        })
    }

    /// Barycenter with all three atoms alive: `2γ + β − 1`.
    pub fn s_all(&self) -> f64 {
        2.0 * self.gamma + self.beta - 1.0
    }

    /// Barycenter after the bottom atom dies: `γ/(γ+β)`.
    pub fn s_top_pair(&self) -> f64 {
        self.gamma / (self.gamma + self.beta)
    }

    pub fn case(&self) -> SpreadCase {
        if self.s_all() >= self.k2 {
            SpreadCase::ImmediateStop
        } else if self.s_top_pair() >= self.k2 {
            SpreadCase::SplitAgainstBottom
        } else if self.k1 >= 0.0 {
            SpreadCase::SplitKeepTop
        } else {
            SpreadCase::SplitKeepTopThenMiddle
        }
    }

    pub fn value(&self) -> f64 {
        call_spread_value(self.k1, self.k2, self.beta, self.gamma)
    }

    pub fn strategy(&self) -> SpreadStrategy {
        let (k2, beta, gamma) = (self.k2, self.beta, self.gamma);
        match self.case() {
            SpreadCase::ImmediateStop => SpreadStrategy {
                case: SpreadCase::ImmediateStop,
                eta: None,
                exit_interval: None,
                second_interval: None,
                splits: vec![Split {
                    weights: [1.0 - gamma - beta, beta, gamma],
                    probability: 1.0,
                }],
                value: self.value(),
            },
            SpreadCase::SplitAgainstBottom => {
                // (γ − η)/(γ + β + η) = K₂
                let eta = (gamma * (1.0 - k2) - k2 * beta) / (1.0 + k2);
                let mass = gamma + beta + eta;
                SpreadStrategy {
                    case: SpreadCase::SplitAgainstBottom,
                    eta: Some(eta),
                    exit_interval: Some((-1.0, k2)),
                    second_interval: None,
                    splits: vec![
                        Split {
                            weights: [eta / mass, beta / mass, gamma / mass],
                            probability: mass,
                        },
                        Split {
                            weights: [1.0, 0.0, 0.0],
                            probability: 1.0 - mass,
                        },
                    ],
                    value: self.value(),
                }
            }
            case @ (SpreadCase::SplitKeepTop | SpreadCase::SplitKeepTopThenMiddle) => {
                // γ/(γ + η) = K₂
                let eta = gamma * (1.0 - k2) / k2;
                let top_mass = gamma + eta;
                let lower = -(1.0 - gamma - beta) / (1.0 - gamma - eta);
                let mut splits = vec![Split {
                    weights: [0.0, eta / top_mass, gamma / top_mass],
                    probability: top_mass,
                }];
                let second_interval = if case == SpreadCase::SplitKeepTopThenMiddle {
                    splits.push(Split {
                        weights: [0.0, 1.0, 0.0],
                        probability: beta - eta,
                    });
                    splits.push(Split {
                        weights: [1.0, 0.0, 0.0],
                        probability: 1.0 - beta - gamma,
                    });
                    Some((-1.0, 0.0))
                } else {
                    splits.push(Split {
                        weights: [
                            (1.0 - beta - gamma) / (1.0 - gamma - eta),
                            (beta - eta) / (1.0 - gamma - eta),
                            0.0,
                        ],
                        probability: 1.0 - top_mass,
                    });
                    None
                };
                SpreadStrategy {
                    case,
                    eta: Some(eta),
                    exit_interval: Some((lower, k2)),
                    second_interval,
                    splits,
                    value: self.value(),
                }
            }
        }
    }
}

/// A stopped-measure component: weights on the atoms `{-1, 0, 1}` and the
/// probability of ending there.
#[derive(Debug, Clone, Serialize)]
pub struct Split {
    pub weights: [f64; 3],
    pub probability: f64,
}

/// Structured description of the optimal construction for one instance.
#[derive(Debug, Clone, Serialize)]
pub struct SpreadStrategy {
    pub case: SpreadCase,
    /// Mass `η` defining the split (absent in the immediate-stop case).
    pub eta: Option<f64>,
    /// First-stage exit interval of the barycenter martingale.
    pub exit_interval: Option<(f64, f64)>,
    /// Second-stage exit interval (case (iv) only, on the event that the
    /// top atom dies).
    pub second_interval: Option<(f64, f64)>,
    pub splits: Vec<Split>,
    pub value: f64,
}

/// Value table on the closed parameter triangle `β, γ ≥ 0`, `β + γ ≤ 1`,
/// covering the simplex edges the grid comparison touches.
pub fn call_spread_value(k1: f64, k2: f64, beta: f64, gamma: f64) -> f64 {
    let s_all = 2.0 * gamma + beta - 1.0;
    if s_all >= k2 {
        return k2 - k1;
    }
    let pair = gamma + beta;
    let s_top = if pair > 0.0 {
        gamma / pair
    } else {
        f64::NEG_INFINITY
    };
    if s_top >= k2 {
        (2.0 * gamma + beta) / (k2 + 1.0) * (k2 - k1)
    } else if k1 >= 0.0 {
        gamma / k2 * (k2 - k1)
    } else {
        gamma * (1.0 - k1) - beta * k1
    }
}
