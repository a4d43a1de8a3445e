//! Run configuration: one JSON file, validated before any computation,
//! with a few flag overrides for batch sweeps.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use mot_envelope::{
    AtomGrid, CostFunction, EnvelopeMethod, Face, PayoffSpec, ProbabilityVector, Tolerances,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub atoms: Vec<f64>,
    pub payoff: PayoffSpec,
    pub initial: InitialMeasure,
    pub m: usize,
    #[serde(default = "default_method")]
    pub method: MethodChoice,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialMeasure {
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Hull,
    Obstacle,
    Both,
}

fn default_method() -> MethodChoice {
    MethodChoice::Both
}

impl MethodChoice {
    pub fn methods(self) -> Vec<EnvelopeMethod> {
        match self {
            MethodChoice::Hull => vec![EnvelopeMethod::Hull],
            MethodChoice::Obstacle => vec![EnvelopeMethod::Obstacle],
            MethodChoice::Both => vec![EnvelopeMethod::Hull, EnvelopeMethod::Obstacle],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: u64,
    pub dt: f64,
    pub master_seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1e-4,
            master_seed: 20240801,
        }
    }
}

/// Optional overrides of the solver tolerances.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concave_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planar_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_abs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_hit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stencil_width: Option<u32>,
}

impl ToleranceOverrides {
    pub fn build(&self) -> Tolerances {
        let mut t = Tolerances::default();
        if let Some(v) = self.fp_rel {
            t.fp_rel = v;
        }
        if let Some(v) = self.contact_rel {
            t.contact_rel = v;
        }
        if let Some(v) = self.concave_rel {
            t.concave_rel = v;
        }
        if let Some(v) = self.planar_factor {
            t.planar_factor = v;
        }
        if let Some(v) = self.eps_abs {
            t.eps_abs = v;
        }
        if let Some(v) = self.eps_hit {
            t.eps_hit = v;
        }
        if let Some(v) = self.stencil_width {
            t.stencil_width = v;
        }
        t
    }
}

/// Tolerances of the `compare` verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Max allowed |hull − obstacle| over the face grids.
    pub hull_obstacle_tol: f64,
    /// Max allowed |solver − closed form| when the closed form applies.
    pub oracle_tol: f64,
    /// MC must agree with the hull value within `mc_sigmas`·SE + `mc_slack`
    /// plus the grid interpolation margin of the instance.
    pub mc_sigmas: f64,
    pub mc_slack: f64,
    /// Paths per compared point (capped from the main MC settings).
    pub n_paths: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            hull_obstacle_tol: 5e-3,
            oracle_tol: 2e-2,
            mc_sigmas: 3.0,
            mc_slack: 1e-3,
            n_paths: 20_000,
        }
    }
}

/// Validated, resolved inputs ready for the commands.
pub struct Resolved {
    pub config: RunConfig,
    pub grid: AtomGrid,
    pub cost: CostFunction,
    pub face: Face,
    pub initial: ProbabilityVector,
    pub tol: Tolerances,
}

pub fn resolve(mut config: RunConfig, overrides: &super::Overrides) -> anyhow::Result<Resolved> {
    if let Some(m) = overrides.m {
        config.m = m;
    }
    if let Some(seed) = overrides.seed {
        config.mc.master_seed = seed;
    }
    if let Some(n) = overrides.n_paths {
        config.mc.n_paths = n;
    }
    if let Some(method) = overrides.method {
        config.method = method;
    }
    if let Some(dir) = &overrides.out_dir {
        config.output_dir = Some(dir.clone());
    }

    if config.m < 2 {
        bail!("config: m must be at least 2");
    }
    if config.mc.n_paths < 100 {
        bail!("config: mc.n_paths must be at least 100");
    }
    if !(config.mc.dt > 0.0 && config.mc.dt <= 1.0) {
        bail!("config: mc.dt must lie in (0, 1]");
    }
    let grid = AtomGrid::new(config.atoms.clone()).context("config: atoms")?;
    let cost = config.payoff.build().context("config: payoff")?;
    let face = match &config.initial.face {
        Some(indices) => {
            let f = Face::new(indices.clone()).context("config: initial.face")?;
            f.validate_for(&grid).context("config: initial.face")?;
            f
        }
        None => grid.full_face(),
    };
    let initial = ProbabilityVector::new(face.clone(), config.initial.weights.clone())
        .context("config: initial.weights")?;
    let tol = config.tolerances.build();
    Ok(Resolved {
        config,
        grid,
        cost,
        face,
        initial,
        tol,
    })
}
