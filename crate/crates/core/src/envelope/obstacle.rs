//! Directional obstacle iteration for the envelope PDE.
//!
//! The discrete problem is the fixed point of
//!
//! ```text
//!   V(z) = max( f̄(z),  max_d ½(V(z + d) + V(z − d)) )
//! ```
//!
//! over interior lattice nodes, with Dirichlet data pinned on the simplex
//! boundary and `d` ranging over the integer stencil family. Both stencil
//! ends are lattice nodes, so no interpolation enters the sweep and fold
//! lines with rational slopes are supported exactly.
//!
//! The solve runs as policy iteration: an improvement pass scans all
//! directions per node and keeps the maximizing one, then cheap Jacobi
//! evaluation passes relax the values along the frozen directions until they
//! settle. Sweeps are monotone from below, starting at the obstacle.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{BarycentricGrid, Face};

use super::{sample_range, DirectionSet, EnvelopeField, EnvelopeMethod, SolveStats, Tolerances};

#[allow(clippy::too_many_arguments)]
pub fn envelope_obstacle(
    face: Face,
    grid: BarycentricGrid,
    fbar: &[f64],
    boundary: &[Option<f64>],
    dirs: &DirectionSet,
    tol: &Tolerances,
    max_sweeps: Option<usize>,
) -> Result<EnvelopeField> {
    let n = grid.node_count();
    if fbar.len() != n || boundary.len() != n {
        return Err(Error::Invalid {
            what: "obstacle input",
            reason: "fbar/boundary length must match the grid".into(),
        });
    }
    if fbar.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid {
            what: "obstacle input",
            reason: "fbar values must be finite".into(),
        });
    }
    if dirs.order() != grid.order() {
        return Err(Error::Invalid {
            what: "obstacle input",
            reason: "direction set order must match the face".into(),
        });
    }
    let m = grid.resolution();
    let max_sweeps = max_sweeps.unwrap_or(10 * m * m);
    let range = sample_range(fbar);
    let tol_fp = tol.tol_fp(range);

    // initial iterate: obstacle inside, Dirichlet data on the boundary
    let mut values = fbar.to_vec();
    let mut interior: Vec<u32> = Vec::new();
    for idx in 0..n {
        match boundary[idx] {
            Some(g) => {
                if grid.is_boundary(idx) {
                    values[idx] = g;
                } else {
                    return Err(Error::Invalid {
                        what: "obstacle boundary",
                        reason: format!("node {idx} is interior but has boundary data"),
                    });
                }
            }
            None => {
                if grid.is_boundary(idx) {
                    return Err(Error::BoundaryIncomplete { node: idx });
                }
                interior.push(idx as u32);
            }
        }
    }

    let stencil = Stencil::build(&grid, &interior, dirs);
    let mut next = values.clone();
    let mut policy: Vec<u32> = vec![0; interior.len()];
    let mut sweeps = 0usize;
    let mut residual;
    loop {
        // improvement pass: rescan all directions, refresh the policy
        if sweeps >= max_sweeps {
            return Err(Error::NonConvergence {
                residual: f64::INFINITY,
                sweeps,
            });
        }
        let gain = improvement_sweep(&stencil, fbar, &values, &mut next, &mut policy);
        std::mem::swap(&mut values, &mut next);
        sweeps += 1;
        residual = gain;
        if gain < tol_fp {
            break;
        }
        // evaluation passes: relax along the frozen directions; early rounds
        // only need to outpace the next improvement scan
        let eval_tol = (0.01 * gain).max(tol_fp);
        loop {
            if sweeps >= max_sweeps {
                return Err(Error::NonConvergence { residual, sweeps });
            }
            residual = evaluation_sweep(&stencil, fbar, &values, &mut next, &policy);
            std::mem::swap(&mut values, &mut next);
            sweeps += 1;
            if residual < eval_tol {
                break;
            }
        }
    }

    Ok(EnvelopeField::assemble(
        face,
        grid,
        values,
        fbar.to_vec(),
        EnvelopeMethod::Obstacle,
        SolveStats { sweeps, residual },
        tol,
    ))
}

/// Lattice stencils of the interior nodes: for each direction of the family
/// both neighbor ranks, or a sentinel when either end leaves the simplex.
struct Stencil {
    interior: Vec<u32>,
    /// `2 · n_dirs` ranks per interior node, `u32::MAX` marking unusable.
    neighbors: Vec<u32>,
    n_dirs: usize,
}

const NO_NODE: u32 = u32::MAX;

impl Stencil {
    fn build(grid: &BarycentricGrid, interior: &[u32], dirs: &DirectionSet) -> Self {
        let order = grid.order();
        let family = dirs.lattice_directions();
        let n_dirs = family.len();
        let mut neighbors = vec![NO_NODE; interior.len() * 2 * n_dirs];
        let mut plus = vec![0i64; order];
        let mut minus = vec![0i64; order];
        let mut buf = vec![0u32; order];
        for (i, &idx) in interior.iter().enumerate() {
            let lat = grid.lattice_node(idx as usize);
            for (d, dir) in family.iter().enumerate() {
                let mut ok = true;
                for c in 0..order {
                    plus[c] = lat[c] as i64 + dir[c] as i64;
                    minus[c] = lat[c] as i64 - dir[c] as i64;
                    if plus[c] < 0 || minus[c] < 0 {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                let base = (i * n_dirs + d) * 2;
                for (b, &p) in buf.iter_mut().zip(plus.iter()) {
                    *b = p as u32;
                }
                neighbors[base] = grid.rank(&buf) as u32;
                for (b, &q) in buf.iter_mut().zip(minus.iter()) {
                    *b = q as u32;
                }
                neighbors[base + 1] = grid.rank(&buf) as u32;
            }
        }
        Self {
            interior: interior.to_vec(),
            neighbors,
            n_dirs,
        }
    }
}

/// Full scan: pick the best direction per node, apply the obstacle max.
fn improvement_sweep(
    stencil: &Stencil,
    fbar: &[f64],
    old: &[f64],
    new: &mut [f64],
    policy: &mut [u32],
) -> f64 {
    new.copy_from_slice(old);
    let width = 2 * stencil.n_dirs;
    let updates: Vec<(f64, u32)> = stencil
        .interior
        .par_iter()
        .enumerate()
        .with_min_len(256)
        .map(|(i, &idx)| {
            let idx = idx as usize;
            let nb = &stencil.neighbors[i * width..(i + 1) * width];
            let mut best = f64::NEG_INFINITY;
            let mut best_dir = 0u32;
            for (d, pair) in nb.chunks_exact(2).enumerate() {
                if pair[0] == NO_NODE {
                    continue;
                }
                let avg = 0.5 * (old[pair[0] as usize] + old[pair[1] as usize]);
                if avg > best {
                    best = avg;
                    best_dir = d as u32;
                }
            }
            (best.max(fbar[idx]).max(old[idx]), best_dir)
        })
        .collect();
    let mut max_update = 0.0f64;
    for (i, &idx) in stencil.interior.iter().enumerate() {
        policy[i] = updates[i].1;
        let delta = updates[i].0 - old[idx as usize];
        if delta > 0.0 {
            new[idx as usize] = updates[i].0;
            if delta > max_update {
                max_update = delta;
            }
        }
    }
    max_update
}

/// Jacobi relaxation along the frozen policy directions.
fn evaluation_sweep(
    stencil: &Stencil,
    fbar: &[f64],
    old: &[f64],
    new: &mut [f64],
    policy: &[u32],
) -> f64 {
    new.copy_from_slice(old);
    let width = 2 * stencil.n_dirs;
    let mut max_update = 0.0f64;
    for (i, &idx) in stencil.interior.iter().enumerate() {
        let idx = idx as usize;
        let base = i * width + 2 * policy[i] as usize;
        let p = stencil.neighbors[base];
        if p == NO_NODE {
            continue;
        }
        let q = stencil.neighbors[base + 1];
        let avg = 0.5 * (old[p as usize] + old[q as usize]);
        let best = avg.max(fbar[idx]);
        if best > old[idx] {
            new[idx] = best;
            let delta = best - old[idx];
            if delta > max_update {
                max_update = delta;
            }
        }
    }
    max_update
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{assemble_boundary, envelope_hull, solve_recursive};
    use crate::measures::{make_grid, AtomGrid};
    use crate::payoff::CostFunction;
    use std::collections::BTreeMap;

    fn boundary_from_hull(
        grid: &AtomGrid,
        cost: &CostFunction,
        face: &Face,
        bgrid: &BarycentricGrid,
        tol: &Tolerances,
    ) -> Vec<Option<f64>> {
        let sol = solve_recursive(
            grid,
            cost,
            bgrid.resolution(),
            super::super::EnvelopeMethod::Hull,
            tol,
        )
        .unwrap();
        assemble_boundary(face, bgrid, sol.fields()).unwrap()
    }

    #[test]
    fn concave_data_is_fixed_immediately() {
        let atoms = AtomGrid::new(vec![-1.0, 0.0, 1.0]).unwrap();
        // concave piecewise-linear payoff: tent over the mean
        let cost =
            CostFunction::piecewise_linear(vec![(-1.0, 0.0), (0.2, 1.2), (1.0, 0.4)]).unwrap();
        let tol = Tolerances::default();
        let face = Face::new(vec![0, 1, 2]).unwrap();
        let bgrid = make_grid(2, 20).unwrap();
        let mc =
            crate::payoff::ModifiedCost::new(atoms.clone(), face.clone(), cost.clone()).unwrap();
        let fbar: Vec<f64> = (0..bgrid.node_count())
            .map(|i| mc.eval_weights(&bgrid.node_weights(i)))
            .collect();
        let boundary = boundary_from_hull(&atoms, &cost, &face, &bgrid, &tol);
        let dirs = DirectionSet::standard(3, &tol);
        let field = envelope_obstacle(face, bgrid, &fbar, &boundary, &dirs, &tol, None).unwrap();
        let range = sample_range(&fbar);
        for (v, f) in field.values().iter().zip(&fbar) {
            assert!((v - f).abs() <= tol.tol_fp(range) * 4.0 + 1e-12);
        }
    }

    #[test]
    fn edge_solve_matches_hull() {
        let atoms = AtomGrid::new(vec![0.0, 1.0]).unwrap();
        let cost = CostFunction::piecewise_linear(vec![
            (0.0, 0.3),
            (0.25, 0.0),
            (0.5, 0.9),
            (0.8, 0.1),
            (1.0, 0.6),
        ])
        .unwrap();
        let tol = Tolerances::default();
        let face = Face::new(vec![0, 1]).unwrap();
        let bgrid = make_grid(1, 200).unwrap();
        let mc =
            crate::payoff::ModifiedCost::new(atoms.clone(), face.clone(), cost.clone()).unwrap();
        let fbar: Vec<f64> = (0..bgrid.node_count())
            .map(|i| mc.eval_weights(&bgrid.node_weights(i)))
            .collect();
        let hull = envelope_hull(face.clone(), bgrid.clone(), &fbar, &tol).unwrap();
        let mut fields = BTreeMap::new();
        for &i in face.indices() {
            let f = Face::new(vec![i]).unwrap();
            let g0 = make_grid(0, 200).unwrap();
            let v = cost.eval(atoms.atom(i));
            fields.insert(
                f.clone(),
                EnvelopeField::assemble(
                    f,
                    g0,
                    vec![v],
                    vec![v],
                    EnvelopeMethod::Hull,
                    SolveStats {
                        sweeps: 0,
                        residual: 0.0,
                    },
                    &tol,
                ),
            );
        }
        let boundary = assemble_boundary(&face, &bgrid, &fields).unwrap();
        let dirs = DirectionSet::standard(2, &tol);
        let field = envelope_obstacle(face, bgrid, &fbar, &boundary, &dirs, &tol, None).unwrap();
        let max_diff = field
            .values()
            .iter()
            .zip(hull.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-3, "hull/obstacle disagree by {max_diff}");
    }

    #[test]
    fn call_spread_face_matches_hull() {
        let atoms = AtomGrid::new(vec![-1.0, 0.0, 1.0]).unwrap();
        let cost = CostFunction::call_spread(-0.1, 0.5).unwrap();
        let tol = Tolerances::default();
        let hull = solve_recursive(&atoms, &cost, 50, EnvelopeMethod::Hull, &tol).unwrap();
        let obst = solve_recursive(&atoms, &cost, 50, EnvelopeMethod::Obstacle, &tol).unwrap();
        let face = Face::new(vec![0, 1, 2]).unwrap();
        let max_diff = hull
            .field(&face)
            .unwrap()
            .values()
            .iter()
            .zip(obst.field(&face).unwrap().values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 5e-3, "hull/obstacle disagree by {max_diff}");
    }

    #[test]
    fn incomplete_boundary_rejected() {
        let tol = Tolerances::default();
        let face = Face::new(vec![0, 1]).unwrap();
        let bgrid = make_grid(1, 4).unwrap();
        let fbar = vec![0.0; bgrid.node_count()];
        let boundary = vec![None; bgrid.node_count()];
        let dirs = DirectionSet::standard(2, &tol);
        assert!(matches!(
            envelope_obstacle(face, bgrid, &fbar, &boundary, &dirs, &tol, None),
            Err(Error::BoundaryIncomplete { .. })
        ));
    }
}
