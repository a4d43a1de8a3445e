//! Least concave majorant of the grid samples.
//!
//! One-dimensional faces use an upper monotone chain. Higher faces evaluate,
//! per node `z`, the linear program
//!
//! ```text
//!   maximize   Σ λ_i f̄(z_i)
//!   subject to Σ λ_i z_i = z,  Σ λ_i = 1,  λ ≥ 0
//! ```
//!
//! over the grid nodes, which is the envelope value exactly (Carathéodory
//! gives an optimal basis of k+1 nodes). The constraint matrix holds integer
//! lattice coordinates, so the pivoting is well conditioned even when the
//! lifted points are massively coplanar.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{BarycentricGrid, Face};

use super::{EnvelopeField, EnvelopeMethod, SolveStats, Tolerances};

pub fn envelope_hull(
    face: Face,
    grid: BarycentricGrid,
    fbar: &[f64],
    tol: &Tolerances,
) -> Result<EnvelopeField> {
    if fbar.len() != grid.node_count() {
        return Err(Error::Invalid {
            what: "hull input",
            reason: format!(
                "fbar has {} values for {} nodes",
                fbar.len(),
                grid.node_count()
            ),
        });
    }
    if fbar.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid {
            what: "hull input",
            reason: "fbar values must be finite".into(),
        });
    }
    let k = grid.order() - 1;
    let values = match k {
        0 => fbar.to_vec(),
        1 => majorant_on_edge(&grid, fbar),
        _ => majorant_by_lp(&grid, fbar)?,
    };
    Ok(EnvelopeField::assemble(
        face,
        grid,
        values,
        fbar.to_vec(),
        EnvelopeMethod::Hull,
        SolveStats {
            sweeps: 0,
            residual: 0.0,
        },
        tol,
    ))
}

/// Upper monotone chain over `(j_0/m, f̄_j)`, evaluated back at the nodes.
fn majorant_on_edge(grid: &BarycentricGrid, fbar: &[f64]) -> Vec<f64> {
    let n = grid.node_count();
    let m = grid.resolution() as f64;
    // grid order is lexicographic in (j_0, j_1), i.e. ascending in j_0
    let xs: Vec<f64> = (0..n).map(|i| grid.lattice_node(i)[0] as f64 / m).collect();
    let hull = upper_chain(&xs, fbar);
    let mut values = vec![0.0; n];
    let mut seg = 0;
    for i in 0..n {
        while seg + 1 < hull.len() - 1 && xs[hull[seg + 1]] <= xs[i] {
            seg += 1;
        }
        let (a, b) = (hull[seg], hull[seg + 1]);
        if a == i {
            values[i] = fbar[i];
        } else {
            let t = (xs[i] - xs[a]) / (xs[b] - xs[a]);
            values[i] = fbar[a] + t * (fbar[b] - fbar[a]);
        }
    }
    values
}

/// Indices of the upper hull of `(xs, ys)`, xs strictly increasing.
fn upper_chain(xs: &[f64], ys: &[f64]) -> Vec<usize> {
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..xs.len() {
        while stack.len() >= 2 {
            let a = stack[stack.len() - 2];
            let b = stack[stack.len() - 1];
            // pop b when it is on or below the chord a -> i
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if cross >= 0.0 {
                stack.pop();
            } else {
                break;
            }
        }
        stack.push(i);
    }
    stack
}

fn majorant_by_lp(grid: &BarycentricGrid, fbar: &[f64]) -> Result<Vec<f64>> {
    let lp = HullLp::build(grid, fbar);
    let n = grid.node_count();
    let chunk = 256;
    let results: Vec<Result<Vec<f64>>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(chunk)
        .map(|ids| {
            let mut solver = LpWorkspace::new(&lp);
            ids.iter()
                .map(|&idx| solver.envelope_value(grid, fbar, idx))
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(n);
    for block in results {
        values.extend(block?);
    }
    Ok(values)
}

/// Shared LP data: one column per surviving node.
struct HullLp {
    rows: usize,
    /// Column-major constraint matrix, `rows` entries per column.
    a: Vec<f64>,
    /// Objective coefficient per column.
    c: Vec<f64>,
    /// Column position of each corner node (the always-feasible start basis).
    corner_cols: Vec<usize>,
    c_scale: f64,
}

impl HullLp {
    fn build(grid: &BarycentricGrid, fbar: &[f64]) -> Self {
        let order = grid.order();
        let rows = order; // k lattice coordinates + the mass row
        let keep = prune_dominated(grid, fbar);
        let mut a = Vec::new();
        let mut c = Vec::new();
        let mut ncols = 0usize;
        let mut col_of_node = vec![usize::MAX; grid.node_count()];
        for idx in 0..grid.node_count() {
            if !keep[idx] {
                continue;
            }
            col_of_node[idx] = ncols;
            ncols += 1;
            let lat = grid.lattice_node(idx);
            for &j in lat.iter().take(order - 1) {
                a.push(j as f64);
            }
            a.push(1.0);
            c.push(fbar[idx]);
        }
        let corner_cols = grid
            .corner_ranks()
            .iter()
            .map(|&r| col_of_node[r])
            .collect();
        let c_scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        Self {
            rows,
            a,
            c,
            corner_cols,
            c_scale,
        }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.a[j * self.rows..(j + 1) * self.rows]
    }

    fn ncols(&self) -> usize {
        self.c.len()
    }
}

/// Drops columns that cannot be vertices of the lifted upper hull: a node
/// whose value is weakly below the midpoint of some in-grid exchange
/// neighbor pair never enters an optimal basis. Corner nodes always stay.
fn prune_dominated(grid: &BarycentricGrid, fbar: &[f64]) -> Vec<bool> {
    let order = grid.order();
    let n = grid.node_count();
    let mut keep = vec![true; n];
    let range = super::sample_range(fbar);
    let tol = 1e-13 * range.max(1.0);
    let mut plus = vec![0u32; order];
    let mut minus = vec![0u32; order];
    for idx in 0..n {
        let lat = grid.lattice_node(idx);
        let mut dominated = false;
        'pairs: for p in 0..order {
            if lat[p] == 0 {
                continue;
            }
            for q in 0..order {
                if q == p || lat[q] == 0 {
                    continue;
                }
                plus.copy_from_slice(lat);
                minus.copy_from_slice(lat);
                plus[p] -= 1;
                plus[q] += 1;
                minus[p] += 1;
                minus[q] -= 1;
                let up = fbar[grid.rank(&plus)];
                let dn = fbar[grid.rank(&minus)];
                if fbar[idx] <= 0.5 * (up + dn) + tol {
                    dominated = true;
                    break 'pairs;
                }
            }
        }
        keep[idx] = !dominated;
    }
    for r in grid.corner_ranks() {
        keep[r] = true;
    }
    keep
}

const LP_MAX_ITERS: usize = 100_000;
const LP_STALL_LIMIT: usize = 64;

/// Revised-simplex workspace; bases warm-start across consecutive nodes.
struct LpWorkspace<'a> {
    lp: &'a HullLp,
    basis: Vec<usize>,
    warm: bool,
    b_mat: Vec<f64>,
    lambda: Vec<f64>,
    y: Vec<f64>,
    u: Vec<f64>,
    rhs: Vec<f64>,
}

impl<'a> LpWorkspace<'a> {
    fn new(lp: &'a HullLp) -> Self {
        let rows = lp.rows;
        Self {
            lp,
            basis: lp.corner_cols.clone(),
            warm: false,
            b_mat: vec![0.0; rows * rows],
            lambda: vec![0.0; rows],
            y: vec![0.0; rows],
            u: vec![0.0; rows],
            rhs: vec![0.0; rows],
        }
    }

    /// Envelope value at node `idx`: vertex nodes are their own value (the
    /// only feasible combination), interior nodes run the simplex method
    /// starting from the corner basis or the previous optimal basis.
    fn envelope_value(&mut self, grid: &BarycentricGrid, fbar: &[f64], idx: usize) -> Result<f64> {
        let lat = grid.lattice_node(idx);
        let order = grid.order();
        let m = grid.resolution() as u32;
        if lat.contains(&m) {
            return Ok(fbar[idx]);
        }
        for (r, &j) in lat.iter().take(order - 1).enumerate() {
            self.rhs[r] = j as f64;
        }
        self.rhs[order - 1] = 1.0;

        if !(self.warm && self.try_basis()) {
            self.basis.copy_from_slice(&self.lp.corner_cols);
            if !self.try_basis() {
                return Err(Error::Internal("corner basis infeasible".into()));
            }
        }
        let value = self.optimize()?;
        self.warm = true;
        Ok(value)
    }

    /// Loads the current basis; true when it is invertible and feasible.
    fn try_basis(&mut self) -> bool {
        let rows = self.lp.rows;
        for (pos, &col) in self.basis.iter().enumerate() {
            let a = self.lp.col(col);
            for r in 0..rows {
                self.b_mat[r * rows + pos] = a[r];
            }
        }
        let mut mat = self.b_mat.clone();
        let mut x = self.rhs.clone();
        if !solve_dense(&mut mat, &mut x) {
            return false;
        }
        if x.iter().any(|&v| v < -1e-9) {
            return false;
        }
        for v in &mut x {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.lambda.copy_from_slice(&x);
        true
    }

    fn optimize(&mut self) -> Result<f64> {
        let rows = self.lp.rows;
        let eps = 1e-9 * self.lp.c_scale;
        let mut stalled = 0usize;
        let mut bland = false;
        for _ in 0..LP_MAX_ITERS {
            // y solves Bᵀ y = c_B
            let mut bt = vec![0.0; rows * rows];
            for (pos, &col) in self.basis.iter().enumerate() {
                let a = self.lp.col(col);
                for r in 0..rows {
                    bt[pos * rows + r] = a[r];
                }
            }
            let mut y = self.y.clone();
            for (pos, &col) in self.basis.iter().enumerate() {
                y[pos] = self.lp.c[col];
            }
            if !solve_dense(&mut bt, &mut y) {
                return Err(Error::Internal("singular basis in hull LP".into()));
            }

            // pricing
            let mut entering = usize::MAX;
            let mut best = eps;
            for j in 0..self.lp.ncols() {
                let a = self.lp.col(j);
                let mut red = self.lp.c[j];
                for r in 0..rows {
                    red -= y[r] * a[r];
                }
                if bland {
                    if red > eps {
                        entering = j;
                        break;
                    }
                } else if red > best {
                    best = red;
                    entering = j;
                }
            }
            if entering == usize::MAX {
                let mut value = 0.0;
                for (pos, &col) in self.basis.iter().enumerate() {
                    value += self.lp.c[col] * self.lambda[pos];
                }
                return Ok(value);
            }

            // ratio test on u = B⁻¹ A_e
            let mut mat = self.b_mat.clone();
            self.u.copy_from_slice(self.lp.col(entering));
            if !solve_dense(&mut mat, &mut self.u) {
                return Err(Error::Internal("singular basis in hull LP".into()));
            }
            let mut leaving = usize::MAX;
            let mut theta = f64::INFINITY;
            for r in 0..rows {
                if self.u[r] > 1e-11 {
                    let ratio = self.lambda[r] / self.u[r];
                    if ratio < theta - 1e-15 || (ratio < theta + 1e-15 && leaving == usize::MAX) {
                        theta = ratio;
                        leaving = r;
                    }
                }
            }
            if leaving == usize::MAX {
                return Err(Error::Internal("unbounded hull LP".into()));
            }
            if theta <= 1e-13 {
                stalled += 1;
                if stalled > LP_STALL_LIMIT {
                    bland = true;
                }
            } else {
                stalled = 0;
                bland = false;
            }

            self.basis[leaving] = entering;
            if !self.try_basis() {
                return Err(Error::Internal("basis became infeasible in hull LP".into()));
            }
        }
        Err(Error::Internal("hull LP exceeded iteration limit".into()))
    }
}

/// Gaussian elimination with partial pivoting; solves in place, returns
/// false on (numerical) singularity. `mat` is row-major `n × n`.
fn solve_dense(mat: &mut [f64], x: &mut [f64]) -> bool {
    let n = x.len();
    for col in 0..n {
        let mut pivot = col;
        let mut best = mat[col * n + col].abs();
        for r in (col + 1)..n {
            let v = mat[r * n + col].abs();
            if v > best {
                best = v;
                pivot = r;
            }
        }
        if best < 1e-12 {
            return false;
        }
        if pivot != col {
            for cc in 0..n {
                mat.swap(col * n + cc, pivot * n + cc);
            }
            x.swap(col, pivot);
        }
        let inv = 1.0 / mat[col * n + col];
        for r in (col + 1)..n {
            let factor = mat[r * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for cc in col..n {
                mat[r * n + cc] -= factor * mat[col * n + cc];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut v = x[col];
        for cc in (col + 1)..n {
            v -= mat[col * n + cc] * x[cc];
        }
        x[col] = v / mat[col * n + col];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::make_grid;

    fn hull_values(k: usize, m: usize, f: impl Fn(&[f64]) -> f64) -> (BarycentricGrid, Vec<f64>, Vec<f64>) {
        let grid = make_grid(k, m).unwrap();
        let fbar: Vec<f64> = (0..grid.node_count())
            .map(|i| f(&grid.node_weights(i)))
            .collect();
        let face = Face::new((0..=k).collect()).unwrap();
        let field = envelope_hull(face, grid.clone(), &fbar, &Tolerances::default()).unwrap();
        let values = field.values().to_vec();
        (grid, fbar, values)
    }

    #[test]
    fn linear_data_is_its_own_envelope() {
        let (_, fbar, values) = hull_values(2, 12, |w| 2.0 * w[0] - w[1] + 0.25 * w[2]);
        for (v, f) in values.iter().zip(&fbar) {
            assert!((v - f).abs() < 1e-10);
        }
    }

    #[test]
    fn vee_on_edge_flattens_to_half() {
        let (_, _, values) = hull_values(1, 100, |w| (w[0] - 0.5).abs());
        for v in &values {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_majorant_matches_brute_force_chords() {
        // independent oracle: max over all chords through each node
        let m = 40;
        let grid = make_grid(1, m).unwrap();
        let f = |x: f64| (x * 7.1).sin() * 0.3 + if x > 0.6 { 0.5 } else { 0.0 };
        let fbar: Vec<f64> = (0..grid.node_count())
            .map(|i| f(grid.node_weights(i)[0]))
            .collect();
        let face = Face::new(vec![0, 1]).unwrap();
        let field = envelope_hull(face, grid.clone(), &fbar, &Tolerances::default()).unwrap();
        for i in 0..=m {
            let mut best = fbar[i];
            for a in 0..=i {
                for b in i..=m {
                    if a == b {
                        continue;
                    }
                    let t = (i - a) as f64 / (b - a) as f64;
                    best = best.max(fbar[a] + t * (fbar[b] - fbar[a]));
                }
            }
            assert!(
                (field.values()[i] - best).abs() < 1e-12,
                "node {i}: {} vs {}",
                field.values()[i],
                best
            );
        }
    }

    #[test]
    fn lp_matches_edge_solver_on_k1_data() {
        // same data solved as k=1 chain and as k=2 restricted to an edge
        let m = 30;
        let f = |x: f64| (x - 0.3).abs() * (1.0 - x);
        let (_, _, edge_vals) = hull_values(1, m, |w| f(w[0]));
        let grid2 = make_grid(2, m).unwrap();
        let fbar2: Vec<f64> = (0..grid2.node_count())
            .map(|i| {
                let w = grid2.node_weights(i);
                // depends on w[0] only along the w[2] = 0 edge; elsewhere linear fill
                f(w[0]) * (1.0 - w[2]) + w[2] * f(w[0])
            })
            .collect();
        let face = Face::new(vec![0, 1, 2]).unwrap();
        let field = envelope_hull(face, grid2.clone(), &fbar2, &Tolerances::default()).unwrap();
        // the w2=0 edge nodes are (j0, m - j0, 0)
        for j0 in 0..=m {
            let lat = [j0 as u32, (m - j0) as u32, 0u32];
            let idx = grid2.rank(&lat);
            // envelope on the full face dominates the edge majorant
            assert!(field.values()[idx] >= edge_vals[j0] - 1e-9);
        }
    }

    #[test]
    fn majorant_dominates_and_pins_vertices() {
        let (grid, fbar, values) = hull_values(2, 16, |w| (w[0] * 4.0).sin() * (w[1] - 0.2));
        for (v, f) in values.iter().zip(&fbar) {
            assert!(*v >= *f - 1e-9);
        }
        for r in grid.corner_ranks() {
            assert_eq!(values[r], fbar[r]);
        }
    }

    #[test]
    fn call_spread_node_value_matches_case_two() {
        // atoms {-1,0,1}, strikes (-0.1, 0.5): interior planar-region value
        let (grid, _, values) = hull_values(2, 100, |w| {
            let s = -w[0] + w[2];
            (s + 0.1).max(0.0) - (s - 0.5).max(0.0)
        });
        // node (beta, gamma) = (0.2, 0.3) in weights (0.5, 0.2, 0.3)
        let idx = grid.rank(&[50, 20, 30]);
        assert!((values[idx] - 0.32).abs() < 2e-2);
        // lattice-aligned folds make the sample envelope essentially exact here
        assert!((values[idx] - 0.32).abs() < 1e-9);
    }
}
