//! Atomic measures on a fixed atom grid.
//!
//! A terminal law supported on finitely many atoms `x_0 < … < x_N` is
//! identified with its vector of atom probabilities. The atoms carrying
//! positive mass form a *face* of the probability simplex; every measure is a
//! point of the simplex spanned by its face. This module holds those domain
//! types plus the regular barycentric grid used by the solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the "weights sum to one" check at construction.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Safety cap on the number of barycentric grid nodes.
pub const MAX_GRID_NODES: u128 = 20_000_000;

/// The fixed, strictly increasing atom locations of the terminal law.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomGrid {
    atoms: Vec<f64>,
}

impl AtomGrid {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Invalid {
                what: "atom grid",
                reason: "needs at least one atom".into(),
            });
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::Invalid {
                what: "atom grid",
                reason: "atoms must be finite".into(),
            });
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid {
                what: "atom grid",
                reason: "atoms must be strictly increasing".into(),
            });
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Number of atoms minus one; faces are subsets of `{0, …, max_index()}`.
    pub fn max_index(&self) -> usize {
        self.atoms.len() - 1
    }

    pub fn atom(&self, i: usize) -> f64 {
        self.atoms[i]
    }

    /// The full face `{0, …, N}`.
    pub fn full_face(&self) -> Face {
        Face::new((0..self.atoms.len()).collect()).expect("full face is valid")
    }
}

/// A sorted, duplicate-free subset of atom indices: the support of a measure.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Face {
    indices: Vec<usize>,
}

impl Face {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Invalid {
                what: "face",
                reason: "must be nonempty".into(),
            });
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invalid {
                what: "face",
                reason: "duplicate indices".into(),
            });
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Number of indices, `k + 1` in the simplex `Δ^{k+1}`.
    pub fn order(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn is_subface_of(&self, other: &Face) -> bool {
        self.indices.iter().all(|i| other.contains(*i))
    }

    /// Checks all indices address atoms of `grid`.
    pub fn validate_for(&self, grid: &AtomGrid) -> Result<()> {
        match self.indices.last() {
            Some(&last) if last > grid.max_index() => Err(Error::Invalid {
                what: "face",
                reason: format!("index {last} exceeds atom count {}", grid.max_index() + 1),
            }),
            _ => Ok(()),
        }
    }

    /// Atom locations addressed by this face.
    pub fn atoms_on(&self, grid: &AtomGrid) -> Vec<f64> {
        self.indices.iter().map(|&i| grid.atom(i)).collect()
    }

    /// Position of `index` within the face, if present.
    pub fn position_of(&self, index: usize) -> Option<usize> {
        self.indices.binary_search(&index).ok()
    }
}

/// A point of the probability simplex spanned by a face: nonnegative weights
/// summing to one, one weight per face index.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    face: Face,
    weights: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(face: Face, weights: Vec<f64>) -> Result<Self> {
        if face.order() != weights.len() {
            return Err(Error::DimensionMismatch {
                face: face.order(),
                weights: weights.len(),
            });
        }
        let mut weights = weights;
        for w in &mut weights {
            if !w.is_finite() || *w < -WEIGHT_SUM_TOL {
                return Err(Error::Invalid {
                    what: "probability vector",
                    reason: format!("negative or non-finite weight {w}"),
                });
            }
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Invalid {
                what: "probability vector",
                reason: format!("weights sum to {sum}, expected 1"),
            });
        }
        // Renormalize so downstream code can assume the sum is exactly one.
        for w in &mut weights {
            *w /= sum;
        }
        Ok(Self { face, weights })
    }

    /// Dirac mass at the atom in position `pos` of `face`.
    pub fn dirac(face: Face, pos: usize) -> Result<Self> {
        if pos >= face.order() {
            return Err(Error::Invalid {
                what: "probability vector",
                reason: format!("dirac position {pos} out of range"),
            });
        }
        let mut weights = vec![0.0; face.order()];
        weights[pos] = 1.0;
        Ok(Self { face, weights })
    }

    pub fn face(&self) -> &Face {
        &self.face
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sub-face of indices with weight strictly above `tol`, together with the
    /// renormalized restriction of the vector to it.
    pub fn support_face(&self, tol: f64) -> Result<(Face, ProbabilityVector)> {
        if !(0.0..0.5).contains(&tol) {
            return Err(Error::Invalid {
                what: "support tolerance",
                reason: format!("tol {tol} outside [0, 0.5)"),
            });
        }
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for (i, &w) in self.weights.iter().enumerate() {
            if w > tol {
                indices.push(self.face.indices()[i]);
                weights.push(w);
            }
        }
        if indices.is_empty() {
            return Err(Error::Internal(
                "support_face found no weight above tolerance".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        let face = Face::new(indices)?;
        Ok((face.clone(), ProbabilityVector { face, weights }))
    }

    /// Drops the last coordinate. The inverse is [`lift`].
    pub fn project(&self) -> Vec<f64> {
        self.weights[..self.weights.len() - 1].to_vec()
    }
}

/// Restores a projected vector by appending `1 − Σ others`.
pub fn lift(face: Face, projected: &[f64]) -> Result<ProbabilityVector> {
    if projected.len() + 1 != face.order() {
        return Err(Error::DimensionMismatch {
            face: face.order(),
            weights: projected.len() + 1,
        });
    }
    let sum: f64 = projected.iter().sum();
    let mut weights = projected.to_vec();
    weights.push(1.0 - sum);
    ProbabilityVector::new(face, weights)
}

/// Barycenter `Σ_j atoms[α_j] · weights[j]` of the measure.
pub fn mean(grid: &AtomGrid, xi: &ProbabilityVector) -> Result<f64> {
    xi.face().validate_for(grid)?;
    Ok(xi
        .face()
        .indices()
        .iter()
        .zip(xi.weights())
        .map(|(&i, &w)| grid.atom(i) * w)
        .sum())
}

/// Regular lattice on the simplex of a face of order `k + 1`: all points
/// `(j_0/m, …, j_k/m)` with integer `j_i ≥ 0` summing to `m`, enumerated in
/// lexicographic order of the lattice coordinates.
#[derive(Debug, Clone)]
pub struct BarycentricGrid {
    order: usize,
    resolution: usize,
    /// Integer lattice coordinates per node, flattened row-major.
    lattice: Vec<u32>,
    /// Pascal row cache: `choose[n][r]` for `n ≤ m + k`.
    choose: Vec<Vec<u128>>,
}

impl BarycentricGrid {
    /// `k + 1` coordinates per node.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Subdivisions per edge.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn node_count(&self) -> usize {
        self.lattice.len() / self.order
    }

    pub fn lattice_node(&self, idx: usize) -> &[u32] {
        &self.lattice[idx * self.order..(idx + 1) * self.order]
    }

    /// Barycentric weights of node `idx`.
    pub fn node_weights(&self, idx: usize) -> Vec<f64> {
        let m = self.resolution as f64;
        self.lattice_node(idx).iter().map(|&j| j as f64 / m).collect()
    }

    pub fn node_vector(&self, idx: usize, face: &Face) -> ProbabilityVector {
        ProbabilityVector::new(face.clone(), self.node_weights(idx))
            .expect("grid nodes are valid probability vectors")
    }

    /// Lexicographic rank of a lattice coordinate vector.
    ///
    /// Compositions with a smaller value at position `t` precede the node;
    /// their count telescopes to a difference of two binomials.
    pub fn rank(&self, lattice: &[u32]) -> usize {
        debug_assert_eq!(lattice.len(), self.order);
        let mut rank: u128 = 0;
        let mut remaining = self.resolution;
        for (t, &j) in lattice.iter().enumerate().take(self.order - 1) {
            let j = j as usize;
            let parts_after = self.order - t - 1;
            rank += self.choose[remaining + parts_after][parts_after]
                - self.choose[remaining - j + parts_after][parts_after];
            remaining -= j;
        }
        rank as usize
    }

    /// True when some lattice coordinate is zero (node on the simplex boundary).
    pub fn is_boundary(&self, idx: usize) -> bool {
        self.lattice_node(idx).contains(&0)
    }

    /// Positions of the `k + 1` corner nodes `m·e_r` in grid order.
    pub fn corner_ranks(&self) -> Vec<usize> {
        let m = self.resolution as u32;
        (0..self.order)
            .map(|r| {
                let mut lat = vec![0u32; self.order];
                lat[r] = m;
                self.rank(&lat)
            })
            .collect()
    }

    pub fn iter_lattice(&self) -> impl Iterator<Item = &[u32]> {
        (0..self.node_count()).map(move |i| self.lattice_node(i))
    }
}

/// Builds the barycentric grid for a face of order `k + 1` with `m`
/// subdivisions per edge. Node count is `binomial(m + k, k)`.
pub fn make_grid(k: usize, m: usize) -> Result<BarycentricGrid> {
    if m < 1 {
        return Err(Error::Invalid {
            what: "grid resolution",
            reason: "m must be at least 1".into(),
        });
    }
    let order = k + 1;
    let choose = pascal_rows(m + k);
    let count = choose[m + k][k];
    if count > MAX_GRID_NODES {
        return Err(Error::GridTooLarge {
            nodes: count,
            limit: MAX_GRID_NODES,
        });
    }
    let count = count as usize;
    let mut lattice = Vec::with_capacity(count * order);
    let mut current = vec![0u32; order];
    enumerate_compositions(m as u32, order, &mut current, 0, &mut lattice);
    debug_assert_eq!(lattice.len(), count * order);
    Ok(BarycentricGrid {
        order,
        resolution: m,
        lattice,
        choose,
    })
}

fn enumerate_compositions(total: u32, parts: usize, current: &mut [u32], pos: usize, out: &mut Vec<u32>) {
    if pos == parts - 1 {
        current[pos] = total;
        out.extend_from_slice(current);
        return;
    }
    for j in 0..=total {
        current[pos] = j;
        enumerate_compositions(total - j, parts, current, pos + 1, out);
    }
}

fn pascal_rows(n_max: usize) -> Vec<Vec<u128>> {
    let mut rows: Vec<Vec<u128>> = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let mut row = vec![1u128; n + 1];
        for r in 1..n {
            // saturation keeps oversize grids comparable against the cap
            row[r] = rows[n - 1][r - 1].saturating_add(rows[n - 1][r]);
        }
        rows.push(row);
    }
    rows
}

/// JSON shape for an atomic measure: `{"atoms": [...], "weights": [...],
/// "face": [...]}` with `face` defaulting to the full `{0..N}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureJson {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<Vec<usize>>,
}

impl MeasureJson {
    pub fn build(&self) -> Result<(AtomGrid, ProbabilityVector)> {
        let grid = AtomGrid::new(self.atoms.clone())?;
        let face = match &self.face {
            Some(indices) => {
                let f = Face::new(indices.clone())?;
                f.validate_for(&grid)?;
                f
            }
            None => grid.full_face(),
        };
        let xi = ProbabilityVector::new(face, self.weights.clone())?;
        Ok((grid, xi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_atoms() -> AtomGrid {
        AtomGrid::new(vec![-1.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn mean_dot_product() {
        let grid = three_atoms();
        let xi = ProbabilityVector::new(grid.full_face(), vec![0.5, 0.2, 0.3]).unwrap();
        assert!((mean(&grid, &xi).unwrap() - (-0.2)).abs() < 1e-15);
    }

    #[test]
    fn mean_of_dirac_is_atom() {
        let grid = three_atoms();
        for i in 0..3 {
            let xi = ProbabilityVector::dirac(grid.full_face(), i).unwrap();
            assert_eq!(mean(&grid, &xi).unwrap(), grid.atom(i));
        }
    }

    #[test]
    fn mean_symmetric_weights() {
        let grid = three_atoms();
        let xi = ProbabilityVector::new(grid.full_face(), vec![0.4, 0.2, 0.4]).unwrap();
        assert!(mean(&grid, &xi).unwrap().abs() < 1e-15);
    }

    #[test]
    fn mean_is_affine() {
        let grid = three_atoms();
        let a = ProbabilityVector::new(grid.full_face(), vec![0.5, 0.2, 0.3]).unwrap();
        let b = ProbabilityVector::new(grid.full_face(), vec![0.1, 0.6, 0.3]).unwrap();
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let mixed: Vec<f64> = a
                .weights()
                .iter()
                .zip(b.weights())
                .map(|(&wa, &wb)| t * wa + (1.0 - t) * wb)
                .collect();
            let mixed = ProbabilityVector::new(grid.full_face(), mixed).unwrap();
            let lhs = mean(&grid, &mixed).unwrap();
            let rhs = t * mean(&grid, &a).unwrap() + (1.0 - t) * mean(&grid, &b).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn support_face_drops_exact_zero() {
        let grid = three_atoms();
        let xi = ProbabilityVector::new(grid.full_face(), vec![0.5, 0.5, 0.0]).unwrap();
        let (face, restr) = xi.support_face(1e-9).unwrap();
        assert_eq!(face.indices(), &[0, 1]);
        assert!((restr.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn support_face_dirac_and_full() {
        let grid = three_atoms();
        let dirac = ProbabilityVector::new(grid.full_face(), vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(dirac.support_face(1e-9).unwrap().0.indices(), &[0]);
        let full = ProbabilityVector::new(grid.full_face(), vec![0.3, 0.3, 0.4]).unwrap();
        assert_eq!(full.support_face(1e-9).unwrap().0.indices(), &[0, 1, 2]);
    }

    #[test]
    fn support_face_idempotent() {
        let grid = three_atoms();
        let xi = ProbabilityVector::new(grid.full_face(), vec![0.7, 0.0, 0.3]).unwrap();
        let (face, restr) = xi.support_face(1e-9).unwrap();
        let (face2, _) = restr.support_face(1e-9).unwrap();
        assert_eq!(face, face2);
    }

    #[test]
    fn project_lift_round_trip() {
        let grid = three_atoms();
        let xi = ProbabilityVector::new(grid.full_face(), vec![0.2, 0.3, 0.5]).unwrap();
        let proj = xi.project();
        assert_eq!(proj, vec![0.2, 0.3]);
        let lifted = lift(grid.full_face(), &proj).unwrap();
        assert_eq!(lifted, xi);
    }

    #[test]
    fn project_degenerate_face() {
        let face = Face::new(vec![1]).unwrap();
        let xi = ProbabilityVector::new(face, vec![1.0]).unwrap();
        assert!(xi.project().is_empty());
    }

    #[test]
    fn grid_k1_m2_nodes() {
        let g = make_grid(1, 2).unwrap();
        assert_eq!(g.node_count(), 3);
        let nodes: Vec<Vec<f64>> = (0..3).map(|i| g.node_weights(i)).collect();
        assert_eq!(nodes[0], vec![0.0, 1.0]);
        assert_eq!(nodes[1], vec![0.5, 0.5]);
        assert_eq!(nodes[2], vec![1.0, 0.0]);
    }

    #[test]
    fn grid_counts_match_binomial() {
        // Brute enumeration cross-check of binomial(m + k, k).
        for (k, m) in [(2usize, 2usize), (2, 5), (3, 4)] {
            let g = make_grid(k, m).unwrap();
            let mut brute = 0usize;
            let mut stack = vec![(0usize, 0u32)];
            while let Some((depth, used)) = stack.pop() {
                if depth == k {
                    brute += 1;
                    continue;
                }
                for j in 0..=(m as u32 - used) {
                    stack.push((depth + 1, used + j));
                }
            }
            assert_eq!(g.node_count(), brute);
        }
        assert_eq!(make_grid(2, 2).unwrap().node_count(), 6);
        assert_eq!(make_grid(2, 100).unwrap().node_count(), 5151);
    }

    #[test]
    fn grid_rank_inverts_enumeration() {
        let g = make_grid(3, 7).unwrap();
        for idx in 0..g.node_count() {
            assert_eq!(g.rank(g.lattice_node(idx)), idx);
        }
    }

    #[test]
    fn grid_nodes_are_valid_vectors() {
        let face = Face::new(vec![0, 1, 2]).unwrap();
        let g = make_grid(2, 7).unwrap();
        for idx in 0..g.node_count() {
            let v = g.node_vector(idx, &face);
            assert!((v.weights().iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOL);
        }
    }

    #[test]
    fn grid_too_large_errors() {
        assert!(matches!(
            make_grid(6, 400),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn measure_json_default_face() {
        let j: MeasureJson =
            serde_json::from_str(r#"{"atoms":[-1.0,0.0,1.0],"weights":[0.5,0.2,0.3]}"#).unwrap();
        let (grid, xi) = j.build().unwrap();
        assert_eq!(grid.max_index(), 2);
        assert_eq!(xi.face().indices(), &[0, 1, 2]);
    }

    #[test]
    fn measure_json_explicit_face() {
        let j: MeasureJson =
            serde_json::from_str(r#"{"atoms":[-1.0,0.0,1.0],"weights":[0.4,0.6],"face":[0,2]}"#)
                .unwrap();
        let (grid, xi) = j.build().unwrap();
        assert_eq!(xi.face().indices(), &[0, 2]);
        assert!((mean(&grid, &xi).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(AtomGrid::new(vec![]).is_err());
        assert!(AtomGrid::new(vec![0.0, 0.0]).is_err());
        assert!(Face::new(vec![]).is_err());
        assert!(Face::new(vec![1, 1]).is_err());
        let face = Face::new(vec![0, 1]).unwrap();
        assert!(ProbabilityVector::new(face.clone(), vec![0.5]).is_err());
        assert!(ProbabilityVector::new(face.clone(), vec![0.7, 0.7]).is_err());
        assert!(ProbabilityVector::new(face, vec![-0.1, 1.1]).is_err());
    }
}
