//! Value function of the finite-dimensional transport problem on each simplex
//! face, computed as the concave envelope of the modified cost.
//!
//! Two independent solvers produce the same object:
//!
//! * [`hull::envelope_hull`] builds the least concave majorant of the grid
//!   samples directly (monotone chain in one dimension, per-node linear
//!   programs above), and serves as the trusted reference;
//! * [`obstacle::envelope_obstacle`] iterates the directional obstacle
//!   scheme `V ← max(f̄, ½(V(z+h·d) + V(z−h·d)))` with Dirichlet data pinned
//!   on the simplex boundary, exercising the PDE characterization.
//!
//! Faces are solved in increasing order of support size; every face hands its
//! solution down as boundary data for the faces above it.

use std::collections::BTreeMap;
use std::io::Write as IoWrite;

use crate::error::{Error, Result};
use crate::measures::{make_grid, AtomGrid, BarycentricGrid, Face, ProbabilityVector};
use crate::payoff::{CostFunction, ModifiedCost};

pub mod hull;
pub mod obstacle;

pub use hull::envelope_hull;
pub use obstacle::envelope_obstacle;

/// Which solver produced a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeMethod {
    Hull,
    Obstacle,
}

/// Solver tolerances. The relative ones scale with the sampled range of f̄.
#[derive(Debug, Clone)]
pub struct Tolerances {
    /// Fixed-point sweep tolerance, relative to range(f̄).
    pub fp_rel: f64,
    /// Contact-set tolerance, relative to range(f̄).
    pub contact_rel: f64,
    /// Discrete-concavity slack, relative to range(f̄); the absolute
    /// tolerance additionally absorbs the fixed-point tolerance.
    pub concave_rel: f64,
    /// `tol_planar = planar_factor · tol_concave`.
    pub planar_factor: f64,
    /// Absorption threshold for weights near 0 or 1.
    pub eps_abs: f64,
    /// Hit threshold in segment parameter for the simulator.
    pub eps_hit: f64,
    /// Lower norm cutoff `c` for admissible control directions.
    pub direction_min_norm: f64,
    /// Component bound of the integer stencil directions.
    pub stencil_width: u32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            fp_rel: 1e-8,
            contact_rel: 1e-6,
            concave_rel: 1e-6,
            planar_factor: 10.0,
            eps_abs: 1e-9,
            eps_hit: 1e-6,
            direction_min_norm: 0.01,
            stencil_width: 10,
        }
    }
}

// Absolute floor guarding degenerate (near-constant) cost samples, where a
// purely range-relative tolerance would drop below f64 rounding noise.
const TOL_FLOOR: f64 = 1e-13;

impl Tolerances {
    pub fn tol_fp(&self, range: f64) -> f64 {
        (self.fp_rel * range).max(TOL_FLOOR)
    }

    pub fn tol_contact(&self, range: f64) -> f64 {
        (self.contact_rel * range).max(TOL_FLOOR)
    }

    pub fn tol_concave(&self, range: f64) -> f64 {
        (self.concave_rel * range).max(TOL_FLOOR) + self.tol_fp(range)
    }

    pub fn tol_planar(&self, range: f64) -> f64 {
        self.planar_factor * self.tol_concave(range)
    }
}

/// Directions in the zero-sum hyperplane of a face.
///
/// The family consists of every primitive integer vector with zero component
/// sum and components bounded by the stencil width, deduplicated up to sign
/// and ordered by width. The width-one members are the pairwise exchange
/// directions `(e_i − e_j)/√2`. Integer directions keep obstacle stencils on
/// lattice nodes, and they resolve the fold lines of piecewise-linear
/// envelopes exactly whenever the folds have rational slopes.
#[derive(Debug, Clone)]
pub struct DirectionSet {
    order: usize,
    min_norm: f64,
    exchange: Vec<Vec<f64>>,
    /// Primitive zero-sum integer vectors, width-sorted, sign-deduplicated.
    lattice: Vec<Vec<i32>>,
}

impl DirectionSet {
    pub fn standard(order: usize, tol: &Tolerances) -> Self {
        let mut exchange = Vec::new();
        let s = 1.0 / std::f64::consts::SQRT_2;
        for i in 0..order {
            for j in (i + 1)..order {
                let mut d = vec![0.0; order];
                d[i] = s;
                d[j] = -s;
                exchange.push(d);
            }
        }
        // wider orders get narrower stencils to keep the family small
        let width = match order {
            0..=3 => tol.stencil_width,
            4 => tol.stencil_width.min(4),
            _ => tol.stencil_width.min(2),
        }
        .max(1);
        let lattice = primitive_zero_sum_vectors(order, width as i32);
        Self {
            order,
            min_norm: tol.direction_min_norm,
            exchange,
            lattice,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn min_norm(&self) -> f64 {
        self.min_norm
    }

    /// Exchange pair `(i, j)` per exchange direction, in direction order.
    pub fn exchange_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in 0..self.order {
            for j in (i + 1)..self.order {
                pairs.push((i, j));
            }
        }
        pairs
    }

    pub fn exchange_directions(&self) -> &[Vec<f64>] {
        &self.exchange
    }

    /// The integer stencil family, exchange pairs first.
    pub fn lattice_directions(&self) -> &[Vec<i32>] {
        &self.lattice
    }

    /// The family as unit vectors, in lattice order.
    pub fn unit_directions(&self) -> Vec<Vec<f64>> {
        self.lattice
            .iter()
            .map(|v| {
                let norm = v.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
                v.iter().map(|&x| x as f64 / norm).collect()
            })
            .collect()
    }
}

/// Primitive (gcd one) zero-sum integer vectors with `max |v_i| ≤ width`,
/// one representative per ±pair, sorted by width then lexicographically.
fn primitive_zero_sum_vectors(order: usize, width: i32) -> Vec<Vec<i32>> {
    let mut out: Vec<Vec<i32>> = Vec::new();
    let mut v = vec![0i32; order];
    enumerate_zero_sum(order, width, 0, 0, &mut v, &mut out);
    out.sort_by_key(|v| {
        (
            v.iter().map(|x| x.abs()).max().unwrap_or(0),
            v.clone(),
        )
    });
    out
}

fn enumerate_zero_sum(
    order: usize,
    width: i32,
    pos: usize,
    sum: i32,
    v: &mut Vec<i32>,
    out: &mut Vec<Vec<i32>>,
) {
    if pos == order - 1 {
        let last = -sum;
        if last.abs() > width {
            return;
        }
        v[order - 1] = last;
        if v.iter().all(|&x| x == 0) {
            return;
        }
        // one representative per sign pair: first nonzero positive
        if v.iter().find(|&&x| x != 0).is_some_and(|&x| x < 0) {
            return;
        }
        if gcd_all(v) != 1 {
            return;
        }
        out.push(v.clone());
        return;
    }
    for x in -width..=width {
        v[pos] = x;
        enumerate_zero_sum(order, width, pos + 1, sum + x, v, out);
    }
}

fn gcd_all(v: &[i32]) -> i32 {
    let mut g = 0i32;
    for &x in v {
        g = gcd(g, x.abs());
    }
    g
}

fn gcd(a: i32, b: i32) -> i32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Convergence diagnostics of a per-face solve.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SolveStats {
    pub sweeps: usize,
    pub residual: f64,
}

/// Grid-sampled value function on one face, with contact mask.
#[derive(Debug, Clone)]
pub struct EnvelopeField {
    face: Face,
    grid: BarycentricGrid,
    values: Vec<f64>,
    fbar: Vec<f64>,
    contact: Vec<bool>,
    method: EnvelopeMethod,
    stats: SolveStats,
    range: f64,
    tol_contact: f64,
}

impl EnvelopeField {
    pub(crate) fn assemble(
        face: Face,
        grid: BarycentricGrid,
        values: Vec<f64>,
        fbar: Vec<f64>,
        method: EnvelopeMethod,
        stats: SolveStats,
        tol: &Tolerances,
    ) -> Self {
        let range = sample_range(&fbar);
        let tol_contact = tol.tol_contact(range);
        let contact = contact_set(&values, &fbar, tol_contact);
        Self {
            face,
            grid,
            values,
            fbar,
            contact,
            method,
            stats,
            range,
            tol_contact,
        }
    }

    pub fn face(&self) -> &Face {
        &self.face
    }

    pub fn grid(&self) -> &BarycentricGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fbar(&self) -> &[f64] {
        &self.fbar
    }

    pub fn contact(&self) -> &[bool] {
        &self.contact
    }

    pub fn method(&self) -> EnvelopeMethod {
        self.method
    }

    pub fn stats(&self) -> SolveStats {
        self.stats
    }

    /// Range of the sampled modified cost; tolerance scales derive from it.
    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn tol_contact(&self) -> f64 {
        self.tol_contact
    }

    /// Piecewise-linear interpolation of the field at a point of its face.
    pub fn query(&self, xi: &ProbabilityVector) -> Result<f64> {
        if xi.face() != &self.face {
            return Err(Error::OffFace {
                face: self.face.indices().to_vec(),
            });
        }
        Ok(self.query_weights(xi.weights()))
    }

    /// Interpolation from raw face weights (callers guarantee the face).
    pub fn query_weights(&self, weights: &[f64]) -> f64 {
        interpolate(&self.grid, &self.values, weights)
    }

    /// Interpolated modified cost, for symmetry with [`Self::query_weights`].
    pub fn fbar_weights(&self, weights: &[f64]) -> f64 {
        interpolate(&self.grid, &self.fbar, weights)
    }
}

pub(crate) fn sample_range(values: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        0.0
    } else {
        hi - lo
    }
}

/// Nodes where the envelope touches the obstacle: `V − f̄ ≤ tol_contact`.
pub fn contact_set(values: &[f64], fbar: &[f64], tol_contact: f64) -> Vec<bool> {
    values
        .iter()
        .zip(fbar)
        .map(|(&v, &f)| v - f <= tol_contact)
        .collect()
}

const MAX_INTERP_ORDER: usize = 16;

/// Piecewise-linear interpolation over the Kuhn/Freudenthal triangulation of
/// the barycentric lattice, exact at grid nodes.
///
/// The simplex is mapped to the order simplex `0 ≤ q_1 ≤ … ≤ q_k ≤ m` via
/// cumulative coordinates; there the standard sorted-fractional-part rule
/// applies and conforms to the simplex boundary.
pub fn interpolate(grid: &BarycentricGrid, values: &[f64], weights: &[f64]) -> f64 {
    let order = grid.order();
    debug_assert_eq!(weights.len(), order);
    debug_assert!(order <= MAX_INTERP_ORDER);
    if order == 1 {
        return values[0];
    }
    let k = order - 1;
    let m = grid.resolution() as u32;
    let mf = m as f64;

    let mut q = [0.0f64; MAX_INTERP_ORDER];
    let mut acc = 0.0;
    for j in 0..k {
        acc += weights[j];
        let mut qj = (acc * mf).clamp(0.0, mf);
        if j > 0 && qj < q[j - 1] {
            qj = q[j - 1];
        }
        q[j] = qj;
    }

    let mut corner = [0u32; MAX_INTERP_ORDER];
    let mut theta = [0.0f64; MAX_INTERP_ORDER];
    for j in 0..k {
        let c = (q[j].floor() as u32).min(m.saturating_sub(1));
        corner[j] = c;
        theta[j] = q[j] - c as f64;
    }

    // θ descending; ties resolved toward the larger index so the vertex walk
    // stays inside the order simplex
    let mut pi = [0usize; MAX_INTERP_ORDER];
    for (j, p) in pi.iter_mut().enumerate().take(k) {
        *p = j;
    }
    pi[..k].sort_unstable_by(|&a, &b| {
        theta[b]
            .partial_cmp(&theta[a])
            .expect("finite weights")
            .then(b.cmp(&a))
    });

    let mut vertex = corner;
    let mut result = 0.0;
    let lam0 = 1.0 - theta[pi[0]];
    if lam0 != 0.0 {
        result += lam0 * values[rank_q_vertex(grid, &vertex, k, m)];
    }
    for t in 0..k {
        vertex[pi[t]] += 1;
        let lam = if t + 1 < k {
            theta[pi[t]] - theta[pi[t + 1]]
        } else {
            theta[pi[k - 1]]
        };
        if lam != 0.0 {
            result += lam * values[rank_q_vertex(grid, &vertex, k, m)];
        }
    }
    result
}

fn rank_q_vertex(grid: &BarycentricGrid, q: &[u32; MAX_INTERP_ORDER], k: usize, m: u32) -> usize {
    let mut lattice = [0u32; MAX_INTERP_ORDER];
    lattice[0] = q[0];
    for i in 1..k {
        debug_assert!(q[i] >= q[i - 1]);
        lattice[i] = q[i] - q[i - 1];
    }
    debug_assert!(q[k - 1] <= m);
    lattice[k] = m - q[k - 1];
    grid.rank(&lattice[..=k])
}

/// Map of solved faces for one atom grid and payoff.
#[derive(Debug, Clone)]
pub struct EnvelopeSolution {
    grid: AtomGrid,
    cost: CostFunction,
    resolution: usize,
    method: EnvelopeMethod,
    fields: BTreeMap<Face, EnvelopeField>,
}

impl EnvelopeSolution {
    pub fn atom_grid(&self) -> &AtomGrid {
        &self.grid
    }

    pub fn cost(&self) -> &CostFunction {
        &self.cost
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn method(&self) -> EnvelopeMethod {
        self.method
    }

    pub fn fields(&self) -> &BTreeMap<Face, EnvelopeField> {
        &self.fields
    }

    pub fn field(&self, face: &Face) -> Result<&EnvelopeField> {
        self.fields.get(face).ok_or_else(|| Error::OffFace {
            face: face.indices().to_vec(),
        })
    }

    /// Value at an arbitrary measure: interpolation on the field of its face.
    pub fn value_at(&self, xi: &ProbabilityVector) -> Result<f64> {
        self.field(xi.face())?.query(xi)
    }

    pub fn modified_cost(&self, face: &Face) -> Result<ModifiedCost> {
        ModifiedCost::new(self.grid.clone(), face.clone(), self.cost.clone())
    }
}

/// Solves every face of the atom grid in increasing support order.
///
/// Faces of one atom get the cost value itself; each larger face is solved
/// with boundary data assembled from its sub-faces, so the Dirichlet
/// recursion holds by construction.
pub fn solve_recursive(
    grid: &AtomGrid,
    cost: &CostFunction,
    m: usize,
    method: EnvelopeMethod,
    tol: &Tolerances,
) -> Result<EnvelopeSolution> {
    if m < 2 {
        return Err(Error::Invalid {
            what: "grid resolution",
            reason: "solve_recursive needs m >= 2".into(),
        });
    }
    let n_atoms = grid.max_index() + 1;
    if n_atoms > 20 {
        return Err(Error::Invalid {
            what: "atom grid",
            reason: "face enumeration supports at most 20 atoms".into(),
        });
    }
    let mut faces: Vec<Face> = Vec::new();
    for mask in 1u32..(1u32 << n_atoms) {
        let indices: Vec<usize> = (0..n_atoms).filter(|i| mask & (1 << i) != 0).collect();
        faces.push(Face::new(indices)?);
    }
    faces.sort_by_key(|f| (f.order(), f.indices().to_vec()));

    let mut fields: BTreeMap<Face, EnvelopeField> = BTreeMap::new();
    for face in faces {
        let field = solve_face(grid, cost, &face, m, method, tol, &fields)?;
        fields.insert(face, field);
    }
    Ok(EnvelopeSolution {
        grid: grid.clone(),
        cost: cost.clone(),
        resolution: m,
        method,
        fields,
    })
}

fn solve_face(
    grid: &AtomGrid,
    cost: &CostFunction,
    face: &Face,
    m: usize,
    method: EnvelopeMethod,
    tol: &Tolerances,
    solved: &BTreeMap<Face, EnvelopeField>,
) -> Result<EnvelopeField> {
    let mc = ModifiedCost::new(grid.clone(), face.clone(), cost.clone())?;
    let k = face.order() - 1;
    if k == 0 {
        let bgrid = make_grid(0, m)?;
        let v = cost.eval(grid.atom(face.indices()[0]));
        return Ok(EnvelopeField::assemble(
            face.clone(),
            bgrid,
            vec![v],
            vec![v],
            method,
            SolveStats {
                sweeps: 0,
                residual: 0.0,
            },
            tol,
        ));
    }
    let bgrid = make_grid(k, m)?;
    let fbar: Vec<f64> = (0..bgrid.node_count())
        .map(|i| mc.eval_weights(&bgrid.node_weights(i)))
        .collect();
    match method {
        EnvelopeMethod::Hull => hull::envelope_hull(face.clone(), bgrid, &fbar, tol),
        EnvelopeMethod::Obstacle => {
            let boundary = assemble_boundary(face, &bgrid, solved)?;
            let dirs = DirectionSet::standard(face.order(), tol);
            obstacle::envelope_obstacle(face.clone(), bgrid, &fbar, &boundary, &dirs, tol, None)
        }
    }
}

/// Boundary values for a face: every boundary node restricts to a node of the
/// sub-face carrying its support, whose field is already solved.
pub fn assemble_boundary(
    face: &Face,
    bgrid: &BarycentricGrid,
    solved: &BTreeMap<Face, EnvelopeField>,
) -> Result<Vec<Option<f64>>> {
    let mut boundary = vec![None; bgrid.node_count()];
    for idx in 0..bgrid.node_count() {
        if !bgrid.is_boundary(idx) {
            continue;
        }
        let lattice = bgrid.lattice_node(idx);
        let mut sub_indices = Vec::new();
        let mut sub_lattice = Vec::new();
        for (pos, &j) in lattice.iter().enumerate() {
            if j > 0 {
                sub_indices.push(face.indices()[pos]);
                sub_lattice.push(j);
            }
        }
        let sub_face = Face::new(sub_indices)?;
        let sub_field = solved
            .get(&sub_face)
            .ok_or(Error::BoundaryIncomplete { node: idx })?;
        let value = sub_field.values()[sub_field.grid().rank(&sub_lattice)];
        boundary[idx] = Some(value);
    }
    Ok(boundary)
}

/// CSV export of one face: `node_coords…, fbar, value, contact` in grid order.
pub fn write_face_csv<W: IoWrite>(field: &EnvelopeField, out: &mut W) -> std::io::Result<()> {
    let order = field.grid().order();
    for i in 0..order {
        write!(out, "w{i},")?;
    }
    writeln!(out, "fbar,value,contact")?;
    for idx in 0..field.grid().node_count() {
        for w in field.grid().node_weights(idx) {
            write!(out, "{w},")?;
        }
        writeln!(
            out,
            "{},{},{}",
            field.fbar()[idx],
            field.values()[idx],
            u8::from(field.contact()[idx])
        )?;
    }
    Ok(())
}
