//! Design parameterization and structured-grid problem definition: mesh,
//! supports, loads, material constants, density filter, symmetry reduction
//! and volume accounting.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Displacement component of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dof {
    X,
    Y,
}

impl Dof {
    pub fn index(self) -> usize {
        match self {
            Dof::X => 0,
            Dof::Y => 1,
        }
    }
}

/// A fixed degree of freedom with its prescribed value.
#[derive(Debug, Clone, Copy)]
pub struct SupportSpec {
    pub node: usize,
    pub comp: Dof,
    pub value: f64,
}

impl SupportSpec {
    pub fn pin(node: usize) -> [Self; 2] {
        [
            Self { node, comp: Dof::X, value: 0.0 },
            Self { node, comp: Dof::Y, value: 0.0 },
        ]
    }

    pub fn roller_x(node: usize) -> Self {
        Self { node, comp: Dof::X, value: 0.0 }
    }

    pub fn roller_y(node: usize) -> Self {
        Self { node, comp: Dof::Y, value: 0.0 }
    }
}

/// A point load: `magnitude` applied to one displacement component.
#[derive(Debug, Clone, Copy)]
pub struct LoadSpec {
    pub node: usize,
    pub comp: Dof,
    pub magnitude: f64,
}

/// Interpolation constants of the material/energy parameterization.
#[derive(Debug, Clone, Copy)]
pub struct Interpolation {
    /// SIMP exponent for the finite-strain branch.
    pub p: f64,
    /// SIMP exponent for the small-strain branch (p_L > p).
    pub p_l: f64,
    /// Stiffness floor ε.
    pub eps: f64,
    /// Energy-weight sharpness β.
    pub beta: f64,
    /// Default energy-weight cutoff c₀.
    pub c0: f64,
    /// Cutoff increment Δc on analysis failure.
    pub delta_c: f64,
}

impl Default for Interpolation {
    fn default() -> Self {
        Self {
            p: 3.0,
            p_l: 6.0,
            eps: 1e-8,
            beta: 120.0,
            c0: 0.08,
            delta_c: 0.05,
        }
    }
}

/// Structured Q4 plane-strain problem definition. Immutable after
/// construction; safe to share read-only across workers.
#[derive(Debug, Clone)]
pub struct Model {
    /// Elements across / up.
    pub nx: usize,
    pub ny: usize,
    /// Square element edge length.
    pub elem_size: f64,
    /// Node coordinates, `2 * n_nodes` (x, y interleaved per node).
    pub coords: Vec<f64>,
    /// Element connectivity, counterclockwise, 4 node ids per element.
    pub conn: Vec<[usize; 4]>,
    /// Fixed DOFs (global dof index, prescribed value), sorted by index.
    pub fixed: Vec<(usize, f64)>,
    /// Reference load vector P̂ over all DOFs.
    pub load: DVector<f64>,
    /// Young's modulus of the solid material.
    pub youngs: f64,
    /// Poisson's ratio.
    pub poisson: f64,
    pub interp: Interpolation,
    /// Plane-strain thickness (volumes are areas × thickness).
    pub thickness: f64,
    /// node → adjacent element ids (ℬ_i sets).
    pub node_elems: Vec<Vec<usize>>,
    fixed_mask: Vec<bool>,
}

impl Model {
    pub fn n_nodes(&self) -> usize {
        self.coords.len() / 2
    }

    pub fn n_elems(&self) -> usize {
        self.conn.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.coords.len()
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed_mask[dof]
    }

    pub fn fixed_mask(&self) -> &[bool] {
        &self.fixed_mask
    }

    /// Grid node id from grid indices (iy varies fastest).
    pub fn node_id(&self, ix: usize, iy: usize) -> usize {
        ix * (self.ny + 1) + iy
    }

    /// Element id from grid indices (iy varies fastest).
    pub fn elem_id(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    pub fn elem_grid_pos(&self, e: usize) -> (usize, usize) {
        (e / self.ny, e % self.ny)
    }

    /// Element volume (area × thickness); uniform on the structured grid.
    pub fn elem_volume(&self, _e: usize) -> f64 {
        self.elem_size * self.elem_size * self.thickness
    }

    pub fn total_volume(&self) -> f64 {
        self.elem_volume(0) * self.n_elems() as f64
    }

    pub fn elem_centroid(&self, e: usize) -> (f64, f64) {
        let (ix, iy) = self.elem_grid_pos(e);
        (
            (ix as f64 + 0.5) * self.elem_size,
            (iy as f64 + 0.5) * self.elem_size,
        )
    }

    /// Corner coordinates of an element, counterclockwise.
    pub fn elem_coords(&self, e: usize) -> [[f64; 2]; 4] {
        let mut out = [[0.0; 2]; 4];
        for (a, &n) in self.conn[e].iter().enumerate() {
            out[a] = [self.coords[2 * n], self.coords[2 * n + 1]];
        }
        out
    }

    /// Global DOF indices of an element's 8 local DOFs.
    pub fn elem_dofs(&self, e: usize) -> [usize; 8] {
        let c = &self.conn[e];
        [
            2 * c[0],
            2 * c[0] + 1,
            2 * c[1],
            2 * c[1] + 1,
            2 * c[2],
            2 * c[2] + 1,
            2 * c[3],
            2 * c[3] + 1,
        ]
    }
}

impl Model {
    /// Builds a model from explicit mesh arrays (renumbered conforming
    /// submodels). `fixed` holds (dof, prescribed value) pairs.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        nx: usize,
        ny: usize,
        elem_size: f64,
        coords: Vec<f64>,
        conn: Vec<[usize; 4]>,
        mut fixed: Vec<(usize, f64)>,
        load: DVector<f64>,
        youngs: f64,
        poisson: f64,
        interp: Interpolation,
        thickness: f64,
    ) -> Self {
        let n_nodes = coords.len() / 2;
        let mut node_elems = vec![Vec::new(); n_nodes];
        for (e, c) in conn.iter().enumerate() {
            for &n in c {
                node_elems[n].push(e);
            }
        }
        let mut fixed_mask = vec![false; 2 * n_nodes];
        fixed.sort_by_key(|&(d, _)| d);
        fixed.dedup_by_key(|&mut (d, _)| d);
        for &(d, _) in &fixed {
            fixed_mask[d] = true;
        }
        Self {
            nx,
            ny,
            elem_size,
            coords,
            conn,
            fixed,
            load,
            youngs,
            poisson,
            interp,
            thickness,
            node_elems,
            fixed_mask,
        }
    }
}

/// Builds a structured `nx × ny` grid of square Q4 elements with the given
/// supports and point loads.
pub fn build_grid_mesh(
    nx: usize,
    ny: usize,
    elem_size: f64,
    supports: &[SupportSpec],
    loads: &[LoadSpec],
) -> Result<Model> {
    assert!(nx >= 1 && ny >= 1, "grid must have at least one element");
    assert!(elem_size > 0.0, "element size must be positive");
    let n_nodes = (nx + 1) * (ny + 1);
    let mut coords = Vec::with_capacity(2 * n_nodes);
    for ix in 0..=nx {
        for iy in 0..=ny {
            coords.push(ix as f64 * elem_size);
            coords.push(iy as f64 * elem_size);
        }
    }
    let node = |ix: usize, iy: usize| ix * (ny + 1) + iy;
    let mut conn = Vec::with_capacity(nx * ny);
    for ix in 0..nx {
        for iy in 0..ny {
            conn.push([
                node(ix, iy),
                node(ix + 1, iy),
                node(ix + 1, iy + 1),
                node(ix, iy + 1),
            ]);
        }
    }

    let mut node_elems = vec![Vec::new(); n_nodes];
    for (e, c) in conn.iter().enumerate() {
        for &n in c {
            node_elems[n].push(e);
        }
    }

    let mut fixed = Vec::new();
    let mut fixed_mask = vec![false; 2 * n_nodes];
    for s in supports {
        if s.node >= n_nodes {
            return Err(Error::NodeOutOfRange { node: s.node, count: n_nodes });
        }
        let dof = 2 * s.node + s.comp.index();
        if !fixed_mask[dof] {
            fixed_mask[dof] = true;
            fixed.push((dof, s.value));
        }
    }
    fixed.sort_by_key(|&(d, _)| d);

    let mut load = DVector::zeros(2 * n_nodes);
    for l in loads {
        if l.node >= n_nodes {
            return Err(Error::NodeOutOfRange { node: l.node, count: n_nodes });
        }
        load[2 * l.node + l.comp.index()] += l.magnitude;
    }

    Ok(Model {
        nx,
        ny,
        elem_size,
        coords,
        conn,
        fixed,
        load,
        youngs: 1.0,
        poisson: 0.3,
        interp: Interpolation::default(),
        thickness: 1.0,
        node_elems,
        fixed_mask,
    })
}

/// Sparse row-normalized density filter W (ρ = W x).
#[derive(Debug, Clone)]
pub struct FilterMatrix {
    n: usize,
    /// CSR-ish: per-row list of (column, weight).
    rows: Vec<Vec<(usize, f64)>>,
}

impl FilterMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// ρ = W x.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "filter dimension mismatch");
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * x[j]).sum())
            .collect()
    }

    /// g ← Wᵀ y (adjoint of `apply`).
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n, "filter dimension mismatch");
        let mut out = vec![0.0; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out[j] += w * y[i];
            }
        }
        out
    }
}

/// Builds the density filter of radius `r_min` from element centroid
/// distances: W_pq = w_pq v_q / Σ_q w_pq v_q, w_pq = max(r_min − ‖X_p − X_q‖, 0).
pub fn build_filter(model: &Model, r_min: f64) -> FilterMatrix {
    assert!(r_min > 0.0, "filter radius must be positive");
    let n = model.n_elems();
    let h = model.elem_size;
    // search window in element indices
    let reach = (r_min / h).ceil() as isize;
    let mut rows = Vec::with_capacity(n);
    for p in 0..n {
        let (pix, piy) = model.elem_grid_pos(p);
        let (cx, cy) = model.elem_centroid(p);
        let mut row = Vec::new();
        let mut total = 0.0;
        for dx in -reach..=reach {
            let qix = pix as isize + dx;
            if qix < 0 || qix >= model.nx as isize {
                continue;
            }
            for dy in -reach..=reach {
                let qiy = piy as isize + dy;
                if qiy < 0 || qiy >= model.ny as isize {
                    continue;
                }
                let q = model.elem_id(qix as usize, qiy as usize);
                let (qx, qy) = model.elem_centroid(q);
                let dist = ((cx - qx).powi(2) + (cy - qy).powi(2)).sqrt();
                let w = r_min - dist;
                if w > 0.0 {
                    let wv = w * model.elem_volume(q);
                    row.push((q, wv));
                    total += wv;
                }
            }
        }
        // self-weight is always positive, so total > 0
        for entry in &mut row {
            entry.1 /= total;
        }
        // deterministic order: self first, then ascending column
        row.sort_by_key(|&(j, _)| (j != p, j));
        rows.push(row);
    }
    FilterMatrix { n, rows }
}

/// ρ = W x (also used for increments Δρ = W Δx).
pub fn apply_filter(w: &FilterMatrix, x_full: &[f64]) -> Vec<f64> {
    w.apply(x_full)
}

/// Reflection symmetry of the design space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SymmetrySpec {
    #[default]
    None,
    /// Mirror about the vertical centerline.
    HalfX,
    /// Mirrors about both centerlines.
    Quarter,
    /// Quarter plus the diagonal; requires a square grid.
    Eighth,
}

impl std::fmt::Display for SymmetrySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SymmetrySpec::None => "none",
            SymmetrySpec::HalfX => "half-x",
            SymmetrySpec::Quarter => "quarter",
            SymmetrySpec::Eighth => "eighth",
        };
        f.write_str(s)
    }
}

/// Orbit map between the reduced design space and the full element set.
#[derive(Debug, Clone)]
pub struct SymmetryMap {
    pub spec: SymmetrySpec,
    /// For each element, the reduced index of its orbit.
    pub elem_to_reduced: Vec<usize>,
    /// For each reduced index, the member elements of the orbit.
    pub orbits: Vec<Vec<usize>>,
}

impl SymmetryMap {
    pub fn build(model: &Model, spec: SymmetrySpec) -> Result<Self> {
        if spec == SymmetrySpec::Eighth && model.nx != model.ny {
            return Err(Error::IncompatibleSymmetry {
                nx: model.nx,
                ny: model.ny,
                spec: spec.to_string(),
            });
        }
        let nx = model.nx;
        let ny = model.ny;
        let images = |ix: usize, iy: usize| -> Vec<(usize, usize)> {
            let mx = nx - 1 - ix;
            let my = ny - 1 - iy;
            match spec {
                SymmetrySpec::None => vec![(ix, iy)],
                SymmetrySpec::HalfX => vec![(ix, iy), (mx, iy)],
                SymmetrySpec::Quarter => vec![(ix, iy), (mx, iy), (ix, my), (mx, my)],
                SymmetrySpec::Eighth => vec![
                    (ix, iy),
                    (mx, iy),
                    (ix, my),
                    (mx, my),
                    (iy, ix),
                    (my, ix),
                    (iy, mx),
                    (my, mx),
                ],
            }
        };
        let n = model.n_elems();
        let mut elem_to_reduced = vec![usize::MAX; n];
        let mut orbits: Vec<Vec<usize>> = Vec::new();
        for e in 0..n {
            if elem_to_reduced[e] != usize::MAX {
                continue;
            }
            let (ix, iy) = model.elem_grid_pos(e);
            let mut members: Vec<usize> = images(ix, iy)
                .into_iter()
                .map(|(jx, jy)| model.elem_id(jx, jy))
                .collect();
            members.sort_unstable();
            members.dedup();
            let idx = orbits.len();
            for &m in &members {
                elem_to_reduced[m] = idx;
            }
            orbits.push(members);
        }
        Ok(Self { spec, elem_to_reduced, orbits })
    }

    pub fn n_reduced(&self) -> usize {
        self.orbits.len()
    }

    /// Expands a reduced design vector over all elements.
    pub fn expand(&self, x_reduced: &[f64]) -> Vec<f64> {
        assert_eq!(x_reduced.len(), self.orbits.len(), "reduced length mismatch");
        self.elem_to_reduced.iter().map(|&r| x_reduced[r]).collect()
    }

    /// Restriction: value of each orbit's representative (inverse of expand
    /// on symmetric fields).
    pub fn restrict(&self, x_full: &[f64]) -> Vec<f64> {
        self.orbits.iter().map(|orbit| x_full[orbit[0]]).collect()
    }

    /// Adjoint of `expand`: sums full-space gradient entries over each orbit.
    pub fn reduce_gradient(&self, g_full: &[f64]) -> Vec<f64> {
        self.orbits
            .iter()
            .map(|orbit| orbit.iter().map(|&e| g_full[e]).sum())
            .collect()
    }
}

/// Expands a reduced design vector for the given symmetry.
pub fn expand_symmetry(x_reduced: &[f64], spec: SymmetrySpec, model: &Model) -> Result<Vec<f64>> {
    Ok(SymmetryMap::build(model, spec)?.expand(x_reduced))
}

/// Design variables with their filter/symmetry chain.
#[derive(Debug, Clone)]
pub struct DesignField {
    /// Reduced design vector, entries in [0, 1].
    pub x: Vec<f64>,
    pub symmetry: SymmetryMap,
    pub filter: FilterMatrix,
    pub r_min: f64,
}

impl DesignField {
    /// Uniform initial design at the given value.
    pub fn uniform(model: &Model, value: f64, spec: SymmetrySpec, r_min: f64) -> Result<Self> {
        let symmetry = SymmetryMap::build(model, spec)?;
        let filter = if r_min > 0.0 {
            build_filter(model, r_min)
        } else {
            FilterMatrix::identity(model.n_elems())
        };
        Ok(Self {
            x: vec![value; symmetry.n_reduced()],
            symmetry,
            filter,
            r_min,
        })
    }

    /// Full-length design vector (symmetry expansion of x).
    pub fn expanded(&self) -> Vec<f64> {
        self.symmetry.expand(&self.x)
    }

    /// Filtered element densities ρ = W · expand(x).
    pub fn densities(&self) -> Vec<f64> {
        self.filter.apply(&self.expanded())
    }

    /// Chains a ∂/∂ρ gradient back to the reduced design space:
    /// orbit-sum(Wᵀ g).
    pub fn reduce_gradient(&self, g_rho: &[f64]) -> Vec<f64> {
        self.symmetry.reduce_gradient(&self.filter.apply_transpose(g_rho))
    }
}

/// Volume constraint value f₁ = ρᵀṽ/(V_s V_f) − 1.
pub fn volume_constraint(rho: &[f64], model: &Model, v_f: f64) -> f64 {
    assert!(v_f > 0.0 && v_f <= 1.0, "volume fraction must be in (0, 1]");
    let vol: f64 = rho
        .iter()
        .enumerate()
        .map(|(e, &r)| r * model.elem_volume(e))
        .sum();
    vol / (model.total_volume() * v_f) - 1.0
}

/// Gradient of [`volume_constraint`] w.r.t. ρ: ṽᵀ/(V_s V_f).
pub fn volume_constraint_gradient(model: &Model, v_f: f64) -> Vec<f64> {
    let denom = model.total_volume() * v_f;
    (0..model.n_elems())
        .map(|e| model.elem_volume(e) / denom)
        .collect()
}
