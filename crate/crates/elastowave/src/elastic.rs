//! Anisotropic elastic wave equation on mapped multiblock grids.
//!
//! Each block carries per-axis one-dimensional operators, a coordinate
//! mapping with its metric data, and a material field. The semi-discrete
//! system is G ü + B u̇ = −A u + f, where G is the diagonal mass (quadrature
//! weight × Jacobian × density, summed over blocks at shared nodes), A is
//! symmetric positive semidefinite, and B collects absorbing-boundary blocks.
//!
//! The stiffness action is assembled matrix-free in five sweeps per block:
//! reference-space derivatives of every displacement component, pointwise
//! physical gradient / strain / stress / flux, and the weighted adjoint
//! derivative sweep that folds the per-axis boundary terms back in. Blocks
//! are welded by summing mass and stiffness contributions at coincident
//! boundary nodes; no penalty terms are involved.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::geometry::{split_index, BlockGrid, MetricField, metrics, Mapping};
use crate::sbp::OperatorKind;
use crate::stiffness::{VoigtMatrix, VOIGT_2D, VOIGT_3D};
use crate::timestep::{
    lambda_max, stable_dt, Damping, LinearOp, SecondOrderSystem, Stepper,
};
use crate::{Error, Result};

/// Boundary treatment of one block face. A face that geometrically coincides
/// with another block's face should be declared `FreeSurface`: the natural
/// (traction) terms of both sides then sum into the welded-contact coupling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceBc {
    /// Traction-free boundary; the weak form needs no extra term.
    FreeSurface,
    /// Displacement clamped (or driven) on the face; face nodes leave the
    /// unknown set.
    Dirichlet,
    /// First-order absorbing boundary: traction = −Z u̇ with the local
    /// impedance matrix Z.
    NonReflecting,
}

/// Index of a face in a block's boundary-condition list.
pub fn face_index(axis: usize, side_max: bool) -> usize {
    2 * axis + side_max as usize
}

/// All faces traction-free.
pub fn all_free(dim: usize) -> Vec<FaceBc> {
    vec![FaceBc::FreeSurface; 2 * dim]
}

/// Per-node (or uniform) stiffness over a block.
#[derive(Clone, Debug)]
pub enum StiffnessField {
    Uniform(VoigtMatrix),
    PerNode { m: usize, entries: Vec<f64> },
}

impl StiffnessField {
    pub fn from_fn(grid: &BlockGrid, f: &dyn Fn(&[f64]) -> Result<VoigtMatrix>) -> Result<Self> {
        let dim = grid.dim();
        let m = dim * (dim + 1) / 2;
        let n = grid.n_nodes();
        let mut entries = vec![0.0; n * m * m];
        for node in 0..n {
            let c = f(grid.x_of(node))?;
            if c.dim() != dim {
                return Err(Error::Material(format!(
                    "stiffness at node {node} is {}-dimensional on a {dim}-dimensional grid",
                    c.dim()
                )));
            }
            entries[node * m * m..(node + 1) * m * m].copy_from_slice(c.entries());
        }
        Ok(StiffnessField::PerNode { m, entries })
    }

    fn dim(&self) -> usize {
        match self {
            StiffnessField::Uniform(c) => c.dim(),
            StiffnessField::PerNode { m, .. } => match m {
                3 => 2,
                6 => 3,
                _ => 0,
            },
        }
    }

    fn at(&self, node: usize) -> &[f64] {
        match self {
            StiffnessField::Uniform(c) => c.entries(),
            StiffnessField::PerNode { m, entries } => &entries[node * m * m..(node + 1) * m * m],
        }
    }

    /// Full-tensor component at one node.
    fn tensor_at(&self, node: usize, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let dim = self.dim();
        let table: &[(usize, usize)] = if dim == 3 { &VOIGT_3D } else { &VOIGT_2D };
        let idx = |a: usize, b: usize| {
            table
                .iter()
                .position(|&(p, q)| (p, q) == (a, b) || (q, p) == (a, b))
                .expect("valid pair")
        };
        let m = table.len();
        self.at(node)[idx(i, j) * m + idx(k, l)]
    }
}

/// One mapped block: grid, metric data, material, and face treatments.
pub struct ElasticBlock {
    pub grid: BlockGrid,
    pub metric: MetricField,
    pub rho: Vec<f64>,
    pub stiffness: StiffnessField,
    pub bcs: Vec<FaceBc>,
    /// Tensor-product quadrature weight per node (product of axis weights).
    hfull: Vec<f64>,
}

impl ElasticBlock {
    pub fn new(
        grid: BlockGrid,
        mapping: &Mapping,
        rho: Vec<f64>,
        stiffness: StiffnessField,
        bcs: Vec<FaceBc>,
    ) -> Result<Self> {
        let dim = grid.dim();
        if dim < 2 {
            return Err(Error::Assembly(
                "elastic blocks are 2- or 3-dimensional; use the scalar solver in one dimension"
                    .into(),
            ));
        }
        let n = grid.n_nodes();
        if rho.len() != n {
            return Err(Error::Assembly(format!(
                "density field has {} entries for {n} nodes",
                rho.len()
            )));
        }
        if rho.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::Assembly("density must be positive and finite".into()));
        }
        if stiffness.dim() != dim {
            return Err(Error::Assembly(format!(
                "stiffness is {}-dimensional on a {dim}-dimensional grid",
                stiffness.dim()
            )));
        }
        match &stiffness {
            StiffnessField::Uniform(c) => {
                if !(c.min_eigenvalue() > 0.0) {
                    return Err(Error::Material(
                        "uniform stiffness is not positive definite".into(),
                    ));
                }
            }
            StiffnessField::PerNode { m, entries } => {
                if entries.len() != n * m * m {
                    return Err(Error::Assembly(format!(
                        "per-node stiffness has {} entries for {n} nodes",
                        entries.len()
                    )));
                }
                for node in 0..n {
                    let c = VoigtMatrix::from_entries(dim, stiffness.at(node).to_vec())?;
                    if !(c.min_eigenvalue() > 0.0) {
                        return Err(Error::Material(format!(
                            "stiffness at node {node} is not positive definite"
                        )));
                    }
                }
            }
        }
        if bcs.len() != 2 * dim {
            return Err(Error::Assembly(format!(
                "expected {} face conditions, got {}",
                2 * dim,
                bcs.len()
            )));
        }
        let metric = metrics(mapping, &grid)?;
        let mut hfull = vec![1.0; n];
        let mut idx = [0usize; 3];
        for (flat, w) in hfull.iter_mut().enumerate() {
            split_index(flat, &grid.dims, &mut idx);
            for k in 0..dim {
                *w *= grid.triplets[k].h_weights[idx[k]];
            }
        }
        Ok(ElasticBlock {
            grid,
            metric,
            rho,
            stiffness,
            bcs,
            hfull,
        })
    }

    /// Uniform-material convenience constructor.
    pub fn uniform(
        grid: BlockGrid,
        mapping: &Mapping,
        rho: f64,
        stiffness: VoigtMatrix,
        bcs: Vec<FaceBc>,
    ) -> Result<Self> {
        let n = grid.n_nodes();
        ElasticBlock::new(
            grid,
            mapping,
            vec![rho; n],
            StiffnessField::Uniform(stiffness),
            bcs,
        )
    }

    fn is_boundary_node(&self, idx: &[usize; 3]) -> bool {
        (0..self.grid.dim()).any(|k| idx[k] == 0 || idx[k] + 1 == self.grid.dims[k])
    }
}

/// Iterate the grid lines of one axis: `f(base, stride, len)` once per line;
/// line nodes are `base + j·stride` for `j < len`.
fn for_each_line(dims: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let len = dims[axis];
    let stride: usize = dims[..axis].iter().product();
    let outer: usize = dims[axis + 1..].iter().product();
    for o in 0..outer {
        let o_base = o * stride * len;
        for i in 0..stride {
            f(o_base + i, stride, len);
        }
    }
}

const UNCONSTRAINED_NONE: u32 = u32::MAX;

/// Per-block work buffers. Each block owns its own line buffers so that
/// blocks can be processed on independent worker threads.
struct BlockScratch {
    u: Vec<f64>,
    y: Vec<f64>,
    grad: Vec<f64>,
    line_in: Vec<f64>,
    line_out: Vec<f64>,
}

/// Assembled multiblock operator with welded interfaces.
pub struct ElasticAssembly {
    dim: usize,
    blocks: Vec<ElasticBlock>,
    /// Per block, per node: index into the active node-class list, or
    /// `UNCONSTRAINED_NONE` for clamped nodes.
    active_of: Vec<Vec<u32>>,
    n_active: usize,
    /// Mass per active node class (shared by every displacement component).
    class_mass: Vec<f64>,
    /// Physical coordinates of one representative node per active class.
    class_x: Vec<f64>,
    /// Absorbing-boundary blocks: (active class, dim×dim row-major matrix).
    damping_blocks: Vec<(usize, Vec<f64>)>,
    /// Worker threads for the per-block stiffness sweeps. Results are merged
    /// serially in block order, so the output is bitwise independent of the
    /// worker count.
    workers: usize,
    scratch: RefCell<Vec<BlockScratch>>,
}

impl ElasticAssembly {
    pub fn new(blocks: Vec<ElasticBlock>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Assembly("no blocks".into()));
        }
        let dim = blocks[0].grid.dim();
        if blocks.iter().any(|b| b.grid.dim() != dim) {
            return Err(Error::Assembly("all blocks must share one dimension".into()));
        }

        // global node ids and union-find over coincident boundary nodes
        let offsets: Vec<usize> = blocks
            .iter()
            .scan(0usize, |acc, b| {
                let o = *acc;
                *acc += b.grid.n_nodes();
                Some(o)
            })
            .collect();
        let total: usize = blocks.iter().map(|b| b.grid.n_nodes()).sum();
        let mut parent: Vec<u32> = (0..total as u32).collect();
        fn find(parent: &mut [u32], mut a: u32) -> u32 {
            while parent[a as usize] != a {
                parent[a as usize] = parent[parent[a as usize] as usize];
                a = parent[a as usize];
            }
            a
        }
        fn union(parent: &mut [u32], a: u32, b: u32) {
            let (ra, rb) = (find(parent, a), find(parent, b));
            if ra != rb {
                // smaller root wins, keeping class order deterministic
                let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                parent[hi as usize] = lo;
            }
        }

        // coincidence detection: hash quantized coordinates of boundary nodes
        let mut bbox = [f64::INFINITY, f64::NEG_INFINITY];
        for b in &blocks {
            for &v in &b.grid.x_nodes {
                bbox[0] = bbox[0].min(v);
                bbox[1] = bbox[1].max(v);
            }
        }
        let tol = 1e-8 * (bbox[1] - bbox[0]).abs().max(1.0);
        let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        let mut idx = [0usize; 3];
        for (b, blk) in blocks.iter().enumerate() {
            for node in 0..blk.grid.n_nodes() {
                split_index(node, &blk.grid.dims, &mut idx);
                if !blk.is_boundary_node(&idx) {
                    continue;
                }
                let x = blk.grid.x_of(node);
                let gid = (offsets[b] + node) as u32;
                let mut key = [0i64; 3];
                for k in 0..dim {
                    key[k] = (x[k] / tol).round() as i64;
                }
                // search neighbouring cells for nodes within tolerance
                let mut probe = key;
                let span: &[i64] = &[-1, 0, 1];
                for &d0 in span {
                    probe[0] = key[0] + d0;
                    for &d1 in if dim >= 2 { span } else { &[0] } {
                        probe[1] = key[1] + d1;
                        for &d2 in if dim >= 3 { span } else { &[0] } {
                            probe[2] = key[2] + d2;
                            if let Some(list) = buckets.get(&probe) {
                                for &other in list {
                                    let (ob, on) = locate(&offsets, other as usize);
                                    let ox = blocks[ob].grid.x_of(on);
                                    let d2sum: f64 = (0..dim)
                                        .map(|k| (x[k] - ox[k]) * (x[k] - ox[k]))
                                        .sum();
                                    if d2sum.sqrt() <= tol {
                                        union(&mut parent, gid, other);
                                    }
                                }
                            }
                        }
                    }
                }
                buckets.entry(key).or_default().push(gid);
            }
        }

        // classes in deterministic first-seen order
        let mut class_of_gid = vec![u32::MAX; total];
        let mut members: Vec<Vec<u32>> = Vec::new();
        for gid in 0..total as u32 {
            let root = find(&mut parent, gid);
            if class_of_gid[root as usize] == u32::MAX {
                class_of_gid[root as usize] = members.len() as u32;
                members.push(Vec::new());
            }
            let class = class_of_gid[root as usize];
            class_of_gid[gid as usize] = class;
            members[class as usize].push(gid);
        }
        let n_classes = members.len();

        // clamped classes: any member on a Dirichlet face of its block
        let mut constrained = vec![false; n_classes];
        for (b, blk) in blocks.iter().enumerate() {
            for axis in 0..dim {
                for side_max in [false, true] {
                    if blk.bcs[face_index(axis, side_max)] != FaceBc::Dirichlet {
                        continue;
                    }
                    let end = if side_max { blk.grid.dims[axis] - 1 } else { 0 };
                    for node in 0..blk.grid.n_nodes() {
                        split_index(node, &blk.grid.dims, &mut idx);
                        if idx[axis] == end {
                            constrained[class_of_gid[offsets[b] + node] as usize] = true;
                        }
                    }
                }
            }
        }

        // active classes, their masses and representative coordinates
        let mut active_of_class = vec![UNCONSTRAINED_NONE; n_classes];
        let mut n_active = 0usize;
        for (class, c) in constrained.iter().enumerate() {
            if !c {
                active_of_class[class] = n_active as u32;
                n_active += 1;
            }
        }
        if n_active == 0 {
            return Err(Error::Assembly("every node is clamped".into()));
        }
        let mut class_mass = vec![0.0; n_active];
        let mut class_x = vec![0.0; n_active * dim];
        for (class, mem) in members.iter().enumerate() {
            let act = active_of_class[class];
            if act == UNCONSTRAINED_NONE {
                continue;
            }
            let rep = mem[0] as usize;
            let (rb, rn) = locate(&offsets, rep);
            class_x[act as usize * dim..(act as usize + 1) * dim]
                .copy_from_slice(blocks[rb].grid.x_of(rn));
            for &gid in mem {
                let (b, node) = locate(&offsets, gid as usize);
                let blk = &blocks[b];
                class_mass[act as usize] += blk.hfull[node] * blk.metric.j[node] * blk.rho[node];
            }
        }

        let active_of: Vec<Vec<u32>> = blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| {
                (0..blk.grid.n_nodes())
                    .map(|node| active_of_class[class_of_gid[offsets[b] + node] as usize])
                    .collect()
            })
            .collect();

        // absorbing boundaries: per face node, Z = (ρ ν·C·ν)^{1/2} scaled by
        // the face quadrature weight, Jacobian, and metric row norm
        let mut damping_acc: HashMap<usize, Vec<f64>> = HashMap::new();
        for (b, blk) in blocks.iter().enumerate() {
            for axis in 0..dim {
                for side_max in [false, true] {
                    if blk.bcs[face_index(axis, side_max)] != FaceBc::NonReflecting {
                        continue;
                    }
                    let end = if side_max { blk.grid.dims[axis] - 1 } else { 0 };
                    let h_end = blk.grid.triplets[axis].h_weights[end];
                    for node in 0..blk.grid.n_nodes() {
                        split_index(node, &blk.grid.dims, &mut idx);
                        if idx[axis] != end {
                            continue;
                        }
                        let act = active_of[b][node];
                        if act == UNCONSTRAINED_NONE {
                            continue;
                        }
                        let mut nu = [0.0; 3];
                        blk.metric.outward_normal(node, axis, side_max, &mut nu[..dim]);
                        let mut m = DMatrix::<f64>::zeros(dim, dim);
                        for c in 0..dim {
                            for a in 0..dim {
                                let mut acc = 0.0;
                                for j in 0..dim {
                                    for bb in 0..dim {
                                        acc += nu[j]
                                            * nu[bb]
                                            * blk.stiffness.tensor_at(node, c, j, a, bb);
                                    }
                                }
                                m[(c, a)] = blk.rho[node] * acc;
                            }
                        }
                        let eig = m.clone().symmetric_eigen();
                        let trace: f64 = (0..dim).map(|i| m[(i, i)]).sum();
                        let mut z = DMatrix::<f64>::zeros(dim, dim);
                        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
                            if lam < 1e-12 * trace {
                                return Err(Error::Assembly(format!(
                                    "absorbing face (axis {axis}, {} side) has a degenerate \
                                     impedance at node {node} (eigenvalue {lam:.3e})",
                                    if side_max { "max" } else { "min" }
                                )));
                            }
                            let v = eig.eigenvectors.column(i);
                            let s = lam.sqrt();
                            for r in 0..dim {
                                for c in 0..dim {
                                    z[(r, c)] += s * v[r] * v[c];
                                }
                            }
                        }
                        let hperp = blk.hfull[node] / h_end;
                        let scale = hperp
                            * blk.metric.j[node]
                            * blk.metric.row_norm[node * dim + axis];
                        let entry = damping_acc
                            .entry(act as usize)
                            .or_insert_with(|| vec![0.0; dim * dim]);
                        for r in 0..dim {
                            for c in 0..dim {
                                entry[r * dim + c] += scale * z[(r, c)];
                            }
                        }
                    }
                }
            }
        }
        let mut damping_blocks: Vec<(usize, Vec<f64>)> = damping_acc.into_iter().collect();
        damping_blocks.sort_by_key(|(a, _)| *a);

        let scratch = RefCell::new(
            blocks
                .iter()
                .map(|blk| {
                    let n = blk.grid.n_nodes();
                    let max_len = blk.grid.dims.iter().copied().max().unwrap();
                    BlockScratch {
                        u: vec![0.0; dim * n],
                        y: vec![0.0; dim * n],
                        grad: vec![0.0; dim * dim * n],
                        line_in: vec![0.0; max_len],
                        line_out: vec![0.0; max_len],
                    }
                })
                .collect(),
        );

        Ok(ElasticAssembly {
            dim,
            blocks,
            active_of,
            n_active,
            class_mass,
            class_x,
            damping_blocks,
            workers: crate::requested_threads()?,
            scratch,
        })
    }

    /// Override the worker-thread count (normally taken from the
    /// `ELASTOWAVE_THREADS` environment variable at construction). Values are
    /// clamped to at least one; the numerical results are identical for every
    /// count.
    pub fn set_workers(&mut self, workers: usize) {
        self.workers = workers.max(1);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[ElasticBlock] {
        &self.blocks
    }

    /// Number of active (unclamped) node classes.
    pub fn n_active(&self) -> usize {
        self.n_active
    }

    /// Degree-of-freedom index of one displacement component at a node, or
    /// `None` if the node is clamped. Component `c` of active node `a` lives
    /// at `a + c·n_active`.
    pub fn dof_of(&self, block: usize, node: usize, component: usize) -> Option<usize> {
        let a = self.active_of[block][node];
        (a != UNCONSTRAINED_NONE).then(|| a as usize + component * self.n_active)
    }

    /// Physical coordinates of an active node class.
    pub fn active_position(&self, active: usize) -> &[f64] {
        &self.class_x[active * self.dim..(active + 1) * self.dim]
    }

    /// Diagonal mass for the full component-major state vector.
    pub fn mass_diag(&self) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.n_active * self.dim);
        for _ in 0..self.dim {
            g.extend_from_slice(&self.class_mass);
        }
        g
    }

    /// Damping description for the time integrator.
    pub fn damping(&self) -> Damping {
        if self.damping_blocks.is_empty() {
            Damping::None
        } else {
            Damping::NodeBlocks {
                dim: self.dim,
                stride: self.n_active,
                blocks: self.damping_blocks.clone(),
            }
        }
    }

    /// Nearest grid node (over all blocks) to a physical point.
    pub fn nearest_node(&self, x: &[f64]) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::INFINITY);
        for (b, blk) in self.blocks.iter().enumerate() {
            for node in 0..blk.grid.n_nodes() {
                let p = blk.grid.x_of(node);
                let d: f64 = (0..self.dim)
                    .map(|k| (p[k] - x[k]) * (p[k] - x[k]))
                    .sum::<f64>()
                    .sqrt();
                if d < best.2 {
                    best = (b, node, d);
                }
            }
        }
        best
    }

    /// Nearest active node class to a physical point.
    pub fn nearest_active(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for a in 0..self.n_active {
            let p = self.active_position(a);
            let d: f64 = (0..self.dim)
                .map(|k| (p[k] - x[k]) * (p[k] - x[k]))
                .sum::<f64>()
                .sqrt();
            if d < best.1 {
                best = (a, d);
            }
        }
        best
    }

    /// Nodal interpolant of `f(x, component)` on the active classes.
    pub fn project_nodal(&self, f: &dyn Fn(&[f64], usize) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_active * self.dim];
        for a in 0..self.n_active {
            let x = &self.class_x[a * self.dim..(a + 1) * self.dim];
            for c in 0..self.dim {
                out[a + c * self.n_active] = f(x, c);
            }
        }
        out
    }

    /// Quadrature-weighted body-force functional: out[dof] += Σ H·J·f(x, c)
    /// over the block copies of each node (no density factor).
    pub fn weighted_forcing_into(&self, f: &dyn Fn(&[f64], usize) -> f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.n_active * self.dim);
        for (b, blk) in self.blocks.iter().enumerate() {
            for node in 0..blk.grid.n_nodes() {
                let a = self.active_of[b][node];
                if a == UNCONSTRAINED_NONE {
                    continue;
                }
                let w = blk.hfull[node] * blk.metric.j[node];
                let x = blk.grid.x_of(node);
                for c in 0..self.dim {
                    out[a as usize + c * self.n_active] += w * f(x, c);
                }
            }
        }
    }

    /// Forcing contribution of inhomogeneous Dirichlet data: the stiffness
    /// action of the boundary extension, restricted to the active set and
    /// added to `out` (the data enters the right-hand side with a plus sign).
    pub fn dirichlet_lift_into(&self, data: &dyn Fn(&[f64], usize) -> f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.n_active * self.dim);
        let mut guard = self.scratch.borrow_mut();
        let bscr: &mut Vec<BlockScratch> = &mut guard;
        for (b, blk) in self.blocks.iter().enumerate() {
            let n = blk.grid.n_nodes();
            let bs = &mut bscr[b];
            bs.u[..self.dim * n].fill(0.0);
            for node in 0..n {
                if self.active_of[b][node] == UNCONSTRAINED_NONE {
                    let x = blk.grid.x_of(node);
                    for c in 0..self.dim {
                        bs.u[c * n + node] = data(x, c);
                    }
                }
            }
            apply_e_block(blk, bs);
            for node in 0..n {
                let a = self.active_of[b][node];
                if a == UNCONSTRAINED_NONE {
                    continue;
                }
                for c in 0..self.dim {
                    out[a as usize + c * self.n_active] += bs.y[c * n + node];
                }
            }
        }
    }

    /// y = A x with A = −(assembled stiffness), symmetric positive
    /// semidefinite. Blocks are swept in parallel when more than one worker
    /// is configured; the gather into shared node classes stays serial and
    /// ordered, so the result does not depend on the worker count.
    fn apply_a(&self, x: &[f64], y: &mut [f64]) {
        let mut guard = self.scratch.borrow_mut();
        let bscr: &mut Vec<BlockScratch> = &mut guard;
        let dim = self.dim;
        let n_active = self.n_active;
        let active_of = &self.active_of;

        let sweep = move |b: usize, blk: &ElasticBlock, bs: &mut BlockScratch| {
            let n = blk.grid.n_nodes();
            let act = &active_of[b];
            for c in 0..dim {
                let u_c = &mut bs.u[c * n..(c + 1) * n];
                let x_c = &x[c * n_active..(c + 1) * n_active];
                for (node, slot) in u_c.iter_mut().enumerate() {
                    let a = act[node];
                    *slot = if a == UNCONSTRAINED_NONE {
                        0.0
                    } else {
                        x_c[a as usize]
                    };
                }
            }
            apply_e_block(blk, bs);
        };

        let workers = self.workers.min(self.blocks.len());
        if workers <= 1 {
            for (b, (blk, bs)) in self.blocks.iter().zip(bscr.iter_mut()).enumerate() {
                sweep(b, blk, bs);
            }
        } else {
            let mut work: Vec<(usize, &ElasticBlock, &mut BlockScratch)> = self
                .blocks
                .iter()
                .zip(bscr.iter_mut())
                .enumerate()
                .map(|(b, (blk, bs))| (b, blk, bs))
                .collect();
            let chunk = work.len().div_ceil(workers);
            let sweep = &sweep;
            std::thread::scope(|scope| {
                for piece in work.chunks_mut(chunk) {
                    scope.spawn(move || {
                        for (b, blk, bs) in piece.iter_mut() {
                            sweep(*b, blk, bs);
                        }
                    });
                }
            });
        }

        y.fill(0.0);
        for (b, blk) in self.blocks.iter().enumerate() {
            let n = blk.grid.n_nodes();
            let act = &self.active_of[b];
            for c in 0..dim {
                let y_c = &mut y[c * n_active..(c + 1) * n_active];
                let e_c = &bscr[b].y[c * n..(c + 1) * n];
                for (node, &v) in e_c.iter().enumerate() {
                    let a = act[node];
                    if a != UNCONSTRAINED_NONE {
                        y_c[a as usize] -= v;
                    }
                }
            }
        }
    }

    /// Sparse pattern of a point force along one component at the node
    /// nearest to `x`: the discrete delta functional (weight 1 at the node).
    pub fn point_force_pattern(
        &self,
        x: &[f64],
        component: usize,
    ) -> Result<(Vec<(usize, f64)>, f64)> {
        if component >= self.dim {
            return Err(Error::Assembly(format!(
                "component {component} out of range for dimension {}",
                self.dim
            )));
        }
        let (b, node, dist) = self.nearest_node(x);
        match self.dof_of(b, node, component) {
            Some(dof) => Ok((vec![(dof, 1.0)], dist)),
            None => Err(Error::Assembly(
                "point force lands on a clamped node".into(),
            )),
        }
    }

    /// Sparse pattern of an isotropic explosion (moment) source at the node
    /// nearest to `x`: the discrete divergence functional v ↦ (∇·v)(x_s),
    /// built from the rows of the per-axis derivative operators.
    pub fn explosion_pattern(&self, x: &[f64]) -> Result<(Vec<(usize, f64)>, f64)> {
        let (b, node, dist) = self.nearest_node(x);
        let blk = &self.blocks[b];
        let dim = self.dim;
        let mut idx = [0usize; 3];
        split_index(node, &blk.grid.dims, &mut idx);
        let t = blk.metric.t_at(node);
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for k in 0..dim {
            let (start, coeffs) = blk.grid.triplets[k].d_plus.row(idx[k]);
            let stride: usize = blk.grid.dims[..k].iter().product();
            let line_base = node - idx[k] * stride;
            for (j, &w) in coeffs.iter().enumerate() {
                let target = line_base + (start + j) * stride;
                for c in 0..dim {
                    let coeff = t[k * dim + c] * w;
                    if coeff == 0.0 {
                        continue;
                    }
                    if let Some(dof) = self.dof_of(b, target, c) {
                        *acc.entry(dof).or_insert(0.0) += coeff;
                    }
                }
            }
        }
        let mut pattern: Vec<(usize, f64)> = acc.into_iter().collect();
        pattern.sort_by_key(|(dof, _)| *dof);
        Ok((pattern, dist))
    }
}

impl LinearOp for ElasticAssembly {
    fn dof(&self) -> usize {
        self.n_active * self.dim
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.apply_a(x, y)
    }
}

/// Assemble a classical spectral-element discretization: every block is one
/// Gauss–Lobatto cell, and welding coincident face nodes produces the usual
/// continuous-Galerkin stitching with lumped (diagonal) mass. Cells must use
/// Gauss–Lobatto operators on every axis; for a single cell this is exactly
/// the plain one-block collocation operator.
pub fn sem_assembly(cells: Vec<ElasticBlock>) -> Result<ElasticAssembly> {
    for (i, cell) in cells.iter().enumerate() {
        for (k, trip) in cell.grid.triplets.iter().enumerate() {
            if trip.kind != OperatorKind::GaussLobatto {
                return Err(Error::Assembly(format!(
                    "spectral-element cell {i} uses {:?} operators on axis {k}; every axis \
                     must be Gauss-Lobatto",
                    trip.kind
                )));
            }
        }
    }
    ElasticAssembly::new(cells)
}

fn locate(offsets: &[usize], gid: usize) -> (usize, usize) {
    let b = offsets.partition_point(|&o| o <= gid) - 1;
    (b, gid - offsets[b])
}

/// Stiffness action of one block: bs.y = E bs.u (component-major fields).
fn apply_e_block(blk: &ElasticBlock, bs: &mut BlockScratch) {
    let BlockScratch {
        u,
        y,
        grad,
        line_in,
        line_out,
    } = bs;
    let d = blk.grid.dim();
    let n = blk.grid.n_nodes();
    y[..d * n].fill(0.0);

    // reference-space derivatives of every component along every axis
    for k in 0..d {
        let trip = &blk.grid.triplets[k];
        for_each_line(&blk.grid.dims, k, |base, stride, len| {
            for c in 0..d {
                for j in 0..len {
                    line_in[j] = u[c * n + base + j * stride];
                }
                trip.apply_d_plus(&line_in[..len], &mut line_out[..len]);
                for j in 0..len {
                    grad[(c * d + k) * n + base + j * stride] = line_out[j];
                }
            }
        });
    }

    // pointwise: gradient → strain → stress → per-axis flux (in place)
    match d {
        2 => pointwise::<2, 3>(n, grad, blk),
        3 => pointwise::<3, 6>(n, grad, blk),
        _ => unreachable!("block dimension validated at construction"),
    }

    // weighted adjoint sweep: y += H·D⁻(flux) plus the per-axis end terms
    for k in 0..d {
        let trip = &blk.grid.triplets[k];
        let h = &trip.h_weights;
        for_each_line(&blk.grid.dims, k, |base, stride, len| {
            for c in 0..d {
                for j in 0..len {
                    line_in[j] = grad[(c * d + k) * n + base + j * stride];
                }
                trip.apply_d_minus(&line_in[..len], &mut line_out[..len]);
                for j in 0..len {
                    let node = base + j * stride;
                    y[c * n + node] += blk.hfull[node] * line_out[j];
                }
                let first = base;
                let last = base + (len - 1) * stride;
                y[c * n + first] += blk.hfull[first] / h[0] * line_in[0];
                y[c * n + last] -= blk.hfull[last] / h[len - 1] * line_in[len - 1];
            }
        });
    }
}

/// Node-local map from reference gradients to weighted fluxes, in place in
/// `grad`: entry (c,k) goes from ∂u_c/∂ξ_k to J·T_kj·σ_cj.
fn pointwise<const D: usize, const M: usize>(n: usize, grad: &mut [f64], blk: &ElasticBlock) {
    let pairs: &[(usize, usize)] = if D == 3 { &VOIGT_3D } else { &VOIGT_2D };
    let t_all = &blk.metric.t;
    let j_all = &blk.metric.j;
    for node in 0..n {
        let t = &t_all[node * D * D..(node + 1) * D * D];
        let jdet = j_all[node];
        let cmat = blk.stiffness.at(node);

        let mut gh = [[0.0; D]; D]; // gh[c][k] = ∂u_c/∂ξ_k
        for c in 0..D {
            for k in 0..D {
                gh[c][k] = grad[(c * D + k) * n + node];
            }
        }
        // physical gradient gp[c][i] = Σ_k T_ki ∂u_c/∂ξ_k
        let mut gp = [[0.0; D]; D];
        for c in 0..D {
            for i in 0..D {
                let mut a = 0.0;
                for k in 0..D {
                    a += t[k * D + i] * gh[c][k];
                }
                gp[c][i] = a;
            }
        }
        // engineering strain and stress in component-pair order
        let mut eps = [0.0; M];
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            eps[idx] = if i == j {
                gp[i][i]
            } else {
                gp[i][j] + gp[j][i]
            };
        }
        let mut sig = [0.0; M];
        for r in 0..M {
            let mut a = 0.0;
            for s in 0..M {
                a += cmat[r * M + s] * eps[s];
            }
            sig[r] = a;
        }
        let mut sm = [[0.0; D]; D];
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            sm[i][j] = sig[idx];
            sm[j][i] = sig[idx];
        }
        // weighted flux F[c][k] = J Σ_j T_kj σ_cj
        for c in 0..D {
            for k in 0..D {
                let mut a = 0.0;
                for j in 0..D {
                    a += t[k * D + j] * sm[c][j];
                }
                grad[(c * D + k) * n + node] = jdet * a;
            }
        }
    }
}

/// Time signature of a point source: a delayed Ricker wavelet.
#[derive(Clone, Copy, Debug)]
pub struct TimeSignal {
    pub amplitude: f64,
    pub nu0: f64,
    pub delay: f64,
}

impl TimeSignal {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * crate::wavelet::ricker(self.nu0, t - self.delay)
    }

    /// Unit-amplitude wavelet with the standard onset delay.
    pub fn standard(nu0: f64) -> Self {
        TimeSignal {
            amplitude: 1.0,
            nu0,
            delay: crate::wavelet::onset_delay(nu0),
        }
    }
}

/// A point source: spatial pattern (sparse functional over the active
/// degrees of freedom) times a scalar time signal.
pub struct SourceTerm {
    pub pattern: Vec<(usize, f64)>,
    pub signal: TimeSignal,
    /// Distance from the requested position to the node the source snapped
    /// to.
    pub snap_distance: f64,
}

impl ElasticAssembly {
    /// Point force along one displacement component.
    pub fn point_force(&self, x: &[f64], component: usize, signal: TimeSignal) -> Result<SourceTerm> {
        let (pattern, snap_distance) = self.point_force_pattern(x, component)?;
        Ok(SourceTerm {
            pattern,
            signal,
            snap_distance,
        })
    }

    /// Isotropic explosion (equal on-diagonal moment components).
    pub fn explosion(&self, x: &[f64], signal: TimeSignal) -> Result<SourceTerm> {
        let (pattern, snap_distance) = self.explosion_pattern(x)?;
        Ok(SourceTerm {
            pattern,
            signal,
            snap_distance,
        })
    }
}

/// Options for a time-domain run.
pub struct RunOptions {
    pub t_end: f64,
    /// Fixed time step; `None` derives one from the spectral bound.
    pub tau: Option<f64>,
    /// Explicit step count; `None` derives it from `t_end / tau`, rounding
    /// up except when the quotient is within 1e-9 of an integer (so nominal
    /// multiples are not pushed one step past the end time by round-off).
    pub n_steps: Option<usize>,
    /// Safety margin ε in τ = 2/√((1+ε)λ).
    pub cfl_margin: f64,
    /// Relative tolerance of the spectral bound iteration.
    pub lambda_rel_tol: f64,
    /// Physical receiver positions; each snaps to the nearest active node.
    pub receivers: Vec<Vec<f64>>,
    /// Record the discrete energy every this many steps (0 = never).
    pub energy_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            t_end: 0.0,
            tau: None,
            n_steps: None,
            cfl_margin: 0.05,
            lambda_rel_tol: 1e-3,
            receivers: Vec::new(),
            energy_every: 0,
        }
    }
}

/// Number of steps covering `t_end` at step `tau`: ceil with protection
/// against quotients that land a hair above an integer.
fn step_count(t_end: f64, tau: f64) -> usize {
    let q = t_end / tau;
    let r = q.round();
    if r >= 1.0 && (q - r).abs() <= 1e-9 * q.max(1.0) {
        r as usize
    } else {
        q.ceil() as usize
    }
}

/// One recorded receiver: where it landed and its samples (time-level major,
/// `dim` components per level, including the initial rest state).
pub struct ReceiverTrace {
    pub active: usize,
    pub position: Vec<f64>,
    pub requested: Vec<f64>,
    pub distance: f64,
    pub samples: Vec<f64>,
}

/// Result of a time-domain run.
pub struct RunOutput {
    pub tau: f64,
    pub lambda: f64,
    pub n_steps: usize,
    pub receivers: Vec<ReceiverTrace>,
    /// (time, discrete energy) samples.
    pub energy: Vec<(f64, f64)>,
    pub final_state: Vec<f64>,
    pub wall_seconds: f64,
}

impl ElasticAssembly {
    /// March the assembled system from rest under the given sources.
    /// `on_step` (if provided) sees every accepted state: (step index, time,
    /// component-major state vector).
    pub fn run(
        &self,
        sources: &[SourceTerm],
        opts: &RunOptions,
        on_step: Option<&mut dyn FnMut(usize, f64, &[f64])>,
    ) -> Result<RunOutput> {
        self.run_with_boundary(sources, None, opts, on_step)
    }

    /// Like [`run`](Self::run), but with time-dependent Dirichlet data
    /// `boundary(t, x, component)` imposed on the clamped nodes. The data is
    /// evaluated at the current level `t = k·τ` when stepping from level `k`
    /// to `k+1`, the same convention as the source signals.
    pub fn run_with_boundary(
        &self,
        sources: &[SourceTerm],
        boundary: Option<&dyn Fn(f64, &[f64], usize) -> f64>,
        opts: &RunOptions,
        mut on_step: Option<&mut dyn FnMut(usize, f64, &[f64])>,
    ) -> Result<RunOutput> {
        if !(opts.t_end > 0.0) {
            return Err(Error::Assembly(format!(
                "run needs a positive end time, got {}",
                opts.t_end
            )));
        }
        let start = std::time::Instant::now();
        let sys = SecondOrderSystem::new(self.mass_diag(), self.damping(), self)?;
        let lambda = lambda_max(&sys, opts.lambda_rel_tol)?;
        let tau = match opts.tau {
            Some(t) => t,
            None => stable_dt(lambda, opts.cfl_margin)?,
        };
        let n_steps = match opts.n_steps {
            Some(n) if n > 0 => n,
            Some(_) => {
                return Err(Error::Assembly("explicit step count must be positive".into()))
            }
            None => step_count(opts.t_end, tau),
        };
        let mut stepper = Stepper::new(&sys, tau)?;

        let mut receivers: Vec<ReceiverTrace> = opts
            .receivers
            .iter()
            .map(|x| {
                let (active, distance) = self.nearest_active(x);
                ReceiverTrace {
                    active,
                    position: self.active_position(active).to_vec(),
                    requested: x.clone(),
                    distance,
                    samples: Vec::with_capacity((n_steps + 1) * self.dim),
                }
            })
            .collect();
        let sample = |state: &[f64], rec: &mut ReceiverTrace| {
            for c in 0..self.dim {
                rec.samples.push(state[rec.active + c * self.n_active]);
            }
        };
        for rec in receivers.iter_mut() {
            sample(&stepper.u_curr, rec);
        }
        let mut energy = Vec::new();
        if opts.energy_every > 0 {
            energy.push((0.0, stepper.energy()));
        }
        if let Some(cb) = on_step.as_deref_mut() {
            cb(0, 0.0, &stepper.u_curr);
        }

        let mut forcing = vec![0.0; self.dof()];
        for k in 0..n_steps {
            let t = k as f64 * tau;
            forcing.fill(0.0);
            for s in sources {
                let g = s.signal.eval(t);
                if g != 0.0 {
                    for &(dof, w) in &s.pattern {
                        forcing[dof] += g * w;
                    }
                }
            }
            if let Some(data) = boundary {
                self.dirichlet_lift_into(&|x, c| data(t, x, c), &mut forcing);
            }
            stepper.step(&forcing)?;
            for rec in receivers.iter_mut() {
                sample(&stepper.u_curr, rec);
            }
            if opts.energy_every > 0 && (k + 1) % opts.energy_every == 0 {
                energy.push(((k + 1) as f64 * tau, stepper.energy()));
            }
            if let Some(cb) = on_step.as_deref_mut() {
                cb(k + 1, (k + 1) as f64 * tau, &stepper.u_curr);
            }
        }

        Ok(RunOutput {
            tau,
            lambda,
            n_steps,
            receivers,
            energy,
            final_state: stepper.u_curr.clone(),
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Mapping, SplitMix64};
    use crate::sbp::{build_gll, build_shifted_uniform};
    use crate::stiffness::{isotropic_stiffness, tti_stiffness};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gll_block(
        dims: &[usize],
        mapping: &Mapping,
        rho: f64,
        vp: f64,
        vs: f64,
        bcs: Vec<FaceBc>,
    ) -> ElasticBlock {
        let trips = dims
            .iter()
            .map(|&n| build_gll(n).unwrap().scaled_to(0.0, 1.0).unwrap())
            .collect();
        let grid = BlockGrid::new(trips, mapping).unwrap();
        let c = isotropic_stiffness(dims.len(), vp, vs, rho).unwrap();
        ElasticBlock::uniform(grid, mapping, rho, c, bcs).unwrap()
    }

    fn dense(asm: &ElasticAssembly) -> DMatrix<f64> {
        crate::verify::materialize(asm).expect("test assemblies stay below the size cap")
    }

    fn check_symmetric_psd(a: &DMatrix<f64>, label: &str) {
        let scale = a.amax().max(1e-300);
        for i in 0..a.nrows() {
            for j in 0..i {
                assert!(
                    (a[(i, j)] - a[(j, i)]).abs() <= 1e-12 * scale,
                    "{label}: asymmetry at ({i},{j}): {} vs {}",
                    a[(i, j)],
                    a[(j, i)]
                );
            }
        }
        let eigs = a.clone().symmetric_eigen().eigenvalues;
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            min >= -1e-10 * scale,
            "{label}: negative eigenvalue {min:.3e} (scale {scale:.3e})"
        );
    }

    #[test]
    fn translations_and_rotations_are_annihilated() {
        // sheared 2D block and scaled 3D block, all faces free
        let map2 = Mapping::shear_2d(0.4).unwrap();
        let blk2 = gll_block(&[6, 7], &map2, 1.3, 2.0, 1.1, all_free(2));
        let asm2 = ElasticAssembly::new(vec![blk2]).unwrap();
        let map3 = Mapping::scaling(3, &[2.0, 0.7, 1.4]).unwrap();
        let blk3 = gll_block(&[5, 4, 5], &map3, 0.8, 2.4, 1.2, all_free(3));
        let asm3 = ElasticAssembly::new(vec![blk3]).unwrap();

        for (asm, dim) in [(&asm2, 2usize), (&asm3, 3usize)] {
            let n = asm.dof();
            let mut y = vec![0.0; n];
            // translations
            for c in 0..dim {
                let x = asm.project_nodal(&|_, cc| if cc == c { 1.0 } else { 0.0 });
                asm.apply_a(&x, &mut y);
                let peak = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                assert!(peak < 1e-10, "translation {c} not annihilated: {peak:.3e}");
            }
            // infinitesimal rigid rotations: u = W x with W antisymmetric
            for a in 0..dim {
                for b in a + 1..dim {
                    let x = asm.project_nodal(&|p, cc| {
                        if cc == a {
                            p[b]
                        } else if cc == b {
                            -p[a]
                        } else {
                            0.0
                        }
                    });
                    asm.apply_a(&x, &mut y);
                    let peak = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    assert!(
                        peak < 1e-9,
                        "rotation ({a},{b}) not annihilated: {peak:.3e}"
                    );
                }
            }
        }
    }

    #[test]
    fn linear_fields_load_only_the_boundary() {
        // affine map, uniform material: a linear displacement has constant
        // stress, so the interior rows of the stiffness action vanish and
        // boundary rows carry exactly the per-axis end terms
        let map = Mapping::affine(2, [[1.2, 0.3, 0.0], [-0.2, 0.9, 0.0], [0.0; 3]], [0.5, -1.0, 0.0])
            .unwrap();
        let blk = gll_block(&[7, 6], &map, 1.0, 2.0, 1.0, all_free(2));
        let grad = [[0.7, -0.4], [0.25, 1.1]];
        let asm = ElasticAssembly::new(vec![blk]).unwrap();
        let x = asm.project_nodal(&|p, c| grad[c][0] * p[0] + grad[c][1] * p[1]);
        let mut y = vec![0.0; asm.dof()];
        asm.apply_a(&x, &mut y);

        let blk = &asm.blocks()[0];
        let n = blk.grid.n_nodes();
        let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        // stress of the linear field (plane strain, engineering shear)
        let c = &blk.stiffness;
        let eps = [grad[0][0], grad[1][1], grad[0][1] + grad[1][0]];
        let mut sig = [0.0; 3];
        for r in 0..3 {
            for s in 0..3 {
                sig[r] += c.at(0)[r * 3 + s] * eps[s];
            }
        }
        let sm = [[sig[0], sig[2]], [sig[2], sig[1]]];
        let mut idx = [0usize; 3];
        for node in 0..n {
            split_index(node, &blk.grid.dims, &mut idx);
            let t = blk.metric.t_at(node);
            let j = blk.metric.j[node];
            for cc in 0..2 {
                // expected: sum of end terms over the axes this node ends
                let mut expect = 0.0;
                for k in 0..2 {
                    let at_min = idx[k] == 0;
                    let at_max = idx[k] + 1 == blk.grid.dims[k];
                    if !(at_min || at_max) {
                        continue;
                    }
                    let h_end = blk.grid.triplets[k].h_weights[idx[k]];
                    let hperp = blk.hfull[node] / h_end;
                    let flux = j * (t[k * 2] * sm[cc][0] + t[k * 2 + 1] * sm[cc][1]);
                    expect += if at_max { -hperp * flux } else { hperp * flux };
                }
                let dof = asm.dof_of(0, node, cc).unwrap();
                // apply_a returns −E u
                assert_abs_diff_eq!(-y[dof], expect, epsilon = 1e-11 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn assembled_operators_are_symmetric_and_positive_semidefinite() {
        // single 2D block, stretched map, mixed boundary conditions
        let map = Mapping::stretched_box(
            2,
            &[0.0, -1.0],
            &[2.0, 0.0],
            [
                Some(crate::geometry::boundary_stretching(2.0, 0.1).unwrap()),
                None,
                None,
            ],
        )
        .unwrap();
        let mut bcs = all_free(2);
        bcs[face_index(0, false)] = FaceBc::Dirichlet;
        bcs[face_index(1, true)] = FaceBc::NonReflecting;
        let trips = vec![
            build_shifted_uniform(4, 10, 1.0 / 9.0).unwrap().scaled_to(0.0, 1.0).unwrap(),
            build_gll(7).unwrap().scaled_to(0.0, 1.0).unwrap(),
        ];
        let grid = BlockGrid::new(trips, &map).unwrap();
        let c = isotropic_stiffness(2, 2.0, 1.0, 1.5).unwrap();
        let blk = ElasticBlock::uniform(grid, &map, 1.5, c, bcs).unwrap();
        let asm = ElasticAssembly::new(vec![blk]).unwrap();
        check_symmetric_psd(&dense(&asm), "2D mixed faces");

        // 3D sheared block, all free
        let map3 = Mapping::affine(
            3,
            [[1.0, 0.2, 0.0], [0.0, 0.9, 0.1], [0.1, 0.0, 1.1]],
            [0.0; 3],
        )
        .unwrap();
        let blk3 = gll_block(&[4, 4, 5], &map3, 1.1, 2.2, 1.2, all_free(3));
        let asm3 = ElasticAssembly::new(vec![blk3]).unwrap();
        check_symmetric_psd(&dense(&asm3), "3D free");

        // two welded blocks with distinct media and mixed axis operators
        let left = Mapping::box_map(2, &[-1.0, 0.0], &[0.0, 1.0]).unwrap();
        let right = Mapping::box_map(2, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let mut bcs_l = all_free(2);
        bcs_l[face_index(0, false)] = FaceBc::NonReflecting;
        let bl = gll_block(&[6, 5], &left, 1.0, 2.0, 1.0, bcs_l);
        let br = {
            let trips = vec![
                build_shifted_uniform(4, 9, 0.125).unwrap().scaled_to(0.0, 1.0).unwrap(),
                build_gll(5).unwrap().scaled_to(0.0, 1.0).unwrap(),
            ];
            let grid = BlockGrid::new(trips, &right).unwrap();
            let c = isotropic_stiffness(2, 3.0, 1.4, 2.0).unwrap();
            ElasticBlock::uniform(grid, &right, 2.0, c, all_free(2)).unwrap()
        };
        let asm2 = ElasticAssembly::new(vec![bl, br]).unwrap();
        check_symmetric_psd(&dense(&asm2), "two-block weld");

        // 2×2 spectral cells sharing edges and a corner
        let mut cells = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                let lo = [i as f64 * 0.5, j as f64 * 0.5];
                let hi = [lo[0] + 0.5, lo[1] + 0.5];
                let map = Mapping::box_map(2, &lo, &hi).unwrap();
                cells.push(gll_block(&[5, 5], &map, 1.0, 2.0, 1.0, all_free(2)));
            }
        }
        let sem = ElasticAssembly::new(cells).unwrap();
        check_symmetric_psd(&dense(&sem), "2×2 spectral cells");
        // welded: the shared corner class counts once
        assert_eq!(sem.n_active(), 9 * 9);
    }

    #[test]
    fn dirichlet_lift_reproduces_a_linear_field_exactly() {
        let map = Mapping::shear_2d(0.3).unwrap();
        let bcs = vec![FaceBc::Dirichlet; 4];
        let blk = gll_block(&[7, 7], &map, 1.2, 2.0, 1.0, bcs);
        let asm = ElasticAssembly::new(vec![blk]).unwrap();
        let grad = [[0.4, -0.7], [0.2, 0.9]];
        let field = |p: &[f64], c: usize| grad[c][0] * p[0] + grad[c][1] * p[1];

        // A u = lift must hold exactly for the nodal interpolant, because a
        // linear field has constant stress: all interior rows of the
        // stiffness action vanish and the boundary data carries the rest
        let u = asm.project_nodal(&field);
        let mut lift = vec![0.0; asm.dof()];
        asm.dirichlet_lift_into(&field, &mut lift);
        let mut au = vec![0.0; asm.dof()];
        asm.apply_a(&u, &mut au);
        let scale = au.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..asm.dof() {
            assert_abs_diff_eq!(au[i], lift[i], epsilon = 1e-11 * scale);
        }

        // and the dense solve recovers the interpolant from the data alone
        let a = dense(&asm);
        let rhs = nalgebra::DVector::from_column_slice(&lift);
        let sol = a.lu().solve(&rhs).expect("clamped operator is invertible");
        for i in 0..asm.dof() {
            assert_abs_diff_eq!(sol[i], u[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn absorbing_blocks_match_the_isotropic_impedance() {
        let map = Mapping::box_map(2, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let (rho, vp, vs) = (1.7, 2.5, 1.2);
        let mut bcs = all_free(2);
        bcs[face_index(0, true)] = FaceBc::NonReflecting;
        let blk = gll_block(&[6, 6], &map, rho, vp, vs, bcs);
        let asm = ElasticAssembly::new(vec![blk]).unwrap();
        let Damping::NodeBlocks { dim, stride, blocks } = asm.damping() else {
            panic!("expected node-block damping");
        };
        assert_eq!(dim, 2);
        assert_eq!(stride, asm.n_active());
        assert_eq!(blocks.len(), 6);
        // on the identity-scaled unit box, the face normal is +x, so the
        // impedance matrix is diag(ρ·vp, ρ·vs) scaled by the transverse
        // quadrature weight
        let blk = &asm.blocks()[0];
        for (active, mat) in &blocks {
            let x = asm.active_position(*active);
            assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
            // recover the node to get its transverse weight
            let (b, node, d) = asm.nearest_node(x);
            assert_eq!(b, 0);
            assert!(d < 1e-12);
            let h_end = blk.grid.triplets[0].h_weights[blk.grid.dims[0] - 1];
            let hperp = blk.hfull[node] / h_end;
            assert_abs_diff_eq!(mat[0], hperp * rho * vp, epsilon = 1e-10);
            assert_abs_diff_eq!(mat[3], hperp * rho * vs, epsilon = 1e-10);
            assert_abs_diff_eq!(mat[1], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(mat[2], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn source_patterns_act_like_delta_functionals() {
        let map = Mapping::affine(2, [[1.1, 0.25, 0.0], [-0.15, 0.95, 0.0], [0.0; 3]], [0.0; 3])
            .unwrap();
        let blk = gll_block(&[8, 7], &map, 1.0, 2.0, 1.0, all_free(2));
        let asm = ElasticAssembly::new(vec![blk]).unwrap();
        let xs = asm.blocks()[0].grid.x_of(asm.blocks()[0].grid.flat_index(&[4, 3])).to_vec();

        // the point-force pattern samples a field at the source node
        let grad = [[0.3, -0.8], [0.6, 0.2]];
        let v = asm.project_nodal(&|p, c| grad[c][0] * p[0] + grad[c][1] * p[1] + 0.1);
        let (pattern, dist) = asm.point_force_pattern(&xs, 1).unwrap();
        assert!(dist < 1e-12);
        let sampled: f64 = pattern.iter().map(|&(dof, w)| w * v[dof]).sum();
        assert_abs_diff_eq!(sampled, grad[1][0] * xs[0] + grad[1][1] * xs[1] + 0.1, epsilon = 1e-12);

        // the explosion pattern evaluates the exact divergence of a linear
        // field (the derivative operators are exact on linears)
        let (pattern, dist) = asm.explosion_pattern(&xs).unwrap();
        assert!(dist < 1e-12);
        let div: f64 = pattern.iter().map(|&(dof, w)| w * v[dof]).sum();
        assert_abs_diff_eq!(div, grad[0][0] + grad[1][1], epsilon = 1e-11);
    }

    #[test]
    fn a_small_explosion_run_stays_bounded_and_symmetric() {
        let map = Mapping::box_map(2, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let blk = gll_block(&[11, 11], &map, 1.0, 2.0, 1.0, all_free(2));
        let asm = ElasticAssembly::new(vec![blk]).unwrap();
        let src = asm.explosion(&[0.0, 0.0], TimeSignal::standard(1.5)).unwrap();
        assert!(src.snap_distance < 1e-12);
        let opts = RunOptions {
            t_end: 1.2,
            receivers: vec![vec![0.55, 0.0], vec![-0.55, 0.0]],
            energy_every: 10,
            ..RunOptions::default()
        };
        let out = asm.run(&[src], &opts, None).unwrap();
        assert!(out.tau > 0.0 && out.lambda > 0.0);
        assert_eq!(out.receivers[0].samples.len(), (out.n_steps + 1) * 2);
        assert!(out.final_state.iter().all(|v| v.is_finite()));
        assert!(out.energy.iter().all(|&(_, e)| e.is_finite()));
        // mirror receivers see mirrored horizontal motion of equal size
        let a = &out.receivers[0].samples;
        let b = &out.receivers[1].samples;
        let peak = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(peak > 1e-8, "the pulse never reached the receiver");
        for k in 0..a.len() / 2 {
            assert_abs_diff_eq!(a[2 * k], -b[2 * k], epsilon = 1e-9 * peak.max(1.0));
            assert_abs_diff_eq!(a[2 * k + 1], b[2 * k + 1], epsilon = 1e-9 * peak.max(1.0));
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let map2 = Mapping::box_map(2, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let trips = vec![build_gll(5).unwrap().scaled_to(0.0, 1.0).unwrap(); 2];
        let grid = BlockGrid::new(trips.clone(), &map2).unwrap();
        let c2 = isotropic_stiffness(2, 2.0, 1.0, 1.0).unwrap();
        let c3 = isotropic_stiffness(3, 2.0, 1.0, 1.0).unwrap();

        // wrong number of face conditions
        assert!(ElasticBlock::uniform(
            BlockGrid::new(trips.clone(), &map2).unwrap(),
            &map2,
            1.0,
            c2.clone(),
            vec![FaceBc::FreeSurface; 3]
        )
        .is_err());
        // stiffness dimension mismatch
        assert!(ElasticBlock::uniform(
            BlockGrid::new(trips.clone(), &map2).unwrap(),
            &map2,
            1.0,
            c3,
            all_free(2)
        )
        .is_err());
        // density length / sign
        assert!(ElasticBlock::new(
            BlockGrid::new(trips.clone(), &map2).unwrap(),
            &map2,
            vec![1.0; 7],
            StiffnessField::Uniform(c2.clone()),
            all_free(2)
        )
        .is_err());
        let mut rho = vec![1.0; grid.n_nodes()];
        rho[3] = -0.5;
        assert!(ElasticBlock::new(
            BlockGrid::new(trips, &map2).unwrap(),
            &map2,
            rho,
            StiffnessField::Uniform(c2.clone()),
            all_free(2)
        )
        .is_err());
        // mixed dimensions across blocks
        let blk2 = gll_block(&[5, 5], &map2, 1.0, 2.0, 1.0, all_free(2));
        let map3 = Mapping::box_map(3, &[0.0; 3], &[1.0; 3]).unwrap();
        let blk3 = gll_block(&[4, 4, 4], &map3, 1.0, 2.0, 1.0, all_free(3));
        assert!(ElasticAssembly::new(vec![blk2, blk3]).is_err());
    }

    #[test]
    fn worker_threads_do_not_change_the_result() {
        let left = Mapping::box_map(2, &[-1.0, 0.0], &[0.0, 1.0]).unwrap();
        let right = Mapping::box_map(2, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let bl = gll_block(&[6, 7], &left, 1.0, 2.0, 1.0, all_free(2));
        let br = gll_block(&[5, 7], &right, 2.0, 3.0, 1.4, all_free(2));
        let mut asm = ElasticAssembly::new(vec![bl, br]).unwrap();
        let n = asm.dof();
        let mut rng = SplitMix64(7);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..n).map(|_| rng.next_f64() - 0.5).collect())
            .collect();
        let mut serial = Vec::new();
        for x in &xs {
            let mut y = vec![0.0; n];
            asm.apply_a(x, &mut y);
            serial.push(y);
        }
        for workers in [2, 3, 8] {
            asm.set_workers(workers);
            for (x, expect) in xs.iter().zip(&serial) {
                let mut y = vec![0.0; n];
                asm.apply_a(x, &mut y);
                assert_eq!(&y, expect, "worker count {workers} changed the result");
            }
        }
    }

    #[test]
    fn uniform_displacement_is_a_steady_state() {
        let map = Mapping::shear_2d(0.25).unwrap();
        let blk = gll_block(&[7, 6], &map, 1.4, 2.2, 1.1, all_free(2));
        let asm = ElasticAssembly::new(vec![blk]).unwrap();
        let sys = SecondOrderSystem::new(asm.mass_diag(), asm.damping(), &asm).unwrap();
        let lambda = lambda_max(&sys, 1e-3).unwrap();
        let tau = stable_dt(lambda, 0.05).unwrap();
        let mut stepper = Stepper::new(&sys, tau).unwrap();
        let rigid = asm.project_nodal(&|_, c| if c == 0 { 0.3 } else { -0.8 });
        stepper.u_curr.copy_from_slice(&rigid);
        stepper.u_prev.copy_from_slice(&rigid);
        let zero = vec![0.0; asm.dof()];
        for _ in 0..200 {
            stepper.step(&zero).unwrap();
        }
        for (a, b) in stepper.u_curr.iter().zip(&rigid) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_amplitude_sources_leave_the_medium_at_rest() {
        let map = Mapping::box_map(2, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let blk = gll_block(&[7, 7], &map, 1.0, 2.0, 1.0, all_free(2));
        let asm = ElasticAssembly::new(vec![blk]).unwrap();
        let mut src = asm
            .point_force(&[0.5, 0.5], 1, TimeSignal::standard(2.0))
            .unwrap();
        src.signal.amplitude = 0.0;
        let opts = RunOptions {
            t_end: 0.5,
            receivers: vec![vec![0.25, 0.5]],
            energy_every: 5,
            ..Default::default()
        };
        let out = asm.run(&[src], &opts, None).unwrap();
        assert!(out.receivers[0].samples.iter().all(|&v| v == 0.0));
        assert!(out.energy.iter().all(|&(_, e)| e == 0.0));
        assert!(out.final_state.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn explicit_step_counts_and_quotient_rounding() {
        // a quotient that lands a hair above an integer is not pushed up
        assert_eq!(step_count(0.6, 1.6e-3), 375);
        assert_eq!(step_count(1.0, 0.3), 4);
        assert_eq!(step_count(1.0, 0.25), 4);
        assert_eq!(step_count(0.1, 0.4), 1);

        let map = Mapping::box_map(2, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let blk = gll_block(&[6, 6], &map, 1.0, 2.0, 1.0, all_free(2));
        let asm = ElasticAssembly::new(vec![blk]).unwrap();
        let src = asm
            .point_force(&[0.4, 0.6], 0, TimeSignal::standard(2.0))
            .unwrap();
        let opts = RunOptions {
            t_end: 0.25,
            n_steps: Some(7),
            receivers: vec![vec![0.5, 0.5]],
            ..Default::default()
        };
        let out = asm.run(&[src], &opts, None).unwrap();
        assert_eq!(out.n_steps, 7);
        assert_eq!(out.receivers[0].samples.len(), 8 * 2);
        let bad = RunOptions {
            n_steps: Some(0),
            t_end: 0.25,
            ..Default::default()
        };
        assert!(asm.run(&[], &bad, None).is_err());
    }

    #[test]
    fn quadratic_form_matches_the_nodal_strain_energy() {
        let stretch = crate::geometry::boundary_stretching(1.6, 0.2).unwrap();
        let left = Mapping::stretched_box(
            2,
            &[0.0, 0.0],
            &[1.0, 1.0],
            [None, Some(stretch.clone()), None],
        )
        .unwrap();
        let right = Mapping::stretched_box(
            2,
            &[1.0, 0.0],
            &[2.0, 1.0],
            [None, Some(stretch), None],
        )
        .unwrap();
        let mut bcs = all_free(2);
        bcs[face_index(0, false)] = FaceBc::Dirichlet;
        let bl = {
            let trips = vec![
                build_shifted_uniform(4, 10, 1.0 / 9.0).unwrap().scaled_to(0.0, 1.0).unwrap(),
                build_gll(7).unwrap().scaled_to(0.0, 1.0).unwrap(),
            ];
            let grid = BlockGrid::new(trips, &left).unwrap();
            let c = isotropic_stiffness(2, 2.0, 1.0, 1.4).unwrap();
            ElasticBlock::uniform(grid, &left, 1.4, c, bcs).unwrap()
        };
        let br = gll_block(&[6, 7], &right, 2.0, 2.6, 1.2, all_free(2));
        let asm = ElasticAssembly::new(vec![bl, br]).unwrap();

        let n = asm.dof();
        let mut rng = SplitMix64(0xE4E26);
        let x: Vec<f64> = (0..n).map(|_| rng.next_f64() - 0.5).collect();

        // reference: scatter to blocks, differentiate, contract the strain
        // against the stiffness under the quadrature weights
        let mut e_ref = 0.0;
        for (b, blk) in asm.blocks().iter().enumerate() {
            let nn = blk.grid.n_nodes();
            let mut ub = vec![0.0; 2 * nn];
            for node in 0..nn {
                for c in 0..2 {
                    if let Some(dof) = asm.dof_of(b, node, c) {
                        ub[c * nn + node] = x[dof];
                    }
                }
            }
            let mut grad = vec![0.0; 4 * nn];
            for k in 0..2 {
                let trip = &blk.grid.triplets[k];
                for_each_line(&blk.grid.dims, k, |base, stride, len| {
                    let mut line = vec![0.0; len];
                    let mut out = vec![0.0; len];
                    for c in 0..2 {
                        for j in 0..len {
                            line[j] = ub[c * nn + base + j * stride];
                        }
                        trip.apply_d_plus(&line, &mut out);
                        for j in 0..len {
                            grad[(c * 2 + k) * nn + base + j * stride] = out[j];
                        }
                    }
                });
            }
            for node in 0..nn {
                let t = blk.metric.t_at(node);
                let mut gp = [[0.0; 2]; 2];
                for c in 0..2 {
                    for i in 0..2 {
                        gp[c][i] = (0..2)
                            .map(|k| t[k * 2 + i] * grad[(c * 2 + k) * nn + node])
                            .sum();
                    }
                }
                let eps = [gp[0][0], gp[1][1], gp[0][1] + gp[1][0]];
                let cm = blk.stiffness.at(node);
                let mut q = 0.0;
                for r in 0..3 {
                    for s in 0..3 {
                        q += eps[r] * cm[r * 3 + s] * eps[s];
                    }
                }
                e_ref += blk.hfull[node] * blk.metric.j[node] * q;
            }
        }

        let mut y = vec![0.0; n];
        asm.apply_a(&x, &mut y);
        let e_op: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(e_op, e_ref, epsilon = 1e-12 * e_ref.abs().max(1.0));
    }

    #[test]
    fn adjoint_pairs_agree_on_a_three_dimensional_weld() {
        let left = Mapping::box_map(3, &[0.0; 3], &[1.0; 3]).unwrap();
        let right = Mapping::box_map(3, &[1.0, 0.0, 0.0], &[2.0, 1.0, 1.0]).unwrap();
        let mut bcs = all_free(3);
        bcs[face_index(2, false)] = FaceBc::Dirichlet;
        let bl = gll_block(&[5, 5, 4], &left, 1.0, 2.0, 1.0, bcs);
        let br = gll_block(&[4, 5, 4], &right, 1.5, 2.5, 1.3, all_free(3));
        let asm = ElasticAssembly::new(vec![bl, br]).unwrap();
        let n = asm.dof();
        let mut rng = SplitMix64(42);
        let mut ax = vec![0.0; n];
        let mut az = vec![0.0; n];
        for trial in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.next_f64() - 0.5).collect();
            let z: Vec<f64> = (0..n).map(|_| rng.next_f64() - 0.5).collect();
            asm.apply_a(&x, &mut ax);
            asm.apply_a(&z, &mut az);
            let zax: f64 = z.iter().zip(&ax).map(|(a, b)| a * b).sum();
            let xaz: f64 = x.iter().zip(&az).map(|(a, b)| a * b).sum();
            let scale = zax.abs().max(xaz.abs()).max(1.0);
            assert!(
                (zax - xaz).abs() <= 1e-11 * scale,
                "trial {trial}: ⟨z,Ax⟩ = {zax:.15e} vs ⟨x,Az⟩ = {xaz:.15e}"
            );
        }
    }

    #[test]
    fn welded_and_monolithic_grids_agree_on_clamped_linear_data() {
        let field = |p: &[f64], c: usize| {
            if c == 0 {
                0.3 * p[0] - 0.9 * p[1] + 0.2
            } else {
                -0.4 * p[0] + 1.1 * p[1]
            }
        };
        let c = isotropic_stiffness(2, 2.0, 1.0, 1.3).unwrap();
        let shifted_block = |ny: usize, lo: [f64; 2], hi: [f64; 2], bcs: Vec<FaceBc>| {
            let map = Mapping::box_map(2, &lo, &hi).unwrap();
            let trips = vec![
                build_shifted_uniform(4, 13, 1.0 / 12.0).unwrap().scaled_to(0.0, 1.0).unwrap(),
                build_shifted_uniform(4, ny, 1.0 / (ny as f64 - 1.0))
                    .unwrap()
                    .scaled_to(0.0, 1.0)
                    .unwrap(),
            ];
            let grid = BlockGrid::new(trips, &map).unwrap();
            ElasticBlock::uniform(grid, &map, 1.3, c.clone(), bcs).unwrap()
        };
        let mut bcs_lo = vec![FaceBc::Dirichlet; 4];
        bcs_lo[face_index(1, true)] = FaceBc::FreeSurface; // welded side
        let mut bcs_hi = vec![FaceBc::Dirichlet; 4];
        bcs_hi[face_index(1, false)] = FaceBc::FreeSurface;
        let welded = ElasticAssembly::new(vec![
            shifted_block(13, [0.0, 0.0], [1.0, 1.0], bcs_lo),
            shifted_block(13, [0.0, 1.0], [1.0, 2.0], bcs_hi),
        ])
        .unwrap();
        let mono = ElasticAssembly::new(vec![shifted_block(
            25,
            [0.0, 0.0],
            [1.0, 2.0],
            vec![FaceBc::Dirichlet; 4],
        )])
        .unwrap();
        assert_eq!(welded.n_active(), 11 * 23);
        assert_eq!(mono.n_active(), 11 * 23);

        // on clamped linear data both discretizations return the nodal
        // interpolant exactly, joint stencils included
        for asm in [&welded, &mono] {
            let u = asm.project_nodal(&field);
            let mut lift = vec![0.0; asm.dof()];
            asm.dirichlet_lift_into(&field, &mut lift);
            let a = dense(asm);
            let rhs = nalgebra::DVector::from_column_slice(&lift);
            let sol = a.lu().solve(&rhs).expect("clamped operator is invertible");
            for i in 0..asm.dof() {
                assert_abs_diff_eq!(sol[i], u[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn spectral_assembly_checks_axes_and_reduces_to_one_block() {
        let map = Mapping::shear_2d(0.2).unwrap();
        let trips = vec![
            build_shifted_uniform(4, 10, 1.0 / 9.0).unwrap().scaled_to(0.0, 1.0).unwrap(),
            build_gll(6).unwrap().scaled_to(0.0, 1.0).unwrap(),
        ];
        let grid = BlockGrid::new(trips, &map).unwrap();
        let c = isotropic_stiffness(2, 2.0, 1.0, 1.0).unwrap();
        let blk = ElasticBlock::uniform(grid, &map, 1.0, c, all_free(2)).unwrap();
        let err = match sem_assembly(vec![blk]) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("a finite-difference axis was accepted as a spectral cell"),
        };
        assert!(err.contains("Gauss-Lobatto"));

        // a single Gauss–Lobatto cell is exactly the one-block collocation
        // operator
        let cell = || gll_block(&[6, 5], &map, 1.2, 2.0, 1.1, all_free(2));
        let sem = sem_assembly(vec![cell()]).unwrap();
        let plain = ElasticAssembly::new(vec![cell()]).unwrap();
        assert_eq!(sem.mass_diag(), plain.mass_diag());
        assert_eq!(dense(&sem), dense(&plain));
    }

    #[test]
    fn spectral_assembly_lumps_mass_by_summing_cell_quadrature() {
        let rho = 1.3;
        let mut cells = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                let lo = [i as f64 * 0.5, j as f64 * 0.5];
                let hi = [lo[0] + 0.5, lo[1] + 0.5];
                let map = Mapping::box_map(2, &lo, &hi).unwrap();
                cells.push(gll_block(&[6, 6], &map, rho, 2.0, 1.0, all_free(2)));
            }
        }
        let asm = sem_assembly(cells).unwrap();
        assert_eq!(asm.n_active(), 11 * 11);
        let trip = build_gll(6).unwrap().scaled_to(0.0, 1.0).unwrap();
        let w = &trip.h_weights;
        let xn = &trip.nodes;
        let jac = 0.25; // each cell maps the unit square to a half-size square
        let mass = asm.mass_diag();

        // corner shared by all four cells
        let (a, d) = asm.nearest_active(&[0.5, 0.5]);
        assert!(d < 1e-12);
        let corner = (w[5] + w[0]) * (w[5] + w[0]);
        assert_abs_diff_eq!(mass[a], rho * jac * corner, epsilon = 1e-13);

        // edge node shared by two cells
        let (a, d) = asm.nearest_active(&[0.5, 0.5 * xn[2]]);
        assert!(d < 1e-12);
        assert_abs_diff_eq!(mass[a], rho * jac * (w[5] + w[0]) * w[2], epsilon = 1e-13);

        // interior node of a single cell
        let (a, d) = asm.nearest_active(&[0.5 * xn[1], 0.5 * xn[2]]);
        assert!(d < 1e-12);
        assert_abs_diff_eq!(mass[a], rho * jac * w[1] * w[2], epsilon = 1e-13);

        // the lumped masses integrate constants: total mass = ρ·area
        let total: f64 = mass[..asm.n_active()].iter().sum();
        assert_abs_diff_eq!(total, rho, epsilon = 1e-12);
    }

    #[test]
    fn christoffel_matrices_of_tilted_media_stay_positive_definite() {
        let media = [
            tti_stiffness(2000.0, 1200.0, 2000.0, 0.334, 0.575, 0.818, 45.0, 45.0).unwrap(),
            tti_stiffness(3000.0, 1600.0, 2000.0, 0.022, 0.087, -0.072, 90.0, 15.0).unwrap(),
        ];
        let mut rng = SplitMix64(0x5EED);
        for cm in &media {
            let sf = StiffnessField::Uniform(cm.clone());
            for _ in 0..1000 {
                let mut nu = [0.0_f64; 3];
                loop {
                    for v in nu.iter_mut() {
                        *v = 2.0 * rng.next_f64() - 1.0;
                    }
                    let norm = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 0.2 {
                        for v in nu.iter_mut() {
                            *v /= norm;
                        }
                        break;
                    }
                }
                let mut m = nalgebra::Matrix3::zeros();
                for c in 0..3 {
                    for a in 0..3 {
                        let mut s = 0.0;
                        for j in 0..3 {
                            for b in 0..3 {
                                s += nu[j] * nu[b] * sf.tensor_at(0, c, j, a, b);
                            }
                        }
                        m[(c, a)] = s;
                    }
                }
                let scale = m.amax();
                for i in 0..3 {
                    for j in 0..i {
                        assert!(
                            (m[(i, j)] - m[(j, i)]).abs() <= 1e-12 * scale,
                            "direction matrix asymmetric for {nu:?}"
                        );
                    }
                }
                let sym = (m + m.transpose()) * 0.5;
                let eigs = nalgebra::SymmetricEigen::new(sym).eigenvalues;
                let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(
                    min > 1e-3 * scale,
                    "direction {nu:?}: smallest eigenvalue {min:.3e} of scale {scale:.3e}"
                );
            }
        }
    }

    fn gauss(s: f64, sigma: f64) -> f64 {
        (-s * s / (2.0 * sigma * sigma)).exp()
    }

    #[test]
    fn plane_pulse_reflects_off_the_free_surface_with_unit_magnitude() {
        let (vp, vs, rho) = (1.5, 0.8, 1.0);
        let sigma = 0.1;
        let y0 = -0.5;
        // up-going compressional pulse plus its free-surface image: the
        // traction σ_yy vanishes identically at y = 1
        let exact = move |y: f64, t: f64| {
            gauss(y - vp * t - y0, sigma) + gauss(2.0 - y - vp * t - y0, sigma)
        };
        let map = Mapping::box_map(2, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let trips = vec![
            build_gll(7).unwrap().scaled_to(0.0, 1.0).unwrap(),
            build_shifted_uniform(4, 201, 1.0 / 200.0).unwrap().scaled_to(0.0, 1.0).unwrap(),
        ];
        let grid = BlockGrid::new(trips, &map).unwrap();
        let c = isotropic_stiffness(2, vp, vs, rho).unwrap();
        let mut bcs = vec![FaceBc::Dirichlet; 4];
        bcs[face_index(1, true)] = FaceBc::FreeSurface;
        let blk = ElasticBlock::uniform(grid, &map, rho, c, bcs).unwrap();
        let asm = ElasticAssembly::new(vec![blk]).unwrap();
        let data = move |t: f64, x: &[f64], c: usize| if c == 1 { exact(x[1], t) } else { 0.0 };
        let opts = RunOptions {
            t_end: 1.75,
            cfl_margin: 3.0, // halve the stable step for extra time accuracy
            receivers: vec![vec![0.5, 0.5]],
            ..Default::default()
        };
        let out = asm.run_with_boundary(&[], Some(&data), &opts, None).unwrap();
        let rec = &out.receivers[0];
        assert!(rec.distance < 1e-12);
        let peak_in = |w: (f64, f64)| -> f64 {
            let mut m = 0.0_f64;
            for k in 0..=out.n_steps {
                let t = k as f64 * out.tau;
                if t >= w.0 && t <= w.1 {
                    m = m.max(rec.samples[2 * k + 1].abs());
                }
            }
            m
        };
        let incident = peak_in((1.0 / 3.0, 1.0));
        let reflected = peak_in((1.0, 5.0 / 3.0));
        assert!(incident > 0.9, "incident pulse missing: {incident}");
        assert!(
            (reflected / incident - 1.0).abs() < 1e-3,
            "free-surface reflection magnitude {:.6} (incident {incident:.6}, reflected {reflected:.6})",
            reflected / incident
        );
        // no horizontal motion is generated at normal incidence
        let ux_peak = (0..=out.n_steps)
            .map(|k| rec.samples[2 * k].abs())
            .fold(0.0_f64, f64::max);
        assert!(ux_peak < 1e-6, "horizontal leakage {ux_peak:.3e}");
    }

    #[test]
    fn absorbing_face_passes_a_normally_incident_pulse() {
        let (vp, vs, rho) = (1.5, 0.8, 1.0);
        let sigma = 0.1;
        let c0 = 1.5;
        // free-space down-going pulse; the absorbing bottom face should let
        // it leave with at most a percent-level echo
        let exact = move |y: f64, t: f64| gauss(y + vp * t - c0, sigma);
        let map = Mapping::box_map(2, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let trips = vec![
            build_gll(7).unwrap().scaled_to(0.0, 1.0).unwrap(),
            build_shifted_uniform(4, 201, 1.0 / 200.0).unwrap().scaled_to(0.0, 1.0).unwrap(),
        ];
        let grid = BlockGrid::new(trips, &map).unwrap();
        let c = isotropic_stiffness(2, vp, vs, rho).unwrap();
        let mut bcs = vec![FaceBc::Dirichlet; 4];
        bcs[face_index(1, false)] = FaceBc::NonReflecting;
        let blk = ElasticBlock::uniform(grid, &map, rho, c, bcs).unwrap();
        let asm = ElasticAssembly::new(vec![blk]).unwrap();
        let data = move |t: f64, x: &[f64], c: usize| if c == 1 { exact(x[1], t) } else { 0.0 };
        let opts = RunOptions {
            t_end: 1.4,
            cfl_margin: 3.0,
            receivers: vec![vec![0.5, 0.2]],
            ..Default::default()
        };
        let out = asm.run_with_boundary(&[], Some(&data), &opts, None).unwrap();
        let rec = &out.receivers[0];
        let through = (0..=out.n_steps)
            .map(|k| rec.samples[2 * k + 1].abs())
            .fold(0.0_f64, f64::max);
        assert!(through > 0.9, "pulse never crossed the receiver: {through}");
        // after passage, everything left in the domain is spurious echo
        let residual = out
            .final_state
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(
            residual < 0.01,
            "absorbing-face echo {residual:.3e} of a unit incident pulse"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]
        #[test]
        fn random_welded_assemblies_stay_symmetric_psd(
            shear in -0.35_f64..0.35,
            rho_l in 0.5_f64..3.0,
            rho_r in 0.5_f64..3.0,
            speed in 1.0_f64..3.0,
            ratio in 1.5_f64..2.8,
            bc_pick in 0usize..3,
        ) {
            let bc = [FaceBc::FreeSurface, FaceBc::Dirichlet, FaceBc::NonReflecting][bc_pick];
            let a = [[1.0, shear, 0.0], [0.0, 1.0, 0.0], [0.0; 3]];
            let left = Mapping::affine(2, a, [-1.0, 0.0, 0.0]).unwrap();
            let right = Mapping::affine(2, a, [0.0; 3]).unwrap();
            let mut bcs_l = all_free(2);
            bcs_l[face_index(1, false)] = bc;
            let bl = gll_block(&[5, 5], &left, rho_l, speed * ratio, speed, bcs_l);
            let br = gll_block(&[5, 6], &right, rho_r, speed * ratio, speed, all_free(2));
            let asm = ElasticAssembly::new(vec![bl, br]).unwrap();
            let m = dense(&asm);
            check_symmetric_psd(&m, "random weld");
        }
    }
}
