//! Matrix-free stiffness operator of the cell problem.
//!
//! Every element of the structured grid has the same shape, so the operator
//! keeps one 24×24 element matrix per phase and applies it column by column.
//! Element products go to a scratch buffer first; each node then gathers its
//! eight contributions in a fixed order, which makes the result independent
//! of the thread count.

use nalgebra::SMatrix;

use super::element::{ElementData, Geometry};
use super::{CellLoad, RVEGrid};
use crate::cg::LinearOperator;
use crate::error::{Error, Result};
use crate::exec::{self, ExecPolicy, Execution};
use crate::material::MaterialTable;
use crate::microstructure::PhaseGrid;

type Local = SMatrix<f64, 24, 1>;

pub struct CellOperator {
    pub(crate) n1: usize,
    pub(crate) n2: usize,
    pub(crate) n3: usize,
    pub(crate) hz: f64,
    pub(crate) geom: Geometry,
    pub(crate) cell_volume: f64,
    /// Slot into `elements` for in-plane column `j * n1 + i`.
    column_slot: Vec<usize>,
    elements: Vec<ElementData>,
    diag: Vec<f64>,
    policy: ExecPolicy,
}

impl CellOperator {
    pub fn new(
        grid: &RVEGrid,
        phases: &PhaseGrid,
        materials: &MaterialTable,
        policy: ExecPolicy,
    ) -> Result<Self> {
        grid.validate()?;
        if phases.n1 != grid.n1 || phases.n2 != grid.n2 {
            return Err(Error::DimensionMismatch(format!(
                "phase grid is {}×{}, RVE grid is {}×{}",
                phases.n1, phases.n2, grid.n1, grid.n2
            )));
        }
        let geom = grid.geometry();
        let cell_volume = grid.box_side * grid.box_side;

        let mut slots_of_table = vec![usize::MAX; materials.entries().len()];
        let mut elements = Vec::new();
        let mut column_slot = vec![0usize; grid.n1 * grid.n2];
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                let t = materials.position(phases.get(i, j))?;
                if slots_of_table[t] == usize::MAX {
                    slots_of_table[t] = elements.len();
                    elements.push(ElementData::new(
                        &geom,
                        &materials.entries()[t].q0.voigt,
                        cell_volume,
                    ));
                }
                column_slot[j * grid.n1 + i] = slots_of_table[t];
            }
        }

        let mut op = Self {
            n1: grid.n1,
            n2: grid.n2,
            n3: grid.n3,
            hz: geom.hz,
            geom,
            cell_volume,
            column_slot,
            elements,
            diag: Vec::new(),
            policy,
        };
        op.diag = op.gather(|e, out| {
            let k = &op.element(e).stiffness;
            for (a, o) in out.iter_mut().enumerate() {
                *o = k[(a, a)];
            }
        });
        Ok(op)
    }

    pub fn nodes(&self) -> usize {
        self.n1 * self.n2 * (self.n3 + 1)
    }

    pub fn elements_count(&self) -> usize {
        self.n1 * self.n2 * self.n3
    }

    #[inline]
    fn element(&self, e: usize) -> &ElementData {
        &self.elements[self.column_slot[e % (self.n1 * self.n2)]]
    }

    /// Global node ids of element `e`, in local order.
    #[inline]
    pub fn element_nodes(&self, e: usize) -> [usize; 8] {
        let (n1, n2) = (self.n1, self.n2);
        let i = e % n1;
        let j = (e / n1) % n2;
        let k = e / (n1 * n2);
        let mut out = [0; 8];
        for (a, o) in out.iter_mut().enumerate() {
            let ii = (i + (a & 1)) % n1;
            let jj = (j + ((a >> 1) & 1)) % n2;
            let kk = k + ((a >> 2) & 1);
            *o = (kk * n2 + jj) * n1 + ii;
        }
        out
    }

    /// Layer index and centre height of element `e`.
    #[inline]
    pub fn element_layer(&self, e: usize) -> (usize, f64) {
        let k = e / (self.n1 * self.n2);
        (k, -0.5 + (k as f64 + 0.5) * self.hz)
    }

    #[inline]
    fn local(&self, x: &[f64], e: usize) -> Local {
        let nodes = self.element_nodes(e);
        let mut v = Local::zeros();
        for (a, &n) in nodes.iter().enumerate() {
            for c in 0..3 {
                v[3 * a + c] = x[3 * n + c];
            }
        }
        v
    }

    /// Computes a 24-vector per element with `f`, then sums them into nodes.
    fn gather<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let mut scratch = vec![0.0; 24 * self.elements_count()];
        exec::for_each_chunk_mut(self.policy.execution, &mut scratch, 24, &f);
        let mut out = vec![0.0; 3 * self.nodes()];
        self.scatter_into(&scratch, &mut out);
        out
    }

    fn scatter_into(&self, scratch: &[f64], out: &mut [f64]) {
        scatter_nodes([self.n1, self.n2, self.n3], 3, scratch, out, self.policy.execution);
    }

    /// Load vectors of `load` per element: `f_e = M0 v_B + (z_c M0 + M1) v_G`.
    pub fn rhs(&self, load: &CellLoad) -> Vec<f64> {
        let (vb, vg) = load.voigt_pair();
        let mut f = self.gather(|e, out| {
            let (_, zc) = self.element_layer(e);
            let d = self.element(e);
            let v = d.load0 * (vb + vg * zc) + d.load1 * vg;
            out.copy_from_slice(v.as_slice());
        });
        for v in &mut f {
            *v = -*v;
        }
        f
    }

    /// Average of `Q(ι(B + x3 G) + sym ∇̃φ)` over the cell, via the element
    /// matrices.
    pub fn energy(&self, load: &CellLoad, phi: &[f64]) -> f64 {
        let (vb, vg) = load.voigt_pair();
        let hz = self.hz;
        let elem_vol = self.geom.volume() / self.cell_volume;
        exec::sum(self.policy, self.elements_count(), |e| {
            let (_, zc) = self.element_layer(e);
            let d = self.element(e);
            let u = self.local(phi, e);
            let c = &d.form;
            let base = elem_vol
                * (vb.dot(&(c * vb))
                    + 2.0 * zc * vb.dot(&(c * vg))
                    + (zc * zc + hz * hz / 12.0) * vg.dot(&(c * vg)));
            let f = d.load0 * (vb + vg * zc) + d.load1 * vg;
            base + 2.0 * u.dot(&f) + u.dot(&(d.stiffness * u))
        })
    }

    pub fn policy(&self) -> ExecPolicy {
        self.policy
    }
}

impl LinearOperator for CellOperator {
    fn len(&self) -> usize {
        3 * self.nodes()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut scratch = vec![0.0; 24 * self.elements_count()];
        exec::for_each_chunk_mut(self.policy.execution, &mut scratch, 24, |e, out| {
            let v = self.element(e).stiffness * self.local(x, e);
            out.copy_from_slice(v.as_slice());
        });
        self.scatter_into(&scratch, y);
    }

    fn diagonal(&self) -> Vec<f64> {
        self.diag.clone()
    }
}

/// Sums per-element, per-local-node blocks of `stride` values into nodes.
/// `scratch` is laid out `[element][local node][component]`; each node visits
/// its elements in local-index order.
pub(crate) fn scatter_nodes(
    dims: [usize; 3],
    stride: usize,
    scratch: &[f64],
    out: &mut [f64],
    exec: Execution,
) {
    let [n1, n2, n3] = dims;
    exec::for_each_chunk_mut(exec, out, stride, |node, o| {
        let i = node % n1;
        let j = (node / n1) % n2;
        let k = node / (n1 * n2);
        o.fill(0.0);
        for a in 0..8 {
            let (di, dj, dk) = (a & 1, (a >> 1) & 1, (a >> 2) & 1);
            if k < dk || k - dk >= n3 {
                continue;
            }
            let ei = (i + n1 - di) % n1;
            let ej = (j + n2 - dj) % n2;
            let e = ((k - dk) * n2 + ej) * n1 + ei;
            let base = (8 * e + a) * stride;
            for c in 0..stride {
                o[c] += scratch[base + c];
            }
        }
    });
}
