//! The stochastic cell problem on a representative volume element.
//!
//! The RVE is `[0, L)² × [−½, ½]`, periodic in-plane and free at the two
//! faces. For a load `(B, G)` of symmetric 2×2 matrices the corrector `φ`
//! minimizes the average of
//!
//! ```text
//! Q⁰(x', ι(B + x3 G) + sym(∂1φ, ∂2φ, γ⁻¹ ∂3φ))
//! ```
//!
//! over nodal trilinear fields with zero mean. Six unit loads give the
//! coupled membrane–bending tensor; minimizing over `B` is then a Schur
//! complement, which yields the effective bending form `Q^γ`.

pub mod element;
pub mod operator;

use std::io::{Read, Write};

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::cg::{self, CgReport, Projector};
use crate::error::{Error, Result};
use crate::exec::{self, ExecPolicy};
use crate::material::{q0_apply, voigt6, MaterialTable, SQRT2};
use crate::microstructure::{MicrostructureRealization, PhaseGrid};

use element::{shape, Geometry, GAUSS_1D};
pub use operator::CellOperator;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RVEGrid {
    pub box_side: f64,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub gamma: f64,
}

impl RVEGrid {
    pub fn new(box_side: f64, n1: usize, n2: usize, n3: usize, gamma: f64) -> Result<Self> {
        let g = Self {
            box_side,
            n1,
            n2,
            n3,
            gamma,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.box_side > 0.0) {
            return Err(Error::InvalidArgument("box_side must be positive".into()));
        }
        if self.n1 < 2 || self.n2 < 2 || !self.n1.is_multiple_of(2) || !self.n2.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "in-plane divisions must be even and at least 2, got {}×{}",
                self.n1, self.n2
            )));
        }
        if self.n3 < 2 {
            return Err(Error::InvalidArgument("n3 must be at least 2".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            hx: self.box_side / self.n1 as f64,
            hy: self.box_side / self.n2 as f64,
            hz: 1.0 / self.n3 as f64,
            thickness_scale: 1.0 / self.gamma,
        }
    }

    pub fn nodes(&self) -> usize {
        self.n1 * self.n2 * (self.n3 + 1)
    }

    /// Node id of `(i, j, k)`; `i` runs fastest.
    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n2 + j) * self.n1 + i
    }

    /// Position of node `(i, j, k)` in cell coordinates.
    pub fn node_position(&self, node: usize) -> [f64; 3] {
        let i = node % self.n1;
        let j = (node / self.n1) % self.n2;
        let k = node / (self.n1 * self.n2);
        let g = self.geometry();
        [
            i as f64 * g.hx,
            j as f64 * g.hy,
            -0.5 + k as f64 * g.hz,
        ]
    }
}

/// Membrane and bending parts of the cell load, both symmetric 2×2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellLoad {
    pub b: [[f64; 2]; 2],
    pub g: [[f64; 2]; 2],
}

impl CellLoad {
    pub fn zero() -> Self {
        Self {
            b: [[0.0; 2]; 2],
            g: [[0.0; 2]; 2],
        }
    }

    pub fn new(b: [[f64; 2]; 2], g: [[f64; 2]; 2]) -> Result<Self> {
        let l = Self { b, g };
        if (b[0][1] - b[1][0]).abs() > 1e-14 || (g[0][1] - g[1][0]).abs() > 1e-14 {
            return Err(Error::InvalidArgument("cell load must be symmetric".into()));
        }
        Ok(l)
    }

    pub fn bending(g: [[f64; 2]; 2]) -> Result<Self> {
        Self::new([[0.0; 2]; 2], g)
    }

    /// Load whose coordinates `(B11, B22, √2B12, G11, G22, √2G12)` are `v`.
    pub fn from_voigt(v: &Vector6<f64>) -> Self {
        Self {
            b: [[v[0], v[2] / SQRT2], [v[2] / SQRT2, v[1]]],
            g: [[v[3], v[5] / SQRT2], [v[5] / SQRT2, v[4]]],
        }
    }

    pub fn unit(a: usize) -> Self {
        Self::from_voigt(&Vector6::from_fn(|i, _| if i == a { 1.0 } else { 0.0 }))
    }

    pub fn to_voigt(&self) -> Vector6<f64> {
        Vector6::new(
            self.b[0][0],
            self.b[1][1],
            SQRT2 * 0.5 * (self.b[0][1] + self.b[1][0]),
            self.g[0][0],
            self.g[1][1],
            SQRT2 * 0.5 * (self.g[0][1] + self.g[1][0]),
        )
    }

    fn iota(m: &[[f64; 2]; 2]) -> Matrix3<f64> {
        Matrix3::new(m[0][0], m[0][1], 0.0, m[1][0], m[1][1], 0.0, 0.0, 0.0, 0.0)
    }

    /// Voigt 6-vectors of `ι(B)` and `ι(G)`.
    pub fn voigt_pair(&self) -> (Vector6<f64>, Vector6<f64>) {
        (voigt6(&Self::iota(&self.b)), voigt6(&Self::iota(&self.g)))
    }

    /// `ι(B + x3 G)` as a 3×3 matrix.
    pub fn strain_at(&self, x3: f64) -> Matrix3<f64> {
        Self::iota(&self.b) + Self::iota(&self.g) * x3
    }
}

/// Nodal corrector on the RVE grid, laid out `values[3 * node + component]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectorField {
    pub grid: RVEGrid,
    pub values: Vec<f64>,
}

impl CorrectorField {
    pub fn zeros(grid: RVEGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; 3 * grid.nodes()],
        }
    }

    pub fn at(&self, node: usize) -> Vector3<f64> {
        Vector3::new(
            self.values[3 * node],
            self.values[3 * node + 1],
            self.values[3 * node + 2],
        )
    }

    pub fn mean(&self) -> Vector3<f64> {
        let n = self.grid.nodes();
        (0..n).map(|k| self.at(k)).sum::<Vector3<f64>>() / n as f64
    }

    /// Linear combination `Σ c_k f_k` of fields on the same grid.
    pub fn combine(fields: &[&CorrectorField], coeffs: &[f64]) -> Self {
        let grid = fields[0].grid;
        let mut values = vec![0.0; fields[0].values.len()];
        for (f, &c) in fields.iter().zip(coeffs) {
            for (v, x) in values.iter_mut().zip(&f.values) {
                *v += c * x;
            }
        }
        Self { grid, values }
    }

    /// Value and cell-coordinate gradient `(∂1, ∂2, ∂3)` of the trilinear
    /// interpolant at `(y1, y2, x3)`; in-plane coordinates wrap periodically.
    pub fn sample(&self, y: [f64; 2], x3: f64) -> (Vector3<f64>, Matrix3<f64>) {
        let g = self.grid;
        let geom = g.geometry();
        let l = g.box_side;
        let locate = |t: f64, h: f64, n: usize| {
            let s = crate::microstructure::wrap(t, l) / h;
            let i = (s.floor() as usize).min(n - 1);
            (i, s - i as f64)
        };
        let (i, xi) = locate(y[0], geom.hx, g.n1);
        let (j, eta) = locate(y[1], geom.hy, g.n2);
        let s3 = ((x3 + 0.5) / geom.hz).clamp(0.0, g.n3 as f64);
        let k = (s3.floor() as usize).min(g.n3 - 1);
        let zeta = s3 - k as f64;

        let xi3 = [xi, eta, zeta];
        let n = shape(xi3);
        let dn = element::shape_grad(xi3);
        let mut val = Vector3::zeros();
        let mut grad = Matrix3::zeros();
        for a in 0..8 {
            let node = g.node(
                (i + (a & 1)) % g.n1,
                (j + ((a >> 1) & 1)) % g.n2,
                k + ((a >> 2) & 1),
            );
            let u = self.at(node);
            val += u * n[a];
            let d = Vector3::new(dn[a][0] / geom.hx, dn[a][1] / geom.hy, dn[a][2] / geom.hz);
            grad += u * d.transpose();
        }
        (val, grad)
    }

    /// Binary dump: one JSON header line `{n1, n2, n3, L, gamma}` followed by
    /// the little-endian `f64` payload, node-major, component-minor.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        write_field_dump(&mut w, &self.grid, &self.values)
    }

    pub fn read_dump<R: Read>(r: R) -> Result<Self> {
        let (grid, values) = read_field_dump(r)?;
        if values.len() != 3 * grid.nodes() {
            return Err(Error::DimensionMismatch(format!(
                "payload has {} values, expected {}",
                values.len(),
                3 * grid.nodes()
            )));
        }
        Ok(Self { grid, values })
    }
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    n1: usize,
    n2: usize,
    n3: usize,
    #[serde(rename = "L")]
    l: f64,
    gamma: f64,
}

pub(crate) fn write_field_dump<W: Write>(w: &mut W, grid: &RVEGrid, values: &[f64]) -> Result<()> {
    let header = DumpHeader {
        n1: grid.n1,
        n2: grid.n2,
        n3: grid.n3,
        l: grid.box_side,
        gamma: grid.gamma,
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(8 * values.len());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_field_dump<R: Read>(mut r: R) -> Result<(RVEGrid, Vec<f64>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::InvalidArgument("dump has no header line".into()))?;
    let header: DumpHeader = serde_json::from_slice(&bytes[..nl])?;
    let payload = &bytes[nl + 1..];
    if payload.len() % 8 != 0 {
        return Err(Error::InvalidArgument("payload is not a whole number of f64".into()));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let grid = RVEGrid {
        box_side: header.l,
        n1: header.n1,
        n2: header.n2,
        n3: header.n3,
        gamma: header.gamma,
    };
    Ok((grid, values))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    /// Defaults to `⌈20·√N⌉` for `N` unknowns.
    pub max_iterations: Option<usize>,
    pub policy: ExecPolicy,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: None,
            policy: ExecPolicy::default(),
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct CorrectorSolution {
    pub corrector: CorrectorField,
    pub report: CgReport,
}

/// Cell operator plus the data needed to solve for arbitrary loads.
pub struct CellProblem {
    grid: RVEGrid,
    op: CellOperator,
    opts: SolverOptions,
}

impl CellProblem {
    pub fn new(
        grid: &RVEGrid,
        phases: &PhaseGrid,
        materials: &MaterialTable,
        opts: SolverOptions,
    ) -> Result<Self> {
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        Ok(Self {
            grid: *grid,
            op: CellOperator::new(grid, phases, materials, opts.policy)?,
            opts,
        })
    }

    pub fn grid(&self) -> &RVEGrid {
        &self.grid
    }

    pub fn operator(&self) -> &CellOperator {
        &self.op
    }

    pub fn solve(&self, load: &CellLoad) -> Result<CorrectorSolution> {
        let b = self.op.rhs(load);
        let cap = self
            .opts
            .max_iterations
            .unwrap_or_else(|| cg::default_iteration_cap(b.len()));
        let (x, report) = cg::solve(
            &self.op,
            &b,
            Some(Projector { stride: 3 }),
            self.opts.tol,
            cap,
            self.opts.policy,
        )?;
        Ok(CorrectorSolution {
            corrector: CorrectorField {
                grid: self.grid,
                values: x,
            },
            report,
        })
    }

    /// Cell energy through the assembled element integrals.
    pub fn energy(&self, load: &CellLoad, phi: &CorrectorField) -> f64 {
        self.op.energy(load, &phi.values)
    }

    /// Correctors for the six unit loads, solved concurrently.
    pub fn unit_solutions(&self) -> Result<Vec<CorrectorSolution>> {
        exec::map_range(self.opts.policy.execution, 6, |a| self.solve(&CellLoad::unit(a)))
            .into_iter()
            .collect()
    }

    pub fn coupled_tensor(&self) -> Result<CoupledEffectiveTensor> {
        let sols = self.unit_solutions()?;
        Ok(self.coupled_from(&sols))
    }

    /// Polarization of the minimized energy over the unit loads.
    pub fn coupled_from(&self, sols: &[CorrectorSolution]) -> CoupledEffectiveTensor {
        let energy_of = |v: Vector6<f64>, fields: &[(usize, f64)]| {
            let refs: Vec<&CorrectorField> = fields.iter().map(|&(k, _)| &sols[k].corrector).collect();
            let coeffs: Vec<f64> = fields.iter().map(|&(_, c)| c).collect();
            let phi = CorrectorField::combine(&refs, &coeffs);
            self.energy(&CellLoad::from_voigt(&v), &phi)
        };
        let unit = |a: usize| Vector6::from_fn(|i, _| if i == a { 1.0 } else { 0.0 });
        let diag: Vec<f64> = (0..6).map(|a| energy_of(unit(a), &[(a, 1.0)])).collect();
        let mut m = Matrix6::zeros();
        for a in 0..6 {
            m[(a, a)] = diag[a];
            for b in (a + 1)..6 {
                let e = energy_of(unit(a) + unit(b), &[(a, 1.0), (b, 1.0)]);
                let v = 0.5 * (e - diag[a] - diag[b]);
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        CoupledEffectiveTensor {
            matrix: m,
            grid: self.grid,
            cg_residuals: sols.iter().map(|s| s.report.final_residual()).collect(),
            cg_iterations: sols.iter().map(|s| s.report.iterations).collect(),
        }
    }
}

/// Cell energy of `phi` under `load`, evaluated directly by 2×2×2 Gauss
/// quadrature of `Q⁰(ι(B + x3 G) + sym ∇̃φ)`.
pub fn cell_energy(
    grid: &RVEGrid,
    phases: &PhaseGrid,
    materials: &MaterialTable,
    load: &CellLoad,
    phi: &CorrectorField,
) -> Result<f64> {
    grid.validate()?;
    if phases.n1 != grid.n1 || phases.n2 != grid.n2 {
        return Err(Error::DimensionMismatch("phase grid does not match RVE grid".into()));
    }
    if phi.grid != *grid || phi.values.len() != 3 * grid.nodes() {
        return Err(Error::DimensionMismatch("corrector does not match RVE grid".into()));
    }
    for &p in &phases.cell_phase {
        materials.get(p)?;
    }
    let geom = grid.geometry();
    let (n1, n2, n3) = (grid.n1, grid.n2, grid.n3);
    let volume = grid.box_side * grid.box_side;
    let total = exec::sum(ExecPolicy::default(), n1 * n2 * n3, |e| {
        let i = e % n1;
        let j = (e / n1) % n2;
        let k = e / (n1 * n2);
        let q = &materials.get(phases.get(i, j)).expect("checked above").q0;
        let mut acc = 0.0;
        for &z in &GAUSS_1D {
            for &y in &GAUSS_1D {
                for &x in &GAUSS_1D {
                    let xi = [x, y, z];
                    let grads = geom.grads(xi);
                    let mut dphi = Matrix3::zeros();
                    for (a, g) in grads.iter().enumerate() {
                        let node = grid.node(
                            (i + (a & 1)) % n1,
                            (j + ((a >> 1) & 1)) % n2,
                            k + ((a >> 2) & 1),
                        );
                        dphi += phi.at(node) * g.transpose();
                    }
                    let x3 = -0.5 + (k as f64 + z) * geom.hz;
                    let strain = load.strain_at(x3) + dphi;
                    acc += q0_apply(q, &strain);
                }
            }
        }
        acc * geom.volume() / 8.0
    });
    Ok(total / volume)
}

/// Discrete minimizer of [`cell_energy`] for a fixed load.
pub fn solve_corrector(
    grid: &RVEGrid,
    phases: &PhaseGrid,
    materials: &MaterialTable,
    load: &CellLoad,
    opts: SolverOptions,
) -> Result<CorrectorSolution> {
    CellProblem::new(grid, phases, materials, opts)?.solve(load)
}

/// Symmetric 6×6 tensor in coordinates `(B11, B22, √2B12, G11, G22, √2G12)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledEffectiveTensor {
    pub matrix: Matrix6<f64>,
    pub grid: RVEGrid,
    pub cg_residuals: Vec<f64>,
    pub cg_iterations: Vec<usize>,
}

impl CoupledEffectiveTensor {
    pub fn membrane(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn coupling(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 3).into_owned()
    }

    pub fn bending(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(3, 3).into_owned()
    }

    pub fn is_spd(&self) -> bool {
        self.matrix.cholesky().is_some()
    }

    pub fn row_major(&self) -> Vec<f64> {
        let m = &self.matrix;
        (0..36).map(|k| m[(k / 6, k % 6)]).collect()
    }
}

pub fn coupled_tensor(
    grid: &RVEGrid,
    phases: &PhaseGrid,
    materials: &MaterialTable,
    opts: SolverOptions,
) -> Result<CoupledEffectiveTensor> {
    CellProblem::new(grid, phases, materials, opts)?.coupled_tensor()
}

/// `Q^γ` on symmetric 2×2 matrices, coordinates `(G11, G22, √2G12)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveBendingForm {
    pub voigt3: Matrix3<f64>,
    pub parent: CoupledEffectiveTensor,
}

impl EffectiveBendingForm {
    pub fn row_major(&self) -> Vec<f64> {
        (0..9).map(|k| self.voigt3[(k / 3, k % 3)]).collect()
    }
}

/// Schur complement `Q_GG − Q_GB Q_BB⁻¹ Q_BG`.
pub fn effective_bending(ct: &CoupledEffectiveTensor) -> Result<EffectiveBendingForm> {
    let chol = ct.membrane().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let gb = ct.coupling().transpose();
    let correction = gb * chol.solve(&ct.coupling());
    let mut voigt3 = ct.bending() - correction;
    voigt3 = 0.5 * (voigt3 + voigt3.transpose());
    Ok(EffectiveBendingForm {
        voigt3,
        parent: ct.clone(),
    })
}

/// Orthonormal Voigt vector `(G11, G22, √2·sym G12)` of a 2×2 matrix.
pub fn voigt3(g: &[[f64; 2]; 2]) -> Vector3<f64> {
    Vector3::new(g[0][0], g[1][1], SQRT2 * 0.5 * (g[0][1] + g[1][0]))
}

pub fn qgamma_eval(q: &EffectiveBendingForm, g: &[[f64; 2]; 2]) -> f64 {
    let v = voigt3(g);
    v.dot(&(q.voigt3 * v))
}

/// Both sides of the rescaling identity and their distance.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaRescaleReport {
    pub scaled_derivative: Matrix3<f64>,
    pub rescaled_cell: Matrix3<f64>,
    pub discrepancy: f64,
}

/// Solves `Q^γ` twice: on the reference cell with the `γ⁻¹ ∂3` scaling, and
/// on a cell whose in-plane period is `L/γ` (the medium compressed by `γ`)
/// with unscaled derivatives, meshed with the same element size. Returns the
/// Frobenius distance of the two forms.
pub fn gamma_rescale_check(
    realization: &MicrostructureRealization,
    grid: &RVEGrid,
    materials: &MaterialTable,
    opts: SolverOptions,
) -> Result<GammaRescaleReport> {
    grid.validate()?;
    let coarse = |n: usize| -> Result<usize> {
        let m = n as f64 / grid.gamma;
        let r = m.round();
        if (m - r).abs() > 1e-9 * m.max(1.0) || r < 2.0 || !(r as usize).is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "{n} divisions are not representable on the rescaled cell for γ = {}",
                grid.gamma
            )));
        }
        Ok(r as usize)
    };
    let (m1, m2) = (coarse(grid.n1)?, coarse(grid.n2)?);

    let phases = realization.rasterize_with(grid.n1, grid.n2, opts.policy.execution)?;
    let reference = coupled_tensor(grid, &phases, materials, opts)?;
    let reference = effective_bending(&reference)?;

    let rescaled_grid = RVEGrid {
        box_side: grid.box_side / grid.gamma,
        n1: m1,
        n2: m2,
        n3: grid.n3,
        gamma: 1.0,
    };
    let rescaled_phases = realization.rasterize_with(m1, m2, opts.policy.execution)?;
    let rescaled = coupled_tensor(&rescaled_grid, &rescaled_phases, materials, opts)?;
    let rescaled = effective_bending(&rescaled)?;

    Ok(GammaRescaleReport {
        discrepancy: (reference.voigt3 - rescaled.voigt3).norm(),
        scaled_derivative: reference.voigt3,
        rescaled_cell: rescaled.voigt3,
    })
}
