//! Helmholtz split of nodal vector fields on `T² × [−½, ½]`.
//!
//! Fields live on the cell-solver grid. The inner product is the lumped mass
//! `⟨f, g⟩ = Σ_n w_n f_n·g_n`, with weights normalized to sum to one. The
//! discrete gradient of a nodal scalar `ψ` is the lumped-mass projection of
//! the trilinear gradient, `(Gψ)_n = w_n⁻¹ ∫ N_n ∇ψ_h`, and its adjoint is the
//! weak divergence `(Gᵀ M f)_a = ∫ ∇N_a · f_h`.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cell_solver::element::{shape, shape_grad, GAUSS_1D};
use crate::cell_solver::operator::scatter_nodes;
use crate::cell_solver::{read_field_dump, write_field_dump, RVEGrid};
use crate::cg::{self, CgReport, LinearOperator, Projector};
use crate::error::{Error, Result};
use crate::exec::{self, ExecPolicy};

#[derive(Clone, Debug, PartialEq)]
pub struct MixedField {
    pub grid: RVEGrid,
    /// `values[3 * node + component]`.
    pub values: Vec<f64>,
}

impl MixedField {
    pub fn zeros(grid: RVEGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; 3 * grid.nodes()],
        }
    }

    pub fn constant(grid: RVEGrid, c: [f64; 3]) -> Self {
        let values = (0..3 * grid.nodes()).map(|k| c[k % 3]).collect();
        Self { grid, values }
    }

    /// Entries drawn uniformly from `[−1, 1]`.
    pub fn random(grid: RVEGrid, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..3 * grid.nodes())
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        Self { grid, values }
    }

    /// Samples `f` at the nodes.
    pub fn from_fn(grid: RVEGrid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut values = Vec::with_capacity(3 * grid.nodes());
        for n in 0..grid.nodes() {
            values.extend_from_slice(&f(grid.node_position(n)));
        }
        Self { grid, values }
    }

    pub fn at(&self, node: usize) -> Vector3<f64> {
        Vector3::new(
            self.values[3 * node],
            self.values[3 * node + 1],
            self.values[3 * node + 2],
        )
    }

    pub fn write_dump<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        write_field_dump(&mut w, &self.grid, &self.values)
    }

    pub fn read_dump<R: std::io::Read>(r: R) -> Result<Self> {
        let (grid, values) = read_field_dump(r)?;
        if values.len() != 3 * grid.nodes() {
            return Err(Error::DimensionMismatch("field dump size".into()));
        }
        Ok(Self { grid, values })
    }
}

/// Grid bookkeeping shared by the gradient, divergence and inner product.
#[derive(Clone, Debug)]
pub struct MixedGrid {
    grid: RVEGrid,
    /// Lumped mass per node, normalized to sum to one.
    weights: Vec<f64>,
    /// Shape values and unscaled gradients at the eight Gauss points.
    shape_at: [[f64; 8]; 8],
    grad_at: [[Vector3<f64>; 8]; 8],
    /// Gauss weight divided by the cell volume.
    gauss_weight: f64,
    policy: ExecPolicy,
}

impl MixedGrid {
    pub fn new(grid: &RVEGrid, policy: ExecPolicy) -> Result<Self> {
        grid.validate()?;
        let geom = grid.geometry();
        let mut shape_at = [[0.0; 8]; 8];
        let mut grad_at = [[Vector3::zeros(); 8]; 8];
        let mut q = 0;
        for &z in &GAUSS_1D {
            for &y in &GAUSS_1D {
                for &x in &GAUSS_1D {
                    let xi = [x, y, z];
                    shape_at[q] = shape(xi);
                    let g = shape_grad(xi);
                    for a in 0..8 {
                        grad_at[q][a] =
                            Vector3::new(g[a][0] / geom.hx, g[a][1] / geom.hy, g[a][2] / geom.hz);
                    }
                    q += 1;
                }
            }
        }
        let total = grid.box_side * grid.box_side;
        let cell = geom.volume() / total;
        let layer = grid.n1 * grid.n2;
        let weights = (0..grid.nodes())
            .map(|n| {
                let k = n / layer;
                if k == 0 || k == grid.n3 {
                    0.5 * cell
                } else {
                    cell
                }
            })
            .collect();
        Ok(Self {
            grid: *grid,
            weights,
            shape_at,
            grad_at,
            gauss_weight: cell / 8.0,
            policy,
        })
    }

    pub fn grid(&self) -> &RVEGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn elements(&self) -> usize {
        self.grid.n1 * self.grid.n2 * self.grid.n3
    }

    fn dims(&self) -> [usize; 3] {
        [self.grid.n1, self.grid.n2, self.grid.n3]
    }

    fn element_nodes(&self, e: usize) -> [usize; 8] {
        let g = &self.grid;
        let i = e % g.n1;
        let j = (e / g.n1) % g.n2;
        let k = e / (g.n1 * g.n2);
        let mut out = [0; 8];
        for (a, o) in out.iter_mut().enumerate() {
            *o = g.node((i + (a & 1)) % g.n1, (j + ((a >> 1) & 1)) % g.n2, k + ((a >> 2) & 1));
        }
        out
    }

    /// Lumped-mass inner product of two vector fields.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        exec::sum(self.policy, self.weights.len(), |n| {
            self.weights[n]
                * (f[3 * n] * g[3 * n] + f[3 * n + 1] * g[3 * n + 1] + f[3 * n + 2] * g[3 * n + 2])
        })
    }

    /// Weighted mean vector.
    pub fn mean(&self, f: &[f64]) -> [f64; 3] {
        let mut m = [0.0; 3];
        for (c, mc) in m.iter_mut().enumerate() {
            *mc = exec::sum(self.policy, self.weights.len(), |n| self.weights[n] * f[3 * n + c]);
        }
        m
    }

    /// Discrete gradient `Gψ` of a nodal scalar.
    pub fn gradient(&self, psi: &[f64]) -> Vec<f64> {
        let mut scratch = vec![0.0; 24 * self.elements()];
        exec::for_each_chunk_mut(self.policy.execution, &mut scratch, 24, |e, out| {
            let nodes = self.element_nodes(e);
            for q in 0..8 {
                let mut g = Vector3::zeros();
                for a in 0..8 {
                    g += self.grad_at[q][a] * psi[nodes[a]];
                }
                for a in 0..8 {
                    let w = self.gauss_weight * self.shape_at[q][a];
                    for c in 0..3 {
                        out[3 * a + c] += w * g[c];
                    }
                }
            }
        });
        let mut out = vec![0.0; 3 * self.grid.nodes()];
        scatter_nodes(self.dims(), 3, &scratch, &mut out, self.policy.execution);
        exec::for_each_chunk_mut(self.policy.execution, &mut out, 3, |n, o| {
            for v in o {
                *v /= self.weights[n];
            }
        });
        out
    }

    /// Weak divergence `a ↦ ∫ ∇N_a · f_h`, i.e. `Gᵀ M f`.
    pub fn weak_divergence(&self, f: &[f64]) -> Vec<f64> {
        let mut scratch = vec![0.0; 8 * self.elements()];
        exec::for_each_chunk_mut(self.policy.execution, &mut scratch, 8, |e, out| {
            let nodes = self.element_nodes(e);
            for q in 0..8 {
                let mut fq = Vector3::zeros();
                for a in 0..8 {
                    let n = nodes[a];
                    fq += Vector3::new(f[3 * n], f[3 * n + 1], f[3 * n + 2]) * self.shape_at[q][a];
                }
                for a in 0..8 {
                    out[a] += self.gauss_weight * self.grad_at[q][a].dot(&fq);
                }
            }
        });
        let mut out = vec![0.0; self.grid.nodes()];
        scatter_nodes(self.dims(), 1, &scratch, &mut out, self.policy.execution);
        out
    }

    fn laplace_diagonal(&self) -> Vec<f64> {
        let mut scratch = vec![0.0; 8 * self.elements()];
        exec::for_each_chunk_mut(self.policy.execution, &mut scratch, 8, |_, out| {
            for q in 0..8 {
                for a in 0..8 {
                    out[a] += self.gauss_weight * self.grad_at[q][a].norm_squared();
                }
            }
        });
        let mut out = vec![0.0; self.grid.nodes()];
        scatter_nodes(self.dims(), 1, &scratch, &mut out, self.policy.execution);
        out
    }
}

struct NormalOperator<'a> {
    mg: &'a MixedGrid,
    diag: Vec<f64>,
}

impl LinearOperator for NormalOperator<'_> {
    fn len(&self) -> usize {
        self.mg.grid.nodes()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.mg.gradient(x);
        y.copy_from_slice(&self.mg.weak_divergence(&g));
    }

    fn diagonal(&self) -> Vec<f64> {
        self.diag.clone()
    }
}

#[derive(Clone, Debug)]
pub struct MixedDecomposition {
    pub potential: MixedField,
    pub solenoidal: MixedField,
    pub mean: [f64; 3],
    /// Nodal potential, mean zero.
    pub psi: Vec<f64>,
    pub report: CgReport,
    /// Lumped-mass weights used for every inner product of this split.
    pub weights: Vec<f64>,
}

impl MixedDecomposition {
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        (0..self.weights.len())
            .map(|n| {
                self.weights[n]
                    * (f[3 * n] * g[3 * n] + f[3 * n + 1] * g[3 * n + 1] + f[3 * n + 2] * g[3 * n + 2])
            })
            .sum()
    }

    /// Sum of the three parts.
    pub fn reconstruct(&self) -> MixedField {
        let mut out = self.potential.clone();
        for (k, v) in out.values.iter_mut().enumerate() {
            *v += self.solenoidal.values[k] + self.mean[k % 3];
        }
        out
    }
}

/// Splits `f` into a discrete gradient, a part orthogonal to all discrete
/// gradients, and its mean.
pub fn decompose_mixed(f: &MixedField, tol: f64, policy: ExecPolicy) -> Result<MixedDecomposition> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let mg = MixedGrid::new(&f.grid, policy)?;
    if f.values.len() != 3 * f.grid.nodes() {
        return Err(Error::DimensionMismatch("field size does not match grid".into()));
    }
    let mean = mg.mean(&f.values);
    let centered: Vec<f64> = f
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| v - mean[k % 3])
        .collect();
    let rhs = mg.weak_divergence(&centered);
    let op = NormalOperator {
        diag: mg.laplace_diagonal(),
        mg: &mg,
    };
    // |rhs_a| ≤ ‖∇N_a‖ ‖f‖, so this bounds ‖rhs‖ for any field of this size.
    let bound = (op.diag.iter().sum::<f64>() * mg.inner(&centered, &centered)).sqrt();
    let floor = 1e-3 * tol * bound;
    let cap = cg::default_iteration_cap(rhs.len()).max(1000);
    let (psi, report) =
        cg::solve_with_floor(&op, &rhs, Some(Projector { stride: 1 }), tol, floor, cap, policy)?;

    let mut pot = mg.gradient(&psi);
    // Testing with ψ = x3 already forces a zero mean; remove round-off.
    let pm = mg.mean(&pot);
    for (k, v) in pot.iter_mut().enumerate() {
        *v -= pm[k % 3];
    }
    let sol: Vec<f64> = centered.iter().zip(&pot).map(|(c, p)| c - p).collect();
    Ok(MixedDecomposition {
        potential: MixedField {
            grid: f.grid,
            values: pot,
        },
        solenoidal: MixedField {
            grid: f.grid,
            values: sol,
        },
        mean,
        psi,
        report,
        weights: mg.weights,
    })
}

/// Normalized pairwise inner products of the three parts.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct OrthogonalityReport {
    pub potential_solenoidal: f64,
    pub potential_mean: f64,
    pub solenoidal_mean: f64,
}

impl OrthogonalityReport {
    pub fn max(&self) -> f64 {
        self.potential_solenoidal
            .abs()
            .max(self.potential_mean.abs())
            .max(self.solenoidal_mean.abs())
    }
}

/// Inner products divided by `‖f‖²`, where `f` is the reconstructed field.
pub fn orthogonality_report(d: &MixedDecomposition) -> OrthogonalityReport {
    let f = d.reconstruct();
    let norm2 = d.inner(&f.values, &f.values);
    let scale = if norm2 > 0.0 { 1.0 / norm2 } else { 0.0 };
    let mean = MixedField::constant(d.potential.grid, d.mean);
    OrthogonalityReport {
        potential_solenoidal: scale * d.inner(&d.potential.values, &d.solenoidal.values),
        potential_mean: scale * d.inner(&d.potential.values, &mean.values),
        solenoidal_mean: scale * d.inner(&d.solenoidal.values, &mean.values),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> RVEGrid {
        RVEGrid::new(1.0, 8, 8, 4, 1.0).unwrap()
    }

    fn policy() -> ExecPolicy {
        ExecPolicy::default()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let n: f64 = b.iter().map(|y| y * y).sum();
        (d / n.max(1e-300)).sqrt()
    }

    #[test]
    fn weights_sum_to_one() {
        let mg = MixedGrid::new(&grid(), policy()).unwrap();
        assert!((mg.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_of_linear_thickness_profile_is_exact() {
        let g = grid();
        let mg = MixedGrid::new(&g, policy()).unwrap();
        let psi: Vec<f64> = (0..g.nodes()).map(|n| g.node_position(n)[2]).collect();
        let gr = mg.gradient(&psi);
        for n in 0..g.nodes() {
            assert!((gr[3 * n + 2] - 1.0).abs() < 1e-12);
            assert!(gr[3 * n].abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_is_all_mean() {
        let f = MixedField::constant(grid(), [0.5, -1.0, 2.0]);
        let d = decompose_mixed(&f, 1e-10, policy()).unwrap();
        assert_eq!(d.mean, [0.5, -1.0, 2.0]);
        assert!(d.potential.values.iter().all(|&v| v == 0.0));
        assert!(d.solenoidal.values.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_field_is_potential() {
        let g = grid();
        let mg = MixedGrid::new(&g, policy()).unwrap();
        let psi: Vec<f64> = (0..g.nodes())
            .map(|n| (2.0 * PI * g.node_position(n)[0]).sin())
            .collect();
        let f = MixedField {
            grid: g,
            values: mg.gradient(&psi),
        };
        let d = decompose_mixed(&f, 1e-12, policy()).unwrap();
        assert!(rel(&d.potential.values, &f.values) < 1e-9);
        assert!(d.mean.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn curl_field_is_solenoidal() {
        let g = grid();
        let mg = MixedGrid::new(&g, policy()).unwrap();
        let psi: Vec<f64> = (0..g.nodes())
            .map(|n| {
                let p = g.node_position(n);
                (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).cos() + (4.0 * PI * p[1]).sin()
            })
            .collect();
        let gr = mg.gradient(&psi);
        let mut f = MixedField::zeros(g);
        for n in 0..g.nodes() {
            f.values[3 * n] = -gr[3 * n + 1];
            f.values[3 * n + 1] = gr[3 * n];
        }
        let d = decompose_mixed(&f, 1e-12, policy()).unwrap();
        assert!(rel(&d.solenoidal.values, &f.values) < 1e-9);
    }

    #[test]
    fn random_field_split_is_orthogonal() {
        let f = MixedField::random(grid(), 7);
        let d = decompose_mixed(&f, 1e-10, policy()).unwrap();
        let r = orthogonality_report(&d);
        assert!(r.max() < 1e-8, "{r:?}");
        assert!(rel(&d.reconstruct().values, &f.values) < 1e-12);
    }

    #[test]
    fn zero_field_report_is_zero() {
        let d = decompose_mixed(&MixedField::zeros(grid()), 1e-10, policy()).unwrap();
        let r = orthogonality_report(&d);
        assert_eq!(r.max(), 0.0);
    }

    #[test]
    fn dump_roundtrip() {
        let f = MixedField::random(grid(), 1);
        let mut buf = Vec::new();
        f.write_dump(&mut buf).unwrap();
        assert_eq!(MixedField::read_dump(&buf[..]).unwrap(), f);
    }
}
