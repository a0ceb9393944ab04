//! Trilinear hexahedron on a uniform structured grid.
//!
//! Local node `a = di + 2·dj + 4·dk` sits at reference corner `(di, dj, dk)`
//! of `[0, 1]³`. Degrees of freedom are ordered node-major, component-minor.

use nalgebra::{Matrix6, SMatrix, Vector3};

use crate::material::SQRT2;

pub type ElemMat = SMatrix<f64, 24, 24>;
pub type ElemLoad = SMatrix<f64, 24, 6>;
pub type StrainOp = SMatrix<f64, 6, 24>;

/// Two-point Gauss abscissae on `[0, 1]`; weights are `1/2`.
pub const GAUSS_1D: [f64; 2] = [
    0.5 - 0.288_675_134_594_812_9,
    0.5 + 0.288_675_134_594_812_9,
];

/// Reference corner of local node `a`.
#[inline]
pub fn corner(a: usize) -> (usize, usize, usize) {
    (a & 1, (a >> 1) & 1, (a >> 2) & 1)
}

#[inline]
fn lin(d: usize, t: f64) -> f64 {
    if d == 1 {
        t
    } else {
        1.0 - t
    }
}

#[inline]
fn dlin(d: usize) -> f64 {
    if d == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Shape function values at reference point `xi`.
pub fn shape(xi: [f64; 3]) -> [f64; 8] {
    let mut n = [0.0; 8];
    for (a, v) in n.iter_mut().enumerate() {
        let (i, j, k) = corner(a);
        *v = lin(i, xi[0]) * lin(j, xi[1]) * lin(k, xi[2]);
    }
    n
}

/// Reference-coordinate gradients of the shape functions at `xi`.
pub fn shape_grad(xi: [f64; 3]) -> [[f64; 3]; 8] {
    let mut g = [[0.0; 3]; 8];
    for (a, v) in g.iter_mut().enumerate() {
        let (i, j, k) = corner(a);
        *v = [
            dlin(i) * lin(j, xi[1]) * lin(k, xi[2]),
            lin(i, xi[0]) * dlin(j) * lin(k, xi[2]),
            lin(i, xi[0]) * lin(j, xi[1]) * dlin(k),
        ];
    }
    g
}

/// Element geometry: physical sizes plus the multiplier on `∂3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub hx: f64,
    pub hy: f64,
    pub hz: f64,
    pub thickness_scale: f64,
}

impl Geometry {
    /// Scaled physical gradients `(∂1 N, ∂2 N, s·∂3 N)` at `xi`.
    pub fn grads(&self, xi: [f64; 3]) -> [Vector3<f64>; 8] {
        let g = shape_grad(xi);
        let mut out = [Vector3::zeros(); 8];
        for a in 0..8 {
            out[a] = Vector3::new(
                g[a][0] / self.hx,
                g[a][1] / self.hy,
                self.thickness_scale * g[a][2] / self.hz,
            );
        }
        out
    }

    pub fn volume(&self) -> f64 {
        self.hx * self.hy * self.hz
    }
}

/// Maps nodal displacements to the Voigt vector of `sym(∇̃φ)`.
pub fn strain_operator(grads: &[Vector3<f64>; 8]) -> StrainOp {
    let mut b = StrainOp::zeros();
    for (a, g) in grads.iter().enumerate() {
        // component c of node a contributes row c of ∇̃φ, i.e. the matrix e_c ⊗ g
        for c in 0..3 {
            let col = 3 * a + c;
            b[(c, col)] = g[c];
            for j in 0..3 {
                if j == c {
                    continue;
                }
                let pair = pair_index(c, j);
                b[(pair, col)] += g[j] / SQRT2;
            }
        }
    }
    b
}

#[inline]
fn pair_index(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (1, 2) => 3,
        (0, 2) => 4,
        (0, 1) => 5,
        _ => unreachable!("diagonal pair"),
    }
}

/// One Gauss point of the 2×2×2 rule.
pub struct GaussPoint {
    pub xi: [f64; 3],
    /// Physical weight (`1/8` of the element volume).
    pub weight: f64,
    pub strain: StrainOp,
}

pub fn gauss_points(geom: &Geometry) -> Vec<GaussPoint> {
    let mut out = Vec::with_capacity(8);
    for &z in &GAUSS_1D {
        for &y in &GAUSS_1D {
            for &x in &GAUSS_1D {
                let xi = [x, y, z];
                out.push(GaussPoint {
                    xi,
                    weight: geom.volume() / 8.0,
                    strain: strain_operator(&geom.grads(xi)),
                });
            }
        }
    }
    out
}

/// Per-phase element integrals, already divided by the cell volume.
#[derive(Clone, Debug)]
pub struct ElementData {
    /// `∫ Bᵀ C B`.
    pub stiffness: ElemMat,
    /// `∫ Bᵀ C`.
    pub load0: ElemLoad,
    /// `∫ (x3 − z_c) Bᵀ C`.
    pub load1: ElemLoad,
    pub form: Matrix6<f64>,
}

impl ElementData {
    pub fn new(geom: &Geometry, form: &Matrix6<f64>, cell_volume: f64) -> Self {
        let mut stiffness = ElemMat::zeros();
        let mut load0 = ElemLoad::zeros();
        let mut load1 = ElemLoad::zeros();
        for gp in gauss_points(geom) {
            let w = gp.weight / cell_volume;
            let btc = gp.strain.transpose() * form;
            stiffness += btc * gp.strain * w;
            load0 += btc * w;
            load1 += btc * (w * (gp.xi[2] - 0.5) * geom.hz);
        }
        Self {
            stiffness,
            load0,
            load1,
            form: *form,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        let xi = [0.2, 0.7, 0.4];
        let n = shape(xi);
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let g = shape_grad(xi);
        for d in 0..3 {
            assert!(g.iter().map(|v| v[d]).sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn rigid_translation_has_no_strain() {
        let geom = Geometry {
            hx: 0.3,
            hy: 0.5,
            hz: 0.25,
            thickness_scale: 2.0,
        };
        let b = strain_operator(&geom.grads([0.3, 0.6, 0.9]));
        let mut u = SMatrix::<f64, 24, 1>::zeros();
        for a in 0..8 {
            u[3 * a] = 1.5;
            u[3 * a + 1] = -0.2;
            u[3 * a + 2] = 0.7;
        }
        assert!((b * u).norm() < 1e-13);
    }

    #[test]
    fn stiffness_is_symmetric_psd() {
        let geom = Geometry {
            hx: 0.1,
            hy: 0.2,
            hz: 0.125,
            thickness_scale: 0.5,
        };
        let form = crate::material::isotropic_form(1.0, 2.0).unwrap().voigt;
        let e = ElementData::new(&geom, &form, 1.0);
        assert!((e.stiffness - e.stiffness.transpose()).norm() < 1e-12 * e.stiffness.norm());
        let eig = nalgebra::SymmetricEigen::new(e.stiffness);
        assert!(eig.eigenvalues.min() > -1e-10 * e.stiffness.norm());
        // rigid motions only: three translations, three infinitesimal rotations
        let tiny = eig
            .eigenvalues
            .iter()
            .filter(|&&l| l.abs() < 1e-9 * e.stiffness.norm())
            .count();
        assert_eq!(tiny, 6);
    }
}
