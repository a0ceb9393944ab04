//! Per-phase stored energies and their quadratic forms at the identity.
//!
//! Symmetric 3×3 matrices are stored in orthonormal Voigt coordinates
//! `(E11, E22, E33, √2·E23, √2·E13, √2·E12)`, so a quadratic form is a plain
//! 6×6 matrix and its eigenvalues are the coercivity constants.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microstructure::PhaseId;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Orthonormal Voigt vector of `sym m`.
pub fn voigt6(m: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(
        m[(0, 0)],
        m[(1, 1)],
        m[(2, 2)],
        (m[(1, 2)] + m[(2, 1)]) / SQRT2,
        (m[(0, 2)] + m[(2, 0)]) / SQRT2,
        (m[(0, 1)] + m[(1, 0)]) / SQRT2,
    )
}

/// Inverse of [`voigt6`] on symmetric matrices.
pub fn from_voigt6(v: &Vector6<f64>) -> Matrix3<f64> {
    let (a, b, c) = (v[3] / SQRT2, v[4] / SQRT2, v[5] / SQRT2);
    Matrix3::new(v[0], c, b, c, v[1], a, b, a, v[2])
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticFormQ0 {
    pub voigt: Matrix6<f64>,
}

/// `Q(G) = 2μ|sym G|² + λ (tr G)²`.
pub fn isotropic_form(mu: f64, lambda: f64) -> Result<QuadraticFormQ0> {
    if !(mu > 0.0) {
        return Err(Error::InvalidMaterial(format!("shear modulus must be positive, got {mu}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidMaterial(format!("lambda must be nonnegative, got {lambda}")));
    }
    let mut voigt = Matrix6::identity() * (2.0 * mu);
    for i in 0..3 {
        for j in 0..3 {
            voigt[(i, j)] += lambda;
        }
    }
    Ok(QuadraticFormQ0 { voigt })
}

/// `vᵀ C v` with `v` the Voigt vector of `sym m`.
pub fn q0_apply(q: &QuadraticFormQ0, m: &Matrix3<f64>) -> f64 {
    let v = voigt6(m);
    v.dot(&(q.voigt * v))
}

/// Extreme eigenvalues `(c1, c2)` of the Voigt matrix.
pub fn coercivity_constants(q: &QuadraticFormQ0) -> Result<(f64, f64)> {
    let asym = (q.voigt - q.voigt.transpose()).abs().max();
    if asym > 1e-12 * q.voigt.abs().max().max(1.0) {
        return Err(Error::InvalidMaterial("quadratic form is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(q.voigt);
    let c1 = eig.eigenvalues.min();
    let c2 = eig.eigenvalues.max();
    if !(c1 > 0.0) {
        return Err(Error::InvalidMaterial(format!(
            "quadratic form is not coercive (min eigenvalue {c1})"
        )));
    }
    Ok((c1, c2))
}

/// Entry of the material table as it appears in JSON.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub phase_id: PhaseId,
    pub mu: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMaterial {
    pub phase_id: PhaseId,
    pub lame_mu: f64,
    pub lame_lambda: f64,
    pub q0: QuadraticFormQ0,
}

impl PhaseMaterial {
    pub fn new(phase_id: PhaseId, mu: f64, lambda: f64) -> Result<Self> {
        Ok(Self {
            phase_id,
            lame_mu: mu,
            lame_lambda: lambda,
            q0: isotropic_form(mu, lambda)?,
        })
    }

    pub fn spec(&self) -> MaterialSpec {
        MaterialSpec {
            phase_id: self.phase_id,
            mu: self.lame_mu,
            lambda: self.lame_lambda,
        }
    }
}

/// St. Venant–Kirchhoff energy `W(F) = (μ/2)|FᵀF − I|² + (λ/4)(tr(FᵀF − I))²`,
/// normalized so that `W(I + G) = Q(G) + O(|G|³)` with `Q` the phase's `q0`.
pub fn svk_energy(phase: &PhaseMaterial, f: &Matrix3<f64>) -> f64 {
    let e = f.transpose() * f - Matrix3::identity();
    let tr = e.trace();
    0.5 * phase.lame_mu * e.norm_squared() + 0.25 * phase.lame_lambda * tr * tr
}

/// `|W(I + tG) − Q(tG)| / (t²|G|²)` for each `t`.
pub fn taylor_check(phase: &PhaseMaterial, g: &Matrix3<f64>, t_values: &[f64]) -> Result<Vec<f64>> {
    if t_values.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidArgument("t values must be positive".into()));
    }
    if t_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("t values must be decreasing".into()));
    }
    let g2 = g.norm_squared();
    Ok(t_values
        .iter()
        .map(|&t| {
            if g2 == 0.0 {
                return 0.0;
            }
            let tg = g * t;
            let w = svk_energy(phase, &(Matrix3::identity() + tg));
            (w - q0_apply(&phase.q0, &tg)).abs() / (t * t * g2)
        })
        .collect())
}

/// Frobenius distance from `f` to `SO(3)`.
pub fn dist_so3(f: &Matrix3<f64>) -> f64 {
    let svd = f.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, d)) * v_t;
    (f - r).norm()
}

/// Lookup from phase id to material.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaterialTable {
    entries: Vec<PhaseMaterial>,
}

impl MaterialTable {
    pub fn new(entries: Vec<PhaseMaterial>) -> Result<Self> {
        for (k, e) in entries.iter().enumerate() {
            if entries[..k].iter().any(|o| o.phase_id == e.phase_id) {
                return Err(Error::InvalidMaterial(format!("duplicate phase {}", e.phase_id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_specs(specs: &[MaterialSpec]) -> Result<Self> {
        Self::new(
            specs
                .iter()
                .map(|s| PhaseMaterial::new(s.phase_id, s.mu, s.lambda))
                .collect::<Result<_>>()?,
        )
    }

    pub fn single(phase: PhaseId, mu: f64, lambda: f64) -> Result<Self> {
        Self::new(vec![PhaseMaterial::new(phase, mu, lambda)?])
    }

    pub fn get(&self, phase: PhaseId) -> Result<&PhaseMaterial> {
        self.entries
            .iter()
            .find(|e| e.phase_id == phase)
            .ok_or(Error::MissingPhase(phase))
    }

    pub fn position(&self, phase: PhaseId) -> Result<usize> {
        self.entries
            .iter()
            .position(|e| e.phase_id == phase)
            .ok_or(Error::MissingPhase(phase))
    }

    pub fn entries(&self) -> &[PhaseMaterial] {
        &self.entries
    }

    pub fn specs(&self) -> Vec<MaterialSpec> {
        self.entries.iter().map(PhaseMaterial::spec).collect()
    }

    /// `(min c1, max c2)` over all phases.
    pub fn coercivity_bounds(&self) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for e in &self.entries {
            let (c1, c2) = coercivity_constants(&e.q0)?;
            lo = lo.min(c1);
            hi = hi.max(c2);
        }
        Ok((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn e11() -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        m[(0, 0)] = 1.0;
        m
    }

    #[test]
    fn lambda_zero_is_twice_identity() {
        let q = isotropic_form(1.0, 0.0).unwrap();
        assert_eq!(q.voigt, Matrix6::identity() * 2.0);
    }

    #[test]
    fn direct_evaluations() {
        let q = isotropic_form(1.0, 1.0).unwrap();
        assert_relative_eq!(q0_apply(&q, &e11()), 3.0, epsilon = 1e-14);
        assert_relative_eq!(q0_apply(&q, &Matrix3::identity()), 15.0, epsilon = 1e-13);
        assert_eq!(q0_apply(&q, &Matrix3::zeros()), 0.0);
        let skew = Matrix3::new(0.0, 1.0, -2.0, -1.0, 0.0, 0.5, 2.0, -0.5, 0.0);
        assert!(q0_apply(&q, &skew).abs() < 1e-14);
    }

    #[test]
    fn coercivity_examples() {
        let c = |mu, la| coercivity_constants(&isotropic_form(mu, la).unwrap()).unwrap();
        let (a, b) = c(1.0, 0.0);
        assert_relative_eq!(a, 2.0, epsilon = 1e-12);
        assert_relative_eq!(b, 2.0, epsilon = 1e-12);
        let (a, b) = c(1.0, 1.0);
        assert_relative_eq!(a, 2.0, epsilon = 1e-12);
        assert_relative_eq!(b, 5.0, epsilon = 1e-12);
        let (a, b) = c(2.0, 0.0);
        assert_relative_eq!(a, 4.0, epsilon = 1e-12);
        assert_relative_eq!(b, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_moduli() {
        assert!(isotropic_form(0.0, 1.0).is_err());
        assert!(isotropic_form(-1.0, 1.0).is_err());
        assert!(isotropic_form(1.0, -0.1).is_err());
    }

    #[test]
    fn non_coercive_form_flagged() {
        let q = QuadraticFormQ0 {
            voigt: Matrix6::from_diagonal(&Vector6::new(1.0, 1.0, 1.0, 1.0, 1.0, 0.0)),
        };
        assert!(coercivity_constants(&q).is_err());
    }

    #[test]
    fn svk_zero_on_identity_and_rotation() {
        let p = PhaseMaterial::new(0, 1.3, 0.7).unwrap();
        assert_eq!(svk_energy(&p, &Matrix3::identity()), 0.0);
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        assert!(svk_energy(&p, &r) < 1e-14);
    }

    #[test]
    fn svk_matches_q0_near_identity() {
        let p = PhaseMaterial::new(0, 1.0, 1.0).unwrap();
        let g = e11() * 1e-4;
        let w = svk_energy(&p, &(Matrix3::identity() + g));
        assert_relative_eq!(w, q0_apply(&p.q0, &g), max_relative = 1e-3);
    }

    #[test]
    fn taylor_zero_load() {
        let p = PhaseMaterial::new(0, 1.0, 1.0).unwrap();
        let r = taylor_check(&p, &Matrix3::zeros(), &[0.1, 0.01]).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
        assert!(taylor_check(&p, &e11(), &[0.01, 0.1]).is_err());
    }

    #[test]
    fn taylor_residual_for_uniaxial_stretch() {
        // W(I + t e11) = (μ/2 + λ/4)(2t + t²)², Q(t e11) = (2μ + λ) t²:
        // residual = (2μ + λ)(t + t²/4).
        let p = PhaseMaterial::new(0, 1.0, 1.0).unwrap();
        let ts = [1e-1, 5e-2, 1e-3];
        let r = taylor_check(&p, &e11(), &ts).unwrap();
        for (t, got) in ts.iter().zip(r) {
            assert_relative_eq!(got, 3.0 * (t + t * t / 4.0), max_relative = 1e-6);
        }
    }

    #[test]
    fn voigt_roundtrip_and_norm() {
        let m = Matrix3::new(1.0, 2.0, 3.0, 2.0, 5.0, 6.0, 3.0, 6.0, 9.0);
        assert_relative_eq!(from_voigt6(&voigt6(&m)), m, epsilon = 1e-14);
        assert_relative_eq!(voigt6(&m).norm_squared(), m.norm_squared(), epsilon = 1e-12);
    }

    #[test]
    fn dist_so3_basics() {
        let r = nalgebra::Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner();
        assert!(dist_so3(&r) < 1e-12);
        assert_relative_eq!(dist_so3(&(Matrix3::identity() * 2.0)), 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn table_lookup() {
        let t = MaterialTable::from_specs(&[
            MaterialSpec { phase_id: 3, mu: 1.0, lambda: 0.0 },
            MaterialSpec { phase_id: 5, mu: 4.0, lambda: 1.0 },
        ])
        .unwrap();
        assert_eq!(t.get(5).unwrap().lame_mu, 4.0);
        assert!(matches!(t.get(4), Err(Error::MissingPhase(4))));
        let (c1, c2) = t.coercivity_bounds().unwrap();
        assert_relative_eq!(c1, 2.0, epsilon = 1e-12);
        assert_relative_eq!(c2, 11.0, epsilon = 1e-12);
    }
}
