//! Second-order split of symmetric 2×2 fields on the periodic square:
//! Hessians `∇²ψ`, the cofactor-solenoidal remainder, and the mean.
//!
//! Derivatives are spectral. A mode `k ≠ 0` of `A` is projected onto the
//! line spanned by `k ⊗ k`, which is exactly the Fourier image of the
//! Hessians.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Symmetric 2×2 matrices `[a11, a22, a12]` on an `n1 × n2` periodic grid,
/// indexed `i * n2 + j` with `i` along `x1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymField2D {
    pub n1: usize,
    pub n2: usize,
    pub box_side: f64,
    pub values: Vec<[f64; 3]>,
}

impl SymField2D {
    pub fn zeros(n1: usize, n2: usize, box_side: f64) -> Self {
        Self {
            n1,
            n2,
            box_side,
            values: vec![[0.0; 3]; n1 * n2],
        }
    }

    pub fn constant(n1: usize, n2: usize, box_side: f64, a: [f64; 3]) -> Self {
        Self {
            n1,
            n2,
            box_side,
            values: vec![a; n1 * n2],
        }
    }

    pub fn from_fn(n1: usize, n2: usize, box_side: f64, f: impl Fn([f64; 2]) -> [f64; 3]) -> Self {
        let values = (0..n1 * n2)
            .map(|k| {
                let (i, j) = (k / n2, k % n2);
                f([
                    i as f64 * box_side / n1 as f64,
                    j as f64 * box_side / n2 as f64,
                ])
            })
            .collect();
        Self {
            n1,
            n2,
            box_side,
            values,
        }
    }

    pub fn mean(&self) -> [f64; 3] {
        let n = self.values.len() as f64;
        let mut m = [0.0; 3];
        for v in &self.values {
            for c in 0..3 {
                m[c] += v[c];
            }
        }
        m.map(|x| x / n)
    }

    /// Grid average of the Frobenius product `A : B`.
    pub fn inner(&self, other: &SymField2D) -> f64 {
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a[0] * b[0] + a[1] * b[1] + 2.0 * a[2] * b[2])
            .sum();
        s / self.values.len() as f64
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    fn check(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 || self.values.len() != self.n1 * self.n2 {
            return Err(Error::DimensionMismatch("field size does not match grid".into()));
        }
        if !(self.box_side > 0.0) {
            return Err(Error::InvalidArgument("box_side must be positive".into()));
        }
        Ok(())
    }
}

/// Periodic scalar field on the same grid layout as [`SymField2D`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField2D {
    pub n1: usize,
    pub n2: usize,
    pub box_side: f64,
    pub values: Vec<f64>,
}

impl ScalarField2D {
    pub fn from_fn(n1: usize, n2: usize, box_side: f64, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..n1 * n2)
            .map(|k| {
                let (i, j) = (k / n2, k % n2);
                f([
                    i as f64 * box_side / n1 as f64,
                    j as f64 * box_side / n2 as f64,
                ])
            })
            .collect();
        Self {
            n1,
            n2,
            box_side,
            values,
        }
    }
}

struct Spectral {
    n1: usize,
    n2: usize,
    box_side: f64,
    planner: FftPlanner<f64>,
}

impl Spectral {
    fn new(n1: usize, n2: usize, box_side: f64) -> Self {
        Self {
            n1,
            n2,
            box_side,
            planner: FftPlanner::new(),
        }
    }

    /// Angular wavenumbers of index `(i, j)`; the Nyquist index maps to `−n/2`.
    fn wavenumber(&self, i: usize, j: usize) -> [f64; 2] {
        let f = |m: usize, n: usize| {
            let s = if m <= (n - 1) / 2 { m as f64 } else { m as f64 - n as f64 };
            2.0 * PI * s / self.box_side
        };
        [f(i, self.n1), f(j, self.n2)]
    }

    fn transform(&mut self, data: &mut [Complex64], inverse: bool) {
        let (n1, n2) = (self.n1, self.n2);
        let row = if inverse {
            self.planner.plan_fft_inverse(n2)
        } else {
            self.planner.plan_fft_forward(n2)
        };
        for r in data.chunks_exact_mut(n2) {
            row.process(r);
        }
        let col = if inverse {
            self.planner.plan_fft_inverse(n1)
        } else {
            self.planner.plan_fft_forward(n1)
        };
        let mut buf = vec![Complex64::new(0.0, 0.0); n1];
        for j in 0..n2 {
            for i in 0..n1 {
                buf[i] = data[i * n2 + j];
            }
            col.process(&mut buf);
            for i in 0..n1 {
                data[i * n2 + j] = buf[i];
            }
        }
        if inverse {
            let s = 1.0 / (n1 * n2) as f64;
            for v in data.iter_mut() {
                *v *= s;
            }
        }
    }

    fn forward(&mut self, real: impl Iterator<Item = f64>) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = real.map(|x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut d, false);
        d
    }

    fn inverse(&mut self, mut d: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut d, true);
        d.into_iter().map(|c| c.re).collect()
    }
}

/// Hessian part, cofactor-solenoidal remainder and mean of a field.
#[derive(Clone, Debug)]
pub struct SecondOrderSplit {
    pub hessian: SymField2D,
    pub remainder: SymField2D,
    pub mean: [f64; 3],
    pub psi: ScalarField2D,
}

/// `A = ∇²ψ + R + Ā`, with `R` orthogonal to every Hessian. The projection
/// is diagonal in Fourier space, so `tol` only bounds the accepted
/// reconstruction error.
pub fn decompose_second_order_2d(a: &SymField2D, tol: f64) -> Result<SecondOrderSplit> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    a.check()?;
    let (n1, n2) = (a.n1, a.n2);
    let mut sp = Spectral::new(n1, n2, a.box_side);
    let hat: Vec<Vec<Complex64>> = (0..3)
        .map(|c| sp.forward(a.values.iter().map(|v| v[c])))
        .collect();
    let mut psi_hat = vec![Complex64::new(0.0, 0.0); n1 * n2];
    for i in 0..n1 {
        for j in 0..n2 {
            let idx = i * n2 + j;
            if idx == 0 {
                continue;
            }
            let k = sp.wavenumber(i, j);
            let k2 = k[0] * k[0] + k[1] * k[1];
            // Hessian of ψ in Fourier space is −k⊗k ψ̂
            let kak = hat[0][idx] * (k[0] * k[0]) + hat[1][idx] * (k[1] * k[1]) + hat[2][idx] * (2.0 * k[0] * k[1]);
            psi_hat[idx] = -kak / (k2 * k2);
        }
    }
    let mut h_hat: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); n1 * n2]; 3];
    for i in 0..n1 {
        for j in 0..n2 {
            let idx = i * n2 + j;
            let k = sp.wavenumber(i, j);
            let p = psi_hat[idx];
            h_hat[0][idx] = -p * (k[0] * k[0]);
            h_hat[1][idx] = -p * (k[1] * k[1]);
            h_hat[2][idx] = -p * (k[0] * k[1]);
        }
    }
    let comps: Vec<Vec<f64>> = h_hat.into_iter().map(|h| sp.inverse(h)).collect();
    let psi = sp.inverse(psi_hat);
    let mean = a.mean();
    let mut hessian = SymField2D::zeros(n1, n2, a.box_side);
    let mut remainder = SymField2D::zeros(n1, n2, a.box_side);
    for k in 0..n1 * n2 {
        for c in 0..3 {
            hessian.values[k][c] = comps[c][k];
            remainder.values[k][c] = a.values[k][c] - mean[c] - comps[c][k];
        }
    }
    Ok(SecondOrderSplit {
        hessian,
        remainder,
        mean,
        psi: ScalarField2D {
            n1,
            n2,
            box_side: a.box_side,
            values: psi,
        },
    })
}

/// Spectral Hessian of a periodic scalar field.
pub fn spectral_hessian(psi: &ScalarField2D) -> SymField2D {
    let (n1, n2) = (psi.n1, psi.n2);
    let mut sp = Spectral::new(n1, n2, psi.box_side);
    let hat = sp.forward(psi.values.iter().copied());
    let comp = |sp: &mut Spectral, f: &dyn Fn([f64; 2]) -> f64| {
        let mut d = hat.clone();
        for i in 0..n1 {
            for j in 0..n2 {
                let k = sp.wavenumber(i, j);
                d[i * n2 + j] *= -f(k);
            }
        }
        sp.inverse(d)
    };
    let h11 = comp(&mut sp, &|k| k[0] * k[0]);
    let h22 = comp(&mut sp, &|k| k[1] * k[1]);
    let h12 = comp(&mut sp, &|k| k[0] * k[1]);
    SymField2D {
        n1,
        n2,
        box_side: psi.box_side,
        values: (0..n1 * n2).map(|k| [h11[k], h22[k], h12[k]]).collect(),
    }
}

/// Periodic vector field `b(x) = A x + Σ_m (c_m cos(k_m·x) + s_m sin(k_m·x))`
/// with finitely many integer modes; gradients are evaluated in closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct BandLimitedField {
    pub box_side: f64,
    /// Affine part `A` (its gradient).
    pub affine: [[f64; 2]; 2],
    pub modes: Vec<FourierMode>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourierMode {
    pub k: [i32; 2],
    pub cos: [f64; 2],
    pub sin: [f64; 2],
}

impl BandLimitedField {
    /// Random coefficients in `[−1, 1]` for every mode with `|k_i| ≤ band`,
    /// damped by `1/(1 + |k|²)`.
    pub fn random(box_side: f64, band: i32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut modes = Vec::new();
        for k1 in -band..=band {
            for k2 in 0..=band {
                if k2 == 0 && k1 <= 0 {
                    continue;
                }
                let d = 1.0 / (1.0 + (k1 * k1 + k2 * k2) as f64);
                let mut c = || d * rng.random_range(-1.0..=1.0);
                modes.push(FourierMode {
                    k: [k1, k2],
                    cos: [c(), c()],
                    sin: [c(), c()],
                });
            }
        }
        Self {
            box_side,
            affine: [[0.0; 2]; 2],
            modes,
        }
    }

    pub fn value(&self, x: [f64; 2]) -> [f64; 2] {
        let mut b = [
            self.affine[0][0] * x[0] + self.affine[0][1] * x[1],
            self.affine[1][0] * x[0] + self.affine[1][1] * x[1],
        ];
        let w = 2.0 * PI / self.box_side;
        for m in &self.modes {
            let t = w * (m.k[0] as f64 * x[0] + m.k[1] as f64 * x[1]);
            for c in 0..2 {
                b[c] += m.cos[c] * t.cos() + m.sin[c] * t.sin();
            }
        }
        b
    }

    /// `∇b`, rows indexed by component.
    pub fn gradient(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let mut g = self.affine;
        let w = 2.0 * PI / self.box_side;
        for m in &self.modes {
            let kv = [w * m.k[0] as f64, w * m.k[1] as f64];
            let t = kv[0] * x[0] + kv[1] * x[1];
            for c in 0..2 {
                let amp = -m.cos[c] * t.sin() + m.sin[c] * t.cos();
                for d in 0..2 {
                    g[c][d] += amp * kv[d];
                }
            }
        }
        g
    }

    /// `cof sym ∇b` sampled on an `n1 × n2` grid.
    pub fn cof_sym_gradient(&self, n1: usize, n2: usize) -> SymField2D {
        SymField2D::from_fn(n1, n2, self.box_side, |x| {
            let g = self.gradient(x);
            let s12 = 0.5 * (g[0][1] + g[1][0]);
            [g[1][1], g[0][0], -s12]
        })
    }
}

/// `L²` norm of the discrete divergence of `cof ∇b` on an `n × n` grid.
///
/// `cof ∇b` is sampled exactly at the nodes and tested against
/// central-difference gradients, which by summation by parts is the
/// central-difference divergence. The residual is zero for affine fields and
/// decays like `h²` otherwise.
pub fn div_cof_residual(b: &BandLimitedField, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidArgument("grid needs at least 3 points per side".into()));
    }
    let h = b.box_side / n as f64;
    let cof: Vec<[[f64; 2]; 2]> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let g = b.gradient([i as f64 * h, j as f64 * h]);
            [[g[1][1], -g[1][0]], [-g[0][1], g[0][0]]]
        })
        .collect();
    let at = |i: usize, j: usize| &cof[(i % n) * n + (j % n)];
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            for r in 0..2 {
                let d1 = (at(i + 1, j)[r][0] - at(i + n - 1, j)[r][0]) / (2.0 * h);
                let d2 = (at(i, j + 1)[r][1] - at(i, j + n - 1)[r][1]) / (2.0 * h);
                acc += (d1 + d2).powi(2);
            }
        }
    }
    Ok((acc / (n * n) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_hessian_has_no_remainder() {
        let l = 2.0;
        let a = SymField2D::from_fn(16, 16, l, |x| {
            let w = 2.0 * PI / l;
            [-w * w * (w * x[0]).cos(), 0.0, 0.0]
        });
        let s = decompose_second_order_2d(&a, 1e-10).unwrap();
        assert!(s.remainder.norm() < 1e-12 * a.norm());
        assert!(s.mean.iter().all(|m| m.abs() < 1e-14));
    }

    #[test]
    fn constant_is_mean() {
        let a = SymField2D::constant(8, 8, 1.0, [1.0, -2.0, 0.5]);
        let s = decompose_second_order_2d(&a, 1e-10).unwrap();
        assert!(s.hessian.norm() < 1e-14);
        assert!(s.remainder.norm() < 1e-14);
        assert!((s.mean[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cofactor_field_is_orthogonal_to_hessians() {
        let b = BandLimitedField::random(1.0, 3, 4);
        let c = b.cof_sym_gradient(32, 32);
        let s = decompose_second_order_2d(&c, 1e-10).unwrap();
        assert!(s.hessian.norm() < 1e-12 * c.norm(), "{}", s.hessian.norm());
    }

    #[test]
    fn spectral_hessian_matches_closed_form() {
        let psi = ScalarField2D::from_fn(16, 16, 1.0, |x| (2.0 * PI * (x[0] + 2.0 * x[1])).sin());
        let h = spectral_hessian(&psi);
        let exact = SymField2D::from_fn(16, 16, 1.0, |x| {
            let s = -(2.0 * PI).powi(2) * (2.0 * PI * (x[0] + 2.0 * x[1])).sin();
            [s, 4.0 * s, 2.0 * s]
        });
        let mut d = h.clone();
        for (v, e) in d.values.iter_mut().zip(&exact.values) {
            for c in 0..3 {
                v[c] -= e[c];
            }
        }
        assert!(d.norm() < 1e-9 * exact.norm());
    }

    #[test]
    fn div_cof_affine_and_shear_vanish() {
        let affine = BandLimitedField {
            box_side: 1.0,
            affine: [[1.0, 2.0], [-0.5, 3.0]],
            modes: vec![],
        };
        assert_eq!(div_cof_residual(&affine, 16).unwrap(), 0.0);
        let shear = BandLimitedField {
            box_side: 1.0,
            affine: [[0.0; 2]; 2],
            modes: vec![FourierMode {
                k: [0, 1],
                cos: [0.0, 0.0],
                sin: [1.0, 0.0],
            }],
        };
        assert!(div_cof_residual(&shear, 16).unwrap() <= 1e-10);
    }

    #[test]
    fn div_cof_converges_second_order() {
        let b = BandLimitedField::random(1.0, 2, 9);
        let r1 = div_cof_residual(&b, 32).unwrap();
        let r2 = div_cof_residual(&b, 64).unwrap();
        let ratio = r1 / r2;
        assert!((3.0..5.0).contains(&ratio), "{ratio}");
    }
}
