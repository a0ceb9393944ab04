//! Recovery sequences for the bending energy.
//!
//! For an isometry `y` with normal `n` and frame `R = (∂1y | ∂2y | n)`, the
//! deformation
//!
//! ```text
//! u^h(x', x3) = y + h x3 n + hε χ(x') R g(x'/ε, x3),     ε = h/γ,
//! ```
//!
//! with `g` the cell corrector for the patch-averaged second fundamental form,
//! has scaled energy `I^h = h⁻² ∫ W(∇_h u^h)` close to `∫ Q^γ(II)`. The cutoff
//! `χ` vanishes within `δ` of each patch edge.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cell_solver::{
    qgamma_eval, CellLoad, CellProblem, CorrectorField, EffectiveBendingForm, RVEGrid,
    SolverOptions,
};
use crate::error::{Error, Result};
use crate::exec::{self, ExecPolicy};
use crate::material::{svk_energy, MaterialTable};
use crate::microstructure::{wrap, MicrostructureRealization, PhaseGrid};

pub const SIGN_CONVENTION: &str = "II_ab = d_a y . d_b n, n = d_1 y x d_2 y";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn unit() -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsometryKind {
    Flat,
    Cylinder,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsometrySpec {
    pub kind: IsometryKind,
    /// Ignored for flat isometries.
    pub radius: f64,
    pub domain: Rect,
}

/// Derivatives of an isometry at one point.
#[derive(Clone, Copy, Debug)]
pub struct Frame {
    pub y: Vector3<f64>,
    pub dy: [Vector3<f64>; 2],
    pub n: Vector3<f64>,
    pub dn: [Vector3<f64>; 2],
    /// `d2y[a][b] = ∂a ∂b y`.
    pub d2y: [[Vector3<f64>; 2]; 2],
}

impl Frame {
    /// `R = (∂1y | ∂2y | n)`.
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.dy[0], self.dy[1], self.n])
    }

    /// `∂a R`.
    pub fn rotation_derivative(&self, a: usize) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.d2y[a][0], self.d2y[a][1], self.dn[a]])
    }

    pub fn second_fundamental_form(&self) -> [[f64; 2]; 2] {
        let mut ii = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                ii[a][b] = self.dy[a].dot(&self.dn[b]);
            }
        }
        ii
    }
}

impl IsometrySpec {
    pub fn flat(domain: Rect) -> Self {
        Self {
            kind: IsometryKind::Flat,
            radius: f64::INFINITY,
            domain,
        }
    }

    pub fn frame(&self, x: [f64; 2]) -> Frame {
        let z = Vector3::zeros();
        match self.kind {
            IsometryKind::Flat => Frame {
                y: Vector3::new(x[0], x[1], 0.0),
                dy: [Vector3::x(), Vector3::y()],
                n: Vector3::z(),
                dn: [z, z],
                d2y: [[z, z], [z, z]],
            },
            IsometryKind::Cylinder => {
                let r = self.radius;
                let (s, c) = (x[0] / r).sin_cos();
                Frame {
                    y: Vector3::new(r * s, x[1], r * c),
                    dy: [Vector3::new(c, 0.0, -s), Vector3::y()],
                    n: Vector3::new(s, 0.0, c),
                    dn: [Vector3::new(c / r, 0.0, -s / r), z],
                    d2y: [[Vector3::new(-s / r, 0.0, -c / r), z], [z, z]],
                }
            }
        }
    }

    pub fn second_fundamental_form(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        self.frame(x).second_fundamental_form()
    }
}

pub fn cylinder_isometry(r: f64, domain: Rect) -> Result<IsometrySpec> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    Ok(IsometrySpec {
        kind: IsometryKind::Cylinder,
        radius: r,
        domain,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOrders {
    /// In-plane subdivisions of one corrector element.
    pub cells_per_element: usize,
    /// Gauss points per direction in each in-plane cell.
    pub gauss_in_plane: usize,
    /// Gauss points per corrector layer through the thickness.
    pub gauss_per_layer: usize,
    /// Gauss points per direction for the limit functional.
    pub limit_order: usize,
}

impl Default for QuadratureOrders {
    fn default() -> Self {
        Self {
            cells_per_element: 1,
            gauss_in_plane: 2,
            gauss_per_layer: 2,
            limit_order: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub h_schedule: Vec<f64>,
    pub gamma: f64,
    pub eta: f64,
    pub delta: f64,
    #[serde(default)]
    pub quadrature: QuadratureOrders,
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_schedule.is_empty() || self.h_schedule.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::InvalidArgument("thicknesses must be positive".into()));
        }
        if self.h_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("h_schedule must be strictly decreasing".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        if !(self.eta > 0.0) || !(self.delta > 0.0) || self.delta >= 0.5 * self.eta {
            return Err(Error::InvalidArgument(format!(
                "need 0 < delta < eta/2, got delta = {}, eta = {}",
                self.delta, self.eta
            )));
        }
        let q = &self.quadrature;
        if q.cells_per_element == 0 || q.gauss_in_plane == 0 || q.gauss_per_layer == 0 || q.limit_order == 0 {
            return Err(Error::InvalidArgument("quadrature orders must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self, h: f64) -> f64 {
        h / self.gamma
    }
}

/// Square patches of side `η` tiling the domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Patches {
    pub domain: Rect,
    pub eta: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Patches {
    pub fn new(domain: Rect, eta: f64) -> Result<Self> {
        let count = |len: f64| -> Result<usize> {
            let m = len / eta;
            if (m - m.round()).abs() > 1e-9 * m.max(1.0) || m.round() < 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "domain side {len} is not a multiple of eta = {eta}"
                )));
            }
            Ok(m.round() as usize)
        };
        Ok(Self {
            domain,
            eta,
            nx: count(domain.x1 - domain.x0)?,
            ny: count(domain.y1 - domain.y0)?,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rect(&self, i: usize) -> Rect {
        let (a, b) = (i % self.nx, i / self.nx);
        Rect {
            x0: self.domain.x0 + a as f64 * self.eta,
            y0: self.domain.y0 + b as f64 * self.eta,
            x1: self.domain.x0 + (a + 1) as f64 * self.eta,
            y1: self.domain.y0 + (b + 1) as f64 * self.eta,
        }
    }

    /// Patch containing `x`; points on shared edges go to the lower patch.
    pub fn locate(&self, x: [f64; 2]) -> usize {
        let a = (((x[0] - self.domain.x0) / self.eta).floor().max(0.0) as usize).min(self.nx - 1);
        let b = (((x[1] - self.domain.y0) / self.eta).floor().max(0.0) as usize).min(self.ny - 1);
        b * self.nx + a
    }
}

/// `ρ(s) = 0` for `s ≤ δ`, `3t² − 2t³` with `t = (s − δ)/δ` up to `s = 2δ`,
/// and `1` beyond. Returns `(ρ, ρ')`.
fn ramp(s: f64, delta: f64) -> (f64, f64) {
    if s <= delta {
        (0.0, 0.0)
    } else if s >= 2.0 * delta {
        (1.0, 0.0)
    } else {
        let t = (s - delta) / delta;
        (t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t) / delta)
    }
}

/// Cutoff `χ(x) = ρ(d1) ρ(d2)` of `rect` and its gradient, where `d_a` is the
/// distance to the nearer edge in direction `a`.
pub fn cutoff(rect: &Rect, delta: f64, x: [f64; 2]) -> (f64, [f64; 2]) {
    let side = |lo: f64, hi: f64, t: f64| {
        if t - lo <= hi - t {
            let (r, dr) = ramp(t - lo, delta);
            (r, dr)
        } else {
            let (r, dr) = ramp(hi - t, delta);
            (r, -dr)
        }
    };
    let (r1, d1) = side(rect.x0, rect.x1, x[0]);
    let (r2, d2) = side(rect.y0, rect.y1, x[1]);
    (r1 * r2, [d1 * r2, r1 * d2])
}

/// Per-patch correctors: each is the cell corrector for bending load equal
/// to the patch average of `II`, with zero membrane load.
#[derive(Clone, Debug)]
pub struct PatchCorrectors {
    pub grid: RVEGrid,
    pub phases: PhaseGrid,
    pub loads: Vec<[[f64; 2]; 2]>,
    pub fields: Vec<CorrectorField>,
}

impl PatchCorrectors {
    /// Zero correctors on every patch.
    pub fn zero(grid: RVEGrid, phases: PhaseGrid, patches: &Patches) -> Self {
        Self {
            grid,
            phases,
            loads: vec![[[0.0; 2]; 2]; patches.len()],
            fields: vec![CorrectorField::zeros(grid); patches.len()],
        }
    }
}

/// Average of `II` over `rect` by tensor Gauss quadrature.
fn average_ii(iso: &IsometrySpec, rect: &Rect, order: usize) -> [[f64; 2]; 2] {
    let (xs, ws) = gauss_legendre(order);
    let mut acc = [[0.0; 2]; 2];
    for (a, wa) in xs.iter().zip(&ws) {
        for (b, wb) in xs.iter().zip(&ws) {
            let x = [
                rect.x0 + a * (rect.x1 - rect.x0),
                rect.y0 + b * (rect.y1 - rect.y0),
            ];
            let ii = iso.second_fundamental_form(x);
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += wa * wb * ii[i][j];
                }
            }
        }
    }
    acc
}

/// Solves the three unit bending loads once and combines them per patch.
pub fn patch_correctors(
    iso: &IsometrySpec,
    cfg: &RecoveryConfig,
    realization: &MicrostructureRealization,
    grid: &RVEGrid,
    materials: &MaterialTable,
    opts: SolverOptions,
) -> Result<PatchCorrectors> {
    cfg.validate()?;
    if (grid.gamma - cfg.gamma).abs() > 1e-12 * cfg.gamma {
        return Err(Error::InvalidArgument("corrector grid gamma differs from the recovery gamma".into()));
    }
    if (grid.box_side - realization.box_side()).abs() > 1e-12 * grid.box_side {
        return Err(Error::DimensionMismatch("grid and realization box sides differ".into()));
    }
    let patches = Patches::new(iso.domain, cfg.eta)?;
    let phases = realization.rasterize_with(grid.n1, grid.n2, opts.policy.execution)?;
    let problem = CellProblem::new(grid, &phases, materials, opts)?;
    let unit = (3..6)
        .map(|a| problem.solve(&CellLoad::unit(a)).map(|s| s.corrector))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&CorrectorField> = unit.iter().collect();
    let mut loads = Vec::with_capacity(patches.len());
    let mut fields = Vec::with_capacity(patches.len());
    for i in 0..patches.len() {
        let a = average_ii(iso, &patches.rect(i), cfg.quadrature.limit_order);
        let v = crate::cell_solver::voigt3(&a);
        fields.push(CorrectorField::combine(&refs, v.as_slice()));
        loads.push(a);
    }
    Ok(PatchCorrectors {
        grid: *grid,
        phases,
        loads,
        fields,
    })
}

/// Evaluates `u^h` and `∇_h u^h = (∂1u, ∂2u, h⁻¹∂3u)`.
#[derive(Clone, Debug)]
pub struct DeformationSampler {
    pub iso: IsometrySpec,
    pub h: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub patches: Patches,
    pub correctors: PatchCorrectors,
    /// Fixed rotation applied after the construction.
    pub rotation: Matrix3<f64>,
}

impl DeformationSampler {
    /// Cell coordinates `x'/ε mod L`.
    fn cell_point(&self, x: [f64; 2]) -> [f64; 2] {
        let l = self.correctors.grid.box_side;
        [wrap(x[0] / self.epsilon, l), wrap(x[1] / self.epsilon, l)]
    }

    pub fn value(&self, x: [f64; 2], x3: f64) -> Vector3<f64> {
        let f = self.iso.frame(x);
        let mut u = f.y + f.n * (self.h * x3);
        let p = self.patches.locate(x);
        let (chi, _) = cutoff(&self.patches.rect(p), self.delta, x);
        if chi != 0.0 {
            let (g, _) = self.correctors.fields[p].sample(self.cell_point(x), x3);
            u += f.rotation() * g * (self.h * self.epsilon * chi);
        }
        self.rotation * u
    }

    pub fn gradient(&self, x: [f64; 2], x3: f64) -> Matrix3<f64> {
        let f = self.iso.frame(x);
        let h = self.h;
        let mut m = Matrix3::from_columns(&[
            f.dy[0] + f.dn[0] * (h * x3),
            f.dy[1] + f.dn[1] * (h * x3),
            f.n,
        ]);
        let p = self.patches.locate(x);
        let (chi, dchi) = cutoff(&self.patches.rect(p), self.delta, x);
        if chi != 0.0 || dchi != [0.0, 0.0] {
            let (g, dg) = self.correctors.fields[p].sample(self.cell_point(x), x3);
            let r = f.rotation();
            let he = h * self.epsilon;
            for a in 0..2 {
                let col = r * dg.column(a) * (h * chi)
                    + (r * g * dchi[a] + f.rotation_derivative(a) * g * chi) * he;
                m.set_column(a, &(m.column(a) + col));
            }
            let c3 = r * dg.column(2) * (self.epsilon * chi);
            m.set_column(2, &(m.column(2) + c3));
        }
        self.rotation * m
    }
}

pub fn build_recovery(
    iso: &IsometrySpec,
    cfg: &RecoveryConfig,
    h: f64,
    correctors: PatchCorrectors,
) -> Result<DeformationSampler> {
    cfg.validate()?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("h must be positive".into()));
    }
    let patches = Patches::new(iso.domain, cfg.eta)?;
    if correctors.fields.len() != patches.len() {
        return Err(Error::MissingCorrector(correctors.fields.len()));
    }
    Ok(DeformationSampler {
        iso: *iso,
        h,
        epsilon: cfg.epsilon(h),
        delta: cfg.delta,
        patches,
        correctors,
        rotation: Matrix3::identity(),
    })
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        // Newton on P_n from the Chebyshev guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        xs[n - 1 - i] = 0.5 * (1.0 + x);
        ws[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

/// Breakpoints along `[a, b]` at multiples of `step`.
fn breakpoints(a: f64, b: f64, step: f64) -> Vec<f64> {
    let mut out = vec![a];
    let mut k = (a / step).floor() as i64 + 1;
    loop {
        let x = k as f64 * step;
        if x >= b - 1e-9 * step {
            break;
        }
        if x > a + 1e-9 * step {
            out.push(x);
        }
        k += 1;
    }
    out.push(b);
    out
}

/// `h⁻² ∫_{S×I} W(x'/ε, ∇_h u^h)` by composite Gauss quadrature.
///
/// In-plane cells are the corrector elements (scaled by `ε`) split
/// `cells_per_element` times per direction; cells larger than `ε/2` are
/// rejected. Through the thickness each corrector layer gets
/// `gauss_per_layer` points.
pub fn evaluate_ih(
    sampler: &DeformationSampler,
    materials: &MaterialTable,
    quad: &QuadratureOrders,
    policy: ExecPolicy,
) -> Result<f64> {
    let grid = sampler.correctors.grid;
    let phases = &sampler.correctors.phases;
    let eps = sampler.epsilon;
    let elem = grid.box_side / grid.n1.min(grid.n2) as f64;
    let cell = eps * elem / quad.cells_per_element as f64;
    if cell > 0.5 * eps {
        return Err(Error::UnderResolved {
            cell,
            limit: 0.5 * eps,
        });
    }
    for &p in &phases.cell_phase {
        materials.get(p)?;
    }
    let hx = grid.box_side / grid.n1 as f64;
    let hy = grid.box_side / grid.n2 as f64;
    let s = sampler.iso.domain;
    let xs = breakpoints(s.x0, s.x1, eps * hx / quad.cells_per_element as f64);
    let ys = breakpoints(s.y0, s.y1, eps * hy / quad.cells_per_element as f64);
    let (gx, gw) = gauss_legendre(quad.gauss_in_plane);
    let (tx, tw) = gauss_legendre(quad.gauss_per_layer);
    let hz = 1.0 / grid.n3 as f64;
    let thickness: Vec<(f64, f64)> = (0..grid.n3)
        .flat_map(|k| {
            tx.iter()
                .zip(&tw)
                .map(move |(t, w)| (-0.5 + (k as f64 + t) * hz, w * hz))
        })
        .collect();
    let l = grid.box_side;
    let phase_of = |x: [f64; 2]| {
        let y = [wrap(x[0] / eps, l), wrap(x[1] / eps, l)];
        let i = ((y[0] / hx) as usize).min(grid.n1 - 1);
        let j = ((y[1] / hy) as usize).min(grid.n2 - 1);
        phases.get(i, j)
    };
    let nx = xs.len() - 1;
    let ny = ys.len() - 1;
    let total = exec::sum(policy, nx * ny, |c| {
        let (i, j) = (c / ny, c % ny);
        let (xa, xb, ya, yb) = (xs[i], xs[i + 1], ys[j], ys[j + 1]);
        let mid = [0.5 * (xa + xb), 0.5 * (ya + yb)];
        let mat = materials.get(phase_of(mid)).expect("checked above");
        let mut acc = 0.0;
        for (a, wa) in gx.iter().zip(&gw) {
            for (b, wb) in gx.iter().zip(&gw) {
                let x = [xa + a * (xb - xa), ya + b * (yb - ya)];
                for &(x3, w3) in &thickness {
                    acc += wa * wb * w3 * svk_energy(mat, &sampler.gradient(x, x3));
                }
            }
        }
        acc * (xb - xa) * (yb - ya)
    });
    Ok(total / (sampler.h * sampler.h))
}

/// `∫_S Q^γ(II(x')) dx'` by tensor Gauss quadrature.
pub fn limit_energy(q: &EffectiveBendingForm, iso: &IsometrySpec, order: usize) -> f64 {
    let (xs, ws) = gauss_legendre(order.max(1));
    let d = iso.domain;
    let mut acc = 0.0;
    for (a, wa) in xs.iter().zip(&ws) {
        for (b, wb) in xs.iter().zip(&ws) {
            let x = [d.x0 + a * (d.x1 - d.x0), d.y0 + b * (d.y1 - d.y0)];
            acc += wa * wb * qgamma_eval(q, &iso.second_fundamental_form(x));
        }
    }
    acc * d.area()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub h: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub delta: f64,
    #[serde(rename = "Ih")]
    pub ih: f64,
    #[serde(rename = "I0")]
    pub i0: f64,
    pub relative_gap: f64,
    pub quadrature: QuadratureOrders,
    pub seed: u64,
    pub sign_convention: String,
}

/// Builds and evaluates the recovery sequence for each `h` in the schedule.
#[allow(clippy::too_many_arguments)]
pub fn recovery_study(
    iso: &IsometrySpec,
    cfg: &RecoveryConfig,
    realization: &MicrostructureRealization,
    grid: &RVEGrid,
    materials: &MaterialTable,
    q: &EffectiveBendingForm,
    opts: SolverOptions,
) -> Result<Vec<RecoveryReport>> {
    let correctors = patch_correctors(iso, cfg, realization, grid, materials, opts)?;
    let i0 = limit_energy(q, iso, cfg.quadrature.limit_order);
    cfg.h_schedule
        .iter()
        .map(|&h| {
            let sampler = build_recovery(iso, cfg, h, correctors.clone())?;
            let ih = evaluate_ih(&sampler, materials, &cfg.quadrature, opts.policy)?;
            Ok(RecoveryReport {
                h,
                epsilon: sampler.epsilon,
                eta: cfg.eta,
                delta: cfg.delta,
                ih,
                i0,
                relative_gap: if i0 > 0.0 { (ih - i0).abs() / i0 } else { ih.abs() },
                quadrature: cfg.quadrature,
                seed: realization.seed(),
                sign_convention: SIGN_CONVENTION.into(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstructure::{sample_realization, MicrostructureModel};

    fn cfg() -> RecoveryConfig {
        RecoveryConfig {
            h_schedule: vec![0.1, 0.05],
            gamma: 1.0,
            eta: 0.5,
            delta: 0.05,
            quadrature: QuadratureOrders::default(),
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..6 {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let deg = 2 * n - 1;
            let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((s - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn cylinder_is_isometric_with_unit_normal() {
        for r in [1.0, 2.0] {
            let iso = cylinder_isometry(r, Rect::unit()).unwrap();
            for x in [[0.1, 0.3], [0.77, 0.5]] {
                let f = iso.frame(x);
                let r3 = f.rotation();
                assert!((r3.transpose() * r3 - Matrix3::identity()).norm() < 1e-12);
                assert!((f.n.norm() - 1.0).abs() < 1e-12);
                assert!((f.n - f.dy[0].cross(&f.dy[1])).norm() < 1e-12);
                let ii = f.second_fundamental_form();
                assert!((ii[0][0] - 1.0 / r).abs() < 1e-12);
                assert!(ii[0][1].abs() + ii[1][0].abs() + ii[1][1].abs() < 1e-12);
            }
        }
        assert!(cylinder_isometry(0.0, Rect::unit()).is_err());
        let flat = IsometrySpec::flat(Rect::unit());
        assert_eq!(flat.second_fundamental_form([0.3, 0.2]), [[0.0; 2]; 2]);
    }

    #[test]
    fn cutoff_support_and_gradient() {
        let r = Rect::unit();
        assert_eq!(cutoff(&r, 0.1, [0.05, 0.5]).0, 0.0);
        assert_eq!(cutoff(&r, 0.1, [0.5, 0.5]).0, 1.0);
        let x = [0.13, 0.85];
        let (c, g) = cutoff(&r, 0.1, x);
        let s = 1e-7;
        let fd1 = (cutoff(&r, 0.1, [x[0] + s, x[1]]).0 - cutoff(&r, 0.1, [x[0] - s, x[1]]).0) / (2.0 * s);
        let fd2 = (cutoff(&r, 0.1, [x[0], x[1] + s]).0 - cutoff(&r, 0.1, [x[0], x[1] - s]).0) / (2.0 * s);
        assert!(c > 0.0 && c < 1.0);
        assert!((fd1 - g[0]).abs() < 1e-6 && (fd2 - g[1]).abs() < 1e-6);
        assert!(g[0].abs() <= 1.5 / 0.1 + 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.delta = 0.25;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.h_schedule = vec![0.05, 0.1];
        assert!(c.validate().is_err());
    }

    fn single_phase() -> (MicrostructureRealization, RVEGrid, MaterialTable) {
        let r = sample_realization(&MicrostructureModel::homogeneous(0), 0, 1.0).unwrap();
        let grid = RVEGrid::new(1.0, 4, 4, 4, 1.0).unwrap();
        (r, grid, MaterialTable::single(0, 1.0, 1.0).unwrap())
    }

    #[test]
    fn flat_identity_has_zero_energy() {
        let (r, grid, mats) = single_phase();
        let iso = IsometrySpec::flat(Rect::unit());
        let c = cfg();
        let patches = Patches::new(iso.domain, c.eta).unwrap();
        let phases = r.rasterize(4, 4).unwrap();
        let s = build_recovery(&iso, &c, 0.1, PatchCorrectors::zero(grid, phases, &patches)).unwrap();
        let x = [0.3, 0.6];
        assert!((s.value(x, 0.25) - Vector3::new(0.3, 0.6, 0.025)).norm() < 1e-15);
        assert_eq!(s.gradient(x, 0.25), Matrix3::identity());
        let e = evaluate_ih(&s, &mats, &c.quadrature, ExecPolicy::default()).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn finite_differences_match_gradient() {
        let (r, grid, mats) = single_phase();
        let iso = cylinder_isometry(1.0, Rect::unit()).unwrap();
        let c = cfg();
        let pc = patch_correctors(&iso, &c, &r, &grid, &mats, SolverOptions::default()).unwrap();
        let s = build_recovery(&iso, &c, 0.1, pc).unwrap();
        let step = 1e-6;
        for (k, x) in [[0.13, 0.41], [0.37, 0.12], [0.61, 0.93], [0.88, 0.27]].iter().enumerate() {
            let x3 = -0.37 + 0.2 * k as f64;
            let g = s.gradient(*x, x3);
            for a in 0..2 {
                let mut xp = *x;
                let mut xm = *x;
                xp[a] += step;
                xm[a] -= step;
                let fd = (s.value(xp, x3) - s.value(xm, x3)) / (2.0 * step);
                assert!((fd - g.column(a)).norm() < 1e-6, "{a}: {fd} vs {}", g.column(a));
            }
            let fd3 = (s.value(*x, x3 + step) - s.value(*x, x3 - step)) / (2.0 * step * s.h);
            assert!((fd3 - g.column(2)).norm() < 1e-6);
        }
    }

    #[test]
    fn rotated_sampler_has_same_energy() {
        let (r, grid, mats) = single_phase();
        let iso = cylinder_isometry(1.0, Rect::unit()).unwrap();
        let c = cfg();
        let pc = patch_correctors(&iso, &c, &r, &grid, &mats, SolverOptions::default()).unwrap();
        let mut s = build_recovery(&iso, &c, 0.1, pc).unwrap();
        let e0 = evaluate_ih(&s, &mats, &c.quadrature, ExecPolicy::default()).unwrap();
        s.rotation = *nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0).matrix();
        let e1 = evaluate_ih(&s, &mats, &c.quadrature, ExecPolicy::default()).unwrap();
        assert!((e0 - e1).abs() <= 1e-10 * e0, "{e0} vs {e1}");
    }

    #[test]
    fn under_resolved_quadrature_is_rejected() {
        let (r, _, mats) = single_phase();
        let grid = RVEGrid::new(2.0, 2, 2, 2, 1.0).unwrap();
        let iso = IsometrySpec::flat(Rect::unit());
        let c = cfg();
        let patches = Patches::new(iso.domain, c.eta).unwrap();
        let phases = r.rasterize(2, 2).unwrap();
        let s = build_recovery(&iso, &c, 0.1, PatchCorrectors::zero(grid, phases, &patches)).unwrap();
        let q = QuadratureOrders {
            cells_per_element: 1,
            ..QuadratureOrders::default()
        };
        assert!(matches!(
            evaluate_ih(&s, &mats, &q, ExecPolicy::default()),
            Err(Error::UnderResolved { .. })
        ));
    }
}
