//! Ergodic averages and ensemble statistics over seeds.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::cell_solver::{
    coupled_tensor, effective_bending, qgamma_eval, EffectiveBendingForm, RVEGrid, SolverOptions,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::material::MaterialTable;
use crate::microstructure::{sample_realization, MicrostructureModel, MicrostructureRealization, PhaseId};

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Window {
    pub fn square(side: f64) -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            x1: side,
            y1: side,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffSeries {
    pub epsilons: Vec<f64>,
    pub averages: Vec<f64>,
    pub reference: f64,
}

impl BirkhoffSeries {
    pub fn errors(&self) -> Vec<f64> {
        self.averages.iter().map(|a| (a - self.reference).abs()).collect()
    }

    /// `C = max(err/ε)` over the two coarsest scales.
    pub fn rate_constant(&self) -> f64 {
        self.errors()
            .iter()
            .zip(&self.epsilons)
            .take(2)
            .map(|(e, eps)| e / eps)
            .fold(0.0, f64::max)
    }

    /// Whether every scale satisfies `err ≤ C·ε` with the fitted `C`.
    pub fn within_linear_bound(&self, slack: f64) -> bool {
        let c = self.rate_constant();
        self.errors()
            .iter()
            .zip(&self.epsilons)
            .all(|(e, eps)| *e <= c * eps * (1.0 + slack) + 1e-15)
    }
}

/// Cell breakpoints along `[a, b]`: the window ends plus every multiple of
/// `step` strictly inside.
fn breakpoints(a: f64, b: f64, step: f64) -> Vec<f64> {
    let mut out = vec![a];
    let mut k = (a / step).floor() as i64 + 1;
    loop {
        let x = k as f64 * step;
        if x >= b - 1e-12 * step {
            break;
        }
        if x > a + 1e-12 * step {
            out.push(x);
        }
        k += 1;
    }
    out.push(b);
    out
}

/// Midpoint-rule average of `f(phase_at(x/ε))` over `window` for each `ε`.
///
/// Cells have side `ε / cells_per_epsilon` and are aligned to multiples of
/// that side, so tile edges of a unit-period texture fall on cell edges.
pub fn birkhoff_average(
    r: &MicrostructureRealization,
    f: &BTreeMap<PhaseId, f64>,
    window: Window,
    epsilons: &[f64],
    cells_per_epsilon: f64,
) -> Result<BirkhoffSeries> {
    if !(window.x1 > window.x0 && window.y1 > window.y0) {
        return Err(Error::InvalidArgument("window must have positive area".into()));
    }
    if epsilons.is_empty() || epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidArgument("epsilons must be positive".into()));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("epsilons must be strictly decreasing".into()));
    }
    if !(cells_per_epsilon >= 1.0) {
        return Err(Error::UnderResolved {
            cell: 1.0 / cells_per_epsilon,
            limit: 1.0,
        });
    }
    let model = r.model();
    let mut reference = 0.0;
    for (p, w) in model.phases().iter().zip(model.area_fractions()) {
        reference += w * *f.get(p).ok_or(Error::MissingPhase(*p))?;
    }
    let mut averages = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let step = eps / cells_per_epsilon;
        let xs = breakpoints(window.x0, window.x1, step);
        let ys = breakpoints(window.y0, window.y1, step);
        let nx = xs.len() - 1;
        let ny = ys.len() - 1;
        let rows = exec::map_range(exec::Execution::Parallel, nx, |i| {
            let (xa, xb) = (xs[i], xs[i + 1]);
            let xm = 0.5 * (xa + xb) / eps;
            let mut acc = 0.0;
            for j in 0..ny {
                let (ya, yb) = (ys[j], ys[j + 1]);
                let ph = r.phase_at([xm, 0.5 * (ya + yb) / eps]);
                acc += f.get(&ph).copied().unwrap_or(f64::NAN) * (yb - ya);
            }
            acc * (xb - xa)
        });
        let avg = rows.iter().sum::<f64>() / window.area();
        if avg.is_nan() {
            return Err(Error::InvalidArgument("f is missing a sampled phase".into()));
        }
        averages.push(avg);
    }
    Ok(BirkhoffSeries {
        epsilons: epsilons.to_vec(),
        averages,
        reference,
    })
}

pub const DEFECT_FLOOR: f64 = 1e-12;

/// Probe matrices `e1⊗e1, e2⊗e2, (e1⊗e2 + e2⊗e1)/√2, I`.
pub fn isotropy_probes() -> [[[f64; 2]; 2]; 4] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        [[1.0, 0.0], [0.0, 0.0]],
        [[0.0, 0.0], [0.0, 1.0]],
        [[0.0, s], [s, 0.0]],
        [[1.0, 0.0], [0.0, 1.0]],
    ]
}

fn conjugate(g: &[[f64; 2]; 2], theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let r = nalgebra::Matrix2::new(c, -s, s, c);
    let m = nalgebra::Matrix2::new(g[0][0], g[0][1], g[1][0], g[1][1]);
    let out = r.transpose() * m * r;
    [[out[(0, 0)], out[(0, 1)]], [out[(1, 0)], out[(1, 1)]]]
}

/// `max |Q(RᵀGR) − Q(G)| / max(Q(G), floor)` over the probes and
/// `rotation_count` rotations equally spaced in `[0, π)`.
pub fn isotropy_defect(q: &EffectiveBendingForm, rotation_count: usize) -> Result<f64> {
    if rotation_count < 8 {
        return Err(Error::InvalidArgument("need at least 8 rotations".into()));
    }
    let mut defect: f64 = 0.0;
    for g in isotropy_probes() {
        let base = qgamma_eval(q, &g);
        for k in 0..rotation_count {
            let theta = std::f64::consts::PI * k as f64 / rotation_count as f64;
            let rotated = qgamma_eval(q, &conjugate(&g, theta));
            defect = defect.max((rotated - base).abs() / base.max(DEFECT_FLOOR));
        }
    }
    Ok(defect)
}

#[derive(Clone, Debug)]
pub struct IsotropyReport {
    pub form: EffectiveBendingForm,
    pub defect: f64,
    pub rotations_sampled: usize,
    /// Defect of each ensemble member.
    pub ensemble: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub seeds: Vec<u64>,
    pub forms: Vec<EffectiveBendingForm>,
    /// Entrywise mean of the `voigt3` matrices.
    pub mean: Matrix3<f64>,
    /// Entrywise unbiased sample variance.
    pub variance: Matrix3<f64>,
}

impl EnsembleResult {
    /// Effective form with `voigt3 = mean`; the parent tensor is that of the
    /// first member.
    pub fn mean_form(&self) -> EffectiveBendingForm {
        EffectiveBendingForm {
            voigt3: self.mean,
            parent: self.forms[0].parent.clone(),
        }
    }

    pub fn isotropy(&self, rotation_count: usize) -> Result<IsotropyReport> {
        let form = self.mean_form();
        let ensemble = self
            .forms
            .iter()
            .map(|f| isotropy_defect(f, rotation_count))
            .collect::<Result<Vec<_>>>()?;
        Ok(IsotropyReport {
            defect: isotropy_defect(&form, rotation_count)?,
            form,
            rotations_sampled: rotation_count,
            ensemble,
        })
    }
}

/// Effective bending form of one realization.
pub fn realization_form(
    r: &MicrostructureRealization,
    materials: &MaterialTable,
    grid: &RVEGrid,
    opts: SolverOptions,
) -> Result<EffectiveBendingForm> {
    let phases = r.rasterize_with(grid.n1, grid.n2, opts.policy.execution)?;
    effective_bending(&coupled_tensor(grid, &phases, materials, opts)?)
}

/// Solves one realization per seed, concurrently, and folds the results in
/// seed order.
pub fn ensemble_effective(
    model: &MicrostructureModel,
    materials: &MaterialTable,
    grid: &RVEGrid,
    seeds: &[u64],
    opts: SolverOptions,
) -> Result<EnsembleResult> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 seeds".into()));
    }
    let forms = exec::map_range(opts.policy.execution, seeds.len(), |k| {
        let seed = seeds[k];
        sample_realization(model, seed, grid.box_side)
            .and_then(|r| realization_form(&r, materials, grid, opts))
            .map_err(|e| Error::Seeded {
                seed,
                source: Box::new(e),
            })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = forms.len() as f64;
    let mean = forms.iter().fold(Matrix3::zeros(), |acc, f| acc + f.voigt3) / n;
    let variance = forms.iter().fold(Matrix3::zeros(), |acc, f| {
        let d = f.voigt3 - mean;
        acc + d.component_mul(&d)
    }) / (n - 1.0);
    Ok(EnsembleResult {
        seeds: seeds.to_vec(),
        forms,
        mean,
        variance,
    })
}

pub fn write_birkhoff_csv<W: Write>(series: &BirkhoffSeries, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epsilon", "average", "reference", "error"])?;
    for (k, eps) in series.epsilons.iter().enumerate() {
        let a = series.averages[k];
        out.write_record(&[
            eps.to_string(),
            a.to_string(),
            series.reference.to_string(),
            (a - series.reference).abs().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One row per seed: the nine `voigt3` entries (row-major) and the defect.
pub fn write_ensemble_csv<W: Write>(ens: &EnsembleResult, defects: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["seed".to_string()];
    for i in 1..=3 {
        for j in 1..=3 {
            header.push(format!("q{i}{j}"));
        }
    }
    header.push("defect".into());
    out.write_record(&header)?;
    for (k, form) in ens.forms.iter().enumerate() {
        let mut row = vec![ens.seeds[k].to_string()];
        row.extend(form.row_major().iter().map(|v| v.to_string()));
        row.push(defects.get(k).map(|d| d.to_string()).unwrap_or_default());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_solver::CoupledEffectiveTensor;
    use nalgebra::Matrix6;

    fn form_from(voigt3: Matrix3<f64>) -> EffectiveBendingForm {
        EffectiveBendingForm {
            voigt3,
            parent: CoupledEffectiveTensor {
                matrix: Matrix6::identity(),
                grid: RVEGrid::new(1.0, 2, 2, 2, 1.0).unwrap(),
                cg_residuals: vec![],
                cg_iterations: vec![],
            },
        }
    }

    /// `(1/12)·Q₂` for μ = λ = 1.
    fn isotropic() -> EffectiveBendingForm {
        let a = 2.0 / 3.0;
        form_from(Matrix3::new(2.0 + a, a, 0.0, a, 2.0 + a, 0.0, 0.0, 0.0, 2.0) / 12.0)
    }

    #[test]
    fn constant_function_averages_exactly() {
        let m = MicrostructureModel::checkerboard(1.0, 0, 1);
        let r = sample_realization(&m, 0, 2.0).unwrap();
        let f = BTreeMap::from([(0, 0.25), (1, 0.25)]);
        let s = birkhoff_average(&r, &f, Window::square(0.7), &[0.5, 0.25], 4.0).unwrap();
        assert!(s.averages.iter().all(|a| (a - 0.25).abs() < 1e-15));
    }

    #[test]
    fn unit_window_checkerboard_is_exact() {
        let m = MicrostructureModel::checkerboard(1.0, 0, 1);
        let r = sample_realization(&m, 0, 2.0).unwrap();
        let f = BTreeMap::from([(0, 1.0), (1, 0.0)]);
        let s = birkhoff_average(&r, &f, Window::square(1.0), &[0.5, 0.25, 0.125], 2.0).unwrap();
        assert_eq!(s.reference, 0.5);
        assert!(s.errors().iter().all(|e| *e < 1e-14));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = MicrostructureModel::checkerboard(1.0, 0, 1);
        let r = sample_realization(&m, 0, 2.0).unwrap();
        let f = BTreeMap::from([(0, 1.0), (1, 0.0)]);
        let w = Window::square(1.0);
        assert!(matches!(
            birkhoff_average(&r, &f, w, &[0.5], 0.5),
            Err(Error::UnderResolved { .. })
        ));
        assert!(birkhoff_average(&r, &f, w, &[0.25, 0.5], 2.0).is_err());
        assert!(birkhoff_average(&r, &BTreeMap::from([(0, 1.0)]), w, &[0.5], 2.0).is_err());
    }

    #[test]
    fn isotropic_form_has_no_defect() {
        assert!(isotropy_defect(&isotropic(), 16).unwrap() < 1e-12);
        assert!(isotropy_defect(&isotropic(), 4).is_err());
    }

    #[test]
    fn anisotropic_form_has_large_defect() {
        let q = form_from(Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 0.1, 0.3)));
        assert!(isotropy_defect(&q, 8).unwrap() > 0.5);
    }

    #[test]
    fn csv_headers() {
        let s = BirkhoffSeries {
            epsilons: vec![0.5],
            averages: vec![0.4],
            reference: 0.5,
        };
        let mut buf = Vec::new();
        write_birkhoff_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epsilon,average,reference,error\n"));
    }

    #[test]
    fn periodic_ensemble_has_zero_variance() {
        let m = MicrostructureModel::checkerboard(1.0, 0, 1);
        let mats = MaterialTable::from_specs(&[
            crate::material::MaterialSpec { phase_id: 0, mu: 1.0, lambda: 1.0 },
            crate::material::MaterialSpec { phase_id: 1, mu: 2.0, lambda: 1.0 },
        ])
        .unwrap();
        let grid = RVEGrid::new(2.0, 4, 4, 2, 1.0).unwrap();
        let e = ensemble_effective(&m, &mats, &grid, &[1, 2, 3], SolverOptions::default()).unwrap();
        assert!(e.variance.norm() < 1e-28);
    }
}
