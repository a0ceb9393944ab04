use nalgebra::{Matrix3, Rotation3};
use proptest::prelude::*;
use stochplate::cell_solver::{
    coupled_tensor, effective_bending, qgamma_eval, solve_corrector, CellLoad, CellProblem, CorrectorField, RVEGrid,
    SolverOptions,
};
use stochplate::decomposition::{
    decompose_mixed, orthogonality_report, spectral_hessian, BandLimitedField, MixedField, ScalarField2D,
};
use stochplate::material::{
    coercivity_constants, isotropic_form, q0_apply, svk_energy, MaterialSpec, MaterialTable, PhaseMaterial,
};
use stochplate::microstructure::{sample_realization, MicrostructureModel};
use stochplate::recovery::{build_recovery, cylinder_isometry, evaluate_ih, patch_correctors, RecoveryConfig, Rect};
use stochplate::ExecPolicy;

fn voronoi() -> MicrostructureModel {
    MicrostructureModel::poisson_voronoi(2.0, &[(0, 0.4), (1, 0.6)])
}

fn matrix3() -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform9(-1.0..1.0f64).prop_map(|a| Matrix3::from_row_slice(&a))
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (-3.2..3.2f64, -1.6..1.6f64, -3.2..3.2f64).prop_map(|(a, b, c)| *Rotation3::from_euler_angles(a, b, c).matrix())
}

fn sym2() -> impl Strategy<Value = [[f64; 2]; 2]> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b, c)| [[a, c], [c, b]])
}

fn two_phase(mu: f64, lambda: f64) -> MaterialTable {
    MaterialTable::from_specs(&[
        MaterialSpec { phase_id: 0, mu: 1.0, lambda: 0.5 },
        MaterialSpec { phase_id: 1, mu, lambda },
    ])
    .unwrap()
}

proptest! {
    #[test]
    fn shifts_compose(seed in 0u64..1000, x in prop::array::uniform2(-5.0..5.0f64),
                      y in prop::array::uniform2(-5.0..5.0f64), p in prop::array::uniform2(-3.0..3.0f64)) {
        let r = sample_realization(&voronoi(), seed, 3.0).unwrap();
        prop_assert_eq!(r.shift(x).shift(y).phase_at(p), r.shift([x[0] + y[0], x[1] + y[1]]).phase_at(p));
    }

    #[test]
    fn phases_are_periodic(seed in 0u64..1000, p in prop::array::uniform2(0.0..3.0f64), k in -3i32..3, m in -3i32..3) {
        let r = sample_realization(&voronoi(), seed, 3.0).unwrap();
        let q = [p[0] + 3.0 * k as f64, p[1] + 3.0 * m as f64];
        prop_assert_eq!(r.phase_at(p), r.phase_at(q));
    }

    #[test]
    fn realizations_are_reproducible(seed in any::<u64>()) {
        let a = sample_realization(&voronoi(), seed, 3.0).unwrap().to_dump();
        let b = sample_realization(&voronoi(), seed, 3.0).unwrap().to_dump();
        prop_assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn svk_is_objective(f in matrix3(), r in rotation(), mu in 0.1..5.0f64, lambda in 0.0..5.0f64) {
        let phase = PhaseMaterial::new(0, mu, lambda).unwrap();
        let d = (svk_energy(&phase, &(r * f)) - svk_energy(&phase, &f)).abs();
        prop_assert!(d <= 1e-12 * (1.0 + f.norm().powi(4)) * (mu + lambda));
    }

    #[test]
    fn q0_sits_between_extreme_eigenvalues(m in matrix3(), mu in 0.1..5.0f64, lambda in 0.0..5.0f64) {
        let q = isotropic_form(mu, lambda).unwrap();
        let (c1, c2) = coercivity_constants(&q).unwrap();
        let s = 0.5 * (m + m.transpose());
        let v = q0_apply(&q, &m);
        let n = s.norm_squared();
        prop_assert!(v >= c1 * n * (1.0 - 1e-12) - 1e-14 && v <= c2 * n * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn second_order_split_is_orthogonal(seed in 0u64..500, k in prop::array::uniform2(-3i32..=3), phase in 0.0..6.3f64) {
        let psi = ScalarField2D::from_fn(16, 16, 1.0, |x| {
            (2.0 * std::f64::consts::PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1]) + phase).cos()
        });
        let h = spectral_hessian(&psi);
        let b = BandLimitedField::random(1.0, 2, seed);
        let c = b.cof_sym_gradient(16, 16);
        let scale = h.norm() * c.norm();
        prop_assert!(h.inner(&c).abs() <= 1e-10 * scale.max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn coupled_tensor_is_symmetric_and_spd(seed in 0u64..100, mu in 0.5..8.0f64, lambda in 0.0..4.0f64, gamma in 0.5..2.0f64) {
        let r = sample_realization(&voronoi(), seed, 2.0).unwrap();
        let grid = RVEGrid::new(2.0, 4, 4, 2, gamma).unwrap();
        let ct = coupled_tensor(&grid, &r.rasterize(4, 4).unwrap(), &two_phase(mu, lambda), SolverOptions::default()).unwrap();
        let asym = (ct.matrix - ct.matrix.transpose()).abs().max();
        prop_assert!(asym <= 10.0 * 1e-8 * ct.matrix.abs().max());
        prop_assert!(ct.is_spd());
    }

    #[test]
    fn bending_form_is_quadratic_and_sandwiched(seed in 0u64..100, mu in 0.5..8.0f64, lambda in 0.0..4.0f64,
                                                g in sym2(), s in -3.0..3.0f64) {
        let r = sample_realization(&voronoi(), seed, 2.0).unwrap();
        let mats = two_phase(mu, lambda);
        let grid = RVEGrid::new(2.0, 4, 4, 2, 1.0).unwrap();
        let q = effective_bending(&coupled_tensor(&grid, &r.rasterize(4, 4).unwrap(), &mats, SolverOptions::default()).unwrap()).unwrap();
        let v = qgamma_eval(&q, &g);
        let sg = [[s * g[0][0], s * g[0][1]], [s * g[1][0], s * g[1][1]]];
        prop_assert!((qgamma_eval(&q, &sg) - s * s * v).abs() <= 1e-12 * (1.0 + s * s * v.abs()));
        let (c1, c2) = mats.coercivity_bounds().unwrap();
        let n2 = g[0][0].powi(2) + g[1][1].powi(2) + 2.0 * g[0][1].powi(2);
        prop_assert!(v >= c1 / 12.0 * 0.95 * n2 && v <= c2 / 12.0 * 1.05 * n2);
    }

    #[test]
    fn corrector_never_raises_energy(seed in 0u64..100, b in sym2(), g in sym2()) {
        let r = sample_realization(&voronoi(), seed, 2.0).unwrap();
        let grid = RVEGrid::new(2.0, 4, 4, 2, 1.0).unwrap();
        let phases = r.rasterize(4, 4).unwrap();
        let mats = two_phase(3.0, 1.0);
        let load = CellLoad::new(b, g).unwrap();
        let problem = CellProblem::new(&grid, &phases, &mats, SolverOptions::default()).unwrap();
        let sol = solve_corrector(&grid, &phases, &mats, &load, SolverOptions::default()).unwrap();
        let relaxed = problem.energy(&load, &sol.corrector);
        let rigid = problem.energy(&load, &CorrectorField::zeros(grid));
        prop_assert!(relaxed <= rigid * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn mixed_split_reconstructs_and_is_orthogonal(seed in any::<u64>()) {
        let f = MixedField::random(RVEGrid::new(1.0, 8, 8, 4, 1.0).unwrap(), seed);
        let tol = 1e-10;
        let d = decompose_mixed(&f, tol, ExecPolicy::default()).unwrap();
        let back = d.reconstruct();
        let diff: Vec<f64> = back.values.iter().zip(&f.values).map(|(a, b)| a - b).collect();
        let norm2 = d.inner(&f.values, &f.values);
        prop_assert!(d.inner(&diff, &diff).sqrt() <= 10.0 * tol * norm2.sqrt());
        prop_assert!(orthogonality_report(&d).max() <= 10.0 * tol);
        let again = decompose_mixed(&d.potential, tol, ExecPolicy::default()).unwrap();
        let sol2 = d.inner(&again.solenoidal.values, &again.solenoidal.values);
        let pot2 = d.inner(&d.potential.values, &d.potential.values);
        prop_assert!(sol2.sqrt() <= 10.0 * tol * pot2.sqrt());
        prop_assert!(again.mean.iter().all(|m| m.abs() <= 1e-12));
    }

    #[test]
    fn recovery_energy_is_objective(r in rotation()) {
        let real = sample_realization(&MicrostructureModel::homogeneous(0), 0, 1.0).unwrap();
        let mats = MaterialTable::single(0, 1.0, 1.0).unwrap();
        let grid = RVEGrid::new(1.0, 4, 4, 4, 1.0).unwrap();
        let iso = cylinder_isometry(1.0, Rect::unit()).unwrap();
        let cfg = RecoveryConfig {
            h_schedule: vec![0.1],
            gamma: 1.0,
            eta: 0.5,
            delta: 0.1,
            quadrature: Default::default(),
        };
        let pc = patch_correctors(&iso, &cfg, &real, &grid, &mats, SolverOptions::default()).unwrap();
        let mut s = build_recovery(&iso, &cfg, 0.1, pc).unwrap();
        let e0 = evaluate_ih(&s, &mats, &cfg.quadrature, ExecPolicy::default()).unwrap();
        s.rotation = r;
        let e1 = evaluate_ih(&s, &mats, &cfg.quadrature, ExecPolicy::default()).unwrap();
        prop_assert!((e0 - e1).abs() <= 1e-10 * e0);
    }
}

#[test]
fn svk_hessian_at_identity_is_twice_the_form() {
    let phase = PhaseMaterial::new(0, 1.3, 0.7).unwrap();
    let q = isotropic_form(1.3, 0.7).unwrap();
    let basis = |k: usize| {
        let mut m = Matrix3::zeros();
        let (i, j) = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)][k];
        let s = if i == j { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };
        m[(i, j)] = s;
        m[(j, i)] = s;
        m
    };
    let h = 1e-4;
    let w = |m: Matrix3<f64>| svk_energy(&phase, &(Matrix3::identity() + m));
    for a in 0..6 {
        for b in a..6 {
            let (ea, eb) = (basis(a) * h, basis(b) * h);
            let fd = (w(ea + eb) - w(ea - eb) - w(eb - ea) + w(-ea - eb)) / (4.0 * h * h);
            let exact = 2.0 * q.voigt[(a, b)];
            assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0), "({a},{b}) {fd} vs {exact}");
        }
    }
}
