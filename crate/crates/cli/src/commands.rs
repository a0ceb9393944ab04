use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};
use stochplate::cell_solver::{
    cell_energy, coupled_tensor, effective_bending, solve_corrector, CellLoad, CoupledEffectiveTensor,
    EffectiveBendingForm, RVEGrid, SolverOptions,
};
use stochplate::decomposition::{
    decompose_mixed, decompose_second_order_2d, div_cof_residual, orthogonality_report, BandLimitedField,
    MixedField,
};
use stochplate::ergodic_stats::{birkhoff_average, ensemble_effective, write_birkhoff_csv, write_ensemble_csv};
use stochplate::material::MaterialTable;
use stochplate::microstructure::{sample_realization, MicrostructureModel, MicrostructureRealization};
use stochplate::nalgebra::Matrix3;
use stochplate::recovery::{cylinder_isometry, recovery_study, RecoveryConfig};
use stochplate::{Error, ExecPolicy, Execution};

use crate::artifact::Sink;
use crate::config::{Command, DecomposeKind, GridBlock, RunConfig};

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numerical(Error),
    Io(std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) | RunError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => f.write_str(m),
            RunError::Numerical(e) => write!(f, "numerical failure: {e}"),
            RunError::Io(e) => write!(f, "i/o failure: {e}"),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Io(e.into())
    }
}

/// Argument-shaped library errors are config errors; the rest are numerical.
impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        let inner = match &e {
            Error::Seeded { source, .. } => source.as_ref(),
            other => other,
        };
        match inner {
            Error::InvalidModel(_)
            | Error::NonCommensurateBox { .. }
            | Error::InvalidMaterial(_)
            | Error::MissingPhase(_)
            | Error::DimensionMismatch(_)
            | Error::InvalidArgument(_)
            | Error::UnderResolved { .. } => RunError::Config(format!("config error: {e}")),
            _ => RunError::Numerical(e),
        }
    }
}

type Out = Result<(), RunError>;

struct Ctx<'a> {
    cfg: &'a RunConfig,
    sink: &'a Sink,
    opts: SolverOptions,
}

pub fn run(cfg: &RunConfig, sink: &Sink, deterministic: bool) -> Out {
    let opts = SolverOptions {
        tol: cfg.tolerances.cg,
        max_iterations: cfg.tolerances.max_iterations,
        policy: ExecPolicy {
            execution: Execution::Parallel,
            deterministic,
        },
    };
    let ctx = Ctx { cfg, sink, opts };
    match cfg.command {
        Command::Generate => generate(&ctx),
        Command::SolveCell => solve_cell(&ctx),
        Command::Effective => effective(&ctx),
        Command::SweepGamma => sweep_gamma(&ctx),
        Command::Isotropy => isotropy(&ctx),
        Command::Ergodic => ergodic(&ctx),
        Command::Decompose => decompose(&ctx),
        Command::Recovery => recovery(&ctx),
    }
}

fn grid_block(ctx: &Ctx) -> GridBlock {
    ctx.cfg.grid.expect("validated")
}

fn model<'a>(ctx: &Ctx<'a>) -> &'a MicrostructureModel {
    ctx.cfg.model.as_ref().expect("validated")
}

fn materials(ctx: &Ctx) -> Result<MaterialTable, RunError> {
    Ok(MaterialTable::from_specs(ctx.cfg.materials.as_deref().expect("validated"))?)
}

fn rve(g: &GridBlock, gamma: f64) -> Result<RVEGrid, RunError> {
    Ok(RVEGrid::new(g.box_side, g.n1, g.n2, g.n3, gamma)?)
}

fn realization(ctx: &Ctx, seed: u64) -> Result<MicrostructureRealization, RunError> {
    sample_realization(model(ctx), seed, grid_block(ctx).box_side).map_err(|e| seeded(seed, e))
}

fn seeded(seed: u64, e: Error) -> RunError {
    Error::Seeded {
        seed,
        source: Box::new(e),
    }
    .into()
}

/// Seeds run concurrently; results come back in seed order.
fn per_seed<T, F>(ctx: &Ctx, f: F) -> Result<Vec<T>, RunError>
where
    T: Send,
    F: Fn(u64) -> Result<T, RunError> + Sync + Send,
{
    ctx.cfg.seeds.par_iter().map(|&s| f(s)).collect()
}

pub fn row_major(m: &Matrix3<f64>) -> Vec<f64> {
    (0..9).map(|k| m[(k / 3, k % 3)]).collect()
}

fn cell_result(seed: u64, ct: &CoupledEffectiveTensor, q: &EffectiveBendingForm) -> Value {
    let g = &ct.grid;
    json!({
        "grid": { "L": g.box_side, "n1": g.n1, "n2": g.n2, "n3": g.n3, "gamma": g.gamma },
        "gamma": g.gamma,
        "seed": seed,
        "voigt6": ct.row_major(),
        "voigt3": q.row_major(),
        "cg_residuals": ct.cg_residuals,
        "cg_iterations": ct.cg_iterations,
    })
}

fn solve_effective(ctx: &Ctx, seed: u64, grid: &RVEGrid, mats: &MaterialTable) -> Result<Value, RunError> {
    let r = realization(ctx, seed)?;
    let phases = r.rasterize_with(grid.n1, grid.n2, ctx.opts.policy.execution)?;
    let ct = coupled_tensor(grid, &phases, mats, ctx.opts).map_err(|e| seeded(seed, e))?;
    let q = effective_bending(&ct).map_err(|e| seeded(seed, e))?;
    Ok(cell_result(seed, &ct, &q))
}

fn generate(ctx: &Ctx) -> Out {
    let g = grid_block(ctx);
    let t = Instant::now();
    let summaries = per_seed(ctx, |seed| {
        let r = realization(ctx, seed)?;
        let phases = r.rasterize_with(g.n1, g.n2, ctx.opts.policy.execution)?;
        ctx.sink.write_bytes(
            &format!("realization_seed{seed}.json"),
            (serde_json::to_string_pretty(&r.to_dump())? + "\n").as_bytes(),
        )?;
        ctx.sink.write_bytes(
            &format!("phases_seed{seed}.json"),
            (serde_json::to_string(&phases)? + "\n").as_bytes(),
        )?;
        let ids = r.model().phases();
        Ok(json!({
            "seed": seed,
            "points": r.points().len(),
            "phases": ids,
            "area_fractions": phases.histogram(&ids),
        }))
    })?;
    ctx.sink.write_json("generate", &ctx.cfg.seeds, &summaries, t.elapsed())?;
    Ok(())
}

fn solve_cell(ctx: &Ctx) -> Out {
    let g = grid_block(ctx);
    let grid = rve(&g, g.gamma)?;
    let mats = materials(ctx)?;
    let l = ctx.cfg.load.expect("validated");
    let load = CellLoad::new(l.b, l.g)?;
    for &seed in &ctx.cfg.seeds {
        let t = Instant::now();
        let r = realization(ctx, seed)?;
        let phases = r.rasterize_with(grid.n1, grid.n2, ctx.opts.policy.execution)?;
        let sol = solve_corrector(&grid, &phases, &mats, &load, ctx.opts).map_err(|e| seeded(seed, e))?;
        let energy = cell_energy(&grid, &phases, &mats, &load, &sol.corrector)?;
        let mut dump = Vec::new();
        sol.corrector.write_dump(&mut dump)?;
        let name = format!("corrector_seed{seed}.bin");
        ctx.sink.write_bytes(&name, &dump)?;
        let result = json!({
            "seed": seed,
            "energy": energy,
            "corrector": name,
            "cg_iterations": sol.report.iterations,
            "cg_residuals": sol.report.residuals,
        });
        ctx.sink.write_json(&format!("solve_cell_seed{seed}"), &[seed], &result, t.elapsed())?;
    }
    Ok(())
}

fn effective(ctx: &Ctx) -> Out {
    let g = grid_block(ctx);
    let grid = rve(&g, g.gamma)?;
    let mats = materials(ctx)?;
    let results = per_seed(ctx, |seed| {
        let t = Instant::now();
        Ok((seed, solve_effective(ctx, seed, &grid, &mats)?, t.elapsed()))
    })?;
    for (seed, value, wall) in results {
        ctx.sink.write_json(&format!("effective_seed{seed}"), &[seed], &value, wall)?;
    }
    Ok(())
}

fn sweep_gamma(ctx: &Ctx) -> Out {
    let g = grid_block(ctx);
    let mats = materials(ctx)?;
    let gammas = &ctx.cfg.sweep.as_ref().expect("validated").gammas;
    let results = per_seed(ctx, |seed| {
        let t = Instant::now();
        let entries = gammas
            .iter()
            .map(|&gamma| solve_effective(ctx, seed, &rve(&g, gamma)?, &mats))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((seed, json!({ "seed": seed, "gammas": gammas, "entries": entries }), t.elapsed()))
    })?;
    for (seed, value, wall) in results {
        ctx.sink.write_json(&format!("sweep_gamma_seed{seed}"), &[seed], &value, wall)?;
    }
    Ok(())
}

fn isotropy(ctx: &Ctx) -> Out {
    let g = grid_block(ctx);
    let grid = rve(&g, g.gamma)?;
    let mats = materials(ctx)?;
    let rotations = ctx.cfg.isotropy.map(|b| b.rotations).unwrap_or(16);
    let t = Instant::now();
    let ens = ensemble_effective(model(ctx), &mats, &grid, &ctx.cfg.seeds, ctx.opts)?;
    let rep = ens.isotropy(rotations)?;
    let mut csv = Vec::new();
    write_ensemble_csv(&ens, &rep.ensemble, &mut csv)?;
    ctx.sink.write_csv("isotropy_members", &ctx.cfg.seeds, &csv)?;
    let result = json!({
        "seeds": ens.seeds,
        "rotations": rep.rotations_sampled,
        "mean_voigt3": row_major(&ens.mean),
        "variance_voigt3": row_major(&ens.variance),
        "defect": rep.defect,
        "member_defects": rep.ensemble,
    });
    ctx.sink.write_json("isotropy", &ctx.cfg.seeds, &result, t.elapsed())?;
    Ok(())
}

fn ergodic(ctx: &Ctx) -> Out {
    let block = ctx.cfg.ergodic.as_ref().expect("validated");
    let observable: BTreeMap<_, _> = match &block.observable {
        Some(f) => f.clone(),
        None => {
            let ids = model(ctx).phases();
            ids.iter().map(|&p| (p, if p == ids[0] { 1.0 } else { 0.0 })).collect()
        }
    };
    let t = Instant::now();
    let series = per_seed(ctx, |seed| {
        let r = realization(ctx, seed)?;
        birkhoff_average(&r, &observable, block.window, &block.epsilons, block.cells_per_epsilon)
            .map_err(|e| seeded(seed, e))
    })?;
    let mut summary = Vec::new();
    for (seed, s) in ctx.cfg.seeds.iter().zip(&series) {
        let mut csv = Vec::new();
        write_birkhoff_csv(s, &mut csv)?;
        ctx.sink.write_csv(&format!("ergodic_seed{seed}"), &[*seed], &csv)?;
        summary.push(json!({
            "seed": seed,
            "reference": s.reference,
            "errors": s.errors(),
            "rate_constant": s.rate_constant(),
            "within_linear_bound": s.within_linear_bound(0.0),
        }));
    }
    ctx.sink.write_json("ergodic", &ctx.cfg.seeds, &summary, t.elapsed())?;
    Ok(())
}

fn decompose(ctx: &Ctx) -> Out {
    let g = grid_block(ctx);
    let block = ctx.cfg.decompose.expect("validated");
    let results = per_seed(ctx, |seed| {
        let t = Instant::now();
        let value = match block.kind {
            DecomposeKind::Mixed => {
                let f = MixedField::random(rve(&g, g.gamma)?, seed);
                let d = decompose_mixed(&f, block.tol, ctx.opts.policy).map_err(|e| seeded(seed, e))?;
                let o = orthogonality_report(&d);
                let norm = |v: &[f64]| d.inner(v, v);
                let mean = MixedField::constant(f.grid, d.mean);
                json!({
                    "seed": seed,
                    "kind": "mixed",
                    "norm2": { "field": norm(&f.values), "potential": norm(&d.potential.values),
                               "solenoidal": norm(&d.solenoidal.values), "mean": norm(&mean.values) },
                    "orthogonality": { "potential_solenoidal": o.potential_solenoidal,
                                       "potential_mean": o.potential_mean,
                                       "solenoidal_mean": o.solenoidal_mean },
                    "cg_iterations": d.report.iterations,
                })
            }
            DecomposeKind::SecondOrder => {
                if g.n1 != g.n2 {
                    return Err(RunError::Config("config error at `grid`: second-order split needs n1 == n2".into()));
                }
                let b = BandLimitedField::random(g.box_side, block.band, seed);
                let a = b.cof_sym_gradient(g.n1, g.n2);
                let s = decompose_second_order_2d(&a, block.tol).map_err(|e| seeded(seed, e))?;
                json!({
                    "seed": seed,
                    "kind": "second_order",
                    "norm": { "field": a.norm(), "hessian": s.hessian.norm(), "remainder": s.remainder.norm() },
                    "cross_inner": s.hessian.inner(&s.remainder),
                    "div_cof_residual": div_cof_residual(&b, g.n1).map_err(|e| seeded(seed, e))?,
                })
            }
        };
        Ok((seed, value, t.elapsed()))
    })?;
    for (seed, value, wall) in results {
        ctx.sink.write_json(&format!("decompose_seed{seed}"), &[seed], &value, wall)?;
    }
    Ok(())
}

fn recovery(ctx: &Ctx) -> Out {
    let g = grid_block(ctx);
    let grid = rve(&g, g.gamma)?;
    let mats = materials(ctx)?;
    let block = ctx.cfg.recovery.as_ref().expect("validated");
    let iso = cylinder_isometry(block.radius, block.domain)?;
    let rc = RecoveryConfig {
        h_schedule: block.h_schedule.clone(),
        gamma: g.gamma,
        eta: block.eta,
        delta: block.delta,
        quadrature: block.quadrature,
    };
    let results = per_seed(ctx, |seed| {
        let t = Instant::now();
        let r = realization(ctx, seed)?;
        let phases = r.rasterize_with(grid.n1, grid.n2, ctx.opts.policy.execution)?;
        let q = coupled_tensor(&grid, &phases, &mats, ctx.opts)
            .and_then(|ct| effective_bending(&ct))
            .map_err(|e| seeded(seed, e))?;
        let reports = recovery_study(&iso, &rc, &r, &grid, &mats, &q, ctx.opts).map_err(|e| seeded(seed, e))?;
        Ok((seed, json!({ "seed": seed, "voigt3": q.row_major(), "reports": reports }), t.elapsed()))
    })?;
    for (seed, value, wall) in results {
        ctx.sink.write_json(&format!("recovery_seed{seed}"), &[seed], &value, wall)?;
    }
    Ok(())
}
