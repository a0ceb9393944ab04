//! Preconditioned conjugate gradients for the singular SPD systems that show
//! up in the cell problem and the Helmholtz split.
//!
//! The operators have a known kernel (constants); [`Projector`] removes it
//! from the residual and the preconditioned residual at every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, ExecPolicy};

pub trait LinearOperator: Sync {
    fn len(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

/// Removes the per-component nodal mean from vectors laid out as
/// `values[stride * node + component]`.
#[derive(Clone, Copy, Debug)]
pub struct Projector {
    pub stride: usize,
}

impl Projector {
    pub fn project(&self, policy: ExecPolicy, v: &mut [f64]) {
        let nodes = v.len() / self.stride;
        for c in 0..self.stride {
            let mean = exec::sum(policy, nodes, |n| v[self.stride * n + c]) / nodes as f64;
            for n in 0..nodes {
                v[self.stride * n + c] -= mean;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub iterations: usize,
    /// Relative residual `‖r_k‖ / ‖b‖`, starting at iteration 0.
    pub residuals: Vec<f64>,
    /// Quadratic energy `½ xᵀA x − bᵀx` after each iteration.
    pub energies: Vec<f64>,
}

impl CgReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// Solves `A x = b` for `x` orthogonal to the kernel. Returns the solution and
/// the residual/energy history.
pub fn solve<A: LinearOperator>(
    op: &A,
    b: &[f64],
    projector: Option<Projector>,
    tol: f64,
    max_iterations: usize,
    policy: ExecPolicy,
) -> Result<(Vec<f64>, CgReport)> {
    solve_with_floor(op, b, projector, tol, 0.0, max_iterations, policy)
}

/// As [`solve`], but also stops once `‖r‖ ≤ floor`. Right-hand sides that
/// are pure round-off (below `floor`) return zero instead of chasing noise in
/// the kernel.
pub fn solve_with_floor<A: LinearOperator>(
    op: &A,
    b: &[f64],
    projector: Option<Projector>,
    tol: f64,
    floor: f64,
    max_iterations: usize,
    policy: ExecPolicy,
) -> Result<(Vec<f64>, CgReport)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("CG tolerance must be positive".into()));
    }
    let n = op.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    if let Some(p) = projector {
        p.project(policy, &mut r);
    }
    let b_norm = exec::dot(policy, &r, &r).sqrt();
    let mut report = CgReport {
        iterations: 0,
        residuals: vec![if b_norm > 0.0 { 1.0 } else { 0.0 }],
        energies: vec![0.0],
    };
    if b_norm == 0.0 || b_norm <= floor {
        return Ok((x, report));
    }

    let inv_diag: Vec<f64> = op
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let precondition = |r: &[f64], z: &mut Vec<f64>| {
        exec::fill(policy.execution, z, |i, zi| *zi = r[i] * inv_diag[i]);
        if let Some(p) = projector {
            p.project(policy, z);
        }
    };

    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = exec::dot(policy, &r, &z);

    for it in 1..=max_iterations {
        op.apply(&p, &mut ap);
        let pap = exec::dot(policy, &p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        exec::fill(policy.execution, &mut x, |i, xi| *xi += alpha * p[i]);
        exec::fill(policy.execution, &mut r, |i, ri| *ri -= alpha * ap[i]);
        if let Some(proj) = projector {
            proj.project(policy, &mut r);
        }
        let res = exec::dot(policy, &r, &r).sqrt() / b_norm;
        // J(x) = ½ xᵀAx − bᵀx = −½ xᵀ(b + r)
        let energy = -0.5 * exec::sum(policy, n, |i| x[i] * (b[i] + r[i]));
        report.iterations = it;
        report.residuals.push(res);
        report.energies.push(energy);
        if res <= tol || res * b_norm <= floor {
            if let Some(proj) = projector {
                proj.project(policy, &mut x);
            }
            return Ok((x, report));
        }
        precondition(&r, &mut z);
        let rz_new = exec::dot(policy, &r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        exec::fill(policy.execution, &mut p, |i, pi| *pi = z[i] + beta * *pi);
    }
    Err(Error::NotConverged {
        iterations: report.iterations,
        residual: report.final_residual(),
        history: report.residuals,
    })
}

/// Default iteration cap `⌈20·√N⌉`.
pub fn default_iteration_cap(unknowns: usize) -> usize {
    (20.0 * (unknowns as f64).sqrt()).ceil() as usize
}
