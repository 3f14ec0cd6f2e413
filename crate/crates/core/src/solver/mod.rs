//! Primal-dual interior-point solver for conic programs over products of
//! zero, nonnegative, and second-order cones.
//!
//! The algorithm is a Mehrotra-style predictor-corrector on the homogeneous
//! self-dual embedding, with Nesterov-Todd scaling for the cone blocks.
//! Primal/dual infeasibility therefore surface as Farkas-type certificates
//! (driven by the extra homogenizing variables tau and kappa) instead of
//! iteration failures. KKT systems are solved by a dense LDL' factorization
//! of the statically regularized quasi-definite matrix plus iterative
//! refinement; see [`kkt`].

mod cones;
mod kkt;

use serde::Serialize;
use thiserror::Error;

use crate::problems::program::{ConeBlock, ConicProgram, ProgramError};
use cones::ConeLayout;
use kkt::DenseKkt;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("malformed program: {0}")]
    InvalidProgram(#[from] ProgramError),
}

/// Interior-point configuration. The defaults suit well-scaled desk-size
/// problems; every tolerance is absolute.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Feasibility tolerance on the infinity norm of primal/dual residuals.
    pub tol_feasibility: f64,
    /// Complementarity (duality-gap) tolerance.
    pub tol_gap: f64,
    /// Relative residual below which an infeasibility certificate is
    /// accepted.
    pub tol_infeasibility: f64,
    /// Fraction-to-boundary step scaling in (0, 1).
    pub step_fraction: f64,
    /// Static diagonal regularization of the KKT matrix.
    pub static_regularization: f64,
    /// Iterative-refinement rounds per KKT solve.
    pub refine_steps: usize,
    /// Record per-iteration statistics in the result.
    pub collect_trace: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tol_feasibility: 1e-8,
            tol_gap: 1e-8,
            tol_infeasibility: 1e-8,
            step_fraction: 0.99,
            static_regularization: 1e-9,
            refine_steps: 3,
            collect_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

/// Primal/dual feasibility residuals plus complementarity, all absolute.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

/// One predictor-corrector iteration, for the optional trace.
///
/// Because iterates are infeasible until convergence, weak duality holds in
/// the residual-corrected sense
/// `dual_obj - primal_obj <= z_norm1 * primal_res + x_norm1 * dual_res`
/// (plus roundoff), which the 1-norms here make checkable.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterTrace {
    pub iter: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap: f64,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub x_norm1: f64,
    pub z_norm1: f64,
    pub mu: f64,
    pub tau: f64,
    pub kappa: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    /// Primal point (tau-scaled) on optimal exit; the unboundedness ray on
    /// `Unbounded`; the last iterate otherwise.
    pub primal: Vec<f64>,
    /// Dual point (tau-scaled) on optimal exit; the Farkas certificate on
    /// `Infeasible`.
    pub dual: Vec<f64>,
    pub slack: Vec<f64>,
    pub status: SolveStatus,
    /// Optimality residuals at the returned point (recomputed from scratch).
    pub residuals: Residuals,
    /// Farkas-type residual of the certificate, for non-optimal exits.
    pub certificate_residual: Option<f64>,
    pub iterations: usize,
    /// Primal objective `c'x` of the returned point.
    pub objective: f64,
    pub trace: Vec<IterTrace>,
}

/// Recompute the residual triplet from scratch, independent of solver
/// internals: `||Ax + s - b||_inf`, `||A'z + c||_inf`, and the
/// complementarity `|<s, z>|`.
pub fn check_kkt(prog: &ConicProgram, result: &SolverResult) -> Residuals {
    residuals_at(prog, &result.primal, &result.dual, &result.slack)
}

/// Residuals of an arbitrary primal/dual/slack triple against the program.
pub fn residuals_at(prog: &ConicProgram, x: &[f64], z: &[f64], s: &[f64]) -> Residuals {
    let m = prog.num_rows();
    let n = prog.num_vars;
    let mut primal = 0.0f64;
    let mut dual_vec = vec![0.0; n];
    for (r, row) in prog.rows.iter().enumerate() {
        let mut ax = 0.0;
        for &(c, v) in row {
            ax += v * x[c];
            dual_vec[c] += v * z[r];
        }
        primal = primal.max((ax + s[r] - prog.rhs[r]).abs());
    }
    let mut dual = 0.0f64;
    for j in 0..n {
        dual = dual.max((dual_vec[j] + prog.objective[j]).abs());
    }
    let mut comp = 0.0;
    for r in 0..m {
        comp += s[r] * z[r];
    }
    Residuals {
        primal,
        dual,
        gap: comp.abs(),
    }
}

/// Worst cone-membership violation of a slack vector (positive = outside).
pub fn cone_violation(prog: &ConicProgram, s: &[f64]) -> f64 {
    ConeLayout::new(&prog.cones).violation(s)
}

struct Presolved {
    prog: ConicProgram,
    /// Kept original row index per reduced row.
    kept: Vec<usize>,
    /// Rows dropped by presolve (empty zero/nonneg rows with consistent rhs).
    dropped: Vec<usize>,
}

enum PresolveOutcome {
    Reduced(Presolved),
    /// An empty row is contradictory on its own; certificate row recorded.
    TriviallyInfeasible { row: usize },
}

/// Remove empty zero/nonnegative rows (the only presolve performed). An
/// empty row with inconsistent rhs proves infeasibility outright. Rows
/// inside second-order blocks are kept verbatim: constant components of a
/// cone are legitimate.
fn presolve(prog: &ConicProgram) -> PresolveOutcome {
    let mut keep = vec![true; prog.num_rows()];
    let mut dropped = Vec::new();
    let mut at = 0usize;
    for block in &prog.cones {
        match *block {
            ConeBlock::Zero(len) => {
                for r in at..at + len {
                    if prog.rows[r].is_empty() {
                        if prog.rhs[r].abs() > 1e-15 {
                            return PresolveOutcome::TriviallyInfeasible { row: r };
                        }
                        keep[r] = false;
                        dropped.push(r);
                    }
                }
            }
            ConeBlock::NonNeg(len) => {
                for r in at..at + len {
                    if prog.rows[r].is_empty() {
                        if prog.rhs[r] < -1e-15 {
                            return PresolveOutcome::TriviallyInfeasible { row: r };
                        }
                        keep[r] = false;
                        dropped.push(r);
                    }
                }
            }
            ConeBlock::Soc(_) => {}
        }
        at += block.len();
    }

    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut cones: Vec<ConeBlock> = Vec::new();
    let mut kept = Vec::new();
    let push_block = |cones: &mut Vec<ConeBlock>, blk: ConeBlock| {
        if blk.is_empty() {
            return;
        }
        match (cones.last_mut(), blk) {
            (Some(ConeBlock::Zero(n)), ConeBlock::Zero(k)) => *n += k,
            (Some(ConeBlock::NonNeg(n)), ConeBlock::NonNeg(k)) => *n += k,
            _ => cones.push(blk),
        }
    };
    let mut at = 0usize;
    for block in &prog.cones {
        let len = block.len();
        match *block {
            ConeBlock::Zero(_) | ConeBlock::NonNeg(_) => {
                let mut count = 0usize;
                for r in at..at + len {
                    if keep[r] {
                        rows.push(prog.rows[r].clone());
                        rhs.push(prog.rhs[r]);
                        kept.push(r);
                        count += 1;
                    }
                }
                let blk = match *block {
                    ConeBlock::Zero(_) => ConeBlock::Zero(count),
                    _ => ConeBlock::NonNeg(count),
                };
                push_block(&mut cones, blk);
            }
            ConeBlock::Soc(_) => {
                for r in at..at + len {
                    rows.push(prog.rows[r].clone());
                    rhs.push(prog.rhs[r]);
                    kept.push(r);
                }
                push_block(&mut cones, ConeBlock::Soc(len));
            }
        }
        at += len;
    }
    PresolveOutcome::Reduced(Presolved {
        prog: ConicProgram {
            num_vars: prog.num_vars,
            objective: prog.objective.clone(),
            rows,
            rhs,
            cones,
            labels: prog.labels.clone(),
            warnings: Vec::new(),
        },
        kept,
        dropped,
    })
}

fn pos_step(u: f64, du: f64) -> f64 {
    if du < 0.0 {
        -u / du
    } else {
        f64::INFINITY
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve a conic program. Numerical breakdown is reported as a `MaxIter`
/// status with diagnostics, never a panic; `Err` is reserved for malformed
/// inputs.
pub fn solve(prog: &ConicProgram, settings: &SolverSettings) -> Result<SolverResult, SolverError> {
    prog.validate_structure()?;

    let full_m = prog.num_rows();
    let presolved = match presolve(prog) {
        PresolveOutcome::TriviallyInfeasible { row } => {
            // The empty row alone is a Farkas certificate.
            let mut z = vec![0.0; full_m];
            z[row] = if prog.rhs[row] > 0.0 { -1.0 } else { 1.0 };
            let scale = prog.rhs[row].abs();
            z[row] /= scale;
            return Ok(SolverResult {
                primal: vec![0.0; prog.num_vars],
                dual: z,
                slack: vec![0.0; full_m],
                status: SolveStatus::Infeasible,
                residuals: Residuals {
                    primal: f64::INFINITY,
                    dual: f64::INFINITY,
                    gap: 0.0,
                },
                certificate_residual: Some(0.0),
                iterations: 0,
                objective: 0.0,
                trace: Vec::new(),
            });
        }
        PresolveOutcome::Reduced(p) => p,
    };
    let reduced = &presolved.prog;

    let inner = solve_reduced(reduced, settings);

    // Map the reduced-space result back to original row indices.
    let mut z_full = vec![0.0; full_m];
    let mut s_full = vec![0.0; full_m];
    for (ri, &orig) in presolved.kept.iter().enumerate() {
        z_full[orig] = inner.dual[ri];
        s_full[orig] = inner.slack[ri];
    }
    for &orig in &presolved.dropped {
        // Dropped rows were empty: s = b, z = 0 satisfies them exactly
        // (for certificate rays the homogeneous slack is zero instead).
        s_full[orig] = if inner.status == SolveStatus::Optimal {
            prog.rhs[orig]
        } else {
            0.0
        };
    }
    let mut result = SolverResult {
        primal: inner.primal,
        dual: z_full,
        slack: s_full,
        status: inner.status,
        residuals: inner.residuals,
        certificate_residual: inner.certificate_residual,
        iterations: inner.iterations,
        objective: inner.objective,
        trace: inner.trace,
    };
    if result.status == SolveStatus::Optimal {
        result.residuals = residuals_at(prog, &result.primal, &result.dual, &result.slack);
    }
    Ok(result)
}

fn solve_reduced(prog: &ConicProgram, settings: &SolverSettings) -> SolverResult {
    let n = prog.num_vars;
    let m = prog.num_rows();
    let layout = ConeLayout::new(&prog.cones);
    let degree = layout.degree;

    let make_result = |x: Vec<f64>,
                       z: Vec<f64>,
                       s: Vec<f64>,
                       status: SolveStatus,
                       cert: Option<f64>,
                       iterations: usize,
                       trace: Vec<IterTrace>| {
        let residuals = residuals_at(prog, &x, &z, &s);
        let objective = dot(&prog.objective, &x);
        SolverResult {
            primal: x,
            dual: z,
            slack: s,
            status,
            residuals,
            certificate_residual: cert,
            iterations,
            objective,
            trace,
        }
    };

    if m == 0 {
        // No constraints: optimal at the origin iff the objective is zero,
        // otherwise the problem is unbounded along -c.
        let c_norm = inf_norm(&prog.objective);
        if c_norm <= 1e-15 {
            return make_result(
                vec![0.0; n],
                vec![],
                vec![],
                SolveStatus::Optimal,
                None,
                0,
                Vec::new(),
            );
        }
        let ray: Vec<f64> = prog.objective.iter().map(|&c| -c / c_norm).collect();
        return make_result(ray, vec![], vec![], SolveStatus::Unbounded, Some(0.0), 0, Vec::new());
    }

    // Homogeneous self-dual state.
    let mut x = vec![0.0; n];
    let mut z = vec![0.0; m];
    let mut s = vec![0.0; m];
    layout.init_interior(&mut s, &mut z);
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let mut kkt = DenseKkt::new(n, m, settings.static_regularization);

    // Least-squares starting point: s from min ||Ax - b||, z from
    // min ||A'z + c||, both shifted into the strict interior. Keeps the
    // iterates on the data's scale so tau stays near one. Falls back to the
    // identity point if the factorization fails.
    {
        let id = layout.identity_scaling();
        kkt.static_reg = settings.static_regularization.max(1e-8);
        kkt.assemble(prog, &id);
        if kkt.factor().is_ok() {
            let mut rhs = vec![0.0; n + m];
            rhs[n..].copy_from_slice(&prog.rhs);
            let mut sol = Vec::new();
            kkt.solve_refined(prog, &id, &rhs, 1, &mut sol);
            let mut s_raw: Vec<f64> = (0..m).map(|r| -sol[n + r]).collect();
            layout.shift_to_interior(&mut s_raw, true);

            let mut rhs_d = vec![0.0; n + m];
            for j in 0..n {
                rhs_d[j] = -prog.objective[j];
            }
            let mut sol_d = Vec::new();
            kkt.solve_refined(prog, &id, &rhs_d, 1, &mut sol_d);
            let mut z_raw: Vec<f64> = sol_d[n..].to_vec();
            layout.shift_to_interior(&mut z_raw, false);

            x.copy_from_slice(&sol[..n]);
            s = s_raw;
            z = z_raw;
        }
    }
    let mut trace: Vec<IterTrace> = Vec::new();

    let mut r_p = vec![0.0; m];
    let mut r_d = vec![0.0; n];
    let mut lambda_sq = vec![0.0; m];
    let mut corr = vec![0.0; m];
    let mut d_s = vec![0.0; m];
    let mut w_term = vec![0.0; m];
    let mut tmp_m = vec![0.0; m];
    let mut ds_dir = vec![0.0; m];
    let mut rhs1 = vec![0.0; n + m];
    let mut rhs2 = vec![0.0; n + m];
    let mut sol1: Vec<f64> = Vec::new();
    let mut sol2: Vec<f64> = Vec::new();
    let mut stalled = 0usize;

    let b = &prog.rhs;
    let c = &prog.objective;

    let mut iterations = 0usize;
    for iter in 0..=settings.max_iterations {
        iterations = iter;

        // Residuals of the embedding.
        for (r, row) in prog.rows.iter().enumerate() {
            let mut ax = 0.0;
            for &(cidx, v) in row {
                ax += v * x[cidx];
            }
            r_p[r] = ax + s[r] - b[r] * tau;
        }
        r_d.fill(0.0);
        for (r, row) in prog.rows.iter().enumerate() {
            for &(cidx, v) in row {
                r_d[cidx] += v * z[r];
            }
        }
        for j in 0..n {
            r_d[j] += c[j] * tau;
        }
        let cx = dot(c, &x);
        let bz = dot(b, &z);
        let r_g = kappa + cx + bz;
        let mu = (dot(&s, &z) + tau * kappa) / (degree + 1) as f64;

        // Candidate solution checks (tau-scaled).
        let pres = inf_norm(&r_p) / tau;
        let dres = inf_norm(&r_d) / tau;
        let pobj = cx / tau;
        let dobj = -bz / tau;
        let comp = dot(&s, &z) / (tau * tau);

        if settings.collect_trace {
            trace.push(IterTrace {
                iter,
                primal_res: pres,
                dual_res: dres,
                gap: comp,
                primal_obj: pobj,
                dual_obj: dobj,
                x_norm1: x.iter().map(|v| v.abs()).sum::<f64>() / tau,
                z_norm1: z.iter().map(|v| v.abs()).sum::<f64>() / tau,
                mu,
                tau,
                kappa,
                step: 0.0,
            });
        }

        if pres <= settings.tol_feasibility
            && dres <= settings.tol_feasibility
            && comp <= settings.tol_gap
        {
            let xs: Vec<f64> = x.iter().map(|v| v / tau).collect();
            let zs: Vec<f64> = z.iter().map(|v| v / tau).collect();
            let ss: Vec<f64> = s.iter().map(|v| v / tau).collect();
            return make_result(xs, zs, ss, SolveStatus::Optimal, None, iter, trace);
        }

        // Farkas certificates. Primal infeasibility: z in K*, A'z = 0,
        // b'z < 0. Dual infeasibility (unbounded primal): -Ax in K, c'x < 0.
        let atz = {
            let mut v = r_d.clone();
            for j in 0..n {
                v[j] -= c[j] * tau;
            }
            v
        };
        if bz < 0.0 {
            let res = inf_norm(&atz) / -bz;
            if res <= settings.tol_infeasibility {
                let scale = -bz;
                let zc: Vec<f64> = z.iter().map(|v| v / scale).collect();
                let sc: Vec<f64> = s.iter().map(|v| v / scale).collect();
                let mut out = make_result(
                    vec![0.0; n],
                    zc,
                    sc,
                    SolveStatus::Infeasible,
                    Some(res),
                    iter,
                    trace,
                );
                out.objective = 0.0;
                return out;
            }
        }
        if cx < 0.0 {
            let mut axs = vec![0.0; m];
            for (r, row) in prog.rows.iter().enumerate() {
                let mut ax = 0.0;
                for &(cidx, v) in row {
                    ax += v * x[cidx];
                }
                axs[r] = ax + s[r];
            }
            let res = inf_norm(&axs) / -cx;
            if res <= settings.tol_infeasibility {
                let scale = -cx;
                let xc: Vec<f64> = x.iter().map(|v| v / scale).collect();
                let sc: Vec<f64> = s.iter().map(|v| v / scale).collect();
                return make_result(
                    xc,
                    vec![0.0; m],
                    sc,
                    SolveStatus::Unbounded,
                    Some(res),
                    iter,
                    trace,
                );
            }
        }

        if iter == settings.max_iterations {
            break;
        }

        // Nesterov-Todd scaling and the shared KKT factorization.
        let scaling = match layout.nt_scaling(&s, &z) {
            Ok(sc) => sc,
            Err(_) => break, // lost interiority: numerical breakdown
        };
        let mut lambda = vec![0.0; m];
        scaling.apply_w(&z, &mut lambda);

        // Let the regularization follow the barrier down: near convergence
        // the KKT matrix is more singular than a fixed epsilon, which would
        // cap the attainable accuracy.
        kkt.static_reg = settings
            .static_regularization
            .min((0.1 * mu).max(1e-13));
        kkt.assemble(prog, &scaling);
        let mut factored = kkt.factor().is_ok();
        let mut boost = 0;
        while !factored && boost < 3 {
            kkt.static_reg *= 100.0;
            kkt.assemble(prog, &scaling);
            factored = kkt.factor().is_ok();
            boost += 1;
        }
        if !factored {
            break;
        }

        // Constant column of the homogeneous system.
        for j in 0..n {
            rhs1[j] = -c[j];
        }
        for r in 0..m {
            rhs1[n + r] = b[r];
        }
        kkt.solve_refined(prog, &scaling, &rhs1, settings.refine_steps, &mut sol1);
        let (dx1, dz1) = sol1.split_at(n);
        let den = dot(c, dx1) + dot(b, dz1) - kappa / tau;
        let reg_used = kkt.static_reg;

        scaling.jordan_mul(&lambda, &lambda, &mut lambda_sq);

        // One closure per direction solve: given the complementarity targets
        // (d_s, d_kappa) and the residual weight eta = 1 - sigma, produce
        // the full direction.
        let mut direction = |d_s: &[f64],
                             d_kappa: f64,
                             eta: f64,
                             w_term: &mut Vec<f64>,
                             tmp_m: &mut Vec<f64>,
                             ds_out: &mut Vec<f64>,
                             rhs2: &mut Vec<f64>,
                             sol2: &mut Vec<f64>|
         -> (Vec<f64>, Vec<f64>, f64, f64) {
            scaling.jordan_div_lambda(&lambda, d_s, tmp_m);
            scaling.apply_w(tmp_m, w_term);
            for j in 0..n {
                rhs2[j] = -eta * r_d[j];
            }
            for r in 0..m {
                rhs2[n + r] = -eta * r_p[r] + w_term[r];
            }
            kkt.solve_refined(prog, &scaling, rhs2, settings.refine_steps, sol2);
            let (dx2, dz2) = sol2.split_at(n);
            let num = -eta * r_g + d_kappa / tau - dot(c, dx2) - dot(b, dz2);
            let dtau = if den.abs() > 1e-300 { num / den } else { 0.0 };
            let dx: Vec<f64> = (0..n).map(|j| dx2[j] + dtau * dx1[j]).collect();
            let dz: Vec<f64> = (0..m).map(|r| dz2[r] + dtau * dz1[r]).collect();
            scaling.apply_h(&dz, ds_out);
            for r in 0..m {
                ds_out[r] = -w_term[r] - ds_out[r];
            }
            let dkappa = -(d_kappa + kappa * dtau) / tau;
            (dx, dz, dtau, dkappa)
        };

        // Predictor (affine) direction.
        let (dx_a, dz_a, dtau_a, dkappa_a) = direction(
            &lambda_sq, tau * kappa, 1.0, &mut w_term, &mut tmp_m, &mut ds_dir, &mut rhs2,
            &mut sol2,
        );
        if std::env::var_os("CVAROPT_IPM_DEBUG").is_some() {
            // Newton residual of the affine direction on the primal row:
            // A dx + ds - b dtau should equal -r_p.
            let mut worst = 0.0f64;
            for (r, row) in prog.rows.iter().enumerate() {
                let mut ax = 0.0;
                for &(cidx, v) in row {
                    ax += v * dx_a[cidx];
                }
                let res = ax + ds_dir[r] - b[r] * dtau_a + r_p[r];
                worst = worst.max(res.abs());
            }
            let mut worst_d = 0.0f64;
            let mut atz = vec![0.0; n];
            for (r, row) in prog.rows.iter().enumerate() {
                for &(cidx, v) in row {
                    atz[cidx] += v * dz_a[r];
                }
            }
            for j in 0..n {
                let res = atz[j] + c[j] * dtau_a + r_d[j];
                worst_d = worst_d.max(res.abs());
            }
            eprintln!(
                "iter {iter}: mu={mu:.3e} affine newton res: primal {worst:.3e} dual {worst_d:.3e} reg {reg_used:.1e}"
            );
        }
        let ds_a = ds_dir.clone();
        let alpha_aff = {
            let a = layout
                .max_step(&s, &ds_a)
                .min(layout.max_step(&z, &dz_a))
                .min(pos_step(tau, dtau_a))
                .min(pos_step(kappa, dkappa_a));
            a.min(1.0)
        };
        let mu_aff = {
            let mut acc = 0.0;
            for r in 0..m {
                acc += (s[r] + alpha_aff * ds_a[r]) * (z[r] + alpha_aff * dz_a[r]);
            }
            acc += (tau + alpha_aff * dtau_a) * (kappa + alpha_aff * dkappa_a);
            acc / (degree + 1) as f64
        };
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0 - 1e-6);

        // Corrector: second-order term in the scaled space.
        {
            let mut wds = vec![0.0; m];
            let mut wdz = vec![0.0; m];
            scaling.apply_w_inv(&ds_a, &mut wds);
            scaling.apply_w(&dz_a, &mut wdz);
            scaling.jordan_mul(&wds, &wdz, &mut corr);
        }
        let at = &layout.offsets;
        for (bi, blk) in layout.blocks.iter().enumerate() {
            let base = at[bi];
            match *blk {
                ConeBlock::Zero(len) => {
                    for r in base..base + len {
                        d_s[r] = 0.0;
                    }
                }
                ConeBlock::NonNeg(len) => {
                    for r in base..base + len {
                        d_s[r] = lambda_sq[r] + corr[r] - sigma * mu;
                    }
                }
                ConeBlock::Soc(len) => {
                    d_s[base] = lambda_sq[base] + corr[base] - sigma * mu;
                    for r in base + 1..base + len {
                        d_s[r] = lambda_sq[r] + corr[r];
                    }
                }
            }
        }
        let d_kappa = tau * kappa + dtau_a * dkappa_a - sigma * mu;

        let (dx, dz, dtau, dkappa) = direction(
            &d_s,
            d_kappa,
            1.0 - sigma,
            &mut w_term,
            &mut tmp_m,
            &mut ds_dir,
            &mut rhs2,
            &mut sol2,
        );
        let ds = &ds_dir;

        let alpha_max = layout
            .max_step(&s, ds)
            .min(layout.max_step(&z, &dz))
            .min(pos_step(tau, dtau))
            .min(pos_step(kappa, dkappa));
        let alpha = (settings.step_fraction * alpha_max).min(1.0);

        if alpha < 1e-11 {
            stalled += 1;
            if stalled >= 4 {
                break;
            }
        } else {
            stalled = 0;
        }

        for j in 0..n {
            x[j] += alpha * dx[j];
        }
        for r in 0..m {
            z[r] += alpha * dz[r];
            s[r] += alpha * ds[r];
        }
        tau += alpha * dtau;
        kappa += alpha * dkappa;

        if let Some(last) = trace.last_mut() {
            last.step = alpha;
        }

        if !tau.is_finite() || tau <= 1e-250 || !kappa.is_finite() {
            break;
        }
    }

    // Ran out of iterations or hit a numerical dead end: report the last
    // tau-scaled iterate with its diagnostics.
    let xs: Vec<f64> = x.iter().map(|v| v / tau).collect();
    let zs: Vec<f64> = z.iter().map(|v| v / tau).collect();
    let ss: Vec<f64> = s.iter().map(|v| v / tau).collect();
    make_result(xs, zs, ss, SolveStatus::MaxIter, None, iterations, trace)
}

#[cfg(test)]
mod tests;
