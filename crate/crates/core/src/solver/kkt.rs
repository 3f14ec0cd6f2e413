//! Dense symmetric quasi-definite KKT systems.
//!
//! The Newton systems of the interior-point method all share the matrix
//!
//! ```text
//! K = [ eps*I    A'        ]
//!     [ A      -(H + eps*I) ]
//! ```
//!
//! with `H` the Nesterov-Todd scaling blocks (zero for zero-cone rows) and
//! `eps` a small static regularization making `K` quasi-definite, so an
//! LDL' factorization without pivoting exists and is stable.
//!
//! The factorization runs on the row-block-first ordering `[z; x]`: the
//! leading pivots are then `-(h_r + eps)` (healthy while the scaling is
//! moderate) and the trailing block fills with the normal-equations Schur
//! complement `eps*I + A' H^-1 A`, which is positive definite. Ordering the
//! near-zero `eps*I` block first instead lets element growth destroy the
//! factor. Solves are polished by iterative refinement against the
//! *unregularized* matrix.

use crate::problems::program::ConicProgram;
use crate::solver::cones::NtScaling;

pub(crate) struct DenseKkt {
    n: usize,
    m: usize,
    dim: usize,
    /// Row-major working matrix in the permuted ordering `[z; x]`; the
    /// lower triangle holds the factor in place.
    mat: Vec<f64>,
    diag: Vec<f64>,
    perm_buf: Vec<f64>,
    factored: bool,
    pub static_reg: f64,
}

#[derive(Debug)]
#[allow(dead_code)] // fields surface in Debug diagnostics
pub(crate) struct KktBreakdown {
    pub column: usize,
    pub pivot: f64,
}

impl DenseKkt {
    pub fn new(n: usize, m: usize, static_reg: f64) -> Self {
        let dim = n + m;
        Self {
            n,
            m,
            dim,
            mat: vec![0.0; dim * dim],
            diag: vec![0.0; dim],
            perm_buf: vec![0.0; dim],
            factored: false,
            static_reg,
        }
    }

    /// Fill the lower triangle (in `[z; x]` ordering) with the regularized
    /// KKT matrix for the current scaling.
    pub fn assemble(&mut self, prog: &ConicProgram, scaling: &NtScaling) {
        let dim = self.dim;
        let m = self.m;
        self.mat[..dim * dim].fill(0.0);
        // -(H + eps I) block at rows/cols 0..m.
        for r in 0..m {
            self.mat[r * dim + r] = -self.static_reg;
        }
        scaling.for_each_h_entry(|i, j, v| {
            self.mat[i * dim + j] -= v;
        });
        // A at rows m..m+n (variable j), cols 0..m (row r).
        for (r, row) in prog.rows.iter().enumerate() {
            for &(c, v) in row {
                self.mat[(m + c) * dim + r] = v;
            }
        }
        // eps I on the variable block.
        for j in 0..self.n {
            let g = m + j;
            self.mat[g * dim + g] = self.static_reg;
        }
        self.factored = false;
    }

    /// In-place LDL' without pivoting. Pivot signs are known a priori from
    /// quasi-definiteness (- for the row block, + for the variable block);
    /// a pivot collapsing to zero is nudged to the expected sign, and a
    /// hard sign flip aborts so the caller can boost the regularization.
    pub fn factor(&mut self) -> Result<(), KktBreakdown> {
        let dim = self.dim;
        let m = self.m;
        let min_pivot = (self.static_reg * 1e-3).max(1e-14);
        let mut col = vec![0.0; dim];
        for k in 0..dim {
            let expected = if k < m { -1.0 } else { 1.0 };
            let mut d = self.mat[k * dim + k];
            if d * expected <= 0.0 {
                if d.abs() > 1e3 * min_pivot {
                    return Err(KktBreakdown { column: k, pivot: d });
                }
                d = expected * min_pivot;
            } else if d.abs() < min_pivot {
                d = expected * min_pivot;
            }
            self.diag[k] = d;
            for i in (k + 1)..dim {
                col[i] = self.mat[i * dim + k];
                self.mat[i * dim + k] = col[i] / d;
            }
            for i in (k + 1)..dim {
                let lik = self.mat[i * dim + k];
                if lik == 0.0 {
                    continue;
                }
                let row_i = &mut self.mat[i * dim..i * dim + i + 1];
                for j in (k + 1)..=i {
                    row_i[j] -= lik * col[j];
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Back-substitution in the permuted ordering.
    fn solve_permuted(&self, x: &mut [f64]) {
        let dim = self.dim;
        for i in 0..dim {
            let mut acc = x[i];
            let row = &self.mat[i * dim..i * dim + i];
            for k in 0..i {
                acc -= row[k] * x[k];
            }
            x[i] = acc;
        }
        for i in 0..dim {
            x[i] /= self.diag[i];
        }
        for i in (0..dim).rev() {
            let mut acc = x[i];
            for k in (i + 1)..dim {
                acc -= self.mat[k * dim + i] * x[k];
            }
            x[i] = acc;
        }
    }

    /// Solve `K sol = rhs` with `rhs`/`sol` in the natural `[x; z]` order.
    pub fn solve_in_place(&mut self, x: &mut [f64]) {
        assert!(self.factored);
        let (n, m) = (self.n, self.m);
        self.perm_buf[..m].copy_from_slice(&x[n..]);
        self.perm_buf[m..].copy_from_slice(&x[..n]);
        let mut buf = std::mem::take(&mut self.perm_buf);
        self.solve_permuted(&mut buf);
        x[..n].copy_from_slice(&buf[m..]);
        x[n..].copy_from_slice(&buf[..m]);
        self.perm_buf = buf;
    }

    /// Apply the *unregularized* KKT matrix in natural order:
    /// `out = [A' vz ; A vx - H vz]`.
    pub fn apply_unregularized(
        &self,
        prog: &ConicProgram,
        scaling: &NtScaling,
        v: &[f64],
        out: &mut [f64],
    ) {
        let (vx, vz) = v.split_at(self.n);
        out[..self.n].fill(0.0);
        for (r, row) in prog.rows.iter().enumerate() {
            let zr = vz[r];
            let mut ax = 0.0;
            for &(c, coef) in row {
                out[c] += coef * zr;
                ax += coef * vx[c];
            }
            out[self.n + r] = ax;
        }
        let mut hz = vec![0.0; self.m];
        scaling.apply_h(vz, &mut hz);
        for r in 0..self.m {
            out[self.n + r] -= hz[r];
        }
    }

    /// Solve with iterative refinement against the unregularized matrix.
    ///
    /// Near convergence the true KKT matrix can be more singular than the
    /// regularization, where plain refinement diverges; each round is
    /// therefore accepted only if it shrinks the residual, and the best
    /// iterate wins.
    pub fn solve_refined(
        &mut self,
        prog: &ConicProgram,
        scaling: &NtScaling,
        rhs: &[f64],
        refine_steps: usize,
        x: &mut Vec<f64>,
    ) {
        x.clear();
        x.extend_from_slice(rhs);
        self.solve_in_place(x);
        if refine_steps == 0 {
            return;
        }
        let dim = self.dim;
        let mut resid = vec![0.0; dim];
        let mut corr = vec![0.0; dim];
        let compute_residual = |this: &Self, sol: &[f64], resid: &mut [f64]| -> f64 {
            this.apply_unregularized(prog, scaling, sol, resid);
            let mut worst = 0.0f64;
            for i in 0..dim {
                resid[i] = rhs[i] - resid[i];
                worst = worst.max(resid[i].abs());
            }
            worst
        };
        let mut best_norm = compute_residual(self, x, &mut resid);
        for _ in 0..refine_steps {
            if best_norm < 1e-14 {
                break;
            }
            corr.copy_from_slice(&resid);
            self.solve_in_place(&mut corr);
            let trial: Vec<f64> = (0..dim).map(|i| x[i] + corr[i]).collect();
            let trial_norm = compute_residual(self, &trial, &mut resid);
            if trial_norm >= best_norm {
                // Refinement stopped converging; keep the best iterate.
                break;
            }
            *x = trial;
            best_norm = trial_norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::program::{ConeBlock, ConicProgram, VariableLabels};
    use crate::solver::cones::ConeLayout;

    fn tiny_program() -> ConicProgram {
        // Two variables, three nonnegative rows.
        ConicProgram {
            num_vars: 2,
            objective: vec![1.0, 2.0],
            rows: vec![
                vec![(0, 1.0), (1, 1.0)],
                vec![(0, -1.0)],
                vec![(1, -1.0)],
            ],
            rhs: vec![1.0, 0.0, 0.0],
            cones: vec![ConeBlock::NonNeg(3)],
            labels: VariableLabels {
                weights: vec![0, 1],
                ..Default::default()
            },
            warnings: vec![],
        }
    }

    #[test]
    fn factor_solve_residual_small() {
        let prog = tiny_program();
        let layout = ConeLayout::new(&prog.cones);
        let s = vec![0.5, 1.5, 0.7];
        let z = vec![1.1, 0.4, 0.9];
        let scaling = layout.nt_scaling(&s, &z).unwrap();
        let mut kkt = DenseKkt::new(2, 3, 1e-9);
        kkt.assemble(&prog, &scaling);
        kkt.factor().unwrap();
        let rhs = vec![1.0, -2.0, 0.5, 0.25, -0.75];
        let mut x = Vec::new();
        kkt.solve_refined(&prog, &scaling, &rhs, 2, &mut x);
        let mut back = vec![0.0; 5];
        kkt.apply_unregularized(&prog, &scaling, &x, &mut back);
        for i in 0..5 {
            assert!(
                (back[i] - rhs[i]).abs() < 1e-10,
                "residual {} at {i}",
                back[i] - rhs[i]
            );
        }
    }

    #[test]
    fn factor_handles_soc_blocks() {
        let prog = ConicProgram {
            num_vars: 1,
            objective: vec![1.0],
            rows: vec![vec![(0, -1.0)], vec![], vec![]],
            rhs: vec![0.0, 1.0, 1.0],
            cones: vec![ConeBlock::Soc(3)],
            labels: VariableLabels::default(),
            warnings: vec![],
        };
        let layout = ConeLayout::new(&prog.cones);
        let s = vec![2.0, 0.5, -0.4];
        let z = vec![1.5, 0.2, 0.7];
        let scaling = layout.nt_scaling(&s, &z).unwrap();
        let mut kkt = DenseKkt::new(1, 3, 1e-9);
        kkt.assemble(&prog, &scaling);
        kkt.factor().unwrap();
        let rhs = vec![0.3, -1.0, 0.2, 0.9];
        let mut x = Vec::new();
        kkt.solve_refined(&prog, &scaling, &rhs, 2, &mut x);
        let mut back = vec![0.0; 4];
        kkt.apply_unregularized(&prog, &scaling, &x, &mut back);
        for i in 0..4 {
            assert!((back[i] - rhs[i]).abs() < 1e-10);
        }
    }
}
