//! Cone kernels: interior initialization, boundary step lengths,
//! Nesterov-Todd scalings, and the Jordan-algebra products the
//! predictor-corrector needs.
//!
//! Zero-cone blocks carry no barrier: their slacks are pinned at zero, their
//! duals are free, and every operation here skips them.

use crate::problems::program::ConeBlock;

/// Row offsets of each cone block plus the total barrier degree.
#[derive(Debug, Clone)]
pub(crate) struct ConeLayout {
    pub blocks: Vec<ConeBlock>,
    pub offsets: Vec<usize>,
    /// Nonnegative entries count 1 each, each second-order block counts 1,
    /// zero blocks count 0.
    pub degree: usize,
}

impl ConeLayout {
    pub fn new(blocks: &[ConeBlock]) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut at = 0usize;
        let mut degree = 0usize;
        for b in blocks {
            offsets.push(at);
            at += b.len();
            degree += match *b {
                ConeBlock::Zero(_) => 0,
                ConeBlock::NonNeg(n) => n,
                ConeBlock::Soc(_) => 1,
            };
        }
        Self {
            blocks: blocks.to_vec(),
            offsets,
            degree,
        }
    }

    /// Set `s` and `z` to the canonical interior point (the cone identity
    /// element per block; zeros for zero blocks).
    pub fn init_interior(&self, s: &mut [f64], z: &mut [f64]) {
        for (b, &at) in self.blocks.iter().zip(&self.offsets) {
            match *b {
                ConeBlock::Zero(n) => {
                    for i in at..at + n {
                        s[i] = 0.0;
                        z[i] = 0.0;
                    }
                }
                ConeBlock::NonNeg(n) => {
                    for i in at..at + n {
                        s[i] = 1.0;
                        z[i] = 1.0;
                    }
                }
                ConeBlock::Soc(n) => {
                    s[at] = 1.0;
                    z[at] = 1.0;
                    for i in at + 1..at + n {
                        s[i] = 0.0;
                        z[i] = 0.0;
                    }
                }
            }
        }
    }

    /// Largest step `t` with `u + t du` inside the cone product, ignoring
    /// zero blocks. Returns `f64::INFINITY` when unconstrained.
    pub fn max_step(&self, u: &[f64], du: &[f64]) -> f64 {
        let mut step = f64::INFINITY;
        for (b, &at) in self.blocks.iter().zip(&self.offsets) {
            match *b {
                ConeBlock::Zero(_) => {}
                ConeBlock::NonNeg(n) => {
                    for i in at..at + n {
                        if du[i] < 0.0 {
                            step = step.min(-u[i] / du[i]);
                        }
                    }
                }
                ConeBlock::Soc(n) => {
                    step = step.min(soc_max_step(&u[at..at + n], &du[at..at + n]));
                }
            }
        }
        step
    }

    /// Worst violation of cone membership: positive means outside.
    pub fn violation(&self, u: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (b, &at) in self.blocks.iter().zip(&self.offsets) {
            match *b {
                ConeBlock::Zero(n) => {
                    for i in at..at + n {
                        worst = worst.max(u[i].abs());
                    }
                }
                ConeBlock::NonNeg(n) => {
                    for i in at..at + n {
                        worst = worst.max(-u[i]);
                    }
                }
                ConeBlock::Soc(n) => {
                    let norm1 = norm2(&u[at + 1..at + n]);
                    worst = worst.max(norm1 - u[at]);
                }
            }
        }
        if worst == f64::NEG_INFINITY {
            0.0
        } else {
            worst
        }
    }

    /// Scaling with `W = I` on every non-zero block; used to set up the
    /// least-squares starting point.
    pub fn identity_scaling(&self) -> NtScaling {
        let blocks = self
            .blocks
            .iter()
            .map(|b| match *b {
                ConeBlock::Zero(n) => BlockScaling::Zero { len: n },
                ConeBlock::NonNeg(n) => BlockScaling::NonNeg { w: vec![1.0; n] },
                ConeBlock::Soc(n) => {
                    let mut wbar = vec![0.0; n];
                    wbar[0] = 1.0;
                    BlockScaling::Soc { eta: 1.0, wbar }
                }
            })
            .collect();
        NtScaling {
            layout: self.clone(),
            blocks,
        }
    }

    /// Shift a point into the strict interior: per nonnegative entry or SOC
    /// apex, add `1 + (worst violation)` when the point is not safely
    /// inside. Zero-block entries are pinned to zero for slacks and left
    /// untouched for (free) duals.
    pub fn shift_to_interior(&self, u: &mut [f64], pin_zero_blocks: bool) {
        let mut worst = f64::NEG_INFINITY;
        for (b, &at) in self.blocks.iter().zip(&self.offsets) {
            match *b {
                ConeBlock::Zero(_) => {}
                ConeBlock::NonNeg(n) => {
                    for i in at..at + n {
                        worst = worst.max(-u[i]);
                    }
                }
                ConeBlock::Soc(n) => {
                    worst = worst.max(norm2(&u[at + 1..at + n]) - u[at]);
                }
            }
        }
        let shift = if worst >= -1e-8 { 1.0 + worst.max(0.0) } else { 0.0 };
        for (b, &at) in self.blocks.iter().zip(&self.offsets) {
            match *b {
                ConeBlock::Zero(n) => {
                    if pin_zero_blocks {
                        for i in at..at + n {
                            u[i] = 0.0;
                        }
                    }
                }
                ConeBlock::NonNeg(n) => {
                    for i in at..at + n {
                        u[i] += shift;
                    }
                }
                ConeBlock::Soc(_) => {
                    u[at] += shift;
                }
            }
        }
    }

    /// Nesterov-Todd scaling at the strictly interior pair `(s, z)`.
    pub fn nt_scaling(&self, s: &[f64], z: &[f64]) -> Result<NtScaling, &'static str> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, &at) in self.blocks.iter().zip(&self.offsets) {
            match *b {
                ConeBlock::Zero(n) => blocks.push(BlockScaling::Zero { len: n }),
                ConeBlock::NonNeg(n) => {
                    let mut w = Vec::with_capacity(n);
                    for i in at..at + n {
                        if s[i] <= 0.0 || z[i] <= 0.0 {
                            return Err("nonnegative block not strictly interior");
                        }
                        w.push((s[i] / z[i]).sqrt());
                    }
                    blocks.push(BlockScaling::NonNeg { w });
                }
                ConeBlock::Soc(n) => {
                    let sb = &s[at..at + n];
                    let zb = &z[at..at + n];
                    let s_res = sb[0] * sb[0] - dot(&sb[1..], &sb[1..]);
                    let z_res = zb[0] * zb[0] - dot(&zb[1..], &zb[1..]);
                    if s_res <= 0.0 || z_res <= 0.0 || sb[0] <= 0.0 || zb[0] <= 0.0 {
                        return Err("second-order block not strictly interior");
                    }
                    let s_scale = s_res.sqrt();
                    let z_scale = z_res.sqrt();
                    // Normalized points and the geometric-mean combination.
                    let mut dot_sz = sb[0] * zb[0];
                    for i in 1..n {
                        dot_sz += sb[i] * zb[i];
                    }
                    let gamma = ((1.0 + dot_sz / (s_scale * z_scale)) / 2.0).sqrt();
                    let mut wbar = vec![0.0; n];
                    wbar[0] = (sb[0] / s_scale + zb[0] / z_scale) / (2.0 * gamma);
                    for i in 1..n {
                        wbar[i] = (sb[i] / s_scale - zb[i] / z_scale) / (2.0 * gamma);
                    }
                    let eta = (s_scale / z_scale).sqrt();
                    blocks.push(BlockScaling::Soc { eta, wbar });
                }
            }
        }
        let mut lambda = vec![0.0; s.len()];
        let scaling = NtScaling {
            layout: self.clone(),
            blocks,
        };
        scaling.apply_w(z, &mut lambda);
        Ok(scaling)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum BlockScaling {
    Zero { len: usize },
    NonNeg { w: Vec<f64> },
    /// `W = eta * P(wbar)` with `P(v) = [[v0, v1'], [v1, I + v1 v1'/(1+v0)]]`
    /// and `wbar` a unit hyperbolic vector (`wbar0^2 - ||wbar1||^2 = 1`).
    Soc { eta: f64, wbar: Vec<f64> },
}

/// The NT scaling `W` per block, applied as an operator.
#[derive(Debug, Clone)]
pub(crate) struct NtScaling {
    pub layout: ConeLayout,
    pub blocks: Vec<BlockScaling>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `out = P(wbar) v` scaled by `coeff`, with `sign` flipping `wbar1`
/// (P(J wbar) is the inverse of P(wbar)).
fn apply_p(wbar: &[f64], sign: f64, coeff: f64, v: &[f64], out: &mut [f64]) {
    let n = wbar.len();
    let w0 = wbar[0];
    let mut w1v1 = 0.0;
    for i in 1..n {
        w1v1 += sign * wbar[i] * v[i];
    }
    out[0] = coeff * (w0 * v[0] + w1v1);
    let mix = v[0] + w1v1 / (1.0 + w0);
    for i in 1..n {
        out[i] = coeff * (v[i] + mix * sign * wbar[i]);
    }
}

impl NtScaling {
    /// `out = W v` (W is symmetric). Zero blocks map to zero.
    pub fn apply_w(&self, v: &[f64], out: &mut [f64]) {
        for (b, &at) in self.blocks.iter().zip(&self.layout.offsets) {
            match b {
                BlockScaling::Zero { len } => {
                    for i in at..at + len {
                        out[i] = 0.0;
                    }
                }
                BlockScaling::NonNeg { w } => {
                    for (k, wi) in w.iter().enumerate() {
                        out[at + k] = wi * v[at + k];
                    }
                }
                BlockScaling::Soc { eta, wbar } => {
                    let n = wbar.len();
                    apply_p(wbar, 1.0, *eta, &v[at..at + n], &mut out[at..at + n]);
                }
            }
        }
    }

    /// `out = W^{-1} v`. Zero blocks map to zero.
    pub fn apply_w_inv(&self, v: &[f64], out: &mut [f64]) {
        for (b, &at) in self.blocks.iter().zip(&self.layout.offsets) {
            match b {
                BlockScaling::Zero { len } => {
                    for i in at..at + len {
                        out[i] = 0.0;
                    }
                }
                BlockScaling::NonNeg { w } => {
                    for (k, wi) in w.iter().enumerate() {
                        out[at + k] = v[at + k] / wi;
                    }
                }
                BlockScaling::Soc { eta, wbar } => {
                    let n = wbar.len();
                    apply_p(wbar, -1.0, 1.0 / *eta, &v[at..at + n], &mut out[at..at + n]);
                }
            }
        }
    }

    /// `out = H v = W^2 v`. Zero blocks map to zero.
    pub fn apply_h(&self, v: &[f64], out: &mut [f64]) {
        for (b, &at) in self.blocks.iter().zip(&self.layout.offsets) {
            match b {
                BlockScaling::Zero { len } => {
                    for i in at..at + len {
                        out[i] = 0.0;
                    }
                }
                BlockScaling::NonNeg { w } => {
                    for (k, wi) in w.iter().enumerate() {
                        out[at + k] = wi * wi * v[at + k];
                    }
                }
                BlockScaling::Soc { eta, wbar } => {
                    // H = eta^2 (2 wbar wbar' - J).
                    let n = wbar.len();
                    let vb = &v[at..at + n];
                    let wv = dot(wbar, vb);
                    let e2 = eta * eta;
                    out[at] = e2 * (2.0 * wbar[0] * wv - vb[0]);
                    for i in 1..n {
                        out[at + i] = e2 * (2.0 * wbar[i] * wv + vb[i]);
                    }
                }
            }
        }
    }

    /// Write the dense lower triangle of `H` for the block starting at
    /// global row `at`, through the callback `(row, col, value)` with
    /// `row >= col` in global coordinates.
    pub fn for_each_h_entry<F: FnMut(usize, usize, f64)>(&self, mut emit: F) {
        for (b, &at) in self.blocks.iter().zip(&self.layout.offsets) {
            match b {
                BlockScaling::Zero { .. } => {}
                BlockScaling::NonNeg { w } => {
                    for (k, wi) in w.iter().enumerate() {
                        emit(at + k, at + k, wi * wi);
                    }
                }
                BlockScaling::Soc { eta, wbar } => {
                    let n = wbar.len();
                    let e2 = eta * eta;
                    for i in 0..n {
                        for j in 0..=i {
                            let jterm = if i == j {
                                if i == 0 {
                                    1.0
                                } else {
                                    -1.0
                                }
                            } else {
                                0.0
                            };
                            emit(at + i, at + j, e2 * (2.0 * wbar[i] * wbar[j] - jterm));
                        }
                    }
                }
            }
        }
    }

    /// Jordan product `out = a o b` per block (elementwise for the
    /// nonnegative cone, arrow product for second-order blocks).
    pub fn jordan_mul(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        for (blk, &at) in self.blocks.iter().zip(&self.layout.offsets) {
            match blk {
                BlockScaling::Zero { len } => {
                    for i in at..at + len {
                        out[i] = 0.0;
                    }
                }
                BlockScaling::NonNeg { w } => {
                    for k in 0..w.len() {
                        out[at + k] = a[at + k] * b[at + k];
                    }
                }
                BlockScaling::Soc { wbar, .. } => {
                    let n = wbar.len();
                    let (ab, bb) = (&a[at..at + n], &b[at..at + n]);
                    let d0 = dot(ab, bb);
                    for i in 1..n {
                        out[at + i] = ab[0] * bb[i] + bb[0] * ab[i];
                    }
                    out[at] = d0;
                }
            }
        }
    }

    /// Solve `lambda o x = d` per block, where `lambda` is the scaled point
    /// of this scaling.
    pub fn jordan_div_lambda(&self, lambda: &[f64], d: &[f64], out: &mut [f64]) {
        for (blk, &at) in self.blocks.iter().zip(&self.layout.offsets) {
            match blk {
                BlockScaling::Zero { len } => {
                    for i in at..at + len {
                        out[i] = 0.0;
                    }
                }
                BlockScaling::NonNeg { w } => {
                    for k in 0..w.len() {
                        out[at + k] = d[at + k] / lambda[at + k];
                    }
                }
                BlockScaling::Soc { wbar, .. } => {
                    let n = wbar.len();
                    let lb = &lambda[at..at + n];
                    let db = &d[at..at + n];
                    let a = lb[0];
                    let bnorm2 = dot(&lb[1..], &lb[1..]);
                    let det = a * a - bnorm2;
                    let mut bd = 0.0;
                    for i in 1..n {
                        bd += lb[i] * db[i];
                    }
                    let x0 = (a * db[0] - bd) / det;
                    out[at] = x0;
                    for i in 1..n {
                        out[at + i] = (db[i] - x0 * lb[i]) / a;
                    }
                }
            }
        }
    }
}

/// Largest `t >= 0` keeping `u + t du` in the second-order cone, for `u`
/// strictly interior.
fn soc_max_step(u: &[f64], du: &[f64]) -> f64 {
    let a = du[0] * du[0] - dot(&du[1..], &du[1..]);
    let b = 2.0 * (u[0] * du[0] - dot(&u[1..], &du[1..]));
    let c = u[0] * u[0] - dot(&u[1..], &u[1..]);

    // First positive root of a t^2 + b t + c = 0 (q(0) = c > 0), plus the
    // apex guard u0 + t du0 >= 0.
    let mut step = f64::INFINITY;
    if a.abs() < 1e-300 {
        if b < 0.0 {
            step = -c / b;
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // Stable root pair via Vieta.
            let q = -0.5 * (b + b.signum() * sq);
            let (r1, r2) = (q / a, if q != 0.0 { c / q } else { f64::INFINITY });
            for r in [r1, r2] {
                if r > 0.0 && r.is_finite() {
                    step = step.min(r);
                }
            }
        } else if a < 0.0 {
            // q(0) > 0 and q -> -inf forces a real root; numerical noise only.
            step = 0.0;
        }
    }
    if du[0] < 0.0 {
        step = step.min(-u[0] / du[0]);
    }
    step
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout_nonneg_soc() -> ConeLayout {
        ConeLayout::new(&[ConeBlock::NonNeg(2), ConeBlock::Soc(3)])
    }

    #[test]
    fn degree_counts() {
        let l = ConeLayout::new(&[ConeBlock::Zero(4), ConeBlock::NonNeg(3), ConeBlock::Soc(5)]);
        assert_eq!(l.degree, 4);
    }

    #[test]
    fn nt_scaling_maps_s_and_z_to_same_lambda() {
        let layout = layout_nonneg_soc();
        let s = vec![2.0, 0.5, 3.0, 0.8, -0.4];
        let z = vec![0.7, 1.2, 2.0, -0.3, 0.9];
        let sc = layout.nt_scaling(&s, &z).unwrap();
        let mut lam_z = vec![0.0; 5];
        let mut lam_s = vec![0.0; 5];
        sc.apply_w(&z, &mut lam_z);
        sc.apply_w_inv(&s, &mut lam_s);
        for i in 0..5 {
            assert!(
                (lam_z[i] - lam_s[i]).abs() < 1e-12,
                "component {i}: {} vs {}",
                lam_z[i],
                lam_s[i]
            );
        }
    }

    #[test]
    fn w_squared_matches_h() {
        let layout = layout_nonneg_soc();
        let s = vec![2.0, 0.5, 3.0, 0.8, -0.4];
        let z = vec![0.7, 1.2, 2.0, -0.3, 0.9];
        let sc = layout.nt_scaling(&s, &z).unwrap();
        let v = vec![0.3, -1.0, 0.7, 0.2, 1.4];
        let mut wv = vec![0.0; 5];
        let mut wwv = vec![0.0; 5];
        let mut hv = vec![0.0; 5];
        sc.apply_w(&v, &mut wv);
        sc.apply_w(&wv, &mut wwv);
        sc.apply_h(&v, &mut hv);
        for i in 0..5 {
            assert!((wwv[i] - hv[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn w_inverse_roundtrip() {
        let layout = layout_nonneg_soc();
        let s = vec![1.5, 2.5, 2.0, 0.3, 0.1];
        let z = vec![0.4, 0.6, 1.5, 0.2, -0.7];
        let sc = layout.nt_scaling(&s, &z).unwrap();
        let v = vec![1.0, -0.5, 0.25, 2.0, -1.5];
        let mut wv = vec![0.0; 5];
        let mut back = vec![0.0; 5];
        sc.apply_w(&v, &mut wv);
        sc.apply_w_inv(&wv, &mut back);
        for i in 0..5 {
            assert!((back[i] - v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn jordan_div_inverts_mul() {
        let layout = layout_nonneg_soc();
        let s = vec![1.5, 2.5, 2.0, 0.3, 0.1];
        let z = vec![0.4, 0.6, 1.5, 0.2, -0.7];
        let sc = layout.nt_scaling(&s, &z).unwrap();
        let mut lambda = vec![0.0; 5];
        sc.apply_w(&z, &mut lambda);
        let x = vec![0.2, -0.4, 1.1, 0.5, -0.3];
        let mut d = vec![0.0; 5];
        sc.jordan_mul(&lambda, &x, &mut d);
        let mut back = vec![0.0; 5];
        sc.jordan_div_lambda(&lambda, &d, &mut back);
        for i in 0..5 {
            assert!((back[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn soc_step_hits_boundary() {
        let u = vec![1.0, 0.0, 0.0];
        let du = vec![0.0, 1.0, 0.0];
        // u + t du on boundary when t = 1.
        let t = soc_max_step(&u, &du);
        assert!((t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soc_step_unbounded_inside() {
        let u = vec![1.0, 0.0, 0.0];
        let du = vec![1.0, 0.5, 0.0];
        assert!(soc_max_step(&u, &du).is_infinite());
    }

    #[test]
    fn nonneg_step() {
        let layout = ConeLayout::new(&[ConeBlock::NonNeg(2)]);
        let u = vec![1.0, 2.0];
        let du = vec![-0.5, 1.0];
        assert!((layout.max_step(&u, &du) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn violation_measures() {
        let layout = layout_nonneg_soc();
        let ok = vec![0.1, 0.2, 1.0, 0.3, 0.4];
        assert!(layout.violation(&ok) <= 0.0);
        let bad = vec![-0.1, 0.2, 0.5, 0.3, 0.5];
        assert!(layout.violation(&bad) > 0.09);
    }
}
