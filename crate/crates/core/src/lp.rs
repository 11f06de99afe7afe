//! Two-phase revised simplex for `min c'x  s.t.  A x = b, x >= 0`.
//!
//! The public [`LinearProgram`] holds a dense constraint matrix. Internally
//! every program is converted to column-sparse form ([`SparseProgram`]) and
//! solved with an explicit dense basis inverse, updated by rank-one pivots
//! and periodically recomputed from scratch. Rows are scaled by their
//! largest coefficient before solving; multipliers are reported for the
//! unscaled rows.
//!
//! Pricing is Dantzig's rule. After a run of degenerate pivots the solver
//! switches to the least-index rule until a pivot makes progress again.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Smallest pivot element accepted in the ratio test.
pub const PIVOT_TOL: f64 = 1e-9;
/// Phase-1 optimum above which the program is declared infeasible without
/// further work; smaller leftovers are settled by the final cleanup.
pub const INFEASIBLE_TOL: f64 = 1e-6;
/// Artificial level treated as zero in phase 2.
const ZERO_ARTIFICIAL: f64 = 1e-8;
const OPT_TOL: f64 = 1e-10;
const DEGENERATE_STREAK: usize = 50;
const PAR_ROWS: usize = 192;
const PAR_COLS: usize = 20_000;
const PRICING_SEGMENTS: usize = 16;
const PRICING_MIN_SEGMENT: usize = 2_000;
const NOISE_REDUCED_COST: f64 = 1e-7;
const PERTURBATION: f64 = 1e-7;
const DRIVE_OUT_TOL: f64 = 1e-5;
const HARRIS_TOL: f64 = 1e-9;
const SINGULAR_TOL: f64 = 1e-11;
/// Pivots smaller than this fraction of the largest entry are skipped.
const REL_PIVOT_TOL: f64 = 1e-7;
/// Primal infeasibility tolerated after the perturbation is removed.
const CLEAN_TOL: f64 = 1e-11;

fn unit_hash(state: &mut u64) -> f64 {
    // splitmix64
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    /// Row-major, `rows x cols`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub var_names: Option<Vec<String>>,
    pub con_names: Option<Vec<String>>,
}

impl LinearProgram {
    pub fn new(c: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let rows = a.len();
        let cols = c.len();
        if b.len() != rows {
            return Err(Error::Shape(format!(
                "{} right-hand sides for {rows} rows",
                b.len()
            )));
        }
        let mut flat = Vec::with_capacity(rows * cols);
        for (i, row) in a.into_iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            flat.extend(row);
        }
        let lp = Self {
            c,
            a: flat,
            b,
            rows,
            cols,
            var_names: None,
            con_names: None,
        };
        lp.check_finite()?;
        Ok(lp)
    }

    fn check_finite(&self) -> Result<()> {
        if self
            .c
            .iter()
            .chain(&self.a)
            .chain(&self.b)
            .all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Lp("non-finite coefficient".into()))
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.cols + j]
    }

    pub fn to_sparse(&self) -> SparseProgram {
        let mut sp = SparseProgram::new(self.b.clone());
        let mut col = Vec::new();
        for j in 0..self.cols {
            col.clear();
            for i in 0..self.rows {
                let v = self.entry(i, j);
                if v != 0.0 {
                    col.push((i, v));
                }
            }
            sp.push_column(self.c[j], &col);
        }
        sp
    }

    /// Plain-text dump of `(c, A, b)` for cross-checking with other solvers.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# min c'x s.t. Ax = b, x >= 0")?;
        writeln!(w, "rows {} cols {}", self.rows, self.cols)?;
        writeln!(w, "c")?;
        writeln!(w, "{}", join(&self.c))?;
        writeln!(w, "A")?;
        for i in 0..self.rows {
            writeln!(w, "{}", join(&self.a[i * self.cols..(i + 1) * self.cols]))?;
        }
        writeln!(w, "b")?;
        writeln!(w, "{}", join(&self.b))
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Column-sparse equality-form program.
#[derive(Debug, Clone, Default)]
pub struct SparseProgram {
    pub b: Vec<f64>,
    c: Vec<f64>,
    col_start: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseProgram {
    pub fn new(b: Vec<f64>) -> Self {
        Self {
            b,
            c: Vec::new(),
            col_start: vec![0],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn cols(&self) -> usize {
        self.c.len()
    }

    pub fn costs(&self) -> &[f64] {
        &self.c
    }

    /// Appends a column; repeated row entries are summed.
    pub fn push_column(&mut self, cost: f64, entries: &[(usize, f64)]) -> usize {
        let start = self.row_idx.len();
        for &(i, v) in entries {
            debug_assert!(i < self.b.len());
            if let Some(k) = self.row_idx[start..].iter().position(|&r| r == i) {
                self.values[start + k] += v;
            } else {
                self.row_idx.push(i);
                self.values.push(v);
            }
        }
        self.c.push(cost);
        self.col_start.push(self.row_idx.len());
        self.c.len() - 1
    }

    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_start[j]..self.col_start[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    /// `A x - b`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.b.iter().map(|v| -v).collect();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                let (ri, vi) = self.column(j);
                for (&i, &v) in ri.iter().zip(vi) {
                    r[i] += v * xj;
                }
            }
        }
        r
    }

    /// `c - A'y`.
    pub fn reduced_costs(&self, y: &[f64]) -> Vec<f64> {
        (0..self.cols())
            .map(|j| {
                let (ri, vi) = self.column(j);
                self.c[j] - ri.iter().zip(vi).map(|(&i, &v)| v * y[i]).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// One multiplier per constraint row.
    pub y_dual: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.check_finite()?;
    solve_sparse(&lp.to_sparse())
}

pub fn solve_sparse(lp: &SparseProgram) -> Result<LpSolution> {
    let m = lp.rows();
    let n = lp.cols();
    if lp
        .b
        .iter()
        .chain(&lp.c)
        .chain(&lp.values)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Lp("non-finite coefficient".into()));
    }
    if m == 0 {
        // no constraints: optimal at 0 unless some cost is negative
        if lp.c.iter().any(|&c| c < 0.0) {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                x: vec![0.0; n],
                y_dual: vec![],
                objective: f64::NEG_INFINITY,
                iterations: 0,
            });
        }
        return Ok(LpSolution {
            status: LpStatus::Optimal,
            x: vec![0.0; n],
            y_dual: vec![],
            objective: 0.0,
            iterations: 0,
        });
    }
    let mut s = Simplex::new(lp);
    s.run()
}

struct Simplex<'a> {
    lp: &'a SparseProgram,
    m: usize,
    n: usize,
    /// Row factor applied to A and b (includes the sign flip for b < 0).
    row_scale: Vec<f64>,
    vals: Vec<f64>,
    /// Right-hand side in use; perturbed until the final cleanup.
    b: Vec<f64>,
    b_true: Vec<f64>,
    basis: Vec<usize>,
    position: Vec<usize>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    since_refactor: usize,
    refactor_period: usize,
    iterations: usize,
    max_iterations: usize,
    degenerate_run: usize,
    repairs: usize,
    price_cursor: usize,
    rejected: Vec<usize>,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a SparseProgram) -> Self {
        let m = lp.rows();
        let n = lp.cols();
        let mut row_max = vec![0.0f64; m];
        for (&i, &v) in lp.row_idx.iter().zip(&lp.values) {
            row_max[i] = row_max[i].max(v.abs());
        }
        let mag: Vec<f64> = row_max
            .iter()
            .map(|&r| if r > 0.0 { 1.0 / r } else { 1.0 })
            .collect();
        // b + A x~ for a small x~ > 0 stays feasible and breaks degeneracy
        let mut shift = vec![0.0; m];
        let mut seed = 0x9E37_79B9_7F4A_7C15u64;
        for j in 0..n {
            let w = 1.0 + unit_hash(&mut seed);
            for k in lp.col_start[j]..lp.col_start[j + 1] {
                let i = lp.row_idx[k];
                shift[i] += w * lp.values[k] * mag[i];
            }
        }
        let shift_max = shift.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let b_true: Vec<f64> = (0..m).map(|i| lp.b[i] * mag[i]).collect();
        let b_pert: Vec<f64> = if shift_max > 0.0 {
            (0..m)
                .map(|i| b_true[i] + PERTURBATION * shift[i] / shift_max)
                .collect()
        } else {
            b_true.clone()
        };
        let sign: Vec<f64> = b_pert
            .iter()
            .map(|&v| if v < 0.0 { -1.0 } else { 1.0 })
            .collect();
        let row_scale: Vec<f64> = (0..m).map(|i| mag[i] * sign[i]).collect();
        let vals = lp
            .row_idx
            .iter()
            .zip(&lp.values)
            .map(|(&i, &v)| v * row_scale[i])
            .collect();
        let b: Vec<f64> = (0..m).map(|i| b_pert[i] * sign[i]).collect();
        let b_true: Vec<f64> = (0..m).map(|i| b_true[i] * sign[i]).collect();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        let mut position = vec![usize::MAX; n + m];
        for i in 0..m {
            position[n + i] = i;
        }
        Self {
            lp,
            m,
            n,
            row_scale,
            vals,
            xb: b.clone(),
            b,
            b_true,
            basis: (n..n + m).collect(),
            position,
            binv,
            since_refactor: 0,
            refactor_period: m.max(100),
            iterations: 0,
            max_iterations: 50 * (m + n) + 10_000,
            degenerate_run: 0,
            repairs: 0,
            price_cursor: 0,
            rejected: Vec::new(),
        }
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.n
    }

    fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.lp.col_start[j]..self.lp.col_start[j + 1];
        (&self.lp.row_idx[r.clone()], &self.vals[r])
    }

    fn cost(&self, j: usize, phase: u8) -> f64 {
        match (phase, self.is_artificial(j)) {
            (1, true) => 1.0,
            (1, false) => 0.0,
            (_, true) => 0.0,
            (_, false) => self.lp.c[j],
        }
    }

    /// `y' = c_B' B^-1` in scaled row space.
    fn duals(&self, phase: u8) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for i in 0..m {
            let cb = self.cost(self.basis[i], phase);
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, &r) in y.iter_mut().zip(row) {
                    *yk += cb * r;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64], phase: u8) -> f64 {
        let (ri, vi) = self.column(j);
        self.cost(j, phase) - ri.iter().zip(vi).map(|(&i, &v)| v * y[i]).sum::<f64>()
    }

    /// `B^-1 a_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        if self.is_artificial(j) {
            let r = j - self.n;
            for (i, a) in alpha.iter_mut().enumerate() {
                *a = self.binv[i * m + r];
            }
        } else {
            let (ri, vi) = self.column(j);
            for (i, a) in alpha.iter_mut().enumerate() {
                let row = &self.binv[i * m..(i + 1) * m];
                *a = ri.iter().zip(vi).map(|(&r, &v)| row[r] * v).sum();
            }
        }
        alpha
    }

    fn pivot(&mut self, r: usize, entering: usize, alpha: &[f64]) {
        let m = self.m;
        let theta = self.xb[r] / alpha[r];
        for i in 0..m {
            if i != r {
                self.xb[i] -= theta * alpha[i];
            }
        }
        self.xb[r] = theta;

        let inv = 1.0 / alpha[r];
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (pivot_row, after) = rest.split_at_mut(m);
        pivot_row.iter_mut().for_each(|v| *v *= inv);
        let pivot_row = &*pivot_row;
        let nz: Vec<(usize, f64)> = pivot_row
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(c, &v)| (c, v))
            .collect();
        let sparse = 2 * nz.len() < m;
        let update = |(i, row): (usize, &mut [f64])| {
            let f = alpha[i];
            if f != 0.0 {
                if sparse {
                    for &(c, p) in &nz {
                        row[c] -= f * p;
                    }
                } else {
                    for (v, &p) in row.iter_mut().zip(pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        };
        if m >= PAR_ROWS {
            before.par_chunks_mut(m).enumerate().for_each(update);
            after
                .par_chunks_mut(m)
                .enumerate()
                .for_each(|(i, row)| update((i + r + 1, row)));
        } else {
            before.chunks_mut(m).enumerate().for_each(update);
            after
                .chunks_mut(m)
                .enumerate()
                .for_each(|(i, row)| update((i + r + 1, row)));
        }

        let leaving = self.basis[r];
        self.position[leaving] = usize::MAX;
        self.position[entering] = r;
        self.basis[r] = entering;
        self.since_refactor += 1;
    }

    /// Recomputes `B^-1` by Gauss-Jordan elimination and `x_B = B^-1 b`.
    /// Basic columns found linearly dependent are replaced by artificials
    /// of the rows they leave uncovered.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let w = 2 * m;
        let mut aug = vec![0.0; m * w];
        for (k, &j) in self.basis.iter().enumerate() {
            if self.is_artificial(j) {
                aug[(j - self.n) * w + k] = 1.0;
            } else {
                let (ri, vi) = self.column(j);
                for (&i, &v) in ri.iter().zip(vi) {
                    aug[i * w + k] = v;
                }
            }
        }
        for i in 0..m {
            aug[i * w + m + i] = 1.0;
        }
        let mut row_of = vec![usize::MAX; m];
        let mut used = vec![false; m];
        let mut deficient = Vec::new();
        for k in 0..m {
            let (mut best, mut piv) = (0.0, usize::MAX);
            for i in 0..m {
                let v = aug[i * w + k].abs();
                if !used[i] && v > best {
                    best = v;
                    piv = i;
                }
            }
            if best < SINGULAR_TOL {
                deficient.push(k);
                continue;
            }
            used[piv] = true;
            row_of[k] = piv;
            let inv = 1.0 / aug[piv * w + k];
            aug[piv * w..(piv + 1) * w]
                .iter_mut()
                .for_each(|v| *v *= inv);
            let nz: Vec<(usize, f64)> = (k..w)
                .map(|c| (c, aug[piv * w + c]))
                .filter(|&(_, v)| v != 0.0)
                .collect();
            let elim = |(i, row): (usize, &mut [f64])| {
                if i != piv {
                    let f = row[k];
                    if f != 0.0 {
                        for &(c, p) in &nz {
                            row[c] -= f * p;
                        }
                    }
                }
            };
            if m >= PAR_ROWS {
                aug.par_chunks_mut(w).enumerate().for_each(elim);
            } else {
                aug.chunks_mut(w).enumerate().for_each(elim);
            }
        }
        if !deficient.is_empty() {
            let free: Vec<usize> = (0..m).filter(|&i| !used[i]).collect();
            for (&k, &i) in deficient.iter().zip(&free) {
                let art = self.n + i;
                if self.position[art] != usize::MAX {
                    return Err(Error::Lp("basis repair failed".into()));
                }
                self.position[self.basis[k]] = usize::MAX;
                self.position[art] = k;
                self.basis[k] = art;
            }
            self.repairs += 1;
            if self.repairs > 10 * m + 100 {
                return Err(Error::Lp("basis matrix keeps becoming singular".into()));
            }
            return self.refactor();
        }
        for k in 0..m {
            let i = row_of[k];
            self.binv[k * m..(k + 1) * m].copy_from_slice(&aug[i * w + m..(i + 1) * w]);
        }
        self.recompute_xb();
        self.rejected.clear();
        self.since_refactor = 0;
        Ok(())
    }

    fn recompute_xb(&mut self) {
        let m = self.m;
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.xb[i] = row.iter().zip(&self.b).map(|(a, b)| a * b).sum();
        }
    }

    /// Dantzig pricing over segments of the columns, starting at the
    /// segment after the last pick; the whole range is scanned only when a
    /// segment has no improving column. Bland mode scans from index 0.
    fn choose_entering(&mut self, y: &[f64], phase: u8, bland: bool) -> Option<(usize, f64)> {
        let n = self.n;
        let price = |j: usize| -> Option<f64> {
            if self.position[j] != usize::MAX || self.rejected.contains(&j) {
                return None;
            }
            let d = self.reduced_cost(j, y, phase);
            (d < -OPT_TOL).then_some(d)
        };
        if bland {
            return (0..n).find_map(|j| price(j).map(|d| (j, d)));
        }
        let seg = n
            .div_ceil(PRICING_SEGMENTS)
            .max(PRICING_MIN_SEGMENT)
            .min(n.max(1));
        let pick = |a: (f64, usize), b: (f64, usize)| {
            if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        };
        let mut start = self.price_cursor % n.max(1);
        let mut scanned = 0;
        while scanned < n {
            let end = (start + seg).min(n);
            let best = if end - start >= PAR_COLS {
                (start..end)
                    .into_par_iter()
                    .filter_map(|j| price(j).map(|d| (d, j)))
                    .reduce_with(pick)
            } else {
                (start..end)
                    .filter_map(|j| price(j).map(|d| (d, j)))
                    .reduce(pick)
            };
            scanned += end - start;
            if let Some((d, j)) = best {
                self.price_cursor = end % n;
                return Some((j, d));
            }
            start = end % n;
        }
        None
    }

    /// Leaving row for entering column `alpha`; `None` when unbounded.
    fn ratio_test(&self, alpha: &[f64], bland: bool, phase: u8) -> Option<usize> {
        let amax = alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        self.ratio_test_with(alpha, bland, phase, PIVOT_TOL.max(REL_PIVOT_TOL * amax))
            .or_else(|| self.ratio_test_with(alpha, bland, phase, PIVOT_TOL))
    }

    fn ratio_test_with(&self, alpha: &[f64], bland: bool, phase: u8, tol: f64) -> Option<usize> {
        // (row, ratio, ratio with the feasibility allowance)
        let mut cands: Vec<(usize, f64, f64)> = Vec::new();
        for i in 0..self.m {
            let a = alpha[i];
            if phase == 2
                && self.is_artificial(self.basis[i])
                && self.xb[i].abs() <= ZERO_ARTIFICIAL
            {
                // zero-level artificial: blocks in either direction
                if a.abs() > tol {
                    cands.push((i, 0.0, 0.0));
                }
            } else if a > tol {
                let r = (self.xb[i] / a).max(0.0);
                cands.push((i, r, (self.xb[i] + HARRIS_TOL).max(0.0) / a));
            }
        }
        if bland {
            let min = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            return cands
                .iter()
                .filter(|c| c.1 - min <= 1e-12 * (1.0 + min.abs()))
                .min_by_key(|c| self.basis[c.0])
                .map(|c| c.0);
        }
        // Harris: largest pivot among rows blocking within the relaxed bound
        let bound = cands.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        cands
            .iter()
            .filter(|c| c.1 <= bound)
            .max_by(|a, b| {
                alpha[a.0]
                    .abs()
                    .total_cmp(&alpha[b.0].abs())
                    .then(b.0.cmp(&a.0))
            })
            .map(|c| c.0)
    }

    fn run_phase(&mut self, phase: u8) -> Result<PhaseEnd> {
        let mut y = self.duals(phase);
        loop {
            if self.since_refactor >= self.refactor_period {
                self.refactor()?;
                y = self.duals(phase);
            }
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(Error::Lp(format!(
                    "iteration limit {} reached",
                    self.max_iterations
                )));
            }
            let bland = self.degenerate_run >= DEGENERATE_STREAK;
            let Some((j, d)) = self.choose_entering(&y, phase, bland) else {
                // confirm on a fresh factorization before stopping
                if self.since_refactor > 0 {
                    self.refactor()?;
                    y = self.duals(phase);
                    if self.choose_entering(&y, phase, bland).is_some() {
                        continue;
                    }
                }
                return Ok(PhaseEnd::Optimal);
            };
            let alpha = self.ftran(j);
            let Some(r) = self.ratio_test(&alpha, bland, phase) else {
                if phase == 1 || d > -NOISE_REDUCED_COST {
                    // improving direction is round-off; skip the column
                    self.rejected.push(j);
                    continue;
                }
                return Ok(PhaseEnd::Unbounded);
            };
            self.rejected.clear();
            let step = self.xb[r] / alpha[r];
            if step.abs() <= 1e-12 {
                self.degenerate_run += 1;
            } else {
                self.degenerate_run = 0;
            }
            self.pivot(r, j, &alpha);
            self.update_duals(&mut y, r, d);
            for v in self.xb.iter_mut() {
                if *v < 0.0 && *v > -1e-13 {
                    *v = 0.0;
                }
            }
        }
    }

    /// After a pivot on row `r` with entering reduced cost `d`.
    fn update_duals(&self, y: &mut [f64], r: usize, d: f64) {
        let m = self.m;
        let row = &self.binv[r * m..(r + 1) * m];
        for (yk, &v) in y.iter_mut().zip(row) {
            *yk += d * v;
        }
    }

    /// Dual simplex pivots restoring primal feasibility of an optimal
    /// basis after the right-hand side changed. Returns `false` when some
    /// row admits no entering column, i.e. the program is infeasible.
    fn dual_cleanup(&mut self) -> Result<bool> {
        let m = self.m;
        let mut y = self.duals(2);
        loop {
            if self.since_refactor >= self.refactor_period {
                self.refactor()?;
                y = self.duals(2);
            }
            let mut leave: Option<(f64, usize)> = None;
            for i in 0..m {
                let viol = if self.is_artificial(self.basis[i]) {
                    self.xb[i].abs()
                } else {
                    -self.xb[i]
                };
                if viol > CLEAN_TOL && leave.is_none_or(|(w, _)| viol > w) {
                    leave = Some((viol, i));
                }
            }
            let Some((_, r)) = leave else {
                return Ok(true);
            };
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(Error::Lp(format!(
                    "iteration limit {} reached",
                    self.max_iterations
                )));
            }
            let down = self.xb[r] > 0.0;
            let rho = &self.binv[r * m..(r + 1) * m];
            let yv = &y;
            let score = |j: usize| -> Option<(f64, f64, usize)> {
                if self.position[j] != usize::MAX {
                    return None;
                }
                let (ri, vi) = self.column(j);
                let a: f64 = ri.iter().zip(vi).map(|(&i, &v)| rho[i] * v).sum();
                let ok = if down { a > PIVOT_TOL } else { a < -PIVOT_TOL };
                if !ok {
                    return None;
                }
                let d = self.reduced_cost(j, yv, 2).max(0.0);
                Some((d / a.abs(), a.abs(), j))
            };
            let better = |a: (f64, f64, usize), b: (f64, f64, usize)| {
                let tie = (a.0 - b.0).abs() <= 1e-12 * (1.0 + a.0.abs());
                let a_wins = if tie {
                    a.1 > b.1 || (a.1 == b.1 && a.2 < b.2)
                } else {
                    a.0 < b.0
                };
                if a_wins {
                    a
                } else {
                    b
                }
            };
            let best = if self.n >= PAR_COLS {
                (0..self.n)
                    .into_par_iter()
                    .filter_map(score)
                    .reduce_with(better)
            } else {
                (0..self.n).filter_map(score).reduce(better)
            };
            let Some((_, _, j)) = best else {
                return Ok(false);
            };
            let d = self.reduced_cost(j, &y, 2);
            let alpha = self.ftran(j);
            self.pivot(r, j, &alpha);
            self.update_duals(&mut y, r, d);
        }
    }

    /// Pivots zero-level artificials out of the basis where a structural
    /// column allows it; rows where none does are redundant.
    fn drive_out_artificials(&mut self) {
        let m = self.m;
        for r in 0..m {
            if !self.is_artificial(self.basis[r]) {
                continue;
            }
            let row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
            let mut best = (DRIVE_OUT_TOL, usize::MAX);
            for j in 0..self.n {
                if self.position[j] != usize::MAX {
                    continue;
                }
                let (ri, vi) = self.column(j);
                let v: f64 = ri.iter().zip(vi).map(|(&i, &a)| a * row[i]).sum();
                if v.abs() > best.0 {
                    best = (v.abs(), j);
                }
            }
            if best.1 != usize::MAX {
                let alpha = self.ftran(best.1);
                self.pivot(r, best.1, &alpha);
            }
        }
    }

    fn run(&mut self) -> Result<LpSolution> {
        let n = self.n;
        let m = self.m;
        match self.run_phase(1)? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded => return Err(Error::Lp("phase 1 reported unbounded".into())),
        }
        if self.since_refactor > 0 {
            self.refactor()?;
        }
        let infeasibility: f64 = (0..m)
            .filter(|&i| self.is_artificial(self.basis[i]))
            .map(|i| self.xb[i].max(0.0))
            .sum();
        if infeasibility > INFEASIBLE_TOL {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: self.primal(),
                y_dual: self.unscale_duals(&self.duals(1)),
                objective: f64::NAN,
                iterations: self.iterations,
            });
        }
        self.drive_out_artificials();
        self.degenerate_run = 0;
        let mut end = self.run_phase(2)?;
        if matches!(end, PhaseEnd::Optimal) {
            self.b = self.b_true.clone();
            self.recompute_xb();
            if !self.dual_cleanup()? {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    x: self.primal(),
                    y_dual: self.unscale_duals(&self.duals(2)),
                    objective: f64::NAN,
                    iterations: self.iterations,
                });
            }
            self.degenerate_run = 0;
            end = self.run_phase(2)?;
        }
        let x = self.primal();
        let y = self.unscale_duals(&self.duals(2));
        let status = match end {
            PhaseEnd::Optimal => LpStatus::Optimal,
            PhaseEnd::Unbounded => LpStatus::Unbounded,
        };
        let objective = match status {
            LpStatus::Optimal => x.iter().zip(&self.lp.c).map(|(a, b)| a * b).sum(),
            _ => f64::NEG_INFINITY,
        };
        debug_assert_eq!(x.len(), n);
        Ok(LpSolution {
            status,
            x,
            y_dual: y,
            objective,
            iterations: self.iterations,
        })
    }

    fn primal(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (i, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                x[j] = self.xb[i];
            }
        }
        x
    }

    fn unscale_duals(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.row_scale).map(|(v, s)| v * s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_x1_on_simplex_edge() {
        let lp = LinearProgram::new(vec![1.0, 0.0], vec![vec![1.0, 1.0]], vec![1.0]).unwrap();
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(s.objective.abs() < 1e-12);
        assert!((s.x[0]).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_equality_dual() {
        let lp = LinearProgram::new(vec![-1.0], vec![vec![1.0]], vec![1.0]).unwrap();
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 1.0).abs() < 1e-12);
        assert!((s.y_dual[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x1 + x2 = -1 with x >= 0
        let lp = LinearProgram::new(vec![1.0, 1.0], vec![vec![1.0, 1.0]], vec![-1.0]).unwrap();
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
        // min -x1 s.t. x1 - x2 = 0
        let lp = LinearProgram::new(vec![-1.0, 0.0], vec![vec![1.0, -1.0]], vec![0.0]).unwrap();
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn redundant_rows() {
        // two copies of x1 + x2 = 1 and their sum
        let lp = LinearProgram::new(
            vec![2.0, 1.0],
            vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![2.0, 2.0]],
            vec![1.0, 1.0, 2.0],
        )
        .unwrap();
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-12);
        let dual_obj: f64 = s.y_dual.iter().zip(&lp.b).map(|(a, b)| a * b).sum();
        assert!((dual_obj - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_zero_cost_variable() {
        // min x1 s.t. x1 - x2 + x3 = 1, x2 - x3 = 0 ; x2, x3 unbounded but irrelevant
        let lp = LinearProgram::new(
            vec![1.0, 0.0, 0.0],
            vec![vec![1.0, -1.0, 1.0], vec![0.0, 1.0, -1.0]],
            vec![1.0, 0.0],
        )
        .unwrap();
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        assert!(LinearProgram::new(vec![1.0], vec![vec![1.0, 2.0]], vec![1.0]).is_err());
        assert!(LinearProgram::new(vec![1.0], vec![vec![1.0]], vec![1.0, 2.0]).is_err());
        assert!(LinearProgram::new(vec![f64::NAN], vec![vec![1.0]], vec![1.0]).is_err());
    }

    #[test]
    fn dump_format() {
        let lp = LinearProgram::new(vec![1.0, 0.0], vec![vec![1.0, 1.0]], vec![1.0]).unwrap();
        let mut out = Vec::new();
        lp.write_dump(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("rows 1 cols 2"));
        assert!(text.lines().any(|l| l == "1e0 1e0"));
    }
}
