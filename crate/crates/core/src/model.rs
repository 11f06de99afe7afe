//! Finite controlled stochastic recursions `y(t+1) = f(y(t), u(t), s(t))`.
//!
//! A [`FiniteModel`] carries a finite state list, a per-state list of
//! admissible controls, finite-support i.i.d. noise, the dynamics table (or
//! an explicit transition kernel) and a cost table. Admissible
//! `(state, control)` pairs are numbered consecutively, state by state; most
//! of the crate indexes measures and tables by this pair index.

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    pub index: usize,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseAtom {
    pub id: i64,
    pub prob: f64,
}

/// How the next-state law is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `next[pair * n_atoms + atom]` is the image state of `f(y, u, s_atom)`.
    Dynamics(Vec<usize>),
    /// One sparse probability row `(next_state, prob)` per admissible pair.
    Explicit(Vec<Vec<(usize, f64)>>),
}

/// Raw ingredients of a model. Only shapes are checked when assembling;
/// use [`validate`] for the model invariants.
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub states: Vec<Vec<f64>>,
    pub control_values: Vec<Vec<f64>>,
    /// Per state, indices into `control_values`.
    pub controls: Vec<Vec<usize>>,
    pub noise: Vec<NoiseAtom>,
    pub kernel: Kernel,
    /// One entry per admissible pair.
    pub cost: Vec<f64>,
    pub initial_state: Option<usize>,
}

#[derive(Debug)]
pub struct FiniteModel {
    states: Vec<StatePoint>,
    control_values: Vec<Vec<f64>>,
    controls: Vec<Vec<usize>>,
    pair_offsets: Vec<usize>,
    pair_state: Vec<usize>,
    noise: Vec<NoiseAtom>,
    kernel: Kernel,
    cost: Vec<f64>,
    initial_state: Option<usize>,
    transition: OnceLock<Result<TransitionTensor>>,
}

impl Clone for FiniteModel {
    fn clone(&self) -> Self {
        Self {
            states: self.states.clone(),
            control_values: self.control_values.clone(),
            controls: self.controls.clone(),
            pair_offsets: self.pair_offsets.clone(),
            pair_state: self.pair_state.clone(),
            noise: self.noise.clone(),
            kernel: self.kernel.clone(),
            cost: self.cost.clone(),
            initial_state: self.initial_state,
            transition: OnceLock::new(),
        }
    }
}

impl PartialEq for FiniteModel {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states
            && self.control_values == other.control_values
            && self.controls == other.controls
            && self.noise == other.noise
            && self.kernel == other.kernel
            && self.cost == other.cost
            && self.initial_state == other.initial_state
    }
}

impl FiniteModel {
    pub fn from_parts(parts: ModelParts) -> Result<Self> {
        let ModelParts {
            states,
            control_values,
            controls,
            noise,
            kernel,
            cost,
            initial_state,
        } = parts;
        if controls.len() != states.len() {
            return Err(Error::Shape(format!(
                "{} control lists for {} states",
                controls.len(),
                states.len()
            )));
        }
        let mut pair_offsets = Vec::with_capacity(states.len() + 1);
        let mut pair_state = Vec::new();
        pair_offsets.push(0);
        for (y, list) in controls.iter().enumerate() {
            for &c in list {
                if c >= control_values.len() {
                    return Err(Error::Shape(format!(
                        "state {y} refers to control value {c}, only {} defined",
                        control_values.len()
                    )));
                }
                pair_state.push(y);
            }
            pair_offsets.push(pair_state.len());
        }
        let n_pairs = pair_state.len();
        if cost.len() != n_pairs {
            return Err(Error::Shape(format!(
                "{} cost entries for {n_pairs} admissible pairs",
                cost.len()
            )));
        }
        match &kernel {
            Kernel::Dynamics(next) if next.len() != n_pairs * noise.len() => {
                return Err(Error::Shape(format!(
                    "dynamics table has {} entries, expected {n_pairs} pairs x {} atoms",
                    next.len(),
                    noise.len()
                )));
            }
            Kernel::Explicit(rows) if rows.len() != n_pairs => {
                return Err(Error::Shape(format!(
                    "{} transition rows for {n_pairs} admissible pairs",
                    rows.len()
                )));
            }
            _ => {}
        }
        if let Some(y0) = initial_state {
            if y0 >= states.len() {
                return Err(Error::Shape(format!("initial state {y0} out of range")));
            }
        }
        let states = states
            .into_iter()
            .enumerate()
            .map(|(index, coords)| StatePoint { index, coords })
            .collect();
        Ok(Self {
            states,
            control_values,
            controls,
            pair_offsets,
            pair_state,
            noise,
            kernel,
            cost,
            initial_state,
            transition: OnceLock::new(),
        })
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_state.len()
    }

    pub fn states(&self) -> &[StatePoint] {
        &self.states
    }

    pub fn noise(&self) -> &[NoiseAtom] {
        &self.noise
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn control_values(&self) -> &[Vec<f64>] {
        &self.control_values
    }

    /// Indices into [`Self::control_values`] admissible at `state`.
    pub fn controls(&self, state: usize) -> &[usize] {
        &self.controls[state]
    }

    pub fn num_controls(&self, state: usize) -> usize {
        self.controls[state].len()
    }

    /// Value vector of the `slot`-th admissible control at `state`.
    pub fn control_value(&self, state: usize, slot: usize) -> &[f64] {
        &self.control_values[self.controls[state][slot]]
    }

    /// Pair indices belonging to `state`.
    pub fn pairs_of(&self, state: usize) -> std::ops::Range<usize> {
        self.pair_offsets[state]..self.pair_offsets[state + 1]
    }

    pub fn pair_index(&self, state: usize, slot: usize) -> usize {
        debug_assert!(slot < self.num_controls(state));
        self.pair_offsets[state] + slot
    }

    /// `(state, slot)` of a pair index.
    pub fn pair(&self, p: usize) -> (usize, usize) {
        let y = self.pair_state[p];
        (y, p - self.pair_offsets[y])
    }

    pub fn pair_state(&self, p: usize) -> usize {
        self.pair_state[p]
    }

    pub fn cost(&self, p: usize) -> f64 {
        self.cost[p]
    }

    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    /// `M = max |k|` over admissible pairs.
    pub fn cost_bound(&self) -> f64 {
        self.cost.iter().fold(0.0, |m, k| m.max(k.abs()))
    }

    pub fn initial_state(&self) -> Option<usize> {
        self.initial_state
    }

    pub fn with_initial_state(mut self, y0: usize) -> Result<Self> {
        if y0 >= self.num_states() {
            return Err(Error::Shape(format!("initial state {y0} out of range")));
        }
        self.initial_state = Some(y0);
        Ok(self)
    }

    /// State whose coordinates equal `coords` within `tol` (max-norm).
    pub fn find_state(&self, coords: &[f64], tol: f64) -> Option<usize> {
        self.states.iter().position(|s| {
            s.coords.len() == coords.len()
                && s.coords
                    .iter()
                    .zip(coords)
                    .all(|(a, b)| (a - b).abs() <= tol)
        })
    }

    pub fn state_label(&self, y: usize) -> String {
        vector_label(&self.states[y].coords)
    }

    pub fn control_label(&self, y: usize, slot: usize) -> String {
        vector_label(self.control_value(y, slot))
    }

    /// Cached transition kernel; see [`build_transition_tensor`].
    pub fn transition(&self) -> Result<&TransitionTensor> {
        self.transition
            .get_or_init(|| build_transition_tensor(self))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Checks the invariants and fails with the full violation list.
    pub fn validated(self) -> Result<Self> {
        let report = validate(&self);
        if report.is_empty() {
            Ok(self)
        } else {
            Err(Error::Invalid(report))
        }
    }
}

fn vector_label(v: &[f64]) -> String {
    match v {
        [x] => format!("{x}"),
        _ => {
            let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            format!("({})", parts.join(","))
        }
    }
}

/// Per-pair probability rows over states, stored compressed.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTensor {
    num_states: usize,
    offsets: Vec<usize>,
    next: Vec<usize>,
    prob: Vec<f64>,
}

impl TransitionTensor {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_pairs(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Support of row `p` as `(next_states, probabilities)`, sorted by state.
    pub fn row(&self, p: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[p]..self.offsets[p + 1];
        (&self.next[r.clone()], &self.prob[r])
    }

    pub fn dense_row(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states];
        let (ys, ps) = self.row(p);
        for (&y, &q) in ys.iter().zip(ps) {
            out[y] += q;
        }
        out
    }

    /// `E[f(next)]` under row `p`.
    #[inline]
    pub fn expect(&self, p: usize, f: &[f64]) -> f64 {
        let (ys, ps) = self.row(p);
        ys.iter().zip(ps).map(|(&y, &q)| q * f[y]).sum()
    }

    pub fn prob(&self, p: usize, y_next: usize) -> f64 {
        let (ys, ps) = self.row(p);
        match ys.binary_search(&y_next) {
            Ok(i) => ps[i],
            Err(_) => 0.0,
        }
    }
}

/// `P(y' | y, u) = sum of prob(s) over atoms with f(y, u, s) = y'`.
pub fn build_transition_tensor(model: &FiniteModel) -> Result<TransitionTensor> {
    let n = model.num_states();
    let mut offsets = Vec::with_capacity(model.num_pairs() + 1);
    let mut next = Vec::new();
    let mut prob = Vec::new();
    offsets.push(0);
    let mut row: Vec<(usize, f64)> = Vec::new();
    for p in 0..model.num_pairs() {
        row.clear();
        match &model.kernel {
            Kernel::Dynamics(table) => {
                let k = model.noise.len();
                for (a, atom) in model.noise.iter().enumerate() {
                    let y1 = table[p * k + a];
                    if y1 >= n {
                        let (y, slot) = model.pair(p);
                        return Err(Error::DynamicsOutOfRange {
                            state: y,
                            control: slot,
                            noise_id: atom.id,
                            next: y1,
                        });
                    }
                    row.push((y1, atom.prob));
                }
            }
            Kernel::Explicit(rows) => {
                for &(y1, q) in &rows[p] {
                    if y1 >= n {
                        let (y, slot) = model.pair(p);
                        return Err(Error::DynamicsOutOfRange {
                            state: y,
                            control: slot,
                            noise_id: -1,
                            next: y1,
                        });
                    }
                    row.push((y1, q));
                }
            }
        }
        row.sort_by_key(|e| e.0);
        let start = next.len();
        for &(y1, q) in &row {
            if next.len() > start && *next.last().unwrap() == y1 {
                *prob.last_mut().unwrap() += q;
            } else {
                next.push(y1);
                prob.push(q);
            }
        }
        offsets.push(next.len());
    }
    Ok(TransitionTensor {
        num_states: n,
        offsets,
        next,
        prob,
    })
}

/// One broken invariant of a [`FiniteModel`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoiseNotNormalized {
        sum: f64,
    },
    NoiseProbability {
        id: i64,
        prob: f64,
    },
    DuplicateNoiseId {
        id: i64,
    },
    EmptyControls {
        state: usize,
    },
    NonFiniteCoords {
        state: usize,
    },
    DimensionMismatch {
        state: usize,
    },
    NonFiniteCost {
        state: usize,
        control: usize,
    },
    DynamicsOutOfRange {
        state: usize,
        control: usize,
        noise_id: i64,
        next: usize,
    },
    RowNotNormalized {
        state: usize,
        control: usize,
        sum: f64,
    },
    NegativeTransition {
        state: usize,
        control: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoiseNotNormalized { sum } => {
                write!(f, "noise not normalized (probabilities sum to {sum})")
            }
            Violation::NoiseProbability { id, prob } => {
                write!(f, "noise atom {id} has probability {prob} outside (0,1]")
            }
            Violation::DuplicateNoiseId { id } => write!(f, "duplicate noise id {id}"),
            Violation::EmptyControls { state } => write!(f, "empty U(y) at state {state}"),
            Violation::NonFiniteCoords { state } => {
                write!(f, "state {state} has non-finite coordinates")
            }
            Violation::DimensionMismatch { state } => {
                write!(f, "state {state} has a different dimension than state 0")
            }
            Violation::NonFiniteCost { state, control } => {
                write!(f, "non-finite cost at (state {state}, control {control})")
            }
            Violation::DynamicsOutOfRange { state, control, noise_id, next } => write!(
                f,
                "dynamics leaves the state list: (state {state}, control {control}, noise {noise_id}) -> {next}"
            ),
            Violation::RowNotNormalized { state, control, sum } => write!(
                f,
                "transition row at (state {state}, control {control}) sums to {sum}"
            ),
            Violation::NegativeTransition { state, control } => write!(
                f,
                "negative transition probability at (state {state}, control {control})"
            ),
        }
    }
}

/// Lists every violated model invariant; empty means valid.
pub fn validate(model: &FiniteModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let dim = model.states.first().map(|s| s.coords.len());
    for s in &model.states {
        if s.coords.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFiniteCoords { state: s.index });
        }
        if Some(s.coords.len()) != dim {
            out.push(Violation::DimensionMismatch { state: s.index });
        }
    }
    for y in 0..model.num_states() {
        if model.controls[y].is_empty() {
            out.push(Violation::EmptyControls { state: y });
        }
    }
    for p in 0..model.num_pairs() {
        if !model.cost[p].is_finite() {
            let (state, control) = model.pair(p);
            out.push(Violation::NonFiniteCost { state, control });
        }
    }
    let n = model.num_states();
    match &model.kernel {
        Kernel::Dynamics(table) => {
            let mut sum = 0.0;
            for (i, atom) in model.noise.iter().enumerate() {
                if !(atom.prob > 0.0 && atom.prob <= 1.0) {
                    out.push(Violation::NoiseProbability {
                        id: atom.id,
                        prob: atom.prob,
                    });
                }
                if model.noise[..i].iter().any(|a| a.id == atom.id) {
                    out.push(Violation::DuplicateNoiseId { id: atom.id });
                }
                sum += atom.prob;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                out.push(Violation::NoiseNotNormalized { sum });
            }
            let k = model.noise.len();
            for p in 0..model.num_pairs() {
                for (a, atom) in model.noise.iter().enumerate() {
                    let next = table[p * k + a];
                    if next >= n {
                        let (state, control) = model.pair(p);
                        out.push(Violation::DynamicsOutOfRange {
                            state,
                            control,
                            noise_id: atom.id,
                            next,
                        });
                    }
                }
            }
        }
        Kernel::Explicit(rows) => {
            for (p, row) in rows.iter().enumerate() {
                let (state, control) = model.pair(p);
                let mut sum = 0.0;
                let mut negative = false;
                for &(next, q) in row {
                    if next >= n {
                        out.push(Violation::DynamicsOutOfRange {
                            state,
                            control,
                            noise_id: -1,
                            next,
                        });
                    }
                    negative |= !(q >= 0.0);
                    sum += q;
                }
                if negative {
                    out.push(Violation::NegativeTransition { state, control });
                }
                if (sum - 1.0).abs() > PROB_TOL {
                    out.push(Violation::RowNotNormalized {
                        state,
                        control,
                        sum,
                    });
                }
            }
        }
    }
    out
}

/// `y(t+1) = y u s` on the two-point class `{-|y0|, |y0|}`, `U = {-1, 1}`,
/// `s = 1` w.p. 3/4 and `s = -1` w.p. 1/4, cost `k(y, u) = y`.
pub fn example1_model(y0: f64) -> Result<FiniteModel> {
    if !(y0.is_finite() && y0.abs() <= 1.0) {
        return Err(Error::Parameter(format!(
            "example 1 needs y0 in [-1, 1], got {y0}"
        )));
    }
    if y0 == 0.0 {
        return Err(Error::Parameter(
            "example 1 needs y0 != 0 (the chain from 0 is the single state {0})".into(),
        ));
    }
    let model = example1_family(&[y0.abs()])?;
    let y0_index = if y0 < 0.0 { 0 } else { 1 };
    model.with_initial_state(y0_index)
}

/// Union of the example-1 classes `{-l, l}` for every level `l` in `(0, 1]`.
/// States are sorted increasingly; no initial state is set.
pub fn example1_family(levels: &[f64]) -> Result<FiniteModel> {
    let mut mags: Vec<f64> = Vec::with_capacity(levels.len());
    for &l in levels {
        if !(l.is_finite() && l > 0.0 && l <= 1.0) {
            return Err(Error::Parameter(format!(
                "example 1 level must lie in (0, 1], got {l}"
            )));
        }
        mags.push(l);
    }
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    if mags.is_empty() {
        return Err(Error::Parameter(
            "example 1 family needs at least one level".into(),
        ));
    }
    let mut states: Vec<f64> = mags.iter().rev().map(|l| -l).collect();
    states.extend(mags.iter().copied());
    let n = states.len();
    let index_of = |v: f64| -> usize {
        states
            .iter()
            .position(|&s| s == v)
            .expect("example 1 dynamics stay on the class")
    };
    let signs = [1.0, -1.0];
    let controls_per_state = vec![vec![0usize, 1]; n];
    let control_values = vec![vec![-1.0], vec![1.0]];
    let mut next = Vec::with_capacity(n * 2 * 2);
    let mut cost = Vec::with_capacity(n * 2);
    for &y in &states {
        for u in [-1.0, 1.0] {
            for s in signs {
                next.push(index_of(y * u * s));
            }
            cost.push(y);
        }
    }
    FiniteModel::from_parts(ModelParts {
        states: states.iter().map(|&y| vec![y]).collect(),
        control_values,
        controls: controls_per_state,
        noise: vec![
            NoiseAtom { id: 0, prob: 0.75 },
            NoiseAtom { id: 1, prob: 0.25 },
        ],
        kernel: Kernel::Dynamics(next),
        cost,
        initial_state: None,
    })?
    .validated()
}

/// Grid version of `y(t+1) = u s` with `U(y) = [-1, y]` for `y < 0`,
/// `U(0) = [-1, 1]`, `U(y) = [y, 1]` for `y > 0`, `s` in `{1, 1/4}` with
/// equal probabilities and `k(y, u) = y`.
///
/// States are the multiples of `2^-m` in `[-1, 1]`. Controls at `y` are the
/// multiples of `control_step` inside `U(y)` together with both endpoints.
/// Images `u s` are snapped to the nearest grid point of the same sign
/// (ties toward 0), so a nonzero image never lands on 0.
pub fn example2_model(m: u32, control_step: f64) -> Result<FiniteModel> {
    if m < 2 {
        return Err(Error::Parameter(format!("example 2 needs m >= 2, got {m}")));
    }
    if m > 24 {
        return Err(Error::Parameter(format!(
            "example 2 grid exponent {m} is too large"
        )));
    }
    let scale = (1u64 << m) as i64;
    let h = 1.0 / scale as f64;
    let ratio = control_step / h;
    if !(control_step > 0.0
        && ratio.is_finite()
        && ratio >= 1.0
        && (ratio - ratio.round()).abs() < 1e-9)
    {
        return Err(Error::Parameter(format!(
            "control_step {control_step} must be a positive multiple of the grid step 2^-{m}"
        )));
    }
    let cstep = ratio.round() as i64;
    if cstep > scale {
        return Err(Error::Parameter(format!(
            "control_step {control_step} exceeds 1"
        )));
    }
    // states are integers j in [-scale, scale], value j * h
    let n = (2 * scale + 1) as usize;
    let state_of = |j: i64| (j + scale) as usize;
    let mut control_values = Vec::with_capacity(n);
    for j in -scale..=scale {
        control_values.push(vec![j as f64 * h]);
    }
    let mut controls = Vec::with_capacity(n);
    let mut next = Vec::new();
    let mut cost = Vec::new();
    for j in -scale..=scale {
        let (lo, hi) = match j.signum() {
            -1 => (-scale, j),
            0 => (-scale, scale),
            _ => (j, scale),
        };
        let mut list: Vec<i64> = Vec::new();
        list.push(lo);
        let mut c = (lo + cstep - 1).div_euclid(cstep) * cstep;
        while c <= hi {
            list.push(c);
            c += cstep;
        }
        list.push(hi);
        list.push(j.clamp(lo, hi));
        list.sort_unstable();
        list.dedup();
        for &u in &list {
            // s = 1: exact; s = 1/4: u / 4 snapped
            next.push(state_of(u));
            next.push(state_of(snap_quarter(u)));
            cost.push(j as f64 * h);
        }
        controls.push(list.iter().map(|&u| state_of(u)).collect());
    }
    FiniteModel::from_parts(ModelParts {
        states: (-scale..=scale).map(|j| vec![j as f64 * h]).collect(),
        control_values,
        controls,
        noise: vec![
            NoiseAtom { id: 0, prob: 0.5 },
            NoiseAtom { id: 1, prob: 0.5 },
        ],
        kernel: Kernel::Dynamics(next),
        cost,
        initial_state: None,
    })?
    .validated()
}

/// Nearest integer to `u / 4`, ties toward 0, never 0 for `u != 0`.
fn snap_quarter(u: i64) -> i64 {
    let a = u.abs();
    let q = a / 4;
    let r = a % 4;
    let mut v = if r > 2 { q + 1 } else { q };
    if v == 0 && a != 0 {
        v = 1;
    }
    v * u.signum()
}

/// `n` states on a cycle with controls "stay" and "advance", one noise atom
/// and the constant cost `c` everywhere.
pub fn constant_cost_model(n: usize, c: f64) -> Result<FiniteModel> {
    if n == 0 {
        return Err(Error::Parameter(
            "constant model needs at least one state".into(),
        ));
    }
    if !c.is_finite() {
        return Err(Error::Parameter(format!(
            "constant cost must be finite, got {c}"
        )));
    }
    let mut next = Vec::with_capacity(2 * n);
    for y in 0..n {
        next.push(y);
        next.push((y + 1) % n);
    }
    FiniteModel::from_parts(ModelParts {
        states: (0..n).map(|y| vec![y as f64]).collect(),
        control_values: vec![vec![0.0], vec![1.0]],
        controls: vec![vec![0, 1]; n],
        noise: vec![NoiseAtom { id: 0, prob: 1.0 }],
        kernel: Kernel::Dynamics(next),
        cost: vec![c; 2 * n],
        initial_state: Some(0),
    })?
    .validated()
}

// ---------------------------------------------------------------------------
// JSON model files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    states: Vec<Vec<f64>>,
    controls: ControlsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    control_values: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    noise: Vec<NoiseAtom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dynamics: Option<Vec<DynamicsRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transition: Option<Vec<Vec<Vec<f64>>>>,
    cost: Vec<CostRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_state: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum ControlsSpec {
    Shared(Vec<Vec<f64>>),
    PerState(Vec<Vec<usize>>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DynamicsRow {
    state: usize,
    control: usize,
    noise_id: i64,
    next_state: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostRow {
    state: usize,
    control: usize,
    value: f64,
}

/// Reads and validates a JSON model file. `control` fields in `dynamics`
/// and `cost` rows are positions in the state's own control list.
pub fn load_model(path: impl AsRef<Path>) -> Result<FiniteModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_model(&text).map_err(|e| match e {
        Error::Schema { message, .. } => Error::Schema {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

/// Parses a model from JSON text; see [`load_model`].
pub fn parse_model(text: &str) -> Result<FiniteModel> {
    let schema = |message: String| Error::Schema {
        path: "<string>".into(),
        message,
    };
    let file: ModelFile = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    let n = file.states.len();
    let (control_values, controls) = match file.controls {
        ControlsSpec::Shared(values) => {
            if file.control_values.is_some() {
                return Err(schema(
                    "field `control_values` is only allowed with `controls.per_state`".into(),
                ));
            }
            let all: Vec<usize> = (0..values.len()).collect();
            (values, vec![all; n])
        }
        ControlsSpec::PerState(lists) => {
            let values = file.control_values.ok_or_else(|| {
                schema("`controls.per_state` requires a top-level `control_values` list".into())
            })?;
            if lists.len() != n {
                return Err(schema(format!(
                    "controls.per_state has {} entries for {n} states",
                    lists.len()
                )));
            }
            for (y, list) in lists.iter().enumerate() {
                if let Some(&c) = list.iter().find(|&&c| c >= values.len()) {
                    return Err(schema(format!(
                        "controls.per_state[{y}] refers to control_values[{c}], which does not exist"
                    )));
                }
            }
            (values, lists)
        }
    };
    let mut offsets = vec![0usize];
    for list in &controls {
        offsets.push(offsets.last().unwrap() + list.len());
    }
    let n_pairs = *offsets.last().unwrap();
    let pair_of = |field: &str, row: usize, y: usize, slot: usize| -> Result<usize> {
        if y >= n {
            return Err(schema(format!(
                "{field}[{row}].state = {y} is not a state index"
            )));
        }
        if slot >= controls[y].len() {
            return Err(schema(format!(
                "{field}[{row}].control = {slot} but state {y} has {} controls",
                controls[y].len()
            )));
        }
        Ok(offsets[y] + slot)
    };

    let mut cost = vec![f64::NAN; n_pairs];
    let mut seen = vec![false; n_pairs];
    for (i, row) in file.cost.iter().enumerate() {
        let p = pair_of("cost", i, row.state, row.control)?;
        if seen[p] {
            return Err(schema(format!(
                "cost[{i}] repeats (state {}, control {})",
                row.state, row.control
            )));
        }
        seen[p] = true;
        cost[p] = row.value;
    }
    if let Some(p) = seen.iter().position(|s| !s) {
        let y = offsets.partition_point(|&o| o <= p) - 1;
        return Err(schema(format!(
            "cost is missing (state {y}, control {})",
            p - offsets[y]
        )));
    }

    let kernel = match (file.dynamics, file.transition) {
        (Some(_), Some(_)) => {
            return Err(schema(
                "give either `dynamics` or `transition`, not both".into(),
            ))
        }
        (None, None) => return Err(schema("missing field `dynamics` (or `transition`)".into())),
        (Some(rows), None) => {
            let k = file.noise.len();
            if k == 0 {
                return Err(schema("`dynamics` requires a nonempty `noise` list".into()));
            }
            let mut next = vec![usize::MAX; n_pairs * k];
            for (i, row) in rows.iter().enumerate() {
                let p = pair_of("dynamics", i, row.state, row.control)?;
                let a = file
                    .noise
                    .iter()
                    .position(|atom| atom.id == row.noise_id)
                    .ok_or_else(|| {
                        schema(format!(
                            "dynamics[{i}].noise_id = {} is not a noise id",
                            row.noise_id
                        ))
                    })?;
                if next[p * k + a] != usize::MAX {
                    return Err(schema(format!(
                        "dynamics[{i}] repeats (state {}, control {}, noise {})",
                        row.state, row.control, row.noise_id
                    )));
                }
                next[p * k + a] = row.next_state;
            }
            if let Some(idx) = next.iter().position(|&v| v == usize::MAX) {
                let p = idx / k;
                let y = offsets.partition_point(|&o| o <= p) - 1;
                return Err(schema(format!(
                    "dynamics is missing (state {y}, control {}, noise {})",
                    p - offsets[y],
                    file.noise[idx % k].id
                )));
            }
            Kernel::Dynamics(next)
        }
        (None, Some(tensor)) => {
            if tensor.len() != n {
                return Err(schema(format!(
                    "transition has {} state blocks for {n} states",
                    tensor.len()
                )));
            }
            let mut rows = Vec::with_capacity(n_pairs);
            for (y, block) in tensor.iter().enumerate() {
                if block.len() != controls[y].len() {
                    return Err(schema(format!(
                        "transition[{y}] has {} rows but state {y} has {} controls",
                        block.len(),
                        controls[y].len()
                    )));
                }
                for (slot, dense) in block.iter().enumerate() {
                    if dense.len() != n {
                        return Err(schema(format!(
                            "transition[{y}][{slot}] has length {}, expected {n}",
                            dense.len()
                        )));
                    }
                    rows.push(
                        dense
                            .iter()
                            .enumerate()
                            .filter(|(_, &q)| q != 0.0)
                            .map(|(y1, &q)| (y1, q))
                            .collect(),
                    );
                }
            }
            Kernel::Explicit(rows)
        }
    };
    let model = FiniteModel::from_parts(ModelParts {
        states: file.states,
        control_values,
        controls,
        noise: file.noise,
        kernel,
        cost,
        initial_state: file.initial_state,
    })
    .map_err(|e| schema(e.to_string()))?;
    model.validated()
}

/// Serializes a model in the file format read by [`load_model`].
pub fn model_to_json(model: &FiniteModel) -> String {
    let n = model.num_states();
    let shared = n > 0
        && model
            .controls
            .iter()
            .all(|c| *c == (0..model.control_values.len()).collect::<Vec<_>>());
    let (controls, control_values) = if shared {
        (ControlsSpec::Shared(model.control_values.clone()), None)
    } else {
        (
            ControlsSpec::PerState(model.controls.clone()),
            Some(model.control_values.clone()),
        )
    };
    let cost = (0..model.num_pairs())
        .map(|p| {
            let (state, control) = model.pair(p);
            CostRow {
                state,
                control,
                value: model.cost[p],
            }
        })
        .collect();
    let (dynamics, transition) = match &model.kernel {
        Kernel::Dynamics(table) => {
            let k = model.noise.len();
            let mut rows = Vec::with_capacity(table.len());
            for p in 0..model.num_pairs() {
                let (state, control) = model.pair(p);
                for (a, atom) in model.noise.iter().enumerate() {
                    rows.push(DynamicsRow {
                        state,
                        control,
                        noise_id: atom.id,
                        next_state: table[p * k + a],
                    });
                }
            }
            (Some(rows), None)
        }
        Kernel::Explicit(rows) => {
            let tensor = (0..n)
                .map(|y| {
                    model
                        .pairs_of(y)
                        .map(|p| {
                            let mut dense = vec![0.0; n];
                            for &(y1, q) in &rows[p] {
                                dense[y1] += q;
                            }
                            dense
                        })
                        .collect()
                })
                .collect();
            (None, Some(tensor))
        }
    };
    let file = ModelFile {
        states: model.states.iter().map(|s| s.coords.clone()).collect(),
        controls,
        control_values,
        noise: model.noise.clone(),
        dynamics,
        transition,
        cost,
        initial_state: model.initial_state,
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}
