//! Occupational-measure linear programs over a [`FiniteModel`].
//!
//! All constraint families use the per-state indicator test functions, so
//! the balance equations are written directly against the transition
//! kernel. For a pair `(y, u)` the balance column has `+1` in row `y` and
//! `-P(y'|y,u)` in row `y'`.
//!
//! - [`stationary_lp`]: `min ∫k dγ` over stationary probability measures (`k*`).
//! - [`discounted_stationary_lp`]: `min ∫k dγ` over `W(ε, y0)` (`k*(ε, y0)`).
//! - [`augmented_lp`]: `min ∫k dγ + ∫θ dξ` over pairs `(γ, ξ) ∈ Ω(y0)` (`k*(y0)`),
//!   with the dual certificate `(μ, ψ, η)` read off the simplex multipliers.

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::lp::{solve_sparse, LpStatus, SparseProgram};
use crate::model::{FiniteModel, TransitionTensor};
use crate::output::round_sig;

/// Feasibility tolerance for membership checks.
pub const FEAS_TOL: f64 = 1e-9;
/// Tolerance on the dual certificate inequalities.
pub const CERT_TOL: f64 = 1e-7;

/// A nonnegative measure on the graph of the control multimap, one weight
/// per admissible pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GMeasure {
    pub weights: Vec<f64>,
}

impl GMeasure {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn zeros(n_pairs: usize) -> Self {
        Self {
            weights: vec![0.0; n_pairs],
        }
    }

    pub fn point_mass(n_pairs: usize, pair: usize) -> Self {
        let mut w = vec![0.0; n_pairs];
        w[pair] = 1.0;
        Self { weights: w }
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `∫ q dγ` for a table `q` over pairs.
    pub fn integrate(&self, q: &[f64]) -> f64 {
        self.weights.iter().zip(q).map(|(w, v)| w * v).sum()
    }

    /// State marginal `γ₁`.
    pub fn state_marginal(&self, model: &FiniteModel) -> Vec<f64> {
        let mut out = vec![0.0; model.num_states()];
        for (p, &w) in self.weights.iter().enumerate() {
            out[model.pair_state(p)] += w;
        }
        out
    }

    /// Pairs carrying weight above `tol`.
    pub fn support(&self, tol: f64) -> Vec<(usize, f64)> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w.abs() > tol)
            .map(|(p, &w)| (p, w))
            .collect()
    }

    /// Sparse `{state, control, weight}` listing.
    pub fn to_json(&self, model: &FiniteModel, tol: f64) -> serde_json::Value {
        let entries: Vec<_> = self
            .support(tol)
            .into_iter()
            .map(|(p, w)| {
                let (y, s) = model.pair(p);
                json!({
                    "state": y,
                    "control": s,
                    "state_label": model.state_label(y),
                    "control_label": model.control_label(y, s),
                    "weight": round_sig(w),
                })
            })
            .collect();
        serde_json::Value::Array(entries)
    }
}

/// `(μ, ψ, η)` satisfying, for every admissible `(y, u)`,
/// `k(y,u) + ψ(y0) - ψ(y) + E[η(f(y,u,s))] - η(y) - μ >= 0` and
/// `E[ψ(f(y,u,s))] - ψ(y) >= -θ(y,u)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualCertificate {
    pub mu: f64,
    pub psi: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Smallest slack of each certificate family; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateSlack {
    pub cost_family: f64,
    pub psi_family: f64,
}

impl CertificateSlack {
    pub fn holds(&self, tol: f64) -> bool {
        self.cost_family >= -tol && self.psi_family >= -tol
    }
}

impl DualCertificate {
    pub fn slack(
        &self,
        model: &FiniteModel,
        y0: usize,
        theta: Option<&[f64]>,
    ) -> Result<CertificateSlack> {
        let p = model.transition()?;
        if self.psi.len() != model.num_states() || self.eta.len() != model.num_states() {
            return Err(Error::Shape(
                "certificate vectors must have one entry per state".into(),
            ));
        }
        let mut cost_family = f64::INFINITY;
        let mut psi_family = f64::INFINITY;
        for pair in 0..model.num_pairs() {
            let y = model.pair_state(pair);
            let a = model.cost(pair) + self.psi[y0] - self.psi[y] + p.expect(pair, &self.eta)
                - self.eta[y]
                - self.mu;
            let th = theta.map_or(0.0, |t| t[pair]);
            let b = p.expect(pair, &self.psi) - self.psi[y] + th;
            cost_family = cost_family.min(a);
            psi_family = psi_family.min(b);
        }
        Ok(CertificateSlack {
            cost_family,
            psi_family,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramResult {
    pub status: LpStatus,
    pub optimal_value: f64,
    /// Dual objective `b'y` of the solved program.
    pub dual_value: f64,
    pub gamma: GMeasure,
    pub xi: Option<GMeasure>,
    pub dual: Option<DualCertificate>,
    /// Raw simplex multipliers, one per constraint row of the program as built.
    pub multipliers: Vec<f64>,
}

impl ProgramResult {
    pub fn to_json(&self, model: &FiniteModel) -> serde_json::Value {
        let mut v = json!({
            "status": self.status,
            "value": round_sig(self.optimal_value),
            "dual_value": round_sig(self.dual_value),
            "gamma": self.gamma.to_json(model, FEAS_TOL),
        });
        if let Some(xi) = &self.xi {
            v["xi"] = xi.to_json(model, FEAS_TOL);
        }
        if let Some(d) = &self.dual {
            v["mu"] = json!(round_sig(d.mu));
            v["psi"] = json!(d.psi.iter().map(|&x| round_sig(x)).collect::<Vec<_>>());
            v["eta"] = json!(d.eta.iter().map(|&x| round_sig(x)).collect::<Vec<_>>());
        }
        v
    }
}

fn balance_column(
    col: &mut Vec<(usize, f64)>,
    p: &TransitionTensor,
    pair: usize,
    y: usize,
    factor: f64,
    row_of: impl Fn(usize) -> usize,
) {
    col.push((row_of(y), 1.0));
    let (ys, ps) = p.row(pair);
    for (&y1, &q) in ys.iter().zip(ps) {
        col.push((row_of(y1), -factor * q));
    }
}

fn expect_optimal(status: LpStatus, what: &str) -> Result<()> {
    match status {
        LpStatus::Optimal => Ok(()),
        LpStatus::Infeasible => Err(Error::Infeasible(what.into())),
        LpStatus::Unbounded => Err(Error::Unbounded(what.into())),
    }
}

/// `k* = min ∫k dγ` over stationary probability measures `γ ∈ W`.
///
/// The returned dual has `ψ = 0` and `(μ, η)` from the balance rows, which
/// is a certificate for every `y0`.
pub fn stationary_lp(model: &FiniteModel) -> Result<ProgramResult> {
    let p = model.transition()?;
    let n = model.num_states();
    let mut b = vec![0.0; n + 1];
    b[n] = 1.0;
    let mut sp = SparseProgram::new(b);
    let mut col = Vec::new();
    for pair in 0..model.num_pairs() {
        col.clear();
        let y = model.pair_state(pair);
        balance_column(&mut col, p, pair, y, 1.0, |s| s);
        col.push((n, 1.0));
        sp.push_column(model.cost(pair), &col);
    }
    let sol = solve_sparse(&sp)?;
    expect_optimal(
        sol.status,
        "stationary program (internal error: W is never empty)",
    )?;
    let dual_value = sol.y_dual[n];
    let dual = DualCertificate {
        mu: sol.y_dual[n],
        psi: vec![0.0; n],
        eta: sol.y_dual[..n].to_vec(),
    };
    Ok(ProgramResult {
        status: sol.status,
        optimal_value: sol.objective,
        dual_value,
        gamma: GMeasure::new(sol.x),
        xi: None,
        dual: Some(dual),
        multipliers: sol.y_dual,
    })
}

/// `k*(ε, y0) = min ∫k dγ` over `W(ε, y0)`:
/// `γ₁(y') = (1-ε) Σ P(y'|y,u) γ(y,u) + ε 1{y' = y0}`.
///
/// The multipliers are the normalized discounted values `h_ε / ε`.
pub fn discounted_stationary_lp(model: &FiniteModel, eps: f64, y0: usize) -> Result<ProgramResult> {
    check_eps(eps)?;
    check_state(model, y0)?;
    let p = model.transition()?;
    let n = model.num_states();
    let mut b = vec![0.0; n];
    b[y0] = eps;
    let mut sp = SparseProgram::new(b);
    let mut col = Vec::new();
    for pair in 0..model.num_pairs() {
        col.clear();
        balance_column(&mut col, p, pair, model.pair_state(pair), 1.0 - eps, |s| s);
        sp.push_column(model.cost(pair), &col);
    }
    let sol = solve_sparse(&sp)?;
    expect_optimal(
        sol.status,
        "discounted program (internal error: W(eps, y0) is never empty)",
    )?;
    Ok(ProgramResult {
        status: sol.status,
        optimal_value: sol.objective,
        dual_value: eps * sol.y_dual[y0],
        gamma: GMeasure::new(sol.x),
        xi: None,
        dual: None,
        multipliers: sol.y_dual,
    })
}

/// `k*(y0)` (or `k*_θ(y0)` when `theta` is given): `min ∫k dγ + ∫θ dξ` over
/// `(γ, ξ) ∈ Ω(y0)`, i.e. `γ ∈ W` and
/// `ξ₁(y') - Σ P(y'|y,u) ξ(y,u) + γ₁(y') = 1{y' = y0}`.
pub fn augmented_lp(
    model: &FiniteModel,
    y0: usize,
    theta: Option<&[f64]>,
) -> Result<ProgramResult> {
    augmented_lp_with(model, y0, theta, true)
}

/// [`augmented_lp`] with control over the reachability reduction. With
/// `restrict = true` only states reachable from `y0` enter the program;
/// `γ` vanishes off that set and `ξ` there can be dropped at no cost, so the
/// optimal value is unchanged. The dual is extended to the remaining states.
pub fn augmented_lp_with(
    model: &FiniteModel,
    y0: usize,
    theta: Option<&[f64]>,
    restrict: bool,
) -> Result<ProgramResult> {
    check_state(model, y0)?;
    if let Some(t) = theta {
        if t.len() != model.num_pairs() {
            return Err(Error::Shape(format!(
                "theta has {} entries for {} pairs",
                t.len(),
                model.num_pairs()
            )));
        }
        if t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter(
                "theta must be finite and nonnegative".into(),
            ));
        }
    }
    let p = model.transition()?;
    let n = model.num_states();
    let states: Vec<usize> = if restrict {
        reachable_states(model, p, y0)
    } else {
        (0..n).collect()
    };
    let mut local = vec![usize::MAX; n];
    for (i, &y) in states.iter().enumerate() {
        local[y] = i;
    }
    let s = states.len();
    // rows: [0, s) γ-balance, s normalization, (s, 2s] ξ-block
    let norm = s;
    let xi_row = |y: usize| s + 1 + local[y];
    let mut b = vec![0.0; 2 * s + 1];
    b[norm] = 1.0;
    b[xi_row(y0)] = 1.0;
    let mut sp = SparseProgram::new(b);
    let pairs: Vec<usize> = states.iter().flat_map(|&y| model.pairs_of(y)).collect();
    let mut col = Vec::new();
    for &pair in &pairs {
        let y = model.pair_state(pair);
        col.clear();
        balance_column(&mut col, p, pair, y, 1.0, |v| local[v]);
        col.push((norm, 1.0));
        col.push((xi_row(y), 1.0));
        sp.push_column(model.cost(pair), &col);
    }
    for &pair in &pairs {
        let y = model.pair_state(pair);
        col.clear();
        balance_column(&mut col, p, pair, y, 1.0, xi_row);
        sp.push_column(theta.map_or(0.0, |t| t[pair]), &col);
    }
    let sol = solve_sparse(&sp)?;
    expect_optimal(
        sol.status,
        &format!("augmented program at y0 = {y0}: no (γ, ξ) pair in Ω(y0)"),
    )?;

    let np = pairs.len();
    let mut gamma = GMeasure::zeros(model.num_pairs());
    let mut xi = GMeasure::zeros(model.num_pairs());
    for (k, &pair) in pairs.iter().enumerate() {
        gamma.weights[pair] = sol.x[k];
        xi.weights[pair] = sol.x[np + k];
    }

    let mut psi = vec![0.0; n];
    let mut eta = vec![0.0; n];
    for &y in &states {
        eta[y] = sol.y_dual[local[y]];
        psi[y] = sol.y_dual[xi_row(y)];
    }
    let mu = sol.y_dual[norm] + psi[y0];
    if s < n {
        extend_certificate(model, p, &local, y0, mu, &mut psi, &mut eta);
    }
    let dual_value: f64 = sol.y_dual.iter().zip(&sp.b).map(|(a, b)| a * b).sum();
    Ok(ProgramResult {
        status: sol.status,
        optimal_value: sol.objective,
        dual_value,
        gamma,
        xi: Some(xi),
        dual: Some(DualCertificate { mu, psi, eta }),
        multipliers: sol.y_dual,
    })
}

/// States reachable from `y0` under some sequence of controls, sorted.
pub fn reachable_states(model: &FiniteModel, p: &TransitionTensor, y0: usize) -> Vec<usize> {
    let n = model.num_states();
    let mut seen = vec![false; n];
    let mut stack = vec![y0];
    seen[y0] = true;
    while let Some(y) = stack.pop() {
        for pair in model.pairs_of(y) {
            for &y1 in p.row(pair).0 {
                if !seen[y1] {
                    seen[y1] = true;
                    stack.push(y1);
                }
            }
        }
    }
    (0..n).filter(|&y| seen[y]).collect()
}

/// Sets `η = 0`, `ψ = -L` off the reachable set with `L` large enough that
/// both certificate families hold there.
fn extend_certificate(
    model: &FiniteModel,
    p: &TransitionTensor,
    local: &[usize],
    y0: usize,
    mu: f64,
    psi: &mut [f64],
    eta: &mut [f64],
) {
    let inside = |y: usize| local[y] != usize::MAX;
    let min_psi = (0..psi.len())
        .filter(|&y| inside(y))
        .map(|y| psi[y])
        .fold(f64::INFINITY, f64::min);
    for y in 0..eta.len() {
        if !inside(y) {
            eta[y] = 0.0;
        }
    }
    let mut level: f64 = (-min_psi).max(0.0);
    for pair in 0..model.num_pairs() {
        let y = model.pair_state(pair);
        if !inside(y) {
            let need = mu - model.cost(pair) - psi[y0] - p.expect(pair, eta);
            level = level.max(need);
        }
    }
    let level = level + 1.0;
    for y in 0..psi.len() {
        if !inside(y) {
            psi[y] = -level;
        }
    }
}

/// Which balance system a measure is tested against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Membership {
    /// Stationary probability measures.
    Stationary,
    /// `W(ε, y0)`.
    Discounted { eps: f64, y0: usize },
    /// `Ω(y0)`; needs the `ξ` component.
    Augmented { y0: usize },
}

/// Max-norm of the balance defects of `gamma` (and `xi`) in the chosen set,
/// including the normalization row where the set has one.
pub fn membership_residual(
    model: &FiniteModel,
    gamma: &GMeasure,
    xi: Option<&GMeasure>,
    which: Membership,
) -> Result<f64> {
    let np = model.num_pairs();
    if gamma.weights.len() != np || xi.is_some_and(|x| x.weights.len() != np) {
        return Err(Error::Shape(format!(
            "measures must have {np} pair weights"
        )));
    }
    let p = model.transition()?;
    let n = model.num_states();
    let flow = |g: &GMeasure, factor: f64| -> Vec<f64> {
        let mut r = vec![0.0; n];
        for (pair, &w) in g.weights.iter().enumerate() {
            if w != 0.0 {
                r[model.pair_state(pair)] += w;
                let (ys, ps) = p.row(pair);
                for (&y1, &q) in ys.iter().zip(ps) {
                    r[y1] -= factor * q * w;
                }
            }
        }
        r
    };
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    match which {
        Membership::Stationary => {
            let r = flow(gamma, 1.0);
            Ok(sup(&r).max((gamma.total_mass() - 1.0).abs()))
        }
        Membership::Discounted { eps, y0 } => {
            check_eps(eps)?;
            check_state(model, y0)?;
            let mut r = flow(gamma, 1.0 - eps);
            r[y0] -= eps;
            Ok(sup(&r))
        }
        Membership::Augmented { y0 } => {
            check_state(model, y0)?;
            let xi = xi.ok_or_else(|| Error::Parameter("Ω(y0) membership needs ξ".into()))?;
            let r1 = flow(gamma, 1.0);
            let mut r2 = flow(xi, 1.0);
            for (y, v) in gamma.state_marginal(model).into_iter().enumerate() {
                r2[y] += v;
            }
            r2[y0] -= 1.0;
            let neg = gamma
                .weights
                .iter()
                .chain(&xi.weights)
                .fold(0.0f64, |m, &w| m.max(-w));
            Ok(sup(&r1)
                .max(sup(&r2))
                .max((gamma.total_mass() - 1.0).abs())
                .max(neg))
        }
    }
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "discount parameter must lie in (0, 1), got {eps}"
        )))
    }
}

pub(crate) fn check_state(model: &FiniteModel, y: usize) -> Result<()> {
    if y < model.num_states() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "state index {y} out of range (model has {} states)",
            model.num_states()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        constant_cost_model, example1_family, example1_model, Kernel, ModelParts, NoiseAtom,
    };

    #[test]
    fn example1_class_stationary_value() {
        // deterministic stationary plans on {-0.5, 0.5}: the chain under
        // (u(-0.5), u(0.5)) = (+1, -1) has stationary law (3/4, 1/4)
        // giving -0.25; (+1, +1): from 0.5 with u=+1 stays w.p. 3/4,
        // law solves pi(-)=3/4 pi(-) + 1/4 pi(+) => (1/2, 1/2), cost 0;
        // (-1, -1): symmetric, cost 0; (-1, +1): law (1/4, 3/4), cost 0.25.
        let brute = [-0.25f64, 0.0, 0.0, 0.25]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let m = example1_model(0.5).unwrap();
        let r = stationary_lp(&m).unwrap();
        assert!((r.optimal_value - brute).abs() < 1e-12);
        assert!(membership_residual(&m, &r.gamma, None, Membership::Stationary).unwrap() <= 1e-9);
    }

    #[test]
    fn example1_full_family_stationary_value() {
        let m = example1_family(&[0.25, 0.5, 1.0]).unwrap();
        let r = stationary_lp(&m).unwrap();
        assert!((r.optimal_value + 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_cost_values() {
        let m = constant_cost_model(4, 0.3).unwrap();
        assert!((stationary_lp(&m).unwrap().optimal_value - 0.3).abs() < 1e-12);
        for eps in [0.9, 0.1, 0.001] {
            for y0 in 0..4 {
                let r = discounted_stationary_lp(&m, eps, y0).unwrap();
                assert!((r.optimal_value - 0.3).abs() < 1e-12);
            }
        }
        let r = augmented_lp(&m, 2, None).unwrap();
        assert!((r.optimal_value - 0.3).abs() < 1e-12);
        assert!((r.dual.unwrap().mu - 0.3).abs() < 1e-12);
    }

    #[test]
    fn example1_discounted_closed_form() {
        let m = example1_model(0.5).unwrap();
        for eps in [0.5, 0.1, 0.01] {
            let r = discounted_stationary_lp(&m, eps, 1).unwrap();
            assert!(
                (r.optimal_value - (-0.25 + 0.75 * eps)).abs() < 1e-12,
                "{eps}"
            );
            assert!((r.dual_value - r.optimal_value).abs() < 1e-12);
        }
    }

    #[test]
    fn example1_augmented_value_and_measures() {
        let m = example1_model(0.5).unwrap();
        let r = augmented_lp(&m, 1, None).unwrap();
        assert!((r.optimal_value + 0.25).abs() < 1e-12);
        // γ̄ = 3/4 δ(-0.5, +1) + 1/4 δ(0.5, -1)
        assert!((r.gamma.weights[m.pair_index(0, 1)] - 0.75).abs() < 1e-12);
        assert!((r.gamma.weights[m.pair_index(1, 0)] - 0.25).abs() < 1e-12);
        let d = r.dual.as_ref().unwrap();
        assert!((d.mu + 0.25).abs() < 1e-12);
        assert!(d.slack(&m, 1, None).unwrap().holds(CERT_TOL));
        let res = membership_residual(&m, &r.gamma, r.xi.as_ref(), Membership::Augmented { y0: 1 });
        assert!(res.unwrap() <= 1e-9);
    }

    #[test]
    fn uniform_measure_defect() {
        // one control; P(.|0) = (0.9, 0.1), P(.|1) = (0.6, 0.4).
        // uniform γ = (1/2, 1/2): γ₁(0) - ΣPγ(0) = 0.5 - (0.45 + 0.3) = -0.25
        let m = FiniteModel::from_parts(ModelParts {
            states: vec![vec![0.0], vec![1.0]],
            control_values: vec![vec![0.0]],
            controls: vec![vec![0], vec![0]],
            noise: vec![],
            kernel: Kernel::Explicit(vec![vec![(0, 0.9), (1, 0.1)], vec![(0, 0.6), (1, 0.4)]]),
            cost: vec![0.0, 1.0],
            initial_state: None,
        })
        .unwrap();
        let g = GMeasure::new(vec![0.5, 0.5]);
        let r = membership_residual(&m, &g, None, Membership::Stationary).unwrap();
        assert!((r - 0.25).abs() < 1e-15);
    }

    #[test]
    fn restricted_and_full_agree() {
        // two classes; from state 0 only class {0, 1} is reachable
        let m = FiniteModel::from_parts(ModelParts {
            states: vec![vec![0.0], vec![1.0], vec![2.0]],
            control_values: vec![vec![0.0], vec![1.0]],
            controls: vec![vec![0, 1], vec![0], vec![0]],
            noise: vec![
                NoiseAtom { id: 0, prob: 0.5 },
                NoiseAtom { id: 1, prob: 0.5 },
            ],
            kernel: Kernel::Dynamics(vec![0, 1, 1, 1, 0, 1, 2, 2]),
            cost: vec![1.0, 0.5, 0.0, -1.0],
            initial_state: None,
        })
        .unwrap();
        for y0 in 0..3 {
            let a = augmented_lp_with(&m, y0, None, true).unwrap();
            let b = augmented_lp_with(&m, y0, None, false).unwrap();
            assert!((a.optimal_value - b.optimal_value).abs() < 1e-12);
            let d = a.dual.unwrap();
            assert!(d.slack(&m, y0, None).unwrap().holds(CERT_TOL));
            assert!((d.mu - a.optimal_value).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_rejects_negative() {
        let m = example1_model(0.5).unwrap();
        assert!(augmented_lp(&m, 0, Some(&[0.0, -1.0, 0.0, 0.0])).is_err());
        assert!(augmented_lp(&m, 5, None).is_err());
        assert!(discounted_stationary_lp(&m, 1.0, 0).is_err());
    }
}
