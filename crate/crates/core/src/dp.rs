//! Dynamic programming: finite-horizon averages `v_T`, normalized discounted
//! values `h_ε`, greedy plans and plan evaluation.
//!
//! Every argmin breaks ties toward the lowest control slot.

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::measures::{discounted_occupation, propagate};
use crate::model::{FiniteModel, TransitionTensor};
use crate::output::round_sig;
use crate::programs::{check_eps, check_state};

/// Values whose difference is below this (relative) count as tied.
const TIE_TOL: f64 = 1e-12;
/// Default stopping tolerance of value iteration.
pub const DEFAULT_VI_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn at(&self, y: usize) -> f64 {
        self.values[y]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// A control plan. Deterministic and staged plans store control slots
/// (positions in each state's control list).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "selector")]
pub enum Plan {
    StationaryDeterministic(Vec<usize>),
    StationaryRandomized(Vec<Vec<f64>>),
    /// `stages[t][y]` is the slot used at time `t`.
    Staged(Vec<Vec<usize>>),
}

impl Plan {
    pub fn is_stationary(&self) -> bool {
        !matches!(self, Plan::Staged(_))
    }

    /// Number of stages of a staged plan; `None` for stationary plans.
    pub fn horizon(&self) -> Option<usize> {
        match self {
            Plan::Staged(s) => Some(s.len()),
            _ => None,
        }
    }

    /// Checks admissibility against `model`.
    pub fn check(&self, model: &FiniteModel) -> Result<()> {
        let n = model.num_states();
        let check_det = |sel: &[usize], what: &str| -> Result<()> {
            if sel.len() != n {
                return Err(Error::Plan(format!(
                    "{what} has {} entries for {n} states",
                    sel.len()
                )));
            }
            for (y, &s) in sel.iter().enumerate() {
                if s >= model.num_controls(y) {
                    return Err(Error::Plan(format!(
                        "{what} selects control {s} at state {y}, which has {} controls",
                        model.num_controls(y)
                    )));
                }
            }
            Ok(())
        };
        match self {
            Plan::StationaryDeterministic(sel) => check_det(sel, "plan"),
            Plan::Staged(stages) => {
                for (t, sel) in stages.iter().enumerate() {
                    check_det(sel, &format!("stage {t}"))?;
                }
                Ok(())
            }
            Plan::StationaryRandomized(rows) => {
                if rows.len() != n {
                    return Err(Error::Plan(format!(
                        "plan has {} rows for {n} states",
                        rows.len()
                    )));
                }
                for (y, row) in rows.iter().enumerate() {
                    if row.len() != model.num_controls(y) {
                        return Err(Error::Plan(format!(
                            "row {y} has {} entries for {} controls",
                            row.len(),
                            model.num_controls(y)
                        )));
                    }
                    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                        return Err(Error::Plan(format!("row {y} has a negative entry")));
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > 1e-12 {
                        return Err(Error::Plan(format!("row {y} sums to {s}")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Calls `f(slot, probability)` for each control used at `(t, y)` with
    /// positive probability.
    pub fn for_each_choice(&self, t: usize, y: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            Plan::StationaryDeterministic(sel) => f(sel[y], 1.0),
            Plan::Staged(stages) => f(stages[t][y], 1.0),
            Plan::StationaryRandomized(rows) => {
                for (s, &p) in rows[y].iter().enumerate() {
                    if p > 0.0 {
                        f(s, p);
                    }
                }
            }
        }
    }

    /// `π_t(slot | y)`.
    pub fn prob(&self, t: usize, y: usize, slot: usize) -> f64 {
        match self {
            Plan::StationaryDeterministic(sel) => f64::from(u8::from(sel[y] == slot)),
            Plan::Staged(stages) => f64::from(u8::from(stages[t][y] == slot)),
            Plan::StationaryRandomized(rows) => rows[y][slot],
        }
    }

    /// Labelled table for reports.
    pub fn to_json(&self, model: &FiniteModel) -> serde_json::Value {
        let det = |sel: &[usize]| -> serde_json::Value {
            sel.iter()
                .enumerate()
                .map(|(y, &s)| {
                    json!({
                        "state": y,
                        "state_label": model.state_label(y),
                        "control": s,
                        "control_label": model.control_label(y, s),
                    })
                })
                .collect()
        };
        match self {
            Plan::StationaryDeterministic(sel) => {
                json!({"kind": "stationary_deterministic", "rules": det(sel)})
            }
            Plan::Staged(stages) => json!({
                "kind": "staged",
                "stages": stages.iter().map(|s| det(s)).collect::<Vec<_>>(),
            }),
            Plan::StationaryRandomized(rows) => json!({
                "kind": "stationary_randomized",
                "rows": rows.iter().enumerate().map(|(y, r)| json!({
                    "state": y,
                    "state_label": model.state_label(y),
                    "probabilities": r.iter().map(|&p| round_sig(p)).collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
            }),
        }
    }
}

/// Output of [`finite_horizon_values`].
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHorizon {
    /// `values[t - 1]` is `v_t`.
    pub values: Vec<ValueFunction>,
    /// Optimal staged plan for the full horizon.
    pub plan: Plan,
}

impl FiniteHorizon {
    pub fn v(&self, t: usize) -> &ValueFunction {
        &self.values[t - 1]
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }
}

/// Index of the smallest entry, preferring lower slots within [`TIE_TOL`].
fn argmin_low(vals: impl Iterator<Item = f64>) -> (usize, f64) {
    let vals: Vec<f64> = vals.collect();
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * (1.0 + min.abs());
    let s = vals.iter().position(|&v| v <= min + tol).unwrap_or(0);
    (s, min)
}

/// Backward recursion `T v_T(y) = min_u { k(y,u) + (T-1) E[v_{T-1}(f(y,u,s))] }`,
/// `v_0 = 0`, storing every `v_t`.
pub fn finite_horizon_values(model: &FiniteModel, horizon: usize) -> Result<FiniteHorizon> {
    if horizon == 0 {
        return Err(Error::Parameter("horizon T must be at least 1".into()));
    }
    let p = model.transition()?;
    let n = model.num_states();
    let mut total = vec![0.0; n];
    let mut values = Vec::with_capacity(horizon);
    let mut argmins: Vec<Vec<usize>> = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let mut next = vec![0.0; n];
        let mut sel = vec![0; n];
        for y in 0..n {
            let (s, v) = argmin_low(
                model
                    .pairs_of(y)
                    .map(|pair| model.cost(pair) + p.expect(pair, &total)),
            );
            next[y] = v;
            sel[y] = s;
        }
        total = next;
        values.push(ValueFunction {
            values: total.iter().map(|w| w / t as f64).collect(),
        });
        argmins.push(sel);
    }
    // stage t has T - t steps to go
    let stages = (0..horizon)
        .map(|t| argmins[horizon - 1 - t].clone())
        .collect();
    Ok(FiniteHorizon {
        values,
        plan: Plan::Staged(stages),
    })
}

/// Fixed point of `h(y) = min_u { ε k(y,u) + (1-ε) E[h(f(y,u,s))] }` by value
/// iteration, stopped once the sup-norm change is at most `tol·ε`, with the
/// greedy stationary plan for the result.
pub fn discounted_values(model: &FiniteModel, eps: f64, tol: f64) -> Result<(ValueFunction, Plan)> {
    check_eps(eps)?;
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let p = model.transition()?;
    let n = model.num_states();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    loop {
        let mut change: f64 = 0.0;
        for y in 0..n {
            let v = model
                .pairs_of(y)
                .map(|pair| eps * model.cost(pair) + (1.0 - eps) * p.expect(pair, &h))
                .fold(f64::INFINITY, f64::min);
            change = change.max((v - h[y]).abs());
            next[y] = v;
        }
        std::mem::swap(&mut h, &mut next);
        if change <= tol * eps {
            break;
        }
    }
    let plan = greedy(model, p, |pair| eps * model.cost(pair), 1.0 - eps, &h);
    Ok((ValueFunction { values: h }, plan))
}

fn greedy(
    model: &FiniteModel,
    p: &TransitionTensor,
    cost: impl Fn(usize) -> f64,
    weight: f64,
    f: &[f64],
) -> Plan {
    let sel = (0..model.num_states())
        .map(|y| {
            argmin_low(
                model
                    .pairs_of(y)
                    .map(|pair| cost(pair) + weight * p.expect(pair, f)),
            )
            .0
        })
        .collect();
    Plan::StationaryDeterministic(sel)
}

/// `u(y) = argmin_u { k(y,u) + E[η(f(y,u,s))] }`.
pub fn greedy_feedback_from_eta(model: &FiniteModel, eta: &[f64]) -> Result<Plan> {
    if eta.len() != model.num_states() {
        return Err(Error::Shape(format!(
            "eta has {} entries for {} states",
            eta.len(),
            model.num_states()
        )));
    }
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("eta must be finite".into()));
    }
    let p = model.transition()?;
    Ok(greedy(model, p, |pair| model.cost(pair), 1.0, eta))
}

/// `(1/T) Σ_{t<T} E[k(y(t), u(t))]` under `plan` from `y0`, by exact
/// propagation of the state law.
pub fn evaluate_plan_average(
    model: &FiniteModel,
    plan: &Plan,
    y0: usize,
    horizon: usize,
) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::Parameter("horizon T must be at least 1".into()));
    }
    let path = propagate(model, plan, y0, horizon)?;
    let mut sum = 0.0;
    for t in 0..horizon {
        for (y, &m) in path.mu[t].iter().enumerate() {
            if m != 0.0 {
                plan.for_each_choice(t, y, |s, q| {
                    sum += m * q * model.cost(model.pair_index(y, s))
                });
            }
        }
    }
    Ok(sum / horizon as f64)
}

/// `ε Σ_t (1-ε)^t E[k(y(t), u(t))]` for a stationary plan, by iterating the
/// plan's own Bellman operator with the same stopping rule as
/// [`discounted_values`].
pub fn evaluate_plan_discounted(
    model: &FiniteModel,
    plan: &Plan,
    y0: usize,
    eps: f64,
    tol: f64,
) -> Result<f64> {
    check_eps(eps)?;
    check_state(model, y0)?;
    plan.check(model)?;
    if !plan.is_stationary() {
        return Err(Error::Plan(
            "discounted evaluation needs a stationary plan".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let p = model.transition()?;
    let n = model.num_states();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    loop {
        let mut change: f64 = 0.0;
        for y in 0..n {
            let mut v = 0.0;
            plan.for_each_choice(0, y, |s, q| {
                let pair = model.pair_index(y, s);
                v += q * (eps * model.cost(pair) + (1.0 - eps) * p.expect(pair, &h));
            });
            change = change.max((v - h[y]).abs());
            next[y] = v;
        }
        std::mem::swap(&mut h, &mut next);
        if change <= tol * eps {
            return Ok(h[y0]);
        }
    }
}

/// Discounted plan value through the truncated discounted occupation
/// measure; agrees with [`evaluate_plan_discounted`] up to the tail.
pub fn evaluate_plan_discounted_exact(
    model: &FiniteModel,
    plan: &Plan,
    y0: usize,
    eps: f64,
    tail_tol: f64,
) -> Result<f64> {
    Ok(discounted_occupation(model, plan, y0, eps, tail_tol)?.integrate(model.costs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{constant_cost_model, example1_model, example2_model};

    #[test]
    fn example1_horizon_three() {
        let m = example1_model(0.5).unwrap();
        let fh = finite_horizon_values(&m, 3).unwrap();
        assert!(fh.v(3).at(1).abs() < 1e-15);
        assert!((fh.v(1).at(1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn example2_one_step() {
        let m = example2_model(8, 2f64.powi(-8)).unwrap();
        let y0 = m.find_state(&[0.5], 1e-12).unwrap();
        let fh = finite_horizon_values(&m, 1).unwrap();
        assert!((fh.v(1).at(y0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn discounted_closed_form() {
        let m = example1_model(0.5).unwrap();
        let (h, _) = discounted_values(&m, 0.1, 1e-12).unwrap();
        assert!((h.at(1) + 0.175).abs() < 1e-11);
        let m = example1_model(1.0).unwrap();
        let (h, plan) = discounted_values(&m, 0.5, 1e-12).unwrap();
        assert!((h.at(1) - 0.25).abs() < 1e-11);
        let v = evaluate_plan_discounted(&m, &plan, 1, 0.5, 1e-12).unwrap();
        assert!((v - h.at(1)).abs() < 1e-11);
    }

    #[test]
    fn constant_cost() {
        let m = constant_cost_model(3, -0.7).unwrap();
        let fh = finite_horizon_values(&m, 20).unwrap();
        for t in 1..=20 {
            assert!(fh.v(t).values.iter().all(|v| (v + 0.7).abs() < 1e-14));
        }
        let (h, _) = discounted_values(&m, 0.01, 1e-10).unwrap();
        assert!(h.values.iter().all(|v| (v + 0.7).abs() < 1e-9));
    }

    #[test]
    fn hand_plan_value() {
        // u ≡ -1 from 0.5: t=0 cost 0.5; t=1 at -0.5 w.p. 3/4, 0.5 w.p. 1/4
        let m = example1_model(0.5).unwrap();
        let plan = Plan::StationaryDeterministic(vec![0, 0]);
        let v = evaluate_plan_average(&m, &plan, 1, 2).unwrap();
        assert!((v - 0.125).abs() < 1e-15);
        // u ≡ +1 keeps the sign w.p. 3/4: (0.5 + 0.25) / 2
        let plan = Plan::StationaryDeterministic(vec![1, 1]);
        let v = evaluate_plan_average(&m, &plan, 1, 2).unwrap();
        assert!((v - 0.375).abs() < 1e-15);
    }

    #[test]
    fn staged_plan_attains_v_t() {
        let m = example1_model(0.25).unwrap();
        let fh = finite_horizon_values(&m, 7).unwrap();
        for y0 in 0..2 {
            let v = evaluate_plan_average(&m, &fh.plan, y0, 7).unwrap();
            assert!((v - fh.v(7).at(y0)).abs() < 1e-14);
        }
    }

    #[test]
    fn feedback_from_eta() {
        let m = example1_model(0.5).unwrap();
        // η(y) = y + |y|/2 on {-0.5, 0.5}
        let plan = greedy_feedback_from_eta(&m, &[-0.25, 0.75]).unwrap();
        assert_eq!(plan, Plan::StationaryDeterministic(vec![1, 0]));
        // η = 0 with equal costs per state: lowest slot
        let plan = greedy_feedback_from_eta(&m, &[0.0, 0.0]).unwrap();
        assert_eq!(plan, Plan::StationaryDeterministic(vec![0, 0]));
    }

    #[test]
    fn plan_checks() {
        let m = example1_model(0.5).unwrap();
        assert!(Plan::StationaryDeterministic(vec![0, 2]).check(&m).is_err());
        assert!(
            Plan::StationaryRandomized(vec![vec![0.5, 0.5], vec![0.7, 0.2]])
                .check(&m)
                .is_err()
        );
        assert!(Plan::Staged(vec![vec![0, 1]]).check(&m).is_ok());
        assert!(evaluate_plan_average(&m, &Plan::Staged(vec![vec![0, 1]]), 0, 2).is_err());
    }
}
