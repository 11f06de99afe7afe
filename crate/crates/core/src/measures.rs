//! Exact state laws, occupation measures, the metric `ρ` and periodic-regime
//! detection.

use serde::Serialize;

use crate::dp::Plan;
use crate::error::{Error, Result};
use crate::model::{FiniteModel, TransitionTensor};
use crate::programs::{check_eps, check_state, GMeasure};

/// Laws of `y(t)` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionPath {
    pub mu: Vec<Vec<f64>>,
}

impl DistributionPath {
    pub fn horizon(&self) -> usize {
        self.mu.len() - 1
    }
}

fn check_run(model: &FiniteModel, plan: &Plan, y0: usize, horizon: usize) -> Result<()> {
    check_state(model, y0)?;
    plan.check(model)?;
    if let Some(h) = plan.horizon() {
        if h < horizon {
            return Err(Error::Plan(format!(
                "staged plan has {h} stages, {horizon} needed"
            )));
        }
    }
    Ok(())
}

fn step(model: &FiniteModel, p: &TransitionTensor, plan: &Plan, t: usize, mu: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mu.len()];
    for (y, &m) in mu.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        plan.for_each_choice(t, y, |s, q| {
            let (ys, ps) = p.row(model.pair_index(y, s));
            for (&y1, &pr) in ys.iter().zip(ps) {
                out[y1] += m * q * pr;
            }
        });
    }
    out
}

/// `μ_{t+1}(y') = Σ_y μ_t(y) Σ_u π_t(u|y) P(y'|y,u)`, `μ_0 = δ_{y0}`.
pub fn propagate(
    model: &FiniteModel,
    plan: &Plan,
    y0: usize,
    horizon: usize,
) -> Result<DistributionPath> {
    check_run(model, plan, y0, horizon)?;
    let p = model.transition()?;
    let mut mu0 = vec![0.0; model.num_states()];
    mu0[y0] = 1.0;
    let mut mu = Vec::with_capacity(horizon + 1);
    mu.push(mu0);
    for t in 0..horizon {
        let next = step(model, p, plan, t, &mu[t]);
        mu.push(next);
    }
    Ok(DistributionPath { mu })
}

fn add_joint(model: &FiniteModel, plan: &Plan, t: usize, mu: &[f64], w: f64, acc: &mut [f64]) {
    for (y, &m) in mu.iter().enumerate() {
        if m != 0.0 {
            plan.for_each_choice(t, y, |s, q| acc[model.pair_index(y, s)] += w * m * q);
        }
    }
}

/// `γ(y,u) = (1/T) Σ_{t<T} μ_t(y) π_t(u|y)`.
pub fn occupation_measure(
    model: &FiniteModel,
    plan: &Plan,
    y0: usize,
    horizon: usize,
) -> Result<GMeasure> {
    if horizon == 0 {
        return Err(Error::Parameter("horizon T must be at least 1".into()));
    }
    let path = propagate(model, plan, y0, horizon)?;
    let mut g = vec![0.0; model.num_pairs()];
    let w = 1.0 / horizon as f64;
    for t in 0..horizon {
        add_joint(model, plan, t, &path.mu[t], w, &mut g);
    }
    Ok(GMeasure::new(g))
}

/// `ε Σ_t (1-ε)^t μ_t ⊗ π_t`, truncated once the remaining geometric mass
/// `(1-ε)^t` drops below `tail_tol` and renormalized to mass one. Staged
/// plans must cover the truncation horizon.
pub fn discounted_occupation(
    model: &FiniteModel,
    plan: &Plan,
    y0: usize,
    eps: f64,
    tail_tol: f64,
) -> Result<GMeasure> {
    check_eps(eps)?;
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(Error::Parameter(format!(
            "tail tolerance must lie in (0, 1), got {tail_tol}"
        )));
    }
    let horizon = (tail_tol.ln() / (1.0 - eps).ln()).ceil().max(1.0) as usize;
    check_run(model, plan, y0, horizon)?;
    let p = model.transition()?;
    let mut mu = vec![0.0; model.num_states()];
    mu[y0] = 1.0;
    let mut g = vec![0.0; model.num_pairs()];
    let mut tail = 1.0;
    let mut t = 0;
    while tail >= tail_tol {
        add_joint(model, plan, t, &mu, eps * tail, &mut g);
        mu = step(model, p, plan, t, &mu);
        tail *= 1.0 - eps;
        t += 1;
    }
    let mass: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= mass);
    Ok(GMeasure::new(g))
}

/// Value tables `q_j` on the admissible pairs, each with sup-norm at most one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFamily {
    pub tables: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

/// Largest family size kept by [`TestFamily::canonical`].
pub const FAMILY_SIZE: usize = 32;
const MAX_DEGREE: u32 = 3;

impl TestFamily {
    pub fn new(tables: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if tables.len() != labels.len() {
            return Err(Error::Shape("one label per table".into()));
        }
        for (j, t) in tables.iter().enumerate() {
            if t.iter().any(|v| !(v.abs() <= 1.0 + 1e-12)) {
                return Err(Error::Parameter(format!(
                    "test function {j} exceeds sup-norm 1"
                )));
            }
        }
        Ok(Self { tables, labels })
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Monomials in the joint coordinates `(y, u)` of total degree at most 3,
    /// in graded lexicographic order, each divided by its sup over the
    /// admissible pairs. Monomials vanishing on every pair are skipped and
    /// the family is cut at [`FAMILY_SIZE`].
    pub fn canonical(model: &FiniteModel) -> Self {
        let points: Vec<Vec<f64>> = (0..model.num_pairs())
            .map(|pair| {
                let (y, s) = model.pair(pair);
                let mut z = model.states()[y].coords.clone();
                z.extend_from_slice(model.control_value(y, s));
                z
            })
            .collect();
        let dim = points.first().map_or(0, Vec::len);
        let mut tables = Vec::new();
        let mut labels = Vec::new();
        'outer: for deg in 0..=MAX_DEGREE {
            for exps in exponents_of_degree(dim, deg) {
                let mut vals: Vec<f64> = points
                    .iter()
                    .map(|z| {
                        z.iter()
                            .zip(&exps)
                            .map(|(x, &e)| x.powi(e as i32))
                            .product()
                    })
                    .collect();
                let sup = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if sup == 0.0 {
                    continue;
                }
                vals.iter_mut().for_each(|v| *v /= sup);
                tables.push(vals);
                labels.push(monomial_label(&exps));
                if tables.len() == FAMILY_SIZE {
                    break 'outer;
                }
            }
        }
        Self { tables, labels }
    }
}

/// Exponent vectors of total degree `deg` in lexicographically descending
/// order (`z1^2, z1 z2, z2^2, ...`).
fn exponents_of_degree(dim: usize, deg: u32) -> Vec<Vec<u32>> {
    fn rec(dim: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() + 1 == dim {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for e in (0..=left).rev() {
            cur.push(e);
            rec(dim, left - e, cur, out);
            cur.pop();
        }
    }
    if dim == 0 {
        return if deg == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    rec(dim, deg, &mut Vec::new(), &mut out);
    out
}

fn monomial_label(exps: &[u32]) -> String {
    let parts: Vec<String> = exps
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(i, &e)| {
            if e == 1 {
                format!("z{}", i + 1)
            } else {
                format!("z{}^{e}", i + 1)
            }
        })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

/// `Σ_j 2^{-j} |∫q_j dg1 - ∫q_j dg2|`, `j = 1..J`.
pub fn rho(g1: &GMeasure, g2: &GMeasure, fam: &TestFamily) -> Result<f64> {
    if fam.is_empty() {
        return Err(Error::Parameter("test family is empty".into()));
    }
    let n = g1.weights.len();
    if g2.weights.len() != n || fam.tables.iter().any(|t| t.len() != n) {
        return Err(Error::Shape(
            "measures and test functions must share the pair set".into(),
        ));
    }
    let mut w = 1.0;
    let mut sum = 0.0;
    for q in &fam.tables {
        w *= 0.5;
        sum += w * (g1.integrate(q) - g2.integrate(q)).abs();
    }
    Ok(sum)
}

/// Hausdorff distance between two finite sets of measures under [`rho`].
pub fn hausdorff(a: &[GMeasure], b: &[GMeasure], fam: &TestFamily) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Parameter(
            "Hausdorff distance needs nonempty sets".into(),
        ));
    }
    let directed = |x: &[GMeasure], z: &[GMeasure]| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for g in x {
            let mut best = f64::INFINITY;
            for h in z {
                best = best.min(rho(g, h, fam)?);
            }
            worst = worst.max(best);
        }
        Ok(worst)
    };
    Ok(directed(a, b)?.max(directed(b, a)?))
}

/// Onset and period of a periodic joint state-control law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Periodicity {
    pub t0: usize,
    pub period: usize,
}

/// Smallest `(T0, P)` (ordered by `T0`, then `P`) with `T0 + 2P <= t_max` such
/// that the joint law of `(y(t), u(t))` satisfies
/// `|law_{t+P} - law_t|_∞ <= tol` for all `T0 <= t <= t_max - P`.
pub fn prg_detect(
    model: &FiniteModel,
    plan: &Plan,
    y0: usize,
    t_max: usize,
    tol: f64,
) -> Result<Option<Periodicity>> {
    if t_max < 2 {
        return Err(Error::Parameter(format!(
            "t_max must be at least 2, got {t_max}"
        )));
    }
    let path = propagate(model, plan, y0, t_max)?;
    // sparse joint laws, sorted by pair
    let laws: Vec<Vec<(usize, f64)>> = (0..=t_max)
        .map(|t| {
            let mut v = Vec::new();
            for (y, &m) in path.mu[t].iter().enumerate() {
                if m != 0.0 {
                    plan.for_each_choice(t, y, |s, q| v.push((model.pair_index(y, s), m * q)));
                }
            }
            v.sort_by_key(|e| e.0);
            v
        })
        .collect();
    let mut best: Option<Periodicity> = None;
    for period in 1..=t_max / 2 {
        // latest t violating the period-P match
        let mut onset = 0;
        for t in (0..=t_max - period).rev() {
            if sup_diff(&laws[t + period], &laws[t]) > tol {
                onset = t + 1;
                break;
            }
        }
        if onset + 2 * period <= t_max {
            let cand = Periodicity { t0: onset, period };
            if best.is_none_or(|b| (cand.t0, cand.period) < (b.t0, b.period)) {
                best = Some(cand);
            }
        }
    }
    Ok(best)
}

fn sup_diff(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&(pa, va)), Some(&(pb, vb))) if pa == pb => {
                d = d.max((va - vb).abs());
                i += 1;
                j += 1;
            }
            (Some(&(pa, va)), Some(&(pb, _))) if pa < pb => {
                d = d.max(va.abs());
                i += 1;
            }
            (Some(&(_, va)), None) => {
                d = d.max(va.abs());
                i += 1;
            }
            (_, Some(&(_, vb))) => {
                d = d.max(vb.abs());
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example1_model, Kernel, ModelParts};

    fn optimal_plan() -> Plan {
        Plan::StationaryDeterministic(vec![1, 0])
    }

    #[test]
    fn example1_law_is_stationary_from_one() {
        let m = example1_model(0.5).unwrap();
        let path = propagate(&m, &optimal_plan(), 1, 10).unwrap();
        assert_eq!(path.mu[0], vec![0.0, 1.0]);
        for t in 1..=10 {
            assert!((path.mu[t][0] - 0.75).abs() < 1e-15);
            assert!((path.mu[t][1] - 0.25).abs() < 1e-15);
        }
        let p = prg_detect(&m, &optimal_plan(), 1, 20, 1e-10).unwrap();
        assert_eq!(p, Some(Periodicity { t0: 1, period: 1 }));
    }

    #[test]
    fn two_step_hand_law() {
        // P = [[0.9, 0.1], [0.6, 0.4]]; from state 0: (0.9, 0.1), then
        // (0.81 + 0.06, 0.09 + 0.04) = (0.87, 0.13)
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
        let path = propagate(&m, &Plan::StationaryDeterministic(vec![0, 0]), 0, 2).unwrap();
        assert!((path.mu[2][0] - 0.87).abs() < 1e-15);
        assert!((path.mu[2][1] - 0.13).abs() < 1e-15);
    }

    #[test]
    fn permutation_keeps_point_mass() {
        let m = FiniteModel::from_parts(ModelParts {
            states: vec![vec![0.0], vec![1.0], vec![2.0]],
            control_values: vec![vec![0.0]],
            controls: vec![vec![0]; 3],
            noise: vec![],
            kernel: Kernel::Explicit(vec![vec![(1, 1.0)], vec![(2, 1.0)], vec![(0, 1.0)]]),
            cost: vec![0.0; 3],
            initial_state: None,
        })
        .unwrap();
        let plan = Plan::StationaryDeterministic(vec![0; 3]);
        let path = propagate(&m, &plan, 0, 6).unwrap();
        for t in 0..=6 {
            assert_eq!(path.mu[t][t % 3], 1.0);
        }
        let p = prg_detect(&m, &plan, 0, 12, 1e-10).unwrap();
        assert_eq!(p, Some(Periodicity { t0: 0, period: 3 }));
    }

    #[test]
    fn short_horizon_occupation() {
        let m = example1_model(0.5).unwrap();
        let g = occupation_measure(&m, &optimal_plan(), 1, 1).unwrap();
        assert_eq!(g.weights, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn canonical_family_example1() {
        // pairs (y, u): (-.5,-1), (-.5,1), (.5,-1), (.5,1)
        let m = example1_model(0.5).unwrap();
        let fam = TestFamily::canonical(&m);
        assert_eq!(
            &fam.labels[..6],
            &["1", "z1", "z2", "z1^2", "z1*z2", "z2^2"]
        );
        assert_eq!(fam.tables[1], vec![-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(fam.tables[2], vec![-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(fam.len(), 10);
    }

    #[test]
    fn rho_hand_value() {
        // point masses at (-.5, 1) and (.5, 1): only odd powers of y differ.
        // tables: 1, y, u, y^2, yu, u^2, y^3, y^2u, yu^2, u^3 (all normalized)
        // differing: j=2 (y): 2, j=5 (yu): 2, j=7 (y^3): 2, j=9 (yu^2): 2
        let m = example1_model(0.5).unwrap();
        let fam = TestFamily::canonical(&m);
        let a = GMeasure::point_mass(4, 1);
        let b = GMeasure::point_mass(4, 3);
        let want = 2.0 * (0.25 + 1.0 / 32.0 + 1.0 / 128.0 + 1.0 / 512.0);
        assert!((rho(&a, &b, &fam).unwrap() - want).abs() < 1e-15);
        assert!((rho(&b, &a, &fam).unwrap() - want).abs() < 1e-15);
        assert_eq!(rho(&a, &a, &fam).unwrap(), 0.0);
        let h = hausdorff(std::slice::from_ref(&a), &[a.clone(), b.clone()], &fam).unwrap();
        assert!((h - want).abs() < 1e-15);
        assert!(hausdorff(&[], &[a], &fam).is_err());
    }
}
