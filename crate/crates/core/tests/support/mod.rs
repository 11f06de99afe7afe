//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use occulimits::dp::Plan;
use occulimits::lp::LinearProgram;
use occulimits::model::{Kernel, ModelParts, NoiseAtom};
use occulimits::FiniteModel;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random controlled recursion: up to 8 states, up to 4 controls per state,
/// up to 3 noise atoms each of probability at least 0.05, costs in [-1, 1].
pub fn random_model(rng: &mut impl Rng) -> FiniteModel {
    let n = rng.random_range(2..=8);
    let atoms = rng.random_range(1..=3);
    let w: Vec<f64> = (0..atoms).map(|_| rng.random::<f64>() + 0.01).collect();
    let total: f64 = w.iter().sum();
    let free = 1.0 - 0.05 * atoms as f64;
    let mut probs: Vec<f64> = w.iter().map(|x| 0.05 + free * x / total).collect();
    let head: f64 = probs[..atoms - 1].iter().sum();
    probs[atoms - 1] = 1.0 - head;
    let noise = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| NoiseAtom {
            id: i as i64,
            prob: p,
        })
        .collect();
    let control_values: Vec<Vec<f64>> = (0..4).map(|u| vec![u as f64]).collect();
    let mut controls = Vec::new();
    for _ in 0..n {
        let c = rng.random_range(1..=4);
        let mut pool: Vec<usize> = (0..4).collect();
        let mut chosen = Vec::new();
        for _ in 0..c {
            let i = rng.random_range(0..pool.len());
            chosen.push(pool.swap_remove(i));
        }
        chosen.sort_unstable();
        controls.push(chosen);
    }
    let pairs: usize = controls.iter().map(Vec::len).sum();
    let next = (0..pairs * atoms).map(|_| rng.random_range(0..n)).collect();
    let cost = (0..pairs).map(|_| rng.random_range(-1.0..=1.0)).collect();
    FiniteModel::from_parts(ModelParts {
        states: (0..n).map(|y| vec![y as f64]).collect(),
        control_values,
        controls,
        noise,
        kernel: Kernel::Dynamics(next),
        cost,
        initial_state: None,
    })
    .expect("generated model is well formed")
    .validated()
    .expect("generated model is valid")
}

pub fn random_deterministic_plan(model: &FiniteModel, rng: &mut impl Rng) -> Plan {
    Plan::StationaryDeterministic(
        (0..model.num_states())
            .map(|y| rng.random_range(0..model.num_controls(y)))
            .collect(),
    )
}

pub fn random_randomized_plan(model: &FiniteModel, rng: &mut impl Rng) -> Plan {
    Plan::StationaryRandomized(
        (0..model.num_states())
            .map(|y| {
                let w: Vec<f64> = (0..model.num_controls(y))
                    .map(|_| rng.random::<f64>() + 0.01)
                    .collect();
                let s: f64 = w.iter().sum();
                let mut row: Vec<f64> = w.iter().map(|v| v / s).collect();
                let head: f64 = row[..row.len() - 1].iter().sum();
                *row.last_mut().unwrap() = 1.0 - head;
                row
            })
            .collect(),
    )
}

pub fn random_staged_plan(model: &FiniteModel, stages: usize, rng: &mut impl Rng) -> Plan {
    Plan::Staged(
        (0..stages)
            .map(|_| {
                (0..model.num_states())
                    .map(|y| rng.random_range(0..model.num_controls(y)))
                    .collect()
            })
            .collect(),
    )
}

pub fn random_stationary_plan(model: &FiniteModel, rng: &mut impl Rng) -> Plan {
    if rng.random_bool(0.5) {
        random_deterministic_plan(model, rng)
    } else {
        random_randomized_plan(model, rng)
    }
}

/// Feasible, bounded `min c'x, Ax = b, x >= 0` with `rows x cols` dense `A`.
/// `b = A x0` for a sparse `x0 >= 0` (so many vertices are degenerate) and
/// `c = A'y0 + s` with `s >= 0` (so the dual is feasible).
pub fn random_lp(rng: &mut impl Rng, rows: usize, cols: usize) -> LinearProgram {
    let a: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let x0: Vec<f64> = (0..cols)
        .map(|_| {
            if rng.random_bool(0.4) {
                rng.random_range(0.0..2.0)
            } else {
                0.0
            }
        })
        .collect();
    let b: Vec<f64> = a
        .iter()
        .map(|r| r.iter().zip(&x0).map(|(p, q)| p * q).sum())
        .collect();
    let y0: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let c: Vec<f64> = (0..cols)
        .map(|j| {
            let ay: f64 = (0..rows).map(|i| a[i][j] * y0[i]).sum();
            let s = if rng.random_bool(0.3) {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            };
            ay + s
        })
        .collect();
    LinearProgram::new(c, a, b).expect("shapes agree")
}

/// Solves the square system `m x = rhs` by Gaussian elimination with
/// partial pivoting; `None` when a pivot falls below `1e-9`.
fn solve_square(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))?;
        if m[piv][k].abs() < 1e-9 {
            return None;
        }
        m.swap(k, piv);
        rhs.swap(k, piv);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            if f != 0.0 {
                for c in k..n {
                    m[i][c] -= f * m[k][c];
                }
                rhs[i] -= f * rhs[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| m[k][c] * x[c]).sum();
        x[k] = (rhs[k] - s) / m[k][k];
    }
    Some(x)
}

/// Minimum of `c'x` over all basic feasible solutions, by enumerating every
/// choice of `rows` columns. Assumes `A` has full row rank.
pub fn vertex_enumeration_min(lp: &LinearProgram) -> Option<f64> {
    let (m, n) = (lp.rows, lp.cols);
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        let sq: Vec<Vec<f64>> = (0..m)
            .map(|i| idx.iter().map(|&j| lp.entry(i, j)).collect())
            .collect();
        if let Some(x) = solve_square(sq, lp.b.clone()) {
            if x.iter().all(|&v| v >= -1e-10) {
                let obj: f64 = idx.iter().zip(&x).map(|(&j, v)| lp.c[j] * v).sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        // next combination
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < n - m + i {
                idx[i] += 1;
                for k in i + 1..m {
                    idx[k] = idx[k - 1] + 1;
                }
                break;
            }
        }
    }
}

/// The fixed two-state, two-control, two-atom model used for exhaustive
/// plan enumeration.
pub fn brute_force_model() -> FiniteModel {
    FiniteModel::from_parts(ModelParts {
        states: vec![vec![0.0], vec![1.0]],
        control_values: vec![vec![0.0], vec![1.0]],
        controls: vec![vec![0, 1], vec![0, 1]],
        noise: vec![
            NoiseAtom { id: 0, prob: 0.3 },
            NoiseAtom { id: 1, prob: 0.7 },
        ],
        // (y, u, s) -> next
        kernel: Kernel::Dynamics(vec![0, 1, 1, 1, 0, 0, 1, 0]),
        cost: vec![0.4, -0.2, 0.9, 0.1],
        initial_state: None,
    })
    .unwrap()
    .validated()
    .unwrap()
}

/// `min` over every staged deterministic plan of the exhaustively expanded
/// expected `horizon`-stage average from `y0`, walking each noise path.
pub fn brute_force_min_average(model: &FiniteModel, y0: usize, horizon: usize) -> f64 {
    let n = model.num_states();
    let per_stage: Vec<Vec<usize>> = {
        let mut all = vec![vec![]];
        for y in 0..n {
            let mut next = Vec::new();
            for sel in &all {
                for s in 0..model.num_controls(y) {
                    let mut v: Vec<usize> = sel.clone();
                    v.push(s);
                    next.push(v);
                }
            }
            all = next;
        }
        all
    };
    let next_state = |y: usize, s: usize, atom: usize| -> usize {
        match model.kernel() {
            Kernel::Dynamics(next) => next[model.pair_index(y, s) * model.noise().len() + atom],
            Kernel::Explicit(_) => unreachable!(),
        }
    };
    fn walk(
        t: usize,
        y: usize,
        prob: f64,
        plan: &[&Vec<usize>],
        model: &FiniteModel,
        next_state: &dyn Fn(usize, usize, usize) -> usize,
    ) -> f64 {
        if t == plan.len() {
            return 0.0;
        }
        let s = plan[t][y];
        let mut total = prob * model.cost(model.pair_index(y, s));
        for (a, atom) in model.noise().iter().enumerate() {
            total += walk(
                t + 1,
                next_state(y, s, a),
                prob * atom.prob,
                plan,
                model,
                next_state,
            );
        }
        total
    }
    let mut best = f64::INFINITY;
    let mut counter = vec![0usize; horizon];
    loop {
        let plan: Vec<&Vec<usize>> = counter.iter().map(|&c| &per_stage[c]).collect();
        let v = walk(0, y0, 1.0, &plan, model, &next_state) / horizon as f64;
        best = best.min(v);
        let mut i = 0;
        loop {
            if i == horizon {
                return best;
            }
            counter[i] += 1;
            if counter[i] < per_stage.len() {
                break;
            }
            counter[i] = 0;
            i += 1;
        }
    }
}

/// Example 2 dynamics `y(t+1) = u s` (`s ∈ {1, 1/4}` equally likely,
/// cost `y`) on the exact orbit of `y0` under the plan `u = -1` on `[-1, 0]`,
/// `u = y` on `(0, 1]`, without any grid snapping. States are the points
/// reached within `depth` steps plus a self-looping sink for anything
/// further. Each state carries only the plan's control.
pub fn example2_orbit_model(y0: f64, depth: usize) -> (FiniteModel, usize) {
    use std::collections::BTreeMap;
    let control = |y: f64| if y <= 0.0 { -1.0 } else { y };
    let mut seen: BTreeMap<u64, f64> = BTreeMap::new();
    seen.insert(y0.to_bits(), y0);
    let mut frontier = vec![y0];
    for _ in 0..depth {
        let mut fresh = Vec::new();
        for &y in &frontier {
            for s in [1.0, 0.25] {
                let z = control(y) * s;
                if seen.insert(z.to_bits(), z).is_none() {
                    fresh.push(z);
                }
            }
        }
        frontier = fresh;
    }
    let mut pts: Vec<f64> = seen.into_values().collect();
    pts.sort_by(f64::total_cmp);
    let pos = |y: f64| pts.iter().position(|&p| p == y);
    let sink = pts.len();
    let mut next = Vec::new();
    for &y in &pts {
        for s in [1.0, 0.25] {
            next.push(pos(control(y) * s).unwrap_or(sink));
        }
    }
    next.extend([sink, sink]);
    let mut states: Vec<Vec<f64>> = pts.iter().map(|&y| vec![y]).collect();
    states.push(vec![2.0]);
    let mut control_values: Vec<Vec<f64>> = pts.iter().map(|&y| vec![control(y)]).collect();
    control_values.push(vec![0.0]);
    let mut cost = pts.clone();
    cost.push(0.0);
    let n = states.len();
    let model = FiniteModel::from_parts(ModelParts {
        states,
        control_values,
        controls: (0..n).map(|i| vec![i]).collect(),
        noise: vec![
            NoiseAtom { id: 0, prob: 0.5 },
            NoiseAtom { id: 1, prob: 0.5 },
        ],
        kernel: Kernel::Dynamics(next),
        cost,
        initial_state: None,
    })
    .unwrap();
    (model, pos(y0).unwrap())
}
