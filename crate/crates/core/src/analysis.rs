//! Reports tying the programs and the dynamic-programming values together:
//! sandwich bounds, ergodic limits, long-run optimality certificates, duals
//! recovered from the `1/T` expansion, and the Abel/Cesàro window lemmas.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::dp::{discounted_values, finite_horizon_values, Plan, DEFAULT_VI_TOL};
use crate::error::{Error, Result};
use crate::measures::propagate;
use crate::model::FiniteModel;
use crate::output::{fmt_num, round_sig, Csv};
use crate::programs::{
    augmented_lp, check_eps, check_state, stationary_lp, CertificateSlack, DualCertificate,
};

/// Slack added to every sandwich bound.
pub const SANDWICH_FLOOR: f64 = 1e-6;
/// Gap below which the augmented program and its dual count as equal.
pub const STRONG_DUALITY_TOL: f64 = 1e-6;
/// Default tolerance of certificate and trajectory residuals.
pub const RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub parameter: f64,
    pub value: f64,
    pub slack: f64,
    pub in_sandwich: bool,
}

/// `|v_Tmax(y0) - k*(y0)|` and `|h_εmin(y0) - k*(y0)|` against a user slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitCheck {
    pub slack: f64,
    pub v_deviation: f64,
    pub h_deviation: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub y0: usize,
    pub y0_label: String,
    pub cost_bound: f64,
    pub vt_curve: Vec<CurvePoint>,
    pub heps_curve: Vec<CurvePoint>,
    pub k_star_y0: f64,
    pub d_star_y0: f64,
    pub k_star: f64,
    pub xi_mass: f64,
    pub certificate_slack: CertificateSlack,
    pub gap: f64,
    pub strong_duality: bool,
    pub sandwich_ok: bool,
    pub limit_check: Option<LimitCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsOptions {
    /// Value-iteration tolerance for `h_ε`.
    pub vi_tol: f64,
    /// When set and strong duality holds, the largest horizon and smallest
    /// discount are also compared with `k*(y0)` at this slack.
    pub limit_slack: Option<f64>,
}

impl Default for BoundsOptions {
    fn default() -> Self {
        Self {
            vi_tol: DEFAULT_VI_TOL,
            limit_slack: None,
        }
    }
}

pub(crate) fn check_horizons(ts: &[usize]) -> Result<()> {
    if ts.is_empty() {
        return Err(Error::Parameter("at least one horizon T is needed".into()));
    }
    if ts[0] == 0 || ts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter(
            "horizons must be positive and strictly increasing".into(),
        ));
    }
    Ok(())
}

pub(crate) fn check_discounts(epss: &[f64]) -> Result<()> {
    if epss.is_empty() {
        return Err(Error::Parameter(
            "at least one discount parameter is needed".into(),
        ));
    }
    for &e in epss {
        check_eps(e)?;
    }
    if epss.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Parameter(
            "discount parameters must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// `v_T(y0)` and `h_ε(y0)` curves against the bounds `d*(y0)` and `k*(y0)`
/// with per-point slacks `2M(1 + |ξ*|)/T + 1e-6` and `2Mε(1 + |ξ*|) + 1e-6`.
pub fn bounds_report(
    model: &FiniteModel,
    y0: usize,
    ts: &[usize],
    epss: &[f64],
    opts: BoundsOptions,
) -> Result<BoundsReport> {
    check_state(model, y0)?;
    check_horizons(ts)?;
    check_discounts(epss)?;
    let aug = augmented_lp(model, y0, None)?;
    let dual = aug
        .dual
        .clone()
        .expect("augmented program returns a certificate");
    let certificate_slack = dual.slack(model, y0, None)?;
    let k_star = stationary_lp(model)?.optimal_value;
    let xi_mass = aug.xi.as_ref().map_or(0.0, |x| x.total_mass());
    let m = model.cost_bound();
    let k_y0 = aug.optimal_value;
    let d_y0 = dual.mu;

    let fh = finite_horizon_values(model, *ts.last().unwrap())?;
    let point = |parameter: f64, value: f64, slack: f64| CurvePoint {
        parameter,
        value,
        slack,
        in_sandwich: d_y0 - slack <= value && value <= k_y0 + slack,
    };
    let vt_curve: Vec<CurvePoint> = ts
        .iter()
        .map(|&t| {
            let slack = 2.0 * m * (1.0 + xi_mass) / t as f64 + SANDWICH_FLOOR;
            point(t as f64, fh.v(t).at(y0), slack)
        })
        .collect();
    let hs: Vec<f64> = epss
        .par_iter()
        .map(|&e| discounted_values(model, e, opts.vi_tol).map(|(h, _)| h.at(y0)))
        .collect::<Result<_>>()?;
    let heps_curve: Vec<CurvePoint> = epss
        .iter()
        .zip(&hs)
        .map(|(&e, &h)| point(e, h, 2.0 * m * e * (1.0 + xi_mass) + SANDWICH_FLOOR))
        .collect();
    let gap = k_y0 - d_y0;
    let strong_duality = gap.abs() <= STRONG_DUALITY_TOL;
    let limit_check = match (opts.limit_slack, strong_duality) {
        (Some(slack), true) => {
            let v_deviation = (vt_curve.last().unwrap().value - k_y0).abs();
            let h_deviation = (heps_curve.last().unwrap().value - k_y0).abs();
            Some(LimitCheck {
                slack,
                v_deviation,
                h_deviation,
                ok: v_deviation <= slack && h_deviation <= slack,
            })
        }
        _ => None,
    };
    let sandwich_ok = vt_curve.iter().chain(&heps_curve).all(|p| p.in_sandwich);
    Ok(BoundsReport {
        y0,
        y0_label: model.state_label(y0),
        cost_bound: m,
        vt_curve,
        heps_curve,
        k_star_y0: k_y0,
        d_star_y0: d_y0,
        k_star,
        xi_mass,
        certificate_slack,
        gap,
        strong_duality,
        sandwich_ok,
        limit_check,
    })
}

impl BoundsReport {
    pub fn to_json(&self) -> serde_json::Value {
        let curve = |c: &[CurvePoint], key: &str| -> serde_json::Value {
            c.iter()
                .map(|p| {
                    json!({
                        key: round_sig(p.parameter),
                        "value": round_sig(p.value),
                        "slack": round_sig(p.slack),
                        "in_sandwich": p.in_sandwich,
                    })
                })
                .collect()
        };
        let mut v = json!({
            "y0": self.y0,
            "y0_label": self.y0_label,
            "cost_bound": round_sig(self.cost_bound),
            "vT_curve": curve(&self.vt_curve, "T"),
            "heps_curve": curve(&self.heps_curve, "eps"),
            "k_star_y0": round_sig(self.k_star_y0),
            "d_star_y0": round_sig(self.d_star_y0),
            "k_star": round_sig(self.k_star),
            "xi_mass": round_sig(self.xi_mass),
            "certificate_slack": {
                "cost_family": round_sig(self.certificate_slack.cost_family),
                "psi_family": round_sig(self.certificate_slack.psi_family),
            },
            "gap": round_sig(self.gap),
            "strong_duality": self.strong_duality,
            "sandwich_ok": self.sandwich_ok,
        });
        if let Some(l) = &self.limit_check {
            v["limit_check"] = json!({
                "slack": round_sig(l.slack),
                "v_deviation": round_sig(l.v_deviation),
                "h_deviation": round_sig(l.h_deviation),
                "ok": l.ok,
            });
        }
        v
    }

    /// One row per curve point.
    pub fn to_csv(&self) -> String {
        let mut csv = Csv::new(&[
            "kind",
            "parameter",
            "value",
            "k_star_y0",
            "d_star_y0",
            "in_sandwich",
        ]);
        for (kind, curve) in [("vT", &self.vt_curve), ("heps", &self.heps_curve)] {
            for p in curve {
                csv.row([
                    kind.to_string(),
                    fmt_num(p.parameter),
                    fmt_num(p.value),
                    fmt_num(self.k_star_y0),
                    fmt_num(self.d_star_y0),
                    p.in_sandwich.to_string(),
                ]);
            }
        }
        csv.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErgodicRow {
    /// `"vT"` or `"heps"`.
    pub kind: &'static str,
    pub parameter: f64,
    pub min_value: f64,
    pub argmin_state: usize,
    pub deviation: f64,
}

/// `min_y v_T(y)` and `min_y h_ε(y)` next to the stationary optimum `k*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicTable {
    pub k_star: f64,
    pub rows: Vec<ErgodicRow>,
}

pub fn ergodic_table(
    model: &FiniteModel,
    ts: &[usize],
    epss: &[f64],
    vi_tol: f64,
) -> Result<ErgodicTable> {
    check_horizons(ts)?;
    check_discounts(epss)?;
    let k_star = stationary_lp(model)?.optimal_value;
    let row = |kind: &'static str, parameter: f64, values: &[f64]| {
        let (argmin_state, &min_value) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("models have states");
        ErgodicRow {
            kind,
            parameter,
            min_value,
            argmin_state,
            deviation: (min_value - k_star).abs(),
        }
    };
    let fh = finite_horizon_values(model, *ts.last().unwrap())?;
    let mut rows: Vec<ErgodicRow> = ts
        .iter()
        .map(|&t| row("vT", t as f64, &fh.v(t).values))
        .collect();
    let hs: Vec<ErgodicRow> = epss
        .par_iter()
        .map(|&e| discounted_values(model, e, vi_tol).map(|(h, _)| row("heps", e, &h.values)))
        .collect::<Result<_>>()?;
    rows.extend(hs);
    Ok(ErgodicTable { k_star, rows })
}

impl ErgodicTable {
    pub fn to_csv(&self, model: &FiniteModel) -> String {
        let mut csv = Csv::new(&[
            "kind",
            "parameter",
            "min_value",
            "argmin_state",
            "k_star",
            "deviation",
        ]);
        for r in &self.rows {
            csv.row([
                r.kind.to_string(),
                fmt_num(r.parameter),
                fmt_num(r.min_value),
                model.state_label(r.argmin_state),
                fmt_num(self.k_star),
                fmt_num(r.deviation),
            ]);
        }
        csv.finish()
    }

    pub fn to_json(&self, model: &FiniteModel) -> serde_json::Value {
        json!({
            "k_star": round_sig(self.k_star),
            "rows": self.rows.iter().map(|r| json!({
                "kind": r.kind,
                "parameter": round_sig(r.parameter),
                "min_value": round_sig(r.min_value),
                "argmin_state": r.argmin_state,
                "argmin_label": model.state_label(r.argmin_state),
                "deviation": round_sig(r.deviation),
            })).collect::<Vec<_>>(),
        })
    }
}

/// Outcome of [`verify_long_run_optimality`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalityVerdict {
    pub certificate_slack: CertificateSlack,
    pub certificate_ok: bool,
    /// Largest `|k + ψ(y0) - ψ(y) + E η(f) - η(y) - μ|` over the support of
    /// the law for `T0 <= t <= t_max`; `None` when the certificate failed.
    pub cost_residual: Option<f64>,
    /// Largest `|E ψ(y(t)) - ψ(y0)|` over the same times.
    pub psi_residual: Option<f64>,
    pub certified: bool,
}

/// Checks the sufficient optimality conditions for `plan` from `y0`: the
/// certificate inequalities everywhere, equality of the cost family on the
/// support of the law of `(y(t), u(t))`, and `E ψ(y(t)) = ψ(y0)`, for
/// `T0 <= t <= t_max`.
pub fn verify_long_run_optimality(
    model: &FiniteModel,
    plan: &Plan,
    dual: &DualCertificate,
    y0: usize,
    t0: usize,
    t_max: usize,
    tol: f64,
) -> Result<OptimalityVerdict> {
    check_state(model, y0)?;
    if t0 > t_max {
        return Err(Error::Parameter(format!(
            "T0 = {t0} exceeds t_max = {t_max}"
        )));
    }
    let certificate_slack = dual.slack(model, y0, None)?;
    let certificate_ok = certificate_slack.holds(tol);
    if !certificate_ok {
        return Ok(OptimalityVerdict {
            certificate_slack,
            certificate_ok,
            cost_residual: None,
            psi_residual: None,
            certified: false,
        });
    }
    let p = model.transition()?;
    let path = propagate(model, plan, y0, t_max)?;
    let (psi, eta) = (&dual.psi, &dual.eta);
    let mut cost_res: f64 = 0.0;
    let mut psi_res: f64 = 0.0;
    for t in t0..=t_max {
        let mu = &path.mu[t];
        let e_psi: f64 = mu.iter().zip(psi).map(|(a, b)| a * b).sum();
        psi_res = psi_res.max((e_psi - psi[y0]).abs());
        for (y, &m) in mu.iter().enumerate() {
            if m <= tol {
                continue;
            }
            plan.for_each_choice(t, y, |s, q| {
                if m * q > tol {
                    let pair = model.pair_index(y, s);
                    let r = model.cost(pair) + psi[y0] - psi[y] + p.expect(pair, eta)
                        - eta[y]
                        - dual.mu;
                    cost_res = cost_res.max(r.abs());
                }
            });
        }
    }
    Ok(OptimalityVerdict {
        certificate_slack,
        certificate_ok,
        cost_residual: Some(cost_res),
        psi_residual: Some(psi_res),
        certified: cost_res <= tol && psi_res <= tol,
    })
}

/// Candidate dual pair read off the finite-horizon values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionDual {
    /// Extrapolated limit `v`, also the candidate `ψ`.
    pub v: Vec<f64>,
    pub eta: Vec<f64>,
    /// `|inf_G { k - v(y) + E η(f) - η(y) }|`.
    pub residual: f64,
    /// `max_y |min_u { k - v(y) + E η(f) - η(y) }|`.
    pub residual_per_state: f64,
    pub horizons: (usize, usize),
}

/// `v ≈ (T2 v_T2 - T1 v_T1)/(T2 - T1)` from the two largest horizons,
/// `η = T (v_T - v)` at the largest one, and the residual of
/// `inf_G { k(y,u) - v(y) + E η(f(y,u,s)) - η(y) } = 0`.
pub fn dual_from_expansion(model: &FiniteModel, ts: &[usize]) -> Result<ExpansionDual> {
    check_horizons(ts)?;
    if ts.len() < 2 {
        return Err(Error::Parameter(
            "two horizons are needed for extrapolation".into(),
        ));
    }
    let t1 = ts[ts.len() - 2];
    let t2 = ts[ts.len() - 1];
    let fh = finite_horizon_values(model, t2)?;
    let (a, b) = (t1 as f64, t2 as f64);
    let v: Vec<f64> = fh
        .v(t1)
        .values
        .iter()
        .zip(&fh.v(t2).values)
        .map(|(v1, v2)| (b * v2 - a * v1) / (b - a))
        .collect();
    let eta: Vec<f64> = fh
        .v(t2)
        .values
        .iter()
        .zip(&v)
        .map(|(vt, v)| b * (vt - v))
        .collect();
    let p = model.transition()?;
    let mut inf = f64::INFINITY;
    let mut per_state: f64 = 0.0;
    for y in 0..model.num_states() {
        let mut best = f64::INFINITY;
        for pair in model.pairs_of(y) {
            best = best.min(model.cost(pair) - v[y] + p.expect(pair, &eta) - eta[y]);
        }
        inf = inf.min(best);
        per_state = per_state.max(best.abs());
    }
    Ok(ExpansionDual {
        v,
        eta,
        residual: inf.abs(),
        residual_per_state: per_state,
        horizons: (t1, t2),
    })
}

/// Witness for the Abel-to-Cesàro window lemma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbelWindow {
    pub t: usize,
    /// `ε Σ_t (1-ε)^t g(t)`.
    pub sigma: f64,
    /// `(1/T) Σ_{t<T} g(t)`.
    pub average: f64,
    pub lower_start: usize,
}

/// Longest search past the starting horizon before giving up.
pub const ABEL_SEARCH_CAP: usize = 50_000_000;

/// First `T >= ⌈δ / ((4M + 4|σ| + δ)(-ln(1-ε)))⌉` with
/// `(1/T) Σ_{t<T} g(t) < σ + δ + 2M/T`.
pub fn abel_window(
    g: impl Fn(usize) -> f64,
    m_bound: f64,
    eps: f64,
    delta: f64,
) -> Result<AbelWindow> {
    check_eps(eps)?;
    if !(delta > 0.0) || !(m_bound >= 0.0) || !m_bound.is_finite() {
        return Err(Error::Parameter(
            "need delta > 0 and a finite bound M >= 0".into(),
        ));
    }
    let mut sigma = 0.0;
    let mut w = eps;
    let mut tail = 1.0;
    let mut t = 0;
    while tail >= 1e-14 {
        sigma += w * g(t);
        w *= 1.0 - eps;
        tail *= 1.0 - eps;
        t += 1;
    }
    let lower = delta / ((4.0 * m_bound + 4.0 * sigma.abs() + delta) * -(1.0 - eps).ln());
    let lower_start = (lower.ceil() as usize).max(1);
    let mut sum = 0.0;
    for t in 0..lower_start - 1 {
        sum += g(t);
    }
    for big_t in lower_start..lower_start + ABEL_SEARCH_CAP {
        sum += g(big_t - 1);
        let tf = big_t as f64;
        let average = sum / tf;
        if average < sigma + delta + 2.0 * m_bound / tf {
            return Ok(AbelWindow {
                t: big_t,
                sigma,
                average,
                lower_start,
            });
        }
    }
    Err(Error::Analysis(format!(
        "no window found within {ABEL_SEARCH_CAP} steps of T = {lower_start}"
    )))
}

/// Smallest `T*` in `0..T` such that every average of `g` over
/// `[T*, T* + S)` with `S <= T - T*` is at most `σ + δ`, where `σ` is the
/// average of `g` over `[0, T)`.
pub fn cesaro_window(g: &[f64], horizon: usize, delta: f64) -> Result<usize> {
    if horizon == 0 || g.len() < horizon {
        return Err(Error::Parameter(format!(
            "need 1 <= T <= sequence length, got T = {horizon}, length {}",
            g.len()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::Parameter("delta must be positive".into()));
    }
    let sigma = g[..horizon].iter().sum::<f64>() / horizon as f64;
    'start: for start in 0..horizon {
        let mut sum = 0.0;
        for s in 1..=horizon - start {
            sum += g[start + s - 1];
            if sum / s as f64 > sigma + delta {
                continue 'start;
            }
        }
        return Ok(start);
    }
    Err(Error::Analysis("no admissible window start".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{constant_cost_model, example1_model};

    #[test]
    fn example1_bounds() {
        let m = example1_model(0.5).unwrap();
        let r = bounds_report(
            &m,
            1,
            &[1, 10, 100],
            &[0.5, 0.1, 0.01],
            BoundsOptions::default(),
        )
        .unwrap();
        assert!((r.k_star_y0 + 0.25).abs() < 1e-12);
        assert!((r.d_star_y0 + 0.25).abs() < 1e-12);
        assert!(r.sandwich_ok && r.strong_duality);
        for p in &r.vt_curve {
            assert!((p.value - (-0.25 + 0.75 / p.parameter)).abs() < 1e-12);
        }
        let csv = r.to_csv();
        assert!(csv.starts_with(
            "kind,parameter,value,k_star_y0,d_star_y0,in_sandwich\nvT,1,0.5,-0.25,-0.25,true\n"
        ));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn constant_bounds() {
        let m = constant_cost_model(3, 0.4).unwrap();
        let r = bounds_report(
            &m,
            0,
            &[1, 5],
            &[0.5, 0.05],
            BoundsOptions {
                limit_slack: Some(1e-8),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.gap.abs() < 1e-12 && (r.k_star - 0.4).abs() < 1e-12);
        assert!(r.limit_check.unwrap().ok);
        let t = ergodic_table(&m, &[1, 10], &[0.1], 1e-10).unwrap();
        assert!(t.rows.iter().all(|r| r.deviation <= 1e-9));
    }

    #[test]
    fn argument_checks() {
        let m = example1_model(0.5).unwrap();
        assert!(bounds_report(&m, 1, &[10, 1], &[0.5], BoundsOptions::default()).is_err());
        assert!(bounds_report(&m, 1, &[1], &[0.1, 0.5], BoundsOptions::default()).is_err());
        assert!(dual_from_expansion(&m, &[10]).is_err());
        assert!(cesaro_window(&[1.0], 2, 0.1).is_err());
    }

    #[test]
    fn expansion_dual_example1() {
        let m = example1_model(0.5).unwrap();
        let d = dual_from_expansion(&m, &[100, 200]).unwrap();
        for (y, (&v, &e)) in [-0.5f64, 0.5]
            .iter()
            .zip(d.v.iter().zip(&d.eta))
            .map(|(y, p)| (*y, p))
        {
            assert!((v + y.abs() / 2.0).abs() < 1e-9);
            assert!((e - (y + y.abs() / 2.0)).abs() < 1e-9);
        }
        assert!(d.residual < 1e-9);
    }

    #[test]
    fn cesaro_hand_scan() {
        // σ = (2 - 2)/8 = 0, δ = 0.5: start 0 fails at S=1 (2 > 0.5);
        // start 1: -2, -1, -2/3, ... all <= 0.5
        let g = [2.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(cesaro_window(&g, 8, 0.5).unwrap(), 1);
        assert_eq!(cesaro_window(&[0.3; 5], 5, 0.1).unwrap(), 0);
    }

    #[test]
    fn abel_constant_and_alternating() {
        let w = abel_window(|_| 0.7, 1.0, 0.1, 0.5).unwrap();
        assert!((w.sigma - 0.7).abs() < 1e-12);
        assert_eq!(w.t, w.lower_start);
        let w = abel_window(|t| if t % 2 == 0 { 1.0 } else { -1.0 }, 1.0, 0.1, 0.5).unwrap();
        let avg: f64 = (0..w.t)
            .map(|t| if t % 2 == 0 { 1.0 } else { -1.0 })
            .sum::<f64>()
            / w.t as f64;
        assert!(avg < w.sigma + 0.5 + 2.0 / w.t as f64);
    }
}
