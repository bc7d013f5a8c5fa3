//! A station's best response: with the served proportions and the other
//! stations' menus held fixed, choose its own payments and requests for
//! every type to maximize expected profit subject to capacity, demand,
//! participation at the lowest type, local truth-telling in both
//! directions (which together imply it for every pair of types), payment
//! monotonicity and acceptance: at the provider's true type the station's
//! own payment must cover the marginal cost of serving its request in
//! full, `phi rho_i >= (1 + R_other + rho_i) zeta xi_i`, so that absent a
//! capacity limit the provider serves it completely. Without it a station
//! can pay nothing and ride on the others' payments.
//!
//! The search runs a quadratic-penalty projected gradient ascent from the
//! start menu and seeded perturbations of it. Each candidate is then made
//! exactly feasible: for fixed requests every constraint on payments is a
//! lower bound increasing in the other payments, so the cheapest feasible
//! schedule is the least fixed point of alternating forward and backward
//! passes. A final pattern
//! search over the requests (payments always at their cheapest) polishes
//! the best candidate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{aggregates, AllocationVector, ContractMenu, MarketConfig, SgpTypeModel, FEAS_TOL};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Penalty weights, applied in order with warm starts.
    pub penalties: Vec<f64>,
    /// Total starts: the given menu plus `restarts - 1` perturbations.
    pub restarts: usize,
    pub iters_per_penalty: usize,
    /// Relative size of the random perturbations.
    pub perturbation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            penalties: (1..=8).map(|k| 10f64.powi(k)).collect(),
            restarts: 5,
            iters_per_penalty: 200,
            perturbation: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub menu: ContractMenu,
    pub utility: f64,
    /// Whether `menu` satisfies every constraint to `FEAS_TOL`.
    pub feasible: bool,
    pub max_violation: f64,
}

/// Fraction of the provider's willingness (phi / zeta at the true type)
/// that aggregate true-type requests may use. Payments that get every
/// station accepted exist only below it, and grow without bound near it.
pub(crate) const HEADROOM: f64 = 0.9;

/// Everything a station's problem needs, with others' contributions folded
/// into fixed aggregates.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    /// Own served proportion.
    a: f64,
    r_other: Vec<f64>,
    x_other: Vec<f64>,
    capacity: Vec<f64>,
    demand: f64,
    p: Vec<f64>,
    phi: Vec<f64>,
    varrho: f64,
    zeta: f64,
    /// Index of the provider's true type.
    tt: usize,
    /// This station's share of the constant in `1 + R`: one over the number
    /// of served stations.
    share: f64,
}

impl Problem {
    pub(crate) fn new(
        cs: usize,
        menus: &[ContractMenu],
        pi_hat: &AllocationVector,
        model: &SgpTypeModel,
        varrho: f64,
        demand: f64,
    ) -> Self {
        let n = model.phi_tot();
        let mut others = pi_hat.clone();
        others.pi[cs] = 0.0;
        let agg: Vec<(f64, f64)> = (0..n).map(|t| aggregates(menus, &others, t)).collect();
        let tt = model.index(model.true_type);
        let mut capacity = model.capacity.clone();
        capacity[tt] = capacity[tt].min(HEADROOM * model.phi_at(tt) / model.zeta);
        Self {
            a: pi_hat.pi[cs],
            r_other: agg.iter().map(|g| g.0).collect(),
            x_other: agg.iter().map(|g| g.1).collect(),
            capacity,
            demand,
            p: model.p.clone(),
            phi: (0..n).map(|t| model.phi_at(t)).collect(),
            varrho,
            zeta: model.zeta,
            tt,
            share: 1.0 / pi_hat.pi.iter().filter(|&&v| v > 0.0).count().max(1) as f64,
        }
    }

    fn n(&self) -> usize {
        self.p.len()
    }

    /// Largest own request per type allowed by capacity and demand.
    pub(crate) fn upper(&self) -> Vec<f64> {
        (0..self.n())
            .map(|t| {
                let room = ((self.capacity[t] - self.x_other[t]) / self.a).max(0.0);
                room.min(self.demand)
            })
            .collect()
    }

    pub(crate) fn utility(&self, rho: &[f64], xi: &[f64]) -> f64 {
        self.a
            * (0..self.n())
                .map(|t| self.p[t] * (self.varrho * xi[t] - rho[t]))
                .sum::<f64>()
    }

    /// Constraint values `g_k >= 0` (capacity, demand, participation, local
    /// truth-telling, monotonicity) in a fixed order.
    fn constraints(&self, rho: &[f64], xi: &[f64]) -> Vec<f64> {
        let n = self.n();
        let r: Vec<f64> = (0..n).map(|t| self.r_other[t] + self.a * rho[t]).collect();
        let x: Vec<f64> = (0..n).map(|t| self.x_other[t] + self.a * xi[t]).collect();
        let mut g = Vec::with_capacity(4 * n + 1);
        for t in 0..n {
            g.push(self.capacity[t] - x[t]);
            g.push(self.demand - xi[t]);
        }
        g.push(self.phi[0] * r[0].ln_1p() - self.zeta * x[0]);
        for t in 1..n {
            g.push(self.phi[t] * (r[t] - r[t - 1]) - (1.0 + r[t]) * self.zeta * (x[t] - x[t - 1]));
            g.push(
                self.zeta * (x[t] - x[t - 1]) - self.phi[t - 1] * (r[t].ln_1p() - r[t - 1].ln_1p()),
            );
            g.push(rho[t] - rho[t - 1]);
        }
        let tt = self.tt;
        g.push(self.phi[tt] * rho[tt] - (1.0 + self.r_other[tt] + rho[tt]) * self.zeta * xi[tt]);
        // own share of participation and of both local truth-telling bounds,
        // and own requests non-decreasing
        let v: Vec<f64> = rho.iter().map(|r| self.share + self.a * r).collect();
        g.push(self.phi[0] * (v[0] / self.share).ln() - self.zeta * x[0]);
        for t in 1..n {
            g.push(xi[t] - xi[t - 1]);
            let c = self.zeta * (x[t] - x[t - 1]);
            g.push(self.phi[t] * (v[t] - v[t - 1]) - v[t] * c);
            g.push(c - self.phi[t - 1] * (v[t] / v[t - 1]).ln());
        }
        g
    }

    pub(crate) fn max_violation(&self, rho: &[f64], xi: &[f64]) -> f64 {
        let neg = rho
            .iter()
            .chain(xi)
            .map(|&v| (-v).max(0.0))
            .fold(0.0, f64::max);
        self.constraints(rho, xi)
            .iter()
            .map(|&v| (-v).max(0.0))
            .fold(neg, f64::max)
    }

    /// Penalized objective and its gradient with respect to `(rho, xi)`.
    fn penalized(&self, rho: &[f64], xi: &[f64], mu: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.n();
        let (a, z) = (self.a, self.zeta);
        let mut grho: Vec<f64> = (0..n).map(|t| -a * self.p[t]).collect();
        let mut gxi: Vec<f64> = (0..n).map(|t| a * self.p[t] * self.varrho).collect();
        let mut f = self.utility(rho, xi);
        let r: Vec<f64> = (0..n).map(|t| self.r_other[t] + a * rho[t]).collect();
        let x: Vec<f64> = (0..n).map(|t| self.x_other[t] + a * xi[t]).collect();
        // each violated constraint contributes -mu/2 g^2, gradient -mu g dg
        let hit = |g: f64, f: &mut f64, apply: &mut dyn FnMut(f64)| {
            if g < 0.0 {
                *f -= 0.5 * mu * g * g;
                apply(-mu * g);
            }
        };
        for t in 0..n {
            hit(self.capacity[t] - x[t], &mut f, &mut |w| gxi[t] -= w * a);
            hit(self.demand - xi[t], &mut f, &mut |w| gxi[t] -= w);
        }
        let ir = self.phi[0] * r[0].ln_1p() - z * x[0];
        hit(ir, &mut f, &mut |w| {
            grho[0] += w * self.phi[0] * a / (1.0 + r[0]);
            gxi[0] -= w * z * a;
        });
        for t in 1..n {
            let dx = x[t] - x[t - 1];
            let ic = self.phi[t] * (r[t] - r[t - 1]) - (1.0 + r[t]) * z * dx;
            hit(ic, &mut f, &mut |w| {
                grho[t] += w * a * (self.phi[t] - z * dx);
                grho[t - 1] -= w * a * self.phi[t];
                gxi[t] -= w * (1.0 + r[t]) * z * a;
                gxi[t - 1] += w * (1.0 + r[t]) * z * a;
            });
            let up = z * dx - self.phi[t - 1] * (r[t].ln_1p() - r[t - 1].ln_1p());
            hit(up, &mut f, &mut |w| {
                grho[t] -= w * self.phi[t - 1] * a / (1.0 + r[t]);
                grho[t - 1] += w * self.phi[t - 1] * a / (1.0 + r[t - 1]);
                gxi[t] += w * z * a;
                gxi[t - 1] -= w * z * a;
            });
            hit(rho[t] - rho[t - 1], &mut f, &mut |w| {
                grho[t] += w;
                grho[t - 1] -= w;
            });
        }
        let tt = self.tt;
        let full = 1.0 + self.r_other[tt] + rho[tt];
        let accept = self.phi[tt] * rho[tt] - full * z * xi[tt];
        hit(accept, &mut f, &mut |w| {
            grho[tt] += w * (self.phi[tt] - z * xi[tt]);
            gxi[tt] -= w * full * z;
        });
        let v: Vec<f64> = rho.iter().map(|r| self.share + a * r).collect();
        let own_ir = self.phi[0] * (v[0] / self.share).ln() - z * x[0];
        hit(own_ir, &mut f, &mut |w| {
            grho[0] += w * self.phi[0] * a / v[0];
            gxi[0] -= w * z * a;
        });
        for t in 1..n {
            hit(xi[t] - xi[t - 1], &mut f, &mut |w| {
                gxi[t] += w;
                gxi[t - 1] -= w;
            });
            let c = z * (x[t] - x[t - 1]);
            let down = self.phi[t] * (v[t] - v[t - 1]) - v[t] * c;
            hit(down, &mut f, &mut |w| {
                grho[t] += w * a * (self.phi[t] - c);
                grho[t - 1] -= w * a * self.phi[t];
                gxi[t] -= w * v[t] * z * a;
                gxi[t - 1] += w * v[t] * z * a;
            });
            let up = c - self.phi[t - 1] * (v[t] / v[t - 1]).ln();
            hit(up, &mut f, &mut |w| {
                grho[t] -= w * self.phi[t - 1] * a / v[t];
                grho[t - 1] += w * self.phi[t - 1] * a / v[t - 1];
                gxi[t] += w * z * a;
                gxi[t - 1] -= w * z * a;
            });
        }
        (f, grho, gxi)
    }

    /// Projected gradient ascent on the penalized objective for each weight.
    fn penalty_search(
        &self,
        mut rho: Vec<f64>,
        mut xi: Vec<f64>,
        cfg: &SolverConfig,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut step = 1.0;
        for &mu in &cfg.penalties {
            let (mut f, mut gr, mut gx) = self.penalized(&rho, &xi, mu);
            for _ in 0..cfg.iters_per_penalty {
                let norm = gr.iter().chain(&gx).fold(0.0f64, |m, v| m.max(v.abs()));
                if norm == 0.0 {
                    break;
                }
                let mut accepted = false;
                while step > 1e-14 {
                    let s = step / norm;
                    let nr: Vec<f64> = rho
                        .iter()
                        .zip(&gr)
                        .map(|(v, g)| (v + s * g).max(0.0))
                        .collect();
                    let nx: Vec<f64> = xi
                        .iter()
                        .zip(&gx)
                        .map(|(v, g)| (v + s * g).max(0.0))
                        .collect();
                    let (nf, ngr, ngx) = self.penalized(&nr, &nx, mu);
                    if nf > f {
                        (rho, xi, f, gr, gx) = (nr, nx, nf, ngr, ngx);
                        step *= 1.5;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    step = 1.0;
                    break;
                }
            }
        }
        (rho, xi)
    }

    /// Cheapest feasible payments for the given requests, or `None` when the
    /// requests admit no feasible payments.
    ///
    /// Adjacent types are linked by `y_lo u_{t-1} <= u_t <= y_hi u_{t-1}`
    /// (the two local truth-telling bounds), both for the aggregate
    /// `u = 1 + R` and for the station's own share `v = share + a rho`. Every
    /// constraint is a lower bound increasing in the other payments, so
    /// alternating an own pass and an aggregate pass from zero reaches the
    /// least feasible schedule.
    pub(crate) fn cheapest_payments(&self, xi: &[f64]) -> Option<Vec<f64>> {
        self.payments(xi, true)
    }

    /// Cheapest payments meeting only the station's own share of the
    /// constraints. When every served station uses these, the aggregate
    /// constraints hold by summation.
    pub(crate) fn own_payments(&self, xi: &[f64]) -> Option<Vec<f64>> {
        self.payments(xi, false)
    }

    fn payments(&self, xi: &[f64], aggregate: bool) -> Option<Vec<f64>> {
        let n = self.n();
        let (a, z) = (self.a, self.zeta);
        let x: Vec<f64> = (0..n).map(|t| self.x_other[t] + a * xi[t]).collect();
        let mut links = Vec::with_capacity(n);
        links.push((1.0, 1.0));
        for t in 1..n {
            let dx = z * (x[t] - x[t - 1]);
            if self.phi[t] - dx <= 1e-9 * self.phi[t] {
                return None;
            }
            let y_lo = self.phi[t] / (self.phi[t] - dx);
            let y_hi = (dx / self.phi[t - 1]).exp();
            if y_lo > y_hi * (1.0 + 1e-12) {
                return None;
            }
            links.push((y_lo, y_hi));
        }
        // work in the own share v = share + a rho; the aggregate is o + v
        let o: Vec<f64> = self.r_other.iter().map(|r| 1.0 + r - self.share).collect();
        let mut low = vec![self.share; n];
        let ir = (z * x[0] / self.phi[0]).exp();
        low[0] = low[0].max(self.share * ir);
        if aggregate {
            low[0] = low[0].max(ir - o[0]);
        }
        let tt = self.tt;
        if xi[tt] > 0.0 {
            let denom = self.phi[tt] - z * xi[tt];
            if denom <= 1e-9 * self.phi[tt] {
                return None;
            }
            low[tt] = low[tt].max(self.share + a * z * xi[tt] * (1.0 + self.r_other[tt]) / denom);
        }
        let mut v = low.clone();
        for _ in 0..200 {
            let mut moved = false;
            for t in (1..n).chain((1..n).rev()) {
                let (y_lo, y_hi) = links[t];
                // v_t >= f(v_{t-1}) and v_{t-1} >= g(v_t), as affine pieces
                // the last f piece is own monotonicity, v_t >= v_{t-1}
                let mut f = vec![(y_lo, 0.0), (0.0, v[t]), (1.0, 0.0)];
                let mut g = vec![(1.0 / y_hi, 0.0), (0.0, v[t - 1])];
                if aggregate {
                    f.push((y_lo, y_lo * o[t - 1] - o[t]));
                    g.push((1.0 / y_hi, o[t] / y_hi - o[t - 1]));
                }
                let mut prev = v[t - 1];
                for &(ag, bg) in &g {
                    for &(af, bf) in &f {
                        let (alpha, beta) = (ag * af, ag * bf + bg);
                        if alpha < 1.0 - 1e-15 {
                            prev = prev.max(beta / (1.0 - alpha));
                        } else if beta > 1e-12 * prev.abs().max(1.0) {
                            return None;
                        }
                    }
                }
                let next = f.iter().fold(v[t], |m, &(af, bf)| m.max(af * prev + bf));
                moved |= prev > v[t - 1] * (1.0 + 1e-13) || next > v[t] * (1.0 + 1e-13);
                v[t - 1] = prev;
                v[t] = next;
            }
            if !moved {
                let rho: Vec<f64> = v.iter().map(|v| ((v - self.share) / a).max(0.0)).collect();
                return rho.iter().all(|r| r.is_finite()).then_some(rho);
            }
        }
        None
    }

    /// Largest `zeta dX` between adjacent types for which some payment ratio
    /// satisfies local truth-telling in both directions.
    fn max_step(&self, t: usize) -> f64 {
        let (hi_phi, lo_phi) = (self.phi[t], self.phi[t - 1]);
        let ok = |c: f64| (c / lo_phi).exp() * (1.0 - c / hi_phi) >= 1.0;
        let (mut lo, mut hi) = (0.0, hi_phi);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo * (1.0 - 1e-6)
    }

    /// Clamps requests into their box, trims any request that would make
    /// local truth-telling impossible, then prices them.
    pub(crate) fn repair(&self, xi: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        let upper = self.upper();
        let mut xi: Vec<f64> = xi
            .iter()
            .zip(&upper)
            .map(|(v, u)| v.clamp(0.0, *u))
            .collect();
        let tt = self.tt;
        xi[tt] = xi[tt].min(self.phi[tt] * (1.0 - 1e-6) / self.zeta.max(f64::MIN_POSITIVE));
        for t in 1..n {
            let x_prev = self.x_other[t - 1] + self.a * xi[t - 1];
            let x_max = x_prev + self.max_step(t) / self.zeta.max(f64::MIN_POSITIVE);
            let limit = (x_max - self.x_other[t]) / self.a;
            // neither own nor aggregate energy may fall between adjacent types
            let floor = ((x_prev - self.x_other[t]) / self.a).max(xi[t - 1]);
            if limit < 0.0 || floor > upper[t] {
                return None;
            }
            xi[t] = xi[t].min(limit).max(floor);
        }
        let rho = self.cheapest_payments(&xi)?;
        (self.max_violation(&rho, &xi) <= FEAS_TOL).then_some((rho, xi))
    }

    fn value(&self, xi: &[f64]) -> Option<(f64, Vec<f64>)> {
        let rho = self.cheapest_payments(xi)?;
        if self.max_violation(&rho, xi) > FEAS_TOL {
            return None;
        }
        Some((self.utility(&rho, xi), rho))
    }

    /// Pattern search over requests, moving single types and suffixes of
    /// types, with payments kept at their cheapest.
    fn polish(&self, mut xi: Vec<f64>) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.n();
        let upper = self.upper();
        let (mut best, mut rho) = self.value(&xi).expect("polish starts feasible");
        let scale = upper.iter().fold(1.0f64, |m, v| m.max(*v));
        let mut step = 0.25 * scale;
        let mut evals = 0;
        while step > 1e-11 * scale && evals < 50_000 {
            let mut moved = false;
            for kind in 0..2 {
                for t in 0..n {
                    for dir in [1.0, -1.0] {
                        let mut cand = xi.clone();
                        let range = if kind == 0 { t..t + 1 } else { t..n };
                        for s in range {
                            cand[s] = (cand[s] + dir * step).clamp(0.0, upper[s]);
                        }
                        evals += 1;
                        if let Some((v, r)) = self.value(&cand) {
                            if v > best + 1e-13 * best.abs().max(1.0) {
                                (best, rho, xi) = (v, r, cand);
                                moved = true;
                            }
                        }
                    }
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        (rho, xi, best)
    }
}

/// Best response of station `cs` to the other stations' current menus at
/// fixed proportions `pi_hat`; `menus[cs]` is ignored except as the start.
pub fn best_response(
    cs: usize,
    menus: &[ContractMenu],
    pi_hat: &AllocationVector,
    model: &SgpTypeModel,
    config: &MarketConfig,
    start: &ContractMenu,
    seed: u64,
) -> Result<BestResponse> {
    if cs >= menus.len() || menus.len() != pi_hat.len() || config.demands.len() != menus.len() {
        return Err(Error::Shape(
            "station index, menus, proportions and demands disagree".into(),
        ));
    }
    start.validate(model.phi_tot())?;
    let prob = Problem::new(
        cs,
        menus,
        pi_hat,
        model,
        config.varrho[cs],
        config.demands[cs],
    );
    let mut own = menus.to_vec();
    own[cs] = start.clone();
    let start_violation = prob.max_violation(&start.rho, &start.xi);
    if prob.a <= 0.0 {
        // nothing the station offers is served, so every menu earns zero
        return Ok(BestResponse {
            menu: start.clone(),
            utility: 0.0,
            feasible: start_violation <= FEAS_TOL,
            max_violation: start_violation,
        });
    }

    let cfg = &config.solver;
    let mut rng = seed::rng(seed, "best-response", &[cs as u64]);
    let mut candidates: Vec<Vec<f64>> = vec![prob.upper(), start.xi.clone()];
    for k in 0..cfg.restarts.max(1) {
        let (mut rho0, mut xi0) = (start.rho.clone(), start.xi.clone());
        if k > 0 {
            for v in rho0.iter_mut().chain(xi0.iter_mut()) {
                let jitter: f64 = rng.random_range(-1.0..=1.0);
                *v = (*v * (1.0 + cfg.perturbation * jitter) + cfg.perturbation * jitter.abs())
                    .max(0.0);
            }
        }
        let (_, xi) = prob.penalty_search(rho0, xi0, cfg);
        candidates.push(xi);
    }

    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for xi in candidates {
        if let Some((rho, xi)) = prob.repair(&xi) {
            let u = prob.utility(&rho, &xi);
            if best.as_ref().is_none_or(|b| u > b.0) {
                best = Some((u, rho, xi));
            }
        }
    }
    let Some((_, _, xi)) = best else {
        return Ok(BestResponse {
            menu: start.clone(),
            utility: prob.utility(&start.rho, &start.xi),
            feasible: start_violation <= FEAS_TOL,
            max_violation: start_violation,
        });
    };
    let (rho, xi, utility) = prob.polish(xi);
    let max_violation = prob.max_violation(&rho, &xi);
    Ok(BestResponse {
        menu: ContractMenu {
            cs_id: start.cs_id.clone(),
            rho,
            xi,
        },
        utility,
        feasible: max_violation <= FEAS_TOL,
        max_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::cs_expected_utility;

    fn single_type(cap: f64) -> SgpTypeModel {
        SgpTypeModel {
            phi_min: 1,
            phi_max: 1,
            p: vec![1.0],
            capacity: vec![cap],
            zeta: 0.022,
            true_type: 1,
        }
    }

    #[test]
    fn zero_capacity_gives_zero_menu() {
        let model = SgpTypeModel {
            capacity: vec![0.0],
            ..single_type(0.0)
        };
        let config = MarketConfig::with_demands(vec![50.0]);
        let start = ContractMenu::zeros("CS01", 1);
        let br = best_response(
            0,
            std::slice::from_ref(&start),
            &AllocationVector::new(vec![1.0]),
            &model,
            &config,
            &start,
            1,
        )
        .unwrap();
        assert_eq!(br.menu.xi, vec![0.0]);
        assert_eq!(br.menu.rho, vec![0.0]);
        assert_eq!(br.utility, 0.0);
        assert!(br.feasible);
    }

    #[test]
    fn single_type_closed_form() {
        let model = single_type(10.0);
        let config = MarketConfig::with_demands(vec![100.0]);
        let start = ContractMenu {
            cs_id: "CS01".into(),
            rho: vec![5.0],
            xi: vec![1.0],
        };
        let pi = AllocationVector::new(vec![1.0]);
        let br = best_response(
            0,
            std::slice::from_ref(&start),
            &pi,
            &model,
            &config,
            &start,
            3,
        )
        .unwrap();
        assert!(br.feasible);
        assert!((br.menu.xi[0] - 10.0).abs() < 1e-9);
        // acceptance binds: rho = zeta xi (1 + rho) / phi
        let rho = 0.22 / 0.78;
        assert!((br.menu.rho[0] - rho).abs() < 1e-9);
        assert!((br.utility - (2200.0 - rho)).abs() < 1e-8);
        let u = cs_expected_utility(0, std::slice::from_ref(&br.menu), &pi, &model, &config);
        assert!((u - br.utility).abs() < 1e-9);
    }

    #[test]
    fn multi_type_response_is_feasible_and_monotone() {
        let model = SgpTypeModel::uniform(10, 500.0, 0.022, 5).unwrap();
        let config = MarketConfig::with_demands(vec![120.0, 80.0]);
        let menus = super::super::initial_menus(&model, &config).unwrap();
        let pi = AllocationVector::new(vec![0.7, 0.9]);
        let br = best_response(1, &menus, &pi, &model, &config, &menus[1], 11).unwrap();
        assert!(br.feasible, "violation {}", br.max_violation);
        assert!(br.menu.rho.windows(2).all(|w| w[1] >= w[0]));
        // the ramp start is not feasible; its repaired form is a candidate
        let prob = Problem::new(1, &menus, &pi, &model, config.varrho[1], config.demands[1]);
        let (rho, xi) = prob.repair(&menus[1].xi).unwrap();
        assert!(br.utility >= prob.utility(&rho, &xi) - 1e-9);
    }

    #[test]
    fn cheapest_payments_bind_participation() {
        let model = SgpTypeModel::uniform(3, 30.0, 0.1, 2).unwrap();
        let prob = Problem::new(
            0,
            &[ContractMenu::zeros("a", 3)],
            &AllocationVector::new(vec![1.0]),
            &model,
            220.0,
            100.0,
        );
        let xi = [5.0, 12.0, 20.0];
        let rho = prob.cheapest_payments(&xi).unwrap();
        assert!(((1.0 + rho[0]).ln() - 0.5).abs() < 1e-9);
        assert!(prob.max_violation(&rho, &xi) <= FEAS_TOL);
        // any cheaper first payment breaks participation
        let mut cheaper = rho.clone();
        cheaper[0] *= 0.999;
        assert!(prob.max_violation(&cheaper, &xi) > 0.0);
    }
}
