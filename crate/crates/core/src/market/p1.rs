//! The provider's allocation problem: choose served proportions `pi` in
//! `[0,1]^I` with `sum pi_i xi_i <= S` to maximize
//! `phi ln(1 + sum pi_i rho_i) - zeta sum pi_i xi_i`.
//!
//! The objective depends on `pi` only through two linear aggregates, so the
//! optimum serves requests in decreasing payment-per-MWh order; that path
//! gives the starting point, and projected gradient ascent then drives the
//! KKT residual below tolerance.

use super::{AllocationVector, ContractMenu, SgpTypeModel};

/// Stop when the projected-gradient residual falls below this.
pub const KKT_TOL: f64 = 1e-8;
const MAX_ITERS: usize = 10_000;

/// Closed-form single-station allocation.
pub fn single_cs(phi: f64, zeta: f64, rho: f64, xi: f64, capacity: f64) -> f64 {
    if xi <= 0.0 {
        // nothing requested: serving is free, so serve fully
        return 1.0;
    }
    if rho <= 0.0 {
        return 0.0;
    }
    let upper = (capacity / xi).min(1.0);
    let stationary = if zeta > 0.0 {
        phi / (zeta * xi) - 1.0 / rho
    } else {
        f64::INFINITY
    };
    stationary.clamp(0.0, upper.max(0.0))
}

fn objective(phi: f64, zeta: f64, rho: &[f64], xi: &[f64], pi: &[f64]) -> f64 {
    let (r, x) = pi
        .iter()
        .zip(rho.iter().zip(xi))
        .fold((0.0, 0.0), |(r, x), (&w, (&a, &b))| (r + w * a, x + w * b));
    phi * r.ln_1p() - zeta * x
}

fn gradient(phi: f64, zeta: f64, rho: &[f64], xi: &[f64], pi: &[f64]) -> Vec<f64> {
    let r: f64 = pi.iter().zip(rho).map(|(w, a)| w * a).sum();
    rho.iter()
        .zip(xi)
        .map(|(&a, &b)| phi * a / (1.0 + r) - zeta * b)
        .collect()
}

/// Euclidean projection onto `[0,1]^I` intersected with `sum w_i y_i <= cap`
/// (bisection on the capacity multiplier).
pub fn project(y: &[f64], w: &[f64], cap: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> {
        y.iter()
            .zip(w)
            .map(|(&v, &wi)| (v - lambda * wi).clamp(0.0, 1.0))
            .collect()
    };
    let load = |p: &[f64]| p.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let free = at(0.0);
    if load(&free) <= cap {
        return free;
    }
    let mut hi = 1.0;
    while load(&at(hi)) > cap {
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if load(&at(mid)) > cap {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    at(hi)
}

/// Infinity norm of `pi - P(pi + grad / scale)`, scaled back to gradient
/// units; zero exactly at KKT points.
pub fn kkt_residual(phi: f64, zeta: f64, rho: &[f64], xi: &[f64], cap: f64, pi: &[f64]) -> f64 {
    let g = gradient(phi, zeta, rho, xi, pi);
    let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let y: Vec<f64> = pi.iter().zip(&g).map(|(p, gi)| p + gi / scale).collect();
    let proj = project(&y, xi, cap);
    pi.iter()
        .zip(&proj)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Optimum along the decreasing payment-per-MWh path. Requests with equal
/// ratios form one group served at a common proportion, so identical
/// requests are treated identically.
fn greedy(phi: f64, zeta: f64, rho: &[f64], xi: &[f64], cap: f64) -> Vec<f64> {
    let n = rho.len();
    let mut pi = vec![0.0; n];
    let mut r = 0.0;
    let mut x = 0.0;
    let mut order = Vec::new();
    for i in 0..n {
        if xi[i] <= 0.0 {
            pi[i] = 1.0;
            r += rho[i];
        } else if rho[i] > 0.0 {
            order.push(i);
        }
    }
    let ratio = |i: usize| rho[i] / xi[i];
    order.sort_by(|&a, &b| ratio(b).total_cmp(&ratio(a)).then(a.cmp(&b)));
    let mut start = 0;
    while start < order.len() {
        let lead = ratio(order[start]);
        let mut end = start + 1;
        while end < order.len() && (lead - ratio(order[end])).abs() <= 1e-12 * lead {
            end += 1;
        }
        let group = &order[start..end];
        let g_rho: f64 = group.iter().map(|&i| rho[i]).sum();
        let g_xi: f64 = group.iter().map(|&i| xi[i]).sum();
        let upper = ((cap - x).max(0.0) / g_xi).min(1.0);
        if upper <= 0.0 {
            break;
        }
        let stationary = if zeta > 0.0 {
            phi / (zeta * g_xi) - (1.0 + r) / g_rho
        } else {
            f64::INFINITY
        };
        let take = stationary.clamp(0.0, upper);
        for &i in group {
            pi[i] = take;
        }
        r += take * g_rho;
        x += take * g_xi;
        if take < upper {
            break;
        }
        start = end;
    }
    pi
}

/// Provider-optimal proportions at type `phi` given the offered menus.
pub fn solve_p1(menus: &[ContractMenu], phi: u32, model: &SgpTypeModel) -> AllocationVector {
    let t = model.index(phi);
    let rho: Vec<f64> = menus.iter().map(|m| m.rho[t]).collect();
    let xi: Vec<f64> = menus.iter().map(|m| m.xi[t]).collect();
    let cap = model.capacity[t];
    let phi = f64::from(phi);
    let zeta = model.zeta;
    if menus.len() == 1 {
        return AllocationVector::new(vec![single_cs(phi, zeta, rho[0], xi[0], cap)]);
    }
    let mut pi = greedy(phi, zeta, &rho, &xi, cap);
    let mut f = objective(phi, zeta, &rho, &xi, &pi);
    let mut step = 1.0;
    for _ in 0..MAX_ITERS {
        if kkt_residual(phi, zeta, &rho, &xi, cap, &pi) <= KKT_TOL {
            break;
        }
        let g = gradient(phi, zeta, &rho, &xi, &pi);
        let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        // Armijo backtracking on the projected step
        let mut improved = false;
        while step > 1e-16 {
            let y: Vec<f64> = pi
                .iter()
                .zip(&g)
                .map(|(p, gi)| p + step * gi / scale)
                .collect();
            let cand = project(&y, &xi, cap);
            let fc = objective(phi, zeta, &rho, &xi, &cand);
            let lin: f64 = cand
                .iter()
                .zip(&pi)
                .zip(&g)
                .map(|((c, p), gi)| (c - p) * gi)
                .sum();
            if fc >= f + 1e-4 * lin && fc >= f {
                pi = cand;
                f = fc;
                improved = true;
                step = (step * 2.0).min(1.0);
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    AllocationVector::new(pi)
}
