//! Exact robust-risk oracles on one-dimensional grids.
//!
//! A [`DiscreteProblem`] is a loss `f` on a finite grid, a base distribution
//! `mu`, and a transport budget `radius` under the cost `c(x, y) =
//! cost_scale * |x - y|`. The worst-case expectation of `f` over the
//! transport ball around `mu` is computed two independent ways:
//!
//! * [`robust_risk_dual`] minimises the one-dimensional dual
//!   `lambda * r + E_mu max_j (f_j - lambda c(x_i, x_j))` by a grid scan plus
//!   golden-section refinement (the dual is convex in `lambda`);
//! * [`robust_risk_primal`] enumerates the slopes where the inner argmax can
//!   switch, locates the exact vertex of the piecewise-linear dual by binary
//!   search, and reconstructs an explicit feasible transport plan whose value
//!   is computed directly from `f` — no shared code path with the first
//!   route beyond the problem data.
//!
//! On a finite grid both routes solve the same linear program, so they must
//! agree to solver precision; the test suites exploit that as a cross
//! oracle. [`gap_delta`] additionally reports how far the worst-case risk
//! sits from the slope-regularised risk `E_mu f + r * Lip(f)` together with
//! a convex-envelope upper bound for that gap, and
//! [`adversarial_vs_regularised`] runs the corresponding experiment for
//! kernel models in R^d: gradient-ascent adversaries against the
//! slope-penalised empirical risk.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{median_bandwidth, BaseKernel, KernelSpec};
use crate::lipbound::{empirical_lipschitz, DomainBox, DualNorm, Model};
use crate::rng;

/// Worst-case-risk instance on a strictly increasing 1-D grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscreteProblem {
    pub points: Vec<f64>,
    pub mu: Vec<f64>,
    pub f: Vec<f64>,
    pub radius: f64,
    pub cost_scale: f64,
}

impl DiscreteProblem {
    pub fn new(
        points: Vec<f64>,
        mu: Vec<f64>,
        f: Vec<f64>,
        radius: f64,
        cost_scale: f64,
    ) -> Result<Self> {
        let p = DiscreteProblem {
            points,
            mu,
            f,
            radius,
            cost_scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "points",
                value: 0.0,
                reason: "grid must be nonempty",
            });
        }
        if self.mu.len() != n {
            return Err(Error::DimensionMismatch {
                context: "grid weights",
                expected: n,
                got: self.mu.len(),
            });
        }
        if self.f.len() != n {
            return Err(Error::DimensionMismatch {
                context: "grid losses",
                expected: n,
                got: self.f.len(),
            });
        }
        for w in self.points.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::DomainViolation(format!(
                    "grid points must strictly increase, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.points.iter().any(|v| !v.is_finite())
            || self.f.iter().any(|v| !v.is_finite())
        {
            return Err(Error::DomainViolation("non-finite grid data".into()));
        }
        let mass: f64 = self.mu.iter().sum();
        if self.mu.iter().any(|&m| m < -1e-15) || (mass - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter {
                name: "mu",
                value: mass,
                reason: "weights must be nonnegative and sum to one",
            });
        }
        if !(self.radius >= 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidParameter {
                name: "radius",
                value: self.radius,
                reason: "must be finite and nonnegative",
            });
        }
        if !(self.cost_scale > 0.0) || !self.cost_scale.is_finite() {
            return Err(Error::InvalidParameter {
                name: "cost_scale",
                value: self.cost_scale,
                reason: "must be finite and positive",
            });
        }
        Ok(())
    }

    pub fn mean_loss(&self) -> f64 {
        self.mu.iter().zip(&self.f).map(|(m, v)| m * v).sum()
    }

    fn cost(&self, i: usize, j: usize) -> f64 {
        self.cost_scale * (self.points[i] - self.points[j]).abs()
    }
}

/// Largest slope of `f` relative to the cost metric. On a 1-D grid the
/// adjacent-pair maximum equals the all-pairs maximum.
pub fn lipschitz_on_grid(points: &[f64], f: &[f64], cost_scale: f64) -> f64 {
    let mut lip = 0.0f64;
    for i in 1..points.len() {
        let dx = cost_scale * (points[i] - points[i - 1]);
        lip = lip.max((f[i] - f[i - 1]).abs() / dx);
    }
    lip
}

/// Greatest convex minorant of `(points, f)`, evaluated back on the grid.
/// The result never exceeds `f` and has nondecreasing slopes.
pub fn convex_envelope_1d(points: &[f64], f: &[f64]) -> Vec<f64> {
    let n = points.len();
    if n <= 2 {
        return f.to_vec();
    }
    // Monotone chain, lower hull: pop while the middle vertex is not
    // strictly below the chord.
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (points[b] - points[a]) * (f[i] - f[a])
                - (f[b] - f[a]) * (points[i] - points[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut env = vec![0.0; n];
    let mut seg = 0;
    for i in 0..n {
        while seg + 1 < hull.len() - 1 && points[hull[seg + 1]] <= points[i] {
            seg += 1;
        }
        let (a, b) = (hull[seg], hull[seg + 1].min(hull[hull.len() - 1]));
        let t = if points[b] > points[a] {
            (points[i] - points[a]) / (points[b] - points[a])
        } else {
            0.0
        };
        env[i] = (f[a] + t * (f[b] - f[a])).min(f[i]);
    }
    env
}

/// Value and minimising multiplier of the dual formulation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DualSolution {
    pub value: f64,
    pub lambda: f64,
}

fn dual_objective(p: &DiscreteProblem, support: &[usize], lam: f64) -> f64 {
    let mut acc = lam * p.radius;
    for &i in support {
        let mut best = f64::NEG_INFINITY;
        for j in 0..p.points.len() {
            best = best.max(p.f[j] - lam * p.cost(i, j));
        }
        acc += p.mu[i] * best;
    }
    acc
}

/// Worst-case expected loss over the transport ball, by minimising the
/// convex dual over the multiplier: coarse scan on `[0, 2 Lip]` followed by
/// golden-section refinement, keeping the best of every evaluation.
pub fn robust_risk_dual(p: &DiscreteProblem) -> Result<DualSolution> {
    p.validate()?;
    let mean = p.mean_loss();
    let lip = lipschitz_on_grid(&p.points, &p.f, p.cost_scale);
    if p.radius == 0.0 || lip == 0.0 {
        // No budget, or constant loss: nothing to gain by moving mass. With
        // zero budget the optimal multiplier is the grid slope itself.
        return Ok(DualSolution {
            value: mean,
            lambda: if p.radius == 0.0 { lip } else { 0.0 },
        });
    }
    let support: Vec<usize> = (0..p.mu.len()).filter(|&i| p.mu[i] > 0.0).collect();
    let hi = 2.0 * lip;
    let scan = 513usize;
    let mut best = (f64::INFINITY, 0.0f64);
    let mut best_k = 0usize;
    for k in 0..scan {
        let lam = hi * k as f64 / (scan - 1) as f64;
        let v = dual_objective(p, &support, lam);
        if v < best.0 {
            best = (v, lam);
            best_k = k;
        }
    }
    // Golden-section refinement on the bracket around the scanned minimum.
    let mut a = hi * best_k.saturating_sub(1) as f64 / (scan - 1) as f64;
    let mut b = hi * (best_k + 1).min(scan - 1) as f64 / (scan - 1) as f64;
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = dual_objective(p, &support, c);
    let mut fd = dual_objective(p, &support, d);
    for _ in 0..200 {
        if fc < best.0 {
            best = (fc, c);
        }
        if fd < best.0 {
            best = (fd, d);
        }
        if (b - a).abs() <= 1e-10 * hi.max(1.0) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = dual_objective(p, &support, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = dual_objective(p, &support, d);
        }
    }
    Ok(DualSolution {
        value: best.0,
        lambda: best.1,
    })
}

/// One cell of a transport plan: `mass` moved from grid index `from` to
/// grid index `to`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanCell {
    pub from: usize,
    pub to: usize,
    pub mass: f64,
}

/// Explicit optimal transport attack: the plan is feasible by construction
/// (row marginals match `mu`, total cost within the budget) and its value is
/// computed directly from the plan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrimalSolution {
    pub value: f64,
    pub lambda: f64,
    pub plan: Vec<PlanCell>,
}

/// Worst-case expected loss by direct construction. Enumerates the finitely
/// many multipliers where a source's best target can change, finds the
/// vertex of the piecewise-linear dual by binary search on adjacent-segment
/// slopes, then splits each source across its tied targets so the budget is
/// met exactly.
pub fn robust_risk_primal(p: &DiscreteProblem) -> Result<PrimalSolution> {
    p.validate()?;
    let n = p.points.len();
    let support: Vec<usize> = (0..n).filter(|&i| p.mu[i] > 0.0).collect();
    let lip = lipschitz_on_grid(&p.points, &p.f, p.cost_scale);
    let scale = p.f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);

    if p.radius == 0.0 || lip == 0.0 {
        let plan: Vec<PlanCell> = support
            .iter()
            .map(|&i| PlanCell {
                from: i,
                to: i,
                mass: p.mu[i],
            })
            .collect();
        return Ok(PrimalSolution {
            value: p.mean_loss(),
            lambda: if p.radius == 0.0 { lip } else { 0.0 },
            plan,
        });
    }

    // Candidate multipliers: all slopes where some source is indifferent
    // between two targets, clipped to [0, lip]; the dual vertex is one of
    // them (or an endpoint).
    let mut cands: Vec<f64> = vec![0.0, lip];
    for &i in &support {
        for j in 0..n {
            for k in (j + 1)..n {
                let dc = p.cost(i, j) - p.cost(i, k);
                if dc.abs() > 1e-15 {
                    let lam = (p.f[j] - p.f[k]) / dc;
                    if lam > 0.0 && lam < lip {
                        cands.push(lam);
                    }
                }
            }
        }
    }
    cands.sort_by(|a, b| a.total_cmp(b));
    cands.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));

    // The dual is linear between consecutive candidates with nondecreasing
    // slopes; binary search for the first nonnegative segment slope.
    let seg_slope = |k: usize| -> f64 {
        let (x0, x1) = (cands[k], cands[k + 1]);
        (dual_objective(p, &support, x1) - dual_objective(p, &support, x0)) / (x1 - x0)
    };
    let lambda = if cands.len() == 1 {
        cands[0]
    } else {
        let (mut lo, mut hi) = (0usize, cands.len() - 1);
        // Invariant: segment slope before `lo` is negative or lo == 0, and
        // slope at/after `hi` is nonnegative or hi == last.
        while lo < hi {
            let mid = (lo + hi) / 2;
            if seg_slope(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        cands[lo]
    };

    // Tied best targets per source at the vertex.
    let tie_tol = 1e-12 * scale.max(lambda * p.cost(0, n - 1)).max(1.0);
    let mut plan: Vec<PlanCell> = Vec::new();
    let mut cost_used = 0.0f64;
    let mut ties: Vec<(usize, usize, usize)> = Vec::new(); // (source, near, far)
    for &i in &support {
        let mut best = f64::NEG_INFINITY;
        for j in 0..n {
            best = best.max(p.f[j] - lambda * p.cost(i, j));
        }
        let tied: Vec<usize> = (0..n)
            .filter(|&j| p.f[j] - lambda * p.cost(i, j) >= best - tie_tol)
            .collect();
        let near = *tied
            .iter()
            .min_by(|&&a, &&b| p.cost(i, a).total_cmp(&p.cost(i, b)))
            .expect("nonempty tie set");
        let far = *tied
            .iter()
            .max_by(|&&a, &&b| p.cost(i, a).total_cmp(&p.cost(i, b)))
            .expect("nonempty tie set");
        plan.push(PlanCell {
            from: i,
            to: near,
            mass: p.mu[i],
        });
        cost_used += p.mu[i] * p.cost(i, near);
        if far != near {
            ties.push((i, near, far));
        }
    }

    if lambda > 1e-12 {
        // A positive multiplier means the budget binds: raise the plan cost
        // to exactly the radius by shifting mass from near to far targets
        // inside the tie sets.
        let mut need = p.radius - cost_used;
        if need < -1e-9 * p.radius.max(1.0) {
            return Err(Error::DomainViolation(format!(
                "plan construction overshot the budget by {}",
                -need
            )));
        }
        for (i, near, far) in ties.iter().copied() {
            if need <= 1e-15 {
                break;
            }
            let per_mass = p.cost(i, far) - p.cost(i, near);
            let cell = plan
                .iter_mut()
                .find(|c| c.from == i && c.to == near)
                .expect("plan cell exists");
            let movable = cell.mass;
            let shift_mass = (need / per_mass).min(movable);
            cell.mass -= shift_mass;
            plan.push(PlanCell {
                from: i,
                to: far,
                mass: shift_mass,
            });
            need -= shift_mass * per_mass;
        }
        if need > 1e-9 * p.radius.max(1.0) {
            return Err(Error::DomainViolation(format!(
                "could not exhaust the budget: {} left over",
                need
            )));
        }
    } else if cost_used > p.radius + 1e-9 * p.radius.max(1.0) {
        return Err(Error::DomainViolation(format!(
            "zero-multiplier plan exceeds the budget: cost {} > radius {}",
            cost_used, p.radius
        )));
    }

    plan.retain(|c| c.mass > 1e-15);

    // Feasibility checks: marginals and budget.
    let mut row = vec![0.0f64; n];
    let mut total_cost = 0.0f64;
    let mut value = 0.0f64;
    for c in &plan {
        row[c.from] += c.mass;
        total_cost += c.mass * p.cost(c.from, c.to);
        value += c.mass * p.f[c.to];
    }
    for &i in &support {
        if (row[i] - p.mu[i]).abs() > 1e-12 * p.mu[i].max(1.0) {
            return Err(Error::DomainViolation(format!(
                "plan marginal mismatch at {i}: {} vs {}",
                row[i], p.mu[i]
            )));
        }
    }
    if total_cost > p.radius + 1e-9 * p.radius.max(1.0) {
        return Err(Error::DomainViolation(format!(
            "plan cost {} exceeds radius {}",
            total_cost, p.radius
        )));
    }

    Ok(PrimalSolution {
        value,
        lambda,
        plan,
    })
}

/// How worst-case risk relates to slope-regularised risk on one instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapReport {
    /// Worst-case expected loss over the transport ball (dual route).
    pub robust: f64,
    /// `E_mu f + radius * Lip(f)`.
    pub regularised: f64,
    /// `regularised - robust`; nonnegative for every instance.
    pub delta: f64,
    /// Convex-envelope upper bound for `delta`.
    pub delta_bound: f64,
    pub lip: f64,
    pub lip_envelope: f64,
    /// `E_mu (f - envelope)`.
    pub envelope_gap_integral: f64,
    /// Radius below which the envelope correction term stays inactive.
    pub rho_max: f64,
}

/// Evaluate the worst-case / regularised comparison and its envelope bound.
pub fn gap_delta(p: &DiscreteProblem) -> Result<GapReport> {
    let dual = robust_risk_dual(p)?;
    let lip = lipschitz_on_grid(&p.points, &p.f, p.cost_scale);
    let env = convex_envelope_1d(&p.points, &p.f);
    let lip_env = lipschitz_on_grid(&p.points, &env, p.cost_scale);
    let mean = p.mean_loss();
    let mean_env: f64 = p.mu.iter().zip(&env).map(|(m, v)| m * v).sum();
    let envelope_gap_integral = (mean - mean_env).max(0.0);
    let regularised = mean + p.radius * lip;
    let delta = regularised - dual.value;
    let bracket = (p.radius * lip_env - envelope_gap_integral).max(0.0);
    let delta_bound = p.radius * lip - bracket;
    let rho_max = if lip_env > 0.0 {
        envelope_gap_integral / lip_env
    } else {
        f64::INFINITY
    };
    Ok(GapReport {
        robust: dual.value,
        regularised,
        delta,
        delta_bound,
        lip,
        lip_envelope: lip_env,
        envelope_gap_integral,
        rho_max,
    })
}

// ---------------------------------------------------------------------------
// Instance generators with known structure.
// ---------------------------------------------------------------------------

fn random_grid<R: Rng>(r: &mut R, n: usize, span: f64) -> Vec<f64> {
    let mut pts = Vec::with_capacity(n);
    let mut x = 0.0;
    for _ in 0..n {
        x += r.gen_range(0.2..1.0);
        pts.push(x);
    }
    let width = pts[n - 1] - pts[0];
    pts.iter().map(|v| (v - pts[0]) / width * span).collect()
}

fn random_atoms<R: Rng>(r: &mut R, n: usize, k: usize) -> Vec<f64> {
    let mut mu = vec![0.0; n];
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let pick = r.gen_range(i..n);
        idx.swap(i, pick);
    }
    let mut total = 0.0;
    for &i in idx.iter().take(k.min(n)) {
        let w = r.gen_range(0.1..1.0);
        mu[i] = w;
        total += w;
    }
    for w in &mut mu {
        *w /= total;
    }
    mu
}

/// Two-piece convex losses arranged so the worst-case risk equals the
/// regularised risk exactly: the mass sits on the steeper arm with enough
/// grid left toward its endpoint to absorb the whole budget.
pub fn gen_convex_equality(seed: u64) -> DiscreteProblem {
    let mut r = rng::stream(seed, 0xC0);
    let n = r.gen_range(12..=48);
    let points = random_grid(&mut r, n, 1.0);
    let cost_scale = r.gen_range(0.5..2.0);
    let kink = r.gen_range(1..n - 1);
    let steep = r.gen_range(0.5..3.0);
    let shallow = steep * r.gen_range(0.0..1.0);
    let flip = r.gen_bool(0.5);
    // V-shape: shallow arm on one side of the kink, steep on the other.
    let mut f = vec![0.0; n];
    for i in 0..n {
        let d = points[i] - points[kink];
        f[i] = if flip {
            if d <= 0.0 {
                steep * -d
            } else {
                shallow * d
            }
        } else if d <= 0.0 {
            shallow * -d
        } else {
            steep * d
        };
    }
    // Mass on the steep arm (kink included), away from its endpoint.
    let arm: Vec<usize> = if flip {
        (0..=kink).collect()
    } else {
        (kink..n).collect()
    };
    let endpoint = if flip { 0 } else { n - 1 };
    let interior: Vec<usize> = arm.iter().copied().filter(|&i| i != endpoint).collect();
    let k = r.gen_range(1..=interior.len().min(5));
    let mut mu = vec![0.0; n];
    let mut order = interior.clone();
    for i in 0..k {
        let pick = r.gen_range(i..order.len());
        order.swap(i, pick);
    }
    let mut total = 0.0;
    for &i in order.iter().take(k) {
        let w = r.gen_range(0.1..1.0);
        mu[i] = w;
        total += w;
    }
    for w in &mut mu {
        *w /= total;
    }
    // Budget within the capacity toward the steep endpoint.
    let capacity: f64 = (0..n)
        .map(|i| mu[i] * cost_scale * (points[endpoint] - points[i]).abs())
        .sum();
    let radius = r.gen_range(0.05..0.95) * capacity;
    DiscreteProblem::new(points, mu, f, radius, cost_scale).expect("generated instance")
}

/// A tent with zero envelope and all mass at the peak: the worst-case risk
/// equals the peak value, so the gap hits `radius * Lip` — the envelope
/// bound — exactly.
pub fn gen_tent(seed: u64) -> DiscreteProblem {
    let mut r = rng::stream(seed, 0xAB);
    let n = r.gen_range(9..=33);
    let points = random_grid(&mut r, n, 1.0);
    let cost_scale = r.gen_range(0.5..2.0);
    let peak = r.gen_range(2..n - 2);
    let slope = r.gen_range(0.5..3.0);
    let reach = r.gen_range(0.3..0.8)
        * (points[peak] - points[0]).min(points[n - 1] - points[peak]);
    let height = slope * reach * cost_scale;
    let mut f = vec![0.0; n];
    for i in 0..n {
        f[i] = (height - slope * cost_scale * (points[i] - points[peak]).abs()).max(0.0);
    }
    let mut mu = vec![0.0; n];
    mu[peak] = 1.0;
    let radius = r.gen_range(0.05..1.0);
    DiscreteProblem::new(points, mu, f, radius, cost_scale).expect("generated instance")
}

/// Wiggly nonconvex losses with the budget kept small enough that the
/// envelope correction term stays inactive, so the gap bound reduces to
/// `radius * Lip` and provably dominates the observed gap.
pub fn gen_gap_law(seed: u64) -> DiscreteProblem {
    let mut r = rng::stream(seed, 0x6A);
    let n = r.gen_range(16..=64);
    let points = random_grid(&mut r, n, 1.0);
    let cost_scale = r.gen_range(0.5..2.0);
    let mut f = vec![0.0; n];
    let mut v = r.gen_range(-0.5..0.5);
    for fi in f.iter_mut() {
        v += r.gen_range(-0.5..0.5);
        *fi = v;
    }
    let n_atoms = r.gen_range(2..=6);
    let mut mu = random_atoms(&mut r, n, n_atoms);
    // Force an envelope gap at one interior atom.
    let atoms: Vec<usize> = (0..n).filter(|&i| mu[i] > 0.0).collect();
    let bump = atoms[atoms.len() / 2].clamp(1, n - 2);
    if mu[bump] == 0.0 {
        mu[bump] = 0.3;
        let total: f64 = mu.iter().sum();
        for w in &mut mu {
            *w /= total;
        }
    }
    let range = f.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
        - f.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    f[bump] += 1.0 + 2.0 * range;
    let env = convex_envelope_1d(&points, &f);
    let gap_int: f64 = mu
        .iter()
        .zip(f.iter().zip(&env))
        .map(|(m, (fv, ev))| m * (fv - ev))
        .sum();
    let lip_env = lipschitz_on_grid(&points, &env, cost_scale);
    let cap = if lip_env > 1e-9 {
        0.9 * gap_int / lip_env
    } else {
        0.5
    };
    let radius = r.gen_range(0.05..1.0) * cap.min(0.5);
    DiscreteProblem::new(points, mu, f, radius, cost_scale).expect("generated instance")
}

/// Unrestricted random instances for the dual/primal cross oracle: any
/// losses, up to five atoms, grids up to 64 points.
pub fn gen_random(seed: u64) -> DiscreteProblem {
    let mut r = rng::stream(seed, 0x7E);
    let n = r.gen_range(8..=64);
    let span = r.gen_range(0.5..2.0);
    let points = random_grid(&mut r, n, span);
    let cost_scale = r.gen_range(0.5..2.0);
    let f: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let n_atoms = r.gen_range(1..=5);
    let mu = random_atoms(&mut r, n, n_atoms);
    let max_cost = cost_scale * (points[n - 1] - points[0]);
    let radius = r.gen_range(0.0..1.5) * max_cost;
    DiscreteProblem::new(points, mu, f, radius, cost_scale).expect("generated instance")
}

// ---------------------------------------------------------------------------
// Adversarial vs regularised risk for kernel models in R^d.
// ---------------------------------------------------------------------------

/// One model in the scatter experiment.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScatterRow {
    pub model_id: usize,
    /// Mean over anchors of the ascent maximum of `f` within the ball.
    pub adversarial: f64,
    /// Mean of `f` plus `delta` times the empirical slope.
    pub regularised: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScatterResult {
    pub rows: Vec<ScatterRow>,
    /// Fraction of rows with `adversarial <= regularised + 1e-6`.
    pub frac_ok: f64,
    pub pearson: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScatterConfig {
    pub n_models: usize,
    /// Perturbation budget; the ball norm is the dual of `norm`.
    pub delta: f64,
    /// Gradient norm used for the slope term (`L2` pairs with a Euclidean
    /// ball, `L1` with a sup-norm ball).
    pub norm: DualNorm,
    pub steps: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        ScatterConfig {
            n_models: 100,
            delta: 0.1,
            norm: DualNorm::L2,
            steps: 60,
            restarts: 10,
            seed: 0,
        }
    }
}

/// Gradient ascent on the raw model value inside a perturbation ball.
fn ball_ascent(model: &Model, x0: &[f64], delta: f64, norm: DualNorm, steps: usize) -> Result<f64> {
    let d = x0.len();
    let mut best = model.value(x0)?;
    if delta <= 0.0 || steps == 0 {
        return Ok(best);
    }
    let step = 2.0 * delta / steps as f64;
    let mut pert = vec![0.0f64; d];
    for _ in 0..steps {
        let x: Vec<f64> = x0.iter().zip(&pert).map(|(a, b)| a + b).collect();
        let g = model.grad(&x)?;
        match norm {
            // Euclidean ball.
            DualNorm::L2 => {
                let gn = g.norm();
                if gn < 1e-14 {
                    break;
                }
                for j in 0..d {
                    pert[j] += step * g[j] / gn;
                }
                let pn: f64 = pert.iter().map(|v| v * v).sum::<f64>().sqrt();
                if pn > delta {
                    for v in &mut pert {
                        *v *= delta / pn;
                    }
                }
            }
            // Sup-norm ball.
            DualNorm::L1 => {
                for j in 0..d {
                    pert[j] = (pert[j] + step * g[j].signum()).clamp(-delta, delta);
                }
            }
        }
        let x: Vec<f64> = x0.iter().zip(&pert).map(|(a, b)| a + b).collect();
        best = best.max(model.value(&x)?);
    }
    Ok(best)
}

/// Pearson correlation of two equal-length samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let (dx, dy) = (xs[i] - mx, ys[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// For a family of random kernel models over the given points: compare the
/// mean ascent maximum within the perturbation ball against the mean value
/// plus `delta` times the empirical slope. Models are drawn with uniform
/// coefficients on the data anchors and a median-distance bandwidth.
pub fn adversarial_vs_regularised(
    points: &[Vec<f64>],
    cfg: &ScatterConfig,
) -> Result<ScatterResult> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "points",
            value: points.len() as f64,
            reason: "need at least two anchor points",
        });
    }
    let dim = points[0].len();
    let sigma = median_bandwidth(points)?.max(1e-6);
    let kernel = KernelSpec::Product {
        base: BaseKernel::Gaussian { sigma },
        dim,
    };
    let domain = DomainBox::from_points(points, cfg.delta)?;
    let rows: Vec<ScatterRow> = (0..cfg.n_models)
        .into_par_iter()
        .map(|id| -> Result<ScatterRow> {
            let mut r = rng::stream(cfg.seed, 1000 + id as u64);
            let coeffs = DVector::from_fn(points.len(), |_, _| r.gen_range(-2.0..2.0));
            let model = Model::new(kernel, points.to_vec(), coeffs, true)?;
            let mut adv = 0.0;
            let mut mean = 0.0;
            for x0 in points {
                adv += ball_ascent(&model, x0, cfg.delta, cfg.norm, cfg.steps)?;
                mean += model.value(x0)?;
            }
            adv /= points.len() as f64;
            mean /= points.len() as f64;
            let (lip, _) =
                empirical_lipschitz(&model, &domain, cfg.norm, cfg.restarts, cfg.seed ^ id as u64)?;
            Ok(ScatterRow {
                model_id: id,
                adversarial: adv,
                regularised: mean + cfg.delta * lip,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.adversarial).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.regularised).collect();
    let ok = rows
        .iter()
        .filter(|r| r.adversarial <= r.regularised + 1e-6)
        .count();
    Ok(ScatterResult {
        frac_ok: ok as f64 / rows.len() as f64,
        pearson: pearson(&xs, &ys),
        rows,
    })
}
