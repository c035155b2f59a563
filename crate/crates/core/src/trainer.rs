//! Slope-constrained kernel training.
//!
//! Models are parametrised in a landmark feature space: with landmark Gram
//! `K` and `P = (K^+)^(1/2)`, the feature map is `phi(x) = P k(L, x)` and a
//! weight vector `w` corresponds to the kernel expansion with coefficients
//! `gamma = P w`, so `|w|^2` dominates the RKHS norm of the model. Training
//! minimises a convex data term plus ridge penalty subject to a slope budget
//! `L`, enforced through an exact penalty on a witness-based surrogate of the
//! model's worst-case gradient norm. The surrogate tightens as witnesses are
//! added, one per outer iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::attacks::Norm;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{self, leading_eigenpair, pinv_sqrt_psd};
use crate::lipbound::{
    empirical_lipschitz, product_pair_matrices, witness_projector, DiagMode, DomainBox, DualNorm,
    Model,
};
use crate::rng;

pub use crate::lipbound::greedy_witness;

const ARMIJO_C: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const MAX_HALVINGS: usize = 50;
/// Relative slack when deciding whether the surrogate constraint is met.
const CONSTRAINT_SLACK: f64 = 1e-3;
/// Training stops once the measured slope is within this factor of budget.
const STOP_FACTOR: f64 = 1.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    Hinge,
    CrammerSinger,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    /// Largest gradient norm over the current witness set.
    BruteForce,
    /// Largest eigenvalue of the projected gradient factor.
    HolisticNystrom,
    /// Largest eigenvalue of the coordinate-block gradient Gram with
    /// witness-projected diagonal. Product kernels and the Euclidean slope
    /// only.
    CoordNystrom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessMode {
    /// Sample the new witness uniformly from the domain box.
    Random,
    /// Place the new witness at the point of steepest measured slope.
    Greedy,
}

/// `max(0, 1 - y s)` for one real score and a label in `{0, 1}`, or the
/// multiclass margin loss `max(0, max_{c != y} (1 + s_c - s_y))`.
pub fn loss_value(loss: Loss, scores: &[f64], label: usize) -> Result<f64> {
    match loss {
        Loss::Hinge => {
            if scores.len() != 1 {
                return Err(Error::DimensionMismatch {
                    context: "hinge scores",
                    expected: 1,
                    got: scores.len(),
                });
            }
            if label > 1 {
                return Err(Error::InvalidParameter {
                    name: "label",
                    value: label as f64,
                    reason: "hinge labels are 0 or 1",
                });
            }
            let y = if label == 1 { 1.0 } else { -1.0 };
            Ok((1.0 - y * scores[0]).max(0.0))
        }
        Loss::CrammerSinger => {
            if scores.len() < 2 {
                return Err(Error::DimensionMismatch {
                    context: "margin scores",
                    expected: 2,
                    got: scores.len(),
                });
            }
            if label >= scores.len() {
                return Err(Error::InvalidParameter {
                    name: "label",
                    value: label as f64,
                    reason: "label must index a score",
                });
            }
            let mut worst = f64::NEG_INFINITY;
            for (c, s) in scores.iter().enumerate() {
                if c != label {
                    worst = worst.max(1.0 + s - scores[label]);
                }
            }
            Ok(worst.max(0.0))
        }
    }
}

/// Feature map onto a fixed landmark set: `phi(x) = (K^+)^(1/2) k(L, x)`.
/// Inner products of features reproduce the kernel exactly on the landmarks
/// and approximate it elsewhere, improving as landmarks are added.
#[derive(Clone, Debug)]
pub struct LandmarkMap {
    kernel: KernelSpec,
    landmarks: Vec<Vec<f64>>,
    projector: DMatrix<f64>,
}

impl LandmarkMap {
    pub fn new(kernel: KernelSpec, landmarks: Vec<Vec<f64>>) -> Result<Self> {
        if landmarks.is_empty() {
            return Err(Error::InvalidParameter {
                name: "landmarks",
                value: 0.0,
                reason: "need at least one landmark",
            });
        }
        let gram = kernel.gram(&landmarks, &landmarks)?;
        let projector = pinv_sqrt_psd(&gram, linalg::PINV_REL_TOL)?;
        Ok(Self {
            kernel,
            landmarks,
            projector,
        })
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn landmarks(&self) -> &[Vec<f64>] {
        &self.landmarks
    }

    /// `(K^+)^(1/2)` of the landmark Gram.
    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    pub fn features(&self, x: &[f64]) -> Result<DVector<f64>> {
        let kx = self
            .landmarks
            .iter()
            .map(|l| self.kernel.eval(l, x))
            .collect::<Result<Vec<f64>>>()?;
        Ok(&self.projector * DVector::from_vec(kx))
    }

    /// Row `i` holds `features(points[i])`.
    pub fn feature_matrix(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(points.len(), self.len());
        for (i, p) in points.iter().enumerate() {
            out.row_mut(i).copy_from(&self.features(p)?.transpose());
        }
        Ok(out)
    }

    /// Kernel-expansion coefficients of the model with weights `w`.
    pub fn coefficients(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.projector * w
    }

    pub fn model(&self, w: &DVector<f64>) -> Result<Model> {
        Model::new(
            self.kernel,
            self.landmarks.clone(),
            self.coefficients(w),
            false,
        )
    }
}

/// One-off convenience for [`LandmarkMap::features`]; recomputes the
/// projector on every call, so reuse a map for repeated evaluation.
pub fn landmark_features(
    kernel: &KernelSpec,
    landmarks: &[Vec<f64>],
    x: &[f64],
) -> Result<DVector<f64>> {
    LandmarkMap::new(*kernel, landmarks.to_vec())?.features(x)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Slope budget `L`.
    pub lip_budget: f64,
    /// Ridge weight on the feature-space weights.
    pub reg_weight: f64,
    pub loss: Loss,
    pub constraint_mode: ConstraintMode,
    pub witness_mode: WitnessMode,
    /// Input norm the budget refers to; the surrogate bounds the dual norm
    /// of the gradient.
    pub lip_norm: Norm,
    pub outer_iters: usize,
    /// Subgradient steps per penalty stage.
    pub inner_iters: usize,
    /// Relative objective decrease below which a stage stops early.
    pub inner_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// `0` picks `min(n, 256)`.
    pub n_landmarks: usize,
    pub initial_witnesses: usize,
    /// Witness sampling region; derived from the training points when absent.
    pub domain: Option<DomainBox>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(lip_budget: f64) -> Self {
        Self {
            lip_budget,
            reg_weight: 1e-3,
            loss: Loss::Hinge,
            constraint_mode: ConstraintMode::HolisticNystrom,
            witness_mode: WitnessMode::Random,
            lip_norm: Norm::L2,
            outer_iters: 25,
            inner_iters: 200,
            inner_tol: 1e-9,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e8,
            n_landmarks: 0,
            initial_witnesses: 15,
            domain: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lip_budget > 0.0) || !self.lip_budget.is_finite() {
            return Err(Error::InvalidParameter {
                name: "lip_budget",
                value: self.lip_budget,
                reason: "slope budget must be finite and positive",
            });
        }
        if !(self.reg_weight >= 0.0) || !self.reg_weight.is_finite() {
            return Err(Error::InvalidParameter {
                name: "reg_weight",
                value: self.reg_weight,
                reason: "must be finite and nonnegative",
            });
        }
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "iterations",
                value: 0.0,
                reason: "need at least one outer and one inner iteration",
            });
        }
        if !(self.inner_tol >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "inner_tol",
                value: self.inner_tol,
                reason: "must be nonnegative",
            });
        }
        if !(self.penalty_init > 0.0) || !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidParameter {
                name: "penalty",
                value: self.penalty_init,
                reason: "penalty starts positive and grows by a factor > 1",
            });
        }
        if !(self.penalty_max >= self.penalty_init) {
            return Err(Error::InvalidParameter {
                name: "penalty_max",
                value: self.penalty_max,
                reason: "cap must be at least the initial penalty",
            });
        }
        if self.initial_witnesses == 0 {
            return Err(Error::InvalidParameter {
                name: "initial_witnesses",
                value: 0.0,
                reason: "need at least one witness",
            });
        }
        if self.constraint_mode == ConstraintMode::CoordNystrom && self.lip_norm == Norm::Linf {
            return Err(Error::Unsupported(
                "the coordinate surrogate bounds the Euclidean slope only",
            ));
        }
        Ok(())
    }

    fn budget(&self) -> f64 {
        match self.lip_norm {
            Norm::L2 => self.lip_budget * self.lip_budget,
            Norm::Linf => self.lip_budget,
        }
    }

    fn dual(&self) -> DualNorm {
        match self.lip_norm {
            Norm::L2 => DualNorm::L2,
            Norm::Linf => DualNorm::L1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OuterRow {
    pub iteration: usize,
    /// Data term plus ridge, without the penalty.
    pub objective: f64,
    /// Surrogate value: squared slope for the Euclidean budget, plain slope
    /// for the box budget.
    pub constraint_value: f64,
    /// Measured slope from projected gradient ascent over the domain.
    pub estimated_lip: f64,
    pub witness_count: usize,
    pub penalty_weight: f64,
    /// Penalised objective after each accepted step of the final stage.
    pub inner_objectives: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub solver: String,
    pub converged: bool,
    pub rows: Vec<OuterRow>,
    pub config: TrainConfig,
}

/// Witness-based evaluators of the slope surrogate, fixed for one outer
/// iteration. `grads[s]` stacks `grad_y k(x_a, w_s)` over landmarks `a` as
/// columns, so the model gradient at witness `s` is `grads[s] * gamma`.
enum ConstraintEngine {
    Brute {
        grads: Vec<DMatrix<f64>>,
    },
    Holistic {
        projector: DMatrix<f64>,
        grads: Vec<DMatrix<f64>>,
    },
    Coord {
        blocks: Vec<DMatrix<f64>>,
        dim: usize,
    },
}

fn witness_gradients(
    kernel: &KernelSpec,
    landmarks: &[Vec<f64>],
    witnesses: &[Vec<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    let d = kernel.dim();
    witnesses
        .iter()
        .map(|w| {
            let mut g = DMatrix::zeros(d, landmarks.len());
            for (a, anchor) in landmarks.iter().enumerate() {
                g.column_mut(a).copy_from(&kernel.grad_y(anchor, w)?);
            }
            Ok(g)
        })
        .collect()
}

fn build_engine(
    mode: ConstraintMode,
    kernel: &KernelSpec,
    landmarks: &[Vec<f64>],
    witnesses: &[Vec<f64>],
) -> Result<ConstraintEngine> {
    match mode {
        ConstraintMode::BruteForce => Ok(ConstraintEngine::Brute {
            grads: witness_gradients(kernel, landmarks, witnesses)?,
        }),
        ConstraintMode::HolisticNystrom => Ok(ConstraintEngine::Holistic {
            projector: witness_projector(kernel, witnesses)?,
            grads: witness_gradients(kernel, landmarks, witnesses)?,
        }),
        ConstraintMode::CoordNystrom => {
            let base = match *kernel {
                KernelSpec::Product { base, .. } => base,
                KernelSpec::Inverse { .. } => {
                    return Err(Error::Unsupported(
                        "the coordinate surrogate needs a coordinate-wise product kernel",
                    ))
                }
            };
            Ok(ConstraintEngine::Coord {
                blocks: product_pair_matrices(base, landmarks, witnesses, DiagMode::Projected)?,
                dim: kernel.dim(),
            })
        }
    }
}

impl ConstraintEngine {
    /// Surrogate value and the gradient of its active branch with respect to
    /// the expansion coefficients.
    fn eval(&self, gamma: &DVector<f64>, norm: Norm) -> Result<(f64, DVector<f64>)> {
        match self {
            ConstraintEngine::Brute { grads } => {
                let mut best = f64::NEG_INFINITY;
                let mut grad = DVector::zeros(gamma.len());
                for g in grads {
                    let slope = g * gamma;
                    match norm {
                        Norm::L2 => {
                            let v = slope.norm_squared();
                            if v > best {
                                best = v;
                                grad = 2.0 * g.transpose() * slope;
                            }
                        }
                        Norm::Linf => {
                            let v = slope.iter().map(|s| s.abs()).sum::<f64>();
                            if v > best {
                                best = v;
                                grad = g.transpose() * slope.map(signum_or_zero);
                            }
                        }
                    }
                }
                Ok((best.max(0.0), grad))
            }
            ConstraintEngine::Holistic { projector, grads } => {
                let (n, d) = (grads.len(), grads[0].nrows());
                let mut j = DMatrix::zeros(n, d);
                for (s, g) in grads.iter().enumerate() {
                    j.row_mut(s).copy_from(&(g * gamma).transpose());
                }
                let f = projector * j;
                let (value, u) = match norm {
                    Norm::L2 => {
                        let (lam, u) = leading_eigenpair(&(f.transpose() * &f))?;
                        (lam.max(0.0), u)
                    }
                    Norm::Linf => {
                        let (val, pair) = crate::lipbound::linf_gradient_detail(&f, 3, 0x11F)?;
                        match pair {
                            Some((u, v)) => {
                                // d/dgamma (v' P T gamma) with T[s, a] = u' grads[s][:, a]
                                let q = projector * v;
                                let mut t = DVector::zeros(gamma.len());
                                for (s, g) in grads.iter().enumerate() {
                                    t += q[s] * g.transpose() * &u;
                                }
                                return Ok((val, t));
                            }
                            None => return Ok((0.0, DVector::zeros(gamma.len()))),
                        }
                    }
                };
                // c(gamma) = |P T gamma|^2 at the fixed top direction u.
                let mut t = DMatrix::zeros(n, gamma.len());
                for (s, g) in grads.iter().enumerate() {
                    t.row_mut(s).copy_from(&(g.transpose() * &u).transpose());
                }
                let z = projector * (&t * gamma);
                let grad = 2.0 * t.transpose() * (projector * z);
                Ok((value, grad))
            }
            ConstraintEngine::Coord { blocks, dim } => {
                let d = *dim;
                let mut z = Vec::with_capacity(d * d);
                for b in blocks {
                    z.push(b * gamma);
                }
                let mut m = DMatrix::zeros(d, d);
                for i in 0..d {
                    for jj in i..d {
                        let v = gamma.dot(&z[i * d + jj]);
                        m[(i, jj)] = v;
                        m[(jj, i)] = v;
                    }
                }
                let (lam, u) = leading_eigenpair(&m)?;
                let mut grad = DVector::zeros(gamma.len());
                for i in 0..d {
                    for jj in 0..d {
                        grad += 2.0 * u[i] * u[jj] * &z[i * d + jj];
                    }
                }
                Ok((lam.max(0.0), grad))
            }
        }
    }
}

fn signum_or_zero(s: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else if s < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Inner problem seen by the penalty descent: unpenalised objective,
/// surrogate value, penalty value, and a subgradient of the total.
trait InnerProblem {
    /// `(objective, constraint_value, penalty_value)`.
    fn eval(&self, w: &DVector<f64>) -> Result<(f64, f64, f64)>;
    fn subgrad(&self, w: &DVector<f64>, rho: f64) -> Result<DVector<f64>>;
}

fn descend<P: InnerProblem>(
    problem: &P,
    w: &mut DVector<f64>,
    rho: f64,
    iters: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    let (o, _, p) = problem.eval(w)?;
    let mut cur = o + rho * p;
    let mut trace = vec![cur];
    for _ in 0..iters {
        let g = problem.subgrad(w, rho)?;
        let gn = g.norm();
        if gn <= 1e-14 * cur.abs().max(1.0) {
            break;
        }
        let mut step = (1.0 + w.norm()) / (1.0 + gn);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &*w - &g * step;
            let (o2, _, p2) = problem.eval(&cand)?;
            let f2 = o2 + rho * p2;
            if f2.is_finite() && f2 <= cur - ARMIJO_C * step * gn * gn {
                accepted = Some((cand, f2));
                break;
            }
            step *= ARMIJO_SHRINK;
        }
        match accepted {
            Some((cand, f2)) => {
                let drop = cur - f2;
                *w = cand;
                cur = f2;
                trace.push(cur);
                if drop <= tol * cur.abs().max(1.0) {
                    break;
                }
            }
            None => break,
        }
    }
    Ok(trace)
}

/// Runs penalty stages at growing weight until the surrogate fits the budget
/// or the weight saturates. Returns the final stage's trace and weight.
fn solve_stages<P: InnerProblem>(
    problem: &P,
    w: &mut DVector<f64>,
    rho: &mut f64,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let tol_budget = cfg.budget() * (1.0 + CONSTRAINT_SLACK);
    loop {
        let trace = descend(problem, w, *rho, cfg.inner_iters, cfg.inner_tol)?;
        let (_, cval, _) = problem.eval(w)?;
        if cval <= tol_budget || *rho >= cfg.penalty_max {
            return Ok(trace);
        }
        *rho = (*rho * cfg.penalty_growth).min(cfg.penalty_max);
    }
}

struct BinaryProblem<'a> {
    features: &'a DMatrix<f64>,
    labels: &'a [f64],
    reg: f64,
    map: &'a LandmarkMap,
    engine: &'a ConstraintEngine,
    norm: Norm,
    budget: f64,
}

impl BinaryProblem<'_> {
    fn data_and_grad(&self, w: &DVector<f64>, want_grad: bool) -> (f64, Option<DVector<f64>>) {
        let l = self.labels.len() as f64;
        let scores = self.features * w;
        let mut loss = 0.0;
        let mut resid = DVector::zeros(self.labels.len());
        for (i, (&y, s)) in self.labels.iter().zip(scores.iter()).enumerate() {
            let m = 1.0 - y * s;
            if m > 0.0 {
                loss += m;
                resid[i] = -y / l;
            }
        }
        let grad = want_grad.then(|| self.features.transpose() * resid);
        (loss / l, grad)
    }
}

impl InnerProblem for BinaryProblem<'_> {
    fn eval(&self, w: &DVector<f64>) -> Result<(f64, f64, f64)> {
        let (data, _) = self.data_and_grad(w, false);
        let obj = data + 0.5 * self.reg * w.norm_squared();
        let gamma = self.map.coefficients(w);
        let (cval, _) = self.engine.eval(&gamma, self.norm)?;
        Ok((obj, cval, (cval - self.budget).max(0.0)))
    }

    fn subgrad(&self, w: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
        let (_, grad) = self.data_and_grad(w, true);
        let mut g = grad.expect("gradient requested") + self.reg * w;
        let gamma = self.map.coefficients(w);
        let (cval, cgrad) = self.engine.eval(&gamma, self.norm)?;
        if cval > self.budget {
            g += rho * self.map.projector() * cgrad;
        }
        Ok(g)
    }
}

struct MultiProblem<'a> {
    features: &'a DMatrix<f64>,
    labels: &'a [usize],
    n_classes: usize,
    reg: f64,
    map: &'a LandmarkMap,
    projector: &'a DMatrix<f64>,
    grads: &'a [DMatrix<f64>],
    norm: Norm,
    lip: f64,
    detail_seed: u64,
}

impl MultiProblem<'_> {
    fn class_weights(&self, w: &DVector<f64>, c: usize) -> DVector<f64> {
        let m = self.map.len();
        DVector::from(w.rows(c * m, m))
    }

    fn data_and_grad(&self, w: &DVector<f64>, want_grad: bool) -> (f64, Option<DVector<f64>>) {
        let l = self.labels.len() as f64;
        let m = self.map.len();
        let mut loss = 0.0;
        let mut grad = want_grad.then(|| DVector::zeros(w.len()));
        for (i, &y) in self.labels.iter().enumerate() {
            let phi = self.features.row(i);
            let mut scores = Vec::with_capacity(self.n_classes);
            for c in 0..self.n_classes {
                scores.push((phi * self.class_weights(w, c))[(0, 0)]);
            }
            let mut rival = usize::MAX;
            let mut worst = 0.0;
            for (c, s) in scores.iter().enumerate() {
                if c != y {
                    let v = 1.0 + s - scores[y];
                    if v > worst {
                        worst = v;
                        rival = c;
                    }
                }
            }
            if rival != usize::MAX {
                loss += worst;
                if let Some(g) = grad.as_mut() {
                    for (a, p) in phi.iter().enumerate() {
                        g[rival * m + a] += p / l;
                        g[y * m + a] -= p / l;
                    }
                }
            }
        }
        (loss / l, grad)
    }

    /// Per-class projected gradient factors at the current weights.
    fn factors(&self, w: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let (n, d) = (self.grads.len(), self.grads[0].nrows());
        (0..self.n_classes)
            .map(|c| {
                let gamma = self.map.coefficients(&self.class_weights(w, c));
                let mut j = DMatrix::zeros(n, d);
                for (s, g) in self.grads.iter().enumerate() {
                    j.row_mut(s).copy_from(&(g * &gamma).transpose());
                }
                Ok(self.projector * j)
            })
            .collect()
    }

    /// `t` with `v' F_c u = t' gamma_c` for every class.
    fn direction_vector(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let q = self.projector * v;
        let mut t = DVector::zeros(self.map.len());
        for (s, g) in self.grads.iter().enumerate() {
            t += q[s] * g.transpose() * u;
        }
        t
    }

    /// `(constraint_value, penalty, penalty gradient)`; the gradient is in
    /// the flattened weight space and only computed when requested.
    fn constraint(
        &self,
        w: &DVector<f64>,
        want_grad: bool,
    ) -> Result<(f64, f64, Option<DVector<f64>>)> {
        let factors = self.factors(w)?;
        let m = self.map.len();
        match self.norm {
            Norm::L2 => {
                let (bound, pair) =
                    crate::lipbound::multiclass_l2_detail(&factors, 2, self.detail_seed)?;
                let value = bound * bound;
                let budget = self.lip * self.lip;
                let penalty = (value - budget).max(0.0);
                let grad = match (want_grad && value > budget, pair) {
                    (true, Some((u, v))) => {
                        let t = self.direction_vector(&u, &v);
                        let mut g = DVector::zeros(w.len());
                        for c in 0..self.n_classes {
                            let gamma = self.map.coefficients(&self.class_weights(w, c));
                            let s = t.dot(&gamma);
                            let piece = self.map.projector() * (2.0 * s * &t);
                            g.rows_mut(c * m, m).copy_from(&piece);
                        }
                        Some(g)
                    }
                    _ => None,
                };
                Ok((value, penalty, grad))
            }
            Norm::Linf => {
                let mut value = 0.0f64;
                let mut penalty = 0.0;
                let mut grad = want_grad.then(|| DVector::zeros(w.len()));
                for (c, f) in factors.iter().enumerate() {
                    let (val, pair) = crate::lipbound::linf_gradient_detail(
                        f,
                        2,
                        self.detail_seed ^ ((c as u64) << 32),
                    )?;
                    value = value.max(val);
                    if val > self.lip {
                        penalty += val - self.lip;
                        if let (Some(g), Some((u, v))) = (grad.as_mut(), pair) {
                            let t = self.direction_vector(&u, &v);
                            let piece = self.map.projector() * t;
                            let mut rows = g.rows_mut(c * m, m);
                            rows += piece;
                        }
                    }
                }
                Ok((value, penalty, grad))
            }
        }
    }
}

impl InnerProblem for MultiProblem<'_> {
    fn eval(&self, w: &DVector<f64>) -> Result<(f64, f64, f64)> {
        let (data, _) = self.data_and_grad(w, false);
        let obj = data + 0.5 * self.reg * w.norm_squared();
        let (cval, penalty, _) = self.constraint(w, false)?;
        Ok((obj, cval, penalty))
    }

    fn subgrad(&self, w: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
        let (_, grad) = self.data_and_grad(w, true);
        let mut g = grad.expect("gradient requested") + self.reg * w;
        let (_, _, cgrad) = self.constraint(w, true)?;
        if let Some(cg) = cgrad {
            g += rho * cg;
        }
        Ok(g)
    }
}

fn check_points(kernel: &KernelSpec, points: &[Vec<f64>]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidParameter {
            name: "points",
            value: 0.0,
            reason: "need at least one training point",
        });
    }
    for p in points {
        kernel.check_point(p)?;
    }
    Ok(())
}

fn pick_landmarks(points: &[Vec<f64>], requested: usize, seed: u64) -> Vec<Vec<f64>> {
    let target = if requested == 0 {
        points.len().min(256)
    } else {
        requested.min(points.len())
    };
    if target == points.len() {
        return points.to_vec();
    }
    let mut r = rng::stream(seed, 0x1A5D);
    let mut idx = rand::seq::index::sample(&mut r, points.len(), target).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i].clone()).collect()
}

/// Witness sampling region: the configured box or the bounding box of the
/// data, clipped to a cube inscribed in the unit ball for kernels restricted
/// to it.
fn witness_region(
    kernel: &KernelSpec,
    cfg: &TrainConfig,
    points: &[Vec<f64>],
) -> Result<DomainBox> {
    let mut b = match &cfg.domain {
        Some(b) => {
            if b.dim() != kernel.dim() {
                return Err(Error::DimensionMismatch {
                    context: "witness domain",
                    expected: kernel.dim(),
                    got: b.dim(),
                });
            }
            b.clone()
        }
        None => DomainBox::from_points(points, 0.05)?,
    };
    if let KernelSpec::Inverse { dim } = kernel {
        let c = 0.999 / (*dim as f64).sqrt();
        for i in 0..b.lo.len() {
            b.lo[i] = b.lo[i].max(-c);
            b.hi[i] = b.hi[i].min(c).max(b.lo[i]);
        }
    }
    Ok(b)
}

fn initial_witnesses(domain: &DomainBox, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0x57A6_7E55);
    (0..count).map(|_| domain.sample(&mut r)).collect()
}

/// Measured slope of the model, maximised over classes for vector scorers.
fn measured_lip(models: &[Model], domain: &DomainBox, dual: DualNorm, seed: u64) -> Result<f64> {
    let mut best: f64 = 0.0;
    for (c, m) in models.iter().enumerate() {
        let (v, _) = empirical_lipschitz(m, domain, dual, 10, seed ^ ((c as u64) << 24))?;
        best = best.max(v);
    }
    Ok(best)
}

fn next_witness(
    mode: WitnessMode,
    models: &[Model],
    per_class_lip: &[f64],
    domain: &DomainBox,
    dual: DualNorm,
    seed: u64,
    iter: usize,
) -> Result<Vec<f64>> {
    match mode {
        WitnessMode::Random => {
            let mut r = rng::stream(seed, 0xADD0 ^ (iter as u64));
            Ok(domain.sample(&mut r))
        }
        WitnessMode::Greedy => {
            let c = per_class_lip
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            greedy_witness(
                &models[c],
                domain,
                dual,
                seed ^ 0x6EED ^ ((iter as u64) << 8),
            )
        }
    }
}

/// Trains a real-valued scorer on labels in `{-1, +1}` under the slope
/// budget. Reported as converged once the measured slope is within
/// [`STOP_FACTOR`] of the budget and the surrogate fits it.
pub fn train_binary(
    kernel: &KernelSpec,
    points: &[Vec<f64>],
    labels: &[f64],
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    kernel.validate()?;
    check_points(kernel, points)?;
    if labels.len() != points.len() {
        return Err(Error::DimensionMismatch {
            context: "labels",
            expected: points.len(),
            got: labels.len(),
        });
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidParameter {
            name: "labels",
            value: f64::NAN,
            reason: "binary labels must be -1 or +1",
        });
    }
    if cfg.loss != Loss::Hinge {
        return Err(Error::Unsupported(
            "binary training minimises the hinge loss",
        ));
    }
    if cfg.constraint_mode == ConstraintMode::CoordNystrom
        && !matches!(kernel, KernelSpec::Product { .. })
    {
        return Err(Error::Unsupported(
            "the coordinate surrogate needs a coordinate-wise product kernel",
        ));
    }

    let landmarks = pick_landmarks(points, cfg.n_landmarks, cfg.seed);
    let map = LandmarkMap::new(*kernel, landmarks)?;
    let features = map.feature_matrix(points)?;
    let domain = witness_region(kernel, cfg, points)?;
    let mut witnesses = initial_witnesses(&domain, cfg.initial_witnesses, cfg.seed);

    let mut w = DVector::zeros(map.len());
    let mut rho = cfg.penalty_init;
    let mut rows = Vec::new();
    let mut converged = false;
    let tol_budget = cfg.budget() * (1.0 + CONSTRAINT_SLACK);

    for iter in 0..cfg.outer_iters {
        let engine = build_engine(cfg.constraint_mode, kernel, map.landmarks(), &witnesses)?;
        let problem = BinaryProblem {
            features: &features,
            labels,
            reg: cfg.reg_weight,
            map: &map,
            engine: &engine,
            norm: cfg.lip_norm,
            budget: cfg.budget(),
        };
        let trace = solve_stages(&problem, &mut w, &mut rho, cfg)?;
        let (obj, cval, _) = problem.eval(&w)?;

        let model = map.model(&w)?;
        let est = measured_lip(
            std::slice::from_ref(&model),
            &domain,
            cfg.dual(),
            cfg.seed ^ 0xE571_0000 ^ ((iter as u64) << 16),
        )?;
        rows.push(OuterRow {
            iteration: iter,
            objective: obj,
            constraint_value: cval,
            estimated_lip: est,
            witness_count: witnesses.len(),
            penalty_weight: rho,
            inner_objectives: trace,
        });
        if est <= STOP_FACTOR * cfg.lip_budget && cval <= tol_budget {
            converged = true;
            break;
        }
        if iter + 1 < cfg.outer_iters {
            witnesses.push(next_witness(
                cfg.witness_mode,
                std::slice::from_ref(&model),
                &[est],
                &domain,
                cfg.dual(),
                cfg.seed,
                iter,
            )?);
        }
    }

    let model = map.model(&w)?;
    let report = TrainReport {
        solver: "exact-penalty-subgradient".to_string(),
        converged,
        rows,
        config: cfg.clone(),
    };
    Ok((model, report))
}

/// Trains one scorer per class under a joint slope budget: the alternation
/// bound over classes for the Euclidean budget, the worst per-class slope
/// for the box budget. Labels are class indices below `n_classes <= 10`.
pub fn train_multiclass(
    kernel: &KernelSpec,
    points: &[Vec<f64>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(Vec<Model>, TrainReport)> {
    cfg.validate()?;
    kernel.validate()?;
    check_points(kernel, points)?;
    if labels.len() != points.len() {
        return Err(Error::DimensionMismatch {
            context: "labels",
            expected: points.len(),
            got: labels.len(),
        });
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    if n_classes < 2 {
        return Err(Error::InvalidParameter {
            name: "labels",
            value: n_classes as f64,
            reason: "need at least two classes",
        });
    }
    if n_classes > 10 {
        return Err(Error::InvalidParameter {
            name: "labels",
            value: n_classes as f64,
            reason: "at most ten classes are supported",
        });
    }
    if cfg.loss != Loss::CrammerSinger {
        return Err(Error::Unsupported(
            "multiclass training minimises the multiclass margin loss",
        ));
    }
    if cfg.constraint_mode != ConstraintMode::HolisticNystrom {
        return Err(Error::Unsupported(
            "multiclass budgets are enforced through the witness-factor surrogate",
        ));
    }

    let landmarks = pick_landmarks(points, cfg.n_landmarks, cfg.seed);
    let map = LandmarkMap::new(*kernel, landmarks)?;
    let features = map.feature_matrix(points)?;
    let domain = witness_region(kernel, cfg, points)?;
    let mut witnesses = initial_witnesses(&domain, cfg.initial_witnesses, cfg.seed);

    let m = map.len();
    let mut w = DVector::zeros(m * n_classes);
    let mut rho = cfg.penalty_init;
    let mut rows = Vec::new();
    let mut converged = false;
    let tol_budget = cfg.budget() * (1.0 + CONSTRAINT_SLACK);

    for iter in 0..cfg.outer_iters {
        let projector = witness_projector(kernel, &witnesses)?;
        let grads = witness_gradients(kernel, map.landmarks(), &witnesses)?;
        let problem = MultiProblem {
            features: &features,
            labels,
            n_classes,
            reg: cfg.reg_weight,
            map: &map,
            projector: &projector,
            grads: &grads,
            norm: cfg.lip_norm,
            lip: cfg.lip_budget,
            detail_seed: cfg.seed ^ 0xD7A1,
        };
        let trace = solve_stages(&problem, &mut w, &mut rho, cfg)?;
        let (obj, cval, _) = problem.eval(&w)?;

        let models = (0..n_classes)
            .map(|c| map.model(&problem.class_weights(&w, c)))
            .collect::<Result<Vec<Model>>>()?;
        let mut per_class = Vec::with_capacity(n_classes);
        for (c, model) in models.iter().enumerate() {
            let (v, _) = empirical_lipschitz(
                model,
                &domain,
                cfg.dual(),
                10,
                cfg.seed ^ 0xE571_0000 ^ ((iter as u64) << 16) ^ ((c as u64) << 8),
            )?;
            per_class.push(v);
        }
        let est = per_class.iter().cloned().fold(0.0f64, f64::max);
        rows.push(OuterRow {
            iteration: iter,
            objective: obj,
            constraint_value: cval,
            estimated_lip: est,
            witness_count: witnesses.len(),
            penalty_weight: rho,
            inner_objectives: trace,
        });
        if est <= STOP_FACTOR * cfg.lip_budget && cval <= tol_budget {
            converged = true;
            break;
        }
        if iter + 1 < cfg.outer_iters {
            witnesses.push(next_witness(
                cfg.witness_mode,
                &models,
                &per_class,
                &domain,
                cfg.dual(),
                cfg.seed,
                iter,
            )?);
        }
    }

    let models = (0..n_classes)
        .map(|c| {
            let wc = DVector::from(w.rows(c * m, m));
            map.model(&wc)
        })
        .collect::<Result<Vec<Model>>>()?;
    let report = TrainReport {
        solver: "exact-penalty-subgradient".to_string(),
        converged,
        rows,
        config: cfg.clone(),
    };
    Ok((models, report))
}
