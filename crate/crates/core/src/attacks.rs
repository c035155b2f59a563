//! Projected-gradient attacks on smooth classifiers over l2/l-inf balls,
//! and robust-accuracy sweeps with warm starts across radii.

use crate::error::{Error, Result};
use crate::lipbound::{DomainBox, Model};
use crate::rng;
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Perturbation-ball geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    L2,
    Linf,
}

/// What the attacker maximises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Cross-entropy loss of the true class (or, targeted, the negative
    /// loss of the target class).
    CrossEntropy,
    /// Margin of the strongest wrong class over the true one; positive
    /// means misclassified.
    CwMargin,
}

/// Anything that scores points into classes and can differentiate each
/// class score. Class count must be at least two.
pub trait Scorer: Sync {
    fn dim(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn scores(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn score_grads(&self, x: &[f64]) -> Result<Vec<DVector<f64>>>;
}

/// Binary classifier from a single real-valued model: class 1 where the
/// model is positive. Scores are `[-f, f]` so the two-class softmax equals
/// the usual sigmoid of `2 f`.
pub struct BinaryScorer {
    pub model: Model,
}

impl Scorer for BinaryScorer {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn n_classes(&self) -> usize {
        2
    }

    fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.model.value(x)?;
        Ok(vec![-f, f])
    }

    fn score_grads(&self, x: &[f64]) -> Result<Vec<DVector<f64>>> {
        let g = self.model.grad(x)?;
        Ok(vec![-&g, g])
    }
}

/// One kernel model per class, highest score wins.
pub struct KernelScorer {
    pub models: Vec<Model>,
}

impl KernelScorer {
    pub fn new(models: Vec<Model>) -> Result<Self> {
        if models.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "models",
                value: models.len() as f64,
                reason: "need one scoring model per class, at least two",
            });
        }
        let d = models[0].dim();
        if models.iter().any(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch {
                context: "per-class scoring models",
                expected: d,
                got: models.iter().map(|m| m.dim()).find(|&x| x != d).unwrap(),
            });
        }
        Ok(KernelScorer { models })
    }
}

impl Scorer for KernelScorer {
    fn dim(&self) -> usize {
        self.models[0].dim()
    }

    fn n_classes(&self) -> usize {
        self.models.len()
    }

    fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|m| m.value(x)).collect()
    }

    fn score_grads(&self, x: &[f64]) -> Result<Vec<DVector<f64>>> {
        self.models.iter().map(|m| m.grad(x)).collect()
    }
}

/// Projected-gradient attack settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackConfig {
    pub norm: Norm,
    pub delta: f64,
    pub steps: usize,
    /// `None` means the documented default `2 * delta / steps`.
    pub step_size: Option<f64>,
    pub objective: Objective,
    /// Push toward this class instead of away from the true one.
    pub targeted: Option<usize>,
    pub random_init: bool,
    /// Feasible inputs; `None` means the unit box `[0, 1]^d`.
    pub input_box: Option<DomainBox>,
    pub seed: u64,
    pub record_trace: bool,
}

impl AttackConfig {
    pub fn new(norm: Norm, delta: f64) -> Self {
        AttackConfig {
            norm,
            delta,
            steps: 100,
            step_size: None,
            objective: Objective::CrossEntropy,
            targeted: None,
            random_init: true,
            input_box: None,
            seed: 0,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "delta",
                value: self.delta,
                reason: "perturbation radius must be finite and nonnegative",
            });
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter {
                name: "steps",
                value: 0.0,
                reason: "need at least one ascent step",
            });
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "step_size",
                    value: s,
                    reason: "step size must be finite and positive",
                });
            }
        }
        Ok(())
    }

    fn effective_step(&self) -> f64 {
        self.step_size
            .unwrap_or(2.0 * self.delta / self.steps as f64)
    }
}

/// `max_{c != y} f_c - f_y`; positive exactly when some other class
/// outscores the labelled one.
pub fn cw_margin(scores: &[f64], y: usize) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "scores",
            value: scores.len() as f64,
            reason: "margin needs at least two classes",
        });
    }
    if y >= scores.len() {
        return Err(Error::InvalidParameter {
            name: "y",
            value: y as f64,
            reason: "label outside the class range",
        });
    }
    let rival = scores
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(rival - scores[y])
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|&s| (s - m).exp()).sum::<f64>().ln()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn rival_class(scores: &[f64], avoid: usize) -> usize {
    let mut best = usize::MAX;
    let mut val = f64::NEG_INFINITY;
    for (c, &s) in scores.iter().enumerate() {
        if c != avoid && s > val {
            val = s;
            best = c;
        }
    }
    best
}

fn attack_objective(cfg: &AttackConfig, scores: &[f64], y: usize) -> Result<f64> {
    Ok(match (cfg.objective, cfg.targeted) {
        (Objective::CrossEntropy, None) => log_sum_exp(scores) - scores[y],
        (Objective::CrossEntropy, Some(t)) => scores[t] - log_sum_exp(scores),
        (Objective::CwMargin, None) => cw_margin(scores, y)?,
        (Objective::CwMargin, Some(t)) => scores[t] - scores[rival_class(scores, t)],
    })
}

/// Per-class weights such that the objective gradient is
/// `sum_c coeff_c * grad f_c`.
fn objective_coeffs(cfg: &AttackConfig, scores: &[f64], y: usize) -> Vec<f64> {
    let c = scores.len();
    match (cfg.objective, cfg.targeted) {
        (Objective::CrossEntropy, None) => {
            let mut p = softmax(scores);
            p[y] -= 1.0;
            p
        }
        (Objective::CrossEntropy, Some(t)) => {
            let p = softmax(scores);
            let mut out: Vec<f64> = p.into_iter().map(|v| -v).collect();
            out[t] += 1.0;
            out
        }
        (Objective::CwMargin, None) => {
            let mut out = vec![0.0; c];
            out[rival_class(scores, y)] = 1.0;
            out[y] = -1.0;
            out
        }
        (Objective::CwMargin, Some(t)) => {
            let mut out = vec![0.0; c];
            out[t] = 1.0;
            out[rival_class(scores, t)] -= 1.0;
            out
        }
    }
}

fn project_ball(x0: &[f64], x: &mut [f64], norm: Norm, delta: f64) {
    match norm {
        Norm::L2 => {
            let mut d2 = 0.0;
            for (xi, oi) in x.iter().zip(x0) {
                d2 += (xi - oi) * (xi - oi);
            }
            let dist = d2.sqrt();
            if dist > delta {
                let s = delta / dist;
                for (xi, oi) in x.iter_mut().zip(x0) {
                    *xi = oi + (*xi - oi) * s;
                }
            }
        }
        Norm::Linf => {
            for (xi, oi) in x.iter_mut().zip(x0) {
                *xi = xi.clamp(oi - delta, oi + delta);
            }
        }
    }
}

// Ball first, box second: the box clamp pulls each coordinate toward the
// centre's box, which never increases any coordinate gap to a centre that
// is itself inside the box, so the ball constraint survives the clamp.
fn project(x0: &[f64], x: &mut [f64], norm: Norm, delta: f64, boxx: &DomainBox) {
    project_ball(x0, x, norm, delta);
    boxx.clamp(x);
}

fn random_in_ball<R: Rng>(x0: &[f64], norm: Norm, delta: f64, r: &mut R) -> Vec<f64> {
    let d = x0.len();
    match norm {
        Norm::L2 => {
            let mut dir: Vec<f64> = (0..d)
                .map(|_| {
                    let u1: f64 = 1.0 - r.gen::<f64>();
                    let u2: f64 = r.gen();
                    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
                })
                .collect();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let radius = delta * r.gen::<f64>().powf(1.0 / d as f64);
            if n > 0.0 {
                for v in &mut dir {
                    *v *= radius / n;
                }
            }
            x0.iter().zip(&dir).map(|(o, v)| o + v).collect()
        }
        Norm::Linf => x0
            .iter()
            .map(|o| o + r.gen_range(-delta..=delta))
            .collect(),
    }
}

/// One attacked example.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackRecord {
    pub clean_scores: Vec<f64>,
    pub adversarial: Vec<f64>,
    /// Best objective seen, always at least the starting value.
    pub objective: f64,
    pub init_objective: f64,
    /// Untargeted: the adversarial point is misclassified. Targeted: it is
    /// classified as the target.
    pub success: bool,
    /// Every iterate visited, when requested; all inside ball and box.
    pub trace: Option<Vec<Vec<f64>>>,
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

fn attack_success(cfg: &AttackConfig, scores: &[f64], y: usize) -> bool {
    match cfg.targeted {
        Some(t) => argmax(scores) == t,
        None => argmax(scores) != y,
    }
}

/// Projected gradient ascent on the attack objective inside the
/// `cfg.delta`-ball around `x` intersected with the input box. Direction is
/// the normalised gradient (`l2`) or its sign (`l-inf`); the best iterate by
/// objective is returned. Deterministic given `cfg.seed`. A zero radius
/// returns `x` exactly.
pub fn pgd_attack(
    scorer: &dyn Scorer,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackRecord> {
    cfg.validate()?;
    if x.len() != scorer.dim() {
        return Err(Error::DimensionMismatch {
            context: "attacked point",
            expected: scorer.dim(),
            got: x.len(),
        });
    }
    let classes = scorer.n_classes();
    if y >= classes {
        return Err(Error::InvalidParameter {
            name: "y",
            value: y as f64,
            reason: "label outside the class range",
        });
    }
    if let Some(t) = cfg.targeted {
        if t >= classes {
            return Err(Error::InvalidParameter {
                name: "targeted",
                value: t as f64,
                reason: "target outside the class range",
            });
        }
    }
    let clean_scores = scorer.scores(x)?;
    let init_objective = attack_objective(cfg, &clean_scores, y)?;
    if cfg.delta == 0.0 {
        return Ok(AttackRecord {
            success: attack_success(cfg, &clean_scores, y),
            adversarial: x.to_vec(),
            objective: init_objective,
            init_objective,
            clean_scores,
            trace: cfg.record_trace.then(|| vec![x.to_vec()]),
        });
    }

    let boxx = match &cfg.input_box {
        Some(b) => {
            if b.dim() != x.len() {
                return Err(Error::DimensionMismatch {
                    context: "attack input box",
                    expected: x.len(),
                    got: b.dim(),
                });
            }
            b.clone()
        }
        None => DomainBox::new(vec![0.0; x.len()], vec![1.0; x.len()])?,
    };
    let mut origin = x.to_vec();
    boxx.clamp(&mut origin);

    let mut r = rng::stream(cfg.seed, 0xA77AC4);
    let mut cur = if cfg.random_init {
        let mut p = random_in_ball(&origin, cfg.norm, cfg.delta, &mut r);
        project(&origin, &mut p, cfg.norm, cfg.delta, &boxx);
        p
    } else {
        origin.clone()
    };

    let mut best_point = origin.clone();
    let mut best_obj = init_objective;
    let mut trace = cfg.record_trace.then(Vec::new);
    let step = cfg.effective_step();

    for it in 0..=cfg.steps {
        let scores = scorer.scores(&cur)?;
        let obj = attack_objective(cfg, &scores, y)?;
        if obj > best_obj {
            best_obj = obj;
            best_point = cur.clone();
        }
        if let Some(t) = trace.as_mut() {
            t.push(cur.clone());
        }
        if it == cfg.steps {
            break;
        }
        let coeffs = objective_coeffs(cfg, &scores, y);
        let grads = scorer.score_grads(&cur)?;
        let mut g = DVector::zeros(cur.len());
        for (c, gc) in coeffs.iter().zip(&grads) {
            g += gc * *c;
        }
        match cfg.norm {
            Norm::L2 => {
                let n = g.norm();
                if n <= 1e-300 {
                    continue;
                }
                for (xi, gi) in cur.iter_mut().zip(g.iter()) {
                    *xi += step * gi / n;
                }
            }
            Norm::Linf => {
                for (xi, gi) in cur.iter_mut().zip(g.iter()) {
                    *xi += step * gi.signum() * f64::from(*gi != 0.0);
                }
            }
        }
        project(&origin, &mut cur, cfg.norm, cfg.delta, &boxx);
    }

    let final_scores = scorer.scores(&best_point)?;
    Ok(AttackRecord {
        clean_scores,
        success: attack_success(cfg, &final_scores, y),
        adversarial: best_point,
        objective: best_obj,
        init_objective,
        trace,
    })
}

/// Outcome of one example at one radius of a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExampleOutcome {
    pub adversarial: Vec<f64>,
    pub objective: f64,
    pub success: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub delta: f64,
    /// Fraction of examples still classified correctly after attack.
    pub accuracy: f64,
}

/// Robust accuracy across a radius sweep, with per-example adversarial
/// points at every radius.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub config: AttackConfig,
    pub rows: Vec<RobustnessRow>,
    pub clean_scores: Vec<Vec<f64>>,
    /// `outcomes[delta_index][example_index]`.
    pub outcomes: Vec<Vec<ExampleOutcome>>,
}

/// Attacks every example at every radius, in ascending radius order, warm
/// starting each example from its adversarial point at the previous radius
/// (feasible, since the balls are nested). A successful candidate is never
/// traded for an unsuccessful one, so per-example success is monotone in
/// the radius and the accuracy rows are exactly nonincreasing. Examples run
/// in parallel on independent RNG streams.
pub fn robust_accuracy(
    scorer: &dyn Scorer,
    points: &[Vec<f64>],
    labels: &[usize],
    deltas: &[f64],
    cfg: &AttackConfig,
) -> Result<RobustnessReport> {
    cfg.validate()?;
    if points.is_empty() || points.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "attack dataset",
            expected: points.len().max(1),
            got: labels.len(),
        });
    }
    if deltas.is_empty() {
        return Err(Error::InvalidParameter {
            name: "deltas",
            value: 0.0,
            reason: "need at least one radius",
        });
    }
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&a, &b| deltas[a].total_cmp(&deltas[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| deltas[i]).collect();
    if sorted[0] < 0.0 {
        return Err(Error::InvalidParameter {
            name: "deltas",
            value: sorted[0],
            reason: "radii must be nonnegative",
        });
    }

    struct PerExample {
        clean: Vec<f64>,
        by_delta: Vec<ExampleOutcome>,
    }

    let per_example: Result<Vec<PerExample>> = points
        .par_iter()
        .zip(labels)
        .enumerate()
        .map(|(idx, (x, &y))| {
            let mut by_delta = Vec::with_capacity(sorted.len());
            let mut warm: Option<(Vec<f64>, bool)> = None;
            let mut clean = None;
            for (di, &delta) in sorted.iter().enumerate() {
                let mut run = cfg.clone();
                run.delta = delta;
                run.seed = cfg
                    .seed
                    .wrapping_add((idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
                    .wrapping_add((di as u64).rotate_left(32));
                let fresh = pgd_attack(scorer, x, y, &run)?;
                if clean.is_none() {
                    clean = Some(fresh.clean_scores.clone());
                }
                let fresh_outcome = ExampleOutcome {
                    adversarial: fresh.adversarial,
                    objective: fresh.objective,
                    success: fresh.success,
                };
                let chosen = match &warm {
                    Some((point, success)) => {
                        let scores = scorer.scores(point)?;
                        let carried = ExampleOutcome {
                            adversarial: point.clone(),
                            objective: attack_objective(&run, &scores, y)?,
                            success: *success,
                        };
                        let carried_key = (carried.success, carried.objective);
                        let fresh_key = (fresh_outcome.success, fresh_outcome.objective);
                        if fresh_key > carried_key {
                            fresh_outcome
                        } else {
                            carried
                        }
                    }
                    None => fresh_outcome,
                };
                warm = Some((chosen.adversarial.clone(), chosen.success));
                by_delta.push(chosen);
            }
            Ok(PerExample {
                clean: clean.unwrap(),
                by_delta,
            })
        })
        .collect();
    let per_example = per_example?;

    let mut rows = Vec::with_capacity(sorted.len());
    let mut outcomes = Vec::with_capacity(sorted.len());
    for di in 0..sorted.len() {
        let failed = per_example
            .iter()
            .filter(|e| e.by_delta[di].success)
            .count();
        rows.push(RobustnessRow {
            delta: sorted[di],
            accuracy: 1.0 - failed as f64 / per_example.len() as f64,
        });
        outcomes.push(
            per_example
                .iter()
                .map(|e| e.by_delta[di].clone())
                .collect(),
        );
    }
    Ok(RobustnessReport {
        config: cfg.clone(),
        rows,
        clean_scores: per_example.into_iter().map(|e| e.clean).collect(),
        outcomes,
    })
}
