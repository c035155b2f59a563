//! Command-line front end: synthetic data, constrained training, attack
//! sweeps, worst-case-risk oracles, scatter experiments, kernel spectra,
//! and slope estimation for saved models.
//!
//! Exit codes: 0 on success, 1 when a run finishes but fails to converge or
//! certify (the report is still written), 2 on configuration errors.

use std::path::{Path, PathBuf};
use std::process::exit;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lipkit::attacks::{AttackConfig, BinaryScorer, KernelScorer, Norm, Objective, Scorer};
use lipkit::certify::{
    adversarial_vs_regularised, gap_delta, gen_convex_equality, gen_gap_law, gen_random, gen_tent,
    lipschitz_on_grid, robust_risk_dual, robust_risk_primal, ScatterConfig, ScatterResult,
};
use lipkit::data::{gen_synthetic, load_csv, ModelBundle, Normalization, Synthetic};
use lipkit::kernels::{median_bandwidth, BaseKernel, KernelSpec};
use lipkit::lipbound::{
    build_gradient_factor, estimate_all, multiclass_l2_bound, multiclass_linf_bound, DomainBox,
    DualNorm, EstimateMethod, LipschitzEstimate,
};
use lipkit::report::{self, envelope};
use lipkit::rng;
use lipkit::spectrum::{
    assumption_constants, decay_condition_check, gaussian_eigenvalues_closed_form,
    inverse_kernel_spectrum, nystrom_error_curve, periodic_eigenvalues, periodic_mercer_sum,
    AssumptionConstants, DecayCheck, ErrorCurve, SpectrumReport, TheorySettings,
};
use lipkit::trainer::{
    train_binary, train_multiclass, ConstraintMode, Loss, TrainConfig, TrainReport, WitnessMode,
};
use lipkit::{Error, Result};

/// Kernel classifiers with certified gradient-norm budgets.
#[derive(Parser)]
#[command(name = "lipkit", version, about, propagate_version = true)]
struct Cli {
    /// Cap the worker pool used by parallel experiments.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic classification dataset to CSV.
    GenData(GenDataArgs),
    /// Train a classifier under a gradient-norm budget.
    Train(TrainArgs),
    /// Sweep projected-gradient attacks against a saved model.
    Attack(AttackArgs),
    /// Run the worst-case-risk oracle suites on generated instances.
    Certify(CertifyArgs),
    /// Compare attacked risk against the slope-regularised bound over random models.
    Scatter(ScatterArgs),
    /// Kernel spectra, tail-decay checks, and witness error curves.
    Spectrum(SpectrumArgs),
    /// Print every slope estimate for a saved model.
    Lipschitz(LipschitzArgs),
}

fn main() {
    // Die quietly when a downstream pipe closes early (e.g. `... | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // A second initialisation (e.g. under a test harness) is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run(cli.command) {
        Ok(code) => exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            exit(match err {
                Error::NotConverged { .. } => 1,
                _ => 2,
            });
        }
    }
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Scatter(a) => cmd_scatter(a),
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Lipschitz(a) => cmd_lipschitz(a),
    }
}

// ---------------------------------------------------------------------------
// Shared flag enums and small helpers.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L2,
    Linf,
}

impl From<NormArg> for Norm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::L2 => Norm::L2,
            NormArg::Linf => Norm::Linf,
        }
    }
}

impl NormArg {
    /// Slope norm dual to the perturbation ball.
    fn dual(self) -> DualNorm {
        match self {
            NormArg::L2 => DualNorm::L2,
            NormArg::Linf => DualNorm::L1,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Hinge,
    CrammerSinger,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstraintArg {
    BruteForce,
    HolisticNystrom,
    CoordNystrom,
}

#[derive(Clone, Copy, ValueEnum)]
enum WitnessArg {
    Random,
    Greedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    CrossEntropy,
    CwMargin,
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        value,
        reason,
    }
}

fn parse_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::ModelFormat(format!("config {}: {e}", path.display())))
}

fn parse_f64_list(s: &str, name: &'static str) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(invalid(name, f64::NAN, "expected comma-separated numbers")),
    }
}

fn parse_usize_list(s: &str, name: &'static str) -> Result<Vec<usize>> {
    let vals: std::result::Result<Vec<usize>, _> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(invalid(name, f64::NAN, "expected comma-separated counts")),
    }
}

/// Distinct label values, ascending. These become the class list of the
/// saved bundle; class index = position.
fn distinct_labels(raw: &[f64]) -> Result<Vec<f64>> {
    let mut vals: Vec<f64> = Vec::new();
    for &y in raw {
        if !y.is_finite() {
            return Err(invalid("label", y, "labels must be finite"));
        }
        if !vals.contains(&y) {
            vals.push(y);
        }
    }
    vals.sort_by(f64::total_cmp);
    if vals.len() < 2 {
        return Err(invalid(
            "labels",
            vals.len() as f64,
            "need at least two distinct classes",
        ));
    }
    if vals.len() > 32 {
        return Err(invalid(
            "labels",
            vals.len() as f64,
            "more than 32 distinct label values; is the label column categorical?",
        ));
    }
    Ok(vals)
}

fn indices_against(raw: &[f64], classes: &[f64]) -> Result<Vec<usize>> {
    raw.iter()
        .map(|y| {
            classes
                .iter()
                .position(|c| c == y)
                .ok_or(invalid("label", *y, "label missing from the model's class list"))
        })
        .collect()
}

/// Same tie-breaking as the attack loop: first maximum wins.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

fn scorer_for(bundle: &ModelBundle) -> Result<Box<dyn Scorer>> {
    if bundle.models.len() == 1 {
        Ok(Box::new(BinaryScorer {
            model: bundle.models[0].clone(),
        }))
    } else {
        Ok(Box::new(KernelScorer::new(bundle.models.clone())?))
    }
}

fn clean_accuracy(scorer: &dyn Scorer, points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let mut hits = 0usize;
    for (x, &y) in points.iter().zip(labels) {
        if argmax(&scorer.scores(x)?) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len().max(1) as f64)
}

fn normalized_points(norm: &Normalization, raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    raw.iter()
        .map(|p| {
            let mut q = p.clone();
            norm.apply(&mut q);
            q
        })
        .collect()
}

fn report_sibling(out: &Path) -> PathBuf {
    PathBuf::from(format!("{}.report.json", out.display()))
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Blobs,
    TwoMoons,
}

#[derive(Args)]
struct GenDataArgs {
    /// Which synthetic task to sample.
    #[arg(long, value_enum, default_value_t = TaskArg::Blobs)]
    task: TaskArg,
    /// Examples per class.
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    /// Number of blob classes.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Feature dimension (blobs only; moons are planar).
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination CSV: integer label in column 0, features after.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_gen_data(a: GenDataArgs) -> Result<i32> {
    let spec = match a.task {
        TaskArg::Blobs => Synthetic::Blobs {
            per_class: a.per_class,
            classes: a.classes,
            dim: a.dim,
        },
        TaskArg::TwoMoons => Synthetic::TwoMoons {
            per_class: a.per_class,
        },
    };
    let ds = gen_synthetic(&spec, a.seed)?;
    let dim = ds.points[0].len();
    let mut text = String::from("label");
    for j in 0..dim {
        text.push_str(&format!(",x{j}"));
    }
    text.push('\n');
    for (p, y) in ds.points.iter().zip(&ds.labels) {
        text.push_str(&format!("{}", y.round() as i64));
        for v in p {
            text.push(',');
            text.push_str(&report::format_float(*v));
        }
        text.push('\n');
    }
    report::write_text(&a.out, &text)?;
    println!(
        "wrote {} rows (dim {}) to {}",
        ds.points.len(),
        dim,
        a.out.display()
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum TrainKernelArg {
    Gaussian,
    Periodic,
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV: integer label in column 0, features after.
    #[arg(long)]
    data: PathBuf,
    /// Where to save the trained model bundle.
    #[arg(long)]
    out: PathBuf,
    /// JSON training report (default: `<out>.report.json`).
    #[arg(long)]
    report: Option<PathBuf>,
    /// JSON file holding a full training configuration; flags override fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gradient-norm budget. Required unless --config provides one.
    #[arg(long)]
    lip: Option<f64>,
    /// Coefficient-norm regularisation weight.
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// How the slope constraint is evaluated during training.
    #[arg(long, value_enum)]
    constraint: Option<ConstraintArg>,
    /// How new witness points are chosen between outer iterations.
    #[arg(long, value_enum)]
    witness: Option<WitnessArg>,
    /// Norm the gradient budget is measured in.
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    landmarks: Option<usize>,
    #[arg(long)]
    initial_witnesses: Option<usize>,
    #[arg(long)]
    penalty_init: Option<f64>,
    #[arg(long)]
    penalty_growth: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Kernel family for the feature map.
    #[arg(long, value_enum, default_value_t = TrainKernelArg::Gaussian)]
    kernel: TrainKernelArg,
    /// Kernel bandwidth (default: median pairwise distance after scaling).
    #[arg(long)]
    sigma: Option<f64>,
    /// Period of the periodic kernel.
    #[arg(long, default_value_t = 1.0)]
    period: f64,
}

#[derive(Serialize)]
struct TrainPayload {
    kernel: KernelSpec,
    n_examples: usize,
    dim: usize,
    class_values: Vec<f64>,
    clean_accuracy: f64,
    train: TrainReport,
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let ds = load_csv(&a.data)?;
    let classes = distinct_labels(&ds.labels)?;
    let y_index = indices_against(&ds.labels, &classes)?;
    let norm = Normalization::fit(&ds.points);
    let points = normalized_points(&norm, &ds.points);
    let dim = points[0].len();

    let mut cfg = match &a.config {
        Some(path) => parse_json_config::<TrainConfig>(path)?,
        None => {
            let lip = a.lip.ok_or(invalid(
                "lip",
                f64::NAN,
                "pass --lip or a --config file with a budget",
            ))?;
            let mut c = TrainConfig::new(lip);
            if classes.len() > 2 {
                c.loss = Loss::CrammerSinger;
            }
            c
        }
    };
    if let Some(v) = a.lip {
        cfg.lip_budget = v;
    }
    if let Some(v) = a.reg {
        cfg.reg_weight = v;
    }
    if let Some(v) = a.loss {
        cfg.loss = match v {
            LossArg::Hinge => Loss::Hinge,
            LossArg::CrammerSinger => Loss::CrammerSinger,
        };
    }
    if let Some(v) = a.constraint {
        cfg.constraint_mode = match v {
            ConstraintArg::BruteForce => ConstraintMode::BruteForce,
            ConstraintArg::HolisticNystrom => ConstraintMode::HolisticNystrom,
            ConstraintArg::CoordNystrom => ConstraintMode::CoordNystrom,
        };
    }
    if let Some(v) = a.witness {
        cfg.witness_mode = match v {
            WitnessArg::Random => WitnessMode::Random,
            WitnessArg::Greedy => WitnessMode::Greedy,
        };
    }
    if let Some(v) = a.norm {
        cfg.lip_norm = v.into();
    }
    if let Some(v) = a.outer_iters {
        cfg.outer_iters = v;
    }
    if let Some(v) = a.inner_iters {
        cfg.inner_iters = v;
    }
    if let Some(v) = a.landmarks {
        cfg.n_landmarks = v;
    }
    if let Some(v) = a.initial_witnesses {
        cfg.initial_witnesses = v;
    }
    if let Some(v) = a.penalty_init {
        cfg.penalty_init = v;
    }
    if let Some(v) = a.penalty_growth {
        cfg.penalty_growth = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }

    let sigma = match a.sigma {
        Some(s) => s,
        None => median_bandwidth(&points)?,
    };
    let base = match a.kernel {
        TrainKernelArg::Gaussian => BaseKernel::Gaussian { sigma },
        TrainKernelArg::Periodic => BaseKernel::Periodic {
            period: a.period,
            sigma,
        },
    };
    let kernel = KernelSpec::Product { base, dim };

    let (models, train_report) = if classes.len() == 2 {
        let y: Vec<f64> = y_index.iter().map(|&i| 2.0 * i as f64 - 1.0).collect();
        let (model, rep) = train_binary(&kernel, &points, &y, &cfg)?;
        (vec![model], rep)
    } else {
        train_multiclass(&kernel, &points, &y_index, &cfg)?
    };
    let converged = train_report.converged;
    let seed = cfg.seed;

    let bundle = ModelBundle::new(models, norm, classes.clone())?;
    bundle.save(&a.out)?;
    let scorer = scorer_for(&bundle)?;
    let accuracy = clean_accuracy(scorer.as_ref(), &points, &y_index)?;

    let payload = TrainPayload {
        kernel,
        n_examples: points.len(),
        dim,
        class_values: classes,
        clean_accuracy: accuracy,
        train: train_report,
    };
    let report_path = a.report.clone().unwrap_or_else(|| report_sibling(&a.out));
    report::write_json(&report_path, &envelope("train", seed, &payload))?;

    println!(
        "trained {} model(s): clean accuracy {:.4}, converged {}",
        bundle.models.len(),
        accuracy,
        converged
    );
    println!("model -> {}", a.out.display());
    println!("report -> {}", report_path.display());
    Ok(if converged { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

#[derive(Args)]
struct AttackArgs {
    /// Saved model bundle.
    #[arg(long)]
    model: PathBuf,
    /// Evaluation CSV in the training label/feature layout.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated attack radii, measured in the scaled feature box.
    #[arg(long, default_value = "0,0.05,0.1,0.2")]
    deltas: String,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Start each attack from a random point of the ball (true/false).
    #[arg(long)]
    random_init: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file holding a full attack configuration; flags override fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON robustness report destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `delta,accuracy` CSV destination.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn cmd_attack(a: AttackArgs) -> Result<i32> {
    let bundle = ModelBundle::load(&a.model)?;
    let ds = load_csv(&a.data)?;
    let labels = indices_against(&ds.labels, &bundle.class_values)?;
    let points = normalized_points(&bundle.normalization, &ds.points);
    let deltas = parse_f64_list(&a.deltas, "deltas")?;
    let max_delta = deltas.iter().cloned().fold(0.0, f64::max);

    let mut cfg = match &a.config {
        Some(p) => parse_json_config::<AttackConfig>(p)?,
        None => AttackConfig::new(Norm::L2, max_delta),
    };
    if let Some(n) = a.norm {
        cfg.norm = n.into();
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.step_size {
        cfg.step_size = Some(s);
    }
    if let Some(o) = a.objective {
        cfg.objective = match o {
            ObjectiveArg::CrossEntropy => Objective::CrossEntropy,
            ObjectiveArg::CwMargin => Objective::CwMargin,
        };
    }
    if let Some(r) = a.random_init {
        cfg.random_init = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }

    let scorer = scorer_for(&bundle)?;
    let rep = lipkit::attacks::robust_accuracy(scorer.as_ref(), &points, &labels, &deltas, &cfg)?;
    for row in &rep.rows {
        println!("delta {:>10.6}  accuracy {:.4}", row.delta, row.accuracy);
    }
    if let Some(csv) = &a.csv {
        let rows: Vec<(f64, f64)> = rep.rows.iter().map(|r| (r.delta, r.accuracy)).collect();
        report::write_text(csv, &report::accuracy_csv(&rows))?;
    }
    if let Some(out) = &a.out {
        report::write_json(out, &envelope("attack", cfg.seed, &rep))?;
        println!("report -> {}", out.display());
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

#[derive(Args)]
struct CertifyArgs {
    /// Instances per oracle suite.
    #[arg(long, default_value_t = 200)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON suite report destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SuiteOutcome {
    name: &'static str,
    cases: usize,
    /// Largest deviation observed, in the units of `tolerance`.
    worst: f64,
    tolerance: f64,
    passed: bool,
}

#[derive(Serialize)]
struct CertifyPayload {
    suites: Vec<SuiteOutcome>,
    all_pass: bool,
}

fn cmd_certify(a: CertifyArgs) -> Result<i32> {
    if a.cases == 0 {
        return Err(invalid("cases", 0.0, "need at least one instance per suite"));
    }
    let mut suites = Vec::with_capacity(4);

    // Convex losses: the worst-case risk equals mean loss plus radius times
    // the grid slope.
    let mut worst = 0.0f64;
    for i in 0..a.cases {
        let p = gen_convex_equality(a.seed.wrapping_add(i as u64));
        let dual = robust_risk_dual(&p)?;
        let lip = lipschitz_on_grid(&p.points, &p.f, p.cost_scale);
        worst = worst.max((dual.value - (p.mean_loss() + p.radius * lip)).abs());
    }
    suites.push(SuiteOutcome {
        name: "convex-equality",
        cases: a.cases,
        worst,
        tolerance: 1e-6,
        passed: worst <= 1e-6,
    });

    // Tent losses: the defect attains its envelope bound exactly.
    worst = 0.0;
    for i in 0..a.cases {
        let p = gen_tent(a.seed.wrapping_add(i as u64));
        let g = gap_delta(&p)?;
        worst = worst.max((g.delta - p.radius * g.lip).abs());
    }
    suites.push(SuiteOutcome {
        name: "tent-tightness",
        cases: a.cases,
        worst,
        tolerance: 1e-6,
        passed: worst <= 1e-6,
    });

    // General losses: the defect is always nonnegative, and within the
    // small-radius regime of the gap family it stays below the envelope
    // bound.
    worst = 0.0;
    for i in 0..a.cases {
        let s = a.seed.wrapping_add(i as u64);
        if i % 2 == 0 {
            let g = gap_delta(&gen_random(s))?;
            worst = worst.max(-g.delta);
        } else {
            let g = gap_delta(&gen_gap_law(s))?;
            worst = worst.max((-g.delta).max(g.delta - g.delta_bound));
        }
    }
    suites.push(SuiteOutcome {
        name: "defect-bounds",
        cases: a.cases,
        worst,
        tolerance: 1e-9,
        passed: worst <= 1e-9,
    });

    // LP duality: an independent primal transport plan matches the dual value.
    worst = 0.0;
    for i in 0..a.cases {
        let p = gen_random(a.seed.wrapping_add(i as u64));
        let dual = robust_risk_dual(&p)?;
        let primal = robust_risk_primal(&p)?;
        worst = worst.max((dual.value - primal.value).abs());
    }
    suites.push(SuiteOutcome {
        name: "primal-dual",
        cases: a.cases,
        worst,
        tolerance: 1e-6,
        passed: worst <= 1e-6,
    });

    for s in &suites {
        println!(
            "[{}] {}: worst {:.3e} (tol {:.0e}) over {} cases",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.worst,
            s.tolerance,
            s.cases
        );
    }
    let all_pass = suites.iter().all(|s| s.passed);
    if let Some(out) = &a.out {
        let payload = CertifyPayload { suites, all_pass };
        report::write_json(out, &envelope("certify", a.seed, &payload))?;
        println!("report -> {}", out.display());
    }
    Ok(if all_pass { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// scatter
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ScatterArgs {
    /// Number of random models to score.
    #[arg(long, default_value_t = 100)]
    models: usize,
    /// Blob examples per class for the anchor cloud.
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Perturbation radius.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Ball norm of the perturbations.
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    norm: NormArg,
    /// Ascent steps per anchor.
    #[arg(long, default_value_t = 60)]
    steps: usize,
    /// Restarts of the empirical slope search.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scatter CSV destination.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// JSON report destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ScatterPayload {
    config: ScatterConfig,
    result: ScatterResult,
}

fn cmd_scatter(a: ScatterArgs) -> Result<i32> {
    let ds = gen_synthetic(
        &Synthetic::Blobs {
            per_class: a.per_class,
            classes: 2,
            dim: a.dim,
        },
        a.seed,
    )?;
    let cfg = ScatterConfig {
        n_models: a.models,
        delta: a.delta,
        norm: a.norm.dual(),
        steps: a.steps,
        restarts: a.restarts,
        seed: a.seed,
    };
    let result = adversarial_vs_regularised(&ds.points, &cfg)?;
    println!(
        "{} models: {:.1}% below the regularised bound, Pearson {:.4}",
        result.rows.len(),
        100.0 * result.frac_ok,
        result.pearson
    );
    if let Some(csv) = &a.csv {
        let rows: Vec<(usize, f64, f64)> = result
            .rows
            .iter()
            .map(|r| (r.model_id, r.adversarial, r.regularised))
            .collect();
        report::write_text(csv, &report::scatter_csv(&rows))?;
    }
    if let Some(out) = &a.out {
        let payload = ScatterPayload { config: cfg, result };
        report::write_json(out, &envelope("scatter", a.seed, &payload))?;
        println!("report -> {}", out.display());
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// spectrum
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum SpectrumKernelArg {
    Periodic,
    Gaussian,
    Inverse,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Kernel family to analyse.
    #[arg(long, value_enum)]
    kernel: SpectrumKernelArg,
    /// Period of the periodic kernel.
    #[arg(long, default_value_t = 1.0)]
    v: f64,
    /// Squared bandwidth; an alternative to --sigma.
    #[arg(long, conflicts_with = "sigma")]
    sigma2: Option<f64>,
    /// Bandwidth.
    #[arg(long)]
    sigma: Option<f64>,
    /// Highest frequency (or eigenvalue count) reported.
    #[arg(long, default_value_t = 50)]
    j_max: usize,
    /// Simpson panels behind the quadrature eigenvalues.
    #[arg(long, default_value_t = 4096)]
    quad_points: usize,
    /// Geometric decay base checked against the spectrum.
    #[arg(long, default_value_t = 2.0)]
    c4: f64,
    /// Decay prefactor.
    #[arg(long, default_value_t = 1.6)]
    c6: f64,
    /// Band-truncation tolerance behind the witness-count constants.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Failure probability of the theoretical witness count.
    #[arg(long, default_value_t = 0.05)]
    conf: f64,
    /// Ambient dimension (inverse spectrum and error curves).
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Total-degree cap of the inverse moment spectrum.
    #[arg(long, default_value_t = 8)]
    degree_cap: usize,
    /// Witness counts for a projection error curve, e.g. "4,8,16,32".
    #[arg(long)]
    curve: Option<String>,
    /// Independent witness draws per curve point.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `j,lambda` CSV destination.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// `n,median_error` CSV destination for the curve.
    #[arg(long)]
    curve_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct SpectrumPayload {
    spectrum: SpectrumReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    mercer_sum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay: Option<DecayCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    constants: Option<AssumptionConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theoretical_witnesses: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    curve: Option<ErrorCurve>,
}

fn cmd_spectrum(a: SpectrumArgs) -> Result<i32> {
    let sigma = a.sigma.or(a.sigma2.map(f64::sqrt)).unwrap_or(match a.kernel {
        SpectrumKernelArg::Periodic => 0.5f64.sqrt(),
        _ => 1.0,
    });

    let (base, mut payload) = match a.kernel {
        SpectrumKernelArg::Periodic => {
            let base = BaseKernel::Periodic {
                period: a.v,
                sigma,
            };
            let spectrum = periodic_eigenvalues(&base, a.j_max, a.quad_points)?;
            let mercer = periodic_mercer_sum(&spectrum.eigenvalues);
            let decay = decay_condition_check(&spectrum.eigenvalues, a.c4, a.c6);
            let constants = assumption_constants(&base, a.eps, a.c4, a.c6)?;
            let theoretical = constants.theoretical_witness_count(a.conf)?;
            println!(
                "periodic kernel (v {}, sigma {:.6}): {} eigenvalues, trace sum {:.9}",
                a.v,
                sigma,
                spectrum.eigenvalues.len(),
                mercer
            );
            match decay.first_violation {
                Some(j) => {
                    let row = &decay.rows[j];
                    println!(
                        "decay check (c4 {}, c6 {}): VIOLATED at j={} (lhs {:.6} > rhs {:.6})",
                        a.c4, a.c6, j, row.lhs, row.rhs
                    );
                }
                None => println!(
                    "decay check (c4 {}, c6 {}): holds through j={}",
                    a.c4,
                    a.c6,
                    spectrum.eigenvalues.len() - 1
                ),
            }
            println!(
                "band constants at eps {}: n_eps {}, m_eps {:.4}, q_eps {:.4}; \
                 {:.1} witnesses suffice at confidence {}",
                a.eps,
                constants.n_eps,
                constants.m_eps,
                constants.q_eps,
                theoretical,
                1.0 - a.conf
            );
            (
                Some(base),
                SpectrumPayload {
                    spectrum,
                    mercer_sum: Some(mercer),
                    decay: Some(decay),
                    constants: Some(constants),
                    theoretical_witnesses: Some(theoretical),
                    curve: None,
                },
            )
        }
        SpectrumKernelArg::Gaussian => {
            let spectrum = gaussian_eigenvalues_closed_form(sigma, a.j_max)?;
            println!(
                "gaussian kernel (sigma {:.6}): geometric spectrum, top eigenvalue {:.9}",
                sigma, spectrum.eigenvalues[0]
            );
            (
                Some(BaseKernel::Gaussian { sigma }),
                SpectrumPayload {
                    spectrum,
                    mercer_sum: None,
                    decay: None,
                    constants: None,
                    theoretical_witnesses: None,
                    curve: None,
                },
            )
        }
        SpectrumKernelArg::Inverse => {
            let spectrum = inverse_kernel_spectrum(a.dim, a.degree_cap)?;
            println!(
                "inverse kernel (dim {}, degree cap {}): {} moment eigenvalues, top {:.9}",
                a.dim,
                a.degree_cap,
                spectrum.eigenvalues.len(),
                spectrum.eigenvalues[0]
            );
            (
                None,
                SpectrumPayload {
                    spectrum,
                    mercer_sum: None,
                    decay: None,
                    constants: None,
                    theoretical_witnesses: None,
                    curve: None,
                },
            )
        }
    };

    let shown = payload.spectrum.eigenvalues.len().min(8);
    for (j, lam) in payload.spectrum.eigenvalues[..shown].iter().enumerate() {
        println!("  lambda[{j}] = {lam:.9e}");
    }

    if let Some(list) = &a.curve {
        let base = base.ok_or(Error::Unsupported(
            "error curves need a coordinate-wise product kernel with a sampling measure",
        ))?;
        let n_list = parse_usize_list(list, "curve")?;
        let theory = match a.kernel {
            SpectrumKernelArg::Periodic => Some(TheorySettings {
                eps: a.eps,
                delta: a.conf,
                c4: a.c4,
                c6: a.c6,
            }),
            _ => None,
        };
        let curve = nystrom_error_curve(
            base,
            a.dim,
            a.seed,
            &n_list,
            a.trials,
            a.seed.wrapping_add(1),
            theory,
        )?;
        println!("projection error curve (exact lambda {:.6e}):", curve.lambda_exact);
        for row in &curve.rows {
            println!("  n {:>5}  median error {:.6e}", row.n_witness, row.median_error);
        }
        if let Some(t) = curve.theoretical_n {
            println!("  theory asks for {t:.1} witnesses");
        }
        if let Some(csv) = &a.curve_csv {
            let rows: Vec<(usize, f64)> = curve
                .rows
                .iter()
                .map(|r| (r.n_witness, r.median_error))
                .collect();
            report::write_text(csv, &report::curve_csv(&rows))?;
        }
        payload.curve = Some(curve);
    }

    if let Some(csv) = &a.csv {
        report::write_text(csv, &report::spectrum_csv(&payload.spectrum.eigenvalues))?;
    }
    if let Some(out) = &a.out {
        report::write_json(out, &envelope("spectrum", a.seed, &payload))?;
        println!("report -> {}", out.display());
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// lipschitz
// ---------------------------------------------------------------------------

#[derive(Args)]
struct LipschitzArgs {
    /// Saved model bundle.
    #[arg(long)]
    model: PathBuf,
    /// Witness count behind the projected estimates.
    #[arg(long, default_value_t = 32)]
    witnesses: usize,
    /// Restarts of the search-based estimates.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Norm the slope is measured in (ball norm; the slope uses its dual).
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    norm: NormArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct LipschitzPayload {
    norm: DualNorm,
    n_witness: usize,
    restarts: usize,
    estimates: Vec<Vec<LipschitzEstimate>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    joint_l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    joint_linf: Option<f64>,
}

fn method_name(m: EstimateMethod) -> &'static str {
    match m {
        EstimateMethod::ExactDiag => "exact-diag",
        EstimateMethod::CoordNystrom => "coord-nystrom",
        EstimateMethod::HolisticNystrom => "holistic-nystrom",
        EstimateMethod::RkhsNorm => "rkhs-norm",
        EstimateMethod::EmpiricalSearch => "empirical-search",
    }
}

fn cmd_lipschitz(a: LipschitzArgs) -> Result<i32> {
    let bundle = ModelBundle::load(&a.model)?;
    let dim = bundle.models[0].dim();
    let domain = match bundle.models[0].kernel {
        KernelSpec::Product { .. } => DomainBox::new(vec![0.0; dim], vec![1.0; dim])?,
        KernelSpec::Inverse { .. } => {
            let e = 0.999 / (dim as f64).sqrt();
            DomainBox::new(vec![-e; dim], vec![e; dim])?
        }
    };
    let mut r = rng::stream(a.seed, 0x5A3D);
    let witnesses: Vec<Vec<f64>> = (0..a.witnesses).map(|_| domain.sample(&mut r)).collect();

    let mut estimates = Vec::with_capacity(bundle.models.len());
    for (idx, model) in bundle.models.iter().enumerate() {
        let ests = estimate_all(
            model,
            &witnesses,
            &domain,
            a.norm.dual(),
            a.restarts,
            a.seed ^ (idx as u64) << 8,
        )?;
        println!("model {idx}:");
        for est in &ests {
            println!(
                "  {:<18} slope {:<12.6} ({}{} witnesses {})",
                method_name(est.method),
                est.slope(),
                if est.squared { "squared value " } else { "value " },
                est.value,
                est.n_witness
            );
        }
        estimates.push(ests);
    }

    let (mut joint_l2, mut joint_linf) = (None, None);
    if bundle.models.len() > 1 {
        let factors: Result<Vec<_>> = bundle
            .models
            .iter()
            .map(|m| build_gradient_factor(m, &witnesses))
            .collect();
        let factors = factors?;
        let l2 = multiclass_l2_bound(&factors, a.restarts, a.seed)?;
        let linf = multiclass_linf_bound(&factors, a.restarts, a.seed)?;
        println!("joint score-map slope: l2 {l2:.6}, linf {linf:.6}");
        joint_l2 = Some(l2);
        joint_linf = Some(linf);
    }

    if let Some(out) = &a.out {
        let payload = LipschitzPayload {
            norm: a.norm.dual(),
            n_witness: a.witnesses,
            restarts: a.restarts,
            estimates,
            joint_l2,
            joint_linf,
        };
        report::write_json(out, &envelope("lipschitz", a.seed, &payload))?;
        println!("report -> {}", out.display());
    }
    Ok(0)
}
