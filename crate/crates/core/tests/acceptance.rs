//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.
//!
//! `cargo test --test acceptance` runs all of them; pass criterion numbers
//! after `--` to run a subset, e.g. `cargo test --test acceptance -- 1 5 6`.
//! The MNIST criterion reads `data/mnist` at the workspace root (see
//! `scripts/fetch-mnist.sh`).

use std::path::PathBuf;
use std::time::{Duration, Instant};

use ldnn::conv::{build_convldnn, conv_error, train_convldnn, Activation, ConvLdnn, LayerSpec, StackSpec};
use ldnn::data::{gen_two_spirals, load_idx_limited, MoonsParams};
use ldnn::eval::{run_spirals, threshold_scan, BenchMethod, MoonsBench, SpiralsOutcome, TrialReport};
use ldnn::gradcheck::{run_all, DEFAULT_CONFIGS};
use ldnn::init::initialize_from_centroids;
use ldnn::model::sigmoid;
use ldnn::seed::rng_from;
use ldnn::train::History;
use ldnn::{saturation_agreement, DiscreteDnf, InitMode, LdnnModel, LossKind, TrainConfig};
use rand::Rng;

const SEED: u64 = 1;
const MOONS_TRIALS: usize = 50;
const MOONS_SIZES: [usize; 4] = [2, 3, 4, 5];
/// Trials per (size, method) cell re-run for the determinism check.
const RERUN_TRIALS: usize = 5;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> (bool, String) {
    (
        elapsed.as_secs_f64() < limit_secs as f64,
        format!("{:.1}s (limit {limit_secs}s)", elapsed.as_secs_f64()),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let report = match run_all(SEED, DEFAULT_CONFIGS) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("error: {e}")),
    };
    println!("{report}");
    let (fast, time) = within(start.elapsed(), 30);
    let worst = report.suites.iter().map(|s| s.max_relative_error).fold(0.0, f64::max);
    Outcome::new(
        report.passed() && fast,
        format!("{} suites x {DEFAULT_CONFIGS} configs, worst rel err {worst:.2e}, {time}", report.suites.len()),
    )
}

fn moons_bench(size: usize, method: BenchMethod) -> MoonsBench {
    MoonsBench {
        moons: MoonsParams {
            count: 1000,
            radius: 1.0,
            width: 0.7,
            separation: -0.7,
        },
        test_count: 1000,
        size,
        method,
        restarts: 50,
        train: TrainConfig {
            step: 0.3,
            momentum: 0.1,
            epochs: 500,
            loss: LossKind::Quadratic,
            ..TrainConfig::default()
        },
        data_seed: None,
    }
}

#[derive(Default)]
struct Cache {
    moons: Vec<(usize, BenchMethod, TrialReport)>,
    spirals: Option<(SpiralsOutcome, SpiralsOutcome)>,
    conv: Option<(f64, History)>,
}

impl Cache {
    fn moons(&self, size: usize, method: BenchMethod) -> Option<&TrialReport> {
        self.moons
            .iter()
            .find(|(s, m, _)| *s == size && *m == method)
            .map(|(_, _, r)| r)
    }

    fn moons_or_run(&mut self, size: usize, method: BenchMethod) -> ldnn::Result<TrialReport> {
        if let Some(r) = self.moons(size, method) {
            return Ok(r.clone());
        }
        let report = moons_bench(size, method).run_trials(MOONS_TRIALS, SEED, 1)?;
        self.moons.push((size, method, report.clone()));
        Ok(report)
    }
}

fn moons_cluster_n3(cache: &mut Cache) -> Outcome {
    let report = match cache.moons_or_run(3, BenchMethod::LdnnCluster) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("error: {e}")),
    };
    let s = report.test_error;
    let (fast, time) = within(report.wall_time(), 120);
    let ok = (1.0..=4.5).contains(&s.mean) && s.max <= 6.0 && report.failed.is_empty();
    Outcome::new(
        ok && fast,
        format!(
            "{} trials: test error mean {:.3}% min {:.3}% max {:.3}%, {time}",
            report.trials.len(),
            s.mean,
            s.min,
            s.max
        ),
    )
}

fn moons_ordering(cache: &mut Cache) -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    let mut total = Duration::ZERO;
    for size in MOONS_SIZES {
        let mut means = Vec::new();
        for method in BenchMethod::ALL {
            match cache.moons_or_run(size, method) {
                Ok(r) => {
                    total += r.wall_time();
                    means.push(r.test_error.mean);
                }
                Err(e) => return Outcome::new(false, format!("n={size} {}: {e}", method.label())),
            }
        }
        let (random, cluster, modn) = (means[0], means[1], means[2]);
        let row_ok = cluster <= random && cluster <= modn + 0.5;
        ok &= row_ok;
        lines.push(format!(
            "n={size}: cluster {cluster:.2} random {random:.2} modn {modn:.2}{}",
            if row_ok { "" } else { " (violated)" }
        ));
    }
    let (fast, time) = within(total, 600);
    Outcome::new(ok && fast, format!("{}; {time}", lines.join("; ")))
}

fn spirals_cfg() -> TrainConfig {
    TrainConfig {
        step: 0.3,
        momentum: 0.1,
        epochs: 2000,
        loss: LossKind::Quadratic,
        seed: SEED,
        ..TrainConfig::default()
    }
}

/// Largest threshold on a 0.05 grid whose per-class cluster counts satisfy `pick`.
fn find_threshold(pick: impl Fn(usize) -> bool) -> ldnn::Result<Option<f64>> {
    let scan = threshold_scan(&gen_two_spirals(), 4.0, 0.5, 0.05)?;
    Ok(scan.iter().find(|c| pick(c.positive) && pick(c.negative)).map(|c| c.threshold))
}

fn run_spirals_pair() -> ldnn::Result<Option<(SpiralsOutcome, SpiralsOutcome)>> {
    let (Some(wide), Some(eighteen)) = (
        find_threshold(|c| (24..=30).contains(&c))?,
        find_threshold(|c| c == 18)?,
    ) else {
        return Ok(None);
    };
    let data = gen_two_spirals();
    Ok(Some((
        run_spirals(&data, wide, &spirals_cfg())?,
        run_spirals(&data, eighteen, &spirals_cfg())?,
    )))
}

fn spirals(cache: &mut Cache) -> Outcome {
    let start = Instant::now();
    let (wide, eighteen) = match run_spirals_pair() {
        Ok(Some(pair)) => pair,
        Ok(None) => return Outcome::new(false, "no threshold gives the required cluster counts"),
        Err(e) => return Outcome::new(false, format!("error: {e}")),
    };
    let (fast, time) = within(start.elapsed(), 120);
    let ok = wide.ldnn_train_error == 0.0 && eighteen.modn_train_error > 0.0;
    let detail = format!(
        "d={:.2} ({}x{}): LDNN train error {:.3}% (first 0% epoch {}); d={:.2} ({}x{}): ModN train error {:.3}%, LDNN {:.3}%; {time}",
        wide.threshold,
        wide.groups,
        wide.per_group,
        wide.ldnn_train_error,
        wide.ldnn_first_zero_epoch.map_or("never".to_string(), |e| e.to_string()),
        eighteen.threshold,
        eighteen.groups,
        eighteen.per_group,
        eighteen.modn_train_error,
        eighteen.ldnn_train_error,
    );
    cache.spirals = Some((wide, eighteen));
    Outcome::new(ok && fast, detail)
}

fn random_model(rng: &mut impl Rng) -> LdnnModel {
    let n = rng.random_range(2..=5);
    let groups = rng.random_range(1..=4);
    let per = rng.random_range(1..=4);
    let w = (0..n * groups * per).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b = (0..groups * per).map(|_| rng.random_range(-1.0..1.0)).collect();
    LdnnModel::from_parts(n, groups, per, w, b).expect("valid shape")
}

fn saturation() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(SEED);
    let mut worst: f64 = 1.0;
    for _ in 0..20 {
        let model = random_model(&mut rng);
        let dnf = DiscreteDnf::new(model.clone());
        let mut points = Vec::with_capacity(1000);
        while points.len() < 1000 {
            let x: Vec<f64> = (0..model.inputs()).map(|_| rng.random_range(-3.0..3.0)).collect();
            if dnf.margin(&x) >= 0.1 {
                points.push(x);
            }
        }
        match saturation_agreement(&model, 1e3, &points, 0.1) {
            Ok(a) => worst = worst.min(a),
            Err(e) => return Outcome::new(false, format!("error: {e}")),
        }
    }
    let (fast, time) = within(start.elapsed(), 10);
    Outcome::new(
        worst == 1.0 && fast,
        format!("20 models x 1000 points, worst agreement {:.3}%, {time}", 100.0 * worst),
    )
}

fn init_invariants() -> Outcome {
    let mut rng = rng_from(SEED);
    let (mut norm_err, mut mid_err) = (0.0f64, 0.0f64);
    for config in 0..100u64 {
        let dim = rng.random_range(1..=6);
        let mut centroids = |k: usize| -> Vec<Vec<f64>> {
            (0..k)
                .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect()
        };
        let pos = centroids(1 + config as usize % 5);
        let neg = centroids(1 + config as usize / 20);
        let model = match initialize_from_centroids(&pos, &neg, config) {
            Ok(m) => m,
            Err(e) => return Outcome::new(false, format!("error: {e}")),
        };
        for (i, p) in pos.iter().enumerate() {
            for (j, q) in neg.iter().enumerate() {
                let w = model.discriminant(i, j);
                norm_err = norm_err.max((w.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs());
                let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
                let z = model.preactivation(i * model.per_group() + j, &mid);
                mid_err = mid_err.max((sigmoid(z) - 0.5).abs());
            }
        }
    }
    Outcome::new(
        norm_err <= 1e-12 && mid_err <= 1e-12,
        format!("100 configs: max | ||w|| - 1 | = {norm_err:.1e}, max |sigma(mid) - 0.5| = {mid_err:.1e}"),
    )
}

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn conv_spec() -> StackSpec {
    StackSpec {
        input: [1, 28, 28],
        layers: vec![
            LayerSpec::Conv {
                maps_out: 8,
                kernel: 5,
                activation: Activation::Logistic,
            },
            LayerSpec::Pool { window: 2 },
            LayerSpec::Conv {
                maps_out: 16,
                kernel: 5,
                activation: Activation::Logistic,
            },
            LayerSpec::Pool { window: 2 },
        ],
    }
}

fn conv_run() -> ldnn::Result<(f64, History)> {
    let dir = mnist_dir();
    let train = load_idx_limited(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"), Some(10_000))?;
    let test = load_idx_limited(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"), None)?;
    let heads = InitMode::Kmeans {
        groups: 4,
        per_group: 4,
        restarts: 3,
    };
    let net: ConvLdnn = build_convldnn(&conv_spec(), &train, &heads, SEED)?;
    let cfg = TrainConfig {
        step: 0.3,
        momentum: 0.1,
        epochs: 5,
        loss: LossKind::CrossEntropy,
        seed: SEED,
        ..TrainConfig::default()
    };
    let (net, history) = train_convldnn(net, &train, &cfg)?;
    Ok((conv_error(&net, &test)?, history))
}

fn conv_smoke(cache: &mut Cache) -> Outcome {
    if !mnist_dir().join("train-images-idx3-ubyte").exists() {
        return Outcome::new(
            false,
            format!(
                "MNIST not found in {}; run scripts/fetch-mnist.sh first",
                mnist_dir().display()
            ),
        );
    }
    let start = Instant::now();
    let (test_error, history) = match conv_run() {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("error: {e}")),
    };
    let (fast, time) = within(start.elapsed(), 900);
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.train_loss).collect();
    let decreasing = losses.len() >= 3 && losses[0] > losses[1] && losses[1] > losses[2];
    let detail = format!(
        "test error {test_error:.2}% on 10000 images, epoch losses {}, {time}",
        losses.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>().join(" > ")
    );
    cache.conv = Some((test_error, history));
    Outcome::new(test_error <= 6.0 && decreasing && fast, detail)
}

fn same_trials(a: &TrialReport, b: &TrialReport) -> bool {
    a.trials.len() <= b.trials.len()
        && a.trials.iter().zip(&b.trials).all(|(x, y)| {
            x.seed == y.seed && x.train_error == y.train_error && x.test_error == y.test_error && x.epochs == y.epochs
        })
}

/// Re-runs every benchmark and compares error numbers exactly. Moons cells
/// re-run their first `RERUN_TRIALS` seeds against the full 50-trial reports
/// when those exist in this process.
fn determinism(cache: &mut Cache) -> Outcome {
    let mut mismatches = Vec::new();
    let mut checked = Vec::new();
    for size in MOONS_SIZES {
        for method in BenchMethod::ALL {
            let bench = moons_bench(size, method);
            let rerun = |reps| bench.run_trials(reps, SEED, 1);
            let (first, second) = match cache.moons(size, method) {
                Some(full) => (full.clone(), rerun(RERUN_TRIALS)),
                None => match rerun(RERUN_TRIALS) {
                    Ok(r) => (r, rerun(RERUN_TRIALS)),
                    Err(e) => return Outcome::new(false, format!("error: {e}")),
                },
            };
            match second {
                Ok(second) if same_trials(&second, &first) => {}
                Ok(_) => mismatches.push(format!("moons n={size} {}", method.label())),
                Err(e) => return Outcome::new(false, format!("error: {e}")),
            }
        }
    }
    checked.push(format!("moons {} cells x {RERUN_TRIALS} trials", MOONS_SIZES.len() * 3));

    let first = match cache.spirals.take() {
        Some(p) => Ok(Some(p)),
        None => run_spirals_pair(),
    };
    match (first, run_spirals_pair()) {
        (Ok(a), Ok(b)) => {
            if a != b {
                mismatches.push("spirals".into());
            }
            checked.push("spirals".into());
        }
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("error: {e}")),
    }

    if mnist_dir().join("train-images-idx3-ubyte").exists() {
        let first = match cache.conv.take() {
            Some(r) => Ok(r),
            None => conv_run(),
        };
        match (first, conv_run()) {
            (Ok(a), Ok(b)) => {
                if a != b {
                    mismatches.push("mnist conv".into());
                }
                checked.push("mnist conv".into());
            }
            (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("error: {e}")),
        }
    } else {
        mismatches.push("mnist conv (data missing)".into());
    }
    if mismatches.is_empty() {
        Outcome::new(true, format!("identical on re-run: {}", checked.join(", ")))
    } else {
        Outcome::new(false, format!("differs: {}", mismatches.join(", ")))
    }
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: usize| selected.is_empty() || selected.contains(&k);
    let mut cache = Cache::default();
    let criteria: [(usize, &str, &mut dyn FnMut(&mut Cache) -> Outcome); 8] = [
        (1, "gradient suite", &mut |_| gradient_suite()),
        (2, "two moons 3x3 cluster init", &mut moons_cluster_n3),
        (3, "two moons method ordering", &mut moons_ordering),
        (4, "two spirals", &mut spirals),
        (5, "saturation oracle", &mut |_| saturation()),
        (6, "initialization invariants", &mut |_| init_invariants()),
        (7, "mnist conv smoke", &mut conv_smoke),
        (8, "determinism", &mut determinism),
    ];
    let mut results = Vec::new();
    for (k, name, run) in criteria {
        if !wanted(k) {
            continue;
        }
        let outcome = run(&mut cache);
        let line = format!(
            "criterion {k} ({name}): {} - {}",
            if outcome.passed { "PASS" } else { "FAIL" },
            outcome.detail
        );
        println!("{line}");
        results.push((outcome.passed, line));
    }
    println!("\nsummary");
    for (_, line) in &results {
        println!("{line}");
    }
    if results.iter().any(|(passed, _)| !passed) {
        std::process::exit(1);
    }
}
