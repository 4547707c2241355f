use std::path::Path;
use std::time::Instant;

use ldnn::conv::{build_convldnn, conv_error, train_convldnn, ConvLdnn, StackSpec};
use ldnn::data::{
    apply_transform, gen_two_moons, gen_two_spirals, load_csv, load_idx_limited, normalize, write_csv, MoonsParams,
    NormalizeMode, Transform,
};
use ldnn::eval::{
    error_rate, rasterize_boundary, results_table, run_spirals, run_trials, threshold_scan, BenchMethod, Lattice,
    MoonsBench, TableRow, Trial,
};
use ldnn::modn::{train_modn, ModnModel};
use ldnn::{fit, fit_multiclass, Dataset, History, InitMode, LdnnError, LdnnModel, MulticlassModel, TrainConfig};

use crate::config::{ConvSettings, DataSource, ExperimentConfig};
use crate::{BenchMoonsArgs, BenchSpiralsArgs, BoundaryArgs, CliError, EvalArgs, OptimArgs, TrainArgs, TrainConvArgs};

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}

pub fn gen_moons(count: usize, radius: f64, width: f64, separation: f64, seed: u64, out: &Path) -> Result<(), CliError> {
    let params = MoonsParams {
        count,
        radius,
        width,
        separation,
    };
    let data = gen_two_moons(&params, seed)?;
    write_csv(&data, out)?;
    println!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}

pub fn gen_spirals(out: &Path) -> Result<(), CliError> {
    let data = gen_two_spirals();
    write_csv(&data, out)?;
    println!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}

fn apply_optim(cfg: &mut ExperimentConfig, optim: &OptimArgs) {
    if let Some(v) = optim.step {
        cfg.train.step = v;
    }
    if let Some(v) = optim.momentum {
        cfg.train.momentum = v;
    }
    if let Some(v) = optim.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = optim.loss {
        cfg.train.loss = v.into();
    }
    if optim.val_fraction.is_some() || optim.patience.is_some() {
        let mut stop = cfg.train.early_stop.unwrap_or_default();
        if let Some(v) = optim.val_fraction {
            stop.val_fraction = v;
        }
        if let Some(v) = optim.patience {
            stop.patience = v;
        }
        cfg.train.early_stop = Some(stop);
    }
    if let Some(v) = optim.seed {
        cfg.seed = v;
    }
    if let Some(p) = &optim.out {
        cfg.out = Some(p.clone());
    }
    if let Some(p) = &optim.history {
        cfg.history = Some(p.clone());
    }
}

fn train_config(args: &TrainArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let csv = |path: &Path, existing: &Option<DataSource>| {
        let inherited = match existing {
            Some(DataSource::Csv { label_column, .. }) => *label_column,
            _ => Default::default(),
        };
        DataSource::Csv {
            path: path.to_path_buf(),
            label_column: args.label_column.unwrap_or(inherited),
        }
    };
    if let Some(p) = &args.data {
        cfg.data = Some(csv(p, &cfg.data));
    }
    if let Some(p) = &args.test_data {
        cfg.test_data = Some(csv(p, &cfg.test_data));
    }
    if let Some(lc) = args.label_column {
        for source in [&mut cfg.data, &mut cfg.test_data].into_iter().flatten() {
            if let DataSource::Csv { label_column, .. } = source {
                *label_column = lc;
            }
        }
    }
    if let Some(n) = args.normalize {
        cfg.normalize = n.into();
    }
    if let Some(v) = args.n_groups {
        cfg.groups = v;
    }
    if let Some(v) = args.m_disc {
        cfg.per_group = v;
    }
    if let Some(v) = args.init {
        cfg.init = v;
    }
    if let Some(v) = args.restarts {
        cfg.restarts = v;
    }
    if let Some(v) = args.threshold {
        cfg.threshold = Some(v);
    }
    if args.modn {
        cfg.modn = true;
    }
    if let Some(v) = args.repetitions {
        cfg.repetitions = v;
    }
    apply_optim(&mut cfg, &args.optim);
    Ok(cfg.settle())
}

/// Training and optional test data, normalized as configured.
fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Dataset>, Option<Transform>), CliError> {
    let source = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("no training data: pass --data or set `data` in the config".into()))?;
    let train = source.load()?;
    let test = cfg.test_data.as_ref().map(DataSource::load).transpose()?;
    if cfg.normalize == NormalizeMode::None {
        return Ok((train, test, None));
    }
    let (train, transform) = normalize(&train, cfg.normalize)?;
    let test = match (&test, &transform) {
        (Some(t), Some(tr)) => Some(apply_transform(tr, t)?),
        _ => test,
    };
    Ok((train, test, transform))
}

enum Trained {
    Single(LdnnModel, History),
    Modn(ModnModel),
    Multi(MulticlassModel, History),
}

impl Trained {
    fn error(&self, data: &Dataset) -> ldnn::Result<f64> {
        match self {
            Trained::Single(m, _) => error_rate(m, data),
            Trained::Modn(m) => error_rate(m, data),
            Trained::Multi(m, _) => error_rate(m, data),
        }
    }

    fn epochs(&self, cfg: &TrainConfig) -> usize {
        match self {
            Trained::Single(_, h) | Trained::Multi(_, h) => h.epochs.len(),
            Trained::Modn(_) => cfg.schedule().len(),
        }
    }
}

fn fit_once(cfg: &ExperimentConfig, init: &InitMode, data: &Dataset, seed: u64) -> ldnn::Result<Trained> {
    let train = TrainConfig {
        seed,
        ..cfg.train_config()
    };
    if data.classes() > 2 {
        if cfg.modn {
            return Err(LdnnError::Parameter("the modular baseline is binary only".into()));
        }
        let (m, h) = fit_multiclass(data, init, &train)?;
        return Ok(Trained::Multi(m, h));
    }
    if cfg.modn {
        return Ok(Trained::Modn(train_modn(data, init, &train)?));
    }
    let (m, h) = fit(data, init, &train)?;
    Ok(Trained::Single(m, h))
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = train_config(&args)?;
    if args.config.dump_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    if cfg.conv.is_some() {
        return Err(CliError::Usage("config has a conv stack; use train-conv".into()));
    }
    let init = cfg.init_mode()?;
    let (data, test, transform) = load_data(&cfg)?;
    if cfg.repetitions > 1 {
        let name = format!("{} repetitions", cfg.repetitions);
        let report = run_trials(&name, cfg.repetitions, cfg.seed, args.jobs, |seed| {
            let start = Instant::now();
            let model = fit_once(&cfg, &init, &data, seed)?;
            let train_error = model.error(&data)?;
            Ok(Trial {
                seed,
                train_error,
                test_error: match &test {
                    Some(t) => model.error(t)?,
                    None => train_error,
                },
                epochs: model.epochs(&cfg.train),
                wall_time: start.elapsed(),
            })
        })?;
        print!("{}", report.to_table());
        if let Some(out) = &cfg.out {
            write_text(out, &report.to_json())?;
        }
        return Ok(());
    }
    let model = fit_once(&cfg, &init, &data, cfg.seed)?;
    println!("train error: {:.4}%", model.error(&data)?);
    if let Some(t) = &test {
        println!("test error: {:.4}%", model.error(t)?);
    }
    if let Some(out) = &cfg.out {
        let text = match &model {
            Trained::Single(m, _) => m.to_json(),
            Trained::Modn(m) => m.grid().to_json(),
            Trained::Multi(m, _) => m.to_json(),
        };
        write_text(out, &text)?;
        if let Some(tr) = &transform {
            write_text(&out.with_extension("transform.json"), &to_json(tr))?;
        }
    }
    if let Some(path) = &cfg.history {
        match &model {
            Trained::Single(_, h) | Trained::Multi(_, h) => write_text(path, &to_json(h))?,
            Trained::Modn(_) => log::warn!("the modular baseline keeps no per-epoch history"),
        }
    }
    Ok(())
}

fn conv_config(args: &TrainConvArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::conv_default(),
    };
    let idx = |images: &Option<std::path::PathBuf>, labels: &Option<std::path::PathBuf>, limit| match (images, labels)
    {
        (Some(i), Some(l)) => Ok(Some(DataSource::Idx {
            images: i.clone(),
            labels: l.clone(),
            limit,
        })),
        (None, None) => Ok(None),
        _ => Err(CliError::Usage("image and label files must be given together".into())),
    };
    if let Some(src) = idx(&args.train_images, &args.train_labels, args.limit)? {
        cfg.data = Some(src);
    } else if let (Some(DataSource::Idx { limit, .. }), Some(l)) = (&mut cfg.data, args.limit) {
        *limit = Some(l);
    }
    if let Some(src) = idx(&args.test_images, &args.test_labels, None)? {
        cfg.test_data = Some(src);
    }
    let conv = cfg.conv.get_or_insert_with(ConvSettings::default);
    if let Some(p) = &args.stack {
        conv.stack = serde_json::from_str::<StackSpec>(&read_text(p)?)
            .map_err(|e| CliError::Usage(format!("invalid stack spec {}: {e}", p.display())))?;
    }
    if let Some(v) = args.head_groups {
        conv.head_groups = v;
    }
    if let Some(v) = args.head_per_group {
        conv.head_per_group = v;
    }
    if let Some(v) = args.head_init {
        conv.head_init = v;
    }
    if let Some(v) = args.head_restarts {
        conv.head_restarts = v;
    }
    apply_optim(&mut cfg, &args.optim);
    Ok(cfg.settle())
}

pub fn train_conv(args: TrainConvArgs) -> Result<(), CliError> {
    let cfg = conv_config(&args)?;
    if args.config.dump_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let conv = cfg.conv.clone().unwrap_or_default();
    let (data, test, _) = load_data(&ExperimentConfig {
        normalize: NormalizeMode::None,
        ..cfg.clone()
    })?;
    let net = build_convldnn(&conv.stack, &data, &conv.head_init_mode()?, cfg.seed)?;
    let (net, history) = train_convldnn(net, &data, &cfg.train_config())?;
    for e in &history.epochs {
        println!("epoch {}: loss {:.6}, online train error {:.3}%", e.epoch, e.train_loss, e.train_error);
    }
    println!("train error: {:.4}%", conv_error(&net, &data)?);
    if let Some(t) = &test {
        println!("test error: {:.4}%", conv_error(&net, t)?);
    }
    if let Some(out) = &cfg.out {
        write_text(out, &net.to_json())?;
    }
    if let Some(path) = &cfg.history {
        write_text(path, &to_json(&history))?;
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let text = read_text(&args.model)?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", args.model.display())))?;
    let data = match (&args.data, &args.images, &args.labels) {
        (Some(p), _, _) => load_csv(p, args.label_column)?,
        (None, Some(i), Some(l)) => load_idx_limited(i, l, args.limit)?,
        _ => return Err(CliError::Usage("pass --data or --images/--labels".into())),
    };
    let data = match &args.transform {
        Some(p) => {
            let tr: Transform = serde_json::from_str(&read_text(p)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            apply_transform(&tr, &data)?
        }
        None => data,
    };
    let rate = if doc.get("layers").is_some() {
        error_rate(&ConvLdnn::from_json(&text)?, &data)?
    } else if doc.get("classes").is_some() {
        error_rate(&MulticlassModel::from_json(&text)?, &data)?
    } else if args.modn {
        error_rate(&ModnModel::new(LdnnModel::from_json(&text)?, true), &data)?
    } else {
        error_rate(&LdnnModel::from_json(&text)?, &data)?
    };
    println!("error rate: {rate:.4}% ({} instances)", data.len());
    Ok(())
}

pub fn grad_check(seed: u64, configs: usize) -> Result<(), CliError> {
    if configs == 0 {
        return Err(CliError::Usage("--configs must be positive".into()));
    }
    let report = ldnn::gradcheck::run_all(seed, configs)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failure("gradient check failed".into()))
    }
}

pub fn bench_moons(args: BenchMoonsArgs) -> Result<(), CliError> {
    let train = TrainConfig {
        step: args.step,
        momentum: args.momentum,
        epochs: args.epochs,
        ..TrainConfig::default()
    };
    train.validate()?;
    let mut rows = Vec::new();
    for &size in &args.sizes {
        let mut reports = Vec::new();
        for method in BenchMethod::ALL {
            let bench = MoonsBench {
                moons: MoonsParams {
                    count: args.count,
                    ..MoonsParams::default()
                },
                test_count: args.test_count,
                size,
                method,
                restarts: args.restarts,
                train: train.clone(),
                data_seed: args.fixed_data.then_some(args.seed),
            };
            let start = Instant::now();
            let report = bench.run_trials(args.reps, args.seed, args.jobs)?;
            log::info!(
                "{}: mean test error {:.3}% ({:.1}s)",
                report.name,
                report.test_error.mean,
                start.elapsed().as_secs_f64()
            );
            for f in &report.failed {
                eprintln!("{}: seed {} diverged: {}", report.name, f.seed, f.message);
            }
            reports.push((method, report));
        }
        rows.push(TableRow { size, reports });
    }
    println!(
        "two moons test error % over {} trials (seeds {}..{}){}",
        args.reps,
        args.seed,
        args.seed + args.reps as u64 - 1,
        if args.fixed_data { ", one fixed train/test draw" } else { "" }
    );
    print!("{}", results_table(&rows));
    if let Some(path) = &args.json {
        write_text(path, &to_json(&rows))?;
    }
    Ok(())
}

pub fn bench_spirals(args: BenchSpiralsArgs) -> Result<(), CliError> {
    let data = gen_two_spirals();
    if args.scan {
        let scan = threshold_scan(&data, 4.0, 0.5, 0.05)?;
        println!("{:>9} {:>9} {:>9}", "threshold", "positive", "negative");
        for c in &scan {
            println!("{:>9.2} {:>9} {:>9}", c.threshold, c.positive, c.negative);
        }
        if let Some(path) = &args.json {
            write_text(path, &to_json(&scan))?;
        }
        return Ok(());
    }
    let cfg = TrainConfig {
        step: args.step,
        momentum: args.momentum,
        epochs: args.epochs,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let mut outcomes = Vec::new();
    println!(
        "{:>9} {:>7} {:>14} {:>16} {:>14}",
        "threshold", "grid", "LDNN train %", "first 0% epoch", "ModN train %"
    );
    for &threshold in &args.thresholds {
        let o = run_spirals(&data, threshold, &cfg)?;
        println!(
            "{:>9.2} {:>7} {:>14.3} {:>16} {:>14.3}",
            o.threshold,
            format!("{}x{}", o.groups, o.per_group),
            o.ldnn_train_error,
            o.ldnn_first_zero_epoch.map_or("-".to_string(), |e| e.to_string()),
            o.modn_train_error
        );
        outcomes.push(o);
    }
    if let Some(path) = &args.json {
        write_text(path, &to_json(&outcomes))?;
    }
    Ok(())
}

pub fn boundary(args: BoundaryArgs) -> Result<(), CliError> {
    let model = LdnnModel::from_json(&read_text(&args.model)?)?;
    let lattice = Lattice {
        x_range: (args.x_min, args.x_max),
        y_range: (args.y_min, args.y_max),
        resolution: args.resolution,
    };
    let raster = rasterize_boundary(&model, lattice)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out_dir.display())))?;
    raster.write_all(&args.out_dir, &args.stem)?;
    println!(
        "wrote {stem}.pgm, {stem}.csv, {stem}_mask.pgm and {} conjunction images to {}",
        raster.conjunctions.len(),
        args.out_dir.display(),
        stem = args.stem
    );
    Ok(())
}
