use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use alpha_kernel::analysis::{
    conditional_mutual_information, coverage, kernel_quantiles, pairs_1d, sample_features,
    summarize_predictive, MiScales,
};
use alpha_kernel::data::{read_table, Dataset, Standardizer};
use alpha_kernel::experiments::{
    baseline_alpha2, mae, rmse, run_replicates, Scenario, SyntheticSpec, WORKERS_ENV,
};
use alpha_kernel::io::{self, RunManifest};
use alpha_kernel::stable::{laplace_transform_check, substream, StableSpec};
use alpha_kernel::{
    run_chain, Activation, Error, FirstLayerUpdate, KernelStack, ModelConfig, PointEstimate, Result,
};

#[derive(Parser)]
#[command(name = "alpha-kernel", version, about = "Deep alpha-stable kernel process regression")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a CSV dataset and predict at test inputs.
    Fit(FitArgs),
    /// Run replicates of a synthetic benchmark.
    Simulate(SimulateArgs),
    /// Conditional mutual information on a 1-d grid of input pairs.
    Mi(MiArgs),
    /// Posterior feature draws from a saved trace.
    Features(FeaturesArgs),
    /// Entrywise posterior quantiles of the output kernel from a saved trace.
    KernelDump(KernelDumpArgs),
    /// Laplace-transform check of the positive-stable sampler.
    ValidateRng(ValidateRngArgs),
}

/// Model and sampler settings shared by `fit` and `simulate`.
/// Unset flags fall back to the config file, then to built-in defaults.
#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// Flat `key = value` file with any of the settings below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Activation exponent: 0 (step) or 1 (ReLU).
    #[arg(long)]
    delta: Option<u32>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma2_init: Option<f64>,
    #[arg(long)]
    sigma2_step: Option<f64>,
    /// First-layer proposals: joint or coordinatewise.
    #[arg(long)]
    first_layer_update: Option<String>,
    /// Point prediction: mean or median of the predictive draws.
    #[arg(long)]
    point_estimate: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    target: String,
    /// Test inputs (the target column is optional and enables metrics).
    #[arg(long, conflicts_with = "test_fraction")]
    test_data: Option<PathBuf>,
    /// Hold out this fraction of the data, chosen with the seed.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Use raw inputs and responses.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long, default_value = "alpha-kernel-out")]
    out_dir: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, default_value_t = 0.5)]
    noise_sd: f64,
    /// Read the 2-d truth as 5·1{x1 > 0} + 5·1{x1 > 0}.
    #[arg(long)]
    literal_2d_truth: bool,
    /// Training size of the 10-d design.
    #[arg(long, default_value_t = 300)]
    n_train: usize,
    /// Test size of the 10-d design.
    #[arg(long, default_value_t = 300)]
    n_test: usize,
    /// Also run the alpha = 2 baseline on the same replicates.
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value = "alpha-kernel-out")]
    out_dir: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct MiArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2")]
    alpha_list: Vec<f64>,
    /// Pair distances; pairs are (anchor, anchor + d).
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1,1.5,2")]
    grid: Vec<f64>,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    anchor: f64,
    #[arg(long, default_value_t = 10_000)]
    mc_samples: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 1)]
    delta: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the kept scales of a 1-d trace instead of prior draws (exploratory).
    #[arg(long)]
    posterior_trace: Option<PathBuf>,
    #[arg(long, default_value = "alpha-kernel-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    /// trace.csv written by `fit`; manifest.json and inputs.csv are read
    /// from the same directory.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    layer: usize,
    #[arg(long, default_value_t = 1)]
    units: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to the trace directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct KernelDumpArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
    quantiles: Vec<f64>,
    /// Kept state (0-based row of the trace) whose full stack is written;
    /// defaults to the last one.
    #[arg(long)]
    state: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateRngArgs {
    #[arg(long)]
    alpha0: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write laplace.csv and manifest.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl ModelArgs {
    /// Flags, then the config file, then defaults.
    fn resolve(&self) -> Result<ModelConfig> {
        let mut file = match &self.config {
            Some(path) => io::read_config_file(path)?,
            None => BTreeMap::new(),
        };
        let mut c = ModelConfig::default();
        macro_rules! pick {
            ($flag:expr, $key:literal, $field:expr) => {
                let from_file = file.remove($key);
                if let Some(v) = $flag.clone() {
                    $field = v;
                } else if let Some(v) = from_file {
                    $field = parse($key, &v)?;
                }
            };
        }
        pick!(self.alpha, "alpha", c.alpha);
        pick!(self.layers, "layers", c.layers);
        pick!(self.iters, "iters", c.iterations);
        pick!(self.burn_in, "burn-in", c.burn_in);
        pick!(self.thin, "thin", c.thin);
        pick!(self.seed, "seed", c.seed);
        pick!(self.sigma2_init, "sigma2-init", c.sigma2_init);
        pick!(self.sigma2_step, "sigma2-step", c.sigma2_step);
        let mut delta: u32 = c.delta.exponent();
        pick!(self.delta, "delta", delta);
        c.delta = Activation::from_exponent(delta)?;
        let mut first = String::from("joint");
        pick!(self.first_layer_update, "first-layer-update", first);
        c.first_layer_update = match first.as_str() {
            "joint" => FirstLayerUpdate::Joint,
            "coordinatewise" => FirstLayerUpdate::Coordinatewise,
            other => return Err(Error::Config(format!("unknown first-layer-update {other:?}"))),
        };
        let mut point = String::from("mean");
        pick!(self.point_estimate, "point-estimate", point);
        c.point_estimate = match point.as_str() {
            "mean" => PointEstimate::Mean,
            "median" => PointEstimate::Median,
            other => return Err(Error::Config(format!("unknown point-estimate {other:?}"))),
        };
        if let Some(key) = file.keys().next() {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        c.validate()?;
        Ok(c)
    }
}

fn fit(args: FitArgs) -> Result<()> {
    let config = args.model.resolve()?;
    let mut manifest = RunManifest::new("fit", &config);
    manifest.add_input(&args.data)?;
    manifest.setting("target", &args.target);
    manifest.setting("standardize", !args.no_standardize);

    let table = read_table(&args.data, Some(&args.target), true)?;
    let (mut x, mut y) = (table.x, table.y.expect("target required"));
    let mut x_test: Option<DMatrix<f64>> = None;
    let mut y_test: Option<DVector<f64>> = None;
    if let Some(path) = &args.test_data {
        manifest.add_input(path)?;
        let t = read_table(path, Some(&args.target), false)?;
        if t.columns != table.columns {
            return Err(Error::Data(format!(
                "{}: input columns {:?} differ from training columns {:?}",
                path.display(),
                t.columns,
                table.columns
            )));
        }
        x_test = Some(t.x);
        y_test = t.y;
    } else if let Some(frac) = args.test_fraction {
        if !(frac > 0.0 && frac < 1.0) {
            return Err(Error::Config(format!("test fraction must lie in (0, 1), got {frac}")));
        }
        manifest.setting("test-fraction", frac);
        let n = x.nrows();
        let n_test = ((n as f64) * frac).round() as usize;
        if n_test == 0 || n - n_test < 2 {
            return Err(Error::Data(format!("cannot hold out {frac} of {n} rows")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut substream(config.seed, 3));
        let (test_idx, train_idx) = idx.split_at(n_test);
        let rows = |m: &DMatrix<f64>, ids: &[usize]| m.select_rows(ids.iter());
        x_test = Some(rows(&x, test_idx));
        y_test = Some(DVector::from_iterator(n_test, test_idx.iter().map(|&i| y[i])));
        let y_train = DVector::from_iterator(train_idx.len(), train_idx.iter().map(|&i| y[i]));
        x = rows(&x, train_idx);
        y = y_train;
    }
    // Without test inputs, predict at the training inputs.
    let x_pred = x_test.clone().unwrap_or_else(|| x.clone());

    let standardizer = (!args.no_standardize).then(|| Standardizer::fit(&x, &y));
    let (x_model, y_model, x_pred_model) = match &standardizer {
        Some(s) => (s.transform_x(&x), s.transform_y(&y), s.transform_x(&x_pred)),
        None => (x, y, x_pred),
    };
    let data = Dataset::new(x_model.clone(), y_model.clone())?.with_test(x_pred_model)?;
    let trace = run_chain(&data, &config)?;
    log::info!(
        "done: scale acceptance {:?}, sigma2 acceptance {:.3}, numeric rejections {}",
        (1..=config.layers).map(|l| trace.acceptance.scale_rate(l)).collect::<Vec<_>>(),
        trace.acceptance.sigma2_rate(),
        trace.numeric_rejections
    );

    let draws: Vec<Vec<f64>> = match &standardizer {
        Some(s) => trace.predictive_draws.iter().map(|d| s.inverse_y(d)).collect(),
        None => trace.predictive_draws.clone(),
    };
    let out = &args.out_dir;
    let summary = summarize_predictive(&draws)?;
    let point = summary.point(config.point_estimate).to_vec();
    io::write_summary(&out.join("predictions.csv"), &summary, Some(&point))?;
    io::write_predictive_draws(&out.join("predictive_draws.csv"), &draws)?;
    io::write_trace(&out.join("trace.csv"), &trace.rows)?;
    io::write_inputs(&out.join("inputs.csv"), &table.columns, &x_model, y_model.as_slice())?;
    manifest.outputs = ["predictions.csv", "predictive_draws.csv", "trace.csv", "inputs.csv"]
        .map(String::from)
        .to_vec();
    if let Some(y_test) = &y_test {
        let y = y_test.as_slice();
        let r = rmse(&point, y)?;
        let m = mae(&point, y)?;
        let c = coverage(&summary, y)?;
        io::write_rows(
            &out.join("metrics.csv"),
            &["rmse", "mae", "coverage"].map(String::from),
            [[r, m, c].map(|v| format!("{v}"))],
        )?;
        manifest.outputs.push("metrics.csv".into());
        println!("rmse {r:.4}  mae {m:.4}  coverage {c:.3}");
    }
    manifest.standardizer = standardizer;
    manifest.finish(out)?;
    println!("wrote {} kept states to {}", trace.len(), out.display());
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = args.model.resolve()?;
    let scenario: Scenario = args.scenario.parse()?;
    let spec = SyntheticSpec {
        scenario,
        noise_sd: args.noise_sd,
        seed: config.seed,
        literal_2d_truth: args.literal_2d_truth,
        n_train: args.n_train,
        n_test: args.n_test,
    };
    let mut manifest = RunManifest::new("simulate", &config);
    manifest.setting("scenario", scenario.name());
    manifest.setting("replicates", args.replicates);
    manifest.setting("noise-sd", args.noise_sd);
    manifest.setting("literal-2d-truth", args.literal_2d_truth);
    manifest.setting("baseline", args.baseline);
    if scenario == Scenario::Jump10d {
        manifest.setting("n-train", args.n_train);
        manifest.setting("n-test", args.n_test);
    }
    if let Ok(w) = std::env::var(WORKERS_ENV) {
        manifest.setting("workers", w);
    }
    let mut report = run_replicates(&spec, &config, args.replicates)?;
    if args.baseline {
        report.extend(baseline_alpha2(&spec, &config, args.replicates)?);
    }
    let out = &args.out_dir;
    io::write_metrics(&out.join("metrics.csv"), &report.rows)?;
    let aggregate = report.aggregate();
    io::write_aggregate(&out.join("aggregate.csv"), &aggregate)?;
    manifest.outputs = vec!["metrics.csv".into(), "aggregate.csv".into()];
    manifest.finish(out)?;
    for a in &aggregate {
        println!(
            "{} [{}]: rmse {:.3} ({:.3})  mae {:.3} ({:.3})  coverage {:.3} ({:.3})  failures {}",
            a.scenario, a.method, a.rmse.mean, a.rmse.sd, a.mae.mean, a.mae.sd, a.coverage.mean,
            a.coverage.sd, a.failures
        );
    }
    if aggregate.iter().any(|a| a.replicates == 0) {
        return Err(Error::Numeric("every replicate failed".into()));
    }
    Ok(())
}

fn mutual_information(args: MiArgs) -> Result<()> {
    let base = ModelConfig {
        layers: args.layers,
        delta: Activation::from_exponent(args.delta)?,
        seed: args.seed,
        ..Default::default()
    };
    let mut manifest = RunManifest::new("mi", &base);
    manifest.setting("alpha-list", format!("{:?}", args.alpha_list));
    manifest.setting("grid", format!("{:?}", args.grid));
    manifest.setting("anchor", args.anchor);
    manifest.setting("mc-samples", args.mc_samples);
    let posterior = match &args.posterior_trace {
        Some(path) => {
            manifest.add_input(path)?;
            manifest.setting("scales", "posterior (exploratory)");
            Some(io::read_trace(path)?)
        }
        None => {
            manifest.setting("scales", "prior");
            None
        }
    };
    let pairs = pairs_1d(args.anchor, &args.grid);
    let mut rows = Vec::new();
    for &alpha in &args.alpha_list {
        let config = ModelConfig { alpha, ..base.clone() };
        let scales = posterior.as_ref().map_or(MiScales::Prior, MiScales::Posterior);
        for e in conditional_mutual_information(&config, &pairs, args.mc_samples, scales)? {
            rows.push((alpha, e));
        }
    }
    io::write_mi(&args.out_dir.join("mi.csv"), &rows)?;
    manifest.outputs = vec!["mi.csv".into()];
    manifest.finish(&args.out_dir)?;
    for (alpha, e) in &rows {
        println!(
            "alpha {alpha:<4} d {:<6.4} mi {:.4} ± {:.4}{}",
            e.distance,
            e.mi,
            e.std_error,
            if e.flagged { "  (ceiling)" } else { "" }
        );
    }
    Ok(())
}

/// Trace, manifest and model-scale training data of a saved `fit` run.
fn load_run(trace_path: &Path) -> Result<(alpha_kernel::ChainTrace, RunManifest, Dataset)> {
    let dir = trace_path.parent().unwrap_or(Path::new("."));
    let trace = io::read_trace(trace_path)?;
    let manifest = RunManifest::read(&dir.join("manifest.json"))?;
    let table = read_table(&dir.join("inputs.csv"), Some("y"), true)?;
    let data = Dataset::new(table.x, table.y.expect("target required"))?;
    if let Some(row) = trace.rows.first() {
        row.scales.validate(data.input_dim(), manifest.config.layers)?;
    }
    Ok((trace, manifest, data))
}

fn features(args: FeaturesArgs) -> Result<()> {
    let (trace, run, data) = load_run(&args.trace)?;
    let out = args.out_dir.clone().unwrap_or_else(|| args.trace.parent().unwrap_or(Path::new(".")).into());
    let mut manifest = RunManifest::new("features", &run.config);
    manifest.add_input(&args.trace)?;
    manifest.setting("layer", args.layer);
    manifest.setting("units", args.units);
    manifest.setting("feature-seed", args.seed);
    let mut rng = substream(args.seed, 4);
    let draws = sample_features(&trace, &data, &run.config, args.layer, args.units, &mut rng)?;
    let name = format!("features_layer{}.csv", args.layer);
    io::write_features(&out.join(&name), &draws)?;
    manifest.outputs = vec![name.clone()];
    write_sub_manifest(manifest, &out, "features")?;
    println!("wrote {} feature draws to {}", draws.rows.len(), out.join(name).display());
    Ok(())
}

fn kernel_dump(args: KernelDumpArgs) -> Result<()> {
    let (trace, run, data) = load_run(&args.trace)?;
    let out = args.out_dir.clone().unwrap_or_else(|| args.trace.parent().unwrap_or(Path::new(".")).into());
    let mut manifest = RunManifest::new("kernel-dump", &run.config);
    manifest.add_input(&args.trace)?;
    manifest.setting("quantiles", format!("{:?}", args.quantiles));
    let kernels = trace
        .rows
        .iter()
        .map(|r| Ok(KernelStack::build(&data.x, &r.scales, &run.config)?.effective_output().clone()))
        .collect::<Result<Vec<_>>>()?;
    let quantiles = kernel_quantiles(&kernels, &args.quantiles)?;
    for (p, q) in args.quantiles.iter().zip(&quantiles) {
        let name = format!("kernel_q{}.csv", (p * 100.0).round());
        io::write_matrix(&out.join(&name), q)?;
        manifest.outputs.push(name);
    }
    let state = args.state.unwrap_or(trace.len() - 1);
    let row = trace.rows.get(state).ok_or_else(|| {
        Error::Usage(format!("--state {state} out of range: trace has {} kept states", trace.len()))
    })?;
    manifest.setting("state", state);
    let stack = KernelStack::build(&data.x, &row.scales, &run.config)?;
    for (l, m) in stack.layers().iter().enumerate() {
        let name = format!("stack_layer{}.csv", l + 1);
        io::write_matrix(&out.join(&name), m)?;
        manifest.outputs.push(name);
    }
    io::write_matrix(&out.join("stack_output.csv"), stack.effective_output())?;
    manifest.outputs.push("stack_output.csv".into());
    write_sub_manifest(manifest, &out, "kernel-dump")?;
    println!("wrote {} quantile matrices to {}", quantiles.len(), out.display());
    Ok(())
}

/// Commands that write next to a `fit` run keep its manifest intact.
fn write_sub_manifest(manifest: RunManifest, out: &Path, name: &str) -> Result<()> {
    manifest.finish_as(out, &format!("{name}_manifest.json"))?;
    Ok(())
}

fn validate_rng(args: ValidateRngArgs) -> Result<()> {
    let spec = StableSpec { alpha0: args.alpha0, seed: args.seed };
    let rows = laplace_transform_check(&spec, &args.lambdas, args.samples)?;
    println!("lambda  empirical  target  std_error  flagged");
    for r in &rows {
        println!(
            "{:<6}  {:.6}  {:.6}  {:.2e}  {}",
            r.lambda, r.empirical, r.target, r.std_error, r.flagged
        );
    }
    if let Some(out) = &args.out_dir {
        io::write_laplace(&out.join("laplace.csv"), args.alpha0, &rows)?;
        let mut manifest = RunManifest::new("validate-rng", &ModelConfig { seed: args.seed, ..Default::default() });
        manifest.setting("alpha0", args.alpha0);
        manifest.setting("samples", args.samples);
        manifest.setting("lambdas", format!("{:?}", args.lambdas));
        manifest.outputs = vec!["laplace.csv".into()];
        manifest.finish(out)?;
    }
    if rows.iter().any(|r| r.flagged) {
        return Err(Error::Numeric("Laplace transform check flagged".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Mi(a) => mutual_information(a),
        Command::Features(a) => features(a),
        Command::KernelDump(a) => kernel_dump(a),
        Command::ValidateRng(a) => validate_rng(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
