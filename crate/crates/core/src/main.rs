use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spatial_ivae::compositional::load_composition_csv;
use spatial_ivae::dataset::{Domain2D, SpatialDataset};
use spatial_ivae::evaluation::{correlation_matrix, mcc, median, write_mcc_csv, MccRow};
use spatial_ivae::experiment::{
    run_explain, simulate, train_checkpoint, write_config_echo, write_study, Direction, ExperimentConfig, PreparedData,
};
use spatial_ivae::ivae::{write_trace_csv, Checkpoint, Preprocessing};
use spatial_ivae::kriging::{bss_krige_crossvalidate, clr_mean_baseline, write_report_csv, CvConfig, KrigingKind};
use spatial_ivae::segmentation::GridSpec;
use spatial_ivae::shap::DEFAULT_BUDGET;
use spatial_ivae::{Error, Result};

#[derive(Parser)]
#[command(name = "spatial-ivae", version, about = "Nonlinear blind source separation for spatial data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate latent fields and their nonlinear mixture.
    Simulate(SimulateArgs),
    /// Train an iVAE on observed data.
    Train(TrainArgs),
    /// Extract latents with a trained model and score them against the truth.
    Evaluate(EvaluateArgs),
    /// Scaled MASHAP of a trained model.
    Explain(ExplainArgs),
    /// Cross-validated iVAE + kriging prediction of compositions.
    Krige(KrigeArgs),
    /// Repeated simulate/train/evaluate runs.
    Study(StudyArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// JSON configuration; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Grid cell counts such as `20x20`.
    #[arg(long, conflicts_with = "cell_size")]
    grid: Option<GridSpec>,
    /// Side length of square cells.
    #[arg(long)]
    cell_size: Option<f64>,
}

impl GridArgs {
    fn resolve(&self, default: GridSpec) -> GridSpec {
        match (self.grid, self.cell_size) {
            (Some(g), _) => g,
            (None, Some(s)) => GridSpec::CellSize(s),
            (None, None) => default,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    setting: Option<u8>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: GridArgs,
    /// Data CSV: `sx,sy,...,x1..xd` or, with `--compositional`, raw parts.
    #[arg(long)]
    data: PathBuf,
    /// Treat the data as a composition table and train on ilr coordinates.
    #[arg(long)]
    compositional: bool,
    #[arg(long)]
    epochs: Option<usize>,
    /// Domain as `x_min,x_max,y_min,y_max`; defaults to the bounding box.
    #[arg(long, value_parser = parse_domain)]
    domain: Option<Domain2D>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Data CSV with true latents.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    setting: u8,
    #[arg(long, default_value_t = 0)]
    layers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "mixing")]
    direction: Direction,
    /// Coalitions per explained row.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// Background rows chosen by farthest-point selection.
    #[arg(long, default_value_t = 50)]
    background: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct KrigeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: GridArgs,
    /// Composition CSV with `sx` and `sy` columns.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = parse_domain)]
    domain: Option<Domain2D>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum KindArg {
    Ordinary,
    Universal,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    setting: Option<u8>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

fn parse_domain(s: &str) -> std::result::Result<Domain2D, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [a, b, c, d] => Domain2D::new(a, b, c, d).map_err(|e| e.to_string()),
        _ => Err("domain needs four numbers".into()),
    }
}

fn experiment_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.out = common.out.clone();
    Ok(cfg)
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let mut cfg = experiment_config(&a.common)?;
    cfg.setting = a.setting.unwrap_or(cfg.setting);
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.layers = a.layers.unwrap_or(cfg.layers);
    let (data, spec) = simulate(cfg.setting, cfg.n, cfg.layers, cfg.seed)?;
    fs::create_dir_all(&cfg.out)?;
    data.save_csv(cfg.out.join("data.csv"))?;
    spec.save_json(cfg.out.join("mixing.json"))?;
    write_config_echo(&cfg.out, &cfg)?;
    println!("wrote {} rows to {}", data.len(), cfg.out.join("data.csv").display());
    Ok(())
}

fn load_prepared(path: &Path, compositional: bool) -> Result<PreparedData> {
    if compositional {
        PreparedData::from_compositions(&load_composition_csv(path)?)
    } else {
        PreparedData::from_dataset(&SpatialDataset::load_csv(path)?)
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = experiment_config(&a.common)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = a.common.seed.unwrap_or(tcfg.seed);
    tcfg.epochs = a.epochs.unwrap_or(tcfg.epochs);
    let grid = a.grid.resolve(cfg.grid);
    let data = load_prepared(&a.data, a.compositional)?;
    let domain = match a.domain {
        Some(d) => d,
        None => Domain2D::bounding(&data.locations)?,
    };
    let (ck, fitted) = train_checkpoint(&data, &domain, grid, &tcfg)?;
    fs::create_dir_all(&cfg.out)?;
    ck.save_json(&cfg.out.join("model.json"))?;
    write_trace_csv(&fitted.trace, &cfg.out.join("trace.csv"))?;
    write_config_echo(&cfg.out, &tcfg)?;
    println!(
        "trained on {} rows with m = {}; final ELBO {:.4}",
        data.x.nrows(),
        ck.model.m,
        fitted.trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_for_checkpoint(ck: &Checkpoint, path: &Path) -> Result<PreparedData> {
    load_prepared(path, matches!(ck.preprocessing, Preprocessing::Ilr { .. }))
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let ck = Checkpoint::load_json(&a.model)?;
    let data = SpatialDataset::load_csv(&a.data)?;
    let prepared = PreparedData::from_dataset(&data)?;
    let segments = ck.segmentation.assign(&prepared.locations)?;
    let z_hat = ck.model.extract_latents(&prepared.x, &segments)?;
    let k = correlation_matrix(&z_hat, data.latents()?)?;
    let row = MccRow {
        setting: a.setting,
        layers: a.layers,
        seed: a.seed,
        method: "iVAE".into(),
        mcc: mcc(&k)?,
    };
    fs::create_dir_all(&a.out)?;
    let latents = SpatialDataset::new(data.locations.clone(), None, Some(z_hat), None)?;
    latents.save_csv(a.out.join("latents.csv"))?;
    write_mcc_csv(std::slice::from_ref(&row), fs::File::create(a.out.join("mcc.csv"))?)?;
    write_config_echo(
        &a.out,
        &serde_json::json!({"model": a.model, "data": a.data, "setting": a.setting, "layers": a.layers, "seed": a.seed}),
    )?;
    println!("mcc {:.6}", row.mcc);
    Ok(())
}

fn explain_cmd(a: ExplainArgs) -> Result<()> {
    let ck = Checkpoint::load_json(&a.model)?;
    let data = load_for_checkpoint(&ck, &a.data)?;
    let e = run_explain(&ck, &data, a.direction, a.budget, a.background.min(data.x.nrows()), a.seed)?;
    fs::create_dir_all(&a.out)?;
    e.write_csv(&a.out.join("mashap.csv"))?;
    write_config_echo(
        &a.out,
        &serde_json::json!({
            "model": a.model, "data": a.data, "direction": a.direction,
            "budget": a.budget, "background": a.background, "seed": a.seed,
            "zero_rows": e.report.zero_rows,
        }),
    )?;
    println!("wrote {}", a.out.join("mashap.csv").display());
    Ok(())
}

fn krige_cmd(a: KrigeArgs) -> Result<()> {
    let mut cfg = match &a.common.config {
        Some(p) => serde_json::from_str::<CvConfig>(&fs::read_to_string(p)?)?,
        None => CvConfig::default(),
    };
    cfg.seed = a.common.seed.unwrap_or(cfg.seed);
    cfg.folds = a.folds.unwrap_or(cfg.folds);
    cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
    cfg.grid = a.grid.resolve(cfg.grid);
    if let Some(k) = a.kind {
        cfg.kind = match k {
            KindArg::Ordinary => KrigingKind::Ordinary,
            KindArg::Universal => KrigingKind::Universal,
        };
    }
    let table = load_composition_csv(&a.data)?;
    let locations = table
        .locations
        .clone()
        .ok_or_else(|| Error::InvalidArgument("composition table needs `sx` and `sy` columns".into()))?;
    let domain = match a.domain {
        Some(d) => d,
        None => Domain2D::bounding(&locations)?,
    };
    let report = bss_krige_crossvalidate(&locations, &table.values, &domain, Some(table.parts.clone()), &cfg)?;
    let baseline = clr_mean_baseline(&table.values, &report.folds, Some(table.parts.clone()))?;
    let out = &a.common.out;
    fs::create_dir_all(out)?;
    write_report_csv(&[report.clone(), baseline], fs::File::create(out.join("report.csv"))?)?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    write_config_echo(out, &cfg)?;
    println!(
        "{}: MSE {:.4} MAE {:.4} RMSE {:.4}",
        report.method, report.aggregate.mse, report.aggregate.mae, report.aggregate.rmse
    );
    Ok(())
}

fn study_cmd(a: StudyArgs) -> Result<bool> {
    let mut cfg = experiment_config(&a.common)?;
    cfg.setting = a.setting.unwrap_or(cfg.setting);
    cfg.layers = a.layers.unwrap_or(cfg.layers);
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.replications = a.replications.unwrap_or(cfg.replications);
    cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
    cfg.grid = a.grid.resolve(cfg.grid);
    let outcome = write_study(&cfg)?;
    let mccs: Vec<f64> = outcome.rows.iter().map(|r| r.mcc).collect();
    if let Some(med) = median(&mccs) {
        println!("{} replications, median mcc {med:.4}", mccs.len());
    }
    for (seed, e) in &outcome.failures {
        eprintln!("replication seed {seed} failed: {e}");
    }
    Ok(outcome.failures.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate_cmd(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Evaluate(a) => evaluate_cmd(a).map(|_| true),
        Command::Explain(a) => explain_cmd(a).map(|_| true),
        Command::Krige(a) => krige_cmd(a).map(|_| true),
        Command::Study(a) => study_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
