mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand};
use pwnl_core::data::{load_dataset, save_dataset, Dataset};
use pwnl_core::fit::{certify, FitContext};
use pwnl_core::harness::{
    build_learning_data, simulate_closed_loop, summarize, ModelController, OracleController, SimLog,
};
use pwnl_core::model::{ModelCell, ModelMeta, PwnlModel};
use pwnl_core::partition::Cell;
use pwnl_core::pipeline::{identify, IdentifyConfig};
use pwnl_core::reduce::reduce;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "pwnl", version, about = "Piecewise Wiener approximation of explicit MPC laws")]
struct Cli {
    /// JSON config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set identify.sigma=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Scenario seed (random references only).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the NMPC oracle over the scenario and write learning data.
    GenData {
        /// Learning-data CSV; the simulation log goes next to it as `<stem>.simlog.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition, fit and reduce a model from learning data.
    Identify {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge the regions of an existing model against its data.
    Reduce {
        model: PathBuf,
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model at one regressor.
    Eval {
        model: PathBuf,
        #[arg(required = true, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
        z: Vec<f64>,
    },
    /// Closed-loop run of the oracle and, with a model, the explicit controller.
    Simulate {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Oracle log; the model log and summary are written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Identify at several σ and tabulate complexity.
    Report {
        data: PathBuf,
        /// Overrides `report.sigmas`.
        #[arg(long = "sigma", value_delimiter = ',')]
        sigmas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.sets, cli.seed)?;
    match cli.cmd {
        Cmd::GenData { out } => gen_data(&cfg, &out),
        Cmd::Identify { data, out } => cmd_identify(&cfg, &data, &out),
        Cmd::Reduce { model, data, out } => cmd_reduce(&cfg, &model, &data, &out),
        Cmd::Eval { model, z } => {
            let m = load_model(&model)?;
            if z.len() != m.n_z() {
                bail!("model expects {} regressor values, got {}", m.n_z(), z.len());
            }
            println!("{}", m.eval(&z));
            Ok(())
        }
        Cmd::Simulate { model, out } => simulate(&cfg, model.as_deref(), &out),
        Cmd::Report { data, sigmas, out } => {
            let sigmas = if sigmas.is_empty() { cfg.report.sigmas.clone() } else { sigmas };
            if sigmas.is_empty() {
                Cli::command()
                    .error(clap::error::ErrorKind::MissingRequiredArgument, "no sigma values given")
                    .exit();
            }
            report(&cfg, &data, &sigmas, &out)
        }
    }
}

/// `dir/name.csv` → `dir/name.<tag>.<ext>`.
fn sibling(path: &Path, tag: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}

fn load_model(path: &Path) -> Result<PwnlModel> {
    PwnlModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_data(path: &Path) -> Result<Dataset> {
    load_dataset(path, None).with_context(|| format!("loading data {}", path.display()))
}

fn oracle_log(cfg: &RunConfig) -> Result<SimLog> {
    let mut oracle = OracleController {
        prob: cfg.mpc.clone(),
        params: cfg.plant,
        search: cfg.search,
    };
    simulate_closed_loop(&mut oracle, &cfg.scenario, &cfg.mpc, &cfg.plant, &cfg.detector)
        .context("oracle simulation")
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let log = oracle_log(cfg)?;
    let ds = build_learning_data(&log)?;
    let log_path = sibling(out, "simlog", "csv");
    log.save(&log_path).with_context(|| format!("writing {}", log_path.display()))?;
    save_dataset(&ds, out).with_context(|| format!("writing {}", out.display()))?;
    println!("N = {}, stationary = {}", ds.len(), ds.stationary_count());
    Ok(())
}

fn print_regions(model: &PwnlModel, ds: &Dataset) {
    let mut counts = vec![0usize; model.cells().len()];
    let mut gammas = vec![0.0_f64; model.cells().len()];
    for k in 0..ds.len() {
        let c = model.locate_normalized(ds.z(k));
        counts[c] += 1;
        let e = (model.eval_normalized(ds.z(k)) - ds.q(k)).abs() / ds.range().span();
        gammas[c] = gammas[c].max(e);
    }
    println!("cell  submodel  samples  gamma");
    for (i, c) in model.cells().iter().enumerate() {
        println!("{i:>4}  {:>8}  {:>7}  {:.5}", c.submodel, counts[i], gammas[i]);
    }
}

fn cmd_identify(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let ds = load_data(data)?;
    let id = identify(&ds, &cfg.identify)?;
    id.model.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "r = {}, s = {}, max gamma = {:.5}, status = {:?}, {:.1} s",
        id.r, id.s, id.max_gamma, id.status, id.fit_seconds
    );
    print_regions(&id.model, &id.data);
    Ok(())
}

fn cmd_reduce(cfg: &RunConfig, model_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let raw = load_data(data)?;
    if raw.n_z() != model.n_z() {
        bail!("data has {} regressors, model expects {}", raw.n_z(), model.n_z());
    }
    let rects: Vec<_> = model.cells().iter().map(ModelCell::rect).collect();
    let ds = Dataset::new(
        raw.samples().to_vec(),
        raw.n_z(),
        Some(*model.range()),
        Some(model.scaler().clone()),
    )?
    .tag_neighborhoods(cfg.identify.r_stab, cfg.identify.r_sw, Some(&rects));
    let basis = model.basis();
    let w = &cfg.identify.weights;
    let mut members = vec![Vec::new(); model.cells().len()];
    for k in 0..ds.len() {
        members[model.locate_normalized(ds.z(k))].push(k);
    }
    let cells: Vec<Cell> = model
        .cells()
        .iter()
        .zip(members)
        .map(|(c, idx)| Cell {
            rect: c.rect(),
            report: certify(&model.submodels()[c.submodel], &ds, &idx, w, basis),
            sample_idx: idx,
            submodel_id: c.submodel,
        })
        .collect();
    let merged = reduce(
        &cells,
        model.submodels(),
        &ds,
        &cfg.identify.merge_config(),
        FitContext::new(basis, w),
    )?;
    let new_cells = model
        .cells()
        .iter()
        .zip(&merged.assignment)
        .map(|(c, &id)| ModelCell {
            submodel: id,
            ..c.clone()
        })
        .collect();
    let meta = ModelMeta {
        sigma: Some(cfg.identify.sigma),
        r: model.meta().r.max(model.cells().len()),
        s: 0,
        max_gamma: Some(merged.max_gamma()),
        created_by: model.meta().created_by.clone(),
    };
    let reduced = PwnlModel::new(
        basis.clone(),
        *model.range(),
        model.scaler().clone(),
        new_cells,
        merged.submodels.clone(),
        meta,
    )?;
    reduced.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "s: {} -> {}, max gamma = {:.5}",
        model.complexity(),
        reduced.complexity(),
        merged.max_gamma()
    );
    Ok(())
}

fn simulate(cfg: &RunConfig, model: Option<&Path>, out: &Path) -> Result<()> {
    let oracle = oracle_log(cfg)?;
    oracle.save(out).with_context(|| format!("writing {}", out.display()))?;
    let mut summary = serde_json::Map::new();
    summary.insert("oracle".into(), serde_json::to_value(summarize(&oracle, &cfg.mpc, None))?);
    if let Some(path) = model {
        let m = load_model(path)?;
        let mut ctrl = ModelController::new(&m)?;
        let log = simulate_closed_loop(&mut ctrl, &cfg.scenario, &cfg.mpc, &cfg.plant, &cfg.detector)
            .context("explicit controller simulation")?;
        let empc_path = sibling(out, "empc", "csv");
        log.save(&empc_path).with_context(|| format!("writing {}", empc_path.display()))?;
        let s = summarize(&log, &cfg.mpc, Some(&ctrl.eval_times));
        summary.insert("empc".into(), serde_json::to_value(s)?);
    }
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(sibling(out, "summary", "json"), &text)?;
    println!("{text}");
    Ok(())
}

fn report(cfg: &RunConfig, data: &Path, sigmas: &[f64], out: &Path) -> Result<()> {
    let ds = load_data(data)?;
    let mut sigmas = sigmas.to_vec();
    sigmas.sort_by(|a, b| b.total_cmp(a));
    let mut rows = Vec::new();
    for &sigma in &sigmas {
        let icfg = IdentifyConfig {
            sigma,
            ..cfg.identify.clone()
        };
        let id = identify(&ds, &icfg).with_context(|| format!("identify at sigma {sigma}"))?;
        log::info!("sigma {sigma}: r = {}, s = {}", id.r, id.s);
        rows.push(format!("{sigma},{},{},{},{}", id.r, id.s, id.max_gamma, id.fit_seconds));
    }
    let mut f = std::fs::File::create(out).with_context(|| format!("writing {}", out.display()))?;
    writeln!(f, "sigma,r,s,max_gamma,fit_seconds")?;
    for r in &rows {
        writeln!(f, "{r}")?;
    }
    print!("sigma,r,s,max_gamma,fit_seconds\n{}\n", rows.join("\n"));
    Ok(())
}
