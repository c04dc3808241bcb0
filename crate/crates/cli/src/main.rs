mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use mgrf::cli_io::{fit_model, ingest_csv, prepare_application, prior_density_table, run_application, sig6};
use mgrf::mesh_fem::{build_mesh, Rect};
use mgrf::mgrf_prior::Reformulation;
use mgrf::pc_prior::PcRhoPrior;
use mgrf::sampler::ModelKind;
use mgrf::sim_harness::run_study;

use config::{CliConfig, Overrides};

#[derive(Parser, Debug)]
#[command(name = "mgrf", version, about = "Spatial regression with an MGRF prior against spatial confounding")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the simulation cells.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    reformulation: Option<ReformulationArg>,
    #[arg(long = "pc-U", global = true)]
    pc_u: Option<f64>,
    #[arg(long = "pc-a", global = true)]
    pc_a: Option<f64>,
    #[arg(long = "pc-w", global = true)]
    pc_w: Option<u32>,
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    burnin: Option<usize>,
    #[arg(long, global = true)]
    thin: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReformulationArg {
    #[value(name = "I", alias = "i", alias = "1")]
    I,
    #[value(name = "II", alias = "ii", alias = "2")]
    II,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Nonspatial,
    Base,
    Mgrf,
    MgrfPca,
    Rsr,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Nonspatial => ModelKind::NonSpatial,
            ModelArg::Base => ModelKind::BaseSpatial,
            ModelArg::Mgrf => ModelKind::Mgrf,
            ModelArg::MgrfPca => ModelKind::MgrfPca,
            ModelArg::Rsr => ModelKind::Rsr,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation study.
    Simulate {
        /// smoke, scenario4, paper-univariate or paper-multivariate.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Only run scenarios whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Fit one model to a station dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "mgrf")]
        model: ModelArg,
        #[arg(long)]
        date: Option<String>,
    },
    /// Fit all five models to a station dataset and print the comparison table.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        date: Option<String>,
    },
    /// Export a mesh as node and triangle CSV files.
    Mesh {
        /// Mesh the rescaled station locations of this dataset instead of the unit square.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        extension: Option<f64>,
    },
    /// Dump the calibrated correlation prior.
    PriorCheck {
        #[arg(long, default_value_t = 199)]
        points: usize,
    },
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    let overrides = Overrides {
        seed: cli.seed.or(cfg.seed),
        reformulation: cli.reformulation.map(|r| match r {
            ReformulationArg::I => Reformulation::I,
            ReformulationArg::II => Reformulation::II,
        }),
        pc_u: cli.pc_u,
        pc_a: cli.pc_a,
        pc_w: cli.pc_w,
        iters: cli.iters,
        burnin: cli.burnin,
        thin: cli.thin,
    };
    if let Some(t) = cli.threads.or(cfg.threads) {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let out_dir = cli.out_dir.clone().or(cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("mgrf-out"));
    fs::create_dir_all(&out_dir)?;
    overrides.apply(&mut cfg.application.fit);

    match cli.command {
        Command::Simulate { preset, replicates, filter } => {
            if let Some(p) = preset {
                cfg.simulate.preset = p;
                cfg.simulate.scenarios.clear();
            }
            if replicates.is_some() {
                cfg.simulate.n_replicates = replicates;
            }
            if filter.is_some() {
                cfg.simulate.filter = filter;
            }
            let scenarios = cfg.scenarios()?;
            if scenarios.is_empty() {
                bail!("no scenario matches the filter");
            }
            let mut failed = 0;
            for mut sc in scenarios {
                overrides.apply_scenario(&mut sc);
                let dir = out_dir.join(&sc.name);
                log::info!("scenario {} ({} replicates)", sc.name, sc.n_replicates);
                let result = run_study(&sc, Some(&dir.join("cells")))?;
                result.write_tidy_csv(create(&dir.join("results.csv"))?)?;
                serde_json::to_writer_pretty(create(&dir.join("summary.json"))?, &result)?;
                for model in &sc.models {
                    println!(
                        "{:<18} {:<18} median|bias b1| {}  bias_B* {}  coverage b1 {}",
                        sc.name,
                        model.label(),
                        sig6(result.median_abs_bias(*model, "beta1")),
                        sig6(result.median_bias_bstar(*model)),
                        sig6(mgrf::sim_harness::coverage_rate(result.cells_for(*model), "beta1")),
                    );
                }
                failed += result.failed_cells();
            }
            if failed > 0 {
                eprintln!("{failed} cells failed");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Fit { data, model, date } => {
            cfg.application.columns.date_filter = date.or(cfg.application.columns.date_filter);
            let raw = ingest_csv(&data, &cfg.application.columns)?;
            let prepared = prepare_application(&cfg.application, &raw)?;
            let out = fit_model(&cfg.application, &prepared, model.into())?;
            out.write_trace_csv(create(&out_dir.join("trace.csv"))?)?;
            serde_json::to_writer_pretty(create(&out_dir.join("summary.json"))?, &out.summary)?;
            for p in &out.summary.params {
                println!("{:<20} {:>12} [{}, {}]", p.name, sig6(p.mean), sig6(p.q025), sig6(p.q975));
            }
        }
        Command::Compare { data, date } => {
            cfg.application.columns.date_filter = date.or(cfg.application.columns.date_filter);
            let raw = ingest_csv(&data, &cfg.application.columns)?;
            let (table, outputs) = run_application(&cfg.application, &raw)?;
            table.write_csv(create(&out_dir.join("comparison.csv"))?)?;
            serde_json::to_writer_pretty(create(&out_dir.join("comparison.json"))?, &table)?;
            for out in &outputs {
                let name = format!("trace_{}.csv", out.model.label().replace(' ', "_").to_lowercase());
                out.write_trace_csv(create(&out_dir.join(name))?)?;
            }
            let text = table.render();
            fs::write(out_dir.join("comparison.txt"), &text)?;
            print!("{text}");
        }
        Command::Mesh { data, nodes, extension } => {
            let app = &cfg.application;
            let mesh = match data {
                Some(path) => {
                    let raw = ingest_csv(&path, &app.columns)?;
                    let mut app = app.clone();
                    app.mesh_nodes = nodes.unwrap_or(app.mesh_nodes);
                    app.mesh_extension = extension.unwrap_or(app.mesh_extension);
                    prepare_application(&app, &raw)?.mesh
                }
                None => build_mesh(Rect::unit(), nodes.unwrap_or(523), extension.unwrap_or(0.2))?,
            };
            mesh.write_nodes_csv(create(&out_dir.join("mesh_nodes.csv"))?)?;
            mesh.write_triangles_csv(create(&out_dir.join("mesh_triangles.csv"))?)?;
            println!("{} nodes, {} triangles", mesh.num_nodes(), mesh.triangles().len());
        }
        Command::PriorCheck { points } => {
            let pc = cfg.application.fit.priors.pc;
            let prior = PcRhoPrior::new(pc.w, pc.u, pc.a)?;
            let (lo, hi) = prior.support();
            println!("w = {}  U = {}  a = {}", pc.w, pc.u, pc.a);
            println!("lambda = {}", sig6(prior.lambda()));
            println!("support = ({}, {})", sig6(lo), sig6(hi));
            println!("P(|rho| > U) = {}", sig6(prior.tail_mass(pc.u)));
            let mut w = csv::Writer::from_writer(create(&out_dir.join("prior_density.csv"))?);
            w.write_record(["rho", "density"])?;
            for (r, d) in prior_density_table(&prior, points) {
                w.write_record([r.to_string(), d.to_string()])?;
            }
            w.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
