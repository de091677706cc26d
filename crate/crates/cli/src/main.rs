use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use perciso::isosolver::{phi, PhiOutcome, SolverConfig};
use perciso::lab::{
    density_experiment, estimate_norm, lln_experiment, plant_annulus_experiment, plant_barrier_experiment, rate_fit, report,
    tail_experiment, ExperimentKind, ExperimentSpec, RunRecords, Tail,
};
use perciso::metric::{estimate_time_constant, TimeConstantConfig};
use perciso::percolation::{check_uniq_event, default_kappa, estimate_theta, label_clusters, sample_configuration, GridSpec};
use perciso::wulff::{wulff_shape, NormModel};
use perciso::Point;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "perciso", version, about = "Isoperimetry of the giant cluster in supercritical bond percolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 0.75)]
    p: f64,
    /// Master seed; PERCISO_SEED is used when the flag is absent.
    #[arg(long, env = "PERCISO_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Directory for CSV tables, summary.json and plots.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Norm model (JSON) used to shape candidate circuits; l1 if absent.
    #[arg(long)]
    norm: Option<PathBuf>,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig> {
        let mut s = SolverConfig { eps: self.eps, ..Default::default() };
        if let Some(path) = &self.norm {
            s.norm = Some(NormModel::load(path)?);
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw one configuration and report its clusters.
    Sample {
        #[arg(long, default_value_t = 32)]
        n: i64,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the probability that the origin lies in the largest cluster.
    Theta {
        #[arg(long, default_value_t = 48)]
        n: i64,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the time constant along a direction, or a full norm model with --save-norm.
    Mu {
        #[arg(long, default_value = "1,0")]
        direction: String,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        lengths: Vec<i64>,
        #[arg(long)]
        save_norm: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Wulff shape and isoperimetric constant of a norm.
    Wulff {
        #[arg(long)]
        norm: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        k: usize,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bounds on the isoperimetric constant of one sample's giant.
    Phi {
        #[arg(long, default_value_t = 32)]
        n: i64,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Certified lower and upper tail frequencies of n Phi_n.
    Tail {
        #[arg(long, value_delimiter = ',', default_value = "8,12,16")]
        n: Vec<i64>,
        #[arg(long, value_delimiter = ',', default_value = "2.9")]
        t: Vec<f64>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Close a family of horizontal barrier lines and compare n UB with unplanted samples.
    PlantBarrier {
        #[arg(long, default_value_t = 128)]
        n: i64,
        #[arg(long, default_value_t = 6.0)]
        t: f64,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Open every edge touching the square of radius n/sqrt(2) and evaluate it.
    PlantAnnulus {
        #[arg(long, default_value_t = 128)]
        n: i64,
        /// Slack added to 2 sqrt(2)/theta in the comparison.
        #[arg(long, default_value_t = 0.3)]
        margin: f64,
        #[arg(long, default_value_t = 400)]
        theta_samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Giant density deviations over rectangles and solver witnesses.
    Density {
        #[arg(long, value_delimiter = ',', default_value = "64")]
        n: Vec<i64>,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 400)]
        theta_samples: usize,
        #[arg(long)]
        witnesses: bool,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Run the experiment described by a spec file and write the report.
    Report {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the experiment file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.3)]
        margin: f64,
    },
}

fn emit<T: serde::Serialize>(value: &T, format: Format) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(value)?)?,
        Format::Csv => {
            let v = serde_json::to_value(value)?;
            let rows: Vec<serde_json::Value> = match v {
                serde_json::Value::Array(a) => a,
                other => vec![other],
            };
            let mut header: Vec<String> = Vec::new();
            for r in &rows {
                if let serde_json::Value::Object(m) = r {
                    for (k, x) in m {
                        if !x.is_array() && !x.is_object() && !header.contains(k) {
                            header.push(k.clone());
                        }
                    }
                }
            }
            writeln!(out, "{}", header.join(","))?;
            for r in &rows {
                let cells: Vec<String> = header
                    .iter()
                    .map(|k| match r.get(k) {
                        Some(serde_json::Value::String(s)) => s.clone(),
                        Some(serde_json::Value::Null) | None => String::new(),
                        Some(x) => x.to_string(),
                    })
                    .collect();
                writeln!(out, "{}", cells.join(","))?;
            }
        }
    }
    Ok(())
}

fn write_report(records: &RunRecords, out: &Option<PathBuf>) -> Result<()> {
    if let Some(dir) = out {
        for f in report(records, dir)? {
            eprintln!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn parse_direction(s: &str) -> Result<Point> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        bail!("direction must look like 1,0");
    }
    Ok(Point::new(parts[0].trim().parse()?, parts[1].trim().parse()?))
}

fn spec_for(kind: ExperimentKind, ns: Vec<i64>, c: &Common, solver: Option<&SolverArgs>) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::new(kind, ns, c.p, c.samples, c.seed);
    spec.kappa = c.kappa;
    if let Some(s) = solver {
        spec.solver = s.config()?;
    }
    Ok(spec)
}

fn run_spec(spec: &ExperimentSpec, margin: f64) -> Result<RunRecords> {
    spec.validate()?;
    let mut records = RunRecords { spec: Some(spec.clone()), ..Default::default() };
    let theta = |n: i64| estimate_theta(spec.p, n, 400, spec.seed).map(|t| t.theta_hat);
    match spec.kind {
        ExperimentKind::Tail => {
            let est = tail_experiment(spec)?;
            records.rates = rate_fit(&est, Tail::Lower);
            records.tail = Some(est);
        }
        ExperimentKind::Barrier => {
            let t = *spec.thresholds.first().context("barrier experiment needs a threshold")?;
            records.barrier = Some(plant_barrier_experiment(spec, t)?);
        }
        ExperimentKind::Annulus => {
            records.annulus = Some(plant_annulus_experiment(spec, theta(spec.ns[0])?, margin)?);
        }
        ExperimentKind::Density => {
            records.density = density_experiment(spec, theta(spec.ns[0])?, true)?;
        }
        ExperimentKind::Lln => {
            records.lln = Some(lln_experiment(spec)?);
            if let Some(norm) = &spec.solver.norm {
                records.wulff = Some(wulff_shape(norm, 64)?);
            }
        }
    }
    Ok(records)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Sample { n, index, common } => {
            let c = sample_configuration(GridSpec::new(n, common.p, common.seed)?, index)?;
            let lab = label_clusters(&c);
            let rep = check_uniq_event(&lab, common.kappa.unwrap_or_else(|| default_kappa(common.p)));
            emit(&rep, common.format)?;
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("config_n{n}_s{}_i{index}.perc", common.seed));
                c.save(&path)?;
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Theta { n, common } => {
            emit(&estimate_theta(common.p, n, common.samples, common.seed)?, common.format)?;
        }
        Command::Mu { direction, lengths, save_norm, common } => {
            if let Some(path) = save_norm {
                let norm = estimate_norm(common.p, &lengths, common.samples, common.seed)?;
                norm.save(&path)?;
                eprintln!("wrote {}", path.display());
                emit(&norm, common.format)?;
            } else {
                let est = estimate_time_constant(&TimeConstantConfig {
                    p: common.p,
                    direction: parse_direction(&direction)?,
                    lengths,
                    samples_per_length: common.samples,
                    seed: common.seed,
                    kappa: common.kappa,
                })?;
                if let Some(dir) = &common.out {
                    std::fs::create_dir_all(dir)?;
                    let path = dir.join("time_constant.csv");
                    est.write_csv(std::fs::File::create(&path)?)?;
                    eprintln!("wrote {}", path.display());
                }
                match common.format {
                    Format::Json => emit(&est, common.format)?,
                    Format::Csv => emit(&est.lengths, common.format)?,
                }
            }
        }
        Command::Wulff { norm, k, format, out } => {
            let norm = match norm {
                Some(p) => NormModel::load(&p)?,
                None => NormModel::l1(),
            };
            let w = wulff_shape(&norm, k)?;
            let iso = norm.iso_constant(k)?;
            emit(&serde_json::json!({ "iso_constant": iso, "area": w.area, "vertices": w.vertices.len() }), format)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write_file(&dir.join("wulff.svg"), &w.to_svg())?;
                write_file(&dir.join("wulff.json"), &w.to_json()?)?;
            }
        }
        Command::Phi { n, index, common, solver } => {
            let mut cfg = solver.config()?;
            cfg = SolverConfig { kappa: common.kappa, ..cfg };
            if n <= perciso::isosolver::BRUTE_FORCE_MAX_N {
                cfg.strategy = perciso::isosolver::Strategy::BruteForce;
            }
            let c = sample_configuration(GridSpec::new(n, common.p, common.seed)?, index)?;
            let out = phi(&c, &cfg)?;
            match (&out, common.format) {
                (PhiOutcome::Solved(r), Format::Csv) => emit(
                    &serde_json::json!({
                        "n": r.n, "p": r.p, "seed": r.seed, "sample_index": r.sample_index,
                        "n_lb": r.lower_bound * n as f64, "n_ub": r.upper_bound * n as f64,
                        "length": r.length, "vol": r.vol, "interior_count": r.interior_count, "method": r.method,
                    }),
                    Format::Csv,
                )?,
                _ => emit(&out, common.format)?,
            }
        }
        Command::Tail { n, t, common, solver } => {
            let spec = spec_for(ExperimentKind::Tail, n, &common, Some(&solver))?.with_thresholds(t);
            let records = run_spec(&spec, 0.0)?;
            let est = records.tail.as_ref().expect("tail run");
            match common.format {
                Format::Json => emit(&serde_json::json!({ "rows": est.rows, "rates": records.rates, "floor_violations": est.floor_violations }), common.format)?,
                Format::Csv => emit(&est.rows, common.format)?,
            }
            write_report(&records, &common.out)?;
        }
        Command::PlantBarrier { n, t, common, solver } => {
            let spec = spec_for(ExperimentKind::Barrier, vec![n], &common, Some(&solver))?.with_thresholds(vec![t]);
            let records = run_spec(&spec, 0.0)?;
            emit(records.barrier.as_ref().expect("barrier run"), common.format)?;
            write_report(&records, &common.out)?;
        }
        Command::PlantAnnulus { n, margin, theta_samples, common } => {
            let spec = spec_for(ExperimentKind::Annulus, vec![n], &common, None)?;
            let theta = estimate_theta(common.p, n, theta_samples, common.seed)?.theta_hat;
            let rep = plant_annulus_experiment(&spec, theta, margin)?;
            emit(&rep, common.format)?;
            write_report(&RunRecords { spec: Some(spec), annulus: Some(rep), ..Default::default() }, &common.out)?;
        }
        Command::Density { n, delta, theta_samples, witnesses, common, solver } => {
            let mut spec = spec_for(ExperimentKind::Density, n, &common, Some(&solver))?;
            spec.delta = delta;
            let theta = estimate_theta(common.p, spec.ns[0], theta_samples, common.seed)?.theta_hat;
            let rows = density_experiment(&spec, theta, witnesses)?;
            emit(&rows, common.format)?;
            write_report(&RunRecords { spec: Some(spec), density: rows, ..Default::default() }, &common.out)?;
        }
        Command::Report { spec, out, seed, margin } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let mut s = ExperimentSpec::from_json(&text)?;
            if let Ok(v) = std::env::var("PERCISO_SEED") {
                s.seed = v.parse().context("PERCISO_SEED is not an integer")?;
            }
            if let Some(v) = seed {
                s.seed = v;
            }
            let records = run_spec(&s, margin)?;
            write_report(&records, &Some(out))?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
