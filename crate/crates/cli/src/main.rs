use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use spatial_heckit::dataset::{build_neighborhoods, load_csv, load_edge_list, ClusteredDataset, CsvSchema, NeighborhoodRule};
use spatial_heckit::differencing::{fixed_effect_operator, kernel_operator, pairwise_operator, DifferenceOperator, Kernel};
use spatial_heckit::estimator::{plug_in_index, two_step_fit, two_step_fit_with_probit, TwoStepFit, TwoStepOptions};
use spatial_heckit::inference::{wild_cluster_bootstrap, wild_cluster_bootstrap_with_interval, BootstrapResult};
use spatial_heckit::montecarlo::{render_text, run_tables_with_progress, write_tables, GridConfig};
use spatial_heckit::probit::{fit_probit, ProbitSpec};
use spatial_heckit::report::{coefficient_csv, fit_report};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] spatial_heckit::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Spatially differenced two-step sample-selection estimation.
#[derive(Debug, Parser)]
#[command(name = "spatial-heckit", version)]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Worker threads for replication-level parallelism.
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the two-step estimator on a dataset.
    Fit(FitArgs),
    /// Run the Monte Carlo grid and write the tables.
    Simulate(SimulateArgs),
    /// Write the difference operator as row,col,weight triples.
    DumpOperator(DumpArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OpKind {
    Pairwise,
    FixedEffect,
    Kernel,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleKind {
    Sublocation,
    Location,
    Edges,
    Distance,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelKind {
    Epanechnikov,
    Gaussian,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VarianceArg {
    Verbatim,
    ResidualAugmented,
}

#[derive(Debug, Args)]
struct SchemaArgs {
    /// Observation id column.
    #[arg(long, default_value = "obs_id")]
    id_col: String,
    /// Location column.
    #[arg(long, default_value = "location")]
    location_col: String,
    /// Sub-location column.
    #[arg(long, default_value = "sublocation")]
    sublocation_col: String,
    /// Selection indicator column (0/1).
    #[arg(long, default_value = "selected")]
    selected_col: String,
    /// Outcome column; empty when not selected.
    #[arg(long, default_value = "y2")]
    outcome_col: String,
    /// Outcome covariates, comma separated [default: every x<k> column].
    #[arg(long, value_delimiter = ',')]
    x_cols: Vec<String>,
    /// Selection covariates, comma separated [default: every z<k> column].
    #[arg(long, value_delimiter = ',')]
    z_cols: Vec<String>,
    /// Coordinate columns as `X,Y` [default: coord_x,coord_y if present].
    #[arg(long, value_delimiter = ',', num_args = 2, value_names = ["X", "Y"])]
    coord_cols: Vec<String>,
}

impl SchemaArgs {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            id: self.id_col.clone(),
            location: self.location_col.clone(),
            sublocation: self.sublocation_col.clone(),
            selected: self.selected_col.clone(),
            outcome: self.outcome_col.clone(),
            x: self.x_cols.clone(),
            z: self.z_cols.clone(),
            coords: match self.coord_cols.as_slice() {
                [x, y] => Some((x.clone(), y.clone())),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Args)]
struct OperatorArgs {
    /// Dataset CSV.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    /// Edge list CSV (`from,to` obs_ids) for `--rule edges`.
    #[arg(long)]
    adjacency: Option<PathBuf>,
    /// Difference operator.
    #[arg(long, value_enum, default_value = "fixed-effect")]
    op: OpKind,
    /// Neighbourhood rule.
    #[arg(long, value_enum, default_value = "sublocation")]
    rule: RuleKind,
    /// Distance threshold for `--rule distance`.
    #[arg(long)]
    d: Option<f64>,
    /// Keep the anchor in its own neighbourhood mean (fixed-effect only).
    #[arg(long)]
    include_self: bool,
    /// Kernel bandwidth for `--op kernel`.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Kernel for `--op kernel`.
    #[arg(long, value_enum, default_value = "epanechnikov")]
    kernel: KernelKind,
    /// Location dummies in the selection equation.
    #[arg(long)]
    probit_dummies: bool,
    /// Drop the selection-equation intercept.
    #[arg(long)]
    no_intercept: bool,
}

impl OperatorArgs {
    fn validate(&self) -> CliResult<()> {
        if !self.input.is_file() {
            return Err(usage(format!("--input: file {} does not exist", self.input.display())));
        }
        match self.rule {
            RuleKind::Distance => match self.d {
                None => return Err(usage("--d is required with --rule distance")),
                Some(d) if !(d.is_finite() && d > 0.0) => {
                    return Err(usage(format!("--d must be a positive distance, got {d}")))
                }
                Some(_) => {}
            },
            RuleKind::Edges => match &self.adjacency {
                None => return Err(usage("--adjacency is required with --rule edges")),
                Some(p) if !p.is_file() => {
                    return Err(usage(format!("--adjacency: file {} does not exist", p.display())))
                }
                Some(_) => {}
            },
            _ => {}
        }
        if self.d.is_some() && !matches!(self.rule, RuleKind::Distance) {
            return Err(usage("--d only applies to --rule distance"));
        }
        if matches!(self.op, OpKind::Kernel) {
            match self.bandwidth {
                None => return Err(usage("--bandwidth is required with --op kernel")),
                Some(h) if !(h.is_finite() && h > 0.0) => {
                    return Err(usage(format!("--bandwidth must be positive, got {h}")))
                }
                Some(_) => {}
            }
        } else if self.bandwidth.is_some() {
            return Err(usage("--bandwidth only applies to --op kernel"));
        }
        if self.include_self && !matches!(self.op, OpKind::FixedEffect) {
            return Err(usage("--include-self only applies to --op fixed-effect"));
        }
        Ok(())
    }

    fn probit_spec(&self) -> ProbitSpec {
        ProbitSpec {
            include_location_dummies: self.probit_dummies,
            include_intercept: !self.no_intercept,
        }
    }

    fn load(&self) -> CliResult<ClusteredDataset> {
        let ds = load_csv(&self.input, &self.schema.schema())?;
        for w in ds.warnings() {
            warn!("{w}");
        }
        info!("{} observations, {} selected, {} locations", ds.len(), ds.n_selected(), ds.locations().len());
        Ok(ds)
    }

    fn rule(&self) -> CliResult<NeighborhoodRule> {
        Ok(match self.rule {
            RuleKind::Sublocation => NeighborhoodRule::SublocationMembership,
            RuleKind::Location => NeighborhoodRule::LocationMembership,
            RuleKind::Distance => NeighborhoodRule::DistanceThreshold(self.d.expect("validated")),
            RuleKind::Edges => NeighborhoodRule::EdgeList(load_edge_list(self.adjacency.as_ref().expect("validated"))?),
        })
    }

    /// Builds the operator. The kernel operator takes its index from a
    /// fixed-effect pilot fit on the same graph.
    fn operator(&self, ds: &ClusteredDataset) -> CliResult<DifferenceOperator> {
        let graph = build_neighborhoods(ds, self.rule()?)?;
        for w in graph.warnings() {
            warn!("{w}");
        }
        let sel = ds.selected_indices();
        let op = match self.op {
            OpKind::Pairwise => pairwise_operator(&graph, &sel),
            OpKind::FixedEffect => fixed_effect_operator(&graph, &sel, self.include_self),
            OpKind::Kernel => {
                let pilot_op = fixed_effect_operator(&graph, &sel, false);
                let options = TwoStepOptions {
                    probit: self.probit_spec(),
                    ..Default::default()
                };
                let pilot = two_step_fit(ds, &pilot_op, options)?;
                let index = plug_in_index(ds, &pilot)?;
                let kernel = match self.kernel {
                    KernelKind::Epanechnikov => Kernel::Epanechnikov,
                    KernelKind::Gaussian => Kernel::Gaussian,
                };
                kernel_operator(&graph, &sel, &index, self.bandwidth.expect("validated"), kernel)?
            }
        };
        info!("operator {}: {} rows, {} dropped anchors", op.kind().name(), op.rows(), op.dropped_anchors());
        Ok(op)
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    op: OperatorArgs,
    /// Inner variance of the sandwich.
    #[arg(long, value_enum, default_value = "verbatim")]
    variance: VarianceArg,
    /// Wild cluster bootstrap replications (at least 99).
    #[arg(long, value_name = "B")]
    boot: Option<usize>,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Coefficients to bootstrap, comma separated [default: every outcome covariate].
    #[arg(long, value_delimiter = ',')]
    boot_coef: Vec<String>,
    /// Null value of the bootstrap tests.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    boot_null: f64,
    /// Also invert the bootstrap test into an interval at this level.
    #[arg(long, value_name = "LEVEL")]
    ci: Option<f64>,
    /// Directory for report.txt and coefficients.csv [default: report on stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[command(flatten)]
    op: OperatorArgs,
    /// Output CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flags mirror the config keys one to one and override the file.
#[derive(Debug, Args)]
struct SimulateArgs {
    /// Grid config (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the tables.
    #[arg(long, default_value = "tables")]
    out: PathBuf,
    /// Location counts, comma separated.
    #[arg(long = "J-list", value_name = "LIST")]
    j_list: Option<String>,
    /// Sub-locations per location, comma separated.
    #[arg(long = "s-list", value_name = "LIST")]
    s_list: Option<String>,
    /// Individuals per sub-location, comma separated.
    #[arg(long = "n-list", value_name = "LIST")]
    n_list: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    delta: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<String>,
    /// Replications per cell.
    #[arg(long)]
    reps: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<String>,
    /// Location dummies in the selection equation (true/false).
    #[arg(long, value_name = "BOOL")]
    probit_dummies: Option<String>,
    /// Variance of the differenced estimators (verbatim or residual-augmented).
    #[arg(long)]
    variance: Option<String>,
}

impl SimulateArgs {
    fn grid(&self) -> CliResult<GridConfig> {
        let mut cfg = match &self.config {
            Some(p) if !p.is_file() => return Err(usage(format!("--config: file {} does not exist", p.display()))),
            Some(p) => GridConfig::from_file(p)?,
            None => GridConfig::default(),
        };
        let overrides = [
            ("J_list", "--J-list", &self.j_list),
            ("s_list", "--s-list", &self.s_list),
            ("n_list", "--n-list", &self.n_list),
            ("rho", "--rho", &self.rho),
            ("delta", "--delta", &self.delta),
            ("beta", "--beta", &self.beta),
            ("reps", "--reps", &self.reps),
            ("seed", "--seed", &self.seed),
            ("probit_dummies", "--probit-dummies", &self.probit_dummies),
            ("variance", "--variance", &self.variance),
        ];
        for (key, flag, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v).map_err(|e| usage(format!("{flag}: {e}")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    args.op.validate()?;
    if let Some(b) = args.boot {
        if b < 99 {
            return Err(usage(format!("--boot needs at least 99 replications, got {b}")));
        }
    }
    if let Some(level) = args.ci {
        if !(level > 0.0 && level < 1.0) {
            return Err(usage(format!("--ci must lie in (0, 1), got {level}")));
        }
        if args.boot.is_none() {
            return Err(usage("--ci requires --boot"));
        }
    }
    if let Some(out) = &args.out {
        ensure_dir(out, "--out")?;
    }
    let ds = args.op.load()?;
    let op = args.op.operator(&ds)?;
    let probit = fit_probit(&ds, args.op.probit_spec())?;
    if !probit.converged {
        warn!(
            "probit stopped after {} iterations with score norm {:e}",
            probit.iterations, probit.score_norm
        );
    }
    let options = TwoStepOptions {
        probit: args.op.probit_spec(),
        variance: match args.variance {
            VarianceArg::Verbatim => spatial_heckit::estimator::VarianceKind::Verbatim,
            VarianceArg::ResidualAugmented => spatial_heckit::estimator::VarianceKind::ResidualAugmented,
        },
        append_constant: false,
    };
    let fit = two_step_fit_with_probit(&ds, &op, probit, options)?;
    let boot = match args.boot {
        Some(b) => bootstrap(args, &fit, &op, &ds, b)?,
        None => Vec::new(),
    };
    let report = fit_report(&fit, &op, &ds, &boot);
    match &args.out {
        Some(dir) => {
            write(&dir.join("report.txt"), &report)?;
            write(&dir.join("coefficients.csv"), &coefficient_csv(&fit, &boot))?;
            info!("wrote {}", dir.display());
        }
        None => print!("{report}"),
    }
    Ok(())
}

fn bootstrap(args: &FitArgs, fit: &TwoStepFit, op: &DifferenceOperator, ds: &ClusteredDataset, b: usize) -> CliResult<Vec<BootstrapResult>> {
    let coefs: Vec<String> = if args.boot_coef.is_empty() {
        ds.x_names().to_vec()
    } else {
        args.boot_coef.clone()
    };
    for c in &coefs {
        if fit.coef_index(c).is_none() {
            return Err(usage(format!("--boot-coef: unknown coefficient `{c}` (have {})", fit.names.join(", "))));
        }
    }
    coefs
        .iter()
        .map(|c| {
            info!("bootstrapping {c} with {b} replications");
            let r = match args.ci {
                Some(level) => wild_cluster_bootstrap_with_interval(fit, op, ds, c, args.boot_null, b, args.seed, level),
                None => wild_cluster_bootstrap(fit, op, ds, c, args.boot_null, b, args.seed),
            };
            r.map_err(CliError::from)
        })
        .collect()
}

fn cmd_dump(args: &DumpArgs) -> CliResult<()> {
    args.op.validate()?;
    let ds = args.op.load()?;
    let op = args.op.operator(&ds)?;
    match &args.out {
        Some(path) => op.write_triplets_file(path)?,
        None => {
            let stdout = std::io::stdout();
            op.write_triplets(&mut stdout.lock()).map_err(|source| spatial_heckit::Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })?;
        }
    }
    eprintln!(
        "operator {}: {} rows x {} selected, {} nonzeros, {} dropped anchors",
        op.kind().name(),
        op.rows(),
        op.cols(),
        op.nnz(),
        op.dropped_anchors()
    );
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = args.grid()?;
    ensure_dir(&args.out, "--out")?;
    let cells = cfg.cells();
    let total = cells.len();
    let results = run_tables_with_progress(&cells, |i, r| {
        let c = &r.cell;
        eprintln!(
            "[{}/{total}] J={} s={} n={} done ({} replications)",
            i + 1,
            c.locations,
            c.sublocations,
            c.size,
            c.replications
        );
    });
    let files = write_tables(&results, &args.out)?;
    print!("{}", render_text(&results));
    for f in files {
        info!("wrote {}", f.display());
    }
    Ok(())
}

fn ensure_dir(dir: &Path, flag: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("{flag}: cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| {
        CliError::from(spatial_heckit::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| usage(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::DumpOperator(a) => cmd_dump(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
