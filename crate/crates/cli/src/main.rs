//! `sqleval` command-line entry point.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use clap::{CommandFactory, Parser, Subcommand};
use sqleval_core::bundled;
use sqleval_core::datastore::{execute_query, scale_database, Catalog, DEFAULT_ROW_CAP, DEFAULT_TIMEOUT_MS};
use sqleval_core::gateway::{AdapterKind, ModelAdapter};
use sqleval_core::metrics::{execution_accuracy, ComparisonPolicy, Metric};
use sqleval_core::pipeline::{
    augment_from_run, load_run, run_evaluation, runs_by_workload_version, AugmentJob, AugmentJobError, RunConfig,
    RunContext, RunError, RunStoreError,
};
use sqleval_core::reporting::{plot_workload_versions, render_report, write_plot, write_run_plots, ExportFormat};
use sqleval_core::sql::{classify, exact_match, parse_sql, MatchMode, SqlDialect};
use sqleval_core::workload::{align_workload, TargetDistribution, ValidateOptions, WorkloadStore};

#[derive(Parser)]
#[command(name = "sqleval", version, about = "Fine-grained evaluation of text-to-SQL models")]
struct Cli {
    /// Working directory holding catalog.json, workloads/, runs/ and cache/.
    #[arg(long, global = true, env = "SQLEVAL_WORKDIR", default_value = "sqleval-work")]
    workdir: PathBuf,
    /// Only warnings and errors on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Install the bundled demo databases, workloads and target.
    Init,
    /// Run an evaluation described by a JSON or YAML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Print the taxonomy label of a query read from a file or `-`.
    Classify {
        input: String,
        #[arg(long, default_value = "sqlite")]
        dialect: String,
    },
    /// Compare a generated query with a ground truth on a database.
    Compare {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        db: String,
        #[arg(long, default_value = "spider")]
        mode: String,
    },
    /// Scale a catalog database by an integer factor.
    Scale {
        #[arg(long)]
        db: String,
        #[arg(long)]
        factor: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Align a stored workload to a target category distribution.
    Align {
        #[arg(long)]
        workload: String,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Add validated data points for a run's weak subcategories.
    Augment {
        #[arg(long)]
        run: String,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        per_subcat: usize,
        #[arg(long, default_value_t = sqleval_core::workload::DEFAULT_MIN_SUPPORT)]
        min_support: usize,
        #[arg(long, default_value = "EA")]
        metric: String,
        /// Judge weakness by this model only.
        #[arg(long)]
        model: Option<String>,
        /// Candidate generator: mock_template or direct_llm.
        #[arg(long, default_value = "mock_template")]
        generator: String,
        #[arg(long)]
        llm_id: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a run's report; optionally (re)write its plots.
    Report {
        #[arg(long)]
        run: String,
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        plots: bool,
    },
    /// Start the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Built dashboard assets served under /ui.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

/// Exit 1: invalid input. Exit 2: failure while doing the work.
enum Failure {
    Invalid(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                ErrorKind::InvalidSubcommand | ErrorKind::MissingSubcommand | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    eprintln!("\n{}", Cli::command().render_help());
                    ExitCode::from(1)
                }
                _ => {
                    let _ = e.print();
                    ExitCode::from(1)
                }
            };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if cli.quiet { tracing::Level::WARN } else { tracing::Level::INFO })
        .with_target(false)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn ensure_installed(workdir: &Path) -> Outcome {
    if !bundled::is_installed(workdir) {
        let written = bundled::install(workdir).map_err(runtime)?;
        tracing::info!(files = written.len(), workdir = %workdir.display(), "installed bundled data");
    }
    Ok(())
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn print_json(v: &impl serde::Serialize) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("output serializes")));
}

fn dispatch(cli: Cli) -> Outcome {
    let wd = cli.workdir.as_path();
    match cli.command {
        Command::Init => {
            let written = bundled::install(wd).map_err(runtime)?;
            for p in written {
                emit(&format!("{}\n", p.display()));
            }
            Ok(())
        }
        Command::Run {
            config,
            seed,
            workers,
            run_id,
        } => run(wd, &config, seed, workers, run_id),
        Command::Classify { input, dialect } => classify_cmd(&input, &dialect),
        Command::Compare { gen, gt, db, mode } => compare(wd, &gen, &gt, &db, &mode),
        Command::Scale { db, factor, seed } => {
            ensure_installed(wd)?;
            if factor == 0 {
                return Err(invalid("factor must be >= 1"));
            }
            let cat = Catalog::load(&wd.join("catalog.json")).map_err(invalid)?;
            let base = cat.open(&db).map_err(invalid)?;
            let scaled = scale_database(&base, factor, seed, wd).map_err(runtime)?;
            emit(&format!("{}\n", scaled.location.display()));
            Ok(())
        }
        Command::Align { workload, target, seed } => align(wd, &workload, &target, seed),
        Command::Augment {
            run,
            threshold,
            per_subcat,
            min_support,
            metric,
            model,
            generator,
            llm_id,
            seed,
        } => {
            let metric: Metric = metric.parse().map_err(invalid)?;
            let kind: AdapterKind = serde_json::from_value(serde_json::Value::String(generator.clone()))
                .map_err(|_| invalid(format!("unknown generator `{generator}`")))?;
            let mut job = AugmentJob::new(&run, threshold, per_subcat);
            job.metric = metric;
            job.min_support = min_support;
            job.model = model;
            job.seed = seed;
            job.generator = ModelAdapter::new(&generator, kind);
            job.generator.settings.llm_id = llm_id;
            match augment_from_run(wd, &job) {
                Ok(summary) => {
                    for (sub, fill) in &summary.fills {
                        if fill.accepted < fill.requested {
                            tracing::warn!(subcategory = %sub, accepted = fill.accepted, requested = fill.requested, "shortfall");
                        }
                    }
                    print_json(&summary);
                    Ok(())
                }
                Err(e @ (AugmentJobError::Invalid(_) | AugmentJobError::NoWeakSubcategories(_))) => Err(invalid(e)),
                Err(AugmentJobError::Run(e @ RunStoreError::NotFound(_))) => Err(invalid(e)),
                Err(e) => Err(runtime(e)),
            }
        }
        Command::Report { run, format, plots } => {
            let format: ExportFormat = format.parse().map_err(invalid)?;
            let stored = load_run(wd, &run).map_err(|e| match e {
                RunStoreError::NotFound(_) => invalid(e),
                _ => runtime(e),
            })?;
            if plots {
                let dir = stored.dir.join("plots");
                write_run_plots(&stored.report, &dir).map_err(runtime)?;
                if let Some(wid) = &stored.config.workload.id {
                    let runs = runs_by_workload_version(wd, wid).map_err(runtime)?;
                    let keyed: Vec<_> = runs.iter().map(|(v, r)| (*v, &r.report)).collect();
                    for &m in &stored.report.metrics {
                        if let Ok(spec) = plot_workload_versions(&keyed, m) {
                            write_plot(&spec, &dir).map_err(runtime)?;
                        }
                    }
                }
                tracing::info!(dir = %dir.display(), "plots written");
            }
            match format {
                ExportFormat::Json => emit(&stored.report_text),
                ExportFormat::Csv => emit(&render_report(&stored.report, format)),
            }
            Ok(())
        }
        Command::Serve { port, host, static_dir } => {
            ensure_installed(wd)?;
            let addr: std::net::SocketAddr = format!("{host}:{port}").parse().map_err(invalid)?;
            let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
            rt.block_on(sqleval_server::serve(addr, wd.to_path_buf(), static_dir))
                .map_err(runtime)
        }
    }
}

fn run(wd: &Path, config: &Path, seed: Option<u64>, workers: Option<usize>, run_id: Option<String>) -> Outcome {
    let mut cfg = RunConfig::load(config).map_err(invalid)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.concurrency = w;
    }
    if run_id.is_some() {
        cfg.run_id = run_id;
    }
    cfg.validate().map_err(invalid)?;
    if cfg.catalog.is_none() {
        ensure_installed(wd)?;
    }
    let ctx = RunContext::new(wd);
    let cancel = ctx.cancel.clone();
    let _ = ctrlc::set_handler(move || {
        eprintln!("interrupt: finishing in-flight tasks and saving partial results");
        cancel.store(true, Ordering::SeqCst);
    });
    match run_evaluation(&cfg, &ctx) {
        Ok(out) => {
            print_json(&serde_json::json!({
                "run_id": out.run_id,
                "run_dir": out.run_dir,
                "records": out.records.len(),
                "cancelled": out.wall.cancelled,
            }));
            Ok(())
        }
        Err(e @ (RunError::Config(_) | RunError::Workload(_) | RunError::Align(_))) => Err(invalid(e)),
        Err(e) => Err(runtime(e)),
    }
}

fn read_input(input: &str) -> Result<String, Failure> {
    if input == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(runtime)?;
        Ok(s)
    } else {
        std::fs::read_to_string(input).map_err(|e| invalid(format!("{input}: {e}")))
    }
}

fn dialect(name: &str) -> Result<SqlDialect, Failure> {
    match name.to_ascii_lowercase().as_str() {
        "sqlite" => Ok(SqlDialect::Sqlite),
        "mysql" => Ok(SqlDialect::Mysql),
        _ => Err(invalid(format!("unknown dialect `{name}`"))),
    }
}

fn classify_cmd(input: &str, dialect_name: &str) -> Outcome {
    let sql = read_input(input)?;
    let ast = parse_sql(&sql, dialect(dialect_name)?).map_err(invalid)?;
    emit(&format!("{}\n", classify(&ast)));
    Ok(())
}

fn compare(wd: &Path, gen: &Path, gt: &Path, db: &str, mode: &str) -> Outcome {
    let mode = match mode {
        "spider" | "spider_compatible" => MatchMode::SpiderCompatible,
        "strict" => MatchMode::Strict,
        _ => return Err(invalid(format!("unknown mode `{mode}`"))),
    };
    ensure_installed(wd)?;
    let gen_sql = std::fs::read_to_string(gen).map_err(|e| invalid(format!("{}: {e}", gen.display())))?;
    let gt_sql = std::fs::read_to_string(gt).map_err(|e| invalid(format!("{}: {e}", gt.display())))?;
    let cat = Catalog::load(&wd.join("catalog.json")).map_err(invalid)?;
    let db = cat.open(db).map_err(invalid)?;
    let gt_ast = parse_sql(&gt_sql, db.engine.dialect()).map_err(|e| invalid(format!("ground truth: {e}")))?;
    let gen_ast = parse_sql(&gen_sql, db.engine.dialect()).ok();
    let gt_result = execute_query(&db, &gt_sql, DEFAULT_TIMEOUT_MS, DEFAULT_ROW_CAP).map_err(|e| invalid(format!("ground truth: {e}")))?;
    let gen_result = execute_query(&db, &gen_sql, DEFAULT_TIMEOUT_MS, DEFAULT_ROW_CAP);
    let ea = execution_accuracy(gen_result.as_ref(), &gt_result, &ComparisonPolicy::default());
    let schema = db.schema.column_map();
    let em = gen_ast.as_ref().map(|g| exact_match(g, &gt_ast, mode, Some(&schema)));
    print_json(&serde_json::json!({
        "ea": ea.as_bool(),
        "em": em.as_ref().map(|(ok, _)| ok),
        "em_diff": em.map(|(_, d)| d),
        "gen_label": gen_ast.as_ref().map(|g| classify(g).to_string()),
        "gt_label": classify(&gt_ast).to_string(),
    }));
    Ok(())
}

fn align(wd: &Path, workload: &str, target: &Path, seed: u64) -> Outcome {
    ensure_installed(wd)?;
    let text = std::fs::read_to_string(target).map_err(|e| invalid(format!("{}: {e}", target.display())))?;
    let target: TargetDistribution = serde_json::from_str(&text).map_err(invalid)?;
    target.validate().map_err(invalid)?;
    let cat = Catalog::load(&wd.join("catalog.json")).map_err(invalid)?;
    let store = WorkloadStore::new(wd.join("workloads"));
    let w = store.load(workload, None, &cat, ValidateOptions::default()).map_err(invalid)?;
    let aligned = align_workload(&w, &target, seed).map_err(invalid)?;
    if store.meta(&aligned.workload_id).is_ok() {
        tracing::info!(workload = %aligned.workload_id, "aligned workload already stored");
    } else {
        store
            .publish(&aligned, Some(&format!("aligned from {workload} v{}", w.version)))
            .map_err(runtime)?;
    }
    let mut counts = std::collections::BTreeMap::new();
    for dp in aligned.eval_points() {
        *counts.entry(dp.label().category.to_string()).or_insert(0usize) += 1;
    }
    print_json(&serde_json::json!({
        "workload_id": aligned.workload_id,
        "version": aligned.version,
        "eval_points": aligned.eval_points().count(),
        "per_category": counts,
    }));
    Ok(())
}
