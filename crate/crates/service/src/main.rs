use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use airays_core::audit::Axis;
use airays_core::backends::BackendSet;
use airays_core::catalog::load_catalog;
use airays_core::clock::{Clock, SystemClock, VirtualClock};
use airays_core::pipeline::{run_pipeline, RunStore, RECORD_FILE};
use airays_core::raster::CapturedFrame;
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use airays_service::audits::{run_and_write, AuditRequest, CSV_FILE, MARKDOWN_FILE};
use airays_service::config::ServiceConfig;

#[derive(Parser)]
#[command(name = "airays", version, about = "Installation pipeline service")]
struct Cli {
    /// Config file; defaults to $AIRAYS_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the installation loop and HTTP API.
    Serve {
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Process one photo without installation timing.
    RunOnce {
        photo: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory root; defaults to `runs_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bias audit over a labeled corpus.
    Audit {
        manifest: PathBuf,
        codebook: PathBuf,
        #[arg(long)]
        axis: Axis,
        /// Report root; defaults to `audit.out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Item catalog tools.
    Catalog {
        #[command(subcommand)]
        command: CatalogCmd,
    },
    /// Serve every stub capability over HTTP on one port.
    StubBackends {
        #[arg(long, default_value_t = 8090)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Subcommand)]
enum CatalogCmd {
    Validate { path: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    if let Cmd::Catalog {
        command: CatalogCmd::Validate { path },
    } = &cli.command
    {
        return Ok(validate_catalog(path));
    }
    if let Cmd::StubBackends { port, host } = &cli.command {
        stub_backends(host, *port)?;
        return Ok(ExitCode::SUCCESS);
    }
    let config = ServiceConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Cmd::Serve { listen } => serve(config, listen),
        Cmd::RunOnce { photo, seed, out } => run_once(config, &photo, seed, out),
        Cmd::Audit {
            manifest,
            codebook,
            axis,
            out,
        } => audit(config, manifest, codebook, axis, out),
        Cmd::Catalog { .. } | Cmd::StubBackends { .. } => unreachable!("handled above"),
    }
}

fn backends(config: &ServiceConfig) -> Result<BackendSet> {
    BackendSet::with_env_overrides(config.endpoints()).map_err(anyhow::Error::msg)
}

fn validate_catalog(path: &Path) -> ExitCode {
    match load_catalog(path) {
        Ok(c) => {
            println!("ok: {} items, version {}", c.len(), c.version());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("invalid catalog {}: {e}", path.display());
            ExitCode::FAILURE
        }
    }
}

fn run_once(config: ServiceConfig, photo: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode> {
    let set = backends(&config)?;
    let catalog = load_catalog(&config.catalog_path).with_context(|| format!("catalog {}", config.catalog_path.display()))?;
    let bytes = std::fs::read(photo).with_context(|| format!("reading {}", photo.display()))?;
    // with stubs only, timestamps come from a virtual clock so reruns match byte for byte
    let clock: Box<dyn Clock> = if set.configs().iter().all(|c| c.mode == airays_core::backends::BackendMode::Stub) {
        Box::new(VirtualClock::new(0))
    } else {
        Box::new(SystemClock)
    };
    let frame = CapturedFrame::from_png(&bytes, clock.now_ms(), photo.display().to_string())
        .with_context(|| format!("decoding {}", photo.display()))?;
    let mut cfg = config.pipeline();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let store = RunStore::new(out.unwrap_or(config.runs_dir));
    let record = run_pipeline(&frame, &cfg, &set, &catalog, &*clock, &store)?;
    let dir = store.run_dir(&record.run_id);
    println!("run_id: {}", record.run_id);
    println!("status: {}", serde_json::to_value(record.status)?.as_str().unwrap_or("?"));
    println!("record: {}", dir.join(RECORD_FILE).display());
    for (key, rel) in &record.output_refs {
        if key != "record" {
            println!("{key}: {}", dir.join(rel).display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn audit(mut config: ServiceConfig, manifest: PathBuf, codebook: PathBuf, axis: Axis, out: Option<PathBuf>) -> Result<ExitCode> {
    let set = backends(&config)?;
    if let Some(o) = out {
        config.audit.out_dir = o;
    }
    let req = AuditRequest {
        manifest,
        codebook,
        axis,
        ratio_threshold: None,
        min_support: None,
    };
    let outcome = run_and_write(&req, &config.audit, &set).map_err(anyhow::Error::msg)?;
    println!("report: {}", outcome.dir.join(MARKDOWN_FILE).display());
    println!("csv: {}", outcome.dir.join(CSV_FILE).display());
    println!("findings: {}", outcome.report.findings.len());
    for f in &outcome.report.findings {
        println!("  {} {} vs {}: ratio {:.3} ({} / {})", f.code, f.group_a, f.group_b, f.ratio, f.support_a, f.support_b);
    }
    if !outcome.complete {
        eprintln!(
            "audit incomplete: {} of {} entries skipped",
            outcome.report.skipped.len(),
            outcome.report.skipped.len() + outcome.report.group_sizes.values().sum::<usize>()
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn serve(config: ServiceConfig, listen: Option<String>) -> Result<ExitCode> {
    let set = backends(&config)?;
    let catalog = load_catalog(&config.catalog_path).with_context(|| format!("catalog {}", config.catalog_path.display()))?;
    let addr = listen.unwrap_or_else(|| config.listen.clone());
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        tokio::select! {
            r = airays_service::serve(config, catalog, Arc::new(set), listener) => { r?; }
            _ = tokio::signal::ctrl_c() => {}
        }
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn stub_backends(host: &str, port: u16) -> Result<()> {
    let addr = format!("{host}:{port}");
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        tokio::select! {
            r = axum::serve(listener, airays_service::stub_server::router()) => r?,
            _ = tokio::signal::ctrl_c() => {}
        }
        Ok(())
    })
}
