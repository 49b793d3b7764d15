use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use scribe_core::domain::UserId;
use scribe_core::metrics::Period;
use scribe_core::template::{NoteTemplate, TemplateKind};
use scribe_core::Store;
use scribe_server::config::ApiConfig;
use scribe_server::{export, open_orchestrator, report, serve};

#[derive(Parser)]
#[command(name = "scribe", version, about = "Self-hosted ambient clinical scribe")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API and background workers.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the audit log and entity records to a tar archive.
    Export {
        #[arg(long)]
        config: PathBuf,
        /// Output file; `-` for stdout.
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Print usage metrics for a month or month range.
    Metrics {
        #[arg(long)]
        config: PathBuf,
        /// `YYYY-MM` or `YYYY-MM..YYYY-MM`.
        #[arg(long)]
        period: Period,
        /// Emit the monthly session series as CSV instead of the summary table.
        #[arg(long)]
        csv: bool,
    },
    /// Move custom templates between deployments.
    Templates {
        #[command(subcommand)]
        command: TemplateCommand,
    },
}

#[derive(Subcommand)]
enum TemplateCommand {
    /// Write every custom template as JSON.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Create templates from a file written by `templates export`.
    Import {
        #[arg(long)]
        config: PathBuf,
        /// Owner of the imported templates; defaults to each template's owner.
        #[arg(long)]
        owner: Option<UserId>,
        file: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
struct TemplateBundle {
    templates: Vec<NoteTemplate>,
}

fn output(path: &str) -> Result<Box<dyn Write>> {
    Ok(if path == "-" {
        Box::new(std::io::stdout().lock())
    } else {
        Box::new(BufWriter::new(File::create(path).with_context(|| format!("creating {path}"))?))
    })
}

fn open_store(config: &ApiConfig) -> Result<Store> {
    Store::open(&config.storage_root).with_context(|| format!("opening {}", config.storage_root.display()))
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Serve { config } => {
            let config = ApiConfig::load(&config)?;
            let handle = serve(config).await?;
            shutdown_signal().await;
            tracing::info!("shutting down, draining running jobs");
            handle.shutdown().await?;
        }
        Command::Export { config, out } => {
            let config = ApiConfig::load(&config)?;
            let store = open_store(&config)?;
            let manifest = export::export_archive(&store, output(&out)?)?;
            eprintln!(
                "exported {} audit events and {} entities (chain: {:?})",
                manifest.audit_events, manifest.entity_count, manifest.audit_chain
            );
        }
        Command::Metrics { config, period, csv } => {
            let config = ApiConfig::load(&config)?;
            let store = open_store(&config)?;
            let report = report::build_report(&store, period, config.cost.as_ref())?;
            if csv {
                print!("{}", report::render_csv(&report.monthly_series));
            } else {
                print!("{}", report::render_table(&report));
            }
        }
        Command::Templates { command: TemplateCommand::Export { config, out } } => {
            let config = ApiConfig::load(&config)?;
            let store = open_store(&config)?;
            let mut templates: Vec<NoteTemplate> =
                store.list()?.into_iter().filter(|t: &NoteTemplate| t.kind == TemplateKind::Custom).collect();
            templates.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
            let mut w = output(&out)?;
            serde_json::to_writer_pretty(&mut w, &TemplateBundle { templates })?;
            writeln!(w)?;
        }
        Command::Templates { command: TemplateCommand::Import { config, owner, file } } => {
            let config = ApiConfig::load(&config)?;
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let bundle: TemplateBundle = serde_json::from_str(&text).context("parsing template bundle")?;
            let orch = open_orchestrator(&config)?;
            for t in bundle.templates {
                let Some(owner) = owner.clone().or(t.owner_id.clone()) else {
                    bail!("template `{}` has no owner; pass --owner", t.name);
                };
                let created = orch
                    .create_template(&owner, &t.name, &t.preamble, t.sections)
                    .with_context(|| format!("importing `{}`", t.name))?;
                println!("{}\t{}", created.id, created.name);
            }
        }
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
