use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use vds_cli::client::{Client, ClientError};
use vds_cli::config::{ServiceConfig, Tokens};
use vds_cli::server::{self, AppState, ExplicitRequest, ListQuery};
use vds_core::ssvd::DatasetKind;
use vds_core::{DatasetId, Direction, RemoveMode, Workspace};

#[derive(Parser)]
#[command(name = "vd", version, about = "Virtual datasets for ML workflows")]
struct Cli {
    /// Service base url
    #[arg(long, global = true, env = "VD_SERVER", default_value = "http://127.0.0.1:7878")]
    server: String,
    /// Bearer token
    #[arg(long, global = true, env = "VD_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Explicit,
    Virtual,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    Backward,
    Forward,
}

#[derive(Subcommand)]
enum Cmd {
    /// Register stored data as an explicit dataset
    Register {
        uri: String,
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        labels_file: Option<String>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Create a virtual dataset from a spec file (`-` reads stdin)
    Create {
        spec: PathBuf,
        #[arg(long)]
        idempotency_key: Option<String>,
    },
    /// List datasets
    Ls {
        #[arg(long)]
        name: Option<String>,
        /// key=value
        #[arg(long)]
        label: Option<String>,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        #[arg(long)]
        transform: Option<String>,
        #[arg(long)]
        creator: Option<String>,
    },
    /// Print a dataset record
    Show { id: DatasetId },
    /// Print the lineage graph
    Lineage {
        id: DatasetId,
        #[arg(long, value_enum, default_value = "backward")]
        direction: Dir,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Remove a dataset
    Rm {
        id: DatasetId,
        /// Also remove every dependent
        #[arg(long)]
        cascade: bool,
    },
    /// Materialize a dataset and print run statistics
    Materialize {
        id: DatasetId,
        #[arg(long)]
        force: bool,
    },
    /// Print one object as CSV
    Cat { id: DatasetId, object_id: String },
    /// List registered transforms
    Transforms,
    /// Run the HTTP service
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        cache_budget: Option<u64>,
        #[arg(long)]
        token_file: Option<PathBuf>,
    },
}

fn print<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run_client(cli: Cli) -> Result<(), ClientError> {
    let client = Client::new(&cli.server, cli.token)?;
    match cli.cmd {
        Cmd::Register {
            uri,
            format,
            labels_file,
            name,
        } => {
            let id = client.register(&ExplicitRequest {
                uri,
                format,
                labels_file,
                name,
                ..Default::default()
            })?;
            println!("{id}");
        }
        Cmd::Create { spec, idempotency_key } => {
            let mut text = String::new();
            let read = if spec.as_os_str() == "-" {
                std::io::stdin().read_to_string(&mut text).map(|_| ())
            } else {
                std::fs::read_to_string(&spec).map(|t| text = t)
            };
            read.map_err(|e| ClientError::Transport(format!("{}: {e}", spec.display())))?;
            let (id, _) = client.create_virtual(&text, idempotency_key.as_deref())?;
            println!("{id}");
        }
        Cmd::Ls {
            name,
            label,
            kind,
            transform,
            creator,
        } => {
            let q = ListQuery {
                name,
                label,
                kind: kind.map(|k| match k {
                    Kind::Explicit => DatasetKind::Explicit,
                    Kind::Virtual => DatasetKind::Virtual,
                }),
                transform,
                creator,
            };
            for r in client.list(&q)? {
                println!(
                    "{}\t{}\t{}\t{}\t{}",
                    r.id,
                    r.kind.as_str(),
                    r.transform_id().unwrap_or("-"),
                    r.object_index.len(),
                    r.name
                );
            }
        }
        Cmd::Show { id } => print!("{}", client.get(id)?.to_yaml()),
        Cmd::Lineage { id, direction, depth } => {
            let dir = match direction {
                Dir::Backward => Direction::Backward,
                Dir::Forward => Direction::Forward,
            };
            print(&client.lineage(id, dir, depth)?);
        }
        Cmd::Rm { id, cascade } => {
            let mode = if cascade { RemoveMode::Cascade } else { RemoveMode::Restrict };
            for r in client.remove(id, mode)? {
                println!("{r}");
            }
        }
        Cmd::Materialize { id, force } => print(&client.materialize(id, force)?),
        Cmd::Cat { id, object_id } => print!("{}", client.object(id, &object_id)?),
        Cmd::Transforms => {
            for d in client.transforms()? {
                println!("{}\t{}", d.transform_id, d.input_arity);
            }
        }
        Cmd::Serve { .. } => unreachable!("handled before connecting"),
    }
    Ok(())
}

fn serve(
    config: Option<PathBuf>,
    addr: Option<String>,
    data_dir: Option<PathBuf>,
    cache_budget: Option<u64>,
    token_file: Option<PathBuf>,
) -> Result<(), String> {
    let mut cfg = ServiceConfig::load(config.as_deref()).map_err(|e| e.to_string())?;
    cfg.apply_env(&std::env::vars().collect()).map_err(|e| e.to_string())?;
    if let Some(a) = addr {
        cfg.addr = a;
    }
    if let Some(d) = data_dir {
        cfg.data_dir = Some(d);
    }
    if let Some(b) = cache_budget {
        cfg.cache_budget_bytes = b;
    }
    if let Some(t) = token_file {
        cfg.auth.enabled = true;
        cfg.auth.token_file = Some(t);
    }
    let tokens = match (cfg.auth.enabled, &cfg.auth.token_file) {
        (false, _) => None,
        (true, Some(path)) => Some(Tokens::read(path).map_err(|e| e.to_string())?),
        (true, None) => return Err("auth is enabled but no token_file is set".into()),
    };
    let ws = Workspace::open(&cfg.workspace_config()).map_err(|e| e.to_string())?;
    let state = AppState::new(Arc::new(ws), tokens, cfg.data_dir.as_deref()).map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.addr).await?;
        tracing::info!("listening on {}", listener.local_addr()?);
        server::serve(listener, Arc::new(state), async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
    .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    if let Cmd::Serve {
        config,
        addr,
        data_dir,
        cache_budget,
        token_file,
    } = cli.cmd
    {
        return match serve(config, addr, data_dir, cache_budget, token_file) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("vd serve: {e}");
                ExitCode::from(1)
            }
        };
    }
    match run_client(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vd: {e}");
            ExitCode::from(1)
        }
    }
}
