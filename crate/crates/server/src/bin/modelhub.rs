use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use modelhub_core::model::has_errors;
use modelhub_core::{detect_comment_tag, parse, validate, Diagnostic, ModelManifest, ParserConfig};
use modelhub_server::{ServerConfig, Service, ServiceConfig};

#[derive(Parser)]
#[command(name = "modelhub", version, about = "Deploy annotated optimization models behind a REST API")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an annotated model file and print its manifest.
    Parse {
        file: PathBuf,
        /// Comment tag; detected from the file extension when omitted.
        #[arg(long)]
        tag: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Run the backend.
    Serve {
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value = "modelhub-data")]
        data_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        embedded_worker: Switch,
        /// Seconds without a heartbeat after which a worker counts as lost.
        #[arg(long, default_value_t = 90)]
        worker_timeout: u64,
        /// Maximum upload size in bytes.
        #[arg(long, default_value_t = 16 * 1024 * 1024)]
        max_upload: usize,
    },
    /// Manage API tokens.
    Token {
        #[command(subcommand)]
        command: TokenCommand,
    },
}

#[derive(Subcommand)]
enum TokenCommand {
    /// Create a token for a user and print it.
    Create {
        user: String,
        /// Issue a worker-class token.
        #[arg(long)]
        worker: bool,
        #[arg(long, default_value = "modelhub-data")]
        data_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// MODELHUB_DATA_DIR wins over the flag.
fn data_dir(flag: PathBuf) -> PathBuf {
    std::env::var_os("MODELHUB_DATA_DIR").map(PathBuf::from).unwrap_or(flag)
}

fn print_table(manifest: &ModelManifest, diagnostics: &[Diagnostic]) {
    if !manifest.name.is_empty() {
        println!("model: {}", manifest.name);
    }
    for c in &manifest.components {
        println!("{:>3}  {:<16}  {:<24}  {}", c.order, c.kind.keyword(), c.name, c.description.as_deref().unwrap_or(""));
    }
    for d in diagnostics {
        eprintln!("{d}");
    }
}

fn parse_command(file: PathBuf, tag: Option<String>, format: Format) -> anyhow::Result<ExitCode> {
    let source = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    let tag = match tag {
        Some(t) => t,
        None => detect_comment_tag(&file.to_string_lossy())?.to_string(),
    };
    let (manifest, mut diagnostics) = parse(&source, &ParserConfig::new(&tag)?);
    diagnostics.extend(validate(&manifest));
    match format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({ "manifest": manifest, "diagnostics": diagnostics }))?
        ),
        Format::Table => print_table(&manifest, &diagnostics),
    }
    Ok(if has_errors(&diagnostics) { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

#[tokio::main]
async fn serve(config: ServerConfig) -> anyhow::Result<()> {
    let server = modelhub_server::start(config).await?;
    // Scripts wait for this line to learn the bound port.
    println!("modelhub listening on {}", server.url());
    use std::io::Write;
    std::io::stdout().flush()?;
    server.wait().await;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "modelhub_server=info".into()),
        )
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Parse { file, tag, format } => parse_command(file, tag, format),
        Command::Serve { port, host, data_dir: dir, embedded_worker, worker_timeout, max_upload } => {
            let port = match std::env::var("MODELHUB_PORT") {
                Ok(p) => match p.parse() {
                    Ok(p) => p,
                    Err(_) => {
                        eprintln!("error: MODELHUB_PORT={p:?} is not a port number");
                        return ExitCode::from(2);
                    }
                },
                Err(_) => port,
            };
            let mut config = ServerConfig::new(data_dir(dir));
            config.addr = SocketAddr::new(host, port);
            config.embedded_worker = embedded_worker == Switch::On;
            config.service = ServiceConfig {
                worker_timeout: Duration::from_secs(worker_timeout.max(1)),
                max_upload_bytes: max_upload,
                ..ServiceConfig::default()
            };
            config.reap_interval = config.service.worker_timeout.min(Duration::from_secs(15)) / 3;
            serve(config).map(|()| ExitCode::SUCCESS)
        }
        Command::Token { command: TokenCommand::Create { user, worker, data_dir: dir } } => {
            (|| -> anyhow::Result<ExitCode> {
                let service = Service::open(&data_dir(dir), ServiceConfig::default())?;
                println!("{}", service.create_token(&user, worker)?);
                Ok(ExitCode::SUCCESS)
            })()
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
