use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use clap::{Parser, Subcommand};
use modelhub_client::{ClientError, Interface, WorkerClient};
use modelhub_core::kernel::NATIVE_KERNEL_TAG;
use modelhub_core::wire::ExecutionStatus;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "modelhub-client", version, about = "Command-line client for a modelhub server")]
struct Cli {
    #[arg(long, env = "MODELHUB_URL", default_value = "http://127.0.0.1:8000")]
    url: String,
    #[arg(long, env = "MODELHUB_TOKEN", hide_env_values = true)]
    token: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Upload a model file.
    Upload {
        file: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        kernel_tag: Option<String>,
    },
    /// Set an interface object (VALUE is JSON, or taken as text) or, with
    /// --file, an interface file.
    Set {
        model: String,
        component: String,
        #[arg(required_unless_present = "file")]
        value: Option<String>,
        #[arg(long, conflicts_with = "value")]
        file: Option<PathBuf>,
    },
    /// Print the recipe of a model.
    Recipe { model: String },
    /// Print the components of a model.
    Components { model: String },
    /// Run a model; waits for the result unless --no-wait.
    Run {
        model: String,
        #[arg(long)]
        no_wait: bool,
    },
    /// Print the status of the latest execution.
    Status { model: String },
    /// Print the log of the latest execution.
    Log { model: String },
    /// Print the results of the latest execution, or of one component.
    Results {
        model: String,
        #[arg(long)]
        component: Option<String>,
    },
    /// Serve native-lp jobs as an external worker (needs a worker token).
    Worker {
        #[arg(long, default_value_t = 30.0)]
        poll: f64,
    },
}

fn json_arg(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode, ClientError> {
    let session = Interface::new(&cli.url, &cli.token)?;
    match cli.command {
        Command::Upload { file, name, kernel_tag } => {
            let model = session.new_model(&file, &name, kernel_tag.as_deref())?;
            println!("{}", model.id());
            for d in &model.record().diagnostics {
                eprintln!("{d}");
            }
        }
        Command::Set { model, component, value, file } => {
            let mut model = session.get_model_with_name(&model)?;
            match (value, file) {
                (_, Some(path)) => model.set_interface_file(&component, path)?,
                (Some(raw), None) => model.set_interface_object(&component, json_arg(&raw))?,
                (None, None) => unreachable!("clap requires one of them"),
            }
        }
        Command::Recipe { model } => print!("{}", session.get_model_with_name(&model)?.show_recipe()?),
        Command::Components { model } => print!("{}", session.get_model_with_name(&model)?.show_components()?),
        Command::Run { model, no_wait } => {
            let e = session.get_model_with_name(&model)?.run_with(!no_wait)?;
            println!("{} {}", e.id, e.status);
            if e.status == ExecutionStatus::Error {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Status { model } => println!("{}", session.get_model_with_name(&model)?.get_status()?),
        Command::Log { model } => print!("{}", session.get_model_with_name(&model)?.get_execution_log()?),
        Command::Results { model, component } => {
            let model = session.get_model_with_name(&model)?;
            let value = match component {
                Some(c) => model.get_output(&c)?,
                None => serde_json::to_value(model.results()?).expect("maps serialize"),
            };
            println!("{}", serde_json::to_string_pretty(&value).expect("values serialize"));
        }
        Command::Worker { poll } => {
            let worker = WorkerClient::register(session, &[NATIVE_KERNEL_TAG])?;
            eprintln!("registered worker {}", worker.id());
            let stop = AtomicBool::new(false);
            worker.serve_native(&stop, Duration::from_secs_f64(poll.max(0.0)), Duration::from_secs(30))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    run(Cli::parse()).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
