//! The client library against a live server.

use std::process::Command;
use std::time::Duration;

use modelhub_client::{ClientError, Interface, WorkerClient};
use modelhub_core::wire::{ExecutionStatus, InterfaceValue};
use modelhub_server::{BackgroundServer, ServerConfig};
use serde_json::json;
use tempfile::TempDir;

const DCOPF: &str = include_str!("../../../corpus/dcopf.mhl");
const CASE: &[u8] = include_bytes!("../../../corpus/case3.m");

const INFEASIBLE: &str = "#@ Variable: x
x = variable(1)
#@ Constraint: c
x[0] <= 1
x[0] >= 2
#@ Objective: o
minimize x[0]
#@ Problem: p
#@ Execution: info
#@ Output Object: y
y = x[0]
";

fn server(embedded: bool) -> (TempDir, BackgroundServer) {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServerConfig::new(dir.path());
    config.embedded_worker = embedded;
    let server = BackgroundServer::start(config).unwrap();
    (dir, server)
}

fn session(server: &BackgroundServer, user: &str) -> Interface {
    Interface::new(&server.url(), &server.create_token(user, false))
        .unwrap()
        .with_poll_interval(Duration::from_millis(20))
}

#[test]
fn dcopf_session() {
    let (dir, server) = server(true);
    let interface = session(&server, "analyst");
    let path = dir.path().join("dcopf.mhl");
    std::fs::write(&path, DCOPF).unwrap();
    let uploaded = interface.new_model(&path, "DCOPF Model", None).unwrap();
    assert_eq!(uploaded.record().kernel_tag, "native-lp");

    let mut model = interface.get_model_with_name("DCOPF Model").unwrap();
    assert_eq!(model.id(), uploaded.id());
    assert_eq!(model.get_status().unwrap(), ExecutionStatus::Created);
    assert!(matches!(model.get_execution_log(), Err(ClientError::NotFound(_))));

    model.set_interface_object("feastol", 1e-3).unwrap();
    assert_eq!(model.record().interface_values["feastol"], InterfaceValue::Value(json!(1e-3)));
    let case = dir.path().join("ieee14.m");
    std::fs::write(&case, CASE).unwrap();
    model.set_interface_file("case", &case).unwrap();
    match &model.record().interface_values["case"] {
        InterfaceValue::File(f) => assert_eq!((f.filename.as_str(), f.size), ("ieee14.m", CASE.len() as u64)),
        other => panic!("{other:?}"),
    }

    let recipe = model.show_recipe().unwrap();
    assert!(recipe.contains("feastol") && recipe.contains("output_obj"), "{recipe}");
    let components = model.show_components().unwrap();
    assert!(components.contains("Generator active power limits"), "{components}");
    assert_eq!(components.lines().count(), model.record().manifest.components.len());

    let done = model.run().unwrap();
    assert_eq!(done.status, ExecutionStatus::Success);
    assert_eq!(model.get_status().unwrap(), ExecutionStatus::Success);
    let log = model.get_execution_log().unwrap();
    assert!(log.contains("objective 3500"), "{log}");
    assert_eq!(model.get_output("output_obj").unwrap(), json!([3500.0, 100.0, 50.0, 0.0]));
    assert!(matches!(model.get_output("nonexistent"), Err(ClientError::NotFound(_))));
    // A real component that produced no value.
    assert!(matches!(model.get_output("P_limits"), Err(ClientError::NotFound(_))));

    assert_eq!(interface.models().unwrap().len(), 1);
    model.delete().unwrap();
    assert!(interface.models().unwrap().is_empty());
}

#[test]
fn names_are_matched_exactly_and_encoded() {
    let (_dir, server) = server(true);
    let interface = session(&server, "u");
    let source = DCOPF.as_bytes().to_vec();
    interface.new_model_from_bytes("a.mhl", source.clone(), "A+B Model", None).unwrap();
    interface.new_model_from_bytes("b.mhl", source, "A B Model&x=1", None).unwrap();
    assert_eq!(interface.get_model_with_name("A+B Model").unwrap().name(), "A+B Model");
    assert_eq!(interface.get_model_with_name("A B Model&x=1").unwrap().name(), "A B Model&x=1");
    let missing = interface.get_model_with_name("A").unwrap_err();
    assert!(matches!(missing, ClientError::NotFound(_)));
    assert_eq!(missing.status(), Some(404));

    // Another user's models are invisible.
    let other = session(&server, "v");
    assert!(matches!(other.get_model_with_name("A+B Model"), Err(ClientError::NotFound(_))));
}

#[test]
fn infeasible_model_runs_to_success() {
    let (_dir, server) = server(true);
    let interface = session(&server, "u");
    let model = interface.new_model_from_bytes("bad.mhl", INFEASIBLE.as_bytes().to_vec(), "Bad", None).unwrap();
    let done = model.run().unwrap();
    assert_eq!(done.status, ExecutionStatus::Success);
    assert_eq!(model.get_output("info").unwrap()["status"], "infeasible");
    assert!(matches!(model.get_output("y"), Err(ClientError::NotFound(_))));
}

#[test]
fn api_errors_carry_status_and_detail() {
    let (_dir, server) = server(true);
    let interface = session(&server, "u");
    let mut model = interface.new_model_from_bytes("d.mhl", DCOPF.as_bytes().to_vec(), "D", None).unwrap();
    match model.run() {
        Err(ClientError::Api { status: 409, detail: Some(d), .. }) => assert_eq!(d["missing"], json!(["case"])),
        other => panic!("{other:?}"),
    }
    let err = model.set_interface_object("case", 3).unwrap_err();
    assert_eq!(err.status(), Some(422));
    let dup = interface.new_model_from_bytes("d.mhl", DCOPF.as_bytes().to_vec(), "D", None).unwrap_err();
    assert_eq!(dup.status(), Some(409));
    let bad = Interface::new(&server.url(), "00").unwrap();
    assert_eq!(bad.models().unwrap_err().status(), Some(401));
    assert!(matches!(Interface::new("http://host/api", "t"), Err(ClientError::InvalidUrl { .. })));
}

#[test]
fn waiting_times_out_with_the_execution_id() {
    let (_dir, server) = server(false);
    let worker = WorkerClient::register(
        Interface::new(&server.url(), &server.create_token("farm", true)).unwrap(),
        &["native-lp"],
    )
    .unwrap();
    let interface = session(&server, "u").with_timeout(Duration::from_millis(300));
    let model = interface.new_model_from_bytes("bad.mhl", INFEASIBLE.as_bytes().to_vec(), "Bad", None).unwrap();
    let (execution_id, waited) = match model.run() {
        Err(ClientError::Timeout { execution_id, waited }) => (execution_id, waited),
        other => panic!("{other:?}"),
    };
    assert!(waited >= Duration::from_millis(300));
    assert_eq!(interface.execution(&execution_id).unwrap().status, ExecutionStatus::Queued);

    // The job is still there for the worker; waiting again sees it finish.
    let job = worker.next_job(Duration::from_secs(2)).unwrap().unwrap();
    assert_eq!(job.execution_id, execution_id);
    worker.execute_native(job).unwrap();
    assert_eq!(interface.wait_for(&execution_id).unwrap().status, ExecutionStatus::Success);
}

#[test]
fn worker_client_serves_until_stopped() {
    let (_dir, server) = server(false);
    let worker = WorkerClient::register(
        Interface::new(&server.url(), &server.create_token("farm", true)).unwrap(),
        &["native-lp"],
    )
    .unwrap();
    let stop = std::sync::Arc::new(std::sync::atomic::AtomicBool::new(false));
    let serving = {
        let (worker, stop) = (worker.clone(), stop.clone());
        std::thread::spawn(move || worker.serve_native(&stop, Duration::from_millis(200), Duration::from_secs(1)))
    };
    let interface = session(&server, "u");
    let mut model = interface.new_model_from_bytes("d.mhl", DCOPF.as_bytes().to_vec(), "D", None).unwrap();
    model.set_interface_file_bytes("case", "case.m", CASE.to_vec()).unwrap();
    for _ in 0..3 {
        let done = model.run().unwrap();
        assert_eq!(done.status, ExecutionStatus::Success);
        assert_eq!(done.worker_id.as_deref(), Some(worker.id()));
    }
    stop.store(true, std::sync::atomic::Ordering::Relaxed);
    serving.join().unwrap().unwrap();
}

#[test]
fn cli_round_trip() {
    let (dir, server) = server(true);
    let token = server.create_token("cli", false);
    let model = dir.path().join("dcopf.mhl");
    std::fs::write(&model, DCOPF).unwrap();
    let case = dir.path().join("case.m");
    std::fs::write(&case, CASE).unwrap();
    let cli = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_modelhub-client"))
            .env("MODELHUB_URL", server.url())
            .env("MODELHUB_TOKEN", &token)
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    cli(&["upload", model.to_str().unwrap(), "--name", "DCOPF Model"]);
    cli(&["set", "DCOPF Model", "feastol", "1e-3"]);
    cli(&["set", "DCOPF Model", "case", "--file", case.to_str().unwrap()]);
    assert!(cli(&["recipe", "DCOPF Model"]).contains("case"));
    assert!(cli(&["components", "DCOPF Model"]).contains("P_limits"));
    assert!(cli(&["run", "DCOPF Model"]).trim().ends_with("success"));
    assert_eq!(cli(&["status", "DCOPF Model"]).trim(), "success");
    assert!(!cli(&["log", "DCOPF Model"]).is_empty());
    let objective: serde_json::Value =
        serde_json::from_str(&cli(&["results", "DCOPF Model", "--component", "gen_cost_obj"])).unwrap();
    assert_eq!(objective, json!(3500.0));
}
