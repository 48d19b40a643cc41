//! Traffic generation, closed-loop scenarios, the EES overhead bench and
//! the report plumbing behind the `loop` CLI.

pub mod bench;
pub mod corpus;
pub mod csvio;
pub mod probe;
pub mod report;
pub mod scenario;
pub mod stack;
pub mod traffic;

/// Logs to stderr, filtered by `RUST_LOG` (default `warn`).
pub fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Event sink of a service process: file-backed when a path is given.
pub fn service_events(path: Option<&std::path::Path>) -> std::io::Result<nwdaf_loop::events::EventLog> {
    match path {
        Some(p) => nwdaf_loop::events::EventLog::with_file(p),
        None => Ok(nwdaf_loop::events::EventLog::new()),
    }
}

/// Prints the `READY {json}` line a supervising harness waits for.
pub fn announce_ready(addrs: serde_json::Value) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "READY {addrs}");
    let _ = out.flush();
}
