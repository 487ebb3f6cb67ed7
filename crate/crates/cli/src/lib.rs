//! Command-line front end and HTTP service for the urbanwind toolkit.

pub mod commands;
pub mod service;

/// Single-line JSON error record printed on failure.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

/// Logger configured from `UF_LOG` (default `info`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("UF_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp_millis().try_init();
}
