pub mod clock;
pub mod device;
pub mod journal;
pub mod par;
pub mod text;
pub mod gateway;
pub mod memory;
pub mod toolsmith;
pub mod expert;
pub mod orchestrator;
pub mod evalkit;
pub mod cli;

/// Directory of the bundled scenarios, scripts, tasks and expert pool.
pub fn bundle_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("bundle")
}
