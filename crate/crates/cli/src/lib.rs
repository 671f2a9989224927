//! `fixthresh`: fixed-threshold robustness evaluation for AI-generated-image
//! detectors, plus the desk-scale spectrum experiment.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 a pipeline
//! stage failed.

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;

pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod plot;

pub use commands::{run, Cli};

/// Bad flags, config or input files.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<fixthresh_core::Error>() {
            return if e.is_validation() { 2 } else { 3 };
        }
    }
    3
}

/// Worker count: `FIXTHRESH_THREADS` if set, else the available cores.
pub fn thread_budget() -> anyhow::Result<usize> {
    match std::env::var("FIXTHRESH_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(UsageError(format!("FIXTHRESH_THREADS must be a positive integer, got '{v}'")).into()),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Map `f` over `items` on up to `threads` scoped workers. Results come back
/// in input order, so output never depends on scheduling.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = threads.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
