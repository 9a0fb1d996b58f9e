use rayon::{ThreadPool, ThreadPoolBuilder};

/// Environment variable holding the worker count for sweeps and replications.
pub const WORKERS_ENV: &str = "CRIOT_WORKERS";

/// Worker count from [`WORKERS_ENV`]; unset, empty or `0` means one per core.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn worker_pool() -> ThreadPool {
    ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .expect("thread pool construction")
}
