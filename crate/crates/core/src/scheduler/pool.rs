use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use chrono::Utc;

use super::Scheduler;

#[derive(Debug, Clone)]
pub struct PoolConfig {
    pub workers: usize,
    /// Worker ids are `<prefix>-<n>`; must be unique across processes that
    /// share a store.
    pub worker_prefix: String,
    /// Upper bound on how long an idle worker sleeps between queue checks.
    pub idle_poll: Duration,
    /// `None` disables the reaper thread.
    pub reaper_interval: Option<Duration>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            workers: thread::available_parallelism().map_or(1, |n| n.get()),
            worker_prefix: format!("worker-{}", std::process::id()),
            idle_poll: Duration::from_millis(200),
            reaper_interval: Some(Duration::from_secs(5)),
        }
    }
}

/// Worker threads pulling from one scheduler, plus an optional reaper.
pub struct WorkerPool {
    scheduler: Arc<Scheduler>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
    reaper: Option<JoinHandle<()>>,
}

// Deregisters on exit, including when the worker dies by panicking.
struct Registration<'a> {
    scheduler: &'a Scheduler,
    id: String,
}

impl Drop for Registration<'_> {
    fn drop(&mut self) {
        self.scheduler.deregister_worker(&self.id);
    }
}

fn worker_loop(scheduler: &Scheduler, id: String, stop: &AtomicBool, idle_poll: Duration) {
    scheduler.register_worker(&id);
    let reg = Registration { scheduler, id };
    while !stop.load(Ordering::SeqCst) {
        match scheduler.claim_next(&reg.id) {
            Ok(Some(entry)) => {
                if let Err(e) = scheduler.assess(&entry, &reg.id) {
                    tracing::error!(worker = %reg.id, "storing result failed: {e}");
                }
            }
            Ok(None) => scheduler.signal().wait(idle_poll),
            Err(e) => {
                tracing::error!(worker = %reg.id, "claim failed: {e}");
                thread::sleep(idle_poll);
            }
        }
    }
}

impl WorkerPool {
    pub fn start(scheduler: Arc<Scheduler>, config: PoolConfig) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..config.workers.max(1))
            .map(|n| {
                let scheduler = Arc::clone(&scheduler);
                let stop = Arc::clone(&stop);
                let id = format!("{}-{n}", config.worker_prefix);
                let idle = config.idle_poll;
                thread::Builder::new()
                    .name(id.clone())
                    .spawn(move || worker_loop(&scheduler, id, &stop, idle))
                    .expect("spawn worker thread")
            })
            .collect();
        let reaper = config.reaper_interval.map(|interval| {
            let scheduler = Arc::clone(&scheduler);
            let stop = Arc::clone(&stop);
            thread::Builder::new()
                .name("reaper".into())
                .spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        if let Err(e) = scheduler.reap_stalled(Utc::now()) {
                            tracing::error!("reaper: {e}");
                        }
                        let mut slept = Duration::ZERO;
                        while slept < interval && !stop.load(Ordering::SeqCst) {
                            let step = (interval - slept).min(Duration::from_millis(50));
                            thread::sleep(step);
                            slept += step;
                        }
                    }
                })
                .expect("spawn reaper thread")
        });
        WorkerPool {
            scheduler,
            stop,
            workers,
            reaper,
        }
    }

    /// Workers that have not exited.
    pub fn alive(&self) -> usize {
        self.workers.iter().filter(|h| !h.is_finished()).count()
    }

    pub fn scheduler(&self) -> &Arc<Scheduler> {
        &self.scheduler
    }

    /// Stops all threads after their current assessment and waits for them.
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        self.scheduler.signal().notify();
        for h in self.workers {
            let _ = h.join();
        }
        if let Some(h) = self.reaper {
            let _ = h.join();
        }
    }
}
