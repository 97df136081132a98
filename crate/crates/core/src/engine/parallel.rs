use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::checkpoint::Checkpoint;
use super::pool::{AckOutcome, Delivery, VisibilityTimeout, WorkPool};
use super::{check_inputs, expand_task, merge, EnumerationReport, Task, TaskResult};
use crate::error::{Error, Result};
use crate::format::{domain_sha256, model_sha256};
use crate::geometry::BoundedDomain;
use crate::network::Mlp;

/// A task failing this many times with a retryable error aborts the run.
pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Clone, Debug)]
pub struct PoolOptions {
    pub workers: usize,
    /// Result directory for per-task files and the manifest.
    pub checkpoint: Option<PathBuf>,
    pub resume: bool,
    pub timeout: VisibilityTimeout,
}

impl PoolOptions {
    pub fn new(workers: usize) -> Self {
        PoolOptions {
            workers,
            checkpoint: None,
            resume: false,
            timeout: VisibilityTimeout::default(),
        }
    }
}

/// Shared master state for in-process and remote runs.
pub(crate) struct Run {
    pub pool: WorkPool,
    pub checkpoint: Option<Checkpoint>,
    pub total: usize,
    attempts: Mutex<HashMap<u64, u32>>,
    fatal: Mutex<Option<Error>>,
    start: Instant,
}

impl Run {
    pub fn prepare(mlp: &Mlp, domain: &BoundedDomain, opts: &PoolOptions) -> Result<Run> {
        check_inputs(mlp, domain)?;
        let n1 = mlp.width(1);
        if n1 > mlp.input_dim() {
            log::warn!(
                "layer 1 has {n1} neurons for {} inputs; all 2^{n1} layer-1 patterns are still tried",
                mlp.input_dim()
            );
        }
        let tasks = Task::all(n1)?;
        let pool = WorkPool::new(opts.timeout);
        let checkpoint = match &opts.checkpoint {
            Some(dir) => {
                let (cp, done) = Checkpoint::open(dir, &model_sha256(mlp), &domain_sha256(domain), n1, opts.resume)?;
                if !done.is_empty() {
                    log::info!("resuming with {} of {} tasks already done", done.len(), tasks.len());
                }
                for r in done {
                    pool.preload(r);
                }
                Some(cp)
            }
            None => None,
        };
        let total = tasks.len();
        for t in tasks {
            if !pool.is_done(t.id) {
                pool.enqueue(t);
            }
        }
        Ok(Run {
            pool,
            checkpoint,
            total,
            attempts: Mutex::new(HashMap::new()),
            fatal: Mutex::new(None),
            start: Instant::now(),
        })
    }

    /// Persists then acknowledges a result.
    pub fn complete(&self, r: TaskResult) -> Result<AckOutcome> {
        if self.pool.is_done(r.task_id) {
            return Ok(self.pool.ack(r));
        }
        if let Some(cp) = &self.checkpoint {
            cp.record(&r)?;
        }
        Ok(self.pool.ack(r))
    }

    /// Handles a failed attempt: requeue if retryable and attempts remain,
    /// otherwise abort the run.
    pub fn fail(&self, task_id: u64, err: Error) {
        let n = {
            let mut a = self.attempts.lock().unwrap_or_else(|p| p.into_inner());
            let n = a.entry(task_id).or_insert(0);
            *n += 1;
            *n
        };
        if err.is_retryable() && n < MAX_ATTEMPTS {
            log::warn!("task {task_id} failed (attempt {n}): {err}; retrying");
            self.pool.release(task_id);
        } else {
            log::error!("task {task_id} failed: {err}");
            self.abort(err);
        }
    }

    pub fn abort(&self, err: Error) {
        self.fatal.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(err);
        self.pool.close();
    }

    /// Blocks until every task is acknowledged or the run is aborted.
    pub fn wait(&self) -> Result<()> {
        loop {
            if let Some(e) = self.fatal.lock().unwrap_or_else(|p| p.into_inner()).take() {
                return Err(e);
            }
            if self.pool.wait_completed(self.total, Some(Duration::from_millis(100))) {
                return Ok(());
            }
        }
    }

    pub fn finish(self, mlp: &Mlp, domain: &BoundedDomain, workers: usize) -> EnumerationReport {
        let wall = self.start.elapsed().as_secs_f64();
        merge(mlp, domain, self.pool.into_results(), workers, wall)
    }
}

/// Dynamic load balancing over all `2^{n_1}` layer-1 sign vectors with
/// `opts.workers` threads.
pub fn par_layerwise1(mlp: &Mlp, domain: &BoundedDomain, opts: &PoolOptions) -> Result<EnumerationReport> {
    if opts.workers == 0 {
        return Err(Error::usage("need at least one worker"));
    }
    let run = Run::prepare(mlp, domain, opts)?;
    let outcome = thread::scope(|scope| {
        for _ in 0..opts.workers {
            scope.spawn(|| worker_loop(&run, mlp, domain));
        }
        let r = run.wait();
        run.pool.enqueue_terminate(opts.workers);
        if r.is_err() {
            run.pool.close();
        }
        r
    });
    outcome?;
    Ok(run.finish(mlp, domain, opts.workers))
}

fn worker_loop(run: &Run, mlp: &Mlp, domain: &BoundedDomain) {
    while let Delivery::Task(task) = run.pool.dequeue() {
        match expand_task(mlp, domain, &task).and_then(|r| run.complete(r)) {
            Ok(_) => {}
            Err(e) => run.fail(task.id, e),
        }
    }
}
