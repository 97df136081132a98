//! Task queue with leases. A dequeued task stays leased until acknowledged;
//! an unacknowledged lease expires after the visibility timeout and the task
//! is queued again.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::{Task, TaskResult};

pub const DEFAULT_TIMEOUT_FLOOR: Duration = Duration::from_secs(30);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Delivery {
    Task(Task),
    Terminate,
}

/// How long a lease may stay unacknowledged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VisibilityTimeout {
    /// `max(floor, 10 × median completed task time)`.
    Adaptive {
        floor: Duration,
    },
    Fixed(Duration),
}

impl Default for VisibilityTimeout {
    fn default() -> Self {
        VisibilityTimeout::Adaptive {
            floor: DEFAULT_TIMEOUT_FLOOR,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AckOutcome {
    Accepted,
    /// The task was already acknowledged; the first result is kept.
    Duplicate,
    /// The id was never enqueued.
    Unknown,
}

struct Lease {
    task: Task,
    deadline: Instant,
}

#[derive(Default)]
struct State {
    queue: VecDeque<Option<Task>>,
    leases: HashMap<u64, Lease>,
    known: HashMap<u64, Task>,
    done: BTreeMap<u64, TaskResult>,
    times: Vec<f64>,
    closed: bool,
    redeliveries: u64,
}

pub struct WorkPool {
    state: Mutex<State>,
    changed: Condvar,
    timeout: VisibilityTimeout,
}

impl WorkPool {
    pub fn new(timeout: VisibilityTimeout) -> Self {
        WorkPool {
            state: Mutex::new(State::default()),
            changed: Condvar::new(),
            timeout,
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn enqueue(&self, task: Task) {
        let mut st = self.lock();
        st.known.insert(task.id, task.clone());
        st.queue.push_back(Some(task));
        self.changed.notify_one();
    }

    /// Marks a task as already completed (resume).
    pub fn preload(&self, result: TaskResult) {
        let mut st = self.lock();
        st.known.entry(result.task_id).or_insert_with(|| Task {
            id: result.task_id,
            s1: result.s1.clone(),
        });
        st.done.insert(result.task_id, result);
        self.changed.notify_all();
    }

    /// Queues `count` terminate sentinels behind any pending tasks.
    pub fn enqueue_terminate(&self, count: usize) {
        let mut st = self.lock();
        st.queue.extend(std::iter::repeat_n(None, count));
        self.changed.notify_all();
    }

    /// After closing, every dequeue returns `Terminate`.
    pub fn close(&self) {
        self.lock().closed = true;
        self.changed.notify_all();
    }

    fn current_timeout(&self, st: &State) -> Duration {
        match self.timeout {
            VisibilityTimeout::Fixed(d) => d,
            VisibilityTimeout::Adaptive { floor } => {
                if st.times.is_empty() {
                    return floor;
                }
                let mut t = st.times.clone();
                t.sort_by(f64::total_cmp);
                let median = t[t.len() / 2];
                floor.max(Duration::from_secs_f64(10.0 * median))
            }
        }
    }

    fn requeue_expired(&self, st: &mut State, now: Instant) {
        let expired: Vec<u64> = st
            .leases
            .iter()
            .filter(|(_, l)| l.deadline <= now)
            .map(|(&id, _)| id)
            .collect();
        for id in expired {
            let lease = st.leases.remove(&id).unwrap();
            log::warn!("task {id} lease expired; queueing it again");
            st.redeliveries += 1;
            st.queue.push_front(Some(lease.task));
        }
    }

    /// Blocks until a task or sentinel is available.
    pub fn dequeue(&self) -> Delivery {
        let mut st = self.lock();
        loop {
            let now = Instant::now();
            self.requeue_expired(&mut st, now);
            if st.closed {
                return Delivery::Terminate;
            }
            while let Some(item) = st.queue.pop_front() {
                let Some(task) = item else {
                    return Delivery::Terminate;
                };
                if st.done.contains_key(&task.id) || st.leases.contains_key(&task.id) {
                    continue;
                }
                let deadline = now + self.current_timeout(&st);
                st.leases.insert(
                    task.id,
                    Lease {
                        task: task.clone(),
                        deadline,
                    },
                );
                return Delivery::Task(task);
            }
            let wait = st
                .leases
                .values()
                .map(|l| l.deadline.saturating_duration_since(now))
                .min()
                .unwrap_or(Duration::from_secs(1))
                .max(Duration::from_millis(1));
            st = self.changed.wait_timeout(st, wait).unwrap_or_else(|p| p.into_inner()).0;
        }
    }

    /// Records a result. Acks for a task whose lease expired are still
    /// accepted if no other copy finished first.
    pub fn ack(&self, result: TaskResult) -> AckOutcome {
        let mut st = self.lock();
        let id = result.task_id;
        if !st.known.contains_key(&id) {
            return AckOutcome::Unknown;
        }
        st.leases.remove(&id);
        if let Some(prev) = st.done.get(&id) {
            if !prev.same_cells(&result) {
                log::error!("task {id} completed twice with different results; keeping the first");
            }
            return AckOutcome::Duplicate;
        }
        st.times.push(result.wall_time);
        st.done.insert(id, result);
        self.changed.notify_all();
        AckOutcome::Accepted
    }

    /// Gives a leased task back (its worker failed).
    pub fn release(&self, task_id: u64) {
        let mut st = self.lock();
        if let Some(lease) = st.leases.remove(&task_id) {
            st.redeliveries += 1;
            st.queue.push_front(Some(lease.task));
            self.changed.notify_one();
        }
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    pub fn is_done(&self, task_id: u64) -> bool {
        self.lock().done.contains_key(&task_id)
    }

    pub fn completed(&self) -> usize {
        self.lock().done.len()
    }

    pub fn redeliveries(&self) -> u64 {
        self.lock().redeliveries
    }

    /// Blocks until `n` tasks are acknowledged or `limit` passes.
    pub fn wait_completed(&self, n: usize, limit: Option<Duration>) -> bool {
        let deadline = limit.map(|l| Instant::now() + l);
        let mut st = self.lock();
        while st.done.len() < n {
            // Wake periodically so expired leases get requeued even when no
            // worker is blocked in dequeue.
            let now = Instant::now();
            self.requeue_expired(&mut st, now);
            if !st.queue.is_empty() {
                self.changed.notify_all();
            }
            let mut wait = Duration::from_millis(200);
            if let Some(d) = deadline {
                if now >= d {
                    return false;
                }
                wait = wait.min(d - now);
            }
            st = self.changed.wait_timeout(st, wait).unwrap_or_else(|p| p.into_inner()).0;
        }
        true
    }

    pub fn into_results(self) -> Vec<TaskResult> {
        self.state
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
            .done
            .into_values()
            .collect()
    }

    pub fn results(&self) -> Vec<TaskResult> {
        self.lock().done.values().cloned().collect()
    }
}
