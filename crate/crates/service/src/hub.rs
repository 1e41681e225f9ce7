//! Fan-out of live messages to subscribers with per-subscriber bounded queues.
//!
//! Publishing never waits on a subscriber. When a queue is full the oldest
//! droppable message (frame or feature point) is discarded and the next
//! surviving message carries the count; other kinds are never dropped.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, Weak};

use tokio::sync::Notify;

use crate::api::{ApiBody, ApiMessage, Status};
use crate::store::RepSummary;

pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

/// Live state mirrored for subscribers that join mid-set.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveState {
    pub status: Status,
    pub squat_count: usize,
    pub rack_x: Option<f64>,
    pub recording_frames: usize,
    pub reps: Vec<RepSummary>,
}

impl Default for LiveState {
    fn default() -> Self {
        Self {
            status: Status::Idle,
            squat_count: 0,
            rack_x: None,
            recording_frames: 0,
            reps: Vec::new(),
        }
    }
}

#[derive(Debug, Default)]
struct QueueState {
    items: VecDeque<ApiMessage>,
    /// Drops not yet attached to a queued message.
    pending_drops: u64,
    dropped_total: u64,
    closed: bool,
}

#[derive(Debug)]
struct Queue {
    state: Mutex<QueueState>,
    notify: Notify,
    capacity: usize,
}

impl Queue {
    fn push(&self, mut msg: ApiMessage) {
        let mut s = self.state.lock().expect("queue lock");
        if s.items.len() >= self.capacity {
            if let Some(i) = s.items.iter().position(|m| m.body.is_droppable()) {
                let gone = s.items.remove(i).expect("index in range");
                let carried = gone.dropped + 1;
                s.dropped_total += 1;
                match s.items.get_mut(i) {
                    Some(next) => next.dropped += carried,
                    None => s.pending_drops += carried,
                }
            } else if msg.body.is_droppable() {
                s.pending_drops += 1 + msg.dropped;
                s.dropped_total += 1;
                return;
            }
        }
        msg.dropped += std::mem::take(&mut s.pending_drops);
        s.items.push_back(msg);
        drop(s);
        self.notify.notify_one();
    }

    fn close(&self) {
        self.state.lock().expect("queue lock").closed = true;
        self.notify.notify_one();
    }
}

#[derive(Debug)]
struct HubState {
    session_id: String,
    seq: u64,
    last_t: i64,
    live: LiveState,
    subscribers: Vec<Weak<Queue>>,
    closed: bool,
}

#[derive(Debug)]
pub struct Hub {
    state: Mutex<HubState>,
    capacity: usize,
}

impl Hub {
    pub fn new(session_id: impl Into<String>, capacity: usize) -> Arc<Self> {
        Arc::new(Self {
            state: Mutex::new(HubState {
                session_id: session_id.into(),
                seq: 0,
                last_t: 0,
                live: LiveState::default(),
                subscribers: Vec::new(),
                closed: false,
            }),
            capacity: capacity.max(1),
        })
    }

    /// Assigns the next sequence number and enqueues the message for every
    /// subscriber. `update` runs under the same lock, so a snapshot taken by
    /// a joining subscriber is always consistent with the tail it receives.
    pub fn publish(&self, t_ms: i64, body: ApiBody, update: impl FnOnce(&mut LiveState)) -> u64 {
        let mut s = self.state.lock().expect("hub lock");
        update(&mut s.live);
        s.seq += 1;
        s.last_t = t_ms;
        let msg = ApiMessage {
            seq: s.seq,
            session_id: s.session_id.clone(),
            t_ms,
            dropped: 0,
            body,
        };
        s.subscribers.retain(|w| match w.upgrade() {
            Some(q) => {
                q.push(msg.clone());
                true
            }
            None => false,
        });
        s.seq
    }

    pub fn update_state(&self, update: impl FnOnce(&mut LiveState)) {
        update(&mut self.state.lock().expect("hub lock").live);
    }

    pub fn state(&self) -> LiveState {
        self.state.lock().expect("hub lock").live.clone()
    }

    pub fn session_id(&self) -> String {
        self.state.lock().expect("hub lock").session_id.clone()
    }

    pub fn last_seq(&self) -> u64 {
        self.state.lock().expect("hub lock").seq
    }

    /// Snapshot message carrying the current sequence number; the tail
    /// starts at the following one.
    pub fn snapshot(&self) -> ApiMessage {
        let s = self.state.lock().expect("hub lock");
        snapshot_of(&s)
    }

    pub fn subscribe(&self) -> Subscription {
        let queue = Arc::new(Queue {
            state: Mutex::new(QueueState::default()),
            notify: Notify::new(),
            capacity: self.capacity,
        });
        let mut s = self.state.lock().expect("hub lock");
        queue.push(snapshot_of(&s));
        if s.closed {
            queue.close();
        } else {
            s.subscribers.push(Arc::downgrade(&queue));
        }
        Subscription { queue }
    }

    pub fn subscriber_count(&self) -> usize {
        let mut s = self.state.lock().expect("hub lock");
        s.subscribers.retain(|w| w.strong_count() > 0);
        s.subscribers.len()
    }

    /// Ends every subscription once its queue drains.
    pub fn close(&self) {
        let mut s = self.state.lock().expect("hub lock");
        s.closed = true;
        for q in s.subscribers.drain(..).filter_map(|w| w.upgrade()) {
            q.close();
        }
    }
}

fn snapshot_of(s: &HubState) -> ApiMessage {
    ApiMessage {
        seq: s.seq,
        session_id: s.session_id.clone(),
        t_ms: s.last_t,
        dropped: 0,
        body: ApiBody::Snapshot {
            status: s.live.status,
            squat_count: s.live.squat_count,
            rack_x: s.live.rack_x,
            recording_frames: s.live.recording_frames,
            reps: s.live.reps.clone(),
        },
    }
}

pub struct Subscription {
    queue: Arc<Queue>,
}

impl Subscription {
    pub fn try_recv(&self) -> Option<ApiMessage> {
        self.queue.state.lock().expect("queue lock").items.pop_front()
    }

    /// Next message, or `None` once the hub is closed and the queue drained.
    pub async fn recv(&self) -> Option<ApiMessage> {
        loop {
            let notified = self.queue.notify.notified();
            {
                let mut s = self.queue.state.lock().expect("queue lock");
                if let Some(m) = s.items.pop_front() {
                    return Some(m);
                }
                if s.closed {
                    return None;
                }
            }
            notified.await;
        }
    }

    pub fn dropped_total(&self) -> u64 {
        self.queue.state.lock().expect("queue lock").dropped_total
    }

    pub fn pending(&self) -> usize {
        self.queue.state.lock().expect("queue lock").items.len()
    }
}
