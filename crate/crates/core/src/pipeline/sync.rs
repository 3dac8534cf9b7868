//! Time-stamped buffers and window-based pairing of leader and follower
//! measurements.

use std::collections::VecDeque;

use super::{FollowerBundle, LeaderBundle};
use crate::error::{Error, Result};

pub trait Timestamped {
    fn timestamp(&self) -> f64;
}

impl Timestamped for LeaderBundle {
    fn timestamp(&self) -> f64 {
        self.timestamp
    }
}

impl Timestamped for FollowerBundle {
    fn timestamp(&self) -> f64 {
        self.timestamp
    }
}

impl Timestamped for f64 {
    fn timestamp(&self) -> f64 {
        *self
    }
}

/// Bounded FIFO with non-decreasing timestamps; the oldest entry is
/// dropped when a push exceeds the capacity.
#[derive(Debug, Clone)]
pub struct MeasurementBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
    window: f64,
    /// Newest timestamp ever pushed, kept after the entry leaves.
    newest: Option<f64>,
}

impl<T: Timestamped> MeasurementBuffer<T> {
    pub fn new(capacity: usize, window: f64) -> Result<Self> {
        if capacity == 0 || !(window > 0.0) || !window.is_finite() {
            return Err(Error::Config(format!(
                "buffer needs capacity > 0 and a positive window, got {capacity} and {window}"
            )));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity),
            capacity,
            window,
            newest: None,
        })
    }

    /// Appends a measurement; returns the evicted oldest one, if any.
    pub fn push(&mut self, item: T) -> Result<Option<T>> {
        let t = item.timestamp();
        if !t.is_finite() {
            return Err(Error::Precondition("timestamp must be finite".into()));
        }
        if let Some(newest) = self.newest {
            if t < newest {
                return Err(Error::Precondition(format!(
                    "timestamp {t} precedes the newest pushed {newest}"
                )));
            }
        }
        self.newest = Some(t);
        self.items.push_back(item);
        Ok(if self.items.len() > self.capacity {
            self.items.pop_front()
        } else {
            None
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Newest timestamp ever pushed.
    pub fn newest(&self) -> Option<f64> {
        self.newest
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.items.iter().map(Timestamped::timestamp).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Drops every entry older than `t`.
    pub fn expire_before(&mut self, t: f64) -> usize {
        let before = self.items.len();
        while self.items.front().is_some_and(|x| x.timestamp() < t) {
            self.items.pop_front();
        }
        before - self.items.len()
    }

    /// Removes the entries at the given (distinct) positions, in position order.
    fn take(&mut self, positions: &[usize]) -> Vec<T> {
        let mut sorted: Vec<(usize, usize)> = positions
            .iter()
            .copied()
            .enumerate()
            .map(|(k, p)| (p, k))
            .collect();
        sorted.sort_unstable();
        let mut out: Vec<Option<T>> = (0..positions.len()).map(|_| None).collect();
        for &(p, k) in sorted.iter().rev() {
            out[k] = self.items.remove(p);
        }
        out.into_iter()
            .map(|x| x.expect("positions are in range"))
            .collect()
    }
}

/// Pairs follower timestamps with leader timestamps: followers in time
/// order each take the nearest unused leader with `|dt| <= window / 2`
/// (the earlier leader on ties). Returns `(leader, follower)` positions in
/// follower order. Both inputs must be sorted.
pub fn match_timestamps(leader: &[f64], follower: &[f64], window: f64) -> Vec<(usize, usize)> {
    let half = window / 2.0;
    let mut used = vec![false; leader.len()];
    let mut out = Vec::new();
    let mut lo = 0;
    for (fi, &tf) in follower.iter().enumerate() {
        while lo < leader.len() && leader[lo] < tf - half {
            lo += 1;
        }
        let mut best: Option<(f64, usize)> = None;
        for (li, &tl) in leader.iter().enumerate().skip(lo) {
            if tl > tf + half {
                break;
            }
            let d = (tl - tf).abs();
            if !used[li] && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, li));
            }
        }
        if let Some((_, li)) = best {
            used[li] = true;
            out.push((li, fi));
        }
    }
    out
}

/// Emits the pairs that are final: a follower is matched once the leader
/// stream has moved past its window, so later leaders cannot be nearer.
/// Closed followers leave the buffer matched or not; leaders too old for
/// any current or future follower are expired. The concatenated output of
/// repeated calls equals [`match_timestamps`] on the full streams.
pub fn sliding_window_match(
    leader_buf: &mut MeasurementBuffer<LeaderBundle>,
    follower_buf: &mut MeasurementBuffer<FollowerBundle>,
    window: f64,
) -> Vec<(LeaderBundle, FollowerBundle)> {
    drain_matches(leader_buf, follower_buf, window, false)
}

/// End of stream: matches every buffered follower as if no further leader
/// will arrive, then empties both buffers.
pub fn flush_matches(
    leader_buf: &mut MeasurementBuffer<LeaderBundle>,
    follower_buf: &mut MeasurementBuffer<FollowerBundle>,
    window: f64,
) -> Vec<(LeaderBundle, FollowerBundle)> {
    let out = drain_matches(leader_buf, follower_buf, window, true);
    leader_buf.items.clear();
    out
}

pub(crate) fn drain_matches<L: Timestamped, F: Timestamped>(
    leader_buf: &mut MeasurementBuffer<L>,
    follower_buf: &mut MeasurementBuffer<F>,
    window: f64,
    flush: bool,
) -> Vec<(L, F)> {
    let half = window / 2.0;
    let follower_ts = follower_buf.timestamps();
    let closed = match leader_buf.newest() {
        _ if flush => follower_ts.len(),
        Some(t) => follower_ts.iter().take_while(|&&tf| tf + half < t).count(),
        None => 0,
    };
    let pairs = match_timestamps(&leader_buf.timestamps(), &follower_ts[..closed], window);
    let leaders = leader_buf.take(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let mut followers: Vec<Option<F>> = follower_buf.items.drain(..closed).map(Some).collect();
    let out = leaders
        .into_iter()
        .zip(&pairs)
        .map(|(l, &(_, fi))| (l, followers[fi].take().expect("each follower matched once")))
        .collect();
    // Every later follower is at least as new as the newest seen.
    let horizon = follower_buf
        .items
        .front()
        .map(Timestamped::timestamp)
        .or(follower_buf.newest());
    if let Some(t) = horizon {
        leader_buf.expire_before(t - half);
    }
    out
}
