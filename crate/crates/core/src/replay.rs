//! Structured experience replay: one list of observed next states per
//! state-action pair, visit counters, and for every state the set of pairs
//! that have been seen to move into it.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::mdp::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    n_states: usize,
    n_actions: usize,
    lists: Vec<VecDeque<usize>>,
    capacity: Option<usize>,
    nu: Vec<u64>,
    nu_tilde: Vec<u64>,
}

impl ReplayBuffer {
    /// `capacity = None` keeps every observation; `Some(c)` evicts FIFO beyond `c`.
    pub fn new(n_states: usize, n_actions: usize, capacity: Option<usize>) -> Self {
        Self {
            n_states,
            n_actions,
            lists: vec![VecDeque::new(); n_states * n_actions],
            capacity,
            nu: vec![0; n_states * n_actions],
            nu_tilde: vec![0; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn list(&self, s: usize, a: usize) -> &VecDeque<usize> {
        &self.lists[s * self.n_actions + a]
    }

    /// Pair visit count `nu(s, a)`.
    pub fn nu(&self, s: usize, a: usize) -> u64 {
        self.nu[s * self.n_actions + a]
    }

    /// Row-major pair visit counts.
    pub fn nu_all(&self) -> &[u64] {
        &self.nu
    }

    /// State visit count `nu~(s)` (counts arrivals, not departures).
    pub fn nu_tilde(&self, s: usize) -> u64 {
        self.nu_tilde[s]
    }

    pub fn nu_tilde_all(&self) -> &[u64] {
        &self.nu_tilde
    }

    pub fn min_visits(&self) -> u64 {
        self.nu.iter().copied().min().unwrap_or(0)
    }

    pub fn total_visits(&self) -> u64 {
        self.nu.iter().sum()
    }

    /// Empirical next-state law of one pair; all zeros if its list is empty.
    pub fn empirical(&self, s: usize, a: usize) -> Vec<f64> {
        let list = self.list(s, a);
        let mut out = vec![0.0; self.n_states];
        if list.is_empty() {
            return out;
        }
        for &t in list {
            out[t] += 1.0;
        }
        let n = list.len() as f64;
        out.iter_mut().for_each(|x| *x /= n);
        out
    }
}

/// `incoming(s')`: pairs observed to transition into `s'`, in first-seen order.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomingSets {
    n_pairs: usize,
    members: Vec<Vec<usize>>,
    present: Vec<bool>,
}

impl IncomingSets {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        let n_pairs = n_states * n_actions;
        Self { n_pairs, members: vec![Vec::new(); n_states], present: vec![false; n_states * n_pairs] }
    }

    /// Row-major pair indices `s * |A| + a` feeding into `s_next`.
    pub fn members(&self, s_next: usize) -> &[usize] {
        &self.members[s_next]
    }

    pub fn contains(&self, s_next: usize, pair: usize) -> bool {
        self.present[s_next * self.n_pairs + pair]
    }

    fn insert(&mut self, s_next: usize, pair: usize) {
        let slot = &mut self.present[s_next * self.n_pairs + pair];
        if !*slot {
            *slot = true;
            self.members[s_next].push(pair);
        }
    }
}

/// Records the transition `x -> s_next` in the buffer, counters and incoming sets.
pub fn buffer_push(buffer: &mut ReplayBuffer, incoming: &mut IncomingSets, x: (usize, usize), s_next: usize) -> Result<()> {
    let (s, a) = x;
    if s >= buffer.n_states || a >= buffer.n_actions || s_next >= buffer.n_states {
        return Err(Error::IndexOutOfRange(format!("transition ({s}, {a}) -> {s_next}")));
    }
    let pair = s * buffer.n_actions + a;
    let list = &mut buffer.lists[pair];
    if let Some(cap) = buffer.capacity {
        while list.len() >= cap.max(1) {
            list.pop_front();
        }
    }
    list.push_back(s_next);
    buffer.nu[pair] += 1;
    buffer.nu_tilde[s_next] += 1;
    incoming.insert(s_next, pair);
    Ok(())
}

/// For every pair in `incoming(s_k)`, draws one element of its list uniformly
/// and reports whether it equals `s_k`. Pairs are visited in first-seen order,
/// which fixes the RNG consumption.
pub fn sample_incoming(
    buffer: &ReplayBuffer,
    incoming: &IncomingSets,
    s_k: usize,
    rng: &mut RngStream,
) -> Result<Vec<(usize, bool)>> {
    let na = buffer.n_actions;
    incoming
        .members(s_k)
        .iter()
        .map(|&pair| {
            let list = &buffer.lists[pair];
            if list.is_empty() {
                return Err(Error::EmptyList { state: pair / na, action: pair % na });
            }
            Ok((pair, list[rng.index(list.len())] == s_k))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_into_empty_buffer() {
        let mut b = ReplayBuffer::new(3, 2, None);
        let mut inc = IncomingSets::new(3, 2);
        buffer_push(&mut b, &mut inc, (1, 0), 2).unwrap();
        assert_eq!(b.list(1, 0), &VecDeque::from(vec![2]));
        assert_eq!(b.nu(1, 0), 1);
        assert_eq!(b.nu_tilde(2), 1);
        assert_eq!(inc.members(2), &[2]);
    }

    #[test]
    fn duplicates_in_list_not_in_set() {
        let mut b = ReplayBuffer::new(3, 2, None);
        let mut inc = IncomingSets::new(3, 2);
        buffer_push(&mut b, &mut inc, (0, 1), 2).unwrap();
        buffer_push(&mut b, &mut inc, (0, 1), 2).unwrap();
        assert_eq!(b.list(0, 1).len(), 2);
        assert_eq!(inc.members(2), &[1]);
        assert!(inc.contains(2, 1) && !inc.contains(1, 1));
    }

    #[test]
    fn capped_list_evicts_oldest() {
        let mut b = ReplayBuffer::new(3, 1, Some(2));
        let mut inc = IncomingSets::new(3, 1);
        for t in 0..3 {
            buffer_push(&mut b, &mut inc, (0, 0), t).unwrap();
        }
        assert_eq!(b.list(0, 0), &VecDeque::from(vec![1, 2]));
        assert_eq!(b.nu(0, 0), 3);
        assert_eq!(b.empirical(0, 0), vec![0.0, 0.5, 0.5]);
        // membership outlives eviction
        assert!(inc.contains(0, 0));
    }

    #[test]
    fn out_of_range_push() {
        let mut b = ReplayBuffer::new(2, 2, None);
        let mut inc = IncomingSets::new(2, 2);
        assert!(buffer_push(&mut b, &mut inc, (0, 2), 0).is_err());
        assert!(buffer_push(&mut b, &mut inc, (0, 0), 2).is_err());
    }

    #[test]
    fn pure_list_always_hits() {
        let mut b = ReplayBuffer::new(2, 1, None);
        let mut inc = IncomingSets::new(2, 1);
        buffer_push(&mut b, &mut inc, (0, 0), 1).unwrap();
        buffer_push(&mut b, &mut inc, (0, 0), 1).unwrap();
        let mut rng = RngStream::new(5);
        for _ in 0..100 {
            assert_eq!(sample_incoming(&b, &inc, 1, &mut rng).unwrap(), vec![(0, true)]);
        }
        assert!(sample_incoming(&b, &inc, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn mixed_list_is_bernoulli_half() {
        let mut b = ReplayBuffer::new(2, 1, None);
        let mut inc = IncomingSets::new(2, 1);
        buffer_push(&mut b, &mut inc, (0, 0), 1).unwrap();
        buffer_push(&mut b, &mut inc, (0, 0), 0).unwrap();
        let mut rng = RngStream::new(11);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_incoming(&b, &inc, 1, &mut rng).unwrap()[0].1).count();
        let mean = hits as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((mean - 0.5).abs() <= 3.0 * se, "mean {mean}");
    }
}
