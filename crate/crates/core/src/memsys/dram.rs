use std::collections::BTreeMap;

use crate::time::{ns, Time};

#[derive(Clone, Debug, PartialEq)]
pub struct DramConfig {
    pub latency_ns: f64,
    pub window_ns: f64,
    pub max_per_window: u32,
}

impl Default for DramConfig {
    fn default() -> Self {
        DramConfig { latency_ns: 45.0, window_ns: 10.0, max_per_window: 4 }
    }
}

/// Fixed-latency DRAM where at most `max_per_window` requests may begin in
/// each aligned window; overflow spills into the next window with room.
#[derive(Clone, Debug)]
pub struct Dram {
    latency: Time,
    window: Time,
    max: u32,
    counts: BTreeMap<u64, u32>,
    latest_window: u64,
    pub accesses: u64,
    pub contention_ps: u64,
}

impl Dram {
    pub fn new(cfg: &DramConfig) -> Self {
        Dram {
            latency: ns(cfg.latency_ns),
            window: ns(cfg.window_ns).max(1),
            max: cfg.max_per_window.max(1),
            counts: BTreeMap::new(),
            latest_window: 0,
            accesses: 0,
            contention_ps: 0,
        }
    }

    pub fn latency(&self) -> Time {
        self.latency
    }

    pub fn window(&self) -> Time {
        self.window
    }

    /// Peak block transfers per second implied by the window parameters.
    pub fn peak_accesses_per_s(&self) -> f64 {
        self.max as f64 * 1e12 / self.window as f64
    }

    /// Start time of a request arriving at `t`.
    pub fn schedule(&mut self, t: Time) -> Time {
        let mut w = t / self.window;
        while self.counts.get(&w).copied().unwrap_or(0) >= self.max {
            w += 1;
        }
        *self.counts.entry(w).or_insert(0) += 1;
        let start = t.max(w * self.window);
        self.accesses += 1;
        self.contention_ps += start - t;
        if w > self.latest_window {
            self.latest_window = w;
            if self.counts.len() > 1 << 16 {
                let keep = self.latest_window.saturating_sub(1 << 14);
                self.counts = self.counts.split_off(&keep);
            }
        }
        start
    }

    /// Completion time of a request arriving at `t`.
    pub fn access(&mut self, t: Time) -> Time {
        self.schedule(t) + self.latency
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_overflow_spills_forward() {
        let mut d = Dram::new(&DramConfig { latency_ns: 45.0, window_ns: 10.0, max_per_window: 2 });
        assert_eq!(d.schedule(1_000), 1_000);
        assert_eq!(d.schedule(2_000), 2_000);
        assert_eq!(d.schedule(3_000), 10_000);
        assert_eq!(d.schedule(3_000), 10_000);
        assert_eq!(d.schedule(3_000), 20_000);
        assert_eq!(d.contention_ps, 7_000 + 7_000 + 17_000);
    }
}
