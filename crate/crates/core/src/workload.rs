//! Open-loop arrivals, line-rate concurrency arithmetic and the M/M/c
//! cross-check model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::time::Time;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArrivalProcess {
    Poisson,
    FixedRate,
}

impl ArrivalProcess {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Some(ArrivalProcess::Poisson),
            "fixed" | "fixed_rate" => Some(ArrivalProcess::FixedRate),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArrivalProcess::Poisson => "poisson",
            ArrivalProcess::FixedRate => "fixed_rate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalSpec {
    pub process: ArrivalProcess,
    pub offered_gbps: f64,
    pub packet_bytes: u64,
    pub header_bytes: u64,
    /// Requests to simulate; 0 runs each trace segment once.
    pub requests: u64,
}

impl Default for ArrivalSpec {
    fn default() -> Self {
        ArrivalSpec {
            process: ArrivalProcess::Poisson,
            offered_gbps: 10.0,
            packet_bytes: 64,
            header_bytes: 48,
            requests: 0,
        }
    }
}

impl ArrivalSpec {
    pub fn validate(&self) -> Result<(), crate::ConfigError> {
        use crate::ConfigError;
        if !(self.offered_gbps > 0.0) || !self.offered_gbps.is_finite() {
            return Err(ConfigError::invalid("workload.offered_gbps", "must be positive"));
        }
        if self.packet_bytes < self.header_bytes || self.packet_bytes == 0 {
            return Err(ConfigError::invalid("workload.packet_bytes", "must be >= header_bytes and > 0"));
        }
        Ok(())
    }

    pub fn packets_per_s(&self) -> f64 {
        packets_per_s(self.offered_gbps, self.packet_bytes)
    }

    /// `n` arrival times starting at 0.
    pub fn arrival_times(&self, n: usize, seed: u64) -> Vec<Time> {
        let mean_ps = 1e12 / self.packets_per_s();
        let mut out = Vec::with_capacity(n);
        match self.process {
            ArrivalProcess::FixedRate => {
                for i in 0..n {
                    out.push((i as f64 * mean_ps).round() as Time);
                }
            }
            ArrivalProcess::Poisson => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let exp = Exp::new(1.0 / mean_ps).expect("positive rate");
                let mut t = 0.0f64;
                for i in 0..n {
                    if i > 0 {
                        t += exp.sample(&mut rng);
                    }
                    out.push(t.round() as Time);
                }
            }
        }
        out
    }
}

pub fn packets_per_s(bandwidth_gbps: f64, packet_bytes: u64) -> f64 {
    bandwidth_gbps * 1e9 / (packet_bytes as f64 * 8.0)
}

/// Packets in flight needed to sustain line rate with the given latency.
pub fn concurrency_requirement(bandwidth_gbps: f64, total_latency_us: f64, packet_bytes: u64) -> u64 {
    let x = packets_per_s(bandwidth_gbps, packet_bytes) * total_latency_us * 1e-6;
    // Absorb floating-point noise so exact products are not bumped up.
    (x - 1e-9).ceil().max(0.0) as u64
}

pub const TABLE1_BANDWIDTHS: [f64; 5] = [10.0, 40.0, 100.0, 200.0, 400.0];
pub const TABLE1_APP_LATENCY_US: [f64; 3] = [0.6, 1.18, 2.36];
/// Published packet counts, rows by bandwidth, columns by app latency.
pub const TABLE1_PUBLISHED: [[u64; 3]; 5] = [
    [81, 94, 120],
    [325, 376, 482],
    [812, 941, 1205],
    [1625, 1883, 2410],
    [3250, 3767, 4821],
];

/// Least-squares total latency (µs) for one column: minimises
/// Σ (pps_i · L − y_i)².
pub fn fit_total_latency_us(bandwidths: &[f64], counts: &[u64], packet_bytes: u64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&b, &y) in bandwidths.iter().zip(counts) {
        let p = packets_per_s(b, packet_bytes) * 1e-6;
        num += p * y as f64;
        den += p * p;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table1Column {
    pub app_latency_us: f64,
    pub fitted_total_us: f64,
    /// Fitted total minus the column's application latency.
    pub fixed_overhead_us: f64,
    pub computed: [u64; 5],
    pub published: [u64; 5],
    /// Largest relative deviation of published/bandwidth from the column mean.
    pub proportionality_residual: f64,
}

pub fn table1(packet_bytes: u64) -> Vec<Table1Column> {
    (0..3)
        .map(|c| {
            let published: [u64; 5] = std::array::from_fn(|r| TABLE1_PUBLISHED[r][c]);
            let l = fit_total_latency_us(&TABLE1_BANDWIDTHS, &published, packet_bytes);
            let computed = std::array::from_fn(|r| concurrency_requirement(TABLE1_BANDWIDTHS[r], l, packet_bytes));
            let per_gbps: Vec<f64> = (0..5).map(|r| published[r] as f64 / TABLE1_BANDWIDTHS[r]).collect();
            let mean = per_gbps.iter().sum::<f64>() / 5.0;
            let residual = per_gbps.iter().map(|v| (v - mean).abs() / mean).fold(0.0, f64::max);
            Table1Column {
                app_latency_us: TABLE1_APP_LATENCY_US[c],
                fitted_total_us: l,
                fixed_overhead_us: l - TABLE1_APP_LATENCY_US[c],
                computed,
                published,
                proportionality_residual: residual,
            }
        })
        .collect()
}

pub fn format_table1(cols: &[Table1Column]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = write!(s, "{:>10}", "gbps");
    for c in cols {
        let _ = write!(s, " {:>16}", format!("{}us", c.app_latency_us));
    }
    s.push('\n');
    for (r, bw) in TABLE1_BANDWIDTHS.iter().enumerate() {
        let _ = write!(s, "{bw:>10}");
        for c in cols {
            let _ = write!(s, " {:>16}", format!("{} ({})", c.computed[r], c.published[r]));
        }
        s.push('\n');
    }
    let _ = write!(s, "{:>10}", "fit_us");
    for c in cols {
        let _ = write!(s, " {:>16.4}", c.fitted_total_us);
    }
    s.push('\n');
    let _ = write!(s, "{:>10}", "fixed_us");
    for c in cols {
        let _ = write!(s, " {:>16.4}", c.fixed_overhead_us);
    }
    s.push('\n');
    s
}

/// Probability that an arrival waits in an M/M/c queue.
pub fn erlang_c(servers: usize, arrival_rate: f64, service_rate: f64) -> Option<f64> {
    let c = servers as f64;
    let a = arrival_rate / service_rate;
    let rho = a / c;
    if servers == 0 || rho >= 1.0 {
        return None;
    }
    // Σ a^k/k! for k < c, built incrementally.
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 0..servers {
        sum += term;
        term *= a / (k as f64 + 1.0);
    }
    let top = term / (1.0 - rho);
    Some(top / (sum + top))
}

/// Mean waiting time in queue for M/M/c, `None` when saturated.
pub fn mmc_mean_wait(servers: usize, arrival_rate: f64, service_rate: f64) -> Option<f64> {
    let p = erlang_c(servers, arrival_rate, service_rate)?;
    Some(p / (servers as f64 * service_rate - arrival_rate))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// Mean latency in seconds; infinite when saturated.
    pub latency_s: f64,
    pub throughput: f64,
    pub efficiency: f64,
    pub saturated: bool,
}

/// M/M/c projection with `servers` hardware threads and the measured mean
/// service time.
pub fn analytic_projection(servers: usize, mean_service_s: f64, arrival_rate: f64, power_watts: f64) -> Projection {
    let mu = 1.0 / mean_service_s;
    let capacity = servers as f64 * mu;
    let (latency_s, saturated) = match mmc_mean_wait(servers, arrival_rate, mu) {
        Some(w) => (w + mean_service_s, false),
        None => (f64::INFINITY, true),
    };
    let throughput = arrival_rate.min(capacity);
    Projection {
        latency_s,
        throughput,
        efficiency: if power_watts > 0.0 { throughput / power_watts } else { 0.0 },
        saturated,
    }
}

/// Event-driven M/M/c with FCFS and lowest-index free server. Returns the
/// mean waiting time over `n` customers.
pub fn simulate_mmc(servers: usize, arrival_rate: f64, service_rate: f64, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inter = Exp::new(arrival_rate).expect("positive rate");
    let service = Exp::new(service_rate).expect("positive rate");
    let mut free_at = vec![0.0f64; servers.max(1)];
    let mut t = 0.0;
    let mut total_wait = 0.0;
    for _ in 0..n {
        t += inter.sample(&mut rng);
        let (k, &f) = free_at
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .unwrap();
        let start = f.max(t);
        total_wait += start - t;
        free_at[k] = start + service.sample(&mut rng);
    }
    total_wait / n.max(1) as f64
}
