use crate::time::Time;

#[derive(Clone, Debug, PartialEq)]
pub struct PcieConfig {
    pub one_way_latency_ns: f64,
    pub lanes: u32,
    /// Gen3 signalling rate per lane in GT/s (128b/130b encoded).
    pub gt_per_s: f64,
    pub payload_efficiency: f64,
    pub request_header_bytes: u64,
    pub completion_header_bytes: u64,
    /// Encodings used to size region installs.
    pub state_header_bytes: u64,
    pub instr_encoding_bytes: u64,
    pub reg_encoding_bytes: u64,
}

impl Default for PcieConfig {
    fn default() -> Self {
        PcieConfig {
            one_way_latency_ns: 250.0,
            lanes: 16,
            gt_per_s: 8.0,
            payload_efficiency: 0.95,
            request_header_bytes: 24,
            completion_header_bytes: 20,
            state_header_bytes: 16,
            instr_encoding_bytes: 16,
            reg_encoding_bytes: 9,
        }
    }
}

impl PcieConfig {
    /// Usable link capacity in bytes per second.
    pub fn capacity_bytes_per_s(&self) -> f64 {
        self.lanes as f64 * self.gt_per_s * 1e9 * (128.0 / 130.0) / 8.0 * self.payload_efficiency
    }

    pub fn state_bytes(&self, instructions: u64, registers: u64) -> u64 {
        self.state_header_bytes + instructions * self.instr_encoding_bytes + registers * self.reg_encoding_bytes
    }
}

/// Bytes moved over the link per category.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PcieLedger {
    pub state_bytes: u64,
    pub request_bytes: u64,
    pub data_bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcieUsage {
    pub state_bytes: u64,
    pub request_bytes: u64,
    pub data_bytes: u64,
    pub total_capacity_bytes: f64,
    pub state_pct: f64,
    pub request_pct: f64,
    pub data_pct: f64,
}

impl PcieLedger {
    pub fn total(&self) -> u64 {
        self.state_bytes + self.request_bytes + self.data_bytes
    }

    /// Shares of the link capacity available over `interval`.
    pub fn usage(&self, cfg: &PcieConfig, interval: Time) -> PcieUsage {
        let cap = cfg.capacity_bytes_per_s() * interval as f64 / 1e12;
        let pct = |b: u64| if cap > 0.0 { 100.0 * b as f64 / cap } else { 0.0 };
        PcieUsage {
            state_bytes: self.state_bytes,
            request_bytes: self.request_bytes,
            data_bytes: self.data_bytes,
            total_capacity_bytes: cap,
            state_pct: pct(self.state_bytes),
            request_pct: pct(self.request_bytes),
            data_pct: pct(self.data_bytes),
        }
    }
}
