//! Service catalogs, Poisson request streams and the proactive estimator.
//!
//! [`EstimatorState`] keeps four fixed-size circular buffers (arrival
//! timestamps, execution times, CPU and memory usage) and derives from them
//! the arrival rate, the death rate and the average per-service resource
//! consumption that feed the execution probability
//!
//! ```text
//! q = min( min(c'/(c'+c''), m'/(m'+m'')) * mu / lambda_eff , 1 )
//! ```

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::NodeId;

/// Default circular-buffer length.
pub const DEFAULT_BUFFER_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("arrival timestamp {got} precedes previous timestamp {last}")]
    NonMonotonicTimestamp { last: f64, got: f64 },
    #[error("execution time must be positive, got {0}")]
    NonPositiveExecTime(f64),
    #[error("resource usage must be non-negative and finite")]
    InvalidUsage,
    #[error("unstable system: utilization {0} >= 1")]
    Unstable(f64),
    #[error("utilization must be non-negative, got {0}")]
    NegativeUtilization(f64),
    #[error("estimator is warming up: need at least 2 arrivals")]
    WarmingUp,
    #[error("buffer length must be at least 2, got {0}")]
    BufferTooSmall(usize),
    #[error("rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("jitter windows overlap ({0} ms and {1} ms)")]
    OverlappingJitter(f64, f64),
    #[error("jitter window starting at {0} ms is invalid or outside the horizon")]
    InvalidJitter(f64),
    #[error("invalid service {id}: {reason}")]
    InvalidService { id: u32, reason: String },
    #[error("service catalog is empty or has no positive popularity weight")]
    EmptyCatalog,
    #[error("malformed service catalog: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub id: u32,
    /// Mean execution time in seconds.
    pub mean_exec_time: f64,
    pub cpu_cost: f64,
    #[serde(default)]
    pub mem_cost: f64,
    #[serde(default = "unit_weight")]
    pub popularity_weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl ServiceSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |reason: &str| {
            Err(WorkloadError::InvalidService {
                id: self.id,
                reason: reason.to_string(),
            })
        };
        if !(self.mean_exec_time > 0.0) || !self.mean_exec_time.is_finite() {
            return bad("mean_exec_time must be positive");
        }
        if !(self.cpu_cost >= 0.0) || !self.cpu_cost.is_finite() {
            return bad("cpu_cost must be non-negative");
        }
        if !(self.mem_cost >= 0.0) || !self.mem_cost.is_finite() {
            return bad("mem_cost must be non-negative");
        }
        if !(self.popularity_weight >= 0.0) || !self.popularity_weight.is_finite() {
            return bad("popularity_weight must be non-negative");
        }
        Ok(())
    }
}

/// Validates a catalog: every record well formed, ids unique, and at least
/// one service with positive popularity.
pub fn validate_catalog(services: &[ServiceSpec]) -> Result<(), WorkloadError> {
    let mut ids = std::collections::BTreeSet::new();
    for s in services {
        s.validate()?;
        if !ids.insert(s.id) {
            return Err(WorkloadError::InvalidService {
                id: s.id,
                reason: "duplicate id".into(),
            });
        }
    }
    if services.iter().all(|s| s.popularity_weight <= 0.0) {
        return Err(WorkloadError::EmptyCatalog);
    }
    Ok(())
}

/// Parses a JSON array of [`ServiceSpec`] records.
pub fn parse_service_catalog(json: &str) -> Result<Vec<ServiceSpec>, WorkloadError> {
    let services: Vec<ServiceSpec> =
        serde_json::from_str(json).map_err(|e| WorkloadError::Parse(e.to_string()))?;
    validate_catalog(&services)?;
    Ok(services)
}

/// Normalized popularity p_j = w_j / sum(w).
pub fn popularity(services: &[ServiceSpec]) -> Result<Vec<f64>, WorkloadError> {
    let total: f64 = services.iter().map(|s| s.popularity_weight).sum();
    if services.is_empty() || !(total > 0.0) {
        return Err(WorkloadError::EmptyCatalog);
    }
    Ok(services
        .iter()
        .map(|s| s.popularity_weight / total)
        .collect())
}

/// A request in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub service_id: u32,
    pub origin_node: NodeId,
    /// Seconds.
    pub arrival_time: f64,
    pub ttl_remaining: u32,
    /// Seconds; when the request reached its first in-network hop.
    pub first_hop_time: f64,
}

/// A window of elevated arrival rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub start_ms: f64,
    pub duration_ms: f64,
    pub rate_multiplier: f64,
}

/// One generated arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    /// Seconds.
    pub time: f64,
    pub service_id: u32,
}

fn check_jitters(jitters: &[JitterSpec], horizon: f64) -> Result<Vec<JitterSpec>, WorkloadError> {
    let mut js = jitters.to_vec();
    for j in &js {
        let end = j.start_ms + j.duration_ms;
        if !(j.start_ms >= 0.0)
            || !(j.duration_ms > 0.0)
            || !(j.rate_multiplier > 0.0)
            || !j.rate_multiplier.is_finite()
            || !(end / 1000.0 <= horizon)
        {
            return Err(WorkloadError::InvalidJitter(j.start_ms));
        }
    }
    js.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms));
    for w in js.windows(2) {
        if w[1].start_ms < w[0].start_ms + w[0].duration_ms {
            return Err(WorkloadError::OverlappingJitter(
                w[0].start_ms,
                w[1].start_ms,
            ));
        }
    }
    Ok(js)
}

/// Generates an inhomogeneous Poisson stream on `[0, horizon)` seconds:
/// rate `base_rate` outside jitter windows and `multiplier * base_rate`
/// inside them. Service ids are drawn by popularity.
pub fn poisson_stream(
    base_rate: f64,
    jitters: &[JitterSpec],
    horizon: f64,
    services: &[ServiceSpec],
    seed: u64,
) -> Result<Vec<Arrival>, WorkloadError> {
    if !(base_rate > 0.0) || !base_rate.is_finite() {
        return Err(WorkloadError::InvalidRate(base_rate));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(WorkloadError::InvalidRate(horizon));
    }
    validate_catalog(services)?;
    let js = check_jitters(jitters, horizon)?;
    let weights = WeightedIndex::new(services.iter().map(|s| s.popularity_weight))
        .map_err(|_| WorkloadError::EmptyCatalog)?;

    // Piecewise-constant rate segments.
    let mut segments = Vec::new();
    let mut t = 0.0;
    for j in &js {
        let (s, e) = (j.start_ms / 1000.0, (j.start_ms + j.duration_ms) / 1000.0);
        if s > t {
            segments.push((t, s, base_rate));
        }
        segments.push((s, e, base_rate * j.rate_multiplier));
        t = e;
    }
    if horizon > t {
        segments.push((t, horizon, base_rate));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity((base_rate * horizon * 1.1) as usize + 16);
    for (start, end, rate) in segments {
        let gap = Exp::new(rate).map_err(|_| WorkloadError::InvalidRate(rate))?;
        let mut now = start;
        loop {
            now += gap.sample(&mut rng);
            if now >= end {
                break;
            }
            let service_id = services[weights.sample(&mut rng)].id;
            out.push(Arrival {
                time: now,
                service_id,
            });
        }
    }
    Ok(out)
}

/// Mean number of concurrently running services in a stationary M/M/1
/// system: `rho / (1 - rho)`.
pub fn expected_queue_length(rho: f64) -> Result<f64, WorkloadError> {
    if rho.is_nan() || rho < 0.0 {
        return Err(WorkloadError::NegativeUtilization(rho));
    }
    if rho >= 1.0 {
        return Err(WorkloadError::Unstable(rho));
    }
    Ok(rho / (1.0 - rho))
}

/// Execution probability from raw rates and resources. The first resource
/// bottleneck (CPU or memory) scales the service-to-arrival ratio; the
/// result is capped at 1.
pub fn admission_probability(
    lambda_eff: f64,
    mu: f64,
    cpu_capacity: f64,
    cpu_avg: f64,
    mem_capacity: f64,
    mem_avg: f64,
) -> f64 {
    if !(lambda_eff > 0.0) {
        return 1.0;
    }
    let cpu = cpu_capacity / (cpu_capacity + cpu_avg);
    let mem = mem_capacity / (mem_capacity + mem_avg);
    let q = cpu.min(mem) * mu / lambda_eff;
    if q.is_nan() {
        1.0
    } else {
        q.clamp(0.0, 1.0)
    }
}

/// Statistics block of the proactive strategy.
///
/// Arrival and completion cursors are independent. The arrival rate is
/// maintained in O(1) per arrival from a running sum of inter-arrival gaps;
/// the remaining parameters are refreshed with an equal-weight moving
/// average each time their cursor wraps.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    k: usize,
    buf_lambda: Vec<f64>,
    buf_mu: Vec<f64>,
    buf_cpu: Vec<f64>,
    buf_mem: Vec<f64>,
    arrival_index: usize,
    completion_index: usize,
    arrivals: u64,
    completion_wraps: u64,
    /// Sum of the gaps between consecutive buffered timestamps.
    interval_sum: f64,
    last_arrival: f64,
    lambda: f64,
    lambda_prev: f64,
    delta_lambda: f64,
    mu: f64,
    cpu_avg: f64,
    mem_avg: f64,
}

impl EstimatorState {
    pub fn new(k: usize) -> Result<Self, WorkloadError> {
        if k < 2 {
            return Err(WorkloadError::BufferTooSmall(k));
        }
        Ok(Self {
            k,
            buf_lambda: vec![0.0; k],
            buf_mu: vec![0.0; k],
            buf_cpu: vec![0.0; k],
            buf_mem: vec![0.0; k],
            arrival_index: 0,
            completion_index: 0,
            arrivals: 0,
            completion_wraps: 0,
            interval_sum: 0.0,
            last_arrival: f64::NEG_INFINITY,
            lambda: 0.0,
            lambda_prev: 0.0,
            delta_lambda: 0.0,
            mu: 0.0,
            cpu_avg: 0.0,
            mem_avg: 0.0,
        })
    }

    /// Overrides the initial death rate and resource averages.
    pub fn with_priors(mut self, mu: f64, cpu_avg: f64, mem_avg: f64) -> Self {
        self.mu = mu;
        self.cpu_avg = cpu_avg;
        self.mem_avg = mem_avg;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn filled(&self) -> usize {
        self.arrivals.min(self.k as u64) as usize
    }

    pub fn record_arrival(&mut self, timestamp: f64) -> Result<(), WorkloadError> {
        if !timestamp.is_finite() || timestamp < self.last_arrival {
            return Err(WorkloadError::NonMonotonicTimestamp {
                last: self.last_arrival,
                got: timestamp,
            });
        }
        let k = self.k;
        let i = self.arrival_index;
        let filled = self.filled();
        if filled == k {
            // y: gap leaving the window, z: gap entering it.
            let y = self.buf_lambda[(i + 1) % k] - self.buf_lambda[i];
            let z = timestamp - self.buf_lambda[(i + k - 1) % k];
            self.interval_sum = self.interval_sum - y + z;
        } else if filled > 0 {
            self.interval_sum += timestamp - self.buf_lambda[(i + k - 1) % k];
        }
        self.buf_lambda[i] = timestamp;
        self.last_arrival = timestamp;
        self.arrivals += 1;

        let count = self.filled();
        if count >= 2 && self.interval_sum > 0.0 {
            self.lambda = (count - 1) as f64 / self.interval_sum;
        }
        self.delta_lambda = (self.lambda - self.lambda_prev).max(0.0);

        self.arrival_index = (i + 1) % k;
        if self.arrival_index == 0 {
            self.lambda_prev = 0.5 * (self.lambda_prev + self.lambda);
        }
        Ok(())
    }

    /// Current mean arrival rate over the buffered timestamps, `(n-1)/span`.
    pub fn mean_arrival_rate(&self) -> Result<f64, WorkloadError> {
        if self.filled() < 2 {
            return Err(WorkloadError::WarmingUp);
        }
        Ok(self.lambda)
    }

    pub fn record_completion(
        &mut self,
        exec_time: f64,
        cpu: f64,
        mem: f64,
    ) -> Result<(), WorkloadError> {
        if !(exec_time > 0.0) || !exec_time.is_finite() {
            return Err(WorkloadError::NonPositiveExecTime(exec_time));
        }
        if !(cpu >= 0.0 && mem >= 0.0) || !cpu.is_finite() || !mem.is_finite() {
            return Err(WorkloadError::InvalidUsage);
        }
        let i = self.completion_index;
        self.buf_mu[i] = exec_time;
        self.buf_cpu[i] = cpu;
        self.buf_mem[i] = mem;
        self.completion_index = (i + 1) % self.k;
        if self.completion_index == 0 {
            let k = self.k as f64;
            let mean_exec = self.buf_mu.iter().sum::<f64>() / k;
            self.mu = 0.5 * (self.mu + 1.0 / mean_exec);
            self.cpu_avg = 0.5 * (self.cpu_avg + self.buf_cpu.iter().sum::<f64>() / k);
            self.mem_avg = 0.5 * (self.mem_avg + self.buf_mem.iter().sum::<f64>() / k);
            self.completion_wraps += 1;
        }
        Ok(())
    }

    /// Estimates exist once the arrival buffer is full and the completion
    /// buffer has wrapped at least once.
    pub fn is_warm(&self) -> bool {
        self.filled() == self.k && self.completion_wraps > 0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lambda_prev(&self) -> f64 {
        self.lambda_prev
    }

    pub fn delta_lambda(&self) -> f64 {
        self.delta_lambda
    }

    /// Arrival rate plugged into the probability: inflated by the recent
    /// increase while in conservative mode.
    pub fn lambda_effective(&self) -> f64 {
        self.lambda + self.delta_lambda
    }

    pub fn is_conservative(&self) -> bool {
        self.delta_lambda > 0.0
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn cpu_avg(&self) -> f64 {
        self.cpu_avg
    }

    pub fn mem_avg(&self) -> f64 {
        self.mem_avg
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    pub fn completion_wraps(&self) -> u64 {
        self.completion_wraps
    }

    /// Bytes held by the four buffers. Depends on `k` only.
    pub fn buffer_bytes(&self) -> usize {
        std::mem::size_of::<f64>()
            * (self.buf_lambda.capacity()
                + self.buf_mu.capacity()
                + self.buf_cpu.capacity()
                + self.buf_mem.capacity())
    }

    /// Probability of executing the next request locally. A cold estimator
    /// accepts everything.
    pub fn execution_probability(&self, cpu_capacity: f64, mem_capacity: f64) -> f64 {
        if !self.is_warm() || !(self.mu > 0.0) || !(self.lambda > 0.0) {
            return 1.0;
        }
        admission_probability(
            self.lambda_effective(),
            self.mu,
            cpu_capacity,
            self.cpu_avg,
            mem_capacity,
            self.mem_avg,
        )
    }
}
