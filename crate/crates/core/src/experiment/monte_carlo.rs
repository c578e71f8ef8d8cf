//! Pulse-by-pulse Monte Carlo of the setup.
//!
//! Pulses are processed in fixed-size blocks; block `b` draws from ChaCha8
//! stream `b` of the run seed. Results therefore do not depend on how rayon
//! distributes blocks over threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{CountRates, G2Estimate, HbtArm, HeraldedStats, SetupConfig};
use crate::detectors::apply_dead_time;
use crate::error::{Error, Result};

const BLOCK: u64 = 1 << 16;

fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

fn blocks(n_pulses: u64) -> impl ParallelIterator<Item = (u64, u64, u64)> {
    let n_blocks = n_pulses.div_ceil(BLOCK);
    (0..n_blocks).into_par_iter().map(move |b| {
        let start = b * BLOCK;
        (b, start, (start + BLOCK).min(n_pulses))
    })
}

/// Inverse-CDF sampler over the truncated pair pmf.
struct PairSampler {
    cdf: Vec<f64>,
}

impl PairSampler {
    fn new(config: &SetupConfig) -> Self {
        let mut acc = 0.0;
        let cdf = config
            .pairs
            .truncated_pmf()
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { cdf }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len() - 1)
    }
}

#[derive(Default)]
struct Block {
    heralds: Vec<u64>,
    idler_clicks: Vec<u64>,
    /// Histogram of source-output photon number over herald pulses.
    heralded_hist: Vec<u64>,
}

/// Raw event counts of one Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloTally {
    pub n_pulses: u64,
    pub herald_clicks: u64,
    pub triggers: u64,
    /// Triggers with an idler click inside the coincidence window.
    pub coincidences: u64,
    /// Idler clicks counting every pulse as a gate.
    pub idler_clicks: u64,
    pub heralded_hist: Vec<u64>,
}

impl MonteCarloTally {
    pub fn run(config: &SetupConfig, n_pulses: u64, seed: u64) -> Result<Self> {
        config.validate()?;
        let sampler = PairSampler::new(config);
        let herald_dark = config.herald_dark();
        let idler_dark = config.idler_dark();
        let s_herald = config.herald_arm_transmission() * config.herald.efficiency;
        let s_out = config.source_output_transmission();
        let s_det = config.t_delay_fiber * config.idler_detector.efficiency;

        let parts: Vec<Block> = blocks(n_pulses)
            .map(|(b, start, end)| {
                let mut rng = block_rng(seed, b);
                let mut blk = Block::default();
                for pulse in start..end {
                    let n = sampler.sample(&mut rng);
                    let mut herald = false;
                    let mut at_output = 0usize;
                    let mut detected = false;
                    for _ in 0..n {
                        if rng.random::<f64>() < s_herald {
                            herald = true;
                        }
                        if rng.random::<f64>() < s_out {
                            at_output += 1;
                            if rng.random::<f64>() < s_det {
                                detected = true;
                            }
                        }
                    }
                    if rng.random::<f64>() < herald_dark {
                        herald = true;
                    }
                    if rng.random::<f64>() < idler_dark {
                        detected = true;
                    }
                    if herald {
                        blk.heralds.push(pulse);
                        if blk.heralded_hist.len() <= at_output {
                            blk.heralded_hist.resize(at_output + 1, 0);
                        }
                        blk.heralded_hist[at_output] += 1;
                    }
                    if detected {
                        blk.idler_clicks.push(pulse);
                    }
                }
                blk
            })
            .collect();

        let mut heralds = Vec::new();
        let mut idler = Vec::new();
        let mut hist: Vec<u64> = Vec::new();
        for blk in parts {
            heralds.extend(blk.heralds);
            idler.extend(blk.idler_clicks);
            if hist.len() < blk.heralded_hist.len() {
                hist.resize(blk.heralded_hist.len(), 0);
            }
            for (h, v) in hist.iter_mut().zip(&blk.heralded_hist) {
                *h += v;
            }
        }

        let dead = config.trigger_dead_time.dead_pulses(config.rep_rate);
        let triggers = apply_dead_time(&heralds, dead, config.trigger_dead_time.model);
        let window = config.coincidence_window as u64;
        let coincidences = triggers
            .iter()
            .filter(|&&t| {
                let i = idler.partition_point(|&p| p < t);
                idler.get(i).is_some_and(|&p| p < t + window)
            })
            .count() as u64;

        Ok(Self {
            n_pulses,
            herald_clicks: heralds.len() as u64,
            triggers: triggers.len() as u64,
            coincidences,
            idler_clicks: idler.len() as u64,
            heralded_hist: hist,
        })
    }

    /// Rates implied by the tallies. Afterpulsing enters as the same rate
    /// inflation the analytic model applies.
    pub fn rates(&self, config: &SetupConfig) -> CountRates {
        let per_pulse = |k: u64| k as f64 / self.n_pulses as f64;
        let ap_h = 1.0 + config.herald.afterpulse_prob;
        let ap_i = 1.0 + config.idler_detector.afterpulse_prob;
        let trigger_rate = config.rep_rate * per_pulse(self.triggers) * ap_h;
        let per_trigger = if self.triggers > 0 {
            (self.coincidences as f64 / self.triggers as f64 * ap_i).min(1.0)
        } else {
            0.0
        };
        CountRates {
            signal_singles: config.rep_rate * per_pulse(self.herald_clicks) * ap_h,
            idler_singles: config.gate_rate * (per_pulse(self.idler_clicks) * ap_i).min(1.0),
            coincidences: trigger_rate * per_trigger,
            trigger_rate,
            gate_rate: config.gate_rate,
            per_trigger_coincidence_prob: per_trigger,
        }
    }

    /// One-sigma Poisson counting errors on [`rates`](Self::rates).
    pub fn sigma(&self, config: &SetupConfig) -> CountRates {
        let r = self.rates(config);
        let poisson = |rate: f64, k: u64| rate / (k.max(1) as f64).sqrt();
        let p = r.per_trigger_coincidence_prob;
        CountRates {
            signal_singles: poisson(r.signal_singles, self.herald_clicks),
            idler_singles: poisson(r.idler_singles, self.idler_clicks),
            coincidences: poisson(r.coincidences, self.coincidences),
            trigger_rate: poisson(r.trigger_rate, self.triggers),
            gate_rate: 0.0,
            per_trigger_coincidence_prob: (p * (1.0 - p) / self.triggers.max(1) as f64).sqrt(),
        }
    }

    pub fn heralded_stats(&self) -> Result<HeraldedStats> {
        if self.herald_clicks == 0 {
            return Err(Error::CannotCondition);
        }
        let n = self.herald_clicks as f64;
        Ok(HeraldedStats {
            p: self.heralded_hist.iter().map(|&k| k as f64 / n).collect(),
        })
    }

    /// One-sigma binomial error on the heralded P(`k`).
    pub fn heralded_sigma(&self, k: usize) -> f64 {
        let n = self.herald_clicks.max(1) as f64;
        let p = self.heralded_hist.get(k).copied().unwrap_or(0) as f64 / n;
        (p * (1.0 - p) / n).sqrt()
    }
}

/// Counts from a Monte Carlo HBT run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HbtTally {
    /// Pulses that enter the estimate: all pulses for the unconditioned
    /// arm, herald clicks for the heralded arm.
    pub windows: u64,
    pub clicks_1: u64,
    pub clicks_2: u64,
    pub coincidences: u64,
}

impl HbtTally {
    pub fn run(
        config: &SetupConfig,
        arm: HbtArm,
        splitter_ratio: f64,
        n_pulses: u64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let sampler = PairSampler::new(config);
        let r = splitter_ratio;
        let parts: Vec<HbtTally> = match arm {
            HbtArm::SignalUnconditioned => {
                let dark = config.herald_dark();
                let s = config.herald_arm_transmission();
                let eta = config.herald.efficiency;
                blocks(n_pulses)
                    .map(|(b, start, end)| {
                        let mut rng = block_rng(seed, b);
                        let mut t = HbtTally::zero();
                        for _ in start..end {
                            let n = sampler.sample(&mut rng);
                            let (mut c1, mut c2) = (false, false);
                            for _ in 0..n {
                                if rng.random::<f64>() < s {
                                    let to_first = rng.random::<f64>() < r;
                                    if rng.random::<f64>() < eta {
                                        if to_first {
                                            c1 = true;
                                        } else {
                                            c2 = true;
                                        }
                                    }
                                }
                            }
                            c1 |= rng.random::<f64>() < dark;
                            c2 |= rng.random::<f64>() < dark;
                            t.record(c1, c2);
                        }
                        t
                    })
                    .collect()
            }
            HbtArm::IdlerHeralded => {
                let dark = config.herald_dark();
                let s_herald = config.herald_arm_transmission() * config.herald.efficiency;
                let s_out = config.source_output_transmission();
                blocks(n_pulses)
                    .map(|(b, start, end)| {
                        let mut rng = block_rng(seed, b);
                        let mut t = HbtTally::zero();
                        for _ in start..end {
                            let n = sampler.sample(&mut rng);
                            let mut herald = false;
                            let (mut c1, mut c2) = (false, false);
                            for _ in 0..n {
                                if rng.random::<f64>() < s_herald {
                                    herald = true;
                                }
                                if rng.random::<f64>() < s_out {
                                    if rng.random::<f64>() < r {
                                        c1 = true;
                                    } else {
                                        c2 = true;
                                    }
                                }
                            }
                            herald |= rng.random::<f64>() < dark;
                            if herald {
                                t.record(c1, c2);
                            }
                        }
                        t
                    })
                    .collect()
            }
        };
        Ok(parts.into_iter().fold(HbtTally::zero(), |a, b| HbtTally {
            windows: a.windows + b.windows,
            clicks_1: a.clicks_1 + b.clicks_1,
            clicks_2: a.clicks_2 + b.clicks_2,
            coincidences: a.coincidences + b.coincidences,
        }))
    }

    fn zero() -> Self {
        Self {
            windows: 0,
            clicks_1: 0,
            clicks_2: 0,
            coincidences: 0,
        }
    }

    fn record(&mut self, c1: bool, c2: bool) {
        self.windows += 1;
        self.clicks_1 += c1 as u64;
        self.clicks_2 += c2 as u64;
        self.coincidences += (c1 && c2) as u64;
    }

    pub fn estimate(&self) -> Result<G2Estimate> {
        if self.clicks_1 == 0 || self.clicks_2 == 0 {
            return Err(Error::Estimation(format!(
                "zero singles in an output ({} / {})",
                self.clicks_1, self.clicks_2
            )));
        }
        let (n1, n2, n12) = (
            self.clicks_1 as f64,
            self.clicks_2 as f64,
            self.coincidences as f64,
        );
        let g2 = self.windows as f64 * n12 / (n1 * n2);
        // counting error dominated by the coincidence count; a run with none
        // gets the one-count error bar
        let scale = if self.coincidences == 0 {
            self.windows as f64 / (n1 * n2)
        } else {
            g2
        };
        let std_error = scale * (1.0 / n12.max(1.0) + 1.0 / n1 + 1.0 / n2).sqrt();
        Ok(G2Estimate { g2, std_error })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SetupConfig::reference();
        let a = MonteCarloTally::run(&cfg, 300_000, 11).unwrap();
        let b = MonteCarloTally::run(&cfg, 300_000, 11).unwrap();
        assert_eq!(a, b);
        let c = MonteCarloTally::run(&cfg, 300_000, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn independent_of_thread_count() {
        let cfg = SetupConfig::reference();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| MonteCarloTally::run(&cfg, 400_000, 5).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| MonteCarloTally::run(&cfg, 400_000, 5).unwrap());
        assert_eq!(single, many);
    }

    #[test]
    fn hbt_zero_singles_is_error() {
        let t = HbtTally {
            windows: 10,
            clicks_1: 0,
            clicks_2: 3,
            coincidences: 0,
        };
        assert!(t.estimate().is_err());
    }
}
