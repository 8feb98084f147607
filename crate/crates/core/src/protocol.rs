//! Block-level MDI protocol: biased choice between generation and test
//! blocks, accumulation of p(a|ω_x), success-probability estimates and raw
//! bit block assembly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{check_probability, invalid, precondition, Result};
use crate::optics::{
    outcome_probabilities, Advance, DetectionEvent, DiscardReason, ExactSampler,
    MeasurementBoxConfig, Preparation, RoundSource, SourceConfig,
};

/// Raw bits buffered per block before streaming.
pub const BLOCK_BITS: usize = 1 << 16;

const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    Generate,
    TestH,
    TestV,
}

impl BlockKind {
    /// Wire label: 0 = TestH, 1 = TestV, 2 = Generate.
    pub fn label(self) -> u8 {
        match self {
            BlockKind::TestH => 0,
            BlockKind::TestV => 1,
            BlockKind::Generate => 2,
        }
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            0 => Some(BlockKind::TestH),
            1 => Some(BlockKind::TestV),
            2 => Some(BlockKind::Generate),
            _ => None,
        }
    }

    pub fn preparation(self) -> Preparation {
        match self {
            BlockKind::Generate => Preparation::R,
            BlockKind::TestH => Preparation::H,
            BlockKind::TestV => Preparation::V,
        }
    }
}

/// A buffered block of outcomes. Generation blocks hold raw random bits; test
/// blocks hold the outcome record of their test rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BitBlock {
    pub block_id: u64,
    pub kind: BlockKind,
    pub bits: Bits,
    /// Elapsed experiment time in days.
    pub produced_at: f64,
}

/// Outcome tallies per preparation. Index order is x = 0 (H), 1 (V), 2 (R).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStatistics {
    /// `counts[a][x]`
    pub counts: [[u64; 3]; 2],
    pub no_click: [u64; 3],
    pub double_click: [u64; 3],
}

impl RoundStatistics {
    pub fn record(&mut self, prep: Preparation, event: DetectionEvent) {
        let x = prep.index();
        match event {
            DetectionEvent::Bit(a) => self.counts[usize::from(a & 1)][x] += 1,
            DetectionEvent::Discard(DiscardReason::NoClick) => self.no_click[x] += 1,
            DetectionEvent::Discard(DiscardReason::DoubleClick) => self.double_click[x] += 1,
        }
    }

    pub fn record_no_clicks(&mut self, prep: Preparation, windows: u64) {
        self.no_click[prep.index()] += windows;
    }

    /// Adds another tally into this one. Associative and commutative.
    pub fn merge(&mut self, other: &RoundStatistics) {
        for a in 0..2 {
            for x in 0..3 {
                self.counts[a][x] += other.counts[a][x];
            }
        }
        for x in 0..3 {
            self.no_click[x] += other.no_click[x];
            self.double_click[x] += other.double_click[x];
        }
    }

    pub fn non_discarded(&self, prep: Preparation) -> u64 {
        let x = prep.index();
        self.counts[0][x] + self.counts[1][x]
    }

    pub fn windows(&self, prep: Preparation) -> u64 {
        let x = prep.index();
        self.non_discarded(prep) + self.no_click[x] + self.double_click[x]
    }

    /// Empirical p(a|ω_x) over non-discarded rounds.
    pub fn probability(&self, a: u8, prep: Preparation) -> Option<f64> {
        let n = self.non_discarded(prep);
        (n > 0).then(|| self.counts[usize::from(a & 1)][prep.index()] as f64 / n as f64)
    }

    /// JSON snapshot with the derived conditional probabilities.
    pub fn snapshot(&self) -> StatisticsSnapshot {
        let p = |a| Preparation::ALL.map(|x| self.probability(a, x));
        StatisticsSnapshot {
            counts: self.counts,
            no_click: self.no_click,
            double_click: self.double_click,
            p_a_given_x: [p(0), p(1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsSnapshot {
    pub counts: [[u64; 3]; 2],
    pub no_click: [u64; 3],
    pub double_click: [u64; 3],
    /// `p_a_given_x[a][x]`, null where ω_x has no non-discarded round.
    #[serde(default)]
    pub p_a_given_x: [[Option<f64>; 3]; 2],
}

impl From<&StatisticsSnapshot> for RoundStatistics {
    fn from(s: &StatisticsSnapshot) -> Self {
        RoundStatistics {
            counts: s.counts,
            no_click: s.no_click,
            double_click: s.double_click,
        }
    }
}

/// Generate with probability `bias`; otherwise TestH or TestV with equal odds.
pub fn choose_block_kind<R: Rng + ?Sized>(rng: &mut R, bias: f64) -> BlockKind {
    let u = rng.random::<f64>();
    if u < bias {
        BlockKind::Generate
    } else if u < bias + 0.5 * (1.0 - bias) {
        BlockKind::TestH
    } else {
        BlockKind::TestV
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    /// Probability of choosing a generation block.
    pub bias: f64,
    pub block_bits: usize,
    /// Detection windows per test block.
    pub test_rounds: u64,
    /// Maximum detection windows a generation block may spend filling up.
    pub round_budget: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            bias: 0.99,
            block_bits: BLOCK_BITS,
            test_rounds: 1 << 16,
            round_budget: 1 << 40,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability("bias", self.bias)?;
        if self.block_bits == 0 || self.block_bits > BLOCK_BITS {
            return Err(invalid(format!("block_bits must be in 1..={BLOCK_BITS}")));
        }
        if self.test_rounds == 0 || self.round_budget == 0 {
            return Err(invalid("test_rounds and round_budget must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BlockRun {
    pub block: BitBlock,
    pub stats: RoundStatistics,
    /// Detection windows consumed, including discards.
    pub windows: u64,
}

/// Runs one protocol block. Generation blocks measure ω₂ until `block_bits`
/// outcomes are collected or the round budget is spent; test blocks measure
/// ω₀ or ω₁ for `test_rounds` windows. Discarded windows never contribute bits.
pub fn run_block<S, R>(
    kind: BlockKind,
    block_id: u64,
    produced_at: f64,
    source: &mut S,
    config: &ProtocolConfig,
    rng: &mut R,
) -> BlockRun
where
    S: RoundSource,
    R: Rng + ?Sized,
{
    let prep = kind.preparation();
    let (bit_cap, window_cap) = match kind {
        BlockKind::Generate => (config.block_bits, config.round_budget),
        BlockKind::TestH | BlockKind::TestV => (BLOCK_BITS, config.test_rounds),
    };
    let mut bits = Bits::with_capacity(bit_cap);
    let mut stats = RoundStatistics::default();
    let mut windows = 0u64;
    while bits.len() < bit_cap && windows < window_cap {
        let Advance { no_clicks, event } = source.advance(prep, window_cap - windows, rng);
        windows += no_clicks;
        stats.record_no_clicks(prep, no_clicks);
        if let Some(event) = event {
            windows += 1;
            stats.record(prep, event);
            if let Some(b) = event.bit() {
                bits.push(b == 1);
            }
        }
    }
    BlockRun {
        block: BitBlock {
            block_id,
            kind,
            bits,
            produced_at,
        },
        stats,
        windows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Binomial standard error √(p(1−p)/N).
    pub sigma: f64,
    pub rounds: u64,
}

impl Estimate {
    fn binomial(successes: u64, rounds: u64) -> Self {
        let p = successes as f64 / rounds as f64;
        Estimate {
            value: p,
            sigma: (p * (1.0 - p) / rounds as f64).sqrt(),
            rounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessEstimate {
    /// p(0|ω₀)
    pub h: Estimate,
    /// p(1|ω₁)
    pub v: Estimate,
    pub average: Estimate,
}

pub fn estimate_success(stats: &RoundStatistics) -> Result<SuccessEstimate> {
    let nh = stats.non_discarded(Preparation::H);
    let nv = stats.non_discarded(Preparation::V);
    if nh == 0 || nv == 0 {
        return Err(precondition(format!(
            "no test data: {nh} non-discarded |H> rounds and {nv} non-discarded |V> rounds"
        )));
    }
    let h = Estimate::binomial(stats.counts[0][0], nh);
    let v = Estimate::binomial(stats.counts[1][1], nv);
    let average = Estimate {
        value: 0.5 * (h.value + v.value),
        sigma: 0.5 * (h.sigma.powi(2) + v.sigma.powi(2)).sqrt(),
        rounds: nh + nv,
    };
    Ok(SuccessEstimate { h, v, average })
}

/// Raw generation rate in bit/s implied by the configuration at time `days`:
/// non-discard rate of ω₂ times the generation-block fraction.
pub fn expected_raw_rate(
    measurement_box: &MeasurementBoxConfig,
    source: &SourceConfig,
    bias: f64,
    days: f64,
) -> f64 {
    let aged = source.at_time(days);
    let p = outcome_probabilities(&Preparation::R.state(), measurement_box, &aged);
    p.non_discard() / source.window * bias
}

/// Where blocks sit on the experiment clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timeline {
    /// Block timestamps follow simulated measurement time.
    Simulated,
    /// `blocks` blocks are spread evenly over `days`, each a snapshot of the
    /// device at that age.
    Spread { days: f64, blocks: u64 },
}

/// Single-producer block pipeline: user choice, preparation, measurement.
///
/// Block ids are consecutive from 0. The user's choice and the physics use
/// separate streams derived from one seed.
pub struct Producer {
    measurement_box: MeasurementBoxConfig,
    source: SourceConfig,
    protocol: ProtocolConfig,
    timeline: Timeline,
    choice_rng: ChaCha8Rng,
    physics_rng: ChaCha8Rng,
    next_id: u64,
    measurement_seconds: f64,
    switch_seconds: f64,
    switches: u64,
    last_prep: Option<Preparation>,
}

impl Producer {
    pub fn new(
        measurement_box: MeasurementBoxConfig,
        source: SourceConfig,
        protocol: ProtocolConfig,
        timeline: Timeline,
        seed: u64,
    ) -> Result<Self> {
        measurement_box.validate()?;
        source.validate()?;
        protocol.validate()?;
        let mut choice_rng = ChaCha8Rng::seed_from_u64(seed);
        choice_rng.set_stream(1);
        let mut physics_rng = ChaCha8Rng::seed_from_u64(seed);
        physics_rng.set_stream(2);
        Ok(Self {
            measurement_box,
            source,
            protocol,
            timeline,
            choice_rng,
            physics_rng,
            next_id: 0,
            measurement_seconds: 0.0,
            switch_seconds: 0.0,
            switches: 0,
            last_prep: None,
        })
    }

    /// Current position on the experiment clock, in days.
    pub fn clock_days(&self) -> f64 {
        match self.timeline {
            Timeline::Simulated => (self.measurement_seconds + self.switch_seconds) / SECONDS_PER_DAY,
            Timeline::Spread { days, blocks } => days * self.next_id as f64 / blocks.max(1) as f64,
        }
    }

    pub fn next_block(&mut self) -> BlockRun {
        let kind = choose_block_kind(&mut self.choice_rng, self.protocol.bias);
        let prep = kind.preparation();
        if self.last_prep.is_some_and(|p| p != prep) {
            self.switches += 1;
            self.switch_seconds += self.source.lc_switch_latency;
        }
        self.last_prep = Some(prep);

        let produced_at = self.clock_days();
        let mut sampler = ExactSampler::new(&self.measurement_box, &self.source.at_time(produced_at));
        let run = run_block(
            kind,
            self.next_id,
            produced_at,
            &mut sampler,
            &self.protocol,
            &mut self.physics_rng,
        );
        self.next_id += 1;
        self.measurement_seconds += run.windows as f64 * self.source.window;
        run
    }

    pub fn measurement_seconds(&self) -> f64 {
        self.measurement_seconds
    }

    /// Total waveplate settling time charged so far, and the number of switches.
    pub fn switching(&self) -> (f64, u64) {
        (self.switch_seconds, self.switches)
    }

    pub fn source(&self) -> &SourceConfig {
        &self.source
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::PhotonSimulator;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn block_kind_frequencies() {
        let mut r = rng(1);
        assert!((0..10_000).all(|_| choose_block_kind(&mut r, 1.0) == BlockKind::Generate));

        let n = 100_000;
        let mut tally = [0u64; 3];
        for _ in 0..n {
            tally[choose_block_kind(&mut r, 0.99).label() as usize] += 1;
        }
        let frac = |c: u64| c as f64 / n as f64;
        assert!((frac(tally[2]) - 0.99).abs() < 0.003);
        assert!((frac(tally[0]) - 0.005).abs() < 0.0015);
        assert!((frac(tally[1]) - 0.005).abs() < 0.0015);

        let mut tally = [0u64; 3];
        for _ in 0..10_000 {
            tally[choose_block_kind(&mut r, 0.0).label() as usize] += 1;
        }
        assert_eq!(tally[2], 0);
        // 1:1 within 4σ of a fair split
        assert!((tally[0] as f64 - 5000.0).abs() < 4.0 * 50.0);
    }

    #[test]
    fn labels_roundtrip() {
        for k in [BlockKind::Generate, BlockKind::TestH, BlockKind::TestV] {
            assert_eq!(BlockKind::from_label(k.label()), Some(k));
        }
        assert_eq!(BlockKind::from_label(3), None);
    }

    #[test]
    fn ideal_test_h_block() {
        let mut source = SourceConfig::default();
        source.mean_photon_number = 0.5;
        let mut sim = PhotonSimulator {
            measurement_box: MeasurementBoxConfig::ideal(),
            source,
        };
        let cfg = ProtocolConfig {
            test_rounds: 10_000,
            ..Default::default()
        };
        let run = run_block(BlockKind::TestH, 0, 0.0, &mut sim, &cfg, &mut rng(2));
        assert_eq!(run.windows, 10_000);
        assert_eq!(run.stats.windows(Preparation::H), 10_000);
        let n = run.stats.non_discarded(Preparation::H);
        assert!(n > 3000);
        assert_eq!(run.stats.counts[0][0], n);
        assert_eq!(run.stats.probability(0, Preparation::H), Some(1.0));
        assert_eq!(run.block.bits.len() as u64, n);
        assert_eq!(run.block.bits.count_ones(), 0);
    }

    #[test]
    fn ideal_generate_block_is_balanced() {
        let mut sampler = ExactSampler::new(&MeasurementBoxConfig::ideal(), &SourceConfig::default());
        let run = run_block(
            BlockKind::Generate,
            7,
            0.0,
            &mut sampler,
            &ProtocolConfig::default(),
            &mut rng(3),
        );
        assert_eq!(run.block.bits.len(), BLOCK_BITS);
        let ones = run.block.bits.count_ones() as f64 / BLOCK_BITS as f64;
        assert!((ones - 0.5).abs() < 0.01, "{ones}");
        assert_eq!(run.block.block_id, 7);
    }

    #[test]
    fn default_test_v_success() {
        let mut sampler = ExactSampler::new(&MeasurementBoxConfig::default(), &SourceConfig::default());
        let cfg = ProtocolConfig {
            test_rounds: 100_000,
            ..Default::default()
        };
        let run = run_block(BlockKind::TestV, 0, 0.0, &mut sampler, &cfg, &mut rng(4));
        let p = run.stats.probability(1, Preparation::V).unwrap();
        assert!((p - 0.97).abs() < 0.025, "{p}");
    }

    /// Forces a NoClick on every other window.
    struct Flaky {
        flip: bool,
    }

    impl RoundSource for Flaky {
        fn round<R: Rng + ?Sized>(&mut self, _prep: Preparation, _rng: &mut R) -> DetectionEvent {
            self.flip = !self.flip;
            if self.flip {
                DetectionEvent::Discard(DiscardReason::NoClick)
            } else {
                DetectionEvent::Bit(1)
            }
        }
    }

    #[test]
    fn discards_never_enter_bits() {
        let cfg = ProtocolConfig {
            block_bits: 1000,
            test_rounds: 1000,
            ..Default::default()
        };
        let run = run_block(BlockKind::Generate, 0, 0.0, &mut Flaky { flip: false }, &cfg, &mut rng(5));
        assert_eq!(run.block.bits.len(), 1000);
        assert_eq!(run.windows, 2000);
        assert_eq!(run.stats.no_click[2], 1000);
        let run = run_block(BlockKind::TestV, 0, 0.0, &mut Flaky { flip: false }, &cfg, &mut rng(5));
        assert_eq!(run.block.bits.len(), 500);
        assert_eq!(run.stats.non_discarded(Preparation::V), 500);
        assert_eq!(run.stats.probability(1, Preparation::V), Some(1.0));
    }

    #[test]
    fn round_budget_caps_generation() {
        let cfg = ProtocolConfig {
            round_budget: 301,
            ..Default::default()
        };
        let run = run_block(BlockKind::Generate, 0, 0.0, &mut Flaky { flip: false }, &cfg, &mut rng(6));
        assert_eq!(run.windows, 301);
        assert_eq!(run.block.bits.len(), 150);
    }

    #[test]
    fn success_estimates() {
        let mut s = RoundStatistics::default();
        s.counts[0][0] = 100;
        s.counts[1][1] = 97;
        s.counts[0][1] = 3;
        let e = estimate_success(&s).unwrap();
        assert_eq!((e.h.value, e.h.sigma), (1.0, 0.0));
        assert!((e.v.value - 0.97).abs() < 1e-15);
        assert!((e.v.sigma - (0.97f64 * 0.03 / 100.0).sqrt()).abs() < 1e-15);
        assert!((e.v.sigma - 0.017).abs() < 5e-4);
        assert!((e.average.value - 0.985).abs() < 1e-15);

        let err = estimate_success(&RoundStatistics::default()).unwrap_err();
        assert!(err.to_string().contains("no test data"));
    }

    #[test]
    fn merge_is_order_independent() {
        let parts: Vec<RoundStatistics> = (0..5u64)
            .map(|i| RoundStatistics {
                counts: [[i, 2 * i, 3], [i + 1, 7, i * i]],
                no_click: [i, 1, 2],
                double_click: [0, i, 1],
            })
            .collect();
        let mut fwd = RoundStatistics::default();
        parts.iter().for_each(|p| fwd.merge(p));
        let mut rev = RoundStatistics::default();
        parts.iter().rev().for_each(|p| rev.merge(p));
        assert_eq!(fwd, rev);
        for x in Preparation::ALL {
            if fwd.non_discarded(x) > 0 {
                let sum = fwd.probability(0, x).unwrap() + fwd.probability(1, x).unwrap();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        let snap = fwd.snapshot();
        let back: StatisticsSnapshot = serde_json::from_str(&serde_json::to_string(&snap).unwrap()).unwrap();
        assert_eq!(RoundStatistics::from(&back), fwd);
    }

    #[test]
    fn producer_ids_and_bias() {
        let mut p = Producer::new(
            MeasurementBoxConfig::default(),
            SourceConfig::default(),
            ProtocolConfig {
                block_bits: 256,
                test_rounds: 256,
                ..Default::default()
            },
            Timeline::Simulated,
            42,
        )
        .unwrap();
        let k = 20_000u64;
        let mut generate = 0u64;
        for expected in 0..k {
            let run = p.next_block();
            assert_eq!(run.block.block_id, expected);
            generate += u64::from(run.block.kind == BlockKind::Generate);
        }
        let bias = 0.99f64;
        let floor = bias * k as f64 - 4.0 * (k as f64 * bias * (1.0 - bias)).sqrt();
        assert!(generate as f64 >= floor);
        assert!(p.switching().1 > 0);
    }

    #[test]
    fn default_rate_meets_peak() {
        let b = MeasurementBoxConfig::default();
        let s = SourceConfig::default();
        let rate = expected_raw_rate(&b, &s, 0.99, 0.0);
        assert!(rate >= 10e6, "{rate}");
        let ungated = expected_raw_rate(&b, &s, 1.0, 0.0);
        assert!((10.35e6..10.5e6).contains(&ungated), "{ungated}");
        assert!(expected_raw_rate(&b, &s, 0.99, 22.0) < 0.6 * rate);
    }
}
