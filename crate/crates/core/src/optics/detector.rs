use rand::Rng;
use serde::Serialize;

use super::{
    sample_photon_count, DetectionEvent, DiscardReason, MeasurementBoxConfig, PolarizationState,
    Preparation, SourceConfig,
};

/// Simulates one detection window photon by photon.
///
/// Each emitted photon independently exits the PBS towards D₁ or D₂ and is
/// then detected with the detector efficiency. A detector clicks when at
/// least one photon is detected or it dark-counts.
pub fn simulate_round<R: Rng + ?Sized>(
    state: &PolarizationState,
    measurement_box: &MeasurementBoxConfig,
    source: &SourceConfig,
    rng: &mut R,
) -> DetectionEvent {
    let photons = sample_photon_count(source.mean_photon_number, rng);
    let to_d1 = measurement_box.route_to_d1(state);
    let eta = measurement_box.detector_efficiency;
    let (mut d1, mut d2) = (false, false);
    for _ in 0..photons {
        let at_d1 = rng.random::<f64>() < to_d1;
        if rng.random::<f64>() < eta {
            if at_d1 {
                d1 = true;
            } else {
                d2 = true;
            }
        }
    }
    let dark = measurement_box.dark_count_prob;
    if dark > 0.0 {
        d1 |= rng.random::<f64>() < dark;
        d2 |= rng.random::<f64>() < dark;
    }
    classify(d1, d2)
}

fn classify(d1: bool, d2: bool) -> DetectionEvent {
    match (d1, d2) {
        (true, false) => DetectionEvent::Bit(0),
        (false, true) => DetectionEvent::Bit(1),
        (false, false) => DetectionEvent::Discard(DiscardReason::NoClick),
        (true, true) => DetectionEvent::Discard(DiscardReason::DoubleClick),
    }
}

/// Exact per-window outcome probabilities.
///
/// Poisson emission thinned independently towards each detector gives two
/// independent Poisson streams, so the detectors click independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeProbabilities {
    pub bit0: f64,
    pub bit1: f64,
    pub no_click: f64,
    pub double_click: f64,
}

impl OutcomeProbabilities {
    pub fn non_discard(&self) -> f64 {
        self.bit0 + self.bit1
    }
}

pub fn outcome_probabilities(
    state: &PolarizationState,
    measurement_box: &MeasurementBoxConfig,
    source: &SourceConfig,
) -> OutcomeProbabilities {
    let detected = source.mean_photon_number * measurement_box.detector_efficiency;
    let to_d1 = measurement_box.route_to_d1(state);
    let quiet = |mean: f64| (1.0 - measurement_box.dark_count_prob) * (-mean).exp();
    let q1 = quiet(detected * to_d1);
    let q2 = quiet(detected * (1.0 - to_d1));
    OutcomeProbabilities {
        bit0: (1.0 - q1) * q2,
        bit1: q1 * (1.0 - q2),
        no_click: q1 * q2,
        double_click: (1.0 - q1) * (1.0 - q2),
    }
}

/// Result of advancing a source to its next clicking window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Advance {
    /// No-click windows skipped before `event`.
    pub no_clicks: u64,
    /// The first window with at least one click, or `None` when the budget ran out.
    pub event: Option<DetectionEvent>,
}

/// Anything that produces detection events window by window.
pub trait RoundSource {
    fn round<R: Rng + ?Sized>(&mut self, prep: Preparation, rng: &mut R) -> DetectionEvent;

    /// Skips no-click windows until a click occurs or `budget` windows pass.
    fn advance<R: Rng + ?Sized>(&mut self, prep: Preparation, budget: u64, rng: &mut R) -> Advance {
        let mut no_clicks = 0;
        while no_clicks < budget {
            match self.round(prep, rng) {
                DetectionEvent::Discard(DiscardReason::NoClick) => no_clicks += 1,
                event => {
                    return Advance {
                        no_clicks,
                        event: Some(event),
                    }
                }
            }
        }
        Advance {
            no_clicks,
            event: None,
        }
    }
}

/// Per-photon simulator built on [`simulate_round`].
#[derive(Debug, Clone)]
pub struct PhotonSimulator {
    pub measurement_box: MeasurementBoxConfig,
    pub source: SourceConfig,
}

impl RoundSource for PhotonSimulator {
    fn round<R: Rng + ?Sized>(&mut self, prep: Preparation, rng: &mut R) -> DetectionEvent {
        simulate_round(&prep.state(), &self.measurement_box, &self.source, rng)
    }
}

#[derive(Debug, Clone)]
struct PrepTable {
    probs: OutcomeProbabilities,
    /// 1/ln(1 − P(click)); `None` when no window can click.
    gap: Option<f64>,
    // P(Bit0 | click), P(Bit1 | click)
    cut0: f64,
    cut1: f64,
}

/// Samples from the exact window-outcome distribution, jumping over runs of
/// no-click windows with a geometric draw. Statistically identical to
/// [`PhotonSimulator`] and orders of magnitude faster at low photon numbers.
#[derive(Debug, Clone)]
pub struct ExactSampler {
    tables: [PrepTable; 3],
}

impl ExactSampler {
    pub fn new(measurement_box: &MeasurementBoxConfig, source: &SourceConfig) -> Self {
        let table = |prep: Preparation| {
            let probs = outcome_probabilities(&prep.state(), measurement_box, source);
            let click = 1.0 - probs.no_click;
            let gap = (click > 0.0).then(|| 1.0 / (-click).ln_1p());
            let (cut0, cut1) = if click > 0.0 {
                (probs.bit0 / click, (probs.bit0 + probs.bit1) / click)
            } else {
                (0.0, 0.0)
            };
            PrepTable {
                probs,
                gap,
                cut0,
                cut1,
            }
        };
        Self {
            tables: Preparation::ALL.map(table),
        }
    }

    pub fn probabilities(&self, prep: Preparation) -> OutcomeProbabilities {
        self.tables[prep.index()].probs
    }

    fn clicked<R: Rng + ?Sized>(table: &PrepTable, rng: &mut R) -> DetectionEvent {
        let u = rng.random::<f64>();
        if u < table.cut0 {
            DetectionEvent::Bit(0)
        } else if u < table.cut1 {
            DetectionEvent::Bit(1)
        } else {
            DetectionEvent::Discard(DiscardReason::DoubleClick)
        }
    }
}

impl RoundSource for ExactSampler {
    fn round<R: Rng + ?Sized>(&mut self, prep: Preparation, rng: &mut R) -> DetectionEvent {
        let t = &self.tables[prep.index()];
        if rng.random::<f64>() < t.probs.no_click {
            DetectionEvent::Discard(DiscardReason::NoClick)
        } else {
            Self::clicked(t, rng)
        }
    }

    fn advance<R: Rng + ?Sized>(&mut self, prep: Preparation, budget: u64, rng: &mut R) -> Advance {
        let t = &self.tables[prep.index()];
        // geometric number of failures by inversion
        let skipped = t.gap.map_or(u64::MAX, |inv_log_q| {
            let u = 1.0 - rng.random::<f64>();
            let k = (u.ln() * inv_log_q).floor();
            if k < u64::MAX as f64 {
                k as u64
            } else {
                u64::MAX
            }
        });
        if skipped >= budget {
            return Advance {
                no_clicks: budget,
                event: None,
            };
        }
        Advance {
            no_clicks: skipped,
            event: Some(Self::clicked(t, rng)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Default, Debug)]
    struct Tally {
        bit0: u64,
        bit1: u64,
        no_click: u64,
        double: u64,
    }

    impl Tally {
        fn add(&mut self, e: DetectionEvent) {
            match e {
                DetectionEvent::Bit(0) => self.bit0 += 1,
                DetectionEvent::Bit(_) => self.bit1 += 1,
                DetectionEvent::Discard(DiscardReason::NoClick) => self.no_click += 1,
                DetectionEvent::Discard(DiscardReason::DoubleClick) => self.double += 1,
            }
        }
        fn total(&self) -> u64 {
            self.bit0 + self.bit1 + self.no_click + self.double
        }
    }

    fn within(observed: u64, n: u64, p: f64, sigmas: f64) -> bool {
        let sd = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
        (observed as f64 - n as f64 * p).abs() <= sigmas * sd
    }

    #[test]
    fn zero_photons_without_dark_counts_is_no_click() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut source = SourceConfig::default();
        source.mean_photon_number = 1e-300;
        let b = MeasurementBoxConfig::ideal();
        for _ in 0..1000 {
            let e = simulate_round(&Preparation::R.state(), &b, &source, &mut rng);
            assert_eq!(e, DetectionEvent::Discard(DiscardReason::NoClick));
        }
    }

    #[test]
    fn h_on_ideal_box_only_fires_d1() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut source = SourceConfig::default();
        source.mean_photon_number = 20.0;
        let b = MeasurementBoxConfig::ideal();
        // Everything lands on D₁, so a double click is impossible and a
        // no-click needs zero photons: P = e^{-20}.
        for _ in 0..10_000 {
            let e = simulate_round(&Preparation::H.state(), &b, &source, &mut rng);
            assert_eq!(e, DetectionEvent::Bit(0));
        }
        let p = outcome_probabilities(&Preparation::H.state(), &b, &source);
        assert!((p.bit0 - (1.0 - (-20.0f64).exp())).abs() < 1e-15);
        assert_eq!(p.double_click, 0.0);
    }

    #[test]
    fn r_on_ideal_box_is_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut source = SourceConfig::default();
        source.mean_photon_number = 0.5;
        let b = MeasurementBoxConfig::ideal();
        let mut t = Tally::default();
        while t.bit0 + t.bit1 < 1_000_000 {
            t.add(simulate_round(&Preparation::R.state(), &b, &source, &mut rng));
        }
        let freq = t.bit0 as f64 / 1e6;
        assert!((freq - 0.5).abs() < 0.002, "{freq}");
    }

    #[test]
    fn outcome_probabilities_are_normalized() {
        for prep in Preparation::ALL {
            let p = outcome_probabilities(
                &prep.state(),
                &MeasurementBoxConfig::default(),
                &SourceConfig::default(),
            );
            let sum = p.bit0 + p.bit1 + p.no_click + p.double_click;
            assert!((sum - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn photon_simulator_matches_closed_form() {
        // 10⁶ windows per state, each outcome within 4σ of the closed form
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut source = SourceConfig::default();
        source.mean_photon_number = 2.0;
        let mut b = MeasurementBoxConfig::default();
        b.dark_count_prob = 0.01;
        let mut sim = PhotonSimulator {
            measurement_box: b,
            source: source.clone(),
        };
        for prep in Preparation::ALL {
            let p = outcome_probabilities(&prep.state(), &b, &source);
            let mut t = Tally::default();
            for _ in 0..1_000_000 {
                t.add(sim.round(prep, &mut rng));
            }
            let n = t.total();
            assert!(within(t.bit0, n, p.bit0, 4.0), "{prep:?} {t:?} {p:?}");
            assert!(within(t.bit1, n, p.bit1, 4.0), "{prep:?} {t:?} {p:?}");
            assert!(within(t.no_click, n, p.no_click, 4.0), "{prep:?} {t:?} {p:?}");
            assert!(within(t.double, n, p.double_click, 4.0), "{prep:?} {t:?} {p:?}");
        }
    }

    #[test]
    fn exact_sampler_advance_matches_photon_simulator() {
        let mut source = SourceConfig::default();
        source.mean_photon_number = 0.3;
        let b = MeasurementBoxConfig::default();
        let mut slow = PhotonSimulator {
            measurement_box: b,
            source: source.clone(),
        };
        let mut fast = ExactSampler::new(&b, &source);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for prep in Preparation::ALL {
            let (mut ts, mut tf) = (Tally::default(), Tally::default());
            let (mut ws, mut wf) = (0u64, 0u64);
            for _ in 0..50_000 {
                let a = slow.advance(prep, u64::MAX, &mut rng);
                ws += a.no_clicks + 1;
                ts.add(a.event.unwrap());
                let a = fast.advance(prep, u64::MAX, &mut rng);
                wf += a.no_clicks + 1;
                tf.add(a.event.unwrap());
            }
            // conditional outcome frequencies agree
            let p = fast.probabilities(prep);
            let click = 1.0 - p.no_click;
            for (s, f, q) in [
                (ts.bit0, tf.bit0, p.bit0 / click),
                (ts.bit1, tf.bit1, p.bit1 / click),
                (ts.double, tf.double, p.double_click / click),
            ] {
                assert!(within(s, 50_000, q, 4.5), "{prep:?} slow {s} vs {q}");
                assert!(within(f, 50_000, q, 4.5), "{prep:?} fast {f} vs {q}");
            }
            // windows per click ~ 1/click, geometric variance (1-c)/c² per draw
            let sd = ((1.0 - click) / (click * click) * 50_000.0).sqrt();
            for w in [ws, wf] {
                assert!((w as f64 - 50_000.0 / click).abs() < 4.5 * sd, "{prep:?} {w}");
            }
        }
    }

    #[test]
    fn advance_respects_budget() {
        let mut source = SourceConfig::default();
        source.mean_photon_number = 1e-12;
        let mut b = MeasurementBoxConfig::ideal();
        b.dark_count_prob = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut fast = ExactSampler::new(&b, &source);
        let a = fast.advance(Preparation::R, 1000, &mut rng);
        assert_eq!(a, Advance { no_clicks: 1000, event: None });
        let mut slow = PhotonSimulator { measurement_box: b, source };
        let a = slow.advance(Preparation::R, 1000, &mut rng);
        assert_eq!(a, Advance { no_clicks: 1000, event: None });
    }

    #[test]
    fn identical_seeds_identical_streams() {
        let b = MeasurementBoxConfig::default();
        let s = SourceConfig::default();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sim = ExactSampler::new(&b, &s);
            (0..10_000)
                .map(|_| sim.advance(Preparation::R, u64::MAX, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }
}
