use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;

use super::{DetectorConfig, Event, EventStream, Line, PhotonStatistics, SourceConfig, StreamError, TruthTag};
use crate::rng::{domain_stream, SimRng};

/// Pulses per parallel work unit. Fixed so that shard boundaries, and with
/// them the random streams, never depend on the thread count.
const SHARD_PULSES: u64 = 1 << 16;

const DOMAIN_BLINK: u64 = 1;
const DOMAIN_PULSES: u64 = 2;
const DOMAIN_DARK: u64 = 3;

/// Two-state telegraph trajectory of the emitter brightness.
#[derive(Debug, Clone, PartialEq)]
pub struct Telegraph {
    initially_on: bool,
    /// Sorted switching times, ns.
    switches: Vec<f64>,
}

impl Telegraph {
    pub fn always_on() -> Self {
        Self { initially_on: true, switches: Vec::new() }
    }

    /// Starts from the stationary distribution and alternates exponential
    /// dwell times until `duration_ns`.
    pub fn sample<R: Rng + ?Sized>(on_rate: f64, off_rate: f64, duration_ns: f64, rng: &mut R) -> Self {
        if off_rate == 0.0 {
            return Self::always_on();
        }
        let duty = on_rate / (on_rate + off_rate);
        let mut on = rng.random::<f64>() < duty;
        let initially_on = on;
        let mut switches = Vec::new();
        let mut t = 0.0;
        loop {
            let rate_per_ns = if on { off_rate } else { on_rate } * 1e-9;
            t += Exp::new(rate_per_ns).expect("positive rate").sample(rng);
            if t >= duration_ns {
                break;
            }
            switches.push(t);
            on = !on;
        }
        Self { initially_on, switches }
    }

    pub fn is_on(&self, t_ns: f64) -> bool {
        let flips = self.switches.partition_point(|&s| s <= t_ns);
        self.initially_on ^ (flips % 2 == 1)
    }

    pub fn switches(&self) -> &[f64] {
        &self.switches
    }
}

struct Router<'a> {
    detectors: &'a [DetectorConfig],
    x: Vec<u8>,
    xx: Vec<u8>,
    jitter: Vec<Option<Normal<f64>>>,
}

impl<'a> Router<'a> {
    fn new(detectors: &'a [DetectorConfig]) -> Self {
        let pick = |line| {
            detectors
                .iter()
                .enumerate()
                .filter(|(_, d)| d.line == line)
                .map(|(i, _)| i as u8)
                .collect()
        };
        let jitter = detectors
            .iter()
            .map(|d| (d.jitter_fwhm > 0.0).then(|| Normal::new(0.0, d.jitter_sigma()).expect("finite sigma")))
            .collect();
        Self { detectors, x: pick(Line::X), xx: pick(Line::XX), jitter }
    }

    /// Photon that left the setup optics: pick a detector of its line, apply
    /// that detector's efficiency and jitter.
    fn detect(&self, line: Line, t: f64, tag: TruthTag, rng: &mut SimRng, out: &mut Vec<Event>) {
        let chans = match line {
            Line::X => &self.x,
            Line::XX => &self.xx,
        };
        if chans.is_empty() {
            return;
        }
        let ch = if chans.len() == 1 { chans[0] } else { chans[rng.random_range(0..chans.len())] };
        let det = &self.detectors[ch as usize];
        if rng.random::<f64>() >= det.efficiency {
            return;
        }
        let jitter = self.jitter[ch as usize].map_or(0.0, |n| n.sample(rng));
        out.push(Event { timestamp_ns: (t + jitter).max(0.0), channel: ch, tag });
    }
}

fn emit_photon(
    source: &SourceConfig,
    router: &Router,
    line: Line,
    t: f64,
    tag: TruthTag,
    rng: &mut SimRng,
    out: &mut Vec<Event>,
) {
    if rng.random::<f64>() < source.extraction_eff * source.setup_transmission {
        router.detect(line, t, tag, rng, out);
    }
}

fn excite(source: &SourceConfig, router: &Router, t_pulse: f64, rng: &mut SimRng, out: &mut Vec<Event>) {
    let exp_xx = Exp::new(1.0 / source.tau_xx).expect("tau_xx > 0");
    let exp_x = Exp::new(1.0 / source.tau_x).expect("tau_x > 0");
    match source.statistics {
        PhotonStatistics::Cascade => {
            if rng.random::<f64>() < source.prep_fidelity {
                let t_xx = t_pulse + exp_xx.sample(rng);
                let t_x = t_xx + exp_x.sample(rng);
                emit_photon(source, router, Line::XX, t_xx, TruthTag::Signal, rng, out);
                emit_photon(source, router, Line::X, t_x, TruthTag::Signal, rng, out);
            }
            // re-excitation within the same pulse window
            if rng.random::<f64>() < source.multiphoton_prob {
                let t = t_pulse + exp_xx.sample(rng);
                emit_photon(source, router, Line::XX, t, TruthTag::Multiphoton, rng, out);
            }
            if rng.random::<f64>() < source.multiphoton_prob {
                let t = t_pulse + exp_xx.sample(rng) + exp_x.sample(rng);
                emit_photon(source, router, Line::X, t, TruthTag::Multiphoton, rng, out);
            }
        }
        PhotonStatistics::Poissonian => {
            let mean = source.prep_fidelity + source.multiphoton_prob;
            for line in [Line::XX, Line::X] {
                let n = if mean > 0.0 { Poisson::new(mean).expect("positive mean").sample(rng) as u64 } else { 0 };
                for k in 0..n {
                    let mut t = t_pulse + exp_xx.sample(rng);
                    if line == Line::X {
                        t += exp_x.sample(rng);
                    }
                    let tag = if k == 0 { TruthTag::Signal } else { TruthTag::Multiphoton };
                    emit_photon(source, router, line, t, tag, rng, out);
                }
            }
        }
    }
}

/// Non-paralyzable dead time applied per channel to a sorted stream.
fn apply_deadtime(events: Vec<Event>, detectors: &[DetectorConfig]) -> Vec<Event> {
    let mut ready = vec![f64::NEG_INFINITY; detectors.len()];
    events
        .into_iter()
        .filter(|e| {
            let ch = e.channel as usize;
            if e.timestamp_ns < ready[ch] {
                return false;
            }
            ready[ch] = e.timestamp_ns + detectors[ch].deadtime;
            true
        })
        .collect()
}

/// Monte Carlo of the excitation, emission and detection chain.
///
/// Laser pulses arrive at `(n + 1) · T` for `n < ⌊duration / T⌋ − 1`, which
/// leaves the final period for emission tails. A bright emitter prepares the biexciton with
/// probability `prep_fidelity`, then emits XX after an `Exp(tau_xx)` delay and
/// X after a further `Exp(tau_x)` delay. Each photon survives the extraction
/// and setup optics, is routed uniformly to one detector of its line, survives
/// that detector's efficiency and picks up Gaussian jitter. Dark counts are
/// added and dead time is applied last, on the time-sorted clicks.
pub fn simulate_stream(
    source: &SourceConfig,
    detectors: &[DetectorConfig],
    duration_s: f64,
    seed: u64,
) -> Result<EventStream, StreamError> {
    if detectors.is_empty() {
        return Err(StreamError::NoDetectors);
    }
    if detectors.len() > u8::MAX as usize {
        return Err(StreamError::InvalidConfig(format!("at most 255 detectors, got {}", detectors.len())));
    }
    source.validate()?;
    for d in detectors {
        d.validate()?;
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(StreamError::InvalidConfig(format!("duration must be > 0 s, got {duration_s}")));
    }

    let period = source.rep_period_ns();
    let duration_ns = duration_s * 1e9;
    let n_pulses = ((duration_ns / period).floor() as u64).saturating_sub(1);
    let blink = Telegraph::sample(
        source.blink_on_rate,
        source.blink_off_rate,
        duration_ns,
        &mut domain_stream(seed, DOMAIN_BLINK, 0),
    );
    let router = Router::new(detectors);

    let n_shards = n_pulses.div_ceil(SHARD_PULSES);
    let shards: Vec<Vec<Event>> = (0..n_shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = domain_stream(seed, DOMAIN_PULSES, s);
            let mut out = Vec::new();
            let end = ((s + 1) * SHARD_PULSES).min(n_pulses);
            for n in s * SHARD_PULSES..end {
                let t0 = (n + 1) as f64 * period;
                if !blink.is_on(t0) {
                    continue;
                }
                excite(source, &router, t0, &mut rng, &mut out);
                if let Some(d) = source.pulse_pair_delay {
                    excite(source, &router, t0 + d, &mut rng, &mut out);
                }
            }
            out
        })
        .collect();

    let mut events: Vec<Event> = shards.into_iter().flatten().collect();
    for (ch, d) in detectors.iter().enumerate() {
        if d.dark_count_rate > 0.0 {
            let mut rng = domain_stream(seed, DOMAIN_DARK, ch as u64);
            let gap = Exp::new(d.dark_count_rate * 1e-9).expect("positive rate");
            let mut t = gap.sample(&mut rng);
            while t < duration_ns {
                events.push(Event { timestamp_ns: t, channel: ch as u8, tag: TruthTag::Background });
                t += gap.sample(&mut rng);
            }
        }
    }
    events.sort_by(|a, b| {
        a.timestamp_ns
            .total_cmp(&b.timestamp_ns)
            .then(a.channel.cmp(&b.channel))
            .then(a.tag.cmp(&b.tag))
    });
    let events = apply_deadtime(events, detectors);
    Ok(EventStream { events, channels: detectors.len() as u8, rep_period_ns: period })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hbt_detectors(eff: f64) -> Vec<DetectorConfig> {
        vec![DetectorConfig { efficiency: eff, ..Default::default() }; 2]
    }

    #[test]
    fn zero_efficiency_gives_empty_stream() {
        let s = simulate_stream(&SourceConfig::default(), &hbt_detectors(0.0), 1e-4, 1).unwrap();
        assert!(s.events.is_empty());
    }

    #[test]
    fn empty_detector_set_is_an_error() {
        assert_eq!(simulate_stream(&SourceConfig::default(), &[], 1e-4, 1), Err(StreamError::NoDetectors));
    }

    #[test]
    fn at_most_one_click_per_channel_per_pulse() {
        let dets = vec![DetectorConfig { jitter_fwhm: 0.05, ..Default::default() }; 2];
        let s = simulate_stream(&SourceConfig::default(), &dets, 1e-3, 3).unwrap();
        assert!(s.is_sorted());
        let period = s.rep_period_ns;
        let mut seen = std::collections::HashSet::new();
        for e in &s.events {
            let window = ((e.timestamp_ns - 0.5 * period) / period).floor() as i64;
            assert!(seen.insert((window, e.channel)), "two clicks in window {window}");
        }
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let source = SourceConfig { multiphoton_prob: 0.05, blink_on_rate: 1e5, blink_off_rate: 2e5, ..Default::default() };
        let dets = vec![
            DetectorConfig { deadtime: 20.0, dark_count_rate: 1e4, ..Default::default() },
            DetectorConfig { line: Line::XX, ..Default::default() },
        ];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_stream(&source, &dets, 5e-3, 42).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a, b);
        assert_ne!(a, simulate_stream(&source, &dets, 5e-3, 43).unwrap());
    }

    #[test]
    fn telegraph_duty_cycle() {
        let mut rng = crate::rng::substream(8, 0);
        let tel = Telegraph::sample(1e6, 2e6, 1e9, &mut rng);
        let n = 100_000;
        let on = (0..n).filter(|i| tel.is_on(*i as f64 * 1e4)).count() as f64 / n as f64;
        assert!((on - 1.0 / 3.0).abs() < 0.01, "{on}");
    }

    #[test]
    fn deadtime_suppresses_close_clicks() {
        let dets = vec![DetectorConfig { deadtime: 30.0, jitter_fwhm: 0.0, ..Default::default() }];
        let s = simulate_stream(&SourceConfig::default(), &dets, 1e-4, 5).unwrap();
        assert!(s.events.windows(2).all(|w| w[1].timestamp_ns - w[0].timestamp_ns >= 30.0));
    }
}
