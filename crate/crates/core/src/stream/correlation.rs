use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EventStream, PhotonStatistics, SourceConfig, StreamError};

/// Coincidence counts against delay `t_b − t_a`, in `2m + 1` bins centred on
/// `(i − m) · bin_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub zero_bin: usize,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    bin_center_ns: f64,
    counts: u64,
}

impl CorrelationHistogram {
    pub fn empty(bin_width: f64, half_bins: usize) -> Self {
        Self { bin_width, counts: vec![0; 2 * half_bins + 1], zero_bin: half_bins }
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        (i as f64 - self.zero_bin as f64) * self.bin_width
    }

    /// Largest |delay| covered, including the outer half bins.
    pub fn half_range(&self) -> f64 {
        (self.zero_bin as f64 + 0.5) * self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts in bins whose centre lies in `[lo, hi)`.
    pub fn area(&self, lo: f64, hi: f64) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let c = self.bin_center(*i);
                c >= lo && c < hi
            })
            .map(|(_, n)| n)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), StreamError> {
        let mut wr = csv::Writer::from_writer(w);
        for (i, &n) in self.counts.iter().enumerate() {
            wr.serialize(CsvRow { bin_center_ns: self.bin_center(i), counts: n })
                .map_err(|e| StreamError::Format(e.to_string()))?;
        }
        wr.flush().map_err(|e| StreamError::Format(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, StreamError> {
        let rows: Vec<CsvRow> = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| StreamError::Format(e.to_string()))?;
        if rows.len() < 3 || rows.len() % 2 == 0 {
            return Err(StreamError::Format(format!("need an odd number (≥ 3) of bins, got {}", rows.len())));
        }
        let w = rows[1].bin_center_ns - rows[0].bin_center_ns;
        let m = rows.len() / 2;
        for (i, r) in rows.iter().enumerate() {
            let expect = (i as f64 - m as f64) * w;
            if (r.bin_center_ns - expect).abs() > 1e-6 * w.abs().max(1e-12) {
                return Err(StreamError::Format(format!("row {}: bins are not uniform and symmetric", i + 2)));
            }
        }
        Ok(Self { bin_width: w, counts: rows.into_iter().map(|r| r.counts).collect(), zero_bin: m })
    }
}

/// All-pairs (multi-stop) coincidence histogram of channel `b` against
/// channel `a` over delays `[−window, window]`.
pub fn cross_correlation(
    stream: &EventStream,
    a: u8,
    b: u8,
    bin_width: f64,
    window: f64,
) -> Result<CorrelationHistogram, StreamError> {
    if !(bin_width > 0.0 && window >= 0.0) {
        return Err(StreamError::InvalidConfig(format!("bin width {bin_width} / window {window}")));
    }
    for ch in [a, b] {
        if ch >= stream.channels {
            return Err(StreamError::MissingChannel(ch));
        }
    }
    let m = (window / bin_width).round() as usize;
    let mut hist = CorrelationHistogram::empty(bin_width, m);
    let ta = stream.channel_times(a);
    let tb = stream.channel_times(b);
    let reach = (m as f64 + 0.5) * bin_width;
    let mut start = 0;
    for &t in &ta {
        while start < tb.len() && tb[start] < t - reach {
            start += 1;
        }
        for &u in &tb[start..] {
            let d = u - t;
            if d >= reach {
                break;
            }
            let k = (d / bin_width).round() as i64 + m as i64;
            if (0..hist.counts.len() as i64).contains(&k) {
                hist.counts[k as usize] += 1;
            }
        }
    }
    Ok(hist)
}

/// Hanbury Brown–Twiss histogram between channels 0 and 1.
pub fn hbt_histogram(stream: &EventStream, bin_width: f64, window: f64) -> Result<CorrelationHistogram, StreamError> {
    cross_correlation(stream, 0, 1, bin_width, window)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub g2: f64,
    pub g2_err: f64,
    pub zero_area: u64,
    pub side_mean: f64,
    pub side_peaks_per_side: usize,
}

pub const MIN_SIDE_PEAKS: usize = 3;

/// Zero-delay peak area over the mean area of the side peaks at `±j·T`, with
/// each peak integrated over one full period. The error is propagated from
/// Poisson errors on the zero peak and the summed side peaks.
pub fn g2_zero(hist: &CorrelationHistogram, rep_period: f64) -> Result<G2Estimate, StreamError> {
    let k = ((hist.half_range() - rep_period / 2.0) / rep_period + 1e-9).floor().max(0.0) as usize;
    if k < MIN_SIDE_PEAKS {
        return Err(StreamError::TooFewSidePeaks { found: k, needed: MIN_SIDE_PEAKS });
    }
    let peak = |j: f64| hist.area(j * rep_period - rep_period / 2.0, j * rep_period + rep_period / 2.0);
    let zero = peak(0.0);
    let side_total: u64 = (1..=k).map(|j| peak(j as f64) + peak(-(j as f64))).sum();
    if side_total == 0 {
        return Err(StreamError::EmptySidePeaks);
    }
    let n_side = 2 * k;
    let side_mean = side_total as f64 / n_side as f64;
    let g2 = zero as f64 / side_mean;
    let rel_side = 1.0 / side_total as f64;
    let g2_err = if zero == 0 {
        // one-count scale so an empty zero peak still carries an error bar
        1.0 / side_mean
    } else {
        g2 * (1.0 / zero as f64 + rel_side).sqrt()
    };
    Ok(G2Estimate { g2, g2_err, zero_area: zero, side_mean, side_peaks_per_side: k })
}

/// g²(0) the generator produces on the two detectors of one line, for side
/// peaks `±1 … ±side_peaks`. Dark counts are neglected.
///
/// The photon number per pulse is `Bern(P) + Bern(p)` for the cascade source,
/// giving `2Pp / (P + p)²`, and Poissonian otherwise. Side peak `j` is raised
/// by the telegraph correlation `d + (1 − d) e^{−(k_on + k_off) j T}`.
pub fn expected_g2_zero(source: &SourceConfig, side_peaks: usize) -> f64 {
    let p_main = source.prep_fidelity;
    let p_extra = source.multiphoton_prob;
    let mean = p_main + p_extra;
    let zero = match source.statistics {
        PhotonStatistics::Cascade => 2.0 * p_main * p_extra,
        PhotonStatistics::Poissonian => mean * mean,
    };
    let d = source.duty_cycle();
    let lambda = (source.blink_on_rate + source.blink_off_rate) * 1e-9;
    let period = source.rep_period_ns();
    let corr = (1..=side_peaks)
        .map(|j| d + (1.0 - d) * (-lambda * j as f64 * period).exp())
        .sum::<f64>()
        / side_peaks as f64;
    zero / (mean * mean * corr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{Event, TruthTag};

    fn peaks(zero: u64, side: u64) -> CorrelationHistogram {
        let mut h = CorrelationHistogram::empty(0.5, 100);
        let t = 12.5;
        for j in -3i32..=3 {
            let i = (h.zero_bin as f64 + j as f64 * t / 0.5) as usize;
            h.counts[i] = if j == 0 { zero } else { side };
        }
        h
    }

    #[test]
    fn g2_reference_values() {
        let e = g2_zero(&peaks(12, 1000), 12.5).unwrap();
        assert!((e.g2 - 0.012).abs() < 1e-12);
        assert!((e.g2_err - 0.012 * (1.0 / 12.0 + 1.0 / 6000.0f64).sqrt()).abs() < 1e-12);
        assert_eq!(g2_zero(&peaks(0, 1000), 12.5).unwrap().g2, 0.0);
    }

    #[test]
    fn g2_needs_three_side_peaks() {
        let h = CorrelationHistogram::empty(0.5, 60);
        assert_eq!(
            g2_zero(&h, 12.5),
            Err(StreamError::TooFewSidePeaks { found: 1, needed: 3 })
        );
    }

    #[test]
    fn histogram_counts_all_pairs() {
        let ev = |t, c| Event { timestamp_ns: t, channel: c, tag: TruthTag::Signal };
        let s = EventStream {
            events: vec![ev(10.0, 0), ev(10.2, 1), ev(12.0, 0), ev(13.0, 1), ev(40.0, 1)],
            channels: 2,
            rep_period_ns: 12.5,
        };
        let h = cross_correlation(&s, 0, 1, 0.1, 5.0).unwrap();
        assert_eq!(h.total(), 4);
        assert_eq!(h.counts[h.zero_bin + 2], 1);
        assert_eq!(h.counts[h.zero_bin - 18], 1);
        assert_eq!(h.counts[h.zero_bin + 30], 1);
        assert_eq!(h.counts[h.zero_bin + 10], 1);
        assert_eq!(h.counts.len(), 101);
        let empty = EventStream { events: vec![], channels: 2, rep_period_ns: 12.5 };
        assert_eq!(hbt_histogram(&empty, 0.1, 5.0).unwrap().total(), 0);
        assert_eq!(cross_correlation(&empty, 0, 2, 0.1, 5.0), Err(StreamError::MissingChannel(2)));
    }

    #[test]
    fn histogram_csv_round_trip() {
        let h = peaks(3, 7);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"bin_center_ns,counts\n"));
        let back = CorrelationHistogram::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.counts, h.counts);
        assert!((back.bin_width - 0.5).abs() < 1e-12);
    }

    #[test]
    fn expected_g2_limits() {
        let s = SourceConfig { prep_fidelity: 0.9, multiphoton_prob: 0.0, ..Default::default() };
        assert_eq!(expected_g2_zero(&s, 3), 0.0);
        let s = SourceConfig { statistics: PhotonStatistics::Poissonian, ..s };
        assert!((expected_g2_zero(&s, 3) - 1.0).abs() < 1e-12);
        let s = SourceConfig { prep_fidelity: 0.9, multiphoton_prob: 0.02, ..Default::default() };
        assert!((expected_g2_zero(&s, 3) - 2.0 * 0.9 * 0.02 / 0.92f64.powi(2)).abs() < 1e-12);
    }
}
