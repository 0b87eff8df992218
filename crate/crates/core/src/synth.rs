//! Synthetic test recordings with known vibration bursts.
//!
//! Each event is a sinusoidal carrier under a trapezoid envelope; the
//! envelope support is the ground-truth interval. The corpus preset mimics
//! a population of 518 tests carrying 304 events of 0.64 to 1.10 s.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::bandfilter::TimeFrequencyBox;
use crate::error::{Error, Result};
use crate::metrics::GroundTruth;
use crate::timeseries::TimeSeries;
use crate::wavelet::{ScaleGrid, DEFAULT_F_MAX, DEFAULT_F_MIN};

pub const DEFAULT_SAMPLE_RATE: f64 = 100.0;
pub const DEFAULT_RAMP_S: f64 = 0.05;
pub const CHANNEL_NAME: &str = "moment";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub rise_s: f64,
    pub fall_s: f64,
}

impl Default for Envelope {
    fn default() -> Self {
        Self { rise_s: DEFAULT_RAMP_S, fall_s: DEFAULT_RAMP_S }
    }
}

impl Envelope {
    /// Trapezoid gain at `t` seconds after the event start, for an event of length `duration`.
    pub fn gain(&self, t: f64, duration: f64) -> f64 {
        if t <= 0.0 || t >= duration {
            return 0.0;
        }
        let rise = if self.rise_s > 0.0 { (t / self.rise_s).min(1.0) } else { 1.0 };
        let fall = if self.fall_s > 0.0 { ((duration - t) / self.fall_s).min(1.0) } else { 1.0 };
        rise.min(fall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthEvent {
    pub start: f64,
    pub duration: f64,
    pub carrier_freq: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub envelope: Envelope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftTone {
    pub freq: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub noise_std: f64,
    #[serde(default)]
    pub drift: Vec<DriftTone>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub duration: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: f64,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub events: Vec<SynthEvent>,
    pub seed: u64,
}

fn default_rate() -> f64 {
    DEFAULT_SAMPLE_RATE
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::arg("duration must be positive"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::arg("sample_rate must be positive"));
        }
        if !(self.background.noise_std >= 0.0 && self.background.noise_std.is_finite()) {
            return Err(Error::arg("noise_std must be non-negative"));
        }
        let nyquist = self.sample_rate / 2.0;
        for (i, d) in self.background.drift.iter().enumerate() {
            if !(d.freq >= 0.0 && d.freq < nyquist && d.amplitude.is_finite()) {
                return Err(Error::arg(format!("drift tone {i} is invalid")));
            }
        }
        let mut spans: Vec<(f64, f64)> = Vec::with_capacity(self.events.len());
        for (i, e) in self.events.iter().enumerate() {
            if !(e.duration > 0.0 && e.start >= 0.0 && e.start + e.duration <= self.duration) {
                return Err(Error::arg(format!("event {i} must lie within [0, {}]", self.duration)));
            }
            if !(e.carrier_freq >= DEFAULT_F_MIN && e.carrier_freq <= DEFAULT_F_MAX && e.carrier_freq < nyquist) {
                return Err(Error::arg(format!(
                    "event {i} carrier {} Hz outside analysis band [{DEFAULT_F_MIN}, {DEFAULT_F_MAX}]",
                    e.carrier_freq
                )));
            }
            if !(e.amplitude.is_finite()
                && e.envelope.rise_s >= 0.0
                && e.envelope.fall_s >= 0.0
                && e.envelope.rise_s + e.envelope.fall_s <= e.duration)
            {
                return Err(Error::arg(format!("event {i} has an invalid amplitude or envelope")));
            }
            spans.push((e.start, e.start + e.duration));
        }
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        if spans.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(Error::arg("events must not overlap"));
        }
        Ok(())
    }

    /// Ground-truth intervals, i.e. the envelope supports, sorted by start.
    pub fn truth_intervals(&self) -> Vec<[f64; 2]> {
        let mut v: Vec<[f64; 2]> = self.events.iter().map(|e| [e.start, e.start + e.duration]).collect();
        v.sort_by(|a, b| a[0].total_cmp(&b[0]));
        v
    }
}

/// Renders one recording and its ground truth. Deterministic in `spec.seed`.
pub fn generate_test(spec: &SynthSpec, source_id: &str) -> Result<(TimeSeries, GroundTruth)> {
    spec.validate()?;
    let n = (spec.duration * spec.sample_rate + 1e-9).floor() as usize;
    let dt = 1.0 / spec.sample_rate;
    let mut samples = vec![0.0; n];

    if spec.background.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.background.noise_std).map_err(|e| Error::arg(e.to_string()))?;
        for s in samples.iter_mut() {
            *s = normal.sample(&mut rng);
        }
    }
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64 * dt;
        for d in &spec.background.drift {
            *s += d.amplitude * (2.0 * PI * d.freq * t).sin();
        }
        for e in &spec.events {
            let gain = e.envelope.gain(t - e.start, e.duration);
            if gain > 0.0 {
                *s += e.amplitude * gain * (2.0 * PI * e.carrier_freq * t).sin();
            }
        }
    }
    let ts = TimeSeries::new(CHANNEL_NAME, 0.0, spec.sample_rate, samples)?;
    let truth = GroundTruth::new(source_id, spec.truth_intervals())?;
    Ok((ts, truth))
}

/// Labelled calibration boxes: each event's time support on the scale row nearest its carrier.
pub fn calibration_boxes(spec: &SynthSpec, grid: &ScaleGrid) -> Vec<TimeFrequencyBox> {
    spec.events
        .iter()
        .map(|e| {
            let f = grid.frequency(grid.nearest_row(e.carrier_freq));
            TimeFrequencyBox { t_start: e.start, t_end: e.start + e.duration, f_low: f, f_high: f }
        })
        .collect()
}

/// Train / validation / inference partition of test ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub inference: Vec<T>,
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.55, 0.15, 0.30);

/// Seeded shuffle followed by a cut into three parts.
///
/// Validation and inference sizes are the rounded fractions; whatever
/// remains goes to training.
pub fn dataset_split<T: Clone>(ids: &[T], fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit<T>> {
    if ids.is_empty() {
        return Err(Error::arg("cannot split an empty id list"));
    }
    let (ft, fv, fi) = fractions;
    if [ft, fv, fi].iter().any(|f| !(*f >= 0.0 && *f <= 1.0)) || ((ft + fv + fi) - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("split fractions must be in [0, 1] and sum to 1, got {fractions:?}")));
    }
    let n = ids.len();
    let val = ((n as f64 * fv).round() as usize).min(n);
    let inference = ((n as f64 * fi).round() as usize).min(n - val);
    let mut order: Vec<T> = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let inference_ids = order.split_off(n - inference);
    let val_ids = order.split_off(n - inference - val);
    Ok(DatasetSplit { train: order, val: val_ids, inference: inference_ids })
}

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPreset {
    pub tests: usize,
    pub events: usize,
    /// Share of event-bearing tests that carry two events instead of one.
    pub double_event_share: f64,
    pub seed: u64,
    pub sample_rate: f64,
    pub test_duration_s: (f64, f64),
    pub event_duration_s: (f64, f64),
    pub carrier_hz: (f64, f64),
    pub amplitude: (f64, f64),
    /// Event signal-to-noise ratio `10*log10(A^2 / (2*sigma^2))`.
    pub snr_db: (f64, f64),
    pub drift_hz: (f64, f64),
    pub drift_amplitude: (f64, f64),
    pub drift_tones: usize,
    /// Keep-out distance from the recording edges and between events.
    pub spacing_s: f64,
}

impl Default for CorpusPreset {
    fn default() -> Self {
        Self {
            tests: 518,
            events: 304,
            double_event_share: 0.1,
            seed: 20_240_501,
            sample_rate: DEFAULT_SAMPLE_RATE,
            test_duration_s: (20.0, 90.0),
            event_duration_s: (0.64, 1.10),
            carrier_hz: (5.0, 6.0),
            amplitude: (1.0, 1.0),
            snr_db: (6.0, 20.0),
            drift_hz: (0.2, 1.5),
            drift_amplitude: (0.01, 0.03),
            drift_tones: 2,
            spacing_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub spec: SynthSpec,
}

/// Corpus manifest: the preset plus every generated test spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub preset: CorpusPreset,
    pub tests: Vec<CorpusEntry>,
}

impl CorpusManifest {
    pub fn ids(&self) -> Vec<String> {
        self.tests.iter().map(|t| t.id.clone()).collect()
    }
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

pub fn test_id(index: usize) -> String {
    format!("lss_{index:03}")
}

/// Builds the per-test specs of a corpus.
///
/// Event counts per test are assigned from the corpus seed; everything else
/// in test `i` comes from a stream seeded by `(seed, i)`.
pub fn generate_corpus(preset: &CorpusPreset) -> Result<CorpusManifest> {
    let doubles = ((preset.events as f64 * preset.double_event_share / 2.0).round() as usize).min(preset.events / 2);
    let singles = preset.events - 2 * doubles;
    if preset.tests == 0 || singles + doubles > preset.tests {
        return Err(Error::arg(format!("{} events do not fit into {} tests", preset.events, preset.tests)));
    }
    let mut counts = vec![0usize; preset.tests];
    counts[..doubles].fill(2);
    counts[doubles..doubles + singles].fill(1);
    counts.shuffle(&mut ChaCha8Rng::seed_from_u64(preset.seed));

    let tests = counts
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let spec = corpus_test(preset, i, k)?;
            Ok(CorpusEntry { id: test_id(i), spec })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusManifest { preset: preset.clone(), tests })
}

fn corpus_test(preset: &CorpusPreset, index: usize, event_count: usize) -> Result<SynthSpec> {
    let seed = mix_seed(preset.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = uniform(&mut rng, preset.test_duration_s);
    let amplitude_nominal = preset.amplitude.0.max(preset.amplitude.1);
    let snr = uniform(&mut rng, preset.snr_db);
    let noise_std = amplitude_nominal / (2.0 * 10f64.powf(snr / 10.0)).sqrt();
    let drift = (0..preset.drift_tones)
        .map(|_| DriftTone { freq: uniform(&mut rng, preset.drift_hz), amplitude: uniform(&mut rng, preset.drift_amplitude) })
        .collect();

    let mut events: Vec<SynthEvent> = Vec::with_capacity(event_count);
    let mut attempts = 0;
    while events.len() < event_count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::arg(format!("could not place {event_count} events in test {index}")));
        }
        let len = uniform(&mut rng, preset.event_duration_s);
        let latest = duration - preset.spacing_s - len;
        if latest <= preset.spacing_s {
            continue;
        }
        // two-decimal timestamps, like the reference intervals
        let start = (uniform(&mut rng, (preset.spacing_s, latest)) * 100.0).round() / 100.0;
        let len = (len * 100.0).round() / 100.0;
        let clear = events
            .iter()
            .all(|e| start + len + preset.spacing_s <= e.start || e.start + e.duration + preset.spacing_s <= start);
        if !clear {
            continue;
        }
        events.push(SynthEvent {
            start,
            duration: len,
            carrier_freq: uniform(&mut rng, preset.carrier_hz),
            amplitude: uniform(&mut rng, preset.amplitude),
            envelope: Envelope::default(),
        });
    }
    events.sort_by(|a, b| a.start.total_cmp(&b.start));
    Ok(SynthSpec {
        duration,
        sample_rate: preset.sample_rate,
        background: Background { noise_std, drift },
        events,
        seed,
    })
}
