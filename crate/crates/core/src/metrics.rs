//! Evaluation of run logs: energy-weighted efficiency, tracking time into a
//! ±2% band, and steady-state power oscillation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::{RunLog, Sample};

/// Samples with a smaller available power count as dark.
pub const DARK_POWER: f64 = 1e-12;
pub const TRACKING_BAND: f64 = 0.02;
/// Consecutive in-band samples required before a run counts as settled.
pub const BAND_PERSISTENCE: usize = 20;
/// Fraction of the final constant segment used as the steady window.
pub const STEADY_FRACTION: f64 = 0.2;

const TIME_SLACK: f64 = 1e-12;

/// Harvested over available energy in percent, by the trapezoid rule.
/// Intervals touching a dark sample are left out of both integrals.
pub fn efficiency(samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyLog);
    }
    let (mut num, mut den) = (0.0, 0.0);
    if samples.len() == 1 {
        let s = samples[0];
        if s.p_max < DARK_POWER {
            return Err(Error::AllDark);
        }
        return Ok(100.0 * s.p_pv / s.p_max);
    }
    for w in samples.windows(2) {
        if w[0].p_max < DARK_POWER || w[1].p_max < DARK_POWER {
            continue;
        }
        let h = w[1].t - w[0].t;
        num += 0.5 * h * (w[0].p_pv + w[1].p_pv);
        den += 0.5 * h * (w[0].p_max + w[1].p_max);
    }
    if den <= 0.0 {
        return Err(Error::AllDark);
    }
    Ok(100.0 * num / den)
}

fn in_band(s: &Sample) -> bool {
    (s.p_pv - s.p_max).abs() <= TRACKING_BAND * s.p_max
}

/// Delay from `event_t` until power stays within the band for
/// [`BAND_PERSISTENCE`] consecutive samples; `None` if it never does.
pub fn tracking_time(samples: &[Sample], event_t: f64) -> Result<Option<f64>> {
    tracking_time_until(samples, event_t, f64::INFINITY)
}

/// As [`tracking_time`], but settling must start before `horizon`, usually
/// the next stimulus event.
pub fn tracking_time_until(samples: &[Sample], event_t: f64, horizon: f64) -> Result<Option<f64>> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => return Err(Error::EmptyLog),
    };
    if !(event_t >= first - TIME_SLACK && event_t <= last + TIME_SLACK) {
        return Err(Error::EventOutOfRange(event_t));
    }
    let start = samples.partition_point(|s| s.t < event_t - TIME_SLACK);
    let mut run = 0;
    for k in start..samples.len() {
        if samples[k].t >= horizon - TIME_SLACK && run == 0 {
            break;
        }
        if in_band(&samples[k]) {
            run += 1;
            if run == BAND_PERSISTENCE {
                let settled = samples[k + 1 - BAND_PERSISTENCE].t;
                return Ok(Some((settled - event_t).max(0.0)));
            }
        } else {
            run = 0;
        }
    }
    Ok(None)
}

/// Peak-to-peak harvested power over the mean available power in
/// `[t0, t1]`, in percent.
pub fn ss_oscillation(samples: &[Sample], window: (f64, f64)) -> Result<f64> {
    let (t0, t1) = window;
    let invalid = || Error::WindowInvalid(t0, t1);
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => return Err(Error::EmptyLog),
    };
    if !(t0 < t1 && t0 >= first - TIME_SLACK && t1 <= last + TIME_SLACK) {
        return Err(invalid());
    }
    let inside: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.t >= t0 - TIME_SLACK && s.t <= t1 + TIME_SLACK)
        .collect();
    if inside.len() < 2 {
        return Err(invalid());
    }
    let max = inside
        .iter()
        .map(|s| s.p_pv)
        .fold(f64::NEG_INFINITY, f64::max);
    let min = inside.iter().map(|s| s.p_pv).fold(f64::INFINITY, f64::min);
    let mean = inside.iter().map(|s| s.p_max).sum::<f64>() / inside.len() as f64;
    if !(mean > 0.0) {
        return Err(invalid());
    }
    Ok(100.0 * (max - min) / mean)
}

/// Duty peak-to-peak over the window.
pub fn duty_peak_to_peak(samples: &[Sample], window: (f64, f64)) -> f64 {
    let inside = samples
        .iter()
        .filter(|s| s.t >= window.0 - TIME_SLACK && s.t <= window.1 + TIME_SLACK)
        .map(|s| s.duty);
    let (lo, hi) = inside.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
        (lo.min(d), hi.max(d))
    });
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

/// Last [`STEADY_FRACTION`] of the segment that ends the run.
pub fn auto_window(log: &RunLog) -> Result<(f64, f64)> {
    let last = log.samples.last().ok_or(Error::EmptyLog)?.t;
    let seg_start = log
        .meta
        .events
        .iter()
        .copied()
        .filter(|&e| e < last)
        .fold(log.samples[0].t, f64::max);
    Ok((last - STEADY_FRACTION * (last - seg_start), last))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingEntry {
    pub event_t: f64,
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub eta_mppt: f64,
    /// Startup (event at the first sample) followed by every stimulus event;
    /// each must settle before the next event starts.
    pub tracking_times: Vec<TrackingEntry>,
    pub ss_oscillation: f64,
    pub ss_window: (f64, f64),
}

impl MetricReport {
    pub fn startup_time(&self) -> Option<f64> {
        self.tracking_times.first().and_then(|e| e.duration)
    }

    /// Longest tracking time; `None` if any event never settles.
    pub fn worst_tracking_time(&self) -> Option<f64> {
        self.tracking_times
            .iter()
            .try_fold(0.0f64, |acc, e| e.duration.map(|d| acc.max(d)))
    }
}

pub fn evaluate(log: &RunLog) -> Result<MetricReport> {
    evaluate_with_window(log, None)
}

pub fn evaluate_with_window(log: &RunLog, window: Option<(f64, f64)>) -> Result<MetricReport> {
    let s = &log.samples;
    let eta_mppt = efficiency(s)?;
    let mut events = vec![s[0].t];
    events.extend(log.meta.events.iter().copied().filter(|&e| e > s[0].t));
    events.retain(|&e| e <= s[s.len() - 1].t);
    let tracking_times = (0..events.len())
        .map(|k| {
            let horizon = events.get(k + 1).copied().unwrap_or(f64::INFINITY);
            Ok(TrackingEntry {
                event_t: events[k],
                duration: tracking_time_until(s, events[k], horizon)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ss_window = match window {
        Some(w) => w,
        None => auto_window(log)?,
    };
    Ok(MetricReport {
        eta_mppt,
        tracking_times,
        ss_oscillation: ss_oscillation(s, ss_window)?,
        ss_window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mppt::Mode;

    fn series(p: &[(f64, f64)]) -> Vec<Sample> {
        p.iter()
            .enumerate()
            .map(|(k, &(p_pv, p_max))| Sample {
                t: k as f64 * 1e-3,
                duty: 0.5,
                v_pv: 1.0,
                i_pv: p_pv,
                p_pv,
                p_max,
                mode: Mode::Tracking,
            })
            .collect()
    }

    #[test]
    fn efficiency_examples() {
        let same = series(&[(1.0, 1.0); 10]);
        assert!((efficiency(&same).unwrap() - 100.0).abs() < 1e-12);
        let ninety = series(&[(0.9, 1.0); 10]);
        assert!((efficiency(&ninety).unwrap() - 90.0).abs() < 1e-9);
        assert!(matches!(efficiency(&[]), Err(Error::EmptyLog)));
        assert!(matches!(
            efficiency(&series(&[(0.0, 0.0); 5])),
            Err(Error::AllDark)
        ));
        let mixed = series(&[(0.0, 0.0), (0.0, 0.0), (0.5, 1.0), (0.5, 1.0)]);
        assert!((efficiency(&mixed).unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn tracking_time_examples() {
        let inside = series(&[(1.0, 1.0); 30]);
        assert_eq!(tracking_time(&inside, 0.0).unwrap(), Some(0.0));
        let never = series(&[(0.5, 1.0); 30]);
        assert_eq!(tracking_time(&never, 0.0).unwrap(), None);
        let mut late = vec![(0.5, 1.0); 5];
        late.extend([(0.99, 1.0); 25]);
        let d = tracking_time(&series(&late), 0.0).unwrap().unwrap();
        assert!((d - 5e-3).abs() < 1e-12);
        assert!(matches!(
            tracking_time(&inside, 1.0),
            Err(Error::EventOutOfRange(_))
        ));
        // a short excursion into the band does not count
        let mut blip = vec![(1.0, 1.0); 5];
        blip.extend([(0.5, 1.0); 25]);
        assert_eq!(tracking_time(&series(&blip), 0.0).unwrap(), None);
    }

    #[test]
    fn oscillation_examples() {
        let flat = series(&[(0.8, 1.0); 10]);
        assert_eq!(ss_oscillation(&flat, (0.0, 9e-3)).unwrap(), 0.0);
        let wobble = series(&[(0.9, 1.0), (1.0, 1.0), (0.9, 1.0), (1.0, 1.0)]);
        assert!((ss_oscillation(&wobble, (0.0, 3e-3)).unwrap() - 10.0).abs() < 1e-9);
        assert!(matches!(
            ss_oscillation(&flat, (5e-3, 1e-3)),
            Err(Error::WindowInvalid(..))
        ));
        assert!(matches!(
            ss_oscillation(&flat, (0.0, 1.0)),
            Err(Error::WindowInvalid(..))
        ));
    }
}
