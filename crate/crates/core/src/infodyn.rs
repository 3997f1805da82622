//! Novelty, transience and resonance of a sequence of topic distributions,
//! measured with windowed Jensen–Shannon divergence, and the overlapping
//! polynomial smoother applied to the resulting signals.

use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::linalg::PolynomialProjector;

pub const DEFAULT_WINDOW: usize = 12;
pub const DEFAULT_SPAN: usize = 56;
pub const DEFAULT_DEGREE: usize = 2;

const SUM_TOL: f64 = 1e-9;

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty".into()));
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidDistribution(format!("entry {v} is not a probability")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidDistribution(format!("sums to {total}")));
    }
    Ok(())
}

/// `Σ p_i log2(p_i / m_i)` over the support of `p`.
fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).log2())
        .sum()
}

/// Jensen–Shannon divergence in bits, in `[0, 1]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
    let d = 0.5 * (kl_to_mixture(p, &m) + kl_to_mixture(q, &m));
    Ok(d.clamp(0.0, 1.0))
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    Ok(())
}

/// Mean divergence of `series[t]` from each of its `window` predecessors.
pub fn novelty<S: AsRef<[f64]>>(series: &[S], t: usize, window: usize) -> Result<f64> {
    check_window(window)?;
    if t < window || t >= series.len() {
        return Err(Error::UndefinedPoint {
            what: "novelty",
            t,
            window,
        });
    }
    let here = series[t].as_ref();
    let mut total = 0.0;
    for j in 1..=window {
        total += jsd(here, series[t - j].as_ref())?;
    }
    Ok(total / window as f64)
}

/// Mean divergence of `series[t]` from each of its `window` successors.
pub fn transience<S: AsRef<[f64]>>(series: &[S], t: usize, window: usize) -> Result<f64> {
    check_window(window)?;
    if t + window >= series.len() {
        return Err(Error::UndefinedPoint {
            what: "transience",
            t,
            window,
        });
    }
    let here = series[t].as_ref();
    let mut total = 0.0;
    for j in 1..=window {
        total += jsd(here, series[t + j].as_ref())?;
    }
    Ok(total / window as f64)
}

/// Per-time-point signals. `None` marks points where a signal is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    pub window: usize,
    pub novelty: Vec<Option<f64>>,
    pub transience: Vec<Option<f64>>,
    pub resonance: Vec<Option<f64>>,
    pub novelty_smooth: Vec<Option<f64>>,
    pub resonance_smooth: Vec<Option<f64>>,
    /// Span used for smoothing, if smoothing was applied.
    pub span: Option<usize>,
}

impl SignalSeries {
    pub fn len(&self) -> usize {
        self.novelty.len()
    }

    pub fn is_empty(&self) -> bool {
        self.novelty.is_empty()
    }

    /// Smooths novelty and resonance independently over their defined runs.
    /// A signal whose defined run is shorter than `2·span + 1` stays
    /// unsmoothed; the returned list names those signals.
    pub fn smooth(&mut self, span: usize, degree: usize) -> Result<Vec<&'static str>> {
        if span == 0 {
            return Err(Error::invalid("span must be at least 1"));
        }
        let mut skipped = Vec::new();
        for (name, raw, out) in [
            ("novelty", &self.novelty, &mut self.novelty_smooth),
            ("resonance", &self.resonance, &mut self.resonance_smooth),
        ] {
            *out = vec![None; raw.len()];
            let Some(first) = raw.iter().position(Option::is_some) else {
                skipped.push(name);
                continue;
            };
            let run: Vec<f64> = raw[first..].iter().map_while(|v| *v).collect();
            if run.len() < 2 * span + 1 {
                skipped.push(name);
                continue;
            }
            for (i, v) in adaptive_filter(&run, span, degree)?.into_iter().enumerate() {
                out[first + i] = Some(v);
            }
        }
        self.span = Some(span);
        Ok(skipped)
    }

    /// CSV with columns `time_iso, novelty, transience, resonance,
    /// novelty_smooth, resonance_smooth`; undefined values are empty fields.
    pub fn write_csv(&self, path: impl AsRef<Path>, times: &[DateTime<Utc>]) -> Result<()> {
        let path = path.as_ref();
        if times.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: times.len(),
            });
        }
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record([
            "time_iso",
            "novelty",
            "transience",
            "resonance",
            "novelty_smooth",
            "resonance_smooth",
        ])
        .map_err(csv_err)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, t) in times.iter().enumerate() {
            w.write_record([
                t.to_rfc3339_opts(SecondsFormat::Secs, true),
                cell(self.novelty[i]),
                cell(self.transience[i]),
                cell(self.resonance[i]),
                cell(self.novelty_smooth[i]),
                cell(self.resonance_smooth[i]),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Raw novelty, transience and resonance for every row of `p_hat`
/// (time × topic).
pub fn resonance_series(p_hat: ArrayView2<'_, f64>, window: usize) -> Result<SignalSeries> {
    check_window(window)?;
    let rows: Vec<Vec<f64>> = p_hat.rows().into_iter().map(|r| r.to_vec()).collect();
    let len = rows.len();
    let required = 2 * window + 1;
    if len < required {
        return Err(Error::TooShort { required, got: len });
    }
    let mut nov = vec![None; len];
    let mut tra = vec![None; len];
    let mut res = vec![None; len];
    for t in 0..len {
        if t >= window {
            nov[t] = Some(novelty(&rows, t, window)?);
        }
        if t + window < len {
            tra[t] = Some(transience(&rows, t, window)?);
        }
        if let (Some(n), Some(tr)) = (nov[t], tra[t]) {
            res[t] = Some(n - tr);
        }
    }
    Ok(SignalSeries {
        window,
        novelty: nov,
        transience: tra,
        resonance: res,
        novelty_smooth: vec![None; len],
        resonance_smooth: vec![None; len],
        span: None,
    })
}

/// Overlapping-segment polynomial smoother.
///
/// Segments of `2·span + 1` points start every `span` points, so neighbours
/// share `span + 1` points; each segment gets its own least-squares
/// polynomial of `degree`. Inside an overlap the two fits are blended with
/// weights falling linearly from 1 to 0 across the overlap. When the length
/// is not `1 + m·span`, one extra segment is anchored at the end and the
/// blend uses triangular weights centred on each segment.
pub fn adaptive_filter(signal: &[f64], span: usize, degree: usize) -> Result<Vec<f64>> {
    if span == 0 {
        return Err(Error::invalid("span must be at least 1"));
    }
    let seg_len = 2 * span + 1;
    let len = signal.len();
    if len < seg_len {
        return Err(Error::TooShort {
            required: seg_len,
            got: len,
        });
    }
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * span)
        .take_while(|s| s + seg_len <= len)
        .collect();
    let last_start = len - seg_len;
    if *starts.last().expect("at least one segment") != last_start {
        starts.push(last_start);
    }
    let proj = PolynomialProjector::new(seg_len, degree);
    let fits: Vec<Vec<f64>> = starts
        .iter()
        .map(|&s| proj.fit(&signal[s..s + seg_len]))
        .collect();

    let first_center = starts[0] + span;
    let last_center = last_start + span;
    let out = (0..len)
        .map(|p| {
            if p <= first_center {
                return fits[0][p - starts[0]];
            }
            if p >= last_center {
                return fits[fits.len() - 1][p - last_start];
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for (&s, fit) in starts.iter().zip(&fits) {
                if p < s || p >= s + seg_len {
                    continue;
                }
                let c = s + span;
                let weight = 1.0 - (p.abs_diff(c) as f64) / span as f64;
                if weight > 0.0 {
                    num += weight * fit[p - s];
                    den += weight;
                }
            }
            num / den
        })
        .collect();
    Ok(out)
}
