//! Shunt power traces.
//!
//! CSV layout: header `timestamp_us,current_ma,bus_mv`, one row per sample,
//! and the GPIO trigger edges as marker rows `TRIG,START` and `TRIG,END`.
//! Samples between the markers form the measurement window. An empty
//! `bus_mv` cell means the bus voltage was not sampled; the nominal supply
//! voltage is used for it.

use std::io::{Read, Write};

use thiserror::Error;

pub const TRACE_HEADER: [&str; 3] = ["timestamp_us", "current_ma", "bus_mv"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("fewer than two samples inside the trigger window")]
    EmptyWindow,
    #[error("timestamp at sample {index} does not increase")]
    NonMonotonicTimestamps { index: usize },
    #[error("missing trigger marker TRIG,{0}")]
    MissingTrigger(&'static str),
    #[error("trigger end precedes trigger start")]
    TriggerOrder,
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSample {
    pub timestamp_us: u64,
    pub current_ma: f64,
    pub bus_mv: Option<f64>,
}

impl PowerSample {
    pub fn power_w(&self, supply_mv: f64) -> f64 {
        self.current_ma / 1000.0 * self.bus_mv.unwrap_or(supply_mv) / 1000.0
    }
}

/// Ordered samples plus the trigger window `[start, end)` as sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    samples: Vec<PowerSample>,
    window: (usize, usize),
}

impl PowerTrace {
    pub fn new(samples: Vec<PowerSample>, window_start: usize, window_end: usize) -> Result<Self, TraceError> {
        if window_end < window_start || window_end > samples.len() {
            return Err(TraceError::TriggerOrder);
        }
        if let Some(i) = samples.windows(2).position(|w| w[1].timestamp_us <= w[0].timestamp_us) {
            return Err(TraceError::NonMonotonicTimestamps { index: i + 1 });
        }
        Ok(Self { samples, window: (window_start, window_end) })
    }

    /// Trace whose window spans every sample.
    pub fn triggered(samples: Vec<PowerSample>) -> Result<Self, TraceError> {
        let n = samples.len();
        Self::new(samples, 0, n)
    }

    pub fn samples(&self) -> &[PowerSample] {
        &self.samples
    }

    pub fn window(&self) -> &[PowerSample] {
        &self.samples[self.window.0..self.window.1]
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| TraceError::Parse { line: 1, message: e.to_string() })?;
        if header.iter().ne(TRACE_HEADER) {
            return Err(TraceError::Parse { line: 1, message: format!("expected header {}", TRACE_HEADER.join(",")) });
        }
        let mut samples = Vec::new();
        let (mut start, mut end) = (None, None);
        for row in rdr.records() {
            let row = row.map_err(|e| TraceError::Parse { line: 0, message: e.to_string() })?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let parse_err = |message: String| TraceError::Parse { line, message };
            if row.get(0) == Some("TRIG") {
                match row.get(1) {
                    Some("START") if start.is_none() => start = Some(samples.len()),
                    Some("END") if end.is_none() => end = Some(samples.len()),
                    other => return Err(parse_err(format!("unexpected trigger marker {other:?}"))),
                }
                continue;
            }
            if row.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, got {}", row.len())));
            }
            let timestamp_us = row[0].parse().map_err(|_| parse_err(format!("bad timestamp {:?}", &row[0])))?;
            let current_ma = row[1].parse().map_err(|_| parse_err(format!("bad current {:?}", &row[1])))?;
            let bus_mv = match &row[2] {
                "" => None,
                s => Some(s.parse().map_err(|_| parse_err(format!("bad bus voltage {s:?}")))?),
            };
            samples.push(PowerSample { timestamp_us, current_ma, bus_mv });
        }
        let start = start.ok_or(TraceError::MissingTrigger("START"))?;
        let end = end.ok_or(TraceError::MissingTrigger("END"))?;
        Self::new(samples, start, end)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        w.write_record(TRACE_HEADER)?;
        for (i, s) in self.samples.iter().enumerate() {
            if i == self.window.0 {
                w.write_record(["TRIG", "START"])?;
            }
            if i == self.window.1 {
                w.write_record(["TRIG", "END"])?;
            }
            let bus = s.bus_mv.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([s.timestamp_us.to_string(), s.current_ma.to_string(), bus])?;
        }
        if self.window.0 == self.samples.len() {
            w.write_record(["TRIG", "START"])?;
        }
        if self.window.1 == self.samples.len() {
            w.write_record(["TRIG", "END"])?;
        }
        w.flush()
    }
}

/// Streaming trapezoidal integrator over power samples.
#[derive(Debug, Clone, Default)]
pub struct PowerIntegrator {
    first_us: Option<u64>,
    last: Option<(u64, f64)>,
    /// W * us
    area: f64,
    count: usize,
}

impl PowerIntegrator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, timestamp_us: u64, power_w: f64) -> Result<(), TraceError> {
        if let Some((t0, p0)) = self.last {
            if timestamp_us <= t0 {
                return Err(TraceError::NonMonotonicTimestamps { index: self.count });
            }
            self.area += 0.5 * (p0 + power_w) * (timestamp_us - t0) as f64;
        } else {
            self.first_us = Some(timestamp_us);
        }
        self.last = Some((timestamp_us, power_w));
        self.count += 1;
        Ok(())
    }

    pub fn extend<'a>(&mut self, samples: impl IntoIterator<Item = &'a PowerSample>, supply_mv: f64) -> Result<(), TraceError> {
        samples.into_iter().try_for_each(|s| self.push(s.timestamp_us, s.power_w(supply_mv)))
    }

    /// Time-weighted average power over the samples seen so far.
    pub fn average_w(&self) -> Result<f64, TraceError> {
        match (self.first_us, self.last) {
            (Some(t0), Some((t1, _))) if self.count >= 2 => Ok(self.area / (t1 - t0) as f64),
            _ => Err(TraceError::EmptyWindow),
        }
    }

    pub fn duration_s(&self) -> f64 {
        match (self.first_us, self.last) {
            (Some(t0), Some((t1, _))) => (t1 - t0) as f64 * 1e-6,
            _ => 0.0,
        }
    }
}

/// Average power over the trigger window, trapezoid-weighted.
pub fn ingest_power_trace(trace: &PowerTrace, shunt_supply_mv: f64) -> Result<f64, TraceError> {
    let mut acc = PowerIntegrator::new();
    acc.extend(trace.window(), shunt_supply_mv)?;
    acc.average_w()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(t: u64, ma: f64, mv: f64) -> PowerSample {
        PowerSample { timestamp_us: t, current_ma: ma, bus_mv: Some(mv) }
    }

    #[test]
    fn constant_trace() {
        let samples = (0..10).map(|i| sample(i * 37 + 5, 100.0, 1000.0)).collect();
        let trace = PowerTrace::triggered(samples).unwrap();
        assert_relative_eq!(ingest_power_trace(&trace, 1000.0).unwrap(), 0.1, max_relative = 1e-12);
    }

    #[test]
    fn two_sample_mean() {
        let trace = PowerTrace::triggered(vec![sample(0, 50.0, 1000.0), sample(10, 150.0, 1000.0)]).unwrap();
        assert_relative_eq!(ingest_power_trace(&trace, 1000.0).unwrap(), 0.1, max_relative = 1e-12);
    }

    #[test]
    fn missing_bus_uses_supply() {
        let s = PowerSample { timestamp_us: 0, current_ma: 100.0, bus_mv: None };
        let trace = PowerTrace::triggered(vec![s, PowerSample { timestamp_us: 9, ..s }]).unwrap();
        assert_relative_eq!(ingest_power_trace(&trace, 1200.0).unwrap(), 0.12, max_relative = 1e-12);
    }

    #[test]
    fn error_paths() {
        let one = PowerTrace::triggered(vec![sample(0, 1.0, 1.0)]).unwrap();
        assert_eq!(ingest_power_trace(&one, 1000.0), Err(TraceError::EmptyWindow));
        assert_eq!(
            PowerTrace::triggered(vec![sample(5, 1.0, 1.0), sample(5, 1.0, 1.0)]),
            Err(TraceError::NonMonotonicTimestamps { index: 1 })
        );
        assert_eq!(PowerTrace::new(vec![sample(0, 1.0, 1.0)], 1, 0), Err(TraceError::TriggerOrder));
    }

    #[test]
    fn csv_window_markers() {
        let text = "timestamp_us,current_ma,bus_mv\n0,999,1000\nTRIG,START\n10,100,1000\n20,100,\n30,100,1000\nTRIG,END\n40,999,1000\n";
        let trace = PowerTrace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(trace.window().len(), 3);
        assert_relative_eq!(ingest_power_trace(&trace, 1000.0).unwrap(), 0.1, max_relative = 1e-12);

        let mut out = Vec::new();
        trace.write_csv(&mut out).unwrap();
        assert_eq!(PowerTrace::read_csv(out.as_slice()).unwrap(), trace);
    }

    #[test]
    fn csv_errors() {
        let no_end = "timestamp_us,current_ma,bus_mv\nTRIG,START\n10,100,1000\n";
        assert_eq!(PowerTrace::read_csv(no_end.as_bytes()), Err(TraceError::MissingTrigger("END")));
        let reversed = "timestamp_us,current_ma,bus_mv\n0,1,1\nTRIG,END\n10,100,1000\nTRIG,START\n";
        assert_eq!(PowerTrace::read_csv(reversed.as_bytes()), Err(TraceError::TriggerOrder));
        let bad = "timestamp_us,current_ma,bus_mv\nTRIG,START\n10,abc,1000\nTRIG,END\n";
        assert!(matches!(PowerTrace::read_csv(bad.as_bytes()), Err(TraceError::Parse { line: 3, .. })));
        let header = "t,i,v\nTRIG,START\nTRIG,END\n";
        assert!(matches!(PowerTrace::read_csv(header.as_bytes()), Err(TraceError::Parse { line: 1, .. })));
    }
}
