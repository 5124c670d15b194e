//! Drives `SerialBackend` against an in-memory device that speaks the line
//! protocol.

use std::collections::VecDeque;
use std::io::{self, Read, Write};

use marginscope::backend::protocol::{decode_command, encode_response, Command, Response};
use marginscope::backend::{Backend, BackendError, RunOutcome, RunRequest, SerialBackend};
use marginscope::sweep::{execute_plan, Outcome, StopRule, SweepPlan};
use marginscope::workloads::{inject_corruption, prng_run, PrngSpec, Workload};
use marginscope::OperatingPoint;

/// Fake device: correct below `error_khz`, one flipped bit from there up to
/// `lockup_khz`, silent at or above it.
struct FakeDevice {
    rx: Vec<u8>,
    tx: VecDeque<u8>,
    voltage_mv: u32,
    freq_khz: u32,
    error_khz: u32,
    lockup_khz: u32,
    frames: Vec<String>,
}

impl FakeDevice {
    fn new(error_khz: u32, lockup_khz: u32) -> Self {
        Self { rx: Vec::new(), tx: VecDeque::new(), voltage_mv: 0, freq_khz: 0, error_khz, lockup_khz, frames: Vec::new() }
    }

    fn handle(&mut self, frame: &[u8]) {
        self.frames.push(String::from_utf8_lossy(frame).trim_end().to_string());
        let resp = match decode_command(frame) {
            Err(_) => Some(Response::Error(1)),
            Ok(Command::SetVoltage { mv }) if mv > 1200 => Some(Response::Error(2)),
            Ok(Command::SetVoltage { mv }) => {
                self.voltage_mv = mv;
                Some(Response::Ok)
            }
            Ok(Command::SetFrequency { khz }) => {
                self.freq_khz = khz;
                Some(Response::Ok)
            }
            Ok(Command::Reset) => Some(Response::Ok),
            Ok(Command::Run { seed, n_items, .. }) => {
                let spec = PrngSpec::new(seed, n_items).unwrap();
                if self.freq_khz >= self.lockup_khz {
                    None
                } else if self.freq_khz >= self.error_khz {
                    Some(Response::Value(inject_corruption(&spec, n_items, 3).unwrap()))
                } else {
                    Some(Response::Value(prng_run(&spec)))
                }
            }
        };
        if let Some(r) = resp {
            self.tx.extend(encode_response(&r));
        }
    }
}

impl Write for FakeDevice {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        for &b in buf {
            self.rx.push(b);
            if b == b'\n' {
                let frame = std::mem::take(&mut self.rx);
                self.handle(&frame);
            }
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Read for FakeDevice {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.tx.is_empty() {
            return Err(io::ErrorKind::TimedOut.into());
        }
        let n = buf.len().min(self.tx.len());
        for (slot, b) in buf.iter_mut().zip(self.tx.drain(..n)) {
            *slot = b;
        }
        Ok(n)
    }
}

fn request(voltage_mv: u32, freq_khz: u32) -> RunRequest {
    let op = OperatingPoint::cluster(voltage_mv, freq_khz).unwrap();
    RunRequest::with_timeout_factor(op, Workload::Prng(PrngSpec::new(1, 1_000).unwrap()), 140, 3.0).unwrap()
}

#[test]
fn run_exchanges_the_expected_frames() {
    let backend = SerialBackend::new(FakeDevice::new(300_000, 400_000));
    let resp = backend.run(&request(1100, 200_000), 0).unwrap();
    assert_eq!(resp.outcome, RunOutcome::Value(prng_run(&PrngSpec::new(1, 1_000).unwrap())));
    assert_eq!(backend.into_inner().frames, ["SETV 1100", "SETF 200000", "RUN 0000000000000001 1000 1"]);
}

#[test]
fn silence_is_a_timeout() {
    let backend = SerialBackend::new(FakeDevice::new(300_000, 400_000));
    let req = request(1100, 400_000);
    let resp = backend.run(&req, 0).unwrap();
    assert_eq!(resp.outcome, RunOutcome::Timeout);
    assert_eq!(resp.elapsed_s, req.timeout_s());
}

#[test]
fn device_errors_surface() {
    let mut dev = FakeDevice::new(300_000, 400_000);
    dev.tx.extend(b"ERR 9\n");
    // The stale ERR frame answers SETV.
    let backend = SerialBackend::new(dev);
    assert!(matches!(backend.run(&request(1100, 200_000), 0), Err(BackendError::Device(9))));
}

#[test]
fn sweep_classifies_device_outcomes() {
    let backend = SerialBackend::new(FakeDevice::new(240_000, 260_000));
    let plan = SweepPlan {
        voltages_mv: vec![1100],
        start_freq_khz: 220_000,
        freq_step_khz: 10_000,
        ceiling_khz: 300_000,
        sizes: vec![500, 1_000],
        repetitions: 2,
        stop_rule: StopRule::StopOnUnresponsive,
        ..SweepPlan::default()
    };
    let records = execute_plan(&backend, &plan, 1).unwrap();
    let outcome_at = |f| records.iter().filter(|r| r.freq_khz() == f).map(|r| r.outcome).collect::<Vec<_>>();
    assert_eq!(outcome_at(230_000), vec![Outcome::Correct; 4]);
    assert_eq!(outcome_at(250_000), vec![Outcome::Error; 4]);
    assert_eq!(outcome_at(260_000), vec![Outcome::Lockup; 4]);
    assert!(outcome_at(270_000).is_empty(), "sweep stops once unresponsive");
}
