use std::io::{ErrorKind, Read, Write};
use std::sync::Mutex;
use std::time::Instant;

use super::protocol::{decode_response, encode_command, Command, Response};
use super::{Backend, BackendError, RunOutcome, RunRequest, RunResponse};
use crate::workloads::Workload;

/// Host side of the line protocol over any byte stream.
///
/// The stream's read timeout is the lockup detector: a read that fails with
/// `TimedOut` or `WouldBlock` while waiting for a run result is reported as
/// [`RunOutcome::Timeout`]. Power is not metered over this link, so responses
/// carry `avg_power_w = 0`; pair runs with an ingested shunt trace instead.
///
/// Runs are strictly sequential; concurrent callers serialize on the port.
pub struct SerialBackend<P> {
    port: Mutex<P>,
}

impl<P: Read + Write + Send> SerialBackend<P> {
    pub fn new(port: P) -> Self {
        Self { port: Mutex::new(port) }
    }

    pub fn into_inner(self) -> P {
        self.port.into_inner().unwrap_or_else(|e| e.into_inner())
    }

    fn read_frame(port: &mut P) -> std::io::Result<Vec<u8>> {
        let mut frame = Vec::with_capacity(24);
        let mut byte = [0u8; 1];
        loop {
            match port.read(&mut byte) {
                Ok(0) => return Err(ErrorKind::UnexpectedEof.into()),
                Ok(_) => {
                    frame.push(byte[0]);
                    if byte[0] == b'\n' {
                        return Ok(frame);
                    }
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
    }

    fn transact(port: &mut P, cmd: &Command) -> Result<Option<Response>, BackendError> {
        port.write_all(&encode_command(cmd))?;
        port.flush()?;
        match Self::read_frame(port) {
            Ok(frame) => Ok(Some(decode_response(&frame)?)),
            Err(e) if matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn expect_ok(port: &mut P, cmd: &Command) -> Result<(), BackendError> {
        match Self::transact(port, cmd)? {
            Some(Response::Ok) => Ok(()),
            Some(Response::Error(code)) => Err(BackendError::Device(code)),
            Some(other) => Err(BackendError::UnexpectedResponse(other)),
            None => Err(std::io::Error::from(ErrorKind::TimedOut).into()),
        }
    }
}

impl<P: Read + Write + Send> Backend for SerialBackend<P> {
    fn run(&self, req: &RunRequest, _rng_seed: u64) -> Result<RunResponse, BackendError> {
        let spec = match req.workload() {
            Workload::Prng(spec) => *spec,
            Workload::Parallel(_) => return Err(BackendError::UnsupportedWorkload("parallel")),
        };
        let mut port = self.port.lock().unwrap_or_else(|e| e.into_inner());
        Self::expect_ok(&mut port, &Command::SetVoltage { mv: req.op().voltage_mv() })?;
        Self::expect_ok(&mut port, &Command::SetFrequency { khz: req.op().freq_khz() })?;

        let started = Instant::now();
        let run = Command::Run { seed: spec.seed(), n_items: spec.n_items(), repetitions: 1 };
        let outcome = match Self::transact(&mut port, &run)? {
            Some(Response::Value(v)) => RunOutcome::Value(v),
            Some(Response::Error(code)) => return Err(BackendError::Device(code)),
            Some(other) => return Err(BackendError::UnexpectedResponse(other)),
            None => RunOutcome::Timeout,
        };
        let elapsed_s = match outcome {
            RunOutcome::Timeout => req.timeout_s(),
            RunOutcome::Value(_) => started.elapsed().as_secs_f64(),
        };
        Ok(RunResponse { outcome, elapsed_s, avg_power_w: 0.0 })
    }
}
