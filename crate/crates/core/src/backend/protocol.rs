//! Host/device line protocol.
//!
//! ASCII frames, one per line, `\n` terminated. The host sends one command
//! and waits for its response before sending the next.
//!
//! ```text
//! host -> device            device -> host
//! SETV <mV>                 OK
//! SETF <kHz>                OK
//! RUN <seed-hex> <N> <R>    VAL <16 hex digits> | ERR <code>
//! RST                       OK
//! ```
//!
//! Any command may also be answered with `ERR <code>`. A missing response is
//! detected by the host's timeout, not by the protocol.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    SetVoltage { mv: u32 },
    SetFrequency { khz: u32 },
    Run { seed: u64, n_items: u64, repetitions: u32 },
    /// Reserved; recovery semantics after a lockup are device specific.
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Response {
    Ok,
    Value(u64),
    Error(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed frame at byte {offset}: {reason}")]
pub struct ProtocolError {
    pub offset: usize,
    pub reason: &'static str,
}

impl ProtocolError {
    fn at(offset: usize, reason: &'static str) -> Self {
        Self { offset, reason }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::SetVoltage { mv } => write!(f, "SETV {mv}"),
            Command::SetFrequency { khz } => write!(f, "SETF {khz}"),
            Command::Run { seed, n_items, repetitions } => write!(f, "RUN {seed:016X} {n_items} {repetitions}"),
            Command::Reset => write!(f, "RST"),
        }
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Response::Ok => write!(f, "OK"),
            Response::Value(v) => write!(f, "VAL {v:016X}"),
            Response::Error(code) => write!(f, "ERR {code}"),
        }
    }
}

pub fn encode_command(cmd: &Command) -> Vec<u8> {
    format!("{cmd}\n").into_bytes()
}

pub fn encode_response(resp: &Response) -> Vec<u8> {
    format!("{resp}\n").into_bytes()
}

/// Splits a frame into its keyword and space-separated fields, each tagged
/// with its byte offset.
fn fields(frame: &[u8]) -> Result<Vec<(usize, &[u8])>, ProtocolError> {
    let body = match frame.iter().position(|&b| b == b'\n') {
        Some(end) if end + 1 == frame.len() => &frame[..end],
        Some(end) => return Err(ProtocolError::at(end + 1, "trailing bytes after newline")),
        None => return Err(ProtocolError::at(frame.len(), "missing newline terminator")),
    };
    if let Some(pos) = body.iter().position(|b| !(b.is_ascii_graphic() || *b == b' ')) {
        return Err(ProtocolError::at(pos, "non-printable byte"));
    }
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in body.iter().enumerate().chain(std::iter::once((body.len(), &b' '))) {
        if b == b' ' {
            if i == start {
                return Err(ProtocolError::at(i, "empty field"));
            }
            out.push((start, &body[start..i]));
            start = i + 1;
        }
    }
    Ok(out)
}

fn expect_arity(fields: &[(usize, &[u8])], n: usize, end: usize) -> Result<(), ProtocolError> {
    match fields.len().cmp(&n) {
        std::cmp::Ordering::Equal => Ok(()),
        std::cmp::Ordering::Less => Err(ProtocolError::at(end, "missing field")),
        std::cmp::Ordering::Greater => Err(ProtocolError::at(fields[n].0, "unexpected extra field")),
    }
}

fn parse_dec<T: std::str::FromStr>((offset, raw): (usize, &[u8])) -> Result<T, ProtocolError> {
    if !raw.iter().all(u8::is_ascii_digit) {
        return Err(ProtocolError::at(offset, "expected decimal digits"));
    }
    std::str::from_utf8(raw)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(ProtocolError::at(offset, "decimal value out of range"))
}

fn parse_hex((offset, raw): (usize, &[u8])) -> Result<u64, ProtocolError> {
    if raw.len() > 16 {
        return Err(ProtocolError::at(offset, "hex value longer than 16 digits"));
    }
    if let Some(bad) = raw.iter().position(|b| !b.is_ascii_hexdigit()) {
        return Err(ProtocolError::at(offset + bad, "expected hex digit"));
    }
    let s = std::str::from_utf8(raw).map_err(|_| ProtocolError::at(offset, "invalid utf-8"))?;
    u64::from_str_radix(s, 16).map_err(|_| ProtocolError::at(offset, "invalid hex value"))
}

pub fn decode_command(frame: &[u8]) -> Result<Command, ProtocolError> {
    let f = fields(frame)?;
    let end = frame.len() - 1;
    let (_, keyword) = f[0];
    match keyword {
        b"SETV" => {
            expect_arity(&f, 2, end)?;
            Ok(Command::SetVoltage { mv: parse_dec(f[1])? })
        }
        b"SETF" => {
            expect_arity(&f, 2, end)?;
            Ok(Command::SetFrequency { khz: parse_dec(f[1])? })
        }
        b"RUN" => {
            expect_arity(&f, 4, end)?;
            Ok(Command::Run { seed: parse_hex(f[1])?, n_items: parse_dec(f[2])?, repetitions: parse_dec(f[3])? })
        }
        b"RST" => {
            expect_arity(&f, 1, end)?;
            Ok(Command::Reset)
        }
        _ => Err(ProtocolError::at(0, "unknown command")),
    }
}

pub fn decode_response(frame: &[u8]) -> Result<Response, ProtocolError> {
    let f = fields(frame)?;
    let end = frame.len() - 1;
    match f[0].1 {
        b"OK" => {
            expect_arity(&f, 1, end)?;
            Ok(Response::Ok)
        }
        b"VAL" => {
            expect_arity(&f, 2, end)?;
            Ok(Response::Value(parse_hex(f[1])?))
        }
        b"ERR" => {
            expect_arity(&f, 2, end)?;
            Ok(Response::Error(parse_dec(f[1])?))
        }
        _ => Err(ProtocolError::at(0, "unknown response")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_examples() {
        assert_eq!(encode_command(&Command::SetVoltage { mv: 1100 }), b"SETV 1100\n");
        assert_eq!(encode_command(&Command::SetFrequency { khz: 200_000 }), b"SETF 200000\n");
        assert_eq!(
            encode_command(&Command::Run { seed: 1, n_items: 50_000, repetitions: 10 }),
            b"RUN 0000000000000001 50000 10\n"
        );
        assert_eq!(encode_response(&Response::Value(0xDEAD_BEEF)), b"VAL 00000000DEADBEEF\n");
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_response(b"VAL 00000000DEADBEEF\n"), Ok(Response::Value(0xDEAD_BEEF)));
        assert_eq!(decode_response(b"OK\n"), Ok(Response::Ok));
        assert_eq!(decode_response(b"ERR 7\n"), Ok(Response::Error(7)));
        assert_eq!(decode_command(b"RUN ff 10 2\n"), Ok(Command::Run { seed: 255, n_items: 10, repetitions: 2 }));
    }

    #[test]
    fn malformed_frames_report_offsets() {
        assert_eq!(decode_response(b"VAL xyz\n"), Err(ProtocolError::at(4, "expected hex digit")));
        assert_eq!(decode_response(b"VAL 12\n"), Ok(Response::Value(0x12)));
        assert_eq!(decode_response(b"VAL 1G\n").unwrap_err().offset, 5);
        assert_eq!(decode_response(b"VAL 1").unwrap_err().reason, "missing newline terminator");
        assert_eq!(decode_response(b"OK\nOK\n").unwrap_err().offset, 3);
        assert_eq!(decode_response(b"NOPE\n").unwrap_err().offset, 0);
        assert_eq!(decode_command(b"SETV\n").unwrap_err().reason, "missing field");
        assert_eq!(decode_command(b"SETV 1 2\n").unwrap_err().offset, 7);
        assert_eq!(decode_command(b"SETV  1\n").unwrap_err().reason, "empty field");
        assert_eq!(decode_command(b"SETV -1\n").unwrap_err().offset, 5);
        assert_eq!(decode_command(b"SETV 99999999999\n").unwrap_err().reason, "decimal value out of range");
        assert_eq!(decode_command(b"RUN 00000000000000001 1 1\n").unwrap_err().offset, 4);
        assert_eq!(decode_command(b"SETV 1\r\n").unwrap_err().offset, 6);
    }
}
