use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::model::OperatingPoint;

pub const RECORD_HEADER: [&str; 7] = ["voltage_mv", "freq_khz", "n_items", "rep", "outcome", "elapsed_s", "energy_j"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Correct,
    Error,
    Lockup,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Correct => "correct",
            Outcome::Error => "error",
            Outcome::Lockup => "lockup",
        })
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "correct" => Ok(Outcome::Correct),
            "error" => Ok(Outcome::Error),
            "lockup" => Ok(Outcome::Lockup),
            other => Err(format!("unknown outcome {other:?}")),
        }
    }
}

/// One classified run.
#[derive(Debug, Clone, PartialEq)]
pub struct TestRecord {
    pub op: OperatingPoint,
    pub n_items: u64,
    pub repetition: u32,
    pub outcome: Outcome,
    pub elapsed_s: f64,
    pub energy_j: f64,
    /// Value the run reported; `None` on lockup and for records read back
    /// from CSV.
    pub observed: Option<u64>,
}

impl TestRecord {
    pub fn voltage_mv(&self) -> u32 {
        self.op.voltage_mv()
    }

    pub fn freq_khz(&self) -> u32 {
        self.op.freq_khz()
    }
}

pub fn write_records_csv<W: Write>(writer: W, records: &[TestRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.voltage_mv().to_string(),
            r.freq_khz().to_string(),
            r.n_items.to_string(),
            r.repetition.to_string(),
            r.outcome.to_string(),
            r.elapsed_s.to_string(),
            r.energy_j.to_string(),
        ])?;
    }
    w.flush()
}

/// Reads records written by [`write_records_csv`]. Lines starting with `#`
/// are ignored.
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<TestRecord>, String> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header = rdr.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(RECORD_HEADER) {
        return Err(format!("expected header {}", RECORD_HEADER.join(",")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<&str, String> { row.get(i).ok_or_else(|| format!("line {line}: missing field {i}")) };
        fn num<T: FromStr>(s: &str, line: u64, name: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("line {line}: bad {name} {s:?}"))
        }
        let op = OperatingPoint::cluster(num(field(0)?, line, "voltage_mv")?, num(field(1)?, line, "freq_khz")?)
            .map_err(|e| format!("line {line}: {e}"))?;
        out.push(TestRecord {
            op,
            n_items: num(field(2)?, line, "n_items")?,
            repetition: num(field(3)?, line, "rep")?,
            outcome: field(4)?.parse().map_err(|e| format!("line {line}: {e}"))?,
            elapsed_s: num(field(5)?, line, "elapsed_s")?,
            energy_j: num(field(6)?, line, "energy_j")?,
            observed: None,
        });
    }
    Ok(out)
}
