use std::io::{Read, Write};

use chrono::NaiveDate;

use super::{IncidentMapStack, CHANNELS};
use crate::error::{Error, Result};
use crate::ingest::CrimeType;

pub const STACK_MAGIC: [u8; 4] = *b"HSMS";
pub const STACK_VERSION: u32 = 1;

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")
}

/// Header: magic, version, p, days, start (days since 1970-01-01, i64),
/// channels; then all counts as little-endian u32 in `[day][row][col][ch]` order.
pub fn write_stack(mut sink: impl Write, stack: &IncidentMapStack) -> Result<()> {
    sink.write_all(&STACK_MAGIC)?;
    sink.write_all(&STACK_VERSION.to_le_bytes())?;
    sink.write_all(&(stack.p() as u32).to_le_bytes())?;
    sink.write_all(&(stack.days() as u32).to_le_bytes())?;
    sink.write_all(&(stack.start() - epoch()).num_days().to_le_bytes())?;
    sink.write_all(&(CHANNELS as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(stack.counts().len() * 4);
    for c in stack.counts() {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

fn read_u32(src: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    src.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_stack(mut source: impl Read) -> Result<IncidentMapStack> {
    let mut magic = [0u8; 4];
    source.read_exact(&mut magic).map_err(|_| Error::data("stack file too short"))?;
    if magic != STACK_MAGIC {
        return Err(Error::data("not an incident map stack (bad magic)"));
    }
    let version = read_u32(&mut source)?;
    if version != STACK_VERSION {
        return Err(Error::data(format!("unsupported stack version {version}")));
    }
    let p = read_u32(&mut source)? as usize;
    let days = read_u32(&mut source)? as usize;
    let mut b = [0u8; 8];
    source.read_exact(&mut b)?;
    let start = epoch() + chrono::Duration::days(i64::from_le_bytes(b));
    let channels = read_u32(&mut source)? as usize;
    if channels != CHANNELS {
        return Err(Error::data(format!("stack has {channels} channels, expected {CHANNELS}")));
    }
    let mut raw = Vec::new();
    source.read_to_end(&mut raw)?;
    let n = days * p * p * CHANNELS;
    if raw.len() != n * 4 {
        return Err(Error::data(format!("stack body holds {} bytes, expected {}", raw.len(), n * 4)));
    }
    let counts: Vec<u32> = raw.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let stack = IncidentMapStack { p, days, start, counts };
    if !stack.all_crimes_consistent() {
        return Err(Error::data("AllCrimes channel disagrees with the concrete channels"));
    }
    Ok(stack)
}

/// Debug export of the nonzero entries as `day,row,col,type,count`.
pub fn write_stack_csv(sink: impl Write, stack: &IncidentMapStack) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["day", "row", "col", "type", "count"])?;
    let p = stack.p();
    for (i, &c) in stack.counts().iter().enumerate() {
        if c == 0 {
            continue;
        }
        let ch = i % CHANNELS;
        let cell = i / CHANNELS;
        let (day, rc) = (cell / (p * p), cell % (p * p));
        let ty = CrimeType::from_channel(ch).expect("channel in range");
        w.write_record([day.to_string(), (rc / p).to_string(), (rc % p).to_string(), ty.name().to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
