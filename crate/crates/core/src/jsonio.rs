//! JSON serialization with floats printed at 17 significant digits.
//!
//! 17 digits pin down every f64 uniquely, so files written here round-trip
//! bit-exactly and diff cleanly across runs.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;

use crate::error::Result;

struct G17Formatter;

impl Formatter for G17Formatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        // {:.16e} = one leading digit + 16 fractional digits = 17 significant.
        write!(writer, "{value:.16e}")
    }
}

pub fn to_string_g17<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, G17Formatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits utf8"))
}

pub fn to_writer_g17<W: io::Write, T: Serialize>(writer: W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, G17Formatter);
    value.serialize(&mut ser)?;
    Ok(())
}
