//! JSON emission with full-precision floats.
//!
//! Every float in every output document is printed with 17 significant
//! digits (scientific notation), so parsing the text back reproduces the
//! exact bit pattern. serde_json turns non-finite floats into `null` before
//! the formatter sees them.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter, Serializer};

/// Wraps a formatter, overriding only how finite floats are written.
struct SciFloats<F>(F);

impl<F: Formatter> Formatter for SciFloats<F> {
    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.8e}")
    }

    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    // Structure handling stays the inner formatter's.
    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.0.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.0.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.0.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.0.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.0.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.0.end_object_value(writer)
    }
}

fn to_string_with<F: Formatter>(
    value: &impl Serialize,
    formatter: F,
) -> serde_json::Result<String> {
    let mut out = Vec::new();
    let mut ser = Serializer::with_formatter(&mut out, SciFloats(formatter));
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits utf-8"))
}

/// Two-space indented document, full-precision floats.
pub fn to_pretty_string(value: &impl Serialize) -> serde_json::Result<String> {
    to_string_with(value, PrettyFormatter::new())
}

/// One-line document, full-precision floats (manifest comment lines).
pub fn to_compact_string(value: &impl Serialize) -> serde_json::Result<String> {
    to_string_with(value, CompactFormatter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn floats_round_trip_exactly() {
        let values = vec![
            std::f64::consts::PI,
            1.9381387507616300,
            -0.33,
            1e-300,
            0.0,
        ];
        let text = to_compact_string(&values).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn integers_stay_plain() {
        let mut doc = BTreeMap::new();
        doc.insert("n", 42u64);
        assert_eq!(to_compact_string(&doc).unwrap(), r#"{"n":42}"#);
    }

    #[test]
    fn pretty_form_indents_and_parses() {
        let doc = serde_json::json!({"a": [1.5, 2.5], "b": {"c": 0.1}});
        let text = to_pretty_string(&doc).unwrap();
        assert!(text.contains("\n  \"a\": [\n"));
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["b"]["c"].as_f64().unwrap(), 0.1);
    }

    #[test]
    fn non_finite_becomes_null() {
        let text = to_compact_string(&vec![f64::NAN, f64::INFINITY]).unwrap();
        assert_eq!(text, "[null,null]");
    }
}
