//! CSV and JSON interchange formats.
//!
//! The observation CSV is the lingua franca between the simulator, the
//! fitter, and the collapse analyzer:
//!
//! ```text
//! direction,data_size_millions,sampling_ratio,eval_cross_entropy
//! ```
//!
//! Lines starting with `#` are comments (output files carry their run
//! manifest in one). All floating-point output uses 17 significant digits so
//! values round-trip exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dpl::DirectionSpec;
use crate::error::{Error, Result};
use crate::pareto::SweepPoint;
use crate::scalar::Scalar;

/// One measured point: a direction at a sampling ratio with its observed
/// evaluation cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation<S> {
    pub direction: String,
    /// Millions of training examples behind the direction in this run.
    pub data_size: S,
    /// The direction's sampling ratio, in the open `(0, 1)`.
    pub sampling_ratio: S,
    /// Observed cross-entropy in nats.
    pub eval_loss: S,
}

impl<S: Scalar> Observation<S> {
    /// Builds a validated observation.
    pub fn new(
        direction: impl Into<String>,
        data_size: S,
        sampling_ratio: S,
        eval_loss: S,
    ) -> Result<Self> {
        let obs = Observation {
            direction: direction.into(),
            data_size,
            sampling_ratio,
            eval_loss,
        };
        obs.validate()?;
        Ok(obs)
    }

    fn validate(&self) -> Result<()> {
        if !(self.data_size.is_finite() && self.data_size > S::zero()) {
            return Err(Error::domain(format!(
                "data size must be positive, got {}",
                self.data_size
            )));
        }
        if !(self.sampling_ratio.is_finite()
            && self.sampling_ratio > S::zero()
            && self.sampling_ratio < S::one())
        {
            return Err(Error::domain(format!(
                "sampling ratio must lie in (0, 1), got {}",
                self.sampling_ratio
            )));
        }
        if !self.eval_loss.is_finite() {
            return Err(Error::domain("eval loss must be finite"));
        }
        Ok(())
    }
}

/// The exact observation-CSV header.
pub const OBSERVATION_HEADER: [&str; 4] = [
    "direction",
    "data_size_millions",
    "sampling_ratio",
    "eval_cross_entropy",
];

/// Formats one float with 17 significant digits (round-trip exact for f64).
pub fn format_float(value: f64) -> String {
    if value.is_finite() {
        format!("{value:.16e}")
    } else {
        // Does not occur under the library's invariants, but never emit
        // text the readers cannot parse back.
        format!("{value}")
    }
}

/// Reads observations from CSV text. Errors carry 1-based line numbers.
pub fn read_observations<S: Scalar, R: Read>(reader: R) -> Result<Vec<Observation<S>>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = csv_reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyInput("no observations".into()));
    }
    let got: Vec<&str> = headers.iter().collect();
    if got != OBSERVATION_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header `{}`, got `{}`",
                OBSERVATION_HEADER.join(","),
                got.join(",")
            ),
        });
    }

    let mut rows = Vec::new();
    let mut iter = csv_reader.records();
    loop {
        let line = iter.reader().position().line();
        let record = match iter.next() {
            None => break,
            Some(Ok(record)) => record,
            Some(Err(e)) => {
                return Err(Error::Parse {
                    line,
                    message: e.to_string(),
                })
            }
        };
        if record.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let parse = |idx: usize, what: &str| -> Result<S> {
            let text = &record[idx];
            let value: f64 = text.parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid {what} `{text}`"),
            })?;
            Ok(S::from_f64c(value))
        };
        let obs = Observation::new(
            record[0].to_string(),
            parse(1, "data_size_millions")?,
            parse(2, "sampling_ratio")?,
            parse(3, "eval_cross_entropy")?,
        )
        .map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        rows.push(obs);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("no observations".into()));
    }
    Ok(rows)
}

/// Reads observations from a CSV file.
pub fn read_observations_path<S: Scalar>(path: impl AsRef<Path>) -> Result<Vec<Observation<S>>> {
    let file = std::fs::File::open(path)?;
    read_observations(std::io::BufReader::new(file))
}

/// Writes observations as CSV. `comment` lines (the run manifest) go first,
/// prefixed with `# `.
pub fn write_observations<S: Scalar, W: Write>(
    mut writer: W,
    observations: &[Observation<S>],
    comment: Option<&str>,
) -> Result<()> {
    if let Some(text) = comment {
        for line in text.lines() {
            writeln!(writer, "# {line}")?;
        }
    }
    writeln!(writer, "{}", OBSERVATION_HEADER.join(","))?;
    for obs in observations {
        writeln!(
            writer,
            "{},{},{},{}",
            obs.direction,
            format_float(obs.data_size.to_f64c()),
            format_float(obs.sampling_ratio.to_f64c()),
            format_float(obs.eval_loss.to_f64c()),
        )?;
    }
    Ok(())
}

/// JSON form of a trade-off sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepDoc<S> {
    /// Direction names aligned with each point's entries, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<String>>,
    pub points: Vec<SweepPoint<S>>,
}

/// Reads the `{points: [{ratios, losses}]}` sweep form.
pub fn read_sweep_json<S: Scalar, R: Read>(reader: R) -> Result<SweepDoc<S>>
where
    S: serde::de::DeserializeOwned,
{
    Ok(serde_json::from_reader(reader)?)
}

/// Regroups observation rows into sweep points.
///
/// Rows are emitted run by run, so a direction name repeating marks the start
/// of a new point. Every point must cover the same direction set, and its
/// ratios must sum to 1 within 1e-6.
pub fn sweep_from_observations<S: Scalar>(
    observations: &[Observation<S>],
) -> Result<(Vec<String>, Vec<SweepPoint<S>>)> {
    if observations.is_empty() {
        return Err(Error::EmptyInput("no observations".into()));
    }
    let mut directions: Vec<String> = Vec::new();
    let mut points: Vec<SweepPoint<S>> = Vec::new();
    let mut current: Vec<(String, S, S)> = Vec::new();

    let flush = |current: &mut Vec<(String, S, S)>,
                 directions: &mut Vec<String>,
                 points: &mut Vec<SweepPoint<S>>|
     -> Result<()> {
        if current.is_empty() {
            return Ok(());
        }
        let names: Vec<String> = current.iter().map(|(n, _, _)| n.clone()).collect();
        if directions.is_empty() {
            *directions = names;
        } else if *directions != names {
            return Err(Error::domain(format!(
                "sweep point #{} covers directions [{}], expected [{}]",
                points.len() + 1,
                names.join(", "),
                directions.join(", ")
            )));
        }
        let ratios: Vec<S> = current.iter().map(|(_, r, _)| *r).collect();
        let losses: Vec<S> = current.iter().map(|(_, _, l)| *l).collect();
        let total: S = ratios.iter().copied().sum();
        if (total - S::one()).abs() > S::from_f64c(1e-6) {
            return Err(Error::domain(format!(
                "sweep point #{} ratios sum to {total}, expected 1",
                points.len() + 1
            )));
        }
        points.push(SweepPoint { ratios, losses });
        current.clear();
        Ok(())
    };

    for obs in observations {
        if current.iter().any(|(n, _, _)| *n == obs.direction) {
            flush(&mut current, &mut directions, &mut points)?;
        }
        current.push((obs.direction.clone(), obs.sampling_ratio, obs.eval_loss));
    }
    flush(&mut current, &mut directions, &mut points)?;
    Ok((directions, points))
}

/// Reads a `[{name, data_size_millions}]` directions document.
pub fn read_directions_json<S: Scalar, R: Read>(reader: R) -> Result<Vec<DirectionSpec<S>>>
where
    S: serde::de::DeserializeOwned,
{
    let directions: Vec<DirectionSpec<S>> = serde_json::from_reader(reader)?;
    if directions.is_empty() {
        return Err(Error::EmptyInput("no directions".into()));
    }
    for (i, dir) in directions.iter().enumerate() {
        if !(dir.data_size.is_finite() && dir.data_size > S::zero()) {
            return Err(Error::domain(format!(
                "direction `{}` has non-positive data size",
                dir.name
            )));
        }
        if directions[..i].iter().any(|d| d.name == dir.name) {
            return Err(Error::domain(format!(
                "duplicate direction name `{}`",
                dir.name
            )));
        }
    }
    Ok(directions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "\
direction,data_size_millions,sampling_ratio,eval_cross_entropy
en-fr,10,0.1,2.31
en-fr,10,0.5,1.94
en-ro,0.26,0.9,2.88
";

    #[test]
    fn reads_well_formed_csv() {
        let rows: Vec<Observation<f64>> = read_observations(SAMPLE.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].direction, "en-fr");
        assert_eq!(rows[0].data_size, 10.0);
        assert_eq!(rows[2].sampling_ratio, 0.9);
    }

    #[test]
    fn skips_comment_lines() {
        let text = format!("# manifest: {{\"command\":\"simulate\"}}\n{SAMPLE}");
        let rows: Vec<Observation<f64>> = read_observations(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
    }

    #[test]
    fn empty_inputs_are_named() {
        let err = read_observations::<f64, _>("".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("no observations"));
        let header_only = "direction,data_size_millions,sampling_ratio,eval_cross_entropy\n";
        let err = read_observations::<f64, _>(header_only.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("no observations"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "direction,data_size_millions,sampling_ratio,eval_cross_entropy\n\
                   en-fr,10,0.5,1.94\n\
                   en-fr,10,not-a-number,2.0\n";
        match read_observations::<f64, _>(bad.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("sampling_ratio"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_header = "direction,size,ratio,loss\nx,1,0.5,2.0\n";
        match read_observations::<f64, _>(bad_header.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn domain_violations_in_rows_are_parse_errors() {
        let bad = "direction,data_size_millions,sampling_ratio,eval_cross_entropy\n\
                   en-fr,10,1.5,2.0\n";
        match read_observations::<f64, _>(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn write_read_round_trip_preserves_values() {
        let rows = vec![
            Observation::new("en-fr", 10.0, 0.123456789012345678, 1.9381387507616300).unwrap(),
            Observation::new("en-ro", 0.26, 0.9, std::f64::consts::PI).unwrap(),
        ];
        let mut buffer = Vec::new();
        write_observations(&mut buffer, &rows, Some("manifest: {}")).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        assert!(text.starts_with("# manifest: {}\n"));
        let back: Vec<Observation<f64>> = read_observations(text.as_bytes()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn sweep_grouping_follows_direction_repeats() {
        let text = "direction,data_size_millions,sampling_ratio,eval_cross_entropy\n\
                    hi,0.01,0.1,0.03\n\
                    lo,0.0002,0.9,0.08\n\
                    hi,0.01,0.5,0.029\n\
                    lo,0.0002,0.5,0.05\n\
                    hi,0.01,0.9,0.028\n\
                    lo,0.0002,0.1,0.055\n";
        let rows: Vec<Observation<f64>> = read_observations(text.as_bytes()).unwrap();
        let (directions, points) = sweep_from_observations(&rows).unwrap();
        assert_eq!(directions, vec!["hi".to_string(), "lo".to_string()]);
        assert_eq!(points.len(), 3);
        assert_eq!(points[1].ratios, vec![0.5, 0.5]);
        assert_eq!(points[2].losses, vec![0.028, 0.055]);
    }

    #[test]
    fn sweep_grouping_rejects_off_simplex_points() {
        let rows = vec![
            Observation::<f64>::new("hi", 1.0, 0.3, 1.0).unwrap(),
            Observation::new("lo", 1.0, 0.3, 1.0).unwrap(),
        ];
        assert!(sweep_from_observations(&rows).is_err());
    }

    #[test]
    fn directions_json_round_trip() {
        let text = r#"[{"name":"en-fr","data_size_millions":10.0},{"name":"en-ro","data_size_millions":0.26}]"#;
        let dirs: Vec<DirectionSpec<f64>> = read_directions_json(text.as_bytes()).unwrap();
        assert_eq!(dirs.len(), 2);
        assert_eq!(dirs[1].data_size, 0.26);
        let dup = r#"[{"name":"a","data_size_millions":1.0},{"name":"a","data_size_millions":2.0}]"#;
        assert!(read_directions_json::<f64, _>(dup.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn float_formatting_round_trips(bits in any::<u64>()) {
            let value = f64::from_bits(bits);
            prop_assume!(value.is_finite());
            let text = format_float(value);
            let back: f64 = text.parse().unwrap();
            prop_assert_eq!(back.to_bits(), value.to_bits());
        }
    }
}
