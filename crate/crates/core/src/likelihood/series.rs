//! Equally spaced observations of a diffusion.

use std::io::{Read, Write};
use std::path::Path;

use super::LikelihoodError;
use crate::expansion::ModelSpec;

/// Relative tolerance on the spacing of the time column.
pub const SPACING_TOLERANCE: f64 = 1e-9;

/// States `x(0), x(Δ), .., x(nΔ)` with a start time `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    delta: f64,
    t0: f64,
    states: Vec<Vec<f64>>,
}

impl ObservationSeries {
    pub fn new(delta: f64, states: Vec<Vec<f64>>) -> Result<Self, LikelihoodError> {
        Self::with_start(0.0, delta, states)
    }

    pub fn with_start(t0: f64, delta: f64, states: Vec<Vec<f64>>) -> Result<Self, LikelihoodError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(LikelihoodError::Data(format!("sampling interval must be positive, got {delta}")));
        }
        if states.len() < 2 {
            return Err(LikelihoodError::Data("need at least two observations".into()));
        }
        let m = states[0].len();
        if m == 0 {
            return Err(LikelihoodError::Data("observations have no coordinates".into()));
        }
        for (i, s) in states.iter().enumerate() {
            if s.len() != m {
                return Err(LikelihoodError::Data(format!(
                    "observation {i} has {} coordinates, expected {m}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(LikelihoodError::Data(format!("observation {i} is not finite")));
            }
        }
        Ok(ObservationSeries { delta, t0, states })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn start_time(&self) -> f64 {
        self.t0
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Number of transitions `n`.
    pub fn transitions(&self) -> usize {
        self.states.len() - 1
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    /// `(x((i-1)Δ), x(iΔ))` for `i = 1..=n`.
    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.states.windows(2).map(|w| (w[0].as_slice(), w[1].as_slice()))
    }

    /// Fails unless the series fits the model and every state lies in its
    /// state space.
    pub fn check_model(&self, model: &ModelSpec) -> Result<(), LikelihoodError> {
        if self.dim() != model.dim {
            return Err(LikelihoodError::Data(format!(
                "series has {} coordinates but model `{}` has {}",
                self.dim(),
                model.name,
                model.dim
            )));
        }
        if let Some(i) = self.states.iter().position(|s| !model.in_state_space(s)) {
            return Err(LikelihoodError::Data(format!(
                "observation {i} ({:?}) lies outside the state space of `{}`",
                self.states[i], model.name
            )));
        }
        Ok(())
    }

    /// Appends `other`, which must start where this series ends.
    pub fn concat(&self, other: &ObservationSeries) -> Result<ObservationSeries, LikelihoodError> {
        if (self.delta - other.delta).abs() > SPACING_TOLERANCE * self.delta {
            return Err(LikelihoodError::Data("series have different sampling intervals".into()));
        }
        if self.states.last() != other.states.first() {
            return Err(LikelihoodError::Data("second series does not start at the end of the first".into()));
        }
        let mut states = self.states.clone();
        states.extend_from_slice(&other.states[1..]);
        ObservationSeries::with_start(self.t0, self.delta, states)
    }

    /// Reads a CSV with header `t,x1,..,xm` and equally spaced, increasing
    /// times.
    pub fn from_csv_reader(reader: impl Read, source: &str) -> Result<Self, LikelihoodError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| csv_error(source, &e))?
            .clone();
        let m = header.len().saturating_sub(1);
        let ok = header.len() >= 2
            && &header[0] == "t"
            && (1..=m).all(|i| header[i] == format!("x{i}"));
        if !ok {
            return Err(LikelihoodError::Data(format!(
                "{source}:1: header must be `t,x1,..,xm`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(source, &e))?;
            let line = rec.position().map_or(row + 2, |p| p.line() as usize);
            let mut values = Vec::with_capacity(m + 1);
            for (col, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    LikelihoodError::Data(format!(
                        "{source}:{line}: column {} is not a number: `{field}`",
                        col + 1
                    ))
                })?;
                values.push(v);
            }
            times.push(values[0]);
            states.push(values[1..].to_vec());
        }
        if times.len() < 2 {
            return Err(LikelihoodError::Data(format!("{source}: need at least two rows")));
        }
        let first = times[1] - times[0];
        if !(first > 0.0) {
            return Err(LikelihoodError::Data(format!("{source}:3: times must increase")));
        }
        for (i, w) in times.windows(2).enumerate() {
            let d = w[1] - w[0];
            if (d - first).abs() > SPACING_TOLERANCE * first {
                return Err(LikelihoodError::Data(format!(
                    "{source}:{}: time step {d} differs from the first step {first}",
                    i + 3
                )));
            }
        }
        let delta = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        ObservationSeries::with_start(times[0], delta, states)
    }

    pub fn from_csv(path: &Path) -> Result<Self, LikelihoodError> {
        let file = std::fs::File::open(path)
            .map_err(|e| LikelihoodError::Data(format!("cannot open {}: {e}", path.display())))?;
        Self::from_csv_reader(file, &path.display().to_string())
    }

    /// Writes `t,x1,..,xm` rows; values use the shortest round-trip format,
/// with an exponent for very small or large magnitudes.
    pub fn write_csv(&self, writer: impl Write) -> Result<(), LikelihoodError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x{i}")));
        w.write_record(&header).map_err(|e| csv_error("output", &e))?;
        for (i, s) in self.states.iter().enumerate() {
            let mut rec = vec![format!("{:?}", self.t0 + i as f64 * self.delta)];
            rec.extend(s.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(|e| csv_error("output", &e))?;
        }
        w.flush()
            .map_err(|e| LikelihoodError::Data(format!("cannot write series: {e}")))?;
        Ok(())
    }
}

fn csv_error(source: &str, e: &csv::Error) -> LikelihoodError {
    match e.position() {
        Some(p) => LikelihoodError::Data(format!("{source}:{}: {e}", p.line())),
        None => LikelihoodError::Data(format!("{source}: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let s = ObservationSeries::new(0.25, vec![vec![1.0, 2.0], vec![1.5, -0.125], vec![0.1, 0.2]]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,x2\n0.0,1.0,2.0\n0.25,1.5,-0.125\n"));
        let back = ObservationSeries::from_csv_reader(text.as_bytes(), "mem").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn csv_rejections() {
        let bad_header = "time,x1\n0,1\n1,2\n";
        assert!(ObservationSeries::from_csv_reader(bad_header.as_bytes(), "a").is_err());
        let uneven = "t,x1\n0,1\n1,2\n2.5,3\n";
        let err = ObservationSeries::from_csv_reader(uneven.as_bytes(), "b").unwrap_err();
        assert!(err.to_string().contains("b:4"), "{err}");
        let junk = "t,x1\n0,1\n1,abc\n";
        let err = ObservationSeries::from_csv_reader(junk.as_bytes(), "c").unwrap_err();
        assert!(err.to_string().contains("c:3"), "{err}");
        let short = "t,x1\n0,1\n";
        assert!(ObservationSeries::from_csv_reader(short.as_bytes(), "d").is_err());
    }

    #[test]
    fn concatenation_requires_matching_ends() {
        let a = ObservationSeries::new(0.5, vec![vec![1.0], vec![2.0]]).unwrap();
        let b = ObservationSeries::new(0.5, vec![vec![2.0], vec![3.0]]).unwrap();
        let ab = a.concat(&b).unwrap();
        assert_eq!(ab.transitions(), 2);
        assert!(b.concat(&a).is_err());
    }
}
