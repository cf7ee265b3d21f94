use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly sampled simulator output: one signal channel plus the stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub dt: f64,
    /// Name of the signal column (`V` for voltage, `r` for rate).
    pub channel: String,
    pub signal: Vec<f64>,
    pub stimulus: Vec<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.signal.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.signal.iter().all(|v| v.is_finite())
    }

    /// Leading part of the trace up to (excluding) time `t`.
    pub fn truncated(&self, t: f64) -> Trace {
        let n = ((t / self.dt).round() as usize).min(self.len());
        Trace { dt: self.dt, channel: self.channel.clone(), signal: self.signal[..n].to_vec(), stimulus: self.stimulus[..n].to_vec() }
    }

    /// CSV with columns `time,<channel>,stimulus`, full-precision decimals.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,{},stimulus", self.channel)?;
        for (i, (s, u)) in self.signal.iter().zip(&self.stimulus).enumerate() {
            writeln!(w, "{:?},{:?},{:?}", i as f64 * self.dt, s, u)?;
        }
        Ok(())
    }

    /// Parse the schema written by [`Trace::write_csv`]. Sampling must be uniform.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Trace> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty trace file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() != 3 || cols[0] != "time" || cols[2] != "stimulus" {
            return Err(Error::Parse(format!("unexpected trace header '{header}'")));
        }
        let channel = cols[1].to_string();
        let (mut t, mut signal, mut stimulus) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 columns", lineno + 2)));
            }
            t.push(vals[0]);
            signal.push(vals[1]);
            stimulus.push(vals[2]);
        }
        if t.len() < 2 {
            return Err(Error::Parse("trace needs at least two samples".into()));
        }
        let dt = t[1] - t[0];
        if !(dt > 0.0) {
            return Err(Error::Parse("time column must be increasing".into()));
        }
        for (i, w) in t.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0) {
                return Err(Error::Parse(format!("non-uniform sampling at row {}", i + 3)));
            }
        }
        Ok(Trace { dt, channel, signal, stimulus })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let t = Trace { dt: 0.025, channel: "V".into(), signal: vec![-70.0, -69.123_456_789_012_35, 12.5], stimulus: vec![0.0, 0.1, 0.2] };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Trace::read_csv(&buf[..]).unwrap();
        assert_eq!(back.signal, t.signal);
        assert_eq!(back.stimulus, t.stimulus);
        assert!((back.dt - t.dt).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_uniform_sampling() {
        let csv = "time,V,stimulus\n0,1,0\n1,1,0\n3,1,0\n";
        assert!(Trace::read_csv(csv.as_bytes()).is_err());
    }
}
