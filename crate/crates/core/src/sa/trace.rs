use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Matrix, ProblemSpec};

use super::state::NetworkState;

pub const TRACE_HEADER: &str = "k,alpha,dist,obj,consensus,balance,state_norm";

/// Performance indexes at one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub alpha: f64,
    /// `‖X − X*‖` (absent without a reference solution).
    pub dist: Option<f64>,
    /// `Σ f_i(x_i)`.
    pub obj: f64,
    /// `‖(L̄ ⊗ I_m)Λ‖`.
    pub consensus: f64,
    /// `‖Σ_i (x_i − d_i)‖`.
    pub balance: f64,
    pub state_norm: f64,
    /// Tracked allocation components, in the order requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tracked: Vec<f64>,
}

impl TraceRecord {
    pub fn measure(
        k: usize,
        alpha: f64,
        state: &NetworkState,
        problem: &ProblemSpec,
        mean_laplacian: &Matrix,
        reference: Option<&Matrix>,
        track: &[(usize, usize)],
    ) -> Self {
        let balance = (0..problem.m())
            .map(|c| {
                (0..problem.n())
                    .map(|i| state.x[(i, c)] - problem.agents()[i].resource[c])
                    .sum::<f64>()
                    .powi(2)
            })
            .sum::<f64>()
            .sqrt();
        Self {
            k,
            alpha,
            dist: reference.map(|r| (&state.x - r).norm()),
            obj: problem.objective_value(&state.x),
            consensus: (mean_laplacian * &state.lambda).norm(),
            balance,
            state_norm: state.norm(),
            tracked: track.iter().map(|&(i, c)| state.x[(i, c)]).collect(),
        }
    }

    fn csv_row(&self) -> String {
        let dist = self.dist.map(|d| d.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.k, self.alpha, dist, self.obj, self.consensus, self.balance, self.state_norm
        )
    }
}

/// Metric series of one run: the initial record plus one record every `cadence`
/// iterations and at the final iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub cadence: usize,
    pub initial: TraceRecord,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().unwrap_or(&self.initial)
    }

    pub fn all(&self) -> impl Iterator<Item = &TraceRecord> {
        std::iter::once(&self.initial).chain(self.records.iter())
    }

    /// Writes the initial record and every cadence record under [`TRACE_HEADER`].
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in self.all() {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Writes tracked allocation columns as `k,<label>...`.
    pub fn write_tracked_csv<W: Write>(&self, mut w: W, track: &[(usize, usize)]) -> Result<()> {
        let labels: Vec<String> = track.iter().map(|(i, c)| format!("x_{}_{}", i + 1, c + 1)).collect();
        writeln!(w, "k,{}", labels.join(","))?;
        for r in self.all() {
            let vals: Vec<String> = r.tracked.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", r.k, vals.join(","))?;
        }
        Ok(())
    }

    /// Parses a CSV written by [`Trace::write_csv`]; the first row becomes the initial record.
    pub fn read_csv<R: BufRead>(r: R, cadence: usize) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if !header.starts_with(TRACE_HEADER) {
            return Err(Error::Config(format!("unexpected trace header `{header}`")));
        }
        let mut recs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 7 {
                return Err(Error::Config(format!("trace line {}: expected 7 fields", lineno + 2)));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::Config(format!("trace line {}: {e}", lineno + 2)))
            };
            recs.push(TraceRecord {
                k: f[0]
                    .parse()
                    .map_err(|e| Error::Config(format!("trace line {}: {e}", lineno + 2)))?,
                alpha: num(f[1])?,
                dist: if f[2].is_empty() { None } else { Some(num(f[2])?) },
                obj: num(f[3])?,
                consensus: num(f[4])?,
                balance: num(f[5])?,
                state_norm: num(f[6])?,
                tracked: Vec::new(),
            });
        }
        if recs.is_empty() {
            return Err(Error::Config("trace has no records".into()));
        }
        let initial = recs.remove(0);
        Ok(Self {
            cadence,
            initial,
            records: recs,
        })
    }
}

/// Entrywise arithmetic mean of traces with identical record layout, summed in slice order.
pub fn average_traces(traces: &[&Trace]) -> Option<Trace> {
    let first = traces.first()?;
    let count = traces.len() as f64;
    let avg = |pick: &dyn Fn(&Trace) -> &TraceRecord| -> TraceRecord {
        let base = pick(first);
        let mut out = base.clone();
        let mut dist = base.dist.map(|_| 0.0);
        out.obj = 0.0;
        out.consensus = 0.0;
        out.balance = 0.0;
        out.state_norm = 0.0;
        out.tracked.iter_mut().for_each(|v| *v = 0.0);
        for t in traces {
            let r = pick(t);
            if let (Some(acc), Some(d)) = (dist.as_mut(), r.dist) {
                *acc += d;
            }
            out.obj += r.obj;
            out.consensus += r.consensus;
            out.balance += r.balance;
            out.state_norm += r.state_norm;
            for (a, v) in out.tracked.iter_mut().zip(&r.tracked) {
                *a += v;
            }
        }
        out.dist = dist.map(|d| d / count);
        out.obj /= count;
        out.consensus /= count;
        out.balance /= count;
        out.state_norm /= count;
        out.tracked.iter_mut().for_each(|v| *v /= count);
        out
    };
    let initial = avg(&|t: &Trace| &t.initial);
    let records = (0..first.records.len())
        .map(|idx| avg(&|t: &Trace| &t.records[idx]))
        .collect();
    Some(Trace {
        cadence: first.cadence,
        initial,
        records,
    })
}
