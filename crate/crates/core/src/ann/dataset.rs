use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::harness::rng::substream;

/// Number of loops the imitation controller is built for.
pub const N_LOOPS: usize = 10;
pub const N_INPUTS: usize = 35;
pub const N_OUTPUTS: usize = N_LOOPS;

/// Column names of the controller input vector, in order.
pub fn input_names() -> Vec<String> {
    let mut names = vec!["t_in".to_string()];
    names.extend((1..=N_LOOPS).map(|i| format!("t_out_{i}")));
    names.push("t_a".into());
    names.push("irr_geo".into());
    names.extend((1..=N_LOOPS).map(|i| format!("if_{i}")));
    names.push("t_out_mean".into());
    names.push("if_mean".into());
    names.extend((1..=N_LOOPS).map(|i| format!("v_{i}")));
    names
}

pub fn output_names() -> Vec<String> {
    (1..=N_LOOPS).map(|i| format!("v_next_{i}")).collect()
}

/// Controller input at one allocation tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub t_in: f64,
    pub t_out: Vec<f64>,
    pub t_a: f64,
    /// Direct irradiance times geometric efficiency, W/m².
    pub irradiance: f64,
    pub intercept: Vec<f64>,
    pub valves: Vec<f64>,
}

impl ControllerState {
    pub fn features(&self) -> Vec<f64> {
        let n = self.t_out.len() as f64;
        let mut x = Vec::with_capacity(N_INPUTS);
        x.push(self.t_in);
        x.extend_from_slice(&self.t_out);
        x.push(self.t_a);
        x.push(self.irradiance);
        x.extend_from_slice(&self.intercept);
        x.push(self.t_out.iter().sum::<f64>() / n);
        x.push(self.intercept.iter().sum::<f64>() / n);
        x.extend_from_slice(&self.valves);
        x
    }
}

/// Index sets of a 70/15/15 split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Controller samples recorded from closed-loop simulations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_in: usize,
    pub n_out: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub run_id: Vec<u32>,
    pub tick: Vec<u32>,
    pub split: Split,
    pub seed: u64,
}

impl Dataset {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            x: Vec::new(),
            y: Vec::new(),
            run_id: Vec::new(),
            tick: Vec::new(),
            split: Split::default(),
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.run_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.run_id.is_empty()
    }

    pub fn push(&mut self, run_id: u32, tick: u32, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != self.n_in || y.len() != self.n_out {
            return Err(Error::Shape {
                expected: self.n_in + self.n_out,
                got: x.len() + y.len(),
            });
        }
        self.x.extend_from_slice(x);
        self.y.extend_from_slice(y);
        self.run_id.push(run_id);
        self.tick.push(tick);
        Ok(())
    }

    pub fn append(&mut self, other: Dataset) -> Result<()> {
        if other.n_in != self.n_in || other.n_out != self.n_out {
            return Err(Error::Shape {
                expected: self.n_in,
                got: other.n_in,
            });
        }
        self.x.extend(other.x);
        self.y.extend(other.y);
        self.run_id.extend(other.run_id);
        self.tick.extend(other.tick);
        Ok(())
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_in..(i + 1) * self.n_in]
    }

    pub fn output(&self, i: usize) -> &[f64] {
        &self.y[i * self.n_out..(i + 1) * self.n_out]
    }

    /// Shuffle sample indices with `seed` and split them 70/15/15.
    pub fn shuffle_split(&mut self, seed: u64) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut substream(seed, "dataset-shuffle"));
        let n = idx.len();
        let n_train = (0.70 * n as f64).round() as usize;
        let n_val = ((0.15 * n as f64).round() as usize).min(n - n_train);
        self.split = Split {
            train: idx[..n_train].to_vec(),
            val: idx[n_train..n_train + n_val].to_vec(),
            test: idx[n_train + n_val..].to_vec(),
        };
        self.seed = seed;
    }

    /// Inputs and outputs of a subset, row-major.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(indices.len() * self.n_in);
        let mut y = Vec::with_capacity(indices.len() * self.n_out);
        for &i in indices {
            x.extend_from_slice(self.input(i));
            y.extend_from_slice(self.output(i));
        }
        (x, y)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = vec!["run_id".to_string(), "tick".to_string()];
        if self.n_in == N_INPUTS && self.n_out == N_OUTPUTS {
            header.extend(input_names());
            header.extend(output_names());
        } else {
            header.extend((0..self.n_in).map(|i| format!("x{i}")));
            header.extend((0..self.n_out).map(|i| format!("y{i}")));
        }
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for i in 0..self.len() {
            let mut row = vec![self.run_id[i].to_string(), self.tick[i].to_string()];
            row.extend(self.input(i).iter().map(|v| v.to_string()));
            row.extend(self.output(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read samples written by [`Dataset::write_csv`]; `n_out` trailing
    /// columns are outputs.
    pub fn read_csv(path: &Path, n_out: usize) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFiles(vec![path.to_path_buf()]));
        }
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let width = r.headers().map_err(|e| csv_error(path, e))?.len();
        if width < 2 + n_out + 1 {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                message: format!("{width} columns cannot hold {n_out} outputs"),
            });
        }
        let mut ds = Dataset::new(width - 2 - n_out, n_out);
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i).and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("column {} is not a number", i + 1),
                })
            };
            let run = parse(0)? as u32;
            let tick = parse(1)? as u32;
            let x: Vec<f64> = (2..2 + ds.n_in).map(parse).collect::<Result<_>>()?;
            let y: Vec<f64> = (2 + ds.n_in..width).map(parse).collect::<Result<_>>()?;
            ds.push(run, tick, &x, &y)?;
        }
        Ok(ds)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.into(),
            line,
            message: format!("{other:?}"),
        },
    }
}
