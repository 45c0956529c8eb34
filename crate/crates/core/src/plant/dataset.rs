use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PlantInput, PlantState, INPUT_DIM, INPUT_NAMES, STATE_DIM, STATE_NAMES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Sampling period, h.
    pub dt: f64,
    pub seed: Option<u64>,
    pub scenario: String,
    /// Sample indices at which the fraction guard had to clamp the state.
    pub clamp_events: Vec<usize>,
}

impl DatasetMeta {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            seed: None,
            scenario: String::new(),
            clamp_events: Vec::new(),
        }
    }
}

/// Uniformly sampled plant trajectory. `inputs[k]` is applied over
/// `[t_k, t_{k+1})`, so there is one input fewer than states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub states: Vec<PlantState>,
    pub inputs: Vec<PlantInput>,
    pub meta: DatasetMeta,
}

impl TrajectoryDataset {
    pub fn new(states: Vec<PlantState>, inputs: Vec<PlantInput>, meta: DatasetMeta) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one state".into()));
        }
        if inputs.len() + 1 != states.len() {
            return Err(Error::dim("dataset inputs", states.len() - 1, inputs.len()));
        }
        if !(meta.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt {} must be positive", meta.dt)));
        }
        Ok(Self { states, inputs, meta })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.meta.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.meta.dt
    }

    pub fn timestamps(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    /// Samples `[start, end)`; the input sequence is truncated to match.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "invalid dataset slice {start}..{end} of {}",
                self.len()
            )));
        }
        Self::new(
            self.states[start..end].to_vec(),
            self.inputs[start..end - 1].to_vec(),
            DatasetMeta {
                clamp_events: self
                    .meta
                    .clamp_events
                    .iter()
                    .filter(|&&k| k >= start && k < end)
                    .map(|k| k - start)
                    .collect(),
                ..self.meta.clone()
            },
        )
    }

    /// Chronological split: the first `fraction` of samples for training.
    pub fn split(&self, fraction: f64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split fraction {fraction} must be in (0, 1)"
            )));
        }
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let cut = cut.clamp(2, self.len().saturating_sub(2));
        Ok((self.slice(0, cut)?, self.slice(cut, self.len())?))
    }

    /// `t, x1..x9, u1..u3`; the final row leaves the input cells empty.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(STATE_NAMES.iter().map(|s| s.to_string()));
        header.extend(INPUT_NAMES.iter().map(|s| s.to_string()));
        wr.write_record(&header)?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = Vec::with_capacity(1 + STATE_DIM + INPUT_DIM);
            row.push(self.time(k).to_string());
            row.extend(x.0.iter().map(|v| v.to_string()));
            match self.inputs.get(k) {
                Some(u) => row.extend(u.0.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), INPUT_DIM)),
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, meta: DatasetMeta) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number `{s}` in dataset: {e}")))
        };
        let mut saw_missing_input = false;
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != 1 + STATE_DIM + INPUT_DIM {
                return Err(Error::dim("dataset csv row", 1 + STATE_DIM + INPUT_DIM, rec.len()));
            }
            if saw_missing_input {
                return Err(Error::Config("input cells missing before the last row".into()));
            }
            let mut x = [0.0; STATE_DIM];
            for i in 0..STATE_DIM {
                x[i] = parse(&rec[1 + i])?;
            }
            states.push(PlantState(x));
            if rec[1 + STATE_DIM].trim().is_empty() {
                saw_missing_input = true;
            } else {
                let mut u = [0.0; INPUT_DIM];
                for i in 0..INPUT_DIM {
                    u[i] = parse(&rec[1 + STATE_DIM + i])?;
                }
                inputs.push(PlantInput(u));
            }
        }
        Self::new(states, inputs, meta)
    }

    /// Writes `<stem>.csv` and the `<stem>.json` metadata sidecar.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.meta)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta: DatasetMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        Self::read_csv(std::fs::File::open(dir.join(format!("{stem}.csv")))?, meta)
    }
}
