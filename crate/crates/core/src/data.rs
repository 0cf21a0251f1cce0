//! Dataset ingestion, validation, and persistence.
//!
//! A dataset is a directory of UTF-8 CSV files:
//!
//! * `inputs.csv` — header `input_id,x_1,…,x_{D_X}`; one row per input.
//! * `observations.csv` — header `input_id,output_id,y`; one row per
//!   observed (input, output) pair.  Pairs are unique; missing pairs are
//!   simply absent, so |Ω| ≤ N·P.
//! * `outputs.csv` (optional) — header `output_id[,h0_1,…,h0_{D_H}]`;
//!   declares the output universe and, when the h0 columns are present,
//!   an informative prior mean for each output's latent coordinate.
//!
//! Output indices follow `outputs.csv` row order when that file exists and
//! first appearance in `observations.csv` otherwise.  Floats are written
//! with 17 significant digits so a save/load round trip is exact.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diffmath::Tensor;
use crate::error::{Error, Result};

/// One observed pair: indices into the input and output tables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub input: usize,
    pub output: usize,
    pub y: f64,
}

/// A validated dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub input_ids: Vec<String>,
    /// N × D_X input table, row i belonging to `input_ids[i]`.
    pub inputs: Tensor,
    pub output_ids: Vec<String>,
    /// P × D_H prior-mean table when `outputs.csv` carries h0 columns.
    pub output_priors: Option<Tensor>,
    pub observations: Vec<Observation>,
}

impl Dataset {
    pub fn input_count(&self) -> usize {
        self.inputs.rows()
    }

    pub fn output_count(&self) -> usize {
        self.output_ids.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn observed_count(&self) -> usize {
        self.observations.len()
    }

    /// Observations as (input, output, y) triples.
    pub fn triples(&self) -> Vec<(usize, usize, f64)> {
        self.observations.iter().map(|o| (o.input, o.output, o.y)).collect()
    }

    /// Internal consistency: indices in range, pairs unique, values finite.
    pub fn validate(&self) -> Result<()> {
        if self.input_count() == 0 || self.input_dim() == 0 {
            return Err(Error::argument("dataset", "need at least one input with one coordinate"));
        }
        if self.input_ids.len() != self.input_count() {
            return Err(Error::argument("dataset", "input id/table length mismatch"));
        }
        if let Some(p) = &self.output_priors {
            if p.rows() != self.output_count() {
                return Err(Error::argument("dataset", "prior table does not cover every output"));
            }
        }
        let mut seen = HashSet::new();
        for (k, o) in self.observations.iter().enumerate() {
            if o.input >= self.input_count() || o.output >= self.output_count() {
                return Err(Error::argument(
                    "dataset",
                    format!("observation {k} references a missing input or output"),
                ));
            }
            if !o.y.is_finite() {
                return Err(Error::argument("dataset", format!("observation {k} is not finite")));
            }
            if !seen.insert((o.input, o.output)) {
                return Err(Error::argument(
                    "dataset",
                    format!("duplicate (input, output) pair at observation {k}"),
                ));
            }
        }
        Ok(())
    }

    /// A copy holding only the given observations (same tables).
    pub fn with_observations(&self, observations: Vec<Observation>) -> Dataset {
        Dataset { observations, ..self.clone() }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::DataValidation {
        file: file.clone(),
        line: 0,
        reason: format!("cannot read: {e}"),
    })?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn fields(line: &str) -> Vec<String> {
    line.split(',').map(|f| f.trim().to_string()).collect()
}

fn bad(file: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::DataValidation {
        file: file.display().to_string(),
        line,
        reason: reason.into(),
    }
}

fn parse_float(file: &Path, line: usize, raw: &str, what: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| bad(file, line, format!("{what} {raw:?} is not a number")))?;
    if !v.is_finite() {
        return Err(bad(file, line, format!("{what} {raw:?} is not finite")));
    }
    Ok(v)
}

/// Check a header of the form `first,prefix_1,…,prefix_k`; returns k.
fn numbered_header(
    file: &Path,
    header: &str,
    first: &str,
    prefix: &str,
    min_cols: usize,
) -> Result<usize> {
    let cols = fields(header);
    if cols.is_empty() || cols[0] != first {
        return Err(bad(file, 1, format!("header must start with {first:?}")));
    }
    let k = cols.len() - 1;
    if k < min_cols {
        return Err(bad(file, 1, format!("header needs at least {min_cols} {prefix}* columns")));
    }
    for (i, c) in cols.iter().skip(1).enumerate() {
        let expect = format!("{prefix}{}", i + 1);
        if *c != expect {
            return Err(bad(file, 1, format!("column {} should be {expect:?}, found {c:?}", i + 2)));
        }
    }
    Ok(k)
}

/// Load and validate a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    // inputs.csv
    let inputs_path = dir.join("inputs.csv");
    let lines = read_lines(&inputs_path)?;
    if lines.is_empty() {
        return Err(bad(&inputs_path, 0, "empty file"));
    }
    let d_x = numbered_header(&inputs_path, &lines[0], "input_id", "x_", 1)?;
    let mut input_ids = Vec::new();
    let mut input_index = HashMap::new();
    let mut xs = Vec::new();
    for (ln, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line);
        if f.len() != d_x + 1 {
            return Err(bad(&inputs_path, ln + 1, format!("expected {} fields, found {}", d_x + 1, f.len())));
        }
        if input_index.insert(f[0].clone(), input_ids.len()).is_some() {
            return Err(bad(&inputs_path, ln + 1, format!("duplicate input_id {:?}", f[0])));
        }
        input_ids.push(f[0].clone());
        for v in &f[1..] {
            xs.push(parse_float(&inputs_path, ln + 1, v, "coordinate")?);
        }
    }
    if input_ids.is_empty() {
        return Err(bad(&inputs_path, 1, "no input rows"));
    }
    let inputs = Tensor::matrix(input_ids.len(), d_x, xs);

    // outputs.csv (optional)
    let outputs_path = dir.join("outputs.csv");
    let mut output_ids: Vec<String> = Vec::new();
    let mut output_index: HashMap<String, usize> = HashMap::new();
    let mut output_priors = None;
    let outputs_declared = outputs_path.exists();
    if outputs_declared {
        let lines = read_lines(&outputs_path)?;
        if lines.is_empty() {
            return Err(bad(&outputs_path, 0, "empty file"));
        }
        let d_h = numbered_header(&outputs_path, &lines[0], "output_id", "h0_", 0)?;
        let mut hs = Vec::new();
        for (ln, line) in lines.iter().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f = fields(line);
            if f.len() != d_h + 1 {
                return Err(bad(&outputs_path, ln + 1, format!("expected {} fields, found {}", d_h + 1, f.len())));
            }
            if output_index.insert(f[0].clone(), output_ids.len()).is_some() {
                return Err(bad(&outputs_path, ln + 1, format!("duplicate output_id {:?}", f[0])));
            }
            output_ids.push(f[0].clone());
            for v in &f[1..] {
                hs.push(parse_float(&outputs_path, ln + 1, v, "prior coordinate")?);
            }
        }
        if output_ids.is_empty() {
            return Err(bad(&outputs_path, 1, "no output rows"));
        }
        if d_h > 0 {
            output_priors = Some(Tensor::matrix(output_ids.len(), d_h, hs));
        }
    }

    // observations.csv
    let obs_path = dir.join("observations.csv");
    let lines = read_lines(&obs_path)?;
    if lines.is_empty() {
        return Err(bad(&obs_path, 0, "empty file"));
    }
    {
        let cols = fields(&lines[0]);
        if cols != ["input_id", "output_id", "y"] {
            return Err(bad(&obs_path, 1, "header must be input_id,output_id,y"));
        }
    }
    let mut observations = Vec::new();
    let mut seen = HashSet::new();
    for (ln, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line);
        if f.len() != 3 {
            return Err(bad(&obs_path, ln + 1, format!("expected 3 fields, found {}", f.len())));
        }
        let input = *input_index
            .get(&f[0])
            .ok_or_else(|| bad(&obs_path, ln + 1, format!("unknown input_id {:?}", f[0])))?;
        let output = match output_index.get(&f[1]) {
            Some(&i) => i,
            None if !outputs_declared => {
                output_index.insert(f[1].clone(), output_ids.len());
                output_ids.push(f[1].clone());
                output_ids.len() - 1
            }
            None => {
                return Err(bad(&obs_path, ln + 1, format!("unknown output_id {:?}", f[1])));
            }
        };
        if !seen.insert((input, output)) {
            return Err(bad(&obs_path, ln + 1, format!("duplicate pair ({:?}, {:?})", f[0], f[1])));
        }
        let y = parse_float(&obs_path, ln + 1, &f[2], "observation")?;
        observations.push(Observation { input, output, y });
    }
    if output_ids.is_empty() {
        return Err(bad(&obs_path, 1, "dataset declares no outputs"));
    }

    let ds = Dataset { input_ids, inputs, output_ids, output_priors, observations };
    ds.validate()?;
    Ok(ds)
}

/// Format a float with 17 significant digits (round-trip exact).
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write the dataset directory (creates it if needed).
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir)?;

    let mut s = String::from("input_id");
    for j in 0..ds.input_dim() {
        write!(s, ",x_{}", j + 1).unwrap();
    }
    s.push('\n');
    for (i, id) in ds.input_ids.iter().enumerate() {
        s.push_str(id);
        for v in ds.inputs.row(i) {
            s.push(',');
            s.push_str(&format_float(*v));
        }
        s.push('\n');
    }
    fs::write(dir.join("inputs.csv"), s)?;

    let mut s = String::from("output_id");
    let d_h = ds.output_priors.as_ref().map_or(0, |p| p.cols());
    for j in 0..d_h {
        write!(s, ",h0_{}", j + 1).unwrap();
    }
    s.push('\n');
    for (p, id) in ds.output_ids.iter().enumerate() {
        s.push_str(id);
        if let Some(priors) = &ds.output_priors {
            for v in priors.row(p) {
                s.push(',');
                s.push_str(&format_float(*v));
            }
        }
        s.push('\n');
    }
    fs::write(dir.join("outputs.csv"), s)?;

    let mut s = String::from("input_id,output_id,y\n");
    for o in &ds.observations {
        s.push_str(&ds.input_ids[o.input]);
        s.push(',');
        s.push_str(&ds.output_ids[o.output]);
        s.push(',');
        s.push_str(&format_float(o.y));
        s.push('\n');
    }
    fs::write(dir.join("observations.csv"), s)?;
    Ok(())
}
