//! On-disk formats: JSON checkpoints, solution sets and reports, CSV datasets
//! and landscape grids. Floats are written in shortest round-trip form, so a
//! value read back is bit-identical to the value written.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Dataset, Network};
use crate::set_metrics::{SolutionSet, SolutionSetFile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    /// Each layer row-major.
    pub layers: Vec<Vec<f64>>,
    pub output_vector: Vec<f64>,
}

impl From<&Network> for Checkpoint {
    fn from(net: &Network) -> Self {
        let shape = net.shape();
        Checkpoint {
            depth: shape.depth,
            width: shape.width,
            input_dim: shape.input_dim,
            layers: net
                .layers()
                .iter()
                .map(|l| l.transpose().as_slice().to_vec())
                .collect(),
            output_vector: net.output_vector().as_slice().to_vec(),
        }
    }
}

impl TryFrom<Checkpoint> for Network {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.layers.len() != c.depth {
            return Err(Error::invalid(format!(
                "checkpoint declares depth {} but has {} layers",
                c.depth,
                c.layers.len()
            )));
        }
        let layers = c
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let cols = if i == 0 { c.input_dim } else { c.width };
                if l.len() != c.width * cols {
                    return Err(Error::invalid(format!(
                        "layer {} has {} entries, expected {}",
                        i + 1,
                        l.len(),
                        c.width * cols
                    )));
                }
                Ok(DMatrix::from_row_slice(c.width, cols, l))
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers, DVector::from_vec(c.output_vector))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl ToString) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json_string(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    write_json(path, &Checkpoint::from(net))
}

pub fn load_network(path: &Path) -> Result<Network> {
    let c: Checkpoint = read_json(path)?;
    Network::try_from(c).map_err(|e| parse_err(path, e))
}

pub fn save_solution_set(path: &Path, set: &SolutionSet) -> Result<()> {
    write_json(path, &SolutionSetFile::from(set))
}

pub fn load_solution_set(path: &Path) -> Result<SolutionSet> {
    let f: SolutionSetFile = read_json(path)?;
    SolutionSet::try_from(f).map_err(|e| parse_err(path, e))
}

/// CSV text with header `x_1,...,x_d,y`.
pub fn dataset_to_csv(data: &Dataset) -> String {
    let d = data.dim();
    let mut out: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
    out.push("y".into());
    let mut text = out.join(",");
    text.push('\n');
    for (x, y) in data.inputs().iter().zip(data.labels()) {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(y.to_string());
        text.push_str(&row.join(","));
        text.push('\n');
    }
    text
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_text(path, &dataset_to_csv(data))
}

pub fn parse_dataset(text: &str, origin: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(origin, e))?.clone();
    if headers.len() < 2 {
        return Err(parse_err(origin, "need at least one feature column and a label column"));
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(origin, e))?;
        let values = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(origin, format!("row {}: {e}", line + 1)))?;
        if values.len() != headers.len() {
            return Err(parse_err(origin, format!("row {} has {} fields", line + 1, values.len())));
        }
        let (x, y) = values.split_at(values.len() - 1);
        inputs.push(DVector::from_row_slice(x));
        labels.push(y[0]);
    }
    Dataset::new(inputs, labels).map_err(|e| parse_err(origin, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_dataset(&text, path)
}
