//! CSV dataset files.
//!
//! ```text
//! # geen-dataset v1
//! # seed=7
//! # experiment=baseline
//! # rng=chacha8
//! # conventions=N(mean,variance) Laplace(location,scale) Uniform(low,high)
//! x1,x2,x3,x4,xstar
//! 0.12,...
//! ```
//!
//! Comment lines start with `#` and may only appear before the header. The
//! header is `x1..xK` in order, optionally followed by `xstar`. Values are
//! written in the shortest decimal form that parses back to the same binary64.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use geen_core::rng::RNG_ALGORITHM;
use geen_core::{Dataset, Experiment, RngSeed};

use crate::error::{GeenError, Result};

pub const DATASET_MAGIC: &str = "geen-dataset v1";
const CONVENTIONS: &str = "N(mean,variance) Laplace(location,scale) Uniform(low,high)";

/// Provenance recorded in a dataset's comment header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetMeta {
    pub seed: Option<RngSeed>,
    pub experiment: Option<Experiment>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Ok(load_dataset_with_meta(path)?.0)
}

pub fn load_dataset_with_meta(path: impl AsRef<Path>) -> Result<(Dataset, DatasetMeta)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GeenError::io(path, e))?;
    parse_dataset(&text, path)
}

fn parse_dataset(text: &str, path: &Path) -> Result<(Dataset, DatasetMeta)> {
    let schema = |row: usize, column: &str, message: String| GeenError::Schema {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };

    let mut meta = DatasetMeta::default();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((_, line)) = lines.peek() {
        let Some(comment) = line.trim_start().strip_prefix('#') else { break };
        let comment = comment.trim();
        if let Some(v) = comment.strip_prefix("seed=") {
            meta.seed = v.trim().parse().ok().map(RngSeed);
        } else if let Some(v) = comment.strip_prefix("experiment=") {
            meta.experiment = v.trim().parse().ok();
        }
        lines.next();
    }
    let (header_line, header) = lines.next().ok_or_else(|| schema(0, "", "missing header row".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_truth = names.last() == Some(&"xstar");
    let k = names.len() - usize::from(has_truth);
    for (j, name) in names[..k].iter().enumerate() {
        let expected = format!("x{}", j + 1);
        if *name != expected {
            return Err(schema(header_line + 1, name, format!("expected column `{expected}`")));
        }
    }
    if k < geen_core::data::MIN_MEASUREMENTS {
        return Err(schema(
            header_line + 1,
            "",
            format!("need at least {} measurement columns, found {k}", geen_core::data::MIN_MEASUREMENTS),
        ));
    }

    let mut features = Vec::new();
    let mut truth = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(schema(
                idx + 1,
                "",
                format!("expected {} fields, found {}", names.len(), fields.len()),
            ));
        }
        for (field, name) in fields.iter().zip(&names) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| schema(idx + 1, name, format!("`{}` is not a number", field.trim())))?;
            if !v.is_finite() {
                return Err(schema(idx + 1, name, "value is not finite".into()));
            }
            if *name == "xstar" {
                truth.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let dataset = Dataset::new(features, k, has_truth.then_some(truth))?;
    Ok((dataset, meta))
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    save_dataset_with_meta(dataset, &DatasetMeta::default(), path)
}

pub fn save_dataset_with_meta(dataset: &Dataset, meta: &DatasetMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_dataset(dataset, meta)).map_err(|e| GeenError::io(path, e))
}

pub fn format_dataset(dataset: &Dataset, meta: &DatasetMeta) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {DATASET_MAGIC}");
    if let Some(seed) = meta.seed {
        let _ = writeln!(out, "# seed={}", seed.0);
    }
    if let Some(exp) = meta.experiment {
        let _ = writeln!(out, "# experiment={exp}");
    }
    if meta.seed.is_some() || meta.experiment.is_some() {
        let _ = writeln!(out, "# rng={RNG_ALGORITHM}");
        let _ = writeln!(out, "# conventions={CONVENTIONS}");
    }
    let k = dataset.k();
    let mut header: Vec<String> = (1..=k).map(|j| format!("x{j}")).collect();
    if dataset.truth().is_some() {
        header.push("xstar".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..dataset.n_pts() {
        for (j, v) in dataset.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:?}");
        }
        if let Some(t) = dataset.truth() {
            let _ = write!(out, ",{:?}", t[i]);
        }
        out.push('\n');
    }
    out
}
