//! Aggregation of per-seed metric CSVs into mean and standard-deviation
//! columns, binned by step.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use progress_core::stats;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Columns never aggregated: counters and identifiers.
const ID_COLUMNS: [&str; 2] = ["episode", "episode_seed"];

/// One metric CSV as a header and rows of optional numbers.
#[derive(Debug, Clone)]
struct MetricTable {
    header: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

fn read_table(path: &Path) -> CliResult<MetricTable> {
    let malformed = |detail: String| CliError::Malformed {
        path: path.to_path_buf(),
        detail,
    };
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let row = record
            .iter()
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>()
                        .map(Some)
                        .map_err(|_| malformed(format!("non-numeric cell `{cell}`")))
                }
            })
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(MetricTable { header, rows })
}

/// Mean and spread of one column per step bin, across input files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub mean: Vec<Option<f64>>,
    pub std: Vec<Option<f64>>,
    /// Number of files contributing to each bin.
    pub files: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    /// Column used for binning.
    pub key: String,
    pub bin_width: u64,
    pub sources: Vec<PathBuf>,
    /// Upper edge of each bin.
    pub bins: Vec<u64>,
    pub columns: BTreeMap<String, ColumnSummary>,
    /// Aggregated columns in input order.
    #[serde(skip)]
    pub order: Vec<String>,
}

/// Bins every file by `step` (or the first column when there is none),
/// averages each value column within a bin per file, then takes the mean and
/// population standard deviation of those per-file averages.
pub fn aggregate(files: &[PathBuf], bin_width: u64) -> CliResult<Aggregate> {
    if files.is_empty() {
        return Err(CliError::Config(
            "export-plots needs at least one metric file".into(),
        ));
    }
    if bin_width == 0 {
        return Err(CliError::Config("bin width must be positive".into()));
    }
    let tables = files
        .iter()
        .map(|f| read_table(f))
        .collect::<CliResult<Vec<_>>>()?;
    let header = &tables[0].header;
    for (table, file) in tables.iter().zip(files).skip(1) {
        if &table.header != header {
            return Err(CliError::Schema(format!(
                "{} has columns [{}], {} has [{}]",
                file.display(),
                table.header.join(","),
                files[0].display(),
                header.join(",")
            )));
        }
    }
    let key_index = header.iter().position(|c| c == "step").unwrap_or(0);
    let value_columns: Vec<usize> = (0..header.len())
        .filter(|&c| c != key_index && !ID_COLUMNS.contains(&header[c].as_str()))
        .collect();

    // per_file[f][bin][column] = (sum, count)
    let mut bins = std::collections::BTreeSet::new();
    let mut per_file: Vec<BTreeMap<u64, Vec<(f64, usize)>>> = Vec::with_capacity(tables.len());
    for (table, file) in tables.iter().zip(files) {
        let mut sums: BTreeMap<u64, Vec<(f64, usize)>> = BTreeMap::new();
        for row in &table.rows {
            let key = row[key_index].ok_or_else(|| CliError::Malformed {
                path: file.clone(),
                detail: format!("empty `{}` cell", header[key_index]),
            })?;
            let bin = (key.max(0.0) as u64).div_ceil(bin_width) * bin_width;
            bins.insert(bin);
            let cells = sums
                .entry(bin)
                .or_insert_with(|| vec![(0.0, 0); value_columns.len()]);
            for (slot, &c) in cells.iter_mut().zip(&value_columns) {
                if let Some(v) = row[c] {
                    slot.0 += v;
                    slot.1 += 1;
                }
            }
        }
        per_file.push(sums);
    }

    let bins: Vec<u64> = bins.into_iter().collect();
    let mut columns = BTreeMap::new();
    let mut order = Vec::with_capacity(value_columns.len());
    for (slot, &c) in value_columns.iter().enumerate() {
        let mut summary = ColumnSummary {
            mean: Vec::with_capacity(bins.len()),
            std: Vec::with_capacity(bins.len()),
            files: Vec::with_capacity(bins.len()),
        };
        for bin in &bins {
            let values: Vec<f64> = per_file
                .iter()
                .filter_map(|sums| sums.get(bin).map(|cells| cells[slot]))
                .filter(|&(_, n)| n > 0)
                .map(|(sum, n)| sum / n as f64)
                .collect();
            let present = !values.is_empty();
            summary.mean.push(present.then(|| stats::mean(&values)));
            summary.std.push(present.then(|| stats::std_dev(&values)));
            summary.files.push(values.len());
        }
        order.push(header[c].clone());
        columns.insert(header[c].clone(), summary);
    }
    Ok(Aggregate {
        key: header[key_index].clone(),
        bin_width,
        sources: files.to_vec(),
        bins,
        columns,
        order,
    })
}

impl Aggregate {
    pub fn to_csv(&self) -> String {
        let mut out = self.key.clone();
        for name in &self.order {
            out.push_str(&format!(",{name}_mean,{name}_std"));
        }
        out.push('\n');
        let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for (b, bin) in self.bins.iter().enumerate() {
            out.push_str(&bin.to_string());
            for name in &self.order {
                let column = &self.columns[name];
                out.push_str(&format!(
                    ",{},{}",
                    cell(column.mean[b]),
                    cell(column.std[b])
                ));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregate serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn mean_and_std_across_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(
            dir.path(),
            "a.csv",
            "step,episode,success\n10,0,1\n20,1,0\n",
        );
        let b = write(
            dir.path(),
            "b.csv",
            "step,episode,success\n15,0,0\n30,1,1\n",
        );
        let agg = aggregate(&[a, b], 20).unwrap();
        assert_eq!(agg.bins, vec![20, 40]);
        let s = &agg.columns["success"];
        assert_eq!(s.mean, vec![Some(0.25), Some(1.0)]);
        assert_eq!(s.std, vec![Some(0.25), Some(0.0)]);
        assert_eq!(s.files, vec![2, 1]);
        assert_eq!(
            agg.to_csv(),
            "step,success_mean,success_std\n20,0.25,0.25\n40,1,0\n"
        );
    }

    #[test]
    fn blank_cells_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "step,episode,loss\n5,0,\n");
        let agg = aggregate(&[a], 10).unwrap();
        assert_eq!(agg.columns["loss"].mean, vec![None]);
        assert_eq!(agg.to_csv(), "step,loss_mean,loss_std\n10,,\n");
    }

    #[test]
    fn header_mismatch_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "step,episode,success\n1,0,1\n");
        let b = write(dir.path(), "b.csv", "step,episode,reward\n1,0,1\n");
        assert_eq!(
            aggregate(&[a, b], 1).unwrap_err().category(),
            "schema-mismatch"
        );
    }

    #[test]
    fn non_numeric_cells_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "step,x\n1,abc\n");
        assert_eq!(aggregate(&[a], 1).unwrap_err().category(), "malformed-file");
    }
}
