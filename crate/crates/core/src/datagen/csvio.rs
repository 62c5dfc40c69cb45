//! CSV task-sequence format.
//!
//! A header row is required. Features are floating point, labels are
//! integers `1..=|Y|`. Tasks come either from a task column (grouped by
//! order of first appearance) or from contiguous segments of
//! `segment_size` rows. An optional split column (`train`/`test`) fixes
//! the split; otherwise `test_per_task` rows of each task are drawn at
//! random with a seeded stream.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{Sample, TaskData, TaskSequence};
use crate::error::{input, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsvTaskSpec {
    pub path: PathBuf,
    pub task_column: Option<String>,
    pub segment_size: usize,
    pub label_column: String,
    /// `None` selects every column other than label/task/split/time.
    pub feature_columns: Option<Vec<String>>,
    pub test_per_task: usize,
    pub split_column: Option<String>,
    pub time_column: Option<String>,
    pub seed: u64,
}

impl Default for CsvTaskSpec {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            task_column: None,
            segment_size: 300,
            label_column: "label".into(),
            feature_columns: None,
            test_per_task: 100,
            split_column: None,
            time_column: None,
            seed: 0,
        }
    }
}

pub fn ingest_csv(spec: &CsvTaskSpec) -> Result<TaskSequence> {
    let f = std::fs::File::open(&spec.path)?;
    ingest_reader(f, spec)
}

struct Row {
    x: Vec<f64>,
    y: usize,
    test: Option<bool>,
    time: Option<f64>,
}

fn col(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Input(format!("missing column '{name}'")))
}

pub fn ingest_reader<R: Read>(reader: R, spec: &CsvTaskSpec) -> Result<TaskSequence> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Csv { line: 1, msg: e.to_string() })?.clone();
    let label_idx = col(&headers, &spec.label_column)?;
    let task_idx = spec.task_column.as_deref().map(|c| col(&headers, c)).transpose()?;
    let split_idx = spec.split_column.as_deref().map(|c| col(&headers, c)).transpose()?;
    let time_idx = spec.time_column.as_deref().map(|c| col(&headers, c)).transpose()?;
    let feat_idx: Vec<usize> = match &spec.feature_columns {
        Some(names) => names.iter().map(|n| col(&headers, n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|i| Some(*i) != Some(label_idx) && Some(*i) != task_idx && Some(*i) != split_idx && Some(*i) != time_idx)
            .collect(),
    };
    if feat_idx.is_empty() {
        return input("no feature columns");
    }

    let mut groups: Vec<Vec<Row>> = Vec::new();
    let mut group_of: HashMap<String, usize> = HashMap::new();
    let mut n_labels = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Csv { line, msg: e.to_string() })?;
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::Csv { line, msg: format!("missing field {k}") });
        let num = |k: usize| -> Result<f64> {
            let s = field(k)?;
            s.parse::<f64>().map_err(|_| Error::Csv { line, msg: format!("not a number: '{s}'") })
        };
        let x = feat_idx.iter().map(|&k| num(k)).collect::<Result<Vec<_>>>()?;
        let raw = field(label_idx)?;
        let lab: usize = raw
            .parse()
            .ok()
            .filter(|&l| l >= 1)
            .ok_or_else(|| Error::Csv { line, msg: format!("label must be an integer ≥ 1, got '{raw}'") })?;
        n_labels = n_labels.max(lab);
        let test = match split_idx {
            Some(k) => match field(k)? {
                "train" => Some(false),
                "test" => Some(true),
                other => return Err(Error::Csv { line, msg: format!("split must be train or test, got '{other}'") }),
            },
            None => None,
        };
        let time = time_idx.map(num).transpose()?;
        let row = Row { x, y: lab - 1, test, time };
        let g = match task_idx {
            Some(k) => {
                let key = field(k)?.to_string();
                let next = group_of.len();
                *group_of.entry(key).or_insert(next)
            }
            None => i / spec.segment_size.max(1),
        };
        if g == groups.len() {
            groups.push(Vec::new());
        }
        groups[g].push(row);
    }
    if groups.is_empty() {
        return input("csv contains no rows");
    }

    let mut tasks = Vec::with_capacity(groups.len());
    let n_groups = groups.len();
    for (g, rows) in groups.into_iter().enumerate() {
        let time = rows.first().and_then(|r| r.time);
        let mut td = TaskData { time, ..Default::default() };
        if split_idx.is_some() {
            for r in rows {
                let s = Sample { x: r.x, y: r.y };
                if r.test == Some(true) {
                    td.test.push(s);
                } else {
                    td.train.push(s);
                }
            }
        } else {
            if rows.len() < spec.test_per_task + 1 {
                log::warn!("dropping task segment {} with {} rows (need {})", g + 1, rows.len(), spec.test_per_task + 1);
                if g + 1 != n_groups {
                    log::warn!("short segment is not the final one");
                }
                continue;
            }
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
            rng.set_stream(g as u64);
            idx.shuffle(&mut rng);
            let mut is_test = vec![false; rows.len()];
            for &i in &idx[..spec.test_per_task] {
                is_test[i] = true;
            }
            for (r, t) in rows.into_iter().zip(is_test) {
                let s = Sample { x: r.x, y: r.y };
                if t {
                    td.test.push(s);
                } else {
                    td.train.push(s);
                }
            }
        }
        tasks.push(td);
    }
    TaskSequence::new(tasks, n_labels.max(2), feat_idx.len())
}

/// Write a sequence with `task`, `split`, optional `time`, features
/// `x1..xD` and a 1-based `label` column.
pub fn write_csv<W: Write>(seq: &TaskSequence, writer: W) -> Result<()> {
    let has_time = seq.tasks.iter().all(|t| t.time.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["task".to_string(), "split".to_string()];
    if has_time {
        header.push("time".into());
    }
    header.extend((1..=seq.dim).map(|i| format!("x{i}")));
    header.push("label".into());
    let csv_err = |e: csv::Error| Error::Csv { line: 0, msg: e.to_string() };
    w.write_record(&header).map_err(csv_err)?;
    for (j, t) in seq.tasks.iter().enumerate() {
        for (split, set) in [("train", &t.train), ("test", &t.test)] {
            for s in set {
                let mut rec = vec![(j + 1).to_string(), split.to_string()];
                if has_time {
                    rec.push(format!("{:?}", t.time.unwrap_or(0.0)));
                }
                rec.extend(s.x.iter().map(|v| format!("{v:?}")));
                rec.push((s.y + 1).to_string());
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
