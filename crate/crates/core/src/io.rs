//! Dataset directory reader/writer.
//!
//! Layout (UTF-8, comma-separated, headers mandatory):
//!
//! | file | columns |
//! |------|---------|
//! | `units.csv` | `unit_id,eligible[,x_1,...,x_k]` |
//! | `treatments.csv` | `unit_id,t,w` with `t ∈ 1..=T` |
//! | `outcomes.csv` | `unit_id,t,y` with `t ∈ 0..=T` |
//! | `graph.csv` (optional) | `treatment_unit_id,connected_unit_id,weight` |
//! | `connected_units.csv` (optional) | `connected_unit_id` |
//! | `meta.json` | `{"n_periods": T, "pre_period_end": p, "design": "staggered"}` |
//!
//! `connected_units.csv` is written alongside `graph.csv` so that connected
//! units without edges survive a round trip; when absent, the connected side
//! is inferred from `graph.csv`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    BipartiteGraph, Design, Edge, ExperimentDataset, OutcomePanel, TreatmentPanel, TreatmentUnit,
    UnitCovariates,
};
use crate::error::{Error, Result};
use crate::validate::validate_dataset;

pub const UNITS_FILE: &str = "units.csv";
pub const TREATMENTS_FILE: &str = "treatments.csv";
pub const OUTCOMES_FILE: &str = "outcomes.csv";
pub const GRAPH_FILE: &str = "graph.csv";
pub const CONNECTED_FILE: &str = "connected_units.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub n_periods: usize,
    pub pre_period_end: usize,
    pub design: Design,
}

struct CsvFile {
    path: std::path::PathBuf,
    reader: csv::Reader<fs::File>,
    headers: Vec<String>,
}

impl CsvFile {
    fn open(path: &Path, expected: &[&str]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        if headers.len() < expected.len()
            || headers.iter().zip(expected).any(|(h, e)| h != e)
        {
            return Err(Error::parse(
                path,
                1,
                format!("expected header `{}`, found `{}`", expected.join(","), headers.join(",")),
            ));
        }
        Ok(CsvFile {
            path: path.to_path_buf(),
            reader,
            headers,
        })
    }

    /// Calls `f(line, record)` for every data row.
    fn for_each(&mut self, mut f: impl FnMut(u64, &csv::StringRecord) -> Result<()>) -> Result<u64> {
        let mut record = csv::StringRecord::new();
        let mut last_line = 1;
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(last_line),
                Ok(true) => {
                    last_line = record.position().map_or(last_line + 1, |p| p.line());
                    f(last_line, &record)?;
                }
                Err(e) => return Err(csv_error(&self.path, e)),
            }
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

fn field<'a>(path: &Path, line: u64, r: &'a csv::StringRecord, i: usize, name: &str) -> Result<&'a str> {
    r.get(i)
        .ok_or_else(|| Error::parse(path, line, format!("missing column `{name}`")))
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: u64, s: &str, name: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("`{name}` value `{s}` is not a valid number")))
}

fn parse_bool(path: &Path, line: u64, s: &str) -> Result<bool> {
    match s {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(Error::parse(path, line, format!("`eligible` value `{s}` is not 0/1"))),
    }
}

struct UnitRow {
    id: u32,
    eligible: bool,
    covariates: Option<Vec<f64>>,
    line: u64,
}

/// Reads a dataset directory and validates it.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<ExperimentDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    if !meta_path.exists() {
        return Err(Error::MissingFile(meta_path));
    }
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::parse(&meta_path, e.line() as u64, e.to_string()))?;
    let t = meta.n_periods;

    // units.csv
    let path = dir.join(UNITS_FILE);
    let mut units_csv = CsvFile::open(&path, &["unit_id", "eligible"])?;
    let cov_names: Vec<String> = units_csv.headers[2..].to_vec();
    let mut units = Vec::new();
    units_csv.for_each(|line, r| {
        let id = parse_num(&path, line, field(&path, line, r, 0, "unit_id")?, "unit_id")?;
        let eligible = parse_bool(&path, line, field(&path, line, r, 1, "eligible")?)?;
        let cells: Vec<&str> = (2..2 + cov_names.len())
            .map(|i| r.get(i).unwrap_or(""))
            .collect();
        let covariates = if eligible && !cov_names.is_empty() {
            let mut x = Vec::with_capacity(cells.len());
            for (c, name) in cells.iter().zip(&cov_names) {
                x.push(parse_num(&path, line, c, name)?);
            }
            Some(x)
        } else {
            None
        };
        units.push(UnitRow {
            id,
            eligible,
            covariates,
            line,
        });
        Ok(())
    })?;
    units.sort_by_key(|u| u.id);
    let eligible: Vec<&UnitRow> = units.iter().filter(|u| u.eligible).collect();
    let n = eligible.len();
    for (i, u) in eligible.iter().enumerate() {
        if u.id != i as u32 + 1 {
            return Err(Error::parse(
                &path,
                u.line,
                format!("eligible unit ids must be dense 1..={n}; found {}", u.id),
            ));
        }
    }
    let covariates = if cov_names.is_empty() {
        None
    } else {
        Some(UnitCovariates {
            names: cov_names.clone(),
            values: eligible
                .iter()
                .map(|u| u.covariates.clone().unwrap_or_default())
                .collect(),
        })
    };

    // treatments.csv
    let path = dir.join(TREATMENTS_FILE);
    let mut treatments = TreatmentPanel::zeros(n, t, meta.design);
    let mut seen = vec![false; n * t];
    let last = CsvFile::open(&path, &["unit_id", "t", "w"])?.for_each(|line, r| {
        let id: u32 = parse_num(&path, line, field(&path, line, r, 0, "unit_id")?, "unit_id")?;
        let s: usize = parse_num(&path, line, field(&path, line, r, 1, "t")?, "t")?;
        let w: u8 = parse_num(&path, line, field(&path, line, r, 2, "w")?, "w")?;
        if id == 0 || id as usize > n {
            return Err(Error::parse(&path, line, format!("unit_id {id} is not an eligible unit")));
        }
        if s == 0 || s > t {
            return Err(Error::parse(&path, line, format!("t = {s} outside 1..={t}")));
        }
        let k = (id as usize - 1) * t + s - 1;
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::parse(&path, line, format!("duplicate entry for ({id}, {s})")));
        }
        treatments.set(id as usize - 1, s, w);
        Ok(())
    })?;
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::parse(
            &path,
            last,
            format!("missing entry for unit {} period {}", k / t + 1, k % t + 1),
        ));
    }

    // outcomes.csv
    let path = dir.join(OUTCOMES_FILE);
    let mut outcomes = OutcomePanel::zeros(n, t + 1);
    let mut seen = vec![false; n * (t + 1)];
    let last = CsvFile::open(&path, &["unit_id", "t", "y"])?.for_each(|line, r| {
        let id: u32 = parse_num(&path, line, field(&path, line, r, 0, "unit_id")?, "unit_id")?;
        let s: usize = parse_num(&path, line, field(&path, line, r, 1, "t")?, "t")?;
        let y: f64 = parse_num(&path, line, field(&path, line, r, 2, "y")?, "y")?;
        if id == 0 || id as usize > n {
            return Err(Error::parse(&path, line, format!("unit_id {id} is not an eligible unit")));
        }
        if s > t {
            return Err(Error::parse(&path, line, format!("t = {s} outside 0..={t}")));
        }
        let k = (id as usize - 1) * (t + 1) + s;
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::parse(&path, line, format!("duplicate entry for ({id}, {s})")));
        }
        outcomes.set(id as usize - 1, s, y);
        Ok(())
    })?;
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::parse(
            &path,
            last,
            format!("missing entry for unit {} period {}", k / (t + 1) + 1, k % (t + 1)),
        ));
    }

    // graph.csv
    let path = dir.join(GRAPH_FILE);
    let graph = if path.exists() {
        let mut edges = Vec::new();
        CsvFile::open(&path, &["treatment_unit_id", "connected_unit_id", "weight"])?.for_each(
            |line, r| {
                edges.push(Edge {
                    treatment: parse_num(
                        &path,
                        line,
                        field(&path, line, r, 0, "treatment_unit_id")?,
                        "treatment_unit_id",
                    )?,
                    connected: parse_num(
                        &path,
                        line,
                        field(&path, line, r, 1, "connected_unit_id")?,
                        "connected_unit_id",
                    )?,
                    weight: parse_num(&path, line, field(&path, line, r, 2, "weight")?, "weight")?,
                });
                Ok(())
            },
        )?;
        let conn_path = dir.join(CONNECTED_FILE);
        let mut connected_units: Vec<u32> = Vec::new();
        if conn_path.exists() {
            CsvFile::open(&conn_path, &["connected_unit_id"])?.for_each(|line, r| {
                connected_units.push(parse_num(
                    &conn_path,
                    line,
                    field(&conn_path, line, r, 0, "connected_unit_id")?,
                    "connected_unit_id",
                )?);
                Ok(())
            })?;
        } else {
            connected_units = edges.iter().map(|e| e.connected).collect();
            connected_units.sort_unstable();
            connected_units.dedup();
        }
        let mut g = BipartiteGraph {
            treatment_units: units
                .iter()
                .map(|u| TreatmentUnit {
                    id: u.id,
                    eligible: u.eligible,
                })
                .collect(),
            connected_units,
            edges,
        };
        g.canonicalize();
        Some(g)
    } else {
        None
    };

    let dataset = ExperimentDataset {
        outcomes,
        treatments,
        graph,
        covariates,
        pre_period_end: meta.pre_period_end,
    };
    let violations = validate_dataset(&dataset);
    if violations.is_empty() {
        Ok(dataset)
    } else {
        Err(Error::Invalid(violations))
    }
}

fn fmt_f64(v: f64) -> String {
    // `Display` for f64 is the shortest string that parses back to the same value.
    format!("{v}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn write_row<I, S>(w: &mut csv::Writer<fs::File>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| csv_error(path, e))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a dataset directory. Rows are ordered by unit id, then period, so
/// output bytes depend only on the dataset.
pub fn save_dataset(d: &ExperimentDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = d.n_units();
    let t = d.n_periods();

    let meta = Meta {
        n_periods: t,
        pre_period_end: d.pre_period_end,
        design: d.treatments.design,
    };
    let meta_path = dir.join(META_FILE);
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;

    let path = dir.join(UNITS_FILE);
    let mut w = writer(&path)?;
    let mut header = vec!["unit_id".to_string(), "eligible".to_string()];
    if let Some(c) = &d.covariates {
        header.extend(c.names.iter().cloned());
    }
    write_row(&mut w, &path, &header)?;
    let mut units: Vec<TreatmentUnit> = match &d.graph {
        Some(g) => g.treatment_units.clone(),
        None => (1..=n as u32).map(|id| TreatmentUnit { id, eligible: true }).collect(),
    };
    units.sort_by_key(|u| u.id);
    for u in &units {
        let mut row = vec![u.id.to_string(), if u.eligible { "1" } else { "0" }.to_string()];
        if let Some(c) = &d.covariates {
            if u.eligible && (u.id as usize) <= c.values.len() {
                row.extend(c.values[u.id as usize - 1].iter().map(|&v| fmt_f64(v)));
            } else {
                row.extend(std::iter::repeat_n(String::new(), c.dim()));
            }
        }
        write_row(&mut w, &path, &row)?;
    }
    finish(w, &path)?;

    let path = dir.join(TREATMENTS_FILE);
    let mut w = writer(&path)?;
    write_row(&mut w, &path, ["unit_id", "t", "w"])?;
    for i in 0..n {
        for s in 1..=t {
            write_row(
                &mut w,
                &path,
                [(i + 1).to_string(), s.to_string(), d.treatments.w(i, s).to_string()],
            )?;
        }
    }
    finish(w, &path)?;

    let path = dir.join(OUTCOMES_FILE);
    let mut w = writer(&path)?;
    write_row(&mut w, &path, ["unit_id", "t", "y"])?;
    for i in 0..n {
        for s in 0..=t {
            write_row(
                &mut w,
                &path,
                [(i + 1).to_string(), s.to_string(), fmt_f64(d.outcomes.y(i, s))],
            )?;
        }
    }
    finish(w, &path)?;

    if let Some(g) = &d.graph {
        let mut g = g.clone();
        g.canonicalize();
        let path = dir.join(GRAPH_FILE);
        let mut w = writer(&path)?;
        write_row(&mut w, &path, ["treatment_unit_id", "connected_unit_id", "weight"])?;
        for e in &g.edges {
            write_row(
                &mut w,
                &path,
                [e.treatment.to_string(), e.connected.to_string(), fmt_f64(e.weight)],
            )?;
        }
        finish(w, &path)?;

        let path = dir.join(CONNECTED_FILE);
        let mut w = writer(&path)?;
        write_row(&mut w, &path, ["connected_unit_id"])?;
        for c in &g.connected_units {
            write_row(&mut w, &path, [c.to_string()])?;
        }
        finish(w, &path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn two_unit_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        write(p, META_FILE, r#"{ "n_periods": 2, "pre_period_end": 1, "design": "staggered" }"#);
        write(p, UNITS_FILE, "unit_id,eligible\n1,1\n2,1\n");
        write(p, TREATMENTS_FILE, "unit_id,t,w\n1,1,0\n1,2,1\n2,1,0\n2,2,0\n");
        write(p, OUTCOMES_FILE, "unit_id,t,y\n1,0,1.5\n1,1,2\n1,2,3\n2,0,1\n2,1,1\n2,2,1\n");
        dir
    }

    #[test]
    fn loads_two_unit_three_period_directory() {
        let dir = two_unit_dir();
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.n_units(), 2);
        assert_eq!(d.n_periods(), 2);
        assert_eq!(d.outcomes.y(0, 0), 1.5);
        assert_eq!(d.treatments.w(0, 2), 1);
        assert!(d.graph.is_none());
        assert!(d.covariates.is_none());
    }

    #[test]
    fn non_numeric_outcome_cites_file_and_line() {
        let dir = two_unit_dir();
        write(dir.path(), OUTCOMES_FILE, "unit_id,t,y\n1,0,1\n1,1,abc\n");
        match load_dataset(dir.path()) {
            Err(Error::Parse { file, line, message }) => {
                assert!(file.ends_with(OUTCOMES_FILE));
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_and_missing_entry() {
        let dir = two_unit_dir();
        fs::remove_file(dir.path().join(TREATMENTS_FILE)).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(_))));

        let dir = two_unit_dir();
        write(dir.path(), TREATMENTS_FILE, "unit_id,t,w\n1,1,0\n1,2,1\n2,1,0\n");
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("missing entry for unit 2 period 2"), "{err}");
    }

    #[test]
    fn invalid_content_is_rejected_with_violations() {
        let dir = two_unit_dir();
        write(dir.path(), TREATMENTS_FILE, "unit_id,t,w\n1,1,1\n1,2,0\n2,1,0\n2,2,0\n");
        assert!(matches!(load_dataset(dir.path()), Err(Error::Invalid(v)) if v.len() == 1));
    }

    #[test]
    fn save_without_graph_writes_no_graph_file() {
        let dir = two_unit_dir();
        let d = load_dataset(dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        save_dataset(&d, out.path()).unwrap();
        assert!(!out.path().join(GRAPH_FILE).exists());
        assert_eq!(load_dataset(out.path()).unwrap(), d);
    }
}
