//! Result files. Tables are written as CSV or as JSON
//! `{"columns": [...], "rows": [[...], ...]}` with the same cells. Numbers in
//! CSV carry 17 significant digits; JSON numbers use the shortest form that
//! reads back to the same `f64`. Nothing time- or machine-dependent is
//! written, so identical inputs give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::write::GzEncoder;
use flate2::Compression;
use mflqg_core::cost::CostTerms;
use mflqg_core::simulate::PathRecord;
use mflqg_core::{DensePath, FeedbackLaw, RiccatiBundle, TimeGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    pub source: std::io::Error,
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Text(String),
    Num(f64),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Num(x) => format!("{x:.16e}"),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Int(i) => (*i).into(),
            Cell::Text(s) => s.clone().into(),
            // Non-finite values have no JSON number form.
            Cell::Num(x) => serde_json::Number::from_f64(*x).map(Into::into).unwrap_or(serde_json::Value::Null),
        }
    }
}

/// Manifest entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub size: u64,
    pub sha256: String,
}

/// Writes files into one directory and records them for the manifest.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    format: Format,
    written: Vec<FileEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError { path: path.to_path_buf(), source }
}

impl OutputDir {
    pub fn create(dir: &Path, format: Format) -> Result<Self, OutputError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self { dir: dir.to_path_buf(), format, written: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn format(&self) -> Format {
        self.format
    }

    fn record(&mut self, name: &str) -> Result<(), OutputError> {
        let path = self.dir.join(name);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let entry = FileEntry {
            name: name.to_string(),
            size: bytes.len() as u64,
            sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
        };
        self.written.retain(|e| e.name != name);
        self.written.push(entry);
        Ok(())
    }

    /// Writes raw bytes.
    pub fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<(), OutputError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.record(name)
    }

    /// Pretty JSON of any serializable value.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), OutputError> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write_file(name, text.as_bytes())
    }

    /// Streams a table named `stem` in the directory's format. Returns the
    /// file name.
    pub fn write_table(
        &mut self,
        stem: &str,
        columns: &[String],
        rows: impl Iterator<Item = Vec<Cell>>,
        gzip: bool,
    ) -> Result<String, OutputError> {
        let mut name = format!("{stem}.{}", self.format.extension());
        if gzip {
            name += ".gz";
        }
        let path = self.dir.join(&name);
        let file = File::create(&path).map_err(io_err(&path))?;
        let sink: Box<dyn Write> = if gzip {
            Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
        } else {
            Box::new(BufWriter::new(file))
        };
        write_table_to(sink, self.format, columns, rows).map_err(io_err(&path))?;
        self.record(&name)?;
        Ok(name)
    }

    /// Writes `manifest.json` listing every file written so far, by name.
    pub fn write_manifest(&mut self) -> Result<Vec<FileEntry>, OutputError> {
        let mut entries: Vec<FileEntry> = self.written.iter().filter(|e| e.name != "manifest.json").cloned().collect();
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        self.write_json("manifest.json", &entries)?;
        Ok(entries)
    }
}

fn write_table_to(
    mut w: Box<dyn Write>,
    format: Format,
    columns: &[String],
    rows: impl Iterator<Item = Vec<Cell>>,
) -> std::io::Result<()> {
    match format {
        Format::Csv => {
            writeln!(w, "{}", columns.join(","))?;
            for row in rows {
                let line: Vec<String> = row.iter().map(Cell::csv).collect();
                writeln!(w, "{}", line.join(","))?;
            }
        }
        Format::Json => {
            write!(w, "{{\"columns\":")?;
            serde_json::to_writer(&mut w, columns)?;
            write!(w, ",\"rows\":[")?;
            for (i, row) in rows.enumerate() {
                if i > 0 {
                    writeln!(w, ",")?;
                } else {
                    writeln!(w)?;
                }
                serde_json::to_writer(&mut w, &row.iter().map(Cell::json).collect::<Vec<_>>())?;
            }
            writeln!(w, "\n]}}")?;
        }
    }
    w.flush()
}

/// Column names of a matrix block, row-major: `Name_ij`, or `Name_i` for a
/// column vector.
pub fn block_columns(name: &str, rows: usize, cols: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        if cols == 1 {
            out.push(format!("{name}_{i}"));
            continue;
        }
        for j in 0..cols {
            out.push(format!("{name}_{i}{j}"));
        }
    }
    out
}

fn push_block(row: &mut Vec<Cell>, m: &mflqg_core::DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            row.push(Cell::Num(m[(i, j)]));
        }
    }
}

fn knot_table<'a>(
    grid: &'a TimeGrid,
    blocks: &'a [(&'a str, &'a DensePath)],
) -> (Vec<String>, impl Iterator<Item = Vec<Cell>> + 'a) {
    let mut columns = vec!["t".to_string()];
    for (name, path) in blocks {
        let (r, c) = path.shape();
        columns.extend(block_columns(name, r, c));
    }
    let rows = (0..grid.knots()).map(move |i| {
        let mut row = vec![Cell::Num(grid.time(i))];
        for (_, path) in blocks {
            push_block(&mut row, path.knot(i));
        }
        row
    });
    (columns, rows)
}

/// `riccati.*`: `t, Sigma, Phi, Psi, Ex, Ep, Gamma, Lambda` at the knots.
pub fn write_riccati(out: &mut OutputDir, b: &RiccatiBundle) -> Result<String, OutputError> {
    let blocks = [
        ("Sigma", &b.sigma),
        ("Phi", &b.phi),
        ("Psi", &b.psi),
        ("Ex", &b.ex),
        ("Ep", &b.ep),
        ("Gamma", &b.gamma),
        ("Lambda", &b.lambda),
    ];
    let (columns, rows) = knot_table(&b.grid, &blocks);
    out.write_table("riccati", &columns, rows, false)
}

/// `law.*`: `t, Kx, Km, u0` at the knots.
pub fn write_law(out: &mut OutputDir, grid: &TimeGrid, law: &FeedbackLaw) -> Result<String, OutputError> {
    let blocks = [("Kx", &law.gain_filter), ("Km", &law.gain_mean), ("u0", &law.offset)];
    let (columns, rows) = knot_table(grid, &blocks);
    out.write_table("law", &columns, rows, false)
}

/// `cost.*`: one `term,value` row per closed-form term, then `J_analytic`.
pub fn write_cost(out: &mut OutputDir, cost: &CostTerms) -> Result<String, OutputError> {
    let columns = vec!["term".to_string(), "value".to_string()];
    let rows = cost
        .terms
        .iter()
        .map(|(n, v)| vec![Cell::Text(n.clone()), Cell::Num(*v)])
        .chain(std::iter::once(vec![Cell::Text("J_analytic".into()), Cell::Num(cost.total)]));
    out.write_table("cost", &columns, rows, false)
}

/// `paths.*`: long format, one row per recorded path and knot.
pub fn write_paths(
    out: &mut OutputDir,
    grid: &TimeGrid,
    records: &[(u64, PathRecord)],
    gzip: bool,
) -> Result<String, OutputError> {
    let Some((_, first)) = records.first() else {
        return out.write_table("paths", &["path_id".to_string(), "t".to_string()], std::iter::empty(), gzip);
    };
    let (n, rt, k) = (first.n, first.rt, first.k);
    let mut columns = vec!["path_id".to_string(), "t".to_string()];
    columns.extend((0..n).map(|i| format!("x_{i}")));
    columns.extend((0..rt).map(|i| format!("Y_{i}")));
    columns.extend((0..n).map(|i| format!("xhat_{i}")));
    columns.extend((0..k).map(|i| format!("u_{i}")));
    let rows = records.iter().flat_map(|(id, rec)| {
        (0..rec.knots).map(move |i| {
            let mut row = vec![Cell::Int(*id), Cell::Num(grid.time(i))];
            row.extend(rec.x_at(i).iter().map(|v| Cell::Num(*v)));
            row.extend(rec.y_at(i).iter().map(|v| Cell::Num(*v)));
            row.extend(rec.xhat_at(i).iter().map(|v| Cell::Num(*v)));
            row.extend(rec.u_at(i).iter().map(|v| Cell::Num(*v)));
            row
        })
    });
    out.write_table("paths", &columns, rows, gzip)
}
