//! Reconstruction of logical tables from sequence rows: slicing by shell
//! position, numeric coercion with jam offsetting, estimate/MOE interleaving,
//! geography join, national stacking and CSV output.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ingest::{IngestError, SequenceRow};
use crate::model::{CellValue, ColumnDef, DatasetId, GeoRecord, TableShell};

pub const ANNOTATION_SUFFIX: &str = "_ann";

pub const DEFAULT_JAM_TOKENS: [&str; 9] = [
    "",
    ".",
    "*****",
    "-222222222",
    "-333333333",
    "-555555555",
    "-666666666",
    "-888888888",
    "-999999999",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKind {
    Overlap,
    Gap,
}

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("sequence {sequence}: {kind:?} at table {table_id}: {detail}")]
    Partition {
        sequence: u32,
        kind: PartitionKind,
        table_id: String,
        detail: String,
    },
    #[error("table {table_id} not in sequence {sequence}")]
    UnknownTable { sequence: u32, table_id: String },
    #[error("table {table_id}, logrecno {logrecno}: cells {start}..{end} exceed row width {width}")]
    Bounds {
        table_id: String,
        logrecno: u32,
        start: u32,
        end: u32,
        width: usize,
    },
    #[error("no geography for ({stusab}, {logrecno})")]
    UnknownGeography { stusab: String, logrecno: u32 },
    #[error("table {table_id}: column lines {found:?} do not match 1..={expected}")]
    ColumnMismatch {
        table_id: String,
        expected: u32,
        found: Vec<u32>,
    },
    #[error("{0} already exists (pass overwrite to replace it)")]
    WouldOverwrite(PathBuf),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Which tokens are treated as non-numeric sentinels, and whether their
/// annotation columns are written to CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JamPolicy {
    pub jam_tokens: BTreeSet<String>,
    pub annotations_enabled: bool,
}

impl Default for JamPolicy {
    fn default() -> Self {
        JamPolicy {
            jam_tokens: DEFAULT_JAM_TOKENS.iter().map(|s| s.to_string()).collect(),
            annotations_enabled: false,
        }
    }
}

impl JamPolicy {
    pub fn with_annotations(mut self, enabled: bool) -> Self {
        self.annotations_enabled = enabled;
        self
    }
}

/// `[+-]? (digits [. digits?] | . digits) ([eE] [+-]? digits)?`
pub fn is_decimal_literal(token: &str) -> bool {
    let b = token.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return false;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return false;
        }
    }
    i == b.len()
}

pub fn coerce_cell(token: &str, policy: &JamPolicy) -> CellValue {
    if policy.jam_tokens.contains(token) || !is_decimal_literal(token) {
        return CellValue::Jam(token.to_string());
    }
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => CellValue::Numeric(if v == 0.0 { 0.0 } else { v }),
        _ => CellValue::Jam(token.to_string()),
    }
}

/// Integral values print without a fractional part; everything else prints
/// as the shortest decimal that round-trips.
pub fn format_numeric(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    format!("{value}")
}

pub fn slice_table_cells(
    row: &SequenceRow,
    shell: &TableShell,
    policy: &JamPolicy,
) -> Result<(Vec<CellValue>, Vec<CellValue>), AssembleError> {
    let start = shell.start_position as usize - 1;
    let end = start + shell.cell_count as usize;
    if end > row.estimates.len() || end > row.margins.len() {
        return Err(AssembleError::Bounds {
            table_id: shell.table_id.clone(),
            logrecno: row.logrecno,
            start: shell.start_position,
            end: shell.start_position + shell.cell_count - 1,
            width: row.estimates.len().min(row.margins.len()),
        });
    }
    let coerce = |tokens: &[String]| tokens.iter().map(|t| coerce_cell(t, policy)).collect();
    Ok((coerce(&row.estimates[start..end]), coerce(&row.margins[start..end])))
}

/// The validated table layout of one sequence. Construction fails unless the
/// shells tile `1..=width` exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    sequence: u32,
    shells: Vec<TableShell>,
    width: u32,
}

impl SequenceLayout {
    /// Width is declared as the sum of the shells' cell counts.
    pub fn new(sequence: u32, shells: Vec<TableShell>) -> Result<Self, AssembleError> {
        let width = shells.iter().map(|s| s.cell_count).sum();
        Self::with_width(sequence, shells, width)
    }

    pub fn with_width(
        sequence: u32,
        mut shells: Vec<TableShell>,
        width: u32,
    ) -> Result<Self, AssembleError> {
        shells.sort_by_key(|s| (s.start_position, s.table_id.clone()));
        let mut cursor = 1u32;
        for shell in &shells {
            let partition = |kind, detail: String| AssembleError::Partition {
                sequence,
                kind,
                table_id: shell.table_id.clone(),
                detail,
            };
            if shell.start_position < cursor {
                return Err(partition(
                    PartitionKind::Overlap,
                    format!("starts at {} but cells up to {} are taken", shell.start_position, cursor - 1),
                ));
            }
            if shell.start_position > cursor {
                return Err(partition(
                    PartitionKind::Gap,
                    format!("cells {}..{} are not covered", cursor, shell.start_position - 1),
                ));
            }
            cursor = shell.end_position();
        }
        let last = shells.last().map(|s| s.table_id.clone()).unwrap_or_default();
        if cursor - 1 < width {
            return Err(AssembleError::Partition {
                sequence,
                kind: PartitionKind::Gap,
                table_id: last,
                detail: format!("shells end at {} of declared width {}", cursor - 1, width),
            });
        }
        if cursor - 1 > width {
            return Err(AssembleError::Partition {
                sequence,
                kind: PartitionKind::Overlap,
                table_id: last,
                detail: format!("shells run to {} past declared width {}", cursor - 1, width),
            });
        }
        Ok(SequenceLayout {
            sequence,
            shells,
            width,
        })
    }

    pub fn sequence(&self) -> u32 {
        self.sequence
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn shells(&self) -> &[TableShell] {
        &self.shells
    }

    pub fn shell(&self, table_id: &str) -> Option<&TableShell> {
        self.shells.iter().find(|s| s.table_id == table_id)
    }
}

/// Geography attributes projected onto every assembled row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeoField {
    Name,
    Geoid,
    Stusab,
    Sumlevel,
    Logrecno,
}

impl GeoField {
    pub const DEFAULT: [GeoField; 4] = [GeoField::Name, GeoField::Geoid, GeoField::Stusab, GeoField::Sumlevel];

    pub fn header(self) -> &'static str {
        match self {
            GeoField::Name => "name",
            GeoField::Geoid => "geoid",
            GeoField::Stusab => "stusab",
            GeoField::Sumlevel => "sumlevel",
            GeoField::Logrecno => "logrecno",
        }
    }

    pub fn parse(s: &str) -> Option<GeoField> {
        [GeoField::Name, GeoField::Geoid, GeoField::Stusab, GeoField::Sumlevel, GeoField::Logrecno]
            .into_iter()
            .find(|f| f.header() == s)
    }

    fn project(self, geo: &GeoRecord) -> String {
        match self {
            GeoField::Name => geo.name.clone(),
            GeoField::Geoid => geo.geoid.clone(),
            GeoField::Stusab => geo.stusab.clone(),
            GeoField::Sumlevel => geo.sumlevel.clone(),
            GeoField::Logrecno => geo.logrecno.to_string(),
        }
    }
}

pub type GeoIndex = HashMap<(String, u32), GeoRecord>;

pub fn build_geo_index<I: IntoIterator<Item = GeoRecord>>(records: I) -> GeoIndex {
    records
        .into_iter()
        .map(|g| ((g.stusab.clone(), g.logrecno), g))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledRow {
    pub stusab: String,
    pub logrecno: u32,
    pub geo: Vec<String>,
    /// Interleaved per line: estimate, margin.
    pub cells: Vec<CellValue>,
}

impl AssembledRow {
    /// CSV fields in header order.
    pub fn fields(&self, annotations: bool) -> Vec<String> {
        let mut out = self.geo.clone();
        out.reserve(self.cells.len() * if annotations { 2 } else { 1 });
        for pair in self.cells.chunks(2) {
            for cell in pair {
                out.push(cell.as_f64().map(format_numeric).unwrap_or_default());
            }
            if annotations {
                for cell in pair {
                    out.push(match cell {
                        CellValue::Jam(token) => token.clone(),
                        CellValue::Numeric(_) => String::new(),
                    });
                }
            }
        }
        out
    }
}

/// A reconstructed national table.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledTable {
    pub dataset_id: DatasetId,
    pub table_id: String,
    pub geo_header: Vec<String>,
    pub data_header: Vec<String>,
    pub annotations: bool,
    pub rows: Vec<AssembledRow>,
}

pub fn data_header(columns: &[ColumnDef], annotations: bool) -> Vec<String> {
    let mut out = Vec::with_capacity(columns.len() * if annotations { 4 } else { 2 });
    for col in columns {
        out.push(col.column_id.clone());
        out.push(col.moe_column_id.clone());
        if annotations {
            out.push(format!("{}{ANNOTATION_SUFFIX}", col.column_id));
            out.push(format!("{}{ANNOTATION_SUFFIX}", col.moe_column_id));
        }
    }
    out
}

impl AssembledTable {
    pub fn header(&self) -> impl Iterator<Item = &str> {
        self.geo_header.iter().chain(&self.data_header).map(String::as_str)
    }

    pub fn width(&self) -> usize {
        self.geo_header.len() + self.data_header.len()
    }

    /// (numeric, jam) cell counts.
    pub fn cell_counts(&self) -> (usize, usize) {
        self.rows
            .iter()
            .flat_map(|r| &r.cells)
            .fold((0, 0), |(n, j), c| if c.is_jam() { (n, j + 1) } else { (n + 1, j) })
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.dataset_id)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), AssembleError> {
        let mut csv = table_csv_writer(writer);
        csv.write_record(self.header())?;
        for row in &self.rows {
            csv.write_record(row.fields(self.annotations))?;
        }
        csv.flush().map_err(|source| AssembleError::Io {
            path: PathBuf::new(),
            source,
        })?;
        Ok(())
    }
}

/// CSV dialect of every emitted table: comma, minimal quoting, `\n`.
pub fn table_csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(writer)
}

/// Accumulates one table's rows from a stream of sequence rows.
pub struct TableAssembler<'a> {
    shell: &'a TableShell,
    policy: &'a JamPolicy,
    geo_fields: &'a [GeoField],
    table: AssembledTable,
}

impl<'a> TableAssembler<'a> {
    pub fn new(
        dataset_id: DatasetId,
        shell: &'a TableShell,
        columns: &[ColumnDef],
        policy: &'a JamPolicy,
        geo_fields: &'a [GeoField],
    ) -> Result<Self, AssembleError> {
        let lines: Vec<u32> = columns.iter().map(|c| c.line).collect();
        let matches = columns.len() == shell.cell_count as usize
            && columns.iter().all(|c| c.table_id == shell.table_id)
            && lines.iter().zip(1..).all(|(&l, want)| l == want);
        if !matches {
            return Err(AssembleError::ColumnMismatch {
                table_id: shell.table_id.clone(),
                expected: shell.cell_count,
                found: lines,
            });
        }
        Ok(TableAssembler {
            shell,
            policy,
            geo_fields,
            table: AssembledTable {
                dataset_id,
                table_id: shell.table_id.clone(),
                geo_header: geo_fields.iter().map(|f| f.header().to_string()).collect(),
                data_header: data_header(columns, policy.annotations_enabled),
                annotations: policy.annotations_enabled,
                rows: Vec::new(),
            },
        })
    }

    pub fn push(&mut self, row: &SequenceRow, geo_index: &GeoIndex) -> Result<(), AssembleError> {
        let key = (row.stusab.clone(), row.logrecno);
        let geo = geo_index.get(&key).ok_or_else(|| AssembleError::UnknownGeography {
            stusab: row.stusab.clone(),
            logrecno: row.logrecno,
        })?;
        let (estimates, margins) = slice_table_cells(row, self.shell, self.policy)?;
        let mut cells = Vec::with_capacity(estimates.len() * 2);
        for (e, m) in estimates.into_iter().zip(margins) {
            cells.push(e);
            cells.push(m);
        }
        self.table.rows.push(AssembledRow {
            stusab: key.0,
            logrecno: key.1,
            geo: self.geo_fields.iter().map(|f| f.project(geo)).collect(),
            cells,
        });
        Ok(())
    }

    pub fn finish(mut self) -> AssembledTable {
        self.table
            .rows
            .sort_by(|a, b| (&a.stusab, a.logrecno).cmp(&(&b.stusab, b.logrecno)));
        self.table
    }
}

/// Assemble one table from every row of its sequence across all states.
pub fn assemble_table<I>(
    dataset_id: DatasetId,
    layout: &SequenceLayout,
    table_id: &str,
    columns: &[ColumnDef],
    rows: I,
    geo_index: &GeoIndex,
    policy: &JamPolicy,
) -> Result<AssembledTable, AssembleError>
where
    I: IntoIterator<Item = Result<SequenceRow, IngestError>>,
{
    let shell = layout.shell(table_id).ok_or_else(|| AssembleError::UnknownTable {
        sequence: layout.sequence(),
        table_id: table_id.to_string(),
    })?;
    let mut assembler = TableAssembler::new(dataset_id, shell, columns, policy, &GeoField::DEFAULT)?;
    for row in rows {
        assembler.push(&row?, geo_index)?;
    }
    Ok(assembler.finish())
}

/// Write `{dataset_id}.csv` into `out_dir`.
pub fn write_table_csv(
    table: &AssembledTable,
    out_dir: &Path,
    overwrite: bool,
) -> Result<PathBuf, AssembleError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AssembleError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join(table.file_name());
    if path.exists() && !overwrite {
        return Err(AssembleError::WouldOverwrite(path));
    }
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut writer = BufWriter::new(file);
    table.write_csv(&mut writer)?;
    writer.flush().map_err(io_err(&path))?;
    Ok(path)
}
