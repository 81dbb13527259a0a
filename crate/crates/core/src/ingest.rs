//! Source-tree discovery and streaming parsers for lookup, geography and
//! estimate/margin sequence files.
//!
//! Canonical layout under `{root}/{year}_{period}/`:
//!
//! ```text
//! lookup.csv
//! geo/g{year}{p}{stusab}.csv
//! data/e{year}{p}{stusab}{seq:04}000.txt
//! data/m{year}{p}{stusab}{seq:04}000.txt
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{
    slugify, table_subject_id, validate_table_id, ColumnDef, GeoRecord, ModelError, Release,
    SubjectRef, TableShell,
};

pub const LOOKUP_HEADER: [&str; 10] = [
    "FILEID",
    "TABLE_ID",
    "SEQUENCE",
    "LINE",
    "START_POSITION",
    "TOTAL_CELLS",
    "SUBJECT_ID",
    "SUBJECT_NAME",
    "TITLE",
    "UNIVERSE",
];

pub const GEO_HEADER: [&str; 6] = ["FILEID", "STUSAB", "SUMLEVEL", "LOGRECNO", "GEOID", "NAME"];

/// Number of leading key fields on every sequence data row.
pub const SEQUENCE_KEY_FIELDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileRole {
    Estimate,
    Margin,
}

impl FileRole {
    pub fn prefix(self) -> char {
        match self {
            FileRole::Estimate => 'e',
            FileRole::Margin => 'm',
        }
    }

    pub fn filetype(self) -> &'static str {
        match self {
            FileRole::Estimate => "est",
            FileRole::Margin => "moe",
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("release directory {0} does not exist")]
    MissingReleaseDir(PathBuf),
    #[error("missing files in {dir}: {detail} ({pairs} data pairs found)")]
    MissingFiles {
        dir: PathBuf,
        detail: String,
        pairs: usize,
    },
    #[error("unpaired sequence file for ({stusab}, {sequence}): {missing:?} file missing")]
    UnpairedFile {
        stusab: String,
        sequence: u32,
        missing: FileRole,
    },
    #[error("state {0} has data files but no geography file")]
    MissingGeography(String),
    #[error("{path}:{line}: column record before any table header record")]
    OrphanColumn { path: PathBuf, line: u64 },
    #[error("{path}:{line}: column record for {table_id} follows header of {current}")]
    ColumnTableMismatch {
        path: PathBuf,
        line: u64,
        table_id: String,
        current: String,
    },
    #[error("duplicate column ({table_id}, line {line})")]
    DuplicateColumn { table_id: String, line: u32 },
    #[error("duplicate table header for {0}")]
    DuplicateTable(String),
    #[error("table {0} declares zero cells")]
    DegenerateTable(String),
    #[error("table {table_id} declares {declared} cells but lists lines {lines:?}")]
    LineMismatch {
        table_id: String,
        declared: u32,
        lines: Vec<u32>,
    },
    #[error("table {table_id} does not embed subject {subject_id}")]
    SubjectMismatch { table_id: String, subject_id: String },
    #[error("subject {subject_id} named both {first:?} and {second:?}")]
    ConflictingSubject {
        subject_id: String,
        first: String,
        second: String,
    },
    #[error("{path}:{line}: field {field}: {value:?} is not a valid number")]
    BadNumber {
        path: PathBuf,
        line: u64,
        field: &'static str,
        value: String,
    },
    #[error("{path}: unexpected header {found:?}")]
    BadHeader { path: PathBuf, found: Vec<String> },
    #[error("{path}:{line}: {detail}")]
    Malformed {
        path: PathBuf,
        line: u64,
        detail: String,
    },
    #[error("{path}: duplicate logrecno {logrecno} for {stusab}")]
    DuplicateLogrecno {
        path: PathBuf,
        stusab: String,
        logrecno: u32,
    },
    #[error("{path}:{line}: malformed sumlevel {sumlevel:?}")]
    BadSumlevel {
        path: PathBuf,
        line: u64,
        sumlevel: String,
    },
    #[error("estimate and margin files differ in length: {longer} has rows beyond row {paired_rows}")]
    RowCountMismatch { longer: PathBuf, paired_rows: u64 },
    #[error("row {row}: estimate key ({est_stusab}, {est_sequence}, {est_logrecno}) != margin key ({moe_stusab}, {moe_sequence}, {moe_logrecno})")]
    KeyMismatch {
        row: u64,
        est_stusab: String,
        est_sequence: u32,
        est_logrecno: u32,
        moe_stusab: String,
        moe_sequence: u32,
        moe_logrecno: u32,
    },
    #[error("{path}: logrecno {logrecno} has {found} cells, expected {expected}")]
    WidthMismatch {
        path: PathBuf,
        logrecno: u32,
        found: usize,
        expected: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IngestError + '_ {
    move |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequencePaths {
    pub estimate: PathBuf,
    pub margin: PathBuf,
}

/// Every source file of one release, in deterministic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleaseManifest {
    pub release: Release,
    pub root: PathBuf,
    pub lookup_path: PathBuf,
    pub geo_paths: BTreeMap<String, PathBuf>,
    pub data_pairs: BTreeMap<(String, u32), SequencePaths>,
}

impl ReleaseManifest {
    pub fn release_dir(&self) -> PathBuf {
        self.root.join(self.release.dir_name())
    }

    pub fn sequences(&self) -> BTreeSet<u32> {
        self.data_pairs.keys().map(|(_, seq)| *seq).collect()
    }

    pub fn states(&self) -> impl Iterator<Item = &str> {
        self.geo_paths.keys().map(String::as_str)
    }
}

pub fn geo_file_name(release: Release, stusab: &str) -> String {
    format!(
        "g{}{}{}.csv",
        release.year(),
        release.period().digit(),
        stusab.to_ascii_lowercase()
    )
}

pub fn data_file_name(release: Release, role: FileRole, stusab: &str, sequence: u32) -> String {
    format!(
        "{}{}{}{}{:04}000.txt",
        role.prefix(),
        release.year(),
        release.period().digit(),
        stusab.to_ascii_lowercase(),
        sequence
    )
}

fn release_stem(release: Release) -> String {
    format!("{}{}", release.year(), release.period().digit())
}

fn parse_geo_file_name(release: Release, name: &str) -> Option<String> {
    let rest = name.strip_prefix('g')?.strip_prefix(&release_stem(release))?;
    let stusab = rest.strip_suffix(".csv")?;
    (stusab.len() == 2 && stusab.bytes().all(|b| b.is_ascii_alphabetic()))
        .then(|| stusab.to_ascii_uppercase())
}

fn parse_data_file_name(release: Release, name: &str) -> Option<(FileRole, String, u32)> {
    let role = match name.chars().next()? {
        'e' => FileRole::Estimate,
        'm' => FileRole::Margin,
        _ => return None,
    };
    let rest = name[1..].strip_prefix(&release_stem(release))?;
    let rest = rest.strip_suffix("000.txt")?;
    if rest.len() != 6 || !rest.is_char_boundary(2) {
        return None;
    }
    let (stusab, seq) = rest.split_at(2);
    if !stusab.bytes().all(|b| b.is_ascii_alphabetic()) || !seq.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let sequence: u32 = seq.parse().ok()?;
    (sequence > 0).then(|| (role, stusab.to_ascii_uppercase(), sequence))
}

fn list_dir(dir: &Path) -> Result<Vec<String>, IngestError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(dir))?.is_file() {
            if let Some(name) = entry.file_name().to_str() {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Enumerate the release's source files under `root`.
pub fn discover_release(root: &Path, release: Release) -> Result<ReleaseManifest, IngestError> {
    let dir = root.join(release.dir_name());
    if !dir.is_dir() {
        return Err(IngestError::MissingReleaseDir(dir));
    }

    let geo_dir = dir.join("geo");
    let geo_paths: BTreeMap<String, PathBuf> = list_dir(&geo_dir)?
        .into_iter()
        .filter_map(|name| parse_geo_file_name(release, &name).map(|s| (s, geo_dir.join(&name))))
        .collect();

    let data_dir = dir.join("data");
    let mut estimates = BTreeMap::new();
    let mut margins = BTreeMap::new();
    for name in list_dir(&data_dir)? {
        if let Some((role, stusab, sequence)) = parse_data_file_name(release, &name) {
            let target = match role {
                FileRole::Estimate => &mut estimates,
                FileRole::Margin => &mut margins,
            };
            target.insert((stusab, sequence), data_dir.join(&name));
        }
    }

    let lookup_path = dir.join("lookup.csv");
    if !lookup_path.is_file() || estimates.is_empty() && margins.is_empty() {
        let mut missing = Vec::new();
        if !lookup_path.is_file() {
            missing.push("lookup.csv");
        }
        if estimates.is_empty() && margins.is_empty() {
            missing.push("data/ sequence files");
        }
        return Err(IngestError::MissingFiles {
            dir,
            detail: missing.join(", "),
            pairs: 0,
        });
    }

    let mut data_pairs = BTreeMap::new();
    for (key, estimate) in &estimates {
        match margins.remove(key) {
            Some(margin) => {
                data_pairs.insert(
                    key.clone(),
                    SequencePaths {
                        estimate: estimate.clone(),
                        margin,
                    },
                );
            }
            None => {
                return Err(IngestError::UnpairedFile {
                    stusab: key.0.clone(),
                    sequence: key.1,
                    missing: FileRole::Margin,
                })
            }
        }
    }
    if let Some(((stusab, sequence), _)) = margins.into_iter().next() {
        return Err(IngestError::UnpairedFile {
            stusab,
            sequence,
            missing: FileRole::Estimate,
        });
    }
    if let Some((stusab, _)) = data_pairs.keys().find(|(s, _)| !geo_paths.contains_key(s)) {
        return Err(IngestError::MissingGeography(stusab.clone()));
    }

    Ok(ReleaseManifest {
        release,
        root: root.to_path_buf(),
        lookup_path,
        geo_paths,
        data_pairs,
    })
}

/// Parsed contents of a lookup file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lookup {
    /// Ordered by (sequence, start_position).
    pub shells: Vec<TableShell>,
    /// Ordered by (table_id, line).
    pub columns: Vec<ColumnDef>,
    /// Deduplicated, ordered by subject_id.
    pub subjects: Vec<SubjectRef>,
}

impl Lookup {
    pub fn columns_of<'a>(&'a self, table_id: &'a str) -> impl Iterator<Item = &'a ColumnDef> + 'a {
        let start = self.columns.partition_point(|c| c.table_id.as_str() < table_id);
        self.columns[start..]
            .iter()
            .take_while(move |c| c.table_id == table_id)
    }

    pub fn subject(&self, subject_id: &str) -> Option<&SubjectRef> {
        self.subjects.iter().find(|s| s.subject_id == subject_id)
    }

    pub fn shell(&self, table_id: &str) -> Option<&TableShell> {
        self.shells.iter().find(|s| s.table_id == table_id)
    }
}

fn open_csv(path: &Path, has_headers: bool) -> Result<csv::Reader<BufReader<File>>, IngestError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .flexible(true)
        .from_reader(BufReader::new(file)))
}

fn check_header<R: io::Read>(
    path: &Path,
    reader: &mut csv::Reader<R>,
    expected: &[&str],
) -> Result<(), IngestError> {
    let header = reader.headers().map_err(csv_err(path))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(IngestError::BadHeader {
            path: path.to_path_buf(),
            found: header.iter().map(str::to_string).collect(),
        });
    }
    Ok(())
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_u32(
    path: &Path,
    line: u64,
    field: &'static str,
    value: &str,
) -> Result<u32, IngestError> {
    value.trim().parse().map_err(|_| IngestError::BadNumber {
        path: path.to_path_buf(),
        line,
        field,
        value: value.to_string(),
    })
}

pub fn parse_lookup(path: &Path) -> Result<Lookup, IngestError> {
    let mut reader = open_csv(path, true)?;
    check_header(path, &mut reader, &LOOKUP_HEADER)?;

    let mut shells: Vec<TableShell> = Vec::new();
    let mut columns: Vec<ColumnDef> = Vec::new();
    let mut subjects: BTreeMap<String, SubjectRef> = BTreeMap::new();
    let mut seen_columns: HashSet<(String, u32)> = HashSet::new();
    let mut seen_tables: HashSet<String> = HashSet::new();

    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(csv_err(path))? {
        let line = record_line(&record);
        if record.len() != LOOKUP_HEADER.len() {
            return Err(IngestError::Malformed {
                path: path.to_path_buf(),
                line,
                detail: format!("expected {} fields, found {}", LOOKUP_HEADER.len(), record.len()),
            });
        }
        let table_id = record[1].trim();
        let line_field = record[3].trim();

        if line_field.is_empty() {
            validate_table_id(table_id)?;
            if !seen_tables.insert(table_id.to_string()) {
                return Err(IngestError::DuplicateTable(table_id.to_string()));
            }
            let subject_id = record[6].trim();
            if table_subject_id(table_id) != Some(subject_id) {
                return Err(IngestError::SubjectMismatch {
                    table_id: table_id.to_string(),
                    subject_id: subject_id.to_string(),
                });
            }
            let subject_name = &record[7];
            match subjects.get(subject_id) {
                Some(existing) if existing.name != subject_name => {
                    return Err(IngestError::ConflictingSubject {
                        subject_id: subject_id.to_string(),
                        first: existing.name.clone(),
                        second: subject_name.to_string(),
                    })
                }
                Some(_) => {}
                None => {
                    subjects.insert(subject_id.to_string(), SubjectRef::new(subject_id, subject_name)?);
                }
            }
            let sequence = parse_u32(path, line, "SEQUENCE", &record[2])?;
            let start_position = parse_u32(path, line, "START_POSITION", &record[4])?;
            let cell_count = parse_u32(path, line, "TOTAL_CELLS", &record[5])?;
            if cell_count == 0 {
                return Err(IngestError::DegenerateTable(table_id.to_string()));
            }
            if sequence == 0 || start_position == 0 {
                return Err(IngestError::Malformed {
                    path: path.to_path_buf(),
                    line,
                    detail: "sequence and start position are 1-based".into(),
                });
            }
            let title = &record[8];
            shells.push(TableShell {
                table_id: table_id.to_string(),
                subject_id: subject_id.to_string(),
                sequence,
                start_position,
                cell_count,
                title: title.to_string(),
                universe: record[9].to_string(),
                slug: slugify(title)?,
            });
        } else {
            let Some(current) = shells.last() else {
                return Err(IngestError::OrphanColumn {
                    path: path.to_path_buf(),
                    line,
                });
            };
            if current.table_id != table_id {
                return Err(IngestError::ColumnTableMismatch {
                    path: path.to_path_buf(),
                    line,
                    table_id: table_id.to_string(),
                    current: current.table_id.clone(),
                });
            }
            let line_no = parse_u32(path, line, "LINE", line_field)?;
            if !seen_columns.insert((table_id.to_string(), line_no)) {
                return Err(IngestError::DuplicateColumn {
                    table_id: table_id.to_string(),
                    line: line_no,
                });
            }
            columns.push(ColumnDef::new(table_id, line_no, &record[8])?);
        }
    }

    columns.sort_by(|a, b| (&a.table_id, a.line).cmp(&(&b.table_id, b.line)));
    for shell in &shells {
        let start = columns.partition_point(|c| c.table_id < shell.table_id);
        let lines: Vec<u32> = columns[start..]
            .iter()
            .take_while(|c| c.table_id == shell.table_id)
            .map(|c| c.line)
            .collect();
        if lines.len() != shell.cell_count as usize
            || lines.iter().zip(1..).any(|(&l, expected)| l != expected)
        {
            return Err(IngestError::LineMismatch {
                table_id: shell.table_id.clone(),
                declared: shell.cell_count,
                lines,
            });
        }
    }
    shells.sort_by_key(|s| (s.sequence, s.start_position));

    Ok(Lookup {
        shells,
        columns,
        subjects: subjects.into_values().collect(),
    })
}

fn is_valid_sumlevel(s: &str) -> bool {
    s.len() == 3 && s.bytes().all(|b| b.is_ascii_alphanumeric())
}

/// Parse one state's geography file; records are returned in file order.
pub fn parse_geography(path: &Path) -> Result<Vec<GeoRecord>, IngestError> {
    let mut reader = open_csv(path, true)?;
    check_header(path, &mut reader, &GEO_HEADER)?;

    let mut seen: HashSet<(String, u32)> = HashSet::new();
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(csv_err(path))? {
        let line = record_line(&record);
        if record.len() != GEO_HEADER.len() {
            return Err(IngestError::Malformed {
                path: path.to_path_buf(),
                line,
                detail: format!("expected {} fields, found {}", GEO_HEADER.len(), record.len()),
            });
        }
        let sumlevel = &record[2];
        if !is_valid_sumlevel(sumlevel) {
            return Err(IngestError::BadSumlevel {
                path: path.to_path_buf(),
                line,
                sumlevel: sumlevel.to_string(),
            });
        }
        let stusab = record[1].to_string();
        let logrecno = parse_u32(path, line, "LOGRECNO", &record[3])?;
        if !seen.insert((stusab.clone(), logrecno)) {
            return Err(IngestError::DuplicateLogrecno {
                path: path.to_path_buf(),
                stusab,
                logrecno,
            });
        }
        out.push(GeoRecord {
            stusab,
            logrecno,
            geoid: record[4].to_string(),
            name: record[5].to_string(),
            sumlevel: sumlevel.to_string(),
        });
    }
    Ok(out)
}

/// One logical record of a sequence with its estimate and margin cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceRow {
    pub stusab: String,
    pub sequence: u32,
    pub logrecno: u32,
    pub estimates: Vec<String>,
    pub margins: Vec<String>,
}

impl SequenceRow {
    pub fn width(&self) -> usize {
        self.estimates.len()
    }
}

struct KeyedRecord {
    stusab: String,
    sequence: u32,
    logrecno: u32,
    cells: Vec<String>,
}

struct SequenceFile {
    path: PathBuf,
    role: FileRole,
    reader: csv::Reader<BufReader<File>>,
    record: csv::StringRecord,
}

impl SequenceFile {
    fn open(path: &Path, role: FileRole) -> Result<Self, IngestError> {
        Ok(SequenceFile {
            path: path.to_path_buf(),
            role,
            reader: open_csv(path, false)?,
            record: csv::StringRecord::new(),
        })
    }

    fn next_record(&mut self, expected_width: usize) -> Result<Option<KeyedRecord>, IngestError> {
        if !self.reader.read_record(&mut self.record).map_err(csv_err(&self.path))? {
            return Ok(None);
        }
        let record = &self.record;
        let line = record_line(record);
        if record.len() < SEQUENCE_KEY_FIELDS {
            return Err(IngestError::Malformed {
                path: self.path.clone(),
                line,
                detail: format!("expected at least {SEQUENCE_KEY_FIELDS} key fields"),
            });
        }
        if &record[1] != self.role.filetype() {
            return Err(IngestError::Malformed {
                path: self.path.clone(),
                line,
                detail: format!("FILETYPE {:?}, expected {:?}", &record[1], self.role.filetype()),
            });
        }
        let sequence = parse_u32(&self.path, line, "SEQUENCE", &record[4])?;
        let logrecno = parse_u32(&self.path, line, "LOGRECNO", &record[5])?;
        let found = record.len() - SEQUENCE_KEY_FIELDS;
        if found != expected_width {
            return Err(IngestError::WidthMismatch {
                path: self.path.clone(),
                logrecno,
                found,
                expected: expected_width,
            });
        }
        Ok(Some(KeyedRecord {
            stusab: record[2].to_string(),
            sequence,
            logrecno,
            cells: record.iter().skip(SEQUENCE_KEY_FIELDS).map(str::to_string).collect(),
        }))
    }
}

/// Lazily pairs estimate and margin rows by position. Holds one row of each
/// file at a time.
pub struct SequencePairReader {
    estimates: SequenceFile,
    margins: SequenceFile,
    expected_width: usize,
    rows: u64,
    done: bool,
}

impl SequencePairReader {
    pub fn rows_read(&self) -> u64 {
        self.rows
    }

    fn advance(&mut self) -> Result<Option<SequenceRow>, IngestError> {
        let est = self.estimates.next_record(self.expected_width)?;
        let moe = self.margins.next_record(self.expected_width)?;
        match (est, moe) {
            (None, None) => Ok(None),
            (Some(_), None) => Err(IngestError::RowCountMismatch {
                longer: self.estimates.path.clone(),
                paired_rows: self.rows,
            }),
            (None, Some(_)) => Err(IngestError::RowCountMismatch {
                longer: self.margins.path.clone(),
                paired_rows: self.rows,
            }),
            (Some(e), Some(m)) => {
                self.rows += 1;
                if (&e.stusab, e.sequence, e.logrecno) != (&m.stusab, m.sequence, m.logrecno) {
                    return Err(IngestError::KeyMismatch {
                        row: self.rows,
                        est_stusab: e.stusab,
                        est_sequence: e.sequence,
                        est_logrecno: e.logrecno,
                        moe_stusab: m.stusab,
                        moe_sequence: m.sequence,
                        moe_logrecno: m.logrecno,
                    });
                }
                Ok(Some(SequenceRow {
                    stusab: e.stusab,
                    sequence: e.sequence,
                    logrecno: e.logrecno,
                    estimates: e.cells,
                    margins: m.cells,
                }))
            }
        }
    }
}

impl Iterator for SequencePairReader {
    type Item = Result<SequenceRow, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.advance().transpose();
        if !matches!(item, Some(Ok(_))) {
            self.done = true;
        }
        item
    }
}

pub fn stream_sequence_pair(
    estimate_path: &Path,
    margin_path: &Path,
    expected_width: usize,
) -> Result<SequencePairReader, IngestError> {
    Ok(SequencePairReader {
        estimates: SequenceFile::open(estimate_path, FileRole::Estimate)?,
        margins: SequenceFile::open(margin_path, FileRole::Margin)?,
        expected_width,
        rows: 0,
        done: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Period;
    use std::fmt::Write as _;

    fn release() -> Release {
        Release::new(2014, Period::FiveYear).unwrap()
    }

    fn write(path: &Path, contents: &str) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, contents).unwrap();
    }

    fn seq_lines(role: FileRole, stusab: &str, seq: u32, rows: &[(u32, Vec<&str>)]) -> String {
        let mut out = String::new();
        for (logrecno, cells) in rows {
            writeln!(
                out,
                "ACSSF,{},{},000,{:04},{:07},{}",
                role.filetype(),
                stusab,
                seq,
                logrecno,
                cells.join(",")
            )
            .unwrap();
        }
        out
    }

    #[test]
    fn file_name_grammar() {
        let r = release();
        assert_eq!(geo_file_name(r, "HI"), "g20145hi.csv");
        assert_eq!(data_file_name(r, FileRole::Margin, "HI", 12), "m20145hi0012000.txt");
        assert_eq!(parse_geo_file_name(r, "g20145hi.csv"), Some("HI".into()));
        assert_eq!(parse_geo_file_name(r, "g20141hi.csv"), None);
        assert_eq!(
            parse_data_file_name(r, "e20145hi0012000.txt"),
            Some((FileRole::Estimate, "HI".into(), 12))
        );
        assert_eq!(parse_data_file_name(r, "e20145hi0000000.txt"), None);
        assert_eq!(parse_data_file_name(r, "x20145hi0001000.txt"), None);
        assert_eq!(parse_data_file_name(r, "e20145h10001000.txt"), None);
    }

    #[test]
    fn discover_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let r = release();
        assert!(matches!(
            discover_release(tmp.path(), r),
            Err(IngestError::MissingReleaseDir(_))
        ));

        let dir = tmp.path().join(r.dir_name());
        fs::create_dir_all(&dir).unwrap();
        assert!(matches!(
            discover_release(tmp.path(), r),
            Err(IngestError::MissingFiles { pairs: 0, .. })
        ));

        write(&dir.join("lookup.csv"), &LOOKUP_HEADER.join(","));
        write(&dir.join("data").join(data_file_name(r, FileRole::Estimate, "AA", 1)), "");
        write(&dir.join("data").join(data_file_name(r, FileRole::Margin, "AA", 1)), "");
        write(&dir.join("data").join(data_file_name(r, FileRole::Estimate, "AA", 2)), "");
        match discover_release(tmp.path(), r) {
            Err(IngestError::UnpairedFile { stusab, sequence, missing }) => {
                assert_eq!((stusab.as_str(), sequence, missing), ("AA", 2, FileRole::Margin));
            }
            other => panic!("unexpected {other:?}"),
        }

        fs::remove_file(dir.join("data").join(data_file_name(r, FileRole::Estimate, "AA", 2))).unwrap();
        write(&dir.join("data").join(data_file_name(r, FileRole::Margin, "AA", 3)), "");
        assert!(matches!(
            discover_release(tmp.path(), r),
            Err(IngestError::UnpairedFile { missing: FileRole::Estimate, sequence: 3, .. })
        ));

        fs::remove_file(dir.join("data").join(data_file_name(r, FileRole::Margin, "AA", 3))).unwrap();
        assert!(matches!(
            discover_release(tmp.path(), r),
            Err(IngestError::MissingGeography(s)) if s == "AA"
        ));

        write(&dir.join("geo").join(geo_file_name(r, "AA")), &GEO_HEADER.join(","));
        let manifest = discover_release(tmp.path(), r).unwrap();
        assert_eq!(manifest.data_pairs.len(), 1);
        assert_eq!(manifest, discover_release(tmp.path(), r).unwrap());
    }

    const LOOKUP: &str = "\
FILEID,TABLE_ID,SEQUENCE,LINE,START_POSITION,TOTAL_CELLS,SUBJECT_ID,SUBJECT_NAME,TITLE,UNIVERSE
ACSSF,B01002,1,,3,2,01,Age and Sex,Median Age by Sex,Total population
ACSSF,B01002,1,2,,,01,Age and Sex,Median age -- Male,
ACSSF,B01002,1,1,,,01,Age and Sex,Median age -- Total,
ACSSF,B01001,1,,1,2,01,Age and Sex,Sex by Age,Total population
ACSSF,B01001,1,1,,,01,Age and Sex,Total:,
ACSSF,B01001,1,2,,,01,Age and Sex,\"Male, total\",
ACSSF,B08001,2,,1,1,08,Journey to Work,Means of Transportation to Work,Workers 16 years and over
ACSSF,B08001,2,1,,,08,Journey to Work,Total:,
";

    #[test]
    fn lookup_parses_and_orders() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("lookup.csv");
        write(&path, LOOKUP);
        let lookup = parse_lookup(&path).unwrap();
        let order: Vec<_> = lookup.shells.iter().map(|s| s.table_id.as_str()).collect();
        assert_eq!(order, ["B01001", "B01002", "B08001"]);
        assert_eq!(lookup.columns.len(), 5);
        assert_eq!(lookup.columns[0].column_id, "b01001_001");
        assert_eq!(lookup.columns[1].display_name, "Male, total");
        assert_eq!(lookup.columns[2].column_id, "b01002_001");
        assert_eq!(lookup.columns[3].display_name, "Median age -- Male");
        assert_eq!(lookup.subjects.len(), 2);
        assert_eq!(lookup.subjects[0].slug, "age-sex");
        assert_eq!(lookup.shell("B01002").unwrap().slug, "median-age-by-sex");
        assert_eq!(lookup.columns_of("B01002").count(), 2);
    }

    #[test]
    fn lookup_minimal() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("lookup.csv");
        write(
            &path,
            "FILEID,TABLE_ID,SEQUENCE,LINE,START_POSITION,TOTAL_CELLS,SUBJECT_ID,SUBJECT_NAME,TITLE,UNIVERSE\n\
             ACSSF,B01003,1,,1,1,01,Age and Sex,Total Population,Total population\n\
             ACSSF,B01003,1,1,,,01,Age and Sex,Total,\n",
        );
        let lookup = parse_lookup(&path).unwrap();
        assert_eq!(lookup.shells.len(), 1);
        assert_eq!(lookup.columns.len(), 1);
        assert!(lookup.columns[0].column_id.ends_with("_001"));
    }

    #[test]
    fn lookup_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("lookup.csv");
        let header = LOOKUP_HEADER.join(",");

        write(&path, &format!("{header}\nACSSF,B01001,1,1,,,01,Age and Sex,Total:,\n"));
        assert!(matches!(parse_lookup(&path), Err(IngestError::OrphanColumn { .. })));

        write(
            &path,
            &format!(
                "{header}\nACSSF,B01001,1,,1,1,01,Age and Sex,Sex by Age,All\n\
                 ACSSF,B01001,1,1,,,01,Age and Sex,Total:,\nACSSF,B01001,1,1,,,01,Age and Sex,Again,\n"
            ),
        );
        assert!(matches!(
            parse_lookup(&path),
            Err(IngestError::DuplicateColumn { line: 1, .. })
        ));

        write(&path, &format!("{header}\nACSSF,B01001,1,,one,1,01,Age and Sex,Sex by Age,All\n"));
        assert!(matches!(
            parse_lookup(&path),
            Err(IngestError::BadNumber { field: "START_POSITION", .. })
        ));

        write(&path, &format!("{header}\nACSSF,B01001,1,,1,x,01,Age and Sex,Sex by Age,All\n"));
        assert!(matches!(
            parse_lookup(&path),
            Err(IngestError::BadNumber { field: "TOTAL_CELLS", .. })
        ));

        write(&path, &format!("{header}\nACSSF,B01001,1,,1,0,01,Age and Sex,Sex by Age,All\n"));
        assert!(matches!(parse_lookup(&path), Err(IngestError::DegenerateTable(_))));

        write(
            &path,
            &format!("{header}\nACSSF,B01001,1,,1,2,01,Age and Sex,Sex by Age,All\nACSSF,B01001,1,1,,,01,Age and Sex,Total:,\n"),
        );
        assert!(matches!(parse_lookup(&path), Err(IngestError::LineMismatch { .. })));

        write(&path, &format!("{header}\nACSSF,B01001,1,,1,1,02,Age and Sex,Sex by Age,All\n"));
        assert!(matches!(parse_lookup(&path), Err(IngestError::SubjectMismatch { .. })));
    }

    #[test]
    fn geography_parses() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("g20145hi.csv");
        write(
            &path,
            "FILEID,STUSAB,SUMLEVEL,LOGRECNO,GEOID,NAME\n\
             ACSSF,HI,050,123,05000US15003,Honolulu County; Hawaii\n",
        );
        let geos = parse_geography(&path).unwrap();
        assert_eq!(
            geos,
            vec![GeoRecord {
                stusab: "HI".into(),
                logrecno: 123,
                geoid: "05000US15003".into(),
                name: "Honolulu County; Hawaii".into(),
                sumlevel: "050".into(),
            }]
        );

        write(&path, "FILEID,STUSAB,SUMLEVEL,LOGRECNO,GEOID,NAME\n");
        assert!(parse_geography(&path).unwrap().is_empty());

        write(
            &path,
            "FILEID,STUSAB,SUMLEVEL,LOGRECNO,GEOID,NAME\n\
             ACSSF,HI,050,7,a,A\nACSSF,HI,050,7,b,B\n",
        );
        assert!(matches!(
            parse_geography(&path),
            Err(IngestError::DuplicateLogrecno { logrecno: 7, .. })
        ));

        write(&path, "FILEID,STUSAB,SUMLEVEL,LOGRECNO,GEOID,NAME\nACSSF,HI,05,7,a,A\n");
        assert!(matches!(parse_geography(&path), Err(IngestError::BadSumlevel { .. })));
    }

    #[test]
    fn stream_pairs_rows() {
        let tmp = tempfile::tempdir().unwrap();
        let e = tmp.path().join("e.txt");
        let m = tmp.path().join("m.txt");
        write(&e, &seq_lines(FileRole::Estimate, "AA", 1, &[(1, vec!["1", ".", ""]), (2, vec!["4", "5", "6"])]));
        write(&m, &seq_lines(FileRole::Margin, "AA", 1, &[(1, vec!["9", "-555555555", " 7"]), (2, vec!["0", "0", "0"])]));
        let rows: Vec<_> = stream_sequence_pair(&e, &m, 3).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].estimates, ["1", ".", ""]);
        assert_eq!(rows[0].margins, ["9", "-555555555", " 7"]);
        assert_eq!(rows[1].logrecno, 2);
    }

    #[test]
    fn stream_detects_short_margin_file() {
        let tmp = tempfile::tempdir().unwrap();
        let e = tmp.path().join("e.txt");
        let m = tmp.path().join("m.txt");
        write(&e, &seq_lines(FileRole::Estimate, "AA", 1, &[(1, vec!["1"]), (2, vec!["2"])]));
        write(&m, &seq_lines(FileRole::Margin, "AA", 1, &[(1, vec!["1"])]));
        let mut stream = stream_sequence_pair(&e, &m, 1).unwrap();
        assert!(stream.next().unwrap().is_ok());
        assert!(matches!(
            stream.next(),
            Some(Err(IngestError::RowCountMismatch { paired_rows: 1, .. }))
        ));
        assert!(stream.next().is_none());
    }

    #[test]
    fn stream_detects_width_and_key_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let e = tmp.path().join("e.txt");
        let m = tmp.path().join("m.txt");
        write(&e, &seq_lines(FileRole::Estimate, "AA", 1, &[(41, vec!["1", "2"])]));
        write(&m, &seq_lines(FileRole::Margin, "AA", 1, &[(41, vec!["1", "2"])]));
        let err = stream_sequence_pair(&e, &m, 3).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, IngestError::WidthMismatch { logrecno: 41, found: 2, expected: 3, .. }));

        write(&m, &seq_lines(FileRole::Margin, "AA", 1, &[(42, vec!["1", "2"])]));
        let err = stream_sequence_pair(&e, &m, 2).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, IngestError::KeyMismatch { est_logrecno: 41, moe_logrecno: 42, .. }));
    }

    #[test]
    fn stream_rejects_invalid_utf8() {
        let tmp = tempfile::tempdir().unwrap();
        let e = tmp.path().join("e.txt");
        let m = tmp.path().join("m.txt");
        fs::write(&e, b"ACSSF,est,AA,000,0001,0000001,\xff\xfe\n").unwrap();
        fs::write(&m, b"ACSSF,moe,AA,000,0001,0000001,1\n").unwrap();
        let err = stream_sequence_pair(&e, &m, 1).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, IngestError::Csv { .. }));
    }
}
