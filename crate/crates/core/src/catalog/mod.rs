//! Read-only catalog over built outputs.
//!
//! Dictionaries are loaded eagerly; table files are only opened to check
//! their header at load time and are then streamed per request.

pub mod http;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::assemble::{coerce_cell, data_header, table_csv_writer, GeoField, JamPolicy, ANNOTATION_SUFFIX};
use crate::dictionary::{read_dictionary, validate_dictionary, Dictionary, DictionaryError, TableEntry, TableHeader, DICTIONARY_FILE};
use crate::model::{CellValue, DatasetId, Release};
use crate::pipeline::TABLES_DIR;
use crate::stats::{describe_values, moe_stats, DescriptiveStats, MoeStats, StatsError};

pub const MAX_PAGE_SIZE: usize = 1000;
const MOE_SUFFIX: &str = "_moe";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("no releases under {0}")]
    NoReleases(PathBuf),
    #[error("release directory {0} has no dictionary")]
    MissingDictionary(PathBuf),
    #[error("table {dataset_id} disagrees with its dictionary: {detail}")]
    HeaderMismatch { dataset_id: String, detail: String },
    #[error("unknown dataset id {0}")]
    UnknownDataset(String),
    #[error("unknown release {0}")]
    UnknownRelease(String),
    #[error("unknown column {column} in {dataset_id}")]
    UnknownColumn { dataset_id: String, column: String },
    #[error("{column} is a margin of error column; request its estimate column {estimate}")]
    MoeColumn { column: String, estimate: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid page: {0}")]
    InvalidPage(String),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error(transparent)]
    Stats(#[from] StatsError),
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

/// Exact-match geography filters; absent fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Filters {
    pub sumlevel: Option<String>,
    pub stusab: Option<String>,
    pub geoid: Option<String>,
}

impl Filters {
    fn matches(&self, columns: &GeoColumns, record: &csv::StringRecord) -> bool {
        let check = |want: &Option<String>, idx: usize| want.as_deref().is_none_or(|w| record.get(idx) == Some(w));
        check(&self.sumlevel, columns.sumlevel) && check(&self.stusab, columns.stusab) && check(&self.geoid, columns.geoid)
    }

    pub fn is_empty(&self) -> bool {
        self.sumlevel.is_none() && self.stusab.is_none() && self.geoid.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct GeoColumns {
    geoid: usize,
    stusab: usize,
    sumlevel: usize,
}

const GEO_COLUMNS: GeoColumns = GeoColumns {
    geoid: 1,
    stusab: 2,
    sumlevel: 3,
};

/// Location and identity of one built table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableHandle {
    pub dataset_id: DatasetId,
    pub release: Release,
    pub subject_id: String,
    pub table_id: String,
    pub path: PathBuf,
    pub header: Vec<String>,
    pub annotations: bool,
}

impl TableHeader for TableHandle {
    fn table_id(&self) -> &str {
        &self.table_id
    }

    fn data_header(&self) -> &[String] {
        &self.header[GeoField::DEFAULT.len()..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchedField {
    TableTitle,
    Universe,
    ColumnDisplayName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchHit {
    pub dataset_id: DatasetId,
    pub matched_field: MatchedField,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubjectSummary {
    pub subject_id: String,
    pub name: String,
    pub slug: String,
    pub table_count: usize,
}

/// A dictionary table entry together with its keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableInfo {
    pub dataset_id: DatasetId,
    pub release: Release,
    pub subject_id: String,
    pub subject_name: String,
    pub table_id: String,
    #[serde(flatten)]
    pub entry: TableEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlicePage {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuickStats {
    pub dataset_id: DatasetId,
    pub column: String,
    #[serde(flatten)]
    pub stats: DescriptiveStats,
    /// Present when exactly one row is addressed and both of its cells are
    /// numeric.
    pub moe: Option<MoeStats>,
}

#[derive(Debug)]
pub struct Catalog {
    root: PathBuf,
    dictionaries: BTreeMap<Release, Dictionary>,
    tables: BTreeMap<DatasetId, TableHandle>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CatalogError + '_ {
    move |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CatalogError + '_ {
    move |source| CatalogError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn open_table(path: &Path) -> Result<csv::Reader<BufReader<File>>, CatalogError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(file)))
}

fn read_header(path: &Path) -> Result<Vec<String>, CatalogError> {
    let mut reader = open_table(path)?;
    let header = reader.headers().map_err(csv_err(path))?;
    Ok(header.iter().map(str::to_string).collect())
}

/// Load every `{year}_{period}` release under `out_root`.
pub fn load_catalog(out_root: &Path) -> Result<Catalog, CatalogError> {
    let mut dictionaries = BTreeMap::new();
    let mut tables = BTreeMap::new();
    let entries = fs::read_dir(out_root).map_err(io_err(out_root))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(out_root))?;
        let name = entry.file_name();
        if let Some(release) = name.to_str().and_then(Release::from_dir_name) {
            if entry.path().is_dir() {
                dirs.push((release, entry.path()));
            }
        }
    }
    dirs.sort();

    for (release, dir) in dirs {
        let dict_path = dir.join(DICTIONARY_FILE);
        if !dict_path.is_file() {
            return Err(CatalogError::MissingDictionary(dir));
        }
        let dict = read_dictionary(&dict_path)?;
        let by_id: BTreeMap<DatasetId, (String, String)> = dict
            .tables()
            .map(|t| (dict.dataset_id(t), (t.subject_id.to_string(), t.table_id.to_string())))
            .collect();

        let mut handles = Vec::new();
        let tables_dir = dir.join(TABLES_DIR);
        let mut files: Vec<PathBuf> = match fs::read_dir(&tables_dir) {
            Ok(rd) => rd
                .map(|e| e.map(|e| e.path()).map_err(io_err(&tables_dir)))
                .collect::<Result<_, _>>()?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(&tables_dir)(e)),
        };
        files.retain(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'))
        });
        files.sort();
        for path in files {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let mismatch = |detail: String| CatalogError::HeaderMismatch {
                dataset_id: stem.clone(),
                detail,
            };
            let dataset_id: DatasetId = stem
                .parse()
                .map_err(|e| mismatch(format!("file name is not a dataset id: {e}")))?;
            let (subject_id, table_id) = by_id
                .get(&dataset_id)
                .cloned()
                .ok_or_else(|| mismatch("no dictionary entry".into()))?;
            let header = read_header(&path)?;
            let entry = &dict.subjects[&subject_id].tables[&table_id];
            let columns = entry.column_defs(&table_id);
            let geo: Vec<String> = GeoField::DEFAULT.iter().map(|f| f.header().to_string()).collect();
            let annotations = if !header.starts_with(&geo) {
                return Err(mismatch(format!("geography columns {:?}", &header[..geo.len().min(header.len())])));
            } else if header[geo.len()..] == data_header(&columns, false)[..] {
                false
            } else if header[geo.len()..] == data_header(&columns, true)[..] {
                true
            } else {
                return Err(mismatch(format!(
                    "{} data columns, dictionary lists {} lines",
                    header.len() - geo.len(),
                    columns.len()
                )));
            };
            handles.push(TableHandle {
                dataset_id,
                release,
                subject_id,
                table_id,
                path,
                header,
                annotations,
            });
        }

        // Set-level check over the tables present.
        let mut present = dict.clone();
        for subject in present.subjects.values_mut() {
            subject
                .tables
                .retain(|id, _| handles.iter().any(|h| &h.table_id == id));
        }
        let report = validate_dictionary(&present, &handles);
        if let Some(finding) = report.findings.iter().find(|f| !report.warnings().any(|w| &w == f)) {
            return Err(CatalogError::HeaderMismatch {
                dataset_id: release.to_string(),
                detail: format!("{finding:?}"),
            });
        }

        for h in handles {
            tables.insert(h.dataset_id.clone(), h);
        }
        dictionaries.insert(release, dict);
    }

    if dictionaries.is_empty() {
        return Err(CatalogError::NoReleases(out_root.to_path_buf()));
    }
    Ok(Catalog {
        root: out_root.to_path_buf(),
        dictionaries,
        tables,
    })
}

fn check_page(page: usize, page_size: usize) -> Result<(), CatalogError> {
    if page == 0 {
        return Err(CatalogError::InvalidPage("page numbers start at 1".into()));
    }
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(CatalogError::InvalidPage(format!(
            "page_size {page_size} outside 1..={MAX_PAGE_SIZE}"
        )));
    }
    Ok(())
}

impl Catalog {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn releases(&self) -> Vec<Release> {
        self.dictionaries.keys().copied().collect()
    }

    pub fn dictionary(&self, release: Release) -> Option<&Dictionary> {
        self.dictionaries.get(&release)
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &DatasetId> {
        self.tables.keys()
    }

    pub fn table(&self, id: &str) -> Result<&TableHandle, CatalogError> {
        self.tables
            .iter()
            .find(|(k, _)| k.as_str() == id)
            .map(|(_, v)| v)
            .ok_or_else(|| CatalogError::UnknownDataset(id.to_string()))
    }

    pub fn subjects(&self, release: Release) -> Result<Vec<SubjectSummary>, CatalogError> {
        let dict = self
            .dictionaries
            .get(&release)
            .ok_or_else(|| CatalogError::UnknownRelease(release.to_string()))?;
        Ok(dict
            .subjects
            .iter()
            .map(|(id, s)| SubjectSummary {
                subject_id: id.clone(),
                name: s.name.clone(),
                slug: s.slug.clone(),
                table_count: s.tables.len(),
            })
            .collect())
    }

    fn entry(&self, handle: &TableHandle) -> &TableEntry {
        &self.dictionaries[&handle.release].subjects[&handle.subject_id].tables[&handle.table_id]
    }

    pub fn table_info(&self, id: &str) -> Result<TableInfo, CatalogError> {
        let handle = self.table(id)?;
        let dict = &self.dictionaries[&handle.release];
        Ok(TableInfo {
            dataset_id: handle.dataset_id.clone(),
            release: handle.release,
            subject_id: handle.subject_id.clone(),
            subject_name: dict.subjects[&handle.subject_id].name.clone(),
            table_id: handle.table_id.clone(),
            entry: self.entry(handle).clone(),
        })
    }

    /// Tables where every query token occurs, case-insensitively, in one of
    /// title, universe or a column display name. Ordered by dataset id.
    pub fn search(&self, query: &str) -> Result<Vec<SearchHit>, CatalogError> {
        let tokens: Vec<String> = query.split_whitespace().map(str::to_lowercase).collect();
        if tokens.is_empty() {
            return Err(CatalogError::InvalidQuery("empty query".into()));
        }
        let all_in = |text: &str| {
            let lower = text.to_lowercase();
            tokens.iter().all(|t| lower.contains(t.as_str()))
        };
        let mut hits = Vec::new();
        for (id, handle) in &self.tables {
            let entry = self.entry(handle);
            let hit = if all_in(&entry.title) {
                Some((MatchedField::TableTitle, entry.title.clone()))
            } else if all_in(&entry.universe) {
                Some((MatchedField::Universe, entry.universe.clone()))
            } else {
                entry
                    .columns
                    .values()
                    .find(|c| all_in(&c.display_name))
                    .map(|c| (MatchedField::ColumnDisplayName, c.display_name.clone()))
            };
            if let Some((matched_field, snippet)) = hit {
                hits.push(SearchHit {
                    dataset_id: id.clone(),
                    matched_field,
                    snippet,
                });
            }
        }
        Ok(hits)
    }

    /// Visit filtered rows in file order, i.e. (stusab, logrecno).
    fn for_each_row<F>(&self, handle: &TableHandle, filters: &Filters, mut f: F) -> Result<(), CatalogError>
    where
        F: FnMut(&csv::StringRecord) -> Result<(), CatalogError>,
    {
        let mut reader = open_table(&handle.path)?;
        let mut record = csv::StringRecord::new();
        while reader.read_record(&mut record).map_err(csv_err(&handle.path))? {
            if filters.matches(&GEO_COLUMNS, &record) {
                f(&record)?;
            }
        }
        Ok(())
    }

    pub fn table_slice(&self, id: &str, filters: &Filters, page: usize, page_size: usize) -> Result<SlicePage, CatalogError> {
        check_page(page, page_size)?;
        let handle = self.table(id)?;
        let skip = (page - 1).saturating_mul(page_size);
        let mut total = 0;
        let mut rows = Vec::new();
        self.for_each_row(handle, filters, |record| {
            if total >= skip && rows.len() < page_size {
                rows.push(record.iter().map(str::to_string).collect());
            }
            total += 1;
            Ok(())
        })?;
        Ok(SlicePage {
            total,
            page,
            page_size,
            header: handle.header.clone(),
            rows,
        })
    }

    pub fn quick_stats(&self, id: &str, column: &str, filters: &Filters) -> Result<QuickStats, CatalogError> {
        let handle = self.table(id)?;
        let position = |name: &str| handle.header.iter().position(|h| h == name);
        let unknown = || CatalogError::UnknownColumn {
            dataset_id: id.to_string(),
            column: column.to_string(),
        };
        if let Some(estimate) = column.strip_suffix(MOE_SUFFIX) {
            if position(column).is_some() && position(estimate).is_some() {
                return Err(CatalogError::MoeColumn {
                    column: column.to_string(),
                    estimate: estimate.to_string(),
                });
            }
        }
        let geo_len = GeoField::DEFAULT.len();
        let est_idx = position(column).filter(|&i| i >= geo_len && !column.ends_with(ANNOTATION_SUFFIX)).ok_or_else(unknown)?;
        let moe_idx = position(&format!("{column}{MOE_SUFFIX}")).ok_or_else(unknown)?;

        let policy = JamPolicy::default();
        let mut values = Vec::new();
        let mut single: Option<(CellValue, CellValue)> = None;
        self.for_each_row(handle, filters, |record| {
            let est = coerce_cell(record.get(est_idx).unwrap_or_default(), &policy);
            let moe = coerce_cell(record.get(moe_idx).unwrap_or_default(), &policy);
            if values.is_empty() {
                single = Some((est.clone(), moe));
            }
            values.push(est);
            Ok(())
        })?;
        let moe = match (values.len(), single) {
            (1, Some((CellValue::Numeric(e), CellValue::Numeric(m)))) => Some(moe_stats(e, m)?),
            _ => None,
        };
        Ok(QuickStats {
            dataset_id: handle.dataset_id.clone(),
            column: column.to_string(),
            stats: describe_values(&values),
            moe,
        })
    }

    /// Write the table as CSV. Without filters the file's bytes are copied
    /// verbatim; otherwise the matching rows are re-encoded in the same
    /// dialect.
    pub fn export<W: Write>(&self, id: &str, filters: &Filters, mut out: W) -> Result<(), CatalogError> {
        let handle = self.table(id)?;
        let out_err = |source: io::Error| CatalogError::Io {
            path: PathBuf::from("<export>"),
            source,
        };
        if filters.is_empty() {
            let mut file = File::open(&handle.path).map_err(io_err(&handle.path))?;
            io::copy(&mut file, &mut out).map_err(out_err)?;
            return out.flush().map_err(out_err);
        }
        let mut writer = table_csv_writer(out);
        let write_err = |source: csv::Error| CatalogError::Csv {
            path: PathBuf::from("<export>"),
            source,
        };
        writer.write_record(&handle.header).map_err(write_err)?;
        self.for_each_row(handle, filters, |record| writer.write_record(record).map_err(write_err))?;
        writer.flush().map_err(out_err)
    }
}
