//! Hierarchical metadata dictionary keyed subject → table → column.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assemble::{AssembledTable, ANNOTATION_SUFFIX};
use crate::model::{make_dataset_id, ColumnDef, DatasetId, Release, SubjectRef, TableShell};

/// Observed upper bound on tables per subject; exceeding it is a warning.
pub const SUBJECT_TABLE_SOFT_BOUND: usize = 150;

pub const DICTIONARY_FILE: &str = "dictionary.json";

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("column ({table_id}, line {line}) references a table missing from the lookup")]
    DanglingColumn { table_id: String, line: u32 },
    #[error("table {table_id} references missing subject {subject_id}")]
    MissingSubject { table_id: String, subject_id: String },
    #[error("duplicate dataset id {0}")]
    DuplicateDatasetId(DatasetId),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dictionary {
    pub release: Release,
    pub subjects: BTreeMap<String, SubjectEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub name: String,
    pub slug: String,
    pub tables: BTreeMap<String, TableEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub title: String,
    pub slug: String,
    pub universe: String,
    pub sequence: u32,
    pub start_position: u32,
    pub cell_count: u32,
    /// Keyed by zero-padded line number.
    pub columns: BTreeMap<String, ColumnEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnEntry {
    pub display_name: String,
    pub column_id: String,
    pub moe_column_id: String,
}

/// A table located in the dictionary together with its keys.
#[derive(Debug, Clone, Copy)]
pub struct TableRef<'a> {
    pub subject_id: &'a str,
    pub subject: &'a SubjectEntry,
    pub table_id: &'a str,
    pub table: &'a TableEntry,
}

impl TableEntry {
    pub fn column_defs(&self, table_id: &str) -> Vec<ColumnDef> {
        self.columns
            .iter()
            .map(|(line, c)| ColumnDef {
                table_id: table_id.to_string(),
                line: line.parse().unwrap_or(0),
                display_name: c.display_name.clone(),
                column_id: c.column_id.clone(),
                moe_column_id: c.moe_column_id.clone(),
            })
            .collect()
    }
}

impl Dictionary {
    pub fn table_count(&self) -> usize {
        self.subjects.values().map(|s| s.tables.len()).sum()
    }

    pub fn dataset_id(&self, table: TableRef<'_>) -> DatasetId {
        // Slugs in a dictionary come from slugify, so the id is well formed.
        format!(
            "us.gov.census.acs.{}.{}.{}.{}",
            self.release.year(),
            self.release.period(),
            table.subject.slug,
            table.table.slug
        )
        .parse()
        .expect("dictionary slugs form a valid dataset id")
    }

    /// Every table in (subject_id, table_id) order.
    pub fn tables(&self) -> impl Iterator<Item = TableRef<'_>> {
        self.subjects.iter().flat_map(|(sid, subject)| {
            subject.tables.iter().map(move |(tid, table)| TableRef {
                subject_id: sid,
                subject,
                table_id: tid,
                table,
            })
        })
    }

    pub fn find_table(&self, table_id: &str) -> Option<TableRef<'_>> {
        self.tables().find(|t| t.table_id == table_id)
    }

    /// Subjects over the soft bound, with their table counts.
    pub fn oversized_subjects(&self) -> Vec<(String, usize)> {
        self.subjects
            .iter()
            .filter(|(_, s)| s.tables.len() > SUBJECT_TABLE_SOFT_BOUND)
            .map(|(id, s)| (id.clone(), s.tables.len()))
            .collect()
    }
}

pub fn build_dictionary(
    release: Release,
    shells: &[TableShell],
    columns: &[ColumnDef],
    subjects: &[SubjectRef],
) -> Result<Dictionary, DictionaryError> {
    let mut out: BTreeMap<String, SubjectEntry> = subjects
        .iter()
        .map(|s| {
            (
                s.subject_id.clone(),
                SubjectEntry {
                    name: s.name.clone(),
                    slug: s.slug.clone(),
                    tables: BTreeMap::new(),
                },
            )
        })
        .collect();

    let mut subject_of: BTreeMap<&str, &str> = BTreeMap::new();
    let mut ids = BTreeSet::new();
    for shell in shells {
        let subject_ref = subjects
            .iter()
            .find(|s| s.subject_id == shell.subject_id)
            .ok_or_else(|| DictionaryError::MissingSubject {
                table_id: shell.table_id.clone(),
                subject_id: shell.subject_id.clone(),
            })?;
        let id = make_dataset_id(release, subject_ref, shell);
        if !ids.insert(id.clone()) {
            return Err(DictionaryError::DuplicateDatasetId(id));
        }
        subject_of.insert(&shell.table_id, &shell.subject_id);
        out.get_mut(&shell.subject_id)
            .expect("subject present")
            .tables
            .insert(
                shell.table_id.clone(),
                TableEntry {
                    title: shell.title.clone(),
                    slug: shell.slug.clone(),
                    universe: shell.universe.clone(),
                    sequence: shell.sequence,
                    start_position: shell.start_position,
                    cell_count: shell.cell_count,
                    columns: BTreeMap::new(),
                },
            );
    }

    for col in columns {
        let subject_id = subject_of
            .get(col.table_id.as_str())
            .ok_or_else(|| DictionaryError::DanglingColumn {
                table_id: col.table_id.clone(),
                line: col.line,
            })?;
        let table = out
            .get_mut(*subject_id)
            .and_then(|s| s.tables.get_mut(&col.table_id))
            .expect("table inserted above");
        table.columns.insert(
            format!("{:03}", col.line),
            ColumnEntry {
                display_name: col.display_name.clone(),
                column_id: col.column_id.clone(),
                moe_column_id: col.moe_column_id.clone(),
            },
        );
    }

    let dict = Dictionary {
        release,
        subjects: out,
    };
    for (subject_id, count) in dict.oversized_subjects() {
        log::warn!("subject {subject_id} holds {count} tables (more than {SUBJECT_TABLE_SOFT_BOUND})");
    }
    Ok(dict)
}

/// Pretty JSON with a trailing newline; key order is fixed so equal
/// dictionaries produce equal bytes.
pub fn dictionary_json(dict: &Dictionary) -> String {
    let mut text = serde_json::to_string_pretty(dict).expect("dictionary serializes");
    text.push('\n');
    text
}

pub fn emit_dictionary(dict: &Dictionary, path: &Path) -> Result<PathBuf, DictionaryError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| DictionaryError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, dictionary_json(dict)).map_err(|source| DictionaryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(path.to_path_buf())
}

pub fn read_dictionary(path: &Path) -> Result<Dictionary, DictionaryError> {
    let text = fs::read_to_string(path).map_err(|source| DictionaryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| DictionaryError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Anything exposing an assembled table's identity and data header.
pub trait TableHeader {
    fn table_id(&self) -> &str;
    fn data_header(&self) -> &[String];
}

impl TableHeader for AssembledTable {
    fn table_id(&self) -> &str {
        &self.table_id
    }

    fn data_header(&self) -> &[String] {
        &self.data_header
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    /// An assembled column the dictionary does not describe.
    MissingFromDictionary { table_id: String, column: String },
    /// A dictionary column no assembled table carries.
    AbsentFromTables { table_id: String, column: String },
    /// Soft-bound warning.
    OversizedSubject { subject_id: String, table_count: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    /// No findings other than soft-bound warnings.
    pub fn is_consistent(&self) -> bool {
        self.findings
            .iter()
            .all(|f| matches!(f, Finding::OversizedSubject { .. }))
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| matches!(f, Finding::OversizedSubject { .. }))
    }
}

fn strip_annotation(column: &str) -> &str {
    column.strip_suffix(ANNOTATION_SUFFIX).unwrap_or(column)
}

pub fn validate_dictionary<T: TableHeader>(dict: &Dictionary, tables: &[T]) -> ValidationReport {
    let mut expected: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for t in dict.tables() {
        let set = expected.entry(t.table_id).or_default();
        for c in t.table.columns.values() {
            set.insert(&c.column_id);
            set.insert(&c.moe_column_id);
        }
    }

    let mut findings = Vec::new();
    let mut seen: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for table in tables {
        let known = expected.get(table.table_id());
        let seen_set = seen.entry(table.table_id()).or_default();
        for column in table.data_header() {
            let base = strip_annotation(column);
            if known.is_some_and(|k| k.contains(base)) {
                seen_set.insert(base);
            } else {
                findings.push(Finding::MissingFromDictionary {
                    table_id: table.table_id().to_string(),
                    column: column.clone(),
                });
            }
        }
    }
    for (table_id, columns) in &expected {
        for column in columns {
            if !seen.get(table_id).is_some_and(|s| s.contains(column)) {
                findings.push(Finding::AbsentFromTables {
                    table_id: table_id.to_string(),
                    column: column.to_string(),
                });
            }
        }
    }
    for (subject_id, table_count) in dict.oversized_subjects() {
        findings.push(Finding::OversizedSubject {
            subject_id,
            table_count,
        });
    }
    ValidationReport { findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{slugify, Period};

    struct Header(String, Vec<String>);

    impl TableHeader for Header {
        fn table_id(&self) -> &str {
            &self.0
        }
        fn data_header(&self) -> &[String] {
            &self.1
        }
    }

    fn release() -> Release {
        Release::new(2014, Period::FiveYear).unwrap()
    }

    fn shell(table_id: &str, title: &str, count: u32) -> TableShell {
        TableShell {
            table_id: table_id.into(),
            subject_id: table_id[1..3].into(),
            sequence: 1,
            start_position: 1,
            cell_count: count,
            title: title.into(),
            universe: "Total population".into(),
            slug: slugify(title).unwrap(),
        }
    }

    fn minimal() -> Dictionary {
        build_dictionary(
            release(),
            &[shell("B01003", "Total Population", 1)],
            &[ColumnDef::new("B01003", 1, "Total").unwrap()],
            &[SubjectRef::new("01", "Age and Sex").unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn minimal_dictionary() {
        let dict = minimal();
        assert_eq!(dict.subjects.len(), 1);
        let table = &dict.subjects["01"].tables["B01003"];
        assert_eq!(table.columns["001"].column_id, "b01003_001");
        let t = dict.find_table("B01003").unwrap();
        assert_eq!(
            dict.dataset_id(t).as_str(),
            "us.gov.census.acs.2014.5yr.age-sex.total-population"
        );
        assert_eq!(
            dictionary_json(&dict),
            r#"{
  "release": {
    "year": 2014,
    "period": "5yr"
  },
  "subjects": {
    "01": {
      "name": "Age and Sex",
      "slug": "age-sex",
      "tables": {
        "B01003": {
          "title": "Total Population",
          "slug": "total-population",
          "universe": "Total population",
          "sequence": 1,
          "start_position": 1,
          "cell_count": 1,
          "columns": {
            "001": {
              "display_name": "Total",
              "column_id": "b01003_001",
              "moe_column_id": "b01003_001_moe"
            }
          }
        }
      }
    }
  }
}
"#
        );
    }

    #[test]
    fn referential_errors() {
        let err = build_dictionary(
            release(),
            &[shell("B01003", "Total Population", 1)],
            &[ColumnDef::new("B01004", 1, "Total").unwrap()],
            &[SubjectRef::new("01", "Age and Sex").unwrap()],
        )
        .unwrap_err();
        assert!(matches!(err, DictionaryError::DanglingColumn { ref table_id, .. } if table_id == "B01004"));

        let err = build_dictionary(release(), &[shell("B08003", "X", 1)], &[], &[]).unwrap_err();
        assert!(matches!(err, DictionaryError::MissingSubject { .. }));
    }

    #[test]
    fn emission_is_deterministic_and_reads_back() {
        let tmp = tempfile::tempdir().unwrap();
        let dict = minimal();
        let a = emit_dictionary(&dict, &tmp.path().join("a.json")).unwrap();
        let b = emit_dictionary(&dict, &tmp.path().join("b.json")).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(read_dictionary(&a).unwrap(), dict);

        let empty = build_dictionary(release(), &[], &[], &[SubjectRef::new("01", "Age and Sex").unwrap()]).unwrap();
        let path = emit_dictionary(&empty, &tmp.path().join("empty.json")).unwrap();
        let back = read_dictionary(&path).unwrap();
        assert!(back.subjects["01"].tables.is_empty());
    }

    #[test]
    fn validation_findings() {
        let dict = minimal();
        let ok = Header("B01003".into(), vec!["b01003_001".into(), "b01003_001_moe".into()]);
        assert!(validate_dictionary(&dict, &[ok]).is_empty());

        let annotated = Header(
            "B01003".into(),
            ["b01003_001", "b01003_001_moe", "b01003_001_ann", "b01003_001_moe_ann"]
                .map(String::from)
                .to_vec(),
        );
        assert!(validate_dictionary(&dict, &[annotated]).is_empty());

        let mut extra = dict.clone();
        extra.subjects.get_mut("01").unwrap().tables.get_mut("B01003").unwrap().columns.insert(
            "002".into(),
            ColumnEntry {
                display_name: "Extra".into(),
                column_id: "b01003_002".into(),
                moe_column_id: "b01003_002_moe".into(),
            },
        );
        let ok = Header("B01003".into(), vec!["b01003_001".into(), "b01003_001_moe".into()]);
        let report = validate_dictionary(&extra, std::slice::from_ref(&ok));
        let absent: Vec<_> = report
            .findings
            .iter()
            .filter(|f| matches!(f, Finding::AbsentFromTables { column, .. } if column == "b01003_002"))
            .collect();
        assert_eq!(absent.len(), 1);

        let stray = Header("B01003".into(), vec!["b01003_009".into()]);
        let report = validate_dictionary(&dict, &[stray]);
        assert!(report.findings.contains(&Finding::MissingFromDictionary {
            table_id: "B01003".into(),
            column: "b01003_009".into()
        }));
    }

    #[test]
    fn soft_bound_warning() {
        let shells: Vec<_> = (1..=151).map(|i| shell(&format!("B01{i:03}"), &format!("Table {i}"), 1)).collect();
        let columns: Vec<_> = shells.iter().map(|s| ColumnDef::new(&s.table_id, 1, "x").unwrap()).collect();
        let dict = build_dictionary(release(), &shells, &columns, &[SubjectRef::new("01", "Age and Sex").unwrap()]).unwrap();
        let headers: Vec<Header> = columns
            .iter()
            .map(|c| Header(c.table_id.clone(), vec![c.column_id.clone(), c.moe_column_id.clone()]))
            .collect();
        let report = validate_dictionary(&dict, &headers);
        assert_eq!(
            report.findings,
            vec![Finding::OversizedSubject { subject_id: "01".into(), table_count: 151 }]
        );
        assert!(report.is_consistent());
        assert!(!report.is_empty());
    }
}
