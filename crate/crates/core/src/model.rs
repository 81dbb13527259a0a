//! Domain vocabulary shared by every stage: releases, subjects, table shells,
//! column definitions, geography records, cell values and dataset identifiers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// First year the survey published estimates.
pub const FIRST_RELEASE_YEAR: u16 = 2005;

/// Fixed leading segments of every dataset identifier.
pub const DATASET_PREFIX: [&str; 4] = ["us", "gov", "census", "acs"];

const SLUG_STOPWORDS: &[&str] = &["and"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid name {0:?}: slug would be empty")]
    InvalidName(String),
    #[error("line {0} outside 1..=999")]
    LineOutOfRange(u32),
    #[error("malformed table id {0:?}")]
    InvalidTableId(String),
    #[error("malformed subject id {0:?}")]
    InvalidSubjectId(String),
    #[error("release year {0} predates {FIRST_RELEASE_YEAR}")]
    YearOutOfRange(u16),
    #[error("unknown estimate period {0:?} (expected 1yr, 3yr or 5yr)")]
    UnknownPeriod(String),
    #[error("cannot parse dataset id {id:?}: {reason}")]
    DatasetId { id: String, reason: String },
}

/// Estimate period of a release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Period {
    #[serde(rename = "1yr")]
    OneYear,
    #[serde(rename = "3yr")]
    ThreeYear,
    #[serde(rename = "5yr")]
    FiveYear,
}

impl Period {
    pub const ALL: [Period; 3] = [Period::OneYear, Period::ThreeYear, Period::FiveYear];

    pub fn as_str(self) -> &'static str {
        match self {
            Period::OneYear => "1yr",
            Period::ThreeYear => "3yr",
            Period::FiveYear => "5yr",
        }
    }

    /// Single digit used in source file names (`g20145hi.csv`).
    pub fn digit(self) -> char {
        match self {
            Period::OneYear => '1',
            Period::ThreeYear => '3',
            Period::FiveYear => '5',
        }
    }

    pub fn from_digit(c: char) -> Option<Period> {
        Period::ALL.into_iter().find(|p| p.digit() == c)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Period {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Period::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| ModelError::UnknownPeriod(s.to_string()))
    }
}

/// A survey vintage: year plus estimate period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "ReleaseFields")]
pub struct Release {
    year: u16,
    period: Period,
}

#[derive(Deserialize)]
struct ReleaseFields {
    year: u16,
    period: Period,
}

impl TryFrom<ReleaseFields> for Release {
    type Error = ModelError;

    fn try_from(fields: ReleaseFields) -> Result<Self, Self::Error> {
        Release::new(fields.year, fields.period)
    }
}

impl Release {
    pub fn new(year: u16, period: Period) -> Result<Self, ModelError> {
        if year < FIRST_RELEASE_YEAR {
            return Err(ModelError::YearOutOfRange(year));
        }
        Ok(Release { year, period })
    }

    pub fn year(&self) -> u16 {
        self.year
    }

    pub fn period(&self) -> Period {
        self.period
    }

    /// Directory name of the release in source and output trees, e.g. `2014_5yr`.
    pub fn dir_name(&self) -> String {
        format!("{}_{}", self.year, self.period)
    }

    /// Inverse of [`Release::dir_name`].
    pub fn from_dir_name(name: &str) -> Option<Release> {
        let (year, period) = name.split_once('_')?;
        let year: u16 = year.parse().ok()?;
        Release::new(year, period.parse().ok()?).ok()
    }
}

impl fmt::Display for Release {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.year, self.period)
    }
}

/// A thematic subject such as `01` / Age and Sex.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubjectRef {
    pub subject_id: String,
    pub name: String,
    pub slug: String,
}

impl SubjectRef {
    pub fn new(subject_id: &str, name: &str) -> Result<Self, ModelError> {
        validate_subject_id(subject_id)?;
        Ok(SubjectRef {
            subject_id: subject_id.to_string(),
            name: name.to_string(),
            slug: slugify(name)?,
        })
    }
}

/// Lookup-file description of one thematic table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableShell {
    pub table_id: String,
    pub subject_id: String,
    pub sequence: u32,
    /// 1-based cell offset within the sequence payload.
    pub start_position: u32,
    pub cell_count: u32,
    pub title: String,
    pub universe: String,
    pub slug: String,
}

impl TableShell {
    /// One past the last cell this shell covers (1-based, exclusive).
    pub fn end_position(&self) -> u32 {
        self.start_position + self.cell_count
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnDef {
    pub table_id: String,
    pub line: u32,
    pub display_name: String,
    pub column_id: String,
    pub moe_column_id: String,
}

impl ColumnDef {
    pub fn new(table_id: &str, line: u32, display_name: &str) -> Result<Self, ModelError> {
        Ok(ColumnDef {
            table_id: table_id.to_string(),
            line,
            display_name: display_name.to_string(),
            column_id: make_column_id(table_id, line, ColumnKind::Estimate)?,
            moe_column_id: make_column_id(table_id, line, ColumnKind::Moe)?,
        })
    }
}

/// One geography row from a state's geography file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeoRecord {
    pub stusab: String,
    pub logrecno: u32,
    /// Opaque; no GEOID grammar is enforced.
    pub geoid: String,
    pub name: String,
    pub sumlevel: String,
}

/// A survey cell: a finite number or a preserved non-numeric jam token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellValue {
    Numeric(f64),
    Jam(String),
}

impl CellValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            CellValue::Numeric(v) => Some(*v),
            CellValue::Jam(_) => None,
        }
    }

    pub fn is_jam(&self) -> bool {
        matches!(self, CellValue::Jam(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Estimate,
    Moe,
}

/// Hierarchical dataset identifier:
/// `us.gov.census.acs.{year}.{period}.{subject-slug}.{table-slug}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DatasetId(String);

impl TryFrom<String> for DatasetId {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        parse_dataset_id(&s).map(|_| DatasetId(s))
    }
}

impl From<DatasetId> for String {
    fn from(id: DatasetId) -> String {
        id.0
    }
}

impl DatasetId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn parts(&self) -> DatasetIdParts {
        // Constructed only through validated paths.
        parse_dataset_id(&self.0).expect("DatasetId holds a valid identifier")
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for DatasetId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_dataset_id(s).map(|_| DatasetId(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIdParts {
    pub release: Release,
    pub subject_slug: String,
    pub table_slug: String,
}

/// Lowercase, collapse every run of non-alphanumerics into one hyphen and drop
/// the standalone word "and".
pub fn slugify(text: &str) -> Result<String, ModelError> {
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty() && !SLUG_STOPWORDS.contains(w))
        .collect();
    if words.is_empty() {
        return Err(ModelError::InvalidName(text.to_string()));
    }
    Ok(words.join("-"))
}

pub fn is_valid_slug(slug: &str) -> bool {
    !slug.is_empty()
        && slug
            .split('-')
            .all(|w| !w.is_empty() && w.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()))
}

pub fn validate_subject_id(subject_id: &str) -> Result<(), ModelError> {
    if subject_id.len() == 2 && subject_id.bytes().all(|b| b.is_ascii_alphanumeric()) {
        Ok(())
    } else {
        Err(ModelError::InvalidSubjectId(subject_id.to_string()))
    }
}

/// Uppercase alphanumeric, at least one table-type letter plus the two
/// subject characters.
pub fn validate_table_id(table_id: &str) -> Result<(), ModelError> {
    let ok = table_id.len() >= 4
        && table_id
            .bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
        && table_id.as_bytes()[0].is_ascii_uppercase();
    if ok {
        Ok(())
    } else {
        Err(ModelError::InvalidTableId(table_id.to_string()))
    }
}

/// Subject code embedded in characters 2–3 of a table id (`B01002` → `01`).
pub fn table_subject_id(table_id: &str) -> Option<&str> {
    table_id.get(1..3)
}

pub fn make_column_id(table_id: &str, line: u32, kind: ColumnKind) -> Result<String, ModelError> {
    validate_table_id(table_id)?;
    if !(1..=999).contains(&line) {
        return Err(ModelError::LineOutOfRange(line));
    }
    let base = format!("{}_{:03}", table_id.to_ascii_lowercase(), line);
    Ok(match kind {
        ColumnKind::Estimate => base,
        ColumnKind::Moe => base + "_moe",
    })
}

pub fn make_dataset_id(release: Release, subject: &SubjectRef, shell: &TableShell) -> DatasetId {
    DatasetId(format!(
        "{}.{}.{}.{}.{}",
        DATASET_PREFIX.join("."),
        release.year(),
        release.period(),
        subject.slug,
        shell.slug
    ))
}

pub fn parse_dataset_id(id: &str) -> Result<DatasetIdParts, ModelError> {
    let fail = |reason: &str| ModelError::DatasetId {
        id: id.to_string(),
        reason: reason.to_string(),
    };
    let segments: Vec<&str> = id.split('.').collect();
    if segments.len() != 8 {
        return Err(fail(&format!("expected 8 segments, found {}", segments.len())));
    }
    if segments[..4] != DATASET_PREFIX {
        return Err(fail("prefix is not us.gov.census.acs"));
    }
    let year: u16 = segments[4]
        .parse()
        .map_err(|_| fail("year is not numeric"))?;
    let period: Period = segments[5].parse().map_err(|_| fail("unknown period"))?;
    let release = Release::new(year, period).map_err(|e| fail(&e.to_string()))?;
    for slug in &segments[6..] {
        if !is_valid_slug(slug) {
            return Err(fail(&format!("invalid slug {slug:?}")));
        }
    }
    Ok(DatasetIdParts {
        release,
        subject_slug: segments[6].to_string(),
        table_slug: segments[7].to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shell(slug: &str) -> TableShell {
        TableShell {
            table_id: "B01002".into(),
            subject_id: "01".into(),
            sequence: 1,
            start_position: 1,
            cell_count: 3,
            title: "Median Age by Sex".into(),
            universe: "Total population".into(),
            slug: slug.into(),
        }
    }

    #[test]
    fn slugify_examples() {
        assert_eq!(slugify("Median Age by Sex").unwrap(), "median-age-by-sex");
        assert_eq!(slugify("Age and Sex").unwrap(), "age-sex");
        assert_eq!(slugify("Journey to Work").unwrap(), "journey-to-work");
        assert_eq!(
            slugify("  Sex by Age (White Alone) -- Total ").unwrap(),
            "sex-by-age-white-alone-total"
        );
        assert_eq!(slugify("Brand new").unwrap(), "brand-new");
    }

    #[test]
    fn slugify_rejects_empty() {
        assert!(matches!(slugify(""), Err(ModelError::InvalidName(_))));
        assert!(matches!(slugify(" -- "), Err(ModelError::InvalidName(_))));
        assert!(matches!(slugify("and"), Err(ModelError::InvalidName(_))));
    }

    #[test]
    fn column_ids() {
        assert_eq!(make_column_id("B01002", 3, ColumnKind::Estimate).unwrap(), "b01002_003");
        assert_eq!(make_column_id("B01002", 3, ColumnKind::Moe).unwrap(), "b01002_003_moe");
        assert_eq!(make_column_id("B24121", 12, ColumnKind::Estimate).unwrap(), "b24121_012");
        assert_eq!(
            make_column_id("B01002", 0, ColumnKind::Estimate),
            Err(ModelError::LineOutOfRange(0))
        );
        assert_eq!(
            make_column_id("B01002", 1000, ColumnKind::Moe),
            Err(ModelError::LineOutOfRange(1000))
        );
        assert!(make_column_id("b01002", 1, ColumnKind::Estimate).is_err());
    }

    #[test]
    fn dataset_id_examples() {
        let r = Release::new(2014, Period::FiveYear).unwrap();
        let age_sex = SubjectRef::new("01", "Age and Sex").unwrap();
        let id = make_dataset_id(r, &age_sex, &shell("median-age-by-sex"));
        assert_eq!(id.as_str(), "us.gov.census.acs.2014.5yr.age-sex.median-age-by-sex");

        let jtw = SubjectRef::new("08", "Journey to Work").unwrap();
        let id = make_dataset_id(r, &jtw, &shell("means-of-transportation-to-work"));
        assert_eq!(
            id.as_str(),
            "us.gov.census.acs.2014.5yr.journey-to-work.means-of-transportation-to-work"
        );

        let r = Release::new(2009, Period::OneYear).unwrap();
        let x = SubjectRef { subject_id: "99".into(), name: "x".into(), slug: "x".into() };
        assert_eq!(make_dataset_id(r, &x, &shell("y")).as_str(), "us.gov.census.acs.2009.1yr.x.y");
    }

    #[test]
    fn parse_dataset_id_examples() {
        let parts = parse_dataset_id("us.gov.census.acs.2014.5yr.age-sex.median-age-by-sex").unwrap();
        assert_eq!(parts.release, Release::new(2014, Period::FiveYear).unwrap());
        assert_eq!(parts.subject_slug, "age-sex");
        assert_eq!(parts.table_slug, "median-age-by-sex");

        for bad in [
            "us.gov.census.acs.2014.9yr.a.b",
            "us.gov.census.acs.2014.5yr.a",
            "uk.gov.census.acs.2014.5yr.a.b",
            "us.gov.census.acs.20x4.5yr.a.b",
            "us.gov.census.acs.2014.5yr.a.B",
            "us.gov.census.acs.2001.5yr.a.b",
        ] {
            assert!(parse_dataset_id(bad).is_err(), "{bad} should fail");
        }
    }

    #[test]
    fn release_validation() {
        assert_eq!(Release::new(2004, Period::OneYear), Err(ModelError::YearOutOfRange(2004)));
        let r = Release::new(2014, Period::ThreeYear).unwrap();
        assert_eq!(r.dir_name(), "2014_3yr");
        assert_eq!(Release::from_dir_name("2014_3yr"), Some(r));
        assert_eq!(Release::from_dir_name("2014_4yr"), None);
        assert!("7yr".parse::<Period>().is_err());
    }

    #[test]
    fn subject_in_table_id() {
        assert_eq!(table_subject_id("B01002"), Some("01"));
        assert!(SubjectRef::new("001", "x").is_err());
    }

    proptest! {
        #[test]
        fn slugify_is_idempotent(text in "[ -~]{1,40}") {
            if let Ok(slug) = slugify(&text) {
                prop_assert!(is_valid_slug(&slug));
                prop_assert_eq!(slugify(&slug).unwrap(), slug);
            }
        }

        #[test]
        fn column_id_prefixed_by_table(table in "[A-Z][0-9]{2}[0-9A-Z]{1,5}", line in 1u32..=999) {
            let est = make_column_id(&table, line, ColumnKind::Estimate).unwrap();
            let moe = make_column_id(&table, line, ColumnKind::Moe).unwrap();
            prop_assert!(est.starts_with(&table.to_ascii_lowercase()));
            prop_assert_eq!(moe, format!("{est}_moe"));
        }

        #[test]
        fn dataset_id_round_trip(
            year in 2005u16..2100,
            p in 0usize..3,
            subject in "[a-z0-9]{1,8}(-[a-z0-9]{1,8}){0,3}",
            table in "[a-z0-9]{1,8}(-[a-z0-9]{1,8}){0,4}",
        ) {
            let release = Release::new(year, Period::ALL[p]).unwrap();
            let s = SubjectRef { subject_id: "01".into(), name: subject.clone(), slug: subject.clone() };
            let id = make_dataset_id(release, &s, &shell(&table));
            let parts = parse_dataset_id(id.as_str()).unwrap();
            prop_assert_eq!(parts.release, release);
            prop_assert_eq!(parts.subject_slug, subject);
            prop_assert_eq!(parts.table_slug, table);
        }
    }
}
