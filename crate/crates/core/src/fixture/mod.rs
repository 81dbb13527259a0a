//! Deterministic synthetic releases.
//!
//! [`FixtureModel`] is the generative model: table layout, geography and a
//! per-(table, state, geography) seeded token stream. [`generate_release`]
//! writes it in the canonical source layout; [`oracle_tables`] writes the
//! expected assembled output straight from the same model.

mod oracle;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{slugify, ModelError, Period, Release};

pub use oracle::{oracle_dictionary_json, oracle_tables, OracleOutput};

pub const DEFAULT_MAX_SEQUENCE_WIDTH: u32 = 1000;

const FILE_ID: &str = "ACSSF";

/// Jam tokens drawn by the generator. The empty token is left out so every
/// generated jam leaves a visible annotation.
const JAM_TOKENS: [&str; 8] = [
    ".",
    "*****",
    "-222222222",
    "-333333333",
    "-555555555",
    "-666666666",
    "-888888888",
    "-999999999",
];

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A forced cell value. Indices are 0-based over the global table order and
/// the national (stusab-sorted) row order; `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedCell {
    pub table_index: usize,
    pub row_index: usize,
    pub line: u32,
    pub estimate: String,
    pub moe: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub release: Release,
    pub states: Vec<String>,
    pub subjects: usize,
    pub tables_per_subject: usize,
    /// Per-table line counts, cycled over the global table order.
    pub column_counts: Vec<u32>,
    pub geos_per_state: u32,
    pub jam_density: f64,
    pub planted_cells: Vec<PlantedCell>,
    pub max_sequence_width: u32,
}

impl Default for FixtureSpec {
    /// Three states, two subjects of five tables, 200 geographies per state,
    /// with the (60, 48) carpool cell planted in the journey-to-work table.
    fn default() -> Self {
        FixtureSpec {
            seed: 42,
            release: Release::new(2014, Period::FiveYear).expect("valid release"),
            states: vec!["AA".into(), "BB".into(), "CC".into()],
            subjects: 2,
            tables_per_subject: 5,
            column_counts: vec![4, 10, 26, 100, 526],
            geos_per_state: 200,
            jam_density: 0.05,
            planted_cells: vec![PlantedCell {
                table_index: 5,
                row_index: 7,
                line: 3,
                estimate: "60".into(),
                moe: "48".into(),
            }],
            max_sequence_width: DEFAULT_MAX_SEQUENCE_WIDTH,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: String| Err(FixtureError::InvalidSpec(m));
        if self.states.is_empty() || self.subjects == 0 || self.tables_per_subject == 0 {
            return bad("states, subjects and tables_per_subject must be at least 1".into());
        }
        if self.geos_per_state == 0 || self.max_sequence_width == 0 {
            return bad("geos_per_state and max_sequence_width must be at least 1".into());
        }
        if self.column_counts.is_empty() || self.column_counts.iter().any(|&c| c == 0 || c > 999) {
            return bad("column_counts must be non-empty with every count in 1..=999".into());
        }
        if !(0.0..=1.0).contains(&self.jam_density) {
            return bad(format!("jam_density {} outside [0, 1]", self.jam_density));
        }
        if self.subjects > 99 || self.tables_per_subject > 999 {
            return bad("at most 99 subjects of 999 tables".into());
        }
        let mut states = self.states.clone();
        states.sort();
        states.dedup();
        if states.len() != self.states.len() {
            return bad("duplicate state".into());
        }
        if let Some(s) = self
            .states
            .iter()
            .find(|s| s.len() != 2 || !s.bytes().all(|b| b.is_ascii_uppercase()))
        {
            return bad(format!("state {s:?} is not a two-letter uppercase code"));
        }
        let tables = self.subjects * self.tables_per_subject;
        let rows = self.states.len() * self.geos_per_state as usize;
        for p in &self.planted_cells {
            if p.table_index >= tables || p.row_index >= rows {
                return bad(format!("planted cell {p:?} outside {tables} tables x {rows} rows"));
            }
            let width = self.column_counts[p.table_index % self.column_counts.len()];
            if p.line == 0 || p.line > width {
                return bad(format!("planted line {} outside 1..={width}", p.line));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSubject {
    pub subject_id: String,
    pub name: String,
    pub slug: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureTable {
    pub index: usize,
    pub subject_index: usize,
    pub table_id: String,
    pub title: String,
    pub slug: String,
    pub universe: String,
    pub sequence: u32,
    pub start_position: u32,
    pub cell_count: u32,
    pub column_names: Vec<String>,
    pub decimal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureGeo {
    pub stusab: String,
    pub logrecno: u32,
    pub sumlevel: String,
    pub geoid: String,
    pub name: String,
}

/// Tokens of one table for one geography, with jam flags known by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTokens {
    pub estimates: Vec<String>,
    pub margins: Vec<String>,
    pub estimate_jam: Vec<bool>,
    pub margin_jam: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureModel {
    pub spec: FixtureSpec,
    pub subjects: Vec<FixtureSubject>,
    /// Global order: subject-major, then table.
    pub tables: Vec<FixtureTable>,
    /// Sorted by stusab.
    pub states: Vec<String>,
    /// `geos[state][geo]`, logrecno ascending.
    pub geos: Vec<Vec<FixtureGeo>>,
    /// Per sequence, table indices in start-position order.
    pub sequences: Vec<Vec<usize>>,
}

struct SubjectTemplate {
    id: &'static str,
    name: &'static str,
    universe: &'static str,
    titles: &'static [&'static str],
}

const SUBJECT_TEMPLATES: &[SubjectTemplate] = &[
    SubjectTemplate {
        id: "01",
        name: "Age and Sex",
        universe: "Total population",
        titles: &[
            "Sex by Age",
            "Median Age by Sex",
            "Total Population",
            "Sex by Age by Race",
            "Median Age by Sex by Race",
        ],
    },
    SubjectTemplate {
        id: "08",
        name: "Journey to Work",
        universe: "Workers 16 years and over",
        titles: &[
            "Means of Transportation to Work",
            "Travel Time to Work",
            "Time Leaving Home to Go to Work",
            "Vehicles Available for Workers",
            "Place of Work by State and County",
        ],
    },
    SubjectTemplate {
        id: "16",
        name: "Language",
        universe: "Population 5 years and over",
        titles: &[
            "Language Spoken at Home by Ability to Speak English for the Population 5 Years and Over",
            "Household Language by Household Limited English Speaking Status",
        ],
    },
    SubjectTemplate {
        id: "19",
        name: "Income",
        universe: "Households",
        titles: &["Household Income in the Past 12 Months", "Median Household Income in the Past 12 Months"],
    },
    SubjectTemplate {
        id: "25",
        name: "Housing",
        universe: "Housing units",
        titles: &["Occupancy Status", "Median Number of Rooms"],
    },
];

fn known_column_names(title: &str) -> &'static [&'static str] {
    match title {
        "Means of Transportation to Work" => &[
            "Total:",
            "Car, truck, or van -- drove alone",
            "Car, truck, or van -- carpooled",
            "Public transportation (excluding taxicab)",
            "Taxicab",
            "Motorcycle",
            "Bicycle",
            "Walked",
            "Other means",
            "Worked at home",
        ],
        "Median Age by Sex" => &["Median age -- Total:", "Median age -- Male", "Median age -- Female"],
        "Sex by Age" => &["Total:", "Male:", "Female:"],
        _ => &[],
    }
}

fn state_name(stusab: &str) -> String {
    match stusab {
        "HI" => "Hawaii".into(),
        "NY" => "New York".into(),
        "TN" => "Tennessee".into(),
        other => format!("State {other}"),
    }
}

/// Sumlevel of the geography at a 0-based position within its state.
fn sumlevel_for(geo_index: u32) -> &'static str {
    if geo_index.is_multiple_of(3) {
        "040"
    } else {
        "050"
    }
}

impl FixtureModel {
    pub fn new(spec: &FixtureSpec) -> Result<Self, FixtureError> {
        spec.validate()?;

        let mut subjects = Vec::with_capacity(spec.subjects);
        let mut tables = Vec::new();
        for si in 0..spec.subjects {
            let template = SUBJECT_TEMPLATES.get(si);
            let (subject_id, name, universe) = match template {
                Some(t) => (t.id.to_string(), t.name.to_string(), t.universe.to_string()),
                None => (
                    format!("{:02}", 50 + si - SUBJECT_TEMPLATES.len()),
                    format!("Synthetic Subject {}", si + 1),
                    "Synthetic universe".to_string(),
                ),
            };
            for ti in 0..spec.tables_per_subject {
                let index = tables.len();
                let title = match template.and_then(|t| t.titles.get(ti)) {
                    Some(t) => t.to_string(),
                    None => format!("{name} Detail Table {}", ti + 1),
                };
                let cell_count = spec.column_counts[index % spec.column_counts.len()];
                let known = known_column_names(&title);
                let column_names = (1..=cell_count)
                    .map(|line| match known.get(line as usize - 1) {
                        Some(n) => n.to_string(),
                        None => format!("Line {line}"),
                    })
                    .collect();
                tables.push(FixtureTable {
                    index,
                    subject_index: si,
                    table_id: format!("B{subject_id}{:03}", ti + 1),
                    slug: slugify(&title)?,
                    decimal: title.starts_with("Median"),
                    title,
                    universe: universe.clone(),
                    sequence: 0,
                    start_position: 0,
                    cell_count,
                    column_names,
                });
            }
            subjects.push(FixtureSubject {
                slug: slugify(&name)?,
                subject_id,
                name,
            });
        }

        // Greedy packing in global table order.
        let mut sequences: Vec<Vec<usize>> = Vec::new();
        let mut width = 0u32;
        for table in tables.iter_mut() {
            if sequences.is_empty() || width + table.cell_count > spec.max_sequence_width && width > 0 {
                sequences.push(Vec::new());
                width = 0;
            }
            table.sequence = sequences.len() as u32;
            table.start_position = width + 1;
            width += table.cell_count;
            sequences.last_mut().expect("pushed").push(table.index);
        }

        let mut states = spec.states.clone();
        states.sort();
        let geos = states
            .iter()
            .enumerate()
            .map(|(si, stusab)| {
                let state = state_name(stusab);
                (0..spec.geos_per_state)
                    .map(|gi| {
                        let sumlevel = sumlevel_for(gi);
                        FixtureGeo {
                            stusab: stusab.clone(),
                            logrecno: gi + 1,
                            geoid: format!("{sumlevel}00US{:02}{:05}", si + 1, gi),
                            name: if sumlevel == "040" {
                                format!("{state} Region {gi}")
                            } else {
                                format!("County {gi:03}, {state}")
                            },
                            sumlevel: sumlevel.to_string(),
                        }
                    })
                    .collect()
            })
            .collect();

        Ok(FixtureModel {
            spec: spec.clone(),
            subjects,
            tables,
            states,
            geos,
            sequences,
        })
    }

    pub fn sequence_width(&self, sequence: usize) -> u32 {
        self.sequences[sequence].iter().map(|&t| self.tables[t].cell_count).sum()
    }

    fn cell_rng(&self, table: usize, state: usize, geo: usize) -> ChaCha8Rng {
        // splitmix64 finalizer over the coordinates.
        let mut z = self.spec.seed ^ 0x9e37_79b9_7f4a_7c15;
        for v in [table as u64, state as u64, geo as u64] {
            z = z.wrapping_add(v.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
        }
        ChaCha8Rng::seed_from_u64(z)
    }

    fn token(rng: &mut ChaCha8Rng, decimal: bool, margin: bool, jam_density: f64) -> (String, bool) {
        if jam_density > 0.0 && rng.random::<f64>() < jam_density {
            return (JAM_TOKENS[rng.random_range(0..JAM_TOKENS.len())].to_string(), true);
        }
        let token = if decimal {
            let tenths: u32 = rng.random_range(0..if margin { 200 } else { 1000 });
            if tenths.is_multiple_of(10) {
                (tenths / 10).to_string()
            } else {
                format!("{}.{}", tenths / 10, tenths % 10)
            }
        } else {
            rng.random_range(0..if margin { 5_000u32 } else { 100_000 }).to_string()
        };
        (token, false)
    }

    /// Cells of `table` for geography `geo` of state `state` (indices into
    /// the sorted state list and its geography list).
    pub fn cells(&self, table: usize, state: usize, geo: usize) -> CellTokens {
        let t = &self.tables[table];
        let mut rng = self.cell_rng(table, state, geo);
        let n = t.cell_count as usize;
        let mut out = CellTokens {
            estimates: Vec::with_capacity(n),
            margins: Vec::with_capacity(n),
            estimate_jam: Vec::with_capacity(n),
            margin_jam: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let (e, ej) = Self::token(&mut rng, t.decimal, false, self.spec.jam_density);
            let (m, mj) = Self::token(&mut rng, t.decimal, true, self.spec.jam_density);
            out.estimates.push(e);
            out.estimate_jam.push(ej);
            out.margins.push(m);
            out.margin_jam.push(mj);
        }
        let row = state * self.spec.geos_per_state as usize + geo;
        for p in self
            .spec
            .planted_cells
            .iter()
            .filter(|p| p.table_index == table && p.row_index == row)
        {
            let i = p.line as usize - 1;
            out.estimates[i] = p.estimate.clone();
            out.estimate_jam[i] = is_planted_jam(&p.estimate);
            out.margins[i] = p.moe.clone();
            out.margin_jam[i] = is_planted_jam(&p.moe);
        }
        out
    }
}

/// Planted tokens follow the default jam policy, empty token included.
fn is_planted_jam(token: &str) -> bool {
    token.is_empty() || JAM_TOKENS.contains(&token)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureSummary {
    pub release_dir: PathBuf,
    pub truth_dir: PathBuf,
    pub geo_files: usize,
    pub sequences: usize,
    pub data_pairs: usize,
    pub tables: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>, FixtureError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| FixtureError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| FixtureError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<(), FixtureError> {
    let mut w = create(path)?;
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|source| FixtureError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Write the release's source tree under `root/{year}_{period}/` plus ground
/// truth under its `truth/` directory.
pub fn generate_release(spec: &FixtureSpec, root: &Path) -> Result<FixtureSummary, FixtureError> {
    let model = FixtureModel::new(spec)?;
    let release = spec.release;
    let stem = format!("{}{}", release.year(), release.period().digit());
    let dir = root.join(release.dir_name());

    let mut lookup = csv_writer(create(&dir.join("lookup.csv"))?);
    lookup.write_record([
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
    ])?;
    for seq in &model.sequences {
        for &ti in seq {
            let t = &model.tables[ti];
            let s = &model.subjects[t.subject_index];
            let sequence = t.sequence.to_string();
            lookup.write_record([
                FILE_ID,
                &t.table_id,
                &sequence,
                "",
                &t.start_position.to_string(),
                &t.cell_count.to_string(),
                &s.subject_id,
                &s.name,
                &t.title,
                &t.universe,
            ])?;
            for (i, name) in t.column_names.iter().enumerate() {
                lookup.write_record([
                    FILE_ID,
                    &t.table_id,
                    &sequence,
                    &(i + 1).to_string(),
                    "",
                    "",
                    &s.subject_id,
                    &s.name,
                    name,
                    "",
                ])?;
            }
        }
    }
    lookup.flush().map_err(|source| FixtureError::Io {
        path: dir.join("lookup.csv"),
        source,
    })?;

    for (si, stusab) in model.states.iter().enumerate() {
        let lower = stusab.to_ascii_lowercase();
        let mut geo = csv_writer(create(&dir.join("geo").join(format!("g{stem}{lower}.csv")))?);
        geo.write_record(["FILEID", "STUSAB", "SUMLEVEL", "LOGRECNO", "GEOID", "NAME"])?;
        for g in &model.geos[si] {
            geo.write_record([FILE_ID, &g.stusab, &g.sumlevel, &format!("{:07}", g.logrecno), &g.geoid, &g.name])?;
        }
        geo.flush().map_err(|source| FixtureError::Io {
            path: dir.join("geo"),
            source,
        })?;

        for (qi, seq) in model.sequences.iter().enumerate() {
            let sequence = qi as u32 + 1;
            let data_dir = dir.join("data");
            let mut est = csv_writer(create(&data_dir.join(format!("e{stem}{lower}{sequence:04}000.txt")))?);
            let mut moe = csv_writer(create(&data_dir.join(format!("m{stem}{lower}{sequence:04}000.txt")))?);
            for (gi, g) in model.geos[si].iter().enumerate() {
                let key = |kind: &str| {
                    vec![
                        FILE_ID.to_string(),
                        kind.to_string(),
                        stusab.clone(),
                        "000".to_string(),
                        format!("{sequence:04}"),
                        format!("{:07}", g.logrecno),
                    ]
                };
                let mut e_rec = key("est");
                let mut m_rec = key("moe");
                for &ti in seq {
                    let cells = model.cells(ti, si, gi);
                    e_rec.extend(cells.estimates);
                    m_rec.extend(cells.margins);
                }
                est.write_record(&e_rec)?;
                moe.write_record(&m_rec)?;
            }
            for w in [&mut est, &mut moe] {
                w.flush().map_err(|source| FixtureError::Io {
                    path: data_dir.clone(),
                    source,
                })?;
            }
        }
    }

    let truth_dir = dir.join("truth");
    let truth = oracle_tables(spec, false)?;
    for (name, contents) in &truth.tables {
        write_all(&truth_dir.join(name), contents.as_bytes())?;
    }
    write_all(&truth_dir.join("dictionary.json"), truth.dictionary.as_bytes())?;

    Ok(FixtureSummary {
        release_dir: dir,
        truth_dir,
        geo_files: model.states.len(),
        sequences: model.sequences.len(),
        data_pairs: model.states.len() * model.sequences.len(),
        tables: model.tables.len(),
    })
}
