//! End-to-end build: source tree -> per-table CSVs + dictionary.json.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use thiserror::Error;

use crate::assemble::{
    build_geo_index, data_header, table_csv_writer, AssembleError, GeoField, GeoIndex, JamPolicy, SequenceLayout,
    TableAssembler,
};
use crate::dictionary::{
    build_dictionary, emit_dictionary, validate_dictionary, Dictionary, DictionaryError, TableHeader,
    ValidationReport, DICTIONARY_FILE,
};
use crate::ingest::{discover_release, parse_geography, parse_lookup, stream_sequence_pair, IngestError, Lookup, ReleaseManifest};
use crate::model::{make_dataset_id, ColumnDef, DatasetId, Release, TableShell};

pub const TABLES_DIR: &str = "tables";

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("output directory {0} is the source root")]
    OutIsRoot(PathBuf),
    #[error("dictionary and tables disagree: {0} finding(s)")]
    Inconsistent(usize),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    /// Subject ids or slugs; `None` builds every table.
    pub subjects: Option<Vec<String>>,
    pub annotations: bool,
    pub overwrite: bool,
    /// Worker threads; 0 uses the available parallelism.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableOutput {
    pub dataset_id: DatasetId,
    pub table_id: String,
    pub path: PathBuf,
    pub rows: usize,
    pub numeric_cells: usize,
    pub jam_cells: usize,
    /// Rows contributed per state, in stusab order.
    pub state_rows: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub release_dir: PathBuf,
    pub dictionary_path: PathBuf,
    pub tables: Vec<TableOutput>,
    pub validation: ValidationReport,
}

struct HeaderOnly {
    table_id: String,
    data_header: Vec<String>,
}

impl TableHeader for HeaderOnly {
    fn table_id(&self) -> &str {
        &self.table_id
    }

    fn data_header(&self) -> &[String] {
        &self.data_header
    }
}

/// Parsed, partition-checked inputs of one release.
pub struct LoadedRelease {
    pub manifest: ReleaseManifest,
    pub lookup: Lookup,
    pub layouts: BTreeMap<u32, SequenceLayout>,
    pub geo_index: GeoIndex,
    pub geo_rows: BTreeMap<String, usize>,
}

/// Discover, parse and validate everything that precedes assembly.
pub fn load_release(root: &Path, release: Release) -> Result<LoadedRelease, BuildError> {
    let manifest = discover_release(root, release)?;
    let lookup = parse_lookup(&manifest.lookup_path)?;

    let mut by_sequence: BTreeMap<u32, Vec<TableShell>> = BTreeMap::new();
    for shell in &lookup.shells {
        by_sequence.entry(shell.sequence).or_default().push(shell.clone());
    }
    let mut layouts = BTreeMap::new();
    for (sequence, shells) in by_sequence {
        layouts.insert(sequence, SequenceLayout::new(sequence, shells)?);
    }

    let mut records = Vec::new();
    let mut geo_rows = BTreeMap::new();
    for (stusab, path) in &manifest.geo_paths {
        let parsed = parse_geography(path)?;
        geo_rows.insert(stusab.clone(), parsed.len());
        records.extend(parsed);
    }

    Ok(LoadedRelease {
        manifest,
        lookup,
        layouts,
        geo_index: build_geo_index(records),
        geo_rows,
    })
}

fn select_tables<'a>(lookup: &'a Lookup, subjects: Option<&[String]>) -> Result<Vec<&'a TableShell>, BuildError> {
    let Some(wanted) = subjects else {
        return Ok(lookup.shells.iter().collect());
    };
    let mut ids = BTreeSet::new();
    for w in wanted {
        let subject = lookup
            .subjects
            .iter()
            .find(|s| &s.subject_id == w || &s.slug == w)
            .ok_or_else(|| BuildError::UnknownSubject(w.clone()))?;
        ids.insert(subject.subject_id.as_str());
    }
    Ok(lookup
        .shells
        .iter()
        .filter(|s| ids.contains(s.subject_id.as_str()))
        .collect())
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BuildError + '_ {
    move |source| BuildError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Assemble one table state by state and stream it to `{dir}/{dataset_id}.csv`.
///
/// Only one state's rows are held at a time; the file appears under its final
/// name once complete.
fn build_table(
    loaded: &LoadedRelease,
    shell: &TableShell,
    columns: &[ColumnDef],
    policy: &JamPolicy,
    dir: &Path,
) -> Result<TableOutput, BuildError> {
    let release = loaded.manifest.release;
    let subject = loaded
        .lookup
        .subject(&shell.subject_id)
        .ok_or_else(|| DictionaryError::MissingSubject {
            table_id: shell.table_id.clone(),
            subject_id: shell.subject_id.clone(),
        })?;
    let dataset_id = make_dataset_id(release, subject, shell);
    let layout = &loaded.layouts[&shell.sequence];
    let path = dir.join(format!("{dataset_id}.csv"));
    let partial = dir.join(format!(".{dataset_id}.csv.partial"));

    let file = File::create(&partial).map_err(io_err(&partial))?;
    let mut csv = table_csv_writer(BufWriter::new(file));
    let geo_header = GeoField::DEFAULT.iter().map(|f| f.header().to_string());
    csv.write_record(geo_header.chain(data_header(columns, policy.annotations_enabled)))
        .map_err(AssembleError::from)?;

    let mut out = TableOutput {
        dataset_id: dataset_id.clone(),
        table_id: shell.table_id.clone(),
        path: path.clone(),
        rows: 0,
        numeric_cells: 0,
        jam_cells: 0,
        state_rows: BTreeMap::new(),
    };
    for ((stusab, sequence), pair) in &loaded.manifest.data_pairs {
        if *sequence != shell.sequence {
            continue;
        }
        let mut assembler = TableAssembler::new(dataset_id.clone(), shell, columns, policy, &GeoField::DEFAULT)?;
        for row in stream_sequence_pair(&pair.estimate, &pair.margin, layout.width() as usize)? {
            assembler.push(&row?, &loaded.geo_index)?;
        }
        let table = assembler.finish();
        let (numeric, jam) = table.cell_counts();
        out.numeric_cells += numeric;
        out.jam_cells += jam;
        out.rows += table.rows.len();
        out.state_rows.insert(stusab.clone(), table.rows.len());
        for row in &table.rows {
            csv.write_record(row.fields(policy.annotations_enabled))
                .map_err(AssembleError::from)?;
        }
        info!(
            "{}: state {stusab} sequence {sequence:04}: {} rows",
            shell.table_id,
            table.rows.len()
        );
    }
    let mut writer = csv
        .into_inner()
        .map_err(|e| BuildError::Io {
            path: partial.clone(),
            source: io::Error::other(e.to_string()),
        })?;
    writer.flush().map_err(io_err(&partial))?;
    drop(writer);
    fs::rename(&partial, &path).map_err(io_err(&path))?;
    Ok(out)
}

/// Build `{out}/{year}_{period}/tables/*.csv` and `dictionary.json` from the
/// source tree under `root`.
///
/// The dictionary always covers the whole release; a subject filter limits
/// which tables are assembled, and tables of other subjects already on disk
/// are left alone.
pub fn build_release(root: &Path, out: &Path, release: Release, options: &BuildOptions) -> Result<BuildReport, BuildError> {
    if fs::canonicalize(root).ok().is_some_and(|r| fs::canonicalize(out).ok() == Some(r)) {
        return Err(BuildError::OutIsRoot(out.to_path_buf()));
    }
    let loaded = load_release(root, release)?;
    let selected = select_tables(&loaded.lookup, options.subjects.as_deref())?;
    let dictionary = build_dictionary(
        release,
        &loaded.lookup.shells,
        &loaded.lookup.columns,
        &loaded.lookup.subjects,
    )?;

    let release_dir = out.join(release.dir_name());
    let tables_dir = release_dir.join(TABLES_DIR);
    let dictionary_path = release_dir.join(DICTIONARY_FILE);
    fs::create_dir_all(&tables_dir).map_err(io_err(&tables_dir))?;

    let mut planned = Vec::with_capacity(selected.len());
    for shell in &selected {
        let subject = loaded.lookup.subject(&shell.subject_id);
        if let Some(subject) = subject {
            planned.push(tables_dir.join(format!("{}.csv", make_dataset_id(release, subject, shell))));
        }
    }
    if !options.overwrite {
        for path in planned.iter().chain([&dictionary_path]) {
            if path.exists() {
                return Err(AssembleError::WouldOverwrite(path.clone()).into());
            }
        }
    }

    let policy = JamPolicy::default().with_annotations(options.annotations);
    let columns: Vec<Vec<ColumnDef>> = selected
        .iter()
        .map(|s| loaded.lookup.columns_of(&s.table_id).cloned().collect())
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| BuildError::Pool(e.to_string()))?;
    let tables: Vec<TableOutput> = pool.install(|| {
        selected
            .par_iter()
            .zip(columns.par_iter())
            .map(|(shell, cols)| build_table(&loaded, shell, cols, &policy, &tables_dir))
            .collect::<Result<_, _>>()
    })?;

    let headers: Vec<HeaderOnly> = selected
        .iter()
        .zip(&columns)
        .map(|(shell, cols)| HeaderOnly {
            table_id: shell.table_id.clone(),
            data_header: data_header(cols, policy.annotations_enabled),
        })
        .collect();
    let validation = validate_dictionary(&restrict(&dictionary, &selected), &headers);
    if !validation.is_consistent() {
        return Err(BuildError::Inconsistent(validation.findings.len()));
    }
    emit_dictionary(&dictionary, &dictionary_path)?;
    info!("{}: {} table(s) written", release, tables.len());

    Ok(BuildReport {
        release_dir,
        dictionary_path,
        tables,
        validation,
    })
}

/// The dictionary limited to the given tables, for validating a partial build.
fn restrict(dict: &Dictionary, shells: &[&TableShell]) -> Dictionary {
    let keep: BTreeSet<&str> = shells.iter().map(|s| s.table_id.as_str()).collect();
    let mut out = dict.clone();
    for subject in out.subjects.values_mut() {
        subject.tables.retain(|id, _| keep.contains(id.as_str()));
    }
    out
}
