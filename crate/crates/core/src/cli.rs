//! The `acs` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::assemble::format_numeric;
use crate::catalog::{self, load_catalog, Filters};
use crate::dictionary::validate_dictionary;
use crate::fixture::{generate_release, FixtureSpec};
use crate::ingest::stream_sequence_pair;
use crate::model::{Period, Release};
use crate::pipeline::{build_release, load_release, BuildOptions};
use crate::stats;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Parser)]
#[command(name = "acs", version, about = "Build and browse ACS Summary File tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ReleaseArgs {
    #[arg(long)]
    year: u16,
    #[arg(long, default_value = "5yr")]
    period: Period,
}

impl ReleaseArgs {
    fn release(&self) -> Result<Release, BoxError> {
        Ok(Release::new(self.year, self.period)?)
    }
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output tree of built releases.
    #[arg(long, env = "ACS_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    sumlevel: Option<String>,
    #[arg(long)]
    stusab: Option<String>,
    #[arg(long)]
    geoid: Option<String>,
}

impl From<FilterArgs> for Filters {
    fn from(a: FilterArgs) -> Self {
        Filters {
            sumlevel: a.sumlevel,
            stusab: a.stusab,
            geoid: a.geoid,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a deterministic synthetic release plus ground truth.
    Fixture {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "AA,BB,CC")]
        states: Vec<String>,
        #[arg(long, default_value_t = 2)]
        subjects: usize,
        #[arg(long, default_value_t = 5)]
        tables_per_subject: usize,
        #[arg(long, value_delimiter = ',', default_value = "4,10,26,100,526")]
        column_counts: Vec<u32>,
        #[arg(long, default_value_t = 200)]
        geos_per_state: u32,
        #[arg(long, default_value_t = 0.05)]
        jam_density: f64,
        #[arg(long, default_value_t = crate::fixture::DEFAULT_MAX_SEQUENCE_WIDTH)]
        max_sequence_width: u32,
        /// Skip the default planted (60, 48) cell.
        #[arg(long)]
        no_plant: bool,
        #[arg(long, default_value_t = 2014)]
        year: u16,
        #[arg(long, default_value = "5yr")]
        period: Period,
    },
    /// Parse and stream a source release without writing anything.
    IngestCheck {
        #[arg(long)]
        root: PathBuf,
        #[command(flatten)]
        release: ReleaseArgs,
    },
    /// Assemble every table of a release and write the dictionary.
    Build {
        #[arg(long)]
        root: PathBuf,
        #[command(flatten)]
        out: OutArg,
        #[command(flatten)]
        release: ReleaseArgs,
        /// Subject ids or slugs to assemble.
        #[arg(long, value_delimiter = ',')]
        subjects: Option<Vec<String>>,
        /// Emit `_ann` columns carrying jam tokens.
        #[arg(long)]
        annotations: bool,
        #[arg(long)]
        overwrite: bool,
        /// Worker threads; 0 uses the available parallelism.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Check built tables against the dictionary.
    Validate {
        #[command(flatten)]
        out: OutArg,
        #[command(flatten)]
        release: ReleaseArgs,
    },
    /// Write a built table, optionally filtered, as CSV.
    Export {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        dataset_id: String,
        #[command(flatten)]
        filters: FilterArgs,
        /// Destination file; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Margin-of-error arithmetic and column statistics.
    Stats {
        #[command(subcommand)]
        op: StatsOp,
    },
    /// Keyword search over titles, universes and column names.
    Search {
        #[command(flatten)]
        out: OutArg,
        query: Vec<String>,
    },
    /// Serve the catalog over HTTP.
    Serve {
        #[command(flatten)]
        out: OutArg,
        #[arg(long, default_value_t = 8080, value_parser = clap::value_parser!(u16).range(1..))]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

#[derive(Debug, Subcommand)]
enum StatsOp {
    /// Standard error of a 90% margin of error.
    Se {
        #[arg(long, allow_negative_numbers = true)]
        moe: f64,
        #[arg(long)]
        digits: Option<usize>,
    },
    /// Coefficient of variation in percent.
    Cv {
        #[arg(long, allow_negative_numbers = true)]
        estimate: f64,
        #[arg(long, allow_negative_numbers = true)]
        moe: f64,
        #[arg(long)]
        digits: Option<usize>,
    },
    /// 90% confidence interval.
    Ci {
        #[arg(long, allow_negative_numbers = true)]
        estimate: f64,
        #[arg(long, allow_negative_numbers = true)]
        moe: f64,
        #[arg(long)]
        digits: Option<usize>,
    },
    /// Margin of error of a sum of estimates.
    Agg {
        #[arg(required = true, allow_negative_numbers = true)]
        moes: Vec<f64>,
        #[arg(long)]
        digits: Option<usize>,
    },
    /// Descriptive statistics of a built table column.
    Describe {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        dataset_id: String,
        #[arg(long)]
        column: String,
        #[command(flatten)]
        filters: FilterArgs,
    },
}

fn fixed(value: f64, digits: Option<usize>, default: Option<usize>) -> String {
    match digits.or(default) {
        Some(d) => format!("{value:.d$}"),
        None => format_numeric(value),
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), BoxError> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct Shape {
    tables: usize,
    median_columns: f64,
    mean_columns: f64,
    share_under_50: f64,
    max_columns: u32,
}

/// Column-count profile of a lookup's tables.
fn shape(counts: &[u32]) -> Option<Shape> {
    if counts.is_empty() {
        return None;
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    Some(Shape {
        tables: n,
        median_columns: median,
        mean_columns: sorted.iter().map(|&c| c as f64).sum::<f64>() / n as f64,
        share_under_50: sorted.iter().filter(|&&c| c < 50).count() as f64 / n as f64,
        max_columns: sorted[n - 1],
    })
}

fn ingest_check(root: &Path, release: Release, out: &mut dyn Write) -> Result<(), BoxError> {
    let loaded = load_release(root, release)?;
    let mut rows = 0usize;
    for ((stusab, sequence), pair) in &loaded.manifest.data_pairs {
        let width = loaded
            .layouts
            .get(sequence)
            .map(|l| l.width() as usize)
            .ok_or_else(|| format!("sequence {sequence} has data files but no tables in the lookup"))?;
        let mut n = 0;
        for row in stream_sequence_pair(&pair.estimate, &pair.margin, width)? {
            row?;
            n += 1;
        }
        log::info!("state {stusab} sequence {sequence:04}: {n} rows");
        rows += n;
    }
    let counts: Vec<u32> = loaded.lookup.shells.iter().map(|s| s.cell_count).collect();
    print_json(
        out,
        &json!({
            "release": release,
            "states": loaded.manifest.geo_paths.len(),
            "sequences": loaded.layouts.len(),
            "data_pairs": loaded.manifest.data_pairs.len(),
            "tables": loaded.lookup.shells.len(),
            "columns": loaded.lookup.columns.len(),
            "geographies": loaded.geo_rows.values().sum::<usize>(),
            "sequence_rows": rows,
            "shape": shape(&counts),
        }),
    )
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), BoxError> {
    match command {
        Command::Fixture {
            root,
            seed,
            states,
            subjects,
            tables_per_subject,
            column_counts,
            geos_per_state,
            jam_density,
            max_sequence_width,
            no_plant,
            year,
            period,
        } => {
            let defaults = FixtureSpec::default();
            let spec = FixtureSpec {
                seed,
                release: Release::new(year, period)?,
                states,
                subjects,
                tables_per_subject,
                column_counts,
                geos_per_state,
                jam_density,
                planted_cells: if no_plant { vec![] } else { defaults.planted_cells },
                max_sequence_width,
            };
            let summary = generate_release(&spec, &root)?;
            print_json(
                out,
                &json!({
                    "release_dir": summary.release_dir,
                    "truth_dir": summary.truth_dir,
                    "geo_files": summary.geo_files,
                    "sequences": summary.sequences,
                    "data_pairs": summary.data_pairs,
                    "tables": summary.tables,
                }),
            )
        }
        Command::IngestCheck { root, release } => ingest_check(&root, release.release()?, out),
        Command::Build {
            root,
            out: out_dir,
            release,
            subjects,
            annotations,
            overwrite,
            jobs,
        } => {
            let options = BuildOptions {
                subjects,
                annotations,
                overwrite,
                jobs,
            };
            let report = build_release(&root, &out_dir.out, release.release()?, &options)?;
            let tables: Vec<_> = report
                .tables
                .iter()
                .map(|t| {
                    json!({
                        "dataset_id": t.dataset_id,
                        "path": t.path,
                        "rows": t.rows,
                        "numeric_cells": t.numeric_cells,
                        "jam_cells": t.jam_cells,
                    })
                })
                .collect();
            print_json(
                out,
                &json!({
                    "release_dir": report.release_dir,
                    "dictionary": report.dictionary_path,
                    "tables": tables,
                    "warnings": report.validation.warnings().collect::<Vec<_>>(),
                }),
            )
        }
        Command::Validate { out: out_dir, release } => {
            let release = release.release()?;
            let catalog = load_catalog(&out_dir.out)?;
            let dict = catalog
                .dictionary(release)
                .ok_or_else(|| catalog::CatalogError::UnknownRelease(release.to_string()))?;
            let handles: Vec<_> = catalog
                .dataset_ids()
                .filter_map(|id| catalog.table(id.as_str()).ok())
                .filter(|h| h.release == release)
                .cloned()
                .collect();
            let report = validate_dictionary(dict, &handles);
            print_json(
                out,
                &json!({
                    "release": release,
                    "tables": handles.len(),
                    "dictionary_tables": dict.table_count(),
                    "findings": report.findings,
                }),
            )?;
            if report.is_consistent() {
                Ok(())
            } else {
                Err(format!("{} finding(s)", report.findings.len()).into())
            }
        }
        Command::Export {
            out: out_dir,
            dataset_id,
            filters,
            output,
        } => {
            let catalog = load_catalog(&out_dir.out)?;
            match output {
                Some(path) => {
                    let file = File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                    catalog.export(&dataset_id, &filters.into(), BufWriter::new(file))?;
                }
                None => catalog.export(&dataset_id, &filters.into(), out)?,
            }
            Ok(())
        }
        Command::Stats { op } => run_stats(op, out),
        Command::Search { out: out_dir, query } => {
            let catalog = load_catalog(&out_dir.out)?;
            print_json(out, &catalog.search(&query.join(" "))?)
        }
        Command::Serve { out: out_dir, port, host } => {
            let catalog = load_catalog(&out_dir.out)?;
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(catalog::http::serve(catalog, SocketAddr::new(host, port)))?;
            Ok(())
        }
    }
}

fn run_stats(op: StatsOp, out: &mut dyn Write) -> Result<(), BoxError> {
    match op {
        StatsOp::Se { moe, digits } => {
            writeln!(out, "{}", fixed(stats::standard_error(moe)?, digits, Some(2)))?;
        }
        StatsOp::Cv { estimate, moe, digits } => {
            writeln!(
                out,
                "{}",
                fixed(stats::coefficient_of_variation(estimate, moe)?, digits, Some(1))
            )?;
        }
        StatsOp::Ci { estimate, moe, digits } => {
            let (lo, hi) = stats::confidence_interval(estimate, moe)?;
            writeln!(out, "{} {}", fixed(lo, digits, None), fixed(hi, digits, None))?;
        }
        StatsOp::Agg { moes, digits } => {
            writeln!(out, "{}", fixed(stats::aggregate_moe(&moes)?, digits, None))?;
        }
        StatsOp::Describe {
            out: out_dir,
            dataset_id,
            column,
            filters,
        } => {
            let catalog = load_catalog(&out_dir.out)?;
            print_json(out, &catalog.quick_stats(&dataset_id, &column, &filters.into())?)?;
        }
    }
    Ok(())
}

/// Run with explicit output streams; returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    if let Command::Build { root, out: o, .. } = &cli.command {
        if root == &o.out {
            let _ = writeln!(err, "error: --out must differ from --root");
            return EXIT_USAGE;
        }
    }
    match execute(cli.command, out).and_then(|()| out.flush().map_err(Into::into)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DOMAIN
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    // Neither stream stays locked across the run: the logger writes to
    // stderr from worker threads.
    let mut out = BufWriter::new(std::io::stdout());
    run_with(argv, &mut out, &mut std::io::stderr())
}
