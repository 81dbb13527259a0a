//! Expected pipeline output computed directly from the fixture model.
//!
//! Nothing here goes through ingest or assembly: rows come from
//! [`FixtureModel::cells`] and CSV/JSON text is produced independently.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use super::{FixtureError, FixtureModel, FixtureSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleOutput {
    /// `{dataset_id}.csv` -> file contents.
    pub tables: BTreeMap<String, String>,
    pub dictionary: String,
}

fn dataset_id(model: &FixtureModel, table: usize) -> String {
    let t = &model.tables[table];
    let release = model.spec.release;
    format!(
        "us.gov.census.acs.{}.{}.{}.{}",
        release.year(),
        release.period().as_str(),
        model.subjects[t.subject_index].slug,
        t.slug
    )
}

fn column_id(table_id: &str, line: usize) -> String {
    format!("{}_{line:03}", table_id.to_ascii_lowercase())
}

/// Quote a field only when it holds a comma, quote or line break.
fn csv_field(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn csv_line(out: &mut String, fields: &[String]) {
    let line: Vec<String> = fields.iter().map(|f| csv_field(f)).collect();
    out.push_str(&line.join(","));
    out.push('\n');
}

pub fn oracle_tables(spec: &FixtureSpec, annotations: bool) -> Result<OracleOutput, FixtureError> {
    let model = FixtureModel::new(spec)?;
    let mut tables = BTreeMap::new();

    for (ti, t) in model.tables.iter().enumerate() {
        let mut text = String::new();
        let mut header: Vec<String> = ["name", "geoid", "stusab", "sumlevel"].map(String::from).to_vec();
        for line in 1..=t.cell_count as usize {
            let id = column_id(&t.table_id, line);
            header.push(id.clone());
            header.push(format!("{id}_moe"));
            if annotations {
                header.push(format!("{id}_ann"));
                header.push(format!("{id}_moe_ann"));
            }
        }
        csv_line(&mut text, &header);

        for (si, geos) in model.geos.iter().enumerate() {
            for (gi, g) in geos.iter().enumerate() {
                let cells = model.cells(ti, si, gi);
                let mut row = vec![g.name.clone(), g.geoid.clone(), g.stusab.clone(), g.sumlevel.clone()];
                for i in 0..t.cell_count as usize {
                    let shown = |token: &String, jam: bool| if jam { String::new() } else { token.clone() };
                    row.push(shown(&cells.estimates[i], cells.estimate_jam[i]));
                    row.push(shown(&cells.margins[i], cells.margin_jam[i]));
                    if annotations {
                        let ann = |token: &String, jam: bool| if jam { token.clone() } else { String::new() };
                        row.push(ann(&cells.estimates[i], cells.estimate_jam[i]));
                        row.push(ann(&cells.margins[i], cells.margin_jam[i]));
                    }
                }
                csv_line(&mut text, &row);
            }
        }
        tables.insert(format!("{}.csv", dataset_id(&model, ti)), text);
    }

    Ok(OracleOutput {
        tables,
        dictionary: oracle_dictionary_json(&model),
    })
}

pub fn oracle_dictionary_json(model: &FixtureModel) -> String {
    let mut subject_order: Vec<usize> = (0..model.subjects.len()).collect();
    subject_order.sort_by(|&a, &b| model.subjects[a].subject_id.cmp(&model.subjects[b].subject_id));

    let mut subjects = Map::new();
    for si in subject_order {
        let s = &model.subjects[si];
        let mut owned: Vec<_> = model.tables.iter().filter(|t| t.subject_index == si).collect();
        owned.sort_by(|a, b| a.table_id.cmp(&b.table_id));
        let mut tables = Map::new();
        for t in owned {
            let mut columns = Map::new();
            for (i, name) in t.column_names.iter().enumerate() {
                let id = column_id(&t.table_id, i + 1);
                columns.insert(
                    format!("{:03}", i + 1),
                    json!({
                        "display_name": name,
                        "column_id": id,
                        "moe_column_id": format!("{id}_moe"),
                    }),
                );
            }
            tables.insert(
                t.table_id.clone(),
                json!({
                    "title": t.title,
                    "slug": t.slug,
                    "universe": t.universe,
                    "sequence": t.sequence,
                    "start_position": t.start_position,
                    "cell_count": t.cell_count,
                    "columns": Value::Object(columns),
                }),
            );
        }
        subjects.insert(
            s.subject_id.clone(),
            json!({ "name": s.name, "slug": s.slug, "tables": Value::Object(tables) }),
        );
    }

    let release = model.spec.release;
    let doc = json!({
        "release": { "year": release.year(), "period": release.period().as_str() },
        "subjects": Value::Object(subjects),
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json values serialize");
    text.push('\n');
    text
}
