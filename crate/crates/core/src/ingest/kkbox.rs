use std::collections::HashMap;
use std::path::Path;

use super::{AttributeTable, Dataset, IngestError, RelationSpec};
use crate::graph::InteractionGraph;

const TRAIN_COLUMNS: [&str; 6] = [
    "msno",
    "song_id",
    "source_system_tab",
    "source_screen_name",
    "source_type",
    "target",
];
const SONG_COLUMNS: [&str; 7] = [
    "song_id",
    "song_length",
    "genre_ids",
    "artist_name",
    "composer",
    "lyricist",
    "language",
];
const MEMBER_COLUMNS: [&str; 7] = [
    "msno",
    "city",
    "bd",
    "gender",
    "registered_via",
    "registration_init_time",
    "expiration_date",
];

#[derive(Clone, Debug, Default)]
pub struct KkboxOptions {
    /// Read at most this many rows of `train.csv`.
    pub max_rows: Option<usize>,
}

/// Age (width-10 buckets) and city.
pub fn default_kkbox_user_specs() -> Vec<RelationSpec> {
    vec![
        RelationSpec::bucketed("bd", 10),
        RelationSpec::identity("city"),
    ]
}

/// Genre, artist, composer, lyricist.
pub fn default_kkbox_item_specs() -> Vec<RelationSpec> {
    ["genre_ids", "artist_name", "composer", "lyricist"]
        .iter()
        .map(|a| RelationSpec::identity(a))
        .collect()
}

struct Table {
    reader: csv::Reader<std::fs::File>,
    columns: Vec<usize>,
}

fn open(path: &Path, expected: &[&str]) -> Result<Table, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| IngestError::malformed(path, 1, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| IngestError::malformed(path, 1, e.to_string()))?
        .clone();
    let mut columns = Vec::new();
    for name in expected {
        let idx = header
            .iter()
            .position(|h| h.trim() == *name)
            .ok_or_else(|| IngestError::malformed(path, 1, format!("missing column {name:?}")))?;
        columns.push(idx);
    }
    Ok(Table { reader, columns })
}

fn rows<'a>(
    path: &'a Path,
    table: &'a mut Table,
) -> impl Iterator<Item = Result<(usize, Vec<String>), IngestError>> + 'a {
    let columns = table.columns.clone();
    table.reader.records().enumerate().map(move |(i, rec)| {
        let line = i + 2;
        let rec = rec.map_err(|e| IngestError::malformed(path, line, e.to_string()))?;
        Ok((
            line,
            columns
                .iter()
                .map(|&c| rec.get(c).unwrap_or("").trim().to_owned())
                .collect(),
        ))
    })
}

fn push_multi(table: &mut AttributeTable, e: u32, attr: &str, raw: &str) {
    for v in raw.split('|').map(str::trim).filter(|v| !v.is_empty()) {
        table.push(e, attr, v);
    }
}

/// Reads `train.csv`, `songs.csv` and `members.csv`. Every listening row
/// becomes one implicit-feedback edge; users and songs get dense ids in
/// order of first appearance in `train.csv`.
pub fn load_kkbox(dir: &Path, options: &KkboxOptions) -> Result<Dataset, IngestError> {
    let train_path = dir.join("train.csv");
    let mut train = open(&train_path, &TRAIN_COLUMNS)?;
    let mut user_ids: HashMap<String, u32> = HashMap::new();
    let mut item_ids: HashMap<String, u32> = HashMap::new();
    let mut user_keys = Vec::new();
    let mut item_keys = Vec::new();
    let mut pairs = Vec::new();
    for row in rows(&train_path, &mut train) {
        if options.max_rows.is_some_and(|m| pairs.len() >= m) {
            break;
        }
        let (line, f) = row?;
        if f[0].is_empty() || f[1].is_empty() {
            return Err(IngestError::malformed(
                &train_path,
                line,
                "empty msno or song_id",
            ));
        }
        if !matches!(f[5].as_str(), "0" | "1") {
            return Err(IngestError::malformed(
                &train_path,
                line,
                format!("bad target {:?}", f[5]),
            ));
        }
        let u = *user_ids.entry(f[0].clone()).or_insert_with(|| {
            user_keys.push(f[0].clone());
            (user_keys.len() - 1) as u32
        });
        let s = *item_ids.entry(f[1].clone()).or_insert_with(|| {
            item_keys.push(f[1].clone());
            (item_keys.len() - 1) as u32
        });
        pairs.push((u, s, line));
    }

    let mut interactions = InteractionGraph::new(user_keys.len(), item_keys.len());
    for (u, s, line) in pairs {
        interactions.add(u, s, Some(line as i64))?;
    }

    let mut users = AttributeTable::new(
        user_keys,
        ["city", "bd", "gender", "registered_via"]
            .map(String::from)
            .to_vec(),
    );
    let members_path = dir.join("members.csv");
    let mut members = open(&members_path, &MEMBER_COLUMNS)?;
    for row in rows(&members_path, &mut members) {
        let (line, f) = row?;
        let Some(e) = users.entity_of(&f[0]) else {
            continue;
        };
        users.push(e, "city", &f[1]);
        let bd: i64 = f[2].parse().map_err(|_| {
            IngestError::malformed(&members_path, line, format!("bad bd {:?}", f[2]))
        })?;
        // 0 and implausible ages mark a missing value
        if (1..=100).contains(&bd) {
            users.push(e, "bd", &f[2]);
        }
        if !f[3].is_empty() {
            users.push(e, "gender", &f[3]);
        }
        users.push(e, "registered_via", &f[4]);
    }

    let mut items = AttributeTable::new(
        item_keys,
        [
            "genre_ids",
            "artist_name",
            "composer",
            "lyricist",
            "language",
        ]
        .map(String::from)
        .to_vec(),
    );
    let songs_path = dir.join("songs.csv");
    let mut songs = open(&songs_path, &SONG_COLUMNS)?;
    for row in rows(&songs_path, &mut songs) {
        let (line, f) = row?;
        let Some(e) = items.entity_of(&f[0]) else {
            continue;
        };
        if !f[1].is_empty() && f[1].parse::<f64>().is_err() {
            return Err(IngestError::malformed(
                &songs_path,
                line,
                format!("bad song_length {:?}", f[1]),
            ));
        }
        push_multi(&mut items, e, "genre_ids", &f[2]);
        if !f[3].is_empty() {
            items.push(e, "artist_name", &f[3]);
        }
        push_multi(&mut items, e, "composer", &f[4]);
        push_multi(&mut items, e, "lyricist", &f[5]);
        if !f[6].is_empty() {
            items.push(e, "language", &f[6]);
        }
    }

    Ok(Dataset {
        interactions,
        users,
        items,
    })
}
