use std::path::Path;

use super::{AttributeTable, IngestError, RelationSpec};
use crate::graph::InteractionGraph;

const GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

/// Interactions plus attribute tables for both sides. Entity ids are dense
/// indices in file order; external ids are kept as table keys.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub interactions: InteractionGraph,
    pub users: AttributeTable,
    pub items: AttributeTable,
}

/// Age (width-10 buckets), gender, occupation.
pub fn default_user_specs() -> Vec<RelationSpec> {
    vec![
        RelationSpec::bucketed("age", 10),
        RelationSpec::identity("gender"),
        RelationSpec::identity("occupation"),
    ]
}

/// Genre and release year.
pub fn default_item_specs() -> Vec<RelationSpec> {
    vec![
        RelationSpec::identity("genre"),
        RelationSpec::identity("release_year"),
    ]
}

fn read_latin1(path: &Path) -> Result<String, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
    Ok(bytes.iter().map(|&b| b as char).collect())
}

fn genre_names(dir: &Path) -> Result<Vec<String>, IngestError> {
    let path = dir.join("u.genre");
    if !path.exists() {
        return Ok(GENRES.iter().map(|s| s.to_string()).collect());
    }
    let text = read_latin1(&path)?;
    let mut names = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, idx) = line
            .split_once('|')
            .ok_or_else(|| IngestError::malformed(&path, i + 1, "expected name|index"))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| IngestError::malformed(&path, i + 1, "bad genre index"))?;
        if idx != names.len() {
            return Err(IngestError::malformed(
                &path,
                i + 1,
                format!("genre index {idx} out of order"),
            ));
        }
        names.push(name.to_owned());
    }
    Ok(names)
}

/// Reads `u.data`, `u.item` and `u.user` from an ML-100K directory. Every
/// rating, whatever its value, becomes one implicit-feedback edge.
pub fn load_movielens(dir: &Path) -> Result<Dataset, IngestError> {
    let genres = genre_names(dir)?;

    let user_path = dir.join("u.user");
    let user_text = read_latin1(&user_path)?;
    let mut user_rows = Vec::new();
    for (i, line) in user_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 5 {
            return Err(IngestError::malformed(
                &user_path,
                i + 1,
                format!("expected 5 fields, got {}", f.len()),
            ));
        }
        if f[1].trim().parse::<u32>().is_err() {
            return Err(IngestError::malformed(
                &user_path,
                i + 1,
                format!("bad age {:?}", f[1]),
            ));
        }
        user_rows.push(f.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    }
    let mut users = AttributeTable::new(
        user_rows.iter().map(|r| r[0].clone()).collect(),
        ["age", "gender", "occupation", "zip"]
            .map(String::from)
            .to_vec(),
    );
    if duplicate_keys(&users) {
        return Err(IngestError::malformed(&user_path, 0, "duplicate user id"));
    }
    for (e, r) in user_rows.iter().enumerate() {
        users.push(e as u32, "age", r[1].trim());
        users.push(e as u32, "gender", &r[2]);
        users.push(e as u32, "occupation", &r[3]);
        users.push(e as u32, "zip", &r[4]);
    }

    let item_path = dir.join("u.item");
    let item_text = read_latin1(&item_path)?;
    let mut item_rows: Vec<(String, Option<String>, Vec<usize>)> = Vec::new();
    for (i, line) in item_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 5 + genres.len() {
            return Err(IngestError::malformed(
                &item_path,
                i + 1,
                format!("expected {} fields, got {}", 5 + genres.len(), f.len()),
            ));
        }
        let date = f[2].trim();
        let year = if date.is_empty() {
            None
        } else {
            let y = date.rsplit('-').next().unwrap_or("");
            if y.len() != 4 || y.parse::<u32>().is_err() {
                return Err(IngestError::malformed(
                    &item_path,
                    i + 1,
                    format!("bad release date {date:?}"),
                ));
            }
            Some(y.to_owned())
        };
        let mut flags = Vec::new();
        for (g, flag) in f[5..].iter().enumerate() {
            match flag.trim() {
                "1" => flags.push(g),
                "0" => {}
                other => {
                    return Err(IngestError::malformed(
                        &item_path,
                        i + 1,
                        format!("bad genre flag {other:?}"),
                    ))
                }
            }
        }
        item_rows.push((f[0].to_owned(), year, flags));
    }
    let mut items = AttributeTable::new(
        item_rows.iter().map(|r| r.0.clone()).collect(),
        ["genre", "release_year"].map(String::from).to_vec(),
    );
    if duplicate_keys(&items) {
        return Err(IngestError::malformed(&item_path, 0, "duplicate item id"));
    }
    for (e, (_, year, flags)) in item_rows.iter().enumerate() {
        for &g in flags {
            items.push(e as u32, "genre", &genres[g]);
        }
        if let Some(y) = year {
            items.push(e as u32, "release_year", y);
        }
    }

    let data_path = dir.join("u.data");
    let data_text =
        std::fs::read_to_string(&data_path).map_err(|e| IngestError::io(&data_path, e))?;
    let mut interactions = InteractionGraph::new(users.entity_count(), items.entity_count());
    for (i, line) in data_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| IngestError::malformed(&data_path, i + 1, reason);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", f.len())));
        }
        let user = users
            .entity_of(f[0])
            .ok_or_else(|| bad(format!("user id {:?} not in u.user", f[0])))?;
        let item = items
            .entity_of(f[1])
            .ok_or_else(|| bad(format!("item id {:?} not in u.item", f[1])))?;
        f[2].trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("bad rating {:?}", f[2])))?;
        let ts: i64 = f[3]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad timestamp {:?}", f[3])))?;
        interactions.add(user, item, Some(ts))?;
    }
    Ok(Dataset {
        interactions,
        users,
        items,
    })
}

fn duplicate_keys(t: &AttributeTable) -> bool {
    (0..t.entity_count()).any(|i| t.entity_of(&t.keys()[i]) != Some(i as u32))
}
