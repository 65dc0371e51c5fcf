use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::graph::{MultiRelGraph, Quad, RelValueId};

/// Per-entity `(attribute, value)` pairs. Attributes may repeat on an entity
/// (multi-valued fields such as genres).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttributeTable {
    keys: Vec<String>,
    key_index: HashMap<String, u32>,
    attributes: Vec<String>,
    values: Vec<Vec<(u16, String)>>,
}

impl AttributeTable {
    /// One entity per external key, dense ids in key order.
    pub fn new(keys: Vec<String>, attributes: Vec<String>) -> Self {
        let key_index = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i as u32))
            .collect();
        let values = vec![Vec::new(); keys.len()];
        Self {
            keys,
            key_index,
            attributes,
            values,
        }
    }

    pub fn entity_count(&self) -> usize {
        self.keys.len()
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn entity_of(&self, key: &str) -> Option<u32> {
        self.key_index.get(key).copied()
    }

    fn attribute_index(&mut self, name: &str) -> u16 {
        match self.attributes.iter().position(|a| a == name) {
            Some(i) => i as u16,
            None => {
                self.attributes.push(name.to_owned());
                (self.attributes.len() - 1) as u16
            }
        }
    }

    /// Records a value; exact repeats are dropped. Unknown attribute names
    /// extend the schema.
    pub fn push(&mut self, entity: u32, attribute: &str, value: &str) {
        let a = self.attribute_index(attribute);
        let list = &mut self.values[entity as usize];
        if !list.iter().any(|(x, v)| *x == a && v == value) {
            list.push((a, value.to_owned()));
        }
    }

    pub fn get(&self, entity: u32) -> impl Iterator<Item = (&str, &str)> {
        self.values[entity as usize]
            .iter()
            .map(|(a, v)| (self.attributes[*a as usize].as_str(), v.as_str()))
    }

    /// Values of one attribute on one entity.
    pub fn values_of<'a>(
        &'a self,
        entity: u32,
        attribute: &'a str,
    ) -> impl Iterator<Item = &'a str> + 'a {
        self.get(entity)
            .filter(move |(a, _)| *a == attribute)
            .map(|(_, v)| v)
    }

    /// Merges an auxiliary `entity_key<TAB>attr_name<TAB>attr_value` file.
    pub fn merge_auxiliary(&mut self, path: &Path) -> Result<(), IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(IngestError::malformed(
                    path,
                    i + 1,
                    format!("expected 3 fields, got {}", fields.len()),
                ));
            }
            let entity = self.entity_of(fields[0]).ok_or_else(|| {
                IngestError::malformed(path, i + 1, format!("unknown entity {:?}", fields[0]))
            })?;
            self.push(entity, fields[1], fields[2]);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Bucketing {
    Identity,
    /// Integer buckets `[k·width, (k+1)·width)`.
    NumericBucket {
        width: u32,
    },
}

/// How one attribute becomes one relation type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSpec {
    pub attribute: String,
    #[serde(default = "identity")]
    pub bucketing: Bucketing,
    #[serde(default = "yes")]
    pub include: bool,
}

fn identity() -> Bucketing {
    Bucketing::Identity
}

fn yes() -> bool {
    true
}

impl RelationSpec {
    pub fn identity(attribute: &str) -> Self {
        Self {
            attribute: attribute.to_owned(),
            bucketing: Bucketing::Identity,
            include: true,
        }
    }

    pub fn bucketed(attribute: &str, width: u32) -> Self {
        Self {
            attribute: attribute.to_owned(),
            bucketing: Bucketing::NumericBucket { width },
            include: true,
        }
    }

    fn bucket(&self, value: &str) -> Result<String, IngestError> {
        match self.bucketing {
            Bucketing::Identity => Ok(value.to_owned()),
            Bucketing::NumericBucket { width } => {
                let v: f64 = value.trim().parse().map_err(|_| IngestError::Bucket {
                    attribute: self.attribute.clone(),
                    value: value.to_owned(),
                })?;
                let w = width.max(1) as i64;
                let lo = (v.floor() as i64).div_euclid(w) * w;
                Ok(format!("{}-{}", lo, lo + w - 1))
            }
        }
    }
}

/// Relation-value vocabulary name, unique across relation types.
pub fn value_label(attribute: &str, bucket: &str) -> String {
    format!("{attribute}={bucket}")
}

/// Connects every pair of entities sharing a (bucketed) attribute value with
/// one symmetric quad pair per shared value. Relation types follow the
/// included specs in order; every distinct bucketed value gets a value id,
/// shared or not.
pub fn build_shared_attribute_graph(
    table: &AttributeTable,
    specs: &[RelationSpec],
) -> Result<MultiRelGraph, IngestError> {
    let included: Vec<&RelationSpec> = specs.iter().filter(|s| s.include).collect();
    for s in &included {
        if !table.attributes().iter().any(|a| a == &s.attribute) {
            return Err(IngestError::UnknownAttribute(s.attribute.clone()));
        }
    }

    let mut type_names = Vec::new();
    let mut value_names = Vec::new();
    let mut pairs: Vec<Quad> = Vec::new();
    for (t, spec) in included.iter().enumerate() {
        type_names.push(spec.attribute.clone());
        let mut groups: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for e in 0..table.entity_count() as u32 {
            for raw in table.values_of(e, &spec.attribute) {
                let b = spec.bucket(raw)?;
                let members = groups.entry(b).or_default();
                if members.last() != Some(&e) {
                    members.push(e);
                }
            }
        }
        for (bucket, members) in groups {
            let v = value_names.len() as RelValueId;
            value_names.push(value_label(&spec.attribute, &bucket));
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    pairs.push(Quad::new(i, t as u32, v, j));
                }
            }
        }
    }
    pairs.sort_unstable_by_key(|q| (q.rel_type, q.head, q.tail, q.rel_value));

    let mut g = MultiRelGraph::new(table.entity_count(), type_names, value_names);
    g.set_entity_names(table.keys().to_vec());
    for q in pairs {
        g.add_quad(q)?;
    }
    Ok(g)
}

/// Relation-value ids carried by each entity under the included specs, in
/// the vocabulary of a graph built by [`build_shared_attribute_graph`].
pub fn entity_relation_values(
    table: &AttributeTable,
    specs: &[RelationSpec],
    graph: &MultiRelGraph,
) -> Result<Vec<Vec<RelValueId>>, IngestError> {
    let index: HashMap<&str, RelValueId> = graph
        .rel_value_names()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i as RelValueId))
        .collect();
    let mut out = vec![Vec::new(); table.entity_count()];
    for spec in specs.iter().filter(|s| s.include) {
        for (e, slot) in out.iter_mut().enumerate() {
            for raw in table.values_of(e as u32, &spec.attribute) {
                let label = value_label(&spec.attribute, &spec.bucket(raw)?);
                let id = *index
                    .get(label.as_str())
                    .ok_or(IngestError::UnknownAttribute(label.clone()))?;
                if !slot.contains(&id) {
                    slot.push(id);
                }
            }
        }
    }
    for slot in &mut out {
        slot.sort_unstable();
    }
    Ok(out)
}
