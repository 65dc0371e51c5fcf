//! Quadruplet attribute graphs and bipartite interaction graphs.

use std::io::{BufRead, Write};

use rand::seq::index;
use thiserror::Error;

use crate::rng;

pub type EntityId = u32;
pub type RelTypeId = u32;
pub type RelValueId = u32;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("entity {0} outside vocabulary of {1}")]
    UnknownEntity(u32, usize),
    #[error("relation type {0} outside vocabulary of {1}")]
    UnknownRelType(u32, usize),
    #[error("relation value {0} outside vocabulary of {1}")]
    UnknownRelValue(u32, usize),
    #[error("self relation on entity {0}")]
    SelfRelation(u32),
    #[error("only {available} negative candidates for node {node}, {requested} requested")]
    NotEnoughCandidates {
        node: u32,
        requested: usize,
        available: usize,
    },
    #[error("user {0} outside range {1}")]
    UnknownUser(u32, usize),
    #[error("item {0} outside range {1}")]
    UnknownItem(u32, usize),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One directed edge `(head, rel_type, rel_value, tail)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quad {
    pub head: EntityId,
    pub rel_type: RelTypeId,
    pub rel_value: RelValueId,
    pub tail: EntityId,
}

impl Quad {
    pub fn new(head: EntityId, rel_type: RelTypeId, rel_value: RelValueId, tail: EntityId) -> Self {
        Self {
            head,
            rel_type,
            rel_value,
            tail,
        }
    }

    pub fn mirrored(self) -> Self {
        Self {
            head: self.tail,
            tail: self.head,
            ..self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Insert {
    Added,
    Duplicate,
}

/// Multi-relational graph of shared-attribute edges.
///
/// Edges are stored symmetrically: inserting `(i, t, v, j)` also stores
/// `(j, t, v, i)`. Per `(rel_type, entity)` the adjacency list is sorted by
/// neighbor id, then relation value id.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiRelGraph {
    entity_count: usize,
    entity_names: Vec<String>,
    rel_types: Vec<String>,
    rel_values: Vec<String>,
    adjacency: Vec<Vec<Vec<(EntityId, RelValueId)>>>,
    directed_quads: usize,
}

impl MultiRelGraph {
    pub fn new(entity_count: usize, rel_types: Vec<String>, rel_values: Vec<String>) -> Self {
        let adjacency = vec![vec![Vec::new(); entity_count]; rel_types.len()];
        Self {
            entity_count,
            entity_names: Vec::new(),
            rel_types,
            rel_values,
            adjacency,
            directed_quads: 0,
        }
    }

    /// Vocabulary of anonymous types/values, named by their ids.
    pub fn with_counts(entity_count: usize, types: usize, values: usize) -> Self {
        Self::new(
            entity_count,
            (0..types).map(|t| format!("t{t}")).collect(),
            (0..values).map(|v| format!("v{v}")).collect(),
        )
    }

    pub fn set_entity_names(&mut self, names: Vec<String>) {
        assert_eq!(names.len(), self.entity_count);
        self.entity_names = names;
    }

    pub fn entity_name(&self, e: EntityId) -> Option<&str> {
        self.entity_names.get(e as usize).map(String::as_str)
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn rel_type_count(&self) -> usize {
        self.rel_types.len()
    }

    pub fn rel_value_count(&self) -> usize {
        self.rel_values.len()
    }

    pub fn rel_type_names(&self) -> &[String] {
        &self.rel_types
    }

    pub fn rel_value_names(&self) -> &[String] {
        &self.rel_values
    }

    /// Number of stored directed quads (twice the number of undirected edges).
    pub fn quad_count(&self) -> usize {
        self.directed_quads
    }

    fn check_entity(&self, e: EntityId) -> Result<(), GraphError> {
        if (e as usize) < self.entity_count {
            Ok(())
        } else {
            Err(GraphError::UnknownEntity(e, self.entity_count))
        }
    }

    fn check_type(&self, t: RelTypeId) -> Result<(), GraphError> {
        if (t as usize) < self.rel_types.len() {
            Ok(())
        } else {
            Err(GraphError::UnknownRelType(t, self.rel_types.len()))
        }
    }

    fn insert_directed(&mut self, q: Quad) -> Insert {
        let list = &mut self.adjacency[q.rel_type as usize][q.head as usize];
        let key = (q.tail, q.rel_value);
        if list.last().is_none_or(|&last| last < key) {
            list.push(key);
        } else {
            match list.binary_search(&key) {
                Ok(_) => return Insert::Duplicate,
                Err(pos) => list.insert(pos, key),
            }
        }
        self.directed_quads += 1;
        Insert::Added
    }

    /// Stores `q` and its mirror. Re-inserting an existing quad is a no-op.
    pub fn add_quad(&mut self, q: Quad) -> Result<Insert, GraphError> {
        self.check_entity(q.head)?;
        self.check_entity(q.tail)?;
        self.check_type(q.rel_type)?;
        if q.rel_value as usize >= self.rel_values.len() {
            return Err(GraphError::UnknownRelValue(
                q.rel_value,
                self.rel_values.len(),
            ));
        }
        if q.head == q.tail {
            return Err(GraphError::SelfRelation(q.head));
        }
        if self.insert_directed(q) == Insert::Duplicate {
            return Ok(Insert::Duplicate);
        }
        self.insert_directed(q.mirrored());
        Ok(Insert::Added)
    }

    pub fn contains(&self, q: Quad) -> bool {
        self.adjacency
            .get(q.rel_type as usize)
            .and_then(|per| per.get(q.head as usize))
            .is_some_and(|list| list.binary_search(&(q.tail, q.rel_value)).is_ok())
    }

    /// Neighbors of `node` under `t`, ascending by neighbor then value.
    pub fn neighbors_by_relation(
        &self,
        node: EntityId,
        t: RelTypeId,
    ) -> Result<&[(EntityId, RelValueId)], GraphError> {
        self.check_type(t)?;
        self.check_entity(node)?;
        Ok(&self.adjacency[t as usize][node as usize])
    }

    /// Number of distinct neighbors of `node` under `t`.
    pub fn degree(&self, node: EntityId, t: RelTypeId) -> usize {
        distinct_count(&self.adjacency[t as usize][node as usize])
    }

    /// Largest distinct-neighbor count of any node under `t`.
    pub fn max_degree(&self, t: RelTypeId) -> usize {
        self.adjacency[t as usize]
            .iter()
            .map(|l| distinct_count(l))
            .max()
            .unwrap_or(0)
    }

    /// Every directed quad, ordered by head, type, tail, value.
    pub fn quads(&self) -> impl Iterator<Item = Quad> + '_ {
        (0..self.entity_count).flat_map(move |h| {
            self.adjacency.iter().enumerate().flat_map(move |(t, per)| {
                per[h]
                    .iter()
                    .map(move |&(tail, v)| Quad::new(h as EntityId, t as RelTypeId, v, tail))
            })
        })
    }

    /// Marks `node` and everything adjacent to it under any relation.
    pub fn neighbor_mask(&self, node: EntityId) -> Vec<bool> {
        let mut mask = vec![false; self.entity_count];
        mask[node as usize] = true;
        for per in &self.adjacency {
            for &(j, _) in &per[node as usize] {
                mask[j as usize] = true;
            }
        }
        mask
    }

    /// Any neighbor under any relation, used as a positive pair source.
    pub fn has_any_neighbor(&self, node: EntityId) -> bool {
        self.adjacency
            .iter()
            .any(|per| !per[node as usize].is_empty())
    }

    /// `m` distinct entities not adjacent to `node` under any relation (and
    /// not `node` itself), drawn reproducibly from `seed`.
    pub fn sample_negative_nodes(
        &self,
        node: EntityId,
        m: usize,
        seed: u64,
    ) -> Result<Vec<EntityId>, GraphError> {
        self.check_entity(node)?;
        let mask = self.neighbor_mask(node);
        let candidates: Vec<EntityId> = (0..self.entity_count as EntityId)
            .filter(|&e| !mask[e as usize])
            .collect();
        if candidates.len() < m {
            return Err(GraphError::NotEnoughCandidates {
                node,
                requested: m,
                available: candidates.len(),
            });
        }
        let mut r = rng::stream(seed, rng::mix(&[0x4E45_47, node as u64]));
        Ok(index::sample(&mut r, candidates.len(), m)
            .into_iter()
            .map(|i| candidates[i])
            .collect())
    }

    /// Line format: a `#quads v1 entities=<n> types=<k> values=<m>` header,
    /// then `head<TAB>rel_type<TAB>rel_value<TAB>tail` per directed quad.
    pub fn write_quads<W: Write>(&self, mut w: W) -> Result<(), GraphError> {
        writeln!(
            w,
            "#quads v1 entities={} types={} values={}",
            self.entity_count,
            self.rel_types.len(),
            self.rel_values.len()
        )?;
        for q in self.quads() {
            writeln!(w, "{}\t{}\t{}\t{}", q.head, q.rel_type, q.rel_value, q.tail)?;
        }
        Ok(())
    }

    pub fn read_quads<R: BufRead>(r: R) -> Result<Self, GraphError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(GraphError::Parse {
            line: 1,
            reason: "missing header".into(),
        })??;
        let (n, k, m) = parse_header(&header)?;
        let mut g = MultiRelGraph::with_counts(n, k, m);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(GraphError::Parse {
                    line: lineno,
                    reason: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let mut ids = [0u32; 4];
            for (slot, f) in ids.iter_mut().zip(&fields) {
                *slot = f.parse().map_err(|_| GraphError::Parse {
                    line: lineno,
                    reason: format!("bad id {f:?}"),
                })?;
            }
            g.add_quad(Quad::new(ids[0], ids[1], ids[2], ids[3]))
                .map_err(|e| GraphError::Parse {
                    line: lineno,
                    reason: e.to_string(),
                })?;
        }
        Ok(g)
    }
}

fn distinct_count(list: &[(EntityId, RelValueId)]) -> usize {
    let mut count = 0;
    let mut prev = None;
    for &(j, _) in list {
        if prev != Some(j) {
            count += 1;
            prev = Some(j);
        }
    }
    count
}

fn parse_header(header: &str) -> Result<(usize, usize, usize), GraphError> {
    let bad = || GraphError::Parse {
        line: 1,
        reason: format!("bad header {header:?}"),
    };
    let rest = header.strip_prefix("#quads v1 ").ok_or_else(bad)?;
    let mut vals = [None; 3];
    for part in rest.split_whitespace() {
        let (key, val) = part.split_once('=').ok_or_else(bad)?;
        let slot = match key {
            "entities" => 0,
            "types" => 1,
            "values" => 2,
            _ => return Err(bad()),
        };
        vals[slot] = Some(val.parse::<usize>().map_err(|_| bad())?);
    }
    match vals {
        [Some(n), Some(k), Some(m)] => Ok((n, k, m)),
        _ => Err(bad()),
    }
}

/// One implicit-feedback event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub timestamp: Option<i64>,
}

/// Bipartite user-item graph. Events keep their insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    users: usize,
    items: usize,
    events: Vec<Interaction>,
    by_user: Vec<Vec<u32>>,
    by_item: Vec<Vec<u32>>,
}

impl InteractionGraph {
    pub fn new(users: usize, items: usize) -> Self {
        Self {
            users,
            items,
            events: Vec::new(),
            by_user: vec![Vec::new(); users],
            by_item: vec![Vec::new(); items],
        }
    }

    pub fn user_count(&self) -> usize {
        self.users
    }

    pub fn item_count(&self) -> usize {
        self.items
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Adds an edge; a repeated `(user, item)` pair is ignored and reported.
    pub fn add(
        &mut self,
        user: u32,
        item: u32,
        timestamp: Option<i64>,
    ) -> Result<Insert, GraphError> {
        if user as usize >= self.users {
            return Err(GraphError::UnknownUser(user, self.users));
        }
        if item as usize >= self.items {
            return Err(GraphError::UnknownItem(item, self.items));
        }
        let list = &mut self.by_user[user as usize];
        match list.binary_search(&item) {
            Ok(_) => return Ok(Insert::Duplicate),
            Err(pos) => list.insert(pos, item),
        }
        let ulist = &mut self.by_item[item as usize];
        let pos = ulist.binary_search(&user).unwrap_err();
        ulist.insert(pos, user);
        self.events.push(Interaction {
            user,
            item,
            timestamp,
        });
        Ok(Insert::Added)
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.by_user
            .get(user as usize)
            .is_some_and(|l| l.binary_search(&item).is_ok())
    }

    pub fn events(&self) -> &[Interaction] {
        &self.events
    }

    /// Items of `user`, ascending.
    pub fn items_of(&self, user: u32) -> &[u32] {
        &self.by_user[user as usize]
    }

    /// Users of `item`, ascending.
    pub fn users_of(&self, item: u32) -> &[u32] {
        &self.by_item[item as usize]
    }

    /// Interaction count per item.
    pub fn item_popularity(&self) -> Vec<usize> {
        self.by_item.iter().map(Vec::len).collect()
    }
}
