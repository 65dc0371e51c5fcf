//! Builds a shared-attribute graph from a handful of entities and prints
//! its quads and per-relation degrees.
//!
//! Usage: cargo run --release --example attribute_graph

use ramgnn::ingest::{build_shared_attribute_graph, AttributeTable, RelationSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keys = ["ann", "bob", "cat", "dan", "eve"]
        .map(String::from)
        .to_vec();
    let mut users = AttributeTable::new(keys, vec!["age".into(), "occupation".into()]);
    for (e, age, job) in [
        (0, "23", "writer"),
        (1, "27", "writer"),
        (2, "31", "artist"),
        (3, "38", "artist"),
        (4, "45", "writer"),
    ] {
        users.push(e, "age", age);
        users.push(e, "occupation", job);
    }
    let specs = [
        RelationSpec::bucketed("age", 10),
        RelationSpec::identity("occupation"),
    ];
    let g = build_shared_attribute_graph(&users, &specs)?;

    println!("{} entities, {} quads", g.entity_count(), g.quad_count());
    let mut out = Vec::new();
    g.write_quads(&mut out)?;
    print!("{}", String::from_utf8(out)?);
    for (t, name) in g.rel_type_names().iter().enumerate() {
        let degrees: Vec<usize> = (0..g.entity_count() as u32)
            .map(|e| g.degree(e, t as u32))
            .collect();
        println!("{name}: degrees {degrees:?}");
    }
    Ok(())
}
