use std::io::Write;
use std::path::Path;
use std::time::Instant;

use super::report::{create, finish};
use super::{
    write_report, DatasetKind, DatasetSummary, FinetuneReport, PipelineConfig, PipelineError,
    PretrainReport, RunReport, SideReport, StageTiming,
};
use crate::finetune::{train_finetune, write_recommendations, RecModel, SideInit};
use crate::graph::MultiRelGraph;
use crate::ingest::{
    build_shared_attribute_graph, default_item_specs, default_kkbox_item_specs,
    default_kkbox_user_specs, default_user_specs, entity_relation_values, load_kkbox,
    load_movielens, split_interactions, Dataset, KkboxOptions, Split, TestCase,
};
use crate::metrics::{evaluate_model, Popularity};
use crate::pretrain::{
    pretrain_run, write_embeddings, EmbeddingKind, EmbeddingTable, PretrainError, PretrainOutcome,
};

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Pretrain,
    Finetune,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ingest => "ingest",
            Self::Pretrain => "pretrain",
            Self::Finetune => "finetune",
            Self::Evaluate => "evaluate",
        }
    }
}

/// Everything a run produced, up to the last executed stage.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub dataset: Dataset,
    pub user_graph: MultiRelGraph,
    pub item_graph: MultiRelGraph,
    pub split: Split,
    pub user_values: Vec<Vec<u32>>,
    pub item_values: Vec<Vec<u32>>,
    /// `(user, item)` tables when pre-training ran.
    pub embeddings: Option<(EmbeddingTable, EmbeddingTable)>,
    pub model: Option<RecModel>,
}

/// Loads the configured dataset and merges auxiliary attribute files.
pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset, PipelineError> {
    let d = &cfg.dataset;
    let mut ds = match d.kind {
        DatasetKind::Movielens => load_movielens(&d.path)?,
        DatasetKind::Kkbox => load_kkbox(
            &d.path,
            &KkboxOptions {
                max_rows: d.max_rows,
            },
        )?,
    };
    if let Some(p) = &d.user_auxiliary {
        ds.users.merge_auxiliary(p)?;
    }
    if let Some(p) = &d.item_auxiliary {
        ds.items.merge_auxiliary(p)?;
    }
    Ok(ds)
}

fn side_report(graph: &MultiRelGraph, out: &PretrainOutcome) -> SideReport {
    SideReport {
        relations: graph.rel_type_names().to_vec(),
        losses: out.losses.clone(),
        trajectory: out.trajectory().to_vec(),
        thresholds: out.bandit.thresholds(),
        capped: out.bandit.arms().iter().map(|a| a.hit_cap()).collect(),
        sim_epochs: out.sim_epochs,
    }
}

/// Runs every stage up to and including `until`.
pub fn run_stages(cfg: &PipelineConfig, until: Stage) -> Result<RunArtifacts, PipelineError> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let mut timed = |stage: &str, t: Instant| {
        timings.push(StageTiming {
            stage: stage.into(),
            seconds: t.elapsed().as_secs_f64(),
        })
    };

    let t = Instant::now();
    let dataset = load_dataset(cfg)?;
    let (user_specs, item_specs) = match cfg.dataset.kind {
        DatasetKind::Movielens => (default_user_specs(), default_item_specs()),
        DatasetKind::Kkbox => (default_kkbox_user_specs(), default_kkbox_item_specs()),
    };
    let user_specs = cfg.dataset.user_relations.clone().unwrap_or(user_specs);
    let item_specs = cfg.dataset.item_relations.clone().unwrap_or(item_specs);
    let user_graph = build_shared_attribute_graph(&dataset.users, &user_specs)?;
    let item_graph = build_shared_attribute_graph(&dataset.items, &item_specs)?;
    let user_values = entity_relation_values(&dataset.users, &user_specs, &user_graph)?;
    let item_values = entity_relation_values(&dataset.items, &item_specs, &item_graph)?;
    let split = split_interactions(&dataset.interactions, &cfg.split_spec())?;
    timed("ingest", t);

    let summary = DatasetSummary {
        users: dataset.interactions.user_count(),
        items: dataset.interactions.item_count(),
        interactions: dataset.interactions.len(),
        user_quads: user_graph.quad_count(),
        item_quads: item_graph.quad_count(),
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
    };

    let mut pretrain = None;
    let mut embeddings = None;
    if until >= Stage::Pretrain && cfg.run.mode.pretrains() {
        let t = Instant::now();
        let (u, i) = rayon::join(
            || pretrain_run(&user_graph, &cfg.pretrain_config(false)),
            || pretrain_run(&item_graph, &cfg.pretrain_config(true)),
        );
        let wrap = |side: &'static str| {
            move |source: PretrainError| PipelineError::Pretrain { side, source }
        };
        let (u, i) = (u.map_err(wrap("user"))?, i.map_err(wrap("item"))?);
        pretrain = Some(PretrainReport {
            user: side_report(&user_graph, &u),
            item: side_report(&item_graph, &i),
        });
        embeddings = Some((u.embeddings, i.embeddings));
        timed("pretrain", t);
    }

    let mut finetune = None;
    let mut model = None;
    let random_init = embeddings.is_none();
    if until >= Stage::Finetune {
        let t = Instant::now();
        let ft = cfg.finetune_config();
        let (users, items) = match &embeddings {
            Some((u, i)) => {
                let users = SideInit::from_pretrained(u, user_values.clone());
                let items = SideInit::from_pretrained(i, item_values.clone());
                if ft.rescale_pretrained {
                    (users.rescaled(), items.rescaled())
                } else {
                    (users, items)
                }
            }
            None => {
                let d = cfg.pretrain.dim;
                let users = SideInit::random(
                    summary.users,
                    user_graph.rel_value_count(),
                    d,
                    user_values.clone(),
                    ft.seed,
                    0,
                );
                let items = SideInit::random(
                    summary.items,
                    item_graph.rel_value_count(),
                    d,
                    item_values.clone(),
                    ft.seed,
                    1,
                );
                (users, items)
            }
        };
        let out = train_finetune(&split, &users, &items, &ft, cfg.eval.protocol)?;
        finetune = Some(FinetuneReport {
            epochs: out.epochs,
            best_epoch: out.best_epoch,
        });
        model = Some(out.model);
        timed("finetune", t);
    }

    let mut metrics = Vec::new();
    let mut popularity = Vec::new();
    if until >= Stage::Evaluate {
        let t = Instant::now();
        let m = model.as_ref().expect("finetune ran");
        metrics = evaluate_model(m, &split, &cfg.eval.ks, cfg.eval.protocol)?;
        popularity = evaluate_model(
            &Popularity::fit(&split.train),
            &split,
            &cfg.eval.ks,
            cfg.eval.protocol,
        )?;
        timed("evaluate", t);
    }

    let report = RunReport {
        config: cfg.clone(),
        seed: cfg.run.seed,
        mode: cfg.run.mode,
        dataset: summary,
        pretrain,
        random_init: until >= Stage::Finetune && random_init,
        finetune,
        metrics,
        popularity,
        timings,
    };
    Ok(RunArtifacts {
        report,
        dataset,
        user_graph,
        item_graph,
        split,
        user_values,
        item_values,
        embeddings,
        model,
    })
}

/// Loads the config at `path` and runs every stage.
pub fn run_pipeline(path: &Path) -> Result<RunReport, PipelineError> {
    let cfg = PipelineConfig::load(path)?;
    Ok(run_stages(&cfg, Stage::Evaluate)?.report)
}

fn write_cases<W: Write>(
    mut w: W,
    cases: &[TestCase],
    users: &[String],
    items: &[String],
) -> std::io::Result<()> {
    for c in cases {
        let negs: Vec<&str> = c
            .negatives
            .iter()
            .map(|&i| items[i as usize].as_str())
            .collect();
        writeln!(
            w,
            "{}\t{}\t{}",
            users[c.user as usize],
            items[c.target as usize],
            negs.join(" ")
        )?;
    }
    Ok(())
}

/// Writes the artifacts of every executed stage into `dir`:
/// attribute-graph quads and the split, embedding tables, top-K lists and
/// the report files.
pub fn write_artifacts(art: &RunArtifacts, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::output(dir, e))?;
    let users = art.dataset.users.keys();
    let items = art.dataset.items.keys();
    let write = |name: &str, f: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| {
        let path = dir.join(name);
        let mut w = create(&path)?;
        f(&mut w).map_err(|e| PipelineError::output(&path, e))?;
        finish(&path, w)
    };
    for (name, g) in [
        ("user_quads.tsv", &art.user_graph),
        ("item_quads.tsv", &art.item_graph),
    ] {
        write(name, &|w| g.write_quads(w).map_err(std::io::Error::other))?;
    }
    write("train.tsv", &|w| {
        for e in art.split.train.events() {
            writeln!(w, "{}\t{}", users[e.user as usize], items[e.item as usize])?;
        }
        Ok(())
    })?;
    write("validation.tsv", &|w| {
        write_cases(w, &art.split.validation, users, items)
    })?;
    write("test.tsv", &|w| {
        write_cases(w, &art.split.test, users, items)
    })?;

    if let Some((u, i)) = &art.embeddings {
        for (side, table) in [("user", u), ("item", i)] {
            for kind in [
                EmbeddingKind::Entity,
                EmbeddingKind::RelType,
                EmbeddingKind::RelValue,
            ] {
                write(&format!("{side}_{kind}.emb"), &|w| {
                    write_embeddings(w, kind, table.get(kind))
                })?;
            }
        }
    }
    if let Some(m) = &art.model {
        let k = art
            .report
            .config
            .eval
            .ks
            .iter()
            .copied()
            .max()
            .unwrap_or(20);
        write("recommendations.tsv", &|w| {
            write_recommendations(w, m, &art.split.train, k, users, items)
        })?;
    }
    write_report(&art.report, dir)
}
