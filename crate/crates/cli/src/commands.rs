use std::path::{Path, PathBuf};
use std::time::Instant;

use rocore::clustering::kmeans_canonical;
use rocore::data::{
    generate_synthetic, load_dataset, read_jsonl, Dataset, LoadConfig, RelationInstance,
    SyntheticSpec,
};
use rocore::metrics::MetricsReport;
use rocore::projection::pca_2d;
use rocore::rng::{derive_seed, Stream};
use rocore::trainer::{
    aggregate_reports, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig, TrainError,
    TrainReport, Trainer,
};
use rocore::verify::gradient_suite;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, CliError};
use crate::manifest::{sibling_manifest, write_json, RunManifest};
use crate::{DataArgs, EvalArgs, GenDataArgs, GradCheckArgs, Head, ProjectArgs, TrainArgs};

const LABELED_FILE: &str = "labeled.jsonl";
const UNLABELED_FILE: &str = "unlabeled.jsonl";
const DATASET_FILE: &str = "dataset.json";

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

/// Creates the parent directory of an output file.
fn prepare_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn parent_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new(""))
}

/// Contents of `dataset.json` in a generated dataset directory.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetInfo {
    #[serde(flatten)]
    counts: LoadConfig,
    embedding_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    synthetic: Option<SyntheticOrigin>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SyntheticOrigin {
    spec: SyntheticSpec,
    seed: u64,
}

pub fn gen_data(a: GenDataArgs, args: &[String]) -> Result<(), CliError> {
    let mut spec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(v) = a.num_predefined {
        spec.num_predefined = v;
    }
    if let Some(v) = a.num_novel {
        spec.num_novel = v;
    }
    if let Some(v) = a.instances_per_class {
        spec.instances_per_class = v;
    }
    if let Some(v) = a.embedding_dim {
        spec.embedding_dim = v;
    }
    if let Some(v) = a.separation {
        spec.cluster_separation = v;
    }
    if let Some(v) = a.noise {
        spec.noise_std = v;
    }
    let ds = generate_synthetic(&spec, a.seed)?;
    create_dir(&a.out)?;
    let files = [
        a.out.join(LABELED_FILE),
        a.out.join(UNLABELED_FILE),
        a.out.join(DATASET_FILE),
    ];
    ds.save(&files[0], &files[1])?;
    let info = DatasetInfo {
        counts: ds.load_config(),
        embedding_dim: ds.embedding_dim,
        synthetic: Some(SyntheticOrigin { spec, seed: a.seed }),
    };
    write_json(&files[2], &info)?;

    let mut manifest = RunManifest::new("gen-data", args, &a.out);
    manifest.config = Some(serde_json::to_value(spec).expect("spec serializes"));
    manifest.seeds = vec![a.seed];
    manifest.write(&a.out.join("manifest.json"), &a.out, &files)?;
    println!(
        "wrote {} labeled and {} unlabeled instances to {}",
        ds.labeled.len(),
        ds.unlabeled.len(),
        a.out.display()
    );
    Ok(())
}

fn load_data(a: &DataArgs) -> Result<Dataset, CliError> {
    let (labeled, unlabeled, mut counts) = match (&a.data, &a.labeled, &a.unlabeled) {
        (Some(dir), _, _) => {
            let info: DatasetInfo = read_json(&dir.join(DATASET_FILE))?;
            (
                dir.join(LABELED_FILE),
                dir.join(UNLABELED_FILE),
                info.counts,
            )
        }
        (None, Some(l), Some(u)) => {
            let num_novel = a.num_novel.ok_or_else(|| {
                CliError::Validation("--num-novel is required with --labeled/--unlabeled".into())
            })?;
            (
                l.clone(),
                u.clone(),
                LoadConfig {
                    num_predefined: None,
                    num_novel,
                },
            )
        }
        _ => {
            return Err(CliError::Validation(
                "give --data DIR or both --labeled and --unlabeled".into(),
            ))
        }
    };
    if let Some(n) = a.num_novel {
        counts.num_novel = n;
    }
    if a.num_predefined.is_some() {
        counts.num_predefined = a.num_predefined;
    }
    Ok(load_dataset(&labeled, &unlabeled, &counts)?)
}

/// Parses an inclusive range `a..b`.
fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || {
        CliError::Validation(format!(
            "--seeds expects an inclusive range like 1..10, got {text:?}"
        ))
    };
    let (lo, hi) = text.split_once("..").ok_or_else(bad)?;
    let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
    if hi < lo {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

/// Trains one seed into `dir`; returns the report and the files written.
fn train_one(
    dataset: &Dataset,
    config: TrainConfig,
    dir: &Path,
    timing: bool,
) -> Result<(TrainReport, Vec<PathBuf>), CliError> {
    create_dir(dir)?;
    let start = Instant::now();
    let outcome = Trainer::new(dataset, config.clone())?.run();
    let mut outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            if let TrainError::NonFinite { last_good, .. } = &e {
                let path = dir.join("last_good.ckpt");
                save_checkpoint(&path, &config, last_good)?;
                return Err(CliError::Runtime {
                    message: e.to_string(),
                    last_good_checkpoint: Some(path),
                });
            }
            return Err(e.into());
        }
    };
    let checkpoint = dir.join("model.ckpt");
    save_checkpoint(&checkpoint, &config, &outcome.state)?;
    outcome.report.checkpoint = Some("model.ckpt".into());
    if timing {
        outcome.report.wall_clock_secs = Some(start.elapsed().as_secs_f64());
    }
    let report_path = dir.join("report.json");
    write_json(&report_path, &outcome.report)?;
    Ok((outcome.report, vec![report_path, checkpoint]))
}

pub fn train(a: TrainArgs, args: &[String]) -> Result<(), CliError> {
    let mut config: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    for ab in &a.ablate {
        config.ablation.set(ab.name())?;
    }
    let seeds = match &a.seeds {
        Some(s) => parse_seeds(s)?,
        None => vec![a.seed.unwrap_or(config.seed)],
    };
    config.seed = seeds[0];
    config.validate()?;
    let dataset = load_data(&a.data)?;
    create_dir(&a.out)?;

    let mut files = Vec::new();
    let mut reports = Vec::new();
    for &seed in &seeds {
        let dir = if a.seeds.is_some() {
            a.out.join(format!("seed-{seed}"))
        } else {
            a.out.clone()
        };
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let (report, written) = train_one(&dataset, cfg, &dir, a.timing)?;
        files.extend(written);
        reports.push(report);
    }

    if a.seeds.is_some() {
        let aggregate = aggregate_reports(&reports);
        let path = a.out.join("aggregate.json");
        write_json(&path, &aggregate)?;
        files.push(path);
        for (name, m) in &aggregate.metrics {
            println!("{name:<32} {}", m.display);
        }
    } else {
        for (name, v) in reports[0].scalars() {
            println!("{name:<32} {v:.4}");
        }
    }

    let mut manifest = RunManifest::new("train", args, &a.out);
    manifest.config = Some(serde_json::to_value(&config).expect("config serializes"));
    manifest.seeds = seeds;
    manifest.write(&a.out.join("manifest.json"), &a.out, &files)
}

/// Reads instances and checks them against the checkpoint's dimensions.
fn load_instances(path: &Path, ckpt: &Checkpoint) -> Result<Vec<RelationInstance>, CliError> {
    let instances = read_jsonl(path)?;
    if instances.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no instances",
            path.display()
        )));
    }
    for inst in &instances {
        let dim = inst.validate()?;
        if dim != ckpt.state.embedding_dim {
            return Err(CliError::Validation(format!(
                "instance {} has embedding dimension {dim} but the checkpoint expects {}",
                inst.id, ckpt.state.embedding_dim
            )));
        }
    }
    Ok(instances)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    checkpoint: String,
    data: String,
    head: &'static str,
    instances: usize,
    metrics: MetricsReport,
    /// Fraction of exact label matches, for the labeled head.
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    id: String,
    gold: usize,
    pred: usize,
}

pub fn eval(a: EvalArgs, args: &[String]) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let instances = load_instances(&a.data, &ckpt)?;
    let refs: Vec<&RelationInstance> = instances.iter().collect();
    let gold: Vec<usize> = instances
        .iter()
        .map(|i| {
            i.label
                .ok_or_else(|| CliError::Validation(format!("instance {} has no gold label", i.id)))
        })
        .collect::<Result<_, _>>()?;
    let pred = match a.head {
        Head::Novel => ckpt.state.predict_novel(&refs)?,
        Head::Labeled => ckpt.state.predict_labeled(&refs)?,
    };
    let metrics =
        MetricsReport::compute(&pred, &gold).map_err(|e| CliError::runtime(e.to_string()))?;
    let accuracy = (a.head == Head::Labeled)
        .then(|| pred.iter().zip(&gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64);
    let report = EvalReport {
        checkpoint: a.checkpoint.display().to_string(),
        data: a.data.display().to_string(),
        head: match a.head {
            Head::Novel => "novel",
            Head::Labeled => "labeled",
        },
        instances: instances.len(),
        metrics,
        accuracy,
    };

    prepare_parent(&a.out)?;
    write_json(&a.out, &report)?;
    let mut files = vec![a.out.clone()];
    if let Some(p) = &a.predictions {
        prepare_parent(p)?;
        let mut text = String::new();
        for ((inst, &g), &p) in instances.iter().zip(&gold).zip(&pred) {
            let row = PredictionRow {
                id: inst.id.clone(),
                gold: g,
                pred: p,
            };
            text.push_str(&serde_json::to_string(&row).expect("row serializes"));
            text.push('\n');
        }
        std::fs::write(p, text).map_err(|e| io_error(p, e))?;
        files.push(p.clone());
    }
    let m = &report.metrics;
    println!(
        "B3  P {:.4} R {:.4} F1 {:.4}",
        m.b3.precision, m.b3.recall, m.b3.f1
    );
    println!(
        "V   H {:.4} C {:.4} F1 {:.4}",
        m.v.homogeneity, m.v.completeness, m.v.f1
    );
    println!("ARI {:.4}", m.ari);
    if let Some(acc) = accuracy {
        println!("accuracy {acc:.4}");
    }

    let mut manifest = RunManifest::new("eval", args, parent_dir(&a.out));
    manifest.config = Some(serde_json::to_value(&ckpt.config).expect("config serializes"));
    manifest.seeds = vec![ckpt.config.seed];
    manifest.write(&sibling_manifest(&a.out), Path::new(""), &files)
}

pub fn grad_check(a: GradCheckArgs, args: &[String]) -> Result<(), CliError> {
    if a.configs == 0 {
        return Err(CliError::Validation("--configs must be positive".into()));
    }
    let report = gradient_suite(a.configs, a.seed)?;
    let mut worst: std::collections::BTreeMap<&str, f64> = std::collections::BTreeMap::new();
    for c in &report.cases {
        let e = worst.entry(c.objective.as_str()).or_insert(0.0);
        *e = e.max(c.max_relative_error);
    }
    for (objective, err) in &worst {
        println!("{objective:<24} max relative error {err:.3e}");
    }
    println!(
        "detached target gradient {:e}",
        report.detached_max_abs_grad
    );

    if let Some(out) = &a.out {
        prepare_parent(out)?;
        write_json(out, &report)?;
        let mut manifest = RunManifest::new("grad-check", args, parent_dir(out));
        manifest.seeds = vec![a.seed];
        manifest.write(
            &sibling_manifest(out),
            Path::new(""),
            std::slice::from_ref(out),
        )?;
    }
    if !(report.max_relative_error < a.tolerance)
        || report.detached_max_abs_grad != 0.0
        || !report.detached_matches_frozen
    {
        return Err(CliError::runtime(format!(
            "gradient check failed: max relative error {:e} (tolerance {:e}), detached gradient {:e}, detached matches frozen: {}",
            report.max_relative_error, a.tolerance, report.detached_max_abs_grad, report.detached_matches_frozen
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ProjectionRow<'a> {
    id: &'a str,
    x: f64,
    y: f64,
    gold_label: Option<usize>,
    pseudo_label: usize,
}

pub fn project(a: ProjectArgs, args: &[String]) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let instances = load_instances(&a.data, &ckpt)?;
    let refs: Vec<&RelationInstance> = instances.iter().collect();
    let reps = ckpt.state.embed(&refs)?;
    let coords = pca_2d(reps.view()).map_err(|e| CliError::Validation(e.to_string()))?;
    let k = a.clusters.unwrap_or(ckpt.state.num_novel);
    if k == 0 || k > instances.len() {
        return Err(CliError::Validation(format!(
            "cannot form {k} clusters from {} instances",
            instances.len()
        )));
    }
    let ids: Vec<&str> = instances.iter().map(|i| i.id.as_str()).collect();
    let seed = derive_seed(ckpt.config.seed, Stream::KMeans, 0);
    let pseudo = kmeans_canonical(reps.view(), &ids, k, seed, &ckpt.config.kmeans)
        .map_err(|e| CliError::runtime(e.to_string()))?
        .labels;

    prepare_parent(&a.out)?;
    let csv_err = |e: csv::Error| CliError::Validation(format!("{}: {e}", a.out.display()));
    let mut w = csv::Writer::from_path(&a.out).map_err(csv_err)?;
    for ((inst, xy), &p) in instances.iter().zip(&coords).zip(&pseudo) {
        w.serialize(ProjectionRow {
            id: &inst.id,
            x: xy[0],
            y: xy[1],
            gold_label: inst.label,
            pseudo_label: p,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_error(&a.out, e))?;
    drop(w);
    println!("wrote {} points to {}", instances.len(), a.out.display());

    let mut manifest = RunManifest::new("project", args, parent_dir(&a.out));
    manifest.config = Some(serde_json::to_value(&ckpt.config).expect("config serializes"));
    manifest.seeds = vec![ckpt.config.seed];
    manifest.write(
        &sibling_manifest(&a.out),
        Path::new(""),
        std::slice::from_ref(&a.out),
    )
}
