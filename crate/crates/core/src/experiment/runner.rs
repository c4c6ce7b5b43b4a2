//! File-based commands. Each one validates its config, writes its artifacts
//! atomically under the output directory and refreshes `manifest.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datasets::{
    generate_synthetic, load_relevance_corpus, load_users, split, write_relevance_corpus, write_users, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::io::{sha256_hex, write_atomic};
use crate::metrics::{compute_metrics, metrics_table, relative_change, ConfusionMatrix, MetricReport};
use crate::model::LanguageModel;
use crate::retrieval::EmbeddingProvider;
use crate::steering::SteeringFile;
use crate::tasks::{AnswerSheet, BdiItem, ItemSteering, Retriever, SteeringSet, NUM_ITEMS};

use super::{
    calibrate_items, evaluate_questionnaires, evaluate_relevance, ExperimentConfig, ItemCalibration, LogitRow,
    RelevanceEval, Strength,
};

pub const MANIFEST: &str = "manifest.json";

/// Reproducibility record: what was run and the digest of every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Relative path (forward slashes) to sha256, for every file in the tree.
    pub artifacts: BTreeMap<String, String>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries = std::fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        let name = entry.file_name();
        let name = name.to_string_lossy();
        // staging files of in-flight writes start with a dot
        if name.starts_with('.') {
            continue;
        }
        if entry.file_type()?.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("inside root");
            let key = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            if key != MANIFEST {
                out.insert(key, sha256_hex(&std::fs::read(&path)?));
            }
        }
    }
    Ok(())
}

/// Rehashes the whole output tree and rewrites the manifest.
pub fn write_manifest(out: &Path, command: &str, seed: u64, config_bytes: &[u8]) -> Result<Manifest> {
    let mut artifacts = BTreeMap::new();
    collect_files(out, out, &mut artifacts)?;
    let manifest = Manifest {
        command: command.to_string(),
        seed,
        config_sha256: sha256_hex(config_bytes),
        artifacts,
    };
    write_atomic(
        &out.join(MANIFEST),
        (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes(),
    )?;
    Ok(manifest)
}

/// Writes `config.json` with the output directory recorded as `.`, so that
/// identical runs into different directories produce identical trees.
fn write_config(config: &ExperimentConfig) -> Result<Vec<u8>> {
    let mut c = config.clone();
    c.output_dir = PathBuf::from(".");
    let bytes = (serde_json::to_string_pretty(&c)? + "\n").into_bytes();
    write_atomic(&config.output_dir.join("config.json"), &bytes)?;
    Ok(bytes)
}

fn prepare(config: &ExperimentConfig) -> Result<ExperimentConfig> {
    let c = config.clone().normalized();
    c.validate()?;
    Ok(c)
}

/// Artifact paths written by [`run_gen_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPaths {
    pub model: PathBuf,
    pub relevance: PathBuf,
    pub users: PathBuf,
}

impl SyntheticPaths {
    pub fn under(dir: &Path) -> Self {
        SyntheticPaths {
            model: dir.join("model.json"),
            relevance: dir.join("relevance.ndjson"),
            users: dir.join("users.ndjson"),
        }
    }
}

/// Generates a toy model with a matching corpus and cohort.
pub fn run_gen_synthetic(config: &SyntheticConfig, out: &Path) -> Result<SyntheticPaths> {
    config.validate()?;
    let world = generate_synthetic(config)?;
    let paths = SyntheticPaths::under(out);
    write_atomic(&paths.model, world.model.to_json()?.as_bytes())?;
    write_relevance_corpus(&paths.relevance, &world.records)?;
    write_users(&paths.users, &world.users)?;
    let cfg = (serde_json::to_string_pretty(config)? + "\n").into_bytes();
    write_atomic(&out.join("synthetic.json"), &cfg)?;
    write_manifest(out, "gen-synthetic", config.seed, &cfg)?;
    log::info!(
        "wrote {} relevance records and {} users to {}",
        world.records.len(),
        world.users.len(),
        out.display()
    );
    Ok(paths)
}

/// Header plus one line per calibrated item.
pub fn calibration_summary_csv(cals: &[ItemCalibration]) -> String {
    let mut s = String::from(
        "item_id,lambda_star,achieved_accuracy,target_unreached,hyperplane_train_accuracy,\
hyperplane_degenerate,norm,n_positive,n_negative\n",
    );
    for c in cals {
        let p = &c.file.provenance;
        let _ = writeln!(
            s,
            "{},{},{:.6},{},{:.6},{},{:.9},{},{}",
            c.file.item_id,
            c.result.lambda_star,
            c.result.achieved_accuracy,
            c.result.target_unreached,
            p.hyperplane_train_accuracy,
            p.hyperplane_degenerate,
            p.norm,
            p.n_positive,
            p.n_negative
        );
    }
    s
}

fn lambda_distribution_csv(cals: &[ItemCalibration]) -> String {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut order: Vec<(f64, String)> = Vec::new();
    for c in cals {
        let key = format!("{}", c.result.lambda_star);
        if !counts.contains_key(&key) {
            order.push((c.result.lambda_star, key.clone()));
        }
        *counts.entry(key).or_default() += 1;
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut s = String::from("lambda_star,n_items\n");
    for (_, key) in order {
        let _ = writeln!(s, "{key},{}", counts[&key]);
    }
    s
}

fn accuracy_curves_csv(cals: &[ItemCalibration]) -> String {
    let mut s = String::from("item_id,lambda,accuracy\n");
    for c in cals {
        for (lam, acc) in &c.result.grid {
            let _ = writeln!(s, "{},{lam},{acc:.6}", c.file.item_id);
        }
    }
    s
}

/// Splits the corpus, calibrates all 21 items and persists one vector file
/// per item along with the calibration tables.
pub fn run_calibration(config: &ExperimentConfig) -> Result<Vec<ItemCalibration>> {
    let c = prepare(config)?;
    let model = c.load_model()?;
    calibrate_with(&c, model.as_ref())
}

pub fn calibrate_with(config: &ExperimentConfig, model: &dyn LanguageModel) -> Result<Vec<ItemCalibration>> {
    let c = prepare(config)?;
    let records = load_relevance_corpus(c.relevance_path()?, &c.data.relevance_fields)?;
    let parts = split(&records, &c.split)?;
    log::info!(
        "split {} records into {} train, {} val, {} test",
        records.len(),
        parts.train.len(),
        parts.val.len(),
        parts.test.len()
    );
    let items = BdiItem::standard_set(model.vocabulary());
    let cals = calibrate_items(model, &c.task, &parts.train, &parts.val, &items, &c.calibration)?;

    let out = &c.output_dir;
    for cal in &cals {
        write_atomic(
            &out.join("vectors").join(SteeringFile::file_name(cal.file.item_id)),
            cal.file.to_json()?.as_bytes(),
        )?;
    }
    write_atomic(
        &out.join("calibration/summary.csv"),
        calibration_summary_csv(&cals).as_bytes(),
    )?;
    write_atomic(
        &out.join("calibration/lambda_distribution.csv"),
        lambda_distribution_csv(&cals).as_bytes(),
    )?;
    write_atomic(
        &out.join("calibration/accuracy_curves.csv"),
        accuracy_curves_csv(&cals).as_bytes(),
    )?;
    let cfg = write_config(&c)?;
    write_manifest(out, "calibrate", c.seed, &cfg)?;
    Ok(cals)
}

/// Reads the persisted vectors for `items`. Items without a file are left out.
pub fn load_vectors(dir: &Path, items: &[BdiItem]) -> Result<BTreeMap<u8, ItemSteering>> {
    let mut out = BTreeMap::new();
    for item in items {
        let path = dir.join(SteeringFile::file_name(item.item_id));
        if path.exists() {
            let f = SteeringFile::load(&path)?;
            if f.item_id != item.item_id {
                return Err(Error::Data(format!(
                    "{} holds item {}, expected {}",
                    path.display(),
                    f.item_id,
                    item.item_id
                )));
            }
            out.insert(
                item.item_id,
                ItemSteering {
                    vector: f.steering_vector(),
                    strength: f.lambda_star,
                },
            );
        }
    }
    Ok(out)
}

fn logits_csv(rows: &[LogitRow]) -> String {
    let mut s = String::from(LogitRow::HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

fn relative_change_csv(evals: &[RelevanceEval]) -> Result<String> {
    let base = evals
        .iter()
        .find(|e| e.strength == Strength::Fixed(0.0))
        .map(|e| e.confusion)
        .ok_or_else(|| Error::InvalidConfig("no lambda = 0 baseline".into()))?;
    let pct = |before: usize, after: usize| -> String {
        relative_change(before as u64, after as u64)
            .map(|x| format!("{x:.2}"))
            .unwrap_or_else(|_| "NA".into())
    };
    let mut s = String::from("strength,tn,tp,tn_change_pct,tp_change_pct,non_relevant_accuracy,relevant_accuracy\n");
    for e in evals {
        let m: ConfusionMatrix = e.confusion;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6},{:.6}",
            e.strength.label(),
            m.tn,
            m.tp,
            pct(base.tn, m.tn),
            pct(base.tp, m.tp),
            m.non_relevant_accuracy(),
            m.relevant_accuracy()
        );
    }
    Ok(s)
}

/// Evaluates the test split at every configured strength. A λ = 0 baseline is
/// always included because the change table is relative to it.
pub fn run_relevance_eval(config: &ExperimentConfig) -> Result<Vec<RelevanceEval>> {
    let c = prepare(config)?;
    let model = c.load_model()?;
    relevance_eval_with(&c, model.as_ref())
}

pub fn relevance_eval_with(config: &ExperimentConfig, model: &dyn LanguageModel) -> Result<Vec<RelevanceEval>> {
    let c = prepare(config)?;
    let mut strengths = c.relevance_eval.strengths()?;
    if !strengths.contains(&Strength::Fixed(0.0)) {
        strengths.push(Strength::Fixed(0.0));
    }
    let mut seen = Vec::new();
    strengths.retain(|s| {
        let fresh = !seen.contains(s);
        seen.push(*s);
        fresh
    });

    let records = load_relevance_corpus(c.relevance_path()?, &c.data.relevance_fields)?;
    let test = split(&records, &c.split)?.test;
    let items = BdiItem::standard_set(model.vocabulary());
    let out = &c.output_dir;
    let vectors = load_vectors(&out.join("vectors"), &items)?;
    let needs_vectors = strengths.iter().any(|s| *s != Strength::Fixed(0.0));
    if needs_vectors {
        let mut missing: Vec<u8> = test
            .iter()
            .map(|r| r.item_id)
            .filter(|i| !vectors.contains_key(i))
            .collect();
        missing.dedup();
        if !missing.is_empty() {
            return Err(Error::MissingArtifact(format!(
                "no steering vectors for items {missing:?} under {}; run calibrate first",
                out.join("vectors").display()
            )));
        }
    }

    let mut evals = Vec::with_capacity(strengths.len());
    for s in strengths {
        let e = evaluate_relevance(model, &c.task, &test, &items, &vectors, s)?;
        log::info!(
            "strength {}: non-relevant accuracy {:.3}, relevant accuracy {:.3}",
            s.label(),
            e.confusion.non_relevant_accuracy(),
            e.confusion.relevant_accuracy()
        );
        let label = s.label();
        write_atomic(
            &out.join(format!("confusion/{label}.csv")),
            e.confusion.to_csv().as_bytes(),
        )?;
        write_atomic(&out.join(format!("logits/{label}.csv")), logits_csv(&e.rows).as_bytes())?;
        evals.push(e);
    }
    write_atomic(
        &out.join("relative_change.csv"),
        relative_change_csv(&evals)?.as_bytes(),
    )?;
    let cfg = write_config(&c)?;
    write_manifest(out, "eval-relevance", c.seed, &cfg)?;
    Ok(evals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireOutcome {
    pub unsteered: MetricReport,
    /// Absent when no complete set of steering vectors was found.
    pub steered: Option<MetricReport>,
    pub excluded_users: Vec<String>,
}

impl QuestionnaireOutcome {
    pub fn table(&self) -> String {
        let mut rows = vec![("unsteered", &self.unsteered)];
        rows.extend(self.steered.as_ref().map(|m| ("steered", m)));
        metrics_table(&rows)
    }
}

#[derive(Serialize)]
struct SheetRecord<'a> {
    user_id: &'a str,
    truth: &'a AnswerSheet,
    unsteered: &'a AnswerSheet,
    steered: Option<&'a AnswerSheet>,
}

fn metrics_csv(o: &QuestionnaireOutcome) -> String {
    let mut s = String::from("model,dchr,adodl,ahr,acr,n_users\n");
    let rows = std::iter::once(("unsteered", &o.unsteered)).chain(o.steered.as_ref().map(|m| ("steered", m)));
    for (name, m) in rows {
        let _ = writeln!(
            s,
            "{name},{:.6},{:.6},{:.6},{:.6},{}",
            m.dchr, m.adodl, m.ahr, m.acr, m.n_users
        );
    }
    s
}

/// Completes the questionnaire for every user with a true sheet, unsteered
/// and, when all 21 vectors exist, steered at the calibrated strengths.
pub fn run_questionnaire_eval(config: &ExperimentConfig) -> Result<QuestionnaireOutcome> {
    let c = prepare(config)?;
    let model = c.load_model()?;
    let embedder = c.load_embedder()?;
    questionnaire_eval_with(&c, model.as_ref(), embedder.as_ref())
}

pub fn questionnaire_eval_with(
    config: &ExperimentConfig,
    model: &dyn LanguageModel,
    embedder: &dyn EmbeddingProvider,
) -> Result<QuestionnaireOutcome> {
    let c = prepare(config)?;
    let all = load_users(c.users_path()?, &c.data.user_fields)?;
    let (users, excluded): (Vec<_>, Vec<_>) = all.into_iter().partition(|u| u.true_sheet.is_some());
    let excluded_users: Vec<String> = excluded.into_iter().map(|u| u.user_id).collect();
    if !excluded_users.is_empty() {
        log::warn!(
            "excluding {} users without a true sheet: {excluded_users:?}",
            excluded_users.len()
        );
    }
    if users.is_empty() {
        return Err(Error::Data("no users with a true sheet".into()));
    }
    let truth: Vec<AnswerSheet> = users.iter().filter_map(|u| u.true_sheet.clone()).collect();

    let items = BdiItem::standard_set(model.vocabulary());
    let out = &c.output_dir;
    let vectors: SteeringSet = load_vectors(&out.join("vectors"), &items)?;
    let retriever = Retriever {
        provider: embedder,
        config: c.retrieval,
    };
    let unsteered = evaluate_questionnaires(model, &c.task, &users, &items, None, &retriever)?;
    let steered = if vectors.len() == NUM_ITEMS {
        Some(evaluate_questionnaires(
            model,
            &c.task,
            &users,
            &items,
            Some(&vectors),
            &retriever,
        )?)
    } else {
        log::warn!(
            "found {} of {NUM_ITEMS} steering vectors; skipping the steered run",
            vectors.len()
        );
        None
    };

    for (i, u) in users.iter().enumerate() {
        let rec = SheetRecord {
            user_id: &u.user_id,
            truth: &truth[i],
            unsteered: &unsteered[i],
            steered: steered.as_ref().map(|s| &s[i]),
        };
        write_atomic(
            &out.join(format!("sheets/{}.json", u.user_id)),
            (serde_json::to_string_pretty(&rec)? + "\n").as_bytes(),
        )?;
    }
    let outcome = QuestionnaireOutcome {
        unsteered: compute_metrics(&unsteered, &truth)?,
        steered: steered.as_ref().map(|s| compute_metrics(s, &truth)).transpose()?,
        excluded_users,
    };
    write_atomic(
        &out.join("metrics.json"),
        (serde_json::to_string_pretty(&outcome)? + "\n").as_bytes(),
    )?;
    write_atomic(&out.join("metrics.csv"), metrics_csv(&outcome).as_bytes())?;
    let cfg = write_config(&c)?;
    write_manifest(out, "eval-questionnaire", c.seed, &cfg)?;
    Ok(outcome)
}

/// Human-readable digest of whatever artifacts exist under `out`.
pub fn report(out: &Path) -> Result<String> {
    if !out.is_dir() {
        return Err(Error::MissingArtifact(format!("{} is not a directory", out.display())));
    }
    let mut s = String::new();
    let read = |rel: &str| std::fs::read_to_string(out.join(rel)).ok();

    if let Some(summary) = read("calibration/summary.csv") {
        let lambdas: Vec<f64> = summary
            .lines()
            .skip(1)
            .filter_map(|l| l.split(',').nth(1)?.parse().ok())
            .collect();
        if !lambdas.is_empty() {
            let mut sorted = lambdas.clone();
            sorted.sort_by(f64::total_cmp);
            let mean = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
            let _ = writeln!(
                s,
                "calibrated strengths over {} items: min {}, median {}, max {}, mean {:.3}",
                lambdas.len(),
                sorted[0],
                sorted[sorted.len() / 2],
                sorted[sorted.len() - 1],
                mean
            );
        }
    }
    if let Some(table) = read("relative_change.csv") {
        s.push_str("\nrelevance on the test split:\n");
        let _ = writeln!(
            s,
            "{:<12} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10}",
            "strength", "TN", "TP", "dTN %", "dTP %", "acc(0)", "acc(1)"
        );
        for line in table.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() == 7 {
                let _ = writeln!(
                    s,
                    "{:<12} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10}",
                    f[0], f[1], f[2], f[3], f[4], f[5], f[6]
                );
            }
        }
    }
    if let Some(text) = read("metrics.json") {
        let o: QuestionnaireOutcome = serde_json::from_str(&text)?;
        s.push('\n');
        s.push_str(&o.table());
        if !o.excluded_users.is_empty() {
            let _ = writeln!(s, "excluded users: {}", o.excluded_users.join(", "));
        }
    }
    if s.is_empty() {
        return Err(Error::MissingArtifact(format!("no results under {}", out.display())));
    }
    if let Some(m) = read(MANIFEST) {
        let m: Manifest = serde_json::from_str(&m)?;
        let _ = writeln!(
            s,
            "\n{} artifacts, seed {}, config {}",
            m.artifacts.len(),
            m.seed,
            &m.config_sha256[..12]
        );
    }
    Ok(s)
}

/// JSON summary of an evaluation, handy for scripting.
pub fn relevance_summary(evals: &[RelevanceEval]) -> serde_json::Value {
    json!(evals
        .iter()
        .map(|e| json!({
            "strength": e.strength.label(),
            "confusion": e.confusion,
            "non_relevant_accuracy": e.confusion.non_relevant_accuracy(),
            "relevant_accuracy": e.confusion.relevant_accuracy(),
        }))
        .collect::<Vec<_>>())
}
