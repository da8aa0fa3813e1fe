//! The subcommands: each reads the configured inputs and writes its artifacts into the
//! output directory, returning the paths written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use genkb_core::active::{
    begin_session, complete_session, Annotator, EpisodeReport, InferredFact, Provenance, SelectionMethod,
};
use genkb_core::background::{schema_to_tsv, taxonomy_to_tsv, typemap_to_tsv};
use genkb_core::embed::EmbeddingModel;
use genkb_core::eval::{
    bounds_report, checkpoint_yields, decomposition_check, monotonicity_onset, precision_at_yield, ratio_check,
    AnnotationOracle, BoundsRow, EstimatorParams, EvalError, LabelSource, Onset, Rational64, VecLabels,
};
use genkb_core::guidance::{expand_then_train, schema_consistent};
use genkb_core::predict::{predict, Prediction};
use genkb_core::synth::fixture;
use genkb_core::{split_kb, Background, NamedTriple, QuantLabel};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::files::{csv_bytes, write_atomic, write_json};

pub const PREDICTION_HEADER: [&str; 6] = ["rank", "source", "relation", "target", "label", "probability"];

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    Ok(cfg.ensure_output_dir()?.join(name))
}

/// Writes `train.tsv`, `valid.tsv` and `test.tsv`.
pub fn cmd_split(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let kb = cfg.load_kb()?;
    let split = split_kb(&kb, cfg.seed)?;
    let mut written = Vec::new();
    for (name, part) in [("train.tsv", &split.train), ("valid.tsv", &split.validation), ("test.tsv", &split.test)] {
        let path = out_path(cfg, name)?;
        write_atomic(&path, part.to_canonical_tsv().as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    entities: usize,
    relations: usize,
    triples: usize,
    derived: usize,
    derived_kept: usize,
    dim: usize,
    seed: u64,
    epochs: usize,
    final_loss: f64,
    loss_history: Vec<f64>,
    exhausted_negatives: usize,
    snapshot: String,
}

/// Expands the knowledge base with the configured rules, trains, and saves the model
/// plus `train_report.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let kb = cfg.load_kb()?;
    let bg = cfg.load_background()?;
    let tc = cfg.train_config();
    let out = expand_then_train(&kb, &bg, &tc, &cfg.expansion)?;
    let model_path = cfg.model_path();
    if let Some(dir) = model_path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_atomic(&model_path, &out.model.to_bytes())?;
    let summary = TrainSummary {
        entities: out.model.num_entities(),
        relations: out.model.num_relations(),
        triples: kb.len(),
        derived: out.revisited.len(),
        derived_kept: out.kept().count(),
        dim: tc.dim,
        seed: tc.seed,
        epochs: out.report.epochs,
        final_loss: out.report.final_loss,
        loss_history: out.report.loss_history.clone(),
        exhausted_negatives: out.report.exhausted_negatives,
        snapshot: genkb_core::active::episode::snapshot_id(&out.model),
    };
    let report = out_path(cfg, "train_report.json")?;
    write_json(&report, &summary)?;
    Ok(vec![model_path, report])
}

#[derive(Debug, Serialize)]
struct DerivedRow<'a> {
    source: &'a str,
    relation: &'a str,
    target: &'a str,
    label: QuantLabel,
    provenance: String,
    probability: f64,
    kept: bool,
}

/// Writes `derived.tsv`: the knowledge-base columns, then the rule and premises, the
/// post-training probability and whether the derivation survived the keep threshold.
pub fn cmd_expand(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let kb = cfg.load_kb()?;
    let bg = cfg.load_background()?;
    let out = expand_then_train(&kb, &bg, &cfg.train_config(), &cfg.expansion)?;
    let rows = out.revisited.iter().map(|r| {
        let d = &r.derived;
        let premises: Vec<String> = d.provenance.iter().map(|p| p.to_string()).collect();
        DerivedRow {
            source: &d.triple.source,
            relation: &d.triple.relation,
            target: &d.triple.target,
            label: d.label,
            provenance: format!("{}:{}", d.rule, premises.join(";")),
            probability: genkb_core::embed::sigmoid(r.scored.score),
            kept: r.kept,
        }
    });
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').has_headers(false).from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Input(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    let path = out_path(cfg, "derived.tsv")?;
    write_atomic(&path, &bytes)?;
    log::info!("{} derived, {} kept", out.revisited.len(), out.kept().count());
    Ok(vec![path])
}

/// One line of the ranked prediction CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub rank: usize,
    pub source: String,
    pub relation: String,
    pub target: String,
    pub label: QuantLabel,
    pub probability: f64,
}

/// Drops anything schema-inconsistent. The predictor already filters, so a drop here
/// means a bug upstream and is logged as an error.
pub fn boundary_check(predictions: Vec<Prediction>, bg: &Background) -> Vec<Prediction> {
    let before = predictions.len();
    let kept: Vec<Prediction> = predictions
        .into_iter()
        .filter(|p| schema_consistent(&p.triple.source, &p.triple.relation, &p.triple.target, &bg.schema, &bg.typemap).consistent)
        .collect();
    if kept.len() != before {
        log::error!("boundary check removed {} schema-inconsistent predictions", before - kept.len());
    }
    kept
}

/// Ranked predictions of the saved model as CSV bytes.
pub fn predict_csv(cfg: &RunConfig, model: &EmbeddingModel) -> Result<Vec<u8>, CliError> {
    let kb = cfg.load_kb()?;
    let bg = cfg.load_background()?;
    let outcome = predict(model, &kb, &bg, &cfg.predict)?;
    log::info!("{} predictions, {} removed by the schema", outcome.predictions.len(), outcome.filtered);
    let predictions = boundary_check(outcome.predictions, &bg);
    csv_bytes(
        &PREDICTION_HEADER,
        predictions.iter().enumerate().map(|(i, p)| RankedRow {
            rank: i + 1,
            source: p.triple.source.clone(),
            relation: p.triple.relation.clone(),
            target: p.triple.target.clone(),
            label: p.label,
            probability: p.probability,
        }),
    )
}

/// Writes `predictions.csv`. Needs a trained model.
pub fn cmd_predict(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let model = cfg.load_model()?;
    let bytes = predict_csv(cfg, &model)?;
    let path = out_path(cfg, "predictions.csv")?;
    write_atomic(&path, &bytes)?;
    Ok(vec![path])
}

pub fn read_ranked(path: &Path) -> Result<Vec<RankedRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<RankedRow> = r
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    rows.sort_by_key(|r| r.rank);
    if rows.iter().enumerate().any(|(i, r)| r.rank != i + 1) {
        return Err(CliError::Input(format!("{}: ranks must be 1..=m without gaps", path.display())));
    }
    Ok(rows)
}

/// Where true values for ranked predictions come from.
pub enum Labels<'a> {
    /// A knowledge base: All/Some are true, None and absent are false.
    Truth(BTreeMap<NamedTriple, QuantLabel>),
    /// Any other source, e.g. a person at a prompt.
    Source(Box<dyn LabelSource + 'a>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct BoundsCsvRow {
    k: u32,
    y_k: usize,
    lower: f64,
    upper: f64,
    lower_norm: f64,
    upper_norm: f64,
    prc: Option<f64>,
    queries: usize,
}

const BOUNDS_HEADER: [&str; 8] = ["k", "y_k", "L", "U", "L_hat", "U_hat", "prc", "queries"];

fn f(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioEntry {
    pub k: u32,
    /// None when the lower bound is zero.
    pub holds: Option<bool>,
    pub exact_applicable: bool,
    pub holds_exact: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub y: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub predictions: usize,
    pub alpha: f64,
    pub delta: usize,
    pub y_tilde: usize,
    pub ell: u32,
    pub checkpoints: Vec<u32>,
    /// Distinct ranks labelled to compute the bounds.
    pub bound_queries: usize,
    /// Distinct ranks labelled in total, exact scans included.
    pub total_queries: usize,
    pub ratio: Vec<RatioEntry>,
    /// Whether every normalized bound pair contains the exact precision.
    pub sandwich: Option<bool>,
    pub onset: Option<Onset>,
    pub decomposition: Option<Decomposition>,
}

/// Estimates precision bounds over a ranked CSV and writes `bounds.csv`,
/// `eval_report.json` and, when `exact`, the full-scan `curve.csv`. Bounds are computed
/// first so `bound_queries` is what the estimator alone needed.
pub fn cmd_eval(cfg: &RunConfig, ranked_path: &Path, labels: Labels<'_>, exact: bool) -> Result<(EvalReport, Vec<PathBuf>), CliError> {
    let ranked = read_ranked(ranked_path)?;
    let m = ranked.len();
    if m == 0 {
        return Err(CliError::Input(format!("{} has no predictions", ranked_path.display())));
    }
    let est = &cfg.estimator;
    let params = EstimatorParams::new(est.alpha, est.delta, est.y_tilde.unwrap_or(est.delta))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let ell = params.ell();
    let checkpoints: Vec<u32> = match &est.checkpoints {
        Some(ks) => ks.clone(),
        None => {
            let mut ks = Vec::new();
            let mut k = ell;
            while checkpoint_yields(est.alpha, k)[k as usize] <= m {
                ks.push(k);
                k += 1;
            }
            ks
        }
    };
    if checkpoints.is_empty() {
        return Err(CliError::Eval(EvalError::CheckpointTooLarge {
            k: ell,
            y: checkpoint_yields(est.alpha, ell)[ell as usize],
            m,
        }));
    }
    let mut oracle = match labels {
        Labels::Truth(truth) => {
            let v: Vec<bool> = ranked
                .iter()
                .map(|r| {
                    truth
                        .get(&NamedTriple::new(r.source.as_str(), r.relation.as_str(), r.target.as_str()))
                        .is_some_and(|l| l.is_positive())
                })
                .collect();
            AnnotationOracle::new(VecLabels(v), m)
        }
        Labels::Source(src) => AnnotationOracle::new(BoxedSource(src), m),
    };
    let mut rows: Vec<BoundsRow> = bounds_report(&mut oracle, &params, &checkpoints)?;
    let bound_queries = oracle.queries();
    let ratio = rows
        .iter()
        .map(|row| match ratio_check(row, &params) {
            Ok(v) => Ok(RatioEntry {
                k: row.k,
                holds: Some(v.holds),
                exact_applicable: v.exact_applicable,
                holds_exact: v.exact_applicable.then_some(v.holds_exact),
            }),
            Err(EvalError::Indeterminate) => Ok(RatioEntry {
                k: row.k,
                holds: None,
                exact_applicable: false,
                holds_exact: None,
            }),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut written = Vec::new();
    let (mut sandwich, mut onset, mut decomposition) = (None, None, None);
    if exact {
        for row in rows.iter_mut() {
            row.exact = Some(precision_at_yield(&mut oracle, row.y_k)?);
        }
        sandwich = Some(rows.iter().all(|r| {
            let p = r.exact.expect("filled above");
            r.lower_norm <= p && p <= r.upper_norm
        }));
        onset = Some(monotonicity_onset(&mut oracle, est.delta)?);
        let y = m / est.delta * est.delta;
        if y > 0 {
            decomposition = Some(Decomposition {
                y,
                holds: decomposition_check(&mut oracle, y, est.delta)?,
            });
        }
        let mut ys: Vec<usize> = (1..=m / est.delta).map(|j| j * est.delta).collect();
        if ys.last() != Some(&m) {
            ys.push(m);
        }
        let mut curve = Vec::with_capacity(ys.len());
        for y in ys {
            curve.push((y, f(precision_at_yield(&mut oracle, y)?)));
        }
        let path = out_path(cfg, "curve.csv")?;
        write_atomic(&path, &csv_bytes(&["y", "precision"], curve)?)?;
        written.push(path);
    }
    let csv_rows = rows.iter().map(|r| BoundsCsvRow {
        k: r.k,
        y_k: r.y_k,
        lower: f(r.lower),
        upper: f(r.upper),
        lower_norm: f(r.lower_norm),
        upper_norm: f(r.upper_norm),
        prc: r.exact.map(f),
        queries: r.queries,
    });
    let bounds_path = out_path(cfg, "bounds.csv")?;
    write_atomic(&bounds_path, &csv_bytes(&BOUNDS_HEADER, csv_rows)?)?;
    written.insert(0, bounds_path);
    let report = EvalReport {
        predictions: m,
        alpha: est.alpha,
        delta: est.delta,
        y_tilde: params.y_tilde,
        ell,
        checkpoints,
        bound_queries,
        total_queries: oracle.queries(),
        ratio,
        sandwich,
        onset,
        decomposition,
    };
    let report_path = out_path(cfg, "eval_report.json")?;
    write_json(&report_path, &report)?;
    written.push(report_path);
    Ok((report, written))
}

struct BoxedSource<'a>(Box<dyn LabelSource + 'a>);

impl LabelSource for BoxedSource<'_> {
    fn labels(&mut self, ranks: &[usize]) -> Result<Vec<bool>, EvalError> {
        self.0.labels(ranks)
    }
}

#[derive(Debug, Serialize)]
struct InferredRow<'a> {
    source: &'a str,
    relation: &'a str,
    target: &'a str,
    label: QuantLabel,
    provenance: Provenance,
    probability: f64,
    verified: Option<bool>,
}

/// Runs one episode about `entity`: selected questions and the verification of
/// auto-accepted facts and predictions both go to `annotator`. Writes
/// `active_report.json`, `inferred.csv` and `session.json`.
pub fn cmd_active(cfg: &RunConfig, entity: &str, annotator: &mut dyn Annotator) -> Result<(EpisodeReport, Vec<PathBuf>), CliError> {
    let kb = cfg.load_kb()?;
    let bg = cfg.load_background()?;
    let ec = cfg.episode_config();
    let snapshot = if ec.selection == SelectionMethod::Submodular && ec.budget > 0 {
        let path = cfg.model_path();
        if path.is_file() {
            Some(EmbeddingModel::load(&path)?)
        } else {
            log::info!("no saved model at {}; training a snapshot", path.display());
            Some(expand_then_train(&kb, &bg, &ec.train, &ec.expansion)?.model)
        }
    } else {
        None
    };
    let mut session = begin_session(entity, &kb, &bg, snapshot.as_ref(), &ec)?;
    let questions: Vec<(String, NamedTriple)> = session.selected_facts().map(|(id, c)| (id, c.triple(entity))).collect();
    for (id, t) in questions {
        let label = annotator.annotate(&t)?;
        session.annotate(&id, label)?;
    }
    let outcome = complete_session(&session, &kb, &bg, &ec)?;
    let facts: Vec<InferredFact> = outcome
        .facts
        .into_iter()
        .filter(|f| {
            f.provenance != Provenance::Factorization
                || schema_consistent(&f.triple.source, &f.triple.relation, &f.triple.target, &bg.schema, &bg.typemap).consistent
        })
        .collect();
    let mut verified = Vec::with_capacity(facts.len());
    let (mut from_annotation, mut from_sibling, mut from_fact, mut predictions) = (0, 0, 0, 0);
    for fact in &facts {
        let v = match fact.provenance {
            Provenance::Annotation => {
                from_annotation += 1;
                None
            }
            Provenance::SiblingAgreement => {
                let ok = annotator.annotate(&fact.triple)?.is_positive();
                from_sibling += ok as usize;
                Some(ok)
            }
            Provenance::Factorization => {
                predictions += 1;
                let ok = annotator.annotate(&fact.triple)?.is_positive();
                from_fact += ok as usize;
                Some(ok)
            }
        };
        verified.push(v);
    }
    let report = EpisodeReport {
        entity: entity.to_string(),
        mode: ec.mode,
        selection: ec.selection,
        budget: ec.budget,
        proposed: session.candidates.len(),
        auto_accepted: session.auto_accept.len(),
        selected: session.selected.len(),
        from_annotation,
        from_sibling_agreement: from_sibling,
        from_factorization: from_fact,
        total: from_annotation + from_sibling + from_fact,
        predictions,
    };
    let report_path = out_path(cfg, "active_report.json")?;
    write_json(&report_path, &report)?;
    let inferred_path = out_path(cfg, "inferred.csv")?;
    let rows = facts.iter().zip(&verified).map(|(f, v)| InferredRow {
        source: &f.triple.source,
        relation: &f.triple.relation,
        target: &f.triple.target,
        label: f.label,
        provenance: f.provenance,
        probability: f.probability,
        verified: *v,
    });
    write_atomic(
        &inferred_path,
        &csv_bytes(&["source", "relation", "target", "label", "provenance", "probability", "verified"], rows)?,
    )?;
    let session_path = out_path(cfg, "session.json")?;
    write_json(&session_path, &session)?;
    Ok((report, vec![report_path, inferred_path, session_path]))
}

/// The configuration written next to the bundled fixture.
pub fn fixture_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.kb = Some("kb.tsv".into());
    cfg.paths.taxonomy = Some("taxonomy.tsv".into());
    cfg.paths.typemap = Some("typemap.tsv".into());
    cfg.paths.schema = Some("schema.tsv".into());
    cfg.paths.truth = Some("truth.tsv".into());
    cfg.train.dim = 32;
    cfg.train.epochs = 100;
    cfg.active.budget = 5;
    // Rank everything schema-consistent so the estimators have a long list to work on.
    cfg.predict.min_probability = 0.0;
    cfg.estimator.alpha = 2.0;
    cfg.estimator.delta = 8;
    cfg
}

/// Writes the bundled 200-triple synthetic world and a ready-to-run `config.toml`.
/// The first member of every category is absent from `kb.tsv` but present in
/// `truth.tsv`, which makes it a natural subject for `active`.
pub fn cmd_fixture(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let w = fixture();
    let mut config = toml::Table::try_from(fixture_config()).map_err(|e| CliError::Config(e.to_string()))?;
    // The episode always takes training and expansion settings from the top level.
    if let Some(toml::Value::Table(active)) = config.get_mut("active") {
        active.remove("train");
        active.remove("expansion");
    }
    let config = toml::to_string(&config).map_err(|e| CliError::Config(e.to_string()))?;
    let header = format!("# held-out entities: {}\n", w.held_out.join(" "));
    let files = [
        ("kb.tsv", w.kb.to_canonical_tsv()),
        ("truth.tsv", w.truth.to_canonical_tsv()),
        ("taxonomy.tsv", taxonomy_to_tsv(&w.background.taxonomy)),
        ("typemap.tsv", typemap_to_tsv(&w.background.typemap)),
        ("schema.tsv", schema_to_tsv(&w.background.schema)),
        ("config.toml", header + &config),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
