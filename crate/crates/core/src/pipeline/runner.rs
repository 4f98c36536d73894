//! Cached on-disk stages. Every stage reads and writes plain files under the
//! experiment directory and records content hashes in `manifest.json`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{DataSource, ExperimentConfig, ModelSpec};
use super::stages::*;
use crate::corpus::{
    format_catalogue, format_sessions, load_catalogue, load_sessions, Aggregates, Counts, ProductId,
};
use crate::embed::{EmbeddingTable, Synonyms};
use crate::error::{Error, Result};
use crate::eval::{plot_ablation_svg, Summary};
use crate::featurize::FeatureMatrix;
use crate::rank::RankModel;
use crate::segment::{format_labels, load_labels, SegmentLabel, SvmModel};
use crate::util::fmt6;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";

const CATALOGUE: &str = "catalogue.tsv";
const SESSIONS: &str = "sessions.tsv";
const SYNONYMS: &str = "synonyms.tsv";
const TRUTH: &str = "truth.tsv";
const AGGREGATES: &str = "aggregates.tsv";
const MF: &str = "mf.emb";
const SKIPGRAM: &str = "skipgram.emb";
const EMBED_REPORT: &str = "embed_report.json";
const LABELS: &str = "labels.tsv";
const SVM: &str = "svm.json";
const SEGMENT_REPORT: &str = "segment_report.json";
const SEGMENTS: &str = "segments.tsv";
const CODES: &str = "codes.emb";
const FEATURES: &str = "features.tsv";
const QUERIES: &str = "queries.tsv";
const RECALL_SCORES: &str = "recall_scores.tsv";
const FEATURIZE_REPORT: &str = "featurize_report.json";
const SUMMARY: &str = "summary.json";
const SUMMARY_TEXT: &str = "summary.txt";
const EVALUATIONS: &str = "evaluations.json";
const REPORTS: &str = "reports.txt";
const REPORTS_JSON: &str = "reports.json";
const PLOT: &str = "ablation.svg";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    Aggregate,
    Embed,
    SegmentScore,
    SegmentTrain,
    SegmentPredict,
    Featurize,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Generate,
        Stage::Aggregate,
        Stage::Embed,
        Stage::SegmentScore,
        Stage::SegmentTrain,
        Stage::SegmentPredict,
        Stage::Featurize,
        Stage::Train,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Aggregate => "aggregate",
            Stage::Embed => "embed",
            Stage::SegmentScore => "segment-score",
            Stage::SegmentTrain => "segment-train",
            Stage::SegmentPredict => "segment-predict",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// The command that produces this stage's outputs.
    fn command(self) -> &'static str {
        match self {
            Stage::SegmentScore => "segment score",
            Stage::SegmentTrain => "segment train",
            Stage::SegmentPredict => "segment predict",
            s => s.as_str(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash over the stage's configuration and input contents.
    pub key: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

/// Content hashes of every artifact plus the cache key of every stage run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write(dir, MANIFEST, &text)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

pub fn model_path(spec: &ModelSpec) -> String {
    format!("models/{}.model", spec.id())
}

fn producer(name: &str) -> Stage {
    match name {
        CATALOGUE | SESSIONS | SYNONYMS | TRUTH => Stage::Generate,
        AGGREGATES => Stage::Aggregate,
        MF | SKIPGRAM | EMBED_REPORT => Stage::Embed,
        LABELS => Stage::SegmentScore,
        SVM | SEGMENT_REPORT => Stage::SegmentTrain,
        SEGMENTS => Stage::SegmentPredict,
        CODES | FEATURES | QUERIES | RECALL_SCORES | FEATURIZE_REPORT => Stage::Featurize,
        SUMMARY | SUMMARY_TEXT | EVALUATIONS => Stage::Evaluate,
        n if n.starts_with("models/") => Stage::Train,
        _ => Stage::Report,
    }
}

/// Output of one stage invocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Cached,
}

struct StageRun<'a> {
    name: String,
    dir: &'a Path,
    inputs: Vec<String>,
    params: serde_json::Value,
}

impl StageRun<'_> {
    fn key(&self, input_hashes: &[String]) -> String {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        h.update(b"\n");
        h.update(self.params.to_string().as_bytes());
        for (name, hash) in self.inputs.iter().zip(input_hashes) {
            h.update(format!("\n{name}={hash}").as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Runs `body` unless the manifest shows identical inputs and intact
    /// outputs. `body` returns the relative paths it wrote.
    fn execute(self, body: impl FnOnce() -> Result<Vec<String>>) -> Result<Outcome> {
        let mut hashes = Vec::with_capacity(self.inputs.len());
        for name in &self.inputs {
            let path = self.dir.join(name);
            if !path.exists() {
                return Err(Error::MissingArtifact {
                    path,
                    hint: format!("run `shoprank {}` first", producer(name).command()),
                });
            }
            hashes.push(hash_file(&path)?);
        }
        let key = self.key(&hashes);
        let mut manifest = Manifest::load(self.dir)?;
        if let Some(rec) = manifest.stages.get(&self.name) {
            if rec.key == key && outputs_intact(self.dir, &manifest, &rec.outputs)? {
                log::info!("stage={} status=cached key={}", self.name, &key[..12]);
                return Ok(Outcome::Cached);
            }
        }
        let started = Instant::now();
        let outputs = body()?;
        if let Some(old) = manifest.stages.remove(&self.name) {
            for o in old.outputs {
                manifest.artifacts.remove(&o);
            }
        }
        for o in &outputs {
            manifest.artifacts.insert(o.clone(), hash_file(&self.dir.join(o))?);
        }
        manifest.stages.insert(
            self.name.clone(),
            StageRecord {
                key: key.clone(),
                inputs: self.inputs,
                outputs,
            },
        );
        manifest.save(self.dir)?;
        log::info!(
            "stage={} status=ran key={} duration_ms={}",
            self.name,
            &key[..12],
            started.elapsed().as_millis()
        );
        Ok(Outcome::Ran)
    }
}

fn outputs_intact(dir: &Path, manifest: &Manifest, outputs: &[String]) -> Result<bool> {
    for o in outputs {
        let path = dir.join(o);
        if !path.exists() || manifest.artifacts.get(o) != Some(&hash_file(&path)?) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn format_truth(truth: &BTreeMap<String, SegmentLabel>) -> String {
    truth.iter().map(|(q, s)| format!("{q}\t{}\n", s.as_str())).collect()
}

fn parse_segment_map(text: &str, source: &str) -> Result<BTreeMap<String, SegmentLabel>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let (q, s) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source, i + 1, "expected `query \\t segment`"))?;
        out.insert(q.to_string(), s.parse().map_err(|e: Error| Error::parse(source, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn format_aggregates(aggs: &WindowAggregates) -> String {
    let mut out = String::new();
    for name in WindowAggregates::NAMES {
        for (q, p, c) in aggs.by_name(name).expect("known window").iter() {
            let _ = writeln!(
                out,
                "{name}\t{q}\t{p}\t{}\t{}\t{}\t{}\t{}",
                c.impressions,
                c.clicks,
                c.carts,
                c.purchases,
                fmt6(c.revenue())
            );
        }
    }
    out
}

pub fn parse_aggregates(text: &str, source: &str) -> Result<WindowAggregates> {
    let mut out = WindowAggregates::default();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let err = |m: &str| Error::parse(source, i + 1, m);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(err("expected 8 tab-separated fields"));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| err("bad count"));
        let revenue: f64 = f[7].parse().map_err(|_| err("bad revenue"))?;
        let counts = Counts {
            impressions: int(f[3])?,
            clicks: int(f[4])?,
            carts: int(f[5])?,
            purchases: int(f[6])?,
            revenue_micros: (revenue * 1e6).round() as i64,
        };
        let product: ProductId = f[2].parse().map_err(|_| err("bad product id"))?;
        let agg: &mut Aggregates = out.by_name_mut(f[0]).ok_or_else(|| err("unknown window"))?;
        agg.add(f[1], product, &counts);
    }
    Ok(out)
}

pub fn format_queries(entries: &[QueryEntry]) -> String {
    let mut out = String::from("query_id\tquery\tsegment\ttruth\tsplit\n");
    for q in entries {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            q.id,
            q.query,
            q.segment.as_str(),
            q.truth.map_or("-", SegmentLabel::as_str),
            if q.test { "test" } else { "train" }
        );
    }
    out
}

pub fn parse_queries(text: &str, source: &str) -> Result<Vec<QueryEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.is_empty()) {
        let err = |m: &str| Error::parse(source, i + 1, m);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(err("expected 5 tab-separated fields"));
        }
        let label = |s: &str| s.parse::<SegmentLabel>().map_err(|_| err("bad segment"));
        out.push(QueryEntry {
            id: f[0].parse().map_err(|_| err("bad query id"))?,
            query: f[1].to_string(),
            segment: label(f[2])?,
            truth: if f[3] == "-" { None } else { Some(label(f[3])?) },
            test: match f[4] {
                "test" => true,
                "train" => false,
                _ => return Err(err("split must be train or test")),
            },
        });
    }
    if out.iter().enumerate().any(|(i, q)| q.id as usize != i) {
        return Err(Error::parse(source, 0, "query ids must be 0..n in order"));
    }
    Ok(out)
}

pub fn format_recall_scores(fs: &FeatureSet) -> String {
    let mut out = String::new();
    for (r, s) in fs.matrix.rows.iter().zip(&fs.recall_scores) {
        let _ = writeln!(out, "{}\t{}\t{}", r.query_id, r.product_id, fmt6(*s));
    }
    out
}

fn parse_recall_scores(text: &str, source: &str, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let err = || Error::parse(source, i + 1, "expected `query_id \\t product_id \\t score`");
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err());
        }
        let q: u32 = f[0].parse().map_err(|_| err())?;
        let p: ProductId = f[1].parse().map_err(|_| err())?;
        map.insert((q, p), f[2].parse::<f64>().map_err(|_| err())?);
    }
    matrix
        .rows
        .iter()
        .map(|r| {
            map.get(&(r.query_id, r.product_id)).copied().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{source}: no recall score for query {} product {}",
                    r.query_id, r.product_id
                ))
            })
        })
        .collect()
}

/// Loads the feature matrix with its query table and recall scores.
pub fn load_feature_set(dir: &Path) -> Result<FeatureSet> {
    let matrix = FeatureMatrix::load(dir.join(FEATURES))?;
    let queries = parse_queries(&read(dir, QUERIES)?, QUERIES)?;
    let recall_scores = parse_recall_scores(&read(dir, RECALL_SCORES)?, RECALL_SCORES, &matrix)?;
    Ok(FeatureSet {
        matrix,
        queries,
        recall_scores,
    })
}


fn queries_of(dir: &Path) -> Result<Vec<String>> {
    Ok(query_list(&load_sessions(dir.join(SESSIONS))?))
}

/// Runs one stage against the experiment directory `dir`.
pub fn run_stage(cfg: &ExperimentConfig, dir: &Path, stage: Stage) -> Result<Outcome> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let r = match stage {
        Stage::Train => {
            let mut outcome = Outcome::Cached;
            for spec in &cfg.rank.models {
                if train_stage(cfg, dir, spec)? == Outcome::Ran {
                    outcome = Outcome::Ran;
                }
            }
            Ok(outcome)
        }
        _ => dispatch(cfg, dir, stage),
    };
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => e.in_stage(stage.as_str()),
    })
}

fn seeded(cfg: &ExperimentConfig, v: serde_json::Value) -> serde_json::Value {
    json!({ "seed": cfg.seed, "params": v })
}

fn dispatch(cfg: &ExperimentConfig, dir: &Path, stage: Stage) -> Result<Outcome> {
    let seed = cfg.seed;
    let run = |inputs: Vec<String>, params: serde_json::Value| StageRun {
        name: stage.as_str().to_string(),
        dir,
        inputs,
        params: seeded(cfg, params),
    };
    match stage {
        Stage::Generate => {
            let external = match &cfg.data {
                DataSource::Synthetic(_) => json!(null),
                DataSource::Files {
                    catalogue,
                    sessions,
                    synonyms,
                } => json!({
                    "catalogue": hash_file(catalogue)?,
                    "sessions": hash_file(sessions)?,
                    "synonyms": synonyms.as_deref().map(hash_file).transpose()?,
                }),
            };
            run(vec![], json!({ "data": cfg.data, "external": external })).execute(|| {
                let inputs = load_inputs(cfg)?;
                write(dir, CATALOGUE, &format_catalogue(&inputs.catalogue))?;
                write(dir, SESSIONS, &format_sessions(&inputs.logs))?;
                write(dir, SYNONYMS, &inputs.synonyms.to_text())?;
                write(dir, TRUTH, &format_truth(&inputs.truth))?;
                Ok(strings(&[CATALOGUE, SESSIONS, SYNONYMS, TRUTH]))
            })
        }
        Stage::Aggregate => run(strings(&[SESSIONS]), json!(cfg.windows)).execute(|| {
            let logs = load_sessions(dir.join(SESSIONS))?;
            let aggs = aggregate_stage(&logs, &cfg.windows)?;
            write(dir, AGGREGATES, &format_aggregates(&aggs))?;
            Ok(strings(&[AGGREGATES]))
        }),
        Stage::Embed => run(
            strings(&[CATALOGUE, SESSIONS, SYNONYMS]),
            json!({ "windows": cfg.windows, "embed": cfg.embed }),
        )
        .execute(|| {
            let catalogue = load_catalogue(dir.join(CATALOGUE))?;
            let logs = load_sessions(dir.join(SESSIONS))?;
            let synonyms = Synonyms::load(dir.join(SYNONYMS))?;
            let (emb, report) = embed_stage(&catalogue, history(&logs, &cfg.windows), &synonyms, &cfg.embed, seed)?;
            emb.mf.save(dir.join(MF))?;
            emb.skipgram.save(dir.join(SKIPGRAM))?;
            write(dir, EMBED_REPORT, &to_json(&report)?)?;
            Ok(strings(&[MF, SKIPGRAM, EMBED_REPORT]))
        }),
        Stage::SegmentScore => run(strings(&[CATALOGUE, SESSIONS, MF]), json!(cfg.segment.thresholds)).execute(|| {
            let catalogue = load_catalogue(dir.join(CATALOGUE))?;
            let mf = renormalize(&EmbeddingTable::load(dir.join(MF))?)?;
            let labels = score_stage(&catalogue, &queries_of(dir)?, &mf, &cfg.segment)?;
            write(dir, LABELS, &format_labels(&labels))?;
            Ok(strings(&[LABELS]))
        }),
        Stage::SegmentTrain => run(
            strings(&[CATALOGUE, SESSIONS, SKIPGRAM, LABELS, TRUTH]),
            json!(cfg.segment),
        )
        .execute(|| {
            let catalogue = load_catalogue(dir.join(CATALOGUE))?;
            let skipgram = EmbeddingTable::load(dir.join(SKIPGRAM))?;
            let feats = query_features(&catalogue, &queries_of(dir)?, &skipgram);
            let labels = load_labels(dir.join(LABELS))?;
            let truth = parse_segment_map(&read(dir, TRUTH)?, TRUTH)?;
            let (svm, report) = train_segmenter(&labels, &feats, &truth, &cfg.segment, seed)?;
            match &svm {
                Some(m) => m.save(dir.join(SVM))?,
                None => write(dir, SVM, "null\n")?,
            }
            write(dir, SEGMENT_REPORT, &to_json(&report)?)?;
            Ok(strings(&[SVM, SEGMENT_REPORT]))
        }),
        Stage::SegmentPredict => run(
            strings(&[CATALOGUE, SESSIONS, SKIPGRAM, LABELS, TRUTH, SVM, SEGMENT_REPORT]),
            json!(cfg.segment),
        )
        .execute(|| {
            let catalogue = load_catalogue(dir.join(CATALOGUE))?;
            let skipgram = EmbeddingTable::load(dir.join(SKIPGRAM))?;
            let feats = query_features(&catalogue, &queries_of(dir)?, &skipgram);
            let labels = load_labels(dir.join(LABELS))?;
            let truth = parse_segment_map(&read(dir, TRUTH)?, TRUTH)?;
            let svm_text = read(dir, SVM)?;
            let svm = if svm_text.trim() == "null" {
                None
            } else {
                Some(SvmModel::from_text(&svm_text)?)
            };
            let segments = predict_segments(&feats, svm.as_ref(), &labels, &truth, &cfg.segment)?;
            let mut report: SegmentReport = serde_json::from_str(&read(dir, SEGMENT_REPORT)?)?;
            finish_report(&mut report, &segments, &cfg.segment);
            log::info!(
                "stage=segment-predict source={} broad={} narrow={}",
                report.source,
                report.predicted_broad,
                report.predicted_narrow
            );
            write(dir, SEGMENTS, &format_truth(&segments))?;
            Ok(strings(&[SEGMENTS]))
        }),
        Stage::Featurize => run(
            strings(&[CATALOGUE, AGGREGATES, SKIPGRAM, SEGMENTS, TRUTH]),
            json!({
                "featurize": cfg.featurize,
                "retrieval": cfg.retrieval,
                "split": cfg.rank.train_fraction,
            }),
        )
        .execute(|| {
            let catalogue = load_catalogue(dir.join(CATALOGUE))?;
            let aggs = parse_aggregates(&read(dir, AGGREGATES)?, AGGREGATES)?;
            let skipgram = EmbeddingTable::load(dir.join(SKIPGRAM))?;
            let segments = parse_segment_map(&read(dir, SEGMENTS)?, SEGMENTS)?;
            let truth = parse_segment_map(&read(dir, TRUTH)?, TRUTH)?;
            let (codes, mut report) = product_codes(&catalogue, &cfg.featurize, seed)?;
            let fs = featurize_stage(&catalogue, &aggs, &skipgram, &codes, &segments, &truth, cfg, seed)?;
            report.rows = fs.matrix.rows.len();
            report.test_queries = fs.queries.iter().filter(|q| q.test).count();
            report.train_queries = fs.queries.len() - report.test_queries;
            codes.save(dir.join(CODES))?;
            fs.matrix.save(dir.join(FEATURES))?;
            write(dir, QUERIES, &format_queries(&fs.queries))?;
            write(dir, RECALL_SCORES, &format_recall_scores(&fs))?;
            write(dir, FEATURIZE_REPORT, &to_json(&report)?)?;
            Ok(strings(&[CODES, FEATURES, QUERIES, RECALL_SCORES, FEATURIZE_REPORT]))
        }),
        Stage::Evaluate => {
            let mut inputs = strings(&[FEATURES, QUERIES, RECALL_SCORES]);
            inputs.extend(cfg.rank.models.iter().map(model_path));
            run(
                inputs,
                json!({ "eval": cfg.eval, "epsilon": cfg.featurize.epsilon, "models": cfg.rank.models }),
            )
            .execute(|| {
                let fs = load_feature_set(dir)?;
                let mut summary = Summary::default();
                let mut evaluations = Vec::new();
                for (e, r) in evaluate_baseline(&fs, cfg)? {
                    summary.push(e);
                    evaluations.push(r);
                }
                for spec in &cfg.rank.models {
                    let model = RankModel::load(dir.join(model_path(spec)))?;
                    let scores = score_rows(&fs, &model, spec.mask)?;
                    let evals = evaluate_scores(&fs, &spec.id(), &spec.mask.code(), &eval_scopes(spec), &scores, cfg)?;
                    for (e, r) in evals {
                        summary.push(e);
                        evaluations.push(r);
                    }
                }
                write(dir, SUMMARY, &to_json(&summary)?)?;
                write(dir, SUMMARY_TEXT, &summary.to_text())?;
                write(dir, EVALUATIONS, &to_json(&evaluations)?)?;
                Ok(strings(&[SUMMARY, SUMMARY_TEXT, EVALUATIONS]))
            })
        }
        Stage::Report => run(strings(&[SUMMARY]), json!(cfg.rank.models)).execute(|| {
            let summary: Summary = serde_json::from_str(&read(dir, SUMMARY)?)?;
            let reports = build_reports(&summary, &cfg.rank.models);
            write(dir, REPORTS, &reports.to_text())?;
            write(dir, REPORTS_JSON, &to_json(&reports)?)?;
            write(dir, PLOT, &plot_ablation_svg(&reports.ablation))?;
            Ok(strings(&[REPORTS, REPORTS_JSON, PLOT]))
        }),
        Stage::Train => unreachable!("handled per model"),
    }
}

/// Trains one model, cached under the stage name `train:<model id>`.
pub fn train_stage(cfg: &ExperimentConfig, dir: &Path, spec: &ModelSpec) -> Result<Outcome> {
    let path = model_path(spec);
    StageRun {
        name: format!("train:{}", spec.id()),
        dir,
        inputs: strings(&[FEATURES, QUERIES]),
        params: seeded(
            cfg,
            json!({
                "spec": spec,
                "rank": {
                    "rf": cfg.rank.rf,
                    "gbm": cfg.rank.gbm,
                    "ranknet": cfg.rank.ranknet,
                    "lambdamart": cfg.rank.lambdamart,
                },
                "featurize": cfg.featurize,
                "eval": cfg.eval,
            }),
        ),
    }
    .execute(|| {
        let matrix = FeatureMatrix::load(dir.join(FEATURES))?;
        let queries = parse_queries(&read(dir, QUERIES)?, QUERIES)?;
        let fs = FeatureSet {
            recall_scores: vec![0.0; matrix.rows.len()],
            matrix,
            queries,
        };
        let model = train_model(&fs, spec, cfg)?;
        for w in &model.report.warnings {
            log::warn!("model={} {w}", spec.id());
        }
        let full = dir.join(&path);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        model.save(&full)?;
        Ok(vec![path.clone()])
    })
    .map_err(|e| e.in_stage("train"))
}

/// Runs every stage in dependency order and returns the final manifest.
pub fn run_pipeline(cfg: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, CONFIG, &cfg.to_toml()?)?;
    for stage in Stage::ALL {
        run_stage(cfg, dir, stage)?;
    }
    Manifest::load(dir)
}

/// Renders the ablation chart from an evaluated experiment directory.
pub fn plot(cfg: &ExperimentConfig, dir: &Path, output: &Path) -> Result<()> {
    let summary_path = dir.join(SUMMARY);
    if !summary_path.exists() {
        return Err(Error::MissingArtifact {
            path: summary_path,
            hint: "run `shoprank evaluate` first".into(),
        });
    }
    let summary: Summary = serde_json::from_str(&read(dir, SUMMARY)?)?;
    let svg = plot_ablation_svg(&build_reports(&summary, &cfg.rank.models).ablation);
    fs::write(output, svg).map_err(|e| Error::io(output, e))
}
