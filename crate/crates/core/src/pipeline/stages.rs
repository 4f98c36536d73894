//! Stage computations shared by the in-memory experiment and the on-disk
//! runner.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::{
    DataSource, EmbedConfig, ExperimentConfig, FeaturizeConfig, ModelSpec, RetrievalConfig, Scope,
    SegmentConfig, WindowConfig,
};
use crate::corpus::{
    aggregate_window, generate_synthetic, load_catalogue, load_sessions, tokenize, Aggregates, Catalogue,
    ProductId, SessionLog,
};
use crate::embed::{
    build_documents, mf_train, product_vector, query_vector, skipgram_train, ClickMatrix, EmbeddingTable, Synonyms,
};
use crate::error::{Error, Result};
use crate::eval::{
    bin_grades, evaluate, AblationGrid, BaselineComparison, CrossTargetMatrix, EvalOptions, EvalReport, RelevanceGrades,
    Scored, SegmentComparison, Summary, SummaryEntry,
};
use crate::featurize::{
    compute_targets, dae_train, entity_popularity_from, impression_cap, master_categories, onehot, qp_popularity,
    relevance_score, Entity, FeatureLayout, FeatureMask, FeatureMatrix, FeatureRow, OneHotVocab, Target,
    CODE_DIM,
};
use crate::rank::{
    bm25, gbm_train, lambdamart_train, normalize_by_max, rf_train, ranknet_train, recall_score, BaselineScorer,
    CorpusStats, ModelKind, RankData, RankModel, TrainingGroup, TrainingRow,
};
use crate::segment::{
    extract_query_features, score_query, select_svm_params, svm_predict, svm_train, LabelRow, QueryFeatures,
    SegmentLabel, SvmModel, C_GRID, GAMMA_GRID,
};
use crate::util::{derive_seed, fmt6, norm, stratified_split};

pub struct Inputs {
    pub catalogue: Catalogue,
    pub logs: Vec<SessionLog>,
    pub synonyms: Synonyms,
    /// True segment per query, known only for synthetic data.
    pub truth: BTreeMap<String, SegmentLabel>,
}

pub fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs> {
    match &cfg.data {
        DataSource::Synthetic(s) => {
            let d = generate_synthetic(s, derive_seed(cfg.seed, "generate"))?;
            let truth = d.oracle.queries.iter().map(|q| (q.query.clone(), q.segment)).collect();
            Ok(Inputs {
                catalogue: d.catalogue,
                logs: d.logs,
                synonyms: d.synonyms,
                truth,
            })
        }
        DataSource::Files {
            catalogue,
            sessions,
            synonyms,
        } => Ok(Inputs {
            catalogue: load_catalogue(catalogue)?,
            logs: load_sessions(sessions)?,
            synonyms: match synonyms {
                Some(p) => Synonyms::load(p)?,
                None => Synonyms::default(),
            },
            truth: BTreeMap::new(),
        }),
    }
}

/// Distinct queries of the logs, sorted.
pub fn query_list(logs: &[SessionLog]) -> Vec<String> {
    logs.iter()
        .map(|l| l.query.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect()
}

pub fn history<'a>(logs: &'a [SessionLog], windows: &WindowConfig) -> impl Iterator<Item = &'a SessionLog> + Clone {
    let w = windows.history();
    logs.iter().filter(move |l| w.contains(l.day))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowAggregates {
    pub entity: Aggregates,
    pub baseline: Aggregates,
    pub label: Aggregates,
}

impl WindowAggregates {
    pub const NAMES: [&'static str; 3] = ["entity", "baseline", "label"];

    pub fn by_name(&self, name: &str) -> Option<&Aggregates> {
        match name {
            "entity" => Some(&self.entity),
            "baseline" => Some(&self.baseline),
            "label" => Some(&self.label),
            _ => None,
        }
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Aggregates> {
        match name {
            "entity" => Some(&mut self.entity),
            "baseline" => Some(&mut self.baseline),
            "label" => Some(&mut self.label),
            _ => None,
        }
    }
}

pub fn aggregate_stage(logs: &[SessionLog], windows: &WindowConfig) -> Result<WindowAggregates> {
    windows.validate()?;
    let out = WindowAggregates {
        entity: aggregate_window(logs, windows.entity()),
        baseline: aggregate_window(logs, windows.baseline()),
        label: aggregate_window(logs, windows.label()),
    };
    if out.label.is_empty() {
        return Err(Error::InvalidInput("no sessions fall in the label window".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    /// Unit click vectors per product id (zero when never clicked).
    pub mf: EmbeddingTable,
    pub skipgram: EmbeddingTable,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbedReport {
    pub mf_losses: Vec<f64>,
    pub mf_flagged: usize,
    pub skipgram_heldout_losses: Vec<f64>,
    pub skipgram_dropped: usize,
}

pub fn embed_stage<'a>(
    catalogue: &Catalogue,
    history: impl Iterator<Item = &'a SessionLog> + Clone,
    synonyms: &Synonyms,
    cfg: &EmbedConfig,
    seed: u64,
) -> Result<(Embeddings, EmbedReport)> {
    let ids: Vec<ProductId> = catalogue.products().iter().map(|p| p.id).collect();
    let matrix = ClickMatrix::from_sessions(history.clone(), &ids)?;
    let mf = mf_train(&matrix, &cfg.mf, derive_seed(seed, "mf"))?;
    let docs = build_documents(history, catalogue, synonyms);
    let sg = skipgram_train(&docs, &cfg.skipgram, derive_seed(seed, "skipgram"))?;
    let report = EmbedReport {
        mf_losses: mf.losses.clone(),
        mf_flagged: mf.flagged.len(),
        skipgram_heldout_losses: sg.heldout_losses.clone(),
        skipgram_dropped: sg.dropped.len(),
    };
    Ok((
        Embeddings {
            mf: mf.table,
            skipgram: sg.table,
        },
        report,
    ))
}

/// Rescales every non-zero vector to unit length, undoing rounding from
/// text serialization.
pub fn renormalize(table: &EmbeddingTable) -> Result<EmbeddingTable> {
    let mut out = EmbeddingTable::new(table.dim())?;
    for (k, v) in table.iter() {
        let n = norm(v);
        let v = if n > 0.0 { v.iter().map(|x| x / n).collect() } else { v.to_vec() };
        out.insert(k, v)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub queries: usize,
    pub scored: usize,
    pub labeled_broad: usize,
    pub labeled_narrow: usize,
    pub train: usize,
    pub test: usize,
    pub c: f64,
    pub gamma: f64,
    pub cv_accuracy: Option<f64>,
    /// Held-out accuracy against the heuristic labels.
    pub svm_test_accuracy: f64,
    /// Held-out accuracy against the generator's segments, when known.
    pub svm_truth_accuracy: Option<f64>,
    pub threshold_truth_accuracy: Option<f64>,
    pub predicted_broad: usize,
    pub predicted_narrow: usize,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub labels: Vec<LabelRow>,
    pub svm: Option<SvmModel>,
    pub segments: BTreeMap<String, SegmentLabel>,
    pub report: SegmentReport,
}

pub fn query_features(
    catalogue: &Catalogue,
    queries: &[String],
    skipgram: &EmbeddingTable,
) -> BTreeMap<String, QueryFeatures> {
    let vocab = catalogue.attribute_vocab();
    let records = crate::segment::recall_records(catalogue, queries.iter().cloned());
    let mut out = BTreeMap::new();
    for r in &records {
        out.insert(r.query.clone(), extract_query_features(&r.query, r, skipgram, &vocab));
    }
    for q in queries {
        if !out.contains_key(q) {
            let empty = crate::corpus::QueryRecord::new(q.clone(), vec![0]).expect("non-empty");
            let mut f = extract_query_features(q, &empty, skipgram, &vocab);
            f.recall_set_size = 0;
            out.insert(q.clone(), f);
        }
    }
    out
}

fn accuracy(pairs: impl Iterator<Item = (SegmentLabel, SegmentLabel)>) -> Option<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for (a, b) in pairs {
        n += 1;
        hit += usize::from(a == b);
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

/// Coherency score and heuristic label for every query with a non-empty
/// recall set.
pub fn score_stage(
    catalogue: &Catalogue,
    queries: &[String],
    mf: &EmbeddingTable,
    cfg: &SegmentConfig,
) -> Result<Vec<LabelRow>> {
    cfg.thresholds.validate()?;
    let mut labels = Vec::new();
    for r in &crate::segment::recall_records(catalogue, queries.iter().cloned()) {
        if let Some(c) = score_query(r, mf)? {
            labels.push(LabelRow {
                query: r.query.clone(),
                score: c.score,
                label: cfg.thresholds.heuristic(c.score),
            });
        }
    }
    Ok(labels)
}

/// Fits the classifier on the heuristic labels. `None` when either class
/// has fewer than two labeled queries.
pub fn train_segmenter(
    labels: &[LabelRow],
    feats: &BTreeMap<String, QueryFeatures>,
    truth: &BTreeMap<String, SegmentLabel>,
    cfg: &SegmentConfig,
    seed: u64,
) -> Result<(Option<SvmModel>, SegmentReport)> {
    let labeled: Vec<&LabelRow> = labels
        .iter()
        .filter(|l| l.label.is_some() && feats.contains_key(&l.query))
        .collect();
    let keys: Vec<SegmentLabel> = labeled.iter().map(|l| l.label.unwrap()).collect();
    let mut report = SegmentReport {
        queries: feats.len(),
        scored: labels.len(),
        labeled_broad: keys.iter().filter(|&&k| k == SegmentLabel::Broad).count(),
        labeled_narrow: keys.iter().filter(|&&k| k == SegmentLabel::Narrow).count(),
        ..SegmentReport::default()
    };
    report.threshold_truth_accuracy = accuracy(
        labels
            .iter()
            .filter_map(|l| truth.get(&l.query).map(|t| (cfg.thresholds.label(l.score), *t))),
    );
    if report.labeled_broad < 2 || report.labeled_narrow < 2 {
        log::warn!("heuristic labels cover only one segment; falling back to the coherency threshold");
        report.source = "threshold".into();
        return Ok((None, report));
    }
    let (train_idx, test_idx) = stratified_split(&keys, cfg.train_fraction, derive_seed(seed, "svm-split"));
    let row = |i: usize| (feats[&labeled[i].query].to_vector(), keys[i]);
    let train: Vec<(Vec<f64>, SegmentLabel)> = train_idx.iter().map(|&i| row(i)).collect();
    let test: Vec<(Vec<f64>, SegmentLabel)> = test_idx.iter().map(|&i| row(i)).collect();
    let params = if cfg.cross_validate {
        let (p, acc) = select_svm_params(&train, &C_GRID, &GAMMA_GRID, cfg.folds, &cfg.svm, derive_seed(seed, "svm-cv"))?;
        report.cv_accuracy = Some(acc);
        p
    } else {
        cfg.svm
    };
    let model = svm_train(&train, &params)?;
    report.train = train.len();
    report.test = test.len();
    report.c = model.c;
    report.gamma = model.gamma;
    if !test.is_empty() {
        report.svm_test_accuracy = model.accuracy(&test)?;
    }
    let mut truth_pairs = Vec::new();
    for &i in &test_idx {
        if let Some(t) = truth.get(&labeled[i].query) {
            truth_pairs.push((svm_predict(&model, &feats[&labeled[i].query].to_vector())?, *t));
        }
    }
    report.svm_truth_accuracy = accuracy(truth_pairs.into_iter());
    report.source = "svm".into();
    Ok((Some(model), report))
}

/// Segment per query from the classifier, or from the coherency threshold
/// without one; queries without a score default to broad.
pub fn predict_segments(
    feats: &BTreeMap<String, QueryFeatures>,
    svm: Option<&SvmModel>,
    labels: &[LabelRow],
    truth: &BTreeMap<String, SegmentLabel>,
    cfg: &SegmentConfig,
) -> Result<BTreeMap<String, SegmentLabel>> {
    let mut segments = BTreeMap::new();
    let scores: BTreeMap<&str, f64> = labels.iter().map(|l| (l.query.as_str(), l.score)).collect();
    for (q, f) in feats {
        let s = if cfg.use_oracle {
            *truth.get(q).ok_or_else(|| {
                Error::InvalidConfig(format!("segment.use_oracle set but query `{q}` has no known segment"))
            })?
        } else if let Some(m) = svm {
            svm_predict(m, &f.to_vector())?
        } else {
            scores.get(q.as_str()).map_or(SegmentLabel::Broad, |&s| cfg.thresholds.label(s))
        };
        segments.insert(q.clone(), s);
    }
    Ok(segments)
}

pub fn segment_stage(
    catalogue: &Catalogue,
    queries: &[String],
    emb: &Embeddings,
    truth: &BTreeMap<String, SegmentLabel>,
    cfg: &SegmentConfig,
    seed: u64,
) -> Result<Segmentation> {
    let labels = score_stage(catalogue, queries, &emb.mf, cfg)?;
    let feats = query_features(catalogue, queries, &emb.skipgram);
    let (svm, mut report) = train_segmenter(&labels, &feats, truth, cfg, seed)?;
    let segments = predict_segments(&feats, svm.as_ref(), &labels, truth, cfg)?;
    finish_report(&mut report, &segments, cfg);
    Ok(Segmentation {
        labels,
        svm,
        segments,
        report,
    })
}

pub fn finish_report(report: &mut SegmentReport, segments: &BTreeMap<String, SegmentLabel>, cfg: &SegmentConfig) {
    if cfg.use_oracle {
        report.source = "oracle".into();
    }
    report.predicted_broad = segments.values().filter(|&&s| s == SegmentLabel::Broad).count();
    report.predicted_narrow = segments.len() - report.predicted_broad;
}

/// Row-level metadata for a query in the feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryEntry {
    pub id: u32,
    pub query: String,
    pub segment: SegmentLabel,
    pub truth: Option<SegmentLabel>,
    pub test: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeReport {
    /// `(master category, first epoch loss, last epoch loss)`.
    pub autoencoders: Vec<(String, f64, f64)>,
    pub unknown_attribute_products: usize,
    pub rows: usize,
    pub train_queries: usize,
    pub test_queries: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub matrix: FeatureMatrix,
    pub queries: Vec<QueryEntry>,
    /// Aligned with `matrix.rows`.
    pub recall_scores: Vec<f64>,
}

impl FeatureSet {
    pub fn query(&self, id: u32) -> Option<&QueryEntry> {
        self.queries.get(id as usize).filter(|q| q.id == id)
    }

    /// Contiguous row ranges per query id, in matrix order.
    pub fn groups(&self) -> Vec<(u32, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let rows = &self.matrix.rows;
        let mut start = 0;
        while start < rows.len() {
            let q = rows[start].query_id;
            let mut end = start;
            while end < rows.len() && rows[end].query_id == q {
                end += 1;
            }
            out.push((q, start..end));
            start = end;
        }
        out
    }
}

pub fn round6(x: f64) -> f64 {
    fmt6(x).parse().expect("formatted float parses")
}

/// 32-dim autoencoder code per product, one model per master category.
pub fn product_codes(
    catalogue: &Catalogue,
    cfg: &FeaturizeConfig,
    seed: u64,
) -> Result<(EmbeddingTable, FeaturizeReport)> {
    let mut table = EmbeddingTable::new(CODE_DIM)?;
    let mut report = FeaturizeReport::default();
    for master in master_categories(catalogue) {
        let vocab = OneHotVocab::from_catalogue(catalogue, &master);
        let products: Vec<_> = catalogue
            .products()
            .iter()
            .filter(|p| p.master_category() == master)
            .collect();
        let mut inputs = Vec::with_capacity(products.len());
        for p in &products {
            let oh = onehot(p, &vocab)?;
            report.unknown_attribute_products += usize::from(oh.is_flagged());
            inputs.push(oh.vector);
        }
        let model = dae_train(&inputs, &cfg.dae, derive_seed(seed, &format!("dae-{master}")))?;
        report.autoencoders.push((
            master.clone(),
            model.losses.first().copied().unwrap_or(f64::NAN),
            model.losses.last().copied().unwrap_or(f64::NAN),
        ));
        let codes = model.encode_batch(&inputs)?;
        for (p, c) in products.iter().zip(codes) {
            table.insert(p.id.to_string(), c.into_iter().map(round6).collect())?;
        }
    }
    Ok((table, report))
}

pub fn feature_layout(query_dim: usize) -> FeatureLayout {
    let q = QueryFeatures::vector_names(query_dim);
    let mut qp = vec!["relevance".to_string(), "bm25".to_string()];
    let mut pop = Vec::new();
    for e in [Entity::Brand, Entity::ArticleType] {
        for m in ["log_revenue", "log_quantity", "ctr"] {
            qp.push(format!("{}_query_{m}", e.as_str()));
            pop.push(format!("{}_{m}", e.as_str()));
        }
    }
    let phys = (0..CODE_DIM).map(|i| format!("code{i}")).collect();
    FeatureLayout {
        blocks: [q, qp, pop, phys],
    }
}

/// Candidates per query ranked by the retrieval blend, best first.
pub fn retrieve(
    catalogue: &Catalogue,
    query: &str,
    recall: &[ProductId],
    stats: &CorpusStats,
    baseline: &BaselineScorer,
    cfg: &RetrievalConfig,
) -> Vec<(ProductId, f64, f64)> {
    let terms = tokenize(query);
    let mut raw: Vec<f64> = recall
        .iter()
        .map(|id| {
            let doc = catalogue.get(*id).map(|p| p.text_tokens()).unwrap_or_default();
            bm25(&terms, &doc, stats, cfg.k1, cfg.b)
        })
        .collect();
    let bm = raw.clone();
    normalize_by_max(&mut raw);
    let mut out: Vec<(ProductId, f64, f64)> = recall
        .iter()
        .zip(raw.iter().zip(&bm))
        .map(|(&id, (&n, &b))| (id, recall_score(n, baseline.score(id), cfg.alpha), b))
        .collect();
    out.sort_by(|a, b| crate::util::cmp_score_desc((a.1, a.0), (b.1, b.0)));
    out.truncate(cfg.candidates);
    out
}

#[allow(clippy::too_many_arguments)]
pub fn featurize_stage(
    catalogue: &Catalogue,
    aggs: &WindowAggregates,
    skipgram: &EmbeddingTable,
    codes: &EmbeddingTable,
    segments: &BTreeMap<String, SegmentLabel>,
    truth: &BTreeMap<String, SegmentLabel>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<FeatureSet> {
    let queries: Vec<String> = segments.keys().cloned().collect();
    let feats = query_features(catalogue, &queries, skipgram);
    let layout = feature_layout(skipgram.dim());
    let index = crate::corpus::RecallIndex::new(catalogue);
    let stats = CorpusStats::from_catalogue(catalogue);
    let baseline = BaselineScorer::from_counts(catalogue, &aggs.baseline.per_product(), &cfg.retrieval.weights)?;
    let brand_pop = entity_popularity_from(&aggs.entity, catalogue, Entity::Brand);
    let type_pop = entity_popularity_from(&aggs.entity, catalogue, Entity::ArticleType);

    let mut kept: Vec<(String, Vec<FeatureRow>, Vec<f64>)> = Vec::new();
    for q in &queries {
        let Some(label_rows) = aggs.label.query(q) else { continue };
        let recall = index.recall(q);
        let candidates = retrieve(catalogue, q, &recall, &stats, &baseline, &cfg.retrieval);
        let qf = feats[q].to_vector();
        let qvec = query_vector(q, skipgram).vector;
        let qp = qp_popularity(&aggs.entity, catalogue, q);
        let mut rows = Vec::new();
        let mut scores = Vec::new();
        for (pid, score, bm) in candidates {
            let Some(counts) = label_rows.get(&pid) else { continue };
            if counts.impressions < cfg.featurize.min_impressions {
                continue;
            }
            let p = catalogue.get(pid).expect("recall ids come from the catalogue");
            let pvec = product_vector(p, skipgram).vector;
            let mut f = qf.clone();
            f.push(relevance_score(&qvec, &pvec)?);
            f.push(bm);
            f.extend(qp.features(p));
            f.extend(brand_pop.get(p.brand()).0.features());
            f.extend(type_pop.get(p.article_type()).0.features());
            match codes.get(&pid.to_string()) {
                Some(c) => f.extend_from_slice(c),
                None => f.extend(std::iter::repeat(0.0).take(CODE_DIM)),
            }
            rows.push(FeatureRow {
                query_id: 0,
                product_id: pid,
                features: f.into_iter().map(round6).collect(),
                counts: *counts,
            });
            scores.push(round6(score));
        }
        if !rows.is_empty() {
            kept.push((q.clone(), rows, scores));
        }
    }
    if kept.is_empty() {
        return Err(Error::InvalidInput(
            "no query-product pair reaches the impression threshold in the label window".into(),
        ));
    }
    let strata: Vec<SegmentLabel> = kept.iter().map(|(q, _, _)| segments[q]).collect();
    let (_, test_idx) = stratified_split(&strata, cfg.rank.train_fraction, derive_seed(seed, "letor-split"));
    let test: BTreeSet<usize> = test_idx.into_iter().collect();
    let mut entries = Vec::new();
    let mut all_rows = Vec::new();
    let mut all_scores = Vec::new();
    for (i, (q, rows, scores)) in kept.into_iter().enumerate() {
        let id = i as u32;
        entries.push(QueryEntry {
            id,
            segment: segments[&q],
            truth: truth.get(&q).copied(),
            query: q,
            test: test.contains(&i),
        });
        let mut paired: Vec<(FeatureRow, f64)> = rows
            .into_iter()
            .map(|mut r| {
                r.query_id = id;
                r
            })
            .zip(scores)
            .collect();
        paired.sort_by_key(|(r, _)| r.product_id);
        for (r, s) in paired {
            all_rows.push(r);
            all_scores.push(s);
        }
    }
    Ok(FeatureSet {
        matrix: FeatureMatrix::new(layout, all_rows)?,
        queries: entries,
        recall_scores: all_scores,
    })
}

/// Training or test rows of `spec`'s scope as model input.
pub fn rank_data(fs: &FeatureSet, spec: &ModelSpec, test: bool, cfg: &ExperimentConfig) -> Result<RankData> {
    let columns = fs.matrix.layout.columns(spec.mask);
    let train_rows: Vec<u64> = fs
        .matrix
        .rows
        .iter()
        .filter(|r| fs.query(r.query_id).is_some_and(|q| !q.test))
        .map(|r| r.counts.impressions)
        .collect();
    let cap = if test {
        u64::MAX
    } else {
        impression_cap(&train_rows, cfg.featurize.max_impression_quantile)
    };
    let mut groups = Vec::new();
    for (qid, range) in fs.groups() {
        let q = fs.query(qid).expect("query entry per id");
        if q.test != test || !spec.segment.admits(q.segment) {
            continue;
        }
        let mut rows = Vec::new();
        let mut metrics = Vec::new();
        for r in &fs.matrix.rows[range] {
            if r.counts.impressions > cap {
                continue;
            }
            let t = compute_targets(&r.counts, cfg.featurize.epsilon)?;
            let Some(value) = spec.target.value(&t) else { continue };
            metrics.push(spec.target.metric(&t).unwrap_or(0.0));
            rows.push(TrainingRow {
                product_id: r.product_id,
                features: columns.iter().map(|&c| r.features[c]).collect(),
                target: value,
                grade: 0,
            });
        }
        if rows.is_empty() {
            continue;
        }
        if let Some(grades) = bin_grades(&metrics, cfg.eval.bins)? {
            for (row, g) in rows.iter_mut().zip(grades) {
                row.grade = g;
            }
        }
        groups.push(TrainingGroup { query_id: qid, rows });
    }
    if groups.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no {} rows for model {}",
            if test { "test" } else { "training" },
            spec.id()
        )));
    }
    RankData::new(spec.mask, columns.len(), groups)
}

pub fn train_model(fs: &FeatureSet, spec: &ModelSpec, cfg: &ExperimentConfig) -> Result<RankModel> {
    if spec.kind == ModelKind::Baseline {
        return Err(Error::InvalidConfig(
            "the baseline ranks by the retrieval blend and is not trained".into(),
        ));
    }
    let data = rank_data(fs, spec, false, cfg)?;
    let seed = derive_seed(cfg.seed, &spec.id());
    let target = spec.target.name();
    match spec.kind {
        ModelKind::RandomForest => rf_train(&data, &cfg.rank.rf, target, seed),
        ModelKind::Gbm => gbm_train(&data, &cfg.rank.gbm, target, seed),
        ModelKind::RankNet => ranknet_train(&data, &cfg.rank.ranknet, target, seed),
        ModelKind::LambdaMart => {
            let p = crate::rank::LambdaMartParams {
                k: cfg.eval.k,
                gain: cfg.eval.gain,
                ..cfg.rank.lambdamart
            };
            lambdamart_train(&data, &p, target, seed)
        }
        ModelKind::Baseline => unreachable!(),
    }
}

/// Scores for every matrix row; rows outside the model's test scope get NaN.
pub fn score_rows(fs: &FeatureSet, model: &RankModel, mask: FeatureMask) -> Result<Vec<f64>> {
    model.check_mask(mask, fs.matrix.layout.columns(mask).len())?;
    let columns = fs.matrix.layout.columns(mask);
    Ok(fs
        .matrix
        .rows
        .iter()
        .map(|r| {
            let x: Vec<f64> = columns.iter().map(|&c| r.features[c]).collect();
            model.predict_row(&x)
        })
        .collect())
}

/// Grades of the test queries in `scope` under `target`. Rows whose metric
/// is undefined get grade 0.
pub fn test_grades(fs: &FeatureSet, scope: Scope, target: Target, cfg: &ExperimentConfig) -> Result<RelevanceGrades> {
    let mut metrics = BTreeMap::new();
    for (qid, range) in fs.groups() {
        let q = fs.query(qid).expect("query entry per id");
        if !q.test || !scope.admits(q.segment) {
            continue;
        }
        let mut m = Vec::new();
        for r in &fs.matrix.rows[range] {
            let t = compute_targets(&r.counts, cfg.featurize.epsilon)?;
            m.push((r.product_id, target.metric(&t).unwrap_or(0.0)));
        }
        metrics.insert(q.query.clone(), m);
    }
    RelevanceGrades::from_metrics(&metrics, cfg.eval.bins)
}

/// NDCG of `scores` (aligned with matrix rows) on each scope and grading target.
pub fn evaluate_scores(
    fs: &FeatureSet,
    model_id: &str,
    mask: &str,
    scopes: &[Scope],
    scores: &[f64],
    cfg: &ExperimentConfig,
) -> Result<Vec<(SummaryEntry, EvalReport)>> {
    let groups = fs.groups();
    let mut out = Vec::new();
    for &scope in scopes {
        for target in Target::ALL {
            let grades = test_grades(fs, scope, target, cfg)?;
            let ids: Vec<ProductId> = fs.matrix.rows.iter().map(|r| r.product_id).collect();
            let scored: Vec<Scored> = groups
                .iter()
                .filter_map(|(qid, range)| {
                    let q = fs.query(*qid)?;
                    (q.test && scope.admits(q.segment)).then(|| Scored {
                        query: &q.query,
                        ids: &ids[range.clone()],
                        scores: &scores[range.clone()],
                    })
                })
                .collect();
            let opts = EvalOptions {
                k: cfg.eval.k,
                gain: cfg.eval.gain,
                bootstrap: cfg.eval.bootstrap,
                seed: derive_seed(cfg.seed, &format!("bootstrap-{model_id}-{scope}-{}", target.name())),
            };
            let report = evaluate((model_id, target.name(), scope.as_str()), scored, &grades, &opts);
            if report.per_query.is_empty() {
                continue;
            }
            let entry = SummaryEntry {
                model: model_id.to_string(),
                mask: mask.to_string(),
                segment: scope.as_str().to_string(),
                target: target.name().to_string(),
                mean_ndcg: report.mean,
                queries: report.per_query.len(),
                ci_low: report.ci.0,
                ci_high: report.ci.1,
            };
            out.push((entry, report));
        }
    }
    Ok(out)
}

/// Scopes a model is evaluated on: its own segment, or every scope when
/// trained on all queries.
pub fn eval_scopes(spec: &ModelSpec) -> Vec<Scope> {
    match spec.segment {
        Scope::All => vec![Scope::All, Scope::Broad, Scope::Narrow],
        s => vec![s],
    }
}

pub const BASELINE_ID: &str = "baseline";

pub fn evaluate_baseline(fs: &FeatureSet, cfg: &ExperimentConfig) -> Result<Vec<(SummaryEntry, EvalReport)>> {
    evaluate_scores(
        fs,
        BASELINE_ID,
        "-",
        &[Scope::All, Scope::Broad, Scope::Narrow],
        &fs.recall_scores,
        cfg,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reports {
    pub ablation: AblationGrid,
    pub segments: SegmentComparison,
    pub baseline: BaselineComparison,
    pub cross_target: CrossTargetMatrix,
}

impl Reports {
    pub fn to_text(&self) -> String {
        format!(
            "# ablation (all queries, log_ctr)\n{}\n# segment specialization (log_ctr)\n{}\n# baseline comparison (log_ctr)\n{}\n# cross-target (all queries)\n{}",
            self.ablation.to_text(),
            self.segments.to_text(),
            self.baseline.to_text(),
            self.cross_target.to_text()
        )
    }
}

fn reference_spec(target: Target, segment: Scope) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::LambdaMart,
        mask: FeatureMask::ALL,
        target,
        segment,
    }
}

/// Tables derived from the summary. Missing entries are skipped or left
/// as NaN in the cross-target matrix.
pub fn build_reports(summary: &Summary, models: &[ModelSpec]) -> Reports {
    let ctr = Target::Ctr.name();
    let mean = |id: &str, mask: &str, seg: Scope, target: &str| summary.get(id, mask, seg.as_str(), target).map(|e| e.mean_ndcg);

    let mut ablation = AblationGrid {
        segment: Scope::All.as_str().into(),
        ..AblationGrid::default()
    };
    for spec in models {
        if spec.target == Target::Ctr && spec.segment == Scope::All {
            if let Some(v) = mean(&spec.id(), &spec.mask.code(), Scope::All, ctr) {
                ablation.insert(spec.kind.as_str(), &spec.mask.code(), v);
            }
        }
    }

    let yyyy = FeatureMask::ALL.code();
    let combined = reference_spec(Target::Ctr, Scope::All).id();
    let mut rows = vec![(
        "combined".to_string(),
        mean(&combined, &yyyy, Scope::Broad, ctr),
        mean(&combined, &yyyy, Scope::Narrow, ctr),
    )];
    let broad = reference_spec(Target::Ctr, Scope::Broad).id();
    let narrow = reference_spec(Target::Ctr, Scope::Narrow).id();
    rows.push(("broad-only".into(), mean(&broad, &yyyy, Scope::Broad, ctr), None));
    rows.push(("narrow-only".into(), None, mean(&narrow, &yyyy, Scope::Narrow, ctr)));

    let mut baseline = Vec::new();
    for (seg, model) in [(Scope::Broad, &broad), (Scope::Narrow, &narrow), (Scope::All, &combined)] {
        let learned = mean(model, &yyyy, seg, ctr).or_else(|| mean(&combined, &yyyy, seg, ctr));
        if let (Some(b), Some(l)) = (mean(BASELINE_ID, "-", seg, ctr), learned) {
            baseline.push((seg.as_str().to_string(), b, l));
        }
    }

    let values = Target::ALL
        .iter()
        .map(|&train| {
            let id = reference_spec(train, Scope::All).id();
            Target::ALL
                .iter()
                .map(|test| mean(&id, &yyyy, Scope::All, test.name()).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    Reports {
        ablation,
        segments: SegmentComparison { rows },
        baseline: BaselineComparison { rows: baseline },
        cross_target: CrossTargetMatrix {
            targets: Target::ALL.iter().map(|t| t.name().to_string()).collect(),
            values,
        },
    }
}
