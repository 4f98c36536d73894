use std::collections::BTreeMap;

use super::config::ExperimentConfig;
use super::stages::*;
use crate::embed::EmbeddingTable;
use crate::error::Result;
use crate::eval::{EvalReport, Summary};
use crate::rank::RankModel;

/// Every stage output of one run, held in memory.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub inputs: Inputs,
    pub aggregates: WindowAggregates,
    pub embeddings: Embeddings,
    pub embed_report: EmbedReport,
    pub segmentation: Segmentation,
    pub codes: EmbeddingTable,
    pub featurize_report: FeaturizeReport,
    pub features: FeatureSet,
    /// Keyed by model id.
    pub models: BTreeMap<String, RankModel>,
    pub summary: Summary,
    pub evaluations: Vec<EvalReport>,
    pub reports: Reports,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

impl Experiment {
    /// Runs every stage up to feature construction.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let inputs = stage("generate", load_inputs(&config))?;
        let aggregates = stage("aggregate", aggregate_stage(&inputs.logs, &config.windows))?;
        let (embeddings, embed_report) = stage(
            "embed",
            embed_stage(
                &inputs.catalogue,
                history(&inputs.logs, &config.windows),
                &inputs.synonyms,
                &config.embed,
                seed,
            ),
        )?;
        let queries = query_list(&inputs.logs);
        let segmentation = stage(
            "segment",
            segment_stage(&inputs.catalogue, &queries, &embeddings, &inputs.truth, &config.segment, seed),
        )?;
        let (codes, mut featurize_report) =
            stage("featurize", product_codes(&inputs.catalogue, &config.featurize, seed))?;
        let features = stage(
            "featurize",
            featurize_stage(
                &inputs.catalogue,
                &aggregates,
                &embeddings.skipgram,
                &codes,
                &segmentation.segments,
                &inputs.truth,
                &config,
                seed,
            ),
        )?;
        featurize_report.rows = features.matrix.rows.len();
        featurize_report.test_queries = features.queries.iter().filter(|q| q.test).count();
        featurize_report.train_queries = features.queries.len() - featurize_report.test_queries;
        Ok(Self {
            config,
            inputs,
            aggregates,
            embeddings,
            embed_report,
            segmentation,
            codes,
            featurize_report,
            features,
            models: BTreeMap::new(),
            summary: Summary::default(),
            evaluations: Vec::new(),
            reports: build_reports(&Summary::default(), &[]),
        })
    }

    /// Trains and evaluates every configured model, then builds the reports.
    pub fn train_and_evaluate(&mut self) -> Result<()> {
        let mut summary = Summary::default();
        let mut evaluations = Vec::new();
        for (e, r) in stage("evaluate", evaluate_baseline(&self.features, &self.config))? {
            summary.push(e);
            evaluations.push(r);
        }
        for spec in self.config.rank.models.clone() {
            let id = spec.id();
            log::info!("training {id}");
            let model = stage("train", train_model(&self.features, &spec, &self.config))?;
            let scores = stage("evaluate", score_rows(&self.features, &model, spec.mask))?;
            let scopes = eval_scopes(&spec);
            for (e, r) in stage(
                "evaluate",
                evaluate_scores(&self.features, &id, &spec.mask.code(), &scopes, &scores, &self.config),
            )? {
                summary.push(e);
                evaluations.push(r);
            }
            self.models.insert(id, model);
        }
        self.reports = build_reports(&summary, &self.config.rank.models);
        self.summary = summary;
        self.evaluations = evaluations;
        Ok(())
    }

    pub fn run(config: ExperimentConfig) -> Result<Self> {
        let mut e = Self::prepare(config)?;
        e.train_and_evaluate()?;
        Ok(e)
    }
}
