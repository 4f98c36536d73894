//! Declarative experiment configuration (TOML).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{DayWindow, SyntheticConfig};
use crate::embed::{MfConfig, SkipGramConfig};
use crate::error::{Error, Result};
use crate::eval::Gain;
use crate::featurize::{DaeConfig, FeatureMask, Target, EPSILON};
use crate::rank::{BaselineWeights, GbmParams, LambdaMartParams, ModelKind, RankNetParams, RfParams};
use crate::segment::{SegmentLabel, SvmParams, Thresholds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Files {
        catalogue: PathBuf,
        sessions: PathBuf,
        #[serde(default)]
        synonyms: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticConfig::default())
    }
}

/// Day ranges: features come from `[0, cutoff)`, labels from `[cutoff, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub cutoff: u32,
    pub end: u32,
    pub entity_days: u32,
    pub baseline_days: u32,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            cutoff: 15,
            end: 30,
            entity_days: 15,
            baseline_days: 14,
        }
    }
}

impl WindowConfig {
    pub fn entity(&self) -> DayWindow {
        DayWindow::trailing(self.cutoff, self.entity_days)
    }

    pub fn baseline(&self) -> DayWindow {
        DayWindow::trailing(self.cutoff, self.baseline_days)
    }

    pub fn label(&self) -> DayWindow {
        DayWindow {
            start: self.cutoff,
            end: self.end,
        }
    }

    pub fn history(&self) -> DayWindow {
        DayWindow {
            start: 0,
            end: self.cutoff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoff == 0 || self.end <= self.cutoff {
            return Err(Error::InvalidConfig("windows need 0 < cutoff < end".into()));
        }
        if self.entity_days == 0 || self.baseline_days == 0 {
            return Err(Error::InvalidConfig("popularity windows must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub mf: MfConfig,
    pub skipgram: SkipGramConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub thresholds: Thresholds,
    pub train_fraction: f64,
    /// Grid-search C and gamma with stratified folds instead of using `svm`.
    pub cross_validate: bool,
    pub folds: usize,
    pub svm: SvmParams,
    /// Use the generator's true segments downstream instead of SVM predictions.
    pub use_oracle: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            train_fraction: 0.7,
            cross_validate: true,
            folds: 3,
            svm: SvmParams::default(),
            use_oracle: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizeConfig {
    pub dae: DaeConfig,
    pub min_impressions: u64,
    /// Rows above this impression quantile are pruned from training.
    pub max_impression_quantile: f64,
    pub epsilon: f64,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        Self {
            dae: DaeConfig::default(),
            min_impressions: 20,
            max_impression_quantile: 0.999,
            epsilon: EPSILON,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub alpha: f64,
    pub candidates: usize,
    pub k1: f64,
    pub b: f64,
    pub weights: BaselineWeights,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            candidates: 500,
            k1: crate::rank::BM25_K1,
            b: crate::rank::BM25_B,
            weights: BaselineWeights::default(),
        }
    }
}

/// Which queries a model is trained or evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    All,
    Broad,
    Narrow,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Broad => "broad",
            Scope::Narrow => "narrow",
        }
    }

    pub fn admits(self, segment: SegmentLabel) -> bool {
        match self {
            Scope::All => true,
            Scope::Broad => segment == SegmentLabel::Broad,
            Scope::Narrow => segment == SegmentLabel::Narrow,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Scope::All),
            "broad" => Ok(Scope::Broad),
            "narrow" => Ok(Scope::Narrow),
            _ => Err(Error::InvalidInput(format!("unknown segment scope `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub mask: FeatureMask,
    pub target: Target,
    pub segment: Scope,
}

impl ModelSpec {
    /// File-name friendly identifier, e.g. `lambdamart-YYYY-log_ctr-all`.
    pub fn id(&self) -> String {
        format!("{}-{}-{}-{}", self.kind, self.mask.code(), self.target.name(), self.segment)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub train_fraction: f64,
    pub rf: RfParams,
    pub gbm: GbmParams,
    pub ranknet: RankNetParams,
    pub lambdamart: LambdaMartParams,
    pub models: Vec<ModelSpec>,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            rf: RfParams::default(),
            gbm: GbmParams::default(),
            ranknet: RankNetParams::default(),
            lambdamart: LambdaMartParams::default(),
            models: default_models(),
        }
    }
}

/// The model set behind the standard report: every LETOR model under every
/// ablation mask, segment-specialized LambdaMART models and one LambdaMART
/// model per training target.
pub fn default_models() -> Vec<ModelSpec> {
    let mut out = Vec::new();
    for kind in ModelKind::LETOR {
        for mask in FeatureMask::ablation_masks() {
            out.push(ModelSpec {
                kind,
                mask,
                target: Target::Ctr,
                segment: Scope::All,
            });
        }
    }
    for segment in [Scope::Broad, Scope::Narrow] {
        out.push(ModelSpec {
            kind: ModelKind::LambdaMart,
            mask: FeatureMask::ALL,
            target: Target::Ctr,
            segment,
        });
    }
    for target in [Target::Atcr, Target::Conv, Target::Rpi] {
        out.push(ModelSpec {
            kind: ModelKind::LambdaMart,
            mask: FeatureMask::ALL,
            target,
            segment: Scope::All,
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub bins: u8,
    pub gain: Gain,
    pub bootstrap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: crate::eval::DEFAULT_K,
            bins: crate::eval::DEFAULT_BINS,
            gain: Gain::Exponential,
            bootstrap: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub windows: WindowConfig,
    pub embed: EmbedConfig,
    pub segment: SegmentConfig,
    pub featurize: FeaturizeConfig,
    pub retrieval: RetrievalConfig,
    pub rank: RankConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataSource::default(),
            windows: WindowConfig::default(),
            embed: EmbedConfig::default(),
            segment: SegmentConfig::default(),
            featurize: FeaturizeConfig::default(),
            retrieval: RetrievalConfig::default(),
            rank: RankConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Small synthetic setup that runs end to end in seconds.
    pub fn smoke() -> Self {
        let mut cfg = Self::default();
        cfg.data = DataSource::Synthetic(SyntheticConfig {
            n_products: 500,
            n_queries: 80,
            n_sessions: 2000,
            n_brands: 10,
            ..SyntheticConfig::default()
        });
        cfg.embed.mf.epochs = 5;
        cfg.embed.skipgram.epochs = 2;
        cfg.segment.cross_validate = false;
        cfg.featurize.dae = DaeConfig {
            hidden: vec![64, 48],
            epochs: 5,
            ..DaeConfig::default()
        };
        cfg.featurize.min_impressions = 5;
        cfg.rank.rf.n_trees = 10;
        cfg.rank.gbm.n_trees = 20;
        cfg.rank.lambdamart.n_trees = 20;
        cfg.rank.ranknet.epochs = 3;
        cfg.rank.ranknet.hidden = vec![16, 8];
        cfg.eval.bootstrap = 100;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.windows.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
            if s.days < self.windows.end {
                return Err(Error::InvalidConfig(format!(
                    "windows end at day {} but the generator only produces {} days",
                    self.windows.end, s.days
                )));
            }
        }
        self.segment.thresholds.validate()?;
        self.retrieval.weights.validate()?;
        let frac = |f: f64, name: &str| {
            if f > 0.0 && f < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie strictly inside (0, 1)")))
            }
        };
        frac(self.segment.train_fraction, "segment.train_fraction")?;
        frac(self.rank.train_fraction, "rank.train_fraction")?;
        if !(0.0..=1.0).contains(&self.retrieval.alpha) {
            return Err(Error::InvalidConfig("retrieval.alpha must lie in [0, 1]".into()));
        }
        if self.eval.k == 0 || self.eval.bins < 2 {
            return Err(Error::InvalidConfig("eval needs k >= 1 and bins >= 2".into()));
        }
        if self.segment.folds < 2 {
            return Err(Error::InvalidConfig("segment.folds must be at least 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_lossless() {
        for cfg in [ExperimentConfig::default(), ExperimentConfig::smoke()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 9\n[eval]\nk = 10\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.eval.k, 10);
        assert_eq!(cfg.eval.bins, 5);
        assert_eq!(cfg.rank.models, default_models());
    }

    #[test]
    fn model_spec_from_toml() {
        let text = "[[rank.models]]\nkind = \"gbm\"\nmask = \"YNNY\"\ntarget = \"log_rpi\"\nsegment = \"narrow\"\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.rank.models.len(), 1);
        assert_eq!(cfg.rank.models[0].id(), "gbm-YNNY-log_rpi-narrow");
    }

    #[test]
    fn bad_values_rejected() {
        assert!(ExperimentConfig::from_toml("[windows]\ncutoff = 40\n").is_err());
        assert!(ExperimentConfig::from_toml("[retrieval]\nalpha = 2.0\n").is_err());
        assert!(ExperimentConfig::from_toml("unknown = 1\n").is_err());
    }
}
