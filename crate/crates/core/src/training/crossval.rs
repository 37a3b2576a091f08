use rayon::prelude::*;

use super::{fit, predict_proba, PreparedSet, TrainConfig, TrainHistory};
use crate::datasets::SplitPlan;
use crate::error::{Error, Result};
use crate::metrics::{combine_confusion, summarize, ConfusionMatrix, CvSummary, MetricsReport};
use crate::model::{AnyModel, ModelSpec, PretrainedWeights};
use crate::seed::derive_seed;

/// What one fold's training produced.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    /// Class probabilities for the test samples, in test order.
    pub probabilities: Vec<Vec<f64>>,
    pub history: Option<TrainHistory>,
    pub model: Option<AnyModel>,
}

/// Trains a fresh classifier on one fold and predicts its test part.
///
/// Implementations must derive all randomness from the fold index so folds
/// can run in any order or in parallel.
pub trait FoldTrainer: Sync {
    fn run_fold(&self, fold: usize, train: &PreparedSet, test: &PreparedSet) -> Result<FoldOutcome>;
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    /// 1-based.
    pub fold: usize,
    pub report: MetricsReport,
    pub history: Option<TrainHistory>,
    pub model: Option<AnyModel>,
}

#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub summary: CvSummary,
    /// Sum of the per-fold confusion matrices.
    pub combined: ConfusionMatrix,
}

/// Runs every fold of `plan`, with up to `jobs` folds at a time.
pub fn cross_validate(data: &PreparedSet, plan: &SplitPlan, trainer: &dyn FoldTrainer, jobs: usize) -> Result<CrossValidation> {
    if plan.folds.is_empty() {
        return Err(Error::Config("the split plan has no folds".into()));
    }
    let run = |(k, f): (usize, &crate::datasets::Fold)| -> Result<FoldResult> {
        let fold = k + 1;
        let annotate = |e: Error| Error::Fold {
            fold,
            source: Box::new(e),
        };
        let train = data.select(&f.train).map_err(annotate)?;
        let test = data.select(&f.test).map_err(annotate)?;
        log::info!("fold {fold}: {} train, {} test", train.len(), test.len());
        let out = trainer.run_fold(fold, &train, &test).map_err(annotate)?;
        let report = MetricsReport::from_probabilities(&out.probabilities, &test.labels, &test.classes).map_err(annotate)?;
        Ok(FoldResult {
            fold,
            report,
            history: out.history,
            model: out.model,
        })
    };
    let folds: Vec<FoldResult> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
        pool.install(|| plan.folds.par_iter().enumerate().map(run).collect::<Result<_>>())?
    } else {
        plan.folds.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    let reports: Vec<MetricsReport> = folds.iter().map(|f| f.report.clone()).collect();
    Ok(CrossValidation {
        summary: summarize(&reports)?,
        combined: combine_confusion(&reports)?,
        folds,
    })
}

/// Builds a network from `spec`, trains it with `train` and predicts the test part.
#[derive(Clone, Debug)]
pub struct NetworkFoldTrainer {
    pub spec: ModelSpec,
    pub train: TrainConfig,
    /// Parent of the per-fold initialization and training seeds.
    pub seed: u64,
    pub eval_batch_size: usize,
    /// Loaded into every fold's fresh model when the spec asks for pretraining.
    pub weights: PretrainedWeights,
}

impl NetworkFoldTrainer {
    pub fn new(spec: ModelSpec, train: TrainConfig, seed: u64) -> Self {
        let eval_batch_size = train.batch_size;
        NetworkFoldTrainer {
            spec,
            train,
            seed,
            eval_batch_size,
            weights: PretrainedWeights::default(),
        }
    }
}

impl FoldTrainer for NetworkFoldTrainer {
    fn run_fold(&self, fold: usize, train: &PreparedSet, test: &PreparedSet) -> Result<FoldOutcome> {
        let mut model = self.spec.build(derive_seed(self.seed, &format!("init/fold{fold}")))?;
        if self.spec.pretrained() {
            model.load_pretrained(&self.weights)?;
        }
        let config = TrainConfig {
            seed: derive_seed(self.seed, &format!("train/fold{fold}")),
            ..self.train.clone()
        };
        let history = fit(&mut model, train, &config)?;
        let probabilities = predict_proba(&model, test, self.eval_batch_size)?;
        Ok(FoldOutcome {
            probabilities,
            history: Some(history),
            model: Some(model),
        })
    }
}
