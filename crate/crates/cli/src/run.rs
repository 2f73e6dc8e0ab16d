//! A configured pipeline and its stages.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hansaudit_core::eval::TaggedScore;
use hansaudit_core::protocol::{parse_protocol, InterventionConfig, Subset};

use crate::analysis::{run_analysis, sign_checks, InterventionAnalysis, SignCheck};
use crate::config::{CmMode, PipelineConfig};
use crate::ingest::ingest_external_scores;
use crate::layout::Layout;
use crate::pipeline::{
    self, load_scores, run_eval, run_perturb, run_score, run_train, store_scores, Corpus, EerRow,
    ExperimentCell, FeatureStore, PerturbSummary, TrainOutcome,
};
use crate::report;

pub struct Session {
    pub cfg: PipelineConfig,
    pub layout: Layout,
    pub corpus: Corpus,
    pub cells: Vec<ExperimentCell>,
    store: FeatureStore,
}

/// Outputs of a full run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub perturbed: Vec<PerturbSummary>,
    pub trained: Vec<TrainOutcome>,
    pub eers: Vec<EerRow>,
    pub analyses: Vec<InterventionAnalysis>,
    pub sign_checks: Vec<SignCheck>,
    pub report: PathBuf,
}

impl Session {
    /// Validate the config, load or generate the corpus and plan every cell.
    pub fn open(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg.output_dir);
        let corpus = pipeline::prepare_corpus(&cfg, &layout)?;
        let cells = pipeline::experiment_cells(&cfg, &corpus)?;
        let store = FeatureStore::new(&cfg.cm.features, layout.feature_cache_dir())?;
        Ok(Session {
            cfg,
            layout,
            corpus,
            cells,
            store,
        })
    }

    fn jobs<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        pipeline::with_jobs(self.cfg.jobs, f)?
    }

    fn gmm_mode(&self, stage: &str) -> Result<()> {
        if self.cfg.cm.mode != CmMode::Gmm {
            bail!("`{stage}` needs `cm.mode = \"gmm\"`; external scores come in through ingest-scores");
        }
        Ok(())
    }

    /// Cells that carry scores: everything in GMM mode, the intervention
    /// cells in external mode.
    fn scored_cells(&self) -> Vec<ExperimentCell> {
        self.cells
            .iter()
            .filter(|c| self.cfg.cm.mode == CmMode::Gmm || !c.is_baseline())
            .cloned()
            .collect()
    }

    pub fn perturb(&self) -> Result<Vec<PerturbSummary>> {
        self.jobs(|| run_perturb(&self.cfg, &self.layout, &self.corpus, &self.cells))
    }

    pub fn train(&self) -> Result<Vec<TrainOutcome>> {
        self.gmm_mode("train")?;
        self.jobs(|| run_train(&self.cfg, &self.layout, &self.corpus, &self.cells, &self.store))
    }

    pub fn score(&self) -> Result<()> {
        self.gmm_mode("score")?;
        self.jobs(|| run_score(&self.layout, &self.corpus, &self.cells, &self.store))?;
        Ok(())
    }

    /// EER per cell; writes `eer.csv` and `eer.md`.
    pub fn eval(&self) -> Result<Vec<EerRow>> {
        let rows = run_eval(&self.layout, &self.scored_cells())?;
        report::write_eer_reports(&self.layout.reports_dir(), &rows)?;
        Ok(rows)
    }

    fn all_scores(&self) -> Result<Vec<TaggedScore>> {
        let mut all = Vec::new();
        for c in self.cells.iter().filter(|c| !c.is_baseline()) {
            all.extend(load_scores(&self.layout, &c.intervention, &c.config.name)?);
        }
        Ok(all)
    }

    /// Regression per intervention; writes the regression reports.
    pub fn fit(&self) -> Result<Vec<InterventionAnalysis>> {
        let configs = self.cfg.resolved_configs()?;
        let analyses = run_analysis(&self.all_scores()?, &configs)?;
        report::write_regression_reports(&self.layout.reports_dir(), &analyses)?;
        Ok(analyses)
    }

    /// Re-read scores and write `report.md` with every table.
    pub fn report(&self) -> Result<(PathBuf, Vec<EerRow>, Vec<InterventionAnalysis>, Vec<SignCheck>)> {
        let eers = self.eval()?;
        let analyses = self.fit()?;
        let checks = sign_checks(&eers, &analyses);
        let p = report::write_summary(&self.layout.reports_dir(), Some(&eers), &analyses, &checks)?;
        Ok((p, eers, analyses, checks))
    }

    /// Perturb, train, score and tabulate EERs.
    pub fn run_experiment(&self) -> Result<(Vec<PerturbSummary>, Vec<TrainOutcome>, Vec<EerRow>)> {
        let perturbed = self.perturb()?;
        let trained = self.train()?;
        self.score()?;
        let eers = self.eval()?;
        Ok((perturbed, trained, eers))
    }

    /// Every stage end to end.
    pub fn run_all(&self) -> Result<RunSummary> {
        let (perturbed, trained, _) = self.run_experiment()?;
        let (report, eers, analyses, sign_checks) = self.report()?;
        Ok(RunSummary {
            perturbed,
            trained,
            eers,
            analyses,
            sign_checks,
            report,
        })
    }

    /// Store an external score file as the scores of one cell. The protocol
    /// defaults to the corpus's own.
    pub fn ingest(
        &self,
        scores: &Path,
        protocol: Option<(&Path, Subset)>,
        intervention: &str,
        config: &str,
    ) -> Result<usize> {
        let config = self
            .cfg
            .resolved_configs()?
            .into_iter()
            .find(|c| c.name == config)
            .map(Ok)
            .unwrap_or_else(|| InterventionConfig::resolve(config))?;
        let records = match protocol {
            Some((p, subset)) => parse_protocol(p, subset)
                .with_context(|| format!("reading protocol {}", p.display()))?,
            None => self.corpus.records.clone(),
        };
        let tagged = ingest_external_scores(scores, &records, &config, intervention)?;
        store_scores(&self.layout, &tagged, intervention, &config.name)?;
        Ok(tagged.len())
    }
}
