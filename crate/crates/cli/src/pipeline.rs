//! Corpus preparation, perturbation, GMM training, scoring and EER.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, bail, Context, Result};
use hansaudit_core::audio::{read_pcm, write_pcm, SeedContext};
use hansaudit_core::eval::{
    eer, read_scores, read_sidecar, write_scores, write_sidecar, ScoreMeta, TaggedScore,
};
use hansaudit_core::features::{lfcc, read_cache, write_cache, FeatureMatrix, LfccConfig};
use hansaudit_core::gmm::{score_frames, train_gmm, FramePool, GmmConfig, GmmModel};
use hansaudit_core::interventions::Intervener;
use hansaudit_core::protocol::{
    load_protocols, plan, ClassLabel, InterventionConfig, PerturbationPlan, Side, Subset,
    TrialRecord,
};
use hansaudit_core::synth::gen_corpus;
use rayon::prelude::*;

use crate::config::{CorpusSource, PipelineConfig};
use crate::layout::{wav_path, Layout, BASELINE};

/// The clean corpus every experiment starts from.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub audio_dir: PathBuf,
    pub protocols: Vec<(PathBuf, Subset)>,
    pub records: Vec<TrialRecord>,
}

impl Corpus {
    fn sorted(&self, side: Side, class: ClassLabel) -> Vec<&TrialRecord> {
        let mut v: Vec<&TrialRecord> = self
            .records
            .iter()
            .filter(|r| r.subset.side() == side && r.class == class)
            .collect();
        v.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        v
    }

    fn eval_sorted(&self) -> Vec<&TrialRecord> {
        let mut v: Vec<&TrialRecord> = self
            .records
            .iter()
            .filter(|r| r.subset.side() == Side::Test)
            .collect();
        v.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        v
    }
}

/// Run `f` on a pool of `jobs` threads (0: rayon's default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(f))
}

fn synthetic_stamp(cfg: &PipelineConfig) -> Result<Option<String>> {
    match &cfg.corpus {
        CorpusSource::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.seed = cfg.seed;
            Ok(Some(toml::to_string(&spec)?))
        }
        CorpusSource::Protocols { .. } => Ok(None),
    }
}

/// Generate the synthetic corpus (always) or check the external one.
pub fn synth_data(cfg: &PipelineConfig, layout: &Layout) -> Result<Corpus> {
    let CorpusSource::Synthetic(spec) = &cfg.corpus else {
        bail!("synth-data needs `corpus.source = \"synthetic\"`");
    };
    let mut spec = spec.clone();
    spec.seed = cfg.seed;
    let dir = layout.corpus_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    let c = gen_corpus(&spec, &dir).context("generating synthetic corpus")?;
    std::fs::write(dir.join("spec.toml"), synthetic_stamp(cfg)?.unwrap_or_default())?;
    Ok(Corpus {
        audio_dir: c.audio_dir,
        protocols: c.protocols,
        records: c.records,
    })
}

/// Load the corpus, generating the synthetic one if it is missing or was
/// produced from a different spec.
pub fn prepare_corpus(cfg: &PipelineConfig, layout: &Layout) -> Result<Corpus> {
    match &cfg.corpus {
        CorpusSource::Synthetic(_) => {
            let dir = layout.corpus_dir();
            let stamp = std::fs::read_to_string(dir.join("spec.toml")).ok();
            if stamp != synthetic_stamp(cfg)? {
                return synth_data(cfg, layout);
            }
            let protocols: Vec<(PathBuf, Subset)> = [Subset::Train, Subset::Dev, Subset::Eval]
                .into_iter()
                .map(|s| (dir.join("protocols").join(hansaudit_core::synth::protocol_file_name(s)), s))
                .filter(|(p, _)| p.is_file())
                .collect();
            let records = load_protocols(&protocols)?;
            Ok(Corpus {
                audio_dir: dir.join("wav"),
                protocols,
                records,
            })
        }
        CorpusSource::Protocols {
            audio_dir,
            protocols,
        } => {
            let files = protocols
                .iter()
                .map(|p| {
                    let subset = p
                        .subset
                        .or_else(|| Subset::infer_from_path(&p.path))
                        .ok_or_else(|| anyhow!("cannot tell the subset of {}", p.path.display()))?;
                    Ok((p.path.clone(), subset))
                })
                .collect::<Result<Vec<_>>>()?;
            let records = load_protocols(&files)?;
            for r in &records {
                let p = wav_path(audio_dir, &r.utt_id);
                if !p.is_file() {
                    bail!("audio for `{}` not found at {}", r.utt_id, p.display());
                }
            }
            Ok(Corpus {
                audio_dir: audio_dir.clone(),
                protocols: files,
                records,
            })
        }
    }
}

/// One experiment: an intervention under one configuration, or the
/// unperturbed baseline.
#[derive(Debug, Clone)]
pub struct ExperimentCell {
    pub intervention: String,
    pub config: InterventionConfig,
    /// `None` for the baseline.
    pub plan: Option<PerturbationPlan>,
}

impl ExperimentCell {
    pub fn is_baseline(&self) -> bool {
        self.plan.is_none()
    }

    pub fn intervened(&self, utt_id: &str) -> bool {
        self.plan
            .as_ref()
            .and_then(|p| p.entries.get(utt_id))
            .is_some_and(|e| e.applied.is_some())
    }

    fn side_untouched(&self, side: Side) -> bool {
        match &self.plan {
            None => true,
            Some(p) => p
                .entries
                .values()
                .all(|e| e.cell.side != side || e.applied.is_none()),
        }
    }

    fn label(&self) -> String {
        format!("{}/{}", self.intervention, self.config.name)
    }

    fn audio_path(&self, layout: &Layout, corpus: &Corpus, utt_id: &str) -> PathBuf {
        if self.is_baseline() {
            wav_path(&corpus.audio_dir, utt_id)
        } else {
            wav_path(&layout.cell_dir(&self.intervention, &self.config.name).join("wav"), utt_id)
        }
    }
}

/// The baseline followed by every (intervention, configuration) pair, in
/// config-file order.
pub fn experiment_cells(cfg: &PipelineConfig, corpus: &Corpus) -> Result<Vec<ExperimentCell>> {
    let mut cells = vec![ExperimentCell {
        intervention: BASELINE.to_string(),
        config: InterventionConfig::named("O")?,
        plan: None,
    }];
    for spec in cfg.intervention_specs()? {
        for config in cfg.resolved_configs()? {
            let p = plan(&corpus.records, &config, &spec, cfg.seed)?;
            cells.push(ExperimentCell {
                intervention: spec.kind.name().to_string(),
                config,
                plan: Some(p),
            });
        }
    }
    Ok(cells)
}

fn link_or_copy(src: &Path, dst: &Path) -> Result<()> {
    if dst.exists() {
        std::fs::remove_file(dst)?;
    }
    if std::fs::hard_link(src, dst).is_err() {
        std::fs::copy(src, dst)
            .with_context(|| format!("copying {} to {}", src.display(), dst.display()))?;
    }
    Ok(())
}

/// Counts of a materialized dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbSummary {
    pub intervention: String,
    pub config: String,
    pub files: usize,
    pub intervened: usize,
}

/// Materialize one cell: perturbed files are written, untouched files are
/// hard-linked (or copied), protocols are copied and the manifest written.
pub fn perturb_cell(
    cell: &ExperimentCell,
    corpus: &Corpus,
    layout: &Layout,
    intervener: &Intervener,
) -> Result<PerturbSummary> {
    let plan = cell
        .plan
        .as_ref()
        .ok_or_else(|| anyhow!("the baseline is not materialized"))?;
    let dir = layout.cell_dir(&cell.intervention, &cell.config.name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    let wav_dir = dir.join("wav");
    let proto_dir = dir.join("protocols");
    std::fs::create_dir_all(&wav_dir)?;
    std::fs::create_dir_all(&proto_dir)?;

    let entries: Vec<(&String, bool)> = plan
        .entries
        .iter()
        .map(|(id, e)| (id, e.applied.is_some()))
        .collect();
    entries.par_iter().try_for_each(|(id, applied)| -> Result<()> {
        let src = wav_path(&corpus.audio_dir, id);
        let dst = wav_path(&wav_dir, id);
        if !applied {
            return link_or_copy(&src, &dst);
        }
        let w = read_pcm(&src)?;
        let (out, record) = intervener
            .apply(&w, &plan.spec, &plan.seed_context(id))
            .with_context(|| format!("{}: perturbing {id}", cell.label()))?;
        debug_assert_eq!(Some(record.z), plan.entries[*id].applied.as_ref().map(|a| a.z));
        write_pcm(&out, &dst)?;
        Ok(())
    })?;
    for (p, _) in &corpus.protocols {
        let name = p.file_name().ok_or_else(|| anyhow!("bad protocol path {}", p.display()))?;
        std::fs::copy(p, proto_dir.join(name))?;
    }
    let f = std::fs::File::create(layout.manifest_path(&cell.intervention, &cell.config.name))?;
    plan.write_manifest(std::io::BufWriter::new(f))?;
    Ok(PerturbSummary {
        intervention: cell.intervention.clone(),
        config: cell.config.name.clone(),
        files: plan.entries.len(),
        intervened: entries.iter().filter(|e| e.1).count(),
    })
}

pub fn run_perturb(
    cfg: &PipelineConfig,
    layout: &Layout,
    corpus: &Corpus,
    cells: &[ExperimentCell],
) -> Result<Vec<PerturbSummary>> {
    let intervener = cfg.processing.intervener();
    cells
        .iter()
        .filter(|c| !c.is_baseline())
        .map(|c| perturb_cell(c, corpus, layout, &intervener))
        .collect()
}

/// LFCCs of the clean corpus, cached on disk and in memory. Perturbed files
/// are always extracted afresh.
pub struct FeatureStore {
    cfg: LfccConfig,
    fingerprint: u64,
    cache_dir: PathBuf,
    memory: Mutex<HashMap<String, Arc<FeatureMatrix>>>,
}

impl FeatureStore {
    pub fn new(cfg: &LfccConfig, cache_dir: PathBuf) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(&cache_dir)?;
        Ok(FeatureStore {
            cfg: cfg.clone(),
            fingerprint: cfg.fingerprint(),
            cache_dir,
            memory: Mutex::new(HashMap::new()),
        })
    }

    pub fn extract(&self, path: &Path) -> Result<FeatureMatrix> {
        let w = read_pcm(path)?;
        Ok(lfcc(&w, &self.cfg).with_context(|| format!("features of {}", path.display()))?)
    }

    pub fn clean(&self, corpus: &Corpus, utt_id: &str) -> Result<Arc<FeatureMatrix>> {
        if let Some(m) = self.memory.lock().unwrap().get(utt_id) {
            return Ok(m.clone());
        }
        let cache = self.cache_dir.join(format!("{utt_id}.fc"));
        let m = match read_cache(&cache, self.fingerprint)? {
            Some(m) => m,
            None => {
                let m = self.extract(&wav_path(&corpus.audio_dir, utt_id))?;
                write_cache(&m, &cache)?;
                m
            }
        };
        let m = Arc::new(m);
        self.memory.lock().unwrap().insert(utt_id.to_string(), m.clone());
        Ok(m)
    }

    fn for_cell(
        &self,
        cell: &ExperimentCell,
        layout: &Layout,
        corpus: &Corpus,
        utt_id: &str,
    ) -> Result<Arc<FeatureMatrix>> {
        if cell.intervened(utt_id) {
            Ok(Arc::new(self.extract(&cell.audio_path(layout, corpus, utt_id))?))
        } else {
            self.clean(corpus, utt_id)
        }
    }
}

fn gmm_seed(master: u64, class: ClassLabel) -> SeedContext {
    // independent of the cell: identical training data gives identical models
    SeedContext::new(master, "gmm", class.key(), "")
}

/// Per-iteration average log-likelihood of both class models.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub intervention: String,
    pub config: String,
    pub bona_trace: Vec<f64>,
    pub spoof_trace: Vec<f64>,
    /// Models were copied from the baseline because no training file was
    /// perturbed.
    pub reused_baseline: bool,
}

fn model_path(dir: &Path, class: ClassLabel) -> PathBuf {
    dir.join(format!("{}.gmm", class.key()))
}

fn trace_path(dir: &Path, class: ClassLabel) -> PathBuf {
    dir.join(format!("{}.trace.csv", class.key()))
}

fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut s = String::from("iteration,avg_log_likelihood\n");
    for (i, v) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{v:?}\n"));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .map(|l| {
            let v = l.split(',').nth(1).ok_or_else(|| anyhow!("bad trace line `{l}`"))?;
            Ok(v.parse::<f64>()?)
        })
        .collect()
}

pub fn train_cell(
    cell: &ExperimentCell,
    corpus: &Corpus,
    layout: &Layout,
    store: &FeatureStore,
    gmm: &GmmConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let dir = layout.model_dir(&cell.intervention, &cell.config.name);
    std::fs::create_dir_all(&dir)?;
    let base_dir = layout.model_dir(BASELINE, "O");
    let reuse = !cell.is_baseline() && cell.side_untouched(Side::Train);
    let mut traces = Vec::new();
    for class in [ClassLabel::Bonafide, ClassLabel::Spoof] {
        if reuse {
            std::fs::copy(model_path(&base_dir, class), model_path(&dir, class))
                .with_context(|| format!("{}: baseline models missing", cell.label()))?;
            std::fs::copy(trace_path(&base_dir, class), trace_path(&dir, class))?;
            traces.push(read_trace(&trace_path(&dir, class))?);
            continue;
        }
        let records = corpus.sorted(Side::Train, class);
        if records.is_empty() {
            bail!("{}: no {} training trials", cell.label(), class.key());
        }
        let mats = records
            .par_iter()
            .map(|r| store.for_cell(cell, layout, corpus, &r.utt_id))
            .collect::<Result<Vec<_>>>()?;
        let mut pool = FramePool::new(mats[0].dim());
        for m in &mats {
            pool.push_matrix(m)?;
        }
        drop(mats);
        let trained = train_gmm(&pool, gmm, &mut gmm_seed(seed, class).rng())
            .with_context(|| format!("{}: training the {} model", cell.label(), class.key()))?;
        trained.model.save(model_path(&dir, class))?;
        write_trace(&trace_path(&dir, class), &trained.log_likelihoods)?;
        traces.push(trained.log_likelihoods);
    }
    let spoof_trace = traces.pop().unwrap();
    let bona_trace = traces.pop().unwrap();
    Ok(TrainOutcome {
        intervention: cell.intervention.clone(),
        config: cell.config.name.clone(),
        bona_trace,
        spoof_trace,
        reused_baseline: reuse,
    })
}


/// Train the baseline first (other cells may reuse it), then the rest in
/// parallel.
pub fn run_train(
    cfg: &PipelineConfig,
    layout: &Layout,
    corpus: &Corpus,
    cells: &[ExperimentCell],
    store: &FeatureStore,
) -> Result<Vec<TrainOutcome>> {
    let (base, rest): (Vec<&ExperimentCell>, Vec<&ExperimentCell>) =
        cells.iter().partition(|c| c.is_baseline());
    let mut out = Vec::new();
    for c in base {
        out.push(train_cell(c, corpus, layout, store, &cfg.cm.gmm, cfg.seed)?);
    }
    let rest = rest
        .par_iter()
        .map(|c| train_cell(c, corpus, layout, store, &cfg.cm.gmm, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    out.extend(rest);
    Ok(out)
}

/// Score the evaluation side of a cell with its trained models.
pub fn score_cell(
    cell: &ExperimentCell,
    corpus: &Corpus,
    layout: &Layout,
    store: &FeatureStore,
) -> Result<Vec<TaggedScore>> {
    let mdir = layout.model_dir(&cell.intervention, &cell.config.name);
    let load = |class| {
        GmmModel::load(model_path(&mdir, class))
            .with_context(|| format!("{}: loading models (run `train` first)", cell.label()))
    };
    let (bona, spoof) = (load(ClassLabel::Bonafide)?, load(ClassLabel::Spoof)?);
    let records = corpus.eval_sorted();
    if records.is_empty() {
        bail!("no evaluation trials in the corpus");
    }
    let scores = records
        .par_iter()
        .map(|r| {
            let m = store.for_cell(cell, layout, corpus, &r.utt_id)?;
            let s = score_frames(&m, &bona, &spoof)
                .with_context(|| format!("{}: scoring {}", cell.label(), r.utt_id))?;
            Ok(TaggedScore {
                utt_id: r.utt_id.clone(),
                score: s,
                class: r.class,
                config: cell.config.name.clone(),
                intervention: cell.intervention.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    store_scores(layout, &scores, &cell.intervention, &cell.config.name)?;
    Ok(scores)
}

pub fn run_score(
    layout: &Layout,
    corpus: &Corpus,
    cells: &[ExperimentCell],
    store: &FeatureStore,
) -> Result<Vec<Vec<TaggedScore>>> {
    cells
        .par_iter()
        .map(|c| score_cell(c, corpus, layout, store))
        .collect()
}

/// Write a cell's score file and its label sidecar.
pub fn store_scores(
    layout: &Layout,
    scores: &[TaggedScore],
    intervention: &str,
    config: &str,
) -> Result<()> {
    std::fs::create_dir_all(layout.score_dir(intervention, config))?;
    write_scores(
        scores.iter().map(|s| (s.utt_id.as_str(), s.score)),
        layout.scores_path(intervention, config),
    )?;
    let meta: Vec<ScoreMeta> = scores
        .iter()
        .map(|s| ScoreMeta {
            utt_id: s.utt_id.clone(),
            y_cls: s.class.y(),
            config: s.config.clone(),
            intervention: s.intervention.clone(),
        })
        .collect();
    write_sidecar(&meta, layout.sidecar_path(intervention, config))?;
    Ok(())
}

/// Read back a cell's scores, joined with the sidecar labels.
pub fn load_scores(layout: &Layout, intervention: &str, config: &str) -> Result<Vec<TaggedScore>> {
    let path = layout.scores_path(intervention, config);
    let scores = read_scores(&path)
        .with_context(|| format!("{intervention}/{config}: no scores (run `score` or `ingest-scores`)"))?;
    let meta = read_sidecar(layout.sidecar_path(intervention, config))?;
    let by_id: HashMap<&str, &ScoreMeta> = meta.iter().map(|m| (m.utt_id.as_str(), m)).collect();
    if by_id.len() != scores.len() {
        bail!("{}: score file and sidecar disagree in length", path.display());
    }
    scores
        .into_iter()
        .map(|(id, score)| {
            let m = by_id
                .get(id.as_str())
                .ok_or_else(|| anyhow!("{}: `{id}` missing from the sidecar", path.display()))?;
            Ok(TaggedScore {
                class: ClassLabel::from_y(m.y_cls)?,
                config: m.config.clone(),
                intervention: m.intervention.clone(),
                utt_id: id,
                score,
            })
        })
        .collect()
}

/// One row of the EER table.
#[derive(Debug, Clone, PartialEq)]
pub struct EerRow {
    pub intervention: String,
    pub config: String,
    pub indicator: String,
    /// Fraction in `[0, 1]`.
    pub eer: f64,
    pub n_bona: usize,
    pub n_spoof: usize,
}

pub fn eer_row(scores: &[TaggedScore], intervention: &str, config: &InterventionConfig) -> Result<EerRow> {
    let labeled: Vec<_> = scores.iter().map(|s| s.labeled()).collect();
    let e = eer(&labeled).with_context(|| format!("{intervention}/{}: EER", config.name))?;
    let n_bona = scores.iter().filter(|s| s.class == ClassLabel::Bonafide).count();
    Ok(EerRow {
        intervention: intervention.to_string(),
        config: config.name.clone(),
        indicator: config.indicator(),
        eer: e,
        n_bona,
        n_spoof: scores.len() - n_bona,
    })
}

pub fn run_eval(layout: &Layout, cells: &[ExperimentCell]) -> Result<Vec<EerRow>> {
    cells
        .iter()
        .map(|c| {
            let s = load_scores(layout, &c.intervention, &c.config.name)?;
            eer_row(&s, &c.intervention, &c.config)
        })
        .collect()
}
