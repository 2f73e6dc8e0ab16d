//! Trial protocol model, intervention configurations and perturbation plans.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio::SeedContext;
use crate::error::{Error, Result};
use crate::interventions::{sample_z, AppliedIntervention, InterventionSpec};

/// Class label; the numeric value is `y_cls`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Spoof = 0,
    Bonafide = 1,
}

impl ClassLabel {
    pub fn y(self) -> u8 {
        self as u8
    }

    pub fn from_y(y: u8) -> Result<Self> {
        match y {
            0 => Ok(ClassLabel::Spoof),
            1 => Ok(ClassLabel::Bonafide),
            other => Err(Error::InvalidParameter(format!("class label {other}"))),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            ClassLabel::Spoof => "spoof",
            ClassLabel::Bonafide => "bonafide",
        }
    }
}

/// Which protocol file a trial came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Dev,
    Eval,
}

impl Subset {
    /// Development data gets the training-side treatment.
    pub fn side(self) -> Side {
        match self {
            Subset::Train | Subset::Dev => Side::Train,
            Subset::Eval => Side::Test,
        }
    }

    /// Guess the subset from an ASVspoof-style protocol file name
    /// (`*.train.*`, `*.dev.*`, `*.eval.*`).
    pub fn infer_from_path(path: &Path) -> Option<Subset> {
        let name = path.file_name()?.to_string_lossy().to_lowercase();
        let tokens: Vec<&str> = name.split(['.', '_', '-']).collect();
        if tokens.iter().any(|t| *t == "train" || *t == "trn") {
            Some(Subset::Train)
        } else if tokens.contains(&"dev") {
            Some(Subset::Dev)
        } else if tokens.contains(&"eval") {
            Some(Subset::Eval)
        } else {
            None
        }
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "dev" => Ok(Subset::Dev),
            "eval" => Ok(Subset::Eval),
            other => Err(Error::InvalidParameter(format!("unknown subset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

/// One of the four (side, class) cells of a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub side: Side,
    pub class: ClassLabel,
}

impl Cell {
    /// Cells in indicator order: train-spoof, train-bona, test-spoof, test-bona.
    pub const ALL: [Cell; 4] = [
        Cell { side: Side::Train, class: ClassLabel::Spoof },
        Cell { side: Side::Train, class: ClassLabel::Bonafide },
        Cell { side: Side::Test, class: ClassLabel::Spoof },
        Cell { side: Side::Test, class: ClassLabel::Bonafide },
    ];

    pub fn index(self) -> usize {
        let side = match self.side {
            Side::Train => 0,
            Side::Test => 2,
        };
        side + self.class.y() as usize
    }

    pub fn name(self) -> &'static str {
        ["train-spoof", "train-bona", "test-spoof", "test-bona"][self.index()]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub utt_id: String,
    pub speaker_id: Option<String>,
    pub attack_id: Option<String>,
    pub class: ClassLabel,
    pub subset: Subset,
}

impl TrialRecord {
    pub fn cell(&self) -> Cell {
        Cell {
            side: self.subset.side(),
            class: self.class,
        }
    }
}

/// `floor(p * n)`, robust to the rounding of `p * n` just below an integer.
pub fn floor_count(p: f64, n: usize) -> usize {
    ((p * n as f64 + 1e-9).floor().max(0.0) as usize).min(n)
}

/// Per-cell intervention probabilities, in the order
/// `(train spoof, train bona, test spoof, test bona)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionConfig {
    pub name: String,
    pub probs: [f64; 4],
}

const NAMED: [(&str, [f64; 4]); 5] = [
    ("O", [0.0, 0.0, 0.0, 0.0]),
    ("A", [0.0, 1.0, 0.0, 1.0]),
    ("B", [1.0, 0.0, 1.0, 0.0]),
    ("C", [0.0, 1.0, 1.0, 0.0]),
    ("D", [1.0, 0.0, 0.0, 1.0]),
];

impl InterventionConfig {
    pub fn named(name: &str) -> Result<Self> {
        NAMED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, probs)| InterventionConfig {
                name: n.to_string(),
                probs: *probs,
            })
            .ok_or_else(|| Error::InvalidParameter(format!("unknown configuration `{name}`")))
    }

    /// The five named configurations O, A, B, C, D.
    pub fn all_named() -> Vec<Self> {
        NAMED
            .iter()
            .map(|(n, p)| InterventionConfig {
                name: n.to_string(),
                probs: *p,
            })
            .collect()
    }

    pub fn custom(name: impl Into<String>, probs: [f64; 4]) -> Result<Self> {
        let name = name.into();
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidParameter(format!(
                "configuration `{name}`: probability {p} outside [0, 1]"
            )));
        }
        if let Some((named, _)) = NAMED.iter().find(|(n, _)| *n == name) {
            let cfg = InterventionConfig::named(named)?;
            if cfg.probs != probs {
                return Err(Error::InvalidParameter(format!(
                    "configuration name `{name}` is reserved for {}",
                    cfg.indicator()
                )));
            }
        }
        Ok(InterventionConfig { name, probs })
    }

    /// Parse a four-value indicator such as `"0 1 0 1"`. Patterns matching a
    /// named configuration take its name.
    pub fn from_indicator(s: &str) -> Result<Self> {
        let vals = s
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("indicator value `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let probs: [f64; 4] = vals.try_into().map_err(|v: Vec<f64>| {
            Error::InvalidParameter(format!("indicator needs 4 values, got {}", v.len()))
        })?;
        match NAMED.iter().find(|(_, p)| *p == probs) {
            Some((n, _)) => InterventionConfig::named(n),
            None => InterventionConfig::custom(s.split_whitespace().collect::<Vec<_>>().join("_"), probs),
        }
    }

    /// Resolve either a configuration name or an indicator string.
    pub fn resolve(s: &str) -> Result<Self> {
        InterventionConfig::named(s).or_else(|_| InterventionConfig::from_indicator(s))
    }

    pub fn indicator(&self) -> String {
        self.probs
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn prob(&self, cell: Cell) -> f64 {
        self.probs[cell.index()]
    }

    /// No file is ever perturbed.
    pub fn is_baseline(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0)
    }

    /// `(delta_bona, delta_spf)` for a test trial of `class`.
    pub fn deltas_for(&self, class: ClassLabel) -> (f64, f64) {
        let p_test = self.prob(Cell {
            side: Side::Test,
            class,
        });
        let p_train_bona = self.probs[1];
        let p_train_spf = self.probs[0];
        ((p_test - p_train_bona).abs(), (p_test - p_train_spf).abs())
    }
}

/// Regression covariates of an evaluation trial.
pub fn deltas(record: &TrialRecord, config: &InterventionConfig) -> Result<(f64, f64)> {
    if record.subset != Subset::Eval {
        return Err(Error::NotEvalRecord(record.utt_id.clone()));
    }
    Ok(config.deltas_for(record.class))
}

/// Parse an ASVspoof-style protocol file: whitespace-separated
/// `speaker_id utt_id - attack_id key` with `key` in {`bonafide`, `spoof`}.
/// A `-` speaker or attack field means "absent".
pub fn parse_protocol(path: impl AsRef<Path>, subset: Subset) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_protocol_str(&text, &path.display().to_string(), subset)
}

pub fn parse_protocol_str(text: &str, source: &str, subset: Subset) -> Result<Vec<TrialRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            reason,
        };
        if fields.len() != 5 {
            return Err(err(format!(
                "expected 5 fields (speaker utt - attack key), found {}",
                fields.len()
            )));
        }
        let class = match fields[4] {
            "bonafide" => ClassLabel::Bonafide,
            "spoof" => ClassLabel::Spoof,
            other => return Err(err(format!("key `{other}` is neither bonafide nor spoof"))),
        };
        let opt = |f: &str| (f != "-").then(|| f.to_string());
        let utt_id = fields[1].to_string();
        if !seen.insert(utt_id.clone()) {
            return Err(Error::DuplicateId(utt_id));
        }
        out.push(TrialRecord {
            utt_id,
            speaker_id: opt(fields[0]),
            attack_id: opt(fields[3]),
            class,
            subset,
        });
    }
    Ok(out)
}

/// Load several protocol files and check ids are unique across all of them.
pub fn load_protocols(files: &[(impl AsRef<Path>, Subset)]) -> Result<Vec<TrialRecord>> {
    let mut seen = HashSet::new();
    let mut all = Vec::new();
    for (path, subset) in files {
        for r in parse_protocol(path, *subset)? {
            if !seen.insert(r.utt_id.clone()) {
                return Err(Error::DuplicateId(r.utt_id));
            }
            all.push(r);
        }
    }
    Ok(all)
}

pub fn write_protocol<'a>(
    records: impl IntoIterator<Item = &'a TrialRecord>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{} {} - {} {}\n",
            r.speaker_id.as_deref().unwrap_or("-"),
            r.utt_id,
            r.attack_id.as_deref().unwrap_or("-"),
            r.class.key()
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Planned treatment of one file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    pub cell: Cell,
    pub applied: Option<AppliedIntervention>,
}

/// Which files of a corpus a configuration perturbs, and with which `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationPlan {
    pub config: InterventionConfig,
    pub spec: InterventionSpec,
    pub master_seed: u64,
    pub entries: BTreeMap<String, PlanEntry>,
}

/// Seed context of the per-cell file shuffle. The utterance slot carries
/// `cell:<cell name>`.
pub fn cell_seed_context(
    master_seed: u64,
    cell: Cell,
    spec: &InterventionSpec,
    config: &InterventionConfig,
) -> SeedContext {
    SeedContext::new(
        master_seed,
        format!("cell:{}", cell.name()),
        spec.kind.name(),
        config.name.clone(),
    )
}

/// Select `floor(p * N)` files per cell, uniformly without replacement, and
/// draw each selected file's control value.
pub fn plan(
    records: &[TrialRecord],
    config: &InterventionConfig,
    spec: &InterventionSpec,
    master_seed: u64,
) -> Result<PerturbationPlan> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("empty protocol".into()));
    }
    spec.validate()?;
    let mut by_cell: BTreeMap<Cell, Vec<&str>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.utt_id.as_str()) {
            return Err(Error::DuplicateId(r.utt_id.clone()));
        }
        by_cell.entry(r.cell()).or_default().push(&r.utt_id);
    }
    let mut entries = BTreeMap::new();
    for (cell, mut ids) in by_cell {
        ids.sort_unstable();
        let take = floor_count(config.prob(cell), ids.len());
        let mut order = ids.clone();
        if take > 0 && take < ids.len() {
            order.shuffle(&mut cell_seed_context(master_seed, cell, spec, config).rng());
        }
        let chosen: HashSet<&str> = order[..take].iter().copied().collect();
        for id in ids {
            let applied = chosen.contains(id).then(|| {
                let ctx = SeedContext::new(master_seed, id, spec.kind.name(), config.name.clone());
                AppliedIntervention {
                    utt_id: id.to_string(),
                    kind: spec.kind,
                    z: sample_z(spec, &ctx),
                    config: config.name.clone(),
                }
            });
            entries.insert(id.to_string(), PlanEntry { cell, applied });
        }
    }
    Ok(PerturbationPlan {
        config: config.clone(),
        spec: spec.clone(),
        master_seed,
        entries,
    })
}

impl PerturbationPlan {
    pub fn planned_count(&self, cell: Cell) -> usize {
        self.entries
            .values()
            .filter(|e| e.cell == cell && e.applied.is_some())
            .count()
    }

    pub fn cell_size(&self, cell: Cell) -> usize {
        self.entries.values().filter(|e| e.cell == cell).count()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.values().all(|e| e.applied.is_none())
    }

    pub fn seed_context(&self, utt_id: &str) -> SeedContext {
        SeedContext::new(
            self.master_seed,
            utt_id,
            self.spec.kind.name(),
            self.config.name.clone(),
        )
    }

    /// Manifest CSV with header `utt_id,cell,intervened,kind,z,config`; one
    /// row per file in utt_id order. Untouched files leave `kind` and `z`
    /// empty.
    pub fn write_manifest<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::io("manifest", std::io::Error::other(e));
        wr.write_record(["utt_id", "cell", "intervened", "kind", "z", "config"])
            .map_err(io)?;
        for (id, e) in &self.entries {
            let (flag, kind, z) = match &e.applied {
                Some(a) => ("1", a.kind.name().to_string(), a.z.to_string()),
                None => ("0", String::new(), String::new()),
            };
            wr.write_record([id.as_str(), e.cell.name(), flag, &kind, &z, &self.config.name])
                .map_err(io)?;
        }
        wr.flush().map_err(|e| Error::io("manifest", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interventions::{InterventionKind, ParamDist};
    use proptest::prelude::*;

    fn rec(id: &str, class: ClassLabel, subset: Subset) -> TrialRecord {
        TrialRecord {
            utt_id: id.into(),
            speaker_id: None,
            attack_id: None,
            class,
            subset,
        }
    }

    fn corpus(per_cell: usize) -> Vec<TrialRecord> {
        let mut v = Vec::new();
        for (subset, tag) in [(Subset::Train, "T"), (Subset::Eval, "E")] {
            for class in [ClassLabel::Spoof, ClassLabel::Bonafide] {
                for i in 0..per_cell {
                    v.push(rec(&format!("{tag}_{}_{i:04}", class.key()), class, subset));
                }
            }
        }
        v
    }

    #[test]
    fn parses_asvspoof_line() {
        let recs = parse_protocol_str(
            "LA_0079 LA_T_1138215 - - bonafide\nLA_0080 LA_T_1271820 - A01 spoof\n",
            "train.txt",
            Subset::Train,
        )
        .unwrap();
        assert_eq!(recs[0].utt_id, "LA_T_1138215");
        assert_eq!(recs[0].class.y(), 1);
        assert_eq!(recs[0].cell().side, Side::Train);
        assert_eq!(recs[0].speaker_id.as_deref(), Some("LA_0079"));
        assert_eq!(recs[0].attack_id, None);
        assert_eq!(recs[1].class.y(), 0);
        assert_eq!(recs[1].attack_id.as_deref(), Some("A01"));
    }

    #[test]
    fn four_field_line_names_line() {
        let err = parse_protocol_str("A B - - spoof\nLA_1 X - bonafide\n", "p.txt", Subset::Eval)
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_key_and_duplicates_rejected() {
        assert!(parse_protocol_str("A B - - maybe\n", "p", Subset::Eval).is_err());
        assert!(matches!(
            parse_protocol_str("A B - - spoof\nA B - - spoof\n", "p", Subset::Eval),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn dev_goes_to_train_side() {
        let r = rec("d", ClassLabel::Spoof, Subset::Dev);
        assert_eq!(r.cell().side, Side::Train);
    }

    #[test]
    fn subset_from_file_name() {
        let p = |s: &str| Subset::infer_from_path(Path::new(s));
        assert_eq!(p("ASVspoof2019.LA.cm.train.trn.txt"), Some(Subset::Train));
        assert_eq!(p("ASVspoof2019.LA.cm.dev.trl.txt"), Some(Subset::Dev));
        assert_eq!(p("ASVspoof2019.LA.cm.eval.trl.txt"), Some(Subset::Eval));
        assert_eq!(p("protocol.txt"), None);
    }

    #[test]
    fn named_configs_bind_table_rows() {
        assert_eq!(InterventionConfig::named("A").unwrap().probs, [0.0, 1.0, 0.0, 1.0]);
        assert_eq!(InterventionConfig::named("C").unwrap().probs, [0.0, 1.0, 1.0, 0.0]);
        for cfg in InterventionConfig::all_named() {
            let back = InterventionConfig::from_indicator(&cfg.indicator()).unwrap();
            assert_eq!(back, cfg);
        }
        assert_eq!(InterventionConfig::resolve("0 1 0 1").unwrap().name, "A");
        assert!(InterventionConfig::custom("A", [1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(InterventionConfig::custom("X", [0.0, 2.0, 0.0, 0.0]).is_err());
        assert!(InterventionConfig::from_indicator("0 1 0").is_err());
    }

    #[test]
    fn deltas_table_cases() {
        let a = InterventionConfig::named("A").unwrap();
        let bona = rec("b", ClassLabel::Bonafide, Subset::Eval);
        let spoof = rec("s", ClassLabel::Spoof, Subset::Eval);
        assert_eq!(deltas(&bona, &a).unwrap(), (0.0, 1.0));
        assert_eq!(deltas(&spoof, &a).unwrap(), (1.0, 0.0));
        let o = InterventionConfig::named("O").unwrap();
        assert_eq!(deltas(&bona, &o).unwrap(), (0.0, 0.0));
        assert_eq!(deltas(&spoof, &o).unwrap(), (0.0, 0.0));
        let train = rec("t", ClassLabel::Spoof, Subset::Train);
        assert!(matches!(deltas(&train, &a), Err(Error::NotEvalRecord(_))));
    }

    #[test]
    fn own_class_delta_pattern() {
        for cfg in InterventionConfig::all_named().into_iter().skip(1) {
            for class in [ClassLabel::Spoof, ClassLabel::Bonafide] {
                let (db, ds) = cfg.deltas_for(class);
                let own = if class == ClassLabel::Bonafide { db } else { ds };
                let expect = if cfg.name == "A" || cfg.name == "B" { 0.0 } else { 1.0 };
                assert_eq!(own, expect, "{} {:?}", cfg.name, class);
            }
        }
    }

    #[test]
    fn config_o_plans_nothing() {
        let spec = InterventionSpec::with_default_dist(InterventionKind::WhiteNoise);
        let p = plan(&corpus(10), &InterventionConfig::named("O").unwrap(), &spec, 1).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.entries.len(), 40);
    }

    #[test]
    fn config_a_plans_all_bona() {
        let spec = InterventionSpec::with_default_dist(InterventionKind::MuLaw);
        let recs = corpus(100);
        let p = plan(&recs, &InterventionConfig::named("A").unwrap(), &spec, 1).unwrap();
        for cell in Cell::ALL {
            let expect = if cell.class == ClassLabel::Bonafide { 100 } else { 0 };
            assert_eq!(p.planned_count(cell), expect, "{cell}");
        }
    }

    #[test]
    fn fractional_probability_floors() {
        let spec = InterventionSpec::with_default_dist(InterventionKind::WhiteNoise);
        let recs: Vec<_> = (0..11)
            .map(|i| rec(&format!("u{i}"), ClassLabel::Spoof, Subset::Train))
            .collect();
        let cfg = InterventionConfig::custom("half", [0.5, 0.0, 0.0, 0.0]).unwrap();
        let p = plan(&recs, &cfg, &spec, 9).unwrap();
        assert_eq!(p.planned_count(Cell::ALL[0]), 5);
    }

    #[test]
    fn manifest_has_one_row_per_file() {
        let spec = InterventionSpec::with_default_dist(InterventionKind::WhiteNoise);
        let p = plan(&corpus(3), &InterventionConfig::named("B").unwrap(), &spec, 1).unwrap();
        let mut buf = Vec::new();
        p.write_manifest(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 12);
        assert!(text.starts_with("utt_id,cell,intervened,kind,z,config\n"));
    }

    #[test]
    fn floor_count_edges() {
        assert_eq!(floor_count(0.29, 100), 29);
        assert_eq!(floor_count(1.0, 7), 7);
        assert_eq!(floor_count(0.0, 7), 0);
        assert_eq!(floor_count(0.5, 11), 5);
    }

    proptest! {
        #[test]
        fn plan_sizes_exact_and_order_free(
            probs in proptest::array::uniform4(0.0f64..=1.0),
            n in 1usize..30,
            seed in any::<u64>(),
        ) {
            let cfg = InterventionConfig::custom("x", probs).unwrap();
            let spec = InterventionSpec::new(
                InterventionKind::WhiteNoise,
                ParamDist::Uniform { lo: 0.0, hi: 30.0 },
            ).unwrap();
            let recs = corpus(n);
            let p = plan(&recs, &cfg, &spec, seed).unwrap();
            for cell in Cell::ALL {
                prop_assert_eq!(p.planned_count(cell), floor_count(cfg.prob(cell), n));
            }
            let mut rev = recs.clone();
            rev.reverse();
            prop_assert_eq!(plan(&rev, &cfg, &spec, seed).unwrap(), p);
        }
    }
}
