//! Equal error rate, score normalization and score-file formats.
//!
//! EER convention: thresholds sweep the distinct score values plus `+inf`.
//! At threshold `t` the miss rate is the fraction of bona fide scores `< t`
//! and the false-alarm rate the fraction of spoof scores `>= t`. The EER is
//! read where `miss - fa` changes sign, interpolating linearly between the
//! two adjacent operating points. Scores of both classes tied at one value
//! move together, so ties never get split.
//!
//! Z-normalization uses the population standard deviation (denominator `N`).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::ClassLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub utt_id: String,
    pub score: f64,
    pub class: ClassLabel,
}

/// `(threshold, miss, false_alarm)` for every threshold of the sweep.
pub fn operating_points(scores: &[LabeledScore]) -> Result<Vec<(f64, f64, f64)>> {
    let n_bona = scores.iter().filter(|s| s.class == ClassLabel::Bonafide).count();
    let n_spoof = scores.len() - n_bona;
    if n_bona == 0 || n_spoof == 0 {
        return Err(Error::SingleClass {
            bona: n_bona,
            spoof: n_spoof,
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "score of `{}` is not finite",
            s.utt_id
        )));
    }
    let mut sorted: Vec<(f64, ClassLabel)> = scores.iter().map(|s| (s.score, s.class)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nb, ns) = (n_bona as f64, n_spoof as f64);
    let mut points = Vec::new();
    let (mut bona_below, mut spoof_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        points.push((t, bona_below as f64 / nb, (n_spoof - spoof_below) as f64 / ns));
        while i < sorted.len() && sorted[i].0 == t {
            match sorted[i].1 {
                ClassLabel::Bonafide => bona_below += 1,
                ClassLabel::Spoof => spoof_below += 1,
            }
            i += 1;
        }
    }
    points.push((f64::INFINITY, 1.0, 0.0));
    Ok(points)
}

/// Equal error rate in `[0, 1]`.
pub fn eer(scores: &[LabeledScore]) -> Result<f64> {
    let points = operating_points(scores)?;
    Ok(crossing(points.iter().map(|&(_, m, f)| (m, f))))
}

/// Interpolated crossing of an operating-point sequence whose `miss - fa`
/// starts negative and ends positive.
fn crossing(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut prev: Option<(f64, f64)> = None;
    for (m, f) in points {
        let diff = m - f;
        if diff == 0.0 {
            return m;
        }
        if diff > 0.0 {
            let (m0, f0) = prev.expect("first point has miss 0 and fa 1");
            let d0 = m0 - f0;
            let t = -d0 / (diff - d0);
            return m0 + t * (m - m0);
        }
        prev = Some((m, f));
    }
    unreachable!("last point has miss 1 and fa 0")
}

/// Z-normalize one group of scores.
pub fn znorm(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::DegenerateGroup(
            String::new(),
            format!("{} score(s), need at least 2", values.len()),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateGroup(String::new(), "zero variance".into()));
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

/// A score tagged with the experiment cell it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedScore {
    pub utt_id: String,
    pub score: f64,
    pub class: ClassLabel,
    pub config: String,
    pub intervention: String,
}

impl TaggedScore {
    pub fn labeled(&self) -> LabeledScore {
        LabeledScore {
            utt_id: self.utt_id.clone(),
            score: self.score,
            class: self.class,
        }
    }
}

/// Z-normalize separately within every `(intervention, config)` group,
/// pooling both classes. Order of the input is preserved.
pub fn znorm_groups(scores: &[TaggedScore]) -> Result<Vec<TaggedScore>> {
    let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, s) in scores.iter().enumerate() {
        groups
            .entry((s.intervention.as_str(), s.config.as_str()))
            .or_default()
            .push(i);
    }
    let mut out = scores.to_vec();
    for ((intervention, config), idx) in groups {
        let vals: Vec<f64> = idx.iter().map(|&i| scores[i].score).collect();
        let z = znorm(&vals).map_err(|e| match e {
            Error::DegenerateGroup(_, why) => {
                Error::DegenerateGroup(format!("{intervention}/{config}"), why)
            }
            other => other,
        })?;
        for (&i, v) in idx.iter().zip(z) {
            out[i].score = v;
        }
    }
    Ok(out)
}

/// Parse a score file: one `utt_id score` pair per line, whitespace
/// separated. Blank lines and lines starting with `#` are skipped. Scores use
/// Rust's float grammar (`1.5`, `-2`, `1e-3`, ...); non-finite values are
/// rejected, as are repeated ids.
pub fn parse_scores_str(text: &str, source: &str) -> Result<Vec<(String, f64)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(err(format!("expected `utt_id score`, found {} fields", fields.len())));
        }
        let score: f64 = fields[1]
            .parse()
            .map_err(|_| err(format!("`{}` is not a number", fields[1])))?;
        if !score.is_finite() {
            return Err(err(format!("score `{}` is not finite", fields[1])));
        }
        if !seen.insert(fields[0]) {
            return Err(Error::DuplicateId(fields[0].to_string()));
        }
        out.push((fields[0].to_string(), score));
    }
    Ok(out)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores_str(&text, &path.display().to_string())
}

/// Write `utt_id score` lines. Scores use shortest round-trip formatting.
pub fn write_scores<'a>(
    scores: impl IntoIterator<Item = (&'a str, f64)>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for (id, v) in scores {
        s.push_str(id);
        s.push(' ');
        s.push_str(&format!("{v:?}"));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Sidecar metadata row: CSV with header `utt_id,y_cls,config,intervention`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub utt_id: String,
    pub y_cls: u8,
    pub config: String,
    pub intervention: String,
}

pub fn write_sidecar(rows: &[ScoreMeta], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut wr = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Vec<ScoreMeta>> {
    let path = path.as_ref();
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    rd.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 2,
                reason: e.to_string(),
            })
        })
        .collect()
}
