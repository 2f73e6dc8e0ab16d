//! Scores from external (black-box) countermeasures.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{Context, Result};
use hansaudit_core::eval::{read_scores, TaggedScore};
use hansaudit_core::protocol::{InterventionConfig, TrialRecord};
use hansaudit_core::Error;

/// Join a `utt_id score` file with protocol labels and tag it with an
/// experiment cell. Unknown ids, repeated ids and non-finite scores are
/// errors.
pub fn ingest_external_scores(
    path: impl AsRef<Path>,
    protocol: &[TrialRecord],
    config: &InterventionConfig,
    intervention: &str,
) -> Result<Vec<TaggedScore>> {
    let path = path.as_ref();
    let by_id: HashMap<&str, &TrialRecord> =
        protocol.iter().map(|r| (r.utt_id.as_str(), r)).collect();
    let scores = read_scores(path).with_context(|| format!("reading {}", path.display()))?;
    scores
        .into_iter()
        .map(|(id, score)| {
            let rec = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::UnknownId(id.clone()))
                .with_context(|| format!("{}: id not in the protocol", path.display()))?;
            Ok(TaggedScore {
                class: rec.class,
                config: config.name.clone(),
                intervention: intervention.to_string(),
                utt_id: id,
                score,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use hansaudit_core::protocol::{parse_protocol_str, ClassLabel, Subset};

    fn protocol() -> Vec<TrialRecord> {
        parse_protocol_str(
            "S1 u1 - - bonafide\nS1 u2 - A01 spoof\nS2 u3 - A02 spoof\n",
            "p",
            Subset::Eval,
        )
        .unwrap()
    }

    fn ingest(text: &str) -> Result<Vec<TaggedScore>> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        std::fs::write(&p, text).unwrap();
        ingest_external_scores(&p, &protocol(), &InterventionConfig::named("A").unwrap(), "ext")
    }

    #[test]
    fn well_formed_file() {
        let s = ingest("u1 1.5\nu2 1e-3\nu3 -2\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].score, 0.001);
        assert_eq!(s[0].class, ClassLabel::Bonafide);
        assert_eq!(s[2].config, "A");
    }

    #[test]
    fn bad_files_rejected() {
        let e = ingest("u1 1\nzz 2\n").unwrap_err();
        assert!(format!("{e:#}").contains("zz"));
        assert!(ingest("u1 1\nu1 2\n").is_err());
        assert!(ingest("u1 NaN\n").is_err());
    }
}
