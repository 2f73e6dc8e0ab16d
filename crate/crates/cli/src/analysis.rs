//! Regression analysis of tagged scores.

use anyhow::{anyhow, bail, Context, Result};
use hansaudit_core::eval::{znorm_groups, TaggedScore};
use hansaudit_core::protocol::{ClassLabel, InterventionConfig};
use hansaudit_core::regression::{
    config_report, fit_constrained, fit_full, ConfigModelReport, RegressionFit, RegressionRow,
};

use crate::layout::BASELINE;
use crate::pipeline::EerRow;

/// Mean fitted value of one (configuration, class) cell next to the value the
/// per-configuration derived model gives for it.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMeanCheck {
    pub config: String,
    pub class: ClassLabel,
    pub fitted_mean: f64,
    pub derived: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionAnalysis {
    pub intervention: String,
    pub configs: Vec<String>,
    pub full: RegressionFit,
    pub constrained: RegressionFit,
    pub derived: ConfigModelReport,
    /// Checks for both fits, only for the named configurations O..D.
    pub cell_checks: Vec<CellMeanCheck>,
}

impl InterventionAnalysis {
    pub fn max_cell_deviation(&self) -> f64 {
        self.cell_checks
            .iter()
            .map(|c| (c.fitted_mean - c.derived).abs())
            .fold(0.0, f64::max)
    }
}

/// Regression rows of one intervention's scores after per-group z-norm.
pub fn regression_rows(
    scores: &[TaggedScore],
    configs: &[InterventionConfig],
) -> Result<Vec<RegressionRow>> {
    let z = znorm_groups(scores)?;
    z.iter()
        .map(|s| {
            let cfg = configs
                .iter()
                .find(|c| c.name == s.config)
                .ok_or_else(|| anyhow!("score for `{}` tagged with unknown configuration `{}`", s.utt_id, s.config))?;
            Ok(RegressionRow::new(s.score, s.class, cfg))
        })
        .collect()
}

/// Derived-model value of a named configuration's cell.
fn derived_value(report: &ConfigModelReport, config: &str, class: ClassLabel) -> Option<f64> {
    let row = match config {
        "O" => &report.rows[0],
        "A" | "B" => &report.rows[1],
        "C" | "D" => &report.rows[2],
        _ => return None,
    };
    Some(match class {
        ClassLabel::Spoof => row.spoof_mean,
        ClassLabel::Bonafide => row.bona_mean,
    })
}

fn cell_checks(fit: &RegressionFit, rows: &[RegressionRow], out: &mut Vec<CellMeanCheck>) {
    let report = config_report(fit);
    let mut keys: Vec<(&str, ClassLabel)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.config.as_str(), r.class)) {
            keys.push((r.config.as_str(), r.class));
        }
    }
    for (config, class) in keys {
        let Some(derived) = derived_value(&report, config, class) else {
            continue;
        };
        let cell: Vec<f64> = rows
            .iter()
            .filter(|r| r.config == config && r.class == class)
            .map(|r| fit.fitted(r))
            .collect();
        out.push(CellMeanCheck {
            config: config.to_string(),
            class,
            fitted_mean: cell.iter().sum::<f64>() / cell.len() as f64,
            derived,
        });
    }
}

/// Fit both models to one intervention's scores.
pub fn analyze_intervention(
    intervention: &str,
    scores: &[TaggedScore],
    configs: &[InterventionConfig],
) -> Result<InterventionAnalysis> {
    let rows = regression_rows(scores, configs)
        .with_context(|| format!("{intervention}: assembling regression rows"))?;
    let mut present: Vec<String> = Vec::new();
    for r in &rows {
        if !present.contains(&r.config) {
            present.push(r.config.clone());
        }
    }
    let has_baseline = configs
        .iter()
        .any(|c| c.is_baseline() && present.contains(&c.name));
    let hint = |e: hansaudit_core::Error| {
        let e = anyhow::Error::from(e);
        if has_baseline {
            e.context(format!("{intervention}: regression fit"))
        } else {
            e.context(format!(
                "{intervention}: regression fit; configuration O (0 0 0 0) is missing, \
                 pool it with at least one biased configuration"
            ))
        }
    };
    let full = fit_full(&rows).map_err(hint)?;
    let constrained = fit_constrained(&rows).map_err(hint)?;
    let mut checks = Vec::new();
    cell_checks(&full, &rows, &mut checks);
    cell_checks(&constrained, &rows, &mut checks);
    Ok(InterventionAnalysis {
        intervention: intervention.to_string(),
        configs: present,
        derived: config_report(&full),
        full,
        constrained,
        cell_checks: checks,
    })
}

/// Analyse every intervention found in `scores` (the baseline tag is
/// skipped), in order of first appearance.
pub fn run_analysis(
    scores: &[TaggedScore],
    configs: &[InterventionConfig],
) -> Result<Vec<InterventionAnalysis>> {
    let mut order: Vec<&str> = Vec::new();
    for s in scores {
        if s.intervention != BASELINE && !order.contains(&s.intervention.as_str()) {
            order.push(&s.intervention);
        }
    }
    if order.is_empty() {
        bail!("no intervention scores to analyse");
    }
    order
        .into_iter()
        .map(|name| {
            let group: Vec<TaggedScore> = scores
                .iter()
                .filter(|s| s.intervention == name)
                .cloned()
                .collect();
            analyze_intervention(name, &group, configs)
        })
        .collect()
}

/// Whether the measured EER ordering agrees with the sign of
/// `beta_spf - beta_bona`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignCheck {
    pub intervention: String,
    pub eer_o: f64,
    pub eer_a: f64,
    pub eer_b: f64,
    pub beta_diff: f64,
    /// `EER(A), EER(B) < EER(O)`.
    pub biased_lower: bool,
    pub consistent: bool,
}

pub fn sign_checks(eers: &[EerRow], analyses: &[InterventionAnalysis]) -> Vec<SignCheck> {
    let get = |iv: &str, cfg: &str| {
        eers.iter()
            .find(|r| r.intervention == iv && r.config == cfg)
            .map(|r| r.eer)
    };
    analyses
        .iter()
        .filter_map(|a| {
            let (o, ea, eb) = (
                get(&a.intervention, "O")?,
                get(&a.intervention, "A")?,
                get(&a.intervention, "B")?,
            );
            let beta_diff = a.full.beta_spf - a.full.beta_bona;
            let biased_lower = ea < o && eb < o;
            Some(SignCheck {
                intervention: a.intervention.clone(),
                eer_o: o,
                eer_a: ea,
                eer_b: eb,
                beta_diff,
                biased_lower,
                consistent: biased_lower == (beta_diff > 0.0),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use hansaudit_core::synth::{gen_scores, SynthScoreSpec};

    fn tagged(spec: &SynthScoreSpec, configs: &[InterventionConfig]) -> Vec<TaggedScore> {
        gen_scores(spec, configs)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, r)| TaggedScore {
                utt_id: format!("u{i}"),
                score: r.score,
                class: r.class,
                config: r.config,
                intervention: "white_noise".into(),
            })
            .collect()
    }

    fn spec() -> SynthScoreSpec {
        SynthScoreSpec {
            mu: -0.05,
            d: 0.5,
            beta_bona: -0.5,
            beta_spf: 0.5,
            sigma_eps: 0.7,
            trials_per_cell: 500,
            seed: 4,
        }
    }

    #[test]
    fn cell_means_match_derived_model() {
        let configs = InterventionConfig::all_named();
        let a = run_analysis(&tagged(&spec(), &configs), &configs).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].cell_checks.len(), 20);
        assert!(a[0].max_cell_deviation() < 1e-10);
        assert!(a[0].full.beta_spf - a[0].full.beta_bona > 0.0);
    }

    #[test]
    fn missing_o_gets_a_hint() {
        let configs: Vec<InterventionConfig> =
            ["A"].iter().map(|n| InterventionConfig::named(n).unwrap()).collect();
        let err = run_analysis(&tagged(&spec(), &configs), &configs).unwrap_err();
        assert!(format!("{err:#}").contains("configuration O"), "{err:#}");
    }

    #[test]
    fn unknown_config_tag_rejected() {
        let configs = InterventionConfig::all_named();
        let mut s = tagged(&spec(), &configs);
        s[0].config = "Z".into();
        assert!(run_analysis(&s, &configs).is_err());
    }
}
