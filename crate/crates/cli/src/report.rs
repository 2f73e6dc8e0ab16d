//! CSV and Markdown report writers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use hansaudit_core::regression::RegressionFit;

use crate::analysis::{InterventionAnalysis, SignCheck};
use crate::layout::BASELINE;
use crate::pipeline::EerRow;

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join(name);
    std::fs::write(&p, text)?;
    Ok(p)
}

pub fn eer_csv(rows: &[EerRow]) -> String {
    let mut s = String::from("intervention,config,indicator,eer_percent,n_bonafide,n_spoof\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:?},{},{}",
            r.intervention,
            r.config,
            r.indicator,
            100.0 * r.eer,
            r.n_bona,
            r.n_spoof
        );
    }
    s
}

pub fn eer_markdown(rows: &[EerRow]) -> String {
    let mut s = String::from("| Intervention | Config. | Indicator | EER (%) |\n|---|---|---|---:|\n");
    for r in rows {
        let name = if r.intervention == BASELINE { "-" } else { r.intervention.as_str() };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.2} |",
            name,
            r.config,
            r.indicator,
            100.0 * r.eer
        );
    }
    s
}

fn fit_csv_row(s: &mut String, intervention: &str, model: &str, f: &RegressionFit) {
    let _ = writeln!(
        s,
        "{intervention},{model},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
        f.mu,
        f.se_mu,
        f.d,
        f.se_d,
        f.beta_bona,
        f.se_beta_bona,
        f.beta_spf,
        f.se_beta_spf,
        f.beta_star(),
        f.se_beta_star(),
        f.sigma_eps,
        f.n
    );
}

pub fn regression_csv(analyses: &[InterventionAnalysis]) -> String {
    let mut s = String::from(
        "intervention,model,mu,se_mu,d,se_d,beta_bona,se_beta_bona,beta_spf,se_beta_spf,beta_star,se_beta_star,sigma_eps,n\n",
    );
    for a in analyses {
        fit_csv_row(&mut s, &a.intervention, "full", &a.full);
        fit_csv_row(&mut s, &a.intervention, "constrained", &a.constrained);
    }
    s
}

pub fn regression_markdown(analyses: &[InterventionAnalysis]) -> String {
    let mut s = String::from(
        "Constrained model (beta_spf = beta*, beta_bona = -beta*), standard errors in parentheses.\n\n\
         | Intervention | mu | d | beta* | sigma_eps | N |\n|---|---:|---:|---:|---:|---:|\n",
    );
    for a in analyses {
        let f = &a.constrained;
        let _ = writeln!(
            s,
            "| {} | {:.3} ({:.3}) | {:.3} ({:.3}) | {:.3} ({:.3}) | {:.3} | {} |",
            a.intervention, f.mu, f.se_mu, f.d, f.se_d, f.beta_star(), f.se_beta_star(), f.sigma_eps, f.n
        );
    }
    s.push_str(
        "\nFull model.\n\n| Intervention | mu | d | beta_bona | beta_spf | sigma_eps | N |\n|---|---:|---:|---:|---:|---:|---:|\n",
    );
    for a in analyses {
        let f = &a.full;
        let _ = writeln!(
            s,
            "| {} | {:.3} ({:.3}) | {:.3} ({:.3}) | {:.3} ({:.3}) | {:.3} ({:.3}) | {:.3} | {} |",
            a.intervention,
            f.mu,
            f.se_mu,
            f.d,
            f.se_d,
            f.beta_bona,
            f.se_beta_bona,
            f.beta_spf,
            f.se_beta_spf,
            f.sigma_eps,
            f.n
        );
    }
    s
}

/// Per-configuration class-conditional means implied by each full fit.
pub fn derived_model_markdown(analyses: &[InterventionAnalysis]) -> String {
    let mut s = String::new();
    for a in analyses {
        let _ = writeln!(s, "### {}\n", a.intervention);
        s.push_str("| Config. | Spoof mean | Bona fide mean | Difference | EER vs O |\n|---|---|---|---|---|\n");
        for r in &a.derived.rows {
            let _ = writeln!(
                s,
                "| {} | {} = {:.3} | {} = {:.3} | {} = {:.3} | {} |",
                r.configs,
                r.spoof_expr,
                r.spoof_mean,
                r.bona_expr,
                r.bona_mean,
                r.difference_expr,
                r.difference,
                r.predicted_eer.as_str()
            );
        }
        let _ = writeln!(
            s,
            "\nLargest gap between a cell's mean fitted score and its derived mean: {:.1e}\n",
            a.max_cell_deviation()
        );
    }
    s
}

pub fn sign_markdown(checks: &[SignCheck]) -> String {
    let mut s = String::from(
        "| Intervention | EER O (%) | EER A (%) | EER B (%) | A, B below O | beta_spf - beta_bona | Consistent |\n\
         |---|---:|---:|---:|---|---:|---|\n",
    );
    for c in checks {
        let _ = writeln!(
            s,
            "| {} | {:.2} | {:.2} | {:.2} | {} | {:.3} | {} |",
            c.intervention,
            100.0 * c.eer_o,
            100.0 * c.eer_a,
            100.0 * c.eer_b,
            if c.biased_lower { "yes" } else { "no" },
            c.beta_diff,
            if c.consistent { "yes" } else { "no" }
        );
    }
    s
}

pub fn write_eer_reports(dir: &Path, rows: &[EerRow]) -> Result<()> {
    write(dir, "eer.csv", &eer_csv(rows))?;
    write(dir, "eer.md", &eer_markdown(rows))?;
    Ok(())
}

pub fn write_regression_reports(dir: &Path, analyses: &[InterventionAnalysis]) -> Result<()> {
    write(dir, "regression.csv", &regression_csv(analyses))?;
    write(dir, "regression.md", &regression_markdown(analyses))?;
    write(dir, "derived_model.md", &derived_model_markdown(analyses))?;
    Ok(())
}

/// Everything in one Markdown document.
pub fn write_summary(
    dir: &Path,
    eers: Option<&[EerRow]>,
    analyses: &[InterventionAnalysis],
    checks: &[SignCheck],
) -> Result<PathBuf> {
    let mut s = String::from("# Bias audit report\n\n");
    if let Some(rows) = eers {
        s.push_str("## Equal error rates\n\n");
        s.push_str(&eer_markdown(rows));
        s.push('\n');
    }
    if !analyses.is_empty() {
        s.push_str("## Score model\n\n");
        s.push_str(&regression_markdown(analyses));
        s.push_str("\n## Per-configuration models\n\n");
        s.push_str(&derived_model_markdown(analyses));
    }
    if !checks.is_empty() {
        s.push_str("## EER ordering against the fitted bias effect\n\n");
        s.push_str(&sign_markdown(checks));
    }
    write(dir, "report.md", &s)
}
