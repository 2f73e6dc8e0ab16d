//! Linear score model
//! `s = mu + d * y_cls + beta_bona * delta_bona + beta_spf * delta_spf + eps`,
//! fitted by least squares through a Householder QR decomposition.
//!
//! The residual term is the only random effect, so maximum likelihood and
//! ordinary least squares coincide. Rank: the design has four distinct rows
//! `(y, delta_bona, delta_spf)` = (0,0,0), (1,0,0), (0,1,0), (1,0,1) as soon as
//! configuration O is pooled with A or B (C or D give (0,0,1), (1,1,0)
//! instead), and any three of these together with the intercept are linearly
//! independent. A single biased configuration on its own has
//! `delta_bona + delta_spf = 1` on every trial, which is collinear with the
//! intercept, and configuration O alone has both delta columns zero.
//!
//! The constrained variant ties `beta_spf = beta* = -beta_bona` and regresses on
//! `[1, y, delta_spf - delta_bona]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{ClassLabel, InterventionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub score: f64,
    pub class: ClassLabel,
    pub delta_bona: f64,
    pub delta_spf: f64,
    pub config: String,
}

impl RegressionRow {
    pub fn new(score: f64, class: ClassLabel, config: &InterventionConfig) -> Self {
        let (delta_bona, delta_spf) = config.deltas_for(class);
        RegressionRow {
            score,
            class,
            delta_bona,
            delta_spf,
            config: config.name.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelForm {
    /// Separate `beta_bona` and `beta_spf`.
    Full,
    /// `beta_spf = -beta_bona = beta*`.
    Constrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub form: ModelForm,
    pub mu: f64,
    pub d: f64,
    pub beta_bona: f64,
    pub beta_spf: f64,
    /// Residual standard deviation, denominator `N - p`.
    pub sigma_eps: f64,
    pub se_mu: f64,
    pub se_d: f64,
    pub se_beta_bona: f64,
    pub se_beta_spf: f64,
    pub rss: f64,
    pub n: usize,
}

impl RegressionFit {
    pub fn predict(&self, class: ClassLabel, delta_bona: f64, delta_spf: f64) -> f64 {
        self.mu + self.d * class.y() as f64 + self.beta_bona * delta_bona + self.beta_spf * delta_spf
    }

    pub fn fitted(&self, row: &RegressionRow) -> f64 {
        self.predict(row.class, row.delta_bona, row.delta_spf)
    }

    /// Single biased-training effect. For the constrained form this is the
    /// fitted `beta*`; for the full form, the antisymmetric part
    /// `(beta_spf - beta_bona) / 2`.
    pub fn beta_star(&self) -> f64 {
        match self.form {
            ModelForm::Constrained => self.beta_spf,
            ModelForm::Full => 0.5 * (self.beta_spf - self.beta_bona),
        }
    }

    pub fn se_beta_star(&self) -> f64 {
        match self.form {
            ModelForm::Constrained => self.se_beta_spf,
            // the covariance term is not kept; this is the upper bound
            // assuming perfectly anti-correlated estimates
            ModelForm::Full => 0.5 * (self.se_beta_spf + self.se_beta_bona),
        }
    }
}

/// Least-squares solution with standard errors.
struct OlsResult {
    coef: Vec<f64>,
    se: Vec<f64>,
    rss: f64,
    sigma: f64,
}

fn ols(columns: &[(&str, Vec<f64>)], y: &[f64]) -> Result<OlsResult> {
    let n = y.len();
    let p = columns.len();
    if n <= p {
        return Err(Error::RankDeficient(format!(
            "{n} rows for {p} coefficients"
        )));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite score {v}")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| columns[j].1[i]);
    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let norm = x.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= 1e-10 * norm {
            let earlier: Vec<&str> = columns[..j].iter().map(|c| c.0).collect();
            let why = if norm == 0.0 {
                format!("column `{}` is identically zero", columns[j].0)
            } else {
                format!(
                    "column `{}` is a linear combination of [{}]",
                    columns[j].0,
                    earlier.join(", ")
                )
            };
            return Err(Error::RankDeficient(why));
        }
    }
    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let head = qty.rows(0, p).into_owned();
    let coef = r
        .solve_upper_triangular(&head)
        .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?;
    let resid = DVector::from_column_slice(y) - &x * &coef;
    let rss = resid.norm_squared();
    let sigma = (rss / (n - p) as f64).sqrt();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?;
    // (X'X)^-1 = R^-1 R^-T; diagonal entries are squared row norms of R^-1
    let se = (0..p).map(|j| sigma * r_inv.row(j).norm()).collect();
    Ok(OlsResult {
        coef: coef.iter().copied().collect(),
        se,
        rss,
        sigma,
    })
}

fn check_rows(rows: &[RegressionRow]) -> Result<()> {
    if let Some(r) = rows
        .iter()
        .find(|r| !(r.score.is_finite() && r.delta_bona.is_finite() && r.delta_spf.is_finite()))
    {
        return Err(Error::InvalidParameter(format!(
            "non-finite regression row in configuration `{}`",
            r.config
        )));
    }
    Ok(())
}

/// Fit the two-coefficient model.
pub fn fit_full(rows: &[RegressionRow]) -> Result<RegressionFit> {
    check_rows(rows)?;
    let cols = [
        ("intercept", vec![1.0; rows.len()]),
        ("y_cls", rows.iter().map(|r| r.class.y() as f64).collect()),
        ("delta_bona", rows.iter().map(|r| r.delta_bona).collect()),
        ("delta_spf", rows.iter().map(|r| r.delta_spf).collect()),
    ];
    let y: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let res = ols(&cols, &y)?;
    Ok(RegressionFit {
        form: ModelForm::Full,
        mu: res.coef[0],
        d: res.coef[1],
        beta_bona: res.coef[2],
        beta_spf: res.coef[3],
        sigma_eps: res.sigma,
        se_mu: res.se[0],
        se_d: res.se[1],
        se_beta_bona: res.se[2],
        se_beta_spf: res.se[3],
        rss: res.rss,
        n: rows.len(),
    })
}

/// Fit with `beta_spf = beta*` and `beta_bona = -beta*`.
pub fn fit_constrained(rows: &[RegressionRow]) -> Result<RegressionFit> {
    check_rows(rows)?;
    let cols = [
        ("intercept", vec![1.0; rows.len()]),
        ("y_cls", rows.iter().map(|r| r.class.y() as f64).collect()),
        (
            "delta_spf - delta_bona",
            rows.iter().map(|r| r.delta_spf - r.delta_bona).collect(),
        ),
    ];
    let y: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let res = ols(&cols, &y)?;
    Ok(RegressionFit {
        form: ModelForm::Constrained,
        mu: res.coef[0],
        d: res.coef[1],
        beta_bona: -res.coef[2],
        beta_spf: res.coef[2],
        sigma_eps: res.sigma,
        se_mu: res.se[0],
        se_d: res.se[1],
        se_beta_bona: res.se[2],
        se_beta_spf: res.se[2],
        rss: res.rss,
        n: rows.len(),
    })
}

/// Expected EER relative to configuration O implied by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EerDirection {
    Reference,
    Lower,
    Higher,
    Unchanged,
}

impl EerDirection {
    fn from_shift(shift: f64) -> Self {
        if shift > 0.0 {
            EerDirection::Lower
        } else if shift < 0.0 {
            EerDirection::Higher
        } else {
            EerDirection::Unchanged
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EerDirection::Reference => "reference",
            EerDirection::Lower => "lower",
            EerDirection::Higher => "higher",
            EerDirection::Unchanged => "unchanged",
        }
    }
}

/// Class-conditional means of one configuration group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigModelRow {
    pub configs: String,
    pub spoof_expr: String,
    pub bona_expr: String,
    pub difference_expr: String,
    pub spoof_mean: f64,
    pub bona_mean: f64,
    pub difference: f64,
    pub predicted_eer: EerDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigModelReport {
    pub rows: Vec<ConfigModelRow>,
}

/// Per-configuration conditional means and their difference.
pub fn config_report(fit: &RegressionFit) -> ConfigModelReport {
    let (mu, d, bb, bs) = (fit.mu, fit.d, fit.beta_bona, fit.beta_spf);
    let rows = vec![
        ConfigModelRow {
            configs: "O".into(),
            spoof_expr: "mu".into(),
            bona_expr: "mu + d".into(),
            difference_expr: "d".into(),
            spoof_mean: mu,
            bona_mean: mu + d,
            difference: d,
            predicted_eer: EerDirection::Reference,
        },
        ConfigModelRow {
            configs: "A, B".into(),
            spoof_expr: "mu + beta_bona".into(),
            bona_expr: "mu + d + beta_spf".into(),
            difference_expr: "d + beta_spf - beta_bona".into(),
            spoof_mean: mu + bb,
            bona_mean: mu + d + bs,
            difference: d + bs - bb,
            predicted_eer: EerDirection::from_shift(bs - bb),
        },
        ConfigModelRow {
            configs: "C, D".into(),
            spoof_expr: "mu + beta_spf".into(),
            bona_expr: "mu + d + beta_bona".into(),
            difference_expr: "d + beta_bona - beta_spf".into(),
            spoof_mean: mu + bs,
            bona_mean: mu + d + bb,
            difference: d + bb - bs,
            predicted_eer: EerDirection::from_shift(bb - bs),
        },
    ];
    ConfigModelReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SeedContext;
    use rand::Rng;

    fn rows_from(
        fit: (f64, f64, f64, f64),
        per_cell: usize,
        noise: f64,
        configs: &[&str],
        seed: u64,
    ) -> Vec<RegressionRow> {
        let (mu, d, bb, bs) = fit;
        let mut rng = SeedContext::new(seed, "reg", "", "").rng();
        let mut rows = Vec::new();
        for name in configs {
            let cfg = InterventionConfig::named(name).unwrap();
            for class in [ClassLabel::Spoof, ClassLabel::Bonafide] {
                let (db, ds) = cfg.deltas_for(class);
                for _ in 0..per_cell {
                    let e = noise * (rng.random::<f64>() - 0.5);
                    rows.push(RegressionRow {
                        score: mu + d * class.y() as f64 + bb * db + bs * ds + e,
                        class,
                        delta_bona: db,
                        delta_spf: ds,
                        config: name.to_string(),
                    });
                }
            }
        }
        rows
    }

    /// Independent route: normal equations solved by Gauss-Jordan elimination.
    fn normal_equations(rows: &[RegressionRow]) -> Vec<f64> {
        let x: Vec<[f64; 4]> = rows
            .iter()
            .map(|r| [1.0, r.class.y() as f64, r.delta_bona, r.delta_spf])
            .collect();
        let mut a = [[0.0; 5]; 4];
        for (xi, r) in x.iter().zip(rows) {
            for i in 0..4 {
                for j in 0..4 {
                    a[i][j] += xi[i] * xi[j];
                }
                a[i][4] += xi[i] * r.score;
            }
        }
        for c in 0..4 {
            let piv = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..4 {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..5 {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..4).map(|i| a[i][4] / a[i][i]).collect()
    }

    #[test]
    fn noiseless_exact_recovery() {
        let rows = rows_from((0.0, 1.0, -0.5, 0.5), 5, 0.0, &["O", "A", "B", "C", "D"], 1);
        let f = fit_full(&rows).unwrap();
        assert!(f.mu.abs() < 1e-12);
        assert!((f.d - 1.0).abs() < 1e-12);
        assert!((f.beta_bona + 0.5).abs() < 1e-12);
        assert!((f.beta_spf - 0.5).abs() < 1e-12);
        assert!(f.sigma_eps < 1e-12);
        let c = fit_constrained(&rows).unwrap();
        assert!((c.beta_star() - 0.5).abs() < 1e-12);
        assert!((f.beta_star() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matches_normal_equations() {
        for seed in 0..20 {
            let rows = rows_from((0.3, -0.7, 0.2, 1.1), 3 + seed as usize % 4, 2.0, &["O", "A", "C"], seed);
            let f = fit_full(&rows).unwrap();
            let ne = normal_equations(&rows);
            for (a, b) in [f.mu, f.d, f.beta_bona, f.beta_spf].iter().zip(&ne) {
                assert!((a - b).abs() < 1e-10, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn constrained_rss_not_below_full() {
        // asymmetric truth: beta_spf != -beta_bona
        let rows = rows_from((0.1, 0.4, 0.3, 0.9), 40, 0.5, &["O", "A", "B", "C", "D"], 7);
        let f = fit_full(&rows).unwrap();
        let c = fit_constrained(&rows).unwrap();
        assert!(c.rss >= f.rss);
        assert!(c.sigma_eps > f.sigma_eps);
    }

    #[test]
    fn rank_errors_name_columns() {
        let o_only = rows_from((0.0, 1.0, 0.0, 0.0), 5, 1.0, &["O"], 1);
        match fit_full(&o_only).unwrap_err() {
            Error::RankDeficient(m) => assert!(m.contains("delta_bona"), "{m}"),
            e => panic!("{e}"),
        }
        match fit_constrained(&o_only).unwrap_err() {
            Error::RankDeficient(m) => assert!(m.contains("delta_spf - delta_bona"), "{m}"),
            e => panic!("{e}"),
        }
        let a_only = rows_from((0.0, 1.0, -0.5, 0.5), 5, 1.0, &["A"], 1);
        match fit_full(&a_only).unwrap_err() {
            Error::RankDeficient(m) => assert!(m.contains("linear combination"), "{m}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn report_matches_table_algebra() {
        let fit = RegressionFit {
            form: ModelForm::Full,
            mu: 0.0,
            d: 0.4,
            beta_bona: -0.59,
            beta_spf: 0.59,
            sigma_eps: 1.0,
            se_mu: 0.0,
            se_d: 0.0,
            se_beta_bona: 0.0,
            se_beta_spf: 0.0,
            rss: 0.0,
            n: 0,
        };
        let r = config_report(&fit);
        assert_eq!(r.rows[0].difference, 0.4);
        assert!((r.rows[1].difference - 1.58).abs() < 1e-12);
        assert!((r.rows[2].difference + 0.78).abs() < 1e-12);
        assert_eq!(r.rows[1].predicted_eer, EerDirection::Lower);
        assert_eq!(r.rows[2].predicted_eer, EerDirection::Higher);

        let flat = RegressionFit { beta_bona: 0.2, beta_spf: 0.2, ..fit };
        let r = config_report(&flat);
        for row in &r.rows {
            assert!((row.difference - 0.4).abs() < 1e-15);
        }
        assert_eq!(r.rows[1].predicted_eer, EerDirection::Unchanged);
    }
}
