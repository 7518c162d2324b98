//! Effective tax rates, statutory fallback, wage construction and the
//! regression-sample outlier filter.
//!
//! ETRs are built from the positive-profit subgroup only: taxes divided by
//! profits, aggregated per partner jurisdiction as a profit-weighted mean,
//! a median, or a weighted mean over foreign dyads.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DyadRecord, Jurisdiction, MetaTable, Subgroup};
use crate::ols;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtrMethod {
    WeightedMean,
    Median,
    ForeignWeightedMean,
}

impl EtrMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            EtrMethod::WeightedMean => "WEIGHTED_MEAN",
            EtrMethod::Median => "MEDIAN",
            EtrMethod::ForeignWeightedMean => "FOREIGN_WEIGHTED_MEAN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaxBasis {
    Accrued,
    Cash,
}

impl TaxBasis {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaxBasis::Accrued => "ACCRUED",
            TaxBasis::Cash => "CASH",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtrSource {
    CbcrPositive,
    StatutoryFallback,
}

impl EtrSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            EtrSource::CbcrPositive => "CBCR_POSITIVE",
            EtrSource::StatutoryFallback => "STATUTORY_FALLBACK",
        }
    }
}

/// A per-jurisdiction effective tax rate with method and basis provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtrEstimate {
    pub country: String,
    pub value: f64,
    pub method: EtrMethod,
    pub basis: TaxBasis,
    pub source: EtrSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaxVariable {
    Etr,
    Statutory,
}

/// A resolved per-country tax rate, flagging statutory fallbacks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedRate {
    pub value: f64,
    pub source: EtrSource,
}

fn dyad_tax(record: &DyadRecord, basis: TaxBasis) -> f64 {
    match basis {
        TaxBasis::Accrued => record.tax_accrued,
        TaxBasis::Cash => record.tax_paid,
    }
}

/// Dyad-level ETR: taxes over profits, defined only for positive profits.
pub fn dyad_etr(record: &DyadRecord, basis: TaxBasis) -> Option<f64> {
    if record.profit > 0.0 {
        Some(dyad_tax(record, basis) / record.profit)
    } else {
        None
    }
}

/// Aggregate dyad ETRs per partner jurisdiction.
///
/// Zero-profit dyads are excluded throughout (the ratio is undefined).
/// Weights use positive-subgroup profits, computed before any
/// regression-sample filtering.
pub fn compute_etr(
    records: &[DyadRecord],
    method: EtrMethod,
    basis: TaxBasis,
) -> Result<Vec<EtrEstimate>> {
    if let Some(r) = records.iter().find(|r| r.subgroup != Subgroup::Positive) {
        return Err(Error::InvalidConfig(format!(
            "compute_etr expects POSITIVE-subgroup dyads, found {} for ({}, {})",
            r.subgroup.as_str(),
            r.reporting,
            r.partner
        )));
    }

    let mut by_partner: BTreeMap<&Jurisdiction, Vec<&DyadRecord>> = BTreeMap::new();
    for r in records {
        by_partner.entry(&r.partner).or_default().push(r);
    }

    let mut out = Vec::new();
    for (partner, dyads) in by_partner {
        let usable: Vec<&DyadRecord> = dyads
            .iter()
            .copied()
            .filter(|r| {
                r.profit > 0.0 && (method != EtrMethod::ForeignWeightedMean || !r.is_domestic())
            })
            .collect();
        if usable.is_empty() {
            continue;
        }
        let value = match method {
            EtrMethod::WeightedMean | EtrMethod::ForeignWeightedMean => {
                let total_profit: f64 = usable.iter().map(|r| r.profit).sum();
                let total_tax: f64 = usable.iter().map(|r| dyad_tax(r, basis)).sum();
                total_tax / total_profit
            }
            EtrMethod::Median => {
                let mut etrs: Vec<f64> = usable
                    .iter()
                    .map(|r| dyad_tax(r, basis) / r.profit)
                    .collect();
                etrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let m = etrs.len();
                if m % 2 == 1 {
                    etrs[m / 2]
                } else {
                    0.5 * (etrs[m / 2 - 1] + etrs[m / 2])
                }
            }
        };
        out.push(EtrEstimate {
            country: partner.code().to_string(),
            value,
            method,
            basis,
            source: EtrSource::CbcrPositive,
        });
    }
    Ok(out)
}

/// Resolve a tax rate per country: the CBCR-based ETR when observed, the
/// statutory rate otherwise (flagged via `source`). `Statutory` returns
/// statutory rates for every metadata country.
///
/// The map covers the union of ETR jurisdictions and metadata countries.
/// Aggregate categories have no statutory rate and are resolvable only
/// through an observed ETR.
pub fn resolve_tax_rate(
    etrs: &[EtrEstimate],
    meta: &MetaTable,
    variable: TaxVariable,
) -> Result<BTreeMap<String, ResolvedRate>> {
    let mut out = BTreeMap::new();
    match variable {
        TaxVariable::Etr => {
            for e in etrs {
                out.insert(
                    e.country.clone(),
                    ResolvedRate {
                        value: e.value,
                        source: EtrSource::CbcrPositive,
                    },
                );
            }
            for m in meta.iter() {
                out.entry(m.code.clone()).or_insert(ResolvedRate {
                    value: m.statutory_cit,
                    source: EtrSource::StatutoryFallback,
                });
            }
        }
        TaxVariable::Statutory => {
            for m in meta.iter() {
                out.insert(
                    m.code.clone(),
                    ResolvedRate {
                        value: m.statutory_cit,
                        source: EtrSource::StatutoryFallback,
                    },
                );
            }
            for e in etrs {
                let is_real_country = !Jurisdiction::parse(&e.country).is_aggregate();
                if is_real_country && !out.contains_key(&e.country) {
                    return Err(Error::MissingMeta(e.country.clone()));
                }
            }
        }
    }
    Ok(out)
}

/// Drop regression outliers: dyad ETRs above 50% or below 0%, and dyads
/// with profits under US$1 billion. Survivors pass through unchanged.
pub fn filter_regression_sample(dyads: Vec<(DyadRecord, f64)>) -> Vec<(DyadRecord, f64)> {
    dyads
        .into_iter()
        .filter(|(record, etr)| (0.0..=0.5).contains(etr) && record.profit >= 1000.0)
        .collect()
}

/// Linear model of log-salary on log-GDP and log-population, used to fill
/// missing average salaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SalaryModel {
    pub intercept: f64,
    pub beta_ln_gdp: f64,
    pub beta_ln_population: f64,
    pub r2: f64,
    pub n: usize,
}

impl SalaryModel {
    pub fn predict(&self, gdp: f64, population: f64) -> f64 {
        (self.intercept + self.beta_ln_gdp * gdp.ln() + self.beta_ln_population * population.ln())
            .exp()
    }
}

/// OLS of ln(avg_salary) on intercept, ln(gdp) and ln(population) over the
/// countries with an observed salary.
pub fn fit_salary_model(meta: &MetaTable) -> Result<SalaryModel> {
    let observed: Vec<_> = meta.iter().filter(|m| m.avg_salary.is_some()).collect();
    if observed.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "salary model needs >= 3 observed salaries, got {}",
            observed.len()
        )));
    }
    let n = observed.len();
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => observed[i].gdp.ln(),
        _ => observed[i].population.ln(),
    });
    let y = DVector::from_fn(n, |i, _| observed[i].avg_salary.unwrap().ln());
    let fit = ols::fit(&x, &y)?;
    Ok(SalaryModel {
        intercept: fit.beta[0],
        beta_ln_gdp: fit.beta[1],
        beta_ln_population: fit.beta[2],
        r2: fit.r2,
        n,
    })
}

/// Dyad-keyed wages in USD millions: employees times the partner-country
/// salary, observed when available, model-predicted otherwise.
#[derive(Debug, Clone, Default)]
pub struct WagePanel {
    wages: BTreeMap<(String, Jurisdiction), f64>,
    pub salary_model: Option<SalaryModel>,
    /// Dyads whose partner has neither an observed salary nor the metadata
    /// needed to predict one (aggregate categories, unknown codes). Their
    /// wage is recorded as zero.
    pub unresolved_salary: usize,
}

impl WagePanel {
    pub fn get(&self, reporting: &str, partner: &Jurisdiction) -> Option<f64> {
        self.wages
            .get(&(reporting.to_string(), partner.clone()))
            .copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, Jurisdiction), &f64)> {
        self.wages.iter()
    }
}

/// Build the wage panel: `W = employees x salary / 1e6`.
pub fn compute_wages(
    dyads: &[DyadRecord],
    meta: &MetaTable,
    salary_model: &SalaryModel,
) -> WagePanel {
    let mut panel = WagePanel {
        salary_model: Some(salary_model.clone()),
        ..WagePanel::default()
    };
    for d in dyads {
        let salary = meta.get(d.partner.code()).map(|m| {
            m.avg_salary
                .unwrap_or_else(|| salary_model.predict(m.gdp, m.population))
        });
        let wage = match salary {
            Some(s) => d.employees * s / 1e6,
            None => {
                panel.unresolved_salary += 1;
                0.0
            }
        };
        panel
            .wages
            .insert((d.reporting.clone(), d.partner.clone()), wage);
    }
    panel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CountryMeta, IncomeGroup};
    use approx::assert_relative_eq;

    fn dyad(reporting: &str, partner: &str, profit: f64, tax: f64) -> DyadRecord {
        DyadRecord {
            reporting: reporting.into(),
            partner: Jurisdiction::parse(partner),
            subgroup: Subgroup::Positive,
            n_firms: 1,
            profit,
            tax_accrued: tax,
            tax_paid: tax * 0.9,
            employees: 10.0,
            unrelated_revenue: profit,
            tangible_assets: profit,
        }
    }

    fn meta(code: &str, gdp: f64, population: f64, salary: Option<f64>, cit: f64) -> CountryMeta {
        CountryMeta {
            code: code.into(),
            gdp,
            population,
            gdp_pc: gdp * 1e6 / population,
            avg_salary: salary,
            statutory_cit: cit,
            total_tax_revenue: None,
            cit_revenue: None,
            income_group: IncomeGroup::High,
            region: "Test".into(),
            bank_claims: None,
        }
    }

    #[test]
    fn single_dyad_ratio() {
        let etrs = compute_etr(
            &[dyad("USA", "BMU", 100.0, 10.0)],
            EtrMethod::WeightedMean,
            TaxBasis::Accrued,
        )
        .unwrap();
        assert_eq!(etrs.len(), 1);
        assert_relative_eq!(etrs[0].value, 0.10);
    }

    #[test]
    fn weighted_and_median_disagree() {
        let records = vec![dyad("USA", "BMU", 100.0, 10.0), dyad("DNK", "BMU", 300.0, 60.0)];
        let weighted = compute_etr(&records, EtrMethod::WeightedMean, TaxBasis::Accrued).unwrap();
        assert_relative_eq!(weighted[0].value, 0.175); // (10+60)/400
        let median = compute_etr(&records, EtrMethod::Median, TaxBasis::Accrued).unwrap();
        assert_relative_eq!(median[0].value, 0.15);
    }

    #[test]
    fn weighted_mean_within_dyad_range() {
        let records = vec![
            dyad("USA", "BMU", 50.0, 2.0),
            dyad("DNK", "BMU", 300.0, 60.0),
            dyad("ITA", "BMU", 120.0, 18.0),
        ];
        let dyad_rates: Vec<f64> = records
            .iter()
            .map(|r| dyad_etr(r, TaxBasis::Accrued).unwrap())
            .collect();
        let lo = dyad_rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = dyad_rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weighted = compute_etr(&records, EtrMethod::WeightedMean, TaxBasis::Accrued).unwrap();
        assert!(weighted[0].value >= lo && weighted[0].value <= hi);
    }

    #[test]
    fn foreign_weighted_mean_excludes_domestic() {
        let records = vec![dyad("BMU", "BMU", 500.0, 250.0), dyad("USA", "BMU", 100.0, 10.0)];
        let foreign =
            compute_etr(&records, EtrMethod::ForeignWeightedMean, TaxBasis::Accrued).unwrap();
        assert_relative_eq!(foreign[0].value, 0.10);
        // With no domestic dyads it coincides with the weighted mean.
        let only_foreign = vec![dyad("USA", "BMU", 100.0, 10.0), dyad("DNK", "BMU", 300.0, 60.0)];
        let a = compute_etr(&only_foreign, EtrMethod::ForeignWeightedMean, TaxBasis::Accrued)
            .unwrap();
        let b = compute_etr(&only_foreign, EtrMethod::WeightedMean, TaxBasis::Accrued).unwrap();
        assert_relative_eq!(a[0].value, b[0].value);
    }

    #[test]
    fn cash_basis_uses_tax_paid() {
        let etrs = compute_etr(
            &[dyad("USA", "BMU", 100.0, 10.0)],
            EtrMethod::WeightedMean,
            TaxBasis::Cash,
        )
        .unwrap();
        assert_relative_eq!(etrs[0].value, 0.09);
    }

    #[test]
    fn statutory_fallback_when_absent_from_positive_data() {
        let etrs = compute_etr(
            &[dyad("USA", "BMU", 100.0, 10.0)],
            EtrMethod::WeightedMean,
            TaxBasis::Accrued,
        )
        .unwrap();
        let table = MetaTable::new(vec![
            meta("BMU", 5e3, 6e4, None, 0.0),
            meta("AND", 3e3, 8e4, None, 0.10),
        ]);
        let rates = resolve_tax_rate(&etrs, &table, TaxVariable::Etr).unwrap();
        assert_eq!(rates["BMU"].source, EtrSource::CbcrPositive);
        assert_relative_eq!(rates["BMU"].value, 0.10);
        assert_eq!(rates["AND"].source, EtrSource::StatutoryFallback);
        assert_relative_eq!(rates["AND"].value, 0.10);
    }

    #[test]
    fn statutory_variable_returns_statutory_rates() {
        let etrs = compute_etr(
            &[dyad("USA", "LUX", 100.0, 0.9)],
            EtrMethod::WeightedMean,
            TaxBasis::Accrued,
        )
        .unwrap();
        let table = MetaTable::new(vec![meta("LUX", 6e4, 6e5, None, 0.2922)]);
        let rates = resolve_tax_rate(&etrs, &table, TaxVariable::Statutory).unwrap();
        assert_relative_eq!(rates["LUX"].value, 0.2922);
        assert_eq!(rates["LUX"].source, EtrSource::StatutoryFallback);
    }

    #[test]
    fn outlier_filter_thresholds() {
        let keep = dyad("USA", "BMU", 5000.0, 600.0); // ETR 0.12
        let high_etr = dyad("USA", "FRA", 5000.0, 3000.0); // ETR 0.60
        let negative_etr = dyad("USA", "DEU", 5000.0, -1.0);
        let small = dyad("USA", "CHE", 999.9, 10.0);
        let joined: Vec<_> = [keep, high_etr, negative_etr, small]
            .into_iter()
            .map(|d| {
                let e = dyad_etr(&d, TaxBasis::Accrued).unwrap();
                (d, e)
            })
            .collect();
        let filtered = filter_regression_sample(joined);
        assert_eq!(filtered.len(), 1);
        assert_eq!(filtered[0].0.partner.code(), "BMU");
        // Reapplying is a fixed point.
        let again = filter_regression_sample(filtered.clone());
        assert_eq!(again, filtered);
    }

    #[test]
    fn salary_model_noiseless_recovery() {
        let (a, b, c) = (2.0, 0.3, -0.1);
        let rows: Vec<CountryMeta> = (1..=6)
            .map(|i| {
                let gdp = 1e4 * i as f64;
                let pop = 3e6 * (7 - i) as f64;
                let salary = (a + b * gdp.ln() + c * pop.ln()).exp();
                meta(&format!("C{i}"), gdp, pop, Some(salary), 0.2)
            })
            .collect();
        let model = fit_salary_model(&MetaTable::new(rows)).unwrap();
        assert_relative_eq!(model.intercept, a, epsilon = 1e-9);
        assert_relative_eq!(model.beta_ln_gdp, b, epsilon = 1e-9);
        assert_relative_eq!(model.beta_ln_population, c, epsilon = 1e-9);
        assert_relative_eq!(model.r2, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn salary_model_insufficient_data() {
        let rows = vec![meta("A", 1e4, 1e6, Some(3e4), 0.2), meta("B", 2e4, 2e6, Some(4e4), 0.2)];
        assert!(matches!(
            fit_salary_model(&MetaTable::new(rows)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn wages_from_observed_and_predicted_salaries() {
        let rows = vec![
            meta("USA", 2e7, 3.3e8, Some(30_000.0), 0.21),
            meta("MIS", 1e4, 1e6, None, 0.2),
            meta("A", 1e4, 1e6, Some(1.2e4), 0.2),
            meta("B", 2e4, 2e6, Some(1.2e4), 0.2),
            meta("C", 4e4, 4e6, Some(1.2e4), 0.2),
        ];
        let table = MetaTable::new(rows);
        // Constant salary data: the model predicts 12k everywhere.
        let model = fit_salary_model(&table).unwrap();

        let mut d1 = dyad("USA", "USA", 100.0, 10.0);
        d1.employees = 1000.0;
        let mut d2 = dyad("USA", "MIS", 100.0, 10.0);
        d2.employees = 500.0;
        let mut d3 = dyad("USA", "BMU", 100.0, 10.0);
        d3.employees = 0.0;

        let panel = compute_wages(&[d1.clone(), d2.clone(), d3.clone()], &table, &model);
        assert_relative_eq!(panel.get("USA", &d1.partner).unwrap(), 30.0);
        assert_relative_eq!(panel.get("USA", &d2.partner).unwrap(), 6.0, epsilon = 1e-6);
        assert_relative_eq!(panel.get("USA", &d3.partner).unwrap(), 0.0);
        assert_eq!(panel.unresolved_salary, 1); // BMU has no metadata here
    }
}
