//! Parsing of CBCR dyad tables and country metadata, reporting-side data
//! corrections, and regression-sample selection.
//!
//! A *dyad* is one (reporting country, partner jurisdiction) row of a
//! country-by-country report. Partner jurisdictions are either real country
//! codes or one of the fixed aggregate categories (`OTHER_EUROPE`, ...).
//! All monetary fields are USD millions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed vocabulary for aggregate partner categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AggregateLabel {
    OtherEurope,
    OtherAmerica,
    OtherAsiaOceania,
    OtherAfrica,
    OtherGroups,
}

impl AggregateLabel {
    pub const ALL: [AggregateLabel; 5] = [
        AggregateLabel::OtherEurope,
        AggregateLabel::OtherAmerica,
        AggregateLabel::OtherAsiaOceania,
        AggregateLabel::OtherAfrica,
        AggregateLabel::OtherGroups,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AggregateLabel::OtherEurope => "OTHER_EUROPE",
            AggregateLabel::OtherAmerica => "OTHER_AMERICA",
            AggregateLabel::OtherAsiaOceania => "OTHER_ASIA_OCEANIA",
            AggregateLabel::OtherAfrica => "OTHER_AFRICA",
            AggregateLabel::OtherGroups => "OTHER_GROUPS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.as_str() == s)
    }
}

/// A partner jurisdiction: a country code or an aggregate category,
/// preserved verbatim from the input.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Jurisdiction {
    Country(String),
    Aggregate(AggregateLabel),
}

impl Jurisdiction {
    pub fn parse(s: &str) -> Self {
        match AggregateLabel::parse(s) {
            Some(label) => Jurisdiction::Aggregate(label),
            None => Jurisdiction::Country(s.to_string()),
        }
    }

    pub fn code(&self) -> &str {
        match self {
            Jurisdiction::Country(c) => c,
            Jurisdiction::Aggregate(l) => l.as_str(),
        }
    }

    pub fn is_aggregate(&self) -> bool {
        matches!(self, Jurisdiction::Aggregate(_))
    }
}

impl fmt::Display for Jurisdiction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subgroup {
    All,
    Positive,
}

impl Subgroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subgroup::All => "ALL",
            Subgroup::Positive => "POSITIVE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ALL" => Some(Subgroup::All),
            "POSITIVE" => Some(Subgroup::Positive),
            _ => None,
        }
    }
}

/// One (reporting country, partner jurisdiction, subgroup) row of CBCR
/// financials. Monetary fields are USD millions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadRecord {
    pub reporting: String,
    pub partner: Jurisdiction,
    pub subgroup: Subgroup,
    pub n_firms: u32,
    pub profit: f64,
    pub tax_accrued: f64,
    pub tax_paid: f64,
    pub employees: f64,
    pub unrelated_revenue: f64,
    pub tangible_assets: f64,
}

impl DyadRecord {
    pub fn is_domestic(&self) -> bool {
        matches!(&self.partner, Jurisdiction::Country(c) if *c == self.reporting)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IncomeGroup {
    Low,
    LowerMiddle,
    UpperMiddle,
    High,
}

impl IncomeGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            IncomeGroup::Low => "LOW",
            IncomeGroup::LowerMiddle => "LOWER_MIDDLE",
            IncomeGroup::UpperMiddle => "UPPER_MIDDLE",
            IncomeGroup::High => "HIGH",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "LOW" => Some(IncomeGroup::Low),
            "LOWER_MIDDLE" => Some(IncomeGroup::LowerMiddle),
            "UPPER_MIDDLE" => Some(IncomeGroup::UpperMiddle),
            "HIGH" => Some(IncomeGroup::High),
            _ => None,
        }
    }
}

/// Per-country covariates. `gdp` and `total_tax_revenue` are USD millions,
/// `gdp_pc` and `avg_salary` are USD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryMeta {
    pub code: String,
    pub gdp: f64,
    pub population: f64,
    pub gdp_pc: f64,
    pub avg_salary: Option<f64>,
    pub statutory_cit: f64,
    pub total_tax_revenue: Option<f64>,
    pub cit_revenue: Option<f64>,
    pub income_group: IncomeGroup,
    pub region: String,
    pub bank_claims: Option<f64>,
}

/// Country metadata table keyed by country code.
#[derive(Debug, Clone, Default)]
pub struct MetaTable {
    rows: BTreeMap<String, CountryMeta>,
}

impl MetaTable {
    pub fn new(rows: impl IntoIterator<Item = CountryMeta>) -> Self {
        MetaTable {
            rows: rows.into_iter().map(|m| (m.code.clone(), m)).collect(),
        }
    }

    pub fn get(&self, code: &str) -> Option<&CountryMeta> {
        self.rows.get(code)
    }

    pub fn require(&self, code: &str) -> Result<&CountryMeta> {
        self.get(code).ok_or_else(|| Error::MissingMeta(code.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &CountryMeta> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Reporting-side corrections: per-country completeness ratios, the China
/// factor, and wholesale substitution of one reporter's rows.
#[derive(Debug, Clone)]
pub struct CorrectionsConfig {
    pub firm_count_ratios: HashMap<String, f64>,
    pub china_factor: f64,
    pub us_substitution: Option<Vec<DyadRecord>>,
    pub apply_only_if_above_one: bool,
}

impl Default for CorrectionsConfig {
    fn default() -> Self {
        CorrectionsConfig {
            firm_count_ratios: HashMap::new(),
            china_factor: 2.0,
            us_substitution: None,
            apply_only_if_above_one: true,
        }
    }
}

pub const CBCR_HEADER: [&str; 10] = [
    "reporting",
    "partner",
    "subgroup",
    "n_firms",
    "profit_usd_m",
    "tax_accrued_usd_m",
    "tax_paid_usd_m",
    "employees",
    "unrelated_revenue_usd_m",
    "tangible_assets_usd_m",
];

pub const META_HEADER: [&str; 11] = [
    "code",
    "gdp_usd_m",
    "population",
    "gdp_pc_usd",
    "avg_salary_usd",
    "statutory_cit",
    "total_tax_rev_usd_m",
    "cit_rev_usd_m",
    "income_group",
    "region",
    "bank_claims_usd_m",
];

fn check_header(got: &csv::StringRecord, want: &[&str], path: &str) -> Result<()> {
    let got_cols: Vec<&str> = got.iter().collect();
    if got_cols != want {
        return Err(Error::SchemaMismatch(format!(
            "{path}: expected columns {want:?}, got {got_cols:?}"
        )));
    }
    Ok(())
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, line: u64, column: &str) -> Result<&'a str> {
    rec.get(idx).ok_or_else(|| Error::MalformedRow {
        line,
        column: column.to_string(),
        reason: "missing field".to_string(),
    })
}

fn parse_f64(s: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::MalformedRow {
        line,
        column: column.to_string(),
        reason: format!("not a number: '{s}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            line,
            column: column.to_string(),
            reason: format!("not finite: '{s}'"),
        });
    }
    Ok(v)
}

fn parse_opt_f64(s: &str, line: u64, column: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, line, column).map(Some)
    }
}

fn nonneg(v: f64, line: u64, column: &str) -> Result<f64> {
    if v < 0.0 {
        return Err(Error::MalformedRow {
            line,
            column: column.to_string(),
            reason: format!("must be nonnegative, got {v}"),
        });
    }
    Ok(v)
}

/// Parse a CBCR dyad table, validating the schema, per-row invariants and
/// dyad uniqueness. Aggregate partner labels are preserved verbatim.
pub fn parse_cbcr(path: impl AsRef<Path>, expected_subgroup: Subgroup) -> Result<Vec<DyadRecord>> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::SchemaMismatch(format!("{path_str}: {e}")))?;
    check_header(
        reader
            .headers()
            .map_err(|e| Error::SchemaMismatch(format!("{path_str}: {e}")))?,
        &CBCR_HEADER,
        &path_str,
    )?;

    let mut records = Vec::new();
    let mut seen: HashSet<(String, Jurisdiction, Subgroup)> = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i as u64 + 2; // 1-based, after the header
        let row = row.map_err(|e| Error::MalformedRow {
            line,
            column: "*".to_string(),
            reason: e.to_string(),
        })?;
        if row.len() != CBCR_HEADER.len() {
            return Err(Error::MalformedRow {
                line,
                column: "*".to_string(),
                reason: format!("expected {} fields, got {}", CBCR_HEADER.len(), row.len()),
            });
        }

        let reporting = field(&row, 0, line, "reporting")?.to_string();
        let partner = Jurisdiction::parse(field(&row, 1, line, "partner")?);
        let subgroup_raw = field(&row, 2, line, "subgroup")?;
        let subgroup = Subgroup::parse(subgroup_raw).ok_or_else(|| Error::MalformedRow {
            line,
            column: "subgroup".to_string(),
            reason: format!("expected ALL or POSITIVE, got '{subgroup_raw}'"),
        })?;
        if subgroup != expected_subgroup {
            return Err(Error::MalformedRow {
                line,
                column: "subgroup".to_string(),
                reason: format!(
                    "expected {}, got {}",
                    expected_subgroup.as_str(),
                    subgroup.as_str()
                ),
            });
        }

        let n_firms_raw = field(&row, 3, line, "n_firms")?;
        let n_firms: u32 = n_firms_raw.parse().map_err(|_| Error::MalformedRow {
            line,
            column: "n_firms".to_string(),
            reason: format!("not a nonnegative integer: '{n_firms_raw}'"),
        })?;

        let profit = parse_f64(field(&row, 4, line, "profit_usd_m")?, line, "profit_usd_m")?;
        if subgroup == Subgroup::Positive && profit < 0.0 {
            return Err(Error::MalformedRow {
                line,
                column: "profit_usd_m".to_string(),
                reason: format!("POSITIVE subgroup row has negative profit {profit}"),
            });
        }
        let tax_accrued = parse_f64(
            field(&row, 5, line, "tax_accrued_usd_m")?,
            line,
            "tax_accrued_usd_m",
        )?;
        let tax_paid = parse_f64(
            field(&row, 6, line, "tax_paid_usd_m")?,
            line,
            "tax_paid_usd_m",
        )?;
        let employees = nonneg(
            parse_f64(field(&row, 7, line, "employees")?, line, "employees")?,
            line,
            "employees",
        )?;
        let unrelated_revenue = parse_f64(
            field(&row, 8, line, "unrelated_revenue_usd_m")?,
            line,
            "unrelated_revenue_usd_m",
        )?;
        let tangible_assets = nonneg(
            parse_f64(
                field(&row, 9, line, "tangible_assets_usd_m")?,
                line,
                "tangible_assets_usd_m",
            )?,
            line,
            "tangible_assets_usd_m",
        )?;

        let key = (reporting.clone(), partner.clone(), subgroup);
        if !seen.insert(key) {
            return Err(Error::DuplicateDyad {
                reporting,
                partner: partner.code().to_string(),
                subgroup: subgroup.as_str().to_string(),
            });
        }

        records.push(DyadRecord {
            reporting,
            partner,
            subgroup,
            n_firms,
            profit,
            tax_accrued,
            tax_paid,
            employees,
            unrelated_revenue,
            tangible_assets,
        });
    }
    Ok(records)
}

/// Parse the country metadata table. Empty strings are missing values for
/// the nullable columns.
pub fn parse_meta(path: impl AsRef<Path>) -> Result<MetaTable> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::SchemaMismatch(format!("{path_str}: {e}")))?;
    check_header(
        reader
            .headers()
            .map_err(|e| Error::SchemaMismatch(format!("{path_str}: {e}")))?,
        &META_HEADER,
        &path_str,
    )?;

    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::MalformedRow {
            line,
            column: "*".to_string(),
            reason: e.to_string(),
        })?;
        let code = field(&row, 0, line, "code")?.to_string();
        let gdp = parse_f64(field(&row, 1, line, "gdp_usd_m")?, line, "gdp_usd_m")?;
        let population = parse_f64(field(&row, 2, line, "population")?, line, "population")?;
        if gdp <= 0.0 || population <= 0.0 {
            return Err(Error::MalformedRow {
                line,
                column: "gdp_usd_m".to_string(),
                reason: "gdp and population must be positive".to_string(),
            });
        }
        let gdp_pc = parse_f64(field(&row, 3, line, "gdp_pc_usd")?, line, "gdp_pc_usd")?;
        let implied = gdp * 1e6 / population;
        if gdp_pc > 0.0 && (gdp_pc - implied).abs() > 0.01 * implied {
            return Err(Error::MalformedRow {
                line,
                column: "gdp_pc_usd".to_string(),
                reason: format!("gdp_pc {gdp_pc} inconsistent with gdp/population {implied:.2}"),
            });
        }
        let avg_salary = parse_opt_f64(
            field(&row, 4, line, "avg_salary_usd")?,
            line,
            "avg_salary_usd",
        )?;
        if let Some(s) = avg_salary {
            if s <= 0.0 {
                return Err(Error::MalformedRow {
                    line,
                    column: "avg_salary_usd".to_string(),
                    reason: format!("salary must be positive, got {s}"),
                });
            }
        }
        let statutory_cit = parse_f64(
            field(&row, 5, line, "statutory_cit")?,
            line,
            "statutory_cit",
        )?;
        if !(0.0..=1.0).contains(&statutory_cit) {
            return Err(Error::MalformedRow {
                line,
                column: "statutory_cit".to_string(),
                reason: format!("rate must be in [0,1], got {statutory_cit}"),
            });
        }
        let total_tax_revenue = parse_opt_f64(
            field(&row, 6, line, "total_tax_rev_usd_m")?,
            line,
            "total_tax_rev_usd_m",
        )?;
        let cit_revenue = parse_opt_f64(
            field(&row, 7, line, "cit_rev_usd_m")?,
            line,
            "cit_rev_usd_m",
        )?;
        let income_raw = field(&row, 8, line, "income_group")?;
        let income_group = IncomeGroup::parse(income_raw).ok_or_else(|| Error::MalformedRow {
            line,
            column: "income_group".to_string(),
            reason: format!("unknown income group '{income_raw}'"),
        })?;
        let region = field(&row, 9, line, "region")?.to_string();
        let bank_claims = parse_opt_f64(
            field(&row, 10, line, "bank_claims_usd_m")?,
            line,
            "bank_claims_usd_m",
        )?;
        rows.push(CountryMeta {
            code,
            gdp,
            population,
            gdp_pc,
            avg_salary,
            statutory_cit,
            total_tax_revenue,
            cit_revenue,
            income_group,
            region,
            bank_claims,
        });
    }
    Ok(MetaTable::new(rows))
}

/// Serialize dyads back to the CBCR CSV schema.
pub fn write_cbcr(path: impl AsRef<Path>, records: &[DyadRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path.display().to_string(), io),
        other => Error::SchemaMismatch(format!("{other:?}")),
    })?;
    w.write_record(CBCR_HEADER)
        .map_err(|e| Error::SchemaMismatch(e.to_string()))?;
    for r in records {
        w.write_record(&[
            r.reporting.clone(),
            r.partner.code().to_string(),
            r.subgroup.as_str().to_string(),
            r.n_firms.to_string(),
            r.profit.to_string(),
            r.tax_accrued.to_string(),
            r.tax_paid.to_string(),
            r.employees.to_string(),
            r.unrelated_revenue.to_string(),
            r.tangible_assets.to_string(),
        ])
        .map_err(|e| Error::SchemaMismatch(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serialize the metadata table back to the meta CSV schema.
pub fn write_meta(path: impl AsRef<Path>, meta: &MetaTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path.display().to_string(), io),
        other => Error::SchemaMismatch(format!("{other:?}")),
    })?;
    w.write_record(META_HEADER)
        .map_err(|e| Error::SchemaMismatch(e.to_string()))?;
    for m in meta.iter() {
        w.write_record(&[
            m.code.clone(),
            m.gdp.to_string(),
            m.population.to_string(),
            m.gdp_pc.to_string(),
            opt_str(m.avg_salary),
            m.statutory_cit.to_string(),
            opt_str(m.total_tax_revenue),
            opt_str(m.cit_revenue),
            m.income_group.as_str().to_string(),
            m.region.clone(),
            opt_str(m.bank_claims),
        ])
        .map_err(|e| Error::SchemaMismatch(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn scale_record(r: &mut DyadRecord, ratio: f64) {
    r.profit *= ratio;
    r.tax_accrued *= ratio;
    r.tax_paid *= ratio;
    r.employees *= ratio;
    r.unrelated_revenue *= ratio;
    r.tangible_assets *= ratio;
    // n_firms intentionally unchanged: the ratio corrects for unreported
    // firms, it does not change the observed count.
}

/// Apply completeness ratios, the China factor and the optional wholesale
/// US substitution. Countries absent from the data are skipped.
pub fn apply_corrections(records: &[DyadRecord], cfg: &CorrectionsConfig) -> Vec<DyadRecord> {
    let mut out: Vec<DyadRecord> = Vec::with_capacity(records.len());

    if let Some(replacement) = &cfg.us_substitution {
        out.extend(records.iter().filter(|r| r.reporting != "USA").cloned());
        out.extend(replacement.iter().cloned());
    } else {
        out.extend(records.iter().cloned());
    }

    for r in &mut out {
        let ratio = if r.reporting == "CHN" {
            Some(cfg.china_factor)
        } else {
            cfg.firm_count_ratios.get(&r.reporting).copied()
        };
        if let Some(ratio) = ratio {
            let applies = !cfg.apply_only_if_above_one || ratio > 1.0;
            if applies && ratio != 1.0 {
                scale_record(r, ratio);
            }
        }
    }
    out
}

/// The nine-haven list plus Jersey and Puerto Rico, used as the default
/// offshore-centre set for sample selection.
pub fn default_ofc_list() -> BTreeSet<String> {
    ["BMU", "IRL", "LUX", "NLD", "CHE", "CYM", "VGB", "HKG", "SGP", "JEY", "PRI"]
        .into_iter()
        .map(str::to_string)
        .collect()
}

/// Select reporting countries whose partner set covers at least `min_ofcs`
/// members of `ofc_list`.
pub fn select_sample(
    records: &[DyadRecord],
    ofc_list: &BTreeSet<String>,
    min_ofcs: usize,
) -> Result<BTreeSet<String>> {
    if min_ofcs > 0 && ofc_list.is_empty() {
        return Err(Error::EmptyOfcList { min_ofcs });
    }
    let mut coverage: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        let entry = coverage.entry(r.reporting.as_str()).or_default();
        if let Jurisdiction::Country(c) = &r.partner {
            if ofc_list.contains(c) {
                entry.insert(c.as_str());
            }
        }
    }
    Ok(coverage
        .into_iter()
        .filter(|(_, ofcs)| ofcs.len() >= min_ofcs)
        .map(|(rep, _)| rep.to_string())
        .collect())
}
