//! CSV report tables.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{
    improvement_scores, mean_rank, welch_t_test, AggregationResult, EvalError, ImprovementScore,
    Quartile, QuartileAssignment, RankFilter, SurveyItem, VieScore,
};
use crate::artifact::write_atomic;
use crate::corpus::{Country, CultureNoun};
use crate::refinement::ConfigId;

pub const TABLE2_FILE: &str = "table2.csv";
pub const QUARTILES_FILE: &str = "quartiles.csv";
pub const IMPROVEMENT_FILE: &str = "improvement.csv";
pub const TTEST_FILE: &str = "ttest.csv";
pub const COUNTRY_QUARTILES_FILE: &str = "country_quartiles.csv";

/// One metric row of the configuration grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub metric: String,
    pub values: [Option<f64>; 4],
}

/// Mean rank per survey item and configuration, plus optional judge rows.
type VieField = fn(&VieScore) -> f64;

pub fn table2(agg: &AggregationResult, vie: &[(ConfigId, VieScore)]) -> Vec<GridRow> {
    let mut rows: Vec<GridRow> = SurveyItem::ALL
        .into_iter()
        .map(|item| GridRow {
            metric: item.code().to_string(),
            values: ConfigId::ALL.map(|c| mean_rank(agg, c, &RankFilter::item(item)).ok()),
        })
        .collect();
    if !vie.is_empty() {
        let pick: [(&str, VieField); 3] = [
            ("vie_sc", |v| v.sc),
            ("vie_pq", |v| v.pq),
            ("vie_overall", |v| v.overall),
        ];
        for (metric, f) in pick {
            let values = ConfigId::ALL.map(|c| {
                let xs: Vec<f64> = vie
                    .iter()
                    .filter(|(k, _)| *k == c)
                    .map(|(_, v)| f(v))
                    .collect();
                (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
            });
            rows.push(GridRow {
                metric: metric.to_string(),
                values,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct TTestRow {
    pub item: String,
    pub n_uc: usize,
    pub n_rc: usize,
    pub mean_uc: Option<f64>,
    pub mean_rc: Option<f64>,
    pub result: Result<super::TTestResult, String>,
}

/// Compares UC against RC improvement values, per item and pooled.
pub fn ttest_rows(scores: &[ImprovementScore], quartiles: &[QuartileAssignment]) -> Vec<TTestRow> {
    let uc: HashMap<&str, bool> = quartiles
        .iter()
        .map(|q| (q.noun_id.as_str(), q.uc))
        .collect();
    let mean = |x: &[f64]| (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64);
    let mut selections: Vec<(String, Option<SurveyItem>)> = SurveyItem::ALL
        .iter()
        .map(|i| (i.code().to_string(), Some(*i)))
        .collect();
    selections.push(("all".to_string(), None));
    selections
        .into_iter()
        .map(|(label, item)| {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for s in scores.iter().filter(|s| item.is_none_or(|i| s.item == i)) {
                match uc.get(s.noun_id.as_str()) {
                    Some(true) => a.push(s.value),
                    Some(false) => b.push(s.value),
                    None => {}
                }
            }
            TTestRow {
                item: label,
                n_uc: a.len(),
                n_rc: b.len(),
                mean_uc: mean(&a),
                mean_rc: mean(&b),
                result: welch_t_test(&a, &b).map_err(|e| e.to_string()),
            }
        })
        .collect()
}

pub fn country_quartiles(
    quartiles: &[QuartileAssignment],
    nouns: &[CultureNoun],
) -> BTreeMap<Country, [usize; 4]> {
    let country: HashMap<&str, Country> =
        nouns.iter().map(|n| (n.id.as_str(), n.country)).collect();
    let mut out = BTreeMap::new();
    for q in quartiles {
        if let Some(c) = country.get(q.noun_id.as_str()) {
            out.entry(*c).or_insert([0; 4])[q.group.index()] += 1;
        }
    }
    out
}

fn fmt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn csv_bytes(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| EvalError::Io(e.into_error()))
}

/// Everything `write_report` needs.
pub struct ReportInput<'a> {
    pub aggregation: &'a AggregationResult,
    pub quartiles: &'a [QuartileAssignment],
    pub nouns: &'a [CultureNoun],
    pub vie: &'a [(ConfigId, VieScore)],
    /// Configuration compared against the base in improvement and t-test tables.
    pub compare: ConfigId,
    /// Improvement values above this are flagged in the improvement table.
    pub parity_threshold: f64,
}

/// Writes the five report CSVs into `dir` and returns their file names.
pub fn write_report(dir: &Path, input: &ReportInput<'_>) -> Result<Vec<&'static str>, EvalError> {
    let grid = table2(input.aggregation, input.vie);
    let mut header = vec!["metric"];
    header.extend(ConfigId::ALL.iter().map(|c| c.code()));
    let bytes = csv_bytes(
        &header,
        grid.into_iter().map(|r| {
            let mut row = vec![r.metric];
            row.extend(r.values.into_iter().map(fmt));
            row
        }),
    )?;
    write_atomic(&dir.join(TABLE2_FILE), &bytes)?;

    let by_id: HashMap<&str, &CultureNoun> =
        input.nouns.iter().map(|n| (n.id.as_str(), n)).collect();
    let country_of = |id: &str| {
        by_id
            .get(id)
            .map(|n| n.country.code().to_string())
            .unwrap_or_default()
    };
    let bytes = csv_bytes(
        &["noun_id", "country", "count", "group", "uc"],
        input.quartiles.iter().map(|q| {
            vec![
                q.noun_id.clone(),
                country_of(&q.noun_id),
                q.count.to_string(),
                q.group.to_string(),
                q.uc.to_string(),
            ]
        }),
    )?;
    write_atomic(&dir.join(QUARTILES_FILE), &bytes)?;

    let scores = improvement_scores(input.aggregation, input.compare)?;
    let group: HashMap<&str, Quartile> = input
        .quartiles
        .iter()
        .map(|q| (q.noun_id.as_str(), q.group))
        .collect();
    let bytes = csv_bytes(
        &[
            "noun_id",
            "country",
            "group",
            "uc",
            "item",
            "value",
            "above_threshold",
        ],
        scores.iter().map(|s| {
            let g = group.get(s.noun_id.as_str());
            vec![
                s.noun_id.clone(),
                country_of(&s.noun_id),
                g.map(|g| g.to_string()).unwrap_or_default(),
                g.map(|g| g.is_uc().to_string()).unwrap_or_default(),
                s.item.to_string(),
                format!("{:.6}", s.value),
                (s.value > input.parity_threshold).to_string(),
            ]
        }),
    )?;
    write_atomic(&dir.join(IMPROVEMENT_FILE), &bytes)?;

    let bytes = csv_bytes(
        &[
            "item", "n_uc", "n_rc", "mean_uc", "mean_rc", "t", "df", "p", "status",
        ],
        ttest_rows(&scores, input.quartiles).into_iter().map(|r| {
            let (t, df, p, status) = match &r.result {
                Ok(t) => (
                    format!("{:.6}", t.t_statistic),
                    format!("{:.6}", t.df),
                    format!("{:.6}", t.p_value),
                    "ok".to_string(),
                ),
                Err(e) => (String::new(), String::new(), String::new(), e.clone()),
            };
            vec![
                r.item,
                r.n_uc.to_string(),
                r.n_rc.to_string(),
                fmt(r.mean_uc),
                fmt(r.mean_rc),
                t,
                df,
                p,
                status,
            ]
        }),
    )?;
    write_atomic(&dir.join(TTEST_FILE), &bytes)?;

    let bytes = csv_bytes(
        &["country", "Q1", "Q2", "Q3", "Q4"],
        country_quartiles(input.quartiles, input.nouns)
            .into_iter()
            .map(|(c, counts)| {
                let mut row = vec![c.code().to_string()];
                row.extend(counts.iter().map(|n| n.to_string()));
                row
            }),
    )?;
    write_atomic(&dir.join(COUNTRY_QUARTILES_FILE), &bytes)?;

    Ok(vec![
        TABLE2_FILE,
        QUARTILES_FILE,
        IMPROVEMENT_FILE,
        TTEST_FILE,
        COUNTRY_QUARTILES_FILE,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::shipped_registry;
    use crate::evaluation::{
        assign_quartiles, AggregatedLabel, AggregationMethod, FrequencyRecord,
    };

    #[test]
    fn us_dominant_captions_put_us_in_q4() {
        let reg = shipped_registry();
        let freqs: Vec<FrequencyRecord> = reg
            .nouns()
            .iter()
            .enumerate()
            .map(|(i, n)| FrequencyRecord {
                noun_id: n.id.clone(),
                count: if n.country == Country::US {
                    1000 + i as u64
                } else {
                    (i % 17) as u64
                },
            })
            .collect();
        let q = assign_quartiles(&freqs).unwrap();
        let cq = country_quartiles(&q, reg.nouns());
        assert_eq!(cq[&Country::US], [0, 0, 0, 25]);
        assert_eq!(
            cq.values().map(|v| v.iter().sum::<usize>()).sum::<usize>(),
            200
        );
    }

    #[test]
    fn report_files_have_grid_shape() {
        let reg = shipped_registry();
        let nouns: Vec<CultureNoun> = reg.nouns()[..8].to_vec();
        let mut labels = Vec::new();
        for (k, n) in nouns.iter().enumerate() {
            for item in SurveyItem::ALL {
                for (ci, c) in ConfigId::ALL.into_iter().enumerate() {
                    labels.push(AggregatedLabel {
                        page_id: None,
                        noun_id: n.id.clone(),
                        item,
                        config_id: c,
                        label: ((ci + k) % 4) as u8 + 1,
                    });
                }
            }
        }
        let agg = AggregationResult {
            method: AggregationMethod::MmsrPlusVote,
            labels,
            skills: vec![],
        };
        let freqs: Vec<FrequencyRecord> = nouns
            .iter()
            .enumerate()
            .map(|(i, n)| FrequencyRecord {
                noun_id: n.id.clone(),
                count: i as u64,
            })
            .collect();
        let q = assign_quartiles(&freqs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let vie = [(ConfigId::Base, VieScore::new(4.0, 9.0))];
        let files = write_report(
            dir.path(),
            &ReportInput {
                aggregation: &agg,
                quartiles: &q,
                nouns: &nouns,
                vie: &vie,
                compare: ConfigId::CTrip5,
                parity_threshold: 0.45,
            },
        )
        .unwrap();
        assert_eq!(files.len(), 5);
        let t2 = std::fs::read_to_string(dir.path().join(TABLE2_FILE)).unwrap();
        let lines: Vec<&str> = t2.lines().collect();
        assert_eq!(lines[0], "metric,base,ctrip0,ctrip3,ctrip5");
        assert_eq!(lines.len(), 1 + 4 + 3);
        assert!(lines[7].starts_with("vie_overall,6.000000,,,"));
        let imp = std::fs::read_to_string(dir.path().join(IMPROVEMENT_FILE)).unwrap();
        assert_eq!(imp.lines().count(), 1 + 8 * 4);
        let tt = std::fs::read_to_string(dir.path().join(TTEST_FILE)).unwrap();
        assert_eq!(tt.lines().count(), 1 + 5);
    }
}
