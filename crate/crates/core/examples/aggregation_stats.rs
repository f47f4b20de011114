//! Aggregates simulated rankings with MMSR, then compares the improvement
//! of rarely and frequently captioned nouns with Welch's t-test.

use std::collections::HashMap;

use chrono::Utc;
use ctrip::corpus::Country;
use ctrip::evaluation::{
    improvement_scores, mean_rank, mmsr_aggregate, mmsr_plus_vote, welch_t_test, MmsrOptions,
    RankFilter, SurveyResponse,
};
use ctrip::pipeline::simulate_responses;
use ctrip::refinement::ConfigId;
use ctrip::survey::{PageSlot, Slot, SurveyPage};

fn main() -> anyhow::Result<()> {
    let pages: Vec<SurveyPage> = (0..12)
        .map(|i| SurveyPage {
            page_id: format!("pg-n{i:02}"),
            noun_id: format!("n{i:02}"),
            country: Country::VN,
            prompt_id: format!("n{i:02}-t01"),
            base_prompt: format!("A photo of noun {i}"),
            slots: Slot::ALL
                .into_iter()
                .zip(ConfigId::ALL)
                .map(|(slot, config_id)| PageSlot {
                    slot,
                    config_id,
                    image: String::new(),
                })
                .collect(),
        })
        .collect();
    let stored = simulate_responses(&pages, 8, 15, 11, Utc::now());
    let responses: Vec<SurveyResponse> = stored.into_iter().map(|s| s.response).collect();
    println!("{} responses", responses.len());

    let opts = MmsrOptions::default();
    let page_level = mmsr_aggregate(&responses, &opts)?;
    for s in &page_level.skills {
        println!("  {}  skill {:.3}", s.participant_id, s.skill);
    }
    let agg = mmsr_plus_vote(&responses, &opts)?;
    for c in ConfigId::ALL {
        println!(
            "mean rank {c}: {:.3}",
            mean_rank(&agg, c, &RankFilter::default())?
        );
    }

    // pretend the first half of the nouns are rarely captioned
    let scores = improvement_scores(&agg, ConfigId::CTrip5)?;
    let mut groups: HashMap<bool, Vec<f64>> = HashMap::new();
    for s in &scores {
        let rare = s.noun_id.as_str() < "n06";
        groups.entry(rare).or_default().push(s.value);
    }
    let t = welch_t_test(&groups[&true], &groups[&false])?;
    println!(
        "UC vs RC: t = {:.3}, df = {:.2}, p = {:.4}",
        t.t_statistic, t.df, t.p_value
    );
    Ok(())
}
