//! One line per acceptance criterion; exits non-zero if any fails.
#![allow(
    clippy::approx_constant,
    clippy::type_complexity,
    clippy::neg_cmp_op_on_partial_ord
)]

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use ctrip::backend::Step;
use ctrip::corpus::{
    expand_prompts, shipped_registry, shipped_templates, BasePrompt, Category, Country,
    CultureNoun, NounForm,
};
use ctrip::evaluation::{
    assign_quartiles, majority_vote, mmsr_aggregate, normalized_improvement, welch_t_test,
    FrequencyRecord, MmsrOptions, Quartile, SurveyItem, SurveyResponse,
};
use ctrip::generation::{read_manifest, EntryStatus};
use ctrip::pipeline::dry_run;
use ctrip::refinement::{
    apply_configuration, refine_loop, ConfigId, CountingBackend, Criterion, MockCompletion,
    PromptTemplates, RefinementSettings, RefinerConfig, ScriptedBackend, StopReason,
};
use ctrip::retrieval::{
    FixtureEncyclopedia, FixtureWebSearch, InfoSource, RawInfo, RetrievalConfig, Retriever,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(took)
}

// ---------------------------------------------------------------- registry

fn registry_expansion() -> Outcome {
    let start = Instant::now();
    let reg = shipped_registry();
    ensure!(reg.len() == 200, "registry has {} nouns", reg.len());
    for country in Country::ALL {
        let n = reg.by_country(country).count();
        ensure!(n == 25, "{country:?} has {n} nouns");
        let mut hist = [0usize; 8];
        for noun in reg.by_country(country) {
            hist[Category::ALL
                .iter()
                .position(|c| *c == noun.category)
                .unwrap()] += 1;
        }
        ensure!(
            hist == [3, 5, 4, 2, 1, 5, 3, 2],
            "{country:?} histogram {hist:?}"
        );
    }
    let templates = shipped_templates();
    ensure!(templates.len() == 50, "{} templates", templates.len());
    let prompts = expand_prompts(reg.nouns(), &templates).map_err(|e| e.to_string())?;
    ensure!(prompts.len() == 10_000, "{} prompts", prompts.len());
    let took = within(Duration::from_secs(5), start)?;
    Ok(format!("200 nouns, 10000 prompts in {took:.2?}"))
}

// ------------------------------------------------------------ refine loop

fn noun() -> CultureNoun {
    CultureNoun::new(
        "kr_onggi",
        "Onggi",
        Country::KR,
        Category::UtensilsTools,
        NounForm::Transliteration,
    )
}

fn info() -> RawInfo {
    RawInfo::new(
        "kr_onggi",
        InfoSource::Encyclopedia,
        "Onggi is Korean earthenware used for storing and fermenting food. ".repeat(10),
        Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
    )
}

fn base() -> BasePrompt {
    BasePrompt {
        prompt_id: "kr_onggi-t01".into(),
        noun_id: "kr_onggi".into(),
        template_id: 1,
        text: "A photo of Onggi in a courtyard".into(),
    }
}

fn loop_contract() -> Outcome {
    let mut cases = 0;
    for cfg in [RefinerConfig::full(), RefinerConfig::cultural()] {
        let th = cfg.threshold;
        let mut scripts: Vec<(String, Vec<u32>, usize, StopReason)> = vec![
            (
                "immediate".into(),
                vec![th + 1],
                1,
                StopReason::ThresholdReached,
            ),
            ("never".into(), vec![th / 2], 5, StopReason::MaxIterations),
            ("boundary".into(), vec![th], 5, StopReason::MaxIterations),
        ];
        for k in 1..=5 {
            let mut totals = vec![th; k - 1];
            totals.push(th + 1);
            scripts.push((
                format!("pass-at-{k}"),
                totals,
                k,
                StopReason::ThresholdReached,
            ));
        }
        for (name, totals, iters, reason) in scripts {
            let b = ScriptedBackend::new(totals.clone(), &cfg.criteria);
            let t = refine_loop(
                &noun(),
                &info(),
                &base(),
                &cfg,
                &PromptTemplates::shipped(),
                &b,
            )
            .map_err(|e| format!("{name}: {e}"))?;
            let tag = format!("{name} (threshold {th})");
            ensure!(
                t.iterations.len() == iters,
                "{tag}: {} iterations",
                t.iterations.len()
            );
            ensure!(t.stop_reason == reason, "{tag}: {:?}", t.stop_reason);
            ensure!(b.calls(Step::Refine) == iters, "{tag}: refine calls");
            ensure!(b.calls(Step::Score) == iters, "{tag}: score calls");
            ensure!(
                b.calls(Step::Feedback) == iters - 1,
                "{tag}: feedback calls"
            );
            for (i, it) in t.iterations.iter().enumerate() {
                let last = i + 1 == iters;
                ensure!(it.feedback.is_none() == last, "{tag}: feedback at {i}");
                ensure!(
                    (it.score.total > th) == (last && reason == StopReason::ThresholdReached),
                    "{tag}: pass semantics at {i}"
                );
            }
            ensure!(
                t.final_prompt == t.iterations.last().unwrap().refined.text,
                "{tag}: final prompt"
            );
            cases += 1;
        }
    }
    Ok(format!("{cases}/{cases} scripted cases"))
}

fn configuration_discipline() -> Outcome {
    let settings = RefinementSettings::default();
    let templates = PromptTemplates::shipped();
    let mut summary = Vec::new();
    for (config, n, max, th) in [(ConfigId::CTrip3, 3, 30, 24), (ConfigId::CTrip5, 5, 50, 40)] {
        let rc = settings.refiner_config(config).unwrap();
        ensure!(
            rc.criteria.len() == n && rc.max_total() == max && rc.threshold == th,
            "{config}: {} criteria, max {}, threshold {}",
            rc.criteria.len(),
            rc.max_total(),
            rc.threshold
        );
        let b = MockCompletion::new();
        let out = apply_configuration(
            config,
            &noun(),
            Some(&info()),
            &base(),
            &settings,
            &templates,
            &b,
        )
        .map_err(|e| e.to_string())?;
        let trace = out.trace.ok_or("no trace")?;
        ensure!(
            trace.threshold == th,
            "{config}: trace threshold {}",
            trace.threshold
        );
        for it in &trace.iterations {
            ensure!(
                it.score.scores.len() == n,
                "{config}: {} criteria scored",
                it.score.scores.len()
            );
            ensure!(it.score.total <= max, "{config}: total {}", it.score.total);
        }
        if config == ConfigId::CTrip3 {
            ensure!(
                trace.iterations.iter().all(|it| it
                    .score
                    .scores
                    .keys()
                    .all(|c| Criterion::CULTURAL.contains(c))),
                "CTrip3 scored a visual criterion"
            );
        }
        summary.push(format!("{config}: {n} criteria/{th}"));
    }
    for config in [ConfigId::CTrip0, ConfigId::Base] {
        let b = CountingBackend::new(MockCompletion::new());
        let out = apply_configuration(
            config,
            &noun(),
            Some(&info()),
            &base(),
            &settings,
            &templates,
            &b,
        )
        .map_err(|e| e.to_string())?;
        ensure!(b.total() == 0, "{config} made {} completions", b.total());
        ensure!(out.trace.is_none(), "{config} has a trace");
    }
    summary.push("ctrip0: 0 completions".into());
    Ok(summary.join(", "))
}

// -------------------------------------------------------------------- MMSR

struct Simulation {
    responses: Vec<SurveyResponse>,
    truth: HashMap<(String, ConfigId), u8>,
    skills: BTreeMap<String, f64>,
}

/// One-coin workers over 50 pages × 4 configurations = 200 tasks, every
/// worker answering every page. A worker
/// with per-task accuracy p copies the true ranking with probability
/// (4p - 1) / 3 and otherwise submits a uniformly random ranking, which
/// makes each task label correct with probability exactly p and uniform over
/// the other three labels when wrong.
fn simulate(seed: u64) -> Simulation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = HashMap::new();
    let pages: Vec<(String, [u8; 4])> = (0..50)
        .map(|p| {
            let mut r = [1u8, 2, 3, 4];
            r.shuffle(&mut rng);
            (format!("pg-{p:02}"), r)
        })
        .collect();
    for (id, r) in &pages {
        for (c, l) in ConfigId::ALL.into_iter().zip(r) {
            truth.insert((id.clone(), c), *l);
        }
    }
    let mut responses = Vec::new();
    let mut skills = BTreeMap::new();
    for w in 0..30 {
        let name = format!("w{w:02}");
        let p: f64 = rng.random_range(0.55..0.95);
        skills.insert(name.clone(), p);
        let copy = (4.0 * p - 1.0) / 3.0;
        for (id, r) in &pages {
            let ranks = if rng.random_bool(copy) {
                *r
            } else {
                let mut x = [1u8, 2, 3, 4];
                x.shuffle(&mut rng);
                x
            };
            responses.push(SurveyResponse {
                participant_id: name.clone(),
                page_id: id.clone(),
                noun_id: format!("noun-{id}"),
                item: SurveyItem::CulturalRepresentation,
                ranks: ConfigId::ALL.into_iter().zip(ranks).collect(),
            });
        }
    }
    Simulation {
        responses,
        truth,
        skills,
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn mmsr_oracle() -> Outcome {
    let start = Instant::now();
    let opts = MmsrOptions::default();
    let mut corrs = Vec::new();
    let mut not_worse = 0;
    let (mut acc_mmsr, mut acc_mv) = (0.0, 0.0);
    for seed in 0..100 {
        let sim = simulate(seed);
        let out = mmsr_aggregate(&sim.responses, &opts).map_err(|e| format!("seed {seed}: {e}"))?;
        let est: Vec<f64> = out.skills.iter().map(|s| s.skill).collect();
        let planted: Vec<f64> = out
            .skills
            .iter()
            .map(|s| sim.skills[&s.participant_id])
            .collect();
        corrs.push(pearson(&est, &planted));

        let mut votes: HashMap<(String, ConfigId), Vec<u8>> = HashMap::new();
        for r in &sim.responses {
            for (c, l) in &r.ranks {
                votes.entry((r.page_id.clone(), *c)).or_default().push(*l);
            }
        }
        ensure!(
            out.labels.len() == votes.len(),
            "seed {seed}: {} labels for {} tasks",
            out.labels.len(),
            votes.len()
        );
        let mut m_ok = 0;
        for l in &out.labels {
            let key = (l.page_id.clone().unwrap(), l.config_id);
            m_ok += usize::from(l.label == sim.truth[&key]);
        }
        let v_ok = votes
            .iter()
            .filter(|(k, v)| majority_vote(v) == Some(sim.truth[*k]))
            .count();
        let n = votes.len() as f64;
        acc_mmsr += m_ok as f64 / n;
        acc_mv += v_ok as f64 / n;
        not_worse += usize::from(m_ok >= v_ok);
    }
    corrs.sort_by(f64::total_cmp);
    let median = (corrs[49] + corrs[50]) / 2.0;
    ensure!(median >= 0.9, "median skill correlation {median:.3}");
    ensure!(not_worse >= 95, "MMSR ≥ MV in only {not_worse}/100 seeds");

    // exact cases: unanimity, and symmetric workers reduce to plain voting
    let resp = |w: &str, page: &str, r: [u8; 4]| SurveyResponse {
        participant_id: w.into(),
        page_id: page.into(),
        noun_id: "n".into(),
        item: SurveyItem::Offensiveness,
        ranks: ConfigId::ALL.into_iter().zip(r).collect(),
    };
    let unanimous: Vec<_> = ["a", "b", "c", "d", "e"]
        .iter()
        .flat_map(|w| [resp(w, "p1", [2, 4, 1, 3]), resp(w, "p2", [3, 1, 4, 2])])
        .collect();
    let u = mmsr_aggregate(&unanimous, &opts).map_err(|e| e.to_string())?;
    ensure!(
        u.skills.iter().all(|s| (s.skill - 1.0).abs() < 1e-6),
        "unanimous skills {:?}",
        u.skills
    );
    for l in &u.labels {
        let page = l.page_id.as_deref().unwrap();
        let expected = unanimous.iter().find(|r| r.page_id == page).unwrap().ranks[&l.config_id];
        ensure!(l.label == expected, "unanimous label differs");
    }
    let mut symmetric = Vec::new();
    for w in 0..4 {
        for p in 0..4 {
            let r = if p == w { [2, 1, 4, 3] } else { [1, 2, 3, 4] };
            symmetric.push(resp(&format!("w{w}"), &format!("p{p}"), r));
        }
    }
    let s = mmsr_aggregate(&symmetric, &opts).map_err(|e| e.to_string())?;
    let s0 = s.skills[0].skill;
    ensure!(
        s.skills.iter().all(|x| (x.skill - s0).abs() < 1e-9),
        "symmetric skills differ"
    );
    for l in &s.labels {
        let page = l.page_id.as_deref().unwrap();
        let plain: Vec<u8> = symmetric
            .iter()
            .filter(|r| r.page_id == page)
            .map(|r| r.ranks[&l.config_id])
            .collect();
        ensure!(
            Some(l.label) == majority_vote(&plain),
            "symmetric case differs from majority vote"
        );
    }
    let took = within(Duration::from_secs(60), start)?;
    Ok(format!(
        "median r = {median:.3}, MMSR ≥ MV in {not_worse}/100 (mean acc {:.3} vs {:.3}), {took:.2?}",
        acc_mmsr / 100.0,
        acc_mv / 100.0
    ))
}

// -------------------------------------------------------------- statistics

/// (a, b, t, p, df) from scipy.stats.ttest_ind(a, b, equal_var=False).
const SCIPY_WELCH: [(&[f64], &[f64], f64, f64, f64); 20] = [
    (
        &[1.0, 2.0, 3.0],
        &[4.0, 5.0, 6.0],
        -3.6742346141747673,
        0.021311641128756727,
        4.0,
    ),
    (
        &[
            -2.549, -0.862, -0.162, -2.228, -0.774, 1.307, 2.337, 0.216, 0.275, -1.785, -2.074,
        ],
        &[2.828, -1.125, -2.722],
        -0.13588763254549147,
        0.9027604718806338,
        2.3306276774133576,
    ),
    (
        &[2.522, -0.288, -0.233, -2.382, 0.184, 2.681],
        &[-0.14, -0.446, 0.049, 0.062, 0.222],
        0.5875719770572292,
        0.5813522395760196,
        5.212687080767126,
    ),
    (
        &[
            -0.483, -1.722, -0.757, -0.316, -1.036, -0.62, -2.029, -1.394, -0.142, -1.635, -0.173,
            -1.824, -1.435, -1.587,
        ],
        &[-1.536, 0.154, 3.601, -0.106, -1.058, 1.24, 0.074],
        -2.139702412860537,
        0.07012149657203268,
        6.91898000554996,
    ),
    (
        &[-1.713, -0.502, -2.756],
        &[1.293, 0.118, 0.741, 1.196],
        -3.5409689783824905,
        0.045705493266158484,
        2.6842492101896958,
    ),
    (
        &[
            -0.57, -1.06, -1.333, 0.337, -0.425, -2.632, -0.312, 1.225, -0.463, -2.453, -0.273,
            0.873, 0.138,
        ],
        &[
            0.398, -0.48, -0.079, -0.264, -0.093, 0.202, -0.076, -0.398, -0.723, -0.793, -0.448,
            0.072, -0.304, -0.413,
        ],
        -0.8919489086616151,
        0.3875363854769409,
        13.960090917105074,
    ),
    (
        &[
            0.256, -0.123, 0.566, 0.244, 1.474, 0.685, 0.643, 0.071, 0.881, 0.478, 1.254, 1.129,
            0.41, 0.938,
        ],
        &[3.071, 2.212, 1.055, 0.67, -1.947, -1.835, 1.145],
        0.016090299901221246,
        0.9876556694821401,
        6.355464430888028,
    ),
    (
        &[0.359, 0.594, -0.63, -0.402, -0.015, -0.737],
        &[
            -1.079, -0.944, 0.82, 1.785, 0.92, 1.141, -0.511, -0.591, 3.406, 0.855, 0.795, 3.005,
            3.662,
        ],
        -2.3423775539022667,
        0.0321564101809581,
        16.304479158593335,
    ),
    (
        &[-0.088, -0.383],
        &[-0.254, -0.662, 0.194, -1.9, -0.412, -0.183],
        0.9091003006252775,
        0.39859287705285795,
        5.955446117728532,
    ),
    (
        &[
            -1.134, -3.267, 1.28, -0.238, -2.134, -0.234, 0.835, 2.063, -0.258,
        ],
        &[
            -2.332, -1.125, 0.007, -0.202, -0.644, -0.824, 0.661, -0.343, 0.14, -0.256, -1.076,
        ],
        0.33348494634551346,
        0.7450530915516447,
        10.974212255730993,
    ),
    (
        &[
            -1.655, -2.423, -1.983, -2.092, 1.965, -0.419, 0.342, -4.618, -2.723, 2.215,
        ],
        &[-1.293, 0.365, -1.063, 0.237, -1.13, -0.328],
        -0.8123772394449191,
        0.43242446415166313,
        11.978350767885548,
    ),
    (
        &[-1.598, -3.432, -0.232, -1.471, 4.069, 1.778, 2.598],
        &[1.505, 0.817, -2.743, -2.952],
        0.7059004760123977,
        0.5025875932727304,
        7.152593860431102,
    ),
    (
        &[-0.367, 1.214, 0.852],
        &[-5.407, 0.577],
        0.9839457828589876,
        0.49867290067064096,
        1.0514034898043825,
    ),
    (
        &[-5.293, -2.271, 1.739, -3.033],
        &[
            0.347, 0.585, 0.709, 1.021, 0.855, 0.269, 1.098, 1.029, -0.148, 0.784, 0.852,
        ],
        -1.9638299398310082,
        0.14319014943085917,
        3.03711032813459,
    ),
    (
        &[-0.678, -1.374, -0.636, 0.208, -0.312],
        &[
            -2.561, -2.718, 0.724, -1.948, -1.471, 3.667, -4.363, -3.421, -1.104, 0.079, -0.006,
            -3.659, 0.926, -0.006,
        ],
        0.8994821849080344,
        0.381315934696003,
        16.525814615149873,
    ),
    (
        &[0.87, -0.886, -0.005],
        &[-2.714, -0.83, -1.121, 0.375, 0.037, 0.338, 1.612],
        0.44288983801532145,
        0.6729603985982902,
        6.166352163893543,
    ),
    (
        &[-0.943, 1.069, 1.017, -0.314, -1.671, 2.644, 1.198, 1.137],
        &[1.172, -0.777, -2.193, 0.892, -0.604],
        1.0434296044502402,
        0.3247274418697426,
        8.74712629285091,
    ),
    (
        &[
            0.129, 2.249, -1.698, -2.04, -0.23, 1.309, 0.074, -0.184, 2.11,
        ],
        &[
            0.06, 0.291, 0.665, 1.016, 0.682, 1.287, 0.015, 1.494, 0.023, 1.096, -0.045,
        ],
        -0.7707615826719154,
        0.45894315062113256,
        9.846487042379616,
    ),
    (
        &[
            1.286, 0.617, 0.719, 0.931, -0.14, 0.258, -0.362, 0.769, 2.307, 1.279, 0.165,
        ],
        &[
            -2.219, -5.451, -3.782, -3.872, -3.778, 1.059, -0.666, -5.11, -2.406, -4.111, -4.311,
            -5.161,
        ],
        6.646564896346609,
        9.437692565945283e-06,
        14.43906338043756,
    ),
    (
        &[
            1.022, -0.747, 0.55, 0.559, 0.11, 2.857, 0.196, -0.527, 0.707,
        ],
        &[
            0.217, -0.304, -0.402, -0.034, 1.401, 2.029, -2.235, 0.846, -0.641, 1.806, 2.123,
        ],
        0.16502341237150372,
        0.8707680715169279,
        17.966984750910783,
    ),
];

/// Welch's test written directly against statrs' Student t distribution.
fn statrs_welch(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let moments = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v / n)
    };
    let (na, ma, sa) = moments(a);
    let (nb, mb, sb) = moments(b);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    (t, 2.0 * dist.cdf(-t.abs()), df)
}

fn statistics_oracles() -> Outcome {
    let tol = 1e-9;
    let mut worst = (0.0f64, 0.0f64);
    for (k, (a, b, t_ref, p_ref, df_ref)) in SCIPY_WELCH.iter().enumerate() {
        let r = welch_t_test(a, b).map_err(|e| format!("pair {k}: {e}"))?;
        let (t_o, p_o, df_o) = statrs_welch(a, b);
        for (name, ours, theirs) in [
            ("t vs scipy", r.t_statistic, *t_ref),
            ("p vs scipy", r.p_value, *p_ref),
            ("df vs scipy", r.df, *df_ref),
            ("t vs statrs", r.t_statistic, t_o),
            ("p vs statrs", r.p_value, p_o),
            ("df vs statrs", r.df, df_o),
        ] {
            ensure!(
                (ours - theirs).abs() <= tol,
                "pair {k}: {name}: {ours} vs {theirs}"
            );
        }
        worst.0 = worst.0.max((r.t_statistic - t_ref).abs());
        worst.1 = worst.1.max((r.p_value - p_ref).abs());
    }
    let f = |b: f64, c: f64| normalized_improvement(b, c).map_err(|e| e.to_string());
    ensure!(f(4.0, 1.0)? == 1.0, "f(4,1) != 1");
    ensure!(f(1.0, 4.0)? == 0.0, "f(1,4) != 0");
    ensure!(f(2.5, 2.5)? == 0.5, "f(2.5,2.5) != 0.5");
    let grid: Vec<f64> = (0..=12).map(|i| 1.0 + 0.25 * f64::from(i)).collect();
    for &a in &grid {
        for &b in &grid {
            let s = f(a, b)? + f(b, a)?;
            ensure!((s - 1.0).abs() < 1e-12, "f({a},{b}) + f({b},{a}) = {s}");
        }
    }
    Ok(format!(
        "20 pairs, max |Δt| = {:.1e}, max |Δp| = {:.1e}; improvement anchors and symmetry exact",
        worst.0, worst.1
    ))
}

// --------------------------------------------------------------- quartiles

fn quartile_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..1000 {
        let n = rng.random_range(4..400);
        let spread = rng.random_range(1..1000u64);
        let freqs: Vec<FrequencyRecord> = (0..n)
            .map(|i| FrequencyRecord {
                noun_id: format!("n{i:04}"),
                count: rng.random_range(0..spread),
            })
            .collect();
        let a = assign_quartiles(&freqs).map_err(|e| e.to_string())?;
        ensure!(a.len() == n, "case {case}: {} of {n} assigned", a.len());
        let mut ids: Vec<&str> = a.iter().map(|x| x.noun_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ensure!(ids.len() == n, "case {case}: not a partition");
        let mut sizes = [0usize; 4];
        let mut lo = [u64::MAX; 4];
        let mut hi = [0u64; 4];
        for x in &a {
            let g = x.group.index();
            sizes[g] += 1;
            lo[g] = lo[g].min(x.count);
            hi[g] = hi[g].max(x.count);
            ensure!(
                x.uc == matches!(x.group, Quartile::Q1 | Quartile::Q2),
                "case {case}: uc flag"
            );
        }
        ensure!(
            sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1,
            "case {case}: sizes {sizes:?}"
        );
        for g in 0..3 {
            ensure!(
                hi[g] <= lo[g + 1],
                "case {case}: group {g} max {} > next min {}",
                hi[g],
                lo[g + 1]
            );
        }
    }
    let reg = shipped_registry();
    let freqs: Vec<FrequencyRecord> = reg
        .nouns()
        .iter()
        .map(|n| FrequencyRecord {
            noun_id: n.id.clone(),
            count: rng.random_range(0..5000),
        })
        .collect();
    let a = assign_quartiles(&freqs).map_err(|e| e.to_string())?;
    let mut sizes = [0usize; 4];
    a.iter().for_each(|x| sizes[x.group.index()] += 1);
    ensure!(sizes == [50; 4], "200 nouns split {sizes:?}");
    Ok("1000 random vectors; 200 nouns -> 50/50/50/50".into())
}

// ---------------------------------------------------------------- dry run

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let s = dry_run(&a).map_err(|e| e.to_string())?;
    ensure!(s.base_prompts == 12, "{} base prompts", s.base_prompts);
    ensure!(
        s.final_prompts == 2 * 3 * 2 * 4,
        "{} final prompts",
        s.final_prompts
    );
    ensure!(s.images == 96, "{} images", s.images);
    let manifest = read_manifest(&a).map_err(|e| e.to_string())?;
    ensure!(
        manifest.len() == 96
            && manifest
                .iter()
                .all(|m| m.status == EntryStatus::Ok && m.is_verified(&a)),
        "manifest incomplete"
    );
    let table = std::fs::read_to_string(a.join("report/table2.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split(',').collect()).collect();
    ensure!(
        rows[0] == ["metric", "base", "ctrip0", "ctrip3", "ctrip5"],
        "header {:?}",
        rows[0]
    );
    ensure!(rows.iter().all(|r| r.len() == 5), "ragged table");
    for (row, item) in rows[1..5].iter().zip(SurveyItem::ALL) {
        ensure!(row[0] == item.code(), "row {} for {}", row[0], item.code());
        for v in &row[1..] {
            let m: f64 = v.parse().map_err(|_| format!("mean rank {v:?}"))?;
            ensure!((1.0..=4.0).contains(&m), "mean rank {m}");
        }
    }
    for f in [
        "quartiles.csv",
        "improvement.csv",
        "ttest.csv",
        "country_quartiles.csv",
    ] {
        ensure!(a.join("report").join(f).is_file(), "missing {f}");
    }

    let first = files(&a);
    dry_run(&b).map_err(|e| e.to_string())?;
    ensure!(first == files(&b), "a second output directory differs");
    dry_run(&a).map_err(|e| e.to_string())?;
    ensure!(first == files(&a), "rerun changed artifacts");
    let took = within(Duration::from_secs(120), start)?;
    Ok(format!(
        "48 final prompts, 96 images, {} files byte-identical across runs, {took:.2?}",
        first.len()
    ))
}

// --------------------------------------------------------------- retrieval

fn retrieval_fallback() -> Outcome {
    let mk = |id: &str, name: &str| {
        CultureNoun::new(
            id,
            name,
            Country::JP,
            Category::FoodDrink,
            NounForm::Transliteration,
        )
    };
    let (a, b, c) = (
        mk("jp_a", "Alpha"),
        mk("jp_b", "Bravo"),
        mk("jp_c", "Charlie"),
    );
    let long = "A long encyclopedia article about this item. ".repeat(20);
    let enc = FixtureEncyclopedia::new([
        ("Alpha".to_string(), long),
        ("Charlie".to_string(), "Charlie is a snack.".to_string()),
    ]);
    let snippet = "A web result describing the item in some detail. ".repeat(3);
    let web = FixtureWebSearch::new(
        ["Alpha", "Bravo", "Charlie"].map(|q| (q.to_string(), vec![snippet.clone(); 3])),
    );
    let r = Retriever::new(&enc, &web, RetrievalConfig::default()).map_err(|e| e.to_string())?;
    let mut got = Vec::new();
    for (noun, want) in [
        (&a, InfoSource::Encyclopedia),
        (&b, InfoSource::WebSearch),
        (&c, InfoSource::Merged),
    ] {
        let info = r.retrieve(noun).map_err(|e| format!("{}: {e}", noun.id))?;
        ensure!(
            info.source == want,
            "{}: {:?}, expected {want:?}",
            noun.id,
            info.source
        );
        ensure!(
            info.char_count >= 400,
            "{}: {} chars",
            noun.id,
            info.char_count
        );
        got.push(format!("{:?}", info.source));
    }
    Ok(format!("A/B/C -> {}", got.join("/")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("registry/expansion arithmetic", registry_expansion),
        ("loop contract suite", loop_contract),
        ("configuration discipline", configuration_discipline),
        ("MMSR oracle", mmsr_oracle),
        ("statistics oracles", statistics_oracles),
        ("quartile properties", quartile_properties),
        ("end-to-end dry run", end_to_end),
        ("retrieval fallback", retrieval_fallback),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(format!(
                "panicked: {:?}",
                e.downcast_ref::<String>()
                    .map(String::as_str)
                    .or(e.downcast_ref::<&str>().copied())
            ))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
