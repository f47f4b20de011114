use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{
    AggregatedLabel, AggregationMethod, AggregationResult, EvalError, RankingTask, SurveyResponse,
    WorkerSkill, NUM_LABELS,
};

/// Solver settings for the rank-one completion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmsrOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Clamp negative skill factors to zero weight. When false, workers below
    /// chance vote with negative weight.
    pub clamp_negative: bool,
}

impl Default for MmsrOptions {
    fn default() -> Self {
        MmsrOptions {
            tolerance: 1e-8,
            max_iterations: 1000,
            clamp_negative: true,
        }
    }
}

/// Modal label; ties go to the lowest label. `None` for an empty slice.
pub fn majority_vote(labels: &[u8]) -> Option<u8> {
    let mut counts = [0usize; 256];
    labels.iter().for_each(|&l| counts[l as usize] += 1);
    let best = *counts.iter().max()?;
    (best > 0).then(|| counts.iter().position(|&c| c == best).unwrap() as u8)
}

fn weighted_vote(votes: &[(usize, u8)], weights: &[f64]) -> u8 {
    let mut score = [0f64; NUM_LABELS as usize];
    for &(w, l) in votes {
        score[(l - 1) as usize] += weights[w];
    }
    let mut best = 0;
    for k in 1..score.len() {
        if score[k] > score[best] {
            best = k;
        }
    }
    best as u8 + 1
}

struct Flattened {
    workers: Vec<String>,
    tasks: Vec<(RankingTask, String)>,
    /// per task: (worker index, label)
    votes: Vec<Vec<(usize, u8)>>,
}

fn flatten(responses: &[SurveyResponse]) -> Result<Flattened, EvalError> {
    let mut worker_names: Vec<&str> = responses
        .iter()
        .map(|r| r.participant_id.as_str())
        .collect();
    worker_names.sort();
    worker_names.dedup();
    let worker_ix: HashMap<&str, usize> = worker_names
        .iter()
        .enumerate()
        .map(|(i, w)| (*w, i))
        .collect();

    let mut page_noun: HashMap<&str, &str> = HashMap::new();
    let mut by_task: BTreeMap<RankingTask, Vec<(usize, u8)>> = BTreeMap::new();
    for r in responses {
        if !r.is_valid() {
            return Err(EvalError::InvalidResponse {
                participant: r.participant_id.clone(),
                page_id: r.page_id.clone(),
                item: r.item,
            });
        }
        match page_noun.insert(&r.page_id, &r.noun_id) {
            Some(prev) if prev != r.noun_id => {
                return Err(EvalError::InconsistentPage {
                    page_id: r.page_id.clone(),
                    first: prev.to_string(),
                    second: r.noun_id.clone(),
                })
            }
            _ => {}
        }
        let w = worker_ix[r.participant_id.as_str()];
        for (&config_id, &label) in &r.ranks {
            let key = RankingTask {
                page_id: r.page_id.clone(),
                item: r.item,
                config_id,
            };
            let votes = by_task.entry(key).or_default();
            if votes.iter().any(|(v, _)| *v == w) {
                return Err(EvalError::DuplicateResponse {
                    participant: r.participant_id.clone(),
                    page_id: r.page_id.clone(),
                    item: r.item,
                });
            }
            votes.push((w, label));
        }
    }
    let mut tasks = Vec::with_capacity(by_task.len());
    let mut votes = Vec::with_capacity(by_task.len());
    for (task, mut v) in by_task {
        v.sort_unstable();
        let noun = page_noun[task.page_id.as_str()].to_string();
        tasks.push((task, noun));
        votes.push(v);
    }
    Ok(Flattened {
        workers: worker_names.into_iter().map(String::from).collect(),
        tasks,
        votes,
    })
}

/// Pairwise chance-corrected agreement. `None` where a pair shares no task.
fn agreement_matrix(n: usize, votes: &[Vec<(usize, u8)>]) -> Vec<Vec<Option<f64>>> {
    let mut agree = vec![vec![0u32; n]; n];
    let mut shared = vec![vec![0u32; n]; n];
    for task in votes {
        for (a, &(i, li)) in task.iter().enumerate() {
            for &(j, lj) in &task[a + 1..] {
                shared[i][j] += 1;
                shared[j][i] += 1;
                if li == lj {
                    agree[i][j] += 1;
                    agree[j][i] += 1;
                }
            }
        }
    }
    let l = f64::from(NUM_LABELS);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    (i != j && shared[i][j] > 0).then(|| {
                        let a = f64::from(agree[i][j]) / f64::from(shared[i][j]);
                        (l * a - 1.0) / (l - 1.0)
                    })
                })
                .collect()
        })
        .collect()
}

/// Workers outside the largest connected component of the overlap graph.
fn disconnected(c: &[Vec<Option<f64>>]) -> Vec<usize> {
    let n = c.len();
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![start];
        comp[start] = id;
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for (u, cu) in comp.iter_mut().enumerate() {
                if *cu == usize::MAX && c[v][u].is_some() {
                    *cu = id;
                    stack.push(u);
                }
            }
        }
        sizes.push(size);
    }
    let biggest = (0..sizes.len())
        .max_by_key(|&k| (sizes[k], usize::MAX - k))
        .unwrap_or(0);
    (0..n).filter(|&v| comp[v] != biggest).collect()
}

/// Leading eigenpair of a symmetric matrix, shifted so the largest algebraic
/// eigenvalue dominates. Returns `(lambda, unit vector)`.
fn leading_eigen(m: &[Vec<f64>], start: &[f64], tol: f64, max_iter: usize) -> (f64, Vec<f64>) {
    let n = m.len();
    let shift = m
        .iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut v = start.to_vec();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v = vec![1.0 / (n as f64).sqrt(); n];
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    for _ in 0..max_iter {
        let mut w: Vec<f64> = (0..n)
            .map(|i| m[i].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + shift * v[i])
            .collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= norm);
        let delta = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = w;
        if delta < tol {
            break;
        }
    }
    let lambda: f64 = (0..n)
        .map(|i| v[i] * m[i].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    (lambda, v)
}

/// Rank-one factor `s` with `s_i s_j ≈ c_ij` on the observed off-diagonal
/// entries, by alternating completion of the unobserved entries and a
/// leading-eigenvector step.
fn rank_one_factor(c: &[Vec<Option<f64>>], opts: &MmsrOptions) -> Vec<f64> {
    let n = c.len();
    let mut m: Vec<Vec<f64>> = c
        .iter()
        .map(|r| r.iter().map(|x| x.unwrap_or(0.0)).collect())
        .collect();
    for (i, row) in m.iter_mut().enumerate() {
        let known: Vec<f64> = c[i].iter().flatten().map(|x| x.abs()).collect();
        row[i] = if known.is_empty() {
            0.0
        } else {
            known.iter().sum::<f64>() / known.len() as f64
        };
    }
    let mut s = vec![0.0; n];
    let mut v = vec![1.0; n];
    for _ in 0..opts.max_iterations {
        let (lambda, vec) = leading_eigen(&m, &v, opts.tolerance * 1e-2, opts.max_iterations);
        v = vec;
        let scale = lambda.max(0.0).sqrt();
        let next: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let delta = next
            .iter()
            .zip(&s)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        s = next;
        for i in 0..n {
            for j in 0..n {
                if i == j || c[i][j].is_none() {
                    m[i][j] = s[i] * s[j];
                }
            }
        }
        if delta < opts.tolerance {
            break;
        }
    }
    if s.iter().sum::<f64>() < 0.0 {
        s.iter_mut().for_each(|x| *x = -*x);
    }
    s
}

/// Estimates worker reliability from pairwise agreement and aggregates each
/// `(page, item, config)` task by reliability-weighted vote.
pub fn mmsr_aggregate(
    responses: &[SurveyResponse],
    opts: &MmsrOptions,
) -> Result<AggregationResult, EvalError> {
    let flat = flatten(responses)?;
    let n = flat.workers.len();
    if n < 3 {
        return Err(EvalError::InsufficientOverlap {
            disconnected: flat.workers.clone(),
        });
    }
    let c = agreement_matrix(n, &flat.votes);
    let cut = disconnected(&c);
    if !cut.is_empty() {
        return Err(EvalError::InsufficientOverlap {
            disconnected: cut.into_iter().map(|i| flat.workers[i].clone()).collect(),
        });
    }
    let s = rank_one_factor(&c, opts);
    let l = f64::from(NUM_LABELS);
    let skills: Vec<WorkerSkill> = flat
        .workers
        .iter()
        .zip(&s)
        .map(|(w, &si)| WorkerSkill {
            participant_id: w.clone(),
            skill: ((si * (l - 1.0) + 1.0) / l).clamp(0.0, 1.0),
        })
        .collect();
    let mut weights: Vec<f64> = if opts.clamp_negative {
        s.iter().map(|x| x.max(0.0)).collect()
    } else {
        s.clone()
    };
    if weights.iter().all(|w| *w <= 0.0) {
        log::warn!("no worker above chance; falling back to unweighted vote");
        weights = vec![1.0; n];
    }
    let labels = flat
        .tasks
        .iter()
        .zip(&flat.votes)
        .map(|((task, noun), votes)| AggregatedLabel {
            page_id: Some(task.page_id.clone()),
            noun_id: noun.clone(),
            item: task.item,
            config_id: task.config_id,
            label: weighted_vote(votes, &weights),
        })
        .collect();
    Ok(AggregationResult {
        method: AggregationMethod::Mmsr,
        labels,
        skills,
    })
}

/// Second stage: per `(noun, item, config)`, the modal page-level label.
pub fn vote_labels(labels: &[AggregatedLabel]) -> Vec<AggregatedLabel> {
    let mut groups: BTreeMap<(String, super::SurveyItem, crate::refinement::ConfigId), Vec<u8>> =
        BTreeMap::new();
    for l in labels {
        groups
            .entry((l.noun_id.clone(), l.item, l.config_id))
            .or_default()
            .push(l.label);
    }
    groups
        .into_iter()
        .map(|((noun_id, item, config_id), ls)| AggregatedLabel {
            page_id: None,
            noun_id,
            item,
            config_id,
            label: majority_vote(&ls).expect("non-empty group"),
        })
        .collect()
}

/// MMSR per page followed by a majority vote across the pages of each noun.
pub fn mmsr_plus_vote(
    responses: &[SurveyResponse],
    opts: &MmsrOptions,
) -> Result<AggregationResult, EvalError> {
    let page_level = mmsr_aggregate(responses, opts)?;
    Ok(AggregationResult {
        method: AggregationMethod::MmsrPlusVote,
        labels: vote_labels(&page_level.labels),
        skills: page_level.skills,
    })
}
