use serde::{Deserialize, Serialize};

use super::{
    compute_reward, cost_efficiency, fqr, Environment, EvalResult, LayerObservation, PsnrReference,
    SearchConfig, SearchError, SearchMode, PREV_ACTION,
};
use crate::ddpg::{action_to_bits, Agent, DdpgError, Transition};
use crate::policy::QuantPolicy;
use crate::sim::SimReport;

pub const EPISODE_CSV_HEADER: &str =
    "episode,reward,psnr,latency_cycles,cost_ratio,fqr,cost_efficiency,policy";

/// What a policy's reward is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub psnr_org: f64,
    pub original_cost: u64,
    pub lambda: f64,
}

/// Scores `policy` after `finetune_steps` of fine-tuning.
pub fn evaluate_policy<E: Environment + ?Sized>(
    env: &mut E,
    policy: &QuantPolicy,
    finetune_steps: usize,
    reference: &Reference,
) -> Result<EvalResult, SearchError> {
    let psnr = env.quality(policy, finetune_steps)?;
    let latency = env.latency(policy)?;
    let (cur, org) = (latency as f64, reference.original_cost as f64);
    Ok(EvalResult {
        psnr,
        latency_cycles: latency,
        cost_ratio: cur / org,
        reward: compute_reward(psnr, reference.psnr_org, cur, org, reference.lambda)?,
        fqr: fqr(policy),
        cost_efficiency: cost_efficiency(psnr, cur)?,
    })
}

/// Uniform `bits` applied to the trained model without fine-tuning.
pub fn run_ptq_baseline<E: Environment + ?Sized>(
    env: &mut E,
    bits: u8,
    reference: &Reference,
) -> Result<EvalResult, SearchError> {
    let (levels, layers) = env.shape();
    evaluate_policy(
        env,
        &QuantPolicy::uniform(levels, layers, bits),
        0,
        reference,
    )
}

/// Uniform `bits` followed by `steps` of quantization-aware fine-tuning.
pub fn run_qat_baseline<E: Environment + ?Sized>(
    env: &mut E,
    bits: u8,
    steps: usize,
    reference: &Reference,
) -> Result<EvalResult, SearchError> {
    let (levels, layers) = env.shape();
    evaluate_policy(
        env,
        &QuantPolicy::uniform(levels, layers, bits),
        steps,
        reference,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetOutcome {
    pub policy: QuantPolicy,
    pub latency_cycles: u64,
    /// Every unit reached 1 bit and the budget is still exceeded.
    pub unreachable: bool,
    pub decrements: usize,
}

/// Lowers bits until the latency fits `budget_cycles`.
///
/// Each round removes one bit from the unit whose decrement cuts the latency
/// the most, ties going to the lowest unit index.
pub fn enforce_latency_budget<E: Environment + ?Sized>(
    env: &mut E,
    policy: &QuantPolicy,
    budget_cycles: u64,
) -> Result<BudgetOutcome, SearchError> {
    let mut policy = policy.clone();
    let mut latency = env.latency(&policy)?;
    let mut decrements = 0;
    while latency > budget_cycles {
        let mut best: Option<(usize, u64)> = None;
        for i in 0..policy.num_units() {
            let unit = policy.unit(i);
            if policy.bits(unit) <= 1 {
                continue;
            }
            let mut trial = policy.clone();
            *trial.bits_mut(unit) -= 1;
            let l = env.latency(&trial)?;
            if best.is_none_or(|(_, bl)| l < bl) {
                best = Some((i, l));
            }
        }
        let Some((i, l)) = best else {
            return Ok(BudgetOutcome {
                policy,
                latency_cycles: latency,
                unreachable: true,
                decrements,
            });
        };
        let unit = policy.unit(i);
        *policy.bits_mut(unit) -= 1;
        latency = l;
        decrements += 1;
    }
    Ok(BudgetOutcome {
        policy,
        latency_cycles: latency,
        unreachable: false,
        decrements,
    })
}

/// Where an episode's actions come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSource {
    /// The actor, with exploration noise when `explore` is set.
    Agent { explore: bool },
    /// Uniform on `[0, 1]`.
    Random,
    /// The same action for every unit.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    /// The evaluated policy, after budget enforcement.
    pub policy: QuantPolicy,
    pub actions: Vec<f64>,
    pub transitions: Vec<Transition>,
    pub eval: EvalResult,
    pub budget: Option<BudgetOutcome>,
}

/// Decides every unit, evaluates the policy and assigns the episode reward to
/// every decision.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<E: Environment + ?Sized>(
    agent: &mut Agent,
    env: &mut E,
    observations: &[LayerObservation],
    source: ActionSource,
    reference: &Reference,
    finetune_steps: usize,
    budget_cycles: Option<u64>,
) -> Result<EpisodeOutcome, SearchError> {
    let (levels, _) = env.shape();
    let mut states = Vec::with_capacity(observations.len());
    let mut actions = Vec::with_capacity(observations.len());
    let mut prev = 0.0;
    for o in observations {
        let mut s = o.normalized;
        s[PREV_ACTION] = prev;
        let a = match source {
            ActionSource::Agent { explore } => agent.select_action(&s, explore),
            ActionSource::Random => agent.random_action(),
            ActionSource::Constant(a) => a.clamp(0.0, 1.0),
        };
        states.push(s);
        actions.push(a);
        prev = a;
    }
    let bits: Vec<u8> = actions.iter().map(|&a| action_to_bits(a)).collect();
    let mut policy = QuantPolicy::from_unit_bits(levels, &bits)
        .map_err(|e| SearchError::Config(e.to_string()))?;

    let budget = match budget_cycles {
        Some(b) => {
            let out = enforce_latency_budget(env, &policy, b)?;
            policy = out.policy.clone();
            Some(out)
        }
        None => None,
    };
    let eval = evaluate_policy(env, &policy, finetune_steps, reference)?;
    let transitions = (0..states.len())
        .map(|i| Transition {
            obs: states[i],
            action: actions[i],
            reward: eval.reward,
            next_obs: states.get(i + 1).copied(),
        })
        .collect();
    Ok(EpisodeOutcome {
        policy,
        actions,
        transitions,
        eval,
        budget,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEval {
    pub name: String,
    pub policy: QuantPolicy,
    pub eval: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPolicy {
    pub policy: QuantPolicy,
    /// Slash-separated form of `policy`.
    pub policy_text: String,
    pub eval: EvalResult,
    /// `episode` or the name of the baseline it came from.
    pub source: String,
    pub episode: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub ratio: f64,
    pub budget_cycles: u64,
    /// The reported best policy fits the budget.
    pub satisfied: bool,
    /// No evaluated policy fit the budget.
    pub budget_unreachable: bool,
    /// Episodes whose policy could not be brought within budget.
    pub unreachable_episodes: usize,
}

/// One row of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub reward: f64,
    pub psnr: f64,
    pub latency_cycles: u64,
    pub cost_ratio: f64,
    pub fqr: f64,
    pub cost_efficiency: f64,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub config: SearchConfig,
    pub psnr_float: f64,
    pub reference: Reference,
    pub baselines: Vec<NamedEval>,
    pub best: BestPolicy,
    /// The best policy re-evaluated with twice the fine-tuning steps.
    pub best_final: Option<EvalResult>,
    pub best_breakdown: Option<SimReport>,
    pub budget: Option<BudgetReport>,
    pub history: Vec<EpisodeRecord>,
}

impl SearchReport {
    pub fn baseline(&self, name: &str) -> Option<&NamedEval> {
        self.baselines.iter().find(|b| b.name == name)
    }
}

pub const UNIFORM8: &str = "uniform8";

fn candidate(
    policy: &QuantPolicy,
    eval: EvalResult,
    source: String,
    episode: Option<usize>,
) -> BestPolicy {
    BestPolicy {
        policy: policy.clone(),
        policy_text: policy.to_string(),
        eval,
        source,
        episode,
    }
}

/// Full search: baselines, warm-up, learning episodes and the final
/// re-evaluation of the best policy.
pub fn run_search<E: Environment + ?Sized>(
    env: &mut E,
    config: &SearchConfig,
) -> Result<SearchReport, SearchError> {
    config.validate()?;
    let (levels, layers) = env.shape();
    let observations = env.observations();
    let steps = config.finetune_steps;

    let uniform8 = QuantPolicy::uniform(levels, layers, 8);
    let original_cost = env.latency(&uniform8)?;
    let psnr_float = env.float_quality()?;
    let psnr_org = match config.psnr_reference {
        PsnrReference::EightBit => env.quality(&uniform8, steps)?,
        PsnrReference::Float => psnr_float,
    };
    let reference = Reference {
        psnr_org,
        original_cost,
        lambda: config.lambda,
    };

    let mut baselines = vec![NamedEval {
        name: UNIFORM8.into(),
        policy: uniform8.clone(),
        eval: evaluate_policy(env, &uniform8, steps, &reference)?,
    }];
    if config.episodes > 0 {
        let b = config.comparison_bits();
        let policy = QuantPolicy::uniform(levels, layers, b);
        baselines.push(NamedEval {
            name: format!("ptq{b}"),
            policy: policy.clone(),
            eval: run_ptq_baseline(env, b, &reference)?,
        });
        baselines.push(NamedEval {
            name: format!("qat{b}"),
            policy,
            eval: run_qat_baseline(env, b, steps, &reference)?,
        });
    }

    let budget = match config.mode {
        SearchMode::Mdl => None,
        SearchMode::Mgl => {
            Some((config.latency_budget_ratio * original_cost as f64).floor() as u64)
        }
    };
    let fits = |latency: u64| budget.is_none_or(|b| latency <= b);

    let mut best = candidate(&uniform8, baselines[0].eval, UNIFORM8.into(), None);
    let mut best_fits = fits(best.eval.latency_cycles);
    for b in &baselines[1..] {
        if fits(b.eval.latency_cycles) && (!best_fits || b.eval.reward > best.eval.reward) {
            best = candidate(&b.policy, b.eval, b.name.clone(), None);
            best_fits = true;
        }
    }

    let mut agent = Agent::new(config.agent.clone(), config.seed);
    let mut history = Vec::with_capacity(config.episodes);
    let mut unreachable_episodes = 0;
    for episode in 0..config.episodes {
        let warm = episode < config.agent.warmup_episodes;
        let source = if warm {
            ActionSource::Random
        } else {
            ActionSource::Agent { explore: true }
        };
        let mut attempt = 0;
        let outcome = loop {
            match run_episode(
                &mut agent,
                env,
                &observations,
                source,
                &reference,
                steps,
                budget,
            ) {
                Ok(o) => break o,
                Err(e) if attempt < config.max_retries => {
                    attempt += 1;
                    log::warn!("episode {episode} attempt {attempt} failed: {e}");
                }
                Err(e) => {
                    return Err(SearchError::Episode {
                        episode,
                        attempts: attempt + 1,
                        source: Box::new(e),
                    })
                }
            }
        };

        agent.baseline.update(outcome.eval.reward);
        for t in &outcome.transitions {
            agent.replay.push(*t);
        }
        if !warm {
            match agent.train_step(observations.len()) {
                Ok(_) | Err(DdpgError::NonFinite { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        agent.end_episode();

        if outcome.budget.as_ref().is_some_and(|b| b.unreachable) {
            unreachable_episodes += 1;
        }
        let e = outcome.eval;
        let ok = fits(e.latency_cycles);
        if ok && (!best_fits || e.reward > best.eval.reward) {
            best = candidate(&outcome.policy, e, "episode".into(), Some(episode));
            best_fits = true;
        }
        log::info!(
            "episode {episode}: reward {:.4} psnr {:.2} ratio {:.3} {}",
            e.reward,
            e.psnr,
            e.cost_ratio,
            outcome.policy
        );
        history.push(EpisodeRecord {
            episode,
            reward: e.reward,
            psnr: e.psnr,
            latency_cycles: e.latency_cycles,
            cost_ratio: e.cost_ratio,
            fqr: e.fqr,
            cost_efficiency: e.cost_efficiency,
            policy: outcome.policy.to_string(),
        });
    }

    let best_final = if config.episodes > 0 {
        Some(evaluate_policy(env, &best.policy, 2 * steps, &reference)?)
    } else {
        None
    };
    let best_breakdown = env.cost_report(&best.policy)?;
    let budget = budget.map(|b| BudgetReport {
        ratio: config.latency_budget_ratio,
        budget_cycles: b,
        satisfied: best.eval.latency_cycles <= b,
        budget_unreachable: !best_fits,
        unreachable_episodes,
    });
    Ok(SearchReport {
        config: config.clone(),
        psnr_float,
        reference,
        baselines,
        best,
        best_final,
        best_breakdown,
        budget,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddpg::DdpgConfig;
    use crate::search::SyntheticEnv;

    fn reference(env: &mut SyntheticEnv) -> Reference {
        let u8p = QuantPolicy::uniform(2, 1, 8);
        Reference {
            psnr_org: env.psnr(&u8p),
            original_cost: env.cycles(&u8p),
            lambda: 0.1,
        }
    }

    #[test]
    fn forced_episodes() {
        let mut env = SyntheticEnv::four_unit();
        let r = reference(&mut env);
        let obs = env.observations();
        let mut agent = Agent::new(DdpgConfig::default(), 0);
        let hi = run_episode(
            &mut agent,
            &mut env,
            &obs,
            ActionSource::Constant(1.0),
            &r,
            0,
            None,
        )
        .unwrap();
        assert_eq!(hi.policy, QuantPolicy::uniform(2, 1, 8));
        assert_eq!(hi.eval.cost_ratio, 1.0);
        assert!((hi.eval.reward - 0.1).abs() < 1e-12);
        assert!(hi.transitions.iter().all(|t| t.reward == hi.eval.reward));
        assert!(hi.transitions[3].done() && !hi.transitions[2].done());
        assert_eq!(hi.transitions[1].obs[PREV_ACTION], 1.0);

        let lo = run_episode(
            &mut agent,
            &mut env,
            &obs,
            ActionSource::Constant(0.0),
            &r,
            0,
            None,
        )
        .unwrap();
        assert_eq!(lo.policy, QuantPolicy::uniform(2, 1, 1));
        // Strictly minimal latency over every policy.
        for code in 0..4096u32 {
            let bits: Vec<u8> = (0..4).map(|k| ((code >> (3 * k)) & 7) as u8 + 1).collect();
            let p = QuantPolicy::from_unit_bits(2, &bits).unwrap();
            if p != lo.policy {
                assert!(env.cycles(&p) > lo.eval.latency_cycles);
            }
        }
    }

    #[test]
    fn greedy_episode_is_deterministic() {
        let mut env = SyntheticEnv::four_unit();
        let r = reference(&mut env);
        let obs = env.observations();
        let run = |env: &mut SyntheticEnv| {
            let mut agent = Agent::new(DdpgConfig::default(), 5);
            run_episode(
                &mut agent,
                env,
                &obs,
                ActionSource::Agent { explore: false },
                &r,
                0,
                None,
            )
            .unwrap()
        };
        assert_eq!(run(&mut env), run(&mut env));
    }

    #[test]
    fn budget_enforcement() {
        let mut env = SyntheticEnv::four_unit();
        let p = QuantPolicy::uniform(2, 1, 8);
        let l8 = env.cycles(&p);
        let same = enforce_latency_budget(&mut env, &p, l8).unwrap();
        assert_eq!(
            (same.policy.clone(), same.unreachable, same.decrements),
            (p.clone(), false, 0)
        );

        let floor = env.cycles(&QuantPolicy::uniform(2, 1, 1));
        let out = enforce_latency_budget(&mut env, &p, floor - 1).unwrap();
        assert!(out.unreachable);
        assert_eq!(out.policy, QuantPolicy::uniform(2, 1, 1));

        let budget = l8 * 83 / 100;
        let out = enforce_latency_budget(&mut env, &p, budget).unwrap();
        assert!(!out.unreachable && out.latency_cycles <= budget);
        assert_eq!(out.latency_cycles, env.cycles(&out.policy));
    }

    #[test]
    fn greedy_takes_the_heavy_unit_first() {
        // Unit 0 is cheap per bit, unit 1 expensive.
        let mut env = SyntheticEnv {
            num_levels: 2,
            num_layers: 0,
            base_psnr: 0.0,
            gain: vec![1.0, 1.0],
            base_cycles: 0,
            cost: vec![3, 40],
        };
        let p = QuantPolicy::uniform(2, 0, 8);
        let out = enforce_latency_budget(&mut env, &p, 8 * 3 + 8 * 40 - 1).unwrap();
        assert_eq!(out.policy.hash_bits, vec![8, 7]);
        // Exhaustive check of both one-step orders.
        let dec0 = env.cycles(&QuantPolicy::from_unit_bits(2, &[7, 8]).unwrap());
        let dec1 = env.cycles(&QuantPolicy::from_unit_bits(2, &[8, 7]).unwrap());
        assert!(dec1 < dec0);
    }

    #[test]
    fn empty_search_reports_only_the_baseline() {
        let mut env = SyntheticEnv::four_unit();
        let cfg = SearchConfig {
            episodes: 0,
            ..SearchConfig::default()
        };
        let report = run_search(&mut env, &cfg).unwrap();
        assert_eq!(report.baselines.len(), 1);
        assert!(report.history.is_empty());
        assert_eq!(report.best.source, UNIFORM8);
        assert!((report.best.eval.reward - 0.1).abs() < 1e-12);
        assert!(report.best_final.is_none());
    }

    #[test]
    fn search_is_deterministic_and_beats_uniform() {
        let cfg = SearchConfig {
            episodes: 40,
            finetune_steps: 0,
            ..SearchConfig::default()
        };
        let a = run_search(&mut SyntheticEnv::four_unit(), &cfg).unwrap();
        let b = run_search(&mut SyntheticEnv::four_unit(), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.best.eval.reward >= a.baseline(UNIFORM8).unwrap().eval.reward);
        for base in &a.baselines {
            let dominated = base.eval.psnr > a.best.eval.psnr
                && base.eval.latency_cycles < a.best.eval.latency_cycles;
            assert!(!dominated, "{} dominates the best policy", base.name);
        }
    }

    #[test]
    fn mgl_search_respects_budget() {
        let cfg = SearchConfig {
            episodes: 20,
            finetune_steps: 0,
            mode: SearchMode::Mgl,
            ..SearchConfig::default()
        };
        let report = run_search(&mut SyntheticEnv::four_unit(), &cfg).unwrap();
        let budget = report.budget.unwrap();
        assert!(budget.satisfied);
        assert!(report.best.eval.latency_cycles <= budget.budget_cycles);
        assert!(report
            .history
            .iter()
            .all(|h| h.latency_cycles <= budget.budget_cycles));
    }

    #[test]
    fn unreachable_budget_is_flagged() {
        // Uniform 1-bit costs 660 of uniform 8-bit's 3880 cycles.
        let cfg = SearchConfig {
            episodes: 3,
            finetune_steps: 0,
            mode: SearchMode::Mgl,
            latency_budget_ratio: 0.1,
            ..SearchConfig::default()
        };
        let report = run_search(&mut SyntheticEnv::four_unit(), &cfg).unwrap();
        let budget = report.budget.unwrap();
        assert!(budget.budget_unreachable && !budget.satisfied);
        assert_eq!(budget.unreachable_episodes, 3);
    }
}
