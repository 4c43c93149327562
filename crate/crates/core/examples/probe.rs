//! Scratch experiment: the full pipeline on the tiny scenario — baselines,
//! both single-objective pretrains, and the multi-objective run.

use std::time::Instant;

use evrec_core::baselines::{GreedyNearest, GreedyPrice, RandomPolicy};
use evrec_core::domain::TrainConfig;
use evrec_core::eval::compute_metrics;
use evrec_core::master::{
    feature_norm, train, DaySplit, FrozenOptima, MasterPolicy, Objective, TrainMode,
};
use evrec_core::scenario::{generate, GeneratorConfig};
use evrec_core::simulator::rollout;

fn main() {
    let iterations: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let multi_iterations: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(iterations);
    let gen = GeneratorConfig { n_stations: 10, n_days: 29, seed: 7, ..Default::default() };
    let scenario = generate(&gen).unwrap();
    let split = DaySplit::from_counts(29, 20, 4, 5).unwrap();
    let cfg = TrainConfig { seed: 7, iterations, ..Default::default() };
    let norm = feature_norm(&scenario, &cfg);

    println!(
        "scenario: {} stations, {} days, {} total requests",
        scenario.stations.len(),
        scenario.n_days(),
        scenario.total_requests()
    );

    let report = |name: &str, outcomes: &[evrec_core::domain::ChargeOutcome]| {
        let m = compute_metrics(outcomes, split.test.len());
        println!(
            "{name:<10} MCWT {:6.2}  MCP {:.3}  TSF {:8.1}  CFR {:.4}",
            m.mcwt, m.mcp, m.tsf, m.cfr
        );
    };

    let mut random = RandomPolicy::new(1);
    report("random", &rollout(&scenario, &split.test, &mut random, &cfg, 1000).unwrap());
    report("greedy-n", &rollout(&scenario, &split.test, &mut GreedyNearest, &cfg, 1000).unwrap());
    report("greedy-p-5", &rollout(&scenario, &split.test, &mut GreedyPrice { k: 5 }, &cfg, 1000).unwrap());

    let eval_params = |params: &evrec_core::nn::ParamMap, base: &evrec_core::master::MasterModel| {
        let mut model = base.clone();
        model.load_params(params).unwrap();
        let mut policy = MasterPolicy::greedy(model.actor.clone(), norm.clone());
        rollout(&scenario, &split.test, &mut policy, &cfg, 1000).unwrap()
    };

    let t0 = Instant::now();
    let cwt = train(&scenario, &split, &cfg, TrainMode::CwtOnly).unwrap();
    println!(
        "cwt-only: {:.0}s, best iter {}",
        t0.elapsed().as_secs_f64(),
        cwt.best_iteration
    );
    report("m-cwt", &eval_params(&cwt.best_params, &cwt.model));

    let t0 = Instant::now();
    let cp = train(&scenario, &split, &cfg, TrainMode::CpOnly).unwrap();
    println!(
        "cp-only: {:.0}s, best iter {}",
        t0.elapsed().as_secs_f64(),
        cp.best_iteration
    );
    report("m-cp", &eval_params(&cp.best_params, &cp.model));

    let frozen = FrozenOptima {
        cwt: cwt.model.frozen_pair(&cwt.best_params, Objective::Cwt).unwrap(),
        cp: cp.model.frozen_pair(&cp.best_params, Objective::Cp).unwrap(),
    };
    let noise_floor: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let t0 = Instant::now();
    let multi_cfg = TrainConfig {
        iterations: multi_iterations,
        noise_std_final: noise_floor,
        ..cfg.clone()
    };
    let multi = train(&scenario, &split, &multi_cfg, TrainMode::Multi(Box::new(frozen))).unwrap();
    println!(
        "multi: {:.0}s, best iter {}",
        t0.elapsed().as_secs_f64(),
        multi.best_iteration
    );
    report("m-multi", &eval_params(&multi.best_params, &multi.model));

    let betas = &multi.beta_trace;
    if !betas.is_empty() {
        let tail = &betas[betas.len().saturating_sub(100)..];
        let mean: f64 = tail.iter().sum::<f64>() / tail.len() as f64;
        let (lo, hi) = betas.iter().fold((1.0f64, 0.0f64), |(lo, hi), b| (lo.min(*b), hi.max(*b)));
        println!(
            "beta: {} steps, range [{lo:.4}, {hi:.4}], final-100 mean {mean:.4}",
            betas.len()
        );
        let gaps = &multi.gap_trace;
        for (name, lo, hi) in [("early", 0, 500.min(gaps.len())), ("late", gaps.len().saturating_sub(500), gaps.len())] {
            let slice = &gaps[lo..hi];
            if slice.is_empty() {
                continue;
            }
            let n = slice.len() as f64;
            let g1: f64 = slice.iter().map(|g| g.0).sum::<f64>() / n;
            let g2: f64 = slice.iter().map(|g| g.1).sum::<f64>() / n;
            println!("gaps {name}: mean g_cwt {g1:.3}, mean g_cp {g2:.3}");
        }
    }
    for row in multi.history.iter() {
        println!(
            "  iter {:>2} day {:>2}  L_cwt {:>8.3} L_cp {:>8.3} beta {:.3}  val MCWT {:>6.2} MCP {:.3} CFR {:.4}",
            row.iteration, row.episode, row.l_cwt, row.l_cp, row.beta_mean, row.val_mcwt, row.val_mcp, row.val_cfr
        );
    }
}
