//! Scratch experiment: ablation spread across seeds, and the re-weighting
//! trace on the flat-tariff scenario.

use evrec_core::baselines::iddpg_train;
use evrec_core::domain::{PriceBand, TrainConfig};
use evrec_core::eval::compute_metrics;
use evrec_core::master::{feature_norm, train, DaySplit, FrozenOptima, MasterPolicy, Objective, TrainMode};
use evrec_core::scenario::{generate, GeneratorConfig};
use evrec_core::simulator::rollout;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "ablation".into());
    let gen = GeneratorConfig { n_stations: 10, n_days: 29, seed: 7, ..Default::default() };
    let mut scenario = generate(&gen).unwrap();
    let split = DaySplit::from_counts(29, 20, 4, 5).unwrap();

    if which == "sym" {
        for station in &mut scenario.stations {
            station.price_schedule =
                vec![PriceBand { start_minute: 0, end_minute: 1440, price: 1.5 }];
        }
        let pre_iters: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(12);
        let multi_iters: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(25);
        let pre_cfg = TrainConfig { seed: 7, iterations: pre_iters, ..Default::default() };
        let cwt = train(&scenario, &split, &pre_cfg, TrainMode::CwtOnly).unwrap();
        let cp = train(&scenario, &split, &pre_cfg, TrainMode::CpOnly).unwrap();
        let frozen = FrozenOptima {
            cwt: cwt.model.frozen_pair(&cwt.best_params, Objective::Cwt).unwrap(),
            cp: cp.model.frozen_pair(&cp.best_params, Objective::Cp).unwrap(),
        };
        let cfg = TrainConfig { seed: 7, iterations: multi_iters, ..Default::default() };
        let multi = train(&scenario, &split, &cfg, TrainMode::Multi(Box::new(frozen))).unwrap();
        let betas = &multi.beta_trace;
        let tail = &betas[betas.len().saturating_sub(100)..];
        let mean: f64 = tail.iter().sum::<f64>() / tail.len() as f64;
        let (lo, hi) = betas.iter().fold((1.0f64, 0.0f64), |(l, h), b| (l.min(*b), h.max(*b)));
        println!("sym beta: {} steps, range [{lo:.3}, {hi:.3}], final-100 mean {mean:.4}", betas.len());
        let gaps = &multi.gap_trace;
        let late = &gaps[gaps.len().saturating_sub(300)..];
        let n = late.len() as f64;
        println!(
            "sym gaps late: g_cwt {:.3}, g_cp {:.3}",
            late.iter().map(|g| g.0).sum::<f64>() / n,
            late.iter().map(|g| g.1).sum::<f64>() / n
        );
        return;
    }

    if which == "oracle" {
        // Feasibility bound: cheapest station within a few minutes of the
        // nearest, preferring ones with a free spot.
        struct CheapNear {
            delta: u32,
        }
        impl evrec_core::simulator::Policy for CheapNear {
            fn recommend(
                &mut self,
                _r: &evrec_core::domain::ChargingRequest,
                active: &[evrec_core::simulator::ActiveStation],
            ) -> Option<usize> {
                let min_eta = active.iter().map(|a| a.eta).min().unwrap();
                let near: Vec<_> = active.iter().filter(|a| a.eta <= min_eta + self.delta).collect();
                let free: Vec<_> = near.iter().filter(|a| a.observation.supply > 0).copied().collect();
                let pool = if free.is_empty() { near } else { free };
                pool.into_iter()
                    .min_by(|a, b| {
                        a.observation
                            .cp_at_eta
                            .partial_cmp(&b.observation.cp_at_eta)
                            .unwrap()
                            .then(a.eta.cmp(&b.eta))
                    })
                    .map(|a| a.station_id)
            }
        }
        let cfg = TrainConfig::default();
        for delta in [0u32, 2, 4, 6, 10, 45] {
            let mut policy = CheapNear { delta };
            let outcomes = rollout(&scenario, &split.test, &mut policy, &cfg, 1000).unwrap();
            let m = compute_metrics(&outcomes, split.test.len());
            println!(
                "cheap-near d={delta:<2} MCWT {:6.2}  MCP {:.3}  TSF {:8.1}  CFR {:.4}",
                m.mcwt, m.mcp, m.tsf, m.cfr
            );
        }
        return;
    }

    // Ablation: full vs zeroed-trace vs iddpg, cwt-centric, 3 seeds.
    let iterations: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    let norm = feature_norm(&scenario, &TrainConfig::default());
    for variant in ["full", "zero-trace", "iddpg"] {
        let mut mcwts = Vec::new();
        for seed in [7u64, 11, 23] {
            let cfg = TrainConfig {
                seed,
                iterations,
                ablate_zero_traces: variant == "zero-trace",
                ..Default::default()
            };
            let actor = if variant == "iddpg" {
                let result = iddpg_train(&scenario, &split, &cfg).unwrap();
                let mut model = result.model;
                model.load_params(&result.best_params).unwrap();
                model.actor
            } else {
                let result = train(&scenario, &split, &cfg, TrainMode::CwtOnly).unwrap();
                let mut model = result.model;
                model.load_params(&result.best_params).unwrap();
                model.actor
            };
            let mut policy = MasterPolicy::greedy(actor, norm.clone());
            let outcomes = rollout(&scenario, &split.test, &mut policy, &cfg, 1000).unwrap();
            mcwts.push(compute_metrics(&outcomes, split.test.len()).mcwt);
        }
        let mean = mcwts.iter().sum::<f64>() / mcwts.len() as f64;
        println!("{variant:<11} mcwt per seed {mcwts:.2?}  mean {mean:.2}");
    }
}
