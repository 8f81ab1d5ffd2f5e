// Index loops mirror the matrix algebra they check.
#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use fqi_lab::fqi::{
    compare_reuse_vs_split, greedy_policy, measure_bellman_residuals, run_lsvi, state_actions, tabular_lsvi, DataMode,
    FqiConfig, FqiTrace, LsviOutput, Mode,
};
use fqi_lab::mdp::{
    sample_visitation, ActionSpaceConfig, BellmanTarget, GridOracle, InitialConfig, KernelConfig, MdpConfig, QFunction,
    RewardConfig, RewardMeanConfig, SyntheticMdp, UniformPolicy,
};
use fqi_lab::relu::{Architecture, ReluNetwork};

const DESK: Architecture = Architecture { height: 3, width: 16, sparsity: 256, bound: 10.0 };

const CHAIN_REWARDS: [[f64; 2]; 5] = [[0.3, 0.1], [0.1, 0.2], [0.2, 0.3], [0.5, 0.6], [0.9, 1.0]];

fn chain_matrix(right: bool) -> [[f64; 5]; 5] {
    let mut m = [[0.0; 5]; 5];
    for (i, row) in m.iter_mut().enumerate() {
        let (pl, pr) = if right { (0.1, 0.7) } else { (0.7, 0.1) };
        row[i.saturating_sub(1)] += pl;
        row[i] += 0.2;
        row[(i + 1).min(4)] += pr;
    }
    m
}

/// `Q^pi` of the uniform policy on the chain by Gaussian elimination of
/// `(I - gamma P_pi) v = r_pi` over the 10 state-action pairs.
fn chain_q_uniform(gamma: f64) -> [[f64; 2]; 5] {
    let p = [chain_matrix(false), chain_matrix(true)];
    let n = 10;
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..5 {
        for a in 0..2 {
            let row = i * 2 + a;
            m[row][row] += 1.0;
            for j in 0..5 {
                for b in 0..2 {
                    m[row][j * 2 + b] -= gamma * p[a][i][j] * 0.5;
                }
            }
            m[row][n] = (1.0 - gamma) * CHAIN_REWARDS[i][a];
        }
    }
    for c in 0..n {
        let piv = (c..n).max_by(|x, y| m[*x][c].abs().total_cmp(&m[*y][c].abs())).unwrap();
        m.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    let mut q = [[0.0; 2]; 5];
    for i in 0..5 {
        for a in 0..2 {
            q[i][a] = m[i * 2 + a][n] / m[i * 2 + a][i * 2 + a];
        }
    }
    q
}

#[test]
fn tabular_iterates_contract_toward_q_pi() {
    for gamma in [0.5, 0.9] {
        let mdp = SyntheticMdp::chain5(gamma).unwrap();
        let oracle = GridOracle::with_defaults(&mdp).unwrap();
        let iters = tabular_lsvi(&oracle, BellmanTarget::Policy(&UniformPolicy), 300).unwrap();
        let exact = chain_q_uniform(gamma);
        let dist = |k: usize| {
            let mut m: f64 = 0.0;
            for i in 0..5 {
                for a in 0..2 {
                    m = m.max((iters[k].at(i, a) - exact[i][a]).abs());
                }
            }
            m
        };
        for k in 0..60 {
            assert!(dist(k + 1) <= gamma * dist(k) + 1e-14, "gamma {gamma}, k {k}");
        }
        assert!(dist(300) < 1e-10);
    }
}

fn continuous_mdp(gamma: f64) -> SyntheticMdp {
    SyntheticMdp::new(MdpConfig {
        dim: 2,
        gamma,
        kernel: KernelConfig::Gaussian {
            components: vec![fqi_lab::mdp::GaussianComponent {
                weight: 1.0,
                offset: 0.3,
                s_coef: 0.4,
                a_coef: 0.3,
                sd: 0.15,
            }],
        },
        reward: RewardConfig {
            mean: RewardMeanConfig::Linear { offset: 0.2, s_coef: 0.5, a_coef: 0.0 },
            noise: 0.0,
            normalize: true,
        },
        initial: InitialConfig::Uniform,
        actions: ActionSpaceConfig::Grid(3),
        seed: 0,
    })
    .unwrap()
}

#[test]
fn tabular_iterates_contract_on_a_continuous_state() {
    let gamma = 0.8;
    let mdp = continuous_mdp(gamma);
    let mut oracle = GridOracle::new(&mdp, 101, 1e-12).unwrap();
    oracle.ground_truth(BellmanTarget::Policy(&UniformPolicy)).unwrap();
    let q = oracle.q_pi().unwrap().clone();
    let iters = tabular_lsvi(&oracle, BellmanTarget::Policy(&UniformPolicy), 40).unwrap();
    for k in 0..40 {
        let (a, b) = (iters[k].sup_distance(&q), iters[k + 1].sup_distance(&q));
        assert!(b <= gamma * a + 1e-11, "k {k}: {b} > {gamma} * {a}");
    }
}

#[test]
fn zero_discount_learning_is_reward_regression() {
    let mdp = SyntheticMdp::chain5(0.0).unwrap();
    let data = sample_visitation(&mdp, &UniformPolicy, 4000, 3).unwrap();
    let (out, trace) = run_lsvi(&mdp, &data, &FqiConfig::new(1, Mode::Opl, DESK)).unwrap();
    assert!(matches!(out, LsviOutput::Policy(_)));
    let q1 = &trace.q_iterates[1];
    let mut sq = 0.0;
    for i in 0..5 {
        for a in 0..2 {
            let s = (i as f64 + 0.5) / 5.0;
            sq += (q1.eval(&[s, a as f64]) - CHAIN_REWARDS[i][a]).powi(2);
        }
    }
    let rmse = (sq / 10.0).sqrt();
    assert!(rmse <= 0.05, "{rmse}");
}

#[test]
fn single_state_evaluation_recovers_geometric_value() {
    let mdp = SyntheticMdp::single_state(0.5, 0.25, ActionSpaceConfig::Values(vec![0.0, 1.0])).unwrap();
    let data = sample_visitation(&mdp, &UniformPolicy, 200, 1).unwrap();
    let arch = Architecture { height: 2, width: 4, sparsity: 20, bound: 2.0 };
    let (out, _) = run_lsvi(&mdp, &data, &FqiConfig::new(30, Mode::Ope(Arc::new(UniformPolicy)), arch)).unwrap();
    // 0.25 / (1 - 0.5)
    assert!((out.value().unwrap() - 0.5).abs() < 1e-3);
}

#[test]
fn chain_evaluation_is_accurate() {
    let gamma = 0.9;
    let mdp = SyntheticMdp::chain5(gamma).unwrap();
    let exact = chain_q_uniform(gamma);
    let v_pi: f64 = exact.iter().map(|r| 0.2 * 0.5 * (r[0] + r[1])).sum();
    let mut errs = Vec::new();
    for seed in 0..3 {
        let data = sample_visitation(&mdp, &UniformPolicy, 5000, seed).unwrap();
        let mut cfg = FqiConfig::new(40, Mode::Ope(Arc::new(UniformPolicy)), DESK);
        cfg.train.seed = seed;
        let (out, _) = run_lsvi(&mdp, &data, &cfg).unwrap();
        errs.push((out.value().unwrap() - v_pi).abs());
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean <= 0.05, "{errs:?}");
}

#[test]
fn learning_returns_the_greedy_policy_of_the_last_iterate() {
    let mdp = SyntheticMdp::chain5(0.9).unwrap();
    let data = sample_visitation(&mdp, &UniformPolicy, 1000, 8).unwrap();
    let (out, trace) = run_lsvi(&mdp, &data, &FqiConfig::new(5, Mode::Opl, DESK)).unwrap();
    let LsviOutput::Policy(pi) = out else { panic!("learning returns a policy") };
    let reference = greedy_policy(trace.last());
    for i in 0..=100 {
        let s = [i as f64 / 100.0];
        assert_eq!(pi.greedy_index(&s, mdp.actions()), reference.greedy_index(&s, mdp.actions()));
    }
    assert_eq!(pi.q(), trace.last());
}

#[test]
fn identical_inputs_give_bit_identical_traces() {
    let mdp = SyntheticMdp::chain5(0.9).unwrap();
    let data = sample_visitation(&mdp, &UniformPolicy, 800, 4).unwrap();
    let mut cfg = FqiConfig::new(4, Mode::Opl, DESK);
    cfg.data_mode = DataMode::Split;
    cfg.split_seed = 17;
    let (_, a) = run_lsvi(&mdp, &data, &cfg).unwrap();
    let (_, b) = run_lsvi(&mdp, &data, &cfg).unwrap();
    let bits = |t: &FqiTrace| {
        t.q_iterates
            .iter()
            .flat_map(|q| q.params().iter().map(|v| v.to_bits()))
            .chain(t.per_iter_train_loss.iter().map(|v| v.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn one_iteration_makes_split_and_reuse_identical() {
    let mdp = SyntheticMdp::chain5(0.9).unwrap();
    let mut oracle = GridOracle::with_defaults(&mdp).unwrap();
    oracle.ground_truth(BellmanTarget::Policy(&UniformPolicy)).unwrap();
    let data = sample_visitation(&mdp, &UniformPolicy, 500, 2).unwrap();
    let cfg = FqiConfig::new(1, Mode::Ope(Arc::new(UniformPolicy)), DESK);
    let cmp = compare_reuse_vs_split(&mdp, &data, &cfg, &[1, 2, 3], &oracle).unwrap();
    assert_eq!(cmp.reuse, cmp.split);
}

/// Single affine layer on `(s, a)`: `w_s s + w_a a + b`.
fn affine(ws: f64, wa: f64, b: f64) -> ReluNetwork {
    ReluNetwork::from_layers(&[(vec![vec![ws, wa]], vec![b])], 3, 1.0, true).unwrap()
}

fn injected_trace(next: ReluNetwork) -> FqiTrace {
    FqiTrace {
        q_iterates: vec![affine(0.0, 0.0, 0.0), next],
        bellman_residuals: Vec::new(),
        per_iter_train_loss: vec![0.0],
        per_iter_samples: vec![1],
        wallclock: 0.0,
    }
}

#[test]
fn injected_iterates_give_known_residuals() {
    // gamma = 0: T Q_0 is the mean reward 0.2 + 0.5 s, linear so grid
    // interpolation is exact
    let mdp = continuous_mdp(0.0);
    let oracle = GridOracle::new(&mdp, 201, 1e-12).unwrap();
    let mu = state_actions(&sample_visitation(&mdp, &UniformPolicy, 2000, 5).unwrap());
    let target = BellmanTarget::Policy(&UniformPolicy);
    let mut exact = injected_trace(affine(0.5, 0.0, 0.2));
    let r = measure_bellman_residuals(&mut exact, &oracle, target, &mu).unwrap();
    assert!(r.max < 1e-12, "{}", r.max);
    let mut shifted = injected_trace(affine(0.5, 0.0, 0.3));
    let r = measure_bellman_residuals(&mut shifted, &oracle, target, &mu).unwrap();
    assert!((r.max - 0.1).abs() < 1e-12, "{}", r.max);
    assert_eq!(shifted.bellman_residuals, r.per_k);
}

/// Residuals of a trace on the chain by full quadrature: `T Q_k` written out
/// from the hand kernel, the norm taken against the summed visitation.
fn quadrature_residuals(trace: &FqiTrace, gamma: f64) -> Vec<f64> {
    let p = [chain_matrix(false), chain_matrix(true)];
    let mut state = [0.2; 5];
    let mut mu = [[0.0; 2]; 5];
    let mut w = 1.0 - gamma;
    while w > 1e-17 {
        let mut next = [0.0; 5];
        for i in 0..5 {
            for a in 0..2 {
                mu[i][a] += w * state[i] * 0.5;
                for j in 0..5 {
                    next[j] += state[i] * 0.5 * p[a][i][j];
                }
            }
        }
        state = next;
        w *= gamma;
    }
    let c = |i: usize| (i as f64 + 0.5) / 5.0;
    (0..trace.q_iterates.len() - 1)
        .map(|k| {
            let (qk, qn) = (&trace.q_iterates[k], &trace.q_iterates[k + 1]);
            let mut acc = 0.0;
            for i in 0..5 {
                for a in 0..2 {
                    let cont: f64 =
                        (0..5).map(|j| p[a][i][j] * 0.5 * (qk.eval(&[c(j), 0.0]) + qk.eval(&[c(j), 1.0]))).sum();
                    let tq = (1.0 - gamma) * CHAIN_REWARDS[i][a] + gamma * cont;
                    acc += mu[i][a] * (qn.eval(&[c(i), a as f64]) - tq).powi(2);
                }
            }
            acc.sqrt()
        })
        .collect()
}

#[test]
fn chain_residuals_match_full_quadrature() {
    let gamma = 0.9;
    let mdp = SyntheticMdp::chain5(gamma).unwrap();
    let oracle = GridOracle::with_defaults(&mdp).unwrap();
    let data = sample_visitation(&mdp, &UniformPolicy, 2000, 12).unwrap();
    let (_, mut trace) = run_lsvi(&mdp, &data, &FqiConfig::new(6, Mode::Ope(Arc::new(UniformPolicy)), DESK)).unwrap();
    let mu = state_actions(&sample_visitation(&mdp, &UniformPolicy, 4096, 99).unwrap());
    let mc = measure_bellman_residuals(&mut trace, &oracle, BellmanTarget::Policy(&UniformPolicy), &mu).unwrap();
    let quad = quadrature_residuals(&trace, gamma);
    for k in 0..quad.len() {
        assert!(
            (mc.per_k[k] - quad[k]).abs() <= 2.0 * mc.stderr[k] + 1e-12,
            "k {k}: {} vs {} (se {})",
            mc.per_k[k],
            quad[k],
            mc.stderr[k]
        );
    }
}

#[test]
fn oracle_q_function_is_usable_as_estimate() {
    // q_pi read back through the QFunction interface matches the linear solve
    let gamma = 0.9;
    let mdp = SyntheticMdp::chain5(gamma).unwrap();
    let mut oracle = GridOracle::with_defaults(&mdp).unwrap();
    oracle.ground_truth(BellmanTarget::Policy(&UniformPolicy)).unwrap();
    let q = oracle.q_pi().unwrap();
    let exact = chain_q_uniform(gamma);
    for i in 0..5 {
        for a in 0..2 {
            assert!((q.value(&[(i as f64 + 0.5) / 5.0], a as f64) - exact[i][a]).abs() < 1e-8);
        }
    }
}
