use std::collections::BTreeMap;

use proptest::prelude::*;
use slam2d_core::evaluation::{align, ape, ApeOptions, Trajectory};
use slam2d_core::factor_graph::{factor_error, linearize, optimize, Factor, FactorGraph, NoiseModel, Values, VarId};
use slam2d_core::{OptimizerConfig, Pose2, Tangent2};

fn pose() -> impl Strategy<Value = Pose2> {
    (-5.0..5.0f64, -5.0..5.0f64, -3.1..3.1f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
}

fn small() -> impl Strategy<Value = Pose2> {
    (-0.1..0.1f64, -0.1..0.1f64, -0.1..0.1f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
}

fn trajectory(n: usize) -> impl Strategy<Value = Trajectory> {
    prop::collection::vec(pose(), n).prop_map(|ps| {
        let mut t = Trajectory::new();
        for (i, p) in ps.into_iter().enumerate() {
            t.push(i as f64 * 0.1, p).unwrap();
        }
        t
    })
}

/// Five poses: a chain plus two skip edges, noisy measurements.
fn graph_case() -> impl Strategy<Value = (FactorGraph, Values)> {
    (prop::collection::vec(pose(), 5), prop::collection::vec(small(), 7), prop::collection::vec(small(), 5)).prop_map(
        |(truth, noise, offsets)| {
            let mut g = FactorGraph::new();
            g.add(Factor::prior(VarId(0), truth[0], NoiseModel::diagonal(0.1, 0.2, 0.05)));
            let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (1, 3), (2, 4)];
            for (k, (a, b)) in edges.into_iter().enumerate() {
                let z = truth[a].between(&truth[b]) * noise[k];
                g.add(Factor::between(VarId(a as u64), VarId(b as u64), z, NoiseModel::diagonal(0.3, 0.1, 0.07)));
            }
            let v = (0..5).map(|i| (VarId(i as u64), truth[i] * offsets[i])).collect();
            (g, v)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_inverts_exp(dx in -10.0..10.0f64, dy in -10.0..10.0f64, dt in -3.0..3.0f64) {
        let xi = Tangent2::new(dx, dy, dt);
        let back = Pose2::exp(&xi).log();
        prop_assert!((back.dx - dx).abs() < 1e-9 && (back.dy - dy).abs() < 1e-9 && (back.dtheta - dt).abs() < 1e-9);
    }

    #[test]
    fn between_composes_back(a in pose(), b in pose()) {
        let c = a * a.between(&b);
        prop_assert!((c.x - b.x).abs() < 1e-9 && (c.y - b.y).abs() < 1e-9);
        prop_assert!(Pose2::from_rotation(c.theta - b.theta).theta.abs() < 1e-9);
        prop_assert!(c.theta > -std::f64::consts::PI && c.theta <= std::f64::consts::PI);
    }

    #[test]
    fn linearization_matches_finite_differences((g, v) in graph_case()) {
        let sys = linearize(&g, &v).unwrap();
        let j = sys.dense_jacobian();
        let r = sys.dense_residual();
        let stack = |vals: &Values| -> Vec<f64> {
            g.factors().iter().flat_map(|f| factor_error(f, vals).unwrap().iter().copied().collect::<Vec<_>>()).collect()
        };
        let r0 = stack(&v);
        for (k, x) in r0.iter().enumerate() {
            prop_assert!((r[k] - x).abs() < 1e-12);
        }
        let h = 1e-6;
        for (c, id) in sys.ordering.iter().enumerate() {
            for axis in 0..3 {
                let mut d = [0.0; 3];
                d[axis] = h;
                let plus = v.retract(&BTreeMap::from([(*id, Tangent2::new(d[0], d[1], d[2]))]));
                d[axis] = -h;
                let minus = v.retract(&BTreeMap::from([(*id, Tangent2::new(d[0], d[1], d[2]))]));
                let (rp, rm) = (stack(&plus), stack(&minus));
                for k in 0..rp.len() {
                    let fd = (rp[k] - rm[k]) / (2.0 * h);
                    prop_assert!((fd - j[(k, 3 * c + axis)]).abs() < 1e-6, "row {} col {}: {} vs {}", k, 3 * c + axis, fd, j[(k, 3 * c + axis)]);
                }
            }
        }
    }

    #[test]
    fn optimizer_ignores_variable_ids((g, v) in graph_case(), perm in Just([3u64, 0, 4, 1, 2]).prop_shuffle()) {
        let map = |id: VarId| VarId(perm[id.0 as usize] * 7 + 11);
        let mut g2 = FactorGraph::new();
        for f in g.factors().iter().rev() {
            g2.add(match f {
                Factor::Prior(p) => Factor::prior(map(p.var), p.z, p.noise),
                Factor::Between(b) => Factor::between(map(b.var_a), map(b.var_b), b.z, b.noise),
            });
        }
        let v2: Values = v.iter().map(|(id, p)| (map(id), *p)).collect();
        let cfg = OptimizerConfig::default();
        let (_, r1) = optimize(&g, &v, &cfg).unwrap();
        let (_, r2) = optimize(&g2, &v2, &cfg).unwrap();
        prop_assert!((r1.final_error - r2.final_error).abs() < 1e-9, "{} vs {}", r1.final_error, r2.final_error);
    }

    #[test]
    fn ape_is_frame_independent(r in trajectory(12), noise in prop::collection::vec(small(), 12), g in pose()) {
        let mut e = Trajectory::new();
        for (s, n) in r.samples().iter().zip(&noise) {
            e.push(s.t, s.pose * *n).unwrap();
        }
        let raw = ApeOptions { align: false, ..Default::default() };
        let a = ape(&r, &e, &raw).unwrap();
        let b = ape(&r.transformed(&g), &e.transformed(&g), &raw).unwrap();
        prop_assert!((a.rmse - b.rmse).abs() < 1e-9);
        let aligned = ape(&r, &e, &ApeOptions::default()).unwrap();
        prop_assert!(aligned.rmse <= a.rmse + 1e-12);
        let mean_sq = a.errors.iter().map(|x| x * x).sum::<f64>() / a.num_pairs as f64;
        prop_assert!((a.rmse * a.rmse - mean_sq).abs() < 1e-12);
    }

    #[test]
    fn alignment_recovers_known_transform(r in trajectory(20), g in pose()) {
        let e = r.transformed(&g);
        let pairs: Vec<_> = (0..20).map(|i| (i, i)).collect();
        let got = align(&r, &e, &pairs).unwrap();
        let d = got.between(&g.inverse());
        prop_assert!(d.x.abs() < 1e-9 && d.y.abs() < 1e-9 && d.theta.abs() < 1e-9);
    }
}
