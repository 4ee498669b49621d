use proptest::prelude::*;
use xgoal_core::cluster::ClusterModel;
use xgoal_core::numkit::{DenseMatrix, Rng};
use xgoal_core::objective::{
    align_cluster, align_cluster_with_anchors, anchor_log_distributions, cluster_loss, node_loss, total_loss,
    LossWeights,
};

#[path = "support/oracles.rs"]
mod oracles;
use oracles::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn terms_match_direct_oracles(seed in any::<u64>(), n in 1usize..=16, v_count in 1usize..=3, d in 1usize..6) {
        let inst = instance(seed, n, v_count, d);
        if let Err(e) = oracle_mismatch(&inst, 1e-10) {
            prop_assert!(false, "{}", e);
        }
        if let Err(e) = bound_violation(&inst) {
            prop_assert!(false, "{}", e);
        }
        let (report, _) = total_loss(&inst.layers, Some(&inst.models), &LossWeights::default()).unwrap();
        let accounted: f64 = report.per_layer.iter().map(|l| l.l_node + l.l_cluster).sum::<f64>() + report.r_node + report.r_cluster;
        prop_assert!(close(report.total, accounted, 1e-12));
        if v_count == 1 {
            prop_assert_eq!((report.r_node, report.r_cluster), (0.0, 0.0));
        }
    }

    #[test]
    fn lambda_scaling_is_exact(seed in any::<u64>(), c in 0.0f64..10.0) {
        let inst = instance(seed, 6, 1, 3);
        let w1 = LossWeights { lambda_n: 1.0, ..LossWeights::zero() };
        let wc = LossWeights { lambda_n: c, ..LossWeights::zero() };
        let (r1, g1) = total_loss(&inst.layers, None, &w1).unwrap();
        let (rc, gc) = total_loss(&inst.layers, None, &wc).unwrap();
        prop_assert_eq!(rc.total, c * r1.total);
        for (a, b) in g1.iter().zip(&gc) {
            prop_assert_eq!(&a.h.scaled(c), &b.h);
            prop_assert_eq!(&a.h_pos.scaled(c), &b.h_pos);
        }
        // with several layers the per-layer sums round, so only to round-off
        let inst = instance(seed, 6, 3, 3);
        let (r1, _) = total_loss(&inst.layers, None, &w1).unwrap();
        let (rc, _) = total_loss(&inst.layers, None, &wc).unwrap();
        prop_assert!((rc.total - c * r1.total).abs() <= 1e-14 * rc.total.abs().max(1.0));
    }
}

#[test]
fn zero_weights_and_warmup_isolation() {
    let inst = instance(3, 8, 2, 4);
    let (r, g) = total_loss(&inst.layers, Some(&inst.models), &LossWeights::zero()).unwrap();
    assert_eq!(r.total, 0.0);
    assert!(g
        .iter()
        .all(|g| g.h.max_abs() == 0.0 && g.h_pos.max_abs() == 0.0 && g.h_neg.max_abs() == 0.0));

    let w = LossWeights {
        lambda_n: 0.7,
        ..LossWeights::zero()
    };
    let (r, _) = total_loss(&inst.layers, None, &w).unwrap();
    let sum: f64 = inst
        .layers
        .iter()
        .map(|l| node_loss(&l.h, &l.h_pos, &l.h_neg).unwrap().loss)
        .sum();
    assert!((r.total - 0.7 * sum).abs() < 1e-12);
    assert!(total_loss(&inst.layers, None, &LossWeights::default()).is_err());
}

fn fd_check(base: &DenseMatrix, analytic: &DenseMatrix, f: impl Fn(&DenseMatrix) -> f64) -> f64 {
    const STEP: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    for idx in 0..base.data().len() {
        let mut x = base.clone();
        x.data_mut()[idx] += STEP;
        let up = f(&x);
        x.data_mut()[idx] -= 2.0 * STEP;
        let down = f(&x);
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic.data()[idx];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
    }
    worst
}

#[test]
fn node_and_cluster_gradients_n8() {
    let inst = instance(17, 8, 1, 4);
    let l = &inst.layers[0];
    let out = node_loss(&l.h, &l.h_pos, &l.h_neg).unwrap();
    assert!(fd_check(&l.h, &out.grad_h, |h| node_loss(h, &l.h_pos, &l.h_neg).unwrap().loss) < 1e-6);
    assert!(fd_check(&l.h_pos, &out.grad_pos, |p| node_loss(&l.h, p, &l.h_neg).unwrap().loss) < 1e-6);
    assert!(fd_check(&l.h_neg, &out.grad_neg, |q| node_loss(&l.h, &l.h_pos, q).unwrap().loss) < 1e-6);

    let mut rng = Rng::new(18);
    let m = ClusterModel::new(
        DenseMatrix::from_fn(3, 4, |_, _| rng.normal()),
        (0..8).map(|i| i % 3).collect(),
        0.5,
    )
    .unwrap();
    let cl = cluster_loss(&l.h, &m).unwrap();
    assert!(fd_check(&l.h, &cl.grad_h, |h| cluster_loss(h, &m).unwrap().loss) < 1e-6);
}

#[test]
fn cluster_alignment_has_no_anchor_side_gradient() {
    // V = 2, K = (3, 5)
    let mut rng = Rng::new(21);
    let h = vec![tanh_matrix(7, 4, &mut rng), tanh_matrix(7, 4, &mut rng)];
    let models = vec![
        ClusterModel::new(DenseMatrix::from_fn(3, 4, |_, _| rng.normal()), vec![0; 7], 0.5).unwrap(),
        ClusterModel::new(DenseMatrix::from_fn(5, 4, |_, _| rng.normal()), vec![0; 7], 0.5).unwrap(),
    ];
    let anchors = anchor_log_distributions(&h, &models).unwrap();
    let out = align_cluster(&h, &models).unwrap();
    assert!((out.loss - o_align_cluster(&h, &models)).abs() < 1e-12);
    for v in 0..2 {
        let with = |m: &DenseMatrix| {
            let mut hh = h.clone();
            hh[v] = m.clone();
            hh
        };
        // frozen anchors: finite differences agree with the analytic gradient
        let frozen = fd_check(&h[v], &out.grad_h[v], |m| {
            align_cluster_with_anchors(&with(m), &models, &anchors).unwrap().loss
        });
        assert!(frozen < 1e-6, "layer {v}: {frozen:.3e}");
        // live anchors move too, so the full derivative differs from the analytic one
        let live = fd_check(&h[v], &out.grad_h[v], |m| {
            align_cluster(&with(m), &models).unwrap().loss
        });
        assert!(live > 1e-3, "layer {v}: {live:.3e}");
    }
}

#[test]
fn shared_layers_align_to_zero() {
    let mut rng = Rng::new(4);
    let h = tanh_matrix(9, 3, &mut rng);
    let m = ClusterModel::new(DenseMatrix::from_fn(4, 3, |_, _| rng.normal()), vec![1; 9], 0.2).unwrap();
    let rc = align_cluster(&[h.clone(), h.clone()], &[m.clone(), m.clone()]).unwrap();
    assert!(rc.loss < 1e-9);
    let p = anchor_log_distributions(&[h.clone(), h.clone()], &[m.clone(), m]).unwrap();
    assert_eq!(p[0], p[1]);
}
