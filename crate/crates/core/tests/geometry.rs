mod common;

use common::*;
use trimodal_core::geometry::{
    alpha, triangle_area_sq_values, triplet_area_loss_naive_grad, triplet_area_sums_fast,
    triplet_area_sums_naive, TripletCounts,
};
use trimodal_core::gradcheck::{check_gradient, FD_STEP, GRAD_TOL};
use trimodal_core::losses::{triangular_area_loss, TriBatch};
use trimodal_core::Graph;

/// Squared area from the angle between the edge vectors.
fn area_sq_by_angle(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let u: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let v: Vec<f64> = c.iter().zip(a).map(|(x, y)| x - y).collect();
    let (nu, nv) = (dot(&u, &u).sqrt(), dot(&v, &v).sqrt());
    let theta = (dot(&u, &v) / (nu * nv)).clamp(-1.0, 1.0).acos();
    0.25 * (nu * nv * theta.sin()).powi(2)
}

/// Planar squared area by the shoelace formula.
fn shoelace_sq(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let twice = a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]);
    (0.5 * twice).powi(2)
}

#[test]
fn area_matches_angle_formula() {
    let mut r = rng(1);
    for _ in 0..50 {
        let p = gaussian(&mut r, 48);
        let (a, b, c) = (&p[..16], &p[16..32], &p[32..]);
        let got = triangle_area_sq_values(a, b, c).unwrap();
        assert!(rel(got, area_sq_by_angle(a, b, c)) <= 1e-10);
    }
}

#[test]
fn area_is_symmetric_in_its_vertices() {
    let mut r = rng(2);
    for _ in 0..50 {
        let p = gaussian(&mut r, 15);
        let v = [&p[..5], &p[5..10], &p[10..]];
        let base = triangle_area_sq_values(v[0], v[1], v[2]).unwrap();
        for [i, j, k] in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let other = triangle_area_sq_values(v[i], v[j], v[k]).unwrap();
            assert!(rel(base, other) <= 1e-12, "{base} vs {other}");
        }
    }
}

#[test]
fn area_invariant_under_rigid_motion() {
    let mut r = rng(3);
    for d in [2, 3, 8] {
        for _ in 0..20 {
            let p = gaussian(&mut r, 3 * d);
            let rot = random_rotation(&mut r, d);
            let shift = gaussian(&mut r, d);
            let q = transform_rows(&p, d, &rot, &shift);
            let before = triangle_area_sq_values(&p[..d], &p[d..2 * d], &p[2 * d..]).unwrap();
            let after = triangle_area_sq_values(&q[..d], &q[d..2 * d], &q[2 * d..]).unwrap();
            assert!(rel(before, after) <= 1e-9);
        }
    }
}

#[test]
fn triplet_counts() {
    let mut r = rng(4);
    for b in [2usize, 3, 5] {
        let g = Graph::new();
        let z: Vec<_> = (0..3)
            .map(|_| constant(&g, 2 * b, 3, &gaussian(&mut r, 6 * b)))
            .collect();
        let sums = triplet_area_sums_naive(&z[0], &z[1], &z[2]).unwrap();
        let n = 2 * b;
        let mut pos = 0u64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    pos += u64::from(i / 2 == j / 2 && j / 2 == k / 2);
                }
            }
        }
        assert_eq!(pos, 8 * b as u64);
        assert_eq!(sums.counts.positive, 8 * b as u64);
        assert_eq!(sums.counts.negative, 8 * (b * b * b - b) as u64);
        assert_eq!(sums.counts, TripletCounts::for_batch(b));
    }
}

#[test]
fn hand_enumeration_b2_d2() {
    let z1 = [1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0];
    let z2 = [0.0, 1.0, 1.0, 0.0, 0.0, -1.0, -1.0, 0.0];
    let z3 = [0.5, 0.5, -0.5, 0.5, 0.5, -0.5, -0.5, -0.5];
    let (mut pos, mut neg) = (0.0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                let a = shoelace_sq(row(&z1, 2, i), row(&z2, 2, j), row(&z3, 2, k));
                if i / 2 == j / 2 && j / 2 == k / 2 {
                    pos += a;
                } else {
                    neg += a;
                }
            }
        }
    }
    let (pos, neg) = (pos / 16.0, neg / 48.0);
    let g = Graph::new();
    let [a, b, c] = [z1, z2, z3].map(|z| constant(&g, 4, 2, &z));
    let naive = triplet_area_sums_naive(&a, &b, &c).unwrap();
    assert_eq!(naive.pos_mean, pos);
    assert!(rel(naive.neg_mean, neg) <= 1e-15);
    let fast = triplet_area_sums_fast(&a, &b, &c).unwrap();
    assert!(rel(fast.pos_mean.item().unwrap(), pos) <= 1e-12);
    assert!(rel(fast.neg_mean.item().unwrap(), neg) <= 1e-12);
}

#[test]
fn alpha_weighted_sum_matches_means() {
    let b = 4;
    let d = 8;
    let mut r = rng(5);
    let z: Vec<Vec<f64>> = (0..3).map(|_| gaussian(&mut r, 2 * b * d)).collect();
    let mut direct = 0.0;
    for i in 0..2 * b {
        for j in 0..2 * b {
            for k in 0..2 * b {
                let w: f64 = alpha(i / 2 + 1, j / 2 + 1, k / 2 + 1, b).unwrap();
                direct += w * triangle_area_sq_values(
                    row(&z[0], d, i),
                    row(&z[1], d, j),
                    row(&z[2], d, k),
                )
                .unwrap();
            }
        }
    }
    let g = Graph::new();
    let t: Vec<_> = z.iter().map(|x| constant(&g, 2 * b, d, x)).collect();
    let naive = triplet_area_sums_naive(&t[0], &t[1], &t[2]).unwrap();
    assert!(rel(naive.loss(), direct) <= 1e-12);
    let fast =
        triangular_area_loss(&TriBatch::new(t[0].clone(), t[1].clone(), t[2].clone()).unwrap())
            .unwrap();
    assert!(rel(fast.item().unwrap(), direct) <= 1e-9);
}

#[test]
fn alpha_on_two_samples() {
    assert_eq!(alpha::<f64>(1, 1, 1, 2).unwrap(), 1.0 / 16.0);
    assert!((alpha::<f64>(1, 2, 1, 2).unwrap() + 1.0 / 48.0).abs() < 1e-15);
}

#[test]
fn identical_rows_give_zero_on_both_routes() {
    let g = Graph::new();
    let z = constant(&g, 6, 4, &[0.5, -0.5, 0.5, 0.5].repeat(6));
    let naive = triplet_area_sums_naive(&z, &z, &z).unwrap();
    assert_eq!((naive.pos_mean, naive.neg_mean), (0.0, 0.0));
    let fast = triplet_area_sums_fast(&z, &z, &z).unwrap();
    assert!(fast.pos_mean.item().unwrap().abs() < 1e-15);
    assert!(fast.neg_mean.item().unwrap().abs() < 1e-15);
}

/// Values and gradients of the two routes over 100 random instances.
#[test]
fn naive_and_fast_agree() {
    let mut r = rng(6);
    let mut worst = (0.0f64, 0.0f64);
    for t in 0..100 {
        let b = [2, 3, 4, 8, 16][t % 5];
        let d = [2, 8, 32][(t / 5) % 3];
        let n = 2 * b;
        let data: Vec<Vec<f64>> = (0..3).map(|_| unit_rows(&mut r, n, d)).collect();
        let g = Graph::new();
        let p: Vec<_> = data
            .iter()
            .map(|x| g.param(vec![n, d], x.clone()).unwrap())
            .collect();
        let naive = triplet_area_sums_naive(&p[0], &p[1], &p[2]).unwrap();
        let fast = triplet_area_sums_fast(&p[0], &p[1], &p[2]).unwrap();
        let vals = [
            rel(naive.pos_mean, fast.pos_mean.item().unwrap()),
            rel(naive.neg_mean, fast.neg_mean.item().unwrap()),
        ];
        let grads = fast.loss().unwrap().backward().unwrap();
        let (_, hand) = triplet_area_loss_naive_grad(&p[0], &p[1], &p[2]).unwrap();
        let mut gerr = 0.0f64;
        for m in 0..3 {
            let auto = grads.get(&p[m]).unwrap();
            gerr = gerr.max(max_rel(auto, &hand[m], 1e-8));
        }
        worst = (worst.0.max(vals[0].max(vals[1])), worst.1.max(gerr));
        assert!(
            vals.iter().all(|&v| v <= 1e-9),
            "instance {t} (B={b}, d={d}): {vals:?}"
        );
        assert!(
            gerr <= 1e-9,
            "instance {t} (B={b}, d={d}): gradient rel err {gerr}"
        );
    }
    eprintln!(
        "worst value rel err {:.2e}, gradient rel err {:.2e}",
        worst.0, worst.1
    );
}

#[test]
fn fast_gradient_matches_finite_differences() {
    let mut r = rng(7);
    let (b, d) = (3, 4);
    for _ in 0..5 {
        let x = gaussian(&mut r, 3 * 2 * b * d);
        let chk = check_gradient(
            |t| {
                let rows =
                    |m: usize| t.select_rows(&(m * 2 * b..(m + 1) * 2 * b).collect::<Vec<_>>());
                triplet_area_sums_fast(&rows(0)?, &rows(1)?, &rows(2)?)?.loss()
            },
            &x,
            &[6 * b, d],
            FD_STEP,
        )
        .unwrap();
        assert!(chk.passes(GRAD_TOL), "{}", chk.max_rel_err);
    }
}

#[test]
fn loss_invariant_under_rigid_motion() {
    let mut r = rng(8);
    let (b, d) = (4, 6);
    let n = 2 * b;
    for _ in 0..10 {
        let rot = random_rotation(&mut r, d);
        let shift = gaussian(&mut r, d);
        let z: Vec<Vec<f64>> = (0..3).map(|_| unit_rows(&mut r, n, d)).collect();
        let moved: Vec<Vec<f64>> = z
            .iter()
            .map(|x| transform_rows(x, d, &rot, &shift))
            .collect();
        let eval = |zs: &[Vec<f64>]| {
            let g = Graph::new();
            let t: Vec<_> = zs.iter().map(|x| constant(&g, n, d, x)).collect();
            triangular_area_loss(&TriBatch::new(t[0].clone(), t[1].clone(), t[2].clone()).unwrap())
                .unwrap()
                .item()
                .unwrap()
        };
        assert!(rel(eval(&z), eval(&moved)) <= 1e-9);
    }
}
