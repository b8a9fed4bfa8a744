mod support;

use oadino::similarity::{rank_candidates, score, CandidateIndex, JointRepresentation};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

const N_G: usize = 3;
const N_Z: usize = 4;

fn rep(id: &str, m: usize, seed: u64) -> JointRepresentation {
    let mut r = support::rng(seed);
    let data = (0..m * (N_G + N_Z)).map(|_| StandardNormal.sample(&mut r)).collect();
    JointRepresentation::new(id, N_G, N_Z, data).unwrap()
}

fn pool(n: usize, seed: u64) -> Vec<JointRepresentation> {
    (0..n)
        .map(|i| rep(&format!("c{i:03}"), 1 + (seed as usize + i) % 5, seed * 1000 + i as u64))
        .collect()
}

/// Mean over rows of `a` of the best cosine against rows of `b`, by loops.
fn naive_score(a: &JointRepresentation, b: &JointRepresentation) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..a.len() {
        let u = a.vector(i);
        let mut best = f64::NEG_INFINITY;
        for j in 0..b.len() {
            let v = b.vector(j);
            let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            best = best.max(dot / (norm(u) * norm(v)));
        }
        total += best;
    }
    total / a.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_matches_loop_oracle(ma in 1usize..8, mb in 1usize..8, seed in 0u64..10_000) {
        let a = rep("a", ma, seed);
        let b = rep("b", mb, seed + 1);
        prop_assert!((score(&a, &b).unwrap() - naive_score(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn index_scores_match_pairwise_scores(n in 1usize..40, seed in 0u64..10_000) {
        let cands = pool(n, seed);
        let q = rep("q", 3, seed + 7);
        let scores = CandidateIndex::new(&cands).unwrap().scores(&q).unwrap();
        for (c, s) in cands.iter().zip(scores) {
            prop_assert!((s - score(&q, c).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn self_score_is_one(m in 1usize..10, seed in 0u64..10_000) {
        let a = rep("a", m, seed);
        prop_assert!((score(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn a_copy_of_the_query_ranks_first(n in 1usize..30, m in 1usize..6, seed in 0u64..10_000) {
        let q = rep("q", m, seed);
        let mut cands = pool(n, seed + 1);
        let mut copy = q.clone();
        copy.image_id = "c000".into();
        cands[0] = copy;
        let list = rank_candidates(&q, &cands).unwrap();
        prop_assert_eq!(&list.entries[0].candidate_id, "c000");
    }

    #[test]
    fn ranking_ignores_rescaling(n in 2usize..30, c in 0.01f64..100.0, seed in 0u64..10_000) {
        let q = rep("q", 3, seed);
        let cands = pool(n, seed + 1);
        let scaled: Vec<_> = cands.iter().map(|r| r.scaled(c).unwrap()).collect();
        let a = rank_candidates(&q, &cands).unwrap();
        let b = rank_candidates(&q.scaled(1.0 / c).unwrap(), &scaled).unwrap();
        let ids_a: Vec<_> = a.ids().collect();
        let ids_b: Vec<_> = b.ids().collect();
        prop_assert_eq!(ids_a, ids_b);
    }

    #[test]
    fn extra_candidate_patches_never_lower_the_score(ma in 1usize..6, mb in 1usize..6, extra in 1usize..4, seed in 0u64..10_000) {
        let a = rep("a", ma, seed);
        let b = rep("b", mb, seed + 1);
        let more = rep("x", extra, seed + 2);
        let mut data = b.data().to_vec();
        data.extend_from_slice(more.data());
        let bigger = JointRepresentation::new("b", N_G, N_Z, data).unwrap();
        prop_assert!(score(&a, &bigger).unwrap() >= score(&a, &b).unwrap() - 1e-15);
    }

    #[test]
    fn ranking_is_a_sorted_permutation(n in 1usize..60, seed in 0u64..10_000) {
        let cands = pool(n, seed);
        let list = rank_candidates(&rep("q", 2, seed + 3), &cands).unwrap();
        let mut got: Vec<_> = list.ids().map(str::to_owned).collect();
        got.sort();
        let mut want: Vec<_> = cands.iter().map(|c| c.image_id.clone()).collect();
        want.sort();
        prop_assert_eq!(got, want);
        for w in list.entries.windows(2) {
            prop_assert!(w[0].score > w[1].score
                || (w[0].score == w[1].score && w[0].candidate_id < w[1].candidate_id));
        }
    }

    #[test]
    fn scores_stay_in_unit_interval(ma in 1usize..6, mb in 1usize..6, seed in 0u64..10_000) {
        let s = score(&rep("a", ma, seed), &rep("b", mb, seed + 9)).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}

#[test]
fn ties_break_by_candidate_id() {
    let q = rep("q", 2, 1);
    let mut cands: Vec<_> = ["z", "m", "a"].iter().map(|id| {
        let mut c = rep("t", 2, 5);
        c.image_id = (*id).into();
        c
    }).collect();
    cands.push(rep("b", 2, 6));
    let list = rank_candidates(&q, &cands).unwrap();
    let tied: Vec<_> = list.ids().filter(|id| *id != "b").collect();
    assert_eq!(tied, ["a", "m", "z"]);
}

#[test]
fn large_pool_spans_several_blocks() {
    let cands = pool(700, 42);
    let q = rep("q", 4, 43);
    let index = CandidateIndex::new(&cands).unwrap();
    let scores = index.scores(&q).unwrap();
    for (c, s) in cands.iter().zip(&scores).step_by(37) {
        assert!((s - naive_score(&q, c)).abs() < 1e-12);
    }
}
