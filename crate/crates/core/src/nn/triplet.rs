//! Triplet loss on squared Euclidean distances and semi-hard mining.

use super::tensor::Scalar;

pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum()
}

/// `max(0, d(a, p) - d(a, n) + margin)`.
pub fn triplet_loss<T: Scalar>(anchor: &[T], positive: &[T], negative: &[T], margin: f64) -> f64 {
    (squared_distance(anchor, positive) - squared_distance(anchor, negative) + margin).max(0.0)
}

/// Index triplet into a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

pub fn distance_matrix<T: Scalar>(embeddings: &[Vec<T>]) -> Vec<Vec<f64>> {
    let n = embeddings.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = squared_distance(&embeddings[i], &embeddings[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// For every ordered same-class pair `(a, p)`, picks the closest negative
/// with `d(a,p) < d(a,n) < d(a,p) + margin`; failing that, the farthest
/// negative with `d(a,n) < d(a,p) + margin`; failing that, nothing.
/// Ties go to the lowest index.
pub fn mine_semi_hard<T: Scalar>(embeddings: &[Vec<T>], labels: &[usize], margin: f64) -> Vec<Triplet> {
    assert_eq!(embeddings.len(), labels.len(), "one label per embedding");
    let d = distance_matrix(embeddings);
    mine_from_distances(&d, labels, margin)
}

pub fn mine_from_distances(d: &[Vec<f64>], labels: &[usize], margin: f64) -> Vec<Triplet> {
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let dap = d[a][p];
            let mut semi: Option<usize> = None;
            let mut fallback: Option<usize> = None;
            for neg in 0..n {
                if labels[neg] == labels[a] {
                    continue;
                }
                let dan = d[a][neg];
                if dan >= dap + margin {
                    continue;
                }
                if dan > dap {
                    if semi.is_none_or(|s| dan < d[a][s]) {
                        semi = Some(neg);
                    }
                } else if fallback.is_none_or(|f| dan > d[a][f]) {
                    fallback = Some(neg);
                }
            }
            if let Some(negative) = semi.or(fallback) {
                out.push(Triplet {
                    anchor: a,
                    positive: p,
                    negative,
                });
            }
        }
    }
    out
}

/// Mean hinge over `triplets` and its gradient with respect to each embedding.
pub fn triplet_batch_loss<T: Scalar>(embeddings: &[Vec<T>], triplets: &[Triplet], margin: f64) -> (f64, Vec<Vec<T>>) {
    let dim = embeddings.first().map_or(0, |e| e.len());
    let mut grads = vec![vec![0.0f64; dim]; embeddings.len()];
    if triplets.is_empty() {
        return (0.0, cast_grads(grads));
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    for t in triplets {
        let (a, p, n) = (&embeddings[t.anchor], &embeddings[t.positive], &embeddings[t.negative]);
        let slack = squared_distance(a, p) - squared_distance(a, n) + margin;
        if slack <= 0.0 {
            continue;
        }
        total += slack;
        for k in 0..dim {
            let (ak, pk, nk) = (a[k].to_f64(), p[k].to_f64(), n[k].to_f64());
            grads[t.anchor][k] += scale * 2.0 * (nk - pk);
            grads[t.positive][k] -= scale * 2.0 * (ak - pk);
            grads[t.negative][k] += scale * 2.0 * (ak - nk);
        }
    }
    (total * scale, cast_grads(grads))
}

fn cast_grads<T: Scalar>(g: Vec<Vec<f64>>) -> Vec<Vec<T>> {
    g.into_iter()
        .map(|row| row.into_iter().map(T::from_f64).collect())
        .collect()
}

/// Mean hinge over every valid `(a, p, n)` triplet; the validation metric.
pub fn batch_all_loss<T: Scalar>(embeddings: &[Vec<T>], labels: &[usize], margin: f64) -> f64 {
    let d = distance_matrix(embeddings);
    let n = labels.len();
    let (mut total, mut count) = (0.0, 0usize);
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for neg in (0..n).filter(|&k| labels[k] != labels[a]) {
                total += (d[a][p] - d[a][neg] + margin).max(0.0);
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive selector: enumerate every candidate, rank, take the first.
    fn brute_force(e: &[Vec<f64>], labels: &[usize], margin: f64) -> Vec<Triplet> {
        let dist = |i: usize, j: usize| -> f64 { e[i].iter().zip(&e[j]).map(|(a, b)| (a - b) * (a - b)).sum() };
        let mut out = Vec::new();
        for a in 0..e.len() {
            for p in 0..e.len() {
                if a == p || labels[a] != labels[p] {
                    continue;
                }
                let dap = dist(a, p);
                let negs: Vec<(usize, f64)> = (0..e.len())
                    .filter(|&n| labels[n] != labels[a])
                    .map(|n| (n, dist(a, n)))
                    .collect();
                let mut semi: Vec<&(usize, f64)> = negs.iter().filter(|(_, d)| *d > dap && *d < dap + margin).collect();
                semi.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
                let mut easy: Vec<&(usize, f64)> = negs.iter().filter(|(_, d)| *d <= dap && *d < dap + margin).collect();
                easy.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
                if let Some(&&(n, _)) = semi.first().or(easy.first()) {
                    out.push(Triplet {
                        anchor: a,
                        positive: p,
                        negative: n,
                    });
                }
            }
        }
        out
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let e = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        (e, labels)
    }

    #[test]
    fn loss_examples() {
        let a = [0.0f64, 0.0];
        // d(a,p) = d(a,n)
        assert!((triplet_loss(&a, &[1.0, 0.0], &[0.0, 1.0], 0.2) - 0.2).abs() < 1e-12);
        let p = [0.3f64.sqrt(), 0.0];
        let n = [0.0, 0.4f64.sqrt()];
        assert!((triplet_loss(&a, &p, &n, 0.2) - 0.1).abs() < 1e-12);
        assert_eq!(triplet_loss(&a, &[0.1, 0.0], &[2.0, 0.0], 0.2), 0.0);
    }

    #[test]
    fn single_class_gives_nothing() {
        let e = vec![vec![0.0f64, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]];
        assert!(mine_semi_hard(&e, &[0, 0, 0], 0.2).is_empty());
    }

    #[test]
    fn miner_matches_brute_force_on_8_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let (e, labels) = random_batch(&mut rng, 8, 3, 2);
            assert_eq!(mine_semi_hard(&e, &labels, 0.2), brute_force(&e, &labels, 0.2));
        }
    }

    #[test]
    fn semi_hard_predicate_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (e, labels) = random_batch(&mut rng, 16, 4, 2);
        let d = distance_matrix(&e);
        for t in mine_semi_hard(&e, &labels, 0.5) {
            let (dap, dan) = (d[t.anchor][t.positive], d[t.anchor][t.negative]);
            assert!(dan < dap + 0.5);
            let semi_exists = (0..16).any(|n| labels[n] != labels[t.anchor] && d[t.anchor][n] > dap && d[t.anchor][n] < dap + 0.5);
            if semi_exists {
                assert!(dap < dan);
            }
        }
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (e, labels) = random_batch(&mut rng, 6, 3, 2);
        let triplets = mine_semi_hard(&e, &labels, 1.0);
        assert!(!triplets.is_empty());
        let (_, g) = triplet_batch_loss(&e, &triplets, 1.0);
        let h = 1e-6;
        for i in 0..e.len() {
            for k in 0..3 {
                let mut plus = e.clone();
                plus[i][k] += h;
                let mut minus = e.clone();
                minus[i][k] -= h;
                let num = (triplet_batch_loss(&plus, &triplets, 1.0).0 - triplet_batch_loss(&minus, &triplets, 1.0).0) / (2.0 * h);
                assert!((num - g[i][k]).abs() < 1e-5, "{num} vs {}", g[i][k]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn miner_equals_oracle(seed in any::<u64>(), n in 2usize..=16, classes in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (e, labels) = random_batch(&mut rng, n, 3, classes);
            prop_assert_eq!(mine_semi_hard(&e, &labels, 0.2), brute_force(&e, &labels, 0.2));
        }

        #[test]
        fn loss_is_translation_invariant(
            v in proptest::collection::vec(-1.0f64..1.0, 12),
            shift in proptest::collection::vec(-0.5f64..0.5, 4),
        ) {
            let (a, p, n) = (&v[0..4], &v[4..8], &v[8..12]);
            let moved = |x: &[f64]| x.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<_>>();
            let before = triplet_loss(a, p, n, 0.2);
            let after = triplet_loss(&moved(a), &moved(p), &moved(n), 0.2);
            prop_assert!((before - after).abs() < 1e-12);
        }
    }
}
