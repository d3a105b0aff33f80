use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Episode;
use crate::error::{Error, Result};

/// Split sizes by largest remainder, with every split non-empty.
fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: [usize; 3] = [0; 3];
    for (s, x) in sizes.iter_mut().zip(&exact) {
        *s = (x + 1e-9).floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut remaining = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    for i in 0..3 {
        if sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
            sizes[donor] -= 1;
            sizes[i] = 1;
        }
    }
    sizes
}

/// Seeded shuffle into disjoint train / val / test lists.
pub fn split_dataset(
    episodes: &[Episode],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Episode>, Vec<Episode>, Vec<Episode>)> {
    let ratios = [ratios.0, ratios.1, ratios.2];
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    if episodes.len() < 3 {
        return Err(Error::Invalid(format!(
            "cannot split {} episodes into 3 non-empty parts",
            episodes.len()
        )));
    }
    let mut idx: Vec<usize> = (0..episodes.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [a, b, _] = split_sizes(episodes.len(), ratios);
    let pick = |range: &[usize]| range.iter().map(|&i| episodes[i].clone()).collect::<Vec<_>>();
    Ok((pick(&idx[..a]), pick(&idx[a..a + b]), pick(&idx[a + b..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_episodes, GeneratorConfig};
    use std::collections::HashSet;

    fn corpus(n: usize) -> Vec<Episode> {
        generate_episodes(99, n, &GeneratorConfig::default()).unwrap()
    }

    #[test]
    fn eighty_ten_ten() {
        let (a, b, c) = split_dataset(&corpus(10), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
    }

    #[test]
    fn same_seed_same_partition() {
        let eps = corpus(20);
        assert_eq!(
            split_dataset(&eps, (0.6, 0.2, 0.2), 5).unwrap(),
            split_dataset(&eps, (0.6, 0.2, 0.2), 5).unwrap()
        );
    }

    #[test]
    fn partitions_are_disjoint_and_cover() {
        let eps = corpus(23);
        for seed in 0..100 {
            let (a, b, c) = split_dataset(&eps, (0.5, 0.3, 0.2), seed).unwrap();
            let ids = |v: &[Episode]| v.iter().map(|e| e.id.clone()).collect::<HashSet<_>>();
            let (ia, ib, ic) = (ids(&a), ids(&b), ids(&c));
            assert!(ia.is_disjoint(&ib) && ia.is_disjoint(&ic) && ib.is_disjoint(&ic));
            assert_eq!(ia.len() + ib.len() + ic.len(), eps.len());
            assert!(!a.is_empty() && !b.is_empty() && !c.is_empty());
        }
    }

    #[test]
    fn too_few_episodes() {
        assert!(split_dataset(&corpus(2), (0.8, 0.1, 0.1), 0).is_err());
        assert!(split_dataset(&corpus(5), (0.8, 0.1, 0.2), 0).is_err());
    }

    #[test]
    fn tiny_corpus_keeps_every_split() {
        assert_eq!(split_sizes(3, [0.8, 0.1, 0.1]), [1, 1, 1]);
    }
}
