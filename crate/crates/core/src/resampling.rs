//! Classical resampling: weighted ensemble -> equally weighted ensemble.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResamplingScheme {
    Multinomial,
    #[default]
    Stratified,
    Systematic,
}

impl std::str::FromStr for ResamplingScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multinomial" => Ok(Self::Multinomial),
            "stratified" => Ok(Self::Stratified),
            "systematic" => Ok(Self::Systematic),
            other => Err(format!("unknown resampling scheme '{other}'")),
        }
    }
}

/// Ancestor indices, one per output particle.
pub type ResampleIndices = Vec<usize>;

fn cumulative<T: Real>(weights: &[T]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w.to_f64_lossy();
            acc
        })
        .collect();
    // Pin the last step so draws in [0, 1) always land inside.
    if let Some(last) = cdf.last_mut() {
        *last = f64::INFINITY;
    }
    cdf
}

/// Inverse-CDF lookup for ascending draws: the first index whose cumulative
/// weight strictly exceeds each draw.
fn lookup_sorted(cdf: &[f64], draws: impl Iterator<Item = f64>) -> ResampleIndices {
    let mut out = Vec::with_capacity(cdf.len());
    let mut k = 0;
    for u in draws {
        while cdf[k] <= u {
            k += 1;
        }
        out.push(k);
    }
    out
}

pub fn resample_multinomial<T: Real, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> ResampleIndices {
    let cdf = cumulative(weights);
    (0..weights.len())
        .map(|_| {
            let u: f64 = rng.random();
            cdf.partition_point(|&c| c <= u)
        })
        .collect()
}

pub fn resample_stratified<T: Real, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> ResampleIndices {
    let n = weights.len();
    let cdf = cumulative(weights);
    let draws: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random::<f64>()) / n as f64).collect();
    lookup_sorted(&cdf, draws.into_iter())
}

pub fn resample_systematic<T: Real, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> ResampleIndices {
    let n = weights.len();
    let cdf = cumulative(weights);
    let u: f64 = rng.random();
    lookup_sorted(&cdf, (0..n).map(move |i| (i as f64 + u) / n as f64))
}

pub fn resample<T: Real, R: Rng + ?Sized>(scheme: ResamplingScheme, weights: &[T], rng: &mut R) -> ResampleIndices {
    match scheme {
        ResamplingScheme::Multinomial => resample_multinomial(weights, rng),
        ResamplingScheme::Stratified => resample_stratified(weights, rng),
        ResamplingScheme::Systematic => resample_systematic(weights, rng),
    }
}

/// Offspring count per ancestor.
pub fn counts(indices: &[usize], n: usize) -> Vec<usize> {
    let mut c = vec![0; n];
    for &i in indices {
        c[i] += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Component, StreamSeed};
    use proptest::prelude::*;

    const SCHEMES: [ResamplingScheme; 3] = [
        ResamplingScheme::Multinomial,
        ResamplingScheme::Stratified,
        ResamplingScheme::Systematic,
    ];

    #[test]
    fn degenerate_and_trivial_inputs() {
        let mut rng = StreamSeed::new(1).stream(Component::Test, 0, 0, 0);
        for s in SCHEMES {
            assert_eq!(resample(s, &[1.0_f64, 0.0, 0.0], &mut rng), vec![0, 0, 0]);
            assert_eq!(resample(s, &[1.0_f64], &mut rng), vec![0]);
        }
    }

    #[test]
    fn uniform_weights_return_each_index_once() {
        let mut rng = StreamSeed::new(2).stream(Component::Test, 0, 0, 0);
        let w = vec![0.1_f64; 10];
        for _ in 0..50 {
            assert_eq!(resample_stratified(&w, &mut rng), (0..10).collect::<Vec<_>>());
            assert_eq!(resample_systematic(&w, &mut rng), (0..10).collect::<Vec<_>>());
            assert_eq!(resample_systematic(&[0.5_f64, 0.5], &mut rng), vec![0, 1]);
            assert_eq!(resample_stratified(&[0.5_f64, 0.5], &mut rng), vec![0, 1]);
        }
    }

    #[test]
    fn systematic_integer_parts_are_exact() {
        let mut rng = StreamSeed::new(3).stream(Component::Test, 0, 0, 0);
        let mut w = vec![0.0_f64; 10];
        w[0] = 0.7;
        w[1] = 0.3;
        for _ in 0..200 {
            let c = counts(&resample_systematic(&w, &mut rng), 10);
            assert_eq!(&c[..2], &[7, 3]);
        }
    }

    #[test]
    fn multinomial_counts_concentrate() {
        let n = 100_000;
        let w = vec![1.0 / n as f64; n];
        let mut rng = StreamSeed::new(4).stream(Component::Test, 0, 0, 0);
        let c = counts(&resample_multinomial(&w, &mut rng), n);
        assert_eq!(c.iter().sum::<usize>(), n);
        // Poisson(1) offspring: P(count >= 12) * N is about 1e-4.
        assert!(c.iter().all(|&k| k < 12));
        // Coarser bins make the binomial check informative.
        let w = [0.2_f64, 0.3, 0.5];
        let mut total = [0usize; 3];
        for t in 0..1000 {
            let mut r = StreamSeed::new(4).stream(Component::Test, 1, t, 0);
            let idx = resample_multinomial(&w, &mut r);
            for i in idx {
                total[i] += 1;
            }
        }
        let draws = 3000.0;
        for (k, &p) in total.iter().zip(&w) {
            let sd = (draws * p * (1.0 - p)).sqrt();
            assert!((*k as f64 - draws * p).abs() <= 4.0 * sd);
        }
    }

    #[test]
    fn unbiased_over_trials() {
        let w = [0.05_f64, 0.15, 0.33, 0.07, 0.4];
        let n = w.len();
        let trials = 20_000;
        for s in SCHEMES {
            let mut sum = vec![0.0; n];
            let mut sum2 = vec![0.0; n];
            for t in 0..trials {
                let mut rng = StreamSeed::new(9).stream(Component::Test, s as u64, t, 0);
                let c = counts(&resample(s, &w, &mut rng), n);
                for i in 0..n {
                    let f = c[i] as f64 / n as f64;
                    sum[i] += f;
                    sum2[i] += f * f;
                }
            }
            for i in 0..n {
                let mean = sum[i] / trials as f64;
                let var = (sum2[i] / trials as f64 - mean * mean).max(1e-30);
                let se = (var / trials as f64).sqrt();
                assert!(
                    (mean - w[i]).abs() <= 3.0 * se + 1e-12,
                    "{s:?} index {i}: {mean} vs {}",
                    w[i]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn count_bounds(raw in prop::collection::vec(0.01_f64..1.0, 1..30), seed in 0u64..10_000) {
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let n = w.len();
            let mut rng = StreamSeed::new(seed).stream(Component::Test, 0, 0, 0);
            let strat = counts(&resample_stratified(&w, &mut rng), n);
            let sys = counts(&resample_systematic(&w, &mut rng), n);
            for i in 0..n {
                let nw = n as f64 * w[i];
                let (fl, ce) = ((nw - 1e-9).floor().max(0.0) as usize, (nw + 1e-9).ceil() as usize);
                prop_assert!(sys[i] >= fl && sys[i] <= ce, "systematic {i}: {} not in [{fl},{ce}]", sys[i]);
                prop_assert!(strat[i] + 1 >= fl && strat[i] <= ce + 1);
            }
            prop_assert_eq!(strat.iter().sum::<usize>(), n);
        }
    }
}
