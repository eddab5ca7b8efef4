use vidauth_core::datagen::{build_corpus, DatagenConfig};
use vidauth_core::policy::{featurize, FeatureVector};

fn dist(a: &FeatureVector, b: &FeatureVector) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn fakes_get_closer_to_their_real_as_steps_grow() {
    let corpus = build_corpus(&DatagenConfig {
        n_pairs: 1000,
        quality_mode: true,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let grid = corpus.config.space.step_grid.clone();
    let mut sums = vec![0.0; grid.len()];
    // Samples are laid out as real, then one fake per grid step.
    for chunk in corpus.samples.chunks(1 + grid.len()) {
        let real = featurize(&chunk[0]).unwrap();
        for (k, fake) in chunk[1..].iter().enumerate() {
            assert_eq!(fake.truth.step(), Some(grid[k]));
            sums[k] += dist(&real, &featurize(fake).unwrap());
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / 1000.0).collect();
    for w in means.windows(2) {
        assert!(w[1] < w[0], "{means:?}");
    }
}

/// Standardized difference of the mean adjacent-frame distance between reals
/// and step-10 fakes.
fn effect_size(noise_base: f64) -> f64 {
    let corpus = build_corpus(&DatagenConfig {
        n_pairs: 400,
        quality_mode: true,
        noise_base,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let pick = |step: Option<u32>| -> Vec<f64> {
        corpus
            .samples
            .iter()
            .filter(|s| s.truth.step() == step)
            .map(|s| featurize(s).unwrap().mean_adjacent_distance())
            .collect()
    };
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
    };
    let (m_real, v_real) = stats(&pick(None));
    let (m_fake, v_fake) = stats(&pick(Some(10)));
    (m_fake - m_real) / ((v_real + v_fake) / 2.0).sqrt()
}

#[test]
fn noise_base_controls_separability() {
    let sizes: Vec<f64> = [0.05, 0.2, 1.0].into_iter().map(effect_size).collect();
    for w in sizes.windows(2) {
        assert!(w[1] > w[0], "{sizes:?}");
    }
}
