use std::io::Write;

use feedersched::gmm::{
    em_fit, history_errors_by_hour, mdl_score, mdl_select, mixture_cdf, mixture_quantile,
    read_history, Component, ErrorSample, GmmModel,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn draw(model: &GmmModel, n: usize, seed: u64) -> ErrorSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ErrorSample::new((0..n).map(|_| model.sample(&mut rng)).collect()).unwrap()
}

fn model() -> impl Strategy<Value = GmmModel> {
    prop::collection::vec((0.05..1.0f64, -3.0..3.0f64, 0.05..2.0f64), 1..5).prop_map(|parts| {
        let total: f64 = parts.iter().map(|p| p.0).sum();
        GmmModel::new(
            parts
                .iter()
                .map(|&(w, mean, sd)| Component {
                    weight: w / total,
                    mean,
                    variance: sd * sd,
                })
                .collect(),
        )
        .unwrap()
    })
}

#[test]
fn three_separated_components_are_recovered() {
    let truth = GmmModel::new(vec![
        Component {
            weight: 0.2,
            mean: -6.0,
            variance: 0.25,
        },
        Component {
            weight: 0.5,
            mean: 0.0,
            variance: 1.0,
        },
        Component {
            weight: 0.3,
            mean: 7.0,
            variance: 0.64,
        },
    ])
    .unwrap();
    let fit = em_fit(&draw(&truth, 20_000, 11), 3, 5).unwrap();
    let mut got = fit.model.components().to_vec();
    got.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    for (g, t) in got.iter().zip(truth.components()) {
        assert!(
            (g.weight - t.weight).abs() / t.weight < 0.05,
            "{g:?} vs {t:?}"
        );
        assert!(
            (g.mean - t.mean).abs() < 0.05 * t.mean.abs().max(1.0),
            "{g:?} vs {t:?}"
        );
        assert!(
            (g.std_dev() - t.std_dev()).abs() / t.std_dev() < 0.05,
            "{g:?} vs {t:?}"
        );
    }
    assert!(fit.converged);
    assert!(fit.history.windows(2).all(|w| w[1] >= w[0] - 1e-9));
}

#[test]
fn positive_part_matches_sampling() {
    let m = GmmModel::new(vec![
        Component {
            weight: 0.6,
            mean: -0.5,
            variance: 0.3,
        },
        Component {
            weight: 0.4,
            mean: 1.0,
            variance: 0.8,
        },
    ])
    .unwrap();
    let sample = draw(&m, 400_000, 3);
    let mc = sample.values().iter().map(|x| x.max(0.0)).sum::<f64>() / sample.len() as f64;
    assert!(
        (m.positive_part_mean() - mc).abs() < 5e-3,
        "{} vs {mc}",
        m.positive_part_mean()
    );
}

#[test]
fn history_file_grouped_by_hour() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "timestamp,forecast,actual").unwrap();
    for day in 1..=3 {
        for hour in [0, 13] {
            writeln!(
                f,
                "2024-01-0{day} {hour:02}:00,100,{}",
                100.0 + day as f64 + hour as f64
            )
            .unwrap();
        }
    }
    let rows = read_history(f.path()).unwrap();
    let groups = history_errors_by_hour(&rows).unwrap();
    assert_eq!(groups.len(), 24);
    assert_eq!(groups[0].values(), &[0.01, 0.02, 0.03]);
    assert_eq!(groups[13].values(), &[0.14, 0.15, 0.16]);
    assert!(groups[5].is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cdf_is_monotone(m in model(), a in -10.0..10.0f64, b in -10.0..10.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (c_lo, c_hi) = (mixture_cdf(&m, lo), mixture_cdf(&m, hi));
        prop_assert!((0.0..=1.0).contains(&c_lo) && (0.0..=1.0).contains(&c_hi));
        prop_assert!(c_lo <= c_hi);
    }

    #[test]
    fn quantile_inverts_cdf(m in model(), p in 0.001..0.999f64) {
        let q = mixture_quantile(&m, p).unwrap();
        prop_assert!((mixture_cdf(&m, q) - p).abs() < 1e-9);
    }

    #[test]
    fn quantile_is_monotone(m in model(), a in 0.01..0.99f64, b in 0.01..0.99f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(mixture_quantile(&m, lo).unwrap() <= mixture_quantile(&m, hi).unwrap());
    }

    #[test]
    fn mdl_scores_recompute(m in model(), seed in 0u64..1000) {
        let data = draw(&m, 300, seed);
        let sel = mdl_select(&data, 3, seed).unwrap();
        for c in &sel.candidates {
            let ll = c.fit.model.log_likelihood(data.values());
            prop_assert!((ll - c.fit.log_likelihood).abs() <= 1e-6 * ll.abs().max(1.0));
            let by_hand = -ll + 0.5 * (3 * c.n_components - 1) as f64 * (data.len() as f64).ln();
            prop_assert!((by_hand - c.score).abs() <= 1e-6 * by_hand.abs().max(1.0));
            prop_assert!((mdl_score(c.fit.log_likelihood, c.n_components, data.len()) - c.score).abs() == 0.0);
            prop_assert!(sel.candidates[sel.best].score <= c.score);
        }
    }
}
