#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regimeswitch::{simulate, HiddenPath, InitialLaw, ModelSpec, ObservationSeries, RegimeKind, TransitionMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_transition<R: Rng>(m: usize, rng: &mut R) -> TransitionMatrix {
    let mut data = Vec::with_capacity(m * m);
    for _ in 0..m {
        let row: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / s));
    }
    TransitionMatrix::from_row_major(m, data).unwrap()
}

pub fn random_spec<R: Rng>(m: usize, kind: RegimeKind, sigma2: f64, rng: &mut R) -> ModelSpec {
    let a = random_transition(m, rng);
    match kind {
        RegimeKind::Hmm => {
            let means: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
            ModelSpec::hmm(&means, sigma2, a).unwrap()
        }
        RegimeKind::LinearAr => {
            let pairs: Vec<(f64, f64)> = (0..m)
                .map(|_| (rng.random_range(-0.9..0.9), rng.random_range(-3.0..3.0)))
                .collect();
            ModelSpec::linear_ar(&pairs, sigma2, a).unwrap()
        }
    }
}

pub fn random_kind<R: Rng>(rng: &mut R) -> RegimeKind {
    if rng.random::<bool>() {
        RegimeKind::Hmm
    } else {
        RegimeKind::LinearAr
    }
}

pub fn draw<R: Rng>(spec: &ModelSpec, n: usize, rng: &mut R) -> (HiddenPath, ObservationSeries) {
    let y0 = rng.random_range(-1.0..1.0);
    simulate(spec, n, y0, InitialLaw::Stationary, rng).unwrap()
}

pub fn hmm_scenario() -> ModelSpec {
    let a = TransitionMatrix::from_rows(&[
        vec![0.9, 0.05, 0.05],
        vec![0.05, 0.9, 0.05],
        vec![0.05, 0.05, 0.9],
    ])
    .unwrap();
    ModelSpec::hmm(&[-2.0, 1.0, 4.0], 1.5, a).unwrap()
}

pub fn ar_scenario() -> ModelSpec {
    let a = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
    ModelSpec::linear_ar(&[(1.0, -1.0), (-0.5, 0.5)], 1.5, a).unwrap()
}
