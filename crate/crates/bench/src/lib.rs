//! Shared inputs for the benchmarks: a Catch-sized network and random state
//! sets, built deterministically so runs are comparable.

use ranld_core::numerics::Rng;
use ranld_core::ranld::StateSet;
use ranld_core::{Obs, QNetwork};

pub const SIDE: usize = 12;

pub fn network(seed: u64) -> QNetwork {
    QNetwork::new(SIDE, SIDE, &[64, 64], 3, &mut Rng::new(seed))
}

pub fn observation(rng: &mut Rng) -> Obs {
    Obs::new(
        SIDE,
        SIDE,
        (0..SIDE * SIDE).map(|_| rng.uniform()).collect(),
    )
    .expect("square grid")
}

pub fn state_set(n: usize, seed: u64) -> StateSet {
    let mut rng = Rng::new(seed);
    StateSet::from_observations((0..n).map(|_| observation(&mut rng)).collect())
        .expect("non-empty set")
}
