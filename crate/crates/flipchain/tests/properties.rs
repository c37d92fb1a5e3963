//! Property tests for the structural invariants of the chain model.

use flipchain::chain::{
    build_phi, disorder_from_text, disorder_to_text, observables, sample_disorder,
    AnharmonicPotential, BoundaryCondition, ChainState, DisorderLaw,
};
use flipchain::stats::pairwise_sum;
use ndarray::Array1;
use proptest::prelude::*;

fn state_strategy(n: usize) -> impl Strategy<Value = ChainState> {
    (
        prop::collection::vec(-3.0f64..3.0, n),
        prop::collection::vec(-3.0f64..3.0, n),
    )
        .prop_map(|(q, p)| ChainState::new(Array1::from(q), Array1::from(p)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Local energies regroup exactly into the Hamiltonian, for both
    /// boundary conditions and with or without anharmonicity.
    #[test]
    fn energies_sum_to_hamiltonian(
        state in state_strategy(12),
        seed in 0u64..1000,
        periodic in any::<bool>(),
        anharmonic in any::<bool>(),
    ) {
        let d = sample_disorder(12, 1.0, 2.0, None, seed).unwrap();
        let bc = if periodic { BoundaryCondition::Periodic } else { BoundaryCondition::Fixed };
        let (lp, pot) = if anharmonic {
            (0.4, Some(AnharmonicPotential::default()))
        } else {
            (0.0, None)
        };
        let obs = observables(&state, &d, bc, lp, pot.as_ref()).unwrap();
        let sum = pairwise_sum(&obs.energy);
        prop_assert!(
            (sum - obs.hamiltonian).abs() <= 1e-12 * obs.hamiltonian.abs().max(1.0),
            "Σe = {} vs H = {}", sum, obs.hamiltonian
        );
    }

    /// Momentum reversal flips the current and preserves the energy.
    #[test]
    fn momentum_reversal_parity(
        state in state_strategy(10),
        seed in 0u64..1000,
        periodic in any::<bool>(),
    ) {
        let d = sample_disorder(10, 1.0, 2.0, None, seed).unwrap();
        let bc = if periodic { BoundaryCondition::Periodic } else { BoundaryCondition::Fixed };
        let flipped = ChainState::new(state.q.clone(), -&state.p);
        let a = observables(&state, &d, bc, 0.0, None).unwrap();
        let b = observables(&flipped, &d, bc, 0.0, None).unwrap();
        prop_assert!((a.total_current + b.total_current).abs() < 1e-12);
        prop_assert!((a.hamiltonian - b.hamiltonian).abs() < 1e-12);
    }

    /// Flipping a single momentum leaves every local energy unchanged.
    #[test]
    fn single_flip_conserves_energy(
        state in state_strategy(10),
        site in 0usize..10,
        seed in 0u64..1000,
    ) {
        let d = sample_disorder(10, 1.0, 2.0, None, seed).unwrap();
        let mut flipped = state.clone();
        flipped.p[site] = -flipped.p[site];
        for bc in [BoundaryCondition::Fixed, BoundaryCondition::Periodic] {
            let a = observables(&state, &d, bc, 0.0, None).unwrap();
            let b = observables(&flipped, &d, bc, 0.0, None).unwrap();
            prop_assert!((a.hamiltonian - b.hamiltonian).abs() < 1e-12);
        }
    }

    /// The line-oriented text format round-trips bit-exactly.
    #[test]
    fn disorder_text_round_trip(
        n in 1usize..40,
        seed in any::<u64>(),
        with_masses in any::<bool>(),
        periodic in any::<bool>(),
    ) {
        let mass_law = with_masses.then(|| DisorderLaw::uniform(1.0, 2.0));
        let (lo, hi) = if with_masses { (0.0, 0.0) } else { (1.0, 2.0) };
        let d = sample_disorder(n, lo, hi, mass_law, seed).unwrap();
        let bc = if periodic { BoundaryCondition::Periodic } else { BoundaryCondition::Fixed };
        let (back, bc2) = disorder_from_text(&disorder_to_text(&d, bc)).unwrap();
        prop_assert_eq!(back, d);
        prop_assert_eq!(bc2, bc);
    }

    /// Cholesky succeeds whenever the pinnings are strictly positive.
    #[test]
    fn phi_positive_definite_under_positive_pinning(
        n in 1usize..32,
        seed in any::<u64>(),
        periodic in any::<bool>(),
    ) {
        let d = sample_disorder(n, 0.5, 3.0, None, seed).unwrap();
        let bc = if periodic { BoundaryCondition::Periodic } else { BoundaryCondition::Fixed };
        prop_assert!(build_phi(&d, bc).cholesky_lower().is_ok());
    }
}
