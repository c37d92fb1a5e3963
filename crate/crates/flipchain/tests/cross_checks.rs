//! Cross-module invariants that tie the estimators together.

use flipchain::chain::BoundaryCondition;
use flipchain::conductivity::{
    estimate_kappa_resolvent_ensemble, variational_lower_bound, ChainVariant,
    ResolventKappaConfig,
};

fn pinned() -> ChainVariant {
    ChainVariant::PinnedDisordered {
        nu_min: 1.0,
        nu_max: 2.0,
    }
}

/// The conductivity loses its boundary-condition dependence as N grows;
/// the fixed-boundary side is evaluated on its finite-size plateau.
#[test]
fn resolvent_kappa_bc_gap_shrinks_with_size() {
    let lambda = 0.5;
    let kappa = |n: usize, bc: BoundaryCondition| {
        let cfg = ResolventKappaConfig {
            variant: pinned(),
            n,
            bc,
            temperature: 1.0,
            lambda,
            z_factors: vec![0.1, 0.05],
            n_disorder: 12,
        };
        estimate_kappa_resolvent_ensemble(&cfg, 21).unwrap().value
    };
    let mut gaps = Vec::new();
    for n in [16usize, 32, 64] {
        let fixed = kappa(n, BoundaryCondition::Fixed);
        let periodic = kappa(n, BoundaryCondition::Periodic);
        gaps.push(((fixed - periodic) / periodic).abs());
    }
    assert!(
        gaps[2] < gaps[0],
        "relative BC gap should shrink: {gaps:?}"
    );
    assert!(gaps[2] < 0.2, "large-N BC gap too big: {gaps:?}");
}

/// The variational bound is Θ(λ): bound/λ stays inside a fixed positive
/// window across the λ grid. The small-λ asymptotics needs the
/// noise-controlled term (∝ pinning variance) to dominate the λ² piece at
/// these λ values, hence the strongly disordered ensemble.
#[test]
fn variational_bound_scales_linearly_in_lambda() {
    let chain = flipchain::conductivity::realize_chain(
        ChainVariant::PinnedDisordered {
            nu_min: 2.0,
            nu_max: 32.0,
        },
        32,
        BoundaryCondition::Periodic,
        0,
        5,
    )
    .unwrap();
    let mut ratios = Vec::new();
    for &lambda in &[0.05, 0.1, 0.2] {
        let lb = variational_lower_bound(&chain.phi, lambda, 0.0, 1.0).unwrap();
        assert!(lb.bound > 0.0);
        ratios.push(lb.bound / lambda);
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
    assert!(
        hi / lo < 1.5,
        "bound/λ should be near-constant, got {ratios:?}"
    );
}
