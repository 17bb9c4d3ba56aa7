//! Scharfetter-Gummel numerical fluxes and the Bernoulli function.

/// Below this modulus `bernoulli` uses its Taylor polynomial.
const SERIES_CUTOFF: f64 = 1e-4;

/// Below this modulus `bernoulli_tilde` uses its Taylor polynomial.
const TILDE_CUTOFF: f64 = 0.25;

/// Below this modulus `bernoulli_derivative` uses its Taylor polynomial.
const DERIVATIVE_CUTOFF: f64 = 0.1;

/// `B(x) = x / (e^x - 1)`, `B(0) = 1`.
///
/// Finite and positive for every finite `x`: it tends to `0` as `x -> +inf` and behaves
/// like `-x` as `x -> -inf`.
#[inline]
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let x2 = x * x;
        1.0 - 0.5 * x + x2 / 12.0 - x2 * x2 / 720.0
    } else {
        x / x.exp_m1()
    }
}

/// `B(x) - 1`, accurate near the origin where the subtraction cancels.
#[inline]
pub fn bernoulli_tilde(x: f64) -> f64 {
    if x.abs() < TILDE_CUTOFF {
        let x2 = x * x;
        // even Bernoulli numbers B_2k / (2k)!
        let even = x2
            * (1.0 / 12.0
                + x2 * (-1.0 / 720.0 + x2 * (1.0 / 30240.0 + x2 * (-1.0 / 1209600.0 + x2 * (1.0 / 47900160.0)))));
        -0.5 * x + even
    } else {
        bernoulli(x) - 1.0
    }
}

/// `B'(x)`.
#[inline]
pub fn bernoulli_derivative(x: f64) -> f64 {
    if x.abs() < DERIVATIVE_CUTOFF {
        let x2 = x * x;
        -0.5 + x * (1.0 / 6.0 + x2 * (-1.0 / 180.0 + x2 * (1.0 / 5040.0 - x2 / 151200.0)))
    } else {
        let b = bernoulli(x);
        b * (1.0 - b) / x - b
    }
}

/// `(B(x) + B(-x)) / 2 = (x / 2) coth(x / 2)`, the diffusion coefficient of the
/// quasi-neutral scheme.
#[inline]
pub fn effective_diffusion(x: f64) -> f64 {
    0.5 * (bernoulli(x) + bernoulli(-x))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Species {
    Electron,
    Hole,
}

impl Species {
    /// Sign of the charge in the drift term: electrons drift up the potential.
    pub fn drift_sign(self) -> f64 {
        match self {
            Species::Electron => 1.0,
            Species::Hole => -1.0,
        }
    }
}

/// Electron flux out of `K` through `sigma`:
/// `tau (B(-D psi) n_K - B(D psi) n_{K,sigma})`.
#[inline]
pub fn electron_flux(tau: f64, n_k: f64, n_ks: f64, dpsi: f64) -> f64 {
    tau * (bernoulli(-dpsi) * n_k - bernoulli(dpsi) * n_ks)
}

/// Hole flux out of `K` through `sigma`:
/// `tau (B(D psi) p_K - B(-D psi) p_{K,sigma})`.
#[inline]
pub fn hole_flux(tau: f64, p_k: f64, p_ks: f64, dpsi: f64) -> f64 {
    tau * (bernoulli(dpsi) * p_k - bernoulli(-dpsi) * p_ks)
}

#[inline]
pub fn sg_flux(species: Species, tau: f64, u_k: f64, u_ks: f64, dpsi: f64) -> f64 {
    match species {
        Species::Electron => electron_flux(tau, u_k, u_ks, dpsi),
        Species::Hole => hole_flux(tau, u_k, u_ks, dpsi),
    }
}

/// Result of checking one flux against its entropy-compatible bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxCheck {
    pub flux: f64,
    /// `D(log u) - s D psi` with `s = +1` for electrons and `-1` for holes.
    pub quasi_fermi_jump: f64,
    /// Two-sided bound `-max g <= F/tau <= -min g` (or reversed for `g < 0`).
    pub bounds_hold: bool,
    /// `F g <= -tau min(u) g^2`.
    pub dissipation_holds: bool,
    /// `|F| <= tau max(u) |g|`.
    pub magnitude_holds: bool,
    /// Largest violation among the three checks, scaled by the tolerance base; `0` when all hold.
    pub worst_violation: f64,
}

impl FluxCheck {
    pub fn all_hold(&self) -> bool {
        self.bounds_hold && self.dissipation_holds && self.magnitude_holds
    }
}

/// Mixed tolerance used when comparing two sides of a flux inequality.
pub const FLUX_CHECK_TOL: f64 = 1e-12;

fn excess(lhs: f64, rhs: f64) -> f64 {
    // positive when lhs > rhs beyond the mixed tolerance
    let slack = FLUX_CHECK_TOL * 1f64.max(lhs.abs()).max(rhs.abs());
    (lhs - rhs - slack).max(0.0)
}

/// Checks the flux for positive densities `u_k`, `u_ks` against the bounds it satisfies
/// in terms of the quasi-Fermi jump.
pub fn check_flux(species: Species, tau: f64, u_k: f64, u_ks: f64, dpsi: f64) -> FluxCheck {
    let flux = sg_flux(species, tau, u_k, u_ks, dpsi);
    let g = (u_ks.ln() - u_k.ln()) - species.drift_sign() * dpsi;
    let (lo, hi) = (u_k.min(u_ks), u_k.max(u_ks));
    let f = flux / tau;
    let (lower, upper) = if g >= 0.0 {
        (-hi * g, -lo * g)
    } else {
        (-lo * g, -hi * g)
    };
    let v_bounds = excess(lower, f).max(excess(f, upper));
    let v_diss = excess(flux * g, -tau * lo * g * g);
    let v_mag = excess(flux.abs(), tau * hi * g.abs());
    FluxCheck {
        flux,
        quasi_fermi_jump: g,
        bounds_hold: v_bounds == 0.0,
        dissipation_holds: v_diss == 0.0,
        magnitude_holds: v_mag == 0.0,
        worst_violation: v_bounds.max(v_diss).max(v_mag),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
    }

    // Reference values computed in extended precision.
    const B_ONE: f64 = 0.581_976_706_869_326_4;
    const B_MINUS_ONE: f64 = 1.581_976_706_869_326_4;
    const B_MINUS_TWO: f64 = 2.313_035_285_499_331;
    const COTH_ONE: f64 = 1.313_035_285_499_331_3;

    #[test]
    fn reference_values() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!(close(bernoulli(1.0), B_ONE, 1e-15));
        assert!(close(bernoulli(-1.0), B_MINUS_ONE, 1e-15));
        assert!(close(bernoulli(-2.0), B_MINUS_TWO, 1e-15));
        assert!(close(bernoulli_tilde(2.0), -0.686_964_714_500_668_7, 1e-14));
        assert!(close(effective_diffusion(2.0), COTH_ONE, 1e-15));
    }

    #[test]
    fn extreme_arguments() {
        assert_eq!(bernoulli(800.0), 0.0);
        assert!(bernoulli(700.0) > 0.0 && bernoulli(700.0) < 1e-290);
        assert!(close(bernoulli(-745.0), 745.0, 1e-15));
        assert!(close(bernoulli(-800.0), 800.0, 1e-15));
        assert!(bernoulli(f64::MIN_POSITIVE).is_finite());
    }

    #[test]
    fn series_branches_are_continuous() {
        for &c in &[SERIES_CUTOFF, TILDE_CUTOFF, DERIVATIVE_CUTOFF] {
            for s in [-1.0, 1.0] {
                let below = s * c * (1.0 - 1e-12);
                let above = s * c * (1.0 + 1e-12);
                assert!((bernoulli(below) - bernoulli(above)).abs() < 1e-12);
                assert!((bernoulli_tilde(below) - bernoulli_tilde(above)).abs() < 1e-12);
                assert!((bernoulli_derivative(below) - bernoulli_derivative(above)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tilde_is_accurate_near_zero() {
        // B(x) - 1 = -x/2 + x^2/12 + O(x^4)
        let x = 1e-9;
        assert!(close(bernoulli_tilde(x), -0.5 * x + x * x / 12.0, 1e-15));
    }

    #[test]
    fn derivative_matches_central_difference() {
        for &x in &[-30.0, -3.0, -0.3, -0.05, 0.0, 0.07, 0.5, 4.0, 25.0] {
            let h = 1e-5;
            let fd = (bernoulli(x + h) - bernoulli(x - h)) / (2.0 * h);
            assert!((bernoulli_derivative(x) - fd).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn flux_example() {
        let f = electron_flux(0.7, 1.0, 2.0, 0.3);
        assert!(close(f, -0.390_242_141_837_117_36, 1e-14));
        assert_eq!(electron_flux(1.0, 0.4, 0.4, 0.0), 0.0);
    }

    #[test]
    fn flux_vanishes_at_thermal_equilibrium() {
        // n = exp(psi) makes the electron flux zero; p = exp(-psi) the hole flux.
        let dpsi: f64 = 1.7;
        let (nk, nl) = (0.2, 0.2 * dpsi.exp());
        assert!(electron_flux(1.0, nk, nl, dpsi).abs() < 1e-15);
        let (pk, pl) = (0.9, 0.9 * (-dpsi).exp());
        assert!(hole_flux(1.0, pk, pl, dpsi).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bernoulli_identity(x in -50.0f64..50.0) {
            prop_assert!((bernoulli(x) - bernoulli(-x) + x).abs() <= 1e-13 * x.abs().max(1.0));
        }

        #[test]
        fn bernoulli_positive_decreasing(x in -700.0f64..700.0, d in 1e-3f64..10.0) {
            prop_assert!(bernoulli(x) > 0.0 || x > 700.0);
            prop_assert!(bernoulli(x + d) <= bernoulli(x));
        }

        #[test]
        fn flux_antisymmetry(tau in 0.1f64..10.0, a in 0.01f64..1.0, b in 0.01f64..1.0, dpsi in -20.0f64..20.0) {
            let fk = electron_flux(tau, a, b, dpsi);
            let fl = electron_flux(tau, b, a, -dpsi);
            prop_assert!((fk + fl).abs() <= 1e-12 * fk.abs().max(1.0));
            let gk = hole_flux(tau, a, b, dpsi);
            let gl = hole_flux(tau, b, a, -dpsi);
            prop_assert!((gk + gl).abs() <= 1e-12 * gk.abs().max(1.0));
        }

        #[test]
        fn flux_inequalities(a in 0.1f64..0.9, b in 0.1f64..0.9, dpsi in -20.0f64..20.0) {
            for s in [Species::Electron, Species::Hole] {
                let c = check_flux(s, 1.0, a, b, dpsi);
                prop_assert!(c.all_hold(), "{:?} {} {} {} -> {:?}", s, a, b, dpsi, c);
            }
        }

        #[test]
        fn hole_flux_is_electron_flux_with_flipped_potential(a in 0.1f64..0.9, b in 0.1f64..0.9, dpsi in -20.0f64..20.0) {
            prop_assert_eq!(hole_flux(1.0, a, b, dpsi), electron_flux(1.0, a, b, -dpsi));
        }
    }
}
