//! Physical parameters and their dimensionless reduction.
//!
//! Every other module works in dimensionless variables. Given the two
//! fluids' densities rho±, viscosities eta±, conductivities sigma±, the
//! surface tension lambda, gravity g, interface thickness epsilon, and the
//! imposed magnetic field B, together with reference scales (length L_r,
//! velocity u_r, density rho_r, viscosity eta_r, conductivity sigma_r,
//! field strength B_r), the governing groups are
//!
//! ```text
//! Cn = epsilon / L_r                      interface thickness
//! Pe:  1/Pe = 3 Cn                        interface mobility (scaling law)
//! Re = L_r rho_r u_r / eta_r              inertia vs. viscosity
//! We = L_r rho_r u_r^2 / lambda_hat       inertia vs. capillarity
//! N  = L_r sigma_r B_r^2 / (rho_r u_r)    Lorentz force vs. inertia (Stuart)
//! Fr = u_r^2 / (g L_r)                    inertia vs. gravity (Froude)
//! ```
//!
//! where `lambda_hat = 3 lambda / (2 sqrt(2))` is the surface-tension
//! coefficient rescaled to the diffuse-interface energy normalization: a
//! planar equilibrium profile tanh(d / (sqrt(2) epsilon)) then carries
//! exactly the free energy `lambda` per unit interface area.
//!
//! Material properties are affine in the order parameter after clamping it
//! to [-1, 1], so the interpolated density/viscosity/conductivity always
//! stay within the physical range of the two pure phases.

use crate::error::{Error, Result};

/// Dimensional description of the two fluids and the imposed field.
///
/// The `plus` phase is the fluid where the order parameter sits at +1 and
/// the `minus` phase the one at -1. Reference scales default to the
/// plus-phase values (and `|b_vec|` for the field strength) but can be
/// overridden individually.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    pub rho_plus: f64,
    pub rho_minus: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    /// Surface tension coefficient.
    pub lambda: f64,
    /// Gravitational acceleration; zero disables gravity entirely.
    pub g: f64,
    /// Interface thickness.
    pub epsilon: f64,
    /// Reference length.
    pub l_ref: f64,
    /// Reference velocity; `None` means sqrt(g * l_ref).
    pub u_ref: Option<f64>,
    /// Imposed magnetic field, constant in space and time.
    pub b_vec: [f64; 3],
    /// Reference density; `None` means `rho_plus`.
    pub rho_ref: Option<f64>,
    /// Reference viscosity; `None` means `eta_plus`.
    pub eta_ref: Option<f64>,
    /// Reference conductivity; `None` means `sigma_plus`.
    pub sigma_ref: Option<f64>,
    /// Reference field strength; `None` means `|b_vec|`.
    pub b_ref: Option<f64>,
}

impl PhysicalParams {
    pub fn u_r(&self) -> f64 {
        self.u_ref.unwrap_or_else(|| (self.g * self.l_ref).sqrt())
    }

    pub fn rho_r(&self) -> f64 {
        self.rho_ref.unwrap_or(self.rho_plus)
    }

    pub fn eta_r(&self) -> f64 {
        self.eta_ref.unwrap_or(self.eta_plus)
    }

    pub fn sigma_r(&self) -> f64 {
        self.sigma_ref.unwrap_or(self.sigma_plus)
    }

    pub fn b_magnitude(&self) -> f64 {
        let [x, y, z] = self.b_vec;
        (x * x + y * y + z * z).sqrt()
    }

    /// Field strength used to scale the Lorentz terms (0 when no field).
    pub fn b_r(&self) -> f64 {
        self.b_ref.unwrap_or_else(|| self.b_magnitude())
    }

    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("rho_plus", self.rho_plus),
            ("rho_minus", self.rho_minus),
            ("eta_plus", self.eta_plus),
            ("eta_minus", self.eta_minus),
            ("sigma_plus", self.sigma_plus),
            ("sigma_minus", self.sigma_minus),
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
            ("l_ref", self.l_ref),
        ];
        for (name, v) in positives {
            require_positive(name, v)?;
        }
        if !(self.g >= 0.0) || !self.g.is_finite() {
            return Err(invalid("g", self.g, "must be finite and >= 0"));
        }
        require_positive("u_ref", self.u_r())?;
        require_positive("rho_ref", self.rho_r())?;
        require_positive("eta_ref", self.eta_r())?;
        require_positive("sigma_ref", self.sigma_r())?;
        for (i, b) in self.b_vec.iter().enumerate() {
            if !b.is_finite() {
                return Err(invalid("b_vec", *b, "component must be finite"));
            }
            let _ = i;
        }
        let b_r = self.b_r();
        if !(b_r >= 0.0) || !b_r.is_finite() {
            return Err(invalid("b_ref", b_r, "must be finite and >= 0"));
        }
        Ok(())
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, v, "must be finite and > 0"))
    }
}

fn invalid(name: &str, v: f64, rule: &str) -> Error {
    Error::InvalidParam { name: name.to_string(), message: format!("{rule}, got {v}") }
}

/// One material property of the two phases plus its reference scale, kept
/// in dimensional form so interpolation yields the dimensionless value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyTriple {
    pub plus: f64,
    pub minus: f64,
    pub reference: f64,
}

impl PropertyTriple {
    /// Dimensionless property value at order parameter `phi`.
    pub fn at(&self, phi: f64) -> Result<f64> {
        interpolate_property(phi, self.plus, self.minus, self.reference)
    }
}

/// The dimensionless groups plus the derived scales the integrator needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionlessGroups {
    pub cn: f64,
    pub pe: f64,
    pub re: f64,
    pub we: f64,
    /// Stuart number; 0 when no magnetic field is imposed.
    pub stuart: f64,
    /// Froude number; `f64::INFINITY` when gravity is disabled (g = 0).
    pub fr: f64,
    /// Rescaled surface tension 3 lambda / (2 sqrt 2).
    pub lambda_hat: f64,
    /// (rho_plus - rho_minus) / (2 rho_ref): slope of density in phi.
    pub drho_dphi: f64,
    /// Pressure-stabilization constant min(rho+, rho-) / rho_ref.
    pub zeta: f64,
    /// Imposed field in units of the reference strength (unit vector for
    /// the default B_r = |B|); zero vector when no field.
    pub b_hat: [f64; 3],
    pub rho: PropertyTriple,
    pub eta: PropertyTriple,
    pub sigma: PropertyTriple,
}

impl DimensionlessGroups {
    pub fn inv_pe(&self) -> f64 {
        1.0 / self.pe
    }

    /// 1/Fr, with the g = 0 case mapping to exactly 0 (gravity off).
    pub fn inv_fr(&self) -> f64 {
        if self.fr.is_finite() { 1.0 / self.fr } else { 0.0 }
    }

    pub fn gravity_on(&self) -> bool {
        self.fr.is_finite()
    }

    pub fn lorentz_on(&self) -> bool {
        self.stuart != 0.0 && self.b_hat != [0.0; 3]
    }
}

/// Reduce dimensional parameters to the dimensionless groups.
///
/// Fails if any parameter violates its constraints. `g = 0` produces an
/// infinite Froude number, which the integrator reads as "no gravity";
/// `b_vec = 0` produces a zero Stuart number, which disables the whole
/// electromagnetic sub-problem.
pub fn derive_groups(p: &PhysicalParams) -> Result<DimensionlessGroups> {
    p.validate()?;
    let (rho_r, eta_r, sigma_r, b_r, u_r) =
        (p.rho_r(), p.eta_r(), p.sigma_r(), p.b_r(), p.u_r());

    let cn = p.epsilon / p.l_ref;
    let pe = 1.0 / (3.0 * cn);
    let lambda_hat = 3.0 * p.lambda / (2.0 * std::f64::consts::SQRT_2);
    let re = p.l_ref * rho_r * u_r / eta_r;
    let we = p.l_ref * rho_r * u_r * u_r / lambda_hat;
    let stuart =
        if b_r == 0.0 { 0.0 } else { p.l_ref * sigma_r * b_r * b_r / (rho_r * u_r) };
    let fr = if p.g == 0.0 { f64::INFINITY } else { u_r * u_r / (p.g * p.l_ref) };
    let b_hat = if b_r == 0.0 {
        [0.0; 3]
    } else {
        [p.b_vec[0] / b_r, p.b_vec[1] / b_r, p.b_vec[2] / b_r]
    };

    Ok(DimensionlessGroups {
        cn,
        pe,
        re,
        we,
        stuart,
        fr,
        lambda_hat,
        drho_dphi: (p.rho_plus - p.rho_minus) / (2.0 * rho_r),
        zeta: p.rho_plus.min(p.rho_minus) / rho_r,
        b_hat,
        rho: PropertyTriple { plus: p.rho_plus, minus: p.rho_minus, reference: rho_r },
        eta: PropertyTriple { plus: p.eta_plus, minus: p.eta_minus, reference: eta_r },
        sigma: PropertyTriple {
            plus: p.sigma_plus,
            minus: p.sigma_minus,
            reference: sigma_r,
        },
    })
}

/// Clamp the order parameter to [-1, 1].
///
/// Material properties are only meaningful for phi in the pure-phase
/// range; the transport step can overshoot slightly, so every property
/// evaluation goes through this clamp. NaN is rejected rather than
/// silently propagated.
pub fn cutoff(phi: f64) -> Result<f64> {
    if phi.is_nan() {
        return Err(Error::InvalidValue("cutoff applied to NaN".to_string()));
    }
    Ok(phi.clamp(-1.0, 1.0))
}

/// Affine property interpolation between the two phases.
///
/// Returns `((plus - minus) / (2 ref)) * cutoff(phi) + (plus + minus) / (2 ref)`,
/// i.e. the dimensionless property value: `plus/ref` at phi = +1 and
/// `minus/ref` at phi = -1.
pub fn interpolate_property(phi: f64, plus: f64, minus: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) || !reference.is_finite() {
        return Err(Error::InvalidParam {
            name: "reference".to_string(),
            message: format!("property reference scale must be positive, got {reference}"),
        });
    }
    let c = cutoff(phi)?;
    Ok((plus - minus) / (2.0 * reference) * c + (plus + minus) / (2.0 * reference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Parameters of the rising-bubble benchmark: water-like heavy phase,
    /// light conducting gas, B along x with strength 3.
    fn benchmark_params() -> PhysicalParams {
        PhysicalParams {
            rho_plus: 1000.0,
            rho_minus: 1.0,
            eta_plus: 10.0,
            eta_minus: 0.1,
            sigma_plus: 1000.0,
            sigma_minus: 1.0,
            lambda: 1.96,
            g: 0.98,
            epsilon: 0.005,
            l_ref: 1.0,
            u_ref: None,
            b_vec: [3.0, 0.0, 0.0],
            rho_ref: None,
            eta_ref: None,
            sigma_ref: None,
            b_ref: None,
        }
    }

    #[test]
    fn benchmark_groups_match_hand_evaluation() {
        let g = derive_groups(&benchmark_params()).unwrap();
        assert_relative_eq!(g.cn, 0.005, max_relative = 1e-15);
        assert_relative_eq!(g.inv_pe(), 0.015, max_relative = 1e-14);
        assert_relative_eq!(g.lambda_hat, 2.0788939366884494, max_relative = 1e-14);
        assert_relative_eq!(g.re, 98.99494936611666, max_relative = 1e-14);
        assert_relative_eq!(g.we, 471.4045207910318, max_relative = 1e-14);
        assert_relative_eq!(g.stuart, 9.091372900969896, max_relative = 1e-14);
        assert_relative_eq!(g.fr, 1.0, max_relative = 1e-15);
        assert_relative_eq!(g.drho_dphi, 0.4995, max_relative = 1e-15);
        assert_relative_eq!(g.zeta, 0.001, max_relative = 1e-15);
        assert_eq!(g.b_hat, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn default_velocity_scale_forces_unit_froude() {
        let p = benchmark_params();
        assert_relative_eq!(p.u_r(), 0.9899494936611666, max_relative = 1e-15);
        let g = derive_groups(&p).unwrap();
        assert_relative_eq!(g.fr, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn zero_gravity_disables_the_gravity_term() {
        let p = PhysicalParams { g: 0.0, u_ref: Some(1.0), ..benchmark_params() };
        let g = derive_groups(&p).unwrap();
        assert!(g.fr.is_infinite());
        assert_eq!(g.inv_fr(), 0.0);
        assert!(!g.gravity_on());
    }

    #[test]
    fn zero_field_disables_the_lorentz_term() {
        let p = PhysicalParams { b_vec: [0.0; 3], ..benchmark_params() };
        let g = derive_groups(&p).unwrap();
        assert_eq!(g.stuart, 0.0);
        assert_eq!(g.b_hat, [0.0; 3]);
        assert!(!g.lorentz_on());
    }

    #[test]
    fn doubling_epsilon_doubles_cn_and_one_over_pe() {
        let p1 = benchmark_params();
        let p2 = PhysicalParams { epsilon: 2.0 * p1.epsilon, ..p1.clone() };
        let g1 = derive_groups(&p1).unwrap();
        let g2 = derive_groups(&p2).unwrap();
        assert_relative_eq!(g2.cn, 2.0 * g1.cn, max_relative = 1e-15);
        assert_relative_eq!(g2.inv_pe(), 2.0 * g1.inv_pe(), max_relative = 1e-14);
    }

    #[test]
    fn invalid_params_are_named() {
        let p = PhysicalParams { rho_minus: -1.0, ..benchmark_params() };
        match derive_groups(&p) {
            Err(Error::InvalidParam { name, .. }) => assert_eq!(name, "rho_minus"),
            other => panic!("expected invalid-parameter error, got {other:?}"),
        }
        // g = 0 without an explicit velocity scale leaves u_ref = 0.
        let p = PhysicalParams { g: 0.0, ..benchmark_params() };
        match derive_groups(&p) {
            Err(Error::InvalidParam { name, .. }) => assert_eq!(name, "u_ref"),
            other => panic!("expected invalid-parameter error, got {other:?}"),
        }
    }

    #[test]
    fn cutoff_clamps_and_rejects_nan() {
        assert_eq!(cutoff(1.5).unwrap(), 1.0);
        assert_eq!(cutoff(-0.3).unwrap(), -0.3);
        assert_eq!(cutoff(-2.0).unwrap(), -1.0);
        assert!(cutoff(f64::NAN).is_err());
    }

    #[test]
    fn cutoff_is_idempotent() {
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let once = cutoff(x).unwrap();
            assert_eq!(cutoff(once).unwrap(), once);
        }
    }

    #[test]
    fn property_interpolation_endpoints_and_midpoint() {
        assert_relative_eq!(
            interpolate_property(1.0, 1000.0, 1.0, 1000.0).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            interpolate_property(-1.0, 1000.0, 1.0, 1000.0).unwrap(),
            0.001,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            interpolate_property(0.0, 1000.0, 1.0, 1000.0).unwrap(),
            0.5005,
            max_relative = 1e-15
        );
    }

    #[test]
    fn property_interpolation_is_bounded_for_any_phi() {
        let (plus, minus, reference) = (10.0, 0.1, 10.0);
        let (lo, hi) = (minus / reference, plus / reference);
        for i in -100..=100 {
            let phi = i as f64 * 0.37; // reaches far outside [-1, 1]
            let v = interpolate_property(phi, plus, minus, reference).unwrap();
            assert!(v >= lo - 1e-15 && v <= hi + 1e-15, "value {v} escapes [{lo}, {hi}]");
        }
    }

    #[test]
    fn pure_phases_reproduce_all_three_properties() {
        let g = derive_groups(&benchmark_params()).unwrap();
        assert_relative_eq!(g.rho.at(1.0).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(g.eta.at(1.0).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(g.sigma.at(1.0).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(g.rho.at(-1.0).unwrap(), 0.001, max_relative = 1e-12);
        assert_relative_eq!(g.eta.at(-1.0).unwrap(), 0.01, max_relative = 1e-12);
        assert_relative_eq!(g.sigma.at(-1.0).unwrap(), 0.001, max_relative = 1e-12);
    }

    #[test]
    fn nonpositive_reference_is_rejected() {
        assert!(interpolate_property(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(interpolate_property(0.0, 1.0, 1.0, -2.0).is_err());
    }
}
