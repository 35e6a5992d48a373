//! Property and heat-transfer correlations for the Therminol VP-1 loop and
//! the north-south tracking geometry.
//!
//! Every function here is pure. Temperatures are in °C.

use crate::error::{check_range, Error, Result};

/// Validity range of the fluid correlations, °C.
pub const FLUID_T_MIN: f64 = 0.0;
pub const FLUID_T_MAX: f64 = 450.0;

/// Coefficients of the inner-tube convective correlation, highest power
/// first: `a4 T^4 + a3 T^3 + a2 T^2 + a1 T + a0`.
///
/// The cubic coefficient is printed as `-1.356114e3` in the source
/// correlation. That value drives the coefficient hugely negative at every
/// operating temperature, so the exponent is taken as `-3`.
pub const CONVECTIVE_POLY: [f64; 5] = [
    -7.182817e-7,
    -1.356114e-3,
    2.679214e-1,
    479.1142,
    5.011334e3,
];

/// Density of the heat transfer fluid, kg/m³.
pub fn fluid_density(t_f: f64) -> Result<f64> {
    let t = check_range("fluid temperature", t_f, FLUID_T_MIN, FLUID_T_MAX)?;
    Ok(density_unchecked(t))
}

/// Specific heat capacity of the heat transfer fluid, J/(kg·°C).
pub fn fluid_heat_capacity(t_f: f64) -> Result<f64> {
    let t = check_range("fluid temperature", t_f, FLUID_T_MIN, FLUID_T_MAX)?;
    Ok(heat_capacity_unchecked(t))
}

#[inline]
pub(crate) fn density_unchecked(t: f64) -> f64 {
    1061.5 - 0.5787 * t - 9.0242e-4 * t * t
}

#[inline]
pub(crate) fn heat_capacity_unchecked(t: f64) -> f64 {
    1552.049 + 2.38501 * t + 0.0010558 * t * t
}

/// Volumetric heat capacity `ρ·C` with the temperature clamped into the
/// correlation range. Used inside the time-stepping models, whose own
/// sanity band is wider than the correlation domain.
#[inline]
pub(crate) fn volumetric_heat_capacity_clamped(t: f64) -> f64 {
    let t = t.clamp(FLUID_T_MIN, FLUID_T_MAX);
    density_unchecked(t) * heat_capacity_unchecked(t)
}

/// Fluid density and heat capacity at one temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidSample {
    pub temperature: f64,
    pub density: f64,
    pub heat_capacity: f64,
}

impl FluidSample {
    pub fn at(temperature: f64) -> Result<Self> {
        Ok(Self {
            temperature,
            density: fluid_density(temperature)?,
            heat_capacity: fluid_heat_capacity(temperature)?,
        })
    }

    /// Heat capacity per unit volume, J/(m³·°C).
    pub fn volumetric_heat_capacity(&self) -> f64 {
        self.density * self.heat_capacity
    }
}

/// Thermal loss coefficient of the receiver, W/(m²·°C), as a function of the
/// fluid-to-ambient temperature difference.
///
/// The reciprocal term makes the correlation negative below roughly 59 °C of
/// excess temperature; it is only meaningful for large differences.
pub fn thermal_loss_coeff(t_f: f64, t_a: f64) -> Result<f64> {
    let dt = t_f - t_a;
    if !(dt > 0.0) {
        return Err(Error::Singular(format!(
            "thermal loss coefficient needs T_f > T_a (T_f = {t_f}, T_a = {t_a})"
        )));
    }
    Ok(loss_coeff_poly(dt))
}

#[inline]
fn loss_coeff_poly(dt: f64) -> f64 {
    ((1.137e-8 * dt - 3.235e-6) * dt + 1.444e-4) * dt + 8.179e-2 - 4.796 / dt
}

/// Heat loss per unit aperture, W/m², for a fluid-to-ambient difference.
///
/// Equal to `H_l(ΔT)·ΔT` wherever that product is positive and zero
/// elsewhere, so losses never turn into gains near ambient temperature. The
/// function is continuous in `ΔT`.
#[inline]
pub fn loss_flux(delta_t: f64) -> f64 {
    if delta_t <= 0.0 {
        return 0.0;
    }
    let flux = loss_coeff_poly(delta_t) * delta_t;
    flux.max(0.0)
}

/// Loss coefficient consistent with [`loss_flux`]: never negative, zero for
/// non-positive differences.
#[inline]
pub fn effective_loss_coeff(delta_t: f64) -> f64 {
    if delta_t <= 0.0 {
        0.0
    } else {
        loss_flux(delta_t) / delta_t
    }
}

/// Convective heat transfer coefficient of the inner tube, W/(m²·°C).
///
/// `flow_m3h` is the loop flow in m³/h: the correlation divides it by 3600,
/// so the prefactor is the flow in m³/s raised to 0.8.
pub fn convective_coeff(flow_m3h: f64, t_f: f64) -> Result<f64> {
    if !(flow_m3h >= 0.0) {
        return Err(Error::Domain {
            quantity: "flow",
            value: flow_m3h,
            min: 0.0,
            max: f64::INFINITY,
        });
    }
    let t = check_range("fluid temperature", t_f, FLUID_T_MIN, FLUID_T_MAX)?;
    Ok((flow_m3h / 3600.0).powf(0.8) * convective_poly(t))
}

#[inline]
pub(crate) fn convective_poly(t: f64) -> f64 {
    let [a4, a3, a2, a1, a0] = CONVECTIVE_POLY;
    (((a4 * t + a3) * t + a2) * t + a1) * t + a0
}

/// Geometric efficiency `n_o` of a north-south tracking collector.
///
/// Angles in degrees. The closed form can exceed one, so the result is
/// clamped to `[0, 1]`.
pub fn geometric_efficiency(latitude: f64, declination: f64, hour_angle: f64) -> Result<f64> {
    check_range("latitude", latitude, -90.0, 90.0)?;
    let (phi, delta, omega) = (
        latitude.to_radians(),
        declination.to_radians(),
        hour_angle.to_radians(),
    );
    let inner = phi.sin() * delta.sin()
        + delta.cos().powi(2) * omega.sin().powi(2)
        + phi.cos() * delta.cos() * omega.cos();
    Ok((inner * inner).sqrt().clamp(0.0, 1.0))
}

/// Solar declination (Cooper) and hour angle, both in degrees.
pub fn solar_angles(day_of_year: u32, solar_hour: f64) -> Result<(f64, f64)> {
    check_range("day of year", day_of_year as f64, 1.0, 366.0)?;
    if !(0.0..24.0).contains(&solar_hour) {
        return Err(Error::Domain {
            quantity: "solar hour",
            value: solar_hour,
            min: 0.0,
            max: 24.0,
        });
    }
    let declination = 23.45 * (360.0 * (284.0 + day_of_year as f64) / 365.0).to_radians().sin();
    let hour_angle = 15.0 * (solar_hour - 12.0);
    Ok((declination, hour_angle))
}

/// Sun position and the resulting geometric efficiency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarGeometry {
    pub latitude: f64,
    pub declination: f64,
    pub hour_angle: f64,
    pub geometric_efficiency: f64,
}

impl SolarGeometry {
    pub fn new(latitude: f64, declination: f64, hour_angle: f64) -> Result<Self> {
        Ok(Self {
            latitude,
            declination,
            hour_angle,
            geometric_efficiency: geometric_efficiency(latitude, declination, hour_angle)?,
        })
    }

    pub fn at(latitude: f64, day_of_year: u32, solar_hour: f64) -> Result<Self> {
        let (declination, hour_angle) = solar_angles(day_of_year, solar_hour)?;
        Self::new(latitude, declination, hour_angle)
    }
}
