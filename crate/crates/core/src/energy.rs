//! Rotary-wing flight power and the two-stage wireless charging model.
//!
//! Flight power follows the standard rotary-wing model: a blade profile term,
//! an induced term and a parasite (fuselage drag) term, all driven by a small
//! set of airframe constants. Charging is a free-space RF link: the harvester
//! activates at a threshold received power, charges while the vehicle closes
//! on the base station, then tops up while hovering directly above it.
//!
//! All energies are Joules, powers Watts, distances meters, dB quantities
//! dBW/dBi. The parameter files shipped under `params/` carry battery energy
//! in Wh; loading converts to Joules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the stored-vs-recomputed derived constants.
const DERIVED_REL_TOL: f64 = 1e-3;

/// Physical and mission constants of the rotary-wing UAV.
///
/// The derived fields (`tip_speed_m_s`, `induced_velocity_m_s`, `drag_ratio`,
/// `blade_power_w`, `induced_power_w`) are stored alongside the raw ones and
/// checked for consistency by [`UavParams::validate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UavParams {
    /// Airframe mass (kg).
    pub mass_kg: f64,
    /// Aircraft weight (N).
    pub weight_n: f64,
    /// Air density (kg/m^3).
    pub air_density: f64,
    /// Number of rotor blades.
    pub blade_count: u32,
    /// Rotor radius (m).
    pub rotor_radius_m: f64,
    /// Rotor disc area (m^2).
    pub rotor_area_m2: f64,
    /// Blade length (m).
    pub blade_length_m: f64,
    /// Rotor solidity (dimensionless).
    pub solidity: f64,
    /// Profile drag coefficient.
    pub profile_drag_coeff: f64,
    /// Blade angular velocity (rad/s).
    pub angular_velocity_rad_s: f64,
    /// Incremental correction factor to induced power.
    pub induced_power_factor: f64,
    /// Rotor blade tip speed (m/s); equals angular velocity times radius.
    pub tip_speed_m_s: f64,
    /// Mean rotor induced velocity (m/s).
    pub induced_velocity_m_s: f64,
    /// Fuselage equivalent flat plate area (m^2).
    pub flat_plate_area_m2: f64,
    /// Fuselage drag ratio (dimensionless).
    pub drag_ratio: f64,
    /// Blade profile power at hover (W).
    pub blade_power_w: f64,
    /// Induced power at hover (W).
    pub induced_power_w: f64,
    /// Constant mission speed (m/s).
    pub cruise_speed_m_s: f64,
    /// Battery energy when full (J).
    pub battery_j: f64,
    /// Minimum allowed state of charge, fraction in [0, 1).
    pub soc_min: f64,
}

/// Raw airframe inputs from which the derived power constants are computed.
#[derive(Debug, Clone)]
pub struct UavBody {
    pub mass_kg: f64,
    pub weight_n: f64,
    pub air_density: f64,
    pub blade_count: u32,
    pub rotor_radius_m: f64,
    pub rotor_area_m2: f64,
    pub blade_length_m: f64,
    pub solidity: f64,
    pub profile_drag_coeff: f64,
    pub angular_velocity_rad_s: f64,
    pub induced_power_factor: f64,
    pub flat_plate_area_m2: f64,
}

impl Default for UavBody {
    /// Reference quadrotor airframe used throughout the test suite and the
    /// shipped `params/default_uav.toml`.
    fn default() -> Self {
        UavBody {
            mass_kg: 1.0,
            weight_n: 9.8,
            air_density: 1.225,
            blade_count: 4,
            rotor_radius_m: 0.25,
            rotor_area_m2: 0.19634,
            blade_length_m: 0.0196,
            solidity: 0.0998,
            profile_drag_coeff: 0.012,
            angular_velocity_rad_s: 400.0,
            induced_power_factor: 0.05,
            flat_plate_area_m2: 0.0079,
        }
    }
}

/// Computes the derived power constants from raw airframe fields.
///
/// `battery_j` is the full-charge battery energy in Joules and `soc_min` the
/// state-of-charge floor as a fraction.
pub fn derive_uav_constants(
    body: &UavBody,
    cruise_speed_m_s: f64,
    battery_j: f64,
    soc_min: f64,
) -> Result<UavParams> {
    let positive = [
        ("mass_kg", body.mass_kg),
        ("weight_n", body.weight_n),
        ("air_density", body.air_density),
        ("rotor_radius_m", body.rotor_radius_m),
        ("rotor_area_m2", body.rotor_area_m2),
        ("blade_length_m", body.blade_length_m),
        ("solidity", body.solidity),
        ("profile_drag_coeff", body.profile_drag_coeff),
        ("angular_velocity_rad_s", body.angular_velocity_rad_s),
        ("induced_power_factor", body.induced_power_factor),
        ("flat_plate_area_m2", body.flat_plate_area_m2),
        ("cruise_speed_m_s", cruise_speed_m_s),
        ("battery_j", battery_j),
    ];
    for (name, v) in positive {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{name} must be strictly positive, got {v}"
            )));
        }
    }
    if body.blade_count == 0 {
        return Err(Error::InvalidParameter("blade_count must be positive".into()));
    }
    if !(0.0..1.0).contains(&soc_min) {
        return Err(Error::InvalidParameter(format!(
            "soc_min must lie in [0, 1), got {soc_min}"
        )));
    }

    let tip_speed = body.angular_velocity_rad_s * body.rotor_radius_m;
    let induced_velocity = (body.weight_n / (2.0 * body.air_density * body.rotor_area_m2)).sqrt();
    let drag_ratio = body.flat_plate_area_m2 / (body.solidity * body.rotor_area_m2);
    let blade_power = body.profile_drag_coeff / 8.0
        * body.air_density
        * body.solidity
        * body.rotor_area_m2
        * body.angular_velocity_rad_s.powi(3)
        * body.rotor_radius_m.powi(3);
    let induced_power = (1.0 + body.induced_power_factor) * body.weight_n.powf(1.5)
        / (2.0 * body.air_density * body.rotor_area_m2).sqrt();

    Ok(UavParams {
        mass_kg: body.mass_kg,
        weight_n: body.weight_n,
        air_density: body.air_density,
        blade_count: body.blade_count,
        rotor_radius_m: body.rotor_radius_m,
        rotor_area_m2: body.rotor_area_m2,
        blade_length_m: body.blade_length_m,
        solidity: body.solidity,
        profile_drag_coeff: body.profile_drag_coeff,
        angular_velocity_rad_s: body.angular_velocity_rad_s,
        induced_power_factor: body.induced_power_factor,
        tip_speed_m_s: tip_speed,
        induced_velocity_m_s: induced_velocity,
        flat_plate_area_m2: body.flat_plate_area_m2,
        drag_ratio,
        blade_power_w: blade_power,
        induced_power_w: induced_power,
        cruise_speed_m_s,
        battery_j,
        soc_min,
    })
}

impl Default for UavParams {
    /// Reference airframe at 10 m/s cruise with a 43.8 Wh battery and a 20%
    /// state-of-charge floor.
    fn default() -> Self {
        derive_uav_constants(&UavBody::default(), 10.0, 43.8 * 3600.0, 0.2)
            .expect("reference parameters are valid")
    }
}

impl UavParams {
    /// Power drawn at hover (W).
    pub fn hover_power_w(&self) -> f64 {
        self.blade_power_w + self.induced_power_w
    }

    /// Power drawn in level flight at `speed_m_s` (W).
    ///
    /// Sum of the blade profile term, the induced term and the parasite term.
    pub fn flight_power(&self, speed_m_s: f64) -> Result<f64> {
        if !(speed_m_s >= 0.0) || !speed_m_s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "speed must be non-negative, got {speed_m_s}"
            )));
        }
        let v2 = speed_m_s * speed_m_s;
        let profile = self.blade_power_w * (1.0 + 3.0 * v2 / (self.tip_speed_m_s * self.tip_speed_m_s));
        let v0_2 = self.induced_velocity_m_s * self.induced_velocity_m_s;
        let induced = self.induced_power_w
            * ((1.0 + v2 * v2 / (4.0 * v0_2 * v0_2)).sqrt() - v2 / (2.0 * v0_2)).sqrt();
        let parasite = self.drag_ratio
            * self.air_density
            * self.solidity
            * self.rotor_area_m2
            * v2
            * speed_m_s
            / 2.0;
        Ok(profile + induced + parasite)
    }

    /// Power at the configured cruise speed (W).
    pub fn cruise_power_w(&self) -> f64 {
        self.flight_power(self.cruise_speed_m_s)
            .expect("cruise speed validated at construction")
    }

    /// Checks positivity, the state-of-charge range and the consistency of
    /// the stored derived constants with the raw fields.
    pub fn validate(&self) -> Result<()> {
        let body = UavBody {
            mass_kg: self.mass_kg,
            weight_n: self.weight_n,
            air_density: self.air_density,
            blade_count: self.blade_count,
            rotor_radius_m: self.rotor_radius_m,
            rotor_area_m2: self.rotor_area_m2,
            blade_length_m: self.blade_length_m,
            solidity: self.solidity,
            profile_drag_coeff: self.profile_drag_coeff,
            angular_velocity_rad_s: self.angular_velocity_rad_s,
            induced_power_factor: self.induced_power_factor,
            flat_plate_area_m2: self.flat_plate_area_m2,
        };
        let derived = derive_uav_constants(&body, self.cruise_speed_m_s, self.battery_j, self.soc_min)?;
        let pairs = [
            ("tip_speed_m_s", self.tip_speed_m_s, derived.tip_speed_m_s),
            (
                "induced_velocity_m_s",
                self.induced_velocity_m_s,
                derived.induced_velocity_m_s,
            ),
            ("drag_ratio", self.drag_ratio, derived.drag_ratio),
            ("blade_power_w", self.blade_power_w, derived.blade_power_w),
            ("induced_power_w", self.induced_power_w, derived.induced_power_w),
        ];
        for (name, stored, computed) in pairs {
            if !(stored > 0.0) || (stored - computed).abs() > DERIVED_REL_TOL * computed.abs() {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {stored} is inconsistent with raw fields (expected {computed:.6})"
                )));
            }
        }
        Ok(())
    }

    /// Loads parameters from a flat TOML document; `battery_wh` is converted
    /// to Joules.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: UavParamsFile =
            toml::from_str(text).map_err(|e| Error::Format(format!("uav params: {e}")))?;
        let params = file.into_params();
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// On-disk layout of the UAV parameter file. Battery energy is in Wh.
#[derive(Debug, Deserialize)]
struct UavParamsFile {
    mass_kg: f64,
    weight_n: f64,
    air_density: f64,
    blade_count: u32,
    rotor_radius_m: f64,
    rotor_area_m2: f64,
    blade_length_m: f64,
    solidity: f64,
    profile_drag_coeff: f64,
    angular_velocity_rad_s: f64,
    induced_power_factor: f64,
    tip_speed_m_s: f64,
    induced_velocity_m_s: f64,
    flat_plate_area_m2: f64,
    drag_ratio: f64,
    blade_power_w: f64,
    induced_power_w: f64,
    cruise_speed_m_s: f64,
    battery_wh: f64,
    soc_min: f64,
}

impl UavParamsFile {
    fn into_params(self) -> UavParams {
        UavParams {
            mass_kg: self.mass_kg,
            weight_n: self.weight_n,
            air_density: self.air_density,
            blade_count: self.blade_count,
            rotor_radius_m: self.rotor_radius_m,
            rotor_area_m2: self.rotor_area_m2,
            blade_length_m: self.blade_length_m,
            solidity: self.solidity,
            profile_drag_coeff: self.profile_drag_coeff,
            angular_velocity_rad_s: self.angular_velocity_rad_s,
            induced_power_factor: self.induced_power_factor,
            tip_speed_m_s: self.tip_speed_m_s,
            induced_velocity_m_s: self.induced_velocity_m_s,
            flat_plate_area_m2: self.flat_plate_area_m2,
            drag_ratio: self.drag_ratio,
            blade_power_w: self.blade_power_w,
            induced_power_w: self.induced_power_w,
            cruise_speed_m_s: self.cruise_speed_m_s,
            battery_j: self.battery_wh * 3600.0,
            soc_min: self.soc_min,
        }
    }
}

/// Wireless link budget of the base-station charger.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WptParams {
    /// Transmit power (dBW).
    pub tx_power_dbw: f64,
    /// Transmit antenna gain (dBi).
    pub tx_gain_dbi: f64,
    /// Receive antenna gain at the UAV (dBi).
    pub uav_gain_dbi: f64,
    /// Carrier frequency (Hz).
    pub frequency_hz: f64,
    /// RF-to-DC conversion efficiency, fraction in (0, 1].
    pub efficiency: f64,
    /// Harvester activation threshold (dBW).
    pub activation_dbw: f64,
    /// Flight altitude above the base-station antenna (m).
    pub altitude_m: f64,
}

impl Default for WptParams {
    fn default() -> Self {
        WptParams {
            tx_power_dbw: 58.0,
            tx_gain_dbi: 58.0,
            uav_gain_dbi: 0.0,
            frequency_hz: 915.0e6,
            efficiency: 0.6,
            activation_dbw: 17.0,
            altitude_m: 10.0,
        }
    }
}

impl WptParams {
    /// Combined link constant: everything in the dB budget except the
    /// distance term.
    fn omega_db(&self) -> f64 {
        self.tx_power_dbw + self.tx_gain_dbi + self.uav_gain_dbi - 20.0 * self.frequency_hz.log10()
            + 147.55
    }

    /// Received power at the harvester for a transmitter-receiver distance
    /// `distance_m` (dBW).
    pub fn charge_power_dbw(&self, distance_m: f64) -> Result<f64> {
        Ok(self.tx_power_dbw + self.tx_gain_dbi + self.uav_gain_dbi
            - path_loss_db(self.frequency_hz, distance_m)?)
    }

    /// Received power while hovering directly above the base station (dBW).
    pub fn hover_charge_power_dbw(&self) -> Result<f64> {
        self.charge_power_dbw(self.altitude_m)
    }

    /// Horizontal distance from the base station at which the received power
    /// first reaches the activation threshold (m).
    ///
    /// Returns [`Error::ThresholdUnreachable`] if the threshold is not met
    /// even directly overhead.
    pub fn charge_start_offset(&self) -> Result<f64> {
        if !(self.altitude_m > 0.0) {
            return Err(Error::DegenerateGeometry);
        }
        let slant_sq = 10f64.powf((self.omega_db() - self.activation_dbw) / 10.0);
        let radicand = slant_sq - self.altitude_m * self.altitude_m;
        if radicand < 0.0 {
            return Err(Error::ThresholdUnreachable {
                altitude_m: self.altitude_m,
            });
        }
        Ok(radicand.sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz > 0.0) {
            return Err(Error::InvalidParameter("frequency_hz must be positive".into()));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "efficiency must lie in (0, 1], got {}",
                self.efficiency
            )));
        }
        if !(self.altitude_m > 0.0) {
            return Err(Error::InvalidParameter("altitude_m must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let params: WptParams =
            toml::from_str(text).map_err(|e| Error::Format(format!("wpt params: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Free-space path loss of a line-of-sight link (dB).
pub fn path_loss_db(frequency_hz: f64, distance_m: f64) -> Result<f64> {
    if !(frequency_hz > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "frequency must be positive, got {frequency_hz}"
        )));
    }
    if !(distance_m > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "distance must be positive, got {distance_m}"
        )));
    }
    Ok(20.0 * frequency_hz.log10() + 20.0 * distance_m.log10() - 147.55)
}

/// Outcome of one recharge at the base station.
#[derive(Debug, Clone, PartialEq)]
pub struct RechargeResult {
    /// Horizontal offset at which charging activates (m).
    pub x_offset_start_m: f64,
    /// Duration of the in-flight charging stage (s).
    pub t_charge_fly_s: f64,
    /// DC energy accepted by the battery during the approach (J), capped at
    /// the battery headroom.
    pub e_fly_j: f64,
    /// Hover time until the battery is full (s).
    pub t_hover_s: f64,
    /// Net energy gained while hovering (J).
    pub e_hover_net_j: f64,
}

/// DC energy received while flying from the activation offset to the top of
/// the base station (J), closed form.
///
/// The integrand is the converted received power along the approach; with
/// `A2 = x^2 + H^2`, `B2 = -2Vx`, `C2 = V^2` the integral reduces to a
/// difference of arctangents with discriminant `4 A2 C2 - B2^2 = 4 V^2 H^2`.
pub fn inflight_charge_energy(
    wpt: &WptParams,
    uav: &UavParams,
    x_offset_m: f64,
) -> Result<f64> {
    if !(x_offset_m >= 0.0) || !x_offset_m.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "charge offset must be non-negative, got {x_offset_m}"
        )));
    }
    if !(wpt.altitude_m > 0.0) {
        return Err(Error::DegenerateGeometry);
    }
    let v = uav.cruise_speed_m_s;
    if !(v > 0.0) {
        return Err(Error::InvalidParameter("cruise speed must be positive".into()));
    }
    let h = wpt.altitude_m;
    let a2 = x_offset_m * x_offset_m + h * h;
    let b2 = -2.0 * v * x_offset_m;
    let c2 = v * v;
    let t_fly = x_offset_m / v;
    let disc = (4.0 * a2 * c2 - b2 * b2).sqrt(); // = 2 V H
    let gain = 2.0 * wpt.efficiency * 10f64.powf(wpt.omega_db() / 10.0) / disc;
    Ok(gain * (((b2 + 2.0 * c2 * t_fly) / disc).atan() - (b2 / disc).atan()))
}

/// Numerical-quadrature evaluation of the in-flight charge energy (J).
///
/// Integrates the instantaneous converted power over the approach with
/// composite Simpson panels, doubling the resolution until two successive
/// refinements agree to 1e-9 relative. Serves as the independent check of
/// [`inflight_charge_energy`].
pub fn inflight_charge_energy_quad(
    wpt: &WptParams,
    uav: &UavParams,
    x_offset_m: f64,
) -> Result<f64> {
    if !(x_offset_m >= 0.0) || !x_offset_m.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "charge offset must be non-negative, got {x_offset_m}"
        )));
    }
    if !(wpt.altitude_m > 0.0) {
        return Err(Error::DegenerateGeometry);
    }
    let v = uav.cruise_speed_m_s;
    if !(v > 0.0) {
        return Err(Error::InvalidParameter("cruise speed must be positive".into()));
    }
    if x_offset_m == 0.0 {
        return Ok(0.0);
    }
    let t_end = x_offset_m / v;
    let h = wpt.altitude_m;
    let power_w = |t: f64| -> Result<f64> {
        let x = x_offset_m - v * t;
        let d = (x * x + h * h).sqrt();
        Ok(wpt.efficiency * 10f64.powf(wpt.charge_power_dbw(d)? / 10.0))
    };

    let simpson = |n: usize| -> Result<f64> {
        let dt = t_end / n as f64;
        let mut acc = power_w(0.0)? + power_w(t_end)?;
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * power_w(i as f64 * dt)?;
        }
        Ok(acc * dt / 3.0)
    };

    let mut n = 64;
    let mut prev = simpson(n)?;
    loop {
        n *= 2;
        let next = simpson(n)?;
        if (next - prev).abs() <= 1e-9 * next.abs() || n >= 1 << 22 {
            return Ok(next);
        }
        prev = next;
    }
}

/// Net DC power while hovering above the base station: converted received
/// power minus hover consumption (W).
pub fn net_hover_power_w(wpt: &WptParams, uav: &UavParams) -> Result<f64> {
    let hover_dbw = wpt.hover_charge_power_dbw()?;
    Ok(wpt.efficiency * 10f64.powf(hover_dbw / 10.0) - uav.hover_power_w())
}

/// Simulates one full recharge starting from `e_remaining_j` in the battery.
///
/// The approach stage credits the closed-form in-flight energy (capped at the
/// battery headroom); the hover stage runs until the battery is full. The
/// battery ends at exactly `battery_j`, so
/// `e_remaining + e_fly + e_hover_net == battery_j` holds whenever no error
/// is returned.
pub fn recharge_event(wpt: &WptParams, uav: &UavParams, e_remaining_j: f64) -> Result<RechargeResult> {
    if !(0.0..=uav.battery_j).contains(&e_remaining_j) {
        return Err(Error::InvalidParameter(format!(
            "remaining energy {e_remaining_j} J outside [0, {}]",
            uav.battery_j
        )));
    }
    let x_offset = wpt.charge_start_offset()?;
    let net_hover_w = net_hover_power_w(wpt, uav)?;
    if net_hover_w <= 0.0 {
        return Err(Error::CannotCharge { net_w: net_hover_w });
    }
    let e_fly_raw = inflight_charge_energy(wpt, uav, x_offset)?;
    let headroom = uav.battery_j - e_remaining_j;
    let e_fly = e_fly_raw.min(headroom);
    let deficit = headroom - e_fly;
    let t_hover = if deficit > 0.0 { deficit / net_hover_w } else { 0.0 };
    Ok(RechargeResult {
        x_offset_start_m: x_offset,
        t_charge_fly_s: x_offset / uav.cruise_speed_m_s,
        e_fly_j: e_fly,
        t_hover_s: t_hover,
        e_hover_net_j: net_hover_w * t_hover,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn derived_constants_match_reference_airframe() {
        let uav = UavParams::default();
        assert!((uav.blade_power_w - 36.01).abs() < 0.01);
        assert!((uav.induced_power_w - 46.44).abs() < 0.01);
        assert!((uav.induced_velocity_m_s - 4.5135).abs() < 0.01);
        assert!((uav.drag_ratio - 0.4030).abs() < 0.01);
        assert_eq!(uav.tip_speed_m_s, 100.0);
        // High-precision values for the same inputs.
        assert!(rel_err(uav.blade_power_w, 36.00532005).max(0.0) < 1e-9);
        assert!(rel_err(uav.induced_power_w, 46.445214944487944) < 1e-12);
        assert!(rel_err(uav.induced_velocity_m_s, 4.5136263308540276) < 1e-12);
        assert!(rel_err(uav.drag_ratio, 0.40316958660113341) < 1e-12);
    }

    #[test]
    fn derive_rejects_non_positive_fields() {
        let mut body = UavBody::default();
        body.rotor_area_m2 = 0.0;
        assert!(matches!(
            derive_uav_constants(&body, 10.0, 1.0, 0.2),
            Err(Error::InvalidParameter(_))
        ));
        let body = UavBody {
            weight_n: -1.0,
            ..UavBody::default()
        };
        assert!(derive_uav_constants(&body, 10.0, 1.0, 0.2).is_err());
        assert!(derive_uav_constants(&UavBody::default(), 10.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn derive_is_deterministic_for_identical_inputs() {
        let a = derive_uav_constants(&UavBody::default(), 10.0, 157_680.0, 0.2).unwrap();
        let b = derive_uav_constants(&UavBody::default(), 10.0, 157_680.0, 0.2).unwrap();
        assert_eq!(a.blade_power_w, b.blade_power_w);
        assert_eq!(a.induced_power_w, b.induced_power_w);
        assert_eq!(a.induced_velocity_m_s, b.induced_velocity_m_s);
    }

    #[test]
    fn flight_power_matches_published_operating_points() {
        let uav = UavParams::default();
        let p10 = uav.flight_power(10.0).unwrap();
        assert!((p10 - 62.49).abs() < 0.05, "P(10) = {p10}");
        let p0 = uav.flight_power(0.0).unwrap();
        assert!((p0 - 82.45).abs() < 0.05, "P(0) = {p0}");
        // Independent high-precision evaluation of the same expression.
        assert!(rel_err(p10, 62.481632263439141) < 1e-12);
        assert!(rel_err(uav.flight_power(5.0).unwrap(), 71.626171961736363) < 1e-12);
    }

    #[test]
    fn flight_power_at_zero_speed_is_hover_power() {
        let uav = UavParams::default();
        let p0 = uav.flight_power(0.0).unwrap();
        assert!(rel_err(p0, uav.hover_power_w()) < 1e-9);
    }

    #[test]
    fn flight_power_rejects_negative_speed() {
        assert!(UavParams::default().flight_power(-1.0).is_err());
    }

    #[test]
    fn path_loss_reference_points() {
        assert!((path_loss_db(915.0e6, 1.0).unwrap() - 31.678421881328966).abs() < 1e-3);
        assert!((path_loss_db(915.0e6, 10.0).unwrap() - 51.678421881328966).abs() < 1e-3);
    }

    #[test]
    fn path_loss_doubling_adds_six_db() {
        let base = path_loss_db(915.0e6, 7.3).unwrap();
        let double = path_loss_db(915.0e6, 14.6).unwrap();
        assert!(((double - base) - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn path_loss_rejects_non_positive_distance() {
        assert!(path_loss_db(915.0e6, 0.0).is_err());
        assert!(path_loss_db(915.0e6, -5.0).is_err());
        assert!(path_loss_db(0.0, 5.0).is_err());
    }

    #[test]
    fn charge_power_reference_point() {
        let wpt = WptParams::default();
        assert!((wpt.charge_power_dbw(10.0).unwrap() - 64.3215).abs() < 1e-2);
    }

    #[test]
    fn charge_power_gain_additivity() {
        let wpt = WptParams::default();
        let boosted = WptParams {
            uav_gain_dbi: wpt.uav_gain_dbi + 3.0,
            ..wpt.clone()
        };
        let d = 42.0;
        let diff = boosted.charge_power_dbw(d).unwrap() - wpt.charge_power_dbw(d).unwrap();
        assert!((diff - 3.0).abs() < 1e-12);
    }

    #[test]
    fn charge_power_zero_at_loss_equal_to_budget() {
        let wpt = WptParams::default();
        let budget = wpt.tx_power_dbw + wpt.tx_gain_dbi + wpt.uav_gain_dbi;
        // Solve 20 lg f + 20 lg d - 147.55 = budget for d.
        let d = 10f64.powf((budget + 147.55 - 20.0 * wpt.frequency_hz.log10()) / 20.0);
        assert!(wpt.charge_power_dbw(d).unwrap().abs() < 1e-9);
    }

    #[test]
    fn charge_start_offset_default_link() {
        let wpt = WptParams::default();
        let x = wpt.charge_start_offset().unwrap();
        assert!((x - 2322.9).abs() < 0.5, "offset = {x}");
        // Root of the threshold equation, solved independently by bisection
        // on received power as a function of slant distance.
        let target = wpt.activation_dbw;
        let (mut lo, mut hi) = (wpt.altitude_m, 1.0e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if wpt.charge_power_dbw(mid).unwrap() > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let slant = 0.5 * (lo + hi);
        let expected = (slant * slant - wpt.altitude_m * wpt.altitude_m).sqrt();
        assert!(rel_err(x, expected) < 1e-6);
    }

    #[test]
    fn charge_start_offset_scales_with_threshold() {
        let wpt = WptParams::default();
        let x = wpt.charge_start_offset().unwrap();
        let lowered = WptParams {
            activation_dbw: wpt.activation_dbw - 20.0,
            ..wpt
        };
        let ratio = lowered.charge_start_offset().unwrap() / x;
        assert!((ratio - 10.0).abs() < 1e-3, "ratio = {ratio}");
    }

    #[test]
    fn charge_start_offset_unreachable_threshold() {
        let wpt = WptParams {
            activation_dbw: 200.0,
            ..WptParams::default()
        };
        assert!(matches!(
            wpt.charge_start_offset(),
            Err(Error::ThresholdUnreachable { .. })
        ));
    }

    #[test]
    fn inflight_energy_zero_offset() {
        let uav = UavParams::default();
        let wpt = WptParams::default();
        assert_eq!(inflight_charge_energy(&wpt, &uav, 0.0).unwrap(), 0.0);
        assert_eq!(inflight_charge_energy_quad(&wpt, &uav, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn inflight_energy_matches_quadrature_at_default_link() {
        let uav = UavParams::default();
        let wpt = WptParams::default();
        let x = wpt.charge_start_offset().unwrap();
        let closed = inflight_charge_energy(&wpt, &uav, x).unwrap();
        let quad = inflight_charge_energy_quad(&wpt, &uav, x).unwrap();
        assert!(rel_err(closed, quad) <= 1e-6, "closed {closed} quad {quad}");
        assert!(rel_err(closed, 2542360.8740719769) < 1e-9);
    }

    #[test]
    fn inflight_energy_halving_speed_doubles_window() {
        let wpt = WptParams::default();
        let fast = UavParams::default();
        let slow = derive_uav_constants(&UavBody::default(), 5.0, fast.battery_j, 0.2).unwrap();
        let x = 500.0;
        let t_fast = x / fast.cruise_speed_m_s;
        let t_slow = x / slow.cruise_speed_m_s;
        assert!((t_slow - 2.0 * t_fast).abs() < 1e-12);
        // Twice the exposure, twice the energy for the same geometry.
        let e_fast = inflight_charge_energy(&wpt, &fast, x).unwrap();
        let e_slow = inflight_charge_energy(&wpt, &slow, x).unwrap();
        assert!(rel_err(e_slow, 2.0 * e_fast) < 1e-12);
    }

    #[test]
    fn inflight_energy_linear_in_efficiency() {
        let uav = UavParams::default();
        let wpt = WptParams::default();
        let double = WptParams {
            efficiency: 0.3,
            ..wpt.clone()
        };
        let e1 = inflight_charge_energy_quad(&wpt, &uav, 800.0).unwrap();
        let e2 = inflight_charge_energy_quad(&double, &uav, 800.0).unwrap();
        assert!(rel_err(e1, 2.0 * e2) < 1e-9);
    }

    #[test]
    fn inflight_energy_degenerate_altitude() {
        let uav = UavParams::default();
        let wpt = WptParams {
            altitude_m: 0.0,
            ..WptParams::default()
        };
        assert!(matches!(
            inflight_charge_energy(&wpt, &uav, 100.0),
            Err(Error::DegenerateGeometry)
        ));
    }

    #[test]
    fn recharge_already_full_requires_no_hover() {
        let uav = UavParams::default();
        let wpt = WptParams::default();
        let r = recharge_event(&wpt, &uav, uav.battery_j).unwrap();
        assert_eq!(r.t_hover_s, 0.0);
        assert_eq!(r.e_fly_j, 0.0);
        assert_eq!(r.e_hover_net_j, 0.0);
    }

    #[test]
    fn recharge_bookkeeping_closes_the_budget() {
        let uav = UavParams::default();
        let wpt = WptParams::default();
        for frac in [0.0, 0.2, 0.5, 0.9, 0.999] {
            let e_rem = frac * uav.battery_j;
            let r = recharge_event(&wpt, &uav, e_rem).unwrap();
            let total = e_rem + r.e_fly_j + r.e_hover_net_j;
            assert!(rel_err(total, uav.battery_j) < 1e-9, "frac {frac}");
        }
    }

    #[test]
    fn recharge_hover_time_on_weak_link() {
        // Lower transmit power so the approach alone cannot fill the battery.
        let uav = UavParams::default();
        let wpt = WptParams {
            tx_power_dbw: 30.0,
            ..WptParams::default()
        };
        let r = recharge_event(&wpt, &uav, 0.2 * uav.battery_j).unwrap();
        assert!(rel_err(r.x_offset_start_m, 91.944411435745261) < 1e-9);
        assert!(rel_err(r.e_fly_j, 3761.7791290291472) < 1e-9);
        assert!(rel_err(r.t_hover_s, 49.153925924897170) < 1e-9);
        let total = 0.2 * uav.battery_j + r.e_fly_j + r.e_hover_net_j;
        assert!(rel_err(total, uav.battery_j) < 1e-9);
    }

    #[test]
    fn recharge_zero_efficiency_cannot_charge() {
        let uav = UavParams::default();
        let wpt = WptParams {
            efficiency: 0.0,
            ..WptParams::default()
        };
        assert!(matches!(
            recharge_event(&wpt, &uav, 0.5 * uav.battery_j),
            Err(Error::CannotCharge { .. })
        ));
    }

    #[test]
    fn recharge_rejects_out_of_range_energy() {
        let uav = UavParams::default();
        let wpt = WptParams::default();
        assert!(recharge_event(&wpt, &uav, -1.0).is_err());
        assert!(recharge_event(&wpt, &uav, uav.battery_j * 1.01).is_err());
    }

    #[test]
    fn params_roundtrip_through_toml() {
        let uav = UavParams::default();
        let text = format!(
            "mass_kg = {}\nweight_n = {}\nair_density = {}\nblade_count = {}\n\
             rotor_radius_m = {}\nrotor_area_m2 = {}\nblade_length_m = {}\nsolidity = {}\n\
             profile_drag_coeff = {}\nangular_velocity_rad_s = {}\ninduced_power_factor = {}\n\
             tip_speed_m_s = {}\ninduced_velocity_m_s = {}\nflat_plate_area_m2 = {}\n\
             drag_ratio = {}\nblade_power_w = {}\ninduced_power_w = {}\ncruise_speed_m_s = {}\n\
             battery_wh = {}\nsoc_min = {}\n",
            uav.mass_kg,
            uav.weight_n,
            uav.air_density,
            uav.blade_count,
            uav.rotor_radius_m,
            uav.rotor_area_m2,
            uav.blade_length_m,
            uav.solidity,
            uav.profile_drag_coeff,
            uav.angular_velocity_rad_s,
            uav.induced_power_factor,
            uav.tip_speed_m_s,
            uav.induced_velocity_m_s,
            uav.flat_plate_area_m2,
            uav.drag_ratio,
            uav.blade_power_w,
            uav.induced_power_w,
            uav.cruise_speed_m_s,
            uav.battery_j / 3600.0,
            uav.soc_min,
        );
        let loaded = UavParams::from_toml_str(&text).unwrap();
        assert!(rel_err(loaded.battery_j, uav.battery_j) < 1e-12);
        assert_eq!(loaded.blade_power_w, uav.blade_power_w);
    }

    #[test]
    fn inconsistent_derived_constants_rejected() {
        let mut uav = UavParams::default();
        uav.blade_power_w *= 1.01; // 1% off, tolerance is 0.1%
        assert!(uav.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn path_loss_strictly_increasing(d in 0.1f64..1e5, step in 0.01f64..100.0) {
                let a = path_loss_db(915.0e6, d).unwrap();
                let b = path_loss_db(915.0e6, d + step).unwrap();
                prop_assert!(b > a);
            }

            #[test]
            fn charge_power_strictly_decreasing(d in 0.1f64..1e5, step in 0.01f64..100.0) {
                let wpt = WptParams::default();
                let a = wpt.charge_power_dbw(d).unwrap();
                let b = wpt.charge_power_dbw(d + step).unwrap();
                prop_assert!(b < a);
            }

            #[test]
            fn hover_time_non_increasing_in_remaining_energy(
                frac in 0.0f64..1.0,
                delta in 0.0f64..0.5,
                tx in 20.0f64..40.0,
            ) {
                let uav = UavParams::default();
                let wpt = WptParams { tx_power_dbw: tx, ..WptParams::default() };
                let lo = frac * uav.battery_j;
                let hi = (frac + delta).min(1.0) * uav.battery_j;
                let t_lo = recharge_event(&wpt, &uav, lo).unwrap().t_hover_s;
                let t_hi = recharge_event(&wpt, &uav, hi).unwrap().t_hover_s;
                prop_assert!(t_hi <= t_lo + 1e-12);
            }

            #[test]
            fn closed_form_matches_quadrature(
                tx in 20.0f64..60.0,
                alt in 1.0f64..100.0,
                offset in 0.0f64..5000.0,
                eff in 0.05f64..1.0,
            ) {
                let uav = UavParams::default();
                let wpt = WptParams {
                    tx_power_dbw: tx,
                    altitude_m: alt,
                    efficiency: eff,
                    ..WptParams::default()
                };
                let closed = inflight_charge_energy(&wpt, &uav, offset).unwrap();
                let quad = inflight_charge_energy_quad(&wpt, &uav, offset).unwrap();
                let denom = quad.abs().max(1e-12);
                prop_assert!((closed - quad).abs() / denom <= 1e-6);
            }
        }
    }
}
