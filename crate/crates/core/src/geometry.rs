//! Tendon moment-arm geometry for a cable anchored on the distal link and
//! wrapped over a pulley on the proximal link.
//!
//! The joint axis sits at `A`, the pulley centre at `B` and the cable anchor
//! at `C`. The cable leaves the pulley tangentially at `E` and runs straight
//! to `C`; its moment arm is the perpendicular distance from `A` to line `CE`.
//!
//! [`moment_arm`] evaluates the triangle relations (law of cosines for the
//! chord `BC`, a combined sine/cosine form for the angle at `C`, and the
//! right triangle `BCE` for the wrap angle). [`moment_arm_literal`] keeps the
//! relations in their originally published arrangement, which places the
//! sine ratios upside down and is infeasible for most real dimensions; it is
//! kept for documentation and comparison only. [`tangent_line_moment_arm`]
//! builds the tangent line in plane coordinates and serves as a cross-check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Chord lengths below this are treated as a collapsed triangle.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Named step of the triangle chain, used to identify which relation failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    ChordLength,
    ChordAngle,
    WrapAngle,
    CableAngle,
    MomentArm,
}

impl std::fmt::Display for Relation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Relation::ChordLength => "chord length BC",
            Relation::ChordAngle => "chord angle BCA",
            Relation::WrapAngle => "wrap angle BCE",
            Relation::CableAngle => "cable angle ADC",
            Relation::MomentArm => "moment arm AD",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid routing: {0}")]
    InvalidRouting(String),
    #[error("degenerate triangle: chord length {chord:e} m is below {DEGENERATE_EPS:e} m")]
    Degenerate { chord: f64 },
    #[error("infeasible geometry in {relation}: arcsin argument {argument} outside [-1, 1]")]
    Infeasible { relation: Relation, argument: f64 },
    #[error("joint angle {value} rad outside limits [{lo}, {hi}]")]
    OutOfLimits { value: f64, lo: f64, hi: f64 },
    #[error("cable tension must be finite and non-negative, got {0}")]
    InvalidTension(f64),
}

/// Fixed anchor/pulley layout of one tendon around one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TendonRouting {
    /// Distance from the joint axis to the pulley centre (m).
    pub pulley_offset_len: f64,
    /// Distance from the joint axis to the cable anchor (m).
    pub anchor_offset_len: f64,
    /// Angular offset of the anchor from the distal link axis (rad).
    pub anchor_angle: f64,
    /// Angular offset of the pulley from the proximal link axis (rad).
    pub pulley_angle: f64,
    /// Pulley radius (m).
    pub pulley_radius: f64,
}

impl TendonRouting {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let lens = [
            ("pulley_offset_len", self.pulley_offset_len),
            ("anchor_offset_len", self.anchor_offset_len),
            ("pulley_radius", self.pulley_radius),
        ];
        for (name, v) in lens {
            if !(v.is_finite() && v > 0.0) {
                return Err(GeometryError::InvalidRouting(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        for (name, v) in [("anchor_angle", self.anchor_angle), ("pulley_angle", self.pulley_angle)] {
            if !v.is_finite() {
                return Err(GeometryError::InvalidRouting(format!("{name} must be finite")));
            }
        }
        let shortest = self.pulley_offset_len.min(self.anchor_offset_len);
        if self.pulley_radius >= shortest {
            return Err(GeometryError::InvalidRouting(format!(
                "pulley_radius {} must be smaller than both offsets (min {shortest})",
                self.pulley_radius
            )));
        }
        Ok(())
    }

    /// Included angle BAC at the joint axis for a given joint angle.
    pub fn included_angle(&self, joint: JointAngle) -> f64 {
        joint.0 - self.anchor_angle + self.pulley_angle
    }
}

/// Actuated joint angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointAngle(pub f64);

impl JointAngle {
    pub fn radians(self) -> f64 {
        self.0
    }
}

/// Closed interval of admissible joint angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimits {
    pub lo: f64,
    pub hi: f64,
}

impl JointLimits {
    pub fn new(lo: f64, hi: f64) -> Result<Self, GeometryError> {
        let limits = Self { lo, hi };
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(GeometryError::InvalidRouting(format!(
                "joint limits must satisfy lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn angle(&self, value: f64) -> Result<JointAngle, GeometryError> {
        if value.is_finite() && value >= self.lo && value <= self.hi {
            Ok(JointAngle(value))
        } else {
            Err(GeometryError::OutOfLimits { value, lo: self.lo, hi: self.hi })
        }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.lo, self.hi)
    }
}

/// Intermediate and final quantities of the moment-arm chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentArmResult {
    /// Chord BC between pulley centre and anchor (m).
    pub chord_len: f64,
    /// Angle BCA at the anchor between the chord and the anchor radius (rad).
    pub chord_angle: f64,
    /// Angle BCE between the chord and the free cable span (rad).
    pub wrap_angle: f64,
    /// Angle between the cable and the finger generatrix, ACB + BCE - anchor offset (rad).
    pub cable_angle: f64,
    /// Perpendicular distance from the joint axis to the cable line (m).
    pub moment_arm: f64,
}

fn chord_from_angle(routing: &TendonRouting, included: f64) -> f64 {
    let lp = routing.pulley_offset_len;
    let la = routing.anchor_offset_len;
    // (lp - la)^2 + 4 lp la sin^2(a/2) == lp^2 + la^2 - 2 lp la cos(a), without the
    // cancellation near a = 0.
    let half = (0.5 * included).sin();
    ((lp - la) * (lp - la) + 4.0 * lp * la * half * half).sqrt()
}

/// Chord length BC by the law of cosines.
pub fn chord_length(routing: &TendonRouting, angle: JointAngle) -> Result<f64, GeometryError> {
    routing.validate()?;
    let chord = chord_from_angle(routing, routing.included_angle(angle));
    if !(chord >= DEGENERATE_EPS) {
        return Err(GeometryError::Degenerate { chord });
    }
    Ok(chord)
}

/// Moment arm of the cable about the joint axis.
pub fn moment_arm(routing: &TendonRouting, angle: JointAngle) -> Result<MomentArmResult, GeometryError> {
    let chord = chord_length(routing, angle)?;
    let lp = routing.pulley_offset_len;
    let la = routing.anchor_offset_len;
    let r = routing.pulley_radius;
    let included = routing.included_angle(angle);

    // sin(BCA) = lp |sin BAC| / BC and cos(BCA) = (la^2 + BC^2 - lp^2) / (2 la BC);
    // both share the 1/BC factor, which atan2 ignores.
    let chord_angle = (lp * included.sin().abs()).atan2((la * la + chord * chord - lp * lp) / (2.0 * la));

    let ratio = r / chord;
    if ratio > 1.0 {
        return Err(GeometryError::Infeasible { relation: Relation::WrapAngle, argument: ratio });
    }
    let wrap_angle = ratio.asin();
    let anchor_to_cable = chord_angle + wrap_angle;
    let moment_arm = la * anchor_to_cable.sin().abs();

    Ok(MomentArmResult {
        chord_len: chord,
        chord_angle,
        wrap_angle,
        cable_angle: anchor_to_cable - routing.anchor_angle,
        moment_arm,
    })
}

fn checked_asin(relation: Relation, argument: f64) -> Result<f64, GeometryError> {
    if (-1.0..=1.0).contains(&argument) {
        Ok(argument.asin())
    } else {
        Err(GeometryError::Infeasible { relation, argument })
    }
}

/// The uncorrected chain: `BCA = asin(BC sin(BAC) / l_pulley)`,
/// `BCE = asin(BC / r)`, `ADC = ACB + BCE - anchor`, `AD = sin(ACD) l_anchor / sin(ADC)`.
///
/// Not the default path. With `BC > r` (every feasible routing) the wrap-angle
/// argument exceeds one and this returns [`GeometryError::Infeasible`].
pub fn moment_arm_literal(routing: &TendonRouting, angle: JointAngle) -> Result<MomentArmResult, GeometryError> {
    let chord = chord_length(routing, angle)?;
    let included = routing.included_angle(angle);
    let chord_angle = checked_asin(Relation::ChordAngle, chord * included.sin() / routing.pulley_offset_len)?;
    let wrap_angle = checked_asin(Relation::WrapAngle, chord / routing.pulley_radius)?;
    let anchor_to_cable = chord_angle + wrap_angle;
    let cable_angle = anchor_to_cable - routing.anchor_angle;
    let denom = cable_angle.sin();
    if denom.abs() < DEGENERATE_EPS {
        return Err(GeometryError::Infeasible { relation: Relation::CableAngle, argument: denom });
    }
    Ok(MomentArmResult {
        chord_len: chord,
        chord_angle,
        wrap_angle,
        cable_angle,
        moment_arm: anchor_to_cable.sin() * routing.anchor_offset_len / denom,
    })
}

/// Plane-coordinate construction of the same moment arm: `A` at the origin,
/// `B` on the x axis, `C` at the included angle; the cable is the tangent from
/// `C` to the pulley circle on the side facing away from `A`.
pub fn tangent_line_moment_arm(routing: &TendonRouting, angle: JointAngle) -> Result<f64, GeometryError> {
    routing.validate()?;
    let included = routing.included_angle(angle);
    let b = [routing.pulley_offset_len, 0.0];
    let c = [routing.anchor_offset_len * included.cos(), routing.anchor_offset_len * included.sin()];
    let cb = [b[0] - c[0], b[1] - c[1]];
    let ca = [-c[0], -c[1]];
    let dist = cb[0].hypot(cb[1]);
    if !(dist >= DEGENERATE_EPS) {
        return Err(GeometryError::Degenerate { chord: dist });
    }
    let ratio = routing.pulley_radius / dist;
    if ratio > 1.0 {
        return Err(GeometryError::Infeasible { relation: Relation::WrapAngle, argument: ratio });
    }
    let wrap = ratio.asin();
    // Rotate the unit chord direction away from CA.
    let side = cb[0] * ca[1] - cb[1] * ca[0];
    let turn = if side > 0.0 { -wrap } else { wrap };
    let (s, co) = turn.sin_cos();
    let u = [(cb[0] * co - cb[1] * s) / dist, (cb[0] * s + cb[1] * co) / dist];
    Ok((u[0] * ca[1] - u[1] * ca[0]).abs())
}

/// Joint torque produced by a cable tension: tension times moment arm.
pub fn external_torque(routing: &TendonRouting, angle: JointAngle, cable_tension: f64) -> Result<f64, GeometryError> {
    if !(cable_tension.is_finite() && cable_tension >= 0.0) {
        return Err(GeometryError::InvalidTension(cable_tension));
    }
    Ok(cable_tension * moment_arm(routing, angle)?.moment_arm)
}
