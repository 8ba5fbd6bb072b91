//! Route features: naive traversal time, traffic-control counts and turn counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{bearing_deg, ControlKind, NetworkError, RoadNetwork};
use crate::routing::{Route, RoutingError};

/// Number of predictors in a [`FeatureVector`].
pub const FEATURE_COUNT: usize = 11;

/// Column names in serialization order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "naive_tt_s",
    "n_signal",
    "n_stop",
    "n_crossing",
    "n_give_way",
    "n_mini_roundabout",
    "n_left",
    "n_slight_left",
    "n_right",
    "n_slight_right",
    "n_uturn",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TurnClass {
    Straight,
    SlightLeft,
    Left,
    SlightRight,
    Right,
    UTurn,
}

impl TurnClass {
    pub fn mirror(self) -> Self {
        match self {
            TurnClass::SlightLeft => TurnClass::SlightRight,
            TurnClass::SlightRight => TurnClass::SlightLeft,
            TurnClass::Left => TurnClass::Right,
            TurnClass::Right => TurnClass::Left,
            other => other,
        }
    }
}

/// Bins a signed deflection (positive = clockwise = right) in (-180, 180].
///
/// Bins are half-open on |deflection|: [0,45) straight, [45,90) slight,
/// [90,135) turn, [135,180] U-turn.
pub fn classify_turn(deflection_deg: f64) -> TurnClass {
    let mag = deflection_deg.abs();
    let right = deflection_deg > 0.0;
    if mag < 45.0 {
        TurnClass::Straight
    } else if mag < 90.0 {
        if right {
            TurnClass::SlightRight
        } else {
            TurnClass::SlightLeft
        }
    } else if mag < 135.0 {
        if right {
            TurnClass::Right
        } else {
            TurnClass::Left
        }
    } else {
        TurnClass::UTurn
    }
}

/// Wraps an angle difference into (-180, 180].
pub fn normalize_deflection(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Resolution of measured deflections, in degrees.
pub const DEFLECTION_RESOLUTION_DEG: f64 = 1e-4;

/// Heading change at every interior node of the route, rounded to
/// [`DEFLECTION_RESOLUTION_DEG`] so lattice turns land on exact bin edges.
pub fn route_deflections(net: &RoadNetwork, route: &Route) -> Result<Vec<f64>, FeatureError> {
    let seq = &route.node_seq;
    if seq.len() < 3 {
        return Ok(Vec::new());
    }
    let point = |id| net.node(id).map(|n| n.point).ok_or(FeatureError::Routing(RoutingError::UnknownNode(id)));
    let points = seq.iter().map(|&id| point(id)).collect::<Result<Vec<_>, _>>()?;
    let bearings = points.windows(2).map(|w| bearing_deg(w[0], w[1])).collect::<Result<Vec<_>, _>>()?;
    let steps = 1.0 / DEFLECTION_RESOLUTION_DEG;
    Ok(bearings
        .windows(2)
        .map(|b| normalize_deflection((normalize_deflection(b[1] - b[0]) * steps).round() / steps))
        .collect())
}

/// Control counts over interior route nodes, in [`ControlKind::COUNTED`] order.
pub fn count_controls(net: &RoadNetwork, route: &Route) -> Result<[u32; 5], FeatureError> {
    let mut counts = [0u32; 5];
    let seq = &route.node_seq;
    if seq.len() < 3 {
        return Ok(counts);
    }
    for &id in &seq[1..seq.len() - 1] {
        let node = net.node(id).ok_or(RoutingError::UnknownNode(id))?;
        if let Some(slot) = node.control.feature_slot() {
            counts[slot] += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub naive_tt_s: f64,
    pub n_signal: u32,
    pub n_stop: u32,
    pub n_crossing: u32,
    pub n_give_way: u32,
    pub n_mini_roundabout: u32,
    pub n_left: u32,
    pub n_slight_left: u32,
    pub n_right: u32,
    pub n_slight_right: u32,
    pub n_uturn: u32,
}

impl FeatureVector {
    /// Predictor row in [`FEATURE_NAMES`] order.
    pub fn to_row(&self) -> [f64; FEATURE_COUNT] {
        [
            self.naive_tt_s,
            self.n_signal as f64,
            self.n_stop as f64,
            self.n_crossing as f64,
            self.n_give_way as f64,
            self.n_mini_roundabout as f64,
            self.n_left as f64,
            self.n_slight_left as f64,
            self.n_right as f64,
            self.n_slight_right as f64,
            self.n_uturn as f64,
        ]
    }

    pub fn control_count(&self, kind: ControlKind) -> u32 {
        match kind {
            ControlKind::Signal => self.n_signal,
            ControlKind::Stop => self.n_stop,
            ControlKind::Crossing => self.n_crossing,
            ControlKind::GiveWay => self.n_give_way,
            ControlKind::MiniRoundabout => self.n_mini_roundabout,
            ControlKind::None => 0,
        }
    }

    /// Stored count for a turn class; straight movements are not stored.
    pub fn turn_count(&self, class: TurnClass) -> u32 {
        match class {
            TurnClass::Left => self.n_left,
            TurnClass::SlightLeft => self.n_slight_left,
            TurnClass::Right => self.n_right,
            TurnClass::SlightRight => self.n_slight_right,
            TurnClass::UTurn => self.n_uturn,
            TurnClass::Straight => 0,
        }
    }
}

/// One row of the feature CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub pair_id: u64,
    pub naive_tt_s: f64,
    pub n_signal: u32,
    pub n_stop: u32,
    pub n_crossing: u32,
    pub n_give_way: u32,
    pub n_mini_roundabout: u32,
    pub n_left: u32,
    pub n_slight_left: u32,
    pub n_right: u32,
    pub n_slight_right: u32,
    pub n_uturn: u32,
}

impl FeatureRecord {
    pub fn new(pair_id: u64, fv: FeatureVector) -> Self {
        let FeatureVector {
            naive_tt_s,
            n_signal,
            n_stop,
            n_crossing,
            n_give_way,
            n_mini_roundabout,
            n_left,
            n_slight_left,
            n_right,
            n_slight_right,
            n_uturn,
        } = fv;
        Self {
            pair_id,
            naive_tt_s,
            n_signal,
            n_stop,
            n_crossing,
            n_give_way,
            n_mini_roundabout,
            n_left,
            n_slight_left,
            n_right,
            n_slight_right,
            n_uturn,
        }
    }

    pub fn features(&self) -> FeatureVector {
        FeatureVector {
            naive_tt_s: self.naive_tt_s,
            n_signal: self.n_signal,
            n_stop: self.n_stop,
            n_crossing: self.n_crossing,
            n_give_way: self.n_give_way,
            n_mini_roundabout: self.n_mini_roundabout,
            n_left: self.n_left,
            n_slight_left: self.n_slight_left,
            n_right: self.n_right,
            n_slight_right: self.n_slight_right,
            n_uturn: self.n_uturn,
        }
    }
}

pub fn feature_vector(net: &RoadNetwork, route: &Route) -> Result<FeatureVector, FeatureError> {
    let [n_signal, n_stop, n_crossing, n_give_way, n_mini_roundabout] = count_controls(net, route)?;
    let mut fv = FeatureVector {
        naive_tt_s: route.naive_tt_s,
        n_signal,
        n_stop,
        n_crossing,
        n_give_way,
        n_mini_roundabout,
        ..Default::default()
    };
    for d in route_deflections(net, route)? {
        match classify_turn(d) {
            TurnClass::Straight => {}
            TurnClass::Left => fv.n_left += 1,
            TurnClass::SlightLeft => fv.n_slight_left += 1,
            TurnClass::Right => fv.n_right += 1,
            TurnClass::SlightRight => fv.n_slight_right += 1,
            TurnClass::UTurn => fv.n_uturn += 1,
        }
    }
    Ok(fv)
}
