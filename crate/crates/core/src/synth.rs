//! Synthetic lattice networks and a ground-truth travel-time oracle with a
//! known delay structure, for exercising the pipeline end to end.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::netmodel::{haversine_m, ControlKind, GeoPoint, NetworkError, NodeId, RoadEdge, RoadNetwork, RoadNode};
use crate::rng;

/// Lattice spacing in degrees (about 222 m near the equator).
pub const GRID_SPACING_DEG: f64 = 0.002;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("control probabilities must be non-negative and sum to at most 1")]
    BadProbabilities,
    #[error("grid needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    BadDimensions { rows: usize, cols: usize },
    #[error("speed set must be non-empty with positive speeds")]
    BadSpeedSet,
    #[error("invalid delay model: {0}")]
    BadDelayModel(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Per-node probability of each control kind; the remainder is no control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlProbs {
    pub signal: f64,
    pub stop: f64,
    pub crossing: f64,
    pub give_way: f64,
    pub mini_roundabout: f64,
}

impl Default for ControlProbs {
    fn default() -> Self {
        Self { signal: 0.15, stop: 0.15, crossing: 0.10, give_way: 0.05, mini_roundabout: 0.02 }
    }
}

impl ControlProbs {
    pub fn none() -> Self {
        Self { signal: 0.0, stop: 0.0, crossing: 0.0, give_way: 0.0, mini_roundabout: 0.0 }
    }

    fn table(&self) -> [(ControlKind, f64); 5] {
        [
            (ControlKind::Signal, self.signal),
            (ControlKind::Stop, self.stop),
            (ControlKind::Crossing, self.crossing),
            (ControlKind::GiveWay, self.give_way),
            (ControlKind::MiniRoundabout, self.mini_roundabout),
        ]
    }

    fn validate(&self) -> Result<(), SynthError> {
        let table = self.table();
        let sum: f64 = table.iter().map(|(_, p)| p).sum();
        if table.iter().any(|(_, p)| !(p.is_finite() && *p >= 0.0)) || sum > 1.0 + 1e-12 {
            return Err(SynthError::BadProbabilities);
        }
        Ok(())
    }

    fn draw(&self, u: f64) -> ControlKind {
        let mut acc = 0.0;
        for (kind, p) in self.table() {
            acc += p;
            if u < acc {
                return kind;
            }
        }
        ControlKind::None
    }
}

/// Default per-edge speed choices in km/h.
pub const DEFAULT_SPEEDS_KPH: [f64; 4] = [30.0, 40.0, 50.0, 60.0];

/// A `rows x cols` bidirectional lattice anchored at (0, 0).
///
/// Node `(r, c)` has id `r * cols + c`. Each lattice street gets one speed
/// (shared by both directions) drawn from `speed_set`, and each node a control
/// kind drawn from `control_probs`. Edge ids run over streets in row-major
/// order (east street, then north street), forward direction first.
pub fn grid_network(
    rows: usize,
    cols: usize,
    seed: u64,
    control_probs: &ControlProbs,
    speed_set: &[f64],
) -> Result<RoadNetwork, SynthError> {
    if rows < 2 || cols < 2 {
        return Err(SynthError::BadDimensions { rows, cols });
    }
    control_probs.validate()?;
    if speed_set.is_empty() || speed_set.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(SynthError::BadSpeedSet);
    }
    let mut control_rng = rng::child_rng(seed, 0);
    let mut speed_rng = rng::child_rng(seed, 1);
    let id = |r: usize, c: usize| (r * cols + c) as NodeId;

    let mut nodes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let point = GeoPoint::new(r as f64 * GRID_SPACING_DEG, c as f64 * GRID_SPACING_DEG)?;
            let control = control_probs.draw(control_rng.random::<f64>());
            nodes.push(RoadNode { id: id(r, c), point, control });
        }
    }
    let mut edges = Vec::with_capacity(4 * rows * cols);
    let mut next = 0u64;
    for r in 0..rows {
        for c in 0..cols {
            let here = id(r, c);
            let mut streets = Vec::with_capacity(2);
            if c + 1 < cols {
                streets.push(id(r, c + 1));
            }
            if r + 1 < rows {
                streets.push(id(r + 1, c));
            }
            for there in streets {
                let length = haversine_m(nodes[here as usize].point, nodes[there as usize].point);
                let kph = speed_set[speed_rng.random_range(0..speed_set.len())];
                edges.push(RoadEdge::new(next, here, there, length, kph)?);
                edges.push(RoadEdge::new(next + 1, there, here, length, kph)?);
                next += 2;
            }
        }
    }
    Ok(RoadNetwork::new(nodes, edges)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlDelays {
    pub signal: f64,
    pub stop: f64,
    pub crossing: f64,
    pub give_way: f64,
    pub mini_roundabout: f64,
}

impl Default for ControlDelays {
    fn default() -> Self {
        Self { signal: 25.0, stop: 8.0, crossing: 3.0, give_way: 4.0, mini_roundabout: 6.0 }
    }
}

/// Delay per turn. Straight movements carry no delay because feature
/// vectors do not store a straight count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TurnDelays {
    pub left: f64,
    pub slight_left: f64,
    pub right: f64,
    pub slight_right: f64,
    pub uturn: f64,
}

impl Default for TurnDelays {
    fn default() -> Self {
        Self { left: 10.0, slight_left: 4.0, right: 5.0, slight_right: 2.0, uturn: 20.0 }
    }
}

/// Delay structure of the synthetic reference oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelayModel {
    pub control_delay_s: ControlDelays,
    pub turn_delay_s: TurnDelays,
    pub gamma: f64,
    pub noise_sigma_s: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            control_delay_s: ControlDelays::default(),
            turn_delay_s: TurnDelays::default(),
            gamma: 0.10,
            noise_sigma_s: 10.0,
        }
    }
}

impl DelayModel {
    pub fn zero() -> Self {
        Self {
            control_delay_s: ControlDelays {
                signal: 0.0,
                stop: 0.0,
                crossing: 0.0,
                give_way: 0.0,
                mini_roundabout: 0.0,
            },
            turn_delay_s: TurnDelays { left: 0.0, slight_left: 0.0, right: 0.0, slight_right: 0.0, uturn: 0.0 },
            gamma: 0.0,
            noise_sigma_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let c = self.control_delay_s;
        let t = self.turn_delay_s;
        let values = [
            ("signal", c.signal),
            ("stop", c.stop),
            ("crossing", c.crossing),
            ("give_way", c.give_way),
            ("mini_roundabout", c.mini_roundabout),
            ("left", t.left),
            ("slight_left", t.slight_left),
            ("right", t.right),
            ("slight_right", t.slight_right),
            ("uturn", t.uturn),
            ("gamma", self.gamma),
            ("noise_sigma_s", self.noise_sigma_s),
        ];
        match values.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            Some((name, v)) => Err(SynthError::BadDelayModel(format!("{name} must be >= 0, got {v}"))),
            None => Ok(()),
        }
    }

    /// Noise-free travel time implied by the model.
    pub fn expected_s(&self, fv: &FeatureVector) -> f64 {
        let c = self.control_delay_s;
        let t = self.turn_delay_s;
        fv.naive_tt_s * (1.0 + self.gamma)
            + fv.n_signal as f64 * c.signal
            + fv.n_stop as f64 * c.stop
            + fv.n_crossing as f64 * c.crossing
            + fv.n_give_way as f64 * c.give_way
            + fv.n_mini_roundabout as f64 * c.mini_roundabout
            + fv.n_left as f64 * t.left
            + fv.n_slight_left as f64 * t.slight_left
            + fv.n_right as f64 * t.right
            + fv.n_slight_right as f64 * t.slight_right
            + fv.n_uturn as f64 * t.uturn
    }
}

/// Minimum reference travel time produced by the oracle.
pub const MIN_TRUTH_S: f64 = 1.0;

/// Model travel time plus Gaussian noise seeded by `(seed, pair_id)`,
/// floored at [`MIN_TRUTH_S`].
pub fn synthetic_truth(fv: &FeatureVector, model: &DelayModel, seed: u64, pair_id: u64) -> f64 {
    let noise = if model.noise_sigma_s > 0.0 {
        let normal = Normal::new(0.0, model.noise_sigma_s).expect("validated sigma");
        normal.sample(&mut rng::child_rng(seed, pair_id))
    } else {
        0.0
    };
    (model.expected_s(fv) + noise).max(MIN_TRUTH_S)
}
