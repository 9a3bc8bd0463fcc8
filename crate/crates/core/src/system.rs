//! Per-slot physics of the tag: energy harvesting, the energy-detector BER,
//! binary symmetric channel capacity, slot throughput and battery dynamics.
//!
//! Everything here is a pure function of [`SystemParams`].

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Operating mode chosen by the tag at the start of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Harvest = 0,
    Backscatter = 1,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Harvest, Action::Backscatter];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        match i {
            0 => Some(Action::Harvest),
            1 => Some(Action::Backscatter),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Action::Harvest => "harvest",
            Action::Backscatter => "backscatter",
        }
    }
}

const HARVEST_ONLY: &[Action] = &[Action::Harvest];
const BOTH: &[Action] = &[Action::Harvest, Action::Backscatter];

/// MDP state: stored battery units and the current channel-gain level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct State {
    pub battery: u32,
    pub gain: usize,
}

/// Bijection between [`State`] and the flat index `battery * levels + gain`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    pub capacity: u32,
    pub levels: usize,
}

impl StateSpace {
    pub fn new(capacity: u32, levels: usize) -> Self {
        Self { capacity, levels }
    }

    pub fn len(&self) -> usize {
        (self.capacity as usize + 1) * self.levels
    }

    pub fn is_empty(&self) -> bool {
        self.levels == 0
    }

    pub fn index(&self, s: State) -> usize {
        s.battery as usize * self.levels + s.gain
    }

    pub fn state(&self, index: usize) -> State {
        State {
            battery: (index / self.levels) as u32,
            gain: index % self.levels,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }
}

/// How the harvested energy of a gain level is turned into battery units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantization {
    /// `round(eta * G_i * P_t * T0 / e0)`, clamped to `0..=Y`.
    Rounded,
    /// Level `G_i` yields exactly `i` units (uniform energy levels indexed like the gains).
    LevelIndex,
}

/// Unit energy `e0` used to quantize battery and harvest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UnitEnergyRepr", into = "UnitEnergyRepr")]
pub enum UnitEnergy {
    /// Fixed value in joules.
    Joules(f64),
    /// `eta * G_1 * P_t * T0`: scales with the source power.
    HarvestAtG1,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum UnitEnergyRepr {
    Joules(f64),
    Rule(String),
}

impl TryFrom<UnitEnergyRepr> for UnitEnergy {
    type Error = String;

    fn try_from(r: UnitEnergyRepr) -> std::result::Result<Self, String> {
        match r {
            UnitEnergyRepr::Joules(v) => Ok(UnitEnergy::Joules(v)),
            UnitEnergyRepr::Rule(s) if s == "g1" => Ok(UnitEnergy::HarvestAtG1),
            UnitEnergyRepr::Rule(s) => Err(format!(
                "unknown e0 rule `{s}` (expected a number or \"g1\")"
            )),
        }
    }
}

impl From<UnitEnergy> for UnitEnergyRepr {
    fn from(u: UnitEnergy) -> Self {
        match u {
            UnitEnergy::Joules(v) => UnitEnergyRepr::Joules(v),
            UnitEnergy::HarvestAtG1 => UnitEnergyRepr::Rule("g1".into()),
        }
    }
}

/// Physical and economic constants of one tag/receiver link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Harvesting efficiency in (0, 1].
    pub eta: f64,
    /// RF source power, watts.
    pub p_t: f64,
    /// Slot duration, seconds.
    pub t0: f64,
    /// Backscatter bit rate, bits/s.
    pub r_b: f64,
    /// Tag reflection coefficient in (0, 1].
    pub mu: f64,
    /// Receiver samples per bit.
    pub n_s: u32,
    /// Receiver RF-circuit noise variance, watts.
    pub delta0_sq: f64,
    /// Decoder noise variance, watts.
    pub delta1_sq: f64,
    /// Tag-to-receiver channel power gain.
    pub h: f64,
    /// Source-to-tag gain levels `G_0 < ... < G_Y`.
    pub gains: Vec<f64>,
    pub e0: UnitEnergy,
    pub quantization: Quantization,
    /// Battery capacity in units.
    pub b_c: u32,
    /// Circuit cost of harvesting mode, units.
    pub j_cost: u32,
    /// Cost of backscatter mode, units.
    pub k_cost: u32,
    pub gamma: f64,
    /// Backscatter pays `j` on top of `k` when set.
    pub backscatter_pays_j: bool,
}

/// Gain levels of the reference setup.
pub const REFERENCE_GAINS: [f64; 5] = [1.5e-5, 3e-5, 4.5e-5, 6e-5, 7.5e-5];

/// Gain transition matrix of the reference setup.
pub const REFERENCE_TRANSITIONS: [[f64; 5]; 5] = [
    [0.40, 0.30, 0.15, 0.10, 0.05],
    [0.05, 0.40, 0.30, 0.15, 0.10],
    [0.10, 0.05, 0.40, 0.30, 0.15],
    [0.15, 0.10, 0.05, 0.40, 0.30],
    [0.30, 0.15, 0.10, 0.05, 0.40],
];

impl SystemParams {
    /// The `paper-sec4` reference link at source power `p_t`: five gain levels,
    /// a 9-unit battery, `j = 1`, `k = 3`. Receiver constants the reference
    /// setup leaves open (`mu`, `n_s`, `delta1_sq`, `gamma`) take defaults, so
    /// absolute throughput depends on them.
    pub fn reference(p_t: f64) -> Self {
        Self {
            eta: 0.8,
            p_t,
            t0: 1.0,
            r_b: 1e4,
            mu: 0.5,
            n_s: 100,
            delta0_sq: 1e-10,
            delta1_sq: 1e-10,
            h: 5e-5,
            gains: REFERENCE_GAINS.to_vec(),
            e0: UnitEnergy::HarvestAtG1,
            quantization: Quantization::LevelIndex,
            b_c: 9,
            j_cost: 1,
            k_cost: 3,
            gamma: 0.9,
            backscatter_pays_j: true,
        }
    }

    /// Same link at a different source power. With `e0 = "g1"` the unit energy follows.
    pub fn with_source_power(&self, p_t: f64) -> Self {
        Self {
            p_t,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(key: &'static str, reason: impl Into<String>) -> Result<()> {
            Err(Error::InvalidParam {
                key,
                reason: reason.into(),
            })
        }
        let unit_interval = |v: f64| v.is_finite() && v > 0.0 && v <= 1.0;
        let positive = |v: f64| v.is_finite() && v > 0.0;

        if !unit_interval(self.eta) {
            return bad("eta", format!("{} not in (0, 1]", self.eta));
        }
        if !unit_interval(self.mu) {
            return bad("mu", format!("{} not in (0, 1]", self.mu));
        }
        if !unit_interval(self.gamma) {
            return bad("gamma", format!("{} not in (0, 1]", self.gamma));
        }
        for (key, v) in [
            ("p_t", self.p_t),
            ("t0", self.t0),
            ("r_b", self.r_b),
            ("delta0_sq", self.delta0_sq),
            ("delta1_sq", self.delta1_sq),
            ("h", self.h),
        ] {
            if !positive(v) {
                return bad(key, format!("{v} must be finite and > 0"));
            }
        }
        if self.n_s == 0 {
            return bad("n_s", "must be a positive integer");
        }
        if self.gains.len() < 2 {
            return bad("gains", "need at least two gain levels");
        }
        if self.gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return bad("gains", "levels must be finite and >= 0");
        }
        if self.gains.windows(2).any(|w| w[1] <= w[0]) {
            return bad("gains", "levels must be strictly increasing");
        }
        if let UnitEnergy::Joules(e) = self.e0 {
            if !positive(e) {
                return bad("e0", format!("{e} must be finite and > 0"));
            }
        } else if self.gains[1] <= 0.0 {
            return bad("e0", "rule \"g1\" needs G_1 > 0");
        }
        if !(1 <= self.j_cost && self.j_cost < self.k_cost && self.k_cost < self.b_c) {
            return bad(
                "k_cost",
                format!(
                    "need 1 <= j < k < B_c, got j={}, k={}, B_c={}",
                    self.j_cost, self.k_cost, self.b_c
                ),
            );
        }
        Ok(())
    }

    /// Number of gain levels, `Y + 1`.
    pub fn levels(&self) -> usize {
        self.gains.len()
    }

    pub fn state_space(&self) -> StateSpace {
        StateSpace::new(self.b_c, self.levels())
    }

    /// Resolved unit energy in joules.
    pub fn unit_energy(&self) -> f64 {
        match self.e0 {
            UnitEnergy::Joules(e) => e,
            UnitEnergy::HarvestAtG1 => self.eta * self.gains[1] * self.p_t * self.t0,
        }
    }

    fn gain(&self, gain_index: usize) -> Result<f64> {
        self.gains
            .get(gain_index)
            .copied()
            .ok_or(Error::GainIndexOutOfRange {
                index: gain_index,
                levels: self.levels(),
            })
    }

    /// Battery units collected by one harvesting slot at gain level `gain_index`.
    pub fn harvested_units(&self, gain_index: usize) -> Result<u32> {
        let g = self.gain(gain_index)?;
        let max_units = (self.levels() - 1) as f64;
        Ok(match self.quantization {
            Quantization::LevelIndex => gain_index as u32,
            Quantization::Rounded => {
                let energy = self.eta * g * self.p_t * self.t0;
                (energy / self.unit_energy()).round().clamp(0.0, max_units) as u32
            }
        })
    }

    /// Bit error rate of the energy detector at source-to-tag gain `gain_value`.
    pub fn ber(&self, gain_value: f64) -> Result<f64> {
        if !(gain_value.is_finite() && gain_value >= 0.0) {
            return Err(Error::InvalidParam {
                key: "gain",
                reason: format!("{gain_value} must be finite and >= 0"),
            });
        }
        let arg = self.mu * self.mu * self.p_t * gain_value * self.h * f64::from(self.n_s).sqrt()
            / (4.0 * (self.delta0_sq + self.delta1_sq));
        if !arg.is_finite() {
            return Err(Error::InvalidParam {
                key: "p_t",
                reason: "non-finite detector argument".into(),
            });
        }
        Ok(0.5 * erfc(arg))
    }

    /// Bits delivered by one backscatter slot at gain level `gain_index`.
    pub fn slot_rate(&self, gain_index: usize) -> Result<f64> {
        let eps = self.ber(self.gain(gain_index)?)?;
        Ok(self.r_b * bsc_capacity(eps)? * self.t0)
    }

    /// Battery after one slot. The result is clamped to `[0, B_c]`.
    pub fn battery_next(&self, units: u32, action: Action, harvested: u32) -> Result<u32> {
        if units > self.b_c {
            return Err(Error::BatteryOutOfRange {
                units: i64::from(units),
                capacity: self.b_c,
            });
        }
        let (e, j, k, eg) = (
            i64::from(units),
            i64::from(self.j_cost),
            i64::from(self.k_cost),
            i64::from(harvested),
        );
        let next = if units < self.k_cost {
            if action == Action::Backscatter {
                return Err(Error::InfeasibleAction {
                    units,
                    required: self.k_cost,
                });
            }
            e - j + eg
        } else {
            let a = action.index() as i64;
            if self.backscatter_pays_j {
                e - k * a + (1 - a) * eg - j
            } else {
                e - (k * a + j * (1 - a)) + (1 - a) * eg
            }
        };
        Ok(next.clamp(0, i64::from(self.b_c)) as u32)
    }

    pub fn feasible_actions(&self, state: State) -> &'static [Action] {
        if state.battery < self.k_cost {
            HARVEST_ONLY
        } else {
            BOTH
        }
    }

    pub fn is_feasible(&self, state: State, action: Action) -> bool {
        action == Action::Harvest || state.battery >= self.k_cost
    }
}

/// Capacity of a binary symmetric channel with crossover probability `epsilon`, in bits per use.
pub fn bsc_capacity(epsilon: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(Error::CrossoverOutOfRange(epsilon));
    }
    let xlog2x = |x: f64| if x == 0.0 { 0.0 } else { x * x.log2() };
    Ok((1.0 + xlog2x(epsilon) + xlog2x(1.0 - epsilon)).clamp(0.0, 1.0))
}
