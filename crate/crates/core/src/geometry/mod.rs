//! Parametric three-span bridge facades and the training corpus built from them.
//!
//! Every bridge is 300 m long and mirror-symmetric about midspan. The beam
//! family uses an 80 + 140 + 80 m layout, every other subtype 67 + 166 + 67 m.
//! A [`BridgeSpec`] is drawn from a seed by [`sample_spec`] and turned into a
//! [`GrayImage`](crate::image::GrayImage) by [`render`].

mod corpus;
mod raster;
mod render;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{
    generate_corpus, image_filename, image_seed, CorpusManifest, CorpusOutcome, CorpusRequest,
    MANIFEST_FILE, MANIFEST_VERSION,
};
pub use render::{render, Canvas, Viewport, TALLEST_REACH_M, WORLD_TOP_M};

/// Total bridge length in meters.
pub const BRIDGE_LENGTH_M: f64 = 300.0;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid bridge spec: {0}")]
    InvalidSpec(String),
    #[error("geometry leaves the canvas: {0}")]
    OffCanvas(String),
    #[error("unsupported canvas {width}x{height}: {reason}")]
    Canvas {
        width: usize,
        height: usize,
        reason: &'static str,
    },
    #[error("output root {0} already exists; pass overwrite to replace it")]
    OutputExists(String),
    #[error("per-subtype count must be at least 1")]
    EmptyCorpus,
    #[error("corpus generation aborted at {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeSubtype {
    EqualSectionBeam,
    VPierRigidFrame,
    TopBearingArch,
    BottomBearingArch,
    HarpCableStayed,
    FanCableStayed,
    VerticalSlingSuspension,
    DiagonalSlingSuspension,
}

impl BridgeSubtype {
    pub const ALL: [BridgeSubtype; 8] = [
        BridgeSubtype::EqualSectionBeam,
        BridgeSubtype::VPierRigidFrame,
        BridgeSubtype::TopBearingArch,
        BridgeSubtype::BottomBearingArch,
        BridgeSubtype::HarpCableStayed,
        BridgeSubtype::FanCableStayed,
        BridgeSubtype::VerticalSlingSuspension,
        BridgeSubtype::DiagonalSlingSuspension,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Stable identifier used in filenames and manifests.
    pub fn slug(self) -> &'static str {
        match self {
            BridgeSubtype::EqualSectionBeam => "equal_section_beam",
            BridgeSubtype::VPierRigidFrame => "v_pier_rigid_frame",
            BridgeSubtype::TopBearingArch => "top_bearing_arch",
            BridgeSubtype::BottomBearingArch => "bottom_bearing_arch",
            BridgeSubtype::HarpCableStayed => "harp_cable_stayed",
            BridgeSubtype::FanCableStayed => "fan_cable_stayed",
            BridgeSubtype::VerticalSlingSuspension => "vertical_sling_suspension",
            BridgeSubtype::DiagonalSlingSuspension => "diagonal_sling_suspension",
        }
    }

    pub fn is_beam_family(self) -> bool {
        matches!(
            self,
            BridgeSubtype::EqualSectionBeam | BridgeSubtype::VPierRigidFrame
        )
    }

    /// Side, main and side span in meters.
    pub fn spans(self) -> [f64; 3] {
        if self.is_beam_family() {
            [80.0, 140.0, 80.0]
        } else {
            [67.0, 166.0, 67.0]
        }
    }

    /// Member parameters this subtype draws, in draw order.
    pub fn param_kinds(self) -> &'static [ParamKind] {
        use ParamKind::*;
        match self {
            BridgeSubtype::EqualSectionBeam => &[PierHeight, GirderDepth],
            BridgeSubtype::VPierRigidFrame => &[PierHeight, VPierHalfAngle],
            BridgeSubtype::TopBearingArch => &[ArchRiseRatio, CrownClearance, SpandrelColumns],
            BridgeSubtype::BottomBearingArch => &[PierHeight, ArchRiseRatio, Hangers],
            BridgeSubtype::HarpCableStayed | BridgeSubtype::FanCableStayed => {
                &[PierHeight, TowerHeight, CablePairs]
            }
            BridgeSubtype::VerticalSlingSuspension => &[PierHeight, TowerHeight, Hangers],
            BridgeSubtype::DiagonalSlingSuspension => {
                &[PierHeight, TowerHeight, Hangers, SlingInclination]
            }
        }
    }
}

impl fmt::Display for BridgeSubtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for BridgeSubtype {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BridgeSubtype::ALL
            .into_iter()
            .find(|t| t.slug() == s)
            .ok_or_else(|| GeometryError::InvalidSpec(format!("unknown subtype {s:?}")))
    }
}

/// A member parameter and its legal range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Ground to deck at the piers, meters.
    PierHeight,
    /// Depth of the constant-section girder, meters.
    GirderDepth,
    /// Angle of each V-pier leg from vertical, degrees.
    VPierHalfAngle,
    /// Arch rise divided by the main span.
    ArchRiseRatio,
    /// Deck height above the arch crown, meters.
    CrownClearance,
    /// Spandrel columns between a deck arch and the deck.
    SpandrelColumns,
    /// Tower height above the deck, meters.
    TowerHeight,
    /// Stay cables per tower side.
    CablePairs,
    /// Hangers in the main span.
    Hangers,
    /// Hanger inclination from horizontal, degrees.
    SlingInclination,
}

impl ParamKind {
    pub const ALL: [ParamKind; 10] = [
        ParamKind::PierHeight,
        ParamKind::GirderDepth,
        ParamKind::VPierHalfAngle,
        ParamKind::ArchRiseRatio,
        ParamKind::CrownClearance,
        ParamKind::SpandrelColumns,
        ParamKind::TowerHeight,
        ParamKind::CablePairs,
        ParamKind::Hangers,
        ParamKind::SlingInclination,
    ];

    /// Inclusive legal range.
    pub fn range(self) -> (f64, f64) {
        match self {
            ParamKind::PierHeight => (8.0, 30.0),
            ParamKind::GirderDepth => (2.0, 4.5),
            ParamKind::VPierHalfAngle => (15.0, 40.0),
            ParamKind::ArchRiseRatio => (1.0 / 6.0, 1.0 / 3.0),
            ParamKind::CrownClearance => (1.5, 6.0),
            ParamKind::SpandrelColumns => (5.0, 9.0),
            ParamKind::TowerHeight => (25.0, 55.0),
            ParamKind::CablePairs => (4.0, 8.0),
            ParamKind::Hangers => (9.0, 15.0),
            ParamKind::SlingInclination => (50.0, 80.0),
        }
    }

    pub fn is_count(self) -> bool {
        matches!(
            self,
            ParamKind::SpandrelColumns | ParamKind::CablePairs | ParamKind::Hangers
        )
    }

    pub fn unit(self) -> &'static str {
        match self {
            ParamKind::PierHeight
            | ParamKind::GirderDepth
            | ParamKind::CrownClearance
            | ParamKind::TowerHeight => "m",
            ParamKind::VPierHalfAngle | ParamKind::SlingInclination => "deg",
            ParamKind::ArchRiseRatio => "ratio",
            ParamKind::SpandrelColumns | ParamKind::CablePairs | ParamKind::Hangers => "count",
        }
    }

    fn contains(self, value: f64) -> bool {
        let (lo, hi) = self.range();
        value.is_finite()
            && value >= lo
            && value <= hi
            && (!self.is_count() || value.fract() == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberParam {
    pub kind: ParamKind,
    pub value: f64,
}

/// Parametric description of one facade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSpec {
    pub subtype: BridgeSubtype,
    /// Side, main, side span in meters.
    pub spans: [f64; 3],
    /// Deck centerline above the ground line, meters.
    pub deck_elevation: f64,
    pub member_params: Vec<MemberParam>,
    pub seed: u64,
}

impl BridgeSpec {
    /// Builds a spec from explicit parameter values given in
    /// [`BridgeSubtype::param_kinds`] order.
    pub fn new(subtype: BridgeSubtype, values: &[f64], seed: u64) -> Result<Self, GeometryError> {
        let kinds = subtype.param_kinds();
        if values.len() != kinds.len() {
            return Err(GeometryError::InvalidSpec(format!(
                "{subtype} takes {} parameters, got {}",
                kinds.len(),
                values.len()
            )));
        }
        let member_params = kinds
            .iter()
            .zip(values)
            .map(|(&kind, &value)| MemberParam { kind, value })
            .collect();
        let mut spec = BridgeSpec {
            subtype,
            spans: subtype.spans(),
            deck_elevation: 0.0,
            member_params,
            seed,
        };
        spec.deck_elevation = spec.derived_deck_elevation();
        spec.validate()?;
        Ok(spec)
    }

    pub fn param(&self, kind: ParamKind) -> Option<f64> {
        self.member_params
            .iter()
            .find(|p| p.kind == kind)
            .map(|p| p.value)
    }

    pub(crate) fn get(&self, kind: ParamKind) -> f64 {
        self.param(kind)
            .unwrap_or_else(|| panic!("{} spec lacks {kind:?}", self.subtype))
    }

    pub(crate) fn count(&self, kind: ParamKind) -> usize {
        self.get(kind) as usize
    }

    pub fn arch_rise(&self) -> Option<f64> {
        self.param(ParamKind::ArchRiseRatio)
            .map(|r| r * self.spans[1])
    }

    /// Span boundaries along the bridge: abutment, pier, pier, abutment.
    pub fn support_stations(&self) -> [f64; 4] {
        let [a, b, c] = self.spans;
        [0.0, a, a + b, a + b + c]
    }

    fn derived_deck_elevation(&self) -> f64 {
        match self.subtype {
            BridgeSubtype::EqualSectionBeam => {
                self.get(ParamKind::PierHeight) + 0.5 * self.get(ParamKind::GirderDepth)
            }
            BridgeSubtype::TopBearingArch => {
                self.arch_rise().unwrap_or(0.0) + self.get(ParamKind::CrownClearance)
            }
            _ => self.get(ParamKind::PierHeight),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let expect = self.subtype.spans();
        if self.spans != expect {
            return Err(GeometryError::InvalidSpec(format!(
                "{} spans must be {expect:?}, got {:?}",
                self.subtype, self.spans
            )));
        }
        let kinds = self.subtype.param_kinds();
        if self.member_params.len() != kinds.len()
            || self
                .member_params
                .iter()
                .zip(kinds)
                .any(|(p, &k)| p.kind != k)
        {
            return Err(GeometryError::InvalidSpec(format!(
                "{} requires parameters {kinds:?}",
                self.subtype
            )));
        }
        for p in &self.member_params {
            if !p.kind.contains(p.value) {
                let (lo, hi) = p.kind.range();
                return Err(GeometryError::InvalidSpec(format!(
                    "{:?} = {} outside [{lo}, {hi}]",
                    p.kind, p.value
                )));
            }
        }
        let deck = self.derived_deck_elevation();
        if (deck - self.deck_elevation).abs() > 1e-9 {
            return Err(GeometryError::InvalidSpec(format!(
                "deck elevation {} inconsistent with members ({deck})",
                self.deck_elevation
            )));
        }
        Ok(())
    }
}

/// Draws a spec for `subtype` from `seed`. The same inputs always yield the
/// same spec.
pub fn sample_spec(subtype: BridgeSubtype, seed: u64) -> BridgeSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = subtype
        .param_kinds()
        .iter()
        .map(|kind| {
            let (lo, hi) = kind.range();
            if kind.is_count() {
                rng.random_range(lo as u32..=hi as u32) as f64
            } else {
                rng.random_range(lo..=hi)
            }
        })
        .collect();
    BridgeSpec::new(subtype, &values, seed).expect("sampled parameters lie inside their ranges")
}
