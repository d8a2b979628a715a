//! World selection shared by several subcommands.

use std::fmt;
use std::str::FromStr;

use clap::Args;
use graphmimic::worlds::{Family, Preference, WorldSpec};

use crate::config::Settings;
use crate::error::{HubError, HubResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorldName {
    KBlock,
    Pyramid,
    MultiStack,
    Rearrange,
    Pack,
    Unpack,
    Dishwasher,
}

impl WorldName {
    pub const ALL: [WorldName; 7] = [
        WorldName::KBlock,
        WorldName::Pyramid,
        WorldName::MultiStack,
        WorldName::Rearrange,
        WorldName::Pack,
        WorldName::Unpack,
        WorldName::Dishwasher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorldName::KBlock => "kblock",
            WorldName::Pyramid => "pyramid",
            WorldName::MultiStack => "multi-stack",
            WorldName::Rearrange => "rearrange",
            WorldName::Pack => "pack",
            WorldName::Unpack => "unpack",
            WorldName::Dishwasher => "dishwasher",
        }
    }
}

impl fmt::Display for WorldName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorldName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let names: Vec<&str> = Self::ALL.iter().map(|w| w.name()).collect();
        Self::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| format!("unknown world {s:?} (expected one of {})", names.join(", ")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreferenceArg(pub Preference);

impl FromStr for PreferenceArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "top-bottom" => Ok(Self(Preference::TopBottom)),
            "left-right" => Ok(Self(Preference::LeftRight)),
            _ => Err(format!("unknown preference {s:?} (expected top-bottom or left-right)")),
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct WorldArgs {
    /// kblock, pyramid, multi-stack, rearrange, pack, unpack or dishwasher.
    #[arg(long)]
    pub world: Option<WorldName>,
    /// Blocks per stack, or dishes for the dishwasher.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of stacks in multi-stack worlds.
    #[arg(long)]
    pub stacks: Option<usize>,
    /// Dishwasher loading preference: top-bottom or left-right.
    #[arg(long)]
    pub preference: Option<PreferenceArg>,
    #[arg(long)]
    pub failure_rate: Option<f32>,
}

impl WorldArgs {
    pub fn is_set(&self, settings: &Settings) -> bool {
        self.world.is_some() || settings.raw("world").is_some()
    }

    pub fn spec(&self, settings: &Settings, seed: u64) -> HubResult<WorldSpec> {
        let world = settings
            .pick_opt(self.world, "world")?
            .ok_or_else(|| HubError::Usage("a world is required (--world)".into()))?;
        let default_k = if world == WorldName::Dishwasher { 10 } else { 3 };
        let k = settings.pick(self.k, "k", default_k)?;
        let family = match world {
            WorldName::KBlock => Family::KBlock,
            WorldName::Pyramid => Family::KPyramid,
            WorldName::MultiStack => Family::MultiStack { stacks: settings.pick(self.stacks, "stacks", 3)? },
            WorldName::Rearrange => Family::BoxRearrange,
            WorldName::Pack => Family::BoxPack,
            WorldName::Unpack => Family::BoxUnpack,
            WorldName::Dishwasher => Family::Dishwasher {
                preference: settings.pick(self.preference, "preference", PreferenceArg(Preference::TopBottom))?.0,
            },
        };
        let spec = WorldSpec::new(family, k, seed).with_failure_rate(settings.pick(self.failure_rate, "failure-rate", 0.0)?);
        spec.validate()?;
        Ok(spec)
    }
}
