use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::scenegraph::{BLOCK_FEATURES, DISH_FEATURES};

pub const ORIENTATIONS: usize = 6;
pub const TRAY_OPS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Gcn,
    Sage,
    Gated,
    Attention,
    Mlp,
}

impl Architecture {
    pub const GNNS: [Architecture; 4] = [Architecture::Gcn, Architecture::Sage, Architecture::Gated, Architecture::Attention];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Gcn => "gcn",
            Architecture::Sage => "sage",
            Architecture::Gated => "gated",
            Architecture::Attention => "attention",
            Architecture::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Architecture::Gcn),
            "sage" => Ok(Architecture::Sage),
            "gated" => Ok(Architecture::Gated),
            "attention" | "gat" => Ok(Architecture::Attention),
            "mlp" => Ok(Architecture::Mlp),
            other => Err(Error::Spec(format!("unknown architecture {:?}", other))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub architecture: Architecture,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub attention_heads: usize,
    pub feature_width: usize,
    pub orientation_head: bool,
    pub tray_head: bool,
    /// Fixed object and goal counts; only used by the MLP.
    #[serde(default)]
    pub mlp_objects: usize,
    #[serde(default)]
    pub mlp_goals: usize,
}

impl GnnConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            hidden_layers: 3,
            hidden_width: 64,
            attention_heads: 1,
            feature_width: BLOCK_FEATURES,
            orientation_head: false,
            tray_head: false,
            mlp_objects: 0,
            mlp_goals: 0,
        }
    }

    /// Wider features plus orientation and tray heads.
    pub fn dishwasher(architecture: Architecture) -> Self {
        Self { feature_width: DISH_FEATURES, orientation_head: true, tray_head: true, ..Self::new(architecture) }
    }

    pub fn mlp(objects: usize, goals: usize, feature_width: usize) -> Self {
        Self { mlp_objects: objects, mlp_goals: goals, feature_width, ..Self::new(Architecture::Mlp) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 || self.feature_width == 0 {
            return Err(Error::Contract("layer count and widths must be positive".into()));
        }
        if self.attention_heads != 1 {
            return Err(Error::Contract("only single-head attention is supported".into()));
        }
        if self.architecture == Architecture::Gated && self.feature_width > self.hidden_width {
            return Err(Error::Dimension(format!(
                "gated layers pad features to the hidden width; {} > {}",
                self.feature_width, self.hidden_width
            )));
        }
        if self.architecture == Architecture::Mlp && (self.mlp_objects == 0 || self.mlp_goals == 0) {
            return Err(Error::Contract("MLP needs fixed object and goal counts".into()));
        }
        Ok(())
    }
}

/// Trainable weights of one policy plus the configuration they were built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub config: GnnConfig,
    pub params: ParamSet,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-bound..=bound));
    t
}

impl PolicyParams {
    /// Fresh weights drawn uniformly in `±1/sqrt(fan_in)`; biases start at zero.
    pub fn init(config: GnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let w = config.hidden_width;
        fn linear(p: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize) {
            p.push(format!("{name}.w"), uniform(rng, &[i, o], i));
            p.push(format!("{name}.b"), Tensor::zeros(&[o]));
        }
        for l in 0..config.hidden_layers {
            let din = if l == 0 {
                match config.architecture {
                    Architecture::Mlp => (config.mlp_objects + config.mlp_goals) * config.feature_width,
                    Architecture::Gated => w,
                    _ => config.feature_width,
                }
            } else {
                w
            };
            let pre = format!("l{l}");
            match config.architecture {
                Architecture::Mlp => linear(&mut p, &mut rng, &pre, din, w),
                Architecture::Gcn | Architecture::Sage | Architecture::Attention => {
                    p.push(format!("{pre}.theta1"), uniform(&mut rng, &[din, w], din));
                    p.push(format!("{pre}.bias"), Tensor::zeros(&[w]));
                    p.push(format!("{pre}.theta2"), uniform(&mut rng, &[din, w], din));
                    if config.architecture == Architecture::Attention {
                        p.push(format!("{pre}.a_src"), uniform(&mut rng, &[w, 1], w));
                        p.push(format!("{pre}.a_dst"), uniform(&mut rng, &[w, 1], w));
                    }
                }
                Architecture::Gated => {
                    p.push(format!("{pre}.theta1"), uniform(&mut rng, &[w, w], w));
                    for g in ["z", "r", "n"] {
                        p.push(format!("{pre}.w_{g}"), uniform(&mut rng, &[w, w], w));
                        p.push(format!("{pre}.u_{g}"), uniform(&mut rng, &[w, w], w));
                        p.push(format!("{pre}.b_{g}"), Tensor::zeros(&[w]));
                    }
                }
            }
        }
        if config.architecture == Architecture::Mlp {
            linear(&mut p, &mut rng, "head.object", w, config.mlp_objects);
            linear(&mut p, &mut rng, "head.goal", w, config.mlp_goals);
        } else {
            linear(&mut p, &mut rng, "head.object", w, 1);
            linear(&mut p, &mut rng, "head.goal", w, 1);
        }
        if config.orientation_head {
            linear(&mut p, &mut rng, "head.orientation", w, ORIENTATIONS);
        }
        if config.tray_head {
            linear(&mut p, &mut rng, "head.tray", w, TRAY_OPS);
        }
        linear(&mut p, &mut rng, "head.value", w, 1);
        Ok(Self { config, params: p })
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn num_weights(&self) -> usize {
        self.params.values().iter().map(Tensor::len).sum()
    }

    /// Zeroes every output head, which makes all action distributions uniform.
    pub fn zero_heads(&mut self) {
        for i in 0..self.params.len() {
            if self.params.names()[i].starts_with("head.") {
                self.params.get_mut(i).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.params.index_of(name).map(|i| self.params.get(i))
    }

    /// Checks tensor shapes against a freshly built parameter set for the same config.
    pub fn check_shapes(&self) -> Result<()> {
        let reference = Self::init(self.config.clone(), 0)?;
        if reference.params.names() != self.params.names() {
            return Err(Error::Format("parameter names do not match the configuration".into()));
        }
        for ((name, a), b) in reference.params.iter().zip(self.params.values()) {
            if a.shape() != b.shape() {
                return Err(Error::Format(format!("parameter {} has shape {:?}, expected {:?}", name, b.shape(), a.shape())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let a = PolicyParams::init(GnnConfig::new(Architecture::Sage), 3).unwrap();
        let b = PolicyParams::init(GnnConfig::new(Architecture::Sage), 3).unwrap();
        let c = PolicyParams::init(GnnConfig::new(Architecture::Sage), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.check_shapes().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = GnnConfig::new(Architecture::Gcn);
        c.hidden_layers = 0;
        assert!(PolicyParams::init(c, 0).is_err());
        let mut c = GnnConfig::new(Architecture::Gated);
        c.hidden_width = 4;
        assert!(matches!(PolicyParams::init(c, 0), Err(Error::Dimension(_))));
        assert!(PolicyParams::init(GnnConfig::new(Architecture::Mlp), 0).is_err());
    }

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::GNNS.iter().chain([Architecture::Mlp].iter()) {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), *a);
        }
        assert!("transformer".parse::<Architecture>().is_err());
    }
}
