use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::ModelError;

/// Which contrast modules are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// Candidate rows are not centred on the context-row centroid.
    NoRuleContrast,
    /// Candidate rows are not compared with each other.
    NoChoiceContrast,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoRuleContrast, Ablation::NoChoiceContrast];
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoRuleContrast => "no_rule_contrast",
            Ablation::NoChoiceContrast => "no_choice_contrast",
        })
    }
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_rule_contrast" => Ok(Ablation::NoRuleContrast),
            "no_choice_contrast" => Ok(Ablation::NoChoiceContrast),
            other => Err(format!("unknown ablation {other:?} (full, no_rule_contrast, no_choice_contrast)")),
        }
    }
}

/// Encoder widths: stem convolution, then residual block output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelPlan {
    pub stem: usize,
    pub out: usize,
}

impl ChannelPlan {
    /// 64 -> 128, giving 128-channel feature maps and a 512-wide head input.
    pub const STANDARD: ChannelPlan = ChannelPlan { stem: 64, out: 128 };
}

impl fmt::Display for ChannelPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.stem, self.out)
    }
}

impl FromStr for ChannelPlan {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("channel plan {s:?} must be `stem,out`"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad channel count {v:?}"));
        Ok(ChannelPlan { stem: parse(a)?, out: parse(b)? })
    }
}

/// Side of the pooled grid feeding the scoring MLP.
pub const POOLED: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct DcnetConfig {
    pub image_size: usize,
    pub channels: ChannelPlan,
    pub hidden: usize,
    pub dropout_p: f64,
    pub ablation: Ablation,
    /// Initial weights are drawn from this seed.
    pub seed: u64,
    /// Test hook: replaces the choice-contrast adapter with the identity.
    pub identity_phi: bool,
    /// Start the final layer at zero so every score is 0.
    pub zero_head: bool,
}

impl Default for DcnetConfig {
    fn default() -> Self {
        Self {
            image_size: 96,
            channels: ChannelPlan::STANDARD,
            hidden: 256,
            dropout_p: 0.5,
            ablation: Ablation::Full,
            seed: 0,
            identity_phi: false,
            zero_head: false,
        }
    }
}

impl DcnetConfig {
    /// Small configuration for CPU-scale experiments on 32x32 panels.
    pub fn desk() -> Self {
        Self { image_size: 32, channels: ChannelPlan { stem: 16, out: 32 }, hidden: 64, dropout_p: 0.0, ..Self::default() }
    }

    pub fn feature_side(&self) -> usize {
        self.image_size / 4
    }

    pub fn mlp_input_dim(&self) -> usize {
        self.channels.out * POOLED * POOLED
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.image_size % 4 != 0 || self.image_size < 4 * POOLED {
            return Err(ModelError::Config(format!(
                "image size {} must be a multiple of 4 and at least {}",
                self.image_size,
                4 * POOLED
            )));
        }
        if self.channels.stem == 0 || self.channels.out == 0 || self.hidden == 0 {
            return Err(ModelError::Config("channel and hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::Config(format!("dropout {} not in [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    /// Flat `key=value` lines, one per field that affects the network.
    pub fn to_kv(&self) -> String {
        format!(
            "image_size={}\nchannels={}\nhidden={}\ndropout_p={}\nablation={}\nseed={}\n",
            self.image_size, self.channels, self.hidden, self.dropout_p, self.ablation, self.seed
        )
    }

    pub fn from_kv(text: &str) -> Result<Self, ModelError> {
        let map = parse_kv(text).map_err(ModelError::Config)?;
        let mut cfg = DcnetConfig::default();
        for (k, v) in &map {
            let bad = |e: String| ModelError::Config(format!("{k}: {e}"));
            match k.as_str() {
                "image_size" => cfg.image_size = v.parse().map_err(|_| bad(format!("not an integer: {v}")))?,
                "channels" => cfg.channels = v.parse().map_err(bad)?,
                "hidden" => cfg.hidden = v.parse().map_err(|_| bad(format!("not an integer: {v}")))?,
                "dropout_p" => cfg.dropout_p = v.parse().map_err(|_| bad(format!("not a number: {v}")))?,
                "ablation" => cfg.ablation = v.parse().map_err(bad)?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad(format!("not an integer: {v}")))?,
                other => return Err(ModelError::Config(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key {}", n + 1, k.trim()));
        }
    }
    Ok(map)
}
