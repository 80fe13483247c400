use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::predictor::DynamicsPredictor;
use super::DynamicsError;
use crate::demo_store::{Demonstration, Observation, RgbImage};

pub const POOL_GRID: usize = 8;
pub const D_VIS: usize = POOL_GRID * POOL_GRID * 3;
pub const D_LANG: usize = 256;

/// Mean-pools an RGB image onto an 8x8 grid, channels last, scaled to [0, 1].
pub fn baseline_vis_feature(obs: &Observation) -> Vec<f32> {
    pool_image(&obs.rgb)
}

fn cell_range(cell: usize, size: usize) -> (usize, usize) {
    let start = cell * size / POOL_GRID;
    let end = ((cell + 1) * size / POOL_GRID).max(start + 1).min(size);
    (start.min(size - 1), end)
}

pub fn pool_image(img: &RgbImage) -> Vec<f32> {
    let (w, h) = (img.width as usize, img.height as usize);
    let mut out = Vec::with_capacity(D_VIS);
    if w == 0 || h == 0 {
        out.resize(D_VIS, 0.0);
        return out;
    }
    for cy in 0..POOL_GRID {
        let (y0, y1) = cell_range(cy, h);
        for cx in 0..POOL_GRID {
            let (x0, x1) = cell_range(cx, w);
            let mut sum = [0u64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = img.pixel(x as u32, y as u32);
                    for c in 0..3 {
                        sum[c] += u64::from(px[c]);
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64 * 255.0;
            out.extend(sum.iter().map(|&s| (s as f64 / n) as f32));
        }
    }
    out
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Hashed bag of lowercase unigrams and bigrams, L2-normalized.
pub fn lang_feature(text: &str) -> Vec<f32> {
    let toks = tokens(text);
    let mut counts = vec![0.0f64; D_LANG];
    let mut bump = |gram: &str| {
        counts[(fnv1a(gram.as_bytes()) % D_LANG as u64) as usize] += 1.0;
    };
    for t in &toks {
        bump(t);
    }
    for pair in toks.windows(2) {
        bump(&format!("{} {}", pair[0], pair[1]));
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; D_LANG];
    }
    counts.iter().map(|c| (c / norm) as f32).collect()
}

/// Which components of the dynamics feature are concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum FeatureMode {
    #[serde(rename = "vis_out")]
    VisOut,
    #[serde(rename = "vis_in")]
    VisIn,
    #[serde(rename = "lang")]
    Lang,
    #[default]
    #[serde(rename = "vis_out+lang")]
    VisOutLang,
    #[serde(rename = "vis_in+lang")]
    VisInLang,
    #[serde(rename = "vis_in+vis_out")]
    VisInVisOut,
    #[serde(rename = "all")]
    All,
}

impl FeatureMode {
    pub const ALL_MODES: [FeatureMode; 7] = [
        FeatureMode::VisOut,
        FeatureMode::VisIn,
        FeatureMode::Lang,
        FeatureMode::VisOutLang,
        FeatureMode::VisInLang,
        FeatureMode::VisInVisOut,
        FeatureMode::All,
    ];

    pub fn uses_vis_in(self) -> bool {
        matches!(self, Self::VisIn | Self::VisInLang | Self::VisInVisOut | Self::All)
    }

    pub fn uses_vis_out(self) -> bool {
        matches!(self, Self::VisOut | Self::VisOutLang | Self::VisInVisOut | Self::All)
    }

    pub fn uses_lang(self) -> bool {
        matches!(self, Self::Lang | Self::VisOutLang | Self::VisInLang | Self::All)
    }

    pub fn vis_parts(self) -> usize {
        usize::from(self.uses_vis_in()) + usize::from(self.uses_vis_out())
    }

    pub fn tag(self) -> u8 {
        Self::ALL_MODES.iter().position(|m| *m == self).unwrap() as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL_MODES.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::VisOut => "vis_out",
            Self::VisIn => "vis_in",
            Self::Lang => "lang",
            Self::VisOutLang => "vis_out+lang",
            Self::VisInLang => "vis_in+lang",
            Self::VisInVisOut => "vis_in+vis_out",
            Self::All => "all",
        }
    }

    /// Total dimension for base visual/language dimensions.
    pub fn dimension(self, d_vis: usize, d_lang: usize) -> usize {
        self.vis_parts() * d_vis + if self.uses_lang() { d_lang } else { 0 }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMode {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_lowercase().replace(' ', "");
        // accept either order of the two parts
        Self::ALL_MODES
            .iter()
            .copied()
            .find(|m| {
                let name = m.name();
                name == normalized
                    || name
                        .split_once('+')
                        .is_some_and(|(a, b)| format!("{b}+{a}") == normalized)
            })
            .ok_or_else(|| DynamicsError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsFeature {
    pub demo_id: String,
    pub vis: Vec<f32>,
    pub lang: Vec<f32>,
}

impl DynamicsFeature {
    pub fn dimension(&self) -> usize {
        self.vis.len() + self.lang.len()
    }

    pub fn components(&self) -> impl Iterator<Item = f32> + '_ {
        self.vis.iter().chain(&self.lang).copied()
    }

    pub fn scaled(&self, factor: f32) -> Self {
        DynamicsFeature {
            demo_id: self.demo_id.clone(),
            vis: self.vis.iter().map(|v| v * factor).collect(),
            lang: self.lang.iter().map(|v| v * factor).collect(),
        }
    }
}

/// What a dynamics feature is computed from: the initial frame and the instruction.
#[derive(Debug, Clone, Copy)]
pub struct FeatureInput<'a> {
    pub id: &'a str,
    pub initial: &'a Observation,
    pub language: &'a str,
}

impl<'a> From<&'a Demonstration> for FeatureInput<'a> {
    fn from(d: &'a Demonstration) -> Self {
        FeatureInput {
            id: &d.id,
            initial: d.initial_observation(),
            language: &d.language,
        }
    }
}

pub fn dynamics_feature(
    input: FeatureInput,
    predictor: Option<&DynamicsPredictor>,
    mode: FeatureMode,
) -> Result<DynamicsFeature, DynamicsError> {
    let vis_in = baseline_vis_feature(input.initial);
    let lang = lang_feature(input.language);
    let mut vis = Vec::with_capacity(mode.vis_parts() * D_VIS);
    if mode.uses_vis_in() {
        vis.extend_from_slice(&vis_in);
    }
    if mode.uses_vis_out() {
        let predictor = predictor.ok_or(DynamicsError::PredictorRequired(mode))?;
        vis.extend(predictor.predict(&vis_in, &lang)?);
    }
    Ok(DynamicsFeature {
        demo_id: input.id.to_string(),
        vis,
        lang: if mode.uses_lang() { lang } else { Vec::new() },
    })
}

/// A homogeneous set of features: one mode, one pair of base dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub mode: FeatureMode,
    pub d_vis: usize,
    pub d_lang: usize,
    /// Free-form provenance, e.g. `predicted:mlp` or an external model name.
    pub source: String,
    pub features: Vec<DynamicsFeature>,
}

impl FeatureTable {
    pub fn new(mode: FeatureMode, d_vis: usize, d_lang: usize, source: impl Into<String>) -> Self {
        FeatureTable {
            mode,
            d_vis,
            d_lang,
            source: source.into(),
            features: Vec::new(),
        }
    }

    pub fn vis_len(&self) -> usize {
        self.mode.vis_parts() * self.d_vis
    }

    pub fn lang_len(&self) -> usize {
        if self.mode.uses_lang() {
            self.d_lang
        } else {
            0
        }
    }

    pub fn push(&mut self, f: DynamicsFeature) -> Result<(), DynamicsError> {
        if f.vis.len() != self.vis_len() || f.lang.len() != self.lang_len() {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.vis_len() + self.lang_len(),
                found: f.dimension(),
            });
        }
        if f.components().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite(f.demo_id));
        }
        self.features.push(f);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

pub const OBSERVED_SOURCE: &str = "observed";

/// Training-side features: the `vis_out` slot holds the observed final frame
/// instead of a prediction. Mode is always `all`.
pub fn observed_features(demos: &[Demonstration]) -> Result<FeatureTable, DynamicsError> {
    use rayon::prelude::*;
    let features: Vec<DynamicsFeature> = demos
        .par_iter()
        .map(|d| {
            let mut vis = baseline_vis_feature(d.initial_observation());
            vis.extend(baseline_vis_feature(d.final_observation()));
            DynamicsFeature {
                demo_id: d.id.clone(),
                vis,
                lang: lang_feature(&d.language),
            }
        })
        .collect();
    let mut table = FeatureTable::new(FeatureMode::All, D_VIS, D_LANG, OBSERVED_SOURCE);
    for f in features {
        table.push(f)?;
    }
    Ok(table)
}

/// Embeds every demonstration of a dataset (in dataset order).
pub fn embed_dataset(
    demos: &[Demonstration],
    predictor: Option<&DynamicsPredictor>,
    mode: FeatureMode,
) -> Result<FeatureTable, DynamicsError> {
    use rayon::prelude::*;
    let features: Vec<DynamicsFeature> = demos
        .par_iter()
        .map(|d| dynamics_feature(d.into(), predictor, mode))
        .collect::<Result<_, _>>()?;
    let source = if mode.uses_vis_out() {
        "predicted:mlp"
    } else {
        "baseline"
    };
    let mut table = FeatureTable::new(mode, D_VIS, D_LANG, source);
    for f in features {
        table.push(f)?;
    }
    Ok(table)
}
