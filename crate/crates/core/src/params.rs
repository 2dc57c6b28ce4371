//! Latent parameter containers for each response model.
//!
//! Category and slot indices inside these containers are 0-based; the data
//! files and imputed responses use 1-based categories.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which response model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sprite,
    Ord,
    Lord,
    Nrm,
    Gpcm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Sprite,
        ModelKind::Ord,
        ModelKind::Lord,
        ModelKind::Nrm,
        ModelKind::Gpcm,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Sprite => "sprite",
            ModelKind::Ord => "ord",
            ModelKind::Lord => "lord",
            ModelKind::Nrm => "nrm",
            ModelKind::Gpcm => "gpcm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown model tag `{s}`; valid tags are sprite, ord, lord, nrm, gpcm"
                ))
            })
    }
}

/// SPRITE parameters: one Gaussian "sprite" per category of each question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpriteParams {
    pub latent_traits: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// 0-based category whose sprite is pinned to mean 0, variance 1.
    pub anchors: Vec<usize>,
}

impl SpriteParams {
    /// Build and validate. The anchor sprite of each question is rewritten to
    /// (0, 1) whatever the input holds there.
    pub fn new(
        latent_traits: Vec<f64>,
        mut means: Vec<Vec<f64>>,
        mut variances: Vec<Vec<f64>>,
        anchors: Vec<usize>,
    ) -> Result<Self> {
        if means.len() != variances.len() || means.len() != anchors.len() {
            return Err(Error::DimensionMismatch(format!(
                "means ({}), variances ({}) and anchors ({}) must cover the same questions",
                means.len(),
                variances.len(),
                anchors.len()
            )));
        }
        if latent_traits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFiniteInput("latent trait"));
        }
        for (j, ((mu, nu), &a)) in means.iter_mut().zip(variances.iter_mut()).zip(&anchors).enumerate() {
            if mu.len() != nu.len() || mu.len() < 2 {
                return Err(Error::DimensionMismatch(format!(
                    "question {}: {} means vs {} variances (need >= 2 categories)",
                    j + 1,
                    mu.len(),
                    nu.len()
                )));
            }
            if a >= mu.len() {
                return Err(Error::InvalidParameter(format!(
                    "question {}: anchor index {a} out of range",
                    j + 1
                )));
            }
            mu[a] = 0.0;
            nu[a] = 1.0;
            if mu.iter().any(|m| !m.is_finite()) {
                return Err(Error::NonFiniteInput("sprite mean"));
            }
            if nu.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "question {}: sprite variances must be finite and positive",
                    j + 1
                )));
            }
        }
        Ok(SpriteParams {
            latent_traits,
            means,
            variances,
            anchors,
        })
    }

    pub fn n_respondents(&self) -> usize {
        self.latent_traits.len()
    }

    pub fn n_questions(&self) -> usize {
        self.means.len()
    }

    /// Mirror image `Z -> -Z`, `mu -> -mu`. Leaves every choice probability
    /// unchanged, so data cannot tell the two orientations apart.
    pub fn reflected(&self) -> SpriteParams {
        let neg = |v: &Vec<f64>| v.iter().map(|x| -x).collect::<Vec<_>>();
        SpriteParams {
            latent_traits: neg(&self.latent_traits),
            means: self
                .means
                .iter()
                .map(|m| m.iter().map(|x| if *x == 0.0 { 0.0 } else { -x }).collect())
                .collect(),
            variances: self.variances.clone(),
            anchors: self.anchors.clone(),
        }
    }
}

/// Ordinal-probit parameters, shared by ORD and LORD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdParams {
    pub latent_traits: Vec<f64>,
    pub difficulties: Vec<f64>,
    /// Interior edges per question, `M_j - 1` of them, first pinned at 0.
    pub bins: Vec<Vec<f64>>,
    /// `permutations[j][label] = slot`, both 0-based.
    pub permutations: Vec<Vec<usize>>,
}

impl OrdParams {
    pub fn new(
        latent_traits: Vec<f64>,
        difficulties: Vec<f64>,
        bins: Vec<Vec<f64>>,
        permutations: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let q = difficulties.len();
        if bins.len() != q || permutations.len() != q {
            return Err(Error::DimensionMismatch(
                "difficulties, bins and permutations must cover the same questions".into(),
            ));
        }
        if latent_traits.iter().chain(&difficulties).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("ORD trait or difficulty"));
        }
        for (b, p) in bins.iter().zip(&permutations) {
            check_bins(b)?;
            if p.len() != b.len() + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "permutation has {} labels but bins imply {} categories",
                    p.len(),
                    b.len() + 1
                )));
            }
            check_permutation(p)?;
        }
        Ok(OrdParams {
            latent_traits,
            difficulties,
            bins,
            permutations,
        })
    }

    pub fn n_respondents(&self) -> usize {
        self.latent_traits.len()
    }

    pub fn n_questions(&self) -> usize {
        self.difficulties.len()
    }
}

/// Interior edges must be finite, non-empty, start at 0 and strictly increase.
pub fn check_bins(bins: &[f64]) -> Result<()> {
    if bins.is_empty() || bins.iter().any(|b| !b.is_finite()) {
        return Err(Error::UnorderedBins);
    }
    if bins[0] != 0.0 {
        return Err(Error::InvalidParameter(
            "the first interior bin edge is pinned at 0".into(),
        ));
    }
    if bins.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnorderedBins);
    }
    Ok(())
}

pub fn check_permutation(perm: &[usize]) -> Result<()> {
    let m = perm.len();
    let mut seen = vec![false; m];
    for &p in perm {
        if p >= m || seen[p] {
            return Err(Error::NotABijection(m));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Nominal response model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NrmParams {
    pub latent_traits: Vec<f64>,
    pub discriminations: Vec<Vec<f64>>,
    pub difficulties: Vec<Vec<f64>>,
}

impl NrmParams {
    pub fn new(
        latent_traits: Vec<f64>,
        discriminations: Vec<Vec<f64>>,
        difficulties: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if discriminations.len() != difficulties.len()
            || discriminations.iter().zip(&difficulties).any(|(b, a)| b.len() != a.len())
        {
            return Err(Error::DimensionMismatch(
                "NRM discriminations and difficulties must have matching shapes".into(),
            ));
        }
        let all = latent_traits
            .iter()
            .chain(discriminations.iter().flatten())
            .chain(difficulties.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("NRM parameter"));
        }
        Ok(NrmParams {
            latent_traits,
            discriminations,
            difficulties,
        })
    }
}

/// Generalized partial credit model parameters.
///
/// The first threshold of each question enters every category's cumulative
/// sum and cancels in normalisation, so it is carried but not identified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpcmParams {
    pub latent_traits: Vec<f64>,
    pub discrimination: Vec<f64>,
    pub thresholds: Vec<Vec<f64>>,
}

impl GpcmParams {
    pub fn new(
        latent_traits: Vec<f64>,
        discrimination: Vec<f64>,
        thresholds: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if discrimination.len() != thresholds.len() {
            return Err(Error::DimensionMismatch(
                "GPCM discrimination and thresholds must cover the same questions".into(),
            ));
        }
        let all = latent_traits
            .iter()
            .chain(&discrimination)
            .chain(thresholds.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("GPCM parameter"));
        }
        Ok(GpcmParams {
            latent_traits,
            discrimination,
            thresholds,
        })
    }
}

/// Parameters of any supported model, tagged by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelParams {
    Sprite(SpriteParams),
    Ord(OrdParams),
    Lord(OrdParams),
    Nrm(NrmParams),
    Gpcm(GpcmParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Sprite(_) => ModelKind::Sprite,
            ModelParams::Ord(_) => ModelKind::Ord,
            ModelParams::Lord(_) => ModelKind::Lord,
            ModelParams::Nrm(_) => ModelKind::Nrm,
            ModelParams::Gpcm(_) => ModelKind::Gpcm,
        }
    }

    pub fn latent_traits(&self) -> &[f64] {
        match self {
            ModelParams::Sprite(p) => &p.latent_traits,
            ModelParams::Ord(p) | ModelParams::Lord(p) => &p.latent_traits,
            ModelParams::Nrm(p) => &p.latent_traits,
            ModelParams::Gpcm(p) => &p.latent_traits,
        }
    }

    /// Category count per question implied by the parameter shapes.
    pub fn categories(&self) -> Vec<usize> {
        match self {
            ModelParams::Sprite(p) => p.means.iter().map(Vec::len).collect(),
            ModelParams::Ord(p) | ModelParams::Lord(p) => {
                p.bins.iter().map(|b| b.len() + 1).collect()
            }
            ModelParams::Nrm(p) => p.discriminations.iter().map(Vec::len).collect(),
            ModelParams::Gpcm(p) => p.thresholds.iter().map(Vec::len).collect(),
        }
    }
}
