//! Experiment configuration: a TOML document with one section per concern.
//!
//! ```toml
//! model = "leland"            # linear-bs | leland | afv
//!
//! [discretization]
//! degree = 3
//! elements = 256
//! knots = "uniform"           # uniform | refined
//! steps = 80
//!
//! [leland]
//! rate = 0.1
//! leland = 0.8
//! ```
//!
//! Unknown keys and sections are errors; every error carries a line number.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::basis::{load_weights, KnotVector, NurbsBasis};
use crate::calibration::{calibrate_weights, CalibrationConfig};
use crate::error::{Error, Result};
use crate::models::{afv_terminal, AfvParams, ConstraintWindow, Coupon, LelandParams, Model};
use crate::stepper::{CouponAccrual, SchemeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearBs,
    Leland,
    Afv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KnotMode {
    #[default]
    Uniform,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    #[default]
    None,
    File,
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Accrual {
    #[default]
    Cum,
    Ex,
}

impl From<Accrual> for CouponAccrual {
    fn from(a: Accrual) -> Self {
        match a {
            Accrual::Cum => CouponAccrual::CumCoupon,
            Accrual::Ex => CouponAccrual::ExCoupon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationConfig {
    pub degree: usize,
    pub elements: usize,
    pub knots: KnotMode,
    pub cluster_ratio: f64,
    pub kink_multiplicity: usize,
    pub weights: WeightSource,
    pub weights_file: Option<PathBuf>,
    pub steps: usize,
    pub theta: f64,
    pub rannacher: usize,
    pub domain: Option<[f64; 2]>,
    pub quad_order: usize,
    pub accrual: Accrual,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            elements: 128,
            knots: KnotMode::Uniform,
            cluster_ratio: 0.98,
            kink_multiplicity: 3,
            weights: WeightSource::None,
            weights_file: None,
            steps: 1000,
            theta: 0.5,
            rannacher: 2,
            domain: None,
            quad_order: 5,
            accrual: Accrual::Cum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LelandSection {
    pub rate: f64,
    pub sigma: f64,
    pub strike: f64,
    pub maturity: f64,
    pub leland: f64,
}

impl Default for LelandSection {
    fn default() -> Self {
        Self {
            rate: 0.05,
            sigma: 0.2,
            strike: 100.0,
            maturity: 1.0,
            leland: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AfvSection {
    pub rate: f64,
    pub sigma: f64,
    pub hazard: f64,
    pub eta: f64,
    pub recovery: f64,
    pub conversion: f64,
    pub face: f64,
    pub spot: f64,
    pub maturity: f64,
    pub penalty: f64,
    pub tol: f64,
    pub max_newton: usize,
    pub early_conversion: bool,
    /// `(time, amount)` pairs.
    pub coupons: Vec<[f64; 2]>,
    /// `(start, end, clean price)`; an empty array disables the window.
    pub call: Vec<f64>,
    pub put: Vec<f64>,
}

impl Default for AfvSection {
    fn default() -> Self {
        let r = AfvParams::reference();
        let window = |w: Option<ConstraintWindow>| w.map_or(Vec::new(), |w| vec![w.start, w.end, w.clean]);
        Self {
            rate: r.rate,
            sigma: r.sigma,
            hazard: r.hazard,
            eta: r.eta,
            recovery: r.recovery,
            conversion: r.conversion,
            face: r.face,
            spot: r.spot,
            maturity: r.maturity,
            penalty: r.penalty,
            tol: r.tol,
            max_newton: r.max_newton,
            early_conversion: r.early_conversion,
            coupons: r.coupons.iter().map(|c| [c.time, c.amount]).collect(),
            call: window(r.call),
            put: window(r.put),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct LadderSection {
    /// `(elements, steps)` per rung.
    pub rungs: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub probe_s: f64,
    /// Time levels between rows of the surface CSV (0 picks about 100 levels).
    pub surface_stride: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            probe_s: 100.0,
            surface_stride: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub leland: LelandSection,
    #[serde(default)]
    pub afv: AfvSection,
    #[serde(default)]
    pub ladder: LadderSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory of the configuration file, for relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Parsed model parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Leland(LelandParams),
    Afv(AfvParams),
}

impl ModelParams {
    pub fn model(&self) -> Model<'_> {
        match self {
            ModelParams::Leland(p) => Model::Leland(p),
            ModelParams::Afv(p) => Model::Afv(p),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn cfg_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

/// Line on which `key` is assigned, or 1 if it does not appear literally.
fn line_of_key(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            t.starts_with(key) && t[key.len()..].trim_start().starts_with('=')
        })
        .map_or(1, |i| i + 1)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| line_of(text, s.start));
            cfg_err(line, e.message().to_string())
        })?;
        cfg.check(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn check(&self, text: &str) -> Result<()> {
        let d = &self.discretization;
        let at = |key: &str| line_of_key(text, key);
        if d.elements == 0 {
            return Err(cfg_err(at("elements"), "elements must be a positive integer"));
        }
        if d.degree == 0 {
            return Err(cfg_err(at("degree"), "degree must be at least 1"));
        }
        if !(0.0..=1.0).contains(&d.theta) {
            return Err(cfg_err(at("theta"), "theta must lie in [0, 1]"));
        }
        if let Some([a, b]) = d.domain {
            if !(a < b) {
                return Err(cfg_err(at("domain"), "domain must satisfy x_min < x_max"));
            }
        }
        if d.weights == WeightSource::File && d.weights_file.is_none() {
            return Err(cfg_err(at("weights"), "weights = \"file\" needs weights_file"));
        }
        if self.model == ModelKind::LinearBs && self.leland.leland != 0.0 {
            return Err(cfg_err(at("leland"), "linear-bs requires leland = 0"));
        }
        for key in ["call", "put"] {
            let w = if key == "call" { &self.afv.call } else { &self.afv.put };
            if !w.is_empty() && w.len() != 3 {
                return Err(cfg_err(at(key), format!("{key} must be [start, end, clean] or []")));
            }
        }
        if self.ladder.rungs.iter().any(|r| r[0] == 0) {
            return Err(cfg_err(at("rungs"), "ladder rungs need positive element counts"));
        }
        self.params().map_err(|e| cfg_err(1, e.to_string()))?;
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        match self.model {
            ModelKind::LinearBs | ModelKind::Leland => {
                let s = &self.leland;
                Ok(ModelParams::Leland(LelandParams::new(
                    s.rate, s.sigma, s.strike, s.maturity, s.leland,
                )?))
            }
            ModelKind::Afv => {
                let s = &self.afv;
                let window = |w: &[f64]| {
                    (w.len() == 3).then(|| ConstraintWindow {
                        start: w[0],
                        end: w[1],
                        clean: w[2],
                    })
                };
                let p = AfvParams {
                    rate: s.rate,
                    sigma: s.sigma,
                    hazard: s.hazard,
                    eta: s.eta,
                    recovery: s.recovery,
                    conversion: s.conversion,
                    face: s.face,
                    coupons: s
                        .coupons
                        .iter()
                        .map(|c| Coupon {
                            time: c[0],
                            amount: c[1],
                        })
                        .collect(),
                    call: window(&s.call),
                    put: window(&s.put),
                    penalty: s.penalty,
                    tol: s.tol,
                    max_newton: s.max_newton,
                    spot: s.spot,
                    maturity: s.maturity,
                    early_conversion: s.early_conversion,
                };
                p.validate()?;
                Ok(ModelParams::Afv(p))
            }
        }
    }

    /// Physical interval: configured, or the model default.
    pub fn domain(&self, params: &ModelParams) -> (f64, f64) {
        match (self.discretization.domain, params) {
            (Some([a, b]), _) => (a, b),
            (None, ModelParams::Leland(p)) => p.default_domain(),
            (None, ModelParams::Afv(p)) => p.default_domain(),
        }
    }

    pub fn scheme(&self, params: &ModelParams, steps: usize) -> Result<SchemeConfig> {
        let d = &self.discretization;
        SchemeConfig::for_model(params.model(), d.theta, d.rannacher, steps)
    }

    /// Basis for `elements` spans following the knot and weight settings.
    pub fn basis(&self, params: &ModelParams, elements: usize) -> Result<NurbsBasis> {
        let d = &self.discretization;
        let (x_min, x_max) = self.domain(params);
        let kink_x = match params {
            ModelParams::Leland(p) => p.strike.ln(),
            ModelParams::Afv(p) => {
                let (_, redemption, _) = afv_terminal(p.spot, p);
                (redemption / (p.conversion * p.spot)).ln()
            }
        };
        let knots = match d.knots {
            KnotMode::Uniform => KnotVector::uniform(elements, d.degree)?,
            KnotMode::Refined => {
                let kink = (kink_x - x_min) / (x_max - x_min);
                let mult = d.kink_multiplicity.min(d.degree);
                KnotVector::refined(elements, d.degree, kink, d.cluster_ratio, mult)?
            }
        };
        let weights = match d.weights {
            WeightSource::None => return Ok(NurbsBasis::unweighted(knots)),
            WeightSource::File => {
                let path = d.weights_file.as_ref().expect("checked at parse time");
                load_weights(&self.base_dir.join(path), knots.n_basis())?
            }
            WeightSource::Calibrated => {
                let payoff = |x: f64| match params {
                    ModelParams::Leland(p) => p.initial(x),
                    ModelParams::Afv(p) => afv_terminal(p.s_of(x), p).0,
                };
                calibrate_weights(&knots, x_min, x_max, payoff, &CalibrationConfig::default())?.weights
            }
        };
        NurbsBasis::new(knots, weights)
    }
}
