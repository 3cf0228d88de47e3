use std::fs::File;
use std::path::{Path, PathBuf};

use microreg::distortion::DistortionField;
use microreg::imaging::SgbmParams;
use microreg::io::read_json;
use microreg::labeling::LabelPalette;
use microreg::projection::CalibrationParams;
use microreg::registration::{RegistrationParams, Variant};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// On-disk pipeline configuration. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub calib: Option<PathBuf>,
    pub palette: Option<PathBuf>,
    /// Registration parameters (JSON).
    pub registration: Option<PathBuf>,
    /// Matcher parameters (JSON).
    pub sgbm: Option<PathBuf>,
    /// Per-column distortion field (CSV); compensation is on when set.
    pub distortion: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: PipelineConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.calib,
            &mut cfg.palette,
            &mut cfg.registration,
            &mut cfg.sgbm,
            &mut cfg.distortion,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for p in [&cfg.calib, &cfg.palette, &cfg.registration, &cfg.sgbm, &cfg.distortion]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(CliError::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist"),
                ));
            }
        }
        Ok(cfg)
    }
}

/// Configuration after applying command-line overrides.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: PipelineConfig,
    pub seed: u64,
    pub variant: Variant,
    pub out: PathBuf,
    /// Files the run read; recorded in the manifest.
    pub inputs: Vec<PathBuf>,
}

impl Settings {
    pub fn resolve(
        config_path: Option<&Path>,
        seed: Option<u64>,
        variant: Option<Variant>,
        out: Option<&Path>,
    ) -> Result<Self, CliError> {
        let config = match config_path {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let out = out
            .map(Path::to_path_buf)
            .or_else(|| config.out.clone())
            .ok_or_else(|| CliError::Invalid("an output directory is required (--out)".into()))?;
        let mut inputs: Vec<PathBuf> = config_path.map(Path::to_path_buf).into_iter().collect();
        inputs.extend(
            [&config.calib, &config.palette, &config.registration, &config.sgbm, &config.distortion]
                .into_iter()
                .flatten()
                .cloned(),
        );
        Ok(Self {
            seed: seed.or(config.seed).unwrap_or(0),
            variant: variant.or(config.variant).unwrap_or_default(),
            config,
            out,
            inputs,
        })
    }

    /// Calibration from `explicit`, else the config, else `fallback`.
    pub fn calib(&self, explicit: Option<&Path>, fallback: Option<&Path>) -> Result<CalibrationParams, CliError> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| self.config.calib.clone())
            .or_else(|| fallback.map(Path::to_path_buf))
            .ok_or_else(|| CliError::Invalid("no calibration given (--calib or config `calib`)".into()))?;
        let c: CalibrationParams = read_json(&path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn palette(&self, fallback: Option<&Path>) -> Result<LabelPalette, CliError> {
        match self.config.palette.as_deref().or(fallback.filter(|p| p.is_file())) {
            Some(p) => Ok(read_json(p)?),
            None => Ok(LabelPalette::default()),
        }
    }

    pub fn registration(&self) -> Result<RegistrationParams, CliError> {
        let mut p: RegistrationParams = match &self.config.registration {
            Some(path) => read_json(path)?,
            None => RegistrationParams::default(),
        };
        p.variant = self.variant;
        p.ransac.rng_seed = self.seed;
        Ok(p)
    }

    pub fn sgbm(&self) -> Result<SgbmParams, CliError> {
        let p: SgbmParams = match &self.config.sgbm {
            Some(path) => read_json(path)?,
            None => SgbmParams::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn distortion(&self, explicit: Option<&Path>) -> Result<Option<DistortionField>, CliError> {
        let Some(path) = explicit.or(self.config.distortion.as_deref()) else {
            return Ok(None);
        };
        let f = File::open(path).map_err(|e| CliError::io(path, e))?;
        DistortionField::read_csv(f)
            .map(Some)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }
}
