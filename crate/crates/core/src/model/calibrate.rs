//! Activation statistics for smoothing and static quantization.

use std::collections::BTreeMap;

use super::forward::{ForwardOptions, Observer};
use super::weights::VimModel;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::tensor::{Container, Tensor};

/// Per-site input absolute maxima `[L, C]`, maximized over calibration samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibStats {
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub absmax: BTreeMap<String, Mat>,
}

impl Observer for CalibStats {
    fn input(&mut self, site: &str, x: &Mat) {
        let slot = self.absmax.entry(site.to_string()).or_insert_with(|| Mat::zeros(x.rows, x.cols));
        for (m, v) in slot.data.iter_mut().zip(&x.data) {
            *m = m.max(v.abs());
        }
    }
}

impl CalibStats {
    pub fn site(&self, name: &str) -> Result<&Mat> {
        self.absmax.get(name).ok_or_else(|| Error::Missing(format!("calibration statistics for {name}")))
    }

    /// Per-channel maxima over all positions.
    pub fn channel_absmax(&self, name: &str) -> Result<Vec<f32>> {
        let m = self.site(name)?;
        let mut out = vec![0.0f32; m.cols];
        for r in 0..m.rows {
            for (o, &v) in out.iter_mut().zip(m.row(r)) {
                *o = o.max(v);
            }
        }
        Ok(out)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.insert("meta.calib", Tensor::i32(&[3], vec![self.samples as i32, self.height as i32, self.width as i32])?)?;
        for (k, m) in &self.absmax {
            c.insert(format!("{k}.absmax"), Tensor::from_mat(m))?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = c.require("meta.calib")?.as_i32()?;
        if meta.len() != 3 || meta.iter().any(|&v| v < 0) {
            return Err(Error::Format(format!("bad calibration header {meta:?}")));
        }
        let mut absmax = BTreeMap::new();
        for (name, t) in c.entries() {
            if let Some(site) = name.strip_suffix(".absmax") {
                let m = t.to_mat()?;
                if m.data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Format(format!("{name} holds negative or non-finite maxima")));
                }
                absmax.insert(site.to_string(), m);
            }
        }
        Ok(Self { samples: meta[0] as usize, height: meta[1] as usize, width: meta[2] as usize, absmax })
    }
}

/// Runs the float model over `images` (all `[C, height, width]`) and records
/// the input statistics of every linear and conv site.
pub fn calibrate(model: &VimModel, images: &[Vec<f32>], height: usize, width: usize, opts: &ForwardOptions) -> Result<CalibStats> {
    if images.is_empty() {
        return Err(Error::Config("calibration needs at least one sample".into()));
    }
    let mut stats = CalibStats { samples: images.len(), height, width, absmax: BTreeMap::new() };
    for img in images {
        model.forward(img, height, width, opts, &mut stats)?;
    }
    Ok(stats)
}
