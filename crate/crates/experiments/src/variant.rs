//! Kernel variants as written in configuration files.
//!
//! Syntax: `[label=]kind@scale[;c=X][;L=N][;plain][;blocks=dense|sparse]` where `scale` is a number
//! or `tuned` / `tuned=P` (adapt the scale until the mean acceptance
//! probability is `P`). `plain` drops the preconditioner; mirror-type kernels
//! then reflect through `μ*` and propose with identity covariance. `blocks`
//! selects blockwise updates in a dense or sparse whitened space.

use std::fmt;
use std::str::FromStr;

use mirror_mcmc::kernels::KernelKind;
use mirror_mcmc::whitening::WhiteningMode;

use crate::error::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Fixed(f64),
    Tuned(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub kind: KernelKind,
    pub scale: Scale,
    pub c: f64,
    pub leapfrog_steps: usize,
    pub preconditioned: bool,
    /// Blockwise updates in a whitened space; `None` updates all coordinates jointly.
    pub blocks: Option<WhiteningMode>,
}

/// Acceptance rate that a `tuned` scale aims for by default.
pub fn default_tuning_target(kind: KernelKind, block_dim: usize) -> f64 {
    match kind {
        KernelKind::RandomWalk | KernelKind::Mirror if block_dim == 1 => 0.44,
        KernelKind::RandomWalk | KernelKind::Mirror => 0.234,
        KernelKind::Mala | KernelKind::MirrorMala => 0.574,
        KernelKind::Hmc | KernelKind::MirrorHmc => 0.651,
    }
}

impl Variant {
    pub fn fixed(kind: KernelKind, epsilon: f64) -> Self {
        Self {
            label: format!("{}@{}", kind.name(), epsilon),
            kind,
            scale: Scale::Fixed(epsilon),
            c: 1.0,
            leapfrog_steps: 1,
            preconditioned: true,
            blocks: None,
        }
    }

    pub fn tuned(kind: KernelKind, target: f64) -> Self {
        Self {
            label: format!("{}@tuned", kind.name()),
            kind,
            scale: Scale::Tuned(target),
            c: 1.0,
            leapfrog_steps: 1,
            preconditioned: true,
            blocks: None,
        }
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    /// The fixed scale, if any.
    pub fn epsilon(&self) -> Option<f64> {
        match self.scale {
            Scale::Fixed(e) => Some(e),
            Scale::Tuned(_) => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl FromStr for Variant {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| ExperimentError::Config(format!("kernel spec '{s}': {why}"));
        let mut parts = s.split(';').map(str::trim);
        let head = parts.next().unwrap_or_default();
        let (label, body) = match head.split_once('=') {
            Some((l, b)) if !b.starts_with(|c: char| c.is_ascii_digit()) && !l.contains('@') => {
                (Some(l.trim().to_string()), b.trim())
            }
            _ => (None, head),
        };
        let (kind_str, scale_str) = body.split_once('@').ok_or_else(|| bad("expected kind@scale"))?;
        let kind: KernelKind = kind_str.trim().parse().map_err(|_| bad("unknown kernel kind"))?;
        let scale_str = scale_str.trim();
        let scale = if let Some(rest) = scale_str.strip_prefix("tuned") {
            let target = match rest.strip_prefix('=') {
                Some(p) => p.parse::<f64>().map_err(|_| bad("tuning target is not a number"))?,
                None if rest.is_empty() => f64::NAN,
                None => return Err(bad("expected tuned or tuned=P")),
            };
            Scale::Tuned(target)
        } else {
            let e = scale_str.parse::<f64>().map_err(|_| bad("scale is not a number"))?;
            if !(e > 0.0 && e.is_finite()) {
                return Err(bad("scale must be positive"));
            }
            Scale::Fixed(e)
        };
        let mut v = Variant {
            label: String::new(),
            kind,
            scale,
            c: 1.0,
            leapfrog_steps: 1,
            preconditioned: true,
            blocks: None,
        };
        for opt in parts.filter(|p| !p.is_empty()) {
            match opt.split_once('=') {
                Some(("c", x)) => {
                    v.c = x.parse().map_err(|_| bad("c is not a number"))?;
                    if !(v.c > 0.0) {
                        return Err(bad("c must be positive"));
                    }
                }
                Some(("L", x)) => {
                    v.leapfrog_steps = x.parse().map_err(|_| bad("L is not an integer"))?;
                    if v.leapfrog_steps == 0 {
                        return Err(bad("L must be at least 1"));
                    }
                }
                Some(("blocks", "dense")) => v.blocks = Some(WhiteningMode::Dense),
                Some(("blocks", "sparse")) => v.blocks = Some(WhiteningMode::Sparse),
                None if opt == "plain" => v.preconditioned = false,
                _ => return Err(bad(&format!("unknown option '{opt}'"))),
            }
        }
        v.label = label.unwrap_or_else(|| {
            let mut l = format!("{}@{}", kind.name(), scale_str);
            if v.c != 1.0 {
                l.push_str(&format!(";c={}", v.c));
            }
            if v.leapfrog_steps != 1 {
                l.push_str(&format!(";L={}", v.leapfrog_steps));
            }
            if !v.preconditioned {
                l.push_str(";plain");
            }
            match v.blocks {
                Some(WhiteningMode::Dense) => l.push_str(";blocks=dense"),
                Some(WhiteningMode::Sparse) => l.push_str(";blocks=sparse"),
                None => {}
            }
            l
        });
        Ok(v)
    }
}

/// Resolves `tuned` without an explicit target to the kernel's default.
pub fn tuning_target(v: &Variant, block_dim: usize) -> Option<f64> {
    match v.scale {
        Scale::Tuned(p) if p.is_nan() => Some(default_tuning_target(v.kind, block_dim)),
        Scale::Tuned(p) => Some(p),
        Scale::Fixed(_) => None,
    }
}

pub fn parse_variants(specs: &[String]) -> Result<Vec<Variant>, ExperimentError> {
    if specs.is_empty() {
        return Err(ExperimentError::Config("kernel list is empty".into()));
    }
    let vs: Vec<Variant> = specs.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    for (i, v) in vs.iter().enumerate() {
        if vs[..i].iter().any(|w| w.label == v.label) {
            return Err(ExperimentError::Config(format!("duplicate kernel label '{}'", v.label)));
        }
        if let Scale::Tuned(p) = v.scale {
            if !p.is_nan() && !(p > 0.0 && p < 1.0) {
                return Err(ExperimentError::Config(format!(
                    "{}: tuning target must lie in (0, 1)",
                    v.label
                )));
            }
        }
    }
    Ok(vs)
}
