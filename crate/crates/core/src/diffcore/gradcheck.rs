//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use crate::error::Result;
use crate::rng::Rng;

use super::params::{Binding, ParamGrads};
use super::{ParamSet, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Coordinates checked; all of them if the set is smaller.
    pub samples: usize,
    pub h: f64,
    pub tol: f64,
    /// Hard ceiling no coordinate may exceed.
    pub max_tol: f64,
    /// Fraction of coordinates that must be within `tol`.
    pub min_pass_fraction: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            samples: 64,
            h: 1e-5,
            tol: 1e-3,
            max_tol: 1e-2,
            min_pass_fraction: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub within_tol: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub pass: bool,
}

/// Relative error used throughout: `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `value` on randomly
/// sampled coordinates of `params`.
pub fn grad_check(
    params: &ParamSet,
    value: impl Fn(&ParamSet) -> Result<f64>,
    analytic: &ParamGrads,
    cfg: &GradCheckConfig,
    rng: &mut Rng,
) -> Result<GradCheckReport> {
    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.to_string(), i)))
        .collect();
    let picked: Vec<usize> = if cfg.samples >= coords.len() {
        (0..coords.len()).collect()
    } else {
        let mut v = sample(rng, coords.len(), cfg.samples).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = params.clone();
    let mut within = 0;
    let mut max_err = 0.0_f64;
    let mut worst = None;
    for &c in &picked {
        let (name, i) = &coords[c];
        let orig = params.get(name).expect("coordinate name").data()[*i];
        probe.get_mut(name).expect("coordinate name").data_mut()[*i] = orig + cfg.h;
        let up = value(&probe)?;
        probe.get_mut(name).expect("coordinate name").data_mut()[*i] = orig - cfg.h;
        let down = value(&probe)?;
        probe.get_mut(name).expect("coordinate name").data_mut()[*i] = orig;
        let numeric = (up - down) / (2.0 * cfg.h);
        let a = analytic.get(name).map_or(0.0, |g| g.data()[*i]);
        let err = rel_error(a, numeric);
        if err <= cfg.tol {
            within += 1;
        }
        if err > max_err || worst.is_none() {
            max_err = max_err.max(err);
            worst = Some((name.clone(), *i));
        }
    }
    let checked = picked.len();
    let pass = checked > 0 && within as f64 >= cfg.min_pass_fraction * checked as f64 && max_err <= cfg.max_tol;
    Ok(GradCheckReport {
        checked,
        within_tol: within,
        max_rel_error: max_err,
        worst,
        pass,
    })
}

/// [`grad_check`] for a scalar graph built by `build`, using the tape's own
/// backward pass for the analytic side.
pub fn grad_check_graph(
    params: &ParamSet,
    build: impl Fn(&mut Tape, &Binding<'_>) -> Result<Var>,
    cfg: &GradCheckConfig,
    rng: &mut Rng,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let out = build(&mut tape, &params.train())?;
    let grads = tape.backward(out)?.into_params();
    let value = |p: &ParamSet| -> Result<f64> {
        let mut t = Tape::new();
        let o = build(&mut t, &p.frozen())?;
        Ok(t.scalar(o))
    };
    grad_check(params, value, &grads, cfg, rng)
}
