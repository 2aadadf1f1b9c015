use indexmap::IndexMap;

use super::config::AdamParams;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Real, Tensor};

/// Adam moments, keyed and ordered like the parameters they track.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub step: u64,
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
}

impl<T: Real> OptimState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape())))
                .collect()
        };
        OptimState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Checks that the moments line up with `params` name by name.
    pub fn check_matches(&self, params: &ModelParams<T>) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (name, p) in params.iter() {
            let ok = |map: &IndexMap<String, Tensor<T>>| map.get(name).is_some_and(|t| t.shape() == p.shape());
            if !ok(&self.m) || !ok(&self.v) {
                return Err(Error::Contract(format!(
                    "optimizer moments for {name} are missing or misshapen"
                )));
            }
        }
        Ok(())
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        let same = |a: &IndexMap<String, Tensor<T>>, b: &IndexMap<String, Tensor<T>>| {
            a.len() == b.len() && a.iter().zip(b).all(|((ka, ta), (kb, tb))| ka == kb && ta.bit_eq(tb))
        };
        self.step == other.step && same(&self.m, &other.m) && same(&self.v, &other.v)
    }
}

/// One bias-corrected Adam update of every parameter. Arithmetic runs in
/// `f64` per element, so the result depends only on the inputs.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &IndexMap<String, Tensor<T>>,
    state: &mut OptimState<T>,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    for (name, p) in params.iter() {
        match grads.get(name) {
            None => return Err(Error::Contract(format!("no gradient for parameter {name}"))),
            Some(g) if g.shape() != p.shape() => {
                return Err(Error::Contract(format!(
                    "gradient for {name} has shape {}, parameter has {}",
                    g.shape(),
                    p.shape()
                )))
            }
            Some(_) => {}
        }
    }
    state.check_matches(params)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.get_mut(name).expect("checked");
        let v = state.v.get_mut(name).expect("checked");
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gf = gv.to_f64();
            let mf = hp.beta1 * mv.to_f64() + (1.0 - hp.beta1) * gf;
            let vf = hp.beta2 * vv.to_f64() + (1.0 - hp.beta2) * gf * gf;
            *mv = T::from_f64(mf);
            *vv = T::from_f64(vf);
            let update = lr * (mf / bc1) / ((vf / bc2).sqrt() + hp.eps);
            *pv = T::from_f64(pv.to_f64() - update);
        }
    }
    Ok(())
}
