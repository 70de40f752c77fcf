use super::{NetworkParams, Real};
use crate::error::{Error, Result};

/// Adaptive-moment optimiser state (first and second moments per parameter).
#[derive(Debug, Clone)]
pub struct AdamState<T = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: NetworkParams<T>,
    v: NetworkParams<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
pub fn optimizer_step<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.names().zip(grads.names()).any(|(a, b)| a != b) {
        return Err(Error::KeyMismatch(
            "gradient keys differ from parameter keys".into(),
        ));
    }
    if params.len() != state.m.len() {
        return Err(Error::KeyMismatch("optimiser state built for other params".into()));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let (tb1, tb2, teps) = (T::of(b1), T::of(b2), T::of(state.eps));
    let (tc1, tc2, tlr) = (T::of(c1), T::of(c2), T::of(lr));
    let one = T::one();
    for (((name, p), (_, g)), ((_, m), (_, v))) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.shape() != g.shape() {
            return Err(Error::KeyMismatch(format!("gradient shape differs for `{name}`")));
        }
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = tb1 * md[i] + (one - tb1) * gi;
            vd[i] = tb2 * vd[i] + (one - tb2) * gi * gi;
            let mh = md[i] / tc1;
            let vh = vd[i] / tc2;
            pd[i] = pd[i] - tlr * mh / (vh.sqrt() + teps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm<T: Real>(grads: &mut NetworkParams<T>, max_norm: f64) -> f64 {
    let n = grads.global_norm();
    if max_norm > 0.0 && n > max_norm {
        grads.scale(T::of(max_norm / n));
    }
    n
}
