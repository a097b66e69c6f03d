//! Loss primitives with analytic gradients. Every function returns the
//! value together with derivatives w.r.t. its differentiable inputs.

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + eˣ) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Gaussian negative log-likelihood of one element: returns (loss, d/dmu, d/dlogvar).
#[inline]
pub fn gaussian_nll(x: f64, mu: f64, logvar: f64) -> (f64, f64, f64) {
    let inv_var = (-logvar).exp();
    let diff = x - mu;
    let sq = diff * diff * inv_var;
    let loss = 0.5 * (LN_2PI + logvar + sq);
    (loss, -diff * inv_var, 0.5 * (1.0 - sq))
}

/// Bernoulli NLL in logit space: softplus(s) - x·s. Returns (loss, d/dlogit).
#[inline]
pub fn bernoulli_nll(x: f64, logit: f64) -> (f64, f64) {
    (softplus(logit) - x * logit, sigmoid(logit) - x)
}

/// Softmax cross-entropy for one observation; gradient written into `grad`.
pub fn categorical_nll(index: usize, logits: &[f64], grad: &mut [f64]) -> f64 {
    assert!(
        index < logits.len(),
        "class index {index} out of range for {} logits",
        logits.len()
    );
    let lse = logsumexp(logits);
    for (g, &l) in grad.iter_mut().zip(logits) {
        *g = (l - lse).exp();
    }
    grad[index] -= 1.0;
    lse - logits[index]
}

/// KL(N(mu, diag(exp(logvar))) || N(0, I)); gradients written into the slices.
pub fn kl_standard_gaussian(mu: &[f64], logvar: &[f64], grad_mu: &mut [f64], grad_logvar: &mut [f64]) -> f64 {
    let mut kl = 0.0;
    for j in 0..mu.len() {
        let v = logvar[j].exp();
        kl += 0.5 * (mu[j] * mu[j] + v - logvar[j] - 1.0);
        grad_mu[j] = mu[j];
        grad_logvar[j] = 0.5 * (v - 1.0);
    }
    kl
}

/// Huber-style smooth L1 with threshold `delta`. Returns (value, derivative).
#[inline]
pub fn smooth_l1(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() <= delta {
        (0.5 * r * r / delta, r / delta)
    } else {
        (r.abs() - 0.5 * delta, r.signum())
    }
}
