use super::Tensor;
use crate::error::{Error, Result};

fn same_shape(ctx: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(ctx, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

/// `z = mu + exp(log_var / 2) * noise`
pub fn reparameterize(mu: &Tensor, log_var: &Tensor, noise: &Tensor) -> Result<Tensor> {
    same_shape("reparameterize log_var", mu, log_var)?;
    same_shape("reparameterize noise", mu, noise)?;
    let z = mu
        .data()
        .iter()
        .zip(log_var.data())
        .zip(noise.data())
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect();
    Tensor::new(mu.shape(), z)
}

/// Pulls a gradient on `z` back to `(mu, log_var)`.
pub fn reparameterize_backward(grad_z: &Tensor, log_var: &Tensor, noise: &Tensor) -> Result<(Tensor, Tensor)> {
    same_shape("reparameterize_backward", grad_z, log_var)?;
    same_shape("reparameterize_backward", grad_z, noise)?;
    let glv = grad_z
        .data()
        .iter()
        .zip(log_var.data())
        .zip(noise.data())
        .map(|((g, lv), n)| g * 0.5 * (0.5 * lv).exp() * n)
        .collect();
    Ok((grad_z.clone(), Tensor::new(grad_z.shape(), glv)?))
}

/// KL divergence of `N(mu, exp(log_var))` from `N(0, I)`, summed over all
/// entries.
pub fn kl_standard_normal(mu: &Tensor, log_var: &Tensor) -> Result<f64> {
    same_shape("kl", mu, log_var)?;
    Ok(0.5
        * mu
            .data()
            .iter()
            .zip(log_var.data())
            .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
            .sum::<f64>())
}

pub fn kl_standard_normal_grad(mu: &Tensor, log_var: &Tensor) -> Result<(Tensor, Tensor)> {
    same_shape("kl", mu, log_var)?;
    let glv = log_var.data().iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect();
    Ok((mu.clone(), Tensor::new(mu.shape(), glv)?))
}

/// Mean squared error over all entries and its gradient wrt `pred`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    same_shape("mse", pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape(), grad)?))
}
