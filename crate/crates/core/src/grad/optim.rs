use super::GradError;

/// Plain stochastic gradient descent with optional global-norm clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub max_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdStep {
    /// Global L2 norm of the gradient before clipping.
    pub grad_norm: f64,
    /// Factor applied to the gradient by clipping (1 when unclipped).
    pub clip_scale: f64,
}

impl Default for Sgd {
    fn default() -> Self {
        Self { lr: 0.05, max_grad_norm: Some(1.0) }
    }
}

impl Sgd {
    /// Applies `p -= lr · g` to every `(p, g)` pair. Nothing is written when
    /// the gradient is not finite.
    pub fn step<'a, I>(&self, pairs: I) -> Result<SgdStep, GradError>
    where
        I: IntoIterator<Item = (&'a mut [f64], &'a [f64])>,
    {
        let pairs: Vec<_> = pairs.into_iter().collect();
        let norm = pairs
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(GradError::NonFiniteGradient(norm));
        }
        let clip_scale = match self.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        let step = self.lr * clip_scale;
        for (p, g) in pairs {
            for (p, g) in p.iter_mut().zip(g) {
                *p -= step * g;
            }
        }
        Ok(SgdStep { grad_norm: norm, clip_scale })
    }
}
