//! Log-space arithmetic shared by the chart and the grammar.

pub const NEG_INF: f64 = f64::NEG_INFINITY;

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(NEG_INF, f64::max);
    if max == NEG_INF {
        return NEG_INF;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// In-place log-softmax. Entries equal to `-inf` stay masked.
pub fn log_softmax_in_place(values: &mut [f64]) {
    let z = log_sum_exp(values);
    for v in values.iter_mut() {
        *v -= z;
    }
}

/// Gradient of a scalar w.r.t. logits, given its gradient w.r.t. the
/// log-softmax outputs `logp` computed from those logits.
pub fn log_softmax_backward(logp: &[f64], grad_logp: &[f64], grad_logits: &mut [f64]) {
    let total: f64 = grad_logp
        .iter()
        .zip(logp)
        .filter(|(_, &lp)| lp != NEG_INF)
        .map(|(g, _)| g)
        .sum();
    for ((g, &lp), &gl) in grad_logits.iter_mut().zip(logp).zip(grad_logp) {
        if lp == NEG_INF {
            continue;
        }
        *g += gl - lp.exp() * total;
    }
}

/// Streaming log-sum-exp that rescales its running sum whenever a larger
/// term arrives.
#[derive(Debug, Clone, Copy)]
pub struct LogAccumulator {
    max: f64,
    sum: f64,
}

impl Default for LogAccumulator {
    fn default() -> Self {
        Self { max: NEG_INF, sum: 0.0 }
    }
}

impl LogAccumulator {
    #[inline]
    pub fn add(&mut self, value: f64) {
        if value == NEG_INF {
            return;
        }
        if value <= self.max {
            self.sum += (value - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - value).exp() + 1.0;
            self.max = value;
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        if self.max == NEG_INF {
            NEG_INF
        } else {
            self.max + self.sum.ln()
        }
    }
}
