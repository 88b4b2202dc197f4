use super::{Tape, Tensor, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Per input: ‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖).
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Checks the gradient of the scalar built by `f` with respect to every
/// input tensor, using central differences with step `eps`.
pub fn finite_difference_check(inputs: &[Tensor], eps: f64, f: impl Fn(&mut Tape, &[Var]) -> Var) -> GradCheck {
    let eval = |xs: &[Tensor]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let out = f(&mut t, &vars);
        t.value(out).item()
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = f(&mut t, &vars);
    let grads = t.backward(out).expect("scalar loss");

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            xs[k].data_mut()[i] = x0 + eps;
            let up = eval(&xs);
            xs[k].data_mut()[i] = x0 - eps;
            let down = eval(&xs);
            xs[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[i];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt() + n2.sqrt();
        relative_errors.push(if denom < 1e-12 { 0.0 } else { diff2.sqrt() / denom });
    }
    GradCheck { relative_errors }
}
