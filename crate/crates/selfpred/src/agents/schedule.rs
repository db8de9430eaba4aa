//! Exploration schedules: value as a function of the environment step.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// Linear anneal from `start` to `end` over `steps`, then flat.
    Linear { start: f64, end: f64, steps: usize },
    /// Geometric anneal reaching `end` exactly at `steps`, then flat.
    Exponential { start: f64, end: f64, steps: usize },
}

impl Schedule {
    pub fn value(&self, step: usize) -> f64 {
        match *self {
            Schedule::Constant(v) => v,
            Schedule::Linear { start, end, steps } => {
                let frac = (step as f64 / steps.max(1) as f64).min(1.0);
                start + (end - start) * frac
            }
            Schedule::Exponential { start, end, steps } => {
                let frac = (step as f64 / steps.max(1) as f64).min(1.0);
                start * (end / start).powf(frac)
            }
        }
    }
}
