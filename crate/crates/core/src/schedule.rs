use crate::error::{MlvError, Result};
use crate::scalar::Scalar;

/// Descending sampling times `t_T = 1 > … > t_0 = 0` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepSchedule<S> {
    /// `times[j] = t_{T-j}`; first element 1, last element 0.
    times: Vec<S>,
}

impl<S: Scalar> TimestepSchedule<S> {
    pub fn linear(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(MlvError::config("timestep count must be at least 1"));
        }
        let total = S::from_usize_exact(steps);
        let times = (0..=steps)
            .map(|j| S::from_usize_exact(steps - j) / total)
            .collect();
        Ok(Self { times })
    }

    /// Number of integration steps `T`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// `t_i` for `i` in `0..=T`.
    pub fn time(&self, i: usize) -> S {
        self.times[self.steps() - i]
    }

    /// Times in descending order, `t_T` first.
    pub fn times(&self) -> &[S] {
        &self.times
    }
}

/// Linear schedule with `steps` intervals.
pub fn make_schedule<S: Scalar>(steps: usize) -> Result<TimestepSchedule<S>> {
    TimestepSchedule::linear(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let s = make_schedule::<f64>(1).unwrap();
        assert_eq!(s.times(), &[1.0, 0.0]);
    }

    #[test]
    fn two_steps() {
        let s = make_schedule::<f64>(2).unwrap();
        assert_eq!(s.times(), &[1.0, 0.5, 0.0]);
    }

    #[test]
    fn twenty_five_steps() {
        let s = make_schedule::<f64>(25).unwrap();
        assert_eq!(s.times().len(), 26);
        assert_eq!(s.time(25), 1.0);
        assert_eq!(s.time(0), 0.0);
        for w in s.times().windows(2) {
            assert!((w[0] - w[1] - 0.04).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(matches!(
            make_schedule::<f64>(0),
            Err(MlvError::InvalidConfig(_))
        ));
    }

    #[test]
    fn strictly_decreasing_f32() {
        let s = make_schedule::<f32>(50).unwrap();
        assert!(s.times().windows(2).all(|w| w[0] > w[1]));
        assert_eq!(s.times()[0], 1.0);
        assert_eq!(*s.times().last().unwrap(), 0.0);
    }
}
