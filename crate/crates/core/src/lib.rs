//! Active sensing with a jointly trained selector/predictor pair of LSTMs.
//!
//! At each step the selector emits per-feature measurement probabilities, a
//! sensing decision is drawn, the chosen features are observed and charged
//! for, and the predictor updates its estimate of the label. Training
//! alternates a supervised predictor step with a score-function selector
//! step that trades prediction loss against measurement cost.

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod sensing;
pub mod seqmodel;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

/// Format `x` with 17 significant digits so that parsing it back gives the
/// same `f64`.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 && x.is_sign_positive() {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::fmt_real;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn fmt_real_round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let back: f64 = fmt_real(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn fmt_real_specials() {
        assert_eq!(fmt_real(0.0), "0");
        assert_eq!(fmt_real(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_real(f64::INFINITY).parse::<f64>().unwrap(), f64::INFINITY);
    }
}
