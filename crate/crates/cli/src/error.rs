//! Exit-code classification.

use npn_core::NpnError;

/// A problem with the user's input rather than with the computation.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(pub String);

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

/// 1 for validation errors anywhere in the chain, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| {
        e.downcast_ref::<Invalid>().is_some()
            || e.downcast_ref::<NpnError>().is_some_and(NpnError::is_validation)
    });
    if validation {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification() {
        assert_eq!(exit_code(&Invalid("x".into()).into()), EXIT_VALIDATION);
        let param = NpnError::InvalidParameter {
            name: "rate",
            reason: "bad".into(),
        };
        assert_eq!(exit_code(&anyhow::Error::from(param).context("loading")), EXIT_VALIDATION);
        let state = NpnError::InvalidState("boom".into());
        assert_eq!(exit_code(&state.into()), EXIT_RUNTIME);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), EXIT_RUNTIME);
    }
}
