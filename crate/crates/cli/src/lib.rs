//! Command-line orchestration for the x2ct pipeline: config files, artifact
//! directories and run manifests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod workflow;

use x2ct_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CONTRACT: i32 = 5;

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => EXIT_CONFIG,
        Some(Error::NonFinite { .. } | Error::Divergence { .. }) => EXIT_NUMERIC,
        Some(Error::FreezeViolation { .. }) => EXIT_CONTRACT,
        Some(_) => EXIT_DATA,
        None => EXIT_DATA,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_exit_codes() {
        let code = |e: Error| exit_code(&anyhow::Error::new(e));
        assert_eq!(code(Error::config("lr", "bad")), EXIT_CONFIG);
        assert_eq!(code(Error::format("manifest", "bad")), EXIT_DATA);
        assert_eq!(code(Error::UndefinedMetric("auc".into())), EXIT_DATA);
        assert_eq!(code(Error::NonFinite { tensor: "w".into() }), EXIT_NUMERIC);
        assert_eq!(code(Error::Divergence { epoch: 1, loss: f64::NAN }), EXIT_NUMERIC);
        let frozen = Error::FreezeViolation {
            expected: "a".into(),
            actual: "b".into(),
        };
        assert_eq!(code(frozen), EXIT_CONTRACT);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), EXIT_DATA);
    }
}
