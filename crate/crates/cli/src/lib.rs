//! Experiment harness behind the `curloop` command.

pub mod config;
pub mod harness;
pub mod verify;

use curloop::Error;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

pub const EXIT_ACCEPTANCE: u8 = 3;
