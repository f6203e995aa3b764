use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// The four players of the game, used to attribute training failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Player {
    Discriminator,
    GoodGenerator,
    Classifier,
    BadGenerator,
}

impl Player {
    pub fn name(self) -> &'static str {
        match self {
            Player::Discriminator => "D",
            Player::GoodGenerator => "gG",
            Player::Classifier => "C",
            Player::BadGenerator => "bG",
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    Domain {
        op: &'static str,
        reason: String,
    },
    /// A NaN or infinity appeared in the output of `op`.
    NonFinite {
        op: &'static str,
    },
    Contract {
        reason: &'static str,
    },
    Training {
        player: Player,
        iteration: u64,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "shape mismatch in {op}: lhs={lhs:?}, rhs={rhs:?}")
            }
            Error::Domain { op, reason } => write!(f, "domain error in {op}: {reason}"),
            Error::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            Error::Contract { reason } => write!(f, "contract violation: {reason}"),
            Error::Training {
                player,
                iteration,
                source,
            } => write!(
                f,
                "training step of {player} failed at iteration {iteration}: {source}"
            ),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T, E = Error> = core::result::Result<T, E>;
