//! Failure and controller identifiers.
//!
//! Controllers are paired 1:1 with failures by index: `c3` is the corrective
//! controller tuned for `f3`, and `c0`/`f0` denote nominal operation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

macro_rules! tagged_id {
    ($name:ident, $prefix:literal, $what:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u8);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix)
                    .and_then(|n| n.parse::<u8>().ok())
                    .map($name)
                    .ok_or_else(|| Error::Validation(format!(concat!("invalid ", $what, " id '{}'"), s)))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

tagged_id!(FailureId, "f", "failure");
tagged_id!(ControllerId, "c", "controller");

impl FailureId {
    pub const NONE: FailureId = FailureId(0);

    pub fn is_nominal(self) -> bool {
        self == Self::NONE
    }

    /// The controller tuned for this failure.
    pub fn paired_controller(self) -> ControllerId {
        ControllerId(self.0)
    }
}

impl ControllerId {
    pub const NOMINAL: ControllerId = ControllerId(0);

    /// The failure this controller was tuned for.
    pub fn paired_failure(self) -> FailureId {
        FailureId(self.0)
    }
}
