use std::fmt;

use serde::{Deserialize, Serialize};

/// Renders 128 random bits as 32 lowercase hex characters.
pub fn random_hex_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

macro_rules! define_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn generate() -> Self {
                Self(random_hex_id())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl From<String> for $name {
            fn from(value: String) -> Self {
                Self(value)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.to_owned())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

define_id!(SessionId);
define_id!(RecordingId);
define_id!(TranscriptId);
define_id!(NoteId);
define_id!(TemplateId);
define_id!(JobId);
define_id!(
    /// User identifiers come from the authentication layer and are not
    /// necessarily hex.
    UserId
);
define_id!(FacilityId);

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn ids_are_lowercase_hex_128_bit() {
        let id = SessionId::generate();
        assert_eq!(id.as_str().len(), 32);
        assert!(id.as_str().chars().all(|c| matches!(c, '0'..='9' | 'a'..='f')));
    }

    #[test]
    fn a_million_ids_do_not_collide() {
        let mut seen = HashSet::with_capacity(1_000_000);
        for _ in 0..1_000_000 {
            assert!(seen.insert(random_hex_id()));
        }
    }
}
