//! Dense integer identifiers. Every table in the crate is indexed by these.

use core::fmt;

use serde::{Deserialize, Serialize};

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn new(index: usize) -> Self {
                $name(u32::try_from(index).expect("id exceeds u32"))
            }

            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

dense_id!(UserId);
dense_id!(ItemId);
dense_id!(
    /// A leaf attribute (what binary questions ask about).
    AttrId
);
dense_id!(
    /// A parent attribute of the two-level taxonomy (what enumerated questions ask about).
    ParentId
);
