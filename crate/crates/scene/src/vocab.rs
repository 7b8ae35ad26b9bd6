//! Closed attribute vocabularies and object descriptors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SceneError;

macro_rules! attribute {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            /// All values in id order.
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn word(self) -> &'static str {
                match self {
                    $($name::$variant => $word),+
                }
            }

            /// Position in [`Self::ALL`]; the id used in annotation files.
            pub fn id(self) -> usize {
                self as usize
            }

            pub fn from_id(id: usize) -> Option<Self> {
                Self::ALL.get(id).copied()
            }

            pub fn from_word(w: &str) -> Option<Self> {
                Self::ALL.iter().copied().find(|v| v.word() == w)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.word())
            }
        }
    };
}

attribute!(Shape { Cube => "cube", Cylinder => "cylinder", Sphere => "sphere" });
attribute!(Size { Small => "small", Large => "large" });
attribute!(
    /// Eight named colors; gray is included alongside the seven chromatic ones.
    Color {
        Gray => "gray",
        Red => "red",
        Blue => "blue",
        Green => "green",
        Brown => "brown",
        Purple => "purple",
        Cyan => "cyan",
        Yellow => "yellow",
    }
);
attribute!(Material { Rubber => "rubber", Metal => "metal" });

impl Color {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Gray => [87, 87, 87],
            Color::Red => [173, 35, 35],
            Color::Blue => [42, 75, 215],
            Color::Green => [29, 105, 20],
            Color::Brown => [129, 74, 25],
            Color::Purple => [129, 38, 192],
            Color::Cyan => [41, 208, 208],
            Color::Yellow => [255, 238, 51],
        }
    }
}

/// Full attribute tuple naming an object, written `"{size} {color} {material} {shape}"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Descriptor {
    pub size: Size,
    pub color: Color,
    pub material: Material,
    pub shape: Shape,
}

impl Descriptor {
    /// Number of distinct descriptors.
    pub const COUNT: usize = 2 * 8 * 2 * 3;

    pub fn all() -> impl Iterator<Item = Descriptor> {
        Size::ALL.iter().flat_map(|&size| {
            Color::ALL.iter().flat_map(move |&color| {
                Material::ALL.iter().flat_map(move |&material| {
                    Shape::ALL.iter().map(move |&shape| Descriptor {
                        size,
                        color,
                        material,
                        shape,
                    })
                })
            })
        })
    }

    /// Parse from already-split words (exactly four).
    pub fn from_words(words: &[&str]) -> Option<Descriptor> {
        match words {
            [s, c, m, sh] => Some(Descriptor {
                size: Size::from_word(s)?,
                color: Color::from_word(c)?,
                material: Material::from_word(m)?,
                shape: Shape::from_word(sh)?,
            }),
            _ => None,
        }
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.size, self.color, self.material, self.shape)
    }
}

impl FromStr for Descriptor {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        Descriptor::from_words(&words).ok_or_else(|| SceneError::Parse(format!("bad descriptor `{s}`")))
    }
}
