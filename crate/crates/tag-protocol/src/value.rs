use std::fmt;

/// Longest STRING tag value, in bytes.
pub const MAX_STRING_LEN: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TagType {
    Bool,
    Int,
    Float,
    Str,
}

impl TagType {
    pub fn code(self) -> char {
        match self {
            TagType::Bool => 'B',
            TagType::Int => 'I',
            TagType::Float => 'F',
            TagType::Str => 'S',
        }
    }

    pub fn from_code(c: &str) -> Option<Self> {
        match c {
            "B" => Some(TagType::Bool),
            "I" => Some(TagType::Int),
            "F" => Some(TagType::Float),
            "S" => Some(TagType::Str),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TagValue {
    Bool(bool),
    Int(i32),
    /// Always finite.
    Float(f64),
    /// At most [`MAX_STRING_LEN`] bytes.
    Str(String),
}

impl TagValue {
    pub fn tag_type(&self) -> TagType {
        match self {
            TagValue::Bool(_) => TagType::Bool,
            TagValue::Int(_) => TagType::Int,
            TagValue::Float(_) => TagType::Float,
            TagValue::Str(_) => TagType::Str,
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            TagValue::Float(f) => f.is_finite(),
            TagValue::Str(s) => s.len() <= MAX_STRING_LEN,
            _ => true,
        }
    }

    /// Equality on the exact bit pattern, so `0.0` and `-0.0` differ.
    pub fn bit_eq(&self, other: &TagValue) -> bool {
        match (self, other) {
            (TagValue::Float(a), TagValue::Float(b)) => a.to_bits() == b.to_bits(),
            _ => self == other,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            TagValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i32> {
        match self {
            TagValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            TagValue::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            TagValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn default_for(t: TagType) -> TagValue {
        match t {
            TagType::Bool => TagValue::Bool(false),
            TagType::Int => TagValue::Int(0),
            TagType::Float => TagValue::Float(0.0),
            TagType::Str => TagValue::Str(String::new()),
        }
    }
}

impl fmt::Display for TagValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TagValue::Bool(b) => write!(f, "{}", u8::from(*b)),
            TagValue::Int(i) => write!(f, "{i}"),
            TagValue::Float(x) => write!(f, "{x}"),
            TagValue::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Quality {
    #[default]
    Good,
    Stale,
}

/// One tag value as published: value, quality and the tick it was sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct TagSample {
    pub name: String,
    pub value: TagValue,
    pub quality: Quality,
    pub tick: u64,
}
