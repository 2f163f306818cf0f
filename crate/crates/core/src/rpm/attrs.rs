use std::fmt;

/// Panel layout family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Config {
    /// One object filling the panel.
    Center,
    /// Up to four objects on a 2x2 slot grid.
    Grid2x2,
}

impl Config {
    pub fn slots(self) -> u32 {
        match self {
            Config::Center => 1,
            Config::Grid2x2 => 4,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Config::Center => 0,
            Config::Grid2x2 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Config::Center),
            1 => Some(Config::Grid2x2),
            _ => None,
        }
    }

    /// Attributes that vary in this configuration. Number and Position
    /// share the layout field, so at most one of them is ever governed.
    pub fn attributes(self) -> &'static [Attribute] {
        match self {
            Config::Center => &[Attribute::Shape, Attribute::Size, Attribute::Fill],
            Config::Grid2x2 => &[Attribute::Shape, Attribute::Size, Attribute::Fill, Attribute::Number, Attribute::Position],
        }
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Config::Center => "center",
            Config::Grid2x2 => "grid2x2",
        })
    }
}

impl std::str::FromStr for Config {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "center" => Ok(Config::Center),
            "grid2x2" => Ok(Config::Grid2x2),
            other => Err(format!("unknown config {other:?} (expected center or grid2x2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeType {
    Triangle,
    Square,
    Pentagon,
    Hexagon,
    Circle,
}

impl ShapeType {
    pub const ALL: [ShapeType; 5] =
        [ShapeType::Triangle, ShapeType::Square, ShapeType::Pentagon, ShapeType::Hexagon, ShapeType::Circle];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    /// Polygon side count; `None` for the circle.
    pub fn sides(self) -> Option<u32> {
        match self {
            ShapeType::Triangle => Some(3),
            ShapeType::Square => Some(4),
            ShapeType::Pentagon => Some(5),
            ShapeType::Hexagon => Some(6),
            ShapeType::Circle => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    Shape,
    Size,
    Fill,
    /// Object count; positions are free to move.
    Number,
    /// Slot occupancy mask; the count follows from it.
    Position,
}

impl Attribute {
    pub const ALL: [Attribute; 5] =
        [Attribute::Shape, Attribute::Size, Attribute::Fill, Attribute::Number, Attribute::Position];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        Self::ALL.get(t as usize).copied()
    }

    /// Inclusive legal range of the underlying field for a configuration.
    pub fn range(self, config: Config) -> (u8, u8) {
        match self {
            Attribute::Shape => (0, 4),
            Attribute::Size | Attribute::Fill => (1, 5),
            Attribute::Number => (1, config.slots() as u8),
            Attribute::Position => (1, ((1u32 << config.slots()) - 1) as u8),
        }
    }

    pub fn is_layout(self) -> bool {
        matches!(self, Attribute::Number | Attribute::Position)
    }
}

/// Symbolic content of one panel. Every object in a panel shares shape,
/// size and fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AttributeVector {
    pub shape: ShapeType,
    /// 1..=5
    pub size: u8,
    /// Gray level 1..=5, 1 being white.
    pub fill: u8,
    /// Objects in the panel, always `positions.count_ones()`.
    pub count: u8,
    /// Bit `i` set when slot `i` (row-major) is occupied.
    pub positions: u8,
}

impl AttributeVector {
    pub fn new(shape: ShapeType, size: u8, fill: u8, positions: u8) -> Self {
        Self { shape, size, fill, count: positions.count_ones() as u8, positions }
    }

    pub fn get(&self, attr: Attribute) -> u8 {
        match attr {
            Attribute::Shape => self.shape.index(),
            Attribute::Size => self.size,
            Attribute::Fill => self.fill,
            Attribute::Number => self.count,
            Attribute::Position => self.positions,
        }
    }

    /// Sets a non-layout field. Layout fields go through [`Self::set_positions`].
    pub fn set(&mut self, attr: Attribute, v: u8) {
        match attr {
            Attribute::Shape => self.shape = ShapeType::from_index(v).expect("shape index in range"),
            Attribute::Size => self.size = v,
            Attribute::Fill => self.fill = v,
            Attribute::Number | Attribute::Position => self.set_positions(v),
        }
    }

    pub fn set_positions(&mut self, mask: u8) {
        self.positions = mask;
        self.count = mask.count_ones() as u8;
    }

    pub fn is_valid(&self, config: Config) -> bool {
        let in_range = |a: Attribute| {
            let (lo, hi) = a.range(config);
            (lo..=hi).contains(&self.get(a))
        };
        let layout_ok = match config {
            Config::Center => self.positions == 1,
            Config::Grid2x2 => in_range(Attribute::Position),
        };
        in_range(Attribute::Size)
            && in_range(Attribute::Fill)
            && layout_ok
            && self.count as u32 == self.positions.count_ones()
    }

    /// Number of differing attributes, with count and positions counted
    /// together as one layout attribute.
    pub fn distance(&self, other: &Self) -> usize {
        (self.shape != other.shape) as usize
            + (self.size != other.size) as usize
            + (self.fill != other.fill) as usize
            + (self.positions != other.positions) as usize
    }
}

/// Every mask over `slots` slots with exactly `count` bits set.
pub fn masks_with_count(slots: u32, count: u8) -> Vec<u8> {
    (1u8..(1u8 << slots)).filter(|m| m.count_ones() == count as u32).collect()
}
