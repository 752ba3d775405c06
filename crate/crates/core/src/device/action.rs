use super::DeviceError;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fmt;
use std::str::FromStr;

/// The nine basic operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Tap,
    Text,
    Swipe,
    Read,
    Think,
    Back,
    Home,
    Wait,
    Stop,
}

impl Op {
    pub const ALL: [Op; 9] = [
        Op::Tap,
        Op::Text,
        Op::Swipe,
        Op::Read,
        Op::Think,
        Op::Back,
        Op::Home,
        Op::Wait,
        Op::Stop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Tap => "tap",
            Op::Text => "text",
            Op::Swipe => "swipe",
            Op::Read => "read",
            Op::Think => "think",
            Op::Back => "back",
            Op::Home => "home",
            Op::Wait => "wait",
            Op::Stop => "stop",
        }
    }

    /// Parameter names, in order.
    pub fn schema(self) -> &'static [&'static str] {
        match self {
            Op::Tap => &["x", "y"],
            Op::Text => &["content"],
            Op::Swipe => &["x", "y", "direction"],
            Op::Read => &["file", "goal"],
            Op::Think => &["flow", "goal"],
            Op::Back | Op::Home | Op::Wait | Op::Stop => &[],
        }
    }

    /// Operations that interact with the device and count against step caps.
    pub fn is_device_affecting(self) -> bool {
        matches!(
            self,
            Op::Tap | Op::Text | Op::Swipe | Op::Back | Op::Home | Op::Wait
        )
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Op {
    type Err = DeviceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Op::ALL
            .into_iter()
            .find(|op| op.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DeviceError::InvalidParams(format!("unknown operation '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

impl FromStr for Direction {
    type Err = DeviceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            other => Err(DeviceError::InvalidParams(format!(
                "unknown swipe direction '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkFlow {
    Read,
    Write,
    Compact,
}

impl FromStr for ThinkFlow {
    type Err = DeviceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "read" => Ok(ThinkFlow::Read),
            "write" => Ok(ThinkFlow::Write),
            "compact" => Ok(ThinkFlow::Compact),
            other => Err(DeviceError::InvalidParams(format!(
                "unknown think flow '{other}'"
            ))),
        }
    }
}

/// A basic operation with its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "params", rename_all = "snake_case")]
pub enum Action {
    Tap { x: i32, y: i32 },
    Text { content: String },
    Swipe { x: i32, y: i32, direction: Direction },
    Read { file: String, goal: String },
    Think { flow: ThinkFlow, goal: String },
    Back,
    Home,
    Wait,
    Stop,
}

impl Action {
    pub fn op(&self) -> Op {
        match self {
            Action::Tap { .. } => Op::Tap,
            Action::Text { .. } => Op::Text,
            Action::Swipe { .. } => Op::Swipe,
            Action::Read { .. } => Op::Read,
            Action::Think { .. } => Op::Think,
            Action::Back => Op::Back,
            Action::Home => Op::Home,
            Action::Wait => Op::Wait,
            Action::Stop => Op::Stop,
        }
    }

    pub fn is_device_affecting(&self) -> bool {
        self.op().is_device_affecting()
    }

    /// Build an action from an operation name and a parameter map, requiring
    /// exactly the parameters the operation declares.
    pub fn from_parts(op: &str, params: &Map<String, Value>) -> Result<Action, DeviceError> {
        let op: Op = op.parse()?;
        let schema = op.schema();
        for key in params.keys() {
            if !schema.contains(&key.as_str()) {
                return Err(DeviceError::InvalidParams(format!(
                    "{op} does not take parameter '{key}'"
                )));
            }
        }
        let int = |name: &str| -> Result<i32, DeviceError> {
            let v = params.get(name).ok_or_else(|| {
                DeviceError::InvalidParams(format!("{op} requires parameter '{name}'"))
            })?;
            v.as_i64()
                .and_then(|n| i32::try_from(n).ok())
                .ok_or_else(|| DeviceError::InvalidParams(format!("{op}.{name} must be an integer")))
        };
        let string = |name: &str| -> Result<String, DeviceError> {
            let v = params.get(name).ok_or_else(|| {
                DeviceError::InvalidParams(format!("{op} requires parameter '{name}'"))
            })?;
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| DeviceError::InvalidParams(format!("{op}.{name} must be a string")))
        };
        let action = match op {
            Op::Tap => Action::Tap {
                x: int("x")?,
                y: int("y")?,
            },
            Op::Text => Action::Text {
                content: string("content")?,
            },
            Op::Swipe => Action::Swipe {
                x: int("x")?,
                y: int("y")?,
                direction: string("direction")?.parse()?,
            },
            Op::Read => Action::Read {
                file: string("file")?,
                goal: string("goal")?,
            },
            Op::Think => Action::Think {
                flow: string("flow")?.parse()?,
                goal: string("goal")?,
            },
            Op::Back => Action::Back,
            Op::Home => Action::Home,
            Op::Wait => Action::Wait,
            Op::Stop => Action::Stop,
        };
        action.validate()?;
        Ok(action)
    }

    /// Schema-level checks that do not depend on the device.
    pub fn validate(&self) -> Result<(), DeviceError> {
        match self {
            Action::Tap { x, y } | Action::Swipe { x, y, .. } if *x < 0 || *y < 0 => Err(
                DeviceError::InvalidParams(format!("negative coordinates ({x}, {y})")),
            ),
            Action::Text { content } if content.is_empty() => {
                Err(DeviceError::InvalidParams("text content is empty".into()))
            }
            Action::Read { file, .. } if file.trim().is_empty() => {
                Err(DeviceError::InvalidParams("read file is empty".into()))
            }
            _ => Ok(()),
        }
    }

    /// Checks that also need the display size. Coordinates outside the
    /// display are refused by the backend rather than being schema errors.
    pub fn check_bounds(&self, display: (i32, i32)) -> Result<(), DeviceError> {
        match self {
            Action::Tap { x, y } | Action::Swipe { x, y, .. }
                if *x >= display.0 || *y >= display.1 =>
            {
                Err(DeviceError::ActionRejected(format!(
                    "({x}, {y}) outside display {}x{}",
                    display.0, display.1
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn params(&self) -> Map<String, Value> {
        match serde_json::to_value(self) {
            Ok(Value::Object(mut obj)) => match obj.remove("params") {
                Some(Value::Object(p)) => p,
                _ => Map::new(),
            },
            _ => Map::new(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Tap { x, y } => write!(f, "Tap({x}, {y})"),
            Action::Text { content } => write!(f, "Text({content:?})"),
            Action::Swipe { x, y, direction } => {
                write!(f, "Swipe({x}, {y}, {})", direction.as_str())
            }
            Action::Read { file, goal } => write!(f, "Read({file:?}, {goal:?})"),
            Action::Think { flow, goal } => write!(f, "Think({flow:?}, {goal:?})"),
            Action::Back => f.write_str("Back"),
            Action::Home => f.write_str("Home"),
            Action::Wait => f.write_str("Wait"),
            Action::Stop => f.write_str("Stop"),
        }
    }
}
