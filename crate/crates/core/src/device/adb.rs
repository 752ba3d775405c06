//! Real Android backend speaking to `adb`.
//!
//! Command mapping:
//! - tap: `input tap X Y`
//! - text: `input text <escaped>`
//! - swipe: `input swipe X1 Y1 X2 Y2 DUR`
//! - back / home: `input keyevent KEYCODE_BACK|KEYCODE_HOME`
//! - screenshot: `exec-out screencap -p`
//! - element tree: `uiautomator dump`, parsed by [`super::uiautomator`]

use super::uiautomator::parse_hierarchy;
use super::{
    classify_effect, screen_signature, Action, ActionResult, Device, DeviceError, Direction,
    DocumentReader, Effect, PlainTextReader, ScreenState,
};
use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

pub const SWIPE_DURATION_MS: u32 = 300;

/// Runs `adb` with the given arguments and returns stdout.
pub trait AdbTransport: Send {
    fn run(&self, args: &[String]) -> Result<Vec<u8>, DeviceError>;
}

/// Spawns the `adb` executable, killing it after `timeout`.
#[derive(Debug, Clone)]
pub struct ProcessTransport {
    pub program: String,
    pub serial: String,
    pub timeout: Duration,
}

impl ProcessTransport {
    pub fn new(serial: impl Into<String>) -> Self {
        Self {
            program: "adb".into(),
            serial: serial.into(),
            timeout: Duration::from_secs(20),
        }
    }
}

impl AdbTransport for ProcessTransport {
    fn run(&self, args: &[String]) -> Result<Vec<u8>, DeviceError> {
        let mut child = Command::new(&self.program)
            .arg("-s")
            .arg(&self.serial)
            .args(args)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| DeviceError::Unreachable(format!("spawn {}: {e}", self.program)))?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });
        let start = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(DeviceError::CaptureTimeout(self.timeout.as_millis() as u64));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => return Err(DeviceError::Backend(e.to_string())),
            }
        };
        let out = reader
            .join()
            .map_err(|_| DeviceError::Backend("stdout reader panicked".into()))?
            .map_err(|e| DeviceError::Backend(e.to_string()))?;
        if !status.success() {
            let mut err = String::new();
            if let Some(mut stderr) = child.stderr.take() {
                let _ = stderr.read_to_string(&mut err);
            }
            if err.contains("not found") || err.contains("offline") || err.contains("no devices") {
                return Err(DeviceError::Unreachable(err.trim().to_string()));
            }
            return Err(DeviceError::ActionRejected(format!(
                "adb {} exited with {status}: {}",
                args.join(" "),
                err.trim()
            )));
        }
        Ok(out)
    }
}

/// Escape text for `input text`: spaces become `%s`, shell metacharacters
/// are backslash-escaped.
pub fn escape_input_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            ' ' => out.push_str("%s"),
            '(' | ')' | '<' | '>' | '|' | ';' | '&' | '*' | '\\' | '~' | '"' | '\'' | '$'
            | '`' | '?' | '#' | '%' => {
                out.push('\\');
                out.push(c);
            }
            _ => out.push(c),
        }
    }
    out
}

fn args(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

/// Arguments (after `adb -s SERIAL`) for a device-affecting action.
pub fn command_for(action: &Action, display: (i32, i32)) -> Option<Vec<String>> {
    match action {
        Action::Tap { x, y } => Some(args(&["shell", "input", "tap", &x.to_string(), &y.to_string()])),
        Action::Text { content } => Some(args(&["shell", "input", "text", &escape_input_text(content)])),
        Action::Swipe { x, y, direction } => {
            let (x2, y2) = swipe_end(*x, *y, *direction, display);
            Some(args(&[
                "shell",
                "input",
                "swipe",
                &x.to_string(),
                &y.to_string(),
                &x2.to_string(),
                &y2.to_string(),
                &SWIPE_DURATION_MS.to_string(),
            ]))
        }
        Action::Back => Some(args(&["shell", "input", "keyevent", "KEYCODE_BACK"])),
        Action::Home => Some(args(&["shell", "input", "keyevent", "KEYCODE_HOME"])),
        _ => None,
    }
}

/// Linear swipe covering a third of the display in `direction`, clamped.
pub fn swipe_end(x: i32, y: i32, direction: Direction, display: (i32, i32)) -> (i32, i32) {
    let dx = display.0 / 3;
    let dy = display.1 / 3;
    let (x2, y2) = match direction {
        Direction::Up => (x, y - dy),
        Direction::Down => (x, y + dy),
        Direction::Left => (x - dx, y),
        Direction::Right => (x + dx, y),
    };
    (x2.clamp(0, display.0 - 1), y2.clamp(0, display.1 - 1))
}

pub fn screenshot_command() -> Vec<String> {
    args(&["exec-out", "screencap", "-p"])
}

pub fn dump_command() -> Vec<String> {
    args(&["exec-out", "uiautomator", "dump", "/dev/tty"])
}

pub fn display_command() -> Vec<String> {
    args(&["shell", "wm", "size"])
}

/// Parse `wm size` output, preferring an override size when present.
pub fn parse_display_size(out: &str) -> Option<(i32, i32)> {
    let line = out
        .lines()
        .find(|l| l.starts_with("Override size"))
        .or_else(|| out.lines().find(|l| l.starts_with("Physical size")))?;
    let (w, h) = line.rsplit(' ').next()?.trim().split_once('x')?;
    Some((w.parse().ok()?, h.parse().ok()?))
}

pub struct AdbDevice {
    serial: String,
    transport: Box<dyn AdbTransport>,
    display: (i32, i32),
    wait_delay: Duration,
    screenshot_dir: Option<PathBuf>,
    captures: u64,
    reader: Box<dyn DocumentReader>,
}

impl AdbDevice {
    pub const DEFAULT_WAIT: Duration = Duration::from_secs(2);

    pub fn connect(serial: &str) -> Result<Self, DeviceError> {
        Self::with_transport(serial, Box::new(ProcessTransport::new(serial)))
    }

    pub fn with_transport(serial: &str, transport: Box<dyn AdbTransport>) -> Result<Self, DeviceError> {
        let out = transport.run(&display_command())?;
        let display = parse_display_size(&String::from_utf8_lossy(&out))
            .ok_or_else(|| DeviceError::Backend("could not read display size".into()))?;
        Ok(Self {
            serial: serial.to_string(),
            transport,
            display,
            wait_delay: Self::DEFAULT_WAIT,
            screenshot_dir: None,
            captures: 0,
            reader: Box::new(PlainTextReader { base: ".".into() }),
        })
    }

    pub fn set_wait_delay(&mut self, delay: Duration) {
        self.wait_delay = delay;
    }

    /// Screenshots are written here as PNG; the path is the screenshot handle.
    pub fn set_screenshot_dir(&mut self, dir: PathBuf) {
        self.screenshot_dir = Some(dir);
    }

    pub fn set_reader(&mut self, reader: Box<dyn DocumentReader>) {
        self.reader = reader;
    }
}

impl Device for AdbDevice {
    fn id(&self) -> &str {
        &self.serial
    }

    fn display(&self) -> (i32, i32) {
        self.display
    }

    fn capture_screen(&mut self) -> Result<ScreenState, DeviceError> {
        let xml = self.transport.run(&dump_command())?;
        let parsed = parse_hierarchy(&String::from_utf8_lossy(&xml))?;
        let png = self.transport.run(&screenshot_command())?;
        let n = self.captures;
        self.captures += 1;
        let screenshot_ref = match &self.screenshot_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| DeviceError::Backend(e.to_string()))?;
                let path = dir.join(format!("{}-{n:05}.png", self.serial));
                std::fs::write(&path, &png).map_err(|e| DeviceError::Backend(e.to_string()))?;
                path.display().to_string()
            }
            None => format!("adb:{}:{n}", self.serial),
        };
        Ok(ScreenState {
            screen_signature: screen_signature(&parsed.elements),
            elements: parsed.elements,
            screenshot_ref,
            app_id: parsed.package,
            screen_name: None,
            focused: None,
            captured_at: n,
        })
    }

    fn perform(&mut self, action: &Action) -> Result<ActionResult, DeviceError> {
        action.validate()?;
        action.check_bounds(self.display)?;
        let pre = self.capture_screen()?;
        let note = match action {
            Action::Wait => {
                std::thread::sleep(self.wait_delay);
                "waited".to_string()
            }
            Action::Read { file, .. } => self.reader.read(file)?,
            Action::Think { .. } => "think is handled by working memory".to_string(),
            Action::Stop => "stop".to_string(),
            other => {
                let cmd = command_for(other, self.display).expect("device-affecting action");
                self.transport.run(&cmd)?;
                cmd.join(" ")
            }
        };
        let post = self.capture_screen()?;
        let observed_effect = if *action == Action::Stop {
            Effect::Terminal
        } else {
            classify_effect(&pre, &post)
        };
        Ok(ActionResult {
            ok: true,
            observed_effect,
            post_state: post,
            note,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    #[test]
    fn command_strings_are_exact() {
        let d = (1080, 1920);
        let join = |a: &Action| command_for(a, d).unwrap().join(" ");
        assert_eq!(join(&Action::Tap { x: 540, y: 960 }), "shell input tap 540 960");
        assert_eq!(
            join(&Action::Text { content: "hello world".into() }),
            "shell input text hello%sworld"
        );
        assert_eq!(
            join(&Action::Swipe { x: 540, y: 1500, direction: Direction::Up }),
            "shell input swipe 540 1500 540 860 300"
        );
        assert_eq!(join(&Action::Back), "shell input keyevent KEYCODE_BACK");
        assert_eq!(join(&Action::Home), "shell input keyevent KEYCODE_HOME");
        assert!(command_for(&Action::Wait, d).is_none());
        assert_eq!(screenshot_command().join(" "), "exec-out screencap -p");
    }

    #[test]
    fn text_escaping_covers_shell_metacharacters() {
        assert_eq!(escape_input_text("a&b (c)"), "a\\&b%s\\(c\\)");
        assert_eq!(escape_input_text("it's $5"), "it\\'s%s\\$5");
    }

    #[test]
    fn swipe_end_is_clamped() {
        assert_eq!(swipe_end(10, 10, Direction::Left, (1080, 1920)), (0, 10));
        assert_eq!(swipe_end(10, 1900, Direction::Down, (1080, 1920)), (10, 1919));
    }

    #[test]
    fn display_size_parsing() {
        assert_eq!(parse_display_size("Physical size: 1080x2400\n"), Some((1080, 2400)));
        assert_eq!(
            parse_display_size("Physical size: 1080x2400\nOverride size: 720x1600\n"),
            Some((720, 1600))
        );
        assert_eq!(parse_display_size("nope"), None);
    }

    #[derive(Clone, Default)]
    struct Fake {
        log: Arc<Mutex<Vec<String>>>,
    }

    impl AdbTransport for Fake {
        fn run(&self, args: &[String]) -> Result<Vec<u8>, DeviceError> {
            let cmd = args.join(" ");
            self.log.lock().unwrap().push(cmd.clone());
            Ok(match cmd.as_str() {
                "shell wm size" => b"Physical size: 1080x1920\n".to_vec(),
                "exec-out uiautomator dump /dev/tty" => br#"<hierarchy><node class="android.widget.FrameLayout" package="com.example" bounds="[0,0][1080,1920]" resource-id="root" /></hierarchy>"#.to_vec(),
                "exec-out screencap -p" => vec![0x89, b'P', b'N', b'G'],
                _ => Vec::new(),
            })
        }
    }

    #[test]
    fn device_issues_commands_through_transport() {
        let fake = Fake::default();
        let mut dev = AdbDevice::with_transport("emulator-5554", Box::new(fake.clone())).unwrap();
        dev.set_wait_delay(Duration::ZERO);
        let r = dev.perform(&Action::Tap { x: 1, y: 2 }).unwrap();
        assert_eq!(r.post_state.app_id, "com.example");
        assert_eq!(r.observed_effect, Effect::ScreenUnchanged);
        let log = fake.log.lock().unwrap();
        assert!(log.contains(&"shell input tap 1 2".to_string()));
        let err = dev.perform(&Action::Tap { x: 5000, y: 2 }).unwrap_err();
        assert!(matches!(err, DeviceError::ActionRejected(_)));
    }
}
