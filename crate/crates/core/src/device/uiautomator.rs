//! Parser for `uiautomator dump` window hierarchies.

use super::{DeviceError, Rect, Role, UiElement};
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

/// Result of parsing one dump: elements in document order and the package
/// of the foreground window.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedHierarchy {
    pub package: String,
    pub elements: Vec<UiElement>,
}

/// Parse `"[l,t][r,b]"`.
pub fn parse_bounds(s: &str) -> Option<(i32, i32, i32, i32)> {
    let nums: Vec<i32> = s
        .split(|c: char| c == '[' || c == ']' || c == ',')
        .filter(|p| !p.is_empty())
        .map(|p| p.trim().parse().ok())
        .collect::<Option<Vec<_>>>()?;
    match nums.as_slice() {
        [l, t, r, b] => Some((*l, *t, *r, *b)),
        _ => None,
    }
}

fn role_for(class: &str, clickable: bool, parent_is_list: bool) -> Role {
    let short = class.rsplit('.').next().unwrap_or(class);
    if parent_is_list {
        return Role::ListItem;
    }
    if short.contains("EditText") {
        Role::TextField
    } else if short.contains("Button") && !short.contains("Image") {
        Role::Button
    } else if short.contains("ImageButton") || (short.contains("ImageView") && clickable) {
        Role::Icon
    } else if short.contains("ImageView") {
        Role::Image
    } else if short.contains("RecyclerView")
        || short.contains("ListView")
        || short.contains("Layout")
        || short.contains("ViewGroup")
        || short.contains("ViewPager")
    {
        Role::Container
    } else if clickable {
        Role::Button
    } else {
        Role::Other
    }
}

fn is_list(class: &str) -> bool {
    class.contains("RecyclerView") || class.contains("ListView")
}

#[derive(Default)]
struct NodeAttrs {
    class: String,
    text: String,
    resource_id: String,
    content_desc: String,
    package: String,
    bounds: String,
    clickable: bool,
}

fn attrs(e: &BytesStart<'_>) -> Result<NodeAttrs, DeviceError> {
    let mut out = NodeAttrs::default();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| DeviceError::Backend(format!("xml attribute: {err}")))?;
        let value = attr
            .unescape_value()
            .map_err(|err| DeviceError::Backend(format!("xml value: {err}")))?
            .into_owned();
        match attr.key.as_ref() {
            b"class" => out.class = value,
            b"text" => out.text = value,
            b"resource-id" => out.resource_id = value,
            b"content-desc" => out.content_desc = value,
            b"package" => out.package = value,
            b"bounds" => out.bounds = value,
            b"clickable" => out.clickable = value == "true",
            _ => {}
        }
    }
    Ok(out)
}

/// Parse a hierarchy dump. Trailing non-XML output (the "dumped to" banner)
/// is ignored; nodes with degenerate bounds are skipped.
pub fn parse_hierarchy(xml: &str) -> Result<ParsedHierarchy, DeviceError> {
    let start = xml
        .find('<')
        .ok_or_else(|| DeviceError::Backend("no xml in uiautomator output".into()))?;
    let end = xml.rfind('>').map(|i| i + 1).unwrap_or(xml.len());
    let mut reader = Reader::from_str(&xml[start..end]);

    let mut elements = Vec::new();
    let mut package = String::new();
    // (child counter, is list) per open node
    let mut stack: Vec<(usize, bool)> = Vec::new();
    let mut path: Vec<usize> = Vec::new();
    let mut root_children = 0usize;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| DeviceError::Backend(format!("xml parse: {e}")))?;
        let (node, self_closing) = match &event {
            Event::Start(e) if e.name().as_ref() == b"node" => (e, false),
            Event::Empty(e) if e.name().as_ref() == b"node" => (e, true),
            Event::End(e) if e.name().as_ref() == b"node" => {
                stack.pop();
                path.pop();
                continue;
            }
            Event::Eof => break,
            _ => continue,
        };
        let a = attrs(node)?;
        let index = match stack.last_mut() {
            Some((count, _)) => {
                *count += 1;
                *count - 1
            }
            None => {
                root_children += 1;
                root_children - 1
            }
        };
        let parent_is_list = stack.last().is_some_and(|(_, list)| *list);
        path.push(index);
        if package.is_empty() && !a.package.is_empty() {
            package = a.package.clone();
        }
        if let Some((l, t, r, b)) = parse_bounds(&a.bounds) {
            if let Ok(bounds) = Rect::new(l, t, r, b) {
                let role = role_for(&a.class, a.clickable, parent_is_list);
                let label = [&a.text, &a.content_desc]
                    .into_iter()
                    .find(|s| !s.is_empty())
                    .cloned();
                let stable_key = (!a.resource_id.is_empty()).then(|| a.resource_id.clone());
                let is_text_variable = role == Role::TextField
                    || role == Role::ListItem
                    || (stable_key.is_none() && !a.text.is_empty());
                elements.push(UiElement {
                    element_id: path
                        .iter()
                        .map(|i| i.to_string())
                        .collect::<Vec<_>>()
                        .join("."),
                    role,
                    label,
                    bounds,
                    stable_key,
                    is_text_variable,
                });
            }
        }
        if self_closing {
            path.pop();
        } else {
            stack.push((0, is_list(&a.class)));
        }
    }
    Ok(ParsedHierarchy { package, elements })
}
