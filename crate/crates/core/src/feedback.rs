//! Hierarchical assessment feedback: tabs → contexts → test cases → tests.
//!
//! Judges emit a feedback document as UTF-8 JSON. [`parse_feedback`] walks the
//! document node by node so that rejections carry the path of the first
//! offending node (for example `tabs[0]/contexts[0]/testcases[0]/tests[0]`).
//! [`FeedbackTree::to_canonical_json`] produces the deterministic encoding that
//! is persisted and served by the API.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Overall verdict of an assessment.
///
/// Ordered by severity: `Correct` is the least severe, `InternalError` the
/// most severe. `Ord` follows severity, so the worst status of a collection is
/// simply its maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    InternalError,
    CompilationError,
    RuntimeError,
    MemoryLimitExceeded,
    TimeLimitExceeded,
    OutputLimitExceeded,
    Wrong,
    Correct,
}

impl Status {
    /// All statuses, least severe first.
    pub const ALL: [Status; 8] = [
        Status::Correct,
        Status::Wrong,
        Status::OutputLimitExceeded,
        Status::TimeLimitExceeded,
        Status::MemoryLimitExceeded,
        Status::RuntimeError,
        Status::CompilationError,
        Status::InternalError,
    ];

    /// 0 for `Correct` up to 7 for `InternalError`.
    pub fn severity(self) -> u8 {
        match self {
            Status::Correct => 0,
            Status::Wrong => 1,
            Status::OutputLimitExceeded => 2,
            Status::TimeLimitExceeded => 3,
            Status::MemoryLimitExceeded => 4,
            Status::RuntimeError => 5,
            Status::CompilationError => 6,
            Status::InternalError => 7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::InternalError => "internal-error",
            Status::CompilationError => "compilation-error",
            Status::RuntimeError => "runtime-error",
            Status::MemoryLimitExceeded => "memory-limit-exceeded",
            Status::TimeLimitExceeded => "time-limit-exceeded",
            Status::OutputLimitExceeded => "output-limit-exceeded",
            Status::Wrong => "wrong",
            Status::Correct => "correct",
        }
    }
}

impl PartialOrd for Status {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Status {
    fn cmp(&self, other: &Self) -> Ordering {
        self.severity().cmp(&other.severity())
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown status '{0}'")]
pub struct UnknownStatus(pub String);

impl FromStr for Status {
    type Err = UnknownStatus;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Status::ALL
            .iter()
            .copied()
            .find(|status| status.as_str() == s)
            .ok_or_else(|| UnknownStatus(s.to_string()))
    }
}

/// Worst-of aggregation. An empty collection aggregates to `Correct`.
pub fn aggregate_status<I>(children: I) -> Status
where
    I: IntoIterator<Item = Status>,
{
    children.into_iter().max().unwrap_or(Status::Correct)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageFormat {
    Plain,
    Html,
    Markdown,
    Code,
}

impl MessageFormat {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(MessageFormat::Plain),
            "html" => Some(MessageFormat::Html),
            "markdown" => Some(MessageFormat::Markdown),
            "code" => Some(MessageFormat::Code),
            _ => None,
        }
    }
}

/// Who may see a message. Staff messages are stripped from student-facing
/// responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    #[default]
    Student,
    Staff,
}

/// A snippet of unstructured feedback. Bodies are passed through verbatim;
/// HTML sanitization is up to whoever renders them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub format: MessageFormat,
    pub body: String,
    pub visibility: Visibility,
}

impl Message {
    pub fn plain(body: impl Into<String>) -> Self {
        Message {
            format: MessageFormat::Plain,
            body: body.into(),
            visibility: Visibility::Student,
        }
    }

    pub fn code(body: impl Into<String>) -> Self {
        Message {
            format: MessageFormat::Code,
            body: body.into(),
            visibility: Visibility::Student,
        }
    }

    pub fn staff(mut self) -> Self {
        self.visibility = Visibility::Staff;
        self
    }
}

/// A generated/expected pair. The judge decides `accepted`; the engine never
/// re-compares the two payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Test {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub generated: String,
    pub expected: String,
    pub accepted: bool,
    /// Finer verdict for a failed test (e.g. `runtime-error`). Absent means
    /// `correct` when accepted and `wrong` otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<Status>,
    pub messages: Vec<Message>,
}

impl Test {
    pub fn new(generated: impl Into<String>, expected: impl Into<String>, accepted: bool) -> Self {
        Test {
            description: None,
            generated: generated.into(),
            expected: expected.into(),
            accepted,
            status: None,
            messages: Vec::new(),
        }
    }

    pub fn implied_status(&self) -> Status {
        match (self.status, self.accepted) {
            (Some(status), _) => status,
            (None, true) => Status::Correct,
            (None, false) => Status::Wrong,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TestCase {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub messages: Vec<Message>,
    pub tests: Vec<Test>,
}

impl TestCase {
    pub fn accepted(&self) -> bool {
        self.tests.iter().all(|t| t.accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Context {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub messages: Vec<Message>,
    pub testcases: Vec<TestCase>,
}

impl Context {
    pub fn accepted(&self) -> bool {
        self.testcases.iter().all(TestCase::accepted)
    }

    pub fn tests(&self) -> impl Iterator<Item = &Test> {
        self.testcases.iter().flat_map(|tc| tc.tests.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tab {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub messages: Vec<Message>,
    pub contexts: Vec<Context>,
}

impl Tab {
    pub fn accepted(&self) -> bool {
        self.contexts.iter().all(Context::accepted)
    }

    pub fn tests(&self) -> impl Iterator<Item = &Test> {
        self.contexts.iter().flat_map(Context::tests)
    }
}

/// Number of failed tests under a tab, as shown in the tab header.
pub fn tab_badge(tab: &Tab) -> usize {
    tab.tests().filter(|t| !t.accepted).count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackTree {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub messages: Vec<Message>,
    pub tabs: Vec<Tab>,
}

impl FeedbackTree {
    /// A tree without tests, carrying only a status and top-level messages.
    pub fn verdict(status: Status, messages: Vec<Message>) -> Self {
        FeedbackTree {
            status,
            description: None,
            messages,
            tabs: Vec::new(),
        }
    }

    pub fn tests(&self) -> impl Iterator<Item = &Test> {
        self.tabs.iter().flat_map(Tab::tests)
    }

    pub fn test_count(&self) -> usize {
        self.tests().count()
    }

    pub fn accepted(&self) -> bool {
        self.tabs.iter().all(Tab::accepted)
    }

    /// Worst implied status over all tests.
    pub fn aggregated_test_status(&self) -> Status {
        aggregate_status(self.tests().map(Test::implied_status))
    }

    /// Copy of the tree with all staff-only messages removed at every level.
    pub fn without_staff_messages(&self) -> FeedbackTree {
        fn keep(messages: &[Message]) -> Vec<Message> {
            messages
                .iter()
                .filter(|m| m.visibility == Visibility::Student)
                .cloned()
                .collect()
        }
        let mut tree = self.clone();
        tree.messages = keep(&self.messages);
        for tab in &mut tree.tabs {
            tab.messages = keep(&tab.messages);
            for ctx in &mut tab.contexts {
                ctx.messages = keep(&ctx.messages);
                for tc in &mut ctx.testcases {
                    tc.messages = keep(&tc.messages);
                    for test in &mut tc.tests {
                        test.messages = keep(&test.messages);
                    }
                }
            }
        }
        tree
    }

    /// Deterministic wire encoding. Field order is fixed by the struct
    /// definitions; non-ASCII text is written as raw UTF-8.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("feedback tree serialization cannot fail")
    }
}

/// Strict mode rejects unknown fields; lenient mode ignores them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationErrorKind {
    #[error("malformed JSON: {0}")]
    Syntax(String),
    #[error("expected an object")]
    NotAnObject,
    #[error("missing field '{0}'")]
    MissingField(&'static str),
    #[error("field '{field}' must be {expected}")]
    WrongType {
        field: String,
        expected: &'static str,
    },
    #[error("unknown status '{0}'")]
    UnknownStatus(String),
    #[error("unknown message format '{0}'")]
    UnknownFormat(String),
    #[error("unknown message visibility '{0}'")]
    UnknownVisibility(String),
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("test status '{status}' contradicts accepted={accepted}")]
    InconsistentTest { status: Status, accepted: bool },
}

/// Rejection of a feedback document. `path` names the offending node, empty
/// for the document root.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid feedback at '{path}': {kind}")]
pub struct ValidationError {
    pub path: String,
    pub kind: ValidationErrorKind,
}

/// Parses and validates a feedback document.
///
/// The top-level `status` is optional on the wire. When present it is kept
/// unless some test implies a more severe status, in which case the more
/// severe one wins; when absent it is the aggregate over all tests.
pub fn parse_feedback(doc: &[u8], mode: ParseMode) -> Result<FeedbackTree, ValidationError> {
    let value: Value = serde_json::from_slice(doc).map_err(|e| ValidationError {
        path: String::new(),
        kind: ValidationErrorKind::Syntax(e.to_string()),
    })?;
    Walker { mode }.tree(&value)
}

struct Walker {
    mode: ParseMode,
}

type Res<T> = Result<T, ValidationError>;

fn err<T>(path: &str, kind: ValidationErrorKind) -> Res<T> {
    Err(ValidationError {
        path: path.to_string(),
        kind,
    })
}

fn child_path(parent: &str, field: &str, index: usize) -> String {
    if parent.is_empty() {
        format!("{field}[{index}]")
    } else {
        format!("{parent}/{field}[{index}]")
    }
}

impl Walker {
    fn object<'v>(&self, value: &'v Value, path: &str, allowed: &[&str]) -> Res<&'v Map<String, Value>> {
        let Some(map) = value.as_object() else {
            return err(path, ValidationErrorKind::NotAnObject);
        };
        if self.mode == ParseMode::Strict {
            if let Some(unknown) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
                return err(path, ValidationErrorKind::UnknownField(unknown.clone()));
            }
        }
        Ok(map)
    }

    fn opt_string(&self, map: &Map<String, Value>, field: &str, path: &str) -> Res<Option<String>> {
        match map.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => err(
                path,
                ValidationErrorKind::WrongType {
                    field: field.to_string(),
                    expected: "a string",
                },
            ),
        }
    }

    fn req_string(&self, map: &Map<String, Value>, field: &'static str, path: &str) -> Res<String> {
        self.opt_string(map, field, path)?
            .ok_or_else(|| ValidationError {
                path: path.to_string(),
                kind: ValidationErrorKind::MissingField(field),
            })
    }

    fn opt_status(&self, map: &Map<String, Value>, path: &str) -> Res<Option<Status>> {
        match self.opt_string(map, "status", path)? {
            None => Ok(None),
            Some(s) => s
                .parse::<Status>()
                .map(Some)
                .map_err(|e| ValidationError {
                    path: path.to_string(),
                    kind: ValidationErrorKind::UnknownStatus(e.0),
                }),
        }
    }

    fn array<'v>(&self, map: &'v Map<String, Value>, field: &str, path: &str) -> Res<&'v [Value]> {
        match map.get(field) {
            None | Some(Value::Null) => Ok(&[]),
            Some(Value::Array(items)) => Ok(items),
            Some(_) => err(
                path,
                ValidationErrorKind::WrongType {
                    field: field.to_string(),
                    expected: "an array",
                },
            ),
        }
    }

    fn messages(&self, map: &Map<String, Value>, path: &str) -> Res<Vec<Message>> {
        self.array(map, "messages", path)?
            .iter()
            .enumerate()
            .map(|(i, v)| self.message(v, &child_path(path, "messages", i)))
            .collect()
    }

    fn message(&self, value: &Value, path: &str) -> Res<Message> {
        // A bare string is shorthand for a plain student-visible message.
        if let Value::String(body) = value {
            return Ok(Message::plain(body.clone()));
        }
        let map = self.object(value, path, &["format", "body", "visibility"])?;
        let body = self.req_string(map, "body", path)?;
        let format = match self.opt_string(map, "format", path)? {
            None => MessageFormat::Plain,
            Some(f) => MessageFormat::parse(&f)
                .ok_or_else(|| ValidationError {
                    path: path.to_string(),
                    kind: ValidationErrorKind::UnknownFormat(f),
                })?,
        };
        let visibility = match self.opt_string(map, "visibility", path)?.as_deref() {
            None | Some("student") => Visibility::Student,
            Some("staff") => Visibility::Staff,
            Some(other) => return err(path, ValidationErrorKind::UnknownVisibility(other.to_string())),
        };
        Ok(Message {
            format,
            body,
            visibility,
        })
    }

    fn tree(&self, value: &Value) -> Res<FeedbackTree> {
        let path = "";
        let map = self.object(value, path, &["status", "description", "messages", "tabs"])?;
        let explicit = self.opt_status(map, path)?;
        let description = self.opt_string(map, "description", path)?;
        let messages = self.messages(map, path)?;
        let tabs = self
            .array(map, "tabs", path)?
            .iter()
            .enumerate()
            .map(|(i, v)| self.tab(v, &child_path(path, "tabs", i)))
            .collect::<Res<Vec<_>>>()?;
        let mut tree = FeedbackTree {
            status: Status::Correct,
            description,
            messages,
            tabs,
        };
        let aggregated = tree.aggregated_test_status();
        tree.status = explicit.map_or(aggregated, |s| s.max(aggregated));
        Ok(tree)
    }

    fn tab(&self, value: &Value, path: &str) -> Res<Tab> {
        let map = self.object(value, path, &["description", "messages", "contexts"])?;
        Ok(Tab {
            description: self.opt_string(map, "description", path)?,
            messages: self.messages(map, path)?,
            contexts: self
                .array(map, "contexts", path)?
                .iter()
                .enumerate()
                .map(|(i, v)| self.context(v, &child_path(path, "contexts", i)))
                .collect::<Res<_>>()?,
        })
    }

    fn context(&self, value: &Value, path: &str) -> Res<Context> {
        let map = self.object(value, path, &["description", "messages", "testcases"])?;
        Ok(Context {
            description: self.opt_string(map, "description", path)?,
            messages: self.messages(map, path)?,
            testcases: self
                .array(map, "testcases", path)?
                .iter()
                .enumerate()
                .map(|(i, v)| self.testcase(v, &child_path(path, "testcases", i)))
                .collect::<Res<_>>()?,
        })
    }

    fn testcase(&self, value: &Value, path: &str) -> Res<TestCase> {
        let map = self.object(value, path, &["description", "messages", "tests"])?;
        Ok(TestCase {
            description: self.opt_string(map, "description", path)?,
            messages: self.messages(map, path)?,
            tests: self
                .array(map, "tests", path)?
                .iter()
                .enumerate()
                .map(|(i, v)| self.test(v, &child_path(path, "tests", i)))
                .collect::<Res<_>>()?,
        })
    }

    fn test(&self, value: &Value, path: &str) -> Res<Test> {
        let map = self.object(
            value,
            path,
            &["description", "generated", "expected", "accepted", "status", "messages"],
        )?;
        let generated = self.req_string(map, "generated", path)?;
        let expected = self.req_string(map, "expected", path)?;
        let accepted = match map.get("accepted") {
            Some(Value::Bool(b)) => *b,
            None => return err(path, ValidationErrorKind::MissingField("accepted")),
            Some(_) => {
                return err(
                    path,
                    ValidationErrorKind::WrongType {
                        field: "accepted".into(),
                        expected: "a boolean",
                    },
                )
            }
        };
        let status = self.opt_status(map, path)?;
        if let Some(status) = status {
            if (status == Status::Correct) != accepted {
                return err(path, ValidationErrorKind::InconsistentTest { status, accepted });
            }
        }
        Ok(Test {
            description: self.opt_string(map, "description", path)?,
            generated,
            expected,
            accepted,
            status,
            messages: self.messages(map, path)?,
        })
    }
}
