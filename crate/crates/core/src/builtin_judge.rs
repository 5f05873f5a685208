//! Generic input/output judge. Runs the submission once per test case,
//! compares standard output with the expected text and reports one test per
//! case.
//!
//! The suite lives in `<resources>/suite.json`:
//!
//! ```json
//! {
//!   "run_command": ["{submission}"],
//!   "tabs": [{
//!     "name": "Examples",
//!     "contexts": [{
//!       "cases": [{"stdin": "3\n", "expected_stdout": "9\n", "match": "trimmed"}]
//!     }]
//!   }]
//! }
//! ```
//!
//! `run_command` may use `{submission}`, `{resources}` and `{workdir}`.

use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;

use crate::diff::{layout, render_plain, text_diff, LayoutMode};
use crate::feedback::{aggregate_status, Context, FeedbackTree, Message, Status, Tab, Test, TestCase};
use crate::judge::JudgeMetadata;
use crate::sandbox::{ExecutionOutcome, ExecutionSpec, ImageRef, ProcessLauncher, StdinSource, Violation};

pub const SUITE_FILE: &str = "suite.json";

const MIN_CASE_BUDGET: Duration = Duration::from_secs(1);
const MIN_CASE_OUTPUT: u64 = 1024;
// Student stderr shown in feedback is cut at this size.
const STDERR_SHOWN: usize = 8 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    Exact,
    /// Ignores trailing whitespace on every line and leading or trailing
    /// blank space of the whole text.
    Trimmed,
    /// Compares whitespace-separated tokens.
    Tokens,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub stdin: String,
    #[serde(default)]
    pub args: Vec<String>,
    pub expected_stdout: String,
    #[serde(default, rename = "match")]
    pub match_mode: MatchMode,
    #[serde(default)]
    pub expected_exit: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSpec {
    #[serde(default)]
    pub description: Option<String>,
    pub cases: Vec<CaseSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub contexts: Vec<ContextSpec>,
}

fn default_run_command() -> Vec<String> {
    vec!["{submission}".into()]
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSuiteSpec {
    #[serde(default = "default_run_command")]
    pub run_command: Vec<String>,
    pub tabs: Vec<TabSpec>,
}

impl TestSuiteSpec {
    pub fn parse(bytes: &[u8]) -> Result<Self, String> {
        let spec: TestSuiteSpec = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        if spec.case_count() == 0 {
            return Err("suite contains no test cases".into());
        }
        if spec.run_command.is_empty() {
            return Err("run_command is empty".into());
        }
        Ok(spec)
    }

    pub fn case_count(&self) -> usize {
        self.tabs
            .iter()
            .flat_map(|t| &t.contexts)
            .map(|c| c.cases.len())
            .sum()
    }
}

pub fn compare(generated: &str, expected: &str, mode: MatchMode) -> bool {
    match mode {
        MatchMode::Exact => generated == expected,
        MatchMode::Trimmed => {
            let norm = |s: &str| s.lines().map(str::trim_end).collect::<Vec<_>>().join("\n").trim().to_string();
            norm(generated) == norm(expected)
        }
        MatchMode::Tokens => generated.split_whitespace().eq(expected.split_whitespace()),
    }
}

/// Wall budget of each case: an equal share of the time limit, at least 1 s.
pub fn case_budget(time_limit_secs: u64, cases: usize) -> Duration {
    (Duration::from_secs(time_limit_secs) / cases.max(1) as u32).max(MIN_CASE_BUDGET)
}

fn case_output_limit(output_limit: u64, cases: usize) -> u64 {
    // Generated output appears in the feedback about twice (test and diff).
    (output_limit / (4 * cases.max(1) as u64)).max(MIN_CASE_OUTPUT)
}

fn expand(template: &str, m: &JudgeMetadata) -> String {
    template
        .replace("{submission}", &m.submission_path.to_string_lossy())
        .replace("{resources}", &m.resources_path.to_string_lossy())
        .replace("{workdir}", &m.workdir_path.to_string_lossy())
}

fn tail(bytes: &[u8], max: usize) -> String {
    let start = bytes.len().saturating_sub(max);
    String::from_utf8_lossy(&bytes[start..]).into_owned()
}

fn grade_case(case: &CaseSpec, outcome: &ExecutionOutcome, budget: Duration) -> Test {
    let generated = String::from_utf8_lossy(&outcome.stdout).into_owned();
    let mut test = Test::new(generated.clone(), case.expected_stdout.clone(), false);
    test.description = case.description.clone();
    let stderr = || (!outcome.stderr.is_empty()).then(|| Message::code(tail(&outcome.stderr, STDERR_SHOWN)));

    let violation = [Violation::Memory, Violation::Timeout, Violation::Output]
        .into_iter()
        .find(|v| outcome.violations.contains(v));
    if let Some(v) = violation {
        let (status, text) = match v {
            Violation::Timeout => (
                Status::TimeLimitExceeded,
                format!("Time limit exceeded: the program ran for more than {:.1} s.", budget.as_secs_f64()),
            ),
            Violation::Memory => (Status::MemoryLimitExceeded, "Memory limit exceeded.".to_string()),
            Violation::Output => (Status::OutputLimitExceeded, "Too much output was generated.".to_string()),
        };
        test.status = Some(status);
        test.messages.push(Message::plain(text));
        test.messages.extend(stderr());
        return test;
    }

    let wanted_exit = case.expected_exit.unwrap_or(0);
    match outcome.exit_code {
        Some(code) if code == wanted_exit => {}
        // A chosen nonzero exit status that differs from the expected one is
        // a wrong answer; anything else is a crash.
        Some(code) if case.expected_exit.is_some() && code < 128 => {
            test.status = Some(Status::Wrong);
            test.messages
                .push(Message::plain(format!("Exit status {code}, expected {wanted_exit}.")));
            return test;
        }
        code => {
            test.status = Some(Status::RuntimeError);
            let how = match code {
                Some(c) if c >= 128 => format!("The program was terminated by signal {}.", c - 128),
                Some(c) => format!("The program exited with status {c}."),
                None => "The program was terminated.".to_string(),
            };
            test.messages.push(Message::plain(how));
            test.messages.extend(stderr());
            return test;
        }
    }

    if compare(&generated, &case.expected_stdout, case.match_mode) {
        test.accepted = true;
    } else {
        let diff = layout(&text_diff(&generated, &case.expected_stdout), LayoutMode::Interleaved);
        test.messages.push(Message::code(render_plain(&diff)));
    }
    test
}

/// Runs every case of the suite through `launcher`, sequentially and in
/// order, each in a fresh process.
pub fn run_suite(spec: &TestSuiteSpec, metadata: &JudgeMetadata, launcher: &dyn ProcessLauncher) -> FeedbackTree {
    let cases = spec.case_count();
    let budget = case_budget(metadata.time_limit, cases);
    let output_limit = case_output_limit(metadata.output_limit, cases);
    let mut tabs = Vec::with_capacity(spec.tabs.len());
    for tab_spec in &spec.tabs {
        let mut tab = Tab {
            description: tab_spec.name.clone(),
            ..Tab::default()
        };
        for ctx_spec in &tab_spec.contexts {
            let mut context = Context {
                description: ctx_spec.description.clone(),
                ..Context::default()
            };
            for case in &ctx_spec.cases {
                let mut command: Vec<String> = spec.run_command.iter().map(|t| expand(t, metadata)).collect();
                command.extend(case.args.iter().cloned());
                let exec = ExecutionSpec {
                    image: ImageRef::host_process(),
                    command,
                    stdin: StdinSource::Bytes(case.stdin.clone().into_bytes()),
                    workdir: metadata.workdir_path.clone(),
                    mounts: Vec::new(),
                    time_limit: budget,
                    memory_limit: metadata.memory_limit,
                    output_limit,
                    network_allowed: false,
                };
                let test = match launcher.launch(&exec) {
                    Ok(outcome) => grade_case(case, &outcome, budget),
                    Err(e) => {
                        let mut t = Test::new("", case.expected_stdout.clone(), false);
                        t.description = case.description.clone();
                        t.status = Some(Status::RuntimeError);
                        t.messages.push(Message::plain(format!("The program could not be started: {e}")));
                        t
                    }
                };
                context.testcases.push(TestCase {
                    description: None,
                    messages: Vec::new(),
                    tests: vec![test],
                });
            }
            tab.contexts.push(context);
        }
        tabs.push(tab);
    }
    let status = aggregate_status(tabs.iter().flat_map(Tab::tests).map(Test::implied_status));
    FeedbackTree {
        status,
        description: None,
        messages: Vec::new(),
        tabs,
    }
}

fn judge_failure(detail: String) -> FeedbackTree {
    FeedbackTree::verdict(
        Status::InternalError,
        vec![
            Message::plain("This exercise is misconfigured and could not be assessed."),
            Message::plain(detail).staff(),
        ],
    )
}

/// Whole judge run: reads metadata from `input`, loads the suite from the
/// resources directory and assesses. Always returns a valid tree.
pub fn judge_main(input: &mut dyn Read, launcher: &dyn ProcessLauncher) -> FeedbackTree {
    let mut raw = Vec::new();
    if let Err(e) = input.read_to_end(&mut raw) {
        return judge_failure(format!("reading metadata: {e}"));
    }
    let metadata: JudgeMetadata = match serde_json::from_slice(&raw) {
        Ok(m) => m,
        Err(e) => return judge_failure(format!("invalid metadata: {e}")),
    };
    let suite_path = metadata.resources_path.join(SUITE_FILE);
    match load_suite(&suite_path) {
        Ok(spec) => run_suite(&spec, &metadata, launcher),
        Err(e) => judge_failure(format!("{}: {e}", suite_path.display())),
    }
}

pub fn load_suite(path: &Path) -> Result<TestSuiteSpec, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    TestSuiteSpec::parse(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_modes() {
        assert!(!compare("a\n", "a", MatchMode::Exact));
        assert!(compare("a", "a", MatchMode::Exact));
        assert!(compare("a \n", "a", MatchMode::Trimmed));
        assert!(!compare("a b", "ab", MatchMode::Trimmed));
        assert!(compare("1  2", "1 2", MatchMode::Tokens));
        assert!(compare("1\n2\n", " 1 2", MatchMode::Tokens));
        assert!(!compare("1 2 3", "1 2", MatchMode::Tokens));
    }

    #[test]
    fn budget_heuristic() {
        assert_eq!(case_budget(2, 1), Duration::from_secs(2));
        assert_eq!(case_budget(10, 4), Duration::from_millis(2500));
        assert_eq!(case_budget(2, 10), Duration::from_secs(1));
    }

    #[test]
    fn suite_validation() {
        assert!(TestSuiteSpec::parse(br#"{"tabs":[]}"#).is_err());
        assert!(TestSuiteSpec::parse(br#"{"tabs":[{"contexts":[{"cases":[{"expected_stdout":"x","match":"fuzzy"}]}]}]}"#).is_err());
        let s = TestSuiteSpec::parse(br#"{"tabs":[{"contexts":[{"cases":[{"expected_stdout":"x"}]}]}]}"#).unwrap();
        assert_eq!(s.run_command, vec!["{submission}"]);
        assert_eq!(s.tabs[0].contexts[0].cases[0].match_mode, MatchMode::Exact);
    }
}
