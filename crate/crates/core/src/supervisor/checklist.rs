//! Checklist files.
//!
//! Each agent's TODO list lives in the workspace at `todo_<name>.txt`; the
//! file is the single source of truth and is parsed on demand, so what an
//! agent (or the supervisor) reads always matches what monitoring sees.
//! An absent file is an empty, complete checklist.
//!
//! Item grammar: a line starting with `-`, `*`, or `<digits>.` is an item;
//! an item is done when it contains `[done]` (any case). Other lines are
//! prose and ignored.

use crate::workspace::{ResolveOutcome, Workspace, WorkspaceError, WriteOutcome};

/// One checklist line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChecklistItem {
    pub text: String,
    pub done: bool,
}

/// Parsed view of a `todo_<name>.txt` file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Checklist {
    pub items: Vec<ChecklistItem>,
}

impl Checklist {
    pub fn parse(content: &str) -> Self {
        let mut items = Vec::new();
        for line in content.lines() {
            let trimmed = line.trim_start();
            let body = if let Some(rest) = trimmed.strip_prefix('-') {
                Some(rest)
            } else if let Some(rest) = trimmed.strip_prefix('*') {
                Some(rest)
            } else {
                trimmed
                    .split_once('.')
                    .filter(|(n, _)| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
                    .map(|(_, rest)| rest)
            };
            if let Some(body) = body {
                let text = body.trim().to_string();
                if !text.is_empty() {
                    let done = text.to_lowercase().contains("[done]");
                    items.push(ChecklistItem { text, done });
                }
            }
        }
        Checklist { items }
    }

    /// Complete means no open items (an empty checklist is complete).
    pub fn is_complete(&self) -> bool {
        self.items.iter().all(|i| i.done)
    }

    pub fn open_items(&self) -> Vec<&str> {
        self.items
            .iter()
            .filter(|i| !i.done)
            .map(|i| i.text.as_str())
            .collect()
    }
}

/// Workspace path of an agent's checklist.
pub fn todo_path(agent: &str) -> String {
    format!("todo_{agent}.txt")
}

/// Read and parse an agent's checklist; absent file means empty.
pub fn read_checklist(workspace: &Workspace, agent: &str) -> Checklist {
    match workspace.read(&todo_path(agent)) {
        Ok((content, _)) => Checklist::parse(&content),
        Err(_) => Checklist::default(),
    }
}

/// Append an item to an agent's checklist. The supervisor merges by
/// re-reading on conflict, so concurrent agent writes are never lost.
pub fn append_item(workspace: &Workspace, agent: &str, item: &str) -> Result<(), WorkspaceError> {
    let path = todo_path(agent);
    // bounded retry; each attempt re-reads the latest head
    for _ in 0..16 {
        let current = workspace.read(&path).ok();
        let (mut content, base) = match current {
            Some((content, hash)) => (content, Some(hash)),
            None => (String::new(), None),
        };
        if !content.is_empty() && !content.ends_with('\n') {
            content.push('\n');
        }
        content.push_str(&format!("- {item}\n"));
        match workspace.write(
            &path,
            &content,
            base.as_ref(),
            crate::runtime::SUPERVISOR_SENDER,
        )? {
            WriteOutcome::Committed(_) => return Ok(()),
            WriteOutcome::Conflict(report) => {
                // merge: head content + our new line
                let mut merged = report.head_content.clone();
                if !merged.is_empty() && !merged.ends_with('\n') {
                    merged.push('\n');
                }
                merged.push_str(&format!("- {item}\n"));
                match workspace.resolve_conflict(
                    &report,
                    &merged,
                    crate::runtime::SUPERVISOR_SENDER,
                )? {
                    ResolveOutcome::Committed(_) => return Ok(()),
                    ResolveOutcome::Stale(_) => continue,
                }
            }
        }
    }
    unreachable!("checklist append retry budget exhausted only under livelock")
}

/// Copy a checklist file to a replacement agent (no-op when absent).
pub fn copy_checklist(workspace: &Workspace, from: &str, to: &str) -> Result<(), WorkspaceError> {
    if let Ok((content, _)) = workspace.read(&todo_path(from)) {
        let base = workspace.head(&todo_path(to));
        workspace.write(
            &todo_path(to),
            &content,
            base.as_ref(),
            crate::runtime::SUPERVISOR_SENDER,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dashes_stars_and_numbers() {
        let c = Checklist::parse(
            "My plan:\n- write the parser [done]\n* test the parser\n3. ship it\nnot an item\n",
        );
        assert_eq!(c.items.len(), 3);
        assert!(c.items[0].done);
        assert!(!c.items[1].done);
        assert_eq!(c.items[2].text, "ship it");
        assert!(!c.is_complete());
        assert_eq!(c.open_items(), vec!["test the parser", "ship it"]);
    }

    #[test]
    fn done_marker_is_case_insensitive() {
        let c = Checklist::parse("- a [DONE]\n- b [Done]\n");
        assert!(c.is_complete());
    }

    #[test]
    fn empty_and_prose_only_files_are_complete() {
        assert!(Checklist::parse("").is_complete());
        assert!(Checklist::parse("notes without items\n").is_complete());
    }

    #[test]
    fn file_roundtrip_stays_coherent() {
        // Every mutation goes through the file; re-reading reproduces it.
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert!(read_checklist(&ws, "Bob").is_complete());
        append_item(&ws, "Bob", "write features.txt").unwrap();
        append_item(&ws, "Bob", "hand off to Alice").unwrap();
        let parsed = read_checklist(&ws, "Bob");
        assert_eq!(parsed.items.len(), 2);
        assert!(!parsed.is_complete());
        let (content, _) = ws.read("todo_Bob.txt").unwrap();
        assert_eq!(Checklist::parse(&content), parsed);
    }

    #[test]
    fn concurrent_appends_are_never_lost() {
        let dir = tempfile::tempdir().unwrap();
        let ws = std::sync::Arc::new(Workspace::open(dir.path()).unwrap());
        std::thread::scope(|s| {
            for t in 0..4 {
                let ws = ws.clone();
                s.spawn(move || {
                    for i in 0..10 {
                        append_item(&ws, "X", &format!("item {t}-{i}")).unwrap();
                    }
                });
            }
        });
        let parsed = read_checklist(&ws, "X");
        assert_eq!(parsed.items.len(), 40);
    }

    #[test]
    fn copy_carries_content_and_tolerates_absence() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        copy_checklist(&ws, "nobody", "new").unwrap();
        assert!(ws.head(&todo_path("new")).is_none());
        append_item(&ws, "Dan", "finish the report").unwrap();
        copy_checklist(&ws, "Dan", "Dan_2").unwrap();
        assert_eq!(read_checklist(&ws, "Dan_2").items.len(), 1);
    }
}
