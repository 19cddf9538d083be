//! Decomposition parsing.
//!
//! The Boss answers the meta-prompt with a plan in lightweight tags:
//!
//! ```text
//! <employee name="Alice">system prompt for Alice</employee>
//! <employee name="Bob">system prompt for Bob</employee>
//! <beginner>Bob</beginner>
//! ```
//!
//! Each well-formed block recruits one top-level agent; the optional
//! beginner tag names who gets the kickoff message. Malformed blocks are
//! reported and skipped, never fatal: the caller decides whether a plan
//! with zero employees is worth a retry.

use crate::runtime::{validate_agent_name, BOSS_NAME};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmployeeSpec {
    pub name: String,
    pub prompt: String,
}

/// A parsed decomposition plus everything wrong with it.
#[derive(Debug, Clone, Default)]
pub struct DecompositionPlan {
    pub employees: Vec<EmployeeSpec>,
    pub beginner: Option<String>,
    pub problems: Vec<String>,
}

pub fn parse_decomposition(text: &str) -> DecompositionPlan {
    let mut plan = DecompositionPlan::default();
    let mut cursor = 0usize;
    while let Some(found) = text[cursor..].find("<employee") {
        let open_at = cursor + found;
        let Some(tag_len) = text[open_at..].find('>') else {
            plan.problems.push("unterminated <employee tag".to_string());
            break;
        };
        let tag = &text[open_at..open_at + tag_len];
        let body_start = open_at + tag_len + 1;
        let Some(close_rel) = text[body_start..].find("</employee>") else {
            plan.problems
                .push("employee block missing </employee>".to_string());
            break;
        };
        cursor = body_start + close_rel + "</employee>".len();
        let Some(name) = attr_value(tag, "name") else {
            plan.problems
                .push(format!("employee tag without name attribute: {tag}>"));
            continue;
        };
        if let Err(e) = validate_agent_name(&name) {
            plan.problems.push(e.to_string());
            continue;
        }
        if name == BOSS_NAME {
            plan.problems
                .push(format!("employee may not be named {BOSS_NAME}"));
            continue;
        }
        if plan.employees.iter().any(|e| e.name == name) {
            plan.problems
                .push(format!("duplicate employee name {name}"));
            continue;
        }
        let prompt = text[body_start..body_start + close_rel].trim().to_string();
        if prompt.is_empty() {
            plan.problems
                .push(format!("employee {name} has an empty prompt"));
            continue;
        }
        plan.employees.push(EmployeeSpec { name, prompt });
    }

    if let Some(start) = text.find("<beginner>") {
        let rest = &text[start + "<beginner>".len()..];
        match rest.find("</beginner>") {
            Some(end) => {
                let name = rest[..end].trim().to_string();
                if plan.employees.iter().any(|e| e.name == name) {
                    plan.beginner = Some(name);
                } else {
                    plan.problems
                        .push(format!("beginner {name} matches no employee"));
                }
            }
            None => plan
                .problems
                .push("unterminated <beginner> tag".to_string()),
        }
    }
    plan
}

fn attr_value(tag: &str, attr: &str) -> Option<String> {
    let marker = format!("{attr}=\"");
    let start = tag.find(&marker)? + marker.len();
    let end = tag[start..].find('"')?;
    Some(tag[start..start + end].to_string())
}
