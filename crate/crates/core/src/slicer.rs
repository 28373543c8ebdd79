//! Interprocedural backward slicing from API callsites.
//!
//! Local callees are inlined (up to a depth cap) before slicing, so a slice is
//! a flat, ordered statement list that crosses function boundaries. Inlined
//! variables and region labels are renamed `callee$depth$name`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use thiserror::Error;

use crate::ir::{Function, MiniProgram, Statement, StmtKind};

pub const DEFAULT_MAX_CALL_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SliceError {
    #[error("invalid slicing criterion {function}[{index}]: {message}")]
    InvalidCriterion {
        function: String,
        index: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SliceCriterion {
    pub function: String,
    pub statement_index: usize,
    pub slice_vars: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceStatement {
    /// Function the statement was copied from.
    pub origin: String,
    pub statement: Statement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramSlice {
    pub criterion: SliceCriterion,
    /// Slice statements in program order after inlining; the criterion is last.
    pub statements: Vec<SliceStatement>,
    pub inline_depth_reached: usize,
    /// Parent region of every (renamed) region label seen while inlining.
    pub region_parents: BTreeMap<String, String>,
}

impl ProgramSlice {
    pub fn criterion_statement(&self) -> &Statement {
        &self.statements.last().expect("slice holds its criterion").statement
    }

    /// Tokens of the API and constant statements, criterion included.
    pub fn tokens(&self) -> Vec<&crate::ir::ApiSignature> {
        self.statements.iter().filter_map(|s| s.statement.token()).collect()
    }

    /// Deterministic text dump, one statement per line.
    pub fn render(&self) -> String {
        let mut out = format!(
            "slice {}[{}] depth={}\n",
            self.criterion.function, self.criterion.statement_index, self.inline_depth_reached
        );
        for s in &self.statements {
            out.push_str(&format!("  {}[{}] {}\n", s.origin, s.statement.index, s.statement));
        }
        out
    }
}

/// One criterion per API callsite whose signature starts with any prefix,
/// ordered by function name and statement index.
pub fn find_criteria(program: &MiniProgram, target_api_prefixes: &[&str]) -> Vec<SliceCriterion> {
    let mut out = Vec::new();
    for (name, f) in &program.functions {
        for s in &f.body {
            if s.kind != StmtKind::ApiCall {
                continue;
            }
            let Some(api) = &s.api else { continue };
            if target_api_prefixes.iter().any(|p| api.text.starts_with(p)) {
                out.push(SliceCriterion {
                    function: name.clone(),
                    statement_index: s.index,
                    slice_vars: s.uses.iter().cloned().collect(),
                });
            }
        }
    }
    out
}

/// Walks region labels from `region` up to the top level (inclusive of both).
pub(crate) fn region_chain<'a>(
    region: &'a str,
    parents: &'a BTreeMap<String, String>,
) -> Vec<&'a str> {
    let mut chain = vec![region];
    let mut cur = region;
    while !cur.is_empty() {
        cur = parents.get(cur).map(String::as_str).unwrap_or("");
        if chain.contains(&cur) {
            break;
        }
        chain.push(cur);
    }
    chain
}

/// Definitions of `var` that may reach position `pos` in a straight-line
/// statement list with nested control regions.
///
/// The backward scan collects every definition and stops at the first one
/// whose region encloses (or equals) the use's region; definitions in
/// sibling regions may or may not execute.
pub(crate) fn reaching_defs<'a, I>(
    statements: I,
    pos: usize,
    var: &str,
    use_region: &str,
    parents: &BTreeMap<String, String>,
) -> Vec<usize>
where
    I: Fn(usize) -> &'a Statement,
{
    let chain = region_chain(use_region, parents);
    let mut out = Vec::new();
    for q in (0..pos).rev() {
        let s = statements(q);
        if s.defs.iter().any(|d| d == var) {
            out.push(q);
            if chain.contains(&s.control_dep.as_str()) {
                break;
            }
        }
    }
    out
}

struct Inliner<'p> {
    program: &'p MiniProgram,
    max_depth: usize,
    out: Vec<SliceStatement>,
    parents: BTreeMap<String, String>,
    reached: usize,
}

impl<'p> Inliner<'p> {
    fn rename(prefix: &Option<String>, name: &str) -> String {
        match prefix {
            Some(p) => format!("{p}{name}"),
            None => name.to_string(),
        }
    }

    /// Appends `f`'s body (up to and including `stop_at`) with callees inlined.
    fn inline(
        &mut self,
        f: &'p Function,
        depth: usize,
        prefix: Option<String>,
        outer_region: &str,
        stack: &mut Vec<&'p str>,
        stop_at: Option<usize>,
    ) {
        let region_of = |s: &Statement| {
            if s.control_dep.is_empty() {
                outer_region.to_string()
            } else {
                Self::rename(&prefix, &s.control_dep)
            }
        };
        for s in &f.body {
            if stop_at.is_some_and(|stop| s.index > stop) {
                break;
            }
            if s.kind == StmtKind::Return && prefix.is_some() {
                continue;
            }
            let region = region_of(s);
            if s.kind == StmtKind::LocalCall && depth < self.max_depth {
                let callee_name = s.callee.as_deref().unwrap_or_default();
                let callee = &self.program.functions[callee_name];
                if !stack.contains(&callee.name.as_str()) {
                    let inner_depth = depth + 1;
                    self.reached = self.reached.max(inner_depth);
                    let inner_prefix = Some(format!("{}${}$", callee.name, inner_depth));
                    for (param, arg) in callee.params.iter().zip(&s.uses) {
                        let mut bind = Statement::assign(&[], &[]);
                        bind.index = s.index;
                        bind.defs = vec![Self::rename(&inner_prefix, param)];
                        bind.uses = vec![Self::rename(&prefix, arg)];
                        bind.control_dep = region.clone();
                        self.out.push(SliceStatement {
                            origin: f.name.clone(),
                            statement: bind,
                        });
                    }
                    stack.push(&callee.name);
                    self.inline(callee, inner_depth, inner_prefix.clone(), &region, stack, None);
                    stack.pop();
                    if let (Some(def), Some(ret)) = (s.defs.first(), &callee.returns) {
                        let mut bind = Statement::assign(&[], &[]);
                        bind.index = s.index;
                        bind.defs = vec![Self::rename(&prefix, def)];
                        bind.uses = vec![Self::rename(&inner_prefix, ret)];
                        bind.control_dep = region.clone();
                        self.out.push(SliceStatement {
                            origin: f.name.clone(),
                            statement: bind,
                        });
                    }
                    continue;
                }
            }
            let mut copy = s.clone();
            copy.defs = s.defs.iter().map(|d| Self::rename(&prefix, d)).collect();
            copy.uses = s.uses.iter().map(|u| Self::rename(&prefix, u)).collect();
            copy.control_dep = region.clone();
            if let Some(label) = &s.label {
                let renamed = Self::rename(&prefix, label);
                self.parents.insert(renamed.clone(), region.clone());
                copy.label = Some(renamed);
            }
            self.out.push(SliceStatement {
                origin: f.name.clone(),
                statement: copy,
            });
        }
    }
}

fn check_criterion<'a>(
    program: &'a MiniProgram,
    criterion: &SliceCriterion,
) -> Result<&'a Function, SliceError> {
    let bad = |message: &str| SliceError::InvalidCriterion {
        function: criterion.function.clone(),
        index: criterion.statement_index,
        message: message.to_string(),
    };
    let f = program
        .functions
        .get(&criterion.function)
        .ok_or_else(|| bad("no such function"))?;
    let s = f
        .body
        .get(criterion.statement_index)
        .ok_or_else(|| bad("no such statement"))?;
    if s.kind != StmtKind::ApiCall {
        return Err(bad("criterion must be an api call"));
    }
    if !criterion.slice_vars.iter().all(|v| s.uses.contains(v)) {
        return Err(bad("slice variables must be used by the criterion"));
    }
    Ok(f)
}

/// Computes the backward slice of `criterion`, inlining local callees up to
/// `max_call_depth` levels. Calls beyond the cap, and recursive calls, stay in
/// the slice as opaque statements.
pub fn backward_slice(
    program: &MiniProgram,
    criterion: &SliceCriterion,
    max_call_depth: usize,
) -> Result<ProgramSlice, SliceError> {
    let f = check_criterion(program, criterion)?;
    let mut inliner = Inliner {
        program,
        max_depth: max_call_depth,
        out: Vec::new(),
        parents: BTreeMap::new(),
        reached: 0,
    };
    let mut stack = vec![f.name.as_str()];
    inliner.inline(f, 0, None, "", &mut stack, Some(criterion.statement_index));
    let Inliner {
        out: flat,
        parents,
        reached,
        ..
    } = inliner;
    let crit_pos = flat.len() - 1;
    let stmt_at = |q: usize| &flat[q].statement;

    let mut included: BTreeSet<usize> = BTreeSet::new();
    included.insert(crit_pos);
    let crit_region = flat[crit_pos].statement.control_dep.clone();
    let mut work: Vec<(usize, String)> = criterion
        .slice_vars
        .iter()
        .map(|v| (crit_pos, v.clone()))
        .collect();
    let mut chased: HashSet<(usize, String)> = HashSet::new();
    while let Some((pos, var)) = work.pop() {
        if !chased.insert((pos, var.clone())) {
            continue;
        }
        let region = &flat[pos].statement.control_dep;
        for q in reaching_defs(stmt_at, pos, &var, region, &parents) {
            if included.insert(q) {
                for u in &flat[q].statement.uses {
                    work.push((q, u.clone()));
                }
            }
        }
    }

    for label in region_chain(&crit_region, &parents) {
        if label.is_empty() {
            continue;
        }
        if let Some(q) = flat[..crit_pos].iter().position(|s| {
            s.statement.kind == StmtKind::Branch && s.statement.label.as_deref() == Some(label)
        }) {
            included.insert(q);
        }
    }

    Ok(ProgramSlice {
        criterion: criterion.clone(),
        statements: included.into_iter().map(|q| flat[q].clone()).collect(),
        inline_depth_reached: reached,
        region_parents: parents,
    })
}
