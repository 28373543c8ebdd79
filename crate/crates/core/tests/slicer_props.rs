mod common;

use std::collections::BTreeSet;

use depgraph_rec::ir::{MiniProgram, StmtKind};
use depgraph_rec::slicer::{backward_slice, find_criteria, ProgramSlice, SliceStatement};
use proptest::prelude::*;

const TARGETS: [&str; 3] = ["Cipher.", "SecretKeySpec", "KeyGenerator.generateKey"];

fn slices(p: &MiniProgram, depth: usize) -> Vec<ProgramSlice> {
    find_criteria(p, &TARGETS).iter().map(|c| backward_slice(p, c, depth).unwrap()).collect()
}

/// Non-branch statements whose uses are not defined earlier in `stmts` and
/// are not parameters of the criterion's function.
fn undefined_uses(stmts: &[&SliceStatement], params: &BTreeSet<&str>) -> usize {
    let mut defined: BTreeSet<&str> = BTreeSet::new();
    let mut broken = 0;
    for s in stmts {
        let st = &s.statement;
        if st.kind != StmtKind::Branch {
            broken += st.uses.iter().filter(|u| !defined.contains(u.as_str()) && !params.contains(u.as_str())).count();
        }
        defined.extend(st.defs.iter().map(String::as_str));
    }
    broken
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn slices_are_sound(ops in common::ops(40), depth in 0usize..4) {
        let p = common::build_program(&ops, false);
        for sl in slices(&p, depth) {
            let params: BTreeSet<&str> = p.functions[&sl.criterion.function].params.iter().map(String::as_str).collect();
            let body = &sl.statements[..sl.statements.len() - 1];
            for v in &sl.criterion.slice_vars {
                let defined = body.iter().any(|s| s.statement.defs.contains(v));
                prop_assert!(defined || params.contains(v.as_str()), "`{}` has no definition in\n{}", v, sl.render());
            }
            let all: Vec<&SliceStatement> = sl.statements.iter().collect();
            prop_assert_eq!(undefined_uses(&all, &params), 0, "{}", sl.render());
        }
    }

    #[test]
    fn slices_are_minimal(ops in common::ops(14), depth in 0usize..4) {
        let p = common::build_program(&ops, true);
        prop_assume!(p.statement_count() <= 20);
        for sl in slices(&p, depth) {
            let params: BTreeSet<&str> = p.functions[&sl.criterion.function].params.iter().map(String::as_str).collect();
            let last = sl.statements.len() - 1;
            for drop in 0..last {
                if sl.statements[drop].statement.kind == StmtKind::Branch {
                    continue;
                }
                let kept: Vec<&SliceStatement> =
                    sl.statements.iter().enumerate().filter(|&(i, _)| i != drop).map(|(_, s)| s).collect();
                prop_assert!(undefined_uses(&kept, &params) > 0, "statement {} is removable from\n{}", drop, sl.render());
            }
        }
    }

    #[test]
    fn slicing_is_deterministic(ops in common::ops(40), depth in 0usize..4) {
        let p = common::build_program(&ops, false);
        let a: Vec<String> = slices(&p, depth).iter().map(ProgramSlice::render).collect();
        let b: Vec<String> = slices(&p, depth).iter().map(ProgramSlice::render).collect();
        prop_assert_eq!(a, b);
    }
}
