#![allow(dead_code)]

pub mod reference;

use std::collections::BTreeSet;

use depgraph_rec::ir::{Function, MiniProgram, Statement};

/// One generator step, interpreted by [`build_program`].
pub type Op = (u8, u8, u8, u8);

const APIS: [&str; 6] = [
    "Cipher.getInstance(String)",
    "Cipher.init(int,Key)",
    "KeyGenerator.getInstance(String)",
    "KeyGenerator.generateKey()",
    "MessageDigest.digest(byte[])",
    "String.getBytes()",
];

const LITERALS: [&str; 4] = ["\"AES\"", "1", "\"AES/CBC/PKCS5Padding\"", "128"];

pub const MAIN_PARAMS: [&str; 2] = ["in0", "in1"];

/// Builds a valid program from `ops`. `main` holds the random body and ends
/// with a `Cipher.doFinal` call; helpers `mk` (a key-spec factory) and `wrap`
/// (calls `mk`) are always present.
///
/// With `ssa`, every variable is defined once and each helper is called at
/// most once, so every inlined name is also defined once.
pub fn build_program(ops: &[Op], ssa: bool) -> MiniProgram {
    let mut defined: Vec<String> = MAIN_PARAMS.iter().map(|s| s.to_string()).collect();
    let mut regions: Vec<String> = Vec::new();
    let mut called: BTreeSet<&str> = BTreeSet::new();
    let mut body = Vec::new();
    let mut fresh = 0;
    let mut labels = 0;
    for &(kind, a, b, c) in ops {
        let pick = |x: u8, defined: &[String]| defined[x as usize % defined.len()].clone();
        let mut target = |x: u8, defined: &mut Vec<String>| -> String {
            if !ssa && x.is_multiple_of(3) {
                return pick(x / 3, defined);
            }
            fresh += 1;
            let v = format!("v{fresh}");
            defined.push(v.clone());
            v
        };
        let stmt = match kind % 6 {
            0 => {
                let d = target(a, &mut defined);
                Statement::const_load(&d, LITERALS[b as usize % LITERALS.len()])
            }
            1 => {
                let uses: Vec<String> = (0..b % 3).map(|i| pick(c.wrapping_add(i * 7), &defined)).collect();
                let uses: Vec<&str> = uses.iter().map(String::as_str).collect();
                let api = APIS[a as usize % APIS.len()];
                if c % 4 == 0 {
                    Statement::api_call(&[], api, &uses)
                } else {
                    let d = target(a, &mut defined);
                    Statement::api_call(&[&d], api, &uses)
                }
            }
            2 => {
                let u = pick(b, &defined);
                let d = target(a, &mut defined);
                Statement::assign(&[&d], &[&u])
            }
            3 => {
                labels += 1;
                let label = format!("L{labels}");
                let s = Statement::branch(&label, &[&pick(a, &defined)]);
                let s = match regions.last() {
                    Some(r) => s.under(r),
                    None => s,
                };
                regions.push(label);
                body.push(s);
                continue;
            }
            4 => {
                let callee = if a % 2 == 0 { "mk" } else { "wrap" };
                if ssa && !called.insert(callee) {
                    continue;
                }
                let arg = pick(b, &defined);
                let d = target(c, &mut defined);
                Statement::local_call(&[&d], callee, &[&arg])
            }
            _ => {
                regions.pop();
                continue;
            }
        };
        body.push(match regions.last() {
            Some(r) => stmt.under(r),
            None => stmt,
        });
    }
    let last = defined.last().cloned().unwrap();
    let crit = Statement::api_call(&["out"], "Cipher.doFinal(byte[])", &[&last]);
    body.push(match regions.last() {
        Some(r) => crit.under(r),
        None => crit,
    });
    body.push(Statement::ret(Some("out")));
    let main = Function::new("main", &MAIN_PARAMS, body);
    let mk = Function::new(
        "mk",
        &["p0"],
        vec![
            Statement::const_load("k", "\"AES\""),
            Statement::api_call(&["s"], "SecretKeySpec.<init>(byte[],String)", &["p0", "k"]),
            Statement::ret(Some("s")),
        ],
    );
    let wrap = Function::new(
        "wrap",
        &["q0"],
        vec![Statement::local_call(&["r"], "mk", &["q0"]), Statement::ret(Some("r"))],
    );
    MiniProgram::new("main", vec![main, mk, wrap]).expect("generated program is valid")
}

/// Random generator steps for proptest.
pub fn ops(max: usize) -> impl proptest::strategy::Strategy<Value = Vec<Op>> {
    proptest::collection::vec(proptest::arbitrary::any::<Op>(), 0..max)
}
