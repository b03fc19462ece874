use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Function, Opcode, TaintDecl};
use crate::bv::Taint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    SecretBranch,
    SecretLoadAddress,
    SecretStoreAddress,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub address: u32,
    pub line: usize,
    pub kind: ViolationKind,
    pub register: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::SecretBranch => "branch condition",
            ViolationKind::SecretLoadAddress => "load address",
            ViolationKind::SecretStoreAddress => "store address",
        };
        write!(
            f,
            "address {} (line {}): {what} `{}` depends on a secret",
            self.address, self.line, self.register
        )
    }
}

/// Registers that may carry secret-dependent values, computed as a
/// flow-insensitive fixpoint. Memory is one abstract cell: once a tainted
/// value is stored anywhere, every load is tainted.
pub fn taint_closure(f: &Function, decl: &TaintDecl) -> BTreeSet<String> {
    let mut tainted: BTreeSet<String> = f
        .params
        .iter()
        .filter(|p| decl.get(&p.name).unwrap_or(p.taint) == Taint::Secret)
        .map(|p| p.name.clone())
        .collect();
    let mut memory = false;
    loop {
        let mut changed = false;
        for inst in &f.body {
            let any = inst.reg_operands().any(|r| tainted.contains(&r.name));
            match inst.opcode {
                Opcode::Store => {
                    if !memory && any {
                        memory = true;
                        changed = true;
                    }
                }
                _ => {
                    let taint = any || (inst.opcode == Opcode::Load && memory);
                    if let Some(d) = &inst.dest {
                        if taint && tainted.insert(d.name.clone()) {
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            return tainted;
        }
    }
}

/// Finds branches and memory accesses whose condition or address may depend
/// on a secret.
pub fn ct_check(f: &Function, decl: &TaintDecl) -> Vec<Violation> {
    let tainted = taint_closure(f, decl);
    let mut out = Vec::new();
    for inst in &f.body {
        let kind = match inst.opcode {
            Opcode::Brz => ViolationKind::SecretBranch,
            Opcode::Load => ViolationKind::SecretLoadAddress,
            Opcode::Store => ViolationKind::SecretStoreAddress,
            _ => continue,
        };
        let reg = inst.reg_operands().next().expect("condition or address");
        if tainted.contains(&reg.name) {
            out.push(Violation {
                address: inst.address,
                line: inst.line,
                kind,
                register: reg.name.clone(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::parse;

    fn check(src: &str) -> Vec<Violation> {
        let f = parse(src).unwrap().functions.remove(0);
        ct_check(&f, &TaintDecl::from_function(&f))
    }

    #[test]
    fn secret_branch() {
        let v = check("func f(k: secret u8) {\n r0 = and k, #1\n brz r0, end\n label end:\n}");
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::SecretBranch);
        assert_eq!(v[0].line, 3);
    }

    #[test]
    fn secret_indexed_load() {
        let v = check("func f(k: secret u32) {\n r0 = and k, #15\n r1:8 = load [r0]\n}");
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::SecretLoadAddress);
    }

    #[test]
    fn public_control_is_clean() {
        let v = check(
            "func f(p: public u32, k: secret u32) {\n r0:32 = load [p]\n r1 = xor r0, k\n brz p, end\n label end:\n}",
        );
        assert!(v.is_empty());
    }

    #[test]
    fn taint_flows_through_memory() {
        let src = "func f(p: public u32, k: secret u32) {\n store [p], k\n r0:32 = load [p]\n r1:8 = load [r0]\n}";
        let v = check(src);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].address, 2);
    }

    #[test]
    fn declaration_overrides_signature() {
        let f = parse("func f(k: secret u8) {\n brz k, end\n label end:\n}")
            .unwrap()
            .functions
            .remove(0);
        let mut decl = TaintDecl::from_function(&f);
        decl.0.insert("k".into(), Taint::Public);
        assert!(ct_check(&f, &decl).is_empty());
    }
}
