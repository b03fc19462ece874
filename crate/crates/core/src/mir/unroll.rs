use std::collections::{BTreeMap, HashMap, HashSet};

use super::{Function, Instruction, Opcode, UnrollError};

pub const DEFAULT_UNROLL: u32 = 8;

/// Iteration counts for loops that do not state their own bound.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopBounds {
    pub default: u32,
    pub overrides: BTreeMap<String, u32>,
}

impl Default for LoopBounds {
    fn default() -> Self {
        LoopBounds {
            default: DEFAULT_UNROLL,
            overrides: BTreeMap::new(),
        }
    }
}

impl LoopBounds {
    pub fn with_default(default: u32) -> Self {
        LoopBounds {
            default,
            overrides: BTreeMap::new(),
        }
    }
}

struct Unroller<'a> {
    f: &'a Function,
    bounds: &'a LoopBounds,
    label_pos: HashMap<&'a str, usize>,
    out: Vec<Instruction>,
}

impl<'a> Unroller<'a> {
    fn bound(&self, label: &str) -> Result<u32, UnrollError> {
        let n = match self.f.loops.get(label) {
            Some(Some(n)) => *n,
            _ => self
                .bounds
                .overrides
                .get(label)
                .copied()
                .unwrap_or(self.bounds.default),
        };
        if n == 0 {
            return Err(UnrollError::ZeroBound(label.to_string()));
        }
        Ok(n)
    }

    /// Position of the last `br label` in `start..end`, if any.
    fn back_edge(&self, label: &str, start: usize, end: usize) -> Option<usize> {
        (start..end).rev().find(|&j| {
            let inst = &self.f.body[j];
            inst.opcode == Opcode::Br && inst.label() == Some(label)
        })
    }

    fn expand(&mut self, start: usize, end: usize, iteration: &[u32]) -> Result<(), UnrollError> {
        let mut i = start;
        while i < end {
            let inst = &self.f.body[i];
            match inst.opcode {
                Opcode::Label => {
                    let label = inst.label().expect("label operand");
                    if let Some(j) = self.back_edge(label, i + 1, end) {
                        if !self.f.loops.contains_key(label) {
                            return Err(UnrollError::UnboundedLoop {
                                label: label.to_string(),
                                address: self.f.body[j].address,
                            });
                        }
                        let n = self.bound(label)?;
                        let mut inner = iteration.to_vec();
                        inner.push(0);
                        for k in 0..n {
                            *inner.last_mut().expect("nonempty") = k;
                            self.expand(i + 1, j, &inner)?;
                        }
                        i = j + 1;
                        continue;
                    }
                    self.emit(inst, iteration);
                }
                Opcode::Br | Opcode::Brz => {
                    let label = inst.label().expect("branch target");
                    if self.label_pos[label] < i {
                        let error = if inst.opcode == Opcode::Br && self.f.loops.contains_key(label)
                        {
                            UnrollError::Unstructured {
                                label: label.to_string(),
                                address: inst.address,
                            }
                        } else {
                            UnrollError::UnboundedLoop {
                                label: label.to_string(),
                                address: inst.address,
                            }
                        };
                        return Err(error);
                    }
                    self.emit(inst, iteration);
                }
                _ => self.emit(inst, iteration),
            }
            i += 1;
        }
        Ok(())
    }

    fn emit(&mut self, inst: &Instruction, iteration: &[u32]) {
        let mut copy = inst.clone();
        copy.origin.iteration.extend_from_slice(iteration);
        self.out.push(copy);
    }
}

/// Replaces every counted loop by that many copies of its body.
///
/// Registers keep their names across iterations, so the value a register held
/// in the previous iteration stays visible to transition leakage models.
/// Forward branches are left in place; labels that are no longer targeted are
/// dropped. Addresses are renumbered; [`Instruction::origin`] keeps the
/// original address and iteration indices.
pub fn unroll(f: &Function, bounds: &LoopBounds) -> Result<Function, UnrollError> {
    let label_pos = f
        .body
        .iter()
        .enumerate()
        .filter(|(_, i)| i.opcode == Opcode::Label)
        .map(|(pos, i)| (i.label().expect("label operand"), pos))
        .collect();
    let mut u = Unroller {
        f,
        bounds,
        label_pos,
        out: Vec::new(),
    };
    u.expand(0, f.body.len(), &[])?;

    let targeted: HashSet<String> = u
        .out
        .iter()
        .filter(|i| matches!(i.opcode, Opcode::Br | Opcode::Brz))
        .filter_map(|i| i.label().map(str::to_string))
        .collect();
    let mut body: Vec<Instruction> = u
        .out
        .into_iter()
        .filter(|i| i.opcode != Opcode::Label || targeted.contains(i.label().unwrap_or("")))
        .collect();
    for (addr, inst) in body.iter_mut().enumerate() {
        inst.address = addr as u32;
    }
    Ok(Function {
        name: f.name.clone(),
        params: f.params.clone(),
        body,
        loops: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::parse;

    fn func(src: &str) -> Function {
        parse(src).unwrap().functions.remove(0)
    }

    const LOOP: &str = "\
func k(m: secret u8) {
    loop top bound 3
    rj:8 = mov #0
    label top:
    r1 = lsr m, rj
    rj = add rj, #1
    br top
    r2 = not r1
}";

    #[test]
    fn copies_body_bound_times() {
        let f = func(LOOP);
        let u = unroll(&f, &LoopBounds::default()).unwrap();
        assert!(u.is_straight_line());
        assert_eq!(u.body.len(), 1 + 2 * 3 + 1);
        assert_eq!(u.body[3].origin.address, 2);
        assert_eq!(u.body[3].origin.iteration, vec![1]);
        assert_eq!(u.body[7].origin.iteration, Vec::<u32>::new());
        assert!(u
            .body
            .iter()
            .enumerate()
            .all(|(a, i)| i.address == a as u32));
    }

    #[test]
    fn default_bound_applies_to_bare_declarations() {
        let f = func(&LOOP.replace("loop top bound 3", "loop top"));
        let u = unroll(&f, &LoopBounds::with_default(5)).unwrap();
        assert_eq!(u.body.len(), 2 + 2 * 5);
    }

    #[test]
    fn nested_loops_multiply() {
        let src = "\
func n(m: secret u8) {
    loop outer bound 2
    loop inner bound 3
    r0:8 = mov #0
    label outer:
    label inner:
    r0 = add r0, m
    br inner
    r0 = xor r0, #1
    br outer
}";
        let u = unroll(&func(src), &LoopBounds::default()).unwrap();
        assert_eq!(u.body.len(), 1 + 2 * (3 + 1));
        assert_eq!(u.body[6].origin.iteration, vec![1, 1]);
    }

    #[test]
    fn undeclared_back_edge_is_rejected() {
        let src = LOOP.replace("    loop top bound 3\n", "");
        let e = unroll(&func(&src), &LoopBounds::default()).unwrap_err();
        assert!(matches!(e, UnrollError::UnboundedLoop { .. }));
    }

    #[test]
    fn conditional_back_edge_is_rejected() {
        let src = LOOP.replace("br top", "brz r1, top");
        let e = unroll(&func(&src), &LoopBounds::default()).unwrap_err();
        assert!(matches!(e, UnrollError::UnboundedLoop { .. }));
    }

    #[test]
    fn forward_branches_survive() {
        let src = "\
func f(x: secret u8) {
    brz x, done
    r0 = not x
    label done:
}";
        let u = unroll(&func(src), &LoopBounds::default()).unwrap();
        assert_eq!(u.body.len(), 3);
        assert!(!u.is_straight_line());
    }
}
