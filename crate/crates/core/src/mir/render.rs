use std::fmt;

use super::{Function, Instruction, Opcode, Operand, Program};
use crate::bv::Taint;

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => f.write_str(&r.name),
            Operand::Imm(v) => write!(f, "#{}", v.value()),
            Operand::Label(l) => f.write_str(l),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ops = &self.operands;
        match self.opcode {
            Opcode::Label => write!(f, "label {}:", ops[0]),
            Opcode::Br => write!(f, "br {}", ops[0]),
            Opcode::Brz => write!(f, "brz {}, {}", ops[0], ops[1]),
            Opcode::Store => write!(f, "store [{}], {}", ops[0], ops[1]),
            Opcode::Ret if ops.is_empty() => f.write_str("ret"),
            Opcode::Ret => write!(f, "ret {}", ops[0]),
            op => {
                let dest = self.dest.as_ref().expect("assignment has a destination");
                write!(f, "{}:{} = {op} ", dest.name, dest.width)?;
                match op {
                    Opcode::Load => write!(f, "[{}]", ops[0]),
                    Opcode::Sbfx | Opcode::Ubfx => {
                        let (hi, lo) = self.field.expect("bitfield range");
                        write!(f, "{}, #{lo}, #{}", ops[0], hi - lo + 1)
                    }
                    _ => {
                        for (i, o) in ops.iter().enumerate() {
                            if i > 0 {
                                f.write_str(", ")?;
                            }
                            write!(f, "{o}")?;
                        }
                        Ok(())
                    }
                }
            }
        }
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "func {}(", self.name)?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            let taint = match p.taint {
                Taint::Public => "public",
                Taint::Secret => "secret",
            };
            let sign = if p.signed { 'i' } else { 'u' };
            write!(f, "{}: {taint} {sign}{}", p.name, p.width)?;
        }
        f.write_str(") {\n")?;
        for (label, bound) in &self.loops {
            match bound {
                Some(n) => writeln!(f, "    loop {label} bound {n}")?,
                None => writeln!(f, "    loop {label}")?,
            }
        }
        for inst in &self.body {
            writeln!(f, "    {inst}")?;
        }
        f.write_str("}\n")
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, func) in self.functions.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{func}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use crate::mir::parse;

    #[test]
    fn round_trips() {
        let src = "\
func k(m: secret u8, p: public u16) {
    loop top bound 4
    rj:8 = mov #0
    label top:
    r1 = lsr m, rj
    r2 = and r1, #1
    r3:16 = zext r2
    r4 = sub #0, r3
    r5:32 = sbfx r4, #3, #2
    r6:8 = load [p]
    store [p], r6
    rj = add rj, #1
    br top
    ret r5
}
func g(x: secret u8) {
    r0 = not x
}
";
        let p = parse(src).unwrap();
        let text = p.to_string();
        assert_eq!(parse(&text).unwrap(), p);
        assert_eq!(parse(&text).unwrap().to_string(), text);
    }
}
