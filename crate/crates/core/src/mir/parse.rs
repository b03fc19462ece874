use std::collections::{BTreeMap, HashMap, HashSet};

use super::{
    Function, Instruction, Opcode, Operand, Origin, Param, ParseError, ParseErrorKind, Program, Reg,
};
use crate::bv::{mask, BitVector, Taint, MAX_WIDTH};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(u64),
    Imm(i128),
    Punct(char),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    col: usize,
}

fn err(line: usize, column: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, column, kind }
}

fn syntax(line: usize, column: usize, msg: impl Into<String>) -> ParseError {
    err(line, column, ParseErrorKind::Syntax(msg.into()))
}

fn parse_int(text: &str) -> Option<u64> {
    if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else if let Some(bin) = text.strip_prefix("0b") {
        u64::from_str_radix(bin, 2).ok()
    } else {
        text.parse().ok()
    }
}

fn tokenize(line_no: usize, text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == ';' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                col,
            });
            continue;
        }
        if c.is_ascii_digit() || c == '#' {
            let imm = c == '#';
            if imm {
                i += 1;
            }
            let neg = imm && i < chars.len() && chars[i] == '-';
            if neg {
                i += 1;
            }
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let digits: String = chars[start..i].iter().collect();
            let v = parse_int(&digits)
                .ok_or_else(|| syntax(line_no, col, format!("bad number `{digits}`")))?;
            let tok = if imm {
                let v = v as i128;
                Tok::Imm(if neg { -v } else { v })
            } else {
                Tok::Num(v)
            };
            out.push(Token { tok, col });
            continue;
        }
        if "(){},:=[]".contains(c) {
            out.push(Token {
                tok: Tok::Punct(c),
                col,
            });
            i += 1;
            continue;
        }
        return Err(syntax(line_no, col, format!("unexpected character `{c}`")));
    }
    Ok(out)
}

/// Cursor over the tokens of one line.
struct Line<'a> {
    no: usize,
    toks: &'a [Token],
    pos: usize,
    end_col: usize,
}

impl<'a> Line<'a> {
    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        syntax(self.no, self.col(), msg)
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), ParseError> {
        let col = self.col();
        match self.next() {
            Some(Token {
                tok: Tok::Ident(s), ..
            }) => Ok((s.clone(), col)),
            _ => Err(syntax(self.no, col, format!("expected {what}"))),
        }
    }

    fn punct(&mut self, c: char) -> Result<(), ParseError> {
        let col = self.col();
        match self.next() {
            Some(Token {
                tok: Tok::Punct(p), ..
            }) if *p == c => Ok(()),
            _ => Err(syntax(self.no, col, format!("expected `{c}`"))),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn num(&mut self, what: &str) -> Result<u64, ParseError> {
        let col = self.col();
        match self.next() {
            Some(Token {
                tok: Tok::Num(v), ..
            }) => Ok(*v),
            _ => Err(syntax(self.no, col, format!("expected {what}"))),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            Err(self.error("unexpected trailing tokens"))
        } else {
            Ok(())
        }
    }
}

fn parse_type(line: usize, col: usize, ty: &str) -> Result<(u32, bool), ParseError> {
    let (signed, digits) = match ty.split_at(1) {
        ("u", d) => (false, d),
        ("i", d) => (true, d),
        _ => return Err(syntax(line, col, format!("bad type `{ty}`"))),
    };
    let width: u32 = digits
        .parse()
        .map_err(|_| syntax(line, col, format!("bad type `{ty}`")))?;
    check_width(line, col, width as u64)?;
    Ok((width, signed))
}

fn check_width(line: usize, col: usize, width: u64) -> Result<u32, ParseError> {
    if width == 0 || width > MAX_WIDTH as u64 {
        return Err(err(
            line,
            col,
            ParseErrorKind::Width(format!("width {width} outside 1..={MAX_WIDTH}")),
        ));
    }
    Ok(width as u32)
}

fn immediate(line: usize, col: usize, value: i128, width: u32) -> Result<BitVector, ParseError> {
    let lo = -(1i128 << (width - 1));
    let hi = mask(width) as i128;
    if value < lo || value > hi {
        return Err(err(
            line,
            col,
            ParseErrorKind::Width(format!("immediate {value} does not fit in {width} bits")),
        ));
    }
    Ok(BitVector::from_raw(width, (value as u64) & mask(width)))
}

/// Unresolved operand: immediates get their width from context.
enum RawOperand {
    Reg(Reg),
    Imm(i128, usize),
}

struct FunctionParser {
    name: String,
    params: Vec<Param>,
    body: Vec<Instruction>,
    loops: BTreeMap<String, Option<u32>>,
    regs: HashMap<String, u32>,
    labels: HashSet<String>,
    targets: Vec<(String, usize, usize)>,
}

impl FunctionParser {
    fn operand(&self, l: &mut Line) -> Result<RawOperand, ParseError> {
        let col = l.col();
        match l.next().map(|t| &t.tok) {
            Some(Tok::Ident(name)) => {
                let width = *self
                    .regs
                    .get(name)
                    .ok_or_else(|| err(l.no, col, ParseErrorKind::UseBeforeDef(name.clone())))?;
                Ok(RawOperand::Reg(Reg {
                    name: name.clone(),
                    width,
                }))
            }
            Some(Tok::Imm(v)) => Ok(RawOperand::Imm(*v, col)),
            _ => Err(syntax(l.no, col, "expected register or immediate")),
        }
    }

    fn register(&self, l: &mut Line) -> Result<Reg, ParseError> {
        let col = l.col();
        match self.operand(l)? {
            RawOperand::Reg(r) => Ok(r),
            RawOperand::Imm(..) => Err(syntax(l.no, col, "expected register")),
        }
    }

    fn address(&self, l: &mut Line) -> Result<Reg, ParseError> {
        l.punct('[')?;
        let r = self.register(l)?;
        l.punct(']')?;
        Ok(r)
    }

    fn unsigned_imm(&self, l: &mut Line, what: &str) -> Result<u32, ParseError> {
        let col = l.col();
        match l.next().map(|t| &t.tok) {
            Some(Tok::Imm(v)) if (0..=MAX_WIDTH as i128).contains(v) => Ok(*v as u32),
            _ => Err(syntax(l.no, col, format!("expected {what} immediate"))),
        }
    }

    fn push(&mut self, line: usize, opcode: Opcode, dest: Option<Reg>, operands: Vec<Operand>) {
        let address = self.body.len() as u32;
        self.body.push(Instruction {
            address,
            origin: Origin {
                address,
                iteration: Vec::new(),
            },
            line,
            opcode,
            dest,
            operands,
            field: None,
        });
    }

    fn statement(&mut self, l: &mut Line) -> Result<(), ParseError> {
        let (head, head_col) = l.ident("instruction")?;
        match head.as_str() {
            "label" => {
                let (name, col) = l.ident("label name")?;
                l.punct(':')?;
                l.finish()?;
                if !self.labels.insert(name.clone()) {
                    return Err(err(l.no, col, ParseErrorKind::Duplicate(name)));
                }
                self.push(l.no, Opcode::Label, None, vec![Operand::Label(name)]);
            }
            "loop" => {
                let (name, col) = l.ident("loop label")?;
                let bound = if l.peek().is_some() {
                    let (kw, kw_col) = l.ident("`bound`")?;
                    if kw != "bound" {
                        return Err(syntax(l.no, kw_col, "expected `bound`"));
                    }
                    let n = l.num("loop bound")?;
                    Some(u32::try_from(n).map_err(|_| l.error("loop bound too large"))?)
                } else {
                    None
                };
                l.finish()?;
                if self.loops.insert(name.clone(), bound).is_some() {
                    return Err(err(l.no, col, ParseErrorKind::Duplicate(name)));
                }
            }
            "br" => {
                let (target, col) = l.ident("label")?;
                l.finish()?;
                self.targets.push((target.clone(), l.no, col));
                self.push(l.no, Opcode::Br, None, vec![Operand::Label(target)]);
            }
            "brz" => {
                let cond = self.register(l)?;
                l.punct(',')?;
                let (target, col) = l.ident("label")?;
                l.finish()?;
                self.targets.push((target.clone(), l.no, col));
                self.push(
                    l.no,
                    Opcode::Brz,
                    None,
                    vec![Operand::Reg(cond), Operand::Label(target)],
                );
            }
            "store" => {
                let addr = self.address(l)?;
                l.punct(',')?;
                let src = self.register(l)?;
                l.finish()?;
                self.push(
                    l.no,
                    Opcode::Store,
                    None,
                    vec![Operand::Reg(addr), Operand::Reg(src)],
                );
            }
            "ret" => {
                let operands = if l.peek().is_some() {
                    vec![Operand::Reg(self.register(l)?)]
                } else {
                    Vec::new()
                };
                l.finish()?;
                self.push(l.no, Opcode::Ret, None, operands);
            }
            _ => self.assignment(l, head, head_col)?,
        }
        Ok(())
    }

    fn assignment(
        &mut self,
        l: &mut Line,
        dest: String,
        dest_col: usize,
    ) -> Result<(), ParseError> {
        let explicit = if l.eat(':') {
            let col = l.col();
            Some(check_width(l.no, col, l.num("destination width")?)?)
        } else {
            None
        };
        l.punct('=')?;
        if self.params.iter().any(|p| p.name == dest) {
            return Err(syntax(
                l.no,
                dest_col,
                format!("cannot assign to parameter `{dest}`"),
            ));
        }
        let (mnemonic, op_col) = l.ident("opcode")?;
        let opcode = Opcode::from_mnemonic(&mnemonic).ok_or_else(|| {
            err(
                l.no,
                op_col,
                ParseErrorKind::UnknownOpcode(mnemonic.clone()),
            )
        })?;
        let no = l.no;
        let arity = |expected: &'static str| {
            err(
                no,
                op_col,
                ParseErrorKind::Arity {
                    opcode: opcode.mnemonic(),
                    expected,
                },
            )
        };
        let need_width = |what: &str| {
            err(
                no,
                dest_col,
                ParseErrorKind::Width(format!("`{what}` needs an explicit destination width")),
            )
        };
        let mismatch = |a: u32, b: u32| {
            err(
                no,
                dest_col,
                ParseErrorKind::Width(format!("destination is {a} bits but source is {b}")),
            )
        };

        let mut field = None;
        let (width, operands) = match opcode {
            Opcode::Mov => {
                let src = self.operand(l)?;
                match src {
                    RawOperand::Reg(r) => {
                        if let Some(w) = explicit.filter(|w| *w != r.width) {
                            return Err(mismatch(w, r.width));
                        }
                        (r.width, vec![Operand::Reg(r)])
                    }
                    RawOperand::Imm(v, col) => {
                        let w = explicit.ok_or_else(|| need_width("mov #imm"))?;
                        (w, vec![Operand::Imm(immediate(l.no, col, v, w)?)])
                    }
                }
            }
            Opcode::Not => {
                let src = self.register(l).map_err(|_| arity("one register"))?;
                if let Some(w) = explicit.filter(|w| *w != src.width) {
                    return Err(mismatch(w, src.width));
                }
                (src.width, vec![Operand::Reg(src)])
            }
            Opcode::Sext | Opcode::Zext => {
                let src = self.register(l).map_err(|_| arity("one register"))?;
                let w = explicit.ok_or_else(|| need_width(opcode.mnemonic()))?;
                if w < src.width {
                    return Err(err(
                        l.no,
                        dest_col,
                        ParseErrorKind::Width(format!("cannot extend {} bits to {w}", src.width)),
                    ));
                }
                (w, vec![Operand::Reg(src)])
            }
            Opcode::Sbfx | Opcode::Ubfx => {
                let src = self
                    .register(l)
                    .map_err(|_| arity("a register, #lsb and #width"))?;
                l.punct(',')?;
                let lsb = self.unsigned_imm(l, "#lsb")?;
                l.punct(',')?;
                let len = self.unsigned_imm(l, "#width")?;
                if len == 0 || lsb + len > src.width {
                    return Err(err(
                        l.no,
                        op_col,
                        ParseErrorKind::Width(format!(
                            "field #{lsb}, #{len} outside {}-bit source",
                            src.width
                        )),
                    ));
                }
                let w = explicit.unwrap_or(src.width);
                if w < len {
                    return Err(mismatch(w, len));
                }
                field = Some((lsb + len - 1, lsb));
                (w, vec![Operand::Reg(src)])
            }
            Opcode::Load => {
                let addr = self.address(l).map_err(|_| arity("`[register]`"))?;
                let w = explicit.ok_or_else(|| need_width("load"))?;
                (w, vec![Operand::Reg(addr)])
            }
            _ => {
                let a = self.operand(l)?;
                if !l.eat(',') {
                    return Err(arity("two operands"));
                }
                let b = self.operand(l)?;
                let reg_width = match (&a, &b) {
                    (RawOperand::Reg(r), _) | (_, RawOperand::Reg(r)) => Some(r.width),
                    _ => None,
                };
                let w = match (explicit, reg_width) {
                    (Some(e), Some(r)) if e != r => return Err(mismatch(e, r)),
                    (Some(w), _) | (None, Some(w)) => w,
                    (None, None) => return Err(need_width("operation on two immediates")),
                };
                let resolve = |raw: RawOperand| -> Result<Operand, ParseError> {
                    match raw {
                        RawOperand::Reg(r) if r.width != w => Err(err(
                            no,
                            op_col,
                            ParseErrorKind::Width(format!(
                                "`{}` is {} bits, expected {w}",
                                r.name, r.width
                            )),
                        )),
                        RawOperand::Reg(r) => Ok(Operand::Reg(r)),
                        RawOperand::Imm(v, col) => Ok(Operand::Imm(immediate(no, col, v, w)?)),
                    }
                };
                (w, vec![resolve(a)?, resolve(b)?])
            }
        };
        l.finish()?;
        if let Some(prev) = self.regs.get(&dest) {
            if *prev != width {
                return Err(err(
                    l.no,
                    dest_col,
                    ParseErrorKind::Width(format!(
                        "`{dest}` was {prev} bits, redefined as {width}"
                    )),
                ));
            }
        }
        self.regs.insert(dest.clone(), width);
        self.push(l.no, opcode, Some(Reg { name: dest, width }), operands);
        self.body.last_mut().expect("just pushed").field = field;
        Ok(())
    }

    fn finish(self) -> Result<Function, ParseError> {
        for (target, line, col) in &self.targets {
            if !self.labels.contains(target) {
                return Err(err(
                    *line,
                    *col,
                    ParseErrorKind::UndefinedLabel(target.clone()),
                ));
            }
        }
        Ok(Function {
            name: self.name,
            params: self.params,
            body: self.body,
            loops: self.loops,
        })
    }
}

fn parse_header(l: &mut Line) -> Result<FunctionParser, ParseError> {
    let (name, _) = l.ident("function name")?;
    l.punct('(')?;
    let mut params: Vec<Param> = Vec::new();
    let mut regs = HashMap::new();
    if !l.eat(')') {
        loop {
            let (pname, pcol) = l.ident("parameter name")?;
            l.punct(':')?;
            let (taint, tcol) = l.ident("`public` or `secret`")?;
            let taint = match taint.as_str() {
                "public" => Taint::Public,
                "secret" => Taint::Secret,
                _ => return Err(syntax(l.no, tcol, "expected `public` or `secret`")),
            };
            let (ty, ty_col) = l.ident("type")?;
            let (width, signed) = parse_type(l.no, ty_col, &ty)?;
            if regs.insert(pname.clone(), width).is_some() {
                return Err(err(l.no, pcol, ParseErrorKind::Duplicate(pname)));
            }
            params.push(Param {
                name: pname,
                width,
                signed,
                taint,
            });
            if l.eat(')') {
                break;
            }
            l.punct(',')?;
        }
    }
    l.punct('{')?;
    l.finish()?;
    Ok(FunctionParser {
        name,
        params,
        body: Vec::new(),
        loops: BTreeMap::new(),
        regs,
        labels: HashSet::new(),
        targets: Vec::new(),
    })
}

/// Parses a program. Errors carry 1-based line and column numbers.
pub fn parse(src: &str) -> Result<Program, ParseError> {
    let mut functions: Vec<Function> = Vec::new();
    let mut current: Option<FunctionParser> = None;
    let mut last_line = 0;
    for (idx, text) in src.lines().enumerate() {
        let no = idx + 1;
        last_line = no;
        let toks = tokenize(no, text)?;
        if toks.is_empty() {
            continue;
        }
        let mut l = Line {
            no,
            toks: &toks,
            pos: 0,
            end_col: text.chars().count() + 1,
        };
        match current.take() {
            None => {
                let (kw, col) = l.ident("`func`")?;
                if kw != "func" {
                    return Err(syntax(no, col, "expected `func`"));
                }
                let f = parse_header(&mut l)?;
                if functions.iter().any(|g| g.name == f.name) {
                    return Err(err(no, col, ParseErrorKind::Duplicate(f.name)));
                }
                current = Some(f);
            }
            Some(mut f) => {
                if l.eat('}') {
                    l.finish()?;
                    functions.push(f.finish()?);
                } else {
                    f.statement(&mut l)?;
                    current = Some(f);
                }
            }
        }
    }
    if current.is_some() {
        return Err(syntax(last_line + 1, 1, "unterminated function body"));
    }
    Ok(Program { functions })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CADD: &str = "\
func cadd(sum: public u8, x: secret i8) {
    r0 = sub x, #64
    r1 = asr r0, #7
    r2 = not r1
    r3 = and r2, x
    r4 = add sum, r3
}
";

    #[test]
    fn parses_conditional_add() {
        let p = parse(CADD).unwrap();
        let f = &p.functions[0];
        assert_eq!(f.params.len(), 2);
        assert_eq!(f.params[1].taint, Taint::Secret);
        assert!(f.params[1].signed);
        assert_eq!(f.body.len(), 5);
        assert_eq!(f.body[1].opcode, Opcode::Asr);
        assert_eq!(f.body[4].dest.as_ref().unwrap().width, 8);
        assert_eq!(f.body[4].address, 4);
        assert_eq!(f.body[2].line, 4);
    }

    #[test]
    fn bitfield_is_canonicalized() {
        let p = parse("func d(x: secret i16) {\n  r2:32 = sbfx x, #15, #1\n}\n").unwrap();
        let i = &p.functions[0].body[0];
        assert_eq!(i.field, Some((15, 15)));
        assert_eq!(i.dest.as_ref().unwrap().width, 32);
    }

    #[test]
    fn negative_immediates_wrap() {
        let p = parse("func f(x: secret u8) {\n r0 = add x, #-1\n}").unwrap();
        match &p.functions[0].body[0].operands[1] {
            Operand::Imm(v) => assert_eq!(v.value(), 0xff),
            other => panic!("{other:?}"),
        }
    }

    fn kind(src: &str) -> (usize, ParseErrorKind) {
        let e = parse(src).unwrap_err();
        (e.line, e.kind)
    }

    #[test]
    fn reports_errors_with_positions() {
        let (line, k) = kind("func f(x: secret u8) {\n r0 = frob x\n}");
        assert_eq!(line, 2);
        assert_eq!(k, ParseErrorKind::UnknownOpcode("frob".into()));

        let (_, k) = kind("func f(x: secret u8) {\n r0 = add y, #1\n}");
        assert_eq!(k, ParseErrorKind::UseBeforeDef("y".into()));

        let (_, k) = kind("func f(x: secret u8) {\n r0 = add x, #256\n}");
        assert!(matches!(k, ParseErrorKind::Width(_)));

        let (_, k) = kind("func f(x: secret u8, y: public u16) {\n r0 = add x, y\n}");
        assert!(matches!(k, ParseErrorKind::Width(_)));

        let (_, k) = kind("func f(x: secret u8) {\n r0 = add x\n}");
        assert!(matches!(k, ParseErrorKind::Arity { .. }));

        let (_, k) = kind("func f(x: secret u8) {\n r0 = mov #3\n}");
        assert!(matches!(k, ParseErrorKind::Width(_)));

        let (_, k) = kind("func f(x: secret u8) {\n br nowhere\n}");
        assert_eq!(k, ParseErrorKind::UndefinedLabel("nowhere".into()));

        let e = parse("func f(x: secret u8) {\n r0 = add x, @\n}").unwrap_err();
        assert_eq!((e.line, e.column), (2, 14));
    }

    #[test]
    fn loops_and_labels() {
        let src = "\
func k(m: secret u8) {
    loop top bound 4
    rj:8 = mov #0
    label top:
    rj = add rj, #1
    br top
}";
        let f = &parse(src).unwrap().functions[0];
        assert_eq!(f.loops.get("top"), Some(&Some(4)));
        assert_eq!(f.body.len(), 4);
        assert!(!f.is_straight_line());
    }
}
