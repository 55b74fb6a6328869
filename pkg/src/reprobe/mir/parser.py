"""Parser for the line-oriented MIR text format.

Grammar (UTF-8, one declaration or statement per line, '#' comments):
    field CLASS.F
    extern NAME/ARITY
    func NAME(p1, p2, ...):
      LABEL: <statement form>

Statement forms: const/binop/unop assignments, calls with optional result,
field and array reads/writes, newarray, if-goto, goto, return.
"""
from __future__ import annotations

import re

from .ir import (
    BINARY_OPS,
    COND_OPS,
    UNARY_OPS,
    Const,
    FieldId,
    K_ARRAY_READ,
    K_ARRAY_WRITE,
    K_BINOP,
    K_CALL,
    K_CONST,
    K_FIELD_READ,
    K_FIELD_WRITE,
    K_GOTO,
    K_IF_GOTO,
    K_NEWARRAY,
    K_RETURN,
    K_UNOP,
    MirFunction,
    MirProgram,
    MirStatement,
    Operand,
    Var,
    def_use,
)

__all__ = ["parse_mir", "MirParseError"]


class MirParseError(ValueError):
    """Syntax or validation error, carrying the offending line number."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {col}" if col is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_]\w*)"
    r"|(?P<op><<|>>|<=|>=|==|!=|[-+*/%<>=.,:()\[\]]))"
)


def _tokenize(text: str, line_no: int) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            rest = text[pos:].lstrip()
            if not rest:
                break
            raise MirParseError(f"syntax error near {rest[:10]!r}", line_no, pos + 1)
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num") + 1))
        elif m.lastgroup == "id":
            tokens.append(("id", m.group("id"), m.start("id") + 1))
        else:
            tokens.append(("op", m.group("op"), m.start("op") + 1))
        pos = m.end()
    return tokens


class _Cursor:
    def __init__(self, tokens, line_no):
        self.tokens = tokens
        self.i = 0
        self.line = line_no

    def peek(self, k: int = 0):
        j = self.i + k
        return self.tokens[j] if j < len(self.tokens) else (None, None, None)

    def next(self):
        tok = self.peek()
        if tok[0] is None:
            raise MirParseError("syntax error: unexpected end of line", self.line)
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, col = self.next()
        if text != value:
            raise MirParseError(f"syntax error: expected {value!r}, got {text!r}", self.line, col)

    def expect_id(self) -> str:
        kind, text, col = self.next()
        if kind != "id":
            raise MirParseError(f"syntax error: expected identifier, got {text!r}", self.line, col)
        return text

    def done(self) -> bool:
        return self.i >= len(self.tokens)

    def require_done(self):
        if not self.done():
            kind, text, col = self.peek()
            raise MirParseError(f"syntax error: trailing {text!r}", self.line, col)


def _parse_number(text: str) -> int | float:
    if "." in text or "e" in text or "E" in text:
        return float(text)
    return int(text)


def _label_token(cur: _Cursor) -> str:
    kind, text, col = cur.next()
    if kind not in ("id", "num") or (kind == "num" and not re.fullmatch(r"\d+", text)):
        raise MirParseError(f"syntax error: bad label {text!r}", cur.line, col)
    return text


def _operand(cur: _Cursor) -> Operand:
    kind, text, col = cur.next()
    if kind == "num":
        return Const(_parse_number(text))
    if kind == "id":
        return Var(text)
    raise MirParseError(f"syntax error: expected operand, got {text!r}", cur.line, col)


def _call_tail(cur: _Cursor, dest: str | None, label: str) -> MirStatement:
    callee = cur.expect_id()
    cur.expect("(")
    args: list[Operand] = []
    if cur.peek()[1] != ")":
        args.append(_operand(cur))
        while cur.peek()[1] == ",":
            cur.next()
            args.append(_operand(cur))
    cur.expect(")")
    return MirStatement(label, K_CALL, dest=dest, callee=callee, args=tuple(args))


def _parse_statement(label: str, cur: _Cursor, fields: dict[str, list[FieldId]],
                     field_by_qual: dict[str, FieldId]) -> MirStatement:
    kind, text, col = cur.peek()

    if text == "if":
        cur.next()
        lhs = _operand(cur)
        opk, op, opc = cur.next()
        if op not in COND_OPS:
            raise MirParseError(f"syntax error: bad condition operator {op!r}", cur.line, opc)
        rhs = _operand(cur)
        cur.expect("goto")
        target = _label_token(cur)
        return MirStatement(label, K_IF_GOTO, op=op, lhs=lhs, rhs=rhs, target=target)
    if text == "goto":
        cur.next()
        return MirStatement(label, K_GOTO, target=_label_token(cur))
    if text == "return":
        cur.next()
        return MirStatement(label, K_RETURN, src=_operand(cur))
    if text == "call":
        cur.next()
        return _call_tail(cur, None, label)

    # remaining forms start with an identifier
    if kind != "id":
        raise MirParseError(f"syntax error: unexpected {text!r}", cur.line, col)
    head = cur.expect_id()
    nxt = cur.peek()[1]

    if nxt == "[":
        # arr[i] = x
        cur.next()
        index = _operand(cur)
        cur.expect("]")
        cur.expect("=")
        src = _operand(cur)
        return MirStatement(label, K_ARRAY_WRITE, array=head, index=index, src=src)

    if nxt == ".":
        # R.F = x   (field write)
        cur.next()
        fname = cur.expect_id()
        cur.expect("=")
        src = _operand(cur)
        fld, recv = _resolve_field(head, fname, fields, field_by_qual, cur.line)
        return MirStatement(label, K_FIELD_WRITE, fld=fld, receiver=recv, src=src)

    cur.expect("=")
    kind2, text2, col2 = cur.peek()

    if text2 == "const":
        cur.next()
        sign = 1
        if cur.peek()[1] == "-":
            cur.next()
            sign = -1
        k, v, c = cur.next()
        if k != "num":
            raise MirParseError(f"syntax error: const needs a number, got {v!r}", cur.line, c)
        return MirStatement(label, K_CONST, dest=head, src=Const(sign * _parse_number(v)))
    if text2 == "call":
        cur.next()
        return _call_tail(cur, head, label)
    if text2 == "newarray":
        cur.next()
        return MirStatement(label, K_NEWARRAY, dest=head, size=_operand(cur))
    if text2 in UNARY_OPS:
        cur.next()
        return MirStatement(label, K_UNOP, dest=head, op=text2, src=_operand(cur))

    first = _operand(cur)
    if cur.done():
        raise MirParseError("syntax error: bare copy is not a MIR form", cur.line)
    k3, t3, c3 = cur.peek()

    if t3 == "[":
        if not isinstance(first, Var):
            raise MirParseError("syntax error: array base must be a variable", cur.line, c3)
        cur.next()
        index = _operand(cur)
        cur.expect("]")
        return MirStatement(label, K_ARRAY_READ, dest=head, array=first.name, index=index)
    if t3 == ".":
        if not isinstance(first, Var):
            raise MirParseError("syntax error: field receiver must be a name", cur.line, c3)
        cur.next()
        fname = cur.expect_id()
        fld, recv = _resolve_field(first.name, fname, fields, field_by_qual, cur.line)
        return MirStatement(label, K_FIELD_READ, dest=head, fld=fld, receiver=recv)
    if t3 in BINARY_OPS:
        cur.next()
        rhs = _operand(cur)
        return MirStatement(label, K_BINOP, dest=head, op=t3, lhs=first, rhs=rhs)
    raise MirParseError(f"syntax error: unexpected {t3!r}", cur.line, c3)


def _resolve_field(recv: str, fname: str, by_name: dict[str, list[FieldId]],
                   by_qual: dict[str, FieldId], line: int) -> tuple[FieldId, str | None]:
    """Resolve R.F: static access when R is a declared class, else receiver var."""
    qual = f"{recv}.{fname}"
    if qual in by_qual:
        return by_qual[qual], None
    candidates = by_name.get(fname, [])
    if not candidates:
        raise MirParseError(f"unknown field {fname!r}", line)
    if len(candidates) > 1:
        raise MirParseError(f"ambiguous field {fname!r} (declare receiver class)", line)
    return candidates[0], recv


def parse_mir(text: str) -> MirProgram:
    """Parse and validate MIR source text into a MirProgram."""
    fields_decl: list[FieldId] = []
    externs: list[tuple[str, int]] = []
    by_name: dict[str, list[FieldId]] = {}
    by_qual: dict[str, FieldId] = {}
    # raw function records: (name, params, [(line_no, label, cursor-statement)])
    funcs: list[tuple[str, tuple[str, ...], list[MirStatement], int]] = []
    current: list[MirStatement] | None = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indented = line[0] in " \t"
        stripped = line.strip()
        if not indented:
            current = None
            if stripped.startswith("field "):
                m = re.fullmatch(r"field\s+([A-Za-z_]\w*)\.([A-Za-z_]\w*)", stripped)
                if not m:
                    raise MirParseError("syntax error: bad field declaration", line_no)
                fld = FieldId(m.group(1), m.group(2))
                if str(fld) in by_qual:
                    raise MirParseError(f"duplicate field {fld}", line_no)
                fields_decl.append(fld)
                by_qual[str(fld)] = fld
                by_name.setdefault(fld.name, []).append(fld)
                continue
            if stripped.startswith("extern "):
                m = re.fullmatch(r"extern\s+([A-Za-z_]\w*)\s*/\s*(\d+)", stripped)
                if not m:
                    raise MirParseError("syntax error: bad extern declaration", line_no)
                externs.append((m.group(1), int(m.group(2))))
                continue
            if stripped.startswith("func "):
                m = re.fullmatch(r"func\s+([A-Za-z_]\w*)\s*\(([^)]*)\)\s*:", stripped)
                if not m:
                    raise MirParseError("syntax error: bad function header", line_no)
                params = tuple(p.strip() for p in m.group(2).split(",") if p.strip())
                body: list[MirStatement] = []
                funcs.append((m.group(1), params, body, line_no))
                current = body
                continue
            raise MirParseError(f"syntax error: unexpected {stripped[:20]!r}", line_no)

        if current is None:
            raise MirParseError("syntax error: statement outside a function", line_no)
        cur = _Cursor(_tokenize(stripped, line_no), line_no)
        label = _label_token(cur)
        cur.expect(":")
        stmt = _parse_statement(label, cur, by_name, by_qual)
        cur.require_done()
        current.append(stmt)

    if not funcs:
        raise MirParseError("syntax error: no functions declared", None)

    program = _assemble(funcs, fields_decl, externs)
    _validate(program, funcs)
    return program


def _assemble(funcs, fields_decl, externs) -> MirProgram:
    functions = []
    seen = set()
    for name, params, body, line_no in funcs:
        if name in seen:
            raise MirParseError(f"duplicate function {name!r}", line_no)
        seen.add(name)
        if not body:
            raise MirParseError(f"empty function {name!r}", line_no)
        locs: set[str] = set(params)
        for s in body:
            d, u = def_use(s)
            locs |= {v for v in d if isinstance(v, str)}
            locs |= {v for v in u if isinstance(v, str)}
        functions.append(MirFunction(name, params, tuple(body), frozenset(locs)))
    return MirProgram(tuple(functions), tuple(fields_decl), tuple(externs), functions[0].id)


def _validate(program: MirProgram, funcs) -> None:
    fnames = {f.id for f in program.functions}
    ext = dict(program.externs)
    for f in program.functions:
        labels = set()
        for s in f.body:
            if s.label in labels:
                raise MirParseError(f"duplicate label {s.label!r} in {f.id}")
            labels.add(s.label)
        for i, s in enumerate(f.body):
            if s.kind in (K_GOTO, K_IF_GOTO):
                if s.target not in labels:
                    raise MirParseError(f"unresolved label {s.target!r} in {f.id}")
            if s.kind == K_IF_GOTO:
                fall = f.body[i + 1].label if i + 1 < len(f.body) else None
                if fall is None:
                    raise MirParseError(f"if at {s.label!r} in {f.id} falls off the function end")
                if fall == s.target:
                    raise MirParseError(f"degenerate branch at {s.label!r} in {f.id}")
            elif s.kind not in (K_RETURN, K_GOTO) and i + 1 >= len(f.body):
                raise MirParseError(f"function {f.id} must end with return or goto")
            if s.kind == K_CALL:
                if s.callee in fnames:
                    want = len(program.function(s.callee).params)
                    if len(s.args) != want:
                        raise MirParseError(
                            f"call to {s.callee} at {s.label!r} expects {want} args, got {len(s.args)}")
                elif s.callee in ext:
                    if len(s.args) != ext[s.callee]:
                        raise MirParseError(
                            f"call to extern {s.callee} at {s.label!r} expects {ext[s.callee]} args")
                else:
                    raise MirParseError(f"unresolved call target {s.callee!r} at {s.label!r}")
        _check_reachable(f)


def _check_reachable(f: MirFunction) -> None:
    index = {s.label: i for i, s in enumerate(f.body)}
    seen = set()
    stack = [f.body[0].label]
    while stack:
        lab = stack.pop()
        if lab in seen:
            continue
        seen.add(lab)
        s = f.stmt(lab)
        i = index[lab]
        if s.kind == K_GOTO:
            stack.append(s.target)
        elif s.kind == K_IF_GOTO:
            stack.append(s.target)
            stack.append(f.body[i + 1].label)
        elif s.kind != K_RETURN:
            stack.append(f.body[i + 1].label)
    dead = [s.label for s in f.body if s.label not in seen]
    if dead:
        raise MirParseError(f"unreachable statement {dead[0]!r} in {f.id}")
