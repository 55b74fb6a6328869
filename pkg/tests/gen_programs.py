"""Random MIR program generator for the dynamic slicing/structuring oracles.

Programs are generated structure-first (sequences, if/else, bounded
counting loops, arrays, fields, helper calls up to two levels) and then
linearized into labeled statements with gotos, so they always terminate,
never read unbound variables, and only read fields after a guaranteed
write. Each program acquires values through arity-0 input primitives,
invokes `infer` once from main, and emits results through `out`.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field


@dataclass
class _FuncBuf:
    name: str
    params: list[str]
    lines: list[str] = field(default_factory=list)
    label: int = 0

    def fresh(self) -> str:
        self.label += 1
        return str(self.label)

    def emit(self, text: str) -> str:
        lab = self.fresh()
        self.lines.append(f"  {lab}: {text}")
        return lab

    def emit_at(self, lab: str, text: str) -> None:
        self.lines.append(f"  {lab}: {text}")


@dataclass
class _Scope:
    ints: list[str]
    arrays: dict[str, int]
    written_fields: set[str]


class ProgramGen:
    """Seeded generator; `generate()` returns (mir_text, input_names)."""

    def __init__(self, rng: random.Random, max_stmts: int = 50,
                 with_fields: bool = True, with_calls: bool = True,
                 with_criterion: bool = True):
        self.rng = rng
        self.max_stmts = max_stmts
        self.with_fields = with_fields
        self.with_calls = with_calls
        self.with_criterion = with_criterion
        self.var_counter = 0
        self.fields = ["St.acc", "St.cfg", "St.tmp"][: rng.randint(1, 3)] if with_fields else []
        self.inputs = [f"input{i}" for i in range(rng.randint(1, 3))]
        self.helpers: list[_FuncBuf] = []
        self.budget = 0

    def fresh_var(self, prefix: str = "v") -> str:
        self.var_counter += 1
        return f"{prefix}{self.var_counter}"

    # ---- statement-level emission ----

    def _emit_const(self, f: _FuncBuf, s: _Scope) -> None:
        v = self.fresh_var()
        f.emit(f"{v} = const {self.rng.randint(-9, 9)}")
        s.ints.append(v)
        self.budget -= 1

    def _emit_arith(self, f: _FuncBuf, s: _Scope) -> None:
        v = self.fresh_var()
        op = self.rng.choice(["+", "-", "*", "+", "-"])
        a = self.rng.choice(s.ints)
        b = self.rng.choice(s.ints + [str(self.rng.randint(1, 5))])
        f.emit(f"{v} = {a} {op} {b}")
        s.ints.append(v)
        self.budget -= 1

    def _emit_input(self, f: _FuncBuf, s: _Scope) -> None:
        v = self.fresh_var()
        f.emit(f"{v} = call {self.rng.choice(self.inputs)}()")
        s.ints.append(v)
        self.budget -= 1

    def _emit_field_write(self, f: _FuncBuf, s: _Scope) -> None:
        fld = self.rng.choice(self.fields)
        f.emit(f"{fld} = {self.rng.choice(s.ints)}")
        s.written_fields.add(fld)
        self.budget -= 1

    def _emit_field_read(self, f: _FuncBuf, s: _Scope) -> None:
        readable = sorted(s.written_fields)
        if not readable:
            return
        v = self.fresh_var()
        f.emit(f"{v} = {self.rng.choice(readable)}")
        s.ints.append(v)
        self.budget -= 1

    def _emit_array_alloc(self, f: _FuncBuf, s: _Scope) -> None:
        a = self.fresh_var("a")
        size = self.rng.randint(2, 5)
        f.emit(f"{a} = newarray {size}")
        s.arrays[a] = size
        self.budget -= 1

    def _emit_array_write(self, f: _FuncBuf, s: _Scope) -> None:
        if not s.arrays:
            return
        a, size = self.rng.choice(sorted(s.arrays.items()))
        idx = self.rng.randrange(size)
        f.emit(f"{a}[{idx}] = {self.rng.choice(s.ints)}")
        self.budget -= 1

    def _emit_array_read(self, f: _FuncBuf, s: _Scope) -> None:
        if not s.arrays:
            return
        a, size = self.rng.choice(sorted(s.arrays.items()))
        v = self.fresh_var()
        f.emit(f"{v} = {a}[{self.rng.randrange(size)}]")
        s.ints.append(v)
        self.budget -= 1

    def _emit_call(self, f: _FuncBuf, s: _Scope) -> None:
        if not self.helpers:
            return
        h = self.rng.choice(self.helpers)
        args = ", ".join(self.rng.choice(s.ints) for _ in h.params)
        v = self.fresh_var()
        f.emit(f"{v} = call {h.name}({args})")
        s.ints.append(v)
        self.budget -= 1

    # ---- block-level structures ----

    def _emit_if(self, f: _FuncBuf, s: _Scope, depth: int) -> None:
        a = self.rng.choice(s.ints)
        b = self.rng.choice(s.ints + [str(self.rng.randint(0, 3))])
        op = self.rng.choice(["<", "<=", ">", ">=", "==", "!="])
        then_first = f.fresh()
        end = f.fresh()
        f.emit(f"if {a} {op} {b} goto {then_first}")
        self.budget -= 1
        s_else = _Scope(list(s.ints), dict(s.arrays), set(s.written_fields))
        self._emit_block(f, s_else, depth + 1, self.rng.randint(1, 3))
        f.emit(f"goto {end}")
        # then arm starts at its pre-reserved label
        s_then = _Scope(list(s.ints), dict(s.arrays), set(s.written_fields))
        self._emit_block_with_entry(f, s_then, depth + 1, self.rng.randint(1, 3), then_first)
        f.emit_at(end, f"{self.fresh_var()} = const 0")
        # after the join only common definitions survive
        s.ints = [v for v in s_then.ints if v in s_else.ints or v in s.ints]
        s.written_fields |= (s_then.written_fields & s_else.written_fields)

    def _emit_block_with_entry(self, f: _FuncBuf, s: _Scope, depth: int,
                               budget: int, entry_label: str) -> None:
        v = self.fresh_var()
        f.emit_at(entry_label, f"{v} = const {self.rng.randint(0, 3)}")
        s.ints.append(v)
        self.budget -= 1
        self._emit_block(f, s, depth, budget)

    def _emit_loop(self, f: _FuncBuf, s: _Scope, depth: int) -> None:
        i = self.fresh_var("i")
        trips = self.rng.randint(1, 5)
        f.emit(f"{i} = const 0")
        s.ints.append(i)
        do_while = self.rng.random() < 0.3
        body_scope = _Scope(list(s.ints), dict(s.arrays), set(s.written_fields))
        if do_while:
            body_start = f.fresh()
            f.emit_at(body_start, f"{self.fresh_var('t')} = {i} + 0")
            self._emit_block(f, body_scope, depth + 1, self.rng.randint(1, 3))
            f.emit(f"{i} = {i} + 1")
            f.emit(f"if {i} < {trips} goto {body_start}")
            self.budget -= 4
        else:
            header = f.fresh()
            exit_lab = f.fresh()
            f.emit_at(header, f"if {i} >= {trips} goto {exit_lab}")
            self._emit_block(f, body_scope, depth + 1, self.rng.randint(1, 3))
            f.emit(f"{i} = {i} + 1")
            f.emit(f"goto {header}")
            f.emit_at(exit_lab, f"{self.fresh_var()} = const 0")
            self.budget -= 4
        # trips >= 1, so body definitions are guaranteed
        s.ints = list(dict.fromkeys(body_scope.ints))
        s.arrays.update(body_scope.arrays)
        s.written_fields |= body_scope.written_fields

    def _emit_block(self, f: _FuncBuf, s: _Scope, depth: int, budget: int) -> None:
        choices = [
            (self._emit_const, 2), (self._emit_arith, 5), (self._emit_input, 1),
            (self._emit_array_alloc, 1), (self._emit_array_write, 2),
            (self._emit_array_read, 2),
        ]
        if self.fields:
            choices += [(self._emit_field_write, 2), (self._emit_field_read, 2)]
        if self.with_calls:
            choices += [(self._emit_call, 2)]
        if depth < 2:
            structures = [("if", 2), ("loop", 2)]
        else:
            structures = []
        for _ in range(budget):
            if self.budget <= 0:
                return
            pick = self.rng.choices(
                [c for c, _ in choices] + [s_ for s_, _ in structures],
                weights=[w for _, w in choices] + [w for _, w in structures],
            )[0]
            if pick == "if":
                self._emit_if(f, s, depth)
            elif pick == "loop":
                self._emit_loop(f, s, depth)
            else:
                pick(f, s)

    # ---- whole-program assembly ----

    def _make_helper(self, name: str, callees: list[_FuncBuf],
                     readable_fields: set[str]) -> _FuncBuf:
        params = [self.fresh_var("p") for _ in range(self.rng.randint(1, 2))]
        f = _FuncBuf(name, params)
        s = _Scope(list(params), {}, set(readable_fields))
        saved_helpers = self.helpers
        self.helpers = callees
        self._emit_block(f, s, depth=1, budget=self.rng.randint(2, 4))
        self.helpers = saved_helpers
        ret = self.rng.choice(s.ints)
        f.emit(f"return {ret}")
        return f

    def generate(self) -> tuple[str, list[str]]:
        self.budget = self.max_stmts - 12
        main = _FuncBuf("main", [])
        s = _Scope([], {}, set())
        for name in self.inputs:
            v = self.fresh_var()
            main.emit(f"{v} = call {name}()")
            s.ints.append(v)

        written_before_helpers = set()
        if self.with_fields and self.rng.random() < 0.8:
            fld = self.rng.choice(self.fields)
            main.emit(f"{fld} = {self.rng.choice(s.ints)}")
            s.written_fields.add(fld)
            written_before_helpers.add(fld)

        if self.with_calls:
            leaf = self._make_helper("leaf", [], written_before_helpers)
            self.helpers = [leaf]
            if self.rng.random() < 0.7:
                mid = self._make_helper("mid", [leaf], written_before_helpers)
                self.helpers.append(mid)

        self._emit_block(main, s, depth=0, budget=self.rng.randint(3, 8))

        infer_args: list[str] = []
        if self.with_criterion:
            n_args = self.rng.randint(1, 2)
            infer_args = [self.rng.choice(s.ints) for _ in range(n_args)]
            if s.arrays and self.rng.random() < 0.5:
                infer_args[-1] = self.rng.choice(sorted(s.arrays))
            r = self.fresh_var("r")
            main.emit(f"{r} = call infer({', '.join(infer_args)})")
            s.ints.append(r)
            post = _Scope([r] + s.ints, dict(s.arrays), set(s.written_fields))
            d = self.fresh_var("d")
            main.emit(f"{d} = {r} + 1")
            post.ints.append(d)
            self.budget = min(self.budget, 8)
            self._emit_block(main, post, depth=0, budget=self.rng.randint(1, 4))
            sink = self.rng.choice([d] + [v for v in post.ints if v.startswith(("d", "r"))])
            main.emit(f"call out({sink})")
            main.emit(f"return {sink}")
        else:
            sink = self.rng.choice(s.ints)
            main.emit(f"call out({sink})")
            main.emit(f"return {sink}")

        decls = [f"field {f_}" for f_ in self.fields]
        decls += [f"extern {name}/0" for name in self.inputs]
        if self.with_criterion:
            decls.append(f"extern infer/{len(infer_args)}")
        decls.append("extern out/1")
        parts = ["\n".join(decls), ""]
        parts.append(f"func main():")
        parts.extend(main.lines)
        for h in self.helpers:
            parts.append("")
            parts.append(f"func {h.name}({', '.join(h.params)}):")
            parts.extend(h.lines)
        return "\n".join(parts) + "\n", list(self.inputs)


def deterministic_infer(*args):
    """Pure stand-in for the inference primitive: mixes all scalar inputs."""
    acc = 7
    for a in args:
        if isinstance(a, list):
            for v in a:
                acc = (acc * 31 + int(v)) % 100003
        else:
            acc = (acc * 31 + int(a)) % 100003
    return acc
