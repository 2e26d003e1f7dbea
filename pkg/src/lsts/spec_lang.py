"""SPECTRL front end: AST, parser, printer and finite-trace semantics.

Concrete grammar (whitespace-insensitive, ``#`` starts a line comment)::

    spec   := seq_or
    seq_or := seq ("or" seq)*
    seq    := ens (";" ens)*
    ens    := atom ("ensuring" pred)*
    atom   := "achieve" pred | "(" spec ")"
    pred   := conj ("|" conj)*
    conj   := lit ("&" lit)*
    lit    := "!"? IDENT | "(" pred ")"

Binary operators associate to the left.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import EmptyTraceError, SpecSyntaxError

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
KEYWORDS = frozenset({"achieve", "ensuring", "or"})


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Lit:
    name: str
    negated: bool = False

    def __post_init__(self):
        if not IDENT_RE.match(self.name) or self.name in KEYWORDS:
            raise ValueError(f"invalid atom name {self.name!r}")


@dataclass(frozen=True)
class And:
    left: "Predicate"
    right: "Predicate"


@dataclass(frozen=True)
class Or:
    left: "Predicate"
    right: "Predicate"


Predicate = Union[Lit, And, Or]


@dataclass(frozen=True)
class Achieve:
    pred: Predicate


@dataclass(frozen=True)
class Ensuring:
    spec: "SpecAst"
    pred: Predicate


@dataclass(frozen=True)
class Seq:
    first: "SpecAst"
    second: "SpecAst"


@dataclass(frozen=True)
class Choice:
    left: "SpecAst"
    right: "SpecAst"


SpecAst = Union[Achieve, Ensuring, Seq, Choice]


def conj(*preds: Predicate | None) -> Predicate | None:
    """Left-nested conjunction of the non-None arguments."""
    out = None
    for p in preds:
        if p is None:
            continue
        out = p if out is None else And(out, p)
    return out


def pred_atoms(b: Predicate) -> set[str]:
    if isinstance(b, Lit):
        return {b.name}
    return pred_atoms(b.left) | pred_atoms(b.right)


def spec_atoms(phi: SpecAst) -> set[str]:
    if isinstance(phi, Achieve):
        return pred_atoms(phi.pred)
    if isinstance(phi, Ensuring):
        return spec_atoms(phi.spec) | pred_atoms(phi.pred)
    if isinstance(phi, Seq):
        return spec_atoms(phi.first) | spec_atoms(phi.second)
    return spec_atoms(phi.left) | spec_atoms(phi.right)


# --------------------------------------------------------------------------
# lexer / parser

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r\f\v]+)|(?P<nl>\n)|(?P<comment>\#[^\n]*)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[;()!&|])"
)


@dataclass(frozen=True)
class Token:
    kind: str  # 'kw', 'ident', 'op', 'eof'
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "ident":
            word = m.group()
            tokens.append(Token("kw" if word in KEYWORDS else "ident", word, line, col))
        elif kind == "op":
            tokens.append(Token("op", m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def _is(self, text: str) -> bool:
        return self.tok.kind in ("kw", "op") and self.tok.text == text

    def _fail(self, expected):
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise SpecSyntaxError(f"unexpected {found}", t.line, t.col, expected, t.text)

    def _expect(self, text: str):
        if not self._is(text):
            self._fail({text})
        self.i += 1

    def parse(self) -> SpecAst:
        phi = self.seq_or()
        if self.tok.kind != "eof":
            self._fail({"or", ";", "ensuring", "end of input"})
        return phi

    def seq_or(self) -> SpecAst:
        phi = self.seq()
        while self._is("or"):
            self.i += 1
            phi = Choice(phi, self.seq())
        return phi

    def seq(self) -> SpecAst:
        phi = self.ens()
        while self._is(";"):
            self.i += 1
            phi = Seq(phi, self.ens())
        return phi

    def ens(self) -> SpecAst:
        phi = self.atom()
        while self._is("ensuring"):
            self.i += 1
            phi = Ensuring(phi, self.pred())
        return phi

    def atom(self) -> SpecAst:
        if self._is("achieve"):
            self.i += 1
            return Achieve(self.pred())
        if self._is("("):
            self.i += 1
            phi = self.seq_or()
            self._expect(")")
            return phi
        self._fail({"achieve", "("})

    def pred(self) -> Predicate:
        b = self.conj()
        while self._is("|"):
            self.i += 1
            b = Or(b, self.conj())
        return b

    def conj(self) -> Predicate:
        b = self.lit()
        while self._is("&"):
            self.i += 1
            b = And(b, self.lit())
        return b

    def lit(self) -> Predicate:
        negated = False
        if self._is("!"):
            self.i += 1
            negated = True
            if self.tok.kind != "ident":
                self._fail({"identifier"})
        if self.tok.kind == "ident":
            name = self.tok.text
            self.i += 1
            return Lit(name, negated)
        if self._is("("):
            self.i += 1
            b = self.pred()
            self._expect(")")
            return b
        self._fail({"identifier", "!", "("})


def parse_spec(text: str) -> SpecAst:
    return _Parser(text).parse()


def parse_pred(text: str) -> Predicate:
    p = _Parser(text)
    b = p.pred()
    if p.tok.kind != "eof":
        p._fail({"&", "|", "end of input"})
    return b


# --------------------------------------------------------------------------
# printer


def print_pred(b: Predicate) -> str:
    if isinstance(b, Lit):
        return ("!" if b.negated else "") + b.name
    if isinstance(b, Or):
        right = print_pred(b.right)
        if isinstance(b.right, Or):
            right = f"({right})"
        return f"{print_pred(b.left)}|{right}"
    left, right = print_pred(b.left), print_pred(b.right)
    if isinstance(b.left, Or):
        left = f"({left})"
    if not isinstance(b.right, Lit):
        right = f"({right})"
    return f"{left}&{right}"


_PREC = {Choice: 1, Seq: 2, Ensuring: 3, Achieve: 4}


def print_spec(phi: SpecAst) -> str:
    return _print(phi)


def _wrap(phi: SpecAst, min_prec: int) -> str:
    s = _print(phi)
    return s if _PREC[type(phi)] >= min_prec else f"({s})"


def _print(phi: SpecAst) -> str:
    if isinstance(phi, Achieve):
        return f"achieve {print_pred(phi.pred)}"
    if isinstance(phi, Ensuring):
        return f"{_wrap(phi.spec, 3)} ensuring {print_pred(phi.pred)}"
    if isinstance(phi, Seq):
        return f"{_wrap(phi.first, 2)} ; {_wrap(phi.second, 3)}"
    return f"{_wrap(phi.left, 1)} or {_wrap(phi.right, 2)}"


# --------------------------------------------------------------------------
# semantics


def eval_pred(b: Predicate, labels: Iterable[str]) -> bool:
    if not isinstance(labels, (set, frozenset)):
        labels = frozenset(labels)
    return _eval(b, labels)


def _eval(b, labels) -> bool:
    if isinstance(b, Lit):
        return (b.name in labels) != b.negated
    if isinstance(b, And):
        return _eval(b.left, labels) and _eval(b.right, labels)
    return _eval(b.left, labels) or _eval(b.right, labels)


def pred_table(b: Predicate | None, atoms: Sequence[str]) -> np.ndarray:
    """Truth table of ``b`` indexed by label bitmask (bit i <-> atoms[i]).

    Atoms absent from ``atoms`` are treated as never true.  ``None`` is the
    constant-true predicate.
    """
    n = 1 << len(atoms)
    if b is None:
        return np.ones(n, dtype=bool)
    masks = np.arange(n)
    index = {a: i for i, a in enumerate(atoms)}
    return _table(b, masks, index)


def _table(b, masks, index):
    if isinstance(b, Lit):
        i = index.get(b.name)
        val = np.zeros(masks.shape, dtype=bool) if i is None else ((masks >> i) & 1).astype(bool)
        return ~val if b.negated else val
    left, right = _table(b.left, masks, index), _table(b.right, masks, index)
    return left & right if isinstance(b, And) else left | right


def labels_to_mask(labels: Iterable[str], atoms: Sequence[str]) -> int:
    index = {a: i for i, a in enumerate(atoms)}
    m = 0
    for name in labels:
        i = index.get(name)
        if i is not None:
            m |= 1 << i
    return m


def trace_to_masks(trace: Sequence[Iterable[str]], atoms: Sequence[str]) -> np.ndarray:
    return np.array([labels_to_mask(s, atoms) for s in trace], dtype=np.int64)


def spec_end_mask(phi: SpecAst, masks: np.ndarray, atoms: Sequence[str]) -> np.ndarray:
    """Batched exact-interval satisfaction.

    ``masks`` is an integer array of shape (batch, T) of label bitmasks.  The
    result ``out[k, e]`` is True iff the slice ``[0..e]`` of trace ``k``
    satisfies ``phi``.  Ensuring predicates are pushed down to the achieve
    leaves as a per-step safety context, so each leaf is a single forward scan
    and the whole evaluation is O(|phi| * T) per trace.
    """
    masks = np.atleast_2d(np.asarray(masks, dtype=np.int64))
    steps = np.ascontiguousarray(masks.T)
    tables: dict = {}

    def values(b):
        if b not in tables:
            tables[b] = pred_table(b, atoms)[steps]
        return tables[b]

    starts = np.zeros(steps.shape, dtype=bool)
    starts[0] = True
    safe = np.ones(steps.shape, dtype=bool)
    return _ends(phi, starts, safe, values).T


def _ends(phi, starts, safe, values):
    if isinstance(phi, Achieve):
        hit = values(phi.pred)
        out = np.empty_like(starts)
        alive = np.zeros(starts.shape[1], dtype=bool)
        done = np.zeros(starts.shape[1], dtype=bool)
        for p in range(starts.shape[0]):
            alive = safe[p] & (starts[p] | alive)
            done = safe[p] & ((alive & hit[p]) | done)
            out[p] = done
        return out
    if isinstance(phi, Ensuring):
        return _ends(phi.spec, starts, safe & values(phi.pred), values)
    if isinstance(phi, Seq):
        first = _ends(phi.first, starts, safe, values)
        nxt = np.zeros_like(first)
        nxt[1:] = first[:-1]
        return _ends(phi.second, nxt, safe, values)
    return _ends(phi.left, starts, safe, values) | _ends(phi.right, starts, safe, values)


def sat_spec(phi: SpecAst, trace: Sequence[Iterable[str]]) -> bool:
    """True iff some prefix of ``trace`` satisfies ``phi``."""
    if len(trace) == 0:
        raise EmptyTraceError("satisfaction is undefined on an empty trace")
    atoms = sorted(spec_atoms(phi))
    masks = trace_to_masks(trace, atoms)[None, :]
    return bool(spec_end_mask(phi, masks, atoms)[0].any())
