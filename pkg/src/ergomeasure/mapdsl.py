"""Map expression language for torus endomorphisms.

Grammar (one component per coordinate, separated by commas)::

    map       := component (',' component)*
    component := expr 'mod' '1'
    expr      := term (('+' | '-') term)*
    term      := factor ('*' factor)*
    factor    := number | 'pi' | var | 'sin(' expr ')' | 'cos(' expr ')'
               | '(' expr ')' | '-' factor
    var       := 'x' digits            (1-based coordinate index)

Numbers are decimal literals and are stored as exact rationals. The
expression before ``mod 1`` defines a lift ``F: R^d -> R^d``; the torus map
is ``F mod 1``. Three maps are also available by name: ``doubling``,
``rotation:<alpha>`` and ``sine2:<amp>`` (``x + amp*sin(4*pi*x)``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np
from mpmath import libmp
from mpmath.ctx_iv import MPIntervalContext

from .errors import (
    DimensionMismatch,
    DSLSyntaxError,
    NotATorusMap,
    PrecisionUnreachable,
    UnboundedDerivative,
)
from .intervals import PI_HI, PI_LO, Interval, fraction_bounds

# ---------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: Fraction


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Add:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Sub:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Mul:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Sin:
    arg: "Node"


@dataclass(frozen=True)
class Cos:
    arg: "Node"


Node = Num | Pi | Var | Add | Sub | Mul | Neg | Sin | Cos

ZERO = Num(Fraction(0))
ONE = Num(Fraction(1))

# ---------------------------------------------------------------- tokenizer / parser

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)|([A-Za-z_][A-Za-z_0-9]*)|(\S))")


@dataclass(frozen=True)
class _Tok:
    kind: str  # "num", "name", "op", "end"
    text: str
    pos: int


def _tokenize(src: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        start = m.start(m.lastindex)
        if m.group(1) is not None:
            toks.append(_Tok("num", m.group(1), start))
        elif m.group(2) is not None:
            toks.append(_Tok("name", m.group(2), start))
        else:
            ch = m.group(3)
            if ch not in "+-*(),":
                raise DSLSyntaxError("unexpected character", start, ch)
            toks.append(_Tok("op", ch, start))
        pos = m.end()
    toks.append(_Tok("end", "", len(src)))
    return toks


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def _advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def _expect(self, kind: str, text: str | None = None) -> _Tok:
        t = self.cur
        if t.kind != kind or (text is not None and t.text != text):
            want = text if text is not None else kind
            raise DSLSyntaxError(f"expected {want!r}", t.pos, t.text)
        return self._advance()

    def parse_map(self) -> tuple[list[Node], list[int]]:
        comps, var_pos = [], []
        self.var_positions = var_pos
        while True:
            comps.append(self.expr())
            self._expect("name", "mod")
            one = self._expect("num")
            if Fraction(one.text) != 1:
                raise DSLSyntaxError("only 'mod 1' is supported", one.pos, one.text)
            if self.cur.kind == "op" and self.cur.text == ",":
                self._advance()
                continue
            break
        if self.cur.kind != "end":
            raise DSLSyntaxError("unexpected trailing input", self.cur.pos, self.cur.text)
        return comps, var_pos

    def expr(self) -> Node:
        node = self.term()
        while self.cur.kind == "op" and self.cur.text in "+-":
            op = self._advance().text
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.cur.kind == "op" and self.cur.text == "*":
            self._advance()
            node = Mul(node, self.factor())
        return node

    def factor(self) -> Node:
        t = self.cur
        if t.kind == "num":
            self._advance()
            return Num(Fraction(t.text))
        if t.kind == "op" and t.text == "(":
            self._advance()
            node = self.expr()
            self._expect("op", ")")
            return node
        if t.kind == "op" and t.text == "-":
            self._advance()
            return Neg(self.factor())
        if t.kind == "name":
            if t.text == "pi":
                self._advance()
                return Pi()
            if t.text in ("sin", "cos"):
                self._advance()
                self._expect("op", "(")
                arg = self.expr()
                self._expect("op", ")")
                return Sin(arg) if t.text == "sin" else Cos(arg)
            m = re.fullmatch(r"x(\d+)", t.text)
            if m:
                self._advance()
                self.var_positions.append((int(m.group(1)), t.pos))
                return Var(int(m.group(1)))
            raise DSLSyntaxError("unknown identifier", t.pos, t.text)
        raise DSLSyntaxError("expected a number, variable, function or '('", t.pos, t.text)


# ---------------------------------------------------------------- pretty printer


def _fmt_num(v: Fraction) -> str:
    if v.denominator == 1:
        return str(v.numerator)
    q = v.denominator
    a = b = 0
    while q % 2 == 0:
        q //= 2
        a += 1
    while q % 5 == 0:
        q //= 5
        b += 1
    if q != 1:
        raise ValueError(f"{v} has no terminating decimal expansion")
    k = max(a, b)
    digits = str(v.numerator * 10**k // v.denominator).rjust(k + 1, "0")
    return f"{digits[:-k]}.{digits[-k:]}"


def pretty(node: Node) -> str:
    """Render an expression with the minimal parentheses the grammar needs."""
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, (Sin, Cos)):
        name = "sin" if isinstance(node, Sin) else "cos"
        return f"{name}({pretty(node.arg)})"
    if isinstance(node, Neg):
        inner = pretty(node.arg)
        if isinstance(node.arg, (Add, Sub, Mul)):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, (Add, Sub)):
        op = "+" if isinstance(node, Add) else "-"
        rhs = pretty(node.right)
        if isinstance(node.right, (Add, Sub)):
            rhs = f"({rhs})"
        return f"{pretty(node.left)} {op} {rhs}"
    if isinstance(node, Mul):
        lhs, rhs = pretty(node.left), pretty(node.right)
        if isinstance(node.left, (Add, Sub)):
            lhs = f"({lhs})"
        if isinstance(node.right, (Add, Sub, Mul)):
            rhs = f"({rhs})"
        return f"{lhs}*{rhs}"
    raise TypeError(node)


def pretty_map(components: Sequence[Node]) -> str:
    return ", ".join(f"{pretty(c)} mod 1" for c in components)


# ---------------------------------------------------------------- symbolic derivative


def _add(a: Node, b: Node) -> Node:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return Add(a, b)


def _mul(a: Node, b: Node) -> Node:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return Mul(a, b)


def _neg(a: Node) -> Node:
    return ZERO if a == ZERO else Neg(a)


def derivative(node: Node, var: int) -> Node:
    """Symbolic partial derivative with respect to ``x<var>``."""
    if isinstance(node, (Num, Pi)):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.index == var else ZERO
    if isinstance(node, Add):
        return _add(derivative(node.left, var), derivative(node.right, var))
    if isinstance(node, Sub):
        dl, dr = derivative(node.left, var), derivative(node.right, var)
        if dr == ZERO:
            return dl
        return Sub(dl, dr) if dl != ZERO else Neg(dr)
    if isinstance(node, Neg):
        return _neg(derivative(node.arg, var))
    if isinstance(node, Mul):
        return _add(
            _mul(derivative(node.left, var), node.right),
            _mul(node.left, derivative(node.right, var)),
        )
    if isinstance(node, Sin):
        return _mul(Cos(node.arg), derivative(node.arg, var))
    if isinstance(node, Cos):
        return _neg(_mul(Sin(node.arg), derivative(node.arg, var)))
    raise TypeError(node)


# ---------------------------------------------------------------- evaluators


def eval_float(node: Node, xs: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate in float64; ``xs[i]`` holds coordinate ``x<i+1>``."""
    if isinstance(node, Num):
        return np.asarray(float(node.value))
    if isinstance(node, Pi):
        return np.asarray(np.pi)
    if isinstance(node, Var):
        return np.asarray(xs[node.index - 1], dtype=float)
    if isinstance(node, Add):
        return eval_float(node.left, xs) + eval_float(node.right, xs)
    if isinstance(node, Sub):
        return eval_float(node.left, xs) - eval_float(node.right, xs)
    if isinstance(node, Mul):
        return eval_float(node.left, xs) * eval_float(node.right, xs)
    if isinstance(node, Neg):
        return -eval_float(node.arg, xs)
    if isinstance(node, Sin):
        return np.sin(eval_float(node.arg, xs))
    if isinstance(node, Cos):
        return np.cos(eval_float(node.arg, xs))
    raise TypeError(node)


def eval_interval(node: Node, xs: Sequence[Interval]) -> Interval:
    """Natural interval extension with outward rounding."""
    if isinstance(node, Num):
        return Interval(*fraction_bounds(node.value))
    if isinstance(node, Pi):
        return Interval(PI_LO, PI_HI)
    if isinstance(node, Var):
        return xs[node.index - 1]
    if isinstance(node, Add):
        return eval_interval(node.left, xs) + eval_interval(node.right, xs)
    if isinstance(node, Sub):
        return eval_interval(node.left, xs) - eval_interval(node.right, xs)
    if isinstance(node, Mul):
        return eval_interval(node.left, xs) * eval_interval(node.right, xs)
    if isinstance(node, Neg):
        return -eval_interval(node.arg, xs)
    if isinstance(node, Sin):
        return eval_interval(node.arg, xs).sin()
    if isinstance(node, Cos):
        return eval_interval(node.arg, xs).cos()
    raise TypeError(node)


def _eval_mp(node: Node, xs, ctx):
    if isinstance(node, Num):
        return ctx.mpf(node.value.numerator) / node.value.denominator
    if isinstance(node, Pi):
        return +ctx.pi
    if isinstance(node, Var):
        return xs[node.index - 1]
    if isinstance(node, Add):
        return _eval_mp(node.left, xs, ctx) + _eval_mp(node.right, xs, ctx)
    if isinstance(node, Sub):
        return _eval_mp(node.left, xs, ctx) - _eval_mp(node.right, xs, ctx)
    if isinstance(node, Mul):
        return _eval_mp(node.left, xs, ctx) * _eval_mp(node.right, xs, ctx)
    if isinstance(node, Neg):
        return -_eval_mp(node.arg, xs, ctx)
    if isinstance(node, Sin):
        return ctx.sin(_eval_mp(node.arg, xs, ctx))
    if isinstance(node, Cos):
        return ctx.cos(_eval_mp(node.arg, xs, ctx))
    raise TypeError(node)


def to_source(node: Node, lib: str = "math") -> str:
    """Python source for the expression, with variables ``x1, x2, ...``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Pi):
        return f"{lib}.pi"
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Add):
        return f"({to_source(node.left, lib)} + {to_source(node.right, lib)})"
    if isinstance(node, Sub):
        return f"({to_source(node.left, lib)} - {to_source(node.right, lib)})"
    if isinstance(node, Mul):
        return f"({to_source(node.left, lib)} * {to_source(node.right, lib)})"
    if isinstance(node, Neg):
        return f"(-{to_source(node.arg, lib)})"
    if isinstance(node, Sin):
        return f"{lib}.sin({to_source(node.arg, lib)})"
    if isinstance(node, Cos):
        return f"{lib}.cos({to_source(node.arg, lib)})"
    raise TypeError(node)


# ---------------------------------------------------------------- MapSpec

BUILTINS = {
    "doubling": "2*x1 mod 1",
}


def _builtin_source(name: str) -> str | None:
    if name in BUILTINS:
        return BUILTINS[name]
    if ":" in name:
        kind, _, arg = name.partition(":")
        arg = arg.strip()
        if not re.fullmatch(r"-?(\d+\.\d*|\.\d+|\d+)", arg):
            raise DSLSyntaxError("builtin parameter must be a decimal number", len(kind) + 1, arg)
        neg = arg.startswith("-")
        mag = arg.lstrip("-")
        if kind == "rotation":
            return f"x1 {'-' if neg else '+'} {mag} mod 1"
        if kind == "sine2":
            return f"x1 {'-' if neg else '+'} {mag}*sin(4*pi*x1) mod 1"
        raise DSLSyntaxError("unknown builtin map", 0, kind)
    return None


@dataclass(frozen=True)
class MapSpec:
    """A parsed torus map ``x -> F(x) mod 1``.

    Attributes
    ----------
    dim : int
        Torus dimension.
    body : tuple of Node
        Lift components, one per coordinate.
    lipschitz_bound : float
        Certified upper bound on the Lipschitz constant for the torus metric.
    label : str
        Display name (the builtin name or the normalized source).
    """

    dim: int
    body: tuple
    lipschitz_bound: float
    label: str
    jacobian: tuple = field(repr=False, compare=False, default=())

    @property
    def source(self) -> str:
        return pretty_map(self.body)

    # float evaluation -------------------------------------------------
    def lift(self, x: np.ndarray) -> np.ndarray:
        """Float evaluation of the lift ``F`` (no reduction).

        ``x`` has shape ``(..., dim)``, or any shape when ``dim == 1``.
        """
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            return eval_float(self.body[0], [x]) + np.zeros_like(x)
        xs = [x[..., i] for i in range(self.dim)]
        return np.stack([eval_float(c, xs) + np.zeros(x.shape[:-1]) for c in self.body], axis=-1)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.mod(self.lift(x), 1.0)

    def derivative_1d(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return eval_float(self.jacobian[0][0], [x]) + np.zeros_like(x)

    # interval evaluation ----------------------------------------------
    def image_enclosure(self, lo: np.ndarray, hi: np.ndarray, pieces: int = 1) -> Interval:
        """Enclosure of ``F([lo, hi])`` for a 1-D map, in lift coordinates.

        Each box is split into ``pieces`` sub-boxes; on each one the natural
        interval extension is intersected with the mean-value form, and the
        hull of the sub-box enclosures is returned.
        """
        if self.dim != 1:
            raise DimensionMismatch("image enclosures are implemented for dim=1")
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        out = None
        for p in range(pieces):
            # sub-boxes are widened by one ulp so their union covers [lo, hi]
            a = lo if p == 0 else np.nextafter(lo + (hi - lo) * (p / pieces), -np.inf)
            b = hi if p == pieces - 1 else np.nextafter(lo + (hi - lo) * ((p + 1) / pieces), np.inf)
            enc = self._mean_value_enclosure(Interval(a, b))
            out = enc if out is None else out.hull(enc)
        return out

    def _mean_value_enclosure(self, box: Interval) -> Interval:
        natural = eval_interval(self.body[0], [box])
        c = box.mid
        fc = eval_interval(self.body[0], [Interval(c, c)])
        dbox = eval_interval(self.jacobian[0][0], [box])
        radius = Interval(-(np.nextafter(c - box.lo, np.inf)), np.nextafter(box.hi - c, np.inf))
        mvf = fc + dbox * radius
        return natural.intersect(mvf)

    # compiled evaluation ----------------------------------------------
    @cached_property
    def python_lift(self):
        """Scalar Python function for the 1-D lift (math module)."""
        if self.dim != 1:
            raise DimensionMismatch("scalar lift is implemented for dim=1")
        src = f"def _lift(x1):\n    return {to_source(self.body[0], 'math')}\n"
        ns: dict = {"math": math}
        exec(src, ns)
        return ns["_lift"]


def _lipschitz(dim: int, jac: tuple) -> float:
    pieces = {1: 512, 2: 32, 3: 8}.get(dim, 4)
    edges = np.linspace(0.0, 1.0, pieces + 1)
    grids = np.meshgrid(*([np.arange(pieces)] * dim), indexing="ij")
    boxes = [Interval(edges[g.ravel()], edges[g.ravel() + 1]) for g in grids]
    sq = 0.0
    for row in jac:
        for d in row:
            enc = eval_interval(d, boxes)
            s = float(np.max(enc.mag))
            if not math.isfinite(s):
                raise UnboundedDerivative("derivative interval bound is not finite")
            sq += s * s
    if dim == 1:
        return math.sqrt(sq)  # exact: sq is the square of an outward-rounded bound
    return float(np.nextafter(math.sqrt(sq), np.inf))


def _check_descends(dim: int, body: tuple, label: str) -> None:
    rng = np.random.default_rng(0)
    x = rng.random((16, dim))
    xs = [x[:, i] for i in range(dim)]
    for j in range(dim):
        xj = list(xs)
        xj[j] = xs[j] + 1.0
        for comp in body:
            diff = eval_float(comp, xj) - eval_float(comp, xs) + np.zeros(16)
            if np.max(np.abs(diff - np.round(diff))) > 1e-9 * (1 + np.max(np.abs(diff))):
                raise NotATorusMap(f"{label}: F(x + e_{j + 1}) - F(x) is not an integer")


def parse_map(source: str, dim: int | None = None) -> MapSpec:
    """Parse a map expression or builtin name.

    Parameters
    ----------
    source : str
        DSL text such as ``"2*x1 mod 1"`` or a builtin name such as
        ``"rotation:0.3"``.
    dim : int, optional
        Expected dimension. Defaults to the number of components.

    Returns
    -------
    MapSpec

    Raises
    ------
    DSLSyntaxError
        Malformed input, annotated with the offending position.
    DimensionMismatch
        A variable index exceeds ``dim`` or the component count differs.
    UnboundedDerivative
        The derivative bound is not finite.
    """
    label = source.strip()
    builtin = _builtin_source(label)
    text = builtin if builtin is not None else source
    comps, var_pos = _Parser(text).parse_map()
    if dim is None:
        dim = len(comps)
    if dim < 1:
        raise DimensionMismatch("dim must be >= 1")
    for idx, pos in var_pos:
        if idx < 1 or idx > dim:
            raise DimensionMismatch(f"variable x{idx} at position {pos} outside 1..{dim}")
    if len(comps) != dim:
        raise DimensionMismatch(f"{len(comps)} components given for dim={dim}")
    body = tuple(comps)
    _check_descends(dim, body, label)
    jac = tuple(tuple(derivative(c, j + 1) for j in range(dim)) for c in body)
    lip = _lipschitz(dim, jac)
    if builtin is None:
        label = pretty_map(body)
    return MapSpec(dim=dim, body=body, lipschitz_bound=lip, label=label, jacobian=jac)


def torus_distance(a, b) -> np.ndarray:
    """Wrap-around distance on the circle (componentwise)."""
    d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), 1.0)
    return np.minimum(d, 1.0 - d)


def modulus_of_continuity(system: MapSpec, delta: float) -> float:
    """Upper bound on ``sup{d(f(x), f(y)) : d(x, y) <= delta}``."""
    diameter = 0.5 * math.sqrt(system.dim)
    return min(float(np.nextafter(system.lipschitz_bound * delta, np.inf)), diameter)


# ---------------------------------------------------------------- dyadic evaluation


def _to_fraction(mpf_tuple) -> Fraction:
    p, q = libmp.to_rational(mpf_tuple)
    return Fraction(int(p), int(q))


def eval_map(
    system: MapSpec,
    point: Sequence[Fraction | float] | Fraction | float,
    tol: Fraction | float,
    max_bits: int = 4096,
) -> tuple[Fraction, ...]:
    """Evaluate the map at a dyadic point to within ``tol`` in torus distance.

    The lift is enclosed with arbitrary-precision interval arithmetic. The
    working precision starts at ``2*log2(1/tol)`` bits and doubles until the
    enclosure is narrower than ``tol``.

    Parameters
    ----------
    system : MapSpec
    point : sequence of Fraction or float
        Coordinates in ``[0, 1)``; floats are converted exactly.
    tol : Fraction or float
        Target accuracy, a power of two.
    max_bits : int
        Working-precision cap.

    Returns
    -------
    tuple of Fraction
        Dyadic coordinates in ``[0, 1)``.

    Raises
    ------
    PrecisionUnreachable
        The enclosure is still too wide at ``max_bits``.
    """
    if not isinstance(point, (list, tuple, np.ndarray)):
        point = (point,)
    pts = [Fraction(p) for p in point]
    if len(pts) != system.dim:
        raise DimensionMismatch(f"point has {len(pts)} coordinates, map has dim={system.dim}")
    tol = Fraction(tol)
    if tol <= 0:
        raise ValueError("tol must be positive")
    out_bits = max(1, math.ceil(math.log2(1 / tol))) + 3
    bits = max(53, 2 * math.ceil(math.log2(1 / tol)))
    while True:
        if bits > max_bits:
            raise PrecisionUnreachable(f"enclosure wider than {float(tol):g} at {max_bits} bits")
        ctx = MPIntervalContext()
        ctx.prec = bits
        xs = [ctx.mpf(p.numerator) / p.denominator for p in pts]
        vals = []
        ok = True
        for comp in system.body:
            enc = _eval_mp(comp, xs, ctx)
            a, b = (_to_fraction(e) for e in enc._mpi_)
            if b - a > tol:
                ok = False
                break
            mid = (a + b) / 2
            mid -= math.floor(mid)
            scale = 2**out_bits
            v = Fraction(round(mid * scale), scale)
            if v >= 1:
                v -= 1
            vals.append(v)
        if ok:
            return tuple(vals)
        bits *= 2
