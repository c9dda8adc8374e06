"""Truncated power-series algebra, univariate and bivariate.

Series are Taylor expansions around a stated center with a hard
truncation order; operations never report coefficients beyond the common
truncation order of their inputs.  The univariate side carries the full
calculus the expansion pipeline needs (ring operations, exp/log,
fractional powers, composition, reversion); the bivariate side covers
rectangle-truncated arithmetic plus the partial derivative,
antiderivative and substitution operations used to build and consume the
two-variable expansions.

Coefficients are machine floats.  The pipeline's constants involve cube
roots, so exact arithmetic would buy nothing; all downstream acceptance
comparisons are numeric.

Conventions
-----------
A ``UnivariateSeries`` with center ``c`` and coefficients ``a_0..a_n``
represents ``sum a_k (t - c)^k``.  A ``BivariateSeries`` with center
``(cx, cy)`` and an ``(m1+1) x (m2+1)`` coefficient array represents
``sum a_ij (z1 - cx)^i (z2 - cy)^j``; truncation orders are tracked per
variable.  Composition-style operations require the inner series'
constant term to equal the outer center exactly as stored; callers build
shifted copies explicitly rather than relying on hidden re-centering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CenterMismatch,
    DivisionByZeroConstantTerm,
    NonpositiveConstantTerm,
    NotInvertible,
)


def _as_coeffs(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("coefficients must be a nonempty 1-d sequence")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class UnivariateSeries:
    """Truncated Taylor series in one variable around ``center``."""

    center: float
    coeffs: np.ndarray = field(repr=False)
    order: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _as_coeffs(self.coeffs))
        object.__setattr__(self, "order", self.coeffs.size - 1)

    def __repr__(self):
        head = ", ".join(f"{c:.6g}" for c in self.coeffs[:5])
        tail = ", ..." if self.order >= 5 else ""
        return (f"UnivariateSeries(center={self.center:g}, "
                f"order={self.order}, [{head}{tail}])")

    def eval(self, t: float) -> float:
        """Horner evaluation of the truncated polynomial at ``t``."""
        u = t - self.center
        acc = 0.0
        for c in self.coeffs[::-1]:
            acc = acc * u + c
        return acc

    def truncated(self, order: int) -> "UnivariateSeries":
        """Copy truncated to ``order`` (must not exceed the stored order)."""
        if order > self.order:
            raise ValueError("cannot extend a series by truncation")
        return UnivariateSeries(self.center, self.coeffs[: order + 1])

    def derivative(self) -> "UnivariateSeries":
        """Derivative series; the order drops by one."""
        if self.order == 0:
            return UnivariateSeries(self.center, [0.0])
        k = np.arange(1, self.order + 1, dtype=float)
        return UnivariateSeries(self.center, self.coeffs[1:] * k)

    # Operator sugar used by the pipeline; scalars promote to constants.
    def _coerce(self, other):
        if isinstance(other, UnivariateSeries):
            return other
        return UnivariateSeries(self.center,
                                [float(other)] + [0.0] * self.order)

    def __add__(self, other):
        return uni_arith(self, self._coerce(other), "add")

    __radd__ = __add__

    def __sub__(self, other):
        return uni_arith(self, self._coerce(other), "sub")

    def __rsub__(self, other):
        return uni_arith(self._coerce(other), self, "sub")

    def __mul__(self, other):
        return uni_arith(self, self._coerce(other), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return uni_arith(self, self._coerce(other), "div")

    def __rtruediv__(self, other):
        return uni_arith(self._coerce(other), self, "div")

    def __neg__(self):
        return UnivariateSeries(self.center, -self.coeffs)


@dataclass(frozen=True)
class BivariateSeries:
    """Rectangle-truncated Taylor series in two variables."""

    center: tuple
    coeffs: np.ndarray = field(repr=False)
    orders: tuple = field(init=False)

    def __post_init__(self):
        arr = np.array(self.coeffs, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("coefficients must be a nonempty 2-d array")
        arr.flags.writeable = False
        object.__setattr__(self, "coeffs", arr)
        object.__setattr__(self, "center",
                           (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "orders",
                           (arr.shape[0] - 1, arr.shape[1] - 1))

    def __repr__(self):
        return (f"BivariateSeries(center=({self.center[0]:g}, "
                f"{self.center[1]:g}), orders={self.orders})")


# --- raw-array kernels ----------------------------------------------------
# The public operations wrap these; the expansion engine also calls them
# directly on hot paths.  All kernels truncate to the output length they
# are given and never read beyond their inputs.

def _umul(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    return np.convolve(a[: n + 1], b[: n + 1])[: n + 1]

def _udiv(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    if b[0] == 0.0:
        raise DivisionByZeroConstantTerm(
            "series division needs a nonzero constant term")
    out = np.zeros(n + 1, dtype=np.result_type(a, b))
    for k in range(n + 1):
        ak = a[k] if k < a.size else 0.0
        s = np.dot(out[:k], b[k:0:-1]) if k else 0.0
        out[k] = (ak - s) / b[0]
    return out

def _uexp(a: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n + 1, dtype=np.result_type(a, float))
    # a zero constant term stays exact for any scalar type
    out[0] = a[0] + 1 if a[0] == 0 else np.exp(a[0])
    for k in range(1, n + 1):
        j = np.arange(1, k + 1)
        aj = a[1: k + 1] if a.size > k else np.pad(a[1:], (0, k + 1 - a.size))
        out[k] = np.dot(j * aj, out[k - 1 :: -1][: k]) / k
    return out

def _ulog(a: np.ndarray, n: int) -> np.ndarray:
    if a[0] <= 0.0:
        raise NonpositiveConstantTerm(
            "series log needs a positive constant term")
    out = np.zeros(n + 1, dtype=np.result_type(a, float))
    out[0] = np.log(a[0])
    for k in range(1, n + 1):
        ak = a[k] if k < a.size else 0.0
        s = 0.0
        for j in range(1, k):
            aj = a[k - j] if k - j < a.size else 0.0
            s += j * out[j] * aj
        out[k] = (ak - s / k) / a[0]
    return out

def _upow(a: np.ndarray, r: float, n: int) -> np.ndarray:
    if a[0] <= 0.0:
        raise NonpositiveConstantTerm(
            "fractional powers need a positive constant term")
    out = np.zeros(n + 1, dtype=np.result_type(a, float))
    out[0] = a[0] ** r
    for k in range(1, n + 1):
        s = 0.0
        for j in range(1, k + 1):
            aj = a[j] if j < a.size else 0.0
            s += ((r + 1.0) * j - k) * aj * out[k - j]
        out[k] = s / (k * a[0])
    return out

def _ucompose(outer: np.ndarray, inner0: np.ndarray, n: int) -> np.ndarray:
    # inner0 must have zero constant term; Horner over the outer coeffs
    acc = np.zeros(n + 1, dtype=np.result_type(outer, inner0))
    for c in outer[::-1]:
        acc = _umul(acc, inner0, n)
        acc[0] += c
    return acc

def _urevert(a: np.ndarray, n: int) -> np.ndarray:
    # a[0] must be 0 and a[1] nonzero; returns r with a(r(t)) = t
    out = np.zeros(n + 1, dtype=np.result_type(a, float))
    if n >= 1:
        out[1] = 1.0 / a[1]
    for k in range(2, n + 1):
        comp = _ucompose(a[: k + 1], out[: k + 1], k)
        out[k] -= comp[k] / a[1]
    return out

def _bmul(a: np.ndarray, b: np.ndarray, m1: int, m2: int) -> np.ndarray:
    out = np.zeros((m1 + 1, m2 + 1))
    ni = min(a.shape[0], m1 + 1)
    nj = min(a.shape[1], m2 + 1)
    bv = b[: m1 + 1, : m2 + 1]
    for i in range(ni):
        row = a[i]
        for j in range(nj):
            if row[j] != 0.0:
                blk = bv[: m1 + 1 - i, : m2 + 1 - j]
                out[i: i + blk.shape[0], j: j + blk.shape[1]] += row[j] * blk
    return out

def _bdiv(a: np.ndarray, b: np.ndarray, m1: int, m2: int) -> np.ndarray:
    if b[0, 0] == 0.0:
        raise DivisionByZeroConstantTerm(
            "bivariate division needs a nonzero constant coefficient")
    out = np.zeros((m1 + 1, m2 + 1))
    for i in range(m1 + 1):
        for j in range(m2 + 1):
            aij = a[i, j] if i < a.shape[0] and j < a.shape[1] else 0.0
            s = np.sum(out[: i + 1, : j + 1]
                       * b[i::-1, j::-1][: i + 1, : j + 1])
            out[i, j] = (aij - s) / b[0, 0]
    return out


# --- public operations ----------------------------------------------------

def uni_arith(a: UnivariateSeries, b: UnivariateSeries,
              kind: str) -> UnivariateSeries:
    """Ring operation on two series around the same center.

    ``kind`` is one of ``add``, ``sub``, ``mul``, ``div``.  The result is
    truncated at the smaller of the two input orders.
    """
    if a.center != b.center:
        raise CenterMismatch(
            f"centers differ: {a.center} vs {b.center}")
    n = min(a.order, b.order)
    x, y = a.coeffs[: n + 1], b.coeffs[: n + 1]
    if kind == "add":
        out = x + y
    elif kind == "sub":
        out = x - y
    elif kind == "mul":
        out = _umul(x, y, n)
    elif kind == "div":
        out = _udiv(x, y, n)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return UnivariateSeries(a.center, out)


def uni_map(a: UnivariateSeries, kind: str,
            exponent: float | None = None) -> UnivariateSeries:
    """Apply ``exp``, ``log`` or ``power`` coefficientwise-exactly.

    ``power`` requires ``exponent`` and, like ``log``, a positive
    constant term.
    """
    if kind == "exp":
        out = _uexp(a.coeffs, a.order)
    elif kind == "log":
        out = _ulog(a.coeffs, a.order)
    elif kind == "power":
        if exponent is None:
            raise ValueError("power requires an exponent")
        out = _upow(a.coeffs, float(exponent), a.order)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return UnivariateSeries(a.center, out)


def uni_compose(outer: UnivariateSeries,
                inner: UnivariateSeries) -> UnivariateSeries:
    """Series of ``outer(inner(.))``.

    The inner constant term must equal the outer center exactly as
    stored; the result lives around the inner center and is truncated at
    the smaller of the two orders.
    """
    if inner.coeffs[0] != outer.center:
        raise CenterMismatch(
            f"inner constant term {inner.coeffs[0]} does not equal "
            f"outer center {outer.center}")
    n = min(outer.order, inner.order)
    shifted = inner.coeffs[: n + 1].copy()
    shifted[0] = 0.0
    return UnivariateSeries(inner.center,
                            _ucompose(outer.coeffs[: n + 1], shifted, n))


def uni_revert(a: UnivariateSeries) -> UnivariateSeries:
    """Compositional inverse of a series with zero constant term.

    Returns ``b`` around 0 with constant term ``a.center`` such that
    ``uni_compose(a, b)`` is the identity to truncation order.
    """
    if a.coeffs[0] != 0.0 or a.order < 1 or a.coeffs[1] == 0.0:
        raise NotInvertible(
            "reversion needs zero constant term and nonzero linear term")
    out = _urevert(a.coeffs, a.order)
    out[0] = a.center
    return UnivariateSeries(0.0, out)


def bi_ops(a: BivariateSeries, b: BivariateSeries,
           kind: str) -> BivariateSeries:
    """Rectangle-truncated ``add``, ``mul`` or ``div``."""
    if a.center != b.center:
        raise CenterMismatch(
            f"centers differ: {a.center} vs {b.center}")
    m1 = min(a.orders[0], b.orders[0])
    m2 = min(a.orders[1], b.orders[1])
    x = a.coeffs[: m1 + 1, : m2 + 1]
    y = b.coeffs[: m1 + 1, : m2 + 1]
    if kind == "add":
        out = x + y
    elif kind == "mul":
        out = _bmul(x, y, m1, m2)
    elif kind == "div":
        out = _bdiv(x, y, m1, m2)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return BivariateSeries(a.center, out)


def bi_partial_z1(a: BivariateSeries) -> BivariateSeries:
    """Partial derivative in the first variable; first order drops by one."""
    m1 = a.orders[0]
    if m1 == 0:
        return BivariateSeries(a.center, np.zeros((1, a.orders[1] + 1)))
    k = np.arange(1, m1 + 1, dtype=float)[:, None]
    return BivariateSeries(a.center, a.coeffs[1:] * k)


def bi_antiderivative_z1(a: BivariateSeries) -> BivariateSeries:
    """Antiderivative in the first variable with zero integration slice.

    The first order grows by one; the j-indexed family of integration
    constants is fixed to zero.
    """
    m1, m2 = a.orders
    out = np.zeros((m1 + 2, m2 + 1))
    k = np.arange(1, m1 + 2, dtype=float)[:, None]
    out[1:] = a.coeffs / k
    return BivariateSeries(a.center, out)


def bi_subst(a: BivariateSeries, z1_series: UnivariateSeries,
             z2_series: UnivariateSeries) -> UnivariateSeries:
    """Substitute univariate series for both variables.

    Both inner series must share one variable (same center) and their
    constant terms must hit the bivariate centers exactly.  The result is
    truncated at the smaller inner order.
    """
    if z1_series.center != z2_series.center:
        raise CenterMismatch("inner series live in different variables")
    if z1_series.coeffs[0] != a.center[0]:
        raise CenterMismatch(
            f"first inner constant term {z1_series.coeffs[0]} does not "
            f"equal center {a.center[0]}")
    if z2_series.coeffs[0] != a.center[1]:
        raise CenterMismatch(
            f"second inner constant term {z2_series.coeffs[0]} does not "
            f"equal center {a.center[1]}")
    n = min(z1_series.order, z2_series.order)
    t1 = z1_series.coeffs[: n + 1].copy()
    t1[0] = 0.0
    t2 = z2_series.coeffs[: n + 1].copy()
    t2[0] = 0.0
    # Horner over j inside, then over i: cost (m1 m2) series products.
    m1, m2 = a.orders
    acc = np.zeros(n + 1)
    for i in range(m1, -1, -1):
        inner = np.zeros(n + 1)
        for j in range(m2, -1, -1):
            inner = _umul(inner, t2, n)
            inner[0] += a.coeffs[i, j]
        acc = _umul(acc, t1, n)
        acc += inner
    return UnivariateSeries(z1_series.center, acc)
