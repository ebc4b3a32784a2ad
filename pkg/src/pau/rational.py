"""Rational activation units: safe/unsafe evaluation and exact gradients.

A unit of order [m/n] computes

    F(x) = P(x) / Q(x)
    P(x) = a_0 + a_1 x + ... + a_m x^m
    A(x) = b_1 x + ... + b_n x^n
    Q(x) = 1 + A(x)      (unsafe; may have real poles)
    Q(x) = 1 + |A(x)|    (safe; Q >= 1 for every real x)

The denominator's constant term is pinned at 1 and never stored, so the
learnable state of one unit is m+1 numerator plus n denominator
coefficients.  Gradients are computed analytically:

    dF/dx   = P'(x)/Q(x) - Q'(x) * P(x)/Q(x)^2
    dF/da_j = x^j / Q(x)
    dF/db_k = -x^k * s * P(x)/Q(x)^2

with s = sign(A(x)) in safe mode (and Q'(x) = s * A'(x)), s = 1 in unsafe
mode.  sign(0) is defined as 0, which keeps the gradients finite at the
kink of |A|.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_POLE_FLOOR = 1e-12


class PoleError(ArithmeticError):
    """Unsafe-mode denominator magnitude fell below the pole floor."""

    def __init__(self, x, q, index=None):
        self.x = x
        self.q = q
        self.index = index
        at = f" at index {index}" if index is not None else ""
        super().__init__(f"denominator {q!r} below pole floor{at} (x={x!r})")


@dataclass
class RationalCoefficients:
    """Coefficient state of one rational unit: a_0..a_m and b_1..b_n."""

    numerator: np.ndarray
    denominator: np.ndarray

    def __post_init__(self):
        self.numerator = np.atleast_1d(np.asarray(self.numerator, dtype=np.float64))
        self.denominator = np.asarray(self.denominator, dtype=np.float64).reshape(-1)
        if self.numerator.ndim != 1 or self.numerator.size == 0:
            raise ValueError("numerator must be a non-empty 1-D vector")
        if not np.all(np.isfinite(self.numerator)) or not np.all(np.isfinite(self.denominator)):
            raise ValueError("coefficients must be finite")

    @property
    def m(self) -> int:
        return self.numerator.size - 1

    @property
    def n(self) -> int:
        return self.denominator.size

    def copy(self) -> "RationalCoefficients":
        return RationalCoefficients(self.numerator.copy(), self.denominator.copy())

    def __eq__(self, other):
        if not isinstance(other, RationalCoefficients):
            return NotImplemented
        return (np.array_equal(self.numerator, other.numerator)
                and np.array_equal(self.denominator, other.denominator))


def zeros_like_coefficients(coeffs: RationalCoefficients) -> RationalCoefficients:
    return RationalCoefficients(np.zeros(coeffs.m + 1), np.zeros(coeffs.n))


def sign(z):
    """-1 for z<0, +1 for z>0 and 0 for z=0, elementwise on arrays."""
    return np.sign(z)


def eval_polynomial(coeffs, x):
    """Horner evaluation of sum_i coeffs[i] * x**i.

    ``coeffs`` is a 1-D vector shared across all of ``x``, or a stack of
    shape ``x.shape + (d+1,)`` holding one coefficient vector per element.
    A single fused pass, no explicit powers.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape[-1] == 0:
        raise ValueError("empty coefficient vector")
    scalar = np.ndim(x) == 0 and c.ndim == 1
    xa = np.asarray(x, dtype=np.float64)
    acc = c[..., -1] + np.zeros_like(xa)
    for i in range(c.shape[-1] - 2, -1, -1):
        acc = acc * xa + c[..., i]
    return float(acc) if scalar else acc


def _poly_A(den, x):
    """A(x) = b_1 x + ... + b_n x^n; exact zero when n = 0."""
    d = np.asarray(den, dtype=np.float64)
    xa = np.asarray(x, dtype=np.float64)
    if d.shape[-1] == 0:
        return np.zeros_like(xa)
    acc = d[..., -1] + np.zeros_like(xa)
    for i in range(d.shape[-1] - 2, -1, -1):
        acc = acc * xa + d[..., i]
    return acc * xa


def _pau_parts(x, numerator, denominator, safe):
    P = eval_polynomial(numerator, np.asarray(x, dtype=np.float64))
    A = _poly_A(denominator, x)
    Q = 1.0 + np.abs(A) if safe else 1.0 + A
    return P, A, Q


def _check_poles(x, Q, pole_floor):
    bad = np.abs(Q) < pole_floor
    if not np.any(bad):
        return
    if np.ndim(Q) == 0:
        raise PoleError(float(np.asarray(x)), float(Q))
    idx = int(np.argmax(bad))
    raise PoleError(float(np.asarray(x).reshape(-1)[idx]), float(Q.reshape(-1)[idx]), index=idx)


def eval_pau(x, coeffs: RationalCoefficients, safe: bool = True,
             pole_floor: float = DEFAULT_POLE_FLOOR):
    """Evaluate the unit at a scalar x.  Unsafe mode raises PoleError when
    the denominator magnitude drops below ``pole_floor``."""
    P, _, Q = _pau_parts(x, coeffs.numerator, coeffs.denominator, safe)
    if not safe:
        _check_poles(x, Q, pole_floor)
    out = P / Q
    return float(out) if np.ndim(x) == 0 else out


def eval_pau_batch(xs, coeffs: RationalCoefficients, safe: bool = True,
                   pole_floor: float = DEFAULT_POLE_FLOOR) -> np.ndarray:
    """Elementwise evaluation; bit-identical to looping :func:`eval_pau`.

    A pole raises with the index of the first offending element.
    """
    xa = np.asarray(xs, dtype=np.float64)
    P, _, Q = _pau_parts(xa, coeffs.numerator, coeffs.denominator, safe)
    if not safe:
        _check_poles(xa, Q, pole_floor)
    return P / Q


def eval_pau_stacked(xs, num_stack, den_stack, safe: bool = True) -> np.ndarray:
    """Evaluate with one coefficient vector per element (noise-perturbed
    units); stacks have shape (len(xs), m+1) and (len(xs), n)."""
    xa = np.asarray(xs, dtype=np.float64)
    P, _, Q = _pau_parts(xa, num_stack, den_stack, safe)
    return P / Q


@dataclass
class PauGradientBundle:
    """Gradients of a single evaluation: dF/dx, dF/da_j (m+1), dF/db_k (n)."""

    d_input: float
    d_numerator: np.ndarray
    d_denominator: np.ndarray


def _grad_parts(x, numerator, denominator, safe, pole_floor=None):
    """Vectorized gradient components sharing one (P, A, Q) evaluation.

    Returns (d_input, d_num, d_den) with d_num of shape x.shape + (m+1,)
    and d_den of shape x.shape + (n,).  Coefficient arrays may carry a
    leading per-element stack exactly as in :func:`eval_polynomial`.
    ``pole_floor`` triggers the unsafe-mode pole check before anything is
    divided by Q.
    """
    num = np.asarray(numerator, dtype=np.float64)
    den = np.asarray(denominator, dtype=np.float64)
    xa = np.asarray(x, dtype=np.float64)
    m = num.shape[-1] - 1
    n = den.shape[-1]

    P, A, Q = _pau_parts(xa, num, den, safe)
    if not safe and pole_floor is not None:
        _check_poles(xa, Q, pole_floor)
    s = np.sign(A) if safe else np.ones_like(A)

    # P'(x) and A'(x) by Horner on the derivative coefficients
    if m >= 1:
        dnum = num[..., 1:] * np.arange(1, m + 1, dtype=np.float64)
        dP = eval_polynomial(dnum, xa)
    else:
        dP = np.zeros_like(xa)
    if n >= 1:
        dden = den * np.arange(1, n + 1, dtype=np.float64)
        dA = eval_polynomial(dden, xa)
    else:
        dA = np.zeros_like(xa)

    PQ2 = P / Q ** 2
    d_input = dP / Q - s * dA * PQ2

    powers = np.empty(xa.shape + (max(m, n) + 1,))
    powers[..., 0] = 1.0
    for j in range(1, max(m, n) + 1):
        powers[..., j] = powers[..., j - 1] * xa
    d_num = powers[..., :m + 1] / Q[..., None]
    d_den = -powers[..., 1:n + 1] * (s * PQ2)[..., None]
    return d_input, d_num, d_den, Q


def grad_pau(x, coeffs: RationalCoefficients, safe: bool = True,
             pole_floor: float = DEFAULT_POLE_FLOOR) -> PauGradientBundle:
    """Exact analytic gradients of the unit at a scalar x."""
    d_input, d_num, d_den, _ = _grad_parts(
        x, coeffs.numerator, coeffs.denominator, safe, pole_floor=pole_floor)
    return PauGradientBundle(float(d_input), d_num, d_den)


def backward_pau(xs, upstream, coeffs: RationalCoefficients, safe: bool = True,
                 pole_floor: float = DEFAULT_POLE_FLOOR,
                 coefficient_stacks=None):
    """Backward pass for one shared unit applied elementwise.

    Returns ``(d_inputs, (d_numerator, d_denominator))`` where d_inputs[i]
    is upstream[i] * dF/dx at xs[i] and the coefficient gradients are the
    sums of upstream[i] * dF/dc over all elements, accumulated strictly
    left to right so parallel splits can merge reproducibly.

    ``coefficient_stacks``, when given as ``(num_stack, den_stack)`` with
    one coefficient vector per element, evaluates the gradients at those
    (e.g. noise-perturbed) coefficients instead of the shared ones.
    """
    xa = np.asarray(xs, dtype=np.float64).reshape(-1)
    up = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if xa.size != up.size:
        raise ValueError(f"length mismatch: {xa.size} inputs vs {up.size} upstream")
    if coefficient_stacks is None:
        num, den = coeffs.numerator, coeffs.denominator
    else:
        num, den = coefficient_stacks
    d_input, d_num, d_den, _ = _grad_parts(xa, num, den, safe,
                                           pole_floor=pole_floor)
    if xa.size == 0:
        return (np.zeros(0),
                (np.zeros(coeffs.m + 1), np.zeros(coeffs.n)))
    d_inputs = up * d_input
    num_acc = np.add.accumulate(up[:, None] * d_num, axis=0)[-1]
    den_acc = np.add.accumulate(up[:, None] * d_den, axis=0)[-1]
    return d_inputs, (num_acc, den_acc)


def sample_noisy_coeffs(coeffs: RationalCoefficients, alpha: float, rng,
                        size=None):
    """Perturb each coefficient by a uniform draw on [c - a|c|, c + a|c|].

    ``rng`` is a seed or a numpy Generator.  With ``size=None`` one
    perturbed RationalCoefficients is returned; an integer size returns
    stacked arrays ``(num_stack, den_stack)`` with one sample per element.
    alpha = 0 returns the coefficients unchanged and draws nothing from
    the generator.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    num, den = coeffs.numerator, coeffs.denominator
    if alpha == 0.0:
        if size is None:
            return coeffs.copy()
        return (np.broadcast_to(num, (size, num.size)).copy(),
                np.broadcast_to(den, (size, den.size)).copy())
    gen = np.random.default_rng(rng)
    shape_num = (num.size,) if size is None else (size, num.size)
    shape_den = (den.size,) if size is None else (size, den.size)
    lo_n, hi_n = num - alpha * np.abs(num), num + alpha * np.abs(num)
    lo_d, hi_d = den - alpha * np.abs(den), den + alpha * np.abs(den)
    num_s = gen.uniform(lo_n, hi_n, shape_num)
    den_s = gen.uniform(lo_d, hi_d, shape_den)
    if size is None:
        return RationalCoefficients(num_s, den_s)
    return num_s, den_s


# ---------------------------------------------------------------------------
# Coefficient document format (UTF-8 text, key/value, value-exact round trip)
# ---------------------------------------------------------------------------

class DocumentFormatError(ValueError):
    """Malformed coefficient document."""


@dataclass
class CoefficientDocument:
    coefficients: RationalCoefficients
    safe: bool = True
    provenance: str = ""


def _fmt(values) -> str:
    # repr() of a Python float is the shortest decimal that round-trips
    return " ".join(repr(float(v)) for v in values)


def write_coefficient_document(path, coeffs: RationalCoefficients,
                               safe: bool = True, provenance: str = "") -> None:
    lines = [
        "version 1",
        f"orders {coeffs.m} {coeffs.n}",
        f"safe {'true' if safe else 'false'}",
        f"numerator {_fmt(coeffs.numerator)}".rstrip(),
        f"denominator {_fmt(coeffs.denominator)}".rstrip(),
        f"provenance {provenance}".rstrip(),
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_coefficient_document(path) -> CoefficientDocument:
    fields = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            fields[key] = rest
    for required in ("version", "orders", "safe", "numerator"):
        if required not in fields:
            raise DocumentFormatError(f"missing field {required!r}")
    if fields["version"].strip() != "1":
        raise DocumentFormatError(f"unsupported version {fields['version']!r}")
    try:
        m, n = (int(t) for t in fields["orders"].split())
    except ValueError as exc:
        raise DocumentFormatError(f"bad orders line: {fields['orders']!r}") from exc
    safe_text = fields["safe"].strip().lower()
    if safe_text not in ("true", "false"):
        raise DocumentFormatError(f"bad safe flag {fields['safe']!r}")
    try:
        numerator = [float(t) for t in fields["numerator"].split()]
        denominator = [float(t) for t in fields.get("denominator", "").split()]
    except ValueError as exc:
        raise DocumentFormatError("bad coefficient literal") from exc
    if len(numerator) != m + 1 or len(denominator) != n:
        raise DocumentFormatError(
            f"coefficient counts ({len(numerator)}, {len(denominator)}) "
            f"do not match orders ({m}, {n})")
    coeffs = RationalCoefficients(np.array(numerator), np.array(denominator))
    return CoefficientDocument(coeffs, safe=safe_text == "true",
                               provenance=fields.get("provenance", ""))
