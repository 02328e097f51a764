"""Special functions, quadrature, root finding and reproducible sampling.

Everything here is a pure function of its inputs.  The incomplete gamma
routines only support positive half-integer order, which is all the gain
statistics in this package ever need: integer order uses the finite sum

    Gamma(n, x) = (n-1)! e^{-x} sum_{j<n} x^j / j!

and half-integer order climbs the recurrence

    Gamma(s+1, x) = s Gamma(s, x) + x^s e^{-x}

seeded by Gamma(1/2, x) = sqrt(pi) erfc(sqrt(x)).
"""

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import BracketingError, DomainError, NonConvergenceError

_SQRT_PI = math.sqrt(math.pi)
_UINT64_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class IntegrationSpec:
    """Tolerances and truncation controls for adaptive quadrature.

    ``tail_cut`` is the offset beyond the lower limit at which a
    semi-infinite axis is truncated; integrands here all carry an
    exponential envelope, so e^{-tail_cut} bounds the discarded tail.
    """

    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    tail_cut: float = 40.0
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not (self.rel_tol > 0):
            raise DomainError(f"rel_tol must be > 0, got {self.rel_tol}")
        if not (self.abs_tol >= 0):
            raise DomainError(f"abs_tol must be >= 0, got {self.abs_tol}")
        if not (self.tail_cut > 0):
            raise DomainError(f"tail_cut must be > 0, got {self.tail_cut}")
        if self.max_subdivisions < 1:
            raise DomainError("max_subdivisions must be >= 1")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream identified by (seed, stream_id).

    Equal (seed, stream_id) pairs reproduce bitwise-identical draws no
    matter how many workers run or in which order streams are consumed.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array(
            [self.seed & _UINT64_MASK, self.stream_id & _UINT64_MASK],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, offset: int) -> "RngStream":
        return RngStream(self.seed, (self.stream_id + offset) & _UINT64_MASK)


def _half_integer_times_two(s: float) -> int:
    """Validate s in {1/2, 1, 3/2, ...} and return round(2 s)."""
    two_s = 2.0 * s
    n = round(two_s)
    if n < 1 or abs(two_s - n) > 1e-9:
        raise DomainError(f"order must be a positive multiple of 1/2, got {s}")
    return n


def gamma_fn(s: float) -> float:
    """Gamma(s) for positive half-integer s."""
    n = _half_integer_times_two(s)
    if n % 2 == 0:
        return float(math.factorial(n // 2 - 1))
    val = _SQRT_PI
    cur = 0.5
    while cur + 1.0 <= s:
        val *= cur
        cur += 1.0
    return val


def upper_incomplete_gamma(s: float, x):
    """Gamma(s, x) = int_x^inf t^{s-1} e^{-t} dt for half-integer s >= 1/2.

    Accepts scalar or ndarray x >= 0 and evaluates elementwise.
    """
    n = _half_integer_times_two(s)
    xs = np.asarray(x, dtype=float)
    if np.any(xs < 0) or not np.all(np.isfinite(xs)):
        raise DomainError("x must be finite and nonnegative")
    if n % 2 == 0:
        order = n // 2
        term = np.ones_like(xs)
        acc = np.ones_like(xs)
        for j in range(1, order):
            term = term * xs / j
            acc = acc + term
        out = math.factorial(order - 1) * np.exp(-xs) * acc
    else:
        root = np.sqrt(xs)
        out = _SQRT_PI * erfc(root)
        p = root * np.exp(-xs)  # x^{1/2} e^{-x}
        cur = 0.5
        for _ in range((n - 1) // 2):
            out = cur * out + p
            p = p * xs
            cur += 1.0
    if np.ndim(x) == 0:
        return float(out)
    return out


# 15-point Gauss-Kronrod rule (7-point Gauss embedded), positive abscissae.
_XGK_HALF = (
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898,
)
_WGK_HALF = (
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298,
)
_WGK_CENTER = 0.209482141084728
_WG_HALF = (0.129484966168870, 0.279705391489277, 0.381830050505119)
_WG_CENTER = 0.417959183673469

GK_NODES = np.array([-a for a in _XGK_HALF] + [0.0] + list(reversed(_XGK_HALF)))
GK_WEIGHTS = np.array(list(_WGK_HALF) + [_WGK_CENTER] + list(reversed(_WGK_HALF)))
# Gauss weights sit on the odd Kronrod abscissae; zero elsewhere.
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[1:14:2] = list(_WG_HALF) + [_WG_CENTER] + list(reversed(_WG_HALF))

_ORDER = np.argsort(GK_NODES)
GK_NODES = GK_NODES[_ORDER]
GK_WEIGHTS = GK_WEIGHTS[_ORDER]
GAUSS_WEIGHTS = GAUSS_WEIGHTS[_ORDER]


def gk_panels(lo, hi, n_panels: int, ratio: float = 1.0):
    """Gauss-Kronrod points and weights on n_panels panels of [lo, hi].

    ``lo`` and ``hi`` may be arrays; the panel axis is appended last.
    Panel widths grow geometrically by ``ratio`` (1.0 gives equal
    panels); a ratio > 1 concentrates points near the lower limit,
    which suits integrands with an exponential decay from there.
    Returns (points, kronrod_weights, gauss_weights) with shape
    lo.shape + (15 * n_panels,).  Degenerate ranges (hi <= lo) produce
    zero weights and therefore contribute nothing.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    span = np.maximum(hi - lo, 0.0)
    if ratio == 1.0:
        offsets = np.linspace(0.0, 1.0, n_panels + 1)
    else:
        grid = np.concatenate(([0.0], np.cumsum(ratio ** np.arange(n_panels))))
        offsets = grid / grid[-1]
    edges = lo[..., None] + span[..., None] * offsets
    half = 0.5 * (edges[..., 1:] - edges[..., :-1])[..., None]
    centers = 0.5 * (edges[..., 1:] + edges[..., :-1])[..., None]
    pts = centers + half * GK_NODES
    wk = half * GK_WEIGHTS
    wg = half * GAUSS_WEIGHTS
    shape = lo.shape + (15 * n_panels,)
    return pts.reshape(shape), wk.reshape(shape), wg.reshape(shape)


def integrate_1d(f, a: float, b: float, spec: IntegrationSpec | None = None) -> float:
    """Adaptive Gauss-Kronrod quadrature of f on [a, b], b may be +inf.

    ``f`` must evaluate elementwise on ndarrays.  A semi-infinite upper
    limit is truncated at a + spec.tail_cut, relying on the integrand's
    exponential decay.  Raises NonConvergenceError (carrying the best
    estimate and its error bound) once max_subdivisions is exhausted.
    """
    spec = spec or IntegrationSpec()
    if not np.isfinite(a):
        raise DomainError("lower limit must be finite")
    if math.isinf(b):
        b = a + spec.tail_cut
    if b <= a:
        return 0.0

    def panel(lo: float, hi: float):
        c = 0.5 * (lo + hi)
        h = 0.5 * (hi - lo)
        y = np.asarray(f(c + h * GK_NODES), dtype=float)
        val = h * float(GK_WEIGHTS @ y)
        err = abs(val - h * float(GAUSS_WEIGHTS @ y))
        return val, err

    n_seed = 4
    edges = np.linspace(a, b, n_seed + 1)
    heap = []
    total = 0.0
    total_err = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err = panel(lo, hi)
        total += val
        total_err += err
        heapq.heappush(heap, (-err, lo, hi, val))
    n_sub = n_seed
    while total_err > max(spec.abs_tol, spec.rel_tol * abs(total)):
        if n_sub >= spec.max_subdivisions:
            raise NonConvergenceError(
                f"quadrature did not converge after {n_sub} subdivisions",
                best_estimate=total,
                error_bound=total_err,
            )
        neg_err, lo, hi, val = heapq.heappop(heap)
        total -= val
        total_err += neg_err  # neg_err == -err
        mid = 0.5 * (lo + hi)
        for seg in ((lo, mid), (mid, hi)):
            v, e = panel(*seg)
            total += v
            total_err += e
            heapq.heappush(heap, (-e, seg[0], seg[1], v))
        n_sub += 1
    return total


def find_root(
    f,
    lo: float,
    hi: float,
    rel_tol: float = 1e-12,
    f_lo: float | None = None,
    f_hi: float | None = None,
) -> float:
    """Root of a continuous monotone f on [lo, hi], Illinois regula falsi.

    Bracketed secant steps with stale-side damping, falling back to
    bisection whenever a step degenerates; the iterate never leaves the
    bracket.  Terminates when the relative bracket width drops below
    rel_tol.  Known endpoint values may be passed to avoid re-evaluation.
    """
    if not (rel_tol > 0):
        raise DomainError("rel_tol must be > 0")
    if not (lo < hi):
        raise DomainError("need lo < hi")
    flo = float(f(lo)) if f_lo is None else float(f_lo)
    fhi = float(f(hi)) if f_hi is None else float(f_hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if math.copysign(1.0, flo) == math.copysign(1.0, fhi):
        raise BracketingError(f"no sign change on [{lo}, {hi}]: f={flo}, {fhi}")
    side = 0
    for _ in range(400):
        scale = max(abs(lo), abs(hi), 1e-300)
        if hi - lo <= rel_tol * scale:
            break
        x = (lo * fhi - hi * flo) / (fhi - flo)
        if not (lo < x < hi):
            x = 0.5 * (lo + hi)
        fx = float(f(x))
        if fx == 0.0:
            return x
        if math.copysign(1.0, fx) == math.copysign(1.0, flo):
            lo, flo = x, fx
            if side == -1:
                fhi *= 0.5
            side = -1
        else:
            hi, fhi = x, fx
            if side == 1:
                flo *= 0.5
            side = 1
    return 0.5 * (lo + hi)


def complex_gaussian_from_uniform(u: np.ndarray) -> np.ndarray:
    """Map uniforms of shape (..., 2) to CN(0, 1) samples of shape (...).

    Polar Box-Muller: modulus sqrt(-ln(1-u0)) gives |h|^2 ~ Exp(1), phase
    2 pi u1; real and imaginary parts come out N(0, 1/2) each.
    """
    r = np.sqrt(-np.log1p(-u[..., 0]))
    phase = (2.0 * np.pi) * u[..., 1]
    return r * np.cos(phase) + 1j * (r * np.sin(phase))


def sample_complex_gaussian_vector(m: int, rng: RngStream) -> np.ndarray:
    """Length-m vector of IID CN(0, 1) entries, deterministic in rng."""
    if m < 1:
        raise DomainError(f"vector length must be >= 1, got {m}")
    u = rng.generator().random((m, 2))
    return complex_gaussian_from_uniform(u)
