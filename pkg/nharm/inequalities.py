"""Pointwise integrands, weights and the inequalities they satisfy.

Every formula is evaluated with numpy so that the same code serves single
gradients and batched random sweeps (leading axes are sample axes).
"""

import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from nharm.config import P0_OFFSET

log = logging.getLogger(__name__)


class ParamsError(ValueError):
    pass


@dataclass(frozen=True)
class GrowthParams:
    n: int
    N: int
    p: float
    delta: float = 0.0
    s: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise ParamsError(f"n must be an integer >= 2, got {self.n}")
        if int(self.N) != self.N or self.N < 1:
            raise ParamsError(f"N must be an integer >= 1, got {self.N}")
        if not self.p >= self.n:
            raise ParamsError(f"p must be >= n={self.n}, got {self.p}")
        if not 0 <= self.delta <= 1:
            raise ParamsError(f"delta must lie in [0, 1], got {self.delta}")
        if not 0 <= self.s <= 1:
            raise ParamsError(f"s must lie in [0, 1], got {self.s}")

    def with_(self, **changes) -> "GrowthParams":
        return replace(self, **changes)

    @property
    def P0(self) -> float:
        return self.n + P0_OFFSET

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GrowthParams":
        try:
            return cls(n=int(d["n"]), N=int(d["N"]), p=float(d["p"]),
                       delta=float(d.get("delta", 0.0)), s=float(d.get("s", 1.0)))
        except KeyError as e:
            raise ParamsError(f"growth params missing field {e.args[0]!r}") from None


@dataclass(frozen=True)
class Check:
    holds: bool
    slack: float

    def __bool__(self) -> bool:
        return self.holds


@dataclass(frozen=True)
class MonotonicityGap:
    pairing: float
    v_gap: float
    p_gap: float


@dataclass(frozen=True)
class CordesReport:
    lhs: float
    rhs: float
    epsilon_max: float
    admissible: bool


# ---------------------------------------------------------------------------
# Guarded powers and the scalar profile functions
# ---------------------------------------------------------------------------

def gpow(base, exponent):
    """base**exponent via exp/log; 0 for base <= 0 and exactly 1 for exponent 0."""
    base = np.asarray(base, dtype=float)
    exponent = np.asarray(exponent, dtype=float)
    base, exponent = np.broadcast_arrays(base, exponent)
    out = np.zeros(base.shape)
    pos = base > 0
    out[pos] = np.exp(exponent[pos] * np.log(base[pos]))
    unit = (exponent == 1) & pos
    out[unit] = base[unit]
    out[exponent == 0] = 1.0
    return out


def density(t, n, p, delta, s):
    """Integrand as a function of t = |G|^2.

    A^q - B^q is evaluated as B^q expm1(q log1p((A-B)/B)) while A - B <= B, and
    directly otherwise (the difference then loses at most a few ulp). The
    increment (delta+t)^{n/2} - delta^{n/2} is split the same way.
    """
    t = np.asarray(t, dtype=float)
    delta = np.asarray(delta, dtype=float)
    s = np.asarray(s, dtype=float)
    p = np.asarray(p, dtype=float)
    half, q = n / 2, p / n
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        dh = gpow(delta, half)
        safe = np.where(delta > 0, delta, 1.0)
        grow = np.where(t <= delta,
                        dh * np.expm1(half * np.log1p(t / safe)),
                        gpow(delta + t, half) - dh)
        B = s + dh
        safe_b = np.where(B > 0, B, 1.0)
        diff = np.where(grow <= B,
                        gpow(B, q) * np.expm1(q * np.log1p(grow / safe_b)),
                        gpow(B + grow, q) - gpow(B, q))
    return diff / p


def weight_of(t, n, p, delta, s):
    a = s + gpow(delta + t, n / 2)
    return gpow(a, (p - n) / n) * gpow(delta + t, (n - 2) / 2)


def entropy_density(t, n, p, delta):
    a = 1.0 + gpow(delta + t, n / 2)
    return gpow(a, p / n) * np.log(a)


def _sq(X):
    X = np.asarray(X, dtype=float)
    return np.sum(X * X, axis=-1)


def _flat(G):
    G = np.asarray(G, dtype=float)
    return G.reshape(G.shape[:-2] + (-1,)) if G.ndim >= 2 else G


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


# ---------------------------------------------------------------------------
# Integrand, weight, V-map
# ---------------------------------------------------------------------------

def integrand(G, params: GrowthParams):
    """(1/p)[(s + (delta+|G|^2)^{n/2})^{p/n} - (s + delta^{n/2})^{p/n}], |G| Frobenius."""
    t = _sq(_flat(G))
    return _scalar(density(t, params.n, params.p, params.delta, params.s))


def weight(t, params: GrowthParams):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ParamsError("weight is defined for t >= 0 only")
    return _scalar(weight_of(t, params.n, params.p, params.delta, params.s))


def half_weight(t, params: GrowthParams):
    return _scalar(np.sqrt(np.asarray(weight(t, params))))


def v_map(X, params: GrowthParams) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    w = weight_of(_sq(X), params.n, params.p, params.delta, params.s)
    return np.sqrt(w)[..., None] * X


def _gaps(X, Y, n, p, delta, s):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    wx = weight_of(_sq(X), n, p, delta, s)
    wy = weight_of(_sq(Y), n, p, delta, s)
    D = X - Y
    pairing = np.sum((wx[..., None] * X - wy[..., None] * Y) * D, axis=-1)
    V = np.sqrt(wx)[..., None] * X - np.sqrt(wy)[..., None] * Y
    v_gap = _sq(V)
    p_gap = gpow(_sq(D), np.asarray(p) / 2)
    return pairing, v_gap, p_gap, wx, wy


def monotonicity_gap(X, Y, params: GrowthParams) -> MonotonicityGap:
    pairing, v_gap, p_gap, _, _ = _gaps(X, Y, params.n, params.p, params.delta, params.s)
    return MonotonicityGap(float(pairing), float(v_gap), float(p_gap))


def monotonicity_constants(n: int) -> tuple[float, float]:
    """(c0, c1) with pairing >= c0 v_gap >= c1 p_gap for every p in [n, n+1).

    pairing >= (int g) |X-Y|^2 and |V(X)-V(Y)| <= (p/2) int sqrt(g), so
    c0 = 4/(n+1)^2. sqrt(g(|Z|^2)) >= |Z|^a with a = (p-2)/2 <= (n-1)/2 gives
    v_gap >= 4^-a/(a+1)^2 |X-Y|^p.
    """
    c0 = 4.0 / (n + 1) ** 2
    a = (n - 1) / 2
    return c0, c0 * 4.0 ** (-a) / (a + 1) ** 2


def calibrate_monotonicity_constants(n: int, P0: float | None = None,
                                     radii: int = 200, angles: int = 64,
                                     scales=(1e-2, 1e-1, 1.0, 10.0),
                                     p_points: int = 6) -> tuple[float, float]:
    """Empirical infima of pairing/v_gap and c0*v_gap/p_gap.

    Samples X = a e_1, Y = a r (cos theta, sin theta) with r log-spaced in
    [1e-3, 1e3], theta in [0, pi] and (delta, s) on the corners and middle of
    [0, 1]^2; the planar reduction loses nothing because both sides only see
    |X|, |Y| and the angle between them.
    """
    P0 = n + P0_OFFSET if P0 is None else P0
    c0_pinned, _ = monotonicity_constants(n)
    r = np.concatenate([[0.0], np.logspace(-3, 3, radii)])
    th = np.linspace(0.0, math.pi, angles)
    R, T, A = np.meshgrid(r, th, np.asarray(scales, dtype=float), indexing="ij")
    X = np.stack([A, np.zeros_like(A)], axis=-1).reshape(-1, 2)
    Y = np.stack([A * R * np.cos(T), A * R * np.sin(T)], axis=-1).reshape(-1, 2)
    ratio0, ratio1 = math.inf, math.inf
    for p in np.linspace(n, P0, p_points + 1)[1:]:
        for delta in (0.0, 0.5, 1.0):
            for s in (0.0, 0.5, 1.0):
                pairing, v_gap, p_gap, _, _ = _gaps(X, Y, n, p, delta, s)
                ok = p_gap > 1e-300
                ratio0 = min(ratio0, float(np.min(pairing[ok] / v_gap[ok])))
                ratio1 = min(ratio1, float(np.min(c0_pinned * v_gap[ok] / p_gap[ok])))
    log.debug("monotonicity calibration n=%d: c0 %.6g, c1 %.6g", n, ratio0, ratio1)
    return ratio0, ratio1


# ---------------------------------------------------------------------------
# Uniqueness bounds, growth bounds
# ---------------------------------------------------------------------------

def _tolerance(scale):
    return 1e-12 * (1.0 + scale)


def uniqueness_lower_slack(X, Y, n, p, delta, s):
    pairing, _, _, wx, wy = _gaps(X, Y, n, p, delta, s)
    rhs = 0.5 * (wx + wy) * _sq(np.asarray(X, dtype=float) - np.asarray(Y, dtype=float))
    nx, ny = np.sqrt(_sq(X)), np.sqrt(_sq(Y))
    scale = (wx + wy) * (nx + ny) ** 2
    return pairing - rhs, scale


def uniqueness_upper_slack(X, Y, n, p, delta, s):
    _, v_gap, _, wx, wy = _gaps(X, Y, n, p, delta, s)
    dist = np.sqrt(_sq(np.asarray(X, dtype=float) - np.asarray(Y, dtype=float)))
    rhs = (np.asarray(p) / 2) * (np.sqrt(wx) + np.sqrt(wy)) * dist
    nx, ny = np.sqrt(_sq(X)), np.sqrt(_sq(Y))
    scale = (np.sqrt(wx) + np.sqrt(wy)) * (nx + ny) * np.asarray(p)
    return rhs - np.sqrt(v_gap), scale


def uniqueness_lower_check(X, Y, params: GrowthParams) -> Check:
    """pairing >= (1/2)[w(|X|^2) + w(|Y|^2)] |X-Y|^2."""
    slack, scale = uniqueness_lower_slack(X, Y, params.n, params.p, params.delta, params.s)
    return Check(bool(slack >= -_tolerance(scale)), float(slack))


def uniqueness_upper_check(X, Y, params: GrowthParams) -> Check:
    """|V(X) - V(Y)| <= (p/2)[w^(1/2)(|X|^2) + w^(1/2)(|Y|^2)] |X-Y|."""
    slack, scale = uniqueness_upper_slack(X, Y, params.n, params.p, params.delta, params.s)
    return Check(bool(slack >= -_tolerance(scale)), float(slack))


def convexity_constant(n: int, P0: float | None = None) -> float:
    P0 = n + P0_OFFSET if P0 is None else P0
    if not n < P0:
        raise ParamsError(f"P0 must exceed n={n}, got {P0}")
    return (1 + 2 ** (n / 2)) ** ((n + 1) / n) / (n * (P0 - n))


def sandwich_constant(n: int) -> float:
    return (1 + 2 ** (n / 2)) ** ((n + 1) / n)


def convexity_slack(x, n, p, delta, P0):
    t = _sq(x)
    lhs = density(t, n, p, delta, 1.0)
    norm = np.sqrt(t)
    rhs = gpow(norm, n) / n + convexity_constant(n, P0) * np.maximum(gpow(norm, p), 1.0) * (P0 - n + delta)
    return rhs - lhs, np.abs(lhs) + np.abs(rhs)


def convexity_bound_check(x, params: GrowthParams, P0: float | None = None) -> Check:
    if params.s != 1:
        raise ParamsError("the convexity bound is stated for s = 1")
    P0 = params.P0 if P0 is None else P0
    slack, scale = convexity_slack(x, params.n, params.p, params.delta, P0)
    return Check(bool(slack >= -_tolerance(scale)), float(slack))


def sandwich_slack(x, n, p, delta, s):
    t = _sq(x)
    norm = np.sqrt(t)
    value = p * density(t, n, p, delta, s)
    lower = np.maximum(gpow(norm, n) - 1.0, gpow(norm, p))
    upper = sandwich_constant(n) * (1.0 + gpow(norm, p))
    scale = np.abs(value) + upper
    return value - lower, upper - value, scale


@dataclass(frozen=True)
class SandwichCheck:
    holds: bool
    lower_slack: float
    upper_slack: float


def sandwich_check(x, params: GrowthParams) -> SandwichCheck:
    """max{|x|^n - 1, |x|^p} <= p*integrand(x) <= C3 (1 + |x|^p)."""
    lo, hi, scale = sandwich_slack(x, params.n, params.p, params.delta, params.s)
    tol = _tolerance(scale)
    return SandwichCheck(bool(lo >= -tol and hi >= -tol), float(lo), float(hi))


def power_triangle_check(x, y, p: float, n: int, P0: float | None = None) -> Check:
    """|x-y|^p <= 2^(P0-1)(|x|^p + |y|^p) and the same with exponent n."""
    P0 = n + P0_OFFSET if P0 is None else P0
    if not n <= p <= P0:
        raise ParamsError(f"need n <= p <= P0, got n={n}, p={p}, P0={P0}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d, a, b = (math.sqrt(float(_sq(v))) for v in (x - y, x, y))
    slack_p = 2 ** (P0 - 1) * (a ** p + b ** p) - d ** p
    slack_n = 2 ** (n - 1) * (a ** n + b ** n) - d ** n
    slack = min(slack_p, slack_n)
    return Check(bool(slack >= -_tolerance(a ** P0 + b ** P0 + a ** n + b ** n)), float(slack))


def rescaling_identity_check(G, r: float, params: GrowthParams) -> Check:
    """integrand_{p, r^2 delta, r^n s}(r G) = r^p integrand_{p,delta,s}(G).

    The rescaled parameters may leave [0, 1], so the kernel functions are used
    directly rather than through GrowthParams.
    """
    if not r > 0:
        raise ParamsError(f"scale must be positive, got {r}")
    n, p = params.n, params.p
    t = float(_sq(_flat(G)))
    lhs = float(density(r * r * t, n, p, r * r * params.delta, r ** n * params.s))
    rhs = r ** p * float(density(t, n, p, params.delta, params.s))
    err = abs(lhs - rhs)
    return Check(err <= 1e-12 * max(abs(lhs), abs(rhs)) + 1e-300, -err)


def p_monotonicity_check(G, p1: float, p2: float, delta: float) -> bool:
    G = np.asarray(G, dtype=float)
    n = G.shape[0] if G.ndim == 2 else 2
    if not n <= p1 < p2:
        raise ParamsError(f"need n <= p1 < p2, got n={n}, p1={p1}, p2={p2}")
    t = _sq(_flat(G))
    a = float(density(t, n, p1, delta, 1.0))
    b = float(density(t, n, p2, delta, 1.0))
    return a <= b + 1e-12 * max(1.0, abs(b))


# ---------------------------------------------------------------------------
# Cordes condition
# ---------------------------------------------------------------------------

def cordes_coefficients(G, p: float, delta: float) -> np.ndarray:
    """A[i, a, j, b] = d_ij d_ab + (p-2) G_ia G_jb / (delta + |G|^2), G of shape (n, N)."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 2:
        raise ParamsError(f"G must be an n x N matrix, got shape {G.shape}")
    n, N = G.shape
    denom = delta + float(np.sum(G * G))
    if denom == 0:
        raise ParamsError("coefficients are undefined for delta = 0 and G = 0")
    eye = np.einsum("ij,ab->iajb", np.eye(n), np.eye(N))
    return eye + (p - 2) * np.einsum("ia,jb->iajb", G, G) / denom


def cordes_lhs_rhs(coeffs: np.ndarray, epsilon: float) -> tuple[float, float]:
    if not 0 < epsilon <= 1:
        raise ParamsError(f"epsilon must lie in (0, 1], got {epsilon}")
    n, N = coeffs.shape[0], coeffs.shape[1]
    lhs = float(np.sum(coeffs * coeffs))
    trace = float(np.einsum("iaia->", coeffs))
    return lhs, trace ** 2 / (n * N - 1 + epsilon)


def cordes_epsilon_max(p: float, nN: int) -> float:
    """Largest epsilon in (0, 1] meeting the condition for every t in [0, 1], else 0.

    With m = nN the condition reads (m-1+eps) <= T(t)^2 / L(t), where
    T = m + (p-2)t and L = (m-1) + (1+(p-2)t)^2. The ratio is minimized at t = 1.
    """
    if p < 1 or nN < 1:
        raise ParamsError(f"need p >= 1 and nN >= 1, got p={p}, nN={nN}")
    m = nN
    if m == 1:
        return 1.0
    q = p - 2.0
    ratio = (m + q) ** 2 / ((m - 1) + (1 + q) ** 2)
    eps = ratio - (m - 1)
    if eps <= 0:
        return 0.0
    return min(1.0, eps)


def cordes_admissible(n: int, N: int, p: float) -> bool:
    m = n * N
    return m <= 2 or p < 3 + 2 / (m - 2)


def contraction_factor(epsilon: float) -> float:
    if not 0 < epsilon <= 1:
        raise ParamsError(f"epsilon must lie in (0, 1], got {epsilon}")
    return math.sqrt(1 - epsilon)


def cordes_report(gradients, p: float, delta: float) -> CordesReport:
    """Condition at epsilon_max over a batch of (n, N) gradients; the worst sample is reported."""
    gradients = np.asarray(gradients, dtype=float)
    if gradients.ndim == 2:
        gradients = gradients[None]
    n, N = gradients.shape[1:]
    eps = cordes_epsilon_max(p, n * N)
    worst = (0.0, 0.0)
    worst_gap = -math.inf
    ok = eps > 0
    for G in gradients:
        lhs, rhs = cordes_lhs_rhs(cordes_coefficients(G, p, delta), eps if eps > 0 else 1.0)
        if lhs - rhs > worst_gap:
            worst_gap, worst = lhs - rhs, (lhs, rhs)
        ok = ok and lhs <= rhs * (1 + 1e-12)
    return CordesReport(worst[0], worst[1], eps, bool(ok))


# ---------------------------------------------------------------------------
# Seeded sweep used by check-inequalities
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    name: str
    samples: int
    min_slack: float
    violations: int
    worst: dict

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return asdict(self)


def _ball(rng, count: int, dim: int, radius: float) -> np.ndarray:
    v = rng.standard_normal((count, dim))
    v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
    return v * rng.uniform(0.0, radius, (count, 1))


def _summarize(name, slack, scale, sample) -> SweepResult:
    tol = _tolerance(scale)
    bad = slack < -tol
    rel = slack / (1.0 + scale)
    i = int(np.argmin(rel))
    worst = {key: (val[i].tolist() if isinstance(val, np.ndarray) else val)
             for key, val in sample.items()}
    worst["slack"] = float(slack[i])
    return SweepResult(name, int(slack.size), float(np.min(slack)), int(bad.sum()), worst)


def sample_exponents(rng, n: int, count: int) -> np.ndarray:
    """p drawn from the open interval (n, n + 1); a zero uniform draw lands at n + 1 - 1e-9."""
    return n + (1.0 - rng.uniform(0.0, 1.0, count)) * (1 - 1e-9)


def run_inequality_suite(samples: int, seed: int) -> list[SweepResult]:
    """All kernel inequalities on seeded random samples.

    n in {2, 3}, N in {1, 2, 3}, |X|, |Y| <= 10, p in (n, n+1), delta, s in [0, 1].
    """
    if samples < 1:
        raise ParamsError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(seed)
    results: dict[str, list] = {}

    for n in (2, 3):
        c0, c1 = monotonicity_constants(n)
        P0 = n + P0_OFFSET
        for N in (1, 2, 3):
            count = samples // 6 + (1 if (n - 2) * 3 + N - 1 < samples % 6 else 0)
            if count == 0:
                continue
            dim = n * N
            X = _ball(rng, count, dim, 10.0)
            Y = _ball(rng, count, dim, 10.0)
            p = sample_exponents(rng, n, count)
            delta = rng.uniform(0.0, 1.0, count)
            s = rng.uniform(0.0, 1.0, count)
            sample = {"n": n, "N": N, "X": X, "Y": Y, "p": p, "delta": delta, "s": s}

            pairing, v_gap, p_gap, wx, wy = _gaps(X, Y, n, p, delta, s)
            nx, ny = np.sqrt(_sq(X)), np.sqrt(_sq(Y))
            scale = (wx + wy) * (nx + ny) ** 2
            checks = [
                ("monotonicity_pairing", pairing - c0 * v_gap, scale),
                ("monotonicity_power", c0 * v_gap - c1 * p_gap, scale + p_gap),
                ("uniqueness_lower", *uniqueness_lower_slack(X, Y, n, p, delta, s)),
                ("uniqueness_upper", *uniqueness_upper_slack(X, Y, n, p, delta, s)),
            ]
            lo, hi, sw_scale = sandwich_slack(X, n, p, delta, s)
            checks += [("sandwich_lower", lo, sw_scale), ("sandwich_upper", hi, sw_scale)]
            checks.append(("convexity", *convexity_slack(X, n, p, delta, P0)))

            p2 = p + (n + 1 - p) * rng.uniform(0.0, 1.0, count)
            a = density(_sq(X), n, p, delta, 1.0)
            b = density(_sq(X), n, p2, delta, 1.0)
            checks.append(("p_monotonicity", b - a, np.abs(a) + np.abs(b)))

            t = _sq(X)
            V = np.sqrt(wx)[:, None] * X
            checks.append(("v_map_identity", -np.abs(_sq(V) - wx * t), wx * t))

            r = np.exp(rng.uniform(-3.0, 3.0, count))
            lhs = density(r * r * t, n, p, r * r * delta, r ** n * s)
            rhs = r ** p * density(t, n, p, delta, s)
            checks.append(("rescaling_identity", -np.abs(lhs - rhs), np.abs(lhs) + np.abs(rhs)))

            d2 = np.sqrt(_sq(X - Y))
            top = np.maximum(P0, p)
            tri = np.minimum(2 ** (top - 1) * (nx ** p + ny ** p) - d2 ** p,
                             2 ** (n - 1) * (nx ** n + ny ** n) - d2 ** n)
            checks.append(("power_triangle", tri, 2 ** top * (nx + ny) ** top + (nx + ny) ** n))

            for name, slack, sc in checks:
                results.setdefault(name, []).append((slack, sc, sample))

    out = []
    for name, parts in results.items():
        merged = [_summarize(name, slack, sc, sample) for slack, sc, sample in parts]
        worst = min(merged, key=lambda r: r.min_slack / (1.0 + abs(r.min_slack)))
        out.append(SweepResult(
            name,
            sum(r.samples for r in merged),
            min(r.min_slack for r in merged),
            sum(r.violations for r in merged),
            worst.worst,
        ))
    return out
