"""Particle-population solver for the limiting conductance law on [1, inf).

The law is the unique fixed point of the map taking X1, X2 iid and U uniform
to (U + (1-U)/(X1+X2))^{-1}; one population step resamples both arguments
with replacement from the current cloud.  The map contracts the 1-Wasserstein
metric at rate 2(1-log 2) ~ 0.6137, so iteration from any start converges to
the fixed point up to the Monte Carlo floor of the population size.

Validation tooling lives here too: moment identities, the tail law
F(t) = K0/t + 1 - K0 on [1,2], a kernel density profile, and the exact-moment
residual of the Laplace-transform ODE 2 l phi'' + l phi' + phi^2 - phi = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CONTRACTION_RATE = 2.0 * (1.0 - math.log(2.0))  # ~0.6137 per iteration
_CHUNK = 1 << 20


class CloudFormatError(ValueError):
    pass


@dataclass(eq=False)
class ParticleCloud:
    """Sorted empirical approximation of the conductance law."""

    samples: np.ndarray
    iteration_count: int = 0
    seed: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def size(self) -> int:
        return self.samples.size

    def validate(self) -> None:
        if self.samples.size == 0:
            raise CloudFormatError("empty cloud")
        if not np.all(np.isfinite(self.samples)):
            raise CloudFormatError("cloud holds non-finite values")
        if self.samples[0] < 1.0:
            raise CloudFormatError("cloud support must lie in [1, inf)")
        if np.any(np.diff(self.samples) < 0):
            raise CloudFormatError("cloud values must be sorted ascending")


def constant_cloud(m: int, value: float = 1.0, seed: int = 0) -> ParticleCloud:
    return ParticleCloud(np.full(m, float(value)), iteration_count=0, seed=seed)


def g_map(u, x, y):
    """(u + (1-u)/(x+y))^{-1}; lies in [1, x+y] on the stated domain."""
    u = np.asarray(u, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(u < 0.0) or np.any(u > 1.0):
        raise ValueError("u outside [0, 1]")
    if np.any(x < 1.0) or np.any(y < 1.0):
        raise ValueError("x, y must be >= 1")
    out = 1.0 / (u + (1.0 - u) / (x + y))
    return float(out) if out.ndim == 0 else out


def phi_step(cloud: ParticleCloud, rng, out_size: int | None = None) -> ParticleCloud:
    """One population step: out_size iid draws of G(U, X1, X2) with X1, X2
    resampled with replacement from the cloud.

    Output indices are produced in fixed chunks, each from its own spawned
    stream (draw order per chunk: X1 indices, X2 indices, U), so the result
    does not depend on how chunks would be scheduled across workers.
    """
    m_out = cloud.size if out_size is None else int(out_size)
    s = cloud.samples
    n_chunks = (m_out + _CHUNK - 1) // _CHUNK
    streams = rng.spawn(n_chunks)
    parts = []
    for k, sub in enumerate(streams):
        m = min(_CHUNK, m_out - k * _CHUNK)
        x = s[sub.integers(0, s.size, size=m)]
        x += s[sub.integers(0, s.size, size=m)]
        u = sub.random(m)
        parts.append(1.0 / (u + (1.0 - u) / x))
    out = np.sort(np.concatenate(parts)) if n_chunks > 1 else np.sort(parts[0])
    return ParticleCloud(out, cloud.iteration_count + 1, cloud.seed)


def phi_step_coupled(a: ParticleCloud, b: ParticleCloud, rng, out_size: int | None = None):
    """Apply one step to two equal-size clouds with shared (index, U) draws:
    the sorted-order coupling that realises the contraction bound."""
    if a.size != b.size:
        raise ValueError("coupled step needs equal cloud sizes")
    m_out = a.size if out_size is None else int(out_size)
    i = rng.integers(0, a.size, size=m_out)
    j = rng.integers(0, a.size, size=m_out)
    u = rng.random(m_out)
    out_a = 1.0 / (u + (1.0 - u) / (a.samples[i] + a.samples[j]))
    out_b = 1.0 / (u + (1.0 - u) / (b.samples[i] + b.samples[j]))
    return (
        ParticleCloud(np.sort(out_a), a.iteration_count + 1, a.seed),
        ParticleCloud(np.sort(out_b), b.iteration_count + 1, b.seed),
    )


def wasserstein1(a: ParticleCloud, b: ParticleCloud) -> float:
    """d1 between empirical laws: mean |order-statistic gap| for equal sizes,
    else L1 distance of the quantile functions on a uniform grid of
    max(size) points (levels (k+1/2)/K, lower empirical quantile)."""
    x, y = a.samples, b.samples
    if x.size == 0 or y.size == 0:
        raise ValueError("empty cloud")
    if x.size == y.size:
        return float(np.mean(np.abs(x - y)))
    k = max(x.size, y.size)
    u = (np.arange(k) + 0.5) / k
    qx = x[(u * x.size).astype(np.int64)]
    qy = y[(u * y.size).astype(np.int64)]
    return float(np.mean(np.abs(qx - qy)))


@dataclass
class SolveResult:
    cloud: ParticleCloud
    trace: list  # (iteration, d1 to previous cloud)
    converged: bool
    tol: float


def solve_fixpoint(
    m: int,
    tol: float,
    max_iters: int,
    rng,
    initial: ParticleCloud | None = None,
    seed: int = 0,
    polish: int = 0,
) -> SolveResult:
    """Iterate the population step from the all-ones cloud until successive
    clouds are tol-close in d1.  Non-convergence is reported, never raised.

    The stopping rule measures step size, not distance to the fixed point;
    stopping the monotone approach from all-ones leaves a residual bias of
    order tol in smooth functionals.  `polish` extra steps after convergence
    shrink it by the contraction rate per step.
    """
    if m < 1000:
        raise ValueError("population size must be >= 1e3")
    cloud = initial if initial is not None else constant_cloud(m, 1.0, seed)
    trace = []
    converged = False
    for it in range(1, max_iters + 1):
        nxt = phi_step(cloud, rng, out_size=m)
        d1 = wasserstein1(nxt, cloud) if nxt.size == cloud.size else float("nan")
        trace.append((it, d1))
        cloud = nxt
        if d1 < tol:
            converged = True
            break
    if converged:
        for _ in range(polish):
            nxt = phi_step(cloud, rng, out_size=m)
            trace.append((cloud.iteration_count + 1, wasserstein1(nxt, cloud)))
            cloud = nxt
    cloud = ParticleCloud(cloud.samples, cloud.iteration_count, seed)
    return SolveResult(cloud=cloud, trace=trace, converged=converged, tol=tol)


def estimate_floor(cloud: ParticleCloud, rng) -> float:
    """Monte Carlo floor estimate: d1 between two independent bootstrap
    resamples of the cloud (the scale below which d1 cannot shrink)."""
    m = cloud.size
    a = np.sort(cloud.samples[rng.integers(0, m, size=m)])
    b = np.sort(cloud.samples[rng.integers(0, m, size=m)])
    return float(np.mean(np.abs(a - b)))


# ---------------------------------------------------------------------------
# distribution functionals
# ---------------------------------------------------------------------------


def tail_cdf(cloud: ParticleCloud, t: float) -> float:
    """F(t) = fraction of mass in [t, inf)."""
    s = cloud.samples
    return float((s.size - np.searchsorted(s, t, side="left")) / s.size)


def estimate_K0(cloud: ParticleCloud) -> float:
    """K0 = 2 P(C < 2), the density at 1; the tail on [1,2] is K0/t + 1 - K0."""
    return 2.0 * (1.0 - tail_cdf(cloud, 2.0))


def moment(cloud: ParticleCloud, m: int) -> float:
    if m < 1:
        raise ValueError("moment order must be >= 1")
    return float(np.mean(cloud.samples**m))


def density_profile(cloud: ParticleCloud, grid, bandwidth: float | None = None):
    """Gaussian-kernel density on `grid`, reflected at the support edge t=1.

    Default bandwidth 0.01 at 1e7 samples, scaled by (M/1e7)^{-1/5}.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(grid < 1.0):
        raise ValueError("grid must lie in [1, inf)")
    s = cloud.samples
    bw = bandwidth if bandwidth is not None else 0.01 * (s.size / 1e7) ** (-0.2)
    binw = bw / 4.0
    hi = grid.max() + 6.0 * bw
    nbins = int(np.ceil((hi - 1.0) / binw))
    counts, edges = np.histogram(s, bins=nbins, range=(1.0, 1.0 + nbins * binw))
    pad = int(np.ceil(5.0 * bw / binw))
    padded = np.concatenate((counts[:pad][::-1], counts))  # reflect mass below 1
    half = int(np.ceil(4.0 * bw / binw))
    xs = np.arange(-half, half + 1) * binw
    kern = np.exp(-0.5 * (xs / bw) ** 2)
    kern /= kern.sum()
    smooth = np.convolve(padded, kern, mode="same")[pad:]
    centers = 0.5 * (edges[:-1] + edges[1:])
    dens = smooth / (s.size * binw)
    return np.interp(grid, centers, dens)


# ---------------------------------------------------------------------------
# fixed-point identities
# ---------------------------------------------------------------------------


@dataclass
class IdentityCheck:
    name: str
    residual: float
    std_error: float
    n: int

    @property
    def z(self) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.residual == 0.0 else float("inf")
        return self.residual / self.std_error


def _g_funcs(g_spec):
    kind, arg = g_spec
    if kind == "monomial":
        m = int(arg)
        return (
            f"x^{m}",
            lambda x: x**m,
            lambda x: m * x ** (m - 1) if m > 1 else np.ones_like(x),
        )
    if kind == "exp":
        ell = float(arg)
        return (
            f"exp(-{ell:g}x/2)",
            lambda x: np.exp(-ell * x / 2.0),
            lambda x: -(ell / 2.0) * np.exp(-ell * x / 2.0),
        )
    raise ValueError(f"unknown identity test function {g_spec!r}")


def check_identity(cloud: ParticleCloud, g_spec, rng, n: int | None = None, batches: int = 100):
    """Monte Carlo residual of E[X(X-1)g'(X)] + E[g(X)] - E[g(X1+X2)] with
    X, X1, X2 resampled from the cloud; zero at the fixed point."""
    name, g, gp = _g_funcs(g_spec)
    s = cloud.samples
    n = s.size if n is None else int(n)
    x = s[rng.integers(0, s.size, size=n)]
    y = s[rng.integers(0, s.size, size=n)]
    res = x * (x - 1.0) * gp(x) + g(x) - g(x + y)
    m = n // batches
    bmeans = res[: m * batches].reshape(batches, m).mean(axis=1)
    return IdentityCheck(
        name=name,
        residual=float(res.mean()),
        std_error=float(bmeans.std(ddof=1) / np.sqrt(batches)),
        n=n,
    )


@dataclass
class OdeResidual:
    ell: float
    residual: float
    std_error: float

    @property
    def z(self) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.residual == 0.0 else float("inf")
        return self.residual / self.std_error


def laplace_ode_residual(cloud: ParticleCloud, ell_grid, rng=None) -> list[OdeResidual]:
    """Residual of 2 l phi'' + l phi' + phi^2 - phi at each l, with phi and
    its derivatives computed as exact sample averages (no numerical
    differentiation); standard errors by 100 batch means."""
    if rng is None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cloud.seed)))
    s = cloud.samples[rng.permutation(cloud.size)]
    batches = 100
    m = s.size // batches
    arr = s[: m * batches].reshape(batches, m)
    out = []
    for ell in np.asarray(ell_grid, dtype=np.float64):
        e = np.exp(-ell * arr / 2.0)
        phi_b = e.mean(axis=1)
        dphi_b = np.mean(-arr / 2.0 * e, axis=1)
        d2phi_b = np.mean(arr**2 / 4.0 * e, axis=1)
        res_b = 2.0 * ell * d2phi_b + ell * dphi_b + phi_b**2 - phi_b
        full = np.exp(-ell * s / 2.0)
        phi = full.mean()
        res = (
            2.0 * ell * np.mean(s**2 / 4.0 * full)
            + ell * np.mean(-s / 2.0 * full)
            + phi * phi
            - phi
        )
        out.append(
            OdeResidual(
                ell=float(ell),
                residual=float(res),
                std_error=float(res_b.std(ddof=1) / np.sqrt(batches)),
            )
        )
    return out


# ---------------------------------------------------------------------------
# cloud file format (text; consumed by the beta and continuum modules)
# ---------------------------------------------------------------------------

CLOUD_MAGIC = "GAMMA-CLOUD"
CLOUD_VERSION = "v1"


def save_cloud(cloud: ParticleCloud, path) -> None:
    """`GAMMA-CLOUD v1 <M> <seed> <iterations>` then one value per line,
    ascending, at full round-trip precision."""
    cloud.validate()
    with open(path, "w") as fh:
        fh.write(f"{CLOUD_MAGIC} {CLOUD_VERSION} {cloud.size} {cloud.seed} {cloud.iteration_count}\n")
        s = cloud.samples
        for lo in range(0, s.size, _CHUNK):
            np.savetxt(fh, s[lo : lo + _CHUNK], fmt="%.17g")


def load_cloud(path) -> ParticleCloud:
    with open(path, "r") as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise CloudFormatError(f"{path}: header must be '{CLOUD_MAGIC} {CLOUD_VERSION} <M> <seed> <iterations>'")
        magic, version, m_str, seed_str, iters_str = header
        if magic != CLOUD_MAGIC:
            raise CloudFormatError(f"{path}: bad magic {magic!r}")
        if version != CLOUD_VERSION:
            raise CloudFormatError(f"{path}: unsupported version {version!r}")
        try:
            m, seed, iters = int(m_str), int(seed_str), int(iters_str)
        except ValueError as exc:
            raise CloudFormatError(f"{path}: non-integer header field") from exc
        samples = np.loadtxt(fh, dtype=np.float64)
    samples = np.atleast_1d(samples)
    if samples.size != m:
        raise CloudFormatError(f"{path}: count field says {m}, file holds {samples.size}")
    cloud = ParticleCloud(samples, iteration_count=iters, seed=seed)
    cloud.validate()
    return cloud
