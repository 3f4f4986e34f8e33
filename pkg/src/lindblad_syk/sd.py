"""Large-N Schwinger-Dyson solver for the dissipative form factor.

``Tr exp(t L)`` is a path integral over a closed (antiperiodic) contour of
length ``t`` for the ``+`` and ``-`` Majorana flavours. Two-time functions
live on the uniform grid ``tau_k = k t/m``. The free propagator is
``G0(tau, tau') = sgn(tau - tau')/2`` (zero on the diagonal), integrals use
the periodic trapezoid rule, and the bath enters as the local kernel

    K = [[0, i mu], [-i mu, 0]] delta(tau - tau').

With ``s_ab = -1`` for equal flavours and ``(-1)^(q/2)`` otherwise, the
saddle point equations are

    G = (1 - G0 * (Sigma + K))^-1 G0,      Sigma_ab = J^2 s_ab G_ab^(q-1),

and the action per Majorana (normalized so ``mu = J = 0`` gives ``ln 2``) is

    iS = ln 2 + 1/2 log det(1 - G0 (Sigma + K)) - 1/2 sum_ab <Sigma_ab, G_ab>
         + J^2/(2q) sum_ab s_ab <G_ab^q, 1> - mu t / 2.

Every kernel on the closed contour is anti-circulant (a function of
``tau - tau'`` that flips sign on wrapping around), so besides the dense
two-time route there is a lag representation: a ``(2, 2, m)`` array of
``G_ab(k dt, 0)`` diagonalized by a twisted FFT over the fermionic
frequencies ``pi (2n + 1) / m``. The two routes solve the same discrete
equations; the lag route is what makes Newton polishing and long contours
cheap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy.optimize import least_squares, newton_krylov, root

from .errors import (
    ConvergenceError,
    DivergenceError,
    FitError,
    InvalidArgumentError,
    NumericError,
)

log = logging.getLogger(__name__)

Branch = Literal["system_seeded", "bath_seeded"]
BRANCHES = ("system_seeded", "bath_seeded")
FLAVOURS = ("++", "+-", "-+", "--")

# Newton with a dense finite-difference Jacobian up to this many real unknowns
DENSE_NEWTON_MAX = 1100


@dataclass(frozen=True)
class SDGrid:
    t: float
    m: int

    def __post_init__(self):
        if self.m < 16 or self.m % 2:
            raise InvalidArgumentError(f"grid needs an even m >= 16, got {self.m}")
        if not self.t > 0 or not math.isfinite(self.t):
            raise InvalidArgumentError(f"contour length must be positive, got {self.t}")

    @classmethod
    def with_spacing(cls, t: float, dt: float, multiple: int = 4, minimum: int = 16) -> "SDGrid":
        """Grid whose spacing is at most ``dt``, with ``m`` a multiple of
        ``multiple`` (4 keeps the half grid usable for extrapolation)."""
        m = max(minimum, int(math.ceil(t / dt / multiple)) * multiple)
        return cls(float(t), m)

    @property
    def dt(self) -> float:
        return self.t / self.m

    @property
    def taus(self) -> np.ndarray:
        return np.arange(self.m) * self.dt

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.m, self.dt)

    def free_propagator(self) -> np.ndarray:
        k = np.arange(self.m)
        return 0.5 * np.sign(k[:, None] - k[None, :]).astype(complex)


@dataclass(frozen=True)
class SDState:
    """Converged (or last) iterate of the saddle-point equations.

    ``G`` and ``Sigma`` are ``(2m, 2m)`` arrays in flavour blocks
    ``[[++, +-], [-+, --]]``; ``Sigma`` excludes the local bath kernel.
    """

    grid: SDGrid
    G: np.ndarray = field(repr=False)
    Sigma: np.ndarray = field(repr=False)
    mu: float
    J: float
    q: int
    converged: bool
    residual: float
    iterations: int = 0
    branch: str | None = None

    def component(self, ab: str) -> np.ndarray:
        return _component(self.G, self.grid.m, ab)

    def sigma_component(self, ab: str) -> np.ndarray:
        return _component(self.Sigma, self.grid.m, ab)

    def lag(self) -> np.ndarray:
        """``(2, 2, m)`` array of ``G_ab(k dt, 0)``."""
        return dense_to_lag(self.G, self.grid.m)

    @property
    def is_real_saddle(self) -> bool:
        """True when ``G_{++}`` is real (the saddle is its own conjugate)."""
        return bool(np.abs(self.component("++").imag).max() < 1e-9)

    def g_plus_plus(self) -> np.ndarray:
        """``G_{++}(tau, 0)`` for ``tau`` on the grid; ``tau = 0`` is the
        ``0+`` limit."""
        gpp = self.component("++")
        out = gpp[:, 0].copy()
        out[0] = equal_time_values(self)[0]
        return out

    def g_plus_plus_lag(self) -> np.ndarray:
        """``G_{++}`` averaged over the contour at each lag ``tau = k dt``,
        ``k = 1..m-1``. Translation invariance makes this the plain
        column; averaging removes round-off."""
        gpp = self.component("++")
        m = self.grid.m
        i = np.arange(m)
        lags = []
        for k in range(1, m):
            rows = (i + k) % m
            vals = gpp[rows, i]
            # rows that wrapped past t pick up the antiperiodic sign
            vals = np.where(i + k >= m, -vals, vals)
            lags.append(vals.mean())
        return np.array(lags)


def _component(mat: np.ndarray, m: int, ab: str) -> np.ndarray:
    if ab not in FLAVOURS:
        raise InvalidArgumentError(f"unknown flavour pair {ab!r}")
    a = 0 if ab[0] == "+" else 1
    b = 0 if ab[1] == "+" else 1
    return mat[a * m:(a + 1) * m, b * m:(b + 1) * m]


def _flavour_signs(q: int) -> np.ndarray:
    cross = (-1) ** (q // 2)
    return np.array([[-1.0, cross], [cross, -1.0]])


def _check_params(mu: float, J: float, q: int) -> None:
    if not (math.isfinite(mu) and mu >= 0):
        raise InvalidArgumentError(f"mu must be finite and non-negative, got {mu}")
    if not math.isfinite(J):
        raise InvalidArgumentError(f"J must be finite, got {J}")
    if q < 2 or q % 2:
        raise InvalidArgumentError(f"q must be even and >= 2, got {q}")


# ------------------------------------------------------------- dense route

def self_energy(G: np.ndarray, m: int, J: float, q: int) -> np.ndarray:
    s = _flavour_signs(q)
    sig = np.empty_like(G)
    for a in range(2):
        for b in range(2):
            blk = G[a * m:(a + 1) * m, b * m:(b + 1) * m]
            sig[a * m:(a + 1) * m, b * m:(b + 1) * m] = (J * J * s[a, b]) * blk ** (q - 1)
    return sig


def _bath_kernel(m: int, mu: float) -> np.ndarray:
    k = np.zeros((2 * m, 2 * m), dtype=complex)
    eye = np.eye(m)
    k[:m, m:] = 1j * mu * eye
    k[m:, :m] = -1j * mu * eye
    return k


def _free_block(grid: SDGrid) -> np.ndarray:
    g0 = grid.free_propagator()
    m = grid.m
    out = np.zeros((2 * m, 2 * m), dtype=complex)
    out[:m, :m] = g0
    out[m:, m:] = g0
    return out


def _dyson_matrix(grid: SDGrid, sigma: np.ndarray, mu: float, g0b: np.ndarray) -> np.ndarray:
    dt = grid.dt
    kern = dt * dt * sigma + dt * _bath_kernel(grid.m, mu)
    return np.eye(2 * grid.m, dtype=complex) - g0b @ kern


def dyson_solve(grid: SDGrid, sigma: np.ndarray, mu: float) -> np.ndarray:
    """``G = (1 - G0 (Sigma + K))^-1 G0`` on the grid."""
    g0b = _free_block(grid)
    return np.linalg.solve(_dyson_matrix(grid, sigma, mu, g0b), g0b)


def free_dissipative_state(grid: SDGrid, mu: float, J: float = 0.0, q: int = 4) -> SDState:
    """Exact discrete solution with the interaction switched off."""
    m = grid.m
    G = dyson_solve(grid, np.zeros((2 * m, 2 * m), dtype=complex), mu)
    return SDState(grid, G, np.zeros_like(G), mu, J, q, True, 0.0, 0, "bath_seeded")


def free_state(grid: SDGrid, mu: float = 0.0, J: float = 0.0, q: int = 4) -> SDState:
    G = _free_block(grid)
    return SDState(grid, G, np.zeros_like(G), mu, J, q, False, float("inf"), 0, None)


# --------------------------------------------------------------- lag route

def _twist(m: int) -> np.ndarray:
    return np.exp(-1j * np.pi * np.arange(m) / m)


def lag_to_freq(g: np.ndarray) -> np.ndarray:
    """Eigenvalues of anti-circulant kernels given by their lag values
    (last axis)."""
    return np.fft.fft(g * _twist(g.shape[-1]), axis=-1)


def freq_to_lag(gh: np.ndarray) -> np.ndarray:
    return np.fft.ifft(gh, axis=-1) / _twist(gh.shape[-1])


def free_lag(m: int) -> np.ndarray:
    g = np.full(m, 0.5, dtype=complex)
    g[0] = 0.0
    return g


def free_frequencies(m: int) -> np.ndarray:
    """Closed form of the free kernel's eigenvalues, ``-i cot(theta_n/2)/2``."""
    theta = np.pi * (2 * np.arange(m) + 1) / m
    return -0.5j / np.tan(theta / 2)


def lag_to_dense(g: np.ndarray) -> np.ndarray:
    """Expand a ``(2, 2, m)`` lag array into the two-time ``(2m, 2m)`` form."""
    m = g.shape[-1]
    i = np.arange(m)
    diff = i[:, None] - i[None, :]
    idx = diff % m
    sign = np.where(diff < 0, -1.0, 1.0)
    out = np.empty((2 * m, 2 * m), dtype=complex)
    for a in range(2):
        for b in range(2):
            out[a * m:(a + 1) * m, b * m:(b + 1) * m] = sign * g[a, b][idx]
    return out


def dense_to_lag(G: np.ndarray, m: int) -> np.ndarray:
    return np.stack([
        np.stack([G[a * m:(a + 1) * m, b * m] for b in range(2)]) for a in range(2)
    ])


def _lag_update(g: np.ndarray, dt: float, mu: float, J: float, q: int):
    """One map ``G -> (1 - G0 (Sigma[G] + K))^-1 G0`` in the lag form.

    Returns the new lag array and the per-frequency ``2x2`` Dyson matrices.
    """
    m = g.shape[-1]
    s = _flavour_signs(q)
    sig_h = lag_to_freq((J * J * s[:, :, None]) * g ** (q - 1))
    g0h = free_frequencies(m)
    kern = np.array([[0.0, 1j * mu], [-1j * mu, 0.0]])
    A = np.broadcast_to(np.eye(2, dtype=complex), (m, 2, 2)).copy()
    A -= g0h[:, None, None] * (dt * dt * np.moveaxis(sig_h, 2, 0) + dt * kern)
    rhs = g0h[:, None, None] * np.eye(2)[None]
    Gh = np.linalg.solve(A, rhs)
    return freq_to_lag(np.moveaxis(Gh, 0, 2)), A


def _lag_action(g: np.ndarray, t: float, mu: float, J: float, q: int) -> complex:
    m = g.shape[-1]
    dt = t / m
    s = _flavour_signs(q)
    _, A = _lag_update(g, dt, mu, J, q)
    det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    logdet = np.sum(np.log(det))
    gq = np.sum(s[:, :, None] * g ** q)
    # sum over the two-time grid of an anti-circulant product is m * sum over lags
    interaction = (-0.5 + 1.0 / (2 * q)) * J * J * dt * dt * m * gq
    return complex(math.log(2.0) + 0.5 * logdet + interaction - 0.5 * mu * t)


def _pack(g: np.ndarray) -> np.ndarray:
    return np.concatenate([g.real.ravel(), g.imag.ravel()])


def _unpack(x: np.ndarray, m: int) -> np.ndarray:
    n = 4 * m
    return (x[:n] + 1j * x[n:]).reshape(2, 2, m)


def _state_from_lag(grid, g, mu, J, q, converged, residual, iterations, branch=None) -> SDState:
    G = lag_to_dense(g)
    return SDState(grid, G, self_energy(G, grid.m, J, q), mu, J, q, converged, residual,
                   iterations, branch)


# ---------------------------------------------------------------- iteration

def sd_iterate(
    grid: SDGrid,
    mu: float,
    J: float,
    q: int,
    seed_state: SDState | None = None,
    mixing: float = 0.3,
    tol: float = 1e-8,
    max_iter: int = 5000,
    patience: int = 200,
    representation: Literal["dense", "lag"] = "dense",
) -> SDState:
    """Damped fixed-point iteration of the saddle-point equations.

    Stops when the max-norm change of ``G`` drops below ``tol``. Raises
    :class:`DivergenceError` if the residual has not improved on its best
    value for ``patience`` iterations while sitting above ``1e3 * best``,
    and :class:`NumericError` on non-finite values.

    ``representation="lag"`` runs the identical map on lag arrays (the
    seed must then be anti-circulant, as every state produced here is).
    """
    if not 0 < mixing <= 1:
        raise InvalidArgumentError(f"mixing must lie in (0, 1], got {mixing}")
    _check_params(mu, J, q)
    if representation not in ("dense", "lag"):
        raise InvalidArgumentError(f"unknown representation {representation!r}")
    m = grid.m
    if seed_state is not None and seed_state.grid.m != m:
        raise InvalidArgumentError("seed state lives on a different grid")

    if representation == "lag":
        g0 = np.zeros((2, 2, m), dtype=complex)
        g0[0, 0] = g0[1, 1] = free_lag(m)
        G = g0 if seed_state is None else seed_state.lag().copy()

        def step(G):
            return _lag_update(G, grid.dt, mu, J, q)[0]
    else:
        g0b = _free_block(grid)
        G = g0b.copy() if seed_state is None else seed_state.G.copy()

        def step(G):
            sigma = self_energy(G, m, J, q)
            return np.linalg.solve(_dyson_matrix(grid, sigma, mu, g0b), g0b)

    best = float("inf")
    since_best = 0
    trace: list[float] = []
    res = float("inf")
    it = 0
    for it in range(1, max_iter + 1):
        with np.errstate(all="ignore"):
            G_new = step(G)
        if not np.all(np.isfinite(G_new)):
            raise NumericError(f"non-finite Green's function at iteration {it}")
        res = float(np.abs(G_new - G).max())
        trace.append(res)
        G = (1.0 - mixing) * G + mixing * G_new
        if res < tol:
            # report the fixed point itself rather than the blend
            G = G_new
            break
        if res < best:
            best, since_best = res, 0
        else:
            since_best += 1
            if since_best > patience and res > 1e3 * best:
                raise DivergenceError(
                    f"residual grew from {best:.2e} to {res:.2e}", best_residual=best, trace=trace
                )
    converged = res < tol
    if representation == "lag":
        return _state_from_lag(grid, G, mu, J, q, converged, res, it)
    sigma = self_energy(G, m, J, q)
    return SDState(grid, G, sigma, mu, J, q, converged, res, it)


def sd_newton(
    grid: SDGrid,
    mu: float,
    J: float,
    q: int,
    seed_state: SDState,
    tol: float = 1e-9,
    method: Literal["auto", "dense", "krylov"] = "auto",
) -> SDState:
    """Polish a state to a root of the saddle-point equations by Newton's
    method on the lag form.

    ``auto`` tries Newton-Krylov first and falls back to Powell's hybrid
    method with a finite-difference Jacobian (``dense``) for small grids.

    Unlike damped iteration, Newton also converges onto saddles that the
    iteration map repels, in particular the complex-conjugate pair that
    the short-time saddle turns into at longer contours.
    """
    _check_params(mu, J, q)
    m = grid.m
    if seed_state.grid.m != m:
        raise InvalidArgumentError("seed state lives on a different grid")
    dt = grid.dt

    def f(x):
        g = _unpack(x, m)
        with np.errstate(all="ignore"):
            return _pack(_lag_update(g, dt, mu, J, q)[0] - g)

    x0 = _pack(seed_state.lag())
    if method not in ("auto", "dense", "krylov"):
        raise InvalidArgumentError(f"unknown method {method!r}")
    x = None
    if method in ("auto", "krylov"):
        try:
            # scipy's step-size test divides norms that can both vanish
            with np.errstate(invalid="ignore"):
                x = newton_krylov(f, x0, f_tol=0.1 * tol, method="lgmres", maxiter=200)
        except (ValueError, np.linalg.LinAlgError, ArithmeticError) as exc:
            if method == "krylov":
                raise ConvergenceError(f"Newton-Krylov failed: {exc}") from exc
        except Exception as exc:  # scipy raises NoConvergence
            if type(exc).__name__ != "NoConvergence":
                raise
            if method == "krylov":
                raise ConvergenceError("Newton-Krylov did not converge") from exc
    if x is None and x0.size <= DENSE_NEWTON_MAX:
        # restarting refreshes the finite-difference Jacobian
        x = x0
        for _ in range(3):
            x = root(f, x, method="hybr", options={"xtol": 1e-13}).x
            if np.abs(f(x)).max() <= tol:
                break
    if x is None:
        raise ConvergenceError("Newton-Krylov did not converge and the system is too large "
                               "for a dense Jacobian")
    res = float(np.abs(f(x)).max())
    if not np.isfinite(res):
        raise NumericError("non-finite residual after Newton step")
    if res > tol:
        raise ConvergenceError(f"Newton stopped at residual {res:.2e}", best_residual=res)
    return _state_from_lag(grid, _unpack(x, m), mu, J, q, True, res, 0, seed_state.branch)


def equal_time_values(state: SDState) -> np.ndarray:
    """``G_{++}(tau, tau^+)`` at every grid point.

    The grid stores the average of the two one-sided limits on the
    diagonal; the one-sided limit is recovered from the jump of the free
    part, ``G(tau, tau^+) = 1/2 + (G - G0)(tau, tau)``.
    """
    gpp = state.component("++")
    return 0.5 + np.real(np.diag(gpp))


def neighbour_equal_time(state: SDState) -> np.ndarray:
    """One-step estimate ``G_{++}(tau + dt, tau)`` of the equal-time limit."""
    gpp = state.component("++")
    m = state.grid.m
    i = np.arange(m - 1)
    return np.real(gpp[i + 1, i])


def state_problems(state: SDState) -> list[str]:
    """Physical sanity checks on a solution; empty when it passes.

    A converged iterate can still be a lattice artefact: a saddle of the
    discrete equations whose ``G_{++}`` jumps away from ``1/2`` within one
    grid step. Those are rejected here.
    """
    out = []
    dt = state.grid.dt
    dev = float(np.abs(neighbour_equal_time(state) - 0.5).max())
    if dev >= 5 * dt:
        out.append(f"equal-time deviation {dev:.3g} exceeds 5 dt = {5 * dt:.3g}")
    for ab in ("++", "--"):
        blk = state.component(ab)
        off = blk - np.diag(np.diag(blk))
        asym = float(np.abs(off + off.T).max())
        if asym > 1e-6:
            out.append(f"G_{ab} antisymmetry violated by {asym:.2e}")
    return out


# ------------------------------------------------------------------- action

@dataclass(frozen=True)
class ActionValue:
    """``iS`` at one contour length.

    ``iS`` is the real part, which sets the magnitude of the form factor;
    for a complex saddle (one of a conjugate pair) ``phase`` is the
    imaginary part. ``iS_raw`` is the plain grid value before extrapolation.
    """

    t: float
    iS: float
    branch_label: str | None
    converged: bool
    phase: float = 0.0
    iS_raw: float | None = None
    residual: float = 0.0


def dense_action(state: SDState) -> complex:
    """Grid action from the two-time matrices (log-det by LU)."""
    grid = state.grid
    m, dt = grid.m, grid.dt
    g0b = _free_block(grid)
    sigma = self_energy(state.G, m, state.J, state.q)
    sign, logabs = np.linalg.slogdet(_dyson_matrix(grid, sigma, state.mu, g0b))
    s = _flavour_signs(state.q)
    sg = 0.0 + 0.0j
    gq = 0.0 + 0.0j
    for a in range(2):
        for b in range(2):
            sl = (slice(a * m, (a + 1) * m), slice(b * m, (b + 1) * m))
            sg += np.sum(sigma[sl] * state.G[sl])
            gq += s[a, b] * np.sum(state.G[sl] ** state.q)
    interaction = -0.5 * dt * dt * sg + (state.J ** 2 / (2 * state.q)) * dt * dt * gq
    return complex(math.log(2.0) + 0.5 * (logabs + 1j * np.angle(sign)) + interaction
                   - 0.5 * state.mu * grid.t)


def coarsen(state: SDState) -> SDState:
    """Restrict a state to the grid with half as many points."""
    m = state.grid.m
    if m % 4:
        raise InvalidArgumentError(f"coarsening needs m divisible by 4, got {m}")
    grid = SDGrid(state.grid.t, m // 2)
    g = state.lag()[:, :, ::2]
    return _state_from_lag(grid, g, state.mu, state.J, state.q, False, float("inf"), 0,
                           state.branch)


def evaluate_action(state: SDState, grid: SDGrid | None = None, extrapolate: bool = True) -> ActionValue:
    """Per-Majorana ``iS(t) = ln Tr exp(tL) / N`` at a saddle point.

    The trapezoid grid leaves an ``O(dt)`` error in the action (the local
    bath kernel and the jump of ``G`` at coincident times). With
    ``extrapolate`` the state is re-solved on the half grid and
    ``2 iS(dt) - iS(2 dt)`` is returned, which is second order.
    """
    grid = grid or state.grid
    if grid != state.grid:
        raise InvalidArgumentError("state was solved on a different grid")
    if not state.converged:
        raise InvalidArgumentError("action requested for a non-converged state")
    fine = _lag_action(state.lag(), grid.t, state.mu, state.J, state.q)
    val = fine
    if extrapolate and grid.m % 4 == 0 and grid.m // 2 >= 16:
        coarse_seed = coarsen(state)
        coarse = sd_newton(coarse_seed.grid, state.mu, state.J, state.q, coarse_seed)
        val = 2 * fine - _lag_action(coarse.lag(), grid.t, state.mu, state.J, state.q)
    return ActionValue(grid.t, float(val.real), state.branch, True, float(val.imag),
                       float(fine.real), state.residual)


def free_action_exact(mu: float, t: float) -> float:
    """``ln(1 + exp(-mu t))``: the interaction-free form factor per Majorana."""
    return float(np.logaddexp(0.0, -mu * t))


def free_propagator_exact(mu: float, t: float, tau) -> np.ndarray:
    """``G_{++}(tau) = cosh(mu (t/2 - tau)) / (2 cosh(mu t / 2))`` for ``0 < tau < t``."""
    tau = np.asarray(tau, dtype=float)
    # stable for large mu t
    x = mu * (t / 2 - tau)
    y = mu * t / 2
    return 0.5 * np.exp(np.abs(x) - y) * (1 + np.exp(-2 * np.abs(x))) / (1 + np.exp(-2 * y))


def free_lag_exact_discrete(grid: SDGrid, mu: float) -> np.ndarray:
    """Closed-form solution of the discretized ``J = 0`` equations.

    Per fermionic frequency the ``2x2`` system is solved by hand:
    ``G_{++} = g0 / (1 - (mu dt g0)^2)``, ``G_{+-} = i mu dt g0^2 / (...)``
    with ``g0 = -i cot(theta/2) / 2``.
    """
    m, dt = grid.m, grid.dt
    g0 = free_frequencies(m)
    den = 1.0 - (mu * dt * g0) ** 2
    out = np.empty((2, 2, m), dtype=complex)
    out[0, 0] = out[1, 1] = freq_to_lag(g0 / den)
    out[0, 1] = freq_to_lag(1j * mu * dt * g0 * g0 / den)
    out[1, 0] = freq_to_lag(-1j * mu * dt * g0 * g0 / den)
    return out


# ----------------------------------------------------------------- branches

def _continue(state: SDState, t_new: float, mu: float | None = None) -> SDState:
    """Newton step to a neighbouring contour length at fixed ``m``.

    Past a fold the real solution disappears. Small imaginary pushes then
    seed Newton onto the complex saddles that continue it; a self-conjugate
    one (``G_{--} = G_{++}*``, real action) is preferred since the form
    factor is real, otherwise the one with the largest ``Re iS``.
    """
    grid = SDGrid(float(t_new), state.grid.m)
    mu = state.mu if mu is None else mu
    seed = replace(state, grid=grid, mu=mu)
    candidates = []

    def consider(st):
        act = _lag_action(st.lag(), grid.t, mu, state.J, state.q)
        candidates.append((abs(act.imag) > 1e-8, -act.real, len(candidates), st))

    try:
        direct = sd_newton(grid, mu, state.J, state.q, seed)
        if direct.is_real_saddle or not state.is_real_saddle:
            return direct
        # Newton left the real subspace on its own: a fold was crossed
        consider(direct)
    except ConvergenceError:
        pass
    for pp, mm in ((1 + 0.05j, 1 - 0.05j), (1 - 0.05j, 1 + 0.05j), (1 + 0.05j, 1 + 0.05j)):
        g = state.lag().copy()
        g[0, 0] = g[0, 0] * pp
        g[1, 1] = g[1, 1] * mm
        seed = _state_from_lag(grid, g, mu, state.J, state.q, False, float("inf"), 0, state.branch)
        try:
            st = sd_newton(grid, mu, state.J, state.q, seed)
        except (ConvergenceError, NumericError):
            continue
        consider(st)
    if not candidates:
        raise ConvergenceError(f"continuation to t={t_new} failed")
    return min(candidates)[3]


def _ladder(t0: float, t1: float, step: float) -> list[float]:
    n = int(math.ceil(abs(t1 - t0) / step - 1e-9))
    return [t0 + (t1 - t0) * k / n for k in range(1, n + 1)] if n else []


def closed_system_state(grid: SDGrid, J: float, q: int = 4, t_start: float = 1.0,
                        step: float = 0.1) -> SDState:
    """Closed SYK (``mu = 0``) solution on ``grid``.

    Damped iteration at ``min(t, t_start)``, then Newton continuation in
    ``t`` at fixed ``m``. Beyond ``t J ~ 2`` the real solution merges with
    a partner and continues as a complex saddle.
    """
    t0 = min(grid.t, t_start)
    st = sd_iterate(SDGrid(t0, grid.m), 0.0, J, q, None, representation="lag")
    if not st.converged:
        raise ConvergenceError("closed-system seed did not converge", st.residual)
    for t in _ladder(t0, grid.t, step):
        st = _continue(st, t)
    return replace(st, branch="system_seeded")


def solve_branch(
    grid: SDGrid,
    mu: float,
    J: float,
    q: int,
    branch: Branch,
    seed_state: SDState | None = None,
    t_start: float = 1.0,
    step: float = 0.1,
    **kwargs,
) -> SDState:
    """Converge one of the two saddles at a single contour length.

    ``system_seeded``: the closed-system (``mu = 0``) solution at short
    ``t_start`` seeds the damped iteration at the target ``mu``; the
    result is then followed in ``t`` by Newton continuation up to
    ``grid.t``. ``bath_seeded``: damped iteration directly at ``grid.t``
    from the interaction-free dissipative solution, Newton-polished.

    An explicit ``seed_state`` on the same grid skips the seeding and
    only iterates and polishes.
    """
    _check_params(mu, J, q)
    if branch not in BRANCHES:
        raise InvalidArgumentError(f"unknown branch {branch!r}")
    kwargs.setdefault("representation", "lag")
    if seed_state is not None:
        st = sd_iterate(grid, mu, J, q, seed_state, **kwargs)
        if not st.converged:
            st = sd_newton(grid, mu, J, q, st)
        return replace(st, branch=branch)
    if branch == "system_seeded":
        t0 = min(grid.t, t_start)
        g0 = SDGrid(t0, grid.m)
        closed = sd_iterate(g0, 0.0, J, q, None, **kwargs)
        st = sd_iterate(g0, mu, J, q, closed, **kwargs)
        if not st.converged:
            raise ConvergenceError("short-contour solve did not converge", st.residual)
        for t in _ladder(t0, grid.t, step):
            st = _continue(st, t)
        return replace(st, branch=branch)
    st = sd_iterate(grid, mu, J, q, free_dissipative_state(grid, mu, J, q), **kwargs)
    return replace(_polish(st), branch=branch)


def _polish(st: SDState) -> SDState:
    """Newton refinement of a converged iterate; keeps the iterate if
    Newton stalls short of its tolerance."""
    if not st.converged:
        return st
    try:
        return sd_newton(st.grid, st.mu, st.J, st.q, st)
    except ConvergenceError:
        return st


@dataclass
class BranchScan:
    """Both branches on a common ``t`` grid. ``None`` marks points where a
    branch has no acceptable solution; ``notes`` says why."""

    mu: float
    t: np.ndarray
    actions: dict[str, list]
    notes: dict[str, list]


def scan_branches(
    mu: float,
    J: float,
    ts: Sequence[float],
    m: int,
    q: int = 4,
    step: float = 0.1,
    extrapolate: bool = True,
) -> BranchScan:
    """``iS(t)`` on both branches over an increasing ``t`` grid at fixed ``m``.

    The system-seeded branch is followed upward in ``t`` from the first
    grid point by Newton continuation. The bath-seeded branch is solved
    independently at each ``t`` from its own seed; solutions failing
    :func:`state_problems` or exceeding the ``ln 2`` bound are dropped.
    """
    _check_params(mu, J, q)
    ts = [float(t) for t in ts]
    if not ts or sorted(ts) != ts or len(set(ts)) != len(ts):
        raise InvalidArgumentError("t grid must be non-empty and strictly increasing")
    actions: dict[str, list] = {b: [] for b in BRANCHES}
    notes: dict[str, list] = {b: [] for b in BRANCHES}

    st = None
    lost = None
    for t in ts:
        grid = SDGrid(t, m)
        if lost is not None:
            actions["system_seeded"].append(None)
            notes["system_seeded"].append(f"branch lost at t={lost:g}")
            continue
        try:
            if st is None:
                st = solve_branch(grid, mu, J, q, "system_seeded", step=step)
            else:
                for tt in _ladder(st.grid.t, t, step):
                    st = _continue(st, tt)
            probs = state_problems(st)
            av = None if probs else evaluate_action(st, extrapolate=extrapolate)
            if av is not None and av.iS > math.log(2.0) + 1e-6:
                probs.append(f"iS {av.iS:.4f} above ln 2")
        except (ConvergenceError, NumericError) as exc:
            probs = [str(exc)]
        if probs:
            # a continuation that failed once is not restarted from scratch
            lost = t
            actions["system_seeded"].append(None)
            notes["system_seeded"].append("; ".join(probs))
        else:
            actions["system_seeded"].append(replace(av, branch_label="system_seeded"))
            notes["system_seeded"].append("" if st.is_real_saddle else "complex saddle")

    for t in ts:
        grid = SDGrid(t, m)
        try:
            bt = solve_branch(grid, mu, J, q, "bath_seeded")
        except (ConvergenceError, NumericError) as exc:
            actions["bath_seeded"].append(None)
            notes["bath_seeded"].append(str(exc))
            continue
        probs = state_problems(bt) if bt.converged else ["not converged"]
        av = None
        if not probs:
            av = evaluate_action(bt, extrapolate=extrapolate)
            if av.iS > math.log(2.0) + 1e-6:
                probs.append(f"iS {av.iS:.4f} above ln 2")
        if probs:
            actions["bath_seeded"].append(None)
            notes["bath_seeded"].append("; ".join(probs))
        else:
            actions["bath_seeded"].append(replace(av, branch_label="bath_seeded"))
            notes["bath_seeded"].append("")
    return BranchScan(mu, np.array(ts), actions, notes)


def resample_state(state: SDState, grid: SDGrid) -> SDState:
    """Carry a solution to a grid with another ``m`` by linear
    interpolation of the lag functions (same ``m``: indices are kept)."""
    g_old = state.lag()
    m0, m1 = state.grid.m, grid.m
    if m0 == m1:
        g = g_old.copy()
    else:
        x0 = np.append(np.arange(m0) / m0, 1.0)
        x1 = np.arange(m1) / m1
        g = np.empty((2, 2, m1), dtype=complex)
        for a in range(2):
            for b in range(2):
                y = g_old[a, b].copy()
                if a == b:
                    # interpolate the one-sided limit, not the diagonal average
                    y[0] += 0.5
                # antiperiodic: G(t^-) = -G(0^+)
                ye = np.append(y, -y[0])
                g[a, b] = np.interp(x1, x0, ye.real) + 1j * np.interp(x1, x0, ye.imag)
                if a == b:
                    g[a, b][0] = g_old[a, b][0]
    return _state_from_lag(grid, g, state.mu, state.J, state.q, False, float("inf"), 0,
                           state.branch)


@dataclass
class TransitionReport:
    t: np.ndarray
    iS: np.ndarray
    dominant: list
    verdict: str
    crossing_time: float | None
    branches: dict


def dominant_branch(actions: dict[str, Sequence[ActionValue | None]], merge_tol: float = 1e-6) -> TransitionReport:
    """Pointwise maximum over branches and a transition verdict.

    ``actions`` maps a branch label to ``ActionValue`` records sampled on
    a common ``t`` grid (missing or non-converged points are ``None``). A
    sign change of the branch difference between two points where both
    branches exist and differ by more than ``merge_tol`` is a first-order
    crossing, located by linear interpolation; otherwise the verdict is
    ``"crossover"``.
    """
    labels = list(actions)
    if not labels:
        raise InvalidArgumentError("no branches given")
    n = len(actions[labels[0]])
    if any(len(actions[lab]) != n for lab in labels):
        raise InvalidArgumentError("branches sampled on different grids")
    ts = np.full(n, np.nan)
    series = {}
    for lab in labels:
        vals = actions[lab]
        for k, a in enumerate(vals):
            if a is not None:
                if np.isfinite(ts[k]) and abs(ts[k] - a.t) > 1e-12:
                    raise InvalidArgumentError("branches sampled on different grids")
                ts[k] = a.t
        series[lab] = np.array(
            [a.iS if (a is not None and a.converged) else np.nan for a in vals], dtype=float
        )
    stacked = np.vstack([series[lab] for lab in labels])
    masked = np.where(np.isnan(stacked), -np.inf, stacked)
    best = masked.max(axis=0)
    best = np.where(np.isfinite(best), best, np.nan)
    dom = [labels[int(i)] if np.isfinite(best[k]) else None
           for k, i in enumerate(np.argmax(masked, axis=0))]
    crossing = None
    verdict = "crossover"
    if len(labels) == 2:
        diff = series[labels[0]] - series[labels[1]]
        distinct = np.flatnonzero(np.isfinite(diff) & (np.abs(diff) > merge_tol))
        for a, b in zip(distinct[:-1], distinct[1:]):
            da, db = diff[a], diff[b]
            if np.sign(da) != np.sign(db):
                crossing = float(ts[a] + (ts[b] - ts[a]) * da / (da - db))
                verdict = "transition"
                break
    return TransitionReport(ts, best, dom, verdict, crossing, series)


# ---------------------------------------------------------------- decay fits

@dataclass(frozen=True)
class DecayFit:
    gamma0: float
    form: str
    params: dict
    residual: float


def _loglinear(tau, g):
    a = np.vstack([-tau, np.ones_like(tau)]).T
    coef, res, *_ = np.linalg.lstsq(a, np.log(np.abs(g)), rcond=None)
    rss = float(res[0]) if res.size else 0.0
    return float(coef[0]), float(coef[1]), rss


def fit_decay(tau, g, oscillatory: bool, n_starts: int = 12) -> DecayFit:
    """Least-squares decay rate of ``g(tau)``.

    ``oscillatory=False`` fits ``ln|g| = -Gamma0 tau + c``; otherwise
    ``g = A exp(-Gamma0 tau) sin(Omega tau + b)`` with a multi-start
    Levenberg-Marquardt over ``Omega``.
    """
    tau = np.asarray(tau, dtype=float)
    g = np.real(np.asarray(g))
    if tau.size < 4:
        raise FitError("need at least four samples", {"n": int(tau.size)})
    if not np.all(np.isfinite(g)):
        raise FitError("non-finite samples", {"n_bad": int(np.sum(~np.isfinite(g)))})
    if not oscillatory:
        if np.any(g == 0):
            raise FitError("log-linear fit on data with zeros", {"zeros": int(np.sum(g == 0))})
        gam, c, rss = _loglinear(tau, g)
        return DecayFit(gam, "loglinear", {"c": c}, rss)

    scale = np.abs(g).max()
    if scale == 0:
        raise FitError("all samples are zero", {})
    env_g, _, _ = _loglinear(tau, np.maximum(np.abs(g), 1e-300))
    span = tau[-1] - tau[0]
    # frequency guesses from the spectrum of the data plus a coarse ladder
    spec = np.abs(np.fft.rfft(g - g.mean()))
    freqs = 2 * np.pi * np.fft.rfftfreq(g.size, d=(tau[1] - tau[0]))
    guesses = list(freqs[np.argsort(spec)[::-1][:3]])
    guesses += list(np.linspace(0.5, 12.0, n_starts) * np.pi / max(span, 1e-12))
    best = None

    def resid(p):
        a, gam, om, b = p
        with np.errstate(over="ignore", invalid="ignore"):
            r = (a * np.exp(-gam * tau) * np.sin(om * tau + b) - g) / scale
        return np.where(np.isfinite(r), r, 1e6)

    n_tried = 0
    for om0 in guesses:
        if om0 <= 0:
            continue
        for b0 in (0.3, 1.5, 2.8):
            n_tried += 1
            a0 = scale / max(abs(np.sin(om0 * tau[0] + b0)), 0.1) * np.exp(env_g * tau[0])
            try:
                sol = least_squares(resid, [a0, max(env_g, 1e-3), om0, b0], method="lm",
                                    xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=4000)
            except ValueError:
                continue
            if not np.all(np.isfinite(sol.x)):
                continue
            cost = float(np.sum(sol.fun ** 2))
            if best is None or cost < best[0]:
                best = (cost, sol)
    if best is None:
        raise FitError("no start converged", {"starts": n_tried})
    cost, sol = best
    a, gam, om, b = sol.x
    if om < 0:
        om, b, a = -om, -b, -a
    if a < 0:
        a, b = -a, b + np.pi
    b = (b + np.pi) % (2 * np.pi) - np.pi
    return DecayFit(float(gam), "oscillatory", {"A": float(a), "Omega": float(om), "b": float(b)},
                    cost * scale * scale)


OSCILLATORY_BELOW = 0.15
# slope bias allowed from the contour's mirror image, and shortest fit window
MIRROR_BIAS = 1e-3
MIN_WINDOW = 1.5
# the fit starts after the short-time (interaction) transient, in units of 1/J
TRANSIENT_J = 4.0


def _mirror_cutoff(t: float, gamma0: float, tol: float = MIRROR_BIAS) -> float:
    """Largest ``tau`` at which the mirror image biases the slope by < ``tol``.

    On the closed contour ``G_{++}(tau)`` also carries ``exp(-Gamma0 (t - tau))``;
    the local log slope is ``-Gamma0 tanh(Gamma0 (t/2 - tau))``, off by about
    ``2 Gamma0 exp(-2 Gamma0 (t/2 - tau))``.
    """
    if gamma0 <= 0:
        return t / 2
    return t / 2 - max(np.log(2 * gamma0 / tol), 0.0) / (2 * gamma0)


def fit_gamma0(state: SDState, mu: float, window: tuple[float, float] | None = None) -> DecayFit:
    """Decay rate of ``G_{++}(tau)`` on ``[tau_min, tau_max]``.

    Uses the oscillatory form for ``mu < 0.15`` and the log-linear form
    otherwise. Without ``window`` the fit starts at ``TRANSIENT_J / J``
    (``1`` when ``J = 0``), past the short-time transient, on ``(lo, t/2)``;
    the upper end is then pulled in until the mirror contribution from the
    closed contour is negligible (see ``_mirror_cutoff``).
    """
    if not state.converged:
        raise InvalidArgumentError("fit requested for a non-converged state")
    t = state.grid.t
    if window is not None:
        return _fit_window(state, mu, *window)
    lo, hi = (TRANSIENT_J / abs(state.J) if state.J else 1.0), t / 2
    fit = _fit_window(state, mu, lo, hi)
    for _ in range(3):
        new_hi = max(_mirror_cutoff(t, fit.gamma0), min(lo + MIN_WINDOW, t / 2))
        if abs(new_hi - hi) < state.grid.dt:
            break
        hi = new_hi
        fit = _fit_window(state, mu, lo, hi)
    fit.params["window"] = (lo, float(hi))
    return fit


def _fit_window(state: SDState, mu: float, lo: float, hi: float) -> DecayFit:
    t = state.grid.t
    if not (0 < lo < hi <= t / 2 + 1e-12):
        raise InvalidArgumentError(f"window ({lo}, {hi}) must lie inside (0, t/2]")
    g = state.g_plus_plus_lag()
    tau = np.arange(1, state.grid.m) * state.grid.dt
    sel = (tau >= lo - 1e-12) & (tau <= hi + 1e-12)
    if mu >= OSCILLATORY_BELOW:
        # deep tails sit at round-off; keep samples well above it
        gs = g[sel]
        keep = np.abs(gs) > 1e-12 * np.abs(gs).max()
        return fit_decay(tau[sel][keep], gs[keep], oscillatory=False)
    return fit_decay(tau[sel], g[sel], oscillatory=True)


@dataclass
class Gamma0Curve:
    mu: np.ndarray
    gamma0: np.ndarray
    fits: list
    t: float
    m: int


def gamma0_curve(
    mus: Sequence[float],
    J: float = 1.0,
    t: float = 40.0,
    dt: float = 0.1,
    q: int = 4,
    anchor_mu: float = 0.2,
    window: tuple[float, float] | None = None,
) -> Gamma0Curve:
    """``Gamma0(mu)`` from the late-contour (bath) saddle.

    The saddle is converged at ``anchor_mu`` from the dissipative seed and
    followed in ``mu`` by Newton continuation both ways, since plain
    iteration loses it at small ``mu``. Entries that fail are NaN.
    """
    mus = np.asarray(sorted(float(x) for x in mus))
    grid = SDGrid.with_spacing(t, dt, multiple=2)
    anchor = solve_branch(grid, anchor_mu, J, q, "bath_seeded")
    if not anchor.converged or state_problems(anchor):
        raise ConvergenceError(f"no bath saddle at mu={anchor_mu}")
    gam = np.full(mus.size, np.nan)
    fits: list = [None] * mus.size
    up = [i for i in range(mus.size) if mus[i] >= anchor_mu]
    down = [i for i in range(mus.size) if mus[i] < anchor_mu][::-1]
    for order in (up, down):
        st = anchor
        for i in order:
            mu_i = float(mus[i])
            try:
                st = sd_newton(grid, mu_i, J, q, replace(st, mu=mu_i))
                if state_problems(st):
                    break
                f = fit_gamma0(st, mu_i, window)
            except (ConvergenceError, NumericError, FitError) as exc:
                log.warning("gamma0 at mu=%g failed: %s", mu_i, exc)
                break
            gam[i] = f.gamma0
            fits[i] = f
    return Gamma0Curve(mus, gam, fits, grid.t, grid.m)
