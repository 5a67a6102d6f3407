"""Per-pixel decaying-sinusoid fits and the physical maps derived from them.

The model is ``c0 + c*cos(2*pi*omega*T + phi)*exp(-T/tau)`` with ``T`` in
us and ``omega`` in MHz.  The minimizer is a damped Gauss-Newton
(Levenberg-Marquardt) iteration with an analytic Jacobian; it runs on a
batch of independent series at once so whole maps are fitted together.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .framestore import (FLAG_ALIASED, FLAG_NO_SIGNAL, FLAG_NOT_CONVERGED, FLAG_SINGULAR,
                         FLAG_TAU_CLAMPED, PARAM_NAMES, ParameterMap, bin_pixels)
from .model import DEFAULT_CONSTANTS, NVConstants, RamseyMode

log = logging.getLogger(__name__)

NPARAM = 5
MAX_ITER = 200
TOL = 1e-8


class NoSignalError(ValueError):
    pass


@dataclass
class SweepStack:
    """Counts versus sweep value for every pixel.

    ``counts[k]`` is the (rows, cols) image summed over ``repetitions`` frames
    at sweep point ``T[k]``; ``reference`` holds the laser-only counts over the
    same number of frames and is the normalization.  ``photodiode`` is the
    optional area-integrated bulk channel, already normalized.
    """

    T: np.ndarray
    counts: np.ndarray
    reference: np.ndarray
    repetitions: int = 1
    photodiode: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.T = np.asarray(self.T, float)
        self.counts = np.asarray(self.counts)
        self.reference = np.asarray(self.reference)
        if self.T.ndim != 1 or np.any(np.diff(self.T) <= 0):
            raise ValueError("sweep values must be strictly increasing")
        if self.counts.shape[0] != self.T.size:
            raise ValueError("one count image per sweep value required")
        if self.reference.shape != self.counts.shape[1:]:
            raise ValueError("reference shape must match the count images")

    @property
    def shape(self):
        return self.counts.shape[1:]

    def binned(self, factor) -> "SweepStack":
        if factor == 1:
            return self
        return SweepStack(self.T, bin_pixels(self.counts, factor).astype(np.int64),
                          bin_pixels(self.reference, factor).astype(np.int64), self.repetitions,
                          self.photodiode, dict(self.meta, bin=self.meta.get("bin", 1) * factor))

    def normalized(self):
        """``(y, weights)`` with ``y = counts/reference`` and shot-noise weights."""
        return normalize(self.counts, self.reference)


def normalize(counts, reference):
    counts = np.asarray(counts, float)
    reference = np.asarray(reference, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = counts / reference
        var = y ** 2 * (1.0 / np.maximum(counts, 1.0) + 1.0 / np.maximum(reference, 1.0))
        w = np.where(var > 0, 1.0 / var, 0.0)
    return y, w


@dataclass
class FitResult:
    params: np.ndarray  # c0, c, omega, phi, tau
    covariance: np.ndarray
    residual: float
    converged: bool
    iterations: int
    flags: int = 0
    message: str = ""

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def __getattr__(self, name):
        if name in PARAM_NAMES:
            return float(self.params[PARAM_NAMES.index(name)])
        raise AttributeError(name)


# ---------------------------------------------------------------------------
# model and Jacobian
# ---------------------------------------------------------------------------

def model(T, p):
    """Evaluate the model for parameter rows ``p`` (..., 5) at ``T``."""
    p = np.asarray(p, float)
    c0, c, om, ph, tau = (p[..., i, None] for i in range(NPARAM))
    return c0 + c * np.cos(2 * np.pi * om * T + ph) * np.exp(-T / tau)


def jacobian(T, p):
    """Analytic derivative of :func:`model`, shape ``(..., len(T), 5)``."""
    p = np.asarray(p, float)
    c, om, ph, tau = (p[..., i, None] for i in range(1, NPARAM))
    theta = 2 * np.pi * om * T + ph
    env = np.exp(-T / tau)
    cos_e = np.cos(theta) * env
    sin_e = np.sin(theta) * env
    J = np.empty(p.shape[:-1] + (np.size(T), NPARAM))
    J[..., 0] = 1.0
    J[..., 1] = cos_e
    J[..., 2] = -2 * np.pi * T * c * sin_e
    J[..., 3] = -c * sin_e
    J[..., 4] = c * cos_e * T / tau ** 2
    return J


def tau_bounds(T):
    T = np.asarray(T, float)
    lo = T[1] if T[0] == 0 else T[0]
    return lo, 100.0 * T[-1]


def nyquist(T) -> float:
    return 0.5 / np.median(np.diff(T))


def canonical(p):
    """Fold parameters so ``omega >= 0``, ``c >= 0`` and ``phi`` in [-pi, pi)."""
    p = np.array(p, float)
    neg = p[..., 2] < 0
    p[..., 2] = np.where(neg, -p[..., 2], p[..., 2])
    p[..., 3] = np.where(neg, -p[..., 3], p[..., 3])
    negc = p[..., 1] < 0
    p[..., 1] = np.where(negc, -p[..., 1], p[..., 1])
    p[..., 3] = np.where(negc, p[..., 3] + np.pi, p[..., 3])
    p[..., 3] = (p[..., 3] + np.pi) % (2 * np.pi) - np.pi
    return p


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

def _spectral_peak(T, Y, oversample=16):
    span = T[-1] - T[0]
    fmax = nyquist(T)
    df = 1.0 / (span * oversample)
    freqs = np.arange(0.5 / span, fmax + df / 2, df)
    phase = np.exp(-2j * np.pi * np.outer(T, freqs))
    power = np.abs((Y - Y.mean(axis=-1, keepdims=True)) @ phase) ** 2
    k = np.argmax(power, axis=-1)
    # parabolic refinement on the oversampled grid
    kk = np.clip(k, 1, freqs.size - 2)
    rows = np.arange(Y.shape[0])
    a, b, c = power[rows, kk - 1], power[rows, kk], power[rows, kk + 1]
    denom = a - 2 * b + c
    shift = np.where((denom < 0) & (k == kk), 0.5 * (a - c) / np.where(denom == 0, 1, denom), 0.0)
    return freqs[kk] + np.clip(shift, -1, 1) * df


def _envelope_tau(T, Y, c0, omega):
    """Decay time from the slope of the log envelope of the demodulated signal."""
    lo, hi = tau_bounds(T)
    z = (Y - c0[:, None]) * np.exp(-2j * np.pi * omega[:, None] * T)
    # smooth over one oscillation period to remove the 2*omega component
    out = np.empty(Y.shape[0])
    for i in range(Y.shape[0]):
        period = 1.0 / omega[i] if omega[i] > 0 else T[-1] - T[0]
        n = max(1, int(round(period / np.median(np.diff(T)))))
        kern = np.ones(n) / n
        env = 2 * np.abs(np.convolve(z[i], kern, mode="valid"))
        t_env = np.convolve(T, kern, mode="valid")
        good = env > 1e-12 * max(1.0, abs(c0[i]))
        if good.sum() < 2:
            out[i] = hi
            continue
        # weighted line through log(env); weights env**2 favour the strong early samples
        wts = (env[good] / env[good].max()) ** 2
        tg = t_env[good] - np.average(t_env[good], weights=wts)
        sxx = np.sum(wts * tg * tg)
        slope = np.sum(wts * tg * np.log(env[good])) / sxx if sxx > 0 else 0.0
        out[i] = -1.0 / slope if slope < 0 else hi
    return np.clip(out, lo, hi)


def _linear_amplitudes(T, Y, W, omega, tau):
    """Least-squares ``(c0, a, b)`` of ``c0 + (a cos + b sin)(2 pi omega T) exp(-T/tau)``."""
    env = np.exp(-T / tau[..., None])
    th = 2 * np.pi * omega[..., None] * T
    B = np.stack([np.ones_like(th), np.cos(th) * env, np.sin(th) * env], axis=-1)
    sw = np.sqrt(W)
    Bw = B * sw[..., None]
    A = np.einsum("...ni,...nj->...ij", Bw, Bw)
    rhs = np.einsum("...ni,...n->...i", Bw, Y * sw)
    A = A + 1e-12 * np.trace(A, axis1=-2, axis2=-1)[..., None, None] * np.eye(3)
    coef = np.linalg.solve(A, rhs[..., None])[..., 0]
    resid = np.einsum("...n,...n->...", W, (Y - np.einsum("...ni,...i->...n", B, coef)) ** 2)
    return coef, resid


def _seed_batch(T, Y, W, noise_floor=None):
    Y = np.atleast_2d(Y)
    W = np.ones_like(Y) if W is None else np.atleast_2d(W)
    P = Y.shape[0]
    span = Y.max(axis=1) - Y.min(axis=1)
    floor = 1e-9 * np.maximum(1.0, np.abs(Y.mean(axis=1))) if noise_floor is None else noise_floor
    flat = span <= floor
    c0 = Y.mean(axis=1)
    c = span / 2
    omega = _spectral_peak(T, Y)
    tau = _envelope_tau(T, Y, c0, omega)

    # refine omega/tau on a small grid by variable projection, phase by projection
    lo, hi = tau_bounds(T)
    df = 1.0 / (T[-1] - T[0])
    om_grid = omega[:, None] + df * np.linspace(-0.5, 0.5, 5)[None, :]
    tau_grid = np.clip(tau[:, None] * np.geomspace(0.25, 4.0, 9)[None, :], lo, hi)
    OM = np.repeat(om_grid[:, :, None], tau_grid.shape[1], axis=2).reshape(P, -1)
    TA = np.repeat(tau_grid[:, None, :], om_grid.shape[1], axis=1).reshape(P, -1)
    coef, resid = _linear_amplitudes(T, Y[:, None, :], W[:, None, :], np.abs(OM), TA)
    best = np.argmin(resid, axis=1)
    rows = np.arange(P)
    omega = np.abs(OM[rows, best])
    tau = TA[rows, best]
    a, b = coef[rows, best, 1], coef[rows, best, 2]
    phi = np.arctan2(-b, a)
    seeds = np.stack([c0, c, omega, phi, tau], axis=1)
    return seeds, flat


def initial_guess(T, y, weights=None, noise_floor=None) -> np.ndarray:
    """Seed ``[c0, c, omega, phi, tau]`` for one series.

    ``c0`` is the mean, ``c`` half the peak-to-peak span, ``omega`` the peak of
    the discrete spectrum (zero bin excluded), ``tau`` the log-envelope decay
    clamped to ``[T[1], 100*T[-1]]`` and ``phi`` the quadrature projection.
    """
    T = np.asarray(T, float)
    y = np.asarray(y, float)
    if T.size < 8:
        raise ValueError("need at least 8 samples")
    seeds, flat = _seed_batch(T, y[None], None if weights is None else np.asarray(weights)[None],
                              noise_floor)
    if flat[0]:
        raise NoSignalError("series is flat; no oscillation to fit")
    return seeds[0]


# ---------------------------------------------------------------------------
# damped Gauss-Newton
# ---------------------------------------------------------------------------

def _chi2(T, Y, W, p):
    r = Y - model(T, p)
    return np.einsum("...n,...n->...", W, r * r)


def _solve(A, g):
    try:
        return np.linalg.solve(A, g[..., None])[..., 0], np.zeros(A.shape[0], bool)
    except np.linalg.LinAlgError:
        out = np.zeros_like(g)
        bad = np.zeros(A.shape[0], bool)
        for i in range(A.shape[0]):
            try:
                out[i] = np.linalg.solve(A[i], g[i])
            except np.linalg.LinAlgError:
                bad[i] = True
        return out, bad


def fit_batch(T, Y, W, seeds, max_iter=MAX_ITER, tol=TOL):
    """Fit every row of ``Y`` independently.  Returns a dict of arrays."""
    T = np.asarray(T, float)
    Y = np.atleast_2d(np.asarray(Y, float))
    W = np.ones_like(Y) if W is None else np.atleast_2d(np.asarray(W, float))
    p = np.array(np.atleast_2d(seeds), float)
    P, N = Y.shape
    lo, hi = tau_bounds(T)
    max_dw = 1.0 / (T[-1] - T[0])
    p[:, 4] = np.clip(p[:, 4], lo, hi)
    lam = np.full(P, 1e-3)
    chi = _chi2(T, Y, W, p)
    active = np.ones(P, bool)
    converged = np.zeros(P, bool)
    singular = np.zeros(P, bool)
    iters = np.zeros(P, int)
    scale = np.sum(W * Y * Y, axis=1) + 1e-300  # for the absolute zero-residual test

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        iters[idx] += 1
        pa = p[idx]
        J = jacobian(T, pa)
        r = Y[idx] - model(T, pa)
        Jw = J * W[idx][..., None]
        A = np.einsum("pni,pnj->pij", Jw, J)
        g = np.einsum("pni,pn->pi", Jw, r)
        diag = np.einsum("pii->pi", A)
        diag = np.where(diag > 0, diag, 1.0)
        damped = A + lam[idx, None, None] * diag[:, :, None] * np.eye(NPARAM)
        step, bad = _solve(damped, g)
        # cap the frequency move at one spectral bin so steps cannot hop to an alias
        shrink = np.minimum(1.0, max_dw / (np.abs(step[:, 2]) + 1e-300))
        step *= shrink[:, None]
        singular[idx[bad]] = True
        active[idx[bad]] = False
        new = pa + step
        new[:, 4] = np.clip(new[:, 4], lo, hi)
        new_chi = _chi2(T, Y[idx], W[idx], new)
        ok = (new_chi <= chi[idx]) & np.all(np.isfinite(new), axis=1) & ~bad
        rel_step = np.linalg.norm(step, axis=1) / (np.linalg.norm(pa, axis=1) + 1e-300)
        rel_chi = np.abs(chi[idx] - new_chi) / (chi[idx] + 1e-300)
        tiny = new_chi <= 1e-28 * scale[idx]

        acc = idx[ok]
        p[acc] = new[ok]
        chi[acc] = new_chi[ok]
        lam[acc] = np.maximum(lam[acc] / 10, 1e-12)
        lam[idx[~ok]] *= 10

        done = ok & (((rel_step < tol) & (rel_chi < tol)) | tiny)
        stalled = ~ok & (lam[idx] > 1e16)
        converged[idx[done | stalled]] = True
        active[idx[done | stalled]] = False

    # covariance from the undamped normal matrix at the solution
    J = jacobian(T, p)
    Jw = J * W[..., None]
    A = np.einsum("pni,pnj->pij", Jw, J)
    dof = max(N - NPARAM, 1)
    s2 = chi / dof
    cov = np.full((P, NPARAM, NPARAM), np.nan)
    for i in range(P):
        if singular[i]:
            continue
        try:
            cov[i] = np.linalg.inv(A[i]) * s2[i]
        except np.linalg.LinAlgError:
            singular[i] = True
    ok_cov = np.all(np.isfinite(cov), axis=(1, 2))
    diag_ok = np.all(np.einsum("pii->pi", np.nan_to_num(cov)) >= -1e-300, axis=1)
    singular |= ~(ok_cov & diag_ok)
    converged &= ~singular

    flags = np.zeros(P, np.int32)
    p = canonical(p)
    clamp = np.isclose(p[:, 4], lo, rtol=1e-9) | np.isclose(p[:, 4], hi, rtol=1e-9)
    flags[clamp] |= FLAG_TAU_CLAMPED
    flags[p[:, 2] >= nyquist(T)] |= FLAG_ALIASED
    flags[singular] |= FLAG_SINGULAR
    flags[~converged] |= FLAG_NOT_CONVERGED
    return {"params": p, "covariance": cov, "residual": np.sqrt(chi), "converged": converged,
            "iterations": iters, "flags": flags}


def fit_decaying_sinusoid(T, y, weights=None, seed=None, max_iter=MAX_ITER) -> FitResult:
    """Weighted least-squares fit of one series.

    Without ``seed`` the fit starts from :func:`initial_guess`.  With a seed,
    the automatic seed is tried as well and the in-band result with the lower
    chi-square is kept, so a poor seed cannot lock onto a side lobe.
    """
    T = np.asarray(T, float)
    y = np.asarray(y, float)
    if weights is not None and np.any(np.asarray(weights) <= 0):
        raise ValueError("weights must be positive")
    seeds = [] if seed is None else [np.asarray(seed, float)]
    try:
        seeds.append(initial_guess(T, y, weights))
    except NoSignalError:
        if not seeds:
            raise
    Y = np.repeat(y[None], len(seeds), axis=0)
    W = None if weights is None else np.repeat(np.asarray(weights, float)[None], len(seeds), axis=0)
    out = fit_batch(T, Y, W, np.array(seeds), max_iter=max_iter)
    penalty = (~out["converged"]) * 2.0 + ((out["flags"] & FLAG_ALIASED) > 0) * 1.0
    best = int(np.lexsort((out["residual"], penalty))[0])
    out = {k: v[best:best + 1] for k, v in out.items()}
    flags = int(out["flags"][0])
    msg = []
    if flags & FLAG_SINGULAR:
        msg.append("singular normal matrix")
    if flags & FLAG_TAU_CLAMPED:
        msg.append("tau at clamp boundary")
    if flags & FLAG_ALIASED:
        msg.append("frequency above sweep Nyquist")
    return FitResult(out["params"][0], out["covariance"][0], float(out["residual"][0]),
                     bool(out["converged"][0]), int(out["iterations"][0]), flags, "; ".join(msg))


# ---------------------------------------------------------------------------
# maps
# ---------------------------------------------------------------------------

def fit_series_batch(T, Y, W=None):
    """Seed and fit a batch of series; flat series are flagged, not fitted."""
    seeds, flat = _seed_batch(T, Y, W)
    out = fit_batch(T, Y, W, seeds)
    out["converged"] &= ~flat
    out["flags"][flat] |= FLAG_NO_SIGNAL | FLAG_NOT_CONVERGED
    return out


def fit_map(stack: SweepStack, mode="rabi", bin_factor=1, weighting="poisson") -> ParameterMap:
    """Independent fits of every (binned) pixel of ``stack``."""
    st = stack.binned(bin_factor)
    y, w = st.normalized()
    rows, cols = st.shape
    Y = y.reshape(len(st.T), -1).T
    W = w.reshape(len(st.T), -1).T if weighting == "poisson" else None
    good = np.all(np.isfinite(Y), axis=1) & (st.reference.ravel() > 0)
    out = {"params": np.full((Y.shape[0], NPARAM), np.nan),
           "covariance": np.full((Y.shape[0], NPARAM, NPARAM), np.nan),
           "residual": np.full(Y.shape[0], np.nan), "converged": np.zeros(Y.shape[0], bool),
           "iterations": np.zeros(Y.shape[0], int),
           "flags": np.full(Y.shape[0], FLAG_NO_SIGNAL | FLAG_NOT_CONVERGED, np.int32)}
    if good.any():
        res = fit_series_batch(st.T, Y[good], None if W is None else W[good])
        for k in out:
            out[k][good] = res[k]
    sigma = np.sqrt(np.clip(np.einsum("pii->pi", out["covariance"]), 0, None))
    meta = dict(st.meta)
    meta.update(mode=str(mode), bin=int(meta.get("bin", 1)))
    b = bin_factor
    if "pixel_spacing" in meta and b > 1:
        meta["origin"] = tuple(o + meta["pixel_spacing"] * (b - 1) / 2 for o in meta.get("origin", (0.0, 0.0)))
        meta["pixel_spacing"] = meta["pixel_spacing"] * b
    conv = out["converged"]
    log.debug("fit_map: %d/%d pixels converged", conv.sum(), conv.size)
    return ParameterMap(out["params"].reshape(rows, cols, NPARAM), sigma.reshape(rows, cols, NPARAM),
                        conv.reshape(rows, cols), out["residual"].reshape(rows, cols),
                        out["flags"].reshape(rows, cols), out["iterations"].reshape(rows, cols), meta)


def region_mask(shape, region):
    """Boolean pixel mask for a region spec.

    ``("pixel", r, c)``, ``("group", r0, r1, c0, c1)`` (half-open) or
    ``("frame",)``; a boolean array is used as is.
    """
    if isinstance(region, np.ndarray):
        return region.astype(bool)
    kind = region[0]
    mask = np.zeros(shape, bool)
    if kind == "pixel":
        mask[region[1], region[2]] = True
    elif kind == "group":
        r0, r1, c0, c1 = region[1:5]
        mask[r0:r1, c0:c1] = True
    elif kind == "frame":
        mask[:] = True
    else:
        raise ValueError(f"unknown region {region!r}")
    if not mask.any():
        raise ValueError("region is empty")
    return mask


def area_signal(stack: SweepStack, region):
    """Sum counts over ``region`` and fit the summed series.

    ``("object",)`` uses the stack's photodiode channel instead of pixels.
    Returns ``(y, FitResult)``.
    """
    if region == "object" or (isinstance(region, tuple) and region[0] == "object"):
        if stack.photodiode is None:
            raise ValueError("stack carries no object-plane channel")
        y = np.asarray(stack.photodiode, float)
        return y, fit_decaying_sinusoid(stack.T, y)
    if isinstance(region, str):
        region = (region,)
    mask = region_mask(stack.shape, region)
    counts = stack.counts[:, mask].sum(axis=1)
    ref = stack.reference[mask].sum()
    y, w = normalize(counts, np.full(counts.shape, ref))
    return y, fit_decaying_sinusoid(stack.T, y, w)


# ---------------------------------------------------------------------------
# derived maps
# ---------------------------------------------------------------------------

def derive_field_map(freq, nu, mode="SQ", sigma=None, consts: NVConstants = DEFAULT_CONSTANTS):
    """Magnetic offset map (G) from a fringe-frequency map.

    SQ assumes ``dD = 0``: ``dBz = (nu - f)/gamma``; DQ: ``dBz = (f - nu)/(2 gamma)``.
    Returns ``dBz`` or ``(dBz, sigma_dBz)`` when ``sigma`` is given.
    """
    mode = RamseyMode(mode)
    freq = np.asarray(freq, float)
    if mode is RamseyMode.SQ:
        dbz, scale = (nu - freq) / consts.gamma_e, 1 / consts.gamma_e
    elif mode is RamseyMode.DQ:
        dbz, scale = (freq - nu) / (2 * consts.gamma_e), 1 / (2 * consts.gamma_e)
    else:
        raise ValueError("field maps need SQ or DQ data")
    if sigma is None:
        return dbz
    return dbz, np.asarray(sigma) * scale


@dataclass
class ShiftMaps:
    dD: np.ndarray  # MHz
    temperature: np.ndarray  # K
    strain: np.ndarray | None  # ppm, only with a supplied coefficient
    sigma_dD: np.ndarray | None = None


def derive_dD_map(freq, nu, consts: NVConstants = DEFAULT_CONSTANTS, strain_coefficient=None, sigma=None):
    """Zero-field-splitting shift, temperature and (optionally) strain maps.

    ``dD = (f - nu)/k`` with the echo phase factor ``k``; temperature is
    ``dD/dD_dT``; strain is ``dD*strain_coefficient`` when a coefficient (ppm
    per MHz) is given.
    """
    dD = (np.asarray(freq, float) - nu) / consts.echo_factor
    temp = dD / consts.dD_dT
    strain = None if strain_coefficient is None else dD * strain_coefficient
    sig = None if sigma is None else np.asarray(sigma) / abs(consts.echo_factor)
    return ShiftMaps(dD, temp, strain, sig)


def density_map(tau, base_rate, coupling):
    """Relative spin density from a decay-time map: ``(1/tau - base)/A``.

    Negative estimates are floored at zero; returns ``(rho, floored_mask)``.
    """
    tau = np.asarray(tau, float)
    if not coupling > 0:
        raise ValueError("coupling must be positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = (1.0 / tau - base_rate) / coupling
    floored = rho < 0
    return np.where(floored, 0.0, rho), floored


def fitted_gradient(values, sigma=None, axis=1, spacing=1.0):
    """Slope of a map along ``axis`` (per um), by weighted least squares over
    all finite pixels.  Returns ``(slope, slope_sigma)``."""
    values = np.asarray(values, float)
    idx = np.indices(values.shape)[axis] * spacing
    ok = np.isfinite(values)
    x, y = idx[ok], values[ok]
    if sigma is None:
        w = np.ones_like(y)
    else:
        s = np.asarray(sigma, float)[ok]
        w = 1.0 / np.where(s > 0, s, np.nan) ** 2
        w = np.nan_to_num(w, nan=0.0)
    X = np.stack([np.ones_like(x), x], axis=1)
    A = X.T @ (X * w[:, None])
    coef = np.linalg.solve(A, X.T @ (w * y))
    resid = y - X @ coef
    s2 = (w * resid ** 2).sum() / max(len(y) - 2, 1)
    cov = np.linalg.inv(A) * s2
    return float(coef[1]), float(np.sqrt(cov[1, 1]))
