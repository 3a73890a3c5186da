"""Finite-d one-pass STE training and its macroscopic observables."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import numpy as np
from numba import njit

from .errors import DimError, DivergenceError
from .model import ModelConfig, Sample, SampleStream, TeacherSpec, generalization_error, rng_for, sample_teacher
from .quantizer import Quantizer, quantize

DIVERGENCE_LIMIT = 1e8
OBSERVABLES = ("m", "q", "s", "m_psi", "q_psi", "r_psi", "eps_g")


@dataclass(frozen=True)
class MacroState:
    tau: float
    m: float
    q: float
    s: float
    m_psi: float
    q_psi: float
    r_psi: float
    eps_g: float


Init = Union[str, np.ndarray]  # "gaussian" | "zero" | explicit vector


@dataclass(frozen=True)
class SimConfig:
    model: ModelConfig
    teacher: TeacherSpec
    horizon_tau: float
    record_stride_tau: float
    init: Init = "gaussian"
    runs: int = 5
    master_seed: int = 0
    histogram_taus: tuple = ()
    hist_bins: int = 101
    hist_range: tuple | None = None
    threads: int = 1

    def __post_init__(self):
        if self.horizon_tau * self.teacher.dim < 1:
            raise ValueError("horizon_tau * d must be >= 1")
        if not (0 < self.record_stride_tau <= self.horizon_tau):
            raise ValueError("need 0 < record_stride_tau <= horizon_tau")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if isinstance(self.init, str) and self.init not in ("gaussian", "zero"):
            raise ValueError(f"unknown init {self.init!r}")

    @property
    def steps(self) -> int:
        return int(math.floor(self.horizon_tau * self.teacher.dim + 1e-9))

    def record_steps(self) -> np.ndarray:
        d = self.teacher.dim
        n = int(math.floor(self.horizon_tau / self.record_stride_tau + 1e-9))
        taus = self.record_stride_tau * np.arange(n + 1)
        return np.unique(np.floor(taus * d + 1e-9).astype(np.int64))

    def echo(self) -> dict:
        out = asdict(self)
        if isinstance(self.init, np.ndarray):
            out["init"] = "custom"
        return out


@dataclass
class CoordinateHistogram:
    tau: float
    conditioning_value: float
    bin_edges: np.ndarray
    densities: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])


@dataclass
class Trajectory:
    """Run-averaged observables on a common tau grid.

    ``mean`` and ``stderr`` map each name in OBSERVABLES to an array over tau;
    ``stderr`` is empty for a single run.
    """

    tau: np.ndarray
    mean: dict
    stderr: dict
    run_count: int
    metadata: dict = field(default_factory=dict)
    histograms: list = field(default_factory=list)
    per_run: dict | None = None

    @property
    def states(self) -> list[MacroState]:
        return [
            MacroState(float(t), *(float(self.mean[k][i]) for k in OBSERVABLES))
            for i, t in enumerate(self.tau)
        ]

    @property
    def eps_g(self) -> np.ndarray:
        return self.mean["eps_g"]

    @property
    def eps_g_stderr(self) -> np.ndarray:
        return self.stderr.get("eps_g", np.zeros_like(self.tau))


def macro_observables(w, teacher, config: ModelConfig, noise_var: float = 0.0, tau: float = 0.0) -> MacroState:
    w = np.asarray(w, dtype=float)
    teacher = np.asarray(teacher, dtype=float)
    if w.shape != teacher.shape:
        raise DimError(f"w has shape {w.shape}, teacher has {teacher.shape}")
    d = w.size
    rho = float(teacher @ teacher) / d
    pw = quantize(config.weight_quantizer, w)
    m = float(teacher @ w) / d
    q = float(w @ w) / d
    m_psi = float(pw @ teacher) / d
    q_psi = float(pw @ pw) / d
    r_psi = float(pw @ w) / d
    s = math.sqrt(max(q - m * m / rho, 0.0))
    eps = generalization_error(config.input_moments, m_psi, q_psi, rho, noise_var)
    return MacroState(tau, m, q, s, m_psi, q_psi, r_psi, eps)


def ste_step(w, sample: Sample, config: ModelConfig, step: int = 0) -> np.ndarray:
    """One straight-through update; returns a new vector.

    The quantizer's Jacobian is replaced by the identity, so the gradient of
    the loss with respect to psi(w) is applied directly to w.
    """
    w = np.asarray(w, dtype=float)
    x = np.asarray(sample.input, dtype=float)
    if w.shape != x.shape:
        raise DimError(f"w has shape {w.shape}, input has {x.shape}")
    d = w.size
    pw = quantize(config.weight_quantizer, w)
    px = quantize(config.input_quantizer, x)
    err = (pw @ px) / math.sqrt(d) - sample.label
    eta, lam = config.learning_rate, config.ridge
    w_new = w - eta * (err / math.sqrt(d) * px + lam / d * pw)
    if not np.all(np.isfinite(w_new)) or np.max(np.abs(w_new)) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"iterate diverged at step {step}", step)
    return w_new



def conditional_drift(w, teacher, config: ModelConfig) -> np.ndarray:
    """E[w' - w | w] per coordinate: (eta/d) (kappa w*_i - (sigma^2 + lambda) psi(w_i))."""
    w = np.asarray(w, dtype=float)
    mom = config.input_moments
    pw = quantize(config.weight_quantizer, w)
    gain = mom.sigma_sq + config.ridge
    return config.learning_rate / w.size * (mom.kappa * np.asarray(teacher, dtype=float) - gain * pw)


def conditional_second_moment(w, teacher, config: ModelConfig, noise_var: float = 0.0) -> float:
    """Leading-order E[(w'_i - w_i)^2 | w] = (eta^2/d) sigma^2 eps_g, the same for every coordinate."""
    st = macro_observables(w, teacher, config, noise_var)
    return config.learning_rate**2 / np.asarray(w).size * config.input_moments.sigma_sq * st.eps_g

# --- compiled inner loop ---------------------------------------------------

# quantizer modes for the kernel
_IDENT, _HARD, _SOFT = 0, 1, 2


def _kernel_quantizer(q: Quantizer):
    """(mode, thresholds, levels, omega, delta, T) for the compiled loop."""
    if q.is_identity:
        return _IDENT, np.zeros(1), np.zeros(1), 0.0, 1.0, 0.0
    mode = _SOFT if q.temperature > 0 else _HARD
    return (mode, np.ascontiguousarray(q.thresholds), np.ascontiguousarray(q.levels),
            float(q.omega), float(q.step), float(q.temperature))


@njit(cache=True, nogil=True)
def _quantize_into(out, v, mode, thr, lev, omega, delta, temp):
    """out[:] = psi(v); hard mode gives ties to the upper level like quantize_hard."""
    n = v.size
    if mode == 0:
        for i in range(n):
            out[i] = v[i]
        return
    L = thr.size
    if mode == 1:
        inv = 1.0 / delta
        for i in range(n):
            x = v[i]
            # guess from the uniform spacing, then settle against the stored thresholds
            k = int(math.floor((x + omega) * inv + 0.5))
            if k < 0:
                k = 0
            elif k > L:
                k = L
            while k < L and x >= thr[k]:
                k += 1
            while k > 0 and x < thr[k - 1]:
                k -= 1
            out[i] = lev[k]
        return
    scale = 1.0 / (temp * 1.4142135623730951)
    for i in range(n):
        acc = 0.0
        for k in range(L):
            acc += 0.5 * math.erfc(-(v[i] - thr[k]) * scale)
        out[i] = -omega + delta * acc


@njit(cache=True, nogil=True)
def _advance(w, xs, ys, eta, lam,
             wmode, wthr, wlev, wom, wdl, wtemp,
             xmode, xthr, xlev, xom, xdl, xtemp,
             limit):
    """Apply len(ys) STE updates to w in place; return the failing row or -1."""
    d = w.size
    sqd = math.sqrt(d)
    r = lam / d
    pw = np.empty(d)
    px = np.empty(d)
    _quantize_into(pw, w, wmode, wthr, wlev, wom, wdl, wtemp)
    for t in range(ys.size):
        _quantize_into(px, xs[t], xmode, xthr, xlev, xom, xdl, xtemp)
        yhat = 0.0
        for i in range(d):
            yhat += pw[i] * px[i]
        g = (yhat / sqd - ys[t]) / sqd
        bad = False
        for i in range(d):
            wi = w[i] - eta * (g * px[i] + r * pw[i])
            w[i] = wi
            if not (abs(wi) <= limit):
                bad = True
        if bad:
            return t
        _quantize_into(pw, w, wmode, wthr, wlev, wom, wdl, wtemp)
    return -1


def _initial_weights(config: SimConfig, run: int) -> np.ndarray:
    d = config.teacher.dim
    if isinstance(config.init, np.ndarray):
        if config.init.shape != (d,):
            raise DimError(f"custom init must have shape ({d},)")
        return config.init.astype(float).copy()
    if config.init == "zero":
        return np.zeros(d)
    return rng_for(config.master_seed, "init", run).standard_normal(d)


def _histogram(w, teacher, tau, config: SimConfig) -> list[CoordinateHistogram]:
    omega = config.model.weight_quantizer.omega
    if config.hist_range is not None:
        lo, hi = config.hist_range
    else:
        half = (omega if math.isfinite(omega) else 1.0) + 3.0
        lo, hi = -half, half
    edges = np.linspace(lo, hi, config.hist_bins + 1)
    values = np.unique(teacher)
    if values.size > 16:
        groups = [(math.nan, np.ones(teacher.size, dtype=bool))]
    else:
        groups = [(float(v), teacher == v) for v in values]
    out = []
    for v, mask in groups:
        counts, _ = np.histogram(w[mask], bins=edges)
        out.append(CoordinateHistogram(tau, v, edges, counts.astype(float)))
    return out


def simulate_run(config: SimConfig, run: int = 0, teacher: np.ndarray | None = None, stream=None):
    """One independent chain.  Returns (tau, rows, histograms) with rows[k] over OBSERVABLES.

    Raises DivergenceError whose ``partial`` holds the rows recorded so far.
    """
    model = config.model
    spec = config.teacher
    d = spec.dim
    if teacher is None:
        teacher = sample_teacher(spec, config.master_seed)
    if stream is None:
        stream = SampleStream(teacher, spec.noise_var, config.master_seed, run)
    w = _initial_weights(config, run)
    rec_steps = config.record_steps()
    hist_steps = {int(math.floor(t * d + 1e-9)): float(t) for t in config.histogram_taus}
    stops = np.unique(np.concatenate([rec_steps, np.array(sorted(hist_steps), dtype=np.int64)]))
    rec_set = set(int(s) for s in rec_steps)
    wk = _kernel_quantizer(model.weight_quantizer)
    xk = _kernel_quantizer(model.input_quantizer)
    eta, lam = model.learning_rate, model.ridge
    chunk = max(1, (1 << 20) // d)

    taus, rows, hists = [], [], []

    def observe(step):
        if step in rec_set:
            st = macro_observables(w, teacher, model, spec.noise_var, step / d)
            taus.append(st.tau)
            rows.append([getattr(st, k) for k in OBSERVABLES])
        if step in hist_steps:
            hists.extend(_histogram(w, teacher, hist_steps[step], config))

    t = 0
    for stop in stops:
        while t < stop:
            n = int(min(chunk, stop - t))
            xs, ys = stream.batch(n)
            bad = _advance(w, xs, ys, eta, lam, *wk, *xk, DIVERGENCE_LIMIT)
            if bad >= 0:
                partial = (np.array(taus), np.array(rows).reshape(-1, len(OBSERVABLES)), hists)
                raise DivergenceError(f"run {run} diverged at step {t + bad}", t + bad, partial)
            t += n
        observe(int(stop))
    return np.array(taus), np.array(rows), hists


def _merge_histograms(per_run: Sequence[list]) -> list[CoordinateHistogram]:
    merged: dict = {}
    for hists in per_run:
        for h in hists:
            key = (h.tau, h.conditioning_value)
            if key in merged:
                merged[key].densities = merged[key].densities + h.densities
            else:
                merged[key] = CoordinateHistogram(h.tau, h.conditioning_value, h.bin_edges, h.densities.copy())
    out = []
    for h in merged.values():
        width = np.diff(h.bin_edges)
        total = h.densities.sum()
        h.densities = h.densities / (total * width) if total else h.densities
        out.append(h)
    return sorted(out, key=lambda h: (h.tau, h.conditioning_value))


def run_simulation(config: SimConfig, keep_runs: bool = False) -> Trajectory:
    """Average ``config.runs`` independent chains pointwise in tau.

    Runs are merged by run index, so the result does not depend on
    ``config.threads``.  Histograms pool coordinates from all runs.
    """
    teacher = sample_teacher(config.teacher, config.master_seed)

    def one(run):
        return simulate_run(config, run, teacher)

    if config.threads > 1 and config.runs > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(one, range(config.runs)))
    else:
        results = [one(r) for r in range(config.runs)]

    tau = results[0][0]
    stack = np.stack([r[1] for r in results])  # (runs, n_tau, n_obs)
    mean = {k: stack[:, :, i].mean(axis=0) for i, k in enumerate(OBSERVABLES)}
    stderr = {}
    if config.runs > 1:
        sd = stack.std(axis=0, ddof=1) / math.sqrt(config.runs)
        stderr = {k: sd[:, i] for i, k in enumerate(OBSERVABLES)}
    meta = {"config": config.echo(), "master_seed": config.master_seed, "engine": "simulator"}
    per_run = {k: stack[:, :, i] for i, k in enumerate(OBSERVABLES)} if keep_runs else None
    return Trajectory(tau, mean, stderr, config.runs, meta, _merge_histograms([r[2] for r in results]), per_run)
