"""Figure-reproduction presets.

Each preset is a config mapping (same keys as a YAML config) plus a
``preset`` block describing which series to produce.  Everything is
overridable through the usual config layers.
"""

from __future__ import annotations

import copy

import numpy as np

_ONES = {"dist": "all_ones", "rho": 1.0, "noise_var": 0.0}


def _q(bits, omega=1.0):
    return None if bits is None else {"bits": int(bits), "omega": float(omega)}


PRESETS = {
    # Density of coordinates vs the PDE, both quantizers b=2, omega=2.
    "fig1": {
        "model": {"weight": _q(2, 2.0), "input": _q(2, 2.0), "ridge": 1.0, "eta": 0.04},
        "teacher": {"dim": 3000, **_ONES},
        "simulation": {"horizon_tau": 100.0, "record_stride_tau": 5.0, "runs": 2, "init": "gaussian",
                       "histogram_taus": [10.0, 25.0, 50.0, 100.0], "hist_bins": 101, "hist_range": [-5.0, 5.0]},
        "pde": {"cells": 4000, "w_min": -6.0, "w_max": 6.0, "horizon_tau": 100.0,
                "record_taus": [0.0, 10.0, 25.0, 50.0, 100.0]},
        "preset": {"engines": ["simulate", "pde"]},
    },
    # eps_g(tau) for b = 2..5 at omega = 1, unquantized inputs.  The trajectory
    # presets start from w = 0: all weights begin in the dead zone, which gives
    # the plateau at eps_g = 1 before the drop.
    "fig2": {
        "model": {"weight": _q(2, 1.0), "input": None, "ridge": 1.0, "eta": 0.04},
        "teacher": {"dim": 900, **_ONES},
        "simulation": {"horizon_tau": 100.0, "record_stride_tau": 1.0, "runs": 5, "init": "zero"},
        "ode": {"step_dtau": 0.01, "horizon_tau": 100.0, "record_stride_tau": 1.0, "m0": 0.0, "q0": 0.0},
        "preset": {"engines": ["simulate", "ode"], "series": {"b_w": [2, 3, 4, 5]}},
    },
    # eps_g(tau) for b = 3 and a range sweep.
    "fig3": {
        "model": {"weight": _q(3, 1.0), "input": None, "ridge": 1.0, "eta": 0.04},
        "teacher": {"dim": 900, **_ONES},
        "simulation": {"horizon_tau": 100.0, "record_stride_tau": 1.0, "runs": 5, "init": "zero"},
        "ode": {"step_dtau": 0.01, "horizon_tau": 100.0, "record_stride_tau": 1.0, "m0": 0.0, "q0": 0.0},
        "preset": {"engines": ["simulate", "ode"], "series": {"omega_w": [0.25, 0.5, 1.0, 1.25, 1.5]}},
    },
    # Joint weight/input quantization: b in {3, 4}, b_x in {3, 4, 5, none}.
    "fig4": {
        "model": {"weight": _q(3, 1.0), "input": _q(3, 1.0), "ridge": 1.0, "eta": 0.05},
        "teacher": {"dim": 500, **_ONES},
        "simulation": {"horizon_tau": 100.0, "record_stride_tau": 1.0, "runs": 5, "init": "zero"},
        "ode": {"step_dtau": 0.01, "horizon_tau": 100.0, "record_stride_tau": 1.0, "m0": 0.0, "q0": 0.0},
        "preset": {"engines": ["simulate", "ode"], "series": {"b_w": [3, 4], "b_x": [3, 4, 5, None]}},
    },
    # Input-only long-time behaviour: stability boundary and eps_g* vs omega_x.
    "fig5": {
        "model": {"weight": None, "input": _q(2, 1.0), "ridge": 0.0, "eta": 1e-4},
        "teacher": {"dim": 900, **_ONES},
        "sweep": {"b_w": [None], "omega_w": [1.0], "b_x": [2, 3, 4, 10],
                  "omega_x": [float(x) for x in np.round(np.linspace(0.05, 4.0, 80), 4)],
                  "eta": [1e-4], "lambda": [0.0]},
        "preset": {"engines": ["sweep"]},
    },
    # Joint fixed point vs range, plus long simulations at selected ranges.
    "fig6": {
        "model": {"weight": _q(2, 1.0), "input": _q(2, 1.0), "ridge": 0.0, "eta": 1e-4},
        "teacher": {"dim": 100, **_ONES},
        "simulation": {"horizon_tau": 2.0e5, "record_stride_tau": 5.0e3, "runs": 2, "init": "gaussian"},
        "sweep": {"b_w": [2, 3], "omega_w": [float(x) for x in np.round(np.linspace(0.25, 3.0, 56), 4)],
                  "b_x": [2, 3, 4, None], "omega_x": [1.0], "eta": [1e-4], "lambda": [0.0]},
        "preset": {"engines": ["sweep", "simulate"], "sim_omega_w": [0.6, 1.2, 2.4],
                   "terminal_window": 0.25},
    },
    # Ridge ablation: 3 ridge values x (bit sweep, range sweep).
    "appF": {
        "model": {"weight": _q(2, 1.0), "input": None, "ridge": 1.0, "eta": 0.04},
        "teacher": {"dim": 900, **_ONES},
        "simulation": {"horizon_tau": 100.0, "record_stride_tau": 1.0, "runs": 5, "init": "zero"},
        "ode": {"step_dtau": 0.01, "horizon_tau": 100.0, "record_stride_tau": 1.0, "m0": 0.0, "q0": 0.0},
        "preset": {"engines": ["simulate", "ode"],
                   "panels": [
                       {"lambda": lam, "series": series}
                       for series in ({"b_w": [2, 3, 4, 5]}, {"b_w": [3], "omega_w": [0.25, 0.5, 1.0, 1.25, 1.5]})
                       for lam in (0.5, 1.0, 1.5)
                   ]},
    },
}


def get_preset(figure: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[figure])
    except KeyError:
        from ..errors import ConfigError

        raise ConfigError(f"unknown preset {figure!r}; choose from {sorted(PRESETS)}") from None
