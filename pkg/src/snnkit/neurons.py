"""Integrate-and-fire and leaky integrate-and-fire membrane dynamics.

Non-leaky update per step:       V <- V + I * dt / C_m
Leaky (forward Euler) per step:  V <- V + (dt / (C_m * R_m)) * (R_m * I - V)

A neuron spikes when V reaches V_threshold after integration within the
same step; the reset then either jumps to V_reset or subtracts the
threshold, and the refractory countdown starts. During refractory steps
the neuron integrates nothing and cannot spike.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, UnstableTimestep

RESET_MODES = ("to_reset_value", "subtract_threshold")


@dataclass(frozen=True)
class NeuronParams:
    c_m: float = 1.0
    r_m: float = math.inf  # infinite resistance -> non-leaky
    v_threshold: float = 1.0
    v_reset: float = 0.0
    refractory_steps: int = 0
    reset_mode: str = "to_reset_value"
    model: str = "IF"  # "IF" or "LIF"
    v_min: float | None = None  # optional lower clamp on the membrane

    def __post_init__(self):
        if self.c_m <= 0:
            raise ValueError("C_m must be positive")
        if self.r_m <= 0:
            raise ValueError("R_m must be positive (math.inf for non-leaky)")
        if self.v_threshold <= self.v_reset:
            raise ValueError("V_threshold must exceed V_reset")
        if self.refractory_steps < 0:
            raise ValueError("refractory_steps must be >= 0")
        if self.reset_mode not in RESET_MODES:
            raise ValueError(f"reset_mode must be one of {RESET_MODES}")
        if self.model not in ("IF", "LIF"):
            raise ValueError("model must be IF or LIF")


@dataclass
class NeuronState:
    v_m: float = 0.0
    refractory_remaining: int = 0


def _apply_spike(v, params):
    if params.reset_mode == "to_reset_value":
        return params.v_reset
    return v - params.v_threshold


def step_if(state: NeuronState, params: NeuronParams, i: float, dt: float):
    """One non-leaky step; returns (new_state, spiked)."""
    assert params.model == "IF"
    if state.refractory_remaining > 0:
        return NeuronState(state.v_m, state.refractory_remaining - 1), False
    v = state.v_m + i * dt / params.c_m
    if params.v_min is not None:
        v = max(v, params.v_min)
    if v >= params.v_threshold:
        return NeuronState(_apply_spike(v, params), params.refractory_steps), True
    return NeuronState(v, 0), False


def step_lif(state: NeuronState, params: NeuronParams, i: float, dt: float):
    """One leaky forward-Euler step; returns (new_state, spiked)."""
    assert params.model == "LIF"
    if not math.isfinite(params.r_m):
        raise ValueError("LIF requires finite R_m")
    tau = params.c_m * params.r_m
    if dt >= tau:
        raise UnstableTimestep(f"dt={dt} >= C_m*R_m={tau}")
    if state.refractory_remaining > 0:
        return NeuronState(state.v_m, state.refractory_remaining - 1), False
    v = state.v_m + (dt / tau) * (params.r_m * i - state.v_m)
    if params.v_min is not None:
        v = max(v, params.v_min)
    if v >= params.v_threshold:
        return NeuronState(_apply_spike(v, params), params.refractory_steps), True
    return NeuronState(v, 0), False


class LayerState:
    """Vectorized membrane state for a layer (or replicated layer) of
    identical neurons. Arrays may carry any leading shape; the step is
    elementwise."""

    def __init__(self, shape, v0=0.0):
        self.v_m = np.full(shape, float(v0)) if np.isscalar(v0) else np.array(v0, dtype=np.float64)
        self.refractory = np.zeros(self.v_m.shape, dtype=np.int64)

    def copy(self):
        out = LayerState(self.v_m.shape)
        out.v_m = self.v_m.copy()
        out.refractory = self.refractory.copy()
        return out


def step_layer_state(state: LayerState, params: NeuronParams, currents: np.ndarray,
                     dt: float) -> np.ndarray:
    """Advance every neuron one step in place; returns boolean spike array."""
    currents = np.asarray(currents)
    if currents.shape != state.v_m.shape:
        raise LengthMismatch(f"currents {currents.shape} vs states {state.v_m.shape}")
    active = state.refractory == 0
    if params.model == "IF":
        dv = currents * (dt / params.c_m)
    else:
        tau = params.c_m * params.r_m
        if not math.isfinite(tau):
            raise ValueError("LIF requires finite R_m")
        if dt >= tau:
            raise UnstableTimestep(f"dt={dt} >= C_m*R_m={tau}")
        dv = (dt / tau) * (params.r_m * currents - state.v_m)
    state.v_m = np.where(active, state.v_m + dv, state.v_m)
    if params.v_min is not None:
        state.v_m = np.maximum(state.v_m, params.v_min)
    spikes = active & (state.v_m >= params.v_threshold)
    if params.reset_mode == "to_reset_value":
        state.v_m = np.where(spikes, params.v_reset, state.v_m)
    else:
        state.v_m = np.where(spikes, state.v_m - params.v_threshold, state.v_m)
    state.refractory = np.where(
        spikes, params.refractory_steps, np.maximum(state.refractory - 1, 0)
    )
    return spikes


def step_layer(states, params: NeuronParams, currents, dt: float):
    """Elementwise step over a sequence of NeuronState; returns
    (new_states, sorted spike index list)."""
    states = list(states)
    currents = list(currents)
    if len(states) != len(currents):
        raise LengthMismatch(f"{len(states)} states vs {len(currents)} currents")
    stepper = step_if if params.model == "IF" else step_lif
    new_states, spiked = [], []
    for idx, (s, i) in enumerate(zip(states, currents)):
        s2, fired = stepper(s, params, i, dt)
        new_states.append(s2)
        if fired:
            spiked.append(idx)
    return new_states, spiked


def analytic_lif_voltage(t, params: NeuronParams, i: float, v0: float = 0.0):
    """Closed-form sub-threshold LIF trajectory for constant current;
    test oracle only."""
    tau = params.c_m * params.r_m
    vinf = params.r_m * i
    return vinf + (v0 - vinf) * np.exp(-np.asarray(t) / tau)


def analytic_lif_first_spike_time(params: NeuronParams, i: float):
    """Closed-form first-spike time from V=0 under constant current;
    test oracle only. Returns inf for sub-threshold drive."""
    i_threshold = params.v_threshold / params.r_m
    if i <= i_threshold:
        return math.inf
    tau = params.c_m * params.r_m
    return -tau * math.log(1.0 - params.v_threshold / (params.r_m * i))
