# lif_dynamics.py
#
# Walk through the two neuron models step by step: charge an IF neuron with
# a constant current and watch the regular spike train, then do the same for
# a leaky neuron and compare the simulated voltage with the closed-form
# solution of the membrane equation.

import numpy as np

from snnkit.neurons import (NeuronParams, NeuronState,
                            analytic_lif_first_spike_time, step_if, step_lif)


def main():
    # --- integrate-and-fire: perfect accumulator ---
    params = NeuronParams()  # C_m = 1, V_th = 1, reset to 0
    state = NeuronState()
    current, dt = 0.2, 1.0
    print("IF neuron, I = 0.2 per step:")
    for t in range(12):
        state, fired = step_if(state, params, current, dt)
        marker = "  <-- spike" if fired else ""
        print(f"  t={t:2d}  V_m={state.v_m:5.2f}{marker}")

    # --- leaky integrate-and-fire: Euler vs analytic ---
    lif = NeuronParams(model="LIF", r_m=1.0)
    current, dt = 2.0, 1e-3
    state = NeuronState()
    t_spike = None
    for t in range(1, 2001):
        state, fired = step_lif(state, lif, current, dt)
        if fired:
            t_spike = t * dt
            break
    analytic = analytic_lif_first_spike_time(lif, current)
    print(f"\nLIF neuron, R*I = {lif.r_m * current}:")
    print(f"  simulated first spike at t = {t_spike:.4f} s")
    print(f"  analytic  first spike at t = {analytic:.4f} s (ln 2)")

    # free decay from V_m = 0.5 with no input
    state = NeuronState(v_m=0.5)
    print("\nfree decay, V(0) = 0.5:")
    checkpoints = (100, 500, 1000, 2000)
    for t in range(1, checkpoints[-1] + 1):
        state, _ = step_lif(state, lif, 0.0, dt)
        if t in checkpoints:
            exact = 0.5 * np.exp(-t * dt / (lif.c_m * lif.r_m))
            print(f"  t={t * dt:.1f}s  euler={state.v_m:.6f}  analytic={exact:.6f}")


if __name__ == "__main__":
    main()
