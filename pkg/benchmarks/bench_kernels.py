"""Time the compiled and pure-Python stepping cores on the standard scenarios.

    python3 benchmarks/bench_kernels.py [--steps 2000] [--python-steps 100]

Prints microseconds per implicit step for each core and the speed-up, and
checks that both cores land on the same state.
"""

import argparse
import time

import numpy as np

from stone_erosion import kernels, make_scenario
from stone_erosion.solver import Simulation

CASES = [
    ("standard_1d asymmetric", "standard_1d", {}, "asymmetric"),
    ("standard_1d symmetric", "standard_1d", {}, "symmetric"),
    ("catastrophic_1d", "catastrophic_1d", {}, None),
    ("standard_2d N=50", "standard_2d", {"N": 50}, None),
]


def time_core(kind, over, law, backend, steps):
    sc = make_scenario(kind, **over)
    if law:
        sc = sc.replace(params=sc.params.replace(law=law))
    sim = Simulation(sc, backend=backend)
    sim.advance_to(10 * sc.dt)  # warm-up past the initial transient
    t0 = time.perf_counter()
    sim.advance_to((10 + steps) * sc.dt)
    return (time.perf_counter() - t0) / steps, sim.state


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000, help="steps timed on the compiled core")
    ap.add_argument("--python-steps", type=int, default=100, help="steps timed on the Python core")
    args = ap.parse_args()
    if "compiled" not in kernels.available():
        raise SystemExit("compiled core not built")
    print(f"{'case':28s} {'compiled us/step':>17s} {'python us/step':>15s} {'speed-up':>9s} {'max rel diff':>13s}")
    for name, kind, over, law in CASES:
        tc, _ = time_core(kind, over, law, "compiled", args.steps)
        tp, sp = time_core(kind, over, law, "python", args.python_steps)
        # same horizon on both cores for the agreement check
        _, sc_state = time_core(kind, over, law, "compiled", args.python_steps)
        diff = max(
            np.max(np.abs(getattr(sp, f) - getattr(sc_state, f))) / max(np.max(np.abs(getattr(sp, f))), 1e-300)
            for f in ("theta", "c_a", "n")
        )
        print(f"{name:28s} {tc * 1e6:17.1f} {tp * 1e6:15.1f} {tp / tc:9.1f} {diff:13.2e}")


if __name__ == "__main__":
    main()
