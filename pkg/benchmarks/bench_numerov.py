"""Compare the compiled and pure-Python Numerov kernels.

Run ``python3 benchmarks/bench_numerov.py``. Both kernels integrate the same
Rydberg states; the script reports mean time per call, the speed-up and the
largest difference between the two wavefunctions.
"""

import argparse
import math
import timeit

import numpy as np

from rydmol import _numerov_py
from rydmol.atomdata import DEFAULT_STEP, QuantumDefectTable

try:
    from rydmol import _numerov as _compiled
except ImportError:
    _compiled = None


def _cases(defects, states):
    out = []
    for n, L, J in states:
        nstar = defects.effective_n(n, L, J)
        energy = -0.5 / nstar**2
        k_start = int(math.sqrt(2.0 * n * (n + 15.0)) / DEFAULT_STEP)
        out.append((k_start, DEFAULT_STEP, L, energy, defects.core_polarizability ** (1 / 3)))
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    cs = QuantumDefectTable.load("Cs")
    cases = _cases(cs, [(64, 1, 0.5), (64, 2, 1.5), (77, 1, 0.5), (80, 3, 3.5)])
    kernels = {"python": _numerov_py.integrate}
    if _compiled is not None:
        kernels["compiled"] = _compiled.integrate
    else:
        print("compiled kernel not built; timing the Python kernel only")
    times = {}
    for name, fn in kernels.items():
        t = timeit.repeat(lambda: [fn(*c) for c in cases], number=1, repeat=args.repeat)
        times[name] = min(t) / len(cases)
        print(f"{name:>9s}: {1e3 * times[name]:8.3f} ms per state")
    if len(kernels) == 2:
        diff = 0.0
        for c in cases:
            ka, Xa = kernels["python"](*c)
            kb, Xb = kernels["compiled"](*c)
            assert ka == kb
            diff = max(diff, float(np.max(np.abs(Xa - Xb) / np.max(np.abs(Xa)))))
        print(f"  speed-up: {times['python'] / times['compiled']:.1f}x, max relative difference {diff:.2e}")


if __name__ == "__main__":
    main()
