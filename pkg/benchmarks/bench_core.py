"""Time the compiled core against the pure-Python fallback.

Usage: ``python benchmarks/bench_core.py [--repeat N]``.  Both backends
are run on identical inputs and their results are compared before timing.
"""
import argparse
import timeit

import numpy as np

from lagr import BandwidthSpec, PenaltySpec, _core_py
from lagr.design import local_problem
from lagr.kernels import distances
from lagr.simulation import ScenarioSpec, generate_scenario
from lagr.solver import fit_problem
import lagr.solver as solver
import lagr.kernels as kernels

try:
    from lagr import _core as _core_c
except ImportError:
    _core_c = None


def _cases():
    ds, _, _ = generate_scenario(ScenarioSpec(400, 0.5, 0.5, 1, seed=1), 0)
    prob = local_problem(ds, (0.475, 0.475), BandwidthSpec.nearest_neighbor(0.1926))
    pilot = prob.pilot()
    dist = distances((0.475, 0.475), ds.locations)
    return ds, prob, pilot, dist


def _use(core):
    solver.core = core
    kernels.core = core


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    _, prob, pilot, dist = _cases()
    spec = PenaltySpec(0.05)
    backends = [("python", _core_py)] + ([("cython", _core_c)] if _core_c else [])
    results, times = {}, {}
    for name, core in backends:
        _use(core)
        results[name] = fit_problem(prob, pilot, spec, tol=1e-12).zeta_hat.zeta
        jobs = {
            "fit_problem (n=400, p=5)": lambda: fit_problem(prob, pilot, spec, tol=1e-12),
            "nn_bandwidth (n=400)": lambda: core.nn_bandwidth(dist, 0.1926, 1e-6, 4.0),
        }
        for job, fn in jobs.items():
            number = 20
            best = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
            times[(job, name)] = best
    if "cython" in results:
        diff = np.abs(results["python"] - results["cython"]).max()
        print("max |python - cython| coefficient difference: %.2e" % diff)
    else:
        print("compiled core not built; timing the Python fallback only")
    print("%-26s %12s %12s %8s" % ("kernel", "python", "cython", "speedup"))
    for job in dict.fromkeys(j for j, _ in times):
        py = times[(job, "python")]
        cy = times.get((job, "cython"))
        print("%-26s %10.1f us %s" % (job, py * 1e6, "%10.1f us %7.1fx" % (cy * 1e6, py / cy) if cy else ""))


if __name__ == "__main__":
    main()
