"""Grid refinement study.

Prints, for a sequence of doubled grids on the unit disc:
  * the first Dirichlet eigenvalue of -Laplacian and its error,
  * z(0) of the Lane-Emden ground state and the diagonal system's Morse index,
  * the reflection-system residual on the exponential branch at lam = mu.

    python scripts/refinement_study.py --levels 16 32 64 --lam 0.5 --json out.json
"""
import argparse
import json
import time

import numpy as np

from coopsym.grid import Domain, build_grid
from coopsym.solver import first_eigenfunction
from coopsym.spectral import linearize, morse_spectrum
from coopsym.suites import exponential_solution, lane_emden_diagonal
from coopsym.symmetry import build_reflection_coefficients, radiality_defect

J01_SQ = 5.783185962950384
LANE_EMDEN_Z0 = 3.573900981924888


def level(n: int, lam: float) -> dict:
    t0 = time.perf_counter()
    g = build_grid(Domain.ball(), n, 2 * n)
    lam1 = first_eigenfunction(g)[0]
    spec, U = lane_emden_diagonal(g)
    idx = morse_spectrum(linearize(spec, U)).morse_index
    espec, E = exponential_solution(g, lam)
    res = max(build_reflection_coefficients(espec, E, g.direction(k * g.n_theta // 8)).residual_norm
              for k in range(8))
    return {"n_r": n, "n_theta": 2 * n, "lambda1": lam1,
            "lambda1_rel_err": abs(lam1 - J01_SQ) / J01_SQ,
            "z_max": float(U.values.max()), "z_err": abs(U.values.max() - LANE_EMDEN_Z0),
            "morse_index": idx, "exp_radiality": radiality_defect(E),
            "reflection_residual": res, "seconds": time.perf_counter() - t0}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--lam", type=float, default=0.5)
    ap.add_argument("--json", default=None, help="write the table as JSON")
    args = ap.parse_args(argv)

    rows = [level(n, args.lam) for n in args.levels]
    for prev, row in zip(rows, rows[1:]):
        for key in ("lambda1_rel_err", "z_err", "reflection_residual"):
            a, b = prev[key], row[key]
            row[key + "_order"] = float(np.log2(a / b)) if a > 0 and b > 0 else None

    hdr = f"{'grid':>9} {'lambda1':>12} {'rel err':>9} {'order':>6} {'z max':>9} {'order':>6} " \
          f"{'index':>5} {'refl res':>9} {'order':>6} {'sec':>6}"
    print(hdr)
    for r in rows:
        fmt = lambda v: f"{v:6.2f}" if isinstance(v, float) else f"{'':>6}"
        print(f"{r['n_r']:>4}x{r['n_theta']:<4} {r['lambda1']:12.8f} {r['lambda1_rel_err']:9.2e} "
              f"{fmt(r.get('lambda1_rel_err_order'))} {r['z_max']:9.6f} {fmt(r.get('z_err_order'))} "
              f"{r['morse_index']:>5d} {r['reflection_residual']:9.2e} "
              f"{fmt(r.get('reflection_residual_order'))} {r['seconds']:6.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
