"""Rotation term versus directed-force signal across trap offsets.

Prints Phi, max|R_xy R_yx| and the masking ratio at both peaks; values
above one mean the directed-force feature is hidden by the rotation term.
"""

import argparse
import math

import numpy as np

from levixcorr.model import DEFAULT_G, DirectedForce, build_system, default_env
from levixcorr.response import cancellation_offset, hybridisation_functions, rotation_angle_phi
from levixcorr.spectra import masking_ratio, resonance_band


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pressure-mbar", type=float, default=1e-4)
    ap.add_argument("--beta2", type=float, default=0.1)
    ap.add_argument("--psi-deg", type=float, default=45.0)
    args = ap.parse_args()

    node = build_system(default_env(args.pressure_mbar), DEFAULT_G, DEFAULT_G)
    x0c = cancellation_offset(node).x0
    offsets = sorted({0.05, 0.10, 0.125, x0c, 0.145, 0.20, 0.25})
    print(f"cancellation offset: {x0c:.5f} lambda")
    print(f"{'x0/lambda':>10} {'Phi':>11} {'max|RR|':>9} {'mask x':>9} {'mask y':>9}")
    for x0 in offsets:
        p = build_system(default_env(args.pressure_mbar, trap_offset_lambda=x0), DEFAULT_G, DEFAULT_G)
        f = DirectedForce.from_gamma(p.gamma, args.beta2, math.radians(args.psi_deg))
        grid = np.linspace(*resonance_band(p), 4001)
        r_xy, r_yx = hybridisation_functions(grid, p)
        rr = np.max(np.abs(r_xy * r_yx))
        mx, my = (masking_ratio(p, f, ax) for ax in "xy")
        print(f"{x0:10.5f} {rotation_angle_phi(p):11.3e} {rr:9.4f} {mx:9.3g} {my:9.3g}")


if __name__ == "__main__":
    main()
