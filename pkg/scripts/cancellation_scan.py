"""Cancellation offset x0 (in wavelengths) as a function of the detuning."""

import argparse

import numpy as np

from levixcorr.errors import NoCancellationError
from levixcorr.model import DEFAULT_G, DEFAULT_OMEGA_Y, build_system, default_env
from levixcorr.response import cancellation_offset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lo", type=float, default=1.2, help="smallest -Delta / omega_y")
    ap.add_argument("--hi", type=float, default=400.0, help="largest -Delta / omega_y")
    ap.add_argument("--points", type=int, default=25)
    args = ap.parse_args()

    env = default_env(1e-4)
    print(f"{'-Delta/omega_y':>15} {'x0/lambda':>10} {'Im G (rad/s)':>13}")
    for f in np.geomspace(args.lo, args.hi, args.points):
        p = build_system(env, DEFAULT_G, DEFAULT_G, delta=-f * DEFAULT_OMEGA_Y)
        try:
            c = cancellation_offset(p)
        except NoCancellationError as exc:
            print(f"{f:15.3f} {'-':>10} {exc}")
            continue
        print(f"{f:15.3f} {c.x0:10.5f} {c.imag_residual:13.4g}")


if __name__ == "__main__":
    main()
