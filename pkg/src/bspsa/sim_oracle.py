"""Oracle process that scores requests on the quadratic Elo landscape.

    python -m bspsa.sim_oracle --curvature 0.01 --draw-rate 0.82 --seed 7

Game randomness is keyed on ``(seed, request id)``, so a restarted oracle
answers a repeated request exactly as before.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from bspsa.oracle import OracleResponse, ProtocolError, decode_request, encode_response
from bspsa.simulator import DEFAULT_CURVATURE, DEFAULT_DRAW_RATE, QuadraticLandscape, play_match


def serve(stdin, stdout, curvatures: list[float], draw_rate: float, seed: int) -> int:
    landscape = None
    for line in stdin:
        try:
            req = decode_request(line)
        except ProtocolError as exc:
            print(f"sim_oracle: {exc}", file=sys.stderr)
            return 3
        names = list(req.theta_plus)
        if landscape is None:
            a = curvatures if len(curvatures) == len(names) else [curvatures[0]] * len(names)
            landscape = QuadraticLandscape(np.array(a), draw_rate)
        plus = np.array([req.theta_plus[k] for k in names], dtype=np.float64)
        minus = np.array([req.theta_minus[k] for k in names], dtype=np.float64)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, req.id])))
        w = play_match(landscape, plus, minus, rng)
        stdout.write(encode_response(OracleResponse(req.id, w)))
        stdout.flush()
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="python -m bspsa.sim_oracle", description=__doc__.splitlines()[0])
    parser.add_argument(
        "--curvature",
        type=lambda s: [float(v) for v in s.split(",")],
        default=[DEFAULT_CURVATURE],
        help="Elo per squared unit; one value, or one per parameter in request order",
    )
    parser.add_argument("--draw-rate", type=float, default=DEFAULT_DRAW_RATE)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    return serve(sys.stdin.buffer, sys.stdout.buffer, args.curvature, args.draw_rate, args.seed)


if __name__ == "__main__":
    sys.exit(main())
