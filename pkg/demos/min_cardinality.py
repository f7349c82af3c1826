"""Smallest attacks reaching a range of resilience targets on a 6-node feeder, checked by brute force."""
import itertools

import numpy as np

from dnresilience import gbd
from dnresilience import operator as op
from dnresilience.network import build_network, max_loss

EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)]


def main() -> None:
    net = build_network(EDGES, [1, 3, 5], name="six")
    l_max = max_loss(net)
    worst = {}
    for bits in itertools.product((0, 1), repeat=net.n_dg):
        k = sum(bits)
        worst[k] = max(worst.get(k, 0.0), op.solve_misocp(net, 0.0, np.array(bits)).value)
    print("k  worst loss  resilience")
    for k, v in sorted(worst.items()):
        print(f"{k}  {v:10.3f}  {100 * (1 - v / l_max):6.2f}")
    print("\ntarget R  status   card  realized R  iterations")
    for R in (99.5, 99.0, 95.0, 93.0, 90.0):
        r = gbd.run_min_cardinality(net, 0.0, (1 - R / 100) * l_max, gbd.GbdConfig(m=net.n_dg - 1))
        got = f"{r.resilience(l_max):10.2f}" if r.status == gbd.SUCCESS else f"{'-':>10}"
        print(f"{R:8.1f}  {r.status:8} {r.cardinality if r.cardinality is not None else '-':>4}  {got}  {r.iterations}")


if __name__ == "__main__":
    main()
