"""Worst autonomous-disconnect loss along a few random attack orders on the 36-node feeder."""
import sys

from dnresilience import cascade
from dnresilience.network import builtin_network, max_loss


def main(Z: int = 3, seed: int = 0) -> None:
    net = builtin_network("net36")
    run = cascade.randomized_worst_case(net, 0.0, Z=Z, seed=seed)
    l_max = max_loss(net)
    print("k  worst loss  R_AD")
    for k, v in enumerate(run.V, start=1):
        print(f"{k:2d}  {v:10.2f}  {100 * (1 - v / l_max):6.2f}")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:3]))
