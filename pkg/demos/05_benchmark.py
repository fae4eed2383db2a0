"""Throughput and latency numbers on this machine, via the command line.

Everything here shells through the same dispatcher the `evpipe` console
script uses, so the printed figures match what you get in a terminal.
"""
from evpipe.cli import dispatch


def main():
    print("# stream throughput (synthetic 2M-event stream)")
    dispatch([
        "bench", "--synthetic", "2000000", "--rate", "1e6", "--size", "240x180",
        "--window", "25000", "--stage", "all", "--reps", "3",
    ])

    print("\n# window-duration quantiles at a constant 1 Mev/s")
    dispatch(["latency", "--synthetic", "100000", "--rate", "1e6", "--window", "25000"])

    print("\n# slower stream, smaller windows: 10k events take 25 ms at 400 kev/s")
    dispatch(["latency", "--synthetic", "100000", "--rate", "4e5", "--window", "10000"])


if __name__ == "__main__":
    main()
