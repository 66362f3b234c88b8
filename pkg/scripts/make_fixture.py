"""Regenerate the bundled two-asset replay fixture.

Three hours of one-minute BTC/ETH observations: correlated noise, simultaneous
spikes on both assets at minutes 40 and 110, an up-drift between them and a
sell-off after the second. With the default config the minute-110 pair is
admitted for the higher-scored asset while the other meets a held lock.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

START = 1_700_000_040
MINUTES = 180
SPIKES = {40: (0.0080, 0.0110), 110: (-0.0090, -0.0070)}
DRIFT = [(41, 100, 0.0004), (111, 179, -0.0003)]


def rows(seed: int = 7):
    rng = np.random.default_rng(seed)
    prices = {"BTC": 67_000.0, "ETH": 3_500.0}
    depth = {"BTC": 12.0, "ETH": 180.0}
    for m in range(MINUTES):
        ts = START + 60 * m
        common = rng.normal(0.0, 0.0003)
        for i, asset in enumerate(("BTC", "ETH")):
            r = 0.6 * common + rng.normal(0.0, 0.00025)
            if m in SPIKES:
                r = SPIKES[m][i]
            for lo, hi, mu in DRIFT:
                if lo <= m <= hi:
                    r += mu
            p = prices[asset] * (1.0 + r)
            prices[asset] = p
            wick = abs(rng.normal(0.0, 0.0002))
            half = p * 0.00002
            yield {
                "timestamp": ts,
                "asset": asset,
                "price": f"{p:.8f}",
                "volume": f"{rng.uniform(5, 50) * (10 if asset == 'ETH' else 1):.4f}",
                "high": f"{p * (1 + wick):.8f}",
                "low": f"{p * (1 - wick):.8f}",
                "best_bid": f"{p - half:.8f}",
                "best_ask": f"{p + half:.8f}",
                "bid_depth": f"{depth[asset] * rng.uniform(0.5, 1.5):.4f}",
                "ask_depth": f"{depth[asset] * rng.uniform(0.5, 1.5):.4f}",
                "funding_rate": f"{0.0001 if m < 90 else 0.00012:.6f}",
            }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-o", "--output",
                    default=str(Path(__file__).resolve().parents[1] / "src/gatedtrader/data/fixture_2asset.csv"))
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    data = list(rows(args.seed))
    with open(args.output, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(data[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(data)
    print(f"wrote {len(data)} rows to {args.output}")


if __name__ == "__main__":
    main()
