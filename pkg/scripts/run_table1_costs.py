#!/usr/bin/env python3
"""Reproduce the published relative-cost column from character averages.

Feeds the per-question character averages of each architecture row and
the shipped pricing table into the gateway cost math, and prints the
relative cost against the executor-only strong-model baseline. The
char-to-token factor k cancels; pass --k to see that numerically.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from chops.gateway import PricingTable, UsageLedger, cost_of, relative_cost

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

BASELINE = ("Executor only (gpt-4-0125-preview)", {"gpt-4-0125-preview": (12_900, 190)})
ROWS = [
    ("1-vote CoT (gpt-3.5-turbo)", {"gpt-3.5-turbo": (14_510, 500)}, 16.9),
    ("4-vote CoT (gpt-3.5-turbo)", {"gpt-3.5-turbo": (53_540, 940)}, 61.0),
    ("16-vote CoT (gpt-3.5-turbo)", {"gpt-3.5-turbo": (211_580, 2_590)}, 239.5),
    ("C-E-V (gpt-3.5-turbo)", {"gpt-3.5-turbo": (30_100, 560)}, 34.4),
    (
        "C-E-V (mixed backbones)",
        {"gpt-3.5-turbo": (16_860, 330), "gpt-4-0125-preview": (9_790, 210)},
        96.6,
    ),
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--k", type=float, default=1.0, help="char-to-token factor")
    parser.add_argument("--pricing", type=Path, default=FIXTURES / "pricing.json")
    args = parser.parse_args()

    pricing = PricingTable.load(args.pricing, k_char_to_token=args.k)
    baseline = UsageLedger.from_totals(BASELINE[1])
    print(f"pricing: {args.pricing}  k = {args.k}")
    print(f"baseline: {BASELINE[0]}  cost/question = {cost_of(baseline, pricing):.5f}")
    print()
    print(f"{'architecture':<34} {'rel. cost':>10} {'published':>10}")
    for label, totals, published in ROWS:
        rel = relative_cost(UsageLedger.from_totals(totals), baseline, pricing)
        marker = "ok" if abs(rel - published) <= 0.1 else "MISMATCH"
        print(f"{label:<34} {rel:>9.1f}% {published:>9.1f}%  {marker}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
