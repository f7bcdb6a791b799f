#!/usr/bin/env python3
"""Sweep the context-maintenance machinery over randomized histories.

For a range of token windows, generates over-budget histories, applies
tag compression and eviction, and prints what each stage saved and where
the post-eviction length landed relative to the 60% target.

    python scripts/budget_sweep.py [--runs 200]
"""

from __future__ import annotations

import argparse
import random

from leanagent.ledger import BudgetConfig, compress_tags, evict, history_length
from leanagent.messages import Message, user


def build_history(rng: random.Random, budget: BudgetConfig) -> list[Message]:
    history = [Message(role="system", content="system prompt " + "s" * 80)]
    while history_length(history) <= budget.char_budget:
        kind = rng.randrange(3)
        size = rng.randint(50, 3_000)
        body = "x" * size
        if kind == 0:
            content = f"<tool_result>\n{body}\n</tool_result>"
        elif kind == 1:
            content = f"<history>\nT1 ...\n</history>\n<key_info>\n{body[:400]}\n</key_info>"
        else:
            content = body
        history.append(user(content))
    history.append(user("current turn"))
    return history


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--runs", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = random.Random(args.seed)

    print(f"{'W_tokens':>9} {'B':>8} {'C_H pre':>9} {'compressed':>10} {'evicted':>9} {'C_H/B':>6}")
    for w_tokens in (2_000, 5_000, 10_000, 30_000):
        budget = BudgetConfig(w_tokens=w_tokens)
        worst_ratio = 0.0
        total_pre = total_compressed = total_post = 0
        for _ in range(args.runs):
            history = build_history(rng, budget)
            pre = history_length(history)
            compressed = history_length(compress_tags(history, budget, strict=True))
            post = history_length(evict(history, budget, protect_tail=1))
            total_pre += pre
            total_compressed += compressed
            total_post += post
            worst_ratio = max(worst_ratio, post / budget.char_budget)
        runs = args.runs
        print(
            f"{w_tokens:>9} {budget.char_budget:>8} {total_pre // runs:>9} "
            f"{total_compressed // runs:>10} {total_post // runs:>9} {worst_ratio:>6.3f}"
        )
    print("\nC_H/B is the worst-case post-eviction ratio; the target is 0.600.")


if __name__ == "__main__":
    main()
