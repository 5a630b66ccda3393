"""Recompute the published score, ranking and failure tables from their printed inputs.

    python3 scripts/reproduce_tables.py [--locale pt]

Reads tests/fixtures/published_tables.json and prints markdown tables with the
recomputed values next to the printed ones.
"""

import argparse
import json
from decimal import Decimal
from pathlib import Path

from resttsl.metrics import (
    FailureRecord,
    ScoreRow,
    calculated_score,
    failed_pct,
    format_number,
    rank_models,
    rank_table,
    tally_failures,
    to_markdown,
)

TABLES = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "published_tables.json"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--locale", choices=["en", "pt"], default="en")
    args = parser.parse_args()
    sep = "," if args.locale == "pt" else "."
    data = json.loads(TABLES.read_text(encoding="utf-8"))

    scores = [["Model", "SR", "C", "M", "S printed", "S recomputed", "diff"]]
    for r in data["scores"]:
        s = calculated_score(r["SR"], r["C"], r["M"])
        scores.append([r["model"]] + [format_number(r[k], 1, sep) for k in ("SR", "C", "M", "S")]
                      + [format_number(s, 3, sep), format_number(s - r["S"], 3, sep)])
    print("## Calculated score\n")
    print(to_markdown(scores))

    rows = [ScoreRow(r["model"], r["S"], r["SR"], r["C"], r["M"], r["T"], Decimal(r["TC"])) for r in data["scores"]]
    print("## Ranking (ties: lexicographic model id)\n")
    print(to_markdown(rank_table(rank_models(rows), args.locale)))

    rates = [["Model", "Total", "Failed", "Failed % printed", "Failed % recomputed"]]
    for r in data["failure_rates"]:
        rates.append([r["model"], str(r["total"]), str(r["failed"]), format_number(r["pct"], 1, sep),
                      format_number(failed_pct(r["total"], r["failed"]), 1, sep)])
    p = data["pooled"]
    rates.append(["(pooled)", str(p["total"]), str(p["failed"]), format_number(p["pct"], 2, sep),
                  format_number(failed_pct(p["total"], p["failed"], 2), 2, sep)])
    print("## Failed tests\n")
    print(to_markdown(rates))

    records = [FailureRecord(m, "", "", cat) for m, counts in data["failures_by_model"].items()
               for cat, n in counts.items() for _ in range(n)]
    tax = tally_failures(records)
    print("## Failure categories\n")
    print(to_markdown([["Category", "Count"]] + [[c, str(n)] for c, n in tax.counts.items()]
                      + [["Total", str(tax.total)]]))


if __name__ == "__main__":
    main()
