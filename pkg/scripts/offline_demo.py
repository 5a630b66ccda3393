"""Run the whole CLI flow offline with canned completions.

    python3 scripts/offline_demo.py [--out DIR]

Uses configs/mock-demo.yaml with its run_root redirected to DIR (a temporary
directory by default): gen-tsl, gen-tests, derive, validate, ingest of the
fixture reports, then score and rank.
"""

import argparse
import tempfile
from pathlib import Path

import yaml

from resttsl.cli import main as cli

ROOT = Path(__file__).resolve().parent.parent
CONFIG = ROOT / "configs" / "mock-demo.yaml"
METRICS = ROOT / "tests" / "fixtures" / "metrics"


def run(config: Path, *args: str) -> None:
    print(f"$ resttsl {' '.join(args)}")
    code = cli(["--config", str(config), *args])
    if code:
        raise SystemExit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()
    out = args.out or Path(tempfile.mkdtemp(prefix="resttsl-demo-"))

    data = yaml.safe_load(CONFIG.read_text(encoding="utf-8"))
    data["run_root"] = str(out.resolve())
    for project in data["projects"]:
        project["openapi"] = str((CONFIG.parent / project["openapi"]).resolve())
    data["mock"]["rules"] = {k: str((CONFIG.parent / v).resolve()) for k, v in data["mock"]["rules"].items()}
    config = out / "config.yaml"
    out.mkdir(parents=True, exist_ok=True)
    config.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")

    run(config, "gen-tsl")
    run(config, "gen-tests")
    run(config, "derive")
    run(config, "validate")
    run(config, "ingest", "--model", "mock-model", "--project", "todo-api",
        str(METRICS / "tests.json"), str(METRICS / "coverage.json"), str(METRICS / "mutation.json"))
    run(config, "score")
    run(config, "rank")
    print(f"\nartifacts under {out}")


if __name__ == "__main__":
    main()
