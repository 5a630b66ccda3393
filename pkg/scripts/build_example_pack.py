"""Regenerate the frozen example test files of the shipped example pack.

The pack's assistant answer for the TSL-to-tests example is scaffolded once from
the pack TSL and then checked in, so prompt bytes only change when this runs.

    python3 scripts/build_example_pack.py
"""

from pathlib import Path

from resttsl.codegen import available_frameworks, load_framework, scaffold_fallback_tests
from resttsl.templating import default_template_root
from resttsl.tsl import parse_tsl


def main() -> None:
    root = default_template_root()
    pack = root / "example_pack"
    doc = parse_tsl((pack / "tsl.tsl.yaml").read_text(encoding="utf-8"))
    for key in available_frameworks(root):
        fw = load_framework(key, root)
        suite = scaffold_fallback_tests(doc, key, root)
        blocks = [f"```{fw.literal_style}\n{f.content.rstrip()}\n```" for f in suite.files]
        out = pack / key / "tests.txt"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n\n".join(blocks) + "\n", encoding="utf-8")
        print(f"wrote {out} ({len(suite.manifest)} tests)")


if __name__ == "__main__":
    main()
