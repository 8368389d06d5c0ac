"""Drive the command line end to end: synthesize data, compare, then rerun from the manifest.

The rerun uses a different worker count and output folder and must produce
byte-identical files.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from deepsupp.cli import main as cli


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        data = root / "data"
        cli(["synth", "-o", str(data), "--ticker", "AAA", "--bands", "90:100,110:100", "--coupling", "1,-1"])
        cli(["synth", "-o", str(data), "--ticker", "BBB", "--length", "200",
             "--script", "90:bounce:spike,90:bounce,80:break", "--seed", "1", "--noise", "0.004"])
        first, second = root / "first", root / "second"
        code = cli(["compare", "--data-dir", str(data), "-o", str(first), "--methods", "all", "--epochs", "20"])
        print("compare exit code", code)
        print((first / "comparison.txt").read_text())
        cli(["compare", "--manifest", str(first / "run_manifest.json"), "-o", str(second), "--jobs", "2"])
        files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
        same = all((first / f).read_bytes() == (second / f).read_bytes() for f in files)
        print(f"rerun from manifest: {len(files)} files, identical: {same}")


if __name__ == "__main__":
    main()
