"""Regenerate the bundled pair models by running the pipeline on each bundled config."""

import shutil
import tempfile
from pathlib import Path

from xtherm.cli import main

DATA = Path(__file__).resolve().parents[1] / "src" / "xtherm" / "data"

for flavor in ("nsfet", "cfet"):
    with tempfile.TemporaryDirectory() as tmp:
        code = main(["--out", tmp, "pipeline", str(DATA / f"{flavor}.json")])
        if code:
            raise SystemExit(code)
        shutil.copy(Path(tmp) / "pair_model.json", DATA / f"pair_{flavor}.json")
        print(f"pair_{flavor}.json updated")
