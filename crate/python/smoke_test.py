"""Smoke test for the bit_py extension.

Build first with `cargo build -p bit-py`, then run `python3 python/smoke_test.py`.
"""

import importlib.util
import json
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    names = ["libbit_py.so", "libbit_py.dylib", "bit_py.dll"]
    for profile in ["release", "debug"]:
        for name in names:
            lib = ROOT / "target" / profile / name
            if lib.exists():
                suffix = ".pyd" if name.endswith(".dll") else ".so"
                dest = pathlib.Path(tempfile.mkdtemp()) / f"bit_py{suffix}"
                shutil.copy(lib, dest)
                spec = importlib.util.spec_from_file_location("bit_py", dest)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
                return module
    sys.exit("bit_py library not found; run `cargo build -p bit-py` first")


def main():
    bit = load()
    print("bit_py", bit.__version__)

    text = bit.synth_jsonl(3, molecules=4, pockets=4, complexes=4)
    lines = text.splitlines()
    assert len(lines) == 12, len(lines)
    stats = json.loads(bit.stats_json(text))
    assert stats["molecule"]["graphs"] > 0 and stats["pocket"]["graphs"] > 0

    assert bit.auc_roc([0.9, 0.4, 0.8, 0.1], [True, True, False, False]) == 0.75
    scores = [-float(i) for i in range(100)]
    labels = [i < 2 for i in range(100)]
    assert math.isclose(bit.enrichment_factor(scores, labels, 0.02), 50.0)
    m = bit.regression_metrics([0.0, 2.0, 1.0], [0.0, 1.0, 2.0])
    assert math.isclose(m["r"], 0.5) and math.isclose(m["rmse"], math.sqrt(2 / 3))
    try:
        bit.auc_roc([0.1, 0.2], [True, True])
        raise AssertionError("single-class AUC accepted")
    except ValueError:
        pass

    a = bit.config_digest('seed = 1\n[model]\npreset = "tiny"\nlayers = 3\n')
    b = bit.config_digest('seed = 1\n\n[model]\nlayers = 3\npreset = "tiny"\n')
    assert a == b
    with tempfile.TemporaryDirectory() as tmp:
        assert bit.cli(["--out", tmp, "gen-data"]) == 0
        assert (pathlib.Path(tmp) / "data.jsonl").exists()
        assert bit.cli(["frobnicate"]) == 2
    print("smoke test passed")


if __name__ == "__main__":
    main()
