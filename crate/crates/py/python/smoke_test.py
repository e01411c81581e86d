"""Smoke test for the cutmixed_py extension module.

Builds the module with cargo when it is not importable, then checks a few
cheap experiments. Run from anywhere: `python3 crates/py/python/smoke_test.py`.
"""

import importlib
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[3]


def load():
    try:
        return importlib.import_module("cutmixed_py")
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "cutmixed-py", "--features", "python"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libcutmixed_py.so"
    if not lib.exists():
        sys.exit(f"extension not found at {lib}")
    dest = Path(tempfile.mkdtemp()) / "cutmixed_py.so"
    shutil.copy(lib, dest)
    sys.path.insert(0, str(dest.parent))
    return importlib.import_module("cutmixed_py")


def main():
    m = load()
    header = m.header()
    assert header[0] == "L" and header[-1] == "psl2error", header

    rows = m.dirichlet(0, [0, 1, 2], gamma_u=1.0, pp="patch", geometry="ring")
    assert len(rows) == 3
    u = [r[4][0] for r in rows]
    rates = m.eoc(u)
    assert all(r is not None and r > 0.8 for r in rates), rates

    csv = m.dirichlet_csv(0, [0], pp="none")
    assert csv.splitlines()[0] == ",".join(header)
    assert math.isnan(float(csv.splitlines()[1].split(",")[-1]))

    strip = m.sparsity(1)
    assert [(r[1], r[2]) for r in strip] == [(7, 4), (22, 12)], strip

    du, dp = m.equivalence(k=1, level=0)
    assert du < 1e-9 and dp < 1e-9, (du, dp)

    try:
        m.dirichlet(0, [0], pp="bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("bad post-processing name accepted")

    print(f"cutmixed_py {m.__version__}: ok (k=0 flux rates {', '.join(f'{r:.2f}' for r in rates)})")


if __name__ == "__main__":
    main()
