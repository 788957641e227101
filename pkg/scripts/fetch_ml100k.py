"""Extract MovieLens-100K ``u.data`` from the RecBole wheel.

GroupLens hosts the canonical archive; this sandbox only reaches the PyPI
mirror, and the RecBole wheel ships the same 100,000 ratings verbatim.

    python scripts/fetch_ml100k.py [dest-dir]
"""
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def main(dest: str = "data/ml-100k") -> None:
    out = Path(dest)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "recbole==1.2.1", "-d", tmp],
            check=True,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            lines = zf.read(MEMBER).decode().splitlines()
    # drop the typed header; the rest is u.data byte-for-byte
    (out / "u.data").write_text("\n".join(lines[1:]) + "\n")
    print(f"wrote {len(lines) - 1} ratings to {out / 'u.data'}")


if __name__ == "__main__":
    main(*sys.argv[1:])
