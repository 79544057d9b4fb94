"""Fetch MovieLens 100K as ``user,item,rating,timestamp`` CSV.

GroupLens hosts the canonical archive. When it is unreachable, the same
100,000 ratings (identical to ``u.data``) are read from the example data
bundled in the ``recbole`` wheel, fetched with ``pip download``.

Usage: python scripts/fetch_movielens100k.py [OUT_CSV]   (default data/ml-100k.csv)
"""

import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
WHEEL_SPEC = "recbole==1.2.1"
WHEEL_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"
EXPECTED_ROWS = 100_000


def _download(url: str, timeout: float = 60.0) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read()


def _rows_from_grouplens():
    blob = _download(GROUPLENS_URL, timeout=15.0)
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        text = zf.read("ml-100k/u.data").decode("latin-1")
    return [line.split("\t") for line in text.splitlines() if line.strip()]


def _rows_from_recbole():
    # pip honours whatever index/mirror the environment is configured with
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                        "--only-binary", ":all:", "-d", tmp, WHEEL_SPEC], check=True)
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            text = zf.read(WHEEL_MEMBER).decode("utf-8")
    lines = text.splitlines()[1:]  # typed header
    return [line.split("	") for line in lines if line.strip()]


def fetch(out: Path) -> Path:
    try:
        rows = _rows_from_grouplens()
    except Exception as exc:  # noqa: BLE001 - any network failure falls through
        print(f"grouplens unavailable ({exc.__class__.__name__}); using PyPI copy", file=sys.stderr)
        rows = _rows_from_recbole()
    if len(rows) != EXPECTED_ROWS:
        raise RuntimeError(f"expected {EXPECTED_ROWS} ratings, got {len(rows)}")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for user, item, rating, ts in rows:
            fh.write(f"{user},{item},{int(float(rating))},{int(float(ts))}\n")
    return out


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "data" / "ml-100k.csv"
    print(fetch(target))
