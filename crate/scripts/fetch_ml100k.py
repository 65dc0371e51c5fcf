#!/usr/bin/env python3
"""Rebuild the MovieLens-100K u.data / u.item / u.user files.

The GroupLens host is not always reachable, so this rebuilds the original
file layout from the parquet copies bundled in the pytorch-widedeep wheel on
PyPI. Usage: python3 scripts/fetch_ml100k.py [out_dir] (default data/ml-100k).
"""
import io
import math
import pathlib
import subprocess
import sys
import tempfile
import zipfile

import pandas as pd

WHEEL = "pytorch-widedeep==1.7.0"
PREFIX = "pytorch_widedeep/datasets/data/MovieLens100k_"


def main() -> None:
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/ml-100k")
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--timeout", "200",
             "-q", WHEEL, "-d", tmp],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("*.whl"))
        z = zipfile.ZipFile(wheel)
        frames = {
            k: pd.read_parquet(io.BytesIO(z.read(f"{PREFIX}{k}.parquet.brotli")))
            for k in ("data", "items", "users")
        }

    with open(out / "u.data", "w", encoding="latin-1", newline="\n") as f:
        for r in frames["data"].itertuples(index=False):
            f.write(f"{r.user_id}\t{r.movie_id}\t{r.rating}\t{r.timestamp}\n")

    items = frames["items"]
    genre_cols = list(items.columns[5:])
    assert len(genre_cols) == 19
    with open(out / "u.item", "w", encoding="latin-1", newline="\n") as f:
        for _, r in items.iterrows():
            def s(v):
                return "" if v is None or (isinstance(v, float) and math.isnan(v)) else str(v)
            fields = [str(r.movie_id), s(r.movie_title), s(r.release_date),
                      s(r.video_release_date), s(r.IMDb_URL)]
            fields += [str(int(r[g])) for g in genre_cols]
            f.write("|".join(fields) + "\n")

    with open(out / "u.user", "w", encoding="latin-1", newline="\n") as f:
        for r in frames["users"].itertuples(index=False):
            f.write(f"{r.user_id}|{r.age}|{r.gender}|{r.occupation}|{r.zip_code}\n")

    with open(out / "u.genre", "w", encoding="latin-1", newline="\n") as f:
        for i, g in enumerate(genre_cols):
            f.write(f"{g}|{i}\n")
    print(f"wrote ML-100K files to {out}")


if __name__ == "__main__":
    main()
