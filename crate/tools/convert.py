"""Convert recorded gesture instances into mmsense sample files and a manifest.

The input is an index CSV with one row per gesture instance and the columns

    source,label,person,environment,orientation_deg,modality,session

where `source` is a `.npy` or numeric `.csv` array holding one instance, `label` is
one of E RL LL AU AW P RS LS HRL HRR and `modality` is `beamsnr` or `csi`.
Arrays may be time × channels or channels × time; complex CSI is reduced to its
amplitude.

    python tools/convert.py index.csv out/
"""

import argparse
import csv
import json
from pathlib import Path

import numpy as np

CHANNELS = {"beamsnr": 36, "csi": 256}


def load(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter=",", dtype=complex if "j" in path.read_text()[:4096] else float)


def orient(values: np.ndarray, channels: int, source: str) -> np.ndarray:
    values = np.abs(values) if np.iscomplexobj(values) else values
    if values.ndim != 2:
        raise ValueError(f"{source}: expected a 2-D array, got shape {values.shape}")
    if values.shape[1] == channels:
        return values
    if values.shape[0] == channels:
        return values.T
    raise ValueError(f"{source}: no axis of shape {values.shape} has {channels} channels")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("index", type=Path)
    parser.add_argument("out", type=Path)
    args = parser.parse_args()

    records = []
    with args.index.open(newline="") as f:
        for i, row in enumerate(csv.DictReader(f)):
            source = args.index.parent / row["source"]
            modality = row["modality"]
            values = orient(load(source), CHANNELS[modality], row["source"])
            if not np.isfinite(values).all():
                raise ValueError(f"{row['source']}: non-finite values")
            rel = Path("samples") / row["environment"] / modality / f"{row['label']}_{row['person']}_{i:05d}.csv"
            (args.out / rel).parent.mkdir(parents=True, exist_ok=True)
            np.savetxt(args.out / rel, values, delimiter=",", fmt="%.6g")
            records.append(
                {
                    "path": rel.as_posix(),
                    "label": row["label"],
                    "person": row["person"],
                    "environment": row["environment"],
                    "orientation_deg": int(row["orientation_deg"]),
                    "modality": modality,
                    "session": row["session"],
                }
            )
    with (args.out / "manifest.jsonl").open("w") as f:
        for r in records:
            f.write(json.dumps(r, separators=(",", ":")) + "\n")
    print(f"wrote {len(records)} samples to {args.out / 'manifest.jsonl'}")


if __name__ == "__main__":
    main()
