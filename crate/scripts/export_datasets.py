"""Export the wine, breast cancer and digits datasets bundled with
scikit-learn as CSV files the harness can read.

Each file has one column per feature followed by a `label` column.

    python scripts/export_datasets.py [output_dir]   # default: data/
"""

import sys
from pathlib import Path

import pandas as pd
from sklearn import datasets

LOADERS = {
    "wine": datasets.load_wine,
    "breast_cancer": datasets.load_breast_cancer,
    "digits": datasets.load_digits,
}


def export(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, load in LOADERS.items():
        bunch = load()
        names = [str(f).replace(" ", "_") for f in bunch.feature_names]
        frame = pd.DataFrame(bunch.data, columns=names)
        frame["label"] = bunch.target
        path = out_dir / f"{name}.csv"
        frame.to_csv(path, index=False)
        print(f"{path}: {frame.shape[0]} rows, {len(names)} features")


if __name__ == "__main__":
    export(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data"))
