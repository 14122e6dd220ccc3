"""Convert a PTB-XL download into an ecgssl dataset directory.

Needs ``wfdb`` and ``pandas``, which are not dependencies of the package:

    pip install wfdb pandas
    python scripts/ptbxl_to_manifest.py --ptbxl path/to/ptb-xl --out data/ptbxl

Uses the 100 Hz waveforms, every SCP statement as a label (the finest label
level) and the stratified fold column as given.
"""

import argparse
import ast
from pathlib import Path

import numpy as np

from ecgssl.data import Dataset, DatasetManifest, RecordEntry, write_dataset
from ecgssl.records import EcgRecord, LabelSpace


def main():
    import pandas as pd
    import wfdb

    parser = argparse.ArgumentParser()
    parser.add_argument("--ptbxl", type=Path, required=True)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--limit", type=int, help="convert only the first N records")
    args = parser.parse_args()

    db = pd.read_csv(args.ptbxl / "ptbxl_database.csv", index_col="ecg_id")
    if args.limit:
        db = db.iloc[: args.limit]
    codes = db.scp_codes.apply(ast.literal_eval)
    names = sorted({c for d in codes for c in d})
    space = LabelSpace(tuple(names))

    entries, records = [], {}
    for ecg_id, row in db.iterrows():
        signal, meta = wfdb.rdsamp(str(args.ptbxl / row.filename_lr))
        x = np.nan_to_num(signal.T.astype(np.float32))
        rid = f"ptbxl_{ecg_id:05d}"
        labels = tuple(sorted(space.index(c) for c in codes[ecg_id]))
        records[rid] = EcgRecord(rid, x, fs=float(meta["fs"]), labels=labels)
        entries.append(RecordEntry(rid, f"{rid}.f32", x.shape[0], x.shape[1], float(meta["fs"]), labels, int(row.strat_fold)))

    manifest = DatasetManifest(entries, space)
    write_dataset(args.out, Dataset(manifest, records))
    print(f"wrote {len(entries)} records with {len(names)} labels to {args.out}")


if __name__ == "__main__":
    main()
