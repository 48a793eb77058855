#!/usr/bin/env python3
"""Convert a LASA handwriting .mat file into the ctxkmp corpus format.

    python3 tools/lasa_to_json.py Angle.mat -o angle.json [--every 1]

Each .mat holds `dt` and a `demos` cell array whose entries carry `pos`
(2 x T). Positions are copied as-is; contexts are null.
"""

import argparse
import json
import sys

import numpy as np
import scipy.io


def load(path):
    mat = scipy.io.loadmat(path, squeeze_me=True, struct_as_record=False)
    if "demos" not in mat:
        raise ValueError(f"{path}: no 'demos' variable")
    dt = float(np.asarray(mat.get("dt", 1.0)).ravel()[0])
    demos = np.atleast_1d(mat["demos"])
    return dt, [np.asarray(d.pos, dtype=float) for d in demos]


def convert(path, every):
    dt, demos = load(path)
    out = []
    for i, pos in enumerate(demos):
        if pos.ndim != 2 or 2 not in pos.shape:
            raise ValueError(f"{path}: demo {i} has shape {pos.shape}, expected 2 x T")
        full = pos if pos.shape[0] == 2 else pos.T
        pts = full[:, ::every]
        # keep the final sample so the goal is exact
        if (full.shape[1] - 1) % every:
            pts = np.column_stack([pts, full[:, -1]])
        out.append({
            "id": f"demo{i}",
            "dt": dt * every,
            "positions": pts.T.tolist(),
            "contexts": None,
        })
    return {"version": 1, "dims": {"context": 0, "position": 2}, "demonstrations": out}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("mat")
    ap.add_argument("-o", "--output", help="output path (default: stdout)")
    ap.add_argument("--every", type=int, default=1, help="keep every k-th sample")
    args = ap.parse_args()
    if args.every < 1:
        ap.error("--every must be >= 1")
    try:
        doc = convert(args.mat, args.every)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    text = json.dumps(doc)
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
