"""CSV and manifest writers. Floats use the shortest round-trip representation."""
import csv
import json
import platform

import numpy as np
import scipy


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row[h] for h in header]
            w.writerow([fmt(v) for v in row])


def versions():
    from .. import __version__
    return {"levyldp": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(path, command, cfg, outputs, extra=None):
    data = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.values,
        "seed": cfg["run"]["seed"],
        "seed_map": "trajectory i of a run with seed s uses the Philox key s + i * 2**64",
        "outputs": sorted(outputs),
        "versions": versions(),
    }
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True, default=fmt)
        fh.write("\n")
