"""File formats: network/hierarchy JSON, trajectory CSV, report emission.

Ceilings serialize as numbers or the string "inf".  Trajectory CSV uses
the header t,x1,...,xn with 17 significant digits so values round-trip
exactly.  Reports are JSON with sorted keys and a schema version string,
which makes repeated runs byte-identical for identical inputs.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Optional

import numpy as np

from .network import LTNetwork, Trajectory
from .hierarchy import Hierarchy

__all__ = [
    "ValidationError",
    "REPORT_SCHEMA",
    "load_network",
    "dump_network",
    "load_hierarchy",
    "dump_hierarchy",
    "trajectory_to_csv",
    "trajectory_from_csv",
    "write_report",
    "load_controls",
]

REPORT_SCHEMA = "ltnet-report/1"


class ValidationError(Exception):
    """Malformed or inconsistent input file."""


def _ceiling_in(v):
    if v == "inf":
        return np.inf
    if isinstance(v, (int, float)):
        if v <= 0:
            raise ValidationError(f"ceiling entries must be positive, got {v}")
        return float(v)
    raise ValidationError(f"ceiling entries must be numbers or 'inf', got {v!r}")


def _ceiling_out(v):
    return "inf" if np.isinf(v) else float(v)


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
    except OSError as e:
        raise ValidationError(f"{path}: {e}")


def network_from_dict(obj) -> LTNetwork:
    try:
        n = int(obj["n"])
        W = np.array(obj["W"], dtype=float)
        c = np.array(obj["c"], dtype=float)
        m = np.array([_ceiling_in(v) for v in obj["m"]])
        tau = float(obj["tau"])
    except KeyError as e:
        raise ValidationError(f"network is missing field {e.args[0]!r}")
    except (TypeError, ValueError) as e:
        raise ValidationError(f"network field malformed: {e}")
    B = obj.get("B")
    if B is not None:
        B = np.array(B, dtype=float)
        if B.size == 0:
            B = None
    r = int(obj.get("r", 0))
    if W.shape != (n, n):
        raise ValidationError(f"W must be {n}x{n}, got {W.shape}")
    if c.shape != (n,) or m.shape != (n,):
        raise ValidationError("c and m must have length n")
    try:
        return LTNetwork(W=W, c=c, m=m, tau=tau, B=B, r=r)
    except ValueError as e:
        raise ValidationError(str(e))


def network_to_dict(net: LTNetwork) -> dict:
    out = {
        "n": net.n,
        "W": net.W.tolist(),
        "c": net.c.tolist(),
        "m": [_ceiling_out(v) for v in net.m],
        "tau": net.tau,
        "r": net.r,
    }
    if net.B is not None:
        out["B"] = net.B.tolist()
    return out


def load_network(path) -> LTNetwork:
    return network_from_dict(_load_json(path))


def dump_network(net: LTNetwork, path, force=False):
    _write_text(path, json.dumps(network_to_dict(net), sort_keys=True, indent=1), force)


def load_hierarchy(path) -> Hierarchy:
    obj = _load_json(path)
    return hierarchy_from_dict(obj)


def hierarchy_from_dict(obj) -> Hierarchy:
    try:
        layers = tuple(network_from_dict(la) for la in obj["layers"])
        W_down = tuple(np.array(w, dtype=float) for w in obj["W_down"])
        W_up = tuple(np.array(w, dtype=float) for w in obj["W_up"])
    except KeyError as e:
        raise ValidationError(f"hierarchy is missing field {e.args[0]!r}")
    try:
        return Hierarchy(layers=layers, W_down=W_down, W_up=W_up)
    except ValueError as e:
        raise ValidationError(str(e))


def hierarchy_to_dict(h: Hierarchy) -> dict:
    return {
        "layers": [network_to_dict(la) for la in h.layers],
        "W_down": [w.tolist() for w in h.W_down],
        "W_up": [w.tolist() for w in h.W_up],
    }


def dump_hierarchy(h: Hierarchy, path, force=False):
    _write_text(path, json.dumps(hierarchy_to_dict(h), sort_keys=True, indent=1), force)


def trajectory_to_csv(traj: Trajectory, path, force=False):
    _check_overwrite(path, force)
    n = traj.samples.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)])
        for t, row in zip(traj.times, traj.samples):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def trajectory_from_csv(path) -> Trajectory:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise ValidationError(f"{path}: {e}")
    if not rows or not rows[0] or rows[0][0] != "t":
        raise ValidationError(f"{path}: line 1: expected header starting with 't'")
    data = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            data.append([float(v) for v in row])
        except ValueError as e:
            raise ValidationError(f"{path}: line {ln}: {e}")
    arr = np.array(data)
    if arr.shape[0] < 2:
        raise ValidationError(f"{path}: need at least two samples")
    dts = np.diff(arr[:, 0])
    if np.max(np.abs(dts - dts[0])) > 1e-9 * max(1.0, abs(dts[0])):
        raise ValidationError(f"{path}: time grid is not uniform")
    return Trajectory(t0=arr[0, 0], dt=float(dts[0]), samples=arr[:, 1:])


def rates_from_csv(path):
    """Rate CSV with header t,<id>,...; returns (ids, times, values)."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise ValidationError(f"{path}: {e}")
    if not rows or not rows[0] or rows[0][0] != "t":
        raise ValidationError(f"{path}: line 1: expected header starting with 't'")
    ids = rows[0][1:]
    data = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            data.append([float(v) for v in row])
        except ValueError as e:
            raise ValidationError(f"{path}: line {ln}: {e}")
    arr = np.array(data)
    return ids, arr[:, 0], arr[:, 1:]


def spikes_from_csv(path):
    """Spike CSV with header neuron_id,spike_time; returns {id: times}."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise ValidationError(f"{path}: {e}")
    if not rows or [v.strip() for v in rows[0][:2]] != ["neuron_id", "spike_time"]:
        raise ValidationError(f"{path}: line 1: expected header neuron_id,spike_time")
    out = {}
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            out.setdefault(row[0], []).append(float(row[1]))
        except (IndexError, ValueError) as e:
            raise ValidationError(f"{path}: line {ln}: {e}")
    return {k: np.array(v) for k, v in out.items()}


def load_controls(path, hierarchy: Optional[Hierarchy] = None):
    """Control-law JSON: list of {layer, mode, K, ubar}.

    ubar may be a constant vector or the string "online", in which case
    the hierarchy is used to rebuild the upper-layer tracking feedforward.
    Accepts either a bare list or a synthesize report wrapping one.
    """
    from .control import ControlLaw, _online_feedforward

    obj = _load_json(path)
    if isinstance(obj, dict) and isinstance(obj.get("controls"), list):
        obj = obj["controls"]
    if not isinstance(obj, list):
        raise ValidationError("controls file must be a JSON list")
    laws = {}
    for entry in obj:
        try:
            layer = int(entry["layer"])
            mode = entry["mode"]
        except KeyError as e:
            raise ValidationError(f"control entry missing field {e.args[0]!r}")
        K = entry.get("K")
        if K is not None:
            K = np.array(K, dtype=float)
        ubar = entry.get("ubar")
        if ubar == "online":
            if hierarchy is None:
                raise ValidationError("online feedforward needs a hierarchy")
            net = hierarchy.layers[layer - 1]
            r = net.r
            ubar = _online_feedforward(
                net.B[:r, :], hierarchy.W_up[layer - 2][:r, :], net.c[:r]
            )
        elif ubar is not None:
            ubar = np.array(ubar, dtype=float)
        try:
            laws[layer] = ControlLaw(layer=layer, K=K, ubar=ubar, mode=mode)
        except ValueError as e:
            raise ValidationError(str(e))
    if hierarchy is None:
        return laws
    return [laws.get(i + 1) for i in range(hierarchy.N)]


def controls_to_jsonable(laws) -> list:
    out = []
    for law in laws:
        if law is None:
            continue
        entry = {"layer": law.layer, "mode": law.mode}
        entry["K"] = None if law.K is None else law.K.tolist()
        if law.ubar is None:
            entry["ubar"] = None
        elif callable(law.ubar):
            entry["ubar"] = "online"
        else:
            entry["ubar"] = law.ubar.tolist()
        out.append(entry)
    return out


def _check_overwrite(path, force):
    if os.path.exists(path) and not force:
        raise ValidationError(f"{path} exists; pass --force to overwrite")


def _write_text(path, text, force=False):
    _check_overwrite(path, force)
    with open(path, "w") as fh:
        fh.write(text)
        fh.write("\n")


def write_report(payload: dict, command: str, path=None, force=False) -> str:
    """Serialize a report envelope; returns the JSON text.

    Reports carry the schema version and the producing command; keys are
    sorted so identical inputs give byte-identical files.
    """
    doc = {"schema": REPORT_SCHEMA, "command": command, **payload}
    text = json.dumps(doc, sort_keys=True, indent=1)
    if path is not None:
        _write_text(path, text, force)
    return text
