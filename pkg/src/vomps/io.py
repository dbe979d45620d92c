"""On-disk formats: UMPS-JSON v1 and MPO-JSON v1.

Both are plain JSON text documents.  Tensor entries are nested arrays of
``[re, im]`` pairs in the documented index orders — ``(left, physical,
right)`` for state tensors, ``(row, col)`` for bond matrices, ``(left,
phys_out, phys_in, right)`` for MPO tensors.  Floats are written in
Python's shortest exact decimal form (up to 17 significant digits), so a
round trip is bit-exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .umps import MPO, UniformMPS

STATE_FORMAT = "umps-json/1"
MPO_FORMAT = "mpo-json/1"


class SchemaError(ValueError):
    """A document violates its schema; the message names the location."""


def _encode(arr: np.ndarray):
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def _decode(node, shape, where: str) -> np.ndarray:
    try:
        arr = np.asarray(node, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: not a numeric array") from exc
    if arr.shape != tuple(shape) + (2,):
        raise SchemaError(f"{where}: shape {arr.shape} does not match "
                          f"expected {tuple(shape) + (2,)}")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{where}: non-finite entries")
    return arr[..., 0] + 1j * arr[..., 1]


def _expect(doc, key, kind, where: str):
    if key not in doc:
        raise SchemaError(f"{where}: missing field '{key}'")
    val = doc[key]
    if kind is int and (not isinstance(val, int) or isinstance(val, bool)):
        raise SchemaError(f"{where}.{key}: expected integer")
    if kind is list and not isinstance(val, list):
        raise SchemaError(f"{where}.{key}: expected array")
    if kind is dict and not isinstance(val, dict):
        raise SchemaError(f"{where}.{key}: expected object")
    return val


def save_state(state: UniformMPS, path: str | os.PathLike):
    doc = {
        "format": STATE_FORMAT,
        "unit_cell": state.unit_cell,
        "physical_dims": state.phys_dims,
        "bond_dims": state.bond_dims,
        "tensors": {
            "AL": [_encode(a) for a in state.al],
            "AR": [_encode(a) for a in state.ar],
            "C": [_encode(m) for m in state.c],
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_state(path: str | os.PathLike) -> UniformMPS:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != STATE_FORMAT:
        raise SchemaError(f"{path}: format tag is not '{STATE_FORMAT}'")
    L = _expect(doc, "unit_cell", int, path)
    if L < 1:
        raise SchemaError(f"{path}.unit_cell: must be positive")
    phys = _expect(doc, "physical_dims", list, path)
    bonds = _expect(doc, "bond_dims", list, path)
    if len(phys) != L:
        raise SchemaError(f"{path}.physical_dims: length {len(phys)} != {L}")
    if len(bonds) != L + 1:
        raise SchemaError(f"{path}.bond_dims: length {len(bonds)} != {L + 1}")
    if bonds[0] != bonds[-1]:
        raise SchemaError(f"{path}.bond_dims: cyclic mismatch "
                          f"(first {bonds[0]} != last {bonds[-1]})")
    tensors = _expect(doc, "tensors", dict, path)
    al, ar, c = [], [], []
    for name, store in (("AL", al), ("AR", ar), ("C", c)):
        node = _expect(tensors, name, list, f"{path}.tensors")
        if len(node) != L:
            raise SchemaError(f"{path}.tensors.{name}: length {len(node)} != {L}")
        for n in range(L):
            if name == "C":
                shape = (bonds[n + 1], bonds[n + 1])
            else:
                shape = (bonds[n], phys[n], bonds[n + 1])
            store.append(_decode(node[n], shape, f"{path}.tensors.{name}[{n}]"))
    try:
        return UniformMPS(al=al, ar=ar, c=c)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def save_mpo(mpo: MPO, path: str | os.PathLike):
    doc = {
        "format": MPO_FORMAT,
        "unit_cell": mpo.unit_cell,
        "phys_dims_out": mpo.phys_dims_out,
        "phys_dims_in": mpo.phys_dims_in,
        "bond_dims": mpo.bond_dims,
        "tensors": {"O": [_encode(t) for t in mpo.o]},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_mpo(path: str | os.PathLike) -> MPO:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != MPO_FORMAT:
        raise SchemaError(f"{path}: format tag is not '{MPO_FORMAT}'")
    L = _expect(doc, "unit_cell", int, path)
    if L < 1:
        raise SchemaError(f"{path}.unit_cell: must be positive")
    d_out = _expect(doc, "phys_dims_out", list, path)
    d_in = _expect(doc, "phys_dims_in", list, path)
    bonds = _expect(doc, "bond_dims", list, path)
    if len(d_out) != L or len(d_in) != L:
        raise SchemaError(f"{path}: physical dim lists must have length {L}")
    if len(bonds) != L + 1 or bonds[0] != bonds[-1]:
        raise SchemaError(f"{path}.bond_dims: need length {L + 1} with "
                          "first == last")
    node = _expect(_expect(doc, "tensors", dict, path), "O", list,
                   f"{path}.tensors")
    if len(node) != L:
        raise SchemaError(f"{path}.tensors.O: length {len(node)} != {L}")
    o = [_decode(node[n], (bonds[n], d_out[n], d_in[n], bonds[n + 1]),
                 f"{path}.tensors.O[{n}]") for n in range(L)]
    try:
        return MPO(o=o)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
